mod common;

use cpcal::simkit::{
    fit_service, sample_arrivals, simulate, ArrivalTrace, EventKind, EventLog, EventRecord, RateProfile,
    ResourceSchedule, ServiceFamily, ServiceModel,
};
use proptest::prelude::*;
use rand::SeedableRng;
use rand_chacha::ChaCha8Rng;
use rand_distr::{Distribution, Exp, LogNormal};

#[test]
fn mmc_utilization_matches_offered_load() {
    let horizon = 10_000.0;
    let trace = sample_arrivals(&RateProfile::constant(2.0).unwrap(), horizon, 11).unwrap();
    let schedule = ResourceSchedule::constant(3, horizon).unwrap();
    let log = simulate(&trace, &schedule, &ServiceModel::Exponential { mean: 1.0 }, 12).unwrap();
    let u = common::utilization(&log, 3);
    assert!((u - 2.0 / 3.0).abs() <= 0.02, "utilization {u}");
}

#[test]
fn poisson_count_mean_within_three_standard_errors() {
    let (rate, horizon, seeds) = (0.5, 100.0, 1000u64);
    let profile = RateProfile::constant(rate).unwrap();
    let counts: Vec<f64> = (0..seeds)
        .map(|s| sample_arrivals(&profile, horizon, s).unwrap().len() as f64)
        .collect();
    let mean = counts.iter().sum::<f64>() / seeds as f64;
    let expected = rate * horizon;
    let se = (expected / seeds as f64).sqrt();
    assert!((mean - expected).abs() < 3.0 * se, "mean {mean} vs {expected} (se {se})");
}

#[test]
fn thinning_follows_piecewise_rates() {
    let profile = RateProfile::new(vec![100.0], vec![0.2, 2.0]).unwrap();
    let (mut low, mut high) = (0usize, 0usize);
    for s in 0..200 {
        let trace = sample_arrivals(&profile, 200.0, s).unwrap();
        low += trace.times().iter().filter(|&&t| t < 100.0).count();
        high += trace.times().iter().filter(|&&t| t >= 100.0).count();
    }
    // Expected 20 and 200 per seed; the ratio should be close to 10.
    let ratio = high as f64 / low as f64;
    assert!((ratio - 10.0).abs() < 1.0, "ratio {ratio}");
}

fn log_of_durations(durations: &[f64]) -> EventLog {
    let mut records = Vec::with_capacity(durations.len() * 3);
    for (i, &d) in durations.iter().enumerate() {
        let id = i as u64;
        records.push(EventRecord { entity_id: id, kind: EventKind::Arrival, time_min: 0.0 });
        records.push(EventRecord { entity_id: id, kind: EventKind::ServiceStart, time_min: 1.0 });
        records.push(EventRecord { entity_id: id, kind: EventKind::ServiceEnd, time_min: 1.0 + d });
    }
    let horizon = durations.iter().cloned().fold(0.0, f64::max) + 10.0;
    EventLog::new(records, horizon).unwrap()
}

#[test]
fn exponential_fit_recovers_mean() {
    let mut rng = ChaCha8Rng::seed_from_u64(3);
    let d: Vec<f64> = Exp::new(0.25).unwrap().sample_iter(&mut rng).take(10_000).collect();
    match fit_service(&[log_of_durations(&d)], ServiceFamily::Exponential).unwrap() {
        ServiceModel::Exponential { mean } => assert!((mean - 4.0).abs() <= 0.1, "mean {mean}"),
        other => panic!("wrong family {other:?}"),
    }
}

#[test]
fn lognormal_fit_recovers_parameters() {
    let mut rng = ChaCha8Rng::seed_from_u64(5);
    let d: Vec<f64> = LogNormal::new(1.0, 0.5).unwrap().sample_iter(&mut rng).take(10_000).collect();
    match fit_service(&[log_of_durations(&d)], ServiceFamily::LogNormal).unwrap() {
        ServiceModel::LogNormal { mu, sigma } => {
            assert!((mu - 1.0).abs() <= 0.05, "mu {mu}");
            assert!((sigma - 0.5).abs() <= 0.05, "sigma {sigma}");
        }
        other => panic!("wrong family {other:?}"),
    }
}

#[test]
fn fit_pools_several_logs() {
    let a = log_of_durations(&vec![7.0; 20]);
    let b = log_of_durations(&vec![7.0; 20]);
    assert_eq!(
        fit_service(&[a, b], ServiceFamily::Deterministic).unwrap(),
        ServiceModel::Deterministic { value: 7.0 }
    );
}

fn schedule_strategy() -> impl Strategy<Value = (Vec<f64>, Vec<u32>)> {
    (0usize..4).prop_flat_map(|n| {
        (
            prop::collection::btree_set(1u32..47, n).prop_map(|s| s.into_iter().map(|c| f64::from(c) * 10.0).collect()),
            (1u32..4, prop::collection::vec(1u32..3, n)).prop_map(|(first, steps)| {
                // Adjacent levels always differ.
                let mut levels = vec![first];
                for s in steps {
                    levels.push((levels.last().unwrap() - 1 + s) % 3 + 1);
                }
                levels
            }),
        )
    })
}

proptest! {
    #![proptest_config(ProptestConfig::with_cases(64))]

    #[test]
    fn simulation_invariants(
        rate in 0.1f64..3.0,
        mean in 0.2f64..3.0,
        (cps, levels) in schedule_strategy(),
        seed in any::<u64>(),
    ) {
        let horizon = 480.0;
        let trace = sample_arrivals(&RateProfile::constant(rate).unwrap(), horizon, seed).unwrap();
        let schedule = ResourceSchedule::new(cps, levels, horizon).unwrap();
        let service = ServiceModel::Exponential { mean };
        let log = simulate(&trace, &schedule, &service, seed ^ 1).unwrap();
        prop_assert_eq!(&log, &simulate(&trace, &schedule, &service, seed ^ 1).unwrap());
        prop_assert_eq!(log.count(EventKind::Arrival), trace.len());

        let entities = log.entities().unwrap();
        let mut starts = Vec::new();
        for e in &entities {
            if let Some(s) = e.service_start {
                prop_assert!(s >= e.arrival);
                starts.push((s, e.arrival));
                if let Some(end) = e.service_end {
                    prop_assert!(end >= s);
                    prop_assert!(end < horizon);
                }
            } else {
                prop_assert!(e.service_end.is_none());
            }
        }
        // First in, first out: service starts in arrival order.
        let mut by_arrival: Vec<_> = entities.iter().map(|e| (e.arrival, e.service_start)).collect();
        by_arrival.sort_by(|a, b| a.0.total_cmp(&b.0));
        let served: Vec<f64> = by_arrival.iter().filter_map(|x| x.1).collect();
        prop_assert!(served.windows(2).all(|w| w[0] <= w[1]));
        let first_waiting = by_arrival.iter().position(|x| x.1.is_none()).unwrap_or(by_arrival.len());
        prop_assert!(by_arrival[first_waiting..].iter().all(|x| x.1.is_none()));

        // A service only starts when a scheduled server is free.
        for &(s, _) in &starts {
            let busy = entities
                .iter()
                .filter(|e| e.service_start.is_some_and(|b| b < s) && e.service_end.map_or(true, |end| end > s))
                .count();
            prop_assert!(busy < schedule.level_at(s) as usize, "start at {} with {} busy", s, busy);
        }
    }

    #[test]
    fn deterministic_service_has_exact_durations(value in 0.5f64..5.0, seed in any::<u64>()) {
        let horizon = 200.0;
        let trace = sample_arrivals(&RateProfile::constant(0.8).unwrap(), horizon, seed).unwrap();
        let schedule = ResourceSchedule::constant(2, horizon).unwrap();
        let log = simulate(&trace, &schedule, &ServiceModel::Deterministic { value }, seed).unwrap();
        for d in log.service_durations().unwrap() {
            prop_assert!((d - value).abs() < 1e-9);
        }
    }
}

#[test]
fn empty_trace_and_schedule_agree_on_horizon() {
    let trace = ArrivalTrace::empty(60.0).unwrap();
    let schedule = ResourceSchedule::constant(1, 60.0).unwrap();
    let log = simulate(&trace, &schedule, &ServiceModel::Exponential { mean: 1.0 }, 0).unwrap();
    assert!(log.is_empty());
}
