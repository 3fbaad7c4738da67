use cpcal::featurizer::{average_series, snapshot_features, FeatureSeries, FEATURE_NAMES};
use cpcal::simkit::{sample_arrivals, simulate, EventKind, EventLog, RateProfile, ResourceSchedule, ServiceModel};
use proptest::prelude::*;
use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;

/// Time integral per window of a counting process, by sweeping sorted +1/-1
/// steps. Independent of the per-entity overlap used by the featurizer.
fn sweep(steps: &mut Vec<(f64, i32)>, horizon: f64, width: f64) -> Vec<f64> {
    steps.sort_by(|a, b| a.0.total_cmp(&b.0));
    let windows = (horizon / width).round() as usize;
    let mut out = vec![0.0; windows];
    let mut level = 0i32;
    let mut t = 0.0;
    let integrate = |from: f64, to: f64, level: i32, out: &mut Vec<f64>| {
        let mut a = from;
        while a < to {
            let w = ((a / width).floor() as usize).min(windows - 1);
            let b = to.min((w + 1) as f64 * width);
            out[w] += f64::from(level) * (b - a);
            a = b;
        }
    };
    for &(time, delta) in steps.iter() {
        integrate(t, time.min(horizon), level, &mut out);
        t = time.min(horizon);
        level += delta;
    }
    integrate(t, horizon, level, &mut out);
    out
}

fn oracle(log: &EventLog, width: f64) -> (Vec<f64>, Vec<f64>, Vec<f64>) {
    let h = log.horizon_min();
    let (mut sys, mut queue, mut busy) = (Vec::new(), Vec::new(), Vec::new());
    for r in log.records() {
        match r.kind {
            EventKind::Arrival => {
                sys.push((r.time_min, 1));
                queue.push((r.time_min, 1));
            }
            EventKind::ServiceStart => {
                queue.push((r.time_min, -1));
                busy.push((r.time_min, 1));
            }
            EventKind::ServiceEnd => {
                sys.push((r.time_min, -1));
                busy.push((r.time_min, -1));
            }
        }
    }
    (sweep(&mut sys, h, width), sweep(&mut queue, h, width), sweep(&mut busy, h, width))
}

fn simulated(rate: f64, mean: f64, servers: u32, seed: u64) -> (EventLog, ResourceSchedule) {
    let horizon = 600.0;
    let trace = sample_arrivals(&RateProfile::constant(rate).unwrap(), horizon, seed).unwrap();
    let schedule = ResourceSchedule::constant(servers, horizon).unwrap();
    let log = simulate(&trace, &schedule, &ServiceModel::Exponential { mean }, seed + 1).unwrap();
    (log, schedule)
}

proptest! {
    #![proptest_config(ProptestConfig::with_cases(48))]

    #[test]
    fn features_match_sweep_oracle_and_invariants(
        rate in 0.1f64..2.5,
        mean in 0.3f64..2.0,
        servers in 1u32..4,
        seed in 0u64..1_000_000,
    ) {
        let width = 10.0;
        let (log, schedule) = simulated(rate, mean, servers, seed);
        let f = snapshot_features(&log, &schedule, width).unwrap();
        let names = FEATURE_NAMES.map(String::from);
        prop_assert_eq!(f.names(), names.as_slice());
        let (sys, queue, busy) = oracle(&log, width);
        for t in 0..f.len() {
            let row = f.row(t);
            prop_assert!((row[0] - sys[t] / width).abs() < 1e-9);
            prop_assert!((row[1] - queue[t] / width).abs() < 1e-9);
            prop_assert!((row[3] - busy[t]).abs() < 1e-9);
            prop_assert!((0.0..=1.0).contains(&row[2]));
            prop_assert!((row[3] + row[4] - f64::from(servers) * width).abs() < 1e-9);
            prop_assert!(row[0] >= row[1] - 1e-12);
            prop_assert!(row[0] >= 0.0 && row[1] >= 0.0 && row[5] >= 0.0);
        }
        let completions: f64 = f.column(5).iter().sum();
        prop_assert_eq!(completions as usize, log.count(EventKind::ServiceEnd));
        prop_assert_eq!(&f, &snapshot_features(&log, &schedule, width).unwrap());
    }
}

#[test]
fn average_matches_elementwise_mean() {
    let mut rng = ChaCha8Rng::seed_from_u64(8);
    let names: Vec<String> = (0..3).map(|j| format!("c{j}")).collect();
    let series: Vec<FeatureSeries> = (0..5)
        .map(|_| {
            let rows = (0..12).map(|_| (0..3).map(|_| rng.gen_range(-10.0..10.0)).collect()).collect();
            FeatureSeries::new(10.0, names.clone(), rows).unwrap()
        })
        .collect();
    let avg = average_series(&series).unwrap();
    for t in 0..12 {
        for j in 0..3 {
            let mut sum = 0.0;
            for s in &series {
                sum += s.get(t, j);
            }
            assert!((avg.get(t, j) - sum / 5.0).abs() < 1e-12);
        }
    }
}

#[test]
fn average_rejects_mismatched_shapes() {
    let a = FeatureSeries::univariate(10.0, &[1.0, 2.0]).unwrap();
    let b = FeatureSeries::univariate(10.0, &[1.0, 2.0, 3.0]).unwrap();
    assert!(average_series(&[a, b]).is_err());
    assert!(average_series(&[]).is_err());
}

#[test]
fn day_of_ten_minute_windows_has_144_rows() {
    let (log, _) = simulated(0.5, 1.0, 1, 3);
    let schedule = ResourceSchedule::constant(1, 600.0).unwrap();
    assert_eq!(snapshot_features(&log, &schedule, 10.0).unwrap().len(), 60);
    let empty = EventLog::new(Vec::new(), 1440.0).unwrap();
    let day = ResourceSchedule::constant(2, 1440.0).unwrap();
    let f = snapshot_features(&empty, &day, 10.0).unwrap();
    assert_eq!((f.len(), f.dims()), (144, 6));
}
