use std::time::Instant;

use cpcal::error::Error;
use cpcal::io;
use cpcal::pipeline::{generate_scenario, Scenario};
use cpcal::simkit::{sample_arrivals, simulate, RateProfile, ResourceSchedule, ServiceModel};

#[test]
fn simulated_log_round_trips() {
    let data = generate_scenario(&Scenario { n_realizations: 1, ..Scenario::default() }).unwrap();
    let log = &data.ground_truth[0];
    let dir = tempfile::tempdir().unwrap();
    let p = dir.path().join("events.csv");
    io::write_event_log(&p, log).unwrap();
    let back = io::ingest_event_log(&p, log.horizon_min()).unwrap();
    assert_eq!(&back, log);
}

#[test]
fn features_round_trip_to_six_decimals() {
    let data = generate_scenario(&Scenario { n_realizations: 1, ..Scenario::default() }).unwrap();
    let f = &data.observed[0];
    let dir = tempfile::tempdir().unwrap();
    let p = dir.path().join("f.csv");
    io::write_features(&p, f).unwrap();
    let back = io::read_features(&p, 10.0).unwrap();
    assert_eq!(back.names(), f.names());
    for t in 0..f.len() {
        for j in 0..f.dims() {
            assert!((back.get(t, j) - f.get(t, j)).abs() <= 5e-7);
        }
    }
}

#[test]
fn reversed_service_names_the_line() {
    let dir = tempfile::tempdir().unwrap();
    let p = dir.path().join("ev.csv");
    std::fs::write(
        &p,
        "entity_id,event,time_min\n0,arrival,1\n1,arrival,2\n0,service_start,3\n0,service_end,2.5\n",
    )
    .unwrap();
    match io::ingest_event_log(&p, 100.0) {
        Err(Error::Parse { line, message, .. }) => {
            assert_eq!(line, 5);
            assert!(message.contains("service_end"), "{message}");
        }
        other => panic!("expected a parse error, got {other:?}"),
    }
}

#[test]
fn malformed_feature_rows_are_rejected() {
    let dir = tempfile::tempdir().unwrap();
    let p = dir.path().join("f.csv");
    std::fs::write(&p, "t_index,a,b\n0,1,2\n2,1,2\n").unwrap();
    assert!(matches!(io::read_features(&p, 10.0), Err(Error::Parse { line: 3, .. })));
    std::fs::write(&p, "t_index,a,b\n0,1,x\n").unwrap();
    assert!(matches!(io::read_features(&p, 10.0), Err(Error::Parse { line: 2, .. })));
    assert!(matches!(
        io::read_features(&dir.path().join("missing.csv"), 10.0),
        Err(Error::Io { .. })
    ));
}

#[test]
fn hundred_thousand_rows_parse() {
    let horizon = 20_000.0;
    let trace = sample_arrivals(&RateProfile::constant(1.7).unwrap(), horizon, 1).unwrap();
    let schedule = ResourceSchedule::constant(2, horizon).unwrap();
    let log = simulate(&trace, &schedule, &ServiceModel::Exponential { mean: 1.0 }, 2).unwrap();
    assert!(log.records().len() >= 100_000, "{} rows", log.records().len());
    let dir = tempfile::tempdir().unwrap();
    let p = dir.path().join("big.csv");
    io::write_event_log(&p, &log).unwrap();
    let start = Instant::now();
    let back = io::ingest_event_log(&p, horizon).unwrap();
    let secs = start.elapsed().as_secs_f64();
    assert_eq!(back.records().len(), log.records().len());
    println!("parsed {} rows in {secs:.3} s", back.records().len());
}
