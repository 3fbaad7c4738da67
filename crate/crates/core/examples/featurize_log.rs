//! Ten-minute snapshot features of a simulated log, around the first staffing
//! change.

use cpcal::featurizer::{snapshot_features, FEATURE_NAMES};
use cpcal::pipeline::{generate_scenario, Scenario};

fn main() -> cpcal::Result<()> {
    let sc = Scenario { n_realizations: 1, ..Scenario::default() };
    let data = generate_scenario(&sc)?;
    let f = &data.observed[0];
    println!("{} rows x {} features", f.len(), f.dims());

    print!("{:>6} {:>6}", "min", "level");
    for name in FEATURE_NAMES {
        print!(" {name:>12}");
    }
    println!();
    let schedule = sc.true_schedule()?;
    for t in 54..66 {
        let start = t as f64 * sc.interval_min;
        print!("{start:>6} {:>6}", schedule.level_at(start));
        for v in f.row(t) {
            print!(" {v:>12.3}");
        }
        println!();
    }

    // The observed table is a pure function of the log.
    let again = snapshot_features(&data.ground_truth[0], &schedule, sc.interval_min)?;
    assert_eq!(&again, f);
    Ok(())
}
