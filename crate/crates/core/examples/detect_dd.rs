//! Offline segmentation of snapshot features: per realization with a known
//! count, then penalized, then conciliated across realizations.

use cpcal::ddcpd::{conciliate, default_penalty, detect_fixed, segment_penalized, Conciliation, Statistic};
use cpcal::pipeline::{generate_scenario, Scenario};

fn main() -> cpcal::Result<()> {
    let sc = Scenario { n_realizations: 8, ..Scenario::default() };
    let data = generate_scenario(&sc)?;
    let truth = sc.true_cps()?;
    println!("truth {:?} min", truth.to_minutes(sc.interval_min));

    let mut sets = Vec::new();
    for (r, f) in data.observed.iter().enumerate() {
        let fixed = detect_fixed(f, Statistic::Mean, truth.len())?;
        let beta = default_penalty(f.dims(), f.len());
        let pen = segment_penalized(f, Statistic::Mean, beta, 10)?;
        println!(
            "r{r}  fixed {:?}  penalized {:?} (objective {:.1})",
            fixed.to_minutes(sc.interval_min),
            pen.change_points.to_minutes(sc.interval_min),
            pen.objective
        );
        sets.push(fixed);
    }
    for mode in [Conciliation::Median, Conciliation::Mean] {
        let c = conciliate(&sets, mode)?;
        println!(
            "{mode:?}: {:?} min, {} min off",
            c.to_minutes(sc.interval_min),
            c.abs_deviation_min(&truth, sc.interval_min)?
        );
    }
    Ok(())
}
