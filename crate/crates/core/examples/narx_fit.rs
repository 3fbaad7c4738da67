//! Fits the staffing-level predictor on one realization's features and tests
//! it closed-loop on another.

use cpcal::narx::{discretize, predict, train, windowed_accuracy, LoopMode, NarxConfig};
use cpcal::pipeline::{generate_scenario, Scenario};

fn main() -> cpcal::Result<()> {
    let sc = Scenario { n_realizations: 2, ..Scenario::default() };
    let data = generate_scenario(&sc)?;
    let truth = sc.true_cps()?;
    let schedule = sc.true_schedule()?;
    let levels: Vec<f64> = (0..sc.grid_len())
        .map(|t| f64::from(schedule.level_at(t as f64 * sc.interval_min)))
        .collect();

    let cfg = NarxConfig::default();
    let model = train(&data.observed[0], &levels, &cfg, 1)?;
    println!("train mse {:.4}  val mse {:.4}", model.train_mse(), model.val_mse());

    let sim: Vec<u32> = levels.iter().map(|&l| l as u32).collect();
    for mode in [LoopMode::Open, LoopMode::Closed] {
        let pred = predict(&model, &data.observed[1], &levels, mode)?;
        let pred = discretize(&pred, 1, 3);
        let acc = windowed_accuracy(&pred, &sim, &truth, 12, sc.interval_min)?;
        println!(
            "{mode}: accuracy {:.3} over {} intervals, transitions at {:?}",
            acc.windowed_accuracy, acc.scored, acc.predicted_cp_times
        );
    }
    Ok(())
}
