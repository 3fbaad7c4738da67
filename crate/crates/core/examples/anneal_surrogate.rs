//! Annealing two change points on a cheap rippled objective.

use cpcal::annealer::{anneal, AnnealConfig};
use cpcal::ddcpd::ChangePointSet;

fn main() -> cpcal::Result<()> {
    let target = [60.0, 120.0];
    let mut objective = |tau: &ChangePointSet, _half_width: usize| {
        Ok(tau
            .taus()
            .iter()
            .zip(target)
            .map(|(&t, c)| {
                let d = t as f64 - c;
                d.abs() + 2.0 * (d * 0.9).sin().abs()
            })
            .sum::<f64>())
    };
    let cfg = AnnealConfig { k_max: 300, ..AnnealConfig::default() };
    let tau0 = ChangePointSet::new(vec![40, 100])?;
    let out = anneal(&tau0, &mut objective, &cfg, 144, 3)?;

    let accepted = out.archive.iter().filter(|v| v.accepted).count();
    println!("best {:?} with error {:.3}", out.best.taus(), out.best_eps);
    println!("{accepted}/{} moves accepted", out.archive.len());
    for v in out.archive.iter().step_by(30) {
        println!("k {:>3}  T {:>8.4}  {:?}  {:.3}", v.k, v.temperature, v.tau.taus(), v.eps);
    }
    Ok(())
}
