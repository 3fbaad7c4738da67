#![allow(dead_code)]

use cpcal::featurizer::FeatureSeries;
use cpcal::simkit::EventLog;
use rand::Rng;

/// Column-wise z-scores computed directly; constant columns become zeros.
pub fn zscore_columns(series: &FeatureSeries) -> Vec<Vec<f64>> {
    (0..series.dims())
        .map(|j| {
            let col: Vec<f64> = (0..series.len()).map(|t| series.get(t, j)).collect();
            let n = col.len() as f64;
            let mean = col.iter().sum::<f64>() / n;
            let sd = (col.iter().map(|v| (v - mean).powi(2)).sum::<f64>() / n).sqrt();
            col.iter()
                .map(|v| if sd > 1e-12 { (v - mean) / sd } else { 0.0 })
                .collect()
        })
        .collect()
}

/// Residual sum of squares about the section mean, summed over columns.
pub fn rss(cols: &[Vec<f64>], start: usize, end: usize) -> f64 {
    cols.iter()
        .map(|c| {
            let s = &c[start..end];
            let m = s.iter().sum::<f64>() / s.len() as f64;
            s.iter().map(|v| (v - m).powi(2)).sum::<f64>()
        })
        .sum()
}

pub fn segmentation_rss(cols: &[Vec<f64>], cps: &[usize]) -> f64 {
    let n = cols[0].len();
    let mut bounds = vec![0];
    bounds.extend_from_slice(cps);
    bounds.push(n);
    bounds.windows(2).map(|w| rss(cols, w[0], w[1])).sum()
}

/// Every strictly increasing subset of `1..n` with at most `max_k` elements.
pub fn all_placements(n: usize, max_k: usize) -> Vec<Vec<usize>> {
    fn rec(start: usize, n: usize, left: usize, cur: &mut Vec<usize>, out: &mut Vec<Vec<usize>>) {
        out.push(cur.clone());
        if left == 0 {
            return;
        }
        for t in start..n {
            cur.push(t);
            rec(t + 1, n, left - 1, cur, out);
            cur.pop();
        }
    }
    let mut out = Vec::new();
    rec(1, n, max_k, &mut Vec::new(), &mut out);
    out
}

/// Minimum of `rss + beta * k` by enumeration.
pub fn brute_force_objective(cols: &[Vec<f64>], beta: f64, max_k: usize) -> f64 {
    all_placements(cols[0].len(), max_k)
        .iter()
        .map(|p| segmentation_rss(cols, p) + beta * p.len() as f64)
        .fold(f64::INFINITY, f64::min)
}

pub fn random_series<R: Rng>(rng: &mut R, len: usize, dims: usize) -> FeatureSeries {
    let rows = (0..len)
        .map(|_| (0..dims).map(|_| rng.gen_range(-3.0..3.0)).collect())
        .collect();
    let names = (0..dims).map(|j| format!("x{j}")).collect();
    FeatureSeries::new(10.0, names, rows).unwrap()
}

/// Busy server-minutes inside `[0, horizon)` divided by `servers * horizon`.
pub fn utilization(log: &EventLog, servers: u32) -> f64 {
    let h = log.horizon_min();
    let busy: f64 = log
        .entities()
        .unwrap()
        .iter()
        .filter_map(|e| e.service_start.map(|s| e.service_end.unwrap_or(h).min(h) - s))
        .sum();
    busy / (f64::from(servers) * h)
}
