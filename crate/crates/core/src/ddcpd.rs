//! Offline data-driven change point detection.
//!
//! Segment costs measure how far a section of the series deviates from its own
//! empirical estimate (mean level, or variance about a fixed mean). A single
//! change point minimizes the sum of the two section costs; multiple change
//! points minimize the summed section costs plus a fixed penalty per change,
//! solved exactly by dynamic programming over prefix-sum costs.
//!
//! Multivariate series are z-normalized per dimension over the whole series,
//! then section costs are summed across dimensions.

use crate::error::{Error, Result};
use crate::featurizer::FeatureSeries;

/// Floor applied to section variances before taking logarithms.
pub const VAR_FLOOR: f64 = 1e-12;

#[derive(Clone, Copy, Debug, Default, PartialEq, Eq)]
pub enum Statistic {
    /// Residual sum of squares about the section mean.
    #[default]
    Mean,
    /// `n * ln(variance)` of the section.
    StdDev,
}

impl Statistic {
    /// Shortest section this statistic can score.
    pub fn min_segment_len(self) -> usize {
        match self {
            Statistic::Mean => 1,
            Statistic::StdDev => 2,
        }
    }
}

impl std::str::FromStr for Statistic {
    type Err = Error;

    fn from_str(s: &str) -> Result<Self> {
        match s.trim().to_ascii_lowercase().as_str() {
            "mean" => Ok(Statistic::Mean),
            "stddev" | "std" | "sd" | "var" | "variance" => Ok(Statistic::StdDev),
            other => Err(Error::config(format!("unknown statistic `{other}`"))),
        }
    }
}

fn check_range(x: &[f64], a: usize, b: usize, min_len: usize) -> Result<&[f64]> {
    if a > b || b >= x.len() {
        return Err(Error::invalid(format!(
            "empty or out-of-bounds range [{a}, {b}] for series of length {}",
            x.len()
        )));
    }
    if b - a + 1 < min_len {
        return Err(Error::invalid(format!(
            "section [{a}, {b}] shorter than {min_len} points"
        )));
    }
    Ok(&x[a..=b])
}

fn mean_and_rss(xs: &[f64]) -> (f64, f64) {
    let n = xs.len() as f64;
    let mean = xs.iter().sum::<f64>() / n;
    let rss = xs.iter().map(|v| (v - mean) * (v - mean)).sum();
    (mean, rss)
}

/// Residual sum of squares of `x[a..=b]` about its mean, i.e.
/// `(b - a + 1) * population_variance`.
pub fn cost_mean(x: &[f64], a: usize, b: usize) -> Result<f64> {
    let xs = check_range(x, a, b, 1)?;
    Ok(mean_and_rss(xs).1)
}

/// `(b - a + 1) * ln(max(var, VAR_FLOOR))` for `x[a..=b]`.
pub fn cost_var(x: &[f64], a: usize, b: usize) -> Result<f64> {
    let xs = check_range(x, a, b, 2)?;
    let n = xs.len() as f64;
    let var = mean_and_rss(xs).1 / n;
    Ok(n * var.max(VAR_FLOOR).ln())
}

/// Ordered change points on the interval grid. Index `i` is the first window
/// of the new regime.
#[derive(Clone, Debug, Default, PartialEq, Eq, Hash, PartialOrd, Ord)]
pub struct ChangePointSet {
    taus: Vec<usize>,
}

impl ChangePointSet {
    pub fn new(taus: Vec<usize>) -> Result<Self> {
        if taus.windows(2).any(|w| w[1] <= w[0]) {
            return Err(Error::invalid(format!("change points not strictly increasing: {taus:?}")));
        }
        Ok(Self { taus })
    }

    pub fn empty() -> Self {
        Self::default()
    }

    pub fn taus(&self) -> &[usize] {
        &self.taus
    }

    pub fn len(&self) -> usize {
        self.taus.len()
    }

    pub fn is_empty(&self) -> bool {
        self.taus.is_empty()
    }

    /// Checks every change point lies strictly inside `(0, grid_len)`.
    pub fn check_within(&self, grid_len: usize) -> Result<()> {
        match self.taus.iter().find(|&&t| t == 0 || t >= grid_len) {
            Some(t) => Err(Error::invalid(format!("change point {t} outside (0, {grid_len})"))),
            None => Ok(()),
        }
    }

    pub fn to_minutes(&self, interval_min: f64) -> Vec<f64> {
        self.taus.iter().map(|&t| t as f64 * interval_min).collect()
    }

    /// Sum of absolute index differences to `other`, in minutes.
    pub fn abs_deviation_min(&self, other: &ChangePointSet, interval_min: f64) -> Result<f64> {
        if self.len() != other.len() {
            return Err(Error::shape(format!(
                "comparing {} change points with {}",
                self.len(),
                other.len()
            )));
        }
        Ok(self
            .taus
            .iter()
            .zip(&other.taus)
            .map(|(&a, &b)| a.abs_diff(b) as f64 * interval_min)
            .sum())
    }
}

/// Per-dimension z-normalized columns; constant columns become all zeros.
pub fn z_normalize(series: &FeatureSeries) -> Vec<Vec<f64>> {
    series
        .columns()
        .into_iter()
        .map(|col| {
            let n = col.len() as f64;
            let mean = col.iter().sum::<f64>() / n;
            let var = col.iter().map(|v| (v - mean) * (v - mean)).sum::<f64>() / n;
            let sd = var.sqrt();
            let scale = if sd > 1e-12 { 1.0 / sd } else { 0.0 };
            col.iter().map(|v| (v - mean) * scale).collect()
        })
        .collect()
}

/// Prefix-sum cost oracle over a multivariate series: `cost(s, e)` scores the
/// half-open section `[s, e)` in O(m).
#[derive(Clone, Debug)]
pub struct SegmentCost {
    statistic: Statistic,
    len: usize,
    sums: Vec<Vec<f64>>,
    squares: Vec<Vec<f64>>,
}

impl SegmentCost {
    pub fn new(columns: &[Vec<f64>], statistic: Statistic) -> Self {
        let len = columns.first().map_or(0, Vec::len);
        let mut sums = Vec::with_capacity(columns.len());
        let mut squares = Vec::with_capacity(columns.len());
        for col in columns {
            let mut s = Vec::with_capacity(len + 1);
            let mut q = Vec::with_capacity(len + 1);
            s.push(0.0);
            q.push(0.0);
            for &v in col {
                s.push(s.last().unwrap() + v);
                q.push(q.last().unwrap() + v * v);
            }
            sums.push(s);
            squares.push(q);
        }
        Self {
            statistic,
            len,
            sums,
            squares,
        }
    }

    /// Cost over z-normalized columns of `series`.
    pub fn for_series(series: &FeatureSeries, statistic: Statistic) -> Self {
        Self::new(&z_normalize(series), statistic)
    }

    pub fn len(&self) -> usize {
        self.len
    }

    pub fn is_empty(&self) -> bool {
        self.len == 0
    }

    pub fn statistic(&self) -> Statistic {
        self.statistic
    }

    /// Cost of `[start, end)` summed over dimensions.
    pub fn cost(&self, start: usize, end: usize) -> f64 {
        debug_assert!(end > start && end <= self.len);
        let n = (end - start) as f64;
        let mut total = 0.0;
        for (s, q) in self.sums.iter().zip(&self.squares) {
            let sum = s[end] - s[start];
            let rss = (q[end] - q[start] - sum * sum / n).max(0.0);
            total += match self.statistic {
                Statistic::Mean => rss,
                Statistic::StdDev => n * (rss / n).max(VAR_FLOOR).ln(),
            };
        }
        total
    }

    /// Total cost of the segmentation implied by `cps`.
    pub fn segmentation_cost(&self, cps: &ChangePointSet) -> f64 {
        let mut start = 0;
        let mut total = 0.0;
        for &t in cps.taus().iter().chain(std::iter::once(&self.len)) {
            total += self.cost(start, t);
            start = t;
        }
        total
    }
}

/// Penalty `2 * m * ln(T)` per change point.
pub fn default_penalty(dims: usize, len: usize) -> f64 {
    2.0 * dims as f64 * (len as f64).ln()
}

/// Best single split: the first index of the second section.
/// Ties resolve to the smallest index.
pub fn detect_single(series: &FeatureSeries, statistic: Statistic) -> Result<usize> {
    let t_len = series.len();
    if t_len < 4 {
        return Err(Error::InsufficientData(format!("need at least 4 points, got {t_len}")));
    }
    let cost = SegmentCost::for_series(series, statistic);
    let min_len = statistic.min_segment_len();
    let mut best = (f64::INFINITY, min_len);
    for t in min_len..=t_len - min_len {
        let z = cost.cost(0, t) + cost.cost(t, t_len);
        if z < best.0 {
            best = (z, t);
        }
    }
    Ok(best.1)
}

/// Result of a penalized multi-change-point search.
#[derive(Clone, Debug, PartialEq)]
pub struct Segmentation {
    pub change_points: ChangePointSet,
    /// Summed section costs.
    pub cost: f64,
    /// `cost + beta * N`.
    pub objective: f64,
}

/// `table[k][e]` = cheapest split of `[0, e)` into `k + 1` sections, with the
/// matching argmin of the last section start.
struct DpTable {
    best: Vec<Vec<f64>>,
    arg: Vec<Vec<usize>>,
}

fn run_dp(cost: &SegmentCost, max_cp: usize) -> DpTable {
    let n = cost.len();
    let min_len = cost.statistic().min_segment_len();
    let mut best = vec![vec![f64::INFINITY; n + 1]; max_cp + 1];
    let mut arg = vec![vec![0usize; n + 1]; max_cp + 1];
    for e in min_len..=n {
        best[0][e] = cost.cost(0, e);
    }
    for k in 1..=max_cp {
        let first_end = (k + 1) * min_len;
        for e in first_end..=n {
            let mut b = f64::INFINITY;
            let mut a = 0;
            for s in k * min_len..=e - min_len {
                let prev = best[k - 1][s];
                if !prev.is_finite() {
                    continue;
                }
                let v = prev + cost.cost(s, e);
                if v < b {
                    b = v;
                    a = s;
                }
            }
            best[k][e] = b;
            arg[k][e] = a;
        }
    }
    DpTable { best, arg }
}

fn backtrack(table: &DpTable, k: usize, n: usize) -> ChangePointSet {
    let mut taus = Vec::with_capacity(k);
    let mut e = n;
    for level in (1..=k).rev() {
        let s = table.arg[level][e];
        taus.push(s);
        e = s;
    }
    taus.reverse();
    ChangePointSet { taus }
}

fn feasible_max_cp(len: usize, statistic: Statistic, max_cp: usize) -> usize {
    let min_len = statistic.min_segment_len();
    max_cp.min((len / min_len).saturating_sub(1))
}

/// Exact minimizer of `sum of section costs + beta * N` over `N <= max_cp`.
/// Ties prefer fewer change points.
pub fn segment_penalized(
    series: &FeatureSeries,
    statistic: Statistic,
    beta: f64,
    max_cp: usize,
) -> Result<Segmentation> {
    if !(beta >= 0.0) {
        return Err(Error::invalid(format!("penalty must be non-negative, got {beta}")));
    }
    let cost = SegmentCost::for_series(series, statistic);
    segment_with_cost(&cost, beta, max_cp)
}

/// [`segment_penalized`] over a prepared cost oracle.
pub fn segment_with_cost(cost: &SegmentCost, beta: f64, max_cp: usize) -> Result<Segmentation> {
    let n = cost.len();
    if n < cost.statistic().min_segment_len() {
        return Err(Error::InsufficientData(format!("series of length {n} is too short")));
    }
    let max_cp = feasible_max_cp(n, cost.statistic(), max_cp);
    let table = run_dp(cost, max_cp);
    let mut best: Option<(f64, usize)> = None;
    for k in 0..=max_cp {
        let c = table.best[k][n];
        if !c.is_finite() {
            continue;
        }
        let obj = c + beta * k as f64;
        if best.map_or(true, |(b, _)| obj < b) {
            best = Some((obj, k));
        }
    }
    let (objective, k) = best.expect("zero change points is always feasible");
    Ok(Segmentation {
        change_points: backtrack(&table, k, n),
        cost: table.best[k][n],
        objective,
    })
}

/// Penalized multiple change point detection.
pub fn detect_multi(
    series: &FeatureSeries,
    statistic: Statistic,
    beta: f64,
    max_cp: usize,
) -> Result<ChangePointSet> {
    Ok(segment_penalized(series, statistic, beta, max_cp)?.change_points)
}

/// Exactly `n_cps` change points minimizing the summed section costs.
pub fn detect_fixed(series: &FeatureSeries, statistic: Statistic, n_cps: usize) -> Result<ChangePointSet> {
    let cost = SegmentCost::for_series(series, statistic);
    if feasible_max_cp(cost.len(), statistic, n_cps) < n_cps {
        return Err(Error::InsufficientData(format!(
            "series of length {} cannot hold {n_cps} change points",
            cost.len()
        )));
    }
    let table = run_dp(&cost, n_cps);
    Ok(backtrack(&table, n_cps, cost.len()))
}

#[derive(Clone, Copy, Debug, Default, PartialEq, Eq)]
pub enum Conciliation {
    #[default]
    Median,
    Mean,
}

impl std::str::FromStr for Conciliation {
    type Err = Error;

    fn from_str(s: &str) -> Result<Self> {
        match s.trim().to_ascii_lowercase().as_str() {
            "median" => Ok(Conciliation::Median),
            "mean" => Ok(Conciliation::Mean),
            other => Err(Error::config(format!("unknown conciliation `{other}`"))),
        }
    }
}

fn median(xs: &mut [f64]) -> f64 {
    xs.sort_by(f64::total_cmp);
    let n = xs.len();
    if n % 2 == 1 {
        xs[n / 2]
    } else {
        0.5 * (xs[n / 2 - 1] + xs[n / 2])
    }
}

/// Position-wise representative of several change point sets of equal size.
pub fn conciliate_positions(sets: &[Vec<f64>], mode: Conciliation) -> Result<Vec<f64>> {
    let first = sets.first().ok_or_else(|| Error::invalid("no change point sets to conciliate"))?;
    let k = first.len();
    if let Some(i) = sets.iter().position(|s| s.len() != k) {
        return Err(Error::shape(format!(
            "set {i} has {} change points, set 0 has {k}",
            sets[i].len()
        )));
    }
    Ok((0..k)
        .map(|j| {
            let mut col: Vec<f64> = sets
                .iter()
                .map(|s| {
                    let mut sorted = s.clone();
                    sorted.sort_by(f64::total_cmp);
                    sorted[j]
                })
                .collect();
            match mode {
                Conciliation::Median => median(&mut col),
                Conciliation::Mean => col.iter().sum::<f64>() / col.len() as f64,
            }
        })
        .collect())
}

/// Conciliates grid change point sets and rounds back onto the grid
/// (half up), nudging later points forward if rounding would merge them.
pub fn conciliate(sets: &[ChangePointSet], mode: Conciliation) -> Result<ChangePointSet> {
    let positions: Vec<Vec<f64>> = sets
        .iter()
        .map(|s| s.taus().iter().map(|&t| t as f64).collect())
        .collect();
    let pos = conciliate_positions(&positions, mode)?;
    let mut taus: Vec<usize> = Vec::with_capacity(pos.len());
    for p in pos {
        let mut t = (p + 0.5).floor() as usize;
        if let Some(&prev) = taus.last() {
            t = t.max(prev + 1);
        }
        taus.push(t);
    }
    ChangePointSet::new(taus)
}

#[cfg(test)]
mod tests {
    use super::*;
    use approx::assert_relative_eq;

    fn series(xs: &[f64]) -> FeatureSeries {
        FeatureSeries::univariate(10.0, xs).unwrap()
    }

    #[test]
    fn cost_mean_examples() {
        assert_eq!(cost_mean(&[5.0; 4], 0, 3).unwrap(), 0.0);
        assert_relative_eq!(cost_mean(&[1.0, 2.0, 3.0], 0, 2).unwrap(), 2.0);
        let x = [0.0, 0.0, 4.0, 4.0];
        assert_eq!(cost_mean(&x, 0, 1).unwrap() + cost_mean(&x, 2, 3).unwrap(), 0.0);
        assert!(cost_mean(&x, 2, 1).is_err());
        assert!(cost_mean(&x, 0, 4).is_err());
    }

    #[test]
    fn cost_var_examples() {
        let zeros = [0.0; 8];
        assert_relative_eq!(cost_var(&zeros, 0, 7).unwrap(), 8.0 * VAR_FLOOR.ln());
        let unit: Vec<f64> = (0..10).map(|i| if i < 5 { -1.0 } else { 1.0 }).collect();
        assert_relative_eq!(cost_var(&unit, 0, 9).unwrap(), 0.0, epsilon = 1e-12);
        let e_var: Vec<f64> = unit.iter().map(|v| v * std::f64::consts::E.sqrt()).collect();
        assert_relative_eq!(cost_var(&e_var, 0, 9).unwrap(), 10.0, epsilon = 1e-12);
        assert!(cost_var(&unit, 3, 3).is_err());
    }

    #[test]
    fn single_step() {
        let mut xs = vec![0.0; 10];
        xs.extend([5.0; 10]);
        assert_eq!(detect_single(&series(&xs), Statistic::Mean).unwrap(), 10);
    }

    #[test]
    fn single_on_constant_picks_smallest() {
        assert_eq!(detect_single(&series(&[3.0; 12]), Statistic::Mean).unwrap(), 1);
        assert!(detect_single(&series(&[1.0, 2.0, 3.0]), Statistic::Mean).is_err());
    }

    #[test]
    fn single_two_dims_same_step() {
        let a: Vec<f64> = (0..20).map(|i| if i < 7 { 0.0 } else { 5.0 }).collect();
        let b: Vec<f64> = (0..20).map(|i| if i < 7 { 2.0 } else { -1.0 }).collect();
        let fs = FeatureSeries::from_columns(10.0, vec!["a".into(), "b".into()], &[a.clone(), b]).unwrap();
        assert_eq!(
            detect_single(&fs, Statistic::Mean).unwrap(),
            detect_single(&series(&a), Statistic::Mean).unwrap()
        );
    }

    #[test]
    fn huge_penalty_no_change_points() {
        let xs: Vec<f64> = (0..40).map(|i| ((i * 7919) % 13) as f64).collect();
        assert!(detect_multi(&series(&xs), Statistic::Mean, 1e9, 5).unwrap().is_empty());
    }

    #[test]
    fn three_blocks() {
        let mut xs = vec![0.0; 10];
        xs.extend([5.0; 10]);
        xs.extend([1.0; 10]);
        let cps = detect_multi(&series(&xs), Statistic::Mean, 1e-3, 5).unwrap();
        assert_eq!(cps.taus(), &[10, 20]);
        assert_eq!(detect_fixed(&series(&xs), Statistic::Mean, 2).unwrap().taus(), &[10, 20]);
    }

    #[test]
    fn stddev_statistic_finds_variance_change() {
        let xs: Vec<f64> = (0..40)
            .map(|i| {
                let s = if i % 2 == 0 { 1.0 } else { -1.0 };
                if i < 20 { 0.1 * s } else { 3.0 * s }
            })
            .collect();
        assert_eq!(detect_fixed(&series(&xs), Statistic::StdDev, 1).unwrap().taus(), &[20]);
    }

    #[test]
    fn conciliation() {
        let s = |v: usize| ChangePointSet::new(vec![v]).unwrap();
        assert_eq!(conciliate(&[s(10), s(10), s(10)], Conciliation::Median).unwrap().taus(), &[10]);
        assert_eq!(conciliate(&[s(9), s(10), s(14)], Conciliation::Median).unwrap().taus(), &[10]);
        let pos = conciliate_positions(
            &[vec![10.5, 19.0], vec![9.5, 20.0], vec![11.0, 19.0]],
            Conciliation::Mean,
        )
        .unwrap();
        assert_relative_eq!(pos[0], 31.0 / 3.0);
        assert_relative_eq!(pos[1], 58.0 / 3.0);
        let two = ChangePointSet::new(vec![3, 9]).unwrap();
        assert!(matches!(conciliate(&[s(1), two], Conciliation::Median), Err(Error::Shape(_))));
    }

    #[test]
    fn change_point_set_checks() {
        assert!(ChangePointSet::new(vec![3, 3]).is_err());
        let cps = ChangePointSet::new(vec![60, 120]).unwrap();
        assert!(cps.check_within(144).is_ok());
        assert!(cps.check_within(120).is_err());
        assert_eq!(cps.to_minutes(10.0), vec![600.0, 1200.0]);
        let other = ChangePointSet::new(vec![63, 116]).unwrap();
        assert_eq!(cps.abs_deviation_min(&other, 10.0).unwrap(), 70.0);
    }
}
