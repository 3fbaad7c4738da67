//! Snapshot features: fixed-width windows over an event log turned into a
//! multivariate time series.

use crate::error::{Error, Result};
use crate::simkit::{EventLog, ResourceSchedule};

/// Default window width in minutes.
pub const DEFAULT_INTERVAL_MIN: f64 = 10.0;

/// Names of the snapshot features, in column order.
pub const FEATURE_NAMES: [&str; 6] = [
    "n_system",
    "n_queue",
    "utilization",
    "busy_time",
    "idle_time",
    "completions",
];

/// `T x m` matrix of per-window features, stored row-major.
#[derive(Clone, Debug, PartialEq)]
pub struct FeatureSeries {
    interval_min: f64,
    names: Vec<String>,
    values: Vec<f64>,
    rows: usize,
}

impl FeatureSeries {
    pub fn new(interval_min: f64, names: Vec<String>, rows: Vec<Vec<f64>>) -> Result<Self> {
        if !(interval_min > 0.0 && interval_min.is_finite()) {
            return Err(Error::config(format!("interval must be positive, got {interval_min}")));
        }
        let m = names.len();
        if m == 0 {
            return Err(Error::shape("feature series needs at least one column"));
        }
        let mut values = Vec::with_capacity(rows.len() * m);
        for (t, row) in rows.iter().enumerate() {
            if row.len() != m {
                return Err(Error::shape(format!("row {t} has {} values, expected {m}", row.len())));
            }
            if let Some(v) = row.iter().find(|v| !v.is_finite()) {
                return Err(Error::invalid(format!("row {t} contains non-finite value {v}")));
            }
            values.extend_from_slice(row);
        }
        Ok(Self {
            interval_min,
            names,
            values,
            rows: rows.len(),
        })
    }

    /// Single-column series, mostly for tests and synthetic data.
    pub fn univariate(interval_min: f64, xs: &[f64]) -> Result<Self> {
        Self::new(interval_min, vec!["x".into()], xs.iter().map(|&x| vec![x]).collect())
    }

    /// Builds a series from columns of equal length.
    pub fn from_columns(interval_min: f64, names: Vec<String>, columns: &[Vec<f64>]) -> Result<Self> {
        let t = columns.first().map_or(0, Vec::len);
        if columns.iter().any(|c| c.len() != t) {
            return Err(Error::shape("columns differ in length"));
        }
        let rows = (0..t).map(|i| columns.iter().map(|c| c[i]).collect()).collect();
        Self::new(interval_min, names, rows)
    }

    pub fn interval_min(&self) -> f64 {
        self.interval_min
    }

    pub fn names(&self) -> &[String] {
        &self.names
    }

    /// Number of windows `T`.
    pub fn len(&self) -> usize {
        self.rows
    }

    pub fn is_empty(&self) -> bool {
        self.rows == 0
    }

    /// Number of features `m`.
    pub fn dims(&self) -> usize {
        self.names.len()
    }

    pub fn row(&self, t: usize) -> &[f64] {
        let m = self.dims();
        &self.values[t * m..(t + 1) * m]
    }

    pub fn get(&self, t: usize, j: usize) -> f64 {
        self.values[t * self.dims() + j]
    }

    pub fn column(&self, j: usize) -> Vec<f64> {
        (0..self.rows).map(|t| self.get(t, j)).collect()
    }

    pub fn columns(&self) -> Vec<Vec<f64>> {
        (0..self.dims()).map(|j| self.column(j)).collect()
    }

    pub fn rows(&self) -> impl Iterator<Item = &[f64]> {
        self.values.chunks(self.dims())
    }

    fn same_shape(&self, other: &Self) -> bool {
        self.rows == other.rows
            && self.names == other.names
            && (self.interval_min - other.interval_min).abs() < 1e-12
    }
}

/// Length of `[a, b) ∩ [lo, hi)`.
fn overlap(a: f64, b: f64, lo: f64, hi: f64) -> f64 {
    (b.min(hi) - a.max(lo)).max(0.0)
}

/// Computes the six snapshot features per window of width `interval_min`.
///
/// Busy and idle time are measured against the staffed capacity in each
/// window; a window that straddles a change uses the time-weighted capacity.
/// Utilization is aggregate busy server time over scheduled server time,
/// capped at one when a non-preemptive drop lets a server overrun.
pub fn snapshot_features(
    log: &EventLog,
    staffing: &ResourceSchedule,
    interval_min: f64,
) -> Result<FeatureSeries> {
    let horizon = log.horizon_min();
    if !(interval_min > 0.0) {
        return Err(Error::config("interval must be positive"));
    }
    let ratio = horizon / interval_min;
    let windows = ratio.round();
    if (ratio - windows).abs() > 1e-9 || windows < 1.0 {
        return Err(Error::config(format!(
            "horizon {horizon} is not divisible by interval {interval_min}"
        )));
    }
    if (staffing.horizon_min() - horizon).abs() > 1e-9 {
        return Err(Error::config("staffing schedule horizon differs from the log"));
    }
    let windows = windows as usize;
    let mut in_system = vec![0.0; windows];
    let mut in_queue = vec![0.0; windows];
    let mut busy = vec![0.0; windows];
    let mut completions = vec![0.0; windows];

    let window_of = |t: f64| ((t / interval_min).floor() as usize).min(windows - 1);
    // Adds the overlap of [a, b) with every window it touches.
    let spread = |acc: &mut [f64], a: f64, b: f64| {
        if b <= a {
            return;
        }
        let last = ((b.min(horizon) / interval_min).ceil() as usize)
            .saturating_sub(1)
            .min(windows - 1);
        for w in window_of(a)..=last.max(window_of(a)) {
            let lo = w as f64 * interval_min;
            acc[w] += overlap(a, b, lo, lo + interval_min);
        }
    };

    for e in log.entities()? {
        let start = e.service_start.unwrap_or(horizon);
        let end = e.service_end.unwrap_or(horizon);
        spread(&mut in_system, e.arrival, end);
        spread(&mut in_queue, e.arrival, start);
        if e.service_start.is_some() {
            spread(&mut busy, start, end);
        }
        if let Some(t) = e.service_end {
            completions[window_of(t)] += 1.0;
        }
    }

    let rows = (0..windows)
        .map(|w| {
            let lo = w as f64 * interval_min;
            let capacity = staffing.capacity_integral(lo, lo + interval_min);
            let util = if capacity > 0.0 { (busy[w] / capacity).min(1.0) } else { 0.0 };
            vec![
                in_system[w] / interval_min,
                in_queue[w] / interval_min,
                util,
                busy[w],
                (capacity - busy[w]).max(0.0),
                completions[w],
            ]
        })
        .collect();
    FeatureSeries::new(
        interval_min,
        FEATURE_NAMES.iter().map(|s| s.to_string()).collect(),
        rows,
    )
}

/// Element-wise mean of series sharing shape and column names.
pub fn average_series(series: &[FeatureSeries]) -> Result<FeatureSeries> {
    let first = series
        .first()
        .ok_or_else(|| Error::shape("cannot average zero series"))?;
    if let Some(bad) = series.iter().position(|s| !first.same_shape(s)) {
        return Err(Error::shape(format!("series {bad} differs in shape from series 0")));
    }
    let mut out = first.clone();
    let n = series.len() as f64;
    for (i, v) in out.values.iter_mut().enumerate() {
        *v = series.iter().map(|s| s.values[i]).sum::<f64>() / n;
    }
    Ok(out)
}

/// Level in effect during each window (sampled at the window midpoint).
pub fn level_series(schedule: &ResourceSchedule, interval_min: f64, windows: usize) -> Vec<f64> {
    (0..windows)
        .map(|w| f64::from(schedule.level_at((w as f64 + 0.5) * interval_min)))
        .collect()
}
