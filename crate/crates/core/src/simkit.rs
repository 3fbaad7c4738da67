//! Discrete event simulation of a single-station, multi-server FIFO queue
//! whose server count follows a piecewise-constant schedule.

use std::cmp::{Ordering, Reverse};
use std::collections::{BinaryHeap, VecDeque};

use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;
use rand_distr::{Distribution, Exp, LogNormal};

use crate::error::{Error, Result};
use crate::seed::derive_seed;

/// Default horizon: one day in minutes.
pub const DEFAULT_HORIZON_MIN: f64 = 1440.0;

/// Ordered arrival instants over `[0, horizon_min)`.
#[derive(Clone, Debug, PartialEq)]
pub struct ArrivalTrace {
    times: Vec<f64>,
    horizon_min: f64,
}

impl ArrivalTrace {
    pub fn new(times: Vec<f64>, horizon_min: f64) -> Result<Self> {
        if !(horizon_min > 0.0 && horizon_min.is_finite()) {
            return Err(Error::config(format!("horizon must be positive, got {horizon_min}")));
        }
        for (i, &t) in times.iter().enumerate() {
            if !(0.0..horizon_min).contains(&t) {
                return Err(Error::config(format!(
                    "arrival {i} at {t} outside [0, {horizon_min})"
                )));
            }
            if i > 0 && t < times[i - 1] {
                return Err(Error::config(format!("arrival times decrease at index {i}")));
            }
        }
        Ok(Self { times, horizon_min })
    }

    pub fn empty(horizon_min: f64) -> Result<Self> {
        Self::new(Vec::new(), horizon_min)
    }

    pub fn times(&self) -> &[f64] {
        &self.times
    }

    pub fn horizon_min(&self) -> f64 {
        self.horizon_min
    }

    pub fn len(&self) -> usize {
        self.times.len()
    }

    pub fn is_empty(&self) -> bool {
        self.times.is_empty()
    }
}

/// Piecewise-constant server count over the horizon.
///
/// `levels[i]` applies on `[change_points[i-1], change_points[i])`, with the
/// horizon start and end closing the first and last segments.
#[derive(Clone, Debug, PartialEq)]
pub struct ResourceSchedule {
    change_points: Vec<f64>,
    levels: Vec<u32>,
    horizon_min: f64,
}

impl ResourceSchedule {
    pub fn new(change_points: Vec<f64>, levels: Vec<u32>, horizon_min: f64) -> Result<Self> {
        if levels.is_empty() {
            return Err(Error::config("resource schedule has no levels"));
        }
        if levels.len() != change_points.len() + 1 {
            return Err(Error::config(format!(
                "{} change points need {} levels, got {}",
                change_points.len(),
                change_points.len() + 1,
                levels.len()
            )));
        }
        if !(horizon_min > 0.0 && horizon_min.is_finite()) {
            return Err(Error::config(format!("horizon must be positive, got {horizon_min}")));
        }
        for (i, &cp) in change_points.iter().enumerate() {
            if !(cp > 0.0 && cp < horizon_min) {
                return Err(Error::config(format!(
                    "change point {cp} outside (0, {horizon_min})"
                )));
            }
            if i > 0 && cp <= change_points[i - 1] {
                return Err(Error::config("change points must be strictly increasing"));
            }
        }
        if let Some(i) = levels.iter().position(|&l| l == 0) {
            return Err(Error::config(format!("level {i} is zero")));
        }
        if levels.windows(2).any(|w| w[0] == w[1]) {
            return Err(Error::config("adjacent resource levels must differ"));
        }
        Ok(Self {
            change_points,
            levels,
            horizon_min,
        })
    }

    /// A schedule with a single level and no change points.
    pub fn constant(level: u32, horizon_min: f64) -> Result<Self> {
        Self::new(Vec::new(), vec![level], horizon_min)
    }

    /// Builds a schedule whose change points sit on an interval grid.
    pub fn from_grid(
        indices: &[usize],
        levels: &[u32],
        interval_min: f64,
        horizon_min: f64,
    ) -> Result<Self> {
        let cps = indices.iter().map(|&i| i as f64 * interval_min).collect();
        Self::new(cps, levels.to_vec(), horizon_min)
    }

    pub fn change_points(&self) -> &[f64] {
        &self.change_points
    }

    pub fn levels(&self) -> &[u32] {
        &self.levels
    }

    pub fn horizon_min(&self) -> f64 {
        self.horizon_min
    }

    /// Server count in effect at time `t`.
    pub fn level_at(&self, t: f64) -> u32 {
        let seg = self.change_points.partition_point(|&cp| cp <= t);
        self.levels[seg]
    }

    /// Integral of the server count over `[a, b)`.
    pub fn capacity_integral(&self, a: f64, b: f64) -> f64 {
        if b <= a {
            return 0.0;
        }
        let mut total = 0.0;
        let mut start = 0.0_f64;
        for (seg, &level) in self.levels.iter().enumerate() {
            let end = self.change_points.get(seg).copied().unwrap_or(f64::INFINITY);
            let lo = start.max(a);
            let hi = end.min(b);
            if hi > lo {
                total += f64::from(level) * (hi - lo);
            }
            start = end;
        }
        total
    }

    /// Same schedule with every level raised by `extra` servers.
    pub fn with_extra_servers(&self, extra: u32) -> Self {
        Self {
            change_points: self.change_points.clone(),
            levels: self.levels.iter().map(|l| l + extra).collect(),
            horizon_min: self.horizon_min,
        }
    }
}

#[derive(Clone, Copy, Debug, PartialEq, Eq)]
pub enum ServiceFamily {
    Exponential,
    LogNormal,
    Deterministic,
}

impl std::str::FromStr for ServiceFamily {
    type Err = Error;

    fn from_str(s: &str) -> Result<Self> {
        match s.trim().to_ascii_lowercase().as_str() {
            "exponential" | "exp" => Ok(Self::Exponential),
            "lognormal" => Ok(Self::LogNormal),
            "deterministic" | "constant" => Ok(Self::Deterministic),
            other => Err(Error::config(format!("unknown service family `{other}`"))),
        }
    }
}

/// Service-duration distribution, in minutes.
#[derive(Clone, Copy, Debug, PartialEq)]
pub enum ServiceModel {
    Exponential { mean: f64 },
    /// Log-durations are normal with mean `mu` and standard deviation `sigma`.
    LogNormal { mu: f64, sigma: f64 },
    Deterministic { value: f64 },
}

impl ServiceModel {
    pub fn validate(&self) -> Result<()> {
        let ok = match *self {
            ServiceModel::Exponential { mean } => mean > 0.0 && mean.is_finite(),
            ServiceModel::LogNormal { mu, sigma } => mu.is_finite() && sigma > 0.0 && sigma.is_finite(),
            ServiceModel::Deterministic { value } => value > 0.0 && value.is_finite(),
        };
        if ok {
            Ok(())
        } else {
            Err(Error::config(format!("invalid service parameters: {self:?}")))
        }
    }

    pub fn family(&self) -> ServiceFamily {
        match self {
            ServiceModel::Exponential { .. } => ServiceFamily::Exponential,
            ServiceModel::LogNormal { .. } => ServiceFamily::LogNormal,
            ServiceModel::Deterministic { .. } => ServiceFamily::Deterministic,
        }
    }

    pub fn mean(&self) -> f64 {
        match *self {
            ServiceModel::Exponential { mean } => mean,
            ServiceModel::LogNormal { mu, sigma } => (mu + 0.5 * sigma * sigma).exp(),
            ServiceModel::Deterministic { value } => value,
        }
    }

    fn sample<R: Rng>(&self, rng: &mut R) -> f64 {
        match *self {
            ServiceModel::Exponential { mean } => Exp::new(1.0 / mean).expect("validated").sample(rng),
            ServiceModel::LogNormal { mu, sigma } => {
                LogNormal::new(mu, sigma).expect("validated").sample(rng)
            }
            ServiceModel::Deterministic { value } => value,
        }
    }
}

#[derive(Clone, Copy, Debug, PartialEq, Eq, Hash, PartialOrd, Ord)]
pub enum EventKind {
    Arrival,
    ServiceStart,
    ServiceEnd,
}

impl EventKind {
    pub fn as_str(self) -> &'static str {
        match self {
            EventKind::Arrival => "arrival",
            EventKind::ServiceStart => "service_start",
            EventKind::ServiceEnd => "service_end",
        }
    }
}

impl std::str::FromStr for EventKind {
    type Err = String;

    fn from_str(s: &str) -> Result<Self, String> {
        match s {
            "arrival" => Ok(EventKind::Arrival),
            "service_start" => Ok(EventKind::ServiceStart),
            "service_end" => Ok(EventKind::ServiceEnd),
            other => Err(format!("unknown event kind `{other}`")),
        }
    }
}

#[derive(Clone, Copy, Debug, PartialEq)]
pub struct EventRecord {
    pub entity_id: u64,
    pub kind: EventKind,
    pub time_min: f64,
}

/// Per-entity lifecycle reconstructed from an event log. Missing events mean
/// the entity was still waiting (or in service) at the horizon.
#[derive(Clone, Copy, Debug, PartialEq)]
pub struct EntityTimes {
    pub entity_id: u64,
    pub arrival: f64,
    pub service_start: Option<f64>,
    pub service_end: Option<f64>,
}

/// Timestamped arrival/service records over a horizon.
#[derive(Clone, Debug, PartialEq)]
pub struct EventLog {
    records: Vec<EventRecord>,
    horizon_min: f64,
}

impl EventLog {
    /// Validates per-entity ordering and returns the log.
    pub fn new(records: Vec<EventRecord>, horizon_min: f64) -> Result<Self> {
        let log = Self {
            records,
            horizon_min,
        };
        log.entities()?;
        Ok(log)
    }

    pub fn records(&self) -> &[EventRecord] {
        &self.records
    }

    pub fn horizon_min(&self) -> f64 {
        self.horizon_min
    }

    pub fn is_empty(&self) -> bool {
        self.records.is_empty()
    }

    /// Groups records by entity, ordered by arrival time then entity id.
    pub fn entities(&self) -> Result<Vec<EntityTimes>> {
        use std::collections::BTreeMap;
        let mut by_id: BTreeMap<u64, [Option<f64>; 3]> = BTreeMap::new();
        for r in &self.records {
            if !r.time_min.is_finite() || r.time_min < 0.0 {
                return Err(Error::invalid(format!(
                    "entity {} has invalid time {}",
                    r.entity_id, r.time_min
                )));
            }
            let slot = &mut by_id.entry(r.entity_id).or_default()[r.kind as usize];
            if slot.is_some() {
                return Err(Error::invalid(format!(
                    "entity {} has duplicate {} event",
                    r.entity_id,
                    r.kind.as_str()
                )));
            }
            *slot = Some(r.time_min);
        }
        let mut out = Vec::with_capacity(by_id.len());
        for (id, [a, s, e]) in by_id {
            let arrival = a.ok_or_else(|| Error::invalid(format!("entity {id} has no arrival")))?;
            if let Some(s) = s {
                if s < arrival {
                    return Err(Error::invalid(format!("entity {id} starts service before arriving")));
                }
            }
            match (s, e) {
                (None, Some(_)) => {
                    return Err(Error::invalid(format!("entity {id} ends service without starting")))
                }
                (Some(s), Some(e)) if e < s => {
                    return Err(Error::invalid(format!("entity {id} ends service before starting")))
                }
                _ => {}
            }
            out.push(EntityTimes {
                entity_id: id,
                arrival,
                service_start: s,
                service_end: e,
            });
        }
        out.sort_by(|x, y| x.arrival.total_cmp(&y.arrival).then(x.entity_id.cmp(&y.entity_id)));
        Ok(out)
    }

    pub fn count(&self, kind: EventKind) -> usize {
        self.records.iter().filter(|r| r.kind == kind).count()
    }

    /// Arrival instants as a trace over the same horizon.
    pub fn arrival_trace(&self) -> Result<ArrivalTrace> {
        let mut times: Vec<f64> = self
            .records
            .iter()
            .filter(|r| r.kind == EventKind::Arrival)
            .map(|r| r.time_min)
            .collect();
        times.sort_by(f64::total_cmp);
        ArrivalTrace::new(times, self.horizon_min)
    }

    /// Completed service durations.
    pub fn service_durations(&self) -> Result<Vec<f64>> {
        Ok(self
            .entities()?
            .iter()
            .filter_map(|e| Some(e.service_end? - e.service_start?))
            .collect())
    }
}

#[derive(Clone, Copy, Debug, PartialEq)]
struct Completion {
    time: f64,
    entity: usize,
}

impl Eq for Completion {}

impl Ord for Completion {
    fn cmp(&self, other: &Self) -> Ordering {
        self.time
            .total_cmp(&other.time)
            .then(self.entity.cmp(&other.entity))
    }
}

impl PartialOrd for Completion {
    fn partial_cmp(&self, other: &Self) -> Option<Ordering> {
        Some(self.cmp(other))
    }
}

/// Service duration for one entity. Each entity draws from its own stream so
/// two runs with the same seed see identical service work per entity.
fn service_draw(service: &ServiceModel, seed: u64, entity: usize) -> f64 {
    let mut rng = ChaCha8Rng::seed_from_u64(derive_seed(seed, "service", &[entity as u64]));
    service.sample(&mut rng)
}

/// Runs one replication of the queue.
///
/// Entities are served first-in first-out. A capacity decrease never preempts:
/// a server removed while busy finishes its current entity first. Events at or
/// after the horizon are not recorded.
pub fn simulate(
    trace: &ArrivalTrace,
    schedule: &ResourceSchedule,
    service: &ServiceModel,
    seed: u64,
) -> Result<EventLog> {
    if (trace.horizon_min() - schedule.horizon_min()).abs() > 1e-9 {
        return Err(Error::config(format!(
            "trace horizon {} differs from schedule horizon {}",
            trace.horizon_min(),
            schedule.horizon_min()
        )));
    }
    service.validate()?;
    let horizon = trace.horizon_min();
    let arrivals = trace.times();

    let mut records = Vec::with_capacity(arrivals.len() * 3);
    let mut queue: VecDeque<usize> = VecDeque::new();
    let mut in_service: BinaryHeap<Reverse<Completion>> = BinaryHeap::new();
    let mut next_arrival = 0usize;
    let mut next_change = 0usize;
    let mut capacity = schedule.levels()[0] as usize;
    let cps = schedule.change_points();

    loop {
        let t_done = in_service.peek().map_or(f64::INFINITY, |c| c.0.time);
        let t_change = cps.get(next_change).copied().unwrap_or(f64::INFINITY);
        let t_arr = arrivals.get(next_arrival).copied().unwrap_or(f64::INFINITY);
        let now = t_done.min(t_change).min(t_arr);
        if now >= horizon {
            break;
        }
        // Tie order: completions free servers, then capacity changes, then arrivals.
        if t_done <= now {
            let Reverse(done) = in_service.pop().expect("peeked");
            records.push(EventRecord {
                entity_id: done.entity as u64,
                kind: EventKind::ServiceEnd,
                time_min: now,
            });
        } else if t_change <= now {
            next_change += 1;
            capacity = schedule.levels()[next_change] as usize;
        } else {
            let id = next_arrival;
            next_arrival += 1;
            records.push(EventRecord {
                entity_id: id as u64,
                kind: EventKind::Arrival,
                time_min: now,
            });
            queue.push_back(id);
        }
        while in_service.len() < capacity {
            let Some(id) = queue.pop_front() else { break };
            records.push(EventRecord {
                entity_id: id as u64,
                kind: EventKind::ServiceStart,
                time_min: now,
            });
            let duration = service_draw(service, seed, id);
            in_service.push(Reverse(Completion {
                time: now + duration,
                entity: id,
            }));
        }
    }

    Ok(EventLog {
        records,
        horizon_min: horizon,
    })
}

/// Piecewise-constant arrival rate (per minute).
///
/// `rates[i]` applies on `[breaks[i-1], breaks[i])`.
#[derive(Clone, Debug, PartialEq)]
pub struct RateProfile {
    breaks: Vec<f64>,
    rates: Vec<f64>,
}

impl RateProfile {
    pub fn new(breaks: Vec<f64>, rates: Vec<f64>) -> Result<Self> {
        if rates.len() != breaks.len() + 1 {
            return Err(Error::config(format!(
                "{} rate breaks need {} rates, got {}",
                breaks.len(),
                breaks.len() + 1,
                rates.len()
            )));
        }
        if let Some(r) = rates.iter().find(|r| !(**r >= 0.0 && r.is_finite())) {
            return Err(Error::config(format!("arrival rate must be non-negative, got {r}")));
        }
        if breaks.windows(2).any(|w| w[1] <= w[0]) {
            return Err(Error::config("rate breaks must be strictly increasing"));
        }
        Ok(Self { breaks, rates })
    }

    pub fn constant(rate: f64) -> Result<Self> {
        Self::new(Vec::new(), vec![rate])
    }

    pub fn breaks(&self) -> &[f64] {
        &self.breaks
    }

    pub fn rates(&self) -> &[f64] {
        &self.rates
    }

    pub fn rate_at(&self, t: f64) -> f64 {
        self.rates[self.breaks.partition_point(|&b| b <= t)]
    }

    fn max_rate(&self) -> f64 {
        self.rates.iter().copied().fold(0.0, f64::max)
    }
}

/// Samples a nonhomogeneous Poisson arrival trace by thinning.
pub fn sample_arrivals(profile: &RateProfile, horizon_min: f64, seed: u64) -> Result<ArrivalTrace> {
    let max_rate = profile.max_rate();
    if max_rate == 0.0 {
        return ArrivalTrace::empty(horizon_min);
    }
    let mut rng = ChaCha8Rng::seed_from_u64(seed);
    let gap = Exp::new(max_rate).map_err(|e| Error::config(e.to_string()))?;
    let mut times = Vec::new();
    let mut t = 0.0;
    loop {
        t += gap.sample(&mut rng);
        if t >= horizon_min {
            break;
        }
        let u: f64 = rng.gen();
        if u * max_rate < profile.rate_at(t) {
            times.push(t);
        }
    }
    ArrivalTrace::new(times, horizon_min)
}

/// Minimum number of completed services needed by [`fit_service`].
pub const MIN_FIT_SAMPLES: usize = 30;

/// Maximum-likelihood fit of a service family to completed service durations.
pub fn fit_service(logs: &[EventLog], family: ServiceFamily) -> Result<ServiceModel> {
    let mut durations = Vec::new();
    for log in logs {
        durations.extend(log.service_durations()?);
    }
    if durations.len() < MIN_FIT_SAMPLES {
        return Err(Error::InsufficientData(format!(
            "{} completed services, need at least {MIN_FIT_SAMPLES}",
            durations.len()
        )));
    }
    let n = durations.len() as f64;
    let model = match family {
        ServiceFamily::Exponential => ServiceModel::Exponential {
            mean: durations.iter().sum::<f64>() / n,
        },
        ServiceFamily::Deterministic => ServiceModel::Deterministic {
            value: durations.iter().sum::<f64>() / n,
        },
        ServiceFamily::LogNormal => {
            if durations.iter().any(|&d| d <= 0.0) {
                return Err(Error::invalid("lognormal fit needs strictly positive durations"));
            }
            let logs: Vec<f64> = durations.iter().map(|d| d.ln()).collect();
            let mu = logs.iter().sum::<f64>() / n;
            let var = logs.iter().map(|l| (l - mu) * (l - mu)).sum::<f64>() / n;
            ServiceModel::LogNormal {
                mu,
                sigma: var.sqrt(),
            }
        }
    };
    model.validate()?;
    Ok(model)
}
