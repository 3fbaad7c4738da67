//! CSV readers and writers for every artifact the pipeline consumes or emits.

use std::collections::HashMap;
use std::fs::File;
use std::io::{BufWriter, Write};
use std::path::Path;

use crate::ddcpd::ChangePointSet;
use crate::error::{Error, Result};
use crate::featurizer::FeatureSeries;
use crate::simkit::{EventKind, EventLog, EventRecord};

fn parse_err(path: &Path, line: u64, message: impl Into<String>) -> Error {
    Error::Parse {
        path: path.display().to_string(),
        line,
        message: message.into(),
    }
}

fn reader(path: &Path) -> Result<csv::Reader<File>> {
    let file = File::open(path).map_err(|e| Error::io(path, e))?;
    Ok(csv::ReaderBuilder::new().trim(csv::Trim::All).from_reader(file))
}

fn records(path: &Path) -> Result<(Vec<String>, Vec<(u64, csv::StringRecord)>)> {
    let mut rdr = reader(path)?;
    let header = rdr
        .headers()
        .map_err(|e| parse_err(path, 1, e.to_string()))?
        .iter()
        .map(str::to_string)
        .collect();
    let mut rows = Vec::new();
    for rec in rdr.records() {
        let rec = rec.map_err(|e| {
            let line = e.position().map_or(0, |p| p.line());
            parse_err(path, line, e.to_string())
        })?;
        let line = rec.position().map_or(0, |p| p.line());
        rows.push((line, rec));
    }
    Ok((header, rows))
}

fn field<T: std::str::FromStr>(path: &Path, line: u64, rec: &csv::StringRecord, i: usize, name: &str) -> Result<T> {
    let raw = rec
        .get(i)
        .ok_or_else(|| parse_err(path, line, format!("missing column `{name}`")))?;
    raw.parse()
        .map_err(|_| parse_err(path, line, format!("bad {name} `{raw}`")))
}

fn create(path: &Path) -> Result<BufWriter<File>> {
    if let Some(dir) = path.parent().filter(|d| !d.as_os_str().is_empty()) {
        std::fs::create_dir_all(dir).map_err(|e| Error::io(dir, e))?;
    }
    File::create(path)
        .map(BufWriter::new)
        .map_err(|e| Error::io(path, e))
}

/// Writes `text` to `path`, creating parent directories.
pub fn write_text(path: &Path, text: &str) -> Result<()> {
    let mut w = create(path)?;
    w.write_all(text.as_bytes())
        .and_then(|_| w.flush())
        .map_err(|e| Error::io(path, e))
}

/// `entity_id,event,time_min`, one row per record. Times use the shortest
/// representation that reads back to the same value.
pub fn event_log_csv(log: &EventLog) -> String {
    let mut out = String::from("entity_id,event,time_min\n");
    for r in log.records() {
        out.push_str(&format!("{},{},{}\n", r.entity_id, r.kind.as_str(), r.time_min));
    }
    out
}

pub fn write_event_log(path: &Path, log: &EventLog) -> Result<()> {
    write_text(path, &event_log_csv(log))
}

/// Reads an event log written by [`write_event_log`], checking per-entity
/// ordering as it goes so violations point at the offending line.
pub fn ingest_event_log(path: &Path, horizon_min: f64) -> Result<EventLog> {
    let (header, rows) = records(path)?;
    if header != ["entity_id", "event", "time_min"] {
        return Err(parse_err(path, 1, format!("expected header entity_id,event,time_min, got {}", header.join(","))));
    }
    let mut last: HashMap<u64, (EventKind, f64)> = HashMap::new();
    let mut out = Vec::with_capacity(rows.len());
    for (line, rec) in rows {
        if rec.len() != 3 {
            return Err(parse_err(path, line, format!("expected 3 fields, got {}", rec.len())));
        }
        let entity_id: u64 = field(path, line, &rec, 0, "entity_id")?;
        let kind: EventKind = rec[1]
            .parse()
            .map_err(|e: String| parse_err(path, line, e))?;
        let time_min: f64 = field(path, line, &rec, 2, "time_min")?;
        if !time_min.is_finite() || time_min < 0.0 {
            return Err(parse_err(path, line, format!("time {time_min} is not a valid timestamp")));
        }
        if time_min >= horizon_min {
            return Err(parse_err(path, line, format!("time {time_min} is at or past the horizon {horizon_min}")));
        }
        let expected = match last.get(&entity_id) {
            None => EventKind::Arrival,
            Some((EventKind::Arrival, _)) => EventKind::ServiceStart,
            Some((EventKind::ServiceStart, _)) => EventKind::ServiceEnd,
            Some((EventKind::ServiceEnd, _)) => {
                return Err(parse_err(path, line, format!("entity {entity_id} has an event after service_end")));
            }
        };
        if kind != expected {
            return Err(parse_err(
                path,
                line,
                format!("entity {entity_id}: expected {}, got {}", expected.as_str(), kind.as_str()),
            ));
        }
        if let Some(&(prev_kind, prev)) = last.get(&entity_id) {
            if time_min < prev {
                return Err(parse_err(
                    path,
                    line,
                    format!(
                        "entity {entity_id}: {} at {time_min} precedes {} at {prev}",
                        kind.as_str(),
                        prev_kind.as_str()
                    ),
                ));
            }
        }
        last.insert(entity_id, (kind, time_min));
        out.push(EventRecord { entity_id, kind, time_min });
    }
    EventLog::new(out, horizon_min)
}

/// `t_index,<feature names>`.
pub fn features_csv(series: &FeatureSeries) -> String {
    let mut out = format!("t_index,{}\n", series.names().join(","));
    for (t, row) in series.rows().enumerate() {
        out.push_str(&t.to_string());
        for v in row {
            out.push_str(&format!(",{v:.6}"));
        }
        out.push('\n');
    }
    out
}

pub fn write_features(path: &Path, series: &FeatureSeries) -> Result<()> {
    write_text(path, &features_csv(series))
}

pub fn read_features(path: &Path, interval_min: f64) -> Result<FeatureSeries> {
    let (header, rows) = records(path)?;
    if header.first().map(String::as_str) != Some("t_index") || header.len() < 2 {
        return Err(parse_err(path, 1, "expected header t_index,<features...>"));
    }
    let names = header[1..].to_vec();
    let mut values = Vec::with_capacity(rows.len());
    for (expected_t, (line, rec)) in rows.into_iter().enumerate() {
        if rec.len() != header.len() {
            return Err(parse_err(path, line, format!("expected {} fields, got {}", header.len(), rec.len())));
        }
        let t: usize = field(path, line, &rec, 0, "t_index")?;
        if t != expected_t {
            return Err(parse_err(path, line, format!("t_index {t} out of sequence")));
        }
        let row = (1..rec.len())
            .map(|i| field(path, line, &rec, i, &names[i - 1]))
            .collect::<Result<Vec<f64>>>()?;
        values.push(row);
    }
    FeatureSeries::new(interval_min, names, values)
}

/// `cp_index,cp_time_min`, with 1-based `cp_index`.
pub fn change_points_csv(cps: &ChangePointSet, interval_min: f64) -> String {
    let mut out = String::from("cp_index,cp_time_min\n");
    for (i, t) in cps.to_minutes(interval_min).iter().enumerate() {
        out.push_str(&format!("{},{t:.6}\n", i + 1));
    }
    out
}

pub fn write_change_points(path: &Path, cps: &ChangePointSet, interval_min: f64) -> Result<()> {
    write_text(path, &change_points_csv(cps, interval_min))
}

/// Reads change point times in minutes and snaps them onto the grid.
pub fn read_change_points(path: &Path, interval_min: f64) -> Result<ChangePointSet> {
    let (header, rows) = records(path)?;
    if header != ["cp_index", "cp_time_min"] {
        return Err(parse_err(path, 1, "expected header cp_index,cp_time_min"));
    }
    let mut taus = Vec::with_capacity(rows.len());
    for (line, rec) in rows {
        let t: f64 = field(path, line, &rec, 1, "cp_time_min")?;
        if !(t.is_finite() && t > 0.0) {
            return Err(parse_err(path, line, format!("change point time {t} must be positive")));
        }
        taus.push((t / interval_min).round() as usize);
    }
    ChangePointSet::new(taus).map_err(|e| parse_err(path, 0, e.to_string()))
}
