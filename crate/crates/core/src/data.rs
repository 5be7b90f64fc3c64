//! Cycling data: traces, CSV ingestion, normalization, censoring and a
//! synthetic fleet generator.
//!
//! Cycles are stored as raw counts; [`Dataset::cycle_scale`] converts them
//! to the kilocycle axis the models work on.

use std::collections::HashMap;
use std::io::{Read, Write};
use std::path::Path;

use rand::Rng;
use rand_distr::StandardNormal;
use serde::{Deserialize, Serialize};

use crate::error::{invalid, Error, Result};
use crate::models::{ModelSpec, ParamVector, WIDTH_FLOOR_REL};
use crate::rng::{stream, TAG_FLEET};

pub const CSV_HEADER: [&str; 3] = ["battery_id", "cycle", "capacity"];

#[derive(Debug, Clone, Copy, PartialEq, Eq, Default, Serialize, Deserialize)]
#[serde(rename_all = "kebab-case")]
pub enum Unit {
    #[default]
    AbsoluteAh,
    RelativeToInit,
}

/// Measurements of one battery, ordered by cycle.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct Trace {
    pub battery_id: String,
    /// `(raw cycle, capacity)` pairs.
    points: Vec<(f64, f64)>,
    pub unit: Unit,
}

impl Trace {
    pub fn new(battery_id: impl Into<String>, points: Vec<(f64, f64)>, unit: Unit) -> Result<Self> {
        let battery_id = battery_id.into();
        for w in points.windows(2) {
            if w[1].0 == w[0].0 {
                return Err(Error::DuplicateCycle {
                    battery_id,
                    cycle: w[0].0,
                });
            }
            if !(w[1].0 > w[0].0) {
                return Err(Error::InvalidData(format!(
                    "cycles of battery {battery_id} are not increasing"
                )));
            }
        }
        if let Some(&(c, y)) = points
            .iter()
            .find(|(c, y)| !c.is_finite() || *c < 0.0 || !y.is_finite() || *y <= 0.0)
        {
            return Err(Error::InvalidData(format!(
                "battery {battery_id} has invalid point (cycle {c}, capacity {y})"
            )));
        }
        if unit == Unit::RelativeToInit {
            if let Some(&(_, first)) = points.first() {
                if (first - 1.0).abs() > 1e-9 {
                    return Err(Error::InvalidData(format!(
                        "relative trace {battery_id} starts at {first}, not 1"
                    )));
                }
            }
        }
        Ok(Self {
            battery_id,
            points,
            unit,
        })
    }

    pub fn points(&self) -> &[(f64, f64)] {
        &self.points
    }

    pub fn len(&self) -> usize {
        self.points.len()
    }

    pub fn is_empty(&self) -> bool {
        self.points.is_empty()
    }

    pub fn cycles(&self) -> Vec<f64> {
        self.points.iter().map(|p| p.0).collect()
    }

    pub fn capacities(&self) -> Vec<f64> {
        self.points.iter().map(|p| p.1).collect()
    }

    /// Cycles divided by `cycle_scale`.
    pub fn kilocycles(&self, cycle_scale: f64) -> Vec<f64> {
        self.points.iter().map(|p| p.0 / cycle_scale).collect()
    }

    /// Capacity at the smallest observed cycle.
    pub fn y_init(&self) -> Option<f64> {
        self.points.first().map(|p| p.1)
    }

    pub fn min_capacity(&self) -> Option<f64> {
        self.points.iter().map(|p| p.1).reduce(f64::min)
    }
}

/// Notes attached by transforms; not part of the persisted data.
#[derive(Debug, Clone, Default, PartialEq, Serialize, Deserialize)]
pub struct DatasetMeta {
    /// Traces left with fewer than 2 points by censoring.
    pub short_traces: Vec<String>,
    pub warnings: Vec<String>,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct Dataset {
    pub traces: Vec<Trace>,
    /// Raw cycles per kilocycle unit.
    pub cycle_scale: f64,
    #[serde(default)]
    pub meta: DatasetMeta,
}

#[derive(Debug, Clone, Copy, PartialEq)]
pub struct LoadOptions {
    pub unit: Unit,
    pub cycle_scale: f64,
}

impl Default for LoadOptions {
    fn default() -> Self {
        Self {
            unit: Unit::AbsoluteAh,
            cycle_scale: 1000.0,
        }
    }
}

impl Dataset {
    pub fn new(traces: Vec<Trace>, cycle_scale: f64) -> Result<Self> {
        if !(cycle_scale > 0.0 && cycle_scale.is_finite()) {
            return Err(invalid(format!(
                "cycle_scale must be positive, got {cycle_scale}"
            )));
        }
        let mut seen = std::collections::HashSet::new();
        for t in &traces {
            if !seen.insert(t.battery_id.as_str()) {
                return Err(Error::InvalidData(format!(
                    "battery id {} appears twice",
                    t.battery_id
                )));
            }
        }
        if let Some(first) = traces.first() {
            if traces.iter().any(|t| t.unit != first.unit) {
                return Err(Error::InvalidData("traces mix capacity units".into()));
            }
        }
        Ok(Self {
            traces,
            cycle_scale,
            meta: DatasetMeta::default(),
        })
    }

    pub fn len(&self) -> usize {
        self.traces.len()
    }

    pub fn is_empty(&self) -> bool {
        self.traces.is_empty()
    }

    pub fn unit(&self) -> Option<Unit> {
        self.traces.first().map(|t| t.unit)
    }

    pub fn ids(&self) -> Vec<&str> {
        self.traces.iter().map(|t| t.battery_id.as_str()).collect()
    }

    pub fn trace(&self, id: &str) -> Option<&Trace> {
        self.traces.iter().find(|t| t.battery_id == id)
    }

    /// Dataset restricted to `ids`, in the given order.
    pub fn subset(&self, ids: &[&str]) -> Result<Dataset> {
        let traces = ids
            .iter()
            .map(|id| {
                self.trace(id)
                    .cloned()
                    .ok_or_else(|| invalid(format!("unknown battery id {id}")))
            })
            .collect::<Result<Vec<_>>>()?;
        Dataset::new(traces, self.cycle_scale)
    }

    /// All measurements as `(kilocycles, capacities)`.
    pub fn pooled(&self) -> (Vec<f64>, Vec<f64>) {
        let mut x = Vec::new();
        let mut y = Vec::new();
        for t in &self.traces {
            x.extend(t.kilocycles(self.cycle_scale));
            y.extend(t.capacities());
        }
        (x, y)
    }
}

/// Reads `battery_id,cycle,capacity` rows from `reader`.
pub fn read_csv<R: Read>(mut reader: R, opts: &LoadOptions) -> Result<Dataset> {
    let mut text = Vec::new();
    reader.read_to_end(&mut text)?;
    // line numbers from byte offsets; the csv reader's own count is off by
    // one after CR LF terminators and its offsets may sit on a terminator
    let line_of = |pos: Option<&csv::Position>| -> u64 {
        pos.map_or(0, |p| {
            let mut start = (p.byte() as usize).min(text.len());
            while start < text.len() && matches!(text[start], b'\r' | b'\n') {
                start += 1;
            }
            1 + text[..start].iter().filter(|&&b| b == b'\n').count() as u64
        })
    };
    let mut rdr = csv::ReaderBuilder::new()
        .has_headers(true)
        .flexible(true)
        .from_reader(text.as_slice());
    let headers = rdr
        .headers()
        .map_err(|e| Error::Parse {
            line: 1,
            message: e.to_string(),
        })?
        .clone();
    let names: Vec<&str> = headers.iter().map(str::trim).collect();
    if names != CSV_HEADER {
        return Err(Error::Parse {
            line: 1,
            message: format!("expected header {}", CSV_HEADER.join(",")),
        });
    }
    let mut order: Vec<String> = Vec::new();
    let mut rows: HashMap<String, Vec<(f64, f64)>> = HashMap::new();
    for record in rdr.records() {
        let record = record.map_err(|e| Error::Parse {
            line: line_of(e.position()),
            message: e.to_string(),
        })?;
        let line = line_of(record.position());
        if record.len() != 3 {
            return Err(Error::Parse {
                line,
                message: format!("expected 3 fields, found {}", record.len()),
            });
        }
        let id = record[0].trim();
        if id.is_empty() {
            return Err(Error::Parse {
                line,
                message: "empty battery_id".into(),
            });
        }
        let number = |field: &str, name: &str| -> Result<f64> {
            field.trim().parse::<f64>().map_err(|_| Error::Parse {
                line,
                message: format!("{name} '{field}' is not a number"),
            })
        };
        let cycle = number(&record[1], "cycle")?;
        let capacity = number(&record[2], "capacity")?;
        let entry = rows.entry(id.to_string()).or_insert_with(|| {
            order.push(id.to_string());
            Vec::new()
        });
        entry.push((cycle, capacity));
    }
    let traces = order
        .into_iter()
        .map(|id| {
            let mut pts = rows.remove(&id).expect("id recorded");
            pts.sort_by(|a, b| a.0.total_cmp(&b.0));
            Trace::new(id, pts, opts.unit)
        })
        .collect::<Result<Vec<_>>>()?;
    Dataset::new(traces, opts.cycle_scale)
}

pub fn load_csv(path: impl AsRef<Path>, opts: &LoadOptions) -> Result<Dataset> {
    read_csv(std::fs::File::open(path)?, opts)
}

/// Writes the dataset in the ingestion format. Numbers use the shortest
/// decimal that reads back to the same value.
pub fn write_csv<W: Write>(dataset: &Dataset, writer: W) -> Result<()> {
    let mut w = csv::Writer::from_writer(writer);
    let io = |e: csv::Error| Error::Io(std::io::Error::other(e));
    w.write_record(CSV_HEADER).map_err(io)?;
    for t in &dataset.traces {
        for &(c, y) in t.points() {
            w.write_record([t.battery_id.as_str(), &c.to_string(), &y.to_string()])
                .map_err(io)?;
        }
    }
    w.flush()?;
    Ok(())
}

pub fn save_csv(dataset: &Dataset, path: impl AsRef<Path>) -> Result<()> {
    write_csv(dataset, std::fs::File::create(path)?)
}

/// Divides each trace by its own first capacity.
pub fn normalize(dataset: &Dataset) -> Result<Dataset> {
    if dataset.unit() == Some(Unit::RelativeToInit) {
        return Err(invalid("dataset is already relative to initial capacity"));
    }
    let traces = dataset
        .traces
        .iter()
        .map(|t| {
            let y0 = t.y_init().unwrap_or(1.0);
            if !(y0 > 0.0) {
                return Err(Error::InvalidData(format!(
                    "battery {} has nonpositive first capacity",
                    t.battery_id
                )));
            }
            let pts = t.points().iter().map(|&(c, y)| (c, y / y0)).collect();
            Trace::new(t.battery_id.clone(), pts, Unit::RelativeToInit)
        })
        .collect::<Result<Vec<_>>>()?;
    Dataset::new(traces, dataset.cycle_scale)
}

/// Truncates every trace not listed in `keep_complete_ids` before its first
/// point below `threshold · y_init`.
///
/// Traces left with fewer than 2 points are kept and listed in
/// [`DatasetMeta::short_traces`].
pub fn censor(dataset: &Dataset, threshold: f64, keep_complete_ids: &[String]) -> Result<Dataset> {
    if !(0.0..1.0).contains(&threshold) {
        return Err(invalid(format!(
            "censoring threshold {threshold} outside [0, 1)"
        )));
    }
    let mut short = Vec::new();
    let traces = dataset
        .traces
        .iter()
        .map(|t| {
            if keep_complete_ids.contains(&t.battery_id) {
                return t.clone();
            }
            let Some(y0) = t.y_init() else {
                return t.clone();
            };
            let limit = threshold * y0;
            let keep = t
                .points()
                .iter()
                .position(|p| p.1 < limit)
                .unwrap_or(t.len());
            if keep < 2 {
                short.push(t.battery_id.clone());
            }
            Trace {
                battery_id: t.battery_id.clone(),
                points: t.points()[..keep].to_vec(),
                unit: t.unit,
            }
        })
        .collect();
    let mut out = Dataset::new(traces, dataset.cycle_scale)?;
    out.meta = dataset.meta.clone();
    out.meta.short_traces = short;
    Ok(out)
}

/// Synthetic fleet: per battery, parameters jittered multiplicatively around
/// `beta_mean` (relative standard deviations `jitter`, one per parameter or a
/// single shared value), clipped to the family's bounds, plus i.i.d.
/// `N(0, sigma²)` noise on `grid` (kilocycles).
pub fn simulate_fleet(
    beta_mean: &ParamVector<f64>,
    jitter: &[f64],
    sigma: f64,
    n_batteries: usize,
    grid: &[f64],
    seed: u64,
) -> Result<Dataset> {
    let p = beta_mean.values.len();
    if !(jitter.len() == 1 || jitter.len() == p) || jitter.iter().any(|j| !(*j >= 0.0)) {
        return Err(invalid(format!("jitter needs 1 or {p} nonnegative values")));
    }
    if !(sigma >= 0.0) {
        return Err(invalid("sigma must be nonnegative"));
    }
    if grid.is_empty() || grid.windows(2).any(|w| !(w[1] > w[0])) || grid[0] < 0.0 {
        return Err(invalid(
            "grid must be nonempty, nonnegative and strictly increasing",
        ));
    }
    let spec = ModelSpec::<f64>::new(beta_mean.family);
    spec.check(beta_mean)?;
    let mut bounds = spec.bounds().to_vec();
    let floor = if beta_mean.family.is_sigmoid() {
        let f = WIDTH_FLOOR_REL * (grid[grid.len() - 1] - grid[0]);
        bounds[4].lower = bounds[4].lower.max(f);
        Some(bounds[4].lower)
    } else {
        None
    };
    let cycle_scale = 1000.0;
    let width = n_batteries.max(1).to_string().len().max(3);
    let mut at_floor = 0;
    let mut traces = Vec::with_capacity(n_batteries);
    for i in 0..n_batteries {
        let mut rng = stream(seed, TAG_FLEET, i as u64);
        let beta: Vec<f64> = beta_mean
            .values
            .iter()
            .enumerate()
            .map(|(k, &b)| {
                let z: f64 = rng.sample(StandardNormal);
                let j = if jitter.len() == 1 {
                    jitter[0]
                } else {
                    jitter[k]
                };
                bounds[k].clamp(b * (1.0 + j * z))
            })
            .collect();
        if floor.is_some_and(|f| beta[4] <= f) {
            at_floor += 1;
        }
        let points = grid
            .iter()
            .map(|&x| {
                let z: f64 = rng.sample(StandardNormal);
                (x * cycle_scale, beta_mean.family.eval(&beta, x) + sigma * z)
            })
            .collect();
        traces.push(Trace::new(
            format!("B{:0width$}", i + 1),
            points,
            Unit::AbsoluteAh,
        )?);
    }
    let mut ds = Dataset::new(traces, cycle_scale)?;
    if at_floor * 2 > n_batteries {
        ds.meta.warnings.push(format!(
            "degenerate fleet: {at_floor} of {n_batteries} batteries have the width at its floor"
        ));
    }
    Ok(ds)
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::models::Family;

    fn load(text: &str) -> Result<Dataset> {
        read_csv(text.as_bytes(), &LoadOptions::default())
    }

    #[test]
    fn two_batteries_three_rows_each() {
        let ds = load("battery_id,cycle,capacity\nA,0,1.8\nB,0,1.7\nA,200,1.7\nA,100,1.75\nB,100,1.6\nB,200,1.5\n")
            .unwrap();
        assert_eq!(ds.len(), 2);
        assert_eq!(ds.ids(), ["A", "B"]);
        assert_eq!(ds.traces[0].cycles(), [0.0, 100.0, 200.0]);
        assert_eq!(ds.traces[1].len(), 3);
        assert_eq!(ds.traces[0].kilocycles(ds.cycle_scale), [0.0, 0.1, 0.2]);
    }

    #[test]
    fn malformed_row_names_its_line() {
        let err = load("battery_id,cycle,capacity\nA,100,abc\n").unwrap_err();
        assert!(matches!(err, Error::Parse { line: 2, .. }), "{err}");
        let err = load("battery_id,cycle,capacity\r\nA,0,1\r\nA,100\r\n").unwrap_err();
        assert!(matches!(err, Error::Parse { line: 3, .. }), "{err}");
        let err = load("battery_id,cycle,capacity\n\nA,0,1\nA,x,2\n").unwrap_err();
        assert!(matches!(err, Error::Parse { line: 4, .. }), "{err}");
    }

    #[test]
    fn crlf_and_header_only() {
        let ds = load("battery_id,cycle,capacity\r\nA,0,1.8\r\nA,5,1.7\r\n").unwrap();
        assert_eq!(ds.traces[0].capacities(), [1.8, 1.7]);
        assert!(load("battery_id,cycle,capacity\n").unwrap().is_empty());
        assert!(load("id,cycle,capacity\n").is_err());
    }

    #[test]
    fn duplicate_cycle_is_rejected() {
        let err = load("battery_id,cycle,capacity\nA,0,1.8\nA,0,1.7\n").unwrap_err();
        assert!(matches!(err, Error::DuplicateCycle { .. }));
    }

    #[test]
    fn csv_round_trip_is_exact() {
        let ds = load("battery_id,cycle,capacity\nA,0,1.8200000000000001\nA,1e3,0.1\nB,3,0.30000000000000004\n")
            .unwrap();
        let mut buf = Vec::new();
        write_csv(&ds, &mut buf).unwrap();
        let back = read_csv(buf.as_slice(), &LoadOptions::default()).unwrap();
        assert_eq!(back, ds);
    }

    #[test]
    fn normalize_divides_by_first_capacity() {
        let t = Trace::new("A", vec![(0.0, 1.82), (500.0, 1.60)], Unit::AbsoluteAh).unwrap();
        let ds = Dataset::new(vec![t], 1000.0).unwrap();
        let n = normalize(&ds).unwrap();
        let caps = n.traces[0].capacities();
        assert_eq!(caps[0], 1.0);
        assert!((caps[1] - 1.60 / 1.82).abs() < 1e-15);
        assert!((caps[1] * 1.82 - 1.60).abs() < 1e-12);
        assert!(normalize(&n).is_err());
    }

    fn relative(caps: &[f64]) -> Dataset {
        let pts = caps
            .iter()
            .enumerate()
            .map(|(i, &c)| (100.0 * i as f64, c))
            .collect();
        Dataset::new(
            vec![Trace::new("A", pts, Unit::RelativeToInit).unwrap()],
            1000.0,
        )
        .unwrap()
    }

    #[test]
    fn censor_keeps_prefix_above_threshold() {
        let ds = relative(&[1.0, 0.9, 0.85, 0.79, 0.5]);
        let c = censor(&ds, 0.8, &[]).unwrap();
        assert_eq!(c.traces[0].capacities(), [1.0, 0.9, 0.85]);
        assert_eq!(censor(&c, 0.8, &[]).unwrap(), c);
        assert_eq!(
            censor(&ds, 0.8, &["A".to_string()]).unwrap().traces,
            ds.traces
        );
        assert_eq!(censor(&ds, 0.3, &[]).unwrap().traces, ds.traces);
    }

    #[test]
    fn censor_uses_first_crossing() {
        let ds = relative(&[1.0, 0.81, 0.79, 0.82, 0.6]);
        let c = censor(&ds, 0.8, &[]).unwrap();
        assert_eq!(c.traces[0].capacities(), [1.0, 0.81]);
        let c = censor(&ds, 0.9, &[]).unwrap();
        assert_eq!(c.meta.short_traces, ["A"]);
        assert_eq!(c.traces[0].len(), 1);
    }

    #[test]
    fn noiseless_fleet_lies_on_the_curve() {
        let beta =
            ParamVector::new(Family::SigmoidShifted, vec![1.82, 0.20, 1.06, 1.72, 0.21]).unwrap();
        let grid: Vec<f64> = (0..10).map(|i| 0.3 * i as f64).collect();
        let ds = simulate_fleet(&beta, &[0.0], 0.0, 4, &grid, 1).unwrap();
        for t in &ds.traces {
            for (&(_, y), &x) in t.points().iter().zip(&grid) {
                assert_eq!(y, beta.at(x));
            }
        }
        assert_eq!(
            simulate_fleet(&beta, &[0.03], 0.005, 4, &grid, 9).unwrap(),
            simulate_fleet(&beta, &[0.03], 0.005, 4, &grid, 9).unwrap()
        );
        assert!(ds.meta.warnings.is_empty());
    }

    #[test]
    fn collapsed_widths_are_flagged() {
        let beta =
            ParamVector::new(Family::SigmoidShifted, vec![1.82, 0.20, 1.06, 1.72, 1e-9]).unwrap();
        let grid: Vec<f64> = (0..10).map(|i| 0.3 * i as f64).collect();
        let ds = simulate_fleet(&beta, &[0.0], 0.0, 5, &grid, 2).unwrap();
        assert_eq!(ds.meta.warnings.len(), 1);
    }
}
