//! CSV and JSON outputs: trajectories, posterior draws, curves.

use std::collections::BTreeMap;
use std::io::{Read, Write};
use std::path::Path;
use std::sync::Arc;

use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};
use crate::estimators::{OccupancyCurves, SurvivalCurve};
use crate::mcmc::{LatentSnapshot, PosteriorDraws};
use crate::measure::ModelParams;
use crate::statespace::TransitionGraph;
use crate::trajectory::{PopulationTrajectory, UnitPath};

/// Floats with 17 significant digits.
pub(crate) fn fmt_float(v: f64) -> String {
    format!("{v:.16e}")
}

fn located(line: u64, msg: impl std::fmt::Display) -> Error {
    Error::Io(format!("line {line}: {msg}"))
}

fn parse_f64(field: &str, line: u64, what: &str) -> Result<f64> {
    field.trim().parse().map_err(|_| located(line, format!("{what} `{field}` is not a number")))
}

fn parse_state(field: &str, line: u64, n_states: usize) -> Result<usize> {
    match field.trim().parse::<usize>() {
        Ok(s) if s >= 1 && s <= n_states => Ok(s - 1),
        _ => Err(located(line, format!("state `{field}` is not in 1..{n_states}"))),
    }
}

fn check_header(reader: &mut csv::Reader<impl Read>, expected: &[&str]) -> Result<()> {
    let header = reader.headers()?;
    let got: Vec<&str> = header.iter().map(str::trim).collect();
    if got != expected {
        return Err(Error::Io(format!("expected header `{}`, got `{}`", expected.join(","), got.join(","))));
    }
    Ok(())
}

pub const TRAJECTORY_HEADER: [&str; 5] = ["unit_id", "time", "from_state", "to_state", "kind"];

fn trajectory_rows<W: Write>(
    w: &mut csv::Writer<W>,
    prefix: Option<&str>,
    trajectory: &PopulationTrajectory,
    ids: &[String],
) -> Result<()> {
    for (u, id) in trajectory.units.iter().zip(ids) {
        let mut state = u.initial;
        let mut row = |time: f64, from: usize, to: usize, kind: &str| {
            let mut fields: Vec<String> = prefix.map(|p| vec![p.to_string()]).unwrap_or_default();
            fields.extend([id.clone(), format!("{time}"), (from + 1).to_string(), (to + 1).to_string(), kind.into()]);
            w.write_record(&fields)
        };
        for &(t, to) in &u.jumps {
            row(t, state, to, "transition")?;
            state = to;
        }
        if let Some(c) = u.censor {
            if c > 0.0 || !u.jumps.is_empty() {
                row(c, state, state, "censor")?;
            }
        }
    }
    Ok(())
}

/// Writes one row per transition and a `censor` row (from = to) at the
/// censoring time. Units observed for zero time produce no rows.
pub fn write_trajectory<W: Write>(writer: W, trajectory: &PopulationTrajectory, ids: &[String]) -> Result<()> {
    if ids.len() != trajectory.units.len() {
        return Err(Error::InvalidTrajectory("one id per unit is required".into()));
    }
    let mut w = csv::Writer::from_writer(writer);
    w.write_record(TRAJECTORY_HEADER)?;
    trajectory_rows(&mut w, None, trajectory, ids)?;
    w.flush()?;
    Ok(())
}

pub fn write_trajectory_csv(path: impl AsRef<Path>, trajectory: &PopulationTrajectory, ids: &[String]) -> Result<()> {
    write_trajectory(std::fs::File::create(path)?, trajectory, ids)
}

/// Default unit ids `1..=n`.
pub fn default_ids(n: usize) -> Vec<String> {
    (1..=n).map(|k| k.to_string()).collect()
}

#[derive(Default)]
struct PathBuilder {
    order: Vec<String>,
    paths: BTreeMap<String, UnitPath>,
}

impl PathBuilder {
    fn push(&mut self, line: u64, fields: &[&str], graph: &TransitionGraph) -> Result<()> {
        let id = fields[0].trim().to_string();
        let time = parse_f64(fields[1], line, "time")?;
        let from = parse_state(fields[2], line, graph.n_states())?;
        let to = parse_state(fields[3], line, graph.n_states())?;
        let path = self.paths.entry(id.clone()).or_insert_with(|| {
            self.order.push(id.clone());
            UnitPath::constant(from)
        });
        if path.censor.is_some() {
            return Err(located(line, format!("unit {id} has a row after its censoring row")));
        }
        if path.final_state() != from {
            return Err(located(line, format!("unit {id} is in state {} here, not {}", path.final_state() + 1, from + 1)));
        }
        if let Some(&(last, _)) = path.jumps.last() {
            if time <= last {
                return Err(located(line, format!("unit {id}: times must increase")));
            }
        }
        match fields[4].trim() {
            "transition" => {
                if graph.edge_index(from, to).is_none() {
                    return Err(located(line, format!("no edge {} -> {}", from + 1, to + 1)));
                }
                path.jumps.push((time, to));
            }
            "censor" => {
                if from != to {
                    return Err(located(line, "censor rows need from_state = to_state"));
                }
                path.censor = Some(time);
            }
            other => return Err(located(line, format!("unknown kind `{other}`"))),
        }
        Ok(())
    }

    fn finish(self) -> (PopulationTrajectory, Vec<String>) {
        let mut paths = self.paths;
        let units = self.order.iter().map(|id| paths.remove(id).expect("every id has a path")).collect();
        (PopulationTrajectory::new(units), self.order)
    }
}

/// Reads a trajectory CSV; returns the trajectory and the unit ids in order
/// of first appearance.
pub fn read_trajectory<R: Read>(reader: R, graph: &TransitionGraph) -> Result<(PopulationTrajectory, Vec<String>)> {
    let mut r = csv::ReaderBuilder::new().has_headers(true).from_reader(reader);
    check_header(&mut r, &TRAJECTORY_HEADER)?;
    let mut builder = PathBuilder::default();
    for (k, rec) in r.records().enumerate() {
        let rec = rec?;
        let line = k as u64 + 2;
        let fields: Vec<&str> = rec.iter().collect();
        if fields.len() != 5 {
            return Err(located(line, "expected 5 fields"));
        }
        builder.push(line, &fields, graph)?;
    }
    let (t, ids) = builder.finish();
    t.validate(graph)?;
    Ok((t, ids))
}

pub fn read_trajectory_csv(path: impl AsRef<Path>, graph: &TransitionGraph) -> Result<(PopulationTrajectory, Vec<String>)> {
    let path = path.as_ref();
    let f = std::fs::File::open(path).map_err(|e| Error::Io(format!("{}: {e}", path.display())))?;
    read_trajectory(f, graph).map_err(|e| prefix_path(path, e))
}

fn prefix_path(path: &Path, e: Error) -> Error {
    match e {
        Error::Io(m) => Error::Io(format!("{}: {m}", path.display())),
        other => other,
    }
}

/// Posterior draws in long form, without the fixed parts of the model.
#[derive(Debug, Clone, Default, PartialEq)]
pub struct DrawTable {
    pub names: Vec<String>,
    pub iterations: Vec<usize>,
    pub values: Vec<Vec<f64>>,
}

impl DrawTable {
    pub fn from_draws(draws: &PosteriorDraws) -> Self {
        DrawTable { names: draws.names.clone(), iterations: draws.iterations.clone(), values: draws.values.clone() }
    }

    /// Reattaches the model template and the latent snapshots keyed by
    /// iteration.
    pub fn into_draws(
        self,
        template: &ModelParams,
        latents: Vec<(usize, PopulationTrajectory)>,
    ) -> Result<PosteriorDraws> {
        let expected = crate::mcmc::parameter_names(template.structure());
        if !self.values.is_empty() && self.names != expected {
            return Err(Error::Config(format!(
                "draws hold parameters {:?}, the configuration implies {:?}",
                self.names, expected
            )));
        }
        let mut snapshots = Vec::with_capacity(latents.len());
        for (iteration, trajectory) in latents {
            let draw = self.iterations.iter().position(|&i| i == iteration).ok_or_else(|| {
                Error::Config(format!("latent snapshot at iteration {iteration} has no matching draw"))
            })?;
            snapshots.push(LatentSnapshot { draw, trajectory: Arc::new(trajectory) });
        }
        let n = self.values.len();
        Ok(PosteriorDraws {
            template: template.clone(),
            names: expected,
            iterations: self.iterations,
            values: self.values,
            accepted: vec![Vec::new(); n],
            step_sizes: Vec::new(),
            latents: snapshots,
        })
    }
}

pub const DRAWS_HEADER: [&str; 3] = ["iteration", "parameter", "value"];

pub fn write_draws<W: Write>(writer: W, draws: &DrawTable) -> Result<()> {
    let mut w = csv::Writer::from_writer(writer);
    w.write_record(DRAWS_HEADER)?;
    for (it, row) in draws.iterations.iter().zip(&draws.values) {
        for (name, v) in draws.names.iter().zip(row) {
            w.write_record([it.to_string(), name.clone(), fmt_float(*v)])?;
        }
    }
    w.flush()?;
    Ok(())
}

pub fn write_draws_csv(path: impl AsRef<Path>, draws: &DrawTable) -> Result<()> {
    write_draws(std::fs::File::create(path)?, draws)
}

/// Reads long-form draws. Every iteration must list the same parameters in
/// the same order.
pub fn read_draws<R: Read>(reader: R) -> Result<DrawTable> {
    let mut r = csv::Reader::from_reader(reader);
    check_header(&mut r, &DRAWS_HEADER)?;
    let mut table = DrawTable::default();
    let mut current: Option<usize> = None;
    let mut row: Vec<f64> = Vec::new();
    let mut names: Vec<String> = Vec::new();
    let close = |table: &mut DrawTable, it: usize, row: Vec<f64>, names: Vec<String>, line: u64| -> Result<()> {
        if table.iterations.is_empty() {
            table.names = names;
        } else if names != table.names {
            return Err(located(line, format!("iteration {it} lists different parameters")));
        }
        table.iterations.push(it);
        table.values.push(row);
        Ok(())
    };
    let mut line = 1;
    for (k, rec) in r.records().enumerate() {
        let rec = rec?;
        line = k as u64 + 2;
        if rec.len() != 3 {
            return Err(located(line, "expected 3 fields"));
        }
        let it: usize = rec[0].trim().parse().map_err(|_| located(line, format!("iteration `{}`", &rec[0])))?;
        let value = parse_f64(&rec[2], line, "value")?;
        if current != Some(it) {
            if let Some(prev) = current {
                if it < prev {
                    return Err(located(line, "iterations must increase"));
                }
                close(&mut table, prev, std::mem::take(&mut row), std::mem::take(&mut names), line)?;
            }
            current = Some(it);
        }
        names.push(rec[1].trim().to_string());
        row.push(value);
    }
    if let Some(it) = current {
        close(&mut table, it, row, names, line)?;
    }
    Ok(table)
}

pub fn read_draws_csv(path: impl AsRef<Path>) -> Result<DrawTable> {
    let path = path.as_ref();
    let f = std::fs::File::open(path).map_err(|e| Error::Io(format!("{}: {e}", path.display())))?;
    read_draws(f).map_err(|e| prefix_path(path, e))
}

/// Latent snapshots: the trajectory schema with a leading `iteration`.
pub fn write_latents<W: Write>(writer: W, draws: &PosteriorDraws, ids: &[String]) -> Result<()> {
    let mut w = csv::Writer::from_writer(writer);
    let mut header = vec!["iteration"];
    header.extend(TRAJECTORY_HEADER);
    w.write_record(&header)?;
    for snap in &draws.latents {
        let it = draws.iterations[snap.draw].to_string();
        trajectory_rows(&mut w, Some(&it), &snap.trajectory, ids)?;
    }
    w.flush()?;
    Ok(())
}

pub fn write_latents_csv(path: impl AsRef<Path>, draws: &PosteriorDraws, ids: &[String]) -> Result<()> {
    write_latents(std::fs::File::create(path)?, draws, ids)
}

pub fn read_latents<R: Read>(reader: R, graph: &TransitionGraph) -> Result<Vec<(usize, PopulationTrajectory)>> {
    let mut r = csv::Reader::from_reader(reader);
    let mut header = vec!["iteration"];
    header.extend(TRAJECTORY_HEADER);
    check_header(&mut r, &header)?;
    let mut out = Vec::new();
    let mut current: Option<(usize, PathBuilder)> = None;
    for (k, rec) in r.records().enumerate() {
        let rec = rec?;
        let line = k as u64 + 2;
        if rec.len() != 6 {
            return Err(located(line, "expected 6 fields"));
        }
        let it: usize = rec[0].trim().parse().map_err(|_| located(line, format!("iteration `{}`", &rec[0])))?;
        match &mut current {
            Some((c, _)) if *c == it => {}
            _ => {
                if let Some((c, b)) = current.take() {
                    if it < c {
                        return Err(located(line, "iterations must increase"));
                    }
                    out.push((c, b.finish().0));
                }
                current = Some((it, PathBuilder::default()));
            }
        }
        let fields: Vec<&str> = rec.iter().skip(1).collect();
        current.as_mut().expect("set above").1.push(line, &fields, graph)?;
    }
    if let Some((c, b)) = current {
        out.push((c, b.finish().0));
    }
    for (_, t) in &out {
        t.validate(graph)?;
    }
    Ok(out)
}

pub fn read_latents_csv(path: impl AsRef<Path>, graph: &TransitionGraph) -> Result<Vec<(usize, PopulationTrajectory)>> {
    let path = path.as_ref();
    let f = std::fs::File::open(path).map_err(|e| Error::Io(format!("{}: {e}", path.display())))?;
    read_latents(f, graph).map_err(|e| prefix_path(path, e))
}

pub const CURVE_HEADER: [&str; 5] = ["time", "median", "q05", "q95", "baseline_state"];

/// Survival curve CSV. Curves without bands leave `q05`/`q95` empty and put
/// the point estimate under `median`.
pub fn write_curve<W: Write>(writer: W, curve: &SurvivalCurve) -> Result<()> {
    let mut w = csv::Writer::from_writer(writer);
    w.write_record(CURVE_HEADER)?;
    let state = curve.baseline_state.map(|s| (s + 1).to_string()).unwrap_or_default();
    for (k, &t) in curve.times.iter().enumerate() {
        let (lo, hi) = match &curve.bands {
            Some(b) => (fmt_float(b.q05[k]), fmt_float(b.q95[k])),
            None => (String::new(), String::new()),
        };
        w.write_record([format!("{t}"), fmt_float(curve.survival[k]), lo, hi, state.clone()])?;
    }
    w.flush()?;
    Ok(())
}

pub fn write_curve_csv(path: impl AsRef<Path>, curve: &SurvivalCurve) -> Result<()> {
    write_curve(std::fs::File::create(path)?, curve)
}

/// Occupancy CSV: `time,state_1,...,state_s`.
pub fn write_occupancy<W: Write>(writer: W, curves: &OccupancyCurves) -> Result<()> {
    let mut w = csv::Writer::from_writer(writer);
    let n = curves.occupancy.first().map_or(0, Vec::len);
    let mut header = vec!["time".to_string()];
    header.extend((1..=n).map(|s| format!("state_{s}")));
    w.write_record(&header)?;
    for (t, p) in curves.times.iter().zip(&curves.occupancy) {
        let mut row = vec![format!("{t}")];
        row.extend(p.iter().map(|&v| fmt_float(v)));
        w.write_record(&row)?;
    }
    w.flush()?;
    Ok(())
}

/// Per-chain sampler diagnostics.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct ChainSummary {
    pub chain: usize,
    pub seed: u64,
    pub draws: usize,
    pub acceptance: BTreeMap<String, f64>,
    pub step_sizes: BTreeMap<String, f64>,
}

impl ChainSummary {
    pub fn new(chain: usize, seed: u64, draws: &PosteriorDraws) -> Self {
        let names = draws.gamma_names();
        ChainSummary {
            chain,
            seed,
            draws: draws.n_draws(),
            acceptance: names.iter().cloned().zip(draws.acceptance_rates()).collect(),
            step_sizes: names.into_iter().zip(draws.step_sizes.iter().copied()).collect(),
        }
    }
}

pub fn write_acceptance_json(path: impl AsRef<Path>, chains: &[ChainSummary]) -> Result<()> {
    let text = serde_json::to_string_pretty(&serde_json::json!({ "chains": chains })).map_err(|e| Error::Io(e.to_string()))?;
    std::fs::write(path, text + "\n")?;
    Ok(())
}
