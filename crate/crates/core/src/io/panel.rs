//! Intermittently observed panel data.

use std::collections::HashMap;
use std::io::{Read, Write};
use std::path::Path;

use serde::Deserialize;

use crate::error::{Error, Result};
use crate::statespace::TransitionGraph;
use crate::trajectory::PopulationTrajectory;

/// How a unit's record ends.
#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub enum Terminal {
    /// Failure at the end time; `None` means some absorbing state.
    Death { state: Option<usize> },
    /// Alive and under observation up to the end time.
    Censored,
}

/// One unit of panel data: states at appointment times plus the terminal
/// failure or censoring time.
#[derive(Debug, Clone, PartialEq)]
pub struct UnitRecord {
    pub id: String,
    /// `(time, live state)` in strictly increasing time; the first is at 0.
    pub observations: Vec<(f64, usize)>,
    pub end_time: f64,
    pub terminal: Terminal,
}

impl UnitRecord {
    /// 0 for an observed failure, 1 for censoring.
    pub fn delta(&self) -> u8 {
        match self.terminal {
            Terminal::Death { .. } => 0,
            Terminal::Censored => 1,
        }
    }

    pub fn is_death(&self) -> bool {
        matches!(self.terminal, Terminal::Death { .. })
    }

    /// Absorbing states compatible with the terminal record.
    pub fn death_states(&self, graph: &TransitionGraph) -> Vec<usize> {
        match self.terminal {
            Terminal::Death { state: Some(s) } => vec![s],
            Terminal::Death { state: None } => graph.absorbing_states(),
            Terminal::Censored => Vec::new(),
        }
    }

    pub fn validate(&self, graph: &TransitionGraph) -> Result<()> {
        let bad = |reason: String| Error::ImpossibleRecord { unit: self.id.clone(), reason };
        let Some(&(t0, _)) = self.observations.first() else {
            return Err(bad("no observations".into()));
        };
        if t0 != 0.0 {
            return Err(bad(format!("first observation is at {t0}, expected time 0")));
        }
        let mut prev = f64::NEG_INFINITY;
        for &(t, s) in &self.observations {
            graph.check_state(s)?;
            if !(t > prev) || !t.is_finite() {
                return Err(bad(format!("observation times must strictly increase (at {t})")));
            }
            if graph.is_absorbing(s) {
                return Err(bad(format!("absorbing state {} observed at appointment {t}", s + 1)));
            }
            prev = t;
        }
        if !self.end_time.is_finite() {
            return Err(bad("end time must be finite".into()));
        }
        match self.terminal {
            Terminal::Death { state } => {
                if !(self.end_time > prev) {
                    return Err(bad(format!(
                        "failure time {} is not after the last appointment {prev}",
                        self.end_time
                    )));
                }
                if let Some(s) = state {
                    graph.check_state(s)?;
                    if !graph.is_absorbing(s) {
                        return Err(bad(format!("failure into live state {}", s + 1)));
                    }
                }
                let last = self.observations.last().unwrap().1;
                if !self.death_states(graph).iter().any(|&d| graph.shortest_live_path(last, d).is_some()) {
                    return Err(bad(format!("no path from state {} to failure", last + 1)));
                }
            }
            Terminal::Censored => {
                if self.end_time < prev {
                    return Err(bad(format!(
                        "censoring time {} precedes the last appointment {prev}",
                        self.end_time
                    )));
                }
            }
        }
        for w in self.observations.windows(2) {
            if graph.shortest_live_path(w[0].1, w[1].1).is_none() {
                return Err(bad(format!(
                    "no path from state {} to state {}",
                    w[0].1 + 1,
                    w[1].1 + 1
                )));
            }
        }
        Ok(())
    }
}

#[derive(Debug, Clone, PartialEq, Default)]
pub struct PanelData {
    pub units: Vec<UnitRecord>,
}

impl PanelData {
    pub fn validate(&self, graph: &TransitionGraph) -> Result<()> {
        if self.units.is_empty() {
            return Err(Error::InvalidPanel("no units".into()));
        }
        self.units.iter().try_for_each(|u| u.validate(graph))
    }

    pub fn n_units(&self) -> usize {
        self.units.len()
    }

    /// Latest end time over all units.
    pub fn max_time(&self) -> f64 {
        self.units.iter().map(|u| u.end_time).fold(0.0, f64::max)
    }

    /// Observes a trajectory at `0, every, 2 every, ...` with exact failure
    /// times. Units must be absorbed or censored.
    pub fn from_trajectory(
        trajectory: &PopulationTrajectory,
        graph: &TransitionGraph,
        every: f64,
    ) -> Result<PanelData> {
        if !(every > 0.0) {
            return Err(Error::InvalidParameter(format!("observation spacing must be positive, got {every}")));
        }
        let mut units = Vec::with_capacity(trajectory.n_units());
        for (u, path) in trajectory.units.iter().enumerate() {
            let (end_time, terminal) = match (path.absorption_time(graph), path.censor) {
                (Some(t), _) => (t, Terminal::Death { state: Some(path.final_state()) }),
                (None, Some(c)) => (c, Terminal::Censored),
                (None, None) => {
                    return Err(Error::InvalidTrajectory(format!(
                        "unit {u} is neither absorbed nor censored"
                    )))
                }
            };
            let mut observations = Vec::new();
            let mut k = 0u64;
            loop {
                let t = k as f64 * every;
                if t > end_time || (t == end_time && terminal != Terminal::Censored) {
                    break;
                }
                observations.push((t, path.state_at(t)));
                k += 1;
            }
            units.push(UnitRecord { id: (u + 1).to_string(), observations, end_time, terminal });
        }
        Ok(PanelData { units })
    }
}

#[derive(Debug, Deserialize)]
struct PanelRow {
    unit_id: String,
    time: f64,
    state: String,
    event: String,
}

fn parse_state(field: &str, graph: &TransitionGraph) -> std::result::Result<Option<usize>, String> {
    let field = field.trim();
    if field == "-" || field.is_empty() {
        return Ok(None);
    }
    let s: usize = field.parse().map_err(|_| format!("state '{field}' is not an integer or '-'"))?;
    if s == 0 || s > graph.n_states() {
        return Err(format!("state {s} is outside 1..{}", graph.n_states()));
    }
    Ok(Some(s - 1))
}

/// Reads panel data with columns `unit_id,time,state,event`, where
/// `event` is `obs`, `death` or `censor` and states are 1-based (`-` for
/// an unknown absorbing state on a death row).
pub fn read_panel_csv(path: impl AsRef<Path>, graph: &TransitionGraph) -> Result<PanelData> {
    let path = path.as_ref();
    let file = std::fs::File::open(path)
        .map_err(|e| Error::Io(format!("cannot open {}: {e}", path.display())))?;
    read_panel(file, graph)
}

pub fn read_panel<R: Read>(reader: R, graph: &TransitionGraph) -> Result<PanelData> {
    let mut rdr = csv::ReaderBuilder::new().trim(csv::Trim::All).from_reader(reader);
    let mut order: Vec<String> = Vec::new();
    let mut building: HashMap<String, (Vec<(f64, usize)>, Option<(f64, Terminal)>)> = HashMap::new();
    let headers = rdr.headers().map_err(|e| Error::InvalidPanel(e.to_string()))?.clone();
    let mut record = csv::StringRecord::new();
    while rdr.read_record(&mut record).map_err(|e| Error::InvalidPanel(e.to_string()))? {
        let line = record.position().map_or(0, |p| p.line());
        let row: PanelRow = record
            .deserialize(Some(&headers))
            .map_err(|e| Error::InvalidPanel(format!("line {line}: {e}")))?;
        let entry = building.entry(row.unit_id.clone()).or_insert_with(|| {
            order.push(row.unit_id.clone());
            (Vec::new(), None)
        });
        let at = |reason: String| {
            Error::InvalidPanel(format!("line {line} (unit {}, time {}): {reason}", row.unit_id, row.time))
        };
        if !row.time.is_finite() || row.time < 0.0 {
            return Err(at("time must be finite and non-negative".into()));
        }
        if entry.1.is_some() {
            return Err(at("row after the terminal row".into()));
        }
        let last = entry.0.last().map(|o| o.0);
        if let Some(last) = last {
            if row.time < last {
                return Err(at("rows are not sorted by time".into()));
            }
        }
        let state = parse_state(&row.state, graph).map_err(at)?;
        match row.event.trim() {
            "obs" => {
                let s = state.ok_or_else(|| at("observation without a state".into()))?;
                if graph.is_absorbing(s) {
                    return Err(at(format!("absorbing state {} in an observation row", s + 1)));
                }
                if last == Some(row.time) {
                    return Err(at("duplicate time".into()));
                }
                entry.0.push((row.time, s));
            }
            "death" => {
                if let Some(s) = state {
                    if !graph.is_absorbing(s) {
                        return Err(at(format!("death row with live state {}", s + 1)));
                    }
                }
                if last == Some(row.time) {
                    return Err(at("death at the time of an appointment".into()));
                }
                entry.1 = Some((row.time, Terminal::Death { state }));
            }
            "censor" => {
                if let Some(s) = state {
                    if graph.is_absorbing(s) {
                        return Err(at(format!("censor row with absorbing state {}", s + 1)));
                    }
                    match entry.0.last() {
                        Some(&(t, prev)) if t == row.time => {
                            if prev != s {
                                return Err(at("censor state disagrees with the appointment".into()));
                            }
                        }
                        _ => entry.0.push((row.time, s)),
                    }
                }
                entry.1 = Some((row.time, Terminal::Censored));
            }
            other => return Err(at(format!("unknown event '{other}' (expected obs, death or censor)"))),
        }
    }
    let mut units = Vec::with_capacity(order.len());
    for id in order {
        let (observations, terminal) = building.remove(&id).expect("every unit was inserted");
        let (end_time, terminal) = terminal
            .ok_or_else(|| Error::InvalidPanel(format!("unit {id} has no death or censor row")))?;
        let record = UnitRecord { id, observations, end_time, terminal };
        record.validate(graph)?;
        units.push(record);
    }
    if units.is_empty() {
        return Err(Error::InvalidPanel("no rows".into()));
    }
    Ok(PanelData { units })
}

pub fn write_panel_csv(path: impl AsRef<Path>, panel: &PanelData) -> Result<()> {
    let file = std::fs::File::create(path.as_ref())?;
    write_panel(file, panel)
}

pub fn write_panel<W: Write>(writer: W, panel: &PanelData) -> Result<()> {
    let mut w = csv::Writer::from_writer(writer);
    w.write_record(["unit_id", "time", "state", "event"])?;
    for u in &panel.units {
        for &(t, s) in &u.observations {
            w.write_record([u.id.as_str(), &fmt_time(t), &(s + 1).to_string(), "obs"])?;
        }
        let (state, event) = match u.terminal {
            Terminal::Death { state } => (state.map_or("-".to_string(), |s| (s + 1).to_string()), "death"),
            Terminal::Censored => ("-".to_string(), "censor"),
        };
        w.write_record([u.id.as_str(), &fmt_time(u.end_time), &state, event])?;
    }
    w.flush()?;
    Ok(())
}

/// Shortest representation that reads back to the same value.
pub(crate) fn fmt_time(t: f64) -> String {
    format!("{t}")
}

#[derive(Debug, Deserialize)]
struct CavRow {
    #[serde(rename = "PTNUM")]
    ptnum: String,
    years: f64,
    state: u32,
}

/// Converts the heart-transplant CAV panel layout (columns `PTNUM`,
/// `years`, `state`, others ignored; state 4 is death) into panel data.
/// Records not ending in death are censored at their last appointment.
/// Exact duplicate rows are merged.
pub fn read_cav_csv(path: impl AsRef<Path>, graph: &TransitionGraph) -> Result<PanelData> {
    let path = path.as_ref();
    let file = std::fs::File::open(path)
        .map_err(|e| Error::Io(format!("cannot open {}: {e}", path.display())))?;
    let mut rdr = csv::ReaderBuilder::new().trim(csv::Trim::All).from_reader(file);
    let mut rows: Vec<(String, f64, u32)> = Vec::new();
    for (k, row) in rdr.deserialize::<CavRow>().enumerate() {
        let row = row.map_err(|e| Error::InvalidPanel(format!("record {}: {e}", k + 1)))?;
        if !(1..=4).contains(&row.state) {
            return Err(Error::InvalidPanel(format!("record {}: state {} outside 1..4", k + 1, row.state)));
        }
        rows.push((row.ptnum.trim_matches('"').to_string(), row.years, row.state));
    }
    let mut out = Vec::new();
    let mut last_id: Option<String> = None;
    for (id, years, state) in rows {
        if last_id.as_deref() != Some(id.as_str()) {
            if last_id.is_some() {
                close_cav_unit(&mut out);
            }
            last_id = Some(id.clone());
        }
        out.push((id, years, state));
    }
    if last_id.is_some() {
        close_cav_unit(&mut out);
    }
    let mut csv_text = String::from("unit_id,time,state,event\n");
    let mut prev: Option<(String, f64, u32)> = None;
    for (id, t, s) in out {
        if prev.as_ref() == Some(&(id.clone(), t, s)) {
            continue;
        }
        let event = match s {
            4 => "death",
            0 => "censor",
            _ => "obs",
        };
        let state = if s == 0 { "-".to_string() } else { s.to_string() };
        csv_text.push_str(&format!("{id},{t},{state},{event}\n"));
        prev = Some((id, t, s));
    }
    read_panel(csv_text.as_bytes(), graph)
}

/// Appends a censor marker (state 0) when the unit did not die.
fn close_cav_unit(rows: &mut Vec<(String, f64, u32)>) {
    let (id, t, s) = rows.last().cloned().expect("unit has rows");
    if s != 4 {
        rows.push((id, t, 0));
    }
}
