//! Population trajectories, exact simulation and the joint log-density.
//!
//! A [`PopulationTrajectory`] stores one piecewise-constant path per unit.
//! Jumps of different units at exactly the same time form one simultaneous
//! transition. A unit with censor time `C` is at risk on `[0, C)` only and
//! has no jumps at or after `C`.

mod density;
mod simulate;
mod tilted;

use crate::error::{Error, Result};
use crate::statespace::TransitionGraph;

pub use density::{
    integrate_zeta_component, log_density, log_density_detailed, Timeline, TimelineEvent,
    TimelineSegment,
};
pub use simulate::{simulate_population, simulate_population_with_rng};
pub use tilted::{sample_tilted_p, TiltedSampler, DEFAULT_TILTED_RESOLUTION};

/// The path of one unit: an initial state, timed jumps and an optional
/// right-censoring time.
#[derive(Debug, Clone, PartialEq)]
pub struct UnitPath {
    pub initial: usize,
    /// `(time, new state)` in strictly increasing time order.
    pub jumps: Vec<(f64, usize)>,
    pub censor: Option<f64>,
}

impl UnitPath {
    pub fn constant(state: usize) -> Self {
        UnitPath { initial: state, jumps: Vec::new(), censor: None }
    }

    /// State at time `t` (paths are right-continuous).
    pub fn state_at(&self, t: f64) -> usize {
        let mut state = self.initial;
        for &(time, to) in &self.jumps {
            if time <= t {
                state = to;
            } else {
                break;
            }
        }
        state
    }

    /// State just before time `t`.
    pub fn state_before(&self, t: f64) -> usize {
        let mut state = self.initial;
        for &(time, to) in &self.jumps {
            if time < t {
                state = to;
            } else {
                break;
            }
        }
        state
    }

    pub fn final_state(&self) -> usize {
        self.jumps.last().map_or(self.initial, |&(_, s)| s)
    }

    /// Whether the unit is under observation at time `t`.
    pub fn observed_at(&self, t: f64) -> bool {
        self.censor.is_none_or(|c| t < c)
    }

    /// Time of the first jump, if any.
    pub fn first_jump(&self) -> Option<(f64, usize)> {
        self.jumps.first().copied()
    }

    /// Time at which the unit entered an absorbing state.
    pub fn absorption_time(&self, graph: &TransitionGraph) -> Option<f64> {
        self.jumps.iter().find(|&&(_, s)| graph.is_absorbing(s)).map(|&(t, _)| t)
    }

    /// Checks edges, time order, flatlining and censoring.
    pub fn validate(&self, graph: &TransitionGraph) -> Result<()> {
        graph.check_state(self.initial)?;
        let mut state = self.initial;
        let mut last = 0.0;
        for &(t, to) in &self.jumps {
            graph.check_state(to)?;
            if !(t > last) || !t.is_finite() {
                return Err(Error::InvalidTrajectory(format!(
                    "jump times must be positive, finite and strictly increasing (got {t} after {last})"
                )));
            }
            if graph.edge_index(state, to).is_none() {
                return Err(Error::InadmissibleTransition(format!(
                    "move {} -> {} at time {t} is not an edge",
                    state + 1,
                    to + 1
                )));
            }
            if let Some(c) = self.censor {
                if t >= c {
                    return Err(Error::InvalidTrajectory(format!(
                        "jump at {t} at or after censor time {c}"
                    )));
                }
            }
            state = to;
            last = t;
        }
        if let Some(c) = self.censor {
            if !(c >= 0.0) {
                return Err(Error::InvalidTrajectory(format!("censor time {c} is negative")));
            }
        }
        Ok(())
    }
}

/// One unit's move inside a simultaneous transition.
#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub struct Move {
    pub unit: usize,
    pub from: usize,
    pub to: usize,
}

/// All moves happening at one time.
#[derive(Debug, Clone, PartialEq)]
pub struct EventGroup {
    pub time: f64,
    pub moves: Vec<Move>,
}

/// Paths for a population of units.
#[derive(Debug, Clone, PartialEq, Default)]
pub struct PopulationTrajectory {
    pub units: Vec<UnitPath>,
}

impl PopulationTrajectory {
    pub fn new(units: Vec<UnitPath>) -> Self {
        PopulationTrajectory { units }
    }

    /// Builds a trajectory from an event list: `(time, [(unit, from, to)])`.
    pub fn from_events(
        initial: &[usize],
        events: &[(f64, Vec<(usize, usize, usize)>)],
        censor: &[Option<f64>],
    ) -> Result<Self> {
        if censor.len() != initial.len() {
            return Err(Error::InvalidTrajectory("censor list length differs from unit count".into()));
        }
        let mut units: Vec<UnitPath> = initial
            .iter()
            .zip(censor)
            .map(|(&s, &c)| UnitPath { initial: s, jumps: Vec::new(), censor: c })
            .collect();
        let mut last = 0.0;
        for (t, moves) in events {
            if !(*t > last) {
                return Err(Error::InvalidTrajectory("event times must strictly increase".into()));
            }
            last = *t;
            for &(u, from, to) in moves {
                let unit = units.get_mut(u).ok_or_else(|| {
                    Error::InvalidTrajectory(format!("event references unknown unit {u}"))
                })?;
                if unit.final_state() != from {
                    return Err(Error::InvalidTrajectory(format!(
                        "unit {u} is in state {} at time {t}, not {}",
                        unit.final_state() + 1,
                        from + 1
                    )));
                }
                unit.jumps.push((*t, to));
            }
        }
        Ok(PopulationTrajectory { units })
    }

    pub fn n_units(&self) -> usize {
        self.units.len()
    }

    pub fn initial_states(&self) -> Vec<usize> {
        self.units.iter().map(|u| u.initial).collect()
    }

    /// Jumps grouped by exact time equality, in time order.
    pub fn events(&self) -> Vec<EventGroup> {
        let mut all: Vec<(f64, Move)> = Vec::new();
        for (u, path) in self.units.iter().enumerate() {
            let mut state = path.initial;
            for &(t, to) in &path.jumps {
                all.push((t, Move { unit: u, from: state, to }));
                state = to;
            }
        }
        all.sort_by(|a, b| a.0.total_cmp(&b.0).then(a.1.unit.cmp(&b.1.unit)));
        let mut groups: Vec<EventGroup> = Vec::new();
        for (t, m) in all {
            match groups.last_mut() {
                Some(g) if g.time == t => g.moves.push(m),
                _ => groups.push(EventGroup { time: t, moves: vec![m] }),
            }
        }
        groups
    }

    pub fn validate(&self, graph: &TransitionGraph) -> Result<()> {
        for (u, path) in self.units.iter().enumerate() {
            path.validate(graph).map_err(|e| match e {
                Error::InvalidTrajectory(msg) => Error::InvalidTrajectory(format!("unit {u}: {msg}")),
                Error::InadmissibleTransition(msg) => {
                    Error::InadmissibleTransition(format!("unit {u}: {msg}"))
                }
                other => other,
            })?;
        }
        Ok(())
    }

    /// Truncates each unit's path at its censor time; `f64::INFINITY`
    /// leaves a unit untouched. An existing earlier censor time is kept.
    pub fn apply_censoring(&self, censor: &[f64]) -> Result<PopulationTrajectory> {
        if censor.len() != self.units.len() {
            return Err(Error::InvalidTrajectory("one censor time per unit is required".into()));
        }
        let units = self
            .units
            .iter()
            .zip(censor)
            .map(|(path, &c)| {
                if c.is_infinite() {
                    return path.clone();
                }
                let c = path.censor.map_or(c, |old| old.min(c));
                UnitPath {
                    initial: path.initial,
                    jumps: path.jumps.iter().copied().filter(|&(t, _)| t < c).collect(),
                    censor: Some(c),
                }
            })
            .collect();
        Ok(PopulationTrajectory { units })
    }

    /// A relabelled copy: unit `k` of the result is unit `perm[k]` here.
    pub fn permuted(&self, perm: &[usize]) -> PopulationTrajectory {
        PopulationTrajectory { units: perm.iter().map(|&k| self.units[k].clone()).collect() }
    }
}
