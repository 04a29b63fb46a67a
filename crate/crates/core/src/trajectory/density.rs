//! Configuration timelines and the joint log-density of a trajectory.

use super::{Move, PopulationTrajectory, UnitPath};
use crate::error::{Error, Result};
use crate::measure::{ModelParams, TransitionEvent};

/// A maximal interval on which the at-risk configuration is constant.
#[derive(Debug, Clone, PartialEq)]
pub struct TimelineSegment {
    pub start: f64,
    /// `f64::INFINITY` for the final segment.
    pub end: f64,
    pub x: Vec<u32>,
}

/// A simultaneous transition together with the at-risk configuration just
/// before it.
#[derive(Debug, Clone, PartialEq)]
pub struct TimelineEvent {
    pub time: f64,
    pub x_before: Vec<u32>,
    pub moves: Vec<Move>,
}

/// The piecewise-constant configuration path of a population.
#[derive(Debug, Clone, PartialEq)]
pub struct Timeline {
    pub segments: Vec<TimelineSegment>,
    pub events: Vec<TimelineEvent>,
}

enum Item {
    Censor { state: usize },
    Jump(Move),
}

impl Timeline {
    /// Builds the timeline of every unit except `exclude`.
    pub fn build(units: &[UnitPath], n_states: usize, exclude: Option<usize>) -> Timeline {
        let mut x = vec![0u32; n_states];
        let mut items: Vec<(f64, Item)> = Vec::new();
        for (u, path) in units.iter().enumerate() {
            if Some(u) == exclude {
                continue;
            }
            x[path.initial] += 1;
            let mut state = path.initial;
            for &(t, to) in &path.jumps {
                items.push((t, Item::Jump(Move { unit: u, from: state, to })));
                state = to;
            }
            if let Some(c) = path.censor {
                items.push((c, Item::Censor { state: path.state_before(c) }));
            }
        }
        // Removals at a time precede jumps at that time.
        items.sort_by(|a, b| {
            a.0.total_cmp(&b.0).then_with(|| {
                let rank = |i: &Item| match i {
                    Item::Censor { .. } => 0,
                    Item::Jump(m) => 1 + m.unit,
                };
                rank(&a.1).cmp(&rank(&b.1))
            })
        });

        let mut segments = Vec::new();
        let mut events = Vec::new();
        let mut prev = 0.0;
        let mut i = 0;
        while i < items.len() {
            let t = items[i].0;
            if t > prev {
                segments.push(TimelineSegment { start: prev, end: t, x: x.clone() });
                prev = t;
            }
            let mut moves = Vec::new();
            while i < items.len() && items[i].0 == t {
                match &items[i].1 {
                    Item::Censor { state } => x[*state] -= 1,
                    Item::Jump(m) => moves.push(*m),
                }
                i += 1;
            }
            if !moves.is_empty() {
                events.push(TimelineEvent { time: t, x_before: x.clone(), moves: moves.clone() });
                for m in &moves {
                    x[m.from] -= 1;
                    x[m.to] += 1;
                }
            }
        }
        segments.push(TimelineSegment { start: prev, end: f64::INFINITY, x });
        Timeline { segments, events }
    }

    pub fn of(trajectory: &PopulationTrajectory, n_states: usize) -> Timeline {
        Timeline::build(&trajectory.units, n_states, None)
    }
}

/// Joint log-density of a trajectory, with a diagnostic when it is zero.
///
/// Equals `-∫ zeta(Y(s)) ds + sum_events ln lambda(event)`, where the
/// integral runs over the at-risk configuration so that censoring is
/// accounted for.
pub fn log_density_detailed(trajectory: &PopulationTrajectory, params: &ModelParams) -> Result<f64> {
    let structure = params.structure();
    trajectory.validate(structure.graph())?;
    let timeline = Timeline::of(trajectory, structure.n_states());
    let mut value = 0.0;
    for seg in &timeline.segments {
        let x = crate::statespace::ConfigurationVector(seg.x.clone());
        let zeta = params.characteristic_index(&x);
        if zeta == 0.0 {
            continue;
        }
        if seg.end.is_infinite() {
            return Err(Error::InvalidTrajectory(
                "units remain at risk forever: censor them or let them absorb".into(),
            ));
        }
        value -= (seg.end - seg.start) * zeta;
    }
    for ev in &timeline.events {
        let moves: Vec<(usize, usize)> = ev.moves.iter().map(|m| (m.from, m.to)).collect();
        let event = TransitionEvent::from_moves(structure, &ev.x_before, &moves).map_err(|e| {
            Error::InadmissibleTransition(format!("event at time {}: {e}", ev.time))
        })?;
        value += params.log_lambda(&event)?;
    }
    Ok(value)
}

/// Joint log-density; `-inf` for impossible trajectories.
pub fn log_density(trajectory: &PopulationTrajectory, params: &ModelParams) -> f64 {
    log_density_detailed(trajectory, params).unwrap_or(f64::NEG_INFINITY)
}

/// `∫ zeta_pair(Y(s)) ds` over the trajectory; with `normalized` the rate
/// `nu` is divided out, leaving `∫ [psi(rho + S(s)) - psi(rho)] ds`.
pub fn integrate_zeta_component(
    trajectory: &PopulationTrajectory,
    params: &ModelParams,
    pair: usize,
    normalized: bool,
) -> f64 {
    let timeline = Timeline::of(trajectory, params.structure().n_states());
    integrate_pair(&timeline, params, pair, normalized)
}

pub(crate) fn integrate_pair(
    timeline: &Timeline,
    params: &ModelParams,
    pair: usize,
    normalized: bool,
) -> f64 {
    let rho = params.rho(pair);
    let mut total = 0.0;
    for seg in &timeline.segments {
        let s = params.pair_load(pair, &seg.x);
        if s == 0.0 {
            continue;
        }
        total += (seg.end - seg.start) * crate::measure::digamma_diff(rho, s);
    }
    if normalized {
        total
    } else {
        total * params.nu(pair)
    }
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::statespace::{BuiltinGraph, Partition, Structure, TransitionGraph};
    use std::sync::Arc;

    fn survival() -> ModelParams {
        let g = TransitionGraph::builtin(BuiltinGraph::Survival).unwrap();
        ModelParams::new(Arc::new(Structure::new(g, Partition::degenerate(2)).unwrap()), 1.0)
            .unwrap()
    }

    #[test]
    fn single_death_is_exponential_density() {
        let m = survival();
        let t = PopulationTrajectory::new(vec![UnitPath {
            initial: 0,
            jumps: vec![(1.7, 1)],
            censor: None,
        }]);
        assert!((log_density(&t, &m) + 1.7).abs() < 1e-14);
    }

    #[test]
    fn non_edge_gives_sentinel() {
        let m = survival();
        let t = PopulationTrajectory::new(vec![UnitPath {
            initial: 1,
            jumps: vec![(1.0, 0)],
            censor: None,
        }]);
        assert_eq!(log_density(&t, &m), f64::NEG_INFINITY);
        assert!(log_density_detailed(&t, &m).is_err());
    }

    #[test]
    fn censoring_removes_units_from_configuration() {
        // three alive units; one censored at 1, one dies at 2, one censored at 3
        let units = vec![
            UnitPath { initial: 0, jumps: vec![], censor: Some(1.0) },
            UnitPath { initial: 0, jumps: vec![(2.0, 1)], censor: None },
            UnitPath { initial: 0, jumps: vec![], censor: Some(3.0) },
        ];
        let tl = Timeline::build(&units, 2, None);
        let counts: Vec<u32> = tl.segments.iter().map(|s| s.x[0]).collect();
        assert_eq!(counts, vec![3, 2, 1, 0]);
        assert_eq!(tl.events[0].x_before, vec![2, 0]);
    }

    #[test]
    fn rectangle_integral() {
        let m = survival();
        let t = PopulationTrajectory::new(vec![
            UnitPath { initial: 0, jumps: vec![], censor: Some(2.0) },
            UnitPath { initial: 0, jumps: vec![], censor: Some(2.0) },
        ]);
        let v = integrate_zeta_component(&t, &m, 0, true);
        assert!((v - 2.0 * 1.5).abs() < 1e-14);
    }
}
