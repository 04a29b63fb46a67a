//! The conditional law of one additional unit given the trajectories of
//! the others.
//!
//! Between the others' transition times the new unit moves like a
//! time-inhomogeneous Markov chain with piecewise-constant hazards
//! `h_{i,i'} = alpha_{i,i'} nu [psi(rho + S + gamma_i) - psi(rho + S)] + c_{i,i'}`,
//! where `S` is the others' pair load. At each of the others' transition
//! times it may join the transition: the probabilities of staying or
//! co-moving are ratios of non-normalized rates of the joint event to the
//! rate of the others' event alone.

use std::collections::HashMap;

use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;
use rand_distr::{Distribution, Exp};
use smallvec::SmallVec;

use crate::error::{Error, Result};
use crate::measure::{digamma_diff, ModelParams, TransitionEvent};
use crate::trajectory::{PopulationTrajectory, Timeline, UnitPath};

type CacheKey = (usize, SmallVec<[u32; 4]>, SmallVec<[u32; 8]>);

/// Memo of `ln lambda` values for fixed parameters.
#[derive(Debug, Default, Clone)]
pub struct LambdaCache {
    map: HashMap<CacheKey, f64>,
}

impl LambdaCache {
    pub fn new() -> Self {
        Self::default()
    }

    /// Drop all entries; required whenever the parameters change.
    pub fn clear(&mut self) {
        self.map.clear();
    }

    pub fn len(&self) -> usize {
        self.map.len()
    }

    pub fn is_empty(&self) -> bool {
        self.map.is_empty()
    }

    pub fn log_rate(
        &mut self,
        params: &ModelParams,
        pair: usize,
        stays: &[u32],
        moves: &[u32],
    ) -> Result<f64> {
        let key: CacheKey = (pair, SmallVec::from_slice(stays), SmallVec::from_slice(moves));
        if let Some(&v) = self.map.get(&key) {
            return Ok(v);
        }
        let v = params.log_pair_rate(pair, stays, moves)?;
        self.map.insert(key, v);
        Ok(v)
    }
}

/// Continuous hazard of a new unit moving `from -> to` while the others are
/// in configuration `x`.
pub fn continuous_hazard(params: &ModelParams, from: usize, to: usize, x: &[u32]) -> Result<f64> {
    let structure = params.structure();
    let e = structure.graph().edge_index(from, to).ok_or_else(|| {
        Error::InadmissibleTransition(format!("({}, {}) is not an edge", from + 1, to + 1))
    })?;
    Ok(edge_hazard(params, e, x))
}

fn edge_hazard(params: &ModelParams, e: usize, x: &[u32]) -> f64 {
    let structure = params.structure();
    let from = structure.graph().edges()[e].0;
    let p = structure.pair_of_edge(e);
    let s = params.pair_load(p, x);
    params.alpha(e) * params.nu(p) * digamma_diff(params.rho(p) + s, params.gamma(p, from))
        + params.erosion(e)
}

/// Probabilities for the new unit at one of the others' transition times.
#[derive(Debug, Clone, PartialEq)]
pub struct AtomDistribution {
    pub stay: f64,
    /// `(destination state, probability)` for every admissible co-move.
    pub moves: Vec<(usize, f64)>,
}

impl AtomDistribution {
    pub fn total(&self) -> f64 {
        self.stay + self.moves.iter().map(|m| m.1).sum::<f64>()
    }
}

/// One of the others' transitions.
#[derive(Debug, Clone, PartialEq)]
pub struct Atom {
    pub time: f64,
    pub event: TransitionEvent,
    ln_rate: f64,
}

/// Everything needed to evaluate and sample the conditional law of a new
/// unit given the others: piecewise-constant hazards per segment of the
/// others' timeline and the atoms at their transition times.
#[derive(Debug, Clone)]
pub struct Conditioning {
    params: ModelParams,
    timeline: Timeline,
    n_edges: usize,
    n_states: usize,
    edge_rates: Vec<f64>,
    exit_rates: Vec<f64>,
    atoms: Vec<Atom>,
    /// Atom located at the end of each segment.
    atom_at_end: Vec<Option<usize>>,
}

impl Conditioning {
    /// Conditions on every unit of `units` except `exclude`.
    pub fn new(
        units: &[UnitPath],
        exclude: Option<usize>,
        params: &ModelParams,
        cache: &mut LambdaCache,
    ) -> Result<Self> {
        let structure = params.structure();
        let n_states = structure.n_states();
        let n_edges = structure.graph().n_edges();
        let timeline = Timeline::build(units, n_states, exclude);

        let mut edge_rates = Vec::with_capacity(timeline.segments.len() * n_edges);
        let mut exit_rates = vec![0.0; timeline.segments.len() * n_states];
        for (k, seg) in timeline.segments.iter().enumerate() {
            for e in 0..n_edges {
                let h = edge_hazard(params, e, &seg.x);
                edge_rates.push(h);
                exit_rates[k * n_states + structure.graph().edges()[e].0] += h;
            }
        }

        let mut atoms = Vec::with_capacity(timeline.events.len());
        for ev in &timeline.events {
            let moves: Vec<(usize, usize)> = ev.moves.iter().map(|m| (m.from, m.to)).collect();
            let event = TransitionEvent::from_moves(structure, &ev.x_before, &moves).map_err(|e| {
                Error::InadmissibleTransition(format!("others' event at time {}: {e}", ev.time))
            })?;
            let ln_rate = cache.log_rate(params, event.pair, &event.stays, &event.moves)?;
            atoms.push(Atom { time: ev.time, event, ln_rate });
        }
        let mut atom_at_end = vec![None; timeline.segments.len()];
        let mut k = 0;
        for (a, atom) in atoms.iter().enumerate() {
            while timeline.segments[k].end < atom.time {
                k += 1;
            }
            if timeline.segments[k].end != atom.time {
                return Err(Error::InvalidTrajectory(format!(
                    "transition at time {} is not after the origin",
                    atom.time
                )));
            }
            atom_at_end[k] = Some(a);
        }
        Ok(Conditioning {
            params: params.clone(),
            timeline,
            n_edges,
            n_states,
            edge_rates,
            exit_rates,
            atoms,
            atom_at_end,
        })
    }

    /// Conditions on a whole trajectory.
    pub fn from_trajectory(others: &PopulationTrajectory, params: &ModelParams) -> Result<Self> {
        Self::new(&others.units, None, params, &mut LambdaCache::new())
    }

    pub fn params(&self) -> &ModelParams {
        &self.params
    }

    pub fn timeline(&self) -> &Timeline {
        &self.timeline
    }

    pub fn atoms(&self) -> &[Atom] {
        &self.atoms
    }

    pub fn n_segments(&self) -> usize {
        self.timeline.segments.len()
    }

    /// `(start, end)` of a segment.
    pub fn segment_bounds(&self, seg: usize) -> (f64, f64) {
        let s = &self.timeline.segments[seg];
        (s.start, s.end)
    }

    /// Index of the atom at the end of `seg`, if any.
    pub fn atom_at_end(&self, seg: usize) -> Option<usize> {
        self.atom_at_end[seg]
    }

    /// The segment containing `t` (`start <= t < end`).
    pub fn segment_index(&self, t: f64) -> usize {
        let segs = &self.timeline.segments;
        segs.partition_point(|s| s.end <= t).min(segs.len() - 1)
    }

    pub fn edge_rate(&self, seg: usize, edge: usize) -> f64 {
        self.edge_rates[seg * self.n_edges + edge]
    }

    pub fn exit_rate(&self, seg: usize, state: usize) -> f64 {
        self.exit_rates[seg * self.n_states + state]
    }

    /// Index of the atom at exactly time `t`.
    pub fn atom_index_at(&self, t: f64) -> Option<usize> {
        self.atoms.binary_search_by(|a| a.time.total_cmp(&t)).ok()
    }

    /// `∫_{t1}^{t2} h_{from,to}(s) ds`.
    pub fn cumulative_hazard(&self, from: usize, to: usize, t1: f64, t2: f64) -> Result<f64> {
        let e = self.params.structure().graph().edge_index(from, to).ok_or_else(|| {
            Error::InadmissibleTransition(format!("({}, {}) is not an edge", from + 1, to + 1))
        })?;
        if t2 < t1 {
            return Err(Error::Domain(format!("cumulative hazard needs t1 <= t2, got {t1} > {t2}")));
        }
        let mut total = 0.0;
        for seg in self.segment_index(t1)..self.n_segments() {
            let (a, b) = self.segment_bounds(seg);
            if a >= t2 {
                break;
            }
            let lo = a.max(t1);
            let hi = b.min(t2);
            if hi > lo {
                total += (hi - lo) * self.edge_rate(seg, e);
            }
        }
        Ok(total)
    }

    /// Stay/co-move probabilities at atom `k` for a new unit in `state`.
    pub fn atom_distribution(
        &self,
        k: usize,
        state: usize,
        cache: &mut LambdaCache,
    ) -> Result<AtomDistribution> {
        let atom = &self.atoms[k];
        let structure = self.params.structure();
        let pair = structure.pair(atom.event.pair);
        let Some(src) = pair.sources.iter().position(|&s| s == state) else {
            return Ok(AtomDistribution { stay: 1.0, moves: Vec::new() });
        };
        let mut stays = atom.event.stays.clone();
        stays[src] += 1;
        let ln_stay = cache.log_rate(&self.params, atom.event.pair, &stays, &atom.event.moves)?;
        let stay = (ln_stay - atom.ln_rate).exp();
        let mut moves = Vec::new();
        for (idx, &e) in pair.edges.iter().enumerate() {
            let (from, to) = structure.graph().edges()[e];
            if from != state {
                continue;
            }
            let mut m = atom.event.moves.clone();
            m[idx] += 1;
            let ln_move = cache.log_rate(&self.params, atom.event.pair, &atom.event.stays, &m)?;
            moves.push((to, (ln_move - atom.ln_rate).exp()));
        }
        Ok(AtomDistribution { stay, moves })
    }

    /// Probability that a new unit in `state` at time `t1` is still there
    /// at `t2`: continuous survival times the atomic stay probabilities in
    /// `(t1, t2]`.
    pub fn stay_probability(
        &self,
        state: usize,
        t1: f64,
        t2: f64,
        cache: &mut LambdaCache,
    ) -> Result<f64> {
        if t2 < t1 {
            return Err(Error::Domain("stay probability needs t1 <= t2".into()));
        }
        let mut ln_p = 0.0;
        for seg in self.segment_index(t1)..self.n_segments() {
            let (a, b) = self.segment_bounds(seg);
            if a >= t2 {
                break;
            }
            let lo = a.max(t1);
            let hi = b.min(t2);
            if hi > lo {
                ln_p -= (hi - lo) * self.exit_rate(seg, state);
            }
            if b > t1 && b <= t2 {
                if let Some(k) = self.atom_at_end[seg] {
                    ln_p += self.atom_distribution(k, state, cache)?.stay.ln();
                }
            }
        }
        Ok(ln_p.exp())
    }

    /// Simulates the new unit from `state` at `start` until absorption or
    /// `horizon`.
    pub fn sample_unit<R: Rng + ?Sized>(
        &self,
        state: usize,
        start: f64,
        horizon: f64,
        rng: &mut R,
        cache: &mut LambdaCache,
    ) -> Result<UnitPath> {
        let structure = self.params.structure();
        let graph = structure.graph();
        graph.check_state(state)?;
        if graph.is_absorbing(state) {
            return Err(Error::InvalidParameter(format!(
                "initial state {} is absorbing",
                state + 1
            )));
        }
        let mut path = UnitPath::constant(state);
        let mut current = state;
        let mut t = start;
        let mut seg = self.segment_index(t);
        loop {
            if graph.is_absorbing(current) {
                return Ok(path);
            }
            let (_, seg_end) = self.segment_bounds(seg);
            let end = seg_end.min(horizon);
            let rate = self.exit_rate(seg, current);
            if rate > 0.0 {
                let w = Exp::new(rate).map_err(|e| Error::Domain(e.to_string()))?.sample(rng);
                if t + w < end {
                    t += w;
                    let mut target = rng.random::<f64>() * rate;
                    let out = graph.out_edges(current);
                    let mut pick = out[out.len() - 1];
                    for &e in out {
                        let r = self.edge_rate(seg, e);
                        if target < r {
                            pick = e;
                            break;
                        }
                        target -= r;
                    }
                    current = graph.edges()[pick].1;
                    path.jumps.push((t, current));
                    continue;
                }
            }
            if end >= horizon {
                path.censor = Some(horizon);
                return Ok(path);
            }
            if end.is_infinite() {
                return Err(Error::Domain(format!(
                    "state {} has zero exit rate; the unit would never be absorbed",
                    current + 1
                )));
            }
            t = end;
            if let Some(k) = self.atom_at_end[seg] {
                let dist = self.atom_distribution(k, current, cache)?;
                let mut u = rng.random::<f64>();
                if u >= dist.stay {
                    u -= dist.stay;
                    let mut to = dist.moves.last().map(|m| m.0).unwrap_or(current);
                    for &(s, p) in &dist.moves {
                        if u < p {
                            to = s;
                            break;
                        }
                        u -= p;
                    }
                    if to != current {
                        current = to;
                        path.jumps.push((t, current));
                    }
                }
            }
            seg += 1;
        }
    }
}

/// Cumulative hazard of `from -> to` over `[t1, t2]` given the others.
pub fn cumulative_hazard(
    from: usize,
    to: usize,
    t1: f64,
    t2: f64,
    others: &PopulationTrajectory,
    params: &ModelParams,
) -> Result<f64> {
    Conditioning::from_trajectory(others, params)?.cumulative_hazard(from, to, t1, t2)
}

/// Stay/co-move distribution of a new unit in `state` at the others'
/// transition time `t`.
pub fn atomic_transition_distribution(
    t: f64,
    state: usize,
    others: &PopulationTrajectory,
    params: &ModelParams,
) -> Result<AtomDistribution> {
    let cond = Conditioning::from_trajectory(others, params)?;
    let k = cond
        .atom_index_at(t)
        .ok_or_else(|| Error::Domain(format!("{t} is not a transition time of the others")))?;
    cond.atom_distribution(k, state, &mut LambdaCache::new())
}

/// Probability that a new unit in `state` at `t` stays there through `t + s`.
pub fn stay_probability(
    state: usize,
    t: f64,
    s: f64,
    others: &PopulationTrajectory,
    params: &ModelParams,
) -> Result<f64> {
    let cond = Conditioning::from_trajectory(others, params)?;
    cond.stay_probability(state, t, t + s, &mut LambdaCache::new())
}

/// Draws the path of one new unit starting in `initial` at time 0, given
/// the others, until absorption or `horizon`.
pub fn sample_conditional_unit(
    others: &PopulationTrajectory,
    initial: usize,
    params: &ModelParams,
    horizon: f64,
    seed: u64,
) -> Result<UnitPath> {
    let cond = Conditioning::from_trajectory(others, params)?;
    let mut rng = ChaCha8Rng::seed_from_u64(seed);
    cond.sample_unit(initial, 0.0, horizon, &mut rng, &mut LambdaCache::new())
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
    fn lone_unit_hazard_is_one() {
        let m = survival();
        assert!((continuous_hazard(&m, 0, 1, &[0, 0]).unwrap() - 1.0).abs() < 1e-14);
        assert!(continuous_hazard(&m, 1, 0, &[0, 0]).is_err());
    }

    #[test]
    fn atom_sums_to_one() {
        let m = survival();
        let others = PopulationTrajectory::new(vec![
            UnitPath { initial: 0, jumps: vec![(1.0, 1)], censor: None },
            UnitPath { initial: 0, jumps: vec![(2.0, 1)], censor: None },
        ]);
        let d = atomic_transition_distribution(1.0, 0, &others, &m).unwrap();
        assert!((d.total() - 1.0).abs() < 1e-14);
        // stay = (Y(t) + rho) / (Y(t-) + rho) = 2 / 3
        assert!((d.stay - 2.0 / 3.0).abs() < 1e-14);
        assert!(atomic_transition_distribution(1.5, 0, &others, &m).is_err());
    }

    #[test]
    fn lone_unit_stays_exponentially() {
        let m = survival();
        let p = stay_probability(0, 0.0, 1.3, &PopulationTrajectory::default(), &m).unwrap();
        assert!((p - (-1.3f64).exp()).abs() < 1e-14);
    }
}
