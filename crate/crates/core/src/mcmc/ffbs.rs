//! Uniformization-based forward filtering, backward sampling of one unit's
//! latent path given the others and its panel record.

use rand::Rng;
use rand_distr::{Distribution, Exp};

use crate::error::{Error, Result};
use crate::io::UnitRecord;
use crate::measure::ModelParams;
use crate::predictive::{Conditioning, LambdaCache};
use crate::trajectory::{PopulationTrajectory, UnitPath};

#[derive(Debug, Clone, Copy)]
enum Step {
    /// A candidate continuous jump using the rates of a segment.
    Grid(usize),
    /// One of the others' transitions.
    Atom(usize),
    /// An appointment fixing the state (index into the live list).
    Observe(usize),
}

impl Step {
    fn rank(&self) -> u8 {
        match self {
            Step::Grid(_) => 0,
            Step::Atom(_) => 1,
            Step::Observe(_) => 2,
        }
    }
}

/// Segment whose configuration holds just before `t`.
fn segment_before(cond: &Conditioning, t: f64) -> usize {
    let mut k = cond.segment_index(t);
    while k > 0 && cond.segment_bounds(k).0 >= t {
        k -= 1;
    }
    k
}

/// Draws a new latent path for unit `u` from its full conditional given the
/// other units' current paths.
///
/// `uniformization` is the multiplier `C > 1` of the dominating rate
/// `C max_i (total exit rate of i)` on each segment of the others'
/// configuration. The others' transition times enter as discrete steps with
/// the co-transition kernel.
pub fn resample_unit<R: Rng + ?Sized>(
    u: usize,
    latents: &PopulationTrajectory,
    record: &UnitRecord,
    params: &ModelParams,
    uniformization: f64,
    rng: &mut R,
    cache: &mut LambdaCache,
) -> Result<UnitPath> {
    let cond = Conditioning::new(&latents.units, Some(u), params, cache)?;
    resample_with(&cond, &latents.units[u], record, uniformization, rng, cache)
}

pub(crate) fn resample_with<R: Rng + ?Sized>(
    cond: &Conditioning,
    previous: &UnitPath,
    record: &UnitRecord,
    uniformization: f64,
    rng: &mut R,
    cache: &mut LambdaCache,
) -> Result<UnitPath> {
    if !(uniformization > 1.0) {
        return Err(Error::InvalidParameter(format!(
            "uniformization multiplier must exceed 1, got {uniformization}"
        )));
    }
    let structure = cond.params().structure().clone();
    let graph = structure.graph();
    let impossible = |reason: &str| Error::ImpossibleRecord { unit: record.id.clone(), reason: reason.into() };
    let live = graph.live_states();
    let n = live.len();
    let mut live_index = vec![usize::MAX; graph.n_states()];
    for (k, &s) in live.iter().enumerate() {
        live_index[s] = k;
    }
    let end = record.end_time;

    // Dominating rate per segment.
    let omega: Vec<f64> = (0..cond.n_segments())
        .map(|k| uniformization * live.iter().map(|&s| cond.exit_rate(k, s)).fold(0.0, f64::max))
        .collect();

    let mut steps: Vec<(f64, Step)> = Vec::new();

    // Virtual jump times: Poisson with rate omega - exit(previous state).
    let mut pieces: Vec<(f64, f64, usize)> = Vec::new();
    let mut state = previous.initial;
    let mut t = 0.0;
    for &(tj, to) in &previous.jumps {
        if tj >= end {
            break;
        }
        pieces.push((t, tj, state));
        t = tj;
        state = to;
    }
    pieces.push((t, end, state));
    for &(a, b, s) in &pieces {
        if b <= a || graph.is_absorbing(s) {
            continue;
        }
        let mut k = cond.segment_index(a);
        loop {
            let (sa, sb) = cond.segment_bounds(k);
            let lo = sa.max(a);
            let hi = sb.min(b);
            if hi > lo {
                let rate = omega[k] - cond.exit_rate(k, s);
                if rate > 0.0 {
                    let exp = Exp::new(rate).map_err(|e| Error::Domain(e.to_string()))?;
                    let mut w = lo + exp.sample(rng);
                    while w < hi {
                        steps.push((w, Step::Grid(k)));
                        w += exp.sample(rng);
                    }
                }
            }
            if sb >= b || k + 1 >= cond.n_segments() {
                break;
            }
            k += 1;
        }
    }

    // Previous continuous jumps, atoms and appointments.
    for &(tj, _) in &previous.jumps {
        if tj > 0.0 && tj < end && cond.atom_index_at(tj).is_none() {
            steps.push((tj, Step::Grid(segment_before(cond, tj))));
        }
    }
    for (k, atom) in cond.atoms().iter().enumerate() {
        if atom.time > 0.0 && atom.time < end {
            steps.push((atom.time, Step::Atom(k)));
        }
    }
    for &(to, s) in &record.observations[1..] {
        steps.push((to, Step::Observe(live_index[s])));
    }
    steps.sort_by(|a, b| a.0.total_cmp(&b.0).then(a.1.rank().cmp(&b.1.rank())));

    // Forward filter with per-step transition matrices over live states.
    let mut alphas: Vec<Vec<f64>> = Vec::with_capacity(steps.len() + 1);
    let mut first = vec![0.0; n];
    first[live_index[record.observations[0].1]] = 1.0;
    alphas.push(first);
    let mut matrices: Vec<Option<Vec<f64>>> = Vec::with_capacity(steps.len());
    for &(_, step) in &steps {
        let prev = alphas.last().expect("non-empty");
        let mut next = vec![0.0; n];
        let matrix = match step {
            Step::Grid(k) => Some(grid_matrix(cond, k, omega[k], &live, &live_index)),
            Step::Atom(k) => Some(atom_matrix(cond, k, &live, &live_index, cache)?),
            Step::Observe(s) => {
                next[s] = prev[s];
                None
            }
        };
        if let Some(m) = &matrix {
            for i in 0..n {
                if prev[i] == 0.0 {
                    continue;
                }
                for j in 0..n {
                    next[j] += prev[i] * m[i * n + j];
                }
            }
        }
        let total: f64 = next.iter().sum();
        if !(total > 0.0) || !total.is_finite() {
            return Err(impossible("the observed states have zero probability under the current parameters"));
        }
        next.iter_mut().for_each(|v| *v /= total);
        alphas.push(next);
        matrices.push(matrix);
    }

    // Terminal weights.
    let deaths = record.death_states(graph);
    let terminal: Vec<Vec<f64>> = if record.is_death() {
        let atom = cond.atom_index_at(end);
        let mut via_atom = None;
        if let Some(k) = atom {
            let mut rows = vec![vec![0.0; deaths.len()]; n];
            for (i, &s) in live.iter().enumerate() {
                let dist = cond.atom_distribution(k, s, cache)?;
                for &(to, p) in &dist.moves {
                    if let Some(d) = deaths.iter().position(|&d| d == to) {
                        rows[i][d] += p;
                    }
                }
            }
            let last = alphas.last().expect("non-empty");
            if (0..n).any(|i| last[i] * rows[i].iter().sum::<f64>() > 0.0) {
                via_atom = Some(rows);
            }
        }
        match via_atom {
            Some(rows) => rows,
            None => {
                let k = segment_before(cond, end);
                live.iter()
                    .map(|&s| {
                        deaths
                            .iter()
                            .map(|&d| graph.edge_index(s, d).map_or(0.0, |e| cond.edge_rate(k, e)))
                            .collect()
                    })
                    .collect()
            }
        }
    } else {
        vec![vec![1.0]; n]
    };

    // Backward sampling.
    let last = alphas.last().expect("non-empty");
    let weights: Vec<f64> = (0..n).map(|i| last[i] * terminal[i].iter().sum::<f64>()).collect();
    let mut current = sample_index(&weights, rng)
        .ok_or_else(|| impossible("the recorded failure cannot be reached"))?;
    let mut states = vec![0usize; steps.len() + 1];
    states[steps.len()] = current;
    for k in (0..steps.len()).rev() {
        current = match &matrices[k] {
            None => current,
            Some(m) => {
                let w: Vec<f64> = (0..n).map(|i| alphas[k][i] * m[i * n + current]).collect();
                sample_index(&w, rng).ok_or_else(|| impossible("backward pass lost all mass"))?
            }
        };
        states[k] = current;
    }

    let mut path = UnitPath::constant(live[states[0]]);
    for (k, &(t, _)) in steps.iter().enumerate() {
        if states[k + 1] != states[k] {
            path.jumps.push((t, live[states[k + 1]]));
        }
    }
    if record.is_death() {
        let row = &terminal[states[steps.len()]];
        let d = sample_index(row, rng).ok_or_else(|| impossible("no failure route"))?;
        path.jumps.push((end, deaths[d]));
    } else {
        path.censor = Some(end);
    }
    Ok(path)
}

fn grid_matrix(cond: &Conditioning, k: usize, omega: f64, live: &[usize], live_index: &[usize]) -> Vec<f64> {
    let graph = cond.params().structure().graph();
    let n = live.len();
    let mut m = vec![0.0; n * n];
    for (i, &s) in live.iter().enumerate() {
        m[i * n + i] = 1.0 - cond.exit_rate(k, s) / omega;
        for &e in graph.out_edges(s) {
            let to = graph.edges()[e].1;
            if live_index[to] != usize::MAX {
                m[i * n + live_index[to]] += cond.edge_rate(k, e) / omega;
            }
        }
    }
    m
}

fn atom_matrix(
    cond: &Conditioning,
    k: usize,
    live: &[usize],
    live_index: &[usize],
    cache: &mut LambdaCache,
) -> Result<Vec<f64>> {
    let n = live.len();
    let mut m = vec![0.0; n * n];
    for (i, &s) in live.iter().enumerate() {
        let dist = cond.atom_distribution(k, s, cache)?;
        m[i * n + i] = dist.stay;
        for &(to, p) in &dist.moves {
            if live_index[to] != usize::MAX {
                m[i * n + live_index[to]] += p;
            }
        }
    }
    Ok(m)
}

fn sample_index<R: Rng + ?Sized>(weights: &[f64], rng: &mut R) -> Option<usize> {
    let total: f64 = weights.iter().sum();
    if !(total > 0.0) || !total.is_finite() {
        return None;
    }
    let mut target = rng.random::<f64>() * total;
    let mut last = None;
    for (k, &w) in weights.iter().enumerate() {
        if w > 0.0 {
            if target < w {
                return Some(k);
            }
            target -= w;
            last = Some(k);
        }
    }
    last
}
