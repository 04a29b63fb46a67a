//! Parameter updates given complete latent trajectories.

use rand::Rng;
use rand_distr::{Distribution, Gamma, StandardNormal};

use super::PriorSpec;
use crate::error::{Error, Result};
use crate::measure::{digamma_diff, ModelParams, TransitionEvent};
use crate::trajectory::{PopulationTrajectory, Timeline};

/// Complete-data summaries reused by all updates in one iteration.
#[derive(Debug, Clone)]
pub struct CompleteData {
    pub timeline: Timeline,
    /// Transition events grouped by block pair.
    pub events: Vec<Vec<TransitionEvent>>,
}

impl CompleteData {
    pub fn new(latents: &PopulationTrajectory, params: &ModelParams) -> Result<Self> {
        let structure = params.structure();
        let timeline = Timeline::of(latents, structure.n_states());
        let mut events = vec![Vec::new(); structure.pairs().len()];
        for ev in &timeline.events {
            let moves: Vec<(usize, usize)> = ev.moves.iter().map(|m| (m.from, m.to)).collect();
            let event = TransitionEvent::from_moves(structure, &ev.x_before, &moves).map_err(|e| {
                Error::InadmissibleTransition(format!("latent event at time {}: {e}", ev.time))
            })?;
            events[event.pair].push(event);
        }
        Ok(CompleteData { timeline, events })
    }

    /// `∫ [psi(rho + S(s)) - psi(rho)] ds` for one pair.
    pub fn normalized_integral(&self, params: &ModelParams, pair: usize) -> f64 {
        let rho = params.rho(pair);
        let mut total = 0.0;
        for seg in &self.timeline.segments {
            let s = params.pair_load(pair, &seg.x);
            if s > 0.0 {
                total += (seg.end - seg.start) * digamma_diff(rho, s);
            }
        }
        total
    }

    /// The terms of the complete-data log-density that involve `pair`.
    pub fn pair_log_likelihood(&self, params: &ModelParams, pair: usize) -> f64 {
        let mut value = -params.nu(pair) * self.normalized_integral(params, pair);
        if !value.is_finite() {
            return f64::NEG_INFINITY;
        }
        for ev in &self.events[pair] {
            match params.log_lambda(ev) {
                Ok(v) => value += v,
                Err(_) => return f64::NEG_INFINITY,
            }
        }
        value
    }
}

/// Per-iteration event attribution: single moves may come from the
/// erosion part of the measure, which is decided by a Bernoulli draw.
#[derive(Debug, Clone, PartialEq)]
pub struct EventCounts {
    /// Events attributed to each pair's harmonic measure.
    pub pair_events: Vec<u64>,
    /// Unit moves per edge inside events attributed to the harmonic measure.
    pub edge_moves: Vec<u64>,
}

pub fn attribute_events<R: Rng + ?Sized>(
    data: &CompleteData,
    params: &ModelParams,
    rng: &mut R,
) -> Result<EventCounts> {
    let structure = params.structure();
    let mut pair_events = vec![0u64; structure.pairs().len()];
    let mut edge_moves = vec![0u64; structure.graph().n_edges()];
    for (p, events) in data.events.iter().enumerate() {
        let edges = &structure.pair(p).edges;
        for ev in events {
            let (ln_measure, single) = params.log_measure_part(p, &ev.stays, &ev.moves)?;
            if let Some(e) = single {
                let c = params.erosion(e);
                if c > 0.0 {
                    let measure = ln_measure.exp();
                    if rng.random::<f64>() * (measure + c) >= measure {
                        continue;
                    }
                }
            }
            pair_events[p] += 1;
            for (k, &m) in ev.moves.iter().enumerate() {
                edge_moves[edges[k]] += m as u64;
            }
        }
    }
    Ok(EventCounts { pair_events, edge_moves })
}

/// Draws `lambda = nu rho` from its Gamma full conditional given `events`
/// attributed events and the normalized pair integral.
pub fn draw_lambda<R: Rng + ?Sized>(
    shape: f64,
    rate: f64,
    events: u64,
    normalized_integral: f64,
    rho: f64,
    rng: &mut R,
) -> Result<f64> {
    let shape = shape + events as f64;
    let rate = rate + normalized_integral / rho;
    let g = Gamma::new(shape, 1.0 / rate).map_err(|e| Error::Domain(format!("gamma draw: {e}")))?;
    Ok(g.sample(rng))
}

/// Draws a Dirichlet vector by normalizing independent Gamma variables.
pub fn draw_dirichlet<R: Rng + ?Sized>(weights: &[f64], rng: &mut R) -> Result<Vec<f64>> {
    if weights.len() == 1 {
        return Ok(vec![1.0]);
    }
    let mut draws = Vec::with_capacity(weights.len());
    for &w in weights {
        let g = Gamma::new(w, 1.0).map_err(|e| Error::Domain(format!("dirichlet draw: {e}")))?;
        draws.push(g.sample(rng));
    }
    let total: f64 = draws.iter().sum();
    if !(total > 0.0) {
        // all components underflowed; fall back to the largest weight
        let k = weights.iter().enumerate().max_by(|a, b| a.1.total_cmp(b.1)).map(|x| x.0).unwrap_or(0);
        return Ok((0..weights.len()).map(|j| if j == k { 1.0 } else { 0.0 }).collect());
    }
    Ok(draws.into_iter().map(|d| d / total).collect())
}

/// New `lambda` for `pair` given the latents (sets nothing).
pub fn update_lambda<R: Rng + ?Sized>(
    pair: usize,
    latents: &PopulationTrajectory,
    params: &ModelParams,
    prior: &PriorSpec,
    rng: &mut R,
) -> Result<f64> {
    let data = CompleteData::new(latents, params)?;
    let counts = attribute_events(&data, params, rng)?;
    draw_lambda(
        prior.lambda_shape[pair],
        prior.lambda_rate[pair],
        counts.pair_events[pair],
        data.normalized_integral(params, pair),
        params.rho(pair),
        rng,
    )
}

/// New destination weights for `group` given the latents.
pub fn update_alpha<R: Rng + ?Sized>(
    group: usize,
    latents: &PopulationTrajectory,
    params: &ModelParams,
    prior: &PriorSpec,
    rng: &mut R,
) -> Result<Vec<f64>> {
    let data = CompleteData::new(latents, params)?;
    let counts = attribute_events(&data, params, rng)?;
    let edges = &params.structure().groups()[group].edges;
    let w: Vec<f64> =
        edges.iter().zip(&prior.dirichlet[group]).map(|(&e, &p)| p + counts.edge_moves[e] as f64).collect();
    draw_dirichlet(&w, rng)
}

/// One random-walk Metropolis step on `ln gamma` for a free relative risk.
/// Returns the new value and whether the proposal was accepted.
pub fn gamma_step<R: Rng + ?Sized>(
    data: &CompleteData,
    params: &mut ModelParams,
    pair: usize,
    state: usize,
    step: f64,
    current_ll: f64,
    rng: &mut R,
) -> Result<(f64, bool, f64)> {
    let old = params.gamma(pair, state);
    let ln_old = old.ln();
    let z: f64 = StandardNormal.sample(rng);
    let ln_new = ln_old + step * z;
    let new = ln_new.exp();
    if !(new > 0.0 && new.is_finite()) {
        return Ok((old, false, current_ll));
    }
    params.set_gamma(pair, state, new)?;
    let proposed_ll = data.pair_log_likelihood(params, pair);
    let log_ratio = proposed_ll - current_ll - 0.5 * (ln_new * ln_new - ln_old * ln_old);
    if log_ratio >= 0.0 || rng.random::<f64>().ln() < log_ratio {
        Ok((new, true, proposed_ll))
    } else {
        params.set_gamma(pair, state, old)?;
        Ok((old, false, current_ll))
    }
}

/// Metropolis-Hastings update of one free relative risk given the latents.
pub fn update_gamma_mh<R: Rng + ?Sized>(
    pair: usize,
    state: usize,
    latents: &PopulationTrajectory,
    params: &ModelParams,
    step: f64,
    rng: &mut R,
) -> Result<(f64, bool)> {
    let data = CompleteData::new(latents, params)?;
    let mut p = params.clone();
    let ll = data.pair_log_likelihood(&p, pair);
    let (value, accepted, _) = gamma_step(&data, &mut p, pair, state, step, ll, rng)?;
    Ok((value, accepted))
}
