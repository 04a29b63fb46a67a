//! Exact event-by-event simulation of a population.

use std::collections::HashMap;

use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;
use rand_distr::{Distribution, Exp};

use super::tilted::{TiltedSampler, DEFAULT_TILTED_RESOLUTION};
use super::{PopulationTrajectory, UnitPath};
use crate::error::{Error, Result};
use crate::measure::ModelParams;

/// Simulates `initial_states.len()` units from time 0 up to `horizon`
/// (`f64::INFINITY` runs until every unit is absorbed). Units still alive
/// at a finite horizon are censored there.
pub fn simulate_population(
    initial_states: &[usize],
    params: &ModelParams,
    horizon: f64,
    seed: u64,
) -> Result<PopulationTrajectory> {
    let mut rng = ChaCha8Rng::seed_from_u64(seed);
    simulate_population_with_rng(initial_states, params, horizon, &mut rng)
}

pub fn simulate_population_with_rng<R: Rng + ?Sized>(
    initial_states: &[usize],
    params: &ModelParams,
    horizon: f64,
    rng: &mut R,
) -> Result<PopulationTrajectory> {
    let structure = params.structure().clone();
    let graph = structure.graph();
    let n_states = graph.n_states();
    if !(horizon >= 0.0) {
        return Err(Error::InvalidParameter(format!("horizon must be >= 0, got {horizon}")));
    }
    for &s in initial_states {
        graph.check_state(s)?;
        if graph.is_absorbing(s) {
            return Err(Error::InvalidParameter(format!(
                "initial state {} is absorbing",
                s + 1
            )));
        }
    }

    let mut units: Vec<UnitPath> = initial_states.iter().map(|&s| UnitPath::constant(s)).collect();
    let mut members: Vec<Vec<usize>> = vec![Vec::new(); n_states];
    for (u, &s) in initial_states.iter().enumerate() {
        members[s].push(u);
    }
    let mut x: Vec<u32> = members.iter().map(|m| m.len() as u32).collect();
    let n_pairs = structure.pairs().len();
    let mut samplers: HashMap<(usize, u64), TiltedSampler> = HashMap::new();
    let mut rates = vec![0.0; n_pairs + graph.n_edges()];
    let mut t = 0.0;

    loop {
        for p in 0..n_pairs {
            let s = params.pair_load(p, &x);
            rates[p] = params.nu(p) * crate::measure::digamma_diff(params.rho(p), s);
        }
        for (e, &(from, _)) in graph.edges().iter().enumerate() {
            rates[n_pairs + e] = params.erosion(e) * x[from] as f64;
        }
        let zeta: f64 = rates.iter().sum();
        if !zeta.is_finite() {
            return Err(Error::InvalidParameter("non-finite event rate".into()));
        }
        if zeta <= 0.0 {
            break;
        }
        let wait = Exp::new(zeta).map_err(|e| Error::Domain(e.to_string()))?.sample(rng);
        if t + wait >= horizon {
            break;
        }
        t += wait;

        let mut target = rng.random::<f64>() * zeta;
        let mut component = rates.len() - 1;
        for (k, &r) in rates.iter().enumerate() {
            if target < r {
                component = k;
                break;
            }
            target -= r;
        }
        while rates[component] == 0.0 {
            component -= 1;
        }

        let mut moved: Vec<(usize, usize)> = Vec::new(); // (unit, edge)
        if component < n_pairs {
            let p = component;
            let pair = structure.pair(p);
            let s = params.pair_load(p, &x);
            let key = (p, s.to_bits());
            if !samplers.contains_key(&key) {
                samplers.insert(key, TiltedSampler::new(s, params.rho(p), DEFAULT_TILTED_RESOLUTION)?);
            }
            let sampler = &samplers[&key];
            let candidates: Vec<(usize, f64)> = pair
                .sources
                .iter()
                .zip(params.pair_gammas(p))
                .flat_map(|(&l, &g)| members[l].iter().map(move |&u| (u, g)))
                .collect();
            let movers = loop {
                let prob = sampler.sample(rng);
                if prob < 1.0 {
                    break choose_movers(&candidates, prob.ln(), rng);
                }
            };
            for u in movers {
                let from = units[u].final_state();
                let group = structure
                    .group_index(from, p)
                    .expect("every pair source has a destination group");
                let edges = &structure.groups()[group].edges;
                let mut target = rng.random::<f64>();
                let mut pick = edges[edges.len() - 1];
                for &e in edges {
                    let w = params.alpha(e);
                    if target < w {
                        pick = e;
                        break;
                    }
                    target -= w;
                }
                if params.alpha(pick) == 0.0 {
                    pick = *edges.iter().rev().find(|&&e| params.alpha(e) > 0.0).expect("weights sum to 1");
                }
                moved.push((u, pick));
            }
        } else {
            let e = component - n_pairs;
            let from = graph.edges()[e].0;
            let k = rng.random_range(0..members[from].len());
            moved.push((members[from][k], e));
        }

        for (u, e) in moved {
            let (from, to) = graph.edges()[e];
            let pos = members[from].iter().position(|&v| v == u).expect("unit is a member");
            members[from].swap_remove(pos);
            members[to].push(u);
            x[from] -= 1;
            x[to] += 1;
            units[u].jumps.push((t, to));
        }
    }

    if horizon.is_finite() {
        for path in &mut units {
            if !graph.is_absorbing(path.final_state()) {
                path.censor = Some(horizon);
            }
        }
    }
    Ok(PopulationTrajectory { units })
}

/// Picks the moving units given the stay probability `exp(ln_p)`,
/// conditioned on at least one move. Each candidate `(unit, gamma)` stays
/// with probability `p^gamma`. The first mover is drawn from its exact
/// conditional law; the remaining candidates then move independently.
fn choose_movers<R: Rng + ?Sized>(candidates: &[(usize, f64)], ln_p: f64, rng: &mut R) -> Vec<usize> {
    let mut suffix = vec![0.0; candidates.len() + 1];
    for k in (0..candidates.len()).rev() {
        suffix[k] = suffix[k + 1] + candidates[k].1;
    }
    let mut movers = Vec::new();
    let mut found = false;
    for (k, &(u, g)) in candidates.iter().enumerate() {
        let move_prob = -(g * ln_p).exp_m1();
        let prob = if found {
            move_prob
        } else {
            // P(k moves | none before k moved, some unit from k on moves)
            let any = -(suffix[k] * ln_p).exp_m1();
            if any <= 0.0 {
                1.0
            } else {
                move_prob / any
            }
        };
        if rng.random::<f64>() < prob {
            movers.push(u);
            found = true;
        }
    }
    if movers.is_empty() {
        // Only reachable through rounding in the last candidate.
        movers.push(candidates[candidates.len() - 1].0);
    }
    movers
}
