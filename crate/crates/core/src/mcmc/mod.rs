//! Posterior inference from panel data: Gibbs sweeps over latent unit
//! paths, conjugate updates of rates and destination weights, and
//! Metropolis-Hastings updates of relative risks.

mod ffbs;
mod init;
mod updates;

use std::sync::Arc;

use rand::SeedableRng;
use rand_chacha::ChaCha8Rng;
use serde::{Deserialize, Serialize};

pub use ffbs::resample_unit;
pub use init::init_latent;
pub use updates::{
    attribute_events, draw_dirichlet, draw_lambda, gamma_step, update_alpha, update_gamma_mh,
    update_lambda, CompleteData, EventCounts,
};

use crate::error::{Error, Result};
use crate::io::PanelData;
use crate::measure::ModelParams;
use crate::predictive::{Conditioning, LambdaCache};
use crate::statespace::Structure;
use crate::trajectory::PopulationTrajectory;

/// Priors: Gamma on `lambda = nu rho` per pair, Dirichlet on each
/// destination group, standard normal on each free `ln gamma`.
#[derive(Debug, Clone, PartialEq)]
pub struct PriorSpec {
    pub lambda_shape: Vec<f64>,
    pub lambda_rate: Vec<f64>,
    /// Aligned with `Structure::groups()[g].edges`.
    pub dirichlet: Vec<Vec<f64>>,
}

impl PriorSpec {
    /// Gamma(1, 1) rates and flat Dirichlet weights.
    pub fn default_for(structure: &Structure) -> Self {
        let n = structure.pairs().len();
        PriorSpec {
            lambda_shape: vec![1.0; n],
            lambda_rate: vec![1.0; n],
            dirichlet: structure.groups().iter().map(|g| vec![1.0; g.edges.len()]).collect(),
        }
    }

    pub fn validate(&self, structure: &Structure) -> Result<()> {
        let n = structure.pairs().len();
        if self.lambda_shape.len() != n || self.lambda_rate.len() != n {
            return Err(Error::Config(format!("expected {n} Gamma prior entries")));
        }
        if self.lambda_shape.iter().chain(&self.lambda_rate).any(|&v| !(v > 0.0 && v.is_finite())) {
            return Err(Error::Config("Gamma hyperparameters must be positive".into()));
        }
        if self.dirichlet.len() != structure.groups().len() {
            return Err(Error::Config("one Dirichlet weight vector per destination group".into()));
        }
        for (w, g) in self.dirichlet.iter().zip(structure.groups()) {
            if w.len() != g.edges.len() || w.iter().any(|&v| !(v > 0.0 && v.is_finite())) {
                return Err(Error::Config(format!(
                    "Dirichlet weights for state {} must be {} positive numbers",
                    g.source + 1,
                    g.edges.len()
                )));
            }
        }
        Ok(())
    }
}

/// Sampler settings.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields, default)]
pub struct McmcConfig {
    pub iterations: usize,
    pub burn_in: usize,
    /// Latent paths are resampled every `latent_period` iterations.
    pub latent_period: usize,
    /// Random-walk scale on `ln gamma`.
    pub step: f64,
    /// Tune the step before burn-in ends.
    pub adapt: bool,
    /// Multiplier of the dominating rate.
    pub uniformization: f64,
    pub seed: u64,
    /// Maximum number of retained latent snapshots.
    pub latent_snapshots: usize,
}

impl Default for McmcConfig {
    fn default() -> Self {
        McmcConfig {
            iterations: 1000,
            burn_in: 200,
            latent_period: 1,
            step: 0.1,
            adapt: true,
            uniformization: 2.0,
            seed: 1,
            latent_snapshots: 100,
        }
    }
}

impl McmcConfig {
    pub fn validate(&self) -> Result<()> {
        if self.iterations <= self.burn_in {
            return Err(Error::Config(format!(
                "iterations ({}) must exceed burn-in ({})",
                self.iterations, self.burn_in
            )));
        }
        if self.latent_period == 0 {
            return Err(Error::Config("latent period must be at least 1".into()));
        }
        if !(self.uniformization > 1.0) {
            return Err(Error::Config("uniformization multiplier must exceed 1".into()));
        }
        if !(self.step >= 0.0) {
            return Err(Error::Config("step must be non-negative".into()));
        }
        Ok(())
    }
}

/// What the sampler conditions on.
#[derive(Debug, Clone)]
pub enum Observations {
    /// Intermittent observations; latent paths are imputed.
    Panel(PanelData),
    /// Fully observed trajectories; no latent resampling.
    Complete(PopulationTrajectory),
}

/// Latent trajectories retained at one draw.
#[derive(Debug, Clone)]
pub struct LatentSnapshot {
    pub draw: usize,
    pub trajectory: Arc<PopulationTrajectory>,
}

/// Retained draws of one chain.
#[derive(Debug, Clone)]
pub struct PosteriorDraws {
    /// Fixed parts (structure, shapes, erosion) of every draw.
    pub template: ModelParams,
    pub names: Vec<String>,
    pub iterations: Vec<usize>,
    pub values: Vec<Vec<f64>>,
    /// Acceptance indicator per free relative risk, per retained draw.
    pub accepted: Vec<Vec<bool>>,
    /// Step sizes after adaptation, per free relative risk.
    pub step_sizes: Vec<f64>,
    pub latents: Vec<LatentSnapshot>,
}

impl PosteriorDraws {
    pub fn n_draws(&self) -> usize {
        self.values.len()
    }

    /// Parameters of retained draw `k`.
    pub fn params_at(&self, k: usize) -> Result<ModelParams> {
        decode_params(&self.template, &self.values[k])
    }

    pub fn column(&self, name: &str) -> Option<Vec<f64>> {
        let j = self.names.iter().position(|n| n == name)?;
        Some(self.values.iter().map(|v| v[j]).collect())
    }

    pub fn mean(&self, name: &str) -> Option<f64> {
        let c = self.column(name)?;
        if c.is_empty() {
            return None;
        }
        Some(c.iter().sum::<f64>() / c.len() as f64)
    }

    /// Names of the free relative risks, in acceptance order.
    pub fn gamma_names(&self) -> Vec<String> {
        self.names.iter().filter(|n| n.starts_with("gamma[")).cloned().collect()
    }

    /// Post-burn-in acceptance rate per free relative risk.
    pub fn acceptance_rates(&self) -> Vec<f64> {
        let k = self.step_sizes.len();
        (0..k)
            .map(|j| {
                if self.accepted.is_empty() {
                    return 0.0;
                }
                self.accepted.iter().filter(|a| a[j]).count() as f64 / self.accepted.len() as f64
            })
            .collect()
    }
}

/// Parameter names in draw order: `nu[j,j']` per pair, `gamma[l,j']` per
/// free relative risk, `alpha[l,m]` per edge of every group with more than
/// one destination. Indices are 1-based.
pub fn parameter_names(structure: &Structure) -> Vec<String> {
    let mut names: Vec<String> =
        (0..structure.pairs().len()).map(|p| format!("nu[{}]", structure.pair_name(p))).collect();
    for (p, l) in structure.free_gammas() {
        names.push(format!("gamma[{},{}]", l + 1, structure.pair(p).to_block + 1));
    }
    for g in structure.groups() {
        if g.edges.len() > 1 {
            for &e in &g.edges {
                let (a, b) = structure.graph().edges()[e];
                names.push(format!("alpha[{},{}]", a + 1, b + 1));
            }
        }
    }
    names
}

pub fn encode_params(params: &ModelParams) -> Vec<f64> {
    let s = params.structure();
    let mut v: Vec<f64> = (0..s.pairs().len()).map(|p| params.nu(p)).collect();
    for (p, l) in s.free_gammas() {
        v.push(params.gamma(p, l));
    }
    for g in s.groups() {
        if g.edges.len() > 1 {
            v.extend(g.edges.iter().map(|&e| params.alpha(e)));
        }
    }
    v
}

pub fn decode_params(template: &ModelParams, values: &[f64]) -> Result<ModelParams> {
    let s = template.structure().clone();
    let names = parameter_names(&s);
    if values.len() != names.len() {
        return Err(Error::InvalidParameter(format!(
            "expected {} parameter values, got {}",
            names.len(),
            values.len()
        )));
    }
    let mut m = template.clone();
    let mut k = 0;
    for p in 0..s.pairs().len() {
        m.set_nu(p, values[k])?;
        k += 1;
    }
    for (p, l) in s.free_gammas() {
        m.set_gamma(p, l, values[k])?;
        k += 1;
    }
    for (gi, g) in s.groups().iter().enumerate() {
        if g.edges.len() > 1 {
            m.set_alpha_group(gi, &values[k..k + g.edges.len()])?;
            k += g.edges.len();
        }
    }
    Ok(m)
}

/// Starting parameters: prior-mean rates, unit relative risks and
/// Dirichlet-mean destination weights; shapes and erosion from `template`.
pub fn initial_params(template: &ModelParams, prior: &PriorSpec) -> Result<ModelParams> {
    let s = template.structure().clone();
    let mut m = template.clone();
    for p in 0..s.pairs().len() {
        m.set_nu(p, prior.lambda_shape[p] / prior.lambda_rate[p] / m.rho(p))?;
    }
    for (p, l) in s.free_gammas() {
        m.set_gamma(p, l, 1.0)?;
    }
    for (g, w) in prior.dirichlet.iter().enumerate() {
        let total: f64 = w.iter().sum();
        let mean: Vec<f64> = w.iter().map(|v| v / total).collect();
        m.set_alpha_group(g, &mean)?;
    }
    Ok(m)
}

/// Checks that a resampled path honours its record.
fn check_path(path: &crate::trajectory::UnitPath, record: &crate::io::UnitRecord, structure: &Structure) -> Result<()> {
    let graph = structure.graph();
    let bad = |reason: String| Error::ImpossibleRecord { unit: record.id.clone(), reason };
    for &(t, s) in &record.observations {
        if path.state_at(t) != s {
            return Err(bad(format!("resampled path misses the observation at {t}")));
        }
    }
    match record.is_death() {
        true => {
            if path.absorption_time(graph) != Some(record.end_time) {
                return Err(bad("resampled path does not fail at the recorded time".into()));
            }
        }
        false => {
            if path.censor != Some(record.end_time) || graph.is_absorbing(path.final_state()) {
                return Err(bad("resampled path is not alive at censoring".into()));
            }
        }
    }
    path.validate(graph)
}

/// Runs one chain. Per iteration: resample every latent path when the
/// iteration is a multiple of the latent period (panel data only), then
/// update each free relative risk, each pair rate and each destination
/// group. Deterministic given `config.seed`.
pub fn run_chain(
    observations: &Observations,
    template: &ModelParams,
    prior: &PriorSpec,
    config: &McmcConfig,
) -> Result<PosteriorDraws> {
    run_chain_with_progress(observations, template, prior, config, |_| {})
}

pub fn run_chain_with_progress(
    observations: &Observations,
    template: &ModelParams,
    prior: &PriorSpec,
    config: &McmcConfig,
    mut progress: impl FnMut(usize),
) -> Result<PosteriorDraws> {
    config.validate()?;
    let structure = template.structure().clone();
    prior.validate(&structure)?;
    let graph = structure.graph();
    let mut rng = ChaCha8Rng::seed_from_u64(config.seed);
    let mut params = initial_params(template, prior)?;

    let mut latents = match observations {
        Observations::Panel(panel) => init_latent(panel, graph)?,
        Observations::Complete(t) => {
            t.validate(graph)?;
            t.clone()
        }
    };
    let mut latent_arc = Arc::new(latents.clone());
    let free = structure.free_gammas();
    let mut steps = vec![config.step; free.len()];
    let mut window_accepts = vec![0usize; free.len()];
    let n_draws = config.iterations - config.burn_in;
    let keep_every = n_draws.div_ceil(config.latent_snapshots.max(1)).max(1);

    let mut draws = PosteriorDraws {
        template: template.clone(),
        names: parameter_names(&structure),
        iterations: Vec::with_capacity(n_draws),
        values: Vec::with_capacity(n_draws),
        accepted: Vec::with_capacity(n_draws),
        step_sizes: Vec::new(),
        latents: Vec::new(),
    };
    let mut cache = LambdaCache::new();

    for it in 0..config.iterations {
        if let Observations::Panel(panel) = observations {
            if it % config.latent_period == 0 {
                cache.clear();
                for (u, record) in panel.units.iter().enumerate() {
                    let cond = Conditioning::new(&latents.units, Some(u), &params, &mut cache)?;
                    let path = ffbs::resample_with(
                        &cond,
                        &latents.units[u],
                        record,
                        config.uniformization,
                        &mut rng,
                        &mut cache,
                    )?;
                    check_path(&path, record, &structure)?;
                    latents.units[u] = path;
                }
                latent_arc = Arc::new(latents.clone());
            }
        }

        let data = CompleteData::new(&latents, &params)?;
        let mut accepted = Vec::with_capacity(free.len());
        let mut lls: Vec<Option<f64>> = vec![None; structure.pairs().len()];
        for (k, &(p, l)) in free.iter().enumerate() {
            let ll = match lls[p] {
                Some(v) => v,
                None => data.pair_log_likelihood(&params, p),
            };
            let (_, acc, new_ll) = gamma_step(&data, &mut params, p, l, steps[k], ll, &mut rng)?;
            lls[p] = Some(new_ll);
            accepted.push(acc);
            window_accepts[k] += usize::from(acc);
        }
        if config.adapt && it < config.burn_in && (it + 1) % 50 == 0 {
            for k in 0..free.len() {
                let rate = window_accepts[k] as f64 / 50.0;
                if rate < 0.2 {
                    steps[k] *= 0.5;
                } else if rate > 0.4 {
                    steps[k] *= 2.0;
                }
                window_accepts[k] = 0;
            }
        }

        let counts = attribute_events(&data, &params, &mut rng)?;
        for p in 0..structure.pairs().len() {
            let lambda = draw_lambda(
                prior.lambda_shape[p],
                prior.lambda_rate[p],
                counts.pair_events[p],
                data.normalized_integral(&params, p),
                params.rho(p),
                &mut rng,
            )?;
            params.set_nu(p, lambda / params.rho(p))?;
        }
        for (g, group) in structure.groups().iter().enumerate() {
            if group.edges.len() < 2 {
                continue;
            }
            let w: Vec<f64> = group
                .edges
                .iter()
                .zip(&prior.dirichlet[g])
                .map(|(&e, &p)| p + counts.edge_moves[e] as f64)
                .collect();
            let alpha = draw_dirichlet(&w, &mut rng)?;
            params.set_alpha_group(g, &alpha)?;
        }

        if it >= config.burn_in {
            let d = draws.values.len();
            if d % keep_every == 0 {
                draws.latents.push(LatentSnapshot { draw: d, trajectory: latent_arc.clone() });
            }
            draws.iterations.push(it);
            draws.values.push(encode_params(&params));
            draws.accepted.push(accepted);
        }
        progress(it);
    }
    draws.step_sizes = steps;
    Ok(draws)
}
