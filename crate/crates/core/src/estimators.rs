//! Nonparametric estimators and posterior survival summaries.

use rand::SeedableRng;
use rand_chacha::ChaCha8Rng;
use rayon::prelude::*;

use crate::error::{Error, Result};
use crate::io::PanelData;
use crate::mcmc::PosteriorDraws;
use crate::measure::ModelParams;
use crate::predictive::{continuous_hazard, Conditioning, LambdaCache};
use crate::statespace::TransitionGraph;
use crate::trajectory::{PopulationTrajectory, UnitPath};

/// How a curve behaves between grid points.
#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub enum Interpolation {
    /// Right-continuous steps (product-limit estimators).
    Step,
    /// Linear between grid points.
    Linear,
}

/// Pointwise posterior quantiles.
#[derive(Debug, Clone, PartialEq)]
pub struct Bands {
    pub q05: Vec<f64>,
    pub median: Vec<f64>,
    pub q95: Vec<f64>,
}

#[derive(Debug, Clone, PartialEq)]
pub struct SurvivalCurve {
    pub times: Vec<f64>,
    /// Point estimate; the median when bands are present.
    pub survival: Vec<f64>,
    pub bands: Option<Bands>,
    pub interpolation: Interpolation,
    pub baseline_state: Option<usize>,
}

impl SurvivalCurve {
    /// Survival at `t`, or `None` outside the grid.
    pub fn value_at(&self, t: f64) -> Option<f64> {
        interpolate(&self.times, &self.survival, self.interpolation, t)
    }

    pub fn len(&self) -> usize {
        self.times.len()
    }

    pub fn is_empty(&self) -> bool {
        self.times.is_empty()
    }

    pub fn validate(&self) -> Result<()> {
        let n = self.times.len();
        if n == 0 || self.survival.len() != n {
            return Err(Error::Domain("survival curve needs matching, non-empty columns".into()));
        }
        if self.times.windows(2).any(|w| !(w[1] > w[0])) {
            return Err(Error::Domain("survival curve times must increase".into()));
        }
        let check = |v: &[f64]| {
            v.iter().all(|s| (0.0..=1.0).contains(s)) && v.windows(2).all(|w| w[1] <= w[0])
        };
        if !check(&self.survival) {
            return Err(Error::Domain("survival values must lie in [0, 1] and not increase".into()));
        }
        if let Some(b) = &self.bands {
            if b.q05.len() != n || b.median.len() != n || b.q95.len() != n {
                return Err(Error::Domain("band columns must match the grid".into()));
            }
            if (0..n).any(|k| !(b.q05[k] <= b.median[k] && b.median[k] <= b.q95[k])) {
                return Err(Error::Domain("bands must satisfy q05 <= median <= q95".into()));
            }
        }
        Ok(())
    }
}

fn interpolate(times: &[f64], values: &[f64], mode: Interpolation, t: f64) -> Option<f64> {
    let first = *times.first()?;
    if t < first || t.is_nan() {
        return None;
    }
    let k = times.partition_point(|&s| s <= t) - 1;
    match mode {
        Interpolation::Step => Some(values[k]),
        Interpolation::Linear => {
            if k + 1 == times.len() {
                return (t == times[k]).then_some(values[k]);
            }
            let w = (t - times[k]) / (times[k + 1] - times[k]);
            Some(values[k] + w * (values[k + 1] - values[k]))
        }
    }
}

/// One unit's failure or censoring time.
#[derive(Debug, Clone, Copy, PartialEq)]
pub struct SurvivalRecord {
    pub time: f64,
    pub failed: bool,
}

/// Product-limit estimator. The curve starts at `(0, 1)` and has one
/// point per distinct failure time.
pub fn kaplan_meier(records: &[SurvivalRecord]) -> Result<SurvivalCurve> {
    if records.is_empty() {
        return Err(Error::InvalidParameter("Kaplan-Meier needs at least one record".into()));
    }
    if let Some(r) = records.iter().find(|r| !(r.time > 0.0 && r.time.is_finite())) {
        return Err(Error::InvalidParameter(format!("record times must be positive, got {}", r.time)));
    }
    let mut sorted = records.to_vec();
    sorted.sort_by(|a, b| a.time.total_cmp(&b.time));
    let mut times = vec![0.0];
    let mut survival = vec![1.0];
    let mut at_risk = sorted.len();
    let mut s = 1.0;
    let mut k = 0;
    while k < sorted.len() {
        let t = sorted[k].time;
        let mut deaths = 0;
        let mut leaving = 0;
        while k < sorted.len() && sorted[k].time == t {
            deaths += sorted[k].failed as usize;
            leaving += 1;
            k += 1;
        }
        if deaths > 0 {
            s *= 1.0 - deaths as f64 / at_risk as f64;
            times.push(t);
            survival.push(s);
        }
        at_risk -= leaving;
    }
    Ok(SurvivalCurve { times, survival, bands: None, interpolation: Interpolation::Step, baseline_state: None })
}

/// Failure/censoring records of a panel. Only the terminal record enters,
/// so appointments in between are ignored.
pub fn survival_records(panel: &PanelData) -> Vec<SurvivalRecord> {
    panel.units.iter().map(|u| SurvivalRecord { time: u.end_time, failed: u.is_death() }).collect()
}

/// State-occupancy probabilities from the product integral of the
/// Nelson-Aalen increments.
#[derive(Debug, Clone, PartialEq)]
pub struct OccupancyCurves {
    pub times: Vec<f64>,
    /// `occupancy[k][s]`: probability of state `s` at `times[k]`.
    pub occupancy: Vec<Vec<f64>>,
}

impl OccupancyCurves {
    /// Probability of not being in an absorbing state.
    pub fn survival(&self, graph: &TransitionGraph) -> SurvivalCurve {
        let live = graph.live_states();
        let survival = self.occupancy.iter().map(|p| live.iter().map(|&s| p[s]).sum::<f64>().clamp(0.0, 1.0)).collect();
        SurvivalCurve {
            times: self.times.clone(),
            survival,
            bands: None,
            interpolation: Interpolation::Step,
            baseline_state: None,
        }
    }

    pub fn at(&self, t: f64) -> Option<&[f64]> {
        if t < *self.times.first()? {
            return None;
        }
        let k = self.times.partition_point(|&s| s <= t) - 1;
        Some(&self.occupancy[k])
    }
}

/// Aalen-Johansen estimator from exactly observed transitions.
///
/// With `initial = Some(i)` the occupancy starts in state `i`; otherwise at
/// the empirical distribution of initial states. A unit is at risk for a
/// transition at `t` when it occupies the source just before `t` and its
/// censoring time is at least `t`.
pub fn aalen_johansen(
    data: &PopulationTrajectory,
    graph: &TransitionGraph,
    initial: Option<usize>,
) -> Result<OccupancyCurves> {
    if data.units.is_empty() {
        return Err(Error::InvalidParameter("Aalen-Johansen needs at least one unit".into()));
    }
    data.validate(graph)?;
    let s = graph.n_states();
    let mut p = vec![0.0; s];
    match initial {
        Some(i) => {
            graph.check_state(i)?;
            p[i] = 1.0;
        }
        None => {
            for u in &data.units {
                p[u.initial] += 1.0 / data.units.len() as f64;
            }
        }
    }
    let mut times = vec![0.0];
    let mut occupancy = vec![p.clone()];
    for ev in data.events() {
        if ev.time <= 0.0 {
            return Err(Error::Domain("transitions at time 0 have no at-risk set".into()));
        }
        let mut at_risk = vec![0u64; s];
        for u in &data.units {
            if u.censor.is_none_or(|c| c >= ev.time) {
                at_risk[u.state_before(ev.time)] += 1;
            }
        }
        let mut leaving = vec![0u64; s];
        for m in &ev.moves {
            leaving[m.from] += 1;
        }
        let old = p.clone();
        for m in &ev.moves {
            p[m.to] += old[m.from] / at_risk[m.from] as f64;
        }
        for (h, &d) in leaving.iter().enumerate() {
            if d > 0 {
                // same arithmetic as the product-limit factor
                p[h] -= old[h];
                p[h] += old[h] * (1.0 - d as f64 / at_risk[h] as f64);
            }
        }
        times.push(ev.time);
        occupancy.push(p.clone());
    }
    Ok(OccupancyCurves { times, occupancy })
}

/// Exactly observed transitions recovered from a panel. Only panels without
/// intermediate appointments qualify: transition times between appointments
/// are unknown, and filling them in (for example by carrying the last
/// observation forward) would bias the estimator.
pub fn exact_transitions(panel: &PanelData, graph: &TransitionGraph) -> Result<PopulationTrajectory> {
    let mut units = Vec::with_capacity(panel.units.len());
    for u in &panel.units {
        if u.observations.len() > 1 {
            return Err(Error::ImpossibleRecord {
                unit: u.id.clone(),
                reason: "intermittent observations do not give transition times; exact transition data are required"
                    .into(),
            });
        }
        let mut path = UnitPath::constant(u.observations[0].1);
        if u.is_death() {
            let deaths = u.death_states(graph);
            let direct: Vec<usize> =
                deaths.iter().copied().filter(|&d| graph.edge_index(path.initial, d).is_some()).collect();
            if direct.len() != 1 {
                return Err(Error::ImpossibleRecord {
                    unit: u.id.clone(),
                    reason: "the failure state is not determined by the record".into(),
                });
            }
            path.jumps.push((u.end_time, direct[0]));
        } else {
            path.censor = Some(u.end_time);
        }
        units.push(path);
    }
    Ok(PopulationTrajectory::new(units))
}

/// Options for [`posterior_survival`].
#[derive(Debug, Clone, PartialEq)]
pub struct PredictiveOptions {
    /// Simulated paths per retained draw.
    pub paths: usize,
    /// Condition on being alive at this time.
    pub at_time: Option<f64>,
    pub seed: u64,
}

impl Default for PredictiveOptions {
    fn default() -> Self {
        PredictiveOptions { paths: 200, at_time: None, seed: 1 }
    }
}

/// Equally spaced grid of `points` times on `[0, end]`.
pub fn default_grid(end: f64, points: usize) -> Vec<f64> {
    if points <= 1 || !(end > 0.0) {
        return vec![0.0];
    }
    (0..points).map(|k| end * k as f64 / (points - 1) as f64).collect()
}

/// Posterior predictive survival of a new unit starting in `baseline` at
/// time 0. For each retained latent snapshot the new unit's path is drawn
/// given that snapshot's trajectories and parameters; the fraction not yet
/// absorbed at each grid time gives one curve per draw. Returns pointwise
/// median and 5%/95% quantiles over draws.
///
/// Each draw uses its own stream of the seeded generator, so the result does
/// not depend on the number of worker threads.
pub fn posterior_survival(
    draws: &PosteriorDraws,
    baseline: usize,
    grid: &[f64],
    options: &PredictiveOptions,
) -> Result<SurvivalCurve> {
    let graph = draws.template.structure().graph();
    graph.check_state(baseline)?;
    if graph.is_absorbing(baseline) {
        return Err(Error::InvalidParameter(format!("baseline state {} is absorbing", baseline + 1)));
    }
    check_grid(grid)?;
    if options.paths == 0 {
        return Err(Error::InvalidParameter("at least one path per draw is needed".into()));
    }
    if draws.latents.is_empty() {
        return Err(Error::InvalidParameter("posterior draws carry no latent snapshots".into()));
    }
    let start = options.at_time.unwrap_or(0.0);
    if !(start >= 0.0 && start.is_finite()) {
        return Err(Error::InvalidParameter(format!("conditioning time must be finite and >= 0, got {start}")));
    }
    let horizon = grid[grid.len() - 1].max(start);
    let curves: Vec<Option<Vec<f64>>> = draws
        .latents
        .par_iter()
        .enumerate()
        .map(|(k, snap)| {
            let params = draws.params_at(snap.draw)?;
            let mut cache = LambdaCache::new();
            let cond = Conditioning::new(&snap.trajectory.units, None, &params, &mut cache)?;
            let mut rng = ChaCha8Rng::seed_from_u64(options.seed);
            rng.set_stream(k as u64);
            let mut alive = vec![0usize; grid.len()];
            let mut alive_at_start = 0usize;
            for _ in 0..options.paths {
                let path = cond.sample_unit(baseline, 0.0, horizon, &mut rng, &mut cache)?;
                let death = path.absorption_time(graph).unwrap_or(f64::INFINITY);
                if death <= start {
                    continue;
                }
                alive_at_start += 1;
                for (a, &t) in alive.iter_mut().zip(grid) {
                    if death > t {
                        *a += 1;
                    }
                }
            }
            if alive_at_start == 0 {
                return Ok(None);
            }
            Ok(Some(
                grid.iter()
                    .zip(&alive)
                    .map(|(&t, &a)| if t <= start { 1.0 } else { a as f64 / alive_at_start as f64 })
                    .collect(),
            ))
        })
        .collect::<Result<_>>()?;
    let curves: Vec<Vec<f64>> = curves.into_iter().flatten().collect();
    if curves.is_empty() {
        return Err(Error::Domain(format!("no simulated path survived to the conditioning time {start}")));
    }
    let mut q05 = Vec::with_capacity(grid.len());
    let mut median = Vec::with_capacity(grid.len());
    let mut q95 = Vec::with_capacity(grid.len());
    let mut column = vec![0.0; curves.len()];
    for g in 0..grid.len() {
        for (c, curve) in column.iter_mut().zip(&curves) {
            *c = curve[g];
        }
        column.sort_by(f64::total_cmp);
        q05.push(quantile(&column, 0.05));
        median.push(quantile(&column, 0.5));
        q95.push(quantile(&column, 0.95));
    }
    Ok(SurvivalCurve {
        times: grid.to_vec(),
        survival: median.clone(),
        bands: Some(Bands { q05, median, q95 }),
        interpolation: Interpolation::Linear,
        baseline_state: Some(baseline),
    })
}

/// Linear-interpolation quantile of sorted values.
pub fn quantile(sorted: &[f64], q: f64) -> f64 {
    if sorted.is_empty() {
        return f64::NAN;
    }
    let h = (sorted.len() - 1) as f64 * q.clamp(0.0, 1.0);
    let lo = h.floor() as usize;
    let hi = h.ceil() as usize;
    sorted[lo] + (h - lo as f64) * (sorted[hi] - sorted[lo])
}

fn check_grid(grid: &[f64]) -> Result<()> {
    if grid.is_empty() || grid[0] != 0.0 {
        return Err(Error::InvalidParameter("time grid must start at 0".into()));
    }
    if grid.windows(2).any(|w| !(w[1] > w[0])) || !grid[grid.len() - 1].is_finite() {
        return Err(Error::InvalidParameter("time grid must be finite and strictly increasing".into()));
    }
    Ok(())
}

/// Survival of a single unit from `baseline` under `params`. A lone unit
/// is a Markov chain with the one-unit hazards, and by consistency this is
/// the marginal law of any unit of a larger population.
pub fn marginal_survival(params: &ModelParams, baseline: usize, grid: &[f64]) -> Result<SurvivalCurve> {
    let graph = params.structure().graph();
    graph.check_state(baseline)?;
    check_grid(grid)?;
    let s = graph.n_states();
    let zeros = vec![0u32; s];
    let mut q = vec![0.0; s * s];
    for &(from, to) in graph.edges() {
        let h = continuous_hazard(params, from, to, &zeros)?;
        q[from * s + to] += h;
        q[from * s + from] -= h;
    }
    let live = graph.live_states();
    let mut p = vec![0.0; s];
    p[baseline] = 1.0;
    let mut survival = Vec::with_capacity(grid.len());
    let mut last = 0.0;
    for &t in grid {
        let step = matrix_exponential(&q, s, t - last);
        let mut next = vec![0.0; s];
        for i in 0..s {
            for j in 0..s {
                next[j] += p[i] * step[i * s + j];
            }
        }
        p = next;
        last = t;
        survival.push(live.iter().map(|&k| p[k]).sum::<f64>().clamp(0.0, 1.0));
    }
    // guard against rounding producing tiny increases
    for k in 1..survival.len() {
        survival[k] = survival[k].min(survival[k - 1]);
    }
    Ok(SurvivalCurve {
        times: grid.to_vec(),
        survival,
        bands: None,
        interpolation: Interpolation::Linear,
        baseline_state: Some(baseline),
    })
}

/// `exp(q t)` by scaling and squaring a Taylor series.
fn matrix_exponential(q: &[f64], n: usize, t: f64) -> Vec<f64> {
    let norm = (0..n).map(|i| (0..n).map(|j| q[i * n + j].abs()).sum::<f64>()).fold(0.0, f64::max) * t;
    let mut squarings = 0;
    while norm / 2f64.powi(squarings) > 0.25 {
        squarings += 1;
    }
    let scale = t / 2f64.powi(squarings);
    let a: Vec<f64> = q.iter().map(|v| v * scale).collect();
    let mut result = identity(n);
    let mut term = identity(n);
    for k in 1..=18 {
        term = matmul(&term, &a, n);
        term.iter_mut().for_each(|v| *v /= k as f64);
        result.iter_mut().zip(&term).for_each(|(r, v)| *r += v);
    }
    for _ in 0..squarings {
        result = matmul(&result, &result, n);
    }
    result
}

fn identity(n: usize) -> Vec<f64> {
    let mut m = vec![0.0; n * n];
    (0..n).for_each(|i| m[i * n + i] = 1.0);
    m
}

fn matmul(a: &[f64], b: &[f64], n: usize) -> Vec<f64> {
    let mut c = vec![0.0; n * n];
    for i in 0..n {
        for k in 0..n {
            let v = a[i * n + k];
            if v != 0.0 {
                for j in 0..n {
                    c[i * n + j] += v * b[k * n + j];
                }
            }
        }
    }
    c
}

/// Area under the curve on `[first grid time, horizon]`: exact for step
/// curves, trapezoidal for linear ones.
pub fn expected_survival(curve: &SurvivalCurve, horizon: f64) -> Result<f64> {
    let (Some(&first), Some(&last)) = (curve.times.first(), curve.times.last()) else {
        return Err(Error::Domain("empty survival curve".into()));
    };
    let within = match curve.interpolation {
        Interpolation::Step => horizon >= first,
        Interpolation::Linear => horizon >= first && horizon <= last,
    };
    if !within || !horizon.is_finite() {
        return Err(Error::InvalidParameter(format!(
            "horizon {horizon} lies outside the curve's grid [{first}, {last}]"
        )));
    }
    let mut area = 0.0;
    for k in 0..curve.times.len() {
        let a = curve.times[k];
        if a >= horizon {
            break;
        }
        let b = curve.times.get(k + 1).copied().unwrap_or(f64::INFINITY).min(horizon);
        area += match curve.interpolation {
            Interpolation::Step => curve.survival[k] * (b - a),
            Interpolation::Linear => {
                let sb = curve.value_at(b).unwrap_or(curve.survival[k]);
                0.5 * (curve.survival[k] + sb) * (b - a)
            }
        };
    }
    Ok(area)
}
