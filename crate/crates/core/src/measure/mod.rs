//! The composable harmonic measure: characteristic index, non-normalized
//! transition rates and transition probabilities.
//!
//! For every ordered block pair `(j, j')` with cross edges the measure is a
//! harmonic measure `nu p^(rho-1) (1-p)^(-1) dp` on a shared stay
//! probability `p`. A unit in source state `l` stays with probability
//! `p^gamma_l` and otherwise moves into block `j'`, picking the destination
//! edge with the multinomial weights `alpha`. Optional erosion constants
//! add single-unit moves along individual edges.

mod integral;
mod quadrature;
pub mod special;

use std::sync::Arc;

pub use integral::{
    digamma_series, log_integral, log_integral_routed, normalize_movers, polygamma_series,
    IntegralRoute,
};
pub use quadrature::{log_integral_quadrature, quadrature_oracle};
pub use special::{digamma, digamma_diff, hurwitz_zeta, ln_beta};

use crate::error::{Error, Result};
use crate::statespace::{ConfigurationVector, Structure};

/// All parameters of the composable harmonic family.
#[derive(Debug, Clone, PartialEq)]
pub struct ModelParams {
    structure: Arc<Structure>,
    /// Rate per block pair.
    nu: Vec<f64>,
    /// Shape per block pair.
    rho: Vec<f64>,
    /// Relative log-risk per pair, aligned with the pair's sources.
    gamma: Vec<Vec<f64>>,
    /// Destination weight per edge.
    alpha: Vec<f64>,
    /// Erosion constant per edge.
    erosion: Vec<f64>,
}

impl ModelParams {
    /// Unit rates, unit relative risks, uniform destination weights, no
    /// erosion and a shared shape `rho`.
    pub fn new(structure: Arc<Structure>, rho: f64) -> Result<Self> {
        check_positive("rho", rho)?;
        let pairs = structure.pairs().len();
        let gamma = structure.pairs().iter().map(|p| vec![1.0; p.sources.len()]).collect();
        let mut alpha = vec![0.0; structure.graph().n_edges()];
        for group in structure.groups() {
            for &e in &group.edges {
                alpha[e] = 1.0 / group.edges.len() as f64;
            }
        }
        let erosion = vec![0.0; structure.graph().n_edges()];
        Ok(ModelParams { nu: vec![1.0; pairs], rho: vec![rho; pairs], gamma, alpha, erosion, structure })
    }

    pub fn structure(&self) -> &Arc<Structure> {
        &self.structure
    }

    pub fn nu(&self, pair: usize) -> f64 {
        self.nu[pair]
    }

    pub fn rho(&self, pair: usize) -> f64 {
        self.rho[pair]
    }

    /// `lambda = nu * rho`, the rate on the scale used by the Gamma prior.
    pub fn lambda(&self, pair: usize) -> f64 {
        self.nu[pair] * self.rho[pair]
    }

    /// Relative log-risk of `state` in `pair`; zero when the state has no
    /// edge in the pair (its units never move there).
    pub fn gamma(&self, pair: usize, state: usize) -> f64 {
        let p = self.structure.pair(pair);
        match p.sources.iter().position(|&s| s == state) {
            Some(idx) => self.gamma[pair][idx],
            None => 0.0,
        }
    }

    /// Relative log-risks of `pair`, aligned with its sources.
    pub fn pair_gammas(&self, pair: usize) -> &[f64] {
        &self.gamma[pair]
    }

    pub fn alpha(&self, edge: usize) -> f64 {
        self.alpha[edge]
    }

    pub fn erosion(&self, edge: usize) -> f64 {
        self.erosion[edge]
    }

    pub fn set_nu(&mut self, pair: usize, value: f64) -> Result<()> {
        check_positive("nu", value)?;
        self.nu[pair] = value;
        Ok(())
    }

    pub fn set_rho(&mut self, pair: usize, value: f64) -> Result<()> {
        check_positive("rho", value)?;
        self.rho[pair] = value;
        Ok(())
    }

    pub fn set_gamma(&mut self, pair: usize, state: usize, value: f64) -> Result<()> {
        check_positive("gamma", value)?;
        let p = self.structure.pair(pair);
        let idx = p.sources.iter().position(|&s| s == state).ok_or_else(|| {
            Error::InvalidParameter(format!(
                "state {} has no edge in block pair ({})",
                state + 1,
                self.structure.pair_name(pair)
            ))
        })?;
        if state == p.reference && value != 1.0 {
            return Err(Error::InvalidParameter(format!(
                "gamma of reference state {} in block pair ({}) is fixed to 1",
                state + 1,
                self.structure.pair_name(pair)
            )));
        }
        self.gamma[pair][idx] = value;
        Ok(())
    }

    /// Sets the destination weights of one group; they must sum to one.
    pub fn set_alpha_group(&mut self, group: usize, weights: &[f64]) -> Result<()> {
        let edges = &self.structure.groups()[group].edges;
        if weights.len() != edges.len() {
            return Err(Error::InvalidParameter(format!(
                "alpha group has {} edges, got {} weights",
                edges.len(),
                weights.len()
            )));
        }
        let total: f64 = weights.iter().sum();
        if weights.iter().any(|&w| !(0.0..=1.0).contains(&w)) || (total - 1.0).abs() > 1e-9 {
            return Err(Error::InvalidParameter(format!(
                "alpha weights must lie in [0, 1] and sum to 1, got {weights:?}"
            )));
        }
        for (&e, &w) in edges.iter().zip(weights) {
            self.alpha[e] = w / total;
        }
        Ok(())
    }

    pub fn set_erosion(&mut self, edge: usize, value: f64) -> Result<()> {
        if !(value >= 0.0) || !value.is_finite() {
            return Err(Error::InvalidParameter(format!("erosion must be >= 0, got {value}")));
        }
        self.erosion[edge] = value;
        Ok(())
    }

    /// `S = sum_l gamma_l x_l` over the sources of `pair`.
    pub fn pair_load(&self, pair: usize, x: &[u32]) -> f64 {
        let p = self.structure.pair(pair);
        p.sources.iter().zip(&self.gamma[pair]).map(|(&l, &g)| g * x[l] as f64).sum()
    }

    /// The pair component `nu [psi(rho + S) - psi(rho)]`.
    pub fn zeta_component(&self, x: &ConfigurationVector, pair: usize) -> f64 {
        let s = self.pair_load(pair, x.counts());
        self.nu[pair] * digamma_diff(self.rho[pair], s)
    }

    /// Total erosion rate `sum_i x_i sum_{i'} c_{i,i'}`.
    pub fn erosion_rate(&self, x: &[u32]) -> f64 {
        let graph = self.structure.graph();
        graph.edges().iter().zip(&self.erosion).map(|(&(from, _), &c)| c * x[from] as f64).sum()
    }

    /// The characteristic index: total event rate of a configuration.
    pub fn characteristic_index(&self, x: &ConfigurationVector) -> f64 {
        let pairs: f64 = (0..self.nu.len()).map(|p| self.zeta_component(x, p)).sum();
        pairs + self.erosion_rate(x.counts())
    }

    /// `ln` of the non-normalized rate of a transition event.
    pub fn log_lambda(&self, event: &TransitionEvent) -> Result<f64> {
        self.log_pair_rate(event.pair, &event.stays, &event.moves)
    }

    /// The non-normalized rate of a transition event.
    pub fn lambda_transition(&self, event: &TransitionEvent) -> Result<f64> {
        Ok(self.log_lambda(event)?.exp())
    }

    /// `ln (nu I prod alpha^d + [D = 1] c)` with stays aligned to the pair's
    /// sources and moves aligned to the pair's edges.
    pub fn log_pair_rate(&self, pair: usize, stays: &[u32], moves: &[u32]) -> Result<f64> {
        let (ln_measure, single) = self.log_measure_part(pair, stays, moves)?;
        match single {
            Some(edge) if self.erosion[edge] > 0.0 => {
                Ok(log_add(ln_measure, self.erosion[edge].ln()))
            }
            _ => Ok(ln_measure),
        }
    }

    /// `ln (nu I prod alpha^d)` and, when exactly one unit moves, its edge.
    pub fn log_measure_part(
        &self,
        pair: usize,
        stays: &[u32],
        moves: &[u32],
    ) -> Result<(f64, Option<usize>)> {
        let p = self.structure.pair(pair);
        if stays.len() != p.sources.len() || moves.len() != p.edges.len() {
            return Err(Error::InvalidParameter("event shape does not match its block pair".into()));
        }
        let graph = self.structure.graph();
        let mut d = vec![0u32; p.sources.len()];
        let mut ln_alpha = 0.0;
        let mut single = None;
        let mut total = 0;
        for (k, &e) in p.edges.iter().enumerate() {
            if moves[k] == 0 {
                continue;
            }
            let src = graph.edges()[e].0;
            let idx = p.sources.iter().position(|&s| s == src).expect("edge source is a pair source");
            d[idx] += moves[k];
            total += moves[k];
            ln_alpha += moves[k] as f64 * self.alpha[e].ln();
            single = Some(e);
        }
        if total == 0 {
            return Err(Error::Domain("a transition event needs at least one move".into()));
        }
        let ln_i = log_integral(self.rho[pair], stays, &d, &self.gamma[pair])?;
        let single = if total == 1 { single } else { None };
        Ok((self.nu[pair].ln() + ln_i + ln_alpha, single))
    }

    /// Probability that the population jumps from `y` to `y2` at its next
    /// event: `lambda(y, y2) / zeta(y)`.
    pub fn transition_prob(&self, y: &[usize], y2: &[usize]) -> Result<f64> {
        let n_states = self.structure.n_states();
        let x = crate::statespace::configuration_of(y, n_states)?;
        let moves: Vec<(usize, usize)> =
            y.iter().zip(y2).filter(|(a, b)| a != b).map(|(&a, &b)| (a, b)).collect();
        if y.len() != y2.len() {
            return Err(Error::InadmissibleTransition("state vectors differ in length".into()));
        }
        if moves.is_empty() {
            return Err(Error::InadmissibleTransition("no unit changes state".into()));
        }
        for &(_, b) in &moves {
            self.structure.graph().check_state(b)?;
        }
        let zeta = self.characteristic_index(&x);
        if zeta <= 0.0 {
            return Err(Error::Domain("every unit is absorbed; no further transitions".into()));
        }
        let event = TransitionEvent::from_moves(&self.structure, x.counts(), &moves)?;
        Ok(self.lambda_transition(&event)? / zeta)
    }

    pub fn n_pairs(&self) -> usize {
        self.nu.len()
    }
}

fn check_positive(name: &str, value: f64) -> Result<()> {
    if value > 0.0 && value.is_finite() {
        Ok(())
    } else {
        Err(Error::InvalidParameter(format!("{name} must be finite and positive, got {value}")))
    }
}

/// `ln(e^a + e^b)`.
pub(crate) fn log_add(a: f64, b: f64) -> f64 {
    let (hi, lo) = if a > b { (a, b) } else { (b, a) };
    if lo == f64::NEG_INFINITY {
        return hi;
    }
    hi + (lo - hi).exp().ln_1p()
}

/// A simultaneous transition within one block pair.
#[derive(Debug, Clone, PartialEq, Eq, Hash)]
pub struct TransitionEvent {
    pub pair: usize,
    /// Units that stay, per source state of the pair.
    pub stays: Vec<u32>,
    /// Units moving along each edge of the pair.
    pub moves: Vec<u32>,
}

impl TransitionEvent {
    /// Builds the event in which the listed `(from, to)` moves happen out of
    /// the at-risk configuration `x` (counts before the event).
    pub fn from_moves(structure: &Structure, x: &[u32], moves: &[(usize, usize)]) -> Result<Self> {
        let graph = structure.graph();
        let mut pair = None;
        let mut edge_moves = Vec::with_capacity(moves.len());
        for &(from, to) in moves {
            let e = graph.edge_index(from, to).ok_or_else(|| {
                Error::InadmissibleTransition(format!("({}, {}) is not an edge", from + 1, to + 1))
            })?;
            let p = structure.pair_of_edge(e);
            match pair {
                None => pair = Some(p),
                Some(q) if q != p => {
                    return Err(Error::InadmissibleTransition(format!(
                        "simultaneous moves span block pairs ({}) and ({})",
                        structure.pair_name(q),
                        structure.pair_name(p)
                    )))
                }
                _ => {}
            }
            edge_moves.push(e);
        }
        let pair = pair.ok_or_else(|| Error::InadmissibleTransition("empty event".into()))?;
        let bp = structure.pair(pair);
        let mut counts = vec![0u32; bp.edges.len()];
        let mut stays: Vec<u32> = bp.sources.iter().map(|&l| x[l]).collect();
        for e in edge_moves {
            let k = bp.edges.iter().position(|&f| f == e).expect("edge belongs to its pair");
            counts[k] += 1;
            let src = graph.edges()[e].0;
            let idx = bp.sources.iter().position(|&s| s == src).expect("source of pair");
            if stays[idx] == 0 {
                return Err(Error::InadmissibleTransition(format!(
                    "more units leave state {} than are at risk there",
                    src + 1
                )));
            }
            stays[idx] -= 1;
        }
        Ok(TransitionEvent { pair, stays, moves: counts })
    }

    pub fn total_moves(&self) -> u32 {
        self.moves.iter().sum()
    }
}
