//! Evaluation of the transition integral
//!
//! ```text
//! I(a; gamma, d) = ∫_0^1 p^(a-1) prod_l (1 - p^gamma_l)^d_l (1 - p)^(-1) dp,
//! ```
//!
//! where `a = rho + sum_l gamma_l r_l` collects the staying units and the
//! movers `(gamma_l, d_l)` have `D = sum_l d_l >= 1`.
//!
//! Four routes are available and [`log_integral`] picks the cheapest one
//! that is well conditioned:
//!
//! * all movers with `gamma = 1`: the Beta function `B(a, D)`;
//! * the alternating digamma series
//!   `sum_k (-1)^(|k|+1) prod_l C(d_l, k_l) psi(a + sum_l gamma_l k_l)`,
//!   accumulated as digamma differences against the `k = 0` term;
//! * a Hurwitz-zeta (polygamma) expansion in powers of `H / a` with
//!   `H = sum_l gamma_l d_l`, which stays accurate when the digamma series
//!   cancels catastrophically (`a` large compared to `H`);
//! * adaptive quadrature as a last resort.

use statrs::function::gamma::ln_gamma;

use super::quadrature::log_integral_quadrature;
use super::special::{digamma_diff, hurwitz_zeta_scaled, ln_beta};
use crate::error::{Error, Result};

/// Which evaluation strategy produced a value.
#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub enum IntegralRoute {
    Beta,
    Digamma,
    Polygamma,
    Quadrature,
}

/// Largest acceptable ratio of summed term magnitudes to the result.
const MAX_CONDITION: f64 = 1e6;
/// Largest number of digamma-series terms tried.
const MAX_DIGAMMA_TERMS: usize = 256;
const MAX_POLYGAMMA_TERMS: usize = 800;

/// Merges movers with equal `gamma` and drops empty ones.
pub fn normalize_movers(movers: &[(f64, u32)]) -> Vec<(f64, u32)> {
    let mut out: Vec<(f64, u32)> = Vec::with_capacity(movers.len());
    for &(g, d) in movers {
        if d == 0 {
            continue;
        }
        match out.iter_mut().find(|(h, _)| *h == g) {
            Some(entry) => entry.1 += d,
            None => out.push((g, d)),
        }
    }
    out
}

/// `ln I` for stays `r`, moves `d` and relative log-risks `gamma` (one
/// entry per source state), with shape `rho`.
pub fn log_integral(rho: f64, r: &[u32], d: &[u32], gamma: &[f64]) -> Result<f64> {
    let a = rho + r.iter().zip(gamma).map(|(&r, &g)| r as f64 * g).sum::<f64>();
    let movers: Vec<(f64, u32)> = gamma.iter().copied().zip(d.iter().copied()).collect();
    Ok(log_integral_routed(a, &movers)?.0)
}

/// `ln I(a; movers)` together with the route used.
pub fn log_integral_routed(a: f64, movers: &[(f64, u32)]) -> Result<(f64, IntegralRoute)> {
    let movers = normalize_movers(movers);
    if movers.is_empty() {
        return Err(Error::Domain("a transition needs at least one moving unit".into()));
    }
    if !(a > 0.0) || !a.is_finite() || movers.iter().any(|&(g, _)| !(g > 0.0) || !g.is_finite()) {
        return Err(Error::InvalidParameter(format!(
            "transition integral needs a > 0 and positive gammas (a = {a})"
        )));
    }
    let total: u32 = movers.iter().map(|&(_, d)| d).sum();
    if movers.iter().all(|&(g, _)| g == 1.0) {
        return Ok((ln_beta(a, total as f64), IntegralRoute::Beta));
    }
    let terms: usize = movers.iter().map(|&(_, d)| d as usize + 1).product();
    if terms <= MAX_DIGAMMA_TERMS {
        if let Some((value, kappa)) = digamma_series(a, &movers) {
            if value > 0.0 && kappa <= MAX_CONDITION {
                return Ok((value.ln(), IntegralRoute::Digamma));
            }
        }
    }
    if let Some((ln_value, kappa)) = polygamma_series(a, &movers) {
        if kappa <= MAX_CONDITION {
            return Ok((ln_value, IntegralRoute::Polygamma));
        }
    }
    Ok((log_integral_quadrature(a, &movers, 1e-12)?, IntegralRoute::Quadrature))
}

/// The alternating digamma sum, returned with its condition estimate
/// `sum |term| / |sum|`. `None` when the term count exceeds the limit.
pub fn digamma_series(a: f64, movers: &[(f64, u32)]) -> Option<(f64, f64)> {
    let movers = normalize_movers(movers);
    let terms: usize = movers.iter().map(|&(_, d)| d as usize + 1).product();
    if movers.is_empty() || terms > MAX_DIGAMMA_TERMS {
        return None;
    }
    let binomials: Vec<Vec<f64>> = movers.iter().map(|&(_, d)| binomial_row(d)).collect();
    let mut k = vec![0u32; movers.len()];
    let mut sum = 0.0f64;
    let mut compensation = 0.0;
    let mut magnitude = 0.0;
    // k = 0 contributes nothing once every term is paired with psi(a).
    loop {
        let mut carry = 0;
        loop {
            if carry == k.len() {
                let kappa = magnitude / sum.abs();
                return Some((sum + compensation, kappa));
            }
            if k[carry] < movers[carry].1 {
                k[carry] += 1;
                break;
            }
            k[carry] = 0;
            carry += 1;
        }
        let mut coef = 1.0;
        let mut h = 0.0;
        let mut parity = 1;
        for (idx, &(g, _)) in movers.iter().enumerate() {
            coef *= binomials[idx][k[idx] as usize];
            h += g * k[idx] as f64;
            parity += k[idx];
        }
        let sign = if parity % 2 == 0 { 1.0 } else { -1.0 };
        let term = sign * coef * digamma_diff(a, h);
        magnitude += term.abs();
        // Neumaier summation
        let t = sum + term;
        if sum.abs() >= term.abs() {
            compensation += (sum - t) + term;
        } else {
            compensation += (term - t) + sum;
        }
        sum = t;
    }
}

fn binomial_row(n: u32) -> Vec<f64> {
    let mut row = vec![1.0; n as usize + 1];
    for k in 1..=n as usize {
        row[k] = row[k - 1] * (n as usize - k + 1) as f64 / k as f64;
    }
    row
}

/// Series in `H / a` for `ln I`, returned with its condition estimate.
///
/// With `F(t) = prod_l ((e^(gamma_l t / a) - 1) / (gamma_l t / a))^d_l =
/// sum_j E_j t^j / j!`,
///
/// ```text
/// I = prod_l gamma_l^d_l a^-(D+1) D! sum_j (-1)^j E_j C(D+j, j) a^(D+j+1) zeta(D+j+1, a).
/// ```
///
/// `None` when the series cannot converge usefully (`H / a` too large).
pub fn polygamma_series(a: f64, movers: &[(f64, u32)]) -> Option<(f64, f64)> {
    let movers = normalize_movers(movers);
    if movers.is_empty() {
        return None;
    }
    let total: u32 = movers.iter().map(|&(_, d)| d).sum();
    let big_d = total as f64;
    let ratio: f64 = movers.iter().map(|&(g, d)| g * d as f64).sum::<f64>() / a;
    if ratio > 0.5 || (big_d + 1.0) * ((1.0 + ratio) / (1.0 - ratio)).ln() > MAX_CONDITION.ln() + 2.0
    {
        return None;
    }
    // Number of terms: |term_j| <= C(D+j, j) ratio^j (1 + zeta(2)).
    let peak = (big_d * ratio / (1.0 - ratio)).ceil();
    let n_terms = {
        let mut ln_bound = 0.0f64;
        let mut ln_max = 0.0f64;
        let mut j = 0usize;
        loop {
            j += 1;
            ln_bound += ((big_d + j as f64) / j as f64).ln() + ratio.ln();
            ln_max = ln_max.max(ln_bound);
            if j as f64 > peak && ln_bound < ln_max - 41.0 {
                break j + 1;
            }
            if j >= MAX_POLYGAMMA_TERMS {
                return None;
            }
        }
    };

    // Exponential-form coefficients of one factor: x^k / (k + 1).
    let mut series = vec![0.0; n_terms];
    series[0] = 1.0;
    for &(g, d) in &movers {
        let x = g / a;
        let mut factor = vec![0.0; n_terms];
        let mut p = 1.0;
        for (k, f) in factor.iter_mut().enumerate() {
            *f = p / (k as f64 + 1.0);
            p *= x;
        }
        let powered = exp_series_pow(&factor, d);
        series = exp_series_mul(&series, &powered);
    }

    let zetas = hurwitz_zeta_scaled(total + 1, n_terms, a);
    let mut sum = 0.0;
    let mut magnitude = 0.0;
    let mut binom = 1.0; // C(D + j, j)
    for j in 0..n_terms {
        if j > 0 {
            binom *= (big_d + j as f64) / j as f64;
        }
        let term = series[j] * binom * zetas[j];
        magnitude += term.abs();
        sum += if j % 2 == 0 { term } else { -term };
    }
    if !(sum > 0.0) {
        return None;
    }
    let kappa = magnitude / sum;
    let ln_prefactor: f64 = movers.iter().map(|&(g, d)| d as f64 * g.ln()).sum::<f64>()
        - (big_d + 1.0) * a.ln()
        + ln_gamma(big_d + 1.0);
    Some((ln_prefactor + sum.ln(), kappa))
}

/// Product of two truncated exponential generating series:
/// `c_n = sum_k C(n, k) a_k b_{n-k}`.
fn exp_series_mul(a: &[f64], b: &[f64]) -> Vec<f64> {
    let n = a.len();
    let mut out = vec![0.0; n];
    let mut row = vec![1.0; n];
    for (m, slot) in out.iter_mut().enumerate() {
        // row holds C(m, k) for k = 0..=m
        if m > 0 {
            for k in (1..m).rev() {
                row[k] += row[k - 1];
            }
            row[m] = 1.0;
        }
        let mut acc = 0.0;
        for k in 0..=m {
            acc += row[k] * a[k] * b[m - k];
        }
        *slot = acc;
    }
    out
}

fn exp_series_pow(base: &[f64], mut exponent: u32) -> Vec<f64> {
    let mut result = vec![0.0; base.len()];
    result[0] = 1.0;
    let mut square = base.to_vec();
    while exponent > 0 {
        if exponent & 1 == 1 {
            result = exp_series_mul(&result, &square);
        }
        exponent >>= 1;
        if exponent > 0 {
            square = exp_series_mul(&square, &square);
        }
    }
    result
}
