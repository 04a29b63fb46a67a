//! Adaptive Gauss-Kronrod quadrature of the transition integral.
//!
//! The integral
//!
//! ```text
//! I = ∫_0^1 p^(a-1) prod_l (1 - p^gamma_l)^d_l (1 - p)^(-1) dp
//! ```
//!
//! is evaluated after substituting `u = -ln p`, which maps the endpoint
//! singularity at `p = 1` to a smooth behaviour at `u = 0`:
//!
//! ```text
//! I = ∫_0^∞ exp(-a u) prod_l (1 - e^(-gamma_l u))^d_l / (1 - e^(-u)) du.
//! ```
//!
//! The integrand is handled on the log scale and rescaled by its peak, so
//! large move counts do not underflow.

use std::cmp::Ordering;
use std::collections::BinaryHeap;

use crate::error::{Error, Result};

const XGK: [f64; 8] = [
    0.991_455_371_120_812_6,
    0.949_107_912_342_758_5,
    0.864_864_423_359_769_1,
    0.741_531_185_599_394_4,
    0.586_087_235_467_691_1,
    0.405_845_151_377_397_2,
    0.207_784_955_007_898_5,
    0.0,
];
const WGK: [f64; 8] = [
    0.022_935_322_010_529_22,
    0.063_092_092_629_978_55,
    0.104_790_010_322_250_2,
    0.140_653_259_715_525_9,
    0.169_004_726_639_267_9,
    0.190_350_578_064_785_4,
    0.204_432_940_075_298_9,
    0.209_482_141_084_728_8,
];
const WG: [f64; 4] = [
    0.129_484_966_168_869_7,
    0.279_705_391_489_276_7,
    0.381_830_050_505_118_9,
    0.417_959_183_673_469_4,
];

const MAX_INTERVALS: usize = 4000;

/// Log of the integrand in `u = -ln p`.
fn ln_integrand(u: f64, a: f64, movers: &[(f64, u32)]) -> f64 {
    let mut v = -a * u - (-(-u).exp_m1()).ln();
    for &(gamma, d) in movers {
        v += d as f64 * (-(-gamma * u).exp_m1()).ln();
    }
    v
}

struct Piece {
    lo: f64,
    hi: f64,
    value: f64,
    error: f64,
}

impl PartialEq for Piece {
    fn eq(&self, other: &Self) -> bool {
        self.error == other.error
    }
}
impl Eq for Piece {}
impl PartialOrd for Piece {
    fn partial_cmp(&self, other: &Self) -> Option<Ordering> {
        Some(self.cmp(other))
    }
}
impl Ord for Piece {
    fn cmp(&self, other: &Self) -> Ordering {
        self.error.total_cmp(&other.error)
    }
}

fn gauss_kronrod<F: Fn(f64) -> f64>(f: &F, lo: f64, hi: f64) -> Piece {
    let center = 0.5 * (lo + hi);
    let half = 0.5 * (hi - lo);
    let fc = f(center);
    let mut kronrod = fc * WGK[7];
    let mut gauss = fc * WG[3];
    for k in 0..7 {
        let dx = half * XGK[k];
        let pair = f(center - dx) + f(center + dx);
        kronrod += WGK[k] * pair;
        if k % 2 == 1 {
            gauss += WG[k / 2] * pair;
        }
    }
    let value = kronrod * half;
    let error = ((kronrod - gauss) * half).abs();
    Piece { lo, hi, value, error }
}

/// Adaptive integration of `f` over the given breakpoints to a relative
/// tolerance.
fn adaptive<F: Fn(f64) -> f64>(f: &F, breaks: &[f64], rel_tol: f64) -> Result<f64> {
    let mut heap = BinaryHeap::new();
    for w in breaks.windows(2) {
        if w[1] > w[0] {
            heap.push(gauss_kronrod(f, w[0], w[1]));
        }
    }
    loop {
        let total: f64 = heap.iter().map(|p| p.value).sum();
        let err: f64 = heap.iter().map(|p| p.error).sum();
        if err <= rel_tol * total.abs() || err == 0.0 {
            return Ok(total);
        }
        if heap.len() >= MAX_INTERVALS {
            return Err(Error::NonConvergence(format!(
                "adaptive quadrature stopped at {} intervals with relative error {:.2e}",
                heap.len(),
                err / total.abs()
            )));
        }
        let worst = heap.pop().expect("heap is non-empty");
        let mid = 0.5 * (worst.lo + worst.hi);
        if !(mid > worst.lo && mid < worst.hi) {
            return Err(Error::NonConvergence("quadrature interval underflow".into()));
        }
        heap.push(gauss_kronrod(f, worst.lo, mid));
        heap.push(gauss_kronrod(f, mid, worst.hi));
    }
}

/// `ln I` for `a > 0` and movers `(gamma_l, d_l)` with at least one move,
/// by adaptive quadrature with relative tolerance `rel_tol`.
pub fn log_integral_quadrature(a: f64, movers: &[(f64, u32)], rel_tol: f64) -> Result<f64> {
    if !(a > 0.0) || movers.iter().all(|&(_, d)| d == 0) {
        return Err(Error::Domain("quadrature needs a > 0 and at least one move".into()));
    }
    // Locate the peak of the log-integrand on a geometric scan.
    let scale = 1.0 / a;
    let mut peak_u = scale;
    let mut peak = f64::NEG_INFINITY;
    let mut u = 1e-9 * scale;
    while u < 1e4 * scale {
        let v = ln_integrand(u, a, movers);
        if v > peak {
            peak = v;
            peak_u = u;
        }
        u *= 1.25;
    }
    // Truncate where the tail bound exp(-aU) / (a (1 - e^-U)) is negligible.
    let mut upper = peak_u.max(scale) * 2.0;
    loop {
        let ln_tail = -a * upper - (-(-upper).exp_m1()).ln() - a.ln();
        if ln_tail < peak + (peak_u.min(scale)).ln() - 46.0 {
            break;
        }
        upper *= 1.5;
    }
    let mut breaks = vec![0.0];
    let mut b = peak_u * 2f64.powi(-30);
    while b < peak_u {
        breaks.push(b);
        b *= 2.0;
    }
    breaks.push(peak_u);
    let pieces = 24;
    for k in 1..=pieces {
        breaks.push(peak_u + (upper - peak_u) * (k as f64 / pieces as f64).powi(2));
    }
    let f = |u: f64| (ln_integrand(u, a, movers) - peak).exp();
    let scaled = adaptive(&f, &breaks, rel_tol)?;
    if !(scaled > 0.0) {
        return Err(Error::NonConvergence("quadrature produced a non-positive integral".into()));
    }
    Ok(peak + scaled.ln())
}

/// Numerical value of the defining integral
///
/// ```text
/// ∫_0^1 prod_l p^(gamma_l r_l) (1 - p^gamma_l)^d_l p^(rho-1) (1-p)^(-1) dp
/// ```
///
/// for `D = sum d_l >= 1`. With all `d_l = 0` it instead returns the
/// characteristic-index form `∫ (1 - prod_l p^(gamma_l r_l)) p^(rho-1) (1-p)^(-1) dp`.
/// Independent of the series used in the hot path; intended as a check.
pub fn quadrature_oracle(r: &[u32], d: &[u32], gamma: &[f64], rho: f64) -> Result<f64> {
    if r.len() != d.len() || r.len() != gamma.len() {
        return Err(Error::InvalidParameter("r, d and gamma must have equal length".into()));
    }
    if !(rho > 0.0) || gamma.iter().any(|&g| !(g > 0.0)) {
        return Err(Error::InvalidParameter("rho and gamma must be positive".into()));
    }
    let stay: f64 = r.iter().zip(gamma).map(|(&r, &g)| r as f64 * g).sum();
    let total_moves: u32 = d.iter().sum();
    let ln_value = if total_moves == 0 {
        if stay == 0.0 {
            return Ok(0.0);
        }
        log_integral_quadrature(rho, &[(stay, 1)], 1e-13)?
    } else {
        let movers: Vec<(f64, u32)> =
            gamma.iter().zip(d).filter(|(_, &d)| d > 0).map(|(&g, &d)| (g, d)).collect();
        log_integral_quadrature(rho + stay, &movers, 1e-13)?
    };
    Ok(ln_value.exp())
}
