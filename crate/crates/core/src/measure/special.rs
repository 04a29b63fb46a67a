//! Digamma, digamma differences and the Hurwitz zeta function.

use crate::error::{Error, Result};

/// `B_{2k} / (2k)` for k = 1..=8, the asymptotic digamma coefficients.
const DIGAMMA_ASYMPTOTIC: [f64; 8] = [
    1.0 / 12.0,
    -1.0 / 120.0,
    1.0 / 252.0,
    -1.0 / 240.0,
    1.0 / 132.0,
    -691.0 / 32760.0,
    1.0 / 12.0,
    -3617.0 / 8160.0,
];

/// `B_{2j} / (2j)!` for j = 1..=15, used by the Euler-Maclaurin tail.
const BERNOULLI_OVER_FACTORIAL: [f64; 15] = [
    1.666_666_666_666_666_7e-1 / 2.0,
    -3.333_333_333_333_333_3e-2 / 24.0,
    2.380_952_380_952_381e-2 / 720.0,
    -3.333_333_333_333_333_3e-2 / 40_320.0,
    7.575_757_575_757_576e-2 / 3_628_800.0,
    -2.531_135_531_135_531e-1 / 479_001_600.0,
    1.166_666_666_666_666_7 / 87_178_291_200.0,
    -7.092_156_862_745_098 / 20_922_789_888_000.0,
    5.497_117_794_486_215e1 / 6_402_373_705_728_000.0,
    -5.291_242_424_242_424e2 / 2.432_902_008_176_64e18,
    6.192_123_188_405_797e3 / 1.124_000_727_777_607_7e21,
    -8.658_025_311_355_311e4 / 6.204_484_017_332_394e23,
    1.425_517_166_666_666_7e6 / 4.032_914_611_266_056_4e26,
    -2.729_823_106_781_609e7 / 3.048_883_446_117_138_4e29,
    6.015_808_739_006_424e8 / 2.652_528_598_121_910_3e32,
];

/// Shift threshold for the asymptotic expansions.
const ASYMPTOTIC_FROM: f64 = 8.0;

/// The digamma function `psi(x) = d/dx ln Gamma(x)` for `x > 0`.
pub fn digamma(x: f64) -> Result<f64> {
    if !(x > 0.0) || !x.is_finite() {
        return Err(Error::Domain(format!("digamma requires a finite positive argument, got {x}")));
    }
    Ok(psi(x))
}

/// Unchecked digamma for `x > 0`.
pub(crate) fn psi(mut x: f64) -> f64 {
    let mut acc = 0.0;
    while x < ASYMPTOTIC_FROM {
        acc -= 1.0 / x;
        x += 1.0;
    }
    let inv2 = 1.0 / (x * x);
    let mut series = 0.0;
    let mut pow = inv2;
    for c in DIGAMMA_ASYMPTOTIC {
        series += c * pow;
        pow *= inv2;
    }
    acc + x.ln() - 0.5 / x - series
}

/// `psi(a + h) - psi(a)` for `a > 0`, `h >= 0`, without cancellation when
/// `h` is small relative to `a`.
pub fn digamma_diff(a: f64, h: f64) -> f64 {
    debug_assert!(a > 0.0 && h >= 0.0, "digamma_diff({a}, {h})");
    if h == 0.0 {
        return 0.0;
    }
    let mut x = a;
    let mut acc = 0.0;
    while x < ASYMPTOTIC_FROM {
        acc += h / (x * (x + h));
        x += 1.0;
    }
    let ratio_ln = (h / x).ln_1p();
    let inv2 = 1.0 / (x * x);
    let mut tail = 0.0;
    let mut pow = inv2;
    for (k, c) in DIGAMMA_ASYMPTOTIC.iter().enumerate() {
        let two_k = 2.0 * (k as f64 + 1.0);
        tail += c * pow * (-two_k * ratio_ln).exp_m1();
        pow *= inv2;
    }
    acc + ratio_ln + h / (2.0 * x * (x + h)) - tail
}

/// The Hurwitz zeta function `zeta(s, a) = sum_{k>=0} (a + k)^{-s}` for
/// integer `s >= 2` and `a > 0`.
pub fn hurwitz_zeta(s: u32, a: f64) -> Result<f64> {
    if s < 2 {
        return Err(Error::Domain(format!("hurwitz_zeta needs s >= 2, got {s}")));
    }
    if !(a > 0.0) || !a.is_finite() {
        return Err(Error::Domain(format!("hurwitz_zeta needs a > 0, got {a}")));
    }
    let scaled = hurwitz_zeta_scaled(s, 1, a)[0];
    Ok(scaled * (-(s as f64) * a.ln()).exp())
}

/// `a^s zeta(s, a)` for `s = s_min, s_min + 1, ..., s_min + count - 1`.
///
/// The scaling keeps every value in `[1, 1 + zeta(s)a^s]`, so large orders
/// neither overflow nor underflow.
pub(crate) fn hurwitz_zeta_scaled(s_min: u32, count: usize, a: f64) -> Vec<f64> {
    debug_assert!(s_min >= 2 && a > 0.0);
    let s_max = s_min as f64 + count as f64 - 1.0;
    let shift = (s_max.max(15.0) - a).ceil().max(0.0) as usize;
    let x = a + shift as f64;

    let mut out = vec![0.0; count];
    for k in 0..shift {
        let w = a / (a + k as f64);
        let mut p = w.powi(s_min as i32);
        for v in out.iter_mut() {
            *v += p;
            p *= w;
        }
    }

    let w = a / x;
    let mut wp = w.powi(s_min as i32);
    let inv_x2 = 1.0 / (x * x);
    for (idx, v) in out.iter_mut().enumerate() {
        let s = s_min as f64 + idx as f64;
        let mut tail = x / (s - 1.0) + 0.5;
        // rising factorial (s)_{2j-1} / x^{2j-1}, starting at j = 1
        let mut rising = s / x;
        for (j, c) in BERNOULLI_OVER_FACTORIAL.iter().enumerate() {
            let term = c * rising;
            tail += term;
            if term.abs() < 1e-18 * tail.abs() {
                break;
            }
            let m = 2.0 * j as f64;
            rising *= (s + m + 1.0) * (s + m + 2.0) * inv_x2;
        }
        *v += wp * tail;
        wp *= w;
    }
    out
}

/// Natural log of the Beta function.
pub fn ln_beta(a: f64, b: f64) -> f64 {
    use statrs::function::gamma::ln_gamma;
    ln_gamma(a) + ln_gamma(b) - ln_gamma(a + b)
}
