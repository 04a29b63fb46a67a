//! Shared helpers for the integration and acceptance tests.
#![allow(dead_code)]

use std::sync::Arc;

use msurv::measure::ModelParams;
use msurv::statespace::{BuiltinGraph, Partition, Structure, TransitionGraph};

/// One row of the frozen high-precision integral table.
pub struct IntegralCase {
    pub r: Vec<u32>,
    pub d: Vec<u32>,
    pub gamma: Vec<f64>,
    pub rho: f64,
    pub integral: f64,
}

pub fn integral_cases() -> Vec<IntegralCase> {
    let text = include_str!("../data/integral_oracle.csv");
    let ints = |s: &str| s.split(' ').map(|v| v.parse().unwrap()).collect::<Vec<u32>>();
    text.lines()
        .skip(1)
        .map(|line| {
            let f: Vec<&str> = line.split(',').collect();
            IntegralCase {
                r: ints(f[0]),
                d: ints(f[1]),
                gamma: f[2].split(' ').map(|v| v.parse().unwrap()).collect(),
                rho: f[3].parse().unwrap(),
                integral: f[4].parse().unwrap(),
            }
        })
        .collect()
}

pub fn structure(kind: BuiltinGraph, blocks: Option<Vec<Vec<usize>>>) -> Arc<Structure> {
    let g = TransitionGraph::builtin(kind).unwrap();
    let p = match blocks {
        Some(b) => Partition::from_blocks(b).unwrap(),
        None => Partition::degenerate(g.n_states()),
    };
    Arc::new(Structure::new(g, p).unwrap())
}

/// Harmonic survival process with unit rate and shape.
pub fn survival_params() -> ModelParams {
    ModelParams::new(structure(BuiltinGraph::Survival, None), 1.0).unwrap()
}

/// The bidirectional illness-death design used throughout the tests:
/// blocks {Healthy, Ill} and {Dead}, rho = 1.
pub fn illness_death_params(nu11: f64, nu12: f64, gamma21: f64, gamma22: f64) -> ModelParams {
    let s = structure(BuiltinGraph::BidirectionalIllnessDeath, Some(vec![vec![0, 1], vec![2]]));
    let within = s.pair_index(0, 0).unwrap();
    let death = s.pair_index(0, 1).unwrap();
    let mut m = ModelParams::new(s, 1.0).unwrap();
    m.set_nu(within, nu11).unwrap();
    m.set_nu(death, nu12).unwrap();
    m.set_gamma(within, 1, gamma21).unwrap();
    m.set_gamma(death, 1, gamma22).unwrap();
    m
}

/// Two-sample Kolmogorov-Smirnov p-value (asymptotic, with the Stephens
/// small-sample correction).
pub fn ks_two_sample(a: &[f64], b: &[f64]) -> f64 {
    let mut a = a.to_vec();
    let mut b = b.to_vec();
    a.sort_by(f64::total_cmp);
    b.sort_by(f64::total_cmp);
    let (n, m) = (a.len() as f64, b.len() as f64);
    let (mut i, mut j, mut d) = (0, 0, 0.0f64);
    while i < a.len() && j < b.len() {
        let t = a[i].min(b[j]);
        while i < a.len() && a[i] <= t {
            i += 1;
        }
        while j < b.len() && b[j] <= t {
            j += 1;
        }
        d = d.max((i as f64 / n - j as f64 / m).abs());
    }
    let en = (n * m / (n + m)).sqrt();
    kolmogorov_q((en + 0.12 + 0.11 / en) * d)
}

/// One-sample KS p-value against a continuous CDF.
pub fn ks_one_sample(sample: &[f64], cdf: impl Fn(f64) -> f64) -> f64 {
    let mut s = sample.to_vec();
    s.sort_by(f64::total_cmp);
    let n = s.len() as f64;
    let mut d = 0.0f64;
    for (k, &x) in s.iter().enumerate() {
        let f = cdf(x);
        d = d.max((f - k as f64 / n).abs()).max(((k + 1) as f64 / n - f).abs());
    }
    let en = n.sqrt();
    kolmogorov_q((en + 0.12 + 0.11 / en) * d)
}

/// Survival function of the Kolmogorov distribution.
pub fn kolmogorov_q(lambda: f64) -> f64 {
    if lambda < 1e-3 {
        return 1.0;
    }
    let mut sum = 0.0;
    for k in 1..200 {
        let term = 2.0 * (-1f64).powi(k - 1) * (-2.0 * (k as f64 * lambda).powi(2)).exp();
        sum += term;
        if term.abs() < 1e-16 {
            break;
        }
    }
    sum.clamp(0.0, 1.0)
}

/// Chi-square homogeneity test p-value for two count vectors.
pub fn chi_square_two_sample(a: &[u64], b: &[u64]) -> f64 {
    use statrs::distribution::{ChiSquared, ContinuousCDF};
    let na: f64 = a.iter().sum::<u64>() as f64;
    let nb: f64 = b.iter().sum::<u64>() as f64;
    let mut stat = 0.0;
    let mut dof = 0;
    for (&x, &y) in a.iter().zip(b) {
        let total = (x + y) as f64;
        if total == 0.0 {
            continue;
        }
        dof += 1;
        let ea = total * na / (na + nb);
        let eb = total * nb / (na + nb);
        stat += (x as f64 - ea).powi(2) / ea + (y as f64 - eb).powi(2) / eb;
    }
    if dof <= 1 {
        return 1.0;
    }
    1.0 - ChiSquared::new((dof - 1) as f64).unwrap().cdf(stat)
}

/// Chi-square goodness-of-fit p-value of counts against probabilities.
pub fn chi_square_gof(counts: &[u64], probs: &[f64]) -> f64 {
    use statrs::distribution::{ChiSquared, ContinuousCDF};
    let n: f64 = counts.iter().sum::<u64>() as f64;
    let mut stat = 0.0;
    let mut dof = 0;
    for (&c, &p) in counts.iter().zip(probs) {
        if p == 0.0 {
            assert_eq!(c, 0, "observed an impossible outcome");
            continue;
        }
        dof += 1;
        let e = n * p;
        stat += (c as f64 - e).powi(2) / e;
    }
    1.0 - ChiSquared::new((dof - 1) as f64).unwrap().cdf(stat)
}

/// Every state vector reachable from `y` in one simultaneous transition
/// that stays inside one block pair.
pub fn admissible_successors(y: &[usize], s: &Structure) -> Vec<Vec<usize>> {
    let g = s.graph();
    let mut options: Vec<Vec<usize>> = y
        .iter()
        .map(|&st| {
            let mut o = vec![st];
            o.extend(g.out_edges(st).iter().map(|&e| g.edges()[e].1));
            o
        })
        .collect();
    let mut out = Vec::new();
    let mut idx = vec![0usize; y.len()];
    loop {
        let cand: Vec<usize> = idx.iter().zip(&options).map(|(&k, o)| o[k]).collect();
        if cand.as_slice() != y {
            let pairs: std::collections::BTreeSet<usize> = y
                .iter()
                .zip(&cand)
                .filter(|(a, b)| a != b)
                .map(|(&a, &b)| s.pair_of_edge(g.edge_index(a, b).unwrap()))
                .collect();
            if pairs.len() == 1 {
                out.push(cand);
            }
        }
        let mut k = 0;
        loop {
            if k == idx.len() {
                options.clear();
                return out;
            }
            idx[k] += 1;
            if idx[k] < options[k].len() {
                break;
            }
            idx[k] = 0;
            k += 1;
        }
    }
}

/// All state vectors of length `n` over `0..s`.
pub fn all_vectors(n: usize, s: usize) -> Vec<Vec<usize>> {
    let mut out = vec![vec![]];
    for _ in 0..n {
        out = out
            .into_iter()
            .flat_map(|v| {
                (0..s).map(move |st| {
                    let mut w = v.clone();
                    w.push(st);
                    w
                })
            })
            .collect();
    }
    out
}
