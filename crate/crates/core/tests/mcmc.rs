mod common;

use std::sync::Arc;

use common::*;
use msurv::io::{PanelData, Terminal, UnitRecord};
use msurv::mcmc::{
    attribute_events, draw_dirichlet, draw_lambda, gamma_step, init_latent, resample_unit,
    run_chain, update_alpha, update_lambda, CompleteData, McmcConfig, Observations, PriorSpec,
};
use msurv::measure::ModelParams;
use msurv::predictive::{Conditioning, LambdaCache};
use msurv::statespace::BuiltinGraph;
use msurv::trajectory::{log_density, simulate_population, PopulationTrajectory, UnitPath};
use rand::SeedableRng;
use rand_chacha::ChaCha8Rng;

fn record(id: &str, obs: &[(f64, usize)], end: f64, terminal: Terminal) -> UnitRecord {
    UnitRecord { id: id.into(), observations: obs.to_vec(), end_time: end, terminal }
}

/// 2x2 matrix exponential by scaling and squaring of a Taylor series.
fn expm2(a: [[f64; 2]; 2]) -> [[f64; 2]; 2] {
    let mul = |x: [[f64; 2]; 2], y: [[f64; 2]; 2]| {
        let mut r = [[0.0; 2]; 2];
        for i in 0..2 {
            for j in 0..2 {
                r[i][j] = x[i][0] * y[0][j] + x[i][1] * y[1][j];
            }
        }
        r
    };
    let squarings = 10;
    let scale = 2f64.powi(-squarings);
    let s = [[a[0][0] * scale, a[0][1] * scale], [a[1][0] * scale, a[1][1] * scale]];
    let mut result = [[1.0, 0.0], [0.0, 1.0]];
    let mut term = result;
    for k in 1..20 {
        term = mul(term, s);
        for i in 0..2 {
            for j in 0..2 {
                term[i][j] /= k as f64;
                result[i][j] += term[i][j];
            }
        }
    }
    for _ in 0..squarings {
        result = mul(result, result);
    }
    result
}

fn bridge_params() -> ModelParams {
    illness_death_params(3.0, 0.5, 0.7, 1.5)
}

/// Midpoint state frequencies of repeated resampling of a lone unit
/// observed healthy at 0 and 1.
fn ffbs_midpoint(params: &ModelParams, others: &[UnitPath], draws: usize, seed: u64) -> [f64; 2] {
    let rec = record("u", &[(0.0, 0), (1.0, 0)], 1.0, Terminal::Censored);
    let mut units = others.to_vec();
    units.push(UnitPath { initial: 0, jumps: vec![], censor: Some(1.0) });
    let u = units.len() - 1;
    let mut latents = PopulationTrajectory::new(units);
    let mut rng = ChaCha8Rng::seed_from_u64(seed);
    let mut cache = LambdaCache::new();
    let mut counts = [0.0; 2];
    for _ in 0..draws {
        let path = resample_unit(u, &latents, &rec, params, 2.0, &mut rng, &mut cache).unwrap();
        assert_eq!(path.state_at(1.0), 0);
        assert_eq!(path.censor, Some(1.0));
        counts[path.state_at(0.5)] += 1.0;
        latents.units[u] = path;
    }
    [counts[0] / draws as f64, counts[1] / draws as f64]
}

fn rejection_midpoint(params: &ModelParams, others: &[UnitPath], draws: usize, seed: u64) -> [f64; 2] {
    let others = PopulationTrajectory::new(others.to_vec());
    let cond = Conditioning::from_trajectory(&others, params).unwrap();
    let mut rng = ChaCha8Rng::seed_from_u64(seed);
    let mut cache = LambdaCache::new();
    let mut counts = [0.0; 2];
    let mut kept = 0;
    while kept < draws {
        let path = cond.sample_unit(0, 0.0, 1.0, &mut rng, &mut cache).unwrap();
        if path.censor == Some(1.0) && path.state_at(1.0) == 0 {
            counts[path.state_at(0.5)] += 1.0;
            kept += 1;
        }
    }
    [counts[0] / draws as f64, counts[1] / draws as f64]
}

#[test]
fn bridge_matches_rejection_sampler() {
    let m = bridge_params();
    let a = ffbs_midpoint(&m, &[], 20_000, 1);
    let b = rejection_midpoint(&m, &[], 20_000, 2);
    let tv = 0.5 * ((a[0] - b[0]).abs() + (a[1] - b[1]).abs());
    assert!(tv < 0.05, "tv {tv}: {a:?} vs {b:?}");
}

#[test]
fn bridge_matches_exact_uniformization_posterior() {
    let m = bridge_params();
    // constant single-unit rates; deaths are excluded by the censoring
    let h = |from: usize, to: usize| msurv::predictive::continuous_hazard(&m, from, to, &[0, 0, 0]).unwrap();
    let q = [
        [-(h(0, 1) + h(0, 2)), h(0, 1)],
        [h(1, 0), -(h(1, 0) + h(1, 2))],
    ];
    let half = expm2([[q[0][0] * 0.5, q[0][1] * 0.5], [q[1][0] * 0.5, q[1][1] * 0.5]]);
    let w = [half[0][0] * half[0][0], half[0][1] * half[1][0]];
    let exact = [w[0] / (w[0] + w[1]), w[1] / (w[0] + w[1])];
    let got = ffbs_midpoint(&m, &[], 40_000, 3);
    assert!((got[1] - exact[1]).abs() < 0.015, "{got:?} vs {exact:?}");
}

#[test]
fn bridge_with_others_matches_predictive_rejection() {
    let m = bridge_params();
    let others = vec![
        UnitPath { initial: 0, jumps: vec![(0.3, 1), (0.8, 0)], censor: Some(2.0) },
        UnitPath { initial: 1, jumps: vec![(0.45, 2)], censor: None },
        UnitPath { initial: 0, jumps: vec![(0.6, 1)], censor: Some(0.9) },
    ];
    let a = ffbs_midpoint(&m, &others, 20_000, 4);
    let b = rejection_midpoint(&m, &others, 20_000, 5);
    let tv = 0.5 * ((a[0] - b[0]).abs() + (a[1] - b[1]).abs());
    assert!(tv < 0.05, "tv {tv}: {a:?} vs {b:?}");
}

#[test]
fn lone_survivor_stays_alive_between_observations() {
    let m = survival_params();
    let rec = record("u", &[(0.0, 0), (2.0, 0)], 3.0, Terminal::Censored);
    let latents = PopulationTrajectory::new(vec![UnitPath { initial: 0, jumps: vec![], censor: Some(3.0) }]);
    let mut rng = ChaCha8Rng::seed_from_u64(6);
    let mut cache = LambdaCache::new();
    for _ in 0..100 {
        let p = resample_unit(0, &latents, &rec, &m, 2.0, &mut rng, &mut cache).unwrap();
        assert!(p.jumps.is_empty());
    }
}

#[test]
fn failure_is_placed_at_the_recorded_time() {
    let m = bridge_params();
    let panel = PanelData {
        units: vec![
            record("a", &[(0.0, 0), (1.0, 1)], 2.5, Terminal::Death { state: None }),
            record("b", &[(0.0, 1), (1.0, 0)], 2.5, Terminal::Death { state: Some(2) }),
            record("c", &[(0.0, 0), (1.0, 0), (2.0, 1)], 2.0, Terminal::Censored),
        ],
    };
    let g = m.structure().graph().clone();
    let mut latents = init_latent(&panel, &g).unwrap();
    assert!(log_density(&latents, &m).is_finite());
    let mut rng = ChaCha8Rng::seed_from_u64(7);
    let mut cache = LambdaCache::new();
    for _ in 0..200 {
        for (u, rec) in panel.units.iter().enumerate() {
            let p = resample_unit(u, &latents, rec, &m, 2.0, &mut rng, &mut cache).unwrap();
            for &(t, s) in &rec.observations {
                assert_eq!(p.state_at(t), s);
            }
            if rec.is_death() {
                assert_eq!(p.absorption_time(&g), Some(2.5));
            } else {
                assert!(!g.is_absorbing(p.final_state()));
            }
            latents.units[u] = p;
        }
        assert!(log_density(&latents, &m).is_finite());
    }
}

#[test]
fn lambda_draws_match_conjugate_moments() {
    let mut rng = ChaCha8Rng::seed_from_u64(8);
    let n = 100_000;
    let draws: Vec<f64> = (0..n).map(|_| draw_lambda(1.0, 1.0, 3, 2.0, 1.0, &mut rng).unwrap()).collect();
    let mean = draws.iter().sum::<f64>() / n as f64;
    // Gamma(4, 3): mean 4/3, sd 2/3
    let se = (2.0 / 3.0) / (n as f64).sqrt();
    assert!((mean - 4.0 / 3.0).abs() < 3.0 * se, "{mean}");
}

#[test]
fn lambda_update_uses_pair_events_and_integral() {
    // two deaths out of two units; harmonic survival with rho = 1
    let m = survival_params();
    let latents = PopulationTrajectory::new(vec![
        UnitPath { initial: 0, jumps: vec![(1.0, 1)], censor: None },
        UnitPath { initial: 0, jumps: vec![(2.0, 1)], censor: None },
    ]);
    let prior = PriorSpec::default_for(m.structure());
    // integral: 1 * (psi(3) - psi(1)) + 1 * (psi(2) - psi(1)) = 1.5 + 1
    let (shape, rate) = (1.0 + 2.0, 1.0 + 2.5);
    let mut rng = ChaCha8Rng::seed_from_u64(9);
    let n = 50_000;
    let mean = (0..n).map(|_| update_lambda(0, &latents, &m, &prior, &mut rng).unwrap()).sum::<f64>() / n as f64;
    let se = (shape as f64).sqrt() / rate / (n as f64).sqrt();
    assert!((mean - shape / rate).abs() < 3.0 * se, "{mean}");
}

#[test]
fn empty_latents_give_the_prior() {
    let m = survival_params();
    let latents = PopulationTrajectory::new(vec![UnitPath { initial: 0, jumps: vec![], censor: Some(0.0) }]);
    let mut prior = PriorSpec::default_for(m.structure());
    prior.lambda_shape[0] = 2.0;
    prior.lambda_rate[0] = 4.0;
    let mut rng = ChaCha8Rng::seed_from_u64(10);
    let n = 50_000;
    let mean = (0..n).map(|_| update_lambda(0, &latents, &m, &prior, &mut rng).unwrap()).sum::<f64>() / n as f64;
    assert!((mean - 0.5).abs() < 3.0 * (2f64.sqrt() / 4.0) / (n as f64).sqrt());
}

#[test]
fn alpha_draws_match_dirichlet_moments() {
    let s = structure(BuiltinGraph::Cav, Some(vec![vec![0, 1, 2], vec![3]]));
    let m = ModelParams::new(s.clone(), 1.0).unwrap();
    let mild = s.groups().iter().position(|g| g.source == 1 && g.edges.len() == 2).unwrap();
    // three Mild -> NoCAV moves and one Mild -> Severe move at distinct times
    let latents = PopulationTrajectory::new(vec![
        UnitPath { initial: 1, jumps: vec![(1.0, 0)], censor: Some(5.0) },
        UnitPath { initial: 1, jumps: vec![(2.0, 0)], censor: Some(5.0) },
        UnitPath { initial: 1, jumps: vec![(3.0, 0)], censor: Some(5.0) },
        UnitPath { initial: 1, jumps: vec![(4.0, 2)], censor: Some(5.0) },
    ]);
    let mut prior = PriorSpec::default_for(&s);
    prior.dirichlet[mild] = vec![2.0, 8.0];
    let mut rng = ChaCha8Rng::seed_from_u64(11);
    let n = 50_000;
    let mean = (0..n).map(|_| update_alpha(mild, &latents, &m, &prior, &mut rng).unwrap()[0]).sum::<f64>() / n as f64;
    let sd = ((5.0 * 9.0) / (14.0f64 * 14.0 * 15.0)).sqrt();
    assert!((mean - 5.0 / 14.0).abs() < 3.0 * sd / (n as f64).sqrt(), "{mean}");
    assert_eq!(draw_dirichlet(&[3.0], &mut rng).unwrap(), vec![1.0]);
}

#[test]
fn erosion_attribution_splits_single_moves() {
    let mut m = survival_params();
    m.set_erosion(0, 1.0).unwrap();
    let latents = PopulationTrajectory::new(vec![UnitPath { initial: 0, jumps: vec![(1.0, 1)], censor: None }]);
    let data = CompleteData::new(&latents, &m).unwrap();
    let mut rng = ChaCha8Rng::seed_from_u64(12);
    let n = 20_000;
    let pair = (0..n).map(|_| attribute_events(&data, &m, &mut rng).unwrap().pair_events[0]).sum::<u64>();
    // lone unit: measure part 1, erosion 1
    let frac = pair as f64 / n as f64;
    assert!((frac - 0.5).abs() < 0.02, "{frac}");
}

#[test]
fn gamma_step_zero_always_accepts() {
    let m = illness_death_params(0.5, 0.2, 0.7, 1.71);
    let latents = PopulationTrajectory::new(vec![
        UnitPath { initial: 0, jumps: vec![(1.0, 2)], censor: None },
        UnitPath { initial: 1, jumps: vec![(2.0, 2)], censor: None },
    ]);
    let data = CompleteData::new(&latents, &m).unwrap();
    let mut p = m.clone();
    let mut rng = ChaCha8Rng::seed_from_u64(13);
    let ll = data.pair_log_likelihood(&p, 1);
    for _ in 0..50 {
        let (v, acc, _) = gamma_step(&data, &mut p, 1, 1, 0.0, ll, &mut rng).unwrap();
        assert!(acc);
        assert_eq!(v, 1.71);
    }
}

#[test]
fn gamma_chain_matches_grid_posterior() {
    let m = illness_death_params(0.5, 0.8, 0.7, 1.0);
    let latents = PopulationTrajectory::new(vec![
        UnitPath { initial: 0, jumps: vec![(1.0, 2)], censor: None },
        UnitPath { initial: 1, jumps: vec![(2.0, 2)], censor: None },
    ]);
    let data = CompleteData::new(&latents, &m).unwrap();
    let (pair, state) = (1, 1);
    // grid posterior of ln gamma
    let (lo, hi, bins) = (-3.0, 3.0, 24);
    let width = (hi - lo) / bins as f64;
    let mut grid = vec![0.0; bins];
    let sub = 40;
    for (b, g) in grid.iter_mut().enumerate() {
        for k in 0..sub {
            let x = lo + width * (b as f64 + (k as f64 + 0.5) / sub as f64);
            let mut p = m.clone();
            p.set_gamma(pair, state, x.exp()).unwrap();
            *g += (data.pair_log_likelihood(&p, pair) - 0.5 * x * x).exp();
        }
    }
    let total: f64 = grid.iter().sum();
    grid.iter_mut().for_each(|g| *g /= total);

    let mut p = m.clone();
    let mut rng = ChaCha8Rng::seed_from_u64(14);
    let mut ll = data.pair_log_likelihood(&p, pair);
    let mut hist = vec![0.0; bins];
    let n = 200_000;
    for _ in 0..n {
        let (v, _, new_ll) = gamma_step(&data, &mut p, pair, state, 0.8, ll, &mut rng).unwrap();
        ll = new_ll;
        let b = ((v.ln() - lo) / width).floor();
        if b >= 0.0 && (b as usize) < bins {
            hist[b as usize] += 1.0 / n as f64;
        }
    }
    let tv: f64 = 0.5 * grid.iter().zip(&hist).map(|(a, b)| (a - b).abs()).sum::<f64>();
    assert!(tv < 0.05, "tv {tv}");
}

fn small_panel(seed: u64) -> (ModelParams, PanelData) {
    let m = illness_death_params(0.5, 0.2, 0.7, 1.71);
    let mut initial = vec![0usize; 12];
    initial.extend(vec![1usize; 8]);
    let t = simulate_population(&initial, &m, f64::INFINITY, seed).unwrap();
    let panel = PanelData::from_trajectory(&t, m.structure().graph(), 1.0).unwrap();
    (m, panel)
}

#[test]
fn chain_is_deterministic_and_honours_records() {
    let (m, panel) = small_panel(15);
    let prior = PriorSpec::default_for(m.structure());
    let config = McmcConfig { iterations: 30, burn_in: 10, latent_period: 1, seed: 5, ..Default::default() };
    let obs = Observations::Panel(panel);
    let a = run_chain(&obs, &m, &prior, &config).unwrap();
    let b = run_chain(&obs, &m, &prior, &config).unwrap();
    assert_eq!(a.values, b.values);
    assert_eq!(a.n_draws(), 20);
    assert!(!a.latents.is_empty());
    let c = run_chain(&obs, &m, &prior, &McmcConfig { seed: 6, ..config }).unwrap();
    assert_ne!(a.values, c.values);
}

#[test]
fn complete_data_skips_latent_resampling() {
    let m = illness_death_params(0.5, 0.2, 0.7, 1.71);
    let t = simulate_population(&[0; 20], &m, f64::INFINITY, 16).unwrap();
    let prior = PriorSpec::default_for(m.structure());
    let config = McmcConfig { iterations: 200, burn_in: 50, ..Default::default() };
    let draws = run_chain(&Observations::Complete(t.clone()), &m, &prior, &config).unwrap();
    assert!(draws.latents.iter().all(|s| *s.trajectory == t));
    assert!(draws.column("nu[1,2]").unwrap().iter().all(|&v| v > 0.0));
    assert_eq!(draws.acceptance_rates().len(), 2);
}

#[test]
fn init_latent_gives_finite_density() {
    let (m, panel) = small_panel(17);
    let latents = init_latent(&panel, m.structure().graph()).unwrap();
    assert!(log_density(&latents, &m).is_finite());
    let _ = Arc::new(latents);
}
