mod common;

use std::sync::Arc;

use common::*;
use msurv::estimators::{
    aalen_johansen, default_grid, exact_transitions, expected_survival, kaplan_meier, marginal_survival,
    posterior_survival, quantile, survival_records, Interpolation, PredictiveOptions, SurvivalCurve, SurvivalRecord,
};
use msurv::io::PanelData;
use msurv::mcmc::{encode_params, parameter_names, run_chain, LatentSnapshot, McmcConfig, Observations, PosteriorDraws, PriorSpec};
use msurv::measure::ModelParams;
use msurv::predictive::{Conditioning, LambdaCache};
use msurv::statespace::{BuiltinGraph, TransitionGraph};
use msurv::trajectory::{simulate_population, PopulationTrajectory, UnitPath};
use proptest::prelude::*;

fn rec(time: f64, failed: bool) -> SurvivalRecord {
    SurvivalRecord { time, failed }
}

#[test]
fn kaplan_meier_hand_values() {
    let km = kaplan_meier(&[rec(1.0, true), rec(2.0, true), rec(3.0, false)]).unwrap();
    assert_eq!(km.times, vec![0.0, 1.0, 2.0]);
    assert!((km.value_at(1.0).unwrap() - 2.0 / 3.0).abs() < 1e-15);
    assert!((km.value_at(2.5).unwrap() - 1.0 / 3.0).abs() < 1e-15);
    assert_eq!(km.value_at(0.999).unwrap(), 1.0);

    let censored = kaplan_meier(&[rec(1.0, false), rec(4.0, false)]).unwrap();
    assert_eq!(censored.survival, vec![1.0]);
    assert_eq!(censored.value_at(10.0), Some(1.0));

    assert!(kaplan_meier(&[]).is_err());
    assert!(kaplan_meier(&[rec(0.0, true)]).is_err());
}

#[test]
fn kaplan_meier_without_censoring_is_empirical() {
    let times = [0.3, 1.2, 1.2, 2.0, 4.5, 5.0, 7.7];
    let km = kaplan_meier(&times.map(|t| rec(t, true))).unwrap();
    for t in [0.1, 0.3, 1.0, 1.2, 3.0, 5.0, 8.0] {
        let ecdf = times.iter().filter(|&&s| s <= t).count() as f64 / times.len() as f64;
        assert!((km.value_at(t).unwrap() - (1.0 - ecdf)).abs() < 1e-12, "t = {t}");
    }
}

fn two_state_data() -> (PopulationTrajectory, Vec<SurvivalRecord>) {
    let rows = [(0.4, true), (0.9, false), (1.3, true), (1.3, true), (2.2, false), (2.5, true), (3.1, false)];
    let units = rows
        .iter()
        .map(|&(t, failed)| {
            if failed {
                UnitPath { initial: 0, jumps: vec![(t, 1)], censor: None }
            } else {
                UnitPath { initial: 0, jumps: vec![], censor: Some(t) }
            }
        })
        .collect();
    (PopulationTrajectory::new(units), rows.iter().map(|&(t, f)| rec(t, f)).collect())
}

#[test]
fn aalen_johansen_equals_kaplan_meier_on_survival_data() {
    let g = TransitionGraph::builtin(BuiltinGraph::Survival).unwrap();
    let (data, records) = two_state_data();
    let aj = aalen_johansen(&data, &g, Some(0)).unwrap().survival(&g);
    let km = kaplan_meier(&records).unwrap();
    for t in [0.0, 0.4, 0.5, 1.3, 2.4, 2.5, 4.0] {
        assert_eq!(aj.value_at(t), km.value_at(t), "t = {t}");
    }
}

#[test]
fn aalen_johansen_single_unit_path() {
    let g = TransitionGraph::builtin(BuiltinGraph::IllnessDeath).unwrap();
    let data = PopulationTrajectory::new(vec![UnitPath { initial: 0, jumps: vec![(1.0, 1), (2.5, 2)], censor: None }]);
    let occ = aalen_johansen(&data, &g, None).unwrap();
    assert_eq!(occ.times, vec![0.0, 1.0, 2.5]);
    assert_eq!(occ.occupancy, vec![vec![1.0, 0.0, 0.0], vec![0.0, 1.0, 0.0], vec![0.0, 0.0, 1.0]]);
    assert_eq!(occ.at(1.7).unwrap(), &[0.0, 1.0, 0.0]);
}

#[test]
fn aalen_johansen_refuses_intermittent_panels() {
    let m = illness_death_params(0.5, 0.2, 0.7, 1.71);
    let g = m.structure().graph();
    let t = simulate_population(&[0; 12], &m, f64::INFINITY, 3).unwrap();
    let panel = PanelData::from_trajectory(&t, g, 0.5).unwrap();
    assert!(exact_transitions(&panel, g).is_err());

    let s = survival_params();
    let sg = s.structure().graph();
    let t = simulate_population(&[0; 12], &s, f64::INFINITY, 3).unwrap();
    let panel = PanelData::from_trajectory(&t, sg, f64::INFINITY).unwrap();
    let exact = exact_transitions(&panel, sg).unwrap();
    let aj = aalen_johansen(&exact, sg, Some(0)).unwrap().survival(sg);
    let km = kaplan_meier(&survival_records(&panel)).unwrap();
    assert_eq!(aj.survival, km.survival);
}

/// With vanishing shape the new unit's co-transition kernels at the others'
/// event times are the Aalen-Johansen increments `I + dA`.
#[test]
fn vanishing_shape_atoms_match_aalen_johansen() {
    let s = structure(BuiltinGraph::IllnessDeath, None);
    let mut m = ModelParams::new(s.clone(), 1e-6).unwrap();
    for p in 0..s.pairs().len() {
        m.set_nu(p, 0.8).unwrap();
    }
    let path = |jumps: Vec<(f64, usize)>, censor: Option<f64>| UnitPath { initial: 0, jumps, censor };
    let data = PopulationTrajectory::new(vec![
        path(vec![(0.5, 1), (1.7, 2)], None),
        path(vec![(0.9, 2)], None),
        path(vec![(1.1, 1)], Some(2.4)),
        path(vec![(1.4, 1), (2.0, 2)], None),
        path(vec![], Some(1.9)),
    ]);
    let g = s.graph();
    let aj = aalen_johansen(&data, g, Some(0)).unwrap();

    let mut cache = LambdaCache::new();
    let cond = Conditioning::new(&data.units, None, &m, &mut cache).unwrap();
    let n = g.n_states();
    let mut p = vec![0.0; n];
    p[0] = 1.0;
    for (k, atom) in cond.atoms().iter().enumerate() {
        let mut next = vec![0.0; n];
        for from in 0..n {
            if p[from] == 0.0 {
                continue;
            }
            if g.is_absorbing(from) {
                next[from] += p[from];
                continue;
            }
            let dist = cond.atom_distribution(k, from, &mut cache).unwrap();
            next[from] += p[from] * dist.stay;
            for &(to, q) in &dist.moves {
                next[to] += p[from] * q;
            }
        }
        p = next;
        let target = aj.at(atom.time).unwrap();
        for s in 0..n {
            assert!((p[s] - target[s]).abs() < 1e-4, "time {} state {s}: {} vs {}", atom.time, p[s], target[s]);
        }
    }
    assert!(p[2] > 0.0);
}

#[test]
fn expected_survival_values() {
    let flat = SurvivalCurve {
        times: default_grid(4.0, 9),
        survival: vec![1.0; 9],
        bands: None,
        interpolation: Interpolation::Linear,
        baseline_state: None,
    };
    assert!((expected_survival(&flat, 4.0).unwrap() - 4.0).abs() < 1e-14);
    assert!((expected_survival(&flat, 2.2).unwrap() - 2.2).abs() < 1e-14);
    assert!(expected_survival(&flat, 4.5).is_err());

    let grid = default_grid(40.0, 40_001);
    let exp = SurvivalCurve {
        survival: grid.iter().map(|t| (-t).exp()).collect(),
        times: grid,
        bands: None,
        interpolation: Interpolation::Linear,
        baseline_state: None,
    };
    // trapezoid error h^2/12 plus truncation e^-40
    assert!((expected_survival(&exp, 40.0).unwrap() - 1.0).abs() < 1e-6);

    let km = kaplan_meier(&[rec(1.0, true), rec(2.0, true), rec(3.0, false)]).unwrap();
    assert!((expected_survival(&km, 3.0).unwrap() - 2.0).abs() < 1e-14);
}

#[test]
fn marginal_survival_matches_lone_simulation() {
    let s = survival_params();
    let grid = default_grid(3.0, 7);
    let curve = marginal_survival(&s, 0, &grid).unwrap();
    for (t, v) in grid.iter().zip(&curve.survival) {
        assert!((v - (-t).exp()).abs() < 1e-12);
    }

    let m = illness_death_params(0.5, 0.2, 0.7, 1.71);
    let g = m.structure().graph();
    let grid = default_grid(10.0, 11);
    for baseline in [0, 1] {
        let curve = marginal_survival(&m, baseline, &grid).unwrap();
        let deaths: Vec<f64> = (0..20_000)
            .map(|seed| {
                let t = simulate_population(&[baseline], &m, f64::INFINITY, seed).unwrap();
                t.units[0].absorption_time(g).unwrap()
            })
            .collect();
        for (k, &t) in grid.iter().enumerate() {
            let empirical = deaths.iter().filter(|&&d| d > t).count() as f64 / deaths.len() as f64;
            assert!((empirical - curve.survival[k]).abs() < 0.012, "baseline {baseline}, t {t}");
        }
    }
}

fn single_snapshot(params: &ModelParams, trajectory: PopulationTrajectory) -> PosteriorDraws {
    PosteriorDraws {
        template: params.clone(),
        names: parameter_names(params.structure()),
        iterations: vec![0],
        values: vec![encode_params(params)],
        accepted: vec![vec![]],
        step_sizes: vec![],
        latents: vec![LatentSnapshot { draw: 0, trajectory: Arc::new(trajectory) }],
    }
}

#[test]
fn predictive_survival_matches_stay_probability() {
    let m = survival_params();
    let others = simulate_population(&[0; 6], &m, f64::INFINITY, 11).unwrap();
    let draws = single_snapshot(&m, others.clone());
    let grid = default_grid(3.0, 13);
    let options = PredictiveOptions { paths: 40_000, at_time: None, seed: 2 };
    let curve = posterior_survival(&draws, 0, &grid, &options).unwrap();
    let mut cache = LambdaCache::new();
    let cond = Conditioning::from_trajectory(&others, &m).unwrap();
    for (k, &t) in grid.iter().enumerate() {
        let exact = cond.stay_probability(0, 0.0, t, &mut cache).unwrap();
        assert!((curve.survival[k] - exact).abs() < 0.01, "t {t}: {} vs {exact}", curve.survival[k]);
    }

    // conditioning on survival to t0 divides by S(t0)
    let t0 = 1.0;
    let cond_curve = posterior_survival(&draws, 0, &grid, &PredictiveOptions { at_time: Some(t0), ..options }).unwrap();
    let s0 = cond.stay_probability(0, 0.0, t0, &mut cache).unwrap();
    for (k, &t) in grid.iter().enumerate() {
        let exact = if t <= t0 { 1.0 } else { cond.stay_probability(0, 0.0, t, &mut cache).unwrap() / s0 };
        assert!((cond_curve.survival[k] - exact).abs() < 0.015, "t {t}");
    }
}

fn small_chain() -> (ModelParams, PosteriorDraws) {
    let m = illness_death_params(0.5, 0.2, 0.7, 1.71);
    let mut initial = vec![0usize; 15];
    initial.extend(vec![1usize; 10]);
    let t = simulate_population(&initial, &m, f64::INFINITY, 21).unwrap();
    let panel = PanelData::from_trajectory(&t, m.structure().graph(), 1.0).unwrap();
    let prior = PriorSpec::default_for(m.structure());
    let config = McmcConfig { iterations: 60, burn_in: 20, latent_snapshots: 20, seed: 3, ..Default::default() };
    let draws = run_chain(&Observations::Panel(panel), &m, &prior, &config).unwrap();
    (m, draws)
}

#[test]
fn posterior_survival_shape_and_reproducibility() {
    let (_, draws) = small_chain();
    let grid = default_grid(8.0, 41);
    let options = PredictiveOptions { paths: 100, at_time: None, seed: 9 };
    let curve = posterior_survival(&draws, 0, &grid, &options).unwrap();
    curve.validate().unwrap();
    assert_eq!(curve.survival[0], 1.0);
    assert!(curve.survival[40] < 1.0);
    let again = posterior_survival(&draws, 0, &grid, &options).unwrap();
    assert_eq!(curve, again);
    let at_zero = posterior_survival(&draws, 0, &grid, &PredictiveOptions { at_time: Some(0.0), ..options.clone() })
        .unwrap();
    assert_eq!(curve, at_zero);

    let point = posterior_survival(&draws, 1, &[0.0], &options).unwrap();
    assert_eq!(point.survival, vec![1.0]);
    assert!(posterior_survival(&draws, 2, &grid, &options).is_err());
    assert!(posterior_survival(&draws, 0, &[0.5, 1.0], &options).is_err());
}

proptest! {
    #[test]
    fn quantiles_are_ordered(mut v in proptest::collection::vec(0.0f64..1.0, 1..50)) {
        v.sort_by(f64::total_cmp);
        let (a, b, c) = (quantile(&v, 0.05), quantile(&v, 0.5), quantile(&v, 0.95));
        prop_assert!(v[0] <= a && a <= b && b <= c && c <= v[v.len() - 1]);
    }

    #[test]
    fn expected_survival_is_monotone_under_domination(
        base in proptest::collection::vec(0.0f64..1.0, 2..20),
        lift in proptest::collection::vec(0.0f64..0.3, 20),
    ) {
        let mut lower = base.clone();
        lower.sort_by(|a, b| b.total_cmp(a));
        lower[0] = 1.0;
        let upper: Vec<f64> = lower.iter().zip(&lift).map(|(v, l)| (v + l).min(1.0)).collect();
        let mut upper_mono = upper.clone();
        for k in 1..upper_mono.len() {
            upper_mono[k] = upper_mono[k].min(upper_mono[k - 1]).max(lower[k]);
        }
        let grid = default_grid(5.0, lower.len());
        let mk = |s: Vec<f64>| SurvivalCurve {
            times: grid.clone(), survival: s, bands: None, interpolation: Interpolation::Linear, baseline_state: None,
        };
        let lo = expected_survival(&mk(lower), 5.0).unwrap();
        let hi = expected_survival(&mk(upper_mono), 5.0).unwrap();
        prop_assert!(hi >= lo - 1e-12);
    }
}
