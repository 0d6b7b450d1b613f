use super::*;
use crate::bicop::Rotation;
use crate::models::{fd_wrap, from_fn, GaussianTarget};
use crate::vine::VineEdge;

fn pair_dist(sigma: f64, rho: f64) -> CopulaVariationalDist {
    let marginals = MarginalSet::new(vec![Marginal::gaussian(0.0, sigma); 2]).unwrap();
    let vine = Vine::new(2, vec![vec![VineEdge::new(0, 1, vec![], PairCopula::gaussian(rho).unwrap())]]).unwrap();
    CopulaVariationalDist::new(marginals, vine).unwrap()
}

fn quick_config() -> CviConfig {
    CviConfig {
        m: 256,
        m_eval: 20_000,
        inner_max_iters: 400,
        ..CviConfig::default()
    }
}

#[test]
fn robbins_monro_schedule() {
    let rule = StepRule::RobbinsMonro { a: 1.0, b: 0.0, gamma: 1.0 };
    let (step, _) = step_size(&rule, 4, &[1.0, -2.0], StepState::default());
    assert_eq!(step, vec![0.25, -0.5]);
}

#[test]
fn adam_first_step_has_size_alpha() {
    let rule = StepRule::default();
    let (step, state) = step_size(&rule, 1, &[3.0, -1e-3, 0.0], StepState::default());
    assert!((step[0] - 0.01).abs() < 1e-9);
    assert!((step[1] + 0.01).abs() < 1e-7);
    assert_eq!(step[2], 0.0);
    assert_eq!(state.first.len(), 3);
}

#[test]
fn robbins_monro_partial_sums() {
    let rule = StepRule::RobbinsMonro { a: 1.0, b: 0.0, gamma: 0.6 };
    let (mut s1, mut s2) = (0.0, 0.0);
    let mut checkpoints = Vec::new();
    for t in 1..=1_000_000usize {
        let rho = step_size(&rule, t, &[1.0], StepState::default()).0[0];
        s1 += rho;
        s2 += rho * rho;
        if t.is_power_of_two() || t == 1_000_000 {
            checkpoints.push((t, s1, s2));
        }
    }
    // Σρ_t keeps growing like N^0.4 / 0.4 while Σρ_t² stays below ζ(1.2)
    let (_, last1, last2) = *checkpoints.last().unwrap();
    assert!(last1 > 0.9 * 1e6f64.powf(0.4) / 0.4);
    let zeta_1_2 = 5.591_582_441_177_751;
    assert!(last2 < zeta_1_2);
    let growth: Vec<f64> = checkpoints.windows(2).map(|w| w[1].1 - w[0].1).collect();
    let tails: Vec<f64> = checkpoints.windows(2).map(|w| w[1].2 - w[0].2).collect();
    assert!(growth.windows(2).skip(2).take(16).all(|g| g[1] > g[0]));
    assert!(tails.windows(2).skip(2).take(16).all(|g| g[1] < g[0]));
}

#[test]
fn config_defaults_and_validation() {
    let cfg: CviConfig = serde_json::from_str("{}").unwrap();
    assert_eq!(cfg, CviConfig::default());
    assert_eq!(cfg.m, 1024);
    assert_eq!(cfg.inner_max_iters, 2000);
    assert_eq!(cfg.outer_max_phases, 20);
    let cfg: CviConfig =
        serde_json::from_str(r#"{"estimator":"score","step_rule":{"rule":"robbins_monro","a":0.5,"b":10,"gamma":0.7}}"#).unwrap();
    assert_eq!(cfg.estimator, Estimator::Score);
    cfg.validate().unwrap();
    assert!(serde_json::from_str::<CviConfig>(r#"{"mm":3}"#).is_err());
    let bad = CviConfig {
        step_rule: StepRule::RobbinsMonro { a: 1.0, b: 0.0, gamma: 0.5 },
        ..CviConfig::default()
    };
    assert!(bad.validate().is_err());
    let bad = CviConfig {
        estimator: Estimator::Score,
        m: 1,
        ..CviConfig::default()
    };
    assert!(bad.validate().is_err());
}

#[test]
fn single_phase_is_mean_field_vi() {
    let p = GaussianTarget::correlated_pair(0.8).unwrap();
    let cfg = CviConfig {
        outer_max_phases: 1,
        inner_max_iters: 1500,
        ..quick_config()
    };
    let dist0 = pair_dist(1.0, 0.0);
    let (dist, trace) = fit(&dist0, &p, &cfg).unwrap();
    assert_eq!(trace.phases.len(), 1);
    assert_eq!(trace.phases[0].kind, PhaseKind::Lambda);
    assert!(dist.vine.is_independence());
    // optimal mean-field scale is the inverse square root of the precision diagonal
    for m in dist.marginals.iter() {
        assert!((m.sigma() - 0.6).abs() < 0.03, "{}", m.sigma());
    }
}

#[test]
fn copula_starts_near_independence() {
    let configured = Vine::new(
        3,
        vec![
            vec![
                VineEdge::new(0, 1, vec![], PairCopula::clayton(2.0, Rotation::R90).unwrap()),
                VineEdge::new(1, 2, vec![], PairCopula::student_t(0.5, 8.0).unwrap()),
            ],
            vec![VineEdge::new(0, 2, vec![1], PairCopula::joe(2.0, Rotation::R180).unwrap())],
        ],
    )
    .unwrap();
    let start = independence_start(&configured).unwrap();
    assert!(start.is_independence());
    let switched = switch_families(&start, &configured, 0.01).unwrap();
    let taus: Vec<f64> = switched.edges().map(|e| e.pc.tau()).collect();
    for (t, want) in taus.iter().zip([-0.01, 0.01, 0.01]) {
        assert!((t - want).abs() < 1e-7, "{taus:?}");
    }
    assert_eq!(switched.edge(1).pc.theta[1], 8.0);
    for (a, b) in switched.edges().zip(configured.edges()) {
        assert_eq!((a.pc.family, a.pc.rotation), (b.pc.family, b.pc.rotation));
    }
}

#[test]
fn phases_touch_only_their_block() {
    let p = GaussianTarget::correlated_pair(0.6).unwrap();
    let cfg = CviConfig {
        inner_max_iters: 30,
        ..quick_config()
    };
    let mut dist = pair_dist(0.7, 0.2);
    let mut seeds = sample_rng(1, BATCH_SEED_STREAM);
    for kind in [PhaseKind::Lambda, PhaseKind::Eta] {
        let (lambda, eta) = (dist.lambda(), dist.eta());
        let mut block = Block {
            kind,
            state: StepState::default(),
            t: 0,
        };
        let (iters, _) = run_phase(&mut dist, &p, &cfg, &mut block, &mut seeds, 0).unwrap();
        assert!(iters > 0);
        let bits = |v: Vec<f64>| v.iter().map(|x| x.to_bits()).collect::<Vec<_>>();
        match kind {
            PhaseKind::Lambda => {
                assert_eq!(bits(dist.eta()), bits(eta));
                assert_ne!(dist.lambda(), lambda);
            }
            PhaseKind::Eta => {
                assert_eq!(bits(dist.lambda()), bits(lambda));
                assert_ne!(dist.eta(), eta);
            }
        }
    }
}

fn three_dim_problem() -> (CopulaVariationalDist, GaussianTarget) {
    let p = GaussianTarget::new(
        vec![0.5, -0.5, 0.0],
        vec![vec![1.0, 0.6, 0.3], vec![0.6, 1.0, 0.5], vec![0.3, 0.5, 1.0]],
    )
    .unwrap();
    let vine = Vine::dvine(3, 2, |_, _, _| PairCopula::gaussian(0.1).unwrap())
        .unwrap()
        .pin_independence(&[(0, 2)])
        .unwrap();
    (CopulaVariationalDist::new(MarginalSet::standard_normal(3), vine).unwrap(), p)
}

#[test]
fn frozen_edges_never_move_and_fits_reproduce() {
    let (dist0, p) = three_dim_problem();
    let cfg = CviConfig {
        outer_max_phases: 4,
        inner_max_iters: 100,
        ..quick_config()
    };
    let (a, ta) = fit(&dist0, &p, &cfg).unwrap();
    let (b, tb) = fit(&dist0, &p, &cfg).unwrap();
    assert_eq!(ta.without_timing(), tb.without_timing());
    assert_eq!(a, b);
    let id = a.vine.find_edge(0, 2).unwrap();
    assert_eq!(a.vine.edge(id), dist0.vine.edge(id));
    assert_eq!(ta.phases.len(), 4);
    for (i, ph) in ta.phases.iter().enumerate() {
        assert_eq!(ph.kind, if i % 2 == 0 { PhaseKind::Lambda } else { PhaseKind::Eta });
        assert!(ph.elbo_after >= ph.elbo_before - 2.0 * ph.std_err_after.max(ph.std_err_before));
    }
    let other = fit(&dist0, &p, &CviConfig { seed: 9, ..cfg }).unwrap().0;
    assert_ne!(other, a);
}

#[test]
fn stationary_start_converges_in_one_cycle() {
    let p = GaussianTarget::correlated_pair(0.8).unwrap();
    let cfg = CviConfig {
        init_independence: false,
        ..quick_config()
    };
    let (dist, trace) = fit(&pair_dist(1.0, 0.8), &p, &cfg).unwrap();
    assert!(trace.converged);
    assert_eq!(trace.phases.len(), 2);
    let (first, last) = (&trace.phases[0], &trace.phases[1]);
    assert!((last.elbo_after - first.elbo_before).abs() < cfg.outer_tol_elbo);
    assert!((dist.vine.edge(0).pc.theta[0] - 0.8).abs() < 0.01);
}

#[test]
fn score_estimator_also_fits() {
    let p = GaussianTarget::new(vec![1.0], vec![vec![0.25]]).unwrap();
    let dist0 = CopulaVariationalDist::mean_field(MarginalSet::standard_normal(1));
    let cfg = CviConfig {
        estimator: Estimator::Score,
        outer_max_phases: 1,
        inner_max_iters: 1500,
        step_rule: StepRule::Adam {
            alpha: 0.02,
            beta1: 0.9,
            beta2: 0.999,
            eps: 1e-8,
        },
        ..quick_config()
    };
    let (dist, _) = fit(&dist0, &p, &cfg).unwrap();
    let m = dist.marginals.get(0);
    assert!((m.mu() - 1.0).abs() < 0.05 && (m.sigma() - 0.5).abs() < 0.05, "{m:?}");
}

#[test]
fn failures_keep_the_last_finite_state() {
    // the density is undefined beyond z = 4, which the fit is pushed towards
    let model = fd_wrap(from_fn(1, |z| {
        if z[0] > 4.0 {
            Ok(f64::NAN)
        } else {
            Ok(5.0 * z[0])
        }
    }));
    let mut dist = CopulaVariationalDist::mean_field(MarginalSet::new(vec![Marginal::gaussian(0.0, 0.3)]).unwrap());
    let cfg = CviConfig {
        step_rule: StepRule::Adam {
            alpha: 0.2,
            beta1: 0.9,
            beta2: 0.999,
            eps: 1e-8,
        },
        m_eval: 100,
        ..quick_config()
    };
    let err = fit_in_place(&mut dist, &model, &cfg).unwrap_err();
    match err {
        Error::Optimization { phase, iteration, .. } => {
            assert_eq!(phase, 0);
            assert!(iteration > 1);
        }
        other => panic!("{other:?}"),
    }
    assert!(dist.lambda().iter().all(|x| x.is_finite()));
    assert!(dist.marginals.get(0).mu() < 4.0);
}

#[test]
fn dimension_mismatch_is_rejected() {
    let p = GaussianTarget::correlated_pair(0.5).unwrap();
    let dist = CopulaVariationalDist::mean_field(MarginalSet::standard_normal(3));
    assert!(matches!(fit(&dist, &p, &quick_config()), Err(Error::Structure(_))));
}

#[test]
fn random_marginals_are_seeded() {
    assert_eq!(random_marginals(4, 2, 1.0), random_marginals(4, 2, 1.0));
    assert_ne!(random_marginals(4, 2, 1.0), random_marginals(4, 3, 1.0));
    assert!(random_marginals(4, 2, 1.0).iter().all(|m| m.sigma() == 1.0));
}
