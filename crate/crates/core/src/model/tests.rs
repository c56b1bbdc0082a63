use std::f64::consts::PI;

use super::*;
use crate::numerics::{finite_diff_check, gaussian_sample};

fn rng(k: u64) -> RngStream {
    RngStream::derive(7, purpose::FIXTURE, &[k])
}

fn small_config(space: ActionSpace) -> ModelConfig {
    ModelConfig {
        latent_dim: 8,
        state_dim: 3,
        action_space: space,
        prior: PriorConfig::Unet { channels: 2, base_width: 4, multipliers: vec![1, 2], res_blocks: 1 },
        generator: GeneratorConfig::Transformer { hidden: 8, layers: 2, heads: 2, context: 4, z_tokens: 2 },
        returns: ReturnConfig::Mlp { hidden: 6 },
        return_variance: 0.25,
    }
}

/// Overwrites every parameter with `N(0, std^2)` draws so zero-initialised
/// layers are exercised too.
fn randomize(model: &mut LatentPlanModel, std: f64, seed: u64) {
    let mut r = rng(1000 + seed);
    for group in model.params.groups_mut() {
        for p in group.iter_mut() {
            for v in p.tensor.data_mut() {
                *v = std * r.standard_normal();
            }
        }
    }
}

fn random_traj(space: &ActionSpace, len: usize, r: &mut RngStream) -> Trajectory {
    let states = (0..len).map(|_| r.normal_vec(3)).collect();
    let actions = match space {
        ActionSpace::Discrete { n } => Actions::Discrete((0..len).map(|_| r.below(*n)).collect()),
        ActionSpace::Continuous { dim } => Actions::Continuous((0..len).map(|_| r.normal_vec(*dim)).collect()),
    };
    Trajectory { states, actions }
}

fn model_with(space: ActionSpace, seed: u64) -> LatentPlanModel {
    let mut m = LatentPlanModel::new(small_config(space), &mut rng(seed)).unwrap();
    randomize(&mut m, 0.4, seed);
    m
}

fn z(seed: u64) -> Tensor {
    gaussian_sample(&[8], &mut rng(500 + seed)).unwrap()
}

#[test]
fn identity_prior_passes_noise_through() {
    let mut cfg = small_config(ActionSpace::Continuous { dim: 2 });
    cfg.latent_dim = 2;
    cfg.prior = PriorConfig::Identity;
    cfg.generator = GeneratorConfig::Linear;
    let m = LatentPlanModel::new(cfg, &mut rng(0)).unwrap();
    let out = m.prior_transform(&Tensor::vector(vec![0.3, -1.2])).unwrap();
    assert_eq!(out.data(), &[0.3, -1.2]);
}

#[test]
fn unet_starts_as_identity() {
    let m = LatentPlanModel::new(small_config(ActionSpace::Discrete { n: 4 }), &mut rng(1)).unwrap();
    let z0 = z(1);
    assert_eq!(m.prior_transform(&z0).unwrap(), z0);
}

#[test]
fn res_mlp_starts_as_identity() {
    let mut cfg = small_config(ActionSpace::Discrete { n: 4 });
    cfg.prior = PriorConfig::ResMlp { hidden: 5, blocks: 2 };
    let m = LatentPlanModel::new(cfg, &mut rng(2)).unwrap();
    let z0 = z(2);
    assert_eq!(m.prior_transform(&z0).unwrap(), z0);
}

#[test]
fn unet_gradient_matches_finite_differences() {
    let m = model_with(ActionSpace::Discrete { n: 4 }, 3);
    assert_ne!(m.prior_transform(&z(3)).unwrap(), z(3));
    let f = |g: &mut Graph<'_>, v: &[Var]| {
        let p = Bound::copied(g, &m.params.prior, false);
        let out = prior::forward(g, &m.config.prior, &p, v[0]);
        let sq = g.square(out);
        Ok(g.sum(sq))
    };
    let err = finite_diff_check(f, &[z(3)], 1e-5).unwrap();
    assert!(err <= 1e-6, "{err}");
}

#[test]
fn prior_rejects_wrong_dimension() {
    let m = model_with(ActionSpace::Discrete { n: 4 }, 4);
    assert!(matches!(m.prior_transform(&Tensor::vector(vec![1.0; 7])), Err(Error::Shape(_))));
}

#[test]
fn action_distribution_is_deterministic() {
    let space = ActionSpace::Discrete { n: 5 };
    let m = model_with(space.clone(), 5);
    let traj = random_traj(&space, 6, &mut rng(6));
    let w = ContextWindow::from_trajectory(&traj, 5, 4);
    let a = m.action_distribution(&w, &z(5), None).unwrap();
    let b = m.action_distribution(&w, &z(5), None).unwrap();
    assert_eq!(a, b);
    let ActionDistribution::Categorical { probs } = a else { panic!("expected categorical") };
    assert!((probs.iter().sum::<f64>() - 1.0).abs() < 1e-12);
}

#[test]
fn long_context_equals_last_k_truncation() {
    let space = ActionSpace::Continuous { dim: 2 };
    let m = model_with(space.clone(), 7);
    let traj = random_traj(&space, 12, &mut rng(7));
    let long = ContextWindow::from_trajectory(&traj, 11, 12);
    let short = ContextWindow::from_trajectory(&traj, 11, 4);
    assert_eq!(
        m.action_distribution(&long, &z(7), None).unwrap(),
        m.action_distribution(&short, &z(7), None).unwrap()
    );
}

#[test]
fn steps_older_than_context_are_ignored() {
    let space = ActionSpace::Discrete { n: 3 };
    let m = model_with(space.clone(), 8);
    let traj = random_traj(&space, 10, &mut rng(8));
    let mut w = ContextWindow::from_trajectory(&traj, 9, 10);
    let before = m.action_distribution(&w, &z(8), None).unwrap();
    w.states[5] = vec![100.0, -50.0, 3.0];
    w.prev_actions[5] = Some(ActionValue::Discrete(2));
    w.prev_actions[0] = Some(ActionValue::Discrete(1));
    assert_eq!(before, m.action_distribution(&w, &z(8), None).unwrap());
    w.states[6] = vec![100.0, -50.0, 3.0];
    assert_ne!(before, m.action_distribution(&w, &z(8), None).unwrap());
}

#[test]
fn full_sequence_rows_equal_windowed_outputs() {
    let space = ActionSpace::Continuous { dim: 2 };
    let m = model_with(space.clone(), 9);
    let traj = random_traj(&space, 9, &mut rng(9));
    let enc = EncodedTrajectory::encode(&traj, &space, None).unwrap();
    let mut g = Graph::new();
    let p = Bound::new(&mut g, &m.params.generator, false);
    let zv = g.constant(z(9));
    let head = generator::forward(&mut g, &m.config.generator, &p, &enc.states, &enc.prev_actions, zv);
    let full = g.value(head).clone();
    for t in 0..9 {
        let w = ContextWindow::from_trajectory(&traj, t, 4);
        let ActionDistribution::Gaussian { mean } = m.action_distribution(&w, &z(9), None).unwrap() else {
            panic!("expected gaussian")
        };
        assert_eq!(&full.data()[t * 2..t * 2 + 2], mean.as_slice(), "step {t}");
    }
}

#[test]
fn action_distribution_errors() {
    let space = ActionSpace::Discrete { n: 3 };
    let m = model_with(space.clone(), 10);
    let empty = ContextWindow { states: vec![], prev_actions: vec![] };
    assert!(m.action_distribution(&empty, &z(10), None).is_err());
    let traj = random_traj(&space, 3, &mut rng(10));
    let w = ContextWindow::from_trajectory(&traj, 2, 3);
    assert!(matches!(m.action_distribution(&w, &Tensor::vector(vec![0.0; 3]), None), Err(Error::Shape(_))));
}

#[test]
fn single_step_at_the_mean_scores_minus_log_two_pi() {
    let space = ActionSpace::Continuous { dim: 2 };
    let m = model_with(space.clone(), 11);
    let mut traj = random_traj(&space, 1, &mut rng(11));
    let w = ContextWindow::from_trajectory(&traj, 0, 1);
    let ActionDistribution::Gaussian { mean } = m.action_distribution(&w, &z(11), None).unwrap() else {
        panic!("expected gaussian")
    };
    traj.actions = Actions::Continuous(vec![mean]);
    let enc = EncodedTrajectory::encode(&traj, &space, None).unwrap();
    let ll = m.traj_loglik(&enc, &z(11)).unwrap();
    assert!((ll + (2.0 * PI).ln()).abs() < 1e-12, "{ll}");
}

#[test]
fn uniform_logits_give_log_one_seventh_per_step() {
    let space = ActionSpace::Discrete { n: 7 };
    let mut m = model_with(space.clone(), 12);
    for name in ["head.w", "head.b"] {
        m.params.generator.get_mut(name).unwrap().data_mut().fill(0.0);
    }
    let traj = random_traj(&space, 3, &mut rng(12));
    let enc = EncodedTrajectory::encode(&traj, &space, None).unwrap();
    let ll = m.traj_loglik(&enc, &z(12)).unwrap();
    assert!((ll - 3.0 * (1.0f64 / 7.0).ln()).abs() < 1e-12);
}

#[test]
fn fresh_head_is_near_uniform() {
    let space = ActionSpace::Discrete { n: 7 };
    let m = LatentPlanModel::new(small_config(space.clone()), &mut rng(13)).unwrap();
    let traj = random_traj(&space, 3, &mut rng(13));
    let w = ContextWindow::from_trajectory(&traj, 2, 3);
    let ActionDistribution::Categorical { probs } = m.action_distribution(&w, &z(13), None).unwrap() else {
        panic!()
    };
    assert!(probs.iter().all(|p| (p - 1.0 / 7.0).abs() < 0.05));
}

#[test]
fn traj_loglik_rejects_mismatched_actions() {
    let m = model_with(ActionSpace::Discrete { n: 3 }, 14);
    let space = ActionSpace::Continuous { dim: 3 };
    let traj = random_traj(&space, 2, &mut rng(14));
    let enc = EncodedTrajectory::encode(&traj, &space, None).unwrap();
    assert!(m.traj_loglik(&enc, &z(14)).is_err());
}

#[test]
fn return_loglik_analytic_cases() {
    let mut m = model_with(ActionSpace::Discrete { n: 3 }, 15);
    m.config.return_variance = 1.0;
    let r = m.predict_return(&z(15)).unwrap();
    let ll = m.return_loglik(r, &z(15)).unwrap();
    assert!((ll + 0.5 * (2.0 * PI).ln()).abs() < 1e-12);
    let s2 = 0.25;
    m.config.return_variance = s2;
    let ll = m.return_loglik(r + s2.sqrt(), &z(15)).unwrap();
    assert!((ll - (-0.5 * (2.0 * PI * s2).ln() - 0.5)).abs() < 1e-12);
}

#[test]
fn loglik_gradients_in_z_match_finite_differences() {
    for (k, space) in [ActionSpace::Discrete { n: 4 }, ActionSpace::Continuous { dim: 2 }].into_iter().enumerate() {
        let m = model_with(space.clone(), 16 + k as u64);
        let traj = random_traj(&space, 6, &mut rng(16));
        let enc = EncodedTrajectory::encode(&traj, &space, None).unwrap();
        let traj_term = |g: &mut Graph<'_>, v: &[Var]| {
            let p = Bound::copied(g, &m.params.generator, false);
            generator::log_likelihood(g, &m.config.generator, &p, &enc, v[0])
        };
        let err = finite_diff_check(traj_term, &[z(16)], 1e-5).unwrap();
        assert!(err <= 1e-6, "traj {err}");
        let ret_term = |g: &mut Graph<'_>, v: &[Var]| {
            let p = Bound::copied(g, &m.params.returns, false);
            returns::log_likelihood(g, &m.config.returns, &p, v[0], 0.7, 0.25)
        };
        let err = finite_diff_check(ret_term, &[z(17)], 1e-5).unwrap();
        assert!(err <= 1e-6, "return {err}");
    }
}

#[test]
fn prior_only_score_is_minus_z0() {
    let space = ActionSpace::Discrete { n: 4 };
    let m = model_with(space.clone(), 18);
    let enc = EncodedTrajectory::encode(&random_traj(&space, 4, &mut rng(18)), &space, None).unwrap();
    let z0 = z(18);
    let s = m.posterior_score(&z0, &enc, 1.3, ScoreTerms::PRIOR_ONLY).unwrap();
    assert_eq!(s, z0.map(|v| -v));
}

#[test]
fn posterior_score_matches_finite_differences() {
    let space = ActionSpace::Continuous { dim: 2 };
    let m = model_with(space.clone(), 19);
    let enc = EncodedTrajectory::encode(&random_traj(&space, 5, &mut rng(19)), &space, None).unwrap();
    let z0 = z(19);
    let y = -0.4;
    let s = m.posterior_score(&z0, &enc, y, ScoreTerms::ALL).unwrap();
    let log_joint = |g: &mut Graph<'_>, v: &[Var]| {
        let ll = m.log_likelihood_graph(g, v[0], Some(&enc), Some(y))?;
        let sq = g.square(v[0]);
        let sq = g.sum(sq);
        let prior = g.scale(sq, -0.5);
        Ok(g.add(ll, prior))
    };
    let err = crate::numerics::compare_gradients(&log_joint, &[z0], &[s], 1e-5).unwrap();
    assert!(err <= 1e-6, "{err}");
}

#[test]
fn plan_score_weight_cases() {
    let space = ActionSpace::Discrete { n: 4 };
    let m = model_with(space.clone(), 20);
    let enc = EncodedTrajectory::encode(&random_traj(&space, 4, &mut rng(20)), &space, None).unwrap();
    let z0 = z(20);
    assert_eq!(m.plan_score(&z0, 0.9, 0.0).unwrap(), z0.map(|v| -v));
    let returns_only = ScoreTerms { generator: false, returns: true };
    let a = m.plan_score(&z0, 0.9, 1.0).unwrap();
    let b = m.posterior_score(&z0, &enc, 0.9, returns_only).unwrap();
    assert_eq!(a.data(), b.data());
    assert!(m.plan_score(&z0, 0.9, -1.0).is_err());
}

#[test]
fn guided_linear_score_matches_closed_form() {
    let d = 3;
    let cfg = ModelConfig {
        latent_dim: d,
        state_dim: 1,
        action_space: ActionSpace::Continuous { dim: 1 },
        prior: PriorConfig::Identity,
        generator: GeneratorConfig::Linear,
        returns: ReturnConfig::Linear,
        return_variance: 0.5,
    };
    let mut m = LatentPlanModel::new(cfg, &mut rng(21)).unwrap();
    let a = [0.6, -0.3, 1.1];
    let b = 0.2;
    m.params.returns.get_mut("out.w").unwrap().data_mut().copy_from_slice(&a);
    m.params.returns.get_mut("out.b").unwrap().data_mut()[0] = b;
    let z0 = Tensor::vector(vec![0.4, -1.0, 0.25]);
    let (y, w, s2) = (1.5, 2.0, 0.5);
    let s = m.plan_score(&z0, y, w).unwrap();
    // Precision I + w a a^T / s2 and mean solving Lambda mu = w a (y - b) / s2.
    let az: f64 = a.iter().zip(z0.data()).map(|(x, y)| x * y).sum();
    for i in 0..d {
        let expected = w * a[i] * (y - b) / s2 - z0.data()[i] - w * a[i] * az / s2;
        assert!((s.data()[i] - expected).abs() < 1e-12);
    }
}

#[test]
fn likelihood_terms_read_only_their_own_parameters() {
    let space = ActionSpace::Discrete { n: 4 };
    let m = model_with(space.clone(), 22);
    let enc = EncodedTrajectory::encode(&random_traj(&space, 4, &mut rng(22)), &space, None).unwrap();
    let zz = z(22);
    let traj_ll = m.traj_loglik(&enc, &zz).unwrap();
    let ret_ll = m.return_loglik(0.3, &zz).unwrap();

    let mut poisoned = m.clone();
    poisoned.params.returns.scale(f64::NAN);
    assert_eq!(poisoned.traj_loglik(&enc, &zz).unwrap(), traj_ll);
    let mut poisoned = m.clone();
    poisoned.params.generator.scale(f64::NAN);
    assert_eq!(poisoned.return_loglik(0.3, &zz).unwrap(), ret_ll);
}

/// Central differences of the example log-likelihood over a sample of
/// coordinates in each parameter group.
fn check_parameter_gradients(m: &LatentPlanModel, enc: &EncodedTrajectory, y: f64, z0: &Tensor) {
    let grads = m.example_gradients(z0, enc, y).unwrap();
    let objective = |mm: &LatentPlanModel| {
        let zz = mm.prior_transform(z0).unwrap();
        mm.traj_loglik(enc, &zz).unwrap() + mm.return_loglik(y, &zz).unwrap()
    };
    let eps = 1e-5;
    let mut r = rng(77);
    for group in 0..3 {
        let n = m.params.groups()[group].num_values();
        let analytic = grads.params.groups()[group].flatten();
        for _ in 0..12.min(n) {
            let i = r.below(n);
            let mut probe = m.clone();
            let mut flat = probe.params.groups()[group].flatten();
            let x = flat[i];
            flat[i] = x + eps;
            probe.params.groups_mut()[group].assign_flat(&flat).unwrap();
            let fp = objective(&probe);
            flat[i] = x - eps;
            probe.params.groups_mut()[group].assign_flat(&flat).unwrap();
            let fm = objective(&probe);
            let numeric = (fp - fm) / (2.0 * eps);
            let err = (analytic[i] - numeric).abs() / numeric.abs().max(1.0);
            assert!(err <= 1e-6, "group {group} coord {i}: {} vs {numeric}", analytic[i]);
        }
    }
}

#[test]
fn parameter_gradients_match_finite_differences() {
    for (k, space) in [ActionSpace::Discrete { n: 4 }, ActionSpace::Continuous { dim: 2 }].into_iter().enumerate() {
        let m = model_with(space.clone(), 23 + k as u64);
        let enc = EncodedTrajectory::encode(&random_traj(&space, 5, &mut rng(23)), &space, None).unwrap();
        check_parameter_gradients(&m, &enc, 0.8, &z(23));
    }
}

#[test]
fn example_loglik_values_agree_with_direct_evaluation() {
    let space = ActionSpace::Discrete { n: 4 };
    let m = model_with(space.clone(), 25);
    let enc = EncodedTrajectory::encode(&random_traj(&space, 5, &mut rng(25)), &space, None).unwrap();
    let z0 = z(25);
    let gr = m.example_gradients(&z0, &enc, 0.1).unwrap();
    let zz = m.prior_transform(&z0).unwrap();
    assert!((gr.traj_loglik - m.traj_loglik(&enc, &zz).unwrap()).abs() < 1e-12);
    assert!((gr.return_loglik - m.return_loglik(0.1, &zz).unwrap()).abs() < 1e-12);
}

#[test]
fn from_parts_checks_layout() {
    let space = ActionSpace::Discrete { n: 4 };
    let m = model_with(space.clone(), 26);
    assert!(LatentPlanModel::from_parts(m.config.clone(), m.params.clone()).is_ok());
    let mut other = m.config.clone();
    other.returns = ReturnConfig::Mlp { hidden: 7 };
    assert!(matches!(LatentPlanModel::from_parts(other, m.params.clone()), Err(Error::Validation(_))));
}

#[test]
fn config_validation_rejects_bad_shapes() {
    let mut cfg = small_config(ActionSpace::Discrete { n: 4 });
    cfg.latent_dim = 6;
    assert!(cfg.validate().is_err());
    let mut cfg = small_config(ActionSpace::Discrete { n: 4 });
    cfg.return_variance = 0.0;
    assert!(cfg.validate().is_err());
    let mut cfg = small_config(ActionSpace::Discrete { n: 4 });
    cfg.generator = GeneratorConfig::Transformer { hidden: 9, layers: 1, heads: 2, context: 3, z_tokens: 1 };
    assert!(cfg.validate().is_err());
}
