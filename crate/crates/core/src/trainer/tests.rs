use super::*;
use crate::model::{ActionSpace, ModelConfig, PriorConfig, Trajectory};
use crate::sampler::{fixture_instances, LinearGaussianSpec};

fn rng(k: u64) -> RngStream {
    RngStream::derive(13, purpose::FIXTURE, &[k])
}

fn linear_dataset(spec: &LinearGaussianSpec, n: usize, horizon: usize, seed: u64) -> Vec<TrainingExample> {
    let mut r = rng(seed);
    let space = ActionSpace::Continuous { dim: spec.action_dim };
    (0..n)
        .map(|_| {
            let (traj, y): (Trajectory, f64) = spec.sample(horizon, &mut r);
            TrainingExample { traj: EncodedTrajectory::encode(&traj, &space, None).unwrap(), y }
        })
        .collect()
}

fn truth() -> LinearGaussianSpec {
    LinearGaussianSpec {
        latent_dim: 3,
        action_dim: 2,
        w: vec![0.8, -0.4, 0.3, 0.2, 0.6, -0.5],
        c: vec![2.5, -1.5],
        a: vec![0.7, 0.2, -0.4],
        b: 0.5,
        sigma2: 0.25,
    }
}

fn learner(seed: u64) -> LatentPlanModel {
    LatentPlanModel::new(truth().model_config(), &mut rng(100 + seed)).unwrap()
}

fn quick_config() -> TrainerConfig {
    TrainerConfig {
        iterations: 200,
        batch_size: 10,
        lr_prior: 0.02,
        lr_generator: 0.02,
        lr_returns: 0.02,
        sampler: LangevinConfig::new(0.1, 2),
        seed: 5,
        checkpoint_every: 0,
        ..TrainerConfig::default()
    }
}

#[test]
fn zero_learning_rate_keeps_parameters_but_advances_chains() {
    let data = linear_dataset(&truth(), 12, 4, 1);
    let mut model = learner(1);
    let before = model.clone();
    let cfg = TrainerConfig { lr_prior: 0.0, lr_generator: 0.0, lr_returns: 0.0, ..quick_config() };
    let mut state = TrainState::new(data.len(), 3, cfg.seed);
    let batch: Vec<usize> = (0..12).collect();
    let mut fresh = state.chains.clone();
    train_step(&mut model, &data, &batch, &cfg, &mut state).unwrap();
    assert_eq!(model.params, before.params);
    assert_eq!(state.chains.touched(), 12);
    assert_ne!(state.chains.get_init(3).unwrap(), fresh.get_init(3).unwrap());
    assert_eq!(state.iteration, 1);
}

#[test]
fn estimator_matches_marginal_gradient() {
    let inst = &fixture_instances(1, 4, 3, 4.0, 21)[0];
    let est = posterior_gradient_estimate(&inst.spec, &inst.actions, inst.y, 160_000, &mut rng(2)).unwrap();
    let reference = marginal_gradient(&inst.spec, &inst.actions, inst.y, 1e-5).unwrap();
    let err = relative_error(&est, &reference);
    assert!(err <= 1e-2, "{err}");
}

#[test]
fn linear_training_reduces_action_nll() {
    let data = linear_dataset(&truth(), 50, 5, 3);
    let mut model = learner(3);
    let cfg = quick_config();
    let mut state = TrainState::new(data.len(), 3, cfg.seed);
    let records = fit(&mut model, &data, &cfg, &mut state, |_, _| Ok(())).unwrap();
    assert_eq!(records.len(), 200);
    let first = records[0].action_nll;
    let last: f64 = records[190..].iter().map(|r| r.action_nll).sum::<f64>() / 10.0;
    assert!(last <= 0.8 * first, "{first} -> {last}");
}

#[test]
fn fit_is_deterministic() {
    let data = linear_dataset(&truth(), 20, 3, 4);
    let cfg = TrainerConfig { iterations: 15, batch_size: 6, ..quick_config() };
    let run = || {
        let mut model = learner(4);
        let mut state = TrainState::new(data.len(), 3, cfg.seed);
        let recs = fit(&mut model, &data, &cfg, &mut state, |_, _| Ok(())).unwrap();
        let curve: Vec<(f64, f64)> = recs.iter().map(|r| (r.action_nll, r.return_nll)).collect();
        (curve, model, state)
    };
    let (c1, m1, s1) = run();
    let (c2, m2, s2) = run();
    assert_eq!(c1, c2);
    assert_eq!(m1, m2);
    assert_eq!(s1, s2);
}

#[test]
fn single_full_batch_fit_equals_one_step() {
    let data = linear_dataset(&truth(), 9, 3, 5);
    let cfg = TrainerConfig { iterations: 1, batch_size: 9, ..quick_config() };
    let mut a = learner(5);
    let mut sa = TrainState::new(9, 3, cfg.seed);
    fit(&mut a, &data, &cfg, &mut sa, |_, _| Ok(())).unwrap();
    let mut b = learner(5);
    let mut sb = TrainState::new(9, 3, cfg.seed);
    train_step(&mut b, &data, &batch_indices(9, 9, cfg.seed, 0), &cfg, &mut sb).unwrap();
    assert_eq!(a, b);
    assert_eq!(sa, sb);
}

#[test]
fn resumed_fit_matches_uninterrupted_fit() {
    let data = linear_dataset(&truth(), 14, 3, 6);
    let cfg = TrainerConfig { iterations: 10, batch_size: 4, ..quick_config() };
    let mut a = learner(6);
    let mut sa = TrainState::new(14, 3, cfg.seed);
    fit(&mut a, &data, &cfg, &mut sa, |_, _| Ok(())).unwrap();

    let mut b = learner(6);
    let mut sb = TrainState::new(14, 3, cfg.seed);
    fit(&mut b, &data, &TrainerConfig { iterations: 4, ..cfg.clone() }, &mut sb, |_, _| Ok(())).unwrap();
    let dir = tempfile::tempdir().unwrap();
    let path = dir.path().join("ck.json");
    let mut ck = Checkpoint::new(b);
    ck.state = Some(sb);
    ck.save(&path).unwrap();
    let ck = Checkpoint::load(&path).unwrap();
    let (mut b, mut sb) = (ck.model, ck.state.unwrap());
    fit(&mut b, &data, &cfg, &mut sb, |_, _| Ok(())).unwrap();
    assert_eq!(a, b);
    assert_eq!(sa, sb);
}

#[test]
fn batches_cover_each_epoch() {
    for it in [0u64, 3, 7] {
        let epoch_start = it - it % 4;
        let mut seen: Vec<usize> = (epoch_start..epoch_start + 4).flat_map(|k| batch_indices(10, 3, 9, k)).collect();
        seen.sort();
        assert_eq!(seen, (0..10).collect::<Vec<_>>());
    }
    assert_eq!(batch_indices(10, 3, 9, 3).len(), 1);
}

#[test]
fn generator_gradients_ignore_return_parameters() {
    let mut cfg = ModelConfig::new(3, ActionSpace::Discrete { n: 4 });
    cfg.latent_dim = 8;
    cfg.prior = PriorConfig::Unet { channels: 2, base_width: 4, multipliers: vec![1, 2], res_blocks: 1 };
    let model = LatentPlanModel::new(cfg, &mut rng(7)).unwrap();
    let mut r = rng(8);
    let traj = Trajectory {
        states: (0..5).map(|_| r.normal_vec(3)).collect(),
        actions: crate::model::Actions::Discrete(vec![0, 1, 2, 3, 1]),
    };
    let enc = EncodedTrajectory::encode(&traj, &model.config.action_space, None).unwrap();
    let z0 = gaussian_sample(&[8], &mut r).unwrap();
    let base = model.example_gradients(&z0, &enc, 0.3).unwrap();

    let mut other = model.clone();
    other.params.returns.scale(1.7);
    let g = other.example_gradients(&z0, &enc, 0.3).unwrap();
    assert_eq!(g.params.generator, base.params.generator);

    let mut other = model.clone();
    other.params.generator.scale(0.9);
    let g = other.example_gradients(&z0, &enc, 0.3).unwrap();
    assert_eq!(g.params.returns, base.params.returns);
}

#[test]
fn checkpoint_round_trip_preserves_outputs() {
    let model = learner(9);
    let mut ck = Checkpoint::new(model.clone());
    ck.state = Some(TrainState::new(4, 3, 1));
    ck.normalization = Some(crate::model::NormalizationStats::identity(1));
    let dir = tempfile::tempdir().unwrap();
    let path = dir.path().join("model.json");
    ck.save(&path).unwrap();
    let back = Checkpoint::load(&path).unwrap();
    assert_eq!(back, ck);
    let z = Tensor::vector(vec![0.1, 0.2, -0.3]);
    assert_eq!(back.model.predict_return(&z).unwrap(), model.predict_return(&z).unwrap());
}

#[test]
fn checkpoint_load_rejects_foreign_files() {
    let dir = tempfile::tempdir().unwrap();
    let path = dir.path().join("x.json");
    let mut ck = Checkpoint::new(learner(10));
    ck.version = 99;
    std::fs::write(&path, serde_json::to_vec(&ck).unwrap()).unwrap();
    assert!(matches!(Checkpoint::load(&path), Err(Error::Validation(_))));
    std::fs::write(&path, b"{").unwrap();
    assert!(matches!(Checkpoint::load(&path), Err(Error::Json(_))));
}

#[test]
fn clipping_caps_the_global_norm() {
    let mut g = learner(11).params;
    g.scale(100.0);
    let before = g.sq_norm().sqrt();
    let reported = clip_global_norm(&mut g, 10.0);
    assert_eq!(reported, before);
    assert!((g.sq_norm().sqrt() - 10.0).abs() < 1e-9);
}

#[test]
fn config_validation() {
    assert!(TrainerConfig { batch_size: 0, ..TrainerConfig::default() }.validate().is_err());
    assert!(TrainerConfig { lr_generator: -1.0, ..TrainerConfig::default() }.validate().is_err());
    assert!(TrainerConfig::default().validate().is_ok());
}

#[test]
fn training_log_has_one_row_per_record() {
    let rec = TrainingRecord {
        iteration: 1,
        action_nll: 1.5,
        return_nll: 0.5,
        grad_norm_prior: 0.0,
        grad_norm_generator: 1.0,
        grad_norm_returns: 2.0,
        wall_clock_secs: 0.1,
    };
    let dir = tempfile::tempdir().unwrap();
    let path = dir.path().join("log.csv");
    write_training_log(&path, &[rec.clone(), rec]).unwrap();
    let text = std::fs::read_to_string(&path).unwrap();
    assert_eq!(text.lines().count(), 3);
    assert!(text.starts_with("iteration,action_nll,return_nll"));
}
