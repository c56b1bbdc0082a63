use std::path::{Path, PathBuf};
use std::process::ExitCode;

use anyhow::{Context, Result};
use clap::Args;
use lpt_core::agent::{evaluate, train_baseline, Agent, BaselinePolicy, EvalConfig};
use lpt_core::envs::{
    connect4_audit, gen_connect4_dataset, gen_linear_gaussian_dataset, gen_maze_dataset, make_env, maze_audit,
    Environment, GridMaze, MazeDataConfig, OfflineDataset, CONNECT4_ID, GRIDMAZE_ID, LINGAUSS_ID,
};
use lpt_core::model::{LatentPlanModel, ModelConfig, PriorConfig};
use lpt_core::numerics::{purpose, RngStream};
use lpt_core::sampler::{LangevinConfig, LinearGaussianSpec};
use lpt_core::trainer::{fit, write_training_log, Checkpoint, TrainState};
use lpt_core::verify::{run_suite, Suite, VerifyOptions};
use serde_json::{json, Value};

use crate::config::{self, resolve_seed, set, usage, ConfigFile, SeedSource};

const KIND_LPT: &str = "lpt";
const KIND_BASELINE: &str = "baseline";

fn banner(what: &str, seed: Option<(u64, SeedSource)>, resolved: &Value) {
    eprintln!("lpt {what}: configuration (flag > config file > default)");
    if let Some((s, src)) = seed {
        eprintln!("  seed = {s} (from {})", match src {
            SeedSource::Flag => "--seed",
            SeedSource::File => "config file",
            SeedSource::Env => config::SEED_ENV,
            SeedSource::Default => "default",
        });
    }
    eprintln!("{}", serde_json::to_string_pretty(resolved).unwrap_or_default());
}

#[derive(Args, Debug)]
pub struct GenDataArgs {
    /// Environment id: gridmaze-v0, connect4-v0 or lingauss-v0.
    #[arg(long)]
    env: String,
    /// Number of trajectories (games for Connect Four).
    #[arg(long)]
    n: usize,
    #[arg(long)]
    seed: Option<u64>,
    #[arg(long)]
    out: PathBuf,
    #[arg(long)]
    config: Option<PathBuf>,
    /// Connect Four: probability that the behaviour policy moves at random.
    #[arg(long, default_value_t = 0.5)]
    behavior_mix: f64,
    /// Maze: probability of a random action instead of the shortest-path one.
    #[arg(long, default_value_t = 0.2)]
    noise: f64,
    /// Maze: longest waypoint segment.
    #[arg(long, default_value_t = 12)]
    max_segment_len: usize,
    /// Linear-Gaussian: latent dimension.
    #[arg(long, default_value_t = 4)]
    latent_dim: usize,
    /// Linear-Gaussian: action dimension.
    #[arg(long, default_value_t = 2)]
    action_dim: usize,
    /// Linear-Gaussian: trajectory length.
    #[arg(long, default_value_t = 3)]
    horizon: usize,
}

fn histogram(data: &OfflineDataset) -> Vec<(f64, usize)> {
    let mut h: Vec<(f64, usize)> = Vec::new();
    for r in data.returns() {
        match h.iter_mut().find(|(v, _)| *v == r) {
            Some((_, c)) => *c += 1,
            None => h.push((r, 1)),
        }
    }
    h.sort_by(|a, b| a.0.total_cmp(&b.0));
    h
}

pub fn gen_data(a: GenDataArgs) -> Result<ExitCode> {
    if ![GRIDMAZE_ID, CONNECT4_ID, LINGAUSS_ID].contains(&a.env.as_str()) {
        return Err(usage(format!("unknown environment id {:?} (expected {GRIDMAZE_ID}, {CONNECT4_ID} or {LINGAUSS_ID})", a.env)));
    }
    if a.n == 0 {
        return Err(usage("--n must be at least 1"));
    }
    let file = ConfigFile::load(a.config.as_deref())?;
    let seed = resolve_seed(a.seed, &file, None)?;
    banner("gen-data", Some(seed), &json!({"env": a.env, "n": a.n, "out": a.out}));
    let data = match a.env.as_str() {
        GRIDMAZE_ID => {
            let cfg = MazeDataConfig { n: a.n, seed: seed.0, noise: a.noise, max_segment_len: a.max_segment_len };
            gen_maze_dataset(&GridMaze::default(), &cfg)?
        }
        CONNECT4_ID => gen_connect4_dataset(a.n, a.behavior_mix, seed.0)?,
        _ => {
            let mut rng = RngStream::derive(seed.0, purpose::FIXTURE, &[]);
            let spec = LinearGaussianSpec::random(a.latent_dim, a.action_dim, 0.5, 0.5, &mut rng);
            gen_linear_gaussian_dataset(&spec, a.n, a.horizon, seed.0)?
        }
    };
    data.save(&a.out).with_context(|| format!("writing {}", a.out.display()))?;
    let lens: Vec<usize> = data.episodes.iter().map(|e| e.traj.len()).collect();
    println!("wrote {} trajectories to {}", data.len(), a.out.display());
    println!(
        "lengths: min {} max {} mean {:.2}",
        lens.iter().min().unwrap_or(&0),
        lens.iter().max().unwrap_or(&0),
        lens.iter().sum::<usize>() as f64 / lens.len() as f64
    );
    if a.env == LINGAUSS_ID {
        let s = data.stats();
        println!("returns: mean {:.4} std {:.4}", s.return_mean, s.return_std);
    } else {
        println!("return histogram:");
        for (v, c) in histogram(&data) {
            println!("  {v:>5}: {c}");
        }
    }
    match a.env.as_str() {
        GRIDMAZE_ID => println!("audit: {}", serde_json::to_string(&maze_audit(&GridMaze::default(), &data)?)?),
        CONNECT4_ID => println!("audit: {}", serde_json::to_string(&connect4_audit(&data))?),
        _ => {}
    }
    Ok(ExitCode::SUCCESS)
}

#[derive(Args, Debug)]
pub struct TrainArgs {
    #[arg(long)]
    dataset: PathBuf,
    /// Checkpoint to write (also rewritten at the checkpoint cadence).
    #[arg(long)]
    out: PathBuf,
    #[arg(long)]
    config: Option<PathBuf>,
    #[arg(long)]
    seed: Option<u64>,
    /// Continue from a checkpoint, including optimiser and chain state.
    #[arg(long)]
    resume: Option<PathBuf>,
    /// Train the return-conditioned behaviour-cloning baseline instead.
    #[arg(long)]
    baseline: bool,
    /// CSV training log (defaults to the checkpoint path with `.csv`).
    #[arg(long)]
    log: Option<PathBuf>,
    #[arg(long)]
    iterations: Option<u64>,
    #[arg(long)]
    batch_size: Option<usize>,
    /// Learning rate for all three parameter groups.
    #[arg(long)]
    lr: Option<f64>,
    #[arg(long)]
    checkpoint_every: Option<u64>,
    /// Langevin step size during training.
    #[arg(long)]
    step_size: Option<f64>,
    /// Langevin steps per training iteration.
    #[arg(long)]
    langevin_steps: Option<usize>,
    /// Start every posterior chain from noise instead of its previous state.
    #[arg(long)]
    fresh_chains: bool,
    /// Prior transform: identity, unet or res_mlp.
    #[arg(long)]
    prior: Option<String>,
    #[arg(long)]
    latent_dim: Option<usize>,
    #[arg(long)]
    return_variance: Option<f64>,
}

fn prior_flag(name: &str) -> Result<Value> {
    let default_unet = serde_json::to_value(PriorConfig::default())?;
    match name {
        "identity" => Ok(json!({"kind": "identity"})),
        "unet" => Ok(default_unet),
        "res_mlp" => Ok(json!({"kind": "res_mlp", "hidden": 32, "blocks": 2})),
        other => Err(usage(format!("unknown prior {other:?} (identity, unet, res_mlp)"))),
    }
}

fn log_path(out: &Path, log: Option<PathBuf>) -> PathBuf {
    log.unwrap_or_else(|| out.with_extension("csv"))
}

pub fn train(a: TrainArgs) -> Result<ExitCode> {
    let file = ConfigFile::load(a.config.as_deref())?;
    let data = OfflineDataset::load(&a.dataset).with_context(|| format!("loading {}", a.dataset.display()))?;
    let resumed = match &a.resume {
        Some(p) => {
            if a.baseline {
                return Err(usage("--resume is not supported with --baseline"));
            }
            Some(Checkpoint::load(p).with_context(|| format!("loading {}", p.display()))?)
        }
        None => None,
    };

    let mut model_flags = json!({});
    set(&mut model_flags, "latent_dim", a.latent_dim);
    set(&mut model_flags, "return_variance", a.return_variance);
    if let Some(p) = &a.prior {
        model_flags["prior"] = prior_flag(p)?;
    }
    let model_default = match &resumed {
        Some(ck) => ck.model.config.clone(),
        None => ModelConfig::new(data.header.state_dim, data.header.action_space.clone()),
    };
    let model_cfg = config::model_config(model_default, &file, model_flags)?;
    if model_cfg.state_dim != data.header.state_dim || model_cfg.action_space != data.header.action_space {
        return Err(usage("model dimensions do not match the dataset"));
    }

    let seed = resolve_seed(a.seed, &file, resumed.as_ref().and_then(|c| c.trainer.as_ref()).map(|t| t.seed))?;
    let mut trainer_flags = json!({ "seed": seed.0 });
    set(&mut trainer_flags, "iterations", a.iterations);
    set(&mut trainer_flags, "batch_size", a.batch_size);
    set(&mut trainer_flags, "checkpoint_every", a.checkpoint_every);
    if let Some(lr) = a.lr {
        for k in ["lr_prior", "lr_generator", "lr_returns"] {
            trainer_flags[k] = json!(lr);
        }
    }
    if a.fresh_chains {
        trainer_flags["persistent_chains"] = json!(false);
        trainer_flags["sampler"] = serde_json::to_value(LangevinConfig::fresh_training())?;
    }
    let mut sampler_flags = json!({});
    set(&mut sampler_flags, "step_size", a.step_size);
    set(&mut sampler_flags, "num_steps", a.langevin_steps);
    if sampler_flags.as_object().is_some_and(|o| !o.is_empty()) {
        let mut s = trainer_flags.get("sampler").cloned().unwrap_or(json!({}));
        config::merge(&mut s, &sampler_flags);
        trainer_flags["sampler"] = s;
    }
    let trainer_default = resumed.as_ref().and_then(|c| c.trainer.clone()).unwrap_or_default();
    let trainer_cfg = config::trainer_config(trainer_default, &file, trainer_flags)?;
    banner(
        if a.baseline { "train (baseline)" } else { "train" },
        Some(seed),
        &json!({"model": model_cfg, "trainer": trainer_cfg, "dataset": a.dataset, "out": a.out}),
    );

    let examples = data.training_examples()?;
    let mut metadata = serde_json::Map::new();
    metadata.insert("env_id".into(), json!(data.header.env_id));
    metadata.insert("dataset".into(), json!(a.dataset));
    metadata.insert("max_return".into(), json!(data.max_return()));
    metadata.insert("kind".into(), json!(if a.baseline { KIND_BASELINE } else { KIND_LPT }));
    let log = log_path(&a.out, a.log);

    if a.baseline {
        let (policy, records) = train_baseline(&model_cfg, &examples, &trainer_cfg)?;
        let mut ck = Checkpoint::new(policy.model);
        ck.normalization = Some(data.stats().clone());
        ck.trainer = Some(trainer_cfg);
        ck.metadata = metadata;
        ck.save(&a.out)?;
        write_training_log(&log, &records)?;
        report_training(&records, &a.out, &log);
        return Ok(ExitCode::SUCCESS);
    }

    let (mut model, mut state) = match resumed {
        Some(ck) => {
            if ck.normalization.as_ref() != Some(data.stats()) {
                return Err(usage("checkpoint was trained on a different dataset"));
            }
            let state = ck.state.ok_or_else(|| usage("checkpoint has no training state to resume"))?;
            let model = LatentPlanModel::from_parts(model_cfg.clone(), ck.model.params)?;
            (model, state)
        }
        None => {
            let mut rng = RngStream::derive(seed.0, purpose::INIT, &[]);
            let model = LatentPlanModel::new(model_cfg.clone(), &mut rng)?;
            let state = TrainState::new(examples.len(), model.latent_dim(), seed.0);
            (model, state)
        }
    };
    if state.iteration >= trainer_cfg.iterations {
        eprintln!("checkpoint is already at iteration {}; nothing to do", state.iteration);
    }
    let save = |m: &LatentPlanModel, s: &TrainState| {
        let mut ck = Checkpoint::new(m.clone());
        ck.normalization = Some(data.stats().clone());
        ck.trainer = Some(trainer_cfg.clone());
        ck.state = Some(s.clone());
        ck.metadata = metadata.clone();
        eprintln!("iteration {}: checkpoint {}", s.iteration, a.out.display());
        ck.save(&a.out)
    };
    let records = fit(&mut model, &examples, &trainer_cfg, &mut state, save)?;
    write_training_log(&log, &records)?;
    report_training(&records, &a.out, &log);
    Ok(ExitCode::SUCCESS)
}

fn report_training(records: &[lpt_core::trainer::TrainingRecord], out: &Path, log: &Path) {
    if let Some(last) = records.last() {
        println!(
            "trained to iteration {}: action nll {:.4}, return nll {:.4}, {:.1}s",
            last.iteration, last.action_nll, last.return_nll, last.wall_clock_secs
        );
    }
    println!("checkpoint {}\nlog {}", out.display(), log.display());
}

#[derive(Args, Debug)]
pub struct EvalArgs {
    #[arg(long)]
    checkpoint: PathBuf,
    #[arg(long)]
    env: String,
    /// Target return on the raw scale (defaults to the dataset maximum).
    #[arg(long)]
    y_target: Option<f64>,
    #[arg(long, default_value_t = 100)]
    episodes: usize,
    /// Guidance weights, comma separated.
    #[arg(long, value_delimiter = ',', default_value = "1")]
    w: Vec<f64>,
    #[arg(long)]
    seed: Option<u64>,
    #[arg(long)]
    config: Option<PathBuf>,
    /// Sample actions instead of taking the most likely one.
    #[arg(long)]
    stochastic: bool,
    /// Langevin step size for plan inference.
    #[arg(long)]
    step_size: Option<f64>,
    /// Langevin steps for plan inference.
    #[arg(long)]
    langevin_steps: Option<usize>,
    /// JSON report (defaults to the checkpoint path with `.eval.json`).
    #[arg(long)]
    out_json: Option<PathBuf>,
    /// Per-episode CSV (defaults to the checkpoint path with `.eval.csv`).
    #[arg(long)]
    out_csv: Option<PathBuf>,
}

pub fn eval(a: EvalArgs) -> Result<ExitCode> {
    let env = make_env(&a.env).map_err(|e| usage(e.to_string()))?;
    let ck = Checkpoint::load(&a.checkpoint).with_context(|| format!("loading {}", a.checkpoint.display()))?;
    let m = &ck.model;
    if m.config.state_dim != env.state_dim() || m.config.action_space != env.action_space() {
        return Err(lpt_core::Error::Validation(format!(
            "checkpoint expects state dim {} and {:?}, {} has {} and {:?}",
            m.config.state_dim,
            m.config.action_space,
            a.env,
            env.state_dim(),
            env.action_space()
        ))
        .into());
    }
    let file = ConfigFile::load(a.config.as_deref())?;
    let seed = resolve_seed(a.seed, &file, Some(0))?;
    let mut sampler_flags = json!({});
    set(&mut sampler_flags, "step_size", a.step_size);
    set(&mut sampler_flags, "num_steps", a.langevin_steps);
    let sampler = config::sampler_config(LangevinConfig::inference(), &file, sampler_flags)?;
    let stats = ck.normalization.clone().ok_or_else(|| usage("checkpoint has no normalisation statistics"))?;
    let y_target = match a.y_target {
        Some(y) => y,
        None => ck
            .metadata
            .get("max_return")
            .and_then(Value::as_f64)
            .ok_or_else(|| usage("checkpoint does not record the dataset maximum; pass --y-target"))?,
    };
    let kind = ck.metadata.get("kind").and_then(Value::as_str).unwrap_or(KIND_LPT).to_string();
    let cfg = EvalConfig { episodes: a.episodes, seed: seed.0, y_target, deterministic: !a.stochastic };
    banner("eval", Some(seed), &json!({"kind": kind, "eval": cfg, "w": a.w, "sampler": sampler}));
    if a.episodes == 0 {
        return Err(usage("--episodes must be at least 1"));
    }
    let env_id = a.env.clone();
    let make = move || -> Box<dyn Environment + Send> { make_env(&env_id).expect("checked above") };
    let report = if kind == KIND_BASELINE {
        let policy = BaselinePolicy { model: ck.model.clone() };
        evaluate(make, Agent::Baseline(&policy), &stats, &cfg, &[])?
    } else {
        evaluate(make, Agent::Lpt { model: &ck.model, sampler: &sampler }, &stats, &cfg, &a.w)?
    };
    let json_path = a.out_json.unwrap_or_else(|| a.checkpoint.with_extension("eval.json"));
    let csv_path = a.out_csv.unwrap_or_else(|| a.checkpoint.with_extension("eval.csv"));
    report.write_json(&json_path)?;
    report.write_episodes_csv(&csv_path)?;
    for s in &report.summaries {
        let w = s.w.map_or("-".to_string(), |w| w.to_string());
        println!(
            "{:<8} w={:<4} episodes {:<4} mean return {:+.4} (std {:.4})  success {:.3}  mean length {:.1}",
            s.agent, w, s.episodes, s.mean_return, s.std_return, s.success_rate, s.mean_length
        );
    }
    println!("report {}\nepisodes {}", json_path.display(), csv_path.display());
    Ok(ExitCode::SUCCESS)
}

#[derive(Args, Debug)]
pub struct VerifyArgs {
    /// gradcheck, langevin, oracle or all.
    #[arg(long, default_value = "all")]
    suite: String,
    #[arg(long, default_value_t = 0)]
    seed: u64,
    /// Perturb the analytic gradient of the named check (self-test of the checker).
    #[arg(long)]
    corrupt: Option<String>,
    /// Also write the results as JSON.
    #[arg(long)]
    json: Option<PathBuf>,
}

pub fn verify(a: VerifyArgs) -> Result<ExitCode> {
    let suite: Suite = a.suite.parse().map_err(|e: lpt_core::Error| usage(e.to_string()))?;
    let opts = VerifyOptions { seed: a.seed, corrupt: a.corrupt.clone() };
    let checks = run_suite(suite, &opts)?;
    if let Some(name) = &a.corrupt {
        if !checks.iter().any(|c| c.name == format!("gradcheck {name}")) {
            return Err(usage(format!("no gradient check named {name:?}")));
        }
    }
    for c in &checks {
        println!("{c}");
    }
    let failed = checks.iter().filter(|c| !c.passed).count();
    println!("{} checks, {} failed", checks.len(), failed);
    if let Some(p) = &a.json {
        std::fs::write(p, serde_json::to_string_pretty(&checks)?)?;
    }
    Ok(if failed == 0 { ExitCode::SUCCESS } else { ExitCode::from(1) })
}

#[derive(Args, Debug)]
pub struct ExportArgs {
    /// Training log CSV files.
    #[arg(long)]
    log: Vec<PathBuf>,
    /// Evaluation report JSON files.
    #[arg(long)]
    report: Vec<PathBuf>,
    #[arg(long)]
    out: PathBuf,
}

fn summarize_log(path: &Path) -> Result<Value> {
    let mut reader = csv::Reader::from_path(path).with_context(|| format!("reading {}", path.display()))?;
    let rows: Vec<lpt_core::trainer::TrainingRecord> =
        reader.deserialize().collect::<std::result::Result<_, _>>().map_err(|e| usage(format!("{}: {e}", path.display())))?;
    let last = rows.last().ok_or_else(|| usage(format!("{} has no rows", path.display())))?;
    let tail = &rows[rows.len() - rows.len().div_ceil(10)..];
    let mean = |f: fn(&lpt_core::trainer::TrainingRecord) -> f64| tail.iter().map(f).sum::<f64>() / tail.len() as f64;
    Ok(json!({
        "path": path,
        "iterations": last.iteration,
        "first_action_nll": rows[0].action_nll,
        "final_action_nll": last.action_nll,
        "tail_mean_action_nll": mean(|r| r.action_nll),
        "tail_mean_return_nll": mean(|r| r.return_nll),
        "wall_clock_secs": last.wall_clock_secs,
    }))
}

pub fn export_metrics(a: ExportArgs) -> Result<ExitCode> {
    if a.log.is_empty() && a.report.is_empty() {
        return Err(usage("pass at least one --log or --report"));
    }
    let logs = a.log.iter().map(|p| summarize_log(p)).collect::<Result<Vec<_>>>()?;
    let reports = a
        .report
        .iter()
        .map(|p| {
            let text = std::fs::read_to_string(p).with_context(|| format!("reading {}", p.display()))?;
            let v: Value = serde_json::from_str(&text).map_err(|e| usage(format!("{}: {e}", p.display())))?;
            Ok(json!({"path": p, "env_id": v["env_id"], "y_target": v["y_target"], "summaries": v["summaries"]}))
        })
        .collect::<Result<Vec<_>>>()?;
    let out = json!({"training": logs, "evaluation": reports});
    std::fs::write(&a.out, serde_json::to_string_pretty(&out)?)?;
    println!("wrote {}", a.out.display());
    Ok(ExitCode::SUCCESS)
}
