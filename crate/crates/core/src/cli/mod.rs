//! Command-line surface: subcommands, run directories and exit codes.
//!
//! Run directory layout:
//!
//! ```text
//! <run_dir>/
//!   config.json          resolved configuration, written before training
//!   metrics.jsonl        one StepRecord per optimizer step
//!   val_metrics.jsonl    one ValRecord per validation pass
//!   data/                catalog.jsonl, train.jsonl, val.jsonl, test.jsonl
//!   checkpoints/         step_XXXXXXXX.ckpt
//!   reports/             evaluation, latency and plot outputs
//!   trajectories/        inspected trajectories
//!   .lock                held while a command runs
//! ```

pub mod config;
pub mod plot;

use std::ffi::OsString;
use std::fs::{self, File, OpenOptions};
use std::io::{BufWriter, Write};
use std::path::{Path, PathBuf};

use clap::{Args, Parser, Subcommand};
use serde::Serialize;

use crate::corpus::{detokenize, generate_world, read_corpus, write_corpus, Catalog, PromptBank, Splits};
use crate::error::{Error, Result};
use crate::eval::{
    evaluate, latency_bench, refresh_item_embeddings, top_k_items, PromptRunner, RewardSettings,
};
use crate::model::{load_checkpoint, save_checkpoint, score_items, PolicyParams, Pooling};
use crate::recpo::{train, Ablation, StepRecord, TrainConfig, TrainObserver, ValRecord};
use crate::reward::{advantages, trajectory_reward, Estimator};
use crate::rng::{self, label};
use crate::sampler::sample_group;

pub use config::RunConfig;

#[derive(Debug, Parser)]
#[command(name = "recpo", version, about = "Reasoning-then-recommend policy optimization on a synthetic catalog")]
pub struct Cli {
    #[command(subcommand)]
    pub command: Command,
}

/// Flags shared by every subcommand.
#[derive(Debug, Clone, Default, Args)]
pub struct Common {
    /// JSON run configuration; omitted keys take their defaults.
    #[arg(long, value_name = "PATH")]
    pub config: Option<PathBuf>,
    #[arg(long)]
    pub seed: Option<u64>,
    /// Serial execution and wall-clock-free logs.
    #[arg(long)]
    pub strict: bool,
    #[arg(long, value_enum)]
    pub ablation: Option<Ablation>,
    #[arg(long, value_enum)]
    pub estimator: Option<Estimator>,
    #[arg(long, value_enum)]
    pub pooling: Option<Pooling>,
    /// Run directory; defaults to `<output_dir>/<run_name>` from the config.
    #[arg(long, value_name = "PATH")]
    pub run_dir: Option<PathBuf>,
}

#[derive(Debug, Subcommand)]
pub enum Command {
    /// Generate the synthetic corpus into `<run_dir>/data`.
    GenData(Common),
    /// Train a policy and write metrics and checkpoints.
    Train(Common),
    /// Evaluate a checkpoint over the full catalog.
    Eval {
        #[command(flatten)]
        common: Common,
        /// `last` or a checkpoint path.
        #[arg(long, default_value = "last")]
        checkpoint: String,
        /// Overrides `eval.split`.
        #[arg(long)]
        split: Option<String>,
    },
    /// Time reasoning, catalog scoring and autoregressive decoding.
    BenchLatency {
        #[command(flatten)]
        common: Common,
        /// `last` or a checkpoint path; an initialized model when omitted.
        #[arg(long)]
        checkpoint: Option<String>,
    },
    /// Show one user's reasoning, recommendations and rewards.
    InspectTrajectory {
        #[command(flatten)]
        common: Common,
        #[arg(long, default_value = "last")]
        checkpoint: String,
        #[arg(long, default_value = "val")]
        split: String,
        /// Index of the user within the split.
        #[arg(long, default_value_t = 0)]
        user: usize,
        /// Additional stochastic trajectories to sample and score.
        #[arg(long, default_value_t = 0)]
        samples: usize,
    },
    /// Render training and validation curves as SVG files.
    PlotCurves(Common),
}

impl Command {
    fn common(&self) -> &Common {
        match self {
            Command::GenData(c) | Command::Train(c) | Command::PlotCurves(c) => c,
            Command::Eval { common, .. }
            | Command::BenchLatency { common, .. }
            | Command::InspectTrajectory { common, .. } => common,
        }
    }
}

/// Exit code for a failure: 1 for invalid input, 2 for runtime failures.
pub fn exit_code(e: &Error) -> i32 {
    match e {
        Error::Config { .. } | Error::InvalidArgument(_) => 1,
        _ => 2,
    }
}

/// Parses `args` (including the program name) and runs the subcommand.
pub fn main_with_args<I, T>(args: I) -> i32
where
    I: IntoIterator<Item = T>,
    T: Into<OsString> + Clone,
{
    let cli = match Cli::try_parse_from(args) {
        Ok(c) => c,
        Err(e) => {
            let code = if e.use_stderr() { 1 } else { 0 };
            // Help and version go to stdout, usage errors to stderr.
            let _ = e.print();
            return code;
        }
    };
    match run(&cli.command) {
        Ok(()) => 0,
        Err(e) => {
            eprintln!("error: {e}");
            exit_code(&e)
        }
    }
}

/// The resolved configuration plus the run directory it applies to.
pub struct Resolved {
    pub config: RunConfig,
    pub run_dir: PathBuf,
}

/// Loads the configuration (from `--config`, else from an existing
/// `<run_dir>/config.json`, else defaults), applies flag overrides and
/// validates everything.
pub fn resolve(common: &Common) -> Result<Resolved> {
    let mut config = match (&common.config, &common.run_dir) {
        (Some(path), _) => {
            let text = fs::read_to_string(path).map_err(|e| Error::Config {
                key: "--config".into(),
                reason: format!("{}: {e}", path.display()),
            })?;
            RunConfig::from_json(&text)?
        }
        (None, Some(dir)) if dir.join("config.json").exists() => RunConfig::load(&dir.join("config.json"))?,
        _ => RunConfig::default(),
    };
    if let Some(s) = common.seed {
        config.seed = s;
    }
    config.strict |= common.strict;
    if let Some(a) = common.ablation {
        config.train.ablation = a;
    }
    if let Some(e) = common.estimator {
        config.train.estimator = e;
    }
    if let Some(p) = common.pooling {
        config.train.pooling = p;
    }
    config.train.seed = config.seed;
    config.validate()?;
    let run_dir = common.run_dir.clone().unwrap_or_else(|| config.run_dir());
    Ok(Resolved { config, run_dir })
}

/// Exclusive ownership of a run directory for the lifetime of the value.
pub struct RunLock {
    path: PathBuf,
}

impl RunLock {
    pub fn acquire(run_dir: &Path) -> Result<Self> {
        fs::create_dir_all(run_dir).map_err(|e| Error::io(run_dir, e))?;
        let path = run_dir.join(".lock");
        let mut f = OpenOptions::new()
            .write(true)
            .create_new(true)
            .open(&path)
            .map_err(|e| Error::io(&path, e))?;
        writeln!(f, "{}", std::process::id()).map_err(|e| Error::io(&path, e))?;
        Ok(RunLock { path })
    }
}

impl Drop for RunLock {
    fn drop(&mut self) {
        let _ = fs::remove_file(&self.path);
    }
}

fn write_file(path: &Path, contents: &[u8]) -> Result<()> {
    if let Some(dir) = path.parent() {
        fs::create_dir_all(dir).map_err(|e| Error::io(dir, e))?;
    }
    fs::write(path, contents).map_err(|e| Error::io(path, e))
}

fn write_json<T: Serialize>(path: &Path, value: &T) -> Result<()> {
    let mut s = serde_json::to_string_pretty(value)?;
    s.push('\n');
    write_file(path, s.as_bytes())
}

/// Reads `<run_dir>/data`, generating and writing the corpus first if it is
/// not there yet.
pub fn load_or_generate_data(config: &RunConfig, run_dir: &Path) -> Result<(Catalog, Splits)> {
    let data = run_dir.join("data");
    if data.join("catalog.jsonl").exists() {
        return read_corpus(&data);
    }
    generate_data(config, run_dir)
}

fn generate_data(config: &RunConfig, run_dir: &Path) -> Result<(Catalog, Splits)> {
    let world = generate_world(&config.corpus, rng::derive_seed(config.seed, &[label::WORLD]))?;
    let data = run_dir.join("data");
    fs::create_dir_all(&data).map_err(|e| Error::io(&data, e))?;
    write_corpus(&data, &world.catalog, &world.splits)?;
    Ok((world.catalog, world.splits))
}

pub fn checkpoint_path(run_dir: &Path, step: usize) -> PathBuf {
    run_dir.join("checkpoints").join(format!("step_{step:08}.ckpt"))
}

/// Resolves `last` to the highest-step checkpoint of the run; anything else
/// is taken as a path.
pub fn resolve_checkpoint(run_dir: &Path, spec: &str) -> Result<PathBuf> {
    if spec != "last" {
        let p = PathBuf::from(spec);
        if !p.exists() {
            return Err(Error::InvalidArgument(format!("checkpoint {} does not exist", p.display())));
        }
        return Ok(p);
    }
    let dir = run_dir.join("checkpoints");
    let mut found: Vec<PathBuf> = fs::read_dir(&dir)
        .map_err(|_| Error::InvalidArgument(format!("no checkpoints under {}", dir.display())))?
        .filter_map(|e| e.ok().map(|e| e.path()))
        .filter(|p| p.extension().is_some_and(|x| x == "ckpt"))
        .collect();
    found.sort();
    found
        .pop()
        .ok_or_else(|| Error::InvalidArgument(format!("no checkpoints under {}", dir.display())))
}

/// Streams training output into the run directory.
struct RunWriter {
    run_dir: PathBuf,
    metrics: BufWriter<File>,
    val: BufWriter<File>,
    pooling: Pooling,
    last_val: Option<ValRecord>,
    first_val: Option<ValRecord>,
}

fn append_line<T: Serialize>(w: &mut BufWriter<File>, value: &T) -> Result<()> {
    serde_json::to_writer(&mut *w, value)?;
    w.write_all(b"\n").map_err(|e| Error::io("metrics log", e))?;
    w.flush().map_err(|e| Error::io("metrics log", e))
}

impl TrainObserver<f32> for RunWriter {
    fn on_step(&mut self, record: &StepRecord) -> Result<()> {
        if !record.loss.is_finite() {
            return Err(Error::NonFinite(format!("loss at step {}", record.step)));
        }
        append_line(&mut self.metrics, record)
    }

    fn on_validation(&mut self, record: &ValRecord) -> Result<()> {
        if self.first_val.is_none() {
            self.first_val = Some(record.clone());
        }
        self.last_val = Some(record.clone());
        append_line(&mut self.val, record)
    }

    fn on_checkpoint(&mut self, step: usize, params: &PolicyParams<f32>, _cfg: &TrainConfig) -> Result<()> {
        save_checkpoint(&checkpoint_path(&self.run_dir, step), params, step, self.pooling)
    }
}

#[derive(Serialize)]
struct TrainSummary<'a> {
    steps: usize,
    ablation: Ablation,
    effective_beta: f64,
    first_validation: Option<&'a ValRecord>,
    final_validation: Option<&'a ValRecord>,
}

fn cmd_train(r: &Resolved) -> Result<()> {
    let cfg = &r.config;
    let dir = &r.run_dir;
    let _lock = RunLock::acquire(dir)?;
    write_file(&dir.join("config.json"), cfg.to_pretty_json().as_bytes())?;
    let (catalog, splits) = load_or_generate_data(cfg, dir)?;
    let ckpt_dir = dir.join("checkpoints");
    if ckpt_dir.exists() {
        fs::remove_dir_all(&ckpt_dir).map_err(|e| Error::io(&ckpt_dir, e))?;
    }
    fs::create_dir_all(&ckpt_dir).map_err(|e| Error::io(&ckpt_dir, e))?;
    let create = |name: &str| -> Result<BufWriter<File>> {
        let p = dir.join(name);
        Ok(BufWriter::new(File::create(&p).map_err(|e| Error::io(&p, e))?))
    };
    let mut writer = RunWriter {
        run_dir: dir.clone(),
        metrics: create("metrics.jsonl")?,
        val: create("val_metrics.jsonl")?,
        pooling: cfg.train.pooling,
        last_val: None,
        first_val: None,
    };
    let result = train::<f32>(
        &cfg.model,
        &cfg.train,
        &cfg.sampler,
        &catalog,
        &splits,
        &cfg.corpus.category,
        cfg.eval.reasoning_budget,
        cfg.strict,
        &mut writer,
    );
    if let Err(Error::NonFinite(dump)) = &result {
        write_file(&dir.join("reports").join("nonfinite_dump.json"), dump.as_bytes())?;
    }
    result?;
    let summary = TrainSummary {
        steps: cfg.train.total_steps,
        ablation: cfg.train.ablation,
        effective_beta: cfg.train.effective_beta(),
        first_validation: writer.first_val.as_ref(),
        final_validation: writer.last_val.as_ref(),
    };
    write_json(&dir.join("reports").join("train_summary.json"), &summary)?;
    if let Some(v) = &writer.last_val {
        println!(
            "trained {} steps; val fused reward {:.6}, NDCG@5 {:.4}",
            cfg.train.total_steps, v.mean_fused_reward, v.ndcg_at_5
        );
    } else {
        println!("trained {} steps", cfg.train.total_steps);
    }
    Ok(())
}

fn load_params(r: &Resolved, spec: &str) -> Result<(PolicyParams<f32>, Pooling)> {
    let path = resolve_checkpoint(&r.run_dir, spec)?;
    let (params, header) = load_checkpoint(&path)?;
    Ok((params, header.pooling))
}

fn split_users<'a>(splits: &'a Splits, name: &str) -> Result<&'a [crate::corpus::UserHistory]> {
    splits
        .get(name)
        .ok_or_else(|| Error::InvalidArgument(format!("unknown split `{name}` (expected train, val or test)")))
}

fn reward_settings(cfg: &RunConfig) -> RewardSettings {
    RewardSettings {
        ndcg_cutoff: cfg.train.ndcg_cutoff,
        beta: cfg.train.effective_beta(),
        tau_sim: cfg.train.tau_sim,
    }
}

fn eval_budget(cfg: &RunConfig) -> usize {
    if cfg.train.ablation == Ablation::NoReasoning {
        0
    } else {
        cfg.eval.reasoning_budget
    }
}

fn cmd_eval(r: &Resolved, checkpoint: &str, split: Option<&str>) -> Result<()> {
    let cfg = &r.config;
    let _lock = RunLock::acquire(&r.run_dir)?;
    let mut eval_cfg = cfg.eval.clone();
    if let Some(s) = split {
        eval_cfg.split = s.to_string();
        eval_cfg.validate()?;
    }
    eval_cfg.reasoning_budget = eval_budget(cfg);
    let (params, pooling) = load_params(r, checkpoint)?;
    let (catalog, splits) = load_or_generate_data(cfg, &r.run_dir)?;
    let bank = PromptBank::new(&catalog.items, &cfg.corpus.category)?;
    let table = refresh_item_embeddings(&params, &bank, pooling, None)?;
    let users = split_users(&splits, &eval_cfg.split)?;
    let report = evaluate(&params, &table, &bank, &catalog, users, &eval_cfg, reward_settings(cfg), cfg.strict)?;
    let reports = r.run_dir.join("reports");
    write_json(&reports.join(format!("eval_{}.json", eval_cfg.split)), &report)?;
    write_file(&reports.join(format!("eval_{}.csv", eval_cfg.split)), report.to_csv().as_bytes())?;
    print!("{}", report.to_table());
    Ok(())
}

fn cmd_bench(r: &Resolved, checkpoint: Option<&str>) -> Result<()> {
    let cfg = &r.config;
    let _lock = RunLock::acquire(&r.run_dir)?;
    let params = match checkpoint {
        Some(spec) => load_params(r, spec)?.0,
        None => PolicyParams::<f32>::init(&cfg.model, rng::derive_seed(cfg.seed, &[label::INIT]))?,
    };
    let (catalog, splits) = load_or_generate_data(cfg, &r.run_dir)?;
    let bank = PromptBank::new(&catalog.items, &cfg.corpus.category)?;
    let user = splits
        .test
        .first()
        .or(splits.train.first())
        .ok_or_else(|| Error::InvalidArgument("corpus has no users".into()))?;
    let prompt = bank.user_prompt(user, &catalog.items)?;
    let report = latency_bench(&params, &prompt, cfg.eval.reasoning_budget, &cfg.latency, cfg.seed)?;
    write_json(&r.run_dir.join("reports").join("latency.json"), &report)?;
    print!("{}", report.to_table());
    Ok(())
}

#[derive(Serialize)]
struct RankedItem {
    item_id: usize,
    title: String,
    score: f64,
}

#[derive(Serialize)]
struct SampledView {
    reasoning: String,
    stop_reason: crate::sampler::StopReason,
    rank: usize,
    fused_reward: f64,
    advantage: Option<f64>,
}

#[derive(Serialize)]
struct TrajectoryView {
    split: String,
    user_index: usize,
    user_id: usize,
    prompt: String,
    reasoning: String,
    stop_reason: crate::sampler::StopReason,
    target: usize,
    target_title: String,
    target_rank: usize,
    reward: crate::reward::RewardBreakdown,
    top_items: Vec<RankedItem>,
    samples: Vec<SampledView>,
}

fn cmd_inspect(r: &Resolved, checkpoint: &str, split: &str, user: usize, samples: usize) -> Result<()> {
    let cfg = &r.config;
    let _lock = RunLock::acquire(&r.run_dir)?;
    let (params, pooling) = load_params(r, checkpoint)?;
    let (catalog, splits) = load_or_generate_data(cfg, &r.run_dir)?;
    let users = split_users(&splits, split)?;
    let history = users.get(user).ok_or_else(|| {
        Error::InvalidArgument(format!("split `{split}` has {} users; index {user} is out of range", users.len()))
    })?;
    let bank = PromptBank::new(&catalog.items, &cfg.corpus.category)?;
    let table = refresh_item_embeddings(&params, &bank, pooling, None)?;
    let prompt = bank.user_prompt(history, &catalog.items)?;
    let runner = PromptRunner::new(&params, &bank.user_header)?;
    let greedy = runner.greedy(&prompt, eval_budget(cfg))?;
    let settings = reward_settings(cfg);
    let breakdown = trajectory_reward(
        greedy.final_hidden.view(),
        &table,
        history.target,
        settings.ndcg_cutoff,
        settings.beta,
        settings.tau_sim,
    )?;
    let scores = score_items(greedy.final_hidden.view(), &table)?;
    let top_items = top_k_items(&scores, 10)
        .into_iter()
        .map(|v| RankedItem {
            item_id: v,
            title: catalog.items[v].title.clone(),
            score: scores[v] as f64,
        })
        .collect();
    let mut sampled = Vec::new();
    if samples > 0 && cfg.train.ablation != Ablation::NoReasoning {
        let sampler = crate::sampler::SamplerConfig {
            group_size: samples,
            ..cfg.sampler.clone()
        };
        let group = sample_group(&params, &prompt, &sampler, rng::derive_seed(cfg.seed, &[label::SAMPLE, user as u64]))?;
        let mut rewards = Vec::new();
        for tr in &group {
            let b = trajectory_reward(tr.final_hidden.view(), &table, history.target, settings.ndcg_cutoff, settings.beta, settings.tau_sim)?;
            rewards.push(b);
        }
        let fused: Vec<f64> = rewards.iter().map(|b| b.fused).collect();
        let adv = if samples >= 2 { Some(advantages(&fused, cfg.train.estimator)?) } else { None };
        for (i, (tr, b)) in group.iter().zip(&rewards).enumerate() {
            sampled.push(SampledView {
                reasoning: detokenize(&tr.reasoning)?,
                stop_reason: tr.stop_reason,
                rank: b.rank,
                fused_reward: b.fused,
                advantage: adv.as_ref().map(|a| a.advantages[i]),
            });
        }
    }
    let view = TrajectoryView {
        split: split.to_string(),
        user_index: user,
        user_id: history.user_id,
        prompt: detokenize(&prompt)?,
        reasoning: detokenize(&greedy.reasoning)?,
        stop_reason: greedy.stop_reason,
        target: history.target,
        target_title: catalog.items[history.target].title.clone(),
        target_rank: breakdown.rank,
        reward: breakdown,
        top_items,
        samples: sampled,
    };
    let out = r.run_dir.join("trajectories").join(format!("{split}_user{}.json", history.user_id));
    write_json(&out, &view)?;
    println!("{}", view.prompt.trim_end());
    println!("reasoning: {:?} ({:?})", view.reasoning, view.stop_reason);
    println!("target: [{}] ranked {}", view.target_title, view.target_rank);
    for (i, it) in view.top_items.iter().enumerate() {
        println!("{:>3}. [{}] {:.4}", i + 1, it.title, it.score);
    }
    for s in &view.samples {
        println!("sample: {:?} rank {} reward {:.4} advantage {:?}", s.reasoning, s.rank, s.fused_reward, s.advantage);
    }
    println!("wrote {}", out.display());
    Ok(())
}

fn cmd_gen_data(r: &Resolved) -> Result<()> {
    let _lock = RunLock::acquire(&r.run_dir)?;
    let (catalog, splits) = generate_data(&r.config, &r.run_dir)?;
    println!(
        "wrote {} items and {}/{}/{} users to {}",
        catalog.len(),
        splits.train.len(),
        splits.val.len(),
        splits.test.len(),
        r.run_dir.join("data").display()
    );
    Ok(())
}

fn cmd_plot(r: &Resolved) -> Result<()> {
    let _lock = RunLock::acquire(&r.run_dir)?;
    for p in plot::plot_curves(&r.run_dir)? {
        println!("wrote {}", p.display());
    }
    Ok(())
}

pub fn run(command: &Command) -> Result<()> {
    let resolved = resolve(command.common())?;
    match command {
        Command::GenData(_) => cmd_gen_data(&resolved),
        Command::Train(_) => cmd_train(&resolved),
        Command::Eval { checkpoint, split, .. } => cmd_eval(&resolved, checkpoint, split.as_deref()),
        Command::BenchLatency { checkpoint, .. } => cmd_bench(&resolved, checkpoint.as_deref()),
        Command::InspectTrajectory {
            checkpoint,
            split,
            user,
            samples,
            ..
        } => cmd_inspect(&resolved, checkpoint, split, *user, *samples),
        Command::PlotCurves(_) => cmd_plot(&resolved),
    }
}
