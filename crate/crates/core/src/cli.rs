//! Experiment configuration and the commands behind the `softrtc` binary.
//!
//! Every command is a pure function of the resolved configuration and its
//! input files. Outputs embed the resolved configuration and a SHA-256 of
//! their inputs, and contain nothing time- or host-dependent, so reruns are
//! byte-identical.

use std::fs;
use std::path::{Path, PathBuf};

use serde::{Deserialize, Serialize};
use sha2::{Digest, Sha256};

use crate::bench::{self, BenchMethod, BenchResult, BenchSetup};
use crate::envs::{self, EnvSpec, ExpertConfig, TaskKind};
use crate::error::{Error, Result};
use crate::executor::{self, EvalGrid, ExecMode, ExecutionConfig};
use crate::infer::SolverConfig;
use crate::metrics::{self, ResultRow};
use crate::model::{self, Activation, ModelConfig, ModelParams};
use crate::seeding;
use crate::train::{self, TrainConfig};
use crate::weights::{Schedule, WindowRule};

/// Action dimension of the toy tasks.
pub const ACTION_DIM: usize = 2;

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(default, deny_unknown_fields)]
pub struct EnvSection {
    /// Task the demonstrations are drawn from.
    pub task: TaskKind,
    pub dt: f64,
    pub episode_len: usize,
    pub action_bound: f64,
    pub solve_threshold: f64,
    pub init_offset: f64,
    pub switch_step: usize,
    pub jump: f64,
}

impl Default for EnvSection {
    fn default() -> Self {
        let s = EnvSpec::new(TaskKind::PointMassTrack, 0);
        Self {
            task: s.task,
            dt: s.dt,
            episode_len: s.episode_len,
            action_bound: s.action_bound,
            solve_threshold: s.solve_threshold,
            init_offset: s.init_offset,
            switch_step: s.switch_step,
            jump: s.jump,
        }
    }
}

impl EnvSection {
    pub fn spec(&self, task: TaskKind, horizon: usize) -> EnvSpec {
        EnvSpec {
            task,
            dt: self.dt,
            episode_len: self.episode_len,
            action_bound: self.action_bound,
            solve_threshold: self.solve_threshold,
            preview: horizon,
            init_offset: self.init_offset,
            switch_step: self.switch_step,
            jump: self.jump,
        }
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(default, deny_unknown_fields)]
pub struct DataSection {
    pub episodes: usize,
    pub expert: ExpertConfig,
}

impl Default for DataSection {
    fn default() -> Self {
        Self {
            episodes: 16,
            expert: ExpertConfig::default(),
        }
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(default, deny_unknown_fields)]
pub struct ModelSection {
    /// Chunk horizon `H`, shared by the model, the data and the executor.
    pub horizon: usize,
    pub hidden: Vec<usize>,
    pub activation: Activation,
}

impl Default for ModelSection {
    fn default() -> Self {
        Self {
            horizon: 8,
            hidden: vec![64, 64],
            activation: Activation::Tanh,
        }
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(default, deny_unknown_fields)]
pub struct TrainSection {
    pub max_delay: usize,
    pub epochs: usize,
    pub batch_size: usize,
    pub learning_rate: f64,
    pub cosine_decay: bool,
    pub denom_eps: f64,
}

impl Default for TrainSection {
    fn default() -> Self {
        Self {
            max_delay: 4,
            epochs: 800,
            batch_size: 64,
            learning_rate: 1e-2,
            cosine_decay: true,
            denom_eps: 1e-6,
        }
    }
}

/// Window used for training and for RTC execution.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(default, deny_unknown_fields)]
pub struct WindowSection {
    pub rule: WindowRule,
    pub schedule: Schedule,
}

impl Default for WindowSection {
    fn default() -> Self {
        Self {
            rule: WindowRule::DelayScaled {
                multiplier: 2,
                max_horizon: 8,
            },
            schedule: Schedule::Linear,
        }
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(default, deny_unknown_fields)]
pub struct ExecSection {
    pub exec_horizon: usize,
    pub mode: ExecMode,
}

impl Default for ExecSection {
    fn default() -> Self {
        Self {
            exec_horizon: 4,
            mode: ExecMode::Rtc,
        }
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(default, deny_unknown_fields)]
pub struct EvalSection {
    /// Label written to the `method` column.
    pub method: String,
    pub tasks: Vec<TaskKind>,
    pub delays: Vec<usize>,
    pub episodes: usize,
}

impl Default for EvalSection {
    fn default() -> Self {
        Self {
            method: "soft".into(),
            tasks: vec![TaskKind::PointMassTrack, TaskKind::ModeSwitch],
            delays: vec![0, 1, 2, 3, 4],
            episodes: 32,
        }
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(default, deny_unknown_fields)]
pub struct SweepSection {
    pub offset_lengths: Vec<usize>,
    pub offset_cap: usize,
    pub multipliers: Vec<usize>,
    pub max_horizon: usize,
    pub fixed_lengths: Vec<usize>,
}

impl Default for SweepSection {
    fn default() -> Self {
        Self {
            offset_lengths: (0..=6).collect(),
            offset_cap: 8,
            multipliers: vec![1, 2, 3, 4],
            max_horizon: 8,
            fixed_lengths: vec![3, 5],
        }
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(default, deny_unknown_fields)]
pub struct BenchSection {
    pub batches: Vec<usize>,
    pub warmup: usize,
    pub iters: usize,
    pub delay: usize,
}

impl Default for BenchSection {
    fn default() -> Self {
        Self {
            batches: vec![1, 32],
            warmup: 20,
            iters: 200,
            delay: 2,
        }
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct ExperimentConfig {
    /// Master seed; every other seed is derived from it.
    pub seed: u64,
    pub out_dir: PathBuf,
    /// Dataset path; defaults to `out_dir/dataset.jsonl`.
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub dataset: Option<PathBuf>,
    /// Checkpoint path; defaults to `out_dir/checkpoint.bin`.
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub checkpoint: Option<PathBuf>,
    /// Start training from this checkpoint instead of a fresh init.
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub init_checkpoint: Option<PathBuf>,
    #[serde(default)]
    pub env: EnvSection,
    #[serde(default)]
    pub data: DataSection,
    #[serde(default)]
    pub model: ModelSection,
    #[serde(default)]
    pub train: TrainSection,
    #[serde(default)]
    pub window: WindowSection,
    #[serde(default)]
    pub solver: SolverConfig,
    #[serde(default)]
    pub execution: ExecSection,
    #[serde(default)]
    pub eval: EvalSection,
    #[serde(default)]
    pub sweep: SweepSection,
    #[serde(default)]
    pub bench: BenchSection,
}

impl Default for ExperimentConfig {
    fn default() -> Self {
        Self {
            seed: 0,
            out_dir: PathBuf::from("runs/default"),
            dataset: None,
            checkpoint: None,
            init_checkpoint: None,
            env: EnvSection::default(),
            data: DataSection::default(),
            model: ModelSection::default(),
            train: TrainSection::default(),
            window: WindowSection::default(),
            solver: SolverConfig::default(),
            execution: ExecSection::default(),
            eval: EvalSection::default(),
            sweep: SweepSection::default(),
            bench: BenchSection::default(),
        }
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize, clap::ValueEnum)]
#[serde(rename_all = "snake_case")]
pub enum SweepAxis {
    /// `e(d) = min(d + L, cap)` over `sweep.offset_lengths`.
    Offset,
    /// `e(d) = min(lambda * d, max_horizon)` over `sweep.multipliers`.
    DelayScaled,
    /// `e(d) = min(max(d, h), H)` over `sweep.fixed_lengths`.
    Fixed,
}

impl SweepAxis {
    pub fn tag(&self) -> &'static str {
        match self {
            SweepAxis::Offset => "offset",
            SweepAxis::DelayScaled => "delay_scaled",
            SweepAxis::Fixed => "fixed",
        }
    }
}

/// One evaluation row tagged with the sweep axis value that produced it.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct SweepRow {
    pub axis: String,
    pub axis_value: usize,
    pub method: String,
    pub task: String,
    pub delay: usize,
    pub seed: u64,
    #[serde(rename = "return")]
    pub ret: f64,
    pub solve: u8,
    pub action_delta: f64,
    pub action_jerk: f64,
    pub boundary_jump: f64,
}

impl SweepRow {
    pub fn result(&self) -> ResultRow {
        ResultRow {
            method: self.method.clone(),
            task: self.task.clone(),
            delay: self.delay,
            seed: self.seed,
            ret: self.ret,
            solve: self.solve,
            action_delta: self.action_delta,
            action_jerk: self.action_jerk,
            boundary_jump: self.boundary_jump,
        }
    }
}

impl ExperimentConfig {
    pub fn from_toml(text: &str) -> Result<Self> {
        toml::from_str(text).map_err(|e| Error::Config(e.to_string()))
    }

    pub fn load(path: &Path) -> Result<Self> {
        let text = fs::read_to_string(path).map_err(|e| Error::MissingInput {
            path: path.display().to_string(),
            reason: e.to_string(),
        })?;
        Self::from_toml(&text)
    }

    pub fn to_toml(&self) -> String {
        toml::to_string(self).expect("experiment config serializes")
    }

    pub fn horizon(&self) -> usize {
        self.model.horizon
    }

    pub fn dataset_path(&self) -> PathBuf {
        self.dataset.clone().unwrap_or_else(|| self.out_dir.join("dataset.jsonl"))
    }

    pub fn checkpoint_path(&self) -> PathBuf {
        self.checkpoint.clone().unwrap_or_else(|| self.out_dir.join("checkpoint.bin"))
    }

    pub fn data_seed(&self) -> u64 {
        seeding::derive_seed(self.seed, &[1])
    }

    pub fn init_seed(&self) -> u64 {
        seeding::derive_seed(self.seed, &[2])
    }

    pub fn train_seed(&self) -> u64 {
        seeding::derive_seed(self.seed, &[3])
    }

    pub fn data_spec(&self) -> EnvSpec {
        self.env.spec(self.env.task, self.horizon())
    }

    pub fn model_config(&self) -> ModelConfig {
        ModelConfig {
            obs_dim: self.data_spec().obs_dim(),
            horizon: self.horizon(),
            action_dim: ACTION_DIM,
            hidden: self.model.hidden.clone(),
            activation: self.model.activation,
            seed: self.init_seed(),
        }
    }

    pub fn train_config(&self) -> TrainConfig {
        TrainConfig {
            max_delay: self.train.max_delay,
            epochs: self.train.epochs,
            batch_size: self.train.batch_size,
            learning_rate: self.train.learning_rate,
            cosine_decay: self.train.cosine_decay,
            denom_eps: self.train.denom_eps,
            rule: self.window.rule,
            schedule: self.window.schedule,
            seed: self.train_seed(),
        }
    }

    pub fn exec_config(&self) -> ExecutionConfig {
        ExecutionConfig {
            horizon: self.horizon(),
            exec_horizon: self.execution.exec_horizon,
            delay: 0,
            episode_len: self.env.episode_len,
            mode: self.execution.mode,
            record_timing: false,
        }
    }

    pub fn bench_setup(&self) -> BenchSetup {
        BenchSetup {
            delay: self.bench.delay,
            exec_horizon: self.execution.exec_horizon,
            soft_rule: self.window.rule,
            soft_schedule: self.window.schedule,
            solver: self.solver.clone(),
        }
    }

    pub fn sweep_rules(&self, axis: SweepAxis) -> Vec<(usize, WindowRule)> {
        let s = &self.sweep;
        match axis {
            SweepAxis::Offset => s
                .offset_lengths
                .iter()
                .map(|&l| {
                    (
                        l,
                        WindowRule::Offset {
                            length: l,
                            cap: s.offset_cap,
                        },
                    )
                })
                .collect(),
            SweepAxis::DelayScaled => s
                .multipliers
                .iter()
                .map(|&m| {
                    (
                        m,
                        WindowRule::DelayScaled {
                            multiplier: m,
                            max_horizon: s.max_horizon,
                        },
                    )
                })
                .collect(),
            SweepAxis::Fixed => s
                .fixed_lengths
                .iter()
                .map(|&h| (h, WindowRule::Fixed { length: h }))
                .collect(),
        }
    }

    /// Field-level and cross-field checks.
    pub fn validate(&self) -> Result<()> {
        let h = self.horizon();
        let s = self.execution.exec_horizon;
        self.model_config().validate()?;
        for task in [TaskKind::PointMassTrack, TaskKind::ModeSwitch] {
            self.env.spec(task, h).validate()?;
        }
        if h > self.env.episode_len {
            return Err(Error::Config(format!(
                "model.horizon {h} exceeds env.episode_len {}",
                self.env.episode_len
            )));
        }
        if self.data.episodes == 0 {
            return Err(Error::Config("data.episodes must be >= 1".into()));
        }
        self.train_config().validate(h)?;
        self.solver.validate()?;
        self.exec_config().validate()?;
        if self.eval.tasks.is_empty() || self.eval.delays.is_empty() || self.eval.episodes == 0 {
            return Err(Error::Config(
                "eval.tasks, eval.delays and eval.episodes must be nonempty".into(),
            ));
        }
        let max_delay = self.eval.delays.iter().copied().max().unwrap_or(0);
        if max_delay > s {
            return Err(Error::Config(format!(
                "eval.delays: delay {max_delay} exceeds execution.exec_horizon {s}"
            )));
        }
        if h < s + max_delay {
            return Err(Error::Config(format!(
                "model.horizon {h} must be >= execution.exec_horizon {s} + max eval delay {max_delay}"
            )));
        }
        for axis in [SweepAxis::Offset, SweepAxis::DelayScaled, SweepAxis::Fixed] {
            for (_, rule) in self.sweep_rules(axis) {
                rule.validate(h)
                    .map_err(|e| Error::Config(format!("sweep.{}: {e}", axis.tag())))?;
            }
        }
        if self.bench.batches.contains(&0) || self.bench.warmup == 0 || self.bench.iters < 10 {
            return Err(Error::Config(
                "bench needs batches >= 1, warmup >= 1 and iters >= 10".into(),
            ));
        }
        if self.bench.delay > s {
            return Err(Error::Config(format!(
                "bench.delay {} exceeds execution.exec_horizon {s}",
                self.bench.delay
            )));
        }
        Ok(())
    }
}

/// SHA-256 over length-prefixed input blobs, hex encoded.
pub fn input_hash(inputs: &[&[u8]]) -> String {
    let mut h = Sha256::new();
    for blob in inputs {
        h.update((blob.len() as u64).to_le_bytes());
        h.update(blob);
    }
    hex::encode(h.finalize())
}

fn read_input(path: &Path) -> Result<Vec<u8>> {
    fs::read(path).map_err(|e| Error::MissingInput {
        path: path.display().to_string(),
        reason: e.to_string(),
    })
}

fn provenance(config: &ExperimentConfig, hash: &str) -> serde_json::Value {
    serde_json::json!({ "config": config.to_toml(), "input_sha256": hash })
}

fn csv_comments(config: &ExperimentConfig, hash: &str) -> Vec<String> {
    vec![format!("config:\n{}", config.to_toml()), format!("input_sha256: {hash}")]
}

fn write_rows<T: Serialize>(path: &Path, comments: &[String], rows: &[T]) -> Result<()> {
    let mut buf = Vec::new();
    metrics::write_csv(&mut buf, comments, rows)?;
    fs::write(path, buf)?;
    Ok(())
}

/// Runs `f` on a rayon pool of `workers` threads, or the global pool.
pub fn with_workers<T: Send>(workers: Option<usize>, f: impl FnOnce() -> T + Send) -> Result<T> {
    match workers {
        None => Ok(f()),
        Some(0) => Err(Error::Config("--workers must be >= 1".into())),
        Some(n) => {
            let pool = rayon::ThreadPoolBuilder::new()
                .num_threads(n)
                .build()
                .map_err(|e| Error::Config(format!("worker pool: {e}")))?;
            Ok(pool.install(f))
        }
    }
}

/// Writes the demonstration dataset.
pub fn gen_data(config: &ExperimentConfig) -> Result<Vec<PathBuf>> {
    config.validate()?;
    let data = envs::generate_demos(
        &config.data_spec(),
        &config.data.expert,
        config.data.episodes,
        config.horizon(),
        config.data_seed(),
    )?;
    let path = config.dataset_path();
    ensure_parent(&path)?;
    let hash = input_hash(&[config.to_toml().as_bytes()]);
    envs::write_dataset(&path, &data, Some(provenance(config, &hash)))?;
    Ok(vec![path])
}

fn ensure_parent(path: &Path) -> Result<()> {
    if let Some(dir) = path.parent().filter(|d| !d.as_os_str().is_empty()) {
        fs::create_dir_all(dir)?;
    }
    Ok(())
}

fn check_compatible(expected: &ModelConfig, found: &ModelConfig, origin: &Path) -> Result<()> {
    let same = expected.obs_dim == found.obs_dim
        && expected.horizon == found.horizon
        && expected.action_dim == found.action_dim
        && expected.hidden == found.hidden
        && expected.activation == found.activation;
    if same {
        Ok(())
    } else {
        Err(Error::Config(format!(
            "checkpoint {} has model {:?}, config expects {:?}",
            origin.display(),
            found,
            expected
        )))
    }
}

/// Trains from the dataset (optionally fine-tuning a checkpoint) and writes
/// the checkpoint and the loss curve.
pub fn train(config: &ExperimentConfig) -> Result<Vec<PathBuf>> {
    config.validate()?;
    let data_path = config.dataset_path();
    let data_bytes = read_input(&data_path)?;
    let data = envs::read_dataset(&data_path)?;
    if data.meta.horizon != config.horizon() || data.meta.env.obs_dim() != config.data_spec().obs_dim() {
        return Err(Error::Config(format!(
            "dataset {} has horizon {} and obs_dim {}, config expects {} and {}",
            data_path.display(),
            data.meta.horizon,
            data.meta.env.obs_dim(),
            config.horizon(),
            config.data_spec().obs_dim()
        )));
    }
    let mut inputs = vec![data_bytes];
    let init = match &config.init_checkpoint {
        Some(p) => {
            let bytes = read_input(p)?;
            let (params, _) = model::parse_checkpoint(&bytes, p)?;
            check_compatible(&config.model_config(), params.config(), p)?;
            inputs.push(bytes);
            params
        }
        None => model::init_model(&config.model_config())?,
    };
    let outcome = train::train(&train::samples(&data), &config.train_config(), init)?;

    let refs: Vec<&[u8]> = inputs.iter().map(Vec::as_slice).collect();
    let hash = input_hash(&refs);
    let ckpt = config.checkpoint_path();
    ensure_parent(&ckpt)?;
    let meta = serde_json::to_string(&provenance(config, &hash)).expect("provenance serializes");
    model::save_checkpoint(&ckpt, &outcome.params, &meta)?;

    let curve = config.out_dir.join("loss_curve.csv");
    ensure_parent(&curve)?;
    let mut text = String::new();
    for c in csv_comments(config, &hash) {
        for line in c.lines() {
            text.push_str(&format!("# {line}\n"));
        }
    }
    text.push_str(&train::loss_curve_csv(&outcome.losses));
    fs::write(&curve, text)?;
    Ok(vec![ckpt, curve])
}

fn load_policy(config: &ExperimentConfig) -> Result<(ModelParams, Vec<u8>)> {
    let path = config.checkpoint_path();
    let bytes = read_input(&path)?;
    let (params, _) = model::parse_checkpoint(&bytes, &path)?;
    check_compatible(&config.model_config(), params.config(), &path)?;
    Ok((params, bytes))
}

fn grid<'a>(
    config: &'a ExperimentConfig,
    tasks: &'a [EnvSpec],
    method: &'a str,
    rule: WindowRule,
    schedule: Schedule,
) -> EvalGrid<'a> {
    EvalGrid {
        method,
        tasks,
        delays: &config.eval.delays,
        episodes: config.eval.episodes,
        exec: config.exec_config(),
        rule,
        schedule,
        solver: config.solver.clone(),
        master_seed: config.seed,
    }
}

fn eval_tasks(config: &ExperimentConfig) -> Vec<EnvSpec> {
    config
        .eval
        .tasks
        .iter()
        .map(|&t| config.env.spec(t, config.horizon()))
        .collect()
}

/// Evaluation rows for the configured grid and window.
pub fn eval_rows(config: &ExperimentConfig, params: &ModelParams) -> Result<Vec<ResultRow>> {
    let tasks = eval_tasks(config);
    let g = grid(config, &tasks, &config.eval.method, config.window.rule, config.window.schedule);
    executor::evaluate(params, &g)
}

/// Evaluates the checkpoint over the grid; `plot` adds the frontier table.
pub fn eval(config: &ExperimentConfig, workers: Option<usize>, plot: bool) -> Result<Vec<PathBuf>> {
    config.validate()?;
    let (params, bytes) = load_policy(config)?;
    let rows = with_workers(workers, || eval_rows(config, &params))??;
    let comments = csv_comments(config, &input_hash(&[&bytes]));
    fs::create_dir_all(&config.out_dir)?;
    let path = config.out_dir.join("results.csv");
    write_rows(&path, &comments, &rows)?;
    let mut out = vec![path];
    if plot {
        let f = config.out_dir.join("frontier.csv");
        write_rows(&f, &comments, &metrics::summarize(&rows))?;
        out.push(f);
    }
    Ok(out)
}

/// Evaluation rows for every value of `axis`, in axis order.
pub fn sweep_rows(config: &ExperimentConfig, params: &ModelParams, axis: SweepAxis) -> Result<Vec<SweepRow>> {
    let tasks = eval_tasks(config);
    let mut out = Vec::new();
    for (value, rule) in config.sweep_rules(axis) {
        let method = format!("{}_{value}", axis.tag());
        let g = grid(config, &tasks, &method, rule, config.window.schedule);
        for r in executor::evaluate(params, &g)? {
            out.push(SweepRow {
                axis: axis.tag().to_string(),
                axis_value: value,
                method: r.method,
                task: r.task,
                delay: r.delay,
                seed: r.seed,
                ret: r.ret,
                solve: r.solve,
                action_delta: r.action_delta,
                action_jerk: r.action_jerk,
                boundary_jump: r.boundary_jump,
            });
        }
    }
    Ok(out)
}

/// Runs the evaluation grid once per axis value and concatenates the rows.
pub fn sweep(config: &ExperimentConfig, axis: SweepAxis, workers: Option<usize>, plot: bool) -> Result<Vec<PathBuf>> {
    config.validate()?;
    let (params, bytes) = load_policy(config)?;
    let rows = with_workers(workers, || sweep_rows(config, &params, axis))??;
    let comments = csv_comments(config, &input_hash(&[&bytes]));
    fs::create_dir_all(&config.out_dir)?;
    let path = config.out_dir.join(format!("sweep_{}.csv", axis.tag()));
    write_rows(&path, &comments, &rows)?;
    let mut out = vec![path];
    if plot {
        let results: Vec<ResultRow> = rows.iter().map(SweepRow::result).collect();
        let f = config.out_dir.join(format!("frontier_{}.csv", axis.tag()));
        write_rows(&f, &comments, &metrics::summarize(&results))?;
        out.push(f);
    }
    Ok(out)
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct BenchReport {
    pub config: String,
    pub input_sha256: String,
    pub results: Vec<BenchResult>,
}

/// Latency of every method at every configured batch size. The policy is a
/// fresh init of the configured model, since timing does not depend on the
/// weight values.
pub fn bench_results(config: &ExperimentConfig) -> Result<Vec<BenchResult>> {
    let params = model::init_model(&config.model_config())?;
    let setup = config.bench_setup();
    let obs_dim = params.config().obs_dim;
    let mut out = Vec::new();
    for &batch in &config.bench.batches {
        for method in BenchMethod::ALL {
            out.push(bench::time_generation(
                &params,
                obs_dim,
                method,
                batch,
                config.bench.warmup,
                config.bench.iters,
                &setup,
            )?);
        }
    }
    Ok(out)
}

pub fn bench(config: &ExperimentConfig) -> Result<Vec<PathBuf>> {
    config.validate()?;
    let results = bench_results(config)?;
    let report = BenchReport {
        config: config.to_toml(),
        input_sha256: input_hash(&[config.to_toml().as_bytes()]),
        results,
    };
    fs::create_dir_all(&config.out_dir)?;
    let path = config.out_dir.join("bench.json");
    fs::write(&path, serde_json::to_string_pretty(&report).expect("bench report serializes"))?;
    Ok(vec![path])
}
