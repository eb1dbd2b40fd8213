//! Asynchronous chunked execution under a fixed inference delay.
//!
//! Timeline with execution horizon `s` and delay `d`: chunk `k` is generated
//! from the observation at step `k*s` and becomes active at step `k*s + d`.
//! Until then the previous chunk keeps executing, so step `k*s + i` (`i < d`)
//! runs chunk `k-1` at local index `s + i`, and chunk `k` runs local indices
//! `d .. s+d-1`. Chunk 0 is generated synchronously. The delay is pure
//! bookkeeping: nothing sleeps, so rollouts are deterministic.

use std::io::{BufRead, BufReader, BufWriter, Write};
use std::path::Path;
use std::time::Instant;

use rand::Rng;
use rayon::prelude::*;
use serde::{Deserialize, Serialize};

use crate::chunk::{ActionChunk, PriorChunk};
use crate::envs::{self, Env, EnvSpec};
use crate::error::{Error, Result};
use crate::infer::{self, SolverConfig};
use crate::metrics::{self, ResultRow};
use crate::model::VectorField;
use crate::seeding;
use crate::weights::{self, Schedule, WeightProfile, WindowRule};

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize, Default)]
#[serde(rename_all = "snake_case")]
pub enum ExecMode {
    /// Switch chunks without conditioning on the previous one.
    Naive,
    #[default]
    Rtc,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct ExecutionConfig {
    pub horizon: usize,
    pub exec_horizon: usize,
    pub delay: usize,
    pub episode_len: usize,
    pub mode: ExecMode,
    #[serde(default)]
    pub record_timing: bool,
}

impl ExecutionConfig {
    pub fn validate(&self) -> Result<()> {
        let (h, s, d) = (self.horizon, self.exec_horizon, self.delay);
        if s == 0 || s > h {
            return Err(Error::Config(format!(
                "execution.exec_horizon {s} must be in 1..={h}"
            )));
        }
        if d > s {
            return Err(Error::Config(format!(
                "delay {d} exceeds execution horizon {s}: the previous chunk would not be ready"
            )));
        }
        if s + d > h {
            return Err(Error::Config(format!(
                "chunk horizon {h} < exec_horizon {s} + delay {d}"
            )));
        }
        if self.episode_len == 0 {
            return Err(Error::Config("execution.episode_len must be >= 1".into()));
        }
        Ok(())
    }
}

/// `Y[j] = prev[s + j]` for `j < H - s`; the rest is invalid and zero.
pub fn align_prior(prev: &ActionChunk, exec_horizon: usize) -> PriorChunk {
    let (h, a) = prev.shape();
    let mut values = ActionChunk::zeros(h, a);
    let mut valid = vec![false; h];
    for j in 0..h.saturating_sub(exec_horizon) {
        values.row_mut(j).copy_from_slice(prev.row(exec_horizon + j));
        valid[j] = true;
    }
    PriorChunk { values, valid }
}

/// Which chunk and token produced an executed action.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
pub struct StepSource {
    pub chunk: usize,
    pub token: usize,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct RolloutLog {
    /// Executed (clipped) action per controller step.
    pub actions: Vec<Vec<f64>>,
    pub sources: Vec<StepSource>,
    /// First step of every chunk after the bootstrap chunk.
    pub boundaries: Vec<usize>,
    pub rewards: Vec<f64>,
    /// Every generated chunk, in generation order.
    pub chunks: Vec<ActionChunk>,
    /// Wall time per chunk generation; empty unless timing was requested.
    pub generation_ns: Vec<u64>,
    pub final_error: f64,
    pub solved: bool,
}

/// Index of the chunk active at step `t`.
fn active_chunk(t: usize, s: usize, d: usize) -> usize {
    let k = t / s;
    if k >= 1 && t < k * s + d {
        k - 1
    } else {
        k
    }
}

#[allow(clippy::too_many_arguments)]
pub fn rollout<F, R>(
    mut env: Env,
    field: &F,
    exec: &ExecutionConfig,
    rule: WindowRule,
    schedule: Schedule,
    solver: &SolverConfig,
    rng: &mut R,
) -> Result<RolloutLog>
where
    F: VectorField + ?Sized,
    R: Rng + ?Sized,
{
    exec.validate()?;
    if field.horizon() != exec.horizon {
        return Err(Error::Config(format!(
            "model horizon {} differs from execution horizon {}",
            field.horizon(),
            exec.horizon
        )));
    }
    let (s, d, h) = (exec.exec_horizon, exec.delay, exec.horizon);
    let rtc_profile = weights::token_weights(rule, schedule, d, h)?;
    let free = WeightProfile::free(h);

    let n = exec.episode_len;
    let mut log = RolloutLog {
        actions: Vec::with_capacity(n),
        sources: Vec::with_capacity(n),
        boundaries: Vec::new(),
        rewards: Vec::with_capacity(n),
        chunks: Vec::with_capacity(n / s + 1),
        generation_ns: Vec::new(),
        final_error: 0.0,
        solved: false,
    };
    for t in 0..n {
        if t % s == 0 {
            let k = t / s;
            let obs = env.observe();
            let prior = match (k, exec.mode) {
                (0, _) | (_, ExecMode::Naive) => None,
                (_, ExecMode::Rtc) => Some(align_prior(&log.chunks[k - 1], s)),
            };
            let profile = if prior.is_some() { &rtc_profile } else { &free };
            let started = Instant::now();
            let chunk = infer::generate_with_profile(field, &obs, prior.as_ref(), profile, solver, rng)?;
            if exec.record_timing {
                log.generation_ns.push(started.elapsed().as_nanos() as u64);
            }
            log.chunks.push(chunk);
        }
        let k = active_chunk(t, s, d);
        let token = t - k * s;
        if k >= 1 && t == k * s + d {
            log.boundaries.push(t);
        }
        let (applied, reward) = env.step(log.chunks[k].row(token))?;
        log.actions.push(applied);
        log.sources.push(StepSource { chunk: k, token });
        log.rewards.push(reward);
    }
    log.final_error = env.tracking_error();
    log.solved = envs::solve(&log, &env.spec);
    Ok(log)
}

#[derive(Serialize, Deserialize)]
#[serde(tag = "kind", rename_all = "snake_case")]
enum LogRecord {
    Header {
        format: String,
        version: u32,
        steps: usize,
        boundaries: Vec<usize>,
        generation_ns: Vec<u64>,
        final_error: f64,
        solved: bool,
    },
    Step {
        t: usize,
        action: Vec<f64>,
        reward: f64,
        chunk: usize,
        token: usize,
    },
    Chunk {
        index: usize,
        values: ActionChunk,
    },
}

const LOG_FORMAT: &str = "softrtc-rollout";

pub fn write_log(path: &Path, log: &RolloutLog) -> Result<()> {
    let mut w = BufWriter::new(std::fs::File::create(path)?);
    let mut put = |rec: &LogRecord| -> Result<()> {
        serde_json::to_writer(&mut w, rec).map_err(|e| Error::format(path, e))?;
        w.write_all(b"\n")?;
        Ok(())
    };
    put(&LogRecord::Header {
        format: LOG_FORMAT.into(),
        version: 1,
        steps: log.actions.len(),
        boundaries: log.boundaries.clone(),
        generation_ns: log.generation_ns.clone(),
        final_error: log.final_error,
        solved: log.solved,
    })?;
    for (t, ((action, reward), src)) in log.actions.iter().zip(&log.rewards).zip(&log.sources).enumerate() {
        put(&LogRecord::Step {
            t,
            action: action.clone(),
            reward: *reward,
            chunk: src.chunk,
            token: src.token,
        })?;
    }
    for (index, values) in log.chunks.iter().enumerate() {
        put(&LogRecord::Chunk {
            index,
            values: values.clone(),
        })?;
    }
    w.flush()?;
    Ok(())
}

pub fn read_log(path: &Path) -> Result<RolloutLog> {
    let f = std::fs::File::open(path).map_err(|e| Error::MissingInput {
        path: path.display().to_string(),
        reason: e.to_string(),
    })?;
    let mut log: Option<RolloutLog> = None;
    for line in BufReader::new(f).lines() {
        let line = line?;
        if line.is_empty() {
            continue;
        }
        let rec: LogRecord = serde_json::from_str(&line).map_err(|e| Error::format(path, e))?;
        match (rec, log.as_mut()) {
            (
                LogRecord::Header {
                    format,
                    steps,
                    boundaries,
                    generation_ns,
                    final_error,
                    solved,
                    ..
                },
                None,
            ) => {
                if format != LOG_FORMAT {
                    return Err(Error::format(path, "not a rollout log"));
                }
                log = Some(RolloutLog {
                    actions: Vec::with_capacity(steps),
                    sources: Vec::with_capacity(steps),
                    boundaries,
                    rewards: Vec::with_capacity(steps),
                    chunks: Vec::new(),
                    generation_ns,
                    final_error,
                    solved,
                });
            }
            (LogRecord::Step { t, action, reward, chunk, token }, Some(l)) => {
                if t != l.actions.len() {
                    return Err(Error::format(path, format!("step {t} out of order")));
                }
                l.actions.push(action);
                l.rewards.push(reward);
                l.sources.push(StepSource { chunk, token });
            }
            (LogRecord::Chunk { index, values }, Some(l)) => {
                if index != l.chunks.len() {
                    return Err(Error::format(path, format!("chunk {index} out of order")));
                }
                l.chunks.push(values);
            }
            _ => return Err(Error::format(path, "header must come first, exactly once")),
        }
    }
    log.ok_or_else(|| Error::format(path, "empty rollout log"))
}

/// One policy evaluated over a grid of tasks, delays and episodes.
#[derive(Debug, Clone)]
pub struct EvalGrid<'a> {
    pub method: &'a str,
    pub tasks: &'a [EnvSpec],
    pub delays: &'a [usize],
    pub episodes: usize,
    pub exec: ExecutionConfig,
    pub rule: WindowRule,
    pub schedule: Schedule,
    pub solver: SolverConfig,
    pub master_seed: u64,
}

/// Environment seed for `episode` of task `task`; shared across delays and
/// methods so every cell sees the same initial conditions.
pub fn episode_seed(master: u64, task: usize, episode: usize) -> u64 {
    seeding::derive_seed(master, &[0x6576616c, task as u64, episode as u64])
}

fn policy_stream(master: u64, solver_seed: u64, task: usize, episode: usize) -> rand_chacha::ChaCha8Rng {
    seeding::stream(master, &[0x706f6c, solver_seed, task as u64, episode as u64])
}

/// Runs every `(task, delay, episode)` rollout and returns one row each, in
/// that nesting order. Rows do not depend on the rayon pool size.
pub fn evaluate<F>(field: &F, grid: &EvalGrid<'_>) -> Result<Vec<ResultRow>>
where
    F: VectorField + Sync + ?Sized,
{
    let cells: Vec<(usize, usize, usize)> = (0..grid.tasks.len())
        .flat_map(|ti| {
            grid.delays
                .iter()
                .flat_map(move |&d| (0..grid.episodes).map(move |e| (ti, d, e)))
        })
        .collect();
    cells
        .par_iter()
        .map(|&(ti, delay, episode)| {
            let spec = &grid.tasks[ti];
            let exec = ExecutionConfig {
                delay,
                episode_len: spec.episode_len,
                ..grid.exec.clone()
            };
            let seed = episode_seed(grid.master_seed, ti, episode);
            let env = Env::reset(spec, seed);
            let mut rng = policy_stream(grid.master_seed, grid.solver.seed, ti, episode);
            let log = rollout(env, field, &exec, grid.rule, grid.schedule, &grid.solver, &mut rng)?;
            metrics::result_row(grid.method, spec, delay, seed, &log)
        })
        .collect()
}
