//! Toy point-mass tracking tasks, a scripted PD expert and demonstration data.
//!
//! Both tasks are a 2-D double integrator (`pos += vel * dt; vel += a * dt`)
//! that must follow a smooth Lissajous reference. `ModeSwitch` additionally
//! relocates the reference by a fixed-magnitude jump at a known step, which
//! produces a sharp change in the expert's actions.

use std::f64::consts::TAU;
use std::io::{BufRead, BufReader, BufWriter, Write};
use std::path::Path;

use rand::Rng;
use serde::{Deserialize, Serialize};

use crate::chunk::ActionChunk;
use crate::error::{Error, Result};
use crate::executor::RolloutLog;
use crate::seeding;

#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum TaskKind {
    PointMassTrack,
    ModeSwitch,
}

impl TaskKind {
    pub fn tag(&self) -> &'static str {
        match self {
            TaskKind::PointMassTrack => "point_mass_track",
            TaskKind::ModeSwitch => "mode_switch",
        }
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct EnvSpec {
    pub task: TaskKind,
    pub dt: f64,
    pub episode_len: usize,
    /// Per-component action clip.
    pub action_bound: f64,
    /// Final tracking error below which an episode counts as solved.
    pub solve_threshold: f64,
    /// Number of future reference points in the observation.
    pub preview: usize,
    /// Largest initial position offset from the reference, per axis.
    pub init_offset: f64,
    /// Step at which `ModeSwitch` relocates its reference.
    pub switch_step: usize,
    /// Distance of the `ModeSwitch` relocation.
    pub jump: f64,
}

impl EnvSpec {
    pub fn new(task: TaskKind, preview: usize) -> Self {
        Self {
            task,
            dt: 0.05,
            episode_len: 200,
            action_bound: 5.0,
            solve_threshold: 0.1,
            preview,
            init_offset: 0.3,
            switch_step: 100,
            jump: 1.0,
        }
    }

    pub fn validate(&self) -> Result<()> {
        let bad = |m: &str| Err(Error::Config(format!("env.{m}")));
        if !(self.dt > 0.0 && self.dt.is_finite()) {
            return bad("dt must be positive");
        }
        if !(self.action_bound > 0.0 && self.action_bound.is_finite()) {
            return bad("action_bound must be positive and finite");
        }
        if !(self.solve_threshold > 0.0) {
            return bad("solve_threshold must be positive");
        }
        if self.episode_len == 0 || self.preview == 0 {
            return bad("episode_len and preview must be >= 1");
        }
        if !(self.init_offset >= 0.0 && self.jump >= 0.0) {
            return bad("init_offset and jump must be nonnegative");
        }
        Ok(())
    }

    pub fn obs_dim(&self) -> usize {
        4 + 2 * self.preview
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct ExpertConfig {
    pub kp: f64,
    pub kd: f64,
}

impl Default for ExpertConfig {
    fn default() -> Self {
        Self { kp: 16.0, kd: 8.0 }
    }
}

/// `center + amplitude * sin(freq * t + phase)`, plus `jump` from `switch_step` on.
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct Reference {
    pub center: [f64; 2],
    pub amplitude: [f64; 2],
    pub freq: [f64; 2],
    pub phase: [f64; 2],
    pub jump: [f64; 2],
    pub switch_step: Option<usize>,
    pub dt: f64,
}

impl Reference {
    pub fn position(&self, step: usize) -> [f64; 2] {
        let t = step as f64 * self.dt;
        let shift = match self.switch_step {
            Some(s) if step >= s => self.jump,
            _ => [0.0, 0.0],
        };
        [0, 1].map(|i| {
            self.center[i] + self.amplitude[i] * (self.freq[i] * t + self.phase[i]).sin() + shift[i]
        })
    }

    pub fn velocity(&self, step: usize) -> [f64; 2] {
        let t = step as f64 * self.dt;
        [0, 1].map(|i| self.amplitude[i] * self.freq[i] * (self.freq[i] * t + self.phase[i]).cos())
    }

    /// A reference that never moves.
    pub fn fixed(point: [f64; 2], dt: f64) -> Self {
        Self {
            center: point,
            amplitude: [0.0; 2],
            freq: [0.0; 2],
            phase: [0.0; 2],
            jump: [0.0; 2],
            switch_step: None,
            dt,
        }
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct EnvState {
    pub pos: [f64; 2],
    pub vel: [f64; 2],
    pub reference: Reference,
    pub step: usize,
}

impl EnvState {
    pub fn tracking_error(&self) -> f64 {
        let r = self.reference.position(self.step);
        ((self.pos[0] - r[0]).powi(2) + (self.pos[1] - r[1]).powi(2)).sqrt()
    }
}

/// A task instance: spec plus mutable state.
#[derive(Debug, Clone, PartialEq)]
pub struct Env {
    pub spec: EnvSpec,
    pub state: EnvState,
}

impl Env {
    /// Samples a reference and an initial state from `seed`.
    pub fn reset(spec: &EnvSpec, seed: u64) -> Self {
        let mut rng = seeding::stream(seed, &[0x656e76]);
        let (amp_lo, amp_hi) = match spec.task {
            TaskKind::PointMassTrack => (0.5, 1.0),
            TaskKind::ModeSwitch => (0.2, 0.4),
        };
        let mut reference = Reference {
            center: [0.0; 2],
            amplitude: [0, 1].map(|_| rng.gen_range(amp_lo..amp_hi)),
            freq: [0, 1].map(|_| rng.gen_range(0.3..0.6)),
            phase: [0, 1].map(|_| rng.gen_range(0.0..TAU)),
            jump: [0.0; 2],
            switch_step: None,
            dt: spec.dt,
        };
        if spec.task == TaskKind::ModeSwitch {
            let angle: f64 = rng.gen_range(0.0..TAU);
            reference.jump = [spec.jump * angle.cos(), spec.jump * angle.sin()];
            reference.switch_step = Some(spec.switch_step);
        }
        let start = reference.position(0);
        let pos = [0, 1].map(|i| start[i] + rng.gen_range(-1.0..=1.0) * spec.init_offset);
        Self {
            spec: spec.clone(),
            state: EnvState {
                pos,
                vel: reference.velocity(0),
                reference,
                step: 0,
            },
        }
    }

    /// `[pos, vel, ref(t + j) - pos for j in 0..preview]`.
    pub fn observe(&self) -> Vec<f64> {
        let s = &self.state;
        let mut obs = Vec::with_capacity(self.spec.obs_dim());
        obs.extend_from_slice(&s.pos);
        obs.extend_from_slice(&s.vel);
        for j in 0..self.spec.preview {
            let r = s.reference.position(s.step + j);
            obs.push(r[0] - s.pos[0]);
            obs.push(r[1] - s.pos[1]);
        }
        obs
    }

    /// Applies the clipped action; returns the clipped action and the reward.
    pub fn step(&mut self, action: &[f64]) -> Result<(Vec<f64>, f64)> {
        let (next, reward, applied) = step(&self.spec, &self.state, action)?;
        self.state = next;
        Ok((applied, reward))
    }

    pub fn tracking_error(&self) -> f64 {
        self.state.tracking_error()
    }
}

pub fn clip_action(spec: &EnvSpec, action: &[f64]) -> Vec<f64> {
    action
        .iter()
        .map(|a| a.clamp(-spec.action_bound, spec.action_bound))
        .collect()
}

/// Double-integrator update. Reward is `exp(-tracking error)` after the move.
pub fn step(spec: &EnvSpec, state: &EnvState, action: &[f64]) -> Result<(EnvState, f64, Vec<f64>)> {
    if action.len() != 2 {
        return Err(Error::shape("env action", 2, action.len()));
    }
    if action.iter().any(|a| !a.is_finite()) {
        return Err(Error::NonFinite("env action"));
    }
    let a = clip_action(spec, action);
    let mut next = *state;
    for i in 0..2 {
        next.pos[i] = state.pos[i] + state.vel[i] * spec.dt;
        next.vel[i] = state.vel[i] + a[i] * spec.dt;
    }
    next.step += 1;
    let reward = (-next.tracking_error()).exp();
    Ok((next, reward, a))
}

/// PD tracking law `kp (ref - pos) + kd (ref' - vel)`, clipped.
pub fn expert_action(state: &EnvState, spec: &EnvSpec, expert: &ExpertConfig) -> Vec<f64> {
    let r = state.reference.position(state.step);
    let rv = state.reference.velocity(state.step);
    let raw: Vec<f64> = (0..2)
        .map(|i| expert.kp * (r[i] - state.pos[i]) + expert.kd * (rv[i] - state.vel[i]))
        .collect();
    clip_action(spec, &raw)
}

/// Whether the episode ended within the solve threshold.
pub fn solve(log: &RolloutLog, spec: &EnvSpec) -> bool {
    log.final_error < spec.solve_threshold
}

/// Mean per-step reward, in `[0, 1]`.
pub fn episode_return(log: &RolloutLog) -> f64 {
    if log.rewards.is_empty() {
        return 0.0;
    }
    log.rewards.iter().sum::<f64>() / log.rewards.len() as f64
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct DemoPair {
    pub obs: Vec<f64>,
    pub chunk: ActionChunk,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct DatasetMeta {
    pub env: EnvSpec,
    pub expert: ExpertConfig,
    pub episodes: usize,
    pub horizon: usize,
    pub seed: u64,
}

#[derive(Debug, Clone, PartialEq)]
pub struct Dataset {
    pub meta: DatasetMeta,
    pub pairs: Vec<DemoPair>,
}

/// Expert trajectory of one episode: observations and executed actions.
pub fn expert_episode(spec: &EnvSpec, expert: &ExpertConfig, seed: u64) -> Result<(Vec<Vec<f64>>, Vec<Vec<f64>>, Env)> {
    let mut env = Env::reset(spec, seed);
    let mut observations = Vec::with_capacity(spec.episode_len);
    let mut actions = Vec::with_capacity(spec.episode_len);
    for _ in 0..spec.episode_len {
        observations.push(env.observe());
        let a = expert_action(&env.state, spec, expert);
        let (applied, _) = env.step(&a)?;
        actions.push(applied);
    }
    Ok((observations, actions, env))
}

/// Episode seed used for demonstration episode `index`.
pub fn demo_episode_seed(seed: u64, index: usize) -> u64 {
    seeding::derive_seed(seed, &[0x64656d6f, index as u64])
}

/// Slides a window of `horizon` expert actions over every expert episode.
pub fn generate_demos(
    spec: &EnvSpec,
    expert: &ExpertConfig,
    episodes: usize,
    horizon: usize,
    seed: u64,
) -> Result<Dataset> {
    spec.validate()?;
    if horizon == 0 || horizon > spec.episode_len {
        return Err(Error::Config(format!(
            "chunk horizon {horizon} must be in 1..={}",
            spec.episode_len
        )));
    }
    let mut pairs = Vec::with_capacity(episodes * (spec.episode_len - horizon + 1));
    for e in 0..episodes {
        let (observations, actions, _) = expert_episode(spec, expert, demo_episode_seed(seed, e))?;
        for t in 0..=spec.episode_len - horizon {
            let chunk = ActionChunk::from_rows(&actions[t..t + horizon])?;
            pairs.push(DemoPair {
                obs: observations[t].clone(),
                chunk,
            });
        }
    }
    Ok(Dataset {
        meta: DatasetMeta {
            env: spec.clone(),
            expert: *expert,
            episodes,
            horizon,
            seed,
        },
        pairs,
    })
}

const DATASET_FORMAT: &str = "softrtc-dataset";
const DATASET_VERSION: u32 = 1;

#[derive(Serialize, Deserialize)]
struct DatasetHeader {
    format: String,
    version: u32,
    meta: DatasetMeta,
    pairs: usize,
    #[serde(default, skip_serializing_if = "Option::is_none")]
    provenance: Option<serde_json::Value>,
}

/// One JSON header line, then one JSON object per pair.
pub fn write_dataset(path: &Path, data: &Dataset, provenance: Option<serde_json::Value>) -> Result<()> {
    let mut w = BufWriter::new(std::fs::File::create(path)?);
    let header = DatasetHeader {
        format: DATASET_FORMAT.into(),
        version: DATASET_VERSION,
        meta: data.meta.clone(),
        pairs: data.pairs.len(),
        provenance,
    };
    serde_json::to_writer(&mut w, &header).map_err(|e| Error::format(path, e))?;
    w.write_all(b"\n")?;
    for pair in &data.pairs {
        serde_json::to_writer(&mut w, pair).map_err(|e| Error::format(path, e))?;
        w.write_all(b"\n")?;
    }
    w.flush()?;
    Ok(())
}

pub fn read_dataset(path: &Path) -> Result<Dataset> {
    let f = std::fs::File::open(path).map_err(|e| Error::MissingInput {
        path: path.display().to_string(),
        reason: e.to_string(),
    })?;
    let mut lines = BufReader::new(f).lines();
    let first = lines
        .next()
        .ok_or_else(|| Error::format(path, "empty dataset file"))??;
    let header: DatasetHeader = serde_json::from_str(&first).map_err(|e| Error::format(path, e))?;
    if header.format != DATASET_FORMAT || header.version != DATASET_VERSION {
        return Err(Error::format(path, "unsupported dataset format"));
    }
    let mut pairs = Vec::with_capacity(header.pairs);
    for line in lines {
        let line = line?;
        if line.is_empty() {
            continue;
        }
        pairs.push(serde_json::from_str(&line).map_err(|e| Error::format(path, e))?);
    }
    if pairs.len() != header.pairs {
        return Err(Error::format(
            path,
            format!("header announces {} pairs, found {}", header.pairs, pairs.len()),
        ));
    }
    Ok(Dataset {
        meta: header.meta,
        pairs,
    })
}
