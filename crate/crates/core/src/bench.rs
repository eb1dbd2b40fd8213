//! Steady-state chunk-generation latency and runtime ratios against naive
//! generation.

use std::hint::black_box;
use std::sync::atomic::{AtomicUsize, Ordering};
use std::time::Instant;

use rand::SeedableRng;
use rand_chacha::ChaCha8Rng;
use serde::{Deserialize, Serialize};

use crate::chunk::{ActionChunk, PriorChunk};
use crate::error::{Error, Result};
use crate::executor;
use crate::infer::{self, SolverConfig};
use crate::model::VectorField;
use crate::weights::{self, Schedule, WeightProfile, WindowRule};

/// Measured samples shorter than this are repeated until they are not.
const MIN_SAMPLE_NS: u128 = 500_000;

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum BenchMethod {
    Naive,
    Hard,
    Soft,
}

impl BenchMethod {
    pub const ALL: [BenchMethod; 3] = [BenchMethod::Naive, BenchMethod::Hard, BenchMethod::Soft];

    pub fn tag(&self) -> &'static str {
        match self {
            BenchMethod::Naive => "naive",
            BenchMethod::Hard => "hard",
            BenchMethod::Soft => "soft",
        }
    }
}

/// Fixed inputs shared by every timed call.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct BenchSetup {
    pub delay: usize,
    pub exec_horizon: usize,
    pub soft_rule: WindowRule,
    pub soft_schedule: Schedule,
    pub solver: SolverConfig,
}

impl Default for BenchSetup {
    fn default() -> Self {
        Self {
            delay: 2,
            exec_horizon: 4,
            soft_rule: WindowRule::DelayScaled {
                multiplier: 2,
                max_horizon: 8,
            },
            soft_schedule: Schedule::Linear,
            solver: SolverConfig::default(),
        }
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct BenchResult {
    pub method: String,
    pub batch: usize,
    pub warmup: usize,
    pub iters: usize,
    /// Calls folded into each measured sample.
    pub inner_reps: usize,
    pub mean_ns: f64,
    pub median_ns: f64,
    pub p95_ns: f64,
    /// Median latency over the median of interleaved naive calls.
    pub ratio: f64,
    pub evaluations_per_chunk: usize,
}

/// Counts vector-field evaluations made through it.
pub struct CountingField<'a, F: ?Sized> {
    inner: &'a F,
    calls: AtomicUsize,
}

impl<'a, F: VectorField + ?Sized> CountingField<'a, F> {
    pub fn new(inner: &'a F) -> Self {
        Self {
            inner,
            calls: AtomicUsize::new(0),
        }
    }

    pub fn calls(&self) -> usize {
        self.calls.load(Ordering::Relaxed)
    }
}

impl<F: VectorField + ?Sized> VectorField for CountingField<'_, F> {
    fn horizon(&self) -> usize {
        self.inner.horizon()
    }

    fn action_dim(&self) -> usize {
        self.inner.action_dim()
    }

    fn velocity(&self, obs: &[f64], x: &ActionChunk, t: &[f64]) -> Result<ActionChunk> {
        self.calls.fetch_add(1, Ordering::Relaxed);
        self.inner.velocity(obs, x, t)
    }
}

struct Workload {
    obs: Vec<f64>,
    prior: Option<PriorChunk>,
    profile: WeightProfile,
}

fn workload<F: VectorField + ?Sized>(field: &F, obs_dim: usize, method: BenchMethod, setup: &BenchSetup) -> Result<Workload> {
    let (h, a) = (field.horizon(), field.action_dim());
    let mut rng = ChaCha8Rng::seed_from_u64(0x62656e6368);
    let obs: Vec<f64> = ActionChunk::standard_normal(1, obs_dim, &mut rng).into_vec();
    let prev = ActionChunk::standard_normal(h, a, &mut rng);
    let prior = executor::align_prior(&prev, setup.exec_horizon);
    let (rule, schedule) = match method {
        BenchMethod::Naive => return Ok(Workload { obs, prior: None, profile: WeightProfile::free(h) }),
        BenchMethod::Hard => (WindowRule::HARD, Schedule::Zeros),
        BenchMethod::Soft => (setup.soft_rule, setup.soft_schedule),
    };
    let profile = weights::token_weights(rule, schedule, setup.delay, h)?;
    Ok(Workload {
        obs,
        prior: Some(prior),
        profile,
    })
}

fn call<F: VectorField + ?Sized>(field: &F, w: &Workload, solver: &SolverConfig, batch: usize, seed: u64) -> Result<()> {
    for b in 0..batch {
        let mut rng = ChaCha8Rng::seed_from_u64(seed.wrapping_add(b as u64));
        let chunk = infer::generate_with_profile(field, &w.obs, w.prior.as_ref(), &w.profile, solver, &mut rng)?;
        black_box(chunk);
    }
    Ok(())
}

fn timed<F: VectorField + ?Sized>(
    field: &F,
    w: &Workload,
    solver: &SolverConfig,
    batch: usize,
    reps: usize,
) -> Result<f64> {
    let start = Instant::now();
    for r in 0..reps {
        call(field, w, solver, batch, r as u64)?;
    }
    Ok(start.elapsed().as_nanos() as f64 / reps as f64)
}

fn median(sorted: &[f64]) -> f64 {
    let n = sorted.len();
    if n % 2 == 1 {
        sorted[n / 2]
    } else {
        0.5 * (sorted[n / 2 - 1] + sorted[n / 2])
    }
}

/// Model evaluations spent generating one chunk with `method`.
pub fn evaluations_per_chunk<F: VectorField + ?Sized>(
    field: &F,
    obs_dim: usize,
    method: BenchMethod,
    setup: &BenchSetup,
) -> Result<usize> {
    let counter = CountingField::new(field);
    let w = workload(field, obs_dim, method, setup)?;
    call(&counter, &w, &setup.solver, 1, 0)?;
    Ok(counter.calls())
}

/// Times `iters` calls of `batch` chunk generations with `method`, each
/// interleaved with a naive call on the same inputs, after `warmup`
/// unmeasured rounds. Runs on the calling thread only.
pub fn time_generation<F: VectorField + ?Sized>(
    field: &F,
    obs_dim: usize,
    method: BenchMethod,
    batch: usize,
    warmup: usize,
    iters: usize,
    setup: &BenchSetup,
) -> Result<BenchResult> {
    if warmup < 1 || iters < 10 || batch < 1 {
        return Err(Error::Config(format!(
            "bench needs warmup >= 1, iters >= 10, batch >= 1 (got {warmup}, {iters}, {batch})"
        )));
    }
    setup.solver.validate()?;
    let naive = workload(field, obs_dim, BenchMethod::Naive, setup)?;
    let target = workload(field, obs_dim, method, setup)?;
    for _ in 0..warmup {
        call(field, &naive, &setup.solver, batch, 0)?;
        call(field, &target, &setup.solver, batch, 0)?;
    }

    let once = timed(field, &target, &setup.solver, batch, 1)?.max(1.0);
    let reps = ((MIN_SAMPLE_NS as f64 / once).ceil() as usize).max(1);

    let mut base = Vec::with_capacity(iters);
    let mut samples = Vec::with_capacity(iters);
    for i in 0..iters {
        // alternate who goes first so drift hits both series alike
        if i % 2 == 0 {
            base.push(timed(field, &naive, &setup.solver, batch, reps)?);
            samples.push(timed(field, &target, &setup.solver, batch, reps)?);
        } else {
            samples.push(timed(field, &target, &setup.solver, batch, reps)?);
            base.push(timed(field, &naive, &setup.solver, batch, reps)?);
        }
    }
    let mean = samples.iter().sum::<f64>() / iters as f64;
    samples.sort_by(f64::total_cmp);
    base.sort_by(f64::total_cmp);
    let p95_idx = ((0.95 * iters as f64).ceil() as usize).clamp(1, iters) - 1;
    let med = median(&samples);
    Ok(BenchResult {
        method: method.tag().to_string(),
        batch,
        warmup,
        iters,
        inner_reps: reps,
        mean_ns: mean,
        median_ns: med,
        p95_ns: samples[p95_idx],
        ratio: med / median(&base),
        evaluations_per_chunk: evaluations_per_chunk(field, obs_dim, method, setup)?,
    })
}

/// Pretty JSON listing every field of every result.
pub fn report(results: &[BenchResult]) -> String {
    serde_json::to_string_pretty(results).expect("bench results serialize")
}
