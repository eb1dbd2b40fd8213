//! Prior-informed corruption and the token-weighted flow-matching objective.
//!
//! For a target chunk `A`, noise `eps` and flow time `tau`, each token is
//! corrupted at its own time `tau_j = w_j + (1 - w_j) tau`, so fully clamped
//! tokens (`w_j = 1`) are the clean target and free tokens follow the usual
//! interpolation path. The per-sample loss is
//!
//! ```text
//! sum_j (1 - w_j) |v_j - (A_j - eps_j)|^2 / (sum_j (1 - w_j) + denom_eps)
//! ```
//!
//! averaged over the batch. During training the prior for soft tokens is the
//! target itself.

use rand::seq::SliceRandom;
use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;
use rayon::prelude::*;
use serde::{Deserialize, Serialize};

use crate::chunk::ActionChunk;
use crate::envs::Dataset;
use crate::error::{Error, Result};
use crate::model::{self, AdamState, ModelParams};
use crate::weights::{self, Schedule, WeightProfile, WindowRule};

#[derive(Debug, Clone, PartialEq)]
pub struct TrainSample {
    pub obs: Vec<f64>,
    pub target: ActionChunk,
    pub delay: usize,
}

/// One zero-delay sample per demonstration pair.
pub fn samples(data: &Dataset) -> Vec<TrainSample> {
    data.pairs
        .iter()
        .map(|p| TrainSample {
            obs: p.obs.clone(),
            target: p.chunk.clone(),
            delay: 0,
        })
        .collect()
}

#[derive(Debug, Clone, PartialEq)]
pub struct CorruptedChunk {
    pub x_omega: ActionChunk,
    pub tau_omega: Vec<f64>,
    pub noise: ActionChunk,
    pub tau: f64,
}

pub fn corrupt(
    target: &ActionChunk,
    noise: &ActionChunk,
    tau: f64,
    profile: &WeightProfile,
) -> Result<CorruptedChunk> {
    noise.check_shape("corrupt noise", target.shape())?;
    if profile.horizon() != target.horizon() {
        return Err(Error::shape("corrupt weights", target.horizon(), profile.horizon()));
    }
    if !(0.0..=1.0).contains(&tau) {
        return Err(Error::InvalidTime(tau));
    }
    let tau_omega: Vec<f64> = profile.omega().iter().map(|&w| w + (1.0 - w) * tau).collect();
    let mut x_omega = target.clone();
    for (j, &tj) in tau_omega.iter().enumerate() {
        for (x, &e) in x_omega.row_mut(j).iter_mut().zip(noise.row(j)) {
            *x = tj * *x + (1.0 - tj) * e;
        }
    }
    Ok(CorruptedChunk {
        x_omega,
        tau_omega,
        noise: noise.clone(),
        tau,
    })
}

/// Window rule, schedule and loss-denominator stabilizer.
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct Objective {
    pub rule: WindowRule,
    pub schedule: Schedule,
    pub denom_eps: f64,
}

/// Noise and flow time for one sample.
#[derive(Debug, Clone, PartialEq)]
pub struct SampleDraw {
    pub noise: ActionChunk,
    pub tau: f64,
}

impl SampleDraw {
    /// Draws `H x A` standard normals (row-major), then `tau ~ U[0, 1)`.
    pub fn draw<R: Rng + ?Sized>(horizon: usize, action_dim: usize, rng: &mut R) -> Self {
        let noise = ActionChunk::standard_normal(horizon, action_dim, rng);
        let tau = rng.gen::<f64>();
        Self { noise, tau }
    }
}

/// Loss of one sample, with `scale * dloss/dparams` added into `grad`.
pub fn sample_loss(
    params: &ModelParams,
    sample: &TrainSample,
    draw: &SampleDraw,
    objective: &Objective,
    scale: f64,
    grad: Option<&mut [f64]>,
) -> Result<f64> {
    let cfg = params.config();
    sample.target.check_shape("train target", (cfg.horizon, cfg.action_dim))?;
    let profile = weights::token_weights(objective.rule, objective.schedule, sample.delay, cfg.horizon)?;
    let c = corrupt(&sample.target, &draw.noise, draw.tau, &profile)?;
    let v = model::forward(params, &sample.obs, &c.x_omega, &c.tau_omega)?;

    let mut residual = ActionChunk::zeros(cfg.horizon, cfg.action_dim);
    let mut numerator = 0.0;
    let mut weight_sum = 0.0;
    for (j, &w) in profile.omega().iter().enumerate() {
        let keep = 1.0 - w;
        let mut token_loss = 0.0;
        for (((r, &vi), &ai), &ei) in residual
            .row_mut(j)
            .iter_mut()
            .zip(v.row(j))
            .zip(sample.target.row(j))
            .zip(draw.noise.row(j))
        {
            *r = vi - (ai - ei);
            token_loss += *r * *r;
        }
        numerator += keep * token_loss;
        weight_sum += keep;
    }
    let denom = weight_sum + objective.denom_eps;
    let loss = numerator / denom;

    if let Some(grad) = grad {
        let mut upstream = residual;
        for (j, &w) in profile.omega().iter().enumerate() {
            let coef = 2.0 * (1.0 - w) / denom * scale;
            upstream.row_mut(j).iter_mut().for_each(|r| *r *= coef);
        }
        model::backward_accumulate(params, &sample.obs, &c.x_omega, &c.tau_omega, &upstream, grad)?;
    }
    Ok(loss)
}

/// Batch-mean loss and its gradient. Draws per sample, in batch order: noise
/// then flow time (see [`SampleDraw::draw`]).
pub fn loss_and_grads<R: Rng + ?Sized>(
    params: &ModelParams,
    batch: &[TrainSample],
    objective: &Objective,
    rng: &mut R,
) -> Result<(f64, Vec<f64>)> {
    if batch.is_empty() {
        return Err(Error::Config("empty training batch".into()));
    }
    let cfg = params.config();
    let draws: Vec<SampleDraw> = batch
        .iter()
        .map(|_| SampleDraw::draw(cfg.horizon, cfg.action_dim, rng))
        .collect();
    loss_and_grads_with(params, batch, &draws, objective)
}

/// [`loss_and_grads`] with explicit draws. Per-sample work runs in parallel;
/// the reduction is sequential in batch order.
pub fn loss_and_grads_with(
    params: &ModelParams,
    batch: &[TrainSample],
    draws: &[SampleDraw],
    objective: &Objective,
) -> Result<(f64, Vec<f64>)> {
    if batch.len() != draws.len() {
        return Err(Error::shape("loss_and_grads draws", batch.len(), draws.len()));
    }
    if batch.is_empty() {
        return Err(Error::Config("empty training batch".into()));
    }
    let scale = 1.0 / batch.len() as f64;
    let per_sample: Vec<Result<(f64, Vec<f64>)>> = batch
        .par_iter()
        .zip(draws.par_iter())
        .map(|(sample, draw)| {
            let mut g = vec![0.0; params.len()];
            let l = sample_loss(params, sample, draw, objective, scale, Some(&mut g))?;
            Ok((l, g))
        })
        .collect();
    let mut loss = 0.0;
    let mut grads = vec![0.0; params.len()];
    for item in per_sample {
        let (l, g) = item?;
        loss += l;
        grads.iter_mut().zip(&g).for_each(|(a, b)| *a += b);
    }
    let loss = loss * scale;
    if !loss.is_finite() {
        return Err(Error::Divergence(format!("non-finite training loss {loss}")));
    }
    Ok((loss, grads))
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct TrainConfig {
    /// Delays are drawn uniformly from `0..=max_delay`.
    pub max_delay: usize,
    pub epochs: usize,
    pub batch_size: usize,
    pub learning_rate: f64,
    /// Anneal the learning rate to zero along a half cosine over all steps.
    #[serde(default)]
    pub cosine_decay: bool,
    #[serde(default = "default_denom_eps")]
    pub denom_eps: f64,
    pub rule: WindowRule,
    pub schedule: Schedule,
    pub seed: u64,
}

fn default_denom_eps() -> f64 {
    1e-6
}

impl TrainConfig {
    pub fn objective(&self) -> Objective {
        Objective {
            rule: self.rule,
            schedule: self.schedule,
            denom_eps: self.denom_eps,
        }
    }

    pub fn validate(&self, horizon: usize) -> Result<()> {
        if !(self.denom_eps > 0.0) {
            return Err(Error::Config("train.denom_eps must be > 0".into()));
        }
        if self.max_delay > horizon {
            return Err(Error::Config(format!(
                "train.max_delay {} exceeds chunk horizon {horizon}",
                self.max_delay
            )));
        }
        if self.batch_size == 0 {
            return Err(Error::Config("train.batch_size must be >= 1".into()));
        }
        if !(self.learning_rate > 0.0 && self.learning_rate.is_finite()) {
            return Err(Error::Config("train.learning_rate must be positive".into()));
        }
        self.rule.validate(horizon)
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct LossRecord {
    pub step: usize,
    pub epoch: usize,
    pub loss: f64,
}

#[derive(Debug, Clone, PartialEq)]
pub struct TrainOutcome {
    pub params: ModelParams,
    pub losses: Vec<LossRecord>,
}

/// Minibatch Adam over `dataset`, resampling every example's delay each epoch.
pub fn train(dataset: &[TrainSample], config: &TrainConfig, init: ModelParams) -> Result<TrainOutcome> {
    if dataset.is_empty() {
        return Err(Error::Config("training dataset is empty".into()));
    }
    config.validate(init.config().horizon)?;
    let objective = config.objective();
    let mut rng = ChaCha8Rng::seed_from_u64(config.seed);
    let mut params = init;
    let mut adam = AdamState::new(params.len(), config.learning_rate);
    let mut losses = Vec::new();
    let mut order: Vec<usize> = (0..dataset.len()).collect();
    let mut step = 0;
    let total_steps = config.epochs * dataset.len().div_ceil(config.batch_size);
    for epoch in 0..config.epochs {
        order.shuffle(&mut rng);
        for idx in order.chunks(config.batch_size) {
            let batch: Vec<TrainSample> = idx
                .iter()
                .map(|&i| TrainSample {
                    delay: rng.gen_range(0..=config.max_delay),
                    ..dataset[i].clone()
                })
                .collect();
            let (loss, grads) = loss_and_grads(&params, &batch, &objective, &mut rng)?;
            if config.cosine_decay {
                let progress = step as f64 / total_steps as f64;
                adam.learning_rate = config.learning_rate * 0.5 * (1.0 + (std::f64::consts::PI * progress).cos());
            }
            model::adam_step(&mut params, &grads, &mut adam)
                .map_err(|e| Error::Divergence(e.to_string()))?;
            losses.push(LossRecord { step, epoch, loss });
            step += 1;
        }
    }
    Ok(TrainOutcome { params, losses })
}

/// `step,epoch,loss` rows, header first.
pub fn loss_curve_csv(losses: &[LossRecord]) -> String {
    let mut out = String::from("step,epoch,loss\n");
    for r in losses {
        out.push_str(&format!("{},{},{}\n", r.step, r.epoch, r.loss));
    }
    out
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::model::{init_model, Activation, ModelConfig};

    fn tiny_model(seed: u64) -> ModelParams {
        init_model(&ModelConfig {
            obs_dim: 4,
            horizon: 3,
            action_dim: 1,
            hidden: vec![8],
            activation: Activation::Tanh,
            seed,
        })
        .unwrap()
    }

    fn samples(rng: &mut ChaCha8Rng, n: usize, max_delay: usize) -> Vec<TrainSample> {
        (0..n)
            .map(|_| TrainSample {
                obs: (0..4).map(|_| rng.gen_range(-1.0..1.0)).collect(),
                target: ActionChunk::standard_normal(3, 1, rng),
                delay: rng.gen_range(0..=max_delay),
            })
            .collect()
    }

    #[test]
    fn corrupt_examples() {
        let a = ActionChunk::from_vec(3, 1, vec![1.0, 2.0, 1.0]).unwrap();
        let e = ActionChunk::from_vec(3, 1, vec![-1.0, 7.0, -1.0]).unwrap();
        let p = WeightProfile::from_weights(vec![1.0, 0.5, 0.0]).unwrap();
        let c = corrupt(&a, &e, 0.2, &p).unwrap();
        assert_eq!(c.tau_omega, vec![1.0, 0.6, 0.2]);
        assert_eq!(c.x_omega.row(0), &[1.0]);
        assert!((c.x_omega.row(1)[0] - (0.6 * 2.0 + 0.4 * 7.0)).abs() < 1e-15);
        assert_eq!(c.x_omega.row(2)[0], 0.2 * 1.0 + 0.8 * -1.0);

        let a = ActionChunk::from_vec(1, 1, vec![1.0]).unwrap();
        let e = ActionChunk::from_vec(1, 1, vec![-1.0]).unwrap();
        let half = WeightProfile::from_weights(vec![0.5]).unwrap();
        let c = corrupt(&a, &e, 0.2, &half).unwrap();
        assert!((c.tau_omega[0] - 0.6).abs() < 1e-15);
        assert!((c.x_omega.row(0)[0] - 0.2).abs() < 1e-15);
    }

    #[test]
    fn corrupt_rejects_shape_mismatch() {
        let a = ActionChunk::zeros(3, 1);
        let e = ActionChunk::zeros(3, 2);
        assert!(corrupt(&a, &e, 0.5, &WeightProfile::free(3)).is_err());
        assert!(corrupt(&a, &a, 0.5, &WeightProfile::free(4)).is_err());
    }

    #[test]
    fn fully_clamped_sample_contributes_nothing() {
        let m = tiny_model(0);
        let mut rng = ChaCha8Rng::seed_from_u64(1);
        let mut s = samples(&mut rng, 1, 0).remove(0);
        s.delay = 3;
        let obj = Objective {
            rule: WindowRule::HARD,
            schedule: Schedule::Zeros,
            denom_eps: 1e-6,
        };
        let draw = SampleDraw::draw(3, 1, &mut rng);
        let mut g = vec![0.0; m.len()];
        let l = sample_loss(&m, &s, &draw, &obj, 1.0, Some(&mut g)).unwrap();
        assert_eq!(l, 0.0);
        assert!(g.iter().all(|&v| v == 0.0));
    }

    #[test]
    fn loss_is_nonnegative_and_deterministic() {
        let m = tiny_model(2);
        let mut rng = ChaCha8Rng::seed_from_u64(3);
        let batch = samples(&mut rng, 6, 3);
        let obj = Objective {
            rule: WindowRule::DelayScaled {
                multiplier: 2,
                max_horizon: 3,
            },
            schedule: Schedule::Linear,
            denom_eps: 1e-6,
        };
        let a = loss_and_grads(&m, &batch, &obj, &mut ChaCha8Rng::seed_from_u64(4)).unwrap();
        let b = loss_and_grads(&m, &batch, &obj, &mut ChaCha8Rng::seed_from_u64(4)).unwrap();
        assert!(a.0 >= 0.0);
        assert_eq!(a, b);
        assert!(loss_and_grads(&m, &[], &obj, &mut rng).is_err());
    }

    #[test]
    fn zero_epochs_returns_init() {
        let m = tiny_model(5);
        let mut rng = ChaCha8Rng::seed_from_u64(3);
        let data = samples(&mut rng, 4, 0);
        let cfg = TrainConfig {
            max_delay: 2,
            epochs: 0,
            batch_size: 2,
            learning_rate: 1e-3,
            cosine_decay: false,
            denom_eps: 1e-6,
            rule: WindowRule::HARD,
            schedule: Schedule::Zeros,
            seed: 0,
        };
        let out = train(&data, &cfg, m.clone()).unwrap();
        assert_eq!(out.params, m);
        assert!(out.losses.is_empty());
        assert!(train(&[], &cfg, m).is_err());
    }

    #[test]
    fn training_is_deterministic() {
        let m = tiny_model(5);
        let mut rng = ChaCha8Rng::seed_from_u64(3);
        let data = samples(&mut rng, 10, 0);
        let cfg = TrainConfig {
            max_delay: 2,
            epochs: 3,
            batch_size: 4,
            learning_rate: 1e-2,
            cosine_decay: false,
            denom_eps: 1e-6,
            rule: WindowRule::DelayScaled {
                multiplier: 2,
                max_horizon: 3,
            },
            schedule: Schedule::Linear,
            seed: 9,
        };
        let a = train(&data, &cfg, m.clone()).unwrap();
        let b = train(&data, &cfg, m).unwrap();
        assert_eq!(a, b);
        assert_eq!(a.losses.len(), 3 * 3);
    }

    #[test]
    fn invalid_train_config_rejected() {
        let mut cfg = TrainConfig {
            max_delay: 4,
            epochs: 1,
            batch_size: 4,
            learning_rate: 1e-3,
            cosine_decay: false,
            denom_eps: 0.0,
            rule: WindowRule::HARD,
            schedule: Schedule::Zeros,
            seed: 0,
        };
        assert!(cfg.validate(8).is_err());
        cfg.denom_eps = 1e-6;
        assert!(cfg.validate(8).is_ok());
        cfg.max_delay = 9;
        assert!(cfg.validate(8).is_err());
    }

    #[test]
    fn loss_curve_has_header() {
        let csv = loss_curve_csv(&[LossRecord { step: 0, epoch: 0, loss: 0.5 }]);
        assert_eq!(csv, "step,epoch,loss\n0,0,0.5\n");
    }
}
