//! Explicit Euler flow sampling with token-wise prior blending.
//!
//! Starting from `x0 ~ N(0, I)`, every step blends the state and the flow time
//! toward the prior with the token weights, evaluates the vector field at the
//! blended point and takes an Euler step of size `1/T` from the blended state.
//! With all weights zero this is plain Euler flow sampling.

use rand::Rng;
use serde::{Deserialize, Serialize};

use crate::chunk::{ActionChunk, PriorChunk};
use crate::error::{Error, Result};
use crate::model::VectorField;
use crate::weights::{self, Schedule, WeightProfile, WindowRule};

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct SolverConfig {
    /// Number of Euler steps `T`.
    pub steps: usize,
    #[serde(default)]
    pub seed: u64,
    #[serde(default)]
    pub trace: bool,
    /// Re-blend the returned chunk with the prior.
    #[serde(default)]
    pub post_blend: bool,
}

impl Default for SolverConfig {
    fn default() -> Self {
        Self {
            steps: 5,
            seed: 0,
            trace: false,
            post_blend: false,
        }
    }
}

impl SolverConfig {
    pub fn validate(&self) -> Result<()> {
        if self.steps == 0 {
            return Err(Error::Config("solver.steps must be >= 1".into()));
        }
        Ok(())
    }
}

/// Solver state at one step: blended state, blended times, raw state.
#[derive(Debug, Clone, PartialEq)]
pub struct TraceStep {
    pub blended_state: ActionChunk,
    pub blended_time: Vec<f64>,
    pub state: ActionChunk,
}

/// Samples a chunk for realized delay `delay` with weights from `(rule, schedule)`.
#[allow(clippy::too_many_arguments)]
pub fn generate_chunk<F, R>(
    field: &F,
    obs: &[f64],
    prior: Option<&PriorChunk>,
    delay: usize,
    rule: WindowRule,
    schedule: Schedule,
    solver: &SolverConfig,
    rng: &mut R,
) -> Result<ActionChunk>
where
    F: VectorField + ?Sized,
    R: Rng + ?Sized,
{
    let profile = weights::token_weights(rule, schedule, delay, field.horizon())?;
    generate_with_profile(field, obs, prior, &profile, solver, rng)
}

pub fn generate_with_profile<F, R>(
    field: &F,
    obs: &[f64],
    prior: Option<&PriorChunk>,
    profile: &WeightProfile,
    solver: &SolverConfig,
    rng: &mut R,
) -> Result<ActionChunk>
where
    F: VectorField + ?Sized,
    R: Rng + ?Sized,
{
    run(field, obs, prior, profile, solver, rng, None)
}

/// Same computation as [`generate_with_profile`], recording every step.
pub fn solver_trace<F, R>(
    field: &F,
    obs: &[f64],
    prior: Option<&PriorChunk>,
    profile: &WeightProfile,
    solver: &SolverConfig,
    rng: &mut R,
) -> Result<(ActionChunk, Vec<TraceStep>)>
where
    F: VectorField + ?Sized,
    R: Rng + ?Sized,
{
    let mut trace = Vec::with_capacity(solver.steps);
    let chunk = run(field, obs, prior, profile, solver, rng, Some(&mut trace))?;
    Ok((chunk, trace))
}

fn run<F, R>(
    field: &F,
    obs: &[f64],
    prior: Option<&PriorChunk>,
    profile: &WeightProfile,
    solver: &SolverConfig,
    rng: &mut R,
    mut trace: Option<&mut Vec<TraceStep>>,
) -> Result<ActionChunk>
where
    F: VectorField + ?Sized,
    R: Rng + ?Sized,
{
    solver.validate()?;
    let (h, a) = (field.horizon(), field.action_dim());
    if profile.horizon() != h {
        return Err(Error::shape("generate weights", h, profile.horizon()));
    }
    let profile = match prior {
        Some(p) => {
            p.values.check_shape("generate prior", (h, a))?;
            profile.restricted_to(&p.valid)
        }
        None if profile.delay() > 0 || !profile.is_free() => return Err(Error::MissingPrior),
        None => profile.clone(),
    };

    let steps = solver.steps;
    let dt = 1.0 / steps as f64;
    let mut x = ActionChunk::standard_normal(h, a, rng);
    for k in 0..steps {
        let t = k as f64 / steps as f64;
        let x_blend = match prior {
            Some(p) => weights::blend_state(&profile, p, &x)?,
            None => x.clone(),
        };
        let t_blend = weights::blend_time(&profile, t)?;
        let v = field.velocity(obs, &x_blend, &t_blend)?;
        let mut next = x_blend.clone();
        for (n, &vi) in next.as_mut_slice().iter_mut().zip(v.as_slice()) {
            *n += dt * vi;
        }
        if !next.is_finite() {
            return Err(Error::Divergence(format!("solver state non-finite at step {k}")));
        }
        if let Some(tr) = trace.as_deref_mut() {
            tr.push(TraceStep {
                blended_state: x_blend,
                blended_time: t_blend,
                state: x,
            });
        }
        x = next;
    }
    if solver.post_blend {
        if let Some(p) = prior {
            x = weights::blend_state(&profile, p, &x)?;
        }
    }
    Ok(x)
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::model::{init_model, Activation, ModelConfig, ModelParams};
    use rand::SeedableRng;
    use rand_chacha::ChaCha8Rng;

    fn model() -> ModelParams {
        init_model(&ModelConfig {
            obs_dim: 4,
            horizon: 8,
            action_dim: 2,
            hidden: vec![16],
            activation: Activation::Tanh,
            seed: 1,
        })
        .unwrap()
    }

    fn prior() -> PriorChunk {
        let mut rng = ChaCha8Rng::seed_from_u64(99);
        let values = ActionChunk::standard_normal(8, 2, &mut rng);
        PriorChunk::new(values, (0..8).map(|j| j < 4).collect()).unwrap()
    }

    #[test]
    fn trace_has_one_entry_per_step_and_respects_clamps() {
        let m = model();
        let p = prior();
        let profile = weights::token_weights(WindowRule::HARD, Schedule::Zeros, 3, 8).unwrap();
        let solver = SolverConfig::default();
        let mut rng = ChaCha8Rng::seed_from_u64(5);
        let (_, trace) = solver_trace(&m, &[0.1; 4], Some(&p), &profile, &solver, &mut rng).unwrap();
        assert_eq!(trace.len(), 5);
        for (k, st) in trace.iter().enumerate() {
            for j in 0..8 {
                if j < 3 {
                    assert_eq!(st.blended_state.row(j), p.values.row(j));
                    assert_eq!(st.blended_time[j], 1.0);
                } else {
                    assert_eq!(st.blended_state.row(j), st.state.row(j));
                    assert_eq!(st.blended_time[j], k as f64 / 5.0);
                }
            }
        }
    }

    #[test]
    fn generation_is_deterministic() {
        let m = model();
        let p = prior();
        let solver = SolverConfig::default();
        let rule = WindowRule::DelayScaled {
            multiplier: 2,
            max_horizon: 5,
        };
        let gen = || {
            let mut rng = ChaCha8Rng::seed_from_u64(8);
            generate_chunk(&m, &[0.2; 4], Some(&p), 2, rule, Schedule::Linear, &solver, &mut rng).unwrap()
        };
        assert_eq!(gen(), gen());
    }

    #[test]
    fn invalid_prior_tokens_are_released() {
        // delay 4 with a 5-token window: token 4 has no prior and must run free
        let m = model();
        let p = prior();
        let rule = WindowRule::DelayScaled {
            multiplier: 2,
            max_horizon: 5,
        };
        let profile = weights::token_weights(rule, Schedule::Linear, 4, 8).unwrap();
        assert_eq!(profile.omega()[4], 1.0);
        let mut rng = ChaCha8Rng::seed_from_u64(5);
        let (_, trace) =
            solver_trace(&m, &[0.1; 4], Some(&p), &profile, &SolverConfig::default(), &mut rng).unwrap();
        assert_eq!(trace[2].blended_time[4], 2.0 / 5.0);
    }

    #[test]
    fn missing_prior_is_an_error() {
        let m = model();
        let mut rng = ChaCha8Rng::seed_from_u64(0);
        let r = generate_chunk(
            &m,
            &[0.0; 4],
            None,
            2,
            WindowRule::HARD,
            Schedule::Zeros,
            &SolverConfig::default(),
            &mut rng,
        );
        assert!(matches!(r, Err(Error::MissingPrior)));
        let zero_steps = SolverConfig {
            steps: 0,
            ..SolverConfig::default()
        };
        let r = generate_with_profile(&m, &[0.0; 4], None, &WeightProfile::free(8), &zero_steps, &mut rng);
        assert!(matches!(r, Err(Error::Config(_))));
    }

    #[test]
    fn post_blend_restores_clamped_tokens() {
        let m = model();
        let p = prior();
        let profile = weights::token_weights(WindowRule::HARD, Schedule::Zeros, 3, 8).unwrap();
        let solver = SolverConfig {
            post_blend: true,
            ..SolverConfig::default()
        };
        let mut rng = ChaCha8Rng::seed_from_u64(5);
        let x = generate_with_profile(&m, &[0.1; 4], Some(&p), &profile, &solver, &mut rng).unwrap();
        for j in 0..3 {
            assert_eq!(x.row(j), p.values.row(j));
        }
    }
}
