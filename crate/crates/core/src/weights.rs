//! Soft-conditioning windows, token weights and token-wise blending.
//!
//! A chunk of `H` tokens generated under inference delay `d` splits into a
//! committed prefix (`j < d`, weight 1), a soft window (`d <= j < e`, weight
//! given by a schedule) and a free tail (`j >= e`, weight 0). The endpoint `e`
//! comes from a [`WindowRule`]. The weights drive both the corrupted training
//! input and the state/time blending inside the Euler sampler.

use serde::{Deserialize, Serialize};

use crate::chunk::{ActionChunk, PriorChunk};
use crate::error::{Error, Result};

/// How far the soft-conditioning window extends for a given delay.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(tag = "kind", rename_all = "snake_case", deny_unknown_fields)]
pub enum WindowRule {
    /// `e(d) = min(multiplier * d, max_horizon)`.
    DelayScaled { multiplier: usize, max_horizon: usize },
    /// `e(d) = min(max(d, length), H)`.
    Fixed { length: usize },
    /// `e(d) = min(d + length, cap)`.
    Offset { length: usize, cap: usize },
}

impl WindowRule {
    /// Hard RTC expressed as a window rule: the soft window is always empty.
    pub const HARD: WindowRule = WindowRule::Fixed { length: 0 };

    pub fn validate(&self, horizon: usize) -> Result<()> {
        match *self {
            WindowRule::DelayScaled { multiplier: 0, .. } => Err(Error::Config(
                "window.multiplier must be >= 1".into(),
            )),
            WindowRule::Offset { cap, .. } if cap > horizon => {
                Err(Error::Config(format!(
                    "window.cap {cap} exceeds chunk horizon {horizon}"
                )))
            }
            _ => Ok(()),
        }
    }

    pub fn tag(&self) -> &'static str {
        match self {
            WindowRule::DelayScaled { .. } => "delay_scaled",
            WindowRule::Fixed { .. } => "fixed",
            WindowRule::Offset { .. } => "offset",
        }
    }
}

/// Shape of the weights across the soft window.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize, Default)]
#[serde(rename_all = "snake_case")]
pub enum Schedule {
    /// `g(u) = 1 - u` at `u = (j - d) / (e - d)`; the first soft token gets 1.
    #[default]
    Linear,
    /// `g = 0`; reproduces the binary committed-prefix mask.
    Zeros,
    /// `g(u) = 1 - u` at `u = (j - d + 1) / (e - d + 1)`; every soft token is < 1.
    ShiftedLinear,
}

impl Schedule {
    /// Weight of soft-window token `token` (requires `delay <= token < endpoint`).
    fn soft_weight(self, token: usize, delay: usize, endpoint: usize) -> f64 {
        debug_assert!(delay <= token && token < endpoint);
        match self {
            Schedule::Zeros => 0.0,
            Schedule::Linear => {
                let u = (token - delay) as f64 / (endpoint - delay) as f64;
                1.0 - u
            }
            Schedule::ShiftedLinear => {
                let u = (token - delay + 1) as f64 / (endpoint - delay + 1) as f64;
                1.0 - u
            }
        }
    }

    pub fn tag(&self) -> &'static str {
        match self {
            Schedule::Linear => "linear",
            Schedule::Zeros => "zeros",
            Schedule::ShiftedLinear => "shifted_linear",
        }
    }
}

/// Per-token prior weights for one chunk.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct WeightProfile {
    omega: Vec<f64>,
    delay: usize,
    endpoint: usize,
}

impl WeightProfile {
    /// All tokens free: the no-RTC profile.
    pub fn free(horizon: usize) -> Self {
        Self {
            omega: vec![0.0; horizon],
            delay: 0,
            endpoint: 0,
        }
    }

    /// Profile from explicit weights. Delay is the length of the leading run of
    /// ones and the endpoint is one past the last nonzero weight.
    pub fn from_weights(omega: Vec<f64>) -> Result<Self> {
        if omega.iter().any(|w| !(0.0..=1.0).contains(w)) {
            return Err(Error::Config("token weights must lie in [0, 1]".into()));
        }
        let delay = omega.iter().take_while(|&&w| w == 1.0).count();
        let endpoint = omega.iter().rposition(|&w| w > 0.0).map_or(0, |j| j + 1);
        Ok(Self {
            omega,
            delay,
            endpoint,
        })
    }

    pub fn omega(&self) -> &[f64] {
        &self.omega
    }

    pub fn delay(&self) -> usize {
        self.delay
    }

    pub fn endpoint(&self) -> usize {
        self.endpoint
    }

    pub fn horizon(&self) -> usize {
        self.omega.len()
    }

    pub fn is_free(&self) -> bool {
        self.omega.iter().all(|&w| w == 0.0)
    }

    /// Zeroes the weight of every token whose prior entry is invalid.
    pub fn restricted_to(&self, valid: &[bool]) -> Self {
        let omega = self
            .omega
            .iter()
            .zip(valid)
            .map(|(&w, &ok)| if ok { w } else { 0.0 })
            .collect();
        Self {
            omega,
            delay: self.delay,
            endpoint: self.endpoint,
        }
    }
}

/// Soft-window endpoint for delay `delay` in a chunk of `horizon` tokens.
///
/// Zero delay always gives endpoint 0. For positive delays the rule's raw
/// endpoint is clamped into `[delay, horizon]`.
pub fn endpoint(rule: WindowRule, delay: usize, horizon: usize) -> Result<usize> {
    if delay > horizon {
        return Err(Error::InvalidDelay { delay, horizon });
    }
    if delay == 0 {
        return Ok(0);
    }
    let raw = match rule {
        WindowRule::DelayScaled {
            multiplier,
            max_horizon,
        } => multiplier.saturating_mul(delay).min(max_horizon),
        WindowRule::Fixed { length } => delay.max(length),
        WindowRule::Offset { length, cap } => delay.saturating_add(length).min(cap),
    };
    Ok(raw.clamp(delay, horizon))
}

pub fn token_weights(
    rule: WindowRule,
    schedule: Schedule,
    delay: usize,
    horizon: usize,
) -> Result<WeightProfile> {
    let end = endpoint(rule, delay, horizon)?;
    let omega = (0..horizon)
        .map(|j| {
            if j < delay {
                1.0
            } else if j < end {
                schedule.soft_weight(j, delay, end)
            } else {
                0.0
            }
        })
        .collect();
    Ok(WeightProfile {
        omega,
        delay,
        endpoint: end,
    })
}

/// `x~[j] = w_j * Y[j] + (1 - w_j) * x[j]`, token by token.
pub fn blend_state(
    profile: &WeightProfile,
    prior: &PriorChunk,
    state: &ActionChunk,
) -> Result<ActionChunk> {
    let shape = state.shape();
    prior.values.check_shape("blend_state prior", shape)?;
    if profile.horizon() != shape.0 || prior.valid.len() != shape.0 {
        return Err(Error::shape("blend_state weights", shape.0, profile.horizon()));
    }
    let mut out = state.clone();
    for (j, &w) in profile.omega.iter().enumerate() {
        if w == 0.0 {
            continue;
        }
        if !prior.valid[j] {
            return Err(Error::InvalidPrior { token: j, weight: w });
        }
        let y = prior.values.row(j);
        if w == 1.0 {
            out.row_mut(j).copy_from_slice(y);
        } else {
            for (o, &yv) in out.row_mut(j).iter_mut().zip(y) {
                *o = w * yv + (1.0 - w) * *o;
            }
        }
    }
    Ok(out)
}

/// `t~_j = w_j + (1 - w_j) * t`.
pub fn blend_time(profile: &WeightProfile, t: f64) -> Result<Vec<f64>> {
    if !(0.0..=1.0).contains(&t) {
        return Err(Error::InvalidTime(t));
    }
    Ok(profile.omega.iter().map(|&w| w + (1.0 - w) * t).collect())
}

#[cfg(test)]
mod tests {
    use super::*;
    use proptest::prelude::*;

    const DS: WindowRule = WindowRule::DelayScaled {
        multiplier: 2,
        max_horizon: 5,
    };

    fn binary_mask(delay: usize, horizon: usize) -> Vec<f64> {
        (0..horizon).map(|j| if j < delay { 1.0 } else { 0.0 }).collect()
    }

    #[test]
    fn endpoint_examples() {
        assert_eq!(endpoint(DS, 2, 8).unwrap(), 4);
        assert_eq!(endpoint(DS, 3, 8).unwrap(), 5);
        assert_eq!(endpoint(WindowRule::Offset { length: 0, cap: 8 }, 3, 8).unwrap(), 3);
        for rule in [DS, WindowRule::Fixed { length: 3 }, WindowRule::Offset { length: 2, cap: 8 }] {
            assert_eq!(endpoint(rule, 0, 8).unwrap(), 0);
        }
    }

    #[test]
    fn endpoint_rejects_delay_beyond_horizon() {
        assert!(matches!(
            endpoint(DS, 9, 8),
            Err(Error::InvalidDelay { delay: 9, horizon: 8 })
        ));
    }

    #[test]
    fn endpoint_never_precedes_delay() {
        // max_horizon below the delay would otherwise cut into the prefix
        assert_eq!(endpoint(DS, 7, 8).unwrap(), 7);
        assert_eq!(endpoint(WindowRule::Fixed { length: 3 }, 5, 8).unwrap(), 5);
        assert_eq!(endpoint(WindowRule::Fixed { length: 5 }, 1, 8).unwrap(), 5);
        assert_eq!(endpoint(WindowRule::Offset { length: 6, cap: 8 }, 4, 8).unwrap(), 8);
    }

    #[test]
    fn linear_weights_example() {
        let p = token_weights(DS, Schedule::Linear, 2, 8).unwrap();
        assert_eq!(p.omega(), &[1.0, 1.0, 1.0, 0.5, 0.0, 0.0, 0.0, 0.0]);
        assert_eq!(p.endpoint(), 4);
    }

    #[test]
    fn shifted_linear_first_soft_token_below_one() {
        let p = token_weights(DS, Schedule::ShiftedLinear, 2, 8).unwrap();
        // e = 4, u = 1/3, 2/3
        assert_eq!(p.omega()[2], 1.0 - 1.0 / 3.0);
        assert_eq!(p.omega()[3], 1.0 - 2.0 / 3.0);
        assert_eq!(p.omega()[4], 0.0);
    }

    #[test]
    fn zeros_schedule_is_binary_mask() {
        for rule in [DS, WindowRule::Fixed { length: 5 }, WindowRule::Offset { length: 3, cap: 8 }] {
            let p = token_weights(rule, Schedule::Zeros, 3, 8).unwrap();
            assert_eq!(p.omega(), &[1.0, 1.0, 1.0, 0.0, 0.0, 0.0, 0.0, 0.0]);
        }
    }

    #[test]
    fn zero_delay_is_free() {
        for schedule in [Schedule::Linear, Schedule::Zeros, Schedule::ShiftedLinear] {
            let p = token_weights(DS, schedule, 0, 8).unwrap();
            assert_eq!(p, WeightProfile::free(8));
        }
    }

    #[test]
    fn blend_state_examples() {
        let y = ActionChunk::from_vec(2, 1, vec![2.0, 5.0]).unwrap();
        let x = ActionChunk::from_vec(2, 1, vec![0.0, -1.0]).unwrap();
        let prior = PriorChunk::full(y.clone());
        let free = WeightProfile::free(2);
        assert_eq!(blend_state(&free, &prior, &x).unwrap(), x);
        let clamp = token_weights(WindowRule::HARD, Schedule::Zeros, 2, 2).unwrap();
        assert_eq!(blend_state(&clamp, &prior, &x).unwrap(), y);
        let half = WeightProfile {
            omega: vec![0.5, 0.0],
            delay: 0,
            endpoint: 1,
        };
        assert_eq!(blend_state(&half, &prior, &x).unwrap().as_slice(), &[1.0, -1.0]);
    }

    #[test]
    fn blend_state_rejects_invalid_prior_and_shape() {
        let y = ActionChunk::zeros(2, 1);
        let prior = PriorChunk::new(y, vec![true, false]).unwrap();
        let x = ActionChunk::zeros(2, 1);
        let p = token_weights(WindowRule::HARD, Schedule::Zeros, 2, 2).unwrap();
        assert!(matches!(
            blend_state(&p, &prior, &x),
            Err(Error::InvalidPrior { token: 1, .. })
        ));
        let wide = ActionChunk::zeros(2, 3);
        assert!(blend_state(&p, &prior, &wide).is_err());
    }

    #[test]
    fn blend_time_examples() {
        let p = WeightProfile {
            omega: vec![0.0, 1.0, 0.5],
            delay: 0,
            endpoint: 0,
        };
        let t = blend_time(&p, 0.4).unwrap();
        assert_eq!(t[0], 0.4);
        assert_eq!(t[1], 1.0);
        assert_eq!(blend_time(&p, 0.2).unwrap()[2], 0.6);
        assert!(matches!(blend_time(&p, 1.2), Err(Error::InvalidTime(_))));
        assert!(blend_time(&p, -0.1).is_err());
    }

    fn any_rule() -> impl Strategy<Value = WindowRule> {
        prop_oneof![
            (1usize..5, 0usize..9).prop_map(|(multiplier, max_horizon)| WindowRule::DelayScaled {
                multiplier,
                max_horizon
            }),
            (0usize..9).prop_map(|length| WindowRule::Fixed { length }),
            (0usize..7, 0usize..=8).prop_map(|(length, cap)| WindowRule::Offset { length, cap }),
        ]
    }

    fn any_schedule() -> impl Strategy<Value = Schedule> {
        prop_oneof![
            Just(Schedule::Linear),
            Just(Schedule::Zeros),
            Just(Schedule::ShiftedLinear)
        ]
    }

    proptest! {
        #[test]
        fn weight_profile_invariants(rule in any_rule(), schedule in any_schedule(), delay in 0usize..=8) {
            let p = token_weights(rule, schedule, delay, 8).unwrap();
            let w = p.omega();
            prop_assert!(w.iter().all(|&v| (0.0..=1.0).contains(&v)));
            prop_assert!(w.windows(2).all(|pair| pair[0] >= pair[1]));
            for (j, &v) in w.iter().enumerate() {
                if j < delay { prop_assert_eq!(v, 1.0); }
                if j >= p.endpoint() { prop_assert_eq!(v, 0.0); }
            }
            if delay > 0 {
                prop_assert!(p.endpoint() >= delay && p.endpoint() <= 8);
            } else {
                prop_assert_eq!(p.endpoint(), 0);
                prop_assert!(p.is_free());
            }
        }

        #[test]
        fn offset_zero_matches_binary_mask(delay in 0usize..=8, cap in 0usize..=8) {
            let off = token_weights(WindowRule::Offset { length: 0, cap }, Schedule::Linear, delay, 8).unwrap();
            let zeros = token_weights(DS, Schedule::Zeros, delay, 8).unwrap();
            let mask = binary_mask(delay, 8);
            prop_assert_eq!(off.omega(), mask.as_slice());
            prop_assert_eq!(zeros.omega(), mask.as_slice());
        }

        #[test]
        fn blend_time_is_monotone_in_t(w in 0.0f64..=1.0, a in 0.0f64..=1.0, b in 0.0f64..=1.0) {
            let p = WeightProfile { omega: vec![w], delay: 0, endpoint: 0 };
            let (lo, hi) = if a <= b { (a, b) } else { (b, a) };
            let tl = blend_time(&p, lo).unwrap()[0];
            let th = blend_time(&p, hi).unwrap()[0];
            prop_assert!(tl <= th);
            prop_assert!(tl >= lo && th <= 1.0);
        }
    }
}
