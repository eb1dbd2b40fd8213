//! Action chunks and the aligned previous-chunk prior.

use rand::Rng;
use rand_distr::StandardNormal;
use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};

/// An `H x A` block of actions stored row-major, one row per token.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct ActionChunk {
    horizon: usize,
    action_dim: usize,
    data: Vec<f64>,
}

impl ActionChunk {
    pub fn zeros(horizon: usize, action_dim: usize) -> Self {
        Self {
            horizon,
            action_dim,
            data: vec![0.0; horizon * action_dim],
        }
    }

    pub fn from_vec(horizon: usize, action_dim: usize, data: Vec<f64>) -> Result<Self> {
        if data.len() != horizon * action_dim {
            return Err(Error::shape(
                "ActionChunk::from_vec",
                horizon * action_dim,
                data.len(),
            ));
        }
        Ok(Self {
            horizon,
            action_dim,
            data,
        })
    }

    pub fn from_rows(rows: &[Vec<f64>]) -> Result<Self> {
        let action_dim = rows.first().map_or(0, Vec::len);
        let mut data = Vec::with_capacity(rows.len() * action_dim);
        for row in rows {
            if row.len() != action_dim {
                return Err(Error::shape("ActionChunk::from_rows", action_dim, row.len()));
            }
            data.extend_from_slice(row);
        }
        Ok(Self {
            horizon: rows.len(),
            action_dim,
            data,
        })
    }

    /// Standard-normal chunk, drawn row-major from `rng`.
    pub fn standard_normal<R: Rng + ?Sized>(horizon: usize, action_dim: usize, rng: &mut R) -> Self {
        let data = (0..horizon * action_dim)
            .map(|_| rng.sample::<f64, _>(StandardNormal))
            .collect();
        Self {
            horizon,
            action_dim,
            data,
        }
    }

    pub fn horizon(&self) -> usize {
        self.horizon
    }

    pub fn action_dim(&self) -> usize {
        self.action_dim
    }

    pub fn shape(&self) -> (usize, usize) {
        (self.horizon, self.action_dim)
    }

    pub fn row(&self, token: usize) -> &[f64] {
        &self.data[token * self.action_dim..(token + 1) * self.action_dim]
    }

    pub fn row_mut(&mut self, token: usize) -> &mut [f64] {
        &mut self.data[token * self.action_dim..(token + 1) * self.action_dim]
    }

    pub fn rows(&self) -> impl Iterator<Item = &[f64]> {
        self.data.chunks_exact(self.action_dim.max(1))
    }

    pub fn as_slice(&self) -> &[f64] {
        &self.data
    }

    pub fn as_mut_slice(&mut self) -> &mut [f64] {
        &mut self.data
    }

    pub fn into_vec(self) -> Vec<f64> {
        self.data
    }

    pub fn is_finite(&self) -> bool {
        self.data.iter().all(|v| v.is_finite())
    }

    pub(crate) fn check_shape(&self, context: &'static str, shape: (usize, usize)) -> Result<()> {
        if self.shape() != shape {
            return Err(Error::shape(
                context,
                format!("{}x{}", shape.0, shape.1),
                format!("{}x{}", self.horizon, self.action_dim),
            ));
        }
        Ok(())
    }
}

/// The previous chunk re-indexed into the current chunk's frame.
///
/// `valid[j]` is false for tokens the previous chunk never covered; such
/// tokens carry zeros and must not receive positive weight.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct PriorChunk {
    pub values: ActionChunk,
    pub valid: Vec<bool>,
}

impl PriorChunk {
    /// A prior where every token is valid.
    pub fn full(values: ActionChunk) -> Self {
        let valid = vec![true; values.horizon()];
        Self { values, valid }
    }

    pub fn new(values: ActionChunk, valid: Vec<bool>) -> Result<Self> {
        if valid.len() != values.horizon() {
            return Err(Error::shape("PriorChunk::new", values.horizon(), valid.len()));
        }
        Ok(Self { values, valid })
    }

    pub fn horizon(&self) -> usize {
        self.values.horizon()
    }
}
