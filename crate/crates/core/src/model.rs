//! Fully-connected vector-field network with hand-written reverse mode.
//!
//! The network maps `[obs, flatten(x), t]` (observation, noisy chunk, per-token
//! flow times) through `tanh` hidden layers to a velocity of the same shape as
//! the chunk. Parameters live in one flat `Vec<f64>`; each layer stores its
//! weight matrix (row-major, `out x in`) followed by its bias.

use std::io::{Read, Write};
use std::path::Path;

use rand::SeedableRng;
use rand_chacha::ChaCha8Rng;
use rand_distr::{Distribution, StandardNormal};
use serde::{Deserialize, Serialize};

use crate::chunk::ActionChunk;
use crate::error::{Error, Result};

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize, Default)]
#[serde(rename_all = "snake_case")]
pub enum Activation {
    #[default]
    Tanh,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct ModelConfig {
    pub obs_dim: usize,
    pub horizon: usize,
    pub action_dim: usize,
    pub hidden: Vec<usize>,
    #[serde(default)]
    pub activation: Activation,
    pub seed: u64,
}

impl ModelConfig {
    pub fn validate(&self) -> Result<()> {
        if self.obs_dim == 0 || self.horizon == 0 || self.action_dim == 0 {
            return Err(Error::Config(
                "model.obs_dim, horizon and action_dim must be >= 1".into(),
            ));
        }
        if self.hidden.is_empty() || self.hidden.contains(&0) {
            return Err(Error::Config(
                "model.hidden must be a nonempty list of positive widths".into(),
            ));
        }
        Ok(())
    }

    pub fn chunk_len(&self) -> usize {
        self.horizon * self.action_dim
    }

    pub fn input_dim(&self) -> usize {
        self.obs_dim + self.chunk_len() + self.horizon
    }

    /// `(fan_in, fan_out)` for every layer, input to output.
    pub fn layer_dims(&self) -> Vec<(usize, usize)> {
        let mut widths = Vec::with_capacity(self.hidden.len() + 2);
        widths.push(self.input_dim());
        widths.extend_from_slice(&self.hidden);
        widths.push(self.chunk_len());
        widths.windows(2).map(|w| (w[0], w[1])).collect()
    }

    pub fn param_count(&self) -> usize {
        self.layer_dims().iter().map(|&(i, o)| i * o + o).sum()
    }
}

/// One dense layer, unflattened.
#[derive(Debug, Clone, PartialEq)]
pub struct Layer {
    pub fan_in: usize,
    pub fan_out: usize,
    /// Row-major `fan_out x fan_in`.
    pub weights: Vec<f64>,
    pub bias: Vec<f64>,
}

#[derive(Debug, Clone, PartialEq)]
pub struct ModelParams {
    config: ModelConfig,
    flat: Vec<f64>,
    /// Flat offset of each layer's weight block.
    offsets: Vec<usize>,
    dims: Vec<(usize, usize)>,
}

fn layer_offsets(config: &ModelConfig) -> Vec<usize> {
    let mut offsets = Vec::new();
    let mut at = 0;
    for (i, o) in config.layer_dims() {
        offsets.push(at);
        at += i * o + o;
    }
    offsets
}

/// Fan-in scaled normal weights, zero biases, deterministic in `config.seed`.
pub fn init_model(config: &ModelConfig) -> Result<ModelParams> {
    config.validate()?;
    let mut rng = ChaCha8Rng::seed_from_u64(config.seed);
    let mut flat = Vec::with_capacity(config.param_count());
    for (fan_in, fan_out) in config.layer_dims() {
        let scale = (fan_in as f64).sqrt().recip();
        for _ in 0..fan_in * fan_out {
            let z: f64 = StandardNormal.sample(&mut rng);
            flat.push(z * scale);
        }
        flat.extend(std::iter::repeat_n(0.0, fan_out));
    }
    Ok(ModelParams {
        offsets: layer_offsets(config),
        dims: config.layer_dims(),
        config: config.clone(),
        flat,
    })
}

impl ModelParams {
    pub fn from_flat(config: ModelConfig, flat: Vec<f64>) -> Result<Self> {
        config.validate()?;
        if flat.len() != config.param_count() {
            return Err(Error::shape("ModelParams::from_flat", config.param_count(), flat.len()));
        }
        if flat.iter().any(|v| !v.is_finite()) {
            return Err(Error::NonFinite("model parameters"));
        }
        Ok(Self {
            offsets: layer_offsets(&config),
            dims: config.layer_dims(),
            config,
            flat,
        })
    }

    pub fn from_layers(config: ModelConfig, layers: &[Layer]) -> Result<Self> {
        let dims = config.layer_dims();
        if layers.len() != dims.len() {
            return Err(Error::shape("ModelParams::from_layers", dims.len(), layers.len()));
        }
        let mut flat = Vec::with_capacity(config.param_count());
        for (layer, &(i, o)) in layers.iter().zip(&dims) {
            if layer.fan_in != i
                || layer.fan_out != o
                || layer.weights.len() != i * o
                || layer.bias.len() != o
            {
                return Err(Error::shape(
                    "ModelParams::from_layers",
                    format!("{o}x{i}"),
                    format!("{}x{}", layer.fan_out, layer.fan_in),
                ));
            }
            flat.extend_from_slice(&layer.weights);
            flat.extend_from_slice(&layer.bias);
        }
        Self::from_flat(config, flat)
    }

    pub fn layers(&self) -> Vec<Layer> {
        self.config
            .layer_dims()
            .iter()
            .enumerate()
            .map(|(l, &(fan_in, fan_out))| {
                let (w, b) = self.layer(l);
                Layer {
                    fan_in,
                    fan_out,
                    weights: w.to_vec(),
                    bias: b.to_vec(),
                }
            })
            .collect()
    }

    pub fn config(&self) -> &ModelConfig {
        &self.config
    }

    pub fn flat(&self) -> &[f64] {
        &self.flat
    }

    pub fn flat_mut(&mut self) -> &mut [f64] {
        &mut self.flat
    }

    pub fn len(&self) -> usize {
        self.flat.len()
    }

    pub fn is_empty(&self) -> bool {
        self.flat.is_empty()
    }

    fn layer(&self, l: usize) -> (&[f64], &[f64]) {
        let (i, o) = self.dims[l];
        let start = self.offsets[l];
        let w = &self.flat[start..start + i * o];
        let b = &self.flat[start + i * o..start + i * o + o];
        (w, b)
    }

    fn assemble_input(&self, obs: &[f64], x: &ActionChunk, t: &[f64]) -> Result<Vec<f64>> {
        let c = &self.config;
        if obs.len() != c.obs_dim {
            return Err(Error::shape("forward obs", c.obs_dim, obs.len()));
        }
        x.check_shape("forward x", (c.horizon, c.action_dim))?;
        if t.len() != c.horizon {
            return Err(Error::shape("forward t", c.horizon, t.len()));
        }
        let mut input = Vec::with_capacity(c.input_dim());
        input.extend_from_slice(obs);
        input.extend_from_slice(x.as_slice());
        input.extend_from_slice(t);
        if input.iter().any(|v| !v.is_finite()) {
            return Err(Error::NonFinite("forward input"));
        }
        Ok(input)
    }

    /// Runs the network and keeps every layer's output (post-activation for
    /// hidden layers, linear for the last). `acts[0]` is the input.
    fn forward_cached(&self, input: Vec<f64>) -> Vec<Vec<f64>> {
        let dims = &self.dims;
        let last = dims.len() - 1;
        let mut acts = Vec::with_capacity(dims.len() + 1);
        acts.push(input);
        for (l, &(fan_in, fan_out)) in dims.iter().enumerate() {
            let (w, b) = self.layer(l);
            let a = &acts[l];
            let mut z = b.to_vec();
            for (r, zr) in z.iter_mut().enumerate() {
                let row = &w[r * fan_in..(r + 1) * fan_in];
                *zr += row.iter().zip(a).map(|(wi, ai)| wi * ai).sum::<f64>();
            }
            debug_assert_eq!(z.len(), fan_out);
            if l != last {
                match self.config.activation {
                    Activation::Tanh => z.iter_mut().for_each(|v| *v = v.tanh()),
                }
            }
            acts.push(z);
        }
        acts
    }
}

/// Velocity field `v(o, x, t)` over action chunks.
pub trait VectorField {
    fn horizon(&self) -> usize;
    fn action_dim(&self) -> usize;
    fn velocity(&self, obs: &[f64], x: &ActionChunk, t: &[f64]) -> Result<ActionChunk>;
}

impl VectorField for ModelParams {
    fn horizon(&self) -> usize {
        self.config.horizon
    }

    fn action_dim(&self) -> usize {
        self.config.action_dim
    }

    fn velocity(&self, obs: &[f64], x: &ActionChunk, t: &[f64]) -> Result<ActionChunk> {
        forward(self, obs, x, t)
    }
}

pub fn forward(params: &ModelParams, obs: &[f64], x: &ActionChunk, t: &[f64]) -> Result<ActionChunk> {
    let input = params.assemble_input(obs, x, t)?;
    let mut acts = params.forward_cached(input);
    let out = acts.pop().expect("network has at least one layer");
    ActionChunk::from_vec(params.config.horizon, params.config.action_dim, out)
}

/// Gradients of `<forward(params, obs, x, t), upstream>`.
#[derive(Debug, Clone, PartialEq)]
pub struct Gradients {
    pub params: Vec<f64>,
    pub x: ActionChunk,
}

pub fn backward(
    params: &ModelParams,
    obs: &[f64],
    x: &ActionChunk,
    t: &[f64],
    upstream: &ActionChunk,
) -> Result<Gradients> {
    let mut grad = vec![0.0; params.len()];
    let gx = backward_accumulate(params, obs, x, t, upstream, &mut grad)?;
    Ok(Gradients { params: grad, x: gx })
}

/// Like [`backward`], but adds the parameter gradient into `grad` and returns
/// only the input-chunk gradient.
pub fn backward_accumulate(
    params: &ModelParams,
    obs: &[f64],
    x: &ActionChunk,
    t: &[f64],
    upstream: &ActionChunk,
    grad: &mut [f64],
) -> Result<ActionChunk> {
    let c = &params.config;
    upstream.check_shape("backward upstream", (c.horizon, c.action_dim))?;
    if grad.len() != params.len() {
        return Err(Error::shape("backward grad buffer", params.len(), grad.len()));
    }
    let input = params.assemble_input(obs, x, t)?;
    let acts = params.forward_cached(input);
    let dims = &params.dims;

    let mut delta = upstream.as_slice().to_vec();
    for l in (0..dims.len()).rev() {
        let (fan_in, fan_out) = dims[l];
        let (w, _) = params.layer(l);
        let a_in = &acts[l];
        let start = params.offsets[l];
        let (gw, rest) = grad[start..].split_at_mut(fan_in * fan_out);
        let gb = &mut rest[..fan_out];
        let mut delta_in = vec![0.0; fan_in];
        for r in 0..fan_out {
            let d = delta[r];
            if d == 0.0 {
                continue;
            }
            gb[r] += d;
            let row = &w[r * fan_in..(r + 1) * fan_in];
            let grow = &mut gw[r * fan_in..(r + 1) * fan_in];
            for k in 0..fan_in {
                grow[k] += d * a_in[k];
                delta_in[k] += d * row[k];
            }
        }
        if l > 0 {
            match c.activation {
                Activation::Tanh => {
                    for (di, ai) in delta_in.iter_mut().zip(a_in) {
                        *di *= 1.0 - ai * ai;
                    }
                }
            }
        }
        delta = delta_in;
    }
    let gx = delta[c.obs_dim..c.obs_dim + c.chunk_len()].to_vec();
    ActionChunk::from_vec(c.horizon, c.action_dim, gx)
}

/// Bias-corrected adaptive-moment optimizer state.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct AdamState {
    pub first_moment: Vec<f64>,
    pub second_moment: Vec<f64>,
    pub step: u64,
    pub learning_rate: f64,
    pub beta1: f64,
    pub beta2: f64,
    pub epsilon: f64,
}

impl AdamState {
    pub fn new(len: usize, learning_rate: f64) -> Self {
        Self {
            first_moment: vec![0.0; len],
            second_moment: vec![0.0; len],
            step: 0,
            learning_rate,
            beta1: 0.9,
            beta2: 0.999,
            epsilon: 1e-8,
        }
    }
}

pub fn adam_step(params: &mut ModelParams, grads: &[f64], state: &mut AdamState) -> Result<()> {
    if grads.len() != params.len() || state.first_moment.len() != params.len() {
        return Err(Error::shape("adam_step", params.len(), grads.len()));
    }
    if grads.iter().any(|g| !g.is_finite()) {
        return Err(Error::NonFinite("gradient"));
    }
    state.step += 1;
    let t = state.step as i32;
    let bc1 = 1.0 - state.beta1.powi(t);
    let bc2 = 1.0 - state.beta2.powi(t);
    let (b1, b2) = (state.beta1, state.beta2);
    for (((p, &g), m), v) in params
        .flat
        .iter_mut()
        .zip(grads)
        .zip(state.first_moment.iter_mut())
        .zip(state.second_moment.iter_mut())
    {
        *m = b1 * *m + (1.0 - b1) * g;
        *v = b2 * *v + (1.0 - b2) * g * g;
        let m_hat = *m / bc1;
        let v_hat = *v / bc2;
        *p -= state.learning_rate * m_hat / (v_hat.sqrt() + state.epsilon);
    }
    Ok(())
}

const CHECKPOINT_MAGIC: &[u8; 8] = b"SRTCCKPT";
const CHECKPOINT_VERSION: u32 = 1;

/// Serializes config, free-form metadata and raw little-endian parameters.
pub fn checkpoint_bytes(params: &ModelParams, metadata: &str) -> Vec<u8> {
    let config = serde_json::to_vec(&params.config).expect("model config serializes");
    let mut out = Vec::with_capacity(32 + config.len() + metadata.len() + 8 * params.len());
    out.extend_from_slice(CHECKPOINT_MAGIC);
    out.extend_from_slice(&CHECKPOINT_VERSION.to_le_bytes());
    for block in [config.as_slice(), metadata.as_bytes()] {
        out.extend_from_slice(&(block.len() as u64).to_le_bytes());
        out.extend_from_slice(block);
    }
    out.extend_from_slice(&(params.len() as u64).to_le_bytes());
    for v in &params.flat {
        out.extend_from_slice(&v.to_le_bytes());
    }
    out
}

pub fn parse_checkpoint(bytes: &[u8], origin: &Path) -> Result<(ModelParams, String)> {
    let mut r = bytes;
    let bad = |why: &str| Error::format(origin, why);
    let mut magic = [0u8; 8];
    r.read_exact(&mut magic).map_err(|_| bad("truncated header"))?;
    if &magic != CHECKPOINT_MAGIC {
        return Err(bad("not a checkpoint"));
    }
    let mut word = [0u8; 4];
    r.read_exact(&mut word).map_err(|_| bad("truncated header"))?;
    let version = u32::from_le_bytes(word);
    if version != CHECKPOINT_VERSION {
        return Err(bad(&format!("unsupported checkpoint version {version}")));
    }
    let read_block = |r: &mut &[u8]| -> Result<Vec<u8>> {
        let mut len = [0u8; 8];
        r.read_exact(&mut len).map_err(|_| bad("truncated block length"))?;
        let len = u64::from_le_bytes(len) as usize;
        if r.len() < len {
            return Err(bad("truncated block"));
        }
        let (head, tail) = r.split_at(len);
        *r = tail;
        Ok(head.to_vec())
    };
    let config: ModelConfig =
        serde_json::from_slice(&read_block(&mut r)?).map_err(|e| bad(&e.to_string()))?;
    let metadata = String::from_utf8(read_block(&mut r)?).map_err(|e| bad(&e.to_string()))?;
    let mut len = [0u8; 8];
    r.read_exact(&mut len).map_err(|_| bad("truncated parameter count"))?;
    let n = u64::from_le_bytes(len) as usize;
    if r.len() != n * 8 {
        return Err(bad("parameter block length mismatch"));
    }
    let flat = r
        .chunks_exact(8)
        .map(|b| f64::from_le_bytes(b.try_into().expect("8-byte chunk")))
        .collect();
    Ok((ModelParams::from_flat(config, flat)?, metadata))
}

pub fn save_checkpoint(path: &Path, params: &ModelParams, metadata: &str) -> Result<()> {
    let mut f = std::fs::File::create(path)?;
    f.write_all(&checkpoint_bytes(params, metadata))?;
    Ok(())
}

pub fn load_checkpoint(path: &Path) -> Result<(ModelParams, String)> {
    let bytes = std::fs::read(path).map_err(|e| Error::MissingInput {
        path: path.display().to_string(),
        reason: e.to_string(),
    })?;
    parse_checkpoint(&bytes, path)
}
