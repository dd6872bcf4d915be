//! A small pre-layer-norm transformer encoder with a weight-tied MLM head.
//! All parameters are 64-bit floats; forward and backward passes are exact
//! analytic implementations validated against finite differences.

mod backward;
mod forward;

pub use backward::{backward, mlm_loss};
pub use forward::{forward, mean_pool, ForwardCache};

use std::io::Read;
use std::path::Path;

use ndarray::{Array1, Array2};
use rand::SeedableRng;
use rand_chacha::ChaCha8Rng;
use rand_distr::{Distribution, Normal};
use serde::{Deserialize, Serialize};

use crate::digest::Fnv1a;

pub(crate) const LN_EPS: f64 = 1e-12;
const INIT_STD: f64 = 0.02;
const CHECKPOINT_MAGIC: &[u8; 8] = b"ifxckpt1";

#[derive(Debug, thiserror::Error)]
pub enum ModelError {
    #[error("invalid model config: {0}")]
    InvalidConfig(String),
    #[error("batch shape mismatch: {0}")]
    BadBatch(String),
    #[error("token id {id} out of range (vocab_size {vocab_size})")]
    IdOutOfRange { id: usize, vocab_size: usize },
    #[error("sequence length {len} exceeds max_len {max_len}")]
    TooLong { len: usize, max_len: usize },
    #[error("loss requires at least one labeled position")]
    NoLabels,
    #[error("checkpoint io {path}: {source}")]
    Io {
        path: String,
        source: std::io::Error,
    },
    #[error("corrupt checkpoint: {0}")]
    Corrupt(String),
}

/// Architecture hyperparameters.
#[derive(Debug, Clone, PartialEq, Eq, Serialize, Deserialize)]
pub struct ModelConfig {
    pub n_layers: usize,
    pub d_model: usize,
    pub n_heads: usize,
    pub d_ffn: usize,
    pub max_len: usize,
    pub vocab_size: usize,
    pub seed: u64,
}

impl ModelConfig {
    pub fn validate(&self) -> Result<(), ModelError> {
        let fail = |m: &str| Err(ModelError::InvalidConfig(m.to_string()));
        if self.n_layers == 0 || self.d_model == 0 || self.n_heads == 0 || self.d_ffn == 0 {
            return fail("sizes must be positive");
        }
        if self.d_model % self.n_heads != 0 {
            return fail("d_model must be divisible by n_heads");
        }
        if self.max_len < 4 {
            return fail("max_len must be >= 4");
        }
        if self.vocab_size == 0 {
            return fail("vocab_size must be positive");
        }
        Ok(())
    }

    pub fn head_dim(&self) -> usize {
        self.d_model / self.n_heads
    }
}

/// One encoder layer's parameters. Attention projections carry no biases; the
/// FFN and both pre-sublayer layer norms do.
#[derive(Debug, Clone, PartialEq)]
pub struct LayerParams {
    pub wq: Array2<f64>,
    pub wk: Array2<f64>,
    pub wv: Array2<f64>,
    pub wo: Array2<f64>,
    pub w1: Array2<f64>,
    pub b1: Array1<f64>,
    pub w2: Array2<f64>,
    pub b2: Array1<f64>,
    pub ln1_gain: Array1<f64>,
    pub ln1_bias: Array1<f64>,
    pub ln2_gain: Array1<f64>,
    pub ln2_bias: Array1<f64>,
}

/// Full parameter set. The MLM output head is tied to `token_embedding`, so
/// the only output-side parameter is `output_bias`.
#[derive(Debug, Clone, PartialEq)]
pub struct Model {
    pub config: ModelConfig,
    pub token_embedding: Array2<f64>,
    pub position_embedding: Array2<f64>,
    pub layers: Vec<LayerParams>,
    pub final_ln_gain: Array1<f64>,
    pub final_ln_bias: Array1<f64>,
    pub output_bias: Array1<f64>,
}

/// Gradients share the parameter layout.
pub type Gradients = Model;

/// One training/evaluation batch. `labels` uses -1 at positions that do not
/// participate in the loss.
#[derive(Debug, Clone)]
pub struct Batch {
    pub input_ids: Array2<usize>,
    pub attention_mask: Array2<bool>,
    pub labels: Array2<i64>,
}

impl Batch {
    pub fn validate(&self, config: &ModelConfig) -> Result<(), ModelError> {
        let (b, t) = self.input_ids.dim();
        if self.attention_mask.dim() != (b, t) || self.labels.dim() != (b, t) {
            return Err(ModelError::BadBatch(format!(
                "ids {:?}, mask {:?}, labels {:?}",
                self.input_ids.dim(),
                self.attention_mask.dim(),
                self.labels.dim()
            )));
        }
        if t > config.max_len {
            return Err(ModelError::TooLong {
                len: t,
                max_len: config.max_len,
            });
        }
        for &id in self.input_ids.iter() {
            if id >= config.vocab_size {
                return Err(ModelError::IdOutOfRange {
                    id,
                    vocab_size: config.vocab_size,
                });
            }
        }
        Ok(())
    }

    pub fn n_labeled(&self) -> usize {
        self.labels.iter().filter(|&&l| l >= 0).count()
    }
}

impl Model {
    /// Seeded initialization: weights from N(0, 0.02^2), biases and layer-norm
    /// biases zero, layer-norm gains one. Deterministic in `config.seed`.
    pub fn init(config: &ModelConfig) -> Result<Model, ModelError> {
        config.validate()?;
        let mut rng = ChaCha8Rng::seed_from_u64(config.seed);
        let normal = Normal::new(0.0, INIT_STD).expect("valid std");
        let mut model = Model::zeros(config.clone());
        for (name, slice) in model.param_slices_mut() {
            let is_gain = name.ends_with("gain");
            let is_bias =
                name.ends_with("bias") || name.ends_with(".b1") || name.ends_with(".b2");
            if is_gain {
                slice.fill(1.0);
            } else if !is_bias {
                for v in slice.iter_mut() {
                    *v = normal.sample(&mut rng);
                }
            }
            // Biases stay at the zeros() default.
        }
        Ok(model)
    }

    /// All-zero parameter set with the same shapes; used for gradients and
    /// optimizer state.
    pub fn zeros(config: ModelConfig) -> Model {
        let d = config.d_model;
        let layer = || LayerParams {
            wq: Array2::zeros((d, d)),
            wk: Array2::zeros((d, d)),
            wv: Array2::zeros((d, d)),
            wo: Array2::zeros((d, d)),
            w1: Array2::zeros((d, config.d_ffn)),
            b1: Array1::zeros(config.d_ffn),
            w2: Array2::zeros((config.d_ffn, d)),
            b2: Array1::zeros(d),
            ln1_gain: Array1::zeros(d),
            ln1_bias: Array1::zeros(d),
            ln2_gain: Array1::zeros(d),
            ln2_bias: Array1::zeros(d),
        };
        Model {
            token_embedding: Array2::zeros((config.vocab_size, d)),
            position_embedding: Array2::zeros((config.max_len, d)),
            layers: (0..config.n_layers).map(|_| layer()).collect(),
            final_ln_gain: Array1::zeros(d),
            final_ln_bias: Array1::zeros(d),
            output_bias: Array1::zeros(config.vocab_size),
            config,
        }
    }

    /// Named views of every parameter tensor in declaration order. This order
    /// defines initialization draws and the checkpoint layout.
    pub fn param_slices(&self) -> Vec<(String, &[f64])> {
        let mut out: Vec<(String, &[f64])> = vec![
            ("token_embedding".into(), self.token_embedding.as_slice().unwrap()),
            ("position_embedding".into(), self.position_embedding.as_slice().unwrap()),
        ];
        for (i, l) in self.layers.iter().enumerate() {
            out.push((format!("layer{i}.wq"), l.wq.as_slice().unwrap()));
            out.push((format!("layer{i}.wk"), l.wk.as_slice().unwrap()));
            out.push((format!("layer{i}.wv"), l.wv.as_slice().unwrap()));
            out.push((format!("layer{i}.wo"), l.wo.as_slice().unwrap()));
            out.push((format!("layer{i}.w1"), l.w1.as_slice().unwrap()));
            out.push((format!("layer{i}.b1"), l.b1.as_slice().unwrap()));
            out.push((format!("layer{i}.w2"), l.w2.as_slice().unwrap()));
            out.push((format!("layer{i}.b2"), l.b2.as_slice().unwrap()));
            out.push((format!("layer{i}.ln1_gain"), l.ln1_gain.as_slice().unwrap()));
            out.push((format!("layer{i}.ln1_bias"), l.ln1_bias.as_slice().unwrap()));
            out.push((format!("layer{i}.ln2_gain"), l.ln2_gain.as_slice().unwrap()));
            out.push((format!("layer{i}.ln2_bias"), l.ln2_bias.as_slice().unwrap()));
        }
        out.push(("final_ln_gain".into(), self.final_ln_gain.as_slice().unwrap()));
        out.push(("final_ln_bias".into(), self.final_ln_bias.as_slice().unwrap()));
        out.push(("output_bias".into(), self.output_bias.as_slice().unwrap()));
        out
    }

    pub fn param_slices_mut(&mut self) -> Vec<(String, &mut [f64])> {
        let mut out: Vec<(String, &mut [f64])> = vec![
            ("token_embedding".into(), self.token_embedding.as_slice_mut().unwrap()),
            ("position_embedding".into(), self.position_embedding.as_slice_mut().unwrap()),
        ];
        for (i, l) in self.layers.iter_mut().enumerate() {
            out.push((format!("layer{i}.wq"), l.wq.as_slice_mut().unwrap()));
            out.push((format!("layer{i}.wk"), l.wk.as_slice_mut().unwrap()));
            out.push((format!("layer{i}.wv"), l.wv.as_slice_mut().unwrap()));
            out.push((format!("layer{i}.wo"), l.wo.as_slice_mut().unwrap()));
            out.push((format!("layer{i}.w1"), l.w1.as_slice_mut().unwrap()));
            out.push((format!("layer{i}.b1"), l.b1.as_slice_mut().unwrap()));
            out.push((format!("layer{i}.w2"), l.w2.as_slice_mut().unwrap()));
            out.push((format!("layer{i}.b2"), l.b2.as_slice_mut().unwrap()));
            out.push((format!("layer{i}.ln1_gain"), l.ln1_gain.as_slice_mut().unwrap()));
            out.push((format!("layer{i}.ln1_bias"), l.ln1_bias.as_slice_mut().unwrap()));
            out.push((format!("layer{i}.ln2_gain"), l.ln2_gain.as_slice_mut().unwrap()));
            out.push((format!("layer{i}.ln2_bias"), l.ln2_bias.as_slice_mut().unwrap()));
        }
        out.push(("final_ln_gain".into(), self.final_ln_gain.as_slice_mut().unwrap()));
        out.push(("final_ln_bias".into(), self.final_ln_bias.as_slice_mut().unwrap()));
        out.push(("output_bias".into(), self.output_bias.as_slice_mut().unwrap()));
        out
    }

    pub fn param_count(&self) -> usize {
        self.param_slices().iter().map(|(_, s)| s.len()).sum()
    }

    pub fn all_finite(&self) -> bool {
        self.param_slices()
            .iter()
            .all(|(_, s)| s.iter().all(|v| v.is_finite()))
    }

    /// Serialize to the binary checkpoint format: magic, config as 64-bit
    /// little-endian integers, each tensor as a length-prefixed f64 array,
    /// then an FNV-1a checksum of all preceding bytes.
    pub fn to_checkpoint_bytes(&self) -> Vec<u8> {
        let mut buf = Vec::new();
        buf.extend_from_slice(CHECKPOINT_MAGIC);
        for v in [
            self.config.n_layers as u64,
            self.config.d_model as u64,
            self.config.n_heads as u64,
            self.config.d_ffn as u64,
            self.config.max_len as u64,
            self.config.vocab_size as u64,
            self.config.seed,
        ] {
            buf.extend_from_slice(&v.to_le_bytes());
        }
        for (_, slice) in self.param_slices() {
            buf.extend_from_slice(&(slice.len() as u64).to_le_bytes());
            for v in slice {
                buf.extend_from_slice(&v.to_le_bytes());
            }
        }
        let mut h = Fnv1a::new();
        h.update(&buf);
        buf.extend_from_slice(&h.finish().to_le_bytes());
        buf
    }

    pub fn from_checkpoint_bytes(bytes: &[u8]) -> Result<Model, ModelError> {
        let corrupt = |m: &str| ModelError::Corrupt(m.to_string());
        if bytes.len() < CHECKPOINT_MAGIC.len() + 7 * 8 + 8 {
            return Err(corrupt("file too short"));
        }
        let (body, checksum_bytes) = bytes.split_at(bytes.len() - 8);
        let mut h = Fnv1a::new();
        h.update(body);
        let stored = u64::from_le_bytes(checksum_bytes.try_into().unwrap());
        if h.finish() != stored {
            return Err(corrupt("checksum mismatch"));
        }
        let mut cursor = body;
        let mut magic = [0u8; 8];
        cursor.read_exact(&mut magic).map_err(|_| corrupt("magic"))?;
        if &magic != CHECKPOINT_MAGIC {
            return Err(corrupt("bad magic"));
        }
        let read_u64 = |cursor: &mut &[u8]| -> Result<u64, ModelError> {
            let mut b = [0u8; 8];
            cursor.read_exact(&mut b).map_err(|_| corrupt("truncated"))?;
            Ok(u64::from_le_bytes(b))
        };
        let config = ModelConfig {
            n_layers: read_u64(&mut cursor)? as usize,
            d_model: read_u64(&mut cursor)? as usize,
            n_heads: read_u64(&mut cursor)? as usize,
            d_ffn: read_u64(&mut cursor)? as usize,
            max_len: read_u64(&mut cursor)? as usize,
            vocab_size: read_u64(&mut cursor)? as usize,
            seed: read_u64(&mut cursor)?,
        };
        config.validate()?;
        let mut model = Model::zeros(config);
        for (name, slice) in model.param_slices_mut() {
            let stored_len = {
                let mut b = [0u8; 8];
                cursor
                    .read_exact(&mut b)
                    .map_err(|_| corrupt("truncated tensor header"))?;
                u64::from_le_bytes(b) as usize
            };
            if stored_len != slice.len() {
                return Err(ModelError::Corrupt(format!(
                    "tensor {name}: expected {} values, found {stored_len}",
                    slice.len()
                )));
            }
            for v in slice.iter_mut() {
                let mut b = [0u8; 8];
                cursor
                    .read_exact(&mut b)
                    .map_err(|_| corrupt("truncated tensor data"))?;
                *v = f64::from_le_bytes(b);
            }
        }
        if !cursor.is_empty() {
            return Err(corrupt("trailing bytes"));
        }
        Ok(model)
    }

    pub fn save_checkpoint(&self, path: &Path) -> Result<(), ModelError> {
        std::fs::write(path, self.to_checkpoint_bytes()).map_err(|source| ModelError::Io {
            path: path.display().to_string(),
            source,
        })
    }

    pub fn load_checkpoint(path: &Path) -> Result<Model, ModelError> {
        let bytes = std::fs::read(path).map_err(|source| ModelError::Io {
            path: path.display().to_string(),
            source,
        })?;
        Model::from_checkpoint_bytes(&bytes)
    }
}

pub(crate) fn gelu(x: f64) -> f64 {
    const C: f64 = 0.7978845608028654; // sqrt(2/pi)
    const A: f64 = 0.044715;
    0.5 * x * (1.0 + (C * (x + A * x * x * x)).tanh())
}

pub(crate) fn gelu_grad(x: f64) -> f64 {
    const C: f64 = 0.7978845608028654;
    const A: f64 = 0.044715;
    let u = C * (x + A * x * x * x);
    let t = u.tanh();
    0.5 * (1.0 + t) + 0.5 * x * (1.0 - t * t) * C * (1.0 + 3.0 * A * x * x)
}

#[cfg(test)]
mod tests {
    use super::*;

    fn tiny_config() -> ModelConfig {
        ModelConfig {
            n_layers: 2,
            d_model: 64,
            n_heads: 4,
            d_ffn: 256,
            max_len: 64,
            vocab_size: 1000,
            seed: 42,
        }
    }

    #[test]
    fn init_is_deterministic() {
        let cfg = tiny_config();
        let a = Model::init(&cfg).unwrap();
        let b = Model::init(&cfg).unwrap();
        assert_eq!(a, b);
        let mut cfg2 = cfg;
        cfg2.seed = 43;
        let c = Model::init(&cfg2).unwrap();
        assert_ne!(a.token_embedding, c.token_embedding);
    }

    #[test]
    fn init_rejects_bad_divisibility() {
        let mut cfg = tiny_config();
        cfg.n_heads = 3;
        assert!(matches!(
            Model::init(&cfg),
            Err(ModelError::InvalidConfig(_))
        ));
    }

    #[test]
    fn init_fills_gains_and_biases() {
        let model = Model::init(&tiny_config()).unwrap();
        assert!(model.layers[0].ln1_gain.iter().all(|&v| v == 1.0));
        assert!(model.final_ln_gain.iter().all(|&v| v == 1.0));
        assert!(model.layers[0].b1.iter().all(|&v| v == 0.0));
        assert!(model.layers[1].b2.iter().all(|&v| v == 0.0));
        assert!(model.layers[0].ln2_bias.iter().all(|&v| v == 0.0));
        assert!(model.output_bias.iter().all(|&v| v == 0.0));
        // Weights are actually random.
        assert!(model.token_embedding.iter().any(|&v| v != 0.0));
        assert!(model.layers[0].wq.iter().any(|&v| v != 0.0));
    }

    #[test]
    fn param_count_matches_closed_form() {
        // Independent closed-form count for L=2, d=64, h=4, ffn=256, V=1000, T=64.
        let (l, d, ffn, v, t) = (2usize, 64usize, 256usize, 1000usize, 64usize);
        let per_layer = 4 * d * d + d * ffn + ffn + ffn * d + d + 4 * d;
        let expected = v * d + t * d + l * per_layer + 2 * d + v;
        let model = Model::init(&tiny_config()).unwrap();
        assert_eq!(model.param_count(), expected);
        assert_eq!(expected, 168_680);
    }

    #[test]
    fn checkpoint_round_trips_bit_exactly() {
        let model = Model::init(&tiny_config()).unwrap();
        let bytes = model.to_checkpoint_bytes();
        let restored = Model::from_checkpoint_bytes(&bytes).unwrap();
        assert_eq!(restored, model);
        assert_eq!(restored.to_checkpoint_bytes(), bytes);
    }

    #[test]
    fn checkpoint_detects_corruption() {
        let model = Model::init(&tiny_config()).unwrap();
        let mut bytes = model.to_checkpoint_bytes();
        let mid = bytes.len() / 2;
        bytes[mid] ^= 0xff;
        assert!(matches!(
            Model::from_checkpoint_bytes(&bytes),
            Err(ModelError::Corrupt(_))
        ));
    }

    #[test]
    fn gelu_grad_matches_finite_difference() {
        for &x in &[-3.0, -1.0, -0.1, 0.0, 0.5, 2.0] {
            let h = 1e-6;
            let fd = (gelu(x + h) - gelu(x - h)) / (2.0 * h);
            assert!((gelu_grad(x) - fd).abs() < 1e-8, "x={x}");
        }
    }
}
