//! Model configuration and parameter containers.

use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;
use serde::{Deserialize, Serialize};

use super::layers::{LayerNorm, Linear, Tensor};
use super::StVitError;
use crate::dataset::N_SPATIAL;
use crate::meteo::N_VARIABLES;

/// Per-cell input features: the spatial channels plus historical UTCI.
pub const CELL_FEATURES: usize = N_SPATIAL + 1;

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize, Default)]
#[serde(rename_all = "lowercase")]
pub enum Precision {
    #[default]
    F64,
    F32,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct StVitConfig {
    pub hidden_dim: usize,
    pub num_heads: usize,
    pub num_layers: usize,
    /// Width of the feed-forward hidden layer in every block.
    pub ff_dim: usize,
    pub t_in: usize,
    pub t_out: usize,
    pub batch_size: usize,
    pub lr: f64,
    pub patience: usize,
    pub min_delta: f64,
    pub max_epochs: usize,
    pub seed: u64,
    /// Scalar type of the attention kernel; everything else runs in f64.
    #[serde(default)]
    pub attention_precision: Precision,
}

impl Default for StVitConfig {
    fn default() -> Self {
        Self {
            hidden_dim: 12,
            num_heads: 2,
            num_layers: 1,
            ff_dim: 48,
            t_in: 24,
            t_out: 24,
            batch_size: 10,
            lr: 1e-4,
            patience: 10,
            min_delta: 5e-4,
            max_epochs: 200,
            seed: 0,
            attention_precision: Precision::F64,
        }
    }
}

impl StVitConfig {
    /// Attention width; equal to the hidden width.
    pub fn d_attn(&self) -> usize {
        self.hidden_dim
    }

    pub fn head_dim(&self) -> usize {
        self.hidden_dim / self.num_heads
    }

    pub fn validate(&self) -> Result<(), StVitError> {
        let positive = [
            self.hidden_dim,
            self.num_heads,
            self.num_layers,
            self.ff_dim,
            self.t_in,
            self.t_out,
            self.batch_size,
            self.max_epochs,
        ];
        if positive.contains(&0) {
            return Err(StVitError::Config("dimensions, batch size and epochs must be positive".into()));
        }
        if self.hidden_dim % self.num_heads != 0 {
            return Err(StVitError::Config(format!(
                "hidden_dim {} not divisible by num_heads {}",
                self.hidden_dim, self.num_heads
            )));
        }
        if !(self.lr > 0.0 && self.min_delta >= 0.0) {
            return Err(StVitError::Config("lr must be positive and min_delta non-negative".into()));
        }
        Ok(())
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct Attention {
    pub query: Linear,
    pub key: Linear,
    pub value: Linear,
    pub output: Linear,
}

/// Pre-norm transformer block: `z += attn(ln1(z))`, then `z += ff(ln2(z))`.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct Block {
    pub norm1: LayerNorm,
    pub attn: Attention,
    pub norm2: LayerNorm,
    pub ff1: Linear,
    pub ff2: Linear,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct StVitParams {
    pub cell_embed: Linear,
    pub meteo_embed: Linear,
    pub spatial: Vec<Block>,
    pub temporal: Vec<Block>,
    pub meteo: Vec<Block>,
    /// Per cell, `[t_out][t_in · hidden_dim]` over the t-major fused vector.
    pub head: Linear,
}

fn block_zeros(d: usize, ff: usize) -> Block {
    Block {
        norm1: LayerNorm::zeros(d),
        attn: Attention {
            query: Linear::zeros(d, d),
            key: Linear::zeros(d, d),
            value: Linear::zeros(d, d),
            output: Linear::zeros(d, d),
        },
        norm2: LayerNorm::zeros(d),
        ff1: Linear::zeros(d, ff),
        ff2: Linear::zeros(ff, d),
    }
}

impl StVitParams {
    /// All-zero parameters with the shapes of `config`; also used as a
    /// gradient accumulator.
    pub fn zeros(config: &StVitConfig) -> Self {
        let d = config.hidden_dim;
        let ff = config.ff_dim;
        let stream = || (0..config.num_layers).map(|_| block_zeros(d, ff)).collect::<Vec<_>>();
        Self {
            cell_embed: Linear::zeros(CELL_FEATURES, d),
            meteo_embed: Linear::zeros(N_VARIABLES, d),
            spatial: stream(),
            temporal: stream(),
            meteo: stream(),
            head: Linear::zeros(config.t_in * d, config.t_out),
        }
    }

    /// Tensors in a fixed order with stable dotted names.
    pub fn named(&self) -> Vec<(String, &Tensor)> {
        let mut out = Vec::new();
        fn lin<'a>(out: &mut Vec<(String, &'a Tensor)>, name: &str, l: &'a Linear) {
            out.push((format!("{name}.weight"), &l.weight));
            out.push((format!("{name}.bias"), &l.bias));
        }
        lin(&mut out, "cell_embed", &self.cell_embed);
        lin(&mut out, "meteo_embed", &self.meteo_embed);
        for (stream, blocks) in [("spatial", &self.spatial), ("temporal", &self.temporal), ("meteo", &self.meteo)] {
            for (i, b) in blocks.iter().enumerate() {
                let p = format!("{stream}.{i}");
                out.push((format!("{p}.norm1.gain"), &b.norm1.gain));
                out.push((format!("{p}.norm1.offset"), &b.norm1.offset));
                lin(&mut out, &format!("{p}.attn.query"), &b.attn.query);
                lin(&mut out, &format!("{p}.attn.key"), &b.attn.key);
                lin(&mut out, &format!("{p}.attn.value"), &b.attn.value);
                lin(&mut out, &format!("{p}.attn.output"), &b.attn.output);
                out.push((format!("{p}.norm2.gain"), &b.norm2.gain));
                out.push((format!("{p}.norm2.offset"), &b.norm2.offset));
                lin(&mut out, &format!("{p}.ff1"), &b.ff1);
                lin(&mut out, &format!("{p}.ff2"), &b.ff2);
            }
        }
        lin(&mut out, "head", &self.head);
        out
    }

    /// Mutable tensors in the same order as [`named`](Self::named).
    pub fn tensors_mut(&mut self) -> Vec<&mut Tensor> {
        let mut out: Vec<&mut Tensor> = Vec::new();
        fn lin<'a>(out: &mut Vec<&'a mut Tensor>, l: &'a mut Linear) {
            out.push(&mut l.weight);
            out.push(&mut l.bias);
        }
        lin(&mut out, &mut self.cell_embed);
        lin(&mut out, &mut self.meteo_embed);
        for blocks in [&mut self.spatial, &mut self.temporal, &mut self.meteo] {
            for b in blocks.iter_mut() {
                out.push(&mut b.norm1.gain);
                out.push(&mut b.norm1.offset);
                lin(&mut out, &mut b.attn.query);
                lin(&mut out, &mut b.attn.key);
                lin(&mut out, &mut b.attn.value);
                lin(&mut out, &mut b.attn.output);
                out.push(&mut b.norm2.gain);
                out.push(&mut b.norm2.offset);
                lin(&mut out, &mut b.ff1);
                lin(&mut out, &mut b.ff2);
            }
        }
        lin(&mut out, &mut self.head);
        out
    }

    pub fn n_params(&self) -> usize {
        self.named().iter().map(|(_, t)| t.len()).sum()
    }

    pub fn flat(&self) -> Vec<f64> {
        self.named().iter().flat_map(|(_, t)| t.data.iter().copied()).collect()
    }

    pub fn is_finite(&self) -> bool {
        self.named().iter().all(|(_, t)| t.data.iter().all(|v| v.is_finite()))
    }

    /// `self += other`, tensor by tensor.
    pub fn add_assign(&mut self, other: &StVitParams) {
        let src: Vec<&Tensor> = other.named().into_iter().map(|(_, t)| t).collect();
        for (dst, s) in self.tensors_mut().into_iter().zip(src) {
            for (a, b) in dst.data.iter_mut().zip(&s.data) {
                *a += b;
            }
        }
    }

    pub fn scale(&mut self, k: f64) {
        for t in self.tensors_mut() {
            for v in t.data.iter_mut() {
                *v *= k;
            }
        }
    }
}

/// Weights and biases of every linear map drawn from `U(-1/sqrt(fan_in),
/// 1/sqrt(fan_in))`; layer-norm gains 1 and offsets 0. Deterministic per seed.
pub fn init_params(config: &StVitConfig, seed: u64) -> Result<StVitParams, StVitError> {
    config.validate()?;
    let mut params = StVitParams::zeros(config);
    let mut rng = ChaCha8Rng::seed_from_u64(seed);
    let names: Vec<String> = params.named().into_iter().map(|(n, _)| n).collect();
    let mut fan_in = 0usize;
    for (name, t) in names.iter().zip(params.tensors_mut()) {
        if name.ends_with(".weight") {
            fan_in = t.shape[1];
        }
        if name.ends_with(".gain") {
            t.data.fill(1.0);
        } else if name.ends_with(".offset") {
            t.data.fill(0.0);
        } else {
            // biases follow their weight, so `fan_in` is that layer's input width
            let bound = 1.0 / (fan_in as f64).sqrt();
            for v in t.data.iter_mut() {
                *v = rng.gen_range(-bound..bound);
            }
        }
    }
    Ok(params)
}
