//! Forward and backward passes of the three-stream forecaster.
//!
//! Per sample with `N = h·w` cells and `T = t_in` hours:
//! 1. cell features (spatial channels broadcast over time, plus masked
//!    historical UTCI) embed to `[T][N][d]`; meteo embeds to `[T][d]`;
//! 2. the spatial stream attends over the `N` cells of each hour, the
//!    temporal-pixel stream over the `T` hours of each cell, and the meteo
//!    stream over the `T` meteo tokens;
//! 3. the three outputs are summed, the meteo stream broadcast over cells;
//! 4. a per-cell linear head maps the t-major `T·d` vector to `t_out` values.

use rayon::prelude::*;

use super::kernel::{attention_backward, attention_forward, AttnShape};
use super::layers::{
    add_in_place, layer_norm_backward, layer_norm_forward, linear_backward, linear_forward, relu, relu_backward,
    LayerNormCache,
};
use super::params::{Block, Precision, StVitConfig, StVitParams, CELL_FEATURES};
use super::StVitError;
use crate::dataset::{WindowSample, N_SPATIAL};
use crate::meteo::N_VARIABLES;

struct BlockCache {
    ln1: LayerNormCache,
    a: Vec<f64>,
    q: Vec<f64>,
    k: Vec<f64>,
    v: Vec<f64>,
    attn: Vec<f64>,
    lse: Vec<f64>,
    ln2: LayerNormCache,
    b: Vec<f64>,
    pre: Vec<f64>,
    hid: Vec<f64>,
}

fn attend(shape: &AttnShape, precision: Precision, q: &[f64], k: &[f64], v: &[f64]) -> (Vec<f64>, Vec<f64>) {
    match precision {
        Precision::F64 => attention_forward::<f64>(shape, q, k, v),
        Precision::F32 => attention_forward::<f32>(shape, q, k, v),
    }
}

fn block_forward(block: &Block, mut z: Vec<f64>, shape: &AttnShape, precision: Precision) -> (Vec<f64>, BlockCache) {
    let rows = shape.n_seq * shape.len;
    let (a, ln1) = layer_norm_forward(&block.norm1, &z);
    let q = linear_forward(&block.attn.query, &a, rows);
    let k = linear_forward(&block.attn.key, &a, rows);
    let v = linear_forward(&block.attn.value, &a, rows);
    let (attn, lse) = attend(shape, precision, &q, &k, &v);
    add_in_place(&mut z, &linear_forward(&block.attn.output, &attn, rows));
    let (b, ln2) = layer_norm_forward(&block.norm2, &z);
    let pre = linear_forward(&block.ff1, &b, rows);
    let hid = relu(&pre);
    add_in_place(&mut z, &linear_forward(&block.ff2, &hid, rows));
    let cache = BlockCache {
        ln1,
        a,
        q,
        k,
        v,
        attn,
        lse,
        ln2,
        b,
        pre,
        hid,
    };
    (z, cache)
}

fn block_backward(
    block: &Block,
    c: &BlockCache,
    dz: Vec<f64>,
    grad: &mut Block,
    shape: &AttnShape,
    precision: Precision,
) -> Vec<f64> {
    let rows = shape.n_seq * shape.len;
    let mut dz = dz;
    let dhid = linear_backward(&block.ff2, &c.hid, &dz, rows, &mut grad.ff2, true).unwrap();
    let dpre = relu_backward(&c.pre, &dhid);
    let db = linear_backward(&block.ff1, &c.b, &dpre, rows, &mut grad.ff1, true).unwrap();
    add_in_place(&mut dz, &layer_norm_backward(&block.norm2, &c.ln2, &db, &mut grad.norm2));
    let dattn = linear_backward(&block.attn.output, &c.attn, &dz, rows, &mut grad.attn.output, true).unwrap();
    let (dq, dk, dv) = match precision {
        Precision::F64 => attention_backward::<f64>(shape, &c.q, &c.k, &c.v, &c.attn, &c.lse, &dattn),
        Precision::F32 => attention_backward::<f32>(shape, &c.q, &c.k, &c.v, &c.attn, &c.lse, &dattn),
    };
    let mut da = linear_backward(&block.attn.query, &c.a, &dq, rows, &mut grad.attn.query, true).unwrap();
    add_in_place(
        &mut da,
        &linear_backward(&block.attn.key, &c.a, &dk, rows, &mut grad.attn.key, true).unwrap(),
    );
    add_in_place(
        &mut da,
        &linear_backward(&block.attn.value, &c.a, &dv, rows, &mut grad.attn.value, true).unwrap(),
    );
    add_in_place(&mut dz, &layer_norm_backward(&block.norm1, &c.ln1, &da, &mut grad.norm1));
    dz
}

fn stream_forward(
    blocks: &[Block],
    mut z: Vec<f64>,
    shape: &AttnShape,
    precision: Precision,
    keep: bool,
) -> (Vec<f64>, Vec<BlockCache>) {
    let mut caches = Vec::new();
    for b in blocks {
        let (out, cache) = block_forward(b, z, shape, precision);
        z = out;
        if keep {
            caches.push(cache);
        }
    }
    (z, caches)
}

fn stream_backward(
    blocks: &[Block],
    caches: &[BlockCache],
    mut dz: Vec<f64>,
    grads: &mut [Block],
    shape: &AttnShape,
    precision: Precision,
) -> Vec<f64> {
    for i in (0..blocks.len()).rev() {
        dz = block_backward(&blocks[i], &caches[i], dz, &mut grads[i], shape, precision);
    }
    dz
}

/// Swaps the two leading axes of `[a][b][d]`.
fn transpose(x: &[f64], a: usize, b: usize, d: usize) -> Vec<f64> {
    let mut out = vec![0.0; x.len()];
    for i in 0..a {
        for j in 0..b {
            let src = (i * b + j) * d;
            let dst = (j * a + i) * d;
            out[dst..dst + d].copy_from_slice(&x[src..src + d]);
        }
    }
    out
}

struct Dims {
    n: usize,
    t: usize,
    d: usize,
}

struct Cache {
    x_cell: Vec<f64>,
    fused: Vec<f64>,
    spatial: Vec<BlockCache>,
    temporal: Vec<BlockCache>,
    meteo: Vec<BlockCache>,
}

impl Dims {
    fn spatial(&self, heads: usize) -> AttnShape {
        AttnShape {
            n_seq: self.t,
            len: self.n,
            heads,
            head_dim: self.d / heads,
        }
    }

    fn temporal(&self, heads: usize) -> AttnShape {
        AttnShape {
            n_seq: self.n,
            len: self.t,
            heads,
            head_dim: self.d / heads,
        }
    }

    fn meteo(&self, heads: usize) -> AttnShape {
        AttnShape {
            n_seq: 1,
            len: self.t,
            heads,
            head_dim: self.d / heads,
        }
    }
}

pub(crate) fn check_sample(config: &StVitConfig, s: &WindowSample, with_target: bool) -> Result<(), StVitError> {
    let n = s.h * s.w;
    let bad = |what: &str| Err(StVitError::Shape(format!("{what} in sample at {:?}", s.origin)));
    if n == 0 {
        return bad("empty region");
    }
    if s.t_in != config.t_in || s.utci_in.len() != config.t_in * n {
        return bad("utci_in does not match t_in");
    }
    if s.spatial.len() != N_SPATIAL * n || s.mask.len() != n {
        return bad("spatial or mask size");
    }
    if s.meteo_in.len() != config.t_in * N_VARIABLES {
        return bad("meteo_in does not match t_in");
    }
    if with_target && (s.t_out != config.t_out || s.target.len() != config.t_out * n) {
        return bad("target does not match t_out");
    }
    Ok(())
}

fn forward_impl(params: &StVitParams, config: &StVitConfig, s: &WindowSample, keep: bool) -> (Vec<f64>, Option<Cache>) {
    let dims = Dims {
        n: s.h * s.w,
        t: config.t_in,
        d: config.hidden_dim,
    };
    let (n, t, d) = (dims.n, dims.t, dims.d);
    let heads = config.num_heads;
    let precision = config.attention_precision;

    let mut x_cell = vec![0.0; t * n * CELL_FEATURES];
    for ti in 0..t {
        for ci in 0..n {
            let row = &mut x_cell[(ti * n + ci) * CELL_FEATURES..(ti * n + ci + 1) * CELL_FEATURES];
            for ch in 0..N_SPATIAL {
                row[ch] = s.spatial[ch * n + ci];
            }
            row[N_SPATIAL] = if s.mask[ci] { s.utci_in[ti * n + ci] } else { 0.0 };
        }
    }
    let embedded = linear_forward(&params.cell_embed, &x_cell, t * n);
    let temporal_in = transpose(&embedded, t, n, d);
    let meteo_in = linear_forward(&params.meteo_embed, &s.meteo_in, t);

    let (zs, cs) = stream_forward(&params.spatial, embedded, &dims.spatial(heads), precision, keep);
    let (zp, cp) = stream_forward(&params.temporal, temporal_in, &dims.temporal(heads), precision, keep);
    let (zm, cm) = stream_forward(&params.meteo, meteo_in, &dims.meteo(heads), precision, keep);

    // fused features per cell, t-major: [N][T·d]
    let mut fused = vec![0.0; n * t * d];
    for ci in 0..n {
        for ti in 0..t {
            let dst = &mut fused[(ci * t + ti) * d..(ci * t + ti + 1) * d];
            let a = &zs[(ti * n + ci) * d..(ti * n + ci + 1) * d];
            let b = &zp[(ci * t + ti) * d..(ci * t + ti + 1) * d];
            let m = &zm[ti * d..(ti + 1) * d];
            for c in 0..d {
                dst[c] = a[c] + b[c] + m[c];
            }
        }
    }
    let head_out = linear_forward(&params.head, &fused, n);
    let t_out = config.t_out;
    let mut y = vec![0.0; t_out * n];
    for ci in 0..n {
        for tau in 0..t_out {
            y[tau * n + ci] = head_out[ci * t_out + tau];
        }
    }
    let cache = keep.then_some(Cache {
        x_cell,
        fused,
        spatial: cs,
        temporal: cp,
        meteo: cm,
    });
    (y, cache)
}

fn backward_impl(
    params: &StVitParams,
    config: &StVitConfig,
    s: &WindowSample,
    cache: Cache,
    dy: &[f64],
    grad: &mut StVitParams,
) {
    let dims = Dims {
        n: s.h * s.w,
        t: config.t_in,
        d: config.hidden_dim,
    };
    let (n, t, d) = (dims.n, dims.t, dims.d);
    let heads = config.num_heads;
    let precision = config.attention_precision;
    let t_out = config.t_out;

    let mut d_head = vec![0.0; n * t_out];
    for ci in 0..n {
        for tau in 0..t_out {
            d_head[ci * t_out + tau] = dy[tau * n + ci];
        }
    }
    let d_fused = linear_backward(&params.head, &cache.fused, &d_head, n, &mut grad.head, true).unwrap();

    let mut dzs = vec![0.0; t * n * d];
    let mut dzm = vec![0.0; t * d];
    for ci in 0..n {
        for ti in 0..t {
            let g = &d_fused[(ci * t + ti) * d..(ci * t + ti + 1) * d];
            dzs[(ti * n + ci) * d..(ti * n + ci + 1) * d].copy_from_slice(g);
            for c in 0..d {
                dzm[ti * d + c] += g[c];
            }
        }
    }
    // d_fused is already laid out as the temporal stream's [N][T][d]
    let dzp = d_fused;

    let mut de = stream_backward(&params.spatial, &cache.spatial, dzs, &mut grad.spatial, &dims.spatial(heads), precision);
    let dep = stream_backward(&params.temporal, &cache.temporal, dzp, &mut grad.temporal, &dims.temporal(heads), precision);
    add_in_place(&mut de, &transpose(&dep, n, t, d));
    let dem = stream_backward(&params.meteo, &cache.meteo, dzm, &mut grad.meteo, &dims.meteo(heads), precision);

    linear_backward(&params.cell_embed, &cache.x_cell, &de, t * n, &mut grad.cell_embed, false);
    linear_backward(&params.meteo_embed, &s.meteo_in, &dem, t, &mut grad.meteo_embed, false);
}

/// Normalized prediction `[t_out][h·w]`.
pub fn forward(params: &StVitParams, config: &StVitConfig, sample: &WindowSample) -> Result<Vec<f64>, StVitError> {
    check_sample(config, sample, false)?;
    Ok(forward_impl(params, config, sample, false).0)
}

fn sse(y: &[f64], s: &WindowSample) -> f64 {
    let n = s.h * s.w;
    let mut total = 0.0;
    for (i, (p, t)) in y.iter().zip(&s.target).enumerate() {
        if s.mask[i % n] {
            total += (p - t) * (p - t);
        }
    }
    total
}

fn batch_count(config: &StVitConfig, batch: &[WindowSample]) -> Result<usize, StVitError> {
    if batch.is_empty() {
        return Err(StVitError::EmptyBatch);
    }
    for s in batch {
        check_sample(config, s, true)?;
    }
    let m: usize = batch.iter().map(|s| s.n_valid() * config.t_out).sum();
    if m == 0 {
        return Err(StVitError::EmptyBatch);
    }
    Ok(m)
}

/// Summed squared error over unmasked target cells and their count.
pub fn batch_sse(params: &StVitParams, config: &StVitConfig, batch: &[WindowSample]) -> Result<(f64, usize), StVitError> {
    let m = batch_count(config, batch)?;
    let per_item: Vec<f64> = batch
        .par_iter()
        .map(|s| sse(&forward_impl(params, config, s, false).0, s))
        .collect();
    Ok((per_item.iter().sum(), m))
}

/// Masked mean squared error of the batch and its exact gradient. `m`
/// counts unmasked cell-hours over the whole batch.
pub fn loss_and_grad(
    params: &StVitParams,
    config: &StVitConfig,
    batch: &[WindowSample],
) -> Result<(f64, StVitParams), StVitError> {
    let m = batch_count(config, batch)?;
    let scale = 2.0 / m as f64;
    let per_item: Vec<(f64, StVitParams)> = batch
        .par_iter()
        .map(|s| {
            let (y, cache) = forward_impl(params, config, s, true);
            let n = s.h * s.w;
            let dy: Vec<f64> = y
                .iter()
                .zip(&s.target)
                .enumerate()
                .map(|(i, (p, t))| if s.mask[i % n] { scale * (p - t) } else { 0.0 })
                .collect();
            let mut grad = StVitParams::zeros(config);
            backward_impl(params, config, s, cache.expect("cache kept"), &dy, &mut grad);
            (sse(&y, s), grad)
        })
        .collect();
    let mut total = 0.0;
    let mut grad = StVitParams::zeros(config);
    // fixed summation order keeps the result independent of scheduling
    for (item, (e, g)) in per_item.into_iter().enumerate() {
        if !e.is_finite() {
            return Err(StVitError::NonFiniteLoss { item });
        }
        total += e;
        grad.add_assign(&g);
    }
    Ok((total / m as f64, grad))
}
