//! Attention kernel throughput at the spatial-stream shape.

use std::time::Instant;

use thermotwin_core::stvit::kernel::{attention_backward, attention_forward, AttnShape};

fn main() {
    let shape = AttnShape { n_seq: 4, len: 4096, heads: 2, head_dim: 6 };
    let n = shape.activations();
    let wave = |i: usize, k: usize| ((i * 7919 + k * 104729) % 1000) as f64 / 500.0 - 1.0;
    let q: Vec<f64> = (0..n).map(|i| wave(i, 1)).collect();
    let k: Vec<f64> = (0..n).map(|i| wave(i, 2)).collect();
    let v: Vec<f64> = (0..n).map(|i| wave(i, 3)).collect();
    let scores = (shape.n_seq * shape.heads * shape.len * shape.len) as f64;
    let t0 = Instant::now();
    let (out, lse) = attention_forward::<f32>(&shape, &q, &k, &v);
    let f = t0.elapsed().as_secs_f64();
    let t0 = Instant::now();
    let (dq, _, _) = attention_backward::<f32>(&shape, &q, &k, &v, &out, &lse, &v);
    let b = t0.elapsed().as_secs_f64();
    println!("forward {:.3} ns/score, backward {:.3} ns/score ({} {})", f / scores * 1e9, b / scores * 1e9, out[5], dq[5]);
}
