//! Multi-head scaled dot-product self-attention over batches of sequences.
//!
//! Activations live in `f64` as `[seq][len][heads · head_dim]`. Each
//! (sequence, head) pair is copied into a transposed working set of the
//! kernel scalar type, so the inner loops run over keys and vectorize. Only
//! the per-row log-sum-exp is kept from the forward pass; the backward pass
//! recomputes the scores.

use std::ops::{Add, AddAssign, Mul, Sub};

use rayon::prelude::*;

/// Scalar used inside the attention kernel.
pub trait Real:
    Copy + Send + Sync + PartialOrd + Add<Output = Self> + Sub<Output = Self> + Mul<Output = Self> + AddAssign + 'static
{
    const ZERO: Self;
    const NEG_INFINITY: Self;
    fn from_f64(x: f64) -> Self;
    fn to_f64(self) -> f64;
    fn exp(self) -> Self;
    /// `self * b + c`
    fn fma(self, b: Self, c: Self) -> Self;
    #[inline(always)]
    fn max(self, other: Self) -> Self {
        if self > other {
            self
        } else {
            other
        }
    }
}

impl Real for f64 {
    const ZERO: Self = 0.0;
    const NEG_INFINITY: Self = f64::NEG_INFINITY;
    #[inline(always)]
    fn from_f64(x: f64) -> Self {
        x
    }
    #[inline(always)]
    fn to_f64(self) -> f64 {
        self
    }
    #[inline(always)]
    fn exp(self) -> Self {
        f64::exp(self)
    }
    #[inline(always)]
    fn fma(self, b: Self, c: Self) -> Self {
        self * b + c
    }
}

impl Real for f32 {
    const ZERO: Self = 0.0;
    const NEG_INFINITY: Self = f32::NEG_INFINITY;
    #[inline(always)]
    fn from_f64(x: f64) -> Self {
        x as f32
    }
    #[inline(always)]
    fn to_f64(self) -> f64 {
        self as f64
    }
    #[inline(always)]
    fn exp(self) -> Self {
        fast_exp(self)
    }
    #[inline(always)]
    fn fma(self, b: Self, c: Self) -> Self {
        if cfg!(target_feature = "fma") {
            self.mul_add(b, c)
        } else {
            self * b + c
        }
    }
}

/// `exp` for `x ≤ 0` with about 2e-7 relative error, written so the compiler can
/// vectorize it: round `x / ln 2` to the nearest integer by magic-number
/// addition, reduce with a two-part `ln 2`, evaluate a degree-6 polynomial on
/// `[-ln2/2, ln2/2]`, and assemble the exponent field.
#[inline(always)]
pub fn fast_exp(x: f32) -> f32 {
    const LN2_HI: f32 = 0.693_145_75;
    const LN2_LO: f32 = 1.428_606_8e-6;
    let x = if x < -87.0 { -87.0 } else { x };
    let y = x * std::f32::consts::LOG2_E + 12_582_912.0;
    let n = y - 12_582_912.0;
    let r = n.fma(-LN2_HI, x);
    let r = n.fma(-LN2_LO, r);
    let p = r.fma(1.0 / 720.0, 1.0 / 120.0);
    let p = r.fma(p, 1.0 / 24.0);
    let p = r.fma(p, 1.0 / 6.0);
    let p = r.fma(p, 0.5);
    let p = r.fma(p, 1.0);
    let p = r.fma(p, 1.0);
    let i = (y.to_bits() as i32).wrapping_sub(0x4B40_0000);
    p * f32::from_bits(((i + 127) << 23) as u32)
}

const LANES: usize = 16;

#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub struct AttnShape {
    pub n_seq: usize,
    pub len: usize,
    pub heads: usize,
    pub head_dim: usize,
}

impl AttnShape {
    pub fn width(&self) -> usize {
        self.heads * self.head_dim
    }

    pub fn activations(&self) -> usize {
        self.n_seq * self.len * self.width()
    }

    fn scale(&self) -> f64 {
        1.0 / (self.head_dim as f64).sqrt()
    }
}

/// Transposed copies of one (sequence, head) slice: `q` scaled by
/// `1/sqrt(head_dim)` as `[len][hd]`, `k` and `v` as `[hd][len]`.
struct HeadSet<S> {
    q: Vec<S>,
    kt: Vec<S>,
    vt: Vec<S>,
}

fn gather_head<S: Real>(shape: &AttnShape, seq: usize, head: usize, q: &[f64], k: &[f64], v: &[f64]) -> HeadSet<S> {
    let (len, hd, w) = (shape.len, shape.head_dim, shape.width());
    let scale = shape.scale();
    let mut hs = HeadSet {
        q: vec![S::ZERO; len * hd],
        kt: vec![S::ZERO; hd * len],
        vt: vec![S::ZERO; hd * len],
    };
    for i in 0..len {
        let base = (seq * len + i) * w + head * hd;
        for c in 0..hd {
            hs.q[i * hd + c] = S::from_f64(q[base + c] * scale);
            hs.kt[c * len + i] = S::from_f64(k[base + c]);
            hs.vt[c * len + i] = S::from_f64(v[base + c]);
        }
    }
    hs
}

/// `s[j] = Σ_c q[c] · kt[c][j]`
#[inline(always)]
fn scores<S: Real>(q: &[S], kt: &[S], len: usize, s: &mut [S]) {
    let s = &mut s[..len];
    let k0 = &kt[..len];
    for j in 0..len {
        s[j] = q[0] * k0[j];
    }
    for (c, &qc) in q.iter().enumerate().skip(1) {
        let kc = &kt[c * len..(c + 1) * len];
        for j in 0..len {
            s[j] = qc.fma(kc[j], s[j]);
        }
    }
}

#[inline(always)]
fn max_of<S: Real>(s: &[S]) -> S {
    let mut acc = [S::NEG_INFINITY; LANES];
    let chunks = s.chunks_exact(LANES);
    let tail = chunks.remainder();
    for ch in chunks {
        for l in 0..LANES {
            acc[l] = acc[l].max(ch[l]);
        }
    }
    let mut m = S::NEG_INFINITY;
    for &a in acc.iter().chain(tail) {
        m = m.max(a);
    }
    m
}

/// `s[j] ← exp(s[j] - shift)`; returns the sum.
#[inline(always)]
fn exp_shifted<S: Real>(s: &mut [S], shift: S) -> S {
    let mut acc = [S::ZERO; LANES];
    let mut chunks = s.chunks_exact_mut(LANES);
    for ch in &mut chunks {
        for l in 0..LANES {
            let p = (ch[l] - shift).exp();
            ch[l] = p;
            acc[l] += p;
        }
    }
    let mut total = S::ZERO;
    for x in chunks.into_remainder() {
        let p = (*x - shift).exp();
        *x = p;
        total += p;
    }
    for a in acc {
        total += a;
    }
    total
}

/// `Σ_j a[j] · b[j]`
#[inline(always)]
fn dot<S: Real>(a: &[S], b: &[S]) -> S {
    let mut acc = [S::ZERO; LANES];
    let ca = a.chunks_exact(LANES);
    let cb = b.chunks_exact(LANES);
    let (ta, tb) = (ca.remainder(), cb.remainder());
    for (x, y) in ca.zip(cb) {
        for l in 0..LANES {
            acc[l] = x[l].fma(y[l], acc[l]);
        }
    }
    let mut total = S::ZERO;
    for (x, y) in ta.iter().zip(tb) {
        total = x.fma(*y, total);
    }
    for a in acc {
        total += a;
    }
    total
}

struct HeadForward {
    out: Vec<f64>,
    lse: Vec<f64>,
}

fn head_forward<S: Real>(shape: &AttnShape, hs: &HeadSet<S>) -> HeadForward {
    let (len, hd) = (shape.len, shape.head_dim);
    let mut s = vec![S::ZERO; len];
    let mut out = vec![0.0; len * hd];
    let mut lse = vec![0.0; len];
    for i in 0..len {
        scores(&hs.q[i * hd..(i + 1) * hd], &hs.kt, len, &mut s);
        let m = max_of(&s);
        let total = exp_shifted(&mut s, m);
        let inv = 1.0 / total.to_f64();
        for c in 0..hd {
            out[i * hd + c] = dot(&s, &hs.vt[c * len..(c + 1) * len]).to_f64() * inv;
        }
        lse[i] = m.to_f64() + total.to_f64().ln();
    }
    HeadForward { out, lse }
}

/// Forward pass. Returns the attention output (same layout as `q`) and the
/// row log-sum-exp as `[seq][head][len]`.
pub fn attention_forward<S: Real>(shape: &AttnShape, q: &[f64], k: &[f64], v: &[f64]) -> (Vec<f64>, Vec<f64>) {
    let n = shape.activations();
    assert!(q.len() == n && k.len() == n && v.len() == n, "attention input length");
    let (len, hd, w, heads) = (shape.len, shape.head_dim, shape.width(), shape.heads);
    let per_seq: Vec<Vec<HeadForward>> = (0..shape.n_seq)
        .into_par_iter()
        .map(|seq| {
            (0..heads)
                .map(|h| head_forward(shape, &gather_head::<S>(shape, seq, h, q, k, v)))
                .collect()
        })
        .collect();
    let mut out = vec![0.0; n];
    let mut lse = vec![0.0; shape.n_seq * heads * len];
    for (seq, hf) in per_seq.into_iter().enumerate() {
        for (h, f) in hf.into_iter().enumerate() {
            for i in 0..len {
                let base = (seq * len + i) * w + h * hd;
                out[base..base + hd].copy_from_slice(&f.out[i * hd..(i + 1) * hd]);
            }
            lse[(seq * heads + h) * len..(seq * heads + h + 1) * len].copy_from_slice(&f.lse);
        }
    }
    (out, lse)
}

struct HeadGrad {
    dq: Vec<f64>,
    dkt: Vec<f64>,
    dvt: Vec<f64>,
}

#[allow(clippy::too_many_arguments)]
fn head_backward<S: Real>(
    shape: &AttnShape,
    hs: &HeadSet<S>,
    seq: usize,
    head: usize,
    out: &[f64],
    lse: &[f64],
    d_out: &[f64],
) -> HeadGrad {
    let (len, hd, w) = (shape.len, shape.head_dim, shape.width());
    let scale = shape.scale();
    let mut s = vec![S::ZERO; len];
    let mut dp = vec![S::ZERO; len];
    let mut dkt = vec![S::ZERO; hd * len];
    let mut dvt = vec![S::ZERO; hd * len];
    let mut dq = vec![0.0; len * hd];
    let mut g = vec![S::ZERO; hd];
    let lse = &lse[(seq * shape.heads + head) * len..(seq * shape.heads + head + 1) * len];
    for i in 0..len {
        let base = (seq * len + i) * w + head * hd;
        let mut delta = 0.0;
        for c in 0..hd {
            g[c] = S::from_f64(d_out[base + c]);
            delta += d_out[base + c] * out[base + c];
        }
        let qi = &hs.q[i * hd..(i + 1) * hd];
        scores(qi, &hs.kt, len, &mut s);
        let shift = S::from_f64(lse[i]);
        for x in s.iter_mut() {
            *x = (*x - shift).exp();
        }
        scores(&g, &hs.vt, len, &mut dp);
        let delta = S::from_f64(delta);
        // dp ← softmax jacobian applied: p (dp - delta)
        for j in 0..len {
            dp[j] = s[j] * (dp[j] - delta);
        }
        for c in 0..hd {
            dq[i * hd + c] = dot(&dp, &hs.kt[c * len..(c + 1) * len]).to_f64() * scale;
            let (qc, gc) = (qi[c], g[c]);
            let dk = &mut dkt[c * len..(c + 1) * len];
            for j in 0..len {
                dk[j] = dp[j].fma(qc, dk[j]);
            }
            let dv = &mut dvt[c * len..(c + 1) * len];
            for j in 0..len {
                dv[j] = s[j].fma(gc, dv[j]);
            }
        }
    }
    HeadGrad {
        dq,
        dkt: dkt.into_iter().map(Real::to_f64).collect(),
        dvt: dvt.into_iter().map(Real::to_f64).collect(),
    }
}

/// Backward pass given the forward output and log-sum-exp. Returns
/// `(dq, dk, dv)` in the input layout.
#[allow(clippy::too_many_arguments)]
pub fn attention_backward<S: Real>(
    shape: &AttnShape,
    q: &[f64],
    k: &[f64],
    v: &[f64],
    out: &[f64],
    lse: &[f64],
    d_out: &[f64],
) -> (Vec<f64>, Vec<f64>, Vec<f64>) {
    let n = shape.activations();
    assert!(d_out.len() == n && out.len() == n, "attention gradient length");
    let (len, hd, w, heads) = (shape.len, shape.head_dim, shape.width(), shape.heads);
    let per_seq: Vec<Vec<HeadGrad>> = (0..shape.n_seq)
        .into_par_iter()
        .map(|seq| {
            (0..heads)
                .map(|h| {
                    let hs = gather_head::<S>(shape, seq, h, q, k, v);
                    head_backward(shape, &hs, seq, h, out, lse, d_out)
                })
                .collect()
        })
        .collect();
    let mut dq = vec![0.0; n];
    let mut dk = vec![0.0; n];
    let mut dv = vec![0.0; n];
    for (seq, hg) in per_seq.into_iter().enumerate() {
        for (h, g) in hg.into_iter().enumerate() {
            for i in 0..len {
                let base = (seq * len + i) * w + h * hd;
                for c in 0..hd {
                    dq[base + c] = g.dq[i * hd + c];
                    dk[base + c] = g.dkt[c * len + i];
                    dv[base + c] = g.dvt[c * len + i];
                }
            }
        }
    }
    (dq, dk, dv)
}

/// Dense attention weights for one (sequence, head), `[len][len]`.
pub fn attention_probs<S: Real>(shape: &AttnShape, q: &[f64], k: &[f64], seq: usize, head: usize) -> Vec<f64> {
    let hs = gather_head::<S>(shape, seq, head, q, k, k);
    let (len, hd) = (shape.len, shape.head_dim);
    let mut s = vec![S::ZERO; len];
    let mut out = Vec::with_capacity(len * len);
    for i in 0..len {
        scores(&hs.q[i * hd..(i + 1) * hd], &hs.kt, len, &mut s);
        let m = max_of(&s);
        let total = exp_shifted(&mut s, m).to_f64();
        out.extend(s.iter().map(|p| p.to_f64() / total));
    }
    out
}

#[cfg(test)]
mod tests {
    use super::*;
    use rand::{Rng, SeedableRng};
    use rand_chacha::ChaCha8Rng;

    fn random(n: usize, seed: u64) -> Vec<f64> {
        let mut rng = ChaCha8Rng::seed_from_u64(seed);
        (0..n).map(|_| rng.gen_range(-1.5..1.5)).collect()
    }

    /// Textbook attention: explicit score matrix, softmax, weighted sum.
    fn naive(shape: &AttnShape, q: &[f64], k: &[f64], v: &[f64]) -> Vec<f64> {
        let (len, hd, w) = (shape.len, shape.head_dim, shape.width());
        let mut out = vec![0.0; q.len()];
        for seq in 0..shape.n_seq {
            for h in 0..shape.heads {
                for i in 0..len {
                    let at = |x: &[f64], t: usize, c: usize| x[(seq * len + t) * w + h * hd + c];
                    let s: Vec<f64> = (0..len)
                        .map(|j| (0..hd).map(|c| at(q, i, c) * at(k, j, c)).sum::<f64>() / (hd as f64).sqrt())
                        .collect();
                    let m = s.iter().cloned().fold(f64::NEG_INFINITY, f64::max);
                    let e: Vec<f64> = s.iter().map(|x| (x - m).exp()).collect();
                    let z: f64 = e.iter().sum();
                    for c in 0..hd {
                        out[(seq * len + i) * w + h * hd + c] = (0..len).map(|j| e[j] * at(v, j, c)).sum::<f64>() / z;
                    }
                }
            }
        }
        out
    }

    fn shape() -> AttnShape {
        AttnShape {
            n_seq: 3,
            len: 37,
            heads: 2,
            head_dim: 3,
        }
    }

    #[test]
    fn forward_matches_naive() {
        let sh = shape();
        let n = sh.activations();
        let (q, k, v) = (random(n, 1), random(n, 2), random(n, 3));
        let expected = naive(&sh, &q, &k, &v);
        let (o64, _) = attention_forward::<f64>(&sh, &q, &k, &v);
        let (o32, _) = attention_forward::<f32>(&sh, &q, &k, &v);
        for i in 0..n {
            assert!((o64[i] - expected[i]).abs() < 1e-12);
            assert!((o32[i] - expected[i]).abs() < 1e-5);
        }
    }

    #[test]
    fn long_sequences_match_naive() {
        let sh = AttnShape {
            n_seq: 1,
            len: 589,
            heads: 2,
            head_dim: 6,
        };
        let n = sh.activations();
        let (q, k, v) = (random(n, 21), random(n, 22), random(n, 23));
        // sharp scores stress the max shift
        let q: Vec<f64> = q.iter().map(|x| 4.0 * x).collect();
        let expected = naive(&sh, &q, &k, &v);
        let (o64, _) = attention_forward::<f64>(&sh, &q, &k, &v);
        let (o32, _) = attention_forward::<f32>(&sh, &q, &k, &v);
        for i in 0..n {
            assert!((o64[i] - expected[i]).abs() < 1e-12);
            assert!((o32[i] - expected[i]).abs() < 1e-5);
        }
    }

    #[test]
    fn rows_are_probability_vectors() {
        let sh = shape();
        let n = sh.activations();
        let (q, k) = (random(n, 4), random(n, 5));
        for seq in 0..sh.n_seq {
            let p = attention_probs::<f64>(&sh, &q, &k, seq, 1);
            for row in p.chunks(sh.len) {
                assert!((row.iter().sum::<f64>() - 1.0).abs() < 1e-6);
                assert!(row.iter().all(|&x| x >= 0.0));
            }
        }
    }

    #[test]
    fn backward_matches_finite_differences() {
        let sh = AttnShape {
            n_seq: 2,
            len: 5,
            heads: 2,
            head_dim: 2,
        };
        let n = sh.activations();
        let (q, k, v) = (random(n, 6), random(n, 7), random(n, 8));
        let r = random(n, 9);
        let loss = |q: &[f64], k: &[f64], v: &[f64]| -> f64 {
            let (o, _) = attention_forward::<f64>(&sh, q, k, v);
            o.iter().zip(&r).map(|(a, b)| a * b).sum()
        };
        let (o, lse) = attention_forward::<f64>(&sh, &q, &k, &v);
        let (dq, dk, dv) = attention_backward::<f64>(&sh, &q, &k, &v, &o, &lse, &r);
        let h = 1e-5;
        for (which, grad) in [(0, &dq), (1, &dk), (2, &dv)] {
            for i in 0..n {
                let mut inputs = [q.clone(), k.clone(), v.clone()];
                inputs[which][i] += h;
                let up = loss(&inputs[0], &inputs[1], &inputs[2]);
                inputs[which][i] -= 2.0 * h;
                let down = loss(&inputs[0], &inputs[1], &inputs[2]);
                let fd = (up - down) / (2.0 * h);
                assert!((fd - grad[i]).abs() < 1e-8 * (1.0 + fd.abs()), "{which}/{i}: {fd} vs {}", grad[i]);
            }
        }
    }

    #[test]
    fn f32_backward_tracks_f64() {
        let sh = shape();
        let n = sh.activations();
        let (q, k, v, r) = (random(n, 10), random(n, 11), random(n, 12), random(n, 13));
        let (o, lse) = attention_forward::<f64>(&sh, &q, &k, &v);
        let a = attention_backward::<f64>(&sh, &q, &k, &v, &o, &lse, &r);
        let (o, lse) = attention_forward::<f32>(&sh, &q, &k, &v);
        let b = attention_backward::<f32>(&sh, &q, &k, &v, &o, &lse, &r);
        for (x, y) in [(&a.0, &b.0), (&a.1, &b.1), (&a.2, &b.2)] {
            for i in 0..n {
                assert!((x[i] - y[i]).abs() < 1e-4, "{} vs {}", x[i], y[i]);
            }
        }
    }

    #[test]
    fn fast_exp_accuracy() {
        let mut worst = 0.0f64;
        for i in 0..=100_000 {
            let x = -(i as f32) * 8e-4;
            let rel = ((fast_exp(x) as f64) - (x as f64).exp()).abs() / (x as f64).exp();
            worst = worst.max(rel);
        }
        assert!(worst < 1e-6, "{worst}");
        assert_eq!(fast_exp(0.0), 1.0);
        assert!(fast_exp(-200.0) >= 0.0 && fast_exp(-200.0) < 1e-37);
    }
}
