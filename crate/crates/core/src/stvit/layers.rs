//! Token-wise layers with hand-written backward passes. Activations are
//! row-major `[rows][features]` slices.

use serde::{Deserialize, Serialize};

/// Dense tensor with an explicit shape.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct Tensor {
    pub shape: Vec<usize>,
    pub data: Vec<f64>,
}

impl Tensor {
    pub fn zeros(shape: &[usize]) -> Self {
        Self {
            shape: shape.to_vec(),
            data: vec![0.0; shape.iter().product()],
        }
    }

    pub fn filled(shape: &[usize], value: f64) -> Self {
        Self {
            shape: shape.to_vec(),
            data: vec![value; shape.iter().product()],
        }
    }

    pub fn len(&self) -> usize {
        self.data.len()
    }

    pub fn is_empty(&self) -> bool {
        self.data.is_empty()
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct Linear {
    /// `[out][in]`
    pub weight: Tensor,
    /// `[out]`
    pub bias: Tensor,
}

impl Linear {
    pub fn zeros(n_in: usize, n_out: usize) -> Self {
        Self {
            weight: Tensor::zeros(&[n_out, n_in]),
            bias: Tensor::zeros(&[n_out]),
        }
    }

    pub fn n_in(&self) -> usize {
        self.weight.shape[1]
    }

    pub fn n_out(&self) -> usize {
        self.weight.shape[0]
    }
}

/// `c = a · b` for row-major `a [m][k]`, `b [k][n]` given by strides.
#[allow(clippy::too_many_arguments)]
fn gemm(
    m: usize,
    k: usize,
    n: usize,
    a: &[f64],
    (rsa, csa): (isize, isize),
    b: &[f64],
    (rsb, csb): (isize, isize),
    beta: f64,
    c: &mut [f64],
) {
    if m == 0 || n == 0 {
        return;
    }
    if k == 0 {
        if beta == 0.0 {
            c[..m * n].fill(0.0);
        }
        return;
    }
    // SAFETY: the strides describe in-bounds matrices of the stated sizes
    // (checked by the callers' length assertions) and `c` does not alias.
    unsafe {
        matrixmultiply::dgemm(
            m,
            k,
            n,
            1.0,
            a.as_ptr(),
            rsa,
            csa,
            b.as_ptr(),
            rsb,
            csb,
            beta,
            c.as_mut_ptr(),
            n as isize,
            1,
        );
    }
}

/// `y = x Wᵀ + b` over `rows` tokens.
pub fn linear_forward(lin: &Linear, x: &[f64], rows: usize) -> Vec<f64> {
    let (n_in, n_out) = (lin.n_in(), lin.n_out());
    assert_eq!(x.len(), rows * n_in, "linear input length");
    let mut y = vec![0.0; rows * n_out];
    gemm(
        rows,
        n_in,
        n_out,
        x,
        (n_in as isize, 1),
        &lin.weight.data,
        (1, n_in as isize),
        0.0,
        &mut y,
    );
    for row in y.chunks_exact_mut(n_out) {
        for (v, b) in row.iter_mut().zip(&lin.bias.data) {
            *v += b;
        }
    }
    y
}

/// Accumulates `dW += dyᵀ x`, `db += Σ dy` into `grad` and returns `dx = dy W`
/// when requested.
pub fn linear_backward(lin: &Linear, x: &[f64], dy: &[f64], rows: usize, grad: &mut Linear, want_dx: bool) -> Option<Vec<f64>> {
    let (n_in, n_out) = (lin.n_in(), lin.n_out());
    assert_eq!(dy.len(), rows * n_out, "linear gradient length");
    assert_eq!(x.len(), rows * n_in, "linear input length");
    gemm(
        n_out,
        rows,
        n_in,
        dy,
        (1, n_out as isize),
        x,
        (n_in as isize, 1),
        1.0,
        &mut grad.weight.data,
    );
    for row in dy.chunks_exact(n_out) {
        for (g, d) in grad.bias.data.iter_mut().zip(row) {
            *g += d;
        }
    }
    want_dx.then(|| {
        let mut dx = vec![0.0; rows * n_in];
        gemm(
            rows,
            n_out,
            n_in,
            dy,
            (n_out as isize, 1),
            &lin.weight.data,
            (n_in as isize, 1),
            0.0,
            &mut dx,
        );
        dx
    })
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct LayerNorm {
    pub gain: Tensor,
    pub offset: Tensor,
}

pub const LAYER_NORM_EPS: f64 = 1e-5;

impl LayerNorm {
    pub fn identity(dim: usize) -> Self {
        Self {
            gain: Tensor::filled(&[dim], 1.0),
            offset: Tensor::zeros(&[dim]),
        }
    }

    pub fn zeros(dim: usize) -> Self {
        Self {
            gain: Tensor::zeros(&[dim]),
            offset: Tensor::zeros(&[dim]),
        }
    }
}

/// Saved normalized inputs and reciprocal deviations.
pub struct LayerNormCache {
    pub xhat: Vec<f64>,
    pub rstd: Vec<f64>,
}

pub fn layer_norm_forward(ln: &LayerNorm, x: &[f64]) -> (Vec<f64>, LayerNormCache) {
    let d = ln.gain.len();
    let rows = x.len() / d;
    let mut y = vec![0.0; x.len()];
    let mut xhat = vec![0.0; x.len()];
    let mut rstd = vec![0.0; rows];
    for r in 0..rows {
        let xs = &x[r * d..(r + 1) * d];
        let mean = xs.iter().sum::<f64>() / d as f64;
        let var = xs.iter().map(|v| (v - mean) * (v - mean)).sum::<f64>() / d as f64;
        let rs = 1.0 / (var + LAYER_NORM_EPS).sqrt();
        rstd[r] = rs;
        for c in 0..d {
            let h = (xs[c] - mean) * rs;
            xhat[r * d + c] = h;
            y[r * d + c] = h * ln.gain.data[c] + ln.offset.data[c];
        }
    }
    (y, LayerNormCache { xhat, rstd })
}

pub fn layer_norm_backward(ln: &LayerNorm, cache: &LayerNormCache, dy: &[f64], grad: &mut LayerNorm) -> Vec<f64> {
    let d = ln.gain.len();
    let mut dx = vec![0.0; dy.len()];
    let mut dh = vec![0.0; d];
    for (r, &rs) in cache.rstd.iter().enumerate() {
        let xh = &cache.xhat[r * d..(r + 1) * d];
        let g = &dy[r * d..(r + 1) * d];
        let (mut mean_dh, mut mean_dh_xh) = (0.0, 0.0);
        for c in 0..d {
            grad.gain.data[c] += g[c] * xh[c];
            grad.offset.data[c] += g[c];
            dh[c] = g[c] * ln.gain.data[c];
            mean_dh += dh[c];
            mean_dh_xh += dh[c] * xh[c];
        }
        mean_dh /= d as f64;
        mean_dh_xh /= d as f64;
        for c in 0..d {
            dx[r * d + c] = rs * (dh[c] - mean_dh - xh[c] * mean_dh_xh);
        }
    }
    dx
}

pub fn relu(x: &[f64]) -> Vec<f64> {
    x.iter().map(|&v| v.max(0.0)).collect()
}

/// Gradient through ReLU given its pre-activation.
pub fn relu_backward(pre: &[f64], dy: &[f64]) -> Vec<f64> {
    pre.iter().zip(dy).map(|(&p, &g)| if p > 0.0 { g } else { 0.0 }).collect()
}

pub fn add_in_place(a: &mut [f64], b: &[f64]) {
    for (x, y) in a.iter_mut().zip(b) {
        *x += y;
    }
}
