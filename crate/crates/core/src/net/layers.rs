//! Forward and backward kernels for the transformer's building blocks.

use ndarray::{s, Array1, Array2, ArrayView1, ArrayView2, Axis};

use crate::error::{Error, Result};

pub type Mat = Array2<f64>;

const LN_EPS: f64 = 1e-6;

pub(crate) fn linear(x: &Mat, w: ArrayView2<f64>, b: ArrayView1<f64>) -> Mat {
    let mut y = x.dot(&w);
    y += &b;
    y
}

/// Row-wise layer norm without affine parameters; returns the normalised
/// rows and the reciprocal standard deviations.
pub(crate) fn layer_norm(x: &Mat) -> (Mat, Vec<f64>) {
    let d = x.ncols() as f64;
    let mut out = x.clone();
    let mut inv = Vec::with_capacity(x.nrows());
    for mut row in out.rows_mut() {
        let mean = row.sum() / d;
        row -= mean;
        let var = row.iter().map(|v| v * v).sum::<f64>() / d;
        let r = 1.0 / (var + LN_EPS).sqrt();
        row *= r;
        inv.push(r);
    }
    (out, inv)
}

pub(crate) fn layer_norm_backward(dxhat: &Mat, xhat: &Mat, inv: &[f64]) -> Mat {
    let d = xhat.ncols() as f64;
    let mut dx = dxhat.clone();
    for (i, mut row) in dx.rows_mut().into_iter().enumerate() {
        let xr = xhat.row(i);
        let mean_g = row.sum() / d;
        let mean_gx = row.dot(&xr) / d;
        for (g, x) in row.iter_mut().zip(xr.iter()) {
            *g = inv[i] * (*g - mean_g - x * mean_gx);
        }
    }
    dx
}

/// `xhat ⊙ (1 + scale) + shift`, broadcasting the vectors over rows.
pub(crate) fn modulate(xhat: &Mat, shift: ArrayView1<f64>, scale: ArrayView1<f64>) -> Mat {
    let mut a = xhat * &scale.mapv(|s| 1.0 + s);
    a += &shift;
    a
}

/// Returns `(dxhat, dshift, dscale)`.
pub(crate) fn modulate_backward(da: &Mat, xhat: &Mat, scale: ArrayView1<f64>) -> (Mat, Array1<f64>, Array1<f64>) {
    let dshift = da.sum_axis(Axis(0));
    let dscale = (da * xhat).sum_axis(Axis(0));
    (da * &scale.mapv(|s| 1.0 + s), dshift, dscale)
}

const GELU_K: f64 = 0.797_884_560_802_865_4; // sqrt(2 / pi)
const GELU_C: f64 = 0.044_715;

/// Tanh approximation of GELU.
pub(crate) fn gelu(x: f64) -> f64 {
    0.5 * x * (1.0 + (GELU_K * (x + GELU_C * x * x * x)).tanh())
}

pub(crate) fn gelu_grad(x: f64) -> f64 {
    let th = (GELU_K * (x + GELU_C * x * x * x)).tanh();
    0.5 * (1.0 + th) + 0.5 * x * (1.0 - th * th) * GELU_K * (1.0 + 3.0 * GELU_C * x * x)
}

fn sigmoid(x: f64) -> f64 {
    1.0 / (1.0 + (-x).exp())
}

pub(crate) fn silu(x: f64) -> f64 {
    x * sigmoid(x)
}

pub(crate) fn silu_grad(x: f64) -> f64 {
    let s = sigmoid(x);
    s * (1.0 + x * (1.0 - s))
}

/// Multi-head scaled dot-product attention.
///
/// `q` and `k` share a width, `k` and `v` share a length, and both widths
/// split evenly into `heads`. Returns the concatenated head outputs and each
/// head's row-stochastic probability matrix.
pub fn attention_with_probs(
    q: ArrayView2<f64>,
    k: ArrayView2<f64>,
    v: ArrayView2<f64>,
    heads: usize,
) -> Result<(Mat, Vec<Mat>)> {
    if heads == 0 || q.ncols() != k.ncols() || k.nrows() != v.nrows() || k.nrows() == 0 {
        return Err(Error::dim(format!(
            "attention shapes q {:?}, k {:?}, v {:?}",
            q.dim(),
            k.dim(),
            v.dim()
        )));
    }
    if q.ncols() % heads != 0 || v.ncols() % heads != 0 || q.ncols() == 0 {
        return Err(Error::dim(format!(
            "widths {} and {} do not split into {heads} heads",
            q.ncols(),
            v.ncols()
        )));
    }
    let dh = q.ncols() / heads;
    let dv = v.ncols() / heads;
    let scale = 1.0 / (dh as f64).sqrt();
    let mut out = Mat::zeros((q.nrows(), v.ncols()));
    let mut probs = Vec::with_capacity(heads);
    for h in 0..heads {
        let qh = q.slice(s![.., h * dh..(h + 1) * dh]);
        let kh = k.slice(s![.., h * dh..(h + 1) * dh]);
        let vh = v.slice(s![.., h * dv..(h + 1) * dv]);
        let mut p = qh.dot(&kh.t());
        p *= scale;
        softmax_rows(&mut p);
        out.slice_mut(s![.., h * dv..(h + 1) * dv]).assign(&p.dot(&vh));
        probs.push(p);
    }
    Ok((out, probs))
}

/// `softmax(Q Kᵀ / √d_head) V` per head, heads concatenated.
pub fn attention(q: ArrayView2<f64>, k: ArrayView2<f64>, v: ArrayView2<f64>, heads: usize) -> Result<Mat> {
    Ok(attention_with_probs(q, k, v, heads)?.0)
}

fn softmax_rows(p: &mut Mat) {
    for mut row in p.rows_mut() {
        let max = row.fold(f64::NEG_INFINITY, |m, &x| m.max(x));
        row.mapv_inplace(|x| (x - max).exp());
        let sum = row.sum();
        row /= sum;
    }
}

/// Gradients `(dq, dk, dv)` of multi-head attention.
pub(crate) fn attention_backward(
    dout: &Mat,
    q: &Mat,
    k: &Mat,
    v: &Mat,
    probs: &[Mat],
) -> (Mat, Mat, Mat) {
    let heads = probs.len();
    let dh = q.ncols() / heads;
    let dvw = v.ncols() / heads;
    let scale = 1.0 / (dh as f64).sqrt();
    let mut dq = Mat::zeros(q.dim());
    let mut dk = Mat::zeros(k.dim());
    let mut dv = Mat::zeros(v.dim());
    for (h, p) in probs.iter().enumerate() {
        let d_o = dout.slice(s![.., h * dvw..(h + 1) * dvw]);
        let vh = v.slice(s![.., h * dvw..(h + 1) * dvw]);
        let qh = q.slice(s![.., h * dh..(h + 1) * dh]);
        let kh = k.slice(s![.., h * dh..(h + 1) * dh]);
        dv.slice_mut(s![.., h * dvw..(h + 1) * dvw]).assign(&p.t().dot(&d_o));
        let dp = d_o.dot(&vh.t());
        // Softmax Jacobian, row by row.
        let mut ds = &dp * p;
        let row_dot = ds.sum_axis(Axis(1));
        ds -= &(p * &row_dot.insert_axis(Axis(1)));
        ds *= scale;
        dq.slice_mut(s![.., h * dh..(h + 1) * dh]).assign(&ds.dot(&kh));
        dk.slice_mut(s![.., h * dh..(h + 1) * dh]).assign(&ds.t().dot(&qh));
    }
    (dq, dk, dv)
}

/// Sinusoidal features of a scalar, `dim` wide (sines then cosines).
pub(crate) fn sinusoidal(x: f64, dim: usize, max_period: f64) -> Array1<f64> {
    let half = dim / 2;
    let mut out = Array1::zeros(dim);
    for i in 0..half {
        let freq = (-(max_period.ln()) * i as f64 / half as f64).exp();
        out[i] = (x * freq).sin();
        out[half + i] = (x * freq).cos();
    }
    out
}

/// Fixed sinusoidal position table, `len × dim`.
pub(crate) fn positions(len: usize, dim: usize) -> Mat {
    let mut m = Mat::zeros((len, dim));
    for i in 0..len {
        m.row_mut(i).assign(&sinusoidal(i as f64, dim, 10_000.0));
    }
    m
}
