//! Row-wise building blocks with their backward passes.

use ndarray::{Array1, Array2, ArrayView1, ArrayView2, Axis, Zip};
use rand::Rng as _;

use crate::rng::Rng;

const GELU_C: f64 = 0.797_884_560_802_865_4; // sqrt(2 / pi)

/// Tanh-form GELU.
pub fn gelu(x: f64) -> f64 {
    0.5 * x * (1.0 + (GELU_C * (x + 0.044_715 * x * x * x)).tanh())
}

pub fn gelu_grad(x: f64) -> f64 {
    let inner = GELU_C * (x + 0.044_715 * x * x * x);
    let th = inner.tanh();
    0.5 * (1.0 + th) + 0.5 * x * (1.0 - th * th) * GELU_C * (1.0 + 3.0 * 0.044_715 * x * x)
}

pub const LN_EPS: f64 = 1e-5;

pub struct LayerNormCache {
    pub xhat: Array2<f64>,
    pub rstd: Array1<f64>,
}

pub fn layer_norm(x: &Array2<f64>, gain: ArrayView1<'_, f64>, bias: ArrayView1<'_, f64>) -> (Array2<f64>, LayerNormCache) {
    let n = x.ncols() as f64;
    let mut xhat = x.clone();
    let mut rstd = Array1::zeros(x.nrows());
    for (mut row, r) in xhat.rows_mut().into_iter().zip(rstd.iter_mut()) {
        let mean = row.sum() / n;
        row.mapv_inplace(|v| v - mean);
        let var = row.iter().map(|v| v * v).sum::<f64>() / n;
        *r = 1.0 / (var + LN_EPS).sqrt();
        let s = *r;
        row.mapv_inplace(|v| v * s);
    }
    let out = &xhat * &gain + &bias;
    (out, LayerNormCache { xhat, rstd })
}

/// Returns `(dx, dgain, dbias)`.
pub fn layer_norm_backward(
    dy: &Array2<f64>,
    cache: &LayerNormCache,
    gain: ArrayView1<'_, f64>,
) -> (Array2<f64>, Array1<f64>, Array1<f64>) {
    let dgain = (dy * &cache.xhat).sum_axis(Axis(0));
    let dbias = dy.sum_axis(Axis(0));
    let n = dy.ncols() as f64;
    let mut dx = dy * &gain;
    for ((mut row, xh), r) in dx.rows_mut().into_iter().zip(cache.xhat.rows()).zip(cache.rstd.iter()) {
        let m1 = row.sum() / n;
        let m2 = row.iter().zip(xh.iter()).map(|(a, b)| a * b).sum::<f64>() / n;
        Zip::from(&mut row).and(&xh).for_each(|d, &x| *d = r * (*d - m1 - x * m2));
    }
    (dx, dgain, dbias)
}

/// Adds a broadcast bias row.
pub fn add_bias(x: &mut Array2<f64>, b: ArrayView1<'_, f64>) {
    *x += &b;
}

/// `x W + b`.
pub fn affine(x: &Array2<f64>, w: ArrayView2<'_, f64>, b: ArrayView1<'_, f64>) -> Array2<f64> {
    let mut y = x.dot(&w);
    add_bias(&mut y, b);
    y
}

/// Accumulates weight and bias gradients of `x W + b`; returns `dx`.
pub fn affine_backward(
    x: &Array2<f64>,
    w: ArrayView2<'_, f64>,
    dy: &Array2<f64>,
    dw: &mut ndarray::ArrayViewMut2<'_, f64>,
    db: &mut ndarray::ArrayViewMut1<'_, f64>,
    need_dx: bool,
) -> Option<Array2<f64>> {
    ndarray::linalg::general_mat_mul(1.0, &x.t(), dy, 1.0, dw);
    *db += &dy.sum_axis(Axis(0));
    need_dx.then(|| dy.dot(&w.t()))
}

pub fn softmax_rows(x: &mut Array2<f64>) {
    for mut row in x.rows_mut() {
        let max = row.fold(f64::NEG_INFINITY, |a, &b| a.max(b));
        row.mapv_inplace(|v| (v - max).exp());
        let s = row.sum();
        row.mapv_inplace(|v| v / s);
    }
}

/// Inverted dropout mask: entries are 0 or `1 / (1 - p)`.
pub fn dropout_mask(rows: usize, cols: usize, p: f64, rng: &mut Rng) -> Array2<f64> {
    let keep = 1.0 / (1.0 - p);
    Array2::from_shape_simple_fn((rows, cols), || if rng.random::<f64>() < p { 0.0 } else { keep })
}
