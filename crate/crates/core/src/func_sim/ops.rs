//! Dense building blocks of an encoder forward pass.

use ndarray::{concatenate, s, Array1, Array2, ArrayView2, Axis};
use statrs::function::erf::erf;

use crate::error::{Error, Result};

/// Max-subtracted softmax.
pub fn stable_softmax(x: &[f64]) -> Result<Vec<f64>> {
    if x.is_empty() {
        return Err(Error::Empty("softmax of an empty vector".into()));
    }
    let max = x.iter().copied().fold(f64::NEG_INFINITY, f64::max);
    let e: Vec<f64> = x.iter().map(|v| (v - max).exp()).collect();
    let sum: f64 = e.iter().sum();
    Ok(e.into_iter().map(|v| v / sum).collect())
}

pub fn softmax_rows(x: ArrayView2<'_, f64>) -> Result<Array2<f64>> {
    let mut out = Array2::zeros(x.dim());
    for (i, row) in x.rows().into_iter().enumerate() {
        let p = stable_softmax(&row.to_vec())?;
        out.row_mut(i).assign(&Array1::from(p));
    }
    Ok(out)
}

/// Row-wise normalisation to zero mean and unit variance, no affine terms.
pub fn layer_norm(x: ArrayView2<'_, f64>, eps: f64) -> Array2<f64> {
    let mut out = x.to_owned();
    for mut row in out.rows_mut() {
        let n = row.len() as f64;
        let mean = row.sum() / n;
        let var = row.iter().map(|v| (v - mean).powi(2)).sum::<f64>() / n;
        let inv = 1.0 / (var + eps).sqrt();
        row.mapv_inplace(|v| (v - mean) * inv);
    }
    out
}

/// Exact (erf-based) GeLU.
pub fn gelu(x: f64) -> f64 {
    0.5 * x * (1.0 + erf(x / std::f64::consts::SQRT_2))
}

/// Matrix products of an encoder, so attention can run exactly or on
/// simulated crossbars. `b` plays the role of the stationary operand.
pub trait MatmulEngine {
    fn scores(&mut self, q: ArrayView2<'_, f64>, k_t: ArrayView2<'_, f64>) -> Result<Array2<f64>>;
    fn weighted_sum(&mut self, s: ArrayView2<'_, f64>, v: ArrayView2<'_, f64>) -> Result<Array2<f64>>;
}

/// Plain floating-point products.
pub struct ExactMatmul;

impl MatmulEngine for ExactMatmul {
    fn scores(&mut self, q: ArrayView2<'_, f64>, k_t: ArrayView2<'_, f64>) -> Result<Array2<f64>> {
        Ok(q.dot(&k_t))
    }

    fn weighted_sum(&mut self, s: ArrayView2<'_, f64>, v: ArrayView2<'_, f64>) -> Result<Array2<f64>> {
        Ok(s.dot(&v))
    }
}

/// Multi-head attention over already-projected `q`, `k`, `v` (each `t × d`),
/// heads concatenated back to `t × d`. Scores are scaled by `1/sqrt(d)`.
pub fn attention_forward(
    q: ArrayView2<'_, f64>,
    k: ArrayView2<'_, f64>,
    v: ArrayView2<'_, f64>,
    n_heads: usize,
    engine: &mut dyn MatmulEngine,
) -> Result<Array2<f64>> {
    if q.dim() != k.dim() || q.dim() != v.dim() {
        return Err(Error::Shape(format!(
            "q {:?}, k {:?}, v {:?} must share one shape",
            q.dim(),
            k.dim(),
            v.dim()
        )));
    }
    let (_, d) = q.dim();
    if n_heads == 0 || d % n_heads != 0 {
        return Err(Error::Shape(format!("{n_heads} heads do not divide d={d}")));
    }
    let dh = d / n_heads;
    let scale = 1.0 / (d as f64).sqrt();
    let mut heads = Vec::with_capacity(n_heads);
    for h in 0..n_heads {
        let cols = s![.., h * dh..(h + 1) * dh];
        let k_t = k.slice(cols).t().to_owned();
        let scores = engine.scores(q.slice(cols), k_t.view())? * scale;
        let p = softmax_rows(scores.view())?;
        heads.push(engine.weighted_sum(p.view(), v.slice(cols))?);
    }
    let views: Vec<_> = heads.iter().map(|h| h.view()).collect();
    concatenate(Axis(1), &views).map_err(|e| Error::Shape(e.to_string()))
}

/// Transformation block: LayerNorm, `d × d` affine, GeLU.
pub fn tb_forward(
    attn: ArrayView2<'_, f64>,
    w: ArrayView2<'_, f64>,
    b: &Array1<f64>,
    linear: &mut dyn FnMut(ArrayView2<'_, f64>, ArrayView2<'_, f64>) -> Result<Array2<f64>>,
) -> Result<Array2<f64>> {
    let d = attn.ncols();
    if w.dim() != (d, d) || b.len() != d {
        return Err(Error::Shape(format!(
            "transformation block expects {d}x{d} weights and {d} biases, got {:?} and {}",
            w.dim(),
            b.len()
        )));
    }
    let normed = layer_norm(attn, 1e-6);
    let y = linear(normed.view(), w)? + b;
    Ok(y.mapv(gelu))
}

#[cfg(test)]
mod tests {
    use super::*;
    use ndarray::array;

    fn naive_softmax(x: &[f64]) -> Vec<f64> {
        let s: f64 = x.iter().map(|v| v.exp()).sum();
        x.iter().map(|v| v.exp() / s).collect()
    }

    #[test]
    fn softmax_cases() {
        let p = stable_softmax(&[2.0; 5]).unwrap();
        assert!(p.iter().all(|&v| (v - 0.2).abs() < 1e-15));
        let x = [0.3, -1.2, 2.5, 0.0, 4.1];
        for (a, b) in stable_softmax(&x).unwrap().iter().zip(naive_softmax(&x)) {
            assert!((a - b).abs() / b < 1e-12);
        }
        let big = stable_softmax(&[1e4, 0.0, 1e4 - 1.0]).unwrap();
        assert!(big.iter().all(|v| v.is_finite()));
        assert!((big.iter().sum::<f64>() - 1.0).abs() < 1e-12);
        assert!(stable_softmax(&[]).is_err());
    }

    #[test]
    fn gelu_reference_points() {
        assert_eq!(gelu(0.0), 0.0);
        assert!((gelu(1.0) - 0.841_344_746).abs() < 1e-8);
        assert!((gelu(-1.0) + 0.158_655_254).abs() < 1e-8);
    }

    #[test]
    fn layer_norm_statistics() {
        let x = array![[1.0, 2.0, 3.0, 10.0], [-4.0, 0.5, 0.5, 7.0]];
        let y = layer_norm(x.view(), 1e-12);
        for row in y.rows() {
            let m = row.mean().unwrap();
            let v = row.mapv(|a| (a - m).powi(2)).mean().unwrap();
            assert!(m.abs() < 1e-12 && (v - 1.0).abs() < 1e-9);
        }
    }

    #[test]
    fn uniform_attention_averages_v() {
        let t = 4;
        let q = Array2::zeros((t, 4));
        let k = Array2::zeros((t, 4));
        let v = Array2::from_shape_fn((t, 4), |(i, j)| (i * 4 + j) as f64);
        let out = attention_forward(q.view(), k.view(), v.view(), 2, &mut ExactMatmul).unwrap();
        let mean = v.mean_axis(Axis(0)).unwrap();
        for row in out.rows() {
            for (a, b) in row.iter().zip(mean.iter()) {
                assert!((a - b).abs() < 1e-12);
            }
        }
        assert!(attention_forward(q.view(), k.view(), v.view(), 3, &mut ExactMatmul).is_err());
    }

    #[test]
    fn tb_identity_is_gelu_of_layer_norm() {
        let x = array![[0.1, -2.0, 3.0], [1.0, 1.5, -0.5]];
        let w = Array2::eye(3);
        let b = Array1::zeros(3);
        let mut dense = |a: ArrayView2<'_, f64>, w: ArrayView2<'_, f64>| Ok(a.dot(&w));
        let y = tb_forward(x.view(), w.view(), &b, &mut dense).unwrap();
        assert_eq!(y.dim(), x.dim());
        assert_eq!(y, layer_norm(x.view(), 1e-6).mapv(gelu));
        let bad = Array2::eye(2);
        assert!(tb_forward(x.view(), bad.view(), &b, &mut dense).is_err());
    }
}
