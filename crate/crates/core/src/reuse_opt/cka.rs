//! Linear centered kernel alignment between activation matrices.

use ndarray::{Array2, ArrayView2, Axis};

use crate::error::{Error, Result};

fn center(x: ArrayView2<'_, f64>) -> Array2<f64> {
    let mean = x.mean_axis(Axis(0)).expect("non-empty rows");
    &x - &mean
}

/// Linear CKA of two `t × d` activation matrices, in `[0, 1]`.
///
/// Features are centered over tokens. A matrix with zero variance scores 0.
pub fn cka_score(a: ArrayView2<'_, f64>, b: ArrayView2<'_, f64>) -> Result<f64> {
    if a.nrows() != b.nrows() {
        return Err(Error::Shape(format!(
            "cka needs the same token count, got {} and {}",
            a.nrows(),
            b.nrows()
        )));
    }
    if a.nrows() == 0 || a.ncols() == 0 || b.ncols() == 0 {
        return Err(Error::Empty("cka of an empty matrix".into()));
    }
    let a = center(a);
    let b = center(b);
    let cross = a.t().dot(&b);
    let aa = a.t().dot(&a);
    let bb = b.t().dot(&b);
    let norm_a = frob(&aa);
    let norm_b = frob(&bb);
    if norm_a == 0.0 || norm_b == 0.0 {
        log::warn!("cka: zero-variance activation matrix, score defined as 0");
        return Ok(0.0);
    }
    let hsic = cross.iter().map(|v| v * v).sum::<f64>();
    Ok((hsic / (norm_a * norm_b)).clamp(0.0, 1.0))
}

fn frob(m: &Array2<f64>) -> f64 {
    m.iter().map(|v| v * v).sum::<f64>().sqrt()
}

/// Pairwise CKA matrix over a list of activations.
pub fn cka_matrix(acts: &[Array2<f64>]) -> Result<Array2<f64>> {
    let n = acts.len();
    let mut m = Array2::zeros((n, n));
    for i in 0..n {
        m[[i, i]] = 1.0;
        for j in (i + 1)..n {
            let s = cka_score(acts[i].view(), acts[j].view())?;
            m[[i, j]] = s;
            m[[j, i]] = s;
        }
    }
    Ok(m)
}
