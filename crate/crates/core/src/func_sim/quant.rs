//! Uniform integer quantization of real matrices.

use ndarray::{Array2, ArrayView2};

use crate::error::{Error, Result};

/// Integer matrix with `real ≈ (value - zero_point) * scale`.
#[derive(Debug, Clone, PartialEq)]
pub struct QuantizedMatrix {
    pub values: Array2<i64>,
    pub scale: f64,
    pub zero_point: i64,
    pub bits: u32,
    /// Values are symmetric around zero rather than in `[0, 2^bits - 1]`.
    pub signed: bool,
}

fn check_bits(bits: u32) -> Result<()> {
    if bits == 0 || bits > 31 {
        return Err(Error::InvalidParameter(format!(
            "quantization width must be 1..=31 bits, got {bits}"
        )));
    }
    Ok(())
}

impl QuantizedMatrix {
    /// Raw levels with unit scale, e.g. cell levels or already-quantized inputs.
    pub fn from_levels(values: Array2<i64>, bits: u32, signed: bool) -> Result<Self> {
        check_bits(bits)?;
        let q = Self {
            values,
            scale: 1.0,
            zero_point: 0,
            bits,
            signed,
        };
        let (lo, hi) = q.range();
        if q.values.iter().any(|&v| v < lo || v > hi) {
            return Err(Error::InvalidParameter(format!(
                "levels outside [{lo}, {hi}] for {bits}-bit values"
            )));
        }
        Ok(q)
    }

    /// Asymmetric quantization onto `[0, 2^bits - 1]`.
    pub fn quantize_unsigned(x: ArrayView2<'_, f64>, bits: u32) -> Result<Self> {
        check_bits(bits)?;
        let qmax = ((1i64 << bits) - 1) as f64;
        let lo = x.iter().copied().fold(f64::INFINITY, f64::min).min(0.0);
        let hi = x.iter().copied().fold(f64::NEG_INFINITY, f64::max).max(0.0);
        let scale = if hi > lo { (hi - lo) / qmax } else { 1.0 };
        let zero_point = (-lo / scale).round().clamp(0.0, qmax) as i64;
        let values = x.mapv(|v| ((v / scale).round() + zero_point as f64).clamp(0.0, qmax) as i64);
        Ok(Self {
            values,
            scale,
            zero_point,
            bits,
            signed: false,
        })
    }

    /// Symmetric quantization onto `[-(2^(bits-1) - 1), 2^(bits-1) - 1]`.
    pub fn quantize_symmetric(x: ArrayView2<'_, f64>, bits: u32) -> Result<Self> {
        check_bits(bits)?;
        if bits < 2 {
            return Err(Error::InvalidParameter("signed quantization needs >= 2 bits".into()));
        }
        let qmax = ((1i64 << (bits - 1)) - 1) as f64;
        let amax = x.iter().fold(0.0f64, |m, v| m.max(v.abs()));
        let scale = if amax > 0.0 { amax / qmax } else { 1.0 };
        let values = x.mapv(|v| (v / scale).round().clamp(-qmax, qmax) as i64);
        Ok(Self {
            values,
            scale,
            zero_point: 0,
            bits,
            signed: true,
        })
    }

    pub fn range(&self) -> (i64, i64) {
        if self.signed {
            let m = (1i64 << (self.bits - 1)) - 1;
            (-m, m)
        } else {
            (0, (1i64 << self.bits) - 1)
        }
    }

    pub fn dequantize(&self) -> Array2<f64> {
        self.values.mapv(|v| (v - self.zero_point) as f64 * self.scale)
    }

    pub fn dim(&self) -> (usize, usize) {
        self.values.dim()
    }
}
