//! Conductance-level crossbar model: programming with write variation,
//! bit-serial reads with read variation and a uniform flash ADC.

use ndarray::{s, Array2, ArrayView2, Zip};
use rand::SeedableRng;
use rand_chacha::ChaCha8Rng;
use rand_distr::{Distribution, StandardNormal};
use serde::{Deserialize, Serialize};

use super::quant::QuantizedMatrix;
use crate::error::{Error, Result};
use crate::xbar_map::DeviceParams;

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "lowercase")]
pub enum NoiseForm {
    /// `G' = G (1 + e)`, e ~ N(0, var).
    Multiplicative,
    /// `G' = G + e G_max`, e ~ N(0, var).
    Additive,
}

/// Variation and converter settings for one device type.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct NoiseModel {
    pub read_var: f64,
    pub write_var: f64,
    pub adc_bits: u32,
    pub seed: u64,
    pub form: NoiseForm,
}

impl NoiseModel {
    pub fn ideal(adc_bits: u32) -> Self {
        Self {
            read_var: 0.0,
            write_var: 0.0,
            adc_bits,
            seed: 0,
            form: NoiseForm::Multiplicative,
        }
    }

    pub fn for_device(dev: &DeviceParams, adc_bits: u32, seed: u64) -> Self {
        Self {
            read_var: dev.read_var,
            write_var: dev.write_var,
            adc_bits,
            seed,
            form: NoiseForm::Multiplicative,
        }
    }

    /// Independent random stream `stream` derived from the seed.
    pub fn rng(&self, stream: u64) -> ChaCha8Rng {
        let mut rng = ChaCha8Rng::seed_from_u64(self.seed);
        rng.set_stream(stream);
        rng
    }

    pub fn is_noisy(&self) -> bool {
        self.read_var > 0.0 || self.write_var > 0.0
    }
}

/// Largest ADC output for a column of `rows` cells holding up to `max_level`.
pub fn column_full_scale(rows: usize, max_level: i64) -> u64 {
    rows as u64 * max_level as u64
}

/// Power-of-two ADC step covering `[0, full_scale]` with `adc_bits` codes.
pub fn adc_step(full_scale: u64, adc_bits: u32) -> u64 {
    let needed = 64 - full_scale.leading_zeros();
    if adc_bits >= needed {
        1
    } else {
        1u64 << (needed - adc_bits)
    }
}

/// Quantizes an analog column sum (in cell-level units).
pub fn adc_quantize(x: f64, full_scale: u64, adc_bits: u32) -> i64 {
    let step = adc_step(full_scale, adc_bits);
    let top = full_scale.min(((1u64 << adc_bits.min(63)) - 1).saturating_mul(step)) as f64;
    let step = step as f64;
    // ties to even: noiseless sums are integers and would otherwise always round up
    ((x / step).round_ties_even() * step).clamp(0.0, top) as i64
}

/// One programmed crossbar. `levels` is the ideal per-cell level,
/// `conductances` what was actually programmed.
#[derive(Debug, Clone, PartialEq)]
pub struct CrossbarState {
    pub levels: Array2<i64>,
    pub conductances: Array2<f64>,
    pub programmed_with_noise: bool,
    pub device: DeviceParams,
    pub xbar_size: usize,
}

fn gaussian(rng: &mut ChaCha8Rng) -> f64 {
    StandardNormal.sample(rng)
}

/// Writes cell levels (`0..2^bits_per_cell`) into a crossbar.
pub fn program_crossbar(
    levels: &QuantizedMatrix,
    dev: &DeviceParams,
    xbar_size: usize,
    noise: &NoiseModel,
    rng: &mut ChaCha8Rng,
) -> Result<CrossbarState> {
    let (rows, cols) = levels.dim();
    if rows > xbar_size || cols > xbar_size {
        return Err(Error::Shape(format!(
            "{rows}x{cols} tile does not fit a {xbar_size}x{xbar_size} crossbar"
        )));
    }
    let max_level = (1i64 << dev.bits_per_cell) - 1;
    if levels.values.iter().any(|&v| v < 0 || v > max_level) {
        return Err(Error::InvalidParameter(format!(
            "cell levels must lie in [0, {max_level}] for {} bits per cell",
            dev.bits_per_cell
        )));
    }
    let (g_min, g_max) = dev.conductance_range();
    let dg = (g_max - g_min) / max_level as f64;
    let noisy = noise.write_var > 0.0;
    let conductances = levels.values.mapv(|l| {
        let g = g_min + l as f64 * dg;
        if !noisy {
            return g;
        }
        let e = noise.write_var * gaussian(rng);
        let g = match noise.form {
            NoiseForm::Multiplicative => g * (1.0 + e),
            NoiseForm::Additive => g + e * g_max,
        };
        g.clamp(g_min, g_max)
    });
    Ok(CrossbarState {
        levels: levels.values.clone(),
        conductances,
        programmed_with_noise: noisy,
        device: dev.clone(),
        xbar_size,
    })
}

impl CrossbarState {
    pub fn max_level(&self) -> i64 {
        (1i64 << self.device.bits_per_cell) - 1
    }

    fn level_step(&self) -> f64 {
        let (g_min, g_max) = self.device.conductance_range();
        (g_max - g_min) / self.max_level() as f64
    }

    /// Column currents for binary row voltages `plane` (tokens × rows).
    ///
    /// Per-cell read variation makes every column a sum of independent
    /// Gaussians, so it is drawn once per column with the summed variance.
    pub fn column_currents(
        &self,
        plane: ArrayView2<'_, f64>,
        noise: &NoiseModel,
        rng: &mut ChaCha8Rng,
    ) -> Result<Array2<f64>> {
        if plane.ncols() != self.conductances.nrows() {
            return Err(Error::Shape(format!(
                "input has {} rows of voltages, crossbar has {} rows",
                plane.ncols(),
                self.conductances.nrows()
            )));
        }
        let mut current = plane.dot(&self.conductances);
        if noise.read_var > 0.0 {
            let var = match noise.form {
                NoiseForm::Multiplicative => plane.dot(&self.conductances.mapv(|g| g * g)),
                NoiseForm::Additive => {
                    let g_max = self.device.conductance_range().1;
                    let active = plane.sum_axis(ndarray::Axis(1));
                    Array2::from_shape_fn(current.dim(), |(t, _)| active[t] * g_max * g_max)
                }
            };
            Zip::from(&mut current).and(&var).for_each(|i, &v| {
                *i += noise.read_var * v.sqrt() * gaussian(rng);
            });
        }
        Ok(current)
    }

    /// ADC codes (cell-level units) of every column for one input bit-plane.
    /// The `G_min` offset of the active rows is removed before conversion.
    pub fn read_codes(
        &self,
        plane: ArrayView2<'_, f64>,
        noise: &NoiseModel,
        rng: &mut ChaCha8Rng,
    ) -> Result<Array2<i64>> {
        let current = self.column_currents(plane, noise, rng)?;
        let g_min = self.device.conductance_range().0;
        let dg = self.level_step();
        let active = plane.sum_axis(ndarray::Axis(1));
        let fs = column_full_scale(self.xbar_size, self.max_level());
        Ok(Array2::from_shape_fn(current.dim(), |(t, j)| {
            let x = (current[[t, j]] - g_min * active[t]) / dg;
            adc_quantize(x, fs, noise.adc_bits)
        }))
    }
}

/// A signed weight matrix spread over crossbars: tiles of `xbar_size`,
/// magnitude bit-slices, and separate positive / negative arrays.
#[derive(Debug, Clone)]
pub struct MappedMatrix {
    pub weights: QuantizedMatrix,
    pub slices: u32,
    pub bits_per_cell: u32,
    pub xbar_size: usize,
    pub tiles: Vec<MappedTile>,
}

#[derive(Debug, Clone)]
pub struct MappedTile {
    pub row0: usize,
    pub col0: usize,
    pub slice: u32,
    pub negative: bool,
    pub xbar: CrossbarState,
}

/// Programs a signed quantized matrix (`in × out`) onto crossbars.
pub fn program_matrix(
    weights: &QuantizedMatrix,
    dev: &DeviceParams,
    xbar_size: usize,
    noise: &NoiseModel,
    rng: &mut ChaCha8Rng,
) -> Result<MappedMatrix> {
    if !weights.signed {
        return Err(Error::InvalidParameter("crossbar weights must be symmetric-quantized".into()));
    }
    if xbar_size == 0 {
        return Err(Error::InvalidParameter("xbar_size must be >= 1".into()));
    }
    let bpc = dev.bits_per_cell;
    let slices = weights.bits.div_ceil(bpc);
    let mask = (1i64 << bpc) - 1;
    let (rows, cols) = weights.dim();
    let mut tiles = Vec::new();
    for row0 in (0..rows).step_by(xbar_size) {
        for col0 in (0..cols).step_by(xbar_size) {
            let block = weights
                .values
                .slice(s![row0..(row0 + xbar_size).min(rows), col0..(col0 + xbar_size).min(cols)]);
            for negative in [false, true] {
                let mag = block.mapv(|w| if (w < 0) == negative { w.abs() } else { 0 });
                for slice in 0..slices {
                    let lv = mag.mapv(|m| (m >> (slice * bpc)) & mask);
                    let lv = QuantizedMatrix::from_levels(lv, bpc, false)?;
                    let xbar = program_crossbar(&lv, dev, xbar_size, noise, rng)?;
                    tiles.push(MappedTile {
                        row0,
                        col0,
                        slice,
                        negative,
                        xbar,
                    });
                }
            }
        }
    }
    Ok(MappedMatrix {
        weights: weights.clone(),
        slices,
        bits_per_cell: bpc,
        xbar_size,
        tiles,
    })
}

/// Integer product `input.values · weights.values` computed one input
/// bit-plane at a time, with ADC conversion per plane, crossbar and slice.
pub fn mvm_bitserial(
    m: &MappedMatrix,
    input: &QuantizedMatrix,
    noise: &NoiseModel,
    rng: &mut ChaCha8Rng,
) -> Result<Array2<i64>> {
    if input.signed {
        return Err(Error::InvalidParameter("bit-serial inputs must be unsigned".into()));
    }
    let (t, in_dim) = input.dim();
    let (w_in, w_out) = m.weights.dim();
    if in_dim != w_in {
        return Err(Error::Shape(format!(
            "input has {in_dim} features, weight matrix expects {w_in}"
        )));
    }
    let mut acc = Array2::<i64>::zeros((t, w_out));
    for bit in 0..input.bits {
        let plane = input.values.mapv(|v| ((v >> bit) & 1) as f64);
        for tile in &m.tiles {
            let (r, c) = tile.xbar.levels.dim();
            let sub = plane.slice(s![.., tile.row0..tile.row0 + r]);
            let codes = tile.xbar.read_codes(sub, noise, rng)?;
            let shift = bit + tile.slice * m.bits_per_cell;
            let sign = if tile.negative { -1 } else { 1 };
            let mut out = acc.slice_mut(s![.., tile.col0..tile.col0 + c]);
            Zip::from(&mut out).and(&codes).for_each(|a, &v| *a += sign * (v << shift));
        }
    }
    Ok(acc)
}

impl MappedMatrix {
    pub fn in_dim(&self) -> usize {
        self.weights.dim().0
    }

    pub fn out_dim(&self) -> usize {
        self.weights.dim().1
    }

    /// Real-valued `x · W` through the crossbars. Signed inputs are split into
    /// positive and negative magnitude passes, subtracted digitally.
    pub fn forward(
        &self,
        x: ArrayView2<'_, f64>,
        input_bits: u32,
        noise: &NoiseModel,
        rng: &mut ChaCha8Rng,
    ) -> Result<Array2<f64>> {
        let qx = QuantizedMatrix::quantize_symmetric(x, input_bits)?;
        let mag_bits = input_bits - 1;
        let pos = QuantizedMatrix::from_levels(qx.values.mapv(|v| v.max(0)), mag_bits, false)?;
        let neg = QuantizedMatrix::from_levels(qx.values.mapv(|v| (-v).max(0)), mag_bits, false)?;
        let mut acc = mvm_bitserial(self, &pos, noise, rng)?;
        if neg.values.iter().any(|&v| v != 0) {
            acc -= &mvm_bitserial(self, &neg, noise, rng)?;
        }
        let scale = qx.scale * self.weights.scale;
        Ok(acc.mapv(|v| v as f64 * scale))
    }
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::presets;
    use ndarray::Array2;
    use rand::Rng;

    #[test]
    fn adc_steps() {
        assert_eq!(adc_step(192, 6), 4);
        assert_eq!(adc_step(192, 8), 1);
        assert_eq!(adc_step(64, 6), 2);
        assert_eq!(adc_quantize(5.0, 192, 6), 4);
        assert_eq!(adc_quantize(6.1, 192, 6), 8);
        assert_eq!(adc_quantize(6.0, 192, 6), 8);
        assert_eq!(adc_quantize(2.0, 192, 6), 0);
        assert_eq!(adc_quantize(500.0, 192, 8), 192);
        assert_eq!(adc_quantize(-3.0, 192, 8), 0);
    }

    #[test]
    fn sram_programs_ideal_and_zero_is_gmin() {
        let sram = presets::device("sram").unwrap();
        let noise = NoiseModel::for_device(&sram, 6, 1);
        let mut rng = noise.rng(0);
        let lv = QuantizedMatrix::from_levels(Array2::from_elem((4, 4), 1), 1, false).unwrap();
        let x = program_crossbar(&lv, &sram, 64, &noise, &mut rng).unwrap();
        let (g_min, g_max) = sram.conductance_range();
        assert!(x.conductances.iter().all(|&g| g == g_max));
        assert!(!x.programmed_with_noise);

        let fefet = presets::device("fefet").unwrap();
        let zero = QuantizedMatrix::from_levels(Array2::zeros((3, 3)), 2, false).unwrap();
        let x = program_crossbar(&zero, &fefet, 64, &NoiseModel::ideal(6), &mut rng).unwrap();
        let g_min_f = fefet.conductance_range().0;
        assert!(x.conductances.iter().all(|&g| g == g_min_f));
        // write noise only pushes a zero cell upward, never below the floor
        let noisy = program_crossbar(&zero, &fefet, 64, &NoiseModel::for_device(&fefet, 6, 1), &mut rng).unwrap();
        assert!(noisy.conductances.iter().all(|&g| g >= g_min_f));
        assert_eq!(g_min, g_min_f);
    }

    #[test]
    fn oversize_tile_rejected() {
        let fefet = presets::device("fefet").unwrap();
        let lv = QuantizedMatrix::from_levels(Array2::zeros((65, 2)), 2, false).unwrap();
        let noise = NoiseModel::ideal(8);
        assert!(program_crossbar(&lv, &fefet, 64, &noise, &mut noise.rng(0)).is_err());
    }

    fn exact(x: &Array2<i64>, w: &Array2<i64>) -> Array2<i64> {
        let (t, n) = x.dim();
        let m = w.ncols();
        let mut out = Array2::zeros((t, m));
        for a in 0..t {
            for j in 0..m {
                out[[a, j]] = (0..n).map(|i| x[[a, i]] * w[[i, j]]).sum();
            }
        }
        out
    }

    fn random_operands(rng: &mut ChaCha8Rng, t: usize, n: usize, m: usize) -> (QuantizedMatrix, QuantizedMatrix) {
        let x = Array2::from_shape_fn((t, n), |_| rng.random_range(0..256i64));
        let w = Array2::from_shape_fn((n, m), |_| rng.random_range(-127..128i64));
        (
            QuantizedMatrix::from_levels(x, 8, false).unwrap(),
            QuantizedMatrix::from_levels(w, 8, true).unwrap(),
        )
    }

    #[test]
    fn lossless_regime_is_exact_on_odd_shapes() {
        let fefet = presets::device("fefet").unwrap();
        let noise = NoiseModel::ideal(8);
        let mut rng = ChaCha8Rng::seed_from_u64(3);
        for (t, n, m) in [(3, 70, 5), (2, 64, 129), (1, 1, 1)] {
            let (x, w) = random_operands(&mut rng, t, n, m);
            let mapped = program_matrix(&w, &fefet, 64, &noise, &mut rng).unwrap();
            let got = mvm_bitserial(&mapped, &x, &noise, &mut rng).unwrap();
            assert_eq!(got, exact(&x.values, &w.values));
        }
    }

    #[test]
    fn low_adc_error_is_bounded() {
        // each (plane, slice, sign, column tile) conversion is off by at most
        // half a step, weighted by its shift
        let fefet = presets::device("fefet").unwrap();
        let noise = NoiseModel::ideal(6);
        let mut rng = ChaCha8Rng::seed_from_u64(4);
        let (x, w) = random_operands(&mut rng, 4, 64, 64);
        let mapped = program_matrix(&w, &fefet, 64, &noise, &mut rng).unwrap();
        let got = mvm_bitserial(&mapped, &x, &noise, &mut rng).unwrap();
        let want = exact(&x.values, &w.values);
        let half_step = adc_step(column_full_scale(64, 3), 6) as f64 / 2.0;
        let mut bound = 0.0;
        for bit in 0..8 {
            for slice in 0..mapped.slices {
                bound += 2.0 * half_step * f64::powi(2.0, (bit + slice * 2) as i32);
            }
        }
        let max_err = (&got - &want).iter().map(|e| e.abs()).max().unwrap() as f64;
        assert!(max_err <= bound, "{max_err} > {bound}");
        assert!(max_err > 0.0);
    }

    #[test]
    fn identity_tile_returns_input() {
        let fefet = presets::device("fefet").unwrap();
        let noise = NoiseModel::ideal(8);
        let mut rng = noise.rng(0);
        let w = QuantizedMatrix::from_levels(Array2::eye(16), 8, true).unwrap();
        let x = QuantizedMatrix::from_levels(
            Array2::from_shape_fn((2, 16), |(a, i)| (a * 16 + i) as i64 * 7 % 256),
            8,
            false,
        )
        .unwrap();
        let mapped = program_matrix(&w, &fefet, 64, &noise, &mut rng).unwrap();
        assert_eq!(mvm_bitserial(&mapped, &x, &noise, &mut rng).unwrap(), x.values);
    }

    #[test]
    fn real_forward_tracks_dense_product() {
        let fefet = presets::device("fefet").unwrap();
        let noise = NoiseModel::ideal(8);
        let mut rng = ChaCha8Rng::seed_from_u64(9);
        let x = Array2::from_shape_fn((5, 40), |_| rng.random_range(-1.0..2.0));
        let w = Array2::from_shape_fn((40, 12), |_| rng.random_range(-0.5..0.5));
        let qw = QuantizedMatrix::quantize_symmetric(w.view(), 8).unwrap();
        let mapped = program_matrix(&qw, &fefet, 64, &noise, &mut rng).unwrap();
        let got = mapped.forward(x.view(), 8, &noise, &mut rng).unwrap();
        let want = x.dot(&w);
        let err = (&got - &want).iter().fold(0.0f64, |m, e| m.max(e.abs()));
        assert!(err < 0.1, "{err}");
    }

    #[test]
    fn dimension_mismatch() {
        let fefet = presets::device("fefet").unwrap();
        let noise = NoiseModel::ideal(8);
        let mut rng = noise.rng(0);
        let (x, _) = random_operands(&mut rng, 2, 10, 3);
        let (_, w) = random_operands(&mut rng, 2, 11, 3);
        let mapped = program_matrix(&w, &fefet, 64, &noise, &mut rng).unwrap();
        assert!(matches!(mvm_bitserial(&mapped, &x, &noise, &mut rng), Err(Error::Shape(_))));
    }
}
