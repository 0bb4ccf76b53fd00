//! Layer-to-crossbar mapping with weight bit-slicing and tile accounting.

use std::collections::BTreeMap;

use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};
use crate::workload::{LayerKind, LayerSpec, ModelSpec};

#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash, Serialize, Deserialize)]
#[serde(rename_all = "lowercase")]
pub enum DeviceKind {
    Fefet,
    Sram,
}

impl DeviceKind {
    pub fn as_str(self) -> &'static str {
        match self {
            DeviceKind::Fefet => "fefet",
            DeviceKind::Sram => "sram",
        }
    }
}

/// Per-crossbar device constants. Energies in pJ, delays in µs, area in mm².
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct DeviceParams {
    pub kind: DeviceKind,
    pub bits_per_cell: u32,
    pub e_read_pj: f64,
    pub e_write_pj: f64,
    pub d_read_us: f64,
    pub d_write_us: f64,
    pub area_mm2: f64,
    pub read_var: f64,
    pub write_var: f64,
    pub r_on_ohm: f64,
    pub r_off_ohm: f64,
}

impl DeviceParams {
    pub fn validate(&self) -> Result<()> {
        let positive = [
            ("e_read_pj", self.e_read_pj),
            ("e_write_pj", self.e_write_pj),
            ("d_read_us", self.d_read_us),
            ("d_write_us", self.d_write_us),
            ("area_mm2", self.area_mm2),
            ("r_on_ohm", self.r_on_ohm),
            ("r_off_ohm", self.r_off_ohm),
        ];
        for (name, v) in positive {
            if !(v.is_finite() && v > 0.0) {
                return Err(Error::InvalidParameter(format!(
                    "device {}: {name}={v} must be positive",
                    self.kind.as_str()
                )));
            }
        }
        if self.bits_per_cell == 0 {
            return Err(Error::InvalidParameter("bits_per_cell must be >= 1".into()));
        }
        for (name, v) in [("read_var", self.read_var), ("write_var", self.write_var)] {
            if !(0.0..1.0).contains(&v) {
                return Err(Error::InvalidParameter(format!(
                    "{name}={v} must lie in [0, 1)"
                )));
            }
        }
        if self.r_off_ohm <= self.r_on_ohm {
            return Err(Error::InvalidParameter("r_off must exceed r_on".into()));
        }
        Ok(())
    }

    /// Conductance range `(G_min, G_max)` in siemens.
    pub fn conductance_range(&self) -> (f64, f64) {
        (1.0 / self.r_off_ohm, 1.0 / self.r_on_ohm)
    }

    pub fn slice_factor(&self, weight_bits: u32) -> u64 {
        weight_bits.div_ceil(self.bits_per_cell) as u64
    }
}

/// Crossbar / PE / tile hierarchy.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct TileConfig {
    pub xbar_size: usize,
    pub n_x_pe: usize,
    pub n_pe_tile: usize,
    pub adc_bits: u32,
}

impl TileConfig {
    pub fn validate(&self) -> Result<()> {
        if self.xbar_size == 0 || self.n_x_pe == 0 || self.n_pe_tile == 0 || self.adc_bits == 0 {
            return Err(Error::InvalidParameter(
                "tile config entries must be >= 1".into(),
            ));
        }
        Ok(())
    }

    pub fn crossbars_per_tile(&self) -> u64 {
        (self.n_x_pe * self.n_pe_tile) as u64
    }
}

/// Mapping conventions that are not pinned down by the crossbar-count formula.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
pub struct MappingOptions {
    /// Round each layer's area up to whole tiles.
    #[serde(default)]
    pub tile_padding: bool,
    /// Count separate positive/negative columns for signed weights.
    #[serde(default)]
    pub differential_columns: bool,
}

impl Default for MappingOptions {
    fn default() -> Self {
        Self {
            tile_padding: false,
            differential_columns: false,
        }
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
pub struct MappingResult {
    pub n_xbar_logical: u64,
    pub slice_factor: u64,
    pub n_xbar_physical: u64,
    pub n_tiles: u64,
}

pub fn crossbar_count(in_dim: usize, out_dim: usize, xbar_size: usize) -> u64 {
    (in_dim.div_ceil(xbar_size) * out_dim.div_ceil(xbar_size)) as u64
}

/// Crossbars for one instance of `layer` (one head for per-head matmuls).
pub fn crossbars_for_layer(
    layer: &LayerSpec,
    tiles: &TileConfig,
    dev: &DeviceParams,
    weight_bits: u32,
) -> Result<MappingResult> {
    crossbars_for_layer_with(layer, tiles, dev, weight_bits, MappingOptions::default())
}

pub fn crossbars_for_layer_with(
    layer: &LayerSpec,
    tiles: &TileConfig,
    dev: &DeviceParams,
    weight_bits: u32,
    opts: MappingOptions,
) -> Result<MappingResult> {
    if !layer.kind.is_mappable() {
        return Err(Error::NotMappable(layer.kind.to_string()));
    }
    let out_cols = if opts.differential_columns {
        2 * layer.out_dim
    } else {
        layer.out_dim
    };
    let logical = crossbar_count(layer.in_dim, out_cols, tiles.xbar_size);
    let slice = dev.slice_factor(weight_bits);
    let physical = logical * slice;
    Ok(MappingResult {
        n_xbar_logical: logical,
        slice_factor: slice,
        n_xbar_physical: physical,
        n_tiles: physical.div_ceil(tiles.crossbars_per_tile()),
    })
}

/// Physical crossbars for all copies of a layer, padded to whole tiles if requested.
pub fn layer_area_crossbars(map: &MappingResult, copies: usize, tiles: &TileConfig, pad: bool) -> u64 {
    let total = map.n_xbar_physical * copies as u64;
    if pad {
        total.div_ceil(tiles.crossbars_per_tile()) * tiles.crossbars_per_tile()
    } else {
        total
    }
}

/// Which device implements each mappable layer kind.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct DeviceAssignment {
    devices: BTreeMap<LayerKind, DeviceParams>,
}

impl DeviceAssignment {
    pub fn uniform(dev: DeviceParams) -> Self {
        Self {
            devices: LayerKind::ALL
                .iter()
                .filter(|k| k.is_mappable())
                .map(|&k| (k, dev.clone()))
                .collect(),
        }
    }

    /// Dynamic matmuls on `matmul_dev`, every static-weight layer on `weight_dev`.
    pub fn hybrid(weight_dev: DeviceParams, matmul_dev: DeviceParams) -> Self {
        let mut a = Self::uniform(weight_dev);
        a.set(LayerKind::MatmulQkt, matmul_dev.clone());
        a.set(LayerKind::MatmulSv, matmul_dev);
        a
    }

    pub fn set(&mut self, kind: LayerKind, dev: DeviceParams) {
        if kind.is_mappable() {
            self.devices.insert(kind, dev);
        }
    }

    pub fn device(&self, kind: LayerKind) -> Result<&DeviceParams> {
        self.devices
            .get(&kind)
            .ok_or_else(|| Error::NotMappable(kind.to_string()))
    }

    pub fn validate(&self) -> Result<()> {
        for k in LayerKind::ALL.iter().filter(|k| k.is_mappable()) {
            self.device(*k)?.validate()?;
        }
        Ok(())
    }

    /// Short label such as `fefet` or `fefet+sram`.
    pub fn label(&self) -> String {
        let weights = self.devices.get(&LayerKind::FcQ).map(|d| d.kind);
        let matmul = self.devices.get(&LayerKind::MatmulQkt).map(|d| d.kind);
        match (weights, matmul) {
            (Some(w), Some(m)) if w == m => w.as_str().to_string(),
            (Some(w), Some(m)) => format!("{}+{}", w.as_str(), m.as_str()),
            _ => "unassigned".into(),
        }
    }
}

pub fn model_crossbar_total(
    model: &ModelSpec,
    tiles: &TileConfig,
    devices: &DeviceAssignment,
) -> Result<u64> {
    model_crossbar_total_with(model, tiles, devices, MappingOptions::default())
}

/// Sum of physical crossbars over every mappable layer and copy.
pub fn model_crossbar_total_with(
    model: &ModelSpec,
    tiles: &TileConfig,
    devices: &DeviceAssignment,
    opts: MappingOptions,
) -> Result<u64> {
    let mut total = 0;
    for (_, layer) in model.layers().filter(|(_, l)| l.kind.is_mappable()) {
        let dev = devices.device(layer.kind)?;
        let m = crossbars_for_layer_with(layer, tiles, dev, model.weight_bits, opts)?;
        total += layer_area_crossbars(&m, layer.copies, tiles, opts.tile_padding);
    }
    Ok(total)
}

/// Eq.-style logical count (no slicing, no padding), summed over copies.
pub fn model_crossbar_total_logical(model: &ModelSpec, tiles: &TileConfig) -> u64 {
    model
        .layers()
        .filter(|(_, l)| l.kind.is_mappable())
        .map(|(_, l)| crossbar_count(l.in_dim, l.out_dim, tiles.xbar_size) * l.copies as u64)
        .sum()
}
