//! Analytic energy / delay / area model.
//!
//! Per-layer costs follow the crossbar read/write/area equations; the model
//! totals sum projection and MLP over every encoder and attention over the
//! encoders that compute their own attention. Units: layer energies in µJ,
//! layer delays in µs, model energy in mJ, model delay in ms, areas in mm².

mod baselines;
mod breakdown;

use std::collections::BTreeMap;

use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};
use crate::workload::{Block, EncoderSpec, LayerKind, LayerSpec, ModelSpec};
use crate::xbar_map::{
    crossbars_for_layer_with, layer_area_crossbars, DeviceAssignment, DeviceParams,
    MappingOptions, MappingResult, TileConfig,
};

pub use baselines::{
    apply_token_pruning, apply_weight_sharing, CostDelta, PredictorOverhead, TransformOutcome,
};
pub use breakdown::{breakdown, Breakdown};

const PJ_TO_UJ: f64 = 1e-6;
const NS_TO_US: f64 = 1e-3;

/// Per-operation constants of the digital softmax unit (pJ and ns).
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct SoftmaxUnitParams {
    pub e_select_pj: f64,
    pub e_exponent_pj: f64,
    pub e_div_pj: f64,
    pub d_select_ns: f64,
    pub d_exponent_ns: f64,
    pub d_div_ns: f64,
}

impl SoftmaxUnitParams {
    pub fn validate(&self) -> Result<()> {
        let all = [
            self.e_select_pj,
            self.e_exponent_pj,
            self.e_div_pj,
            self.d_select_ns,
            self.d_exponent_ns,
            self.d_div_ns,
        ];
        if all.iter().any(|v| !(v.is_finite() && *v >= 0.0)) {
            return Err(Error::InvalidParameter(
                "softmax unit constants must be finite and non-negative".into(),
            ));
        }
        Ok(())
    }

    pub fn energy_per_element_pj(&self) -> f64 {
        self.e_select_pj + self.e_exponent_pj + self.e_div_pj
    }

    pub fn delay_per_element_ns(&self) -> f64 {
        self.d_select_ns + self.d_exponent_ns + self.d_div_ns
    }

    /// Component values `(select, exponent, div)` with the given totals and split.
    pub fn from_totals(energy_pj: f64, delay_ns: f64, split: [f64; 3]) -> Self {
        let norm: f64 = split.iter().sum();
        let f = split.map(|s| s / norm);
        Self {
            e_select_pj: energy_pj * f[0],
            e_exponent_pj: energy_pj * f[1],
            e_div_pj: energy_pj * f[2],
            d_select_ns: delay_ns * f[0],
            d_exponent_ns: delay_ns * f[1],
            d_div_ns: delay_ns * f[2],
        }
    }
}

/// How transformation-block costs enter the model totals.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "lowercase")]
pub enum TbAccounting {
    /// Totals use only projection, MLP and attention terms; TB costs are not charged.
    Excluded,
    /// Energy and area charged; delay hidden behind the work scheduled between
    /// the source attention and the consuming projection, only the excess is exposed.
    Overlapped,
    /// Energy, area and delay charged in full on the critical path.
    Sequential,
}

impl TbAccounting {
    pub fn parse(s: &str) -> Result<Self> {
        match s {
            "excluded" => Ok(Self::Excluded),
            "overlapped" => Ok(Self::Overlapped),
            "sequential" => Ok(Self::Sequential),
            other => Err(Error::InvalidParameter(format!(
                "unknown tb accounting `{other}` (excluded, overlapped, sequential)"
            ))),
        }
    }

    pub fn as_str(self) -> &'static str {
        match self {
            Self::Excluded => "excluded",
            Self::Overlapped => "overlapped",
            Self::Sequential => "sequential",
        }
    }
}

/// Conventions the equations leave open.
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct CostOptions {
    #[serde(flatten)]
    pub mapping: MappingOptions,
    /// Multiply read delay by crossbars per PE.
    pub read_delay_pe_factor: bool,
    /// Multiply write delay by crossbars per PE.
    pub write_delay_pe_factor: bool,
    /// Scale read energy and delay by input_bits / input_split_bits. When off,
    /// the crossbar read constants already cover a complete bit-serial read.
    pub input_serialization: bool,
    pub tb_accounting: TbAccounting,
}

impl Default for CostOptions {
    fn default() -> Self {
        Self {
            mapping: MappingOptions::default(),
            read_delay_pe_factor: true,
            write_delay_pe_factor: true,
            input_serialization: true,
            tb_accounting: TbAccounting::Sequential,
        }
    }
}

/// Everything besides the workload needed to price a model.
#[derive(Debug, Clone, PartialEq)]
pub struct CostContext {
    pub devices: DeviceAssignment,
    pub tiles: TileConfig,
    pub softmax: SoftmaxUnitParams,
    pub opts: CostOptions,
}

impl CostContext {
    pub fn validate(&self) -> Result<()> {
        self.devices.validate()?;
        self.tiles.validate()?;
        self.softmax.validate()
    }
}

#[derive(Debug, Clone, Copy, Default, PartialEq, Serialize, Deserialize)]
pub struct LayerCost {
    pub e_read_uj: f64,
    pub e_write_uj: f64,
    pub d_read_us: f64,
    pub d_write_us: f64,
    pub area_mm2: f64,
}

impl LayerCost {
    pub fn energy_uj(&self) -> f64 {
        self.e_read_uj + self.e_write_uj
    }

    pub fn delay_us(&self) -> f64 {
        self.d_read_us + self.d_write_us
    }
}

/// Energy (µJ), delay (µs) and area (mm²) of a group of layers.
#[derive(Debug, Clone, Copy, Default, PartialEq, Serialize, Deserialize)]
pub struct BlockCost {
    pub energy_uj: f64,
    pub delay_us: f64,
    pub area_mm2: f64,
}

impl BlockCost {
    fn add_layer(&mut self, c: &LayerCost) {
        self.energy_uj += c.energy_uj();
        self.delay_us += c.delay_us();
        self.area_mm2 += c.area_mm2;
    }

    fn add(&mut self, o: &BlockCost) {
        self.energy_uj += o.energy_uj;
        self.delay_us += o.delay_us;
        self.area_mm2 += o.area_mm2;
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct LayerCostEntry {
    pub encoder: Option<usize>,
    pub kind: LayerKind,
    pub device: String,
    pub cost: LayerCost,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct ModelCost {
    pub energy_mj: f64,
    pub delay_ms: f64,
    pub area_mm2: f64,
    pub edap: f64,
    pub macs: u64,
    pub tops_per_w: f64,
    pub tops_per_mm2: f64,
    /// Charged cost per block.
    pub blocks: BTreeMap<Block, BlockCost>,
    #[serde(skip)]
    pub layers: Vec<LayerCostEntry>,
}

impl ModelCost {
    fn from_blocks(blocks: BTreeMap<Block, BlockCost>, macs: u64, layers: Vec<LayerCostEntry>) -> Self {
        let mut e_uj = 0.0;
        let mut d_us = 0.0;
        let mut a = 0.0;
        for b in blocks.values() {
            e_uj += b.energy_uj;
            d_us += b.delay_us;
            a += b.area_mm2;
        }
        let energy_mj = e_uj * 1e-3;
        let delay_ms = d_us * 1e-3;
        let (tops_per_w, tops_per_mm2) = tops(macs, energy_mj, delay_ms, a);
        Self {
            energy_mj,
            delay_ms,
            area_mm2: a,
            edap: energy_mj * delay_ms * a,
            macs,
            tops_per_w,
            tops_per_mm2,
            blocks,
            layers,
        }
    }

    pub fn block(&self, b: Block) -> BlockCost {
        self.blocks.get(&b).copied().unwrap_or_default()
    }
}

/// Tera-operations per joule-second per watt and per mm².
fn tops(macs: u64, energy_mj: f64, delay_ms: f64, area_mm2: f64) -> (f64, f64) {
    let ops = macs as f64;
    let per_w = if energy_mj > 0.0 {
        ops / (energy_mj * 1e-3) / 1e12
    } else {
        0.0
    };
    let per_mm2 = if delay_ms > 0.0 && area_mm2 > 0.0 {
        ops / (delay_ms * 1e-3) / area_mm2 / 1e12
    } else {
        0.0
    };
    (per_w, per_mm2)
}

/// Read, write and area cost of all copies of one mapped layer.
///
/// `map` is the mapping of a single copy; read terms are multiplied by
/// `input_cycles`, write terms are charged once per attention execution.
pub fn layer_cost(
    layer: &LayerSpec,
    map: &MappingResult,
    dev: &DeviceParams,
    tiles: &TileConfig,
    input_cycles: u32,
) -> LayerCost {
    layer_cost_with(layer, map, dev, tiles, input_cycles, &CostOptions::default())
}

pub fn layer_cost_with(
    layer: &LayerSpec,
    map: &MappingResult,
    dev: &DeviceParams,
    tiles: &TileConfig,
    input_cycles: u32,
    opts: &CostOptions,
) -> LayerCost {
    let n_x = (map.n_xbar_physical * layer.copies as u64) as f64;
    let t_l = layer.t_l as f64;
    let cycles = input_cycles as f64;
    let n_x_pe = tiles.n_x_pe as f64;
    let read_pe = if opts.read_delay_pe_factor { n_x_pe } else { 1.0 };
    let write_pe = if opts.write_delay_pe_factor { n_x_pe } else { 1.0 };

    let e_read_uj = t_l * n_x * dev.e_read_pj * cycles * PJ_TO_UJ;
    let d_read_us = t_l * dev.d_read_us * read_pe * cycles;
    let (e_write_uj, d_write_us) = if layer.requires_write {
        (n_x * dev.e_write_pj * PJ_TO_UJ, dev.d_write_us * write_pe)
    } else {
        (0.0, 0.0)
    };
    let area_xbars = layer_area_crossbars(map, layer.copies, tiles, opts.mapping.tile_padding);
    LayerCost {
        e_read_uj,
        e_write_uj,
        d_read_us,
        d_write_us,
        area_mm2: area_xbars as f64 * dev.area_mm2,
    }
}

/// Softmax unit energy (µJ) and delay (µs) for `n_heads` parallel units over `t` tokens.
pub fn softmax_cost_for(n_heads: usize, t: usize, sp: &SoftmaxUnitParams) -> (f64, f64) {
    let t2 = (t * t) as f64;
    let energy = n_heads as f64 * t2 * sp.energy_per_element_pj() * PJ_TO_UJ;
    let delay = t2 * sp.delay_per_element_ns() * NS_TO_US;
    (energy, delay)
}

pub fn softmax_cost(cfg: &crate::workload::ModelConfig, sp: &SoftmaxUnitParams) -> (f64, f64) {
    softmax_cost_for(cfg.n_heads, cfg.t, sp)
}

/// Per-block costs of one encoder, before accounting rules are applied.
#[derive(Debug, Clone, Default)]
struct EncoderCost {
    blocks: BTreeMap<Block, BlockCost>,
}

impl EncoderCost {
    fn get(&self, b: Block) -> BlockCost {
        self.blocks.get(&b).copied().unwrap_or_default()
    }
}

fn price_layer(
    layer: &LayerSpec,
    n_heads: usize,
    input_cycles: u32,
    weight_bits: u32,
    ctx: &CostContext,
) -> Result<(LayerCost, String)> {
    if layer.kind == LayerKind::Softmax {
        let (e, d) = softmax_cost_for(n_heads, layer.t_l, &ctx.softmax);
        return Ok((
            LayerCost {
                e_read_uj: e,
                d_read_us: d,
                ..Default::default()
            },
            "digital".into(),
        ));
    }
    let dev = ctx.devices.device(layer.kind)?;
    let map = crossbars_for_layer_with(layer, &ctx.tiles, dev, weight_bits, ctx.opts.mapping)?;
    let c = layer_cost_with(layer, &map, dev, &ctx.tiles, input_cycles, &ctx.opts);
    Ok((c, dev.kind.as_str().to_string()))
}

fn effective_cycles(model: &ModelSpec, opts: &CostOptions) -> u32 {
    if opts.input_serialization {
        model.input_cycles
    } else {
        1
    }
}

fn price_encoder(
    enc: &EncoderSpec,
    model: &ModelSpec,
    ctx: &CostContext,
    layers: &mut Vec<LayerCostEntry>,
) -> Result<EncoderCost> {
    let cycles = effective_cycles(model, &ctx.opts);
    let mut out = EncoderCost::default();
    for layer in &enc.layers {
        let (c, device) = price_layer(layer, enc.n_heads, cycles, model.weight_bits, ctx)?;
        out.blocks.entry(layer.kind.block()).or_default().add_layer(&c);
        layers.push(LayerCostEntry {
            encoder: Some(enc.index),
            kind: layer.kind,
            device,
            cost: c,
        });
    }
    Ok(out)
}

/// Prices a built model. `n_reuse` must match the model's reusing encoders.
pub fn model_cost(model: &ModelSpec, ctx: &CostContext, n_reuse: usize) -> Result<ModelCost> {
    let actual = model.n_reuse();
    if actual != n_reuse {
        return Err(Error::ReuseMismatch {
            declared: n_reuse,
            actual,
        });
    }
    let mut layers = Vec::new();
    let mut per_enc = Vec::with_capacity(model.encoders.len());
    for enc in &model.encoders {
        per_enc.push(price_encoder(enc, model, ctx, &mut layers)?);
    }

    let mut blocks: BTreeMap<Block, BlockCost> = BTreeMap::new();
    for (enc, cost) in model.encoders.iter().zip(&per_enc) {
        blocks.entry(Block::Proj).or_default().add(&cost.get(Block::Proj));
        blocks.entry(Block::Mlp).or_default().add(&cost.get(Block::Mlp));
        if !enc.reuses_attention {
            blocks.entry(Block::Attn).or_default().add(&cost.get(Block::Attn));
            continue;
        }
        let tb = cost.get(Block::Tb);
        let charged = match ctx.opts.tb_accounting {
            TbAccounting::Excluded => BlockCost::default(),
            TbAccounting::Sequential => tb,
            TbAccounting::Overlapped => {
                let src = enc
                    .reuse_source
                    .ok_or(Error::MissingReuseSource(enc.index))?;
                let window = overlap_window_us(model, &per_enc, src, enc.index);
                BlockCost {
                    delay_us: (tb.delay_us - window).max(0.0),
                    ..tb
                }
            }
        };
        blocks.entry(Block::Tb).or_default().add(&charged);
    }

    let cycles = effective_cycles(model, &ctx.opts);
    let stem = blocks.entry(Block::Stem).or_default();
    for layer in &model.stem {
        let (c, device) = price_layer(layer, 1, cycles, model.weight_bits, ctx)?;
        stem.add_layer(&c);
        layers.push(LayerCostEntry {
            encoder: None,
            kind: layer.kind,
            device,
            cost: c,
        });
    }
    for b in Block::ALL {
        blocks.entry(b).or_default();
    }
    Ok(ModelCost::from_blocks(blocks, model.mac_count(), layers))
}

/// Critical-path time between the end of `src`'s attention and the start of
/// `dst`'s projection, which a transformation block can run underneath.
fn overlap_window_us(model: &ModelSpec, per_enc: &[EncoderCost], src: usize, dst: usize) -> f64 {
    let src_cost = &per_enc[src];
    let mut window = src_cost.get(Block::Proj).delay_us + src_cost.get(Block::Mlp).delay_us;
    for i in (src + 1)..dst {
        let c = &per_enc[i];
        window += c.get(Block::Proj).delay_us + c.get(Block::Mlp).delay_us;
        if !model.encoders[i].reuses_attention {
            window += c.get(Block::Attn).delay_us;
        }
    }
    window
}

/// Softmax constants that make `model` hit the target delay and energy, with
/// the three component costs split in the given proportions.
pub fn calibrate_softmax(
    model: &ModelSpec,
    ctx: &CostContext,
    target_delay_ms: f64,
    target_energy_mj: f64,
    split: [f64; 3],
) -> Result<SoftmaxUnitParams> {
    let mut zero = ctx.clone();
    zero.softmax = SoftmaxUnitParams::from_totals(0.0, 0.0, split);
    let rest = model_cost(model, &zero, model.n_reuse())?;
    let mut unit = ctx.clone();
    unit.softmax = SoftmaxUnitParams::from_totals(1.0, 1.0, split);
    let per_unit = model_cost(model, &unit, model.n_reuse())?;
    let d_slope = per_unit.delay_ms - rest.delay_ms;
    let e_slope = per_unit.energy_mj - rest.energy_mj;
    if d_slope <= 0.0 || e_slope <= 0.0 {
        return Err(Error::InvalidParameter(
            "model has no softmax work to calibrate".into(),
        ));
    }
    let d_ns = (target_delay_ms - rest.delay_ms) / d_slope;
    let e_pj = (target_energy_mj - rest.energy_mj) / e_slope;
    if d_ns < 0.0 || e_pj < 0.0 {
        return Err(Error::InvalidParameter(format!(
            "targets ({target_delay_ms} ms, {target_energy_mj} mJ) are below the crossbar-only cost ({:.4} ms, {:.4} mJ)",
            rest.delay_ms, rest.energy_mj
        )));
    }
    Ok(SoftmaxUnitParams::from_totals(e_pj, d_ns, split))
}
