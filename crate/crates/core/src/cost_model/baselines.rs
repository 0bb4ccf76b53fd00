//! Simplified cost transforms for the comparison techniques: weight sharing
//! and token pruning with a predictor network.

use std::collections::BTreeMap;

use serde::{Deserialize, Serialize};

use super::{model_cost, BlockCost, CostContext, ModelCost};
use crate::error::{Error, Result};
use crate::reuse_opt::ReusePattern;
use crate::workload::{build_model, build_model_with_tokens, Block, LayerKind, ModelConfig, ModelSpec};

/// Baseline-over-transformed ratios; values above 1 are reductions.
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct CostDelta {
    pub energy_ratio: f64,
    pub delay_ratio: f64,
    pub area_ratio: f64,
    pub edap_reduction: f64,
}

impl CostDelta {
    pub fn between(baseline: &ModelCost, transformed: &ModelCost) -> Self {
        Self {
            energy_ratio: baseline.energy_mj / transformed.energy_mj,
            delay_ratio: baseline.delay_ms / transformed.delay_ms,
            area_ratio: baseline.area_mm2 / transformed.area_mm2,
            edap_reduction: baseline.edap / transformed.edap,
        }
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct TransformOutcome {
    pub baseline: ModelCost,
    pub transformed: ModelCost,
    pub delta: CostDelta,
}

impl TransformOutcome {
    fn new(baseline: ModelCost, transformed: ModelCost) -> Self {
        let delta = CostDelta::between(&baseline, &transformed);
        Self {
            baseline,
            transformed,
            delta,
        }
    }
}

/// Fixed cost of the token-importance predictor networks.
#[derive(Debug, Clone, Copy, Default, PartialEq, Serialize, Deserialize)]
pub struct PredictorOverhead {
    pub energy_mj: f64,
    pub delay_ms: f64,
    pub area_mm2: f64,
}

fn is_shared_weight(kind: LayerKind) -> bool {
    matches!(
        kind,
        LayerKind::FcQ
            | LayerKind::FcK
            | LayerKind::FcV
            | LayerKind::FcProj
            | LayerKind::FcMlp1
            | LayerKind::FcMlp2
    )
}

/// Groups of `ws` consecutive encoders share one copy of their static weights.
///
/// Only area changes: every group keeps the crossbars of its largest member
/// per block. Energy and delay are carried over untouched.
pub fn apply_weight_sharing(model: &ModelSpec, ctx: &CostContext, ws: usize) -> Result<TransformOutcome> {
    if ws < 1 {
        return Err(Error::InvalidParameter(format!(
            "weight sharing factor must be >= 1, got {ws}"
        )));
    }
    let baseline = model_cost(model, ctx, model.n_reuse())?;
    let n = model.encoders.len();

    // per-encoder static-weight area, by block
    let mut per_enc: Vec<BTreeMap<Block, f64>> = vec![BTreeMap::new(); n];
    for entry in &baseline.layers {
        let Some(i) = entry.encoder else { continue };
        if !is_shared_weight(entry.kind) {
            continue;
        }
        *per_enc[i].entry(entry.kind.block()).or_default() += entry.cost.area_mm2;
    }

    let mut blocks = baseline.blocks.clone();
    for block in [Block::Attn, Block::Proj, Block::Mlp] {
        let mut saving = 0.0;
        for group in per_enc.chunks(ws) {
            let areas: Vec<f64> = group.iter().map(|m| m.get(&block).copied().unwrap_or(0.0)).collect();
            let total: f64 = areas.iter().sum();
            let kept = areas.iter().copied().fold(0.0, f64::max);
            saving += total - kept;
        }
        if let Some(b) = blocks.get_mut(&block) {
            b.area_mm2 -= saving;
        }
    }
    let mut transformed = ModelCost::from_blocks(blocks, baseline.macs, baseline.layers.clone());
    // energy and delay are untouched; keep the exact baseline values
    transformed.energy_mj = baseline.energy_mj;
    transformed.delay_ms = baseline.delay_ms;
    transformed.tops_per_w = baseline.tops_per_w;
    transformed.edap = transformed.energy_mj * transformed.delay_ms * transformed.area_mm2;
    transformed.tops_per_mm2 =
        transformed.macs as f64 / (transformed.delay_ms * 1e-3) / transformed.area_mm2 / 1e12;
    Ok(TransformOutcome::new(baseline, transformed))
}

/// Prunes a fraction `p` of the tokens in every encoder from `prune_from` on
/// and charges the predictor overhead once. With `p = 0` no predictor is
/// needed, so the baseline comes back unchanged.
pub fn apply_token_pruning(
    cfg: &ModelConfig,
    pattern: &ReusePattern,
    ctx: &CostContext,
    p: f64,
    prune_from: usize,
    overhead: PredictorOverhead,
) -> Result<TransformOutcome> {
    if !(0.0..1.0).contains(&p) {
        return Err(Error::InvalidParameter(format!(
            "pruning ratio must lie in [0, 1), got {p}"
        )));
    }
    let base_model = build_model(cfg, pattern)?;
    let baseline = model_cost(&base_model, ctx, base_model.n_reuse())?;
    let kept = pruned_tokens(cfg.t, p);
    let pruned = build_model_with_tokens(cfg, pattern, |i| if i >= prune_from { kept } else { cfg.t })?;
    let priced = model_cost(&pruned, ctx, pruned.n_reuse())?;
    let mut blocks = priced.blocks.clone();
    let pred = blocks.entry(Block::Predictor).or_insert_with(BlockCost::default);
    pred.energy_uj += overhead.energy_mj * 1e3;
    pred.delay_us += overhead.delay_ms * 1e3;
    pred.area_mm2 += overhead.area_mm2;
    let transformed = if p == 0.0 || overhead == PredictorOverhead::default() {
        priced
    } else {
        ModelCost::from_blocks(blocks, priced.macs, priced.layers)
    };
    Ok(TransformOutcome::new(baseline, transformed))
}

/// Tokens left after pruning a fraction `p`; at least one token survives.
pub fn pruned_tokens(t: usize, p: f64) -> usize {
    ((t as f64) * (1.0 - p)).round().max(1.0) as usize
}
