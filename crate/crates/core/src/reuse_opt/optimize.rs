//! Smallest reuse count meeting a delay target, then pattern ranking.

use serde::{Deserialize, Serialize};

use super::families::PatternSelection;
use super::pattern::{gen_continuous, ReusePattern};
use super::scorer::{score_all, select_best_scored, PatternScorer};
use crate::cost_model::{model_cost, CostContext, ModelCost};
use crate::error::{Error, Result};
use crate::workload::{build_model, ModelConfig};

/// Reusing encoders packed at the end of the model; the reference pattern
/// used while searching for the reuse count.
pub fn tail_pattern(n_encoders: usize, n_reuse: usize) -> ReusePattern {
    if n_reuse == 0 {
        return ReusePattern::none();
    }
    gen_continuous(n_encoders, n_reuse, n_encoders - n_reuse)
        .unwrap_or_else(|| ReusePattern::explicit((n_encoders - n_reuse..n_encoders).collect()))
}

pub fn cost_with_pattern(cfg: &ModelConfig, ctx: &CostContext, pattern: &ReusePattern) -> Result<ModelCost> {
    let model = build_model(cfg, pattern)?;
    model_cost(&model, ctx, pattern.n_reuse())
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct ReuseSearch {
    pub target_delay_ms: f64,
    pub n_reuse: usize,
    pub achieved_delay_ms: f64,
    /// False when even `n_encoders - 1` reusing encoders miss the target;
    /// `n_reuse` then holds that maximum.
    pub feasible: bool,
    /// `(r, delay_ms)` for every reuse count evaluated.
    pub trace: Vec<(usize, f64)>,
}

/// Increase the reuse count from zero until the model delay meets the target.
pub fn find_optimal_n_reuse(cfg: &ModelConfig, ctx: &CostContext, target_delay_ms: f64) -> Result<ReuseSearch> {
    if !(target_delay_ms.is_finite() && target_delay_ms > 0.0) {
        return Err(Error::InvalidParameter(format!(
            "target delay must be positive, got {target_delay_ms}"
        )));
    }
    cfg.validate()?;
    let n = cfg.n_encoders;
    let mut trace = Vec::new();
    for r in 0..n {
        let delay = cost_with_pattern(cfg, ctx, &tail_pattern(n, r))?.delay_ms;
        trace.push((r, delay));
        if delay <= target_delay_ms {
            return Ok(ReuseSearch {
                target_delay_ms,
                n_reuse: r,
                achieved_delay_ms: delay,
                feasible: true,
                trace,
            });
        }
    }
    let (r, delay) = *trace.last().expect("at least one encoder");
    log::warn!("target {target_delay_ms} ms unreachable, best is {delay:.3} ms at n_reuse={r}");
    Ok(ReuseSearch {
        target_delay_ms,
        n_reuse: r,
        achieved_delay_ms: delay,
        feasible: false,
        trace,
    })
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct OptimizationResult {
    pub search: ReuseSearch,
    pub candidates: Vec<(ReusePattern, f64)>,
    pub best: ReusePattern,
    pub cost: ModelCost,
}

impl OptimizationResult {
    pub fn optimal_n_reuse(&self) -> usize {
        self.search.n_reuse
    }

    pub fn feasible(&self) -> bool {
        self.search.feasible
    }
}

/// Reuse count for the target, then the best-scoring pattern of that size.
pub fn optimize(
    cfg: &ModelConfig,
    ctx: &CostContext,
    target_delay_ms: f64,
    selection: &PatternSelection,
    scorer: &dyn PatternScorer,
) -> Result<OptimizationResult> {
    let search = find_optimal_n_reuse(cfg, ctx, target_delay_ms)?;
    let r = search.n_reuse;
    let candidates = if r == 0 {
        vec![(ReusePattern::none(), 0.0)]
    } else {
        let pats = selection.candidates(cfg.n_encoders, r)?;
        if pats.is_empty() {
            return Err(Error::Empty(format!(
                "no pattern of the selected families has {r} reusing encoders out of {}",
                cfg.n_encoders
            )));
        }
        score_all(&pats, scorer)?
    };
    let best = select_best_scored(&candidates)?;
    let cost = cost_with_pattern(cfg, ctx, &best)?;
    Ok(OptimizationResult {
        search,
        candidates,
        best,
        cost,
    })
}
