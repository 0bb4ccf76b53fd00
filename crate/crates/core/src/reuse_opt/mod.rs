//! Attention-reuse planning: reuse count search, pattern families, scoring.

pub mod cka;
pub mod families;
pub mod optimize;
pub mod pattern;
pub mod scorer;

pub use cka::{cka_matrix, cka_score};
pub use families::{enumerate_patterns, family_registry, PatternFamily, PatternSelection};
pub use optimize::{
    cost_with_pattern, find_optimal_n_reuse, optimize, tail_pattern, OptimizationResult, ReuseSearch,
};
pub use pattern::{gen_continuous, gen_pyramid, gen_strided, PatternKind, ReusePattern};
pub use scorer::{
    build_scorer, score_all, scorer_registry, select_best, select_best_scored, synthetic_attention_outputs, CkaProxyScorer, ConstantScorer, ExternalLossScorer,
    PatternScorer, ScorerInit,
};
