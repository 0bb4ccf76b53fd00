//! Pattern scorers (lower is better) and best-candidate selection.

use std::collections::BTreeMap;
use std::path::{Path, PathBuf};
use std::sync::Arc;

use ndarray::Array2;
use rand::SeedableRng;
use rand_chacha::ChaCha8Rng;
use rand_distr::{Distribution, StandardNormal};
use rayon::prelude::*;

use super::cka::cka_matrix;
use super::pattern::ReusePattern;
use crate::error::{Error, Result};
use crate::registry::{Named, Registry};
use crate::workload::reuse_sources;

/// Maps a reuse pattern to a loss-like score; lower is better.
pub trait PatternScorer: Send + Sync {
    fn name(&self) -> &str;
    fn score(&self, pattern: &ReusePattern) -> Result<f64>;
}

/// Loss proxy from attention-output similarity: every reusing encoder pays
/// `1 - CKA(source, self)`, the part of its own attention it gives up.
pub struct CkaProxyScorer {
    similarity: Array2<f64>,
}

impl CkaProxyScorer {
    pub fn from_similarity(similarity: Array2<f64>) -> Result<Self> {
        if similarity.nrows() != similarity.ncols() {
            return Err(Error::Shape("similarity matrix must be square".into()));
        }
        Ok(Self { similarity })
    }

    /// Builds the similarity matrix from per-encoder attention outputs.
    pub fn from_activations(acts: &[Array2<f64>]) -> Result<Self> {
        Self::from_similarity(cka_matrix(acts)?)
    }

    pub fn similarity(&self) -> &Array2<f64> {
        &self.similarity
    }
}

impl PatternScorer for CkaProxyScorer {
    fn name(&self) -> &str {
        "cka"
    }

    fn score(&self, pattern: &ReusePattern) -> Result<f64> {
        let n = self.similarity.nrows();
        let sources = reuse_sources(n, &pattern.reuse_set)?;
        Ok(sources
            .iter()
            .enumerate()
            .filter_map(|(j, s)| s.map(|s| 1.0 - self.similarity[[s, j]]))
            .sum())
    }
}

/// Per-encoder activations whose correlation with the previous encoder rises
/// linearly from `rho_first` to `rho_last` with depth.
pub fn synthetic_attention_outputs(
    n_encoders: usize,
    tokens: usize,
    features: usize,
    rho_first: f64,
    rho_last: f64,
    seed: u64,
) -> Vec<Array2<f64>> {
    let mut rng = ChaCha8Rng::seed_from_u64(seed);
    let mut out: Vec<Array2<f64>> = Vec::with_capacity(n_encoders);
    for i in 0..n_encoders {
        let noise = Array2::from_shape_fn((tokens, features), |_| StandardNormal.sample(&mut rng));
        let next = match out.last() {
            None => noise,
            Some(prev) => {
                let frac = if n_encoders > 2 {
                    (i - 1) as f64 / (n_encoders - 2) as f64
                } else {
                    0.0
                };
                let rho = rho_first + (rho_last - rho_first) * frac;
                prev * rho + noise * (1.0 - rho * rho).sqrt()
            }
        };
        out.push(next);
    }
    out
}

/// Scores read from a CSV of `pattern,loss` rows, where `pattern` is a
/// `-`-joined index list such as `1-3-5-7`.
pub struct ExternalLossScorer {
    path: PathBuf,
    losses: BTreeMap<Vec<usize>, f64>,
}

impl ExternalLossScorer {
    pub fn load(path: &Path) -> Result<Self> {
        let text = std::fs::read_to_string(path).map_err(|e| Error::io(path, e))?;
        Self::parse(path, &text)
    }

    pub fn parse(path: &Path, text: &str) -> Result<Self> {
        let perr = |line: usize, msg: &str| Error::Parse {
            path: path.to_path_buf(),
            msg: format!("line {line}: {msg}"),
        };
        let mut losses = BTreeMap::new();
        for (no, line) in text.lines().enumerate() {
            let line = line.trim();
            if line.is_empty() || line.starts_with('#') || (no == 0 && line.starts_with("pattern")) {
                continue;
            }
            let (pat, loss) = line
                .split_once(',')
                .ok_or_else(|| perr(no + 1, "expected `pattern,loss`"))?;
            let mut set = pat
                .split('-')
                .map(|s| s.trim().parse::<usize>())
                .collect::<std::result::Result<Vec<_>, _>>()
                .map_err(|_| perr(no + 1, "bad pattern indices"))?;
            set.sort_unstable();
            let loss: f64 = loss
                .trim()
                .parse()
                .map_err(|_| perr(no + 1, "bad loss value"))?;
            losses.insert(set, loss);
        }
        Ok(Self {
            path: path.to_path_buf(),
            losses,
        })
    }
}

impl PatternScorer for ExternalLossScorer {
    fn name(&self) -> &str {
        "external"
    }

    fn score(&self, pattern: &ReusePattern) -> Result<f64> {
        self.losses.get(&pattern.reuse_set).copied().ok_or_else(|| {
            Error::InvalidParameter(format!(
                "no loss recorded for {pattern} in {}",
                self.path.display()
            ))
        })
    }
}

/// Scores every pattern identically; selection falls back to the tie rule.
pub struct ConstantScorer(pub f64);

impl PatternScorer for ConstantScorer {
    fn name(&self) -> &str {
        "constant"
    }

    fn score(&self, _: &ReusePattern) -> Result<f64> {
        Ok(self.0)
    }
}

/// Inputs a scorer factory may need.
#[derive(Debug, Clone)]
pub struct ScorerInit {
    pub n_encoders: usize,
    pub seed: u64,
}

/// Builds a scorer from `--scorer name[:arg]`.
pub trait ScorerFactory: Named + Send + Sync {
    fn build(&self, arg: Option<&str>, init: &ScorerInit) -> Result<Box<dyn PatternScorer>>;
}

struct CkaFactory;
struct ExternalFactory;
struct ConstantFactory;

impl Named for CkaFactory {
    fn name(&self) -> &str {
        "cka"
    }
}

impl ScorerFactory for CkaFactory {
    fn build(&self, arg: Option<&str>, init: &ScorerInit) -> Result<Box<dyn PatternScorer>> {
        let acts = match arg {
            Some(path) => {
                let acts = crate::func_sim::tensor_io::read_matrices(Path::new(path))?;
                if acts.len() != init.n_encoders {
                    return Err(Error::Shape(format!(
                        "{path} holds {} activation matrices, model has {} encoders",
                        acts.len(),
                        init.n_encoders
                    )));
                }
                acts
            }
            None => synthetic_attention_outputs(init.n_encoders, 256, 32, 0.55, 0.95, init.seed),
        };
        Ok(Box::new(CkaProxyScorer::from_activations(&acts)?))
    }
}

impl Named for ExternalFactory {
    fn name(&self) -> &str {
        "external"
    }
}

impl ScorerFactory for ExternalFactory {
    fn build(&self, arg: Option<&str>, _: &ScorerInit) -> Result<Box<dyn PatternScorer>> {
        let path = arg.ok_or_else(|| {
            Error::InvalidParameter("external scorer needs a path: external:<path>".into())
        })?;
        Ok(Box::new(ExternalLossScorer::load(Path::new(path))?))
    }
}

impl Named for ConstantFactory {
    fn name(&self) -> &str {
        "constant"
    }
}

impl ScorerFactory for ConstantFactory {
    fn build(&self, arg: Option<&str>, _: &ScorerInit) -> Result<Box<dyn PatternScorer>> {
        let v = arg.map(str::parse::<f64>).transpose().map_err(|_| {
            Error::InvalidParameter("constant scorer argument must be a number".into())
        })?;
        Ok(Box::new(ConstantScorer(v.unwrap_or(0.0))))
    }
}

pub fn scorer_registry() -> Registry<dyn ScorerFactory> {
    let mut reg: Registry<dyn ScorerFactory> = Registry::new("scorer");
    reg.register(Arc::new(CkaFactory));
    reg.register(Arc::new(ExternalFactory));
    reg.register(Arc::new(ConstantFactory));
    reg
}

/// Resolves a `name[:arg]` scorer spec against the registry.
pub fn build_scorer(spec: &str, init: &ScorerInit) -> Result<Box<dyn PatternScorer>> {
    let (name, arg) = match spec.split_once(':') {
        Some((n, a)) => (n, Some(a)),
        None => (spec, None),
    };
    scorer_registry().get(name)?.build(arg, init)
}

/// Scores all candidates (in parallel) and returns them in input order.
pub fn score_all(
    candidates: &[ReusePattern],
    scorer: &dyn PatternScorer,
) -> Result<Vec<(ReusePattern, f64)>> {
    candidates
        .par_iter()
        .map(|p| scorer.score(p).map(|s| (p.clone(), s)))
        .collect()
}

/// Lowest score wins; ties go to the lexicographically smallest reuse set.
pub fn select_best_scored(scored: &[(ReusePattern, f64)]) -> Result<ReusePattern> {
    scored
        .iter()
        .min_by(|(pa, sa), (pb, sb)| {
            sa.total_cmp(sb).then_with(|| pa.reuse_set.cmp(&pb.reuse_set))
        })
        .map(|(p, _)| p.clone())
        .ok_or_else(|| Error::Empty("no candidate patterns".into()))
}

pub fn select_best(candidates: &[ReusePattern], scorer: &dyn PatternScorer) -> Result<ReusePattern> {
    if candidates.is_empty() {
        return Err(Error::Empty("no candidate patterns".into()));
    }
    select_best_scored(&score_all(candidates, scorer)?)
}
