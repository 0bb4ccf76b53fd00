//! Uniform reuse-pattern families, each registered under its name.

use std::collections::BTreeSet;
use std::sync::Arc;

use super::pattern::{gen_continuous, gen_pyramid, gen_strided, ReusePattern};
use crate::error::{Error, Result};
use crate::registry::{Named, Registry};

/// A rule that enumerates every pattern of its family for a given size.
pub trait PatternFamily: Named + Send + Sync {
    fn generate(&self, n_encoders: usize, n_reuse: usize) -> Vec<ReusePattern>;
}

pub struct Strided;
pub struct Continuous;
pub struct Pyramid;

impl Named for Strided {
    fn name(&self) -> &str {
        "strided"
    }
}

impl PatternFamily for Strided {
    fn generate(&self, n: usize, k: usize) -> Vec<ReusePattern> {
        (2..=n.max(2))
            .flat_map(|sl| (1..n).filter_map(move |start| gen_strided(n, k, sl, start)))
            .collect()
    }
}

impl Named for Continuous {
    fn name(&self) -> &str {
        "continuous"
    }
}

impl PatternFamily for Continuous {
    fn generate(&self, n: usize, k: usize) -> Vec<ReusePattern> {
        (1..n).filter_map(|start| gen_continuous(n, k, start)).collect()
    }
}

impl Named for Pyramid {
    fn name(&self) -> &str {
        "pyramid"
    }
}

impl PatternFamily for Pyramid {
    fn generate(&self, n: usize, k: usize) -> Vec<ReusePattern> {
        let mut out = Vec::new();
        for sl in 2..=n.max(2) {
            for n_cont in 0..=k {
                for start in 1..n {
                    out.extend(gen_pyramid(n, k, sl, n_cont, start));
                }
            }
        }
        out
    }
}

/// Registry preloaded with the three uniform families.
pub fn family_registry() -> Registry<dyn PatternFamily> {
    let mut reg: Registry<dyn PatternFamily> = Registry::new("pattern family");
    reg.register(Arc::new(Strided));
    reg.register(Arc::new(Continuous));
    reg.register(Arc::new(Pyramid));
    reg
}

/// Order the uniform families are enumerated in; earlier families win on duplicates.
pub const DEFAULT_FAMILIES: [&str; 3] = ["strided", "continuous", "pyramid"];

/// Union of the given families, deduplicated by reuse set, in generation order.
pub fn enumerate_with(
    families: &[Arc<dyn PatternFamily>],
    n_encoders: usize,
    n_reuse: usize,
) -> Vec<ReusePattern> {
    let mut seen = BTreeSet::new();
    let mut out = Vec::new();
    for fam in families {
        for p in fam.generate(n_encoders, n_reuse) {
            if seen.insert(p.reuse_set.clone()) {
                out.push(p);
            }
        }
    }
    out
}

/// All strided, continuous and pyramid patterns for the given size.
pub fn enumerate_patterns(n_encoders: usize, n_reuse: usize) -> Vec<ReusePattern> {
    let reg = family_registry();
    let fams: Vec<_> = DEFAULT_FAMILIES
        .iter()
        .map(|n| reg.get(n).expect("builtin family"))
        .collect();
    enumerate_with(&fams, n_encoders, n_reuse)
}

/// Candidate selection parsed from `--patterns`.
#[derive(Debug, Clone, PartialEq, Eq)]
pub enum PatternSelection {
    Families(Vec<String>),
    Explicit(ReusePattern),
}

impl PatternSelection {
    /// Accepts `all`, a family name, a `+`-joined list of family names, or
    /// `explicit:<csv-indices>`.
    pub fn parse(s: &str) -> Result<Self> {
        if let Some(csv) = s.strip_prefix("explicit:") {
            return Ok(Self::Explicit(ReusePattern::parse_explicit(csv)?));
        }
        if s == "all" {
            return Ok(Self::Families(
                DEFAULT_FAMILIES.iter().map(|s| s.to_string()).collect(),
            ));
        }
        let reg = family_registry();
        let names: Vec<String> = s.split('+').map(|n| n.trim().to_string()).collect();
        for n in &names {
            reg.get(n)?;
        }
        Ok(Self::Families(names))
    }

    pub fn candidates(&self, n_encoders: usize, n_reuse: usize) -> Result<Vec<ReusePattern>> {
        match self {
            Self::Explicit(p) => {
                p.validate(n_encoders, p.n_reuse())?;
                if p.n_reuse() != n_reuse {
                    return Err(Error::InvalidPattern(format!(
                        "explicit pattern {p} has {} reusing encoders, {n_reuse} required",
                        p.n_reuse()
                    )));
                }
                Ok(vec![p.clone()])
            }
            Self::Families(names) => {
                let reg = family_registry();
                let fams = names.iter().map(|n| reg.get(n)).collect::<Result<Vec<_>>>()?;
                Ok(enumerate_with(&fams, n_encoders, n_reuse))
            }
        }
    }
}
