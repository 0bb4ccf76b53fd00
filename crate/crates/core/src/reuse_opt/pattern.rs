use std::fmt;

use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};

#[derive(Debug, Clone, Copy, PartialEq, Eq, PartialOrd, Ord, Hash, Serialize, Deserialize)]
#[serde(rename_all = "lowercase")]
pub enum PatternKind {
    Strided,
    Continuous,
    Pyramid,
    Explicit,
}

impl PatternKind {
    pub fn as_str(self) -> &'static str {
        match self {
            PatternKind::Strided => "strided",
            PatternKind::Continuous => "continuous",
            PatternKind::Pyramid => "pyramid",
            PatternKind::Explicit => "explicit",
        }
    }
}

/// Which encoders reuse attention, and the rule that generated them.
#[derive(Debug, Clone, PartialEq, Eq, Serialize, Deserialize)]
pub struct ReusePattern {
    pub kind: PatternKind,
    pub sl: Option<usize>,
    pub n_cont: Option<usize>,
    pub start: Option<usize>,
    /// Sorted encoder indices (0-based).
    pub reuse_set: Vec<usize>,
}

impl ReusePattern {
    pub fn explicit(mut reuse_set: Vec<usize>) -> Self {
        reuse_set.sort_unstable();
        Self {
            kind: PatternKind::Explicit,
            sl: None,
            n_cont: None,
            start: reuse_set.first().copied(),
            reuse_set,
        }
    }

    pub fn none() -> Self {
        Self::explicit(Vec::new())
    }

    pub fn n_reuse(&self) -> usize {
        self.reuse_set.len()
    }

    /// Parses a comma separated index list such as `1,3,5`.
    pub fn parse_explicit(csv: &str) -> Result<Self> {
        let idx = csv
            .split(',')
            .map(str::trim)
            .filter(|s| !s.is_empty())
            .map(|s| {
                s.parse::<usize>()
                    .map_err(|_| Error::InvalidPattern(format!("bad encoder index `{s}`")))
            })
            .collect::<Result<Vec<_>>>()?;
        Ok(Self::explicit(idx))
    }

    /// Checks range, cardinality and the structure implied by `kind`.
    pub fn validate(&self, n_encoders: usize, n_reuse: usize) -> Result<()> {
        let fail = |m: String| Err(Error::InvalidPattern(format!("{self}: {m}")));
        if self.reuse_set.len() != n_reuse {
            return fail(format!("expected {n_reuse} reusing encoders"));
        }
        if self.reuse_set.windows(2).any(|w| w[0] >= w[1]) {
            return fail("indices must be strictly increasing".into());
        }
        if self.reuse_set.first() == Some(&0) {
            return fail("encoder 0 cannot reuse attention".into());
        }
        if self.reuse_set.last().is_some_and(|&i| i >= n_encoders) {
            return fail(format!("index out of range for {n_encoders} encoders"));
        }
        let regenerated = match self.kind {
            PatternKind::Explicit => return Ok(()),
            PatternKind::Strided => gen_strided(
                n_encoders,
                n_reuse,
                self.sl.unwrap_or(0),
                self.start.unwrap_or(0),
            ),
            PatternKind::Continuous => gen_continuous(n_encoders, n_reuse, self.start.unwrap_or(0)),
            PatternKind::Pyramid => gen_pyramid(
                n_encoders,
                n_reuse,
                self.sl.unwrap_or(0),
                self.n_cont.unwrap_or(0),
                self.start.unwrap_or(0),
            ),
        };
        match regenerated {
            Some(p) if p.reuse_set == self.reuse_set => Ok(()),
            _ => fail(format!("set does not follow the {} rule", self.kind.as_str())),
        }
    }

    /// Compact single-token label, e.g. `strided:sl=2:start=1:1-3-5`.
    pub fn label(&self) -> String {
        let set = if self.reuse_set.is_empty() {
            "none".to_string()
        } else {
            self.reuse_set
                .iter()
                .map(usize::to_string)
                .collect::<Vec<_>>()
                .join("-")
        };
        let mut s = self.kind.as_str().to_string();
        if let Some(sl) = self.sl {
            s += &format!(":sl={sl}");
        }
        if let Some(nc) = self.n_cont {
            s += &format!(":ncont={nc}");
        }
        if let Some(st) = self.start {
            if self.kind != PatternKind::Explicit {
                s += &format!(":start={st}");
            }
        }
        format!("{s}:{set}")
    }
}

impl fmt::Display for ReusePattern {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        f.write_str(&self.label())
    }
}

fn fits(set: &[usize], n_encoders: usize) -> bool {
    set.last().is_none_or(|&i| i < n_encoders)
}

/// `{start, start+sl, ...}` with `n_reuse` members, if it fits.
pub fn gen_strided(n_encoders: usize, n_reuse: usize, sl: usize, start: usize) -> Option<ReusePattern> {
    if sl < 2 || start < 1 || n_reuse == 0 {
        return None;
    }
    let set: Vec<usize> = (0..n_reuse).map(|k| start + k * sl).collect();
    fits(&set, n_encoders).then(|| ReusePattern {
        kind: PatternKind::Strided,
        sl: Some(sl),
        n_cont: None,
        start: Some(start),
        reuse_set: set,
    })
}

/// `{start, ..., start+n_reuse-1}`, if it fits.
pub fn gen_continuous(n_encoders: usize, n_reuse: usize, start: usize) -> Option<ReusePattern> {
    if start < 1 || n_reuse == 0 {
        return None;
    }
    let set: Vec<usize> = (start..start + n_reuse).collect();
    fits(&set, n_encoders).then(|| ReusePattern {
        kind: PatternKind::Continuous,
        sl: None,
        n_cont: None,
        start: Some(start),
        reuse_set: set,
    })
}

/// Strided prefix, `n_cont` consecutive encoders, strided suffix.
///
/// The `n_reuse - n_cont` strided members are split with the larger half in
/// front; each segment starts `sl` after the previous segment's last member.
pub fn gen_pyramid(
    n_encoders: usize,
    n_reuse: usize,
    sl: usize,
    n_cont: usize,
    start: usize,
) -> Option<ReusePattern> {
    if sl < 2 || start < 1 || n_cont > n_reuse || n_reuse == 0 {
        return None;
    }
    let strided = n_reuse - n_cont;
    let prefix = strided.div_ceil(2);
    let suffix = strided - prefix;
    let mut set = Vec::with_capacity(n_reuse);
    let mut next = start;
    for _ in 0..prefix {
        set.push(next);
        next += sl;
    }
    for _ in 0..n_cont {
        set.push(next);
        next += 1;
    }
    if n_cont > 0 {
        next = next - 1 + sl;
    }
    for _ in 0..suffix {
        set.push(next);
        next += sl;
    }
    fits(&set, n_encoders).then(|| ReusePattern {
        kind: PatternKind::Pyramid,
        sl: Some(sl),
        n_cont: Some(n_cont),
        start: Some(start),
        reuse_set: set,
    })
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn strided_examples() {
        assert_eq!(gen_strided(9, 4, 2, 1).unwrap().reuse_set, vec![1, 3, 5, 7]);
        assert_eq!(gen_strided(9, 4, 2, 2).unwrap().reuse_set, vec![2, 4, 6, 8]);
        assert!(gen_strided(9, 4, 3, 1).is_none());
        assert!(gen_strided(9, 2, 9, 1).is_none());
        assert!(gen_strided(9, 2, 1, 1).is_none());
    }

    #[test]
    fn continuous_examples() {
        assert_eq!(gen_continuous(9, 4, 1).unwrap().reuse_set, vec![1, 2, 3, 4]);
        assert_eq!(gen_continuous(9, 4, 5).unwrap().reuse_set, vec![5, 6, 7, 8]);
        assert!(gen_continuous(9, 4, 6).is_none());
        assert!(gen_continuous(9, 4, 0).is_none());
    }

    #[test]
    fn pyramid_examples() {
        assert_eq!(gen_pyramid(9, 4, 2, 2, 1).unwrap().reuse_set, vec![1, 3, 4, 6]);
        assert_eq!(
            gen_pyramid(9, 4, 2, 4, 1).unwrap().reuse_set,
            gen_continuous(9, 4, 1).unwrap().reuse_set
        );
        assert_eq!(
            gen_pyramid(9, 4, 2, 0, 1).unwrap().reuse_set,
            gen_strided(9, 4, 2, 1).unwrap().reuse_set
        );
        assert_eq!(gen_pyramid(12, 5, 3, 2, 1).unwrap().reuse_set, vec![1, 4, 7, 8, 11]);
        assert!(gen_pyramid(9, 4, 2, 5, 1).is_none());
    }

    #[test]
    fn validation() {
        let p = gen_pyramid(9, 4, 2, 2, 1).unwrap();
        p.validate(9, 4).unwrap();
        assert!(p.validate(9, 3).is_err());
        let mut bad = p.clone();
        bad.reuse_set = vec![1, 2, 4, 6];
        assert!(bad.validate(9, 4).is_err());
        assert!(ReusePattern::explicit(vec![0, 2]).validate(4, 2).is_err());
        assert!(ReusePattern::explicit(vec![1, 4]).validate(4, 2).is_err());
        ReusePattern::explicit(vec![3, 1]).validate(4, 2).unwrap();
    }

    #[test]
    fn parse_and_label() {
        let p = ReusePattern::parse_explicit("3, 1,5").unwrap();
        assert_eq!(p.reuse_set, vec![1, 3, 5]);
        assert_eq!(p.label(), "explicit:1-3-5");
        assert_eq!(gen_strided(9, 2, 2, 1).unwrap().label(), "strided:sl=2:start=1:1-3");
        assert!(ReusePattern::parse_explicit("1,x").is_err());
        assert_eq!(ReusePattern::none().label(), "explicit:none");
    }
}
