//! Transformer workload description: model shapes, per-encoder layer lists
//! and multiply-accumulate accounting.

use std::collections::BTreeSet;
use std::fmt;

use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};
use crate::reuse_opt::ReusePattern;

fn default_true() -> bool {
    true
}
fn default_patch_dim() -> usize {
    768
}
fn default_classes() -> usize {
    1000
}

/// Shape of a transformer workload.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct ModelConfig {
    pub name: String,
    /// Embedding dimension.
    pub d: usize,
    /// Tokens per input, class token included.
    pub t: usize,
    pub mlp_ratio: f64,
    pub n_encoders: usize,
    pub n_heads: usize,
    pub weight_bits: u32,
    pub input_bits: u32,
    pub input_split_bits: u32,
    /// Account for the patch embedding and classifier head.
    #[serde(default = "default_true")]
    pub include_stem: bool,
    /// Flattened patch size fed to the patch embedding.
    #[serde(default = "default_patch_dim")]
    pub patch_dim: usize,
    #[serde(default = "default_classes")]
    pub n_classes: usize,
}

impl ModelConfig {
    pub fn validate(&self) -> Result<()> {
        let bad = |m: String| Err(Error::InvalidConfig(format!("{}: {m}", self.name)));
        for (field, v) in [
            ("d", self.d),
            ("t", self.t),
            ("n_encoders", self.n_encoders),
            ("n_heads", self.n_heads),
        ] {
            if v == 0 {
                return bad(format!("{field} must be >= 1"));
            }
        }
        if self.weight_bits == 0 || self.input_bits == 0 || self.input_split_bits == 0 {
            return bad("bit widths must be >= 1".into());
        }
        if self.d % self.n_heads != 0 {
            return bad(format!(
                "d={} is not divisible by n_heads={}",
                self.d, self.n_heads
            ));
        }
        if self.input_bits % self.input_split_bits != 0 {
            return bad(format!(
                "input_split_bits={} does not divide input_bits={}",
                self.input_split_bits, self.input_bits
            ));
        }
        if !(self.mlp_ratio.is_finite() && self.mlp_ratio > 0.0) || self.mlp_hidden() == 0 {
            return bad(format!("mlp_ratio={} is not positive", self.mlp_ratio));
        }
        if self.include_stem && (self.patch_dim == 0 || self.n_classes == 0) {
            return bad("stem dimensions must be >= 1".into());
        }
        Ok(())
    }

    pub fn head_dim(&self) -> usize {
        self.d / self.n_heads
    }

    pub fn mlp_hidden(&self) -> usize {
        (self.mlp_ratio * self.d as f64).round() as usize
    }

    /// Number of bit-serial input cycles per crossbar read.
    pub fn input_cycles(&self) -> u32 {
        self.input_bits / self.input_split_bits
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, PartialOrd, Ord, Hash, Serialize, Deserialize)]
#[serde(rename_all = "SCREAMING_SNAKE_CASE")]
pub enum LayerKind {
    FcQ,
    FcK,
    FcV,
    MatmulQkt,
    Softmax,
    MatmulSv,
    FcProj,
    FcMlp1,
    FcMlp2,
    TbFc,
    PatchEmbed,
    Classifier,
}

impl LayerKind {
    pub const ALL: [LayerKind; 12] = [
        LayerKind::FcQ,
        LayerKind::FcK,
        LayerKind::FcV,
        LayerKind::MatmulQkt,
        LayerKind::Softmax,
        LayerKind::MatmulSv,
        LayerKind::FcProj,
        LayerKind::FcMlp1,
        LayerKind::FcMlp2,
        LayerKind::TbFc,
        LayerKind::PatchEmbed,
        LayerKind::Classifier,
    ];

    /// Dynamic matmuls whose operands are written into crossbars per inference.
    pub fn is_matmul(self) -> bool {
        matches!(self, LayerKind::MatmulQkt | LayerKind::MatmulSv)
    }

    pub fn is_mappable(self) -> bool {
        self != LayerKind::Softmax
    }

    /// Stages 1 to 5 of the encoder schedule.
    pub fn is_attention(self) -> bool {
        matches!(
            self,
            LayerKind::FcQ
                | LayerKind::FcK
                | LayerKind::FcV
                | LayerKind::MatmulQkt
                | LayerKind::Softmax
                | LayerKind::MatmulSv
        )
    }

    pub fn block(self) -> Block {
        match self {
            k if k.is_attention() => Block::Attn,
            LayerKind::TbFc => Block::Tb,
            LayerKind::FcProj => Block::Proj,
            LayerKind::FcMlp1 | LayerKind::FcMlp2 => Block::Mlp,
            _ => Block::Stem,
        }
    }

    pub fn as_str(self) -> &'static str {
        match self {
            LayerKind::FcQ => "FC_Q",
            LayerKind::FcK => "FC_K",
            LayerKind::FcV => "FC_V",
            LayerKind::MatmulQkt => "MATMUL_QKT",
            LayerKind::Softmax => "SOFTMAX",
            LayerKind::MatmulSv => "MATMUL_SV",
            LayerKind::FcProj => "FC_PROJ",
            LayerKind::FcMlp1 => "FC_MLP1",
            LayerKind::FcMlp2 => "FC_MLP2",
            LayerKind::TbFc => "TB_FC",
            LayerKind::PatchEmbed => "PATCH_EMBED",
            LayerKind::Classifier => "CLASSIFIER",
        }
    }
}

impl fmt::Display for LayerKind {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        f.write_str(self.as_str())
    }
}

/// Coarse blocks used for cost breakdowns.
#[derive(Debug, Clone, Copy, PartialEq, Eq, PartialOrd, Ord, Hash, Serialize, Deserialize)]
pub enum Block {
    Attn,
    Tb,
    Proj,
    Mlp,
    Stem,
    /// Auxiliary token-importance predictors (token pruning only).
    Predictor,
}

impl Block {
    pub const ALL: [Block; 6] = [
        Block::Attn,
        Block::Tb,
        Block::Proj,
        Block::Mlp,
        Block::Stem,
        Block::Predictor,
    ];

    pub fn as_str(self) -> &'static str {
        match self {
            Block::Attn => "Attn",
            Block::Tb => "TB",
            Block::Proj => "Proj",
            Block::Mlp => "MLP",
            Block::Stem => "Stem",
            Block::Predictor => "Predictor",
        }
    }
}

#[derive(Debug, Clone, PartialEq, Eq, Serialize, Deserialize)]
pub struct LayerSpec {
    pub kind: LayerKind,
    pub in_dim: usize,
    pub out_dim: usize,
    /// Tokens streamed through the layer.
    pub t_l: usize,
    pub per_head: bool,
    pub requires_write: bool,
    /// Parallel instances of the layer (heads for per-head matmuls, otherwise 1).
    pub copies: usize,
}

impl LayerSpec {
    fn fc(kind: LayerKind, in_dim: usize, out_dim: usize, t_l: usize) -> Self {
        Self {
            kind,
            in_dim,
            out_dim,
            t_l,
            per_head: false,
            requires_write: false,
            copies: 1,
        }
    }

    fn matmul(kind: LayerKind, in_dim: usize, out_dim: usize, t_l: usize, heads: usize) -> Self {
        Self {
            kind,
            in_dim,
            out_dim,
            t_l,
            per_head: true,
            requires_write: true,
            copies: heads,
        }
    }

    pub fn mac_count(&self) -> u64 {
        if self.kind == LayerKind::Softmax {
            return 0;
        }
        (self.t_l as u64) * (self.in_dim as u64) * (self.out_dim as u64) * (self.copies as u64)
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct EncoderSpec {
    pub index: usize,
    pub reuses_attention: bool,
    pub reuse_source: Option<usize>,
    pub n_heads: usize,
    pub layers: Vec<LayerSpec>,
}

impl EncoderSpec {
    pub fn mac_count(&self) -> u64 {
        self.layers.iter().map(LayerSpec::mac_count).sum()
    }

    pub fn tokens(&self) -> usize {
        self.layers.first().map(|l| l.t_l).unwrap_or(0)
    }
}

/// A built model: encoders in order plus optional stem layers.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct ModelSpec {
    pub name: String,
    pub encoders: Vec<EncoderSpec>,
    pub stem: Vec<LayerSpec>,
    pub weight_bits: u32,
    pub input_cycles: u32,
}

impl ModelSpec {
    pub fn n_reuse(&self) -> usize {
        self.encoders.iter().filter(|e| e.reuses_attention).count()
    }

    pub fn reuse_set(&self) -> Vec<usize> {
        self.encoders
            .iter()
            .filter(|e| e.reuses_attention)
            .map(|e| e.index)
            .collect()
    }

    pub fn mac_count(&self) -> u64 {
        self.encoders.iter().map(EncoderSpec::mac_count).sum::<u64>()
            + self.stem.iter().map(LayerSpec::mac_count).sum::<u64>()
    }

    /// All layers, stem first then encoders, with the owning encoder index.
    pub fn layers(&self) -> impl Iterator<Item = (Option<usize>, &LayerSpec)> {
        self.stem.iter().map(|l| (None, l)).chain(
            self.encoders
                .iter()
                .flat_map(|e| e.layers.iter().map(move |l| (Some(e.index), l))),
        )
    }
}

pub fn build_encoder(cfg: &ModelConfig, reuses: bool) -> EncoderSpec {
    build_encoder_with_tokens(cfg, reuses, cfg.t)
}

/// Same as [`build_encoder`] with an explicit token count (token pruning).
pub fn build_encoder_with_tokens(cfg: &ModelConfig, reuses: bool, t: usize) -> EncoderSpec {
    let d = cfg.d;
    let dh = cfg.head_dim();
    let hidden = cfg.mlp_hidden();
    let mut layers = Vec::with_capacity(9);
    if reuses {
        layers.push(LayerSpec::fc(LayerKind::TbFc, d, d, t));
    } else {
        layers.push(LayerSpec::fc(LayerKind::FcQ, d, d, t));
        layers.push(LayerSpec::fc(LayerKind::FcK, d, d, t));
        layers.push(LayerSpec::fc(LayerKind::FcV, d, d, t));
        layers.push(LayerSpec::matmul(LayerKind::MatmulQkt, dh, t, t, cfg.n_heads));
        layers.push(LayerSpec {
            kind: LayerKind::Softmax,
            in_dim: t,
            out_dim: t,
            t_l: t,
            per_head: false,
            requires_write: false,
            copies: 1,
        });
        layers.push(LayerSpec::matmul(LayerKind::MatmulSv, t, dh, t, cfg.n_heads));
    }
    layers.push(LayerSpec::fc(LayerKind::FcProj, d, d, t));
    layers.push(LayerSpec::fc(LayerKind::FcMlp1, d, hidden, t));
    layers.push(LayerSpec::fc(LayerKind::FcMlp2, hidden, d, t));
    EncoderSpec {
        index: 0,
        reuses_attention: reuses,
        reuse_source: None,
        n_heads: cfg.n_heads,
        layers,
    }
}

fn stem_layers(cfg: &ModelConfig) -> Vec<LayerSpec> {
    if !cfg.include_stem {
        return Vec::new();
    }
    vec![
        LayerSpec::fc(LayerKind::PatchEmbed, cfg.patch_dim, cfg.d, cfg.t),
        // only the class token reaches the head
        LayerSpec::fc(LayerKind::Classifier, cfg.d, cfg.n_classes, 1),
    ]
}

/// Reuse source for every encoder in `reuse_set`: the nearest preceding
/// encoder that computes its own attention.
pub fn reuse_sources(n_encoders: usize, reuse_set: &[usize]) -> Result<Vec<Option<usize>>> {
    let set: BTreeSet<usize> = reuse_set.iter().copied().collect();
    if set.len() != reuse_set.len() {
        return Err(Error::InvalidPattern(format!(
            "duplicate indices in {reuse_set:?}"
        )));
    }
    if set.contains(&0) {
        return Err(Error::InvalidPattern(
            "encoder 0 has no preceding attention to reuse".into(),
        ));
    }
    if let Some(&bad) = set.iter().find(|&&i| i >= n_encoders) {
        return Err(Error::InvalidPattern(format!(
            "index {bad} out of range for {n_encoders} encoders"
        )));
    }
    let mut last_own = None;
    Ok((0..n_encoders)
        .map(|i| {
            if set.contains(&i) {
                last_own
            } else {
                last_own = Some(i);
                None
            }
        })
        .collect())
}

pub fn build_model(cfg: &ModelConfig, pattern: &ReusePattern) -> Result<ModelSpec> {
    build_model_with_tokens(cfg, pattern, |_| cfg.t)
}

/// Builds a model whose encoder `i` processes `tokens(i)` tokens.
pub fn build_model_with_tokens(
    cfg: &ModelConfig,
    pattern: &ReusePattern,
    tokens: impl Fn(usize) -> usize,
) -> Result<ModelSpec> {
    cfg.validate()?;
    let sources = reuse_sources(cfg.n_encoders, &pattern.reuse_set)?;
    let encoders = sources
        .iter()
        .enumerate()
        .map(|(i, src)| {
            let mut enc = build_encoder_with_tokens(cfg, src.is_some(), tokens(i));
            enc.index = i;
            enc.reuse_source = *src;
            enc
        })
        .collect();
    Ok(ModelSpec {
        name: cfg.name.clone(),
        encoders,
        stem: stem_layers(cfg),
        weight_bits: cfg.weight_bits,
        input_cycles: cfg.input_cycles(),
    })
}

/// Multiply-accumulates per inference; one MAC counts as one operation.
pub fn mac_count(cfg: &ModelConfig, pattern: &ReusePattern) -> u64 {
    let reusing: BTreeSet<usize> = pattern.reuse_set.iter().copied().collect();
    let encoders: u64 = (0..cfg.n_encoders)
        .map(|i| build_encoder(cfg, reusing.contains(&i)).mac_count())
        .sum();
    encoders + stem_layers(cfg).iter().map(LayerSpec::mac_count).sum::<u64>()
}
