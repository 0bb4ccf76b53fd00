//! Toy-scale encoder stack run either exactly or on simulated crossbars.

use std::collections::{BTreeMap, HashMap};

use ndarray::{Array1, Array2, ArrayView2};
use rand::SeedableRng;
use rand_chacha::ChaCha8Rng;
use rand_distr::{Distribution, StandardNormal};
use serde::{Deserialize, Serialize};

use super::crossbar::{program_matrix, MappedMatrix, NoiseForm, NoiseModel};
use super::ops::{attention_forward, gelu, layer_norm, tb_forward, MatmulEngine};
use super::quant::QuantizedMatrix;
use crate::config::SimConfig;
use crate::error::{Error, Result};
use crate::workload::{LayerKind, ModelConfig, ModelSpec};
use crate::xbar_map::{DeviceAssignment, DeviceParams};

const LN_EPS: f64 = 1e-6;

/// Small ViT-like shape used for functional simulation.
pub fn toy_config() -> ModelConfig {
    ModelConfig {
        name: "toy".into(),
        d: 64,
        t: 32,
        mlp_ratio: 4.0,
        n_encoders: 12,
        n_heads: 4,
        weight_bits: 8,
        input_bits: 8,
        input_split_bits: 1,
        include_stem: false,
        patch_dim: 768,
        n_classes: 1000,
    }
}

#[derive(Debug, Clone, PartialEq)]
pub struct EncoderWeights {
    pub wq: Array2<f64>,
    pub wk: Array2<f64>,
    pub wv: Array2<f64>,
    pub wproj: Array2<f64>,
    pub w1: Array2<f64>,
    pub w2: Array2<f64>,
    pub tb_w: Array2<f64>,
    pub tb_b: Array1<f64>,
}

#[derive(Debug, Clone, PartialEq)]
pub struct ToyWeights {
    pub encoders: Vec<EncoderWeights>,
}

fn gaussian_matrix(rng: &mut ChaCha8Rng, rows: usize, cols: usize, std: f64) -> Array2<f64> {
    Array2::from_shape_fn((rows, cols), |_| {
        let z: f64 = StandardNormal.sample(rng);
        z * std
    })
}

impl ToyWeights {
    /// Random weights whose encoder-to-encoder correlation is `rho`, so that
    /// nearby encoders behave alike and far-apart ones drift.
    pub fn generate(cfg: &ModelConfig, rho: f64, seed: u64) -> Result<Self> {
        cfg.validate()?;
        if !(0.0..1.0).contains(&rho) {
            return Err(Error::InvalidParameter(format!("rho must lie in [0, 1), got {rho}")));
        }
        let mut rng = ChaCha8Rng::seed_from_u64(seed);
        let d = cfg.d;
        let hid = cfg.mlp_hidden();
        let fresh = |rng: &mut ChaCha8Rng| -> Vec<Array2<f64>> {
            let sd = 1.0 / (d as f64).sqrt();
            vec![
                gaussian_matrix(rng, d, d, sd),
                gaussian_matrix(rng, d, d, sd),
                gaussian_matrix(rng, d, d, sd),
                gaussian_matrix(rng, d, d, 0.5 * sd),
                gaussian_matrix(rng, d, hid, sd),
                gaussian_matrix(rng, hid, d, 0.5 / (hid as f64).sqrt()),
            ]
        };
        let keep = (1.0 - rho * rho).sqrt();
        let mut prev: Option<Vec<Array2<f64>>> = None;
        let mut encoders = Vec::with_capacity(cfg.n_encoders);
        for _ in 0..cfg.n_encoders {
            let innov = fresh(&mut rng);
            let mats: Vec<Array2<f64>> = match prev {
                None => innov,
                Some(p) => p.iter().zip(innov).map(|(a, b)| a * rho + b * keep).collect(),
            };
            let tb_w = Array2::<f64>::eye(d) + gaussian_matrix(&mut rng, d, d, 0.2 / (d as f64).sqrt());
            encoders.push(EncoderWeights {
                wq: mats[0].clone(),
                wk: mats[1].clone(),
                wv: mats[2].clone(),
                wproj: mats[3].clone(),
                w1: mats[4].clone(),
                w2: mats[5].clone(),
                tb_w,
                tb_b: Array1::zeros(d),
            });
            prev = Some(mats);
        }
        Ok(Self { encoders })
    }
}

/// Gaussian token embeddings for the toy model.
pub fn toy_input(cfg: &ModelConfig, seed: u64) -> Array2<f64> {
    let mut rng = ChaCha8Rng::seed_from_u64(seed);
    gaussian_matrix(&mut rng, cfg.t, cfg.d, 1.0)
}

/// Device-level settings for crossbar execution.
#[derive(Debug, Clone, PartialEq)]
pub struct CrossbarSetup {
    pub devices: DeviceAssignment,
    pub xbar_size: usize,
    pub adc_bits: u32,
    pub weight_bits: u32,
    pub input_bits: u32,
    pub noise_enabled: bool,
    pub form: NoiseForm,
    pub seed: u64,
    pub read_var: Option<f64>,
    pub write_var: Option<f64>,
}

impl CrossbarSetup {
    pub fn from_config(cfg: &SimConfig) -> Self {
        Self {
            devices: cfg.devices.clone(),
            xbar_size: cfg.tiles.xbar_size,
            adc_bits: cfg.tiles.adc_bits,
            weight_bits: cfg.model.weight_bits,
            input_bits: cfg.model.input_bits,
            noise_enabled: cfg.noise.enabled,
            form: cfg.noise.form,
            seed: cfg.noise.seed,
            read_var: cfg.noise.read_var,
            write_var: cfg.noise.write_var,
        }
    }

    fn noise_for(&self, dev: &DeviceParams) -> NoiseModel {
        if !self.noise_enabled {
            return NoiseModel {
                seed: self.seed,
                ..NoiseModel::ideal(self.adc_bits)
            };
        }
        // overrides only touch devices that vary at all
        let pick = |base: f64, o: Option<f64>| if base > 0.0 { o.unwrap_or(base) } else { 0.0 };
        NoiseModel {
            read_var: pick(dev.read_var, self.read_var),
            write_var: pick(dev.write_var, self.write_var),
            adc_bits: self.adc_bits,
            seed: self.seed,
            form: self.form,
        }
    }
}

#[derive(Debug, Clone, PartialEq)]
pub enum Execution {
    Exact,
    Crossbar(CrossbarSetup),
}

/// Counters collected while simulating.
#[derive(Debug, Clone, Default, PartialEq, Serialize, Deserialize)]
pub struct SimStats {
    pub attention_calls: usize,
    pub mvm_calls: BTreeMap<LayerKind, usize>,
    /// Crossbar products whose device has non-zero read variation.
    pub noisy_mvm_calls: BTreeMap<LayerKind, usize>,
    pub programming_events: BTreeMap<LayerKind, usize>,
}

/// Execution state: static layers are programmed once and kept, attention
/// matmul operands are re-programmed on every use.
pub struct Simulator {
    exec: Execution,
    rng: ChaCha8Rng,
    programmed: HashMap<(usize, LayerKind), MappedMatrix>,
    pub stats: SimStats,
}

impl Simulator {
    pub fn new(exec: Execution) -> Self {
        let seed = match &exec {
            Execution::Exact => 0,
            Execution::Crossbar(s) => s.seed,
        };
        Self {
            exec,
            rng: ChaCha8Rng::seed_from_u64(seed),
            programmed: HashMap::new(),
            stats: SimStats::default(),
        }
    }

    pub fn exact() -> Self {
        Self::new(Execution::Exact)
    }

    fn program(&mut self, kind: LayerKind, w: ArrayView2<'_, f64>) -> Result<MappedMatrix> {
        let Execution::Crossbar(setup) = &self.exec else {
            unreachable!("programming only happens in crossbar mode")
        };
        let dev = setup.devices.device(kind)?;
        let noise = setup.noise_for(dev);
        let q = QuantizedMatrix::quantize_symmetric(w, setup.weight_bits)?;
        *self.stats.programming_events.entry(kind).or_default() += 1;
        program_matrix(&q, dev, setup.xbar_size, &noise, &mut self.rng)
    }

    fn run(&mut self, kind: LayerKind, m: &MappedMatrix, x: ArrayView2<'_, f64>) -> Result<Array2<f64>> {
        let Execution::Crossbar(setup) = &self.exec else {
            unreachable!("crossbar reads only happen in crossbar mode")
        };
        let noise = setup.noise_for(setup.devices.device(kind)?);
        *self.stats.mvm_calls.entry(kind).or_default() += 1;
        if noise.read_var > 0.0 {
            *self.stats.noisy_mvm_calls.entry(kind).or_default() += 1;
        }
        let bits = setup.input_bits;
        m.forward(x, bits, &noise, &mut self.rng)
    }

    /// `x · w` for a static-weight layer of encoder `enc`.
    pub fn linear(
        &mut self,
        enc: usize,
        kind: LayerKind,
        x: ArrayView2<'_, f64>,
        w: ArrayView2<'_, f64>,
    ) -> Result<Array2<f64>> {
        if x.ncols() != w.nrows() {
            return Err(Error::Shape(format!(
                "{kind}: input width {} does not match weight rows {}",
                x.ncols(),
                w.nrows()
            )));
        }
        if self.exec == Execution::Exact {
            return Ok(x.dot(&w));
        }
        let m = match self.programmed.remove(&(enc, kind)) {
            Some(m) => m,
            None => self.program(kind, w)?,
        };
        let out = self.run(kind, &m, x);
        self.programmed.insert((enc, kind), m);
        out
    }

    /// `a · b` where `b` is produced at run time and written before use.
    pub fn dynamic(&mut self, kind: LayerKind, a: ArrayView2<'_, f64>, b: ArrayView2<'_, f64>) -> Result<Array2<f64>> {
        if self.exec == Execution::Exact {
            return Ok(a.dot(&b));
        }
        let m = self.program(kind, b)?;
        self.run(kind, &m, a)
    }
}

struct AttentionEngine<'a> {
    sim: &'a mut Simulator,
}

impl MatmulEngine for AttentionEngine<'_> {
    fn scores(&mut self, q: ArrayView2<'_, f64>, k_t: ArrayView2<'_, f64>) -> Result<Array2<f64>> {
        self.sim.dynamic(LayerKind::MatmulQkt, q, k_t)
    }

    fn weighted_sum(&mut self, s: ArrayView2<'_, f64>, v: ArrayView2<'_, f64>) -> Result<Array2<f64>> {
        self.sim.dynamic(LayerKind::MatmulSv, s, v)
    }
}

#[derive(Debug, Clone, PartialEq)]
pub struct ForwardOutput {
    pub output: Array2<f64>,
    /// Input to each encoder's projection: its own attention output, or the
    /// transformation-block output when it reuses attention.
    pub attention_outputs: Vec<Array2<f64>>,
}

/// Pre-norm encoder stack; reusing encoders feed the transformation block
/// with their source's attention output.
pub fn model_forward(
    model: &ModelSpec,
    weights: &ToyWeights,
    input: ArrayView2<'_, f64>,
    sim: &mut Simulator,
) -> Result<ForwardOutput> {
    if weights.encoders.len() != model.encoders.len() {
        return Err(Error::Shape(format!(
            "{} weight sets for {} encoders",
            weights.encoders.len(),
            model.encoders.len()
        )));
    }
    let mut x = input.to_owned();
    let mut own_attention: Vec<Option<Array2<f64>>> = vec![None; model.encoders.len()];
    let mut captured = Vec::with_capacity(model.encoders.len());
    for (enc, w) in model.encoders.iter().zip(&weights.encoders) {
        let i = enc.index;
        if w.wq.dim() != (x.ncols(), x.ncols()) {
            return Err(Error::Shape(format!("encoder {i}: weights do not match d={}", x.ncols())));
        }
        let attn = if enc.reuses_attention {
            let src = enc.reuse_source.ok_or(Error::MissingReuseSource(i))?;
            let a_src = own_attention
                .get(src)
                .and_then(|a| a.as_ref())
                .ok_or(Error::MissingReuseSource(i))?;
            let mut lin = |a: ArrayView2<'_, f64>, wt: ArrayView2<'_, f64>| sim.linear(i, LayerKind::TbFc, a, wt);
            tb_forward(a_src.view(), w.tb_w.view(), &w.tb_b, &mut lin)?
        } else {
            let h = layer_norm(x.view(), LN_EPS);
            let q = sim.linear(i, LayerKind::FcQ, h.view(), w.wq.view())?;
            let k = sim.linear(i, LayerKind::FcK, h.view(), w.wk.view())?;
            let v = sim.linear(i, LayerKind::FcV, h.view(), w.wv.view())?;
            sim.stats.attention_calls += 1;
            let a = attention_forward(q.view(), k.view(), v.view(), enc.n_heads, &mut AttentionEngine { sim: &mut *sim })?;
            own_attention[i] = Some(a.clone());
            a
        };
        x = x + sim.linear(i, LayerKind::FcProj, attn.view(), w.wproj.view())?;
        let h2 = layer_norm(x.view(), LN_EPS);
        let m = sim.linear(i, LayerKind::FcMlp1, h2.view(), w.w1.view())?.mapv(gelu);
        x = x + sim.linear(i, LayerKind::FcMlp2, m.view(), w.w2.view())?;
        captured.push(attn);
    }
    Ok(ForwardOutput {
        output: x,
        attention_outputs: captured,
    })
}
