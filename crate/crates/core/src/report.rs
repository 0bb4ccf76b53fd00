//! Scenario orchestration and CSV / JSON report emission.

use std::collections::BTreeMap;
use std::fmt::Write as _;
use std::path::{Path, PathBuf};
use std::sync::Arc;

use rayon::prelude::*;
use serde::{Deserialize, Serialize};

use crate::config::SimConfig;
use crate::cost_model::{apply_token_pruning, apply_weight_sharing, breakdown, ModelCost};
use crate::error::{Error, Result};
use crate::registry::{Named, Registry};
use crate::reuse_opt::{build_scorer, optimize, PatternSelection, ReusePattern, ScorerInit};
use crate::workload::{build_model, Block};

pub const CSV_HEADER: &str =
    "scenario,model,device,n_reuse,pattern,energy_mJ,delay_ms,area_mm2,edap,tops_per_w,tops_per_mm2,edap_reduction";

pub const ACCURACY_FOOTNOTE: &str =
    "Accuracy columns are omitted: model quality needs full training and evaluation, which this tool does not perform.";

/// Environment variable that overrides the default output directory.
pub const OUT_DIR_ENV: &str = "REUSIM_OUT_DIR";

/// One report line.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct ReportRow {
    pub scenario: String,
    pub model: String,
    pub device: String,
    pub target_delay_ms: Option<f64>,
    pub feasible: bool,
    pub n_reuse: usize,
    pub pattern: String,
    pub energy_mj: f64,
    pub delay_ms: f64,
    pub area_mm2: f64,
    pub edap: f64,
    pub tops_per_w: f64,
    pub tops_per_mm2: f64,
    pub energy_reduction: f64,
    pub delay_reduction: f64,
    pub area_reduction: f64,
    pub edap_reduction: f64,
    /// Percent share per metric and block.
    pub breakdown: BTreeMap<String, BTreeMap<String, f64>>,
}

impl ReportRow {
    pub fn new(scenario: String, model: &str, device: &str, n_reuse: usize, pattern: String, cost: &ModelCost, baseline: &ModelCost) -> Self {
        let b = breakdown(cost);
        let mut shares = BTreeMap::new();
        for (metric, map) in [("energy", &b.energy), ("delay", &b.delay), ("area", &b.area), ("edap", &b.edap)] {
            let m: BTreeMap<String, f64> = map.iter().map(|(blk, v)| (blk.as_str().to_string(), v * 100.0)).collect();
            shares.insert(metric.to_string(), m);
        }
        Self {
            scenario,
            model: model.to_string(),
            device: device.to_string(),
            target_delay_ms: None,
            feasible: true,
            n_reuse,
            pattern,
            energy_mj: cost.energy_mj,
            delay_ms: cost.delay_ms,
            area_mm2: cost.area_mm2,
            edap: cost.edap,
            tops_per_w: cost.tops_per_w,
            tops_per_mm2: cost.tops_per_mm2,
            energy_reduction: baseline.energy_mj / cost.energy_mj,
            delay_reduction: baseline.delay_ms / cost.delay_ms,
            area_reduction: baseline.area_mm2 / cost.area_mm2,
            edap_reduction: baseline.edap / cost.edap,
            breakdown: shares,
        }
    }

    pub fn share(&self, metric: &str, block: Block) -> f64 {
        self.breakdown
            .get(metric)
            .and_then(|m| m.get(block.as_str()))
            .copied()
            .unwrap_or(0.0)
            / 100.0
    }
}

/// A model / device pair swept over delay targets.
#[derive(Debug, Clone)]
pub struct Scenario {
    pub id: String,
    pub config: SimConfig,
    pub target_delays: Vec<f64>,
    pub patterns: PatternSelection,
    pub scorer: String,
    pub seed: u64,
}

impl Scenario {
    pub fn new(config: SimConfig) -> Self {
        let id = format!("{}-{}", config.model.name, config.devices.label());
        Self {
            id,
            config,
            target_delays: Vec::new(),
            patterns: PatternSelection::parse("all").expect("builtin selection"),
            scorer: "cka".into(),
            seed: 0,
        }
    }

    pub fn validate(&self) -> Result<()> {
        if let Some(bad) = self.target_delays.iter().find(|d| !(d.is_finite() && **d > 0.0)) {
            return Err(Error::InvalidParameter(format!("target delay {bad} must be positive")));
        }
        self.config.model.validate()?;
        self.config.context().validate()
    }
}

fn fmt_ms(v: f64) -> String {
    let s = format!("{v}");
    s.replace('.', "p")
}

pub fn baseline_cost(cfg: &SimConfig) -> Result<ModelCost> {
    let model = build_model(&cfg.model, &ReusePattern::none())?;
    crate::cost_model::model_cost(&model, &cfg.context(), 0)
}

/// Baseline row plus one row per target delay, in target order.
pub fn run_scenario(s: &Scenario) -> Result<Vec<ReportRow>> {
    s.validate()?;
    let cfg = &s.config;
    let ctx = cfg.context();
    let device = cfg.devices.label();
    let baseline = baseline_cost(cfg)?;
    let mut rows = vec![ReportRow::new(
        format!("{}/baseline", s.id),
        &cfg.model.name,
        &device,
        0,
        ReusePattern::none().label(),
        &baseline,
        &baseline,
    )];
    let init = ScorerInit {
        n_encoders: cfg.model.n_encoders,
        seed: s.seed,
    };
    let scorer = build_scorer(&s.scorer, &init)?;
    let targets: Vec<ReportRow> = s
        .target_delays
        .par_iter()
        .map(|&target| {
            let res = optimize(&cfg.model, &ctx, target, &s.patterns, scorer.as_ref())?;
            let mut id = format!("{}/target-{}ms", s.id, fmt_ms(target));
            if !res.feasible() {
                id.push_str("-infeasible");
            }
            let mut row = ReportRow::new(id, &cfg.model.name, &device, res.optimal_n_reuse(), res.best.label(), &res.cost, &baseline);
            row.target_delay_ms = Some(target);
            row.feasible = res.feasible();
            Ok(row)
        })
        .collect::<Result<_>>()?;
    rows.extend(targets);
    Ok(rows)
}

/// A comparison technique applied on top of the baseline model.
pub trait Technique: Named + Send + Sync {
    fn apply(&self, s: &Scenario) -> Result<Vec<ReportRow>>;
}

struct AttentionReuse;
struct WeightSharing;
struct TokenPruning;

impl Named for AttentionReuse {
    fn name(&self) -> &str {
        "reuse"
    }
}

impl Technique for AttentionReuse {
    fn apply(&self, s: &Scenario) -> Result<Vec<ReportRow>> {
        let mut rows = run_scenario(s)?;
        rows.remove(0);
        for r in &mut rows {
            r.scenario = r.scenario.replacen(&s.id, &format!("{}/reuse", s.id), 1);
        }
        Ok(rows)
    }
}

impl Named for WeightSharing {
    fn name(&self) -> &str {
        "weight-sharing"
    }
}

impl Technique for WeightSharing {
    fn apply(&self, s: &Scenario) -> Result<Vec<ReportRow>> {
        let cfg = &s.config;
        let ws = cfg.baselines.weight_sharing;
        let model = build_model(&cfg.model, &ReusePattern::none())?;
        let out = apply_weight_sharing(&model, &cfg.context(), ws)?;
        Ok(vec![ReportRow::new(
            format!("{}/weight-sharing-ws{ws}", s.id),
            &cfg.model.name,
            &cfg.devices.label(),
            0,
            ReusePattern::none().label(),
            &out.transformed,
            &out.baseline,
        )])
    }
}

impl Named for TokenPruning {
    fn name(&self) -> &str {
        "token-pruning"
    }
}

impl Technique for TokenPruning {
    fn apply(&self, s: &Scenario) -> Result<Vec<ReportRow>> {
        let cfg = &s.config;
        let b = &cfg.baselines;
        let out = apply_token_pruning(&cfg.model, &ReusePattern::none(), &cfg.context(), b.prune_ratio, b.prune_from, b.overhead())?;
        Ok(vec![ReportRow::new(
            format!("{}/token-pruning-p{}", s.id, fmt_ms(b.prune_ratio)),
            &cfg.model.name,
            &cfg.devices.label(),
            0,
            ReusePattern::none().label(),
            &out.transformed,
            &out.baseline,
        )])
    }
}

pub fn technique_registry() -> Registry<dyn Technique> {
    let mut reg: Registry<dyn Technique> = Registry::new("technique");
    reg.register(Arc::new(AttentionReuse));
    reg.register(Arc::new(WeightSharing));
    reg.register(Arc::new(TokenPruning));
    reg
}

/// Baseline row followed by the rows of each named technique.
pub fn run_comparison(s: &Scenario, techniques: &[String]) -> Result<Vec<ReportRow>> {
    let reg = technique_registry();
    let techs = techniques.iter().map(|t| reg.get(t)).collect::<Result<Vec<_>>>()?;
    let mut rows = run_scenario(&Scenario {
        target_delays: Vec::new(),
        ..s.clone()
    })?;
    for t in techs {
        rows.extend(t.apply(s)?);
    }
    Ok(rows)
}

/// Conventions the numbers depend on, written at the top of the JSON report.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct ReportHeader {
    pub tool_version: String,
    pub units: BTreeMap<String, String>,
    pub tile_padding: bool,
    pub differential_columns: bool,
    pub input_serialization: bool,
    pub read_delay_pe_factor: bool,
    pub write_delay_pe_factor: bool,
    pub tb_accounting: String,
    pub include_stem: bool,
    pub tokens: usize,
    pub softmax_energy_pj_per_element: f64,
    pub softmax_delay_ns_per_element: f64,
    pub notes: Vec<String>,
    pub footnote: String,
}

impl ReportHeader {
    pub fn for_config(cfg: &SimConfig) -> Self {
        let units = [
            ("energy", "mJ"),
            ("delay", "ms"),
            ("area", "mm^2"),
            ("edap", "mJ*ms*mm^2"),
            ("breakdown", "percent"),
        ]
        .into_iter()
        .map(|(a, b)| (a.to_string(), b.to_string()))
        .collect();
        Self {
            tool_version: env!("CARGO_PKG_VERSION").to_string(),
            units,
            tile_padding: cfg.cost.mapping.tile_padding,
            differential_columns: cfg.cost.mapping.differential_columns,
            input_serialization: cfg.cost.input_serialization,
            read_delay_pe_factor: cfg.cost.read_delay_pe_factor,
            write_delay_pe_factor: cfg.cost.write_delay_pe_factor,
            tb_accounting: cfg.cost.tb_accounting.as_str().to_string(),
            include_stem: cfg.model.include_stem,
            tokens: cfg.model.t,
            softmax_energy_pj_per_element: cfg.softmax.energy_per_element_pj(),
            softmax_delay_ns_per_element: cfg.softmax.delay_per_element_ns(),
            notes: vec![
                "softmax unit constants are calibrated, not measured".into(),
                "energy totals carry a wide tolerance: the split between read, write and softmax energy is a modelling choice".into(),
                "TOPS counts one multiply-accumulate as one operation".into(),
            ],
            footnote: ACCURACY_FOOTNOTE.into(),
        }
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct ReportDocument {
    pub header: ReportHeader,
    pub rows: Vec<ReportRow>,
}

fn csv_field(s: &str) -> String {
    if s.contains([',', '"', '\n']) {
        format!("\"{}\"", s.replace('"', "\"\""))
    } else {
        s.to_string()
    }
}

pub fn to_csv(rows: &[ReportRow]) -> String {
    let mut out = String::from(CSV_HEADER);
    out.push('\n');
    for r in rows {
        writeln!(
            out,
            "{},{},{},{},{},{:.3},{:.2},{:.2},{:.2},{:.2},{:.5},{:.2}",
            csv_field(&r.scenario),
            csv_field(&r.model),
            csv_field(&r.device),
            r.n_reuse,
            csv_field(&r.pattern),
            r.energy_mj,
            r.delay_ms,
            r.area_mm2,
            r.edap,
            r.tops_per_w,
            r.tops_per_mm2,
            r.edap_reduction
        )
        .expect("writing to a String");
    }
    out
}

/// Long-format block shares: one line per (row, metric, block).
pub fn breakdown_csv(rows: &[ReportRow]) -> String {
    let mut out = String::from("scenario,n_reuse,metric,block,share_pct\n");
    for r in rows {
        for (metric, blocks) in &r.breakdown {
            for (block, v) in blocks {
                writeln!(out, "{},{},{metric},{block},{v:.2}", csv_field(&r.scenario), r.n_reuse).expect("writing to a String");
            }
        }
    }
    out
}

pub fn to_json(doc: &ReportDocument) -> String {
    serde_json::to_string_pretty(doc).expect("report rows serialize") + "\n"
}

pub fn from_json(text: &str) -> Result<ReportDocument> {
    serde_json::from_str(text).map_err(|e| Error::Parse {
        path: PathBuf::from("<json>"),
        msg: e.to_string(),
    })
}

#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub enum Format {
    Csv,
    Json,
    Both,
}

impl Format {
    pub fn parse(s: &str) -> Result<Self> {
        match s {
            "csv" => Ok(Self::Csv),
            "json" => Ok(Self::Json),
            "both" => Ok(Self::Both),
            other => Err(Error::InvalidParameter(format!("unknown format `{other}` (csv, json, both)"))),
        }
    }
}

/// Output directory: explicit choice, else the environment override, else `reports`.
pub fn resolve_out_dir(explicit: Option<&Path>) -> PathBuf {
    explicit
        .map(Path::to_path_buf)
        .or_else(|| std::env::var_os(OUT_DIR_ENV).map(PathBuf::from))
        .unwrap_or_else(|| PathBuf::from("reports"))
}

/// Writes `<stem>.csv` + `<stem>_breakdown.csv` and/or `<stem>.json`; returns the paths.
pub fn emit(doc: &ReportDocument, dir: &Path, stem: &str, format: Format) -> Result<Vec<PathBuf>> {
    std::fs::create_dir_all(dir).map_err(|e| Error::io(dir, e))?;
    let mut written = Vec::new();
    let mut put = |name: String, body: String| -> Result<()> {
        let p = dir.join(name);
        std::fs::write(&p, body).map_err(|e| Error::io(&p, e))?;
        written.push(p);
        Ok(())
    };
    if matches!(format, Format::Csv | Format::Both) {
        put(format!("{stem}.csv"), to_csv(&doc.rows))?;
        put(format!("{stem}_breakdown.csv"), breakdown_csv(&doc.rows))?;
    }
    if matches!(format, Format::Json | Format::Both) {
        put(format!("{stem}.json"), to_json(doc))?;
    }
    Ok(written)
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::presets;

    fn scenario(targets: &[f64]) -> Scenario {
        let mut s = Scenario::new(presets::config("deit-s", "fefet").unwrap());
        s.target_delays = targets.to_vec();
        s
    }

    #[test]
    fn empty_targets_give_baseline_only() {
        let rows = run_scenario(&scenario(&[])).unwrap();
        assert_eq!(rows.len(), 1);
        assert_eq!(rows[0].edap_reduction, 1.0);
        assert_eq!(rows[0].n_reuse, 0);
    }

    #[test]
    fn infeasible_target_is_flagged() {
        let rows = run_scenario(&scenario(&[0.5, 9.0])).unwrap();
        assert_eq!(rows.len(), 3);
        assert!(!rows[1].feasible && rows[1].scenario.ends_with("-infeasible"));
        assert!(rows[2].feasible);
        assert!(run_scenario(&scenario(&[-1.0])).is_err());
    }

    #[test]
    fn csv_and_json_shapes() {
        let rows = run_scenario(&scenario(&[7.0])).unwrap();
        let csv = to_csv(&rows);
        let mut lines = csv.lines();
        assert_eq!(lines.next().unwrap(), CSV_HEADER);
        assert_eq!(lines.count(), 2);
        let doc = ReportDocument {
            header: ReportHeader::for_config(&scenario(&[]).config),
            rows,
        };
        assert_eq!(from_json(&to_json(&doc)).unwrap(), doc);
        assert!(breakdown_csv(&doc.rows).lines().count() > 1);
    }

    #[test]
    fn comparison_rows() {
        let mut s = scenario(&[7.0]);
        s.config.baselines.weight_sharing = 2;
        let names: Vec<String> = technique_registry().names();
        let rows = run_comparison(&s, &names).unwrap();
        assert_eq!(rows.len(), 4);
        let ws = rows.iter().find(|r| r.scenario.contains("weight-sharing")).unwrap();
        assert_eq!(ws.delay_ms, rows[0].delay_ms);
        assert!(ws.area_reduction > 1.0);
        assert!(run_comparison(&s, &["magic".into()]).is_err());
    }
}
