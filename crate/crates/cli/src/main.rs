use std::path::{Path, PathBuf};

use anyhow::{bail, Context, Result};
use clap::{Args, Parser, Subcommand};

use reusim::config::SimConfig;
use reusim::func_sim::{model_forward, tensor_io, toy_config, toy_input, CrossbarSetup, Execution, Simulator, ToyWeights};
use reusim::presets;
use reusim::report::{
    self, baseline_cost, emit, resolve_out_dir, Format, ReportDocument, ReportHeader, ReportRow, Scenario,
};
use reusim::reuse_opt::{
    build_scorer, cka_matrix, cost_with_pattern, score_all, tail_pattern, PatternSelection, ReusePattern, ScorerInit,
};
use reusim::workload::build_model;

#[derive(Parser)]
#[command(name = "reusim", version, about = "Attention-reuse cost model and crossbar simulator")]
struct Cli {
    #[command(subcommand)]
    cmd: Cmd,
}

#[derive(Args, Clone)]
struct Common {
    /// Model preset (deit-s, lv-vit-s, bert-base)
    #[arg(long)]
    model: Option<String>,
    /// Device preset: fefet, sram or hybrid
    #[arg(long)]
    device: Option<String>,
    /// TOML config overlaid on the calibrated defaults
    #[arg(long)]
    config: Option<PathBuf>,
    #[arg(long, default_value_t = 0)]
    seed: u64,
    /// Output directory (falls back to $REUSIM_OUT_DIR, then ./reports)
    #[arg(long)]
    out: Option<PathBuf>,
    /// csv, json or both
    #[arg(long, default_value = "both")]
    format: String,
}

#[derive(Subcommand)]
enum Cmd {
    /// Cost of each reuse count with the tail pattern
    Simulate {
        #[command(flatten)]
        common: Common,
        /// Reuse counts to price; all counts when omitted
        #[arg(long = "n-reuse")]
        n_reuse: Vec<usize>,
    },
    /// Smallest reuse count meeting each target delay, plus pattern ranking
    Optimize {
        #[command(flatten)]
        common: Common,
        #[arg(long = "target-delay", required = true)]
        target_delay: Vec<f64>,
        /// all, a family name, or an explicit reuse set like 1,3,5
        #[arg(long, default_value = "all")]
        patterns: String,
        /// cka, cka:<tensor file>, external:<csv>, constant
        #[arg(long, default_value = "cka")]
        scorer: String,
    },
    /// Toy-scale inference through simulated crossbars
    Funcsim {
        #[command(flatten)]
        common: Common,
        /// Reusing encoders, e.g. 4,8,10
        #[arg(long)]
        reuse: Option<String>,
        /// Skip device noise
        #[arg(long)]
        ideal: bool,
        /// Encoder-to-encoder weight correlation
        #[arg(long, default_value_t = 0.9)]
        rho: f64,
        /// Write per-encoder attention outputs for `--scorer cka:<file>`
        #[arg(long = "save-activations")]
        save_activations: Option<PathBuf>,
    },
    /// Attention reuse, weight sharing and token pruning side by side
    Compare {
        #[command(flatten)]
        common: Common,
        #[arg(long = "target-delay")]
        target_delay: Vec<f64>,
        #[arg(long, default_value = "all")]
        patterns: String,
        #[arg(long, default_value = "cka")]
        scorer: String,
        /// Techniques to include; all registered ones when omitted
        #[arg(long)]
        technique: Vec<String>,
    },
}

fn load_config(c: &Common) -> Result<SimConfig> {
    let mut cfg = match &c.config {
        Some(p) => SimConfig::load(p)?,
        None => presets::config("deit-s", "fefet")?,
    };
    if let Some(m) = &c.model {
        let include_stem = cfg.model.include_stem;
        cfg.model = presets::model(m)?;
        cfg.model.include_stem |= include_stem;
    }
    if let Some(d) = &c.device {
        cfg.devices = presets::devices(d)?;
    }
    cfg.noise.seed = c.seed;
    Ok(cfg)
}

fn write(c: &Common, cfg: &SimConfig, stem: &str, rows: Vec<ReportRow>) -> Result<()> {
    print_rows(&rows);
    let doc = ReportDocument {
        header: ReportHeader::for_config(cfg),
        rows,
    };
    let dir = resolve_out_dir(c.out.as_deref());
    for p in emit(&doc, &dir, stem, Format::parse(&c.format)?)? {
        println!("wrote {}", p.display());
    }
    Ok(())
}

fn print_rows(rows: &[ReportRow]) {
    println!(
        "{:<40} {:>3} {:<28} {:>8} {:>8} {:>8} {:>9} {:>6}",
        "scenario", "r", "pattern", "E(mJ)", "D(ms)", "A(mm2)", "EDAP", "red"
    );
    for r in rows {
        println!(
            "{:<40} {:>3} {:<28} {:>8.3} {:>8.2} {:>8.1} {:>9.2} {:>6.2}",
            r.scenario, r.n_reuse, r.pattern, r.energy_mj, r.delay_ms, r.area_mm2, r.edap, r.edap_reduction
        );
    }
}

fn stem(cmd: &str, cfg: &SimConfig) -> String {
    format!("{cmd}_{}_{}", cfg.model.name, cfg.devices.label())
}

fn simulate(c: &Common, n_reuse: &[usize]) -> Result<()> {
    let cfg = load_config(c)?;
    let n = cfg.model.n_encoders;
    let counts: Vec<usize> = if n_reuse.is_empty() { (0..n).collect() } else { n_reuse.to_vec() };
    if let Some(bad) = counts.iter().find(|&&r| r >= n) {
        bail!("n-reuse {bad} must be below the encoder count {n}");
    }
    let ctx = cfg.context();
    let base = baseline_cost(&cfg)?;
    let device = cfg.devices.label();
    let mut rows = Vec::new();
    for r in counts {
        let pattern = if r == 0 { ReusePattern::none() } else { tail_pattern(n, r) };
        let cost = cost_with_pattern(&cfg.model, &ctx, &pattern)?;
        let id = format!("{}-{}/n-reuse-{r}", cfg.model.name, device);
        rows.push(ReportRow::new(id, &cfg.model.name, &device, r, pattern.label(), &cost, &base));
    }
    write(c, &cfg, &stem("simulate", &cfg), rows)
}

fn scenario(c: &Common, targets: &[f64], patterns: &str, scorer: &str) -> Result<(SimConfig, Scenario)> {
    let cfg = load_config(c)?;
    let mut s = Scenario::new(cfg.clone());
    s.target_delays = targets.to_vec();
    s.patterns = PatternSelection::parse(patterns)?;
    s.scorer = scorer.to_string();
    s.seed = c.seed;
    Ok((cfg, s))
}

fn optimize_cmd(c: &Common, targets: &[f64], patterns: &str, scorer: &str) -> Result<()> {
    let (cfg, s) = scenario(c, targets, patterns, scorer)?;
    let rows = report::run_scenario(&s)?;
    for r in rows.iter().filter(|r| !r.feasible) {
        eprintln!(
            "warning: target {:.2} ms is below the fastest reachable delay {:.2} ms",
            r.target_delay_ms.unwrap_or(f64::NAN),
            r.delay_ms
        );
    }
    let stem = stem("optimize", &cfg);
    let ranking = rank_patterns(&s, &rows)?;
    let dir = resolve_out_dir(c.out.as_deref());
    std::fs::create_dir_all(&dir).with_context(|| format!("creating {}", dir.display()))?;
    let path = dir.join(format!("{stem}_patterns.csv"));
    std::fs::write(&path, ranking).with_context(|| format!("writing {}", path.display()))?;
    write(c, &cfg, &stem, rows)?;
    println!("wrote {}", path.display());
    Ok(())
}

/// Every candidate pattern per target with its score, best first.
fn rank_patterns(s: &Scenario, rows: &[ReportRow]) -> Result<String> {
    let n = s.config.model.n_encoders;
    let scorer = build_scorer(
        &s.scorer,
        &ScorerInit {
            n_encoders: n,
            seed: s.seed,
        },
    )?;
    let mut out = String::from("target_delay_ms,n_reuse,rank,pattern,score\n");
    for r in rows.iter().filter(|r| r.target_delay_ms.is_some() && r.n_reuse > 0) {
        let cands = s.patterns.candidates(n, r.n_reuse)?;
        let mut scored = score_all(&cands, scorer.as_ref())?;
        scored.sort_by(|a, b| a.1.total_cmp(&b.1).then_with(|| a.0.reuse_set.cmp(&b.0.reuse_set)));
        for (i, (p, sc)) in scored.iter().enumerate() {
            out.push_str(&format!(
                "{},{},{},{},{sc:.6}\n",
                r.target_delay_ms.unwrap_or_default(),
                r.n_reuse,
                i + 1,
                p.label()
            ));
        }
    }
    Ok(out)
}

fn compare(c: &Common, targets: &[f64], patterns: &str, scorer: &str, techniques: &[String]) -> Result<()> {
    let (cfg, s) = scenario(c, targets, patterns, scorer)?;
    let mut names = if techniques.is_empty() {
        report::technique_registry().names()
    } else {
        techniques.to_vec()
    };
    if targets.is_empty() && names.iter().any(|t| t == "reuse") {
        log::warn!("no --target-delay given, skipping attention reuse");
        names.retain(|t| t != "reuse");
    }
    let rows = report::run_comparison(&s, &names)?;
    write(c, &cfg, &stem("compare", &cfg), rows)
}

fn funcsim(c: &Common, reuse: Option<&str>, ideal: bool, rho: f64, save: Option<&Path>) -> Result<()> {
    let mut cfg = load_config(c)?;
    cfg.model = toy_config();
    if ideal {
        cfg.noise.enabled = false;
    }
    let pattern = match reuse {
        Some(s) => ReusePattern::parse_explicit(s)?,
        None => ReusePattern::none(),
    };
    let model = build_model(&cfg.model, &pattern)?;
    let weights = ToyWeights::generate(&cfg.model, rho, c.seed)?;
    let input = toy_input(&cfg.model, c.seed);

    let reference = model_forward(&model, &weights, input.view(), &mut Simulator::exact())?;
    let mut sim = Simulator::new(Execution::Crossbar(CrossbarSetup::from_config(&cfg)));
    let out = model_forward(&model, &weights, input.view(), &mut sim)?;

    let diff = &out.output - &reference.output;
    let max_err = diff.iter().fold(0.0f64, |m, v| m.max(v.abs()));
    let rms_ref = (reference.output.iter().map(|v| v * v).sum::<f64>() / reference.output.len() as f64).sqrt();
    let rel_rms = (diff.iter().map(|v| v * v).sum::<f64>() / diff.len() as f64).sqrt() / rms_ref;
    let cka = cka_matrix(&out.attention_outputs)?;

    println!("pattern {}  device {}  noise {}", pattern.label(), cfg.devices.label(), if cfg.noise.enabled { "on" } else { "off" });
    println!("attention computed {} times for {} encoders", sim.stats.attention_calls, model.encoders.len());
    println!("output error vs exact: max {max_err:.4}, relative rms {rel_rms:.4}");
    println!("adjacent-encoder CKA:");
    for i in 0..cka.nrows().saturating_sub(1) {
        println!("  {i}-{}: {:.4}", i + 1, cka[[i, i + 1]]);
    }

    let dir = resolve_out_dir(c.out.as_deref());
    std::fs::create_dir_all(&dir).with_context(|| format!("creating {}", dir.display()))?;
    let summary = serde_json::json!({
        "model": cfg.model.name,
        "device": cfg.devices.label(),
        "pattern": pattern.label(),
        "noise_enabled": cfg.noise.enabled,
        "seed": c.seed,
        "max_abs_error": max_err,
        "relative_rms_error": rel_rms,
        "stats": sim.stats,
        "cka": cka.outer_iter().map(|r| r.to_vec()).collect::<Vec<_>>(),
    });
    let path = dir.join(format!("funcsim_{}.json", cfg.devices.label()));
    std::fs::write(&path, serde_json::to_string_pretty(&summary)? + "\n")
        .with_context(|| format!("writing {}", path.display()))?;
    println!("wrote {}", path.display());
    if let Some(p) = save {
        tensor_io::write_matrices(p, &out.attention_outputs)?;
        println!("wrote {}", p.display());
    }
    Ok(())
}

fn main() -> Result<()> {
    env_logger::Builder::from_env(env_logger::Env::default().default_filter_or("warn")).init();
    let cli = Cli::parse();
    match &cli.cmd {
        Cmd::Simulate { common, n_reuse } => simulate(common, n_reuse),
        Cmd::Optimize {
            common,
            target_delay,
            patterns,
            scorer,
        } => optimize_cmd(common, target_delay, patterns, scorer),
        Cmd::Funcsim {
            common,
            reuse,
            ideal,
            rho,
            save_activations,
        } => funcsim(common, reuse.as_deref(), *ideal, *rho, save_activations.as_deref()),
        Cmd::Compare {
            common,
            target_delay,
            patterns,
            scorer,
            technique,
        } => compare(common, target_delay, patterns, scorer, technique),
    }
}
