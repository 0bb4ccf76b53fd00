use std::path::Path;
use std::process::{Command, Output};

const HEADER: &str =
    "scenario,model,device,n_reuse,pattern,energy_mJ,delay_ms,area_mm2,edap,tops_per_w,tops_per_mm2,edap_reduction";

fn reusim(args: &[&str], out: &Path) -> Output {
    Command::new(env!("CARGO_BIN_EXE_reusim"))
        .args(args)
        .arg("--out")
        .arg(out)
        .env_remove("REUSIM_OUT_DIR")
        .output()
        .expect("binary runs")
}

fn ok(o: &Output) -> String {
    assert!(o.status.success(), "stderr: {}", String::from_utf8_lossy(&o.stderr));
    String::from_utf8(o.stdout.clone()).unwrap()
}

#[test]
fn optimize_writes_csv_json_and_ranking() {
    let dir = tempfile::tempdir().unwrap();
    let stdout = ok(&reusim(&["optimize", "--target-delay", "9", "--target-delay", "7"], dir.path()));
    assert!(stdout.contains("deit-s-fefet/target-7ms"));
    let csv = std::fs::read_to_string(dir.path().join("optimize_deit-s_fefet.csv")).unwrap();
    let lines: Vec<&str> = csv.lines().collect();
    assert_eq!(lines[0], HEADER);
    assert_eq!(lines.len(), 4);
    let n_reuse: Vec<&str> = lines[1..].iter().map(|l| l.split(',').nth(3).unwrap()).collect();
    assert_eq!(n_reuse, ["0", "3", "5"]);
    assert!(dir.path().join("optimize_deit-s_fefet.json").exists());
    assert!(dir.path().join("optimize_deit-s_fefet_breakdown.csv").exists());
    let rank = std::fs::read_to_string(dir.path().join("optimize_deit-s_fefet_patterns.csv")).unwrap();
    assert!(rank.starts_with("target_delay_ms,n_reuse,rank,pattern,score"));
}

#[test]
fn simulate_sweeps_reuse_counts() {
    let dir = tempfile::tempdir().unwrap();
    ok(&reusim(
        &["simulate", "--model", "lv-vit-s", "--device", "hybrid", "--n-reuse", "0", "--n-reuse", "4", "--format", "csv"],
        dir.path(),
    ));
    let csv = std::fs::read_to_string(dir.path().join("simulate_lv-vit-s_fefet+sram.csv")).unwrap();
    assert_eq!(csv.lines().count(), 3);
    assert!(!dir.path().join("simulate_lv-vit-s_fefet+sram.json").exists());
}

#[test]
fn compare_lists_every_technique() {
    let dir = tempfile::tempdir().unwrap();
    let stdout = ok(&reusim(&["compare", "--target-delay", "7", "--scorer", "constant"], dir.path()));
    for t in ["baseline", "reuse/target-7ms", "weight-sharing-ws2", "token-pruning-p0p3"] {
        assert!(stdout.contains(t), "missing {t}");
    }
}

#[test]
fn reruns_are_byte_identical() {
    let (a, b) = (tempfile::tempdir().unwrap(), tempfile::tempdir().unwrap());
    let args = ["optimize", "--model", "lv-vit-s", "--target-delay", "10", "--seed", "3"];
    ok(&reusim(&args, a.path()));
    ok(&reusim(&args, b.path()));
    for f in ["optimize_lv-vit-s_fefet.csv", "optimize_lv-vit-s_fefet.json", "optimize_lv-vit-s_fefet_patterns.csv"] {
        assert_eq!(std::fs::read(a.path().join(f)).unwrap(), std::fs::read(b.path().join(f)).unwrap(), "{f}");
    }
}

#[test]
fn funcsim_reports_reuse_and_saves_activations() {
    let dir = tempfile::tempdir().unwrap();
    let acts = dir.path().join("acts.bin");
    let stdout = ok(&reusim(
        &["funcsim", "--reuse", "2,5", "--ideal", "--save-activations", acts.to_str().unwrap()],
        dir.path(),
    ));
    assert!(stdout.contains("attention computed 10 times for 12 encoders"));
    let summary: serde_json::Value =
        serde_json::from_str(&std::fs::read_to_string(dir.path().join("funcsim_fefet.json")).unwrap()).unwrap();
    assert_eq!(summary["stats"]["attention_calls"], 10);
    // the saved activations feed the CKA scorer
    let scorer = format!("cka:{}", acts.display());
    ok(&reusim(&["optimize", "--target-delay", "7", "--scorer", &scorer], dir.path()));
}

#[test]
fn bad_input_fails_cleanly() {
    let dir = tempfile::tempdir().unwrap();
    for args in [
        &["optimize", "--target-delay", "-1"][..],
        &["optimize", "--target-delay", "7", "--model", "gpt-9"][..],
        &["optimize", "--target-delay", "7", "--scorer", "oracle"][..],
        &["simulate", "--n-reuse", "12"][..],
        &["simulate", "--format", "xml"][..],
        &["optimize"][..],
    ] {
        let o = reusim(args, dir.path());
        assert!(!o.status.success(), "{args:?} should fail");
        assert!(!o.stderr.is_empty());
    }
}

#[test]
fn env_var_sets_output_dir() {
    let dir = tempfile::tempdir().unwrap();
    let o = Command::new(env!("CARGO_BIN_EXE_reusim"))
        .args(["simulate", "--n-reuse", "1", "--format", "json"])
        .env("REUSIM_OUT_DIR", dir.path())
        .output()
        .unwrap();
    ok(&o);
    assert!(dir.path().join("simulate_deit-s_fefet.json").exists());
}
