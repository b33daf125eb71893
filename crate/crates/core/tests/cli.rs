use std::path::Path;
use std::process::{Command, Output};

use sglab::scenegen::read_manifest;
use sglab::trainer::RunRecord;

fn sglab(args: &[&str], cwd: &Path) -> Output {
    Command::new(env!("CARGO_BIN_EXE_sglab")).args(args).current_dir(cwd).env("SGLAB_WORKERS", "1").output().unwrap()
}

fn text(out: &Output) -> String {
    format!("{}{}", String::from_utf8_lossy(&out.stdout), String::from_utf8_lossy(&out.stderr))
}

const TINY: &[&str] = &[
    "--train-size", "48", "--test-size", "16", "--hidden-dim", "16", "--layers", "1", "--heads", "2",
    "--epochs", "1", "--batch-size", "16",
];

#[test]
fn generate_writes_a_216_color_manifest() {
    let dir = tempfile::tempdir().unwrap();
    let out = sglab(&["generate", "--out", "ds", "--n", "6", "--ratio", "0.5", "--train-size", "50", "--test-size", "10"], dir.path());
    assert!(out.status.success(), "{}", text(&out));
    let manifest = read_manifest(&dir.path().join("ds")).unwrap();
    assert_eq!(manifest.split_spec.n_colors, 216);
    assert_eq!(manifest.vocabulary.len(), 226);
    assert!(text(&out).contains("nmi(color, shape)"));
    // same config again verifies rather than overwrites
    let again = sglab(&["generate", "--out", "ds", "--n", "6", "--ratio", "0.5", "--train-size", "50", "--test-size", "10"], dir.path());
    assert!(again.status.success(), "{}", text(&again));
    let other = sglab(&["generate", "--out", "ds", "--n", "5", "--train-size", "50", "--test-size", "10"], dir.path());
    assert_eq!(other.status.code(), Some(1), "{}", text(&other));
}

#[test]
fn usage_errors_exit_with_2() {
    let dir = tempfile::tempdir().unwrap();
    let bad_ratio = sglab(&["generate", "--out", "ds", "--ratio", "1.5"], dir.path());
    assert_eq!(bad_ratio.status.code(), Some(2));
    assert!(text(&bad_ratio).contains("common_ratio"));
    let bad_axis = sglab(&["sweep", "--out", "sw", "--axis", "depth", "--values", "1"], dir.path());
    assert_eq!(bad_axis.status.code(), Some(2));
    assert!(text(&bad_axis).contains("unknown sweep axis"));
    assert_eq!(sglab(&["train"], dir.path()).status.code(), Some(2));
}

#[test]
fn sweep_analyze_report_end_to_end() {
    let dir = tempfile::tempdir().unwrap();
    let mut args = vec!["sweep", "--out", "sw", "--axis", "n_colors", "--values", "8,27", "--seeds", "2"];
    args.extend_from_slice(TINY);
    let out = sglab(&args, dir.path());
    assert!(out.status.success(), "{}", text(&out));
    let run = dir.path().join("sw/n_colors_27/seed_1");
    let first = RunRecord::load(&run).unwrap();
    assert!(first.is_complete());

    // a rerun skips completed cells
    let out = sglab(&args, dir.path());
    assert!(out.status.success(), "{}", text(&out));
    assert_eq!(RunRecord::load(&run).unwrap(), first);

    let out = sglab(&["analyze", "sw"], dir.path());
    assert!(out.status.success(), "{}", text(&out));
    assert!(text(&out).contains("pscore vs ood shape"));
    assert!(run.join("analysis.json").exists() && run.join("eval.csv").exists());

    let out = sglab(&["report", "sw", "--out", "rep"], dir.path());
    assert!(out.status.success(), "{}", text(&out));
    let svg = std::fs::read_to_string(dir.path().join("rep/accuracy_vs_n_colors.svg")).unwrap();
    assert!(svg.starts_with("<svg"));
    assert!(dir.path().join("rep/tables.md").exists());
}

#[test]
fn analyze_without_checkpoint_is_an_integrity_error() {
    let dir = tempfile::tempdir().unwrap();
    let mut args = vec!["train", "--out", "run"];
    args.extend_from_slice(TINY);
    let out = sglab(&args, dir.path());
    assert!(out.status.success(), "{}", text(&out));
    std::fs::remove_file(dir.path().join("run/model.ckpt")).unwrap();
    let out = sglab(&["analyze", "run"], dir.path());
    assert_eq!(out.status.code(), Some(1));
    assert!(text(&out).contains("integrity error: missing checkpoint"), "{}", text(&out));
}
