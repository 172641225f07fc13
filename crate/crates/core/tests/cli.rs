mod common;

use std::path::{Path, PathBuf};
use std::process::{Command, Output};
use std::sync::OnceLock;

use common::{check_identities, parse_table};
use procurement_core::cli::manifest::{Manifest, MANIFEST_FILE};
use procurement_core::cli::stages::{read_json, SimulationResults, SIMULATION_FILE};
use procurement_core::counterfactual::ComparisonTable;

const SMALL_SPEC: &str =
    r#"{"n_states": 10, "n_months": 2, "draws": {"n_draws": 50, "method": "pseudo", "income_log_sd": 0.5}}"#;

const PIPELINE_ARGS: [&str; 14] = [
    "pipeline",
    "--markets",
    "out/markets.csv",
    "--auctions",
    "out/auctions.csv",
    "--out",
    "out",
    "--seed",
    "11",
    "--draws",
    "10",
    "--consumer-draws",
    "40",
    "--format=csv",
];

fn procsim(args: &[&str], dir: &Path) -> Output {
    Command::new(env!("CARGO_BIN_EXE_procsim"))
        .args(args)
        .current_dir(dir)
        .env_remove("PROCSIM_OUT_DIR")
        .output()
        .expect("spawn procsim")
}

fn stdout(o: &Output) -> String {
    String::from_utf8_lossy(&o.stdout).into_owned()
}

fn stderr(o: &Output) -> String {
    String::from_utf8_lossy(&o.stderr).into_owned()
}

fn generated_dir() -> tempfile::TempDir {
    let dir = tempfile::tempdir().unwrap();
    std::fs::write(dir.path().join("spec.json"), SMALL_SPEC).unwrap();
    let o = procsim(&["generate", "--spec", "spec.json", "--out", "out", "--seed", "11"], dir.path());
    assert_eq!(o.status.code(), Some(0), "{}", stderr(&o));
    dir
}

/// One completed pipeline run, shared read-only across tests.
fn finished() -> &'static Path {
    static DIR: OnceLock<tempfile::TempDir> = OnceLock::new();
    DIR.get_or_init(|| {
        let dir = generated_dir();
        let o = procsim(&PIPELINE_ARGS, dir.path());
        assert_eq!(o.status.code(), Some(0), "{}", stderr(&o));
        dir
    })
    .path()
}

/// A private copy of the finished run for tests that modify files.
fn finished_copy() -> tempfile::TempDir {
    let dir = tempfile::tempdir().unwrap();
    copy_dir(finished(), dir.path());
    dir
}

fn copy_dir(from: &Path, to: &Path) {
    std::fs::create_dir_all(to).unwrap();
    for entry in std::fs::read_dir(from).unwrap() {
        let entry = entry.unwrap();
        let target = to.join(entry.file_name());
        if entry.file_type().unwrap().is_dir() {
            copy_dir(&entry.path(), &target);
        } else {
            std::fs::copy(entry.path(), target).unwrap();
        }
    }
}

fn out(dir: &Path) -> PathBuf {
    dir.join("out")
}

#[test]
fn generate_writes_inputs() {
    let dir = generated_dir();
    for f in ["markets.csv", "auctions.csv"] {
        assert!(out(dir.path()).join(f).is_file(), "{f} missing");
    }
}

#[test]
fn generate_is_reproducible() {
    let a = generated_dir();
    let b = generated_dir();
    for f in ["markets.csv", "auctions.csv"] {
        let x = std::fs::read(out(a.path()).join(f)).unwrap();
        let y = std::fs::read(out(b.path()).join(f)).unwrap();
        assert!(x == y, "{f} differs between runs with the same seed");
    }
}

#[test]
fn missing_spec_is_a_usage_error() {
    let dir = tempfile::tempdir().unwrap();
    let o = procsim(&["generate", "--spec", "missing.json", "--out", "out"], dir.path());
    assert_eq!(o.status.code(), Some(2), "{}", stderr(&o));
    assert!(stderr(&o).contains("missing.json"));
}

#[test]
fn unknown_flag_is_a_usage_error() {
    let dir = tempfile::tempdir().unwrap();
    let o = procsim(&["pipeline", "--no-such-flag"], dir.path());
    assert_eq!(o.status.code(), Some(2));
}

#[test]
fn missing_markets_is_a_usage_error() {
    let dir = tempfile::tempdir().unwrap();
    let o = procsim(&["estimate-demand", "--markets", "nope.csv", "--out", "out"], dir.path());
    assert_eq!(o.status.code(), Some(2), "{}", stderr(&o));
}

#[test]
fn pipeline_records_every_stage() {
    let m = Manifest::load(&out(finished())).unwrap();
    let names: Vec<&str> = m.stages.iter().map(|s| s.name.as_str()).collect();
    assert_eq!(names, procurement_core::cli::STAGES.to_vec());
    for s in &m.stages {
        assert!(!s.inputs.is_empty() && !s.outputs.is_empty(), "{} has an empty record", s.name);
    }
    assert!(out(finished()).join(MANIFEST_FILE).is_file());
}

#[test]
fn rerun_skips_everything() {
    let dir = finished_copy();
    let o = procsim(&PIPELINE_ARGS, dir.path());
    assert_eq!(o.status.code(), Some(0), "{}", stderr(&o));
    let s = stdout(&o);
    assert!(s.contains("0 of 5 stages ran"), "{s}");
}

#[test]
fn resume_reruns_from_the_first_stale_stage() {
    let dir = finished_copy();
    std::fs::remove_file(out(dir.path()).join("costs.csv")).unwrap();
    std::fs::remove_file(out(dir.path()).join("supply.json")).unwrap();
    let o = procsim(&PIPELINE_ARGS, dir.path());
    assert_eq!(o.status.code(), Some(0), "{}", stderr(&o));
    let s = stdout(&o);
    assert!(s.contains("estimate-demand: up to date, skipped"), "{s}");
    for st in ["recover-costs", "fit-bids", "calibrate-rho", "simulate"] {
        assert!(s.contains(&format!("{st}: done")), "{st} did not rerun:\n{s}");
    }
    assert!(s.contains("4 of 5 stages ran"), "{s}");
}

#[test]
fn deleting_bid_model_reruns_the_last_three_stages() {
    let dir = finished_copy();
    std::fs::remove_file(out(dir.path()).join("bids.json")).unwrap();
    let o = procsim(&PIPELINE_ARGS, dir.path());
    assert_eq!(o.status.code(), Some(0), "{}", stderr(&o));
    let s = stdout(&o);
    for st in ["estimate-demand", "recover-costs"] {
        assert!(s.contains(&format!("{st}: up to date, skipped")), "{s}");
    }
    for st in ["fit-bids", "calibrate-rho", "simulate"] {
        assert!(s.contains(&format!("{st}: done")), "{s}");
    }
}

#[test]
fn changed_parameters_invalidate_the_manifest() {
    let dir = finished_copy();
    let mut args = PIPELINE_ARGS.to_vec();
    args[10] = "12";
    let o = procsim(&args, dir.path());
    assert_eq!(o.status.code(), Some(0), "{}", stderr(&o));
    let s = stdout(&o);
    assert!(s.contains("estimate-demand: up to date, skipped"), "{s}");
    assert!(s.contains("simulate: done"), "{s}");
    assert!(s.contains("1 of 5 stages ran"), "{s}");
}

#[test]
fn corrupted_intermediate_fails_with_its_name() {
    let dir = finished_copy();
    std::fs::write(out(dir.path()).join("demand.json"), "{ not json").unwrap();
    let o = procsim(
        &["recover-costs", "--markets", "out/markets.csv", "--out", "out", "--seed", "11", "--consumer-draws", "40"],
        dir.path(),
    );
    assert_eq!(o.status.code(), Some(1), "{}", stderr(&o));
    let e = stderr(&o);
    assert!(e.contains("demand.json"), "{e}");
    assert!(e.contains("recover-costs"), "{e}");
}

#[test]
fn tampered_simulation_is_rejected_by_report() {
    let dir = finished_copy();
    let p = out(dir.path()).join(SIMULATION_FILE);
    let mut text = std::fs::read_to_string(&p).unwrap();
    text.push('\n');
    std::fs::write(&p, text).unwrap();
    let o = procsim(&["report", "--out", "out"], dir.path());
    assert_eq!(o.status.code(), Some(1));
    assert!(stderr(&o).contains("manifest"), "{}", stderr(&o));
}

#[test]
fn report_tables_satisfy_accounting_identities() {
    let o = out(finished());
    for name in ["voucher_vs_auction", "auction_vs_predetermined", "voucher_vs_predetermined"] {
        let text = std::fs::read_to_string(o.join(format!("table_{name}.csv"))).unwrap();
        let rows = parse_table(&text);
        check_identities(&rows, 3).unwrap_or_else(|e| panic!("{name}: {e}"));
        for (metric, v) in &rows {
            let tol = 1e-12 * v[0].abs().max(v[1].abs()).max(1.0);
            assert!((v[2] - (v[1] - v[0])).abs() <= tol, "{name}/{metric}: diff is not alt - base");
        }
    }
    let sweep = std::fs::read_to_string(o.join("table_program_size.csv")).unwrap();
    let rows = parse_table(&sweep);
    let columns = rows[0].1.len();
    assert!(columns >= 2);
    check_identities(&rows, columns).unwrap();
    assert!(o.join("report.txt").is_file());
    assert!(o.join("long.csv").is_file());
}

#[test]
fn self_comparison_has_zero_differences() {
    let r: SimulationResults = read_json(&out(finished()).join(SIMULATION_FILE)).unwrap();
    for agg in [&r.auction, &r.voucher, &r.predetermined] {
        let t = ComparisonTable::new(agg, agg);
        for row in &t.rows {
            assert_eq!(row.diff, 0.0, "{}", row.metric);
            if let Some(p) = row.pct {
                assert_eq!(p, 0.0, "{}", row.metric);
            }
        }
    }
}

#[test]
fn json_format_writes_json_tables() {
    let dir = finished_copy();
    let o = procsim(&["report", "--out", "out", "--format", "json"], dir.path());
    assert_eq!(o.status.code(), Some(0), "{}", stderr(&o));
    let p = out(dir.path()).join("table_voucher_vs_auction.json");
    let t: ComparisonTable = serde_json::from_str(&std::fs::read_to_string(p).unwrap()).unwrap();
    assert_eq!((t.base.as_str(), t.alt.as_str()), ("voucher", "auction"));
}

#[test]
fn effective_config_is_echoed() {
    let dir = finished_copy();
    let o = procsim(&["report", "--out", "out", "--seed", "99"], dir.path());
    assert_eq!(o.status.code(), Some(0), "{}", stderr(&o));
    assert!(stdout(&o).contains("99"), "{}", stdout(&o));
}

#[test]
fn wic_choice_mode_is_validated_and_invalidates_simulation() {
    let dir = tempfile::tempdir().unwrap();
    let o = procsim(&["report", "--out", "out", "--wic-choice", "bogus"], dir.path());
    assert_eq!(o.status.code(), Some(2));

    let dir = finished_copy();
    let mut args = PIPELINE_ARGS.to_vec();
    args.extend(["--wic-choice", "argmax", "--no-report"]);
    let o = procsim(&args, dir.path());
    assert_eq!(o.status.code(), Some(0), "{}", stderr(&o));
    let s = stdout(&o);
    assert!(s.contains("wic_choice = argmax"), "{s}");
    assert!(s.contains("1 of 5 stages ran"), "{s}");
}
