//! End-to-end tests of the `eadyn` binary: the full pipeline on a small
//! instance, exit codes for the documented failure classes, and manifest
//! sidecars. Each test works in its own scratch directory.

use std::path::{Path, PathBuf};
use std::process::{Command, Output};

fn scratch(name: &str) -> PathBuf {
    let dir = std::env::temp_dir()
        .join("eadyn-cli-tests")
        .join(format!("{name}-{}", std::process::id()));
    if dir.exists() {
        std::fs::remove_dir_all(&dir).expect("clear scratch dir");
    }
    std::fs::create_dir_all(&dir).expect("create scratch dir");
    dir
}

fn eadyn(dir: &Path, args: &[&str]) -> Output {
    Command::new(env!("CARGO_BIN_EXE_eadyn"))
        .args(args)
        .current_dir(dir)
        .output()
        .expect("run eadyn")
}

fn assert_exit(out: &Output, code: i32, context: &str) {
    assert_eq!(
        out.status.code(),
        Some(code),
        "{context}: expected exit {code}\nstdout:\n{}\nstderr:\n{}",
        String::from_utf8_lossy(&out.stdout),
        String::from_utf8_lossy(&out.stderr),
    );
}

fn stdout_json(out: &Output) -> serde_json::Value {
    // Commands print the result object first and the manifest echo after it;
    // parse just the first JSON value.
    let text = String::from_utf8_lossy(&out.stdout);
    let mut de = serde_json::Deserializer::from_str(&text).into_iter();
    de.next()
        .expect("stdout has a JSON object")
        .expect("stdout JSON parses")
}

#[test]
fn gen_is_reproducible_and_writes_manifest() {
    let dir = scratch("gen");
    let args = [
        "gen", "--n", "40", "--d", "1.5", "--beta-frac", "0.5", "--seed", "7", "-o", "a.ea",
    ];
    assert_exit(&eadyn(&dir, &args), 0, "gen a");
    let again = [
        "gen", "--n", "40", "--d", "1.5", "--beta-frac", "0.5", "--seed", "7", "-o", "b.ea",
    ];
    assert_exit(&eadyn(&dir, &again), 0, "gen b");

    let a = std::fs::read(dir.join("a.ea")).expect("read a");
    let b = std::fs::read(dir.join("b.ea")).expect("read b");
    assert_eq!(a, b, "same parameters and seed give identical files");

    let manifest = std::fs::read_to_string(dir.join("a.ea.manifest.json")).expect("sidecar");
    let manifest: serde_json::Value = serde_json::from_str(&manifest).expect("manifest JSON");
    assert_eq!(manifest["command"], "gen");
    assert_eq!(manifest["seeds"][0], 7);
    assert_eq!(manifest["outputs"][0], "a.ea");
}

#[test]
fn beta_flags_are_mutually_exclusive_and_required() {
    let dir = scratch("beta-flags");
    let both = eadyn(
        &dir,
        &["gen", "--n", "10", "--d", "2", "--beta", "0.5", "--beta-frac", "0.5"],
    );
    assert_exit(&both, 2, "both beta flags");
    let neither = eadyn(&dir, &["gen", "--n", "10", "--d", "2"]);
    assert_exit(&neither, 2, "no beta flag");
}

#[test]
fn pipeline_on_a_sparse_instance() {
    let dir = scratch("pipeline");
    assert_exit(
        &eadyn(
            &dir,
            &["gen", "--n", "30", "--d", "1.5", "--beta-frac", "0.5", "--seed", "7", "-o", "inst.ea"],
        ),
        0,
        "gen",
    );

    let partition = eadyn(
        &dir,
        &["partition", "inst.ea", "--epsilon", "0.5", "-o", "part.json"],
    );
    assert_exit(&partition, 0, "partition");
    let report = stdout_json(&partition);
    assert_eq!(report["outcome"], "partition");
    assert_eq!(report["summary"]["n"], 30);
    assert!(dir.join("part.json").exists());

    let analyze = eadyn(
        &dir,
        &["analyze", "inst.ea", "--epsilon", "0.5", "-o", "analysis.csv"],
    );
    assert_exit(&analyze, 0, "analyze");
    let report = stdout_json(&analyze);
    assert_eq!(report["upsilon"]["witness"], serde_json::Value::Null);
    let csv = std::fs::read_to_string(dir.join("analysis.csv")).expect("analysis csv");
    assert!(csv.starts_with("# manifest: analysis.csv.manifest.json\n"));
    // Header plus one row per vertex.
    assert_eq!(csv.lines().count(), 2 + 30);

    let run = eadyn(
        &dir,
        &[
            "run", "inst.ea", "--partition", "part.json", "--steps", "40", "--stride", "10",
            "--init", "random", "--seed", "3", "-o", "trace.csv",
        ],
    );
    assert_exit(&run, 0, "run");
    let csv = std::fs::read_to_string(dir.join("trace.csv")).expect("trace csv");
    // Comment, header, initial row, and one row per stride.
    assert_eq!(csv.lines().count(), 2 + 1 + 4);

    let couple = eadyn(
        &dir,
        &[
            "couple", "inst.ea", "--partition", "part.json", "--experiment", "contraction",
            "--trials", "64", "--seed", "1", "-o", "couple.csv",
        ],
    );
    assert_exit(&couple, 0, "couple");
    let report = stdout_json(&couple);
    assert_eq!(report["trials"], 64);
    assert!(report["mean_delta"].is_f64());
    let csv = std::fs::read_to_string(dir.join("couple.csv")).expect("couple csv");
    assert_eq!(csv.lines().count(), 2 + 64);

    let coalesce = eadyn(
        &dir,
        &[
            "couple", "inst.ea", "--experiment", "coalescence", "--trials", "3", "--seed", "1",
            "-o", "coal.csv",
        ],
    );
    assert_exit(&coalesce, 0, "coalescence");
    let report = stdout_json(&coalesce);
    assert_eq!(report["trials"], 3);
}

#[test]
fn partition_failure_prints_witness_and_exits_one() {
    let dir = scratch("witness");
    assert_exit(
        &eadyn(
            &dir,
            &["gen", "--n", "30", "--d", "3.0", "--beta-frac", "0.9", "--seed", "1", "-o", "dense.ea"],
        ),
        0,
        "gen dense",
    );
    let partition = eadyn(
        &dir,
        &["partition", "dense.ea", "--epsilon", "0.5", "--d", "3.0", "-o", "part.json"],
    );
    assert_exit(&partition, 1, "partition failure");
    let report = stdout_json(&partition);
    assert_eq!(report["outcome"], "failure");
    assert!(report["witness"].is_object());
    assert!(
        !dir.join("part.json").exists(),
        "no partition file on failure"
    );
}

#[test]
fn spectral_handles_tiny_instances_and_rejects_large_ones() {
    let dir = scratch("spectral");
    assert_exit(
        &eadyn(
            &dir,
            &["gen", "--n", "8", "--d", "2.0", "--beta", "0.5", "--seed", "11", "-o", "tiny.ea"],
        ),
        0,
        "gen tiny",
    );
    assert_exit(
        &eadyn(
            &dir,
            &["partition", "tiny.ea", "--epsilon", "0.5", "--d", "2.0", "-o", "part.json"],
        ),
        0,
        "partition tiny",
    );
    let spectral = eadyn(&dir, &["spectral", "tiny.ea", "--partition", "part.json"]);
    assert_exit(&spectral, 0, "spectral tiny");
    let report = stdout_json(&spectral);
    assert_eq!(report["comparison"]["pass"], true);
    assert!(report["glauber"]["tau_rel"].is_f64());

    assert_exit(
        &eadyn(
            &dir,
            &["gen", "--n", "30", "--d", "1.5", "--beta", "0.5", "--seed", "7", "-o", "big.ea"],
        ),
        0,
        "gen big",
    );
    assert_exit(&eadyn(&dir, &["spectral", "big.ea"]), 2, "spectral cap");
}

#[test]
fn bounds_and_verify_report_pass() {
    let dir = scratch("bounds");
    let phi = eadyn(&dir, &["bounds", "phi", "--max-x", "4", "--points", "101"]);
    assert_exit(&phi, 0, "bounds phi");
    assert_eq!(stdout_json(&phi)["pass"], true);

    let mean = eadyn(
        &dir,
        &["bounds", "influence-mean", "--beta-frac", "0.8", "--d", "10"],
    );
    assert_exit(&mean, 0, "bounds influence-mean");
    let report = stdout_json(&mean);
    assert_eq!(report["uniqueness"], true);
    assert_eq!(report["monte_carlo"], serde_json::Value::Null);

    let verify = eadyn(&dir, &["verify", "--criterion", "6", "--quick", "--json"]);
    assert_exit(&verify, 0, "verify criterion 6");
    let results = stdout_json(&verify);
    assert_eq!(results[0]["id"], 6);
    assert_eq!(results[0]["passed"], true);
}

#[test]
fn unreadable_input_exits_one() {
    let dir = scratch("missing");
    let analyze = eadyn(&dir, &["analyze", "missing.ea", "--epsilon", "0.5"]);
    assert_exit(&analyze, 1, "missing instance file");
}
