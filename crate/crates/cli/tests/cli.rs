//! Runs the `she` binary end to end on small scenarios.

use std::path::Path;
use std::process::{Command, Output};

fn she(args: &[&str]) -> Output {
    Command::new(env!("CARGO_BIN_EXE_she")).args(args).output().expect("binary runs")
}

fn stdout(out: &Output) -> String {
    String::from_utf8_lossy(&out.stdout).into_owned()
}

fn write_scenario(dir: &Path) -> String {
    let path = dir.join("scenario.toml");
    std::fs::write(
        &path,
        "preset = \"desk\"\n[array]\nnum_tx = 8\nnum_rx = 2\nnum_rf = 3\n[scenario]\nangle_uncertainty = 0.0\nnum_samples = 2\n[solver]\nmax_outer = 3\n",
    )
    .unwrap();
    path.to_string_lossy().into_owned()
}

#[test]
fn run_writes_results_and_reports_constraints() {
    let dir = tempfile::tempdir().unwrap();
    let scenario = write_scenario(dir.path());
    let out_dir = dir.path().join("run");
    let out = she(&["run", "--config", &scenario, "--seed", "4", "--out", out_dir.to_str().unwrap()]);
    assert!(out.status.success(), "{}", String::from_utf8_lossy(&out.stderr));
    let text = stdout(&out);
    assert!(text.contains("variant            SHE"));
    assert!(text.contains("constraints        satisfied"), "{text}");
    for file in ["summary.json", "beamformer.json", "config.json", "trace.csv", "inner_trace.csv"] {
        assert!(out_dir.join(file).exists(), "missing {file}");
    }

    let csv = dir.path().join("pattern.csv");
    let beamformer = out_dir.join("beamformer.json");
    let out = she(&[
        "pattern",
        "--beamformer",
        beamformer.to_str().unwrap(),
        "--out",
        csv.to_str().unwrap(),
        "--start",
        "-10",
        "--stop",
        "10",
        "--step",
        "0.5",
    ]);
    assert!(out.status.success(), "{}", String::from_utf8_lossy(&out.stderr));
    let rows = std::fs::read_to_string(&csv).unwrap();
    assert_eq!(rows.lines().count(), 1 + 41);
}

#[test]
fn baseline_accepts_variant_aliases() {
    let dir = tempfile::tempdir().unwrap();
    let scenario = write_scenario(dir.path());
    let out_dir = dir.path().join("conv");
    let out = she(&["baseline", "--variant", "conv-hbf", "--config", &scenario, "--out", out_dir.to_str().unwrap()]);
    assert!(out.status.success(), "{}", String::from_utf8_lossy(&out.stderr));
    assert!(stdout(&out).contains("variant            ConvHBF"));
}

#[test]
fn unknown_variant_exits_with_an_error() {
    let dir = tempfile::tempdir().unwrap();
    let out = she(&["baseline", "--variant", "nope", "--out", dir.path().to_str().unwrap()]);
    assert_eq!(out.status.code(), Some(1));
    assert!(String::from_utf8_lossy(&out.stderr).contains("nope"));
}

#[test]
fn validate_config_prints_the_resolved_scenario() {
    let dir = tempfile::tempdir().unwrap();
    let scenario = write_scenario(dir.path());
    let out = she(&["validate-config", "--config", &scenario]);
    assert!(out.status.success());
    let json: serde_json::Value = serde_json::from_str(&stdout(&out)).unwrap();
    assert_eq!(json["system"]["num_rf"], 3);
    assert_eq!(json["solver"]["max_outer"], 3);

    let bad = dir.path().join("bad.toml");
    std::fs::write(&bad, "[array]\nnum_rf = 1\n").unwrap();
    let out = she(&["validate-config", "--config", bad.to_str().unwrap()]);
    assert_eq!(out.status.code(), Some(1));
}

#[test]
fn sweep_writes_one_file_per_cell() {
    let dir = tempfile::tempdir().unwrap();
    let spec = dir.path().join("sweep.toml");
    std::fs::write(
        &spec,
        "[experiment]\nparameter = \"radar_sinr_db\"\nvalues = [0.0, 5.0]\nvariants = [\"SHE\", \"CommOnly-Conv\"]\ntrials = 1\n\n[base]\npreset = \"desk\"\n[base.array]\nnum_tx = 8\nnum_rx = 2\nnum_rf = 3\n[base.scenario]\nangle_uncertainty = 0.0\nnum_samples = 2\n[base.solver]\nmax_outer = 2\n",
    )
    .unwrap();
    let results = dir.path().join("results");
    let out = she(&["sweep", "--spec", spec.to_str().unwrap(), "--out", results.to_str().unwrap()]);
    assert!(out.status.success() || out.status.code() == Some(2), "{}", String::from_utf8_lossy(&out.stderr));
    let csvs = std::fs::read_dir(&results)
        .unwrap()
        .filter(|e| e.as_ref().unwrap().file_name().to_string_lossy().matches("__").count() == 2)
        .count();
    assert_eq!(csvs, 4);
    assert!(results.join("aggregate.json").exists());
    let text = stdout(&out);
    assert!(text.contains("SHE") && text.contains("CommOnly-Conv"));
}
