use std::path::{Path, PathBuf};
use std::process::{Command, Output};

fn bin() -> Command {
    Command::new(env!("CARGO_BIN_EXE_esrsim"))
}

fn bundled(name: &str) -> PathBuf {
    Path::new(env!("CARGO_MANIFEST_DIR"))
        .join("configs")
        .join(format!("{name}.json"))
}

fn run(kind: &str, config: &Path, out: &Path, extra: &[&str]) -> Output {
    bin()
        .arg(kind)
        .arg("--config")
        .arg(config)
        .arg("--out")
        .arg(out)
        .args(extra)
        .output()
        .expect("binary runs")
}

fn error_line(out: &Output) -> serde_json::Value {
    let text = String::from_utf8_lossy(&out.stderr);
    let line = text.lines().last().expect("stderr line");
    serde_json::from_str(line).unwrap_or_else(|e| panic!("not json ({e}): {line}"))
}

fn files(dir: &Path) -> Vec<(String, Vec<u8>)> {
    let mut v: Vec<_> = std::fs::read_dir(dir)
        .unwrap()
        .map(|e| {
            let e = e.unwrap();
            (
                e.file_name().to_string_lossy().into_owned(),
                std::fs::read(e.path()).unwrap(),
            )
        })
        .collect();
    v.sort();
    v
}

fn replay(dir: &Path, extra: &[&str]) -> (i32, serde_json::Value) {
    let out = bin().arg("replay").arg(dir).args(extra).output().unwrap();
    let report = serde_json::from_slice(&out.stdout).unwrap_or(serde_json::Value::Null);
    (out.status.code().unwrap(), report)
}

#[test]
fn sensitivity_run_writes_manifest_and_report() {
    let tmp = tempfile::tempdir().unwrap();
    let out = run("sensitivity", &bundled("sensitivity"), tmp.path(), &[]);
    assert!(out.status.success(), "{}", String::from_utf8_lossy(&out.stderr));
    let report: serde_json::Value =
        serde_json::from_slice(&std::fs::read(tmp.path().join("sensitivity.json")).unwrap()).unwrap();
    let n_min = report["n_min_formula"].as_f64().unwrap();
    assert!((n_min - 43.5).abs() < 1.0, "{n_min}");
    assert!((report["spins_per_sqrt_hz"].as_f64().unwrap() - 10.9).abs() < 0.05);
    let manifest: serde_json::Value =
        serde_json::from_slice(&std::fs::read(tmp.path().join("manifest.json")).unwrap()).unwrap();
    assert_eq!(manifest["experiment"], "sensitivity");
    assert_eq!(manifest["seed"], 1);
    assert_eq!(manifest["model_hash"], report["model_hash"]);
    assert_eq!(manifest["config_hash"].as_str().unwrap().len(), 64);
}

#[test]
fn runs_are_byte_identical_across_repeats_and_thread_counts() {
    for (kind, name) in [
        ("strain_map", "strain_map"),
        ("coupling_map", "coupling_map"),
        ("stats", "stats"),
    ] {
        let a = tempfile::tempdir().unwrap();
        let b = tempfile::tempdir().unwrap();
        let c = tempfile::tempdir().unwrap();
        assert!(run(kind, &bundled(name), a.path(), &["--threads", "1"])
            .status
            .success());
        assert!(run(kind, &bundled(name), b.path(), &["--threads", "4"])
            .status
            .success());
        assert!(run(kind, &bundled(name), c.path(), &[]).status.success());
        assert_eq!(files(a.path()), files(b.path()), "{kind}");
        assert_eq!(files(a.path()), files(c.path()), "{kind}");
    }
}

#[test]
fn missing_resonator_exits_with_schema_code_and_path() {
    let tmp = tempfile::tempdir().unwrap();
    let mut cfg: serde_json::Value = serde_json::from_slice(&std::fs::read(bundled("sensitivity")).unwrap()).unwrap();
    cfg.as_object_mut().unwrap().remove("resonator");
    let path = tmp.path().join("bad.json");
    std::fs::write(&path, cfg.to_string()).unwrap();
    let out = run("sensitivity", &path, &tmp.path().join("out"), &[]);
    assert_eq!(out.status.code(), Some(2));
    let err = error_line(&out);
    assert_eq!(err["error"], "schema");
    assert_eq!(err["code"], 2);
    assert!(err["message"].as_str().unwrap().contains("resonator"), "{err}");
    assert!(!tmp.path().join("out").exists());
}

#[test]
fn unknown_key_is_rejected_with_its_path() {
    let tmp = tempfile::tempdir().unwrap();
    let mut cfg: serde_json::Value = serde_json::from_slice(&std::fs::read(bundled("strain_map")).unwrap()).unwrap();
    cfg["resonator"]["q_extt"] = 3e4.into();
    let path = tmp.path().join("bad.json");
    std::fs::write(&path, cfg.to_string()).unwrap();
    let out = run("strain_map", &path, tmp.path(), &[]);
    assert_eq!(out.status.code(), Some(2));
    let err = error_line(&out);
    assert_eq!(err["path"], "resonator.q_extt");
    assert!(err["message"].as_str().unwrap().contains("q_extt"));
}

#[test]
fn subcommand_must_match_the_config() {
    let tmp = tempfile::tempdir().unwrap();
    let out = run("stats", &bundled("sensitivity"), tmp.path(), &[]);
    assert_eq!(out.status.code(), Some(2));
    assert_eq!(error_line(&out)["path"], "experiment");
}

#[test]
fn missing_config_file_is_an_io_error() {
    let tmp = tempfile::tempdir().unwrap();
    let out = run("stats", &tmp.path().join("absent.json"), tmp.path(), &[]);
    assert_eq!(out.status.code(), Some(4));
    assert_eq!(error_line(&out)["error"], "io");
}

#[test]
fn invalid_value_is_a_schema_error() {
    let tmp = tempfile::tempdir().unwrap();
    let mut cfg: serde_json::Value = serde_json::from_slice(&std::fs::read(bundled("stats")).unwrap()).unwrap();
    cfg["resonator"]["q_int"] = (-1.0).into();
    let path = tmp.path().join("bad.json");
    std::fs::write(&path, cfg.to_string()).unwrap();
    let out = run("stats", &path, tmp.path(), &[]);
    assert_eq!(out.status.code(), Some(2));
    assert_eq!(error_line(&out)["path"], "resonator");
}

#[test]
fn replay_of_untouched_results_matches() {
    let tmp = tempfile::tempdir().unwrap();
    assert!(run("coupling_map", &bundled("coupling_map"), tmp.path(), &[])
        .status
        .success());
    let (code, report) = replay(tmp.path(), &[]);
    assert_eq!(code, 0, "{report}");
    assert_eq!(report["mismatches"].as_array().unwrap().len(), 0);
    assert_eq!(report["config_hash_ok"], true);
    assert_eq!(report["files_checked"], 4);
}

#[test]
fn replay_locates_an_edited_csv_cell() {
    let tmp = tempfile::tempdir().unwrap();
    assert!(run("strain_map", &bundled("strain_map"), tmp.path(), &[])
        .status
        .success());
    let path = tmp.path().join("cut.csv");
    let text = std::fs::read_to_string(&path).unwrap();
    let mut lines: Vec<String> = text.lines().map(str::to_string).collect();
    let mut cells: Vec<String> = lines[7].split(',').map(str::to_string).collect();
    cells[1] = "1e-3".into();
    lines[7] = cells.join(",");
    std::fs::write(&path, lines.join("\n") + "\n").unwrap();
    let (code, report) = replay(tmp.path(), &[]);
    assert_eq!(code, 1);
    let m = report["mismatches"].as_array().unwrap();
    assert_eq!(m.len(), 1, "{report}");
    assert_eq!(m[0]["file"], "cut.csv");
    assert_eq!(m[0]["line"], 8);
    assert_eq!(m[0]["column"], "eps_h");
    assert_eq!(report["deterministic_mismatches"], 1);
}

#[test]
fn replay_with_another_seed_only_moves_stochastic_outputs() {
    let tmp = tempfile::tempdir().unwrap();
    assert!(run("coupling_map", &bundled("coupling_map"), tmp.path(), &[])
        .status
        .success());
    let (code, report) = replay(tmp.path(), &["--seed-override", "7"]);
    assert_eq!(code, 1);
    assert_eq!(report["deterministic_mismatches"], 0, "{report}");
    assert!(report["stochastic_mismatches"].as_u64().unwrap() > 0);
    assert_eq!(report["replay_seed"], 7);
    for m in report["mismatches"].as_array().unwrap() {
        assert_eq!(m["stochastic"], true);
    }
}

#[test]
fn replay_without_manifest_is_an_io_error() {
    let tmp = tempfile::tempdir().unwrap();
    let out = bin().arg("replay").arg(tmp.path()).output().unwrap();
    assert_eq!(out.status.code(), Some(4));
    assert!(error_line(&out)["path"].as_str().unwrap().ends_with("manifest.json"));
}
