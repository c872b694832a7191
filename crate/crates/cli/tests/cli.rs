use std::fs;
use std::path::{Path, PathBuf};
use std::process::{Command, Output};

fn smafem(args: &[&str], dir: &Path) -> Output {
    Command::new(env!("CARGO_BIN_EXE_smafem")).args(args).current_dir(dir).output().unwrap()
}

fn config(name: &str) -> PathBuf {
    Path::new(env!("CARGO_MANIFEST_DIR")).join("../../configs").join(name).canonicalize().unwrap()
}

fn error_record(out: &Output) -> serde_json::Value {
    let text = String::from_utf8_lossy(&out.stderr);
    let line = text.lines().last().expect("error record on stderr");
    serde_json::from_str(line).unwrap()
}

fn column(csv: &str, name: &str) -> Vec<f64> {
    let mut lines = csv.lines();
    let header: Vec<&str> = lines.next().unwrap().split(',').collect();
    let i = header.iter().position(|h| *h == name).unwrap();
    lines.map(|l| l.split(',').nth(i).unwrap().parse().unwrap()).collect()
}

#[test]
fn superelastic_run_closes_the_loop() {
    let dir = tempfile::tempdir().unwrap();
    let cfg = config("superelastic_1d.toml");
    let out = smafem(&["run", cfg.to_str().unwrap()], dir.path());
    assert!(out.status.success(), "{}", String::from_utf8_lossy(&out.stderr));
    let csv = fs::read_to_string(dir.path().join("superelastic_1d.csv")).unwrap();
    let xi = column(&csv, "xi");
    assert!(xi.iter().cloned().fold(0.0, f64::max) > 0.99);
    assert!(xi.last().unwrap().abs() < 1e-6);
    assert!(!csv.lines().next().unwrap().contains("wall_time"));
    assert!(dir.path().join("superelastic_1d.json").exists());
}

#[test]
fn twsme_completes_at_martensite_finish() {
    let dir = tempfile::tempdir().unwrap();
    let cfg = config("twsme_1d_quadratic.toml");
    let out = smafem(&["run", cfg.to_str().unwrap(), "-o", "out"], dir.path());
    assert!(out.status.success());
    let csv = fs::read_to_string(dir.path().join("out/twsme_1d_quadratic.csv")).unwrap();
    let (t, xi) = (column(&csv, "temperature"), column(&csv, "xi"));
    let first_full = t.iter().zip(&xi).find(|(_, x)| (**x - 1.0).abs() < 1e-6).map(|(t, _)| *t).unwrap();
    assert!((first_full - 194.0).abs() <= 0.1 + 1e-9, "{first_full}");
    assert!(xi.last().unwrap().abs() < 1e-6);
}

#[test]
fn malformed_config_exits_1_without_outputs() {
    let dir = tempfile::tempdir().unwrap();
    fs::write(dir.path().join("bad.toml"), "[material]\nunknown_key = 1\n").unwrap();
    let out = smafem(&["run", "bad.toml"], dir.path());
    assert_eq!(out.status.code(), Some(1));
    let rec = error_record(&out);
    assert_eq!(rec["error"], "config");
    assert_eq!(rec["exit_code"], 1);
    assert_eq!(fs::read_dir(dir.path()).unwrap().count(), 1);

    let out = smafem(&["run"], dir.path());
    assert_eq!(out.status.code(), Some(1));
    assert_eq!(error_record(&out)["error"], "usage");
}

#[test]
fn divergence_exits_2_without_outputs() {
    let dir = tempfile::tempdir().unwrap();
    let text = fs::read_to_string(config("superelastic_1d.toml")).unwrap();
    let mut doc: toml::Table = text.parse().unwrap();
    let solver = doc["solver"].as_table_mut().unwrap();
    solver.insert("max_outer".into(), toml::Value::Integer(1));
    solver.insert("strategy".into(), toml::Value::String("return_mapping".into()));
    fs::write(dir.path().join("tight.toml"), toml::to_string(&doc).unwrap()).unwrap();
    let out = smafem(&["run", "tight.toml"], dir.path());
    assert_eq!(out.status.code(), Some(2));
    let rec = error_record(&out);
    assert_eq!(rec["error"], "solver");
    assert!(rec["message"].as_str().unwrap().contains("step"));
    assert_eq!(fs::read_dir(dir.path()).unwrap().count(), 1);
}

#[test]
fn dumped_config_round_trips() {
    let dir = tempfile::tempdir().unwrap();
    let cfg = config("benchmark_3d.toml");
    let out = smafem(&["--dump-config", cfg.to_str().unwrap()], dir.path());
    assert!(out.status.success());
    let dumped = String::from_utf8(out.stdout).unwrap();
    assert!(dumped.contains("e_r") && dumped.contains("max_outer"));
    fs::write(dir.path().join("echo.toml"), &dumped).unwrap();
    let again = smafem(&["--dump-config", "echo.toml"], dir.path());
    assert_eq!(String::from_utf8(again.stdout).unwrap(), dumped);
}

#[test]
fn reruns_are_byte_identical() {
    let cfg = config("superelastic_1d_cosine.toml");
    let read = |d: &Path| {
        (
            fs::read(d.join("superelastic_1d_cosine.csv")).unwrap(),
            fs::read_to_string(d.join("superelastic_1d_cosine.json")).unwrap(),
        )
    };
    let (a, b) = (tempfile::tempdir().unwrap(), tempfile::tempdir().unwrap());
    assert!(smafem(&["run", cfg.to_str().unwrap()], a.path()).status.success());
    assert!(smafem(&["run", cfg.to_str().unwrap()], b.path()).status.success());
    let ((csv_a, json_a), (csv_b, json_b)) = (read(a.path()), read(b.path()));
    assert_eq!(csv_a, csv_b);
    // the summary differs only in its wall time
    let strip = |s: &str| s.lines().filter(|l| !l.contains("wall_time")).collect::<Vec<_>>().join("\n");
    assert_eq!(strip(&json_a), strip(&json_b));
}

#[test]
fn bench_compare_reports_ratios() {
    let dir = tempfile::tempdir().unwrap();
    let text = fs::read_to_string(config("superelastic_1d.toml")).unwrap();
    let mut doc: toml::Table = text.parse().unwrap();
    doc.get_mut("bench").unwrap().as_table_mut().unwrap().remove("step_search");
    fs::write(dir.path().join("b.toml"), toml::to_string(&doc).unwrap()).unwrap();
    let out = smafem(&["bench", "b.toml", "--compare", "--schemes", "newton_raphson,cutting_plane", "--json", "b.json"], dir.path());
    assert!(out.status.success(), "{}", String::from_utf8_lossy(&out.stderr));
    let stdout = String::from_utf8(out.stdout).unwrap();
    assert_eq!(stdout.lines().filter(|l| l.starts_with("return_mapping,") || l.starts_with("parallel_projection,")).count(), 4);
    assert_eq!(stdout.lines().filter(|l| l.starts_with("# ")).count(), 2);
    let report: serde_json::Value = serde_json::from_str(&fs::read_to_string(dir.path().join("b.json")).unwrap()).unwrap();
    assert_eq!(report["rows"].as_array().unwrap().len(), 4);

    let out = smafem(&["bench", "b.toml", "--schemes", "fastest"], dir.path());
    assert_eq!(out.status.code(), Some(1));
}

#[test]
fn help_and_version_succeed() {
    let dir = tempfile::tempdir().unwrap();
    for flag in ["--help", "--version"] {
        let out = smafem(&[flag], dir.path());
        assert!(out.status.success());
        assert!(!out.stdout.is_empty());
    }
}
