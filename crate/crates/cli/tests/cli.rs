//! The `petc-lab` binary: exit codes, messages and artifacts.

use std::path::{Path, PathBuf};
use std::process::{Command, Output};

use tempfile::TempDir;

const BASE: &str = r#"[model]
preset = "pendulum"
x0 = [0.43, 0.0]

[certify]
sigma = 0.35
l1c = 1.65
l2c = 2.76
m_max_c = 10.942584991929387

[trigger]
rule = "linear"

[channel]
mode = "bernoulli"
m = 1
p = 0.5
seed = 0

[engine]
horizon = 0.2
"#;

fn write(dir: &Path, name: &str, text: &str) -> PathBuf {
    let path = dir.join(name);
    std::fs::write(&path, text).unwrap();
    path
}

fn petc(args: &[&str], config: &Path, out: &Path) -> Output {
    Command::new(env!("CARGO_BIN_EXE_petc-lab"))
        .args(args)
        .arg("--config")
        .arg(config)
        .arg("--out")
        .arg(out)
        .env_remove("PETC_LAB_THREADS")
        .output()
        .unwrap()
}

fn stderr(o: &Output) -> String {
    String::from_utf8_lossy(&o.stderr).into_owned()
}

fn stdout(o: &Output) -> String {
    String::from_utf8_lossy(&o.stdout).into_owned()
}

fn value(text: &str, key: &str) -> f64 {
    text.lines()
        .find_map(|l| l.split_once('=').filter(|(k, _)| k.trim() == key).map(|(_, v)| v.trim().parse().unwrap()))
        .unwrap_or_else(|| panic!("{key} missing from:\n{text}"))
}

fn csv_rows(path: &Path) -> Vec<Vec<String>> {
    std::fs::read_to_string(path)
        .unwrap()
        .lines()
        .skip(1)
        .map(|l| l.split(',').map(str::to_string).collect())
        .collect()
}

fn setup(text: &str) -> (TempDir, PathBuf) {
    let dir = tempfile::tempdir().unwrap();
    let config = write(dir.path(), "run.toml", text);
    (dir, config)
}

#[test]
fn sigma_out_of_range_is_config_error() {
    let (dir, config) = setup(&BASE.replace("sigma = 0.35", "sigma = 1.2"));
    let o = petc(&["certify"], &config, dir.path());
    assert_eq!(o.status.code(), Some(2));
    assert!(stderr(&o).contains("ConfigError"), "{}", stderr(&o));
}

#[test]
fn missing_key_is_named() {
    let (dir, config) = setup(&BASE.replace("x0 = [0.43, 0.0]\n", ""));
    let o = petc(&["simulate"], &config, dir.path());
    assert_eq!(o.status.code(), Some(2));
    assert!(stderr(&o).contains("x0"), "{}", stderr(&o));
}

#[test]
fn initial_state_outside_level_set() {
    let (dir, config) = setup(&BASE.replace("x0 = [0.43, 0.0]", "x0 = [3.0, 0.0]"));
    let o = petc(&["simulate"], &config, dir.path());
    assert_eq!(o.status.code(), Some(2));
    assert!(stderr(&o).contains("region of attraction"), "{}", stderr(&o));
}

#[test]
fn truncated_log_is_parse_error() {
    let (dir, config) = setup(BASE);
    assert_eq!(petc(&["simulate", "--quiet"], &config, dir.path()).status.code(), Some(0));
    let log = dir.path().join("run_trajectory.csv");
    let text = std::fs::read_to_string(&log).unwrap();
    let cut = text.len() - text.lines().last().unwrap().len() / 2 - 1;
    std::fs::write(&log, &text[..cut]).unwrap();
    let o = petc(&["verify"], &config, dir.path());
    assert_eq!(o.status.code(), Some(2));
    assert!(stderr(&o).contains("ParseError"), "{}", stderr(&o));
}

#[test]
fn simulate_then_verify_passes() {
    let (dir, config) = setup(BASE);
    let o = petc(&["simulate"], &config, dir.path());
    assert_eq!(o.status.code(), Some(0), "{}", stderr(&o));
    assert!(value(&stdout(&o), "rows") > 14_000.0);
    let o = petc(&["verify"], &config, dir.path());
    assert_eq!(o.status.code(), Some(0), "{}", stdout(&o));
    assert!(stdout(&o).contains("verdict = pass"));
    let manifest: serde_json::Value =
        serde_json::from_str(&std::fs::read_to_string(dir.path().join("run_verify_manifest.json")).unwrap()).unwrap();
    assert_eq!(manifest["command"], "verify");
    assert_eq!(manifest["config_digest"].as_str().unwrap().len(), 64);
}

#[test]
fn oversized_period_without_growth_term_fails_verification() {
    let text = BASE
        .replace("m_max_c = 10.942584991929387", "m_max_c = 10.942584991929387\nmu_c = 0.0\nh = 0.2\nallow_uncertified_h = true")
        .replace("horizon = 0.2", "horizon = 5.0");
    let (dir, config) = setup(&text);
    let o = petc(&["simulate", "--quiet"], &config, dir.path());
    assert_eq!(o.status.code(), Some(0), "{}", stderr(&o));
    let o = petc(&["verify"], &config, dir.path());
    assert_eq!(o.status.code(), Some(1), "{}", stdout(&o));
    let out = stdout(&o);
    let failing = out.lines().find(|l| l.starts_with("failing = ")).expect("failing line");
    assert!(failing.contains("bound_validity"), "{failing}");
    let rows = csv_rows(&dir.path().join("run_verify.csv"));
    assert!(rows.iter().any(|r| r[0] == "bound_validity" && r[1] == "false"), "{rows:?}");
}

#[test]
fn zero_loss_bound_uses_full_period() {
    let (dir, config) = setup(&BASE.replace("m = 1", "m = 0"));
    let o = petc(&["certify"], &config, dir.path());
    assert_eq!(o.status.code(), Some(0));
    let out = stdout(&o);
    assert_eq!(value(&out, "h"), value(&out, "h_sigma_masp"));
}

#[test]
fn periodic_baseline_gap_is_one_period_without_losses() {
    let (dir, config) = setup(&BASE.replace("mode = \"bernoulli\"", "mode = \"always\""));
    let o = petc(&["compare", "--quiet"], &config, dir.path());
    assert_eq!(o.status.code(), Some(0), "{}", stderr(&o));
    let rows = csv_rows(&dir.path().join("run_compare.csv"));
    let periodic = rows.iter().find(|r| r[0] == "periodic").unwrap();
    let h: f64 = periodic[1].parse().unwrap();
    let gap: f64 = periodic[5].parse().unwrap();
    assert!((gap - h).abs() <= 1e-12 * h, "{gap} vs {h}");
    let ratio: f64 = periodic[10].parse().unwrap();
    assert!((ratio - 2.25).abs() < 1e-12);
}

#[test]
fn sweep_period_shrinks_with_sigma() {
    let text = format!("{BASE}\n[sweep]\nsigma = [0.2, 0.35, 0.5, 0.7]\nm = [0, 2]\nhorizon = 0.05\n");
    let (dir, config) = setup(&text);
    let o = Command::new(env!("CARGO_BIN_EXE_petc-lab"))
        .args(["sweep", "--quiet", "--config"])
        .arg(&config)
        .arg("--out")
        .arg(dir.path())
        .env("PETC_LAB_THREADS", "2")
        .output()
        .unwrap();
    assert_eq!(o.status.code(), Some(0), "{}", stderr(&o));
    let rows = csv_rows(&dir.path().join("run_sweep.csv"));
    assert_eq!(rows.len(), 8);
    let bound: Vec<f64> = rows.iter().filter(|r| r[2] == "0").map(|r| r[5].parse().unwrap()).collect();
    assert!(bound.windows(2).all(|w| w[1] < w[0]), "{bound:?}");
    for r in &rows {
        let (m, hs, h): (f64, f64, f64) = (r[2].parse().unwrap(), r[5].parse().unwrap(), r[8].parse().unwrap());
        assert!((h - hs / (m + 1.0)).abs() <= 1e-15 * hs);
        assert_eq!(r[14], "pass");
    }
    assert!(dir.path().join("run_sweep").join("cell_007_manifest.json").exists());
}

#[test]
fn invalid_thread_count_is_config_error() {
    let (dir, config) = setup(&format!("{BASE}\n[sweep]\nsigma = [0.35]\nhorizon = 0.01\n"));
    let o = Command::new(env!("CARGO_BIN_EXE_petc-lab"))
        .args(["sweep", "--config"])
        .arg(&config)
        .arg("--out")
        .arg(dir.path())
        .env("PETC_LAB_THREADS", "zero")
        .output()
        .unwrap();
    assert_eq!(o.status.code(), Some(2));
    assert!(stderr(&o).contains("PETC_LAB_THREADS"));
}

#[test]
fn trace_channel_from_file() {
    let dir = tempfile::tempdir().unwrap();
    write(dir.path(), "trace.txt", "TFTFTT\nFT\n");
    let text = BASE.replace("mode = \"bernoulli\"", "mode = \"trace\"\ntrace_path = \"trace.txt\"");
    let config = write(dir.path(), "run.toml", &text);
    let o = petc(&["simulate", "--quiet"], &config, dir.path());
    assert_eq!(o.status.code(), Some(0), "{}", stderr(&o));

    write(dir.path(), "trace.txt", "TFFT");
    let o = petc(&["simulate"], &config, dir.path());
    assert_eq!(o.status.code(), Some(2));
    assert!(stderr(&o).contains("TraceError"), "{}", stderr(&o));
}

#[test]
fn seed_flag_changes_channel_and_is_recorded() {
    let (dir, config) = setup(&BASE.replace("horizon = 0.2", "horizon = 3.0"));
    let a = dir.path().join("a");
    let b = dir.path().join("b");
    assert!(petc(&["simulate", "--quiet"], &config, &a).status.success());
    let o = Command::new(env!("CARGO_BIN_EXE_petc-lab"))
        .args(["simulate", "--quiet", "--seed", "9", "--config"])
        .arg(&config)
        .arg("--out")
        .arg(&b)
        .output()
        .unwrap();
    assert!(o.status.success());
    assert!(o.stdout.is_empty());
    let la = std::fs::read(a.join("run_trajectory.csv")).unwrap();
    let lb = std::fs::read(b.join("run_trajectory.csv")).unwrap();
    assert!(la != lb, "seed had no effect");
    let manifest: serde_json::Value =
        serde_json::from_str(&std::fs::read_to_string(b.join("run_manifest.json")).unwrap()).unwrap();
    assert_eq!(manifest["seeds"]["channel"], 9);
}
