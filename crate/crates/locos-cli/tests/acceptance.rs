//! End-to-end checks on the `locos` binary: byte reproducibility, report
//! schema, exit codes, and the stock gundy preset.

use std::fs;
use std::path::{Path, PathBuf};
use std::process::{Command, Output};

use tempfile::TempDir;

const BIN: &str = env!("CARGO_BIN_EXE_locos");

struct Run {
    dir: TempDir,
    output: Output,
}

impl Run {
    fn stderr(&self) -> String {
        String::from_utf8_lossy(&self.output.stderr).into_owned()
    }

    fn code(&self) -> i32 {
        self.output.status.code().expect("binary was signalled")
    }

    fn file(&self, name: &str) -> Vec<u8> {
        fs::read(self.dir.path().join(name))
            .unwrap_or_else(|e| panic!("missing output {name}: {e}"))
    }

    fn json(&self, name: &str) -> serde_json::Value {
        serde_json::from_slice(&self.file(name)).expect("report is valid JSON")
    }
}

fn run_config(cmd: &str, config: &str, extra: &[&str]) -> Run {
    let dir = TempDir::new().unwrap();
    let path = dir.path().join("run.cfg");
    fs::write(&path, config).unwrap();
    let output = Command::new(BIN)
        .arg(cmd)
        .arg("--config")
        .arg(&path)
        .arg("--out")
        .arg(dir.path())
        .args(extra)
        .output()
        .expect("spawn locos");
    Run { dir, output }
}

fn constant(report: &serde_json::Value, name: &str) -> f64 {
    report["constants"][name]
        .as_f64()
        .unwrap_or_else(|| panic!("report lacks constant {name}"))
}

const UNCOND_CFG: &str = "op = uncond\n\
                          seed = 7\n\
                          filtration = dyadic:3\n\
                          uncond.p = 3.0\n\
                          uncond.trials = 4\n\
                          uncond.patterns = 40\n";

const GUNDY_CFG: &str = "op = gundy\n\
                         seed = 11\n\
                         filtration = eight_point\n\
                         gundy.lambda = 0.5,1.0,2.0\n\
                         gundy.trials = 6\n";

#[test]
fn identical_reruns_are_byte_identical() {
    let first = run_config("uncond", UNCOND_CFG, &[]);
    let second = run_config("uncond", UNCOND_CFG, &[]);
    assert_eq!(first.code(), 0, "stderr: {}", first.stderr());
    assert_eq!(first.file("uncond.json"), second.file("uncond.json"));
    assert_eq!(first.file("uncond.csv"), second.file("uncond.csv"));
}

#[test]
fn job_count_never_changes_the_bytes() {
    let serial = run_config("gundy", GUNDY_CFG, &["--jobs", "1"]);
    let parallel = run_config("gundy", GUNDY_CFG, &["--jobs", "7"]);
    assert_eq!(serial.code(), 0, "stderr: {}", serial.stderr());
    assert_eq!(parallel.code(), 0, "stderr: {}", parallel.stderr());
    assert_eq!(serial.file("gundy.json"), parallel.file("gundy.json"));
    assert_eq!(serial.file("gundy.csv"), parallel.file("gundy.csv"));
}

#[test]
fn gundy_preset_reconstructs_exactly() {
    let run = run_config("gundy", GUNDY_CFG, &[]);
    assert_eq!(run.code(), 0, "stderr: {}", run.stderr());
    let report = run.json("gundy.json");
    assert!(constant(&report, "reconstruction_dev_max") < 1e-10);
    assert!(constant(&report, "scalar_max").is_finite());
}

#[test]
fn report_schema_is_stable() {
    let run = run_config("uncond", UNCOND_CFG, &[]);
    let report = run.json("uncond.json");
    let obj = report.as_object().expect("top level is an object");

    let allowed = ["version", "op", "config_hash", "seed", "config", "constants", "witness"];
    for key in obj.keys() {
        assert!(allowed.contains(&key.as_str()), "unexpected report field {key}");
    }

    assert_eq!(report["version"].as_str(), Some(env!("CARGO_PKG_VERSION")));
    assert_eq!(report["op"].as_str(), Some("uncond"));
    assert_eq!(report["seed"].as_u64(), Some(7));

    let hash = report["config_hash"].as_str().expect("config_hash is a string");
    assert_eq!(hash.len(), 64);
    assert!(hash.chars().all(|c| c.is_ascii_hexdigit()));

    let config = report["config"].as_object().expect("config is an object");
    assert!(config.values().all(serde_json::Value::is_string));
    assert_eq!(config.get("op").and_then(|v| v.as_str()), Some("uncond"));

    let constants = report["constants"].as_object().expect("constants is an object");
    assert!(!constants.is_empty());
    assert!(constants.values().all(serde_json::Value::is_number));
}

#[test]
fn seed_flag_overrides_config() {
    let run = run_config("uncond", UNCOND_CFG, &["--seed", "99"]);
    assert_eq!(run.code(), 0, "stderr: {}", run.stderr());
    let report = run.json("uncond.json");
    assert_eq!(report["seed"].as_u64(), Some(99));
    assert_eq!(report["config"]["seed"].as_str(), Some("99"));
}

#[test]
fn long_op_name_is_accepted() {
    let cfg = UNCOND_CFG.replace("op = uncond", "op = unconditionality");
    let run = run_config("uncond", &cfg, &[]);
    assert_eq!(run.code(), 0, "stderr: {}", run.stderr());
}

#[test]
fn malformed_config_exits_one_with_line_diagnostic() {
    let run = run_config("uncond", "op = uncond\nno equals sign here\n", &[]);
    assert_eq!(run.code(), 1);
    let stderr = run.stderr();
    assert!(stderr.contains("config error"), "stderr: {stderr}");
    assert!(stderr.contains("line 2"), "stderr: {stderr}");
}

#[test]
fn unknown_keys_are_config_errors() {
    let cfg = format!("{UNCOND_CFG}uncond.tirals = 9\n");
    let run = run_config("uncond", &cfg, &[]);
    assert_eq!(run.code(), 1);
    assert!(run.stderr().contains("uncond.tirals"), "stderr: {}", run.stderr());
}

#[test]
fn op_mismatch_is_a_config_error() {
    let run = run_config("gundy", UNCOND_CFG, &[]);
    assert_eq!(run.code(), 1);
    assert!(run.stderr().contains("op = uncond"), "stderr: {}", run.stderr());
}

#[test]
fn missing_filtration_file_is_a_config_error() {
    let cfg = "op = uncond\nfiltration = file:/nonexistent/f.txt\nuncond.trials = 2\n";
    let run = run_config("uncond", cfg, &[]);
    assert_eq!(run.code(), 1, "stderr: {}", run.stderr());
}

#[test]
fn failed_bound_check_exits_two() {
    let cfg = format!("{UNCOND_CFG}check.max = 0.5\n");
    let run = run_config("uncond", &cfg, &[]);
    assert_eq!(run.code(), 2);
    assert!(run.stderr().contains("invariant violated"), "stderr: {}", run.stderr());
}

#[test]
fn merge_takes_the_worst_constant() {
    let a = run_config("uncond", UNCOND_CFG, &[]);
    let b = run_config("uncond", UNCOND_CFG, &["--seed", "23"]);
    let out = TempDir::new().unwrap();
    let output = Command::new(BIN)
        .arg("report-merge")
        .arg(a.dir.path().join("uncond.json"))
        .arg(b.dir.path().join("uncond.json"))
        .arg("--out")
        .arg(out.path())
        .output()
        .expect("spawn locos");
    assert_eq!(output.status.code(), Some(0));

    let merged: serde_json::Value =
        serde_json::from_slice(&fs::read(out.path().join("merged.json")).unwrap()).unwrap();
    let key = "constant";
    let expect = constant(&a.json("uncond.json"), key).max(constant(&b.json("uncond.json"), key));
    assert_eq!(constant(&merged, key), expect);
    let sources = merged["merged_from"].as_array().expect("merge records sources");
    assert_eq!(sources.len(), 2);
}

#[test]
fn merge_rejects_mismatched_reports() {
    let uncond = run_config("uncond", UNCOND_CFG, &[]);
    let gundy = run_config("gundy", GUNDY_CFG, &[]);
    let out = TempDir::new().unwrap();
    let output = Command::new(BIN)
        .arg("report-merge")
        .arg(uncond.dir.path().join("uncond.json"))
        .arg(gundy.dir.path().join("gundy.json"))
        .arg("--out")
        .arg(out.path())
        .output()
        .expect("spawn locos");
    assert_eq!(output.status.code(), Some(1));
}

#[test]
fn stock_configs_run_clean() {
    let root: PathBuf = Path::new(env!("CARGO_MANIFEST_DIR")).join("../../configs");
    for entry in fs::read_dir(&root).expect("configs directory exists") {
        let path = entry.unwrap().path();
        let text = fs::read_to_string(&path).unwrap();
        let op = text
            .lines()
            .find_map(|l| l.strip_prefix("op = "))
            .unwrap_or_else(|| panic!("{} lacks an op line", path.display()))
            .trim()
            .to_string();
        let cmd = if op == "unconditionality" { "uncond".into() } else { op };
        let run = run_config(&cmd, &text, &[]);
        assert_eq!(run.code(), 0, "{} failed: {}", path.display(), run.stderr());
    }
}
