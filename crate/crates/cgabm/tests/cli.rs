use std::path::Path;
use std::process::{Command, Output};

use cgabm::formats::{read_manifest, read_model};

const SMALL: &str = r#"
kind = "complete_evm"
population = 20
seed = 11
[sampling]
m = 30
k = 40
[integrator]
dt = 0.01
t_end = 1.0
paths = 8
save_stride = 10
initial_state = [0.2, 0.7, 0.1]
"#;

fn cgabm(args: &[&str], workers: &str) -> Output {
    Command::new(env!("CARGO_BIN_EXE_cgabm")).args(args).env("CGABM_WORKERS", workers).output().unwrap()
}

fn write_config(dir: &Path, out: &Path) -> String {
    let path = dir.join("experiment.toml");
    std::fs::write(&path, format!("output_dir = {:?}\n{SMALL}", out.to_str().unwrap())).unwrap();
    path.to_str().unwrap().to_string()
}

#[test]
fn run_is_bitwise_reproducible_across_worker_counts() {
    let dir = tempfile::tempdir().unwrap();
    let (one, four) = (dir.path().join("one"), dir.path().join("four"));
    for (out, workers) in [(&one, "1"), (&four, "4")] {
        let config = write_config(dir.path(), out);
        let status = cgabm(&["run", &config], workers);
        assert!(status.status.success(), "{}", String::from_utf8_lossy(&status.stderr));
    }
    for file in ["measurements.csv", "generator.csv", "model.toml"] {
        assert_eq!(std::fs::read(one.join(file)).unwrap(), std::fs::read(four.join(file)).unwrap(), "{file}");
    }
    let manifest = read_manifest(&one.join("manifest.toml")).unwrap();
    assert_eq!(manifest.seed, 11);
    assert!(manifest.failed_stage.is_none());
    assert_eq!(read_model(&one.join("model.toml")).unwrap().dim(), 2);
}

#[test]
fn overrides_change_the_config_hash() {
    let dir = tempfile::tempdir().unwrap();
    let config = write_config(dir.path(), &dir.path().join("a"));
    let out_b = dir.path().join("b");
    assert!(cgabm(&["estimate", &config], "2").status.success());
    assert!(cgabm(&["estimate", &config, "--sampling.k", "41", "--output_dir", out_b.to_str().unwrap()], "2").status.success());
    let a = read_manifest(&dir.path().join("a/manifest.toml")).unwrap();
    let b = read_manifest(&out_b.join("manifest.toml")).unwrap();
    assert_ne!(a.config_hash, b.config_hash);
    assert_eq!(b.samples_per_point, 41);
}

#[test]
fn predict_and_compare_read_the_learned_model() {
    let dir = tempfile::tempdir().unwrap();
    let out = dir.path().join("out");
    let config = write_config(dir.path(), &out);
    assert!(cgabm(&["run", &config], "2").status.success());
    let predict = cgabm(&["predict", &config], "2");
    assert!(predict.status.success(), "{}", String::from_utf8_lossy(&predict.stderr));
    assert!(out.join("prediction.csv").exists() && out.join("paths.csv").exists());
    let compare = cgabm(&["compare", "--reference", "analytic-limit", &config], "2");
    assert!(compare.status.success(), "{}", String::from_utf8_lossy(&compare.stderr));
    assert!(String::from_utf8_lossy(&compare.stdout).contains("mean_sup_gap"));
}

#[test]
fn exit_codes_separate_config_and_stage_errors() {
    let dir = tempfile::tempdir().unwrap();
    let bad = dir.path().join("bad.toml");
    std::fs::write(&bad, "kind = \"complete_evm\"\n[sampling]\nk = 0\n").unwrap();
    assert_eq!(cgabm(&["run", bad.to_str().unwrap()], "1").status.code(), Some(2));
    let config = write_config(dir.path(), &dir.path().join("out"));
    let missing = dir.path().join("missing.toml");
    let predict = cgabm(&["predict", "--model", missing.to_str().unwrap(), &config], "1");
    assert_eq!(predict.status.code(), Some(3));
    assert_eq!(cgabm(&["reproduce", "fig9"], "1").status.code(), Some(2));
}
