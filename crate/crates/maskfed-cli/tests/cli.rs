//! End-to-end tests of the command-line interface.

use std::path::{Path, PathBuf};
use std::process::{Command, Output};

fn maskfed_bin() -> PathBuf {
    // Integration tests live next to the binary under target/<profile>/.
    let mut path = std::env::current_exe().unwrap();
    path.pop();
    if path.ends_with("deps") {
        path.pop();
    }
    path.join("maskfed")
}

fn run_cli(args: &[&str]) -> Output {
    Command::new(maskfed_bin())
        .args(args)
        .output()
        .expect("maskfed binary runs")
}

fn write_config(dir: &Path, body: &str) -> PathBuf {
    let path = dir.join("exp.conf");
    std::fs::write(&path, body).unwrap();
    path
}

fn synthetic_config(output: &Path) -> String {
    format!(
        "\
method = regularized
seed = 9
rounds = 2
output = {}
dataset.kind = synthetic
dataset.classes = 3
dataset.dims = 6
dataset.per_class = 20
partition.mode = iid
partition.clients = 3
topology.input = 6
topology.layers = dense:6:8, relu, dense:8:3
eta = 10
lambda = 0.5
",
        output.display()
    )
}

#[test]
fn validate_accepts_good_config() {
    let dir = tempfile::tempdir().unwrap();
    let conf = write_config(dir.path(), &synthetic_config(&dir.path().join("out")));
    let out = run_cli(&["validate", conf.to_str().unwrap()]);
    assert!(
        out.status.success(),
        "{}",
        String::from_utf8_lossy(&out.stderr)
    );
    let stdout = String::from_utf8_lossy(&out.stdout);
    assert!(stdout.contains("ok:"), "{stdout}");
}

#[test]
fn validate_rejects_unknown_key_naming_it() {
    let dir = tempfile::tempdir().unwrap();
    let body = synthetic_config(&dir.path().join("out")) + "lamda = 1.0\n";
    let conf = write_config(dir.path(), &body);
    let out = run_cli(&["validate", conf.to_str().unwrap()]);
    assert!(!out.status.success());
    let stderr = String::from_utf8_lossy(&out.stderr);
    assert!(stderr.contains("lamda"), "{stderr}");
}

#[test]
fn entropy_of_all_ones_mask_prints_zero() {
    let dir = tempfile::tempdir().unwrap();
    let path = dir.path().join("ones.mask");
    maskfed::mask::BinaryMask::all_ones(123)
        .write_to(&path)
        .unwrap();
    let out = run_cli(&["entropy", path.to_str().unwrap()]);
    assert!(out.status.success());
    assert_eq!(String::from_utf8_lossy(&out.stdout).trim(), "0.000000");
}

#[test]
fn run_then_resume_final_checkpoint_is_noop_success() {
    let dir = tempfile::tempdir().unwrap();
    let out_dir = dir.path().join("out");
    let conf = write_config(dir.path(), &synthetic_config(&out_dir));
    let out = run_cli(&["run", conf.to_str().unwrap()]);
    assert!(
        out.status.success(),
        "{}",
        String::from_utf8_lossy(&out.stderr)
    );
    let csv_after_run = std::fs::read(out_dir.join("metrics.csv")).unwrap();

    let ckpt = out_dir.join("checkpoint.bin");
    let out = run_cli(&["resume", ckpt.to_str().unwrap()]);
    assert!(
        out.status.success(),
        "{}",
        String::from_utf8_lossy(&out.stderr)
    );
    // Nothing new: same CSV bytes, no extra rounds reported.
    assert_eq!(
        std::fs::read(out_dir.join("metrics.csv")).unwrap(),
        csv_after_run
    );
    assert!(String::from_utf8_lossy(&out.stdout).trim().is_empty());
}

#[test]
fn seed_flag_overrides_config_seed() {
    let dir_a = tempfile::tempdir().unwrap();
    let dir_b = tempfile::tempdir().unwrap();
    let out_a = dir_a.path().join("out");
    let out_b = dir_b.path().join("out");
    let conf_a = write_config(dir_a.path(), &synthetic_config(&out_a));
    let conf_b = write_config(dir_b.path(), &synthetic_config(&out_b));

    // Same override on both: identical results despite separate runs.
    assert!(run_cli(&["run", conf_a.to_str().unwrap(), "--seed", "123"])
        .status
        .success());
    assert!(run_cli(&["run", conf_b.to_str().unwrap(), "--seed", "123"])
        .status
        .success());
    let a = std::fs::read(out_a.join("metrics.csv")).unwrap();
    let b = std::fs::read(out_b.join("metrics.csv")).unwrap();
    assert_eq!(a, b);

    // A different seed changes the trajectory.
    let dir_c = tempfile::tempdir().unwrap();
    let out_c = dir_c.path().join("out");
    let conf_c = write_config(dir_c.path(), &synthetic_config(&out_c));
    assert!(run_cli(&["run", conf_c.to_str().unwrap(), "--seed", "124"])
        .status
        .success());
    let c = std::fs::read(out_c.join("metrics.csv")).unwrap();
    assert_ne!(a, c);
}

#[test]
fn output_env_var_overrides_config_output() {
    let dir = tempfile::tempdir().unwrap();
    let configured = dir.path().join("configured");
    let redirected = dir.path().join("redirected");
    let conf = write_config(dir.path(), &synthetic_config(&configured));
    let out = Command::new(maskfed_bin())
        .args(["run", conf.to_str().unwrap()])
        .env("MASKFED_OUT", &redirected)
        .output()
        .unwrap();
    assert!(
        out.status.success(),
        "{}",
        String::from_utf8_lossy(&out.stderr)
    );
    assert!(redirected.join("metrics.csv").exists());
    assert!(!configured.exists());
}

#[test]
fn missing_config_file_fails_cleanly() {
    let out = run_cli(&["run", "/nonexistent/exp.conf"]);
    assert!(!out.status.success());
    assert!(String::from_utf8_lossy(&out.stderr).contains("error:"));
}

#[test]
fn entropy_rejects_garbage_file() {
    let dir = tempfile::tempdir().unwrap();
    let path = dir.path().join("junk.mask");
    std::fs::write(&path, b"\xFF\xFF\xFF").unwrap();
    let out = run_cli(&["entropy", path.to_str().unwrap()]);
    assert!(!out.status.success());
}
