//! End-to-end runs through the convolutional path on a small MNIST slice.

use std::path::PathBuf;

use maskfed::config::ExperimentConfig;
use maskfed::experiment::run_experiment;

fn mnist_dir() -> PathBuf {
    PathBuf::from(env!("CARGO_MANIFEST_DIR")).join("../../data/mnist-10k")
}

fn conv_config(output: &std::path::Path, method: &str, extra: &str) -> ExperimentConfig {
    let dir = mnist_dir();
    let text = format!(
        "\
method = {method}
seed = 5
rounds = 1
output = {}
workers = 2
dataset.kind = mnist
dataset.images = {}
dataset.labels = {}
dataset.limit = 300
partition.mode = iid
partition.clients = 2
topology.id = conv-s
local_epochs = 1
batch_size = 64
eta = 5000
{extra}",
        output.display(),
        dir.join("train-images-idx3-ubyte").display(),
        dir.join("train-labels-idx1-ubyte").display(),
    );
    ExperimentConfig::parse_str(&text).unwrap()
}

#[test]
fn conv_topology_trains_a_round_per_method() {
    for (method, extra) in [
        ("regularized", "lambda = 0.5\n"),
        ("topk", "topk.k_fraction = 0.5\n"),
        ("mv_signsgd", "eta_server = 0.01\n"),
    ] {
        let dir = tempfile::tempdir().unwrap();
        let cfg = conv_config(dir.path(), method, extra);
        let history = run_experiment(&cfg).unwrap_or_else(|e| panic!("{method}: {e}"));
        assert_eq!(history.len(), 1, "{method}");
        let m = &history.entries()[0].metrics;
        assert!(m.accuracy >= 0.0 && m.accuracy <= 1.0);
        assert!(
            (0.0..=1.0).contains(&m.bpp_avg),
            "{method}: bpp {}",
            m.bpp_avg
        );
        assert_eq!(m.participants.len(), 2);
    }
}

#[test]
fn conv_run_is_deterministic() {
    let run = || {
        let dir = tempfile::tempdir().unwrap();
        let cfg = conv_config(dir.path(), "regularized", "lambda = 0.5\n");
        let history = run_experiment(&cfg).unwrap();
        history.entries()[0].global_hash
    };
    assert_eq!(run(), run());
}
