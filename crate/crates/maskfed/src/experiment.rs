//! End-to-end experiment driving: setup, the round loop, incremental CSV
//! output and bit-exact checkpoint/resume.

use std::fs::{self, File};
use std::io::{Read, Write};
use std::path::Path;

use crate::config::ExperimentConfig;
use crate::data::{partition_with_validation, Dataset, EvalSets, PartitionSpec};
use crate::method::{self, Method, RoundContext};
use crate::metrics::MetricsWriter;
use crate::protocol::{hash_values, ClientState, HistoryEntry, HistoryLog};
use crate::tensor::{build_network, FixedWeights, NetworkTopology};
use crate::{Error, Result};

pub const CHECKPOINT_FILE: &str = "checkpoint.bin";
const CHECKPOINT_MAGIC: &[u8; 8] = b"MASKCKP1";

/// Everything derived from a config before the first round.
pub struct ExperimentSetup {
    pub dataset: Dataset,
    pub clients: Vec<ClientState>,
    pub eval: EvalSets,
    pub topology: NetworkTopology,
    pub weights: FixedWeights,
}

/// Load data, carve validation, partition clients and rebuild the frozen
/// network for a config.
pub fn prepare(cfg: &ExperimentConfig) -> Result<ExperimentSetup> {
    let dataset = cfg.build_dataset()?;
    let topology = cfg.build_topology()?;
    if dataset.feature_shape() != topology.input_shape() {
        return Err(Error::Config(format!(
            "dataset features are {:?} but the topology expects {:?}",
            dataset.feature_shape(),
            topology.input_shape()
        )));
    }
    if dataset.class_count() != topology.class_count() {
        return Err(Error::Config(format!(
            "dataset has {} classes but the topology outputs {}",
            dataset.class_count(),
            topology.class_count()
        )));
    }
    let spec = PartitionSpec {
        mode: cfg.partition_mode,
        client_count: cfg.clients,
        seed: cfg.seed,
    };
    let (partition, eval) = partition_with_validation(&dataset, &spec)?;
    let clients: Vec<ClientState> = partition
        .clients()
        .iter()
        .enumerate()
        .map(|(client_id, indices)| ClientState {
            client_id,
            indices: indices.clone(),
        })
        .collect();
    let weights = build_network(cfg.seed, &topology)?;
    Ok(ExperimentSetup {
        dataset,
        clients,
        eval,
        topology,
        weights,
    })
}

/// Run a full experiment from round 0. Metrics are appended to the output
/// CSVs as each round completes and a checkpoint is refreshed per round, so
/// an interrupted run can resume bit-exactly.
pub fn run_experiment(cfg: &ExperimentConfig) -> Result<HistoryLog> {
    let setup = prepare(cfg)?;
    let mut method = method::build(&cfg.method, cfg, &setup.weights)?;
    fs::create_dir_all(&cfg.output).map_err(Error::io(cfg.output.display().to_string()))?;
    let mut writer = MetricsWriter::create(&cfg.output, &cfg.method, method.lambda())?;
    write_checkpoint(&cfg.output, cfg, method.as_ref())?;
    drive(cfg, &setup, method.as_mut(), &mut writer)
}

/// Continue an experiment from a checkpoint written by [`run_experiment`].
/// Resuming from the final checkpoint is a successful no-op.
pub fn resume_experiment(checkpoint_path: &Path) -> Result<HistoryLog> {
    let ckpt = read_checkpoint(checkpoint_path)?;
    let mut cfg = ExperimentConfig::parse_str(&ckpt.config_text)
        .map_err(|e| Error::Checkpoint(format!("embedded config: {e}")))?;
    // The recorded seed wins over the embedded text (the run may have been
    // started with a --seed override).
    cfg.override_seed(ckpt.seed);
    if cfg.method != ckpt.method {
        return Err(Error::Checkpoint(format!(
            "checkpoint is for method '{}' but the config says '{}'",
            ckpt.method, cfg.method
        )));
    }
    if ckpt.round > cfg.rounds {
        return Err(Error::Checkpoint(format!(
            "checkpoint round {} exceeds configured rounds {}",
            ckpt.round, cfg.rounds
        )));
    }
    let setup = prepare(&cfg)?;
    let mut method = method::build(&cfg.method, &cfg, &setup.weights)?;
    method.restore(ckpt.round, ckpt.values)?;
    let mut writer = MetricsWriter::open_append(&cfg.output, &cfg.method, method.lambda())?;
    drive(&cfg, &setup, method.as_mut(), &mut writer)
}

fn drive(
    cfg: &ExperimentConfig,
    setup: &ExperimentSetup,
    method: &mut dyn Method,
    writer: &mut MetricsWriter,
) -> Result<HistoryLog> {
    let pool = rayon::ThreadPoolBuilder::new()
        .num_threads(cfg.workers)
        .build()
        .map_err(|e| Error::Protocol(format!("worker pool: {e}")))?;
    let ctx = RoundContext {
        dataset: &setup.dataset,
        clients: &setup.clients,
        eval: &setup.eval,
        weights: &setup.weights,
        pool: &pool,
        eval_mode: cfg.eval_mode,
        eval_draws: cfg.eval_draws,
    };
    let mut history = HistoryLog::new();
    while method.round() < cfg.rounds {
        let round = method.round();
        let (metrics, uplinks) = method
            .run_round(&ctx)
            .map_err(|e| Error::Protocol(format!("round {round}: {e}")))?;
        if cfg.dump_masks {
            dump_masks(&cfg.output, round + 1, &uplinks)?;
        }
        history.push(HistoryEntry {
            global_hash: hash_values(&method.global_values()),
            metrics: metrics.clone(),
        });
        writer.append(&metrics)?;
        write_checkpoint(&cfg.output, cfg, method)?;
    }
    Ok(history)
}

fn dump_masks(output: &Path, round: u64, uplinks: &[crate::protocol::UplinkMessage]) -> Result<()> {
    let dir = output.join("masks").join(format!("round{round:04}"));
    fs::create_dir_all(&dir).map_err(Error::io(dir.display().to_string()))?;
    for up in uplinks {
        up.mask
            .write_to(&dir.join(format!("client{:03}.mask", up.client_id)))?;
    }
    Ok(())
}

/// A resumable snapshot: seed, completed round and the global parameter
/// vector, plus the config that produced it.
#[derive(Debug, Clone)]
pub struct Checkpoint {
    pub seed: u64,
    pub round: u64,
    pub method: String,
    pub config_text: String,
    pub values: Vec<f64>,
}

fn write_checkpoint(output: &Path, cfg: &ExperimentConfig, method: &dyn Method) -> Result<()> {
    let path = output.join(CHECKPOINT_FILE);
    let tmp = output.join(format!("{CHECKPOINT_FILE}.tmp"));
    let values = method.global_values();
    let name = method.name().as_bytes();
    let config = cfg.source().as_bytes();

    let mut buf = Vec::with_capacity(64 + name.len() + config.len() + values.len() * 8);
    buf.extend_from_slice(CHECKPOINT_MAGIC);
    buf.extend_from_slice(&1u32.to_le_bytes()); // format version
    buf.extend_from_slice(&cfg.seed.to_le_bytes());
    buf.extend_from_slice(&method.round().to_le_bytes());
    buf.extend_from_slice(&(name.len() as u32).to_le_bytes());
    buf.extend_from_slice(name);
    buf.extend_from_slice(&(config.len() as u32).to_le_bytes());
    buf.extend_from_slice(config);
    buf.extend_from_slice(&(values.len() as u64).to_le_bytes());
    for v in &values {
        buf.extend_from_slice(&v.to_le_bytes());
    }

    let mut f = File::create(&tmp).map_err(Error::io(tmp.display().to_string()))?;
    f.write_all(&buf)
        .map_err(Error::io(tmp.display().to_string()))?;
    drop(f);
    fs::rename(&tmp, &path).map_err(Error::io(path.display().to_string()))
}

pub fn read_checkpoint(path: &Path) -> Result<Checkpoint> {
    let mut bytes = Vec::new();
    File::open(path)
        .and_then(|mut f| f.read_to_end(&mut bytes))
        .map_err(Error::io(path.display().to_string()))?;
    let mut cursor = 0usize;
    let take = |cursor: &mut usize, len: usize| -> Result<&[u8]> {
        let start = *cursor;
        let end = start
            .checked_add(len)
            .filter(|&e| e <= bytes.len())
            .ok_or_else(|| Error::Checkpoint(format!("{}: truncated", path.display())))?;
        *cursor = end;
        Ok(&bytes[start..end])
    };

    if take(&mut cursor, 8)? != CHECKPOINT_MAGIC {
        return Err(Error::Checkpoint(format!(
            "{}: not a checkpoint file",
            path.display()
        )));
    }
    let version = u32::from_le_bytes(take(&mut cursor, 4)?.try_into().unwrap());
    if version != 1 {
        return Err(Error::Checkpoint(format!(
            "{}: unsupported checkpoint version {version}",
            path.display()
        )));
    }
    let seed = u64::from_le_bytes(take(&mut cursor, 8)?.try_into().unwrap());
    let round = u64::from_le_bytes(take(&mut cursor, 8)?.try_into().unwrap());
    let name_len = u32::from_le_bytes(take(&mut cursor, 4)?.try_into().unwrap()) as usize;
    let method = String::from_utf8(take(&mut cursor, name_len)?.to_vec())
        .map_err(|_| Error::Checkpoint(format!("{}: bad method name", path.display())))?;
    let config_len = u32::from_le_bytes(take(&mut cursor, 4)?.try_into().unwrap()) as usize;
    let config_text = String::from_utf8(take(&mut cursor, config_len)?.to_vec())
        .map_err(|_| Error::Checkpoint(format!("{}: bad config text", path.display())))?;
    let n = u64::from_le_bytes(take(&mut cursor, 8)?.try_into().unwrap()) as usize;
    let raw = take(&mut cursor, n * 8)?;
    let values: Vec<f64> = raw
        .chunks_exact(8)
        .map(|c| f64::from_le_bytes(c.try_into().unwrap()))
        .collect();
    Ok(Checkpoint {
        seed,
        round,
        method,
        config_text,
        values,
    })
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::metrics::METRICS_FILE;

    fn synthetic_config_rounds(
        dir: &Path,
        method: &str,
        extra: &str,
        rounds: u64,
    ) -> ExperimentConfig {
        let text = format!(
            "\
method = {method}
seed = 21
rounds = {rounds}
output = {}
workers = 1
dataset.kind = synthetic
dataset.classes = 3
dataset.dims = 8
dataset.per_class = 30
dataset.noise = 0.05
partition.mode = iid
partition.clients = 3
topology.input = 8
topology.layers = dense:8:12, relu, dense:12:3
local_epochs = 2
batch_size = 16
eta = 0.5
{extra}",
            dir.display()
        );
        ExperimentConfig::parse_str(&text).unwrap()
    }

    fn synthetic_config(dir: &Path, method: &str, extra: &str) -> ExperimentConfig {
        synthetic_config_rounds(dir, method, extra, 3)
    }

    #[test]
    fn zero_rounds_records_initial_state_only() {
        let dir = tempfile::tempdir().unwrap();
        let cfg = synthetic_config_rounds(dir.path(), "fedpm", "", 0);
        let history = run_experiment(&cfg).unwrap();
        assert!(history.is_empty());
        // Initial checkpoint exists and is resumable as a no-op.
        let ckpt = read_checkpoint(&dir.path().join(CHECKPOINT_FILE)).unwrap();
        assert_eq!(ckpt.round, 0);
        let resumed = resume_experiment(&dir.path().join(CHECKPOINT_FILE)).unwrap();
        assert!(resumed.is_empty());
        let csv = std::fs::read_to_string(dir.path().join(METRICS_FILE)).unwrap();
        assert_eq!(csv.lines().count(), 1); // header only
    }

    #[test]
    fn run_produces_history_and_csv_rows() {
        let dir = tempfile::tempdir().unwrap();
        let cfg = synthetic_config(dir.path(), "regularized", "lambda = 0.5\n");
        let history = run_experiment(&cfg).unwrap();
        assert_eq!(history.len(), 3);
        let csv = std::fs::read_to_string(dir.path().join(METRICS_FILE)).unwrap();
        assert_eq!(csv.lines().count(), 4);
        for (i, entry) in history.entries().iter().enumerate() {
            assert_eq!(entry.metrics.round, i as u64 + 1);
            assert!(entry.metrics.accuracy >= 0.0 && entry.metrics.accuracy <= 1.0);
            assert!(entry.metrics.bpp_avg >= 0.0 && entry.metrics.bpp_avg <= 1.0);
        }
    }

    #[test]
    fn rerun_is_byte_identical() {
        let dir_a = tempfile::tempdir().unwrap();
        let dir_b = tempfile::tempdir().unwrap();
        let cfg_a = synthetic_config(dir_a.path(), "regularized", "lambda = 1.0\n");
        let cfg_b = synthetic_config(dir_b.path(), "regularized", "lambda = 1.0\n");
        run_experiment(&cfg_a).unwrap();
        run_experiment(&cfg_b).unwrap();
        let a = std::fs::read(dir_a.path().join(METRICS_FILE)).unwrap();
        let b = std::fs::read(dir_b.path().join(METRICS_FILE)).unwrap();
        assert_eq!(a, b);
    }

    #[test]
    fn fedpm_equals_regularized_with_zero_lambda() {
        let dir_a = tempfile::tempdir().unwrap();
        let dir_b = tempfile::tempdir().unwrap();
        let cfg_a = synthetic_config(dir_a.path(), "fedpm", "");
        let cfg_b = synthetic_config(dir_b.path(), "regularized", "lambda = 0.0\n");
        let ha = run_experiment(&cfg_a).unwrap();
        let hb = run_experiment(&cfg_b).unwrap();
        for (a, b) in ha.entries().iter().zip(hb.entries()) {
            assert_eq!(a.global_hash, b.global_hash);
            assert_eq!(a.metrics.accuracy, b.metrics.accuracy);
            assert_eq!(a.metrics.bpp_avg, b.metrics.bpp_avg);
        }
    }

    #[test]
    fn interrupted_run_resumes_identically() {
        // Full run in one go.
        let dir_full = tempfile::tempdir().unwrap();
        let cfg_full = synthetic_config(dir_full.path(), "regularized", "lambda = 0.3\n");
        let full = run_experiment(&cfg_full).unwrap();

        // Simulate an interrupt after round 1: drive with a truncated round
        // budget while the persisted config still says 3 rounds.
        let dir_part = tempfile::tempdir().unwrap();
        let mut cfg_part = synthetic_config(dir_part.path(), "regularized", "lambda = 0.3\n");
        cfg_part.rounds = 1;
        run_experiment(&cfg_part).unwrap();
        let ckpt_path = dir_part.path().join(CHECKPOINT_FILE);
        assert_eq!(read_checkpoint(&ckpt_path).unwrap().round, 1);
        let resumed = resume_experiment(&ckpt_path).unwrap();

        assert_eq!(resumed.len(), 2);
        let full_tail = &full.entries()[1..];
        for (a, b) in full_tail.iter().zip(resumed.entries()) {
            assert_eq!(a.global_hash, b.global_hash);
            assert_eq!(a.metrics.round, b.metrics.round);
            assert_eq!(a.metrics.accuracy, b.metrics.accuracy);
        }
        // The stitched CSV matches the uninterrupted one byte for byte.
        let a = std::fs::read(dir_full.path().join(METRICS_FILE)).unwrap();
        let b = std::fs::read(dir_part.path().join(METRICS_FILE)).unwrap();
        assert_eq!(a, b);
    }

    #[test]
    fn all_methods_run_end_to_end() {
        for (method, extra) in [
            ("regularized", "lambda = 0.5\n"),
            ("fedpm", ""),
            ("topk", "topk.k_fraction = 0.4\n"),
            ("mv_signsgd", "eta_server = 0.05\n"),
        ] {
            let dir = tempfile::tempdir().unwrap();
            let cfg = synthetic_config(dir.path(), method, extra);
            let history = run_experiment(&cfg).unwrap_or_else(|e| panic!("{method} failed: {e}"));
            assert_eq!(history.len(), 3, "{method}");
        }
    }

    #[test]
    fn mask_dumps_written_when_enabled() {
        let dir = tempfile::tempdir().unwrap();
        let cfg = synthetic_config(dir.path(), "fedpm", "dump_masks = true\n");
        run_experiment(&cfg).unwrap();
        let mask =
            crate::mask::BinaryMask::read_from(&dir.path().join("masks/round0001/client000.mask"))
                .unwrap();
        assert_eq!(mask.len(), 8 * 12 + 12 * 3);
        // Packed payload is at most 1 bit per parameter.
        assert!(mask.as_bytes().len() <= mask.len().div_ceil(8));
    }

    #[test]
    fn worker_count_does_not_change_results() {
        let dir_a = tempfile::tempdir().unwrap();
        let dir_b = tempfile::tempdir().unwrap();
        let mut cfg_a = synthetic_config(dir_a.path(), "regularized", "lambda = 0.2\n");
        let mut cfg_b = synthetic_config(dir_b.path(), "regularized", "lambda = 0.2\n");
        cfg_a.workers = 1;
        cfg_b.workers = 4;
        run_experiment(&cfg_a).unwrap();
        run_experiment(&cfg_b).unwrap();
        let a = std::fs::read(dir_a.path().join(METRICS_FILE)).unwrap();
        let b = std::fs::read(dir_b.path().join(METRICS_FILE)).unwrap();
        assert_eq!(a, b);
    }
}
