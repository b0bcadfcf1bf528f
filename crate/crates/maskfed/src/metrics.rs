//! Bits-per-parameter accounting, model evaluation and CSV emission.

use std::fs::{File, OpenOptions};
use std::io::{BufWriter, Write};
use std::path::Path;

use rand_chacha::ChaCha8Rng;

use crate::data::{Dataset, EvalSets};
use crate::mask::{sample_mask, BinaryMask, ProbabilityMask};
use crate::protocol::{HistoryLog, UplinkMessage};
use crate::tensor::{forward_with_weights, FixedWeights, NetworkTopology};
use crate::{Error, Result};

/// Everything reported about one completed round.
#[derive(Debug, Clone)]
pub struct RoundMetrics {
    /// 1-based index of the completed round.
    pub round: u64,
    /// Validation accuracy of the aggregated global state.
    pub accuracy: f64,
    /// Participating client ids, aligned with `bpp_per_client`.
    pub participants: Vec<usize>,
    /// Empirical uplink entropy per participating client, bits/parameter.
    pub bpp_per_client: Vec<f64>,
    /// Unweighted mean of `bpp_per_client`.
    pub bpp_avg: f64,
    /// Mean fraction of ones across the uplinked masks.
    pub mask_density_avg: f64,
    /// Mean of the global parameter vector after aggregation (the
    /// probability mask for mask methods, the weights for sign methods).
    pub theta_mean: f64,
}

/// Empirical entropy of the binary source behind a mask, in bits per
/// parameter: `-p0 log2 p0 - p1 log2 p1` with `p1 = ones / n` and
/// `0 log 0 = 0`. Always in `[0, 1]`.
pub fn estimate_entropy(mask: &BinaryMask) -> f64 {
    assert!(!mask.is_empty(), "entropy of an empty mask is undefined");
    let p1 = mask.ones() as f64 / mask.len() as f64;
    binary_entropy(p1)
}

fn binary_entropy(p1: f64) -> f64 {
    let p0 = 1.0 - p1;
    let mut h = 0.0;
    if p0 > 0.0 {
        h -= p0 * p0.log2();
    }
    if p1 > 0.0 {
        h -= p1 * p1.log2();
    }
    h
}

/// Per-client uplink entropies and their unweighted average.
pub fn round_bpp(uplinks: &[UplinkMessage]) -> (Vec<f64>, f64) {
    assert!(!uplinks.is_empty(), "no uplinks to account");
    let per_client: Vec<f64> = uplinks.iter().map(|u| estimate_entropy(&u.mask)).collect();
    let avg = per_client.iter().sum::<f64>() / per_client.len() as f64;
    (per_client, avg)
}

/// How the probability mask is turned into a concrete multiplier for
/// evaluation.
#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub enum EvalMode {
    /// Draw one Bernoulli mask per evaluation pass.
    Sampled,
    /// Use the probabilities themselves as fractional multipliers.
    Expected,
    /// Use the deterministic mask `1[theta > 0.5]`.
    Thresholded,
}

impl EvalMode {
    fn multiplier(self, theta: &ProbabilityMask, rng: &mut ChaCha8Rng) -> Vec<f64> {
        match self {
            EvalMode::Sampled => sample_mask(theta, rng).to_multiplier(),
            EvalMode::Expected => theta.values().to_vec(),
            EvalMode::Thresholded => theta
                .values()
                .iter()
                .map(|&p| if p > 0.5 { 1.0 } else { 0.0 })
                .collect(),
        }
    }
}

/// Classification accuracy of a fixed multiplier over a set of examples.
/// Argmax ties break toward the lowest class index.
pub fn accuracy_with_multiplier(
    topology: &NetworkTopology,
    weight_values: &[f64],
    multiplier: &[f64],
    dataset: &Dataset,
    indices: &[usize],
) -> Result<f64> {
    if indices.is_empty() {
        return Err(Error::Protocol("empty evaluation set".into()));
    }
    let classes = topology.class_count();
    let mut correct = 0usize;
    for chunk in indices.chunks(256) {
        let (x, labels) = dataset.batch(chunk);
        let (logits, _) = forward_with_weights(topology, weight_values, multiplier, &x)?;
        for (row, &label) in logits.values().chunks(classes).zip(&labels) {
            let mut best = 0usize;
            for (c, &v) in row.iter().enumerate() {
                if v > row[best] {
                    best = c;
                }
            }
            if best == label {
                correct += 1;
            }
        }
    }
    Ok(correct as f64 / indices.len() as f64)
}

/// Evaluate a probability mask over one evaluation set.
pub fn evaluate(
    theta: &ProbabilityMask,
    weights: &FixedWeights,
    dataset: &Dataset,
    indices: &[usize],
    mode: EvalMode,
    rng: &mut ChaCha8Rng,
) -> Result<f64> {
    let multiplier = mode.multiplier(theta, rng);
    accuracy_with_multiplier(
        weights.topology(),
        weights.values(),
        &multiplier,
        dataset,
        indices,
    )
}

/// Evaluate over the experiment's evaluation sets: a single accuracy for a
/// global holdout, or the unweighted device average for per-client holdouts.
/// In sampled mode one mask is drawn per pass (shared by all devices) and
/// the result is averaged over `draws` passes.
pub fn evaluate_sets(
    theta: &ProbabilityMask,
    weights: &FixedWeights,
    dataset: &Dataset,
    eval: &EvalSets,
    mode: EvalMode,
    rng: &mut ChaCha8Rng,
    draws: usize,
) -> Result<f64> {
    let passes = match mode {
        EvalMode::Sampled => draws.max(1),
        _ => 1,
    };
    let mut total = 0.0;
    for _ in 0..passes {
        let multiplier = mode.multiplier(theta, rng);
        total += accuracy_over_sets(
            weights.topology(),
            weights.values(),
            &multiplier,
            dataset,
            eval,
        )?;
    }
    Ok(total / passes as f64)
}

/// Device-averaged accuracy of a fixed multiplier.
pub fn accuracy_over_sets(
    topology: &NetworkTopology,
    weight_values: &[f64],
    multiplier: &[f64],
    dataset: &Dataset,
    eval: &EvalSets,
) -> Result<f64> {
    match eval {
        EvalSets::Global(indices) => {
            accuracy_with_multiplier(topology, weight_values, multiplier, dataset, indices)
        }
        EvalSets::PerClient(sets) => {
            let mut sum = 0.0;
            let mut devices = 0usize;
            for set in sets {
                if set.is_empty() {
                    continue;
                }
                sum += accuracy_with_multiplier(topology, weight_values, multiplier, dataset, set)?;
                devices += 1;
            }
            if devices == 0 {
                return Err(Error::Protocol(
                    "all per-device evaluation sets empty".into(),
                ));
            }
            Ok(sum / devices as f64)
        }
    }
}

pub const METRICS_FILE: &str = "metrics.csv";
pub const CLIENT_METRICS_FILE: &str = "metrics_clients.csv";
const METRICS_HEADER: &str = "round,method,lambda,accuracy,bpp_avg,mask_density_avg,theta_mean";
const CLIENT_HEADER: &str = "round,client_id,bpp";

/// Incremental CSV writer: one wide row per round plus a long-format
/// companion with per-client bpp. Rows are flushed as they are appended.
pub struct MetricsWriter {
    main: BufWriter<File>,
    clients: BufWriter<File>,
    method: String,
    lambda: f64,
}

impl MetricsWriter {
    /// Start fresh, truncating any previous files and writing headers.
    pub fn create(dir: &Path, method: &str, lambda: f64) -> Result<Self> {
        let main_path = dir.join(METRICS_FILE);
        let clients_path = dir.join(CLIENT_METRICS_FILE);
        let mut main = BufWriter::new(
            File::create(&main_path).map_err(Error::io(main_path.display().to_string()))?,
        );
        let mut clients = BufWriter::new(
            File::create(&clients_path).map_err(Error::io(clients_path.display().to_string()))?,
        );
        writeln!(main, "{METRICS_HEADER}").map_err(Error::io(main_path.display().to_string()))?;
        writeln!(clients, "{CLIENT_HEADER}")
            .map_err(Error::io(clients_path.display().to_string()))?;
        let mut w = MetricsWriter {
            main,
            clients,
            method: method.to_string(),
            lambda,
        };
        w.flush()?;
        Ok(w)
    }

    /// Continue an interrupted run: append to existing files, writing
    /// headers only if they are new or empty.
    pub fn open_append(dir: &Path, method: &str, lambda: f64) -> Result<Self> {
        let open = |name: &str| -> Result<(BufWriter<File>, bool)> {
            let path = dir.join(name);
            let file = OpenOptions::new()
                .create(true)
                .append(true)
                .open(&path)
                .map_err(Error::io(path.display().to_string()))?;
            let empty = file
                .metadata()
                .map_err(Error::io(path.display().to_string()))?
                .len()
                == 0;
            Ok((BufWriter::new(file), empty))
        };
        let (mut main, main_empty) = open(METRICS_FILE)?;
        let (mut clients, clients_empty) = open(CLIENT_METRICS_FILE)?;
        if main_empty {
            writeln!(main, "{METRICS_HEADER}").map_err(Error::io(METRICS_FILE))?;
        }
        if clients_empty {
            writeln!(clients, "{CLIENT_HEADER}").map_err(Error::io(CLIENT_METRICS_FILE))?;
        }
        let mut w = MetricsWriter {
            main,
            clients,
            method: method.to_string(),
            lambda,
        };
        w.flush()?;
        Ok(w)
    }

    pub fn append(&mut self, m: &RoundMetrics) -> Result<()> {
        writeln!(
            self.main,
            "{},{},{:.6},{:.6},{:.6},{:.6},{:.6}",
            m.round,
            self.method,
            self.lambda,
            m.accuracy,
            m.bpp_avg,
            m.mask_density_avg,
            m.theta_mean
        )
        .map_err(Error::io(METRICS_FILE))?;
        for (client, bpp) in m.participants.iter().zip(&m.bpp_per_client) {
            writeln!(self.clients, "{},{},{:.6}", m.round, client, bpp)
                .map_err(Error::io(CLIENT_METRICS_FILE))?;
        }
        self.flush()
    }

    fn flush(&mut self) -> Result<()> {
        self.main.flush().map_err(Error::io(METRICS_FILE))?;
        self.clients.flush().map_err(Error::io(CLIENT_METRICS_FILE))
    }
}

/// Write a complete history in one go.
pub fn write_metrics_csv(
    history: &HistoryLog,
    dir: &Path,
    method: &str,
    lambda: f64,
) -> Result<()> {
    let mut writer = MetricsWriter::create(dir, method, lambda)?;
    for entry in history.entries() {
        writer.append(&entry.metrics)?;
    }
    Ok(())
}
