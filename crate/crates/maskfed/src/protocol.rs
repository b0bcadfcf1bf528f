//! One communication round: downlink of the global probability mask, local
//! score training on each client, uplink of sampled binary masks, and the
//! server's weighted bit average.

use rand_chacha::ChaCha8Rng;

use rand::seq::SliceRandom;

use crate::data::Dataset;
use crate::mask::{
    apply_update, sample_mask, score_gradient, sigmoid, sigmoid_inverse, BinaryMask,
    ProbabilityMask, RegularizerConfig, ScoreVector,
};
use crate::metrics::RoundMetrics;
use crate::rng::{stream, StreamId};
use crate::tensor::{backward_multiplier, cross_entropy_batch, forward_masked, FixedWeights};
use crate::{Error, Result};

/// One simulated client: an id and the indices of its local examples.
#[derive(Debug, Clone)]
pub struct ClientState {
    pub client_id: usize,
    pub indices: Vec<usize>,
}

impl ClientState {
    pub fn dataset_size(&self) -> usize {
        self.indices.len()
    }
}

/// Global server state for mask methods.
#[derive(Debug, Clone)]
pub struct ServerState {
    pub theta: ProbabilityMask,
    pub round: u64,
    pub seed: u64,
}

impl ServerState {
    /// Fresh state at round 0 with the initial probability mask drawn
    /// i.i.d. from U[0, 1].
    pub fn init(seed: u64, n: usize) -> Self {
        use rand::Rng;
        let mut rng = stream(seed, StreamId::ThetaInit);
        let values: Vec<f64> = (0..n).map(|_| rng.random::<f64>()).collect();
        ServerState {
            theta: ProbabilityMask::from_raw(values),
            round: 0,
            seed,
        }
    }
}

/// Per-round hyperparameters shared by all clients.
#[derive(Debug, Clone, Copy)]
pub struct RoundConfig {
    pub local_epochs: usize,
    pub batch_size: usize,
    pub eta: f64,
    pub lambda: f64,
    /// Fraction of clients selected each round, in (0, 1].
    pub participation: f64,
}

/// The only thing a client sends: its sampled binary mask and how many
/// examples backed it.
#[derive(Debug, Clone, PartialEq, Eq)]
pub struct UplinkMessage {
    pub client_id: usize,
    pub mask: BinaryMask,
    pub dataset_size: usize,
}

/// Append-only record of an experiment.
#[derive(Debug, Clone, Default)]
pub struct HistoryLog {
    entries: Vec<HistoryEntry>,
}

#[derive(Debug, Clone)]
pub struct HistoryEntry {
    /// FNV-1a hash of the global parameter snapshot after the round.
    pub global_hash: u64,
    pub metrics: RoundMetrics,
}

impl HistoryLog {
    pub fn new() -> Self {
        Self::default()
    }

    pub fn push(&mut self, entry: HistoryEntry) {
        self.entries.push(entry);
    }

    pub fn entries(&self) -> &[HistoryEntry] {
        &self.entries
    }

    pub fn len(&self) -> usize {
        self.entries.len()
    }

    pub fn is_empty(&self) -> bool {
        self.entries.is_empty()
    }
}

/// FNV-1a over the little-endian bytes of a value snapshot.
pub fn hash_values(values: &[f64]) -> u64 {
    let mut hash: u64 = 0xcbf2_9ce4_8422_2325;
    for v in values {
        for b in v.to_le_bytes() {
            hash ^= b as u64;
            hash = hash.wrapping_mul(0x0000_0100_0000_01b3);
        }
    }
    hash
}

/// Local training of one client for one round.
///
/// Recovers scores from the downlinked probability mask, then for every
/// mini-batch of every local epoch: samples a fresh binary mask, runs the
/// masked forward/backward pass, and takes one score step combining the
/// batch-averaged data gradient with the regularizer gradient. Finally
/// samples the uplink mask from the updated probabilities.
pub fn client_local_train(
    client: &ClientState,
    dataset: &Dataset,
    theta_down: &ProbabilityMask,
    weights: &FixedWeights,
    cfg: &RoundConfig,
    rng: &mut ChaCha8Rng,
) -> Result<UplinkMessage> {
    if client.indices.is_empty() {
        return Err(Error::Protocol(format!(
            "client {} has an empty partition",
            client.client_id
        )));
    }
    let n = weights.param_count();
    if theta_down.len() != n {
        return Err(Error::Protocol(format!(
            "downlink mask has {} entries, network has {} parameters",
            theta_down.len(),
            n
        )));
    }
    let reg = RegularizerConfig::new(cfg.lambda, n)?;
    let mut s = sigmoid_inverse(theta_down);
    let mut order = client.indices.clone();
    for _epoch in 0..cfg.local_epochs {
        order.shuffle(rng);
        for chunk in order.chunks(cfg.batch_size) {
            s = train_batch(&s, weights, dataset, chunk, &reg, cfg.eta, rng)?;
        }
    }
    let mask = sample_mask(&sigmoid(&s), rng);
    Ok(UplinkMessage {
        client_id: client.client_id,
        mask,
        dataset_size: client.indices.len(),
    })
}

fn train_batch(
    s: &ScoreVector,
    weights: &FixedWeights,
    dataset: &Dataset,
    chunk: &[usize],
    reg: &RegularizerConfig,
    eta: f64,
    rng: &mut ChaCha8Rng,
) -> Result<ScoreVector> {
    let theta = sigmoid(s);
    let mask = sample_mask(&theta, rng);
    let (x, labels) = dataset.batch(chunk);
    let (logits, cache) = forward_masked(weights, &mask.to_multiplier(), &x)?;
    let (_loss, grad_logits) = cross_entropy_batch(&logits, &labels)?;
    let mut grad_mult = backward_multiplier(cache, &grad_logits)?;
    // Average the data gradient over the batch here; the regularizer term
    // added by score_gradient is per batch, not per example, so the update
    // runs with batch_size 1.
    let inv = 1.0 / chunk.len() as f64;
    for g in grad_mult.iter_mut() {
        *g *= inv;
    }
    let g = score_gradient(&grad_mult, s, reg);
    let (next, _) = apply_update(s, &g, eta, 1);
    Ok(next)
}

/// Dataset-size-weighted average of the uplinked bits:
/// `theta_j = sum_i |D_i| m_ij / sum_k |D_k|`.
///
/// Accumulated in integers, so the result is independent of uplink order.
pub fn server_aggregate(uplinks: &[UplinkMessage]) -> Result<ProbabilityMask> {
    let first = uplinks
        .first()
        .ok_or_else(|| Error::Protocol("cannot aggregate zero uplinks".into()))?;
    let n = first.mask.len();
    let mut numer = vec![0u64; n];
    let mut denom = 0u64;
    for up in uplinks {
        if up.mask.len() != n {
            return Err(Error::Protocol(format!(
                "uplink from client {} has {} bits, expected {n}",
                up.client_id,
                up.mask.len()
            )));
        }
        let size = up.dataset_size as u64;
        denom += size;
        for (j, bit) in up.mask.iter().enumerate() {
            if bit {
                numer[j] += size;
            }
        }
    }
    if denom == 0 {
        return Err(Error::Protocol("total dataset size is zero".into()));
    }
    Ok(ProbabilityMask::from_raw(
        numer.iter().map(|&v| v as f64 / denom as f64).collect(),
    ))
}

/// Uniformly select `ceil(participation * K)` distinct clients for a round.
/// The result is sorted so downstream iteration order is deterministic.
pub fn select_participants(
    seed: u64,
    round: u64,
    client_count: usize,
    participation: f64,
) -> Vec<usize> {
    let take = ((participation * client_count as f64).ceil() as usize).clamp(1, client_count);
    let mut ids: Vec<usize> = (0..client_count).collect();
    if take < client_count {
        let mut rng = stream(seed, StreamId::ClientSelection { round });
        ids.shuffle(&mut rng);
        ids.truncate(take);
        ids.sort_unstable();
    }
    ids
}
