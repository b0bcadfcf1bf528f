//! Comparison methods: deterministic top-k masking and majority-vote
//! SignSGD.

use rand_chacha::ChaCha8Rng;

use rand::seq::SliceRandom;

use crate::data::Dataset;
use crate::mask::{
    apply_update, score_gradient, sigmoid_inverse, BinaryMask, ProbabilityMask, RegularizerConfig,
    ScoreVector,
};
use crate::protocol::{ClientState, RoundConfig, UplinkMessage};
use crate::tensor::{
    backward_effective, backward_multiplier, cross_entropy_batch, forward_masked,
    forward_with_weights, FixedWeights, NetworkTopology,
};
use crate::{Error, Result};

#[derive(Debug, Clone, Copy)]
pub struct TopKConfig {
    pub k_fraction: f64,
}

impl TopKConfig {
    pub fn new(k_fraction: f64) -> Result<Self> {
        if !(k_fraction > 0.0 && k_fraction <= 1.0) {
            return Err(Error::Config(format!(
                "k_fraction {k_fraction} outside (0, 1]"
            )));
        }
        Ok(TopKConfig { k_fraction })
    }

    /// Number of kept parameters for a vector of length `n`.
    pub fn keep(&self, n: usize) -> usize {
        ((self.k_fraction * n as f64).ceil() as usize).min(n)
    }
}

/// Exactly `ceil(k_fraction * n)` ones at the indices of the largest scores;
/// ties break toward the lower index.
pub fn topk_mask(s: &ScoreVector, cfg: &TopKConfig) -> BinaryMask {
    let n = s.len();
    let keep = cfg.keep(n);
    if keep == n {
        return BinaryMask::all_ones(n);
    }
    let values = s.values();
    let mut order: Vec<u32> = (0..n as u32).collect();
    // Total order: higher score first, lower index first on equal scores.
    let rank = |&i: &u32, &j: &u32| {
        values[j as usize]
            .partial_cmp(&values[i as usize])
            .expect("scores are finite")
            .then(i.cmp(&j))
    };
    order.select_nth_unstable_by(keep.saturating_sub(1), rank);
    let mut bits = vec![false; n];
    for &i in &order[..keep] {
        bits[i as usize] = true;
    }
    BinaryMask::from_bools(&bits)
}

/// Local training for the top-k baseline. Mirrors the stochastic client but
/// replaces Bernoulli sampling with the deterministic top-k mask of the
/// current scores; the straight-through estimator still passes gradients to
/// every score. The uplink is the top-k mask of the final scores.
pub fn topk_client_train(
    client: &ClientState,
    dataset: &Dataset,
    theta_down: &ProbabilityMask,
    weights: &FixedWeights,
    topk: &TopKConfig,
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
            let mask = topk_mask(&s, topk);
            let (x, labels) = dataset.batch(chunk);
            let (logits, cache) = forward_masked(weights, &mask.to_multiplier(), &x)?;
            let (_loss, grad_logits) = cross_entropy_batch(&logits, &labels)?;
            let mut grad_mult = backward_multiplier(cache, &grad_logits)?;
            let inv = 1.0 / chunk.len() as f64;
            for g in grad_mult.iter_mut() {
                *g *= inv;
            }
            let g = score_gradient(&grad_mult, &s, &reg);
            let (next, _) = apply_update(&s, &g, cfg.eta, 1);
            s = next;
        }
    }
    Ok(UplinkMessage {
        client_id: client.client_id,
        mask: topk_mask(&s, topk),
        dataset_size: client.indices.len(),
    })
}

/// Server state for majority-vote SignSGD: real trainable weights, unlike
/// every mask method.
#[derive(Debug, Clone)]
pub struct SignSgdServerState {
    pub weights: Vec<f64>,
    pub eta_server: f64,
}

impl SignSgdServerState {
    pub fn new(weights: Vec<f64>, eta_server: f64) -> Result<Self> {
        if !(eta_server > 0.0) {
            return Err(Error::Config(format!(
                "eta_server {eta_server} must be positive"
            )));
        }
        Ok(SignSgdServerState {
            weights,
            eta_server,
        })
    }
}

/// Sign of the local cross-entropy gradient with respect to the weights,
/// accumulated over all mini-batches of all local epochs. `sign(0) = +1`.
pub fn mv_signsgd_client(
    weight_values: &[f64],
    topology: &NetworkTopology,
    dataset: &Dataset,
    indices: &[usize],
    local_epochs: usize,
    batch_size: usize,
) -> Result<Vec<i8>> {
    if indices.is_empty() {
        return Err(Error::Protocol("client has an empty partition".into()));
    }
    let n = topology.param_count();
    let ones = vec![1.0; n];
    let mut acc = vec![0.0; n];
    for _epoch in 0..local_epochs {
        for chunk in indices.chunks(batch_size) {
            let (x, labels) = dataset.batch(chunk);
            let (logits, cache) = forward_with_weights(topology, weight_values, &ones, &x)?;
            let (_loss, grad_logits) = cross_entropy_batch(&logits, &labels)?;
            // With an all-ones multiplier the effective-weight gradient is
            // exactly the weight gradient.
            let grad = backward_effective(cache, &grad_logits)?;
            for (a, g) in acc.iter_mut().zip(&grad) {
                *a += g;
            }
        }
    }
    Ok(acc.iter().map(|&g| if g >= 0.0 { 1 } else { -1 }).collect())
}

/// Majority vote across clients, then one signed step per coordinate:
/// `w <- w - eta_server * sign(sum_i sign_i)` with `sign(0) = +1`.
pub fn mv_signsgd_aggregate(signs: &[Vec<i8>], state: &mut SignSgdServerState) -> Result<()> {
    if signs.is_empty() {
        return Err(Error::Protocol("cannot aggregate zero sign vectors".into()));
    }
    let n = state.weights.len();
    for s in signs {
        if s.len() != n {
            return Err(Error::Protocol(format!(
                "sign vector has {} entries, expected {n}",
                s.len()
            )));
        }
    }
    for (j, w) in state.weights.iter_mut().enumerate() {
        let total: i64 = signs.iter().map(|s| s[j] as i64).sum();
        let vote = if total >= 0 { 1.0 } else { -1.0 };
        *w -= state.eta_server * vote;
    }
    Ok(())
}

/// Pack a sign vector for uplink accounting: `-1 -> 0`, `+1 -> 1`.
pub fn signs_to_mask(signs: &[i8]) -> BinaryMask {
    BinaryMask::from_bools(&signs.iter().map(|&s| s > 0).collect::<Vec<_>>())
}
