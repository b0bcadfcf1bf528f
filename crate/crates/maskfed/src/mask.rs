//! Scores, probability masks and binary masks.
//!
//! The three vectors at the heart of the method, one entry per network
//! weight: real-valued scores `s`, their sigmoid `theta` (the probability
//! that a weight belongs to the subnetwork), and binary masks sampled from
//! `theta`. Scores are what gradient descent actually updates; the Bernoulli
//! sampling step is bypassed with a straight-through estimator during
//! backpropagation.

use std::fs::File;
use std::io::{Read, Write};
use std::path::Path;

use rand::Rng;

use crate::{Error, Result};

/// Clamp bound applied to probabilities before inverting the sigmoid.
/// Aggregation can produce exact 0s and 1s (all clients agree on a bit),
/// which would map to infinite scores.
pub const THETA_CLAMP_EPS: f64 = 1e-4;

/// Unconstrained per-weight scores `s`.
#[derive(Debug, Clone, PartialEq)]
pub struct ScoreVector(Vec<f64>);

impl ScoreVector {
    pub fn new(values: Vec<f64>) -> Self {
        debug_assert!(values.iter().all(|v| v.is_finite()));
        ScoreVector(values)
    }

    pub fn values(&self) -> &[f64] {
        &self.0
    }

    pub fn len(&self) -> usize {
        self.0.len()
    }

    pub fn is_empty(&self) -> bool {
        self.0.is_empty()
    }
}

/// Per-weight Bernoulli parameters `theta`, each in `[0, 1]`.
#[derive(Debug, Clone, PartialEq)]
pub struct ProbabilityMask(Vec<f64>);

impl ProbabilityMask {
    pub fn new(values: Vec<f64>) -> Result<Self> {
        for &v in &values {
            if !(0.0..=1.0).contains(&v) {
                return Err(Error::Protocol(format!(
                    "probability mask entry {v} outside [0, 1]"
                )));
            }
        }
        Ok(ProbabilityMask(values))
    }

    /// For values already guaranteed in range (sigmoid output, aggregation).
    pub(crate) fn from_raw(values: Vec<f64>) -> Self {
        debug_assert!(values.iter().all(|v| (0.0..=1.0).contains(v)));
        ProbabilityMask(values)
    }

    pub fn values(&self) -> &[f64] {
        &self.0
    }

    pub fn len(&self) -> usize {
        self.0.len()
    }

    pub fn is_empty(&self) -> bool {
        self.0.is_empty()
    }

    pub fn mean(&self) -> f64 {
        if self.0.is_empty() {
            return 0.0;
        }
        self.0.iter().sum::<f64>() / self.0.len() as f64
    }

    /// Copy with every entry clamped into `[eps, 1 - eps]`.
    pub fn clamp_for_inverse(&self) -> ProbabilityMask {
        ProbabilityMask(
            self.0
                .iter()
                .map(|&v| v.clamp(THETA_CLAMP_EPS, 1.0 - THETA_CLAMP_EPS))
                .collect(),
        )
    }
}

/// A sampled `{0, 1}` mask, stored bit-packed.
///
/// Wire format: parameter `j` lives in byte `j / 8` at bit `j % 8`
/// (little-endian bit order within bytes); trailing pad bits are zero.
#[derive(Debug, Clone, PartialEq, Eq)]
pub struct BinaryMask {
    bytes: Vec<u8>,
    len: usize,
}

impl BinaryMask {
    pub fn from_bools(bits: &[bool]) -> Self {
        let mut bytes = vec![0u8; bits.len().div_ceil(8)];
        for (j, &b) in bits.iter().enumerate() {
            if b {
                bytes[j / 8] |= 1 << (j % 8);
            }
        }
        BinaryMask {
            bytes,
            len: bits.len(),
        }
    }

    pub fn all_ones(len: usize) -> Self {
        Self::from_bools(&vec![true; len])
    }

    pub fn all_zeros(len: usize) -> Self {
        BinaryMask {
            bytes: vec![0u8; len.div_ceil(8)],
            len,
        }
    }

    /// Rebuild from packed bytes; validates length and zero padding.
    pub fn from_bytes(bytes: Vec<u8>, len: usize) -> Result<Self> {
        if bytes.len() != len.div_ceil(8) {
            return Err(Error::Protocol(format!(
                "packed mask of {} bits needs {} bytes, got {}",
                len,
                len.div_ceil(8),
                bytes.len()
            )));
        }
        if !len.is_multiple_of(8) {
            let last = bytes[bytes.len() - 1];
            if last >> (len % 8) != 0 {
                return Err(Error::Protocol(
                    "packed mask has nonzero trailing pad bits".into(),
                ));
            }
        }
        Ok(BinaryMask { bytes, len })
    }

    pub fn len(&self) -> usize {
        self.len
    }

    pub fn is_empty(&self) -> bool {
        self.len == 0
    }

    pub fn get(&self, j: usize) -> bool {
        assert!(j < self.len, "bit {j} out of range {}", self.len);
        self.bytes[j / 8] >> (j % 8) & 1 == 1
    }

    pub fn as_bytes(&self) -> &[u8] {
        &self.bytes
    }

    /// Number of set bits.
    pub fn ones(&self) -> usize {
        self.bytes.iter().map(|b| b.count_ones() as usize).sum()
    }

    pub fn density(&self) -> f64 {
        if self.len == 0 {
            return 0.0;
        }
        self.ones() as f64 / self.len as f64
    }

    pub fn iter(&self) -> impl Iterator<Item = bool> + '_ {
        (0..self.len).map(move |j| self.get(j))
    }

    /// Expand to a `{0.0, 1.0}` multiplier for the forward pass.
    pub fn to_multiplier(&self) -> Vec<f64> {
        self.iter().map(|b| if b { 1.0 } else { 0.0 }).collect()
    }

    /// Dump in the packed wire format: a little-endian u64 bit count
    /// followed by the packed bytes.
    pub fn write_to(&self, path: &Path) -> Result<()> {
        let mut f = File::create(path).map_err(Error::io(path.display().to_string()))?;
        f.write_all(&(self.len as u64).to_le_bytes())
            .and_then(|_| f.write_all(&self.bytes))
            .map_err(Error::io(path.display().to_string()))
    }

    pub fn read_from(path: &Path) -> Result<Self> {
        let mut f = File::open(path).map_err(Error::io(path.display().to_string()))?;
        let mut header = [0u8; 8];
        f.read_exact(&mut header)
            .map_err(Error::io(path.display().to_string()))?;
        let len = u64::from_le_bytes(header) as usize;
        let mut bytes = Vec::new();
        f.read_to_end(&mut bytes)
            .map_err(Error::io(path.display().to_string()))?;
        Self::from_bytes(bytes, len)
    }
}

/// Regularizer strength and the parameter count it is normalized by.
#[derive(Debug, Clone, Copy, PartialEq)]
pub struct RegularizerConfig {
    pub lambda: f64,
    pub n: usize,
}

impl RegularizerConfig {
    pub fn new(lambda: f64, n: usize) -> Result<Self> {
        if n == 0 {
            return Err(Error::Protocol("regularizer needs n > 0".into()));
        }
        if !(lambda >= 0.0) {
            return Err(Error::Protocol(format!("lambda {lambda} must be >= 0")));
        }
        Ok(RegularizerConfig { lambda, n })
    }
}

fn sigmoid_scalar(s: f64) -> f64 {
    if s >= 0.0 {
        1.0 / (1.0 + (-s).exp())
    } else {
        let e = s.exp();
        e / (1.0 + e)
    }
}

/// Elementwise `1 / (1 + exp(-s))`, overflow-safe at both extremes.
pub fn sigmoid(s: &ScoreVector) -> ProbabilityMask {
    ProbabilityMask::from_raw(s.values().iter().map(|&v| sigmoid_scalar(v)).collect())
}

/// Elementwise logit `ln(theta / (1 - theta))`. Entries are clamped into
/// `[eps, 1 - eps]` first, so exact 0s and 1s map to finite scores.
pub fn sigmoid_inverse(theta: &ProbabilityMask) -> ScoreVector {
    ScoreVector::new(
        theta
            .values()
            .iter()
            .map(|&v| {
                let t = v.clamp(THETA_CLAMP_EPS, 1.0 - THETA_CLAMP_EPS);
                (t / (1.0 - t)).ln()
            })
            .collect(),
    )
}

/// Draw an independent Bernoulli bit per entry; consumes exactly `len`
/// uniform draws from the stream.
pub fn sample_mask<R: Rng>(theta: &ProbabilityMask, rng: &mut R) -> BinaryMask {
    let bits: Vec<bool> = theta
        .values()
        .iter()
        .map(|&p| rng.random::<f64>() < p)
        .collect();
    BinaryMask::from_bools(&bits)
}

/// Chain rule from a multiplier gradient back to the scores, plus the
/// regularizer gradient.
///
/// The straight-through estimator treats the Bernoulli sampling as identity,
/// so `g_j = loss_grad_multiplier_j * sigmoid'(s_j) + (lambda / n) *
/// sigmoid'(s_j)`.
pub fn score_gradient(
    loss_grad_multiplier: &[f64],
    s: &ScoreVector,
    reg: &RegularizerConfig,
) -> Vec<f64> {
    debug_assert_eq!(loss_grad_multiplier.len(), s.len());
    let reg_term = reg.lambda / reg.n as f64;
    s.values()
        .iter()
        .zip(loss_grad_multiplier)
        .map(|(&sj, &g)| {
            let p = sigmoid_scalar(sj);
            let dp = p * (1.0 - p);
            (g + reg_term) * dp
        })
        .collect()
}

/// One SGD step on the scores: `s' = s - (eta / batch_size) * g`, where `g`
/// is the sum of per-example score gradients over the mini-batch. Passing a
/// pre-averaged gradient with `batch_size = 1` is equivalent.
pub fn apply_update(
    s: &ScoreVector,
    g: &[f64],
    eta: f64,
    batch_size: usize,
) -> (ScoreVector, ProbabilityMask) {
    debug_assert_eq!(g.len(), s.len());
    debug_assert!(batch_size > 0);
    let scale = eta / batch_size as f64;
    let next = ScoreVector::new(
        s.values()
            .iter()
            .zip(g)
            .map(|(&sj, &gj)| sj - scale * gj)
            .collect(),
    );
    let theta = sigmoid(&next);
    (next, theta)
}

/// Value of the regularizer term `(lambda / n) * sum_j sigmoid(s_j)`.
pub fn regularizer_value(s: &ScoreVector, reg: &RegularizerConfig) -> f64 {
    let sum: f64 = s.values().iter().map(|&v| sigmoid_scalar(v)).sum();
    reg.lambda / reg.n as f64 * sum
}
