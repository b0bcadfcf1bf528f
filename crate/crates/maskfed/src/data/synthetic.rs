//! Seeded Gaussian-blob classification data, a desk-scale dataset stand-in.

use rand::Rng;

use super::Dataset;
use crate::rng::{stream, StreamId};
use crate::Result;

/// Generate `class_count * per_class` examples. Each class gets a mean
/// drawn uniformly from `[0, 1]^dims`; examples are the mean plus isotropic
/// Gaussian noise, clamped back into `[0, 1]`. Examples are laid out
/// class-major (all of class 0 first).
pub fn generate_synthetic(
    class_count: usize,
    dims: usize,
    per_class: usize,
    noise: f64,
    seed: u64,
) -> Result<Dataset> {
    let mut rng = stream(seed, StreamId::SyntheticData);
    let means: Vec<Vec<f64>> = (0..class_count)
        .map(|_| (0..dims).map(|_| rng.random::<f64>()).collect())
        .collect();

    let mut features = Vec::with_capacity(class_count * per_class * dims);
    let mut labels = Vec::with_capacity(class_count * per_class);
    for (class, mean) in means.iter().enumerate() {
        for _ in 0..per_class {
            for &m in mean {
                let v = m + noise * gaussian(&mut rng);
                features.push(v.clamp(0.0, 1.0));
            }
            labels.push(class);
        }
    }
    Dataset::new(features, vec![dims], labels, class_count)
}

/// Standard normal via Box-Muller; consumes two uniform draws.
fn gaussian<R: Rng>(rng: &mut R) -> f64 {
    // random::<f64>() is in [0, 1); flip to (0, 1] so the log is finite.
    let u1 = 1.0 - rng.random::<f64>();
    let u2 = rng.random::<f64>();
    (-2.0 * u1.ln()).sqrt() * (std::f64::consts::TAU * u2).cos()
}
