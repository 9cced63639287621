//! Synthetic datasets with a known labelling rule.

use rand::distributions::{Distribution, Uniform};
use rand::SeedableRng;
use rand_chacha::ChaCha8Rng;

use super::FeatureSequence;

/// Entropy range of the synthetic steps, in nats.
pub const MAX_ENTROPY: f64 = 3.0;
/// Steps below this entropy are labelled memorized.
pub const ENTROPY_THRESHOLD: f64 = 1.5;

/// `n` sequences of `len` steps with the standard feature layout:
/// `embed_dim` uniform values in [−1, 1], an entropy uniform in
/// [0, `MAX_ENTROPY`], a log frequency uniform in [0, 10] and the normalized
/// index. Labels are `entropy < ENTROPY_THRESHOLD`, so the classes are
/// linearly separable.
pub fn entropy_threshold_dataset(n: usize, len: usize, embed_dim: usize, seed: u64) -> Vec<FeatureSequence> {
    let mut rng = ChaCha8Rng::seed_from_u64(seed);
    let emb = Uniform::new_inclusive(-1.0, 1.0);
    let ent = Uniform::new_inclusive(0.0, MAX_ENTROPY);
    let freq = Uniform::new_inclusive(0.0, 10.0);
    let denom = if len > 1 { (len - 1) as f64 } else { 1.0 };
    (0..n)
        .map(|i| {
            let mut features = Vec::with_capacity(len);
            let mut labels = Vec::with_capacity(len);
            for s in 0..len {
                let mut row: Vec<f64> = (0..embed_dim).map(|_| emb.sample(&mut rng)).collect();
                let h = ent.sample(&mut rng);
                row.push(h);
                row.push(freq.sample(&mut rng));
                row.push(s as f64 / denom);
                features.push(row);
                labels.push(h < ENTROPY_THRESHOLD);
            }
            FeatureSequence {
                sequence_id: format!("syn-{i:06}"),
                features,
                labels,
            }
        })
        .collect()
}
