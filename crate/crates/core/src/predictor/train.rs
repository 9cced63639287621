//! Mini-batch Adam training and finite-difference gradient checks.

use rand::seq::SliceRandom;
use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;

use super::model::{Architecture, PredictorModel};
use super::{check_dataset, FeatureSequence, PredictorError};

#[derive(Debug, Clone, Copy, PartialEq)]
pub struct TrainConfig {
    pub architecture: Architecture,
    pub learning_rate: f64,
    pub beta1: f64,
    pub beta2: f64,
    pub epsilon: f64,
    pub batch_size: usize,
    pub epochs: usize,
    pub seed: u64,
}

impl Default for TrainConfig {
    fn default() -> Self {
        TrainConfig {
            architecture: Architecture::default(),
            learning_rate: 1e-3,
            beta1: 0.9,
            beta2: 0.999,
            epsilon: 1e-8,
            batch_size: 32,
            epochs: 20,
            seed: 42,
        }
    }
}

/// Mean per-token loss over `batch` and its gradient.
pub fn loss_and_grad(
    model: &PredictorModel,
    batch: &[&FeatureSequence],
) -> Result<(f64, Vec<f64>), PredictorError> {
    let tokens: usize = batch.iter().map(|s| s.len()).sum();
    if tokens == 0 {
        return Err(PredictorError::EmptyDataset);
    }
    let scale = 1.0 / tokens as f64;
    let mut grad = vec![0.0; model.params().len()];
    let mut loss = 0.0;
    for s in batch {
        loss += model.accumulate(&s.features, &s.labels, scale, &mut grad)?;
    }
    Ok((loss * scale, grad))
}

/// Mean per-token loss without gradients.
pub fn mean_loss(model: &PredictorModel, data: &[&FeatureSequence]) -> Result<f64, PredictorError> {
    let mut loss = 0.0;
    let mut tokens = 0usize;
    for s in data {
        let z = model.logits(&s.features)?;
        for (&zi, &yi) in z.iter().zip(&s.labels) {
            let y = if yi { 1.0 } else { 0.0 };
            loss += zi.max(0.0) - zi * y + (-zi.abs()).exp().ln_1p();
        }
        tokens += s.len();
    }
    if tokens == 0 {
        return Err(PredictorError::EmptyDataset);
    }
    Ok(loss / tokens as f64)
}

/// Adam state bound to one model.
#[derive(Debug, Clone)]
pub struct Trainer {
    pub model: PredictorModel,
    config: TrainConfig,
    m: Vec<f64>,
    v: Vec<f64>,
    steps: u64,
}

impl Trainer {
    pub fn new(model: PredictorModel, config: TrainConfig) -> Self {
        let n = model.params().len();
        Trainer {
            model,
            config,
            m: vec![0.0; n],
            v: vec![0.0; n],
            steps: 0,
        }
    }

    pub fn steps(&self) -> u64 {
        self.steps
    }

    /// One Adam update on `batch`; returns the pre-update batch loss.
    pub fn step(&mut self, batch: &[&FeatureSequence]) -> Result<f64, PredictorError> {
        let (loss, grad) = loss_and_grad(&self.model, batch)?;
        if !loss.is_finite() {
            return Err(PredictorError::NonFiniteLoss { step: self.steps });
        }
        if grad.iter().any(|g| !g.is_finite()) {
            return Err(PredictorError::NonFiniteGradient);
        }
        self.steps += 1;
        let c = &self.config;
        let bc1 = 1.0 - c.beta1.powi(self.steps as i32);
        let bc2 = 1.0 - c.beta2.powi(self.steps as i32);
        for (((p, g), m), v) in self
            .model
            .params_mut()
            .iter_mut()
            .zip(&grad)
            .zip(&mut self.m)
            .zip(&mut self.v)
        {
            *m = c.beta1 * *m + (1.0 - c.beta1) * g;
            *v = c.beta2 * *v + (1.0 - c.beta2) * g * g;
            *p -= c.learning_rate * (*m / bc1) / ((*v / bc2).sqrt() + c.epsilon);
        }
        if self.model.params().iter().any(|p| !p.is_finite()) {
            return Err(PredictorError::NonFiniteLoss { step: self.steps });
        }
        Ok(loss)
    }
}

#[derive(Debug, Clone)]
pub struct TrainOutcome {
    pub model: PredictorModel,
    pub config: TrainConfig,
    /// Mean per-token loss over the whole dataset before training.
    pub initial_loss: f64,
    /// Token-weighted mean of batch losses, per epoch.
    pub epoch_losses: Vec<f64>,
    /// Mean per-token loss over the whole dataset after training.
    pub final_loss: f64,
    pub steps: u64,
}

/// Trains a fresh model. Batch order for epoch `e` comes from a ChaCha8
/// stream `e + 1` of `seed`; stream 0 initializes the weights.
pub fn train(dataset: &[FeatureSequence], config: &TrainConfig) -> Result<TrainOutcome, PredictorError> {
    let d_in = check_dataset(dataset)?;
    if config.batch_size == 0 {
        return Err(PredictorError::InvalidArchitecture("batch_size must be positive".into()));
    }
    let model = PredictorModel::init(d_in, config.architecture, config.seed)?;
    let all: Vec<&FeatureSequence> = dataset.iter().collect();
    let initial_loss = mean_loss(&model, &all)?;
    let mut trainer = Trainer::new(model, *config);
    let mut order: Vec<usize> = (0..dataset.len()).collect();
    let mut epoch_losses = Vec::with_capacity(config.epochs);
    for epoch in 0..config.epochs {
        let mut rng = ChaCha8Rng::seed_from_u64(config.seed);
        rng.set_stream(epoch as u64 + 1);
        order.sort_unstable();
        order.shuffle(&mut rng);
        let mut weighted = 0.0;
        let mut tokens = 0usize;
        for chunk in order.chunks(config.batch_size) {
            let batch: Vec<&FeatureSequence> = chunk.iter().map(|&i| &dataset[i]).collect();
            let n: usize = batch.iter().map(|s| s.len()).sum();
            weighted += trainer.step(&batch)? * n as f64;
            tokens += n;
        }
        epoch_losses.push(weighted / tokens as f64);
    }
    let final_loss = mean_loss(&trainer.model, &all)?;
    Ok(TrainOutcome {
        steps: trainer.steps(),
        model: trainer.model,
        config: *config,
        initial_loss,
        epoch_losses,
        final_loss,
    })
}

pub const GRAD_CHECK_EPSILON: f64 = 1e-5;
pub const GRAD_CHECK_SAMPLES: usize = 64;

#[derive(Debug, Clone, PartialEq)]
pub struct GradCheck {
    pub max_relative_error: f64,
    /// Parameter index with the largest error.
    pub worst_index: usize,
    pub checked: usize,
}

/// Central-difference check on `GRAD_CHECK_SAMPLES` parameters drawn with a
/// fixed seed.
pub fn grad_check(
    model: &PredictorModel,
    batch: &[&FeatureSequence],
    epsilon: f64,
) -> Result<GradCheck, PredictorError> {
    grad_check_with(model, batch, epsilon, GRAD_CHECK_SAMPLES, 0)
}

pub fn grad_check_with(
    model: &PredictorModel,
    batch: &[&FeatureSequence],
    epsilon: f64,
    samples: usize,
    seed: u64,
) -> Result<GradCheck, PredictorError> {
    let (_, analytic) = loss_and_grad(model, batch)?;
    if analytic.iter().any(|g| !g.is_finite()) {
        return Err(PredictorError::NonFiniteGradient);
    }
    let n = analytic.len();
    let indices: Vec<usize> = if samples >= n {
        (0..n).collect()
    } else {
        let mut rng = ChaCha8Rng::seed_from_u64(seed);
        let mut picked: Vec<usize> = rand::seq::index::sample(&mut rng, n, samples).into_vec();
        // Always include both head parameters.
        let (w_head, b_head) = model.head_offsets();
        picked.push(w_head + rng.gen_range(0..b_head - w_head));
        picked.push(b_head);
        picked.sort_unstable();
        picked.dedup();
        picked
    };
    let mut probe = model.clone();
    let mut worst = (0.0f64, 0usize);
    for &i in &indices {
        let orig = probe.params()[i];
        probe.params_mut()[i] = orig + epsilon;
        let up = mean_loss(&probe, batch)?;
        probe.params_mut()[i] = orig - epsilon;
        let down = mean_loss(&probe, batch)?;
        probe.params_mut()[i] = orig;
        let numeric = (up - down) / (2.0 * epsilon);
        if !numeric.is_finite() {
            return Err(PredictorError::NonFiniteGradient);
        }
        let ga = analytic[i];
        let rel = (ga - numeric).abs() / (ga.abs() + numeric.abs()).max(1e-8);
        if rel > worst.0 {
            worst = (rel, i);
        }
    }
    Ok(GradCheck {
        max_relative_error: worst.0,
        worst_index: worst.1,
        checked: indices.len(),
    })
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::predictor::model::sigmoid;
    use crate::predictor::synthetic::entropy_threshold_dataset;

    fn small_batch(seed: u64) -> Vec<FeatureSequence> {
        entropy_threshold_dataset(4, 8, 6, seed)
    }

    #[test]
    fn gradient_matches_differences_at_init() {
        let data = small_batch(1);
        let batch: Vec<&FeatureSequence> = data.iter().collect();
        let model = PredictorModel::init(data[0].dim(), Architecture::default(), 5).unwrap();
        let gc = grad_check_with(&model, &batch, 1e-5, 400, 9).unwrap();
        assert!(gc.max_relative_error <= 1e-4, "{gc:?}");
    }

    #[test]
    fn linear_gradient_is_closed_form_logistic() {
        let data = small_batch(2);
        let batch: Vec<&FeatureSequence> = data.iter().collect();
        let model = PredictorModel::init(data[0].dim(), Architecture::Linear, 3).unwrap();
        let (_, g) = loss_and_grad(&model, &batch).unwrap();
        let w = model.params();
        let d = data[0].dim();
        let mut expected = vec![0.0; d + 1];
        let mut n = 0.0;
        for s in &data {
            for (x, &y) in s.features.iter().zip(&s.labels) {
                let z: f64 = x.iter().zip(w).map(|(a, b)| a * b).sum::<f64>() + w[d];
                let r = sigmoid(z) - if y { 1.0 } else { 0.0 };
                for j in 0..d {
                    expected[j] += r * x[j];
                }
                expected[d] += r;
                n += 1.0;
            }
        }
        for (a, e) in g.iter().zip(&expected) {
            assert!((a - e / n).abs() <= 1e-8);
        }
    }

    #[test]
    fn zero_input_gives_finite_gradients() {
        let mut data = small_batch(3);
        for s in &mut data {
            for row in &mut s.features {
                row.fill(0.0);
            }
        }
        let batch: Vec<&FeatureSequence> = data.iter().collect();
        let model = PredictorModel::init(data[0].dim(), Architecture::default(), 1).unwrap();
        let (l, g) = loss_and_grad(&model, &batch).unwrap();
        assert!(l.is_finite() && g.iter().all(|v| v.is_finite()));
        assert!(grad_check(&model, &batch, GRAD_CHECK_EPSILON).is_ok());
    }

    #[test]
    fn zero_epochs_returns_init() {
        let data = small_batch(4);
        let cfg = TrainConfig { epochs: 0, ..TrainConfig::default() };
        let out = train(&data, &cfg).unwrap();
        assert_eq!(out.model, PredictorModel::init(data[0].dim(), cfg.architecture, cfg.seed).unwrap());
        assert_eq!(out.initial_loss, out.final_loss);
        assert_eq!(out.steps, 0);
    }

    #[test]
    fn training_is_bitwise_deterministic_and_reduces_loss() {
        let data = entropy_threshold_dataset(32, 8, 6, 5);
        let cfg = TrainConfig {
            learning_rate: 1e-4,
            epochs: 5,
            ..TrainConfig::default()
        };
        let a = train(&data, &cfg).unwrap();
        let b = train(&data, &cfg).unwrap();
        assert_eq!(a.model.params(), b.model.params());
        assert!(a.final_loss < a.initial_loss);
    }

    #[test]
    fn empty_dataset_is_rejected() {
        assert!(matches!(train(&[], &TrainConfig::default()), Err(PredictorError::EmptyDataset)));
    }
}
