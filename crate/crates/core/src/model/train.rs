use std::time::{Duration, Instant};

use rand::seq::SliceRandom;
use rand::Rng;
use serde::{Deserialize, Serialize};

use super::network::{sequence_loss, SequenceStats};
use super::params::ModelParams;
use super::{ModelConfig, ModelError};

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
#[serde(tag = "kind", rename_all = "lowercase")]
pub enum Optimizer {
    /// Plain mini-batch gradient descent.
    Sgd,
    Adam {
        beta1: f64,
        beta2: f64,
        epsilon: f64,
    },
}

impl Optimizer {
    pub fn adam() -> Self {
        Optimizer::Adam {
            beta1: 0.9,
            beta2: 0.999,
            epsilon: 1e-8,
        }
    }
}

struct OptimizerState {
    kind: Optimizer,
    learning_rate: f64,
    step: i32,
    first: Option<ModelParams>,
    second: Option<ModelParams>,
}

impl OptimizerState {
    fn new(kind: Optimizer, learning_rate: f64, like: &ModelParams) -> Self {
        let moments = matches!(kind, Optimizer::Adam { .. });
        Self {
            kind,
            learning_rate,
            step: 0,
            first: moments.then(|| like.zeros_like()),
            second: moments.then(|| like.zeros_like()),
        }
    }

    /// Applies the mean gradient `grads / count`.
    fn apply(&mut self, params: &mut ModelParams, grads: &ModelParams, count: usize) {
        let scale = 1.0 / count.max(1) as f64;
        match self.kind {
            Optimizer::Sgd => params.add_scaled(-self.learning_rate * scale, grads),
            Optimizer::Adam { beta1, beta2, epsilon } => {
                self.step += 1;
                let lr = self.learning_rate * (1.0 - beta2.powi(self.step)).sqrt() / (1.0 - beta1.powi(self.step));
                let first = self.first.as_mut().expect("adam state");
                let second = self.second.as_mut().expect("adam state");
                let blocks = params
                    .blocks_mut()
                    .into_iter()
                    .zip(first.blocks_mut())
                    .zip(second.blocks_mut())
                    .zip(grads.blocks());
                for ((((_, p), (_, m)), (_, v)), (_, g, _)) in blocks {
                    for i in 0..p.len() {
                        let gi = g[i] * scale;
                        m[i] = beta1 * m[i] + (1.0 - beta1) * gi;
                        v[i] = beta2 * v[i] + (1.0 - beta2) * gi * gi;
                        p[i] -= lr * m[i] / (v[i].sqrt() + epsilon);
                    }
                }
            }
        }
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct EpochLog {
    pub epoch: usize,
    /// Mean cross-entropy per predicted token on the training split.
    pub loss: f64,
    pub validation_accuracy: Option<f64>,
    pub elapsed: Duration,
}

#[derive(Debug, Clone)]
pub struct TrainedModel {
    pub params: ModelParams,
    /// Top-1 next-token accuracy on the validation split; `None` when it is empty.
    pub validation_accuracy: Option<f64>,
    pub epochs: Vec<EpochLog>,
    pub wall_time: Duration,
}

/// Random disjoint split; the training side gets `round(ratio * n)` items.
pub fn split_corpus<T: Clone, R: Rng + ?Sized>(examples: &[T], rng: &mut R, ratio: f64) -> (Vec<T>, Vec<T>) {
    assert!(ratio > 0.0 && ratio < 1.0, "split ratio must be in (0, 1)");
    let mut order: Vec<usize> = (0..examples.len()).collect();
    order.shuffle(rng);
    let n_train = (ratio * examples.len() as f64).round() as usize;
    let pick = |idx: &[usize]| idx.iter().map(|&i| examples[i].clone()).collect::<Vec<T>>();
    (pick(&order[..n_train]), pick(&order[n_train..]))
}

/// Summed statistics without gradients.
pub fn evaluate(params: &ModelParams, examples: &[Vec<usize>]) -> SequenceStats {
    examples.iter().fold(SequenceStats::default(), |acc, ex| {
        let s = sequence_loss(params, ex, None);
        SequenceStats {
            loss: acc.loss + s.loss,
            predictions: acc.predictions + s.predictions,
            correct: acc.correct + s.correct,
        }
    })
}

/// Trains a freshly initialized model on encoded examples.
pub fn train<R: Rng + ?Sized>(
    examples: &[Vec<usize>],
    vocab_size: usize,
    config: &ModelConfig,
    rng: &mut R,
    mut on_epoch: impl FnMut(&EpochLog),
) -> Result<TrainedModel, ModelError> {
    if examples.is_empty() {
        return Err(ModelError::EmptyCorpus);
    }
    let started = Instant::now();
    let (mut train_set, validation) = split_corpus(examples, rng, config.train_ratio);
    let mut params = ModelParams::random(vocab_size, config.embedding_dim, config.hidden_dim, rng);
    let mut optimizer = OptimizerState::new(config.optimizer, config.learning_rate, &params);
    let mut grads = params.zeros_like();
    let mut epochs = Vec::with_capacity(config.epochs);
    let mut validation_accuracy = None;

    for epoch in 0..config.epochs {
        train_set.shuffle(rng);
        let mut loss = 0.0;
        let mut predictions = 0;
        for batch in train_set.chunks(config.batch_size.max(1)) {
            grads.fill(0.0);
            let mut count = 0;
            for ex in batch {
                let s = sequence_loss(&params, ex, Some(&mut grads));
                loss += s.loss;
                count += s.predictions;
            }
            predictions += count;
            optimizer.apply(&mut params, &grads, count);
        }
        validation_accuracy = (!validation.is_empty()).then(|| {
            let s = evaluate(&params, &validation);
            s.correct as f64 / s.predictions.max(1) as f64
        });
        let log = EpochLog {
            epoch: epoch + 1,
            loss: loss / predictions.max(1) as f64,
            validation_accuracy,
            elapsed: started.elapsed(),
        };
        on_epoch(&log);
        epochs.push(log);
    }

    Ok(TrainedModel {
        params,
        validation_accuracy,
        epochs,
        wall_time: started.elapsed(),
    })
}

#[cfg(test)]
mod tests {
    use super::*;
    use rand::SeedableRng;
    use rand_chacha::ChaCha8Rng;

    #[test]
    fn split_sizes() {
        let mut rng = ChaCha8Rng::seed_from_u64(1);
        let items: Vec<u32> = (0..10).collect();
        let (a, b) = split_corpus(&items, &mut rng, 0.8);
        assert_eq!((a.len(), b.len()), (8, 2));
        let mut all: Vec<u32> = a.iter().chain(&b).copied().collect();
        all.sort();
        assert_eq!(all, items);

        let (a, b) = split_corpus(&[7u32], &mut rng, 0.8);
        assert_eq!((a.len(), b.len()), (1, 0));
        let (a, b) = split_corpus::<u32, _>(&[], &mut rng, 0.8);
        assert!(a.is_empty() && b.is_empty());
    }

    #[test]
    fn split_is_deterministic() {
        let items: Vec<u32> = (0..50).collect();
        let a = split_corpus(&items, &mut ChaCha8Rng::seed_from_u64(3), 0.8);
        let b = split_corpus(&items, &mut ChaCha8Rng::seed_from_u64(3), 0.8);
        assert_eq!(a, b);
    }

    #[test]
    fn empty_corpus_is_an_error() {
        let r = train(
            &[],
            1,
            &ModelConfig::default(),
            &mut ChaCha8Rng::seed_from_u64(0),
            |_| {},
        );
        assert!(matches!(r, Err(ModelError::EmptyCorpus)));
    }

    #[test]
    fn single_example_loss_decreases() {
        let config = ModelConfig {
            epochs: 5,
            ..ModelConfig::default()
        };
        let mut logs = Vec::new();
        train(
            &[vec![1, 3, 4, 0]],
            5,
            &config,
            &mut ChaCha8Rng::seed_from_u64(2),
            |l| logs.push(l.loss),
        )
        .unwrap();
        assert_eq!(logs.len(), 5);
        for w in logs.windows(2) {
            assert!(w[1] < w[0], "{logs:?}");
        }
    }

    #[test]
    fn training_is_deterministic() {
        let examples = vec![vec![1, 2, 0], vec![1, 3, 0], vec![1, 2, 3, 0]];
        let config = ModelConfig {
            epochs: 3,
            ..ModelConfig::default()
        };
        let a = train(&examples, 4, &config, &mut ChaCha8Rng::seed_from_u64(5), |_| {}).unwrap();
        let b = train(&examples, 4, &config, &mut ChaCha8Rng::seed_from_u64(5), |_| {}).unwrap();
        assert_eq!(a.params, b.params);
        assert!(a.params.is_finite());
    }
}
