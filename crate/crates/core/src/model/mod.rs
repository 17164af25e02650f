//! Next-pair recommender: embedding, GRU, attention and a linear softmax
//! layer trained on the parameter-value lists of accepted requests, then
//! sampled to produce new lists per request template.

mod generate;
mod network;
mod params;
mod snapshot;
mod train;
mod vocab;

use std::collections::BTreeMap;

use rand::Rng;
use thiserror::Error;

use crate::collection::ParamValuePair;
use crate::generator::ParamValueList;

pub use generate::{generate_lists, sample_list};
pub use network::{forward, sequence_loss, SequenceStats};
pub use params::ModelParams;
pub use snapshot::{ListSnapshot, SnapshotHandle};
pub use train::{evaluate, split_corpus, train, EpochLog, Optimizer, TrainedModel};
pub use vocab::{Token, Vocabulary, TERMINATOR};

#[derive(Debug, Error, Clone, PartialEq, Eq)]
pub enum ModelError {
    #[error("training corpus is empty")]
    EmptyCorpus,
    #[error("template `{0}` has no request token in the vocabulary")]
    UnknownTemplate(String),
}

#[derive(Debug, Clone, PartialEq)]
pub struct ModelConfig {
    pub embedding_dim: usize,
    pub hidden_dim: usize,
    pub epochs: usize,
    pub batch_size: usize,
    pub learning_rate: f64,
    pub optimizer: Optimizer,
    pub train_ratio: f64,
    /// Samples drawn per template per training iteration.
    pub lists_per_template: usize,
    /// Lists kept per template in the published snapshot.
    pub snapshot_cap: usize,
    /// Pair limit during generation; `None` means twice the longest training
    /// list plus two.
    pub max_len: Option<usize>,
}

impl Default for ModelConfig {
    fn default() -> Self {
        Self {
            embedding_dim: 18,
            hidden_dim: 36,
            epochs: 27,
            batch_size: 32,
            learning_rate: 0.01,
            optimizer: Optimizer::adam(),
            train_ratio: 0.8,
            lists_per_template: 32,
            snapshot_cap: 64,
            max_len: None,
        }
    }
}

/// Output of one train-from-scratch iteration.
#[derive(Debug, Clone)]
pub struct Iteration {
    pub vocabulary: Vocabulary,
    pub model: TrainedModel,
    pub max_len: usize,
    pub lists: BTreeMap<String, Vec<ParamValueList>>,
}

/// Builds a vocabulary from `corpus`, trains a fresh model and samples lists
/// for every template the corpus mentions.
pub fn train_and_generate<R: Rng + ?Sized>(
    corpus: &[(String, Vec<ParamValuePair>)],
    config: &ModelConfig,
    rng: &mut R,
    on_epoch: impl FnMut(&EpochLog),
) -> Result<Iteration, ModelError> {
    if corpus.is_empty() {
        return Err(ModelError::EmptyCorpus);
    }
    let vocabulary = Vocabulary::build(corpus);
    let examples = vocabulary.encode(corpus);
    let model = train(&examples, vocabulary.len(), config, rng, on_epoch)?;
    let longest = corpus.iter().map(|(_, l)| l.len()).max().unwrap_or(0);
    let max_len = config.max_len.unwrap_or(2 * longest + 2);
    let mut lists = BTreeMap::new();
    for template in vocabulary.templates() {
        let generated = generate_lists(
            &model.params,
            &vocabulary,
            template,
            config.lists_per_template,
            max_len,
            rng,
        )?;
        lists.insert(template.to_string(), generated);
    }
    Ok(Iteration {
        vocabulary,
        model,
        max_len,
        lists,
    })
}
