//! Sequence templates: dependency-aware extension, breadth-first exploration,
//! and length-weighted seed selection.

use std::collections::{BTreeSet, VecDeque};

use rand::distributions::{Distribution, WeightedIndex};
use rand::Rng;
use serde::{Deserialize, Serialize};
use thiserror::Error;

use crate::grammar::CompiledGrammar;
use crate::http::ResponseClass;

pub const DEFAULT_MAX_SEQUENCE_LENGTH: usize = 10;

#[derive(Debug, Error, PartialEq, Eq)]
pub enum SequenceError {
    #[error("no seed sequence templates to select from")]
    EmptySeedSet,
}

#[derive(Debug, Clone, Default, PartialEq, Eq, Hash, PartialOrd, Ord, Serialize, Deserialize)]
pub struct SequenceTemplate {
    pub template_ids: Vec<String>,
}

impl SequenceTemplate {
    pub fn empty() -> Self {
        Self::default()
    }

    pub fn new<S: Into<String>>(ids: impl IntoIterator<Item = S>) -> Self {
        Self {
            template_ids: ids.into_iter().map(Into::into).collect(),
        }
    }

    pub fn len(&self) -> usize {
        self.template_ids.len()
    }

    pub fn is_empty(&self) -> bool {
        self.template_ids.is_empty()
    }

    /// Resource types produced anywhere in the sequence.
    pub fn produced_types(&self, grammar: &CompiledGrammar) -> BTreeSet<String> {
        self.template_ids
            .iter()
            .filter_map(|id| grammar.template(id)?.produces.as_ref())
            .map(|p| p.resource_type.clone())
            .collect()
    }

    /// Every request's consumed types are produced by an earlier request.
    pub fn is_satisfiable(&self, grammar: &CompiledGrammar) -> bool {
        let mut available = BTreeSet::new();
        for id in &self.template_ids {
            let Some(t) = grammar.template(id) else {
                return false;
            };
            if !t.consumed_types().iter().all(|ty| available.contains(*ty)) {
                return false;
            }
            if let Some(p) = &t.produces {
                available.insert(p.resource_type.as_str());
            }
        }
        true
    }

    fn with(&self, id: &str) -> Self {
        let mut ids = self.template_ids.clone();
        ids.push(id.to_string());
        Self { template_ids: ids }
    }
}

/// `log10(l + 1)`: longer templates are picked more often.
pub fn length_weight(len: usize) -> f64 {
    ((len + 1) as f64).log10()
}

#[derive(Debug, Clone, Copy, PartialEq)]
pub struct SeedWeight {
    pub weight: f64,
    pub probability: f64,
}

/// Weight and normalized probability for each seed, in input order. When every
/// weight is zero (only the empty bootstrap template) the choice is uniform.
pub fn selection_weights(seeds: &[SequenceTemplate]) -> Result<Vec<SeedWeight>, SequenceError> {
    if seeds.is_empty() {
        return Err(SequenceError::EmptySeedSet);
    }
    let weights: Vec<f64> = seeds.iter().map(|s| length_weight(s.len())).collect();
    let total: f64 = weights.iter().sum();
    Ok(weights
        .into_iter()
        .map(|weight| SeedWeight {
            weight,
            probability: if total > 0.0 {
                weight / total
            } else {
                1.0 / seeds.len() as f64
            },
        })
        .collect())
}

/// Samples one seed index according to [`selection_weights`].
pub fn select_seed<R: Rng + ?Sized>(seeds: &[SequenceTemplate], rng: &mut R) -> Result<usize, SequenceError> {
    let weights = selection_weights(seeds)?;
    let probs: Vec<f64> = weights.iter().map(|w| w.probability).collect();
    let dist = WeightedIndex::new(&probs).expect("probabilities are finite and positive in sum");
    Ok(dist.sample(rng))
}

/// Appends each satisfiable template to `seed`. Candidates come out ordered by
/// template id; nothing is returned once the seed is at `max_len`.
pub fn extend(seed: &SequenceTemplate, grammar: &CompiledGrammar, max_len: usize) -> Vec<SequenceTemplate> {
    if seed.len() >= max_len {
        return Vec::new();
    }
    let available = seed.produced_types(grammar);
    grammar
        .satisfiable_templates(&available)
        .into_iter()
        .map(|id| seed.with(id))
        .collect()
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
pub enum ExtensionOutcome {
    Extended,
    Failed,
}

/// A candidate counts as extended iff its last request returned 2xx.
pub fn classify_extension(responses: &[ResponseClass]) -> ExtensionOutcome {
    match responses.last() {
        Some(ResponseClass::Pass2xx) => ExtensionOutcome::Extended,
        _ => ExtensionOutcome::Failed,
    }
}

/// Breadth-first exploration: every template extended in round `r` is extended
/// again in round `r + 1`; an empty frontier restarts from the empty template.
#[derive(Debug, Clone)]
pub struct BfsFrontier {
    current: VecDeque<SequenceTemplate>,
    next: Vec<SequenceTemplate>,
    round: usize,
    restarts: usize,
}

impl Default for BfsFrontier {
    fn default() -> Self {
        Self::new()
    }
}

impl BfsFrontier {
    pub fn new() -> Self {
        Self {
            current: VecDeque::new(),
            next: Vec::new(),
            round: 0,
            restarts: 0,
        }
    }

    /// The next sequence template whose extensions should be executed.
    pub fn next_seed(&mut self) -> SequenceTemplate {
        if self.current.is_empty() {
            if self.next.is_empty() {
                self.current.push_back(SequenceTemplate::empty());
                self.round = 0;
                self.restarts += 1;
            } else {
                self.current.extend(self.next.drain(..));
                self.round += 1;
            }
        }
        self.current.pop_front().expect("frontier refilled above")
    }

    pub fn report(&mut self, candidate: SequenceTemplate, outcome: ExtensionOutcome) {
        if outcome == ExtensionOutcome::Extended {
            self.next.push(candidate);
        }
    }

    pub fn round(&self) -> usize {
        self.round
    }

    pub fn restarts(&self) -> usize {
        self.restarts
    }
}
