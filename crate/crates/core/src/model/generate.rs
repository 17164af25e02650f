use std::collections::BTreeSet;

use rand::distributions::{Distribution, WeightedIndex};
use rand::Rng;

use super::network::forward;
use super::params::ModelParams;
use super::vocab::{Token, Vocabulary, TERMINATOR};
use super::ModelError;
use crate::collection::ParamValuePair;
use crate::generator::ParamValueList;

/// Draws one list for `template_id`: starts from the request token and samples
/// until the terminator or `max_len` pairs. Only the template's own pairs are
/// eligible, and a parameter is never set twice.
pub fn sample_list<R: Rng + ?Sized>(
    params: &ModelParams,
    vocab: &Vocabulary,
    template_id: &str,
    max_len: usize,
    rng: &mut R,
) -> Result<ParamValueList, ModelError> {
    let start = vocab
        .request_id(template_id)
        .ok_or_else(|| ModelError::UnknownTemplate(template_id.to_string()))?;
    let own: Vec<(usize, &ParamValuePair)> = (0..vocab.len())
        .filter_map(|id| match vocab.token(id) {
            Some(Token::Pair { template_id: t, pair }) if t == template_id => Some((id, pair)),
            _ => None,
        })
        .collect();

    let mut prefix = vec![start];
    let mut pairs: Vec<ParamValuePair> = Vec::new();
    let mut used: BTreeSet<&str> = BTreeSet::new();
    while pairs.len() < max_len {
        let probs = forward(params, &prefix);
        let mut choices = vec![TERMINATOR];
        let mut weights = vec![probs[TERMINATOR]];
        for &(id, pair) in &own {
            if !used.contains(pair.param_name.as_str()) {
                choices.push(id);
                weights.push(probs[id]);
            }
        }
        let Ok(dist) = WeightedIndex::new(&weights) else { break };
        let pick = choices[dist.sample(rng)];
        if pick == TERMINATOR {
            break;
        }
        let (_, pair) = own.iter().find(|(id, _)| *id == pick).expect("own pair");
        used.insert(pair.param_name.as_str());
        pairs.push((*pair).clone());
        prefix.push(pick);
    }
    Ok(ParamValueList::new(template_id, pairs))
}

/// `k` independent samples, duplicates removed, first-seen order kept.
pub fn generate_lists<R: Rng + ?Sized>(
    params: &ModelParams,
    vocab: &Vocabulary,
    template_id: &str,
    k: usize,
    max_len: usize,
    rng: &mut R,
) -> Result<Vec<ParamValueList>, ModelError> {
    if vocab.request_id(template_id).is_none() {
        return Err(ModelError::UnknownTemplate(template_id.to_string()));
    }
    let mut out: Vec<ParamValueList> = Vec::new();
    for _ in 0..k {
        let list = sample_list(params, vocab, template_id, max_len, rng)?;
        if !out.contains(&list) {
            out.push(list);
        }
    }
    Ok(out)
}
