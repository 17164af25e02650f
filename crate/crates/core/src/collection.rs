//! Historical data gathered while fuzzing: valid sequence templates (seeds),
//! parameter mutations from accepted requests, and per-request mutation lists
//! used as training data.

use std::collections::{BTreeMap, HashMap, HashSet};
use std::fmt;
use std::io::{self, Write};

use serde::{Deserialize, Serialize};
use serde_json::json;

use crate::grammar::RequestTemplate;
use crate::http::ResponseClass;

/// A mutated parameter together with the exact string that went on the wire.
#[derive(Debug, Clone, PartialEq, Eq, PartialOrd, Ord, Hash, Serialize, Deserialize)]
pub struct ParamValuePair {
    pub param_name: String,
    pub value: String,
}

impl ParamValuePair {
    pub fn new(param_name: impl Into<String>, value: impl Into<String>) -> Self {
        Self {
            param_name: param_name.into(),
            value: value.into(),
        }
    }
}

impl fmt::Display for ParamValuePair {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        write!(f, "<{:?}, {:?}>", self.param_name, self.value)
    }
}

#[derive(Debug, Clone, PartialEq, Eq, Serialize, Deserialize)]
pub struct PairObservation {
    pub template_id: String,
    pub pair: ParamValuePair,
    pub response_class: ResponseClass,
    /// Iteration of the first sighting.
    pub observed_at: u64,
    pub last_seen: u64,
    pub hits: u64,
}

#[derive(Debug, Clone, PartialEq, Eq, Serialize, Deserialize)]
pub struct SeedSequenceTemplate {
    pub template_ids: Vec<String>,
    pub length: usize,
    pub admission_iteration: u64,
}

/// One executed request as seen by sequence admission.
#[derive(Debug, Clone, PartialEq, Eq)]
pub struct AdmissionStep {
    pub template_id: String,
    pub class: ResponseClass,
    /// Positions of earlier requests whose produced ids this request consumed.
    pub id_sources: Vec<usize>,
}

#[derive(Debug, Clone)]
struct RequestList {
    iteration: u64,
    template_id: String,
    pairs: Vec<ParamValuePair>,
}

#[derive(Debug, Default, Clone)]
pub struct CollectionStore {
    observations: Vec<PairObservation>,
    observation_index: HashMap<(String, ParamValuePair, ResponseClass), usize>,
    request_lists: Vec<RequestList>,
    distinct_lists: BTreeMap<String, Vec<Vec<ParamValuePair>>>,
    distinct_list_index: HashSet<(String, Vec<ParamValuePair>)>,
    seeds: Vec<SeedSequenceTemplate>,
    seed_index: HashSet<Vec<String>>,
}

impl CollectionStore {
    pub fn new() -> Self {
        Self::default()
    }

    /// Records the non-default values of an accepted (2xx or 5xx) request.
    /// Rejected and transport-failed requests leave the store untouched.
    ///
    /// `rendered` maps each non-consumer parameter to its wire value.
    pub fn record_request_outcome(
        &mut self,
        template: &RequestTemplate,
        rendered: &BTreeMap<String, String>,
        class: ResponseClass,
        iteration: u64,
    ) {
        if !class.accepted() {
            return;
        }
        let pairs: Vec<ParamValuePair> = template
            .params
            .iter()
            .filter(|p| !p.is_consumer())
            .filter_map(|p| {
                let value = rendered.get(&p.name)?;
                (value != &p.default).then(|| ParamValuePair::new(&p.name, value))
            })
            .collect();

        for pair in &pairs {
            let key = (template.id.clone(), pair.clone(), class);
            match self.observation_index.get(&key) {
                Some(&i) => {
                    let obs = &mut self.observations[i];
                    obs.hits += 1;
                    obs.last_seen = iteration;
                }
                None => {
                    self.observation_index.insert(key, self.observations.len());
                    self.observations.push(PairObservation {
                        template_id: template.id.clone(),
                        pair: pair.clone(),
                        response_class: class,
                        observed_at: iteration,
                        last_seen: iteration,
                        hits: 1,
                    });
                }
            }
        }

        if class == ResponseClass::Pass2xx {
            if !pairs.is_empty() && self.distinct_list_index.insert((template.id.clone(), pairs.clone())) {
                self.distinct_lists
                    .entry(template.id.clone())
                    .or_default()
                    .push(pairs.clone());
            }
            self.request_lists.push(RequestList {
                iteration,
                template_id: template.id.clone(),
                pairs,
            });
        }
    }

    /// Stores the executed template list as a seed when every request was
    /// accepted and every producer whose id was consumed later returned 2xx.
    pub fn admit_sequence(&mut self, steps: &[AdmissionStep], iteration: u64) -> bool {
        if steps.is_empty() || !steps.iter().all(|s| s.class.accepted()) {
            return false;
        }
        let producers_ok = steps.iter().all(|s| {
            s.id_sources
                .iter()
                .all(|&src| steps.get(src).is_some_and(|p| p.class == ResponseClass::Pass2xx))
        });
        if !producers_ok {
            return false;
        }
        let ids: Vec<String> = steps.iter().map(|s| s.template_id.clone()).collect();
        if self.seed_index.insert(ids.clone()) {
            self.seeds.push(SeedSequenceTemplate {
                length: ids.len(),
                template_ids: ids,
                admission_iteration: iteration,
            });
        }
        true
    }

    pub fn seeds(&self) -> &[SeedSequenceTemplate] {
        &self.seeds
    }

    pub fn observations(&self) -> &[PairObservation] {
        &self.observations
    }

    /// Mutation lists of 2xx requests seen after iteration `since`, in
    /// observation order, each headed by its template id.
    pub fn training_corpus(&self, since: u64) -> Vec<(String, Vec<ParamValuePair>)> {
        self.request_lists
            .iter()
            .filter(|l| l.iteration > since)
            .map(|l| (l.template_id.clone(), l.pairs.clone()))
            .collect()
    }

    /// Pairs from accepted requests whose parameter the template does not define.
    pub fn undefined_pairs_for(&self, template: &RequestTemplate) -> Vec<ParamValuePair> {
        let mut seen = HashSet::new();
        self.observations
            .iter()
            .filter(|o| !template.defines(&o.pair.param_name))
            .filter(|o| seen.insert(&o.pair))
            .map(|o| o.pair.clone())
            .collect()
    }

    /// Distinct pairs recorded on 2xx responses of this template.
    pub fn recorded_pairs(&self, template_id: &str) -> Vec<&ParamValuePair> {
        self.observations
            .iter()
            .filter(|o| o.template_id == template_id && o.response_class == ResponseClass::Pass2xx)
            .map(|o| &o.pair)
            .collect()
    }

    /// Distinct non-empty mutation lists recorded on 2xx responses of this template.
    pub fn recorded_lists(&self, template_id: &str) -> &[Vec<ParamValuePair>] {
        self.distinct_lists.get(template_id).map(Vec::as_slice).unwrap_or(&[])
    }

    /// One JSON object per line: `{"kind":"pair",...}` or `{"kind":"seed",...}`.
    pub fn write_jsonl(&self, mut out: impl Write) -> io::Result<()> {
        for o in &self.observations {
            let line = json!({
                "kind": "pair",
                "template_id": o.template_id,
                "param_name": o.pair.param_name,
                "value": o.pair.value,
                "response_class": o.response_class,
                "observed_at": o.observed_at,
                "hits": o.hits,
            });
            writeln!(out, "{line}")?;
        }
        for s in &self.seeds {
            let line = json!({
                "kind": "seed",
                "template_ids": s.template_ids,
                "length": s.length,
                "admission_iteration": s.admission_iteration,
            });
            writeln!(out, "{line}")?;
        }
        Ok(())
    }
}
