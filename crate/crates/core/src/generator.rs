//! Request rendering: random-dictionary values, default-plus-override values
//! from a parameter-value list, and object-id plumbing between producers and
//! consumers.

use std::collections::BTreeMap;

use rand::seq::SliceRandom;
use rand::Rng;
use serde::{Deserialize, Serialize};
use thiserror::Error;

use crate::collection::{CollectionStore, ParamValuePair};
use crate::grammar::{Location, ParamSpec, RequestTemplate};
use crate::http::ReadyRequest;

#[derive(Debug, Error, Clone, PartialEq, Eq)]
pub enum RenderError {
    #[error("`{template}` needs a `{resource}` id but none was produced")]
    MissingProducerId { template: String, resource: String },
    #[error("list for `{template}` sets `{param}`, which is not a settable parameter of it")]
    ForeignPair { template: String, param: String },
    #[error("list for `{template}` sets `{param}` twice")]
    DuplicateParam { template: String, param: String },
    #[error("list belongs to `{list}`, not `{template}`")]
    WrongTemplate { template: String, list: String },
}

/// Ordered mutations to apply on top of a template's default values.
#[derive(Debug, Clone, PartialEq, Eq, Hash, PartialOrd, Ord, Serialize, Deserialize)]
pub struct ParamValueList {
    pub template_id: String,
    pub pairs: Vec<ParamValuePair>,
}

impl ParamValueList {
    pub fn new(template_id: impl Into<String>, pairs: Vec<ParamValuePair>) -> Self {
        Self {
            template_id: template_id.into(),
            pairs,
        }
    }

    /// Every pair names a distinct, non-consumer parameter of `template`.
    pub fn validate(&self, template: &RequestTemplate) -> Result<(), RenderError> {
        if self.template_id != template.id {
            return Err(RenderError::WrongTemplate {
                template: template.id.clone(),
                list: self.template_id.clone(),
            });
        }
        let mut seen = std::collections::HashSet::new();
        for pair in &self.pairs {
            match template.param(&pair.param_name) {
                Some(p) if !p.is_consumer() => {}
                _ => {
                    return Err(RenderError::ForeignPair {
                        template: template.id.clone(),
                        param: pair.param_name.clone(),
                    })
                }
            }
            if !seen.insert(pair.param_name.as_str()) {
                return Err(RenderError::DuplicateParam {
                    template: template.id.clone(),
                    param: pair.param_name.clone(),
                });
            }
        }
        Ok(())
    }
}

#[derive(Debug, Clone, PartialEq, Eq, Serialize, Deserialize)]
pub struct PooledId {
    pub id: String,
    pub template_id: String,
    /// Position of the producing request in the current sequence.
    pub position: usize,
}

/// Object ids produced so far in the sequence under test. Lives for one
/// sequence execution.
#[derive(Debug, Clone, Default, PartialEq, Eq)]
pub struct ObjectIdPool {
    ids: BTreeMap<String, Vec<PooledId>>,
}

impl ObjectIdPool {
    pub fn new() -> Self {
        Self::default()
    }

    pub fn add(&mut self, resource_type: &str, id: PooledId) {
        self.ids.entry(resource_type.to_string()).or_default().push(id);
    }

    pub fn ids(&self, resource_type: &str) -> &[PooledId] {
        self.ids.get(resource_type).map(Vec::as_slice).unwrap_or(&[])
    }

    pub fn clear(&mut self) {
        self.ids.clear();
    }

    pub fn is_empty(&self) -> bool {
        self.ids.values().all(Vec::is_empty)
    }
}

/// Where a consumer parameter's id came from.
#[derive(Debug, Clone, PartialEq, Eq, Serialize, Deserialize)]
pub struct IdBinding {
    pub param: String,
    pub location: Location,
    pub resource_type: String,
    pub source: usize,
}

#[derive(Debug, Clone, PartialEq, Eq)]
pub struct RenderedRequest {
    pub request: ReadyRequest,
    /// Wire values of the non-consumer parameters.
    pub values: BTreeMap<String, String>,
    pub bindings: Vec<IdBinding>,
}

/// The most recently produced id of the consumed type.
pub fn resolve_consumer<'p>(
    template: &RequestTemplate,
    param: &ParamSpec,
    pool: &'p ObjectIdPool,
) -> Result<&'p PooledId, RenderError> {
    let resource = param.consumes.as_deref().unwrap_or_default();
    pool.ids(resource).last().ok_or_else(|| RenderError::MissingProducerId {
        template: template.id.clone(),
        resource: resource.to_string(),
    })
}

/// Reads the produced id out of a 2xx response body. A missing field or a
/// template without a producer annotation yields nothing.
pub fn extract_producer_ids(template: &RequestTemplate, body: &str) -> Vec<(String, String)> {
    let Some(produces) = &template.produces else {
        return Vec::new();
    };
    let Ok(json) = serde_json::from_str::<serde_json::Value>(body) else {
        return Vec::new();
    };
    let id = match json.pointer(&produces.pointer) {
        Some(serde_json::Value::String(s)) => s.clone(),
        Some(serde_json::Value::Number(n)) => n.to_string(),
        _ => return Vec::new(),
    };
    vec![(produces.resource_type.clone(), id)]
}

/// Builds the wire request from chosen values plus pool lookups for consumers.
fn assemble(
    template: &RequestTemplate,
    values: BTreeMap<String, String>,
    pool: &ObjectIdPool,
) -> Result<RenderedRequest, RenderError> {
    let mut path = template.path.clone();
    let mut query = BTreeMap::new();
    let mut body = BTreeMap::new();
    let mut bindings = Vec::new();
    for p in &template.params {
        let value = if p.is_consumer() {
            let pooled = resolve_consumer(template, p, pool)?;
            bindings.push(IdBinding {
                param: p.name.clone(),
                location: p.location,
                resource_type: p.consumes.clone().unwrap_or_default(),
                source: pooled.position,
            });
            pooled.id.clone()
        } else {
            values[&p.name].clone()
        };
        match p.location {
            Location::Path => path = path.replace(&format!("{{{}}}", p.name), &value),
            Location::Query => {
                query.insert(p.name.clone(), value);
            }
            Location::Body => {
                body.insert(p.name.clone(), value);
            }
        }
    }
    Ok(RenderedRequest {
        request: ReadyRequest {
            template_id: template.id.clone(),
            method: template.method,
            path,
            query,
            body,
            headers: BTreeMap::new(),
        },
        values,
        bindings,
    })
}

/// Every parameter gets a uniformly random dictionary value.
pub fn render_traditional<R: Rng + ?Sized>(
    template: &RequestTemplate,
    pool: &ObjectIdPool,
    rng: &mut R,
) -> Result<RenderedRequest, RenderError> {
    let values = template
        .params
        .iter()
        .filter(|p| !p.is_consumer())
        .map(|p| {
            let v = p.dictionary.choose(rng).expect("dictionaries are non-empty");
            (p.name.clone(), v.clone())
        })
        .collect();
    assemble(template, values, pool)
}

/// Defaults everywhere, overridden by the given pairs.
pub fn render_with_pairs(
    template: &RequestTemplate,
    pairs: &[ParamValuePair],
    pool: &ObjectIdPool,
) -> Result<RenderedRequest, RenderError> {
    let mut values = template.defaults();
    for pair in pairs {
        match template.param(&pair.param_name) {
            Some(p) if !p.is_consumer() => {
                values.insert(pair.param_name.clone(), pair.value.clone());
            }
            _ => {
                return Err(RenderError::ForeignPair {
                    template: template.id.clone(),
                    param: pair.param_name.clone(),
                })
            }
        }
    }
    assemble(template, values, pool)
}

pub fn render_with_list(
    template: &RequestTemplate,
    list: &ParamValueList,
    pool: &ObjectIdPool,
) -> Result<RenderedRequest, RenderError> {
    list.validate(template)?;
    render_with_pairs(template, &list.pairs, pool)
}

/// Uniform choice among the lists generated for a template.
pub fn choose_list<'a, R: Rng + ?Sized>(lists: &'a [ParamValueList], rng: &mut R) -> Option<&'a ParamValueList> {
    lists.choose(rng)
}

/// How the first `n - 1` requests of a sequence are rendered. The last
/// request is always rendered from random dictionary values.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
pub enum PrefixRendering {
    /// Random dictionary values throughout.
    Traditional,
    /// Defaults plus one randomly chosen recorded pair.
    RecordedPair,
    /// Defaults plus one randomly chosen recorded mutation list.
    RecordedList,
    /// Defaults plus a model-generated list, falling back to random values
    /// while no list exists for the template.
    ModelLists,
}

/// Inputs shared by every request rendered in one sequence.
pub struct RenderContext<'a> {
    pub rendering: PrefixRendering,
    pub lists: &'a BTreeMap<String, Vec<ParamValueList>>,
    pub store: &'a CollectionStore,
}

/// Renders the request at `position` of an `n`-request sequence.
pub fn render_step<R: Rng + ?Sized>(
    ctx: &RenderContext<'_>,
    template: &RequestTemplate,
    position: usize,
    n: usize,
    pool: &ObjectIdPool,
    rng: &mut R,
) -> Result<RenderedRequest, RenderError> {
    if position + 1 >= n {
        return render_traditional(template, pool, rng);
    }
    match ctx.rendering {
        PrefixRendering::Traditional => render_traditional(template, pool, rng),
        PrefixRendering::RecordedPair => {
            let pairs = ctx.store.recorded_pairs(&template.id);
            match pairs.choose(rng) {
                Some(&pair) => render_with_pairs(template, std::slice::from_ref(pair), pool),
                None => render_with_pairs(template, &[], pool),
            }
        }
        PrefixRendering::RecordedList => {
            let lists = ctx.store.recorded_lists(&template.id);
            match lists.choose(rng) {
                Some(list) => render_with_pairs(template, list, pool),
                None => render_with_pairs(template, &[], pool),
            }
        }
        PrefixRendering::ModelLists => {
            let lists = ctx.lists.get(&template.id).map(Vec::as_slice).unwrap_or(&[]);
            match choose_list(lists, rng) {
                Some(list) => render_with_list(template, list, pool),
                None => render_traditional(template, pool, rng),
            }
        }
    }
}
