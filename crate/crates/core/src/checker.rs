//! Security-rule checkers run after a sequence: undefined-parameter injection
//! and use-after-free on deleted resources.

use rand::seq::SliceRandom;
use rand::Rng;
use serde::{Deserialize, Serialize};
use thiserror::Error;

use crate::collection::{CollectionStore, ParamValuePair};
use crate::generator::{extract_producer_ids, render_with_pairs, ObjectIdPool, PooledId};
use crate::grammar::{CompiledGrammar, Method};
use crate::http::{ResponseClass, ResponseRecord, Target};
use crate::replay::{capture, resend, ExecutedStep, ReplayStep};

#[derive(Debug, Clone, Copy, PartialEq, Eq, PartialOrd, Ord, Hash, Serialize, Deserialize)]
pub enum ViolationKind {
    IncorrectParamUsage,
    UseAfterFree,
}

#[derive(Debug, Clone, PartialEq, Eq, Serialize, Deserialize)]
pub struct Violation {
    pub kind: ViolationKind,
    /// The sequence as sent, ending with the offending request.
    pub steps: Vec<ReplayStep>,
    pub response: ResponseRecord,
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub injected: Option<ParamValuePair>,
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub deleted_id: Option<String>,
}

#[derive(Debug, Error, Clone, PartialEq, Eq)]
pub enum CheckError {
    #[error("setup request `{template}` was not accepted (status {status:?})")]
    SetupFailed { template: String, status: Option<u16> },
}

/// What a checker sent and what it concluded.
#[derive(Debug, Clone, PartialEq)]
pub struct CheckReport {
    pub responses: Vec<ResponseRecord>,
    pub verdict: Result<Option<Violation>, CheckError>,
}

impl CheckReport {
    fn skipped() -> Self {
        Self {
            responses: Vec::new(),
            verdict: Ok(None),
        }
    }

    pub fn violation(&self) -> Option<&Violation> {
        self.verdict.as_ref().ok().and_then(Option::as_ref)
    }
}

/// Re-sends `steps` with one undefined pair added to the last request. A 5xx
/// on that request is an incorrect-parameter-usage violation. No-op when the
/// store has no undefined pair for the last template.
pub fn datadriven_check<R: Rng + ?Sized>(
    steps: &[ReplayStep],
    grammar: &CompiledGrammar,
    store: &CollectionStore,
    rng: &mut R,
    target: &mut impl Target,
) -> CheckReport {
    let Some(last) = steps.last() else {
        return CheckReport::skipped();
    };
    let Some(template) = grammar.template(&last.template_id) else {
        return CheckReport::skipped();
    };
    let candidates = store.undefined_pairs_for(template);
    let Some(pair) = candidates.choose(rng).cloned() else {
        return CheckReport::skipped();
    };

    let mut injected = steps.to_vec();
    let tail = injected.last_mut().expect("non-empty");
    tail.request.insert_free_param(&pair.param_name, &pair.value);

    let responses = resend(&injected, target);
    for (step, resp) in injected.iter_mut().zip(&responses) {
        step.expected_status = resp.status;
        step.expected_class = resp.class;
    }
    let last_response = responses.last().cloned().expect("one response per step");
    let verdict = (last_response.class == ResponseClass::Error5xx).then_some(Violation {
        kind: ViolationKind::IncorrectParamUsage,
        steps: injected,
        response: last_response,
        injected: Some(pair),
        deleted_id: None,
    });
    CheckReport {
        responses,
        verdict: Ok(verdict),
    }
}

/// A create, delete and access template acting on one resource type.
#[derive(Debug, Clone, PartialEq, Eq)]
pub struct UafTriple {
    pub resource_type: String,
    pub create: String,
    pub delete: String,
    pub access: String,
}

/// Every (POST producer, DELETE consumer, GET consumer) combination where the
/// producer needs no ids and both consumers need only the produced type.
pub fn uaf_triples(grammar: &CompiledGrammar) -> Vec<UafTriple> {
    let only = |id: &str, ty: &str| {
        let t = &grammar.templates[id];
        let consumed = t.consumed_types();
        consumed.len() == 1 && consumed.contains(ty)
    };
    let mut out = Vec::new();
    for create in grammar.templates.values() {
        let Some(produces) = &create.produces else { continue };
        if create.method != Method::Post || !create.consumed_types().is_empty() {
            continue;
        }
        let ty = produces.resource_type.as_str();
        for delete in grammar.templates.values() {
            if delete.method != Method::Delete || !only(&delete.id, ty) {
                continue;
            }
            for access in grammar.templates.values() {
                if access.method != Method::Get || !only(&access.id, ty) {
                    continue;
                }
                out.push(UafTriple {
                    resource_type: ty.to_string(),
                    create: create.id.clone(),
                    delete: delete.id.clone(),
                    access: access.id.clone(),
                });
            }
        }
    }
    out
}

/// Cycles through the grammar's use-after-free triples, one per call.
#[derive(Debug, Clone)]
pub struct UseAfterFreeChecker {
    triples: Vec<UafTriple>,
    next: usize,
}

impl UseAfterFreeChecker {
    pub fn new(grammar: &CompiledGrammar) -> Self {
        Self {
            triples: uaf_triples(grammar),
            next: 0,
        }
    }

    pub fn triples(&self) -> &[UafTriple] {
        &self.triples
    }

    pub fn check(&mut self, grammar: &CompiledGrammar, target: &mut impl Target) -> CheckReport {
        if self.triples.is_empty() {
            return CheckReport::skipped();
        }
        let triple = self.triples[self.next % self.triples.len()].clone();
        self.next += 1;
        use_after_free_check(grammar, &triple, target)
    }
}

/// Create, delete, then access the deleted resource, all with default values.
/// Any access response outside 4xx is a violation.
pub fn use_after_free_check(grammar: &CompiledGrammar, triple: &UafTriple, target: &mut impl Target) -> CheckReport {
    let mut pool = ObjectIdPool::new();
    let mut executed: Vec<ExecutedStep> = Vec::new();
    let mut responses = Vec::new();
    let mut deleted_id = None;

    for (position, id) in [&triple.create, &triple.delete, &triple.access].into_iter().enumerate() {
        let template = &grammar.templates[id];
        let rendered = match render_with_pairs(template, &[], &pool) {
            Ok(r) => r,
            Err(_) => {
                return CheckReport {
                    responses,
                    verdict: Err(CheckError::SetupFailed {
                        template: id.clone(),
                        status: None,
                    }),
                }
            }
        };
        let response = target.send(&rendered.request);
        responses.push(response.clone());
        if position < 2 && response.class != ResponseClass::Pass2xx {
            return CheckReport {
                responses,
                verdict: Err(CheckError::SetupFailed {
                    template: id.clone(),
                    status: response.status,
                }),
            };
        }
        if position == 0 {
            let produced = extract_producer_ids(template, &response.body);
            let Some((ty, value)) = produced.into_iter().next() else {
                return CheckReport {
                    responses,
                    verdict: Err(CheckError::SetupFailed {
                        template: id.clone(),
                        status: response.status,
                    }),
                };
            };
            deleted_id = Some(value.clone());
            pool.add(
                &ty,
                PooledId {
                    id: value,
                    template_id: id.clone(),
                    position,
                },
            );
        }
        executed.push(ExecutedStep { rendered, response });
    }

    let access = executed.last().expect("three steps").response.clone();
    let verdict = match access.class {
        ResponseClass::Pass2xx | ResponseClass::Error5xx => Some(Violation {
            kind: ViolationKind::UseAfterFree,
            steps: capture(grammar, &executed),
            response: access,
            injected: None,
            deleted_id,
        }),
        ResponseClass::Reject4xx | ResponseClass::Transport => None,
    };
    CheckReport {
        responses,
        verdict: Ok(verdict),
    }
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::grammar::parse_spec;
    use crate::http::ReadyRequest;
    use crate::mock::{Bug, BugConfig, MockService, GRAMMAR};
    use rand::SeedableRng;
    use rand_chacha::ChaCha8Rng;
    use std::collections::BTreeMap;
    use std::time::Duration;

    fn grammar() -> CompiledGrammar {
        parse_spec(GRAMMAR.as_bytes()).unwrap()
    }

    fn armed(bugs: &[Bug]) -> MockService {
        MockService::new(BugConfig {
            armed: bugs.iter().copied().collect(),
            seed: 0,
        })
    }

    #[test]
    fn triples_cover_both_resources() {
        let triples = uaf_triples(&grammar());
        let access: Vec<_> = triples.iter().map(|t| t.access.as_str()).collect();
        assert_eq!(
            access,
            vec![
                "GET /groups/{id}",
                "GET /groups/{id}/attributes",
                "GET /projects/{id}",
                "GET /projects/{id}/attributes"
            ]
        );
    }

    #[test]
    fn uaf_found_only_when_armed() {
        let g = grammar();
        let triple = uaf_triples(&g)
            .into_iter()
            .find(|t| t.access == "GET /groups/{id}/attributes")
            .unwrap();
        let report = use_after_free_check(&g, &triple, &mut armed(&[Bug::UseAfterFree]));
        let v = report.violation().expect("violation");
        assert_eq!(v.kind, ViolationKind::UseAfterFree);
        assert_eq!(v.response.status, Some(500));
        assert_eq!(v.deleted_id.as_deref(), Some("1"));
        assert_eq!(v.steps.len(), 3);

        let report = use_after_free_check(&g, &triple, &mut armed(&[]));
        assert_eq!(report.verdict, Ok(None));
        assert_eq!(report.responses[2].status, Some(404));
    }

    struct Scripted {
        statuses: Vec<u16>,
        sent: Vec<ReadyRequest>,
    }

    impl Target for Scripted {
        fn send(&mut self, request: &ReadyRequest) -> ResponseRecord {
            let status = self.statuses[self.sent.len() % self.statuses.len()];
            self.sent.push(request.clone());
            ResponseRecord::from_status(status, r#"{"id": 7}"#, Duration::ZERO)
        }
    }

    #[test]
    fn failed_create_is_setup_failure() {
        let g = grammar();
        let triple = uaf_triples(&g).remove(0);
        let mut t = Scripted {
            statuses: vec![400],
            sent: vec![],
        };
        let report = use_after_free_check(&g, &triple, &mut t);
        assert!(matches!(report.verdict, Err(CheckError::SetupFailed { .. })));
        assert_eq!(t.sent.len(), 1);
    }

    fn store_with_undefined(g: &CompiledGrammar) -> CollectionStore {
        let mut store = CollectionStore::new();
        let post = g.template("POST /projects").unwrap();
        let mut values = post.defaults();
        values.insert("initialize_with_readme".into(), "true".into());
        store.record_request_outcome(post, &values, ResponseClass::Pass2xx, 1);
        store
    }

    fn executed_put(g: &CompiledGrammar, target: &mut impl Target) -> Vec<ReplayStep> {
        let mut pool = ObjectIdPool::new();
        let mut executed = Vec::new();
        for (pos, id) in ["POST /groups", "PUT /groups/{id}"].into_iter().enumerate() {
            let t = g.template(id).unwrap();
            let rendered = render_with_pairs(t, &[], &pool).unwrap();
            let response = target.send(&rendered.request);
            for (ty, v) in extract_producer_ids(t, &response.body) {
                pool.add(
                    &ty,
                    PooledId {
                        id: v,
                        template_id: id.into(),
                        position: pos,
                    },
                );
            }
            executed.push(ExecutedStep { rendered, response });
        }
        capture(g, &executed)
    }

    #[test]
    fn datadriven_changes_only_the_last_request() {
        let g = grammar();
        let store = store_with_undefined(&g);
        let mut t = Scripted {
            statuses: vec![201, 200],
            sent: vec![],
        };
        let steps = executed_put(&g, &mut t);
        let original = t.sent.clone();
        t.sent.clear();
        let report = datadriven_check(&steps, &g, &store, &mut ChaCha8Rng::seed_from_u64(0), &mut t);
        assert_eq!(report.verdict, Ok(None));
        assert_eq!(t.sent.len(), 2);
        assert_eq!(
            serde_json::to_vec(&t.sent[0]).unwrap(),
            serde_json::to_vec(&original[0]).unwrap()
        );
        let mut expected = original[1].clone();
        expected.body.insert("initialize_with_readme".into(), "true".into());
        assert_eq!(t.sent[1], expected);
        let added: BTreeMap<_, _> = t.sent[1]
            .body
            .iter()
            .filter(|(k, _)| !original[1].body.contains_key(*k))
            .collect();
        assert_eq!(added.len(), 1);
        assert!(!g
            .template("PUT /groups/{id}")
            .unwrap()
            .defines("initialize_with_readme"));
    }

    #[test]
    fn datadriven_flags_undefined_param_crash() {
        let g = grammar();
        let store = store_with_undefined(&g);
        let mut svc = armed(&[Bug::UndefinedParam]);
        let steps = executed_put(&g, &mut svc);
        assert!(steps.iter().all(|s| s.expected_class == ResponseClass::Pass2xx));
        let report = datadriven_check(&steps, &g, &store, &mut ChaCha8Rng::seed_from_u64(0), &mut svc);
        let v = report.violation().expect("violation");
        assert_eq!(v.kind, ViolationKind::IncorrectParamUsage);
        assert_eq!(v.injected, Some(ParamValuePair::new("initialize_with_readme", "true")));

        let mut clean = armed(&[]);
        let steps = executed_put(&g, &mut clean);
        let report = datadriven_check(&steps, &g, &store, &mut ChaCha8Rng::seed_from_u64(0), &mut clean);
        assert_eq!(report.verdict, Ok(None));
        assert_eq!(report.responses[1].class, ResponseClass::Pass2xx);
    }

    #[test]
    fn datadriven_without_pairs_is_a_no_op() {
        let g = grammar();
        let mut svc = armed(&[Bug::UndefinedParam]);
        let steps = executed_put(&g, &mut svc);
        let report = datadriven_check(
            &steps,
            &g,
            &CollectionStore::new(),
            &mut ChaCha8Rng::seed_from_u64(0),
            &mut svc,
        );
        assert!(report.responses.is_empty());
        assert_eq!(report.verdict, Ok(None));
    }
}
