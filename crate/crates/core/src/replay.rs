//! Recorded request sequences that can be sent again. Object ids are not
//! replayed literally: each consumer re-reads its id from the response of the
//! producer it depended on, so a sequence reproduces against a fresh target.

use std::fs;
use std::io::{self, BufRead, Write};
use std::path::Path;

use serde::{Deserialize, Serialize};
use thiserror::Error;

use crate::generator::RenderedRequest;
use crate::grammar::{CompiledGrammar, Location};
use crate::http::{ReadyRequest, ResponseClass, ResponseRecord, Target};

/// Headers never written to replay files.
pub const SECRET_HEADERS: [&str; 1] = ["authorization"];

#[derive(Debug, Error)]
pub enum ReplayError {
    #[error("cannot read replay file: {0}")]
    Io(#[from] io::Error),
    #[error("replay line {line}: {source}")]
    Parse { line: usize, source: serde_json::Error },
    #[error("replay file holds no requests")]
    Empty,
}

/// A consumer parameter filled from an earlier response.
#[derive(Debug, Clone, PartialEq, Eq, Serialize, Deserialize)]
pub struct IdRef {
    pub param: String,
    pub location: Location,
    /// Index of the producing step.
    pub source: usize,
    /// Where the id sits in the producer's response body.
    pub pointer: String,
}

#[derive(Debug, Clone, PartialEq, Eq, Serialize, Deserialize)]
pub struct ReplayStep {
    pub template_id: String,
    pub path_template: String,
    pub request: ReadyRequest,
    pub id_refs: Vec<IdRef>,
    pub expected_status: Option<u16>,
    pub expected_class: ResponseClass,
}

/// A request as sent plus what came back.
#[derive(Debug, Clone, PartialEq, Eq)]
pub struct ExecutedStep {
    pub rendered: RenderedRequest,
    pub response: ResponseRecord,
}

/// Turns an executed sequence into replay steps.
pub fn capture(grammar: &CompiledGrammar, executed: &[ExecutedStep]) -> Vec<ReplayStep> {
    executed
        .iter()
        .map(|step| {
            let template_id = step.rendered.request.template_id.clone();
            let path_template = grammar
                .template(&template_id)
                .map(|t| t.path.clone())
                .unwrap_or_else(|| step.rendered.request.path.clone());
            let id_refs = step
                .rendered
                .bindings
                .iter()
                .map(|b| IdRef {
                    param: b.param.clone(),
                    location: b.location,
                    source: b.source,
                    pointer: executed
                        .get(b.source)
                        .and_then(|src| grammar.template(&src.rendered.request.template_id))
                        .and_then(|t| t.produces.as_ref())
                        .map(|p| p.pointer.clone())
                        .unwrap_or_else(|| "/id".to_string()),
                })
                .collect();
            let mut request = step.rendered.request.clone();
            request
                .headers
                .retain(|k, _| !SECRET_HEADERS.contains(&k.to_ascii_lowercase().as_str()));
            ReplayStep {
                template_id,
                path_template,
                request,
                id_refs,
                expected_status: step.response.status,
                expected_class: step.response.class,
            }
        })
        .collect()
}

fn read_id(response: &ResponseRecord, pointer: &str) -> Option<String> {
    match response.json()?.pointer(pointer)? {
        serde_json::Value::String(s) => Some(s.clone()),
        serde_json::Value::Number(n) => Some(n.to_string()),
        _ => None,
    }
}

/// The request for `step` with ids taken from `earlier` responses. Ids whose
/// producer response lacks them keep their recorded value.
pub fn resolve(step: &ReplayStep, earlier: &[ResponseRecord]) -> ReadyRequest {
    let mut request = step.request.clone();
    let mut path = step.path_template.clone();
    let mut path_bound = true;
    for r in &step.id_refs {
        let fresh = earlier.get(r.source).and_then(|resp| read_id(resp, &r.pointer));
        match r.location {
            Location::Path => match fresh {
                Some(id) => path = path.replace(&format!("{{{}}}", r.param), &id),
                None => path_bound = false,
            },
            Location::Query => {
                if let Some(id) = fresh {
                    request.query.insert(r.param.clone(), id);
                }
            }
            Location::Body => {
                if let Some(id) = fresh {
                    request.body.insert(r.param.clone(), id);
                }
            }
        }
    }
    if path_bound && !path.contains('{') {
        request.path = path;
    }
    request
}

/// Sends every step in order, re-resolving ids from this run's responses.
pub fn resend(steps: &[ReplayStep], target: &mut impl Target) -> Vec<ResponseRecord> {
    let mut responses = Vec::with_capacity(steps.len());
    for step in steps {
        let request = resolve(step, &responses);
        responses.push(target.send(&request));
    }
    responses
}

pub fn write_file(path: &Path, steps: &[ReplayStep]) -> io::Result<()> {
    if let Some(dir) = path.parent() {
        fs::create_dir_all(dir)?;
    }
    let mut out = io::BufWriter::new(fs::File::create(path)?);
    for step in steps {
        serde_json::to_writer(&mut out, step)?;
        out.write_all(b"\n")?;
    }
    out.flush()
}

pub fn read_file(path: &Path) -> Result<Vec<ReplayStep>, ReplayError> {
    let file = io::BufReader::new(fs::File::open(path)?);
    let mut steps = Vec::new();
    for (i, line) in file.lines().enumerate() {
        let line = line?;
        if line.trim().is_empty() {
            continue;
        }
        steps.push(serde_json::from_str(&line).map_err(|source| ReplayError::Parse { line: i + 1, source })?);
    }
    if steps.is_empty() {
        return Err(ReplayError::Empty);
    }
    Ok(steps)
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::generator::{render_with_pairs, ObjectIdPool, PooledId};
    use crate::grammar::parse_spec;
    use crate::mock::{BugConfig, MockService, GRAMMAR};

    fn run(service: &mut MockService, grammar: &CompiledGrammar, ids: &[&str]) -> Vec<ExecutedStep> {
        let mut pool = ObjectIdPool::new();
        let mut out = Vec::new();
        for (pos, id) in ids.iter().enumerate() {
            let t = grammar.template(id).unwrap();
            let rendered = render_with_pairs(t, &[], &pool).unwrap();
            let response = service.send(&rendered.request);
            if response.class == ResponseClass::Pass2xx {
                for (ty, value) in crate::generator::extract_producer_ids(t, &response.body) {
                    pool.add(
                        &ty,
                        PooledId {
                            id: value,
                            template_id: t.id.clone(),
                            position: pos,
                        },
                    );
                }
            }
            out.push(ExecutedStep { rendered, response });
        }
        out
    }

    #[test]
    fn ids_are_reresolved() {
        let g = parse_spec(GRAMMAR.as_bytes()).unwrap();
        let mut svc = MockService::new(BugConfig::none());
        // burn an id so the replayed run gets a different one
        run(&mut svc, &g, &["POST /groups"]);
        let executed = run(&mut svc, &g, &["POST /groups", "GET /groups/{id}"]);
        assert_eq!(executed[1].rendered.request.path, "/groups/2");
        let steps = capture(&g, &executed);
        assert_eq!(steps[1].id_refs.len(), 1);

        let mut fresh = MockService::new(BugConfig::none());
        let responses = resend(&steps, &mut fresh);
        let classes: Vec<_> = responses.iter().map(|r| r.class).collect();
        assert_eq!(classes, vec![ResponseClass::Pass2xx, ResponseClass::Pass2xx]);
        assert_eq!(resolve(&steps[1], &responses).path, "/groups/1");
    }

    #[test]
    fn file_round_trip_drops_auth() {
        let g = parse_spec(GRAMMAR.as_bytes()).unwrap();
        let mut svc = MockService::new(BugConfig::none());
        let mut executed = run(&mut svc, &g, &["POST /groups", "DELETE /groups/{id}"]);
        executed[0]
            .rendered
            .request
            .headers
            .insert("Authorization".into(), "Bearer s3cret".into());
        let steps = capture(&g, &executed);
        let dir = tempfile::tempdir().unwrap();
        let path = dir.path().join("r/x.jsonl");
        write_file(&path, &steps).unwrap();
        assert!(!fs::read_to_string(&path).unwrap().contains("s3cret"));
        assert_eq!(read_file(&path).unwrap(), steps);
    }

    #[test]
    fn empty_file_is_rejected() {
        let dir = tempfile::tempdir().unwrap();
        let path = dir.path().join("e.jsonl");
        fs::write(&path, "\n").unwrap();
        assert!(matches!(read_file(&path), Err(ReplayError::Empty)));
    }
}
