//! Grammar compiler: turns a Swagger-v2-flavoured JSON document into request
//! templates, per-parameter value dictionaries and the producer/consumer
//! dependency graph between request types.
//!
//! The document format is a small subset of Swagger v2 plus four extension
//! fields:
//!
//! ```json
//! {"paths": {"/groups/{id}": {"get": {
//!     "parameters": [
//!         {"name": "id", "in": "path", "type": "integer", "required": true,
//!          "x-consumes": "group"},
//!         {"name": "with_projects", "in": "query", "type": "boolean",
//!          "x-dictionary": ["3", "true", "false"], "x-default": "true"}
//!     ],
//!     "x-produces": {"type": "group", "pointer": "/id"}
//! }}}}
//! ```

use std::collections::{BTreeMap, BTreeSet};
use std::fmt;

use serde::{Deserialize, Serialize};
use serde_json::{json, Map, Value};
use thiserror::Error;

#[derive(Debug, Error, PartialEq, Eq)]
pub enum GrammarError {
    #[error("malformed grammar document: {0}")]
    MalformedSpec(String),
    #[error("parameter `{param}` of `{template}` consumes `{resource}` but no template produces it")]
    UnresolvableConsumer {
        template: String,
        param: String,
        resource: String,
    },
    #[error("default `{default}` of parameter `{param}` in `{template}` is not in its dictionary")]
    DefaultNotInDictionary {
        template: String,
        param: String,
        default: String,
    },
}

fn malformed(msg: impl Into<String>) -> GrammarError {
    GrammarError::MalformedSpec(msg.into())
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, PartialOrd, Ord, Hash, Serialize, Deserialize)]
#[serde(rename_all = "UPPERCASE")]
pub enum Method {
    Get,
    Post,
    Put,
    Delete,
}

impl Method {
    pub fn as_str(self) -> &'static str {
        match self {
            Method::Get => "GET",
            Method::Post => "POST",
            Method::Put => "PUT",
            Method::Delete => "DELETE",
        }
    }

    fn swagger_key(self) -> &'static str {
        match self {
            Method::Get => "get",
            Method::Post => "post",
            Method::Put => "put",
            Method::Delete => "delete",
        }
    }

    pub fn parse(s: &str) -> Option<Method> {
        match s.to_ascii_uppercase().as_str() {
            "GET" => Some(Method::Get),
            "POST" => Some(Method::Post),
            "PUT" => Some(Method::Put),
            "DELETE" => Some(Method::Delete),
            _ => None,
        }
    }

    /// Whether free-form parameters travel in a JSON body rather than the query string.
    pub fn has_body(self) -> bool {
        matches!(self, Method::Post | Method::Put)
    }
}

impl fmt::Display for Method {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        f.write_str(self.as_str())
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash, Serialize, Deserialize)]
#[serde(rename_all = "lowercase")]
pub enum Location {
    Path,
    Query,
    Body,
}

impl Location {
    fn swagger_key(self) -> &'static str {
        match self {
            Location::Path => "path",
            Location::Query => "query",
            Location::Body => "body",
        }
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash, Serialize, Deserialize)]
#[serde(rename_all = "lowercase")]
pub enum ValueType {
    String,
    Integer,
    Boolean,
    Datetime,
}

impl ValueType {
    fn swagger_key(self) -> &'static str {
        match self {
            ValueType::String => "string",
            ValueType::Integer => "integer",
            ValueType::Boolean => "boolean",
            ValueType::Datetime => "datetime",
        }
    }
}

#[derive(Debug, Clone, PartialEq, Eq, Serialize, Deserialize)]
pub struct ParamSpec {
    pub name: String,
    pub location: Location,
    pub value_type: ValueType,
    pub required: bool,
    /// Candidate literal values; empty when `consumes` is set.
    pub dictionary: Vec<String>,
    /// Empty when `consumes` is set.
    pub default: String,
    pub consumes: Option<String>,
}

impl ParamSpec {
    pub fn is_consumer(&self) -> bool {
        self.consumes.is_some()
    }
}

#[derive(Debug, Clone, PartialEq, Eq, Serialize, Deserialize)]
pub struct Produces {
    pub resource_type: String,
    /// JSON pointer into a 2xx response body, e.g. `/id`.
    pub pointer: String,
}

#[derive(Debug, Clone, PartialEq, Eq, Serialize, Deserialize)]
pub struct RequestTemplate {
    /// `"<METHOD> <path>"`, e.g. `GET /groups/{id}`.
    pub id: String,
    pub method: Method,
    pub path: String,
    pub params: Vec<ParamSpec>,
    pub produces: Option<Produces>,
}

impl RequestTemplate {
    pub fn make_id(method: Method, path: &str) -> String {
        format!("{} {}", method, path)
    }

    pub fn param(&self, name: &str) -> Option<&ParamSpec> {
        self.params.iter().find(|p| p.name == name)
    }

    pub fn defines(&self, name: &str) -> bool {
        self.param(name).is_some()
    }

    /// Resource types this template needs ids for, deduplicated.
    pub fn consumed_types(&self) -> BTreeSet<&str> {
        self.params.iter().filter_map(|p| p.consumes.as_deref()).collect()
    }

    pub fn defaults(&self) -> BTreeMap<String, String> {
        self.params
            .iter()
            .filter(|p| !p.is_consumer())
            .map(|p| (p.name.clone(), p.default.clone()))
            .collect()
    }
}

/// (producer template id, resource type, consumer template id)
pub type DependencyEdge = (String, String, String);

#[derive(Debug, Clone, PartialEq, Eq, Default, Serialize, Deserialize)]
pub struct CompiledGrammar {
    pub templates: BTreeMap<String, RequestTemplate>,
    pub resource_types: BTreeSet<String>,
    pub dependency_edges: BTreeSet<DependencyEdge>,
}

impl CompiledGrammar {
    pub fn template(&self, id: &str) -> Option<&RequestTemplate> {
        self.templates.get(id)
    }

    /// Templates whose every consumed resource type is in `available`, in id order.
    pub fn satisfiable_templates(&self, available: &BTreeSet<String>) -> Vec<&str> {
        self.templates
            .values()
            .filter(|t| t.consumed_types().iter().all(|ty| available.contains(*ty)))
            .map(|t| t.id.as_str())
            .collect()
    }

    /// Serialize back into the document format accepted by [`parse_spec`].
    pub fn to_document(&self) -> Value {
        let mut paths: Map<String, Value> = Map::new();
        for t in self.templates.values() {
            let params: Vec<Value> = t
                .params
                .iter()
                .map(|p| {
                    let mut obj = json!({
                        "name": p.name,
                        "in": p.location.swagger_key(),
                        "type": p.value_type.swagger_key(),
                        "required": p.required,
                    });
                    if let Some(rt) = &p.consumes {
                        obj["x-consumes"] = json!(rt);
                    } else {
                        obj["x-dictionary"] = json!(p.dictionary);
                        obj["x-default"] = json!(p.default);
                    }
                    obj
                })
                .collect();
            let mut op = json!({ "parameters": params });
            if let Some(pr) = &t.produces {
                op["x-produces"] = json!({"type": pr.resource_type, "pointer": pr.pointer});
            }
            let entry = paths.entry(t.path.clone()).or_insert_with(|| Value::Object(Map::new()));
            entry[t.method.swagger_key()] = op;
        }
        json!({ "paths": paths })
    }
}

fn literal(v: &Value) -> Result<String, GrammarError> {
    match v {
        Value::String(s) => Ok(s.clone()),
        Value::Number(n) => Ok(n.to_string()),
        Value::Bool(b) => Ok(b.to_string()),
        other => Err(malformed(format!("non-scalar literal {other}"))),
    }
}

fn placeholders(path: &str) -> Result<Vec<String>, GrammarError> {
    let mut out = Vec::new();
    let mut rest = path;
    while let Some(start) = rest.find('{') {
        let end = rest[start..]
            .find('}')
            .ok_or_else(|| malformed(format!("unterminated placeholder in `{path}`")))?;
        let name = &rest[start + 1..start + end];
        if name.is_empty() {
            return Err(malformed(format!("empty placeholder in `{path}`")));
        }
        out.push(name.to_string());
        rest = &rest[start + end + 1..];
    }
    Ok(out)
}

fn parse_param(template: &str, raw: &Value) -> Result<ParamSpec, GrammarError> {
    let obj = raw
        .as_object()
        .ok_or_else(|| malformed(format!("{template}: parameter is not an object")))?;
    let name = obj
        .get("name")
        .and_then(Value::as_str)
        .ok_or_else(|| malformed(format!("{template}: parameter without name")))?
        .to_string();
    let location = match obj.get("in").and_then(Value::as_str) {
        Some("path") => Location::Path,
        Some("query") => Location::Query,
        Some("body") | Some("formData") => Location::Body,
        other => return Err(malformed(format!("{template}.{name}: bad location {other:?}"))),
    };
    let format = obj.get("format").and_then(Value::as_str);
    let value_type = match (obj.get("type").and_then(Value::as_str), format) {
        (Some("string"), Some("date-time")) | (Some("datetime"), _) => ValueType::Datetime,
        (Some("string"), _) | (None, _) => ValueType::String,
        (Some("integer"), _) => ValueType::Integer,
        (Some("boolean"), _) => ValueType::Boolean,
        (Some(other), _) => return Err(malformed(format!("{template}.{name}: unsupported type `{other}`"))),
    };
    let required = match obj.get("required") {
        None => false,
        Some(Value::Bool(b)) => *b,
        Some(other) => return Err(malformed(format!("{template}.{name}: required = {other}"))),
    };
    if location == Location::Path && obj.get("required") == Some(&Value::Bool(false)) {
        return Err(malformed(format!(
            "{template}.{name}: path parameters are always required"
        )));
    }
    let required = required || location == Location::Path;

    let consumes = match obj.get("x-consumes") {
        None | Some(Value::Null) => None,
        Some(Value::String(s)) => Some(s.clone()),
        Some(other) => return Err(malformed(format!("{template}.{name}: x-consumes = {other}"))),
    };
    if consumes.is_some() {
        return Ok(ParamSpec {
            name,
            location,
            value_type,
            required,
            dictionary: Vec::new(),
            default: String::new(),
            consumes,
        });
    }

    let dictionary = match obj.get("x-dictionary") {
        Some(Value::Array(items)) => items.iter().map(literal).collect::<Result<Vec<_>, _>>()?,
        None => Vec::new(),
        Some(other) => return Err(malformed(format!("{template}.{name}: x-dictionary = {other}"))),
    };
    if dictionary.is_empty() {
        return Err(malformed(format!("{template}.{name}: empty dictionary")));
    }
    let default = match obj.get("x-default") {
        Some(v) => literal(v)?,
        None => dictionary[0].clone(),
    };
    if !dictionary.contains(&default) {
        return Err(GrammarError::DefaultNotInDictionary {
            template: template.to_string(),
            param: name,
            default,
        });
    }
    Ok(ParamSpec {
        name,
        location,
        value_type,
        required,
        dictionary,
        default,
        consumes: None,
    })
}

fn parse_template(path: &str, method: Method, raw: &Value) -> Result<RequestTemplate, GrammarError> {
    let id = RequestTemplate::make_id(method, path);
    let obj = raw
        .as_object()
        .ok_or_else(|| malformed(format!("{id}: operation is not an object")))?;
    let params = match obj.get("parameters") {
        None => Vec::new(),
        Some(Value::Array(items)) => items
            .iter()
            .map(|p| parse_param(&id, p))
            .collect::<Result<Vec<_>, _>>()?,
        Some(other) => return Err(malformed(format!("{id}: parameters = {other}"))),
    };

    let mut seen = BTreeSet::new();
    for p in &params {
        if !seen.insert(p.name.as_str()) {
            return Err(malformed(format!("{id}: duplicate parameter `{}`", p.name)));
        }
    }
    let holes = placeholders(path)?;
    for hole in &holes {
        let count = params
            .iter()
            .filter(|p| p.location == Location::Path && &p.name == hole)
            .count();
        if count != 1 {
            return Err(malformed(format!(
                "{id}: placeholder `{hole}` needs exactly one path parameter"
            )));
        }
    }
    if let Some(p) = params
        .iter()
        .find(|p| p.location == Location::Path && !holes.contains(&p.name))
    {
        return Err(malformed(format!(
            "{id}: path parameter `{}` has no placeholder",
            p.name
        )));
    }

    let produces = match obj.get("x-produces") {
        None | Some(Value::Null) => None,
        Some(Value::Object(p)) => {
            let resource_type = p
                .get("type")
                .and_then(Value::as_str)
                .ok_or_else(|| malformed(format!("{id}: x-produces without type")))?;
            let pointer = p.get("pointer").and_then(Value::as_str).unwrap_or("/id");
            if !pointer.is_empty() && !pointer.starts_with('/') {
                return Err(malformed(format!("{id}: bad response pointer `{pointer}`")));
            }
            Some(Produces {
                resource_type: resource_type.to_string(),
                pointer: pointer.to_string(),
            })
        }
        Some(other) => return Err(malformed(format!("{id}: x-produces = {other}"))),
    };

    Ok(RequestTemplate {
        id,
        method,
        path: path.to_string(),
        params,
        produces,
    })
}

/// Compile a grammar document. Identical bytes always give an identical grammar.
pub fn parse_spec(document: &[u8]) -> Result<CompiledGrammar, GrammarError> {
    let root: Value = serde_json::from_slice(document).map_err(|e| malformed(format!("invalid JSON: {e}")))?;
    let paths = match root.get("paths") {
        Some(Value::Object(p)) => p,
        None => return Ok(CompiledGrammar::default()),
        Some(_) => return Err(malformed("`paths` is not an object")),
    };

    let mut templates = BTreeMap::new();
    for (path, ops) in paths {
        let ops = ops
            .as_object()
            .ok_or_else(|| malformed(format!("{path}: path item is not an object")))?;
        for (key, op) in ops {
            if key == "parameters" || key.starts_with("x-") {
                continue;
            }
            let method = Method::parse(key).ok_or_else(|| malformed(format!("{path}: unsupported method `{key}`")))?;
            let t = parse_template(path, method, op)?;
            templates.insert(t.id.clone(), t);
        }
    }

    let resource_types: BTreeSet<String> = templates
        .values()
        .filter_map(|t| t.produces.as_ref().map(|p| p.resource_type.clone()))
        .collect();

    let mut dependency_edges = BTreeSet::new();
    for consumer in templates.values() {
        for p in &consumer.params {
            let Some(rt) = &p.consumes else { continue };
            if !resource_types.contains(rt) {
                return Err(GrammarError::UnresolvableConsumer {
                    template: consumer.id.clone(),
                    param: p.name.clone(),
                    resource: rt.clone(),
                });
            }
            for producer in templates.values() {
                if producer.produces.as_ref().map(|pr| &pr.resource_type) == Some(rt) {
                    dependency_edges.insert((producer.id.clone(), rt.clone(), consumer.id.clone()));
                }
            }
        }
    }

    Ok(CompiledGrammar {
        templates,
        resource_types,
        dependency_edges,
    })
}

#[cfg(test)]
mod tests {
    use super::*;
    use proptest::prelude::*;

    const GET_GROUP: &str = r#""get": {"parameters": [
        {"name": "id", "in": "path", "type": "integer", "required": true, "x-consumes": "group"},
        {"name": "with_custom_attributes", "in": "query", "type": "boolean",
         "x-dictionary": ["true", "false"], "x-default": "false"},
        {"name": "with_projects", "in": "query", "type": "boolean",
         "x-dictionary": ["3", "true", "false"], "x-default": "true"}
    ]}"#;

    const POST_GROUPS: &str = r#""post": {"parameters": [
        {"name": "name", "in": "body", "type": "string", "required": true,
         "x-dictionary": ["alpha", ""], "x-default": "alpha"}
    ], "x-produces": {"type": "group", "pointer": "/id"}}"#;

    fn two_templates() -> CompiledGrammar {
        let doc = format!(r#"{{"paths": {{"/groups": {{{POST_GROUPS}}}, "/groups/{{id}}": {{{GET_GROUP}}}}}}}"#);
        parse_spec(doc.as_bytes()).unwrap()
    }

    fn set(items: &[&str]) -> BTreeSet<String> {
        items.iter().map(|s| s.to_string()).collect()
    }

    #[test]
    fn lone_consumer_is_unresolvable() {
        let doc = format!(r#"{{"paths": {{"/groups/{{id}}": {{{GET_GROUP}}}}}}}"#);
        let err = parse_spec(doc.as_bytes()).unwrap_err();
        assert_eq!(
            err,
            GrammarError::UnresolvableConsumer {
                template: "GET /groups/{id}".into(),
                param: "id".into(),
                resource: "group".into()
            }
        );
    }

    #[test]
    fn empty_paths() {
        let g = parse_spec(br#"{"paths": {}}"#).unwrap();
        assert!(g.templates.is_empty());
        assert!(g.dependency_edges.is_empty());
    }

    #[test]
    fn dependency_edge_from_producer_to_consumer() {
        let g = two_templates();
        assert_eq!(g.templates.len(), 2);
        let get = g.template("GET /groups/{id}").unwrap();
        assert_eq!(get.param("with_projects").unwrap().dictionary, ["3", "true", "false"]);
        assert!(get.param("id").unwrap().required);
        assert_eq!(
            g.dependency_edges,
            BTreeSet::from([("POST /groups".into(), "group".into(), "GET /groups/{id}".into())])
        );
    }

    #[test]
    fn default_must_be_in_dictionary() {
        let doc = br#"{"paths": {"/x": {"get": {"parameters": [
            {"name": "a", "in": "query", "x-dictionary": ["1"], "x-default": "2"}]}}}}"#;
        assert!(matches!(
            parse_spec(doc),
            Err(GrammarError::DefaultNotInDictionary { .. })
        ));
    }

    #[test]
    fn malformed_documents() {
        assert!(matches!(parse_spec(b"{"), Err(GrammarError::MalformedSpec(_))));
        // placeholder without a path parameter
        let doc = br#"{"paths": {"/x/{id}": {"get": {"parameters": []}}}}"#;
        assert!(matches!(parse_spec(doc), Err(GrammarError::MalformedSpec(_))));
        let doc = br#"{"paths": {"/x": {"patch": {}}}}"#;
        assert!(matches!(parse_spec(doc), Err(GrammarError::MalformedSpec(_))));
        let doc = br#"{"paths": {"/x": {"get": {"parameters": [{"name": "a", "in": "query"}]}}}}"#;
        assert!(matches!(parse_spec(doc), Err(GrammarError::MalformedSpec(_))));
    }

    #[test]
    fn satisfiable_by_available_types() {
        let g = two_templates();
        assert_eq!(g.satisfiable_templates(&set(&[])), ["POST /groups"]);
        assert_eq!(
            g.satisfiable_templates(&set(&["group"])),
            ["GET /groups/{id}", "POST /groups"]
        );
        assert_eq!(g.satisfiable_templates(&set(&["project"])), ["POST /groups"]);
    }

    #[test]
    fn numeric_literals_become_strings() {
        let doc = br#"{"paths": {"/x": {"get": {"parameters": [
            {"name": "n", "in": "query", "type": "integer", "x-dictionary": [20, 0], "x-default": 20}]}}}}"#;
        let g = parse_spec(doc).unwrap();
        let p = g.template("GET /x").unwrap().param("n").unwrap();
        assert_eq!(p.dictionary, ["20", "0"]);
        assert_eq!(p.default, "20");
    }

    #[test]
    fn mock_grammar_round_trips() {
        let g = parse_spec(crate::mock::GRAMMAR.as_bytes()).unwrap();
        let doc = serde_json::to_vec(&g.to_document()).unwrap();
        assert_eq!(parse_spec(&doc).unwrap(), g);
    }

    fn arb_grammar() -> impl Strategy<Value = CompiledGrammar> {
        let rtypes = ["a", "b", "c"];
        prop::collection::vec(
            (
                0usize..4,
                prop::option::of(0usize..3),
                prop::collection::vec(0usize..3, 0..3),
                prop::collection::vec("[a-z0-9]{0,4}", 1..4),
            ),
            0..8,
        )
        .prop_map(move |specs| {
            let mut paths = Map::new();
            for (i, (m, produces, consumes, dict)) in specs.into_iter().enumerate() {
                let method = ["get", "post", "put", "delete"][m];
                let consumes: BTreeSet<usize> = consumes.into_iter().collect();
                let mut path = format!("/r{i}");
                let mut params = vec![json!({"name": "q", "in": "query", "type": "string",
                    "x-dictionary": dict, "x-default": dict[0]})];
                for c in &consumes {
                    path.push_str(&format!("/{{p{c}}}"));
                    params.push(json!({"name": format!("p{c}"), "in": "path", "x-consumes": rtypes[*c]}));
                }
                let mut op = json!({"parameters": params});
                if let Some(p) = produces {
                    op["x-produces"] = json!({"type": rtypes[p], "pointer": "/id"});
                }
                paths.insert(path, json!({ method: op }));
            }
            // one producer per type so every consumer resolves
            for (i, rt) in rtypes.iter().enumerate() {
                paths.insert(
                    format!("/make{i}"),
                    json!({"post": {"parameters": [], "x-produces": {"type": rt, "pointer": "/id"}}}),
                );
            }
            parse_spec(&serde_json::to_vec(&json!({ "paths": paths })).unwrap()).unwrap()
        })
    }

    proptest! {
        #[test]
        fn document_round_trip(g in arb_grammar()) {
            let doc = serde_json::to_vec(&g.to_document()).unwrap();
            prop_assert_eq!(parse_spec(&doc).unwrap(), g);
        }

        #[test]
        fn satisfiable_is_exact_and_monotone(
            g in arb_grammar(),
            a in prop::collection::btree_set(prop::sample::select(vec!["a", "b", "c"]), 0..3),
            extra in prop::collection::btree_set(prop::sample::select(vec!["a", "b", "c"]), 0..3),
        ) {
            let small: BTreeSet<String> = a.iter().map(|s| s.to_string()).collect();
            let mut big = small.clone();
            big.extend(extra.iter().map(|s| s.to_string()));
            let sat = g.satisfiable_templates(&small);
            for t in g.templates.values() {
                let covered = t.consumed_types().iter().all(|ty| small.contains(*ty));
                prop_assert_eq!(sat.contains(&t.id.as_str()), covered);
            }
            let sat_big = g.satisfiable_templates(&big);
            for id in &sat {
                prop_assert!(sat_big.contains(id));
            }
        }
    }
}
