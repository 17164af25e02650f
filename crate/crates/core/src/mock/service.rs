use std::collections::BTreeMap;

use serde_json::{json, Map, Value};
use sha2::{Digest, Sha256};

use super::store::ResourceStore;
use super::{Bug, BugConfig};
use crate::http::{ReadyRequest, ResponseRecord, Target};

#[derive(Debug, Clone, PartialEq, Eq)]
pub struct MockRequest {
    pub method: String,
    pub path: String,
    pub query: BTreeMap<String, String>,
    pub body: Vec<u8>,
}

#[derive(Debug, Clone, PartialEq, Eq)]
pub struct MockResponse {
    pub status: u16,
    pub body: String,
}

impl MockResponse {
    fn json(status: u16, body: Value) -> Self {
        Self {
            status,
            body: body.to_string(),
        }
    }

    fn no_content() -> Self {
        Self {
            status: 204,
            body: String::new(),
        }
    }

    fn message(status: u16, message: &str) -> Self {
        Self::json(status, json!({ "message": message }))
    }
}

type Outcome = Result<MockResponse, MockResponse>;

#[derive(Clone, Copy, PartialEq, Eq)]
enum Kind {
    Group,
    Project,
}

impl Kind {
    fn name(self) -> &'static str {
        match self {
            Kind::Group => "group",
            Kind::Project => "project",
        }
    }

    fn from_segment(s: &str) -> Option<Kind> {
        match s {
            "groups" => Some(Kind::Group),
            "projects" => Some(Kind::Project),
            _ => None,
        }
    }
}

const VISIBILITIES: [&str; 3] = ["private", "internal", "public"];

/// Request parameters from the query string and JSON body, merged (body wins).
struct Params(BTreeMap<String, String>);

impl Params {
    fn parse(req: &MockRequest) -> Result<Params, MockResponse> {
        let mut map = req.query.clone();
        if !req.body.iter().all(u8::is_ascii_whitespace) {
            let body: Map<String, Value> = serde_json::from_slice(&req.body)
                .map_err(|_| MockResponse::message(400, "400 Bad Request: malformed JSON body"))?;
            for (k, v) in body {
                let s = match v {
                    Value::String(s) => s,
                    Value::Null => String::new(),
                    other => other.to_string(),
                };
                map.insert(k, s);
            }
        }
        Ok(Params(map))
    }

    fn get(&self, name: &str) -> Option<&str> {
        self.0.get(name).map(String::as_str)
    }

    fn contains(&self, name: &str) -> bool {
        self.0.contains_key(name)
    }

    fn require(&self, name: &str) -> Result<&str, MockResponse> {
        self.get(name)
            .ok_or_else(|| MockResponse::message(400, &format!("400 Bad Request: {name} is missing")))
    }

    fn boolean(&self, name: &str) -> Result<Option<bool>, MockResponse> {
        match self.get(name) {
            None => Ok(None),
            Some("true") => Ok(Some(true)),
            Some("false") => Ok(Some(false)),
            Some(_) => Err(invalid(name)),
        }
    }

    /// Empty strings count as absent.
    fn integer(&self, name: &str) -> Result<Option<i64>, MockResponse> {
        match self.get(name) {
            None | Some("") => Ok(None),
            Some(s) => s.parse().map(Some).map_err(|_| invalid(name)),
        }
    }

    fn datetime(&self, name: &str) -> Result<(), MockResponse> {
        match self.get(name) {
            None => Ok(()),
            Some(s) => chrono::DateTime::parse_from_rfc3339(s)
                .map(|_| ())
                .map_err(|_| invalid(name)),
        }
    }
}

fn invalid(name: &str) -> MockResponse {
    MockResponse::message(400, &format!("400 Bad Request: {name} is invalid"))
}

fn not_found(what: &str) -> MockResponse {
    MockResponse::message(404, &format!("404 {what} Not Found"))
}

fn valid_path_slug(s: &str) -> bool {
    !s.is_empty()
        && s.chars()
            .all(|c| c.is_ascii_alphanumeric() || matches!(c, '_' | '-' | '.'))
}

/// The service. Handling is a pure function of the request stream since the
/// last reset.
#[derive(Debug, Clone)]
pub struct MockService {
    bugs: BugConfig,
    store: ResourceStore,
    coverage: BTreeMap<String, u64>,
    served: u64,
}

impl MockService {
    pub fn new(bugs: BugConfig) -> Self {
        Self {
            bugs,
            store: ResourceStore::new(),
            coverage: BTreeMap::new(),
            served: 0,
        }
    }

    pub fn bugs(&self) -> &BugConfig {
        &self.bugs
    }

    pub fn store(&self) -> &ResourceStore {
        &self.store
    }

    pub fn reset(&mut self) {
        *self = MockService::new(self.bugs.clone());
    }

    /// Hit counts per handler branch.
    pub fn coverage(&self) -> &BTreeMap<String, u64> {
        &self.coverage
    }

    fn hit(&mut self, branch: &str) {
        *self.coverage.entry(branch.to_string()).or_insert(0) += 1;
    }

    fn crash(&mut self, branch: &str, error: String) -> MockResponse {
        self.hit(branch);
        let mut h = Sha256::new();
        h.update(self.bugs.seed.to_le_bytes());
        h.update(self.served.to_le_bytes());
        let digest = h.finalize();
        let request_id: String = digest[..8].iter().map(|b| format!("{b:02x}")).collect();
        MockResponse::json(
            500,
            json!({"message": "500 Internal Server Error", "error": error, "request_id": request_id}),
        )
    }

    pub fn handle(&mut self, req: &MockRequest) -> MockResponse {
        self.served += 1;
        let method = req.method.to_ascii_uppercase();
        match (method.as_str(), req.path.as_str()) {
            ("POST", "/__reset") => {
                self.reset();
                return MockResponse::json(200, json!({"reset": true}));
            }
            ("GET", "/__coverage") => return MockResponse::json(200, json!(self.coverage)),
            _ => {}
        }

        let segments: Vec<&str> = req.path.trim_matches('/').split('/').collect();
        let Some(kind) = segments.first().and_then(|s| Kind::from_segment(s)) else {
            self.hit("route.unknown_path");
            return not_found("Path");
        };
        let params = match Params::parse(req) {
            Ok(p) => p,
            Err(resp) => {
                self.hit("route.malformed_body");
                return resp;
            }
        };
        let result = match (method.as_str(), &segments[1..]) {
            ("POST", []) => self.create(kind, &params),
            ("GET", []) => self.list(kind, &params),
            ("GET", [id]) => self.show(kind, id, &params),
            ("GET", [id, "attributes"]) => self.attributes(kind, id),
            ("PUT", [id]) => self.update(kind, id, &params),
            ("DELETE", [id]) => self.delete(kind, id),
            (_, [] | [_] | [_, "attributes"]) => {
                self.hit("route.method_not_allowed");
                Err(MockResponse::message(405, "405 Method Not Allowed"))
            }
            _ => {
                self.hit("route.unknown_path");
                Err(not_found("Path"))
            }
        };
        result.unwrap_or_else(|e| e)
    }

    /// Tags a rejection with a coverage branch.
    fn reject<T>(&mut self, branch: &str, r: Result<T, MockResponse>) -> Result<T, MockResponse> {
        if r.is_err() {
            self.hit(branch);
        }
        r
    }

    fn lookup(&mut self, kind: Kind, raw_id: &str, op: &str) -> Result<u64, MockResponse> {
        let found = raw_id
            .parse::<u64>()
            .ok()
            .filter(|id| self.store.get(kind.name(), *id).is_some());
        match found {
            Some(id) => Ok(id),
            None => {
                self.hit(&format!("{}.{op}.not_found", kind.name()));
                Err(not_found(match kind {
                    Kind::Group => "Group",
                    Kind::Project => "Project",
                }))
            }
        }
    }

    fn check_visibility(&mut self, kind: Kind, op: &str, params: &Params) -> Result<(), MockResponse> {
        match params.get("visibility") {
            Some(v) if !VISIBILITIES.contains(&v) => {
                self.hit(&format!("{}.{op}.invalid_visibility", kind.name()));
                Err(invalid("visibility"))
            }
            Some(v) => {
                self.hit(&format!("{}.{op}.visibility_{v}", kind.name()));
                Ok(())
            }
            None => Ok(()),
        }
    }

    fn check_name(&mut self, kind: Kind, op: &str, name: Option<&str>) -> Result<(), MockResponse> {
        if name == Some("") {
            self.hit(&format!("{}.{op}.empty_name", kind.name()));
            return Err(MockResponse::message(400, "400 Bad Request: name can't be blank"));
        }
        Ok(())
    }

    fn create(&mut self, kind: Kind, params: &Params) -> Outcome {
        let k = kind.name();
        let name = self.reject(&format!("{k}.create.missing_param"), params.require("name"))?;
        let mut fields = Map::new();
        match kind {
            Kind::Group => {
                let path = self.reject("group.create.missing_param", params.require("path"))?;
                let parent = self.reject("group.create.bad_type", params.integer("parent_id"))?;
                if let Some(pid) = parent {
                    if self.bugs.is_armed(Bug::ParentId) && matches!(pid, 2 | -1 | -2) {
                        return Err(self.crash(
                            "group.create.parent_id_crash",
                            format!("ActiveRecord::RecordNotFound: Couldn't find Namespace with 'id'={pid}"),
                        ));
                    }
                }
                self.check_name(kind, "create", Some(name))?;
                if !valid_path_slug(path) {
                    self.hit("group.create.invalid_path");
                    return Err(invalid("path"));
                }
                self.check_visibility(kind, "create", params)?;
                if let Some(pid) = parent {
                    let live = pid > 0 && self.store.get("group", pid as u64).is_some();
                    if !live {
                        self.hit("group.create.bad_parent");
                        return Err(invalid("parent_id"));
                    }
                    self.hit("group.create.subgroup");
                    fields.insert("parent_id".into(), json!(pid));
                }
                fields.insert("path".into(), json!(path));
            }
            Kind::Project => {
                let path = self.reject("project.create.missing_param", params.require("path"))?;
                let readme = self.reject("project.create.bad_type", params.boolean("initialize_with_readme"))?;
                self.check_name(kind, "create", Some(name))?;
                if !valid_path_slug(path) {
                    self.hit("project.create.invalid_path");
                    return Err(invalid("path"));
                }
                self.check_visibility(kind, "create", params)?;
                let branch = params.get("default_branch").unwrap_or("main");
                if branch.is_empty() {
                    self.hit("project.create.empty_branch");
                    return Err(MockResponse::message(
                        400,
                        "400 Bad Request: default_branch can't be blank",
                    ));
                }
                if readme == Some(true) {
                    self.hit("project.create.readme");
                    fields.insert("readme_url".into(), json!("README.md"));
                }
                fields.insert("path".into(), json!(path));
                fields.insert("default_branch".into(), json!(branch));
            }
        }
        fields.insert("name".into(), json!(name));
        fields.insert(
            "visibility".into(),
            json!(params.get("visibility").unwrap_or("private")),
        );
        fields.insert("description".into(), json!(params.get("description").unwrap_or("")));
        let (_, created) = self.store.create(k, fields);
        self.hit(&format!("{k}.create.ok"));
        Ok(MockResponse::json(201, Value::Object(created)))
    }

    fn list(&mut self, kind: Kind, params: &Params) -> Outcome {
        let k = kind.name();
        let per_page = self.reject(&format!("{k}.list.bad_type"), params.integer("per_page"))?;
        let statistics = match kind {
            Kind::Group => self.reject("group.list.bad_type", params.boolean("statistics"))?,
            Kind::Project => {
                self.reject("project.list.bad_type", params.datetime("created_after"))?;
                None
            }
        };
        if kind == Kind::Group && per_page == Some(0) && self.bugs.is_armed(Bug::PerPageZero) {
            return Err(self.crash(
                "group.list.per_page_crash",
                "ZeroDivisionError: divided by 0 (pagination)".to_string(),
            ));
        }
        let per_page = per_page.unwrap_or(20);
        if !(1..=100).contains(&per_page) {
            self.hit(&format!("{k}.list.per_page_out_of_range"));
            return Err(invalid("per_page"));
        }
        if statistics == Some(true) {
            self.hit("group.list.statistics");
        }
        let items: Vec<Value> = self
            .store
            .list(k)
            .take(per_page as usize)
            .map(|f| {
                let mut f = f.clone();
                if statistics == Some(true) {
                    f.insert("statistics".into(), json!({"storage_size": 0}));
                }
                Value::Object(f)
            })
            .collect();
        self.hit(&format!("{k}.list.{}", if items.is_empty() { "empty" } else { "ok" }));
        Ok(MockResponse::json(200, Value::Array(items)))
    }

    fn show(&mut self, kind: Kind, raw_id: &str, params: &Params) -> Outcome {
        let k = kind.name();
        let id = self.lookup(kind, raw_id, "show")?;
        let mut body = self.store.get(k, id).cloned().unwrap_or_default();
        match kind {
            Kind::Group => {
                let custom = self.reject("group.show.bad_type", params.boolean("with_custom_attributes"))?;
                let projects = self.reject("group.show.bad_type", params.boolean("with_projects"))?;
                if custom == Some(true) {
                    self.hit("group.show.custom_attributes");
                    body.insert("custom_attributes".into(), json!([]));
                }
                if projects != Some(false) {
                    self.hit("group.show.projects");
                    body.insert("projects".into(), json!([]));
                }
            }
            Kind::Project => {
                let stats = self.reject("project.show.bad_type", params.boolean("statistics"))?;
                let license = self.reject("project.show.bad_type", params.boolean("license"))?;
                if stats == Some(true) {
                    self.hit("project.show.statistics");
                    body.insert("statistics".into(), json!({"commit_count": 0}));
                }
                if license == Some(true) {
                    self.hit("project.show.license");
                    body.insert("license".into(), Value::Null);
                }
            }
        }
        self.hit(&format!("{k}.show.ok"));
        Ok(MockResponse::json(200, Value::Object(body)))
    }

    fn attributes(&mut self, kind: Kind, raw_id: &str) -> Outcome {
        let k = kind.name();
        if let Ok(id) = raw_id.parse::<u64>() {
            if kind == Kind::Group && self.bugs.is_armed(Bug::UseAfterFree) && self.store.is_tombstoned(k, id) {
                return Err(self.crash(
                    "group.attributes.deleted_crash",
                    format!("NoMethodError: undefined method `custom_attributes' for nil (group {id})"),
                ));
            }
        }
        let id = self.lookup(kind, raw_id, "attributes")?;
        self.hit(&format!("{k}.attributes.ok"));
        Ok(MockResponse::json(200, json!({"id": id, "attributes": []})))
    }

    fn update(&mut self, kind: Kind, raw_id: &str, params: &Params) -> Outcome {
        let k = kind.name();
        let id = self.lookup(kind, raw_id, "update")?;
        self.check_name(kind, "update", params.get("name"))?;
        self.check_visibility(kind, "update", params)?;
        if kind == Kind::Project && params.get("default_branch") == Some("") {
            self.hit("project.update.empty_branch");
            return Err(invalid("default_branch"));
        }
        if kind == Kind::Group && self.bugs.is_armed(Bug::UndefinedParam) && params.contains("initialize_with_readme") {
            return Err(self.crash(
                "group.update.undefined_param_crash",
                "NoMethodError: undefined method `initialize_with_readme=' for Group".to_string(),
            ));
        }
        let names: &[&str] = match kind {
            Kind::Group => &["name", "description", "visibility"],
            Kind::Project => &["name", "description", "visibility", "default_branch"],
        };
        let fields = self.store.get_mut(k, id).expect("looked up above");
        for n in names {
            if let Some(v) = params.get(n) {
                fields.insert(n.to_string(), json!(v));
            }
        }
        let body = Value::Object(fields.clone());
        self.hit(&format!("{k}.update.ok"));
        Ok(MockResponse::json(200, body))
    }

    fn delete(&mut self, kind: Kind, raw_id: &str) -> Outcome {
        let id = self.lookup(kind, raw_id, "delete")?;
        self.store.delete(kind.name(), id);
        self.hit(&format!("{}.delete.ok", kind.name()));
        Ok(MockResponse::no_content())
    }
}

impl From<&ReadyRequest> for MockRequest {
    fn from(r: &ReadyRequest) -> Self {
        MockRequest {
            method: r.method.as_str().to_string(),
            path: r.path.clone(),
            query: r.query.clone(),
            body: r.body_bytes().unwrap_or_default(),
        }
    }
}

/// In-process transport: no sockets, same handler.
impl Target for MockService {
    fn send(&mut self, request: &ReadyRequest) -> ResponseRecord {
        let started = std::time::Instant::now();
        let resp = self.handle(&MockRequest::from(request));
        ResponseRecord::from_status(resp.status, resp.body, started.elapsed())
    }
}
