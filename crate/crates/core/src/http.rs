//! Wire-level request/response types and the [`Target`] abstraction the fuzzer
//! sends requests through.

use std::collections::BTreeMap;
use std::time::{Duration, Instant};

use serde::{Deserialize, Serialize};

use crate::grammar::Method;

/// A fully rendered request: no placeholders left, every value a string.
#[derive(Debug, Clone, PartialEq, Eq, Serialize, Deserialize)]
pub struct ReadyRequest {
    pub template_id: String,
    pub method: Method,
    pub path: String,
    #[serde(default)]
    pub query: BTreeMap<String, String>,
    #[serde(default)]
    pub body: BTreeMap<String, String>,
    #[serde(default)]
    pub headers: BTreeMap<String, String>,
}

impl ReadyRequest {
    /// Raw bytes of the JSON body, `None` for body-less methods.
    pub fn body_bytes(&self) -> Option<Vec<u8>> {
        self.method
            .has_body()
            .then(|| serde_json::to_vec(&self.body).expect("string map serializes"))
    }

    /// Adds a parameter where an undeclared parameter of this method would go.
    pub fn insert_free_param(&mut self, name: &str, value: &str) {
        if self.method.has_body() {
            self.body.insert(name.to_string(), value.to_string());
        } else {
            self.query.insert(name.to_string(), value.to_string());
        }
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash, PartialOrd, Ord, Serialize, Deserialize)]
pub enum ResponseClass {
    Pass2xx,
    Reject4xx,
    Error5xx,
    Transport,
}

impl ResponseClass {
    /// Anything outside 2xx and 5xx is treated as a rejection.
    pub fn from_status(status: u16) -> Self {
        match status {
            200..=299 => ResponseClass::Pass2xx,
            500..=599 => ResponseClass::Error5xx,
            _ => ResponseClass::Reject4xx,
        }
    }

    /// The request got past the service's input checking.
    pub fn accepted(self) -> bool {
        matches!(self, ResponseClass::Pass2xx | ResponseClass::Error5xx)
    }
}

#[derive(Debug, Clone, PartialEq, Eq, Serialize, Deserialize)]
pub struct ResponseRecord {
    pub status: Option<u16>,
    pub class: ResponseClass,
    pub body: String,
    #[serde(with = "micros")]
    pub latency: Duration,
}

impl ResponseRecord {
    pub fn from_status(status: u16, body: impl Into<String>, latency: Duration) -> Self {
        Self {
            status: Some(status),
            class: ResponseClass::from_status(status),
            body: body.into(),
            latency,
        }
    }

    pub fn transport(error: impl Into<String>, latency: Duration) -> Self {
        Self {
            status: None,
            class: ResponseClass::Transport,
            body: error.into(),
            latency,
        }
    }

    pub fn json(&self) -> Option<serde_json::Value> {
        serde_json::from_str(&self.body).ok()
    }
}

mod micros {
    use serde::{Deserialize, Deserializer, Serializer};
    use std::time::Duration;

    pub fn serialize<S: Serializer>(d: &Duration, s: S) -> Result<S::Ok, S::Error> {
        s.serialize_u64(d.as_micros() as u64)
    }

    pub fn deserialize<'de, D: Deserializer<'de>>(d: D) -> Result<Duration, D::Error> {
        Ok(Duration::from_micros(u64::deserialize(d)?))
    }
}

/// Something requests can be sent to. Never fails: connection problems come
/// back as [`ResponseClass::Transport`] records.
pub trait Target {
    fn send(&mut self, request: &ReadyRequest) -> ResponseRecord;
}

impl<T: Target + ?Sized> Target for &mut T {
    fn send(&mut self, request: &ReadyRequest) -> ResponseRecord {
        (**self).send(request)
    }
}

impl<T: Target + ?Sized> Target for Box<T> {
    fn send(&mut self, request: &ReadyRequest) -> ResponseRecord {
        (**self).send(request)
    }
}

/// Blocking HTTP client against a live service.
pub struct HttpTarget {
    base: String,
    token: Option<String>,
    agent: ureq::Agent,
}

impl HttpTarget {
    pub fn new(base_url: &str) -> Self {
        let agent = ureq::AgentBuilder::new().timeout(Duration::from_secs(30)).build();
        Self {
            base: base_url.trim_end_matches('/').to_string(),
            token: None,
            agent,
        }
    }

    pub fn with_token(mut self, token: Option<String>) -> Self {
        self.token = token;
        self
    }

    pub fn base_url(&self) -> &str {
        &self.base
    }

    /// Sends a bare GET to the base URL; any HTTP answer means reachable.
    pub fn probe(&self) -> Result<(), String> {
        match self.agent.get(&self.base).call() {
            Ok(_) | Err(ureq::Error::Status(..)) => Ok(()),
            Err(e) => Err(e.to_string()),
        }
    }

    /// POSTs to an arbitrary path outside the grammar (test hooks).
    pub fn post_raw(&self, path: &str) -> Result<u16, String> {
        match self.agent.post(&format!("{}{}", self.base, path)).call() {
            Ok(r) => Ok(r.status()),
            Err(ureq::Error::Status(code, _)) => Ok(code),
            Err(e) => Err(e.to_string()),
        }
    }

    pub fn get_raw(&self, path: &str) -> Result<(u16, String), String> {
        match self.agent.get(&format!("{}{}", self.base, path)).call() {
            Ok(r) => {
                let status = r.status();
                Ok((status, r.into_string().map_err(|e| e.to_string())?))
            }
            Err(ureq::Error::Status(code, r)) => Ok((code, r.into_string().unwrap_or_default())),
            Err(e) => Err(e.to_string()),
        }
    }
}

impl Target for HttpTarget {
    fn send(&mut self, request: &ReadyRequest) -> ResponseRecord {
        let url = format!("{}{}", self.base, request.path);
        let mut req = self.agent.request(request.method.as_str(), &url);
        for (k, v) in &request.query {
            req = req.query(k, v);
        }
        for (k, v) in &request.headers {
            req = req.set(k, v);
        }
        if let Some(token) = &self.token {
            req = req.set("Authorization", &format!("Bearer {token}"));
        }
        let started = Instant::now();
        let result = match request.body_bytes() {
            Some(bytes) => req.set("Content-Type", "application/json").send_bytes(&bytes),
            None => req.call(),
        };
        let response = match result {
            Ok(r) | Err(ureq::Error::Status(_, r)) => r,
            Err(e) => return ResponseRecord::transport(e.to_string(), started.elapsed()),
        };
        let status = response.status();
        match response.into_string() {
            Ok(body) => ResponseRecord::from_status(status, body, started.elapsed()),
            Err(e) => ResponseRecord::transport(e.to_string(), started.elapsed()),
        }
    }
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn class_from_status() {
        assert_eq!(ResponseClass::from_status(201), ResponseClass::Pass2xx);
        assert_eq!(ResponseClass::from_status(204), ResponseClass::Pass2xx);
        assert_eq!(ResponseClass::from_status(404), ResponseClass::Reject4xx);
        assert_eq!(ResponseClass::from_status(503), ResponseClass::Error5xx);
        assert_eq!(ResponseClass::from_status(302), ResponseClass::Reject4xx);
    }

    #[test]
    fn free_params_follow_method() {
        let mut r = ReadyRequest {
            template_id: "GET /x".into(),
            method: Method::Get,
            path: "/x".into(),
            query: BTreeMap::new(),
            body: BTreeMap::new(),
            headers: BTreeMap::new(),
        };
        r.insert_free_param("a", "1");
        assert_eq!(r.query["a"], "1");
        assert!(r.body_bytes().is_none());
        r.method = Method::Put;
        r.insert_free_param("b", "2");
        assert_eq!(r.body["b"], "2");
        assert_eq!(r.body_bytes().unwrap(), br#"{"b":"2"}"#);
    }

    #[test]
    fn unreachable_target_is_transport_error() {
        let mut t = HttpTarget::new("http://127.0.0.1:9");
        assert!(t.probe().is_err());
        let r = t.send(&ReadyRequest {
            template_id: "GET /".into(),
            method: Method::Get,
            path: "/".into(),
            query: BTreeMap::new(),
            body: BTreeMap::new(),
            headers: BTreeMap::new(),
        });
        assert_eq!(r.class, ResponseClass::Transport);
        assert_eq!(r.status, None);
    }
}
