//! Deterministic in-memory REST service with a groups/projects resource model
//! and four independently armable bugs. Used as the desk-scale fuzzing target.

mod server;
mod service;
mod store;

use std::collections::BTreeSet;
use std::fmt;
use std::str::FromStr;

use serde::{Deserialize, Serialize};
use thiserror::Error;

pub use server::{serve, MockServer};
pub use service::{MockRequest, MockResponse, MockService};
pub use store::ResourceStore;

/// Grammar describing the mock service's API surface.
pub const GRAMMAR: &str = include_str!("../../assets/mock_target.grammar.json");

#[derive(Debug, Error)]
pub enum MockError {
    #[error("failed to bind mock service on port {port}: {reason}")]
    BindFailed { port: u16, reason: String },
    #[error("unknown bug `{0}` (expected b-uaf, b-undef, b-perpage or b-parentid)")]
    UnknownBug(String),
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, PartialOrd, Ord, Hash, Serialize, Deserialize)]
pub enum Bug {
    /// `GET /groups/{id}/attributes` on a deleted group crashes instead of 404.
    UseAfterFree,
    /// `PUT /groups/{id}` crashes when it carries `initialize_with_readme`.
    UndefinedParam,
    /// `GET /groups?per_page=0` crashes.
    PerPageZero,
    /// `POST /groups` with `parent_id` of 2, -1 or -2 crashes.
    ParentId,
}

impl Bug {
    pub const ALL: [Bug; 4] = [Bug::UseAfterFree, Bug::UndefinedParam, Bug::PerPageZero, Bug::ParentId];

    pub fn tag(self) -> &'static str {
        match self {
            Bug::UseAfterFree => "b-uaf",
            Bug::UndefinedParam => "b-undef",
            Bug::PerPageZero => "b-perpage",
            Bug::ParentId => "b-parentid",
        }
    }
}

impl fmt::Display for Bug {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        f.write_str(self.tag())
    }
}

impl FromStr for Bug {
    type Err = MockError;

    fn from_str(s: &str) -> Result<Self, Self::Err> {
        Bug::ALL
            .into_iter()
            .find(|b| b.tag().eq_ignore_ascii_case(s.trim()))
            .ok_or_else(|| MockError::UnknownBug(s.to_string()))
    }
}

#[derive(Debug, Clone, Default, PartialEq, Eq, Serialize, Deserialize)]
pub struct BugConfig {
    pub armed: BTreeSet<Bug>,
    /// Mixed into the request ids the service reports in error bodies.
    pub seed: u64,
}

impl BugConfig {
    pub fn none() -> Self {
        Self::default()
    }

    pub fn all() -> Self {
        Self {
            armed: Bug::ALL.into_iter().collect(),
            seed: 0,
        }
    }

    pub fn with_seed(mut self, seed: u64) -> Self {
        self.seed = seed;
        self
    }

    pub fn is_armed(&self, bug: Bug) -> bool {
        self.armed.contains(&bug)
    }

    /// Parses a comma-separated list such as `b-uaf,b-perpage`.
    pub fn parse_list(list: &str) -> Result<BTreeSet<Bug>, MockError> {
        list.split(',')
            .filter(|s| !s.trim().is_empty())
            .map(Bug::from_str)
            .collect()
    }
}
