use std::collections::BTreeMap;
use std::fmt;
use std::io;
use std::path::{Path, PathBuf};
use std::sync::OnceLock;

use regex::Regex;
use serde::{Deserialize, Serialize};
use sha2::{Digest, Sha256};

use crate::checker::ViolationKind;
use crate::collection::ParamValuePair;
use crate::replay::{self, ReplayStep};

#[derive(Debug, Clone, Copy, PartialEq, Eq, PartialOrd, Ord, Hash, Serialize, Deserialize)]
pub enum ErrorKind {
    Response5xx,
    IncorrectParamUsage,
    UseAfterFree,
}

impl ErrorKind {
    pub fn as_str(self) -> &'static str {
        match self {
            ErrorKind::Response5xx => "response5xx",
            ErrorKind::IncorrectParamUsage => "incorrect-param-usage",
            ErrorKind::UseAfterFree => "use-after-free",
        }
    }
}

impl fmt::Display for ErrorKind {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        f.write_str(self.as_str())
    }
}

impl From<ViolationKind> for ErrorKind {
    fn from(k: ViolationKind) -> Self {
        match k {
            ViolationKind::IncorrectParamUsage => ErrorKind::IncorrectParamUsage,
            ViolationKind::UseAfterFree => ErrorKind::UseAfterFree,
        }
    }
}

/// Lowercases the body, drops hex runs of 8+ characters and all digits, and
/// hashes what is left (16 hex characters).
pub fn body_signature(body: &str) -> String {
    static HEX: OnceLock<Regex> = OnceLock::new();
    let hex = HEX.get_or_init(|| Regex::new("[0-9a-f]{8,}").expect("static regex"));
    let lowered = body.to_lowercase();
    let stripped: String = hex
        .replace_all(&lowered, "")
        .chars()
        .filter(|c| !c.is_ascii_digit())
        .collect();
    let digest = Sha256::digest(stripped.as_bytes());
    digest[..8].iter().map(|b| format!("{b:02x}")).collect()
}

#[derive(Debug, Clone, PartialEq, Eq, PartialOrd, Ord, Hash, Serialize, Deserialize)]
pub struct BucketKey {
    pub template_id: String,
    pub status: Option<u16>,
    pub kind: ErrorKind,
    pub signature: String,
}

impl BucketKey {
    /// Short stable name, used for the replay file.
    pub fn bucket_id(&self) -> String {
        let text = format!(
            "{}\n{}\n{}\n{}",
            self.template_id,
            self.status.map(|s| s.to_string()).unwrap_or_default(),
            self.kind,
            self.signature
        );
        let digest = Sha256::digest(text.as_bytes());
        let short: String = digest[..6].iter().map(|b| format!("{b:02x}")).collect();
        format!("{}-{short}", self.kind)
    }
}

#[derive(Debug, Clone, PartialEq, Eq, Serialize, Deserialize)]
pub struct ErrorRecord {
    pub bucket_id: String,
    #[serde(flatten)]
    pub key: BucketKey,
    /// Relative to the report directory; absent when no report is written.
    pub replay_file: Option<PathBuf>,
    pub first_seen_iteration: u64,
    pub hits: u64,
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub injected: Option<ParamValuePair>,
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub deleted_id: Option<String>,
    pub body: String,
    #[serde(skip)]
    pub steps: Vec<ReplayStep>,
}

/// Deduplicated errors of one run.
#[derive(Debug, Default)]
pub struct ErrorBuckets {
    records: BTreeMap<BucketKey, ErrorRecord>,
    replay_dir: Option<PathBuf>,
}

/// Optional details a checker attaches to an error.
#[derive(Debug, Clone, Default)]
pub struct ErrorContext {
    pub injected: Option<ParamValuePair>,
    pub deleted_id: Option<String>,
}

impl ErrorBuckets {
    /// Replay files go to `<report_dir>/replays/` when a directory is given.
    pub fn new(report_dir: Option<&Path>) -> Self {
        Self {
            records: BTreeMap::new(),
            replay_dir: report_dir.map(|d| d.join("replays")),
        }
    }

    /// Files `steps` (ending with the failing request) under its bucket.
    /// Returns true for a new bucket.
    pub fn record(
        &mut self,
        kind: ErrorKind,
        steps: &[ReplayStep],
        status: Option<u16>,
        body: &str,
        iteration: u64,
        context: ErrorContext,
    ) -> io::Result<bool> {
        let last = steps.last().map(|s| s.template_id.clone()).unwrap_or_default();
        let key = BucketKey {
            template_id: last,
            status,
            kind,
            signature: body_signature(body),
        };
        if let Some(existing) = self.records.get_mut(&key) {
            existing.hits += 1;
            return Ok(false);
        }
        let bucket_id = key.bucket_id();
        let replay_file = match &self.replay_dir {
            Some(dir) => {
                let name = format!("{bucket_id}.jsonl");
                replay::write_file(&dir.join(&name), steps)?;
                Some(PathBuf::from("replays").join(name))
            }
            None => None,
        };
        self.records.insert(
            key.clone(),
            ErrorRecord {
                bucket_id,
                key,
                replay_file,
                first_seen_iteration: iteration,
                hits: 1,
                injected: context.injected,
                deleted_id: context.deleted_id,
                body: body.to_string(),
                steps: steps.to_vec(),
            },
        );
        Ok(true)
    }

    pub fn len(&self) -> usize {
        self.records.len()
    }

    pub fn is_empty(&self) -> bool {
        self.records.is_empty()
    }

    pub fn records(&self) -> impl Iterator<Item = &ErrorRecord> {
        self.records.values()
    }

    pub fn into_records(self) -> Vec<ErrorRecord> {
        self.records.into_values().collect()
    }
}
