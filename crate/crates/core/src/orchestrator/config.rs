use std::fmt;
use std::path::PathBuf;
use std::str::FromStr;
use std::time::Duration;

use serde::{Deserialize, Serialize};
use thiserror::Error;

use crate::generator::PrefixRendering;
use crate::model::ModelConfig;
use crate::sequence::DEFAULT_MAX_SEQUENCE_LENGTH;

#[derive(Debug, Error, Clone, PartialEq, Eq)]
#[error("unknown mode `{0}` (expected miner, baseline, seq-only, model-only, rec1 or reclist)")]
pub struct UnknownMode(pub String);

/// Which of the data-driven features are switched on.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash, Serialize, Deserialize)]
#[serde(rename_all = "kebab-case")]
pub enum Mode {
    /// Breadth-first extension, random values everywhere.
    Baseline,
    /// Length-weighted seed selection only.
    SeqOnly,
    /// Weighted selection, prefix requests replay one recorded pair.
    Rec1,
    /// Weighted selection, prefix requests replay one recorded list.
    #[serde(rename = "reclist")]
    RecList,
    /// Breadth-first extension, prefix requests use model lists.
    ModelOnly,
    Miner,
}

impl Mode {
    pub const ALL: [Mode; 6] = [
        Mode::Baseline,
        Mode::SeqOnly,
        Mode::Rec1,
        Mode::RecList,
        Mode::ModelOnly,
        Mode::Miner,
    ];

    pub fn as_str(self) -> &'static str {
        match self {
            Mode::Baseline => "baseline",
            Mode::SeqOnly => "seq-only",
            Mode::Rec1 => "rec1",
            Mode::RecList => "reclist",
            Mode::ModelOnly => "model-only",
            Mode::Miner => "miner",
        }
    }

    pub fn weighted_selection(self) -> bool {
        !matches!(self, Mode::Baseline | Mode::ModelOnly)
    }

    pub fn rendering(self) -> PrefixRendering {
        match self {
            Mode::Baseline | Mode::SeqOnly => PrefixRendering::Traditional,
            Mode::Rec1 => PrefixRendering::RecordedPair,
            Mode::RecList => PrefixRendering::RecordedList,
            Mode::ModelOnly | Mode::Miner => PrefixRendering::ModelLists,
        }
    }

    pub fn uses_model(self) -> bool {
        self.rendering() == PrefixRendering::ModelLists
    }
}

impl fmt::Display for Mode {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        f.write_str(self.as_str())
    }
}

impl FromStr for Mode {
    type Err = UnknownMode;

    fn from_str(s: &str) -> Result<Self, Self::Err> {
        Mode::ALL
            .into_iter()
            .find(|m| m.as_str() == s)
            .ok_or_else(|| UnknownMode(s.to_string()))
    }
}

/// When the recommender is retrained.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
pub enum TrainSchedule {
    /// In the background, every interval of wall time.
    Interval(Duration),
    /// Each time another `n` requests have been sent; fuzzing waits for the
    /// new lists, which makes runs reproducible.
    EveryRequests(u64),
}

impl Default for TrainSchedule {
    fn default() -> Self {
        TrainSchedule::Interval(Duration::from_secs(2 * 60 * 60))
    }
}

#[derive(Debug, Clone, PartialEq)]
pub struct FuzzConfig {
    pub mode: Mode,
    pub seed: u64,
    pub max_requests: Option<u64>,
    pub duration: Option<Duration>,
    pub train_schedule: TrainSchedule,
    pub enable_uaf_checker: bool,
    pub enable_datadriven_checker: bool,
    pub max_sequence_length: usize,
    pub model: ModelConfig,
    pub report_dir: Option<PathBuf>,
    pub dump_weights: bool,
    pub write_collection: bool,
    /// Keep the executed template lists in the outcome.
    pub trace: bool,
}

impl Default for FuzzConfig {
    fn default() -> Self {
        Self {
            mode: Mode::Miner,
            seed: 0,
            max_requests: None,
            duration: None,
            train_schedule: TrainSchedule::default(),
            enable_uaf_checker: false,
            enable_datadriven_checker: false,
            max_sequence_length: DEFAULT_MAX_SEQUENCE_LENGTH,
            model: ModelConfig::default(),
            report_dir: None,
            dump_weights: false,
            write_collection: false,
            trace: false,
        }
    }
}
