//! The fuzzing loop: pick a sequence, render and send it, collect what was
//! accepted, run the checkers, and hand training data to the recommender.

mod buckets;
mod config;
mod fuzz;
mod metrics;
mod trainer;

pub use buckets::{body_signature, BucketKey, ErrorBuckets, ErrorContext, ErrorKind, ErrorRecord};
pub use config::{FuzzConfig, Mode, TrainSchedule, UnknownMode};
pub use fuzz::{fuzz_loop, FuzzError, FuzzOutcome, Fuzzer, TraceEntry};
pub use metrics::{pass_rate, ClassCounts, MetricsError, RunMetrics};
pub use trainer::{TrainJob, TrainOutcome, Trainer};
