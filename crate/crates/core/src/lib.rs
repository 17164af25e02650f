//! Stateful REST API fuzzing driven by collected data: length-weighted
//! sequence selection, a learned parameter-value recommender, and a checker
//! for undefined-parameter crashes.

pub mod checker;
pub mod collection;
pub mod generator;
pub mod grammar;
pub mod http;
pub mod mock;
pub mod model;
pub mod orchestrator;
pub mod replay;
pub mod sequence;
