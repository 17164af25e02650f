use std::collections::{BTreeSet, VecDeque};
use std::fs;
use std::io::{self, Write};
use std::path::Path;
use std::sync::Arc;
use std::time::Instant;

use rand::seq::SliceRandom;
use rand::SeedableRng;
use rand_chacha::ChaCha8Rng;
use thiserror::Error;

use super::buckets::{ErrorBuckets, ErrorContext, ErrorKind, ErrorRecord};
use super::config::{FuzzConfig, TrainSchedule};
use super::metrics::{pass_rate, ClassCounts, RunMetrics};
use super::trainer::{TrainJob, TrainOutcome, Trainer};
use crate::checker::{datadriven_check, CheckReport, UseAfterFreeChecker};
use crate::collection::{AdmissionStep, CollectionStore};
use crate::generator::{extract_producer_ids, render_step, ObjectIdPool, PooledId, RenderContext};
use crate::grammar::CompiledGrammar;
use crate::http::{ReadyRequest, ResponseClass, ResponseRecord, Target};
use crate::model::SnapshotHandle;
use crate::replay::{capture, ExecutedStep};
use crate::sequence::{classify_extension, extend, select_seed, BfsFrontier, ExtensionOutcome, SequenceTemplate};

#[derive(Debug, Error)]
pub enum FuzzError {
    #[error("target unreachable: {0}")]
    TargetUnreachable(String),
    #[error("cannot write report: {0}")]
    Report(#[from] io::Error),
}

/// Counts every response that passes through it.
struct Meter<T> {
    target: T,
    counts: ClassCounts,
    successes: BTreeSet<String>,
}

impl<T: Target> Target for Meter<T> {
    fn send(&mut self, request: &ReadyRequest) -> ResponseRecord {
        let response = self.target.send(request);
        self.counts.add(response.class);
        if response.class == ResponseClass::Pass2xx {
            self.successes.insert(request.template_id.clone());
        }
        response
    }
}

impl<T> Meter<T> {
    fn sent(&self) -> u64 {
        self.counts.total()
    }
}

#[derive(Debug)]
pub struct FuzzOutcome {
    pub metrics: RunMetrics,
    pub errors: Vec<ErrorRecord>,
    pub store: CollectionStore,
    pub training: Vec<TrainOutcome>,
    /// Executed candidates in order; filled only when tracing is on.
    pub trace: Vec<TraceEntry>,
}

#[derive(Debug, Clone, PartialEq, Eq)]
pub struct TraceEntry {
    pub candidate: SequenceTemplate,
    pub classes: Vec<ResponseClass>,
    pub outcome: ExtensionOutcome,
}

/// Independent random streams so that toggling one feature does not shift
/// the draws of another.
struct Streams {
    sequence: ChaCha8Rng,
    render: ChaCha8Rng,
    checker: ChaCha8Rng,
}

impl Streams {
    fn new(seed: u64) -> Self {
        let stream = |n| {
            let mut r = ChaCha8Rng::seed_from_u64(seed);
            r.set_stream(n);
            r
        };
        Self {
            sequence: stream(1),
            render: stream(2),
            checker: stream(3),
        }
    }
}

fn train_seed(seed: u64, iteration: u64) -> u64 {
    seed ^ 0x9E37_79B9_7F4A_7C15u64.wrapping_mul(iteration + 1)
}

struct Executed {
    steps: Vec<ExecutedStep>,
    aborted: bool,
}

pub struct Fuzzer<T: Target> {
    grammar: Arc<CompiledGrammar>,
    config: FuzzConfig,
    meter: Meter<T>,
    store: CollectionStore,
    buckets: ErrorBuckets,
    snapshot: Arc<SnapshotHandle>,
    trainer: Option<Trainer>,
    frontier: BfsFrontier,
    pending: VecDeque<SequenceTemplate>,
    rng: Streams,
    uaf: UseAfterFreeChecker,
    metrics: RunMetrics,
    training: Vec<TrainOutcome>,
    trace: Vec<TraceEntry>,
    first_training: Option<ClassCounts>,
    train_round: u64,
}

impl<T: Target> Fuzzer<T> {
    pub fn new(grammar: CompiledGrammar, target: T, config: FuzzConfig) -> Self {
        let grammar = Arc::new(grammar);
        let snapshot = Arc::new(SnapshotHandle::new());
        let trainer = config.mode.uses_model().then(|| {
            let weights = config
                .dump_weights
                .then(|| config.report_dir.as_ref().map(|d| d.join("weights")))
                .flatten();
            Trainer::spawn(
                Arc::clone(&grammar),
                Arc::clone(&snapshot),
                config.model.clone(),
                weights,
            )
        });
        Self {
            uaf: UseAfterFreeChecker::new(&grammar),
            buckets: ErrorBuckets::new(config.report_dir.as_deref()),
            rng: Streams::new(config.seed),
            metrics: RunMetrics {
                mode: Some(config.mode),
                seed: config.seed,
                ..RunMetrics::default()
            },
            grammar,
            meter: Meter {
                target,
                counts: ClassCounts::default(),
                successes: BTreeSet::new(),
            },
            store: CollectionStore::new(),
            snapshot,
            trainer,
            frontier: BfsFrontier::new(),
            pending: VecDeque::new(),
            training: Vec::new(),
            trace: Vec::new(),
            first_training: None,
            train_round: 0,
            config,
        }
    }

    fn remaining(&self) -> u64 {
        self.config
            .max_requests
            .map_or(u64::MAX, |m| m.saturating_sub(self.meter.sent()))
    }

    fn next_candidate(&mut self) -> Option<SequenceTemplate> {
        let max_len = self.config.max_sequence_length;
        if self.config.mode.weighted_selection() {
            let mut seeds = vec![SequenceTemplate::empty()];
            seeds.extend(
                self.store
                    .seeds()
                    .iter()
                    .filter(|s| s.length < max_len)
                    .map(|s| SequenceTemplate::new(s.template_ids.iter().cloned())),
            );
            let idx = select_seed(&seeds, &mut self.rng.sequence).ok()?;
            let candidates = extend(&seeds[idx], &self.grammar, max_len);
            return candidates.choose(&mut self.rng.sequence).cloned();
        }
        loop {
            if let Some(c) = self.pending.pop_front() {
                return Some(c);
            }
            let seed = self.frontier.next_seed();
            let candidates = extend(&seed, &self.grammar, max_len);
            if candidates.is_empty() && seed.is_empty() {
                return None;
            }
            self.pending.extend(candidates);
        }
    }

    fn execute(&mut self, candidate: &SequenceTemplate) -> Executed {
        let snapshot = self.snapshot.load();
        let ctx = RenderContext {
            rendering: self.config.mode.rendering(),
            lists: &snapshot.lists,
            store: &self.store,
        };
        let mut pool = ObjectIdPool::new();
        let mut steps = Vec::with_capacity(candidate.len());
        let n = candidate.len();
        for (position, id) in candidate.template_ids.iter().enumerate() {
            let template = &self.grammar.templates[id];
            let rendered = match render_step(&ctx, template, position, n, &pool, &mut self.rng.render) {
                Ok(r) => r,
                Err(e) => {
                    log::debug!("sequence aborted at {position}: {e}");
                    return Executed { steps, aborted: true };
                }
            };
            let response = self.meter.send(&rendered.request);
            if response.class == ResponseClass::Pass2xx {
                for (ty, value) in extract_producer_ids(template, &response.body) {
                    pool.add(
                        &ty,
                        PooledId {
                            id: value,
                            template_id: id.clone(),
                            position,
                        },
                    );
                }
            }
            steps.push(ExecutedStep { rendered, response });
        }
        Executed { steps, aborted: false }
    }

    fn file_check(&mut self, report: CheckReport) -> Result<(), FuzzError> {
        self.metrics.checker_requests += report.responses.len() as u64;
        if let Some(v) = report.violation() {
            self.buckets.record(
                v.kind.into(),
                &v.steps,
                v.response.status,
                &v.response.body,
                self.metrics.iterations,
                ErrorContext {
                    injected: v.injected.clone(),
                    deleted_id: v.deleted_id.clone(),
                },
            )?;
        }
        Ok(())
    }

    fn iterate(&mut self, candidate: SequenceTemplate) -> Result<(), FuzzError> {
        self.metrics.iterations += 1;
        let iteration = self.metrics.iterations;
        let executed = self.execute(&candidate);
        let steps = &executed.steps;
        *self.metrics.length_histogram.entry(steps.len()).or_insert(0) += 1;

        for (i, step) in steps.iter().enumerate() {
            let template = &self.grammar.templates[&step.rendered.request.template_id];
            self.store
                .record_request_outcome(template, &step.rendered.values, step.response.class, iteration);
            if step.response.class == ResponseClass::Error5xx {
                let replay = capture(&self.grammar, &steps[..=i]);
                self.buckets.record(
                    ErrorKind::Response5xx,
                    &replay,
                    step.response.status,
                    &step.response.body,
                    iteration,
                    ErrorContext::default(),
                )?;
            }
        }

        let classes: Vec<ResponseClass> = steps.iter().map(|s| s.response.class).collect();
        let outcome = if executed.aborted {
            ExtensionOutcome::Failed
        } else {
            let admission: Vec<AdmissionStep> = steps
                .iter()
                .map(|s| AdmissionStep {
                    template_id: s.rendered.request.template_id.clone(),
                    class: s.response.class,
                    id_sources: s.rendered.bindings.iter().map(|b| b.source).collect(),
                })
                .collect();
            self.store.admit_sequence(&admission, iteration);
            classify_extension(&classes)
        };
        if !self.config.mode.weighted_selection() {
            self.frontier.report(candidate.clone(), outcome);
        }

        if self.config.enable_datadriven_checker
            && !executed.aborted
            && classes.last() == Some(&ResponseClass::Pass2xx)
            && self.remaining() >= steps.len() as u64
        {
            let replay = capture(&self.grammar, steps);
            let report = datadriven_check(
                &replay,
                &self.grammar,
                &self.store,
                &mut self.rng.checker,
                &mut self.meter,
            );
            self.file_check(report)?;
        }
        if self.config.enable_uaf_checker && self.remaining() >= 3 {
            let report = self.uaf.check(&self.grammar, &mut self.meter);
            self.file_check(report)?;
        }
        if self.config.trace {
            self.trace.push(TraceEntry {
                candidate,
                classes,
                outcome,
            });
        }
        Ok(())
    }

    fn mark_first_training(&mut self) {
        if self.first_training.is_none() {
            self.first_training = Some(self.meter.counts);
            self.metrics.first_training_request = Some(self.meter.sent());
        }
    }

    fn submit_training(&mut self) -> bool {
        let Some(trainer) = self.trainer.as_mut() else {
            return false;
        };
        let corpus = self.store.training_corpus(0);
        if corpus.is_empty() {
            return false;
        }
        self.train_round += 1;
        trainer.submit(TrainJob {
            iteration: self.train_round,
            corpus,
            seed: train_seed(self.config.seed, self.train_round),
        });
        true
    }

    fn absorb(&mut self, outcome: TrainOutcome) {
        if let Some(e) = &outcome.error {
            log::warn!("training iteration {} failed: {e}", outcome.iteration);
        } else {
            log::info!(
                "training iteration {}: {} examples, val acc {:?}, {} lists published",
                outcome.iteration,
                outcome.examples,
                outcome.validation_accuracy,
                outcome.published_lists
            );
            self.metrics.training_iterations += 1;
        }
        self.training.push(outcome);
    }

    /// Runs until a budget is exhausted or no candidate can be built.
    pub fn run(mut self) -> Result<FuzzOutcome, FuzzError> {
        let started = Instant::now();
        let mut next_by_requests = match self.config.train_schedule {
            TrainSchedule::EveryRequests(n) => Some(n.max(1)),
            TrainSchedule::Interval(_) => None,
        };
        let mut next_by_time = match self.config.train_schedule {
            TrainSchedule::Interval(d) => Some(started + d),
            TrainSchedule::EveryRequests(_) => None,
        };

        loop {
            if self.remaining() == 0 || self.config.duration.is_some_and(|d| started.elapsed() >= d) {
                break;
            }
            if let (Some(at), TrainSchedule::EveryRequests(n)) = (next_by_requests, self.config.train_schedule) {
                if self.meter.sent() >= at {
                    self.mark_first_training();
                    if self.submit_training() {
                        if let Some(o) = self.trainer.as_mut().and_then(Trainer::wait) {
                            self.absorb(o);
                        }
                    }
                    let n = n.max(1);
                    next_by_requests = Some(self.meter.sent() / n * n + n);
                }
            }
            if let Some(at) = next_by_time {
                if Instant::now() >= at {
                    self.mark_first_training();
                    if !self.trainer.as_ref().is_some_and(Trainer::is_busy) {
                        self.submit_training();
                    }
                    if let TrainSchedule::Interval(d) = self.config.train_schedule {
                        next_by_time = Some(Instant::now() + d);
                    }
                }
            }
            if let Some(o) = self.trainer.as_mut().and_then(Trainer::poll) {
                self.absorb(o);
            }

            let Some(candidate) = self.next_candidate() else { break };
            if self.remaining() < candidate.len() as u64 {
                break;
            }
            self.iterate(candidate)?;
        }

        if let Some(o) = self.trainer.as_mut().and_then(Trainer::wait) {
            self.absorb(o);
        }
        self.finish(started)
    }

    fn finish(mut self, started: Instant) -> Result<FuzzOutcome, FuzzError> {
        let m = &mut self.metrics;
        m.counts = self.meter.counts;
        m.requests = self.meter.sent();
        m.pass_rate = pass_rate(&m.counts).ok();
        m.successful_templates = std::mem::take(&mut self.meter.successes);
        m.unique_request_templates = m.successful_templates.len();
        m.unique_errors = self.buckets.len();
        m.seeds = self.store.seeds().len();
        if let Some(before) = &self.first_training {
            m.counts_after_first_training = m.counts.since(before);
            m.pass_rate_after_first_training = pass_rate(&m.counts_after_first_training).ok();
        }
        m.wall_time_secs = started.elapsed().as_secs_f64();

        let errors = std::mem::take(&mut self.buckets).into_records();
        if let Some(dir) = &self.config.report_dir {
            write_report(dir, &self.metrics, &errors, &self.training)?;
            if self.config.write_collection {
                let out = io::BufWriter::new(fs::File::create(dir.join("collection.jsonl"))?);
                self.store.write_jsonl(out)?;
            }
        }
        Ok(FuzzOutcome {
            metrics: self.metrics,
            errors,
            store: self.store,
            training: self.training,
            trace: self.trace,
        })
    }
}

fn write_report(dir: &Path, metrics: &RunMetrics, errors: &[ErrorRecord], training: &[TrainOutcome]) -> io::Result<()> {
    fs::create_dir_all(dir)?;
    fs::write(dir.join("metrics.json"), serde_json::to_string_pretty(metrics)? + "\n")?;
    let mut out = io::BufWriter::new(fs::File::create(dir.join("errors.jsonl"))?);
    for e in errors {
        serde_json::to_writer(&mut out, e)?;
        out.write_all(b"\n")?;
    }
    out.flush()?;
    fs::write(dir.join("lengths.csv"), metrics.lengths_csv())?;
    let mut log = String::new();
    for t in training {
        for line in t.log_lines() {
            log.push_str(&line);
            log.push('\n');
        }
    }
    fs::write(dir.join("training.log"), log)
}

/// Convenience wrapper around [`Fuzzer`].
pub fn fuzz_loop<T: Target>(grammar: CompiledGrammar, target: T, config: FuzzConfig) -> Result<FuzzOutcome, FuzzError> {
    Fuzzer::new(grammar, target, config).run()
}
