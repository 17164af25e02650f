use std::time::Duration;

use proptest::prelude::*;
use restminer::grammar::{parse_spec, CompiledGrammar};
use restminer::http::{ReadyRequest, ResponseClass, ResponseRecord, Target};
use restminer::mock::{Bug, BugConfig, MockService, GRAMMAR};
use restminer::model::ModelConfig;
use restminer::orchestrator::{fuzz_loop, FuzzConfig, Mode, TrainSchedule};
use restminer::replay;

fn grammar() -> CompiledGrammar {
    parse_spec(GRAMMAR.as_bytes()).unwrap()
}

/// Cheap model so tests that train stay fast.
fn small_model() -> ModelConfig {
    ModelConfig {
        epochs: 3,
        lists_per_template: 8,
        ..ModelConfig::default()
    }
}

fn config(mode: Mode, seed: u64, budget: u64) -> FuzzConfig {
    FuzzConfig {
        mode,
        seed,
        max_requests: Some(budget),
        train_schedule: TrainSchedule::EveryRequests(400),
        model: small_model(),
        ..FuzzConfig::default()
    }
}

/// Accepts everything and hands out fresh ids.
struct AlwaysOk {
    next: u64,
}

impl Target for AlwaysOk {
    fn send(&mut self, _: &ReadyRequest) -> ResponseRecord {
        self.next += 1;
        ResponseRecord::from_status(200, format!("{{\"id\":{}}}", self.next), Duration::ZERO)
    }
}

/// Counts what actually reaches the service.
struct Counting<'a> {
    inner: &'a mut MockService,
    sent: u64,
}

impl Target for Counting<'_> {
    fn send(&mut self, request: &ReadyRequest) -> ResponseRecord {
        self.sent += 1;
        self.inner.send(request)
    }
}

#[test]
fn zero_budget_sends_nothing() {
    let mut svc = MockService::new(BugConfig::all());
    let out = fuzz_loop(grammar(), &mut svc, config(Mode::Miner, 0, 0)).unwrap();
    assert_eq!(out.metrics.requests, 0);
    assert_eq!(out.metrics.counts.total(), 0);
    assert_eq!(out.metrics.pass_rate, None);
    assert!(out.errors.is_empty());
    assert!(svc.coverage().is_empty());
}

#[test]
fn every_request_is_accounted_for() {
    for mode in [Mode::Baseline, Mode::Miner] {
        let mut svc = MockService::new(BugConfig::all());
        let cfg = FuzzConfig {
            enable_uaf_checker: true,
            enable_datadriven_checker: true,
            ..config(mode, 3, 1500)
        };
        let mut counting = Counting {
            inner: &mut svc,
            sent: 0,
        };
        let out = fuzz_loop(grammar(), &mut counting, cfg).unwrap();
        let m = &out.metrics;
        let served = counting.sent;
        assert!(m.requests <= 1500);
        assert_eq!(m.counts.total(), m.requests, "{mode}");
        assert_eq!(served, m.requests, "{mode}: service saw a different number");
        let in_sequences: u64 = m.length_histogram.iter().map(|(l, c)| *l as u64 * c).sum();
        assert_eq!(in_sequences + m.checker_requests, m.requests, "{mode}");
        assert_eq!(m.length_histogram.values().sum::<u64>(), m.iterations, "{mode}");
        assert!(m.checker_requests > 0, "{mode}: checkers never ran");
    }
}

#[test]
fn ablations_share_the_sequence_stream() {
    // With every request accepted, value choices cannot influence which
    // sequences are explored, so modes differing only in rendering agree.
    let run = |mode| {
        let cfg = FuzzConfig {
            trace: true,
            ..config(mode, 11, 1200)
        };
        let out = fuzz_loop(grammar(), AlwaysOk { next: 0 }, cfg).unwrap();
        out.trace.into_iter().map(|t| t.candidate).collect::<Vec<_>>()
    };
    let miner = run(Mode::Miner);
    assert!(miner.len() > 50);
    for mode in [Mode::SeqOnly, Mode::Rec1, Mode::RecList] {
        assert_eq!(run(mode), miner, "{mode} diverged from miner");
    }
    let baseline = run(Mode::Baseline);
    assert_eq!(run(Mode::ModelOnly), baseline);
    assert_ne!(baseline, miner);
}

#[test]
fn same_seed_same_run() {
    let run = || {
        let mut svc = MockService::new(BugConfig::all());
        let cfg = FuzzConfig {
            enable_datadriven_checker: true,
            enable_uaf_checker: true,
            trace: true,
            ..config(Mode::Miner, 5, 2000)
        };
        let out = fuzz_loop(grammar(), &mut svc, cfg).unwrap();
        let ids: Vec<_> = out.errors.iter().map(|e| e.bucket_id.clone()).collect();
        (
            out.trace
                .into_iter()
                .map(|t| (t.candidate, t.classes))
                .collect::<Vec<_>>(),
            ids,
            svc.coverage().clone(),
        )
    };
    assert_eq!(run(), run());
}

#[test]
fn disarmed_service_yields_no_errors() {
    for mode in [Mode::Baseline, Mode::Miner] {
        let mut svc = MockService::new(BugConfig::none());
        let cfg = FuzzConfig {
            enable_uaf_checker: true,
            enable_datadriven_checker: true,
            ..config(mode, 1, 10_000)
        };
        let out = fuzz_loop(grammar(), &mut svc, cfg).unwrap();
        assert_eq!(out.metrics.counts.error_5xx, 0, "{mode}");
        assert!(out.errors.is_empty(), "{mode}: {:?}", out.errors);
    }
}

fn finds_uaf(max_sequence_length: usize, checker: bool) -> bool {
    let mut svc = MockService::new(BugConfig {
        armed: [Bug::UseAfterFree].into(),
        seed: 0,
    });
    let cfg = FuzzConfig {
        max_sequence_length,
        enable_uaf_checker: checker,
        ..config(Mode::Miner, 2, 6000)
    };
    let out = fuzz_loop(grammar(), &mut svc, cfg).unwrap();
    out.errors.iter().any(|e| e.body.contains("custom_attributes"))
}

#[test]
fn use_after_free_needs_three_requests() {
    assert!(!finds_uaf(2, false));
    assert!(finds_uaf(2, true));
    assert!(finds_uaf(10, false));
}

proptest! {
    #![proptest_config(ProptestConfig::with_cases(6))]

    #[test]
    fn recorded_errors_replay_on_a_fresh_service(seed in 0u64..1000) {
        let bugs = BugConfig::all().with_seed(seed);
        let mut svc = MockService::new(bugs.clone());
        let cfg = FuzzConfig {
            enable_datadriven_checker: true,
            enable_uaf_checker: true,
            ..config(Mode::SeqOnly, seed, 1500)
        };
        let out = fuzz_loop(grammar(), &mut svc, cfg).unwrap();
        prop_assert!(!out.errors.is_empty());
        for record in &out.errors {
            let expected: Vec<ResponseClass> = record.steps.iter().map(|s| s.expected_class).collect();
            prop_assert_eq!(expected.last(), Some(&ResponseClass::Error5xx));
            let mut fresh = MockService::new(bugs.clone());
            let got: Vec<ResponseClass> = replay::resend(&record.steps, &mut fresh).iter().map(|r| r.class).collect();
            prop_assert_eq!(got, expected, "{}", record.bucket_id);
        }
    }
}
