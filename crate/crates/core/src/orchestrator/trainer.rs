use std::path::PathBuf;
use std::sync::mpsc::{self, Receiver, Sender, TryRecvError};
use std::sync::Arc;
use std::thread::JoinHandle;
use std::time::Duration;

use rand::SeedableRng;
use rand_chacha::ChaCha8Rng;

use crate::collection::ParamValuePair;
use crate::grammar::CompiledGrammar;
use crate::model::{train_and_generate, EpochLog, ModelConfig, SnapshotHandle};

pub struct TrainJob {
    pub iteration: u64,
    pub corpus: Vec<(String, Vec<ParamValuePair>)>,
    pub seed: u64,
}

#[derive(Debug, Clone)]
pub struct TrainOutcome {
    pub iteration: u64,
    pub examples: usize,
    pub epochs: Vec<EpochLog>,
    pub validation_accuracy: Option<f64>,
    pub published_lists: usize,
    pub wall_time: Duration,
    pub error: Option<String>,
}

impl TrainOutcome {
    /// One line per epoch for the training log.
    pub fn log_lines(&self) -> Vec<String> {
        if let Some(e) = &self.error {
            return vec![format!("iteration={} error={e}", self.iteration)];
        }
        self.epochs
            .iter()
            .map(|e| {
                format!(
                    "iteration={} epoch={} loss={:.6} val_acc={} wall_ms={}",
                    self.iteration,
                    e.epoch,
                    e.loss,
                    e.validation_accuracy
                        .map(|a| format!("{a:.4}"))
                        .unwrap_or_else(|| "n/a".into()),
                    e.elapsed.as_millis()
                )
            })
            .collect()
    }
}

/// Background worker owning the model weights. Each job trains a fresh model
/// and publishes its lists into the shared snapshot.
pub struct Trainer {
    jobs: Option<Sender<TrainJob>>,
    results: Receiver<TrainOutcome>,
    worker: Option<JoinHandle<()>>,
    busy: bool,
}

impl Trainer {
    pub fn spawn(
        grammar: Arc<CompiledGrammar>,
        snapshot: Arc<SnapshotHandle>,
        config: ModelConfig,
        weights_dir: Option<PathBuf>,
    ) -> Self {
        let (job_tx, job_rx) = mpsc::channel::<TrainJob>();
        let (res_tx, res_rx) = mpsc::channel();
        let worker = std::thread::Builder::new()
            .name("trainer".into())
            .spawn(move || {
                for job in job_rx {
                    let outcome = run_job(&job, &grammar, &snapshot, &config, weights_dir.as_deref());
                    if res_tx.send(outcome).is_err() {
                        break;
                    }
                }
            })
            .expect("spawn trainer thread");
        Self {
            jobs: Some(job_tx),
            results: res_rx,
            worker: Some(worker),
            busy: false,
        }
    }

    pub fn is_busy(&self) -> bool {
        self.busy
    }

    pub fn submit(&mut self, job: TrainJob) {
        if let Some(tx) = &self.jobs {
            if tx.send(job).is_ok() {
                self.busy = true;
            }
        }
    }

    /// A finished job, if any, without blocking.
    pub fn poll(&mut self) -> Option<TrainOutcome> {
        match self.results.try_recv() {
            Ok(o) => {
                self.busy = false;
                Some(o)
            }
            Err(TryRecvError::Empty) | Err(TryRecvError::Disconnected) => None,
        }
    }

    /// Waits for the running job.
    pub fn wait(&mut self) -> Option<TrainOutcome> {
        if !self.busy {
            return None;
        }
        let o = self.results.recv().ok();
        self.busy = false;
        o
    }
}

impl Drop for Trainer {
    fn drop(&mut self) {
        self.jobs.take();
        if let Some(w) = self.worker.take() {
            let _ = w.join();
        }
    }
}

fn run_job(
    job: &TrainJob,
    grammar: &CompiledGrammar,
    snapshot: &SnapshotHandle,
    config: &ModelConfig,
    weights_dir: Option<&std::path::Path>,
) -> TrainOutcome {
    let mut rng = ChaCha8Rng::seed_from_u64(job.seed);
    let mut outcome = TrainOutcome {
        iteration: job.iteration,
        examples: job.corpus.len(),
        epochs: Vec::new(),
        validation_accuracy: None,
        published_lists: 0,
        wall_time: Duration::ZERO,
        error: None,
    };
    let iteration = match train_and_generate(&job.corpus, config, &mut rng, |_| {}) {
        Ok(it) => it,
        Err(e) => {
            outcome.error = Some(e.to_string());
            return outcome;
        }
    };
    outcome.epochs = iteration.model.epochs.clone();
    outcome.validation_accuracy = iteration.model.validation_accuracy;
    outcome.wall_time = iteration.model.wall_time;
    if let Some(dir) = weights_dir {
        let mut params = iteration.model.params.clone();
        params.version = job.iteration;
        if let Err(e) = params.dump(dir, &format!("iteration-{:04}", job.iteration)) {
            log::warn!("weight dump failed: {e}");
        }
    }
    match snapshot.publish(&iteration.lists, grammar, config.snapshot_cap) {
        Ok(snap) => outcome.published_lists = snap.total(),
        Err(e) => outcome.error = Some(e.to_string()),
    }
    outcome
}
