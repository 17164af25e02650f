use std::fs;
use std::io::{self, Write};
use std::path::PathBuf;
use std::process::ExitCode;
use std::time::Duration;

use anyhow::{bail, Context, Result};
use clap::{ArgGroup, Parser, Subcommand};
use log::info;

use restminer::grammar::{parse_spec, CompiledGrammar};
use restminer::http::HttpTarget;
use restminer::mock::{self, BugConfig};
use restminer::orchestrator::{fuzz_loop, FuzzConfig, FuzzError, Mode, TrainSchedule};
use restminer::replay;

#[derive(Parser)]
#[command(name = "restminer", version, about = "Stateful REST API fuzzer")]
struct Cli {
    #[command(subcommand)]
    command: Command,
}

#[derive(Subcommand)]
enum Command {
    /// Fuzz a live service described by a grammar file.
    #[command(group(ArgGroup::new("budget").required(true).multiple(true).args(["duration", "max_requests"])))]
    Fuzz(FuzzArgs),
    /// Re-send a stored error sequence and compare response classes.
    Replay {
        #[arg(long)]
        file: PathBuf,
        #[arg(long)]
        target: String,
        #[arg(long, env = "RESTMINER_TOKEN")]
        token: Option<String>,
    },
    /// Run the bundled mock service.
    Serve {
        #[arg(long, default_value_t = 8080)]
        port: u16,
        /// Comma-separated bugs to arm, e.g. b-uaf,b-undef,b-perpage,b-parentid.
        #[arg(long, default_value = "")]
        bugs: String,
        #[arg(long, default_value_t = 0)]
        seed: u64,
    },
    /// Print the compiled grammar as JSON; without --spec, the mock service's grammar.
    Grammar {
        #[arg(long)]
        spec: Option<PathBuf>,
    },
}

#[derive(clap::Args)]
struct FuzzArgs {
    #[arg(long)]
    spec: PathBuf,
    #[arg(long)]
    target: String,
    #[arg(long, default_value = "miner")]
    mode: Mode,
    /// Wall-clock budget in seconds.
    #[arg(long)]
    duration: Option<u64>,
    #[arg(long)]
    max_requests: Option<u64>,
    #[arg(long, default_value_t = 0)]
    seed: u64,
    /// Retrain in the background every this many seconds.
    #[arg(long, default_value_t = 7200, conflicts_with = "train_every")]
    train_interval: u64,
    /// Retrain after every this many requests and wait for it (reproducible runs).
    #[arg(long)]
    train_every: Option<u64>,
    #[arg(long)]
    enable_uaf_checker: bool,
    #[arg(long)]
    enable_datadriven_checker: bool,
    #[arg(long, default_value_t = 10)]
    max_sequence_length: usize,
    #[arg(long, default_value = "restminer-report")]
    report_dir: PathBuf,
    /// Bearer token sent with every request; never written to reports.
    #[arg(long, env = "RESTMINER_TOKEN")]
    token: Option<String>,
    /// Save model weights after each training iteration.
    #[arg(long)]
    dump_weights: bool,
    /// Write the collection store to collection.jsonl.
    #[arg(long)]
    write_collection: bool,
}

fn load_grammar(path: &PathBuf) -> Result<CompiledGrammar> {
    let bytes = fs::read(path).with_context(|| format!("reading {}", path.display()))?;
    parse_spec(&bytes).with_context(|| format!("compiling {}", path.display()))
}

fn fuzz(args: FuzzArgs) -> Result<ExitCode> {
    let grammar = load_grammar(&args.spec)?;
    let target = HttpTarget::new(&args.target).with_token(args.token);
    target
        .probe()
        .map_err(|e| FuzzError::TargetUnreachable(format!("{}: {e}", args.target)))?;

    let config = FuzzConfig {
        mode: args.mode,
        seed: args.seed,
        max_requests: args.max_requests,
        duration: args.duration.map(Duration::from_secs),
        train_schedule: match args.train_every {
            Some(n) => TrainSchedule::EveryRequests(n),
            None => TrainSchedule::Interval(Duration::from_secs(args.train_interval)),
        },
        enable_uaf_checker: args.enable_uaf_checker,
        enable_datadriven_checker: args.enable_datadriven_checker,
        max_sequence_length: args.max_sequence_length,
        report_dir: Some(args.report_dir.clone()),
        dump_weights: args.dump_weights,
        write_collection: args.write_collection,
        ..FuzzConfig::default()
    };
    info!("fuzzing {} in {} mode, seed {}", args.target, config.mode, config.seed);
    let outcome = fuzz_loop(grammar, target, config)?;
    let m = &outcome.metrics;
    let mut out = io::stdout().lock();
    writeln!(out, "requests: {} ({} from checkers)", m.requests, m.checker_requests)?;
    match m.pass_rate {
        Some(p) => writeln!(out, "pass rate: {:.4}", p)?,
        None => writeln!(out, "pass rate: n/a")?,
    }
    writeln!(out, "unique request templates: {}", m.unique_request_templates)?;
    writeln!(out, "unique errors: {}", m.unique_errors)?;
    for e in &outcome.errors {
        writeln!(out, "  {} {} {:?}", e.bucket_id, e.key.template_id, e.key.status)?;
    }
    writeln!(out, "report: {}", args.report_dir.display())?;
    Ok(ExitCode::SUCCESS)
}

fn replay_file(file: PathBuf, target: String, token: Option<String>) -> Result<ExitCode> {
    let steps = replay::read_file(&file)?;
    let mut client = HttpTarget::new(&target).with_token(token);
    client
        .probe()
        .map_err(|e| FuzzError::TargetUnreachable(format!("{target}: {e}")))?;
    let responses = replay::resend(&steps, &mut client);
    let mut out = io::stdout().lock();
    let mut same = true;
    for (i, (step, resp)) in steps.iter().zip(&responses).enumerate() {
        let status = resp.status.map_or_else(|| "-".to_string(), |s| s.to_string());
        let verdict = if resp.class == step.expected_class {
            "ok"
        } else {
            "MISMATCH"
        };
        same &= resp.class == step.expected_class;
        writeln!(
            out,
            "{i}\t{}\t{status}\t{:?}\texpected {:?}\t{verdict}",
            step.template_id, resp.class, step.expected_class
        )?;
    }
    writeln!(out, "{}", if same { "reproduced" } else { "diverged" })?;
    Ok(if same { ExitCode::SUCCESS } else { ExitCode::from(2) })
}

fn serve(port: u16, bugs: &str, seed: u64) -> Result<ExitCode> {
    let armed = BugConfig::parse_list(bugs)?;
    let server = mock::serve(port, BugConfig { armed, seed })?;
    println!("listening on {}", server.base_url());
    io::stdout().flush()?;
    server.join();
    Ok(ExitCode::SUCCESS)
}

fn main() -> ExitCode {
    env_logger::Builder::from_env(env_logger::Env::default().default_filter_or("warn")).init();
    let cli = Cli::parse();
    let result = match cli.command {
        Command::Fuzz(args) => fuzz(args),
        Command::Replay { file, target, token } => replay_file(file, target, token),
        Command::Serve { port, bugs, seed } => serve(port, &bugs, seed),
        Command::Grammar { spec } => (|| {
            let grammar = match spec {
                Some(p) => load_grammar(&p)?,
                None => parse_spec(mock::GRAMMAR.as_bytes())?,
            };
            if grammar.templates.is_empty() {
                bail!("grammar has no request templates");
            }
            println!("{}", serde_json::to_string_pretty(&grammar.to_document())?);
            Ok(ExitCode::SUCCESS)
        })(),
    };
    match result {
        Ok(code) => code,
        Err(e) => {
            eprintln!("error: {e:#}");
            ExitCode::FAILURE
        }
    }
}
