//! `qarrow <subcommand> --config FILE [--set key=value]...`
//!
//! Runs one experiment per invocation and writes its outputs plus a run
//! manifest into the configured output directory. `qarrow validate` checks a
//! configuration without running anything. Exit codes: 0 success, 1
//! validation error, 2 numerical failure, 3 certification-check failure.
//! `QARROW_THREADS` caps the worker pool for ensemble parallelism.

mod config;
mod experiments;
mod hamiltonian;
mod manifest;

use std::process::ExitCode;

use config::{Experiment, KeyValues, Severity};
use manifest::{OutputDir, RunManifest};

const USAGE: &str = "usage: qarrow <experiment|validate> [--config FILE] [--set key=value]...
experiments: simulate arrow-scan girsanov-check frechet-cert kahler-cert flows-cert train-score eval-score reversal-demo";

fn numerical_failure(err: &qarrow::Error) -> bool {
    use qarrow::Error::*;
    match err {
        IntegrationFailure { .. }
        | NonFiniteState { .. }
        | TrainingDiverged { .. }
        | PsdViolation { .. }
        | ExpectationOutOfRange { .. } => true,
        TrajectoryFailure { source, .. } => numerical_failure(source),
        _ => false,
    }
}

fn main() -> ExitCode {
    let args: Vec<String> = std::env::args().skip(1).collect();
    if args.is_empty() {
        eprintln!("{USAGE}");
        return ExitCode::from(1);
    }

    if let Ok(threads) = std::env::var("QARROW_THREADS") {
        match threads.parse::<usize>() {
            Ok(n) if n > 0 => {
                let _ = rayon::ThreadPoolBuilder::new()
                    .num_threads(n)
                    .build_global();
            }
            _ => {
                eprintln!("QARROW_THREADS must be a positive integer, got `{threads}`");
                return ExitCode::from(1);
            }
        }
    }

    let command = args[0].as_str();
    let mut config_path: Option<String> = None;
    let mut sets: Vec<String> = Vec::new();
    let mut i = 1;
    while i < args.len() {
        match args[i].as_str() {
            "--config" => {
                i += 1;
                if i >= args.len() {
                    eprintln!("--config requires a path");
                    return ExitCode::from(1);
                }
                config_path = Some(args[i].clone());
            }
            "--set" => {
                i += 1;
                if i >= args.len() {
                    eprintln!("--set requires key=value");
                    return ExitCode::from(1);
                }
                sets.push(args[i].clone());
            }
            other => {
                eprintln!("unknown argument `{other}`\n{USAGE}");
                return ExitCode::from(1);
            }
        }
        i += 1;
    }

    let text = match &config_path {
        Some(path) => match std::fs::read_to_string(path) {
            Ok(t) => t,
            Err(e) => {
                eprintln!("cannot read config `{path}`: {e}");
                return ExitCode::from(1);
            }
        },
        None => String::new(),
    };
    let mut kv = match KeyValues::parse(&text) {
        Ok(kv) => kv,
        Err(d) => {
            eprintln!("{}: {d}", config_path.as_deref().unwrap_or("<config>"));
            return ExitCode::from(1);
        }
    };
    for s in &sets {
        if let Err(d) = kv.set(s) {
            eprintln!("{d}");
            return ExitCode::from(1);
        }
    }

    if command == "validate" {
        // The experiment slot is irrelevant for validation; accept one from
        // the file or default to simulate.
        let experiment = kv
            .snapshot()
            .get("experiment")
            .and_then(|name| Experiment::parse(name))
            .unwrap_or(Experiment::Simulate);
        let (_, diagnostics) = config::resolve(experiment, kv);
        for d in &diagnostics {
            println!("{d}");
        }
        let errors = diagnostics
            .iter()
            .filter(|d| d.severity == Severity::Error)
            .count();
        println!("{} diagnostic(s), {errors} error(s)", diagnostics.len());
        return if errors > 0 {
            ExitCode::from(1)
        } else {
            ExitCode::SUCCESS
        };
    }

    let experiment = match Experiment::parse(command) {
        Some(e) => e,
        None => {
            eprintln!("unknown subcommand `{command}`\n{USAGE}");
            return ExitCode::from(1);
        }
    };

    let (resolved, diagnostics) = config::resolve(experiment, kv);
    for d in &diagnostics {
        eprintln!("{d}");
    }
    let cfg = match resolved {
        Some(cfg) => cfg,
        None => return ExitCode::from(1),
    };

    let mut out = match OutputDir::new(&cfg.output_dir) {
        Ok(o) => o,
        Err(e) => {
            eprintln!("cannot create output dir `{}`: {e}", cfg.output_dir);
            return ExitCode::from(1);
        }
    };
    let mut manifest =
        RunManifest::new(experiment.name(), cfg.trajectory.seed, cfg.snapshot.clone());
    manifest.warnings = diagnostics
        .iter()
        .filter(|d| d.severity == Severity::Warning)
        .map(|d| d.message.clone())
        .collect();
    if let Err(e) = manifest.write(out.path()) {
        eprintln!("cannot write manifest: {e}");
        return ExitCode::from(1);
    }

    match experiments::run(&cfg, &mut out) {
        Ok(outcome) => {
            for line in &outcome.summary {
                println!("{line}");
            }
            for w in &outcome.warnings {
                eprintln!("warning: {w}");
            }
            manifest.warnings.extend(outcome.warnings.clone());
            if let Err(e) = manifest.finalize(out.path(), out.files()) {
                eprintln!("cannot finalize manifest: {e}");
                return ExitCode::from(1);
            }
            match outcome.checks_passed {
                Some(false) => {
                    eprintln!("certification checks failed");
                    ExitCode::from(3)
                }
                _ => ExitCode::SUCCESS,
            }
        }
        Err(err) => {
            eprintln!("error: {err}");
            if numerical_failure(&err) {
                ExitCode::from(2)
            } else {
                ExitCode::from(1)
            }
        }
    }
}
