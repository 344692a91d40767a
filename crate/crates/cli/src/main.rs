//! `modelchain`: run, verify, and report on simulated ModelChain networks.
//!
//! Exit codes are part of the interface:
//!
//! - 0: success
//! - 1: an invalid chain, or artifacts that disagree with each other
//! - 2: unusable input (config, dataset, or artifact files that cannot be
//!   read or parsed, or a scenario that cannot run)
//! - 3: a protocol integrity failure during a run (missing model bytes,
//!   metadata over budget, ledger corruption)

use clap::{Parser, Subcommand};
use modelchain_core::harness::{
    self, audit, render_trace, HarnessError, Report, RunArtifacts,
};
use modelchain_core::learning::LearnError;
use modelchain_core::protocol::ProtocolError;
use modelchain_core::simnet::SimError;
use modelchain_core::Chain;
use std::path::{Path, PathBuf};
use std::process::ExitCode;

#[derive(Parser)]
#[command(name = "modelchain", version, about = "ModelChain protocol simulator")]
struct Cli {
    #[command(subcommand)]
    command: Command,
}

#[derive(Subcommand)]
enum Command {
    /// Run a scenario config to its stopping point and print the summary.
    Run {
        /// Scenario config file.
        #[arg(long)]
        config: PathBuf,
        /// Also write the mined chain to this file as JSONL.
        #[arg(long)]
        chain_out: Option<PathBuf>,
        /// Also write the event trace to this file as JSONL.
        #[arg(long)]
        trace_out: Option<PathBuf>,
    },
    /// Re-verify every block of a persisted chain.
    Verify {
        /// Chain file written by `run --chain-out`.
        #[arg(long)]
        chain: PathBuf,
    },
    /// Rebuild a run summary from persisted artifacts, cross-checking them.
    Report {
        /// Trace file written by `run --trace-out`.
        #[arg(long)]
        trace: PathBuf,
        /// Chain file written by `run --chain-out`.
        #[arg(long)]
        chain: PathBuf,
    },
}

/// A failure destined for stderr, with the process exit code it deserves.
struct Failure {
    code: u8,
    message: String,
}

impl Failure {
    fn new(code: u8, message: impl Into<String>) -> Failure {
        Failure {
            code,
            message: message.into(),
        }
    }
}

fn harness_failure(err: HarnessError) -> Failure {
    let code = match &err {
        HarnessError::Sim(SimError::Protocol(protocol)) => match protocol {
            ProtocolError::MissingModel { .. } | ProtocolError::NoLocalModel(_) => 3,
            ProtocolError::Ledger(_) => 3,
            ProtocolError::Learn(LearnError::OverBudget { .. }) => 3,
            ProtocolError::Learn(_) => 2,
            ProtocolError::Config(_) | ProtocolError::ScriptGap { .. } => 2,
        },
        HarnessError::Sim(SimError::Ledger(_)) => 3,
        HarnessError::Sim(_) => 2,
        HarnessError::Learn(LearnError::OverBudget { .. }) => 3,
        HarnessError::Learn(_) => 3,
        _ => 2,
    };
    Failure::new(code, err.to_string())
}

fn main() -> ExitCode {
    let cli = Cli::parse();
    let result = match cli.command {
        Command::Run {
            config,
            chain_out,
            trace_out,
        } => cmd_run(&config, chain_out.as_deref(), trace_out.as_deref()),
        Command::Verify { chain } => cmd_verify(&chain),
        Command::Report { trace, chain } => cmd_report(&trace, &chain),
    };
    match result {
        Ok(()) => ExitCode::SUCCESS,
        Err(failure) => {
            eprintln!("modelchain: {}", failure.message);
            ExitCode::from(failure.code)
        }
    }
}

fn cmd_run(
    config: &Path,
    chain_out: Option<&Path>,
    trace_out: Option<&Path>,
) -> Result<(), Failure> {
    let RunArtifacts {
        report,
        chain,
        trace,
        ..
    } = harness::run_config_file(config).map_err(harness_failure)?;
    if let Some(path) = chain_out {
        harness::write_atomic(path, &chain.to_jsonl()).map_err(harness_failure)?;
    }
    if let Some(path) = trace_out {
        harness::write_atomic(path, &render_trace(&trace)).map_err(harness_failure)?;
    }
    print!("{}", report.render());
    Ok(())
}

/// Load a chain for inspection. An unreadable file is the caller's mistake;
/// undecodable content is a bad chain.
fn load_chain_for_verify(path: &Path) -> Result<Chain, Failure> {
    let bytes = std::fs::read(path)
        .map_err(|err| Failure::new(2, format!("cannot read {}: {err}", path.display())))?;
    let text = String::from_utf8(bytes).map_err(|_| {
        Failure::new(1, format!("{}: chain file is not text", path.display()))
    })?;
    Chain::from_jsonl(&text)
        .map_err(|err| Failure::new(1, format!("{}: {err}", path.display())))
}

fn cmd_verify(path: &Path) -> Result<(), Failure> {
    let chain = load_chain_for_verify(path)?;
    let report = chain.verify();
    if !report.is_valid() {
        let mut message = String::new();
        for (height, violation) in &report.violations {
            message.push_str(&format!("block {height}: {violation}\n"));
        }
        message.push_str(&format!(
            "{}: {} of {} blocks failed verification",
            path.display(),
            report
                .violations
                .iter()
                .map(|(height, _)| height)
                .collect::<std::collections::BTreeSet<_>>()
                .len(),
            chain.len()
        ));
        return Err(Failure::new(1, message));
    }
    println!(
        "chain ok: {} blocks at difficulty {}",
        chain.len(),
        chain.difficulty()
    );
    Ok(())
}

fn cmd_report(trace_path: &Path, chain_path: &Path) -> Result<(), Failure> {
    let chain = load_chain_for_verify(chain_path)?;
    let verify = chain.verify();
    if !verify.is_valid() {
        let (height, violation) = &verify.violations[0];
        return Err(Failure::new(
            1,
            format!("{}: block {height}: {violation}", chain_path.display()),
        ));
    }
    let trace = harness::load_trace(trace_path).map_err(harness_failure)?;
    let mismatches = audit(&chain, &trace);
    if !mismatches.is_empty() {
        let mut message = String::from("trace and chain disagree:\n");
        for mismatch in &mismatches {
            message.push_str(&format!("  {mismatch}\n"));
        }
        message.pop();
        return Err(Failure::new(1, message));
    }
    let report = Report::from_artifacts(&chain, &trace)
        .map_err(|reason| Failure::new(2, reason))?;
    print!("{}", report.render());
    println!("audit: trace and chain are consistent");
    Ok(())
}
