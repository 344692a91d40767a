//! Browser bindings for the demo page under `www/`.
//!
//! Three operations, all taking and returning JSON-friendly strings so the
//! page needs no glue types: run a scripted scenario from config text, train
//! real models on a generated dataset, and re-verify a chain dump. Failures
//! come back as `{"error": "..."}` rather than thrown exceptions, which
//! keeps the page's handling uniform.
//!
//! The crate also builds natively so the bindings stay testable without a
//! browser.

use modelchain_core::harness::{
    run_dataset_rows, run_spec, separable_rows, PartitionSpec, RunArtifacts, ScenarioSpec,
};
use modelchain_core::learning::LearnerParams;
use modelchain_core::protocol::ProtocolConfig;
use modelchain_core::simnet::TraceRecord;
use modelchain_core::Chain;
use serde::Serialize;
use std::path::Path;
use wasm_bindgen::prelude::wasm_bindgen;

#[derive(Serialize)]
struct TxView {
    tick: u64,
    height: u64,
    flag: &'static str,
    from: u32,
    to: u32,
    error: f64,
    model_hash: String,
}

#[derive(Serialize)]
struct UpdateView {
    height: u64,
    site: u32,
    round: u32,
    error: f64,
}

#[derive(Serialize)]
struct RunView {
    stop_reason: &'static str,
    stop_tick: u64,
    iterations: u32,
    chain_length: u64,
    difficulty: u32,
    final_error: f64,
    final_site: u32,
    final_round: u32,
    holdout_error: Option<f64>,
    initialization: Vec<(u32, f64)>,
    updates: Vec<UpdateView>,
    txs: Vec<TxView>,
    chain_jsonl: String,
}

#[derive(Serialize)]
struct ChainView {
    valid: bool,
    blocks: u64,
    difficulty: u32,
    violations: Vec<(u64, String)>,
}

fn error_json(message: impl std::fmt::Display) -> String {
    serde_json::to_string(&serde_json::json!({ "error": message.to_string() }))
        .expect("an error object always serializes")
}

fn run_view(run: &RunArtifacts) -> RunView {
    let txs = run
        .trace
        .iter()
        .filter_map(|record| match record {
            TraceRecord::Tx {
                tick,
                height,
                from,
                to,
                flag,
                error,
                model_hash,
            } => Some(TxView {
                tick: *tick,
                height: *height,
                flag: flag.name(),
                from: from.0,
                to: to.0,
                error: *error,
                model_hash: model_hash.to_hex(),
            }),
            _ => None,
        })
        .collect();
    RunView {
        stop_reason: run.report.stop_reason.name(),
        stop_tick: run.report.stop_tick,
        iterations: run.report.iterations,
        chain_length: run.report.chain_length,
        difficulty: run.report.difficulty,
        final_error: run.report.final_error,
        final_site: run.report.final_site.0,
        final_round: run.report.final_round,
        holdout_error: run.report.holdout_error,
        initialization: run
            .report
            .initialization
            .iter()
            .map(|(site, error)| (site.0, *error))
            .collect(),
        updates: run
            .report
            .updates
            .iter()
            .map(|u| UpdateView {
                height: u.height,
                site: u.site.0,
                round: u.round,
                error: u.error,
            })
            .collect(),
        txs,
        chain_jsonl: run.chain.to_jsonl(),
    }
}

/// Run a scripted scenario from config text and return the full run as JSON.
/// Dataset configs are rejected; the page has no filesystem.
#[wasm_bindgen]
pub fn run_scripted(config: &str) -> String {
    let spec = match ScenarioSpec::from_toml(config, Path::new(".")) {
        Ok(spec) => spec,
        Err(err) => return error_json(err),
    };
    if !spec.mode.is_scripted() {
        return error_json("this page only runs scripted_errors configs");
    }
    match run_spec(&spec) {
        Ok(run) => serde_json::to_string(&run_view(&run)).unwrap_or_else(error_json),
        Err(err) => error_json(err),
    }
}

/// Generate a separable two-feature dataset and run real training across
/// `sites` sites, returning the run as JSON.
#[wasm_bindgen]
pub fn train_demo(rows: u32, sites: u32, seed: u32, learning_rate: f64, epochs: u32) -> String {
    if !(1..=20_000).contains(&rows) {
        return error_json("rows must be between 1 and 20000");
    }
    let protocol = ProtocolConfig {
        n_sites: sites,
        difficulty: 10,
        max_iterations: Some(20),
        ..ProtocolConfig::default()
    };
    let params = LearnerParams {
        learning_rate,
        epochs,
        ..LearnerParams::default()
    };
    if let Err(err) = params.validate() {
        return error_json(err);
    }
    let data = separable_rows(rows as usize, u64::from(seed));
    match run_dataset_rows(
        protocol,
        params,
        data,
        &PartitionSpec::Equal,
        0.2,
        u64::from(seed),
        Vec::new(),
    ) {
        Ok(run) => serde_json::to_string(&run_view(&run)).unwrap_or_else(error_json),
        Err(err) => error_json(err),
    }
}

/// Re-verify a chain dump (as written by a run) and return the verdict as
/// JSON, listing every violation found.
#[wasm_bindgen]
pub fn check_chain(dump: &str) -> String {
    let chain = match Chain::from_jsonl(dump) {
        Ok(chain) => chain,
        Err(err) => {
            return serde_json::to_string(&serde_json::json!({
                "valid": false,
                "blocks": 0,
                "difficulty": 0,
                "violations": [[0, err.to_string()]],
            }))
            .expect("a verdict always serializes");
        }
    };
    let report = chain.verify();
    let view = ChainView {
        valid: report.is_valid(),
        blocks: chain.len(),
        difficulty: chain.difficulty(),
        violations: report
            .violations
            .iter()
            .map(|(height, violation)| (*height, violation.to_string()))
            .collect(),
    };
    serde_json::to_string(&view).unwrap_or_else(error_json)
}

#[cfg(test)]
mod tests {
    use super::*;

    const SCRIPT: &str = "protocol.n_sites = 2\nprotocol.difficulty = 4\nscripted_errors = [[1, 0, 0.4], [2, 0, 0.6], [2, 1, 0.2], [1, 1, 0.1]]\n";

    #[test]
    fn scripted_runs_come_back_as_json() {
        let out: serde_json::Value = serde_json::from_str(&run_scripted(SCRIPT)).unwrap();
        assert_eq!(out["stop_reason"], "CONSENSUS");
        assert_eq!(out["iterations"], 1);
        assert!(out["txs"].as_array().unwrap().len() >= 4);
        assert!(out["chain_jsonl"].as_str().unwrap().contains("block_hash"));
        assert!(out.get("error").is_none());
    }

    #[test]
    fn config_problems_surface_as_error_objects() {
        let out: serde_json::Value = serde_json::from_str(&run_scripted("nope {{{")).unwrap();
        assert!(out["error"].as_str().unwrap().contains("parse"));

        let dataset_config = "protocol.n_sites = 1\nlearner.learning_rate = 0.1\nlearner.epochs = 1\ndataset.path = \"x.csv\"\n";
        let out: serde_json::Value =
            serde_json::from_str(&run_scripted(dataset_config)).unwrap();
        assert!(out["error"].as_str().unwrap().contains("scripted"));
    }

    #[test]
    fn training_demo_reports_a_holdout() {
        let out: serde_json::Value =
            serde_json::from_str(&train_demo(200, 3, 9, 0.5, 2)).unwrap();
        assert!(out.get("error").is_none(), "{out}");
        let holdout = out["holdout_error"].as_f64().unwrap();
        assert!((0.0..=0.1).contains(&holdout));
        assert!(out["iterations"].as_u64().unwrap() >= 1);

        let out: serde_json::Value =
            serde_json::from_str(&train_demo(0, 3, 9, 0.5, 2)).unwrap();
        assert!(out["error"].as_str().unwrap().contains("rows"));
    }

    #[test]
    fn chain_checks_flag_doctored_dumps() {
        let run: serde_json::Value = serde_json::from_str(&run_scripted(SCRIPT)).unwrap();
        let dump = run["chain_jsonl"].as_str().unwrap();

        let verdict: serde_json::Value = serde_json::from_str(&check_chain(dump)).unwrap();
        assert_eq!(verdict["valid"], true);
        assert_eq!(verdict["blocks"].as_u64(), Some(6));

        let doctored = dump.replace("0.4", "0.3");
        let verdict: serde_json::Value = serde_json::from_str(&check_chain(&doctored)).unwrap();
        assert_eq!(verdict["valid"], false);
        assert!(!verdict["violations"].as_array().unwrap().is_empty());

        let verdict: serde_json::Value = serde_json::from_str(&check_chain("junk")).unwrap();
        assert_eq!(verdict["valid"], false);
    }
}
