//! Run summaries and cross-checking of persisted artifacts.
//!
//! A [`Report`] condenses a finished run: how it stopped, the error posted
//! with each published update, and where the model ended up. [`audit`]
//! replays a trace against a chain and lists every disagreement, so a trace
//! file cannot quietly drift from the ledger it claims to describe.

use crate::ledger::{Chain, Flag, SiteId};
use crate::learning::{self, LearnError};
use crate::protocol::StopReason;
use crate::simnet::{RunOutcome, TraceRecord};
use std::fmt::Write as _;

/// One published update, as recorded on the chain.
#[derive(Debug, Clone, Copy, PartialEq)]
pub struct UpdatePoint {
    pub height: u64,
    pub site: SiteId,
    /// The model's training round after this update.
    pub round: u32,
    pub error: f64,
}

/// Summary of a finished run.
#[derive(Debug, Clone, PartialEq)]
pub struct Report {
    pub stop_reason: StopReason,
    pub stop_tick: u64,
    pub iterations: u32,
    pub chain_length: u64,
    pub difficulty: u32,
    /// Errors announced during initialization, in chain order.
    pub initialization: Vec<(SiteId, f64)>,
    /// Every published update, in chain order.
    pub updates: Vec<UpdatePoint>,
    pub final_error: f64,
    pub final_site: SiteId,
    pub final_round: u32,
    /// Final model's error on held-out rows, when the run kept any.
    pub holdout_error: Option<f64>,
}

fn collect_updates(chain: &Chain) -> Result<Vec<UpdatePoint>, LearnError> {
    let mut updates = Vec::new();
    for block in chain.blocks() {
        if block.tx.flag != Flag::Update {
            continue;
        }
        let bytes = block.tx.model.as_deref().unwrap_or_default();
        let model = learning::deserialize_model(bytes)?;
        updates.push(UpdatePoint {
            height: block.height,
            site: block.tx.from,
            round: model.round,
            error: block.tx.error,
        });
    }
    Ok(updates)
}

impl Report {
    /// Summarize a run straight out of the simulator.
    pub fn from_run(
        chain: &Chain,
        outcome: &RunOutcome,
        holdout_error: Option<f64>,
    ) -> Result<Report, LearnError> {
        let updates = collect_updates(chain)?;
        Ok(Report {
            stop_reason: outcome.stop_reason,
            stop_tick: outcome.stop_tick,
            iterations: outcome.iterations,
            chain_length: chain.len(),
            difficulty: chain.difficulty(),
            initialization: chain.initialization_errors(),
            updates,
            final_error: outcome.final_error,
            final_site: outcome.final_model.origin_site,
            final_round: outcome.final_model.round,
            holdout_error,
        })
    }

    /// Rebuild a summary from persisted artifacts. The trace supplies the
    /// stop verdict; everything else comes off the chain. Call [`audit`]
    /// first; this assumes the two agree.
    pub fn from_artifacts(chain: &Chain, trace: &[TraceRecord]) -> Result<Report, String> {
        let (stop_tick, stop_reason) = trace
            .iter()
            .rev()
            .find_map(|record| match record {
                TraceRecord::Stop { tick, reason } => Some((*tick, *reason)),
                _ => None,
            })
            .ok_or_else(|| "trace has no stop record".to_string())?;
        let updates = collect_updates(chain).map_err(|err| err.to_string())?;
        let last = updates
            .last()
            .copied()
            .ok_or_else(|| "chain has no published update".to_string())?;
        Ok(Report {
            stop_reason,
            stop_tick,
            iterations: updates.len() as u32,
            chain_length: chain.len(),
            difficulty: chain.difficulty(),
            initialization: chain.initialization_errors(),
            updates,
            final_error: last.error,
            final_site: last.site,
            final_round: last.round,
            holdout_error: None,
        })
    }

    /// Multi-line human-readable rendering.
    pub fn render(&self) -> String {
        let mut out = String::new();
        let _ = writeln!(
            out,
            "stop:          {} at tick {}",
            self.stop_reason.name(),
            self.stop_tick
        );
        let _ = writeln!(out, "iterations:    {}", self.iterations);
        let _ = writeln!(
            out,
            "chain:         {} blocks at difficulty {}",
            self.chain_length, self.difficulty
        );
        let _ = writeln!(out, "initialization errors:");
        for (site, error) in &self.initialization {
            let _ = writeln!(out, "  {site:<12} {error:.4}");
        }
        let _ = writeln!(out, "update trajectory:");
        for update in &self.updates {
            let _ = writeln!(
                out,
                "  height {:<6} {:<8} round {:<4} error {:.4}",
                update.height,
                update.site.to_string(),
                update.round,
                update.error
            );
        }
        let _ = writeln!(
            out,
            "final model:   round {} from {}, error {:.4}",
            self.final_round, self.final_site, self.final_error
        );
        if let Some(holdout) = self.holdout_error {
            let _ = writeln!(out, "holdout error: {holdout:.4}");
        }
        out
    }
}

/// Compare a trace against a chain, line by line. Every `tx` record must
/// match the block at its height exactly; the trace must close with a stop
/// record. Returns one message per disagreement, empty when they agree.
pub fn audit(chain: &Chain, trace: &[TraceRecord]) -> Vec<String> {
    let mut mismatches = Vec::new();
    let blocks: Vec<_> = chain.blocks().iter().skip(1).collect();
    let tx_records: Vec<_> = trace
        .iter()
        .filter_map(|record| match record {
            TraceRecord::Tx {
                height,
                from,
                to,
                flag,
                error,
                model_hash,
                ..
            } => Some((*height, *from, *to, *flag, *error, *model_hash)),
            _ => None,
        })
        .collect();

    if tx_records.len() != blocks.len() {
        mismatches.push(format!(
            "trace describes {} transactions, chain holds {}",
            tx_records.len(),
            blocks.len()
        ));
    }
    for (record, block) in tx_records.iter().zip(&blocks) {
        let (height, from, to, flag, error, model_hash) = *record;
        if height != block.height {
            mismatches.push(format!(
                "trace height {height} does not line up with block {}",
                block.height
            ));
            continue;
        }
        if from != block.tx.from || to != block.tx.to {
            mismatches.push(format!(
                "height {height}: trace says {from} -> {to}, chain says {} -> {}",
                block.tx.from, block.tx.to
            ));
        }
        if flag != block.tx.flag {
            mismatches.push(format!(
                "height {height}: trace flag {} vs chain flag {}",
                flag.name(),
                block.tx.flag.name()
            ));
        }
        if error.to_bits() != block.tx.error.to_bits() {
            mismatches.push(format!(
                "height {height}: trace error {error} vs chain error {}",
                block.tx.error
            ));
        }
        if model_hash != block.tx.model_hash {
            mismatches.push(format!("height {height}: model hash differs"));
        }
    }

    match trace.last() {
        Some(TraceRecord::Stop { .. }) => {}
        _ => mismatches.push("trace does not end with a stop record".to_string()),
    }
    let stop_count = trace
        .iter()
        .filter(|r| matches!(r, TraceRecord::Stop { .. }))
        .count();
    if stop_count > 1 {
        mismatches.push(format!("trace holds {stop_count} stop records"));
    }
    mismatches
}
