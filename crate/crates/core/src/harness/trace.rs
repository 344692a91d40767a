//! Trace persistence: one JSON object per line, in event order.
//!
//! Three line shapes exist, distinguished by a `kind` field: `tx` for every
//! mined transaction, `lifecycle` for joins, leaves, and data arrivals, and
//! `stop` for the run's final verdict. Hashes are lowercase hex; flags and
//! reasons use their canonical upper- or snake-case names.

use crate::ledger::{Digest, Flag, SiteId};
use crate::protocol::StopReason;
use crate::simnet::{LifecycleKind, TraceRecord};
use serde::{Deserialize, Serialize};
use thiserror::Error;

#[derive(Debug, Error)]
pub enum TraceError {
    #[error("trace line {line}: {reason}")]
    Line { line: usize, reason: String },
    #[error("trace is empty")]
    Empty,
}

#[derive(Serialize, Deserialize)]
#[serde(tag = "kind", rename_all = "snake_case")]
enum TraceLine {
    Tx {
        tick: u64,
        height: u64,
        from: u32,
        to: u32,
        flag: String,
        error: f64,
        model_hash: String,
    },
    Lifecycle {
        tick: u64,
        event: String,
        site: u32,
    },
    Stop {
        tick: u64,
        reason: String,
    },
}

impl From<&TraceRecord> for TraceLine {
    fn from(record: &TraceRecord) -> TraceLine {
        match record {
            TraceRecord::Tx {
                tick,
                height,
                from,
                to,
                flag,
                error,
                model_hash,
            } => TraceLine::Tx {
                tick: *tick,
                height: *height,
                from: from.0,
                to: to.0,
                flag: flag.name().to_string(),
                error: *error,
                model_hash: model_hash.to_hex(),
            },
            TraceRecord::Lifecycle { tick, event, site } => TraceLine::Lifecycle {
                tick: *tick,
                event: event.name().to_string(),
                site: site.0,
            },
            TraceRecord::Stop { tick, reason } => TraceLine::Stop {
                tick: *tick,
                reason: reason.name().to_string(),
            },
        }
    }
}

impl TraceLine {
    fn into_record(self, line: usize) -> Result<TraceRecord, TraceError> {
        let bad = |reason: String| TraceError::Line { line, reason };
        Ok(match self {
            TraceLine::Tx {
                tick,
                height,
                from,
                to,
                flag,
                error,
                model_hash,
            } => TraceRecord::Tx {
                tick,
                height,
                from: SiteId(from),
                to: SiteId(to),
                flag: Flag::from_name(&flag)
                    .ok_or_else(|| bad(format!("unknown flag {flag:?}")))?,
                error,
                model_hash: model_hash
                    .parse::<Digest>()
                    .map_err(|err| bad(format!("bad model_hash: {err}")))?,
            },
            TraceLine::Lifecycle { tick, event, site } => TraceRecord::Lifecycle {
                tick,
                event: LifecycleKind::from_name(&event)
                    .ok_or_else(|| bad(format!("unknown lifecycle event {event:?}")))?,
                site: SiteId(site),
            },
            TraceLine::Stop { tick, reason } => TraceRecord::Stop {
                tick,
                reason: StopReason::from_name(&reason)
                    .ok_or_else(|| bad(format!("unknown stop reason {reason:?}")))?,
            },
        })
    }
}

/// Render a trace as JSONL with a trailing newline.
pub fn render_trace(records: &[TraceRecord]) -> String {
    let mut out = String::new();
    for record in records {
        let line = serde_json::to_string(&TraceLine::from(record))
            .expect("trace records always serialize");
        out.push_str(&line);
        out.push('\n');
    }
    out
}

/// Parse a JSONL trace; blank lines are rejected, not skipped.
pub fn parse_trace(text: &str) -> Result<Vec<TraceRecord>, TraceError> {
    let mut records = Vec::new();
    for (index, line) in text.lines().enumerate() {
        let parsed: TraceLine = serde_json::from_str(line).map_err(|err| TraceError::Line {
            line: index + 1,
            reason: err.to_string(),
        })?;
        records.push(parsed.into_record(index + 1)?);
    }
    if records.is_empty() {
        return Err(TraceError::Empty);
    }
    Ok(records)
}
