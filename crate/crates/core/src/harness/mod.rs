//! Scenario harness: configs in, artifacts out.
//!
//! This layer turns a config file into a finished run. It loads and splits
//! datasets, wires the right learner into the simulated network, runs it to
//! a stop, and hands back the chain, the trace, and a summary report. The
//! chain and trace serialize to JSONL so runs can be archived, re-verified,
//! and audited later without rerunning anything.

pub mod config;
pub mod dataset;
pub mod report;
pub mod trace;

pub use config::{ConfigError, EventSpec, PartitionSpec, RunMode, ScenarioSpec};
pub use dataset::{load_rows, parse_rows, separable_rows, split_rows, DatasetError};
pub use report::{audit, Report, UpdatePoint};
pub use trace::{parse_trace, render_trace, TraceError};

use crate::ledger::{Chain, LedgerError, SiteId};
use crate::learning::{self, LearnError, LearnerParams, Partition, Row};
use crate::protocol::{Learner, ProtocolConfig, ScriptedLearner, SgdLearner};
use crate::simnet::{
    LifecycleKind, RunOutcome, ScenarioAction, ScenarioEvent, SimError, TraceRecord, World,
};
use std::path::{Path, PathBuf};
use thiserror::Error;

#[derive(Debug, Error)]
pub enum HarnessError {
    #[error(transparent)]
    Config(#[from] ConfigError),
    #[error(transparent)]
    Dataset(#[from] DatasetError),
    #[error(transparent)]
    Sim(#[from] SimError),
    #[error(transparent)]
    Ledger(#[from] LedgerError),
    #[error(transparent)]
    Learn(#[from] LearnError),
    #[error(transparent)]
    Trace(#[from] TraceError),
    #[error("cannot read {path}: {source}")]
    ReadFile {
        path: PathBuf,
        source: std::io::Error,
    },
    #[error("cannot write {path}: {source}")]
    WriteFile {
        path: PathBuf,
        source: std::io::Error,
    },
}

/// Everything a finished run leaves behind.
#[derive(Debug, Clone)]
pub struct RunArtifacts {
    pub outcome: RunOutcome,
    pub report: Report,
    pub chain: Chain,
    pub trace: Vec<TraceRecord>,
}

/// Scripted sites never train, but every site still owns a partition.
fn placeholder_partition() -> Partition {
    Partition {
        rows: vec![Row {
            features: vec![0.0],
            label: 0,
        }],
    }
}

fn scripted_action(kind: LifecycleKind) -> ScenarioAction {
    match kind {
        LifecycleKind::Join => ScenarioAction::Join {
            partition: placeholder_partition(),
        },
        LifecycleKind::Leave => ScenarioAction::Leave,
        LifecycleKind::NewData => ScenarioAction::NewData { rows: Vec::new() },
    }
}

fn dataset_action(event: &EventSpec, n_features: usize) -> Result<ScenarioAction, HarnessError> {
    let load = |path: &Path| -> Result<Vec<Row>, HarnessError> {
        let rows = dataset::load_rows(path)?;
        let found = rows[0].features.len();
        if found != n_features {
            return Err(DatasetError::FeatureCountMismatch {
                path: path.to_path_buf(),
                expected: n_features,
                found,
            }
            .into());
        }
        Ok(rows)
    };
    Ok(match event.kind {
        LifecycleKind::Leave => ScenarioAction::Leave,
        LifecycleKind::Join => ScenarioAction::Join {
            partition: Partition {
                rows: load(event.rows_path.as_deref().expect("validated at parse"))?,
            },
        },
        LifecycleKind::NewData => ScenarioAction::NewData {
            rows: load(event.rows_path.as_deref().expect("validated at parse"))?,
        },
    })
}

/// Run a validated scenario to its stopping point.
pub fn run_spec(spec: &ScenarioSpec) -> Result<RunArtifacts, HarnessError> {
    match &spec.mode {
        RunMode::Scripted { entries } => {
            let learner = Box::new(ScriptedLearner::new(entries.iter().copied()));
            let founding = (1..=spec.protocol.n_sites)
                .map(|id| (SiteId(id), placeholder_partition()))
                .collect();
            let events = spec
                .events
                .iter()
                .map(|event| ScenarioEvent {
                    tick: event.tick,
                    site: SiteId(event.site),
                    action: scripted_action(event.kind),
                })
                .collect();
            run_world(spec.protocol.clone(), learner, founding, events, None)
        }
        RunMode::Dataset {
            params,
            path,
            partition,
            holdout_fraction,
        } => {
            let rows = dataset::load_rows(path)?;
            let n_features = rows[0].features.len();
            let mut events = Vec::with_capacity(spec.events.len());
            for event in &spec.events {
                events.push(ScenarioEvent {
                    tick: event.tick,
                    site: SiteId(event.site),
                    action: dataset_action(event, n_features)?,
                });
            }
            run_dataset_rows(
                spec.protocol.clone(),
                *params,
                rows,
                partition,
                *holdout_fraction,
                spec.seed,
                events,
            )
        }
    }
}

/// Run a dataset scenario on rows already in memory, splitting them the
/// same way a loaded CSV would be.
#[allow(clippy::too_many_arguments)]
pub fn run_dataset_rows(
    protocol: ProtocolConfig,
    params: LearnerParams,
    rows: Vec<Row>,
    partition: &PartitionSpec,
    holdout_fraction: f64,
    seed: u64,
    events: Vec<ScenarioEvent>,
) -> Result<RunArtifacts, HarnessError> {
    let (partitions, holdout) =
        dataset::split_rows(rows, protocol.n_sites, partition, holdout_fraction, seed)?;
    let founding = partitions
        .into_iter()
        .enumerate()
        .map(|(index, partition)| (SiteId(index as u32 + 1), partition))
        .collect();
    let learner = Box::new(SgdLearner::new(params));
    let holdout = (!holdout.rows.is_empty()).then_some(holdout);
    run_world(protocol, learner, founding, events, holdout)
}

/// Load, validate, and run a config file.
pub fn run_config_file(path: &Path) -> Result<RunArtifacts, HarnessError> {
    run_spec(&ScenarioSpec::load(path)?)
}

fn run_world(
    cfg: ProtocolConfig,
    learner: Box<dyn Learner>,
    founding: Vec<(SiteId, Partition)>,
    events: Vec<ScenarioEvent>,
    holdout: Option<Partition>,
) -> Result<RunArtifacts, HarnessError> {
    let mut world = World::new(cfg, learner, founding, events)?;
    let outcome = world.run_until_stop()?;
    let holdout_error = match &holdout {
        Some(partition) => Some(learning::evaluate(&outcome.final_model, partition)?),
        None => None,
    };
    let report = Report::from_run(world.chain(), &outcome, holdout_error)?;
    Ok(RunArtifacts {
        report,
        chain: world.chain().clone(),
        trace: world.trace().to_vec(),
        outcome,
    })
}

/// Read a persisted chain back in.
pub fn load_chain(path: &Path) -> Result<Chain, HarnessError> {
    let text = read_file(path)?;
    Ok(Chain::from_jsonl(&text)?)
}

/// Read a persisted trace back in.
pub fn load_trace(path: &Path) -> Result<Vec<TraceRecord>, HarnessError> {
    let text = read_file(path)?;
    Ok(parse_trace(&text)?)
}

fn read_file(path: &Path) -> Result<String, HarnessError> {
    std::fs::read_to_string(path).map_err(|source| HarnessError::ReadFile {
        path: path.to_path_buf(),
        source,
    })
}

/// Write a file through a sibling temp file and a rename, so readers never
/// observe a half-written artifact.
pub fn write_atomic(path: &Path, text: &str) -> Result<(), HarnessError> {
    let fail = |source: std::io::Error| HarnessError::WriteFile {
        path: path.to_path_buf(),
        source,
    };
    let mut temp = path.as_os_str().to_owned();
    temp.push(".tmp");
    let temp = PathBuf::from(temp);
    std::fs::write(&temp, text).map_err(fail)?;
    std::fs::rename(&temp, path).map_err(fail)?;
    Ok(())
}
