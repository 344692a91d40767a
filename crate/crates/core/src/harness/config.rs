//! Scenario configuration: a flat `key = value` text format with dotted
//! section prefixes, parsed as TOML.
//!
//! A config describes one run end to end: the protocol parameters, either a
//! real dataset with learner hyperparameters or a scripted error table, and
//! an optional timeline of join/leave/new-data events. Unknown keys and
//! half-configured modes are rejected outright rather than guessed at.

use crate::learning::LearnerParams;
use crate::protocol::ProtocolConfig;
use crate::simnet::LifecycleKind;
use serde::Deserialize;
use std::path::{Path, PathBuf};
use thiserror::Error;

#[derive(Debug, Error)]
pub enum ConfigError {
    #[error("cannot read {path}: {source}")]
    Io {
        path: PathBuf,
        source: std::io::Error,
    },
    #[error("config parse error: {0}")]
    Parse(#[from] toml::de::Error),
    #[error("config: {0}")]
    Invalid(String),
}

/// How dataset rows are split across founding sites.
#[derive(Debug, Clone, PartialEq, Eq)]
pub enum PartitionSpec {
    /// As evenly as possible, leftovers to the lowest site ids.
    Equal,
    /// Explicit row count per site, in site order.
    Counts(Vec<usize>),
}

/// A validated scenario, ready to run.
#[derive(Debug, Clone)]
pub struct ScenarioSpec {
    pub protocol: ProtocolConfig,
    /// Seed for the dataset shuffle that carves partitions and holdout.
    pub seed: u64,
    pub mode: RunMode,
    pub events: Vec<EventSpec>,
}

/// What the sites learn with.
#[derive(Debug, Clone)]
pub enum RunMode {
    /// Replay a fixed `(site, round, error)` table; no dataset is touched.
    Scripted { entries: Vec<(u32, u32, f64)> },
    /// Train real models on a CSV dataset.
    Dataset {
        params: LearnerParams,
        path: PathBuf,
        partition: PartitionSpec,
        /// Fraction of rows (after shuffling) reserved for the final
        /// held-out evaluation; zero disables it.
        holdout_fraction: f64,
    },
}

impl RunMode {
    pub fn is_scripted(&self) -> bool {
        matches!(self, RunMode::Scripted { .. })
    }
}

/// One scripted change to the network.
#[derive(Debug, Clone)]
pub struct EventSpec {
    pub tick: u64,
    pub site: u32,
    pub kind: LifecycleKind,
    /// CSV of rows for `join` and `new_data` events in dataset mode.
    pub rows_path: Option<PathBuf>,
}

#[derive(Debug, Deserialize)]
#[serde(deny_unknown_fields)]
struct RawConfig {
    protocol: RawProtocol,
    learner: Option<RawLearner>,
    dataset: Option<RawDataset>,
    scripted_errors: Option<Vec<(u32, u32, f64)>>,
    #[serde(default)]
    events: Vec<RawEvent>,
}

#[derive(Debug, Deserialize)]
#[serde(deny_unknown_fields)]
struct RawProtocol {
    n_sites: u32,
    delta: Option<u64>,
    theta: Option<u64>,
    difficulty: Option<u32>,
    error_threshold: Option<f64>,
    max_iterations: Option<u32>,
    max_metadata_bytes: Option<usize>,
    seed: Option<u64>,
}

#[derive(Debug, Deserialize)]
#[serde(deny_unknown_fields)]
struct RawLearner {
    learning_rate: f64,
    epochs: u32,
    l2: Option<f64>,
    shuffle_seed: Option<u64>,
}

#[derive(Debug, Deserialize)]
#[serde(deny_unknown_fields)]
struct RawDataset {
    path: String,
    partition: Option<RawPartition>,
    holdout_fraction: Option<f64>,
}

#[derive(Debug, Deserialize)]
#[serde(untagged)]
enum RawPartition {
    Named(String),
    Counts(Vec<usize>),
}

#[derive(Debug, Deserialize)]
#[serde(deny_unknown_fields)]
struct RawEvent {
    tick: u64,
    kind: String,
    site: u32,
    path: Option<String>,
}

impl ScenarioSpec {
    /// Read and validate a config file. Relative paths inside the config
    /// resolve against the config file's directory.
    pub fn load(path: &Path) -> Result<ScenarioSpec, ConfigError> {
        let text = std::fs::read_to_string(path).map_err(|source| ConfigError::Io {
            path: path.to_path_buf(),
            source,
        })?;
        let base = path.parent().unwrap_or_else(|| Path::new("."));
        ScenarioSpec::from_toml(&text, base)
    }

    /// Parse and validate config text; `base` anchors relative paths.
    pub fn from_toml(text: &str, base: &Path) -> Result<ScenarioSpec, ConfigError> {
        let raw: RawConfig = toml::from_str(text)?;
        let invalid = |message: String| ConfigError::Invalid(message);

        let protocol = ProtocolConfig {
            n_sites: raw.protocol.n_sites,
            delta: raw.protocol.delta.unwrap_or(ProtocolConfig::default().delta),
            theta: raw.protocol.theta.unwrap_or(ProtocolConfig::default().theta),
            difficulty: raw
                .protocol
                .difficulty
                .unwrap_or(ProtocolConfig::default().difficulty),
            error_threshold: raw.protocol.error_threshold,
            max_iterations: raw.protocol.max_iterations,
            max_metadata_bytes: raw
                .protocol
                .max_metadata_bytes
                .unwrap_or(ProtocolConfig::default().max_metadata_bytes),
        };
        protocol
            .validate()
            .map_err(|err| invalid(err.to_string()))?;
        let seed = raw.protocol.seed.unwrap_or(0);

        let mode = match (raw.scripted_errors, raw.dataset) {
            (Some(_), Some(_)) => {
                return Err(invalid(
                    "scripted_errors and a dataset are mutually exclusive; configure one".into(),
                ));
            }
            (Some(entries), None) => {
                if raw.learner.is_some() {
                    return Err(invalid(
                        "a learner section is meaningless with scripted_errors".into(),
                    ));
                }
                validate_script(&entries)?;
                RunMode::Scripted { entries }
            }
            (None, Some(dataset)) => {
                let learner = raw.learner.ok_or_else(|| {
                    invalid("a dataset needs a learner section".into())
                })?;
                let params = LearnerParams {
                    learning_rate: learner.learning_rate,
                    epochs: learner.epochs,
                    l2: learner.l2.unwrap_or(0.0),
                    shuffle_seed: learner.shuffle_seed.unwrap_or(0),
                };
                params.validate().map_err(|err| invalid(err.to_string()))?;
                let partition = match dataset.partition {
                    None => PartitionSpec::Equal,
                    Some(RawPartition::Named(name)) if name == "equal" => PartitionSpec::Equal,
                    Some(RawPartition::Named(name)) => {
                        return Err(invalid(format!(
                            "unknown partition scheme {name:?}; use \"equal\" or a list of counts"
                        )));
                    }
                    Some(RawPartition::Counts(counts)) => {
                        if counts.len() != protocol.n_sites as usize {
                            return Err(invalid(format!(
                                "{} partition counts for {} sites",
                                counts.len(),
                                protocol.n_sites
                            )));
                        }
                        if counts.contains(&0) {
                            return Err(invalid(
                                "every partition count must be at least 1".into(),
                            ));
                        }
                        PartitionSpec::Counts(counts)
                    }
                };
                let holdout_fraction = dataset.holdout_fraction.unwrap_or(0.2);
                if !holdout_fraction.is_finite() || !(0.0..1.0).contains(&holdout_fraction) {
                    return Err(invalid(format!(
                        "holdout_fraction {holdout_fraction} must be in [0, 1)"
                    )));
                }
                RunMode::Dataset {
                    params,
                    path: base.join(dataset.path),
                    partition,
                    holdout_fraction,
                }
            }
            (None, None) => {
                return Err(invalid(
                    "configure either scripted_errors or a dataset section".into(),
                ));
            }
        };

        let mut events = Vec::with_capacity(raw.events.len());
        for event in raw.events {
            let kind = LifecycleKind::from_name(&event.kind).ok_or_else(|| {
                invalid(format!(
                    "unknown event kind {:?}; use join, leave, or new_data",
                    event.kind
                ))
            })?;
            if event.site == 0 {
                return Err(invalid("events cannot target site 0".into()));
            }
            let rows_path = match (&mode, kind, event.path) {
                (_, LifecycleKind::Leave, Some(_)) => {
                    return Err(invalid("a leave event does not take a path".into()));
                }
                (RunMode::Scripted { .. }, _, Some(_)) => {
                    return Err(invalid(
                        "scripted runs take no row files; drop the event path".into(),
                    ));
                }
                (RunMode::Dataset { .. }, LifecycleKind::Join, None) => {
                    return Err(invalid(format!(
                        "join of site {} needs a path to the joining site's rows",
                        event.site
                    )));
                }
                (RunMode::Dataset { .. }, LifecycleKind::NewData, None) => {
                    return Err(invalid(format!(
                        "new_data for site {} needs a path to the new rows",
                        event.site
                    )));
                }
                (_, _, path) => path.map(|p| base.join(p)),
            };
            events.push(EventSpec {
                tick: event.tick,
                site: event.site,
                kind,
                rows_path,
            });
        }

        Ok(ScenarioSpec {
            protocol,
            seed,
            mode,
            events,
        })
    }
}

fn validate_script(entries: &[(u32, u32, f64)]) -> Result<(), ConfigError> {
    if entries.is_empty() {
        return Err(ConfigError::Invalid("scripted_errors is empty".into()));
    }
    let mut seen = std::collections::BTreeSet::new();
    for &(site, round, error) in entries {
        if site == 0 {
            return Err(ConfigError::Invalid(
                "scripted_errors cannot script site 0".into(),
            ));
        }
        if !error.is_finite() || !(0.0..=1.0).contains(&error) {
            return Err(ConfigError::Invalid(format!(
                "scripted error {error} for site {site} round {round} must be in [0, 1]"
            )));
        }
        if !seen.insert((site, round)) {
            return Err(ConfigError::Invalid(format!(
                "site {site} round {round} is scripted twice"
            )));
        }
    }
    Ok(())
}
