//! Dataset loading and horizontal partitioning.
//!
//! The on-disk format is CSV with a header: one or more numeric feature
//! columns followed by a final column named `label` holding 0 or 1. Rows are
//! shuffled once with a fixed seed, a holdout slice is carved off the front,
//! and the remainder is dealt to the founding sites in contiguous runs, so a
//! given `(rows, seed, spec)` triple always produces the same split.

use super::config::PartitionSpec;
use crate::learning::{Partition, Row};
use rand::seq::SliceRandom;
use rand::SeedableRng;
use rand_chacha::ChaCha8Rng;
use std::io::Read;
use std::path::{Path, PathBuf};
use thiserror::Error;

#[derive(Debug, Error)]
pub enum DatasetError {
    #[error("cannot read {path}: {source}")]
    Io {
        path: PathBuf,
        source: std::io::Error,
    },
    #[error("{path} line {line}: {reason}")]
    Malformed {
        path: PathBuf,
        line: u64,
        reason: String,
    },
    #[error("{path}: the final header column must be \"label\", found {found:?}")]
    BadHeader { path: PathBuf, found: String },
    #[error("{path}: no data rows after the header")]
    Empty { path: PathBuf },
    #[error("{path}: rows have {found} features, but the run's dataset has {expected}")]
    FeatureCountMismatch {
        path: PathBuf,
        expected: usize,
        found: usize,
    },
    #[error("cannot split {rows} rows across {sites} sites after a {holdout}-row holdout")]
    TooFewRows {
        rows: usize,
        sites: u32,
        holdout: usize,
    },
    #[error("partition counts sum to {requested}, but only {available} rows remain after the holdout")]
    CountsExceedRows { requested: usize, available: usize },
}

/// Load a CSV of feature columns plus a trailing `label` column.
pub fn load_rows(path: &Path) -> Result<Vec<Row>, DatasetError> {
    let file = std::fs::File::open(path).map_err(|source| DatasetError::Io {
        path: path.to_path_buf(),
        source,
    })?;
    parse_rows(file, path)
}

/// Parse CSV rows from any reader; `path` only labels error messages.
pub fn parse_rows<R: Read>(reader: R, path: &Path) -> Result<Vec<Row>, DatasetError> {
    let mut csv = csv::ReaderBuilder::new()
        .trim(csv::Trim::All)
        .flexible(true)
        .from_reader(reader);
    let malformed = |line: u64, reason: String| DatasetError::Malformed {
        path: path.to_path_buf(),
        line,
        reason,
    };

    let headers = csv
        .headers()
        .map_err(|err| malformed(1, err.to_string()))?
        .clone();
    match headers.iter().next_back() {
        Some("label") if headers.len() >= 2 => {}
        Some(found) => {
            return Err(DatasetError::BadHeader {
                path: path.to_path_buf(),
                found: found.to_string(),
            });
        }
        None => {
            return Err(DatasetError::BadHeader {
                path: path.to_path_buf(),
                found: String::new(),
            });
        }
    }
    let n_features = headers.len() - 1;

    let mut rows = Vec::new();
    for record in csv.records() {
        let record = record.map_err(|err| {
            let line = err
                .position()
                .map(|p| p.line())
                .unwrap_or(rows.len() as u64 + 2);
            malformed(line, err.to_string())
        })?;
        let line = record.position().map(|p| p.line()).unwrap_or(0);
        if record.len() != n_features + 1 {
            return Err(malformed(
                line,
                format!("expected {} columns, found {}", n_features + 1, record.len()),
            ));
        }
        let mut features = Vec::with_capacity(n_features);
        for (index, field) in record.iter().take(n_features).enumerate() {
            let value: f64 = field.parse().map_err(|_| {
                malformed(
                    line,
                    format!("column {} ({:?}) is not a number", index + 1, field),
                )
            })?;
            if !value.is_finite() {
                return Err(malformed(
                    line,
                    format!("column {} is not finite", index + 1),
                ));
            }
            features.push(value);
        }
        let label_field = record.get(n_features).unwrap_or("");
        let label = match label_field {
            "0" => 0,
            "1" => 1,
            other => {
                return Err(malformed(
                    line,
                    format!("label {other:?} must be 0 or 1"),
                ));
            }
        };
        rows.push(Row { features, label });
    }
    if rows.is_empty() {
        return Err(DatasetError::Empty {
            path: path.to_path_buf(),
        });
    }
    Ok(rows)
}

/// Shuffle `rows` with `seed`, carve off the holdout, and deal the rest to
/// `n_sites` partitions. The holdout partition may be empty.
pub fn split_rows(
    rows: Vec<Row>,
    n_sites: u32,
    spec: &PartitionSpec,
    holdout_fraction: f64,
    seed: u64,
) -> Result<(Vec<Partition>, Partition), DatasetError> {
    let total = rows.len();
    let mut shuffled = rows;
    let mut rng = ChaCha8Rng::seed_from_u64(seed);
    shuffled.shuffle(&mut rng);

    let holdout_len = (holdout_fraction * total as f64).floor() as usize;
    let available = total - holdout_len;

    let counts: Vec<usize> = match spec {
        PartitionSpec::Equal => {
            if available < n_sites as usize {
                return Err(DatasetError::TooFewRows {
                    rows: total,
                    sites: n_sites,
                    holdout: holdout_len,
                });
            }
            let base = available / n_sites as usize;
            let extra = available % n_sites as usize;
            (0..n_sites as usize)
                .map(|i| base + usize::from(i < extra))
                .collect()
        }
        PartitionSpec::Counts(counts) => {
            let requested: usize = counts.iter().sum();
            if requested > available {
                return Err(DatasetError::CountsExceedRows {
                    requested,
                    available,
                });
            }
            counts.clone()
        }
    };

    let mut remainder = shuffled.split_off(holdout_len);
    let holdout = Partition { rows: shuffled };
    let mut partitions = Vec::with_capacity(counts.len());
    for count in counts {
        let rest = remainder.split_off(count);
        partitions.push(Partition { rows: remainder });
        remainder = rest;
    }
    Ok((partitions, holdout))
}

/// A two-feature binary dataset that a logistic model separates cleanly:
/// points are drawn uniformly from [-3, 3]^2, resampled until they sit at
/// least 1.0 from the line x + y = 0, and labeled by the side they fall on.
pub fn separable_rows(n: usize, seed: u64) -> Vec<Row> {
    let mut rng = ChaCha8Rng::seed_from_u64(seed);
    let mut rows = Vec::with_capacity(n);
    while rows.len() < n {
        let x: f64 = rand::Rng::random_range(&mut rng, -3.0..3.0);
        let y: f64 = rand::Rng::random_range(&mut rng, -3.0..3.0);
        if (x + y).abs() < 1.0 {
            continue;
        }
        rows.push(Row {
            features: vec![x, y],
            label: u8::from(x + y > 0.0),
        });
    }
    rows
}
