//! Online logistic regression and the canonical model wire format.
//!
//! Sites train by streaming rows through stochastic gradient descent, one
//! partition at a time, so a model can leave one site, learn from another
//! site's data, and keep going. Models travel inside block metadata as a
//! fixed little-endian byte layout capped by the chain's metadata budget.

use crate::ledger::SiteId;
use rand::seq::SliceRandom;
use rand::SeedableRng;
use rand_chacha::ChaCha8Rng;
use thiserror::Error;

/// Magic prefix of serialized model bytes.
pub const MODEL_MAGIC: [u8; 4] = *b"MCM1";

/// One labeled example: feature values and a binary class label.
#[derive(Debug, Clone, PartialEq)]
pub struct Row {
    pub features: Vec<f64>,
    pub label: u8,
}

impl Row {
    pub fn new(features: Vec<f64>, label: u8) -> Row {
        Row { features, label }
    }
}

/// A site's local slice of the training data. Rows never leave the site;
/// only models and error rates do.
#[derive(Debug, Clone, Default, PartialEq)]
pub struct Partition {
    pub rows: Vec<Row>,
}

impl Partition {
    pub fn new(rows: Vec<Row>) -> Partition {
        Partition { rows }
    }

    pub fn len(&self) -> usize {
        self.rows.len()
    }

    pub fn is_empty(&self) -> bool {
        self.rows.is_empty()
    }

    /// Check that the partition is trainable: at least one row, a consistent
    /// feature count, finite features, and labels in {0, 1}.
    pub fn validate(&self) -> Result<usize, LearnError> {
        let first = self.rows.first().ok_or(LearnError::EmptyPartition)?;
        let n_features = first.features.len();
        for (idx, row) in self.rows.iter().enumerate() {
            if row.features.len() != n_features {
                return Err(LearnError::FeatureCountMismatch {
                    row: idx,
                    expected: n_features,
                    got: row.features.len(),
                });
            }
            if row.features.iter().any(|x| !x.is_finite()) {
                return Err(LearnError::NonFiniteFeature { row: idx });
            }
            if row.label > 1 {
                return Err(LearnError::BadLabel {
                    row: idx,
                    label: row.label,
                });
            }
        }
        Ok(n_features)
    }
}

/// A logistic regression model in flight between sites.
///
/// `weights[0]` is the intercept; `weights[1..]` align with feature columns.
/// `round` counts how many update passes produced this model (zero for a
/// freshly initialized model) and `origin_site` is the site whose pass
/// produced it.
#[derive(Debug, Clone, PartialEq)]
pub struct Model {
    pub weights: Vec<f64>,
    pub round: u32,
    pub origin_site: SiteId,
}

impl Model {
    /// Number of feature columns the model expects (excludes the intercept).
    pub fn n_features(&self) -> usize {
        self.weights.len().saturating_sub(1)
    }
}

/// Hyperparameters for stochastic gradient descent.
#[derive(Debug, Clone, Copy, PartialEq)]
pub struct LearnerParams {
    pub learning_rate: f64,
    pub epochs: u32,
    /// L2 penalty on the non-intercept weights.
    pub l2: f64,
    /// Seed for the per-epoch row visit order.
    pub shuffle_seed: u64,
}

impl Default for LearnerParams {
    fn default() -> LearnerParams {
        LearnerParams {
            learning_rate: 0.1,
            epochs: 5,
            l2: 0.0,
            shuffle_seed: 0,
        }
    }
}

impl LearnerParams {
    pub fn validate(&self) -> Result<(), LearnError> {
        if !self.learning_rate.is_finite() || self.learning_rate <= 0.0 {
            return Err(LearnError::BadLearningRate(self.learning_rate));
        }
        if !self.l2.is_finite() || self.l2 < 0.0 {
            return Err(LearnError::BadPenalty(self.l2));
        }
        if self.epochs == 0 {
            return Err(LearnError::ZeroEpochs);
        }
        Ok(())
    }
}

/// Errors raised by training, evaluation, and model (de)serialization.
#[derive(Debug, Error, PartialEq)]
pub enum LearnError {
    #[error("partition has no rows")]
    EmptyPartition,
    #[error("row {row} has {got} features, expected {expected}")]
    FeatureCountMismatch {
        row: usize,
        expected: usize,
        got: usize,
    },
    #[error("row {row} has label {label}, expected 0 or 1")]
    BadLabel { row: usize, label: u8 },
    #[error("row {row} contains a non-finite feature")]
    NonFiniteFeature { row: usize },
    #[error("model expects {expected} features but rows carry {got}")]
    ModelDimensionMismatch { expected: usize, got: usize },
    #[error("learning rate {0} must be positive and finite")]
    BadLearningRate(f64),
    #[error("l2 penalty {0} must be non-negative and finite")]
    BadPenalty(f64),
    #[error("epochs must be at least 1")]
    ZeroEpochs,
    #[error("model bytes are {0} bytes, shorter than the 24-byte minimum")]
    Truncated(usize),
    #[error("model bytes start with {0:02x?}, expected the MCM1 magic")]
    BadMagic([u8; 4]),
    #[error("model bytes are {got} bytes but declare {m} features (expected {expected})")]
    LengthMismatch { m: u32, expected: usize, got: usize },
    #[error("model contains a non-finite weight")]
    NonFiniteWeight,
    #[error("serialized model is {size} bytes, over the {budget}-byte metadata budget")]
    OverBudget { size: usize, budget: usize },
}

/// Numerically stable logistic function.
pub fn sigmoid(z: f64) -> f64 {
    if z >= 0.0 {
        1.0 / (1.0 + (-z).exp())
    } else {
        let e = z.exp();
        e / (1.0 + e)
    }
}

fn dot(weights: &[f64], features: &[f64]) -> f64 {
    let mut z = weights[0];
    for (w, x) in weights[1..].iter().zip(features) {
        z += w * x;
    }
    z
}

/// Per-row objective: cross-entropy of the predicted probability plus half
/// the L2 penalty over the non-intercept weights. [`row_gradient`] is its
/// exact gradient, which the tests confirm by finite differences.
pub fn row_loss(weights: &[f64], features: &[f64], label: u8, l2: f64) -> f64 {
    let z = dot(weights, features);
    let y = f64::from(label);
    // log(1 + e^z) - y*z, computed without overflowing for large |z|.
    let log1p_exp = if z > 0.0 {
        z + (-z).exp().ln_1p()
    } else {
        z.exp().ln_1p()
    };
    let penalty: f64 = weights[1..].iter().map(|w| w * w).sum();
    log1p_exp - y * z + 0.5 * l2 * penalty
}

/// Gradient of [`row_loss`] with respect to the weights. The intercept term
/// carries no penalty.
pub fn row_gradient(weights: &[f64], features: &[f64], label: u8, l2: f64) -> Vec<f64> {
    let residual = sigmoid(dot(weights, features)) - f64::from(label);
    let mut grad = Vec::with_capacity(weights.len());
    grad.push(residual);
    for (w, x) in weights[1..].iter().zip(features) {
        grad.push(residual * x + l2 * w);
    }
    grad
}

fn sgd_pass(weights: &mut [f64], partition: &Partition, params: &LearnerParams) {
    let mut order: Vec<usize> = (0..partition.rows.len()).collect();
    let mut rng = ChaCha8Rng::seed_from_u64(params.shuffle_seed);
    for _ in 0..params.epochs {
        order.shuffle(&mut rng);
        for &idx in &order {
            let row = &partition.rows[idx];
            let grad = row_gradient(weights, &row.features, row.label, params.l2);
            for (w, g) in weights.iter_mut().zip(&grad) {
                *w -= params.learning_rate * g;
            }
        }
    }
}

/// Train a fresh model on a site's partition, starting from zero weights.
/// The result is a round-zero model attributed to `site`.
pub fn train_local(
    partition: &Partition,
    params: &LearnerParams,
    site: SiteId,
) -> Result<Model, LearnError> {
    params.validate()?;
    let n_features = partition.validate()?;
    let mut weights = vec![0.0; n_features + 1];
    sgd_pass(&mut weights, partition, params);
    Ok(Model {
        weights,
        round: 0,
        origin_site: site,
    })
}

/// Continue training a received model on `site`'s partition. The weights
/// carry over unchanged as the starting point; the round advances by one and
/// the model is re-attributed to the updating site.
pub fn update_model(
    model: &Model,
    partition: &Partition,
    params: &LearnerParams,
    site: SiteId,
) -> Result<Model, LearnError> {
    params.validate()?;
    let n_features = partition.validate()?;
    if n_features != model.n_features() {
        return Err(LearnError::ModelDimensionMismatch {
            expected: model.n_features(),
            got: n_features,
        });
    }
    let mut weights = model.weights.clone();
    sgd_pass(&mut weights, partition, params);
    Ok(Model {
        weights,
        round: model.round + 1,
        origin_site: site,
    })
}

/// Predicted probability of class 1 for one feature vector.
pub fn predict_proba(model: &Model, features: &[f64]) -> Result<f64, LearnError> {
    if features.len() != model.n_features() {
        return Err(LearnError::ModelDimensionMismatch {
            expected: model.n_features(),
            got: features.len(),
        });
    }
    Ok(sigmoid(dot(&model.weights, features)))
}

/// Misclassification rate of `model` over a partition. A predicted
/// probability of exactly 0.5 counts as class 1.
pub fn evaluate(model: &Model, partition: &Partition) -> Result<f64, LearnError> {
    let n_features = partition.validate()?;
    if n_features != model.n_features() {
        return Err(LearnError::ModelDimensionMismatch {
            expected: model.n_features(),
            got: n_features,
        });
    }
    let mut wrong = 0usize;
    for row in &partition.rows {
        let predicted = if sigmoid(dot(&model.weights, &row.features)) >= 0.5 {
            1
        } else {
            0
        };
        if predicted != row.label {
            wrong += 1;
        }
    }
    Ok(wrong as f64 / partition.rows.len() as f64)
}

/// Exact byte length of a serialized model with `m` feature columns.
pub fn serialized_len(m: usize) -> usize {
    16 + 8 * (m + 1)
}

/// Canonical model wire format: the `MCM1` magic, then the feature count,
/// round, and origin site as u32 little-endian, then every weight
/// (intercept first) as f64 little-endian bits.
pub fn serialize_model(model: &Model) -> Vec<u8> {
    let m = model.n_features();
    let mut out = Vec::with_capacity(serialized_len(m));
    out.extend_from_slice(&MODEL_MAGIC);
    out.extend_from_slice(&(m as u32).to_le_bytes());
    out.extend_from_slice(&model.round.to_le_bytes());
    out.extend_from_slice(&model.origin_site.0.to_le_bytes());
    for w in &model.weights {
        out.extend_from_slice(&w.to_le_bytes());
    }
    out
}

/// Inverse of [`serialize_model`]. Rejects bad magic, declared lengths that
/// disagree with the byte count, and non-finite weights.
pub fn deserialize_model(bytes: &[u8]) -> Result<Model, LearnError> {
    if bytes.len() < serialized_len(0) {
        return Err(LearnError::Truncated(bytes.len()));
    }
    let magic: [u8; 4] = bytes[0..4].try_into().expect("sliced to width");
    if magic != MODEL_MAGIC {
        return Err(LearnError::BadMagic(magic));
    }
    let m = u32::from_le_bytes(bytes[4..8].try_into().expect("sliced to width"));
    let round = u32::from_le_bytes(bytes[8..12].try_into().expect("sliced to width"));
    let origin = u32::from_le_bytes(bytes[12..16].try_into().expect("sliced to width"));
    let expected = (m as usize)
        .checked_add(1)
        .and_then(|n| n.checked_mul(8))
        .and_then(|n| n.checked_add(16))
        .ok_or(LearnError::LengthMismatch {
            m,
            expected: usize::MAX,
            got: bytes.len(),
        })?;
    if bytes.len() != expected {
        return Err(LearnError::LengthMismatch {
            m,
            expected,
            got: bytes.len(),
        });
    }
    let mut weights = Vec::with_capacity(m as usize + 1);
    for chunk in bytes[16..].chunks_exact(8) {
        let w = f64::from_le_bytes(chunk.try_into().expect("chunked to width"));
        if !w.is_finite() {
            return Err(LearnError::NonFiniteWeight);
        }
        weights.push(w);
    }
    Ok(Model {
        weights,
        round,
        origin_site: SiteId(origin),
    })
}

/// Reject payloads that would not fit in a block's metadata area.
pub fn check_metadata_budget(size: usize, budget: usize) -> Result<(), LearnError> {
    if size > budget {
        return Err(LearnError::OverBudget { size, budget });
    }
    Ok(())
}
