//! Per-site protocol logic: initialization, bidding, and control transfer.
//!
//! Every site runs the same loop against the shared chain. During
//! initialization each site trains locally and announces its error; the
//! lowest-error site publishes its model unchanged and becomes the first
//! custodian. From then on control moves by proof of information: sites bid
//! on each published model by reporting their local error on it, and when the
//! custodian's bid window closes, the strictly highest bidder takes over,
//! updates the model on its own data, and publishes the result. If no bid
//! beats the custodian's own error, the model has seen everything the network
//! can teach it and consensus is declared.
//!
//! The drive loop is generic over a [`Learner`], so the same state machine
//! runs against real stochastic gradient descent or a scripted error table.

use crate::ledger::{Chain, Digest, Flag, LedgerError, SiteId, Transaction};
use crate::learning::{
    self, deserialize_model, serialize_model, LearnError, LearnerParams, Model, Partition,
};
use std::collections::{BTreeMap, BTreeSet};
use thiserror::Error;

/// Default poll interval, in ticks.
pub const DEFAULT_DELTA: u64 = 1;
/// Default bid window after an `UPDATE`, in ticks.
pub const DEFAULT_THETA: u64 = 2;
/// Default proof-of-work difficulty in leading zero bits.
pub const DEFAULT_DIFFICULTY: u32 = 12;
/// Default cap on serialized model bytes per block, 8 MiB.
pub const DEFAULT_MAX_METADATA_BYTES: usize = 8 * 1024 * 1024;

/// Network-wide protocol parameters, fixed for a run.
#[derive(Debug, Clone, PartialEq)]
pub struct ProtocolConfig {
    /// Poll interval: every site re-reads the chain every `delta` ticks.
    pub delta: u64,
    /// Bid window: an updater collects bids for `theta` ticks after
    /// publishing before deciding where control goes.
    pub theta: u64,
    /// Number of founding sites; initialization waits for this many errors.
    pub n_sites: u32,
    /// Proof-of-work difficulty in leading zero bits.
    pub difficulty: u32,
    /// Stop as soon as a published model's error is at or below this.
    pub error_threshold: Option<f64>,
    /// Stop once this many `UPDATE` blocks exist.
    pub max_iterations: Option<u32>,
    /// Cap on serialized model bytes per block.
    pub max_metadata_bytes: usize,
}

impl Default for ProtocolConfig {
    fn default() -> ProtocolConfig {
        ProtocolConfig {
            delta: DEFAULT_DELTA,
            theta: DEFAULT_THETA,
            n_sites: 1,
            difficulty: DEFAULT_DIFFICULTY,
            error_threshold: None,
            max_iterations: None,
            max_metadata_bytes: DEFAULT_MAX_METADATA_BYTES,
        }
    }
}

impl ProtocolConfig {
    /// Reject parameter combinations the simulation cannot run.
    pub fn validate(&self) -> Result<(), ProtocolError> {
        if self.delta == 0 {
            return Err(ProtocolError::Config("delta must be at least 1".into()));
        }
        if self.theta == 0 {
            return Err(ProtocolError::Config("theta must be at least 1".into()));
        }
        if self.n_sites == 0 {
            return Err(ProtocolError::Config("n_sites must be at least 1".into()));
        }
        if self.difficulty > 256 {
            return Err(ProtocolError::Config(format!(
                "difficulty {} exceeds the 256-bit hash width",
                self.difficulty
            )));
        }
        if let Some(threshold) = self.error_threshold {
            if !threshold.is_finite() || !(0.0..=1.0).contains(&threshold) {
                return Err(ProtocolError::Config(format!(
                    "error_threshold {threshold} must be a finite value in [0, 1]"
                )));
            }
        }
        if self.max_iterations == Some(0) {
            return Err(ProtocolError::Config(
                "max_iterations must be at least 1".into(),
            ));
        }
        if self.max_metadata_bytes < learning::serialized_len(0) {
            return Err(ProtocolError::Config(format!(
                "max_metadata_bytes {} cannot hold even an empty model",
                self.max_metadata_bytes
            )));
        }
        Ok(())
    }
}

/// Why a run stopped.
#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub enum StopReason {
    /// A bid window closed with no site reporting a higher error than the
    /// custodian.
    Consensus,
    /// A published model's error reached the configured threshold.
    Threshold,
    /// The configured iteration cap was reached, time to leave.
    Ttl,
}

impl StopReason {
    pub fn name(self) -> &'static str {
        match self {
            StopReason::Consensus => "CONSENSUS",
            StopReason::Threshold => "THRESHOLD",
            StopReason::Ttl => "TTL",
        }
    }

    pub fn from_name(name: &str) -> Option<StopReason> {
        match name {
            "CONSENSUS" => Some(StopReason::Consensus),
            "THRESHOLD" => Some(StopReason::Threshold),
            "TTL" => Some(StopReason::Ttl),
            _ => None,
        }
    }
}

/// Errors raised by protocol operations.
#[derive(Debug, Error)]
pub enum ProtocolError {
    #[error(transparent)]
    Ledger(#[from] LedgerError),
    #[error(transparent)]
    Learn(#[from] LearnError),
    #[error("config: {0}")]
    Config(String),
    #[error("scripted errors have no entry for site {site} at round {round}")]
    ScriptGap { site: u32, round: u32 },
    #[error("transfer references model {hash} which is not on the chain")]
    MissingModel { hash: Digest },
    #[error("{0} has no local model to publish")]
    NoLocalModel(SiteId),
}

/// What a site trains with. The chain protocol only ever sees models, their
/// serialized bytes, and error rates, so any learner that can produce those
/// three plugs in.
///
/// `round` keys which pass of the protocol an error belongs to: bids on the
/// model published as update `k` evaluate at round `k`, and a new-data probe
/// of that model evaluates at round `k + 1`. Real learners ignore it;
/// scripted learners use it to index their table.
pub trait Learner {
    /// Train from scratch on the site's partition; returns the model and the
    /// site's error on it.
    fn train_initial(&self, site: SiteId, partition: &Partition)
        -> Result<(Model, f64), ProtocolError>;

    /// Continue training a received model on the site's partition; returns
    /// the advanced model and the site's error on it.
    fn update(
        &self,
        site: SiteId,
        model: &Model,
        partition: &Partition,
    ) -> Result<(Model, f64), ProtocolError>;

    /// The site's error on someone else's model, without changing it.
    fn evaluate(
        &self,
        site: SiteId,
        model: &Model,
        partition: &Partition,
        round: u32,
    ) -> Result<f64, ProtocolError>;
}

/// The real learner: online logistic regression over the site's partition.
#[derive(Debug, Clone)]
pub struct SgdLearner {
    pub params: LearnerParams,
}

impl SgdLearner {
    pub fn new(params: LearnerParams) -> SgdLearner {
        SgdLearner { params }
    }
}

impl Learner for SgdLearner {
    fn train_initial(
        &self,
        site: SiteId,
        partition: &Partition,
    ) -> Result<(Model, f64), ProtocolError> {
        let model = learning::train_local(partition, &self.params, site)?;
        let error = learning::evaluate(&model, partition)?;
        Ok((model, error))
    }

    fn update(
        &self,
        site: SiteId,
        model: &Model,
        partition: &Partition,
    ) -> Result<(Model, f64), ProtocolError> {
        let next = learning::update_model(model, partition, &self.params, site)?;
        let error = learning::evaluate(&next, partition)?;
        Ok((next, error))
    }

    fn evaluate(
        &self,
        _site: SiteId,
        model: &Model,
        partition: &Partition,
        _round: u32,
    ) -> Result<f64, ProtocolError> {
        Ok(learning::evaluate(model, partition)?)
    }
}

/// A learner that plays back a fixed table of errors instead of training.
///
/// The table maps `(site, round)` to the error that site reports at that
/// round: round 0 is initialization, and round `k` covers everything about
/// the `k`-th published update (the updater's own error and other sites'
/// bids). Models are fabricated deterministically so every `(site, round)`
/// pair still hashes distinctly, but no dataset is ever touched; a missing
/// entry is an error rather than a guess.
#[derive(Debug, Clone, Default)]
pub struct ScriptedLearner {
    table: BTreeMap<(u32, u32), f64>,
}

impl ScriptedLearner {
    pub fn new(entries: impl IntoIterator<Item = (u32, u32, f64)>) -> ScriptedLearner {
        let table = entries
            .into_iter()
            .map(|(site, round, error)| ((site, round), error))
            .collect();
        ScriptedLearner { table }
    }

    fn lookup(&self, site: SiteId, round: u32) -> Result<f64, ProtocolError> {
        self.table
            .get(&(site.0, round))
            .copied()
            .ok_or(ProtocolError::ScriptGap {
                site: site.0,
                round,
            })
    }

    /// Stand-in model for a site's pass at a round: two weights carrying the
    /// site id and round, enough to make every pass hash distinctly.
    fn fabricate(site: SiteId, round: u32) -> Model {
        Model {
            weights: vec![f64::from(site.0), f64::from(round)],
            round,
            origin_site: site,
        }
    }
}

impl Learner for ScriptedLearner {
    fn train_initial(
        &self,
        site: SiteId,
        _partition: &Partition,
    ) -> Result<(Model, f64), ProtocolError> {
        let error = self.lookup(site, 0)?;
        Ok((Self::fabricate(site, 0), error))
    }

    fn update(
        &self,
        site: SiteId,
        model: &Model,
        _partition: &Partition,
    ) -> Result<(Model, f64), ProtocolError> {
        let round = model.round + 1;
        let error = self.lookup(site, round + 1)?;
        Ok((Self::fabricate(site, round), error))
    }

    fn evaluate(
        &self,
        site: SiteId,
        _model: &Model,
        _partition: &Partition,
        round: u32,
    ) -> Result<f64, ProtocolError> {
        self.lookup(site, round)
    }
}

/// Where a site is in the protocol.
#[derive(Debug, Clone, PartialEq)]
pub enum SitePhase {
    /// Founding phase: announce a local error, then wait until every founding
    /// site has announced.
    AwaitingInitErrors,
    /// The site holds no obligations and watches the chain.
    Idle,
    /// Transiently training on a received model.
    Updating,
    /// The site published `model_hash` and collects bids until `deadline`.
    AwaitingBids { model_hash: Digest, deadline: u64 },
}

/// One site's private state. Everything else a site knows, it reads from the
/// chain.
#[derive(Debug, Clone)]
pub struct SiteState {
    pub id: SiteId,
    pub partition: Partition,
    pub phase: SitePhase,
    /// Model from this site's own latest pass.
    pub local_model: Option<Model>,
    /// This site's error on its own latest pass.
    pub local_error: f64,
    /// Announced the initialization error already.
    pub announced: bool,
    /// Model hashes this site has already evaluated (its own included), so
    /// each model draws at most one bid per site.
    pub evaluated: BTreeSet<Digest>,
    /// Transfers at or below this height are settled for this site.
    pub transfer_cursor: u64,
    /// Rows arrived since the last poll; probe the latest model next poll.
    pub pending_new_data: bool,
}

impl SiteState {
    /// A founding site that takes part in initialization.
    pub fn founding(id: SiteId, partition: Partition) -> SiteState {
        SiteState {
            id,
            partition,
            phase: SitePhase::AwaitingInitErrors,
            local_model: None,
            local_error: 0.0,
            announced: false,
            evaluated: BTreeSet::new(),
            transfer_cursor: 0,
            pending_new_data: false,
        }
    }

    /// A site joining an already initialized network. All of its data counts
    /// as new, so its first poll probes the latest model.
    pub fn joining(id: SiteId, partition: Partition) -> SiteState {
        SiteState {
            id,
            partition,
            phase: SitePhase::Idle,
            local_model: None,
            local_error: 0.0,
            announced: true,
            evaluated: BTreeSet::new(),
            transfer_cursor: 0,
            pending_new_data: true,
        }
    }
}

/// Outcome of closing a bid window.
#[derive(Debug, Clone, PartialEq)]
pub enum BidOutcome {
    /// A site reported a strictly higher error; control moves to it.
    Transfer(Transaction),
    /// Nobody beat the custodian's error; the network has converged on this
    /// model.
    Consensus,
    /// Custody already moved on (or the model was superseded); nothing to
    /// decide.
    Stale,
}

/// One poll of the chain, the heart of the per-site loop. Returns the
/// transactions the site wants mined, in order.
pub fn on_poll(
    site: &mut SiteState,
    chain: &Chain,
    tick: u64,
    cfg: &ProtocolConfig,
    learner: &dyn Learner,
) -> Result<Vec<Transaction>, ProtocolError> {
    let mut emissions = Vec::new();

    if site.phase == SitePhase::AwaitingInitErrors {
        emissions.extend(poi_initialize(site, chain, tick, cfg, learner)?);
        if site.phase != SitePhase::Idle {
            // Still waiting for announcements, or this site just won and is
            // now collecting bids; either way there is nothing else to do.
            return Ok(emissions);
        }
    }

    // New local rows: probe the latest model against the full local data.
    if site.pending_new_data && chain.latest_update().is_some() {
        site.pending_new_data = false;
        emissions.extend(poi_new(site, chain, learner)?);
    }

    // An unseen model at the tip: place this site's one bid on it.
    if let Some(update) = chain.latest_update() {
        if update.site != site.id && !site.evaluated.contains(&update.model_hash) {
            let model = deserialize_model(update.model_bytes)?;
            let error = learner.evaluate(site.id, &model, &site.partition, model.round + 1)?;
            site.evaluated.insert(update.model_hash);
            emissions.push(Transaction::reference(
                site.id,
                update.site,
                Flag::Evaluate,
                update.model_hash,
                error,
            )?);
        }
    }

    // A transfer addressed to this site: take over, train, publish.
    if site.phase == SitePhase::Idle {
        if let Some(transfer) = chain.latest_transfer_to(site.id, site.transfer_cursor) {
            site.transfer_cursor = transfer.height;
            emissions.push(on_transfer_received(
                site,
                chain,
                transfer.model_hash,
                tick,
                cfg,
                learner,
            )?);
        }
    }

    Ok(emissions)
}

/// Founding-phase poll logic: announce once, then wait for every founding
/// site's error. The site with the lowest announced error (ties to the
/// lowest id) transfers control to itself and publishes its local model
/// unchanged; everyone else goes idle.
pub fn poi_initialize(
    site: &mut SiteState,
    chain: &Chain,
    tick: u64,
    cfg: &ProtocolConfig,
    learner: &dyn Learner,
) -> Result<Vec<Transaction>, ProtocolError> {
    let mut emissions = Vec::new();

    if !site.announced {
        let (model, error) = learner.train_initial(site.id, &site.partition)?;
        let model_hash = Digest::of(&serialize_model(&model));
        site.local_model = Some(model);
        site.local_error = error;
        site.announced = true;
        emissions.push(Transaction::reference(
            site.id,
            site.id,
            Flag::Initialize,
            model_hash,
            error,
        )?);
    }

    // Read announcements from the chain plus anything this poll just
    // emitted, since emitted transactions are only mined afterwards.
    let mut announced: BTreeMap<SiteId, f64> = chain.initialization_errors().into_iter().collect();
    for tx in &emissions {
        announced.entry(tx.from).or_insert(tx.error);
    }
    if (announced.len() as u32) < cfg.n_sites {
        return Ok(emissions);
    }

    let (&winner, _) = announced
        .iter()
        .min_by(|a, b| a.1.total_cmp(b.1).then(a.0.cmp(b.0)))
        .expect("announcement map is non-empty");

    if winner == site.id {
        let model_hash = site
            .local_model
            .as_ref()
            .map(|model| Digest::of(&serialize_model(model)))
            .ok_or(ProtocolError::NoLocalModel(site.id))?;
        emissions.push(Transaction::reference(
            site.id,
            site.id,
            Flag::Transfer,
            model_hash,
            site.local_error,
        )?);
        emissions.push(publish_initial_model(site, tick, cfg)?);
    } else {
        site.phase = SitePhase::Idle;
    }
    Ok(emissions)
}

/// Publish the initialization winner's local model, byte for byte as it was
/// trained; winning grants custody, not a head start on another pass.
pub fn publish_initial_model(
    site: &mut SiteState,
    tick: u64,
    cfg: &ProtocolConfig,
) -> Result<Transaction, ProtocolError> {
    let model = site
        .local_model
        .as_ref()
        .ok_or(ProtocolError::NoLocalModel(site.id))?;
    let bytes = serialize_model(model);
    learning::check_metadata_budget(bytes.len(), cfg.max_metadata_bytes)?;
    let tx = Transaction::update(site.id, site.id, bytes, site.local_error)?;
    site.evaluated.insert(tx.model_hash);
    site.phase = SitePhase::AwaitingBids {
        model_hash: tx.model_hash,
        deadline: tick + cfg.theta,
    };
    Ok(tx)
}

/// Act on a transfer of custody: fetch the referenced model from the chain,
/// continue training it on local data, and publish the result.
pub fn on_transfer_received(
    site: &mut SiteState,
    chain: &Chain,
    model_hash: Digest,
    tick: u64,
    cfg: &ProtocolConfig,
    learner: &dyn Learner,
) -> Result<Transaction, ProtocolError> {
    let bytes = chain
        .find_model(model_hash)
        .ok_or(ProtocolError::MissingModel { hash: model_hash })?;
    let received = deserialize_model(bytes)?;
    site.phase = SitePhase::Updating;
    let (next, error) = learner.update(site.id, &received, &site.partition)?;
    let next_bytes = serialize_model(&next);
    learning::check_metadata_budget(next_bytes.len(), cfg.max_metadata_bytes)?;
    site.local_model = Some(next);
    site.local_error = error;
    let tx = Transaction::update(site.id, site.id, next_bytes, error)?;
    site.evaluated.insert(tx.model_hash);
    site.phase = SitePhase::AwaitingBids {
        model_hash: tx.model_hash,
        deadline: tick + cfg.theta,
    };
    Ok(tx)
}

/// Close this site's bid window: hand control to the strictly highest bidder
/// (ties to the lowest site id), or declare consensus if nobody beat the
/// custodian's own error.
pub fn decide_bid(site: &mut SiteState, chain: &Chain) -> Result<BidOutcome, ProtocolError> {
    let SitePhase::AwaitingBids { model_hash, .. } = site.phase else {
        return Ok(BidOutcome::Stale);
    };

    let Some(update) = chain.latest_update() else {
        return Ok(BidOutcome::Stale);
    };
    if update.model_hash != model_hash {
        // Another model took the tip while this window was open.
        site.phase = SitePhase::Idle;
        return Ok(BidOutcome::Stale);
    }
    // A probe transfer may already have moved custody away from this site
    // while the window was open; the chain wins over the stopwatch.
    let custody_moved = chain
        .blocks()
        .iter()
        .any(|b| b.height > update.height && b.tx.flag == Flag::Transfer && b.tx.from == site.id);
    if custody_moved {
        site.phase = SitePhase::Idle;
        return Ok(BidOutcome::Stale);
    }

    let bids = chain.collect_evaluations(model_hash, update.height);
    let mut best: Option<(SiteId, f64)> = None;
    for (bidder, error) in bids {
        let better = match best {
            None => true,
            Some((best_site, best_error)) => {
                error > best_error || (error == best_error && bidder < best_site)
            }
        };
        if better {
            best = Some((bidder, error));
        }
    }

    site.phase = SitePhase::Idle;
    match best {
        Some((bidder, error)) if error > update.error => {
            let tx =
                Transaction::reference(site.id, bidder, Flag::Transfer, model_hash, error)?;
            Ok(BidOutcome::Transfer(tx))
        }
        _ => Ok(BidOutcome::Consensus),
    }
}

/// New-data probe: score the latest published model on the site's full local
/// data. Reporting a strictly higher error than the custodian claims custody
/// immediately, without waiting for a bid window.
pub fn poi_new(
    site: &mut SiteState,
    chain: &Chain,
    learner: &dyn Learner,
) -> Result<Option<Transaction>, ProtocolError> {
    let Some(update) = chain.latest_update() else {
        return Ok(None);
    };
    let model = deserialize_model(update.model_bytes)?;
    let error = learner.evaluate(site.id, &model, &site.partition, model.round + 2)?;
    site.evaluated.insert(update.model_hash);
    if error > update.error {
        let tx = Transaction::reference(
            update.site,
            site.id,
            Flag::Transfer,
            update.model_hash,
            error,
        )?;
        Ok(Some(tx))
    } else {
        Ok(None)
    }
}

/// Stopping rules checked after every published update: good enough (error
/// at or below the threshold) or old enough (iteration cap reached).
pub fn check_stop(chain: &Chain, cfg: &ProtocolConfig) -> Option<StopReason> {
    if let (Some(threshold), Some(update)) = (cfg.error_threshold, chain.latest_update()) {
        if update.error <= threshold {
            return Some(StopReason::Threshold);
        }
    }
    if let Some(cap) = cfg.max_iterations {
        if chain.update_count() >= cap {
            return Some(StopReason::Ttl);
        }
    }
    None
}
