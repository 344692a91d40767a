//! Deterministic discrete-event simulation of a site network.
//!
//! One [`World`] drives every site against a single shared chain. Time is a
//! tick counter; each site polls the chain every `delta` ticks, and a
//! publishing site's bid window closes `theta` ticks after its update.
//! Mining takes zero ticks: a submitted transaction is sealed into a block
//! within the same event that emitted it, so the chain state a later event
//! observes at the same tick already includes earlier emissions.
//!
//! Events are processed in a single total order: by tick, then by event kind
//! (departures first, then joins, new data, polls, and finally bid-window
//! closings), then by site id, then by insertion order. With a deterministic
//! learner, identical inputs therefore replay an identical run, block for
//! block.

use crate::ledger::{Chain, Digest, Flag, LedgerError, SiteId};
use crate::learning::{deserialize_model, Model, Partition, Row};
use crate::protocol::{
    self, BidOutcome, Learner, ProtocolConfig, ProtocolError, SitePhase, SiteState, StopReason,
};
use std::cmp::Reverse;
use std::collections::{BTreeMap, BinaryHeap};
use thiserror::Error;

/// Externally scripted change to the network while it runs.
#[derive(Debug, Clone)]
pub struct ScenarioEvent {
    pub tick: u64,
    pub site: SiteId,
    pub action: ScenarioAction,
}

/// What a scripted event does to its site.
#[derive(Debug, Clone)]
pub enum ScenarioAction {
    /// The site appears with its partition after initialization has finished;
    /// all of its data counts as new.
    Join { partition: Partition },
    /// The site disappears; its queued events are cancelled.
    Leave,
    /// Rows are appended to the site's partition; the site probes the latest
    /// model at its next poll.
    NewData { rows: Vec<Row> },
}

/// Everything that happened in a run, in order: one record per mined block
/// plus lifecycle and stop markers.
#[derive(Debug, Clone, PartialEq)]
pub enum TraceRecord {
    /// A transaction was mined at `height` during `tick`.
    Tx {
        tick: u64,
        height: u64,
        from: SiteId,
        to: SiteId,
        flag: Flag,
        error: f64,
        model_hash: Digest,
    },
    /// A site joined, left, or received new data.
    Lifecycle {
        tick: u64,
        event: LifecycleKind,
        site: SiteId,
    },
    /// The run stopped.
    Stop { tick: u64, reason: StopReason },
}

#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub enum LifecycleKind {
    Join,
    Leave,
    NewData,
}

impl LifecycleKind {
    pub fn name(self) -> &'static str {
        match self {
            LifecycleKind::Join => "join",
            LifecycleKind::Leave => "leave",
            LifecycleKind::NewData => "new_data",
        }
    }

    pub fn from_name(name: &str) -> Option<LifecycleKind> {
        match name {
            "join" => Some(LifecycleKind::Join),
            "leave" => Some(LifecycleKind::Leave),
            "new_data" => Some(LifecycleKind::NewData),
            _ => None,
        }
    }
}

/// One block of the final chain, minus the genesis sentinel, as a compact
/// summary of how custody moved.
#[derive(Debug, Clone, Copy, PartialEq)]
pub struct TransferStep {
    pub height: u64,
    pub from: SiteId,
    pub to: SiteId,
    pub flag: Flag,
    pub error: f64,
}

/// Result of driving a world to its stopping rule.
#[derive(Debug, Clone, PartialEq)]
pub struct RunOutcome {
    pub stop_reason: StopReason,
    pub stop_tick: u64,
    /// The model custody last settled on.
    pub final_model: Model,
    /// The error its publisher reported for it.
    pub final_error: f64,
    pub final_update_height: u64,
    /// Number of published updates, the protocol's iteration count.
    pub iterations: u32,
    /// Every non-genesis block in order.
    pub transfer_trace: Vec<TransferStep>,
}

/// Errors raised while driving a simulation.
#[derive(Debug, Error)]
pub enum SimError {
    #[error(transparent)]
    Protocol(#[from] ProtocolError),
    #[error(transparent)]
    Ledger(#[from] LedgerError),
    #[error("scenario: {0}")]
    Scenario(String),
    #[error("{0} cannot join while the network is still initializing")]
    JoinDuringInit(SiteId),
    #[error("scenario event at tick {tick} names {site}, which is not in the network")]
    UnknownSite { tick: u64, site: SiteId },
    #[error("nothing can make progress after tick {tick} and no model was ever published")]
    Stalled { tick: u64 },
}

#[derive(Debug, Clone)]
enum EventKind {
    Leave,
    Join { partition: Partition },
    NewData { rows: Vec<Row> },
    Poll,
    WindowClose { model_hash: Digest },
}

impl EventKind {
    fn priority(&self) -> u8 {
        match self {
            EventKind::Leave => 0,
            EventKind::Join { .. } => 1,
            EventKind::NewData { .. } => 2,
            EventKind::Poll => 3,
            EventKind::WindowClose { .. } => 4,
        }
    }

    fn is_poll(&self) -> bool {
        matches!(self, EventKind::Poll)
    }
}

#[derive(Debug, Clone)]
struct Event {
    tick: u64,
    site: SiteId,
    seq: u64,
    kind: EventKind,
}

impl Event {
    fn key(&self) -> (u64, u8, u32, u64) {
        (self.tick, self.kind.priority(), self.site.0, self.seq)
    }
}

impl PartialEq for Event {
    fn eq(&self, other: &Self) -> bool {
        self.key() == other.key()
    }
}

impl Eq for Event {}

impl PartialOrd for Event {
    fn partial_cmp(&self, other: &Self) -> Option<std::cmp::Ordering> {
        Some(self.cmp(other))
    }
}

impl Ord for Event {
    fn cmp(&self, other: &Self) -> std::cmp::Ordering {
        self.key().cmp(&other.key())
    }
}

/// The whole simulated network: sites, the shared chain, and the event queue.
pub struct World {
    cfg: ProtocolConfig,
    learner: Box<dyn Learner>,
    chain: Chain,
    sites: BTreeMap<u32, SiteState>,
    queue: BinaryHeap<Reverse<Event>>,
    next_seq: u64,
    /// Queued events that are not polls; while this is zero the network can
    /// only idle-poll, which is how quiescence is detected.
    pending_non_poll: usize,
    tick: u64,
    /// Last tick at which a block was mined or the site set changed.
    last_progress: u64,
    trace: Vec<TraceRecord>,
    stopped: Option<(StopReason, u64)>,
}

impl World {
    /// Build a network of founding sites plus a script of later events. The
    /// founding set must match the configured site count exactly, because
    /// initialization waits for that many announcements.
    pub fn new(
        cfg: ProtocolConfig,
        learner: Box<dyn Learner>,
        founding: Vec<(SiteId, Partition)>,
        events: Vec<ScenarioEvent>,
    ) -> Result<World, SimError> {
        cfg.validate()?;
        if founding.len() != cfg.n_sites as usize {
            return Err(SimError::Scenario(format!(
                "{} founding sites for a {}-site network",
                founding.len(),
                cfg.n_sites
            )));
        }
        let chain = Chain::new(cfg.difficulty)?;
        let mut world = World {
            cfg,
            learner,
            chain,
            sites: BTreeMap::new(),
            queue: BinaryHeap::new(),
            next_seq: 0,
            pending_non_poll: 0,
            tick: 0,
            last_progress: 0,
            trace: Vec::new(),
            stopped: None,
        };
        for (id, partition) in founding {
            if id == SiteId(0) {
                return Err(SimError::Scenario(
                    "site 0 is reserved for the genesis sentinel".into(),
                ));
            }
            if world.sites.contains_key(&id.0) {
                return Err(SimError::Scenario(format!("{id} listed twice")));
            }
            world.sites.insert(id.0, SiteState::founding(id, partition));
            world.schedule(0, id, EventKind::Poll);
        }
        for event in events {
            let kind = match event.action {
                ScenarioAction::Join { partition } => EventKind::Join { partition },
                ScenarioAction::Leave => EventKind::Leave,
                ScenarioAction::NewData { rows } => EventKind::NewData { rows },
            };
            world.schedule(event.tick, event.site, kind);
        }
        Ok(world)
    }

    pub fn chain(&self) -> &Chain {
        &self.chain
    }

    pub fn trace(&self) -> &[TraceRecord] {
        &self.trace
    }

    pub fn tick(&self) -> u64 {
        self.tick
    }

    fn schedule(&mut self, tick: u64, site: SiteId, kind: EventKind) {
        if !kind.is_poll() {
            self.pending_non_poll += 1;
        }
        let seq = self.next_seq;
        self.next_seq += 1;
        self.queue.push(Reverse(Event {
            tick,
            site,
            seq,
            kind,
        }));
    }

    /// Drive the world until a stopping rule fires.
    pub fn run_until_stop(&mut self) -> Result<RunOutcome, SimError> {
        while self.stopped.is_none() {
            self.step()?;
        }
        self.outcome()
    }

    fn outcome(&self) -> Result<RunOutcome, SimError> {
        let (stop_reason, stop_tick) = self.stopped.expect("outcome is read after stopping");
        let update = self
            .chain
            .latest_update()
            .expect("every stopping rule follows a published update");
        let final_model = deserialize_model(update.model_bytes).map_err(ProtocolError::from)?;
        let transfer_trace = self
            .chain
            .blocks()
            .iter()
            .skip(1)
            .map(|block| TransferStep {
                height: block.height,
                from: block.tx.from,
                to: block.tx.to,
                flag: block.tx.flag,
                error: block.tx.error,
            })
            .collect();
        Ok(RunOutcome {
            stop_reason,
            stop_tick,
            final_model,
            final_error: update.error,
            final_update_height: update.height,
            iterations: self.chain.update_count(),
            transfer_trace,
        })
    }

    /// Process the next event. Before popping, check for quiescence: if no
    /// non-poll work is queued and a full poll interval has passed since
    /// anything changed, every site has re-read the chain and stayed silent,
    /// so the run can never progress again.
    fn step(&mut self) -> Result<(), SimError> {
        if self.stopped.is_some() {
            return Ok(());
        }
        let next_tick = match self.queue.peek() {
            Some(Reverse(event)) => event.tick,
            None => {
                return self.quiesce();
            }
        };
        if self.pending_non_poll == 0 && next_tick > self.last_progress + self.cfg.delta {
            return self.quiesce();
        }

        let Reverse(event) = self.queue.pop().expect("peeked above");
        self.tick = event.tick;
        if !event.kind.is_poll() {
            self.pending_non_poll -= 1;
        }

        match event.kind {
            EventKind::Poll => self.handle_poll(event.site)?,
            EventKind::WindowClose { model_hash } => {
                self.handle_window_close(event.site, model_hash)?
            }
            EventKind::Leave => self.handle_leave(event.site)?,
            EventKind::Join { partition } => self.handle_join(event.site, partition)?,
            EventKind::NewData { rows } => self.handle_new_data(event.site, rows)?,
        }
        Ok(())
    }

    fn quiesce(&mut self) -> Result<(), SimError> {
        if self.chain.update_count() == 0 {
            return Err(SimError::Stalled { tick: self.tick });
        }
        // Nobody can outbid the last published model any more; that is
        // consensus by silence.
        self.stop(StopReason::Consensus);
        Ok(())
    }

    fn stop(&mut self, reason: StopReason) {
        self.trace.push(TraceRecord::Stop {
            tick: self.tick,
            reason,
        });
        self.stopped = Some((reason, self.tick));
    }

    /// Mine one site's emissions in order, record them, and arm bid windows
    /// and stopping rules for published updates.
    fn mine_batch(
        &mut self,
        site: SiteId,
        txs: Vec<crate::ledger::Transaction>,
    ) -> Result<(), SimError> {
        let mut pending_self_transfer: Option<u64> = None;
        for tx in txs {
            let flag = tx.flag;
            let to = tx.to;
            let block = self.chain.mine_and_append(tx)?;
            let height = block.height;
            self.trace.push(TraceRecord::Tx {
                tick: self.tick,
                height,
                from: block.tx.from,
                to: block.tx.to,
                flag,
                error: block.tx.error,
                model_hash: block.tx.model_hash,
            });
            let model_hash = block.tx.model_hash;
            self.last_progress = self.tick;

            match flag {
                Flag::Transfer if to == site => {
                    // Possibly the initialization self-transfer; settled only
                    // if this same batch publishes the model right after.
                    pending_self_transfer = Some(height);
                }
                Flag::Update => {
                    if let Some(transfer_height) = pending_self_transfer.take() {
                        if let Some(state) = self.sites.get_mut(&site.0) {
                            state.transfer_cursor = transfer_height;
                        }
                    }
                    self.schedule(
                        self.tick + self.cfg.theta,
                        site,
                        EventKind::WindowClose { model_hash },
                    );
                    if let Some(reason) = protocol::check_stop(&self.chain, &self.cfg) {
                        self.stop(reason);
                        return Ok(());
                    }
                }
                _ => {}
            }
        }
        Ok(())
    }

    fn handle_poll(&mut self, site_id: SiteId) -> Result<(), SimError> {
        let Some(site) = self.sites.get_mut(&site_id.0) else {
            // The site left; its heartbeat dies with it.
            return Ok(());
        };
        let txs = protocol::on_poll(site, &self.chain, self.tick, &self.cfg, &*self.learner)?;
        let next_poll = self.tick + self.cfg.delta;
        self.mine_batch(site_id, txs)?;
        if self.stopped.is_none() {
            self.schedule(next_poll, site_id, EventKind::Poll);
        }
        Ok(())
    }

    fn handle_window_close(&mut self, site_id: SiteId, model_hash: Digest) -> Result<(), SimError> {
        let Some(site) = self.sites.get_mut(&site_id.0) else {
            return Ok(());
        };
        if !matches!(&site.phase, SitePhase::AwaitingBids { model_hash: hash, .. } if *hash == model_hash)
        {
            return Ok(());
        }
        match protocol::decide_bid(site, &self.chain)? {
            BidOutcome::Transfer(tx) => self.mine_batch(site_id, vec![tx])?,
            BidOutcome::Consensus => {
                if self.pending_non_poll == 0 {
                    self.stop(StopReason::Consensus);
                }
                // Otherwise scripted events are still due; they may hand the
                // model somewhere new, so the run continues.
            }
            BidOutcome::Stale => {}
        }
        Ok(())
    }

    fn handle_leave(&mut self, site_id: SiteId) -> Result<(), SimError> {
        if self.sites.remove(&site_id.0).is_none() {
            return Err(SimError::UnknownSite {
                tick: self.tick,
                site: site_id,
            });
        }
        // Cancel everything the departed site still had queued.
        let drained = std::mem::take(&mut self.queue);
        for Reverse(event) in drained.into_iter() {
            if event.site == site_id {
                if !event.kind.is_poll() {
                    self.pending_non_poll -= 1;
                }
            } else {
                self.queue.push(Reverse(event));
            }
        }
        self.trace.push(TraceRecord::Lifecycle {
            tick: self.tick,
            event: LifecycleKind::Leave,
            site: site_id,
        });
        self.last_progress = self.tick;
        Ok(())
    }

    fn handle_join(&mut self, site_id: SiteId, partition: Partition) -> Result<(), SimError> {
        if self.chain.latest_update().is_none() {
            // The founding count is part of the initialization rule, so the
            // network cannot grow until the first model is published.
            return Err(SimError::JoinDuringInit(site_id));
        }
        if site_id == SiteId(0) {
            return Err(SimError::Scenario(
                "site 0 is reserved for the genesis sentinel".into(),
            ));
        }
        if self.sites.contains_key(&site_id.0) {
            return Err(SimError::Scenario(format!("{site_id} joined twice")));
        }
        self.sites
            .insert(site_id.0, SiteState::joining(site_id, partition));
        self.schedule(self.tick, site_id, EventKind::Poll);
        self.trace.push(TraceRecord::Lifecycle {
            tick: self.tick,
            event: LifecycleKind::Join,
            site: site_id,
        });
        self.last_progress = self.tick;
        Ok(())
    }

    fn handle_new_data(&mut self, site_id: SiteId, rows: Vec<Row>) -> Result<(), SimError> {
        let tick = self.tick;
        let Some(site) = self.sites.get_mut(&site_id.0) else {
            return Err(SimError::UnknownSite {
                tick,
                site: site_id,
            });
        };
        site.partition.rows.extend(rows);
        site.pending_new_data = true;
        self.trace.push(TraceRecord::Lifecycle {
            tick,
            event: LifecycleKind::NewData,
            site: site_id,
        });
        self.last_progress = tick;
        Ok(())
    }
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::protocol::ScriptedLearner;

    fn dummy_partition() -> Partition {
        Partition::new(vec![Row::new(vec![0.0], 0)])
    }

    fn founding(n: u32) -> Vec<(SiteId, Partition)> {
        (1..=n).map(|i| (SiteId(i), dummy_partition())).collect()
    }

    fn cfg(n_sites: u32) -> ProtocolConfig {
        ProtocolConfig {
            n_sites,
            difficulty: 2,
            ..ProtocolConfig::default()
        }
    }

    /// The two-site script: site 1 wins initialization with 0.5, site 2
    /// outbids with 0.9 and improves to 0.3, site 1 outbids with 0.8 and
    /// improves to 0.2.
    fn two_site_script() -> ScriptedLearner {
        ScriptedLearner::new([
            (1, 0, 0.5),
            (2, 0, 0.6),
            (2, 1, 0.9),
            (2, 2, 0.3),
            (1, 2, 0.8),
            (1, 3, 0.2),
        ])
    }

    #[test]
    fn events_pop_in_total_order() {
        let mk = |tick, site, seq, kind: EventKind| Event {
            tick,
            site: SiteId(site),
            seq,
            kind,
        };
        // Same tick and site: departures, then joins, then new data, then
        // polls, then window closings.
        assert!(mk(5, 1, 9, EventKind::Leave) < mk(5, 1, 0, EventKind::Join { partition: dummy_partition() }));
        assert!(
            mk(5, 1, 9, EventKind::Join { partition: dummy_partition() })
                < mk(5, 1, 0, EventKind::NewData { rows: vec![] })
        );
        assert!(mk(5, 1, 9, EventKind::NewData { rows: vec![] }) < mk(5, 1, 0, EventKind::Poll));
        assert!(
            mk(5, 1, 9, EventKind::Poll)
                < mk(5, 1, 0, EventKind::WindowClose { model_hash: Digest::ZERO })
        );
        // Ties break by site, then insertion order; ticks dominate all.
        assert!(mk(5, 1, 9, EventKind::Poll) < mk(5, 2, 0, EventKind::Poll));
        assert!(mk(5, 1, 3, EventKind::Poll) < mk(5, 1, 4, EventKind::Poll));
        assert!(mk(4, 9, 9, EventKind::WindowClose { model_hash: Digest::ZERO })
            < mk(5, 1, 0, EventKind::Leave));
    }

    #[test]
    fn error_threshold_stops_the_run_as_good_enough() {
        let mut config = cfg(2);
        config.error_threshold = Some(0.25);
        let mut world = World::new(
            config,
            Box::new(two_site_script()),
            founding(2),
            vec![],
        )
        .unwrap();
        let outcome = world.run_until_stop().unwrap();
        assert_eq!(outcome.stop_reason, StopReason::Threshold);
        assert_eq!(outcome.stop_tick, 7);
        assert_eq!(outcome.iterations, 3);
        assert_eq!(outcome.final_error, 0.2);
        assert_eq!(outcome.final_model.round, 2);
        assert_eq!(outcome.final_model.origin_site, SiteId(1));
        assert_eq!(world.chain().len(), 11);
        assert!(world.chain().verify().is_valid());

        let flags: Vec<(Flag, u32, u32)> = outcome
            .transfer_trace
            .iter()
            .map(|step| (step.flag, step.from.0, step.to.0))
            .collect();
        assert_eq!(
            flags,
            vec![
                (Flag::Initialize, 1, 1),
                (Flag::Initialize, 2, 2),
                (Flag::Transfer, 1, 1),
                (Flag::Update, 1, 1),
                (Flag::Evaluate, 2, 1),
                (Flag::Transfer, 1, 2),
                (Flag::Update, 2, 2),
                (Flag::Evaluate, 1, 2),
                (Flag::Transfer, 2, 1),
                (Flag::Update, 1, 1),
            ]
        );
    }

    #[test]
    fn iteration_cap_stops_the_run_as_old_enough() {
        let mut config = cfg(2);
        config.error_threshold = Some(0.25);
        config.max_iterations = Some(2);
        let mut world = World::new(
            config,
            Box::new(two_site_script()),
            founding(2),
            vec![],
        )
        .unwrap();
        let outcome = world.run_until_stop().unwrap();
        // The threshold is never reached within two updates, so the cap
        // fires instead.
        assert_eq!(outcome.stop_reason, StopReason::Ttl);
        assert_eq!(outcome.stop_tick, 4);
        assert_eq!(outcome.iterations, 2);
        assert_eq!(outcome.final_error, 0.3);
        assert_eq!(outcome.final_model.origin_site, SiteId(2));
        assert_eq!(world.chain().len(), 8);
        assert!(matches!(
            world.trace().last(),
            Some(TraceRecord::Stop { tick: 4, reason: StopReason::Ttl })
        ));
    }

    #[test]
    fn identical_inputs_replay_identical_runs() {
        let run = || {
            let mut config = cfg(2);
            config.error_threshold = Some(0.25);
            let mut world =
                World::new(config, Box::new(two_site_script()), founding(2), vec![]).unwrap();
            world.run_until_stop().unwrap();
            (world.chain().to_jsonl(), world.trace().to_vec())
        };
        let (chain_a, trace_a) = run();
        let (chain_b, trace_b) = run();
        assert_eq!(chain_a, chain_b);
        assert_eq!(trace_a, trace_b);
    }

    #[test]
    fn a_joining_site_probes_and_takes_custody() {
        let script = ScriptedLearner::new([
            (1, 0, 0.2),
            (2, 0, 0.5),
            (2, 1, 0.1),
            (3, 2, 0.6),
            (1, 2, 0.15),
            (2, 2, 0.12),
        ]);
        let events = vec![ScenarioEvent {
            tick: 5,
            site: SiteId(3),
            action: ScenarioAction::Join {
                partition: dummy_partition(),
            },
        }];
        let mut world = World::new(cfg(2), Box::new(script), founding(2), events).unwrap();
        let outcome = world.run_until_stop().unwrap();
        assert_eq!(outcome.stop_reason, StopReason::Consensus);
        assert_eq!(outcome.stop_tick, 8);
        assert_eq!(outcome.iterations, 2);
        assert_eq!(outcome.final_model.origin_site, SiteId(3));
        assert_eq!(outcome.final_error, 0.6);
        // The join shows up in the trace, and the probe transfer hands the
        // model from the custodian to the joiner.
        assert!(world.trace().contains(&TraceRecord::Lifecycle {
            tick: 5,
            event: LifecycleKind::Join,
            site: SiteId(3),
        }));
        let probe = world
            .chain()
            .blocks()
            .iter()
            .find(|b| b.tx.flag == Flag::Transfer && b.tx.to == SiteId(3))
            .expect("probe transfer mined");
        assert_eq!(probe.tx.from, SiteId(1));
        assert_eq!(probe.tx.error, 0.6);
    }

    #[test]
    fn joining_during_initialization_is_rejected() {
        let script = ScriptedLearner::new([(1, 0, 0.2), (2, 0, 0.5)]);
        let events = vec![ScenarioEvent {
            tick: 0,
            site: SiteId(3),
            action: ScenarioAction::Join {
                partition: dummy_partition(),
            },
        }];
        let mut world = World::new(cfg(2), Box::new(script), founding(2), events).unwrap();
        let err = world.run_until_stop().unwrap_err();
        assert!(matches!(err, SimError::JoinDuringInit(SiteId(3))));
    }

    #[test]
    fn new_data_with_a_lower_error_changes_nothing() {
        let script = ScriptedLearner::new([
            (1, 0, 0.2),
            (2, 0, 0.5),
            (2, 1, 0.1),
            (2, 2, 0.05),
        ]);
        let events = vec![ScenarioEvent {
            tick: 4,
            site: SiteId(2),
            action: ScenarioAction::NewData { rows: vec![] },
        }];
        let mut world = World::new(cfg(2), Box::new(script), founding(2), events).unwrap();
        let outcome = world.run_until_stop().unwrap();
        // The probe stays quiet, the world goes silent, and the original
        // model stands.
        assert_eq!(outcome.stop_reason, StopReason::Consensus);
        assert_eq!(outcome.iterations, 1);
        assert_eq!(outcome.final_model.origin_site, SiteId(1));
        assert_eq!(outcome.final_model.round, 0);
        assert_eq!(world.chain().len(), 6);
    }

    #[test]
    fn losing_the_initialization_winner_stalls_the_network() {
        let script = ScriptedLearner::new([(1, 0, 0.2), (2, 0, 0.5)]);
        let events = vec![ScenarioEvent {
            tick: 1,
            site: SiteId(1),
            action: ScenarioAction::Leave,
        }];
        let mut world = World::new(cfg(2), Box::new(script), founding(2), events).unwrap();
        let err = world.run_until_stop().unwrap_err();
        assert!(matches!(err, SimError::Stalled { .. }));
    }

    #[test]
    fn scenario_events_for_unknown_sites_are_errors() {
        let script = ScriptedLearner::new([(1, 0, 0.2), (2, 0, 0.5), (2, 1, 0.1)]);
        let events = vec![ScenarioEvent {
            tick: 2,
            site: SiteId(9),
            action: ScenarioAction::Leave,
        }];
        let mut world = World::new(cfg(2), Box::new(script), founding(2), events).unwrap();
        let err = world.run_until_stop().unwrap_err();
        assert!(matches!(
            err,
            SimError::UnknownSite {
                site: SiteId(9),
                ..
            }
        ));
    }

    #[test]
    fn world_construction_rejects_malformed_networks() {
        let script = || Box::new(ScriptedLearner::new([(1, 0, 0.2)]));
        assert!(matches!(
            World::new(cfg(2), script(), founding(1), vec![]),
            Err(SimError::Scenario(_))
        ));
        let twice = vec![
            (SiteId(1), dummy_partition()),
            (SiteId(1), dummy_partition()),
        ];
        assert!(matches!(
            World::new(cfg(2), script(), twice, vec![]),
            Err(SimError::Scenario(_))
        ));
        let zero = vec![(SiteId(0), dummy_partition())];
        assert!(matches!(
            World::new(cfg(1), script(), zero, vec![]),
            Err(SimError::Scenario(_))
        ));
    }
}
