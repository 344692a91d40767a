//! Deterministic simulator and library for ModelChain, a protocol that
//! coordinates decentralized online machine learning over a private
//! proof-of-work blockchain.
//!
//! Participating sites never exchange raw data. Instead, each model handoff is
//! a transaction on a shared chain: sites post their locally trained models as
//! `UPDATE` blocks, bid on the right to improve the current model by posting
//! `EVALUATE` blocks carrying their local error, and pass control with
//! `TRANSFER` blocks. The site that performs worst on the current model holds
//! the most information the model has not yet seen, so it updates next. When
//! no site can report a higher error than the current custodian, the network
//! has converged.
//!
//! The crate is organized bottom-up:
//!
//! - [`ledger`]: hash-chained blocks, mining, verification, and the on-disk
//!   chain dump format.
//! - [`learning`]: online logistic regression, model serialization, and the
//!   block metadata budget.
//! - [`protocol`]: per-site state machines for initialization, bidding, and
//!   control transfer, generic over a [`protocol::Learner`].
//! - [`simnet`]: a deterministic discrete-event network that drives many
//!   sites against one chain, with join/leave/new-data events.
//! - [`harness`]: scenario configs, dataset loading and partitioning, run
//!   reports, and chain/trace persistence used by the command-line tool.

pub mod harness;
pub mod ledger;
pub mod learning;
pub mod protocol;
pub mod simnet;

pub use harness::{RunArtifacts, ScenarioSpec};
pub use ledger::{Block, Chain, Digest, Flag, SiteId, Transaction};
pub use learning::{LearnerParams, Model, Partition, Row};
pub use protocol::{Learner, ProtocolConfig, StopReason};
pub use simnet::{RunOutcome, ScenarioAction, ScenarioEvent, TraceRecord, World};


