//! Hash-chained transaction ledger with proof-of-work mining.
//!
//! Every model handoff in the protocol is a single transaction sealed into
//! its own block. Blocks commit to their full contents through one SHA-256
//! application over a fixed-layout header, so any change to a stored field is
//! visible as a hash mismatch, and rewriting history requires re-mining every
//! block from the edit to the tip.

use serde::{Deserialize, Serialize};
use sha2::{Digest as _, Sha256};
use std::fmt;
use std::str::FromStr;
use thiserror::Error;

/// Identifier of a participating site. Site 0 is reserved for the genesis
/// sentinel and never joins the network.
#[derive(Debug, Clone, Copy, PartialEq, Eq, PartialOrd, Ord, Hash, Serialize, Deserialize)]
#[serde(transparent)]
pub struct SiteId(pub u32);

impl fmt::Display for SiteId {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        write!(f, "site {}", self.0)
    }
}

/// Role a transaction plays in the protocol.
///
/// The numeric codes are part of the canonical byte layout and must not be
/// reordered.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash)]
#[repr(u8)]
pub enum Flag {
    /// A site announces its locally trained model's error to seed the network.
    Initialize = 0,
    /// A site publishes a new model; the only flag that carries model bytes.
    Update = 1,
    /// A site bids on the latest model by reporting its local error on it.
    Evaluate = 2,
    /// Control of the model passes to the highest-error bidder.
    Transfer = 3,
}

impl Flag {
    /// Canonical wire code for this flag.
    pub fn code(self) -> u8 {
        self as u8
    }

    /// Inverse of [`Flag::code`].
    pub fn from_code(code: u8) -> Option<Flag> {
        match code {
            0 => Some(Flag::Initialize),
            1 => Some(Flag::Update),
            2 => Some(Flag::Evaluate),
            3 => Some(Flag::Transfer),
            _ => None,
        }
    }

    /// Uppercase name used in dump and trace files.
    pub fn name(self) -> &'static str {
        match self {
            Flag::Initialize => "INITIALIZE",
            Flag::Update => "UPDATE",
            Flag::Evaluate => "EVALUATE",
            Flag::Transfer => "TRANSFER",
        }
    }

    /// Inverse of [`Flag::name`].
    pub fn from_name(name: &str) -> Option<Flag> {
        match name {
            "INITIALIZE" => Some(Flag::Initialize),
            "UPDATE" => Some(Flag::Update),
            "EVALUATE" => Some(Flag::Evaluate),
            "TRANSFER" => Some(Flag::Transfer),
            _ => None,
        }
    }
}

impl fmt::Display for Flag {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        f.write_str(self.name())
    }
}

/// A SHA-256 digest. Displays as lowercase hex.
#[derive(Clone, Copy, PartialEq, Eq, PartialOrd, Ord, Hash)]
pub struct Digest(pub [u8; 32]);

impl Digest {
    /// The all-zero digest, used as the genesis back-link and as the model
    /// hash of transactions that reference no model.
    pub const ZERO: Digest = Digest([0u8; 32]);

    /// Hash arbitrary bytes with a single SHA-256 application.
    pub fn of(bytes: &[u8]) -> Digest {
        let mut hasher = Sha256::new();
        hasher.update(bytes);
        Digest(hasher.finalize().into())
    }

    pub fn as_bytes(&self) -> &[u8; 32] {
        &self.0
    }

    /// Number of leading zero bits, scanning from the most significant bit of
    /// the first byte. This is the proof-of-work measure.
    pub fn leading_zero_bits(&self) -> u32 {
        let mut count = 0;
        for byte in self.0 {
            if byte == 0 {
                count += 8;
            } else {
                count += byte.leading_zeros();
                break;
            }
        }
        count
    }

    pub fn to_hex(&self) -> String {
        hex::encode(self.0)
    }
}

impl fmt::Display for Digest {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        f.write_str(&self.to_hex())
    }
}

impl fmt::Debug for Digest {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        write!(f, "Digest({})", self.to_hex())
    }
}

impl FromStr for Digest {
    type Err = hex::FromHexError;

    /// Parses the canonical lowercase form only, so every digest has exactly
    /// one byte representation and any edit to a stored digest is visible.
    fn from_str(s: &str) -> Result<Self, Self::Err> {
        if let Some(index) = s.bytes().position(|b| b.is_ascii_uppercase()) {
            return Err(hex::FromHexError::InvalidHexCharacter {
                c: s[index..].chars().next().unwrap_or('?'),
                index,
            });
        }
        let mut out = [0u8; 32];
        hex::decode_to_slice(s, &mut out)?;
        Ok(Digest(out))
    }
}

/// Errors raised by ledger construction, mining, and parsing.
#[derive(Debug, Error)]
pub enum LedgerError {
    #[error("transaction error {0} must be a finite value in [0, 1]")]
    ErrorOutOfRange(f64),
    #[error("{0} transactions cannot carry model bytes")]
    UnexpectedModel(Flag),
    #[error("UPDATE transactions must carry model bytes")]
    MissingModel,
    #[error("difficulty {0} exceeds the 256-bit hash width")]
    DifficultyTooLarge(u32),
    #[error("nonce space exhausted mining block {height} at difficulty {difficulty}")]
    NonceExhausted { height: u64, difficulty: u32 },
    #[error("block height {got} cannot extend a chain of length {chain_len}")]
    HeightMismatch { chain_len: u64, got: u64 },
    #[error("block {height} prev_hash does not match the current tip")]
    LinkMismatch { height: u64 },
    #[error("block {height} stored hash does not match its contents")]
    HashMismatch { height: u64 },
    #[error("block {height} hash does not meet difficulty {difficulty}")]
    DifficultyUnmet { height: u64, difficulty: u32 },
    #[error("chain dump is empty")]
    EmptyDump,
    #[error("chain dump line {line}: {reason}")]
    Dump { line: usize, reason: String },
}

/// One protocol action: who acts, who is addressed, what kind of action, the
/// reported misclassification error, and the model involved.
///
/// The ledger keeps the currency fields of its ancestry (`amount`, `fee`) but
/// the protocol pays nothing for information; both are pinned to zero and
/// excluded from the canonical byte layout.
#[derive(Debug, Clone, PartialEq)]
pub struct Transaction {
    pub from: SiteId,
    pub to: SiteId,
    pub flag: Flag,
    /// Misclassification error in [0, 1] attached to this action.
    pub error: f64,
    /// Digest of the referenced model's canonical bytes, or [`Digest::ZERO`]
    /// when the action references no model.
    pub model_hash: Digest,
    /// Serialized model, present exactly for `UPDATE` transactions.
    pub model: Option<Vec<u8>>,
    pub amount: u64,
    pub fee: u64,
}

impl Transaction {
    /// Build an `UPDATE` transaction around serialized model bytes. The model
    /// hash is always recomputed from the bytes so the two cannot drift.
    pub fn update(from: SiteId, to: SiteId, model: Vec<u8>, error: f64) -> Result<Transaction, LedgerError> {
        check_error_value(error)?;
        let model_hash = Digest::of(&model);
        Ok(Transaction {
            from,
            to,
            flag: Flag::Update,
            error,
            model_hash,
            model: Some(model),
            amount: 0,
            fee: 0,
        })
    }

    /// Build a transaction that references a model by digest without carrying
    /// its bytes (`INITIALIZE`, `EVALUATE`, `TRANSFER`).
    pub fn reference(
        from: SiteId,
        to: SiteId,
        flag: Flag,
        model_hash: Digest,
        error: f64,
    ) -> Result<Transaction, LedgerError> {
        if flag == Flag::Update {
            return Err(LedgerError::MissingModel);
        }
        check_error_value(error)?;
        Ok(Transaction {
            from,
            to,
            flag,
            error,
            model_hash,
            model: None,
            amount: 0,
            fee: 0,
        })
    }

    /// Check the structural invariants a well-formed transaction must hold.
    pub fn validate(&self) -> Result<(), LedgerError> {
        check_error_value(self.error)?;
        match (self.flag, &self.model) {
            (Flag::Update, None) => return Err(LedgerError::MissingModel),
            (flag, Some(_)) if flag != Flag::Update => {
                return Err(LedgerError::UnexpectedModel(flag))
            }
            _ => {}
        }
        Ok(())
    }

    /// Canonical byte layout hashed into the block header:
    /// `from` and `to` as u32 little-endian, the flag code, `error` as f64
    /// little-endian bits, the 32-byte model hash, then the model length as
    /// u32 little-endian followed by the model bytes (length 0 when absent).
    pub fn canonical_bytes(&self) -> Vec<u8> {
        let model = self.model.as_deref().unwrap_or(&[]);
        let mut out = Vec::with_capacity(4 + 4 + 1 + 8 + 32 + 4 + model.len());
        out.extend_from_slice(&self.from.0.to_le_bytes());
        out.extend_from_slice(&self.to.0.to_le_bytes());
        out.push(self.flag.code());
        out.extend_from_slice(&self.error.to_le_bytes());
        out.extend_from_slice(self.model_hash.as_bytes());
        out.extend_from_slice(&(model.len() as u32).to_le_bytes());
        out.extend_from_slice(model);
        out
    }
}

fn check_error_value(error: f64) -> Result<(), LedgerError> {
    if !error.is_finite() || !(0.0..=1.0).contains(&error) {
        return Err(LedgerError::ErrorOutOfRange(error));
    }
    Ok(())
}

/// A mined block holding exactly one transaction.
#[derive(Debug, Clone, PartialEq)]
pub struct Block {
    pub height: u64,
    pub prev_hash: Digest,
    pub nonce: u64,
    pub tx: Transaction,
    /// SHA-256 of [`Block::header_bytes`]; serves as the block id.
    pub block_hash: Digest,
}

impl Block {
    /// Byte string the block hash commits to: height as u64 little-endian,
    /// the previous block hash, the nonce as u64 little-endian, then the
    /// transaction's canonical bytes.
    pub fn header_bytes(height: u64, prev_hash: &Digest, nonce: u64, tx: &Transaction) -> Vec<u8> {
        let tx_bytes = tx.canonical_bytes();
        let mut out = Vec::with_capacity(8 + 32 + 8 + tx_bytes.len());
        out.extend_from_slice(&height.to_le_bytes());
        out.extend_from_slice(prev_hash.as_bytes());
        out.extend_from_slice(&nonce.to_le_bytes());
        out.extend_from_slice(&tx_bytes);
        out
    }

    /// Recompute this block's hash from its stored fields.
    pub fn computed_hash(&self) -> Digest {
        Digest::of(&Block::header_bytes(
            self.height,
            &self.prev_hash,
            self.nonce,
            &self.tx,
        ))
    }
}

/// Search nonces from zero upward until the header hash clears `difficulty`
/// leading zero bits. The search is exhaustive and deterministic, so the
/// returned nonce is the smallest that works and re-mining identical inputs
/// reproduces the identical block.
pub fn mine_block(
    prev_hash: Digest,
    height: u64,
    tx: Transaction,
    difficulty: u32,
) -> Result<Block, LedgerError> {
    if difficulty > 256 {
        return Err(LedgerError::DifficultyTooLarge(difficulty));
    }
    tx.validate()?;
    let mut nonce: u64 = 0;
    loop {
        let hash = Digest::of(&Block::header_bytes(height, &prev_hash, nonce, &tx));
        if hash.leading_zero_bits() >= difficulty {
            return Ok(Block {
                height,
                prev_hash,
                nonce,
                tx,
                block_hash: hash,
            });
        }
        nonce = match nonce.checked_add(1) {
            Some(next) => next,
            None => return Err(LedgerError::NonceExhausted { height, difficulty }),
        };
    }
}

/// A kind of rule violation found while auditing a chain.
#[derive(Debug, Clone, PartialEq, Eq)]
pub enum Violation {
    /// Stored hash differs from the hash recomputed over the block contents.
    HashMismatch,
    /// Block hash has fewer leading zero bits than the chain difficulty.
    DifficultyUnmet,
    /// `prev_hash` does not equal the previous block's stored hash (or zero
    /// for the genesis block).
    LinkBroken,
    /// Stored height differs from the block's position.
    HeightOutOfSequence,
    /// Model bytes present or absent in conflict with the flag.
    ModelPayloadMismatch,
    /// Carried model bytes do not hash to the stored model hash.
    ModelHashMismatch,
    /// Error field is not a finite value in [0, 1].
    ErrorOutOfRange,
    /// The protocol moves no currency; a nonzero amount or fee is foreign.
    NonZeroAmountOrFee,
}

impl fmt::Display for Violation {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        let text = match self {
            Violation::HashMismatch => "stored hash does not match block contents",
            Violation::DifficultyUnmet => "hash does not meet chain difficulty",
            Violation::LinkBroken => "prev_hash does not match previous block",
            Violation::HeightOutOfSequence => "height does not match chain position",
            Violation::ModelPayloadMismatch => "model payload conflicts with flag",
            Violation::ModelHashMismatch => "model bytes do not match model hash",
            Violation::ErrorOutOfRange => "error is not a finite value in [0, 1]",
            Violation::NonZeroAmountOrFee => "amount and fee must both be zero",
        };
        f.write_str(text)
    }
}

/// Result of a full-chain audit: every violation found, tagged with the
/// height of the offending block.
#[derive(Debug, Clone, Default)]
pub struct VerifyReport {
    pub violations: Vec<(u64, Violation)>,
}

impl VerifyReport {
    pub fn is_valid(&self) -> bool {
        self.violations.is_empty()
    }
}

/// View of the newest `UPDATE` block, the model currently under evaluation.
#[derive(Debug, Clone, PartialEq)]
pub struct UpdateView<'a> {
    pub height: u64,
    pub site: SiteId,
    pub error: f64,
    pub model_hash: Digest,
    pub model_bytes: &'a [u8],
}

/// View of a `TRANSFER` block.
#[derive(Debug, Clone, Copy, PartialEq)]
pub struct TransferView {
    pub height: u64,
    pub from: SiteId,
    pub to: SiteId,
    pub model_hash: Digest,
    pub error: f64,
}

/// An append-only block chain with a fixed proof-of-work difficulty.
#[derive(Debug, Clone)]
pub struct Chain {
    blocks: Vec<Block>,
    difficulty: u32,
}

impl Chain {
    /// Start a new chain by mining the fixed genesis block: height 0, zero
    /// back-link, and a sentinel `TRANSFER` from site 0 to itself with error
    /// zero and no model. Identical difficulty always yields the identical
    /// genesis block.
    pub fn new(difficulty: u32) -> Result<Chain, LedgerError> {
        let tx = Transaction::reference(SiteId(0), SiteId(0), Flag::Transfer, Digest::ZERO, 0.0)?;
        let genesis = mine_block(Digest::ZERO, 0, tx, difficulty)?;
        Ok(Chain {
            blocks: vec![genesis],
            difficulty,
        })
    }

    /// Rebuild a chain from already mined blocks, auditing them in full.
    pub fn from_blocks(blocks: Vec<Block>, difficulty: u32) -> Result<Chain, LedgerError> {
        let chain = Chain { blocks, difficulty };
        if chain.blocks.is_empty() {
            return Err(LedgerError::EmptyDump);
        }
        match chain.verify().violations.first() {
            None => Ok(chain),
            Some((height, violation)) => Err(LedgerError::Dump {
                line: *height as usize + 1,
                reason: violation.to_string(),
            }),
        }
    }

    pub fn difficulty(&self) -> u32 {
        self.difficulty
    }

    pub fn blocks(&self) -> &[Block] {
        &self.blocks
    }

    pub fn len(&self) -> u64 {
        self.blocks.len() as u64
    }

    pub fn is_empty(&self) -> bool {
        self.blocks.is_empty()
    }

    pub fn tip(&self) -> &Block {
        self.blocks.last().expect("chain always holds genesis")
    }

    /// Mine a transaction onto the tip and append the resulting block.
    pub fn mine_and_append(&mut self, tx: Transaction) -> Result<&Block, LedgerError> {
        let block = mine_block(self.tip().block_hash, self.len(), tx, self.difficulty)?;
        self.append(block)?;
        Ok(self.tip())
    }

    /// Append an externally mined block after checking height continuity,
    /// back-link, stored hash, difficulty, and transaction invariants.
    pub fn append(&mut self, block: Block) -> Result<(), LedgerError> {
        if block.height != self.len() {
            return Err(LedgerError::HeightMismatch {
                chain_len: self.len(),
                got: block.height,
            });
        }
        if block.prev_hash != self.tip().block_hash {
            return Err(LedgerError::LinkMismatch {
                height: block.height,
            });
        }
        if block.computed_hash() != block.block_hash {
            return Err(LedgerError::HashMismatch {
                height: block.height,
            });
        }
        if block.block_hash.leading_zero_bits() < self.difficulty {
            return Err(LedgerError::DifficultyUnmet {
                height: block.height,
                difficulty: self.difficulty,
            });
        }
        block.tx.validate()?;
        self.blocks.push(block);
        Ok(())
    }

    /// Audit every block and report all violations instead of stopping at the
    /// first. An empty report means the chain is internally consistent.
    pub fn verify(&self) -> VerifyReport {
        let mut report = VerifyReport::default();
        let mut push = |height: u64, violation: Violation| report.violations.push((height, violation));
        for (idx, block) in self.blocks.iter().enumerate() {
            let pos = idx as u64;
            if block.height != pos {
                push(pos, Violation::HeightOutOfSequence);
            }
            let expected_link = if idx == 0 {
                Digest::ZERO
            } else {
                self.blocks[idx - 1].block_hash
            };
            if block.prev_hash != expected_link {
                push(pos, Violation::LinkBroken);
            }
            if block.computed_hash() != block.block_hash {
                push(pos, Violation::HashMismatch);
            }
            if block.block_hash.leading_zero_bits() < self.difficulty {
                push(pos, Violation::DifficultyUnmet);
            }
            let tx = &block.tx;
            if !tx.error.is_finite() || !(0.0..=1.0).contains(&tx.error) {
                push(pos, Violation::ErrorOutOfRange);
            }
            match (tx.flag, &tx.model) {
                (Flag::Update, None) => push(pos, Violation::ModelPayloadMismatch),
                (flag, Some(_)) if flag != Flag::Update => {
                    push(pos, Violation::ModelPayloadMismatch)
                }
                (Flag::Update, Some(bytes)) if Digest::of(bytes) != tx.model_hash => {
                    push(pos, Violation::ModelHashMismatch)
                }
                _ => {}
            }
            if tx.amount != 0 || tx.fee != 0 {
                push(pos, Violation::NonZeroAmountOrFee);
            }
        }
        report
    }

    /// The newest `UPDATE` block, if any site has published a model yet.
    pub fn latest_update(&self) -> Option<UpdateView<'_>> {
        self.blocks.iter().rev().find_map(|block| {
            let model = block.tx.model.as_deref()?;
            (block.tx.flag == Flag::Update).then_some(UpdateView {
                height: block.height,
                site: block.tx.from,
                error: block.tx.error,
                model_hash: block.tx.model_hash,
                model_bytes: model,
            })
        })
    }

    /// Number of `UPDATE` blocks on the chain, the protocol's iteration count.
    pub fn update_count(&self) -> u32 {
        self.blocks
            .iter()
            .filter(|block| block.tx.flag == Flag::Update)
            .count() as u32
    }

    /// Collect `EVALUATE` bids on one model, in chain order, keeping each
    /// site's first bid. Only blocks strictly above `since_height` are
    /// considered so stale bids on earlier appearances are ignored.
    pub fn collect_evaluations(&self, model_hash: Digest, since_height: u64) -> Vec<(SiteId, f64)> {
        let mut bids: Vec<(SiteId, f64)> = Vec::new();
        for block in &self.blocks {
            if block.height <= since_height
                || block.tx.flag != Flag::Evaluate
                || block.tx.model_hash != model_hash
            {
                continue;
            }
            if !bids.iter().any(|(site, _)| *site == block.tx.from) {
                bids.push((block.tx.from, block.tx.error));
            }
        }
        bids
    }

    /// The newest `TRANSFER` addressed to `site` strictly above
    /// `after_height`, excluding the genesis sentinel.
    pub fn latest_transfer_to(&self, site: SiteId, after_height: u64) -> Option<TransferView> {
        self.blocks
            .iter()
            .rev()
            .filter(|block| block.height > after_height && block.height > 0)
            .find(|block| block.tx.flag == Flag::Transfer && block.tx.to == site)
            .map(|block| TransferView {
                height: block.height,
                from: block.tx.from,
                to: block.tx.to,
                model_hash: block.tx.model_hash,
                error: block.tx.error,
            })
    }

    /// Look up stored model bytes by their digest.
    pub fn find_model(&self, model_hash: Digest) -> Option<&[u8]> {
        self.blocks.iter().rev().find_map(|block| {
            let bytes = block.tx.model.as_deref()?;
            (block.tx.flag == Flag::Update && block.tx.model_hash == model_hash).then_some(bytes)
        })
    }

    /// Errors reported at initialization time: one `INITIALIZE` per site, in
    /// chain order.
    pub fn initialization_errors(&self) -> Vec<(SiteId, f64)> {
        self.blocks
            .iter()
            .filter(|block| block.tx.flag == Flag::Initialize)
            .map(|block| (block.tx.from, block.tx.error))
            .collect()
    }

    /// Serialize to the line-delimited dump format, one block per line.
    pub fn to_jsonl(&self) -> String {
        let mut out = String::new();
        for block in &self.blocks {
            let record = BlockRecord::from_block(block);
            out.push_str(&serde_json::to_string(&record).expect("block record serializes"));
            out.push('\n');
        }
        out
    }

    /// Parse a chain from its line-delimited dump.
    ///
    /// The dump format carries no difficulty, so the loader adopts the
    /// largest difficulty every stored hash satisfies. Tampered blocks are
    /// still caught: any edit to a stored field breaks the recomputed hash or
    /// the link structure regardless of the difficulty adopted.
    pub fn from_jsonl(text: &str) -> Result<Chain, LedgerError> {
        let mut blocks = Vec::new();
        for (idx, line) in text.lines().enumerate() {
            if line.trim().is_empty() {
                continue;
            }
            let record: BlockRecord =
                serde_json::from_str(line).map_err(|err| LedgerError::Dump {
                    line: idx + 1,
                    reason: err.to_string(),
                })?;
            blocks.push(record.into_block().map_err(|reason| LedgerError::Dump {
                line: idx + 1,
                reason,
            })?);
        }
        if blocks.is_empty() {
            return Err(LedgerError::EmptyDump);
        }
        let difficulty = blocks
            .iter()
            .map(|block| block.block_hash.leading_zero_bits())
            .min()
            .unwrap_or(0);
        Ok(Chain { blocks, difficulty })
    }
}

/// One line of the chain dump.
#[derive(Debug, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
struct BlockRecord {
    height: u64,
    prev_hash: String,
    nonce: u64,
    block_hash: String,
    tx: TxRecord,
}

#[derive(Debug, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
struct TxRecord {
    from: u32,
    to: u32,
    flag: String,
    error: f64,
    model_hash: String,
    model_b64: Option<String>,
}

impl BlockRecord {
    fn from_block(block: &Block) -> BlockRecord {
        use base64::engine::general_purpose::STANDARD;
        use base64::Engine as _;
        BlockRecord {
            height: block.height,
            prev_hash: block.prev_hash.to_hex(),
            nonce: block.nonce,
            block_hash: block.block_hash.to_hex(),
            tx: TxRecord {
                from: block.tx.from.0,
                to: block.tx.to.0,
                flag: block.tx.flag.name().to_string(),
                error: block.tx.error,
                model_hash: block.tx.model_hash.to_hex(),
                model_b64: block
                    .tx
                    .model
                    .as_ref()
                    .map(|bytes| STANDARD.encode(bytes)),
            },
        }
    }

    fn into_block(self) -> Result<Block, String> {
        use base64::engine::general_purpose::STANDARD;
        use base64::Engine as _;
        let prev_hash = Digest::from_str(&self.prev_hash)
            .map_err(|err| format!("bad prev_hash: {err}"))?;
        let block_hash = Digest::from_str(&self.block_hash)
            .map_err(|err| format!("bad block_hash: {err}"))?;
        let model_hash = Digest::from_str(&self.tx.model_hash)
            .map_err(|err| format!("bad model_hash: {err}"))?;
        let flag = Flag::from_name(&self.tx.flag)
            .ok_or_else(|| format!("unknown flag {:?}", self.tx.flag))?;
        let model = self
            .tx
            .model_b64
            .map(|b64| STANDARD.decode(b64.as_bytes()))
            .transpose()
            .map_err(|err| format!("bad model_b64: {err}"))?;
        Ok(Block {
            height: self.height,
            prev_hash,
            nonce: self.nonce,
            tx: Transaction {
                from: SiteId(self.tx.from),
                to: SiteId(self.tx.to),
                flag,
                error: self.tx.error,
                model_hash,
                model,
                amount: 0,
                fee: 0,
            },
            block_hash,
        })
    }
}

#[cfg(test)]
mod tests {
    use super::*;

    fn ref_update_tx() -> Transaction {
        Transaction::update(SiteId(1), SiteId(2), vec![0xAA, 0xBB], 0.25).unwrap()
    }

    #[test]
    fn sha256_matches_published_vectors() {
        assert_eq!(
            Digest::of(b"abc").to_hex(),
            "ba7816bf8f01cfea414140de5dae2223b00361a396177a9cb410ff61f20015ad"
        );
        assert_eq!(
            Digest::of(b"").to_hex(),
            "e3b0c44298fc1c149afbf4c8996fb92427ae41e4649b934ca495991b7852b855"
        );
    }

    #[test]
    fn leading_zero_bits_counts_from_most_significant_bit() {
        assert_eq!(Digest::ZERO.leading_zero_bits(), 256);
        let mut one_high = [0u8; 32];
        one_high[0] = 0x80;
        assert_eq!(Digest(one_high).leading_zero_bits(), 0);
        let mut twelve = [0u8; 32];
        twelve[1] = 0x0F;
        assert_eq!(Digest(twelve).leading_zero_bits(), 12);
        let mut byte_edge = [0u8; 32];
        byte_edge[2] = 0x01;
        assert_eq!(Digest(byte_edge).leading_zero_bits(), 23);
    }

    #[test]
    fn canonical_bytes_match_frozen_layout() {
        // Computed independently from the layout definition with Python's
        // hashlib and struct modules.
        assert_eq!(
            hex::encode(ref_update_tx().canonical_bytes()),
            "010000000200000001000000000000d03fd798d1fac6bd4bb1c11f50312760351013379a0ab6f0a8c0af8a506b96b2525a02000000aabb"
        );
        let genesis_tx =
            Transaction::reference(SiteId(0), SiteId(0), Flag::Transfer, Digest::ZERO, 0.0)
                .unwrap();
        assert_eq!(
            hex::encode(genesis_tx.canonical_bytes()),
            "0000000000000000030000000000000000000000000000000000000000000000000000000000000000000000000000000000000000"
        );
    }

    #[test]
    fn header_hash_matches_frozen_value() {
        let header = Block::header_bytes(3, &Digest([0x11; 32]), 7, &ref_update_tx());
        assert_eq!(
            Digest::of(&header).to_hex(),
            "3b019451f5badcb26db1fc49e13390045cd45b8638558391f979ad316372e688"
        );
    }

    #[test]
    fn genesis_is_fixed_for_a_difficulty() {
        let chain = Chain::new(12).unwrap();
        let genesis = &chain.blocks()[0];
        assert_eq!(genesis.height, 0);
        assert_eq!(genesis.prev_hash, Digest::ZERO);
        assert_eq!(genesis.nonce, 1164);
        assert_eq!(
            genesis.block_hash.to_hex(),
            "000a10456b51af29ca7947308b7e8e7ba7377e6370a7b903809c742a397f42ec"
        );
        assert_eq!(genesis.tx.flag, Flag::Transfer);
        assert_eq!(genesis.tx.from, SiteId(0));
        assert_eq!(genesis.tx.to, SiteId(0));
        assert_eq!(genesis.tx.error, 0.0);
        assert_eq!(genesis.tx.model_hash, Digest::ZERO);
        assert!(genesis.tx.model.is_none());
        let again = Chain::new(12).unwrap();
        assert_eq!(again.blocks()[0], *genesis);
    }

    #[test]
    fn mining_is_deterministic_and_returns_smallest_nonce() {
        let chain = Chain::new(12).unwrap();
        let prev = chain.tip().block_hash;
        let block = mine_block(prev, 1, ref_update_tx(), 12).unwrap();
        assert_eq!(block.nonce, 7132);
        assert_eq!(
            block.block_hash.to_hex(),
            "0007a4147571f877d3615c44940e861b9e64dd0ec93a5c065ba740093c9eeaec"
        );
        let again = mine_block(prev, 1, ref_update_tx(), 12).unwrap();
        assert_eq!(again, block);
        for nonce in 0..block.nonce {
            let hash = Digest::of(&Block::header_bytes(1, &prev, nonce, &ref_update_tx()));
            assert!(
                hash.leading_zero_bits() < 12,
                "nonce {nonce} already met the difficulty"
            );
        }
    }

    #[test]
    fn transaction_invariants_are_enforced() {
        assert!(matches!(
            Transaction::update(SiteId(1), SiteId(1), vec![1], f64::NAN),
            Err(LedgerError::ErrorOutOfRange(_))
        ));
        assert!(matches!(
            Transaction::update(SiteId(1), SiteId(1), vec![1], -0.1),
            Err(LedgerError::ErrorOutOfRange(_))
        ));
        assert!(matches!(
            Transaction::update(SiteId(1), SiteId(1), vec![1], 1.5),
            Err(LedgerError::ErrorOutOfRange(_))
        ));
        assert!(matches!(
            Transaction::reference(SiteId(1), SiteId(1), Flag::Update, Digest::ZERO, 0.5),
            Err(LedgerError::MissingModel)
        ));
        let mut smuggled =
            Transaction::reference(SiteId(1), SiteId(2), Flag::Evaluate, Digest::ZERO, 0.5)
                .unwrap();
        smuggled.model = Some(vec![1, 2, 3]);
        assert!(matches!(
            smuggled.validate(),
            Err(LedgerError::UnexpectedModel(Flag::Evaluate))
        ));
        let boundary = Transaction::update(SiteId(1), SiteId(1), vec![1], 1.0).unwrap();
        assert!(boundary.validate().is_ok());
    }

    #[test]
    fn flag_codes_and_names_round_trip() {
        for flag in [Flag::Initialize, Flag::Update, Flag::Evaluate, Flag::Transfer] {
            assert_eq!(Flag::from_code(flag.code()), Some(flag));
            assert_eq!(Flag::from_name(flag.name()), Some(flag));
        }
        assert_eq!(Flag::from_code(4), None);
        assert_eq!(Flag::from_name("UPDATE "), None);
    }

    fn small_chain(difficulty: u32, updates: u32) -> Chain {
        let mut chain = Chain::new(difficulty).unwrap();
        for i in 0..updates {
            let model = vec![i as u8, 0x10 + i as u8];
            let tx = Transaction::update(SiteId(i + 1), SiteId(i + 1), model, 0.5).unwrap();
            chain.mine_and_append(tx).unwrap();
        }
        chain
    }

    #[test]
    fn append_rejects_bad_blocks() {
        let mut chain = Chain::new(8).unwrap();
        let good = mine_block(chain.tip().block_hash, 1, ref_update_tx(), 8).unwrap();

        let mut wrong_height = good.clone();
        wrong_height.height = 5;
        assert!(matches!(
            chain.append(wrong_height),
            Err(LedgerError::HeightMismatch { chain_len: 1, got: 5 })
        ));

        let unlinked = mine_block(Digest([0x42; 32]), 1, ref_update_tx(), 8).unwrap();
        assert!(matches!(
            chain.append(unlinked),
            Err(LedgerError::LinkMismatch { height: 1 })
        ));

        let mut tampered = good.clone();
        tampered.tx.error = 0.75;
        assert!(matches!(
            chain.append(tampered),
            Err(LedgerError::HashMismatch { height: 1 })
        ));

        let weak = mine_block(chain.tip().block_hash, 1, ref_update_tx(), 0).unwrap();
        if weak.block_hash.leading_zero_bits() < 8 {
            assert!(matches!(
                chain.append(weak),
                Err(LedgerError::DifficultyUnmet { height: 1, difficulty: 8 })
            ));
        }

        chain.append(good).unwrap();
        assert_eq!(chain.len(), 2);
        assert!(chain.verify().is_valid());
    }

    #[test]
    fn verify_pinpoints_tampered_fields() {
        let mut chain = small_chain(8, 3);
        assert!(chain.verify().is_valid());

        let mut edited = chain.clone();
        edited.blocks[2].tx.error = 0.9;
        let report = edited.verify();
        assert!(report
            .violations
            .contains(&(2, Violation::HashMismatch)));

        let mut edited = chain.clone();
        edited.blocks[1].tx.model = Some(vec![0xFF]);
        let report = edited.verify();
        assert!(report.violations.contains(&(1, Violation::HashMismatch)));
        assert!(report
            .violations
            .contains(&(1, Violation::ModelHashMismatch)));

        let mut edited = chain.clone();
        edited.blocks[3].nonce += 1;
        assert!(edited
            .verify()
            .violations
            .contains(&(3, Violation::HashMismatch)));

        let mut edited = chain.clone();
        edited.blocks[2].block_hash = Digest([0xAB; 32]);
        let report = edited.verify();
        assert!(report.violations.contains(&(2, Violation::HashMismatch)));
        assert!(report.violations.contains(&(3, Violation::LinkBroken)));

        chain.blocks[1].tx.fee = 7;
        let report = chain.verify();
        assert!(report
            .violations
            .contains(&(1, Violation::NonZeroAmountOrFee)));
        assert!(!report.violations.contains(&(1, Violation::HashMismatch)));
    }

    #[test]
    fn forging_history_requires_remining_every_later_block() {
        let mut chain = small_chain(8, 3);
        chain.blocks[1].tx.error = 0.25;
        assert!(!chain.verify().is_valid());

        // Re-mining only the edited block repairs its own hash but breaks the
        // link from its successor.
        let difficulty = chain.difficulty();
        let remined = mine_block(
            chain.blocks[0].block_hash,
            1,
            chain.blocks[1].tx.clone(),
            difficulty,
        )
        .unwrap();
        chain.blocks[1] = remined;
        let report = chain.verify();
        assert!(report.violations.contains(&(2, Violation::LinkBroken)));

        // Only after re-mining every later block does the chain audit clean.
        for height in 2..chain.len() {
            let prev = chain.blocks[height as usize - 1].block_hash;
            let tx = chain.blocks[height as usize].tx.clone();
            chain.blocks[height as usize] = mine_block(prev, height, tx, difficulty).unwrap();
        }
        assert!(chain.verify().is_valid());
    }

    #[test]
    fn chain_queries_find_updates_bids_and_transfers() {
        let mut chain = Chain::new(8).unwrap();
        assert!(chain.latest_update().is_none());
        assert_eq!(chain.update_count(), 0);

        let first = Transaction::update(SiteId(1), SiteId(1), vec![0x01], 0.2).unwrap();
        let first_hash = first.model_hash;
        chain.mine_and_append(first).unwrap();

        for (site, error) in [(2, 0.7), (3, 0.4), (2, 0.9)] {
            let bid = Transaction::reference(
                SiteId(site),
                SiteId(1),
                Flag::Evaluate,
                first_hash,
                error,
            )
            .unwrap();
            chain.mine_and_append(bid).unwrap();
        }
        // Duplicate bid from site 2 is ignored; order follows chain order.
        assert_eq!(
            chain.collect_evaluations(first_hash, 1),
            vec![(SiteId(2), 0.7), (SiteId(3), 0.4)]
        );
        // Bids at or below the floor height are out of scope.
        assert_eq!(chain.collect_evaluations(first_hash, 4), vec![]);

        let transfer =
            Transaction::reference(SiteId(1), SiteId(2), Flag::Transfer, first_hash, 0.7).unwrap();
        chain.mine_and_append(transfer).unwrap();
        let seen = chain.latest_transfer_to(SiteId(2), 0).unwrap();
        assert_eq!(seen.height, 5);
        assert_eq!(seen.from, SiteId(1));
        assert!(chain.latest_transfer_to(SiteId(2), 5).is_none());
        // The genesis sentinel transfer is never addressed to a real site.
        assert!(chain.latest_transfer_to(SiteId(0), 0).is_none());

        let second = Transaction::update(SiteId(2), SiteId(2), vec![0x02, 0x03], 0.6).unwrap();
        let second_hash = second.model_hash;
        chain.mine_and_append(second).unwrap();
        let latest = chain.latest_update().unwrap();
        assert_eq!(latest.height, 6);
        assert_eq!(latest.site, SiteId(2));
        assert_eq!(latest.model_hash, second_hash);
        assert_eq!(latest.model_bytes, &[0x02, 0x03]);
        assert_eq!(chain.update_count(), 2);
        assert_eq!(chain.find_model(first_hash), Some(&[0x01][..]));
        assert_eq!(chain.find_model(second_hash), Some(&[0x02, 0x03][..]));
        assert_eq!(chain.find_model(Digest([0x77; 32])), None);
    }

    #[test]
    fn dump_round_trips_and_infers_difficulty() {
        let chain = small_chain(8, 3);
        let text = chain.to_jsonl();
        assert_eq!(text.lines().count(), 4);
        for line in text.lines() {
            let value: serde_json::Value = serde_json::from_str(line).unwrap();
            assert!(value.get("block_hash").is_some());
        }
        let loaded = Chain::from_jsonl(&text).unwrap();
        assert_eq!(loaded.blocks(), chain.blocks());
        assert!(loaded.difficulty() >= chain.difficulty());
        assert!(loaded.verify().is_valid());
        assert_eq!(loaded.to_jsonl(), text);
    }

    #[test]
    fn dump_parser_reports_line_numbers() {
        let chain = small_chain(8, 1);
        let mut lines: Vec<String> = chain.to_jsonl().lines().map(String::from).collect();
        lines[1] = lines[1].replace("\"flag\":\"UPDATE\"", "\"flag\":\"SIDEWAYS\"");
        let err = Chain::from_jsonl(&lines.join("\n")).unwrap_err();
        match err {
            LedgerError::Dump { line, reason } => {
                assert_eq!(line, 2);
                assert!(reason.contains("SIDEWAYS"));
            }
            other => panic!("unexpected error {other:?}"),
        }
        assert!(matches!(
            Chain::from_jsonl("\n  \n"),
            Err(LedgerError::EmptyDump)
        ));
        assert!(matches!(
            Chain::from_jsonl("{\"height\":0}"),
            Err(LedgerError::Dump { line: 1, .. })
        ));
    }

    #[test]
    fn initialization_errors_follow_chain_order() {
        let mut chain = Chain::new(8).unwrap();
        for (site, error) in [(3, 0.4), (1, 0.2)] {
            let tx = Transaction::reference(
                SiteId(site),
                SiteId(site),
                Flag::Initialize,
                Digest::ZERO,
                error,
            )
            .unwrap();
            chain.mine_and_append(tx).unwrap();
        }
        assert_eq!(
            chain.initialization_errors(),
            vec![(SiteId(3), 0.4), (SiteId(1), 0.2)]
        );
    }
}
