//! Randomized invariants over the ledger and the learner.
//!
//! These complement the pinned-value tests: instead of one known-good
//! answer, each property must hold for every generated input, covering the
//! laws the rest of the system leans on (canonical byte lengths, smallest
//! winning nonce, dump round-trips, tamper visibility, bounded metrics).

use modelchain_core::learning::{
    deserialize_model, evaluate, serialize_model, serialized_len, sigmoid, train_local,
    LearnerParams, Model, Partition, Row,
};
use modelchain_core::ledger::{mine_block, Chain, Digest, Flag, SiteId, Transaction};
use proptest::prelude::*;

fn arb_flag() -> impl Strategy<Value = Flag> {
    prop_oneof![
        Just(Flag::Initialize),
        Just(Flag::Update),
        Just(Flag::Evaluate),
        Just(Flag::Transfer),
    ]
}

/// A structurally valid transaction: updates carry bytes, references do not.
fn arb_tx() -> impl Strategy<Value = Transaction> {
    (
        arb_flag(),
        any::<u32>(),
        any::<u32>(),
        0.0..=1.0f64,
        proptest::collection::vec(any::<u8>(), 0..48),
    )
        .prop_map(|(flag, from, to, error, bytes)| match flag {
            Flag::Update => {
                Transaction::update(SiteId(from), SiteId(to), bytes, error).unwrap()
            }
            other => Transaction::reference(
                SiteId(from),
                SiteId(to),
                other,
                Digest::of(&bytes),
                error,
            )
            .unwrap(),
        })
}

fn arb_rows(n_features: usize) -> impl Strategy<Value = Vec<Row>> {
    proptest::collection::vec(
        (
            proptest::collection::vec(-100.0..100.0f64, n_features),
            0u8..2,
        )
            .prop_map(|(features, label)| Row { features, label }),
        1..12,
    )
}

proptest! {
    #[test]
    fn canonical_bytes_obey_the_length_law(tx in arb_tx()) {
        let bytes = tx.canonical_bytes();
        let model_len = tx.model.as_ref().map_or(0, Vec::len);
        // from + to + flag + error + hash + declared length + payload.
        prop_assert_eq!(bytes.len(), 4 + 4 + 1 + 8 + 32 + 4 + model_len);
        prop_assert_eq!(bytes[8], tx.flag.code());
        prop_assert_eq!(&bytes[9..17], &tx.error.to_le_bytes());
    }

    #[test]
    fn canonical_bytes_are_injective_on_error(tx in arb_tx(), other in 0.0..=1.0f64) {
        prop_assume!(tx.error != other);
        let mut changed = tx.clone();
        changed.error = other;
        prop_assert_ne!(tx.canonical_bytes(), changed.canonical_bytes());
    }

    #[test]
    fn mining_finds_the_smallest_winning_nonce(
        tx in arb_tx(),
        prev in proptest::array::uniform32(any::<u8>()),
        difficulty in 0u32..7,
    ) {
        let block = mine_block(Digest(prev), 3, tx, difficulty).unwrap();
        prop_assert!(block.block_hash.leading_zero_bits() >= difficulty);
        prop_assert_eq!(block.computed_hash(), block.block_hash);
        for nonce in 0..block.nonce {
            let mut earlier = block.clone();
            earlier.nonce = nonce;
            prop_assert!(earlier.computed_hash().leading_zero_bits() < difficulty);
        }
    }

    #[test]
    fn chains_survive_the_dump_round_trip(
        txs in proptest::collection::vec(arb_tx(), 1..6),
        difficulty in 0u32..5,
    ) {
        let mut chain = Chain::new(difficulty).unwrap();
        for tx in txs {
            chain.mine_and_append(tx).unwrap();
        }
        prop_assert!(chain.verify().is_valid());

        let dump = chain.to_jsonl();
        let back = Chain::from_jsonl(&dump).unwrap();
        prop_assert_eq!(back.blocks(), chain.blocks());
        // The dump stores no difficulty; the load infers the largest one
        // every stored hash clears, which is at least the mining target.
        prop_assert!(back.difficulty() >= chain.difficulty());
        prop_assert!(back.verify().is_valid());
        prop_assert_eq!(back.to_jsonl(), dump);
    }

    #[test]
    fn every_tamper_leaves_a_mark(
        txs in proptest::collection::vec(arb_tx(), 1..5),
        pick in any::<proptest::sample::Index>(),
        mutation in 0usize..4,
    ) {
        let mut chain = Chain::new(0).unwrap();
        for tx in txs {
            chain.mine_and_append(tx).unwrap();
        }
        // Edit one field of one stored line, the way a doctored dump would.
        let dump = chain.to_jsonl();
        let mut lines: Vec<serde_json::Value> = dump
            .lines()
            .map(|line| serde_json::from_str(line).unwrap())
            .collect();
        let index = 1 + pick.index(lines.len() - 1);
        let line = &mut lines[index];
        match mutation {
            0 => {
                let error = line["tx"]["error"].as_f64().unwrap();
                line["tx"]["error"] = ((error + 0.5) % 1.0).into();
            }
            1 => {
                let nonce = line["nonce"].as_u64().unwrap();
                line["nonce"] = (nonce ^ 1).into();
            }
            2 => {
                let mut hex = line["prev_hash"].as_str().unwrap().to_string();
                let swapped = if hex.remove(7) == '0' { '4' } else { '0' };
                hex.insert(7, swapped);
                line["prev_hash"] = hex.into();
            }
            _ => {
                let from = line["tx"]["from"].as_u64().unwrap();
                line["tx"]["from"] = (from + 9).into();
            }
        }
        let doctored: String = lines
            .iter()
            .map(|line| format!("{line}\n"))
            .collect();
        prop_assume!(doctored != dump);
        let tampered = Chain::from_jsonl(&doctored).unwrap();
        prop_assert!(!tampered.verify().is_valid());
    }

    #[test]
    fn rebuilding_from_blocks_rejects_any_tamper(
        txs in proptest::collection::vec(arb_tx(), 1..4),
        pick in any::<proptest::sample::Index>(),
    ) {
        let mut chain = Chain::new(0).unwrap();
        for tx in txs {
            chain.mine_and_append(tx).unwrap();
        }
        let mut blocks = chain.blocks().to_vec();
        let index = 1 + pick.index(blocks.len() - 1);
        blocks[index].tx.from = SiteId(blocks[index].tx.from.0.wrapping_add(9));
        prop_assert!(Chain::from_blocks(blocks, chain.difficulty()).is_err());
    }

    #[test]
    fn models_round_trip_bit_for_bit(
        weights in proptest::collection::vec(-1e6..1e6f64, 1..9),
        round in any::<u32>(),
        origin in any::<u32>(),
    ) {
        let model = Model {
            weights,
            round,
            origin_site: SiteId(origin),
        };
        let bytes = serialize_model(&model);
        prop_assert_eq!(bytes.len(), serialized_len(model.n_features()));
        let back = deserialize_model(&bytes).unwrap();
        prop_assert_eq!(back.round, model.round);
        prop_assert_eq!(back.origin_site, model.origin_site);
        for (a, b) in back.weights.iter().zip(&model.weights) {
            prop_assert_eq!(a.to_bits(), b.to_bits());
        }
    }

    #[test]
    fn sigmoid_is_bounded_and_monotone(a in -700.0..700.0f64, b in -700.0..700.0f64) {
        let (lo, hi) = if a <= b { (a, b) } else { (b, a) };
        let (slo, shi) = (sigmoid(lo), sigmoid(hi));
        prop_assert!((0.0..=1.0).contains(&slo));
        prop_assert!((0.0..=1.0).contains(&shi));
        prop_assert!(slo <= shi);
    }

    #[test]
    fn evaluation_is_a_rate(rows in arb_rows(3), weights in proptest::collection::vec(-5.0..5.0f64, 4)) {
        let partition = Partition { rows };
        let model = Model { weights, round: 0, origin_site: SiteId(1) };
        let error = evaluate(&model, &partition).unwrap();
        prop_assert!((0.0..=1.0).contains(&error));
        let scaled = (error * partition.rows.len() as f64).round()
            / partition.rows.len() as f64;
        prop_assert!((error - scaled).abs() < 1e-12);
    }

    #[test]
    fn training_is_a_pure_function_of_its_inputs(rows in arb_rows(2), seed in any::<u64>()) {
        let partition = Partition { rows };
        let params = LearnerParams {
            learning_rate: 0.1,
            epochs: 2,
            l2: 0.01,
            shuffle_seed: seed,
        };
        let one = train_local(&partition, &params, SiteId(3)).unwrap();
        let two = train_local(&partition, &params, SiteId(3)).unwrap();
        prop_assert_eq!(&one.weights, &two.weights);
        for w in &one.weights {
            prop_assert!(w.is_finite());
        }
    }

    #[test]
    fn bad_error_values_never_enter_a_transaction(error in prop_oneof![
        Just(f64::NAN),
        Just(f64::INFINITY),
        Just(-0.25),
        Just(1.0 + 1e-9),
    ]) {
        prop_assert!(Transaction::update(SiteId(1), SiteId(1), vec![1], error).is_err());
        prop_assert!(
            Transaction::reference(SiteId(1), SiteId(2), Flag::Evaluate, Digest::ZERO, error)
                .is_err()
        );
    }
}

#[test]
fn leading_zero_bits_matches_a_bit_walk() {
    let mut digest = Digest::ZERO;
    assert_eq!(digest.leading_zero_bits(), 256);
    digest.0[0] = 0x80;
    assert_eq!(digest.leading_zero_bits(), 0);
    digest.0[0] = 0x01;
    assert_eq!(digest.leading_zero_bits(), 7);
    digest.0[0] = 0x00;
    digest.0[2] = 0x20;
    assert_eq!(digest.leading_zero_bits(), 18);
}
