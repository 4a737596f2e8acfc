use std::collections::BTreeMap;

use bnne_core::bitcore::{mac_channel, pack_bitplanes, unpack_bitplanes, words_for};
use bnne_core::convert::convert;
use bnne_core::format::{read_model, write_model};
use bnne_core::graph::{count_macs, execute, validate, zoo, ExecOptions, Model, NetworkGraph};
use bnne_core::oracle::{ref_execute, RefValue};
use bnne_core::{BinaryWeightSet, PackedBits};
use proptest::prelude::*;
use rand::seq::SliceRandom;
use rand::SeedableRng;
use rand_chacha::ChaCha8Rng;

fn signed(w: &[f32], mode: u8) -> Vec<i64> {
    w.iter()
        .map(|&v| match mode {
            0 if v >= 0.0 => 1,
            0 => -1,
            _ => i64::from(v > 0.5),
        })
        .collect()
}

fn weight_set(w: &[f32], beta: i32, bits: u8, mode: u8) -> BinaryWeightSet {
    match mode {
        0 => BinaryWeightSet::from_signs(w, w.len(), &[beta], bits),
        _ => BinaryWeightSet::from_threshold(w, w.len(), 0.5, &[beta], bits),
    }
    .unwrap()
}

fn lanes_and_bits() -> impl Strategy<Value = (u8, Vec<u32>, Vec<f32>)> {
    (1u8..=16, 1usize..300).prop_flat_map(|(bits, lanes)| {
        (
            Just(bits),
            proptest::collection::vec(0u32..(1 << bits), lanes),
            proptest::collection::vec(-1.0f32..1.0, lanes),
        )
    })
}

fn model(graph: &NetworkGraph, seed: u64) -> Model {
    convert(graph, &zoo::random_blob(graph, seed).unwrap()).unwrap()
}

fn assert_matches_oracle(model: &Model, seed: u64) {
    let inputs = zoo::random_inputs(model.graph().graph(), seed).unwrap();
    let run = execute(model, &inputs, &ExecOptions { threads: 1, keep_intermediates: true }).unwrap();
    let reference = ref_execute(model, &inputs).unwrap();
    for (id, value) in &run.values {
        assert_eq!(&RefValue::from_value(value), &reference[id], "node `{id}`");
    }
}

proptest! {
    #![proptest_config(ProptestConfig::with_cases(64))]

    #[test]
    fn mac_equals_direct_dot((bits, a, w) in lanes_and_bits(), beta in -100_000i32..100_000, mode in 0u8..2) {
        let set = weight_set(&w, beta, bits, mode);
        let got = mac_channel(&pack_bitplanes(&a, bits).unwrap(), &set, 0).unwrap().value();
        let want: i64 = a.iter().zip(signed(&w, mode)).map(|(&a, w)| i64::from(a) * w).sum::<i64>() + i64::from(beta);
        prop_assert_eq!(i64::from(got), want);
    }

    #[test]
    fn zero_lanes_do_not_change_the_result(
        (bits, a, w) in lanes_and_bits(),
        pad in proptest::collection::vec(-1.0f32..1.0, 1..64),
        mode in 0u8..2,
    ) {
        let base = mac_channel(&pack_bitplanes(&a, bits).unwrap(), &weight_set(&w, 7, bits, mode), 0).unwrap();
        let mut a2 = a.clone();
        a2.resize(a.len() + pad.len(), 0);
        let w2: Vec<f32> = w.iter().chain(&pad).copied().collect();
        let padded = mac_channel(&pack_bitplanes(&a2, bits).unwrap(), &weight_set(&w2, 7, bits, mode), 0).unwrap();
        prop_assert_eq!(base, padded);
    }

    #[test]
    fn bits_past_the_mask_are_rejected(lanes in 1usize..200, extra in 0u32..64) {
        let mut words = vec![0u64; words_for(lanes)];
        let pos = lanes + extra as usize;
        prop_assume!(pos < words.len() * 64);
        words[pos / 64] |= 1 << (pos % 64);
        prop_assert!(PackedBits::from_words(lanes, words).is_err());
    }

    #[test]
    fn pack_round_trip((bits, a, _w) in lanes_and_bits()) {
        let block = pack_bitplanes(&a, bits).unwrap();
        prop_assert_eq!(block.words_per_plane(), words_for(a.len()));
        prop_assert_eq!(unpack_bitplanes(&block), a);
    }
}

proptest! {
    #![proptest_config(ProptestConfig::with_cases(24))]

    #[test]
    fn residual_block_matches_oracle(c in 1usize..7, h in 1usize..7, w in 1usize..7, seed in any::<u64>()) {
        assert_matches_oracle(&model(&zoo::residual_block(c, h, w), seed), seed);
    }

    #[test]
    fn execution_is_deterministic(c in 1usize..6, h in 2usize..6, threads in 2usize..6, seed in any::<u64>()) {
        let m = model(&zoo::residual_block(c, h, h), seed);
        let inputs = zoo::random_inputs(m.graph().graph(), seed).unwrap();
        let one = execute(&m, &inputs, &ExecOptions { threads: 1, ..Default::default() }).unwrap();
        let many = execute(&m, &inputs, &ExecOptions { threads, ..Default::default() }).unwrap();
        prop_assert_eq!(one.outputs, many.outputs);
        prop_assert_eq!(one.trace.total_macs, count_macs(m.graph()).total);
    }

    #[test]
    fn mac_count_ignores_node_order(seed in any::<u64>()) {
        let mut g = zoo::toy_network();
        let before = count_macs(&validate(&g).unwrap()).total;
        g.nodes.shuffle(&mut ChaCha8Rng::seed_from_u64(seed));
        prop_assert_eq!(count_macs(&validate(&g).unwrap()).total, before);
    }
}

#[test]
fn toy_network_matches_oracle() {
    for seed in [1, 2] {
        assert_matches_oracle(&model(&zoo::toy_network(), seed), seed + 100);
    }
}

#[test]
fn container_round_trip_preserves_execution() {
    let m = model(&zoo::toy_network(), 3);
    let back = read_model(&write_model(&m).unwrap()).unwrap();
    back.check_folding().unwrap();
    let inputs: BTreeMap<_, _> = zoo::random_inputs(m.graph().graph(), 4).unwrap();
    let opts = ExecOptions::default();
    assert_eq!(execute(&m, &inputs, &opts).unwrap().outputs, execute(&back, &inputs, &opts).unwrap().outputs);
}
