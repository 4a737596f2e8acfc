#![allow(dead_code)]

use std::fs;
use std::path::{Path, PathBuf};

use bnne_core::convert::convert;
use bnne_core::format::{write_model, write_tensor, RawTensor};
use bnne_core::graph::{zoo, LayerKind, Model, NetworkGraph};
use bnne_core::oracle::{ref_execute, RefValue};
use bnne_core::{BinaryWeightSet, Dims, QuantTensor};

pub const BLOB_SEED: u64 = 2024;
pub const INPUT_SEED: u64 = 7;
/// Layer whose folded bias is damaged in `corrupt_bias.bnne`.
pub const CORRUPT_LAYER: &str = "s2_pw";

pub fn fixtures() -> PathBuf {
    Path::new(env!("CARGO_MANIFEST_DIR")).join("tests/fixtures")
}

fn blob_bytes(blob: &[f32]) -> Vec<u8> {
    blob.iter().flat_map(|v| v.to_le_bytes()).collect()
}

fn identity_graph() -> NetworkGraph {
    let mut g = NetworkGraph::default();
    g.input("x", Dims::new(4, 5, 5), 8)
        .layer(
            "q",
            LayerKind::QuantAct {
                bits: 8,
                bn: false,
                eps: 1e-5,
            },
            &["x"],
        )
        .output("y", "q");
    g
}

/// The reference interpreter's value for the toy network's only output.
pub fn oracle_output(model: &Model, input: &QuantTensor) -> QuantTensor {
    let inputs = [("image".to_string(), input.clone())].into();
    let values = ref_execute(model, &inputs).unwrap();
    let from = &model.graph().graph().outputs[0].from;
    let RefValue::Tensor(t, Some(bits)) = &values[from] else {
        panic!("toy output is not quantized");
    };
    QuantTensor::new(t.dims, *bits, t.data.iter().map(|&v| v as u16).collect()).unwrap()
}

/// Copy of `model` with one folded bias off by one and everything else intact.
pub fn corrupt_bias(model: &Model, layer: &str, channel: usize) -> Model {
    let mut params = model.params().clone();
    let w = params.get_mut(layer).unwrap().weights.as_mut().unwrap();
    let mut folded = w.set.folded_bias().to_vec();
    folded[channel] += 1;
    let rows: Vec<_> = (0..w.set.out_channels()).map(|c| w.set.row(c)).collect();
    w.set = BinaryWeightSet::from_parts(w.set.mode(), w.set.bits(), &rows, folded, w.set.provenance()).unwrap();
    Model::new(model.graph().graph(), params).unwrap()
}

/// Writes every fixture file into `dir`.
pub fn build_fixtures(dir: &Path) {
    fs::create_dir_all(dir).unwrap();
    let put = |name: &str, bytes: &[u8]| fs::write(dir.join(name), bytes).unwrap();

    let toy = zoo::toy_network();
    let blob = zoo::random_blob(&toy, BLOB_SEED).unwrap();
    let model = convert(&toy, &blob).unwrap();
    let input = zoo::random_inputs(&toy, INPUT_SEED).unwrap().remove("image").unwrap();
    put("toy_graph.json", (serde_json::to_string_pretty(&toy).unwrap() + "\n").as_bytes());
    put("toy_weights.f32", &blob_bytes(&blob));
    put("toy.bnne", &write_model(&model).unwrap());
    put("toy_input.bnnt", &write_tensor(&RawTensor::Quant(input.clone())).unwrap());
    put("toy_golden.bnnt", &write_tensor(&RawTensor::Quant(oracle_output(&model, &input))).unwrap());
    put("corrupt_bias.bnne", &write_model(&corrupt_bias(&model, CORRUPT_LAYER, 3)).unwrap());

    let block = zoo::residual_block(8, 8, 8);
    let blob = zoo::random_blob(&block, BLOB_SEED).unwrap();
    put("block_graph.json", (serde_json::to_string_pretty(&block).unwrap() + "\n").as_bytes());
    put("block_weights.f32", &blob_bytes(&blob));

    put("identity_graph.json", (serde_json::to_string_pretty(&identity_graph()).unwrap() + "\n").as_bytes());
    put("identity_weights.f32", &[]);

    put(
        "ge_uniform.json",
        b"{\n  \"logic\": 1,\n  \"mux\": 1,\n  \"full_adder\": 1\n}\n",
    );
}
