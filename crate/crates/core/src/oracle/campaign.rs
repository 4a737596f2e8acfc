use std::collections::BTreeMap;

use rand::seq::SliceRandom;
use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;
use serde::{Deserialize, Serialize};

use super::{ref_node, RefValue};
use crate::bitcore::{BinaryWeightSet, Mode};
use crate::error::{Error, Result};
use crate::graph::{
    count_macs, execute, filters_of, lanes_of, validate, zoo, ExecOptions, LayerKind, LayerWeights, Model,
    NetworkGraph, NodeParams, Value,
};
use crate::layers::{BinaryTarget, RequantParams};
use crate::tensor::{max_value, Dims, QuantTensor};

/// Size limits for randomly generated layers.
#[derive(Clone, Debug, PartialEq, Eq, Serialize, Deserialize)]
pub struct CampaignBounds {
    pub max_channels: usize,
    pub max_extent: usize,
    pub max_macs: u64,
    pub kernels: Vec<usize>,
    pub strides: Vec<usize>,
}

impl Default for CampaignBounds {
    fn default() -> Self {
        CampaignBounds {
            max_channels: 32,
            max_extent: 32,
            max_macs: 1 << 20,
            kernels: vec![1, 3],
            strides: vec![1, 2],
        }
    }
}

/// First disagreement between the engine and the reference.
#[derive(Clone, Debug, PartialEq, Eq, Serialize, Deserialize)]
pub struct Mismatch {
    pub trial: usize,
    pub seed: u64,
    pub kind: String,
    pub node: String,
    pub detail: String,
}

#[derive(Clone, Debug, Default, PartialEq, Eq, Serialize, Deserialize)]
pub struct CampaignReport {
    pub seed: u64,
    pub trials: usize,
    /// Trials run per case label, e.g. `bconv2d/mode0`.
    pub cases: BTreeMap<String, usize>,
    pub max_abs_diff: i64,
    pub mismatches: Vec<Mismatch>,
}

impl CampaignReport {
    pub fn passed(&self) -> bool {
        self.mismatches.is_empty()
    }
}

/// Case labels cycled through by [`equivalence_campaign`].
pub const CASES: &[&str] = &[
    "bconv2d/mode0",
    "bconv2d/mode1",
    "bdwconv2d",
    "pconv2d",
    "downsample_conv",
    "bn_fold_marker",
    "quant_act",
    "bmm/mode0",
    "bmm/mode1",
    "upsample_nearest",
    "eltwise_add",
    "coord_embed",
    "binarize_act",
];

fn trial_seed(seed: u64, trial: usize) -> u64 {
    seed ^ (trial as u64 + 1).wrapping_mul(0x9E37_79B9_7F4A_7C15)
}

/// Element-wise comparison; returns the largest difference and a description
/// of the first differing element.
fn compare(engine: &Value, reference: &RefValue) -> (i64, Option<String>) {
    match (RefValue::from_value(engine), reference) {
        (RefValue::Tensor(a, _), RefValue::Tensor(b, _)) => {
            if a.dims != b.dims {
                return (i64::MAX, Some(format!("engine shape {}, reference {}", a.dims, b.dims)));
            }
            let mut worst = 0;
            let mut first = None;
            for (i, (x, y)) in a.data.iter().zip(&b.data).enumerate() {
                let d = (x - y).abs();
                worst = worst.max(d);
                if d != 0 && first.is_none() {
                    let plane = (a.dims.height * a.dims.width).max(1);
                    first = Some(format!(
                        "channel {} element {}: engine {x}, reference {y}",
                        i / plane,
                        i % plane
                    ));
                }
            }
            (worst, first)
        }
        (RefValue::Bits(a), RefValue::Bits(b)) => {
            if a == *b {
                (0, None)
            } else {
                (1, Some("binarized rows differ".into()))
            }
        }
        _ => (i64::MAX, Some("engine and reference produced different value kinds".into())),
    }
}

struct NodeCheck {
    nodes: usize,
    max_abs_diff: i64,
    failure: Option<(String, String, String)>,
}

/// Runs the engine and re-evaluates every node with the reference, fed with
/// the engine's own inputs so a failure points at the layer that caused it.
fn check_nodes(model: &Model, inputs: &BTreeMap<String, QuantTensor>, threads: usize) -> Result<NodeCheck> {
    let run = execute(
        model,
        inputs,
        &ExecOptions {
            threads,
            keep_intermediates: true,
        },
    )?;
    let graph = model.graph();
    let mut values: BTreeMap<&str, RefValue> = run.values.iter().map(|(k, v)| (k.as_str(), RefValue::from_value(v))).collect();
    for (k, v) in inputs {
        values.insert(k, RefValue::Tensor(v.into(), Some(v.bits())));
    }
    let mut check = NodeCheck {
        nodes: 0,
        max_abs_diff: 0,
        failure: None,
    };
    for &i in graph.order() {
        let node = &graph.graph().nodes[i];
        let args: Vec<&RefValue> = graph.sources(i).iter().map(|s| &values[s.as_str()]).collect();
        let expected = ref_node(&node.kind, model.node_params(&node.id), &args)
            .map_err(|e| Error::node(&node.id, e.to_string()))?;
        let (diff, detail) = compare(&run.values[&node.id], &expected);
        check.nodes += 1;
        check.max_abs_diff = check.max_abs_diff.max(diff);
        if let Some(detail) = detail {
            check.failure = Some((node.id.clone(), node.kind.name().to_string(), detail));
            break;
        }
    }
    Ok(check)
}

/// Outcome of checking a concrete model.
#[derive(Clone, Debug, Default, PartialEq, Eq, Serialize, Deserialize)]
pub struct VerifyReport {
    pub seed: u64,
    pub trials: usize,
    pub nodes_checked: usize,
    pub max_abs_diff: i64,
    pub failure: Option<Mismatch>,
}

impl VerifyReport {
    pub fn passed(&self) -> bool {
        self.failure.is_none()
    }
}

/// Checks a model's bias folding, then compares every node against the
/// reference on `trials` random inputs. Stops at the first failing layer.
pub fn verify_model(model: &Model, seed: u64, trials: usize) -> Result<VerifyReport> {
    let mut report = VerifyReport {
        seed,
        trials,
        ..Default::default()
    };
    if let Err(e) = model.check_folding() {
        let (node, detail) = match e {
            Error::Node { node, message } => (node, message),
            other => (String::new(), other.to_string()),
        };
        let kind = model.graph().graph().node(&node).map_or("", |n| n.kind.name()).to_string();
        report.failure = Some(Mismatch {
            trial: 0,
            seed,
            kind,
            node,
            detail: format!("bias folding: {detail}"),
        });
        return Ok(report);
    }
    for trial in 0..trials {
        let s = trial_seed(seed, trial);
        let inputs = zoo::random_inputs(model.graph().graph(), s)?;
        let check = check_nodes(model, &inputs, 1)?;
        report.nodes_checked += check.nodes;
        report.max_abs_diff = report.max_abs_diff.max(check.max_abs_diff);
        if let Some((node, kind, detail)) = check.failure {
            report.failure = Some(Mismatch {
                trial,
                seed: s,
                kind,
                node,
                detail,
            });
            break;
        }
    }
    Ok(report)
}

/// Runs `trials` randomized single-layer cases, cycling through [`CASES`],
/// and compares engine and reference element by element.
pub fn equivalence_campaign(seed: u64, trials: usize, bounds: &CampaignBounds) -> CampaignReport {
    let mut report = CampaignReport {
        seed,
        trials,
        ..Default::default()
    };
    for trial in 0..trials {
        let case = CASES[trial % CASES.len()];
        let s = trial_seed(seed, trial);
        *report.cases.entry(case.to_string()).or_default() += 1;
        let outcome = run_case(case, s, bounds);
        let failure = match outcome {
            Ok(check) => {
                report.max_abs_diff = report.max_abs_diff.max(check.max_abs_diff);
                check.failure
            }
            Err(e) => Some((String::new(), case.to_string(), format!("case could not run: {e}"))),
        };
        if let Some((node, kind, detail)) = failure {
            report.mismatches.push(Mismatch {
                trial,
                seed: s,
                kind,
                node,
                detail,
            });
        }
    }
    report
}

/// Runs one randomized case given its label and seed.
fn run_case(case: &str, seed: u64, bounds: &CampaignBounds) -> Result<NodeCheck> {
    let mut rng = ChaCha8Rng::seed_from_u64(seed);
    let (graph, inputs) = loop {
        let graph = random_case(case, &mut rng, bounds)?;
        let v = validate(&graph)?;
        if count_macs(&v).total <= bounds.max_macs {
            let inputs = zoo::random_inputs(&graph, rng.gen())?;
            break (graph, inputs);
        }
    };
    let model = random_model(&graph, &mut rng)?;
    let threads = if rng.gen_bool(0.5) { 1 } else { 3 };
    check_nodes(&model, &inputs, threads)
}

fn pick<T: Copy>(rng: &mut ChaCha8Rng, items: &[T]) -> T {
    *items.choose(rng).expect("non-empty choice")
}

fn random_case(case: &str, rng: &mut ChaCha8Rng, b: &CampaignBounds) -> Result<NetworkGraph> {
    let bits = pick(rng, &[1u8, 2, 3, 4, 8, 8, 8, 8, 12, 16]);
    let mut c = rng.gen_range(1..=b.max_channels);
    let mut h = rng.gen_range(1..=b.max_extent);
    let mut w = rng.gen_range(1..=b.max_extent);
    let k = pick(rng, &b.kernels);
    let stride = pick(rng, &b.strides);
    let mut pad = rng.gen_range(0..=k / 2);
    if h + 2 * pad < k || w + 2 * pad < k {
        pad = k / 2;
    }
    let out = rng.gen_range(1..=b.max_channels);
    let mut g = NetworkGraph::default();
    let conv = |cin, mode| LayerKind::Bconv2d {
        in_channels: cin,
        out_channels: out,
        kernel: k,
        stride,
        pad,
        mode,
    };
    let threshold = |rng: &mut ChaCha8Rng, bits: u8| {
        let top = f64::from(max_value(bits));
        (rng.gen_range(-0.1..1.1) * top * 2.0).round() / 2.0
    };
    match case {
        "bconv2d/mode0" | "bconv2d/mode1" => {
            let mode = if case.ends_with('0') { Mode::Xnor } else { Mode::And };
            g.input("x", Dims::new(c, h, w), bits).layer("n", conv(c, mode), &["x"]);
        }
        "bdwconv2d" => {
            g.input("x", Dims::new(c, h, w), bits).layer(
                "n",
                LayerKind::Bdwconv2d {
                    channels: c,
                    kernel: k,
                    stride,
                    pad,
                },
                &["x"],
            );
        }
        "pconv2d" => {
            let ratio = pick(rng, &[0.25, 0.5, 0.75, 1.0]);
            c = c.max((1.0f64 / ratio).ceil() as usize);
            let kernel = pick(rng, &[1, 3, 3]);
            g.input("x", Dims::new(c, h, w), bits).layer(
                "n",
                LayerKind::Pconv2d {
                    channels: c,
                    kernel,
                    split_ratio: ratio,
                },
                &["x"],
            );
        }
        "downsample_conv" => {
            let (k, s) = pick(rng, &[(2, 2), (3, 2), (1, 2), (2, 1)]);
            h = h.max(k);
            w = w.max(k);
            g.input("x", Dims::new(c, h, w), bits).layer(
                "n",
                LayerKind::DownsampleConv {
                    in_channels: c,
                    out_channels: out,
                    kernel: k,
                    stride: s,
                    pad: 0,
                },
                &["x"],
            );
        }
        "bn_fold_marker" => {
            g.input("x", Dims::new(c, h, w), bits)
                .layer("conv", conv(c, Mode::Xnor), &["x"])
                .layer("n", LayerKind::BnFoldMarker {}, &["conv"]);
        }
        "quant_act" => {
            let out_bits = pick(rng, &[1u8, 4, 8, 8, 16]);
            g.input("x", Dims::new(c, h, w), bits)
                .layer("conv", conv(c, pick(rng, &[Mode::Xnor, Mode::And])), &["x"])
                .layer(
                    "n",
                    LayerKind::QuantAct {
                        bits: out_bits,
                        bn: false,
                        eps: 1e-5,
                    },
                    &["conv"],
                );
        }
        "bmm/mode0" | "bmm/mode1" => {
            let (mode, target) = if case.ends_with('0') {
                (Mode::Xnor, BinaryTarget::PlusMinusOne)
            } else {
                (Mode::And, BinaryTarget::ZeroOne)
            };
            let rows = rng.gen_range(1..=b.max_channels);
            let t = threshold(rng, bits);
            g.input("x", Dims::new(c, h, w), bits)
                .input("z", Dims::new(rows, h, w), bits)
                .layer("zb", LayerKind::BinarizeAct { target, threshold: t }, &["z"])
                .layer("n", LayerKind::Bmm { mode }, &["x", "zb"]);
        }
        "upsample_nearest" => {
            let factor = rng.gen_range(1..=3);
            let src = if rng.gen_bool(0.5) { "x" } else { "conv" };
            g.input("x", Dims::new(c, h, w), bits)
                .layer("conv", conv(c, Mode::Xnor), &["x"])
                .layer("n", LayerKind::UpsampleNearest { factor }, &[src]);
        }
        "eltwise_add" => {
            g.input("x", Dims::new(c, h, w), bits)
                .input("y", Dims::new(c, h, w), bits)
                .layer(
                    "conv",
                    LayerKind::Bconv2d {
                        in_channels: c,
                        out_channels: c,
                        kernel: 1,
                        stride: 1,
                        pad: 0,
                        mode: Mode::Xnor,
                    },
                    &["x"],
                )
                .layer("sum", LayerKind::EltwiseAdd {}, &["x", "y"])
                .layer("n", LayerKind::EltwiseAdd {}, &["conv", "sum"]);
        }
        "coord_embed" => {
            g.input("x", Dims::new(c, h, w), bits).layer("n", LayerKind::CoordEmbed {}, &["x"]);
        }
        "binarize_act" => {
            let target = pick(rng, &[BinaryTarget::ZeroOne, BinaryTarget::PlusMinusOne]);
            let t = threshold(rng, bits);
            let src = if rng.gen_bool(0.5) { "x" } else { "conv" };
            let t = if src == "conv" { t - f64::from(max_value(bits)) / 2.0 } else { t };
            let left = rng.gen_range(1..=4);
            g.input("x", Dims::new(c, h, w), bits)
                .input("l", Dims::new(left, h, w), bits)
                .layer(
                    "conv",
                    LayerKind::Bconv2d {
                        in_channels: c,
                        out_channels: out,
                        kernel: 1,
                        stride: 1,
                        pad: 0,
                        mode: Mode::Xnor,
                    },
                    &["x"],
                )
                .layer("n", LayerKind::BinarizeAct { target, threshold: t }, &[src])
                .layer("use", LayerKind::Bmm { mode: target.mode() }, &["l", "n"]);
        }
        other => return Err(Error::InvalidInput(format!("unknown campaign case {other}"))),
    }
    // keep only nodes that feed the root, so unused helpers do not dangle
    let root = if case == "binarize_act" { "use" } else { "n" };
    let needed = needed_nodes(&g, root);
    g.nodes.retain(|n| needed.contains(&n.id));
    g.edges.retain(|e| needed.contains(&e.to));
    let used: Vec<String> = g.edges.iter().map(|e| e.from.clone()).collect();
    g.inputs.retain(|i| used.contains(&i.name));
    g.output("out", root);
    Ok(g)
}

fn needed_nodes(g: &NetworkGraph, root: &str) -> Vec<String> {
    let mut seen = vec![root.to_string()];
    let mut i = 0;
    while i < seen.len() {
        let id = seen[i].clone();
        for e in g.edges.iter().filter(|e| e.to == id) {
            if g.node(&e.from).is_some() && !seen.contains(&e.from) {
                seen.push(e.from.clone());
            }
        }
        i += 1;
    }
    seen
}

/// Random weights, biases and requantizers for every node of `graph`.
fn random_model(graph: &NetworkGraph, rng: &mut ChaCha8Rng) -> Result<Model> {
    let v = validate(graph)?;
    let mut params = BTreeMap::new();
    for (i, node) in v.graph().nodes.iter().enumerate() {
        let input = v.value_type(&v.sources(i)[0]).expect("validated");
        let mut p = NodeParams::default();
        if node.kind.has_weights() {
            let (filters, lanes) = (filters_of(&node.kind), lanes_of(&node.kind, input));
            let crate::graph::ValueType::Quant { bits, .. } = *input else {
                return Err(Error::Shape("weighted layer on a non-quantized input".into()));
            };
            let span = i64::from(max_value(bits)) * lanes as i64;
            let room = ((1i64 << 31) - 1 - 2 * span).clamp(0, 100_000) as i32;
            let beta: Vec<i32> = (0..filters).map(|_| rng.gen_range(-room..=room)).collect();
            let set = match node.kind.mode() {
                Some(Mode::And) => {
                    let w: Vec<f32> = (0..filters * lanes).map(|_| rng.gen()).collect();
                    BinaryWeightSet::from_threshold(&w, lanes, 0.5, &beta, bits)?
                }
                _ => {
                    let w: Vec<f32> = (0..filters * lanes).map(|_| rng.gen_range(-1.0..1.0)).collect();
                    BinaryWeightSet::from_signs(&w, lanes, &beta, bits)?
                }
            };
            p.weights = Some(LayerWeights { set, beta });
        }
        if let LayerKind::QuantAct { bits, .. } = node.kind {
            let ch = input.dims().channels;
            p.requant = Some(RequantParams {
                bits,
                multiplier: (0..ch).map(|_| rng.gen_range(1..=1u32 << 16)).collect(),
                shift: (0..ch).map(|_| rng.gen_range(0..=24)).collect(),
                offset: (0..ch).map(|_| rng.gen_range(-300..=300)).collect(),
            });
        }
        if p != NodeParams::default() {
            params.insert(node.id.clone(), p);
        }
    }
    Model::new(graph, params)
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::convert::convert;

    #[test]
    fn every_case_runs_clean() {
        let report = equivalence_campaign(5, CASES.len() * 4, &CampaignBounds::default());
        assert!(report.passed(), "{:#?}", report.mismatches);
        assert_eq!(report.cases.len(), CASES.len());
        assert_eq!(report.max_abs_diff, 0);
    }

    #[test]
    fn campaign_is_deterministic() {
        let b = CampaignBounds::default();
        assert_eq!(equivalence_campaign(9, 26, &b), equivalence_campaign(9, 26, &b));
    }

    #[test]
    fn verify_flags_corrupted_bias() {
        let g = zoo::residual_block(4, 5, 5);
        let model = convert(&g, &zoo::random_blob(&g, 1).unwrap()).unwrap();
        let report = verify_model(&model, 0, 2).unwrap();
        assert!(report.passed(), "{report:?}");
        assert!(report.nodes_checked > 0);

        let mut params = model.params().clone();
        let w = params.get_mut("blk_pw").unwrap().weights.as_mut().unwrap();
        let mut folded = w.set.folded_bias().to_vec();
        folded[2] += 1;
        let rows: Vec<_> = (0..w.set.out_channels()).map(|c| w.set.row(c)).collect();
        w.set = BinaryWeightSet::from_parts(w.set.mode(), w.set.bits(), &rows, folded, w.set.provenance()).unwrap();
        let bad = Model::new(&g, params).unwrap();
        let report = verify_model(&bad, 0, 2).unwrap();
        let failure = report.failure.unwrap();
        assert_eq!(failure.node, "blk_pw");
        assert!(failure.detail.contains("channel 2"), "{}", failure.detail);
    }
}
