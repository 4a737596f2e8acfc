//! Small built-in networks and deterministic parameter generators.

use std::collections::BTreeMap;

use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;

use super::spec::{LayerKind, NetworkGraph};
use super::exec::{execute, ExecOptions, Value};
use super::validate::{filters_of, lanes_of, validate, ValidatedGraph};
use crate::convert::convert;
use crate::bitcore::Mode;
use crate::error::{Error, Result};
use crate::layers::BinaryTarget;
use crate::tensor::{max_value, Dims, QuantTensor};

/// Names accepted by [`builtin`].
pub const BUILTIN: &[&str] = &["block", "toy"];

pub fn builtin(name: &str) -> Option<NetworkGraph> {
    match name {
        "block" => Some(residual_block(8, 8, 8)),
        "toy" => Some(toy_network()),
        _ => None,
    }
}

fn conv(in_channels: usize, out_channels: usize, kernel: usize, mode: Mode) -> LayerKind {
    LayerKind::Bconv2d {
        in_channels,
        out_channels,
        kernel,
        stride: 1,
        pad: kernel / 2,
        mode,
    }
}

fn quant(bn: bool) -> LayerKind {
    LayerKind::QuantAct {
        bits: 8,
        bn,
        eps: 1e-5,
    }
}

/// Depthwise 3×3 → quant → pointwise 1×1 → residual add → quant.
pub fn residual_block(channels: usize, height: usize, width: usize) -> NetworkGraph {
    let mut g = NetworkGraph::default();
    g.input("x", Dims::new(channels, height, width), 8);
    block(&mut g, "blk", "x", channels, false);
    g.output("y", "blk_out");
    g
}

/// Appends a residual block reading `src`; its result is `{prefix}_out`.
fn block(g: &mut NetworkGraph, prefix: &str, src: &str, channels: usize, partial: bool) {
    let id = |s: &str| format!("{prefix}_{s}");
    g.layer(
        &id("dw"),
        LayerKind::Bdwconv2d {
            channels,
            kernel: 3,
            stride: 1,
            pad: 1,
        },
        &[src],
    )
    .layer(&id("dw_q"), quant(true), &[&id("dw")]);
    let mut mixed = id("dw_q");
    if partial {
        g.layer(
            &id("pc"),
            LayerKind::Pconv2d {
                channels,
                kernel: 3,
                split_ratio: 0.25,
            },
            &[&mixed],
        )
        .layer(&id("pc_q"), quant(true), &[&id("pc")]);
        mixed = id("pc_q");
    }
    g.layer(&id("pw"), conv(channels, channels, 1, Mode::Xnor), &[&mixed])
        .layer(&id("bn"), LayerKind::BnFoldMarker {}, &[&id("pw")])
        .layer(&id("add"), LayerKind::EltwiseAdd {}, &[&id("bn"), src])
        .layer(&id("out"), quant(true), &[&id("add")]);
}

/// Three-stage backbone, a two-level feature pyramid and an instance head
/// built on both matrix-multiply modes.
pub fn toy_network() -> NetworkGraph {
    let mut g = NetworkGraph::default();
    g.input("image", Dims::new(3, 16, 16), 8)
        .layer("stem", conv(3, 8, 3, Mode::Xnor), &["image"])
        .layer("stem_q", quant(true), &["stem"]);
    block(&mut g, "s1", "stem_q", 8, false);

    g.layer(
        "down1",
        LayerKind::DownsampleConv {
            in_channels: 8,
            out_channels: 16,
            kernel: 2,
            stride: 2,
            pad: 0,
        },
        &["s1_out"],
    )
    .layer("down1_q", quant(true), &["down1"]);
    block(&mut g, "s2", "down1_q", 16, true);

    g.layer(
        "down2",
        LayerKind::DownsampleConv {
            in_channels: 16,
            out_channels: 32,
            kernel: 2,
            stride: 2,
            pad: 0,
        },
        &["s2_out"],
    )
    .layer("down2_q", quant(true), &["down2"]);
    block(&mut g, "s3", "down2_q", 32, true);

    // pyramid: 4×4 → 8×8 → 16×16
    g.layer("lat3", conv(32, 16, 1, Mode::Xnor), &["s3_out"])
        .layer("lat3_q", quant(true), &["lat3"])
        .layer("up3", LayerKind::UpsampleNearest { factor: 2 }, &["lat3_q"])
        .layer("lat2", conv(16, 16, 1, Mode::Xnor), &["s2_out"])
        .layer("p2_add", LayerKind::EltwiseAdd {}, &["lat2", "up3"])
        .layer("p2", quant(true), &["p2_add"])
        .layer("up2", LayerKind::UpsampleNearest { factor: 2 }, &["p2"])
        .layer("lat1", conv(8, 16, 1, Mode::Xnor), &["s1_out"])
        .layer("p1_add", LayerKind::EltwiseAdd {}, &["lat1", "up2"])
        .layer("p1", quant(true), &["p1_add"]);

    // head: 14 feature channels plus two coordinate channels
    g.layer("fuse", conv(16, 14, 3, Mode::Xnor), &["p1"])
        .layer("fuse_q", quant(true), &["fuse"])
        .layer("coord", LayerKind::CoordEmbed {}, &["fuse_q"])
        .layer("feat", conv(16, 16, 3, Mode::Xnor), &["coord"])
        .layer("feat_q", quant(true), &["feat"])
        .layer("iam", conv(16, 16, 3, Mode::And), &["coord"])
        .layer("iam_q", quant(true), &["iam"])
        .layer(
            "iam_bits",
            LayerKind::BinarizeAct {
                target: BinaryTarget::ZeroOne,
                threshold: 127.5,
            },
            &["iam_q"],
        )
        .layer("inst", LayerKind::Bmm { mode: Mode::And }, &["feat_q", "iam_bits"])
        .layer("kern", conv(16, 16, 3, Mode::Xnor), &["coord"])
        .layer(
            "kern_bits",
            LayerKind::BinarizeAct {
                target: BinaryTarget::PlusMinusOne,
                threshold: 0.0,
            },
            &["kern"],
        )
        .layer("mask", LayerKind::Bmm { mode: Mode::Xnor }, &["feat_q", "kern_bits"])
        .layer("head_add", LayerKind::EltwiseAdd {}, &["inst", "mask"])
        .layer("head_q", quant(true), &["head_add"])
        .output("head", "head_q");
    g
}

/// Deterministic real-valued parameters for `graph`, laid out as the
/// converter expects them.
///
/// Weights and biases are uniform random. Each batch norm is then calibrated
/// in dependency order from the per-channel mean and variance its input
/// actually has on a random input, so activations stay spread over the
/// quantized range instead of saturating.
pub fn random_blob(graph: &NetworkGraph, seed: u64) -> Result<Vec<f32>> {
    let v = validate(graph)?;
    let mut rng = ChaCha8Rng::seed_from_u64(seed);
    let mut blob = Vec::new();
    // (node index, blob offset, channels)
    let mut norms: Vec<(usize, usize, usize)> = Vec::new();
    for (i, node) in v.graph().nodes.iter().enumerate() {
        let input = v.value_type(&v.sources(i)[0]).expect("validated");
        match &node.kind {
            k if k.has_weights() => {
                let (filters, lanes) = (filters_of(k), lanes_of(k, input));
                let centre = if k.mode() == Some(Mode::And) { 0.5 } else { 0.0 };
                blob.extend((0..filters * lanes).map(|_| centre + rng.gen_range(-1.0f32..1.0)));
                blob.extend((0..filters).map(|_| rng.gen_range(-40.0f32..40.0)));
            }
            LayerKind::QuantAct { bn: true, .. } => {
                let c = input.dims().channels;
                norms.push((i, blob.len(), c));
                // placeholder: unit gain, no shift
                blob.extend((0..c).map(|_| 0.0));
                blob.extend((0..c).map(|_| 1.0));
                blob.extend((0..c).map(|_| 1.0));
                blob.extend((0..c).map(|_| 0.0));
            }
            _ => {}
        }
    }

    let upstream: Vec<Vec<usize>> = norms
        .iter()
        .map(|&(i, _, _)| {
            let above = ancestors(&v, i);
            norms.iter().map(|n| n.0).filter(|j| above.contains(j)).collect()
        })
        .collect();
    let inputs = random_inputs(graph, seed ^ 0x5eed)?;
    let mut done = vec![false; norms.len()];
    while done.iter().any(|d| !d) {
        let model = convert(graph, &blob)?;
        let run = execute(
            &model,
            &inputs,
            &ExecOptions {
                threads: 1,
                keep_intermediates: true,
            },
        )?;
        let ready: Vec<usize> = (0..norms.len())
            .filter(|&n| !done[n])
            .filter(|&n| upstream[n].iter().all(|u| norms.iter().position(|x| x.0 == *u).is_none_or(|p| done[p])))
            .collect();
        for n in ready {
            let (i, offset, c) = norms[n];
            let source = &v.sources(i)[0];
            let stats = channel_stats(run.values.get(source), inputs.get(source), c);
            for (ch, (mean, var)) in stats.into_iter().enumerate() {
                blob[offset + ch] = (mean + rng.gen_range(-0.1..0.1) * var.sqrt()) as f32;
                blob[offset + c + ch] = (var * rng.gen_range(0.8..1.25)).max(1.0) as f32;
                blob[offset + 2 * c + ch] = rng.gen_range(40.0f32..70.0);
                blob[offset + 3 * c + ch] = rng.gen_range(110.0f32..145.0);
            }
            done[n] = true;
        }
    }
    Ok(blob)
}

fn ancestors(g: &ValidatedGraph, i: usize) -> Vec<usize> {
    let mut seen = Vec::new();
    let mut stack = vec![i];
    while let Some(n) = stack.pop() {
        for s in g.sources(n) {
            if let Some(j) = g.graph().nodes.iter().position(|x| &x.id == s) {
                if !seen.contains(&j) {
                    seen.push(j);
                    stack.push(j);
                }
            }
        }
    }
    seen
}

/// Per-channel (mean, variance) of a tensor value.
fn channel_stats(value: Option<&Value>, input: Option<&QuantTensor>, channels: usize) -> Vec<(f64, f64)> {
    let data: Vec<f64> = match (value, input) {
        (Some(Value::Acc(t)), _) => t.data().iter().map(|&x| f64::from(x)).collect(),
        (Some(Value::Quant(t)), _) | (None, Some(t)) => t.data().iter().map(|&x| f64::from(x)).collect(),
        _ => return vec![(0.0, 1.0); channels],
    };
    let plane = (data.len() / channels.max(1)).max(1);
    data.chunks(plane)
        .map(|ch| {
            let n = ch.len() as f64;
            let mean = ch.iter().sum::<f64>() / n;
            let var = ch.iter().map(|x| (x - mean) * (x - mean)).sum::<f64>() / n;
            (mean, var)
        })
        .collect()
}

/// Uniformly random inputs for every graph input.
pub fn random_inputs(graph: &NetworkGraph, seed: u64) -> Result<BTreeMap<String, QuantTensor>> {
    let mut rng = ChaCha8Rng::seed_from_u64(seed);
    graph
        .inputs
        .iter()
        .map(|b| {
            let limit = max_value(b.bits);
            let data = (0..b.dims.len())
                .map(|_| rng.gen_range(0..=limit) as u16)
                .collect();
            QuantTensor::new(b.dims, b.bits, data).map(|t| (b.name.clone(), t))
        })
        .collect::<Result<_>>()
        .map_err(|e: Error| e)
}
