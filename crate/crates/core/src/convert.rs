//! Offline conversion of real-valued parameters into an engine-ready model.
//!
//! This is the only place the correction term of ±1 weights is computed:
//! weights are binarized, the term is folded into each channel's bias, and
//! batch norms are folded into biases and requantizers.
//!
//! The parameter blob is a flat sequence of `f32` values consumed in the
//! order the nodes appear in the graph description:
//!
//! * weighted layers: `filters × lanes` weights (lane order channel, ky, kx),
//!   then `filters` biases;
//! * `quant_act` with `bn: true`: `C` means, `C` variances, `C` scales, `C` shifts;
//! * every other node consumes nothing.

use std::collections::BTreeMap;

use crate::bitcore::{BinaryWeightSet, Mode};
use crate::error::{Error, Result};
use crate::graph::{filters_of, lanes_of, validate, LayerKind, LayerWeights, Model, NetworkGraph, NodeParams, ValidatedGraph, ValueType};
use crate::layers::{bn_requant, fold_bn, BatchNorm, RequantParams};

/// Threshold used to turn real mode-1 weights into {0,1} masks.
pub const MASK_THRESHOLD: f32 = 0.5;

struct FloatLayer {
    weights: Vec<f32>,
    beta: Vec<f64>,
    lanes: usize,
}

fn input_type(graph: &ValidatedGraph, index: usize) -> &ValueType {
    graph
        .value_type(&graph.sources(index)[0])
        .expect("validated")
}

/// Number of `f32` values the blob for `graph` must hold.
pub fn blob_len(graph: &NetworkGraph) -> Result<usize> {
    let v = validate(graph)?;
    Ok(v.graph()
        .nodes
        .iter()
        .enumerate()
        .map(|(i, node)| node_blob_len(&node.kind, input_type(&v, i)))
        .sum())
}

fn node_blob_len(kind: &LayerKind, input: &ValueType) -> usize {
    match kind {
        k if k.has_weights() => filters_of(k) * (lanes_of(k, input) + 1),
        LayerKind::QuantAct { bn: true, .. } => 4 * input.dims().channels,
        _ => 0,
    }
}

fn round_half_up(v: f64) -> f64 {
    (v + 0.5).floor()
}

fn take<'a>(blob: &mut &'a [f32], n: usize, id: &str) -> Result<&'a [f32]> {
    if blob.len() < n {
        return Err(Error::node(
            id,
            format!("parameter blob ends early: needs {n} more values, {} left", blob.len()),
        ));
    }
    let (head, rest) = blob.split_at(n);
    *blob = rest;
    if let Some(i) = head.iter().position(|v| !v.is_finite()) {
        return Err(Error::node(id, format!("non-finite parameter at offset {i}")));
    }
    Ok(head)
}

/// Builds a [`Model`] from a graph and its real-valued parameter blob.
pub fn convert(graph: &NetworkGraph, blob: &[f32]) -> Result<Model> {
    let v = validate(graph)?;
    let expected = blob_len(graph)?;
    if blob.len() != expected {
        return Err(Error::InvalidInput(format!(
            "parameter blob holds {} values, graph needs {expected}",
            blob.len()
        )));
    }

    let mut rest = blob;
    let mut layers: BTreeMap<usize, FloatLayer> = BTreeMap::new();
    let mut norms: BTreeMap<usize, BatchNorm> = BTreeMap::new();
    for (i, node) in v.graph().nodes.iter().enumerate() {
        let input = input_type(&v, i);
        match &node.kind {
            k if k.has_weights() => {
                let (filters, lanes) = (filters_of(k), lanes_of(k, input));
                let weights = take(&mut rest, filters * lanes, &node.id)?.to_vec();
                let beta = take(&mut rest, filters, &node.id)?
                    .iter()
                    .map(|&b| f64::from(b))
                    .collect();
                layers.insert(i, FloatLayer { weights, beta, lanes });
            }
            LayerKind::QuantAct { bn: true, eps, .. } => {
                let c = input.dims().channels;
                let mut part = |n| -> Result<Vec<f64>> {
                    Ok(take(&mut rest, n, &node.id)?.iter().map(|&x| f64::from(x)).collect())
                };
                let (mean, var, scale, shift) = (part(c)?, part(c)?, part(c)?, part(c)?);
                norms.insert(
                    i,
                    BatchNorm {
                        mean,
                        var,
                        scale,
                        shift,
                        eps: *eps,
                    },
                );
            }
            _ => {}
        }
    }

    let index_of: BTreeMap<&str, usize> = v
        .graph()
        .nodes
        .iter()
        .enumerate()
        .map(|(i, n)| (n.id.as_str(), i))
        .collect();

    // a batch norm folds into its producer's bias only when nothing else reads it
    let mut absorbed: BTreeMap<usize, usize> = BTreeMap::new();
    for &q in norms.keys() {
        let producer = &v.sources(q)[0];
        if let Some(&p) = index_of.get(producer.as_str()) {
            if layers.contains_key(&p) && v.consumers(producer) == [q] {
                absorbed.insert(q, p);
            }
        }
    }

    // negative gains flip the sign of the producer's ±1 filters instead
    for (&q, &p) in &absorbed {
        let kind = &v.graph().nodes[p].kind;
        if kind.mode() != Some(Mode::Xnor) {
            continue;
        }
        let bn = norms.get_mut(&q).expect("present");
        let layer = layers.get_mut(&p).expect("present");
        for c in 0..layer.beta.len() {
            if bn.scale[c] < 0.0 {
                bn.scale[c] = -bn.scale[c];
                bn.mean[c] = -bn.mean[c];
                layer.beta[c] = -layer.beta[c];
                for w in &mut layer.weights[c * layer.lanes..(c + 1) * layer.lanes] {
                    *w = -*w;
                }
            }
        }
    }

    let mut params: BTreeMap<String, NodeParams> = BTreeMap::new();
    for (&i, layer) in &layers {
        let node = &v.graph().nodes[i];
        let bits = match input_type(&v, i) {
            ValueType::Quant { bits, .. } => *bits,
            other => return Err(Error::node(&node.id, format!("weighted layer on {other:?}"))),
        };
        let beta: Vec<i32> = layer
            .beta
            .iter()
            .map(|&b| {
                let r = round_half_up(b);
                if r.abs() >= 2f64.powi(31) {
                    Err(Error::node(&node.id, format!("bias {b} exceeds 32 bits")))
                } else {
                    Ok(r as i32)
                }
            })
            .collect::<Result<_>>()?;
        let set = match node.kind.mode() {
            Some(Mode::And) => {
                BinaryWeightSet::from_threshold(&layer.weights, layer.lanes, MASK_THRESHOLD, &beta, bits)
            }
            _ => BinaryWeightSet::from_signs(&layer.weights, layer.lanes, &beta, bits),
        }
        .map_err(|e| Error::node(&node.id, e.to_string()))?;
        params.entry(node.id.clone()).or_default().weights = Some(LayerWeights { set, beta });
    }

    for (i, node) in v.graph().nodes.iter().enumerate() {
        let LayerKind::QuantAct { bits, .. } = node.kind else {
            continue;
        };
        let channels = input_type(&v, i).dims().channels;
        let rq = match (norms.get(&i), absorbed.get(&i)) {
            (None, _) => RequantParams::identity(channels, bits),
            (Some(bn), None) => bn_requant(bn, bits).map_err(|e| Error::node(&node.id, e.to_string()))?,
            (Some(bn), Some(&p)) => {
                let producer = &v.graph().nodes[p].id;
                let w = params
                    .get_mut(producer)
                    .and_then(|np| np.weights.as_mut())
                    .expect("weighted producer");
                fold_into(w, bn, bits).map_err(|e| Error::node(&node.id, e.to_string()))?
            }
        };
        params.entry(node.id.clone()).or_default().requant = Some(rq);
    }

    Model::new(graph, params)
}

fn slice_bn(bn: &BatchNorm, range: std::ops::Range<usize>) -> BatchNorm {
    BatchNorm {
        mean: bn.mean[range.clone()].to_vec(),
        var: bn.var[range.clone()].to_vec(),
        scale: bn.scale[range.clone()].to_vec(),
        shift: bn.shift[range].to_vec(),
        eps: bn.eps,
    }
}

/// Folds `bn` into the layer's biases; channels past the layer's filters
/// (the pass-through part of a partial convolution) get a bias-free requantizer.
fn fold_into(w: &mut LayerWeights, bn: &BatchNorm, bits: u8) -> Result<RequantParams> {
    let filters = w.set.out_channels();
    let old = w.set.folded_bias().to_vec();
    let (mut rq, folded) = fold_bn(&old, &slice_bn(bn, 0..filters), bits)?;
    if bn.channels() > filters {
        let tail = bn_requant(&slice_bn(bn, filters..bn.channels()), bits)?;
        rq.multiplier.extend(tail.multiplier);
        rq.shift.extend(tail.shift);
        rq.offset.extend(tail.offset);
    }
    for c in 0..filters {
        let delta = i64::from(folded[c]) - i64::from(old[c]);
        w.beta[c] = i32::try_from(i64::from(w.beta[c]) + delta)
            .map_err(|_| Error::Overflow(format!("channel {c}: bias after batch-norm folding")))?;
    }
    let rows: Vec<_> = (0..filters).map(|c| w.set.row(c)).collect();
    w.set = BinaryWeightSet::from_parts(w.set.mode(), w.set.bits(), &rows, folded, w.set.provenance())?;
    Ok(rq)
}
