use std::collections::{BTreeMap, BTreeSet};

use serde::Serialize;

use super::spec::{LayerKind, NetworkGraph};
use crate::error::{Error, Result};
use crate::layers::{partial_channels, BinaryTarget};
use crate::tensor::{check_bits, Dims};

/// Static type of a value flowing along an edge.
#[derive(Clone, Copy, Debug, PartialEq, Serialize)]
#[serde(tag = "type", rename_all = "snake_case")]
pub enum ValueType {
    /// Unsigned activations of the given width.
    Quant { dims: Dims, bits: u8 },
    /// Signed 32-bit accumulators.
    Acc { dims: Dims },
    /// One packed row per channel of the binarized tensor.
    Bits {
        target: BinaryTarget,
        rows: usize,
        lanes: usize,
    },
}

impl ValueType {
    pub fn dims(&self) -> Dims {
        match *self {
            ValueType::Quant { dims, .. } | ValueType::Acc { dims } => dims,
            ValueType::Bits { rows, lanes, .. } => Dims::new(rows, 1, lanes),
        }
    }
}

/// A graph that passed validation, with its execution order and value types.
#[derive(Clone, Debug)]
pub struct ValidatedGraph {
    graph: NetworkGraph,
    order: Vec<usize>,
    sources: Vec<Vec<String>>,
    types: BTreeMap<String, ValueType>,
}

impl ValidatedGraph {
    pub fn graph(&self) -> &NetworkGraph {
        &self.graph
    }

    /// Node indices in deterministic topological order (ties broken by id).
    pub fn order(&self) -> &[usize] {
        &self.order
    }

    /// Producers feeding node `index`, by port.
    pub fn sources(&self, index: usize) -> &[String] {
        &self.sources[index]
    }

    pub fn value_type(&self, name: &str) -> Option<&ValueType> {
        self.types.get(name)
    }

    pub fn types(&self) -> &BTreeMap<String, ValueType> {
        &self.types
    }

    /// Indices of the nodes reading `name`.
    pub fn consumers(&self, name: &str) -> Vec<usize> {
        let mut out: Vec<usize> = self
            .sources
            .iter()
            .enumerate()
            .filter(|(_, s)| s.iter().any(|p| p == name))
            .map(|(i, _)| i)
            .collect();
        out.dedup();
        out
    }
}

fn node_err(id: &str, msg: impl Into<String>) -> Error {
    Error::node(id, msg)
}

/// Checks structure, parameters and shapes, and annotates every value with its type.
pub fn validate(graph: &NetworkGraph) -> Result<ValidatedGraph> {
    let mut names: BTreeSet<&str> = BTreeSet::new();
    for input in &graph.inputs {
        check_bits(input.bits).map_err(|e| node_err(&input.name, e.to_string()))?;
        if !names.insert(&input.name) {
            return Err(node_err(&input.name, "duplicate name"));
        }
    }
    let mut index_of = BTreeMap::new();
    for (i, node) in graph.nodes.iter().enumerate() {
        if !names.insert(&node.id) {
            return Err(node_err(&node.id, "duplicate name"));
        }
        index_of.insert(node.id.as_str(), i);
    }

    let mut sources: Vec<Vec<Option<String>>> =
        graph.nodes.iter().map(|n| vec![None; n.kind.arity()]).collect();
    for edge in &graph.edges {
        let &to = index_of
            .get(edge.to.as_str())
            .ok_or_else(|| node_err(&edge.to, format!("edge from `{}` targets an unknown node", edge.from)))?;
        if !names.contains(edge.from.as_str()) {
            return Err(node_err(&edge.to, format!("dangling edge from unknown `{}`", edge.from)));
        }
        let slot = sources[to]
            .get_mut(edge.port)
            .ok_or_else(|| node_err(&edge.to, format!("no input port {}", edge.port)))?;
        if slot.is_some() {
            return Err(node_err(&edge.to, format!("port {} bound more than once", edge.port)));
        }
        *slot = Some(edge.from.clone());
    }
    let sources: Vec<Vec<String>> = sources
        .into_iter()
        .zip(&graph.nodes)
        .map(|(ports, node)| {
            ports
                .into_iter()
                .enumerate()
                .map(|(p, s)| s.ok_or_else(|| node_err(&node.id, format!("port {p} is unbound"))))
                .collect()
        })
        .collect::<Result<_>>()?;

    // Kahn's algorithm, smallest id first
    let mut pending: Vec<usize> = sources
        .iter()
        .map(|s| s.iter().filter(|p| index_of.contains_key(p.as_str())).count())
        .collect();
    let mut ready: BTreeSet<&str> = graph
        .nodes
        .iter()
        .zip(&pending)
        .filter(|(_, &n)| n == 0)
        .map(|(node, _)| node.id.as_str())
        .collect();
    let mut order = Vec::with_capacity(graph.nodes.len());
    while let Some(id) = ready.pop_first() {
        order.push(index_of[id]);
        for (i, s) in sources.iter().enumerate() {
            let hits = s.iter().filter(|p| p.as_str() == id).count();
            if hits > 0 {
                pending[i] -= hits;
                if pending[i] == 0 {
                    ready.insert(&graph.nodes[i].id);
                }
            }
        }
    }
    if order.len() != graph.nodes.len() {
        let placed: BTreeSet<usize> = order.iter().copied().collect();
        let stuck = (0..graph.nodes.len())
            .filter(|i| !placed.contains(i))
            .map(|i| graph.nodes[i].id.clone())
            .collect::<BTreeSet<_>>();
        return Err(Error::Cycle(stuck.into_iter().collect()));
    }

    let mut types = BTreeMap::new();
    for input in &graph.inputs {
        types.insert(
            input.name.clone(),
            ValueType::Quant {
                dims: input.dims,
                bits: input.bits,
            },
        );
    }
    for &i in &order {
        let node = &graph.nodes[i];
        let inputs: Vec<ValueType> = sources[i].iter().map(|s| types[s]).collect();
        let ty = infer(&node.kind, &inputs).map_err(|e| match e {
            Error::Node { .. } => e,
            other => node_err(&node.id, other.to_string()),
        })?;
        types.insert(node.id.clone(), ty);
    }

    let mut seen = BTreeSet::new();
    for out in &graph.outputs {
        if !seen.insert(&out.name) {
            return Err(node_err(&out.name, "duplicate output name"));
        }
        match types.get(&out.from) {
            None => return Err(node_err(&out.name, format!("output bound to unknown `{}`", out.from))),
            Some(ValueType::Bits { .. }) => {
                return Err(node_err(&out.name, "binarized values cannot be graph outputs"))
            }
            Some(_) => {}
        }
    }

    Ok(ValidatedGraph {
        graph: graph.clone(),
        order,
        sources,
        types,
    })
}

fn expect_quant(ty: &ValueType, what: &str) -> Result<(Dims, u8)> {
    match *ty {
        ValueType::Quant { dims, bits } => Ok((dims, bits)),
        other => Err(Error::Shape(format!("{what} needs a quantized input, got {other:?}"))),
    }
}

fn expect_channels(dims: Dims, channels: usize) -> Result<()> {
    if dims.channels != channels {
        return Err(Error::Shape(format!(
            "declared {channels} input channels, incoming tensor is {dims}"
        )));
    }
    Ok(())
}

/// Output type of one layer given its input types.
pub(crate) fn infer(kind: &LayerKind, inputs: &[ValueType]) -> Result<ValueType> {
    let geometry_out = |dims: Dims, channels: usize| -> Result<Dims> {
        let g = kind.geometry().expect("conv kinds carry a geometry");
        let (h, w) = g.output_hw(dims.height, dims.width)?;
        Ok(Dims::new(channels, h, w))
    };
    match *kind {
        LayerKind::Bconv2d {
            in_channels,
            out_channels,
            ..
        }
        | LayerKind::DownsampleConv {
            in_channels,
            out_channels,
            ..
        } => {
            let (dims, _) = expect_quant(&inputs[0], kind.name())?;
            expect_channels(dims, in_channels)?;
            if out_channels == 0 {
                return Err(Error::Config("zero output channels".into()));
            }
            Ok(ValueType::Acc {
                dims: geometry_out(dims, out_channels)?,
            })
        }
        LayerKind::Bdwconv2d { channels, .. } => {
            let (dims, _) = expect_quant(&inputs[0], kind.name())?;
            expect_channels(dims, channels)?;
            Ok(ValueType::Acc {
                dims: geometry_out(dims, channels)?,
            })
        }
        LayerKind::Pconv2d {
            channels,
            kernel,
            split_ratio,
        } => {
            let (dims, _) = expect_quant(&inputs[0], kind.name())?;
            expect_channels(dims, channels)?;
            partial_channels(channels, split_ratio)?;
            if kernel % 2 == 0 {
                return Err(Error::Config(format!("partial convolution kernel {kernel} is even")));
            }
            Ok(ValueType::Acc { dims })
        }
        LayerKind::BnFoldMarker {} => Ok(inputs[0]),
        LayerKind::QuantAct { bits, eps, .. } => {
            check_bits(bits)?;
            if eps.is_nan() || eps < 0.0 {
                return Err(Error::Config(format!("batch-norm eps {eps} must be nonnegative")));
            }
            match inputs[0] {
                ValueType::Bits { .. } => Err(Error::Shape("quant_act of binarized values".into())),
                other => Ok(ValueType::Quant {
                    dims: other.dims(),
                    bits,
                }),
            }
        }
        LayerKind::Bmm { mode } => {
            let (dims, _) = expect_quant(&inputs[0], "bmm left operand")?;
            match inputs[1] {
                ValueType::Bits {
                    target,
                    rows,
                    lanes,
                } => {
                    if target.mode() != mode {
                        return Err(Error::Config(format!(
                            "{target:?} operand used in mode {mode}"
                        )));
                    }
                    if lanes != dims.plane() {
                        return Err(Error::Shape(format!(
                            "inner dimensions differ: {} vs {lanes}",
                            dims.plane()
                        )));
                    }
                    Ok(ValueType::Acc {
                        dims: Dims::new(dims.channels, 1, rows),
                    })
                }
                other => Err(Error::Shape(format!(
                    "bmm right operand must be binarized, got {other:?}"
                ))),
            }
        }
        LayerKind::UpsampleNearest { factor } => {
            if factor == 0 {
                return Err(Error::Config("upsample factor 0".into()));
            }
            let up = |d: Dims| Dims::new(d.channels, d.height * factor, d.width * factor);
            match inputs[0] {
                ValueType::Quant { dims, bits } => Ok(ValueType::Quant {
                    dims: up(dims),
                    bits,
                }),
                ValueType::Acc { dims } => Ok(ValueType::Acc { dims: up(dims) }),
                ValueType::Bits { .. } => Err(Error::Shape("upsample of binarized values".into())),
            }
        }
        LayerKind::EltwiseAdd {} => {
            let (a, b) = (inputs[0], inputs[1]);
            if matches!(a, ValueType::Bits { .. }) || matches!(b, ValueType::Bits { .. }) {
                return Err(Error::Shape("eltwise_add of binarized values".into()));
            }
            if a.dims() != b.dims() {
                return Err(Error::Shape(format!("cannot add {} and {}", a.dims(), b.dims())));
            }
            Ok(ValueType::Acc { dims: a.dims() })
        }
        LayerKind::CoordEmbed {} => {
            let (dims, bits) = expect_quant(&inputs[0], kind.name())?;
            if dims.plane() == 0 {
                return Err(Error::Shape("coordinate embedding of empty plane".into()));
            }
            Ok(ValueType::Quant {
                dims: Dims::new(dims.channels + 2, dims.height, dims.width),
                bits,
            })
        }
        LayerKind::BinarizeAct { target, threshold } => {
            if !threshold.is_finite() {
                return Err(Error::Config(format!("threshold {threshold} is not finite")));
            }
            match inputs[0] {
                ValueType::Bits { .. } => Err(Error::Shape("binarize of binarized values".into())),
                other => {
                    let dims = other.dims();
                    Ok(ValueType::Bits {
                        target,
                        rows: dims.channels,
                        lanes: dims.plane(),
                    })
                }
            }
        }
    }
}

/// Lane count (reduction length) of a MAC layer given its input type.
pub(crate) fn lanes_of(kind: &LayerKind, input: &ValueType) -> usize {
    let dims = input.dims();
    match *kind {
        LayerKind::Bconv2d { kernel, .. } | LayerKind::DownsampleConv { kernel, .. } => {
            dims.channels * kernel * kernel
        }
        LayerKind::Bdwconv2d { kernel, .. } => kernel * kernel,
        LayerKind::Pconv2d {
            channels,
            kernel,
            split_ratio,
        } => partial_channels(channels, split_ratio).unwrap_or(0) * kernel * kernel,
        LayerKind::Bmm { .. } => dims.plane(),
        _ => 0,
    }
}

/// Output channels of a weighted layer.
pub(crate) fn filters_of(kind: &LayerKind) -> usize {
    match *kind {
        LayerKind::Bconv2d { out_channels, .. } | LayerKind::DownsampleConv { out_channels, .. } => {
            out_channels
        }
        LayerKind::Bdwconv2d { channels, .. } => channels,
        LayerKind::Pconv2d {
            channels,
            split_ratio,
            ..
        } => partial_channels(channels, split_ratio).unwrap_or(0),
        _ => 0,
    }
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::bitcore::Mode;

    fn conv(cin: usize, cout: usize, k: usize, pad: usize) -> LayerKind {
        LayerKind::Bconv2d {
            in_channels: cin,
            out_channels: cout,
            kernel: k,
            stride: 1,
            pad,
            mode: Mode::Xnor,
        }
    }

    #[test]
    fn single_conv_is_valid() {
        let mut g = NetworkGraph::default();
        g.input("x", Dims::new(1, 4, 4), 8)
            .layer("c", conv(1, 1, 1, 0), &["x"])
            .output("y", "c");
        let v = validate(&g).unwrap();
        assert_eq!(v.value_type("c"), Some(&ValueType::Acc { dims: Dims::new(1, 4, 4) }));
    }

    #[test]
    fn two_node_cycle_names_both() {
        let mut g = NetworkGraph::default();
        g.layer("a", LayerKind::BnFoldMarker {}, &["b"])
            .layer("b", LayerKind::BnFoldMarker {}, &["a"]);
        match validate(&g).unwrap_err() {
            Error::Cycle(ids) => assert_eq!(ids, vec!["a".to_string(), "b".to_string()]),
            other => panic!("unexpected {other}"),
        }
    }

    #[test]
    fn channel_mismatch_is_shape_error_on_node() {
        let mut g = NetworkGraph::default();
        g.input("x", Dims::new(3, 4, 4), 8).layer("c", conv(2, 1, 3, 1), &["x"]);
        match validate(&g).unwrap_err() {
            Error::Node { node, message } => {
                assert_eq!(node, "c");
                assert!(message.contains("shape"), "{message}");
            }
            other => panic!("unexpected {other}"),
        }
    }

    #[test]
    fn structural_errors() {
        let mut g = NetworkGraph::default();
        g.input("x", Dims::new(1, 2, 2), 8).layer("c", conv(1, 1, 1, 0), &["nope"]);
        assert!(matches!(validate(&g), Err(Error::Node { node, .. }) if node == "c"));

        let mut g = NetworkGraph::default();
        g.input("x", Dims::new(1, 2, 2), 8).layer("c", conv(1, 1, 1, 0), &[]);
        assert!(matches!(validate(&g), Err(Error::Node { message, .. }) if message.contains("unbound")));

        let mut g = NetworkGraph::default();
        g.input("x", Dims::new(1, 2, 2), 8)
            .layer("c", conv(1, 1, 1, 0), &["x"])
            .layer("c", conv(1, 1, 1, 0), &["x"]);
        assert!(validate(&g).is_err());

        let mut g = NetworkGraph::default();
        g.input("x", Dims::new(1, 2, 2), 8).layer("c", conv(1, 1, 1, 0), &["x", "x"]);
        assert!(matches!(validate(&g), Err(Error::Node { message, .. }) if message.contains("port 1")));
    }

    #[test]
    fn bmm_mode_must_match_binarization() {
        let mut g = NetworkGraph::default();
        g.input("x", Dims::new(2, 2, 2), 8)
            .layer(
                "b",
                LayerKind::BinarizeAct {
                    target: BinaryTarget::PlusMinusOne,
                    threshold: 0.0,
                },
                &["x"],
            )
            .layer("m", LayerKind::Bmm { mode: Mode::And }, &["x", "b"]);
        assert!(matches!(validate(&g), Err(Error::Node { node, .. }) if node == "m"));
    }

    #[test]
    fn order_breaks_ties_by_id() {
        let mut g = NetworkGraph::default();
        g.input("x", Dims::new(1, 2, 2), 8)
            .layer("zeta", LayerKind::BnFoldMarker {}, &["x"])
            .layer("alpha", LayerKind::BnFoldMarker {}, &["x"])
            .layer("mid", LayerKind::EltwiseAdd {}, &["zeta", "alpha"]);
        let v = validate(&g).unwrap();
        let ids: Vec<&str> = v.order().iter().map(|&i| g.nodes[i].id.as_str()).collect();
        assert_eq!(ids, ["alpha", "zeta", "mid"]);
    }
}
