use std::collections::BTreeMap;

use super::spec::{LayerKind, NetworkGraph};
use super::validate::{filters_of, lanes_of, validate, ValidatedGraph, ValueType};
use crate::bitcore::BinaryWeightSet;
use crate::error::{Error, Result};
use crate::layers::RequantParams;

/// Weights of one MAC layer.
///
/// `set` is what the engine runs; `beta` is the unfolded bias, kept so the
/// folding can be re-checked and so the oracle can evaluate the layer directly.
#[derive(Clone, Debug, PartialEq, Eq)]
pub struct LayerWeights {
    pub set: BinaryWeightSet,
    pub beta: Vec<i32>,
}

#[derive(Clone, Debug, Default, PartialEq, Eq)]
pub struct NodeParams {
    pub weights: Option<LayerWeights>,
    pub requant: Option<RequantParams>,
}

/// A validated graph with every node's parameters bound.
#[derive(Clone, Debug)]
pub struct Model {
    graph: ValidatedGraph,
    params: BTreeMap<String, NodeParams>,
}

impl Model {
    pub fn new(graph: &NetworkGraph, params: BTreeMap<String, NodeParams>) -> Result<Self> {
        let graph = validate(graph)?;
        for id in params.keys() {
            if graph.graph().node(id).is_none() {
                return Err(Error::node(id, "parameters for a node that is not in the graph"));
            }
        }
        let empty = NodeParams::default();
        for (i, node) in graph.graph().nodes.iter().enumerate() {
            let p = params.get(&node.id).unwrap_or(&empty);
            let input = graph.value_type(&graph.sources(i)[0]).expect("validated");
            check_binding(&node.kind, input, p).map_err(|e| match e {
                Error::Node { .. } => e,
                other => Error::node(&node.id, other.to_string()),
            })?;
        }
        Ok(Model { graph, params })
    }

    pub fn graph(&self) -> &ValidatedGraph {
        &self.graph
    }

    pub fn params(&self) -> &BTreeMap<String, NodeParams> {
        &self.params
    }

    pub fn node_params(&self, id: &str) -> Option<&NodeParams> {
        self.params.get(id)
    }

    /// Re-derives β from each mode-0 weight set via the closed-form correction
    /// term and compares it with the stored β.
    pub fn check_folding(&self) -> Result<()> {
        for (id, p) in &self.params {
            let Some(w) = &p.weights else { continue };
            let recovered = w.set.unfolded_bias();
            if let Some(c) = (0..w.beta.len()).find(|&c| recovered[c] != i64::from(w.beta[c])) {
                return Err(Error::node(
                    id,
                    format!(
                        "channel {c}: folded bias {} implies beta {}, record holds {}",
                        w.set.folded_bias()[c],
                        recovered[c],
                        w.beta[c]
                    ),
                ));
            }
        }
        Ok(())
    }
}

fn check_binding(kind: &LayerKind, input: &ValueType, p: &NodeParams) -> Result<()> {
    if kind.has_weights() {
        let w = p
            .weights
            .as_ref()
            .ok_or_else(|| Error::Config("missing weight record".into()))?;
        let set = &w.set;
        let (lanes, filters) = (lanes_of(kind, input), filters_of(kind));
        if set.lanes() != lanes || set.out_channels() != filters {
            return Err(Error::Shape(format!(
                "weights are {}x{} lanes, layer needs {filters}x{lanes}",
                set.out_channels(),
                set.lanes()
            )));
        }
        if Some(set.mode()) != kind.mode() {
            return Err(Error::Mode {
                expected: kind.mode().map_or(0, |m| m.code()),
                found: set.mode().code(),
            });
        }
        if let ValueType::Quant { bits, .. } = *input {
            if set.bits() != bits {
                return Err(Error::Config(format!(
                    "weights folded for {}-bit activations, input is {bits}-bit",
                    set.bits()
                )));
            }
        }
        if w.beta.len() != filters {
            return Err(Error::Shape(format!("{} biases for {filters} filters", w.beta.len())));
        }
    } else if p.weights.is_some() {
        return Err(Error::Config(format!("{} takes no weights", kind.name())));
    }
    match kind {
        LayerKind::QuantAct { bits, .. } => {
            let rq = p
                .requant
                .as_ref()
                .ok_or_else(|| Error::Config("missing requantization parameters".into()))?;
            rq.validate()?;
            if rq.bits != *bits || rq.channels() != input.dims().channels {
                return Err(Error::Shape(format!(
                    "requant covers {} channels at {} bits, layer needs {} at {bits}",
                    rq.channels(),
                    rq.bits,
                    input.dims().channels
                )));
            }
        }
        _ if p.requant.is_some() => {
            return Err(Error::Config(format!("{} takes no requantization", kind.name())));
        }
        _ => {}
    }
    Ok(())
}
