use std::collections::{BTreeMap, BTreeSet};
use std::time::Instant;

use rayon::prelude::*;
use serde::{Deserialize, Serialize};

use super::model::{Model, NodeParams};
use super::spec::LayerKind;
use super::validate::{lanes_of, ValidatedGraph, ValueType};
use crate::error::{Error, Result};
use crate::layers::{self, Addend, BinaryActivation};
use crate::tensor::{AccTensor, Dims, QuantTensor};

/// A value produced or consumed by a node.
#[derive(Clone, Debug, PartialEq, Eq)]
pub enum Value {
    Quant(QuantTensor),
    Acc(AccTensor),
    Bits(BinaryActivation),
}

impl Value {
    pub fn dims(&self) -> Dims {
        match self {
            Value::Quant(t) => t.dims(),
            Value::Acc(t) => t.dims(),
            Value::Bits(b) => Dims::new(b.rows.len(), 1, b.lanes()),
        }
    }

    fn widen(&self) -> Result<AccTensor> {
        match self {
            Value::Quant(t) => Ok(t.to_acc()),
            Value::Acc(t) => Ok(t.clone()),
            Value::Bits(_) => Err(Error::Shape("binarized value where a tensor was expected".into())),
        }
    }

    fn quant(&self) -> Result<&QuantTensor> {
        match self {
            Value::Quant(t) => Ok(t),
            _ => Err(Error::Shape("expected a quantized tensor".into())),
        }
    }
}

#[derive(Clone, Debug, Default, PartialEq, Eq, Serialize, Deserialize)]
pub struct NodeTrace {
    pub id: String,
    pub kind: String,
    pub dims: Dims,
    pub macs: u64,
    #[serde(skip_serializing_if = "Option::is_none")]
    pub mode: Option<u8>,
    pub wall_ns: u64,
}

/// Per-node record of one execution, in topological order.
#[derive(Clone, Debug, Default, PartialEq, Eq, Serialize, Deserialize)]
pub struct ExecutionTrace {
    pub nodes: Vec<NodeTrace>,
    pub total_macs: u64,
    pub total_wall_ns: u64,
    pub threads: usize,
}

#[derive(Clone, Copy, Debug, PartialEq, Eq)]
pub struct ExecOptions {
    /// Worker count; 0 uses every available core.
    pub threads: usize,
    /// Keep every intermediate value, not just the graph outputs.
    pub keep_intermediates: bool,
}

impl Default for ExecOptions {
    fn default() -> Self {
        ExecOptions {
            threads: 1,
            keep_intermediates: false,
        }
    }
}

pub struct Execution {
    pub outputs: BTreeMap<String, Value>,
    /// Every node value when `keep_intermediates` was set, else empty.
    pub values: BTreeMap<String, Value>,
    pub trace: ExecutionTrace,
}

/// MACs performed by one node, `outputs · I` for the MAC-bearing kinds.
pub(crate) fn node_macs(kind: &LayerKind, inputs: &[ValueType], output: &ValueType) -> u64 {
    let lanes = match kind {
        LayerKind::Bmm { .. } => lanes_of(kind, &inputs[0]),
        k if k.has_weights() => lanes_of(k, &inputs[0]),
        _ => return 0,
    } as u64;
    let dims = output.dims();
    let outputs = match *kind {
        LayerKind::Pconv2d {
            channels,
            split_ratio,
            ..
        } => {
            layers::partial_channels(channels, split_ratio).unwrap_or(0) as u64 * dims.plane() as u64
        }
        _ => dims.len() as u64,
    };
    outputs * lanes
}

fn run_node(kind: &LayerKind, params: Option<&NodeParams>, inputs: &[&Value]) -> Result<Value> {
    let weights = || {
        params
            .and_then(|p| p.weights.as_ref())
            .map(|w| &w.set)
            .ok_or_else(|| Error::Config("missing weights".into()))
    };
    let geometry = || kind.geometry().expect("conv kinds carry a geometry");
    Ok(match kind {
        LayerKind::Bconv2d { .. } | LayerKind::DownsampleConv { .. } => {
            Value::Acc(layers::bconv2d(inputs[0].quant()?, weights()?, &geometry())?)
        }
        LayerKind::Bdwconv2d { .. } => {
            Value::Acc(layers::bdwconv2d(inputs[0].quant()?, weights()?, &geometry())?)
        }
        LayerKind::Pconv2d {
            kernel,
            split_ratio,
            ..
        } => Value::Acc(layers::pconv2d(inputs[0].quant()?, weights()?, *kernel, *split_ratio)?),
        LayerKind::BnFoldMarker {} => inputs[0].clone(),
        LayerKind::QuantAct { .. } => {
            let rq = params
                .and_then(|p| p.requant.as_ref())
                .ok_or_else(|| Error::Config("missing requantization".into()))?;
            Value::Quant(layers::quant_act(&inputs[0].widen()?, rq)?)
        }
        LayerKind::Bmm { mode } => {
            let Value::Bits(right) = inputs[1] else {
                return Err(Error::Shape("bmm right operand is not binarized".into()));
            };
            Value::Acc(layers::bmm(inputs[0].quant()?, right, *mode, None)?)
        }
        LayerKind::UpsampleNearest { factor } => match inputs[0] {
            Value::Quant(t) => Value::Quant(layers::upsample_nearest(t, *factor)?),
            Value::Acc(t) => Value::Acc(layers::upsample_nearest_acc(t, *factor)?),
            Value::Bits(_) => return Err(Error::Shape("upsample of binarized value".into())),
        },
        LayerKind::EltwiseAdd {} => {
            let rhs = inputs[1].widen()?;
            Value::Acc(layers::adder_array(&inputs[0].widen()?, Addend::Tensor(&rhs))?)
        }
        LayerKind::CoordEmbed {} => Value::Quant(layers::coord_embed(inputs[0].quant()?)?),
        LayerKind::BinarizeAct { target, threshold } => Value::Bits(match inputs[0] {
            Value::Quant(t) => layers::binarize_act(t.dims(), t.data(), *target, *threshold)?,
            Value::Acc(t) => layers::binarize_act(t.dims(), t.data(), *target, *threshold)?,
            Value::Bits(_) => return Err(Error::Shape("binarize of binarized value".into())),
        }),
    })
}

fn check_inputs(graph: &ValidatedGraph, inputs: &BTreeMap<String, QuantTensor>) -> Result<()> {
    for binding in &graph.graph().inputs {
        let t = inputs
            .get(&binding.name)
            .ok_or_else(|| Error::node(&binding.name, "graph input not supplied"))?;
        if t.dims() != binding.dims || t.bits() != binding.bits {
            return Err(Error::node(
                &binding.name,
                format!(
                    "expected {} at {} bits, got {} at {} bits",
                    binding.dims,
                    binding.bits,
                    t.dims(),
                    t.bits()
                ),
            ));
        }
    }
    if let Some(extra) = inputs
        .keys()
        .find(|k| !graph.graph().inputs.iter().any(|b| &b.name == *k))
    {
        return Err(Error::node(extra, "not a graph input"));
    }
    Ok(())
}

/// Runs a model on the given inputs.
///
/// Nodes whose producers are all done run concurrently when more than one
/// worker is allowed; results do not depend on the worker count.
pub fn execute(
    model: &Model,
    inputs: &BTreeMap<String, QuantTensor>,
    opts: &ExecOptions,
) -> Result<Execution> {
    let graph = model.graph();
    check_inputs(graph, inputs)?;
    let pool = rayon::ThreadPoolBuilder::new()
        .num_threads(opts.threads)
        .build()
        .map_err(|e| Error::Config(format!("thread pool: {e}")))?;
    let threads = pool.current_num_threads();
    pool.install(|| run(model, inputs, opts, threads))
}

fn run(
    model: &Model,
    inputs: &BTreeMap<String, QuantTensor>,
    opts: &ExecOptions,
    threads: usize,
) -> Result<Execution> {
    let graph = model.graph();
    let nodes = &graph.graph().nodes;
    let start = Instant::now();

    let mut values: BTreeMap<String, Value> = inputs
        .iter()
        .map(|(k, v)| (k.clone(), Value::Quant(v.clone())))
        .collect();
    let mut traces: BTreeMap<usize, NodeTrace> = BTreeMap::new();

    let exec_one = |i: usize, values: &BTreeMap<String, Value>| -> Result<(Value, u64)> {
        let node = &nodes[i];
        let args: Vec<&Value> = graph.sources(i).iter().map(|s| &values[s]).collect();
        let t0 = Instant::now();
        let out = run_node(&node.kind, model.node_params(&node.id), &args)
            .map_err(|e| match e {
                Error::Node { .. } => e,
                other => Error::node(&node.id, other.to_string()),
            })?;
        Ok((out, t0.elapsed().as_nanos() as u64))
    };

    if threads <= 1 {
        for &i in graph.order() {
            let (out, ns) = exec_one(i, &values)?;
            traces.insert(i, trace_for(graph, i, ns));
            values.insert(nodes[i].id.clone(), out);
        }
    } else {
        let mut done: BTreeSet<usize> = BTreeSet::new();
        while done.len() < nodes.len() {
            let wave: Vec<usize> = graph
                .order()
                .iter()
                .copied()
                .filter(|i| !done.contains(i))
                .filter(|&i| graph.sources(i).iter().all(|s| values.contains_key(s)))
                .collect();
            let results: Vec<Result<(Value, u64)>> =
                wave.par_iter().map(|&i| exec_one(i, &values)).collect();
            for (&i, result) in wave.iter().zip(results) {
                let (out, ns) = result?;
                traces.insert(i, trace_for(graph, i, ns));
                values.insert(nodes[i].id.clone(), out);
                done.insert(i);
            }
        }
    }

    let outputs = graph
        .graph()
        .outputs
        .iter()
        .map(|o| (o.name.clone(), values[&o.from].clone()))
        .collect();
    let nodes_trace: Vec<NodeTrace> = graph
        .order()
        .iter()
        .map(|i| traces.remove(i).expect("every node ran"))
        .collect();
    let trace = ExecutionTrace {
        total_macs: nodes_trace.iter().map(|t| t.macs).sum(),
        nodes: nodes_trace,
        total_wall_ns: start.elapsed().as_nanos() as u64,
        threads,
    };
    if !opts.keep_intermediates {
        values.clear();
    }
    Ok(Execution {
        outputs,
        values,
        trace,
    })
}

fn trace_for(graph: &ValidatedGraph, i: usize, wall_ns: u64) -> NodeTrace {
    let node = &graph.graph().nodes[i];
    let inputs: Vec<ValueType> = graph
        .sources(i)
        .iter()
        .map(|s| *graph.value_type(s).expect("validated"))
        .collect();
    let output = graph.value_type(&node.id).expect("validated");
    NodeTrace {
        id: node.id.clone(),
        kind: node.kind.name().into(),
        dims: output.dims(),
        macs: node_macs(&node.kind, &inputs, output),
        mode: node.kind.mode().map(|m| m.code()),
        wall_ns,
    }
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::convert::convert;
    use crate::graph::zoo;

    fn toy() -> (Model, BTreeMap<String, QuantTensor>) {
        let g = zoo::toy_network();
        let model = convert(&g, &zoo::random_blob(&g, 7).unwrap()).unwrap();
        (model, zoo::random_inputs(&g, 11).unwrap())
    }

    #[test]
    fn worker_count_does_not_change_results() {
        let (model, inputs) = toy();
        let one = execute(&model, &inputs, &ExecOptions { threads: 1, keep_intermediates: true }).unwrap();
        let four = execute(&model, &inputs, &ExecOptions { threads: 4, keep_intermediates: true }).unwrap();
        assert_eq!(one.outputs, four.outputs);
        assert_eq!(one.values, four.values);
        assert_eq!(four.trace.threads, 4);
        let ids = |t: &ExecutionTrace| t.nodes.iter().map(|n| n.id.clone()).collect::<Vec<_>>();
        assert_eq!(ids(&one.trace), ids(&four.trace));
        assert_eq!(one.trace.total_macs, four.trace.total_macs);
    }

    #[test]
    fn toy_outputs_are_not_saturated() {
        let (model, inputs) = toy();
        let run = execute(&model, &inputs, &ExecOptions { threads: 1, keep_intermediates: true }).unwrap();
        for (id, v) in &run.values {
            if let Value::Quant(t) = v {
                let distinct: BTreeSet<_> = t.data().iter().collect();
                assert!(distinct.len() > 2, "{id} collapsed to {distinct:?}");
            }
        }
    }

    #[test]
    fn trace_counts_macs() {
        let (model, inputs) = toy();
        let run = execute(&model, &inputs, &ExecOptions::default()).unwrap();
        let stem = run.trace.nodes.iter().find(|n| n.id == "stem").unwrap();
        assert_eq!(stem.macs, 8 * 16 * 16 * 27);
        assert_eq!(stem.mode, Some(0));
        let total = crate::graph::count_macs(model.graph()).total;
        assert_eq!(run.trace.total_macs, total);
    }

    #[test]
    fn rejects_wrong_inputs() {
        let (model, mut inputs) = toy();
        let t = QuantTensor::zeros(Dims::new(3, 8, 8), 8).unwrap();
        inputs.insert("image".into(), t);
        assert!(matches!(
            execute(&model, &inputs, &ExecOptions::default()),
            Err(Error::Node { node, .. }) if node == "image"
        ));
        inputs.clear();
        assert!(execute(&model, &inputs, &ExecOptions::default()).is_err());
    }
}
