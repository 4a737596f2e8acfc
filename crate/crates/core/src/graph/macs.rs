use serde::{Deserialize, Serialize};

use super::exec::node_macs;
use super::validate::{ValidatedGraph, ValueType};

#[derive(Clone, Debug, PartialEq, Eq, Serialize, Deserialize)]
pub struct LayerMacs {
    pub id: String,
    pub kind: String,
    pub macs: u64,
}

/// MAC counts per MAC-bearing layer (in execution order) and in total.
#[derive(Clone, Debug, Default, PartialEq, Eq, Serialize, Deserialize)]
pub struct MacReport {
    pub layers: Vec<LayerMacs>,
    pub total: u64,
}

impl MacReport {
    pub fn gmacs(&self) -> f64 {
        self.total as f64 / 1e9
    }
}

/// Analytic MAC count of a validated graph at its declared input shapes.
///
/// Convolutions count `C_out·H_out·W_out·C_in·k_h·k_w`, depthwise layers
/// `C·H_out·W_out·k_h·k_w`, partial convolutions only their convolved slice,
/// and BMM `rows·cols·K`.
pub fn count_macs(graph: &ValidatedGraph) -> MacReport {
    let nodes = &graph.graph().nodes;
    let layers: Vec<LayerMacs> = graph
        .order()
        .iter()
        .filter_map(|&i| {
            let node = &nodes[i];
            node.kind.mode()?;
            let inputs: Vec<ValueType> = graph
                .sources(i)
                .iter()
                .map(|s| *graph.value_type(s).expect("validated"))
                .collect();
            let output = graph.value_type(&node.id).expect("validated");
            Some(LayerMacs {
                id: node.id.clone(),
                kind: node.kind.name().into(),
                macs: node_macs(&node.kind, &inputs, output),
            })
        })
        .collect();
    MacReport {
        total: layers.iter().map(|l| l.macs).sum(),
        layers,
    }
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::bitcore::Mode;
    use crate::graph::{validate, LayerKind, NetworkGraph};
    use crate::tensor::Dims;

    #[test]
    fn pointwise_conv_on_four_by_four() {
        let mut g = NetworkGraph::default();
        g.input("x", Dims::new(1, 4, 4), 8).layer(
            "c",
            LayerKind::Bconv2d {
                in_channels: 1,
                out_channels: 1,
                kernel: 1,
                stride: 1,
                pad: 0,
                mode: Mode::Xnor,
            },
            &["x"],
        );
        assert_eq!(count_macs(&validate(&g).unwrap()).total, 16);
    }

    #[test]
    fn depthwise_valid_conv() {
        let mut g = NetworkGraph::default();
        g.input("x", Dims::new(8, 10, 10), 8).layer(
            "d",
            LayerKind::Bdwconv2d {
                channels: 8,
                kernel: 3,
                stride: 1,
                pad: 0,
            },
            &["x"],
        );
        assert_eq!(count_macs(&validate(&g).unwrap()).total, 4608);
    }

    #[test]
    fn empty_graph() {
        let report = count_macs(&validate(&NetworkGraph::default()).unwrap());
        assert_eq!(report.total, 0);
        assert!(report.layers.is_empty());
    }
}
