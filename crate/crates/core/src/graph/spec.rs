use serde::{Deserialize, Serialize};

use crate::bitcore::Mode;
use crate::layers::{BinaryTarget, ConvGeometry};
use crate::tensor::{Dims, DEFAULT_BITS};

fn one() -> usize {
    1
}

fn two() -> usize {
    2
}

fn three() -> usize {
    3
}

fn xnor() -> Mode {
    Mode::Xnor
}

fn default_bits() -> u8 {
    DEFAULT_BITS
}

fn default_split() -> f64 {
    0.25
}

fn default_eps() -> f64 {
    1e-5
}

/// Layer type and its parameters.
#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
#[serde(tag = "kind", content = "params", rename_all = "snake_case")]
pub enum LayerKind {
    Bconv2d {
        in_channels: usize,
        out_channels: usize,
        kernel: usize,
        #[serde(default = "one")]
        stride: usize,
        #[serde(default)]
        pad: usize,
        #[serde(default = "xnor")]
        mode: Mode,
    },
    Bdwconv2d {
        channels: usize,
        kernel: usize,
        #[serde(default = "one")]
        stride: usize,
        #[serde(default)]
        pad: usize,
    },
    Pconv2d {
        channels: usize,
        #[serde(default = "three")]
        kernel: usize,
        #[serde(default = "default_split")]
        split_ratio: f64,
    },
    DownsampleConv {
        in_channels: usize,
        out_channels: usize,
        #[serde(default = "two")]
        kernel: usize,
        #[serde(default = "two")]
        stride: usize,
        #[serde(default)]
        pad: usize,
    },
    /// Position of a batch norm that has been folded away; a no-op at run time.
    BnFoldMarker {},
    QuantAct {
        #[serde(default = "default_bits")]
        bits: u8,
        /// Whether the converter reads batch-norm statistics for this node.
        #[serde(default)]
        bn: bool,
        #[serde(default = "default_eps")]
        eps: f64,
    },
    Bmm {
        mode: Mode,
    },
    UpsampleNearest {
        factor: usize,
    },
    EltwiseAdd {},
    CoordEmbed {},
    BinarizeAct {
        target: BinaryTarget,
        #[serde(default)]
        threshold: f64,
    },
}

impl LayerKind {
    pub fn name(&self) -> &'static str {
        match self {
            LayerKind::Bconv2d { .. } => "bconv2d",
            LayerKind::Bdwconv2d { .. } => "bdwconv2d",
            LayerKind::Pconv2d { .. } => "pconv2d",
            LayerKind::DownsampleConv { .. } => "downsample_conv",
            LayerKind::BnFoldMarker {} => "bn_fold_marker",
            LayerKind::QuantAct { .. } => "quant_act",
            LayerKind::Bmm { .. } => "bmm",
            LayerKind::UpsampleNearest { .. } => "upsample_nearest",
            LayerKind::EltwiseAdd {} => "eltwise_add",
            LayerKind::CoordEmbed {} => "coord_embed",
            LayerKind::BinarizeAct { .. } => "binarize_act",
        }
    }

    /// Number of input ports.
    pub fn arity(&self) -> usize {
        match self {
            LayerKind::EltwiseAdd {} | LayerKind::Bmm { .. } => 2,
            _ => 1,
        }
    }

    /// True for layers that carry a binary weight set.
    pub fn has_weights(&self) -> bool {
        matches!(
            self,
            LayerKind::Bconv2d { .. }
                | LayerKind::Bdwconv2d { .. }
                | LayerKind::Pconv2d { .. }
                | LayerKind::DownsampleConv { .. }
        )
    }

    /// Operation mode of a MAC layer.
    pub fn mode(&self) -> Option<Mode> {
        match self {
            LayerKind::Bconv2d { mode, .. } | LayerKind::Bmm { mode } => Some(*mode),
            LayerKind::Bdwconv2d { .. }
            | LayerKind::Pconv2d { .. }
            | LayerKind::DownsampleConv { .. } => Some(Mode::Xnor),
            _ => None,
        }
    }

    /// Geometry of the convolution kinds.
    pub fn geometry(&self) -> Option<ConvGeometry> {
        match *self {
            LayerKind::Bconv2d {
                kernel, stride, pad, ..
            }
            | LayerKind::Bdwconv2d {
                kernel, stride, pad, ..
            }
            | LayerKind::DownsampleConv {
                kernel, stride, pad, ..
            } => Some(ConvGeometry::square(kernel, stride, pad)),
            LayerKind::Pconv2d { kernel, .. } => Some(ConvGeometry::same(kernel)),
            _ => None,
        }
    }
}

/// One node of the network.
#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct LayerSpec {
    pub id: String,
    #[serde(flatten)]
    pub kind: LayerKind,
}

/// Data flowing from a named producer (graph input or node) into a node port.
#[derive(Clone, Debug, PartialEq, Eq, Serialize, Deserialize)]
pub struct Edge {
    pub from: String,
    pub to: String,
    #[serde(default)]
    pub port: usize,
}

#[derive(Clone, Debug, PartialEq, Eq, Serialize, Deserialize)]
pub struct InputBinding {
    pub name: String,
    pub dims: Dims,
    #[serde(default = "default_bits")]
    pub bits: u8,
}

#[derive(Clone, Debug, PartialEq, Eq, Serialize, Deserialize)]
pub struct OutputBinding {
    pub name: String,
    pub from: String,
}

/// A network description: typed nodes wired by port-addressed edges.
#[derive(Clone, Debug, Default, PartialEq, Serialize, Deserialize)]
pub struct NetworkGraph {
    #[serde(default)]
    pub inputs: Vec<InputBinding>,
    #[serde(default)]
    pub nodes: Vec<LayerSpec>,
    #[serde(default)]
    pub edges: Vec<Edge>,
    #[serde(default)]
    pub outputs: Vec<OutputBinding>,
}

impl NetworkGraph {
    pub fn from_json(text: &str) -> crate::Result<Self> {
        Ok(serde_json::from_str(text)?)
    }

    pub fn to_json(&self) -> String {
        serde_json::to_string_pretty(self).expect("graph serializes")
    }

    pub fn node(&self, id: &str) -> Option<&LayerSpec> {
        self.nodes.iter().find(|n| n.id == id)
    }

    pub fn input(&mut self, name: &str, dims: Dims, bits: u8) -> &mut Self {
        self.inputs.push(InputBinding {
            name: name.into(),
            dims,
            bits,
        });
        self
    }

    /// Appends a node fed by `sources` on ports 0, 1, ...
    pub fn layer(&mut self, id: &str, kind: LayerKind, sources: &[&str]) -> &mut Self {
        self.nodes.push(LayerSpec {
            id: id.into(),
            kind,
        });
        for (port, from) in sources.iter().enumerate() {
            self.edges.push(Edge {
                from: (*from).into(),
                to: id.into(),
                port,
            });
        }
        self
    }

    pub fn output(&mut self, name: &str, from: &str) -> &mut Self {
        self.outputs.push(OutputBinding {
            name: name.into(),
            from: from.into(),
        });
        self
    }
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn json_round_trip_with_defaults() {
        let text = r#"{
            "inputs": [{"name": "x", "dims": {"channels": 1, "height": 4, "width": 4}}],
            "nodes": [
                {"id": "c", "kind": "bconv2d", "params": {"in_channels": 1, "out_channels": 2, "kernel": 3, "pad": 1}},
                {"id": "q", "kind": "quant_act", "params": {"bn": true}},
                {"id": "b", "kind": "binarize_act", "params": {"target": "plus_minus_one"}},
                {"id": "m", "kind": "bn_fold_marker", "params": {}}
            ],
            "edges": [{"from": "x", "to": "c"}, {"from": "c", "to": "q"}],
            "outputs": [{"name": "y", "from": "q"}]
        }"#;
        let g = NetworkGraph::from_json(text).unwrap();
        assert_eq!(g.inputs[0].bits, 8);
        assert_eq!(
            g.nodes[0].kind,
            LayerKind::Bconv2d {
                in_channels: 1,
                out_channels: 2,
                kernel: 3,
                stride: 1,
                pad: 1,
                mode: Mode::Xnor
            }
        );
        assert!(matches!(g.nodes[1].kind, LayerKind::QuantAct { bits: 8, bn: true, .. }));
        assert_eq!(g.edges[1].port, 0);
        assert_eq!(NetworkGraph::from_json(&g.to_json()).unwrap(), g);
    }

    #[test]
    fn unknown_kind_is_rejected() {
        let text = r#"{"nodes": [{"id": "c", "kind": "fft", "params": {}}]}"#;
        assert!(NetworkGraph::from_json(text).is_err());
    }
}
