//! Layer library of the engine: binary convolutions, binary matrix
//! multiplication, the adder array and the quantization/activation unit.
//!
//! Every MAC-bearing layer routes through [`crate::bitcore`]; none of them
//! multiplies an activation by a weight.

pub mod bmm;
pub mod conv;
pub mod elementwise;
pub mod quant;

pub use bmm::{binarize_act, bmm, BinaryActivation, BinaryTarget};
pub use conv::{bconv2d, bdwconv2d, partial_channels, pconv2d, ConvGeometry};
pub use elementwise::{adder_array, coord_embed, upsample_nearest, upsample_nearest_acc, Addend};
pub use quant::{bn_requant, fold_bn, quant_act, BatchNorm, RequantParams};
