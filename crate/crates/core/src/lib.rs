//! Bit-exact emulator for a binary-weight neural-network inference engine.
//!
//! Activations are multi-bit unsigned integers and weights are single bits,
//! either ±1 (XNOR mode) or {0,1} (AND mode). The crate provides the packed
//! MAC kernels, a layer library and graph runtime built on them, an
//! independent brute-force oracle, an abstract hardware cost model and the
//! on-disk formats used by the `bnne` command-line tool.

pub mod bitcore;
pub mod convert;
pub mod costmodel;
pub mod error;
pub mod format;
pub mod graph;
pub mod layers;
pub mod oracle;
pub mod tensor;

pub use bitcore::{BinaryWeightSet, BitPlaneBlock, Mode, PackedBits, Provenance};
pub use error::{Error, Result};
pub use graph::{LayerKind, Model, NetworkGraph, Value};
pub use layers::{BinaryTarget, RequantParams};
pub use tensor::{AccTensor, Dims, QuantTensor};
