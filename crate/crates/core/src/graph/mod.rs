//! Network descriptions, validation, MAC counting and execution.
//!
//! A [`NetworkGraph`] is plain data (it round-trips through JSON). [`validate`]
//! checks it and infers every value's type; a [`Model`] binds parameters to a
//! validated graph; [`execute`] runs it in a deterministic topological order.

mod exec;
mod macs;
mod model;
mod spec;
mod validate;
pub mod zoo;

pub use exec::{execute, ExecOptions, Execution, ExecutionTrace, NodeTrace, Value};
pub use macs::{count_macs, LayerMacs, MacReport};
pub use model::{LayerWeights, Model, NodeParams};
pub use spec::{Edge, InputBinding, LayerKind, LayerSpec, NetworkGraph, OutputBinding};
pub use validate::{validate, ValidatedGraph, ValueType};

pub(crate) use validate::{filters_of, lanes_of};
