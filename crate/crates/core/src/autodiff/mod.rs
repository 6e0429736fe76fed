//! Dense tensors, a dynamic reverse-mode computation graph and Adam.
//!
//! Graphs are built per example: every op appends a node whose parents are
//! earlier nodes, so creation order is a topological order and cycles cannot
//! be expressed. Parameters live in a [`ParamStore`] outside the graph;
//! [`Graph::backward`] adds their gradients into a [`Gradients`] buffer.

mod adam;
mod checkpoint;
pub mod gradcheck;
mod graph;
mod params;
mod tensor;

pub use adam::Adam;
pub use checkpoint::{Checkpoint, CheckpointEntry, CHECKPOINT_FORMAT, CHECKPOINT_VERSION};
pub use graph::{CustomOp, Graph, NodeId};
pub use params::{Gradients, ParamId, ParamStore};
pub use tensor::Tensor;
