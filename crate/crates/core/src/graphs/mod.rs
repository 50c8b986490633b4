//! Call graph and sparse value-flow graph.

mod callgraph;
mod vfg;

pub use callgraph::{build_call_graph, get_node, CallEdge, CallGraph};
pub use vfg::{build_vfg, EdgeKind, NodeId, NodeKind, ValueFlowGraph, VfgNode};
