//! Control-flow graphs, dominators, natural loops and the loop-nesting tree.

mod dominators;
mod graph;
mod loops;

pub use dominators::{compute_dominators, DominatorTree};
pub use graph::{BlockId, CfgError, ControlFlowGraph};
pub use loops::{analyze, build_loop_tree, check_reducible, find_natural_loops, LoopId, LoopNode, LoopTree};
