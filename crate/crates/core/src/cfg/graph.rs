use std::collections::HashMap;

use thiserror::Error;

use crate::ir::IRFunction;

/// Dense block index; the n-th block of the function.
#[derive(Clone, Copy, Debug, PartialEq, Eq, Hash, PartialOrd, Ord)]
pub struct BlockId(pub usize);

#[derive(Clone, Debug, Error, PartialEq, Eq)]
pub enum CfgError {
    #[error("@{function}: branch to unknown block '{label}'")]
    UnknownLabel { function: String, label: String },
    #[error("@{function} is a declaration and has no control flow")]
    Declaration { function: String },
    #[error(
        "irreducible control flow: edge {from_label} -> {to_label} re-enters a cycle whose entry does not dominate it"
    )]
    Irreducible { from: BlockId, to: BlockId, from_label: String, to_label: String },
    #[error("loop bodies of headers {a} and {b} overlap without nesting")]
    PartialOverlap { a: String, b: String },
    #[error("unknown block id {0:?}")]
    UnknownBlock(BlockId),
}

#[derive(Clone, Debug, PartialEq, Eq)]
pub struct ControlFlowGraph {
    labels: Vec<String>,
    succs: Vec<Vec<BlockId>>,
    preds: Vec<Vec<BlockId>>,
    reachable: Vec<bool>,
    rpo: Vec<BlockId>,
}

impl ControlFlowGraph {
    /// Graph over blocks `0..succs.len()` with entry block 0; labels are
    /// `b0`, `b1`, ... Out-of-range successors are rejected.
    pub fn from_successors(succs: Vec<Vec<usize>>) -> Result<ControlFlowGraph, CfgError> {
        let n = succs.len();
        let labels = (0..n).map(|i| format!("b{i}")).collect();
        let mut edges = Vec::with_capacity(n);
        for list in succs {
            let mut out = Vec::with_capacity(list.len());
            for s in list {
                if s >= n {
                    return Err(CfgError::UnknownBlock(BlockId(s)));
                }
                out.push(BlockId(s));
            }
            edges.push(out);
        }
        Ok(ControlFlowGraph::build(labels, edges))
    }

    pub fn from_function(f: &IRFunction) -> Result<ControlFlowGraph, CfgError> {
        if f.is_declaration() {
            return Err(CfgError::Declaration { function: f.name.clone() });
        }
        let index: HashMap<&str, usize> = f.blocks.iter().enumerate().map(|(i, b)| (b.label.as_str(), i)).collect();
        let mut edges = Vec::with_capacity(f.blocks.len());
        for b in &f.blocks {
            let mut out = Vec::new();
            if let Some(t) = b.terminator() {
                for s in t.kind.successors() {
                    match index.get(s) {
                        Some(&i) => out.push(BlockId(i)),
                        None => return Err(CfgError::UnknownLabel { function: f.name.clone(), label: s.to_string() }),
                    }
                }
            }
            edges.push(out);
        }
        let labels = f.blocks.iter().map(|b| b.label.clone()).collect();
        Ok(ControlFlowGraph::build(labels, edges))
    }

    fn build(labels: Vec<String>, succs: Vec<Vec<BlockId>>) -> ControlFlowGraph {
        let n = succs.len();
        let mut preds = vec![Vec::new(); n];
        for (i, list) in succs.iter().enumerate() {
            for s in list {
                if !preds[s.0].contains(&BlockId(i)) {
                    preds[s.0].push(BlockId(i));
                }
            }
        }
        // Iterative DFS postorder from the entry.
        let mut reachable = vec![false; n];
        let mut post = Vec::with_capacity(n);
        if n > 0 {
            let mut stack = vec![(BlockId(0), 0usize)];
            reachable[0] = true;
            while let Some((b, next)) = stack.last_mut() {
                let b = *b;
                if let Some(&s) = succs[b.0].get(*next) {
                    *next += 1;
                    if !reachable[s.0] {
                        reachable[s.0] = true;
                        stack.push((s, 0));
                    }
                } else {
                    post.push(b);
                    stack.pop();
                }
            }
        }
        post.reverse();
        ControlFlowGraph { labels, succs, preds, reachable, rpo: post }
    }

    pub fn len(&self) -> usize {
        self.succs.len()
    }

    pub fn is_empty(&self) -> bool {
        self.succs.is_empty()
    }

    pub fn entry(&self) -> BlockId {
        BlockId(0)
    }

    pub fn blocks(&self) -> impl Iterator<Item = BlockId> {
        (0..self.len()).map(BlockId)
    }

    pub fn successors(&self, b: BlockId) -> &[BlockId] {
        &self.succs[b.0]
    }

    /// Predecessors, including unreachable ones.
    pub fn predecessors(&self, b: BlockId) -> &[BlockId] {
        &self.preds[b.0]
    }

    pub fn label(&self, b: BlockId) -> &str {
        &self.labels[b.0]
    }

    pub fn block_id(&self, label: &str) -> Option<BlockId> {
        self.labels.iter().position(|l| l == label).map(BlockId)
    }

    pub fn is_reachable(&self, b: BlockId) -> bool {
        self.reachable[b.0]
    }

    /// Blocks not reachable from the entry; excluded from every analysis.
    pub fn unreachable_blocks(&self) -> Vec<BlockId> {
        self.blocks().filter(|&b| !self.reachable[b.0]).collect()
    }

    /// Reachable blocks in reverse postorder of a DFS from the entry.
    pub fn reverse_postorder(&self) -> &[BlockId] {
        &self.rpo
    }
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::ir::parse_module;

    #[test]
    fn builds_from_function() {
        let m = parse_module(
            "define void @f(i1 %c) {\nentry:\n  br i1 %c, label %a, label %b\na:\n  br label %b\nb:\n  ret void\ndead:\n  br label %b\n}\n",
        )
        .unwrap();
        let cfg = ControlFlowGraph::from_function(&m.functions[0]).unwrap();
        assert_eq!(cfg.len(), 4);
        assert_eq!(cfg.successors(BlockId(0)), &[BlockId(1), BlockId(2)]);
        assert_eq!(cfg.predecessors(BlockId(2)), &[BlockId(0), BlockId(1), BlockId(3)]);
        assert_eq!(cfg.unreachable_blocks(), vec![BlockId(3)]);
        assert_eq!(cfg.reverse_postorder()[0], BlockId(0));
        assert_eq!(cfg.block_id("b"), Some(BlockId(2)));
    }

    #[test]
    fn rejects_out_of_range_successor() {
        assert_eq!(ControlFlowGraph::from_successors(vec![vec![3]]), Err(CfgError::UnknownBlock(BlockId(3))));
    }
}
