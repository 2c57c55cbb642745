use std::collections::BTreeSet;
use std::fmt::Write;

use super::dominators::DominatorTree;
use super::graph::{BlockId, CfgError, ControlFlowGraph};

#[derive(Clone, Copy, Debug, PartialEq, Eq, Hash, PartialOrd, Ord)]
pub struct LoopId(pub usize);

#[derive(Clone, Debug, PartialEq, Eq)]
pub struct LoopNode {
    pub header: BlockId,
    /// Blocks whose terminator branches back to the header.
    pub latches: BTreeSet<BlockId>,
    pub body: BTreeSet<BlockId>,
    pub parent: Option<LoopId>,
    pub children: Vec<LoopId>,
    /// 1 for outermost loops; 0 until the tree is built.
    pub depth: usize,
}

/// Rejects CFGs with a retreating edge whose target does not dominate its
/// source. One DFS suffices: a graph is reducible iff every retreating edge
/// of any DFS is a back edge.
pub fn check_reducible(cfg: &ControlFlowGraph, dom: &DominatorTree) -> Result<(), CfgError> {
    if cfg.is_empty() {
        return Ok(());
    }
    let mut on_stack = vec![false; cfg.len()];
    let mut visited = vec![false; cfg.len()];
    let mut stack = vec![(cfg.entry(), 0usize)];
    visited[0] = true;
    on_stack[0] = true;
    while let Some((b, next)) = stack.last_mut() {
        let b = *b;
        if let Some(&s) = cfg.successors(b).get(*next) {
            *next += 1;
            if on_stack[s.0] {
                if !dom.dominates(s, b) {
                    return Err(CfgError::Irreducible {
                        from: b,
                        to: s,
                        from_label: cfg.label(b).to_string(),
                        to_label: cfg.label(s).to_string(),
                    });
                }
            } else if !visited[s.0] {
                visited[s.0] = true;
                on_stack[s.0] = true;
                stack.push((s, 0));
            }
        } else {
            on_stack[b.0] = false;
            stack.pop();
        }
    }
    Ok(())
}

/// One loop per header, back edges to the same header merged. Loops are
/// ordered by header block id. Fails on irreducible control flow.
pub fn find_natural_loops(cfg: &ControlFlowGraph, dom: &DominatorTree) -> Result<Vec<LoopNode>, CfgError> {
    check_reducible(cfg, dom)?;
    let mut loops = Vec::new();
    for h in cfg.blocks() {
        if !dom.is_reachable(h) {
            continue;
        }
        let latches: BTreeSet<BlockId> =
            cfg.predecessors(h).iter().copied().filter(|&p| dom.is_reachable(p) && dom.dominates(h, p)).collect();
        if latches.is_empty() {
            continue;
        }
        let mut body = BTreeSet::from([h]);
        let mut work: Vec<BlockId> = latches.iter().copied().collect();
        while let Some(b) = work.pop() {
            if body.insert(b) {
                work.extend(cfg.predecessors(b).iter().copied().filter(|p| dom.is_reachable(*p)));
            }
        }
        loops.push(LoopNode { header: h, latches, body, parent: None, children: Vec::new(), depth: 0 });
    }
    Ok(loops)
}

#[derive(Clone, Debug, PartialEq, Eq)]
pub struct LoopTree {
    loops: Vec<LoopNode>,
    roots: Vec<LoopId>,
    block_count: usize,
}

/// Links loops into a forest: the parent of S is the smallest loop whose
/// body strictly contains S's body.
pub fn build_loop_tree(
    mut loops: Vec<LoopNode>,
    block_count: usize,
    cfg: &ControlFlowGraph,
) -> Result<LoopTree, CfgError> {
    loops.sort_by_key(|l| l.header);
    let n = loops.len();
    for i in 0..n {
        for j in (i + 1)..n {
            let (a, b) = (&loops[i].body, &loops[j].body);
            let overlap = a.intersection(b).next().is_some();
            if overlap && !a.is_subset(b) && !b.is_subset(a) {
                return Err(CfgError::PartialOverlap {
                    a: cfg.label(loops[i].header).to_string(),
                    b: cfg.label(loops[j].header).to_string(),
                });
            }
        }
    }
    for i in 0..n {
        let parent = (0..n)
            .filter(|&j| j != i && loops[j].body.len() > loops[i].body.len() && loops[i].body.is_subset(&loops[j].body))
            .min_by_key(|&j| (loops[j].body.len(), loops[j].header));
        loops[i].parent = parent.map(LoopId);
        loops[i].children.clear();
    }
    let mut roots = Vec::new();
    for i in 0..n {
        match loops[i].parent {
            Some(p) => loops[p.0].children.push(LoopId(i)),
            None => roots.push(LoopId(i)),
        }
    }
    for i in 0..n {
        let mut depth = 1;
        let mut cur = loops[i].parent;
        while let Some(p) = cur {
            depth += 1;
            cur = loops[p.0].parent;
        }
        loops[i].depth = depth;
    }
    Ok(LoopTree { loops, roots, block_count })
}

/// Dominators, natural loops and the loop tree in one go.
pub fn analyze(cfg: &ControlFlowGraph) -> Result<(DominatorTree, LoopTree), CfgError> {
    let dom = super::compute_dominators(cfg);
    let loops = find_natural_loops(cfg, &dom)?;
    let tree = build_loop_tree(loops, cfg.len(), cfg)?;
    Ok((dom, tree))
}

impl LoopTree {
    pub fn len(&self) -> usize {
        self.loops.len()
    }

    pub fn is_empty(&self) -> bool {
        self.loops.is_empty()
    }

    pub fn loops(&self) -> &[LoopNode] {
        &self.loops
    }

    pub fn get(&self, id: LoopId) -> &LoopNode {
        &self.loops[id.0]
    }

    pub fn roots(&self) -> &[LoopId] {
        &self.roots
    }

    pub fn ids(&self) -> impl Iterator<Item = LoopId> {
        (0..self.loops.len()).map(LoopId)
    }

    /// Deepest loop whose body contains `block`, by depth-first search with
    /// backtracking from the roots: a subtree is entered only if its root
    /// contains the block, and the search backs out of subtrees that do not,
    /// so an ancestor is never returned when a descendant also qualifies.
    pub fn deepest_loop_containing(&self, block: BlockId) -> Result<Option<LoopId>, CfgError> {
        if block.0 >= self.block_count {
            return Err(CfgError::UnknownBlock(block));
        }
        let mut best: Option<LoopId> = None;
        let mut stack: Vec<LoopId> = self.roots.iter().rev().copied().collect();
        while let Some(id) = stack.pop() {
            let node = &self.loops[id.0];
            if !node.body.contains(&block) {
                continue;
            }
            if best.is_none_or(|b| self.loops[b.0].depth < node.depth) {
                best = Some(id);
            }
            stack.extend(node.children.iter().rev().copied());
        }
        Ok(best)
    }

    /// Indented forest listing: one line per loop with header, depth and
    /// body size.
    pub fn dump(&self, cfg: &ControlFlowGraph) -> String {
        let mut out = String::new();
        let mut stack: Vec<LoopId> = self.roots.iter().rev().copied().collect();
        while let Some(id) = stack.pop() {
            let l = &self.loops[id.0];
            let _ = writeln!(
                out,
                "{}loop header=%{} depth={} blocks={}",
                "  ".repeat(l.depth - 1),
                cfg.label(l.header),
                l.depth,
                l.body.len()
            );
            stack.extend(l.children.iter().rev().copied());
        }
        out
    }
}
