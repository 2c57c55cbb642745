//! Immediate dominators by the iterative data-flow formulation over reverse
//! postorder (Cooper, Harvey and Kennedy).

use super::graph::{BlockId, ControlFlowGraph};

#[derive(Clone, Debug, PartialEq, Eq)]
pub struct DominatorTree {
    /// `idom[entry] == entry`; `None` for unreachable blocks.
    idom: Vec<Option<BlockId>>,
}

pub fn compute_dominators(cfg: &ControlFlowGraph) -> DominatorTree {
    let n = cfg.len();
    let mut rpo_number = vec![usize::MAX; n];
    for (i, b) in cfg.reverse_postorder().iter().enumerate() {
        rpo_number[b.0] = i;
    }
    let mut idom: Vec<Option<BlockId>> = vec![None; n];
    if n == 0 {
        return DominatorTree { idom };
    }
    let entry = cfg.entry();
    idom[entry.0] = Some(entry);

    let intersect = |idom: &[Option<BlockId>], mut a: BlockId, mut b: BlockId| -> BlockId {
        while a != b {
            while rpo_number[a.0] > rpo_number[b.0] {
                a = idom[a.0].expect("processed block has an idom");
            }
            while rpo_number[b.0] > rpo_number[a.0] {
                b = idom[b.0].expect("processed block has an idom");
            }
        }
        a
    };

    let mut changed = true;
    while changed {
        changed = false;
        for &b in cfg.reverse_postorder().iter().skip(1) {
            let mut new_idom: Option<BlockId> = None;
            for &p in cfg.predecessors(b) {
                if idom[p.0].is_none() {
                    continue;
                }
                new_idom = Some(match new_idom {
                    None => p,
                    Some(cur) => intersect(&idom, p, cur),
                });
            }
            if new_idom.is_some() && idom[b.0] != new_idom {
                idom[b.0] = new_idom;
                changed = true;
            }
        }
    }
    DominatorTree { idom }
}

impl DominatorTree {
    /// Immediate dominator; the entry is its own root. `None` if unreachable.
    pub fn idom(&self, b: BlockId) -> Option<BlockId> {
        self.idom[b.0]
    }

    pub fn is_reachable(&self, b: BlockId) -> bool {
        self.idom[b.0].is_some()
    }

    /// Reflexive dominance. False whenever either block is unreachable.
    pub fn dominates(&self, a: BlockId, b: BlockId) -> bool {
        if !self.is_reachable(a) || !self.is_reachable(b) {
            return false;
        }
        let mut cur = b;
        loop {
            if cur == a {
                return true;
            }
            let up = self.idom[cur.0].expect("reachable");
            if up == cur {
                return false;
            }
            cur = up;
        }
    }

    pub fn strictly_dominates(&self, a: BlockId, b: BlockId) -> bool {
        a != b && self.dominates(a, b)
    }
}
