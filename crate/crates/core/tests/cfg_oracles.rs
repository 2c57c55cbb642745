//! Loop analysis checked against brute-force oracles on random graphs.

use std::collections::{BTreeMap, BTreeSet};

use fhls_core::cfg::{analyze, compute_dominators, BlockId, CfgError, ControlFlowGraph};
use proptest::prelude::*;

/// Dominator sets by enumerating every simple path from the entry: `d`
/// dominates `b` iff `d` lies on all of them.
fn path_dominators(succs: &[Vec<usize>]) -> Vec<Option<BTreeSet<usize>>> {
    let n = succs.len();
    let mut doms: Vec<Option<BTreeSet<usize>>> = vec![None; n];
    let mut path = vec![0usize];
    let mut on_path = vec![false; n];
    on_path[0] = true;
    fn walk(
        succs: &[Vec<usize>],
        path: &mut Vec<usize>,
        on_path: &mut Vec<bool>,
        doms: &mut Vec<Option<BTreeSet<usize>>>,
    ) {
        let here = *path.last().unwrap();
        let nodes: BTreeSet<usize> = path.iter().copied().collect();
        doms[here] = Some(match doms[here].take() {
            None => nodes,
            Some(prev) => prev.intersection(&nodes).copied().collect(),
        });
        for &s in &succs[here] {
            if !on_path[s] {
                on_path[s] = true;
                path.push(s);
                walk(succs, path, on_path, doms);
                path.pop();
                on_path[s] = false;
            }
        }
    }
    walk(succs, &mut path, &mut on_path, &mut doms);
    doms
}

/// All simple cycles, each as a node set (naive DFS from its least node).
fn simple_cycles(succs: &[Vec<usize>], reachable: &[bool]) -> Vec<BTreeSet<usize>> {
    let n = succs.len();
    let mut out = Vec::new();
    for start in 0..n {
        if !reachable[start] {
            continue;
        }
        let mut path = vec![start];
        let mut on = vec![false; n];
        on[start] = true;
        fn go(
            succs: &[Vec<usize>],
            start: usize,
            path: &mut Vec<usize>,
            on: &mut Vec<bool>,
            out: &mut Vec<BTreeSet<usize>>,
        ) {
            let here = *path.last().unwrap();
            for &s in &succs[here] {
                if s == start {
                    out.push(path.iter().copied().collect());
                } else if s > start && !on[s] {
                    on[s] = true;
                    path.push(s);
                    go(succs, start, path, on, out);
                    path.pop();
                    on[s] = false;
                }
            }
        }
        go(succs, start, &mut path, &mut on, &mut out);
    }
    out.sort();
    out.dedup();
    out
}

/// Loops from cycles: a cycle's header is the member dominating all other
/// members. A header's body starts as the union of its cycles and absorbs
/// every cycle of header-dominated blocks that touches it.
fn cycle_loops(succs: &[Vec<usize>], doms: &[Option<BTreeSet<usize>>]) -> BTreeMap<usize, BTreeSet<usize>> {
    let reachable: Vec<bool> = doms.iter().map(Option::is_some).collect();
    let dominated = |d: usize, b: usize| doms[b].as_ref().is_some_and(|s| s.contains(&d));
    let cycles = simple_cycles(succs, &reachable);
    let mut loops: BTreeMap<usize, BTreeSet<usize>> = BTreeMap::new();
    for c in &cycles {
        let header = c.iter().copied().find(|&h| c.iter().all(|&b| dominated(h, b)));
        let header = header.expect("reducible graph: every cycle has a dominating member");
        loops.entry(header).or_default().extend(c.iter().copied());
    }
    for (&h, body) in loops.iter_mut() {
        loop {
            let before = body.len();
            for c in &cycles {
                if c.iter().all(|&b| dominated(h, b)) && c.iter().any(|b| body.contains(b)) {
                    body.extend(c.iter().copied());
                }
            }
            if body.len() == before {
                break;
            }
        }
    }
    loops
}

/// Random reducible graphs: forward edges plus back edges to dominators.
/// Adding an edge to a dominator of its source never changes dominance.
fn reducible_graph(max_nodes: usize) -> impl Strategy<Value = Vec<Vec<usize>>> {
    (2..=max_nodes)
        .prop_flat_map(|n| {
            (
                Just(n),
                proptest::collection::vec((0..n, 0..n), 0..(2 * n)),
                proptest::collection::vec((0..n, 0..n), 0..n),
            )
        })
        .prop_map(|(n, fwd, back)| {
            let mut succs = vec![Vec::new(); n];
            // Keep most nodes reachable with a spine, skipping some.
            for (i, s) in succs.iter_mut().enumerate().take(n - 1) {
                if i % 4 != 3 {
                    s.push(i + 1);
                }
            }
            for (a, b) in fwd {
                let (a, b) = (a.min(b), a.max(b));
                if a != b && !succs[a].contains(&b) {
                    succs[a].push(b);
                }
            }
            for (a, b) in back {
                let (src, dst) = (a.max(b), a.min(b));
                let doms = path_dominators(&succs);
                if doms[src].as_ref().is_some_and(|d| d.contains(&dst)) && !succs[src].contains(&dst) {
                    succs[src].push(dst);
                }
            }
            succs
        })
}

fn arbitrary_graph(max_nodes: usize) -> impl Strategy<Value = Vec<Vec<usize>>> {
    (2..=max_nodes).prop_flat_map(|n| proptest::collection::vec(proptest::collection::vec(0..n, 0..3), n))
}

proptest! {
    #![proptest_config(ProptestConfig::with_cases(300))]

    #[test]
    fn dominators_match_path_enumeration(succs in arbitrary_graph(12)) {
        let cfg = ControlFlowGraph::from_successors(succs.clone()).unwrap();
        let dt = compute_dominators(&cfg);
        let oracle = path_dominators(&succs);
        for b in 0..succs.len() {
            match &oracle[b] {
                None => prop_assert!(!dt.is_reachable(BlockId(b))),
                Some(set) => {
                    for d in 0..succs.len() {
                        prop_assert_eq!(dt.dominates(BlockId(d), BlockId(b)), set.contains(&d), "d={} b={}", d, b);
                    }
                    // idom is the closest strict dominator.
                    if b != 0 {
                        let idom = dt.idom(BlockId(b)).unwrap().0;
                        prop_assert!(set.contains(&idom) && idom != b);
                        for &d in set.iter().filter(|&&d| d != b) {
                            prop_assert!(oracle[idom].as_ref().unwrap().contains(&d));
                        }
                    }
                }
            }
        }
    }

    #[test]
    fn natural_loops_match_cycle_enumeration(succs in reducible_graph(10)) {
        let cfg = ControlFlowGraph::from_successors(succs.clone()).unwrap();
        let (_, tree) = analyze(&cfg).unwrap();
        let oracle = cycle_loops(&succs, &path_dominators(&succs));
        let got: BTreeMap<usize, BTreeSet<usize>> = tree
            .loops()
            .iter()
            .map(|l| (l.header.0, l.body.iter().map(|b| b.0).collect()))
            .collect();
        prop_assert_eq!(got, oracle);
    }

    #[test]
    fn loop_tree_matches_minimal_superset(succs in reducible_graph(10)) {
        let cfg = ControlFlowGraph::from_successors(succs.clone()).unwrap();
        let (dom, tree) = analyze(&cfg).unwrap();
        let loops = tree.loops();
        for (i, l) in loops.iter().enumerate() {
            // Header dominates the body.
            for &b in &l.body {
                prop_assert!(dom.dominates(l.header, b));
            }
            let expected_parent = (0..loops.len())
                .filter(|&j| j != i && loops[j].body.len() > l.body.len() && l.body.is_subset(&loops[j].body))
                .min_by_key(|&j| loops[j].body.len());
            prop_assert_eq!(l.parent.map(|p| p.0), expected_parent);
            let containing = loops.iter().filter(|o| l.body.is_subset(&o.body)).count();
            prop_assert_eq!(l.depth, containing);
            // Containment law and disjoint children.
            for c in &l.children {
                prop_assert!(tree.get(*c).body.is_subset(&l.body));
            }
            for (x, a) in l.children.iter().enumerate() {
                for b in &l.children[x + 1..] {
                    prop_assert!(tree.get(*a).body.is_disjoint(&tree.get(*b).body));
                }
            }
        }
    }

    #[test]
    fn deepest_loop_matches_exhaustive_scan(succs in reducible_graph(10)) {
        let cfg = ControlFlowGraph::from_successors(succs.clone()).unwrap();
        let (_, tree) = analyze(&cfg).unwrap();
        for b in cfg.blocks() {
            let got = tree.deepest_loop_containing(b).unwrap();
            let best = tree.loops().iter().enumerate().filter(|(_, l)| l.body.contains(&b)).max_by_key(|(_, l)| l.depth);
            prop_assert_eq!(got.map(|id| id.0), best.map(|(i, _)| i));
            if let Some(id) = got {
                let node = tree.get(id);
                prop_assert!(node.body.contains(&b));
                prop_assert!(node.children.iter().all(|c| !tree.get(*c).body.contains(&b)));
            }
        }
    }

    #[test]
    fn analysis_is_deterministic(succs in reducible_graph(10)) {
        let cfg = ControlFlowGraph::from_successors(succs.clone()).unwrap();
        let a = analyze(&cfg).unwrap().1;
        let b = analyze(&ControlFlowGraph::from_successors(succs).unwrap()).unwrap().1;
        prop_assert_eq!(a.dump(&cfg), b.dump(&cfg));
        prop_assert_eq!(a, b);
    }

    #[test]
    fn any_graph_is_either_analyzed_or_rejected_as_irreducible(succs in arbitrary_graph(9)) {
        let cfg = ControlFlowGraph::from_successors(succs.clone()).unwrap();
        let doms = path_dominators(&succs);
        // Oracle: reducible iff removing edges to dominators leaves a DAG.
        let n = succs.len();
        let mut indeg = vec![0usize; n];
        let mut fwd = vec![Vec::new(); n];
        for (a, list) in succs.iter().enumerate() {
            if doms[a].is_none() { continue; }
            for &b in list {
                if !doms[a].as_ref().unwrap().contains(&b) && !fwd[a].contains(&b) {
                    fwd[a].push(b);
                    indeg[b] += 1;
                }
            }
        }
        let mut ready: Vec<usize> = (0..n).filter(|&i| doms[i].is_some() && indeg[i] == 0).collect();
        let mut seen = 0;
        while let Some(x) = ready.pop() {
            seen += 1;
            for &y in &fwd[x] {
                indeg[y] -= 1;
                if indeg[y] == 0 { ready.push(y); }
            }
        }
        let reducible = seen == doms.iter().filter(|d| d.is_some()).count();
        match analyze(&cfg) {
            Ok(_) => prop_assert!(reducible),
            Err(CfgError::Irreducible { .. }) => prop_assert!(!reducible),
            Err(other) => prop_assert!(false, "unexpected {}", other),
        }
    }
}
