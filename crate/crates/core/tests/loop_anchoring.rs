//! Deepest-loop queries and loop-tree laws on structured CFGs with nests up
//! to depth five, checked against brute-force loop discovery.

use fhls_core::cfg::{analyze, BlockId, ControlFlowGraph};
use fhls_core::testkit::{oracle_deepest, oracle_loops, structured_cfg};
use rand::rngs::StdRng;
use rand::{Rng, SeedableRng};

#[test]
fn deepest_loop_matches_exhaustive_scan() {
    let mut rng = StdRng::seed_from_u64(0xc0ffee);
    for round in 0..300 {
        let depth = rng.gen_range(1..=5);
        let succs = structured_cfg(&mut rng, depth);
        let cfg = ControlFlowGraph::from_successors(succs.clone()).unwrap();
        let (_, tree) = analyze(&cfg).unwrap_or_else(|e| panic!("round {round}: {e}"));
        let loops = oracle_loops(&succs);
        assert_eq!(tree.len(), loops.len(), "round {round}");
        assert_eq!(tree.loops().iter().map(|l| l.depth).max().unwrap_or(0), depth, "round {round}");
        for b in 0..succs.len() {
            let got = tree.deepest_loop_containing(BlockId(b)).unwrap().map(|id| tree.get(id).header.0);
            assert_eq!(got, oracle_deepest(&loops, b), "round {round} block {b}");
        }
        for l in tree.loops() {
            if let Some(p) = l.parent {
                assert!(l.body.is_subset(&tree.get(p).body), "round {round}");
                assert_eq!(l.depth, tree.get(p).depth + 1);
            } else {
                assert_eq!(l.depth, 1);
            }
        }
    }
}
