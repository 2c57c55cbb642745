use std::collections::{BTreeMap, BTreeSet};

use crate::ir::{IRModule, MdContent, MdField, MdId, MdOperand, MetadataNode};

use super::AttributeWhitelist;

#[derive(Clone, Debug, Default, PartialEq, Eq)]
pub struct MetadataReport {
    /// Attachment kinds removed, with how many attachments each.
    pub kinds_removed: BTreeMap<String, usize>,
    pub named_removed: Vec<String>,
    /// Nodes no longer reachable from any kept attachment.
    pub nodes_collected: usize,
}

fn operand_refs_mut(ops: &mut [MdOperand], f: &mut impl FnMut(&mut MdId)) {
    for op in ops {
        if let MdOperand::Ref(id) = op {
            f(id);
        }
    }
}

fn field_refs_mut(fields: &mut [(Option<String>, MdField)], f: &mut impl FnMut(&mut MdId)) {
    for (_, field) in fields {
        match field {
            MdField::Ref(id) => f(id),
            MdField::Node(inner) => field_refs_mut(&mut inner.fields, f),
            MdField::Tuple(ops) => operand_refs_mut(ops, f),
            _ => {}
        }
    }
}

fn node_refs_mut(node: &mut MetadataNode, f: &mut impl FnMut(&mut MdId)) {
    match &mut node.content {
        MdContent::Tuple(ops) => operand_refs_mut(ops, f),
        MdContent::Specialized(s) => field_refs_mut(&mut s.fields, f),
    }
}

/// Every attachment site and named-metadata entry, mutably.
fn root_refs_mut(m: &mut IRModule, mut f: impl FnMut(&mut MdId)) {
    for g in &mut m.globals {
        g.metadata.iter_mut().for_each(|(_, id)| f(id));
    }
    for func in &mut m.functions {
        func.metadata.iter_mut().for_each(|(_, id)| f(id));
        for inst in func.instructions_mut() {
            inst.metadata.iter_mut().for_each(|(_, id)| f(id));
        }
    }
    for named in &mut m.named_metadata {
        named.nodes.iter_mut().for_each(&mut f);
    }
}

/// Drops attachments and named metadata whose kind is not whitelisted,
/// removes references to debug-info nodes from the remaining tuples,
/// garbage-collects unreachable nodes and renumbers the survivors densely
/// in their original order.
pub fn strip_nonwhitelisted_metadata(m: &mut IRModule, wl: &AttributeWhitelist) -> MetadataReport {
    let mut report = MetadataReport::default();
    let keep = |list: &mut Vec<(String, MdId)>, report: &mut MetadataReport| {
        list.retain(|(kind, _)| {
            let ok = wl.allows_metadata(kind);
            if !ok {
                *report.kinds_removed.entry(kind.clone()).or_default() += 1;
            }
            ok
        })
    };
    for g in &mut m.globals {
        keep(&mut g.metadata, &mut report);
    }
    for f in &mut m.functions {
        keep(&mut f.metadata, &mut report);
        for inst in f.blocks.iter_mut().flat_map(|b| b.instructions.iter_mut()) {
            keep(&mut inst.metadata, &mut report);
        }
    }
    m.named_metadata.retain(|n| {
        let ok = wl.allows_metadata(&n.name);
        if !ok {
            report.named_removed.push(n.name.clone());
        }
        ok
    });

    let debug_nodes: BTreeSet<MdId> =
        m.metadata.iter().filter(|(_, n)| matches!(n.content, MdContent::Specialized(_))).map(|(id, _)| *id).collect();
    for node in m.metadata.values_mut() {
        if let MdContent::Tuple(ops) = &mut node.content {
            ops.retain(|op| !matches!(op, MdOperand::Ref(id) if debug_nodes.contains(id)));
        }
    }
    for named in &mut m.named_metadata {
        named.nodes.retain(|id| !debug_nodes.contains(id));
    }

    let mut live = BTreeSet::new();
    let mut work = Vec::new();
    root_refs_mut(m, |id| work.push(*id));
    while let Some(id) = work.pop() {
        if live.insert(id) {
            if let Some(node) = m.metadata.get(&id) {
                work.extend(node.references());
            }
        }
    }
    let before = m.metadata.len();
    m.metadata.retain(|id, _| live.contains(id));
    report.nodes_collected = before - m.metadata.len();

    let renumber: BTreeMap<MdId, MdId> = m.metadata.keys().enumerate().map(|(i, id)| (*id, i as MdId)).collect();
    if renumber.iter().any(|(a, b)| a != b) {
        let mut remap = |id: &mut MdId| {
            if let Some(new) = renumber.get(id) {
                *id = *new;
            }
        };
        let old = std::mem::take(&mut m.metadata);
        for (id, mut node) in old {
            node_refs_mut(&mut node, &mut remap);
            m.metadata.insert(renumber[&id], node);
        }
        root_refs_mut(m, remap);
    }
    report
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::ir::{parse_module, validate_v7, Rule};

    const TEXT: &str = r#"
define void @f(ptr %p) !dbg !3 {
entry:
  br label %h, !dbg !5
h:
  store i32 0, ptr %p, !tbaa !6
  br i1 true, label %h, label %x, !llvm.loop !8
x:
  ret void
}
!llvm.dbg.cu = !{!0}
!llvm.module.flags = !{!2}
!0 = distinct !DICompileUnit(language: DW_LANG_Fortran95, file: !1, producer: "flang")
!1 = !DIFile(filename: "k.f90", directory: "/tmp")
!2 = !{i32 2, !"Debug Info Version", i32 3}
!3 = distinct !DISubprogram(name: "f", scope: !1, unit: !0)
!4 = !{}
!5 = !DILocation(line: 3, scope: !3)
!6 = !{!7, !7, i64 0}
!7 = !{!"any"}
!8 = distinct !{!8, !5, !9}
!9 = !{!"llvm.loop.pipeline.enable", i32 1, i1 false, i8 -1}
"#;

    #[test]
    fn keeps_loop_metadata_and_collects_the_rest() {
        let mut m = parse_module(TEXT).unwrap();
        let wl = AttributeWhitelist::default();
        let r = strip_nonwhitelisted_metadata(&mut m, &wl);
        assert_eq!(r.kinds_removed.get("dbg"), Some(&2));
        assert_eq!(r.kinds_removed.get("tbaa"), Some(&1));
        assert_eq!(r.named_removed, vec!["llvm.dbg.cu".to_string(), "llvm.module.flags".to_string()]);
        // Only the loop id and its pipeline hint survive, renumbered 0 and 1.
        assert_eq!(m.metadata.len(), 2);
        let loop_id = m.functions[0].blocks[1].instructions[1].metadata("llvm.loop").unwrap();
        assert_eq!(loop_id, 0);
        assert_eq!(m.metadata[&0].content, MdContent::Tuple(vec![MdOperand::Ref(0), MdOperand::Ref(1)]));
        assert!(validate_v7(&m, &wl).iter().all(|v| v.rule == Rule::OpaquePointer));
        let snapshot = m.clone();
        let again = strip_nonwhitelisted_metadata(&mut m, &wl);
        assert_eq!(again, MetadataReport::default());
        assert_eq!(m, snapshot);
    }
}
