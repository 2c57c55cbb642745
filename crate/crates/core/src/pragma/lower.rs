use std::collections::BTreeMap;
use std::fmt::{self, Write as _};

use thiserror::Error;

use crate::cfg::{analyze, CfgError, ControlFlowGraph, LoopId};
use crate::ir::mangle::plain_name;
use crate::ir::{
    CallInst, FnAttr, IRFunction, IRModule, InstId, InstKind, Instruction, MdContent, MdId, MdOperand, MetadataNode,
    Operand, OperandBundle, TypeExpr, Value,
};

use super::descriptor::{decode_placeholder, DecodeError, PragmaDescriptor, PragmaKind, PragmaScope, DEFAULT_PREFIX};
use super::intrinsic_map::{IntrinsicMap, MarkerOperand, TemplateError};

#[derive(Clone, Debug, Error, PartialEq, Eq)]
pub enum PragmaError {
    #[error(transparent)]
    Decode(#[from] DecodeError),
    #[error("@{function}: {pragma} is not inside any loop")]
    NotInLoop { function: String, pragma: PragmaDescriptor },
    #[error("@{function}: array_partition variable '{variable}' is neither a parameter nor an alloca")]
    UnresolvedVariable { function: String, variable: String },
    #[error("@{function}: {template}")]
    Template { function: String, template: TemplateError },
    #[error("@{function}: {first} and {second} both target {target}")]
    Duplicate { function: String, target: String, first: Box<PragmaDescriptor>, second: Box<PragmaDescriptor> },
    #[error("@{function}: placeholder call {name} has a used result")]
    UsedPlaceholder { function: String, name: String },
    #[error("@{function}: {source}")]
    Cfg { function: String, source: CfgError },
    #[error("{0} pragma(s) skipped in functions with irreducible control flow")]
    Skipped(usize),
}

#[derive(Clone, Debug)]
pub struct PragmaOptions {
    pub prefix: String,
    /// Skipped pragmas are reported instead of failing the pass.
    pub allow_skipped: bool,
}

impl Default for PragmaOptions {
    fn default() -> Self {
        PragmaOptions { prefix: DEFAULT_PREFIX.to_string(), allow_skipped: false }
    }
}

#[derive(Clone, Debug, PartialEq, Eq)]
pub enum Anchor {
    Loop {
        header: String,
        depth: usize,
        latches: Vec<String>,
    },
    Function,
    Entry {
        variable: String,
    },
    /// Not lowered: the function's control flow is irreducible.
    Skipped {
        reason: String,
    },
}

#[derive(Clone, Debug, PartialEq, Eq)]
pub struct LoweredPragma {
    pub function: String,
    pub descriptor: PragmaDescriptor,
    pub anchor: Anchor,
}

#[derive(Clone, Debug, Default, PartialEq, Eq)]
pub struct PragmaReport {
    pub pragmas: Vec<LoweredPragma>,
    pub placeholders_removed: usize,
    pub declarations_removed: usize,
}

impl PragmaReport {
    pub fn lowered(&self) -> usize {
        self.pragmas.iter().filter(|p| !matches!(p.anchor, Anchor::Skipped { .. })).count()
    }

    pub fn skipped(&self) -> usize {
        self.pragmas.len() - self.lowered()
    }

    /// `@f: pipeline ii=4 -> loop %header (depth 2)`, one line per pragma.
    pub fn dump(&self) -> String {
        let mut out = String::new();
        for p in &self.pragmas {
            let _ = write!(out, "@{}: {} -> ", p.function, p.descriptor);
            let _ = match &p.anchor {
                Anchor::Loop { header, depth, .. } => writeln!(out, "loop %{header} (depth {depth})"),
                Anchor::Function => writeln!(out, "function"),
                Anchor::Entry { variable } => writeln!(out, "entry (%{variable})"),
                Anchor::Skipped { reason } => writeln!(out, "skipped ({reason})"),
            };
        }
        out
    }
}

impl fmt::Display for PragmaReport {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        f.write_str(&self.dump())
    }
}

/// Decodes `name` either as is or with the front end's mangling removed.
fn decode(name: &str, prefix: &str) -> Result<Option<PragmaDescriptor>, DecodeError> {
    match decode_placeholder(name, prefix)? {
        Some(p) => Ok(Some(p)),
        None => decode_placeholder(plain_name(name), prefix),
    }
}

pub fn is_placeholder_symbol(name: &str, prefix: &str) -> bool {
    use super::descriptor::has_placeholder_prefix;
    has_placeholder_prefix(name, prefix) || has_placeholder_prefix(plain_name(name), prefix)
}

struct Found {
    block: usize,
    descriptor: PragmaDescriptor,
}

fn find_placeholders(f: &IRFunction, prefix: &str) -> Result<Vec<Found>, PragmaError> {
    let mut out = Vec::new();
    for (bi, b) in f.blocks.iter().enumerate() {
        for inst in &b.instructions {
            let Some(call) = inst.as_call() else { continue };
            if let Some(descriptor) = decode(&call.callee, prefix)? {
                if let Some(r) = &inst.result {
                    let used = f.instructions().any(|i| i.kind.values().iter().any(|v| v.as_local() == Some(r)));
                    if used {
                        return Err(PragmaError::UsedPlaceholder {
                            function: f.name.clone(),
                            name: call.callee.clone(),
                        });
                    }
                }
                out.push(Found { block: bi, descriptor });
            }
        }
    }
    Ok(out)
}

/// Resolves an array_partition variable to (operand, defining block and
/// instruction index); parameters have no defining instruction.
fn resolve_variable(f: &IRFunction, variable: &str) -> Option<(Operand, Option<(usize, usize)>)> {
    let flang_name = format!("_QF{}E{variable}", plain_name(&f.name));
    let matches = |n: &str| n == variable || n == flang_name;
    for p in &f.params {
        if p.name.as_deref().is_some_and(matches) {
            return Some((Operand::new(p.ty.clone(), Value::local(p.name.clone().unwrap())), None));
        }
    }
    for (bi, b) in f.blocks.iter().enumerate() {
        for (ii, inst) in b.instructions.iter().enumerate() {
            if let (Some(r), InstKind::Alloca { ty, .. }) = (&inst.result, &inst.kind) {
                if matches(r) {
                    let ptr_ty = if f.params.iter().any(|p| p.ty.contains_opaque())
                        || f.instructions().any(|i| i.kind.types().iter().any(|t| t.contains_opaque()))
                    {
                        TypeExpr::opaque_ptr()
                    } else {
                        TypeExpr::ptr_to(ty.clone())
                    };
                    return Some((Operand::new(ptr_ty, Value::local(r.clone())), Some((bi, ii))));
                }
            }
        }
    }
    None
}

/// Latch labels, hint nodes and descriptors for one loop header.
type LoopPlan = (Vec<String>, Vec<MetadataNode>, Vec<PragmaDescriptor>);

#[derive(Default)]
struct FunctionPlan {
    loops: BTreeMap<String, LoopPlan>,
    attributes: Vec<crate::ir::Attribute>,
    metadata: BTreeMap<String, Vec<MetadataNode>>,
    markers: Vec<(Instruction, Option<(usize, usize)>)>,
    function_pragmas: Vec<PragmaDescriptor>,
}

fn duplicate_of<'a>(seen: &'a [PragmaDescriptor], p: &PragmaDescriptor) -> Option<&'a PragmaDescriptor> {
    seen.iter().find(|q| match p.kind {
        // Several interface pragmas are fine as long as they name different ports.
        PragmaKind::Interface => q.kind == p.kind && q.arg("port") == p.arg("port"),
        PragmaKind::ArrayPartition => {
            q.kind == p.kind && q.arg("variable") == p.arg("variable") && q.arg("dim") == p.arg("dim")
        }
        _ => q.kind == p.kind,
    })
}

/// Replaces every pragma placeholder call with the construct its template
/// prescribes, then removes the placeholders and their declarations.
pub fn lower_pragmas(m: &mut IRModule, im: &IntrinsicMap, opts: &PragmaOptions) -> Result<PragmaReport, PragmaError> {
    let mut report = PragmaReport::default();
    m.reserve_inst_ids();
    let mut next_id = m.next_inst_id;
    let mut plans: Vec<(usize, FunctionPlan)> = Vec::new();

    for (fi, f) in m.functions.iter().enumerate() {
        if f.is_declaration() {
            continue;
        }
        let found = find_placeholders(f, &opts.prefix)?;
        if found.is_empty() {
            continue;
        }
        let function = f.name.clone();
        let template_err = |template| PragmaError::Template { function: function.clone(), template };
        let needs_loops = found.iter().any(|p| p.descriptor.scope() == PragmaScope::Loop);
        let analysis = if needs_loops {
            let cfg = ControlFlowGraph::from_function(f)
                .map_err(|source| PragmaError::Cfg { function: function.clone(), source })?;
            match analyze(&cfg) {
                Ok((_, tree)) => Some((cfg, tree)),
                Err(e @ CfgError::Irreducible { .. }) => {
                    for p in found {
                        report.pragmas.push(LoweredPragma {
                            function: function.clone(),
                            descriptor: p.descriptor,
                            anchor: Anchor::Skipped { reason: format!("irreducible: {e}") },
                        });
                    }
                    continue;
                }
                Err(source) => return Err(PragmaError::Cfg { function, source }),
            }
        } else {
            None
        };

        let mut plan = FunctionPlan::default();
        for p in found {
            let d = p.descriptor;
            let anchor = match d.kind {
                PragmaKind::Pipeline | PragmaKind::Unroll => {
                    let (cfg, tree) = analysis.as_ref().expect("loop analysis ran");
                    let block = crate::cfg::BlockId(p.block);
                    let id: LoopId = tree
                        .deepest_loop_containing(block)
                        .map_err(|source| PragmaError::Cfg { function: function.clone(), source })?
                        .ok_or_else(|| PragmaError::NotInLoop { function: function.clone(), pragma: d.clone() })?;
                    let node = tree.get(id);
                    let header = cfg.label(node.header).to_string();
                    let latches: Vec<String> = node.latches.iter().map(|l| cfg.label(*l).to_string()).collect();
                    let hint = im.loop_hint(&d).map_err(template_err)?;
                    let entry = plan.loops.entry(header.clone()).or_insert_with(|| (latches.clone(), vec![], vec![]));
                    if let Some(first) = duplicate_of(&entry.2, &d) {
                        return Err(PragmaError::Duplicate {
                            function,
                            target: format!("loop %{header}"),
                            first: Box::new(first.clone()),
                            second: Box::new(d),
                        });
                    }
                    entry.1.push(hint);
                    entry.2.push(d.clone());
                    Anchor::Loop { header, depth: node.depth, latches }
                }
                _ => {
                    if let Some(first) = duplicate_of(&plan.function_pragmas, &d) {
                        return Err(PragmaError::Duplicate {
                            function,
                            target: "the function".into(),
                            first: Box::new(first.clone()),
                            second: Box::new(d),
                        });
                    }
                    plan.function_pragmas.push(d.clone());
                    if d.kind == PragmaKind::ArrayPartition {
                        let (callee, bundle, slots) = im.marker_call(&d).map_err(template_err)?;
                        let mut inputs = Vec::new();
                        let mut def = None;
                        let mut variable = String::new();
                        for slot in slots {
                            match slot {
                                MarkerOperand::Variable(name) => {
                                    let (op, at) =
                                        resolve_variable(f, &name).ok_or_else(|| PragmaError::UnresolvedVariable {
                                            function: function.clone(),
                                            variable: name.clone(),
                                        })?;
                                    variable = op.value.as_local().unwrap_or_default().to_string();
                                    def = def.max(at);
                                    inputs.push(op);
                                }
                                MarkerOperand::Int(ty, v) => inputs.push(Operand::new(ty, Value::int(v))),
                            }
                        }
                        let mut call = CallInst::simple(TypeExpr::Void, callee, vec![]);
                        call.bundles.push(OperandBundle { tag: bundle, inputs });
                        let inst = Instruction::new(InstId(next_id), None, InstKind::Call(call));
                        next_id += 1;
                        plan.markers.push((inst, def));
                        Anchor::Entry { variable }
                    } else if d.kind == PragmaKind::Dataflow {
                        plan.attributes.push(im.function_attribute(&d).map_err(template_err)?);
                        Anchor::Function
                    } else {
                        let (kind, node) = im.function_metadata(&d).map_err(template_err)?;
                        plan.metadata.entry(kind).or_default().push(node);
                        Anchor::Function
                    }
                }
            };
            report.pragmas.push(LoweredPragma { function: function.clone(), descriptor: d, anchor });
        }
        plans.push((fi, plan));
    }

    for (fi, plan) in plans {
        apply_plan(m, fi, plan);
    }
    m.next_inst_id = next_id;

    for f in &mut m.functions {
        for b in &mut f.blocks {
            let before = b.instructions.len();
            b.instructions.retain(|i| !i.as_call().is_some_and(|c| is_placeholder_symbol(&c.callee, &opts.prefix)));
            report.placeholders_removed += before - b.instructions.len();
        }
    }
    let before = m.functions.len();
    m.functions.retain(|f| !is_placeholder_symbol(&f.name, &opts.prefix));
    report.declarations_removed = before - m.functions.len();

    let skipped = report.skipped();
    if skipped > 0 && !opts.allow_skipped {
        return Err(PragmaError::Skipped(skipped));
    }
    Ok(report)
}

fn apply_plan(m: &mut IRModule, fi: usize, plan: FunctionPlan) {
    let mut marker_callees = Vec::new();
    for (latches, hints, _) in plan.loops.into_values() {
        let f = &m.functions[fi];
        // Operands of any loop id the latches already carry, minus the self reference.
        let mut carried: Vec<MdOperand> = Vec::new();
        for latch in &latches {
            let term = f.block(latch).and_then(|b| b.terminator());
            if let Some(old) = term.and_then(|t| t.metadata("llvm.loop")) {
                if let Some(MetadataNode { content: MdContent::Tuple(ops), .. }) = m.metadata.get(&old) {
                    for op in ops {
                        if *op != MdOperand::Ref(old) && !carried.contains(op) {
                            carried.push(op.clone());
                        }
                    }
                }
            }
        }
        let id: MdId = m.add_metadata(MetadataNode::tuple(vec![]));
        let mut ops = vec![MdOperand::Ref(id)];
        ops.extend(carried);
        for hint in hints {
            ops.push(MdOperand::Ref(m.add_metadata(hint)));
        }
        m.metadata.insert(id, MetadataNode { distinct: true, content: MdContent::Tuple(ops) });
        let f = &mut m.functions[fi];
        for latch in &latches {
            if let Some(term) = f.blocks.iter_mut().find(|b| &b.label == latch).and_then(|b| b.terminator_mut()) {
                term.set_metadata("llvm.loop", id);
            }
        }
    }

    for (kind, nodes) in plan.metadata {
        let refs = nodes.into_iter().map(|n| MdOperand::Ref(m.add_metadata(n))).collect();
        let id = m.add_metadata(MetadataNode::tuple(refs));
        let f = &mut m.functions[fi];
        match f.metadata.iter_mut().find(|(k, _)| *k == kind) {
            Some(slot) => slot.1 = id,
            None => f.metadata.push((kind, id)),
        }
    }

    let f = &mut m.functions[fi];
    for a in plan.attributes {
        let attr = FnAttr::Attr(a);
        if !f.fn_attrs.contains(&attr) {
            f.fn_attrs.push(attr);
        }
    }

    // Markers go after the entry block's allocas, or right after the
    // variable's definition when that comes later. Insert back to front so
    // earlier positions stay valid.
    let entry_slot =
        f.blocks[0].instructions.iter().position(|i| !matches!(i.kind, InstKind::Alloca { .. })).unwrap_or(0);
    let mut placed: Vec<((usize, usize), usize, Instruction)> = plan
        .markers
        .into_iter()
        .enumerate()
        .map(|(order, (inst, def))| {
            let at = match def {
                Some((0, ii)) => (0, entry_slot.max(ii + 1)),
                Some((bi, ii)) => (bi, ii + 1),
                None => (0, entry_slot),
            };
            (at, order, inst)
        })
        .collect();
    placed.sort_by_key(|p| std::cmp::Reverse((p.0, p.1)));
    for ((bi, ii), _, inst) in placed {
        if let Some(c) = inst.as_call() {
            marker_callees.push(c.callee.clone());
        }
        f.blocks[bi].instructions.insert(ii, inst);
    }
    for callee in marker_callees {
        m.ensure_declaration(IRFunction::declaration(callee, TypeExpr::Void, vec![]));
    }
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::ir::{parse_module, print_module, Dialect};

    const NEST: &str = r#"
define void @k(ptr %a) {
entry:
  br label %l1
l1:
  br label %l2
l2:
  br label %l3
l3:
  call void @_fhls_pipeline__ii_4()
  br i1 true, label %l3, label %l2.latch
l2.latch:
  br i1 true, label %l2, label %l1.latch
l1.latch:
  br i1 true, label %l1, label %exit
exit:
  ret void
}
declare void @_fhls_pipeline__ii_4()
"#;

    #[test]
    fn anchors_to_the_innermost_loop_only() {
        let mut m = parse_module(NEST).unwrap();
        let r = lower_pragmas(&mut m, &IntrinsicMap::default(), &PragmaOptions::default()).unwrap();
        assert_eq!(r.dump(), "@k: pipeline ii=4 -> loop %l3 (depth 3)\n");
        assert_eq!((r.placeholders_removed, r.declarations_removed), (1, 1));
        let text = print_module(&m, Dialect::Modern).unwrap();
        assert_eq!(text.matches("!llvm.loop").count(), 1, "{text}");
        assert!(text.contains("br i1 true, label %l3, label %l2.latch, !llvm.loop !0"), "{text}");
        assert!(text.contains("!0 = distinct !{!0, !1}"), "{text}");
        assert!(text.contains("!1 = !{!\"llvm.loop.pipeline.enable\", i32 4, i1 false, i8 -1}"), "{text}");
        assert!(!text.contains("_fhls"));
    }

    #[test]
    fn no_placeholders_is_identity() {
        let src = NEST
            .replace("  call void @_fhls_pipeline__ii_4()\n", "")
            .replace("declare void @_fhls_pipeline__ii_4()\n", "");
        let mut m = parse_module(&src).unwrap();
        let before = m.clone();
        let r = lower_pragmas(&mut m, &IntrinsicMap::default(), &PragmaOptions::default()).unwrap();
        assert_eq!(r, PragmaReport::default());
        assert_eq!(m, before);
    }

    #[test]
    fn function_scope_pragmas() {
        let mut m = parse_module(
            r#"
define void @_QPk(ptr %x, ptr %y) {
entry:
  %buf = alloca [16 x i32]
  %n = alloca i32
  call void @_QP_fhls_dataflow()
  call void @_QP_fhls_interface__port_x()
  call void @_QP_fhls_interface__mode_s_axilite__port_y__bundle_control()
  call void @_QP_fhls_array_partition__variable_buf__type_cyclic__factor_4()
  store i32 0, ptr %n
  ret void
}
declare void @_QP_fhls_dataflow()
declare void @_QP_fhls_interface__port_x()
declare void @_QP_fhls_interface__mode_s_axilite__port_y__bundle_control()
declare void @_QP_fhls_array_partition__variable_buf__type_cyclic__factor_4()
"#,
        )
        .unwrap();
        let r = lower_pragmas(&mut m, &IntrinsicMap::default(), &PragmaOptions::default()).unwrap();
        assert_eq!(r.lowered(), 4);
        assert_eq!(r.declarations_removed, 4);
        let text = print_module(&m, Dialect::Modern).unwrap();
        assert!(
            text.contains("define void @_QPk(ptr %x, ptr %y) \"fpga.dataflow.func\"=\"0\" !fpga.interface !2 {"),
            "{text}"
        );
        assert!(text.contains("%n = alloca i32\n  call void @llvm.sideeffect() [ \"xlx_array_partition\"(ptr %buf, i32 2, i32 4, i32 1) ]\n  store"), "{text}");
        assert!(text.contains("!0 = !{!\"m_axi\", !\"x\", !\"gmem0\"}"), "{text}");
        assert!(text.contains("!1 = !{!\"s_axilite\", !\"y\", !\"control\"}"), "{text}");
        assert!(text.contains("!2 = !{!0, !1}"), "{text}");
        assert!(text.contains("declare void @llvm.sideeffect()"), "{text}");
    }

    #[test]
    fn errors() {
        let im = IntrinsicMap::default();
        let opts = PragmaOptions::default();
        let mut m = parse_module("define void @k() {\n  call void @_fhls_unroll()\n  ret void\n}\n").unwrap();
        assert!(matches!(lower_pragmas(&mut m, &im, &opts), Err(PragmaError::NotInLoop { .. })));
        let mut m =
            parse_module("define void @k() {\n  call void @_fhls_array_partition__variable_q()\n  ret void\n}\n")
                .unwrap();
        assert!(matches!(lower_pragmas(&mut m, &im, &opts), Err(PragmaError::UnresolvedVariable { .. })));
        let dup = NEST.replace(
            "call void @_fhls_pipeline__ii_4()",
            "call void @_fhls_pipeline__ii_4()\n  call void @_fhls_pipeline__ii_2()",
        );
        let mut m = parse_module(&dup).unwrap();
        assert!(matches!(lower_pragmas(&mut m, &im, &opts), Err(PragmaError::Duplicate { .. })));
        let mut m = parse_module("define void @k() {\n  call void @_fhls_pipeline__ii()\n  ret void\n}\n").unwrap();
        assert!(matches!(lower_pragmas(&mut m, &im, &opts), Err(PragmaError::Decode(_))));
    }

    #[test]
    fn irreducible_functions_are_skipped() {
        let src = r#"
define void @k(i1 %c) {
entry:
  br i1 %c, label %a, label %b
a:
  call void @_fhls_pipeline()
  br label %b
b:
  br label %a
}
declare void @_fhls_pipeline()
"#;
        let im = IntrinsicMap::default();
        let mut m = parse_module(src).unwrap();
        assert_eq!(lower_pragmas(&mut m, &im, &PragmaOptions::default()), Err(PragmaError::Skipped(1)));
        let mut m = parse_module(src).unwrap();
        let opts = PragmaOptions { allow_skipped: true, ..PragmaOptions::default() };
        let r = lower_pragmas(&mut m, &im, &opts).unwrap();
        assert_eq!(r.skipped(), 1);
        assert!(r.dump().starts_with("@k: pipeline -> skipped (irreducible"));
        let text = print_module(&m, Dialect::Modern).unwrap();
        assert!(!text.contains("_fhls") && !text.contains("llvm.loop"), "{text}");
    }

    #[test]
    fn merges_existing_loop_ids_and_multiple_latches() {
        let mut m = parse_module(
            r#"
define void @k(i1 %c) {
entry:
  br label %h
h:
  call void @_fhls_unroll__factor_2()
  br i1 %c, label %l1, label %l2
l1:
  br i1 %c, label %h, label %x, !llvm.loop !0
l2:
  br i1 %c, label %h, label %x
x:
  ret void
}
declare void @_fhls_unroll__factor_2()
!0 = distinct !{!0, !1}
!1 = !{!"llvm.loop.mustprogress"}
"#,
        )
        .unwrap();
        lower_pragmas(&mut m, &IntrinsicMap::default(), &PragmaOptions::default()).unwrap();
        let text = print_module(&m, Dialect::Modern).unwrap();
        assert!(text.contains("label %x, !llvm.loop !2\n\nl2:"), "{text}");
        assert!(text.contains("label %x, !llvm.loop !2\n\nx:"), "{text}");
        assert!(text.contains("!2 = distinct !{!2, !1, !3}"), "{text}");
        assert!(text.contains("!3 = !{!\"llvm.loop.unroll.count\", i32 2}"), "{text}");
    }
}
