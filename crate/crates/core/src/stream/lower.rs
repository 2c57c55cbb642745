use std::collections::{BTreeSet, HashSet};

use thiserror::Error;

use crate::downgrade::mangle_type;
use crate::ir::mangle::plain_name;
use crate::ir::{
    BinaryOp, CallInst, CastOp, Constant, IRFunction, IRModule, InstId, InstKind, Instruction, Operand, TypeExpr, Value,
};
use crate::pragma::StreamPrimitives;

use super::registry::{stream_type, RegistryError, StreamType, StreamTypeRegistry};

#[derive(Clone, Copy, Debug, PartialEq, Eq, Hash, PartialOrd, Ord)]
pub enum StreamOp {
    SetDepth,
    Write,
    Read,
    Empty,
    Full,
}

impl StreamOp {
    pub const ALL: [StreamOp; 5] =
        [StreamOp::SetDepth, StreamOp::Write, StreamOp::Read, StreamOp::Empty, StreamOp::Full];

    /// Name prefix of the generated Fortran subroutine; the type tag follows.
    pub fn subroutine_prefix(self) -> &'static str {
        match self {
            StreamOp::SetDepth => "set_depth_",
            StreamOp::Write => "hls_lowered_write_",
            StreamOp::Read => "hls_lowered_read_",
            StreamOp::Empty => "hls_empty_",
            StreamOp::Full => "hls_full_",
        }
    }
}

/// Classifies a (possibly mangled) symbol as a typed stream subroutine.
pub fn classify_stream_symbol(name: &str) -> Option<(StreamOp, &'static StreamType)> {
    let plain = plain_name(name);
    StreamOp::ALL
        .into_iter()
        .find_map(|op| plain.strip_prefix(op.subroutine_prefix()).and_then(stream_type).map(|t| (op, t)))
}

#[derive(Clone, Debug, Error, PartialEq, Eq)]
pub enum StreamError {
    #[error("@{function}: {source}")]
    Registry { function: String, source: RegistryError },
    #[error("@{function}: stream argument of @{callee} is not a field access on a stream variable")]
    NotFieldAccess { function: String, callee: String },
    #[error("@{function}: cannot tell which {tag} stream @{callee} refers to: the variable is unnamed and {candidates} streams of that type are registered")]
    AmbiguousStream { function: String, callee: String, tag: String, candidates: usize },
    #[error("@{function}: stream depth passed to @{callee} is not a constant")]
    NonConstantDepth { function: String, callee: String },
    #[error("@{function}: @{callee} is a {called} operation but stream '{variable}' is registered as {registered}")]
    TypeMismatch { function: String, callee: String, variable: String, registered: String, called: String },
    #[error("@{function}: unexpected signature for @{callee}: {message}")]
    Signature { function: String, callee: String, message: String },
}

#[derive(Clone, Debug, Default, PartialEq, Eq)]
pub struct StreamReport {
    /// (subroutine, variable) pairs whose calls were lowered.
    pub streams: BTreeSet<(String, String)>,
    pub set_depth: usize,
    pub push: usize,
    pub pop: usize,
    pub empty: usize,
    pub full: usize,
    /// Stream subroutine bodies and declarations deleted.
    pub functions_removed: Vec<String>,
}

impl StreamReport {
    pub fn primitives(&self) -> usize {
        self.set_depth + self.push + self.pop + self.empty + self.full
    }
}

fn int_constant(c: &Constant) -> Option<i128> {
    match c {
        Constant::Int(v) => Some(*v),
        Constant::ZeroInit => Some(0),
        _ => None,
    }
}

struct Lowerer<'a> {
    function: String,
    subroutine: String,
    reg: &'a StreamTypeRegistry,
    prims: &'a StreamPrimitives,
    globals: &'a IRModule,
    names: HashSet<String>,
    next_id: u32,
}

impl Lowerer<'_> {
    fn fresh(&mut self, base: &str, suffix: &str) -> String {
        let base = if base.starts_with(|c: char| c.is_ascii_digit()) { format!("v{base}") } else { base.to_string() };
        let mut name = format!("{base}.{suffix}");
        let mut k = 1;
        while self.names.contains(&name) {
            name = format!("{base}.{suffix}{k}");
            k += 1;
        }
        self.names.insert(name.clone());
        name
    }

    fn inst(&mut self, result: Option<String>, kind: InstKind) -> Instruction {
        let i = Instruction::new(InstId(self.next_id), result, kind);
        self.next_id += 1;
        i
    }

    fn signature(&self, callee: &str, message: impl Into<String>) -> StreamError {
        StreamError::Signature { function: self.function.clone(), callee: callee.to_string(), message: message.into() }
    }

    /// The stream variable a field address belongs to.
    fn stream_variable(&self, f: &IRFunction, callee: &str, field: &Value, tag: &str) -> Result<String, StreamError> {
        let not_field = || StreamError::NotFieldAccess { function: self.function.clone(), callee: callee.to_string() };
        let name = field.as_local().ok_or_else(not_field)?;
        let base = f
            .instructions()
            .find(|i| i.result.as_deref() == Some(name))
            .and_then(|i| match &i.kind {
                InstKind::GetElementPtr { base, .. } => base.value.as_local(),
                _ => None,
            })
            .ok_or_else(not_field)?;
        let is_param = f.params.iter().any(|p| p.name.as_deref() == Some(base));
        let is_alloca =
            f.instructions().any(|i| i.result.as_deref() == Some(base) && matches!(i.kind, InstKind::Alloca { .. }));
        if !is_param && !is_alloca {
            return Err(not_field());
        }
        let unique_prefix = format!("_QF{}E", self.subroutine);
        let var = base.strip_prefix(&unique_prefix).unwrap_or(base);
        // Numbered values, and parameters renamed from numbers (`%arg0`).
        let numeric = |s: &str| !s.is_empty() && s.bytes().all(|b| b.is_ascii_digit());
        let unnamed = numeric(var) || var.strip_prefix("arg").is_some_and(numeric);
        if !unnamed {
            return Ok(var.to_ascii_lowercase());
        }
        // The front end drops local names; fall back to the only stream of
        // this type in the subroutine.
        let candidates: Vec<&String> = self
            .reg
            .streams_of(&self.subroutine)
            .map(|vars| vars.iter().filter(|(_, t)| *t == tag).map(|(v, _)| v).collect())
            .unwrap_or_default();
        match candidates.as_slice() {
            [only] => Ok((*only).clone()),
            [] => Err(StreamError::Registry {
                function: self.function.clone(),
                source: RegistryError::Unregistered {
                    subroutine: self.subroutine.clone(),
                    variable: format!("%{var}"),
                },
            }),
            many => Err(StreamError::AmbiguousStream {
                function: self.function.clone(),
                callee: callee.to_string(),
                tag: tag.to_string(),
                candidates: many.len(),
            }),
        }
    }

    fn depth(&self, f: &IRFunction, callee: &str, arg: &Value) -> Result<i128, StreamError> {
        let err = || StreamError::NonConstantDepth { function: self.function.clone(), callee: callee.to_string() };
        match arg {
            Value::Const(c) => int_constant(c).ok_or_else(err),
            Value::Global(g) => {
                let g = self.globals.global(g).filter(|g| g.constant).ok_or_else(err)?;
                g.init.as_ref().and_then(int_constant).ok_or_else(err)
            }
            Value::Local(name) => {
                let is_alloca = f
                    .instructions()
                    .any(|i| i.result.as_deref() == Some(name) && matches!(i.kind, InstKind::Alloca { .. }));
                if !is_alloca {
                    return Err(err());
                }
                let stores: Vec<&Value> = f
                    .instructions()
                    .filter_map(|i| match &i.kind {
                        InstKind::Store { value, ptr, .. } if ptr.value.as_local() == Some(name) => Some(&value.value),
                        _ => None,
                    })
                    .collect();
                match stores.as_slice() {
                    [Value::Const(c)] => int_constant(c).ok_or_else(err),
                    _ => Err(err()),
                }
            }
        }
    }

    /// Replacement instructions for one stream call, plus the primitive
    /// declarations it needs.
    fn lower_call(
        &mut self,
        f: &IRFunction,
        inst: &Instruction,
        call: &CallInst,
        op: StreamOp,
        ty: &StreamType,
        report: &mut StreamReport,
    ) -> Result<(Vec<Instruction>, Vec<IRFunction>), StreamError> {
        let callee = call.callee.as_str();
        let field_index = if op == StreamOp::Write { 1 } else { 0 };
        let expected_args = match op {
            StreamOp::SetDepth | StreamOp::Write => 2,
            _ => 1,
        };
        if call.args.len() != expected_args {
            return Err(
                self.signature(callee, format!("expected {expected_args} argument(s), found {}", call.args.len()))
            );
        }
        let field = &call.args[field_index];
        if !field.ty.is_pointer() {
            return Err(self.signature(callee, "stream argument is not a pointer"));
        }
        let var = self.stream_variable(f, callee, &field.value, &ty.tag)?;
        let registered = self
            .reg
            .lookup(&self.subroutine, &var)
            .map_err(|source| StreamError::Registry { function: self.function.clone(), source })?;
        if registered != ty.tag {
            return Err(StreamError::TypeMismatch {
                function: self.function.clone(),
                callee: callee.to_string(),
                variable: var,
                registered: registered.to_string(),
                called: ty.tag.clone(),
            });
        }
        report.streams.insert((self.subroutine.clone(), var));

        let field_op = Operand::new(field.ty.clone(), field.value.clone());
        let elem = ty.element.clone();
        let ptr_suffix = mangle_type(&field.ty);
        let mut out = Vec::new();
        let mut decls = Vec::new();
        let result = inst.result.clone();
        match op {
            StreamOp::SetDepth => {
                let d = self.depth(f, callee, &call.args[1].value)?;
                let name = self.prims.set_depth.clone();
                decls.push(IRFunction::declaration(&name, TypeExpr::Void, vec![field.ty.clone(), TypeExpr::i32()]));
                let c = CallInst::simple(TypeExpr::Void, name, vec![field_op, Operand::int(32, d)]);
                out.push(self.inst(None, InstKind::Call(c)));
                report.set_depth += 1;
            }
            StreamOp::Write => {
                let data = &call.args[0];
                let value = if data.ty == elem {
                    Operand::new(elem.clone(), data.value.clone())
                } else if data.ty.is_pointer() {
                    let base = data.value.as_local().unwrap_or("data").to_string();
                    let loaded = self.fresh(&base, "val");
                    let load = InstKind::Load {
                        volatile: false,
                        ty: elem.clone(),
                        ptr: Operand::new(data.ty.clone(), data.value.clone()),
                        align: None,
                    };
                    out.push(self.inst(Some(loaded.clone()), load));
                    Operand::local(elem.clone(), loaded)
                } else {
                    return Err(
                        self.signature(callee, format!("written value is not of the stream's element type {elem}"))
                    );
                };
                let name = format!("{}.{}.{ptr_suffix}", self.prims.write, mangle_type(&elem));
                decls.push(IRFunction::declaration(&name, TypeExpr::Void, vec![elem.clone(), field.ty.clone()]));
                let c = CallInst::simple(TypeExpr::Void, name, vec![value, field_op]);
                out.push(self.inst(None, InstKind::Call(c)));
                report.push += 1;
            }
            StreamOp::Read => {
                if call.ret_ty != elem {
                    return Err(self.signature(callee, format!("read must return the element type {elem} by value")));
                }
                let name = format!("{}.{}.{ptr_suffix}", self.prims.read, mangle_type(&elem));
                decls.push(IRFunction::declaration(&name, elem.clone(), vec![field.ty.clone()]));
                let c = CallInst::simple(elem, name, vec![field_op]);
                out.push(self.inst(result, InstKind::Call(c)));
                report.pop += 1;
            }
            StreamOp::Empty | StreamOp::Full => {
                let prim = if op == StreamOp::Empty { &self.prims.empty } else { &self.prims.full };
                let name = format!("{prim}.{ptr_suffix}");
                decls.push(IRFunction::declaration(&name, TypeExpr::i1(), vec![field.ty.clone()]));
                let c = CallInst::simple(TypeExpr::i1(), name, vec![field_op]);
                if op == StreamOp::Empty {
                    report.empty += 1;
                } else {
                    report.full += 1;
                }
                let Some(result) = result else {
                    out.push(self.inst(None, InstKind::Call(c)));
                    return Ok((out, decls));
                };
                let ret_width = match call.ret_ty {
                    TypeExpr::Int(w) => w,
                    _ => return Err(self.signature(callee, "empty/full must return an integer or logical")),
                };
                // The primitive answers the opposite question.
                let raw = self.fresh(&result, "not");
                out.push(self.inst(Some(raw.clone()), InstKind::Call(c)));
                let flipped = if ret_width == 1 { result.clone() } else { self.fresh(&result, "flip") };
                out.push(self.inst(
                    Some(flipped.clone()),
                    InstKind::Binary {
                        op: BinaryOp::Xor,
                        flags: vec![],
                        ty: TypeExpr::i1(),
                        lhs: Value::local(raw),
                        rhs: Value::Const(Constant::Bool(true)),
                    },
                ));
                if ret_width != 1 {
                    out.push(self.inst(
                        Some(result),
                        InstKind::Cast {
                            op: CastOp::ZExt,
                            value: Operand::local(TypeExpr::i1(), flipped),
                            to: call.ret_ty.clone(),
                        },
                    ));
                }
            }
        }
        Ok((out, decls))
    }
}

/// Replaces calls to the typed stream subroutines with the back end's fifo
/// primitives and deletes the stream subroutines themselves.
pub fn lower_streams(
    m: &mut IRModule,
    reg: &StreamTypeRegistry,
    prims: &StreamPrimitives,
) -> Result<StreamReport, StreamError> {
    let mut report = StreamReport::default();
    m.reserve_inst_ids();
    let mut next_id = m.next_inst_id;
    let mut rewritten: Vec<(usize, Vec<Vec<Instruction>>)> = Vec::new();
    let mut decls: Vec<IRFunction> = Vec::new();

    for (fi, f) in m.functions.iter().enumerate() {
        if f.is_declaration() || classify_stream_symbol(&f.name).is_some() {
            continue;
        }
        let has_stream_calls =
            f.instructions().any(|i| i.as_call().is_some_and(|c| classify_stream_symbol(&c.callee).is_some()));
        if !has_stream_calls {
            continue;
        }
        let mut names: HashSet<String> = f.params.iter().filter_map(|p| p.name.clone()).collect();
        for b in &f.blocks {
            names.insert(b.label.clone());
            names.extend(b.instructions.iter().filter_map(|i| i.result.clone()));
        }
        let mut lw = Lowerer {
            function: f.name.clone(),
            subroutine: plain_name(&f.name).to_ascii_lowercase(),
            reg,
            prims,
            globals: m,
            names,
            next_id,
        };
        let mut blocks = Vec::with_capacity(f.blocks.len());
        for b in &f.blocks {
            let mut out = Vec::with_capacity(b.instructions.len());
            for inst in &b.instructions {
                let classified = inst.as_call().and_then(|c| classify_stream_symbol(&c.callee).map(|k| (c, k)));
                match classified {
                    Some((call, (op, ty))) => {
                        let (insts, needed) = lw.lower_call(f, inst, call, op, ty, &mut report)?;
                        out.extend(insts);
                        decls.extend(needed);
                    }
                    None => out.push(inst.clone()),
                }
            }
            blocks.push(out);
        }
        next_id = lw.next_id;
        rewritten.push((fi, blocks));
    }

    for (fi, blocks) in rewritten {
        for (b, insts) in m.functions[fi].blocks.iter_mut().zip(blocks) {
            b.instructions = insts;
        }
    }
    m.next_inst_id = next_id;
    m.functions.retain(|f| {
        let stream = classify_stream_symbol(&f.name).is_some();
        if stream {
            report.functions_removed.push(f.name.clone());
        }
        !stream
    });
    for d in decls {
        m.ensure_declaration(d);
    }
    Ok(report)
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::ir::{parse_module, print_module, Dialect};
    use crate::pragma::IntrinsicMap;

    fn registry(rows: &[(&str, &str, &str)]) -> StreamTypeRegistry {
        let mut reg = StreamTypeRegistry::new();
        for (s, v, t) in rows {
            reg.instantiate(t).unwrap();
            reg.register(s, v, t).unwrap();
        }
        reg
    }

    const KERNEL: &str = r#"
%_QMhls_streamTHLSStream = type { i32, double }
@depth = internal constant i32 0

define void @_QPf(ptr %a, ptr %b) {
entry:
  %s = alloca %_QMhls_streamTHLSStream
  %f = getelementptr %_QMhls_streamTHLSStream, ptr %s, i32 0, i32 0
  call void @_QMhls_streamPset_depth_integer(ptr %f, ptr @depth)
  %v = load i32, ptr %a
  call void @_QMhls_streamPhls_lowered_write_integer(i32 %v, ptr %f)
  call void @_QMhls_streamPhls_lowered_write_integer(ptr %a, ptr %f)
  %r = call i32 @_QMhls_streamPhls_lowered_read_integer(ptr %f)
  store i32 %r, ptr %b
  %e = call i32 @_QMhls_streamPhls_empty_integer(ptr %f)
  %full = call i1 @_QMhls_streamPhls_full_integer(ptr %f)
  ret void
}

define void @_QMhls_streamPset_depth_integer(ptr %0, ptr %1) {
  ret void
}
declare void @_QMhls_streamPhls_lowered_write_integer(i32, ptr)
declare i32 @_QMhls_streamPhls_lowered_read_integer(ptr)
declare i32 @_QMhls_streamPhls_empty_integer(ptr)
declare i1 @_QMhls_streamPhls_full_integer(ptr)
"#;

    #[test]
    fn lowers_every_operation() {
        let mut m = parse_module(KERNEL).unwrap();
        let reg = registry(&[("f", "s", "integer")]);
        let r = lower_streams(&mut m, &reg, &IntrinsicMap::default().streams).unwrap();
        assert_eq!((r.set_depth, r.push, r.pop, r.empty, r.full), (1, 2, 1, 1, 1));
        assert_eq!(r.streams.len(), 1);
        assert_eq!(r.functions_removed.len(), 5);
        let text = print_module(&m, Dialect::Modern).unwrap();
        for line in [
            "call void @llvm.fpga.set.stream.depth(ptr %f, i32 0)",
            "call void @llvm.fpga.fifo.push.i32.p0(i32 %v, ptr %f)",
            "%a.val = load i32, ptr %a\n  call void @llvm.fpga.fifo.push.i32.p0(i32 %a.val, ptr %f)",
            "%r = call i32 @llvm.fpga.fifo.pop.i32.p0(ptr %f)",
            "%e.not = call i1 @llvm.fpga.fifo.not.empty.p0(ptr %f)\n  %e.flip = xor i1 %e.not, true\n  %e = zext i1 %e.flip to i32",
            "%full.not = call i1 @llvm.fpga.fifo.not.full.p0(ptr %f)\n  %full = xor i1 %full.not, true",
            "declare void @llvm.fpga.set.stream.depth(ptr, i32)",
            "declare i32 @llvm.fpga.fifo.pop.i32.p0(ptr)",
        ] {
            assert!(text.contains(line), "missing {line}\n{text}");
        }
        assert!(!text.contains("hls_lowered") && !text.contains("set_depth_") && !text.contains("_empty_"));
    }

    #[test]
    fn identity_without_stream_calls() {
        let mut m = parse_module("define void @k() {\n  ret void\n}\n").unwrap();
        let before = m.clone();
        let r = lower_streams(&mut m, &StreamTypeRegistry::new(), &IntrinsicMap::default().streams).unwrap();
        assert_eq!(r, StreamReport::default());
        assert_eq!(m, before);
    }

    #[test]
    fn depth_from_single_store_alloca_and_unnamed_streams() {
        let mut m = parse_module(
            r#"
define void @_QPg() {
  %1 = alloca { double }
  %2 = alloca i32
  store i32 16, ptr %2
  %3 = getelementptr { double }, ptr %1, i32 0, i32 0
  call void @_QMhls_streamPset_depth_real8(ptr %3, ptr %2)
  ret void
}
declare void @_QMhls_streamPset_depth_real8(ptr, ptr)
"#,
        )
        .unwrap();
        let reg = registry(&[("g", "t", "real8")]);
        let r = lower_streams(&mut m, &reg, &IntrinsicMap::default().streams).unwrap();
        assert!(r.streams.contains(&("g".to_string(), "t".to_string())));
        let text = print_module(&m, Dialect::Modern).unwrap();
        assert!(text.contains("call void @llvm.fpga.set.stream.depth(ptr %3, i32 16)"), "{text}");
    }

    #[test]
    fn errors() {
        let prims = IntrinsicMap::default().streams;
        let reg = registry(&[("f", "s", "real")]);
        let mut m = parse_module(KERNEL).unwrap();
        assert!(matches!(lower_streams(&mut m, &reg, &prims), Err(StreamError::TypeMismatch { .. })));
        let mut m = parse_module(KERNEL).unwrap();
        let other = registry(&[("g", "s", "integer")]);
        assert!(matches!(lower_streams(&mut m, &other, &prims), Err(StreamError::Registry { .. })));
        let direct = KERNEL.replace("set_depth_integer(ptr %f,", "set_depth_integer(ptr %s,");
        let mut m = parse_module(&direct).unwrap();
        let reg = registry(&[("f", "s", "integer")]);
        assert!(matches!(lower_streams(&mut m, &reg, &prims), Err(StreamError::NotFieldAccess { .. })));
        let dynamic = KERNEL.replace("ptr @depth", "ptr %a");
        let mut m = parse_module(&dynamic).unwrap();
        assert!(matches!(lower_streams(&mut m, &reg, &prims), Err(StreamError::NonConstantDepth { .. })));
    }
}
