//! Textual IR printer for both dialects.
//!
//! Purely numeric local names (`%3`, block `5`) are re-sequenced in
//! definition order so the output always satisfies the sequential-numbering
//! rule of the textual format, even after passes renamed or inserted values.

use std::collections::HashMap;
use std::fmt::{self, Write};

use super::error::PrintError;
use super::model::*;
use super::types::{escape_string, is_bare_name, TypeExpr};

#[derive(Clone, Copy, Debug, PartialEq, Eq)]
pub enum Dialect {
    /// Opaque-pointer syntax of current front ends.
    Modern,
    /// Typed-pointer syntax accepted by version-7 tooling.
    V7,
}

pub fn print_module(m: &IRModule, dialect: Dialect) -> Result<String, PrintError> {
    if dialect == Dialect::V7 {
        let violations = super::validate::structural_violations(m);
        if let Some(first) = violations.first() {
            return Err(PrintError::NotV7Clean(violations.len(), first.to_string()));
        }
    }
    let mut out = String::new();
    write_module(&mut out, m, dialect).expect("writing to a String cannot fail");
    Ok(out)
}

fn is_numeric(name: &str) -> bool {
    !name.is_empty() && name.bytes().all(|b| b.is_ascii_digit())
}

pub(crate) fn global_name(name: &str) -> String {
    if is_bare_name(name) || is_numeric(name) {
        format!("@{name}")
    } else {
        format!("@\"{}\"", escape_string(name.as_bytes()))
    }
}

fn label_text(name: &str) -> String {
    if is_bare_name(name) || is_numeric(name) {
        name.to_string()
    } else {
        format!("\"{}\"", escape_string(name.as_bytes()))
    }
}

/// Maps numeric local names of one function to their sequential numbers.
pub(crate) fn numbering(f: &IRFunction) -> HashMap<String, String> {
    let mut map = HashMap::new();
    let mut next = 0u64;
    let mut take = |name: &str, map: &mut HashMap<String, String>| {
        if is_numeric(name) {
            map.insert(name.to_string(), next.to_string());
            next += 1;
        }
    };
    for p in &f.params {
        if let Some(n) = &p.name {
            take(n, &mut map);
        }
    }
    for b in &f.blocks {
        take(&b.label, &mut map);
        for i in &b.instructions {
            if let Some(r) = &i.result {
                take(r, &mut map);
            }
        }
    }
    map
}

struct Names<'a>(Option<&'a HashMap<String, String>>);

impl Names<'_> {
    fn get<'n>(&'n self, name: &'n str) -> &'n str {
        self.0.and_then(|m| m.get(name)).map_or(name, |s| s.as_str())
    }

    fn local(&self, name: &str) -> String {
        format!("%{}", label_text(self.get(name)))
    }
}

fn write_module(out: &mut String, m: &IRModule, dialect: Dialect) -> fmt::Result {
    let none = Names(None);
    if let Some(s) = &m.source_filename {
        writeln!(out, "source_filename = \"{}\"", escape_string(s.as_bytes()))?;
    }
    if let Some(s) = &m.datalayout {
        writeln!(out, "target datalayout = \"{}\"", escape_string(s.as_bytes()))?;
    }
    if let Some(s) = &m.triple {
        writeln!(out, "target triple = \"{}\"", escape_string(s.as_bytes()))?;
    }
    if !m.types.is_empty() {
        out.push('\n');
        for t in &m.types {
            match &t.body {
                Some(body) => writeln!(out, "{} = type {body}", TypeExpr::Named(t.name.clone()))?,
                None => writeln!(out, "{} = type opaque", TypeExpr::Named(t.name.clone()))?,
            }
        }
    }
    if !m.globals.is_empty() {
        out.push('\n');
        for g in &m.globals {
            write!(out, "{} =", global_name(&g.name))?;
            for k in &g.keywords {
                write!(out, " {k}")?;
            }
            write!(out, " {} {}", if g.constant { "constant" } else { "global" }, g.ty)?;
            if let Some(init) = &g.init {
                out.push(' ');
                write_constant(out, init, &none)?;
            }
            if let Some(a) = g.align {
                write!(out, ", align {a}")?;
            }
            for (k, id) in &g.metadata {
                write!(out, ", !{k} !{id}")?;
            }
            out.push('\n');
        }
    }
    for f in &m.functions {
        out.push('\n');
        write_function(out, f, dialect)?;
    }
    if !m.attribute_groups.is_empty() {
        out.push('\n');
        for (id, attrs) in &m.attribute_groups {
            write!(out, "attributes #{id} = {{")?;
            for a in attrs {
                out.push(' ');
                write_attr(out, a)?;
            }
            out.push_str(" }\n");
        }
    }
    if !m.named_metadata.is_empty() || !m.metadata.is_empty() {
        out.push('\n');
    }
    for nm in &m.named_metadata {
        write!(out, "!{} = !{{", nm.name)?;
        for (i, id) in nm.nodes.iter().enumerate() {
            if i > 0 {
                out.push_str(", ");
            }
            write!(out, "!{id}")?;
        }
        out.push_str("}\n");
    }
    for (id, node) in &m.metadata {
        write!(out, "!{id} = ")?;
        if node.distinct {
            out.push_str("distinct ");
        }
        match &node.content {
            MdContent::Tuple(ops) => write_md_tuple(out, ops)?,
            MdContent::Specialized(s) => write_specialized(out, s)?,
        }
        out.push('\n');
    }
    Ok(())
}

fn write_function(out: &mut String, f: &IRFunction, dialect: Dialect) -> fmt::Result {
    let map = numbering(f);
    let names = Names(Some(&map));
    out.push_str(if f.is_declaration() { "declare" } else { "define" });
    for k in &f.linkage {
        write!(out, " {k}")?;
    }
    for a in &f.ret_attrs {
        out.push(' ');
        write_attr(out, a)?;
    }
    write!(out, " {} {}(", f.return_type, global_name(&f.name))?;
    for (i, p) in f.params.iter().enumerate() {
        if i > 0 {
            out.push_str(", ");
        }
        write!(out, "{}", p.ty)?;
        for a in &p.attrs {
            out.push(' ');
            write_attr(out, a)?;
        }
        if let Some(n) = &p.name {
            write!(out, " {}", names.local(n))?;
        }
    }
    out.push(')');
    if let Some(k) = &f.addr_kind {
        write!(out, " {k}")?;
    }
    write_fn_attrs(out, &f.fn_attrs)?;
    if let Some(a) = f.align {
        write!(out, " align {a}")?;
    }
    for (k, id) in &f.metadata {
        write!(out, " !{k} !{id}")?;
    }
    if f.is_declaration() {
        out.push('\n');
        return Ok(());
    }
    out.push_str(" {\n");
    for (bi, b) in f.blocks.iter().enumerate() {
        let label = names.get(&b.label);
        if bi > 0 {
            out.push('\n');
        }
        if is_numeric(label) {
            if bi > 0 {
                match dialect {
                    Dialect::Modern => writeln!(out, "{label}:")?,
                    Dialect::V7 => writeln!(out, "; <label>:{label}:")?,
                }
            }
        } else {
            writeln!(out, "{}:", label_text(label))?;
        }
        for inst in &b.instructions {
            out.push_str("  ");
            write_instruction(out, inst, &names)?;
            out.push('\n');
        }
    }
    out.push_str("}\n");
    Ok(())
}

fn write_fn_attrs(out: &mut String, attrs: &[FnAttr]) -> fmt::Result {
    for a in attrs {
        out.push(' ');
        match a {
            FnAttr::Attr(a) => write_attr(out, a)?,
            FnAttr::Group(id) => write!(out, "#{id}")?,
        }
    }
    Ok(())
}

/// Textual form of one attribute, as it would be printed.
pub fn attribute_text(a: &Attribute) -> String {
    let mut out = String::new();
    let _ = write_attr(&mut out, a);
    out
}

fn write_attr(out: &mut String, a: &Attribute) -> fmt::Result {
    match a {
        Attribute::Flag(n) => out.push_str(n),
        Attribute::Int(n, v) => write!(out, "{n} {v}")?,
        Attribute::Paren(n, raw) => write!(out, "{n}({raw})")?,
        Attribute::Typed(n, t) => write!(out, "{n}({t})")?,
        Attribute::Str(k, None) => write!(out, "\"{}\"", escape_string(k.as_bytes()))?,
        Attribute::Str(k, Some(v)) => {
            write!(out, "\"{}\"=\"{}\"", escape_string(k.as_bytes()), escape_string(v.as_bytes()))?
        }
    }
    Ok(())
}

fn write_value(out: &mut String, v: &Value, names: &Names) -> fmt::Result {
    match v {
        Value::Local(n) => out.push_str(&names.local(n)),
        Value::Global(n) => out.push_str(&global_name(n)),
        Value::Const(c) => write_constant(out, c, names)?,
    }
    Ok(())
}

fn write_operand(out: &mut String, op: &Operand, names: &Names) -> fmt::Result {
    write!(out, "{} ", op.ty)?;
    write_value(out, &op.value, names)
}

fn write_operands(out: &mut String, ops: &[Operand], names: &Names) -> fmt::Result {
    for (i, op) in ops.iter().enumerate() {
        if i > 0 {
            out.push_str(", ");
        }
        write_operand(out, op, names)?;
    }
    Ok(())
}

fn write_constant(out: &mut String, c: &Constant, names: &Names) -> fmt::Result {
    match c {
        Constant::Int(v) => write!(out, "{v}")?,
        Constant::Float(s) => out.push_str(s),
        Constant::Bool(b) => write!(out, "{b}")?,
        Constant::Null => out.push_str("null"),
        Constant::Undef => out.push_str("undef"),
        Constant::Poison => out.push_str("poison"),
        Constant::ZeroInit => out.push_str("zeroinitializer"),
        Constant::Array(elems) => {
            out.push('[');
            write_operands(out, elems, names)?;
            out.push(']');
        }
        Constant::CString(bytes) => write!(out, "c\"{}\"", escape_string(bytes))?,
        Constant::Struct(elems) => {
            if elems.is_empty() {
                out.push_str("{}");
            } else {
                out.push_str("{ ");
                write_operands(out, elems, names)?;
                out.push_str(" }");
            }
        }
    }
    Ok(())
}

fn write_words(out: &mut String, words: &[String]) {
    for w in words {
        out.push_str(w);
        out.push(' ');
    }
}

fn write_align(out: &mut String, align: Option<u64>) -> fmt::Result {
    if let Some(a) = align {
        write!(out, ", align {a}")?;
    }
    Ok(())
}

fn write_instruction(out: &mut String, inst: &Instruction, names: &Names) -> fmt::Result {
    if let Some(r) = &inst.result {
        write!(out, "{} = ", names.local(r))?;
    }
    match &inst.kind {
        InstKind::Alloca { ty, count, align } => {
            write!(out, "alloca {ty}")?;
            if let Some(c) = count {
                out.push_str(", ");
                write_operand(out, c, names)?;
            }
            write_align(out, *align)?;
        }
        InstKind::Load { volatile, ty, ptr, align } => {
            out.push_str("load ");
            if *volatile {
                out.push_str("volatile ");
            }
            write!(out, "{ty}, ")?;
            write_operand(out, ptr, names)?;
            write_align(out, *align)?;
        }
        InstKind::Store { volatile, value, ptr, align } => {
            out.push_str("store ");
            if *volatile {
                out.push_str("volatile ");
            }
            write_operand(out, value, names)?;
            out.push_str(", ");
            write_operand(out, ptr, names)?;
            write_align(out, *align)?;
        }
        InstKind::GetElementPtr { inbounds, source_ty, base, indices } => {
            out.push_str("getelementptr ");
            if *inbounds {
                out.push_str("inbounds ");
            }
            write!(out, "{source_ty}, ")?;
            write_operand(out, base, names)?;
            for i in indices {
                out.push_str(", ");
                write_operand(out, i, names)?;
            }
        }
        InstKind::Br { dest } => write!(out, "br label {}", names.local(dest))?,
        InstKind::CondBr { cond, if_true, if_false } => {
            out.push_str("br ");
            write_operand(out, cond, names)?;
            write!(out, ", label {}, label {}", names.local(if_true), names.local(if_false))?;
        }
        InstKind::Ret { value: None } => out.push_str("ret void"),
        InstKind::Ret { value: Some(v) } => {
            out.push_str("ret ");
            write_operand(out, v, names)?;
        }
        InstKind::Unreachable => out.push_str("unreachable"),
        InstKind::ICmp { pred, ty, lhs, rhs } => {
            write!(out, "icmp {pred} {ty} ")?;
            write_value(out, lhs, names)?;
            out.push_str(", ");
            write_value(out, rhs, names)?;
        }
        InstKind::FCmp { flags, pred, ty, lhs, rhs } => {
            out.push_str("fcmp ");
            write_words(out, flags);
            write!(out, "{pred} {ty} ")?;
            write_value(out, lhs, names)?;
            out.push_str(", ");
            write_value(out, rhs, names)?;
        }
        InstKind::Binary { op, flags, ty, lhs, rhs } => {
            write!(out, "{} ", op.keyword())?;
            write_words(out, flags);
            write!(out, "{ty} ")?;
            write_value(out, lhs, names)?;
            out.push_str(", ");
            write_value(out, rhs, names)?;
        }
        InstKind::Cast { op, value, to } => {
            write!(out, "{} ", op.keyword())?;
            write_operand(out, value, names)?;
            write!(out, " to {to}")?;
        }
        InstKind::Select { cond, on_true, on_false } => {
            out.push_str("select ");
            write_operands(out, &[cond.clone(), on_true.clone(), on_false.clone()], names)?;
        }
        InstKind::Phi { ty, incoming } => {
            write!(out, "phi {ty} ")?;
            for (i, (v, l)) in incoming.iter().enumerate() {
                if i > 0 {
                    out.push_str(", ");
                }
                out.push_str("[ ");
                write_value(out, v, names)?;
                write!(out, ", {} ]", names.local(l))?;
            }
        }
        InstKind::Call(call) => write_call(out, call, names)?,
    }
    for (k, id) in &inst.metadata {
        write!(out, ", !{k} !{id}")?;
    }
    Ok(())
}

fn write_call(out: &mut String, call: &CallInst, names: &Names) -> fmt::Result {
    if let Some(t) = &call.tail {
        write!(out, "{t} ")?;
    }
    out.push_str("call ");
    write_words(out, &call.fast_math);
    if let Some(cc) = &call.cconv {
        write!(out, "{cc} ")?;
    }
    for a in &call.ret_attrs {
        write_attr(out, a)?;
        out.push(' ');
    }
    write!(out, "{} {}(", call.ret_ty, global_name(&call.callee))?;
    for (i, arg) in call.args.iter().enumerate() {
        if i > 0 {
            out.push_str(", ");
        }
        write!(out, "{}", arg.ty)?;
        for a in &arg.attrs {
            out.push(' ');
            write_attr(out, a)?;
        }
        out.push(' ');
        write_value(out, &arg.value, names)?;
    }
    out.push(')');
    write_fn_attrs(out, &call.fn_attrs)?;
    if !call.bundles.is_empty() {
        out.push_str(" [ ");
        for (i, b) in call.bundles.iter().enumerate() {
            if i > 0 {
                out.push_str(", ");
            }
            write!(out, "\"{}\"(", escape_string(b.tag.as_bytes()))?;
            write_operands(out, &b.inputs, names)?;
            out.push(')');
        }
        out.push_str(" ]");
    }
    Ok(())
}

fn write_md_tuple(out: &mut String, ops: &[MdOperand]) -> fmt::Result {
    out.push_str("!{");
    for (i, op) in ops.iter().enumerate() {
        if i > 0 {
            out.push_str(", ");
        }
        match op {
            MdOperand::Ref(id) => write!(out, "!{id}")?,
            MdOperand::Str(s) => write!(out, "!\"{}\"", escape_string(s.as_bytes()))?,
            MdOperand::Value(v) => write_operand(out, v, &Names(None))?,
            MdOperand::Null => out.push_str("null"),
        }
    }
    out.push('}');
    Ok(())
}

fn write_specialized(out: &mut String, node: &SpecializedNode) -> fmt::Result {
    write!(out, "!{}(", node.name)?;
    for (i, (key, field)) in node.fields.iter().enumerate() {
        if i > 0 {
            out.push_str(", ");
        }
        if let Some(k) = key {
            write!(out, "{k}: ")?;
        }
        match field {
            MdField::Ref(id) => write!(out, "!{id}")?,
            MdField::Str(s) => write!(out, "\"{}\"", escape_string(s.as_bytes()))?,
            MdField::Int(v) => write!(out, "{v}")?,
            MdField::Word(w) => out.push_str(w),
            MdField::Null => out.push_str("null"),
            MdField::Node(n) => write_specialized(out, n)?,
            MdField::Tuple(ops) => write_md_tuple(out, ops)?,
        }
    }
    out.push(')');
    Ok(())
}

/// Renders one instruction in modern syntax, without function context.
pub fn instruction_text(inst: &Instruction) -> String {
    let mut out = String::new();
    write_instruction(&mut out, inst, &Names(None)).expect("writing to a String cannot fail");
    out
}

#[cfg(test)]
mod tests {
    use super::super::parser::parse_module;
    use super::*;

    const SAMPLE: &str = r#"source_filename = "k.f90"
target triple = "x86_64-unknown-linux-gnu"

%struct.s = type { ptr, i32 }

@tbl = internal constant [2 x i32] [i32 1, i32 2], align 4

define void @k(ptr %a, i32 %n) {
entry:
  %0 = alloca i32, align 4
  br label %loop

loop:
  %i = phi i32 [ 0, %entry ], [ %i.next, %loop ]
  %p = getelementptr inbounds i32, ptr %a, i32 %i
  store i32 %i, ptr %p, align 4
  %i.next = add nsw i32 %i, 1
  %c = icmp slt i32 %i.next, %n
  br i1 %c, label %loop, label %exit, !llvm.loop !0

exit:
  ret void
}

!0 = distinct !{!0, !1}
!1 = !{!"llvm.loop.pipeline.enable", i32 1, i1 false, i8 -1}
"#;

    #[test]
    fn print_parse_print_is_stable() {
        let m = parse_module(SAMPLE).unwrap();
        let first = print_module(&m, Dialect::Modern).unwrap();
        let again = print_module(&parse_module(&first).unwrap(), Dialect::Modern).unwrap();
        assert_eq!(first, again);
        assert_eq!(parse_module(&first).unwrap(), m);
    }

    #[test]
    fn v7_refuses_opaque_pointers() {
        let m = parse_module(SAMPLE).unwrap();
        assert!(matches!(print_module(&m, Dialect::V7), Err(PrintError::NotV7Clean(..))));
    }

    #[test]
    fn typed_pointer_prints_with_star() {
        let text = "define i32 @f(i32* %p) {\n  %v = load i32, i32* %p, align 4\n  ret i32 %v\n}\n";
        let m = parse_module(text).unwrap();
        let out = print_module(&m, Dialect::V7).unwrap();
        assert!(out.contains("i32* %p"));
        assert_eq!(parse_module(&out).unwrap(), m);
    }

    #[test]
    fn numeric_names_are_resequenced() {
        let text = "define void @f(i32 %x) {\n  %1 = add i32 %x, 1\n  br label %7\n7:\n  ret void\n}\n";
        let mut m = parse_module(text).unwrap();
        // Simulate a pass renaming the numeric value and block.
        let f = &mut m.functions[0];
        f.blocks[0].instructions[0].result = Some("5".into());
        let out = print_module(&m, Dialect::Modern).unwrap();
        // Entry block is implicitly %0, so the renamed value becomes %1.
        assert!(out.contains("%1 = add i32 %x, 1"), "{out}");
        assert!(out.contains("br label %2"), "{out}");
        let v7 = {
            let t = "define void @f(i32 %x) {\n  br label %1\n1:\n  ret void\n}\n";
            print_module(&parse_module(t).unwrap(), Dialect::V7).unwrap()
        };
        assert!(v7.contains("; <label>:1:"), "{v7}");
        assert_eq!(parse_module(&v7).unwrap().functions[0].blocks[1].label, "1");
    }
}
