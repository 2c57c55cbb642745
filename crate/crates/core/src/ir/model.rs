use std::collections::{BTreeMap, HashMap};

use super::types::TypeExpr;

/// Stable per-module instruction identifier.
///
/// Assigned in parse order and preserved by every pass that does not delete
/// the instruction. Equality of [`Instruction`]s ignores it.
#[derive(Clone, Copy, Debug, PartialEq, Eq, Hash, PartialOrd, Ord)]
pub struct InstId(pub u32);

pub type MdId = u32;

#[derive(Clone, Debug, PartialEq)]
pub enum Value {
    Local(String),
    Global(String),
    Const(Constant),
}

impl Value {
    pub fn local(name: impl Into<String>) -> Value {
        Value::Local(name.into())
    }

    pub fn int(v: i128) -> Value {
        Value::Const(Constant::Int(v))
    }

    pub fn as_local(&self) -> Option<&str> {
        match self {
            Value::Local(n) => Some(n),
            _ => None,
        }
    }

    pub fn as_int(&self) -> Option<i128> {
        match self {
            Value::Const(Constant::Int(v)) => Some(*v),
            Value::Const(Constant::Bool(b)) => Some(*b as i128),
            _ => None,
        }
    }
}

#[derive(Clone, Debug, PartialEq)]
pub enum Constant {
    Int(i128),
    /// Float literal kept in its source spelling.
    Float(String),
    Bool(bool),
    Null,
    Undef,
    Poison,
    ZeroInit,
    Array(Vec<Operand>),
    CString(Vec<u8>),
    Struct(Vec<Operand>),
}

/// A value together with its type, as written at a use site.
#[derive(Clone, Debug, PartialEq)]
pub struct Operand {
    pub ty: TypeExpr,
    pub value: Value,
}

impl Operand {
    pub fn new(ty: TypeExpr, value: Value) -> Operand {
        Operand { ty, value }
    }

    pub fn local(ty: TypeExpr, name: impl Into<String>) -> Operand {
        Operand::new(ty, Value::Local(name.into()))
    }

    pub fn int(width: u32, v: i128) -> Operand {
        if width == 1 {
            Operand::new(TypeExpr::Int(1), Value::Const(Constant::Bool(v != 0)))
        } else {
            Operand::new(TypeExpr::Int(width), Value::int(v))
        }
    }
}

/// Parameter, return, call-site or function attribute.
#[derive(Clone, Debug, PartialEq)]
pub enum Attribute {
    /// `nounwind`
    Flag(String),
    /// `align 4`
    Int(String, u64),
    /// `dereferenceable(8)`, `memory(argmem: read)`; raw argument text.
    Paren(String, String),
    /// `byval(i32)`, `sret(%T)`
    Typed(String, TypeExpr),
    /// `"key"="value"` or `"key"`
    Str(String, Option<String>),
}

impl Attribute {
    pub fn name(&self) -> &str {
        match self {
            Attribute::Flag(n)
            | Attribute::Int(n, _)
            | Attribute::Paren(n, _)
            | Attribute::Typed(n, _)
            | Attribute::Str(n, _) => n,
        }
    }

    /// Shape string used for whitelist matching: `nocapture`, `align #`,
    /// `dereferenceable(#)`, `uwtable(...)`, `byval(<type>)`, `"key"`.
    pub fn shape(&self) -> String {
        match self {
            Attribute::Flag(n) => n.clone(),
            Attribute::Int(n, _) => format!("{n} #"),
            Attribute::Paren(n, raw) => {
                let numeric = raw
                    .split(',')
                    .all(|part| !part.trim().is_empty() && part.trim().bytes().all(|b| b.is_ascii_digit()));
                if numeric {
                    format!("{n}(#)")
                } else {
                    format!("{n}(...)")
                }
            }
            Attribute::Typed(n, _) => format!("{n}(<type>)"),
            Attribute::Str(k, _) => format!("\"{k}\""),
        }
    }

    pub fn is_byval(&self) -> bool {
        self.name() == "byval" && !matches!(self, Attribute::Str(..))
    }
}

/// Function attribute: inline attribute or `#N` group reference.
#[derive(Clone, Debug, PartialEq)]
pub enum FnAttr {
    Attr(Attribute),
    Group(u32),
}

#[derive(Clone, Copy, Debug, PartialEq, Eq, Hash, PartialOrd, Ord)]
pub enum BinaryOp {
    Add,
    Sub,
    Mul,
    UDiv,
    SDiv,
    URem,
    SRem,
    Shl,
    LShr,
    AShr,
    And,
    Or,
    Xor,
    FAdd,
    FSub,
    FMul,
    FDiv,
    FRem,
}

impl BinaryOp {
    pub const ALL: [BinaryOp; 18] = [
        BinaryOp::Add,
        BinaryOp::Sub,
        BinaryOp::Mul,
        BinaryOp::UDiv,
        BinaryOp::SDiv,
        BinaryOp::URem,
        BinaryOp::SRem,
        BinaryOp::Shl,
        BinaryOp::LShr,
        BinaryOp::AShr,
        BinaryOp::And,
        BinaryOp::Or,
        BinaryOp::Xor,
        BinaryOp::FAdd,
        BinaryOp::FSub,
        BinaryOp::FMul,
        BinaryOp::FDiv,
        BinaryOp::FRem,
    ];

    pub fn keyword(self) -> &'static str {
        match self {
            BinaryOp::Add => "add",
            BinaryOp::Sub => "sub",
            BinaryOp::Mul => "mul",
            BinaryOp::UDiv => "udiv",
            BinaryOp::SDiv => "sdiv",
            BinaryOp::URem => "urem",
            BinaryOp::SRem => "srem",
            BinaryOp::Shl => "shl",
            BinaryOp::LShr => "lshr",
            BinaryOp::AShr => "ashr",
            BinaryOp::And => "and",
            BinaryOp::Or => "or",
            BinaryOp::Xor => "xor",
            BinaryOp::FAdd => "fadd",
            BinaryOp::FSub => "fsub",
            BinaryOp::FMul => "fmul",
            BinaryOp::FDiv => "fdiv",
            BinaryOp::FRem => "frem",
        }
    }

    pub fn from_keyword(word: &str) -> Option<BinaryOp> {
        BinaryOp::ALL.into_iter().find(|op| op.keyword() == word)
    }

    pub fn is_float(self) -> bool {
        matches!(self, BinaryOp::FAdd | BinaryOp::FSub | BinaryOp::FMul | BinaryOp::FDiv | BinaryOp::FRem)
    }
}

#[derive(Clone, Copy, Debug, PartialEq, Eq, Hash, PartialOrd, Ord)]
pub enum CastOp {
    Trunc,
    ZExt,
    SExt,
    FpTrunc,
    FpExt,
    FpToUi,
    FpToSi,
    UiToFp,
    SiToFp,
    PtrToInt,
    IntToPtr,
    BitCast,
}

impl CastOp {
    pub const ALL: [CastOp; 12] = [
        CastOp::Trunc,
        CastOp::ZExt,
        CastOp::SExt,
        CastOp::FpTrunc,
        CastOp::FpExt,
        CastOp::FpToUi,
        CastOp::FpToSi,
        CastOp::UiToFp,
        CastOp::SiToFp,
        CastOp::PtrToInt,
        CastOp::IntToPtr,
        CastOp::BitCast,
    ];

    pub fn keyword(self) -> &'static str {
        match self {
            CastOp::Trunc => "trunc",
            CastOp::ZExt => "zext",
            CastOp::SExt => "sext",
            CastOp::FpTrunc => "fptrunc",
            CastOp::FpExt => "fpext",
            CastOp::FpToUi => "fptoui",
            CastOp::FpToSi => "fptosi",
            CastOp::UiToFp => "uitofp",
            CastOp::SiToFp => "sitofp",
            CastOp::PtrToInt => "ptrtoint",
            CastOp::IntToPtr => "inttoptr",
            CastOp::BitCast => "bitcast",
        }
    }

    pub fn from_keyword(word: &str) -> Option<CastOp> {
        CastOp::ALL.into_iter().find(|op| op.keyword() == word)
    }
}

/// Opcode summary, used for multiset comparisons across passes.
#[derive(Clone, Copy, Debug, PartialEq, Eq, Hash, PartialOrd, Ord)]
pub enum Opcode {
    Alloca,
    Load,
    Store,
    GetElementPtr,
    Br,
    CondBr,
    Ret,
    Unreachable,
    ICmp,
    FCmp,
    Binary(BinaryOp),
    Cast(CastOp),
    Select,
    Phi,
    Call,
}

#[derive(Clone, Debug, PartialEq)]
pub struct CallArg {
    pub ty: TypeExpr,
    pub attrs: Vec<Attribute>,
    pub value: Value,
}

#[derive(Clone, Debug, PartialEq)]
pub struct OperandBundle {
    pub tag: String,
    pub inputs: Vec<Operand>,
}

#[derive(Clone, Debug, PartialEq)]
pub struct CallInst {
    /// `tail`, `musttail` or `notail`.
    pub tail: Option<String>,
    pub fast_math: Vec<String>,
    pub cconv: Option<String>,
    pub ret_attrs: Vec<Attribute>,
    pub ret_ty: TypeExpr,
    pub callee: String,
    pub args: Vec<CallArg>,
    pub fn_attrs: Vec<FnAttr>,
    pub bundles: Vec<OperandBundle>,
}

impl CallInst {
    pub fn simple(ret_ty: TypeExpr, callee: impl Into<String>, args: Vec<Operand>) -> CallInst {
        CallInst {
            tail: None,
            fast_math: Vec::new(),
            cconv: None,
            ret_attrs: Vec::new(),
            ret_ty,
            callee: callee.into(),
            args: args.into_iter().map(|op| CallArg { ty: op.ty, attrs: Vec::new(), value: op.value }).collect(),
            fn_attrs: Vec::new(),
            bundles: Vec::new(),
        }
    }
}

#[derive(Clone, Debug, PartialEq)]
pub enum InstKind {
    Alloca { ty: TypeExpr, count: Option<Operand>, align: Option<u64> },
    Load { volatile: bool, ty: TypeExpr, ptr: Operand, align: Option<u64> },
    Store { volatile: bool, value: Operand, ptr: Operand, align: Option<u64> },
    GetElementPtr { inbounds: bool, source_ty: TypeExpr, base: Operand, indices: Vec<Operand> },
    Br { dest: String },
    CondBr { cond: Operand, if_true: String, if_false: String },
    Ret { value: Option<Operand> },
    Unreachable,
    ICmp { pred: String, ty: TypeExpr, lhs: Value, rhs: Value },
    FCmp { flags: Vec<String>, pred: String, ty: TypeExpr, lhs: Value, rhs: Value },
    Binary { op: BinaryOp, flags: Vec<String>, ty: TypeExpr, lhs: Value, rhs: Value },
    Cast { op: CastOp, value: Operand, to: TypeExpr },
    Select { cond: Operand, on_true: Operand, on_false: Operand },
    Phi { ty: TypeExpr, incoming: Vec<(Value, String)> },
    Call(CallInst),
}

impl InstKind {
    pub fn opcode(&self) -> Opcode {
        match self {
            InstKind::Alloca { .. } => Opcode::Alloca,
            InstKind::Load { .. } => Opcode::Load,
            InstKind::Store { .. } => Opcode::Store,
            InstKind::GetElementPtr { .. } => Opcode::GetElementPtr,
            InstKind::Br { .. } => Opcode::Br,
            InstKind::CondBr { .. } => Opcode::CondBr,
            InstKind::Ret { .. } => Opcode::Ret,
            InstKind::Unreachable => Opcode::Unreachable,
            InstKind::ICmp { .. } => Opcode::ICmp,
            InstKind::FCmp { .. } => Opcode::FCmp,
            InstKind::Binary { op, .. } => Opcode::Binary(*op),
            InstKind::Cast { op, .. } => Opcode::Cast(*op),
            InstKind::Select { .. } => Opcode::Select,
            InstKind::Phi { .. } => Opcode::Phi,
            InstKind::Call(_) => Opcode::Call,
        }
    }

    pub fn is_terminator(&self) -> bool {
        matches!(self, InstKind::Br { .. } | InstKind::CondBr { .. } | InstKind::Ret { .. } | InstKind::Unreachable)
    }

    pub fn produces_value(&self) -> bool {
        match self {
            InstKind::Store { .. }
            | InstKind::Br { .. }
            | InstKind::CondBr { .. }
            | InstKind::Ret { .. }
            | InstKind::Unreachable => false,
            InstKind::Call(call) => !call.ret_ty.is_void(),
            _ => true,
        }
    }

    pub fn successors(&self) -> Vec<&str> {
        match self {
            InstKind::Br { dest } => vec![dest.as_str()],
            InstKind::CondBr { if_true, if_false, .. } => vec![if_true.as_str(), if_false.as_str()],
            _ => Vec::new(),
        }
    }

    pub fn labels_mut(&mut self) -> Vec<&mut String> {
        match self {
            InstKind::Br { dest } => vec![dest],
            InstKind::CondBr { if_true, if_false, .. } => vec![if_true, if_false],
            InstKind::Phi { incoming, .. } => incoming.iter_mut().map(|(_, l)| l).collect(),
            _ => Vec::new(),
        }
    }

    /// Every value used by the instruction, in textual order.
    pub fn values(&self) -> Vec<&Value> {
        let mut out = Vec::new();
        match self {
            InstKind::Alloca { count, .. } => out.extend(count.iter().map(|c| &c.value)),
            InstKind::Load { ptr, .. } => out.push(&ptr.value),
            InstKind::Store { value, ptr, .. } => {
                out.push(&value.value);
                out.push(&ptr.value);
            }
            InstKind::GetElementPtr { base, indices, .. } => {
                out.push(&base.value);
                out.extend(indices.iter().map(|i| &i.value));
            }
            InstKind::Br { .. } | InstKind::Unreachable => {}
            InstKind::CondBr { cond, .. } => out.push(&cond.value),
            InstKind::Ret { value } => out.extend(value.iter().map(|v| &v.value)),
            InstKind::ICmp { lhs, rhs, .. } | InstKind::FCmp { lhs, rhs, .. } | InstKind::Binary { lhs, rhs, .. } => {
                out.push(lhs);
                out.push(rhs);
            }
            InstKind::Cast { value, .. } => out.push(&value.value),
            InstKind::Select { cond, on_true, on_false } => {
                out.push(&cond.value);
                out.push(&on_true.value);
                out.push(&on_false.value);
            }
            InstKind::Phi { incoming, .. } => out.extend(incoming.iter().map(|(v, _)| v)),
            InstKind::Call(call) => {
                out.extend(call.args.iter().map(|a| &a.value));
                for bundle in &call.bundles {
                    out.extend(bundle.inputs.iter().map(|i| &i.value));
                }
            }
        }
        out
    }

    /// Mutable view of every value used by the instruction, in textual order.
    pub fn values_mut(&mut self) -> Vec<&mut Value> {
        let mut out = Vec::new();
        match self {
            InstKind::Alloca { count, .. } => out.extend(count.iter_mut().map(|c| &mut c.value)),
            InstKind::Load { ptr, .. } => out.push(&mut ptr.value),
            InstKind::Store { value, ptr, .. } => {
                out.push(&mut value.value);
                out.push(&mut ptr.value);
            }
            InstKind::GetElementPtr { base, indices, .. } => {
                out.push(&mut base.value);
                out.extend(indices.iter_mut().map(|i| &mut i.value));
            }
            InstKind::Br { .. } | InstKind::Unreachable => {}
            InstKind::CondBr { cond, .. } => out.push(&mut cond.value),
            InstKind::Ret { value } => out.extend(value.iter_mut().map(|v| &mut v.value)),
            InstKind::ICmp { lhs, rhs, .. } | InstKind::FCmp { lhs, rhs, .. } | InstKind::Binary { lhs, rhs, .. } => {
                out.push(lhs);
                out.push(rhs);
            }
            InstKind::Cast { value, .. } => out.push(&mut value.value),
            InstKind::Select { cond, on_true, on_false } => {
                out.push(&mut cond.value);
                out.push(&mut on_true.value);
                out.push(&mut on_false.value);
            }
            InstKind::Phi { incoming, .. } => out.extend(incoming.iter_mut().map(|(v, _)| v)),
            InstKind::Call(call) => {
                out.extend(call.args.iter_mut().map(|a| &mut a.value));
                for bundle in &mut call.bundles {
                    out.extend(bundle.inputs.iter_mut().map(|i| &mut i.value));
                }
            }
        }
        out
    }

    /// Every type expression written in the instruction, in textual order.
    pub fn types(&self) -> Vec<&TypeExpr> {
        let mut out = Vec::new();
        match self {
            InstKind::Alloca { ty, count, .. } => {
                out.push(ty);
                out.extend(count.iter().map(|c| &c.ty));
            }
            InstKind::Load { ty, ptr, .. } => out.extend([ty, &ptr.ty]),
            InstKind::Store { value, ptr, .. } => out.extend([&value.ty, &ptr.ty]),
            InstKind::GetElementPtr { source_ty, base, indices, .. } => {
                out.extend([source_ty, &base.ty]);
                out.extend(indices.iter().map(|i| &i.ty));
            }
            InstKind::Br { .. } | InstKind::Unreachable => {}
            InstKind::CondBr { cond, .. } => out.push(&cond.ty),
            InstKind::Ret { value } => out.extend(value.iter().map(|v| &v.ty)),
            InstKind::ICmp { ty, .. } | InstKind::FCmp { ty, .. } | InstKind::Binary { ty, .. } => out.push(ty),
            InstKind::Cast { value, to, .. } => out.extend([&value.ty, to]),
            InstKind::Select { cond, on_true, on_false } => out.extend([&cond.ty, &on_true.ty, &on_false.ty]),
            InstKind::Phi { ty, .. } => out.push(ty),
            InstKind::Call(call) => {
                out.extend(call.ret_attrs.iter().filter_map(typed_attr));
                out.push(&call.ret_ty);
                for arg in &call.args {
                    out.push(&arg.ty);
                    out.extend(arg.attrs.iter().filter_map(typed_attr));
                }
                for bundle in &call.bundles {
                    out.extend(bundle.inputs.iter().map(|i| &i.ty));
                }
            }
        }
        out
    }

    /// Mutable counterpart of [`InstKind::types`]; same order.
    pub fn types_mut(&mut self) -> Vec<&mut TypeExpr> {
        let mut out = Vec::new();
        match self {
            InstKind::Alloca { ty, count, .. } => {
                out.push(ty);
                if let Some(c) = count {
                    out.push(&mut c.ty);
                }
            }
            InstKind::Load { ty, ptr, .. } => {
                out.push(ty);
                out.push(&mut ptr.ty);
            }
            InstKind::Store { value, ptr, .. } => {
                out.push(&mut value.ty);
                out.push(&mut ptr.ty);
            }
            InstKind::GetElementPtr { source_ty, base, indices, .. } => {
                out.push(source_ty);
                out.push(&mut base.ty);
                out.extend(indices.iter_mut().map(|i| &mut i.ty));
            }
            InstKind::Br { .. } | InstKind::Unreachable => {}
            InstKind::CondBr { cond, .. } => out.push(&mut cond.ty),
            InstKind::Ret { value } => out.extend(value.iter_mut().map(|v| &mut v.ty)),
            InstKind::ICmp { ty, .. } | InstKind::FCmp { ty, .. } | InstKind::Binary { ty, .. } => out.push(ty),
            InstKind::Cast { value, to, .. } => {
                out.push(&mut value.ty);
                out.push(to);
            }
            InstKind::Select { cond, on_true, on_false } => {
                out.push(&mut cond.ty);
                out.push(&mut on_true.ty);
                out.push(&mut on_false.ty);
            }
            InstKind::Phi { ty, .. } => out.push(ty),
            InstKind::Call(call) => {
                for attr in &mut call.ret_attrs {
                    if let Attribute::Typed(_, t) = attr {
                        out.push(t);
                    }
                }
                out.push(&mut call.ret_ty);
                for arg in &mut call.args {
                    out.push(&mut arg.ty);
                    for attr in &mut arg.attrs {
                        if let Attribute::Typed(_, t) = attr {
                            out.push(t);
                        }
                    }
                }
                for bundle in &mut call.bundles {
                    out.extend(bundle.inputs.iter_mut().map(|i| &mut i.ty));
                }
            }
        }
        out
    }
}

fn typed_attr(a: &Attribute) -> Option<&TypeExpr> {
    match a {
        Attribute::Typed(_, t) => Some(t),
        _ => None,
    }
}

#[derive(Clone, Debug)]
pub struct Instruction {
    pub id: InstId,
    pub result: Option<String>,
    pub kind: InstKind,
    /// Attached metadata `!kind !N`, in source order.
    pub metadata: Vec<(String, MdId)>,
}

impl PartialEq for Instruction {
    fn eq(&self, other: &Self) -> bool {
        self.result == other.result && self.kind == other.kind && self.metadata == other.metadata
    }
}

impl Instruction {
    pub fn new(id: InstId, result: Option<String>, kind: InstKind) -> Instruction {
        Instruction { id, result, kind, metadata: Vec::new() }
    }

    pub fn opcode(&self) -> Opcode {
        self.kind.opcode()
    }

    pub fn is_terminator(&self) -> bool {
        self.kind.is_terminator()
    }

    pub fn metadata(&self, kind: &str) -> Option<MdId> {
        self.metadata.iter().find(|(k, _)| k == kind).map(|(_, id)| *id)
    }

    pub fn set_metadata(&mut self, kind: &str, id: MdId) {
        match self.metadata.iter_mut().find(|(k, _)| k == kind) {
            Some(slot) => slot.1 = id,
            None => self.metadata.push((kind.to_string(), id)),
        }
    }

    pub fn as_call(&self) -> Option<&CallInst> {
        match &self.kind {
            InstKind::Call(c) => Some(c),
            _ => None,
        }
    }
}

#[derive(Clone, Debug, PartialEq)]
pub struct BasicBlock {
    pub label: String,
    pub instructions: Vec<Instruction>,
}

impl BasicBlock {
    pub fn terminator(&self) -> Option<&Instruction> {
        self.instructions.last().filter(|i| i.is_terminator())
    }

    pub fn terminator_mut(&mut self) -> Option<&mut Instruction> {
        self.instructions.last_mut().filter(|i| i.is_terminator())
    }
}

#[derive(Clone, Debug, PartialEq)]
pub struct Param {
    pub name: Option<String>,
    pub ty: TypeExpr,
    pub attrs: Vec<Attribute>,
}

#[derive(Clone, Debug, PartialEq)]
pub struct IRFunction {
    pub name: String,
    /// Linkage, visibility, preemption and calling-convention keywords.
    pub linkage: Vec<String>,
    pub ret_attrs: Vec<Attribute>,
    pub return_type: TypeExpr,
    pub params: Vec<Param>,
    /// `unnamed_addr` / `local_unnamed_addr`
    pub addr_kind: Option<String>,
    pub fn_attrs: Vec<FnAttr>,
    pub align: Option<u64>,
    pub metadata: Vec<(String, MdId)>,
    /// Empty for declarations.
    pub blocks: Vec<BasicBlock>,
}

impl IRFunction {
    pub fn declaration(name: impl Into<String>, return_type: TypeExpr, params: Vec<TypeExpr>) -> IRFunction {
        IRFunction {
            name: name.into(),
            linkage: Vec::new(),
            ret_attrs: Vec::new(),
            return_type,
            params: params.into_iter().map(|ty| Param { name: None, ty, attrs: Vec::new() }).collect(),
            addr_kind: None,
            fn_attrs: Vec::new(),
            align: None,
            metadata: Vec::new(),
            blocks: Vec::new(),
        }
    }

    pub fn is_declaration(&self) -> bool {
        self.blocks.is_empty()
    }

    pub fn is_intrinsic(&self) -> bool {
        self.name.starts_with("llvm.")
    }

    /// Functions with internal or private linkage are not part of the
    /// kernel interface.
    pub fn is_exported(&self) -> bool {
        !self.linkage.iter().any(|k| k == "internal" || k == "private")
    }

    pub fn block(&self, label: &str) -> Option<&BasicBlock> {
        self.blocks.iter().find(|b| b.label == label)
    }

    pub fn block_index(&self, label: &str) -> Option<usize> {
        self.blocks.iter().position(|b| b.label == label)
    }

    pub fn instructions(&self) -> impl Iterator<Item = &Instruction> {
        self.blocks.iter().flat_map(|b| b.instructions.iter())
    }

    pub fn instructions_mut(&mut self) -> impl Iterator<Item = &mut Instruction> {
        self.blocks.iter_mut().flat_map(|b| b.instructions.iter_mut())
    }

    pub fn metadata(&self, kind: &str) -> Option<MdId> {
        self.metadata.iter().find(|(k, _)| k == kind).map(|(_, id)| *id)
    }

    /// Renames parameters, block labels and instruction results, and every
    /// use of them. Names missing from `map` are kept.
    pub fn rename_locals(&mut self, map: &HashMap<String, String>) {
        let apply = |name: &mut String| {
            if let Some(new) = map.get(name.as_str()) {
                *name = new.clone();
            }
        };
        for p in &mut self.params {
            if let Some(n) = &mut p.name {
                apply(n);
            }
        }
        for b in &mut self.blocks {
            apply(&mut b.label);
            for inst in &mut b.instructions {
                if let Some(r) = &mut inst.result {
                    apply(r);
                }
                for l in inst.kind.labels_mut() {
                    apply(l);
                }
                for v in inst.kind.values_mut() {
                    if let Value::Local(n) = v {
                        apply(n);
                    }
                }
            }
        }
    }
}

#[derive(Clone, Debug, PartialEq)]
pub struct GlobalDef {
    pub name: String,
    /// Linkage and related keywords preceding `global`/`constant`.
    pub keywords: Vec<String>,
    pub constant: bool,
    pub ty: TypeExpr,
    pub init: Option<Constant>,
    pub align: Option<u64>,
    pub metadata: Vec<(String, MdId)>,
}

/// `%name = type {...}`; `body` is `None` for `type opaque`.
#[derive(Clone, Debug, PartialEq)]
pub struct TypeDef {
    pub name: String,
    pub body: Option<TypeExpr>,
}

#[derive(Clone, Debug, PartialEq)]
pub enum MdOperand {
    Ref(MdId),
    Str(String),
    Value(Operand),
    Null,
}

#[derive(Clone, Debug, PartialEq)]
pub enum MdField {
    Ref(MdId),
    Str(String),
    Int(i128),
    /// Enumerators, flag expressions (`DIFlagA | DIFlagB`), `true`/`false`.
    Word(String),
    Null,
    Node(Box<SpecializedNode>),
    Tuple(Vec<MdOperand>),
}

/// `!DIxxx(key: value, ...)`; positional arguments have no key.
#[derive(Clone, Debug, PartialEq)]
pub struct SpecializedNode {
    pub name: String,
    pub fields: Vec<(Option<String>, MdField)>,
}

#[derive(Clone, Debug, PartialEq)]
pub enum MdContent {
    Tuple(Vec<MdOperand>),
    Specialized(SpecializedNode),
}

#[derive(Clone, Debug, PartialEq)]
pub struct MetadataNode {
    pub distinct: bool,
    pub content: MdContent,
}

impl MetadataNode {
    pub fn tuple(operands: Vec<MdOperand>) -> MetadataNode {
        MetadataNode { distinct: false, content: MdContent::Tuple(operands) }
    }

    /// Node ids referenced directly by this node.
    pub fn references(&self) -> Vec<MdId> {
        let mut out = Vec::new();
        match &self.content {
            MdContent::Tuple(ops) => collect_operand_refs(ops, &mut out),
            MdContent::Specialized(node) => collect_field_refs(node, &mut out),
        }
        out
    }
}

fn collect_operand_refs(ops: &[MdOperand], out: &mut Vec<MdId>) {
    out.extend(ops.iter().filter_map(|op| match op {
        MdOperand::Ref(id) => Some(*id),
        _ => None,
    }));
}

fn collect_field_refs(node: &SpecializedNode, out: &mut Vec<MdId>) {
    for (_, field) in &node.fields {
        match field {
            MdField::Ref(id) => out.push(*id),
            MdField::Node(inner) => collect_field_refs(inner, out),
            MdField::Tuple(ops) => collect_operand_refs(ops, out),
            _ => {}
        }
    }
}

#[derive(Clone, Debug, PartialEq)]
pub struct NamedMetadata {
    pub name: String,
    pub nodes: Vec<MdId>,
}

/// In-memory model of one textual IR module.
#[derive(Clone, Debug, Default)]
pub struct IRModule {
    pub source_filename: Option<String>,
    pub datalayout: Option<String>,
    pub triple: Option<String>,
    pub types: Vec<TypeDef>,
    pub globals: Vec<GlobalDef>,
    pub functions: Vec<IRFunction>,
    pub attribute_groups: BTreeMap<u32, Vec<Attribute>>,
    pub named_metadata: Vec<NamedMetadata>,
    pub metadata: BTreeMap<MdId, MetadataNode>,
    pub(crate) next_inst_id: u32,
}

impl PartialEq for IRModule {
    fn eq(&self, other: &Self) -> bool {
        self.source_filename == other.source_filename
            && self.datalayout == other.datalayout
            && self.triple == other.triple
            && self.types == other.types
            && self.globals == other.globals
            && self.functions == other.functions
            && self.attribute_groups == other.attribute_groups
            && self.named_metadata == other.named_metadata
            && self.metadata == other.metadata
    }
}

impl IRModule {
    pub fn new() -> IRModule {
        IRModule::default()
    }

    pub fn fresh_inst_id(&mut self) -> InstId {
        let id = InstId(self.next_inst_id);
        self.next_inst_id += 1;
        id
    }

    pub fn function(&self, name: &str) -> Option<&IRFunction> {
        self.functions.iter().find(|f| f.name == name)
    }

    pub fn function_mut(&mut self, name: &str) -> Option<&mut IRFunction> {
        self.functions.iter_mut().find(|f| f.name == name)
    }

    pub fn global(&self, name: &str) -> Option<&GlobalDef> {
        self.globals.iter().find(|g| g.name == name)
    }

    pub fn type_def(&self, name: &str) -> Option<&TypeDef> {
        self.types.iter().find(|t| t.name == name)
    }

    /// Declarations of `llvm.*` intrinsics.
    pub fn intrinsic_decls(&self) -> impl Iterator<Item = &IRFunction> {
        self.functions.iter().filter(|f| f.is_declaration() && f.is_intrinsic())
    }

    pub fn next_metadata_id(&self) -> MdId {
        self.metadata.keys().next_back().map_or(0, |k| k + 1)
    }

    pub fn add_metadata(&mut self, node: MetadataNode) -> MdId {
        let id = self.next_metadata_id();
        self.metadata.insert(id, node);
        id
    }

    /// Adds a declaration unless a function with that name already exists.
    pub fn ensure_declaration(&mut self, decl: IRFunction) {
        if self.function(&decl.name).is_none() {
            self.functions.push(decl);
        }
    }

    pub fn instruction_count(&self) -> usize {
        self.functions.iter().map(|f| f.instructions().count()).sum()
    }

    pub fn named_metadata(&self, name: &str) -> Option<&NamedMetadata> {
        self.named_metadata.iter().find(|n| n.name == name)
    }

    /// Ensures freshly allocated instruction ids do not collide with any
    /// already present.
    pub fn reserve_inst_ids(&mut self) {
        let max = self.functions.iter().flat_map(|f| f.instructions()).map(|i| i.id.0 + 1).max().unwrap_or(0);
        self.next_inst_id = self.next_inst_id.max(max);
    }
}
