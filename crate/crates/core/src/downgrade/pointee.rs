//! Reconstructs typed pointers from opaque-pointer IR.
//!
//! Every pointer occurrence gets a class variable whose binding is its
//! pointee type term. Hard constraints (an SSA value has one type; phi and
//! select operands agree with the result; load/store/GEP demand the pointee
//! they access) are unified transactionally: a constraint that cannot be
//! satisfied marks the classes involved as conflicted instead of failing.
//! Soft constraints (call arguments vs. callee parameters, returned values
//! vs. the function's return type) are unified afterwards and simply lose
//! when they disagree. Conflicted classes become `i8*`, and a final
//! verification inserts `bitcast`s wherever a use or a definition ends up
//! with a pointer type different from the one its position requires.

use std::collections::{HashMap, HashSet};

use thiserror::Error;

use crate::ir::{
    CastOp, Constant, FloatKind, IRFunction, IRModule, InstId, InstKind, Instruction, MdContent, MdOperand, Operand,
    TypeExpr, Value,
};

#[derive(Clone, Debug, Error, PartialEq, Eq)]
pub enum InferError {
    #[error("cannot infer the pointee type of {0}: it has no typed use (pass --default-pointee=i8 to default it)")]
    Unresolved(String),
    #[error("@{function}: {message}")]
    Malformed { function: String, message: String },
}

#[derive(Clone, Debug, Default, PartialEq, Eq)]
pub struct InferOptions {
    /// Pointee for values with no typed use; `None` makes them an error.
    pub default_pointee: Option<TypeExpr>,
}

#[derive(Clone, Debug, Default, PartialEq, Eq)]
pub struct InferReport {
    /// Opaque pointer occurrences replaced by typed pointers.
    pub pointers_typed: usize,
    pub casts_inserted: usize,
    pub intrinsics_renamed: Vec<(String, String)>,
}

type Var = usize;

#[derive(Clone, Debug, PartialEq)]
enum Term {
    Void,
    Int(u32),
    Float(FloatKind),
    Ptr(Var),
    Array(u64, Box<Term>),
    Struct(bool, Vec<Term>),
    Named(String),
    Func(Box<Term>, Vec<Term>),
    /// Pointer to the given pointee, independent of any class; only used to
    /// record what a position requires, never unified.
    PtrTo(Box<Term>),
}

enum Undo {
    Parent(Var),
    Binding(Var, Option<Term>),
    Flags(Var, bool, bool, Option<String>),
}

#[derive(Default)]
struct Solver {
    parent: Vec<Var>,
    binding: Vec<Option<Term>>,
    conflicted: Vec<bool>,
    flexible: Vec<bool>,
    witness: Vec<Option<String>>,
    trail: Vec<Undo>,
}

impl Solver {
    fn var(&mut self, flexible: bool, witness: Option<String>) -> Var {
        let v = self.parent.len();
        self.parent.push(v);
        self.binding.push(None);
        self.conflicted.push(false);
        self.flexible.push(flexible);
        self.witness.push(witness);
        v
    }

    fn find(&self, mut v: Var) -> Var {
        while self.parent[v] != v {
            v = self.parent[v];
        }
        v
    }

    fn set_binding(&mut self, r: Var, t: Option<Term>) {
        let old = std::mem::replace(&mut self.binding[r], t);
        self.trail.push(Undo::Binding(r, old));
    }

    fn union(&mut self, keep: Var, gone: Var) {
        self.trail.push(Undo::Flags(keep, self.conflicted[keep], self.flexible[keep], self.witness[keep].clone()));
        self.parent[gone] = keep;
        self.trail.push(Undo::Parent(gone));
        self.conflicted[keep] |= self.conflicted[gone];
        self.flexible[keep] &= self.flexible[gone];
        if self.witness[keep].is_none() {
            self.witness[keep] = self.witness[gone].clone();
        }
    }

    fn unify(&mut self, a: &Term, b: &Term) -> Result<(), ()> {
        match (a, b) {
            (Term::Ptr(x), Term::Ptr(y)) => self.unify_vars(*x, *y),
            (Term::Array(n, e), Term::Array(m, f)) if n == m => self.unify(e, f),
            (Term::Struct(p, fs), Term::Struct(q, gs)) if p == q && fs.len() == gs.len() => {
                fs.iter().zip(gs).try_for_each(|(f, g)| self.unify(f, g))
            }
            (Term::Func(r, ps), Term::Func(s, qs)) if ps.len() == qs.len() => {
                self.unify(r, s)?;
                ps.iter().zip(qs).try_for_each(|(p, q)| self.unify(p, q))
            }
            (Term::Void, Term::Void) => Ok(()),
            (Term::Int(x), Term::Int(y)) if x == y => Ok(()),
            (Term::Float(x), Term::Float(y)) if x == y => Ok(()),
            (Term::Named(x), Term::Named(y)) if x == y => Ok(()),
            _ => Err(()),
        }
    }

    fn unify_vars(&mut self, x: Var, y: Var) -> Result<(), ()> {
        let (rx, ry) = (self.find(x), self.find(y));
        if rx == ry {
            return Ok(());
        }
        let (bx, by) = (self.binding[rx].clone(), self.binding[ry].clone());
        self.union(rx, ry);
        match (bx, by) {
            (Some(a), Some(b)) => self.unify(&a, &b),
            (None, Some(b)) => {
                self.set_binding(rx, Some(b));
                Ok(())
            }
            _ => Ok(()),
        }
    }

    fn bind(&mut self, v: Var, t: Term) {
        let r = self.find(v);
        debug_assert!(self.binding[r].is_none());
        self.set_binding(r, Some(t));
        self.trail.clear();
    }

    /// True if the binding graph reachable from `root` has a cycle.
    fn cyclic_from(&self, root: Var) -> bool {
        fn visit(s: &Solver, t: &Term, path: &mut Vec<Var>, done: &mut HashSet<Var>) -> bool {
            match t {
                Term::Ptr(v) => {
                    let r = s.find(*v);
                    if path.contains(&r) {
                        return true;
                    }
                    if done.contains(&r) {
                        return false;
                    }
                    path.push(r);
                    let bad = s.binding[r].as_ref().is_some_and(|b| visit(s, b, path, done));
                    path.pop();
                    done.insert(r);
                    bad
                }
                Term::Array(_, e) => visit(s, e, path, done),
                Term::Struct(_, fs) => fs.iter().any(|f| visit(s, f, path, done)),
                Term::Func(r, ps) => visit(s, r, path, done) || ps.iter().any(|p| visit(s, p, path, done)),
                _ => false,
            }
        }
        visit(self, &Term::Ptr(root), &mut Vec::new(), &mut HashSet::new())
    }

    /// Unifies or leaves the solver untouched.
    fn try_unify(&mut self, a: &Term, b: &Term) -> bool {
        self.trail.clear();
        let ok = self.unify(a, b).is_ok() && {
            let touched: Vec<Var> = self
                .trail
                .iter()
                .filter_map(|u| match u {
                    Undo::Binding(v, _) | Undo::Flags(v, ..) => Some(*v),
                    Undo::Parent(_) => None,
                })
                .collect();
            !touched.iter().any(|&v| self.cyclic_from(v))
        };
        if !ok {
            while let Some(u) = self.trail.pop() {
                match u {
                    Undo::Parent(v) => self.parent[v] = v,
                    Undo::Binding(v, old) => self.binding[v] = old,
                    Undo::Flags(v, c, f, w) => {
                        self.conflicted[v] = c;
                        self.flexible[v] = f;
                        self.witness[v] = w;
                    }
                }
            }
        }
        self.trail.clear();
        ok
    }

    fn conflict(&mut self, v: Var) {
        let r = self.find(v);
        self.conflicted[r] = true;
    }

    fn is_conflicted(&self, v: Var) -> bool {
        self.conflicted[self.find(v)]
    }
}

/// Top-level pointer classes of a term (not looking through pointers).
fn top_vars(t: &Term, out: &mut Vec<Var>) {
    match t {
        Term::Ptr(v) => out.push(*v),
        Term::Array(_, e) => top_vars(e, out),
        Term::Struct(_, fs) => fs.iter().for_each(|f| top_vars(f, out)),
        _ => {}
    }
}

#[derive(Default)]
struct InstPlan {
    /// One term per entry of `InstKind::types_mut`, same order.
    slots: Vec<Term>,
    /// (index into `InstKind::values_mut`, type the position requires)
    uses: Vec<(usize, Term)>,
    /// Type the instruction itself produces, when it may differ from the
    /// type its result value is given.
    natural_def: Option<Term>,
}

struct Sig {
    ret: Term,
    params: Vec<Term>,
}

struct Infer<'m> {
    m: &'m IRModule,
    s: Solver,
    structs: HashMap<String, Term>,
    globals: HashMap<String, Term>,
    sigs: HashMap<String, Sig>,
    values: Vec<HashMap<String, Term>>,
    plans: Vec<Vec<Vec<InstPlan>>>,
    soft: Vec<(Term, Term)>,
    default_i8: bool,
}

fn malformed(f: &IRFunction, message: impl Into<String>) -> InferError {
    InferError::Malformed { function: f.name.clone(), message: message.into() }
}

impl<'m> Infer<'m> {
    fn fresh(&mut self, ty: &TypeExpr, flexible: bool, witness: Option<&str>) -> Term {
        match ty {
            TypeExpr::Void => Term::Void,
            TypeExpr::Int(w) => Term::Int(*w),
            TypeExpr::Float(k) => Term::Float(*k),
            TypeExpr::Pointer(None) => Term::Ptr(self.s.var(flexible, witness.map(str::to_string))),
            TypeExpr::Pointer(Some(p)) => {
                let v = self.s.var(flexible, witness.map(str::to_string));
                let inner = self.fresh(p, true, None);
                self.s.bind(v, inner);
                Term::Ptr(v)
            }
            TypeExpr::Array(n, e) => Term::Array(*n, Box::new(self.fresh(e, flexible, witness))),
            TypeExpr::Struct { packed, fields } => {
                Term::Struct(*packed, fields.iter().map(|f| self.fresh(f, flexible, witness)).collect())
            }
            TypeExpr::Named(n) => Term::Named(n.clone()),
            TypeExpr::Function { ret, params } => Term::Func(
                Box::new(self.fresh(ret, true, None)),
                params.iter().map(|p| self.fresh(p, true, None)).collect(),
            ),
        }
    }

    fn pointer_to(&mut self, pointee: Term) -> Term {
        let v = self.s.var(true, None);
        self.s.bind(v, pointee);
        Term::Ptr(v)
    }

    fn global_value(&mut self, name: &str) -> Option<Term> {
        if let Some(t) = self.globals.get(name).cloned() {
            return Some(self.pointer_to(t));
        }
        let sig = self.sigs.get(name)?;
        let f = Term::Func(Box::new(sig.ret.clone()), sig.params.clone());
        Some(self.pointer_to(f))
    }

    fn value_term(&mut self, fi: usize, v: &Value, ty: &TypeExpr) -> Result<Term, InferError> {
        let f = &self.m.functions[fi];
        match v {
            Value::Local(n) => {
                self.values[fi].get(n).cloned().ok_or_else(|| malformed(f, format!("use of undefined value %{n}")))
            }
            Value::Global(n) => {
                self.global_value(n).ok_or_else(|| malformed(f, format!("use of undefined global @{n}")))
            }
            Value::Const(_) => Ok(self.fresh(ty, true, None)),
        }
    }

    /// `actual` must satisfy `required`; a failure marks `actual`'s classes.
    fn demand(&mut self, actual: &Term, required: &Term) {
        let mut vars = Vec::new();
        top_vars(actual, &mut vars);
        if vars.iter().any(|&v| self.s.is_conflicted(v)) {
            return;
        }
        if !self.s.try_unify(actual, required) {
            for v in vars {
                self.s.conflict(v);
            }
        }
    }

    /// Both sides describe the same value; a failure marks both.
    fn same(&mut self, a: &Term, b: &Term) {
        let mut vars = Vec::new();
        top_vars(a, &mut vars);
        top_vars(b, &mut vars);
        if !self.s.try_unify(a, b) {
            for v in vars {
                self.s.conflict(v);
            }
        }
    }

    fn struct_body(&self, name: &str) -> Option<Term> {
        self.structs.get(name).cloned()
    }

    fn indexed(&self, f: &IRFunction, mut t: Term, indices: &[Operand]) -> Result<Term, InferError> {
        for idx in indices.iter().skip(1) {
            if let Term::Named(n) = &t {
                t = self.struct_body(n).ok_or_else(|| malformed(f, format!("GEP into opaque type %{n}")))?;
            }
            t = match t {
                Term::Array(_, e) => *e,
                Term::Struct(_, fields) => {
                    let i = idx.value.as_int().ok_or_else(|| malformed(f, "non-constant struct index in GEP"))?;
                    fields.get(i as usize).cloned().ok_or_else(|| malformed(f, "struct index out of range in GEP"))?
                }
                _ => return Err(malformed(f, "GEP index into a non-aggregate type")),
            };
        }
        Ok(t)
    }

    fn collect(&mut self) -> Result<(), InferError> {
        let m = self.m;
        for t in &m.types {
            if let Some(body) = &t.body {
                let term = self.fresh(body, true, None);
                self.structs.insert(t.name.clone(), term);
            }
        }
        for g in &m.globals {
            let term = self.fresh(&g.ty, true, None);
            self.globals.insert(g.name.clone(), term);
        }
        for f in &m.functions {
            let mut values = HashMap::new();
            let ret = self.fresh(&f.return_type, true, None);
            let mut params = Vec::new();
            for p in &f.params {
                let t = match (&p.name, f.is_declaration()) {
                    (Some(n), false) => {
                        let t = self.fresh(&p.ty, false, Some(&format!("%{n} in @{}", f.name)));
                        values.insert(n.clone(), t.clone());
                        t
                    }
                    _ => self.fresh(&p.ty, true, None),
                };
                params.push(t);
            }
            for inst in f.instructions() {
                let Some(r) = &inst.result else { continue };
                let ty = match &inst.kind {
                    InstKind::Alloca { .. } | InstKind::GetElementPtr { .. } => TypeExpr::opaque_ptr(),
                    InstKind::Load { ty, .. } | InstKind::Phi { ty, .. } | InstKind::Binary { ty, .. } => ty.clone(),
                    InstKind::Call(c) => c.ret_ty.clone(),
                    InstKind::Select { on_true, .. } => on_true.ty.clone(),
                    InstKind::Cast { to, .. } => to.clone(),
                    InstKind::ICmp { .. } | InstKind::FCmp { .. } => TypeExpr::i1(),
                    _ => return Err(malformed(f, format!("%{r} names an instruction without a value"))),
                };
                let t = self.fresh(&ty, false, Some(&format!("%{r} in @{}", f.name)));
                values.insert(r.clone(), t);
            }
            self.values.push(values);
            self.sigs.insert(f.name.clone(), Sig { ret, params });
        }
        Ok(())
    }

    fn constrain(&mut self) -> Result<(), InferError> {
        let m = self.m;
        for (fi, f) in m.functions.iter().enumerate() {
            let mut fplans = Vec::new();
            for b in &f.blocks {
                let mut bplans = Vec::new();
                for inst in &b.instructions {
                    bplans.push(self.constrain_inst(fi, f, inst)?);
                }
                fplans.push(bplans);
            }
            self.plans.push(fplans);
        }
        for (a, b) in std::mem::take(&mut self.soft) {
            let mut vars = Vec::new();
            top_vars(&a, &mut vars);
            top_vars(&b, &mut vars);
            if !vars.iter().any(|&v| self.s.is_conflicted(v)) {
                self.s.try_unify(&a, &b);
            }
        }
        Ok(())
    }

    fn constrain_inst(&mut self, fi: usize, f: &IRFunction, inst: &Instruction) -> Result<InstPlan, InferError> {
        let res = inst.result.as_ref().map(|r| self.values[fi][r].clone());
        let mut plan = InstPlan::default();
        match &inst.kind {
            InstKind::Alloca { ty, count, .. } => {
                let at = self.fresh(ty, true, None);
                plan.slots.push(at.clone());
                if let Some(c) = count {
                    let ct = self.fresh(&c.ty, true, None);
                    plan.slots.push(ct);
                }
                let natural = self.pointer_to(at.clone());
                if let Some(r) = &res {
                    self.same(r, &natural);
                }
                plan.natural_def = Some(Term::PtrTo(Box::new(at)));
            }
            InstKind::Load { ty, ptr, .. } => {
                let lt = match &res {
                    Some(r) => r.clone(),
                    None => self.fresh(ty, true, None),
                };
                let required = self.pointer_to(lt.clone());
                let actual = self.value_term(fi, &ptr.value, &ptr.ty)?;
                self.demand(&actual, &required);
                let required = Term::PtrTo(Box::new(lt.clone()));
                plan.slots = vec![lt, required.clone()];
                plan.uses.push((0, required));
            }
            InstKind::Store { value, ptr, .. } => {
                let vt = self.value_term(fi, &value.value, &value.ty)?;
                let required = self.pointer_to(vt.clone());
                let actual = self.value_term(fi, &ptr.value, &ptr.ty)?;
                self.demand(&actual, &required);
                let required = Term::PtrTo(Box::new(vt.clone()));
                plan.slots = vec![vt, required.clone()];
                plan.uses.push((1, required));
            }
            InstKind::GetElementPtr { source_ty, base, indices, .. } => {
                let st = self.fresh(source_ty, true, None);
                let required = self.pointer_to(st.clone());
                let actual = self.value_term(fi, &base.value, &base.ty)?;
                self.demand(&actual, &required);
                let required = Term::PtrTo(Box::new(st.clone()));
                plan.slots = vec![st.clone(), required.clone()];
                for i in indices {
                    let t = self.fresh(&i.ty, true, None);
                    plan.slots.push(t);
                }
                plan.uses.push((0, required));
                let indexed = self.indexed(f, st, indices)?;
                let natural = self.pointer_to(indexed.clone());
                if let Some(r) = &res {
                    self.same(r, &natural);
                }
                plan.natural_def = Some(Term::PtrTo(Box::new(indexed)));
            }
            InstKind::Br { .. } | InstKind::Unreachable => {}
            InstKind::CondBr { cond, .. } => plan.slots.push(self.fresh(&cond.ty, true, None)),
            InstKind::Ret { value } => {
                if let Some(v) = value {
                    let ret = self.sigs[&f.name].ret.clone();
                    let actual = self.value_term(fi, &v.value, &v.ty)?;
                    self.soft.push((actual, ret.clone()));
                    plan.slots.push(ret.clone());
                    plan.uses.push((0, ret));
                }
            }
            InstKind::ICmp { ty, lhs, rhs, .. } => {
                let a = self.value_term(fi, lhs, ty)?;
                let b = self.value_term(fi, rhs, ty)?;
                self.same(&a, &b);
                plan.slots.push(a.clone());
                plan.uses.push((0, a.clone()));
                plan.uses.push((1, a));
            }
            InstKind::FCmp { ty, .. } | InstKind::Binary { ty, .. } => plan.slots.push(self.fresh(ty, true, None)),
            InstKind::Cast { value, to, .. } => {
                let a = self.value_term(fi, &value.value, &value.ty)?;
                let to = match &res {
                    Some(r) => r.clone(),
                    None => self.fresh(to, true, None),
                };
                plan.slots = vec![a, to];
            }
            InstKind::Select { cond, on_true, on_false } => {
                let r = match &res {
                    Some(r) => r.clone(),
                    None => self.fresh(&on_true.ty, true, None),
                };
                let a = self.value_term(fi, &on_true.value, &on_true.ty)?;
                let b = self.value_term(fi, &on_false.value, &on_false.ty)?;
                self.same(&a, &r);
                self.same(&b, &r);
                let ct = self.fresh(&cond.ty, true, None);
                plan.slots = vec![ct, r.clone(), r.clone()];
                plan.uses.push((1, r.clone()));
                plan.uses.push((2, r));
            }
            InstKind::Phi { ty, incoming } => {
                let r = match &res {
                    Some(r) => r.clone(),
                    None => self.fresh(ty, true, None),
                };
                for (i, (v, _)) in incoming.iter().enumerate() {
                    let a = self.value_term(fi, v, ty)?;
                    self.same(&a, &r);
                    plan.uses.push((i, r.clone()));
                }
                plan.slots.push(r);
            }
            InstKind::Call(call) => {
                let sig = self
                    .sigs
                    .get(&call.callee)
                    .filter(|s| s.params.len() == call.args.len())
                    .map(|s| (s.ret.clone(), s.params.clone()));
                for a in &call.ret_attrs {
                    if let crate::ir::Attribute::Typed(_, t) = a {
                        let t = self.fresh(t, true, None);
                        plan.slots.push(t);
                    }
                }
                let ret_slot = match (&sig, &res) {
                    (Some((ret, _)), Some(r)) => {
                        self.soft.push((r.clone(), ret.clone()));
                        plan.natural_def = Some(ret.clone());
                        ret.clone()
                    }
                    (Some((ret, _)), None) => ret.clone(),
                    (None, Some(r)) => r.clone(),
                    (None, None) => self.fresh(&call.ret_ty, true, None),
                };
                plan.slots.push(ret_slot);
                for (i, arg) in call.args.iter().enumerate() {
                    let actual = self.value_term(fi, &arg.value, &arg.ty)?;
                    let required = match &sig {
                        Some((_, params)) => {
                            self.soft.push((actual.clone(), params[i].clone()));
                            params[i].clone()
                        }
                        None => actual,
                    };
                    plan.slots.push(required.clone());
                    plan.uses.push((i, required));
                    for a in &arg.attrs {
                        if let crate::ir::Attribute::Typed(_, t) = a {
                            let t = self.fresh(t, true, None);
                            plan.slots.push(t);
                        }
                    }
                }
                for bundle in &call.bundles {
                    for input in &bundle.inputs {
                        let t = self.value_term(fi, &input.value, &input.ty)?;
                        plan.slots.push(t);
                    }
                }
            }
        }
        Ok(plan)
    }

    fn resolve_var(&self, v: Var, depth: usize) -> Result<TypeExpr, InferError> {
        let r = self.s.find(v);
        if self.s.conflicted[r] || depth > 64 {
            return Ok(TypeExpr::i8());
        }
        match &self.s.binding[r] {
            Some(t) => self.resolve(t, depth + 1),
            None if self.s.flexible[r] || self.default_i8 => Ok(TypeExpr::i8()),
            None => Err(InferError::Unresolved(self.s.witness[r].clone().unwrap_or_else(|| "a pointer".into()))),
        }
    }

    fn resolve(&self, t: &Term, depth: usize) -> Result<TypeExpr, InferError> {
        Ok(match t {
            Term::Void => TypeExpr::Void,
            Term::Int(w) => TypeExpr::Int(*w),
            Term::Float(k) => TypeExpr::Float(*k),
            Term::Ptr(v) => TypeExpr::ptr_to(self.resolve_var(*v, depth)?),
            Term::PtrTo(p) => TypeExpr::ptr_to(self.resolve(p, depth)?),
            Term::Array(n, e) => TypeExpr::Array(*n, Box::new(self.resolve(e, depth)?)),
            Term::Struct(packed, fs) => TypeExpr::Struct {
                packed: *packed,
                fields: fs.iter().map(|f| self.resolve(f, depth)).collect::<Result<_, _>>()?,
            },
            Term::Named(n) => TypeExpr::Named(n.clone()),
            Term::Func(r, ps) => TypeExpr::Function {
                ret: Box::new(self.resolve(r, depth)?),
                params: ps.iter().map(|p| self.resolve(p, depth)).collect::<Result<_, _>>()?,
            },
        })
    }
}

fn count_opaque(t: &TypeExpr) -> usize {
    match t {
        TypeExpr::Pointer(None) => 1,
        TypeExpr::Pointer(Some(p)) => count_opaque(p),
        TypeExpr::Array(_, e) => count_opaque(e),
        TypeExpr::Struct { fields, .. } => fields.iter().map(count_opaque).sum(),
        TypeExpr::Function { ret, params } => count_opaque(ret) + params.iter().map(count_opaque).sum::<usize>(),
        _ => 0,
    }
}

/// Replaces leftover opaque pointers (in positions no constraint reaches)
/// with `i8*`.
fn close_type(t: &TypeExpr) -> TypeExpr {
    match t {
        TypeExpr::Pointer(None) => TypeExpr::ptr_to(TypeExpr::i8()),
        TypeExpr::Pointer(Some(p)) => TypeExpr::ptr_to(close_type(p)),
        TypeExpr::Array(n, e) => TypeExpr::Array(*n, Box::new(close_type(e))),
        TypeExpr::Struct { packed, fields } => {
            TypeExpr::Struct { packed: *packed, fields: fields.iter().map(close_type).collect() }
        }
        TypeExpr::Function { ret, params } => {
            TypeExpr::Function { ret: Box::new(close_type(ret)), params: params.iter().map(close_type).collect() }
        }
        other => other.clone(),
    }
}

/// LLVM's overloaded-intrinsic type suffix.
pub fn mangle_type(t: &TypeExpr) -> String {
    match t {
        TypeExpr::Void => "isVoid".into(),
        TypeExpr::Int(w) => format!("i{w}"),
        TypeExpr::Float(k) => match k {
            FloatKind::Half => "f16".into(),
            FloatKind::Float => "f32".into(),
            FloatKind::Double => "f64".into(),
            FloatKind::X86Fp80 => "f80".into(),
            FloatKind::Fp128 => "f128".into(),
        },
        TypeExpr::Pointer(None) => "p0".into(),
        TypeExpr::Pointer(Some(p)) => format!("p0{}", mangle_type(p)),
        TypeExpr::Array(n, e) => format!("a{n}{}", mangle_type(e)),
        TypeExpr::Struct { fields, .. } => format!("sl_{}s", fields.iter().map(mangle_type).collect::<String>()),
        TypeExpr::Named(n) => format!("s_{n}"),
        TypeExpr::Function { ret, params } => {
            format!("f_{}{}f", mangle_type(ret), params.iter().map(mangle_type).collect::<String>())
        }
    }
}

/// Assigns element types of an aggregate constant from its (typed) type.
fn retype_constant(c: &mut Constant, ty: &TypeExpr, structs: &HashMap<String, TypeExpr>) {
    let fields: Vec<TypeExpr> = match (&mut *c, ty) {
        (Constant::Array(elems), TypeExpr::Array(_, e)) => {
            for el in elems.iter_mut() {
                el.ty = (**e).clone();
                if let Value::Const(inner) = &mut el.value {
                    retype_constant(inner, e, structs);
                }
            }
            return;
        }
        (Constant::Struct(_), TypeExpr::Struct { fields, .. }) => fields.clone(),
        (Constant::Struct(_), TypeExpr::Named(n)) => match structs.get(n) {
            Some(TypeExpr::Struct { fields, .. }) => fields.clone(),
            _ => return,
        },
        _ => return,
    };
    if let Constant::Struct(elems) = c {
        for (el, fty) in elems.iter_mut().zip(fields) {
            if let Value::Const(inner) = &mut el.value {
                retype_constant(inner, &fty, structs);
            }
            el.ty = fty;
        }
    }
}

struct CastNamer {
    taken: HashSet<String>,
    next: usize,
}

impl CastNamer {
    fn new(f: &IRFunction) -> CastNamer {
        let mut taken: HashSet<String> = f.params.iter().filter_map(|p| p.name.clone()).collect();
        for b in &f.blocks {
            taken.insert(b.label.clone());
            taken.extend(b.instructions.iter().filter_map(|i| i.result.clone()));
        }
        CastNamer { taken, next: 0 }
    }

    fn fresh(&mut self, base: &str) -> String {
        let base = if base.bytes().all(|b| b.is_ascii_digit()) { format!("v{base}") } else { base.to_string() };
        loop {
            let name = format!("{base}.c{}", self.next);
            self.next += 1;
            if self.taken.insert(name.clone()) {
                return name;
            }
        }
    }
}

fn bitcast(id: InstId, result: String, from: TypeExpr, value: Value, to: TypeExpr) -> Instruction {
    Instruction::new(id, Some(result), InstKind::Cast { op: CastOp::BitCast, value: Operand::new(from, value), to })
}

fn value_base(v: &Value) -> &str {
    match v {
        Value::Local(n) | Value::Global(n) => n,
        Value::Const(_) => "const",
    }
}

pub fn infer_pointee_types(m: &mut IRModule, opts: &InferOptions) -> Result<InferReport, InferError> {
    let mut report = InferReport::default();
    let (struct_types, global_types, fn_types, plans, values) = {
        let mut inf = Infer {
            m,
            s: Solver::default(),
            structs: HashMap::new(),
            globals: HashMap::new(),
            sigs: HashMap::new(),
            values: Vec::new(),
            plans: Vec::new(),
            soft: Vec::new(),
            default_i8: opts.default_pointee.is_some(),
        };
        inf.collect()?;
        inf.constrain()?;

        let mut struct_types = HashMap::new();
        for (name, t) in &inf.structs {
            struct_types.insert(name.clone(), inf.resolve(t, 0)?);
        }
        let mut global_types = HashMap::new();
        for (name, t) in &inf.globals {
            global_types.insert(name.clone(), inf.resolve(t, 0)?);
        }
        let mut fn_types = HashMap::new();
        for f in &m.functions {
            let sig = &inf.sigs[&f.name];
            let ret = inf.resolve(&sig.ret, 0)?;
            let params = sig.params.iter().map(|p| inf.resolve(p, 0)).collect::<Result<Vec<_>, _>>()?;
            fn_types.insert(f.name.clone(), (ret, params));
        }
        let mut values = Vec::new();
        for vmap in &inf.values {
            let mut out = HashMap::new();
            for (name, t) in vmap {
                out.insert(name.clone(), inf.resolve(t, 0)?);
            }
            values.push(out);
        }
        let mut plans = Vec::new();
        for fplans in &inf.plans {
            let mut fp = Vec::new();
            for bplans in fplans {
                let mut bp = Vec::new();
                for p in bplans {
                    let slots = p.slots.iter().map(|t| inf.resolve(t, 0)).collect::<Result<Vec<_>, _>>()?;
                    let uses = p
                        .uses
                        .iter()
                        .map(|(i, t)| inf.resolve(t, 0).map(|t| (*i, t)))
                        .collect::<Result<Vec<_>, _>>()?;
                    let natural = p.natural_def.as_ref().map(|t| inf.resolve(t, 0)).transpose()?;
                    bp.push((slots, uses, natural));
                }
                fp.push(bp);
            }
            plans.push(fp);
        }
        (struct_types, global_types, fn_types, plans, values)
    };

    // Counting happens before rewriting so it reflects the input.
    for t in &m.types {
        report.pointers_typed += t.body.as_ref().map_or(0, count_opaque);
    }
    for t in &mut m.types {
        if let Some(resolved) = struct_types.get(&t.name) {
            t.body = Some(resolved.clone());
        }
    }
    for g in &mut m.globals {
        report.pointers_typed += count_opaque(&g.ty);
        g.ty = global_types[&g.name].clone();
        if let Some(init) = &mut g.init {
            retype_constant(init, &g.ty, &struct_types);
        }
    }
    let global_actual = |name: &str| -> Option<TypeExpr> {
        if let Some(t) = global_types.get(name) {
            return Some(TypeExpr::ptr_to(t.clone()));
        }
        fn_types.get(name).map(|(ret, params)| {
            TypeExpr::ptr_to(TypeExpr::Function { ret: Box::new(ret.clone()), params: params.clone() })
        })
    };

    m.reserve_inst_ids();
    let mut next_id = m.next_inst_id;
    let mut fresh_id = || {
        let id = InstId(next_id);
        next_id += 1;
        id
    };

    for (fi, f) in m.functions.iter_mut().enumerate() {
        let (ret, params) = &fn_types[&f.name];
        report.pointers_typed += count_opaque(&f.return_type);
        f.return_type = ret.clone();
        for (p, t) in f.params.iter_mut().zip(params) {
            report.pointers_typed += count_opaque(&p.ty);
            p.ty = t.clone();
            for a in &mut p.attrs {
                if let crate::ir::Attribute::Typed(_, t) = a {
                    report.pointers_typed += count_opaque(t);
                    *t = close_type(t);
                }
            }
        }
        for a in &mut f.ret_attrs {
            if let crate::ir::Attribute::Typed(_, t) = a {
                *t = close_type(t);
            }
        }
        if f.is_declaration() {
            continue;
        }
        let vtypes = &values[fi];
        let actual_of = |v: &Value| -> Option<TypeExpr> {
            match v {
                Value::Local(n) => vtypes.get(n).cloned(),
                Value::Global(n) => global_actual(n),
                Value::Const(_) => None,
            }
        };
        let mut namer = CastNamer::new(f);
        let fname = f.name.clone();
        let mismatch = |actual: &TypeExpr, required: &TypeExpr| -> Result<bool, InferError> {
            if actual == required {
                Ok(false)
            } else if actual.is_pointer() && required.is_pointer() {
                Ok(true)
            } else {
                Err(InferError::Malformed {
                    function: fname.clone(),
                    message: format!("type mismatch: {actual} used where {required} is required"),
                })
            }
        };

        // Phi operands are cast at the end of the incoming block.
        let mut edge_casts: HashMap<String, Vec<Instruction>> = HashMap::new();
        let mut edge_seen: HashMap<(String, String, String), String> = HashMap::new();
        for (bi, b) in f.blocks.iter_mut().enumerate() {
            for (ii, inst) in b.instructions.iter_mut().enumerate() {
                let InstKind::Phi { incoming, .. } = &mut inst.kind else { continue };
                let (_, uses, _) = &plans[fi][bi][ii];
                for (vi, required) in uses {
                    let (v, pred) = &mut incoming[*vi];
                    let Some(actual) = actual_of(v) else { continue };
                    if !mismatch(&actual, required)? {
                        continue;
                    }
                    let key = (pred.clone(), format!("{v:?}"), required.to_string());
                    let name = match edge_seen.get(&key) {
                        Some(n) => n.clone(),
                        None => {
                            let n = namer.fresh(value_base(v));
                            edge_casts.entry(pred.clone()).or_default().push(bitcast(
                                fresh_id(),
                                n.clone(),
                                actual,
                                v.clone(),
                                required.clone(),
                            ));
                            report.casts_inserted += 1;
                            edge_seen.insert(key, n.clone());
                            n
                        }
                    };
                    *v = Value::Local(name);
                }
            }
        }

        for (bi, b) in f.blocks.iter_mut().enumerate() {
            let old = std::mem::take(&mut b.instructions);
            let mut out = Vec::with_capacity(old.len());
            for (ii, mut inst) in old.into_iter().enumerate() {
                let (slots, uses, natural) = &plans[fi][bi][ii];
                if !matches!(inst.kind, InstKind::Phi { .. }) {
                    let mut local: HashMap<(String, String), String> = HashMap::new();
                    let mut vals = inst.kind.values_mut();
                    for (vi, required) in uses {
                        let v = &mut *vals[*vi];
                        let Some(actual) = actual_of(v) else { continue };
                        if !mismatch(&actual, required)? {
                            continue;
                        }
                        let key = (format!("{v:?}"), required.to_string());
                        let name = match local.get(&key) {
                            Some(n) => n.clone(),
                            None => {
                                let n = namer.fresh(value_base(v));
                                out.push(bitcast(fresh_id(), n.clone(), actual, v.clone(), required.clone()));
                                report.casts_inserted += 1;
                                local.insert(key, n.clone());
                                n
                            }
                        };
                        *v = Value::Local(name);
                    }
                }
                let mut types = inst.kind.types_mut();
                debug_assert_eq!(types.len(), slots.len(), "{:?}", inst.kind.opcode());
                for (t, resolved) in types.iter_mut().zip(slots) {
                    report.pointers_typed += count_opaque(t);
                    **t = resolved.clone();
                }
                let mut def_cast = None;
                if let (Some(natural), Some(result)) = (natural, inst.result.clone()) {
                    let class = vtypes[&result].clone();
                    if mismatch(natural, &class)? {
                        let renamed = namer.fresh(&result);
                        inst.result = Some(renamed.clone());
                        def_cast = Some(bitcast(fresh_id(), result, natural.clone(), Value::Local(renamed), class));
                        report.casts_inserted += 1;
                    }
                }
                out.push(inst);
                out.extend(def_cast);
            }
            if let Some(casts) = edge_casts.remove(&b.label) {
                let term = out.pop().expect("block has a terminator");
                out.extend(casts);
                out.push(term);
            }
            b.instructions = out;
        }
    }

    for node in m.metadata.values_mut() {
        if let MdContent::Tuple(ops) = &mut node.content {
            for op in ops {
                if let MdOperand::Value(o) = op {
                    report.pointers_typed += count_opaque(&o.ty);
                    o.ty = match &o.value {
                        Value::Global(n) => global_actual(n).unwrap_or_else(|| close_type(&o.ty)),
                        _ => close_type(&o.ty),
                    };
                }
            }
        }
    }

    m.next_inst_id = next_id;
    report.intrinsics_renamed = rename_intrinsics(m);
    Ok(report)
}

/// `llvm.foo.p0.p0` declarations get their `p0` segments replaced with the
/// mangled typed pointer of the corresponding pointer parameter.
fn rename_intrinsics(m: &mut IRModule) -> Vec<(String, String)> {
    let mut renames = Vec::new();
    let existing: HashSet<String> = m.functions.iter().map(|f| f.name.clone()).collect();
    for f in m.functions.iter_mut().filter(|f| f.is_declaration() && f.is_intrinsic()) {
        let mut ptrs = Vec::new();
        if f.return_type.is_pointer() {
            ptrs.push(f.return_type.clone());
        }
        ptrs.extend(f.params.iter().filter(|p| p.ty.is_pointer()).map(|p| p.ty.clone()));
        let mut ptrs = ptrs.into_iter();
        let mut changed = false;
        let segments: Vec<String> = f
            .name
            .split('.')
            .map(|seg| {
                if seg == "p0" {
                    if let Some(p) = ptrs.next() {
                        changed = true;
                        return mangle_type(&p);
                    }
                }
                seg.to_string()
            })
            .collect();
        let new = segments.join(".");
        if changed && new != f.name && !existing.contains(&new) {
            renames.push((f.name.clone(), new.clone()));
            f.name = new;
        }
    }
    if !renames.is_empty() {
        let map: HashMap<&str, &str> = renames.iter().map(|(a, b)| (a.as_str(), b.as_str())).collect();
        for f in &mut m.functions {
            for inst in f.instructions_mut() {
                if let InstKind::Call(c) = &mut inst.kind {
                    if let Some(new) = map.get(c.callee.as_str()) {
                        c.callee = new.to_string();
                    }
                }
            }
        }
    }
    renames
}

#[cfg(test)]
fn find_inst(blocks: &[crate::ir::BasicBlock], pred: impl Fn(&Instruction) -> bool) -> Vec<&Instruction> {
    blocks.iter().flat_map(|b| b.instructions.iter()).filter(|i| pred(i)).collect()
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::ir::{parse_module, print_module, structural_violations, Dialect, Opcode};

    fn infer(text: &str) -> (IRModule, InferReport) {
        let mut m = parse_module(text).unwrap();
        let r = infer_pointee_types(&mut m, &InferOptions::default()).unwrap();
        assert!(structural_violations(&m).is_empty(), "{:?}", structural_violations(&m));
        (m, r)
    }

    #[test]
    fn single_load_forces_pointee() {
        let (m, r) = infer("define i32 @f(ptr %p) {\n  %v = load i32, ptr %p\n  ret i32 %v\n}\n");
        assert_eq!(m.functions[0].params[0].ty.to_string(), "i32*");
        assert_eq!(r.casts_inserted, 0);
    }

    #[test]
    fn typed_module_is_identity() {
        let text =
            "define i32 @f(i32* %p) {\n  %v = load i32, i32* %p\n  %q = bitcast i32* %p to i8*\n  ret i32 %v\n}\n";
        let before = parse_module(text).unwrap();
        let (after, r) = infer(text);
        assert_eq!(before, after);
        assert_eq!(r, InferReport::default());
    }

    #[test]
    fn conflicting_uses_become_i8_with_two_casts() {
        let (m, r) =
            infer("define void @f(ptr %p) {\n  %v = load i32, ptr %p\n  store float 1.0, ptr %p\n  ret void\n}\n");
        let f = &m.functions[0];
        assert_eq!(f.params[0].ty.to_string(), "i8*");
        assert_eq!(r.casts_inserted, 2);
        let casts = find_inst(&f.blocks, |i| i.opcode() == Opcode::Cast(CastOp::BitCast));
        assert_eq!(casts.len(), 2);
        let text = print_module(&m, Dialect::V7).unwrap();
        assert!(text.contains("bitcast i8* %p to i32*"), "{text}");
        assert!(text.contains("bitcast i8* %p to float*"), "{text}");
    }

    #[test]
    fn unresolved_pointer_is_an_error_unless_defaulted() {
        let text = "define void @f(ptr %p) {\n  ret void\n}\n";
        let mut m = parse_module(text).unwrap();
        let err = infer_pointee_types(&mut m, &InferOptions::default()).unwrap_err();
        assert_eq!(err, InferError::Unresolved("%p in @f".into()));
        let mut m = parse_module(text).unwrap();
        infer_pointee_types(&mut m, &InferOptions { default_pointee: Some(TypeExpr::i8()) }).unwrap();
        assert_eq!(m.functions[0].params[0].ty.to_string(), "i8*");
    }

    #[test]
    fn alloca_gep_phi_and_calls() {
        let text = r#"
declare void @llvm.memcpy.p0.p0.i64(ptr, ptr, i64, i1)
define void @helper(ptr %x) {
  store double 0.0, ptr %x
  ret void
}
define void @k(ptr %a, i64 %n) {
entry:
  %buf = alloca [8 x double], align 8
  br label %loop
loop:
  %i = phi i64 [ 0, %entry ], [ %i.next, %loop ]
  %p = getelementptr double, ptr %a, i64 %i
  call void @helper(ptr %p)
  %i.next = add i64 %i, 1
  %c = icmp slt i64 %i.next, %n
  br i1 %c, label %loop, label %done
done:
  call void @llvm.memcpy.p0.p0.i64(ptr %buf, ptr %a, i64 64, i1 false)
  call void @llvm.memcpy.p0.p0.i64(ptr %a, ptr %buf, i64 64, i1 false)
  ret void
}
"#;
        let (m, r) = infer(text);
        let k = m.function("k").unwrap();
        assert_eq!(k.params[0].ty.to_string(), "double*");
        // The first call site fixes the intrinsic's signature...
        assert!(m.function("llvm.memcpy.p0a8f64.p0f64.i64").is_some());
        assert_eq!(r.intrinsics_renamed.len(), 1);
        let out = print_module(&m, Dialect::V7).unwrap();
        // ...and the swapped second call needs casts on both arguments.
        assert!(out.contains("bitcast [8 x double]* %buf to double*"), "{out}");
        assert!(out.contains("bitcast double* %a to [8 x double]*"), "{out}");
        assert_eq!(r.casts_inserted, 2);
        assert!(reparse_ok(&out));
    }

    #[test]
    fn pointer_to_pointer_and_globals() {
        let text = r#"
@gp = global ptr null
@arr = global [4 x i32] zeroinitializer
define i32 @f(ptr %pp) {
  %p = load ptr, ptr %pp
  %v = load i32, ptr %p
  store ptr @arr, ptr @gp
  ret i32 %v
}
"#;
        let (m, _) = infer(text);
        assert_eq!(m.function("f").unwrap().params[0].ty.to_string(), "i32**");
        assert_eq!(m.global("gp").unwrap().ty.to_string(), "[4 x i32]*");
    }

    #[test]
    fn phi_operand_cast_goes_to_predecessor() {
        let text = r#"
define i32 @f(i1 %c, ptr %a, ptr %b) {
entry:
  %x = load i32, ptr %a
  %y = load float, ptr %b
  br i1 %c, label %l, label %r
l:
  br label %j
r:
  br label %j
j:
  %p = phi ptr [ %a, %l ], [ %b, %r ]
  %z = load i16, ptr %p
  ret i32 %x
}
"#;
        let (m, r) = infer(text);
        assert!(r.casts_inserted >= 1);
        let out = print_module(&m, Dialect::V7).unwrap();
        assert!(reparse_ok(&out), "{out}");
        let f = m.function("f").unwrap();
        for b in &f.blocks {
            let t = b.instructions.last().unwrap();
            assert!(t.is_terminator());
        }
    }

    #[test]
    fn mangling() {
        assert_eq!(mangle_type(&TypeExpr::ptr_to(TypeExpr::i32())), "p0i32");
        assert_eq!(mangle_type(&TypeExpr::ptr_to(TypeExpr::Float(FloatKind::Double))), "p0f64");
        assert_eq!(mangle_type(&TypeExpr::ptr_to(TypeExpr::ptr_to(TypeExpr::i8()))), "p0p0i8");
    }

    fn reparse_ok(text: &str) -> bool {
        parse_module(text).is_ok()
    }
}
