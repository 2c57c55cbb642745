//! Checks a model against the v7 dialect definition.

use std::fmt;

use super::model::*;
use super::types::TypeExpr;
use crate::downgrade::AttributeWhitelist;

/// Machine-readable rule identifiers; tests assert on these, not on text.
#[derive(Clone, Copy, Debug, PartialEq, Eq, Hash, PartialOrd, Ord)]
pub enum Rule {
    OpaquePointer,
    Attribute,
    Metadata,
    DigitParam,
    Byval,
    Poison,
}

impl Rule {
    pub fn code(self) -> &'static str {
        match self {
            Rule::OpaquePointer => "V7-OPAQUE-PTR",
            Rule::Attribute => "V7-ATTR",
            Rule::Metadata => "V7-METADATA",
            Rule::DigitParam => "V7-DIGIT-PARAM",
            Rule::Byval => "V7-BYVAL",
            Rule::Poison => "V7-POISON",
        }
    }

    pub fn description(self) -> &'static str {
        match self {
            Rule::OpaquePointer => "opaque pointer types do not exist in the v7 dialect",
            Rule::Attribute => "attribute is not in the v7 whitelist",
            Rule::Metadata => "metadata kind is not in the v7 whitelist",
            Rule::DigitParam => "parameter names cannot begin with a number",
            Rule::Byval => "byval on a kernel-interface parameter is incompatible with the runtime",
            Rule::Poison => "poison values do not exist in the v7 dialect",
        }
    }
}

#[derive(Clone, Debug, PartialEq, Eq)]
pub struct Violation {
    pub rule: Rule,
    /// Where: `@fn`, `@fn param 2`, `@fn/block`, `!kind`, ...
    pub location: String,
    pub detail: String,
}

impl fmt::Display for Violation {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        write!(f, "[{}] {}: {} ({})", self.rule.code(), self.location, self.detail, self.rule.description())
    }
}

fn push(out: &mut Vec<Violation>, rule: Rule, location: impl Into<String>, detail: impl Into<String>) {
    out.push(Violation { rule, location: location.into(), detail: detail.into() });
}

/// Full v7 check. Returns one violation per offending occurrence.
pub fn validate_v7(m: &IRModule, wl: &AttributeWhitelist) -> Vec<Violation> {
    let mut out = structural_violations(m);
    for f in &m.functions {
        let at = format!("@{}", f.name);
        for (i, p) in f.params.iter().enumerate() {
            if let Some(name) = &p.name {
                if name.starts_with(|c: char| c.is_ascii_digit()) {
                    push(&mut out, Rule::DigitParam, format!("{at} param {i}"), format!("%{name}"));
                }
            }
            for a in &p.attrs {
                if a.is_byval() && f.is_exported() {
                    push(&mut out, Rule::Byval, format!("{at} param {i}"), a.shape());
                } else if !wl.allows_param(a) {
                    push(&mut out, Rule::Attribute, format!("{at} param {i}"), a.shape());
                }
            }
        }
        for a in &f.ret_attrs {
            if !wl.allows_param(a) {
                push(&mut out, Rule::Attribute, format!("{at} return"), a.shape());
            }
        }
        for a in &f.fn_attrs {
            if let FnAttr::Attr(a) = a {
                if !wl.allows_function(a) {
                    push(&mut out, Rule::Attribute, at.clone(), a.shape());
                }
            }
        }
        for (kind, _) in &f.metadata {
            if !wl.allows_metadata(kind) {
                push(&mut out, Rule::Metadata, at.clone(), format!("!{kind}"));
            }
        }
        for b in &f.blocks {
            for inst in &b.instructions {
                let loc = format!("{at}/{}", b.label);
                for (kind, _) in &inst.metadata {
                    if !wl.allows_metadata(kind) {
                        push(&mut out, Rule::Metadata, loc.clone(), format!("!{kind}"));
                    }
                }
                if let InstKind::Call(call) = &inst.kind {
                    for a in call.ret_attrs.iter().chain(call.args.iter().flat_map(|a| a.attrs.iter())) {
                        if !wl.allows_param(a) {
                            push(&mut out, Rule::Attribute, format!("{loc} call @{}", call.callee), a.shape());
                        }
                    }
                    for a in &call.fn_attrs {
                        if let FnAttr::Attr(a) = a {
                            if !wl.allows_function(a) {
                                push(&mut out, Rule::Attribute, format!("{loc} call @{}", call.callee), a.shape());
                            }
                        }
                    }
                }
            }
        }
    }
    for (id, attrs) in &m.attribute_groups {
        for a in attrs {
            if !wl.allows_function(a) {
                push(&mut out, Rule::Attribute, format!("#{id}"), a.shape());
            }
        }
    }
    for g in &m.globals {
        for (kind, _) in &g.metadata {
            if !wl.allows_metadata(kind) {
                push(&mut out, Rule::Metadata, format!("@{}", g.name), format!("!{kind}"));
            }
        }
    }
    for nm in &m.named_metadata {
        if !wl.allows_metadata(&nm.name) {
            push(&mut out, Rule::Metadata, "module", format!("!{}", nm.name));
        }
    }
    out
}

/// Violations that make v7 printing impossible regardless of whitelist.
pub fn structural_violations(m: &IRModule) -> Vec<Violation> {
    let mut out = Vec::new();
    let ty = |out: &mut Vec<Violation>, loc: &str, t: &TypeExpr| {
        if t.contains_opaque() {
            push(out, Rule::OpaquePointer, loc, t.to_string());
        }
    };
    for t in &m.types {
        if let Some(body) = &t.body {
            ty(&mut out, &format!("type %{}", t.name), body);
        }
    }
    for g in &m.globals {
        let loc = format!("@{}", g.name);
        ty(&mut out, &loc, &g.ty);
        if let Some(init) = &g.init {
            constant_checks(&mut out, &loc, init);
        }
    }
    for f in &m.functions {
        let at = format!("@{}", f.name);
        ty(&mut out, &format!("{at} return"), &f.return_type);
        for (i, p) in f.params.iter().enumerate() {
            let loc = format!("{at} param {i}");
            ty(&mut out, &loc, &p.ty);
            for a in &p.attrs {
                if let Attribute::Typed(_, t) = a {
                    ty(&mut out, &loc, t);
                }
            }
        }
        for b in &f.blocks {
            let loc = format!("{at}/{}", b.label);
            for inst in &b.instructions {
                for t in inst.kind.types() {
                    ty(&mut out, &loc, t);
                }
                for v in inst.kind.values() {
                    if let Value::Const(c) = v {
                        constant_checks(&mut out, &loc, c);
                    }
                }
            }
        }
    }
    for (id, node) in &m.metadata {
        if let MdContent::Tuple(ops) = &node.content {
            for op in ops {
                if let MdOperand::Value(v) = op {
                    ty(&mut out, &format!("!{id}"), &v.ty);
                }
            }
        }
    }
    out
}

fn constant_checks(out: &mut Vec<Violation>, loc: &str, c: &Constant) {
    match c {
        Constant::Poison => push(out, Rule::Poison, loc, "poison"),
        Constant::Array(elems) | Constant::Struct(elems) => {
            for e in elems {
                if e.ty.contains_opaque() {
                    push(out, Rule::OpaquePointer, loc, e.ty.to_string());
                }
                if let Value::Const(c) = &e.value {
                    constant_checks(out, loc, c);
                }
            }
        }
        _ => {}
    }
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::ir::parse_module;

    fn codes(text: &str) -> Vec<Rule> {
        let m = parse_module(text).unwrap();
        validate_v7(&m, &AttributeWhitelist::default()).into_iter().map(|v| v.rule).collect()
    }

    #[test]
    fn clean_typed_module_has_no_violations() {
        assert!(
            codes("define void @f(i32* nocapture %p) #0 {\n  ret void\n}\nattributes #0 = { nounwind }\n").is_empty()
        );
    }

    #[test]
    fn digit_param_cites_rule() {
        let m = parse_module("define void @f(i32 %0) {\n  ret void\n}\n").unwrap();
        let v = validate_v7(&m, &AttributeWhitelist::default());
        assert_eq!(v.len(), 1);
        assert_eq!(v[0].rule, Rule::DigitParam);
        assert!(v[0].to_string().contains("cannot begin with a number"));
    }

    #[test]
    fn each_violation_kind() {
        assert_eq!(codes("define void @f() mustprogress {\n  ret void\n}\n"), vec![Rule::Attribute]);
        assert_eq!(codes("define void @f(ptr %p) {\n  ret void\n}\n"), vec![Rule::OpaquePointer]);
        assert_eq!(codes("define void @f(i32* byval(i32) %p) {\n  ret void\n}\n"), vec![Rule::Byval]);
        assert_eq!(codes("define void @f() {\n  ret void, !dbg !0\n}\n!0 = !{}\n"), vec![Rule::Metadata]);
        assert_eq!(codes("define i32 @f() {\n  ret i32 poison\n}\n"), vec![Rule::Poison]);
        // Two opaque occurrences, two violations.
        assert_eq!(
            codes("define void @f(ptr %p, ptr %q) {\n  ret void\n}\n"),
            vec![Rule::OpaquePointer, Rule::OpaquePointer]
        );
    }
}
