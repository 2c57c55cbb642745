use std::collections::BTreeMap;
use std::fmt;

use crate::ir::{attribute_text, Attribute, FnAttr, IRModule, InstKind};

use super::AttributeWhitelist;

#[derive(Clone, Debug, PartialEq, Eq)]
pub enum AttrPosition {
    Return,
    Param(usize),
    Function,
    CallReturn {
        callee: String,
    },
    CallArg {
        callee: String,
        index: usize,
    },
    CallFunction {
        callee: String,
    },
    /// Attribute group nobody references.
    Group(u32),
}

impl fmt::Display for AttrPosition {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        match self {
            AttrPosition::Return => f.write_str("return"),
            AttrPosition::Param(i) => write!(f, "param {i}"),
            AttrPosition::Function => f.write_str("function"),
            AttrPosition::CallReturn { callee } => write!(f, "call @{callee} return"),
            AttrPosition::CallArg { callee, index } => write!(f, "call @{callee} arg {index}"),
            AttrPosition::CallFunction { callee } => write!(f, "call @{callee}"),
            AttrPosition::Group(id) => write!(f, "group #{id}"),
        }
    }
}

/// One removed attribute: (function, position, attribute).
#[derive(Clone, Debug, PartialEq, Eq)]
pub struct AttributeRemoval {
    pub function: String,
    pub position: AttrPosition,
    pub attribute: String,
}

impl fmt::Display for AttributeRemoval {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        write!(f, "@{}\t{}\t{}", self.function, self.position, self.attribute)
    }
}

fn filter(attrs: &mut Vec<Attribute>, keep: impl Fn(&Attribute) -> bool, mut log: impl FnMut(String)) {
    attrs.retain(|a| {
        let ok = keep(a);
        if !ok {
            log(attribute_text(a));
        }
        ok
    });
}

fn filter_fn_attrs(
    attrs: &mut Vec<FnAttr>,
    wl: &AttributeWhitelist,
    groups: &BTreeMap<u32, Vec<String>>,
    emptied: &[u32],
    mut log: impl FnMut(String),
) {
    attrs.retain(|a| match a {
        FnAttr::Attr(attr) => {
            let ok = wl.allows_function(attr);
            if !ok {
                log(attribute_text(attr));
            }
            ok
        }
        FnAttr::Group(id) => {
            for removed in groups.get(id).into_iter().flatten() {
                log(removed.clone());
            }
            !emptied.contains(id)
        }
    });
}

/// Removes every attribute the whitelist does not allow, from parameters,
/// returns, functions, call sites and attribute groups. `byval` is removed
/// wherever it appears. Groups left empty are deleted along with their
/// references.
pub fn strip_incompatible_attributes(m: &mut IRModule, wl: &AttributeWhitelist) -> Vec<AttributeRemoval> {
    let mut log = Vec::new();
    let mut group_removed: BTreeMap<u32, Vec<String>> = BTreeMap::new();
    for (id, attrs) in &mut m.attribute_groups {
        let removed = group_removed.entry(*id).or_default();
        filter(attrs, |a| wl.allows_function(a), |t| removed.push(t));
    }
    let emptied: Vec<u32> = m.attribute_groups.iter().filter(|(_, a)| a.is_empty()).map(|(id, _)| *id).collect();
    let mut referenced = std::collections::BTreeSet::new();

    for f in &mut m.functions {
        let name = f.name.clone();
        let mut push = |position: AttrPosition, attribute: String| {
            log.push(AttributeRemoval { function: name.clone(), position, attribute })
        };
        filter(&mut f.ret_attrs, |a| wl.allows_param(a), |t| push(AttrPosition::Return, t));
        for (i, p) in f.params.iter_mut().enumerate() {
            filter(&mut p.attrs, |a| wl.allows_param(a), |t| push(AttrPosition::Param(i), t));
        }
        referenced.extend(f.fn_attrs.iter().filter_map(|a| match a {
            FnAttr::Group(id) => Some(*id),
            FnAttr::Attr(_) => None,
        }));
        filter_fn_attrs(&mut f.fn_attrs, wl, &group_removed, &emptied, |t| push(AttrPosition::Function, t));
        for inst in f.blocks.iter_mut().flat_map(|b| b.instructions.iter_mut()) {
            let InstKind::Call(call) = &mut inst.kind else { continue };
            let callee = call.callee.clone();
            filter(
                &mut call.ret_attrs,
                |a| wl.allows_param(a),
                |t| push(AttrPosition::CallReturn { callee: callee.clone() }, t),
            );
            for (index, arg) in call.args.iter_mut().enumerate() {
                filter(
                    &mut arg.attrs,
                    |a| wl.allows_param(a),
                    |t| push(AttrPosition::CallArg { callee: callee.clone(), index }, t),
                );
            }
            referenced.extend(call.fn_attrs.iter().filter_map(|a| match a {
                FnAttr::Group(id) => Some(*id),
                FnAttr::Attr(_) => None,
            }));
            filter_fn_attrs(&mut call.fn_attrs, wl, &group_removed, &emptied, |t| {
                push(AttrPosition::CallFunction { callee: callee.clone() }, t)
            });
        }
    }
    for (id, removed) in &group_removed {
        if !referenced.contains(id) {
            for attribute in removed {
                log.push(AttributeRemoval {
                    function: String::new(),
                    position: AttrPosition::Group(*id),
                    attribute: attribute.clone(),
                });
            }
        }
    }
    m.attribute_groups.retain(|id, _| !emptied.contains(id));
    log
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::ir::{parse_module, validate_v7, Rule};

    #[test]
    fn strips_modern_attributes_and_byval() {
        let mut m = parse_module(
            r#"
%T = type { i32, i32 }
define noundef i32 @k(ptr byval(%T) align 4 %s, ptr noalias nocapture noundef %p) #0 {
  %v = call noundef i32 @g(ptr noundef nonnull %p) #1
  ret i32 %v
}
declare i32 @g(ptr)
attributes #0 = { mustprogress nofree nounwind willreturn "fpga.top"="1" }
attributes #1 = { willreturn }
"#,
        )
        .unwrap();
        let wl = AttributeWhitelist::default();
        let before = validate_v7(&m, &wl);
        assert!(before.iter().any(|v| v.rule == Rule::Byval));
        let log = strip_incompatible_attributes(&mut m, &wl);
        let removed: Vec<String> = log.iter().map(|r| format!("{r}")).collect();
        assert!(removed.contains(&"@k\tparam 0\tbyval(%T)".to_string()), "{removed:?}");
        assert!(removed.contains(&"@k\treturn\tnoundef".to_string()));
        for a in ["mustprogress", "nofree", "willreturn"] {
            assert!(removed.contains(&format!("@k\tfunction\t{a}")), "{a}");
        }
        assert!(removed.contains(&"@k\tcall @g\twillreturn".to_string()));
        // Group #1 became empty and is gone, with its reference.
        assert!(!m.attribute_groups.contains_key(&1));
        assert_eq!(m.attribute_groups[&0].len(), 2);
        let k = m.function("k").unwrap();
        assert_eq!(k.params[0].attrs.len(), 1);
        assert_eq!(k.params[1].attrs.len(), 2);
        let rules: Vec<Rule> = validate_v7(&m, &wl).iter().map(|v| v.rule).collect();
        assert!(rules.iter().all(|r| *r == Rule::OpaquePointer), "{rules:?}");
        // Idempotent.
        let again = strip_incompatible_attributes(&mut m, &wl);
        assert!(again.is_empty());
    }
}
