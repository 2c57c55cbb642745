use std::collections::{HashMap, HashSet};
use std::fmt;

use thiserror::Error;

use crate::ir::mangle::{demangle, DemangleError};
use crate::ir::{Constant, IRModule, MdContent, MdOperand, Value};

#[derive(Clone, Debug, Error, PartialEq, Eq)]
pub enum SymbolError {
    #[error(transparent)]
    Demangle(#[from] DemangleError),
    #[error("renaming @{old} to @{new} collides with an existing symbol")]
    Collision { old: String, new: String },
}

/// Old and new spelling of every renamed symbol. Parameters are qualified
/// with their function: `@k:%0`.
#[derive(Clone, Debug, Default, PartialEq, Eq)]
pub struct RenameMap {
    pub entries: Vec<(String, String)>,
}

impl RenameMap {
    pub fn is_empty(&self) -> bool {
        self.entries.is_empty()
    }

    pub fn len(&self) -> usize {
        self.entries.len()
    }
}

/// One `old<TAB>new` line per entry.
impl fmt::Display for RenameMap {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        for (old, new) in &self.entries {
            writeln!(f, "{old}\t{new}")?;
        }
        Ok(())
    }
}

fn rename_in_constant(c: &mut Constant, map: &HashMap<String, String>) {
    if let Constant::Array(elems) | Constant::Struct(elems) = c {
        for el in elems {
            rename_value(&mut el.value, map);
        }
    }
}

fn rename_value(v: &mut Value, map: &HashMap<String, String>) {
    match v {
        Value::Global(n) => {
            if let Some(new) = map.get(n.as_str()) {
                *n = new.clone();
            }
        }
        Value::Const(c) => rename_in_constant(c, map),
        Value::Local(_) => {}
    }
}

fn rename_functions(m: &mut IRModule, map: &HashMap<String, String>) {
    for f in &mut m.functions {
        if let Some(new) = map.get(&f.name) {
            f.name = new.clone();
        }
        for inst in f.instructions_mut() {
            if let crate::ir::InstKind::Call(c) = &mut inst.kind {
                if let Some(new) = map.get(&c.callee) {
                    c.callee = new.clone();
                }
            }
            for v in inst.kind.values_mut() {
                rename_value(v, map);
            }
        }
    }
    for g in &mut m.globals {
        if let Some(init) = &mut g.init {
            rename_in_constant(init, map);
        }
    }
    for node in m.metadata.values_mut() {
        if let MdContent::Tuple(ops) = &mut node.content {
            for op in ops {
                if let MdOperand::Value(o) = op {
                    rename_value(&mut o.value, map);
                }
            }
        }
    }
}

/// Demangles front-end procedure names, prefixes digit-leading parameter
/// names with `arg`, and renumbers the remaining unnamed values densely.
pub fn normalize_symbol_names(m: &mut IRModule) -> Result<RenameMap, SymbolError> {
    let mut map = RenameMap::default();
    let mut fn_map = HashMap::new();
    let mut taken: HashSet<String> = m.globals.iter().map(|g| g.name.clone()).collect();
    for f in &m.functions {
        if demangle(&f.name)?.is_none() {
            taken.insert(f.name.clone());
        }
    }
    for f in &m.functions {
        if let Some(new) = demangle(&f.name)? {
            if !taken.insert(new.clone()) {
                return Err(SymbolError::Collision { old: f.name.clone(), new });
            }
            map.entries.push((format!("@{}", f.name), format!("@{new}")));
            fn_map.insert(f.name.clone(), new);
        }
    }
    if !fn_map.is_empty() {
        rename_functions(m, &fn_map);
    }

    for f in &mut m.functions {
        let mut names: HashSet<String> = f.params.iter().filter_map(|p| p.name.clone()).collect();
        for b in &f.blocks {
            names.insert(b.label.clone());
            names.extend(b.instructions.iter().filter_map(|i| i.result.clone()));
        }
        let mut local = HashMap::new();
        for p in &f.params {
            let Some(old) = &p.name else { continue };
            if !old.starts_with(|c: char| c.is_ascii_digit()) {
                continue;
            }
            let mut new = format!("arg{old}");
            let mut k = 1;
            while names.contains(&new) {
                new = format!("arg{old}_{k}");
                k += 1;
            }
            names.insert(new.clone());
            map.entries.push((format!("@{}:%{old}", f.name), format!("@{}:%{new}", f.name)));
            local.insert(old.clone(), new);
        }
        if !local.is_empty() {
            f.rename_locals(&local);
        }
        let renumber = crate::ir::printer::numbering(f);
        if renumber.iter().any(|(a, b)| a != b) {
            f.rename_locals(&renumber);
        }
    }
    Ok(map)
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::ir::{parse_module, print_module, Dialect};

    #[test]
    fn demangles_and_renames_params() {
        let mut m = parse_module(
            r#"
define void @_QPvecadd(ptr %0, ptr %1, i32 %2) {
  %4 = load i32, ptr %0
  call void @_QMstreamsPhelper(ptr %1)
  ret void
}
declare void @_QMstreamsPhelper(ptr)
"#,
        )
        .unwrap();
        let map = normalize_symbol_names(&mut m).unwrap();
        assert_eq!(
            map.to_string(),
            "@_QPvecadd\t@vecadd\n@_QMstreamsPhelper\t@helper\n@vecadd:%0\t@vecadd:%arg0\n@vecadd:%1\t@vecadd:%arg1\n@vecadd:%2\t@vecadd:%arg2\n"
        );
        let text = print_module(&m, Dialect::Modern).unwrap();
        assert!(text.contains("define void @vecadd(ptr %arg0, ptr %arg1, i32 %arg2)"), "{text}");
        assert!(text.contains("%1 = load i32, ptr %arg0"), "{text}");
        assert!(text.contains("call void @helper(ptr %arg1)"), "{text}");
        // The model itself is renumbered, so it survives a print/parse.
        assert_eq!(parse_module(&text).unwrap(), m);
        let again = normalize_symbol_names(&mut m).unwrap();
        assert!(again.is_empty());
    }

    #[test]
    fn rejects_unknown_shapes_and_collisions() {
        let mut m = parse_module("declare void @_QQmain()\n").unwrap();
        assert!(matches!(normalize_symbol_names(&mut m), Err(SymbolError::Demangle(_))));
        let mut m = parse_module("declare void @_QPf()\ndeclare void @_QMmPf()\n").unwrap();
        assert!(matches!(normalize_symbol_names(&mut m), Err(SymbolError::Collision { .. })));
        let mut m = parse_module("declare void @_QPf()\ndeclare void @f()\n").unwrap();
        assert!(matches!(normalize_symbol_names(&mut m), Err(SymbolError::Collision { .. })));
    }
}
