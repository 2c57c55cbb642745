use std::collections::{BTreeMap, BTreeSet};
use std::fmt;

use thiserror::Error;

use crate::ir::{parse_module, TypeExpr};

const STREAM_TYPES: &str = include_str!("../../data/stream_types.tsv");

/// One supported stream element type.
#[derive(Clone, Debug, PartialEq, Eq)]
pub struct StreamType {
    pub tag: String,
    /// Fortran type spelling used in generated declarations.
    pub fortran: String,
    /// IR element type of the fifo.
    pub element: TypeExpr,
}

/// The shipped table of supported element types, in table order.
pub fn stream_types() -> &'static [StreamType] {
    use std::sync::OnceLock;
    static TABLE: OnceLock<Vec<StreamType>> = OnceLock::new();
    TABLE.get_or_init(|| {
        STREAM_TYPES
            .lines()
            .filter(|l| !l.trim().is_empty() && !l.starts_with('#'))
            .map(|l| {
                let cols: Vec<&str> = l.split('\t').collect();
                assert_eq!(cols.len(), 3, "malformed stream type line '{l}'");
                let m = parse_module(&format!("declare void @t({})\n", cols[2])).expect("stream element type parses");
                StreamType {
                    tag: cols[0].to_string(),
                    fortran: cols[1].to_string(),
                    element: m.functions[0].params[0].ty.clone(),
                }
            })
            .collect()
    })
}

pub fn stream_type(tag: &str) -> Option<&'static StreamType> {
    stream_types().iter().find(|t| t.tag == tag)
}

#[derive(Clone, Debug, Error, PartialEq, Eq)]
pub enum RegistryError {
    #[error("unsupported stream type '{0}'")]
    UnknownType(String),
    #[error("stream '{variable}' in {subroutine} is already typed as {existing}")]
    Retyped { subroutine: String, variable: String, existing: String },
    #[error("line {line}: expected `subroutine<TAB>variable<TAB>typetag`")]
    Syntax { line: usize },
    #[error("stream '{variable}' is not registered in {subroutine}")]
    Unregistered { subroutine: String, variable: String },
}

/// Which element type each stream variable carries, per subroutine.
/// Names are lowercase.
#[derive(Clone, Debug, Default, PartialEq, Eq)]
pub struct StreamTypeRegistry {
    /// Tags named by `proto_hls_stream`, in declaration order.
    instantiated: Vec<String>,
    per_subroutine: BTreeMap<String, BTreeMap<String, String>>,
}

impl StreamTypeRegistry {
    pub fn new() -> StreamTypeRegistry {
        StreamTypeRegistry::default()
    }

    pub fn instantiate(&mut self, tag: &str) -> Result<(), RegistryError> {
        let tag = tag.to_ascii_lowercase();
        if stream_type(&tag).is_none() {
            return Err(RegistryError::UnknownType(tag));
        }
        if !self.instantiated.contains(&tag) {
            self.instantiated.push(tag);
        }
        Ok(())
    }

    pub fn instantiated(&self) -> &[String] {
        &self.instantiated
    }

    /// Records `variable` in `subroutine` as a stream of `tag`, which must
    /// already be instantiated.
    pub fn register(&mut self, subroutine: &str, variable: &str, tag: &str) -> Result<(), RegistryError> {
        let tag = tag.to_ascii_lowercase();
        if !self.instantiated.contains(&tag) {
            return Err(RegistryError::UnknownType(tag));
        }
        let vars = self.per_subroutine.entry(subroutine.to_ascii_lowercase()).or_default();
        let variable = variable.to_ascii_lowercase();
        if let Some(existing) = vars.get(&variable) {
            return Err(RegistryError::Retyped {
                subroutine: subroutine.to_ascii_lowercase(),
                variable,
                existing: existing.clone(),
            });
        }
        vars.insert(variable, tag);
        Ok(())
    }

    pub fn lookup(&self, subroutine: &str, variable: &str) -> Result<&str, RegistryError> {
        self.per_subroutine
            .get(&subroutine.to_ascii_lowercase())
            .and_then(|v| v.get(&variable.to_ascii_lowercase()))
            .map(String::as_str)
            .ok_or_else(|| RegistryError::Unregistered {
                subroutine: subroutine.to_string(),
                variable: variable.to_string(),
            })
    }

    /// Streams of `subroutine`: variable -> tag.
    pub fn streams_of(&self, subroutine: &str) -> Option<&BTreeMap<String, String>> {
        self.per_subroutine.get(&subroutine.to_ascii_lowercase())
    }

    pub fn is_empty(&self) -> bool {
        self.instantiated.is_empty() && self.per_subroutine.is_empty()
    }

    pub fn len(&self) -> usize {
        self.per_subroutine.values().map(BTreeMap::len).sum()
    }

    /// Sidecar text: lines `subroutine<TAB>variable<TAB>typetag`, an optional
    /// leading `# types:` comment listing instantiated tags, other `#` lines
    /// ignored.
    pub fn parse(text: &str) -> Result<StreamTypeRegistry, RegistryError> {
        let mut reg = StreamTypeRegistry::new();
        let mut rows = Vec::new();
        for (i, line) in text.lines().enumerate() {
            if let Some(types) = line.strip_prefix("# types:") {
                for tag in types.split_whitespace() {
                    reg.instantiate(tag)?;
                }
                continue;
            }
            if line.trim().is_empty() || line.starts_with('#') {
                continue;
            }
            let cols: Vec<&str> = line.split('\t').collect();
            if cols.len() != 3 || cols.iter().any(|c| c.is_empty()) {
                return Err(RegistryError::Syntax { line: i + 1 });
            }
            rows.push((cols[0], cols[1], cols[2]));
        }
        for (_, _, tag) in &rows {
            reg.instantiate(tag)?;
        }
        for (sub, var, tag) in rows {
            reg.register(sub, var, tag)?;
        }
        Ok(reg)
    }

    pub fn merge(&mut self, other: &StreamTypeRegistry) -> Result<(), RegistryError> {
        for tag in &other.instantiated {
            self.instantiate(tag)?;
        }
        for (sub, vars) in &other.per_subroutine {
            for (var, tag) in vars {
                self.register(sub, var, tag)?;
            }
        }
        Ok(())
    }

    pub fn tags_in_use(&self) -> BTreeSet<&str> {
        self.per_subroutine.values().flat_map(|v| v.values().map(String::as_str)).collect()
    }
}

impl fmt::Display for StreamTypeRegistry {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        if !self.instantiated.is_empty() {
            writeln!(f, "# types: {}", self.instantiated.join(" "))?;
        }
        for (sub, vars) in &self.per_subroutine {
            for (var, tag) in vars {
                writeln!(f, "{sub}\t{var}\t{tag}")?;
            }
        }
        Ok(())
    }
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::ir::FloatKind;

    #[test]
    fn twenty_distinct_tags() {
        let tags: BTreeSet<&str> = stream_types().iter().map(|t| t.tag.as_str()).collect();
        assert_eq!(tags.len(), 20);
        assert_eq!(stream_type("integer").unwrap().element, TypeExpr::i32());
        assert_eq!(stream_type("real8").unwrap().element, TypeExpr::Float(FloatKind::Double));
        assert_eq!(
            stream_type("complex").unwrap().element,
            TypeExpr::Struct { packed: false, fields: vec![TypeExpr::Float(FloatKind::Float); 2] }
        );
    }

    #[test]
    fn sidecar_round_trip_and_errors() {
        let mut reg = StreamTypeRegistry::new();
        reg.instantiate("integer").unwrap();
        reg.instantiate("REAL8").unwrap();
        reg.register("F", "S", "integer").unwrap();
        reg.register("g", "t", "real8").unwrap();
        let text = reg.to_string();
        assert_eq!(text, "# types: integer real8\nf\ts\tinteger\ng\tt\treal8\n");
        assert_eq!(StreamTypeRegistry::parse(&text).unwrap(), reg);
        assert_eq!(reg.lookup("f", "s"), Ok("integer"));
        assert!(matches!(reg.lookup("g", "s"), Err(RegistryError::Unregistered { .. })));
        assert!(matches!(reg.register("f", "s", "real8"), Err(RegistryError::Retyped { .. })));
        assert!(matches!(reg.register("f", "u", "real"), Err(RegistryError::UnknownType(_))));
        assert!(matches!(reg.instantiate("integer3"), Err(RegistryError::UnknownType(_))));
        assert!(matches!(StreamTypeRegistry::parse("f s integer\n"), Err(RegistryError::Syntax { line: 1 })));
    }
}
