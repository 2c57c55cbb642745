//! Pragma descriptors and their placeholder-name encoding.
//!
//! `<prefix>_<kind>` followed by `__<key>_<value>` per argument. Keys are
//! letters only, so the first `_` of a segment always ends the key; values
//! never contain `__` nor start or end with `_`, so segments split cleanly.

use std::fmt;

use thiserror::Error;

pub const DEFAULT_PREFIX: &str = "_fhls";

/// Longest identifier the Fortran front end accepts.
pub const MAX_NAME_LEN: usize = 63;

#[derive(Clone, Copy, Debug, PartialEq, Eq, Hash, PartialOrd, Ord)]
pub enum PragmaKind {
    Pipeline,
    Unroll,
    ArrayPartition,
    Dataflow,
    Interface,
}

#[derive(Clone, Copy, Debug, PartialEq, Eq)]
pub enum PragmaScope {
    Loop,
    Function,
}

impl PragmaKind {
    pub const ALL: [PragmaKind; 5] = [
        PragmaKind::Pipeline,
        PragmaKind::Unroll,
        PragmaKind::ArrayPartition,
        PragmaKind::Dataflow,
        PragmaKind::Interface,
    ];

    pub fn name(self) -> &'static str {
        match self {
            PragmaKind::Pipeline => "pipeline",
            PragmaKind::Unroll => "unroll",
            PragmaKind::ArrayPartition => "array_partition",
            PragmaKind::Dataflow => "dataflow",
            PragmaKind::Interface => "interface",
        }
    }

    /// Case-insensitive.
    pub fn from_name(s: &str) -> Option<PragmaKind> {
        let lower = s.to_ascii_lowercase();
        PragmaKind::ALL.into_iter().find(|k| k.name() == lower)
    }

    pub fn scope(self) -> PragmaScope {
        match self {
            PragmaKind::Pipeline | PragmaKind::Unroll => PragmaScope::Loop,
            _ => PragmaScope::Function,
        }
    }
}

impl fmt::Display for PragmaKind {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        f.write_str(self.name())
    }
}

#[derive(Clone, Debug, PartialEq, Eq, Hash)]
pub struct SourceLocation {
    pub file: String,
    pub line: usize,
}

impl fmt::Display for SourceLocation {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        write!(f, "{}:{}", self.file, self.line)
    }
}

#[derive(Clone, Debug, PartialEq, Eq)]
pub struct PragmaDescriptor {
    pub kind: PragmaKind,
    /// In source order.
    pub args: Vec<(String, String)>,
    /// Unknown for descriptors decoded from IR.
    pub location: Option<SourceLocation>,
}

impl PragmaDescriptor {
    pub fn new(kind: PragmaKind, args: Vec<(&str, &str)>) -> PragmaDescriptor {
        PragmaDescriptor {
            kind,
            args: args.into_iter().map(|(k, v)| (k.to_string(), v.to_string())).collect(),
            location: None,
        }
    }

    pub fn scope(&self) -> PragmaScope {
        self.kind.scope()
    }

    pub fn arg(&self, key: &str) -> Option<&str> {
        self.args.iter().find(|(k, _)| k == key).map(|(_, v)| v.as_str())
    }

    /// Same kind and arguments, ignoring where it came from.
    pub fn same_pragma(&self, other: &PragmaDescriptor) -> bool {
        self.kind == other.kind && self.args == other.args
    }
}

/// `pipeline ii=4`
impl fmt::Display for PragmaDescriptor {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        f.write_str(self.kind.name())?;
        for (k, v) in &self.args {
            write!(f, " {k}={v}")?;
        }
        Ok(())
    }
}

#[derive(Clone, Debug, Error, PartialEq, Eq)]
pub enum EncodeError {
    #[error("invalid pragma key '{0}': keys are lowercase letters only")]
    Key(String),
    #[error(
        "invalid value '{value}' for key '{key}': values are lowercase letters, digits and single inner underscores"
    )]
    Value { key: String, value: String },
    #[error("duplicate key '{0}'")]
    DuplicateKey(String),
    #[error("placeholder name '{name}' is {len} characters; the limit is {MAX_NAME_LEN}")]
    TooLong { name: String, len: usize },
}

#[derive(Clone, Debug, Error, PartialEq, Eq)]
#[error("malformed placeholder '{name}': {reason}")]
pub struct DecodeError {
    pub name: String,
    pub reason: String,
}

pub fn valid_key(k: &str) -> bool {
    !k.is_empty() && k.bytes().all(|b| b.is_ascii_lowercase())
}

pub fn valid_value(v: &str) -> bool {
    !v.is_empty()
        && v.bytes().all(|b| b.is_ascii_lowercase() || b.is_ascii_digit() || b == b'_')
        && !v.starts_with('_')
        && !v.ends_with('_')
        && !v.contains("__")
}

pub fn encode_placeholder(p: &PragmaDescriptor, prefix: &str) -> Result<String, EncodeError> {
    let mut name = format!("{prefix}_{}", p.kind.name());
    for (i, (k, v)) in p.args.iter().enumerate() {
        if !valid_key(k) {
            return Err(EncodeError::Key(k.clone()));
        }
        if !valid_value(v) {
            return Err(EncodeError::Value { key: k.clone(), value: v.clone() });
        }
        if p.args[..i].iter().any(|(prev, _)| prev == k) {
            return Err(EncodeError::DuplicateKey(k.clone()));
        }
        name.push_str("__");
        name.push_str(k);
        name.push('_');
        name.push_str(v);
    }
    if name.len() > MAX_NAME_LEN {
        return Err(EncodeError::TooLong { len: name.len(), name });
    }
    Ok(name)
}

/// True if `name` claims to be a placeholder under `prefix`.
pub fn has_placeholder_prefix(name: &str, prefix: &str) -> bool {
    name.strip_prefix(prefix).is_some_and(|rest| rest.starts_with('_'))
}

/// `Ok(None)` for names without the prefix; an error for names with the
/// prefix that do not decode.
pub fn decode_placeholder(name: &str, prefix: &str) -> Result<Option<PragmaDescriptor>, DecodeError> {
    if !has_placeholder_prefix(name, prefix) {
        return Ok(None);
    }
    let err = |reason: String| DecodeError { name: name.to_string(), reason };
    let rest = &name[prefix.len() + 1..];
    let mut segments = rest.split("__");
    let kind_name = segments.next().unwrap_or_default();
    let kind = PragmaKind::ALL
        .into_iter()
        .find(|k| k.name() == kind_name)
        .ok_or_else(|| err(format!("unknown pragma kind '{kind_name}'")))?;
    let mut args: Vec<(String, String)> = Vec::new();
    for seg in segments {
        let (key, value) = seg.split_once('_').ok_or_else(|| err(format!("segment '{seg}' has no value")))?;
        if !valid_key(key) {
            return Err(err(format!("illegal key '{key}'")));
        }
        if !valid_value(value) {
            return Err(err(format!("illegal value '{value}' for key '{key}'")));
        }
        if args.iter().any(|(k, _)| k == key) {
            return Err(err(format!("duplicate key '{key}'")));
        }
        args.push((key.to_string(), value.to_string()));
    }
    Ok(Some(PragmaDescriptor { kind, args, location: None }))
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn encodes_the_documented_shapes() {
        let p = PragmaDescriptor::new(PragmaKind::Pipeline, vec![("ii", "4")]);
        assert_eq!(encode_placeholder(&p, DEFAULT_PREFIX).unwrap(), "_fhls_pipeline__ii_4");
        let p = PragmaDescriptor::new(PragmaKind::Dataflow, vec![]);
        assert_eq!(encode_placeholder(&p, DEFAULT_PREFIX).unwrap(), "_fhls_dataflow");
        let p = PragmaDescriptor::new(
            PragmaKind::ArrayPartition,
            vec![("variable", "x_max"), ("type", "cyclic"), ("factor", "4"), ("dim", "1")],
        );
        // 67 characters: decodes fine, but is over the identifier limit.
        let name = "_fhls_array_partition__variable_x_max__type_cyclic__factor_4__dim_1";
        assert_eq!(decode_placeholder(name, DEFAULT_PREFIX).unwrap().unwrap(), p);
        assert_eq!(
            encode_placeholder(&p, DEFAULT_PREFIX),
            Err(EncodeError::TooLong { name: name.to_string(), len: 67 })
        );
        let p = PragmaDescriptor::new(PragmaKind::ArrayPartition, vec![("variable", "x_max"), ("type", "cyclic")]);
        let name = encode_placeholder(&p, DEFAULT_PREFIX).unwrap();
        assert_eq!(name, "_fhls_array_partition__variable_x_max__type_cyclic");
        assert_eq!(decode_placeholder(&name, DEFAULT_PREFIX).unwrap().unwrap(), p);
    }

    #[test]
    fn decode_distinguishes_foreign_and_malformed_names() {
        assert_eq!(decode_placeholder("vecadd", DEFAULT_PREFIX), Ok(None));
        assert_eq!(decode_placeholder("_fhlsx", DEFAULT_PREFIX), Ok(None));
        assert_eq!(
            decode_placeholder("_fhls_pipeline__ii_4", DEFAULT_PREFIX).unwrap().unwrap(),
            PragmaDescriptor::new(PragmaKind::Pipeline, vec![("ii", "4")])
        );
        for bad in [
            "_fhls_pipeline__ii",
            "_fhls_pipeline__ii_",
            "_fhls_pipeline__i2_4",
            "_fhls_bogus",
            "_fhls_pipeline__ii_4__ii_5",
            "_fhls_pipeline__ii_A",
            "_fhls_pipeline___ii_4",
        ] {
            assert!(decode_placeholder(bad, DEFAULT_PREFIX).is_err(), "{bad}");
        }
    }

    #[test]
    fn encode_rejects_bad_descriptors() {
        let p = PragmaDescriptor::new(PragmaKind::Unroll, vec![("factor", "a__b")]);
        assert!(matches!(encode_placeholder(&p, DEFAULT_PREFIX), Err(EncodeError::Value { .. })));
        let p = PragmaDescriptor::new(PragmaKind::Unroll, vec![("fac_tor", "2")]);
        assert!(matches!(encode_placeholder(&p, DEFAULT_PREFIX), Err(EncodeError::Key(_))));
        let long = "x".repeat(60);
        let p = PragmaDescriptor::new(PragmaKind::Unroll, vec![("factor", long.as_str())]);
        assert!(matches!(encode_placeholder(&p, DEFAULT_PREFIX), Err(EncodeError::TooLong { .. })));
    }
}
