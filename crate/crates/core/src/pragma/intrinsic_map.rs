use std::collections::BTreeMap;
use std::fmt;

use thiserror::Error;

use crate::downgrade::AttributeWhitelist;
use crate::ir::{parse_module, Attribute, MetadataNode, TypeExpr};

use super::descriptor::{PragmaDescriptor, PragmaKind, PragmaScope};

const DEFAULT_MAP: &str = include_str!("../../data/intrinsic_map.txt");

#[derive(Clone, Debug, Error, PartialEq, Eq)]
pub enum MapError {
    #[error("line {line}: expected `kind.field = value`")]
    Syntax { line: usize },
    #[error("line {line}: unknown kind '{kind}'")]
    UnknownKind { line: usize, kind: String },
    #[error("line {line}: unknown field '{field}' for {kind}")]
    UnknownField { line: usize, kind: String, field: String },
    #[error("{kind}: {message}")]
    Invalid { kind: String, message: String },
    #[error("no construct template for {0}")]
    MissingTemplate(PragmaKind),
}

#[derive(Clone, Debug, Error, PartialEq, Eq)]
pub enum TemplateError {
    #[error("{kind} requires argument '{key}'")]
    MissingArgument { kind: PragmaKind, key: String },
    #[error("{kind}: template does not instantiate: {message}")]
    Instantiate { kind: PragmaKind, message: String },
}

/// What a pragma kind lowers to.
#[derive(Clone, Debug, PartialEq, Eq)]
pub enum Construct {
    LoopMetadata { tuple: String, noargs: Option<String> },
    FunctionAttribute { attribute: String },
    FunctionMetadata { kind: String, tuple: String },
    MarkerCall { callee: String, bundle: String, operands: String },
}

#[derive(Clone, Debug, Default, PartialEq, Eq)]
pub struct Template {
    fields: BTreeMap<String, String>,
    defaults: BTreeMap<String, String>,
    codes: BTreeMap<String, String>,
}

#[derive(Clone, Debug, PartialEq, Eq)]
pub struct StreamPrimitives {
    pub set_depth: String,
    pub write: String,
    pub read: String,
    pub empty: String,
    pub full: String,
}

#[derive(Clone, Debug, PartialEq, Eq)]
pub struct IntrinsicMap {
    templates: BTreeMap<PragmaKind, (Construct, Template)>,
    pub streams: StreamPrimitives,
}

/// One operand slot of a marker call.
#[derive(Clone, Debug, PartialEq, Eq)]
pub enum MarkerOperand {
    /// The array named by the pragma's `variable` argument.
    Variable(String),
    Int(TypeExpr, i128),
}

impl Default for IntrinsicMap {
    fn default() -> Self {
        IntrinsicMap::parse(DEFAULT_MAP).expect("shipped intrinsic map parses")
    }
}

fn is_pragma_field(field: &str) -> bool {
    matches!(field, "loop" | "loop.noargs" | "attribute" | "metadata" | "tuple" | "callee" | "bundle" | "operands")
}

impl IntrinsicMap {
    pub fn parse(text: &str) -> Result<IntrinsicMap, MapError> {
        let mut templates: BTreeMap<PragmaKind, Template> = BTreeMap::new();
        let mut streams: BTreeMap<String, String> = BTreeMap::new();
        for (i, raw) in text.lines().enumerate() {
            let line = i + 1;
            let trimmed = raw.trim();
            if trimmed.is_empty() || trimmed.starts_with('#') {
                continue;
            }
            let (key, value) = trimmed.split_once('=').ok_or(MapError::Syntax { line })?;
            let (key, value) = (key.trim(), value.trim().to_string());
            let (kind, field) = key.split_once('.').ok_or(MapError::Syntax { line })?;
            if value.is_empty() {
                return Err(MapError::Syntax { line });
            }
            if kind == "stream" {
                if !matches!(field, "set_depth" | "write" | "read" | "empty" | "full") {
                    return Err(MapError::UnknownField { line, kind: kind.into(), field: field.into() });
                }
                streams.insert(field.to_string(), value);
                continue;
            }
            let pk = PragmaKind::from_name(kind).ok_or_else(|| MapError::UnknownKind { line, kind: kind.into() })?;
            let t = templates.entry(pk).or_default();
            if let Some(k) = field.strip_prefix("default.") {
                t.defaults.insert(k.to_string(), value);
            } else if let Some(k) = field.strip_prefix("code.") {
                t.codes.insert(k.to_string(), value);
            } else if is_pragma_field(field) {
                t.fields.insert(field.to_string(), value);
            } else {
                return Err(MapError::UnknownField { line, kind: kind.into(), field: field.into() });
            }
        }

        let mut out = BTreeMap::new();
        for kind in PragmaKind::ALL {
            let t = templates.remove(&kind).ok_or(MapError::MissingTemplate(kind))?;
            let construct = Self::construct(kind, &t)?;
            out.insert(kind, (construct, t));
        }
        let stream = |f: &str| {
            streams
                .get(f)
                .cloned()
                .ok_or_else(|| MapError::Invalid { kind: "stream".into(), message: format!("missing stream.{f}") })
        };
        let streams = StreamPrimitives {
            set_depth: stream("set_depth")?,
            write: stream("write")?,
            read: stream("read")?,
            empty: stream("empty")?,
            full: stream("full")?,
        };
        let map = IntrinsicMap { templates: out, streams };
        map.self_check()?;
        Ok(map)
    }

    fn construct(kind: PragmaKind, t: &Template) -> Result<Construct, MapError> {
        let f = |name: &str| t.fields.get(name).cloned();
        let invalid = |message: &str| MapError::Invalid { kind: kind.name().into(), message: message.into() };
        let construct = if let Some(tuple) = f("loop") {
            Construct::LoopMetadata { tuple, noargs: f("loop.noargs") }
        } else if let Some(attribute) = f("attribute") {
            Construct::FunctionAttribute { attribute }
        } else if let Some(kind_name) = f("metadata") {
            Construct::FunctionMetadata {
                kind: kind_name,
                tuple: f("tuple").ok_or_else(|| invalid("metadata needs tuple"))?,
            }
        } else if let Some(callee) = f("callee") {
            Construct::MarkerCall {
                callee,
                bundle: f("bundle").ok_or_else(|| invalid("callee needs bundle"))?,
                operands: f("operands").ok_or_else(|| invalid("callee needs operands"))?,
            }
        } else {
            return Err(MapError::MissingTemplate(kind));
        };
        let loop_construct = matches!(construct, Construct::LoopMetadata { .. });
        if loop_construct != (kind.scope() == PragmaScope::Loop) {
            return Err(invalid("construct does not match the pragma's scope"));
        }
        let used: &[&str] = match &construct {
            Construct::LoopMetadata { .. } => &["loop", "loop.noargs"],
            Construct::FunctionAttribute { .. } => &["attribute"],
            Construct::FunctionMetadata { .. } => &["metadata", "tuple"],
            Construct::MarkerCall { .. } => &["callee", "bundle", "operands"],
        };
        if let Some(extra) = t.fields.keys().find(|k| !used.contains(&k.as_str())) {
            return Err(invalid(&format!("field '{extra}' conflicts with the chosen construct")));
        }
        Ok(construct)
    }

    /// Instantiates every template once with its defaults and dummy
    /// arguments, so broken templates fail at load time.
    fn self_check(&self) -> Result<(), MapError> {
        for (kind, (construct, t)) in &self.templates {
            let mut probe = PragmaDescriptor::new(*kind, vec![]);
            for key in placeholders(construct) {
                if key == "variable" {
                    probe.args.push((key, "x".into()));
                } else if !t.defaults.contains_key(&key) {
                    probe.args.push((key, "1".into()));
                }
            }
            let result = match construct {
                Construct::LoopMetadata { .. } => self.loop_hint(&probe).map(|_| ()),
                Construct::FunctionAttribute { .. } => self.function_attribute(&probe).map(|_| ()),
                Construct::FunctionMetadata { .. } => self.function_metadata(&probe).map(|_| ()),
                Construct::MarkerCall { .. } => self.marker_call(&probe).map(|_| ()),
            };
            result.map_err(|e| MapError::Invalid { kind: kind.name().into(), message: e.to_string() })?;
        }
        Ok(())
    }

    pub fn construct_for(&self, kind: PragmaKind) -> &Construct {
        &self.templates[&kind].0
    }

    fn substitute(&self, text: &str, p: &PragmaDescriptor) -> Result<String, TemplateError> {
        let t = &self.templates[&p.kind].1;
        let mut out = String::new();
        let mut rest = text;
        while let Some(start) = rest.find("${") {
            out.push_str(&rest[..start]);
            let after = &rest[start + 2..];
            let end = after
                .find('}')
                .ok_or_else(|| TemplateError::Instantiate { kind: p.kind, message: "unterminated ${".into() })?;
            let key = &after[..end];
            let value = p
                .arg(key)
                .or_else(|| t.defaults.get(key).map(String::as_str))
                .ok_or_else(|| TemplateError::MissingArgument { kind: p.kind, key: key.to_string() })?;
            out.push_str(t.codes.get(value).map_or(value, String::as_str));
            rest = &after[end + 1..];
        }
        out.push_str(rest);
        Ok(out)
    }

    fn parse_tuple(&self, kind: PragmaKind, text: &str) -> Result<MetadataNode, TemplateError> {
        let m = parse_module(&format!("!0 = {text}\n"))
            .map_err(|e| TemplateError::Instantiate { kind, message: e.to_string() })?;
        let node = m
            .metadata
            .get(&0)
            .cloned()
            .ok_or_else(|| TemplateError::Instantiate { kind, message: "not a metadata tuple".into() })?;
        if !node.references().is_empty() {
            return Err(TemplateError::Instantiate { kind, message: "templates cannot reference other nodes".into() });
        }
        Ok(node)
    }

    /// The hint tuple a loop pragma contributes to its loop id.
    pub fn loop_hint(&self, p: &PragmaDescriptor) -> Result<MetadataNode, TemplateError> {
        let Construct::LoopMetadata { tuple, noargs } = self.construct_for(p.kind) else {
            return Err(TemplateError::Instantiate { kind: p.kind, message: "not a loop template".into() });
        };
        let text = match (self.substitute(tuple, p), noargs) {
            (Ok(t), _) => t,
            (Err(TemplateError::MissingArgument { .. }), Some(alt)) => self.substitute(alt, p)?,
            (Err(e), _) => return Err(e),
        };
        self.parse_tuple(p.kind, &text)
    }

    pub fn function_attribute(&self, p: &PragmaDescriptor) -> Result<Attribute, TemplateError> {
        let Construct::FunctionAttribute { attribute } = self.construct_for(p.kind) else {
            return Err(TemplateError::Instantiate { kind: p.kind, message: "not an attribute template".into() });
        };
        let text = self.substitute(attribute, p)?;
        let m = parse_module(&format!("attributes #0 = {{ {text} }}\n"))
            .map_err(|e| TemplateError::Instantiate { kind: p.kind, message: e.to_string() })?;
        match m.attribute_groups.get(&0).map(Vec::as_slice) {
            Some([a]) => Ok(a.clone()),
            _ => Err(TemplateError::Instantiate { kind: p.kind, message: "expected exactly one attribute".into() }),
        }
    }

    /// (attachment kind, per-pragma tuple)
    pub fn function_metadata(&self, p: &PragmaDescriptor) -> Result<(String, MetadataNode), TemplateError> {
        let Construct::FunctionMetadata { kind, tuple } = self.construct_for(p.kind) else {
            return Err(TemplateError::Instantiate { kind: p.kind, message: "not a metadata template".into() });
        };
        let text = self.substitute(tuple, p)?;
        Ok((kind.clone(), self.parse_tuple(p.kind, &text)?))
    }

    /// (callee, bundle tag, operands)
    pub fn marker_call(&self, p: &PragmaDescriptor) -> Result<(String, String, Vec<MarkerOperand>), TemplateError> {
        let Construct::MarkerCall { callee, bundle, operands } = self.construct_for(p.kind) else {
            return Err(TemplateError::Instantiate { kind: p.kind, message: "not a marker template".into() });
        };
        let bad = |message: String| TemplateError::Instantiate { kind: p.kind, message };
        let mut out = Vec::new();
        for slot in operands.split(',').map(str::trim) {
            if let Some(key) = slot.strip_prefix("${").and_then(|s| s.strip_suffix('}')) {
                let name =
                    p.arg(key).ok_or_else(|| TemplateError::MissingArgument { kind: p.kind, key: key.to_string() })?;
                out.push(MarkerOperand::Variable(name.to_string()));
                continue;
            }
            let text = self.substitute(slot, p)?;
            let (ty, value) = text.split_once(' ').ok_or_else(|| bad(format!("slot '{slot}' is not `iN value`")))?;
            let width: u32 = ty
                .strip_prefix('i')
                .and_then(|w| w.parse().ok())
                .ok_or_else(|| bad(format!("slot type '{ty}' is not an integer type")))?;
            let value: i128 = value.trim().parse().map_err(|_| bad(format!("'{}' is not an integer", value.trim())))?;
            out.push(MarkerOperand::Int(TypeExpr::Int(width), value));
        }
        Ok((callee.clone(), bundle.clone(), out))
    }

    /// Metadata kinds the passes attach; the downgrade whitelist must keep them.
    pub fn emitted_metadata_kinds(&self) -> Vec<String> {
        let mut kinds = vec!["llvm.loop".to_string()];
        for (c, _) in self.templates.values() {
            if let Construct::FunctionMetadata { kind, .. } = c {
                kinds.push(kind.clone());
            }
        }
        kinds.sort();
        kinds.dedup();
        kinds
    }

    /// Problems that would make lowered output fail v7 validation.
    pub fn whitelist_gaps(&self, wl: &AttributeWhitelist) -> Vec<String> {
        let mut gaps: Vec<String> = self
            .emitted_metadata_kinds()
            .into_iter()
            .filter(|k| !wl.allows_metadata(k))
            .map(|k| format!("metadata kind !{k}"))
            .collect();
        for (kind, (c, _)) in &self.templates {
            if let Construct::FunctionAttribute { .. } = c {
                let mut probe = PragmaDescriptor::new(*kind, vec![]);
                for key in placeholders(c) {
                    probe.args.push((key, "1".into()));
                }
                if let Ok(a) = self.function_attribute(&probe) {
                    if !wl.allows_function(&a) {
                        gaps.push(format!("{kind} attribute {}", a.shape()));
                    }
                }
            }
        }
        gaps
    }
}

fn placeholders(c: &Construct) -> Vec<String> {
    let texts: Vec<&str> = match c {
        Construct::LoopMetadata { tuple, .. } => vec![tuple],
        Construct::FunctionAttribute { attribute } => vec![attribute],
        Construct::FunctionMetadata { tuple, .. } => vec![tuple],
        Construct::MarkerCall { operands, .. } => vec![operands],
    };
    let mut keys = Vec::new();
    for text in texts {
        let mut rest = text;
        while let Some(start) = rest.find("${") {
            let after = &rest[start + 2..];
            let Some(end) = after.find('}') else { break };
            let key = after[..end].to_string();
            if !keys.contains(&key) {
                keys.push(key);
            }
            rest = &after[end + 1..];
        }
    }
    keys
}

/// Canonical `kind.field = value` listing.
impl fmt::Display for IntrinsicMap {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        for (kind, (_, t)) in &self.templates {
            for (field, v) in &t.fields {
                writeln!(f, "{kind}.{field} = {v}")?;
            }
            for (k, v) in &t.defaults {
                writeln!(f, "{kind}.default.{k} = {v}")?;
            }
            for (k, v) in &t.codes {
                writeln!(f, "{kind}.code.{k} = {v}")?;
            }
        }
        let s = &self.streams;
        for (field, v) in [
            ("set_depth", &s.set_depth),
            ("write", &s.write),
            ("read", &s.read),
            ("empty", &s.empty),
            ("full", &s.full),
        ] {
            writeln!(f, "stream.{field} = {v}")?;
        }
        Ok(())
    }
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::ir::{MdContent, MdOperand, Operand, Value};

    #[test]
    fn default_map_instantiates() {
        let im = IntrinsicMap::default();
        let hint = im.loop_hint(&PragmaDescriptor::new(PragmaKind::Pipeline, vec![("ii", "4")])).unwrap();
        let MdContent::Tuple(ops) = &hint.content else { panic!() };
        assert_eq!(ops[0], MdOperand::Str("llvm.loop.pipeline.enable".into()));
        assert_eq!(ops[1], MdOperand::Value(Operand::new(TypeExpr::i32(), Value::int(4))));
        // Missing ii falls back to the default of 1.
        let hint = im.loop_hint(&PragmaDescriptor::new(PragmaKind::Pipeline, vec![])).unwrap();
        let MdContent::Tuple(ops) = &hint.content else { panic!() };
        assert_eq!(ops[1], MdOperand::Value(Operand::new(TypeExpr::i32(), Value::int(1))));
        // Unroll without a factor is a full unroll.
        let hint = im.loop_hint(&PragmaDescriptor::new(PragmaKind::Unroll, vec![])).unwrap();
        assert_eq!(hint.content, MdContent::Tuple(vec![MdOperand::Str("llvm.loop.unroll.full".into())]));
        let a = im.function_attribute(&PragmaDescriptor::new(PragmaKind::Dataflow, vec![])).unwrap();
        assert_eq!(a, Attribute::Str("fpga.dataflow.func".into(), Some("0".into())));
        let (callee, bundle, ops) = im
            .marker_call(&PragmaDescriptor::new(
                PragmaKind::ArrayPartition,
                vec![("variable", "x"), ("type", "cyclic"), ("factor", "4")],
            ))
            .unwrap();
        assert_eq!((callee.as_str(), bundle.as_str()), ("llvm.sideeffect", "xlx_array_partition"));
        assert_eq!(
            ops,
            vec![
                MarkerOperand::Variable("x".into()),
                MarkerOperand::Int(TypeExpr::i32(), 2),
                MarkerOperand::Int(TypeExpr::i32(), 4),
                MarkerOperand::Int(TypeExpr::i32(), 1),
            ]
        );
        assert!(im.whitelist_gaps(&AttributeWhitelist::default()).is_empty());
    }

    #[test]
    fn display_round_trips() {
        let im = IntrinsicMap::default();
        assert_eq!(IntrinsicMap::parse(&im.to_string()).unwrap(), im);
    }

    #[test]
    fn rejects_incomplete_or_mismatched_maps() {
        let without_dataflow: String =
            DEFAULT_MAP.lines().filter(|l| !l.starts_with("dataflow.")).map(|l| format!("{l}\n")).collect();
        assert_eq!(IntrinsicMap::parse(&without_dataflow), Err(MapError::MissingTemplate(PragmaKind::Dataflow)));
        let wrong_scope =
            DEFAULT_MAP.replace("dataflow.attribute = \"fpga.dataflow.func\"=\"0\"", "dataflow.loop = !{!\"x\"}");
        assert!(matches!(IntrinsicMap::parse(&wrong_scope), Err(MapError::Invalid { .. })));
        let broken = DEFAULT_MAP.replace("i1 false, i8 -1}", "i1 false, i8 -1");
        assert!(matches!(IntrinsicMap::parse(&broken), Err(MapError::Invalid { .. })));
        assert!(matches!(IntrinsicMap::parse("bogus.loop = x\n"), Err(MapError::UnknownKind { .. })));
    }
}
