use std::fmt;

use thiserror::Error;

use crate::ir::Attribute;

const DEFAULT_WHITELIST: &str = include_str!("../../data/whitelist.txt");

#[derive(Debug, Error, PartialEq)]
pub enum WhitelistError {
    #[error("whitelist line {line}: entry outside of a [param]/[function]/[metadata] section")]
    NoSection { line: usize },
    #[error("whitelist line {line}: unknown section [{name}]")]
    UnknownSection { line: usize, name: String },
    #[error("whitelist line {line}: byval cannot be whitelisted")]
    Byval { line: usize },
}

/// Attribute shapes and metadata kinds allowed to reach the v7 output.
#[derive(Clone, Debug, PartialEq)]
pub struct AttributeWhitelist {
    pub parameter_attrs: Vec<String>,
    pub function_attrs: Vec<String>,
    pub metadata_kinds: Vec<String>,
}

impl Default for AttributeWhitelist {
    fn default() -> Self {
        AttributeWhitelist::parse(DEFAULT_WHITELIST).expect("bundled whitelist is well-formed")
    }
}

impl AttributeWhitelist {
    pub fn parse(text: &str) -> Result<AttributeWhitelist, WhitelistError> {
        let mut wl =
            AttributeWhitelist { parameter_attrs: Vec::new(), function_attrs: Vec::new(), metadata_kinds: Vec::new() };
        let mut section: Option<&mut Vec<String>> = None;
        for (idx, raw) in text.lines().enumerate() {
            let line = idx + 1;
            // Only whole-line comments: `#` is also the integer placeholder.
            let entry = raw.trim();
            if entry.starts_with('#') {
                continue;
            }
            if entry.is_empty() {
                continue;
            }
            if let Some(name) = entry.strip_prefix('[').and_then(|s| s.strip_suffix(']')) {
                section = Some(match name {
                    "param" => &mut wl.parameter_attrs,
                    "function" => &mut wl.function_attrs,
                    "metadata" => &mut wl.metadata_kinds,
                    other => return Err(WhitelistError::UnknownSection { line, name: other.to_string() }),
                });
                continue;
            }
            if entry.starts_with("byval") {
                return Err(WhitelistError::Byval { line });
            }
            match section.as_mut() {
                Some(list) => list.push(entry.to_string()),
                None => return Err(WhitelistError::NoSection { line }),
            }
        }
        Ok(wl)
    }

    pub fn allows_param(&self, attr: &Attribute) -> bool {
        !attr.is_byval() && matches_any(&self.parameter_attrs, &attr.shape())
    }

    pub fn allows_function(&self, attr: &Attribute) -> bool {
        matches_any(&self.function_attrs, &attr.shape())
    }

    pub fn allows_metadata(&self, kind: &str) -> bool {
        matches_any(&self.metadata_kinds, kind)
    }

    pub fn add_metadata_kind(&mut self, kind: &str) {
        if !self.allows_metadata(kind) {
            self.metadata_kinds.push(kind.to_string());
        }
    }
}

impl fmt::Display for AttributeWhitelist {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        for (name, list) in
            [("param", &self.parameter_attrs), ("function", &self.function_attrs), ("metadata", &self.metadata_kinds)]
        {
            writeln!(f, "[{name}]")?;
            for e in list {
                writeln!(f, "{e}")?;
            }
        }
        Ok(())
    }
}

fn matches_any(patterns: &[String], text: &str) -> bool {
    patterns.iter().any(|p| glob_match(p, text))
}

/// `*` matches any (possibly empty) run of characters.
pub(crate) fn glob_match(pattern: &str, text: &str) -> bool {
    let parts: Vec<&str> = pattern.split('*').collect();
    if parts.len() == 1 {
        return pattern == text;
    }
    let (first, last) = (parts[0], parts[parts.len() - 1]);
    if !text.starts_with(first) || text.len() < first.len() + last.len() || !text.ends_with(last) {
        return false;
    }
    let mut rest = &text[first.len()..text.len() - last.len()];
    for mid in &parts[1..parts.len() - 1] {
        match rest.find(mid) {
            Some(i) => rest = &rest[i + mid.len()..],
            None => return false,
        }
    }
    true
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::ir::TypeExpr;

    #[test]
    fn default_whitelist_contents() {
        let wl = AttributeWhitelist::default();
        assert!(wl.allows_param(&Attribute::Flag("nocapture".into())));
        assert!(wl.allows_param(&Attribute::Int("align".into(), 8)));
        assert!(wl.allows_param(&Attribute::Paren("dereferenceable".into(), "8".into())));
        assert!(!wl.allows_param(&Attribute::Flag("noundef".into())));
        assert!(!wl.allows_param(&Attribute::Typed("byval".into(), TypeExpr::i32())));
        assert!(!wl.allows_param(&Attribute::Flag("byval".into())));
        assert!(!wl.allows_function(&Attribute::Flag("mustprogress".into())));
        assert!(!wl.allows_function(&Attribute::Paren("memory".into(), "argmem: read".into())));
        assert!(wl.allows_function(&Attribute::Str("fpga.dataflow.func".into(), Some("0".into()))));
        assert!(!wl.allows_function(&Attribute::Str("target-cpu".into(), Some("x86-64".into()))));
        assert!(wl.allows_metadata("llvm.loop"));
        assert!(!wl.allows_metadata("dbg"));
    }

    #[test]
    fn glob_semantics() {
        assert!(glob_match("a*c", "abbbc"));
        assert!(glob_match("a*", "a"));
        assert!(!glob_match("a*c", "ab"));
        assert!(glob_match("*x*", "yxz"));
        assert!(!glob_match("ab*ba", "aba"));
    }

    #[test]
    fn parse_errors() {
        assert_eq!(AttributeWhitelist::parse("nounwind\n"), Err(WhitelistError::NoSection { line: 1 }));
        assert!(matches!(AttributeWhitelist::parse("[params]\n"), Err(WhitelistError::UnknownSection { .. })));
        assert_eq!(AttributeWhitelist::parse("[param]\nbyval(<type>)\n"), Err(WhitelistError::Byval { line: 2 }));
    }

    #[test]
    fn display_round_trips() {
        let wl = AttributeWhitelist::default();
        assert_eq!(AttributeWhitelist::parse(&wl.to_string()).unwrap(), wl);
    }
}
