//! Fortran front-end symbol mangling.
//!
//! Only two shapes are recognized: `_QP<name>` for external procedures and
//! `_QM<module>P<name>` for module procedures. The front end lowercases
//! every identifier, so the uppercase tags are unambiguous separators.

use thiserror::Error;

#[derive(Clone, Debug, Error, PartialEq, Eq)]
#[error("unrecognized front-end mangled name '{0}'")]
pub struct DemangleError(pub String);

fn is_ident(s: &str) -> bool {
    !s.is_empty() && s.bytes().all(|b| b.is_ascii_lowercase() || b.is_ascii_digit() || b == b'_' || b == b'$')
}

/// `Ok(None)` for names that are not front-end mangled at all.
pub fn demangle(name: &str) -> Result<Option<String>, DemangleError> {
    let Some(rest) = name.strip_prefix("_Q") else {
        return Ok(None);
    };
    let err = || DemangleError(name.to_string());
    if let Some(plain) = rest.strip_prefix('P') {
        return if is_ident(plain) { Ok(Some(plain.to_string())) } else { Err(err()) };
    }
    if let Some(qualified) = rest.strip_prefix('M') {
        let (module, plain) = qualified.split_once('P').ok_or_else(err)?;
        return if is_ident(module) && is_ident(plain) { Ok(Some(plain.to_string())) } else { Err(err()) };
    }
    Err(err())
}

/// Demangled name when recognized, otherwise the name unchanged.
pub fn plain_name(name: &str) -> &str {
    if let Some(rest) = name.strip_prefix("_QP") {
        if is_ident(rest) {
            return rest;
        }
    }
    if let Some(qualified) = name.strip_prefix("_QM") {
        if let Some((module, plain)) = qualified.split_once('P') {
            if is_ident(module) && is_ident(plain) {
                return plain;
            }
        }
    }
    name
}

/// Mangles a procedure name the way the front end does.
pub fn mangle(module: Option<&str>, name: &str) -> String {
    match module {
        Some(m) => format!("_QM{m}P{name}"),
        None => format!("_QP{name}"),
    }
}
