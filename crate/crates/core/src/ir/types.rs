use std::fmt;

/// Floating-point formats accepted by the IR subset.
#[derive(Clone, Copy, Debug, PartialEq, Eq, Hash, PartialOrd, Ord)]
pub enum FloatKind {
    Half,
    Float,
    Double,
    X86Fp80,
    Fp128,
}

impl FloatKind {
    pub fn keyword(self) -> &'static str {
        match self {
            FloatKind::Half => "half",
            FloatKind::Float => "float",
            FloatKind::Double => "double",
            FloatKind::X86Fp80 => "x86_fp80",
            FloatKind::Fp128 => "fp128",
        }
    }

    pub fn from_keyword(word: &str) -> Option<FloatKind> {
        Some(match word {
            "half" => FloatKind::Half,
            "float" => FloatKind::Float,
            "double" => FloatKind::Double,
            "x86_fp80" => FloatKind::X86Fp80,
            "fp128" => FloatKind::Fp128,
            _ => return None,
        })
    }
}

/// Integer widths the subset admits.
pub const INT_WIDTHS: [u32; 6] = [1, 8, 16, 32, 64, 128];

/// A type expression.
///
/// `Pointer(None)` is the opaque `ptr` of the modern dialect; the v7 dialect
/// only admits `Pointer(Some(pointee))`.
#[derive(Clone, Debug, PartialEq, Eq, Hash, PartialOrd, Ord)]
pub enum TypeExpr {
    Void,
    Int(u32),
    Float(FloatKind),
    Pointer(Option<Box<TypeExpr>>),
    Array(u64, Box<TypeExpr>),
    Struct {
        packed: bool,
        fields: Vec<TypeExpr>,
    },
    /// Reference to a named struct (`%name`) defined at module level.
    Named(String),
    Function {
        ret: Box<TypeExpr>,
        params: Vec<TypeExpr>,
    },
}

impl TypeExpr {
    pub fn i1() -> TypeExpr {
        TypeExpr::Int(1)
    }

    pub fn i8() -> TypeExpr {
        TypeExpr::Int(8)
    }

    pub fn i32() -> TypeExpr {
        TypeExpr::Int(32)
    }

    pub fn i64() -> TypeExpr {
        TypeExpr::Int(64)
    }

    pub fn opaque_ptr() -> TypeExpr {
        TypeExpr::Pointer(None)
    }

    pub fn ptr_to(pointee: TypeExpr) -> TypeExpr {
        TypeExpr::Pointer(Some(Box::new(pointee)))
    }

    pub fn is_void(&self) -> bool {
        matches!(self, TypeExpr::Void)
    }

    pub fn is_pointer(&self) -> bool {
        matches!(self, TypeExpr::Pointer(_))
    }

    pub fn pointee(&self) -> Option<&TypeExpr> {
        match self {
            TypeExpr::Pointer(Some(p)) => Some(p),
            _ => None,
        }
    }

    /// True if an opaque pointer occurs anywhere inside this type.
    pub fn contains_opaque(&self) -> bool {
        match self {
            TypeExpr::Pointer(None) => true,
            TypeExpr::Pointer(Some(p)) => p.contains_opaque(),
            TypeExpr::Array(_, e) => e.contains_opaque(),
            TypeExpr::Struct { fields, .. } => fields.iter().any(TypeExpr::contains_opaque),
            TypeExpr::Function { ret, params } => ret.contains_opaque() || params.iter().any(TypeExpr::contains_opaque),
            TypeExpr::Void | TypeExpr::Int(_) | TypeExpr::Float(_) | TypeExpr::Named(_) => false,
        }
    }
}

pub(crate) fn fmt_local_name(name: &str, f: &mut fmt::Formatter<'_>) -> fmt::Result {
    if is_bare_name(name) || (!name.is_empty() && name.bytes().all(|b| b.is_ascii_digit())) {
        f.write_str(name)
    } else {
        write!(f, "\"{}\"", escape_string(name.as_bytes()))
    }
}

/// Names that can be written without quotes after `%`, `@` or as a label.
pub(crate) fn is_bare_name(name: &str) -> bool {
    let mut bytes = name.bytes();
    match bytes.next() {
        Some(b) if b.is_ascii_alphabetic() || b"-$._".contains(&b) => {}
        _ => return false,
    }
    bytes.all(|b| b.is_ascii_alphanumeric() || b"-$._".contains(&b))
}

pub(crate) fn escape_string(bytes: &[u8]) -> String {
    let mut out = String::with_capacity(bytes.len());
    for &b in bytes {
        if b == b'"' || b == b'\\' || !(0x20..0x7f).contains(&b) {
            out.push_str(&format!("\\{b:02X}"));
        } else {
            out.push(b as char);
        }
    }
    out
}

impl fmt::Display for TypeExpr {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        match self {
            TypeExpr::Void => f.write_str("void"),
            TypeExpr::Int(w) => write!(f, "i{w}"),
            TypeExpr::Float(k) => f.write_str(k.keyword()),
            TypeExpr::Pointer(None) => f.write_str("ptr"),
            TypeExpr::Pointer(Some(p)) => write!(f, "{p}*"),
            TypeExpr::Array(n, e) => write!(f, "[{n} x {e}]"),
            TypeExpr::Struct { packed, fields } => {
                let (open, close) = if *packed { ("<{", "}>") } else { ("{", "}") };
                if fields.is_empty() {
                    return write!(f, "{open}{close}");
                }
                write!(f, "{open} ")?;
                for (i, field) in fields.iter().enumerate() {
                    if i > 0 {
                        f.write_str(", ")?;
                    }
                    write!(f, "{field}")?;
                }
                write!(f, " {close}")
            }
            TypeExpr::Named(name) => {
                f.write_str("%")?;
                fmt_local_name(name, f)
            }
            TypeExpr::Function { ret, params } => {
                write!(f, "{ret} (")?;
                for (i, p) in params.iter().enumerate() {
                    if i > 0 {
                        f.write_str(", ")?;
                    }
                    write!(f, "{p}")?;
                }
                f.write_str(")")
            }
        }
    }
}
