//! In-memory model of the textual IR subset, with parser, printer and the
//! v7 dialect validator.

mod error;
mod lexer;
pub mod mangle;
mod model;
mod parser;
pub(crate) mod printer;
mod types;
mod validate;

pub use error::{ParseError, Pos, PrintError};
pub use model::*;
pub use parser::parse_module;
pub use printer::{attribute_text, instruction_text, print_module, Dialect};
pub use types::{FloatKind, TypeExpr, INT_WIDTHS};
pub use validate::{structural_violations, validate_v7, Rule, Violation};
