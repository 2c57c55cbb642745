use std::fmt;

use thiserror::Error;

#[derive(Clone, Copy, Debug, PartialEq, Eq)]
pub struct Pos {
    pub line: u32,
    pub col: u32,
}

impl fmt::Display for Pos {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        write!(f, "{}:{}", self.line, self.col)
    }
}

#[derive(Clone, Debug, Error, PartialEq)]
pub enum ParseError {
    #[error("{pos}: syntax error: {message}")]
    Syntax { pos: Pos, message: String },
    #[error("{pos}: unsupported construct: {construct}")]
    Unsupported { pos: Pos, construct: String },
    #[error("dangling metadata reference !{id} ({context})")]
    DanglingMetadata { id: u32, context: String },
}

impl ParseError {
    pub fn pos(&self) -> Option<Pos> {
        match self {
            ParseError::Syntax { pos, .. } | ParseError::Unsupported { pos, .. } => Some(*pos),
            ParseError::DanglingMetadata { .. } => None,
        }
    }
}

#[derive(Clone, Debug, Error, PartialEq)]
pub enum PrintError {
    #[error("cannot print v7 dialect: {0} violation(s), first: {1}")]
    NotV7Clean(usize, String),
}
