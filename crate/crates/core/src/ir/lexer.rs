use std::fmt;

use super::error::{ParseError, Pos};

#[derive(Clone, Debug, PartialEq)]
pub enum Token {
    /// `%name`, `%12`, `%"quoted"`
    Local(String),
    /// `@name`
    Global(String),
    /// `name:` / `12:` at the start of a block, also metadata field keys.
    Label(String),
    /// `!12`
    MdRef(u32),
    /// `!dbg`, `!llvm.loop`, `!DILocation`
    MdName(String),
    /// `!"..."`
    MdString(String),
    /// `!` directly followed by `{`
    Bang,
    /// `#12`
    AttrGroup(u32),
    Str(Vec<u8>),
    CStr(Vec<u8>),
    Int(i128),
    Float(String),
    IntType(u32),
    Word(String),
    Equal,
    Comma,
    LParen,
    RParen,
    LBracket,
    RBracket,
    LBrace,
    RBrace,
    Less,
    Greater,
    Star,
    Pipe,
    Ellipsis,
    Eof,
}

impl fmt::Display for Token {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        match self {
            Token::Local(n) => write!(f, "%{n}"),
            Token::Global(n) => write!(f, "@{n}"),
            Token::Label(n) => write!(f, "{n}:"),
            Token::MdRef(n) => write!(f, "!{n}"),
            Token::MdName(n) => write!(f, "!{n}"),
            Token::MdString(s) => write!(f, "!\"{s}\""),
            Token::Bang => f.write_str("!"),
            Token::AttrGroup(n) => write!(f, "#{n}"),
            Token::Str(s) => write!(f, "\"{}\"", super::types::escape_string(s)),
            Token::CStr(s) => write!(f, "c\"{}\"", super::types::escape_string(s)),
            Token::Int(v) => write!(f, "{v}"),
            Token::Float(s) | Token::Word(s) => f.write_str(s),
            Token::IntType(w) => write!(f, "i{w}"),
            Token::Equal => f.write_str("="),
            Token::Comma => f.write_str(","),
            Token::LParen => f.write_str("("),
            Token::RParen => f.write_str(")"),
            Token::LBracket => f.write_str("["),
            Token::RBracket => f.write_str("]"),
            Token::LBrace => f.write_str("{"),
            Token::RBrace => f.write_str("}"),
            Token::Less => f.write_str("<"),
            Token::Greater => f.write_str(">"),
            Token::Star => f.write_str("*"),
            Token::Pipe => f.write_str("|"),
            Token::Ellipsis => f.write_str("..."),
            Token::Eof => f.write_str("end of input"),
        }
    }
}

#[derive(Clone, Debug)]
pub struct Spanned {
    pub token: Token,
    pub pos: Pos,
}

fn is_name_byte(b: u8) -> bool {
    b.is_ascii_alphanumeric() || b"-$._".contains(&b)
}

pub fn tokenize(text: &str) -> Result<Vec<Spanned>, ParseError> {
    Lexer { src: text.as_bytes(), at: 0, line: 1, col: 1 }.run()
}

struct Lexer<'a> {
    src: &'a [u8],
    at: usize,
    line: u32,
    col: u32,
}

impl Lexer<'_> {
    fn peek(&self) -> Option<u8> {
        self.src.get(self.at).copied()
    }

    fn peek_at(&self, off: usize) -> Option<u8> {
        self.src.get(self.at + off).copied()
    }

    fn bump(&mut self) -> Option<u8> {
        let b = self.peek()?;
        self.at += 1;
        if b == b'\n' {
            self.line += 1;
            self.col = 1;
        } else {
            self.col += 1;
        }
        Some(b)
    }

    fn pos(&self) -> Pos {
        Pos { line: self.line, col: self.col }
    }

    fn err(&self, pos: Pos, msg: impl Into<String>) -> ParseError {
        ParseError::Syntax { pos, message: msg.into() }
    }

    fn run(mut self) -> Result<Vec<Spanned>, ParseError> {
        let mut out = Vec::new();
        loop {
            self.skip_trivia();
            let pos = self.pos();
            let Some(b) = self.peek() else {
                out.push(Spanned { token: Token::Eof, pos });
                return Ok(out);
            };
            let token = match b {
                b'%' => {
                    self.bump();
                    Token::Local(self.name_after_sigil(pos)?)
                }
                b'@' => {
                    self.bump();
                    Token::Global(self.name_after_sigil(pos)?)
                }
                b'#' => {
                    self.bump();
                    let digits = self.take_while(|b| b.is_ascii_digit());
                    let n = digits.parse().map_err(|_| self.err(pos, "expected attribute group number"))?;
                    Token::AttrGroup(n)
                }
                b'!' => {
                    self.bump();
                    self.metadata_token(pos)?
                }
                b'"' => {
                    let s = self.string(pos)?;
                    if self.peek() == Some(b':') {
                        self.bump();
                        Token::Label(String::from_utf8_lossy(&s).into_owned())
                    } else {
                        Token::Str(s)
                    }
                }
                b'=' => self.single(Token::Equal),
                b',' => self.single(Token::Comma),
                b'(' => self.single(Token::LParen),
                b')' => self.single(Token::RParen),
                b'[' => self.single(Token::LBracket),
                b']' => self.single(Token::RBracket),
                b'{' => self.single(Token::LBrace),
                b'}' => self.single(Token::RBrace),
                b'<' => self.single(Token::Less),
                b'>' => self.single(Token::Greater),
                b'*' => self.single(Token::Star),
                b'|' => self.single(Token::Pipe),
                b'.' if self.peek_at(1) == Some(b'.') && self.peek_at(2) == Some(b'.') => {
                    self.bump();
                    self.bump();
                    self.bump();
                    Token::Ellipsis
                }
                b'c' if self.peek_at(1) == Some(b'"') => {
                    self.bump();
                    Token::CStr(self.string(pos)?)
                }
                b'-' | b'+' | b'0'..=b'9' => self.number_or_label(pos)?,
                b if b.is_ascii_alphabetic() || b == b'_' || b == b'$' || b == b'.' => self.word(),
                other => return Err(self.err(pos, format!("unexpected character '{}'", other as char))),
            };
            out.push(Spanned { token, pos });
        }
    }

    fn single(&mut self, t: Token) -> Token {
        self.bump();
        t
    }

    fn skip_trivia(&mut self) {
        while let Some(b) = self.peek() {
            if b.is_ascii_whitespace() {
                self.bump();
            } else if b == b';' {
                while let Some(b) = self.peek() {
                    if b == b'\n' {
                        break;
                    }
                    self.bump();
                }
            } else {
                break;
            }
        }
    }

    fn take_while(&mut self, pred: impl Fn(u8) -> bool) -> String {
        let start = self.at;
        while self.peek().is_some_and(&pred) {
            self.bump();
        }
        String::from_utf8_lossy(&self.src[start..self.at]).into_owned()
    }

    fn string(&mut self, pos: Pos) -> Result<Vec<u8>, ParseError> {
        self.bump();
        let mut out = Vec::new();
        loop {
            match self.bump() {
                None => return Err(self.err(pos, "unterminated string")),
                Some(b'"') => return Ok(out),
                Some(b'\\') => {
                    if self.peek() == Some(b'\\') {
                        self.bump();
                        out.push(b'\\');
                        continue;
                    }
                    let hi = self.bump().and_then(|b| (b as char).to_digit(16));
                    let lo = self.bump().and_then(|b| (b as char).to_digit(16));
                    match (hi, lo) {
                        (Some(h), Some(l)) => out.push((h * 16 + l) as u8),
                        _ => return Err(self.err(pos, "bad escape in string")),
                    }
                }
                Some(b) => out.push(b),
            }
        }
    }

    fn name_after_sigil(&mut self, pos: Pos) -> Result<String, ParseError> {
        match self.peek() {
            Some(b'"') => {
                let s = self.string(pos)?;
                Ok(String::from_utf8_lossy(&s).into_owned())
            }
            Some(b) if is_name_byte(b) => Ok(self.take_while(is_name_byte)),
            _ => Err(self.err(pos, "expected a name after sigil")),
        }
    }

    fn metadata_token(&mut self, pos: Pos) -> Result<Token, ParseError> {
        match self.peek() {
            Some(b'"') => {
                let s = self.string(pos)?;
                Ok(Token::MdString(String::from_utf8_lossy(&s).into_owned()))
            }
            Some(b) if b.is_ascii_digit() => {
                let digits = self.take_while(|b| b.is_ascii_digit());
                digits.parse().map(Token::MdRef).map_err(|_| self.err(pos, "metadata id out of range"))
            }
            Some(b) if b.is_ascii_alphabetic() || b == b'_' || b == b'.' || b == b'$' || b == b'-' => {
                Ok(Token::MdName(self.take_while(|b| is_name_byte(b) || b == b'\\')))
            }
            _ => Ok(Token::Bang),
        }
    }

    fn number_or_label(&mut self, pos: Pos) -> Result<Token, ParseError> {
        // Numeric labels: `12:`
        if self.peek().is_some_and(|b| b.is_ascii_digit()) {
            let mut off = 0;
            while self.peek_at(off).is_some_and(|b| b.is_ascii_digit()) {
                off += 1;
            }
            if self.peek_at(off) == Some(b':') {
                let label = self.take_while(|b| b.is_ascii_digit());
                self.bump();
                return Ok(Token::Label(label));
            }
        }
        if self.peek() == Some(b'0') && self.peek_at(1) == Some(b'x') {
            let text = self.take_while(|b| b.is_ascii_alphanumeric());
            return Ok(Token::Float(text));
        }
        let text = self.take_while(|b| b.is_ascii_digit() || b"+-.eE".contains(&b));
        if text.contains(['.', 'e', 'E']) {
            return Ok(Token::Float(text));
        }
        text.parse::<i128>().map(Token::Int).map_err(|_| self.err(pos, format!("malformed number '{text}'")))
    }

    fn word(&mut self) -> Token {
        let text = self.take_while(is_name_byte);
        if self.peek() == Some(b':') && self.peek_at(1) != Some(b':') {
            self.bump();
            return Token::Label(text);
        }
        if let Some(width) = text.strip_prefix('i').and_then(|w| w.parse::<u32>().ok()) {
            if !text[1..].starts_with('0') || text == "i0" {
                return Token::IntType(width);
            }
        }
        Token::Word(text)
    }
}

#[cfg(test)]
mod tests {
    use super::*;

    fn kinds(text: &str) -> Vec<Token> {
        tokenize(text).unwrap().into_iter().map(|s| s.token).collect()
    }

    #[test]
    fn lexes_instruction() {
        let toks = kinds("%3 = load i32, ptr %0, align 4 ; comment\n");
        assert_eq!(
            toks,
            vec![
                Token::Local("3".into()),
                Token::Equal,
                Token::Word("load".into()),
                Token::IntType(32),
                Token::Comma,
                Token::Word("ptr".into()),
                Token::Local("0".into()),
                Token::Comma,
                Token::Word("align".into()),
                Token::Int(4),
                Token::Eof
            ]
        );
    }

    #[test]
    fn lexes_metadata_forms() {
        let toks = kinds("!5 = distinct !{!5, !\"llvm.loop.pipeline.enable\"} !dbg !DILocation(line: 3)");
        assert!(toks.contains(&Token::MdRef(5)));
        assert!(toks.contains(&Token::Bang));
        assert!(toks.contains(&Token::MdString("llvm.loop.pipeline.enable".into())));
        assert!(toks.contains(&Token::MdName("dbg".into())));
        assert!(toks.contains(&Token::MdName("DILocation".into())));
        assert!(toks.contains(&Token::Label("line".into())));
    }

    #[test]
    fn lexes_labels_and_floats() {
        let toks = kinds("12:\nentry: fadd double 1.000000e+00, 0x3FF0000000000000");
        assert_eq!(toks[0], Token::Label("12".into()));
        assert_eq!(toks[1], Token::Label("entry".into()));
        assert_eq!(toks[4], Token::Float("1.000000e+00".into()));
        assert_eq!(toks[6], Token::Float("0x3FF0000000000000".into()));
    }

    #[test]
    fn reports_position_of_bad_character() {
        let err = tokenize("define void @f() {\n  ^\n}").unwrap_err();
        assert_eq!(err.pos(), Some(Pos { line: 2, col: 3 }));
    }
}
