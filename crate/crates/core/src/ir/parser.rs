//! Recursive-descent parser for the textual IR subset.
//!
//! One grammar covers both dialects: typed pointers (`i32*`) and opaque
//! pointers (`ptr`) are both accepted and recorded as-is in the model.
//! Anything outside the subset is rejected with its position.

use std::collections::{BTreeSet, HashSet};

use super::error::{ParseError, Pos};
use super::lexer::{tokenize, Spanned, Token};
use super::model::*;
use super::types::{FloatKind, TypeExpr, INT_WIDTHS};

pub fn parse_module(text: &str) -> Result<IRModule, ParseError> {
    let toks = tokenize(text)?;
    let mut p = Parser { toks, at: 0, module: IRModule::new() };
    p.module_body()?;
    let module = p.module;
    check_metadata_refs(&module)?;
    Ok(module)
}

const LINKAGE_KEYWORDS: &[&str] = &[
    "private",
    "internal",
    "available_externally",
    "linkonce",
    "weak",
    "common",
    "appending",
    "extern_weak",
    "linkonce_odr",
    "weak_odr",
    "external",
    "default",
    "hidden",
    "protected",
    "dllimport",
    "dllexport",
    "dso_local",
    "dso_preemptable",
    "ccc",
    "fastcc",
    "coldcc",
    "thread_local",
];

const TYPED_ATTRS: &[&str] = &["byval", "sret", "byref", "inalloca", "preallocated", "elementtype"];

const CONSTANT_WORDS: &[&str] = &["true", "false", "null", "undef", "poison", "zeroinitializer", "to"];

const FAST_MATH: &[&str] = &["nnan", "ninf", "nsz", "arcp", "contract", "afn", "reassoc", "fast"];

const TOP_LEVEL_WORDS: &[&str] = &["define", "declare", "attributes", "source_filename", "target"];

const UNSUPPORTED_OPCODES: &[&str] = &[
    "switch",
    "indirectbr",
    "invoke",
    "resume",
    "callbr",
    "catchswitch",
    "catchret",
    "cleanupret",
    "fneg",
    "extractelement",
    "insertelement",
    "shufflevector",
    "extractvalue",
    "insertvalue",
    "fence",
    "cmpxchg",
    "atomicrmw",
    "va_arg",
    "landingpad",
    "catchpad",
    "cleanuppad",
    "freeze",
    "addrspacecast",
];

fn is_type_start_word(w: &str) -> bool {
    matches!(w, "void" | "ptr" | "label" | "metadata" | "token") || FloatKind::from_keyword(w).is_some()
}

fn is_opcode_word(w: &str) -> bool {
    matches!(
        w,
        "alloca"
            | "load"
            | "store"
            | "getelementptr"
            | "br"
            | "ret"
            | "unreachable"
            | "icmp"
            | "fcmp"
            | "select"
            | "phi"
            | "call"
            | "tail"
            | "musttail"
            | "notail"
    ) || BinaryOp::from_keyword(w).is_some()
        || CastOp::from_keyword(w).is_some()
        || UNSUPPORTED_OPCODES.contains(&w)
}

/// Tracks LLVM's implicit sequential numbering of unnamed values.
#[derive(Default)]
struct Numbering {
    next: u64,
}

impl Numbering {
    fn saw(&mut self, name: &str) {
        if let Ok(n) = name.parse::<u64>() {
            if !name.starts_with('0') || name == "0" {
                self.next = self.next.max(n + 1);
            }
        }
    }

    fn fresh(&mut self) -> String {
        let n = self.next;
        self.next += 1;
        n.to_string()
    }
}

struct Parser {
    toks: Vec<Spanned>,
    at: usize,
    module: IRModule,
}

impl Parser {
    fn peek(&self) -> &Token {
        &self.toks[self.at].token
    }

    fn peek_at(&self, off: usize) -> &Token {
        let i = (self.at + off).min(self.toks.len() - 1);
        &self.toks[i].token
    }

    fn pos(&self) -> Pos {
        self.toks[self.at].pos
    }

    fn next(&mut self) -> Token {
        let t = self.toks[self.at].token.clone();
        if self.at < self.toks.len() - 1 {
            self.at += 1;
        }
        t
    }

    fn syntax<T>(&self, message: impl Into<String>) -> Result<T, ParseError> {
        Err(ParseError::Syntax { pos: self.pos(), message: message.into() })
    }

    fn unsupported<T>(&self, construct: impl Into<String>) -> Result<T, ParseError> {
        Err(ParseError::Unsupported { pos: self.pos(), construct: construct.into() })
    }

    fn expect(&mut self, want: Token) -> Result<(), ParseError> {
        if *self.peek() == want {
            self.next();
            Ok(())
        } else {
            self.syntax(format!("expected '{want}', found '{}'", self.peek()))
        }
    }

    fn eat(&mut self, want: &Token) -> bool {
        if self.peek() == want {
            self.next();
            true
        } else {
            false
        }
    }

    fn is_word(&self, w: &str) -> bool {
        matches!(self.peek(), Token::Word(x) if x == w)
    }

    fn eat_word(&mut self, w: &str) -> bool {
        if self.is_word(w) {
            self.next();
            true
        } else {
            false
        }
    }

    fn expect_word(&mut self, w: &str) -> Result<(), ParseError> {
        if self.eat_word(w) {
            Ok(())
        } else {
            self.syntax(format!("expected '{w}', found '{}'", self.peek()))
        }
    }

    fn string_lit(&mut self) -> Result<String, ParseError> {
        match self.next() {
            Token::Str(s) => Ok(String::from_utf8_lossy(&s).into_owned()),
            other => self.syntax(format!("expected string, found '{other}'")),
        }
    }

    fn uint(&mut self) -> Result<u64, ParseError> {
        match self.peek().clone() {
            Token::Int(v) if v >= 0 => {
                self.next();
                u64::try_from(v).or_else(|_| self.syntax("integer out of range"))
            }
            other => self.syntax(format!("expected unsigned integer, found '{other}'")),
        }
    }

    // ----- module level -------------------------------------------------

    fn module_body(&mut self) -> Result<(), ParseError> {
        loop {
            match self.peek().clone() {
                Token::Eof => return Ok(()),
                Token::Word(w) if w == "source_filename" => {
                    self.next();
                    self.expect(Token::Equal)?;
                    self.module.source_filename = Some(self.string_lit()?);
                }
                Token::Word(w) if w == "target" => {
                    self.next();
                    if self.eat_word("datalayout") {
                        self.expect(Token::Equal)?;
                        self.module.datalayout = Some(self.string_lit()?);
                    } else if self.eat_word("triple") {
                        self.expect(Token::Equal)?;
                        self.module.triple = Some(self.string_lit()?);
                    } else {
                        return self.syntax("expected 'datalayout' or 'triple'");
                    }
                }
                Token::Word(w) if w == "define" => {
                    self.next();
                    let f = self.function(true)?;
                    self.push_function(f)?;
                }
                Token::Word(w) if w == "declare" => {
                    self.next();
                    let f = self.function(false)?;
                    self.push_function(f)?;
                }
                Token::Word(w) if w == "attributes" => {
                    self.next();
                    self.attribute_group()?;
                }
                Token::Local(name) => {
                    self.next();
                    self.expect(Token::Equal)?;
                    self.type_def(name)?;
                }
                Token::Global(name) => {
                    self.next();
                    self.expect(Token::Equal)?;
                    let g = self.global(name)?;
                    self.module.globals.push(g);
                }
                Token::MdRef(id) => {
                    self.next();
                    self.expect(Token::Equal)?;
                    let node = self.metadata_node()?;
                    if self.module.metadata.insert(id, node).is_some() {
                        return self.syntax(format!("metadata !{id} defined twice"));
                    }
                }
                Token::MdName(name) => {
                    self.next();
                    self.expect(Token::Equal)?;
                    let nodes = self.named_metadata_body()?;
                    self.module.named_metadata.push(NamedMetadata { name, nodes });
                }
                Token::Word(w) if w == "module" || w == "$" || w == "uselistorder" => {
                    return self.unsupported(format!("top-level '{w}'"));
                }
                other => return self.syntax(format!("unexpected '{other}' at top level")),
            }
        }
    }

    fn push_function(&mut self, f: IRFunction) -> Result<(), ParseError> {
        if self.module.function(&f.name).is_some() {
            return self.syntax(format!("function @{} defined twice", f.name));
        }
        self.module.functions.push(f);
        Ok(())
    }

    fn type_def(&mut self, name: String) -> Result<(), ParseError> {
        self.expect_word("type")?;
        let body = if self.eat_word("opaque") {
            None
        } else {
            let t = self.ty()?;
            if !matches!(t, TypeExpr::Struct { .. }) {
                return self.unsupported("non-struct named type");
            }
            Some(t)
        };
        self.module.types.push(TypeDef { name, body });
        Ok(())
    }

    fn global(&mut self, name: String) -> Result<GlobalDef, ParseError> {
        let mut keywords = Vec::new();
        let constant;
        loop {
            match self.peek().clone() {
                Token::Word(w) if w == "global" || w == "constant" => {
                    self.next();
                    constant = w == "constant";
                    break;
                }
                Token::Word(w) if w == "addrspace" || w == "externally_initialized" => {
                    return self.unsupported(format!("global '{w}'"));
                }
                Token::Word(w) => {
                    self.next();
                    keywords.push(w);
                }
                other => return self.syntax(format!("unexpected '{other}' in global definition")),
            }
        }
        let ty = self.ty()?;
        let external = keywords.iter().any(|k| k == "external" || k == "extern_weak");
        let init = if external { None } else { Some(self.constant(&ty)?) };
        let mut g = GlobalDef { name, keywords, constant, ty, init, align: None, metadata: Vec::new() };
        while self.eat(&Token::Comma) {
            if self.eat_word("align") {
                g.align = Some(self.uint()?);
            } else if let Token::MdName(kind) = self.peek().clone() {
                self.next();
                let id = self.md_ref()?;
                g.metadata.push((kind, id));
            } else {
                return self.unsupported(format!("global property '{}'", self.peek()));
            }
        }
        Ok(g)
    }

    fn attribute_group(&mut self) -> Result<(), ParseError> {
        let id = match self.next() {
            Token::AttrGroup(id) => id,
            other => return self.syntax(format!("expected '#N', found '{other}'")),
        };
        self.expect(Token::Equal)?;
        self.expect(Token::LBrace)?;
        let mut attrs = Vec::new();
        while *self.peek() != Token::RBrace {
            match self.attribute(false)? {
                Some(a) => attrs.push(a),
                None => return self.syntax(format!("unexpected '{}' in attribute group", self.peek())),
            }
        }
        self.next();
        self.module.attribute_groups.insert(id, attrs);
        Ok(())
    }

    // ----- types --------------------------------------------------------

    fn ty(&mut self) -> Result<TypeExpr, ParseError> {
        let mut t = match self.peek().clone() {
            Token::IntType(w) => {
                if !INT_WIDTHS.contains(&w) {
                    return self.unsupported(format!("integer width i{w}"));
                }
                self.next();
                TypeExpr::Int(w)
            }
            Token::Word(w) => {
                if let Some(k) = FloatKind::from_keyword(&w) {
                    self.next();
                    TypeExpr::Float(k)
                } else if w == "void" {
                    self.next();
                    TypeExpr::Void
                } else if w == "ptr" {
                    self.next();
                    if self.is_word("addrspace") {
                        return self.unsupported("address-space pointer");
                    }
                    TypeExpr::Pointer(None)
                } else if matches!(w.as_str(), "label" | "metadata" | "token" | "bfloat" | "ppc_fp128" | "x86_mmx") {
                    return self.unsupported(format!("type '{w}'"));
                } else {
                    return self.syntax(format!("expected type, found '{w}'"));
                }
            }
            Token::Local(name) => {
                self.next();
                TypeExpr::Named(name)
            }
            Token::LBracket => {
                self.next();
                let n = self.uint()?;
                self.expect_word("x")?;
                let elem = self.ty()?;
                self.expect(Token::RBracket)?;
                TypeExpr::Array(n, Box::new(elem))
            }
            Token::LBrace => {
                self.next();
                let fields = self.type_list(Token::RBrace)?;
                TypeExpr::Struct { packed: false, fields }
            }
            Token::Less => {
                self.next();
                if *self.peek() != Token::LBrace {
                    return self.unsupported("vector type");
                }
                self.next();
                let fields = self.type_list(Token::RBrace)?;
                self.expect(Token::Greater)?;
                TypeExpr::Struct { packed: true, fields }
            }
            other => return self.syntax(format!("expected type, found '{other}'")),
        };
        loop {
            match self.peek() {
                Token::Star => {
                    self.next();
                    t = TypeExpr::ptr_to(t);
                }
                Token::Word(w) if w == "addrspace" => return self.unsupported("address-space pointer"),
                Token::LParen => {
                    self.next();
                    let mut params = Vec::new();
                    while *self.peek() != Token::RParen {
                        if *self.peek() == Token::Ellipsis {
                            return self.unsupported("varargs function type");
                        }
                        params.push(self.ty()?);
                        if !self.eat(&Token::Comma) {
                            break;
                        }
                    }
                    self.expect(Token::RParen)?;
                    t = TypeExpr::Function { ret: Box::new(t), params };
                }
                _ => return Ok(t),
            }
        }
    }

    fn type_list(&mut self, close: Token) -> Result<Vec<TypeExpr>, ParseError> {
        let mut out = Vec::new();
        if self.eat(&close) {
            return Ok(out);
        }
        loop {
            out.push(self.ty()?);
            if !self.eat(&Token::Comma) {
                break;
            }
        }
        self.expect(close)?;
        Ok(out)
    }

    // ----- values -------------------------------------------------------

    fn value(&mut self, ty: &TypeExpr) -> Result<Value, ParseError> {
        match self.peek().clone() {
            Token::Local(n) => {
                self.next();
                Ok(Value::Local(n))
            }
            Token::Global(n) => {
                self.next();
                Ok(Value::Global(n))
            }
            _ => Ok(Value::Const(self.constant(ty)?)),
        }
    }

    fn constant(&mut self, ty: &TypeExpr) -> Result<Constant, ParseError> {
        let c = match self.peek().clone() {
            Token::Int(v) => Constant::Int(v),
            Token::Float(s) => Constant::Float(s),
            Token::CStr(s) => Constant::CString(s),
            Token::Word(w) => match w.as_str() {
                "true" => Constant::Bool(true),
                "false" => Constant::Bool(false),
                "null" => Constant::Null,
                "undef" => Constant::Undef,
                "poison" => Constant::Poison,
                "zeroinitializer" => Constant::ZeroInit,
                _ => return self.unsupported(format!("constant expression '{w}'")),
            },
            Token::LBracket => {
                self.next();
                let elems = self.operand_list(Token::RBracket)?;
                return Ok(Constant::Array(elems));
            }
            Token::LBrace => {
                self.next();
                let elems = self.operand_list(Token::RBrace)?;
                return Ok(Constant::Struct(elems));
            }
            Token::Global(_) => return self.unsupported("global reference in aggregate constant"),
            other => return self.syntax(format!("expected value of type {ty}, found '{other}'")),
        };
        self.next();
        Ok(c)
    }

    fn operand_list(&mut self, close: Token) -> Result<Vec<Operand>, ParseError> {
        let mut out = Vec::new();
        if self.eat(&close) {
            return Ok(out);
        }
        loop {
            out.push(self.operand()?);
            if !self.eat(&Token::Comma) {
                break;
            }
        }
        self.expect(close)?;
        Ok(out)
    }

    fn operand(&mut self) -> Result<Operand, ParseError> {
        let ty = self.ty()?;
        let value = self.value(&ty)?;
        Ok(Operand { ty, value })
    }

    fn local_name(&mut self) -> Result<String, ParseError> {
        match self.next() {
            Token::Local(n) => Ok(n),
            other => self.syntax(format!("expected local name, found '{other}'")),
        }
    }

    fn label_ref(&mut self) -> Result<String, ParseError> {
        self.expect_word("label")?;
        self.local_name()
    }

    // ----- attributes ---------------------------------------------------

    /// Parses one attribute if the next token starts one. With
    /// `stop_at_types`, type keywords end the attribute list.
    fn attribute(&mut self, stop_at_types: bool) -> Result<Option<Attribute>, ParseError> {
        match self.peek().clone() {
            Token::Str(k) => {
                self.next();
                let key = String::from_utf8_lossy(&k).into_owned();
                let value = if self.eat(&Token::Equal) { Some(self.string_lit()?) } else { None };
                Ok(Some(Attribute::Str(key, value)))
            }
            Token::Word(w) => {
                if stop_at_types && is_type_start_word(&w) {
                    return Ok(None);
                }
                if is_opcode_word(&w) || TOP_LEVEL_WORDS.contains(&w.as_str()) || CONSTANT_WORDS.contains(&w.as_str()) {
                    return Ok(None);
                }
                self.next();
                if w == "align" {
                    if let Token::Int(_) = self.peek() {
                        return Ok(Some(Attribute::Int(w, self.uint()?)));
                    }
                }
                if *self.peek() == Token::Equal {
                    return self.unsupported(format!("attribute '{w}=' form"));
                }
                if *self.peek() != Token::LParen {
                    return Ok(Some(Attribute::Flag(w)));
                }
                self.next();
                if TYPED_ATTRS.contains(&w.as_str()) {
                    let t = self.ty()?;
                    self.expect(Token::RParen)?;
                    return Ok(Some(Attribute::Typed(w, t)));
                }
                let mut depth = 0usize;
                let mut raw = Vec::new();
                loop {
                    match self.next() {
                        Token::RParen if depth == 0 => break,
                        Token::Eof => return self.syntax("unterminated attribute argument"),
                        t => {
                            if t == Token::LParen {
                                depth += 1;
                            } else if t == Token::RParen {
                                depth -= 1;
                            }
                            raw.push(t.to_string());
                        }
                    }
                }
                Ok(Some(Attribute::Paren(w, join_raw(&raw))))
            }
            _ => Ok(None),
        }
    }

    fn attributes(&mut self, stop_at_types: bool) -> Result<Vec<Attribute>, ParseError> {
        let mut out = Vec::new();
        while let Some(a) = self.attribute(stop_at_types)? {
            out.push(a);
        }
        Ok(out)
    }

    fn fn_attrs(&mut self) -> Result<Vec<FnAttr>, ParseError> {
        let mut out = Vec::new();
        loop {
            if let Token::AttrGroup(id) = self.peek().clone() {
                self.next();
                out.push(FnAttr::Group(id));
                continue;
            }
            if let Token::Word(w) = self.peek() {
                if matches!(
                    w.as_str(),
                    "section" | "comdat" | "gc" | "prefix" | "prologue" | "personality" | "partition"
                ) {
                    return self.unsupported(format!("function property '{w}'"));
                }
            }
            match self.attribute(false)? {
                Some(a) => out.push(FnAttr::Attr(a)),
                None => return Ok(out),
            }
        }
    }

    // ----- functions ----------------------------------------------------

    fn function(&mut self, is_definition: bool) -> Result<IRFunction, ParseError> {
        let mut linkage = Vec::new();
        while let Token::Word(w) = self.peek() {
            if LINKAGE_KEYWORDS.contains(&w.as_str()) {
                linkage.push(w.clone());
                self.next();
            } else {
                break;
            }
        }
        let ret_attrs = self.attributes(true)?;
        let return_type = self.ty()?;
        let name = match self.next() {
            Token::Global(n) => n,
            other => return self.syntax(format!("expected function name, found '{other}'")),
        };
        let mut numbering = Numbering::default();
        self.expect(Token::LParen)?;
        let mut params = Vec::new();
        while *self.peek() != Token::RParen {
            if *self.peek() == Token::Ellipsis {
                return self.unsupported("varargs function");
            }
            let ty = self.ty()?;
            let attrs = self.attributes(false)?;
            let pname = match self.peek().clone() {
                Token::Local(n) => {
                    self.next();
                    numbering.saw(&n);
                    Some(n)
                }
                _ if is_definition => Some(numbering.fresh()),
                _ => None,
            };
            params.push(Param { name: pname, ty, attrs });
            if !self.eat(&Token::Comma) {
                break;
            }
        }
        self.expect(Token::RParen)?;
        let mut seen = HashSet::new();
        for p in params.iter().filter_map(|p| p.name.as_ref()) {
            if !seen.insert(p.clone()) {
                return self.syntax(format!("duplicate parameter name %{p} in @{name}"));
            }
        }
        let addr_kind = match self.peek() {
            Token::Word(w) if w == "unnamed_addr" || w == "local_unnamed_addr" => {
                let w = w.clone();
                self.next();
                Some(w)
            }
            _ => None,
        };
        let mut fn_attrs = Vec::new();
        let mut align = None;
        loop {
            let mut attrs = self.fn_attrs()?;
            // `align N` on a function is a property, not an attribute.
            if let Some(i) = attrs.iter().position(|a| matches!(a, FnAttr::Attr(Attribute::Int(n, _)) if n == "align"))
            {
                if let FnAttr::Attr(Attribute::Int(_, v)) = attrs.remove(i) {
                    align = Some(v);
                }
                fn_attrs.append(&mut attrs);
                continue;
            }
            fn_attrs.append(&mut attrs);
            break;
        }
        let mut metadata = Vec::new();
        while let (Token::MdName(kind), Token::MdRef(_)) = (self.peek().clone(), self.peek_at(1)) {
            self.next();
            metadata.push((kind, self.md_ref()?));
        }
        let mut f = IRFunction {
            name,
            linkage,
            ret_attrs,
            return_type,
            params,
            addr_kind,
            fn_attrs,
            align,
            metadata,
            blocks: Vec::new(),
        };
        if is_definition {
            self.expect(Token::LBrace)?;
            self.body(&mut f, numbering)?;
        }
        Ok(f)
    }

    fn body(&mut self, f: &mut IRFunction, mut numbering: Numbering) -> Result<(), ParseError> {
        loop {
            if self.eat(&Token::RBrace) {
                if f.blocks.is_empty() {
                    return self.syntax(format!("function @{} has no blocks", f.name));
                }
                break;
            }
            let label = match self.peek().clone() {
                Token::Label(l) => {
                    self.next();
                    numbering.saw(&l);
                    l
                }
                _ => numbering.fresh(),
            };
            if f.block(&label).is_some() {
                return self.syntax(format!("duplicate block label '{label}'"));
            }
            let mut instructions = Vec::new();
            loop {
                let pos = self.pos();
                if matches!(self.peek(), Token::RBrace | Token::Label(_) | Token::Eof) {
                    return Err(ParseError::Syntax {
                        pos,
                        message: format!("block '{label}' does not end in a terminator"),
                    });
                }
                let inst = self.instruction(&mut numbering)?;
                let done = inst.is_terminator();
                instructions.push(inst);
                if done {
                    break;
                }
            }
            f.blocks.push(BasicBlock { label, instructions });
        }
        let mut seen = HashSet::new();
        for name in
            f.params.iter().filter_map(|p| p.name.clone()).chain(f.instructions().filter_map(|i| i.result.clone()))
        {
            if !seen.insert(name.clone()) {
                return self.syntax(format!("value %{name} defined twice in @{}", f.name));
            }
        }
        Ok(())
    }

    // ----- instructions -------------------------------------------------

    fn instruction(&mut self, numbering: &mut Numbering) -> Result<Instruction, ParseError> {
        let mut result = None;
        if let Token::Local(name) = self.peek().clone() {
            if *self.peek_at(1) == Token::Equal {
                self.next();
                self.next();
                numbering.saw(&name);
                result = Some(name);
            }
        }
        let start = self.pos();
        let op = match self.next() {
            Token::Word(w) => w,
            other => {
                return Err(ParseError::Syntax {
                    pos: start,
                    message: format!("expected instruction, found '{other}'"),
                })
            }
        };
        let kind = self.instruction_kind(&op, start)?;
        let produces = kind.produces_value();
        if produces && result.is_none() {
            result = Some(numbering.fresh());
        } else if !produces && result.is_some() {
            return Err(ParseError::Syntax { pos: start, message: format!("'{op}' does not produce a value") });
        }
        let mut metadata = Vec::new();
        while *self.peek() == Token::Comma {
            if let Token::MdName(k) = self.peek_at(1).clone() {
                self.next();
                self.next();
                metadata.push((k, self.md_ref()?));
            } else {
                return self.syntax(format!("unexpected '{}' after instruction", self.peek_at(1)));
            }
        }
        let id = self.module.fresh_inst_id();
        Ok(Instruction { id, result, kind, metadata })
    }

    fn fast_math_flags(&mut self) -> Vec<String> {
        let mut out = Vec::new();
        while let Token::Word(w) = self.peek() {
            if FAST_MATH.contains(&w.as_str()) {
                out.push(w.clone());
                self.next();
            } else {
                break;
            }
        }
        out
    }

    /// Consumes `, align N` if present.
    fn trailing_align(&mut self) -> Result<Option<u64>, ParseError> {
        if *self.peek() == Token::Comma && matches!(self.peek_at(1), Token::Word(w) if w == "align") {
            self.next();
            self.next();
            return Ok(Some(self.uint()?));
        }
        Ok(None)
    }

    fn instruction_kind(&mut self, op: &str, start: Pos) -> Result<InstKind, ParseError> {
        if let Some(bin) = BinaryOp::from_keyword(op) {
            let mut flags = Vec::new();
            while let Token::Word(w) = self.peek() {
                if matches!(w.as_str(), "nuw" | "nsw" | "exact") || FAST_MATH.contains(&w.as_str()) {
                    flags.push(w.clone());
                    self.next();
                } else {
                    break;
                }
            }
            let ty = self.ty()?;
            let lhs = self.value(&ty)?;
            self.expect(Token::Comma)?;
            let rhs = self.value(&ty)?;
            return Ok(InstKind::Binary { op: bin, flags, ty, lhs, rhs });
        }
        if let Some(cast) = CastOp::from_keyword(op) {
            let value = self.operand()?;
            self.expect_word("to")?;
            let to = self.ty()?;
            return Ok(InstKind::Cast { op: cast, value, to });
        }
        match op {
            "alloca" => {
                if self.is_word("inalloca") {
                    return self.unsupported("inalloca alloca");
                }
                let ty = self.ty()?;
                let mut count = None;
                if *self.peek() == Token::Comma
                    && !matches!(self.peek_at(1), Token::Word(w) if w == "align")
                    && !matches!(self.peek_at(1), Token::MdName(_))
                {
                    self.next();
                    count = Some(self.operand()?);
                }
                let align = self.trailing_align()?;
                Ok(InstKind::Alloca { ty, count, align })
            }
            "load" => {
                if self.is_word("atomic") {
                    return self.unsupported("atomic load");
                }
                let volatile = self.eat_word("volatile");
                let ty = self.ty()?;
                self.expect(Token::Comma)?;
                let ptr = self.operand()?;
                let align = self.trailing_align()?;
                Ok(InstKind::Load { volatile, ty, ptr, align })
            }
            "store" => {
                if self.is_word("atomic") {
                    return self.unsupported("atomic store");
                }
                let volatile = self.eat_word("volatile");
                let value = self.operand()?;
                self.expect(Token::Comma)?;
                let ptr = self.operand()?;
                let align = self.trailing_align()?;
                Ok(InstKind::Store { volatile, value, ptr, align })
            }
            "getelementptr" => {
                let inbounds = self.eat_word("inbounds");
                let source_ty = self.ty()?;
                self.expect(Token::Comma)?;
                let base = self.operand()?;
                let mut indices = Vec::new();
                while *self.peek() == Token::Comma && !matches!(self.peek_at(1), Token::MdName(_)) {
                    self.next();
                    if self.is_word("inrange") {
                        return self.unsupported("inrange index");
                    }
                    indices.push(self.operand()?);
                }
                Ok(InstKind::GetElementPtr { inbounds, source_ty, base, indices })
            }
            "br" => {
                if self.is_word("label") {
                    let dest = self.label_ref()?;
                    return Ok(InstKind::Br { dest });
                }
                let cond = self.operand()?;
                self.expect(Token::Comma)?;
                let if_true = self.label_ref()?;
                self.expect(Token::Comma)?;
                let if_false = self.label_ref()?;
                Ok(InstKind::CondBr { cond, if_true, if_false })
            }
            "ret" => {
                if self.eat_word("void") {
                    return Ok(InstKind::Ret { value: None });
                }
                Ok(InstKind::Ret { value: Some(self.operand()?) })
            }
            "unreachable" => Ok(InstKind::Unreachable),
            "icmp" => {
                let pred = self.predicate()?;
                let ty = self.ty()?;
                let lhs = self.value(&ty)?;
                self.expect(Token::Comma)?;
                let rhs = self.value(&ty)?;
                Ok(InstKind::ICmp { pred, ty, lhs, rhs })
            }
            "fcmp" => {
                let flags = self.fast_math_flags();
                let pred = self.predicate()?;
                let ty = self.ty()?;
                let lhs = self.value(&ty)?;
                self.expect(Token::Comma)?;
                let rhs = self.value(&ty)?;
                Ok(InstKind::FCmp { flags, pred, ty, lhs, rhs })
            }
            "select" => {
                if !self.fast_math_flags().is_empty() {
                    return self.unsupported("fast-math flags on select");
                }
                let cond = self.operand()?;
                self.expect(Token::Comma)?;
                let on_true = self.operand()?;
                self.expect(Token::Comma)?;
                let on_false = self.operand()?;
                Ok(InstKind::Select { cond, on_true, on_false })
            }
            "phi" => {
                if !self.fast_math_flags().is_empty() {
                    return self.unsupported("fast-math flags on phi");
                }
                let ty = self.ty()?;
                let mut incoming = Vec::new();
                loop {
                    self.expect(Token::LBracket)?;
                    let v = self.value(&ty)?;
                    self.expect(Token::Comma)?;
                    let l = self.local_name()?;
                    self.expect(Token::RBracket)?;
                    incoming.push((v, l));
                    if *self.peek() == Token::Comma && *self.peek_at(1) == Token::LBracket {
                        self.next();
                    } else {
                        break;
                    }
                }
                Ok(InstKind::Phi { ty, incoming })
            }
            "tail" | "musttail" | "notail" => {
                self.expect_word("call")?;
                self.call(Some(op.to_string()))
            }
            "call" => self.call(None),
            _ if UNSUPPORTED_OPCODES.contains(&op) => {
                Err(ParseError::Unsupported { pos: start, construct: format!("instruction '{op}'") })
            }
            _ => Err(ParseError::Syntax { pos: start, message: format!("unknown instruction '{op}'") }),
        }
    }

    fn predicate(&mut self) -> Result<String, ParseError> {
        match self.next() {
            Token::Word(w) => Ok(w),
            other => self.syntax(format!("expected comparison predicate, found '{other}'")),
        }
    }

    fn call(&mut self, tail: Option<String>) -> Result<InstKind, ParseError> {
        let fast_math = self.fast_math_flags();
        let cconv = match self.peek() {
            Token::Word(w) if matches!(w.as_str(), "ccc" | "fastcc" | "coldcc") => {
                let w = w.clone();
                self.next();
                Some(w)
            }
            _ => None,
        };
        let ret_attrs = self.attributes(true)?;
        let ret_ty = self.ty()?;
        if matches!(ret_ty, TypeExpr::Function { .. }) {
            return self.unsupported("explicit function type in call");
        }
        let callee = match self.peek().clone() {
            Token::Global(n) => {
                self.next();
                n
            }
            Token::Local(_) => return self.unsupported("indirect call"),
            Token::Word(w) if w == "asm" => return self.unsupported("inline asm"),
            other => return self.syntax(format!("expected callee, found '{other}'")),
        };
        self.expect(Token::LParen)?;
        let mut args = Vec::new();
        while *self.peek() != Token::RParen {
            let ty = self.ty()?;
            let attrs = self.attributes(false)?;
            let value = self.value(&ty)?;
            args.push(CallArg { ty, attrs, value });
            if !self.eat(&Token::Comma) {
                break;
            }
        }
        self.expect(Token::RParen)?;
        let fn_attrs = self.fn_attrs()?;
        let mut bundles = Vec::new();
        if self.eat(&Token::LBracket) {
            loop {
                let tag = self.string_lit()?;
                self.expect(Token::LParen)?;
                let inputs = self.operand_list(Token::RParen)?;
                bundles.push(OperandBundle { tag, inputs });
                if !self.eat(&Token::Comma) {
                    break;
                }
            }
            self.expect(Token::RBracket)?;
        }
        Ok(InstKind::Call(CallInst { tail, fast_math, cconv, ret_attrs, ret_ty, callee, args, fn_attrs, bundles }))
    }

    // ----- metadata -----------------------------------------------------

    fn md_ref(&mut self) -> Result<MdId, ParseError> {
        match self.next() {
            Token::MdRef(id) => Ok(id),
            Token::Bang => self.unsupported("inline metadata node in attachment"),
            other => self.syntax(format!("expected metadata reference, found '{other}'")),
        }
    }

    fn named_metadata_body(&mut self) -> Result<Vec<MdId>, ParseError> {
        self.expect(Token::Bang)?;
        self.expect(Token::LBrace)?;
        let mut out = Vec::new();
        while *self.peek() != Token::RBrace {
            out.push(self.md_ref()?);
            if !self.eat(&Token::Comma) {
                break;
            }
        }
        self.expect(Token::RBrace)?;
        Ok(out)
    }

    fn metadata_node(&mut self) -> Result<MetadataNode, ParseError> {
        let distinct = self.eat_word("distinct");
        let content = match self.peek().clone() {
            Token::Bang => {
                self.next();
                MdContent::Tuple(self.md_tuple()?)
            }
            Token::MdName(name) => {
                self.next();
                MdContent::Specialized(self.specialized(name)?)
            }
            other => return self.syntax(format!("expected metadata node, found '{other}'")),
        };
        Ok(MetadataNode { distinct, content })
    }

    /// After `!`: `{ op, ... }`
    fn md_tuple(&mut self) -> Result<Vec<MdOperand>, ParseError> {
        self.expect(Token::LBrace)?;
        let mut ops = Vec::new();
        while *self.peek() != Token::RBrace {
            let op = match self.peek().clone() {
                Token::MdRef(id) => {
                    self.next();
                    MdOperand::Ref(id)
                }
                Token::MdString(s) => {
                    self.next();
                    MdOperand::Str(s)
                }
                Token::Word(w) if w == "null" => {
                    self.next();
                    MdOperand::Null
                }
                Token::Bang | Token::MdName(_) => return self.unsupported("nested inline metadata node"),
                _ => MdOperand::Value(self.operand()?),
            };
            ops.push(op);
            if !self.eat(&Token::Comma) {
                break;
            }
        }
        self.expect(Token::RBrace)?;
        Ok(ops)
    }

    fn specialized(&mut self, name: String) -> Result<SpecializedNode, ParseError> {
        if !name.starts_with(|c: char| c.is_ascii_uppercase()) {
            return self.syntax(format!("expected specialized metadata node, found '!{name}'"));
        }
        self.expect(Token::LParen)?;
        let mut fields = Vec::new();
        while *self.peek() != Token::RParen {
            let key = match self.peek().clone() {
                Token::Label(k) => {
                    self.next();
                    Some(k)
                }
                _ => None,
            };
            fields.push((key, self.md_field()?));
            if !self.eat(&Token::Comma) {
                break;
            }
        }
        self.expect(Token::RParen)?;
        Ok(SpecializedNode { name, fields })
    }

    fn md_field(&mut self) -> Result<MdField, ParseError> {
        match self.peek().clone() {
            Token::MdRef(id) => {
                self.next();
                Ok(MdField::Ref(id))
            }
            Token::Str(s) => {
                self.next();
                Ok(MdField::Str(String::from_utf8_lossy(&s).into_owned()))
            }
            Token::Int(v) => {
                self.next();
                Ok(MdField::Int(v))
            }
            Token::Word(w) if w == "null" => {
                self.next();
                Ok(MdField::Null)
            }
            Token::Word(w) => {
                self.next();
                let mut parts = vec![w];
                while self.eat(&Token::Pipe) {
                    match self.next() {
                        Token::Word(w) => parts.push(w),
                        other => return self.syntax(format!("expected flag, found '{other}'")),
                    }
                }
                Ok(MdField::Word(parts.join(" | ")))
            }
            Token::MdName(name) => {
                self.next();
                Ok(MdField::Node(Box::new(self.specialized(name)?)))
            }
            Token::Bang => {
                self.next();
                Ok(MdField::Tuple(self.md_tuple()?))
            }
            other => self.syntax(format!("unexpected '{other}' in metadata field")),
        }
    }
}

fn join_raw(parts: &[String]) -> String {
    let mut out = String::new();
    for p in parts {
        if p == "," {
            out.push_str(", ");
        } else {
            if !out.is_empty() && !out.ends_with(' ') && !out.ends_with('(') && p != ")" {
                out.push(' ');
            }
            out.push_str(p);
        }
    }
    out
}

fn check_metadata_refs(m: &IRModule) -> Result<(), ParseError> {
    let known: BTreeSet<MdId> = m.metadata.keys().copied().collect();
    let check = |id: MdId, context: String| -> Result<(), ParseError> {
        if known.contains(&id) {
            Ok(())
        } else {
            Err(ParseError::DanglingMetadata { id, context })
        }
    };
    for (id, node) in &m.metadata {
        for r in node.references() {
            check(r, format!("operand of !{id}"))?;
        }
    }
    for nm in &m.named_metadata {
        for &r in &nm.nodes {
            check(r, format!("named metadata !{}", nm.name))?;
        }
    }
    for g in &m.globals {
        for (k, r) in &g.metadata {
            check(*r, format!("!{k} on @{}", g.name))?;
        }
    }
    for f in &m.functions {
        for (k, r) in &f.metadata {
            check(*r, format!("!{k} on @{}", f.name))?;
        }
        for inst in f.instructions() {
            for (k, r) in &inst.metadata {
                check(*r, format!("!{k} in @{}", f.name))?;
            }
        }
    }
    Ok(())
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn empty_module_with_target_only() {
        let m = parse_module("target triple = \"x86_64-unknown-linux-gnu\"\n").unwrap();
        assert!(m.functions.is_empty());
        assert_eq!(m.triple.as_deref(), Some("x86_64-unknown-linux-gnu"));
    }

    #[test]
    fn missing_operand_is_positioned_syntax_error() {
        let text = "define i32 @f(i32 %x) {\n  %1 = add i32 %x\n  ret i32 %1\n}\n";
        let err = parse_module(text).unwrap_err();
        match err {
            ParseError::Syntax { pos, .. } => assert_eq!(pos.line, 3),
            other => panic!("unexpected {other:?}"),
        }
    }

    #[test]
    fn out_of_subset_fails_loudly() {
        let text = "define void @f(i32 %x) {\n  switch i32 %x, label %d []\nd:\n  ret void\n}\n";
        assert!(matches!(parse_module(text), Err(ParseError::Unsupported { .. })));
        let text = "define void @f(<4 x i32> %x) {\n  ret void\n}\n";
        assert!(matches!(parse_module(text), Err(ParseError::Unsupported { .. })));
    }

    #[test]
    fn dangling_metadata_is_rejected() {
        let text = "define void @f() {\n  ret void, !dbg !7\n}\n";
        assert!(matches!(parse_module(text), Err(ParseError::DanglingMetadata { id: 7, .. })));
    }

    #[test]
    fn implicit_numbering_of_blocks_and_params() {
        let text = "define void @f(i32, i32) {\n  br label %3\n; <label>:3:\n  ret void\n}\n";
        let m = parse_module(text).unwrap();
        let f = &m.functions[0];
        assert_eq!(f.params[0].name.as_deref(), Some("0"));
        assert_eq!(f.params[1].name.as_deref(), Some("1"));
        assert_eq!(f.blocks[0].label, "2");
        assert_eq!(f.blocks[1].label, "3");
    }

    #[test]
    fn unnamed_nonvoid_call_gets_a_number() {
        let text = "declare i32 @g()\ndefine void @f() {\n  call i32 @g()\n  ret void\n}\n";
        let m = parse_module(text).unwrap();
        let f = m.function("f").unwrap();
        assert_eq!(f.blocks[0].instructions[0].result.as_deref(), Some("1"));
    }

    #[test]
    fn parses_attributes_and_bundles() {
        let text = r#"
declare void @llvm.sideeffect()
define void @k(ptr noundef byval(i32) align 4 %0) local_unnamed_addr #0 !dbg !1 {
  call void @llvm.sideeffect() #1 [ "xlx_array_partition"(ptr %0, i32 1, i32 4, i32 1) ]
  ret void
}
attributes #0 = { nounwind "frame-pointer"="all" memory(argmem: readwrite) }
!1 = distinct !DISubprogram(name: "k", flags: DIFlagPrototyped | DIFlagArtificial, line: -1)
"#;
        let m = parse_module(text).unwrap();
        let f = m.function("k").unwrap();
        assert_eq!(f.params[0].attrs.len(), 3);
        assert!(f.params[0].attrs[1].is_byval());
        assert_eq!(f.addr_kind.as_deref(), Some("local_unnamed_addr"));
        let call = f.blocks[0].instructions[0].as_call().unwrap();
        assert_eq!(call.bundles[0].tag, "xlx_array_partition");
        assert_eq!(call.fn_attrs, vec![FnAttr::Group(1)]);
        let group = &m.attribute_groups[&0];
        assert_eq!(group[2], Attribute::Paren("memory".into(), "argmem: readwrite".into()));
    }
}
