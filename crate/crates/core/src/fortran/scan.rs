//! Line- and statement-level structure of free-form Fortran: program units,
//! `do` nesting and where each unit's executable part starts. No grammar
//! beyond what directives and stream macros need.

use std::collections::BTreeSet;

use regex::Regex;

#[derive(Clone, Copy, Debug, PartialEq, Eq)]
pub(crate) enum LineKind {
    Blank,
    Comment,
    Directive,
    Code,
}

#[derive(Clone, Copy, Debug, PartialEq, Eq)]
pub(crate) enum UnitKind {
    Program,
    Module,
    Subroutine,
    Function,
}

#[derive(Clone, Debug)]
pub(crate) struct LineInfo {
    pub kind: LineKind,
    /// Innermost enclosing program unit, as an index into `Scan::units`.
    pub unit: Option<usize>,
    pub do_depth: usize,
    /// The unit is still in its specification part at this line.
    pub in_spec: bool,
    /// The line continues the previous line's statement.
    pub continuation: bool,
}

#[derive(Clone, Debug)]
pub(crate) struct UnitInfo {
    pub kind: UnitKind,
    pub name: String,
    /// 0-based line of the first executable statement, or of `contains` /
    /// `end` when the unit has none.
    pub exec_start: Option<usize>,
    contained: bool,
    /// Variables declared `type(HLSStream)`.
    pub streams_declared: BTreeSet<String>,
}

enum Scope {
    Unit(usize),
    Interface,
    Do(Option<String>),
}

pub(crate) struct Scan {
    pub lines: Vec<LineInfo>,
    pub units: Vec<UnitInfo>,
    /// (0-based line, message)
    pub errors: Vec<(usize, String)>,
}

struct Patterns {
    label: Regex,
    construct_name: Regex,
    unit: Regex,
    module: Regex,
    program: Regex,
    end_unit: Regex,
    end_do: Regex,
    end_interface: Regex,
    interface: Regex,
    do_stmt: Regex,
    spec: Regex,
    assignment: Regex,
    stream_decl: Regex,
}

impl Patterns {
    fn new() -> Patterns {
        let r = |p: &str| Regex::new(p).expect("static pattern");
        Patterns {
            label: r(r"^(\d+)\s+"),
            construct_name: r(r"^[a-z]\w*\s*:\s*(?:do|if|select|associate|block|forall|where|critical)\b"),
            unit: r(
                r"^(?:(?:pure|elemental|impure|recursive|non_recursive|module)\s+|(?:integer|real|logical|complex|character|double\s*precision|type\s*\([^)]*\)|class\s*\([^)]*\))\s*(?:\([^)]*\)|\*\s*\d+)?\s+)*(subroutine|function)\s+([a-z]\w*)",
            ),
            module: r(r"^(?:module\s+([a-z]\w*)\s*$|submodule\s*\([^)]*\)\s*([a-z]\w*))"),
            program: r(r"^program\s+([a-z]\w*)"),
            end_unit: r(r"^end\s*(?:(?:subroutine|function|program|module|submodule)\b.*)?$"),
            end_do: r(r"^end\s*do\b"),
            end_interface: r(r"^end\s*interface\b"),
            interface: r(r"^(?:abstract\s+)?interface\b"),
            do_stmt: r(r"^do\b(?:\s*(\d+)\s*,?)?\s*(?:$|[a-z]\w*\s*=|while\s*\(|concurrent\s*\()"),
            spec: r(
                r"^(?:use\b|implicit\b|import\b|include\b|parameter\s*\(|dimension\b|common\b|equivalence\b|external\b|intrinsic\b|save\b|data\b|namelist\b|allocatable\b|target\b|pointer\b|optional\b|intent\s*\(|value\b|volatile\b|asynchronous\b|protected\b|public\b|private\b|sequence\b|format\b|entry\b|bind\s*\(|integer\b|real\b|double\s*precision\b|double\s*complex\b|complex\b|logical\b|character\b|type\b|class\s*\(|procedure\b|enum\b|enumerator\b|generic\b|end\s*type\b|end\s*enum\b)",
            ),
            assignment: r(r"^[a-z]\w*\s*(?:\([^=]*\))?\s*=[^=>]"),
            stream_decl: r(r"^type\s*\(\s*hlsstream\s*\)\s*(?:,[^:]*)?(?:::)?\s*(.*)$"),
        }
    }
}

/// Index of the `!` starting a trailing comment, ignoring quoted strings.
pub(crate) fn comment_start(line: &str) -> Option<usize> {
    let mut quote: Option<char> = None;
    for (i, c) in line.char_indices() {
        match quote {
            Some(q) if c == q => quote = None,
            Some(_) => {}
            None if c == '\'' || c == '"' => quote = Some(c),
            None if c == '!' => return Some(i),
            None => {}
        }
    }
    None
}

/// Byte ranges of quoted strings in `code`.
pub(crate) fn string_spans(code: &str) -> Vec<(usize, usize)> {
    let mut spans = Vec::new();
    let mut open: Option<(char, usize)> = None;
    for (i, c) in code.char_indices() {
        match open {
            Some((q, start)) if c == q => {
                spans.push((start, i + 1));
                open = None;
            }
            Some(_) => {}
            None if c == '\'' || c == '"' => open = Some((c, i)),
            None => {}
        }
    }
    if let Some((_, start)) = open {
        spans.push((start, code.len()));
    }
    spans
}

/// Splits on `sep` at parenthesis depth zero, outside strings.
pub(crate) fn split_top_level(s: &str, sep: char) -> Vec<&str> {
    let mut parts = Vec::new();
    let mut depth = 0i32;
    let mut quote: Option<char> = None;
    let mut start = 0;
    for (i, c) in s.char_indices() {
        match quote {
            Some(q) if c == q => quote = None,
            Some(_) => continue,
            None => match c {
                '\'' | '"' => quote = Some(c),
                '(' | '[' => depth += 1,
                ')' | ']' => depth -= 1,
                _ if c == sep && depth == 0 => {
                    parts.push(&s[start..i]);
                    start = i + c.len_utf8();
                }
                _ => {}
            },
        }
    }
    parts.push(&s[start..]);
    parts
}

pub(crate) fn is_directive(line: &str) -> bool {
    let t = line.trim_start();
    t.len() >= 5 && t[..5].eq_ignore_ascii_case("!$hls")
}

pub(crate) fn scan(lines: &[&str]) -> Scan {
    let p = Patterns::new();
    let mut out = Scan { lines: Vec::with_capacity(lines.len()), units: Vec::new(), errors: Vec::new() };
    let mut scopes: Vec<Scope> = Vec::new();
    let mut pending: Option<(usize, String)> = None;

    for (i, raw) in lines.iter().enumerate() {
        let trimmed = raw.trim();
        let kind = if is_directive(raw) {
            LineKind::Directive
        } else if trimmed.is_empty() {
            LineKind::Blank
        } else if trimmed.starts_with('!') {
            LineKind::Comment
        } else {
            LineKind::Code
        };
        let unit = innermost_unit(&scopes);
        let info = LineInfo {
            kind,
            unit,
            do_depth: do_depth(&scopes),
            in_spec: unit.is_some_and(|u| out.units[u].exec_start.is_none() && !out.units[u].contained),
            continuation: kind == LineKind::Code && pending.is_some(),
        };
        out.lines.push(info);
        if kind != LineKind::Code {
            continue;
        }
        let code = &raw[..comment_start(raw).unwrap_or(raw.len())];
        let mut piece = code.trim();
        if pending.is_some() {
            piece = piece.strip_prefix('&').unwrap_or(piece);
        }
        let (text, continues) = match piece.strip_suffix('&') {
            Some(t) => (t, true),
            None => (piece, false),
        };
        let (first, mut stmt) = pending.take().unwrap_or((i, String::new()));
        stmt.push_str(text);
        if continues {
            stmt.push(' ');
            pending = Some((first, stmt));
            continue;
        }
        for part in split_top_level(&stmt, ';') {
            statement(&p, &mut out, &mut scopes, part, first);
        }
    }
    for scope in scopes.iter().rev() {
        if let Scope::Unit(u) = scope {
            out.errors.push((lines.len().saturating_sub(1), format!("missing `end` for {}", out.units[*u].name)));
        }
    }
    out
}

fn innermost_unit(scopes: &[Scope]) -> Option<usize> {
    scopes.iter().rev().find_map(|s| match s {
        Scope::Unit(u) => Some(*u),
        _ => None,
    })
}

fn do_depth(scopes: &[Scope]) -> usize {
    scopes.iter().rev().take_while(|s| !matches!(s, Scope::Unit(_))).filter(|s| matches!(s, Scope::Do(_))).count()
}

fn statement(p: &Patterns, out: &mut Scan, scopes: &mut Vec<Scope>, text: &str, line: usize) {
    let lower = text.trim().to_ascii_lowercase();
    if lower.is_empty() {
        return;
    }
    let (label, s) = match p.label.captures(&lower) {
        Some(c) => (Some(c[1].to_string()), lower[c[0].len()..].to_string()),
        None => (None, lower.clone()),
    };
    let s = if p.construct_name.is_match(&s) {
        let colon = s.find(':').expect("matched a colon");
        s[colon + 1..].trim_start().to_string()
    } else {
        s
    };
    let current = innermost_unit(scopes);
    let mark_exec = |out: &mut Scan| {
        if let Some(u) = current {
            let unit = &mut out.units[u];
            if unit.exec_start.is_none() && !unit.contained {
                unit.exec_start = Some(line);
            }
        }
    };
    let in_interface = matches!(scopes.last(), Some(Scope::Interface));

    if p.end_do.is_match(&s) {
        match scopes.last() {
            Some(Scope::Do(_)) => {
                scopes.pop();
            }
            _ => out.errors.push((line, "`end do` without a matching `do`".into())),
        }
    } else if p.end_interface.is_match(&s) {
        if matches!(scopes.last(), Some(Scope::Interface)) {
            scopes.pop();
        }
    } else if p.end_unit.is_match(&s) {
        mark_exec(out);
        while let Some(scope) = scopes.pop() {
            match scope {
                Scope::Unit(_) => break,
                Scope::Do(_) => out.errors.push((line, "`do` loop not closed before the end of its unit".into())),
                Scope::Interface => {}
            }
        }
    } else if s == "contains" {
        mark_exec(out);
        if let Some(u) = current {
            out.units[u].contained = true;
        }
    } else if p.interface.is_match(&s) {
        scopes.push(Scope::Interface);
    } else if let Some(c) = p.unit.captures(&s) {
        let kind = if &c[1] == "subroutine" { UnitKind::Subroutine } else { UnitKind::Function };
        push_unit(out, scopes, kind, &c[2]);
    } else if let Some(c) = p.module.captures(&s) {
        let name = c.get(1).or_else(|| c.get(2)).map_or("", |m| m.as_str());
        push_unit(out, scopes, UnitKind::Module, name);
    } else if let Some(c) = p.program.captures(&s) {
        push_unit(out, scopes, UnitKind::Program, &c[1]);
    } else if let Some(c) = p.do_stmt.captures(&s) {
        mark_exec(out);
        scopes.push(Scope::Do(c.get(1).map(|m| m.as_str().to_string())));
    } else if let Some(c) = p.stream_decl.captures(&s) {
        if let Some(u) = current {
            for entity in split_top_level(&c[1], ',') {
                let name: String =
                    entity.trim().chars().take_while(|c| c.is_ascii_alphanumeric() || *c == '_').collect();
                if !name.is_empty() {
                    out.units[u].streams_declared.insert(name);
                }
            }
        }
    } else if in_interface || (p.spec.is_match(&s) && !(p.assignment.is_match(&s) && !s.contains("::"))) {
        // Specification statement: does not end the specification part.
    } else {
        mark_exec(out);
    }

    if let Some(label) = label {
        while matches!(scopes.last(), Some(Scope::Do(Some(l))) if *l == label) {
            scopes.pop();
        }
    }
}

fn push_unit(out: &mut Scan, scopes: &mut Vec<Scope>, kind: UnitKind, name: &str) {
    out.units.push(UnitInfo {
        kind,
        name: name.to_string(),
        exec_start: None,
        contained: false,
        streams_declared: BTreeSet::new(),
    });
    scopes.push(Scope::Unit(out.units.len() - 1));
}
