use std::collections::BTreeMap;

use regex::Regex;

use crate::pragma::{
    encode_placeholder, valid_key, valid_value, PragmaDescriptor, PragmaKind, PragmaScope, SourceLocation,
};
use crate::stream::{stream_type, StreamTypeRegistry};

use super::scan::{comment_start, is_directive, scan, split_top_level, string_spans, LineKind, Scan, UnitKind};
use super::source::{Diagnostic, PreprocessError, Severity, SourceUnit};

/// Result of the full source-level pipeline.
#[derive(Clone, Debug, PartialEq, Eq)]
pub struct Preprocessed {
    pub unit: SourceUnit,
    pub pragmas: Vec<PragmaDescriptor>,
    pub registry: StreamTypeRegistry,
}

/// Parses the text of a `!$HLS KIND KEY=VALUE ...` line.
pub fn parse_directive(line: &str) -> Result<PragmaDescriptor, String> {
    let body = line.trim_start();
    if !is_directive(body) {
        return Err("not an HLS directive".into());
    }
    let body = &body[5..];
    let body = &body[..comment_start(body).unwrap_or(body.len())];
    let mut tokens = body.split_whitespace();
    let kind_name = tokens.next().ok_or("directive names no pragma kind")?;
    let kind = PragmaKind::from_name(kind_name).ok_or_else(|| format!("unknown pragma kind '{kind_name}'"))?;
    let mut args: Vec<(String, String)> = Vec::new();
    for token in tokens {
        let (key, value) = token
            .split_once('=')
            .filter(|(k, v)| !k.is_empty() && !v.is_empty() && !v.contains('='))
            .ok_or_else(|| format!("malformed argument '{token}': expected KEY=VALUE"))?;
        let (key, value) = (key.to_ascii_lowercase(), value.to_ascii_lowercase());
        if !valid_key(&key) {
            return Err(format!("malformed argument '{token}': keys are letters only"));
        }
        if value.contains("__") {
            return Err(format!("value '{value}' of '{key}' contains '__'"));
        }
        if !valid_value(&value) {
            return Err(format!("malformed argument '{token}': illegal character in value"));
        }
        if args.iter().any(|(k, _)| *k == key) {
            return Err(format!("duplicate argument '{key}'"));
        }
        args.push((key, value));
    }
    Ok(PragmaDescriptor { kind, args, location: None })
}

/// Fortran source of the `hls_stream` module for the given type tags.
///
/// The bodies emulate a one-element stream in software. Every routine
/// touches `stream_data`, so its IR pointer argument has a typed use.
pub fn stream_module(tags: &[String]) -> Vec<String> {
    let mut out = vec!["module hls_stream".to_string(), "  implicit none".to_string()];
    let decl = |tag: &str| stream_type(tag).map_or("integer", |t| t.fortran.as_str()).to_string();
    out.push("  type :: HLSStream".into());
    for tag in tags {
        out.push(format!("    {} :: data_{tag}", decl(tag)));
    }
    out.push("  end type HLSStream".into());
    for tag in tags {
        out.push(format!("  type :: HLSStream_{tag}"));
        out.push(format!("    {} :: data_{tag}", decl(tag)));
        out.push(format!("  end type HLSStream_{tag}"));
    }
    out.push("contains".into());
    for tag in tags {
        let ty = decl(tag);
        out.extend([
            format!("  subroutine set_depth_{tag}(stream_data, depth)"),
            format!("    {ty} :: stream_data"),
            "    integer, value :: depth".to_string(),
            "    stream_data = stream_data".to_string(),
            format!("  end subroutine set_depth_{tag}"),
            format!("  subroutine hls_lowered_write_{tag}(input_data, stream_data)"),
            format!("    {ty}, value :: input_data"),
            format!("    {ty} :: stream_data"),
            "    stream_data = input_data".to_string(),
            format!("  end subroutine hls_lowered_write_{tag}"),
            format!("  function hls_lowered_read_{tag}(stream_data) result(output_data)"),
            format!("    {ty} :: stream_data"),
            format!("    {ty} :: output_data"),
            "    output_data = stream_data".to_string(),
            format!("  end function hls_lowered_read_{tag}"),
        ]);
        for (op, result) in [("empty", "is_empty"), ("full", "is_full")] {
            out.extend([
                format!("  function hls_{op}_{tag}(stream_data) result({result})"),
                format!("    {ty} :: stream_data"),
                format!("    logical :: {result}"),
                "    stream_data = stream_data".to_string(),
                format!("    {result} = .false."),
                format!("  end function hls_{op}_{tag}"),
            ]);
        }
    }
    out.push("end module hls_stream".into());
    out
}

#[derive(Clone, Copy, Default)]
struct Passes<'a> {
    pragmas: Option<&'a str>,
    macros: bool,
    resolve: Option<&'a StreamTypeRegistry>,
}

struct Patterns {
    proto: Regex,
    set_type: Regex,
    set_type_start: Regex,
    generic: Regex,
}

impl Patterns {
    fn new() -> Patterns {
        let r = |p: &str| Regex::new(p).expect("static pattern");
        Patterns {
            proto: r(r"(?i)^proto_hls_stream\s*\(([^)]*)\)$"),
            set_type: r(
                r"(?i)^set_hls_stream_type\s*\(\s*([a-z]\w*)\s*,\s*([a-z]\w*)\s*(?:,\s*depth\s*=\s*(\d+)\s*)?\)$",
            ),
            set_type_start: r(r"(?i)^set_hls_stream_type\b"),
            generic: r(r"(?i)\bhls_(write|read|empty|full)\s*\("),
        }
    }
}

struct Engine<'a> {
    unit: &'a SourceUnit,
    lines: Vec<&'a str>,
    scan: Scan,
    patterns: Patterns,
    diagnostics: Vec<Diagnostic>,
    pragmas: Vec<PragmaDescriptor>,
    registry: StreamTypeRegistry,
}

fn indent_of(line: &str) -> &str {
    &line[..line.len() - line.trim_start().len()]
}

impl<'a> Engine<'a> {
    fn new(unit: &'a SourceUnit) -> Engine<'a> {
        let lines = unit.lines();
        let scan = scan(&lines);
        let mut e = Engine {
            unit,
            lines,
            scan,
            patterns: Patterns::new(),
            diagnostics: Vec::new(),
            pragmas: Vec::new(),
            registry: StreamTypeRegistry::new(),
        };
        for (line, message) in std::mem::take(&mut e.scan.errors) {
            e.error(line, message);
        }
        e
    }

    fn error(&mut self, line: usize, message: impl Into<String>) {
        self.diagnostics.push(Diagnostic {
            file: self.unit.path.clone(),
            line: line + 1,
            severity: Severity::Error,
            message: message.into(),
        });
    }

    fn unit_name(&self, line: usize) -> Option<(String, UnitKind)> {
        self.scan.lines[line].unit.map(|u| (self.scan.units[u].name.clone(), self.scan.units[u].kind))
    }

    fn run(
        mut self,
        passes: Passes,
    ) -> Result<(SourceUnit, Vec<PragmaDescriptor>, StreamTypeRegistry), PreprocessError> {
        let mut out: Vec<String> = Vec::with_capacity(self.lines.len());
        let mut deferred: BTreeMap<usize, Vec<String>> = BTreeMap::new();
        let mut out_at: Vec<usize> = Vec::with_capacity(self.lines.len());
        let mut seen_proto = false;

        for i in 0..self.lines.len() {
            out_at.push(out.len());
            let raw = self.lines[i];
            let info = self.scan.lines[i].clone();
            match info.kind {
                LineKind::Directive if passes.pragmas.is_some() => {
                    let prefix = passes.pragmas.unwrap_or_default();
                    let Some(call) = self.directive(i, prefix) else { continue };
                    let call = format!("{}{call}", indent_of(raw));
                    let scope = self.pragmas.last().map(PragmaDescriptor::scope);
                    if scope == Some(PragmaScope::Function) && info.in_spec {
                        let u = info.unit.expect("function-scope pragma has a unit");
                        let at = self.scan.units[u].exec_start.unwrap_or(self.lines.len());
                        deferred.entry(at).or_default().push(call);
                    } else {
                        out.push(call);
                    }
                }
                LineKind::Code if !info.continuation => {
                    let code = raw[..comment_start(raw).unwrap_or(raw.len())].trim();
                    if passes.macros && self.patterns.proto.is_match(code) {
                        if let Some(lines) = self.proto(i, code, &mut seen_proto) {
                            out.extend(lines);
                        }
                    } else if passes.macros && self.patterns.set_type_start.is_match(code) {
                        if let Some(line) = self.set_type(i, code) {
                            out.push(format!("{}{line}", indent_of(raw)));
                        }
                    } else {
                        let line = self.resolve(i, raw, passes.resolve);
                        out.push(line);
                    }
                }
                LineKind::Code => {
                    let line = self.resolve(i, raw, passes.resolve);
                    out.push(line);
                }
                _ => out.push(raw.to_string()),
            }
        }

        if !self.diagnostics.is_empty() {
            return Err(PreprocessError { diagnostics: self.diagnostics });
        }
        // Deferred calls go before the output of their anchor line.
        out_at.push(out.len());
        for (at, calls) in deferred.into_iter().rev() {
            let pos = out_at[at.min(self.lines.len())];
            for (k, call) in calls.into_iter().enumerate() {
                out.insert(pos + k, call);
            }
        }
        let mut text = out.join("\n");
        if self.unit.ends_with_newline() && !out.is_empty() {
            text.push('\n');
        }
        Ok((SourceUnit::new(self.unit.path.clone(), text), self.pragmas, self.registry))
    }

    /// Placeholder call for directive line `i`, recording its descriptor.
    fn directive(&mut self, i: usize, prefix: &str) -> Option<String> {
        let info = self.scan.lines[i].clone();
        let mut d = match parse_directive(self.lines[i]) {
            Ok(d) => d,
            Err(e) => {
                self.error(i, e);
                return None;
            }
        };
        d.location = Some(SourceLocation { file: self.unit.path.clone(), line: i + 1 });
        match d.scope() {
            PragmaScope::Loop if info.do_depth == 0 => {
                self.error(i, format!("{} must appear inside a do loop body", d.kind));
                return None;
            }
            PragmaScope::Function => match self.unit_name(i) {
                Some((_, UnitKind::Subroutine | UnitKind::Function | UnitKind::Program)) => {}
                _ => {
                    self.error(i, format!("{} must appear inside a subroutine or function", d.kind));
                    return None;
                }
            },
            _ => {}
        }
        match encode_placeholder(&d, prefix) {
            Ok(name) => {
                self.pragmas.push(d);
                Some(format!("call {name}()"))
            }
            Err(e) => {
                self.error(i, e.to_string());
                None
            }
        }
    }

    fn proto(&mut self, i: usize, code: &str, seen: &mut bool) -> Option<Vec<String>> {
        if self.scan.lines[i].unit.is_some() {
            self.error(i, "proto_hls_stream must appear outside any program unit");
            return None;
        }
        if *seen {
            self.error(i, "only one proto_hls_stream invocation is allowed per file");
            return None;
        }
        *seen = true;
        let caps = self.patterns.proto.captures(code).expect("matched");
        let list = caps[1].to_string();
        let mut ok = true;
        for tag in list.split(',').map(|t| t.trim().to_ascii_lowercase()) {
            if let Err(e) = self.registry.instantiate(&tag) {
                self.error(i, e.to_string());
                ok = false;
            }
        }
        if self.registry.instantiated().is_empty() && ok {
            self.error(i, "proto_hls_stream needs at least one type");
            return None;
        }
        ok.then(|| stream_module(self.registry.instantiated()))
    }

    fn set_type(&mut self, i: usize, code: &str) -> Option<String> {
        let Some(caps) = self.patterns.set_type.captures(code) else {
            self.error(i, "malformed set_hls_stream_type: expected set_hls_stream_type(variable, type[, depth=N])");
            return None;
        };
        let var = caps[1].to_ascii_lowercase();
        let tag = caps[2].to_ascii_lowercase();
        let depth = caps.get(3).map_or("0", |m| m.as_str()).to_string();
        let Some(u) = self.scan.lines[i].unit else {
            self.error(i, "set_hls_stream_type outside any subroutine");
            return None;
        };
        let unit = &self.scan.units[u];
        let sub = unit.name.clone();
        if stream_type(&tag).is_none() {
            self.error(i, format!("unsupported stream type '{tag}'"));
            return None;
        }
        if !unit.streams_declared.contains(&var) {
            self.error(i, format!("'{var}' is not declared type(HLSStream) in {sub}"));
            return None;
        }
        if !self.registry.instantiated().contains(&tag) {
            self.error(i, format!("stream type '{tag}' is not instantiated by proto_hls_stream"));
            return None;
        }
        if let Err(e) = self.registry.register(&sub, &var, &tag) {
            self.error(i, e.to_string());
            return None;
        }
        Some(format!("call set_depth_{tag}({var}%data_{tag}, {depth})"))
    }

    /// Rewrites generic stream calls on line `i` to their typed variants.
    fn resolve(&mut self, i: usize, raw: &str, reg: Option<&StreamTypeRegistry>) -> String {
        let Some(reg) = reg else { return raw.to_string() };
        let code_end = comment_start(raw).unwrap_or(raw.len());
        let code = &raw[..code_end];
        let strings = string_spans(code);
        let mut out = String::new();
        let mut last = 0;
        let matches: Vec<(usize, usize, String)> = self
            .patterns
            .generic
            .captures_iter(code)
            .map(|c| {
                let m = c.get(0).expect("whole match");
                (m.start(), m.end(), c[1].to_ascii_lowercase())
            })
            .collect();
        for (start, open_end, op) in matches {
            if start < last || strings.iter().any(|&(a, b)| start >= a && start < b) {
                continue;
            }
            if code[..start].ends_with('%') {
                continue;
            }
            let Some(close) = matching_paren(code, open_end - 1) else {
                self.error(i, format!("unbalanced parentheses in hls_{op} call"));
                continue;
            };
            let inner = &code[open_end..close];
            let args = split_top_level(inner, ',');
            let expected = if op == "write" { 2 } else { 1 };
            if args.len() != expected {
                self.error(i, format!("hls_{op} takes {expected} argument(s)"));
                continue;
            }
            let stream = args[expected - 1].trim().to_ascii_lowercase();
            if stream.is_empty() || !stream.bytes().all(|b| b.is_ascii_alphanumeric() || b == b'_') {
                self.error(i, format!("stream argument of hls_{op} must be a variable name, found '{stream}'"));
                continue;
            }
            let Some((sub, _)) = self.unit_name(i) else {
                self.error(i, format!("hls_{op} outside any subroutine"));
                continue;
            };
            let tag = match reg.lookup(&sub, &stream) {
                Ok(t) => t.to_string(),
                Err(_) => {
                    self.error(
                        i,
                        format!("stream '{stream}' has no type in {sub}; add set_hls_stream_type({stream}, <type>)"),
                    );
                    continue;
                }
            };
            out.push_str(&code[last..start]);
            let field = format!("{stream}%data_{tag}");
            match op.as_str() {
                "write" => out.push_str(&format!("hls_lowered_write_{tag}({}, {field})", args[0].trim())),
                "read" => out.push_str(&format!("hls_lowered_read_{tag}({field})")),
                _ => out.push_str(&format!("hls_{op}_{tag}({field})")),
            }
            last = close + 1;
        }
        out.push_str(&raw[last..]);
        out
    }
}

fn matching_paren(s: &str, open: usize) -> Option<usize> {
    let mut depth = 0;
    let mut quote: Option<char> = None;
    for (i, c) in s[open..].char_indices() {
        match quote {
            Some(q) if c == q => quote = None,
            Some(_) => {}
            None => match c {
                '\'' | '"' => quote = Some(c),
                '(' => depth += 1,
                ')' => {
                    depth -= 1;
                    if depth == 0 {
                        return Some(open + i);
                    }
                }
                _ => {}
            },
        }
    }
    None
}

/// Replaces each `!$HLS` directive by a placeholder call. Function-scope
/// directives in a unit's specification part are moved to the start of its
/// executable part.
pub fn rewrite_pragmas(
    unit: &SourceUnit,
    prefix: &str,
) -> Result<(SourceUnit, Vec<PragmaDescriptor>), PreprocessError> {
    let (u, pragmas, _) = Engine::new(unit).run(Passes { pragmas: Some(prefix), ..Passes::default() })?;
    Ok((u, pragmas))
}

/// Expands `proto_hls_stream` into the `hls_stream` module and each
/// `set_hls_stream_type` into its typed set-depth call.
pub fn expand_stream_macros(unit: &SourceUnit) -> Result<(SourceUnit, StreamTypeRegistry), PreprocessError> {
    let (u, _, reg) = Engine::new(unit).run(Passes { macros: true, ..Passes::default() })?;
    Ok((u, reg))
}

/// Rewrites generic `hls_write`/`hls_read`/`hls_empty`/`hls_full` calls to
/// the variants for each stream's registered type.
pub fn resolve_stream_calls(unit: &SourceUnit, reg: &StreamTypeRegistry) -> Result<SourceUnit, PreprocessError> {
    let (u, _, _) = Engine::new(unit).run(Passes { resolve: Some(reg), ..Passes::default() })?;
    Ok(u)
}

/// All three rewrites in one pass over the original text, so every
/// diagnostic points at an input line.
pub fn preprocess(unit: &SourceUnit, prefix: &str) -> Result<Preprocessed, PreprocessError> {
    let (_, registry) = expand_stream_macros(unit)?;
    let passes = Passes { pragmas: Some(prefix), macros: true, resolve: Some(&registry) };
    let (out, pragmas, reg) = Engine::new(unit).run(passes)?;
    debug_assert_eq!(reg, registry);
    Ok(Preprocessed { unit: out, pragmas, registry })
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::pragma::DEFAULT_PREFIX;

    const LISTING: &str = "\
proto_hls_stream(integer)

subroutine f(a, b)
    use hls_stream

    integer, dimension(100) :: a, b
    type(HLSStream) :: s

    set_hls_stream_type(s, integer)

    do i = 1,100
        call hls_write(a(i), s)
    end do

    do i = 1,100
        b(i) = hls_read(s)
    end do
end subroutine
";

    #[test]
    fn stream_example_expands_and_resolves() {
        let p = preprocess(&SourceUnit::new("f.f90", LISTING), DEFAULT_PREFIX).unwrap();
        let text = &p.unit.text;
        assert!(text.starts_with("module hls_stream\n"), "{text}");
        assert!(text.contains("  subroutine hls_lowered_write_integer(input_data, stream_data)\n    integer, value :: input_data\n    integer :: stream_data\n"));
        assert!(text.contains("  type :: HLSStream\n    integer :: data_integer\n  end type HLSStream\n"));
        assert!(text.contains("\n    call set_depth_integer(s%data_integer, 0)\n"));
        assert!(text.contains("\n        call hls_lowered_write_integer(a(i), s%data_integer)\n"));
        assert!(text.contains("\n        b(i) = hls_lowered_read_integer(s%data_integer)\n"));
        for token in ["hls_write(", "hls_read(", "hls_empty(", "hls_full("] {
            assert!(!text.contains(token), "{token}");
        }
        assert_eq!(p.registry.to_string(), "# types: integer\nf\ts\tinteger\n");
        assert!(p.pragmas.is_empty());
    }

    #[test]
    fn pragmas_in_place_and_deferred() {
        let src = "\
subroutine k(a, n)
  integer :: n
  !$HLS INTERFACE PORT=a MODE=m_axi
  real :: a(n)
  !$hls dataflow
  do i = 1, n
    !$HLS PIPELINE II=4
    a(i) = 0 ! keep
  end do
end subroutine k
";
        let (out, pragmas) = rewrite_pragmas(&SourceUnit::new("k.f90", src), DEFAULT_PREFIX).unwrap();
        assert_eq!(
            out.text,
            "\
subroutine k(a, n)
  integer :: n
  real :: a(n)
  call _fhls_interface__port_a__mode_m_axi()
  call _fhls_dataflow()
  do i = 1, n
    call _fhls_pipeline__ii_4()
    a(i) = 0 ! keep
  end do
end subroutine k
"
        );
        let shown: Vec<String> = pragmas.iter().map(|p| format!("{}@{}", p, p.location.as_ref().unwrap())).collect();
        assert_eq!(shown, vec!["interface port=a mode=m_axi@k.f90:3", "dataflow@k.f90:5", "pipeline ii=4@k.f90:7"]);
        // Idempotent on its own output.
        let (again, none) = rewrite_pragmas(&out, DEFAULT_PREFIX).unwrap();
        assert_eq!(again, out);
        assert!(none.is_empty());
    }

    #[test]
    fn identity_without_directives_or_macros() {
        let src = "subroutine k(x)\n  real :: x\n  x = 1.0 ! hls_read(s)\n  print *, 'hls_write(a, s)'\nend\n";
        let u = SourceUnit::new("k.f90", src);
        let p = preprocess(&u, DEFAULT_PREFIX).unwrap();
        assert_eq!(p.unit, u);
        assert!(p.pragmas.is_empty() && p.registry.is_empty());
    }

    #[test]
    fn diagnostics() {
        let cases = [
            ("subroutine k\n  !$HLS PIPELINE\nend\n", "k.f90:2: error: pipeline must appear inside a do loop body"),
            ("subroutine k\n  do i=1,2\n  !$HLS BOGUS\n  end do\nend\n", "k.f90:3: error: unknown pragma kind 'BOGUS'"),
            ("subroutine k\n  do i=1,2\n  !$HLS UNROLL FACTOR\n  end do\nend\n", "k.f90:3: error: malformed argument 'FACTOR': expected KEY=VALUE"),
            ("subroutine k\n  do i=1,2\n  !$HLS UNROLL FACTOR=a__b\n  end do\nend\n", "k.f90:3: error: value 'a__b' of 'factor' contains '__'"),
            ("!$HLS DATAFLOW\n", "k.f90:1: error: dataflow must appear inside a subroutine or function"),
            ("proto_hls_stream(integer3)\n", "k.f90:1: error: unsupported stream type 'integer3'"),
            (
                "proto_hls_stream(integer)\nsubroutine k\n  type(HLSStream) :: s\n  set_hls_stream_type(t, integer)\nend\n",
                "k.f90:4: error: 't' is not declared type(HLSStream) in k",
            ),
            (
                "proto_hls_stream(integer)\nsubroutine k\n  type(HLSStream) :: s\n  set_hls_stream_type(s, integer)\n  set_hls_stream_type(s, integer)\nend\n",
                "k.f90:5: error: stream 's' in k is already typed as integer",
            ),
            (
                "proto_hls_stream(integer)\nsubroutine k\n  type(HLSStream) :: s\n  x = hls_read(s)\nend\n",
                "k.f90:4: error: stream 's' has no type in k; add set_hls_stream_type(s, <type>)",
            ),
        ];
        for (src, expected) in cases {
            let err = preprocess(&SourceUnit::new("k.f90", src), DEFAULT_PREFIX).unwrap_err();
            assert_eq!(err.diagnostics[0].to_string(), expected, "{src}");
        }
        let long = "subroutine k\n  !$HLS ARRAY_PARTITION VARIABLE=x_max TYPE=cyclic FACTOR=4 DIM=1\nend\n";
        let err = rewrite_pragmas(&SourceUnit::new("k.f90", long), DEFAULT_PREFIX).unwrap_err();
        assert!(err.to_string().starts_with("k.f90:2: error: placeholder name"), "{err}");
    }

    #[test]
    fn empty_full_and_depth_extension() {
        let src = "\
proto_hls_stream(real8, logical1)
subroutine k(x)
  type(HLSStream) :: s, t
  real(kind=8) :: x
  set_hls_stream_type(s, real8, depth=16)
  set_hls_stream_type(t, logical1)
  if (.not. hls_full(s) .and. hls_empty(t)) call hls_write(x * 2.0d0, s)
end subroutine
";
        let p = preprocess(&SourceUnit::new("k.f90", src), DEFAULT_PREFIX).unwrap();
        let text = &p.unit.text;
        assert!(text.contains("  call set_depth_real8(s%data_real8, 16)\n"), "{text}");
        assert!(text.contains(
            "  if (.not. hls_full_real8(s%data_real8) .and. hls_empty_logical1(t%data_logical1)) call hls_lowered_write_real8(x * 2.0d0, s%data_real8)\n"
        ));
        assert!(text.contains("    real(kind=8) :: data_real8\n"));
        assert!(text.contains("    logical(kind=1) :: data_logical1\n"));
    }
}
