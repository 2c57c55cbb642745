use std::fmt;

use thiserror::Error;

/// One Fortran source file.
#[derive(Clone, Debug, PartialEq, Eq)]
pub struct SourceUnit {
    pub path: String,
    pub text: String,
    /// Byte offset of the start of each line.
    line_starts: Vec<usize>,
}

impl SourceUnit {
    pub fn new(path: impl Into<String>, text: impl Into<String>) -> SourceUnit {
        let text = text.into();
        let mut line_starts = vec![0];
        line_starts.extend(text.match_indices('\n').map(|(i, _)| i + 1).filter(|&i| i < text.len()));
        SourceUnit { path: path.into(), text, line_starts }
    }

    /// Lines without their terminators.
    pub fn lines(&self) -> Vec<&str> {
        self.text.lines().collect()
    }

    pub fn line_count(&self) -> usize {
        if self.text.is_empty() {
            0
        } else {
            self.line_starts.len()
        }
    }

    /// 1-based line containing byte `offset`.
    pub fn line_of(&self, offset: usize) -> usize {
        self.line_starts.partition_point(|&s| s <= offset)
    }

    pub fn ends_with_newline(&self) -> bool {
        self.text.ends_with('\n')
    }

    /// File name without directory and extension.
    pub fn stem(&self) -> &str {
        let name = self.path.rsplit(['/', '\\']).next().unwrap_or(&self.path);
        name.rsplit_once('.').map_or(name, |(stem, _)| stem)
    }
}

#[derive(Clone, Copy, Debug, PartialEq, Eq)]
pub enum Severity {
    Error,
    Warning,
}

impl fmt::Display for Severity {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        f.write_str(match self {
            Severity::Error => "error",
            Severity::Warning => "warning",
        })
    }
}

/// `file:line: severity: message`
#[derive(Clone, Debug, PartialEq, Eq)]
pub struct Diagnostic {
    pub file: String,
    pub line: usize,
    pub severity: Severity,
    pub message: String,
}

impl fmt::Display for Diagnostic {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        write!(f, "{}:{}: {}: {}", self.file, self.line, self.severity, self.message)
    }
}

#[derive(Clone, Debug, Error, PartialEq, Eq)]
#[error("{}", .diagnostics.iter().map(ToString::to_string).collect::<Vec<_>>().join("\n"))]
pub struct PreprocessError {
    pub diagnostics: Vec<Diagnostic>,
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn line_index_covers_every_offset() {
        let u = SourceUnit::new("dir/k.f90", "ab\ncd\n\nef");
        assert_eq!(u.line_count(), 4);
        let lines: Vec<usize> = (0..u.text.len()).map(|o| u.line_of(o)).collect();
        assert_eq!(lines, vec![1, 1, 1, 2, 2, 2, 3, 4, 4]);
        assert_eq!(u.stem(), "k");
        assert_eq!(SourceUnit::new("x", "a\n").line_count(), 1);
    }

    #[test]
    fn diagnostic_format() {
        let d = Diagnostic { file: "k.f90".into(), line: 3, severity: Severity::Error, message: "bad".into() };
        assert_eq!(d.to_string(), "k.f90:3: error: bad");
    }
}
