//! Driver configuration: built-in defaults, then `FHLS_FRONTEND` /
//! `FHLS_ASSEMBLER`, then a `key = value` config file, then flags.

use std::path::{Path, PathBuf};
use std::time::Duration;

use crate::DriverError;

#[derive(Clone, Copy, Debug, PartialEq, Eq)]
pub enum Mode {
    /// Run the external front end on preprocessed Fortran.
    Full,
    /// Ingest IR that was generated beforehand.
    IrOnly,
}

impl Mode {
    pub fn parse(s: &str) -> Result<Mode, DriverError> {
        match s {
            "full" => Ok(Mode::Full),
            "ir-only" => Ok(Mode::IrOnly),
            _ => Err(DriverError::Config(format!("unknown mode '{s}' (expected full or ir-only)"))),
        }
    }
}

#[derive(Clone, Debug, PartialEq, Eq)]
pub struct DriverConfig {
    pub inputs: Vec<PathBuf>,
    pub mode: Mode,
    pub frontend_path: Option<PathBuf>,
    /// Front-end arguments; `{input}` is the preprocessed source (appended
    /// when absent). The IR is read from standard output.
    pub frontend_args: Vec<String>,
    pub frontend_timeout: Duration,
    pub assembler_path: Option<PathBuf>,
    /// `{input}` is the v7 text file, `{output}` the `.xpirbc` file.
    pub assembler_args: Vec<String>,
    pub intrinsic_map: Option<PathBuf>,
    pub whitelist: Option<PathBuf>,
    pub pragma_prefix: String,
    pub output_dir: PathBuf,
    pub keep_intermediates: bool,
    pub allow_skipped_pragmas: bool,
    /// Pointee for pointers with no typed use.
    pub default_pointee_i8: bool,
    pub dump_loops: bool,
    pub dump_pragmas: bool,
    pub rename_map: bool,
}

pub const DEFAULT_FRONTEND_ARGS: &str = "-S -emit-llvm -o - {input}";
pub const DEFAULT_ASSEMBLER_ARGS: &str = "{input} -o {output}";

fn split_args(s: &str) -> Vec<String> {
    s.split_whitespace().map(str::to_string).collect()
}

impl Default for DriverConfig {
    fn default() -> Self {
        DriverConfig {
            inputs: Vec::new(),
            mode: Mode::Full,
            frontend_path: None,
            frontend_args: split_args(DEFAULT_FRONTEND_ARGS),
            frontend_timeout: Duration::from_secs(120),
            assembler_path: None,
            assembler_args: split_args(DEFAULT_ASSEMBLER_ARGS),
            intrinsic_map: None,
            whitelist: None,
            pragma_prefix: fhls_core::pragma::DEFAULT_PREFIX.to_string(),
            output_dir: PathBuf::from("."),
            keep_intermediates: false,
            allow_skipped_pragmas: false,
            default_pointee_i8: false,
            dump_loops: false,
            dump_pragmas: false,
            rename_map: false,
        }
    }
}

fn parse_bool(key: &str, v: &str) -> Result<bool, DriverError> {
    match v {
        "true" | "yes" | "1" | "on" => Ok(true),
        "false" | "no" | "0" | "off" => Ok(false),
        _ => Err(DriverError::Config(format!("{key}: expected true or false, found '{v}'"))),
    }
}

impl DriverConfig {
    /// Defaults plus the environment's tool paths.
    pub fn from_env() -> DriverConfig {
        let mut cfg = DriverConfig::default();
        let var = |k: &str| std::env::var_os(k).filter(|v| !v.is_empty()).map(PathBuf::from);
        cfg.frontend_path = var("FHLS_FRONTEND");
        cfg.assembler_path = var("FHLS_ASSEMBLER");
        cfg
    }

    /// Applies a config file. Relative paths resolve against the file's
    /// directory.
    pub fn apply_file(&mut self, path: &Path) -> Result<(), DriverError> {
        let text = std::fs::read_to_string(path)
            .map_err(|e| DriverError::Config(format!("cannot read config {}: {e}", path.display())))?;
        let base = path.parent().unwrap_or(Path::new("."));
        self.apply_text(&text, base).map_err(|e| DriverError::Config(format!("{}: {}", path.display(), e.message())))
    }

    pub fn apply_text(&mut self, text: &str, base: &Path) -> Result<(), DriverError> {
        for (i, raw) in text.lines().enumerate() {
            let line = raw.trim();
            if line.is_empty() || line.starts_with('#') {
                continue;
            }
            let err = |m: String| DriverError::Config(format!("line {}: {m}", i + 1));
            let (key, value) = line.split_once('=').ok_or_else(|| err("expected `key = value`".into()))?;
            let (key, value) = (key.trim(), value.trim());
            let path = || base.join(value);
            match key {
                "mode" => self.mode = Mode::parse(value).map_err(|e| err(e.message()))?,
                "frontend" => self.frontend_path = Some(path()),
                "frontend_args" => self.frontend_args = split_args(value),
                "frontend_timeout" => {
                    let secs: f64 =
                        value.parse().map_err(|_| err(format!("frontend_timeout: bad number '{value}'")))?;
                    if !(secs > 0.0 && secs.is_finite()) {
                        return Err(err("frontend_timeout must be positive".into()));
                    }
                    self.frontend_timeout = Duration::from_secs_f64(secs);
                }
                "assembler" => self.assembler_path = Some(path()),
                "assembler_args" => self.assembler_args = split_args(value),
                "intrinsic_map" => self.intrinsic_map = Some(path()),
                "whitelist" => self.whitelist = Some(path()),
                "pragma_prefix" => self.pragma_prefix = value.to_string(),
                "output_dir" => self.output_dir = path(),
                "keep_intermediates" => {
                    self.keep_intermediates = parse_bool(key, value).map_err(|e| err(e.message()))?
                }
                "allow_skipped_pragmas" => {
                    self.allow_skipped_pragmas = parse_bool(key, value).map_err(|e| err(e.message()))?
                }
                "default_pointee" => {
                    self.default_pointee_i8 = parse_default_pointee(value).map_err(|e| err(e.message()))?
                }
                _ => return Err(err(format!("unknown key '{key}'"))),
            }
        }
        Ok(())
    }

    /// Invariants that must hold before any work starts.
    pub fn check(&self) -> Result<(), DriverError> {
        if self.mode == Mode::Full && self.frontend_path.is_none() {
            return Err(DriverError::Config(
                "full mode needs a front end (--frontend-path, `frontend =` or FHLS_FRONTEND)".into(),
            ));
        }
        if self.pragma_prefix.is_empty()
            || !self.pragma_prefix.bytes().all(|b| b.is_ascii_alphanumeric() || b == b'_')
            || self.pragma_prefix.contains("__")
            || self.pragma_prefix.ends_with('_')
        {
            return Err(DriverError::Config(format!(
                "pragma prefix '{}' must be letters, digits and single inner underscores",
                self.pragma_prefix
            )));
        }
        if self.inputs.is_empty() {
            return Err(DriverError::Usage("no input files".into()));
        }
        Ok(())
    }
}

pub fn parse_default_pointee(v: &str) -> Result<bool, DriverError> {
    match v {
        "i8" => Ok(true),
        "none" => Ok(false),
        _ => Err(DriverError::Config(format!("default pointee must be i8 or none, found '{v}'"))),
    }
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn config_text_layers_over_defaults() {
        let mut cfg = DriverConfig::default();
        cfg.apply_text(
            "# comment\nmode = ir-only\nfrontend = bin/flang-new\nfrontend_timeout = 2.5\nkeep_intermediates = yes\n",
            Path::new("/etc/fhls"),
        )
        .unwrap();
        assert_eq!(cfg.mode, Mode::IrOnly);
        assert_eq!(cfg.frontend_path, Some(PathBuf::from("/etc/fhls/bin/flang-new")));
        assert_eq!(cfg.frontend_timeout, Duration::from_millis(2500));
        assert!(cfg.keep_intermediates);
        assert_eq!(cfg.pragma_prefix, "_fhls");
    }

    #[test]
    fn config_errors_name_the_line() {
        let mut cfg = DriverConfig::default();
        let e = cfg.apply_text("mode = ir-only\ncolour = blue\n", Path::new(".")).unwrap_err();
        assert_eq!(e.to_string(), "config error: line 2: unknown key 'colour'");
        let e = cfg.apply_text("just words\n", Path::new(".")).unwrap_err();
        assert_eq!(e.exit_code(), 1);
    }

    #[test]
    fn full_mode_without_front_end_is_rejected() {
        let cfg = DriverConfig { inputs: vec!["k.f90".into()], ..DriverConfig::default() };
        let e = cfg.check().unwrap_err();
        assert!(matches!(e, DriverError::Config(_)));
        assert_eq!(e.exit_code(), 1);
    }
}
