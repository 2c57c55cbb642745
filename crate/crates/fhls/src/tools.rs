//! External front end and assembler, run as isolated subprocesses.

use std::io::Read;
use std::path::{Path, PathBuf};
use std::process::{Command, Stdio};
use std::time::{Duration, Instant};

use thiserror::Error;

#[derive(Debug, Error)]
pub enum ToolError {
    #[error("cannot run {path}: {source}")]
    Spawn { path: String, source: std::io::Error },
    #[error("{path} timed out after {secs:.1}s")]
    Timeout { path: String, secs: f64 },
    #[error("{path} exited with {status}{}", captured(.stdout, .stderr))]
    Failed { path: String, status: String, stdout: String, stderr: String },
    #[error("{path} produced no output{}", captured("", .stderr))]
    NoOutput { path: String, stderr: String },
}

fn captured(stdout: &str, stderr: &str) -> String {
    let mut s = String::new();
    for (label, text) in [("stdout", stdout), ("stderr", stderr)] {
        if !text.trim().is_empty() {
            s.push_str(&format!("\n--- {label} ---\n{}", text.trim_end()));
        }
    }
    s
}

#[derive(Debug)]
pub struct ToolOutput {
    pub stdout: Vec<u8>,
    pub stderr: String,
}

/// Substitutes `{input}` and `{output}`; appends the input when the template
/// does not mention it.
pub fn expand_args(template: &[String], input: &Path, output: Option<&Path>) -> Vec<String> {
    let input_s = input.display().to_string();
    let output_s = output.map(|p| p.display().to_string()).unwrap_or_default();
    let mut args: Vec<String> =
        template.iter().map(|a| a.replace("{input}", &input_s).replace("{output}", &output_s)).collect();
    if !template.iter().any(|a| a.contains("{input}")) {
        args.push(input_s);
    }
    args
}

/// Runs `path args`, capturing both streams, killing it after `timeout`.
pub fn run_tool(path: &Path, args: &[String], timeout: Duration) -> Result<ToolOutput, ToolError> {
    let name = path.display().to_string();
    let mut child = Command::new(path)
        .args(args)
        .stdin(Stdio::null())
        .stdout(Stdio::piped())
        .stderr(Stdio::piped())
        .spawn()
        .map_err(|source| ToolError::Spawn { path: name.clone(), source })?;
    let mut out_pipe = child.stdout.take().expect("piped stdout");
    let mut err_pipe = child.stderr.take().expect("piped stderr");
    let out_reader = std::thread::spawn(move || {
        let mut buf = Vec::new();
        let _ = out_pipe.read_to_end(&mut buf);
        buf
    });
    let err_reader = std::thread::spawn(move || {
        let mut buf = Vec::new();
        let _ = err_pipe.read_to_end(&mut buf);
        buf
    });
    let start = Instant::now();
    let status = loop {
        match child.try_wait() {
            Ok(Some(status)) => break status,
            Ok(None) if start.elapsed() >= timeout => {
                let _ = child.kill();
                let _ = child.wait();
                return Err(ToolError::Timeout { path: name, secs: timeout.as_secs_f64() });
            }
            Ok(None) => std::thread::sleep(Duration::from_millis(5)),
            Err(source) => return Err(ToolError::Spawn { path: name, source }),
        }
    };
    let stdout = out_reader.join().unwrap_or_default();
    let stderr = String::from_utf8_lossy(&err_reader.join().unwrap_or_default()).into_owned();
    if !status.success() {
        return Err(ToolError::Failed {
            path: name,
            status: status.to_string(),
            stdout: String::from_utf8_lossy(&stdout).into_owned(),
            stderr,
        });
    }
    Ok(ToolOutput { stdout, stderr })
}

/// Runs the front end on a preprocessed source file; returns its IR text.
pub fn invoke_frontend(
    frontend: &Path,
    args: &[String],
    source: &Path,
    timeout: Duration,
) -> Result<String, ToolError> {
    let out = run_tool(frontend, &expand_args(args, source, None), timeout)?;
    if out.stdout.iter().all(u8::is_ascii_whitespace) {
        return Err(ToolError::NoOutput { path: frontend.display().to_string(), stderr: out.stderr });
    }
    Ok(String::from_utf8_lossy(&out.stdout).into_owned())
}

/// Assembles `input` into `output`, which must then exist and be non-empty.
pub fn assemble(
    assembler: &Path,
    args: &[String],
    input: &Path,
    output: &Path,
    timeout: Duration,
) -> Result<(), ToolError> {
    let out = run_tool(assembler, &expand_args(args, input, Some(output)), timeout)?;
    match std::fs::metadata(output) {
        Ok(m) if m.len() > 0 => Ok(()),
        _ => Err(ToolError::NoOutput { path: assembler.display().to_string(), stderr: out.stderr }),
    }
}

fn on_path(name: &str) -> Option<PathBuf> {
    let paths = std::env::var_os("PATH")?;
    std::env::split_paths(&paths).map(|d| d.join(name)).find(|p| p.is_file())
}

/// A v7-dialect assembler found on this machine, for gated checks.
#[derive(Clone, Debug, PartialEq, Eq)]
pub struct AssemblerSpec {
    pub path: PathBuf,
    pub args: Vec<String>,
    /// True when clang stands in for a real version-7 assembler.
    pub proxy: bool,
}

/// `FHLS_ASSEMBLER`, then `llvm-as-7`, `llvm-as`, then clang used as a
/// typed-pointer IR assembler.
pub fn find_v7_assembler() -> Option<AssemblerSpec> {
    let plain = |path: PathBuf| AssemblerSpec {
        path,
        args: crate::config::DEFAULT_ASSEMBLER_ARGS.split_whitespace().map(str::to_string).collect(),
        proxy: false,
    };
    if let Some(p) = std::env::var_os("FHLS_ASSEMBLER").filter(|v| !v.is_empty()) {
        return Some(plain(PathBuf::from(p)));
    }
    if let Some(p) = on_path("llvm-as-7").or_else(|| on_path("llvm-as")) {
        return Some(plain(p));
    }
    ["clang", "clang-14"].into_iter().find_map(on_path).map(|path| AssemblerSpec {
        path,
        args: ["-Wno-override-module", "-x", "ir", "-c", "{input}", "-o", "{output}"].map(str::to_string).to_vec(),
        proxy: true,
    })
}
