use std::path::PathBuf;
use std::process::ExitCode;
use std::time::Duration;

use clap::{Args, Parser, Subcommand};
use fhls::config::parse_default_pointee;
use fhls::{run_all, Command, DriverConfig, DriverError, Mode};

#[derive(Parser, Debug)]
#[command(name = "fhls", version, about = "Lower Fortran kernels to HLS-ready v7 IR")]
struct Cli {
    #[command(subcommand)]
    command: Cmd,
}

#[derive(Subcommand, Debug)]
enum Cmd {
    /// Rewrite pragma directives and stream macros in Fortran sources.
    Preprocess(Opts),
    /// Lower IR files (pragmas, streams, downgrade) to v7 text.
    Lower(Opts),
    /// Preprocess, run the front end and lower to v7.
    Build(Opts),
}

#[derive(Args, Debug)]
struct Opts {
    /// Input files (.f90 or .ll).
    #[arg(required = true)]
    inputs: Vec<PathBuf>,
    /// Output directory.
    #[arg(short = 'o', long = "output-dir")]
    output_dir: Option<PathBuf>,
    /// `key = value` configuration file.
    #[arg(long)]
    config: Option<PathBuf>,
    /// full | ir-only
    #[arg(long)]
    mode: Option<String>,
    #[arg(long)]
    frontend_path: Option<PathBuf>,
    /// Front-end timeout in seconds.
    #[arg(long)]
    frontend_timeout: Option<f64>,
    #[arg(long)]
    assembler_path: Option<PathBuf>,
    #[arg(long)]
    intrinsic_map: Option<PathBuf>,
    #[arg(long)]
    whitelist: Option<PathBuf>,
    #[arg(long)]
    pragma_prefix: Option<String>,
    /// i8 | none: pointee for pointers with no typed use.
    #[arg(long)]
    default_pointee: Option<String>,
    #[arg(long)]
    keep_intermediates: bool,
    #[arg(long)]
    allow_skipped_pragmas: bool,
    #[arg(long)]
    dump_loops: bool,
    #[arg(long)]
    dump_pragmas: bool,
    /// Write `<kernel>.renames` with every symbol rename.
    #[arg(long)]
    rename_map: bool,
    /// Print per-stage timings.
    #[arg(long)]
    timings: bool,
}

fn configure(o: Opts) -> Result<(DriverConfig, bool), DriverError> {
    let mut cfg = DriverConfig::from_env();
    if let Some(p) = &o.config {
        cfg.apply_file(p)?;
    }
    cfg.inputs = o.inputs;
    if let Some(m) = &o.mode {
        cfg.mode = Mode::parse(m)?;
    }
    if let Some(secs) = o.frontend_timeout {
        if !(secs > 0.0 && secs.is_finite()) {
            return Err(DriverError::Config("--frontend-timeout must be positive".into()));
        }
        cfg.frontend_timeout = Duration::from_secs_f64(secs);
    }
    if let Some(v) = &o.default_pointee {
        cfg.default_pointee_i8 = parse_default_pointee(v)?;
    }
    macro_rules! set {
        ($($field:ident <- $opt:ident),*) => { $(if let Some(v) = o.$opt { cfg.$field = v.into(); })* };
    }
    set!(output_dir <- output_dir, frontend_path <- frontend_path, assembler_path <- assembler_path,
         intrinsic_map <- intrinsic_map, whitelist <- whitelist, pragma_prefix <- pragma_prefix);
    cfg.keep_intermediates |= o.keep_intermediates;
    cfg.allow_skipped_pragmas |= o.allow_skipped_pragmas;
    cfg.dump_loops = o.dump_loops;
    cfg.dump_pragmas = o.dump_pragmas;
    cfg.rename_map = o.rename_map;
    Ok((cfg, o.timings))
}

fn main() -> ExitCode {
    let cli = match Cli::try_parse() {
        Ok(c) => c,
        Err(e) => {
            let _ = e.print();
            return ExitCode::from(if e.use_stderr() { 1 } else { 0 });
        }
    };
    let (command, opts) = match cli.command {
        Cmd::Preprocess(o) => (Command::Preprocess, o),
        Cmd::Lower(o) => (Command::Lower, o),
        Cmd::Build(o) => (Command::Build, o),
    };
    let fail = |e: DriverError| {
        eprintln!("fhls: {e}");
        ExitCode::from(e.exit_code() as u8)
    };
    let (mut cfg, timings) = match configure(opts) {
        Ok(c) => c,
        Err(e) => return fail(e),
    };
    if command == Command::Lower {
        cfg.mode = Mode::IrOnly;
    }
    let results = match run_all(&cfg, command) {
        Ok(r) => r,
        Err(e) => return fail(e),
    };
    let mut code = 0;
    for result in results {
        match result {
            Ok(report) => {
                if let Some(d) = &report.loop_dump {
                    print!("loops for {}:\n{d}", report.kernel);
                }
                if let Some(d) = &report.pragma_dump {
                    print!("pragmas for {}:\n{d}", report.kernel);
                }
                print!("{}", report.summary());
                if timings {
                    print!("{}", report.timing_text());
                }
                for out in &report.outputs {
                    println!("wrote {}", out.display());
                }
            }
            Err(e) => {
                eprintln!("fhls: {e}");
                if code == 0 {
                    code = e.exit_code();
                }
            }
        }
    }
    ExitCode::from(code as u8)
}
