use std::fmt::Write as _;
use std::fs;
use std::path::{Path, PathBuf};
use std::time::{Duration, Instant};

use fhls_core::cfg::{analyze, ControlFlowGraph};
use fhls_core::downgrade::{downgrade, normalize_symbol_names, AttributeWhitelist, DowngradeOptions, InferOptions};
use fhls_core::fortran::{preprocess, SourceUnit};
use fhls_core::ir::{parse_module, print_module, validate_v7, Dialect, IRModule, TypeExpr, Violation};
use fhls_core::pragma::{lower_pragmas, IntrinsicMap, PragmaError, PragmaOptions};
use fhls_core::stream::{lower_streams, StreamTypeRegistry};

use crate::config::{DriverConfig, Mode};
use crate::tools;
use crate::{DriverError, Stage};

#[derive(Clone, Copy, Debug, PartialEq, Eq)]
pub enum Command {
    /// Fortran in, preprocessed Fortran (and stream sidecar) out.
    Preprocess,
    /// IR in, v7 out.
    Lower,
    /// Fortran or IR in, v7 out.
    Build,
}

#[derive(Clone, Debug, Default, PartialEq, Eq)]
pub struct PipelineReport {
    pub kernel: String,
    pub timings: Vec<(Stage, Duration)>,
    /// Set by the `preprocess` command, which stops after that stage.
    pub preprocess_only: bool,
    pub directives_rewritten: usize,
    pub streams_declared: usize,
    pub pragmas_lowered: usize,
    pub pragmas_skipped: usize,
    pub streams_lowered: usize,
    pub stream_primitives: usize,
    pub attributes_stripped: usize,
    pub metadata_removed: usize,
    pub symbols_renamed: usize,
    pub pointers_typed: usize,
    pub violations: Vec<Violation>,
    pub outputs: Vec<PathBuf>,
    pub pragma_dump: Option<String>,
    pub loop_dump: Option<String>,
}

impl PipelineReport {
    /// Counts and validation result; no timings, so it is reproducible.
    pub fn summary(&self) -> String {
        let mut s = String::new();
        let _ = writeln!(s, "kernel: {}", self.kernel);
        if self.preprocess_only {
            let _ = writeln!(s, "directives rewritten: {}", self.directives_rewritten);
            let _ = writeln!(s, "streams declared: {}", self.streams_declared);
            return s;
        }
        for (label, n) in [
            ("directives rewritten", self.directives_rewritten),
            ("pragmas lowered", self.pragmas_lowered),
            ("pragmas skipped", self.pragmas_skipped),
            ("streams lowered", self.streams_lowered),
            ("stream primitives", self.stream_primitives),
            ("attributes stripped", self.attributes_stripped),
            ("metadata removed", self.metadata_removed),
            ("symbols renamed", self.symbols_renamed),
            ("pointers typed", self.pointers_typed),
        ] {
            let _ = writeln!(s, "{label}: {n}");
        }
        if self.violations.is_empty() {
            s.push_str("validation: clean\n");
        } else {
            let _ = writeln!(s, "validation: {} violation(s)", self.violations.len());
            for v in &self.violations {
                let _ = writeln!(s, "  {v}");
            }
        }
        s
    }

    pub fn timing_text(&self) -> String {
        let mut s = String::new();
        for (stage, d) in &self.timings {
            let _ = writeln!(s, "  {:<10} {:>9.3} ms", stage.name(), d.as_secs_f64() * 1e3);
        }
        s
    }
}

/// Loaded once and shared by every kernel.
struct Context<'a> {
    cfg: &'a DriverConfig,
    command: Command,
    map: IntrinsicMap,
    whitelist: AttributeWhitelist,
}

#[derive(Clone, Debug)]
struct Job {
    name: String,
    fortran: Option<PathBuf>,
    ir: Option<PathBuf>,
    sidecar: Option<PathBuf>,
}

fn is_fortran(p: &Path) -> bool {
    p.extension().and_then(|e| e.to_str()).is_some_and(|e| ["f90", "f95", "f03", "f08", "f", "F90", "F"].contains(&e))
}

fn is_ir(p: &Path) -> bool {
    p.extension().is_some_and(|e| e == "ll")
}

fn plan(cfg: &DriverConfig, command: Command) -> Result<Vec<Job>, DriverError> {
    let mut jobs: Vec<Job> = Vec::new();
    for input in &cfg.inputs {
        let name = input
            .file_stem()
            .and_then(|s| s.to_str())
            .ok_or_else(|| DriverError::Usage(format!("bad input path {}", input.display())))?
            .to_string();
        let ir_job = || {
            let sidecar = input.with_extension("streams");
            Job {
                name: name.clone(),
                fortran: None,
                ir: Some(input.clone()),
                sidecar: sidecar.is_file().then_some(sidecar),
            }
        };
        let job = match command {
            Command::Preprocess if is_fortran(input) => {
                Job { name: name.clone(), fortran: Some(input.clone()), ir: None, sidecar: None }
            }
            Command::Lower | Command::Build if is_ir(input) => ir_job(),
            Command::Build if is_fortran(input) => Job {
                name: name.clone(),
                fortran: Some(input.clone()),
                ir: (cfg.mode == Mode::IrOnly).then(|| input.with_extension("ll")),
                sidecar: None,
            },
            _ => {
                let want = match command {
                    Command::Preprocess => "Fortran source (.f90)",
                    Command::Lower => "IR (.ll)",
                    Command::Build => "Fortran source (.f90) or IR (.ll)",
                };
                return Err(DriverError::Usage(format!("{}: expected {want}", input.display())));
            }
        };
        if jobs.iter().any(|j| j.name == job.name) {
            return Err(DriverError::Usage(format!("two inputs produce kernel '{}'", job.name)));
        }
        jobs.push(job);
    }
    Ok(jobs)
}

fn load_context(cfg: &DriverConfig, command: Command) -> Result<Context<'_>, DriverError> {
    let read =
        |p: &Path| fs::read_to_string(p).map_err(|e| DriverError::Config(format!("cannot read {}: {e}", p.display())));
    let map = match &cfg.intrinsic_map {
        Some(p) => IntrinsicMap::parse(&read(p)?).map_err(|e| DriverError::Config(format!("{}: {e}", p.display())))?,
        None => IntrinsicMap::default(),
    };
    let whitelist = match &cfg.whitelist {
        Some(p) => {
            AttributeWhitelist::parse(&read(p)?).map_err(|e| DriverError::Config(format!("{}: {e}", p.display())))?
        }
        None => AttributeWhitelist::default(),
    };
    // What the lowering passes emit must survive the downgrade on purpose.
    let gaps = map.whitelist_gaps(&whitelist);
    if !gaps.is_empty() {
        return Err(DriverError::Config(format!(
            "the whitelist would strip constructs the intrinsic map emits: {}",
            gaps.join(", ")
        )));
    }
    Ok(Context { cfg, command, map, whitelist })
}

/// Runs every kernel, one thread each; results are in input order.
pub fn run_all(cfg: &DriverConfig, command: Command) -> Result<Vec<Result<PipelineReport, DriverError>>, DriverError> {
    if command == Command::Build {
        cfg.check()?;
    } else if cfg.inputs.is_empty() {
        return Err(DriverError::Usage("no input files".into()));
    }
    let jobs = plan(cfg, command)?;
    let ctx = load_context(cfg, command)?;
    fs::create_dir_all(&cfg.output_dir).map_err(|e| {
        DriverError::Config(format!("cannot create output directory {}: {e}", cfg.output_dir.display()))
    })?;
    let ctx = &ctx;
    Ok(std::thread::scope(|s| {
        let handles: Vec<_> = jobs.iter().map(|job| s.spawn(move || run_job(ctx, job))).collect();
        handles
            .into_iter()
            .zip(&jobs)
            .map(|(h, job)| {
                h.join().unwrap_or_else(|_| {
                    Err(DriverError::Stage {
                        kernel: job.name.clone(),
                        stage: Stage::Emit,
                        message: "worker panicked".into(),
                    })
                })
            })
            .collect()
    }))
}

/// Like [`run_all`], failing with the first kernel error.
pub fn run_pipeline(cfg: &DriverConfig, command: Command) -> Result<Vec<PipelineReport>, DriverError> {
    run_all(cfg, command)?.into_iter().collect()
}

struct Run<'a> {
    ctx: &'a Context<'a>,
    name: String,
    report: PipelineReport,
}

impl Run<'_> {
    fn fail(&self, stage: Stage, message: impl ToString) -> DriverError {
        DriverError::Stage { kernel: self.name.clone(), stage, message: message.to_string() }
    }

    fn timed<T>(
        &mut self,
        stage: Stage,
        f: impl FnOnce(&mut Self) -> Result<T, DriverError>,
    ) -> Result<T, DriverError> {
        let start = Instant::now();
        let r = f(self);
        self.report.timings.push((stage, start.elapsed()));
        r
    }

    fn out_path(&self, suffix: &str) -> PathBuf {
        self.ctx.cfg.output_dir.join(format!("{}{suffix}", self.name))
    }

    fn write(&mut self, stage: Stage, suffix: &str, text: &str) -> Result<(), DriverError> {
        let path = self.out_path(suffix);
        fs::write(&path, text).map_err(|e| self.fail(stage, format!("cannot write {}: {e}", path.display())))?;
        self.report.outputs.push(path);
        Ok(())
    }

    fn intermediate(&mut self, stage: Stage, suffix: &str, text: &str) -> Result<(), DriverError> {
        if self.ctx.cfg.keep_intermediates {
            self.write(stage, suffix, text)?;
        }
        Ok(())
    }
}

fn read_file(run: &Run<'_>, stage: Stage, p: &Path) -> Result<String, DriverError> {
    fs::read_to_string(p).map_err(|e| run.fail(stage, format!("cannot read {}: {e}", p.display())))
}

fn run_job(ctx: &Context<'_>, job: &Job) -> Result<PipelineReport, DriverError> {
    let cfg = ctx.cfg;
    let mut run =
        Run { ctx, name: job.name.clone(), report: PipelineReport { kernel: job.name.clone(), ..Default::default() } };

    // preprocess
    let mut registry = StreamTypeRegistry::new();
    let mut preprocessed: Option<SourceUnit> = None;
    if let Some(src) = &job.fortran {
        let pp = run.timed(Stage::Preprocess, |run| {
            let text = read_file(run, Stage::Preprocess, src)?;
            preprocess(&SourceUnit::new(src.display().to_string(), text), &cfg.pragma_prefix)
                .map_err(|e| run.fail(Stage::Preprocess, format!("\n{e}")))
        })?;
        run.report.directives_rewritten = pp.pragmas.len();
        run.report.streams_declared = pp.registry.len();
        if ctx.command == Command::Preprocess {
            run.report.preprocess_only = true;
            run.write(Stage::Preprocess, ".pp.f90", &pp.unit.text)?;
            if !pp.registry.is_empty() {
                run.write(Stage::Preprocess, ".streams", &pp.registry.to_string())?;
            }
            if cfg.dump_pragmas {
                let list: String = pp
                    .pragmas
                    .iter()
                    .map(|p| format!("{}: {p}\n", p.location.as_ref().map(ToString::to_string).unwrap_or_default()))
                    .collect();
                run.report.pragma_dump = Some(list);
            }
            return Ok(run.report);
        }
        run.intermediate(Stage::Preprocess, ".pp.f90", &pp.unit.text)?;
        if !pp.registry.is_empty() {
            run.intermediate(Stage::Preprocess, ".streams", &pp.registry.to_string())?;
        }
        registry = pp.registry;
        preprocessed = Some(pp.unit);
    }

    // front end
    let ir_text = run.timed(Stage::Frontend, |run| match (&preprocessed, &job.ir) {
        (_, Some(ir)) => {
            if !ir.is_file() {
                return Err(
                    run.fail(Stage::Frontend, format!("ir-only mode needs pre-generated IR at {}", ir.display()))
                );
            }
            read_file(run, Stage::Frontend, ir)
        }
        (Some(unit), None) => {
            let frontend = cfg.frontend_path.as_ref().expect("checked: full mode has a front end");
            let src = job.fortran.as_ref().expect("fortran job");
            let ext = src.extension().and_then(|e| e.to_str()).unwrap_or("f90");
            let dir = std::env::temp_dir().join(format!("fhls-{}-{}", std::process::id(), run.name));
            fs::create_dir_all(&dir).map_err(|e| run.fail(Stage::Frontend, e))?;
            let file = dir.join(format!("{}.{ext}", run.name));
            let result = fs::write(&file, &unit.text).map_err(|e| run.fail(Stage::Frontend, e)).and_then(|_| {
                tools::invoke_frontend(frontend, &cfg.frontend_args, &file, cfg.frontend_timeout)
                    .map_err(|e| run.fail(Stage::Frontend, e))
            });
            let _ = fs::remove_dir_all(&dir);
            let text = result?;
            run.intermediate(Stage::Frontend, ".fe.ll", &text)?;
            Ok(text)
        }
        (None, None) => unreachable!("every job has Fortran or IR"),
    })?;

    // parse
    let mut m = run.timed(Stage::Parse, |run| {
        if let Some(side) = &job.sidecar {
            let text = read_file(run, Stage::Parse, side)?;
            registry = StreamTypeRegistry::parse(&text)
                .map_err(|e| run.fail(Stage::Parse, format!("{}: {e}", side.display())))?;
        }
        parse_module(&ir_text).map_err(|e| run.fail(Stage::Parse, e))
    })?;

    // normalize
    run.timed(Stage::Normalize, |run| {
        let renames = normalize_symbol_names(&mut m).map_err(|e| run.fail(Stage::Normalize, e))?;
        run.report.symbols_renamed += renames.entries.len();
        if cfg.rename_map {
            let text = renames.to_string();
            run.write(Stage::Normalize, ".renames", &text)?;
        }
        if cfg.dump_loops {
            run.report.loop_dump = Some(loop_dump(&m));
        }
        Ok(())
    })?;

    // pragmas
    run.timed(Stage::Pragma, |run| {
        let opts = PragmaOptions { prefix: cfg.pragma_prefix.clone(), allow_skipped: cfg.allow_skipped_pragmas };
        match lower_pragmas(&mut m, &ctx.map, &opts) {
            Ok(r) => {
                run.report.pragmas_lowered = r.lowered();
                run.report.pragmas_skipped = r.skipped();
                if cfg.dump_pragmas {
                    run.report.pragma_dump = Some(r.dump());
                }
                Ok(())
            }
            Err(e @ PragmaError::Skipped(_)) => {
                Err(run.fail(Stage::Pragma, format!("{e} (pass --allow-skipped-pragmas to accept)")))
            }
            Err(e) => Err(run.fail(Stage::Pragma, e)),
        }
    })?;

    // streams
    run.timed(Stage::Stream, |run| {
        let r = lower_streams(&mut m, &registry, &ctx.map.streams).map_err(|e| run.fail(Stage::Stream, e))?;
        run.report.streams_lowered = r.streams.len();
        run.report.stream_primitives = r.primitives();
        Ok(())
    })?;
    if cfg.keep_intermediates {
        let text = print_module(&m, Dialect::Modern).map_err(|e| run.fail(Stage::Stream, e))?;
        run.intermediate(Stage::Stream, ".lowered.ll", &text)?;
    }

    // downgrade
    run.timed(Stage::Downgrade, |run| {
        let opts = DowngradeOptions {
            infer: InferOptions { default_pointee: cfg.default_pointee_i8.then(TypeExpr::i8) },
            whitelist: ctx.whitelist.clone(),
        };
        let r = downgrade(&mut m, &opts).map_err(|e| run.fail(Stage::Downgrade, e))?;
        run.report.attributes_stripped = r.attributes_removed.len();
        run.report.metadata_removed = r.metadata.kinds_removed.values().sum::<usize>() + r.metadata.named_removed.len();
        run.report.symbols_renamed += r.renames.entries.len();
        run.report.pointers_typed = r.infer.pointers_typed;
        Ok(())
    })?;

    // validate
    run.timed(Stage::Validate, |run| {
        run.report.violations = validate_v7(&m, &ctx.whitelist);
        Ok(())
    })?;
    if !run.report.violations.is_empty() {
        return Err(DriverError::Validation { kernel: run.name.clone(), violations: run.report.violations.clone() });
    }

    // emit
    run.timed(Stage::Emit, |run| emit(run, &m))?;
    Ok(run.report)
}

/// Writes `<kernel>.v7.ll` and, with an assembler, `<kernel>.xpirbc`.
fn emit(run: &mut Run<'_>, m: &IRModule) -> Result<(), DriverError> {
    let cfg = run.ctx.cfg;
    let text = print_module(m, Dialect::V7).map_err(|e| run.fail(Stage::Emit, e))?;
    run.write(Stage::Emit, ".v7.ll", &text)?;
    if let Some(asm) = &cfg.assembler_path {
        let input = run.out_path(".v7.ll");
        let output = run.out_path(".xpirbc");
        let _ = fs::remove_file(&output);
        tools::assemble(asm, &cfg.assembler_args, &input, &output, cfg.frontend_timeout)
            .map_err(|e| run.fail(Stage::Emit, e))?;
        run.report.outputs.push(output);
    }
    Ok(())
}

fn loop_dump(m: &IRModule) -> String {
    let mut out = String::new();
    for f in m.functions.iter().filter(|f| !f.blocks.is_empty()) {
        let _ = writeln!(out, "@{}:", f.name);
        match ControlFlowGraph::from_function(f).and_then(|cfg| analyze(&cfg).map(|(_, t)| t.dump(&cfg))) {
            Ok(d) if d.is_empty() => out.push_str("  (no loops)\n"),
            Ok(d) => d.lines().for_each(|l| {
                let _ = writeln!(out, "  {l}");
            }),
            Err(e) => {
                let _ = writeln!(out, "  {e}");
            }
        }
    }
    out
}

#[cfg(test)]
mod tests {
    use super::*;

    fn cfg(inputs: &[&str], mode: Mode) -> DriverConfig {
        DriverConfig { inputs: inputs.iter().map(PathBuf::from).collect(), mode, ..DriverConfig::default() }
    }

    #[test]
    fn jobs_pair_sources_with_sibling_ir_in_ir_only_mode() {
        let jobs = plan(&cfg(&["a/k.f90", "b/m.ll"], Mode::IrOnly), Command::Build).unwrap();
        assert_eq!(jobs[0].ir, Some(PathBuf::from("a/k.ll")));
        assert_eq!(jobs[0].fortran, Some(PathBuf::from("a/k.f90")));
        assert_eq!((jobs[1].name.as_str(), jobs[1].fortran.is_none()), ("m", true));
        let jobs = plan(&cfg(&["a/k.f90"], Mode::Full), Command::Build).unwrap();
        assert_eq!(jobs[0].ir, None);
    }

    #[test]
    fn inputs_must_suit_the_command_and_have_distinct_names() {
        let err = |inputs: &[&str], cmd| plan(&cfg(inputs, Mode::IrOnly), cmd).unwrap_err().to_string();
        assert!(err(&["k.ll"], Command::Preprocess).contains("expected Fortran source"));
        assert!(err(&["k.f90"], Command::Lower).contains("expected IR"));
        assert!(err(&["k.txt"], Command::Build).contains("k.txt"));
        assert!(err(&["a/k.ll", "b/k.ll"], Command::Lower).contains("two inputs produce kernel 'k'"));
    }

    #[test]
    fn summary_has_counts_but_no_timings() {
        let r = PipelineReport {
            kernel: "k".into(),
            timings: vec![(Stage::Parse, Duration::from_millis(3))],
            pragmas_lowered: 2,
            ..Default::default()
        };
        let s = r.summary();
        assert!(
            s.starts_with("kernel: k\n") && s.contains("pragmas lowered: 2\n") && s.ends_with("validation: clean\n")
        );
        assert!(!s.contains(" ms"));
        assert!(r.timing_text().contains("parse"));
    }
}
