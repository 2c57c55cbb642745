//! Acceptance criteria 1–10, one PASS/FAIL/SKIP line each. Exits non-zero
//! when any criterion fails.

use std::collections::BTreeMap;
use std::fs;
use std::panic::{catch_unwind, AssertUnwindSafe};
use std::path::{Path, PathBuf};
use std::process::Command as Process;
use std::time::{Duration, Instant};

use fhls::tools::find_v7_assembler;
use fhls::{run_pipeline, Command, DriverConfig, Mode};
use fhls_core::cfg::{analyze, compute_dominators, BlockId, ControlFlowGraph};
use fhls_core::downgrade::{downgrade, DowngradeOptions, DowngradeReport};
use fhls_core::fortran::{preprocess, SourceUnit};
use fhls_core::ir::{parse_module, print_module, validate_v7, Dialect, IRModule, InstKind};
use fhls_core::pragma::{decode_placeholder, encode_placeholder, DEFAULT_PREFIX};
use fhls_core::testkit::{
    arbitrary_graph, oracle_deepest, oracle_loops, path_dominators, random_descriptor, random_module, structured_cfg,
};
use rand::rngs::StdRng;
use rand::{Rng, SeedableRng};

enum Verdict {
    Pass(String),
    Skip(String),
}

type Outcome = Result<Verdict, String>;
type Criterion = (&'static str, fn() -> Outcome);

macro_rules! ensure {
    ($cond:expr, $($msg:tt)+) => {
        if !$cond {
            return Err(format!($($msg)+));
        }
    };
}

fn root() -> PathBuf {
    PathBuf::from(env!("CARGO_MANIFEST_DIR")).join("../..")
}

fn kernels_dir() -> PathBuf {
    root().join("fixtures/kernels")
}

fn corpus(ext: &str) -> Vec<PathBuf> {
    let mut v: Vec<PathBuf> = fs::read_dir(kernels_dir())
        .unwrap()
        .map(|e| e.unwrap().path())
        .filter(|p| p.extension().is_some_and(|e| e == ext))
        .collect();
    v.sort();
    v
}

fn read(p: &Path) -> String {
    fs::read_to_string(p).unwrap_or_else(|e| panic!("{}: {e}", p.display()))
}

fn within(limit: Duration, start: Instant, what: &str) -> Result<Duration, String> {
    let took = start.elapsed();
    ensure!(took < limit, "{what} took {took:?}, limit {limit:?}");
    Ok(took)
}

/// Runs the driver in-process into a fresh directory.
fn drive(
    inputs: Vec<PathBuf>,
    command: Command,
    tune: impl FnOnce(&mut DriverConfig),
) -> Result<(tempfile::TempDir, String), String> {
    let dir = tempfile::tempdir().map_err(|e| e.to_string())?;
    let mut cfg =
        DriverConfig { inputs, mode: Mode::IrOnly, output_dir: dir.path().to_path_buf(), ..DriverConfig::default() };
    tune(&mut cfg);
    let reports = run_pipeline(&cfg, command).map_err(|e| e.to_string())?;
    Ok((dir, reports.iter().map(|r| r.summary()).collect()))
}

fn pragma_round_trip() -> Outcome {
    let start = Instant::now();
    let mut rng = StdRng::seed_from_u64(1);
    let n = 1500;
    for prefix in [DEFAULT_PREFIX, "hlsp"] {
        for _ in 0..n {
            let d = random_descriptor(&mut rng);
            let name = encode_placeholder(&d, prefix).map_err(|e| format!("{d}: {e}"))?;
            let back = decode_placeholder(&name, prefix).map_err(|e| format!("{name}: {e}"))?;
            ensure!(back.as_ref() == Some(&d), "{name} decoded to {back:?}, expected {d}");
        }
    }
    let took = within(Duration::from_secs(5), start, "round trip")?;
    Ok(Verdict::Pass(format!("{} descriptors in {took:.2?}", 2 * n)))
}

fn loop_anchoring() -> Outcome {
    let start = Instant::now();
    let mut rng = StdRng::seed_from_u64(2);
    let n = 250;
    for round in 0..n {
        let depth = rng.gen_range(1..=5);
        let succs = structured_cfg(&mut rng, depth);
        let cfg = ControlFlowGraph::from_successors(succs.clone()).map_err(|e| e.to_string())?;
        let (_, tree) = analyze(&cfg).map_err(|e| format!("cfg {round}: {e}"))?;
        let loops = oracle_loops(&succs);
        for b in 0..succs.len() {
            let got =
                tree.deepest_loop_containing(BlockId(b)).map_err(|e| e.to_string())?.map(|id| tree.get(id).header.0);
            ensure!(got == oracle_deepest(&loops, b), "cfg {round} block {b}: got {got:?}");
        }
    }
    let took = within(Duration::from_secs(30), start, "anchoring")?;
    Ok(Verdict::Pass(format!("{n} structured CFGs (depth 1..=5) in {took:.2?}")))
}

fn dominators() -> Outcome {
    let mut rng = StdRng::seed_from_u64(3);
    let n = 600;
    for round in 0..n {
        let size = rng.gen_range(1..=12);
        let succs = arbitrary_graph(&mut rng, size);
        let cfg = ControlFlowGraph::from_successors(succs.clone()).map_err(|e| e.to_string())?;
        let dom = compute_dominators(&cfg);
        let oracle = path_dominators(&succs);
        for (b, expected) in oracle.iter().enumerate() {
            match expected {
                None => ensure!(!dom.is_reachable(BlockId(b)), "graph {round}: {b} should be unreachable"),
                Some(set) => {
                    for a in 0..size {
                        ensure!(
                            dom.dominates(BlockId(a), BlockId(b)) == set.contains(&a),
                            "graph {round}: dominates({a}, {b}) disagrees with path enumeration"
                        );
                    }
                }
            }
        }
    }
    Ok(Verdict::Pass(format!("{n} graphs of 1..=12 nodes")))
}

fn downgrade_totality() -> Outcome {
    let files = corpus("ll");
    ensure!(files.len() >= 20, "only {} fixtures", files.len());
    let opts = DowngradeOptions::default();
    for f in &files {
        let name = f.file_name().unwrap().to_string_lossy();
        let mut m = parse_module(&read(f)).map_err(|e| format!("{name}: {e}"))?;
        downgrade(&mut m, &opts).map_err(|e| format!("{name}: {e}"))?;
        let v = validate_v7(&m, &opts.whitelist);
        ensure!(v.is_empty(), "{name}: {} violation(s), first: {}", v.len(), v[0]);
        let once = m.clone();
        let again = downgrade(&mut m, &opts).map_err(|e| format!("{name}: second run: {e}"))?;
        ensure!(m == once && again == DowngradeReport::default(), "{name}: second downgrade changed the module");
    }
    Ok(Verdict::Pass(format!("{} fixtures total, clean and idempotent", files.len())))
}

fn assembler_gate() -> Outcome {
    let Some(asm) = find_v7_assembler() else {
        return Ok(Verdict::Skip("no v7 assembler found".into()));
    };
    let files = corpus("ll");
    let (dir, _) = drive(files.clone(), Command::Lower, |c| {
        c.assembler_path = Some(asm.path.clone());
        c.assembler_args = asm.args.clone();
    })?;
    for f in &files {
        let out = dir.path().join(format!("{}.xpirbc", f.file_stem().unwrap().to_string_lossy()));
        let len = fs::metadata(&out).map(|m| m.len()).unwrap_or(0);
        ensure!(len > 0, "{} is missing or empty", out.display());
    }
    let how = if asm.proxy { "clang typed-pointer proxy" } else { "llvm-as" };
    Ok(Verdict::Pass(format!("{} kernels assembled by {} ({how})", files.len(), asm.path.display())))
}

fn stream_kernel_golden() -> Outcome {
    let (dir, summary) = drive(vec![kernels_dir().join("stream_copy.f90")], Command::Build, |_| {})?;
    let v7 = read(&dir.path().join("stream_copy.v7.ll"));
    let calls = |needle: &str| v7.lines().filter(|l| l.contains("call ") && l.contains(needle)).count();
    let depth0 =
        v7.lines().filter(|l| l.contains("call void @llvm.fpga.set.stream.depth(") && l.ends_with(", i32 0)")).count();
    ensure!(calls("@llvm.fpga.set.stream.depth(") == 1 && depth0 == 1, "expected one set-depth call with depth 0");
    ensure!(calls("@llvm.fpga.fifo.push.") == 1, "expected one push");
    ensure!(calls("@llvm.fpga.fifo.pop.") == 1, "expected one pop");
    for banned in ["hls_lowered_", "set_depth_", "_fhls_", "llvm.loop"] {
        ensure!(!v7.contains(banned), "output still mentions {banned}");
    }
    ensure!(summary.contains("streams lowered: 1\nstream primitives: 3\n"), "report:\n{summary}");
    ensure!(
        v7 == read(&root().join("fixtures/golden/stream_copy.v7.ll")),
        "differs from fixtures/golden/stream_copy.v7.ll"
    );
    Ok(Verdict::Pass("1 set-depth(0), 1 push, 1 pop, no helpers, no loop metadata".into()))
}

fn innermost_latch_annotation() -> Outcome {
    let (dir, _) = drive(vec![kernels_dir().join("triple_nest.ll")], Command::Lower, |_| {})?;
    let v7 = read(&dir.path().join("triple_nest.v7.ll"));
    ensure!(v7.matches(", !llvm.loop ").count() == 1, "expected exactly one !llvm.loop attachment");
    let m: IRModule = parse_module(&v7).map_err(|e| e.to_string())?;
    let f = m.functions.iter().find(|f| !f.blocks.is_empty()).ok_or("no function")?;
    let annotated: Vec<usize> = (0..f.blocks.len())
        .filter(|&b| f.blocks[b].instructions.iter().any(|i| i.metadata.iter().any(|(k, _)| k == "llvm.loop")))
        .collect();
    ensure!(annotated.len() == 1, "annotated blocks: {annotated:?}");
    let cfg = ControlFlowGraph::from_function(f).map_err(|e| e.to_string())?;
    let (_, tree) = analyze(&cfg).map_err(|e| e.to_string())?;
    let inner = tree.loops().iter().max_by_key(|l| l.depth).ok_or("no loops")?;
    let latch = BlockId(annotated[0]);
    ensure!(inner.depth == 3, "innermost depth {}", inner.depth);
    ensure!(
        inner.body.contains(&latch) && cfg.successors(latch).contains(&inner.header),
        "annotation on %{} is not a latch of the innermost loop (header %{})",
        cfg.label(latch),
        cfg.label(inner.header)
    );
    let term = f.blocks[annotated[0]].instructions.last().ok_or("empty block")?;
    ensure!(matches!(term.kind, InstKind::Br { .. }), "annotation is not on a branch");
    Ok(Verdict::Pass(format!("single attachment on latch %{} of the depth-3 loop", cfg.label(latch))))
}

fn parse_print_parse() -> Outcome {
    let round = |name: &str, text: &str| -> Result<(), String> {
        let m = parse_module(text).map_err(|e| format!("{name}: {e}"))?;
        let printed = print_module(&m, Dialect::Modern).map_err(|e| format!("{name}: {e}"))?;
        let again = parse_module(&printed).map_err(|e| format!("{name}: reparse: {e}"))?;
        ensure!(again == m, "{name}: reparsed module differs");
        ensure!(print_module(&again, Dialect::Modern).map_err(|e| e.to_string())? == printed, "{name}: print unstable");
        Ok(())
    };
    let files = corpus("ll");
    for f in &files {
        round(&f.display().to_string(), &read(f))?;
    }
    let mut rng = StdRng::seed_from_u64(8);
    let n = 600;
    for i in 0..n {
        round(&format!("random module {i}"), &random_module(&mut rng))?;
    }
    Ok(Verdict::Pass(format!("{} corpus + {n} random modules", files.len())))
}

#[derive(Debug, PartialEq)]
enum Edit<'a> {
    Keep,
    Remove(&'a str),
    Add(&'a str),
}

/// Line diff by longest common subsequence.
fn line_diff<'a>(a: &[&'a str], b: &[&'a str]) -> Vec<Edit<'a>> {
    let (n, m) = (a.len(), b.len());
    let mut lcs = vec![vec![0u32; m + 1]; n + 1];
    for i in (0..n).rev() {
        for j in (0..m).rev() {
            lcs[i][j] = if a[i] == b[j] { lcs[i + 1][j + 1] + 1 } else { lcs[i + 1][j].max(lcs[i][j + 1]) };
        }
    }
    let (mut i, mut j, mut out) = (0, 0, Vec::new());
    while i < n || j < m {
        if i < n && j < m && a[i] == b[j] {
            out.push(Edit::Keep);
            i += 1;
            j += 1;
        } else if j < m && (i == n || lcs[i][j + 1] >= lcs[i + 1][j]) {
            out.push(Edit::Add(b[j]));
            j += 1;
        } else {
            out.push(Edit::Remove(a[i]));
            i += 1;
        }
    }
    out
}

fn is_directive_or_macro(line: &str) -> bool {
    let t = line.trim_start().to_ascii_lowercase();
    t.starts_with("!$hls")
        || t.starts_with("proto_hls_stream(")
        || t.starts_with("set_hls_stream_type(")
        || ["hls_write(", "hls_read(", "hls_empty(", "hls_full("].iter().any(|m| t.contains(m))
}

fn is_placeholder_call(line: &str) -> bool {
    let t = line.trim();
    t.strip_prefix("call ")
        .and_then(|c| c.strip_suffix("()"))
        .is_some_and(|name| matches!(decode_placeholder(name, DEFAULT_PREFIX), Ok(Some(_))))
}

fn non_interference() -> Outcome {
    let files = corpus("f90");
    let mut deferred = 0;
    let mut hunks = 0;
    for f in &files {
        let name = f.file_name().unwrap().to_string_lossy().into_owned();
        let original = read(f);
        let pp =
            preprocess(&SourceUnit::new(name.clone(), original.clone()), DEFAULT_PREFIX).map_err(|e| e.to_string())?;
        let a: Vec<&str> = original.lines().collect();
        let b: Vec<&str> = pp.unit.text.lines().collect();
        let diff = line_diff(&a, &b);
        for hunk in diff.split(|e| *e == Edit::Keep).filter(|h| !h.is_empty()) {
            hunks += 1;
            let removed: Vec<&str> =
                hunk.iter().filter_map(|e| if let Edit::Remove(l) = e { Some(*l) } else { None }).collect();
            let added: Vec<&str> =
                hunk.iter().filter_map(|e| if let Edit::Add(l) = e { Some(*l) } else { None }).collect();
            if let Some(l) = removed.iter().find(|l| !is_directive_or_macro(l)) {
                return Err(format!("{name}: ordinary line removed or changed: {l:?}"));
            }
            if removed.is_empty() {
                if let Some(l) = added.iter().find(|l| !is_placeholder_call(l)) {
                    return Err(format!("{name}: line inserted outside any directive hunk: {l:?}"));
                }
                deferred += added.len();
            }
        }
        // Without directives or macros the source passes through unchanged.
        let plain: String = original.lines().filter(|l| !is_directive_or_macro(l)).map(|l| format!("{l}\n")).collect();
        let out =
            preprocess(&SourceUnit::new(name.clone(), plain.clone()), DEFAULT_PREFIX).map_err(|e| e.to_string())?;
        ensure!(out.unit.text == plain, "{name}: directive-free source was modified");
    }
    ensure!(deferred > 0, "no fixture exercises deferred placement");
    Ok(Verdict::Pass(format!("{} sources, {hunks} hunks, {deferred} deferred placeholder(s)", files.len())))
}

fn snapshot(dir: &Path) -> BTreeMap<String, Vec<u8>> {
    let mut out = BTreeMap::new();
    let mut stack = vec![dir.to_path_buf()];
    while let Some(d) = stack.pop() {
        for e in fs::read_dir(&d).unwrap() {
            let p = e.unwrap().path();
            if p.is_dir() {
                stack.push(p);
            } else {
                out.insert(p.strip_prefix(dir).unwrap().display().to_string(), fs::read(&p).unwrap());
            }
        }
    }
    out
}

fn determinism() -> Outcome {
    let lls = corpus("ll");
    let f90s: Vec<PathBuf> = corpus("f90").into_iter().filter(|f| f.with_extension("ll").is_file()).collect();
    let run = |out: &Path| -> Result<BTreeMap<String, Vec<u8>>, String> {
        for (inputs, sub) in [(&lls, "ir"), (&f90s, "fortran")] {
            let status = Process::new(env!("CARGO_BIN_EXE_fhls"))
                .args(["build", "--mode", "ir-only", "--keep-intermediates", "--rename-map", "-o"])
                .arg(out.join(sub))
                .args(inputs.iter())
                .env_remove("FHLS_ASSEMBLER")
                .output()
                .map_err(|e| e.to_string())?;
            ensure!(status.status.success(), "fhls failed: {}", String::from_utf8_lossy(&status.stderr));
        }
        Ok(snapshot(out))
    };
    let (a, b) = (tempfile::tempdir().unwrap(), tempfile::tempdir().unwrap());
    let (first, second) = (run(a.path())?, run(b.path())?);
    ensure!(first.keys().eq(second.keys()), "runs wrote different file sets");
    if let Some((k, _)) = first.iter().find(|(k, v)| second[*k] != **v) {
        return Err(format!("{k} differs between runs"));
    }
    Ok(Verdict::Pass(format!("{} files byte-identical across two runs", first.len())))
}

fn main() {
    let criteria: [Criterion; 10] = [
        ("pragma placeholder round trip", pragma_round_trip),
        ("loop anchoring on structured CFGs", loop_anchoring),
        ("dominators vs path enumeration", dominators),
        ("downgrade totality and idempotence", downgrade_totality),
        ("v7 assembler gate", assembler_gate),
        ("stream kernel golden output", stream_kernel_golden),
        ("single loop annotation on innermost latch", innermost_latch_annotation),
        ("parse/print/parse", parse_print_parse),
        ("preprocessor non-interference", non_interference),
        ("deterministic output", determinism),
    ];
    std::panic::set_hook(Box::new(|_| {}));
    let mut failed = 0;
    for (i, (name, check)) in criteria.iter().enumerate() {
        let outcome = catch_unwind(AssertUnwindSafe(check)).unwrap_or_else(|p| {
            let msg = p.downcast_ref::<String>().cloned().or_else(|| p.downcast_ref::<&str>().map(|s| s.to_string()));
            Err(format!("panicked: {}", msg.unwrap_or_default()))
        });
        let (tag, detail) = match outcome {
            Ok(Verdict::Pass(d)) => ("PASS", d),
            Ok(Verdict::Skip(d)) => ("SKIP", d),
            Err(d) => {
                failed += 1;
                ("FAIL", d)
            }
        };
        println!("criterion {:>2} {tag}: {name} ({detail})", i + 1);
    }
    if failed > 0 {
        println!("{failed} criterion/criteria failed");
        std::process::exit(1);
    }
}
