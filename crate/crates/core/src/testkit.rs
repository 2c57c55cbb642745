//! Random generators and brute-force oracles shared by the property tests
//! and the acceptance harness.

use std::collections::BTreeSet;
use std::fmt::Write;

use rand::seq::SliceRandom;
use rand::Rng;

use crate::pragma::{PragmaDescriptor, PragmaKind};

// ---------------------------------------------------------------- pragmas

const VALUE_CHARS: &[u8] = b"abcdefghijklmnopqrstuvwxyz0123456789";

fn random_word<R: Rng>(rng: &mut R, alphabet: &[u8], len: usize) -> String {
    (0..len).map(|_| *alphabet.choose(rng).expect("non-empty alphabet") as char).collect()
}

/// A valid value: lowercase letters and digits, with single inner
/// underscores.
fn random_value<R: Rng>(rng: &mut R) -> String {
    let len = rng.gen_range(1..=3);
    let mut v = random_word(rng, VALUE_CHARS, len);
    if rng.gen_bool(0.3) {
        v.push('_');
        let len = rng.gen_range(1..=2);
        v.push_str(&random_word(rng, VALUE_CHARS, len));
    }
    v
}

/// A descriptor whose placeholder name always fits the length limit under
/// the default prefix.
pub fn random_descriptor<R: Rng>(rng: &mut R) -> PragmaDescriptor {
    let kind = *PragmaKind::ALL.choose(rng).expect("five kinds");
    let mut args: Vec<(String, String)> = Vec::new();
    for _ in 0..rng.gen_range(0..=2) {
        let len = rng.gen_range(1..=5);
        let key = random_word(rng, b"abcdefghijklmnopqrstuvwxyz", len);
        if args.iter().all(|(k, _)| *k != key) {
            args.push((key, random_value(rng)));
        }
    }
    PragmaDescriptor { kind, args, location: None }
}

// -------------------------------------------------------------------- cfgs

struct CfgBuilder<'r, R> {
    rng: &'r mut R,
    succs: Vec<Vec<usize>>,
    /// (header, exit) of each enclosing loop, innermost last.
    loops: Vec<(usize, usize)>,
    /// Enclosing if-statements, capped to keep graphs small.
    ifs: usize,
}

impl<R: Rng> CfgBuilder<'_, R> {
    fn block(&mut self) -> usize {
        self.succs.push(Vec::new());
        self.succs.len() - 1
    }

    fn edge(&mut self, a: usize, b: usize) {
        if !self.succs[a].contains(&b) {
            self.succs[a].push(b);
        }
    }

    /// Emits a statement sequence starting in `cur`; returns the block where
    /// control continues. `nest` more loop levels are forced below this one.
    fn region(&mut self, mut cur: usize, nest: usize, budget: usize) -> usize {
        let items = self.rng.gen_range(1..=3);
        let forced = if nest > 0 { self.rng.gen_range(0..items) } else { usize::MAX };
        for item in 0..items {
            let roll = self.rng.gen_range(0..10);
            if item == forced || (budget > 0 && roll < 3) {
                let inner = if item == forced { nest - 1 } else { 0 };
                cur = self.loop_(cur, inner, budget.saturating_sub(1).max(inner));
            } else if (3..6).contains(&roll) && self.ifs < 3 {
                let (t, e, j) = (self.block(), self.block(), self.block());
                self.edge(cur, t);
                self.edge(cur, e);
                self.ifs += 1;
                let t_end = self.region(t, 0, budget.saturating_sub(1));
                self.ifs -= 1;
                self.edge(t_end, j);
                self.edge(e, j);
                cur = j;
            } else {
                let b = self.block();
                self.edge(cur, b);
                cur = b;
                // Structured jumps out of the innermost enclosing loops.
                if !self.loops.is_empty() && self.rng.gen_bool(0.2) {
                    let (h, x) = *self.loops.choose(self.rng).expect("non-empty");
                    let next = self.block();
                    let target = if self.rng.gen_bool(0.5) { h } else { x };
                    self.edge(cur, target);
                    self.edge(cur, next);
                    cur = next;
                }
            }
        }
        cur
    }

    fn loop_(&mut self, cur: usize, nest: usize, budget: usize) -> usize {
        let h = self.block();
        self.edge(cur, h);
        let x_placeholder = usize::MAX - h;
        let b = self.block();
        self.edge(h, b);
        self.loops.push((h, x_placeholder));
        // The exit is created after the body so block numbers stay ordered;
        // jumps to it are patched afterwards.
        let end = self.region(b, nest, budget);
        self.loops.pop();
        self.edge(end, h);
        let x = self.block();
        self.edge(h, x);
        for s in &mut self.succs {
            for t in s.iter_mut() {
                if *t == x_placeholder {
                    *t = x;
                }
            }
        }
        x
    }
}

/// A random structured (hence reducible) CFG whose deepest loop nest is
/// exactly `depth`, as successor lists with block 0 as entry.
pub fn structured_cfg<R: Rng>(rng: &mut R, depth: usize) -> Vec<Vec<usize>> {
    let mut b = CfgBuilder { rng, succs: Vec::new(), loops: Vec::new(), ifs: 0 };
    let entry = b.block();
    b.region(entry, depth, 0);
    let mut succs = b.succs;
    for s in &mut succs {
        s.dedup();
    }
    succs
}

/// Any graph on `n` nodes with up to three successors per node.
pub fn arbitrary_graph<R: Rng>(rng: &mut R, n: usize) -> Vec<Vec<usize>> {
    (0..n)
        .map(|_| {
            let mut s: Vec<usize> = (0..rng.gen_range(0..=3)).map(|_| rng.gen_range(0..n)).collect();
            s.sort_unstable();
            s.dedup();
            s
        })
        .collect()
}

/// Dominator sets from the definition: `d` dominates `b` iff `d` lies on
/// every simple path from the entry to `b`. `None` for unreachable blocks.
pub fn path_dominators(succs: &[Vec<usize>]) -> Vec<Option<BTreeSet<usize>>> {
    fn walk(succs: &[Vec<usize>], path: &mut Vec<usize>, on: &mut [bool], out: &mut [Option<BTreeSet<usize>>]) {
        let b = *path.last().expect("non-empty path");
        let here: BTreeSet<usize> = path.iter().copied().collect();
        out[b] = Some(match out[b].take() {
            None => here,
            Some(prev) => prev.intersection(&here).copied().collect(),
        });
        for &s in &succs[b] {
            if !on[s] {
                on[s] = true;
                path.push(s);
                walk(succs, path, on, out);
                path.pop();
                on[s] = false;
            }
        }
    }
    let mut out = vec![None; succs.len()];
    if succs.is_empty() {
        return out;
    }
    let mut on = vec![false; succs.len()];
    on[0] = true;
    walk(succs, &mut vec![0], &mut on, &mut out);
    out
}

/// Dominator sets by deletion: `d` dominates `b` iff `b` is unreachable
/// once `d` is removed. Polynomial, unlike path enumeration.
pub fn deletion_dominators(succs: &[Vec<usize>]) -> Vec<Option<BTreeSet<usize>>> {
    let reach = |removed: Option<usize>| {
        let mut seen = vec![false; succs.len()];
        if succs.is_empty() || removed == Some(0) {
            return seen;
        }
        seen[0] = true;
        let mut work = vec![0];
        while let Some(x) = work.pop() {
            for &s in &succs[x] {
                if Some(s) != removed && !seen[s] {
                    seen[s] = true;
                    work.push(s);
                }
            }
        }
        seen
    };
    let all = reach(None);
    let mut out: Vec<Option<BTreeSet<usize>>> =
        all.iter().enumerate().map(|(b, &r)| r.then(|| [b].into_iter().collect())).collect();
    for d in 0..succs.len() {
        if !all[d] {
            continue;
        }
        let without = reach(Some(d));
        for b in 0..succs.len() {
            if all[b] && !without[b] {
                out[b].as_mut().expect("reachable").insert(d);
            }
        }
    }
    out
}

/// Natural loops by brute force, one per header: for every edge `t -> h`
/// with `h` dominating `t`, all blocks that reach `t` without passing `h`.
pub fn oracle_loops(succs: &[Vec<usize>]) -> Vec<(usize, BTreeSet<usize>)> {
    let doms = deletion_dominators(succs);
    let mut loops: Vec<(usize, BTreeSet<usize>)> = Vec::new();
    for (t, list) in succs.iter().enumerate() {
        let Some(dt) = &doms[t] else { continue };
        for &h in list {
            if !dt.contains(&h) {
                continue;
            }
            let mut body: BTreeSet<usize> = [h, t].into_iter().collect();
            let mut work = vec![t];
            while let Some(x) = work.pop() {
                if x == h {
                    continue;
                }
                for (p, ps) in succs.iter().enumerate() {
                    if ps.contains(&x) && doms[p].is_some() && body.insert(p) {
                        work.push(p);
                    }
                }
            }
            match loops.iter_mut().find(|(hh, _)| *hh == h) {
                Some((_, b)) => b.extend(body),
                None => loops.push((h, body)),
            }
        }
    }
    loops.sort();
    loops
}

/// Innermost natural loop containing `block`, by scanning every loop.
/// Natural loops are nested or disjoint, so the smallest body is innermost.
pub fn oracle_deepest(loops: &[(usize, BTreeSet<usize>)], block: usize) -> Option<usize> {
    loops.iter().filter(|(_, body)| body.contains(&block)).min_by_key(|(_, body)| body.len()).map(|(h, _)| *h)
}

// ----------------------------------------------------------------- modules

#[derive(Clone, Copy, PartialEq, Eq)]
enum Ty {
    I1,
    I32,
    I64,
    F32,
    F64,
    Ptr,
}

impl Ty {
    fn name(self) -> &'static str {
        match self {
            Ty::I1 => "i1",
            Ty::I32 => "i32",
            Ty::I64 => "i64",
            Ty::F32 => "float",
            Ty::F64 => "double",
            Ty::Ptr => "ptr",
        }
    }

    fn is_int(self) -> bool {
        matches!(self, Ty::I32 | Ty::I64)
    }
}

const SCALARS: [Ty; 4] = [Ty::I32, Ty::I64, Ty::F32, Ty::F64];

struct Decl {
    name: String,
    ret: Option<Ty>,
    params: Vec<Ty>,
}

struct FnGen<'r, R> {
    rng: &'r mut R,
    out: String,
    /// Values visible at the current point, as (type, name); scopes are
    /// truncation marks.
    values: Vec<(Ty, String)>,
    next: usize,
    block: String,
    loop_ids: Vec<usize>,
    next_md: usize,
    decls: &'r [Decl],
    globals: &'r [(Ty, String)],
}

impl<R: Rng> FnGen<'_, R> {
    fn fresh(&mut self, stem: &str) -> String {
        self.next += 1;
        format!("%{stem}{}", self.next)
    }

    fn pick(&mut self, ty: Ty) -> String {
        let candidates: Vec<&String> = self.values.iter().filter(|(t, _)| *t == ty).map(|(_, n)| n).collect();
        if !candidates.is_empty() && self.rng.gen_bool(0.8) {
            return candidates.choose(self.rng).expect("non-empty").to_string();
        }
        self.constant(ty)
    }

    fn constant(&mut self, ty: Ty) -> String {
        match ty {
            Ty::I1 => if self.rng.gen_bool(0.5) { "true" } else { "false" }.into(),
            Ty::I32 | Ty::I64 => self.rng.gen_range(-100i64..1000).to_string(),
            Ty::F32 | Ty::F64 => format!("{:.1}", self.rng.gen_range(-8i32..8) as f64 * 0.5),
            Ty::Ptr => "null".into(),
        }
    }

    fn pointer(&mut self) -> String {
        let mut ptrs: Vec<String> = self.values.iter().filter(|(t, _)| *t == Ty::Ptr).map(|(_, n)| n.clone()).collect();
        ptrs.extend(self.globals.iter().map(|(_, g)| g.clone()));
        ptrs.choose(self.rng).cloned().unwrap_or_else(|| "null".into())
    }

    fn line(&mut self, s: &str) {
        self.out.push_str("  ");
        self.out.push_str(s);
        self.out.push('\n');
    }

    fn def(&mut self, ty: Ty, name: String, text: &str) {
        let l = format!("{name} = {text}");
        self.line(&l);
        self.values.push((ty, name));
    }

    fn instruction(&mut self) {
        let ty = *SCALARS.choose(self.rng).expect("scalars");
        match self.rng.gen_range(0..9) {
            0 | 1 => {
                let (a, b) = (self.pick(ty), self.pick(ty));
                let op = if ty.is_int() {
                    *["add", "sub", "mul", "and", "or", "xor", "shl", "add nsw", "sub nuw"]
                        .choose(self.rng)
                        .expect("ops")
                } else {
                    *["fadd", "fsub", "fmul", "fdiv", "fadd fast", "fmul contract"].choose(self.rng).expect("ops")
                };
                let n = self.fresh("v");
                self.def(ty, n, &format!("{op} {} {a}, {b}", ty.name()));
            }
            2 => {
                let (a, b) = (self.pick(ty), self.pick(ty));
                let n = self.fresh("c");
                let text = if ty.is_int() {
                    format!(
                        "icmp {} {} {a}, {b}",
                        ["eq", "ne", "slt", "sgt", "ule"].choose(self.rng).expect("preds"),
                        ty.name()
                    )
                } else {
                    format!(
                        "fcmp {} {} {a}, {b}",
                        ["olt", "oeq", "une", "ord"].choose(self.rng).expect("preds"),
                        ty.name()
                    )
                };
                self.def(Ty::I1, n, &text);
            }
            3 => {
                let c = self.pick(Ty::I1);
                let (a, b) = (self.pick(ty), self.pick(ty));
                let n = self.fresh("s");
                self.def(ty, n, &format!("select i1 {c}, {} {a}, {} {b}", ty.name(), ty.name()));
            }
            4 => {
                let (from, op, to) = *[
                    (Ty::I32, "sext", Ty::I64),
                    (Ty::I32, "zext", Ty::I64),
                    (Ty::I64, "trunc", Ty::I32),
                    (Ty::I32, "sitofp", Ty::F64),
                    (Ty::F32, "fptosi", Ty::I32),
                    (Ty::F32, "fpext", Ty::F64),
                    (Ty::F64, "fptrunc", Ty::F32),
                ]
                .choose(self.rng)
                .expect("casts");
                let v = self.pick(from);
                let n = self.fresh("x");
                self.def(to, n, &format!("{op} {} {v} to {}", from.name(), to.name()));
            }
            5 => {
                let p = self.pointer();
                if p != "null" {
                    let n = self.fresh("l");
                    let align = if ty == Ty::I64 || ty == Ty::F64 { 8 } else { 4 };
                    self.def(ty, n, &format!("load {}, ptr {p}, align {align}", ty.name()));
                }
            }
            6 => {
                let p = self.pointer();
                if p != "null" {
                    let v = self.pick(ty);
                    self.line(&format!("store {} {v}, ptr {p}", ty.name()));
                }
            }
            7 => {
                let p = self.pointer();
                if p != "null" {
                    let idx = self.pick(Ty::I64);
                    let n = self.fresh("p");
                    let inb = if self.rng.gen_bool(0.5) { "inbounds " } else { "" };
                    self.def(Ty::Ptr, n, &format!("getelementptr {inb}{}, ptr {p}, i64 {idx}", ty.name()));
                }
            }
            _ => {
                if let Some(d) = self.decls.choose(self.rng) {
                    let args: Vec<String> = d
                        .params
                        .iter()
                        .map(|&t| {
                            let v = if t == Ty::Ptr { self.pointer() } else { self.pick(t) };
                            format!("{} {v}", t.name())
                        })
                        .collect();
                    let call = format!("call {} @{}({})", d.ret.map_or("void", Ty::name), d.name, args.join(", "));
                    match d.ret {
                        Some(t) => {
                            let n = self.fresh("r");
                            self.def(t, n, &call);
                        }
                        None => self.line(&call),
                    }
                }
            }
        }
    }

    fn start_block(&mut self, label: &str) {
        self.out.push('\n');
        self.out.push_str(label);
        self.out.push_str(":\n");
        self.block = label.to_string();
    }

    fn region(&mut self, depth: usize) {
        for _ in 0..self.rng.gen_range(1..=3) {
            match self.rng.gen_range(0..6) {
                0 if depth < 3 => self.loop_(depth),
                1 if depth < 3 => self.diamond(depth),
                _ => {
                    for _ in 0..self.rng.gen_range(1..=4) {
                        self.instruction();
                    }
                }
            }
        }
    }

    fn diamond(&mut self, depth: usize) {
        let id = self.fresh("if").trim_start_matches('%').to_string();
        let c = self.pick(Ty::I1);
        self.line(&format!("br i1 {c}, label %{id}.then, label %{id}.else"));
        let mark = self.values.len();
        self.start_block(&format!("{id}.then"));
        self.region(depth + 1);
        let then_end = self.block.clone();
        let ty = *SCALARS.choose(self.rng).expect("scalars");
        let tv = self.pick(ty);
        self.line(&format!("br label %{id}.join"));
        self.values.truncate(mark);
        self.start_block(&format!("{id}.else"));
        let ev = self.pick(ty);
        self.line(&format!("br label %{id}.join"));
        self.start_block(&format!("{id}.join"));
        let n = self.fresh("m");
        self.def(ty, n, &format!("phi {} [ {tv}, %{then_end} ], [ {ev}, %{id}.else ]", ty.name()));
    }

    fn loop_(&mut self, depth: usize) {
        let id = self.fresh("loop").trim_start_matches('%').to_string();
        let pre = self.block.clone();
        let bound = self.pick(Ty::I32);
        self.line(&format!("br label %{id}"));
        self.start_block(&id);
        let mark = self.values.len();
        let iv = format!("%{id}.i");
        self.line(&format!("{iv} = phi i32 [ 0, %{pre} ], [ %{id}.next, %{id}.latch ]"));
        self.values.push((Ty::I32, iv.clone()));
        self.region(depth + 1);
        self.line(&format!("br label %{id}.latch"));
        self.start_block(&format!("{id}.latch"));
        self.line(&format!("%{id}.next = add i32 {iv}, 1"));
        self.line(&format!("%{id}.c = icmp slt i32 %{id}.next, {bound}"));
        let md = if self.rng.gen_bool(0.4) {
            self.next_md += 1;
            self.loop_ids.push(self.next_md);
            format!(", !llvm.loop !{}", self.next_md)
        } else {
            String::new()
        };
        self.line(&format!("br i1 %{id}.c, label %{id}, label %{id}.exit{md}"));
        self.values.truncate(mark);
        self.start_block(&format!("{id}.exit"));
    }
}

/// Text of a random well-formed module in the modern dialect, within the
/// supported IR subset.
pub fn random_module<R: Rng>(rng: &mut R) -> String {
    let mut out = String::new();
    if rng.gen_bool(0.5) {
        out.push_str("target triple = \"x86_64-unknown-linux-gnu\"\n\n");
    }
    let n_structs = rng.gen_range(0..=2);
    for s in 0..n_structs {
        let fields: Vec<&str> =
            (0..rng.gen_range(1..=3)).map(|_| SCALARS.choose(rng).expect("scalars").name()).collect();
        writeln!(out, "%T{s} = type {{ {} }}", fields.join(", ")).expect("string write");
    }
    let mut globals = Vec::new();
    for g in 0..rng.gen_range(0..=3) {
        let ty = *SCALARS.choose(rng).expect("scalars");
        let name = format!("@g{g}");
        let init = match rng.gen_range(0..3) {
            0 => format!("{} zeroinitializer", ty.name()),
            1 if ty.is_int() => format!("{} {}", ty.name(), rng.gen_range(-5..50)),
            1 => format!("{} {:.1}", ty.name(), rng.gen_range(-4..4) as f64),
            _ => format!("[4 x {}] zeroinitializer", ty.name()),
        };
        let link = ["internal global", "global", "internal constant"].choose(rng).expect("linkages");
        writeln!(out, "{name} = {link} {init}, align 8").expect("string write");
        globals.push((Ty::Ptr, name));
    }
    let mut decls = Vec::new();
    for d in 0..rng.gen_range(0..=2) {
        let params: Vec<Ty> = (0..rng.gen_range(0..=3))
            .map(|_| *[Ty::I32, Ty::I64, Ty::F64, Ty::Ptr].choose(rng).expect("types"))
            .collect();
        let ret = if rng.gen_bool(0.5) { Some(*SCALARS.choose(rng).expect("scalars")) } else { None };
        let ps: Vec<&str> = params.iter().map(|t| t.name()).collect();
        writeln!(out, "declare {} @ext{d}({})", ret.map_or("void", Ty::name), ps.join(", ")).expect("string write");
        decls.push(Decl { name: format!("ext{d}"), ret, params });
    }
    out.push('\n');

    let mut md_base = 0;
    let mut all_loop_ids = Vec::new();
    let mut uses_group = false;
    for f in 0..rng.gen_range(1..=3) {
        let numbered = rng.gen_bool(0.3);
        let params: Vec<Ty> = (0..rng.gen_range(0..=4))
            .map(|_| *[Ty::I32, Ty::I64, Ty::F32, Ty::F64, Ty::Ptr, Ty::Ptr].choose(rng).expect("types"))
            .collect();
        let ret = if rng.gen_bool(0.5) { Some(*SCALARS.choose(rng).expect("scalars")) } else { None };
        let mut values = Vec::new();
        let mut sig = Vec::new();
        for (i, &t) in params.iter().enumerate() {
            let name = if numbered { format!("%{i}") } else { format!("%arg{i}") };
            let attrs = if t == Ty::Ptr {
                ["", "noalias ", "nocapture ", "noundef ", "align 4 "].choose(rng).expect("attrs").to_string()
            } else {
                String::new()
            };
            sig.push(format!("{} {attrs}{name}", t.name()));
            values.push((t, name));
        }
        let group = if rng.gen_bool(0.3) {
            uses_group = true;
            " #0"
        } else {
            ""
        };
        let fname = if rng.gen_bool(0.3) { format!("_QPk{f}") } else { format!("k{f}") };
        writeln!(out, "define {} @{fname}({}){group} {{", ret.map_or("void", Ty::name), sig.join(", "))
            .expect("string write");
        let mut g = FnGen {
            rng: &mut *rng,
            out: String::new(),
            values,
            next: 0,
            block: "entry".into(),
            loop_ids: Vec::new(),
            next_md: md_base,
            decls: &decls,
            globals: &globals,
        };
        g.out.push_str("entry:\n");
        if g.rng.gen_bool(0.5) {
            let ty = *SCALARS.choose(g.rng).expect("scalars");
            let n = g.fresh("a");
            g.def(Ty::Ptr, n, &format!("alloca {}, align 8", ty.name()));
        }
        g.region(0);
        let r = match ret {
            Some(t) => {
                let v = g.pick(t);
                format!("ret {} {v}", t.name())
            }
            None => "ret void".to_string(),
        };
        g.line(&r);
        md_base = g.next_md;
        all_loop_ids.extend(g.loop_ids.iter().copied());
        out.push_str(&g.out);
        out.push_str("}\n\n");
    }
    if uses_group {
        out.push_str("attributes #0 = { nounwind \"fpga.kernel\"=\"true\" }\n");
    }
    if !all_loop_ids.is_empty() {
        let hint = md_base + 1;
        for id in &all_loop_ids {
            writeln!(out, "!{id} = distinct !{{!{id}, !{hint}}}").expect("string write");
        }
        writeln!(out, "!{hint} = !{{!\"llvm.loop.mustprogress\"}}").expect("string write");
    }
    out
}

#[cfg(test)]
mod tests {
    use super::*;
    use rand::rngs::StdRng;
    use rand::SeedableRng;

    #[test]
    fn structured_cfgs_reach_the_requested_depth() {
        let mut rng = StdRng::seed_from_u64(7);
        for depth in 0..=5 {
            let succs = structured_cfg(&mut rng, depth);
            let loops = oracle_loops(&succs);
            let deepest =
                (0..succs.len()).map(|b| loops.iter().filter(|(_, body)| body.contains(&b)).count()).max().unwrap_or(0);
            assert_eq!(deepest, depth, "{succs:?}");
        }
    }

    #[test]
    fn dominator_oracles_agree() {
        // 0 -> 1 -> 3, 0 -> 2 -> 3, 4 unreachable
        let doms = path_dominators(&[vec![1, 2], vec![3], vec![3], vec![], vec![0]]);
        assert_eq!(doms[3], Some([0, 3].into_iter().collect()));
        assert_eq!(doms[1], Some([0, 1].into_iter().collect()));
        assert_eq!(doms[4], None);
        let mut rng = StdRng::seed_from_u64(3);
        for _ in 0..200 {
            let g = arbitrary_graph(&mut rng, 8);
            assert_eq!(path_dominators(&g), deletion_dominators(&g), "{g:?}");
        }
    }
}
