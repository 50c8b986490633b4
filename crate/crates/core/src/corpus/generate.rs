//! Seeded random SIR programs with a matching EDL interface.
//!
//! Programs use structured control flow only: if/else diamonds and loops
//! whose trip count is bounded by a counter phi, so every run terminates.
//! Calls go from a function to functions defined after it, never back.
//! Pointers are kept in two classes so the interpreter rarely dereferences
//! an integer: data pointers (buffers holding values) and slots (holding
//! data pointers).

use std::fmt::Write as _;

use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;

#[derive(Clone, Debug, PartialEq, Eq)]
pub struct GeneratedProgram {
    pub seed: u64,
    pub sir: String,
    pub edl: String,
}

#[derive(Copy, Clone, Debug, PartialEq, Eq)]
enum Kind {
    Val,
    Ptr,
}

#[derive(Clone, Debug)]
struct Sig {
    name: String,
    params: Vec<Kind>,
    ret: Option<Kind>,
    /// EDL attribute per parameter for ECALLs.
    ecall: Option<Vec<&'static str>>,
}

const DIRECTIONS: [&str; 4] = ["out, size=16", "user_check", "in, size=16", "in, out, size=16"];

/// A program of at most `budget` instructions (at least one) with one to
/// four functions, the first of which is an ECALL.
pub fn generate_program(seed: u64, budget: usize) -> GeneratedProgram {
    let mut rng = ChaCha8Rng::seed_from_u64(seed);
    let budget = budget.max(1);
    let n = rng.gen_range(1..=(budget / 12).clamp(1, 4));
    let ecalls: Vec<bool> = (0..n).map(|i| i == 0 || rng.gen_bool(0.3)).collect();
    let sigs = make_sigs(&mut rng, &ecalls);
    let shares = split_budget(&mut rng, budget, &sigs);
    let globals = rng.gen_range(0..=1);
    let layout = Layout {
        window: n,
        globals,
        cluster: n,
        ocall_rate: 1.0,
        malloc_rate: 1.0,
        memcpy_rate: 1.0,
    };
    render(&mut rng, seed, &sigs, &shares, layout)
}

/// A program of about `instructions` instructions with `entries` ECALLs,
/// for scale tests. It is shaped like a code base rather than a stress
/// test: functions call only into the next few functions, globals are shared
/// within groups of 16 functions (a source file's statics), and boundary
/// calls are rare.
pub fn generate_large_program(seed: u64, instructions: usize, entries: usize) -> GeneratedProgram {
    let mut rng = ChaCha8Rng::seed_from_u64(seed);
    let n = (instructions / 120).max(entries).max(1);
    let stride = (n / entries.max(1)).max(1);
    let ecalls: Vec<bool> = (0..n).map(|i| i % stride == 0 && i / stride < entries).collect();
    let sigs = make_sigs(&mut rng, &ecalls);
    let shares = split_budget(&mut rng, instructions.max(n * 2), &sigs);
    let layout = Layout {
        window: 16,
        globals: 2,
        cluster: 16,
        ocall_rate: 0.05,
        malloc_rate: 0.25,
        memcpy_rate: 0.25,
    };
    render(&mut rng, seed, &sigs, &shares, layout)
}

#[derive(Clone, Copy, Debug)]
struct Layout {
    /// How many later functions a function may call.
    window: usize,
    /// Globals per cluster.
    globals: usize,
    /// Functions per cluster.
    cluster: usize,
    /// Fraction of boundary-call, malloc and memcpy statements kept; the
    /// rest become arithmetic. 1.0 draws no extra random numbers.
    ocall_rate: f64,
    malloc_rate: f64,
    memcpy_rate: f64,
}

fn make_sigs(rng: &mut ChaCha8Rng, ecalls: &[bool]) -> Vec<Sig> {
    let kind = |rng: &mut ChaCha8Rng| if rng.gen_bool(0.6) { Kind::Ptr } else { Kind::Val };
    ecalls
        .iter()
        .enumerate()
        .map(|(i, &is_ecall)| {
            let params: Vec<Kind> = (0..rng.gen_range(0..=3)).map(|_| kind(rng)).collect();
            if is_ecall {
                let attrs = params
                    .iter()
                    .map(|k| match k {
                        Kind::Ptr => DIRECTIONS[rng.gen_range(0..DIRECTIONS.len())],
                        Kind::Val => "",
                    })
                    .collect();
                Sig {
                    name: format!("ecall_{i}"),
                    params,
                    ret: None,
                    ecall: Some(attrs),
                }
            } else {
                let ret = match rng.gen_range(0..3) {
                    0 => None,
                    1 => Some(Kind::Val),
                    _ => Some(Kind::Ptr),
                };
                Sig {
                    name: format!("helper_{i}"),
                    params,
                    ret,
                    ecall: None,
                }
            }
        })
        .collect()
}

fn min_share(s: &Sig) -> usize {
    if s.ret == Some(Kind::Ptr) {
        2
    } else {
        1
    }
}

fn split_budget(rng: &mut ChaCha8Rng, budget: usize, sigs: &[Sig]) -> Vec<usize> {
    let mins: Vec<usize> = sigs.iter().map(min_share).collect();
    let spare = budget.saturating_sub(mins.iter().sum());
    let weights: Vec<usize> = sigs.iter().map(|_| rng.gen_range(1..=4)).collect();
    let total: usize = weights.iter().sum();
    let mut shares: Vec<usize> = mins.iter().zip(&weights).map(|(m, w)| m + spare * w / total).collect();
    let used: usize = shares.iter().sum();
    shares[0] += budget.saturating_sub(used);
    shares
}

fn render(
    rng: &mut ChaCha8Rng,
    seed: u64,
    sigs: &[Sig],
    shares: &[usize],
    layout: Layout,
) -> GeneratedProgram {
    let mut sir = String::new();
    let _ = writeln!(sir, "; generated from seed {seed}");
    sir.push_str("declare @malloc(val) -> ptr\ndeclare @ocall_send(ptr, val)\ndeclare @ocall_get(val) -> ptr\n");
    let clusters = sigs.len().div_ceil(layout.cluster.max(1));
    for g in 0..clusters * layout.globals {
        let _ = writeln!(sir, "global @g{g} : ptr");
    }
    for (i, sig) in sigs.iter().enumerate() {
        let mut g = FnGen {
            rng: &mut *rng,
            sigs,
            me: i,
            layout,
            out: String::new(),
            used: 0,
            budget: shares[i],
            reserve: 1 + usize::from(sig.ret == Some(Kind::Ptr)),
            next: 0,
            blocks: 0,
            block: "entry".to_string(),
            pools: Pools::default(),
            depth: 0,
        };
        g.function(&mut sir);
    }

    let mut edl = String::from("enclave {\n    trusted {\n");
    for s in sigs {
        let Some(attrs) = &s.ecall else { continue };
        let params: Vec<String> = s
            .params
            .iter()
            .zip(attrs)
            .enumerate()
            .map(|(k, (kind, attr))| match kind {
                Kind::Ptr => format!("[{attr}] uint8_t* p{k}"),
                Kind::Val => format!("size_t p{k}"),
            })
            .collect();
        let params = if params.is_empty() { "void".to_string() } else { params.join(", ") };
        let _ = writeln!(edl, "        public void {}({params});", s.name);
    }
    edl.push_str(
        "    };\n    untrusted {\n        void ocall_send([in, size=16] uint8_t* buf, size_t n);\n        uint8_t* ocall_get(size_t n);\n    };\n};\n",
    );
    GeneratedProgram { seed, sir, edl }
}

#[derive(Clone, Debug, Default)]
struct Pools {
    ptrs: Vec<String>,
    /// Slots known to hold a data pointer on every path to here.
    slots: Vec<String>,
    vals: Vec<String>,
}

struct FnGen<'a> {
    rng: &'a mut ChaCha8Rng,
    sigs: &'a [Sig],
    me: usize,
    layout: Layout,
    out: String,
    used: usize,
    budget: usize,
    /// Instructions promised to enclosing constructs and the final return.
    reserve: usize,
    next: usize,
    blocks: usize,
    block: String,
    pools: Pools,
    depth: usize,
}

impl FnGen<'_> {
    fn function(&mut self, sir: &mut String) {
        let sig = &self.sigs[self.me];
        let params: Vec<String> = sig
            .params
            .iter()
            .enumerate()
            .map(|(k, kind)| {
                let name = format!("%p{k}");
                match kind {
                    Kind::Ptr => self.pools.ptrs.push(name.clone()),
                    Kind::Val => self.pools.vals.push(name.clone()),
                }
                format!("{name}: {}", if *kind == Kind::Ptr { "ptr" } else { "val" })
            })
            .collect();
        let ret = match sig.ret {
            Some(Kind::Ptr) => " -> ptr",
            Some(Kind::Val) => " -> val",
            None => "",
        };
        let _ = writeln!(sir, "define @{}({}){} {{\nentry:", sig.name, params.join(", "), ret);
        self.statements(usize::MAX);
        self.reserve = 0;
        match sig.ret {
            None => self.emit("ret".into()),
            Some(Kind::Val) => {
                let v = self.val();
                self.emit(format!("ret {v}"));
            }
            Some(Kind::Ptr) => {
                let p = match self.pick_ptr() {
                    Some(p) => p,
                    None => self.alloca(),
                };
                self.emit(format!("ret {p}"));
            }
        }
        sir.push_str(&self.out);
        sir.push_str("}\n");
    }

    fn emit(&mut self, line: String) {
        self.used += 1;
        self.out.push_str("  ");
        self.out.push_str(&line);
        self.out.push('\n');
    }

    fn label(&mut self, name: &str) {
        let _ = writeln!(self.out, "{name}:");
        self.block = name.to_string();
    }

    fn fresh(&mut self) -> String {
        self.next += 1;
        format!("%t{}", self.next)
    }

    fn fresh_block(&mut self) -> String {
        self.blocks += 1;
        format!("b{}", self.blocks)
    }

    fn room(&self, k: usize) -> bool {
        self.used + k + self.reserve <= self.budget
    }

    fn pick(&mut self, pool: fn(&Pools) -> &Vec<String>) -> Option<String> {
        let p = pool(&self.pools);
        if p.is_empty() {
            None
        } else {
            Some(p[self.rng.gen_range(0..p.len())].clone())
        }
    }

    fn pick_ptr(&mut self) -> Option<String> {
        self.pick(|p| &p.ptrs)
    }

    fn val(&mut self) -> String {
        match self.pick(|p| &p.vals) {
            Some(v) if self.rng.gen_bool(0.8) => v,
            _ => self.rng.gen_range(0..8).to_string(),
        }
    }

    fn alloca(&mut self) -> String {
        let t = self.fresh();
        let size = [4, 8, 16, 32][self.rng.gen_range(0..4)];
        self.emit(format!("{t} = alloca {size}"));
        self.pools.ptrs.push(t.clone());
        t
    }

    /// Emits statements until the budget (minus reservations) or `cap`
    /// instructions are used.
    fn statements(&mut self, cap: usize) {
        while self.used < cap && self.room(1) {
            self.statement();
        }
    }

    fn statement(&mut self) {
        let choice = self.rng.gen_range(0..22);
        let done = match choice {
            0 | 1 => {
                let a = self.alloca();
                if self.room(1) && self.rng.gen_bool(0.1) {
                    self.emit(format!("annotate {a}, \"INSENSITIVE\""));
                }
                true
            }
            2 => self.slot(),
            3 if self.keep(self.layout.malloc_rate) => {
                let t = self.fresh();
                self.emit(format!("{t} = call @malloc(16)"));
                self.pools.ptrs.push(t);
                true
            }
            4 | 5 => self.derive(),
            6 | 7 => self.load(),
            8 | 9 => self.store(),
            10 if self.keep(self.layout.memcpy_rate) => self.memcpy(),
            11 | 12 => self.arith(),
            13 | 14 => self.call(),
            15 if self.keep(self.layout.ocall_rate) => self.ocall(),
            16 | 17 if self.depth < 3 => self.diamond(),
            18 if self.depth < 3 => self.looped(),
            19 => self.global_store(),
            _ => self.arith(),
        };
        if !done {
            self.alloca();
        }
    }

    fn keep(&mut self, rate: f64) -> bool {
        rate >= 1.0 || self.rng.gen_bool(rate)
    }

    fn slot(&mut self) -> bool {
        if !self.room(2) {
            return false;
        }
        let Some(p) = self.pick_ptr() else { return false };
        let s = self.fresh();
        self.emit(format!("{s} = alloca 8"));
        self.emit(format!("store {p}, {s}"));
        self.pools.slots.push(s);
        true
    }

    fn derive(&mut self) -> bool {
        let Some(p) = self.pick_ptr() else { return false };
        let t = self.fresh();
        if self.rng.gen_bool(0.5) {
            let off = [0, 4, 8][self.rng.gen_range(0..3)];
            self.emit(format!("{t} = gep {p}, {off}"));
        } else {
            self.emit(format!("{t} = bitcast {p}"));
        }
        self.pools.ptrs.push(t);
        true
    }

    fn load(&mut self) -> bool {
        let t = self.fresh();
        if self.rng.gen_bool(0.5) {
            if let Some(s) = self.pick(|p| &p.slots) {
                self.emit(format!("{t} = load {s}"));
                self.pools.ptrs.push(t);
                return true;
            }
        }
        let Some(p) = self.pick_ptr() else { return false };
        self.emit(format!("{t} = load {p}"));
        self.pools.vals.push(t);
        true
    }

    fn store(&mut self) -> bool {
        if self.rng.gen_bool(0.3) {
            if let (Some(s), Some(p)) = (self.pick(|p| &p.slots), self.pick_ptr()) {
                self.emit(format!("store {p}, {s}"));
                return true;
            }
        }
        let Some(p) = self.pick_ptr() else { return false };
        let v = self.val();
        self.emit(format!("store {v}, {p}"));
        true
    }

    fn memcpy(&mut self) -> bool {
        let (Some(d), Some(s)) = (self.pick_ptr(), self.pick_ptr()) else { return false };
        self.emit(format!("memcpy {d}, {s}, 16"));
        true
    }

    fn arith(&mut self) -> bool {
        let t = self.fresh();
        match self.rng.gen_range(0..4) {
            0 => {
                let v = self.val();
                let op = ["neg", "not"][self.rng.gen_range(0..2)];
                self.emit(format!("{t} = {op} {v}"));
            }
            1 => {
                let (a, b) = (self.val(), self.val());
                self.emit(format!("{t} = icmp slt {a}, {b}"));
            }
            _ => {
                let (a, b) = (self.val(), self.val());
                let op = ["add", "sub", "mul", "xor", "and", "or"][self.rng.gen_range(0..6)];
                self.emit(format!("{t} = {op} {a}, {b}"));
            }
        }
        self.pools.vals.push(t);
        true
    }

    /// Arguments for `callee`, or `None` if a pointer is needed and there
    /// is none.
    fn args(&mut self, callee: usize) -> Option<String> {
        let kinds = self.sigs[callee].params.clone();
        let mut args = Vec::new();
        for k in kinds {
            args.push(match k {
                Kind::Ptr => self.pick_ptr()?,
                Kind::Val => self.val(),
            });
        }
        Some(args.join(", "))
    }

    fn call(&mut self) -> bool {
        let last = (self.me + self.layout.window).min(self.sigs.len() - 1);
        if last <= self.me {
            return false;
        }
        let callee = self.rng.gen_range(self.me + 1..=last);
        let Some(args) = self.args(callee) else { return false };
        let target = match self.rng.gen_range(0..4) {
            0 if self.room(2) => {
                let fp = self.fresh();
                self.emit(format!("{fp} = bitcast @{}", self.sigs[callee].name));
                fp
            }
            1 if self.room(4) => {
                let slot = self.fresh();
                let fp = self.fresh();
                self.emit(format!("{slot} = alloca 8"));
                self.emit(format!("store @{}, {slot}", self.sigs[callee].name));
                self.emit(format!("{fp} = load {slot}"));
                fp
            }
            _ => format!("@{}", self.sigs[callee].name),
        };
        match self.sigs[callee].ret {
            Some(k) => {
                let t = self.fresh();
                self.emit(format!("{t} = call {target}({args})"));
                match k {
                    Kind::Ptr => self.pools.ptrs.push(t),
                    Kind::Val => self.pools.vals.push(t),
                }
            }
            None => self.emit(format!("call {target}({args})")),
        }
        true
    }

    fn ocall(&mut self) -> bool {
        if self.rng.gen_bool(0.5) {
            let Some(p) = self.pick_ptr() else { return false };
            let v = self.val();
            self.emit(format!("call @ocall_send({p}, {v})"));
        } else {
            let t = self.fresh();
            self.emit(format!("{t} = call @ocall_get(16)"));
            self.pools.ptrs.push(t);
        }
        true
    }

    fn global_store(&mut self) -> bool {
        let per = self.layout.globals;
        if per == 0 {
            return false;
        }
        let base = self.me / self.layout.cluster.max(1) * per;
        let g = format!("@g{}", base + self.rng.gen_range(0..per));
        let Some(p) = self.pick_ptr() else { return false };
        self.emit(format!("store {p}, {g}"));
        if !self.pools.slots.contains(&g) {
            self.pools.slots.push(g);
        }
        true
    }

    /// Roughly half of what is left, for one arm of a construct.
    fn arm_cap(&mut self) -> usize {
        let avail = self.budget.saturating_sub(self.used + self.reserve);
        self.used + self.rng.gen_range(0..=avail / 2)
    }

    fn diamond(&mut self) -> bool {
        // icmp, condbr, two brs, up to two phis.
        if !self.room(6) {
            return false;
        }
        let c = self.fresh();
        match self.pick_ptr() {
            Some(p) if self.rng.gen_bool(0.4) => self.emit(format!("{c} = icmp eq {p}, null")),
            _ => {
                let v = self.val();
                self.emit(format!("{c} = icmp slt {v}, 3"));
            }
        }
        let (bt, bf, bj) = (self.fresh_block(), self.fresh_block(), self.fresh_block());
        self.emit(format!("condbr {c}, {bt}, {bf}"));
        self.reserve += 4;
        self.depth += 1;
        let before = self.pools.clone();

        self.label(&bt);
        let cap = self.arm_cap();
        self.statements(cap);
        let (end_t, pt, vt) = (self.block.clone(), self.pick_ptr(), self.pick(|p| &p.vals));
        self.reserve -= 1;
        self.emit(format!("br {bj}"));

        self.pools = before.clone();
        self.label(&bf);
        let cap = self.arm_cap();
        self.statements(cap);
        let (end_f, pf, vf) = (self.block.clone(), self.pick_ptr(), self.pick(|p| &p.vals));
        self.reserve -= 1;
        self.emit(format!("br {bj}"));

        self.pools = before;
        self.depth -= 1;
        self.reserve -= 2;
        self.label(&bj);
        if let (Some(a), Some(b)) = (pt, pf) {
            let t = self.fresh();
            self.emit(format!("{t} = phi [{a}, {end_t}], [{b}, {end_f}]"));
            self.pools.ptrs.push(t);
        }
        if let (Some(a), Some(b)) = (vt, vf) {
            let t = self.fresh();
            self.emit(format!("{t} = phi [{a}, {end_t}], [{b}, {end_f}]"));
            self.pools.vals.push(t);
        }
        true
    }

    fn looped(&mut self) -> bool {
        // br, two phis, icmp, condbr, br to latch, gep, add, back edge.
        if !self.room(9) {
            return false;
        }
        let Some(p0) = self.pick_ptr() else { return false };
        let (bh, bb, bl, bx) = (self.fresh_block(), self.fresh_block(), self.fresh_block(), self.fresh_block());
        let (i, i2, p, p2, c) = (self.fresh(), self.fresh(), self.fresh(), self.fresh(), self.fresh());
        let pre = self.block.clone();
        let trips = self.rng.gen_range(1..=3);
        self.emit(format!("br {bh}"));
        self.label(&bh);
        self.emit(format!("{i} = phi [0, {pre}], [{i2}, {bl}]"));
        self.emit(format!("{p} = phi [{p0}, {pre}], [{p2}, {bl}]"));
        self.emit(format!("{c} = icmp slt {i}, {trips}"));
        self.emit(format!("condbr {c}, {bb}, {bx}"));
        self.reserve += 4;
        self.depth += 1;
        let mut before = self.pools.clone();
        before.ptrs.push(p.clone());
        before.vals.push(i.clone());
        self.pools = before.clone();

        self.label(&bb);
        let cap = self.arm_cap();
        self.statements(cap);
        self.reserve -= 1;
        self.emit(format!("br {bl}"));
        self.label(&bl);
        self.pools = before.clone();
        self.reserve -= 3;
        self.emit(format!("{p2} = gep {p}, 4"));
        self.emit(format!("{i2} = add {i}, 1"));
        self.emit(format!("br {bh}"));
        self.depth -= 1;
        self.pools = before;
        self.label(&bx);
        true
    }
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::edl::parse_edl;
    use crate::sir::parse_sir;

    #[test]
    fn programs_verify_and_respect_the_budget() {
        for seed in 0..300 {
            let budget = 1 + (seed as usize * 7) % 200;
            let g = generate_program(seed, budget);
            let m = parse_sir(&g.sir).unwrap_or_else(|e| panic!("seed {seed}: {e}\n{}", g.sir));
            assert!(m.instruction_count() <= budget, "seed {seed}: {} > {budget}", m.instruction_count());
            let iface = parse_edl(&g.edl).unwrap_or_else(|e| panic!("seed {seed}: {e}\n{}", g.edl));
            assert!(iface.functions.iter().any(|f| f.name == "ecall_0"));
        }
    }

    #[test]
    fn same_seed_same_text() {
        assert_eq!(generate_program(7, 120), generate_program(7, 120));
        assert_ne!(generate_program(7, 120).sir, generate_program(8, 120).sir);
    }

    #[test]
    fn budget_one_is_a_single_return() {
        let g = generate_program(0, 1);
        let m = parse_sir(&g.sir).unwrap();
        assert_eq!(m.instruction_count(), 1);
    }

    #[test]
    fn seed_zero_budget_fifty_is_frozen() {
        let g = generate_program(0, 50);
        assert!(parse_sir(&g.sir).unwrap().instruction_count() <= 50);
        assert_eq!(g.sir, include_str!("testdata/seed0_budget50.sir"));
    }

    #[test]
    fn large_programs_have_the_requested_entries() {
        let g = generate_large_program(1, 3000, 10);
        let m = parse_sir(&g.sir).unwrap();
        assert!(m.instruction_count() >= 2500, "{}", m.instruction_count());
        assert_eq!(parse_edl(&g.edl).unwrap().functions.len(), 10 + 2);
    }
}
