//! Inclusion-based points-to analysis.
//!
//! Flow-, context- and field-insensitive. Every alloca, global, function and
//! direct `malloc` call site is an abstract object; each object also has a
//! "contents" node holding what may be stored in it. Calls to declared
//! externals share a single unknown-external object: pointer arguments (and
//! whatever they point to) escape into it, and the call result points to it.

use std::collections::{BTreeMap, BTreeSet, HashSet, VecDeque};
use std::fmt::Write as _;

use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;

use crate::sir::{FuncId, InstRef, Opcode, Shape, SirModule, ValueDef, ValueId};

#[derive(Copy, Clone, Debug, PartialEq, Eq, Hash, PartialOrd, Ord)]
pub struct SiteId(pub u32);

#[derive(Copy, Clone, Debug, PartialEq, Eq, Hash, PartialOrd, Ord)]
pub enum SiteKey {
    Alloca(ValueId),
    Malloc(InstRef),
    Global(ValueId),
    Function(FuncId),
    UnknownExternal,
}

#[derive(Copy, Clone, Debug, PartialEq, Eq, Hash)]
pub enum SiteKind {
    Stack,
    Heap,
    Global,
    Function,
    External,
}

#[derive(Clone, Debug)]
pub struct AllocationSite {
    pub key: SiteKey,
    pub kind: SiteKind,
    /// Value naming the object, for all but the external object.
    pub value: Option<ValueId>,
    pub label: String,
    pub loc: String,
}

#[derive(Clone, Debug)]
pub struct PointsToResult {
    pub sites: Vec<AllocationSite>,
    site_index: BTreeMap<SiteKey, SiteId>,
    pts: Vec<Vec<SiteId>>,
    contents: Vec<Vec<SiteId>>,
    /// Callees of indirect call sites.
    pub resolved_callees: BTreeMap<InstRef, Vec<FuncId>>,
    pub diagnostics: Vec<String>,
}

impl PointsToResult {
    /// Sorted points-to set of a value; empty for non-pointers and `null`.
    pub fn pts(&self, v: ValueId) -> &[SiteId] {
        &self.pts[v.0 as usize]
    }

    /// Sorted points-to set of what may be stored in object `o`.
    pub fn contents(&self, o: SiteId) -> &[SiteId] {
        &self.contents[o.0 as usize]
    }

    pub fn site(&self, id: SiteId) -> &AllocationSite {
        &self.sites[id.0 as usize]
    }

    pub fn site_for(&self, key: SiteKey) -> Option<SiteId> {
        self.site_index.get(&key).copied()
    }

    /// The site created by an allocation value (alloca, direct malloc
    /// result, global).
    pub fn site_of_allocation(&self, m: &SirModule, v: ValueId) -> Option<SiteId> {
        let key = match &m.value(v).def {
            ValueDef::Global(_) => SiteKey::Global(v),
            ValueDef::Inst(r) if m.inst(*r).opcode == Opcode::Alloca => SiteKey::Alloca(v),
            ValueDef::Inst(r) => SiteKey::Malloc(*r),
            _ => return None,
        };
        self.site_for(key)
    }

    pub fn external_site(&self) -> SiteId {
        self.site_index[&SiteKey::UnknownExternal]
    }

    /// Do `a` and `b` possibly point to a common object?
    pub fn alias(&self, a: ValueId, b: ValueId) -> bool {
        let (pa, pb) = (self.pts(a), self.pts(b));
        let (mut i, mut j) = (0, 0);
        while i < pa.len() && j < pb.len() {
            match pa[i].cmp(&pb[j]) {
                std::cmp::Ordering::Less => i += 1,
                std::cmp::Ordering::Greater => j += 1,
                std::cmp::Ordering::Equal => return true,
            }
        }
        false
    }

    /// Possible callees of a call instruction: the direct target, or the
    /// functions its callee operand may point to.
    pub fn callees(&self, m: &SirModule, r: InstRef) -> Vec<FuncId> {
        match m.direct_callee(m.inst(r)) {
            Some(f) => vec![f],
            None => self.resolved_callees.get(&r).cloned().unwrap_or_default(),
        }
    }

    /// `value -> {site,...}` lines for every value with a nonempty set,
    /// sorted lexicographically.
    pub fn dump(&self, m: &SirModule) -> String {
        let mut lines: Vec<String> = (0..m.values.len())
            .filter(|&i| !self.pts[i].is_empty())
            .map(|i| {
                let sites: Vec<_> = self.pts[i].iter().map(|s| self.site(*s).label.as_str()).collect();
                format!("{} -> {{{}}}", m.value_label(ValueId(i as u32)), sites.join(","))
            })
            .collect();
        lines.sort();
        let mut out = String::new();
        for l in lines {
            let _ = writeln!(out, "{l}");
        }
        out
    }
}

#[derive(Clone, Copy, Debug, Default)]
pub struct SolverOptions {
    /// Process the worklist in a seeded random order instead of FIFO.
    pub shuffle_seed: Option<u64>,
}

pub fn solve_points_to(m: &SirModule) -> PointsToResult {
    solve_points_to_with(m, SolverOptions::default())
}

pub fn solve_points_to_with(m: &SirModule, opts: SolverOptions) -> PointsToResult {
    let mut s = Solver::new(m, opts);
    s.run();
    s.finish()
}

fn site_label(m: &SirModule, key: SiteKey) -> (SiteKind, Option<ValueId>, String, String) {
    match key {
        SiteKey::Alloca(v) => (SiteKind::Stack, Some(v), format!("stack:{}", m.value_label(v)), m.value_loc(v)),
        SiteKey::Malloc(r) => {
            let v = m.inst(r).result;
            let label = match v {
                Some(v) => format!("heap:{}", m.value_label(v)),
                None => format!("heap:{}#{}", m.function(r.func).name, r.index),
            };
            (SiteKind::Heap, v, label, m.inst_loc(r))
        }
        SiteKey::Global(v) => (SiteKind::Global, Some(v), format!("global:{}", m.value_label(v)), m.value_loc(v)),
        SiteKey::Function(f) => {
            let v = m.function(f).value;
            (SiteKind::Function, Some(v), format!("func:@{}", m.function(f).name), m.value_loc(v))
        }
        SiteKey::UnknownExternal => (SiteKind::External, None, "external".to_string(), "<external>".to_string()),
    }
}

/// Constraint-graph node: a value, an object's contents, or a function's
/// return slot.
type Node = usize;

struct Solver<'m> {
    m: &'m SirModule,
    sites: Vec<AllocationSite>,
    site_index: BTreeMap<SiteKey, SiteId>,
    n_values: usize,
    n_sites: usize,
    pts: Vec<Vec<SiteId>>,
    prop: Vec<Vec<SiteId>>,
    succ: Vec<Vec<Node>>,
    edges: HashSet<(Node, Node)>,
    /// Nodes that may not hold pointers.
    blocked: Vec<bool>,
    load_by_addr: Vec<Vec<Node>>,
    store_by_addr: Vec<Vec<Node>>,
    /// `(dst, src)` pairs keyed by both operands.
    memcpy_by_src: Vec<Vec<Node>>,
    memcpy_by_dst: Vec<Vec<Node>>,
    calls_by_callee: Vec<Vec<InstRef>>,
    escapes: Vec<bool>,
    resolved: BTreeMap<InstRef, BTreeSet<FuncId>>,
    worklist: VecDeque<Node>,
    queued: Vec<bool>,
    rng: Option<ChaCha8Rng>,
}

impl<'m> Solver<'m> {
    fn new(m: &'m SirModule, opts: SolverOptions) -> Self {
        let mut keys = Vec::new();
        for g in &m.globals {
            keys.push(SiteKey::Global(g.value));
        }
        for f in m.func_ids() {
            keys.push(SiteKey::Function(f));
        }
        for (r, inst) in m.instructions() {
            if inst.opcode == Opcode::Alloca {
                keys.push(SiteKey::Alloca(inst.result.unwrap()));
            } else if m.is_malloc_call(inst) {
                keys.push(SiteKey::Malloc(r));
            }
        }
        keys.push(SiteKey::UnknownExternal);
        let mut sites = Vec::new();
        let mut site_index = BTreeMap::new();
        for key in keys {
            let (kind, value, label, loc) = site_label(m, key);
            site_index.insert(key, SiteId(sites.len() as u32));
            sites.push(AllocationSite {
                key,
                kind,
                value,
                label,
                loc,
            });
        }
        let n_values = m.values.len();
        let n_sites = sites.len();
        let n = n_values + n_sites + m.functions.len();
        let blocked = (0..n)
            .map(|i| i < n_values && m.values[i].shape == Shape::Val)
            .collect();
        Solver {
            m,
            sites,
            site_index,
            n_values,
            n_sites,
            pts: vec![Vec::new(); n],
            prop: vec![Vec::new(); n],
            succ: vec![Vec::new(); n],
            edges: HashSet::new(),
            blocked,
            load_by_addr: vec![Vec::new(); n],
            store_by_addr: vec![Vec::new(); n],
            memcpy_by_src: vec![Vec::new(); n],
            memcpy_by_dst: vec![Vec::new(); n],
            calls_by_callee: vec![Vec::new(); n],
            escapes: vec![false; n],
            resolved: BTreeMap::new(),
            worklist: VecDeque::new(),
            queued: vec![false; n],
            rng: opts.shuffle_seed.map(ChaCha8Rng::seed_from_u64),
        }
    }

    fn val(&self, v: ValueId) -> Node {
        v.0 as usize
    }

    fn content(&self, o: SiteId) -> Node {
        self.n_values + o.0 as usize
    }

    fn ret_slot(&self, f: FuncId) -> Node {
        self.n_values + self.n_sites + f.0 as usize
    }

    fn site(&self, key: SiteKey) -> SiteId {
        self.site_index[&key]
    }

    fn push(&mut self, n: Node) {
        if !self.queued[n] {
            self.queued[n] = true;
            self.worklist.push_back(n);
        }
    }

    fn pop(&mut self) -> Option<Node> {
        let n = match &mut self.rng {
            Some(rng) if !self.worklist.is_empty() => {
                let i = rng.gen_range(0..self.worklist.len());
                self.worklist.swap_remove_back(i)
            }
            _ => self.worklist.pop_front(),
        }?;
        self.queued[n] = false;
        Some(n)
    }

    /// Adds sites to a node's set; returns whether it grew.
    fn add_pts(&mut self, n: Node, new: &[SiteId]) -> bool {
        if self.blocked[n] || new.is_empty() {
            return false;
        }
        let cur = &mut self.pts[n];
        let before = cur.len();
        let merged = merge_sorted(cur, new);
        if merged.len() != before {
            *cur = merged;
            self.push(n);
            true
        } else {
            false
        }
    }

    fn add_edge(&mut self, from: Node, to: Node) {
        if self.blocked[to] || from == to || !self.edges.insert((from, to)) {
            return;
        }
        self.succ[from].push(to);
        let cur = self.pts[from].clone();
        self.add_pts(to, &cur);
    }

    fn mark_escaping(&mut self, n: Node) {
        if self.escapes[n] {
            return;
        }
        self.escapes[n] = true;
        let u = self.content(self.site(SiteKey::UnknownExternal));
        self.add_edge(n, u);
        for o in self.pts[n].clone() {
            self.add_edge(self.content(o), u);
        }
    }

    fn external_call(&mut self, r: InstRef) {
        let inst = self.m.inst(r);
        for a in inst.call_args().collect::<Vec<_>>() {
            self.mark_escaping(self.val(a));
        }
        if let Some(res) = inst.result {
            let u = self.site(SiteKey::UnknownExternal);
            self.add_pts(self.val(res), &[u]);
        }
    }

    fn bind_call(&mut self, r: InstRef, f: FuncId) {
        let callee = self.m.function(f);
        if !callee.is_defined() {
            self.external_call(r);
            return;
        }
        let inst = self.m.inst(r);
        let args: Vec<_> = inst.call_args().collect();
        for (a, p) in args.iter().zip(&callee.params) {
            self.add_edge(self.val(*a), self.val(*p));
        }
        if let Some(res) = inst.result {
            self.add_edge(self.ret_slot(f), self.val(res));
        }
    }

    fn seed(&mut self) {
        let m = self.m;
        for g in &m.globals {
            let s = self.site(SiteKey::Global(g.value));
            self.add_pts(self.val(g.value), &[s]);
        }
        for f in m.func_ids() {
            let s = self.site(SiteKey::Function(f));
            self.add_pts(self.val(m.function(f).value), &[s]);
        }
        let u = self.site(SiteKey::UnknownExternal);
        self.add_pts(self.content(u), &[u]);

        for (r, inst) in m.instructions() {
            let res = inst.result.map(|v| self.val(v));
            match inst.opcode {
                Opcode::Alloca => {
                    let s = self.site(SiteKey::Alloca(inst.result.unwrap()));
                    self.add_pts(res.unwrap(), &[s]);
                }
                Opcode::Bitcast | Opcode::Gep => {
                    self.add_edge(self.val(inst.unary_src()), res.unwrap());
                }
                Opcode::Phi => {
                    for (v, _) in inst.phi_incoming().collect::<Vec<_>>() {
                        self.add_edge(self.val(v), res.unwrap());
                    }
                }
                Opcode::Load => {
                    let a = self.val(inst.load_addr());
                    self.load_by_addr[a].push(res.unwrap());
                }
                Opcode::Store => {
                    let (v, a) = inst.store_parts();
                    let (v, a) = (self.val(v), self.val(a));
                    self.store_by_addr[a].push(v);
                }
                Opcode::Memcpy => {
                    let (src, dst) = inst.store_parts();
                    let (src, dst) = (self.val(src), self.val(dst));
                    self.memcpy_by_src[src].push(dst);
                    self.memcpy_by_dst[dst].push(src);
                }
                Opcode::Ret => {
                    if let Some(v) = inst.value_operands().next() {
                        self.add_edge(self.val(v), self.ret_slot(r.func));
                    }
                }
                Opcode::Call => {
                    if m.is_malloc_call(inst) {
                        let s = self.site(SiteKey::Malloc(r));
                        if let Some(res) = res {
                            self.add_pts(res, &[s]);
                        }
                    } else if let Some(f) = m.direct_callee(inst) {
                        self.bind_call(r, f);
                    } else {
                        let c = self.val(inst.callee());
                        self.calls_by_callee[c].push(r);
                    }
                }
                _ => {}
            }
        }
        // Re-queue everything that already holds sites so complex
        // constraints registered after the first push still fire.
        for n in 0..self.pts.len() {
            if !self.pts[n].is_empty() {
                self.push(n);
            }
        }
        if let Some(rng) = &mut self.rng {
            let wl = self.worklist.make_contiguous();
            for i in (1..wl.len()).rev() {
                let j = rng.gen_range(0..=i);
                wl.swap(i, j);
            }
        }
    }

    fn run(&mut self) {
        self.seed();
        while let Some(n) = self.pop() {
            let delta = diff_sorted(&self.pts[n], &self.prop[n]);
            if delta.is_empty() {
                continue;
            }
            self.prop[n] = self.pts[n].clone();

            for o in &delta {
                let c = self.content(*o);
                for v in self.load_by_addr[n].clone() {
                    self.add_edge(c, v);
                }
                for v in self.store_by_addr[n].clone() {
                    self.add_edge(v, c);
                }
                for dst in self.memcpy_by_src[n].clone() {
                    for od in self.pts[dst].clone() {
                        self.add_edge(c, self.content(od));
                    }
                }
                for src in self.memcpy_by_dst[n].clone() {
                    for os in self.pts[src].clone() {
                        self.add_edge(self.content(os), c);
                    }
                }
                if self.escapes[n] {
                    let u = self.content(self.site(SiteKey::UnknownExternal));
                    self.add_edge(c, u);
                }
                if let SiteKey::Function(f) = self.sites[o.0 as usize].key {
                    for r in self.calls_by_callee[n].clone() {
                        if self.resolved.entry(r).or_default().insert(f) {
                            self.bind_call(r, f);
                        }
                    }
                }
            }
            for s in self.succ[n].clone() {
                self.add_pts(s, &delta);
            }
        }
    }

    fn finish(self) -> PointsToResult {
        let mut diagnostics = Vec::new();
        let mut resolved_callees = BTreeMap::new();
        for (r, inst) in self.m.instructions() {
            if inst.opcode == Opcode::Call && self.m.direct_callee(inst).is_none() {
                let set = self.resolved.get(&r).cloned().unwrap_or_default();
                if set.is_empty() {
                    diagnostics.push(format!(
                        "{}: indirect call through {} has no resolvable callee",
                        self.m.inst_loc(r),
                        self.m.value_label(inst.callee())
                    ));
                }
                resolved_callees.insert(r, set.into_iter().collect());
            }
        }
        let mut pts = self.pts;
        let contents = pts[self.n_values..self.n_values + self.n_sites].to_vec();
        pts.truncate(self.n_values);
        PointsToResult {
            sites: self.sites,
            site_index: self.site_index,
            pts,
            contents,
            resolved_callees,
            diagnostics,
        }
    }
}

fn merge_sorted(a: &[SiteId], b: &[SiteId]) -> Vec<SiteId> {
    let mut out = Vec::with_capacity(a.len() + b.len());
    let (mut i, mut j) = (0, 0);
    while i < a.len() && j < b.len() {
        match a[i].cmp(&b[j]) {
            std::cmp::Ordering::Less => {
                out.push(a[i]);
                i += 1;
            }
            std::cmp::Ordering::Greater => {
                out.push(b[j]);
                j += 1;
            }
            std::cmp::Ordering::Equal => {
                out.push(a[i]);
                i += 1;
                j += 1;
            }
        }
    }
    out.extend_from_slice(&a[i..]);
    out.extend_from_slice(&b[j..]);
    out
}

fn diff_sorted(a: &[SiteId], b: &[SiteId]) -> Vec<SiteId> {
    let mut out = Vec::new();
    let mut j = 0;
    for x in a {
        while j < b.len() && b[j] < *x {
            j += 1;
        }
        if j >= b.len() || b[j] != *x {
            out.push(*x);
        }
    }
    out
}

/// Values that are copies of `v` through bitcasts and phis, including `v`.
pub fn copy_derived(m: &SirModule, users: &[Vec<InstRef>], v: ValueId) -> BTreeSet<ValueId> {
    let mut seen = BTreeSet::from([v]);
    let mut stack = vec![v];
    while let Some(x) = stack.pop() {
        for r in &users[x.0 as usize] {
            let inst = m.inst(*r);
            if matches!(inst.opcode, Opcode::Bitcast | Opcode::Phi) {
                if let Some(res) = inst.result {
                    if seen.insert(res) {
                        stack.push(res);
                    }
                }
            }
        }
    }
    seen
}

/// For every value, the instructions using it as an operand.
pub fn value_users(m: &SirModule) -> Vec<Vec<InstRef>> {
    let mut users = vec![Vec::new(); m.values.len()];
    for (r, inst) in m.instructions() {
        for v in inst.value_operands() {
            let u: &mut Vec<InstRef> = &mut users[v.0 as usize];
            if u.last() != Some(&r) {
                u.push(r);
            }
        }
    }
    users
}

/// Malloc results never compared against `null`, directly or through a
/// bitcast/phi copy.
pub fn null_candidates(m: &SirModule, _r: &PointsToResult) -> BTreeSet<ValueId> {
    let users = value_users(m);
    let mut out = BTreeSet::new();
    for (_, inst) in m.instructions() {
        if !m.is_malloc_call(inst) {
            continue;
        }
        let Some(v) = inst.result else { continue };
        let derived = copy_derived(m, &users, v);
        let checked = derived.iter().any(|d| {
            users[d.0 as usize].iter().any(|r| {
                let u = m.inst(*r);
                if !matches!(u.opcode, Opcode::Icmp(_)) {
                    return false;
                }
                let ops: Vec<_> = u.value_operands().collect();
                (ops[0] == *d && m.is_null(ops[1])) || (ops[1] == *d && m.is_null(ops[0]))
            })
        });
        if !checked {
            out.insert(v);
        }
    }
    out
}

/// Is `v` a function parameter, instruction result or constant of `f`?
pub fn is_local_to(m: &SirModule, v: ValueId, f: FuncId) -> bool {
    match m.value(v).def {
        ValueDef::Param { func, .. } => func == f,
        ValueDef::Inst(r) | ValueDef::Const { user: r, .. } => r.func == f,
        _ => false,
    }
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::sir::parse_sir;

    fn val(m: &SirModule, func: &str, name: &str) -> ValueId {
        let f = m.function_by_name(func).unwrap();
        (0..m.values.len() as u32)
            .map(ValueId)
            .find(|v| m.value(*v).name == name && m.owner(*v) == Some(f))
            .unwrap_or_else(|| panic!("no value {func}:%{name}"))
    }

    fn labels(r: &PointsToResult, v: ValueId) -> Vec<String> {
        r.pts(v).iter().map(|s| r.site(*s).label.clone()).collect()
    }

    /// Naive closure: re-applies every rule over every instruction until no
    /// set changes.
    fn naive(m: &SirModule, r: &PointsToResult) -> (Vec<BTreeSet<SiteId>>, Vec<BTreeSet<SiteId>>) {
        let mut pts = vec![BTreeSet::new(); m.values.len()];
        let mut cont = vec![BTreeSet::new(); r.sites.len()];
        let mut ret = vec![BTreeSet::new(); m.functions.len()];
        let u = r.external_site();
        cont[u.0 as usize].insert(u);
        let ok = |v: ValueId| m.value(v).shape != Shape::Val;
        loop {
            let before = (pts.clone(), cont.clone(), ret.clone());
            let mut escaped: Vec<ValueId> = Vec::new();
            for g in &m.globals {
                pts[g.value.0 as usize].insert(r.site_for(SiteKey::Global(g.value)).unwrap());
            }
            for f in m.func_ids() {
                pts[m.function(f).value.0 as usize].insert(r.site_for(SiteKey::Function(f)).unwrap());
            }
            for (ir, inst) in m.instructions() {
                let res = inst.result;
                let copy = |pts: &mut Vec<BTreeSet<SiteId>>, from: ValueId, to: ValueId| {
                    if ok(to) {
                        let s = pts[from.0 as usize].clone();
                        pts[to.0 as usize].extend(s);
                    }
                };
                match inst.opcode {
                    Opcode::Alloca => {
                        pts[res.unwrap().0 as usize].insert(r.site_for(SiteKey::Alloca(res.unwrap())).unwrap());
                    }
                    Opcode::Bitcast | Opcode::Gep => copy(&mut pts, inst.unary_src(), res.unwrap()),
                    Opcode::Phi => {
                        for (v, _) in inst.phi_incoming() {
                            copy(&mut pts, v, res.unwrap());
                        }
                    }
                    Opcode::Load => {
                        for o in pts[inst.load_addr().0 as usize].clone() {
                            let c = cont[o.0 as usize].clone();
                            if ok(res.unwrap()) {
                                pts[res.unwrap().0 as usize].extend(c);
                            }
                        }
                    }
                    Opcode::Store => {
                        let (v, a) = inst.store_parts();
                        for o in pts[a.0 as usize].clone() {
                            cont[o.0 as usize].extend(pts[v.0 as usize].clone());
                        }
                    }
                    Opcode::Memcpy => {
                        let (s, d) = inst.store_parts();
                        for os in pts[s.0 as usize].clone() {
                            for od in pts[d.0 as usize].clone() {
                                let c = cont[os.0 as usize].clone();
                                cont[od.0 as usize].extend(c);
                            }
                        }
                    }
                    Opcode::Ret => {
                        if let Some(v) = inst.value_operands().next() {
                            let s = pts[v.0 as usize].clone();
                            ret[ir.func.0 as usize].extend(s);
                        }
                    }
                    Opcode::Call => {
                        if m.is_malloc_call(inst) {
                            pts[res.unwrap().0 as usize].insert(r.site_for(SiteKey::Malloc(ir)).unwrap());
                            continue;
                        }
                        let targets: Vec<FuncId> = match m.direct_callee(inst) {
                            Some(f) => vec![f],
                            None => pts[inst.callee().0 as usize]
                                .iter()
                                .filter_map(|s| match r.site(*s).key {
                                    SiteKey::Function(f) => Some(f),
                                    _ => None,
                                })
                                .collect(),
                        };
                        for f in targets {
                            let callee = m.function(f);
                            if callee.is_defined() {
                                for (a, p) in inst.call_args().zip(&callee.params) {
                                    copy(&mut pts, a, *p);
                                }
                                if let Some(res) = res {
                                    if ok(res) {
                                        let s = ret[f.0 as usize].clone();
                                        pts[res.0 as usize].extend(s);
                                    }
                                }
                            } else {
                                escaped.extend(inst.call_args());
                                if let Some(res) = res {
                                    if ok(res) {
                                        pts[res.0 as usize].insert(u);
                                    }
                                }
                            }
                        }
                    }
                    _ => {}
                }
            }
            for a in escaped {
                let s = pts[a.0 as usize].clone();
                for o in &s {
                    let c = cont[o.0 as usize].clone();
                    cont[u.0 as usize].extend(c);
                }
                cont[u.0 as usize].extend(s);
            }
            if (pts.clone(), cont.clone(), ret.clone()) == before {
                return (pts, cont);
            }
        }
    }

    fn check_against_naive(m: &SirModule) {
        let r = solve_points_to(m);
        let (pts, cont) = naive(m, &r);
        for i in 0..m.values.len() {
            let got: BTreeSet<_> = r.pts(ValueId(i as u32)).iter().copied().collect();
            assert_eq!(got, pts[i], "pts mismatch for {}", m.value_label(ValueId(i as u32)));
        }
        for (i, c) in cont.iter().enumerate() {
            let got: BTreeSet<_> = r.contents(SiteId(i as u32)).iter().copied().collect();
            assert_eq!(&got, c, "contents mismatch for {}", r.sites[i].label);
        }
        for seed in 0..5 {
            let s = solve_points_to_with(m, SolverOptions { shuffle_seed: Some(seed) });
            for i in 0..m.values.len() {
                assert_eq!(s.pts(ValueId(i as u32)), r.pts(ValueId(i as u32)));
            }
        }
    }

    const TWO_STORES: &str = r#"
define @f() {
entry:
  %a = alloca 8
  %b = alloca 8
  %p = alloca 8
  store %a, %p
  store %b, %p
  %v = load %p
  %q = bitcast %a
  ret
}
"#;

    #[test]
    fn addr_of_and_copy() {
        let m = parse_sir(TWO_STORES).unwrap();
        let r = solve_points_to(&m);
        assert_eq!(labels(&r, val(&m, "f", "a")), vec!["stack:f:%a"]);
        assert_eq!(r.pts(val(&m, "f", "q")), r.pts(val(&m, "f", "a")));
    }

    #[test]
    fn two_stores_then_load() {
        let m = parse_sir(TWO_STORES).unwrap();
        let r = solve_points_to(&m);
        assert_eq!(labels(&r, val(&m, "f", "v")), vec!["stack:f:%a", "stack:f:%b"]);
        check_against_naive(&m);
    }

    #[test]
    fn alias_queries() {
        let text = r#"
define @f(%c: val) {
entry:
  %a = alloca 8
  %b = alloca 8
  %x = bitcast %a
  %y = bitcast %a
  %k = add %c, 1
  condbr %c, l, r
l:
  br join
r:
  br join
join:
  %m = phi [%a, l], [%b, r]
  ret
}
"#;
        let m = parse_sir(text).unwrap();
        let r = solve_points_to(&m);
        let v = |n| val(&m, "f", n);
        assert!(r.alias(v("x"), v("y")));
        assert!(r.alias(v("y"), v("x")));
        assert!(r.alias(v("a"), v("a")));
        assert!(!r.alias(v("a"), v("b")));
        assert!(r.alias(v("m"), v("b")));
        assert!(!r.alias(v("k"), v("a")));
        check_against_naive(&m);
    }

    #[test]
    fn null_has_empty_set() {
        let text = "define @f() {\nentry:\n  %p = alloca 8\n  store null, %p\n  %v = load %p\n  ret\n}\n";
        let m = parse_sir(text).unwrap();
        let r = solve_points_to(&m);
        assert!(r.pts(val(&m, "f", "v")).is_empty());
    }

    #[test]
    fn interprocedural_and_indirect() {
        let text = r#"
global @slot : ptr
declare @ext(ptr) -> ptr
define @id(%x: ptr) -> ptr {
entry:
  ret %x
}
define @put(%x: ptr) {
entry:
  store %x, @slot
  ret
}
define @main(%c: val) {
entry:
  %a = alloca 4
  %h = call @malloc(8)
  condbr %c, l, r
l:
  br join
r:
  br join
join:
  %fp = phi [@id, l], [@put, r]
  %r = call %fp(%a)
  %s = call @id(%h)
  %e = call @ext(%s)
  %g = load @slot
  %w = load %e
  memcpy %h, @slot, 8
  %z = load %h
  ret
}
"#;
        let m = parse_sir(text).unwrap();
        let r = solve_points_to(&m);
        let v = |n| val(&m, "main", n);
        assert_eq!(labels(&r, v("r")), vec!["stack:main:%a", "heap:main:%h"]);
        assert_eq!(labels(&r, v("g")), vec!["stack:main:%a"]);
        assert_eq!(labels(&r, v("e")), vec!["external"]);
        assert!(labels(&r, v("w")).contains(&"heap:main:%h".to_string()));
        assert_eq!(labels(&r, v("z")), vec!["stack:main:%a"]);
        let call = m.def_inst(v("r")).unwrap();
        let names: Vec<_> = r.callees(&m, call).iter().map(|f| m.function(*f).name.clone()).collect();
        assert_eq!(names, vec!["id", "put"]);
        assert!(r.diagnostics.is_empty());
        check_against_naive(&m);
        assert!(r.dump(&m).contains("main:%g -> {stack:main:%a}\n"));
    }

    #[test]
    fn unresolved_indirect_call_is_diagnosed() {
        let text = "define @f(%fp: ptr) {\nentry:\n  call %fp()\n  ret\n}\n";
        let m = parse_sir(text).unwrap();
        assert_eq!(solve_points_to(&m).diagnostics.len(), 1);
    }

    #[test]
    fn null_candidate_queries() {
        let unchecked = "define @f(%k: val) {\nentry:\n  %p = call @malloc(16)\n  store %k, %p\n  ret\n}\n";
        let m = parse_sir(unchecked).unwrap();
        let nc = null_candidates(&m, &solve_points_to(&m));
        assert_eq!(nc.into_iter().collect::<Vec<_>>(), vec![val(&m, "f", "p")]);

        let checked = r#"
define @f() {
entry:
  %p = call @malloc(16)
  %c = icmp eq %p, null
  condbr %c, err, ok
err:
  ret
ok:
  ret
}
"#;
        let m = parse_sir(checked).unwrap();
        assert!(null_candidates(&m, &solve_points_to(&m)).is_empty());

        let through_copy = r#"
define @f() {
entry:
  %p = call @malloc(16)
  %q = bitcast %p
  %c = icmp eq %q, null
  ret
}
"#;
        let m = parse_sir(through_copy).unwrap();
        assert!(null_candidates(&m, &solve_points_to(&m)).is_empty());

        // Comparing against something other than null is not a check.
        let other = "define @f() {\nentry:\n  %p = call @malloc(16)\n  %c = icmp eq %p, 0\n  ret\n}\n";
        let m = parse_sir(other).unwrap();
        assert_eq!(null_candidates(&m, &solve_points_to(&m)).len(), 1);
    }
}
