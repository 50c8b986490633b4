//! Forward pointer tainting and sink discovery.
//!
//! A pointer that may reference memory outside the enclave (an ECALL
//! `out`/`user_check` parameter, an OCALL return value, an unchecked
//! `malloc` result) is tainted, and taint follows the value-flow graph to
//! every pointer derived from it. A store through a tainted pointer of an
//! untainted value is a sink: enclave data written to untrusted memory.

use std::collections::{BTreeMap, BTreeSet, HashSet, VecDeque};
use std::fmt::Write as _;

use rand::seq::SliceRandom;
use rand::SeedableRng;
use rand_chacha::ChaCha8Rng;
use rayon::prelude::*;
use thiserror::Error;

use crate::edl::{LeakTuple, Pattern, TupleIndex};
use crate::graphs::{get_node, CallGraph, NodeId, NodeKind, ValueFlowGraph};
use crate::points_to::{null_candidates, value_users, PointsToResult};
use crate::sir::{FuncId, InstRef, Opcode, Shape, SirModule, ValueId};

/// Why a value is tainted: the rule that fired and the tainted premise.
#[derive(Copy, Clone, Debug, PartialEq, Eq, Hash)]
pub enum Rule {
    Seed,
    Load,
    Store,
    UnOp,
    BinOp,
    Gep,
    Bitcast,
    Phi,
    Memcpy,
    Argument,
    Return,
}

#[derive(Clone, Debug, Default)]
pub struct TaintState {
    pub tainted: BTreeSet<ValueId>,
    pub visited: HashSet<NodeId>,
    /// For each tainted value, the rule and the premise value (the
    /// instruction or call site is recoverable from the value's definition).
    pub provenance: BTreeMap<ValueId, (Rule, Option<ValueId>)>,
}

#[derive(Clone, Debug, PartialEq, Eq, Hash, PartialOrd, Ord)]
pub enum SeedOrigin {
    Tuple(LeakTuple),
    /// Unchecked malloc result.
    Malloc(ValueId),
}

#[derive(Copy, Clone, Debug, PartialEq, Eq, Hash, PartialOrd, Ord)]
pub enum SinkKind {
    Store,
    Memcpy,
    OcallArg,
}

impl SinkKind {
    pub fn name(self) -> &'static str {
        match self {
            SinkKind::Store => "store",
            SinkKind::Memcpy => "memcpy",
            SinkKind::OcallArg => "ocall-arg",
        }
    }
}

#[derive(Clone, Debug, PartialEq, Eq)]
pub struct TaintSink {
    pub node: NodeId,
    pub pattern: Pattern,
    pub seed: ValueId,
    pub origin: SeedOrigin,
    pub kind: SinkKind,
    /// The value whose contents escape: stored value, memcpy source, or
    /// the OCALL argument.
    pub stored_value: ValueId,
    /// The store/memcpy or OCALL call instruction.
    pub inst: InstRef,
    pub loc: String,
}

#[derive(Clone, Copy, Debug, Default)]
pub struct TaintOptions {
    /// Visit children in a seeded random order.
    pub shuffle_seed: Option<u64>,
}

/// Taints everything derived from `seed` and returns the stores that write
/// untainted data through tainted pointers.
pub fn ptr_taint(
    m: &SirModule,
    vfg: &ValueFlowGraph,
    seed: ValueId,
    opts: TaintOptions,
) -> (TaintState, Vec<(NodeId, InstRef)>) {
    let mut st = TaintState::default();
    let mut rng = opts.shuffle_seed.map(ChaCha8Rng::seed_from_u64);
    // Call connectors (actual params, formal returns) carrying taint.
    let mut active: HashSet<NodeId> = HashSet::new();
    let mut queue = VecDeque::new();
    let mut reached_stores: BTreeSet<NodeId> = BTreeSet::new();

    let def = vfg.get_def_node(seed);
    st.tainted.insert(seed);
    st.provenance.insert(seed, (Rule::Seed, None));
    st.visited.insert(def);
    queue.push_back(def);

    let taint = |st: &mut TaintState, queue: &mut VecDeque<NodeId>, v: ValueId, rule: Rule, from: ValueId| {
        if st.tainted.insert(v) {
            st.provenance.insert(v, (rule, Some(from)));
            // Revisit the definition so its users see the new taint.
            queue.push_back(vfg.get_def_node(v));
        }
    };

    while let Some(cur) = queue.pop_front() {
        let mut children: Vec<NodeId> = vfg.succs(cur).iter().map(|(n, _)| *n).collect();
        children.dedup();
        if let Some(rng) = rng.as_mut() {
            children.shuffle(rng);
        }
        for node in children {
            let n = vfg.node(node);
            let inst = n.inst.map(|r| m.inst(r));
            match n.kind {
                NodeKind::Load => {
                    let inst = inst.unwrap();
                    let src = inst.load_addr();
                    if st.tainted.contains(&src) {
                        taint(&mut st, &mut queue, inst.result.unwrap(), Rule::Load, src);
                    }
                }
                NodeKind::Copy | NodeKind::Gep | NodeKind::UnOp => {
                    let inst = inst.unwrap();
                    let src = inst.unary_src();
                    if st.tainted.contains(&src) {
                        let rule = match n.kind {
                            NodeKind::Copy => Rule::Bitcast,
                            NodeKind::Gep => Rule::Gep,
                            _ => Rule::UnOp,
                        };
                        taint(&mut st, &mut queue, inst.result.unwrap(), rule, src);
                    }
                }
                NodeKind::Store => {
                    let inst = inst.unwrap();
                    let (src, dst) = inst.store_parts();
                    if st.tainted.contains(&src) {
                        let rule = if inst.opcode == Opcode::Store { Rule::Store } else { Rule::Memcpy };
                        taint(&mut st, &mut queue, dst, rule, src);
                    } else if st.tainted.contains(&dst) {
                        reached_stores.insert(node);
                    }
                }
                NodeKind::BinOp | NodeKind::Phi => {
                    let inst = inst.unwrap();
                    let hit = match n.kind {
                        NodeKind::Phi => inst.phi_incoming().map(|(v, _)| v).find(|v| st.tainted.contains(v)),
                        _ => inst.value_operands().find(|v| st.tainted.contains(v)),
                    };
                    if let Some(src) = hit {
                        let rule = if n.kind == NodeKind::Phi { Rule::Phi } else { Rule::BinOp };
                        taint(&mut st, &mut queue, inst.result.unwrap(), rule, src);
                    }
                }
                NodeKind::ActualParam { .. } => {
                    if st.tainted.contains(&n.value.unwrap()) && active.insert(node) {
                        queue.push_back(node);
                    }
                }
                NodeKind::FormalParam { .. } => {
                    let hit = vfg
                        .data_preds(node)
                        .iter()
                        .find(|ap| active.contains(ap))
                        .map(|ap| vfg.node(*ap).value.unwrap());
                    if let Some(arg) = hit {
                        taint(&mut st, &mut queue, n.value.unwrap(), Rule::Argument, arg);
                    }
                }
                NodeKind::FormalRet => {
                    let hit = vfg
                        .data_preds(node)
                        .iter()
                        .filter_map(|d| vfg.node(*d).value)
                        .find(|v| st.tainted.contains(v));
                    if hit.is_some() && active.insert(node) {
                        queue.push_back(node);
                    }
                }
                NodeKind::ActualRet => {
                    let fr = vfg.data_preds(node).iter().find(|d| active.contains(d));
                    if let Some(fr) = fr {
                        let f = vfg.node(*fr).func.unwrap();
                        let ret_val = returned_tainted(m, f, &st.tainted).unwrap();
                        taint(&mut st, &mut queue, n.value.unwrap(), Rule::Return, ret_val);
                    }
                }
                NodeKind::Addr | NodeKind::Const | NodeKind::Cmp => {}
            }
            if st.visited.insert(node) {
                queue.push_back(node);
            }
        }
    }

    // A store can turn from sink into propagation once its value is
    // tainted later; judge on the final state.
    let sinks = reached_stores
        .into_iter()
        .filter_map(|n| {
            let r = vfg.node(n).inst.unwrap();
            let (src, dst) = m.inst(r).store_parts();
            (st.tainted.contains(&dst) && !st.tainted.contains(&src)).then_some((n, r))
        })
        .collect();
    (st, sinks)
}

fn returned_tainted(m: &SirModule, f: FuncId, tainted: &BTreeSet<ValueId>) -> Option<ValueId> {
    let body = m.function(f).body.as_ref()?;
    body.insts
        .iter()
        .filter(|i| i.opcode == Opcode::Ret)
        .filter_map(|i| i.value_operands().next())
        .find(|v| tainted.contains(v))
}

#[derive(Debug, Error, PartialEq, Eq)]
pub enum OracleError {
    #[error("module has {count} instructions, over the oracle budget of {budget}")]
    BudgetExceeded { count: usize, budget: usize },
}

pub const ORACLE_BUDGET: usize = 200;

/// Reference implementation of [`ptr_taint`]: re-scans every instruction
/// applying the propagation rules until nothing changes, without using the
/// value-flow graph. Indirect callees come from the points-to result.
pub fn taint_closure_oracle(
    m: &SirModule,
    pts: &PointsToResult,
    seed: ValueId,
    budget: usize,
) -> Result<(BTreeSet<ValueId>, BTreeSet<InstRef>), OracleError> {
    let count = m.instruction_count();
    if count > budget {
        return Err(OracleError::BudgetExceeded { count, budget });
    }
    let mut t: BTreeSet<ValueId> = BTreeSet::from([seed]);
    loop {
        let before = t.len();
        for (r, inst) in m.instructions() {
            match inst.opcode {
                Opcode::Load => {
                    if t.contains(&inst.load_addr()) {
                        t.insert(inst.result.unwrap());
                    }
                }
                Opcode::Store | Opcode::Memcpy => {
                    let (src, dst) = inst.store_parts();
                    if t.contains(&src) {
                        t.insert(dst);
                    }
                }
                Opcode::UnOp(_) | Opcode::Gep | Opcode::Bitcast => {
                    if t.contains(&inst.unary_src()) {
                        t.insert(inst.result.unwrap());
                    }
                }
                Opcode::BinOp(_) => {
                    if inst.value_operands().any(|v| t.contains(&v)) {
                        t.insert(inst.result.unwrap());
                    }
                }
                Opcode::Phi => {
                    if inst.phi_incoming().any(|(v, _)| t.contains(&v)) {
                        t.insert(inst.result.unwrap());
                    }
                }
                Opcode::Call => {
                    for f in pts.callees(m, r) {
                        let callee = m.function(f);
                        if !callee.is_defined() {
                            continue;
                        }
                        for (a, p) in inst.call_args().zip(&callee.params) {
                            if t.contains(&a) {
                                t.insert(*p);
                            }
                        }
                        if let Some(res) = inst.result {
                            if returned_tainted(m, f, &t).is_some() {
                                t.insert(res);
                            }
                        }
                    }
                }
                _ => {}
            }
        }
        if t.len() == before {
            break;
        }
    }
    let sinks = m
        .instructions()
        .filter(|(_, i)| i.is_store_like())
        .filter(|(_, i)| {
            let (src, dst) = i.store_parts();
            t.contains(&dst) && !t.contains(&src)
        })
        .map(|(r, _)| r)
        .collect();
    Ok((t, sinks))
}

/// Non-value loads whose address is derived from `p` through geps and
/// bitcasts: the pointer fields of a struct passed by pointer.
fn struct_field_loads(m: &SirModule, users: &[Vec<InstRef>], p: ValueId) -> Vec<ValueId> {
    let mut derived = BTreeSet::from([p]);
    let mut stack = vec![p];
    let mut out = BTreeSet::new();
    while let Some(x) = stack.pop() {
        for r in &users[x.0 as usize] {
            let inst = m.inst(*r);
            match inst.opcode {
                Opcode::Gep | Opcode::Bitcast if inst.unary_src() == x => {
                    let res = inst.result.unwrap();
                    if derived.insert(res) {
                        stack.push(res);
                    }
                }
                Opcode::Load if inst.load_addr() == x => {
                    let res = inst.result.unwrap();
                    if m.value(res).shape != Shape::Val {
                        out.insert(res);
                    }
                }
                _ => {}
            }
        }
    }
    out.into_iter().collect()
}

/// A pointer to taint, with the pattern it represents.
#[derive(Clone, Debug, PartialEq, Eq, PartialOrd, Ord)]
pub struct TaintSeed {
    pub pattern: Pattern,
    pub value: ValueId,
    pub origin: SeedOrigin,
}

#[derive(Clone, Debug, Default)]
pub struct SinkResult {
    pub sinks: Vec<TaintSink>,
    pub seeds: Vec<TaintSeed>,
    pub diagnostics: Vec<String>,
}

/// Finds the sinks of every leak pattern. Seeds are tainted in parallel on
/// the current rayon pool; the result order does not depend on scheduling.
pub fn find_sinks(
    tuples: &[LeakTuple],
    m: &SirModule,
    cg: &CallGraph,
    vfg: &ValueFlowGraph,
    pts: &PointsToResult,
) -> SinkResult {
    let mut res = SinkResult::default();
    let users = value_users(m);
    let mut explicit = Vec::new();

    for t in tuples {
        let Some(f) = get_node(m, &t.funcname) else {
            res.diagnostics.push(format!("{}: no function of this name in the program; skipped", t.funcname));
            continue;
        };
        match (t.pattern, t.index) {
            (Pattern::P1 | Pattern::P2, TupleIndex::Param(i)) => {
                let func = m.function(f);
                if !func.is_defined() {
                    res.diagnostics.push(format!("{}: ECALL has no definition; skipped", t.funcname));
                    continue;
                }
                let Some(&p) = func.params.get(i) else {
                    res.diagnostics.push(format!(
                        "{}: parameter {} out of range ({} parameters); skipped",
                        t.funcname,
                        i,
                        func.params.len()
                    ));
                    continue;
                };
                let values = if t.via_struct_field { struct_field_loads(m, &users, p) } else { vec![p] };
                for v in values {
                    res.seeds.push(TaintSeed {
                        pattern: t.pattern,
                        value: v,
                        origin: SeedOrigin::Tuple(t.clone()),
                    });
                }
            }
            (Pattern::P3, TupleIndex::Param(i)) => {
                for e in cg.callers_of(f) {
                    let inst = m.inst(e.site);
                    let Some(arg) = inst.call_args().nth(i) else {
                        res.diagnostics.push(format!("{}: call passes no argument {}", m.inst_loc(e.site), i));
                        continue;
                    };
                    explicit.push(TaintSink {
                        node: vfg.get_def_node(arg),
                        pattern: Pattern::P3,
                        seed: arg,
                        origin: SeedOrigin::Tuple(t.clone()),
                        kind: SinkKind::OcallArg,
                        stored_value: arg,
                        inst: e.site,
                        loc: m.inst_loc(e.site),
                    });
                }
            }
            (Pattern::P4, TupleIndex::Return) => {
                for e in cg.callers_of(f) {
                    if let Some(v) = m.inst(e.site).result {
                        res.seeds.push(TaintSeed {
                            pattern: Pattern::P4,
                            value: v,
                            origin: SeedOrigin::Tuple(t.clone()),
                        });
                    }
                }
            }
            _ => res.diagnostics.push(format!("{t}: malformed leak tuple; skipped")),
        }
    }
    for v in null_candidates(m, pts) {
        res.seeds.push(TaintSeed {
            pattern: Pattern::P5,
            value: v,
            origin: SeedOrigin::Malloc(v),
        });
    }
    res.seeds.sort();
    res.seeds.dedup_by(|a, b| a.pattern == b.pattern && a.value == b.value);

    let tainted: Vec<Vec<TaintSink>> = res
        .seeds
        .par_iter()
        .map(|s| {
            let (_, sinks) = ptr_taint(m, vfg, s.value, TaintOptions::default());
            sinks
                .into_iter()
                .map(|(node, r)| {
                    let inst = m.inst(r);
                    TaintSink {
                        node,
                        pattern: s.pattern,
                        seed: s.value,
                        origin: s.origin.clone(),
                        kind: if inst.opcode == Opcode::Store { SinkKind::Store } else { SinkKind::Memcpy },
                        stored_value: inst.store_parts().0,
                        inst: r,
                        loc: m.inst_loc(r),
                    }
                })
                .collect()
        })
        .collect();
    let mut sinks: Vec<TaintSink> = tainted.into_iter().flatten().chain(explicit).collect();
    sinks.sort_by(|a, b| (a.pattern, a.node, a.inst, a.seed).cmp(&(b.pattern, b.node, b.inst, b.seed)));
    // One sink per (pattern, node, instruction); the lowest seed is kept.
    sinks.dedup_by(|a, b| a.pattern == b.pattern && a.node == b.node && a.inst == b.inst);
    sinks.sort_by(|a, b| (a.pattern, a.seed, a.node, a.inst).cmp(&(b.pattern, b.seed, b.node, b.inst)));
    res.sinks = sinks;
    res
}

/// `pattern funcname loc nodeId` per sink.
pub fn dump_sinks(m: &SirModule, sinks: &[TaintSink]) -> String {
    let mut out = String::new();
    for s in sinks {
        let _ = writeln!(out, "{} {} {} {}", s.pattern, m.function(s.inst.func).name, s.loc, s.node);
    }
    out
}
