use std::collections::{BTreeSet, HashMap, HashSet};
use std::fmt::{self, Write as _};

use super::CallGraph;
use crate::points_to::{PointsToResult, SiteKind};
use crate::sir::{FuncId, InstRef, Opcode, SirModule, ValueDef, ValueId};

#[derive(Copy, Clone, Debug, PartialEq, Eq, Hash, PartialOrd, Ord)]
pub struct NodeId(pub u32);

impl fmt::Display for NodeId {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        write!(f, "n{}", self.0)
    }
}

#[derive(Copy, Clone, Debug, PartialEq, Eq, Hash)]
pub enum NodeKind {
    /// Allocation: alloca, malloc call result, global.
    Addr,
    /// Literal constant or function reference.
    Const,
    Load,
    /// Store or memcpy.
    Store,
    Gep,
    /// Bitcast.
    Copy,
    Phi,
    BinOp,
    UnOp,
    Cmp,
    FormalParam { index: u32 },
    ActualParam { index: u32 },
    FormalRet,
    ActualRet,
}

impl NodeKind {
    fn name(self) -> &'static str {
        match self {
            NodeKind::Addr => "addr",
            NodeKind::Const => "const",
            NodeKind::Load => "load",
            NodeKind::Store => "store",
            NodeKind::Gep => "gep",
            NodeKind::Copy => "copy",
            NodeKind::Phi => "phi",
            NodeKind::BinOp => "binop",
            NodeKind::UnOp => "unop",
            NodeKind::Cmp => "cmp",
            NodeKind::FormalParam { .. } => "formal-param",
            NodeKind::ActualParam { .. } => "actual-param",
            NodeKind::FormalRet => "formal-ret",
            NodeKind::ActualRet => "actual-ret",
        }
    }
}

#[derive(Copy, Clone, Debug, PartialEq, Eq, Hash, PartialOrd, Ord)]
pub enum EdgeKind {
    /// SSA def-use.
    Def,
    /// Store/memcpy to a load/memcpy reading an aliasing location.
    Memory,
    /// Store/memcpy to the allocation it may write into.
    Content,
    /// Actual to formal parameter.
    Call,
    /// Formal to actual return.
    Return,
}

impl EdgeKind {
    fn name(self) -> &'static str {
        match self {
            EdgeKind::Def => "def",
            EdgeKind::Memory => "mem",
            EdgeKind::Content => "content",
            EdgeKind::Call => "call",
            EdgeKind::Return => "ret",
        }
    }
}

#[derive(Clone, Debug)]
pub struct VfgNode {
    pub id: NodeId,
    pub kind: NodeKind,
    pub func: Option<FuncId>,
    pub inst: Option<InstRef>,
    /// The value the node defines; for actual parameters, the argument.
    pub value: Option<ValueId>,
    pub label: String,
    pub loc: String,
}

#[derive(Clone, Debug, Default)]
pub struct ValueFlowGraph {
    pub nodes: Vec<VfgNode>,
    pub edges: Vec<(NodeId, NodeId, EdgeKind)>,
    succ: Vec<Vec<(NodeId, EdgeKind)>>,
    pred: Vec<Vec<(NodeId, EdgeKind)>>,
    data_preds: Vec<Vec<NodeId>>,
    def_node: Vec<Option<NodeId>>,
    inst_node: HashMap<InstRef, NodeId>,
    actual_params: HashMap<(InstRef, u32), NodeId>,
    formal_ret: HashMap<FuncId, NodeId>,
}

impl ValueFlowGraph {
    pub fn node(&self, n: NodeId) -> &VfgNode {
        &self.nodes[n.0 as usize]
    }

    pub fn len(&self) -> usize {
        self.nodes.len()
    }

    pub fn is_empty(&self) -> bool {
        self.nodes.is_empty()
    }

    /// The unique node defining `v`.
    pub fn get_def_node(&self, v: ValueId) -> NodeId {
        self.def_node[v.0 as usize].expect("every value has a defining node")
    }

    /// Node of a store, memcpy or value-defining instruction.
    pub fn inst_node(&self, r: InstRef) -> Option<NodeId> {
        self.inst_node.get(&r).copied()
    }

    pub fn actual_param(&self, call: InstRef, index: u32) -> Option<NodeId> {
        self.actual_params.get(&(call, index)).copied()
    }

    pub fn formal_ret(&self, f: FuncId) -> Option<NodeId> {
        self.formal_ret.get(&f).copied()
    }

    pub fn succs(&self, n: NodeId) -> &[(NodeId, EdgeKind)] {
        &self.succ[n.0 as usize]
    }

    pub fn preds(&self, n: NodeId) -> &[(NodeId, EdgeKind)] {
        &self.pred[n.0 as usize]
    }

    /// Nodes whose value `n` is computed from: the stored value for stores,
    /// the address for loads, every operand for arithmetic and phis, the
    /// writers for allocations, and the connectors for parameters and
    /// returns.
    pub fn data_preds(&self, n: NodeId) -> &[NodeId] {
        &self.data_preds[n.0 as usize]
    }

    pub fn node_ids(&self) -> impl Iterator<Item = NodeId> {
        (0..self.nodes.len() as u32).map(NodeId)
    }

    pub fn dump(&self) -> String {
        let mut out = String::new();
        for n in &self.nodes {
            let _ = writeln!(out, "{} = {} {} ({})", n.id, n.kind.name(), n.label, n.loc);
        }
        for (a, b, k) in &self.edges {
            let _ = writeln!(out, "{a} -> {b} [{}]", k.name());
        }
        out
    }
}

/// Walks bitcasts and constant geps back to the root pointer.
fn root_and_offset(m: &SirModule, mut v: ValueId) -> (ValueId, i64) {
    let mut off = 0i64;
    while let Some(r) = m.def_inst(v) {
        let inst = m.inst(r);
        match inst.opcode {
            Opcode::Bitcast => v = inst.unary_src(),
            Opcode::Gep => {
                off = off.wrapping_add(inst.gep_offset());
                v = inst.unary_src();
            }
            _ => break,
        }
    }
    (v, off)
}

/// Two addresses that certainly name the same location: both point to the
/// same single object, and both are the same root pointer at the same
/// constant offset.
pub(crate) fn must_alias(m: &SirModule, pts: &PointsToResult, a: ValueId, b: ValueId) -> bool {
    let pa = pts.pts(a);
    pa.len() == 1 && pa == pts.pts(b) && root_and_offset(m, a) == root_and_offset(m, b)
}

/// Address a memory reader reads through: load address or memcpy source.
pub(crate) fn read_addr(m: &SirModule, r: InstRef) -> Option<ValueId> {
    let inst = m.inst(r);
    match inst.opcode {
        Opcode::Load => Some(inst.load_addr()),
        Opcode::Memcpy => Some(inst.store_parts().0),
        _ => None,
    }
}

/// Address a memory writer writes through: store or memcpy destination.
pub(crate) fn write_addr(m: &SirModule, r: InstRef) -> Option<ValueId> {
    let inst = m.inst(r);
    inst.is_store_like().then(|| inst.store_parts().1)
}

/// The latest writer preceding `reader` in its block that must-alias the
/// read address, provided no call intervenes.
pub(crate) fn strong_update_writer(m: &SirModule, pts: &PointsToResult, reader: InstRef) -> Option<InstRef> {
    let addr = read_addr(m, reader)?;
    let body = m.function(reader.func).body.as_ref()?;
    let block = body.block(body.block_of(reader.index));
    let mut i = reader.index;
    while i > block.start {
        i -= 1;
        let r = InstRef { func: reader.func, index: i };
        let inst = m.inst(r);
        if inst.opcode == Opcode::Call {
            return None;
        }
        if let Some(w) = write_addr(m, r) {
            if must_alias(m, pts, w, addr) {
                return Some(r);
            }
        }
    }
    None
}

struct Builder<'a> {
    m: &'a SirModule,
    g: ValueFlowGraph,
    edge_set: HashSet<(NodeId, NodeId, EdgeKind)>,
}

impl Builder<'_> {
    fn add_node(&mut self, kind: NodeKind, func: Option<FuncId>, inst: Option<InstRef>, value: Option<ValueId>, label: String, loc: String) -> NodeId {
        let id = NodeId(self.g.nodes.len() as u32);
        self.g.nodes.push(VfgNode {
            id,
            kind,
            func,
            inst,
            value,
            label,
            loc,
        });
        if let (Some(v), false) = (value, matches!(kind, NodeKind::ActualParam { .. })) {
            self.g.def_node[v.0 as usize] = Some(id);
        }
        if let (Some(r), false) = (inst, matches!(kind, NodeKind::ActualParam { .. } | NodeKind::Const)) {
            self.g.inst_node.insert(r, id);
        }
        id
    }

    fn value_node(&mut self, kind: NodeKind, v: ValueId, inst: Option<InstRef>) -> NodeId {
        let m = self.m;
        self.add_node(kind, m.owner(v), inst, Some(v), m.value_label(v), m.value_loc(v))
    }

    fn add_edge(&mut self, a: NodeId, b: NodeId, k: EdgeKind) {
        if self.edge_set.insert((a, b, k)) {
            self.g.edges.push((a, b, k));
        }
    }

    fn def(&self, v: ValueId) -> NodeId {
        self.g.get_def_node(v)
    }
}

pub fn build_vfg(m: &SirModule, cg: &CallGraph, pts: &PointsToResult) -> ValueFlowGraph {
    let mut b = Builder {
        m,
        g: ValueFlowGraph {
            def_node: vec![None; m.values.len()],
            ..Default::default()
        },
        edge_set: HashSet::new(),
    };

    for g in &m.globals {
        b.value_node(NodeKind::Addr, g.value, None);
    }
    for f in m.func_ids() {
        let func = m.function(f);
        b.value_node(NodeKind::Const, func.value, None);
        let Some(body) = &func.body else { continue };
        for (i, &p) in func.params.iter().enumerate() {
            b.value_node(NodeKind::FormalParam { index: i as u32 }, p, None);
        }
        let fr = b.add_node(
            NodeKind::FormalRet,
            Some(f),
            None,
            None,
            format!("{}:ret", func.name),
            format!("{}:ret", func.name),
        );
        b.g.formal_ret.insert(f, fr);
        for (idx, inst) in body.insts.iter().enumerate() {
            let r = InstRef { func: f, index: idx as u32 };
            for v in inst.value_operands() {
                if matches!(m.value(v).def, ValueDef::Const { .. }) {
                    b.value_node(NodeKind::Const, v, Some(r));
                }
            }
            let kind = match inst.opcode {
                Opcode::Alloca => Some(NodeKind::Addr),
                Opcode::Load => Some(NodeKind::Load),
                Opcode::Gep => Some(NodeKind::Gep),
                Opcode::Bitcast => Some(NodeKind::Copy),
                Opcode::Phi => Some(NodeKind::Phi),
                Opcode::BinOp(_) => Some(NodeKind::BinOp),
                Opcode::UnOp(_) => Some(NodeKind::UnOp),
                Opcode::Icmp(_) => Some(NodeKind::Cmp),
                _ => None,
            };
            if let Some(kind) = kind {
                b.value_node(kind, inst.result.unwrap(), Some(r));
                continue;
            }
            match inst.opcode {
                Opcode::Store | Opcode::Memcpy => {
                    let what = if inst.opcode == Opcode::Store { "store" } else { "memcpy" };
                    b.add_node(
                        NodeKind::Store,
                        Some(f),
                        Some(r),
                        None,
                        format!("{}:{}#{}", func.name, what, idx),
                        m.inst_loc(r),
                    );
                }
                Opcode::Call => {
                    for (i, a) in inst.call_args().enumerate() {
                        let n = b.add_node(
                            NodeKind::ActualParam { index: i as u32 },
                            Some(f),
                            Some(r),
                            Some(a),
                            format!("{}:call#{}.arg{}", func.name, idx, i),
                            m.inst_loc(r),
                        );
                        b.g.actual_params.insert((r, i as u32), n);
                    }
                    if let Some(res) = inst.result {
                        let kind = if m.is_malloc_call(inst) { NodeKind::Addr } else { NodeKind::ActualRet };
                        b.value_node(kind, res, Some(r));
                    }
                }
                _ => {}
            }
        }
    }

    let n = b.g.nodes.len();
    b.g.data_preds = vec![Vec::new(); n];

    // Direct def-use edges, and the data relation derived from them.
    for (r, inst) in m.instructions() {
        match inst.opcode {
            Opcode::Call => {
                for (i, a) in inst.call_args().enumerate() {
                    let ap = b.g.actual_params[&(r, i as u32)];
                    let d = b.def(a);
                    b.add_edge(d, ap, EdgeKind::Def);
                    b.g.data_preds[ap.0 as usize].push(d);
                }
            }
            Opcode::Ret => {
                if let Some(v) = inst.value_operands().next() {
                    let fr = b.g.formal_ret[&r.func];
                    let d = b.def(v);
                    b.add_edge(d, fr, EdgeKind::Def);
                    b.g.data_preds[fr.0 as usize].push(d);
                }
            }
            Opcode::Annotate | Opcode::Br | Opcode::CondBr | Opcode::Alloca => {}
            _ => {
                let Some(node) = b.g.inst_node(r) else { continue };
                for v in inst.value_operands() {
                    let d = b.def(v);
                    b.add_edge(d, node, EdgeKind::Def);
                }
                let data: Vec<ValueId> = match inst.opcode {
                    Opcode::Load => vec![inst.load_addr()],
                    Opcode::Store | Opcode::Memcpy => vec![inst.store_parts().0],
                    Opcode::Gep | Opcode::Bitcast => vec![inst.unary_src()],
                    _ => inst.value_operands().collect(),
                };
                for v in data {
                    let d = b.def(v);
                    if !b.g.data_preds[node.0 as usize].contains(&d) {
                        b.g.data_preds[node.0 as usize].push(d);
                    }
                }
            }
        }
    }

    // Call and return connectors along call-graph edges.
    for e in &cg.edges {
        let callee = m.function(e.callee);
        if !callee.is_defined() {
            continue;
        }
        let argc = m.inst(e.site).call_args().count();
        for i in 0..argc.min(callee.params.len()) {
            let ap = b.g.actual_params[&(e.site, i as u32)];
            let fp = b.def(callee.params[i]);
            b.add_edge(ap, fp, EdgeKind::Call);
            if !b.g.data_preds[fp.0 as usize].contains(&ap) {
                b.g.data_preds[fp.0 as usize].push(ap);
            }
        }
        if let Some(res) = m.inst(e.site).result {
            let fr = b.g.formal_ret[&e.callee];
            let ar = b.def(res);
            b.add_edge(fr, ar, EdgeKind::Return);
            if !b.g.data_preds[ar.0 as usize].contains(&fr) {
                b.g.data_preds[ar.0 as usize].push(fr);
            }
        }
    }

    // Memory edges.
    let mut writers_by_site: Vec<Vec<InstRef>> = vec![Vec::new(); pts.sites.len()];
    let mut writers = Vec::new();
    for (r, _) in m.instructions() {
        if let Some(a) = write_addr(m, r) {
            writers.push(r);
            for o in pts.pts(a) {
                writers_by_site[o.0 as usize].push(r);
            }
        }
    }
    for (r, _) in m.instructions() {
        if read_addr(m, r).is_none() {
            continue;
        }
        let reader = b.g.inst_node(r).unwrap();
        for w in memory_writers(m, pts, &writers_by_site, r) {
            let wn = b.g.inst_node(w).unwrap();
            b.add_edge(wn, reader, EdgeKind::Memory);
        }
    }

    // Writers into each allocation.
    for w in writers {
        let wn = b.g.inst_node(w).unwrap();
        for o in pts.pts(write_addr(m, w).unwrap()) {
            let site = pts.site(*o);
            if !matches!(site.kind, SiteKind::Stack | SiteKind::Heap | SiteKind::Global) {
                continue;
            }
            let an = b.def(site.value.unwrap());
            b.add_edge(wn, an, EdgeKind::Content);
            b.g.data_preds[an.0 as usize].push(wn);
        }
    }

    let mut g = b.g;
    g.succ = vec![Vec::new(); n];
    g.pred = vec![Vec::new(); n];
    for &(a, bb, k) in &g.edges {
        g.succ[a.0 as usize].push((bb, k));
        g.pred[bb.0 as usize].push((a, k));
    }
    for d in &mut g.data_preds {
        d.sort_unstable();
        d.dedup();
    }
    g
}

/// Writers whose value a memory reader may observe.
fn memory_writers(m: &SirModule, pts: &PointsToResult, writers_by_site: &[Vec<InstRef>], reader: InstRef) -> Vec<InstRef> {
    let addr = read_addr(m, reader).unwrap();
    if let Some(s) = strong_update_writer(m, pts, reader) {
        let mut out = vec![s];
        for i in s.index + 1..reader.index {
            let r = InstRef { func: reader.func, index: i };
            if let Some(w) = write_addr(m, r) {
                if pts.alias(w, addr) {
                    out.push(r);
                }
            }
        }
        return out;
    }
    let mut set = BTreeSet::new();
    for o in pts.pts(addr) {
        set.extend(writers_by_site[o.0 as usize].iter().copied());
    }
    set.into_iter().collect()
}
