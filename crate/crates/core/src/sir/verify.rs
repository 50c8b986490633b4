use std::fmt;

use super::{
    BlockId, Body, FuncId, Function, Opcode, Operand, Shape, SirModule, ValueDef, ValueId,
};

#[derive(Clone, Debug, PartialEq, Eq)]
pub struct Diagnostic {
    pub function: String,
    pub inst: Option<u32>,
    pub message: String,
}

impl fmt::Display for Diagnostic {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        match self.inst {
            Some(i) => write!(f, "@{}:{}: {}", self.function, i, self.message),
            None => write!(f, "@{}: {}", self.function, self.message),
        }
    }
}

/// Checks SSA, arity, operand-kind, shape and CFG constraints. Returns an
/// empty list for a well-formed module.
pub fn verify_module(m: &SirModule) -> Vec<Diagnostic> {
    let mut out = Vec::new();

    for (i, v) in m.values.iter().enumerate() {
        if let ValueDef::Inst(r) = v.def {
            let ok = m
                .functions
                .get(r.func.0 as usize)
                .and_then(|f| f.body.as_ref())
                .and_then(|b| b.insts.get(r.index as usize))
                .is_some_and(|inst| inst.result == Some(ValueId(i as u32)));
            if !ok {
                out.push(Diagnostic {
                    function: m
                        .functions
                        .get(r.func.0 as usize)
                        .map(|f| f.name.clone())
                        .unwrap_or_default(),
                    inst: Some(r.index),
                    message: format!("value %{} is not defined by its recorded instruction", v.name),
                });
            }
        }
    }

    for (fi, f) in m.functions.iter().enumerate() {
        if let Some(body) = &f.body {
            FunctionVerifier {
                m,
                func: FuncId(fi as u32),
                f,
                body,
                out: &mut out,
            }
            .run();
        }
    }
    out
}

struct FunctionVerifier<'a> {
    m: &'a SirModule,
    func: FuncId,
    f: &'a Function,
    body: &'a Body,
    out: &'a mut Vec<Diagnostic>,
}

impl FunctionVerifier<'_> {
    fn diag(&mut self, inst: Option<u32>, message: impl Into<String>) {
        self.out.push(Diagnostic {
            function: self.f.name.clone(),
            inst,
            message: message.into(),
        });
    }

    fn run(&mut self) {
        if self.body.blocks.is_empty() {
            self.diag(None, "function has no blocks");
            return;
        }
        let mut seen_results = std::collections::HashSet::new();
        for (i, inst) in self.body.insts.iter().enumerate() {
            if let Some(r) = inst.result {
                if !seen_results.insert(r) {
                    self.diag(Some(i as u32), "value defined more than once");
                }
            }
        }
        for bi in 0..self.body.blocks.len() {
            self.check_block_shape(BlockId(bi as u32));
        }
        for i in 0..self.body.insts.len() {
            self.check_inst(i as u32);
        }
        self.check_phis_and_dominance();
    }

    fn check_block_shape(&mut self, b: BlockId) {
        let block = self.body.block(b).clone();
        if block.start == block.end {
            self.diag(None, format!("block `{}` is empty", block.label));
            return;
        }
        for i in block.start..block.end {
            let op = self.body.insts[i as usize].opcode;
            let last = i + 1 == block.end;
            if op.is_terminator() && !last {
                self.diag(Some(i), format!("terminator `{}` in the middle of a block", op.name()));
            }
            if !op.is_terminator() && last {
                self.diag(Some(i), format!("block `{}` does not end with a terminator", block.label));
            }
        }
        let mut phis_done = false;
        for i in block.start..block.end {
            let is_phi = self.body.insts[i as usize].opcode == Opcode::Phi;
            if is_phi && phis_done {
                self.diag(Some(i), "phi after a non-phi instruction");
            }
            if !is_phi {
                phis_done = true;
            }
        }
    }

    fn value_ok(&self, v: ValueId) -> bool {
        (v.0 as usize) < self.m.values.len()
    }

    fn check_inst(&mut self, i: u32) {
        let inst = &self.body.insts[i as usize];
        let ops = &inst.operands;
        let is_val = |o: &Operand| matches!(o, Operand::Value(_));
        let is_block = |o: &Operand| matches!(o, Operand::Block(b) if (b.0 as usize) < self.body.blocks.len());
        let name = inst.opcode.name();

        let arity_ok = match inst.opcode {
            Opcode::Alloca => matches!(ops.as_slice(), [Operand::Imm(n)] if *n >= 0),
            Opcode::Load | Opcode::Bitcast | Opcode::UnOp(_) => ops.len() == 1 && is_val(&ops[0]),
            Opcode::Store | Opcode::BinOp(_) | Opcode::Icmp(_) => {
                ops.len() == 2 && ops.iter().all(is_val)
            }
            Opcode::Gep => matches!(ops.as_slice(), [Operand::Value(_), Operand::Imm(_)]),
            Opcode::Phi => {
                !ops.is_empty()
                    && ops.len() % 2 == 0
                    && ops.chunks(2).all(|p| is_val(&p[0]) && is_block(&p[1]))
            }
            Opcode::Call => !ops.is_empty() && ops.iter().all(is_val),
            Opcode::Memcpy => ops.len() == 3 && ops.iter().all(is_val),
            Opcode::Annotate => matches!(ops.as_slice(), [Operand::Value(_), Operand::Str(_)]),
            Opcode::Ret => ops.len() <= 1 && ops.iter().all(is_val),
            Opcode::Br => ops.len() == 1 && is_block(&ops[0]),
            Opcode::CondBr => ops.len() == 3 && is_val(&ops[0]) && is_block(&ops[1]) && is_block(&ops[2]),
        };
        if !arity_ok {
            self.diag(Some(i), format!("{name} arity: unexpected operand count or kind"));
            return;
        }
        if let Some(bad) = inst.value_operands().find(|v| !self.value_ok(*v)) {
            self.diag(Some(i), format!("{name} references unknown value id {}", bad.0));
            return;
        }
        let needs_result = matches!(
            inst.opcode,
            Opcode::Alloca
                | Opcode::Load
                | Opcode::Gep
                | Opcode::Bitcast
                | Opcode::Phi
                | Opcode::BinOp(_)
                | Opcode::UnOp(_)
                | Opcode::Icmp(_)
        );
        if needs_result && inst.result.is_none() {
            self.diag(Some(i), format!("{name} must define a value"));
        }
        if !needs_result && inst.opcode != Opcode::Call && inst.result.is_some() {
            self.diag(Some(i), format!("{name} cannot define a value"));
        }

        // Shape discipline: pointer positions must not be plain values.
        let pointer_positions: &[usize] = match inst.opcode {
            Opcode::Load | Opcode::Gep => &[0],
            Opcode::Store => &[1],
            Opcode::Memcpy => &[0, 1],
            _ => &[],
        };
        for &p in pointer_positions {
            let v = ops[p].as_value().unwrap();
            if !self.m.value(v).shape.may_be_pointer() {
                self.diag(
                    Some(i),
                    format!("{name} operand {p} ({}) must be pointer-shaped", self.m.value_label(v)),
                );
            }
        }

        match inst.opcode {
            Opcode::Call => {
                let callee = inst.callee();
                match self.m.value(callee).def {
                    ValueDef::Function(target) => {
                        let t = self.m.function(target);
                        let argc = inst.call_args().count();
                        if argc != t.param_shapes.len() {
                            self.diag(
                                Some(i),
                                format!(
                                    "call to @{} passes {} arguments, expected {}",
                                    t.name,
                                    argc,
                                    t.param_shapes.len()
                                ),
                            );
                        }
                        for (k, (arg, shape)) in inst.call_args().zip(&t.param_shapes).enumerate() {
                            if *shape == Shape::Ptr && self.m.value(arg).shape == Shape::Val {
                                self.diag(
                                    Some(i),
                                    format!("argument {k} to @{} must be pointer-shaped", t.name),
                                );
                            }
                        }
                    }
                    _ if !self.m.value(callee).shape.may_be_pointer() => {
                        self.diag(Some(i), "call target is neither a function nor a pointer");
                    }
                    _ => {}
                }
            }
            Opcode::Ret => {
                if let (Some(Shape::Val), Some(v)) = (self.f.ret_shape, inst.value_operands().next()) {
                    if self.m.value(v).shape == Shape::Ptr {
                        self.diag(Some(i), "returning a pointer from a `-> val` function");
                    }
                }
            }
            _ => {}
        }
    }

    fn check_phis_and_dominance(&mut self) {
        let preds = self.body.predecessors();
        let dom = Dominators::compute(self.body, &preds);

        for bi in 0..self.body.blocks.len() {
            let b = BlockId(bi as u32);
            let range = self.body.block(b).range();
            for i in range {
                let inst = &self.body.insts[i];
                if inst.opcode == Opcode::Phi && inst.operands.len() % 2 == 0 {
                    let incoming: Vec<_> = inst.phi_incoming().collect();
                    let mut inc_blocks: Vec<_> = incoming.iter().map(|(_, b)| *b).collect();
                    inc_blocks.sort_unstable();
                    let mut p = preds[bi].clone();
                    p.sort_unstable();
                    if incoming.len() != preds[bi].len() {
                        self.diag(
                            Some(i as u32),
                            format!(
                                "phi has {} incoming values but block `{}` has {} predecessors",
                                incoming.len(),
                                self.body.block(b).label,
                                preds[bi].len()
                            ),
                        );
                    } else if inc_blocks != p {
                        self.diag(Some(i as u32), "phi incoming blocks do not match predecessors");
                    }
                    for (v, from) in incoming {
                        if !self.defined_at_end_of(v, from, &dom) {
                            self.diag(
                                Some(i as u32),
                                format!(
                                    "{} does not dominate the end of incoming block `{}`",
                                    self.m.value_label(v),
                                    self.body.block(from).label
                                ),
                            );
                        }
                    }
                    continue;
                }
                if !dom.reachable(b) {
                    continue;
                }
                for v in inst.value_operands().collect::<Vec<_>>() {
                    if !self.dominates_use(v, b, i as u32, &dom) {
                        self.diag(
                            Some(i as u32),
                            format!("use of {} is not dominated by its definition", self.m.value_label(v)),
                        );
                    }
                }
            }
        }
    }

    /// Where a function-local value is defined: `(block, index)`, or `None`
    /// for values available everywhere (params, globals, constants).
    fn def_site(&mut self, v: ValueId) -> Result<Option<(BlockId, u32)>, ()> {
        match &self.m.value(v).def {
            ValueDef::Param { func, .. } => {
                if *func == self.func {
                    Ok(None)
                } else {
                    Err(())
                }
            }
            ValueDef::Global(_) | ValueDef::Function(_) => Ok(None),
            ValueDef::Const { user, .. } => {
                if user.func == self.func {
                    Ok(None)
                } else {
                    Err(())
                }
            }
            ValueDef::Inst(r) => {
                if r.func != self.func {
                    return Err(());
                }
                Ok(Some((self.body.block_of(r.index), r.index)))
            }
        }
    }

    fn dominates_use(&mut self, v: ValueId, use_block: BlockId, use_idx: u32, dom: &Dominators) -> bool {
        match self.def_site(v) {
            Err(()) => false,
            Ok(None) => true,
            Ok(Some((db, di))) => {
                if db == use_block {
                    di < use_idx
                } else {
                    dom.dominates(db, use_block)
                }
            }
        }
    }

    fn defined_at_end_of(&mut self, v: ValueId, block: BlockId, dom: &Dominators) -> bool {
        if !dom.reachable(block) {
            return true;
        }
        match self.def_site(v) {
            Err(()) => false,
            Ok(None) => true,
            Ok(Some((db, _))) => db == block || dom.dominates(db, block),
        }
    }
}

/// Immediate dominators via the iterative Cooper-Harvey-Kennedy scheme.
pub(crate) struct Dominators {
    idom: Vec<Option<usize>>,
    rpo_index: Vec<usize>,
}

impl Dominators {
    pub(crate) fn compute(body: &Body, preds: &[Vec<BlockId>]) -> Self {
        let n = body.blocks.len();
        let mut order = Vec::with_capacity(n);
        let mut seen = vec![false; n];
        // Iterative post-order DFS from the entry block.
        let mut stack: Vec<(usize, usize)> = vec![(0, 0)];
        seen[0] = true;
        while let Some((b, k)) = stack.pop() {
            let succs = body
                .terminator(BlockId(b as u32))
                .map(|t| t.successors())
                .unwrap_or_default();
            if k < succs.len() {
                stack.push((b, k + 1));
                let s = succs[k].0 as usize;
                if s < n && !seen[s] {
                    seen[s] = true;
                    stack.push((s, 0));
                }
            } else {
                order.push(b);
            }
        }
        order.reverse();
        let mut rpo_index = vec![usize::MAX; n];
        for (i, b) in order.iter().enumerate() {
            rpo_index[*b] = i;
        }
        let mut idom: Vec<Option<usize>> = vec![None; n];
        idom[0] = Some(0);
        let mut changed = true;
        while changed {
            changed = false;
            for &b in order.iter().skip(1) {
                let mut new_idom: Option<usize> = None;
                for p in &preds[b] {
                    let p = p.0 as usize;
                    if idom[p].is_none() {
                        continue;
                    }
                    new_idom = Some(match new_idom {
                        None => p,
                        Some(cur) => Self::intersect(&idom, &rpo_index, p, cur),
                    });
                }
                if new_idom.is_some() && idom[b] != new_idom {
                    idom[b] = new_idom;
                    changed = true;
                }
            }
        }
        Dominators { idom, rpo_index }
    }

    fn intersect(idom: &[Option<usize>], rpo: &[usize], mut a: usize, mut b: usize) -> usize {
        while a != b {
            while rpo[a] > rpo[b] {
                a = idom[a].unwrap();
            }
            while rpo[b] > rpo[a] {
                b = idom[b].unwrap();
            }
        }
        a
    }

    pub(crate) fn reachable(&self, b: BlockId) -> bool {
        self.rpo_index[b.0 as usize] != usize::MAX
    }

    pub(crate) fn dominates(&self, a: BlockId, b: BlockId) -> bool {
        let (a, mut b) = (a.0 as usize, b.0 as usize);
        if self.rpo_index[b] == usize::MAX {
            return true;
        }
        if self.rpo_index[a] == usize::MAX {
            return false;
        }
        loop {
            if a == b {
                return true;
            }
            match self.idom[b] {
                Some(p) if p != b => b = p,
                _ => return false,
            }
        }
    }
}

#[cfg(test)]
mod tests {
    use super::super::{parse_sir, parse_unverified, Operand};
    use super::*;

    #[test]
    fn well_formed_module_has_no_diagnostics() {
        let m = parse_unverified(
            "define @f(%p: ptr) {\nentry:\n  %v = load %p\n  store %v, %p\n  ret\n}\n",
        )
        .unwrap();
        assert!(verify_module(&m).is_empty());
    }

    #[test]
    fn store_with_one_operand_reports_arity() {
        let mut m = parse_unverified(
            "define @f(%p: ptr, %v: val) {\nentry:\n  store %v, %p\n  ret\n}\n",
        )
        .unwrap();
        let body = m.functions[0].body.as_mut().unwrap();
        body.insts[0].operands.truncate(1);
        let diags = verify_module(&m);
        assert_eq!(diags.len(), 1);
        assert!(diags[0].message.starts_with("store arity"), "{}", diags[0]);
    }

    #[test]
    fn phi_incoming_count_must_match_predecessors() {
        let text = r#"
define @f(%c: val, %a: val) {
entry:
  condbr %c, l, r
l:
  br join
r:
  br join
join:
  %m = phi [%a, l]
  ret
}
"#;
        let m = parse_unverified(text).unwrap();
        // Predecessor count the verifier works from.
        let body = m.functions[0].body.as_ref().unwrap();
        assert_eq!(body.predecessors()[3].len(), 2);
        let diags = verify_module(&m);
        assert_eq!(diags.len(), 1, "{diags:?}");
        assert!(diags[0].message.contains("1 incoming values"));
        assert!(diags[0].message.contains("2 predecessors"));
    }

    #[test]
    fn use_not_dominated_by_def() {
        let text = r#"
define @f(%c: val) {
entry:
  condbr %c, l, r
l:
  %x = add %c, 1
  br join
r:
  br join
join:
  %y = add %x, 1
  ret
}
"#;
        let err = parse_sir(text).unwrap_err();
        assert!(err.to_string().contains("not dominated"), "{err}");
    }

    #[test]
    fn value_in_pointer_position_rejected() {
        let err = parse_sir("define @f(%a: val) {\nentry:\n  %v = load %a\n  ret\n}\n").unwrap_err();
        assert!(err.to_string().contains("pointer-shaped"), "{err}");
    }

    #[test]
    fn missing_terminator_and_call_arity() {
        let text = "declare @g(ptr)\ndefine @f(%p: ptr) {\nentry:\n  call @g(%p, %p)\n  %q = bitcast %p\n}\n";
        let m = parse_unverified(text).unwrap();
        let diags = verify_module(&m);
        let msgs: Vec<_> = diags.iter().map(|d| d.message.clone()).collect();
        assert!(msgs.iter().any(|d| d.contains("passes 2 arguments")), "{msgs:?}");
        assert!(msgs.iter().any(|d| d.contains("does not end with a terminator")), "{msgs:?}");
    }

    #[test]
    fn block_operand_out_of_range() {
        let mut m = parse_unverified("define @f() {\nentry:\n  br entry\n}\n").unwrap();
        m.functions[0].body.as_mut().unwrap().insts[0].operands[0] = Operand::Block(BlockId(9));
        assert_eq!(verify_module(&m).len(), 1);
    }
}
