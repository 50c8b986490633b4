//! Concrete interpreter for SIR, used as a soundness oracle for the
//! points-to analysis.
//!
//! Every runtime object remembers the abstract allocation site that created
//! it, so each observed pointer can be checked against the solver. Memory
//! is a map from byte offset to value per object. Declared externals do not
//! touch memory: they return a pointer into a single shared unknown object
//! (or 0 for value results), mirroring the solver's model.

use std::collections::{BTreeMap, HashMap};

use crate::points_to::SiteKey;
use crate::sir::{
    BinOpKind, BlockId, CmpPred, Constant, FuncId, InstRef, Opcode, Shape, SirModule, UnOpKind, ValueDef,
    ValueId, MALLOC,
};

/// What a runtime object stands for.
#[derive(Copy, Clone, Debug, PartialEq, Eq, Hash, PartialOrd, Ord)]
pub enum ObjKey {
    Site(SiteKey),
    /// Memory handed in by the host through an entry parameter.
    Outside(usize),
}

#[derive(Clone, Debug, PartialEq)]
enum Val {
    Int(i64),
    Null,
    Ptr { obj: usize, off: i64 },
    Func(FuncId),
}

#[derive(Clone, Debug, PartialEq, Eq)]
pub struct Access {
    pub inst: InstRef,
    /// The address operand.
    pub addr: ValueId,
    pub target: ObjKey,
}

#[derive(Clone, Debug, PartialEq, Eq)]
pub enum Outcome {
    Returned,
    Trap { inst: InstRef, reason: String },
    StepLimit,
}

#[derive(Clone, Debug)]
pub struct Trace {
    /// Memory accesses (loads, stores, both sides of memcpy).
    pub accesses: Vec<Access>,
    /// Pointer values observed for instruction results and parameters.
    pub values: Vec<(ValueId, ObjKey)>,
    pub outcome: Outcome,
}

pub const DEFAULT_STEP_LIMIT: usize = 100_000;

struct Obj {
    key: ObjKey,
    cells: BTreeMap<i64, Val>,
}

struct Stop(Outcome);

struct Interp<'m> {
    m: &'m SirModule,
    objs: Vec<Obj>,
    globals: HashMap<ValueId, usize>,
    unknown: Option<usize>,
    steps: usize,
    limit: usize,
    trace: Trace,
}

/// Runs `entry` with pointer parameters bound to fresh host buffers and
/// value parameters taken from `inputs` in order (missing ones are 0).
pub fn interpret_trace(m: &SirModule, entry: FuncId, inputs: &[i64], limit: usize) -> Trace {
    let mut it = Interp {
        m,
        objs: Vec::new(),
        globals: HashMap::new(),
        unknown: None,
        steps: 0,
        limit,
        trace: Trace {
            accesses: Vec::new(),
            values: Vec::new(),
            outcome: Outcome::Returned,
        },
    };
    for g in &m.globals {
        let o = it.new_obj(ObjKey::Site(SiteKey::Global(g.value)));
        it.globals.insert(g.value, o);
    }
    let f = m.function(entry);
    let mut ints = inputs.iter().copied();
    let mut outside = 0;
    let args = f
        .param_shapes
        .iter()
        .map(|s| match s {
            Shape::Val => Val::Int(ints.next().unwrap_or(0)),
            _ => {
                outside += 1;
                Val::Ptr {
                    obj: it.new_obj(ObjKey::Outside(outside - 1)),
                    off: 0,
                }
            }
        })
        .collect();
    if let Err(Stop(o)) = it.call(entry, args, 0) {
        it.trace.outcome = o;
    }
    it.trace
}

impl<'m> Interp<'m> {
    fn new_obj(&mut self, key: ObjKey) -> usize {
        self.objs.push(Obj {
            key,
            cells: BTreeMap::new(),
        });
        self.objs.len() - 1
    }

    fn observe(&mut self, v: ValueId, val: &Val) {
        let key = match val {
            Val::Ptr { obj, .. } => self.objs[*obj].key,
            Val::Func(f) => ObjKey::Site(SiteKey::Function(*f)),
            _ => return,
        };
        self.trace.values.push((v, key));
    }

    fn operand(&self, frame: &HashMap<ValueId, Val>, v: ValueId) -> Val {
        match &self.m.value(v).def {
            ValueDef::Const { value, .. } => match value {
                Constant::Int(n) => Val::Int(*n),
                Constant::Null => Val::Null,
            },
            ValueDef::Global(_) => Val::Ptr {
                obj: self.globals[&v],
                off: 0,
            },
            ValueDef::Function(f) => Val::Func(*f),
            ValueDef::Param { .. } | ValueDef::Inst(_) => frame.get(&v).cloned().unwrap_or(Val::Int(0)),
        }
    }

    /// Value parameters and results never carry pointers.
    fn coerce(shape: Shape, val: Val) -> Val {
        match (shape, &val) {
            (Shape::Val, Val::Ptr { .. } | Val::Func(_)) => Val::Int(1),
            (Shape::Val, Val::Null) => Val::Int(0),
            _ => val,
        }
    }

    fn as_int(val: &Val) -> i64 {
        match val {
            Val::Int(n) => *n,
            Val::Null => 0,
            Val::Ptr { .. } | Val::Func(_) => 1,
        }
    }

    fn address(&self, r: InstRef, val: &Val) -> Result<(usize, i64), Stop> {
        match val {
            Val::Ptr { obj, off } => Ok((*obj, *off)),
            other => Err(Stop(Outcome::Trap {
                inst: r,
                reason: format!("dereference of {other:?}"),
            })),
        }
    }

    fn access(&mut self, inst: InstRef, addr: ValueId, obj: usize) {
        let target = self.objs[obj].key;
        self.trace.accesses.push(Access { inst, addr, target });
    }

    fn call(&mut self, f: FuncId, args: Vec<Val>, depth: usize) -> Result<Option<Val>, Stop> {
        let func = self.m.function(f);
        let Some(body) = &func.body else {
            return Ok(self.external(f));
        };
        if depth > 64 {
            return Err(Stop(Outcome::StepLimit));
        }
        let mut frame: HashMap<ValueId, Val> = HashMap::new();
        for (i, (p, a)) in func.params.iter().zip(args).enumerate() {
            let a = Self::coerce(func.param_shapes[i], a);
            self.observe(*p, &a);
            frame.insert(*p, a);
        }
        let mut block = BlockId(0);
        let mut prev: Option<BlockId> = None;
        loop {
            let range = body.block(block).range();
            // Phis read their inputs simultaneously on block entry.
            let mut phis = Vec::new();
            let mut i = range.start;
            while i < range.end && body.insts[i].opcode == Opcode::Phi {
                let inst = &body.insts[i];
                let from = prev.and_then(|p| inst.phi_incoming().find(|(_, b)| *b == p));
                let val = from.map(|(v, _)| self.operand(&frame, v)).unwrap_or(Val::Int(0));
                phis.push((inst.result.unwrap(), val));
                i += 1;
            }
            for (v, val) in phis {
                self.observe(v, &val);
                frame.insert(v, val);
            }
            let mut next = None;
            for index in i..range.end {
                self.steps += 1;
                if self.steps > self.limit {
                    return Err(Stop(Outcome::StepLimit));
                }
                let r = InstRef { func: f, index: index as u32 };
                let inst = &body.insts[index];
                let op = |k: usize| inst.operands[k].as_value().unwrap();
                let result: Option<Val> = match inst.opcode {
                    Opcode::Alloca => {
                        let res = inst.result.unwrap();
                        let obj = self.new_obj(ObjKey::Site(SiteKey::Alloca(res)));
                        Some(Val::Ptr { obj, off: 0 })
                    }
                    Opcode::Load => {
                        let a = self.operand(&frame, op(0));
                        let (obj, off) = self.address(r, &a)?;
                        self.access(r, op(0), obj);
                        Some(self.objs[obj].cells.get(&off).cloned().unwrap_or(Val::Int(0)))
                    }
                    Opcode::Store => {
                        let v = self.operand(&frame, op(0));
                        let a = self.operand(&frame, op(1));
                        let (obj, off) = self.address(r, &a)?;
                        self.access(r, op(1), obj);
                        self.objs[obj].cells.insert(off, v);
                        None
                    }
                    Opcode::Memcpy => {
                        let d = self.operand(&frame, op(0));
                        let s = self.operand(&frame, op(1));
                        let len = Self::as_int(&self.operand(&frame, op(2)));
                        let (dobj, doff) = self.address(r, &d)?;
                        let (sobj, soff) = self.address(r, &s)?;
                        self.access(r, op(1), sobj);
                        self.access(r, op(0), dobj);
                        let cells: Vec<(i64, Val)> = self.objs[sobj]
                            .cells
                            .range(soff..soff.saturating_add(len.max(0)))
                            .map(|(k, v)| (k - soff + doff, v.clone()))
                            .collect();
                        self.objs[dobj].cells.extend(cells);
                        None
                    }
                    Opcode::Gep => {
                        let base = self.operand(&frame, op(0));
                        Some(match base {
                            Val::Ptr { obj, off } => Val::Ptr {
                                obj,
                                off: off + inst.gep_offset(),
                            },
                            Val::Int(n) => Val::Int(n + inst.gep_offset()),
                            other => other,
                        })
                    }
                    Opcode::Bitcast => Some(self.operand(&frame, op(0))),
                    Opcode::BinOp(k) => {
                        let a = Self::as_int(&self.operand(&frame, op(0)));
                        let b = Self::as_int(&self.operand(&frame, op(1)));
                        Some(Val::Int(binop(k, a, b)))
                    }
                    Opcode::UnOp(k) => {
                        let a = Self::as_int(&self.operand(&frame, op(0)));
                        Some(Val::Int(match k {
                            UnOpKind::Neg => a.wrapping_neg(),
                            UnOpKind::Not => !a,
                        }))
                    }
                    Opcode::Icmp(p) => {
                        let a = self.operand(&frame, op(0));
                        let b = self.operand(&frame, op(1));
                        Some(Val::Int(compare(p, &a, &b) as i64))
                    }
                    Opcode::Call => {
                        let callee = self.operand(&frame, inst.callee());
                        let args: Vec<Val> = inst.call_args().map(|a| self.operand(&frame, a)).collect();
                        let target = match callee {
                            Val::Func(g) => g,
                            other => {
                                return Err(Stop(Outcome::Trap {
                                    inst: r,
                                    reason: format!("call through {other:?}"),
                                }))
                            }
                        };
                        let direct = self.m.direct_callee(inst).is_some();
                        if direct && self.m.function(target).name == MALLOC {
                            let obj = self.new_obj(ObjKey::Site(SiteKey::Malloc(r)));
                            Some(Val::Ptr { obj, off: 0 })
                        } else {
                            let ret = self.call(target, args, depth + 1)?;
                            let shape = self.m.function(target).ret_shape.unwrap_or(Shape::Any);
                            ret.map(|v| Self::coerce(shape, v))
                        }
                    }
                    Opcode::Annotate | Opcode::Phi => None,
                    Opcode::Ret => {
                        let v = inst.value_operands().next().map(|v| self.operand(&frame, v));
                        return Ok(v);
                    }
                    Opcode::Br => {
                        next = inst.operands[0].as_block();
                        None
                    }
                    Opcode::CondBr => {
                        let c = Self::as_int(&self.operand(&frame, op(0)));
                        next = inst.operands[if c != 0 { 1 } else { 2 }].as_block();
                        None
                    }
                };
                if let (Some(res), Some(val)) = (inst.result, result) {
                    let val = Self::coerce(self.m.value(res).shape, val);
                    self.observe(res, &val);
                    frame.insert(res, val);
                }
            }
            match next {
                Some(b) => {
                    prev = Some(block);
                    block = b;
                }
                None => return Ok(None),
            }
        }
    }

    /// Externals, including `malloc` reached through a pointer: no memory
    /// effects; pointer-shaped results point into the shared unknown object.
    fn external(&mut self, f: FuncId) -> Option<Val> {
        match self.m.function(f).ret_shape {
            None => None,
            Some(Shape::Val) => Some(Val::Int(0)),
            Some(_) => {
                let obj = match self.unknown {
                    Some(o) => o,
                    None => {
                        let o = self.new_obj(ObjKey::Site(SiteKey::UnknownExternal));
                        self.unknown = Some(o);
                        o
                    }
                };
                Some(Val::Ptr { obj, off: 0 })
            }
        }
    }
}

fn binop(k: BinOpKind, a: i64, b: i64) -> i64 {
    let sh = (b & 63) as u32;
    match k {
        BinOpKind::Add => a.wrapping_add(b),
        BinOpKind::Sub => a.wrapping_sub(b),
        BinOpKind::Mul => a.wrapping_mul(b),
        BinOpKind::SDiv => a.checked_div(b).unwrap_or(0),
        BinOpKind::UDiv => (a as u64).checked_div(b as u64).unwrap_or(0) as i64,
        BinOpKind::SRem => a.checked_rem(b).unwrap_or(0),
        BinOpKind::URem => (a as u64).checked_rem(b as u64).unwrap_or(0) as i64,
        BinOpKind::And => a & b,
        BinOpKind::Or => a | b,
        BinOpKind::Xor => a ^ b,
        BinOpKind::Shl => a.wrapping_shl(sh),
        BinOpKind::LShr => ((a as u64) >> sh) as i64,
        BinOpKind::AShr => a >> sh,
    }
}

fn compare(p: CmpPred, a: &Val, b: &Val) -> bool {
    if matches!(p, CmpPred::Eq | CmpPred::Ne) {
        let eq = match (a, b) {
            (Val::Ptr { .. } | Val::Func(_), Val::Null) | (Val::Null, Val::Ptr { .. } | Val::Func(_)) => false,
            (Val::Ptr { .. } | Val::Func(_), Val::Int(0)) | (Val::Int(0), Val::Ptr { .. } | Val::Func(_)) => false,
            (Val::Null, Val::Int(n)) | (Val::Int(n), Val::Null) => *n == 0,
            _ => a == b,
        };
        return eq == (p == CmpPred::Eq);
    }
    let (x, y) = (Interp::as_int(a), Interp::as_int(b));
    match p {
        CmpPred::Slt => x < y,
        CmpPred::Sle => x <= y,
        CmpPred::Sgt => x > y,
        CmpPred::Sge => x >= y,
        CmpPred::Ult => (x as u64) < (y as u64),
        CmpPred::Ule => (x as u64) <= (y as u64),
        CmpPred::Ugt => (x as u64) > (y as u64),
        CmpPred::Uge => (x as u64) >= (y as u64),
        CmpPred::Eq | CmpPred::Ne => unreachable!(),
    }
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::points_to::solve_points_to;
    use crate::sir::parse_sir;

    fn run(text: &str, entry: &str, inputs: &[i64]) -> (SirModule, Trace) {
        let m = parse_sir(text).unwrap();
        let f = m.function_by_name(entry).unwrap();
        let t = interpret_trace(&m, f, inputs, DEFAULT_STEP_LIMIT);
        (m, t)
    }

    fn value(m: &SirModule, label: &str) -> ValueId {
        (0..m.values.len() as u32).map(ValueId).find(|v| m.value_label(*v) == label).unwrap()
    }

    #[test]
    fn store_then_load_hit_the_alloca() {
        let (m, t) = run(
            "define @f(%k: val) {\nentry:\n  %p = alloca 8\n  store %k, %p\n  %v = load %p\n  ret\n}\n",
            "f",
            &[5],
        );
        let p = value(&m, "f:%p");
        assert_eq!(t.outcome, Outcome::Returned);
        assert_eq!(t.accesses.len(), 2);
        assert!(t.accesses.iter().all(|a| a.target == ObjKey::Site(SiteKey::Alloca(p))));
    }

    const PHI: &str = r#"
define @f(%c: val) {
entry:
  %a = alloca 8
  %b = alloca 8
  condbr %c, l, r
l:
  br join
r:
  br join
join:
  %m = phi [%a, l], [%b, r]
  store 1, %m
  ret
}
"#;

    #[test]
    fn phi_targets_are_within_points_to() {
        let m = parse_sir(PHI).unwrap();
        let pts = solve_points_to(&m);
        let f = m.function_by_name("f").unwrap();
        let mut seen = Vec::new();
        for c in [0, 1] {
            let t = interpret_trace(&m, f, &[c], DEFAULT_STEP_LIMIT);
            for a in &t.accesses {
                let ObjKey::Site(key) = a.target else { panic!() };
                let site = pts.site_for(key).unwrap();
                assert!(pts.pts(a.addr).contains(&site));
                seen.push(key);
            }
        }
        seen.dedup();
        assert_eq!(seen.len(), 2);
    }

    #[test]
    fn malloc_is_one_site_per_call() {
        let (m, t) = run(
            "define @f() {\nentry:\n  %a = call @malloc(4)\n  %b = call @malloc(4)\n  store 1, %a\n  store 2, %b\n  ret\n}\n",
            "f",
            &[],
        );
        let keys: Vec<_> = t.accesses.iter().map(|a| a.target).collect();
        let f = m.function_by_name("f").unwrap();
        assert_eq!(
            keys,
            vec![
                ObjKey::Site(SiteKey::Malloc(InstRef { func: f, index: 0 })),
                ObjKey::Site(SiteKey::Malloc(InstRef { func: f, index: 1 })),
            ]
        );
    }

    #[test]
    fn null_dereference_traps() {
        let (_, t) = run("define @f() {\nentry:\n  store 1, null\n  ret\n}\n", "f", &[]);
        assert!(matches!(t.outcome, Outcome::Trap { .. }));
    }

    #[test]
    fn bounded_loops_terminate_and_runaway_ones_hit_the_limit() {
        let text = r#"
define @f(%n: val) {
entry:
  br head
head:
  %i = phi [0, entry], [%j, body]
  %c = icmp slt %i, %n
  condbr %c, body, exit
body:
  %j = add %i, 1
  br head
exit:
  ret
}
"#;
        let (_, t) = run(text, "f", &[3]);
        assert_eq!(t.outcome, Outcome::Returned);
        let m = parse_sir(text).unwrap();
        let t = interpret_trace(&m, m.function_by_name("f").unwrap(), &[1 << 40], 1000);
        assert_eq!(t.outcome, Outcome::StepLimit);
    }

    #[test]
    fn host_buffers_are_outside() {
        let (_, t) = run("define @f(%p: ptr) {\nentry:\n  store 1, %p\n  ret\n}\n", "f", &[]);
        assert_eq!(t.accesses[0].target, ObjKey::Outside(0));
    }
}
