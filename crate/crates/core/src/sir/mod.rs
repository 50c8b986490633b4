//! The analyzer's SSA intermediate representation ("SIR").
//!
//! SIR is a small LLVM-flavoured language: functions are made of labelled
//! basic blocks, every value is defined exactly once, and values carry one of
//! two shapes (plain value or pointer). Instructions are stored generically as
//! an opcode plus an operand list so that the verifier can reason about arity
//! and operand kinds uniformly; downstream passes use the typed accessors on
//! [`Instruction`].

mod parse;
mod verify;

use std::collections::BTreeMap;
use std::fmt;

pub use parse::{parse_sir, parse_sir_sources, parse_unverified, SirError};
pub use verify::{verify_module, Diagnostic};

#[derive(Copy, Clone, Debug, PartialEq, Eq, Hash, PartialOrd, Ord)]
pub struct ValueId(pub u32);

#[derive(Copy, Clone, Debug, PartialEq, Eq, Hash, PartialOrd, Ord)]
pub struct FuncId(pub u32);

#[derive(Copy, Clone, Debug, PartialEq, Eq, Hash, PartialOrd, Ord)]
pub struct BlockId(pub u32);

#[derive(Copy, Clone, Debug, PartialEq, Eq, Hash, PartialOrd, Ord)]
pub struct GlobalId(pub u32);

/// A single instruction, addressed by its function and its flattened index
/// within that function's body.
#[derive(Copy, Clone, Debug, PartialEq, Eq, Hash, PartialOrd, Ord)]
pub struct InstRef {
    pub func: FuncId,
    pub index: u32,
}

#[derive(Copy, Clone, Debug, PartialEq, Eq, Hash)]
pub enum Shape {
    Val,
    Ptr,
    /// Shape not fixed syntactically (loads, phis, untyped call results).
    Any,
}

impl Shape {
    pub fn may_be_pointer(self) -> bool {
        !matches!(self, Shape::Val)
    }

    fn keyword(self) -> &'static str {
        match self {
            Shape::Val => "val",
            Shape::Ptr => "ptr",
            Shape::Any => "any",
        }
    }
}

impl fmt::Display for Shape {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        f.write_str(self.keyword())
    }
}

#[derive(Copy, Clone, Debug, PartialEq, Eq, Hash)]
pub enum Constant {
    Int(i64),
    Null,
}

#[derive(Clone, Debug, PartialEq, Eq)]
pub enum ValueDef {
    Param { func: FuncId, index: u32 },
    Inst(InstRef),
    Global(GlobalId),
    Function(FuncId),
    /// Constants are materialised once per occurrence; `user` is the
    /// instruction the literal appears in.
    Const { value: Constant, user: InstRef },
}

#[derive(Clone, Debug)]
pub struct ValueInfo {
    pub name: String,
    pub def: ValueDef,
    pub shape: Shape,
}

#[derive(Copy, Clone, Debug, PartialEq, Eq, Hash)]
pub enum BinOpKind {
    Add,
    Sub,
    Mul,
    SDiv,
    UDiv,
    SRem,
    URem,
    And,
    Or,
    Xor,
    Shl,
    LShr,
    AShr,
}

impl BinOpKind {
    pub const ALL: [BinOpKind; 13] = [
        BinOpKind::Add,
        BinOpKind::Sub,
        BinOpKind::Mul,
        BinOpKind::SDiv,
        BinOpKind::UDiv,
        BinOpKind::SRem,
        BinOpKind::URem,
        BinOpKind::And,
        BinOpKind::Or,
        BinOpKind::Xor,
        BinOpKind::Shl,
        BinOpKind::LShr,
        BinOpKind::AShr,
    ];

    pub fn mnemonic(self) -> &'static str {
        match self {
            BinOpKind::Add => "add",
            BinOpKind::Sub => "sub",
            BinOpKind::Mul => "mul",
            BinOpKind::SDiv => "sdiv",
            BinOpKind::UDiv => "udiv",
            BinOpKind::SRem => "srem",
            BinOpKind::URem => "urem",
            BinOpKind::And => "and",
            BinOpKind::Or => "or",
            BinOpKind::Xor => "xor",
            BinOpKind::Shl => "shl",
            BinOpKind::LShr => "lshr",
            BinOpKind::AShr => "ashr",
        }
    }
}

#[derive(Copy, Clone, Debug, PartialEq, Eq, Hash)]
pub enum UnOpKind {
    Neg,
    Not,
}

impl UnOpKind {
    pub fn mnemonic(self) -> &'static str {
        match self {
            UnOpKind::Neg => "neg",
            UnOpKind::Not => "not",
        }
    }
}

#[derive(Copy, Clone, Debug, PartialEq, Eq, Hash)]
pub enum CmpPred {
    Eq,
    Ne,
    Slt,
    Sle,
    Sgt,
    Sge,
    Ult,
    Ule,
    Ugt,
    Uge,
}

impl CmpPred {
    pub const ALL: [CmpPred; 10] = [
        CmpPred::Eq,
        CmpPred::Ne,
        CmpPred::Slt,
        CmpPred::Sle,
        CmpPred::Sgt,
        CmpPred::Sge,
        CmpPred::Ult,
        CmpPred::Ule,
        CmpPred::Ugt,
        CmpPred::Uge,
    ];

    pub fn mnemonic(self) -> &'static str {
        match self {
            CmpPred::Eq => "eq",
            CmpPred::Ne => "ne",
            CmpPred::Slt => "slt",
            CmpPred::Sle => "sle",
            CmpPred::Sgt => "sgt",
            CmpPred::Sge => "sge",
            CmpPred::Ult => "ult",
            CmpPred::Ule => "ule",
            CmpPred::Ugt => "ugt",
            CmpPred::Uge => "uge",
        }
    }
}

#[derive(Copy, Clone, Debug, PartialEq, Eq, Hash)]
pub enum Opcode {
    Alloca,
    Load,
    Store,
    Gep,
    Bitcast,
    Phi,
    BinOp(BinOpKind),
    UnOp(UnOpKind),
    Icmp(CmpPred),
    Call,
    Memcpy,
    Annotate,
    Ret,
    Br,
    CondBr,
}

impl Opcode {
    pub fn is_terminator(self) -> bool {
        matches!(self, Opcode::Ret | Opcode::Br | Opcode::CondBr)
    }

    pub fn name(self) -> &'static str {
        match self {
            Opcode::Alloca => "alloca",
            Opcode::Load => "load",
            Opcode::Store => "store",
            Opcode::Gep => "gep",
            Opcode::Bitcast => "bitcast",
            Opcode::Phi => "phi",
            Opcode::BinOp(k) => k.mnemonic(),
            Opcode::UnOp(k) => k.mnemonic(),
            Opcode::Icmp(_) => "icmp",
            Opcode::Call => "call",
            Opcode::Memcpy => "memcpy",
            Opcode::Annotate => "annotate",
            Opcode::Ret => "ret",
            Opcode::Br => "br",
            Opcode::CondBr => "condbr",
        }
    }
}

#[derive(Clone, Debug, PartialEq, Eq)]
pub enum Operand {
    Value(ValueId),
    Block(BlockId),
    Imm(i64),
    Str(String),
}

impl Operand {
    pub fn as_value(&self) -> Option<ValueId> {
        match self {
            Operand::Value(v) => Some(*v),
            _ => None,
        }
    }

    pub fn as_block(&self) -> Option<BlockId> {
        match self {
            Operand::Block(b) => Some(*b),
            _ => None,
        }
    }
}

#[derive(Clone, Debug, PartialEq, Eq, Hash, PartialOrd, Ord)]
pub struct Loc {
    pub file: String,
    pub line: u32,
}

impl fmt::Display for Loc {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        write!(f, "{}:{}", self.file, self.line)
    }
}

/// Operand layout per opcode (verified by [`verify_module`]):
///
/// | opcode   | operands                                   |
/// |----------|--------------------------------------------|
/// | alloca   | `Imm(size)`                                |
/// | load     | `addr`                                     |
/// | store    | `value, addr`                              |
/// | gep      | `base, Imm(offset)`                        |
/// | bitcast  | `src`                                      |
/// | phi      | `value, Block, value, Block, ...`          |
/// | binop    | `lhs, rhs`                                 |
/// | unop     | `src`                                      |
/// | icmp     | `lhs, rhs`                                 |
/// | call     | `callee, args...`                          |
/// | memcpy   | `dst, src, len`                            |
/// | annotate | `target, Str(note)`                        |
/// | ret      | `[value]`                                  |
/// | br       | `Block`                                    |
/// | condbr   | `cond, Block, Block`                       |
#[derive(Clone, Debug)]
pub struct Instruction {
    pub result: Option<ValueId>,
    pub opcode: Opcode,
    pub operands: Vec<Operand>,
    pub loc: Option<Loc>,
}

impl Instruction {
    fn value_at(&self, i: usize) -> ValueId {
        self.operands[i]
            .as_value()
            .unwrap_or_else(|| panic!("{} operand {} is not a value", self.opcode.name(), i))
    }

    /// Address operand of a load.
    pub fn load_addr(&self) -> ValueId {
        self.value_at(0)
    }

    /// `(value, addr)` for store, `(src, dst)` for memcpy: what is written and
    /// where it is written.
    pub fn store_parts(&self) -> (ValueId, ValueId) {
        match self.opcode {
            Opcode::Store => (self.value_at(0), self.value_at(1)),
            Opcode::Memcpy => (self.value_at(1), self.value_at(0)),
            op => panic!("store_parts on {}", op.name()),
        }
    }

    /// The single pointer/value operand that unary-like instructions
    /// (bitcast, gep, unop) derive their result from.
    pub fn unary_src(&self) -> ValueId {
        self.value_at(0)
    }

    pub fn gep_offset(&self) -> i64 {
        match self.operands.get(1) {
            Some(Operand::Imm(n)) => *n,
            _ => 0,
        }
    }

    pub fn phi_incoming(&self) -> impl Iterator<Item = (ValueId, BlockId)> + '_ {
        self.operands.chunks(2).filter_map(|pair| match pair {
            [Operand::Value(v), Operand::Block(b)] => Some((*v, *b)),
            _ => None,
        })
    }

    pub fn callee(&self) -> ValueId {
        self.value_at(0)
    }

    pub fn call_args(&self) -> impl Iterator<Item = ValueId> + '_ {
        self.operands[1..].iter().filter_map(Operand::as_value)
    }

    pub fn memcpy_len(&self) -> ValueId {
        self.value_at(2)
    }

    pub fn annotation(&self) -> Option<(ValueId, &str)> {
        match (self.opcode, self.operands.as_slice()) {
            (Opcode::Annotate, [Operand::Value(v), Operand::Str(s)]) => Some((*v, s.as_str())),
            _ => None,
        }
    }

    /// All value operands, in operand order.
    pub fn value_operands(&self) -> impl Iterator<Item = ValueId> + '_ {
        self.operands.iter().filter_map(Operand::as_value)
    }

    pub fn is_store_like(&self) -> bool {
        matches!(self.opcode, Opcode::Store | Opcode::Memcpy)
    }

    pub fn successors(&self) -> Vec<BlockId> {
        match self.opcode {
            Opcode::Br | Opcode::CondBr => {
                self.operands.iter().filter_map(Operand::as_block).collect()
            }
            _ => Vec::new(),
        }
    }
}

#[derive(Clone, Debug)]
pub struct Block {
    pub label: String,
    pub start: u32,
    pub end: u32,
}

impl Block {
    pub fn range(&self) -> std::ops::Range<usize> {
        self.start as usize..self.end as usize
    }
}

#[derive(Clone, Debug, Default)]
pub struct Body {
    pub blocks: Vec<Block>,
    pub insts: Vec<Instruction>,
}

impl Body {
    pub fn block_of(&self, index: u32) -> BlockId {
        let pos = self.blocks.partition_point(|b| b.end <= index);
        BlockId(pos as u32)
    }

    pub fn block(&self, id: BlockId) -> &Block {
        &self.blocks[id.0 as usize]
    }

    pub fn terminator(&self, id: BlockId) -> Option<&Instruction> {
        let b = self.block(id);
        if b.end > b.start {
            Some(&self.insts[b.end as usize - 1])
        } else {
            None
        }
    }

    pub fn predecessors(&self) -> Vec<Vec<BlockId>> {
        let mut preds = vec![Vec::new(); self.blocks.len()];
        for (i, _) in self.blocks.iter().enumerate() {
            if let Some(term) = self.terminator(BlockId(i as u32)) {
                for s in term.successors() {
                    if let Some(p) = preds.get_mut(s.0 as usize) {
                        if !p.contains(&BlockId(i as u32)) {
                            p.push(BlockId(i as u32));
                        }
                    }
                }
            }
        }
        preds
    }
}

#[derive(Clone, Debug)]
pub struct Function {
    pub name: String,
    /// Value id of `@name` used as a function pointer.
    pub value: ValueId,
    pub param_shapes: Vec<Shape>,
    /// Parameter values; empty for declared externals.
    pub params: Vec<ValueId>,
    pub ret_shape: Option<Shape>,
    pub body: Option<Body>,
}

impl Function {
    pub fn is_defined(&self) -> bool {
        self.body.is_some()
    }
}

#[derive(Clone, Debug)]
pub struct Global {
    pub name: String,
    pub content: Shape,
    pub value: ValueId,
}

#[derive(Clone, Debug)]
pub struct StructType {
    pub name: String,
    pub fields: Vec<Shape>,
}

/// Name of the builtin heap allocator. Every call site is its own heap
/// allocation site.
pub const MALLOC: &str = "malloc";

#[derive(Clone, Debug, Default)]
pub struct SirModule {
    pub functions: Vec<Function>,
    pub globals: Vec<Global>,
    pub struct_types: Vec<StructType>,
    pub values: Vec<ValueInfo>,
    func_index: BTreeMap<String, FuncId>,
}

impl SirModule {
    pub fn value(&self, v: ValueId) -> &ValueInfo {
        &self.values[v.0 as usize]
    }

    pub fn function(&self, f: FuncId) -> &Function {
        &self.functions[f.0 as usize]
    }

    pub fn function_by_name(&self, name: &str) -> Option<FuncId> {
        self.func_index.get(name).copied()
    }

    pub fn func_ids(&self) -> impl Iterator<Item = FuncId> {
        (0..self.functions.len() as u32).map(FuncId)
    }

    pub fn inst(&self, r: InstRef) -> &Instruction {
        &self.function(r.func).body.as_ref().expect("instruction in declared function").insts
            [r.index as usize]
    }

    /// Every instruction of every defined function, in function then
    /// instruction order.
    pub fn instructions(&self) -> impl Iterator<Item = (InstRef, &Instruction)> + '_ {
        self.functions.iter().enumerate().flat_map(|(fi, f)| {
            f.body.iter().flat_map(move |b| {
                b.insts.iter().enumerate().map(move |(ii, inst)| {
                    (
                        InstRef {
                            func: FuncId(fi as u32),
                            index: ii as u32,
                        },
                        inst,
                    )
                })
            })
        })
    }

    pub fn instruction_count(&self) -> usize {
        self.functions
            .iter()
            .filter_map(|f| f.body.as_ref())
            .map(|b| b.insts.len())
            .sum()
    }

    pub fn def_inst(&self, v: ValueId) -> Option<InstRef> {
        match self.value(v).def {
            ValueDef::Inst(r) => Some(r),
            _ => None,
        }
    }

    /// Function a value lives in (params, instruction results, constants).
    pub fn owner(&self, v: ValueId) -> Option<FuncId> {
        match &self.value(v).def {
            ValueDef::Param { func, .. } => Some(*func),
            ValueDef::Inst(r) | ValueDef::Const { user: r, .. } => Some(r.func),
            ValueDef::Global(_) | ValueDef::Function(_) => None,
        }
    }

    pub fn is_null(&self, v: ValueId) -> bool {
        matches!(
            self.value(v).def,
            ValueDef::Const {
                value: Constant::Null,
                ..
            }
        )
    }

    pub fn const_int(&self, v: ValueId) -> Option<i64> {
        match self.value(v).def {
            ValueDef::Const {
                value: Constant::Int(n),
                ..
            } => Some(n),
            _ => None,
        }
    }

    /// Statically known callee of a call instruction.
    pub fn direct_callee(&self, inst: &Instruction) -> Option<FuncId> {
        match self.value(inst.callee()).def {
            ValueDef::Function(f) => Some(f),
            _ => None,
        }
    }

    pub fn is_malloc_call(&self, inst: &Instruction) -> bool {
        inst.opcode == Opcode::Call
            && self
                .direct_callee(inst)
                .is_some_and(|f| self.function(f).name == MALLOC)
    }

    /// Human-readable, stable label for a value: `func:%name`, `@global`,
    /// or `func:<literal>#index` for constants.
    pub fn value_label(&self, v: ValueId) -> String {
        let info = self.value(v);
        match &info.def {
            ValueDef::Param { func, .. } => format!("{}:%{}", self.function(*func).name, info.name),
            ValueDef::Inst(r) => format!("{}:%{}", self.function(r.func).name, info.name),
            ValueDef::Global(_) | ValueDef::Function(_) => format!("@{}", info.name),
            ValueDef::Const { value, user } => {
                let lit = match value {
                    Constant::Int(n) => n.to_string(),
                    Constant::Null => "null".to_string(),
                };
                format!("{}:{}#{}", self.function(user.func).name, lit, user.index)
            }
        }
    }

    /// Source location of an instruction, falling back to
    /// `function:instruction-index`.
    pub fn inst_loc(&self, r: InstRef) -> String {
        match &self.inst(r).loc {
            Some(loc) => loc.to_string(),
            None => format!("{}:{}", self.function(r.func).name, r.index),
        }
    }

    /// Location of a value's definition.
    pub fn value_loc(&self, v: ValueId) -> String {
        match &self.value(v).def {
            ValueDef::Inst(r) | ValueDef::Const { user: r, .. } => self.inst_loc(*r),
            ValueDef::Param { func, index } => {
                format!("{}:param{}", self.function(*func).name, index)
            }
            ValueDef::Global(_) | ValueDef::Function(_) => format!("@{}", self.value(v).name),
        }
    }

    pub(crate) fn register_function(&mut self, f: Function) -> FuncId {
        let id = FuncId(self.functions.len() as u32);
        self.func_index.insert(f.name.clone(), id);
        self.functions.push(f);
        id
    }

    pub(crate) fn push_value(&mut self, info: ValueInfo) -> ValueId {
        let id = ValueId(self.values.len() as u32);
        self.values.push(info);
        id
    }
}

/// The set of allocation sites annotated `INSENSITIVE`.
#[derive(Clone, Debug, Default, PartialEq, Eq)]
pub struct InsensitiveDataTable {
    pub entries: std::collections::BTreeSet<ValueId>,
}

impl InsensitiveDataTable {
    pub fn contains(&self, v: ValueId) -> bool {
        self.entries.contains(&v)
    }
}

pub const INSENSITIVE: &str = "INSENSITIVE";

/// Is `v` an allocation-site value: an alloca result, a malloc call result,
/// or a global?
pub fn is_allocation_value(m: &SirModule, v: ValueId) -> bool {
    match &m.value(v).def {
        ValueDef::Global(_) => true,
        ValueDef::Inst(r) => {
            let inst = m.inst(*r);
            inst.opcode == Opcode::Alloca || m.is_malloc_call(inst)
        }
        _ => false,
    }
}

/// Collects every allocation site annotated `INSENSITIVE`. Annotations whose
/// target is not an allocation site are skipped and reported as warnings.
pub fn collect_insensitive(m: &SirModule) -> (InsensitiveDataTable, Vec<String>) {
    let mut table = InsensitiveDataTable::default();
    let mut warnings = Vec::new();
    for (r, inst) in m.instructions() {
        let Some((target, note)) = inst.annotation() else {
            continue;
        };
        if note != INSENSITIVE {
            continue;
        }
        if is_allocation_value(m, target) {
            table.entries.insert(target);
        } else {
            warnings.push(format!(
                "{}: annotate target {} is not an allocation site; ignored",
                m.inst_loc(r),
                m.value_label(target)
            ));
        }
    }
    (table, warnings)
}
