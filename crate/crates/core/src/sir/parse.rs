use std::collections::HashMap;

use thiserror::Error;

use super::{
    BinOpKind, Block, BlockId, Body, CmpPred, Constant, Diagnostic, FuncId, Function, Global,
    GlobalId, InstRef, Instruction, Loc, Opcode, Operand, Shape, SirModule, StructType, UnOpKind,
    ValueDef, ValueId, ValueInfo, MALLOC,
};

#[derive(Debug, Error)]
pub enum SirError {
    #[error("{file}:{line}:{col}: syntax error: {msg}")]
    Syntax {
        file: String,
        line: usize,
        col: usize,
        msg: String,
    },
    #[error("{file}:{line}: use of undefined value %{name} in @{func}")]
    UseBeforeDef {
        file: String,
        line: usize,
        func: String,
        name: String,
    },
    #[error("{file}:{line}: value %{name} defined more than once in @{func}")]
    Redefined {
        file: String,
        line: usize,
        func: String,
        name: String,
    },
    #[error("{file}:{line}: unknown opcode `{name}`")]
    UnknownOpcode {
        file: String,
        line: usize,
        name: String,
    },
    #[error("{file}:{line}: `{opcode}` expects {expected}")]
    Arity {
        file: String,
        line: usize,
        opcode: String,
        expected: String,
    },
    #[error("{file}:{line}: unknown symbol @{name}")]
    UnknownSymbol {
        file: String,
        line: usize,
        name: String,
    },
    #[error("{file}:{line}: unknown block label `{name}` in @{func}")]
    UnknownLabel {
        file: String,
        line: usize,
        func: String,
        name: String,
    },
    #[error("{file}:{line}: duplicate definition of @{name}")]
    DuplicateSymbol {
        file: String,
        line: usize,
        name: String,
    },
    #[error("module failed verification:\n{}", .0.iter().map(|d| d.to_string()).collect::<Vec<_>>().join("\n"))]
    Verify(Vec<Diagnostic>),
}

#[derive(Clone, Debug, PartialEq)]
enum Tok {
    Local(String),
    Global(String),
    Ident(String),
    Int(i64),
    Str(String),
    LParen,
    RParen,
    LBracket,
    RBracket,
    LBrace,
    RBrace,
    Comma,
    Colon,
    Eq,
    Arrow,
    Bang,
}

#[derive(Clone, Debug)]
struct Token {
    tok: Tok,
    col: usize,
}

fn is_name_char(c: char) -> bool {
    c.is_ascii_alphanumeric() || matches!(c, '_' | '.' | '$')
}

struct Lexer<'a> {
    file: &'a str,
}

impl Lexer<'_> {
    fn err(&self, line: usize, col: usize, msg: impl Into<String>) -> SirError {
        SirError::Syntax {
            file: self.file.to_string(),
            line,
            col,
            msg: msg.into(),
        }
    }

    fn lex_line(&self, line_no: usize, line: &str) -> Result<Vec<Token>, SirError> {
        let chars: Vec<char> = line.chars().collect();
        let mut out = Vec::new();
        let mut i = 0;
        while i < chars.len() {
            let c = chars[i];
            let col = i + 1;
            if c.is_whitespace() {
                i += 1;
                continue;
            }
            if c == ';' {
                break;
            }
            let simple = match c {
                '(' => Some(Tok::LParen),
                ')' => Some(Tok::RParen),
                '[' => Some(Tok::LBracket),
                ']' => Some(Tok::RBracket),
                '{' => Some(Tok::LBrace),
                '}' => Some(Tok::RBrace),
                ',' => Some(Tok::Comma),
                ':' => Some(Tok::Colon),
                '=' => Some(Tok::Eq),
                '!' => Some(Tok::Bang),
                _ => None,
            };
            if let Some(tok) = simple {
                out.push(Token { tok, col });
                i += 1;
                continue;
            }
            if c == '-' && chars.get(i + 1) == Some(&'>') {
                out.push(Token {
                    tok: Tok::Arrow,
                    col,
                });
                i += 2;
                continue;
            }
            if c == '%' || c == '@' {
                let start = i + 1;
                let mut j = start;
                while j < chars.len() && is_name_char(chars[j]) {
                    j += 1;
                }
                if j == start {
                    return Err(self.err(line_no, col, format!("expected a name after `{c}`")));
                }
                let name: String = chars[start..j].iter().collect();
                out.push(Token {
                    tok: if c == '%' {
                        Tok::Local(name)
                    } else {
                        Tok::Global(name)
                    },
                    col,
                });
                i = j;
                continue;
            }
            if c == '"' {
                let mut j = i + 1;
                let mut s = String::new();
                while j < chars.len() && chars[j] != '"' {
                    s.push(chars[j]);
                    j += 1;
                }
                if j >= chars.len() {
                    return Err(self.err(line_no, col, "unterminated string literal"));
                }
                out.push(Token {
                    tok: Tok::Str(s),
                    col,
                });
                i = j + 1;
                continue;
            }
            if c.is_ascii_digit() || (c == '-' && chars.get(i + 1).is_some_and(|d| d.is_ascii_digit())) {
                let mut j = i + 1;
                while j < chars.len() && chars[j].is_ascii_digit() {
                    j += 1;
                }
                let text: String = chars[i..j].iter().collect();
                let n = text
                    .parse::<i64>()
                    .map_err(|_| self.err(line_no, col, format!("integer out of range: {text}")))?;
                out.push(Token {
                    tok: Tok::Int(n),
                    col,
                });
                i = j;
                continue;
            }
            if c.is_ascii_alphabetic() || c == '_' {
                let mut j = i;
                while j < chars.len() && is_name_char(chars[j]) {
                    j += 1;
                }
                out.push(Token {
                    tok: Tok::Ident(chars[i..j].iter().collect()),
                    col,
                });
                i = j;
                continue;
            }
            return Err(self.err(line_no, col, format!("unexpected character `{c}`")));
        }
        Ok(out)
    }
}

#[derive(Clone, Debug)]
enum RawOperand {
    Local(String),
    Global(String),
    Int(i64),
    Null,
    Label(String),
    Imm(i64),
    Str(String),
}

#[derive(Clone, Debug)]
struct RawInst {
    line: usize,
    result: Option<String>,
    opcode: Opcode,
    operands: Vec<RawOperand>,
    loc: Option<Loc>,
}

#[derive(Clone, Debug)]
struct RawBlock {
    label: String,
    insts: Vec<RawInst>,
}

#[derive(Clone, Debug)]
struct RawFunction {
    file: String,
    line: usize,
    name: String,
    params: Vec<(String, Shape)>,
    ret: Option<Shape>,
    blocks: Vec<RawBlock>,
}

/// Cursor over one line's tokens.
struct Cursor<'a> {
    toks: &'a [Token],
    pos: usize,
    line: usize,
    file: &'a str,
}

impl<'a> Cursor<'a> {
    fn new(toks: &'a [Token], line: usize, file: &'a str) -> Self {
        Cursor {
            toks,
            pos: 0,
            line,
            file,
        }
    }

    fn col(&self) -> usize {
        self.toks
            .get(self.pos)
            .map(|t| t.col)
            .unwrap_or_else(|| self.toks.last().map(|t| t.col + 1).unwrap_or(1))
    }

    fn err(&self, msg: impl Into<String>) -> SirError {
        SirError::Syntax {
            file: self.file.to_string(),
            line: self.line,
            col: self.col(),
            msg: msg.into(),
        }
    }

    fn peek(&self) -> Option<&Tok> {
        self.toks.get(self.pos).map(|t| &t.tok)
    }

    fn next(&mut self) -> Option<&Tok> {
        let t = self.toks.get(self.pos).map(|t| &t.tok);
        if t.is_some() {
            self.pos += 1;
        }
        t
    }

    fn at_end(&self) -> bool {
        self.pos >= self.toks.len()
    }

    fn eat(&mut self, tok: &Tok) -> bool {
        if self.peek() == Some(tok) {
            self.pos += 1;
            true
        } else {
            false
        }
    }

    fn expect(&mut self, tok: &Tok, what: &str) -> Result<(), SirError> {
        if self.eat(tok) {
            Ok(())
        } else {
            Err(self.err(format!("expected {what}")))
        }
    }

    fn ident(&mut self, what: &str) -> Result<String, SirError> {
        match self.peek() {
            Some(Tok::Ident(s)) => {
                let s = s.clone();
                self.pos += 1;
                Ok(s)
            }
            _ => Err(self.err(format!("expected {what}"))),
        }
    }

    fn int(&mut self, what: &str) -> Result<i64, SirError> {
        match self.peek() {
            Some(Tok::Int(n)) => {
                let n = *n;
                self.pos += 1;
                Ok(n)
            }
            _ => Err(self.err(format!("expected {what}"))),
        }
    }

    fn shape(&mut self) -> Result<Shape, SirError> {
        match self.ident("a shape (`ptr` or `val`)")?.as_str() {
            "ptr" => Ok(Shape::Ptr),
            "val" => Ok(Shape::Val),
            other => Err(self.err(format!("unknown shape `{other}`"))),
        }
    }

    fn operand(&mut self) -> Result<RawOperand, SirError> {
        match self.next().cloned() {
            Some(Tok::Local(n)) => Ok(RawOperand::Local(n)),
            Some(Tok::Global(n)) => Ok(RawOperand::Global(n)),
            Some(Tok::Int(n)) => Ok(RawOperand::Int(n)),
            Some(Tok::Ident(s)) if s == "null" => Ok(RawOperand::Null),
            _ => {
                self.pos = self.pos.saturating_sub(1);
                Err(self.err("expected an operand"))
            }
        }
    }
}

fn arity_err(file: &str, line: usize, opcode: &str, expected: &str) -> SirError {
    SirError::Arity {
        file: file.to_string(),
        line,
        opcode: opcode.to_string(),
        expected: expected.to_string(),
    }
}

/// Splits a comma-separated operand list, enforcing the exact count.
fn operand_list(
    cur: &mut Cursor<'_>,
    count: usize,
    opcode: &str,
    expected: &str,
) -> Result<Vec<RawOperand>, SirError> {
    let mut ops = Vec::new();
    if cur.at_end() || cur.peek() == Some(&Tok::Bang) {
        if count == 0 {
            return Ok(ops);
        }
        return Err(arity_err(cur.file, cur.line, opcode, expected));
    }
    loop {
        ops.push(cur.operand()?);
        if !cur.eat(&Tok::Comma) {
            break;
        }
    }
    if ops.len() != count {
        return Err(arity_err(cur.file, cur.line, opcode, expected));
    }
    Ok(ops)
}

fn parse_instruction(cur: &mut Cursor<'_>) -> Result<RawInst, SirError> {
    let line = cur.line;
    let mut result = None;
    if let Some(Tok::Local(name)) = cur.peek().cloned() {
        if cur.toks.get(cur.pos + 1).map(|t| &t.tok) == Some(&Tok::Eq) {
            result = Some(name);
            cur.pos += 2;
        }
    }
    let op_name = cur.ident("an opcode")?;
    let file = cur.file;
    let (opcode, operands) = match op_name.as_str() {
        "alloca" => {
            let n = cur.int("an allocation size")?;
            (Opcode::Alloca, vec![RawOperand::Imm(n)])
        }
        "load" => (Opcode::Load, operand_list(cur, 1, "load", "one address operand")?),
        "store" => (Opcode::Store, operand_list(cur, 2, "store", "(value, address)")?),
        "gep" => {
            let base = cur.operand()?;
            cur.expect(&Tok::Comma, "`,` after gep base")
                .map_err(|_| arity_err(file, line, "gep", "(base, constant offset)"))?;
            let off = cur.int("a constant gep offset")?;
            (Opcode::Gep, vec![base, RawOperand::Imm(off)])
        }
        "bitcast" => (Opcode::Bitcast, operand_list(cur, 1, "bitcast", "one operand")?),
        "phi" => {
            let mut ops = Vec::new();
            loop {
                cur.expect(&Tok::LBracket, "`[` starting a phi incoming pair")?;
                ops.push(cur.operand()?);
                cur.expect(&Tok::Comma, "`,` in phi incoming pair")?;
                ops.push(RawOperand::Label(cur.ident("a block label")?));
                cur.expect(&Tok::RBracket, "`]` closing a phi incoming pair")?;
                if !cur.eat(&Tok::Comma) {
                    break;
                }
            }
            (Opcode::Phi, ops)
        }
        "icmp" => {
            let pred_name = cur.ident("a comparison predicate")?;
            let pred = CmpPred::ALL
                .into_iter()
                .find(|p| p.mnemonic() == pred_name)
                .ok_or_else(|| cur.err(format!("unknown icmp predicate `{pred_name}`")))?;
            (Opcode::Icmp(pred), operand_list(cur, 2, "icmp", "(lhs, rhs)")?)
        }
        "call" => {
            let callee = cur.operand()?;
            cur.expect(&Tok::LParen, "`(` after call target")?;
            let mut ops = vec![callee];
            if !cur.eat(&Tok::RParen) {
                loop {
                    ops.push(cur.operand()?);
                    if cur.eat(&Tok::RParen) {
                        break;
                    }
                    cur.expect(&Tok::Comma, "`,` or `)` in call arguments")?;
                }
            }
            (Opcode::Call, ops)
        }
        "memcpy" => (Opcode::Memcpy, operand_list(cur, 3, "memcpy", "(dst, src, len)")?),
        "annotate" => {
            let target = cur.operand()?;
            cur.expect(&Tok::Comma, "`,` after annotate target")
                .map_err(|_| arity_err(file, line, "annotate", "(target, \"string\")"))?;
            let note = match cur.next().cloned() {
                Some(Tok::Str(s)) => s,
                _ => return Err(cur.err("expected a string literal")),
            };
            (Opcode::Annotate, vec![target, RawOperand::Str(note)])
        }
        "ret" => {
            if cur.at_end() || cur.peek() == Some(&Tok::Bang) {
                (Opcode::Ret, Vec::new())
            } else {
                (Opcode::Ret, operand_list(cur, 1, "ret", "at most one operand")?)
            }
        }
        "br" => (Opcode::Br, vec![RawOperand::Label(cur.ident("a block label")?)]),
        "condbr" => {
            let c = cur.operand()?;
            cur.expect(&Tok::Comma, "`,`")
                .map_err(|_| arity_err(file, line, "condbr", "(cond, label, label)"))?;
            let t = cur.ident("a block label")?;
            cur.expect(&Tok::Comma, "`,`")
                .map_err(|_| arity_err(file, line, "condbr", "(cond, label, label)"))?;
            let e = cur.ident("a block label")?;
            (
                Opcode::CondBr,
                vec![c, RawOperand::Label(t), RawOperand::Label(e)],
            )
        }
        other => {
            if let Some(k) = BinOpKind::ALL.into_iter().find(|k| k.mnemonic() == other) {
                (Opcode::BinOp(k), operand_list(cur, 2, other, "(lhs, rhs)")?)
            } else if let Some(k) = [UnOpKind::Neg, UnOpKind::Not]
                .into_iter()
                .find(|k| k.mnemonic() == other)
            {
                (Opcode::UnOp(k), operand_list(cur, 1, other, "one operand")?)
            } else {
                return Err(SirError::UnknownOpcode {
                    file: file.to_string(),
                    line,
                    name: other.to_string(),
                });
            }
        }
    };
    let mut loc = None;
    if cur.eat(&Tok::Bang) {
        let kw = cur.ident("`loc`")?;
        if kw != "loc" {
            return Err(cur.err(format!("unknown metadata `!{kw}`")));
        }
        let text = match cur.next().cloned() {
            Some(Tok::Str(s)) => s,
            _ => return Err(cur.err("expected \"file:line\" after !loc")),
        };
        let (file_part, line_part) = text
            .rsplit_once(':')
            .ok_or_else(|| cur.err("location must be \"file:line\""))?;
        let line_no = line_part
            .parse::<u32>()
            .map_err(|_| cur.err("location line must be a number"))?;
        loc = Some(Loc {
            file: file_part.to_string(),
            line: line_no,
        });
    }
    if !cur.at_end() {
        return Err(cur.err("unexpected trailing tokens"));
    }
    let needs_result = matches!(
        opcode,
        Opcode::Alloca
            | Opcode::Load
            | Opcode::Gep
            | Opcode::Bitcast
            | Opcode::Phi
            | Opcode::BinOp(_)
            | Opcode::UnOp(_)
            | Opcode::Icmp(_)
    );
    let forbids_result = matches!(
        opcode,
        Opcode::Store | Opcode::Memcpy | Opcode::Annotate | Opcode::Ret | Opcode::Br | Opcode::CondBr
    );
    if needs_result && result.is_none() {
        return Err(SirError::Syntax {
            file: file.to_string(),
            line,
            col: 1,
            msg: format!("`{}` must define a value", opcode.name()),
        });
    }
    if forbids_result && result.is_some() {
        return Err(SirError::Syntax {
            file: file.to_string(),
            line,
            col: 1,
            msg: format!("`{}` does not define a value", opcode.name()),
        });
    }
    Ok(RawInst {
        line,
        result,
        opcode,
        operands,
        loc,
    })
}

fn parse_params(cur: &mut Cursor<'_>, named: bool) -> Result<Vec<(String, Shape)>, SirError> {
    cur.expect(&Tok::LParen, "`(`")?;
    let mut params = Vec::new();
    if cur.eat(&Tok::RParen) {
        return Ok(params);
    }
    loop {
        let name = match cur.peek().cloned() {
            Some(Tok::Local(n)) => {
                cur.pos += 1;
                cur.expect(&Tok::Colon, "`:` after parameter name")?;
                n
            }
            _ if named => return Err(cur.err("expected a parameter `%name: shape`")),
            _ => format!("arg{}", params.len()),
        };
        let shape = cur.shape()?;
        params.push((name, shape));
        if cur.eat(&Tok::RParen) {
            break;
        }
        cur.expect(&Tok::Comma, "`,` or `)`")?;
    }
    Ok(params)
}

fn parse_ret(cur: &mut Cursor<'_>) -> Result<Option<Shape>, SirError> {
    if cur.eat(&Tok::Arrow) {
        Ok(Some(cur.shape()?))
    } else {
        Ok(None)
    }
}

/// Builder that accumulates declarations and function bodies across source
/// files before resolving names.
#[derive(Default)]
struct ModuleBuilder {
    globals: Vec<(String, Shape, String, usize)>,
    declares: Vec<(String, Vec<Shape>, Option<Shape>, String, usize)>,
    structs: Vec<StructType>,
    defines: Vec<RawFunction>,
}

impl ModuleBuilder {
    fn add_source(&mut self, file: &str, text: &str) -> Result<(), SirError> {
        let lexer = Lexer { file };
        let mut lines = Vec::new();
        for (i, line) in text.lines().enumerate() {
            let toks = lexer.lex_line(i + 1, line)?;
            if !toks.is_empty() {
                lines.push((i + 1, toks));
            }
        }
        let mut idx = 0;
        while idx < lines.len() {
            let (line_no, toks) = &lines[idx];
            let mut cur = Cursor::new(toks, *line_no, file);
            let kw = cur.ident("`define`, `declare`, `global` or `type`")?;
            match kw.as_str() {
                "global" => {
                    let name = match cur.next().cloned() {
                        Some(Tok::Global(n)) => n,
                        _ => return Err(cur.err("expected @name")),
                    };
                    cur.expect(&Tok::Colon, "`:`")?;
                    let shape = cur.shape()?;
                    if !cur.at_end() {
                        return Err(cur.err("unexpected trailing tokens"));
                    }
                    self.globals.push((name, shape, file.to_string(), *line_no));
                    idx += 1;
                }
                "declare" => {
                    let name = match cur.next().cloned() {
                        Some(Tok::Global(n)) => n,
                        _ => return Err(cur.err("expected @name")),
                    };
                    let params = parse_params(&mut cur, false)?;
                    let ret = parse_ret(&mut cur)?;
                    if !cur.at_end() {
                        return Err(cur.err("unexpected trailing tokens"));
                    }
                    self.declares.push((
                        name,
                        params.into_iter().map(|p| p.1).collect(),
                        ret,
                        file.to_string(),
                        *line_no,
                    ));
                    idx += 1;
                }
                "type" => {
                    let name = match cur.next().cloned() {
                        Some(Tok::Local(n)) | Some(Tok::Global(n)) | Some(Tok::Ident(n)) => n,
                        _ => return Err(cur.err("expected a type name")),
                    };
                    cur.expect(&Tok::Eq, "`=`")?;
                    cur.expect(&Tok::LBrace, "`{`")?;
                    let mut fields = Vec::new();
                    if !cur.eat(&Tok::RBrace) {
                        loop {
                            fields.push(cur.shape()?);
                            if cur.eat(&Tok::RBrace) {
                                break;
                            }
                            cur.expect(&Tok::Comma, "`,` or `}`")?;
                        }
                    }
                    self.structs.push(StructType { name, fields });
                    idx += 1;
                }
                "define" => {
                    let name = match cur.next().cloned() {
                        Some(Tok::Global(n)) => n,
                        _ => return Err(cur.err("expected @name")),
                    };
                    let params = parse_params(&mut cur, true)?;
                    let ret = parse_ret(&mut cur)?;
                    cur.expect(&Tok::LBrace, "`{` opening the function body")?;
                    if !cur.at_end() {
                        return Err(cur.err("unexpected tokens after `{`"));
                    }
                    let def_line = *line_no;
                    idx += 1;
                    let mut blocks: Vec<RawBlock> = Vec::new();
                    let mut closed = false;
                    while idx < lines.len() {
                        let (ln, toks) = &lines[idx];
                        idx += 1;
                        if toks.len() == 1 && toks[0].tok == Tok::RBrace {
                            closed = true;
                            break;
                        }
                        if toks.len() == 2 && toks[1].tok == Tok::Colon {
                            if let Tok::Ident(label) = &toks[0].tok {
                                blocks.push(RawBlock {
                                    label: label.clone(),
                                    insts: Vec::new(),
                                });
                                continue;
                            }
                        }
                        let mut c = Cursor::new(toks, *ln, file);
                        let inst = parse_instruction(&mut c)?;
                        if blocks.is_empty() {
                            blocks.push(RawBlock {
                                label: "entry".to_string(),
                                insts: Vec::new(),
                            });
                        }
                        blocks.last_mut().unwrap().insts.push(inst);
                    }
                    if !closed {
                        return Err(SirError::Syntax {
                            file: file.to_string(),
                            line: def_line,
                            col: 1,
                            msg: format!("function @{name} is missing its closing `}}`"),
                        });
                    }
                    self.defines.push(RawFunction {
                        file: file.to_string(),
                        line: def_line,
                        name,
                        params,
                        ret,
                        blocks,
                    });
                }
                other => return Err(cur.err(format!("unexpected `{other}` at top level"))),
            }
        }
        Ok(())
    }

    fn finish(self) -> Result<SirModule, SirError> {
        let mut m = SirModule::default();
        let mut globals_by_name: HashMap<String, ValueId> = HashMap::new();

        for (name, shape, file, line) in &self.globals {
            if globals_by_name.contains_key(name) {
                return Err(SirError::DuplicateSymbol {
                    file: file.clone(),
                    line: *line,
                    name: name.clone(),
                });
            }
            let gid = GlobalId(m.globals.len() as u32);
            let v = m.push_value(ValueInfo {
                name: name.clone(),
                def: ValueDef::Global(gid),
                shape: Shape::Ptr,
            });
            m.globals.push(Global {
                name: name.clone(),
                content: *shape,
                value: v,
            });
            globals_by_name.insert(name.clone(), v);
        }
        m.struct_types = self.structs;

        // Function table: definitions win over declarations of the same name.
        let mut defined: HashMap<&str, usize> = HashMap::new();
        for (i, f) in self.defines.iter().enumerate() {
            if defined.insert(f.name.as_str(), i).is_some() || globals_by_name.contains_key(&f.name) {
                return Err(SirError::DuplicateSymbol {
                    file: f.file.clone(),
                    line: f.line,
                    name: f.name.clone(),
                });
            }
        }
        let mut declared: HashMap<&str, usize> = HashMap::new();
        for (i, d) in self.declares.iter().enumerate() {
            if globals_by_name.contains_key(&d.0) {
                return Err(SirError::DuplicateSymbol {
                    file: d.3.clone(),
                    line: d.4,
                    name: d.0.clone(),
                });
            }
            declared.entry(d.0.as_str()).or_insert(i);
        }

        let mut define_ids = Vec::new();
        for f in &self.defines {
            let fid = FuncId(m.functions.len() as u32);
            let value = m.push_value(ValueInfo {
                name: f.name.clone(),
                def: ValueDef::Function(fid),
                shape: Shape::Ptr,
            });
            let mut params = Vec::new();
            for (i, (pname, shape)) in f.params.iter().enumerate() {
                params.push(m.push_value(ValueInfo {
                    name: pname.clone(),
                    def: ValueDef::Param {
                        func: fid,
                        index: i as u32,
                    },
                    shape: *shape,
                }));
            }
            m.register_function(Function {
                name: f.name.clone(),
                value,
                param_shapes: f.params.iter().map(|p| p.1).collect(),
                params,
                ret_shape: f.ret,
                body: Some(Body::default()),
            });
            define_ids.push(fid);
        }
        let mut declare_order: Vec<_> = declared
            .into_iter()
            .filter(|(n, _)| !defined.contains_key(n))
            .map(|(_, i)| i)
            .collect();
        declare_order.sort_unstable();
        for i in declare_order {
            let (name, shapes, ret, _, _) = &self.declares[i];
            add_external(&mut m, name, shapes.clone(), *ret);
        }

        for (f, fid) in self.defines.iter().zip(define_ids) {
            resolve_body(&mut m, f, fid, &globals_by_name)?;
        }
        Ok(m)
    }
}

fn add_external(m: &mut SirModule, name: &str, shapes: Vec<Shape>, ret: Option<Shape>) -> FuncId {
    let fid = FuncId(m.functions.len() as u32);
    let value = m.push_value(ValueInfo {
        name: name.to_string(),
        def: ValueDef::Function(fid),
        shape: Shape::Ptr,
    });
    m.register_function(Function {
        name: name.to_string(),
        value,
        param_shapes: shapes,
        params: Vec::new(),
        ret_shape: ret,
        body: None,
    })
}

fn resolve_body(
    m: &mut SirModule,
    f: &RawFunction,
    fid: FuncId,
    globals: &HashMap<String, ValueId>,
) -> Result<(), SirError> {
    let mut labels: HashMap<&str, BlockId> = HashMap::new();
    for (i, b) in f.blocks.iter().enumerate() {
        if labels.insert(b.label.as_str(), BlockId(i as u32)).is_some() {
            return Err(SirError::Syntax {
                file: f.file.clone(),
                line: f.line,
                col: 1,
                msg: format!("duplicate block label `{}` in @{}", b.label, f.name),
            });
        }
    }

    let mut locals: HashMap<String, ValueId> = HashMap::new();
    for &p in &m.function(fid).params.clone() {
        let name = m.value(p).name.clone();
        if locals.insert(name.clone(), p).is_some() {
            return Err(SirError::Redefined {
                file: f.file.clone(),
                line: f.line,
                func: f.name.clone(),
                name,
            });
        }
    }

    // Allocate result values first so phis may refer forward.
    let mut index = 0u32;
    let mut results = Vec::new();
    for b in &f.blocks {
        for inst in &b.insts {
            let r = InstRef { func: fid, index };
            let v = match &inst.result {
                Some(name) => {
                    if locals.contains_key(name) {
                        return Err(SirError::Redefined {
                            file: f.file.clone(),
                            line: inst.line,
                            func: f.name.clone(),
                            name: name.clone(),
                        });
                    }
                    let v = m.push_value(ValueInfo {
                        name: name.clone(),
                        def: ValueDef::Inst(r),
                        shape: Shape::Any,
                    });
                    locals.insert(name.clone(), v);
                    Some(v)
                }
                None => None,
            };
            results.push(v);
            index += 1;
        }
    }

    let mut body = Body::default();
    let mut index = 0u32;
    for (bi, b) in f.blocks.iter().enumerate() {
        let start = index;
        for inst in &b.insts {
            let r = InstRef { func: fid, index };
            let mut operands = Vec::with_capacity(inst.operands.len());
            for op in &inst.operands {
                let resolved = match op {
                    RawOperand::Local(n) => Operand::Value(*locals.get(n).ok_or_else(|| {
                        SirError::UseBeforeDef {
                            file: f.file.clone(),
                            line: inst.line,
                            func: f.name.clone(),
                            name: n.clone(),
                        }
                    })?),
                    RawOperand::Global(n) => {
                        let v = if let Some(g) = globals.get(n) {
                            *g
                        } else if let Some(fid) = m.function_by_name(n) {
                            m.function(fid).value
                        } else if n == MALLOC {
                            let fid = add_external(m, MALLOC, vec![Shape::Val], Some(Shape::Ptr));
                            m.function(fid).value
                        } else {
                            return Err(SirError::UnknownSymbol {
                                file: f.file.clone(),
                                line: inst.line,
                                name: n.clone(),
                            });
                        };
                        Operand::Value(v)
                    }
                    RawOperand::Int(n) => Operand::Value(m.push_value(ValueInfo {
                        name: n.to_string(),
                        def: ValueDef::Const {
                            value: Constant::Int(*n),
                            user: r,
                        },
                        shape: Shape::Val,
                    })),
                    RawOperand::Null => Operand::Value(m.push_value(ValueInfo {
                        name: "null".to_string(),
                        def: ValueDef::Const {
                            value: Constant::Null,
                            user: r,
                        },
                        shape: Shape::Ptr,
                    })),
                    RawOperand::Label(l) => {
                        Operand::Block(*labels.get(l.as_str()).ok_or_else(|| {
                            SirError::UnknownLabel {
                                file: f.file.clone(),
                                line: inst.line,
                                func: f.name.clone(),
                                name: l.clone(),
                            }
                        })?)
                    }
                    RawOperand::Imm(n) => Operand::Imm(*n),
                    RawOperand::Str(s) => Operand::Str(s.clone()),
                };
                operands.push(resolved);
            }
            body.insts.push(Instruction {
                result: results[index as usize],
                opcode: inst.opcode,
                operands,
                loc: inst.loc.clone(),
            });
            index += 1;
        }
        body.blocks.push(Block {
            label: b.label.clone(),
            start,
            end: index,
        });
        debug_assert_eq!(bi + 1, body.blocks.len());
    }

    // Result shapes, in textual order.
    for i in 0..body.insts.len() {
        let inst = &body.insts[i];
        let Some(res) = inst.result else { continue };
        let shape = match inst.opcode {
            Opcode::Alloca | Opcode::Gep => Shape::Ptr,
            Opcode::BinOp(_) | Opcode::UnOp(_) | Opcode::Icmp(_) => Shape::Val,
            Opcode::Bitcast => m.value(inst.unary_src()).shape,
            Opcode::Call => match m.value(inst.callee()).def {
                ValueDef::Function(callee) if m.function(callee).name == MALLOC => Shape::Ptr,
                ValueDef::Function(callee) => m.function(callee).ret_shape.unwrap_or(Shape::Any),
                _ => Shape::Any,
            },
            _ => Shape::Any,
        };
        m.values[res.0 as usize].shape = shape;
    }

    m.functions[fid.0 as usize].body = Some(body);
    Ok(())
}

/// Parses SIR text without running the verifier.
pub fn parse_unverified(text: &str) -> Result<SirModule, SirError> {
    let mut b = ModuleBuilder::default();
    b.add_source("<input>", text)?;
    b.finish()
}

/// Parses and verifies a single SIR source.
pub fn parse_sir(text: &str) -> Result<SirModule, SirError> {
    parse_sir_sources(&[("<input>", text)])
}

/// Parses several SIR files into one module and verifies it. Declarations in
/// one file may be defined in another.
pub fn parse_sir_sources(sources: &[(&str, &str)]) -> Result<SirModule, SirError> {
    let mut b = ModuleBuilder::default();
    for (file, text) in sources {
        b.add_source(file, text)?;
    }
    let m = b.finish()?;
    let diags = super::verify_module(&m);
    if diags.is_empty() {
        Ok(m)
    } else {
        Err(SirError::Verify(diags))
    }
}
