//! Enclave interface definitions: parsing, pretty-printing and extraction of
//! the parameters through which enclave data can leave the enclave.

use std::collections::{HashMap, HashSet};
use std::fmt;

use serde::Serialize;
use thiserror::Error;

#[derive(Debug, Error, PartialEq, Eq)]
pub enum EdlError {
    #[error("{line}:{col}: syntax error: {msg}")]
    Syntax { line: usize, col: usize, msg: String },
    #[error("{line}:{col}: unsupported attribute `{name}`")]
    UnsupportedAttribute { line: usize, col: usize, name: String },
    #[error("{func}: size of parameter `{param}` refers to unknown parameter `{name}`")]
    UnresolvedSize { func: String, param: String, name: String },
    #[error("duplicate function `{0}`")]
    DuplicateFunction(String),
    #[error("{func}: duplicate parameter `{name}`")]
    DuplicateParam { func: String, name: String },
    #[error("{func}: direction attribute on non-pointer parameter `{param}`")]
    DirectionOnNonPointer { func: String, param: String },
    #[error("{func}: parameter `{param}` combines user_check with in/out")]
    ConflictingDirection { func: String, param: String },
    #[error("duplicate struct `{0}`")]
    DuplicateStruct(String),
    #[error("struct {strct}: duplicate field `{field}`")]
    DuplicateField { strct: String, field: String },
}

#[derive(Copy, Clone, Debug, PartialEq, Eq, Hash, Serialize)]
pub enum EdlKind {
    /// ECALL: entry from the untrusted host into the enclave.
    Trusted,
    /// OCALL: call from the enclave out to the host.
    Untrusted,
}

#[derive(Copy, Clone, Debug, PartialEq, Eq, Hash)]
pub enum Direction {
    None,
    In,
    Out,
    InOut,
    UserCheck,
}

#[derive(Clone, Debug, PartialEq, Eq)]
pub enum SizeExpr {
    Param { name: String, index: usize },
    Int(u64),
}

#[derive(Clone, Debug, PartialEq, Eq)]
pub struct EdlParam {
    pub name: String,
    /// Pointee type for pointers (`char` for `char*`, `char*` for `char**`),
    /// the full type otherwise.
    pub base_type: String,
    pub is_pointer: bool,
    pub direction: Direction,
    pub size_expr: Option<SizeExpr>,
    pub position: usize,
}

#[derive(Clone, Debug, PartialEq, Eq)]
pub struct EdlFunction {
    pub name: String,
    pub kind: EdlKind,
    pub return_type: String,
    pub returns_pointer: bool,
    pub params: Vec<EdlParam>,
}

#[derive(Clone, Debug, PartialEq, Eq)]
pub struct EdlField {
    pub name: String,
    pub base_type: String,
    pub is_pointer: bool,
}

#[derive(Clone, Debug, PartialEq, Eq)]
pub struct EdlStructDef {
    pub name: String,
    pub fields: Vec<EdlField>,
}

#[derive(Clone, Debug, Default, PartialEq, Eq)]
pub struct EdlInterface {
    pub functions: Vec<EdlFunction>,
    pub structs: Vec<EdlStructDef>,
}

impl EdlInterface {
    pub fn function(&self, name: &str) -> Option<&EdlFunction> {
        self.functions.iter().find(|f| f.name == name)
    }

    /// Struct definition named by a C type such as `struct foo` or `foo`.
    pub fn struct_for_type(&self, ty: &str) -> Option<&EdlStructDef> {
        let name = ty.strip_prefix("struct ").unwrap_or(ty).trim();
        self.structs.iter().find(|s| s.name == name)
    }

    /// Merges several parsed files into one interface, rejecting duplicates.
    pub fn merge(parts: Vec<EdlInterface>) -> Result<EdlInterface, EdlError> {
        let mut out = EdlInterface::default();
        for part in parts {
            for s in part.structs {
                if out.structs.iter().any(|t| t.name == s.name) {
                    return Err(EdlError::DuplicateStruct(s.name));
                }
                out.structs.push(s);
            }
            for f in part.functions {
                if out.function(&f.name).is_some() {
                    return Err(EdlError::DuplicateFunction(f.name));
                }
                out.functions.push(f);
            }
        }
        Ok(out)
    }
}

#[derive(Copy, Clone, Debug, PartialEq, Eq, Hash, PartialOrd, Ord, Serialize)]
pub enum Pattern {
    P1,
    P2,
    P3,
    P4,
    P5,
}

impl Pattern {
    pub const ALL: [Pattern; 5] = [Pattern::P1, Pattern::P2, Pattern::P3, Pattern::P4, Pattern::P5];
}

impl fmt::Display for Pattern {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        fmt::Debug::fmt(self, f)
    }
}

#[derive(Copy, Clone, Debug, PartialEq, Eq, Hash, PartialOrd, Ord)]
pub enum TupleIndex {
    Param(usize),
    Return,
}

impl fmt::Display for TupleIndex {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        match self {
            TupleIndex::Param(i) => write!(f, "{i}"),
            TupleIndex::Return => f.write_str("RETURN"),
        }
    }
}

#[derive(Clone, Debug, PartialEq, Eq, Hash, PartialOrd, Ord)]
pub struct LeakTuple {
    pub funcname: String,
    pub index: TupleIndex,
    pub pattern: Pattern,
    /// Set for `[in]` struct pointers whose pointer fields are raw host
    /// pointers: the fields are the leak channel, not the parameter.
    pub via_struct_field: bool,
}

impl LeakTuple {
    fn new(funcname: &str, index: TupleIndex, pattern: Pattern) -> Self {
        LeakTuple {
            funcname: funcname.to_string(),
            index,
            pattern,
            via_struct_field: false,
        }
    }
}

impl fmt::Display for LeakTuple {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        write!(f, "({},{},{})", self.funcname, self.index, self.pattern)
    }
}

/// Lists the leak-relevant parameters of every interface function, in
/// declaration order.
pub fn extract_key_parameters(iface: &EdlInterface) -> Vec<LeakTuple> {
    let mut out = Vec::new();
    for f in &iface.functions {
        for p in &f.params {
            if !p.is_pointer {
                continue;
            }
            let idx = TupleIndex::Param(p.position);
            match (f.kind, p.direction) {
                (EdlKind::Trusted, Direction::Out | Direction::InOut) => {
                    out.push(LeakTuple::new(&f.name, idx, Pattern::P1));
                }
                (EdlKind::Trusted, Direction::UserCheck) => {
                    out.push(LeakTuple::new(&f.name, idx, Pattern::P2));
                }
                (EdlKind::Trusted, Direction::In) => {
                    let has_ptr_field = iface
                        .struct_for_type(&p.base_type)
                        .is_some_and(|s| s.fields.iter().any(|fl| fl.is_pointer));
                    if has_ptr_field {
                        let mut t = LeakTuple::new(&f.name, idx, Pattern::P2);
                        t.via_struct_field = true;
                        out.push(t);
                    }
                }
                (EdlKind::Untrusted, Direction::In | Direction::InOut) => {
                    out.push(LeakTuple::new(&f.name, idx, Pattern::P3));
                }
                _ => {}
            }
        }
        if f.kind == EdlKind::Untrusted && f.returns_pointer {
            out.push(LeakTuple::new(&f.name, TupleIndex::Return, Pattern::P4));
        }
    }
    out
}

#[derive(Clone, Debug, PartialEq)]
enum Tok {
    Ident(String),
    Int(u64),
    Punct(char),
}

#[derive(Clone, Debug)]
struct Token {
    tok: Tok,
    line: usize,
    col: usize,
}

fn lex(text: &str) -> Result<Vec<Token>, EdlError> {
    let chars: Vec<char> = text.chars().collect();
    let mut out = Vec::new();
    let (mut i, mut line, mut col) = (0, 1, 1);
    let advance = |c: char, i: &mut usize, line: &mut usize, col: &mut usize| {
        *i += 1;
        if c == '\n' {
            *line += 1;
            *col = 1;
        } else {
            *col += 1;
        }
    };
    while i < chars.len() {
        let c = chars[i];
        if c.is_whitespace() {
            advance(c, &mut i, &mut line, &mut col);
            continue;
        }
        if c == '/' && chars.get(i + 1) == Some(&'/') {
            while i < chars.len() && chars[i] != '\n' {
                advance(chars[i], &mut i, &mut line, &mut col);
            }
            continue;
        }
        if c == '/' && chars.get(i + 1) == Some(&'*') {
            let (sl, sc) = (line, col);
            advance('/', &mut i, &mut line, &mut col);
            advance('*', &mut i, &mut line, &mut col);
            loop {
                if i >= chars.len() {
                    return Err(EdlError::Syntax {
                        line: sl,
                        col: sc,
                        msg: "unterminated comment".into(),
                    });
                }
                if chars[i] == '*' && chars.get(i + 1) == Some(&'/') {
                    advance('*', &mut i, &mut line, &mut col);
                    advance('/', &mut i, &mut line, &mut col);
                    break;
                }
                advance(chars[i], &mut i, &mut line, &mut col);
            }
            continue;
        }
        let (tl, tc) = (line, col);
        if c.is_ascii_alphabetic() || c == '_' {
            let mut s = String::new();
            while i < chars.len() && (chars[i].is_ascii_alphanumeric() || chars[i] == '_') {
                s.push(chars[i]);
                advance(chars[i], &mut i, &mut line, &mut col);
            }
            out.push(Token {
                tok: Tok::Ident(s),
                line: tl,
                col: tc,
            });
            continue;
        }
        if c.is_ascii_digit() {
            let mut s = String::new();
            while i < chars.len() && chars[i].is_ascii_alphanumeric() {
                s.push(chars[i]);
                advance(chars[i], &mut i, &mut line, &mut col);
            }
            let n = if let Some(hex) = s.strip_prefix("0x").or_else(|| s.strip_prefix("0X")) {
                u64::from_str_radix(hex, 16).ok()
            } else {
                s.parse().ok()
            };
            let n = n.ok_or_else(|| EdlError::Syntax {
                line: tl,
                col: tc,
                msg: format!("bad integer literal `{s}`"),
            })?;
            out.push(Token {
                tok: Tok::Int(n),
                line: tl,
                col: tc,
            });
            continue;
        }
        if "{}()[];,=*".contains(c) {
            out.push(Token {
                tok: Tok::Punct(c),
                line: tl,
                col: tc,
            });
            advance(c, &mut i, &mut line, &mut col);
            continue;
        }
        return Err(EdlError::Syntax {
            line: tl,
            col: tc,
            msg: format!("unexpected character `{c}`"),
        });
    }
    Ok(out)
}

const UNSUPPORTED_ATTRS: [&str; 4] = ["string", "count", "isptr", "readonly"];

struct Parser {
    toks: Vec<Token>,
    pos: usize,
    end: (usize, usize),
}

/// A declarator: type words, pointer depth, and the declared name.
struct Declarator {
    words: Vec<String>,
    stars: usize,
    name: String,
}

impl Declarator {
    fn full_type(&self) -> String {
        format!("{}{}", self.words.join(" "), "*".repeat(self.stars))
    }

    fn pointee_type(&self) -> String {
        format!("{}{}", self.words.join(" "), "*".repeat(self.stars.saturating_sub(1)))
    }
}

impl Parser {
    fn peek(&self) -> Option<&Tok> {
        self.toks.get(self.pos).map(|t| &t.tok)
    }

    fn pos_of(&self) -> (usize, usize) {
        self.toks
            .get(self.pos)
            .map(|t| (t.line, t.col))
            .unwrap_or(self.end)
    }

    fn err(&self, msg: impl Into<String>) -> EdlError {
        let (line, col) = self.pos_of();
        EdlError::Syntax {
            line,
            col,
            msg: msg.into(),
        }
    }

    fn is_punct(&self, c: char) -> bool {
        self.peek() == Some(&Tok::Punct(c))
    }

    fn eat_punct(&mut self, c: char) -> bool {
        if self.is_punct(c) {
            self.pos += 1;
            true
        } else {
            false
        }
    }

    fn expect_punct(&mut self, c: char) -> Result<(), EdlError> {
        if self.eat_punct(c) {
            Ok(())
        } else {
            Err(self.err(format!("expected `{c}`")))
        }
    }

    fn is_kw(&self, kw: &str) -> bool {
        matches!(self.peek(), Some(Tok::Ident(s)) if s == kw)
    }

    fn ident(&mut self, what: &str) -> Result<String, EdlError> {
        match self.peek() {
            Some(Tok::Ident(s)) => {
                let s = s.clone();
                self.pos += 1;
                Ok(s)
            }
            _ => Err(self.err(format!("expected {what}"))),
        }
    }

    /// Reads `type-words stars* name`, stopping before any of `stops`.
    fn declarator(&mut self, stops: &[char]) -> Result<Declarator, EdlError> {
        let mut words = Vec::new();
        let mut stars = 0;
        let mut name: Option<String> = None;
        loop {
            match self.peek() {
                Some(Tok::Ident(s)) => {
                    if let Some(prev) = name.take() {
                        if stars > 0 {
                            return Err(self.err("unexpected identifier after `*`"));
                        }
                        words.push(prev);
                    }
                    name = Some(s.clone());
                    self.pos += 1;
                }
                Some(Tok::Punct('*')) => {
                    match name.take() {
                        Some(prev) => words.push(prev),
                        None if words.is_empty() => return Err(self.err("expected a type")),
                        None => {}
                    }
                    stars += 1;
                    self.pos += 1;
                }
                Some(Tok::Punct(c)) if stops.contains(c) => break,
                _ => return Err(self.err("malformed declaration")),
            }
        }
        let name = name.ok_or_else(|| self.err("expected a name"))?;
        if words.is_empty() {
            return Err(self.err(format!("missing type for `{name}`")));
        }
        if words.last().is_some_and(|w| w == "struct") {
            return Err(self.err("`struct` must be followed by a type name"));
        }
        Ok(Declarator { words, stars, name })
    }

    fn attributes(&mut self) -> Result<(Vec<(String, usize, usize)>, Option<RawSize>), EdlError> {
        let mut dirs = Vec::new();
        let mut size = None;
        if !self.eat_punct('[') {
            return Ok((dirs, size));
        }
        loop {
            let (line, col) = self.pos_of();
            let name = self.ident("an attribute")?;
            match name.as_str() {
                "in" | "out" | "user_check" => dirs.push((name, line, col)),
                "size" => {
                    self.expect_punct('=')?;
                    size = Some(match self.peek().cloned() {
                        Some(Tok::Ident(s)) => RawSize::Name(s),
                        Some(Tok::Int(n)) => RawSize::Int(n),
                        _ => return Err(self.err("expected a parameter name or integer after `size=`")),
                    });
                    self.pos += 1;
                }
                n if UNSUPPORTED_ATTRS.contains(&n) => {
                    return Err(EdlError::UnsupportedAttribute { line, col, name });
                }
                _ => {
                    return Err(EdlError::Syntax {
                        line,
                        col,
                        msg: format!("unknown attribute `{name}`"),
                    })
                }
            }
            if self.eat_punct(']') {
                break;
            }
            self.expect_punct(',')?;
        }
        Ok((dirs, size))
    }

    fn function(&mut self, kind: EdlKind) -> Result<EdlFunction, EdlError> {
        if self.is_kw("public") {
            self.pos += 1;
        }
        let decl = self.declarator(&['('])?;
        self.expect_punct('(')?;
        let mut raw = Vec::new();
        if !self.eat_punct(')') {
            // `void f(void)`
            if self.is_kw("void")
                && self.toks.get(self.pos + 1).map(|t| &t.tok) == Some(&Tok::Punct(')'))
            {
                self.pos += 2;
            } else {
                loop {
                    let (dirs, size) = self.attributes()?;
                    let d = self.declarator(&[',', ')'])?;
                    raw.push((dirs, size, d));
                    if self.eat_punct(')') {
                        break;
                    }
                    self.expect_punct(',')?;
                }
            }
        }
        self.expect_punct(';')?;

        let fname = decl.name.clone();
        let mut seen = HashSet::new();
        for (_, _, d) in &raw {
            if !seen.insert(d.name.clone()) {
                return Err(EdlError::DuplicateParam {
                    func: fname,
                    name: d.name.clone(),
                });
            }
        }
        let positions: HashMap<String, usize> =
            raw.iter().enumerate().map(|(i, (_, _, d))| (d.name.clone(), i)).collect();
        let mut params = Vec::new();
        for (i, (dirs, size, d)) in raw.into_iter().enumerate() {
            let has = |n: &str| dirs.iter().any(|(a, _, _)| a == n);
            let direction = match (has("in"), has("out"), has("user_check")) {
                (false, false, false) => Direction::None,
                (_, _, true) if has("in") || has("out") => {
                    return Err(EdlError::ConflictingDirection {
                        func: fname,
                        param: d.name,
                    })
                }
                (false, false, true) => Direction::UserCheck,
                (true, false, _) => Direction::In,
                (false, true, _) => Direction::Out,
                (true, true, _) => Direction::InOut,
            };
            let is_pointer = d.stars > 0;
            if direction != Direction::None && !is_pointer {
                return Err(EdlError::DirectionOnNonPointer {
                    func: fname,
                    param: d.name,
                });
            }
            let size_expr = match size {
                None => None,
                Some(RawSize::Int(n)) => Some(SizeExpr::Int(n)),
                Some(RawSize::Name(n)) => match positions.get(&n) {
                    Some(&index) => Some(SizeExpr::Param { name: n, index }),
                    None => {
                        return Err(EdlError::UnresolvedSize {
                            func: fname,
                            param: d.name,
                            name: n,
                        })
                    }
                },
            };
            params.push(EdlParam {
                base_type: if is_pointer { d.pointee_type() } else { d.full_type() },
                name: d.name,
                is_pointer,
                direction,
                size_expr,
                position: i,
            });
        }
        Ok(EdlFunction {
            name: fname,
            kind,
            return_type: decl.full_type(),
            returns_pointer: decl.stars > 0,
            params,
        })
    }

    fn struct_def(&mut self) -> Result<EdlStructDef, EdlError> {
        self.pos += 1; // `struct`
        let name = self.ident("a struct name")?;
        self.expect_punct('{')?;
        let mut fields: Vec<EdlField> = Vec::new();
        while !self.eat_punct('}') {
            let d = self.declarator(&[';'])?;
            self.expect_punct(';')?;
            if fields.iter().any(|f| f.name == d.name) {
                return Err(EdlError::DuplicateField {
                    strct: name,
                    field: d.name,
                });
            }
            fields.push(EdlField {
                base_type: if d.stars > 0 { d.pointee_type() } else { d.full_type() },
                is_pointer: d.stars > 0,
                name: d.name,
            });
        }
        self.eat_punct(';');
        Ok(EdlStructDef { name, fields })
    }

    /// Parses blocks and struct definitions until `}` (when nested) or EOF.
    fn items(&mut self, iface: &mut EdlInterface, nested: bool) -> Result<(), EdlError> {
        loop {
            if self.peek().is_none() {
                if nested {
                    return Err(self.err("missing `}` closing `enclave`"));
                }
                return Ok(());
            }
            if nested && self.eat_punct('}') {
                self.eat_punct(';');
                return Ok(());
            }
            let kind = if self.is_kw("trusted") {
                EdlKind::Trusted
            } else if self.is_kw("untrusted") {
                EdlKind::Untrusted
            } else if self.is_kw("struct") {
                let s = self.struct_def()?;
                if iface.structs.iter().any(|t| t.name == s.name) {
                    return Err(EdlError::DuplicateStruct(s.name));
                }
                iface.structs.push(s);
                continue;
            } else if self.is_kw("enclave") && !nested {
                self.pos += 1;
                self.expect_punct('{')?;
                self.items(iface, true)?;
                continue;
            } else {
                return Err(self.err("expected `trusted`, `untrusted` or `struct`"));
            };
            self.pos += 1;
            self.expect_punct('{')?;
            while !self.eat_punct('}') {
                if self.peek().is_none() {
                    return Err(self.err("missing `}`"));
                }
                let f = self.function(kind)?;
                if iface.function(&f.name).is_some() {
                    return Err(EdlError::DuplicateFunction(f.name));
                }
                iface.functions.push(f);
            }
            self.eat_punct(';');
        }
    }
}

enum RawSize {
    Name(String),
    Int(u64),
}

/// Parses an EDL source.
pub fn parse_edl(text: &str) -> Result<EdlInterface, EdlError> {
    let toks = lex(text)?;
    let lines = text.lines().count().max(1);
    let last_col = text.lines().last().map(|l| l.chars().count() + 1).unwrap_or(1);
    let mut p = Parser {
        toks,
        pos: 0,
        end: (lines, last_col),
    };
    let mut iface = EdlInterface::default();
    p.items(&mut iface, false)?;
    Ok(iface)
}

impl fmt::Display for EdlParam {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        let mut attrs: Vec<String> = Vec::new();
        match self.direction {
            Direction::None => {}
            Direction::In => attrs.push("in".into()),
            Direction::Out => attrs.push("out".into()),
            Direction::InOut => attrs.extend(["in".into(), "out".into()]),
            Direction::UserCheck => attrs.push("user_check".into()),
        }
        match &self.size_expr {
            Some(SizeExpr::Param { name, .. }) => attrs.push(format!("size={name}")),
            Some(SizeExpr::Int(n)) => attrs.push(format!("size={n}")),
            None => {}
        }
        if !attrs.is_empty() {
            write!(f, "[{}] ", attrs.join(", "))?;
        }
        let star = if self.is_pointer { "*" } else { "" };
        write!(f, "{}{} {}", self.base_type, star, self.name)
    }
}

impl fmt::Display for EdlFunction {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        if self.kind == EdlKind::Trusted {
            f.write_str("public ")?;
        }
        write!(f, "{} {}(", self.return_type, self.name)?;
        for (i, p) in self.params.iter().enumerate() {
            if i > 0 {
                f.write_str(", ")?;
            }
            write!(f, "{p}")?;
        }
        f.write_str(");")
    }
}

impl fmt::Display for EdlInterface {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        for s in &self.structs {
            writeln!(f, "struct {} {{", s.name)?;
            for fl in &s.fields {
                let star = if fl.is_pointer { "*" } else { "" };
                writeln!(f, "    {}{} {};", fl.base_type, star, fl.name)?;
            }
            writeln!(f, "}};")?;
        }
        for (kind, kw) in [(EdlKind::Trusted, "trusted"), (EdlKind::Untrusted, "untrusted")] {
            let fs: Vec<_> = self.functions.iter().filter(|x| x.kind == kind).collect();
            if fs.is_empty() {
                continue;
            }
            writeln!(f, "{kw} {{")?;
            for func in fs {
                writeln!(f, "    {func}")?;
            }
            writeln!(f, "}};")?;
        }
        Ok(())
    }
}

#[cfg(test)]
mod tests {
    use super::*;
    use proptest::prelude::*;

    fn tuples(src: &str) -> Vec<String> {
        extract_key_parameters(&parse_edl(src).unwrap())
            .iter()
            .map(|t| t.to_string())
            .collect()
    }

    #[test]
    fn example_interface_file() {
        let iface = parse_edl(
            "trusted { public void foo([in, size=10] void* in_ptr, [out, size=10] void* out_ptr, \
             [user_check] void* uc_ptr); }; untrusted { void* bar(); };",
        )
        .unwrap();
        assert_eq!(iface.functions.len(), 2);
        let foo = &iface.functions[0];
        assert_eq!(foo.kind, EdlKind::Trusted);
        let dirs: Vec<_> = foo.params.iter().map(|p| p.direction).collect();
        assert_eq!(dirs, vec![Direction::In, Direction::Out, Direction::UserCheck]);
        assert!(foo.params.iter().all(|p| p.is_pointer && p.base_type == "void"));
        assert_eq!(foo.params[0].size_expr, Some(SizeExpr::Int(10)));
        let bar = &iface.functions[1];
        assert_eq!(bar.kind, EdlKind::Untrusted);
        assert!(bar.returns_pointer);
    }

    #[test]
    fn empty_trusted_block() {
        assert!(parse_edl("trusted { };").unwrap().functions.is_empty());
    }

    #[test]
    fn out_pointer_without_size_is_accepted() {
        let iface = parse_edl("trusted { public void f([out] int* p); };").unwrap();
        assert_eq!(iface.functions[0].params[0].size_expr, None);
    }

    #[test]
    fn user_check_then_out_gives_two_tuples() {
        let src = "trusted { public void ecall_func([user_check] void* uc_ptr, \
                   [out, size=size] void* out_ptr, int size); };";
        assert_eq!(tuples(src), vec!["(ecall_func,0,P2)", "(ecall_func,1,P1)"]);
        let iface = parse_edl(src).unwrap();
        assert_eq!(
            iface.functions[0].params[1].size_expr,
            Some(SizeExpr::Param {
                name: "size".into(),
                index: 2
            })
        );
    }

    #[test]
    fn pointer_returning_ocall() {
        assert_eq!(tuples("untrusted { void* bar(); };"), vec!["(bar,RETURN,P4)"]);
    }

    #[test]
    fn value_params_give_no_tuples() {
        assert!(tuples("trusted { public int f(int x); };").is_empty());
    }

    #[test]
    fn in_out_classification() {
        let src = "trusted { public void e([in, out, size=4] char* b); };\n\
                   untrusted { void o([in, out, size=4] char* b, [in] char* c, [out] char* d); };";
        assert_eq!(tuples(src), vec!["(e,0,P1)", "(o,0,P3)", "(o,1,P3)"]);
    }

    #[test]
    fn in_struct_with_pointer_fields() {
        let src = "struct req { uint8_t* reply; size_t len; };\n\
                   struct plain { int a; };\n\
                   trusted { public void e([in] struct req* r, [in] struct plain* p); };";
        let iface = parse_edl(src).unwrap();
        let t = extract_key_parameters(&iface);
        assert_eq!(t.len(), 1);
        assert_eq!(t[0].to_string(), "(e,0,P2)");
        assert!(t[0].via_struct_field);
        assert_eq!(iface.structs[0].fields[0].base_type, "uint8_t");
    }

    #[test]
    fn comments_and_enclave_wrapper() {
        let src = "/* header\n comment */\nenclave {\n  // ecalls\n  trusted {\n    public void f([user_check] const unsigned char* k);\n  };\n};\n";
        let iface = parse_edl(src).unwrap();
        assert_eq!(iface.functions[0].params[0].base_type, "const unsigned char");
    }

    #[test]
    fn errors() {
        assert!(matches!(
            parse_edl("trusted { public void f([in, size=n] char* p); };"),
            Err(EdlError::UnresolvedSize { .. })
        ));
        assert!(matches!(
            parse_edl("trusted { public void f(); public void f(); };"),
            Err(EdlError::DuplicateFunction(_))
        ));
        assert!(matches!(
            parse_edl("trusted { public void f(int a, int a); };"),
            Err(EdlError::DuplicateParam { .. })
        ));
        assert!(matches!(
            parse_edl("trusted { public void f([in] int a); };"),
            Err(EdlError::DirectionOnNonPointer { .. })
        ));
        assert!(matches!(
            parse_edl("trusted { public void f([in, user_check] char* a); };"),
            Err(EdlError::ConflictingDirection { .. })
        ));
        assert_eq!(
            parse_edl("trusted {\n  public void f([in, string] char* s);\n};"),
            Err(EdlError::UnsupportedAttribute {
                line: 2,
                col: 22,
                name: "string".into()
            })
        );
        match parse_edl("trusted {\n  public void f(int x)\n};") {
            Err(EdlError::Syntax { line, col, .. }) => assert_eq!((line, col), (3, 1)),
            other => panic!("{other:?}"),
        }
    }

    #[test]
    fn void_parameter_list() {
        let iface = parse_edl("untrusted { int o(void); };").unwrap();
        assert!(iface.functions[0].params.is_empty());
    }

    fn arb_ident() -> impl Strategy<Value = String> {
        "[a-z][a-z0-9_]{0,6}".prop_filter("keyword", |s| {
            ![
                "in", "out", "size", "struct", "public", "trusted", "untrusted", "enclave",
                "user_check", "string", "count", "isptr", "readonly", "void", "const", "int",
                "char",
            ]
            .contains(&s.as_str())
        })
    }

    fn arb_base() -> impl Strategy<Value = String> {
        prop_oneof![
            Just("void".to_string()),
            Just("int".to_string()),
            Just("const char".to_string()),
            Just("unsigned char".to_string()),
            Just("char*".to_string()),
            Just("struct s0".to_string()),
        ]
    }

    fn arb_function(kind: EdlKind) -> impl Strategy<Value = EdlFunction> {
        (
            arb_ident(),
            prop::collection::vec((arb_ident(), arb_base(), any::<bool>(), 0u8..5, 0u8..3), 0..5),
            any::<bool>(),
        )
            .prop_map(move |(name, raw, ret_ptr)| {
                let mut params = Vec::new();
                let mut seen = HashSet::new();
                for (pname, base, is_ptr, dir, size) in raw {
                    if !seen.insert(pname.clone()) {
                        continue;
                    }
                    let direction = if is_ptr {
                        [Direction::None, Direction::In, Direction::Out, Direction::InOut, Direction::UserCheck]
                            [dir as usize]
                    } else {
                        Direction::None
                    };
                    let position = params.len();
                    let size_expr = match size {
                        1 => Some(SizeExpr::Int(position as u64 + 1)),
                        2 if position > 0 => Some(SizeExpr::Param {
                            name: params.iter().map(|p: &EdlParam| p.name.clone()).next().unwrap(),
                            index: 0,
                        }),
                        _ => None,
                    };
                    let base = if !is_ptr && base.ends_with('*') { "int".to_string() } else { base };
                    params.push(EdlParam {
                        name: pname,
                        base_type: base,
                        is_pointer: is_ptr,
                        direction,
                        size_expr,
                        position,
                    });
                }
                EdlFunction {
                    name,
                    kind,
                    return_type: if ret_ptr { "void*".into() } else { "int".into() },
                    returns_pointer: ret_ptr,
                    params,
                }
            })
    }

    fn arb_interface() -> impl Strategy<Value = EdlInterface> {
        (
            prop::collection::vec(arb_function(EdlKind::Trusted), 0..4),
            prop::collection::vec(arb_function(EdlKind::Untrusted), 0..4),
            any::<bool>(),
        )
            .prop_map(|(t, u, with_struct)| {
                let mut seen = HashSet::new();
                let functions = t
                    .into_iter()
                    .chain(u)
                    .filter(|f| seen.insert(f.name.clone()))
                    .collect();
                let structs = if with_struct {
                    vec![EdlStructDef {
                        name: "s0".into(),
                        fields: vec![
                            EdlField {
                                name: "p".into(),
                                base_type: "uint8_t".into(),
                                is_pointer: true,
                            },
                            EdlField {
                                name: "n".into(),
                                base_type: "size_t".into(),
                                is_pointer: false,
                            },
                        ],
                    }]
                } else {
                    Vec::new()
                };
                EdlInterface { functions, structs }
            })
    }

    proptest! {
        #[test]
        fn pretty_print_round_trips(iface in arb_interface()) {
            let text = iface.to_string();
            let reparsed = parse_edl(&text).unwrap();
            prop_assert_eq!(&reparsed, &iface);
            prop_assert_eq!(reparsed.to_string(), text);
        }

        #[test]
        fn one_tuple_per_leak_channel(iface in arb_interface()) {
            let tuples = extract_key_parameters(&iface);
            let mut expected = 0;
            for f in &iface.functions {
                for p in f.params.iter().filter(|p| p.is_pointer) {
                    let counts = match (f.kind, p.direction) {
                        (EdlKind::Trusted, Direction::Out | Direction::InOut | Direction::UserCheck) => true,
                        (EdlKind::Trusted, Direction::In) => iface
                            .struct_for_type(&p.base_type)
                            .is_some_and(|s| s.fields.iter().any(|x| x.is_pointer)),
                        (EdlKind::Untrusted, Direction::In | Direction::InOut) => true,
                        _ => false,
                    };
                    if counts {
                        expected += 1;
                        prop_assert_eq!(
                            tuples.iter().filter(|t| t.funcname == f.name
                                && t.index == TupleIndex::Param(p.position)).count(),
                            1
                        );
                    }
                }
                if f.kind == EdlKind::Untrusted && f.returns_pointer {
                    expected += 1;
                }
            }
            prop_assert_eq!(tuples.len(), expected);
            for t in &tuples {
                prop_assert_eq!(t.pattern == Pattern::P4, t.index == TupleIndex::Return);
                prop_assert!(t.pattern != Pattern::P5);
            }
            // Declaration order.
            let order: Vec<_> = tuples.iter()
                .map(|t| iface.functions.iter().position(|f| f.name == t.funcname).unwrap())
                .collect();
            prop_assert!(order.windows(2).all(|w| w[0] <= w[1]));
        }
    }
}
