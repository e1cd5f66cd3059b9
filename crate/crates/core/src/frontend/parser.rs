use std::collections::{BTreeMap, BTreeSet};

use num_complex::Complex64;

use super::lexer::{lex, Tok, Token};
use super::{
    ChannelDecl, CheckDecl, ConfigDecl, GateDecl, ObservableDecl, ParamDecl, Pos, ProcDecl, SourceError, SourceFile,
};
use crate::ast::{BoolExpr, Channel, ChannelKind, CmpOp, Expr, Process, Relabeling};
use crate::bisim::Mode;
use crate::linalg::{qubit_count, states, Matrix, Observable, C64};
use crate::lts::Env;

/// Words that cannot name channels or variables inside processes.
pub const KEYWORDS: [&str; 10] = ["nil", "qbit", "qc", "if", "then", "true", "false", "and", "or", "not"];

/// Reserved inside numeric and matrix expressions.
const VALUE_WORDS: [&str; 5] = ["i", "pi", "sqrt", "exp", "proj"];

#[derive(Clone, Debug)]
enum Value {
    Scalar(C64),
    Mat(Matrix),
}

pub(super) struct Parser {
    toks: Vec<Token>,
    pos: usize,
    /// Require declarations for channels, gates and observables.
    strict: bool,
    chans: BTreeSet<Channel>,
    gates: BTreeMap<String, Matrix>,
    observables: BTreeMap<String, usize>,
    params: BTreeMap<String, f64>,
    overrides: BTreeMap<String, f64>,
    procs: BTreeMap<String, Process>,
    bound: Vec<String>,
}

type R<T> = Result<T, SourceError>;

impl Parser {
    pub(super) fn new(text: &str, strict: bool, overrides: BTreeMap<String, f64>) -> R<Self> {
        let env = Env::standard();
        Ok(Parser {
            toks: lex(text)?,
            pos: 0,
            strict,
            chans: BTreeSet::new(),
            gates: env.gates,
            observables: env.observables.iter().map(|(k, o)| (k.clone(), o.arity())).collect(),
            params: BTreeMap::new(),
            overrides,
            procs: BTreeMap::new(),
            bound: Vec::new(),
        })
    }

    fn peek(&self) -> &Tok {
        &self.toks[self.pos].tok
    }

    fn peek_at(&self, k: usize) -> &Tok {
        &self.toks[(self.pos + k).min(self.toks.len() - 1)].tok
    }

    fn here(&self) -> Pos {
        let t = &self.toks[self.pos];
        Pos { line: t.line, col: t.col }
    }

    fn bump(&mut self) -> Token {
        let t = self.toks[self.pos].clone();
        if self.pos + 1 < self.toks.len() {
            self.pos += 1;
        }
        t
    }

    fn error_at(pos: Pos, msg: impl Into<String>) -> SourceError {
        SourceError::at(pos.line, pos.col, msg)
    }

    fn expected(&self, what: &str) -> SourceError {
        Self::error_at(self.here(), format!("expected {what}, found {}", self.peek()))
    }

    fn is_sym(&self, s: &str) -> bool {
        matches!(self.peek(), Tok::Sym(t) if *t == s)
    }

    fn is_kw(&self, kw: &str) -> bool {
        matches!(self.peek(), Tok::Ident(t) if t == kw)
    }

    fn eat_sym(&mut self, s: &str) -> bool {
        if self.is_sym(s) {
            self.bump();
            true
        } else {
            false
        }
    }

    fn eat_kw(&mut self, kw: &str) -> bool {
        if self.is_kw(kw) {
            self.bump();
            true
        } else {
            false
        }
    }

    fn expect_sym(&mut self, s: &str) -> R<()> {
        if self.eat_sym(s) {
            Ok(())
        } else {
            Err(self.expected(&format!("`{s}`")))
        }
    }

    fn expect_kw(&mut self, kw: &str) -> R<()> {
        if self.eat_kw(kw) {
            Ok(())
        } else {
            Err(self.expected(&format!("`{kw}`")))
        }
    }

    /// A name usable for a channel or variable.
    fn name(&mut self, what: &str) -> R<(String, Pos)> {
        let pos = self.here();
        match self.peek().clone() {
            Tok::Ident(s) if !KEYWORDS.contains(&s.as_str()) => {
                self.bump();
                Ok((s, pos))
            }
            _ => Err(self.expected(what)),
        }
    }

    fn number(&mut self) -> R<f64> {
        let neg = self.eat_sym("-");
        match *self.peek() {
            Tok::Num(v) => {
                self.bump();
                Ok(if neg { -v } else { v })
            }
            _ => Err(self.expected("a number")),
        }
    }

    // ---- files ----

    pub(super) fn file(&mut self) -> R<SourceFile> {
        let mut file = SourceFile::default();
        if let Tok::Header(h) = self.peek().clone() {
            let pos = self.here();
            if h != "qccs" {
                return Err(Self::error_at(pos, format!("unknown header `#{h}`, expected `#qccs 1`")));
            }
            self.bump();
            let v = self.number()?;
            if v != 1.0 {
                return Err(Self::error_at(pos, format!("unsupported format version {v}, expected 1")));
            }
            file.version = Some(1);
        }
        while *self.peek() != Tok::Eof {
            self.declaration(&mut file)?;
        }
        Ok(file)
    }

    fn fresh_decl(&self, taken: bool, name: &str, pos: Pos) -> R<()> {
        if taken {
            Err(Self::error_at(pos, format!("`{name}` is already declared")))
        } else {
            Ok(())
        }
    }

    fn declaration(&mut self, file: &mut SourceFile) -> R<()> {
        let pos = self.here();
        let kw = match self.peek() {
            Tok::Ident(s) => s.clone(),
            _ => return Err(self.expected("a declaration")),
        };
        match kw.as_str() {
            "cchan" | "qchan" => {
                self.bump();
                let (name, npos) = self.name("a channel name")?;
                let kind = if kw == "cchan" { ChannelKind::Classical } else { ChannelKind::Quantum };
                let chan = Channel { kind, name: name.clone() };
                self.fresh_decl(self.chans.contains(&chan), &format!("{chan}"), npos)?;
                let mut domain = None;
                if kind == ChannelKind::Classical && self.eat_sym("{") {
                    let mut vals = Vec::new();
                    if !self.is_sym("}") {
                        loop {
                            vals.push(self.number()?);
                            if !self.eat_sym(",") {
                                break;
                            }
                        }
                    }
                    self.expect_sym("}")?;
                    domain = Some(vals);
                }
                self.expect_sym(";")?;
                self.chans.insert(chan.clone());
                file.channels.push(ChannelDecl { chan, domain, pos });
            }
            "gate" => {
                self.bump();
                let (name, npos) = self.decl_name("a gate name")?;
                self.expect_sym("=")?;
                let vpos = self.here();
                let m = match self.value()? {
                    Value::Mat(m) if m.is_square() && qubit_count(m.rows()).is_ok() => m,
                    _ => return Err(Self::error_at(vpos, "a gate must be a square matrix of size 2^k")),
                };
                self.expect_sym(";")?;
                self.gates.insert(name.clone(), m.clone());
                file.gates.push(GateDecl { name, matrix: m, pos: npos });
            }
            "measure" => {
                self.bump();
                let (name, npos) = self.decl_name("an observable name")?;
                self.expect_sym("=")?;
                self.expect_sym("{")?;
                let mut outcomes = Vec::new();
                loop {
                    let v = self.number()?;
                    self.expect_sym(":")?;
                    let vpos = self.here();
                    match self.value()? {
                        Value::Mat(m) if m.is_square() => outcomes.push((v, m)),
                        _ => return Err(Self::error_at(vpos, "expected a projector matrix")),
                    }
                    if !self.eat_sym(",") {
                        break;
                    }
                }
                self.expect_sym("}")?;
                self.expect_sym(";")?;
                let arity = qubit_count(outcomes[0].1.rows())
                    .map_err(|_| Self::error_at(npos, "projector size is not a power of two"))?;
                self.observables.insert(name.clone(), arity);
                file.observables.push(ObservableDecl { name, observable: Observable { outcomes }, pos: npos });
            }
            "param" => {
                self.bump();
                let (name, npos) = self.decl_name("a parameter name")?;
                self.expect_sym("=")?;
                let vpos = self.here();
                let v = match self.value()? {
                    Value::Scalar(z) if z.im.abs() < 1e-12 => z.re,
                    _ => return Err(Self::error_at(vpos, "a parameter must be a real number")),
                };
                self.expect_sym(";")?;
                let v = self.overrides.get(&name).copied().unwrap_or(v);
                self.params.insert(name.clone(), v);
                file.params.push(ParamDecl { name, value: v, pos: npos });
            }
            "proc" => {
                self.bump();
                let (name, npos) = self.decl_name("a process name")?;
                self.expect_sym("=")?;
                let p = self.process()?;
                self.expect_sym(";")?;
                self.procs.insert(name.clone(), p.clone());
                file.procs.push(ProcDecl { name, process: p, pos: npos });
            }
            "config" => {
                self.bump();
                let (name, npos) = self.name("a configuration name")?;
                self.fresh_decl(file.configs.iter().any(|c| c.name == name), &name, npos)?;
                self.expect_sym("=")?;
                self.expect_sym("<")?;
                let process = self.process()?;
                let mut bindings = Vec::new();
                if self.eat_sym(";") && !self.is_sym(">") {
                    loop {
                        let mut vars = vec![self.name("a qubit name")?.0];
                        while self.eat_sym(",") {
                            vars.push(self.name("a qubit name")?.0);
                        }
                        self.expect_sym("=")?;
                        let vpos = self.here();
                        let m = match self.value()? {
                            Value::Mat(m) => m,
                            Value::Scalar(_) => return Err(Self::error_at(vpos, "expected a ket or a density matrix")),
                        };
                        bindings.push((vars, m, vpos));
                        if !self.eat_sym(";") {
                            break;
                        }
                    }
                }
                self.expect_sym(">")?;
                self.expect_sym(";")?;
                file.configs.push(ConfigDecl { name, process, bindings, pos: npos });
            }
            "check" => {
                self.bump();
                let mpos = self.here();
                let (m, _) = self.name("strong, weak or eq")?;
                let mode: Mode = m.parse().map_err(|e: String| Self::error_at(mpos, e))?;
                let (left, _) = self.name("a configuration name")?;
                let (right, _) = self.name("a configuration name")?;
                self.expect_sym(";")?;
                file.checks.push(CheckDecl { mode, left, right, pos });
            }
            _ => {
                return Err(Self::error_at(
                    pos,
                    format!("expected a declaration (cchan, qchan, gate, measure, param, proc, config or check), found `{kw}`"),
                ))
            }
        }
        Ok(())
    }

    /// Name for a gate, observable, parameter or process; these share one
    /// namespace.
    fn decl_name(&mut self, what: &str) -> R<(String, Pos)> {
        let (name, pos) = self.name(what)?;
        if VALUE_WORDS.contains(&name.as_str()) {
            return Err(Self::error_at(pos, format!("`{name}` is reserved")));
        }
        let taken = self.gates.contains_key(&name)
            || self.observables.contains_key(&name)
            || self.params.contains_key(&name)
            || self.procs.contains_key(&name);
        self.fresh_decl(taken, &name, pos)?;
        Ok((name, pos))
    }

    // ---- processes ----

    pub(super) fn process_eof(&mut self) -> R<Process> {
        let p = self.process()?;
        if *self.peek() != Tok::Eof {
            return Err(self.expected("end of input"));
        }
        Ok(p)
    }

    fn process(&mut self) -> R<Process> {
        let mut p = self.parallel()?;
        while self.eat_sym("+") {
            let q = self.parallel()?;
            p = Process::Sum(Box::new(p), Box::new(q));
        }
        Ok(p)
    }

    fn parallel(&mut self) -> R<Process> {
        let mut p = self.postfix()?;
        while self.eat_sym("||") {
            let q = self.postfix()?;
            p = Process::Parallel(Box::new(p), Box::new(q));
        }
        Ok(p)
    }

    fn postfix(&mut self) -> R<Process> {
        let mut p = self.primary()?;
        loop {
            if self.eat_sym("[") {
                let braced = self.eat_sym("{");
                let mut pairs = Vec::new();
                let pos = self.here();
                let close = if braced { "}" } else { "]" };
                if !self.is_sym(close) {
                    loop {
                        let from = self.channel_ref()?;
                        self.expect_sym("->")?;
                        let to = self.channel_ref()?;
                        pairs.push((from, to));
                        if !self.eat_sym(",") {
                            break;
                        }
                    }
                }
                if braced {
                    self.expect_sym("}")?;
                }
                self.expect_sym("]")?;
                let relabeling = Relabeling::new(pairs).map_err(|e| Self::error_at(pos, format!("kind mismatch: {e}")))?;
                p = Process::Relabel { body: Box::new(p), relabeling };
            } else if self.eat_sym("\\") {
                self.expect_sym("{")?;
                let mut chans = BTreeSet::new();
                if !self.is_sym("}") {
                    loop {
                        chans.insert(self.channel_ref()?);
                        if !self.eat_sym(",") {
                            break;
                        }
                    }
                }
                self.expect_sym("}")?;
                p = Process::Restrict { body: Box::new(p), chans };
            } else {
                return Ok(p);
            }
        }
    }

    fn channel_ref(&mut self) -> R<Channel> {
        let kind = if self.eat_kw("qc") { ChannelKind::Quantum } else { ChannelKind::Classical };
        let (name, pos) = self.name("a channel name")?;
        self.check_channel(kind, &name, pos)?;
        Ok(Channel { kind, name })
    }

    fn check_channel(&self, kind: ChannelKind, name: &str, pos: Pos) -> R<()> {
        if !self.strict {
            return Ok(());
        }
        let chan = Channel { kind, name: name.to_string() };
        if self.chans.contains(&chan) {
            return Ok(());
        }
        let other = Channel {
            kind: match kind {
                ChannelKind::Classical => ChannelKind::Quantum,
                ChannelKind::Quantum => ChannelKind::Classical,
            },
            name: name.to_string(),
        };
        if self.chans.contains(&other) {
            let (is, used) = match kind {
                ChannelKind::Classical => ("quantum", "classical"),
                ChannelKind::Quantum => ("classical", "quantum"),
            };
            Err(Self::error_at(pos, format!("kind mismatch: `{name}` is a {is} channel but is used as a {used} one")))
        } else {
            Err(Self::error_at(pos, format!("unknown channel `{chan}`")))
        }
    }

    fn body(&mut self) -> R<Process> {
        self.expect_sym(".")?;
        self.primary()
    }

    fn with_bound<T>(&mut self, var: &str, f: impl FnOnce(&mut Self) -> R<T>) -> R<T> {
        self.bound.push(var.to_string());
        let r = f(self);
        self.bound.pop();
        r
    }

    fn primary(&mut self) -> R<Process> {
        let pos = self.here();
        match self.peek().clone() {
            Tok::Sym("(") => {
                // `(qbit q).P`
                if matches!(self.peek_at(1), Tok::Ident(k) if k == "qbit")
                    && matches!(self.peek_at(3), Tok::Sym(")"))
                    && matches!(self.peek_at(4), Tok::Sym("."))
                {
                    self.bump();
                    self.bump();
                    let (var, _) = self.name("a qubit name")?;
                    self.expect_sym(")")?;
                    let body = self.body()?;
                    return Ok(Process::QbitNew { var, body: Box::new(body) });
                }
                self.bump();
                let p = self.process()?;
                self.expect_sym(")")?;
                Ok(p)
            }
            Tok::Ident(kw) if kw == "nil" => {
                self.bump();
                Ok(Process::Nil)
            }
            Tok::Ident(kw) if kw == "if" => {
                self.bump();
                let cond = self.bool_expr()?;
                self.expect_kw("then")?;
                let body = self.primary()?;
                Ok(Process::If { cond, body: Box::new(body) })
            }
            Tok::Ident(kw) if kw == "qbit" => {
                self.bump();
                let (var, _) = self.name("a qubit name")?;
                let body = self.body()?;
                Ok(Process::QbitNew { var, body: Box::new(body) })
            }
            Tok::Ident(kw) if kw == "qc" => {
                self.bump();
                let (chan, cpos) = self.name("a channel name")?;
                self.check_channel(ChannelKind::Quantum, &chan, cpos)?;
                let input = if self.eat_sym("?") {
                    true
                } else if self.eat_sym("!") {
                    false
                } else {
                    return Err(self.expected("`?` or `!`"));
                };
                let (var, _) = self.name("a qubit name")?;
                let body = Box::new(self.body()?);
                Ok(if input { Process::QInput { chan, var, body } } else { Process::QOutput { chan, var, body } })
            }
            Tok::Ident(name) if !KEYWORDS.contains(&name.as_str()) => {
                self.bump();
                match self.peek() {
                    Tok::Sym("?") => {
                        self.check_channel(ChannelKind::Classical, &name, pos)?;
                        self.bump();
                        let (var, _) = self.name("a variable name")?;
                        let body = self.with_bound(&var, |p| p.body())?;
                        Ok(Process::CInput { chan: name, var, body: Box::new(body) })
                    }
                    Tok::Sym("!") => {
                        self.check_channel(ChannelKind::Classical, &name, pos)?;
                        self.bump();
                        let value = self.expr()?;
                        let body = self.body()?;
                        Ok(Process::COutput { chan: name, value, body: Box::new(body) })
                    }
                    Tok::Sym("[") if !self.procs.contains_key(&name) => self.operation(name, pos),
                    _ => match self.procs.get(&name) {
                        Some(p) => Ok(p.clone()),
                        None => Err(Self::error_at(pos, format!("unknown process `{name}`"))),
                    },
                }
            }
            _ => Err(self.expected("a process")),
        }
    }

    /// `U[q..].P`, `M[q..;x].P` or the `sigma_x[q].P` abbreviation.
    fn operation(&mut self, name: String, pos: Pos) -> R<Process> {
        self.expect_sym("[")?;
        let mut qvars = vec![self.name("a qubit name")?.0];
        while self.eat_sym(",") {
            qvars.push(self.name("a qubit name")?.0);
        }
        if self.eat_sym(";") {
            let (var, _) = self.name("a variable name")?;
            self.expect_sym("]")?;
            if self.strict {
                match self.observables.get(&name) {
                    None => return Err(Self::error_at(pos, format!("unknown observable `{name}`"))),
                    Some(&k) if k != qvars.len() => {
                        return Err(Self::error_at(
                            pos,
                            format!("observable `{name}` acts on {k} qubit(s) but is applied to {}", qvars.len()),
                        ))
                    }
                    _ => {}
                }
            }
            let body = self.with_bound(&var, |p| p.body())?;
            return Ok(Process::Measure { observable: name, qvars, var, body: Box::new(body) });
        }
        self.expect_sym("]")?;
        if let Some(x) = name.strip_prefix("sigma_") {
            if !self.gates.contains_key(&name) && self.bound.iter().any(|b| b == x) {
                let body = self.body()?;
                let x = x.to_string();
                let branch = |i: usize| Process::If {
                    cond: BoolExpr::Cmp(CmpOp::Eq, Expr::var(x.clone()), Expr::num(i as f64)),
                    body: Box::new(Process::Unitary { gate: format!("sigma_{i}"), qvars: qvars.clone(), body: Box::new(body.clone()) }),
                };
                let mut p = branch(0);
                for i in 1..4 {
                    p = Process::Sum(Box::new(p), Box::new(branch(i)));
                }
                return Ok(p);
            }
        }
        if self.strict {
            match self.gates.get(&name) {
                None => return Err(Self::error_at(pos, format!("unknown gate `{name}`"))),
                Some(m) if m.rows() != 1 << qvars.len() => {
                    let k = qubit_count(m.rows()).unwrap_or(0);
                    return Err(Self::error_at(
                        pos,
                        format!("gate `{name}` acts on {k} qubit(s) but is applied to {}", qvars.len()),
                    ));
                }
                _ => {}
            }
        }
        let body = self.body()?;
        Ok(Process::Unitary { gate: name, qvars, body: Box::new(body) })
    }

    // ---- classical expressions ----

    fn expr(&mut self) -> R<Expr> {
        let mut e = self.term()?;
        loop {
            if self.eat_sym("+") {
                e = Expr::Add(Box::new(e), Box::new(self.term()?));
            } else if self.is_sym("-") {
                self.bump();
                e = Expr::Sub(Box::new(e), Box::new(self.term()?));
            } else {
                return Ok(e);
            }
        }
    }

    fn term(&mut self) -> R<Expr> {
        let mut e = self.factor()?;
        while self.eat_sym("*") {
            e = Expr::Mul(Box::new(e), Box::new(self.factor()?));
        }
        Ok(e)
    }

    fn factor(&mut self) -> R<Expr> {
        let pos = self.here();
        match self.peek().clone() {
            Tok::Num(_) | Tok::Sym("-") => Ok(Expr::num(self.number()?)),
            Tok::Sym("(") => {
                self.bump();
                let e = self.expr()?;
                self.expect_sym(")")?;
                Ok(e)
            }
            Tok::Ident(x) if !KEYWORDS.contains(&x.as_str()) => {
                self.bump();
                if self.bound.contains(&x) {
                    Ok(Expr::Var(x))
                } else if let Some(&v) = self.params.get(&x) {
                    Ok(Expr::num(v))
                } else if !self.strict {
                    Ok(Expr::Var(x))
                } else {
                    Err(Self::error_at(pos, format!("unknown classical variable `{x}`")))
                }
            }
            _ => Err(self.expected("an expression")),
        }
    }

    fn bool_expr(&mut self) -> R<BoolExpr> {
        let mut b = self.bool_and()?;
        while self.eat_kw("or") {
            b = BoolExpr::Or(Box::new(b), Box::new(self.bool_and()?));
        }
        Ok(b)
    }

    fn bool_and(&mut self) -> R<BoolExpr> {
        let mut b = self.bool_not()?;
        while self.eat_kw("and") {
            b = BoolExpr::And(Box::new(b), Box::new(self.bool_not()?));
        }
        Ok(b)
    }

    fn bool_not(&mut self) -> R<BoolExpr> {
        if self.eat_kw("not") {
            return Ok(BoolExpr::Not(Box::new(self.bool_not()?)));
        }
        if self.eat_kw("true") {
            return Ok(BoolExpr::Const(true));
        }
        if self.eat_kw("false") {
            return Ok(BoolExpr::Const(false));
        }
        let start = self.pos;
        match self.comparison() {
            Ok(b) => Ok(b),
            Err(e) if self.toks[start].tok == Tok::Sym("(") => {
                self.pos = start;
                self.bump();
                let b = self.bool_expr().map_err(|_| e)?;
                self.expect_sym(")")?;
                Ok(b)
            }
            Err(e) => Err(e),
        }
    }

    fn comparison(&mut self) -> R<BoolExpr> {
        let l = self.expr()?;
        let op = if self.eat_sym("=") {
            CmpOp::Eq
        } else if self.eat_sym("<=") {
            CmpOp::Le
        } else if self.eat_sym("<") {
            CmpOp::Lt
        } else {
            return Err(self.expected("`=`, `<` or `<=`"));
        };
        let r = self.expr()?;
        Ok(BoolExpr::Cmp(op, l, r))
    }

    // ---- numeric and matrix values ----

    fn value(&mut self) -> R<Value> {
        let mut v = self.v_prod()?;
        loop {
            let pos = self.here();
            if self.eat_sym("+") {
                let w = self.v_prod()?;
                v = combine(v, w, pos, Op::Add)?;
            } else if self.eat_sym("-") {
                let w = self.v_prod()?;
                v = combine(v, w, pos, Op::Sub)?;
            } else {
                return Ok(v);
            }
        }
    }

    fn v_prod(&mut self) -> R<Value> {
        let mut v = self.v_unary()?;
        loop {
            let pos = self.here();
            if self.eat_sym("*") {
                let w = self.v_unary()?;
                v = combine(v, w, pos, Op::Mul)?;
            } else if self.eat_sym("/") {
                let w = self.v_unary()?;
                v = combine(v, w, pos, Op::Div)?;
            } else if matches!(self.peek(), Tok::Ket(_)) {
                let w = self.v_tensor()?;
                v = combine(v, w, pos, Op::Mul)?;
            } else {
                return Ok(v);
            }
        }
    }

    fn v_unary(&mut self) -> R<Value> {
        if self.eat_sym("-") {
            return Ok(match self.v_unary()? {
                Value::Scalar(z) => Value::Scalar(-z),
                Value::Mat(m) => Value::Mat(m.scale(Complex64::new(-1.0, 0.0))),
            });
        }
        self.v_tensor()
    }

    fn at_tensor(&self) -> bool {
        self.is_sym("⊗")
            || (self.is_sym("(") && matches!(self.peek_at(1), Tok::Ident(x) if x == "x") && matches!(self.peek_at(2), Tok::Sym(")")))
    }

    fn v_tensor(&mut self) -> R<Value> {
        let mut v = self.v_atom()?;
        while self.at_tensor() {
            let pos = self.here();
            if !self.eat_sym("⊗") {
                self.bump();
                self.bump();
                self.bump();
            }
            let w = self.v_atom()?;
            v = combine(v, w, pos, Op::Tensor)?;
        }
        Ok(v)
    }

    fn v_atom(&mut self) -> R<Value> {
        let pos = self.here();
        match self.peek().clone() {
            Tok::Num(x) => {
                self.bump();
                if self.eat_kw("i") {
                    Ok(Value::Scalar(Complex64::new(0.0, x)))
                } else {
                    Ok(Value::Scalar(Complex64::new(x, 0.0)))
                }
            }
            Tok::Ket(k) => {
                self.bump();
                states::ket(&k).map(Value::Mat).ok_or_else(|| Self::error_at(pos, format!("bad ket `|{k}>`")))
            }
            Tok::Sym("(") => {
                self.bump();
                let v = self.value()?;
                self.expect_sym(")")?;
                Ok(v)
            }
            Tok::Sym("[") => self.matrix_literal(),
            Tok::Ident(name) => {
                self.bump();
                match name.as_str() {
                    "i" => Ok(Value::Scalar(Complex64::new(0.0, 1.0))),
                    "pi" => Ok(Value::Scalar(Complex64::new(std::f64::consts::PI, 0.0))),
                    "sqrt" | "exp" | "proj" => {
                        self.expect_sym("(")?;
                        let v = self.value()?;
                        self.expect_sym(")")?;
                        match (name.as_str(), v) {
                            ("sqrt", Value::Scalar(z)) => Ok(Value::Scalar(z.sqrt())),
                            ("exp", Value::Scalar(z)) => Ok(Value::Scalar(z.exp())),
                            ("proj", Value::Mat(m)) if m.cols() == 1 => Ok(Value::Mat(Matrix::projector_of(&m))),
                            ("proj", _) => Err(Self::error_at(pos, "proj expects a ket")),
                            _ => Err(Self::error_at(pos, format!("{name} expects a number"))),
                        }
                    }
                    _ => {
                        if let Some(&v) = self.params.get(&name) {
                            Ok(Value::Scalar(Complex64::new(v, 0.0)))
                        } else if let Some(m) = self.gates.get(&name) {
                            Ok(Value::Mat(m.clone()))
                        } else {
                            Err(Self::error_at(pos, format!("unknown identifier `{name}`")))
                        }
                    }
                }
            }
            _ => Err(self.expected("a number, ket or matrix")),
        }
    }

    fn matrix_literal(&mut self) -> R<Value> {
        let pos = self.here();
        self.expect_sym("[")?;
        let mut rows = Vec::new();
        loop {
            self.expect_sym("[")?;
            let mut row = Vec::new();
            loop {
                let epos = self.here();
                match self.value()? {
                    Value::Scalar(z) => row.push(z),
                    Value::Mat(_) => return Err(Self::error_at(epos, "matrix entries must be numbers")),
                }
                if !self.eat_sym(",") {
                    break;
                }
            }
            self.expect_sym("]")?;
            rows.push(row);
            if !self.eat_sym(",") {
                break;
            }
        }
        self.expect_sym("]")?;
        Matrix::from_rows(rows).map(Value::Mat).map_err(|e| Self::error_at(pos, e.to_string()))
    }
}

#[derive(Clone, Copy)]
enum Op {
    Add,
    Sub,
    Mul,
    Div,
    Tensor,
}

fn combine(a: Value, b: Value, pos: Pos, op: Op) -> R<Value> {
    use Value::*;
    let err = |m: &str| Parser::error_at(pos, m.to_string());
    let dims = |e: crate::linalg::LinalgError| Parser::error_at(pos, e.to_string());
    Ok(match (op, a, b) {
        (Op::Add, Scalar(x), Scalar(y)) => Scalar(x + y),
        (Op::Sub, Scalar(x), Scalar(y)) => Scalar(x - y),
        (Op::Add, Mat(x), Mat(y)) => Mat(x.add(&y).map_err(dims)?),
        (Op::Sub, Mat(x), Mat(y)) => Mat(x.sub(&y).map_err(dims)?),
        (Op::Add | Op::Sub, _, _) => return Err(err("cannot add a number and a matrix")),
        (Op::Mul, Scalar(x), Scalar(y)) => Scalar(x * y),
        (Op::Mul, Scalar(x), Mat(m)) | (Op::Mul, Mat(m), Scalar(x)) => Mat(m.scale(x)),
        (Op::Mul, Mat(x), Mat(y)) => Mat(x.mul(&y).map_err(dims)?),
        (Op::Div, Scalar(x), Scalar(y)) => Scalar(x / y),
        (Op::Div, Mat(m), Scalar(y)) => Mat(m.scale(Complex64::new(1.0, 0.0) / y)),
        (Op::Div, _, Mat(_)) => return Err(err("cannot divide by a matrix")),
        (Op::Tensor, Mat(x), Mat(y)) => Mat(x.tensor(&y)),
        (Op::Tensor, _, _) => return Err(err("tensor product needs two matrices or kets")),
    })
}
