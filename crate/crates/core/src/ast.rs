//! Abstract syntax of quantum process expressions, together with the
//! free-variable functions, substitutions and the static checks that keep a
//! quantum system from being referenced twice or after it has been sent away.

use std::collections::{BTreeMap, BTreeSet};
use std::fmt;
use std::hash::{Hash, Hasher};

use serde::Serialize;
use thiserror::Error;

/// A classical value. Wraps `f64` so that terms can be compared and hashed;
/// `-0.0` is identified with `0.0`.
#[derive(Clone, Copy, Debug, Default, Serialize)]
#[serde(transparent)]
pub struct Real(pub f64);

impl Real {
    fn key(self) -> u64 {
        if self.0 == 0.0 {
            0
        } else {
            self.0.to_bits()
        }
    }
}

impl PartialEq for Real {
    fn eq(&self, other: &Self) -> bool {
        self.key() == other.key()
    }
}

impl Eq for Real {}

impl Hash for Real {
    fn hash<H: Hasher>(&self, state: &mut H) {
        self.key().hash(state);
    }
}

impl PartialOrd for Real {
    fn partial_cmp(&self, other: &Self) -> Option<std::cmp::Ordering> {
        Some(self.cmp(other))
    }
}

impl Ord for Real {
    fn cmp(&self, other: &Self) -> std::cmp::Ordering {
        let a = if self.0 == 0.0 { 0.0 } else { self.0 };
        let b = if other.0 == 0.0 { 0.0 } else { other.0 };
        a.total_cmp(&b)
    }
}

impl fmt::Display for Real {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        let v = if self.0 == 0.0 { 0.0 } else { self.0 };
        write!(f, "{v}")
    }
}

#[derive(Clone, Copy, Debug, PartialEq, Eq, Hash, PartialOrd, Ord, Serialize)]
#[serde(rename_all = "lowercase")]
pub enum ChannelKind {
    Classical,
    Quantum,
}

/// A channel name tagged with its kind. Classical and quantum channels live
/// in separate namespaces, so `c` and `qc c` are different channels.
#[derive(Clone, Debug, PartialEq, Eq, Hash, PartialOrd, Ord, Serialize)]
pub struct Channel {
    pub kind: ChannelKind,
    pub name: String,
}

impl Channel {
    pub fn classical(name: impl Into<String>) -> Self {
        Channel { kind: ChannelKind::Classical, name: name.into() }
    }

    pub fn quantum(name: impl Into<String>) -> Self {
        Channel { kind: ChannelKind::Quantum, name: name.into() }
    }
}

impl fmt::Display for Channel {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        match self.kind {
            ChannelKind::Classical => write!(f, "{}", self.name),
            ChannelKind::Quantum => write!(f, "qc {}", self.name),
        }
    }
}

/// Real-valued expressions.
#[derive(Clone, Debug, PartialEq, Eq, Hash)]
pub enum Expr {
    Num(Real),
    Var(String),
    Add(Box<Expr>, Box<Expr>),
    Sub(Box<Expr>, Box<Expr>),
    Mul(Box<Expr>, Box<Expr>),
}

#[derive(Clone, Copy, Debug, PartialEq, Eq, Hash)]
pub enum CmpOp {
    Eq,
    Lt,
    Le,
}

#[derive(Clone, Debug, PartialEq, Eq, Hash)]
pub enum BoolExpr {
    Const(bool),
    Cmp(CmpOp, Expr, Expr),
    And(Box<BoolExpr>, Box<BoolExpr>),
    Or(Box<BoolExpr>, Box<BoolExpr>),
    Not(Box<BoolExpr>),
}

#[derive(Debug, Clone, PartialEq, Eq, Error)]
pub enum EvalError {
    #[error("unbound classical variable `{0}`")]
    UnboundVariable(String),
}

impl Expr {
    pub fn num(v: f64) -> Self {
        Expr::Num(Real(v))
    }

    pub fn var(x: impl Into<String>) -> Self {
        Expr::Var(x.into())
    }

    pub fn eval(&self) -> Result<f64, EvalError> {
        Ok(match self {
            Expr::Num(v) => v.0,
            Expr::Var(x) => return Err(EvalError::UnboundVariable(x.clone())),
            Expr::Add(a, b) => a.eval()? + b.eval()?,
            Expr::Sub(a, b) => a.eval()? - b.eval()?,
            Expr::Mul(a, b) => a.eval()? * b.eval()?,
        })
    }

    fn free_vars_into(&self, out: &mut BTreeSet<String>) {
        match self {
            Expr::Num(_) => {}
            Expr::Var(x) => {
                out.insert(x.clone());
            }
            Expr::Add(a, b) | Expr::Sub(a, b) | Expr::Mul(a, b) => {
                a.free_vars_into(out);
                b.free_vars_into(out);
            }
        }
    }

    fn subst(&self, x: &str, v: f64) -> Expr {
        match self {
            Expr::Num(_) => self.clone(),
            Expr::Var(y) if y == x => Expr::num(v),
            Expr::Var(_) => self.clone(),
            Expr::Add(a, b) => Expr::Add(Box::new(a.subst(x, v)), Box::new(b.subst(x, v))),
            Expr::Sub(a, b) => Expr::Sub(Box::new(a.subst(x, v)), Box::new(b.subst(x, v))),
            Expr::Mul(a, b) => Expr::Mul(Box::new(a.subst(x, v)), Box::new(b.subst(x, v))),
        }
    }

    fn rename_var(&self, env: &[(String, String)]) -> Expr {
        match self {
            Expr::Num(_) => self.clone(),
            Expr::Var(y) => match env.iter().rev().find(|(from, _)| from == y) {
                Some((_, to)) => Expr::Var(to.clone()),
                None => self.clone(),
            },
            Expr::Add(a, b) => Expr::Add(Box::new(a.rename_var(env)), Box::new(b.rename_var(env))),
            Expr::Sub(a, b) => Expr::Sub(Box::new(a.rename_var(env)), Box::new(b.rename_var(env))),
            Expr::Mul(a, b) => Expr::Mul(Box::new(a.rename_var(env)), Box::new(b.rename_var(env))),
        }
    }
}

impl BoolExpr {
    pub fn eval(&self) -> Result<bool, EvalError> {
        Ok(match self {
            BoolExpr::Const(b) => *b,
            BoolExpr::Cmp(op, a, b) => {
                let (a, b) = (a.eval()?, b.eval()?);
                match op {
                    CmpOp::Eq => a == b,
                    CmpOp::Lt => a < b,
                    CmpOp::Le => a <= b,
                }
            }
            BoolExpr::And(a, b) => a.eval()? && b.eval()?,
            BoolExpr::Or(a, b) => a.eval()? || b.eval()?,
            BoolExpr::Not(a) => !a.eval()?,
        })
    }

    fn free_vars_into(&self, out: &mut BTreeSet<String>) {
        match self {
            BoolExpr::Const(_) => {}
            BoolExpr::Cmp(_, a, b) => {
                a.free_vars_into(out);
                b.free_vars_into(out);
            }
            BoolExpr::And(a, b) | BoolExpr::Or(a, b) => {
                a.free_vars_into(out);
                b.free_vars_into(out);
            }
            BoolExpr::Not(a) => a.free_vars_into(out),
        }
    }

    fn subst(&self, x: &str, v: f64) -> BoolExpr {
        match self {
            BoolExpr::Const(_) => self.clone(),
            BoolExpr::Cmp(op, a, b) => BoolExpr::Cmp(*op, a.subst(x, v), b.subst(x, v)),
            BoolExpr::And(a, b) => BoolExpr::And(Box::new(a.subst(x, v)), Box::new(b.subst(x, v))),
            BoolExpr::Or(a, b) => BoolExpr::Or(Box::new(a.subst(x, v)), Box::new(b.subst(x, v))),
            BoolExpr::Not(a) => BoolExpr::Not(Box::new(a.subst(x, v))),
        }
    }

    fn rename_var(&self, env: &[(String, String)]) -> BoolExpr {
        match self {
            BoolExpr::Const(_) => self.clone(),
            BoolExpr::Cmp(op, a, b) => BoolExpr::Cmp(*op, a.rename_var(env), b.rename_var(env)),
            BoolExpr::And(a, b) => {
                BoolExpr::And(Box::new(a.rename_var(env)), Box::new(b.rename_var(env)))
            }
            BoolExpr::Or(a, b) => BoolExpr::Or(Box::new(a.rename_var(env)), Box::new(b.rename_var(env))),
            BoolExpr::Not(a) => BoolExpr::Not(Box::new(a.rename_var(env))),
        }
    }
}

/// A relabeling function: a finite channel map, identity elsewhere.
#[derive(Clone, Debug, Default, PartialEq, Eq, Hash)]
pub struct Relabeling {
    map: BTreeMap<Channel, Channel>,
}

#[derive(Debug, Clone, PartialEq, Eq, Error)]
#[error("relabeling maps {from} to a channel of a different kind ({to})")]
pub struct RelabelKindError {
    pub from: Channel,
    pub to: Channel,
}

impl Relabeling {
    pub fn new(pairs: impl IntoIterator<Item = (Channel, Channel)>) -> Result<Self, RelabelKindError> {
        let mut map = BTreeMap::new();
        for (from, to) in pairs {
            if from.kind != to.kind {
                return Err(RelabelKindError { from, to });
            }
            if from != to {
                map.insert(from, to);
            }
        }
        Ok(Relabeling { map })
    }

    pub fn apply(&self, chan: &Channel) -> Channel {
        self.map.get(chan).cloned().unwrap_or_else(|| chan.clone())
    }

    pub fn apply_name(&self, kind: ChannelKind, name: &str) -> String {
        let chan = Channel { kind, name: name.to_string() };
        self.apply(&chan).name
    }

    pub fn pairs(&self) -> impl Iterator<Item = (&Channel, &Channel)> {
        self.map.iter()
    }

    pub fn is_empty(&self) -> bool {
        self.map.is_empty()
    }
}

/// Quantum process expressions, one variant per syntactic constructor.
#[derive(Clone, Debug, PartialEq, Eq, Hash)]
pub enum Process {
    Nil,
    CInput { chan: String, var: String, body: Box<Process> },
    COutput { chan: String, value: Expr, body: Box<Process> },
    QbitNew { var: String, body: Box<Process> },
    QInput { chan: String, var: String, body: Box<Process> },
    QOutput { chan: String, var: String, body: Box<Process> },
    Unitary { gate: String, qvars: Vec<String>, body: Box<Process> },
    Measure { observable: String, qvars: Vec<String>, var: String, body: Box<Process> },
    Sum(Box<Process>, Box<Process>),
    Parallel(Box<Process>, Box<Process>),
    Relabel { body: Box<Process>, relabeling: Relabeling },
    Restrict { body: Box<Process>, chans: BTreeSet<Channel> },
    If { cond: BoolExpr, body: Box<Process> },
}

/// Small constructors, mostly for tests and generated terms.
pub mod build {
    use super::*;

    pub fn nil() -> Process {
        Process::Nil
    }
    pub fn cin(chan: &str, var: &str, body: Process) -> Process {
        Process::CInput { chan: chan.into(), var: var.into(), body: Box::new(body) }
    }
    pub fn cout(chan: &str, value: Expr, body: Process) -> Process {
        Process::COutput { chan: chan.into(), value, body: Box::new(body) }
    }
    pub fn qbit(var: &str, body: Process) -> Process {
        Process::QbitNew { var: var.into(), body: Box::new(body) }
    }
    pub fn qin(chan: &str, var: &str, body: Process) -> Process {
        Process::QInput { chan: chan.into(), var: var.into(), body: Box::new(body) }
    }
    pub fn qout(chan: &str, var: &str, body: Process) -> Process {
        Process::QOutput { chan: chan.into(), var: var.into(), body: Box::new(body) }
    }
    pub fn unitary(gate: &str, qvars: &[&str], body: Process) -> Process {
        Process::Unitary {
            gate: gate.into(),
            qvars: qvars.iter().map(|s| s.to_string()).collect(),
            body: Box::new(body),
        }
    }
    pub fn measure(observable: &str, qvars: &[&str], var: &str, body: Process) -> Process {
        Process::Measure {
            observable: observable.into(),
            qvars: qvars.iter().map(|s| s.to_string()).collect(),
            var: var.into(),
            body: Box::new(body),
        }
    }
    pub fn sum(a: Process, b: Process) -> Process {
        Process::Sum(Box::new(a), Box::new(b))
    }
    pub fn par(a: Process, b: Process) -> Process {
        Process::Parallel(Box::new(a), Box::new(b))
    }
    pub fn restrict(body: Process, chans: impl IntoIterator<Item = Channel>) -> Process {
        Process::Restrict { body: Box::new(body), chans: chans.into_iter().collect() }
    }
    pub fn relabel(body: Process, relabeling: Relabeling) -> Process {
        Process::Relabel { body: Box::new(body), relabeling }
    }
    pub fn when(cond: BoolExpr, body: Process) -> Process {
        Process::If { cond, body: Box::new(body) }
    }
}

/// Which well-formedness rule a subterm breaks.
#[derive(Clone, Debug, PartialEq, Eq, Serialize)]
#[serde(tag = "kind")]
pub enum ViolationKind {
    /// `qc!q.E` with `q` still free in `E`.
    OutputThenUse { qvar: String },
    /// `E || F` where both sides reference the same quantum variables.
    ParallelOverlap { shared: Vec<String> },
    /// A unitary or measurement lists the same quantum variable twice.
    DuplicateQvar { qvar: String },
}

/// A well-formedness violation and the path (child indices from the root)
/// to the offending subterm.
#[derive(Clone, Debug, PartialEq, Eq, Serialize, Error)]
#[error("{kind}{}", path_suffix(path))]
pub struct Violation {
    pub kind: ViolationKind,
    pub path: Vec<usize>,
}

impl fmt::Display for ViolationKind {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        match self {
            ViolationKind::OutputThenUse { qvar } => write!(f, "qubit `{qvar}` is used after it is sent"),
            ViolationKind::ParallelOverlap { shared } => {
                write!(f, "parallel components share qubit(s) {}", shared.join(", "))
            }
            ViolationKind::DuplicateQvar { qvar } => write!(f, "qubit `{qvar}` is listed twice in one operation"),
        }
    }
}

fn path_suffix(path: &[usize]) -> String {
    if path.is_empty() {
        String::new()
    } else {
        let p: Vec<String> = path.iter().map(|i| i.to_string()).collect();
        format!(" (subterm {})", p.join("."))
    }
}

fn fresh_variant(base: &str, avoid: &BTreeSet<String>) -> String {
    let mut candidate = format!("{base}'");
    while avoid.contains(&candidate) {
        candidate.push('\'');
    }
    candidate
}

impl Process {
    /// Direct children, in a fixed order used by violation paths.
    pub fn children(&self) -> Vec<&Process> {
        match self {
            Process::Nil => vec![],
            Process::CInput { body, .. }
            | Process::COutput { body, .. }
            | Process::QbitNew { body, .. }
            | Process::QInput { body, .. }
            | Process::QOutput { body, .. }
            | Process::Unitary { body, .. }
            | Process::Measure { body, .. }
            | Process::Relabel { body, .. }
            | Process::Restrict { body, .. }
            | Process::If { body, .. } => vec![body],
            Process::Sum(a, b) | Process::Parallel(a, b) => vec![a, b],
        }
    }

    pub fn subterm(&self, path: &[usize]) -> Option<&Process> {
        let mut cur = self;
        for &i in path {
            cur = *cur.children().get(i)?;
        }
        Some(cur)
    }

    /// Number of constructors in the term.
    pub fn size(&self) -> usize {
        1 + self.children().iter().map(|c| c.size()).sum::<usize>()
    }

    /// Free quantum variables.
    pub fn qv(&self) -> BTreeSet<String> {
        match self {
            Process::Nil => BTreeSet::new(),
            Process::CInput { body, .. } | Process::COutput { body, .. } => body.qv(),
            Process::QbitNew { var, body } | Process::QInput { var, body, .. } => {
                let mut s = body.qv();
                s.remove(var);
                s
            }
            Process::QOutput { var, body, .. } => {
                let mut s = body.qv();
                s.insert(var.clone());
                s
            }
            Process::Unitary { qvars, body, .. } | Process::Measure { qvars, body, .. } => {
                let mut s = body.qv();
                s.extend(qvars.iter().cloned());
                s
            }
            Process::Sum(a, b) | Process::Parallel(a, b) => {
                let mut s = a.qv();
                s.extend(b.qv());
                s
            }
            Process::Relabel { body, .. } | Process::Restrict { body, .. } | Process::If { body, .. } => {
                body.qv()
            }
        }
    }

    /// Free classical variables. Only `c?x` and `M[..;x]` bind.
    pub fn fv(&self) -> BTreeSet<String> {
        let mut out = BTreeSet::new();
        self.fv_into(&mut out);
        out
    }

    fn fv_into(&self, out: &mut BTreeSet<String>) {
        match self {
            Process::Nil => {}
            Process::CInput { var, body, .. } | Process::Measure { var, body, .. } => {
                let mut inner = body.fv();
                inner.remove(var);
                out.extend(inner);
            }
            Process::COutput { value, body, .. } => {
                value.free_vars_into(out);
                body.fv_into(out);
            }
            Process::If { cond, body } => {
                cond.free_vars_into(out);
                body.fv_into(out);
            }
            _ => {
                for c in self.children() {
                    c.fv_into(out);
                }
            }
        }
    }

    /// A term without free classical variables is a quantum process.
    pub fn is_closed(&self) -> bool {
        self.fv().is_empty()
    }

    /// Every quantum variable name occurring anywhere, bound or free.
    pub fn all_qvars(&self) -> BTreeSet<String> {
        let mut out = BTreeSet::new();
        self.all_qvars_into(&mut out);
        out
    }

    fn all_qvars_into(&self, out: &mut BTreeSet<String>) {
        match self {
            Process::QbitNew { var, .. } | Process::QInput { var, .. } | Process::QOutput { var, .. } => {
                out.insert(var.clone());
            }
            Process::Unitary { qvars, .. } | Process::Measure { qvars, .. } => {
                out.extend(qvars.iter().cloned());
            }
            _ => {}
        }
        for c in self.children() {
            c.all_qvars_into(out);
        }
    }

    /// True when no constructor that can change the quantum context occurs
    /// (qubit creation, quantum input, unitary, measurement).
    pub fn is_classical(&self) -> bool {
        match self {
            Process::QbitNew { .. }
            | Process::QInput { .. }
            | Process::Unitary { .. }
            | Process::Measure { .. } => false,
            _ => self.children().iter().all(|c| c.is_classical()),
        }
    }

    pub fn check_wellformed(&self) -> Result<(), Violation> {
        match self.violations().into_iter().next() {
            Some(v) => Err(v),
            None => Ok(()),
        }
    }

    /// All violations, outermost first.
    pub fn violations(&self) -> Vec<Violation> {
        let mut out = Vec::new();
        let mut path = Vec::new();
        self.collect_violations(&mut path, &mut out);
        out
    }

    fn collect_violations(&self, path: &mut Vec<usize>, out: &mut Vec<Violation>) {
        match self {
            Process::QOutput { var, body, .. } if body.qv().contains(var) => {
                out.push(Violation {
                    kind: ViolationKind::OutputThenUse { qvar: var.clone() },
                    path: path.clone(),
                });
            }
            Process::Unitary { qvars, .. } | Process::Measure { qvars, .. } => {
                let mut seen = BTreeSet::new();
                for q in qvars {
                    if !seen.insert(q) {
                        out.push(Violation {
                            kind: ViolationKind::DuplicateQvar { qvar: q.clone() },
                            path: path.clone(),
                        });
                        break;
                    }
                }
            }
            Process::Parallel(a, b) => {
                let shared: Vec<String> = a.qv().intersection(&b.qv()).cloned().collect();
                if !shared.is_empty() {
                    out.push(Violation { kind: ViolationKind::ParallelOverlap { shared }, path: path.clone() });
                }
            }
            _ => {}
        }
        for (i, c) in self.children().into_iter().enumerate() {
            path.push(i);
            c.collect_violations(path, out);
            path.pop();
        }
    }

    /// `self[v/x]`: instantiate free occurrences of the classical variable `x`.
    pub fn subst_classical(&self, x: &str, v: f64) -> Process {
        match self {
            Process::Nil => Process::Nil,
            Process::CInput { chan, var, body } => Process::CInput {
                chan: chan.clone(),
                var: var.clone(),
                body: if var == x { body.clone() } else { Box::new(body.subst_classical(x, v)) },
            },
            Process::Measure { observable, qvars, var, body } => Process::Measure {
                observable: observable.clone(),
                qvars: qvars.clone(),
                var: var.clone(),
                body: if var == x { body.clone() } else { Box::new(body.subst_classical(x, v)) },
            },
            Process::COutput { chan, value, body } => Process::COutput {
                chan: chan.clone(),
                value: value.subst(x, v),
                body: Box::new(body.subst_classical(x, v)),
            },
            Process::If { cond, body } => {
                Process::If { cond: cond.subst(x, v), body: Box::new(body.subst_classical(x, v)) }
            }
            _ => self.map_children(|c| c.subst_classical(x, v)),
        }
    }

    /// `self[r/q]`: replace free occurrences of the quantum variable `q` by
    /// `r`. A binder named `r` whose scope mentions `q` is renamed first.
    pub fn subst_quantum(&self, q: &str, r: &str) -> Process {
        if q == r {
            return self.clone();
        }
        let swap = |s: &String| if s == q { r.to_string() } else { s.clone() };
        match self {
            Process::QbitNew { var, body } | Process::QInput { var, body, .. } => {
                let rebuild = |var: String, body: Process| match self {
                    Process::QbitNew { .. } => Process::QbitNew { var, body: Box::new(body) },
                    Process::QInput { chan, .. } => {
                        Process::QInput { chan: chan.clone(), var, body: Box::new(body) }
                    }
                    _ => unreachable!(),
                };
                if var == q || !body.qv().contains(q) {
                    return self.clone();
                }
                if var == r {
                    let mut avoid = body.all_qvars();
                    avoid.insert(q.to_string());
                    avoid.insert(r.to_string());
                    let renamed = fresh_variant(r, &avoid);
                    let body = body.subst_quantum(r, &renamed).subst_quantum(q, r);
                    rebuild(renamed, body)
                } else {
                    rebuild(var.clone(), body.subst_quantum(q, r))
                }
            }
            Process::QOutput { chan, var, body } => Process::QOutput {
                chan: chan.clone(),
                var: swap(var),
                body: Box::new(body.subst_quantum(q, r)),
            },
            Process::Unitary { gate, qvars, body } => Process::Unitary {
                gate: gate.clone(),
                qvars: qvars.iter().map(swap).collect(),
                body: Box::new(body.subst_quantum(q, r)),
            },
            Process::Measure { observable, qvars, var, body } => Process::Measure {
                observable: observable.clone(),
                qvars: qvars.iter().map(swap).collect(),
                var: var.clone(),
                body: Box::new(body.subst_quantum(q, r)),
            },
            _ => self.map_children(|c| c.subst_quantum(q, r)),
        }
    }

    /// Rebuild this node with `f` applied to each child.
    pub fn map_children(&self, mut f: impl FnMut(&Process) -> Process) -> Process {
        match self {
            Process::Nil => Process::Nil,
            Process::CInput { chan, var, body } => {
                Process::CInput { chan: chan.clone(), var: var.clone(), body: Box::new(f(body)) }
            }
            Process::COutput { chan, value, body } => {
                Process::COutput { chan: chan.clone(), value: value.clone(), body: Box::new(f(body)) }
            }
            Process::QbitNew { var, body } => Process::QbitNew { var: var.clone(), body: Box::new(f(body)) },
            Process::QInput { chan, var, body } => {
                Process::QInput { chan: chan.clone(), var: var.clone(), body: Box::new(f(body)) }
            }
            Process::QOutput { chan, var, body } => {
                Process::QOutput { chan: chan.clone(), var: var.clone(), body: Box::new(f(body)) }
            }
            Process::Unitary { gate, qvars, body } => {
                Process::Unitary { gate: gate.clone(), qvars: qvars.clone(), body: Box::new(f(body)) }
            }
            Process::Measure { observable, qvars, var, body } => Process::Measure {
                observable: observable.clone(),
                qvars: qvars.clone(),
                var: var.clone(),
                body: Box::new(f(body)),
            },
            Process::Sum(a, b) => Process::Sum(Box::new(f(a)), Box::new(f(b))),
            Process::Parallel(a, b) => Process::Parallel(Box::new(f(a)), Box::new(f(b))),
            Process::Relabel { body, relabeling } => {
                Process::Relabel { body: Box::new(f(body)), relabeling: relabeling.clone() }
            }
            Process::Restrict { body, chans } => {
                Process::Restrict { body: Box::new(f(body)), chans: chans.clone() }
            }
            Process::If { cond, body } => Process::If { cond: cond.clone(), body: Box::new(f(body)) },
        }
    }

    /// Alpha-normal form: every binder is renamed after its binding depth,
    /// so alpha-equivalent terms become syntactically equal.
    pub fn alpha_normal(&self) -> Process {
        let mut cenv = Vec::new();
        let mut qenv = Vec::new();
        self.alpha_normal_in(&mut cenv, &mut qenv)
    }

    fn alpha_normal_in(&self, cenv: &mut Vec<(String, String)>, qenv: &mut Vec<(String, String)>) -> Process {
        let qlookup = |qenv: &Vec<(String, String)>, q: &String| -> String {
            qenv.iter().rev().find(|(from, _)| from == q).map(|(_, to)| to.clone()).unwrap_or_else(|| q.clone())
        };
        match self {
            Process::CInput { chan, var, body } => {
                let canon = format!("%x{}", cenv.len());
                cenv.push((var.clone(), canon.clone()));
                let body = body.alpha_normal_in(cenv, qenv);
                cenv.pop();
                Process::CInput { chan: chan.clone(), var: canon, body: Box::new(body) }
            }
            Process::Measure { observable, qvars, var, body } => {
                let qvars = qvars.iter().map(|q| qlookup(qenv, q)).collect();
                let canon = format!("%x{}", cenv.len());
                cenv.push((var.clone(), canon.clone()));
                let body = body.alpha_normal_in(cenv, qenv);
                cenv.pop();
                Process::Measure { observable: observable.clone(), qvars, var: canon, body: Box::new(body) }
            }
            Process::COutput { chan, value, body } => Process::COutput {
                chan: chan.clone(),
                value: value.rename_var(cenv),
                body: Box::new(body.alpha_normal_in(cenv, qenv)),
            },
            Process::If { cond, body } => Process::If {
                cond: cond.rename_var(cenv),
                body: Box::new(body.alpha_normal_in(cenv, qenv)),
            },
            Process::QbitNew { var, body } | Process::QInput { var, body, .. } => {
                let canon = format!("%q{}", qenv.len());
                qenv.push((var.clone(), canon.clone()));
                let body = Box::new(body.alpha_normal_in(cenv, qenv));
                qenv.pop();
                match self {
                    Process::QbitNew { .. } => Process::QbitNew { var: canon, body },
                    Process::QInput { chan, .. } => Process::QInput { chan: chan.clone(), var: canon, body },
                    _ => unreachable!(),
                }
            }
            Process::QOutput { chan, var, body } => Process::QOutput {
                chan: chan.clone(),
                var: qlookup(qenv, var),
                body: Box::new(body.alpha_normal_in(cenv, qenv)),
            },
            Process::Unitary { gate, qvars, body } => Process::Unitary {
                gate: gate.clone(),
                qvars: qvars.iter().map(|q| qlookup(qenv, q)).collect(),
                body: Box::new(body.alpha_normal_in(cenv, qenv)),
            },
            _ => self.map_children(|c| c.alpha_normal_in(cenv, qenv)),
        }
    }

    /// Gate and observable names used anywhere in the term.
    pub fn operator_names(&self) -> (BTreeSet<String>, BTreeSet<String>) {
        let mut gates = BTreeSet::new();
        let mut observables = BTreeSet::new();
        self.visit(&mut |p| match p {
            Process::Unitary { gate, .. } => {
                gates.insert(gate.clone());
            }
            Process::Measure { observable, .. } => {
                observables.insert(observable.clone());
            }
            _ => {}
        });
        (gates, observables)
    }

    /// Pre-order traversal.
    pub fn visit(&self, f: &mut impl FnMut(&Process)) {
        f(self);
        for c in self.children() {
            c.visit(f);
        }
    }
}
