//! Seeded property suites: static laws of summation and parallel
//! composition, and congruence of the three equivalences under the
//! operators that preserve them.
//!
//! Every law instance is decided by the bisimulation checker on random
//! well-formed terms, so the suites exercise the whole pipeline.

use std::collections::BTreeSet;

use num_complex::Complex64;
use rand::seq::SliceRandom;
use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;
use rayon::prelude::*;
use serde::Serialize;

use crate::ast::build::*;
use crate::ast::{BoolExpr, Channel, CmpOp, Expr, Process, Relabeling};
use crate::bisim::{compare, BisimError, Mode};
use crate::context::QContext;
use crate::linalg::{states, Matrix};
use crate::lp::LP_TOL;
use crate::lts::{Bounds, Configuration, Env, InputPolicy, QInputRecipe};
use crate::frontend::pretty;

const CCHANS: [&str; 3] = ["a", "b", "c"];
const QCHANS: [&str; 2] = ["e", "g"];
const GATES1: [&str; 4] = ["H", "X", "Z", "I"];
const OBSERVABLES: [&str; 2] = ["M01", "Mpm"];
/// The spare qubit that generated terms never use; prefix contexts may
/// send it away.
const SPARE: &str = "s";

/// Policy used by every suite: small classical domains and two quantum
/// input states keep open systems finite and small.
pub fn suite_policy() -> InputPolicy {
    InputPolicy {
        default_domain: vec![0.0, 1.0],
        quantum_inputs: ["0", "+"]
            .iter()
            .map(|k| QInputRecipe::Product(states::ket_projector(k).expect("ket")))
            .collect(),
        ..InputPolicy::open()
    }
}

/// Random well-formed closed terms.
pub struct TermGen {
    rng: ChaCha8Rng,
    fresh: usize,
    /// Probability weight of environment inputs; kept small.
    pub input_weight: u32,
    /// Parallel compositions and new qubits left for the current term;
    /// both multiply the state space.
    pars: u32,
    news: u32,
}

impl TermGen {
    pub fn new(seed: u64, stream: u64) -> Self {
        let mut rng = ChaCha8Rng::seed_from_u64(seed);
        rng.set_stream(stream);
        TermGen { rng, fresh: 0, input_weight: 1, pars: 0, news: 0 }
    }

    fn fresh(&mut self, prefix: &str) -> String {
        self.fresh += 1;
        format!("{prefix}{}", self.fresh)
    }

    fn pick<'a, T>(&mut self, xs: &'a [T]) -> &'a T {
        xs.choose(&mut self.rng).expect("non-empty choice")
    }

    fn value(&mut self, vars: &[String]) -> Expr {
        if !vars.is_empty() && self.rng.gen_bool(0.5) {
            Expr::var(self.pick(vars).clone())
        } else {
            Expr::num(self.rng.gen_range(0..2) as f64)
        }
    }

    /// A term of depth at most `depth` using only qubits from `owned`, with
    /// at most two parallel compositions and two new qubits.
    pub fn term(&mut self, depth: usize, owned: &[String], vars: &[String]) -> Process {
        self.pars = 2;
        self.news = 2;
        self.gen(depth, owned, vars)
    }

    fn gen(&mut self, depth: usize, owned: &[String], vars: &[String]) -> Process {
        if depth == 0 || self.rng.gen_bool(0.15) {
            return if self.rng.gen_bool(0.5) { nil() } else { cout(self.pick(&CCHANS), self.value(vars), nil()) };
        }
        let d = depth - 1;
        let w_in = self.input_weight;
        let has_q = !owned.is_empty();
        let weights = [
            3,                                   // classical output
            if has_q { 4 } else { 0 },           // one-qubit gate
            if owned.len() >= 2 { 2 } else { 0 }, // CNOT
            if has_q { 3 } else { 0 },           // measurement
            if has_q { 1 } else { 0 },           // quantum output
            if self.news > 0 { 1 } else { 0 },   // new qubit
            w_in,                                // classical input
            w_in,                                // quantum input
            3,                                   // sum
            if self.pars > 0 { 3 } else { 0 },   // parallel
            1,                                   // guard
            1,                                   // restriction
            1,                                   // relabeling
        ];
        let total: u32 = weights.iter().sum();
        let mut roll = self.rng.gen_range(0..total);
        let mut choice = 0;
        while roll >= weights[choice] {
            roll -= weights[choice];
            choice += 1;
        }
        match choice {
            0 => {
                let c = *self.pick(&CCHANS);
                let v = self.value(vars);
                cout(c, v, self.gen(d, owned, vars))
            }
            1 => {
                let g = *self.pick(&GATES1);
                let q = self.pick(owned).clone();
                unitary(g, &[q.as_str()], self.gen(d, owned, vars))
            }
            2 => {
                let mut qs = owned.to_vec();
                qs.shuffle(&mut self.rng);
                unitary("CNOT", &[qs[0].as_str(), qs[1].as_str()], self.gen(d, owned, vars))
            }
            3 => {
                let obs = *self.pick(&OBSERVABLES);
                let q = self.pick(owned).clone();
                let x = self.fresh("x");
                let mut vs = vars.to_vec();
                vs.push(x.clone());
                measure(obs, &[q.as_str()], &x, self.gen(d, owned, &vs))
            }
            4 => {
                let q = self.pick(owned).clone();
                let rest: Vec<String> = owned.iter().filter(|r| **r != q).cloned().collect();
                let c = *self.pick(&QCHANS);
                qout(c, &q, self.gen(d, &rest, vars))
            }
            5 => {
                self.news -= 1;
                let r = self.fresh("n");
                let mut os = owned.to_vec();
                os.push(r.clone());
                qbit(&r, self.gen(d, &os, vars))
            }
            6 => {
                let x = self.fresh("x");
                let mut vs = vars.to_vec();
                vs.push(x.clone());
                let c = *self.pick(&CCHANS);
                cin(c, &x, self.gen(d, owned, &vs))
            }
            7 => {
                let r = self.fresh("r");
                let mut os = owned.to_vec();
                os.push(r.clone());
                let c = *self.pick(&QCHANS);
                qin(c, &r, self.gen(d, &os, vars))
            }
            8 => sum(self.gen(d, owned, vars), self.gen(d, owned, vars)),
            9 => {
                self.pars -= 1;
                let (mut left, mut right) = (Vec::new(), Vec::new());
                for q in owned {
                    if self.rng.gen_bool(0.5) {
                        left.push(q.clone());
                    } else {
                        right.push(q.clone());
                    }
                }
                par(self.gen(d, &left, vars), self.gen(d, &right, vars))
            }
            10 => {
                let cond = if vars.is_empty() || self.rng.gen_bool(0.3) {
                    BoolExpr::Const(self.rng.gen_bool(0.7))
                } else {
                    BoolExpr::Cmp(CmpOp::Eq, Expr::var(self.pick(vars).clone()), Expr::num(self.rng.gen_range(0..2) as f64))
                };
                when(cond, self.gen(d, owned, vars))
            }
            11 => {
                let chans = self.channels(1);
                restrict(self.gen(d, owned, vars), chans)
            }
            _ => {
                let f = self.relabeling();
                relabel(self.gen(d, owned, vars), f)
            }
        }
    }

    fn channels(&mut self, max: usize) -> BTreeSet<Channel> {
        let n = self.rng.gen_range(1..=max);
        (0..n)
            .map(|_| {
                if self.rng.gen_bool(0.7) {
                    Channel::classical(*self.pick(&CCHANS))
                } else {
                    Channel::quantum(*self.pick(&QCHANS))
                }
            })
            .collect()
    }

    pub fn relabeling(&mut self) -> Relabeling {
        let pairs: Vec<(Channel, Channel)> = (0..self.rng.gen_range(1..=2))
            .map(|_| {
                if self.rng.gen_bool(0.7) {
                    (Channel::classical(*self.pick(&CCHANS)), Channel::classical(*self.pick(&CCHANS)))
                } else {
                    (Channel::quantum(*self.pick(&QCHANS)), Channel::quantum(*self.pick(&QCHANS)))
                }
            })
            .collect();
        Relabeling::new(pairs).expect("same kinds")
    }

    /// A classical term: no qubit creation, input, gate or measurement.
    pub fn classical(&mut self, depth: usize, vars: &[String]) -> Process {
        if depth == 0 || self.rng.gen_bool(0.25) {
            return if self.rng.gen_bool(0.5) { nil() } else { cout(self.pick(&CCHANS), self.value(vars), nil()) };
        }
        let d = depth - 1;
        match self.rng.gen_range(0..4) {
            0 => {
                let c = *self.pick(&CCHANS);
                let v = self.value(vars);
                cout(c, v, self.classical(d, vars))
            }
            1 => {
                let x = self.fresh("x");
                let mut vs = vars.to_vec();
                vs.push(x.clone());
                let c = *self.pick(&CCHANS);
                cin(c, &x, self.classical(d, &vs))
            }
            2 => sum(self.classical(d, vars), self.classical(d, vars)),
            _ => par(self.classical(d, vars), self.classical(d, vars)),
        }
    }

    /// Qubits `q0..q{n-1}` in a random product of `|0>, |1>, |+>, |->`,
    /// with the first two sometimes entangled.
    pub fn context(&mut self, n: usize, spare: bool) -> QContext {
        let mut vars: Vec<String> = (0..n).map(|i| format!("q{i}")).collect();
        let mut rho = Matrix::scalar_one();
        let mut i = 0;
        if n >= 2 && self.rng.gen_bool(0.3) {
            let s = std::f64::consts::FRAC_1_SQRT_2;
            let bell = Matrix::column(&[s, 0.0, 0.0, s].map(|v| Complex64::new(v, 0.0)));
            rho = Matrix::projector_of(&bell);
            i = 2;
        }
        while i < n {
            let k = *self.pick(&["0", "1", "+", "-"]);
            rho = rho.tensor(&states::ket_projector(k).expect("ket"));
            i += 1;
        }
        if spare {
            vars.push(SPARE.to_string());
            rho = rho.tensor(&states::ket_projector("+").expect("ket"));
        }
        QContext::new(vars, rho).expect("valid context")
    }

    pub fn gen_bool(&mut self, p: f64) -> bool {
        self.rng.gen_bool(p)
    }

    pub fn gen_range(&mut self, lo: usize, hi: usize) -> usize {
        self.rng.gen_range(lo..hi)
    }
}

/// An injected fault used to show that the suites detect broken checks.
#[derive(Clone, Copy, Debug, PartialEq, Eq, Serialize)]
#[serde(rename_all = "kebab-case")]
pub enum Mutation {
    /// Exchange `H` and `X` everywhere in the right-hand side.
    SwapGate,
}

impl std::str::FromStr for Mutation {
    type Err = String;
    fn from_str(s: &str) -> Result<Self, String> {
        match s {
            "swap-gate" => Ok(Mutation::SwapGate),
            other => Err(format!("unknown mutation `{other}` (expected swap-gate)")),
        }
    }
}

pub fn swap_gates(p: &Process) -> Process {
    match p {
        Process::Unitary { gate, qvars, body } => {
            let gate = match gate.as_str() {
                "H" => "X".to_string(),
                "X" => "H".to_string(),
                g => g.to_string(),
            };
            Process::Unitary { gate, qvars: qvars.clone(), body: Box::new(swap_gates(body)) }
        }
        other => other.map_children(swap_gates),
    }
}

#[derive(Clone, Debug, Serialize)]
pub struct Failure {
    pub sample: usize,
    pub left: String,
    pub right: String,
    pub qubits: Vec<String>,
    pub detail: String,
}

#[derive(Clone, Debug, Serialize)]
pub struct PropertyResult {
    pub name: String,
    pub checked: usize,
    pub failures: Vec<Failure>,
}

impl PropertyResult {
    pub fn passed(&self) -> bool {
        self.failures.is_empty()
    }
}

#[derive(Clone, Debug, Serialize)]
pub struct SuiteReport {
    pub seed: u64,
    pub samples: usize,
    pub mutation: Option<Mutation>,
    pub results: Vec<PropertyResult>,
    pub passed: bool,
}

struct Checker {
    env: Env,
    policy: InputPolicy,
    bounds: Bounds,
}

impl Checker {
    fn new() -> Self {
        Checker { env: Env::standard(), policy: suite_policy(), bounds: Bounds { max_nodes: 20_000, max_depth: 200 } }
    }

    fn related(&self, l: &Process, r: &Process, ctx: &QContext, mode: Mode) -> Result<bool, String> {
        let lc = Configuration::new(l.clone(), ctx.clone()).map_err(|e| e.to_string())?;
        let rc = Configuration::new(r.clone(), ctx.clone()).map_err(|e| e.to_string())?;
        compare(&lc, &rc, &self.env, &self.policy, self.bounds, mode, LP_TOL)
            .map(|(_, rep)| rep.equivalent)
            .map_err(|e: BisimError| e.to_string())
    }
}

/// One instance: `(property, sample, left, right, context, mode)`.
type Instance = (String, usize, Process, Process, QContext, Mode);

fn decide(checker: &Checker, instances: Vec<Instance>, names: &[String]) -> Vec<PropertyResult> {
    let outcomes: Vec<(String, Option<Failure>)> = instances
        .into_par_iter()
        .map(|(name, sample, l, r, ctx, mode)| {
            let failure = match checker.related(&l, &r, &ctx, mode) {
                Ok(true) => None,
                Ok(false) => Some("not related".to_string()),
                Err(e) => Some(format!("error: {e}")),
            };
            let failure = failure.map(|detail| Failure {
                sample,
                left: pretty(&l),
                right: pretty(&r),
                qubits: ctx.vars().to_vec(),
                detail,
            });
            (name, failure)
        })
        .collect();
    names
        .iter()
        .map(|n| {
            let mine: Vec<&(String, Option<Failure>)> = outcomes.iter().filter(|(m, _)| m == n).collect();
            PropertyResult {
                name: n.clone(),
                checked: mine.len(),
                failures: mine.iter().filter_map(|(_, f)| f.clone()).collect(),
            }
        })
        .collect()
}

pub const LAWS: [&str; 5] = ["E+F ~ F+E", "E+E ~ E", "(E+F)+G ~ E+(F+G)", "E+nil ~ E", "E||nil ~ E"];

/// The static laws on `samples` random term triples (depth at most 4, at
/// most 3 qubits).
pub fn static_laws(samples: usize, seed: u64, mutation: Option<Mutation>) -> SuiteReport {
    let mutate = |p: &Process| match mutation {
        Some(Mutation::SwapGate) => swap_gates(p),
        None => p.clone(),
    };
    let mut instances: Vec<Instance> = Vec::new();
    for i in 0..samples {
        let mut g = TermGen::new(seed, i as u64);
        let n = g.gen_range(1, 4);
        let ctx = g.context(n, false);
        let owned = ctx.vars().to_vec();
        let e = g.term(4, &owned, &[]);
        let f = g.term(4, &owned, &[]);
        let h = g.term(3, &owned, &[]);
        let (em, fm, hm) = (mutate(&e), mutate(&f), mutate(&h));
        let laws = [
            (sum(e.clone(), f.clone()), sum(fm.clone(), em.clone())),
            (sum(e.clone(), e.clone()), em.clone()),
            (sum(sum(e.clone(), f.clone()), h.clone()), sum(em.clone(), sum(fm, hm))),
            (sum(e.clone(), nil()), em.clone()),
            (par(e.clone(), nil()), em),
        ];
        for (k, (l, r)) in laws.into_iter().enumerate() {
            instances.push((LAWS[k].to_string(), i, l, r, ctx.clone(), Mode::Strong));
        }
    }
    let names: Vec<String> = LAWS.iter().map(|s| s.to_string()).collect();
    let results = decide(&Checker::new(), instances, &names);
    let passed = results.iter().all(|r| r.passed());
    SuiteReport { seed, samples, mutation, results, passed }
}

/// Gate pairs `(u1, u2, v1, v2)` with `u2 u1 = v2 v1` up to a phase.
const SHUFFLES: [(&str, &str, &str, &str); 4] =
    [("X", "I", "I", "X"), ("H", "H", "I", "I"), ("Z", "X", "X", "Z"), ("H", "X", "Z", "H")];

/// A pair of terms related by `~` in every context, over `owned`.
fn strong_pair(g: &mut TermGen, owned: &[String]) -> (Process, Process) {
    let e = g.term(3, owned, &[]);
    match g.gen_range(0, 5) {
        0 => {
            let (u1, u2, v1, v2) = *g.pick(&SHUFFLES);
            let q = g.pick(owned).clone();
            let c = *g.pick(&CCHANS);
            let l = unitary(u1, &[q.as_str()], cout(c, Expr::num(0.0), unitary(u2, &[q.as_str()], e.clone())));
            let r = unitary(v1, &[q.as_str()], cout(c, Expr::num(0.0), unitary(v2, &[q.as_str()], e)));
            (l, r)
        }
        1 => (e.clone(), replace_random_subterm(g, &e, |s| sum(s.clone(), s.clone()))),
        2 => (e.clone(), replace_random_subterm(g, &e, |s| sum(s.clone(), nil()))),
        3 => (e.clone(), replace_random_subterm(g, &e, |s| par(s.clone(), nil()))),
        _ => {
            let f = g.term(3, owned, &[]);
            (sum(e.clone(), f.clone()), sum(f, e))
        }
    }
}

/// A pair related by weak bisimilarity in every context: one side has
/// extra silent identity steps.
fn weak_pair(g: &mut TermGen, owned: &[String]) -> (Process, Process) {
    if g.gen_bool(0.4) {
        return strong_pair(g, owned);
    }
    let e = g.term(3, owned, &[]);
    // padding must not change the free qubits, or an input prefix could
    // receive the padded qubit on one side only
    let used: Vec<String> = e.qv().into_iter().collect();
    if used.is_empty() {
        return strong_pair(g, owned);
    }
    let q = g.pick(&used).clone();
    let padded = if g.gen_bool(0.5) {
        unitary("I", &[q.as_str()], e.clone())
    } else {
        unitary("X", &[q.as_str()], unitary("X", &[q.as_str()], e.clone()))
    };
    (e, padded)
}

fn replace_random_subterm(g: &mut TermGen, p: &Process, f: impl Fn(&Process) -> Process) -> Process {
    let mut paths: Vec<Vec<usize>> = Vec::new();
    fn collect(p: &Process, path: &mut Vec<usize>, out: &mut Vec<Vec<usize>>) {
        out.push(path.clone());
        for (i, c) in p.children().into_iter().enumerate() {
            path.push(i);
            collect(c, path, out);
            path.pop();
        }
    }
    collect(p, &mut Vec::new(), &mut paths);
    let path = g.pick(&paths).clone();
    replace_at(p, &path, &f)
}

fn replace_at(p: &Process, path: &[usize], f: &impl Fn(&Process) -> Process) -> Process {
    match path.split_first() {
        None => f(p),
        Some((&i, rest)) => {
            let mut k = 0;
            p.map_children(|c| {
                let out = if k == i { replace_at(c, rest, f) } else { c.clone() };
                k += 1;
                out
            })
        }
    }
}

type Wrap = (String, Box<dyn Fn(Process) -> Process>);

/// The prefix and operator contexts a pair is placed in.
fn contexts(g: &mut TermGen, mode: Mode) -> Vec<Wrap> {
    let mut out: Vec<Wrap> = vec![
        ("c!v.[]".into(), Box::new(|p| cout("a", Expr::num(1.0), p))),
        ("c?x.[]".into(), Box::new(|p| cin("b", "xin", p))),
        ("qc c?q.[]".into(), Box::new(|p| qin("e", "rin", p))),
        ("qc c!q.[]".into(), Box::new(|p| qout("g", SPARE, p))),
        ("U[q].[]".into(), Box::new(|p| unitary("H", &["q0"], p))),
        ("M[q;x].[]".into(), Box::new(|p| measure("M01", &["q0"], "xm", p))),
        ("qbit q.[]".into(), Box::new(|p| qbit("qn", p))),
    ];
    let r = g.classical(2, &[]);
    out.push(("[] || R".into(), Box::new(move |p| par(p, r.clone()))));
    let f = g.relabeling();
    out.push(("[][f]".into(), Box::new(move |p| relabel(p, f.clone()))));
    if mode == Mode::Strong {
        let h = g.term(2, &["q0".to_string()], &[]);
        out.push(("[] + G".into(), Box::new(move |p| sum(p, h.clone()))));
    }
    out
}

/// Congruence of `mode` on `pairs` random related pairs.
pub fn congruence(pairs: usize, seed: u64, mode: Mode) -> SuiteReport {
    let checker = Checker::new();
    let tag = match mode {
        Mode::Strong => "~",
        Mode::Weak => "≈",
        Mode::Eq => "≃",
    };
    let mut instances: Vec<Instance> = Vec::new();
    let mut names: Vec<String> = Vec::new();
    let mut base = Vec::new();
    for i in 0..pairs {
        let mut g = TermGen::new(seed, 1_000_000 + i as u64);
        let n = g.gen_range(1, 4);
        let owned: Vec<String> = (0..n).map(|k| format!("q{k}")).collect();
        let (e, f) = if mode == Mode::Strong { strong_pair(&mut g, &owned) } else { weak_pair(&mut g, &owned) };
        let ctx = g.context(n, true);
        base.push((format!("pair {tag}"), i, e.clone(), f.clone(), ctx.clone(), mode));
        for (name, wrap) in contexts(&mut g, mode) {
            let name = format!("{tag} under {name}");
            if !names.contains(&name) {
                names.push(name.clone());
            }
            instances.push((name, i, wrap(e.clone()), wrap(f.clone()), ctx.clone(), mode));
        }
    }
    let mut all_names = vec![format!("pair {tag}")];
    all_names.extend(names);
    base.extend(instances);
    let results = decide(&checker, base, &all_names);
    let passed = results.iter().all(|r| r.passed());
    SuiteReport { seed, samples: pairs, mutation: None, results, passed }
}

/// For pairs with `E ≃ F`, checks `E + G ≈ F + G` for random `G`.
pub fn equality_sum(pairs: usize, seed: u64) -> SuiteReport {
    let checker = Checker::new();
    let mut instances: Vec<Instance> = Vec::new();
    for i in 0..pairs {
        let mut g = TermGen::new(seed, 2_000_000 + i as u64);
        let n = g.gen_range(1, 4);
        let owned: Vec<String> = (0..n).map(|k| format!("q{k}")).collect();
        let (e, f) = weak_pair(&mut g, &owned);
        // a leading prefix turns weak bisimilarity into equality
        let lead = |p: Process| cout("a", Expr::num(0.0), p);
        let (e, f) = (lead(e), lead(f));
        let ctx = g.context(n, false);
        let h = g.term(3, &owned, &[]);
        instances.push(("pair ≃".to_string(), i, e.clone(), f.clone(), ctx.clone(), Mode::Eq));
        instances.push(("E+G ≈ F+G".to_string(), i, sum(e, h.clone()), sum(f, h), ctx, Mode::Weak));
    }
    let names = vec!["pair ≃".to_string(), "E+G ≈ F+G".to_string()];
    let results = decide(&checker, instances, &names);
    let passed = results.iter().all(|r| r.passed());
    SuiteReport { seed, samples: pairs, mutation: None, results, passed }
}
