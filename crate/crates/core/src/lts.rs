//! Configurations, actions and distributions, the transition rules, and
//! bounded construction of the probabilistic labelled transition system.

use std::collections::{BTreeMap, HashMap, VecDeque};
use std::fmt;

use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;
use rayon::prelude::*;
use serde::Serialize;
use thiserror::Error;

use crate::ast::{Channel, ChannelKind, EvalError, Process, Real, Relabeling, Violation};
use crate::context::{ContextError, QContext};
use crate::linalg::{gates, states, Matrix, Observable, MATRIX_TOL};

#[derive(Clone, Debug, PartialEq, Eq, Hash, PartialOrd, Ord, Serialize)]
#[serde(tag = "kind", rename_all = "snake_case")]
pub enum Action {
    CIn { chan: String, value: Real },
    COut { chan: String, value: Real },
    QIn { chan: String, qvar: String },
    QOut { chan: String, qvar: String },
    Tau,
}

impl Action {
    /// `cn(alpha)`: the channel an action uses, `None` for tau.
    pub fn channel(&self) -> Option<Channel> {
        match self {
            Action::CIn { chan, .. } | Action::COut { chan, .. } => Some(Channel::classical(chan.clone())),
            Action::QIn { chan, .. } | Action::QOut { chan, .. } => Some(Channel::quantum(chan.clone())),
            Action::Tau => None,
        }
    }

    pub fn is_tau(&self) -> bool {
        matches!(self, Action::Tau)
    }

    pub fn relabel(&self, f: &Relabeling) -> Action {
        let c = |chan: &str| f.apply_name(ChannelKind::Classical, chan);
        let q = |chan: &str| f.apply_name(ChannelKind::Quantum, chan);
        match self {
            Action::CIn { chan, value } => Action::CIn { chan: c(chan), value: *value },
            Action::COut { chan, value } => Action::COut { chan: c(chan), value: *value },
            Action::QIn { chan, qvar } => Action::QIn { chan: q(chan), qvar: qvar.clone() },
            Action::QOut { chan, qvar } => Action::QOut { chan: q(chan), qvar: qvar.clone() },
            Action::Tau => Action::Tau,
        }
    }
}

impl fmt::Display for Action {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        match self {
            Action::CIn { chan, value } => write!(f, "{chan}?{value}"),
            Action::COut { chan, value } => write!(f, "{chan}!{value}"),
            Action::QIn { chan, qvar } => write!(f, "qc {chan}?{qvar}"),
            Action::QOut { chan, qvar } => write!(f, "qc {chan}!{qvar}"),
            Action::Tau => write!(f, "tau"),
        }
    }
}

#[derive(Debug, Clone, PartialEq, Error)]
pub enum LtsError {
    #[error("process has free classical variables: {0:?}")]
    NotClosed(Vec<String>),
    #[error("ill-formed process: {0}")]
    IllFormed(Violation),
    #[error("free quantum variable `{0}` is missing from the context")]
    MissingQvar(String),
    #[error("unknown gate `{0}`")]
    UnknownGate(String),
    #[error("unknown observable `{0}`")]
    UnknownObservable(String),
    #[error("`{name}` acts on {expected} qubits but is applied to {got}")]
    Arity { name: String, expected: usize, got: usize },
    #[error("reachable open input `{0}` (closed mode refuses environment input; use the open policy)")]
    OpenInput(String),
    #[error("{which} bound of {limit} exceeded")]
    BoundExceeded { which: Bound, limit: usize },
    #[error("combination weights must be positive and sum to 1")]
    BadWeights,
    #[error("action not enabled at nodes {0:?}")]
    NotEnabled(Vec<usize>),
    #[error("scheduler script: {0}")]
    Script(String),
    #[error(transparent)]
    Context(#[from] ContextError),
    #[error(transparent)]
    Eval(#[from] EvalError),
}

#[derive(Clone, Copy, Debug, PartialEq, Eq, Serialize)]
#[serde(rename_all = "snake_case")]
pub enum Bound {
    MaxNodes,
    MaxDepth,
}

impl fmt::Display for Bound {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        match self {
            Bound::MaxNodes => write!(f, "max-nodes"),
            Bound::MaxDepth => write!(f, "max-depth"),
        }
    }
}

/// A closed process paired with a context covering its free quantum variables.
#[derive(Clone, Debug)]
pub struct Configuration {
    pub process: Process,
    pub context: QContext,
}

impl Configuration {
    pub fn new(process: Process, context: QContext) -> Result<Self, LtsError> {
        let fv = process.fv();
        if !fv.is_empty() {
            return Err(LtsError::NotClosed(fv.into_iter().collect()));
        }
        process.check_wellformed().map_err(LtsError::IllFormed)?;
        if let Some(q) = process.qv().into_iter().find(|q| !context.contains(q)) {
            return Err(LtsError::MissingQvar(q));
        }
        Ok(Configuration { process, context })
    }

    /// Same term up to bound names and same context up to qubit order.
    pub fn same_as(&self, other: &Configuration, tol: f64) -> bool {
        self.process.alpha_normal() == other.process.alpha_normal() && self.context.context_equal(&other.context, tol)
    }
}

/// Finite-support distribution over configurations, with equal
/// configurations merged.
#[derive(Clone, Debug, Default)]
pub struct Distribution {
    points: Vec<(f64, Configuration)>,
}

impl Distribution {
    pub fn point(c: Configuration) -> Self {
        Distribution { points: vec![(1.0, c)] }
    }

    pub fn from_points(points: impl IntoIterator<Item = (f64, Configuration)>) -> Self {
        let mut merged: Vec<(f64, Configuration, Process)> = Vec::new();
        for (p, c) in points {
            let key = c.process.alpha_normal();
            match merged.iter_mut().find(|(_, d, k)| *k == key && d.context.context_equal(&c.context, MATRIX_TOL)) {
                Some(entry) => entry.0 += p,
                None => merged.push((p, c, key)),
            }
        }
        Distribution { points: merged.into_iter().map(|(p, c, _)| (p, c)).collect() }
    }

    pub fn points(&self) -> &[(f64, Configuration)] {
        &self.points
    }

    pub fn total(&self) -> f64 {
        self.points.iter().map(|(p, _)| p).sum()
    }

    /// Mass on configurations equal to `c`.
    pub fn mass_of(&self, c: &Configuration) -> f64 {
        self.points.iter().filter(|(_, d)| d.same_as(c, MATRIX_TOL)).map(|(p, _)| p).sum()
    }

    /// Same support (up to merging) with masses agreeing within `tol`.
    pub fn approx_eq(&self, other: &Distribution, tol: f64) -> bool {
        self.points.len() == other.points.len()
            && self.points.iter().all(|(p, c)| (other.mass_of(c) - p).abs() <= tol)
    }
}

/// `sum_i p_i mu_i`, merging equal support points.
pub fn combine_distributions(pairs: &[(f64, Distribution)]) -> Result<Distribution, LtsError> {
    let total: f64 = pairs.iter().map(|(p, _)| p).sum();
    if pairs.is_empty() || pairs.iter().any(|(p, _)| !(*p > 0.0 && *p <= 1.0 + MATRIX_TOL)) || (total - 1.0).abs() > MATRIX_TOL
    {
        return Err(LtsError::BadWeights);
    }
    Ok(Distribution::from_points(
        pairs.iter().flat_map(|(w, mu)| mu.points.iter().map(move |(p, c)| (w * p, c.clone()))),
    ))
}

#[derive(Clone, Debug)]
pub struct Transition {
    pub action: Action,
    pub target: Distribution,
}

/// Gates and observables by name.
#[derive(Clone, Debug)]
pub struct Env {
    pub gates: BTreeMap<String, Matrix>,
    pub observables: BTreeMap<String, Observable>,
}

impl Default for Env {
    fn default() -> Self {
        Env::standard()
    }
}

impl Env {
    /// Built-in gates plus `M01` (computational basis), `Mpm` (`|+>` gives 0,
    /// `|->` gives 1) and `M2` (two-qubit computational basis).
    pub fn standard() -> Self {
        let gates = gates::builtins().into_iter().map(|(n, m)| (n.to_string(), m)).collect();
        let pm = Observable {
            outcomes: vec![
                (0.0, states::ket_projector("+").expect("ket")),
                (1.0, states::ket_projector("-").expect("ket")),
            ],
        };
        let observables = [
            ("M01".to_string(), Observable::computational(1)),
            ("Mpm".to_string(), pm),
            ("M2".to_string(), Observable::computational(2)),
        ]
        .into_iter()
        .collect();
        Env { gates, observables }
    }

    pub fn gate(&self, name: &str) -> Result<&Matrix, LtsError> {
        self.gates.get(name).ok_or_else(|| LtsError::UnknownGate(name.to_string()))
    }

    pub fn observable(&self, name: &str) -> Result<&Observable, LtsError> {
        self.observables.get(name).ok_or_else(|| LtsError::UnknownObservable(name.to_string()))
    }
}

/// How a quantum input from the environment extends the context.
#[derive(Clone, Debug)]
pub enum QInputRecipe {
    /// The new qubit arrives in this single-qubit state, uncorrelated.
    Product(Matrix),
    /// The joint state of the new qubit and the current context; used only
    /// when it reduces to the current state.
    Joint(Matrix),
}

impl QInputRecipe {
    fn extend(&self, ctx: &QContext, r: &str) -> Option<QContext> {
        match self {
            QInputRecipe::Product(tau) => ctx.extend_product(r, tau).ok(),
            QInputRecipe::Joint(sigma) => ctx.extend_with_input(r, sigma).ok(),
        }
    }
}

/// Finite stand-in for the environment's inputs.
#[derive(Clone, Debug)]
pub struct InputPolicy {
    pub domains: BTreeMap<String, Vec<f64>>,
    pub default_domain: Vec<f64>,
    pub quantum_inputs: Vec<QInputRecipe>,
    /// Refuse configurations that can take input from the environment.
    pub closed_only: bool,
}

impl Default for InputPolicy {
    fn default() -> Self {
        InputPolicy {
            domains: BTreeMap::new(),
            default_domain: vec![0.0, 1.0, 2.0, 3.0],
            quantum_inputs: ["0", "1", "+"]
                .iter()
                .map(|k| QInputRecipe::Product(states::ket_projector(k).expect("ket")))
                .collect(),
            closed_only: true,
        }
    }
}

impl InputPolicy {
    pub fn open() -> Self {
        InputPolicy { closed_only: false, ..InputPolicy::default() }
    }

    pub fn domain(&self, chan: &str) -> &[f64] {
        self.domains.get(chan).map(|d| d.as_slice()).unwrap_or(&self.default_domain)
    }
}

#[derive(Clone, Copy, Debug)]
pub struct Bounds {
    pub max_nodes: usize,
    pub max_depth: usize,
}

impl Default for Bounds {
    fn default() -> Self {
        Bounds { max_nodes: 100_000, max_depth: 10_000 }
    }
}

/// A move of a subterm before the environment has been consulted.
enum Step {
    Done { action: Action, targets: Vec<(f64, Process, QContext)> },
    /// Classical input; `residual` still has `var` free.
    CIn { chan: String, var: String, residual: Process },
    /// Quantum input of a fresh qubit `r` (already substituted into `residual`).
    QInFresh { chan: String, r: String, residual: Process },
}

impl Step {
    fn channel(&self) -> Option<Channel> {
        match self {
            Step::Done { action, .. } => action.channel(),
            Step::CIn { chan, .. } => Some(Channel::classical(chan.clone())),
            Step::QInFresh { chan, .. } => Some(Channel::quantum(chan.clone())),
        }
    }

    fn map_residual(self, f: impl Fn(Process) -> Process) -> Step {
        match self {
            Step::Done { action, targets } => {
                Step::Done { action, targets: targets.into_iter().map(|(p, e, c)| (p, f(e), c)).collect() }
            }
            Step::CIn { chan, var, residual } => Step::CIn { chan, var, residual: f(residual) },
            Step::QInFresh { chan, r, residual } => Step::QInFresh { chan, r, residual: f(residual) },
        }
    }
}

struct Engine<'a> {
    env: &'a Env,
    fresh: String,
    apply_restriction: bool,
}

/// Smallest generated name `#k` not used in the context.
fn fresh_name(ctx: &QContext) -> String {
    (0..).map(|k| format!("#{k}")).find(|n| !ctx.contains(n)).expect("unbounded names")
}

impl Engine<'_> {
    fn steps(&self, p: &Process, ctx: &QContext) -> Result<Vec<Step>, LtsError> {
        Ok(match p {
            Process::Nil => vec![],
            Process::CInput { chan, var, body } => {
                vec![Step::CIn { chan: chan.clone(), var: var.clone(), residual: (**body).clone() }]
            }
            Process::COutput { chan, value, body } => vec![Step::Done {
                action: Action::COut { chan: chan.clone(), value: Real(value.eval()?) },
                targets: vec![(1.0, (**body).clone(), ctx.clone())],
            }],
            Process::QbitNew { var, body } => {
                let next = ctx.new_qubit(&self.fresh)?;
                vec![Step::Done { action: Action::Tau, targets: vec![(1.0, body.subst_quantum(var, &self.fresh), next)] }]
            }
            Process::QInput { chan, var, body } => {
                let mut out = vec![Step::QInFresh {
                    chan: chan.clone(),
                    r: self.fresh.clone(),
                    residual: body.subst_quantum(var, &self.fresh),
                }];
                let mut owned = body.qv();
                owned.remove(var);
                for r in ctx.vars().iter().filter(|r| !owned.contains(*r)) {
                    if r == var {
                        log::debug!("quantum input on {chan} re-binds `{r}`, a variable named by its own binder");
                    }
                    out.push(Step::Done {
                        action: Action::QIn { chan: chan.clone(), qvar: r.clone() },
                        targets: vec![(1.0, body.subst_quantum(var, r), ctx.clone())],
                    });
                }
                out
            }
            Process::QOutput { chan, var, body } => vec![Step::Done {
                action: Action::QOut { chan: chan.clone(), qvar: var.clone() },
                targets: vec![(1.0, (**body).clone(), ctx.clone())],
            }],
            Process::Unitary { gate, qvars, body } => {
                let u = self.env.gate(gate)?;
                if u.rows() != 1 << qvars.len() {
                    return Err(LtsError::Arity {
                        name: gate.clone(),
                        expected: crate::linalg::qubit_count(u.rows()).unwrap_or(0),
                        got: qvars.len(),
                    });
                }
                let next = ctx.apply_unitary(u, qvars)?;
                vec![Step::Done { action: Action::Tau, targets: vec![(1.0, (**body).clone(), next)] }]
            }
            Process::Measure { observable, qvars, var, body } => {
                let obs = self.env.observable(observable)?;
                if obs.arity() != qvars.len() {
                    return Err(LtsError::Arity { name: observable.clone(), expected: obs.arity(), got: qvars.len() });
                }
                let targets = ctx
                    .measure(obs, qvars)?
                    .into_iter()
                    .map(|o| (o.prob, body.subst_classical(var, o.value), o.context))
                    .collect();
                vec![Step::Done { action: Action::Tau, targets }]
            }
            Process::Sum(a, b) => {
                let mut out = self.steps(a, ctx)?;
                out.extend(self.steps(b, ctx)?);
                out
            }
            Process::Parallel(a, b) => self.parallel_steps(a, b, ctx)?,
            Process::Relabel { body, relabeling } => self
                .steps(body, ctx)?
                .into_iter()
                .map(|s| {
                    let wrap = |e: Process| Process::Relabel { body: Box::new(e), relabeling: relabeling.clone() };
                    match s {
                        Step::Done { action, targets } => Step::Done {
                            action: action.relabel(relabeling),
                            targets: targets.into_iter().map(|(p, e, c)| (p, wrap(e), c)).collect(),
                        },
                        Step::CIn { chan, var, residual } => Step::CIn {
                            chan: relabeling.apply_name(ChannelKind::Classical, &chan),
                            var,
                            residual: wrap(residual),
                        },
                        Step::QInFresh { chan, r, residual } => Step::QInFresh {
                            chan: relabeling.apply_name(ChannelKind::Quantum, &chan),
                            r,
                            residual: wrap(residual),
                        },
                    }
                })
                .collect(),
            Process::Restrict { body, chans } => self
                .steps(body, ctx)?
                .into_iter()
                .filter(|s| !self.apply_restriction || s.channel().is_none_or(|c| !chans.contains(&c)))
                .map(|s| s.map_residual(|e| Process::Restrict { body: Box::new(e), chans: chans.clone() }))
                .collect(),
            Process::If { cond, body } => {
                if cond.eval()? {
                    self.steps(body, ctx)?
                } else {
                    vec![]
                }
            }
        })
    }

    fn parallel_steps(&self, a: &Process, b: &Process, ctx: &QContext) -> Result<Vec<Step>, LtsError> {
        let sa = self.steps(a, ctx)?;
        let sb = self.steps(b, ctx)?;
        let (qa, qb) = (a.qv(), b.qv());
        let mut out = Vec::new();

        let mut sync = |left: &[Step], right: &[Step], left_first: bool| {
            let join = |x: Process, y: Process| {
                if left_first {
                    Process::Parallel(Box::new(x), Box::new(y))
                } else {
                    Process::Parallel(Box::new(y), Box::new(x))
                }
            };
            for s1 in left {
                for s2 in right {
                    match (s1, s2) {
                        (Step::CIn { chan, var, residual }, Step::Done { action: Action::COut { chan: c2, value }, targets })
                            if chan == c2 =>
                        {
                            let (_, r2, _) = &targets[0];
                            out.push(Step::Done {
                                action: Action::Tau,
                                targets: vec![(1.0, join(residual.subst_classical(var, value.0), r2.clone()), ctx.clone())],
                            });
                        }
                        (
                            Step::Done { action: Action::QIn { chan, qvar }, targets: t1 },
                            Step::Done { action: Action::QOut { chan: c2, qvar: q2 }, targets: t2 },
                        ) if chan == c2 && qvar == q2 => {
                            out.push(Step::Done {
                                action: Action::Tau,
                                targets: vec![(1.0, join(t1[0].1.clone(), t2[0].1.clone()), ctx.clone())],
                            });
                        }
                        _ => {}
                    }
                }
            }
        };
        sync(&sa, &sb, true);
        sync(&sb, &sa, false);

        let interleave = |steps: Vec<Step>, other_qv: &std::collections::BTreeSet<String>, other: &Process, left: bool| {
            steps
                .into_iter()
                .filter(|s| match s {
                    Step::Done { action: Action::QIn { qvar, .. }, .. } => !other_qv.contains(qvar),
                    _ => true,
                })
                .map(|s| {
                    s.map_residual(|e| {
                        if left {
                            Process::Parallel(Box::new(e), Box::new(other.clone()))
                        } else {
                            Process::Parallel(Box::new(other.clone()), Box::new(e))
                        }
                    })
                })
                .collect::<Vec<_>>()
        };
        let mut inter = interleave(sa, &qb, b, true);
        inter.extend(interleave(sb, &qa, a, false));
        inter.extend(out);
        Ok(inter)
    }
}

/// All transitions of a configuration under the input policy. A stuck
/// configuration yields the empty list.
pub fn transitions(c: &Configuration, env: &Env, policy: &InputPolicy) -> Result<Vec<Transition>, LtsError> {
    let engine = Engine { env, fresh: fresh_name(&c.context), apply_restriction: true };
    let mut out: Vec<Transition> = Vec::new();
    let mut push = |t: Transition| {
        if !out.iter().any(|u| u.action == t.action && u.target.approx_eq(&t.target, MATRIX_TOL)) {
            out.push(t);
        }
    };
    for step in engine.steps(&c.process, &c.context)? {
        match step {
            Step::Done { action, targets } => {
                let target = Distribution::from_points(
                    targets.into_iter().map(|(p, process, context)| (p, Configuration { process, context })),
                );
                push(Transition { action, target });
            }
            Step::CIn { chan, var, residual } => {
                if policy.closed_only {
                    return Err(LtsError::OpenInput(format!("{chan}?{var}")));
                }
                for &v in policy.domain(&chan) {
                    let process = residual.subst_classical(&var, v);
                    push(Transition {
                        action: Action::CIn { chan: chan.clone(), value: Real(v) },
                        target: Distribution::point(Configuration { process, context: c.context.clone() }),
                    });
                }
            }
            Step::QInFresh { chan, r, residual } => {
                if policy.closed_only {
                    return Err(LtsError::OpenInput(format!("qc {chan}?{r}")));
                }
                for recipe in &policy.quantum_inputs {
                    if let Some(context) = recipe.extend(&c.context, &r) {
                        push(Transition {
                            action: Action::QIn { chan: chan.clone(), qvar: r.clone() },
                            target: Distribution::point(Configuration { process: residual.clone(), context }),
                        });
                    }
                }
            }
        }
    }
    Ok(out)
}

/// Visible actions the term could perform if no restriction applied; used to
/// explain why a configuration is stuck.
pub fn blocked_actions(c: &Configuration, env: &Env) -> Result<Vec<String>, LtsError> {
    let engine = Engine { env, fresh: fresh_name(&c.context), apply_restriction: false };
    let mut out: Vec<String> = engine
        .steps(&c.process, &c.context)?
        .into_iter()
        .filter_map(|s| match s {
            Step::Done { action, .. } if !action.is_tau() => Some(action.to_string()),
            Step::CIn { chan, .. } => Some(format!("{chan}?")),
            Step::QInFresh { chan, .. } => Some(format!("qc {chan}?")),
            _ => None,
        })
        .collect();
    out.sort();
    out.dedup();
    Ok(out)
}

#[derive(Clone, Debug, PartialEq)]
pub struct Edge {
    pub action: Action,
    /// `(node, probability)` pairs.
    pub targets: Vec<(usize, f64)>,
}

/// A finite explored transition system.
#[derive(Clone, Debug)]
pub struct Lts {
    nodes: Vec<Configuration>,
    canonical: Vec<QContext>,
    depth: Vec<usize>,
    edges: Vec<Vec<Edge>>,
    roots: Vec<usize>,
    index: HashMap<(Process, Vec<String>), Vec<usize>>,
}

impl Lts {
    pub fn len(&self) -> usize {
        self.nodes.len()
    }

    pub fn is_empty(&self) -> bool {
        self.nodes.is_empty()
    }

    pub fn node(&self, i: usize) -> &Configuration {
        &self.nodes[i]
    }

    pub fn nodes(&self) -> &[Configuration] {
        &self.nodes
    }

    pub fn edges(&self, i: usize) -> &[Edge] {
        &self.edges[i]
    }

    pub fn roots(&self) -> &[usize] {
        &self.roots
    }

    pub fn depth(&self, i: usize) -> usize {
        self.depth[i]
    }

    pub fn is_stuck(&self, i: usize) -> bool {
        self.edges[i].is_empty()
    }

    pub fn edge_count(&self) -> usize {
        self.edges.iter().map(|e| e.len()).sum()
    }

    /// Node holding a configuration equal to `c`, if explored.
    pub fn find(&self, c: &Configuration) -> Option<usize> {
        let canon = c.context.canonical();
        let key = (c.process.alpha_normal(), canon.vars().to_vec());
        self.index
            .get(&key)?
            .iter()
            .copied()
            .find(|&i| self.canonical[i].rho().approx_eq(canon.rho(), MATRIX_TOL))
    }

    fn insert(&mut self, c: Configuration, depth: usize) -> (usize, bool) {
        if let Some(i) = self.find(&c) {
            return (i, false);
        }
        let canon = c.context.canonical();
        let key = (c.process.alpha_normal(), canon.vars().to_vec());
        let id = self.nodes.len();
        self.index.entry(key).or_default().push(id);
        self.nodes.push(c);
        self.canonical.push(canon);
        self.depth.push(depth);
        self.edges.push(Vec::new());
        (id, true)
    }
}

/// Breadth-first exploration from one or more roots into a joint system.
/// Transitions of each frontier level are computed in parallel and inserted
/// in a fixed order, so the result does not depend on scheduling.
pub fn build_lts(roots: &[Configuration], env: &Env, policy: &InputPolicy, bounds: Bounds) -> Result<Lts, LtsError> {
    let mut lts = Lts {
        nodes: Vec::new(),
        canonical: Vec::new(),
        depth: Vec::new(),
        edges: Vec::new(),
        roots: Vec::new(),
        index: HashMap::new(),
    };
    let mut frontier = Vec::new();
    for r in roots {
        let (id, new) = lts.insert(r.clone(), 0);
        lts.roots.push(id);
        if new {
            frontier.push(id);
        }
    }
    if lts.len() > bounds.max_nodes {
        return Err(LtsError::BoundExceeded { which: Bound::MaxNodes, limit: bounds.max_nodes });
    }
    let mut level = 0;
    while !frontier.is_empty() {
        let computed: Vec<Result<Vec<Transition>, LtsError>> =
            frontier.par_iter().map(|&i| transitions(&lts.nodes[i], env, policy)).collect();
        let mut next = Vec::new();
        for (&i, ts) in frontier.iter().zip(computed) {
            let ts = ts?;
            if !ts.is_empty() && level >= bounds.max_depth {
                return Err(LtsError::BoundExceeded { which: Bound::MaxDepth, limit: bounds.max_depth });
            }
            let mut edges = Vec::with_capacity(ts.len());
            for t in ts {
                let mut targets: Vec<(usize, f64)> = Vec::new();
                for (p, c) in t.target.points {
                    let (id, new) = lts.insert(c, level + 1);
                    if new {
                        if lts.len() > bounds.max_nodes {
                            return Err(LtsError::BoundExceeded { which: Bound::MaxNodes, limit: bounds.max_nodes });
                        }
                        next.push(id);
                    }
                    match targets.iter_mut().find(|(n, _)| *n == id) {
                        Some(entry) => entry.1 += p,
                        None => targets.push((id, p)),
                    }
                }
                let edge = Edge { action: t.action, targets };
                if !edges.contains(&edge) {
                    edges.push(edge);
                }
            }
            lts.edges[i] = edges;
        }
        frontier = next;
        level += 1;
    }
    Ok(lts)
}

/// The ordinary `action`-successors of `node`; their convex hull is the set
/// of combined transitions.
pub fn combined_transitions<'a>(lts: &'a Lts, node: usize, action: &Action) -> Vec<&'a [(usize, f64)]> {
    lts.edges(node).iter().filter(|e| &e.action == action).map(|e| e.targets.as_slice()).collect()
}

/// Distributions reachable from `mu` by one `action`-step of every support
/// point, choosing one ordinary transition per point. At most `cap`
/// choices are enumerated.
pub fn lift_transition(lts: &Lts, mu: &[(usize, f64)], action: &Action, cap: usize) -> Result<Vec<Vec<(usize, f64)>>, LtsError> {
    let options: Vec<Vec<&[(usize, f64)]>> = mu.iter().map(|&(n, _)| combined_transitions(lts, n, action)).collect();
    let blocking: Vec<usize> = mu.iter().zip(&options).filter(|(_, o)| o.is_empty()).map(|(&(n, _), _)| n).collect();
    if !blocking.is_empty() {
        return Err(LtsError::NotEnabled(blocking));
    }
    let mut out = Vec::new();
    let mut choice = vec![0usize; mu.len()];
    loop {
        let mut nu: Vec<(usize, f64)> = Vec::new();
        for (k, &(_, w)) in mu.iter().enumerate() {
            for &(t, p) in options[k][choice[k]] {
                match nu.iter_mut().find(|(n, _)| *n == t) {
                    Some(e) => e.1 += w * p,
                    None => nu.push((t, w * p)),
                }
            }
        }
        if !out.contains(&nu) {
            out.push(nu);
        }
        if out.len() >= cap {
            break;
        }
        let mut k = 0;
        while k < choice.len() {
            choice[k] += 1;
            if choice[k] < options[k].len() {
                break;
            }
            choice[k] = 0;
            k += 1;
        }
        if k == choice.len() {
            break;
        }
    }
    Ok(out)
}

/// Follows the first enabled edge at every node until all mass sits on
/// stuck nodes; returns that terminal distribution.
pub fn terminal_distribution(lts: &Lts, start: usize) -> Vec<(usize, f64)> {
    let mut mass = vec![0.0; lts.len()];
    mass[start] = 1.0;
    let mut order: Vec<usize> = (0..lts.len()).collect();
    order.sort_by_key(|&i| lts.depth(i));
    // depth strictly increases along the first edges only for acyclic
    // systems; iterate until no mass moves
    loop {
        let mut moved = false;
        for &i in &order {
            if mass[i] > 0.0 && !lts.is_stuck(i) {
                let m = std::mem::take(&mut mass[i]);
                for &(t, p) in &lts.edges(i)[0].targets {
                    mass[t] += m * p;
                }
                moved = true;
            }
        }
        if !moved {
            break;
        }
    }
    mass.iter().enumerate().filter(|(_, &m)| m > 0.0).map(|(i, &m)| (i, m)).collect()
}

#[derive(Clone, Debug)]
pub enum Scheduler {
    First,
    Random,
    /// Transition indices to take in order.
    Script(Vec<usize>),
}

#[derive(Clone, Debug)]
pub struct TraceStep {
    pub from: Configuration,
    pub enabled: Vec<Action>,
    pub chosen: usize,
    pub action: Action,
    pub distribution: Vec<(f64, Configuration)>,
    pub sampled: usize,
}

#[derive(Clone, Debug)]
pub enum TraceEnd {
    /// No prefix remains.
    Terminated,
    /// Something remains but cannot move; the actions blocked by restriction.
    Stuck { blocked: Vec<String> },
    /// The step limit was reached.
    StepLimit,
}

#[derive(Clone, Debug)]
pub struct Trace {
    pub steps: Vec<TraceStep>,
    pub last: Configuration,
    pub end: TraceEnd,
}

fn is_finished(p: &Process) -> bool {
    match p {
        Process::Nil => true,
        Process::Sum(a, b) | Process::Parallel(a, b) => is_finished(a) && is_finished(b),
        Process::Relabel { body, .. } | Process::Restrict { body, .. } => is_finished(body),
        _ => false,
    }
}

/// Executes one path, resolving nondeterminism by `scheduler` and sampling
/// probabilistic branches with a seeded generator.
pub fn run_trace(
    c0: &Configuration,
    env: &Env,
    policy: &InputPolicy,
    scheduler: &Scheduler,
    seed: u64,
    max_steps: usize,
) -> Result<Trace, LtsError> {
    let mut rng = ChaCha8Rng::seed_from_u64(seed);
    let mut current = c0.clone();
    let mut steps = Vec::new();
    let mut script = match scheduler {
        Scheduler::Script(s) => s.iter().copied().collect::<VecDeque<_>>(),
        _ => VecDeque::new(),
    };
    for _ in 0..max_steps {
        let ts = transitions(&current, env, policy)?;
        if ts.is_empty() {
            let end = if is_finished(&current.process) {
                TraceEnd::Terminated
            } else {
                TraceEnd::Stuck { blocked: blocked_actions(&current, env)? }
            };
            return Ok(Trace { steps, last: current, end });
        }
        let chosen = match scheduler {
            Scheduler::First => 0,
            Scheduler::Random => rng.gen_range(0..ts.len()),
            Scheduler::Script(_) => {
                let k = script.pop_front().ok_or_else(|| LtsError::Script("script exhausted".into()))?;
                if k >= ts.len() {
                    return Err(LtsError::Script(format!("index {k} but only {} transitions enabled", ts.len())));
                }
                k
            }
        };
        let enabled = ts.iter().map(|t| t.action.clone()).collect();
        let t = ts.into_iter().nth(chosen).expect("chosen index in range");
        let u: f64 = rng.gen();
        let mut acc = 0.0;
        let mut sampled = t.target.points.len() - 1;
        for (k, (p, _)) in t.target.points.iter().enumerate() {
            acc += p;
            if u < acc {
                sampled = k;
                break;
            }
        }
        let next = t.target.points[sampled].1.clone();
        steps.push(TraceStep {
            from: current,
            enabled,
            chosen,
            action: t.action,
            distribution: t.target.points,
            sampled,
        });
        current = next;
    }
    Ok(Trace { steps, last: current, end: TraceEnd::StepLimit })
}
