//! Strong and weak probabilistic bisimilarity and the equality relation,
//! decided by partition refinement over a finite transition system.
//!
//! Matching a move against a combined transition is a convex-hull query on
//! class vectors; matching against a weak transition is a flow LP whose
//! feasible solutions are memoryless randomised schedulers.

use std::collections::BTreeMap;
use std::sync::Mutex;

use rayon::prelude::*;
use serde::Serialize;
use thiserror::Error;

use crate::context::QContext;
use crate::lp::{convex_hull_member, feasible, LinearProgram, LpError, LP_TOL};
use crate::lts::{build_lts, Bounds, Configuration, Env, InputPolicy, Lts, LtsError};
use crate::linalg::MATRIX_TOL;

#[derive(Debug, Clone, PartialEq, Error)]
pub enum BisimError {
    #[error(transparent)]
    Lp(#[from] LpError),
    #[error(transparent)]
    Lts(#[from] LtsError),
    #[error("node {0} is not in the system")]
    BadNode(usize),
}

#[derive(Clone, Copy, Debug, PartialEq, Eq, Serialize)]
#[serde(rename_all = "lowercase")]
pub enum Mode {
    Strong,
    Weak,
    Eq,
}

impl std::str::FromStr for Mode {
    type Err = String;
    fn from_str(s: &str) -> Result<Self, String> {
        match s {
            "strong" => Ok(Mode::Strong),
            "weak" => Ok(Mode::Weak),
            "eq" => Ok(Mode::Eq),
            other => Err(format!("unknown mode `{other}` (expected strong, weak or eq)")),
        }
    }
}

#[derive(Clone, Debug, PartialEq)]
pub struct PEdge {
    pub label: usize,
    pub tau: bool,
    pub targets: Vec<(usize, f64)>,
}

/// A probabilistic transition system with interned labels and a context
/// class per node; the input to every checker here.
#[derive(Clone, Debug, Default)]
pub struct ProbSystem {
    pub labels: Vec<String>,
    pub ctx_class: Vec<usize>,
    pub edges: Vec<Vec<PEdge>>,
}

/// Groups contexts by equality up to qubit order. Each context joins the
/// class of the first representative it equals.
pub fn context_classes<'a>(contexts: impl IntoIterator<Item = &'a QContext>) -> Vec<usize> {
    let mut reps: Vec<&QContext> = Vec::new();
    contexts
        .into_iter()
        .map(|c| match reps.iter().position(|r| r.context_equal(c, MATRIX_TOL)) {
            Some(k) => k,
            None => {
                reps.push(c);
                reps.len() - 1
            }
        })
        .collect()
}

impl ProbSystem {
    pub fn from_lts(lts: &Lts) -> Self {
        let mut labels: Vec<String> = Vec::new();
        let mut ids: BTreeMap<String, usize> = BTreeMap::new();
        let mut edges = Vec::with_capacity(lts.len());
        for i in 0..lts.len() {
            edges.push(
                lts.edges(i)
                    .iter()
                    .map(|e| {
                        let name = e.action.to_string();
                        let label = *ids.entry(name.clone()).or_insert_with(|| {
                            labels.push(name);
                            labels.len() - 1
                        });
                        PEdge { label, tau: e.action.is_tau(), targets: e.targets.clone() }
                    })
                    .collect(),
            );
        }
        let ctx_class = context_classes(lts.nodes().iter().map(|c| &c.context));
        ProbSystem { labels, ctx_class, edges }
    }

    pub fn len(&self) -> usize {
        self.edges.len()
    }

    pub fn is_empty(&self) -> bool {
        self.edges.is_empty()
    }

    pub fn is_stuck(&self, i: usize) -> bool {
        self.edges[i].is_empty()
    }

    /// Gives every stuck node a self-loop labelled by its context class.
    /// Weak bisimilarity of the original system is plain weak bisimilarity
    /// of the result, provided the system has no tau cycles: clause (2)
    /// becomes ordinary move matching.
    pub fn with_done_moves(&self) -> ProbSystem {
        let mut out = self.clone();
        let mut done_label: BTreeMap<usize, usize> = BTreeMap::new();
        for i in 0..self.len() {
            if self.is_stuck(i) {
                let k = self.ctx_class[i];
                let label = *done_label.entry(k).or_insert_with(|| {
                    out.labels.push(format!("done[ctx {k}]"));
                    out.labels.len() - 1
                });
                out.edges[i].push(PEdge { label, tau: false, targets: vec![(i, 1.0)] });
            }
        }
        out
    }

    fn reachable(&self, src: usize) -> Vec<bool> {
        let mut seen = vec![false; self.len()];
        let mut stack = vec![src];
        seen[src] = true;
        while let Some(u) = stack.pop() {
            for e in &self.edges[u] {
                for &(t, _) in &e.targets {
                    if !seen[t] {
                        seen[t] = true;
                        stack.push(t);
                    }
                }
            }
        }
        seen
    }

    fn check_node(&self, i: usize) -> Result<(), BisimError> {
        if i < self.len() {
            Ok(())
        } else {
            Err(BisimError::BadNode(i))
        }
    }
}

/// Renumbers blocks by first occurrence; returns the block count.
fn normalize(p: &mut [usize]) -> usize {
    let mut map: BTreeMap<usize, usize> = BTreeMap::new();
    for b in p.iter_mut() {
        let next = map.len();
        *b = *map.entry(*b).or_insert(next);
    }
    map.len()
}

pub fn blocks_of(partition: &[usize]) -> Vec<Vec<usize>> {
    let n = partition.iter().copied().max().map_or(0, |m| m + 1);
    let mut out = vec![Vec::new(); n];
    for (i, &b) in partition.iter().enumerate() {
        out[b].push(i);
    }
    out.retain(|b| !b.is_empty());
    out
}

/// Mass per block.
pub fn class_vector(targets: &[(usize, f64)], partition: &[usize], nblocks: usize) -> Vec<f64> {
    let mut v = vec![0.0; nblocks];
    for &(t, p) in targets {
        v[partition[t]] += p;
    }
    v
}

fn vec_close(a: &[f64], b: &[f64], tol: f64) -> bool {
    a.iter().zip(b).all(|(x, y)| (x - y).abs() <= tol)
}

/// `mu` and `nu` give every block the same mass, within `tol`.
pub fn dist_equiv(mu: &[(usize, f64)], nu: &[(usize, f64)], partition: &[usize], tol: f64) -> bool {
    let n = partition.iter().copied().max().map_or(0, |m| m + 1);
    vec_close(&class_vector(mu, partition, n), &class_vector(nu, partition, n), tol)
}

/// The label of a weak query.
#[derive(Clone, Copy, Debug, PartialEq, Eq)]
pub enum WeakLabel {
    /// Zero or more tau steps.
    TauHat,
    /// `tau* a tau*` for a visible label.
    Visible(usize),
    /// `tau* tau tau*`: at least one real tau.
    StrictTau,
}

/// A feasible flow: mass through each edge per phase, through transfer
/// edges, and absorbed per node and phase.
#[derive(Clone, Debug, Default, PartialEq)]
pub struct FlowWitness {
    pub phases: usize,
    /// `(phase, node, edge index, flow)`.
    pub edge_flow: Vec<(usize, usize, usize, f64)>,
    /// `(node, edge index, flow)` from phase 0 into phase 1.
    pub transfer: Vec<(usize, usize, f64)>,
    /// `(phase, node, mass)`.
    pub absorb: Vec<(usize, usize, f64)>,
}

#[derive(Clone, Debug)]
pub struct WeakReach {
    pub witness: Option<FlowWitness>,
    /// Phase-one residual of the LP.
    pub residual: f64,
    /// Constraint rows and variables of the LP.
    pub size: (usize, usize),
}

impl WeakReach {
    pub fn is_feasible(&self) -> bool {
        self.witness.is_some()
    }
}

enum Var {
    Edge(usize, usize, usize),
    Transfer(usize, usize),
    Absorb(usize, usize),
}

/// Can `source` reach, by a weak transition with `label`, a distribution
/// whose class vector under `partition` is `target`?
pub fn weak_reach_feasible(
    sys: &ProbSystem,
    source: usize,
    label: WeakLabel,
    target: &[f64],
    partition: &[usize],
    tol: f64,
) -> Result<WeakReach, BisimError> {
    sys.check_node(source)?;
    let reach = sys.reachable(source);
    let nodes: Vec<usize> = (0..sys.len()).filter(|&u| reach[u]).collect();
    let phases = if label == WeakLabel::TauHat { 1 } else { 2 };
    let absorb_phase = phases - 1;
    let is_transfer = |e: &PEdge| match label {
        WeakLabel::TauHat => false,
        WeakLabel::Visible(l) => e.label == l,
        WeakLabel::StrictTau => e.tau,
    };

    let mut vars = Vec::new();
    for ph in 0..phases {
        for &u in &nodes {
            for (k, e) in sys.edges[u].iter().enumerate() {
                if e.tau {
                    vars.push(Var::Edge(ph, u, k));
                }
            }
        }
    }
    if phases == 2 {
        for &u in &nodes {
            for (k, e) in sys.edges[u].iter().enumerate() {
                if is_transfer(e) {
                    vars.push(Var::Transfer(u, k));
                }
            }
        }
    }
    for &u in &nodes {
        vars.push(Var::Absorb(absorb_phase, u));
    }

    let mut pos = BTreeMap::new();
    for &u in &nodes {
        pos.insert(u, pos.len());
    }
    let nn = nodes.len();
    let row = |ph: usize, u: usize| ph * nn + pos[&u];
    let nblocks = target.len();
    let mut rows: Vec<Vec<(usize, f64)>> = vec![Vec::new(); phases * nn + nblocks];
    for (j, v) in vars.iter().enumerate() {
        match *v {
            Var::Edge(ph, u, k) => {
                rows[row(ph, u)].push((j, 1.0));
                for &(t, p) in &sys.edges[u][k].targets {
                    rows[row(ph, t)].push((j, -p));
                }
            }
            Var::Transfer(u, k) => {
                rows[row(0, u)].push((j, 1.0));
                for &(t, p) in &sys.edges[u][k].targets {
                    rows[row(1, t)].push((j, -p));
                }
            }
            Var::Absorb(ph, u) => {
                rows[row(ph, u)].push((j, 1.0));
                rows[phases * nn + partition[u]].push((j, 1.0));
            }
        }
    }
    let mut lp = LinearProgram::new(vars.len());
    for ph in 0..phases {
        for &u in &nodes {
            let rhs = if ph == 0 && u == source { 1.0 } else { 0.0 };
            lp.add_sparse(&rows[row(ph, u)], rhs);
        }
    }
    for (b, &t) in target.iter().enumerate() {
        lp.add_sparse(&rows[phases * nn + b], t);
    }
    let size = (lp.num_constraints(), lp.num_vars());
    let result = feasible(&lp, tol)?;
    let witness = result.witness().map(|x| {
        let mut w = FlowWitness { phases, ..FlowWitness::default() };
        for (v, &val) in vars.iter().zip(x) {
            if val <= 0.0 {
                continue;
            }
            match *v {
                Var::Edge(ph, u, k) => w.edge_flow.push((ph, u, k, val)),
                Var::Transfer(u, k) => w.transfer.push((u, k, val)),
                Var::Absorb(ph, u) => w.absorb.push((ph, u, val)),
            }
        }
        w
    });
    Ok(WeakReach { witness, residual: result.residual, size })
}

/// An outgoing choice of a (node, phase): `(edge, target phase, is the
/// visible step)` and its flow, or `None` for absorption.
type Choice = (Option<(usize, usize, bool)>, f64);

/// Absorption distribution over nodes when the scheduler encoded by `w`
/// starts at `start` in `phase`: every (node, phase) splits its mass in
/// proportion to its outgoing flow.
pub fn absorption_from(sys: &ProbSystem, w: &FlowWitness, start: usize, phase: usize) -> Vec<(usize, f64)> {
    let n = sys.len();
    let mut out_total = vec![vec![0.0; n]; w.phases];
    let mut choices: Vec<Vec<Vec<Choice>>> = vec![vec![Vec::new(); n]; w.phases];
    for &(ph, u, k, f) in &w.edge_flow {
        out_total[ph][u] += f;
        choices[ph][u].push((Some((k, ph, false)), f));
    }
    for &(u, k, f) in &w.transfer {
        out_total[0][u] += f;
        choices[0][u].push((Some((k, 1, true)), f));
    }
    for &(ph, u, f) in &w.absorb {
        out_total[ph][u] += f;
        choices[ph][u].push((None, f));
    }
    let mut mass = vec![vec![0.0; n]; w.phases];
    mass[phase][start] = 1.0;
    let mut absorbed = vec![0.0; n];
    for _ in 0..100_000 {
        let mut next = vec![vec![0.0; n]; w.phases];
        let mut moving = 0.0;
        for ph in 0..w.phases {
            for u in 0..n {
                let m = mass[ph][u];
                if m <= 0.0 || out_total[ph][u] <= 0.0 {
                    continue;
                }
                for &(choice, f) in &choices[ph][u] {
                    let share = m * f / out_total[ph][u];
                    match choice {
                        None => absorbed[u] += share,
                        Some((k, to_phase, _)) => {
                            for &(t, p) in &sys.edges[u][k].targets {
                                next[to_phase][t] += share * p;
                                moving += share * p;
                            }
                        }
                    }
                }
            }
        }
        mass = next;
        if moving < 1e-15 {
            break;
        }
    }
    absorbed.iter().enumerate().filter(|(_, &m)| m > 0.0).map(|(i, &m)| (i, m)).collect()
}

/// Splits a witnessed weak transition at its first step: each entry is a
/// weight, a successor node and the sub-query (label and class vector)
/// that successor must satisfy. Immediate absorption appears with the
/// source itself and the empty label.
pub fn decompose_first_step(
    sys: &ProbSystem,
    source: usize,
    label: WeakLabel,
    w: &FlowWitness,
    partition: &[usize],
    nblocks: usize,
) -> Vec<(f64, usize, WeakLabel, Vec<f64>)> {
    let mut out = Vec::new();
    let mut total = 0.0;
    for &(ph, u, _, f) in &w.edge_flow {
        if ph == 0 && u == source {
            total += f;
        }
    }
    for &(u, _, f) in &w.transfer {
        if u == source {
            total += f;
        }
    }
    for &(ph, u, f) in &w.absorb {
        if ph == 0 && u == source {
            total += f;
        }
    }
    if total <= 0.0 {
        return out;
    }
    let sub = |t: usize, phase: usize| -> Vec<f64> {
        let absorbed = absorption_from(sys, w, t, phase);
        class_vector(&absorbed, partition, nblocks)
    };
    for &(ph, u, k, f) in &w.edge_flow {
        if ph == 0 && u == source {
            for &(t, p) in &sys.edges[u][k].targets {
                let next_label = if w.phases == 1 { WeakLabel::TauHat } else { label };
                out.push((f / total * p, t, next_label, sub(t, 0)));
            }
        }
    }
    for &(u, k, f) in &w.transfer {
        if u == source {
            for &(t, p) in &sys.edges[u][k].targets {
                out.push((f / total * p, t, WeakLabel::TauHat, sub(t, 1)));
            }
        }
    }
    for &(ph, u, f) in &w.absorb {
        if ph == 0 && u == source {
            out.push((f / total, u, WeakLabel::TauHat, class_vector(&[(u, 1.0)], partition, nblocks)));
        }
    }
    out
}

#[derive(Clone, Debug)]
struct Move {
    label: usize,
    tau: bool,
    vector: Vec<f64>,
}

struct Refiner<'a> {
    sys: &'a ProbSystem,
    tol: f64,
    weak: bool,
    warnings: Mutex<Vec<String>>,
}

impl Refiner<'_> {
    fn note_near_tie(&self, residual: f64, what: impl FnOnce() -> String) {
        if residual > self.tol && residual <= 10.0 * self.tol {
            let msg = format!(
                "near tie (residual {residual:.3e}) while matching {}; consider exact probabilities",
                what()
            );
            log::warn!("{msg}");
            self.warnings.lock().expect("warnings lock").push(msg);
        }
    }

    /// Whether `d` can answer `mv`; on success, the weights over `d`'s
    /// same-label edges (strong mode only).
    fn answer(&self, d: usize, mv: &Move, partition: &[usize], nblocks: usize) -> Result<Answer, BisimError> {
        let edges = &self.sys.edges[d];
        for (k, e) in edges.iter().enumerate() {
            if e.label == mv.label && vec_close(&class_vector(&e.targets, partition, nblocks), &mv.vector, self.tol) {
                return Ok(Answer::Yes(vec![(k, 1.0)]));
            }
        }
        if self.weak {
            let label = if mv.tau { WeakLabel::TauHat } else { WeakLabel::Visible(mv.label) };
            if mv.tau && vec_close(&class_vector(&[(d, 1.0)], partition, nblocks), &mv.vector, self.tol) {
                return Ok(Answer::Yes(Vec::new()));
            }
            let r = weak_reach_feasible(self.sys, d, label, &mv.vector, partition, self.tol)?;
            if r.is_feasible() {
                return Ok(Answer::Yes(Vec::new()));
            }
            self.note_near_tie(r.residual, || format!("{} from node {d}", self.sys.labels[mv.label]));
            return Ok(Answer::No(r.size));
        }
        let same: Vec<usize> = (0..edges.len()).filter(|&k| edges[k].label == mv.label).collect();
        if same.len() < 2 {
            if let Some(&k) = same.first() {
                let gap = class_vector(&edges[k].targets, partition, nblocks)
                    .iter()
                    .zip(&mv.vector)
                    .fold(0.0f64, |m, (a, b)| m.max((a - b).abs()));
                self.note_near_tie(gap, || format!("{} from node {d}", self.sys.labels[mv.label]));
            }
            return Ok(Answer::No((nblocks + 1, same.len())));
        }
        let points: Vec<Vec<f64>> =
            same.iter().map(|&k| class_vector(&edges[k].targets, partition, nblocks)).collect();
        let r = convex_hull_member(&points, &mv.vector, self.tol)?;
        match r.witness() {
            Some(w) => Ok(Answer::Yes(same.iter().zip(w).filter(|(_, &x)| x > 0.0).map(|(&k, &x)| (k, x)).collect())),
            None => {
                self.note_near_tie(r.residual, || format!("{} from node {d}", self.sys.labels[mv.label]));
                Ok(Answer::No((nblocks + 1, same.len())))
            }
        }
    }

    fn moves_of(&self, c: usize, partition: &[usize], nblocks: usize) -> Vec<Move> {
        self.sys.edges[c]
            .iter()
            .map(|e| Move { label: e.label, tau: e.tau, vector: class_vector(&e.targets, partition, nblocks) })
            .collect()
    }

    /// Splits blocks until every member of a block answers every move of
    /// every other member.
    fn refine(&self, mut partition: Vec<usize>) -> Result<(Vec<usize>, usize), BisimError> {
        let mut nblocks = normalize(&mut partition);
        let mut rounds = 0;
        loop {
            rounds += 1;
            let mut next = vec![0usize; partition.len()];
            let mut next_id = 0;
            for block in blocks_of(&partition) {
                let mut moves: Vec<Move> = Vec::new();
                for &c in &block {
                    for mv in self.moves_of(c, &partition, nblocks) {
                        if !moves.iter().any(|m| m.label == mv.label && vec_close(&m.vector, &mv.vector, self.tol / 10.0)) {
                            moves.push(mv);
                        }
                    }
                }
                let sigs: Vec<Vec<bool>> = block
                    .par_iter()
                    .map(|&d| {
                        moves
                            .iter()
                            .map(|mv| self.answer(d, mv, &partition, nblocks).map(|a| matches!(a, Answer::Yes(_))))
                            .collect::<Result<Vec<bool>, BisimError>>()
                    })
                    .collect::<Result<_, _>>()?;
                let mut groups: Vec<(&Vec<bool>, usize)> = Vec::new();
                for (&d, sig) in block.iter().zip(&sigs) {
                    let id = match groups.iter().find(|(s, _)| *s == sig) {
                        Some(&(_, id)) => id,
                        None => {
                            groups.push((sig, next_id));
                            next_id += 1;
                            next_id - 1
                        }
                    };
                    next[d] = id;
                }
            }
            let new_blocks = normalize(&mut next);
            if new_blocks == nblocks {
                return Ok((partition, rounds));
            }
            partition = next;
            nblocks = new_blocks;
        }
    }
}

enum Answer {
    Yes(Vec<(usize, f64)>),
    No((usize, usize)),
}

/// Coarsest partition satisfying the strong clauses.
pub fn strong_partition(sys: &ProbSystem, tol: f64) -> Result<Vec<usize>, BisimError> {
    let initial: Vec<usize> =
        (0..sys.len()).map(|i| if sys.is_stuck(i) { 1 + sys.ctx_class[i] } else { 0 }).collect();
    let r = Refiner { sys, tol, weak: false, warnings: Mutex::new(Vec::new()) };
    Ok(r.refine(initial)?.0)
}

/// Coarsest partition satisfying the weak clauses (for systems without
/// tau cycles; see [`ProbSystem::with_done_moves`]).
pub fn weak_partition(sys: &ProbSystem, tol: f64) -> Result<Vec<usize>, BisimError> {
    let sys = sys.with_done_moves();
    let r = Refiner { sys: &sys, tol, weak: true, warnings: Mutex::new(Vec::new()) };
    Ok(r.refine(vec![0; sys.len()])?.0)
}

#[derive(Clone, Debug, Serialize)]
#[serde(rename_all = "snake_case")]
pub enum Reason {
    /// Both are stuck with different contexts.
    TerminalContext,
    /// One is stuck, the other can move, and strong bisimilarity needs a
    /// stuck configuration's partner to share its context.
    StuckVersusActive,
    /// A move of `mover` has no matching (combined or weak) move.
    UnmatchedMove,
}

#[derive(Clone, Debug, Serialize)]
pub struct Counterexample {
    pub reason: Reason,
    /// The node whose move is unmatched, and the node that fails to answer.
    pub mover: usize,
    pub responder: usize,
    pub action: Option<String>,
    /// `(block, mass)` pairs of the unmatched distribution.
    pub class_vector: Vec<(usize, f64)>,
    /// Rows and columns of the infeasible LP.
    pub certificate_size: (usize, usize),
    /// Why a successor of `mover` and a candidate successor of
    /// `responder` are themselves distinguished.
    pub then: Option<Box<Counterexample>>,
}

impl Counterexample {
    /// The innermost reason of the chain.
    pub fn root_reason(&self) -> &Reason {
        match &self.then {
            Some(next) => next.root_reason(),
            None => &self.reason,
        }
    }
}

#[derive(Clone, Debug, Serialize)]
pub struct MoveMatch {
    pub mover: usize,
    pub responder: usize,
    pub action: String,
    pub class_vector: Vec<(usize, f64)>,
    /// Convex weights over the responder's edges (indices into its edge
    /// list); empty when answered by a weak transition.
    pub combination: Vec<(usize, f64)>,
}

#[derive(Clone, Debug, Serialize)]
pub struct BisimReport {
    pub mode: Mode,
    pub equivalent: bool,
    pub left: usize,
    pub right: usize,
    pub blocks: Vec<Vec<usize>>,
    pub rounds: usize,
    pub witness: Vec<MoveMatch>,
    pub counterexample: Option<Counterexample>,
    pub warnings: Vec<String>,
}

fn sparse(v: &[f64]) -> Vec<(usize, f64)> {
    v.iter().enumerate().filter(|(_, &x)| x.abs() > 1e-15).map(|(i, &x)| (i, x)).collect()
}

/// Decides `c ~ d`, `c ≈ d` or `c ≃ d` on one system.
pub fn check_system(sys: &ProbSystem, c: usize, d: usize, mode: Mode, tol: f64) -> Result<BisimReport, BisimError> {
    sys.check_node(c)?;
    sys.check_node(d)?;
    let done_sys;
    let (work, refiner_weak) = match mode {
        Mode::Strong => (sys, false),
        Mode::Weak | Mode::Eq => {
            done_sys = sys.with_done_moves();
            (&done_sys, true)
        }
    };
    let refiner = Refiner { sys: work, tol, weak: refiner_weak, warnings: Mutex::new(Vec::new()) };
    let initial: Vec<usize> = match mode {
        Mode::Strong => (0..sys.len()).map(|i| if sys.is_stuck(i) { 1 + sys.ctx_class[i] } else { 0 }).collect(),
        _ => vec![0; sys.len()],
    };
    let (partition, rounds) = refiner.refine(initial)?;
    let nblocks = partition.iter().copied().max().map_or(0, |m| m + 1);
    let blocks = blocks_of(&partition);

    let (equivalent, witness, counterexample) = match mode {
        Mode::Strong | Mode::Weak => {
            if partition[c] == partition[d] {
                (true, witness_moves(&refiner, c, d, &partition, nblocks)?, None)
            } else {
                (false, Vec::new(), Some(explain(&refiner, sys, c, d, &partition, nblocks, mode)?))
            }
        }
        Mode::Eq => equality_round(&refiner, sys, c, d, &partition, nblocks)?,
    };
    let warnings = refiner.warnings.into_inner().expect("warnings lock");
    Ok(BisimReport { mode, equivalent, left: c, right: d, blocks, rounds, witness, counterexample, warnings })
}

fn witness_moves(refiner: &Refiner, c: usize, d: usize, partition: &[usize], nblocks: usize) -> Result<Vec<MoveMatch>, BisimError> {
    let mut out = Vec::new();
    for (x, y) in [(c, d), (d, c)] {
        for mv in refiner.moves_of(x, partition, nblocks) {
            if let Answer::Yes(combination) = refiner.answer(y, &mv, partition, nblocks)? {
                out.push(MoveMatch {
                    mover: x,
                    responder: y,
                    action: refiner.sys.labels[mv.label].clone(),
                    class_vector: sparse(&mv.vector),
                    combination,
                });
            }
        }
        if c == d {
            break;
        }
    }
    Ok(out)
}

#[allow(clippy::too_many_arguments)]
fn explain(
    refiner: &Refiner,
    sys: &ProbSystem,
    c: usize,
    d: usize,
    partition: &[usize],
    nblocks: usize,
    mode: Mode,
) -> Result<Counterexample, BisimError> {
    explain_at(refiner, sys, c, d, partition, nblocks, mode, 0)
}

#[allow(clippy::too_many_arguments)]
fn explain_at(
    refiner: &Refiner,
    sys: &ProbSystem,
    c: usize,
    d: usize,
    partition: &[usize],
    nblocks: usize,
    mode: Mode,
    depth: usize,
) -> Result<Counterexample, BisimError> {
    let leaf = |reason, mover, responder, action: Option<String>, v: &[f64]| Counterexample {
        reason,
        mover,
        responder,
        action,
        class_vector: sparse(v),
        certificate_size: (0, 0),
        then: None,
    };
    if sys.is_stuck(c) && sys.is_stuck(d) {
        return Ok(leaf(Reason::TerminalContext, c, d, None, &[]));
    }
    if mode == Mode::Strong && (sys.is_stuck(c) || sys.is_stuck(d)) {
        let (active, stuck) = if sys.is_stuck(c) { (d, c) } else { (c, d) };
        let mv = &refiner.moves_of(active, partition, nblocks)[0];
        return Ok(leaf(Reason::StuckVersusActive, active, stuck, Some(sys.labels[mv.label].clone()), &mv.vector));
    }
    for (x, y) in [(c, d), (d, c)] {
        for (k, mv) in refiner.moves_of(x, partition, nblocks).into_iter().enumerate() {
            let Answer::No(size) = refiner.answer(y, &mv, partition, nblocks)? else { continue };
            let label = refiner.sys.labels[mv.label].clone();
            if label.starts_with("done[") && refiner.sys.edges[y].iter().all(|e| !e.tau) {
                return Ok(leaf(Reason::TerminalContext, x, y, None, &[]));
            }
            let mut out = leaf(Reason::UnmatchedMove, x, y, Some(label), &mv.vector);
            out.certificate_size = size;
            if depth < 64 {
                out.then = successor_pair(refiner, x, k, y, partition, mode)
                    .map(|(x2, y2)| explain_at(refiner, sys, x2, y2, partition, nblocks, mode, depth + 1))
                    .transpose()?
                    .map(Box::new);
            }
            return Ok(out);
        }
    }
    Err(BisimError::BadNode(d))
}

/// A successor of `x` along edge `k` and a node the responder can reach
/// (by the same label in strong mode) lying in different blocks.
fn successor_pair(refiner: &Refiner, x: usize, k: usize, y: usize, partition: &[usize], mode: Mode) -> Option<(usize, usize)> {
    let sys = refiner.sys;
    let e = &sys.edges[x][k];
    let candidates: Vec<usize> = if mode == Mode::Strong {
        sys.edges[y].iter().filter(|f| f.label == e.label).flat_map(|f| f.targets.iter().map(|&(t, _)| t)).collect()
    } else {
        let r = sys.reachable(y);
        (0..sys.len()).filter(|&i| r[i]).collect()
    };
    for &(x2, _) in &e.targets {
        if x2 == x {
            continue;
        }
        if let Some(&y2) = candidates.iter().find(|&&y2| partition[y2] != partition[x2] && y2 != y) {
            return Some((x2, y2));
        }
    }
    None
}

/// One strict round on top of the weak partition.
fn equality_round(
    refiner: &Refiner,
    sys: &ProbSystem,
    c: usize,
    d: usize,
    partition: &[usize],
    nblocks: usize,
) -> Result<(bool, Vec<MoveMatch>, Option<Counterexample>), BisimError> {
    if sys.is_stuck(c) && sys.is_stuck(d) {
        if sys.ctx_class[c] == sys.ctx_class[d] {
            return Ok((true, Vec::new(), None));
        }
        return Ok((
            false,
            Vec::new(),
            Some(Counterexample {
                reason: Reason::TerminalContext,
                mover: c,
                responder: d,
                action: None,
                class_vector: Vec::new(),
                certificate_size: (0, 0),
                then: None,
            }),
        ));
    }
    let mut witness = Vec::new();
    for (x, y) in [(c, d), (d, c)] {
        for (k, e) in sys.edges[x].iter().enumerate() {
            let vector = class_vector(&e.targets, partition, nblocks);
            let label = if e.tau { WeakLabel::StrictTau } else { WeakLabel::Visible(e.label) };
            let r = weak_reach_feasible(refiner.sys, y, label, &vector, partition, refiner.tol)?;
            let action = sys.labels[e.label].clone();
            if !r.is_feasible() {
                refiner.note_near_tie(r.residual, || format!("{action} from node {y}"));
                let then = successor_pair(refiner, x, k, y, partition, Mode::Weak)
                    .map(|(x2, y2)| explain_at(refiner, sys, x2, y2, partition, nblocks, Mode::Weak, 1))
                    .transpose()?
                    .map(Box::new);
                return Ok((
                    false,
                    Vec::new(),
                    Some(Counterexample {
                        reason: Reason::UnmatchedMove,
                        mover: x,
                        responder: y,
                        action: Some(action),
                        class_vector: sparse(&vector),
                        certificate_size: r.size,
                        then,
                    }),
                ));
            }
            witness.push(MoveMatch { mover: x, responder: y, action, class_vector: sparse(&vector), combination: Vec::new() });
        }
    }
    Ok((true, witness, None))
}

/// Strong bisimilarity of two nodes of one transition system.
pub fn strong_bisim(lts: &Lts, c: usize, d: usize, tol: f64) -> Result<BisimReport, BisimError> {
    check_system(&ProbSystem::from_lts(lts), c, d, Mode::Strong, tol)
}

pub fn weak_bisim(lts: &Lts, c: usize, d: usize, tol: f64) -> Result<BisimReport, BisimError> {
    check_system(&ProbSystem::from_lts(lts), c, d, Mode::Weak, tol)
}

pub fn equality_check(lts: &Lts, c: usize, d: usize, tol: f64) -> Result<BisimReport, BisimError> {
    check_system(&ProbSystem::from_lts(lts), c, d, Mode::Eq, tol)
}

/// Builds the joint system of two configurations and compares their roots.
pub fn compare(
    left: &Configuration,
    right: &Configuration,
    env: &Env,
    policy: &InputPolicy,
    bounds: Bounds,
    mode: Mode,
    tol: f64,
) -> Result<(Lts, BisimReport), BisimError> {
    let lts = build_lts(&[left.clone(), right.clone()], env, policy, bounds)?;
    let (c, d) = (lts.roots()[0], lts.roots()[1]);
    let report = check_system(&ProbSystem::from_lts(&lts), c, d, mode, tol)?;
    Ok((lts, report))
}

/// Convenience for property suites: true when the two configurations are
/// related in `mode`.
pub fn related(
    left: &Configuration,
    right: &Configuration,
    env: &Env,
    policy: &InputPolicy,
    mode: Mode,
) -> Result<bool, BisimError> {
    Ok(compare(left, right, env, policy, Bounds::default(), mode, LP_TOL)?.1.equivalent)
}

#[cfg(test)]
mod tests;
