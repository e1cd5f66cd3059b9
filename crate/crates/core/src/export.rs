//! Serialized views of transition systems, configurations and traces.
//! Field order and number formatting are fixed, so equal inputs give
//! byte-identical output.

use std::fmt::Write;

use serde::Serialize;

use crate::context::QContext;
use crate::frontend::pretty;
use crate::linalg::Matrix;
use crate::lts::{Action, Configuration, Lts, Trace, TraceEnd};

/// Row-major `[re, im]` entries.
pub type MatrixJson = Vec<Vec<[f64; 2]>>;

pub fn matrix_json(m: &Matrix) -> MatrixJson {
    m.to_rows().iter().map(|r| r.iter().map(|z| [clean(z.re), clean(z.im)]).collect()).collect()
}

/// Folds `-0.0` into `0.0` so signs of zero never leak into output.
fn clean(x: f64) -> f64 {
    if x == 0.0 {
        0.0
    } else {
        x
    }
}

#[derive(Clone, Debug, Serialize)]
pub struct ContextJson {
    pub qubits: Vec<String>,
    pub rho: MatrixJson,
}

impl From<&QContext> for ContextJson {
    fn from(c: &QContext) -> Self {
        ContextJson { qubits: c.vars().to_vec(), rho: matrix_json(c.rho()) }
    }
}

#[derive(Clone, Debug, Serialize)]
pub struct ConfigJson {
    pub process: String,
    pub context: ContextJson,
}

impl From<&Configuration> for ConfigJson {
    fn from(c: &Configuration) -> Self {
        ConfigJson { process: pretty(&c.process), context: (&c.context).into() }
    }
}

#[derive(Clone, Debug, Serialize)]
pub struct NodeJson {
    pub id: usize,
    pub depth: usize,
    pub hash: String,
    pub process: String,
    pub context: ContextJson,
}

#[derive(Clone, Debug, Serialize)]
pub struct EdgeJson {
    pub source: usize,
    pub action: String,
    /// `[node, probability]` pairs.
    pub targets: Vec<(usize, f64)>,
}

#[derive(Clone, Debug, Serialize)]
pub struct LtsJson {
    pub roots: Vec<usize>,
    pub nodes: Vec<NodeJson>,
    pub edges: Vec<EdgeJson>,
}

/// FNV-1a over the pretty-printed term, as 16 hex digits.
pub fn term_hash(text: &str) -> String {
    let mut h: u64 = 0xcbf2_9ce4_8422_2325;
    for b in text.bytes() {
        h ^= u64::from(b);
        h = h.wrapping_mul(0x0100_0000_01b3);
    }
    format!("{h:016x}")
}

pub fn lts_json(lts: &Lts) -> LtsJson {
    let nodes = (0..lts.len())
        .map(|i| {
            let c = lts.node(i);
            let process = pretty(&c.process);
            NodeJson { id: i, depth: lts.depth(i), hash: term_hash(&process), process, context: (&c.context).into() }
        })
        .collect();
    let edges = (0..lts.len())
        .flat_map(|i| {
            lts.edges(i)
                .iter()
                .map(move |e| EdgeJson { source: i, action: e.action.to_string(), targets: e.targets.clone() })
        })
        .collect();
    LtsJson { roots: lts.roots().to_vec(), nodes, edges }
}

/// Probability for a label: at most 10 decimals, trailing zeros dropped.
fn short(p: f64) -> String {
    let s = format!("{p:.10}");
    s.trim_end_matches('0').trim_end_matches('.').to_string()
}

fn dot_escape(s: &str) -> String {
    s.replace('\\', "\\\\").replace('"', "\\\"")
}

/// Graphviz rendering. Probabilistic edges go through a small point node,
/// each branch annotated `action, p`.
pub fn lts_dot(lts: &Lts) -> String {
    let mut out = String::from("digraph lts {\n  rankdir=TB;\n  node [shape=box, fontname=\"monospace\"];\n");
    for i in 0..lts.len() {
        let term = pretty(&lts.node(i).process);
        let shape = if lts.roots().contains(&i) { ", peripheries=2" } else { "" };
        let _ = writeln!(
            out,
            "  n{i} [label=\"n{i} {}\", tooltip=\"{}\"{shape}];",
            term_hash(&term),
            dot_escape(&term)
        );
    }
    let mut k = 0;
    for i in 0..lts.len() {
        for e in lts.edges(i) {
            let action = dot_escape(&e.action.to_string());
            if let [(t, p)] = e.targets.as_slice() {
                let _ = writeln!(out, "  n{i} -> n{t} [label=\"{action}, {}\"];", short(*p));
            } else {
                let _ = writeln!(out, "  d{k} [shape=point, width=0.06];");
                let _ = writeln!(out, "  n{i} -> d{k} [label=\"{action}\", arrowhead=none];");
                for (t, p) in &e.targets {
                    let _ = writeln!(out, "  d{k} -> n{t} [label=\"{action}, {}\", style=dashed];", short(*p));
                }
                k += 1;
            }
        }
    }
    out.push_str("}\n");
    out
}

#[derive(Clone, Debug, Serialize)]
pub struct BranchJson {
    pub probability: f64,
    pub target: ConfigJson,
}

#[derive(Clone, Debug, Serialize)]
pub struct StepJson {
    pub from: ConfigJson,
    pub enabled: Vec<String>,
    pub chosen: usize,
    pub action: String,
    pub branches: Vec<BranchJson>,
    pub sampled: usize,
}

#[derive(Clone, Debug, Serialize)]
pub struct TraceJson {
    pub steps: Vec<StepJson>,
    pub last: ConfigJson,
    /// `terminated`, `stuck` or `step_limit`.
    pub end: String,
    pub blocked: Vec<String>,
}

pub fn trace_json(t: &Trace) -> TraceJson {
    let steps = t
        .steps
        .iter()
        .map(|s| StepJson {
            from: (&s.from).into(),
            enabled: s.enabled.iter().map(Action::to_string).collect(),
            chosen: s.chosen,
            action: s.action.to_string(),
            branches: s
                .distribution
                .iter()
                .map(|(p, c)| BranchJson { probability: *p, target: c.into() })
                .collect(),
            sampled: s.sampled,
        })
        .collect();
    let (end, blocked) = match &t.end {
        TraceEnd::Terminated => ("terminated", Vec::new()),
        TraceEnd::Stuck { blocked } => ("stuck", blocked.clone()),
        TraceEnd::StepLimit => ("step_limit", Vec::new()),
    };
    TraceJson { steps, last: (&t.last).into(), end: end.to_string(), blocked }
}
