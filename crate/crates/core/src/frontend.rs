//! The `.qccs` source format: parsing, pretty printing and elaboration into
//! configurations ready for exploration.
//!
//! ```text
//! #qccs 1
//! cchan c {0, 1};
//! gate V = X * H;
//! proc P = U[q].c!0.nil + M01[q; x].c!x.nil;
//! config Main = < P ; q = 0.6|0> + 0.8|1> >;
//! check strong Main Main;
//! ```

use std::collections::{BTreeMap, BTreeSet};

use serde::Serialize;
use thiserror::Error;

use crate::ast::{Channel, ChannelKind, Process};
use crate::bisim::Mode;
use crate::context::QContext;
use crate::linalg::{Matrix, Observable, MATRIX_TOL};
use crate::lts::{Configuration, Env, InputPolicy};

mod lexer;
mod parser;
mod pretty;

pub use parser::KEYWORDS;
pub use pretty::{matrix_literal, pretty};

#[derive(Clone, Copy, Debug, PartialEq, Eq, Serialize)]
pub struct Pos {
    pub line: usize,
    pub col: usize,
}

/// A diagnostic tied to a source position.
#[derive(Clone, Debug, PartialEq, Eq, Error, Serialize)]
#[error("line {line}, column {col}: {message}")]
pub struct SourceError {
    pub line: usize,
    pub col: usize,
    pub message: String,
}

impl SourceError {
    pub fn at(line: usize, col: usize, message: impl Into<String>) -> Self {
        SourceError { line, col, message: message.into() }
    }

    fn at_pos(pos: Pos, message: impl Into<String>) -> Self {
        Self::at(pos.line, pos.col, message)
    }
}

#[derive(Clone, Debug)]
pub struct ChannelDecl {
    pub chan: Channel,
    /// Values the environment may send on a classical channel.
    pub domain: Option<Vec<f64>>,
    pub pos: Pos,
}

#[derive(Clone, Debug)]
pub struct GateDecl {
    pub name: String,
    pub matrix: Matrix,
    pub pos: Pos,
}

#[derive(Clone, Debug)]
pub struct ObservableDecl {
    pub name: String,
    pub observable: Observable,
    pub pos: Pos,
}

#[derive(Clone, Debug)]
pub struct ParamDecl {
    pub name: String,
    pub value: f64,
    pub pos: Pos,
}

#[derive(Clone, Debug)]
pub struct ProcDecl {
    pub name: String,
    /// The definition with earlier names already expanded.
    pub process: Process,
    pub pos: Pos,
}

#[derive(Clone, Debug)]
pub struct ConfigDecl {
    pub name: String,
    pub process: Process,
    /// Groups of qubits with their joint state (a ket or a density
    /// matrix); the context is their tensor product in order.
    pub bindings: Vec<(Vec<String>, Matrix, Pos)>,
    pub pos: Pos,
}

#[derive(Clone, Debug, PartialEq, Eq)]
pub struct CheckDecl {
    pub mode: Mode,
    pub left: String,
    pub right: String,
    pub pos: Pos,
}

#[derive(Clone, Debug, Default)]
pub struct SourceFile {
    pub version: Option<u32>,
    pub channels: Vec<ChannelDecl>,
    pub gates: Vec<GateDecl>,
    pub observables: Vec<ObservableDecl>,
    pub params: Vec<ParamDecl>,
    pub procs: Vec<ProcDecl>,
    pub configs: Vec<ConfigDecl>,
    pub checks: Vec<CheckDecl>,
}

/// Parses a whole source file. Parameters named in `overrides` take the
/// given value instead of the declared one.
pub fn parse_with(text: &str, overrides: &BTreeMap<String, f64>) -> Result<SourceFile, SourceError> {
    parser::Parser::new(text, true, overrides.clone())?.file()
}

pub fn parse(text: &str) -> Result<SourceFile, SourceError> {
    parse_with(text, &BTreeMap::new())
}

/// Parses a single process term without declarations: channels, gates and
/// observables are taken as written.
pub fn parse_process(text: &str) -> Result<Process, SourceError> {
    parser::Parser::new(text, false, BTreeMap::new())?.process_eof()
}

/// A file checked and turned into runnable configurations.
#[derive(Clone, Debug)]
pub struct Program {
    pub env: Env,
    pub policy: InputPolicy,
    pub configs: Vec<(String, Configuration)>,
    pub checks: Vec<CheckDecl>,
}

impl Program {
    pub fn config(&self, name: &str) -> Option<&Configuration> {
        self.configs.iter().find(|(n, _)| n == name).map(|(_, c)| c)
    }

    /// The configuration named `Main`, else the first one.
    pub fn main_config(&self) -> Option<(&str, &Configuration)> {
        self.configs
            .iter()
            .find(|(n, _)| n == "Main")
            .or_else(|| self.configs.first())
            .map(|(n, c)| (n.as_str(), c))
    }
}

/// Validates gates and observables, builds the contexts and checks every
/// configuration.
pub fn elaborate(file: &SourceFile) -> Result<Program, SourceError> {
    let mut env = Env::standard();
    for g in &file.gates {
        if !g.matrix.is_unitary(MATRIX_TOL) {
            return Err(SourceError::at_pos(g.pos, format!("gate `{}` is not unitary", g.name)));
        }
        env.gates.insert(g.name.clone(), g.matrix.clone());
    }
    for o in &file.observables {
        let n = crate::linalg::qubit_count(o.observable.outcomes[0].1.rows()).unwrap_or(0);
        o.observable
            .validate(n)
            .map_err(|e| SourceError::at_pos(o.pos, format!("observable `{}` is invalid: {e}", o.name)))?;
        env.observables.insert(o.name.clone(), o.observable.clone());
    }
    for p in &file.procs {
        p.process
            .check_wellformed()
            .map_err(|v| SourceError::at_pos(p.pos, format!("process `{}` is ill-formed: {v}", p.name)))?;
    }
    let mut policy = InputPolicy::default();
    for ch in &file.channels {
        if let (ChannelKind::Classical, Some(d)) = (ch.chan.kind, &ch.domain) {
            policy.domains.insert(ch.chan.name.clone(), d.clone());
        }
    }
    let mut configs = Vec::new();
    for c in &file.configs {
        configs.push((c.name.clone(), build_config(c)?));
    }
    for chk in &file.checks {
        for name in [&chk.left, &chk.right] {
            if !configs.iter().any(|(n, _)| n == name) {
                return Err(SourceError::at_pos(chk.pos, format!("unknown configuration `{name}`")));
            }
        }
    }
    Ok(Program { env, policy, configs, checks: file.checks.clone() })
}

fn build_config(c: &ConfigDecl) -> Result<Configuration, SourceError> {
    let mut vars: Vec<String> = Vec::new();
    let mut rho = Matrix::scalar_one();
    for (names, m, pos) in &c.bindings {
        let dim = 1usize << names.len();
        let state = if m.cols() == 1 { Matrix::projector_of(m) } else { m.clone() };
        if state.rows() != dim || state.cols() != dim {
            return Err(SourceError::at_pos(
                *pos,
                format!("state has dimension {} but {} qubit(s) need {dim}", state.rows(), names.len()),
            ));
        }
        if !state.is_density(MATRIX_TOL) {
            return Err(SourceError::at_pos(*pos, "state is not normalised (a density matrix needs trace 1 and no negative eigenvalues)"));
        }
        for n in names {
            if vars.contains(n) {
                return Err(SourceError::at_pos(*pos, format!("qubit `{n}` is bound twice")));
            }
            vars.push(n.clone());
        }
        rho = rho.tensor(&state);
    }
    let declared: BTreeSet<&String> = vars.iter().collect();
    if let Some(q) = c.process.qv().iter().find(|q| !declared.contains(q)) {
        return Err(SourceError::at_pos(c.pos, format!("qubit `{q}` is used by the process but missing from the context")));
    }
    let ctx = QContext::new(vars, rho).map_err(|e| SourceError::at_pos(c.pos, e.to_string()))?;
    Configuration::new(c.process.clone(), ctx).map_err(|e| SourceError::at_pos(c.pos, e.to_string()))
}

/// Parse and elaborate in one step.
pub fn load(text: &str, overrides: &BTreeMap<String, f64>) -> Result<Program, SourceError> {
    elaborate(&parse_with(text, overrides)?)
}
