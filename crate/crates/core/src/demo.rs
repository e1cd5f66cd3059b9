//! Built-in teleportation run: Bob's qubit ends in the sender's state on
//! every measurement branch.

use std::collections::BTreeMap;

use num_complex::Complex64;
use serde::Serialize;
use thiserror::Error;

use crate::frontend::{load, pretty, SourceError};
use crate::linalg::{Matrix, MATRIX_TOL};
use crate::lts::{build_lts, terminal_distribution, Bounds, LtsError};

pub const TELEPORT_SOURCE: &str = include_str!("../../../models/teleport.qccs");

/// Name the system gives Bob's half of the EPR pair: the first pair qubit
/// takes `#0`, the second `#1`.
pub const BOB_QUBIT: &str = "#1";

#[derive(Debug, Error)]
pub enum DemoError {
    #[error("amplitudes ({alpha}, {beta}) are not normalised: |alpha|^2 + |beta|^2 = {norm}")]
    NotNormalised { alpha: f64, beta: f64, norm: f64 },
    #[error(transparent)]
    Source(#[from] SourceError),
    #[error(transparent)]
    Lts(#[from] LtsError),
    #[error("context error: {0}")]
    Context(String),
}

#[derive(Clone, Debug, Serialize)]
pub struct Branch {
    pub node: usize,
    pub probability: f64,
    pub process: String,
    /// Reduced state of Bob's qubit, row-major `[re, im]` pairs.
    pub bob_state: Vec<Vec<[f64; 2]>>,
    /// `<psi| rho |psi>` against the input state.
    pub fidelity: f64,
}

#[derive(Clone, Debug, Serialize)]
pub struct TeleportReport {
    pub alpha: f64,
    pub beta: f64,
    pub nodes: usize,
    pub branches: Vec<Branch>,
    /// Every branch reproduces the input within the matrix tolerance.
    pub success: bool,
}

fn entries(m: &Matrix) -> Vec<Vec<[f64; 2]>> {
    m.to_rows().iter().map(|r| r.iter().map(|z| [z.re, z.im]).collect()).collect()
}

pub fn teleport(alpha: f64, beta: f64) -> Result<TeleportReport, DemoError> {
    let norm = alpha * alpha + beta * beta;
    if !alpha.is_finite() || !beta.is_finite() || (norm - 1.0).abs() > MATRIX_TOL {
        return Err(DemoError::NotNormalised { alpha, beta, norm });
    }
    let overrides: BTreeMap<String, f64> = [("alpha".to_string(), alpha), ("beta".to_string(), beta)].into();
    let program = load(TELEPORT_SOURCE, &overrides)?;
    let (_, main) = program.main_config().expect("the teleport model defines Main");
    let lts = build_lts(std::slice::from_ref(main), &program.env, &program.policy, Bounds::default())?;
    let psi = Matrix::column(&[Complex64::new(alpha, 0.0), Complex64::new(beta, 0.0)]);
    let target = Matrix::projector_of(&psi);
    let mut branches = Vec::new();
    let mut success = true;
    for (node, probability) in terminal_distribution(&lts, lts.roots()[0]) {
        let cfg = lts.node(node);
        let rho = cfg.context.reduced(&[BOB_QUBIT.to_string()]).map_err(|e| DemoError::Context(e.to_string()))?;
        let fidelity = psi.dagger().mul(&rho).and_then(|m| m.mul(&psi)).map_err(|e| DemoError::Context(e.to_string()))?[(0, 0)].re;
        success &= rho.approx_eq(&target, MATRIX_TOL);
        branches.push(Branch { node, probability, process: pretty(&cfg.process), bob_state: entries(&rho), fidelity });
    }
    Ok(TeleportReport { alpha, beta, nodes: lts.len(), branches, success })
}
