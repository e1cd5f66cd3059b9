//! Quantum contexts: named qubits together with their joint density matrix.

use num_complex::Complex64;
use thiserror::Error;

use crate::linalg::{lift_operator, LinalgError, Matrix, Observable, ObservableError, MATRIX_TOL};

/// Measurement branches below this probability are dropped.
pub const BRANCH_EPS: f64 = 1e-12;

#[derive(Debug, Clone, PartialEq, Error)]
pub enum ContextError {
    #[error("quantum variable `{0}` is already in the context")]
    DuplicateVar(String),
    #[error("quantum variable `{0}` is not in the context")]
    UnknownVar(String),
    #[error("extended state does not reduce to the current state (deviation {0:e})")]
    TraceMismatch(f64),
    #[error("operator is not unitary")]
    NotUnitary,
    #[error("matrix is not a density matrix over {0} qubits")]
    NotDensity(usize),
    #[error("invalid observable: {0}")]
    InvalidObservable(#[from] ObservableError),
    #[error(transparent)]
    Linalg(#[from] LinalgError),
}

#[derive(Clone, Debug, PartialEq)]
pub struct QContext {
    vars: Vec<String>,
    rho: Matrix,
}

/// One branch of a measurement.
#[derive(Clone, Debug)]
pub struct Outcome {
    pub value: f64,
    pub prob: f64,
    pub context: QContext,
}

impl Default for QContext {
    fn default() -> Self {
        QContext::empty()
    }
}

impl QContext {
    /// No qubits; the state is the scalar `[1]`.
    pub fn empty() -> Self {
        QContext { vars: Vec::new(), rho: Matrix::scalar_one() }
    }

    pub fn new(vars: Vec<String>, rho: Matrix) -> Result<Self, ContextError> {
        for (i, v) in vars.iter().enumerate() {
            if vars[..i].contains(v) {
                return Err(ContextError::DuplicateVar(v.clone()));
            }
        }
        let dim = 1usize << vars.len();
        if rho.rows() != dim || rho.cols() != dim || !rho.is_density(MATRIX_TOL) {
            return Err(ContextError::NotDensity(vars.len()));
        }
        Ok(QContext { vars, rho })
    }

    /// Context for a pure state given by a column vector.
    pub fn pure(vars: Vec<String>, state: &Matrix) -> Result<Self, ContextError> {
        QContext::new(vars, Matrix::projector_of(state))
    }

    pub fn vars(&self) -> &[String] {
        &self.vars
    }

    pub fn rho(&self) -> &Matrix {
        &self.rho
    }

    pub fn len(&self) -> usize {
        self.vars.len()
    }

    pub fn is_empty(&self) -> bool {
        self.vars.is_empty()
    }

    pub fn contains(&self, var: &str) -> bool {
        self.vars.iter().any(|v| v == var)
    }

    pub fn position(&self, var: &str) -> Result<usize, ContextError> {
        self.vars.iter().position(|v| v == var).ok_or_else(|| ContextError::UnknownVar(var.to_string()))
    }

    fn positions(&self, vars: &[String]) -> Result<Vec<usize>, ContextError> {
        vars.iter().map(|v| self.position(v)).collect()
    }

    /// Prepends a fresh qubit `r` in state `|0>`.
    pub fn new_qubit(&self, r: &str) -> Result<QContext, ContextError> {
        self.extend_product(r, &Matrix::basis_projector(1, 0))
    }

    /// Prepends `r` in the single-qubit state `tau`, giving `tau (x) rho`.
    pub fn extend_product(&self, r: &str, tau: &Matrix) -> Result<QContext, ContextError> {
        if self.contains(r) {
            return Err(ContextError::DuplicateVar(r.to_string()));
        }
        if tau.rows() != 2 || !tau.is_density(MATRIX_TOL) {
            return Err(ContextError::NotDensity(1));
        }
        let mut vars = Vec::with_capacity(self.vars.len() + 1);
        vars.push(r.to_string());
        vars.extend(self.vars.iter().cloned());
        Ok(QContext { vars, rho: tau.tensor(&self.rho) })
    }

    /// Prepends `r` with joint state `sigma`, which must reduce to the
    /// current state once `r` is traced out.
    pub fn extend_with_input(&self, r: &str, sigma: &Matrix) -> Result<QContext, ContextError> {
        if self.contains(r) {
            return Err(ContextError::DuplicateVar(r.to_string()));
        }
        let n = self.vars.len() + 1;
        if sigma.rows() != 1 << n || !sigma.is_density(MATRIX_TOL) {
            return Err(ContextError::NotDensity(n));
        }
        let keep: Vec<usize> = (1..n).collect();
        let reduced = sigma.partial_trace(&keep)?;
        let dev = reduced.max_abs_diff(&self.rho);
        if dev > MATRIX_TOL {
            return Err(ContextError::TraceMismatch(dev));
        }
        let mut vars = vec![r.to_string()];
        vars.extend(self.vars.iter().cloned());
        Ok(QContext { vars, rho: sigma.clone() })
    }

    pub fn apply_unitary(&self, u: &Matrix, on: &[String]) -> Result<QContext, ContextError> {
        if !u.is_unitary(MATRIX_TOL) {
            return Err(ContextError::NotUnitary);
        }
        let positions = self.positions(on)?;
        let lifted = lift_operator(u, &positions, self.vars.len())?;
        Ok(QContext { vars: self.vars.clone(), rho: lifted.conjugate(&self.rho)? })
    }

    /// Outcomes with probability above `BRANCH_EPS`, in the observable's order.
    pub fn measure(&self, obs: &Observable, on: &[String]) -> Result<Vec<Outcome>, ContextError> {
        obs.validate(on.len())?;
        let positions = self.positions(on)?;
        let n = self.vars.len();
        let mut out = Vec::new();
        for (value, proj) in &obs.outcomes {
            let p = lift_operator(proj, &positions, n)?;
            let post = p.conjugate(&self.rho)?;
            let prob = post.trace().re;
            if prob > BRANCH_EPS {
                let rho = post.scale(Complex64::new(1.0 / prob, 0.0));
                out.push(Outcome { value: *value, prob, context: QContext { vars: self.vars.clone(), rho } });
            }
        }
        Ok(out)
    }

    /// State of the listed qubits, in the listed order.
    pub fn reduced(&self, keep: &[String]) -> Result<Matrix, ContextError> {
        let positions = self.positions(keep)?;
        Ok(self.rho.partial_trace(&positions)?)
    }

    /// The same context with variables listed in `order`, which must be a
    /// rearrangement of the current variables.
    pub fn reordered(&self, order: &[String]) -> Result<QContext, ContextError> {
        if order.len() != self.vars.len() {
            return Err(ContextError::Linalg(LinalgError::DimensionMismatch("reorder to a different variable set".into())));
        }
        let mut perm = vec![0; self.vars.len()];
        for (new_pos, v) in order.iter().enumerate() {
            perm[self.position(v)?] = new_pos;
        }
        let mut seen = perm.clone();
        seen.sort_unstable();
        if seen != (0..perm.len()).collect::<Vec<_>>() {
            return Err(ContextError::DuplicateVar(order.join(",")));
        }
        Ok(QContext { vars: order.to_vec(), rho: self.rho.permute_qubits(&perm)? })
    }

    /// Variables sorted by name, a representation independent of allocation order.
    pub fn canonical(&self) -> QContext {
        let mut order = self.vars.clone();
        order.sort();
        self.reordered(&order).expect("sorting is a rearrangement")
    }

    /// Equality up to the permutation that aligns variable names.
    pub fn context_equal(&self, other: &QContext, tol: f64) -> bool {
        if self.vars.len() != other.vars.len() || !other.vars.iter().all(|v| self.contains(v)) {
            return false;
        }
        match self.reordered(&other.vars) {
            Ok(aligned) => aligned.rho.approx_eq(&other.rho, tol),
            Err(_) => false,
        }
    }
}
