//! Linear feasibility over nonnegative variables with a dense two-phase
//! simplex method using Bland's rule.

use thiserror::Error;

/// Default tolerance for LP residuals and class-vector comparisons.
pub const LP_TOL: f64 = 1e-7;

const PIVOT_EPS: f64 = 1e-12;

#[derive(Debug, Clone, PartialEq, Error)]
pub enum LpError {
    #[error("simplex did not terminate within {0} pivots")]
    NumericalFailure(usize),
    #[error("witness failed re-verification (residual {0:e})")]
    VerificationFailed(f64),
    #[error("objective is unbounded below")]
    Unbounded,
    #[error("constraint row has {got} coefficients, expected {expected}")]
    BadRow { got: usize, expected: usize },
}

/// `A x = b`, `x >= 0`, optionally minimising `c . x`.
#[derive(Clone, Debug, Default)]
pub struct LinearProgram {
    num_vars: usize,
    rows: Vec<(Vec<f64>, f64)>,
    objective: Option<Vec<f64>>,
}

#[derive(Clone, Debug, PartialEq)]
pub enum LpStatus {
    Feasible(Vec<f64>),
    Infeasible,
}

/// Verdict plus the phase-one residual (sum of artificial variables), which
/// measures how far the constraints are from being satisfiable.
#[derive(Clone, Debug, PartialEq)]
pub struct LpResult {
    pub status: LpStatus,
    pub residual: f64,
    pub pivots: usize,
}

impl LpResult {
    pub fn witness(&self) -> Option<&[f64]> {
        match &self.status {
            LpStatus::Feasible(x) => Some(x),
            LpStatus::Infeasible => None,
        }
    }

    pub fn is_feasible(&self) -> bool {
        matches!(self.status, LpStatus::Feasible(_))
    }
}

impl LinearProgram {
    pub fn new(num_vars: usize) -> Self {
        LinearProgram { num_vars, rows: Vec::new(), objective: None }
    }

    pub fn num_vars(&self) -> usize {
        self.num_vars
    }

    pub fn num_constraints(&self) -> usize {
        self.rows.len()
    }

    pub fn add_constraint(&mut self, coeffs: Vec<f64>, rhs: f64) -> Result<(), LpError> {
        if coeffs.len() != self.num_vars {
            return Err(LpError::BadRow { got: coeffs.len(), expected: self.num_vars });
        }
        self.rows.push((coeffs, rhs));
        Ok(())
    }

    /// Adds a constraint from sparse `(variable, coefficient)` entries;
    /// repeated variables accumulate.
    pub fn add_sparse(&mut self, entries: &[(usize, f64)], rhs: f64) {
        let mut row = vec![0.0; self.num_vars];
        for &(j, a) in entries {
            row[j] += a;
        }
        self.rows.push((row, rhs));
    }

    pub fn set_objective(&mut self, c: Vec<f64>) -> Result<(), LpError> {
        if c.len() != self.num_vars {
            return Err(LpError::BadRow { got: c.len(), expected: self.num_vars });
        }
        self.objective = Some(c);
        Ok(())
    }

    /// Largest constraint violation of `x`, counting negativity.
    pub fn violation(&self, x: &[f64]) -> f64 {
        let mut worst = x.iter().map(|v| (-v).max(0.0)).fold(0.0, f64::max);
        for (row, rhs) in &self.rows {
            let lhs: f64 = row.iter().zip(x).map(|(a, v)| a * v).sum();
            worst = worst.max((lhs - rhs).abs());
        }
        worst
    }
}

struct Tableau {
    m: usize,
    width: usize,
    t: Vec<f64>,
    basis: Vec<usize>,
    pivots: usize,
    max_pivots: usize,
}

impl Tableau {
    fn at(&self, i: usize, j: usize) -> f64 {
        self.t[i * (self.width + 1) + j]
    }

    fn rhs(&self, i: usize) -> f64 {
        self.at(i, self.width)
    }

    fn pivot(&mut self, row: usize, col: usize) {
        let stride = self.width + 1;
        let p = self.at(row, col);
        for j in 0..stride {
            self.t[row * stride + j] /= p;
        }
        for i in 0..=self.m {
            if i == row {
                continue;
            }
            let f = self.at(i, col);
            if f == 0.0 {
                continue;
            }
            for j in 0..stride {
                let v = self.t[row * stride + j];
                self.t[i * stride + j] -= f * v;
            }
        }
        self.basis[row] = col;
        self.pivots += 1;
    }

    /// Minimises the objective row (row `m`) over columns accepted by `allowed`.
    fn run(&mut self, allowed: impl Fn(usize) -> bool) -> Result<(), LpError> {
        loop {
            if self.pivots >= self.max_pivots {
                return Err(LpError::NumericalFailure(self.pivots));
            }
            let entering = (0..self.width).find(|&j| allowed(j) && self.at(self.m, j) < -PIVOT_EPS);
            let Some(col) = entering else { return Ok(()) };
            let mut best: Option<(usize, f64)> = None;
            for i in 0..self.m {
                let a = self.at(i, col);
                if a > PIVOT_EPS {
                    let ratio = self.rhs(i) / a;
                    best = match best {
                        None => Some((i, ratio)),
                        Some((bi, br)) => {
                            if ratio < br - PIVOT_EPS || (ratio <= br + PIVOT_EPS && self.basis[i] < self.basis[bi]) {
                                Some((i, ratio))
                            } else {
                                Some((bi, br))
                            }
                        }
                    };
                }
            }
            match best {
                Some((row, _)) => self.pivot(row, col),
                None => return Err(LpError::Unbounded),
            }
        }
    }
}

/// Decides feasibility; with an objective, also minimises it.
pub fn feasible(lp: &LinearProgram, tol: f64) -> Result<LpResult, LpError> {
    let n = lp.num_vars;
    let m = lp.rows.len();
    let width = n + m;
    let stride = width + 1;
    let mut t = vec![0.0; (m + 1) * stride];
    for (i, (row, rhs)) in lp.rows.iter().enumerate() {
        let sign = if *rhs < 0.0 { -1.0 } else { 1.0 };
        for j in 0..n {
            t[i * stride + j] = sign * row[j];
        }
        t[i * stride + n + i] = 1.0;
        t[i * stride + width] = sign * rhs;
    }
    for i in 0..m {
        for j in 0..n {
            t[m * stride + j] -= t[i * stride + j];
        }
        t[m * stride + width] -= t[i * stride + width];
    }
    let mut tab = Tableau {
        m,
        width,
        t,
        basis: (n..n + m).collect(),
        pivots: 0,
        max_pivots: 50 * (width + 10) * (m + 10),
    };
    tab.run(|_| true)?;
    let residual = (-tab.rhs(m)).max(0.0);
    if residual > tol {
        return Ok(LpResult { status: LpStatus::Infeasible, residual, pivots: tab.pivots });
    }
    // drive remaining artificials out of the basis where possible
    for i in 0..m {
        if tab.basis[i] >= n {
            if let Some(j) = (0..n).find(|&j| tab.at(i, j).abs() > 1e-9) {
                tab.pivot(i, j);
            }
        }
    }
    if let Some(c) = &lp.objective {
        for j in 0..stride {
            tab.t[m * stride + j] = 0.0;
        }
        for j in 0..n {
            tab.t[m * stride + j] = c[j];
        }
        for i in 0..m {
            let b = tab.basis[i];
            let cb = if b < n { c[b] } else { 0.0 };
            if cb != 0.0 {
                for j in 0..stride {
                    let v = tab.t[i * stride + j];
                    tab.t[m * stride + j] -= cb * v;
                }
            }
        }
        tab.run(|j| j < n)?;
    }
    let mut x = vec![0.0; n];
    for i in 0..m {
        if tab.basis[i] < n {
            x[tab.basis[i]] = tab.rhs(i).max(0.0);
        }
    }
    let check = lp.violation(&x);
    if check > tol.max(residual) * 10.0 {
        return Err(LpError::VerificationFailed(check));
    }
    Ok(LpResult { status: LpStatus::Feasible(x), residual: residual.max(check), pivots: tab.pivots })
}

/// Convex weights `w` with `sum_i w_i points[i] = target`, if any.
pub fn convex_hull_member(points: &[Vec<f64>], target: &[f64], tol: f64) -> Result<LpResult, LpError> {
    let k = points.len();
    let mut lp = LinearProgram::new(k);
    for (d, &t) in target.iter().enumerate() {
        let row = points.iter().map(|p| p.get(d).copied().unwrap_or(0.0)).collect();
        lp.add_constraint(row, t)?;
    }
    lp.add_constraint(vec![1.0; k], 1.0)?;
    feasible(&lp, tol)
}
