//! Dense complex matrices over qubit registers.
//!
//! Qubit `0` of an `n`-qubit register is the most significant tensor factor:
//! basis index `b` has qubit `i` set iff bit `n - 1 - i` of `b` is set.

use std::fmt;

use num_complex::Complex64;
use thiserror::Error;

pub type C64 = Complex64;

/// Entrywise tolerance for matrix comparisons.
pub const MATRIX_TOL: f64 = 1e-9;

#[derive(Debug, Clone, PartialEq, Eq, Error)]
pub enum LinalgError {
    #[error("dimension mismatch: {0}")]
    DimensionMismatch(String),
    #[error("qubit index {index} out of range for {n} qubits")]
    BadIndex { index: usize, n: usize },
    #[error("position {0} listed twice")]
    DuplicatePosition(usize),
    #[error("dimension {0} is not a power of two")]
    NotPowerOfTwo(usize),
}

#[derive(Clone, PartialEq)]
pub struct Matrix {
    rows: usize,
    cols: usize,
    data: Vec<C64>,
}

impl fmt::Debug for Matrix {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        writeln!(f, "Matrix {}x{} [", self.rows, self.cols)?;
        for r in 0..self.rows {
            let row: Vec<String> = (0..self.cols).map(|c| format_complex(self[(r, c)])).collect();
            writeln!(f, "  [{}]", row.join(", "))?;
        }
        write!(f, "]")
    }
}

/// Formats a complex number as `a+bi`, dropping a zero part.
pub fn format_complex(z: C64) -> String {
    let clean = |v: f64| if v.abs() < 1e-15 { 0.0 } else { v };
    let (re, im) = (clean(z.re), clean(z.im));
    match (re == 0.0, im == 0.0) {
        (_, true) => format!("{re}"),
        (true, false) => format!("{im}i"),
        (false, false) if im < 0.0 => format!("{re}{im}i"),
        (false, false) => format!("{re}+{im}i"),
    }
}

impl std::ops::Index<(usize, usize)> for Matrix {
    type Output = C64;
    fn index(&self, (r, c): (usize, usize)) -> &C64 {
        &self.data[r * self.cols + c]
    }
}

impl std::ops::IndexMut<(usize, usize)> for Matrix {
    fn index_mut(&mut self, (r, c): (usize, usize)) -> &mut C64 {
        &mut self.data[r * self.cols + c]
    }
}

/// `log2(dim)` when `dim` is a power of two.
pub fn qubit_count(dim: usize) -> Result<usize, LinalgError> {
    if dim.is_power_of_two() {
        Ok(dim.trailing_zeros() as usize)
    } else {
        Err(LinalgError::NotPowerOfTwo(dim))
    }
}

fn bit(b: usize, i: usize, n: usize) -> usize {
    (b >> (n - 1 - i)) & 1
}

impl Matrix {
    pub fn zeros(rows: usize, cols: usize) -> Self {
        Matrix { rows, cols, data: vec![C64::new(0.0, 0.0); rows * cols] }
    }

    pub fn identity(dim: usize) -> Self {
        let mut m = Matrix::zeros(dim, dim);
        for i in 0..dim {
            m[(i, i)] = C64::new(1.0, 0.0);
        }
        m
    }

    /// The 1x1 matrix `[1]`, the state of zero qubits.
    pub fn scalar_one() -> Self {
        Matrix::identity(1)
    }

    pub fn from_rows(rows: Vec<Vec<C64>>) -> Result<Self, LinalgError> {
        let r = rows.len();
        let c = rows.first().map_or(0, |row| row.len());
        if rows.iter().any(|row| row.len() != c) {
            return Err(LinalgError::DimensionMismatch("ragged rows".into()));
        }
        Ok(Matrix { rows: r, cols: c, data: rows.into_iter().flatten().collect() })
    }

    pub fn from_real_rows(rows: &[&[f64]]) -> Self {
        let rows = rows.iter().map(|row| row.iter().map(|&v| C64::new(v, 0.0)).collect()).collect();
        Matrix::from_rows(rows).expect("rectangular literal")
    }

    /// Column vector from amplitudes.
    pub fn column(amplitudes: &[C64]) -> Self {
        Matrix { rows: amplitudes.len(), cols: 1, data: amplitudes.to_vec() }
    }

    /// `|v><v|` for a column vector `v`.
    pub fn projector_of(v: &Matrix) -> Self {
        v.mul(&v.dagger()).expect("outer product")
    }

    /// `|b><b|` for a computational basis state over `n` qubits.
    pub fn basis_projector(n: usize, b: usize) -> Self {
        let mut m = Matrix::zeros(1 << n, 1 << n);
        m[(b, b)] = C64::new(1.0, 0.0);
        m
    }

    pub fn rows(&self) -> usize {
        self.rows
    }

    pub fn cols(&self) -> usize {
        self.cols
    }

    pub fn is_square(&self) -> bool {
        self.rows == self.cols
    }

    pub fn entries(&self) -> &[C64] {
        &self.data
    }

    pub fn to_rows(&self) -> Vec<Vec<C64>> {
        self.data.chunks(self.cols.max(1)).map(|c| c.to_vec()).collect()
    }

    fn same_shape(&self, other: &Matrix, what: &str) -> Result<(), LinalgError> {
        if self.rows != other.rows || self.cols != other.cols {
            return Err(LinalgError::DimensionMismatch(format!(
                "{what}: {}x{} vs {}x{}",
                self.rows, self.cols, other.rows, other.cols
            )));
        }
        Ok(())
    }

    pub fn add(&self, other: &Matrix) -> Result<Matrix, LinalgError> {
        self.same_shape(other, "add")?;
        let data = self.data.iter().zip(&other.data).map(|(a, b)| a + b).collect();
        Ok(Matrix { rows: self.rows, cols: self.cols, data })
    }

    pub fn sub(&self, other: &Matrix) -> Result<Matrix, LinalgError> {
        self.same_shape(other, "sub")?;
        let data = self.data.iter().zip(&other.data).map(|(a, b)| a - b).collect();
        Ok(Matrix { rows: self.rows, cols: self.cols, data })
    }

    pub fn scale(&self, c: C64) -> Matrix {
        Matrix { rows: self.rows, cols: self.cols, data: self.data.iter().map(|a| a * c).collect() }
    }

    pub fn mul(&self, other: &Matrix) -> Result<Matrix, LinalgError> {
        if self.cols != other.rows {
            return Err(LinalgError::DimensionMismatch(format!(
                "mul: {}x{} by {}x{}",
                self.rows, self.cols, other.rows, other.cols
            )));
        }
        let mut out = Matrix::zeros(self.rows, other.cols);
        for i in 0..self.rows {
            for k in 0..self.cols {
                let a = self[(i, k)];
                if a == C64::new(0.0, 0.0) {
                    continue;
                }
                for j in 0..other.cols {
                    out.data[i * other.cols + j] += a * other.data[k * other.cols + j];
                }
            }
        }
        Ok(out)
    }

    pub fn dagger(&self) -> Matrix {
        let mut out = Matrix::zeros(self.cols, self.rows);
        for r in 0..self.rows {
            for c in 0..self.cols {
                out[(c, r)] = self[(r, c)].conj();
            }
        }
        out
    }

    pub fn trace(&self) -> C64 {
        (0..self.rows.min(self.cols)).map(|i| self[(i, i)]).sum()
    }

    pub fn tensor(&self, other: &Matrix) -> Matrix {
        let rows = self.rows * other.rows;
        let cols = self.cols * other.cols;
        let mut out = Matrix::zeros(rows, cols);
        for r1 in 0..self.rows {
            for c1 in 0..self.cols {
                let a = self[(r1, c1)];
                for r2 in 0..other.rows {
                    for c2 in 0..other.cols {
                        out[(r1 * other.rows + r2, c1 * other.cols + c2)] = a * other[(r2, c2)];
                    }
                }
            }
        }
        out
    }

    /// `A rho A^dagger`.
    pub fn conjugate(&self, rho: &Matrix) -> Result<Matrix, LinalgError> {
        self.mul(rho)?.mul(&self.dagger())
    }

    /// Largest absolute entrywise difference; infinite on shape mismatch.
    pub fn max_abs_diff(&self, other: &Matrix) -> f64 {
        if self.rows != other.rows || self.cols != other.cols {
            return f64::INFINITY;
        }
        self.data.iter().zip(&other.data).map(|(a, b)| (a - b).norm()).fold(0.0, f64::max)
    }

    pub fn approx_eq(&self, other: &Matrix, tol: f64) -> bool {
        self.max_abs_diff(other) <= tol
    }

    pub fn is_hermitian(&self, tol: f64) -> bool {
        self.is_square() && self.approx_eq(&self.dagger(), tol)
    }

    pub fn is_unitary(&self, tol: f64) -> bool {
        self.is_square()
            && self
                .dagger()
                .mul(self)
                .map(|p| p.approx_eq(&Matrix::identity(self.rows), tol))
                .unwrap_or(false)
    }

    /// Positive semi-definiteness up to `tol`: `self + tol*I` must admit a
    /// Cholesky factorisation.
    pub fn is_psd(&self, tol: f64) -> bool {
        if !self.is_hermitian(tol) {
            return false;
        }
        let n = self.rows;
        let mut a = self.clone();
        for i in 0..n {
            a[(i, i)] += C64::new(tol, 0.0);
        }
        let mut l = Matrix::zeros(n, n);
        for j in 0..n {
            let mut d = a[(j, j)].re;
            for k in 0..j {
                d -= l[(j, k)].norm_sqr();
            }
            if d < 0.0 {
                return false;
            }
            let d = d.sqrt();
            l[(j, j)] = C64::new(d, 0.0);
            for i in (j + 1)..n {
                let mut s = a[(i, j)];
                for k in 0..j {
                    s -= l[(i, k)] * l[(j, k)].conj();
                }
                l[(i, j)] = if d > 0.0 { s / d } else { C64::new(0.0, 0.0) };
                if d == 0.0 && s.norm() > tol {
                    return false;
                }
            }
        }
        true
    }

    /// Hermitian, positive semi-definite and of unit trace, all within `tol`.
    pub fn is_density(&self, tol: f64) -> bool {
        self.is_square() && (self.trace() - C64::new(1.0, 0.0)).norm() <= tol && self.is_psd(tol)
    }

    /// Trace out every qubit not listed in `keep`; the result's qubits
    /// follow the order of `keep`.
    pub fn partial_trace(&self, keep: &[usize]) -> Result<Matrix, LinalgError> {
        if !self.is_square() {
            return Err(LinalgError::DimensionMismatch("partial trace of a non-square matrix".into()));
        }
        let n = qubit_count(self.rows)?;
        check_positions(keep, n)?;
        let k = keep.len();
        let traced: Vec<usize> = (0..n).filter(|i| !keep.contains(i)).collect();
        let mut out = Matrix::zeros(1 << k, 1 << k);
        let compose = |kept_bits: usize, traced_bits: usize| -> usize {
            let mut b = 0usize;
            for (j, &pos) in keep.iter().enumerate() {
                b |= bit(kept_bits, j, k) << (n - 1 - pos);
            }
            for (j, &pos) in traced.iter().enumerate() {
                b |= bit(traced_bits, j, traced.len()) << (n - 1 - pos);
            }
            b
        };
        for r in 0..(1 << k) {
            for c in 0..(1 << k) {
                let mut s = C64::new(0.0, 0.0);
                for t in 0..(1usize << traced.len()) {
                    s += self[(compose(r, t), compose(c, t))];
                }
                out[(r, c)] = s;
            }
        }
        Ok(out)
    }

    /// `Pi rho Pi^dagger` where `Pi = permutation_op(perm)`, computed by
    /// index remapping.
    pub fn permute_qubits(&self, perm: &[usize]) -> Result<Matrix, LinalgError> {
        let n = qubit_count(self.rows)?;
        check_permutation(perm, n)?;
        let map = |b: usize| -> usize {
            let mut out = 0;
            for i in 0..n {
                out |= bit(b, i, n) << (n - 1 - perm[i]);
            }
            out
        };
        let mut out = Matrix::zeros(self.rows, self.cols);
        for r in 0..self.rows {
            let mr = map(r);
            for c in 0..self.cols {
                out[(mr, map(c))] = self[(r, c)];
            }
        }
        Ok(out)
    }
}

fn check_positions(positions: &[usize], n: usize) -> Result<(), LinalgError> {
    for (i, &p) in positions.iter().enumerate() {
        if p >= n {
            return Err(LinalgError::BadIndex { index: p, n });
        }
        if positions[..i].contains(&p) {
            return Err(LinalgError::DuplicatePosition(p));
        }
    }
    Ok(())
}

fn check_permutation(perm: &[usize], n: usize) -> Result<(), LinalgError> {
    if perm.len() != n {
        return Err(LinalgError::DimensionMismatch(format!("permutation of length {} on {n} qubits", perm.len())));
    }
    check_positions(perm, n)
}

/// The unitary moving the qubit at position `i` to position `perm[i]`.
pub fn permutation_op(perm: &[usize], n: usize) -> Result<Matrix, LinalgError> {
    check_permutation(perm, n)?;
    let dim = 1usize << n;
    let mut out = Matrix::zeros(dim, dim);
    for b in 0..dim {
        let mut target = 0;
        for i in 0..n {
            target |= bit(b, i, n) << (n - 1 - perm[i]);
        }
        out[(target, b)] = C64::new(1.0, 0.0);
    }
    Ok(out)
}

/// Embeds a `k`-qubit operator acting on `positions` (in listed order) of an
/// `n`-qubit register, identity elsewhere.
pub fn lift_operator(op: &Matrix, positions: &[usize], n: usize) -> Result<Matrix, LinalgError> {
    let k = positions.len();
    if op.rows() != 1 << k || op.cols() != 1 << k {
        return Err(LinalgError::DimensionMismatch(format!(
            "{}x{} operator on {k} positions",
            op.rows(),
            op.cols()
        )));
    }
    check_positions(positions, n)?;
    let mask: usize = positions.iter().map(|&p| 1usize << (n - 1 - p)).sum();
    let sub = |b: usize| -> usize {
        let mut s = 0;
        for (j, &p) in positions.iter().enumerate() {
            s |= bit(b, p, n) << (k - 1 - j);
        }
        s
    };
    let dim = 1usize << n;
    let mut out = Matrix::zeros(dim, dim);
    for r in 0..dim {
        for c in 0..dim {
            if r & !mask == c & !mask {
                out[(r, c)] = op[(sub(r), sub(c))];
            }
        }
    }
    Ok(out)
}

/// A projective measurement in spectral form.
#[derive(Clone, Debug, PartialEq)]
pub struct Observable {
    pub outcomes: Vec<(f64, Matrix)>,
}

#[derive(Debug, Clone, PartialEq, Error)]
pub enum ObservableError {
    #[error("observable has no outcomes")]
    Empty,
    #[error("projector for outcome {0} has the wrong dimension")]
    Dimension(f64),
    #[error("eigenvalue {0} listed twice")]
    RepeatedEigenvalue(f64),
    #[error("projector for outcome {0} is not Hermitian")]
    NotHermitian(f64),
    #[error("projector for outcome {0} is not idempotent")]
    NotIdempotent(f64),
    #[error("projectors for outcomes {0} and {1} are not orthogonal")]
    NotOrthogonal(f64, f64),
    #[error("projectors do not sum to the identity")]
    Incomplete,
}

impl Observable {
    /// Number of qubits measured.
    pub fn arity(&self) -> usize {
        self.outcomes.first().map_or(0, |(_, p)| qubit_count(p.rows()).unwrap_or(0))
    }

    /// The computational-basis measurement on `n` qubits with outcome `i`
    /// for basis state `i`.
    pub fn computational(n: usize) -> Self {
        Observable { outcomes: (0..1usize << n).map(|b| (b as f64, Matrix::basis_projector(n, b))).collect() }
    }

    /// Checks the spectral-form invariants on `2^n`-dimensional projectors.
    pub fn validate(&self, n: usize) -> Result<(), ObservableError> {
        let dim = 1usize << n;
        let tol = MATRIX_TOL;
        if self.outcomes.is_empty() {
            return Err(ObservableError::Empty);
        }
        for (i, (l, p)) in self.outcomes.iter().enumerate() {
            if p.rows() != dim || p.cols() != dim {
                return Err(ObservableError::Dimension(*l));
            }
            if self.outcomes[..i].iter().any(|(m, _)| m == l) {
                return Err(ObservableError::RepeatedEigenvalue(*l));
            }
            if !p.is_hermitian(tol) {
                return Err(ObservableError::NotHermitian(*l));
            }
            if !p.mul(p).expect("square").approx_eq(p, tol) {
                return Err(ObservableError::NotIdempotent(*l));
            }
        }
        let zero = Matrix::zeros(dim, dim);
        for (i, (li, pi)) in self.outcomes.iter().enumerate() {
            for (lj, pj) in &self.outcomes[i + 1..] {
                if !pi.mul(pj).expect("square").approx_eq(&zero, tol) {
                    return Err(ObservableError::NotOrthogonal(*li, *lj));
                }
            }
        }
        let mut total = zero;
        for (_, p) in &self.outcomes {
            total = total.add(p).expect("square");
        }
        if !total.approx_eq(&Matrix::identity(dim), tol) {
            return Err(ObservableError::Incomplete);
        }
        Ok(())
    }
}

/// Validates an observable over `n` qubits.
pub fn validate_observable(obs: &Observable, n: usize) -> Result<(), ObservableError> {
    obs.validate(n)
}

/// Gates registered under fixed names. `sigma_2` and `Z` are `diag(1,-1)`;
/// `sigma_3` and `Y` are `[[0, i], [-i, 0]]`.
pub mod gates {
    use super::*;

    fn c(re: f64, im: f64) -> C64 {
        C64::new(re, im)
    }

    pub fn i2() -> Matrix {
        Matrix::identity(2)
    }

    pub fn h() -> Matrix {
        let s = std::f64::consts::FRAC_1_SQRT_2;
        Matrix::from_real_rows(&[&[s, s], &[s, -s]])
    }

    pub fn x() -> Matrix {
        Matrix::from_real_rows(&[&[0.0, 1.0], &[1.0, 0.0]])
    }

    pub fn z() -> Matrix {
        Matrix::from_real_rows(&[&[1.0, 0.0], &[0.0, -1.0]])
    }

    pub fn y() -> Matrix {
        Matrix::from_rows(vec![vec![c(0.0, 0.0), c(0.0, 1.0)], vec![c(0.0, -1.0), c(0.0, 0.0)]])
            .expect("2x2 literal")
    }

    pub fn cnot() -> Matrix {
        Matrix::from_real_rows(&[
            &[1.0, 0.0, 0.0, 0.0],
            &[0.0, 1.0, 0.0, 0.0],
            &[0.0, 0.0, 0.0, 1.0],
            &[0.0, 0.0, 1.0, 0.0],
        ])
    }

    /// All named gates.
    pub fn builtins() -> Vec<(&'static str, Matrix)> {
        vec![
            ("I", i2()),
            ("H", h()),
            ("X", x()),
            ("Z", z()),
            ("Y", y()),
            ("CNOT", cnot()),
            ("CNot", cnot()),
            ("sigma_0", i2()),
            ("sigma_1", x()),
            ("sigma_2", z()),
            ("sigma_3", y()),
        ]
    }

    /// `sigma_i` for `i` in `0..4`.
    pub fn sigma(i: usize) -> Matrix {
        match i {
            0 => i2(),
            1 => x(),
            2 => z(),
            3 => y(),
            _ => panic!("sigma index {i} out of range"),
        }
    }
}

/// Single-qubit states and kets.
pub mod states {
    use super::*;

    /// Amplitudes of `|0>`, `|1>`, `|+>` or `|->`.
    pub fn ket1(symbol: char) -> Option<[C64; 2]> {
        let s = std::f64::consts::FRAC_1_SQRT_2;
        let r = |v: f64| C64::new(v, 0.0);
        match symbol {
            '0' => Some([r(1.0), r(0.0)]),
            '1' => Some([r(0.0), r(1.0)]),
            '+' => Some([r(s), r(s)]),
            '-' => Some([r(s), r(-s)]),
            _ => None,
        }
    }

    /// Column vector for a ket string such as `01+`.
    pub fn ket(symbols: &str) -> Option<Matrix> {
        let mut v = Matrix::column(&[C64::new(1.0, 0.0)]);
        for ch in symbols.chars() {
            v = v.tensor(&Matrix::column(&ket1(ch)?));
        }
        Some(v)
    }

    /// `|s><s|` for a ket string.
    pub fn ket_projector(symbols: &str) -> Option<Matrix> {
        ket(symbols).map(|v| Matrix::projector_of(&v))
    }
}
