//! Dense complex linear algebra for small-register simulation.
//!
//! Everything here is row-major and dense. Registers are capped at
//! [`MAX_QUBITS`] qubits; the head itself never goes past 10.
//!
//! Qubit 0 is the most significant bit of a basis index, so `kron(Z, I)`
//! acts as Z on qubit 0.

use std::ops::{Index, IndexMut};

use nalgebra::DMatrix;
use num_complex::Complex64;

use crate::error::{Error, Result};

/// Tolerance for unitarity, trace and hermiticity checks.
pub const TOLERANCE: f64 = 1e-10;

/// Norm below which a state is considered collapsed.
pub const NORM_EPS: f64 = 1e-12;

pub const MAX_QUBITS: usize = 12;
pub const MAX_DIM: usize = 1 << MAX_QUBITS;

pub const ZERO: Complex64 = Complex64::new(0.0, 0.0);
pub const ONE: Complex64 = Complex64::new(1.0, 0.0);
pub const I: Complex64 = Complex64::new(0.0, 1.0);

#[derive(Debug, Clone, PartialEq)]
pub struct ComplexMatrix {
    rows: usize,
    cols: usize,
    data: Vec<Complex64>,
}

impl ComplexMatrix {
    pub fn zeros(rows: usize, cols: usize) -> Self {
        Self {
            rows,
            cols,
            data: vec![ZERO; rows * cols],
        }
    }

    pub fn identity(dim: usize) -> Self {
        let mut m = Self::zeros(dim, dim);
        for i in 0..dim {
            m.data[i * dim + i] = ONE;
        }
        m
    }

    pub fn from_vec(rows: usize, cols: usize, data: Vec<Complex64>) -> Result<Self> {
        if rows * cols != data.len() {
            return Err(Error::DimensionMismatch {
                context: "matrix entries",
                expected: rows * cols,
                got: data.len(),
            });
        }
        Ok(Self { rows, cols, data })
    }

    /// Builds a matrix from nested rows. Panics on ragged input; meant for literals.
    pub fn from_rows<R: AsRef<[Complex64]>>(rows: &[R]) -> Self {
        let cols = rows.first().map_or(0, |r| r.as_ref().len());
        let mut data = Vec::with_capacity(rows.len() * cols);
        for r in rows {
            assert_eq!(r.as_ref().len(), cols, "ragged matrix literal");
            data.extend_from_slice(r.as_ref());
        }
        Self {
            rows: rows.len(),
            cols,
            data,
        }
    }

    pub fn diagonal(diag: &[Complex64]) -> Self {
        let mut m = Self::zeros(diag.len(), diag.len());
        for (i, &d) in diag.iter().enumerate() {
            m[(i, i)] = d;
        }
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

    pub fn as_slice(&self) -> &[Complex64] {
        &self.data
    }

    pub fn as_mut_slice(&mut self) -> &mut [Complex64] {
        &mut self.data
    }

    pub fn column(&self, j: usize) -> Vec<Complex64> {
        (0..self.rows).map(|i| self[(i, j)]).collect()
    }

    pub fn set_column(&mut self, j: usize, col: &[Complex64]) {
        for (i, &v) in col.iter().enumerate() {
            self[(i, j)] = v;
        }
    }

    pub fn adjoint(&self) -> Self {
        let mut out = Self::zeros(self.cols, self.rows);
        for i in 0..self.rows {
            for j in 0..self.cols {
                out[(j, i)] = self[(i, j)].conj();
            }
        }
        out
    }

    pub fn matmul(&self, rhs: &Self) -> Result<Self> {
        if self.cols != rhs.rows {
            return Err(Error::DimensionMismatch {
                context: "matmul inner dimension",
                expected: self.cols,
                got: rhs.rows,
            });
        }
        let mut out = Self::zeros(self.rows, rhs.cols);
        for i in 0..self.rows {
            let out_row = &mut out.data[i * rhs.cols..(i + 1) * rhs.cols];
            for k in 0..self.cols {
                let a = self.data[i * self.cols + k];
                if a == ZERO {
                    continue;
                }
                let rhs_row = &rhs.data[k * rhs.cols..(k + 1) * rhs.cols];
                for (o, &b) in out_row.iter_mut().zip(rhs_row) {
                    *o += a * b;
                }
            }
        }
        Ok(out)
    }

    pub fn matvec(&self, v: &[Complex64]) -> Result<Vec<Complex64>> {
        if self.cols != v.len() {
            return Err(Error::DimensionMismatch {
                context: "matvec",
                expected: self.cols,
                got: v.len(),
            });
        }
        Ok(self
            .data
            .chunks_exact(self.cols)
            .map(|row| row.iter().zip(v).map(|(&a, &b)| a * b).sum())
            .collect())
    }

    pub fn scale(&self, s: Complex64) -> Self {
        Self {
            rows: self.rows,
            cols: self.cols,
            data: self.data.iter().map(|&z| z * s).collect(),
        }
    }

    pub fn add(&self, rhs: &Self) -> Result<Self> {
        if (self.rows, self.cols) != (rhs.rows, rhs.cols) {
            return Err(Error::DimensionMismatch {
                context: "matrix add",
                expected: self.data.len(),
                got: rhs.data.len(),
            });
        }
        Ok(Self {
            rows: self.rows,
            cols: self.cols,
            data: self.data.iter().zip(&rhs.data).map(|(a, b)| a + b).collect(),
        })
    }

    /// `self += s * rhs`, shapes assumed equal.
    pub fn add_scaled(&mut self, s: Complex64, rhs: &Self) {
        debug_assert_eq!(self.data.len(), rhs.data.len());
        for (a, &b) in self.data.iter_mut().zip(&rhs.data) {
            *a += s * b;
        }
    }

    pub fn trace(&self) -> Complex64 {
        (0..self.rows.min(self.cols)).map(|i| self[(i, i)]).sum()
    }

    pub fn max_abs_diff(&self, rhs: &Self) -> f64 {
        assert_eq!((self.rows, self.cols), (rhs.rows, rhs.cols));
        self.data
            .iter()
            .zip(&rhs.data)
            .map(|(a, b)| (a - b).norm())
            .fold(0.0, f64::max)
    }

    /// Max-abs deviation of `U†U` from the identity.
    pub fn unitarity_deviation(&self) -> f64 {
        let prod = self.adjoint().matmul(self).expect("square");
        prod.max_abs_diff(&Self::identity(self.cols))
    }

    pub fn is_unitary(&self) -> bool {
        self.is_square() && self.unitarity_deviation() < TOLERANCE
    }

    pub fn hermiticity_deviation(&self) -> f64 {
        self.max_abs_diff(&self.adjoint())
    }

    /// Largest singular value.
    pub fn spectral_norm(&self) -> f64 {
        let m = DMatrix::from_row_slice(self.rows, self.cols, &self.data);
        m.singular_values().max()
    }
}

impl Index<(usize, usize)> for ComplexMatrix {
    type Output = Complex64;

    fn index(&self, (i, j): (usize, usize)) -> &Complex64 {
        &self.data[i * self.cols + j]
    }
}

impl IndexMut<(usize, usize)> for ComplexMatrix {
    fn index_mut(&mut self, (i, j): (usize, usize)) -> &mut Complex64 {
        &mut self.data[i * self.cols + j]
    }
}

pub fn kron(a: &ComplexMatrix, b: &ComplexMatrix) -> Result<ComplexMatrix> {
    let rows = a.rows.checked_mul(b.rows).ok_or(Error::DimensionOverflow(usize::MAX))?;
    let cols = a.cols.checked_mul(b.cols).ok_or(Error::DimensionOverflow(usize::MAX))?;
    if rows > MAX_DIM || cols > MAX_DIM {
        return Err(Error::DimensionOverflow(rows.max(cols)));
    }
    let mut out = ComplexMatrix::zeros(rows, cols);
    for ai in 0..a.rows {
        for aj in 0..a.cols {
            let s = a[(ai, aj)];
            for bi in 0..b.rows {
                for bj in 0..b.cols {
                    out[(ai * b.rows + bi, aj * b.cols + bj)] = s * b[(bi, bj)];
                }
            }
        }
    }
    Ok(out)
}

/// `c_d M^d + … + c_1 M + c_0 I`, built from repeated products.
pub fn matrix_polynomial(m: &ComplexMatrix, coeffs: &[f64]) -> Result<ComplexMatrix> {
    if coeffs.is_empty() {
        return Err(Error::Empty("polynomial coefficients"));
    }
    if !m.is_square() {
        return Err(Error::NotSquare(m.rows, m.cols));
    }
    let dim = m.rows;
    let mut power = ComplexMatrix::identity(dim);
    let mut out = ComplexMatrix::zeros(dim, dim);
    for (k, &c) in coeffs.iter().enumerate() {
        if k > 0 {
            power = power.matmul(m)?;
        }
        out.add_scaled(Complex64::new(c, 0.0), &power);
    }
    Ok(out)
}

#[derive(Debug, Clone, PartialEq)]
pub struct StateVector {
    amplitudes: Vec<Complex64>,
}

impl StateVector {
    pub fn new(amplitudes: Vec<Complex64>) -> Self {
        Self { amplitudes }
    }

    /// `|0…0⟩` on `n_qubits` qubits.
    pub fn zero_state(n_qubits: usize) -> Self {
        let mut amplitudes = vec![ZERO; 1 << n_qubits];
        amplitudes[0] = ONE;
        Self { amplitudes }
    }

    pub fn dim(&self) -> usize {
        self.amplitudes.len()
    }

    pub fn amplitudes(&self) -> &[Complex64] {
        &self.amplitudes
    }

    pub fn amplitudes_mut(&mut self) -> &mut [Complex64] {
        &mut self.amplitudes
    }

    pub fn into_amplitudes(self) -> Vec<Complex64> {
        self.amplitudes
    }

    pub fn norm(&self) -> f64 {
        norm(&self.amplitudes)
    }
}

pub fn norm(v: &[Complex64]) -> f64 {
    v.iter().map(|z| z.norm_sqr()).sum::<f64>().sqrt()
}

/// `Σ conj(a_i) b_i`.
pub fn inner(a: &[Complex64], b: &[Complex64]) -> Complex64 {
    a.iter().zip(b).map(|(x, y)| x.conj() * y).sum()
}

pub fn normalize_state(v: &StateVector) -> Result<StateVector> {
    let n = v.norm();
    if n <= NORM_EPS {
        return Err(Error::NormCollapse { norm: n });
    }
    let inv = 1.0 / n;
    Ok(StateVector::new(
        v.amplitudes.iter().map(|z| z * inv).collect(),
    ))
}

#[derive(Debug, Clone, PartialEq)]
pub struct DensityMatrix {
    matrix: ComplexMatrix,
}

impl DensityMatrix {
    /// Wraps a matrix without validating it; see [`DensityMatrix::physicality`].
    pub fn from_matrix(matrix: ComplexMatrix) -> Result<Self> {
        if !matrix.is_square() {
            return Err(Error::NotSquare(matrix.rows, matrix.cols));
        }
        Ok(Self { matrix })
    }

    /// `|ψ⟩⟨ψ|`.
    pub fn from_pure(state: &StateVector) -> Self {
        Self::from_ensemble(&[(1.0, state)])
    }

    /// `Σ w_k |ψ_k⟩⟨ψ_k|`.
    pub fn from_ensemble(components: &[(f64, &StateVector)]) -> Self {
        let dim = components.first().map_or(0, |(_, s)| s.dim());
        let mut m = ComplexMatrix::zeros(dim, dim);
        for &(w, s) in components {
            if w == 0.0 {
                continue;
            }
            let a = s.amplitudes();
            for i in 0..dim {
                let wi = a[i] * w;
                let row = &mut m.data[i * dim..(i + 1) * dim];
                for (r, aj) in row.iter_mut().zip(a) {
                    *r += wi * aj.conj();
                }
            }
        }
        Self { matrix: m }
    }

    pub fn maximally_mixed(n_qubits: usize) -> Self {
        let dim = 1 << n_qubits;
        Self {
            matrix: ComplexMatrix::identity(dim).scale(Complex64::new(1.0 / dim as f64, 0.0)),
        }
    }

    pub fn dim(&self) -> usize {
        self.matrix.rows
    }

    pub fn matrix(&self) -> &ComplexMatrix {
        &self.matrix
    }

    pub fn into_matrix(self) -> ComplexMatrix {
        self.matrix
    }

    /// `V ρ V†`.
    pub fn conjugate_by(&self, v: &ComplexMatrix) -> Result<Self> {
        let out = v.matmul(&self.matrix)?.matmul(&v.adjoint())?;
        Ok(Self { matrix: out })
    }

    pub fn min_eigenvalue(&self) -> f64 {
        let dim = self.dim();
        let m = DMatrix::from_row_slice(dim, dim, self.matrix.as_slice());
        // Symmetrize so round-off never breaks the Hermitian solver's assumptions.
        let h = (&m + m.adjoint()) * Complex64::new(0.5, 0.0);
        h.symmetric_eigenvalues().min()
    }

    pub fn physicality(&self) -> Physicality {
        Physicality {
            hermiticity: self.matrix.hermiticity_deviation(),
            trace_error: (self.matrix.trace() - ONE).norm(),
            min_eigenvalue: self.min_eigenvalue(),
        }
    }
}

/// Deviations of a density matrix from the physical-state conditions.
#[derive(Debug, Clone, Copy)]
pub struct Physicality {
    pub hermiticity: f64,
    pub trace_error: f64,
    pub min_eigenvalue: f64,
}

impl Physicality {
    pub fn within(&self, tol: f64) -> bool {
        self.hermiticity < tol && self.trace_error < tol && self.min_eigenvalue >= -tol
    }
}

/// `Tr(ρ · obs)`, real part only.
pub fn expectation(rho: &DensityMatrix, obs: &ComplexMatrix) -> Result<f64> {
    let dim = rho.dim();
    if obs.rows != dim || obs.cols != dim {
        return Err(Error::DimensionMismatch {
            context: "expectation observable",
            expected: dim,
            got: obs.rows,
        });
    }
    let r = &rho.matrix;
    let mut acc = ZERO;
    for i in 0..dim {
        for j in 0..dim {
            acc += r[(i, j)] * obs[(j, i)];
        }
    }
    debug_assert!(
        acc.im.abs() < TOLERANCE * (dim as f64).max(1.0),
        "imaginary expectation residue {}",
        acc.im
    );
    Ok(acc.re)
}

pub mod pauli {
    use super::*;

    pub fn identity() -> ComplexMatrix {
        ComplexMatrix::identity(2)
    }

    pub fn x() -> ComplexMatrix {
        ComplexMatrix::from_rows(&[[ZERO, ONE], [ONE, ZERO]])
    }

    pub fn y() -> ComplexMatrix {
        ComplexMatrix::from_rows(&[[ZERO, -I], [I, ZERO]])
    }

    pub fn z() -> ComplexMatrix {
        ComplexMatrix::from_rows(&[[ONE, ZERO], [ZERO, -ONE]])
    }

    /// Single-qubit operator `op` acting on `qubit` of an `n`-qubit register.
    pub fn embed(op: &ComplexMatrix, qubit: usize, n_qubits: usize) -> Result<ComplexMatrix> {
        let mut out = ComplexMatrix::identity(1);
        for q in 0..n_qubits {
            let factor = if q == qubit { op.clone() } else { identity() };
            out = kron(&out, &factor)?;
        }
        Ok(out)
    }
}
