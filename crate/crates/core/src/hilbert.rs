//! Truncated Hilbert spaces `H1 = R^d` and `H2 = R^m`.
//!
//! Coordinates are taken in a fixed orthonormal basis, so the Euclidean
//! norm of the coefficient vector is the norm of the represented element.

use std::ops::{Add, Mul, Sub};

use nalgebra::{DMatrix, DVector};

use crate::error::{Error, Result};

/// An element of the truncated state space, stored as basis coefficients.
#[derive(Clone, Debug, PartialEq)]
pub struct StateVector(DVector<f64>);

impl StateVector {
    pub fn new(coords: Vec<f64>) -> Result<Self> {
        if let Some(bad) = coords.iter().find(|c| !c.is_finite()) {
            return Err(Error::NumericalRange(format!("state coordinate {bad}")));
        }
        Ok(Self(DVector::from_vec(coords)))
    }

    pub fn zeros(dim: usize) -> Self {
        Self(DVector::zeros(dim))
    }

    /// `e_k` in the canonical basis.
    pub fn unit(dim: usize, k: usize) -> Self {
        let mut v = DVector::zeros(dim);
        v[k] = 1.0;
        Self(v)
    }

    pub fn from_fn(dim: usize, f: impl FnMut(usize) -> f64) -> Self {
        let mut f = f;
        Self(DVector::from_fn(dim, |i, _| f(i)))
    }

    pub fn dim(&self) -> usize {
        self.0.len()
    }

    pub fn coords(&self) -> &[f64] {
        self.0.as_slice()
    }

    pub fn coords_mut(&mut self) -> &mut [f64] {
        self.0.as_mut_slice()
    }

    pub fn as_dvector(&self) -> &DVector<f64> {
        &self.0
    }

    pub fn into_dvector(self) -> DVector<f64> {
        self.0
    }

    pub fn norm(&self) -> f64 {
        self.0.norm()
    }

    pub fn norm_squared(&self) -> f64 {
        self.0.norm_squared()
    }

    pub fn inner(&self, other: &StateVector) -> Result<f64> {
        check_dim(self.dim(), other.dim())?;
        Ok(self.0.dot(&other.0))
    }

    /// `|self - other|` without allocating.
    pub fn distance(&self, other: &StateVector) -> f64 {
        debug_assert_eq!(self.dim(), other.dim());
        self.coords()
            .iter()
            .zip(other.coords())
            .map(|(a, b)| (a - b) * (a - b))
            .sum::<f64>()
            .sqrt()
    }

    pub fn scaled(&self, s: f64) -> StateVector {
        Self(&self.0 * s)
    }

    pub fn axpy(&mut self, a: f64, x: &StateVector) {
        self.0.axpy(a, &x.0, 1.0);
    }

    pub fn is_finite(&self) -> bool {
        self.0.iter().all(|c| c.is_finite())
    }
}

impl Add for &StateVector {
    type Output = StateVector;

    fn add(self, rhs: &StateVector) -> StateVector {
        StateVector(&self.0 + &rhs.0)
    }
}

impl Sub for &StateVector {
    type Output = StateVector;

    fn sub(self, rhs: &StateVector) -> StateVector {
        StateVector(&self.0 - &rhs.0)
    }
}

impl Mul<f64> for &StateVector {
    type Output = StateVector;

    fn mul(self, rhs: f64) -> StateVector {
        self.scaled(rhs)
    }
}

/// Bounded linear operator between truncated spaces (`L(H2, H1)` or `L(H1)`).
#[derive(Clone, Debug, PartialEq)]
pub struct DenseOperator(DMatrix<f64>);

impl DenseOperator {
    pub fn new(entries: DMatrix<f64>) -> Result<Self> {
        if entries.iter().any(|e| !e.is_finite()) {
            return Err(Error::NumericalRange("operator entry".into()));
        }
        Ok(Self(entries))
    }

    pub fn from_row_slice(rows: usize, cols: usize, data: &[f64]) -> Result<Self> {
        Self::new(DMatrix::from_row_slice(rows, cols, data))
    }

    pub fn identity(dim: usize) -> Self {
        Self(DMatrix::identity(dim, dim))
    }

    pub fn zeros(rows: usize, cols: usize) -> Self {
        Self(DMatrix::zeros(rows, cols))
    }

    pub fn from_diagonal(diag: &[f64]) -> Self {
        Self(DMatrix::from_diagonal(&DVector::from_column_slice(diag)))
    }

    pub(crate) fn from_dmatrix(m: DMatrix<f64>) -> Self {
        Self(m)
    }

    pub fn rows(&self) -> usize {
        self.0.nrows()
    }

    pub fn cols(&self) -> usize {
        self.0.ncols()
    }

    pub fn matrix(&self) -> &DMatrix<f64> {
        &self.0
    }

    pub fn into_matrix(self) -> DMatrix<f64> {
        self.0
    }

    pub fn apply(&self, x: &StateVector) -> Result<StateVector> {
        check_dim(self.cols(), x.dim())?;
        Ok(StateVector(&self.0 * &x.0))
    }

    /// Largest singular value.
    pub fn op_norm(&self) -> f64 {
        if self.0.is_empty() {
            return 0.0;
        }
        self.0
            .singular_values()
            .iter()
            .copied()
            .fold(0.0, f64::max)
    }

    /// Hilbert–Schmidt (Frobenius) norm.
    pub fn hs_norm(&self) -> f64 {
        self.0.norm()
    }

    /// `tr(G Q G^T)` for diagonal `Q = diag(kappas)`.
    pub fn weighted_trace(&self, kappas: &[f64]) -> Result<f64> {
        check_dim(self.cols(), kappas.len())?;
        let mut acc = 0.0;
        for (j, k) in kappas.iter().enumerate() {
            acc += k * self.0.column(j).norm_squared();
        }
        Ok(acc)
    }

    /// Diagonal entries if every off-diagonal entry is exactly zero.
    pub fn as_diagonal(&self) -> Option<Vec<f64>> {
        if self.rows() != self.cols() {
            return None;
        }
        let n = self.rows();
        for j in 0..n {
            for i in 0..n {
                if i != j && self.0[(i, j)] != 0.0 {
                    return None;
                }
            }
        }
        Some((0..n).map(|i| self.0[(i, i)]).collect())
    }
}

pub(crate) fn check_dim(expected: usize, got: usize) -> Result<()> {
    if expected == got {
        Ok(())
    } else {
        Err(Error::Dimension { expected, got })
    }
}
