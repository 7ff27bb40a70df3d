//! Finite-difference discretisation of `Ax = (q x')' + r x'` on `(0, 1)`
//! with homogeneous Dirichlet boundary conditions.

use nalgebra::DMatrix;

use super::Generator;
use crate::error::{Error, Result};
use crate::hilbert::DenseOperator;

/// Uniform ellipticity constant `sigma` and sup bound `N` for `q` and `r`.
#[derive(Clone, Copy, Debug)]
pub struct CoefficientBounds {
    pub sigma: f64,
    pub bound: f64,
}

/// Builds the conservative flux-form stencil on interior nodes
/// `z_i = i / (d + 1)`, `i = 1..=d`.
///
/// The diffusion coefficient enters at half-grid points as the arithmetic
/// mean of its neighbouring nodal values; the advection term uses central
/// differences.
pub fn build_divergence_form_generator(
    q: impl Fn(f64) -> f64,
    r: impl Fn(f64) -> f64,
    d: usize,
    bounds: CoefficientBounds,
) -> Result<Generator> {
    if d < 2 {
        return Err(Error::DegenerateInput(format!("grid size {d} < 2")));
    }
    let h = 1.0 / (d + 1) as f64;
    let z = |i: usize| i as f64 * h;

    let qn: Vec<f64> = (0..=d + 1).map(|i| q(z(i))).collect();
    let rn: Vec<f64> = (0..=d + 1).map(|i| r(z(i))).collect();

    for i in 0..=d + 1 {
        check_coefficient(z(i), qn[i], rn[i], bounds)?;
    }
    // half-grid sample points as well
    for i in 0..=d {
        let zh = z(i) + 0.5 * h;
        check_coefficient(zh, q(zh), r(zh), bounds)?;
    }

    let h2 = h * h;
    let mut m = DMatrix::zeros(d, d);
    for row in 0..d {
        let i = row + 1;
        let q_minus = 0.5 * (qn[i - 1] + qn[i]);
        let q_plus = 0.5 * (qn[i] + qn[i + 1]);
        let adv = rn[i] / (2.0 * h);
        m[(row, row)] = -(q_minus + q_plus) / h2;
        if row > 0 {
            m[(row, row - 1)] = q_minus / h2 - adv;
        }
        if row + 1 < d {
            m[(row, row + 1)] = q_plus / h2 + adv;
        }
    }
    Generator::new(DenseOperator::new(m)?)
}

fn check_coefficient(z: f64, q: f64, r: f64, bounds: CoefficientBounds) -> Result<()> {
    if !(q >= bounds.sigma) {
        return Err(Error::Ellipticity {
            z,
            q,
            sigma: bounds.sigma,
        });
    }
    if !(q.abs() <= bounds.bound) {
        return Err(Error::CoefficientBound {
            name: "q",
            z,
            value: q.abs(),
            bound: bounds.bound,
        });
    }
    if !(r.abs() <= bounds.bound) {
        return Err(Error::CoefficientBound {
            name: "r",
            z,
            value: r.abs(),
            bound: bounds.bound,
        });
    }
    Ok(())
}

/// Orthonormal discrete sine basis on `d` interior nodes; column `k` samples
/// `sin((k + 1) pi z)`.
pub fn sine_basis(d: usize) -> DenseOperator {
    let scale = (2.0 / (d + 1) as f64).sqrt();
    let m = DMatrix::from_fn(d, d, |i, k| {
        scale * (std::f64::consts::PI * ((i + 1) * (k + 1)) as f64 / (d + 1) as f64).sin()
    });
    DenseOperator::from_dmatrix(m)
}
