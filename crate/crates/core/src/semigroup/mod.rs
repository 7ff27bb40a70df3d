//! Generators of type `G(M, alpha)`, their semigroups, resolvents and
//! Yosida approximations.
//!
//! A [`Generator`] carries a dense matrix `A` together with constants
//! `(M, alpha)` such that `||exp(tA)|| <= M e^{alpha t}`. The constants are
//! obtained from the logarithmic norm of `A` (so `M = 1`), clamped so that
//! `alpha >= 0`, and can be re-checked on any time grid with
//! [`Generator::certify`].

mod divergence;
pub mod expm;

pub use divergence::{build_divergence_form_generator, sine_basis, CoefficientBounds};

use nalgebra::{DMatrix, SymmetricEigen};

use crate::error::{Error, Result};
use crate::hilbert::{check_dim, DenseOperator, StateVector};

/// Relative slack used when checking `||exp(tA)|| <= M e^{alpha t}`.
pub const CERTIFICATION_RTOL: f64 = 1e-8;

#[derive(Clone, Debug)]
pub struct Generator {
    matrix: DenseOperator,
    diagonal: Option<Vec<f64>>,
    bound_m: f64,
    bound_alpha: f64,
}

impl Generator {
    /// Wraps a square matrix, deriving `M = 1` and `alpha = max(0, mu(A))`
    /// where `mu` is the logarithmic 2-norm.
    pub fn new(matrix: DenseOperator) -> Result<Self> {
        check_dim(matrix.rows(), matrix.cols())?;
        let alpha = log_norm(matrix.matrix()).max(0.0);
        Ok(Self::assemble(matrix, 1.0, alpha))
    }

    /// Wraps a matrix with caller-supplied constants. The constants are
    /// verified on `points` times in `[0, horizon]`.
    pub fn with_bounds(
        matrix: DenseOperator,
        bound_m: f64,
        bound_alpha: f64,
        horizon: f64,
        points: usize,
    ) -> Result<Self> {
        check_dim(matrix.rows(), matrix.cols())?;
        if !(bound_m >= 1.0) {
            return Err(Error::DegenerateInput(format!("M = {bound_m} must be >= 1")));
        }
        let g = Self::assemble(matrix, bound_m, bound_alpha);
        g.certify(horizon, points)?;
        Ok(g)
    }

    fn assemble(matrix: DenseOperator, bound_m: f64, bound_alpha: f64) -> Self {
        let diagonal = matrix.as_diagonal();
        Self {
            matrix,
            diagonal,
            bound_m,
            bound_alpha,
        }
    }

    pub fn scalar(a: f64) -> Result<Self> {
        Self::diagonal(&[a])
    }

    pub fn diagonal(entries: &[f64]) -> Result<Self> {
        if entries.iter().any(|e| !e.is_finite()) {
            return Err(Error::NumericalRange("generator entry".into()));
        }
        Self::new(DenseOperator::from_diagonal(entries))
    }

    /// Dirichlet Laplacian on `(0, 1)` in its first `modes` sine modes:
    /// `diag(-k^2 pi^2)`.
    pub fn heat_modes(modes: usize) -> Result<Self> {
        let diag: Vec<f64> = (1..=modes)
            .map(|k| -((k * k) as f64) * std::f64::consts::PI.powi(2))
            .collect();
        Self::diagonal(&diag)
    }

    pub fn dim(&self) -> usize {
        self.matrix.rows()
    }

    pub fn matrix(&self) -> &DenseOperator {
        &self.matrix
    }

    pub fn bound_m(&self) -> f64 {
        self.bound_m
    }

    pub fn bound_alpha(&self) -> f64 {
        self.bound_alpha
    }

    pub fn is_diagonal(&self) -> bool {
        self.diagonal.is_some()
    }

    /// Eigenvalue with the largest real part.
    pub fn spectral_abscissa(&self) -> f64 {
        if let Some(d) = &self.diagonal {
            return d.iter().copied().fold(f64::NEG_INFINITY, f64::max);
        }
        let m = self.matrix.matrix();
        if is_symmetric(m) {
            return SymmetricEigen::new(m.clone())
                .eigenvalues
                .iter()
                .copied()
                .fold(f64::NEG_INFINITY, f64::max);
        }
        m.complex_eigenvalues()
            .iter()
            .map(|z| z.re)
            .fold(f64::NEG_INFINITY, f64::max)
    }

    /// `S(t) = exp(tA)` as a dense operator.
    pub fn propagator(&self, t: f64) -> Result<DenseOperator> {
        if !(t >= 0.0) {
            return Err(Error::StepSize(t));
        }
        if let Some(d) = &self.diagonal {
            let e: Vec<f64> = d.iter().map(|a| (a * t).exp()).collect();
            if e.iter().any(|v| !v.is_finite()) {
                return Err(Error::NumericalRange("semigroup overflow".into()));
            }
            return Ok(DenseOperator::from_diagonal(&e));
        }
        if t == 0.0 {
            return Ok(DenseOperator::identity(self.dim()));
        }
        let m = expm::expm(&(self.matrix.matrix() * t))?;
        Ok(DenseOperator::from_dmatrix(m))
    }

    pub fn semigroup_apply(&self, t: f64, x: &StateVector) -> Result<StateVector> {
        check_dim(self.dim(), x.dim())?;
        if t == 0.0 {
            return Ok(x.clone());
        }
        if let Some(d) = &self.diagonal {
            if !(t > 0.0) {
                return Err(Error::StepSize(t));
            }
            let y = StateVector::from_fn(x.dim(), |i| (d[i] * t).exp() * x.coords()[i]);
            if !y.is_finite() {
                return Err(Error::NumericalRange("semigroup overflow".into()));
            }
            return Ok(y);
        }
        self.propagator(t)?.apply(x)
    }

    /// `(lambda I - A)^{-1}` for `lambda > alpha`.
    pub fn resolvent(&self, lambda: f64) -> Result<DenseOperator> {
        if !(lambda > self.bound_alpha) {
            return Err(Error::ResolventDomain {
                lambda,
                alpha: self.bound_alpha,
            });
        }
        if let Some(d) = &self.diagonal {
            let mut inv = Vec::with_capacity(d.len());
            for a in d {
                let den = lambda - a;
                if den == 0.0 {
                    return Err(Error::NumericalSingularity);
                }
                inv.push(1.0 / den);
            }
            return Ok(DenseOperator::from_diagonal(&inv));
        }
        let n = self.dim();
        let shifted = DMatrix::identity(n, n) * lambda - self.matrix.matrix();
        let inv = shifted
            .lu()
            .try_inverse()
            .ok_or(Error::NumericalSingularity)?;
        if inv.iter().any(|v| !v.is_finite()) {
            return Err(Error::NumericalSingularity);
        }
        Ok(DenseOperator::from_dmatrix(inv))
    }

    /// Yosida approximation `A_n = n A (nI - A)^{-1} = n^2 R(n; A) - n I`.
    ///
    /// The member inherits `M` and gets growth bound `n alpha / (n - alpha)`,
    /// which equals `alpha` whenever `alpha = 0`.
    pub fn yosida(&self, n: f64) -> Result<Generator> {
        let alpha = self.bound_alpha;
        let member_alpha = if alpha == 0.0 { 0.0 } else { n * alpha / (n - alpha) };
        if let Some(d) = &self.diagonal {
            if !(n > alpha) {
                return Err(Error::ResolventDomain { lambda: n, alpha });
            }
            let entries: Vec<f64> = d.iter().map(|a| n * a / (n - a)).collect();
            return Ok(Self::assemble(
                DenseOperator::from_diagonal(&entries),
                self.bound_m,
                member_alpha,
            ));
        }
        let r = self.resolvent(n)?;
        let dim = self.dim();
        let m = r.matrix() * (n * n) - DMatrix::identity(dim, dim) * n;
        Ok(Self::assemble(
            DenseOperator::new(m)?,
            self.bound_m,
            member_alpha,
        ))
    }

    /// Checks `||exp(tA)|| <= M e^{alpha t}` on `points` equally spaced
    /// times in `[0, horizon]`.
    pub fn certify(&self, horizon: f64, points: usize) -> Result<()> {
        self.certify_against(self.bound_m, self.bound_alpha, horizon, points)
    }

    pub fn certify_against(&self, m: f64, alpha: f64, horizon: f64, points: usize) -> Result<()> {
        let points = points.max(2);
        for i in 0..points {
            let t = horizon * i as f64 / (points - 1) as f64;
            let norm = self.propagator(t)?.op_norm();
            let bound = m * (alpha * t).exp();
            if norm > bound * (1.0 + CERTIFICATION_RTOL) {
                return Err(Error::Certification { t, norm, bound });
            }
        }
        Ok(())
    }

    /// Conjugates by an orthogonal change of basis: `P^T A P`.
    pub fn change_basis(&self, basis: &DenseOperator) -> Result<Generator> {
        check_dim(self.dim(), basis.rows())?;
        let p = basis.matrix();
        let m = p.transpose() * self.matrix.matrix() * p;
        Ok(Self::assemble(
            DenseOperator::new(m)?,
            self.bound_m,
            self.bound_alpha,
        ))
    }
}

fn is_symmetric(m: &DMatrix<f64>) -> bool {
    m.nrows() == m.ncols() && (0..m.nrows()).all(|i| (0..i).all(|j| m[(i, j)] == m[(j, i)]))
}

/// Logarithmic 2-norm: largest eigenvalue of `(A + A^T) / 2`.
pub fn log_norm(a: &DMatrix<f64>) -> f64 {
    if a.is_empty() {
        return 0.0;
    }
    let sym = (a + a.transpose()) * 0.5;
    SymmetricEigen::new(sym)
        .eigenvalues
        .iter()
        .copied()
        .fold(f64::NEG_INFINITY, f64::max)
}

/// A sequence of generators `A_n` approximating a limit generator `A`.
#[derive(Clone, Debug)]
pub struct GeneratorFamily {
    members: Vec<(f64, Generator)>,
    limit: Generator,
}

impl GeneratorFamily {
    pub fn new(members: Vec<(f64, Generator)>, limit: Generator) -> Result<Self> {
        for (_, g) in &members {
            check_dim(limit.dim(), g.dim())?;
        }
        Ok(Self { members, limit })
    }

    /// Yosida approximations of `limit` at each index in `ns`.
    pub fn yosida(limit: &Generator, ns: &[f64]) -> Result<Self> {
        let members = ns
            .iter()
            .map(|&n| Ok((n, limit.yosida(n)?)))
            .collect::<Result<Vec<_>>>()?;
        Self::new(members, limit.clone())
    }

    pub fn members(&self) -> &[(f64, Generator)] {
        &self.members
    }

    pub fn limit(&self) -> &Generator {
        &self.limit
    }

    /// `(max M, max alpha)` across the members, i.e. a common stability type.
    pub fn uniform_bounds(&self) -> (f64, f64) {
        self.members.iter().fold((1.0, 0.0_f64), |(m, a), (_, g)| {
            (m.max(g.bound_m()), a.max(g.bound_alpha()))
        })
    }

    /// `max_{t, x} |S_n(t) x - S(t) x|` for each member.
    pub fn trotter_kato_defect(
        &self,
        times: &[f64],
        probes: &[StateVector],
    ) -> Result<Vec<(f64, f64)>> {
        if times.is_empty() || probes.is_empty() {
            return Err(Error::DegenerateInput("empty time grid or probe set".into()));
        }
        let limit_props = times
            .iter()
            .map(|&t| self.limit.propagator(t))
            .collect::<Result<Vec<_>>>()?;
        self.members
            .iter()
            .map(|(idx, g)| {
                let mut worst = 0.0_f64;
                for (t, sp) in times.iter().zip(&limit_props) {
                    let sn = g.propagator(*t)?;
                    for x in probes {
                        let d = sn.apply(x)?.distance(&sp.apply(x)?);
                        worst = worst.max(d);
                    }
                }
                Ok((*idx, worst))
            })
            .collect()
    }
}

#[cfg(test)]
mod tests {
    use super::*;
    use approx::assert_relative_eq;
    use proptest::prelude::*;
    use std::f64::consts::PI;

    #[test]
    fn resolvent_examples() {
        let r = Generator::scalar(-1.0).unwrap().resolvent(1.0).unwrap();
        assert_relative_eq!(r.matrix()[(0, 0)], 0.5);

        let zero = Generator::new(DenseOperator::zeros(2, 2)).unwrap();
        let r = zero.resolvent(2.0).unwrap();
        assert_eq!(r, DenseOperator::from_diagonal(&[0.5, 0.5]));

        let g = Generator::diagonal(&[-1.0, -4.0]).unwrap();
        let r = g.resolvent(1.0).unwrap();
        assert_relative_eq!(r.matrix()[(0, 0)], 0.5, epsilon = 1e-15);
        assert_relative_eq!(r.matrix()[(1, 1)], 0.2, epsilon = 1e-15);
    }

    #[test]
    fn resolvent_dense_path_inverts() {
        let a = DenseOperator::from_row_slice(2, 2, &[-1.0, 0.5, -0.3, -2.0]).unwrap();
        let g = Generator::new(a.clone()).unwrap();
        let lam = 1.5;
        let r = g.resolvent(lam).unwrap();
        let check = (DMatrix::identity(2, 2) * lam - a.matrix()) * r.matrix();
        assert!((check - DMatrix::identity(2, 2)).abs().max() < 1e-10);
    }

    #[test]
    fn resolvent_domain_error() {
        let g = Generator::scalar(-1.0).unwrap();
        assert!(matches!(
            g.resolvent(0.0),
            Err(Error::ResolventDomain { .. })
        ));
        let g = Generator::scalar(2.0).unwrap();
        assert!(g.resolvent(1.5).is_err());
    }

    #[test]
    fn resolvent_singular_system() {
        // alpha overridden below the eigenvalue 1 so lambda = 1 is admitted
        let g = Generator::assemble(DenseOperator::from_row_slice(2, 2, &[1.0, 1.0, 0.0, 1.0]).unwrap(), 1.0, 0.0);
        assert!(matches!(g.resolvent(1.0), Err(Error::NumericalSingularity)));
    }

    #[test]
    fn yosida_examples() {
        let zero = Generator::new(DenseOperator::zeros(2, 2)).unwrap();
        for n in [1.0, 5.0, 100.0] {
            assert_eq!(zero.yosida(n).unwrap().matrix(), &DenseOperator::zeros(2, 2));
        }
        let g = Generator::scalar(-1.0).unwrap();
        assert_relative_eq!(g.yosida(1.0).unwrap().matrix().matrix()[(0, 0)], -0.5);
        let mut prev = f64::INFINITY;
        for n in [1.0, 10.0, 100.0] {
            let an = g.yosida(n).unwrap().matrix().matrix()[(0, 0)];
            assert!((an + 1.0).abs() <= 2.0 / n);
            assert!((an + 1.0).abs() < prev);
            prev = (an + 1.0).abs();
        }
    }

    #[test]
    fn yosida_dense_matches_scalar_formula() {
        // upper triangular with distinct diagonal: dense LU path
        let a = DenseOperator::from_row_slice(2, 2, &[-1.0, 0.7, 0.0, -3.0]).unwrap();
        let g = Generator::new(a).unwrap();
        assert!(!g.is_diagonal());
        let n = 4.0;
        let y = g.yosida(n).unwrap();
        let m = y.matrix().matrix();
        assert_relative_eq!(m[(0, 0)], -n / (n + 1.0), epsilon = 1e-12);
        assert_relative_eq!(m[(1, 1)], n * -3.0 / (n + 3.0), epsilon = 1e-12);
        // n A (nI - A)^{-1} computed the long way
        let ni = DMatrix::identity(2, 2) * n;
        let long = g.matrix().matrix() * n * (&ni - g.matrix().matrix()).try_inverse().unwrap();
        assert!((long - m).abs().max() < 1e-12);
    }

    #[test]
    fn semigroup_examples() {
        let x = StateVector::new(vec![0.3, -1.2]).unwrap();
        let g = Generator::diagonal(&[-PI * PI, -4.0 * PI * PI]).unwrap();
        assert_eq!(g.semigroup_apply(0.0, &x).unwrap(), x);

        let s = Generator::scalar(-1.0).unwrap();
        let y = s.semigroup_apply(1.0, &StateVector::new(vec![1.0]).unwrap()).unwrap();
        assert!((y.coords()[0] - 0.367_879_441_171_442_3).abs() < 1e-9);

        let one = StateVector::new(vec![1.0, 1.0]).unwrap();
        let y = g.semigroup_apply(0.1, &one).unwrap();
        assert_relative_eq!(y.coords()[0], (-0.1 * PI * PI).exp(), max_relative = 1e-14);
        assert_relative_eq!(y.coords()[1], (-0.4 * PI * PI).exp(), max_relative = 1e-14);
    }

    #[test]
    fn diagonal_and_dense_paths_agree() {
        let d = [-1.0, -2.5, 0.3];
        let diag = Generator::diagonal(&d).unwrap();
        let dense = Generator::assemble(DenseOperator::from_diagonal(&d), 1.0, 0.3);
        let dense = Generator { diagonal: None, ..dense };
        let x = StateVector::new(vec![1.0, 2.0, -1.0]).unwrap();
        let a = diag.semigroup_apply(0.7, &x).unwrap();
        let b = dense.semigroup_apply(0.7, &x).unwrap();
        assert!(a.distance(&b) < 1e-13);
    }

    #[test]
    fn certification_of_heat_and_yosida_members() {
        let g = Generator::heat_modes(8).unwrap();
        assert_eq!(g.bound_m(), 1.0);
        assert_eq!(g.bound_alpha(), 0.0);
        g.certify(1.0, 21).unwrap();
        let fam = GeneratorFamily::yosida(&g, &[2.0, 8.0, 32.0, 128.0]).unwrap();
        for (_, member) in fam.members() {
            member
                .certify_against(g.bound_m(), g.bound_alpha(), 1.0, 21)
                .unwrap();
        }
        assert_eq!(fam.uniform_bounds(), (1.0, 0.0));
    }

    #[test]
    fn certification_detects_violation() {
        let g = Generator::scalar(1.0).unwrap();
        assert_relative_eq!(g.bound_alpha(), 1.0);
        assert!(g.certify_against(1.0, 0.5, 1.0, 5).is_err());
        assert!(Generator::with_bounds(DenseOperator::from_diagonal(&[-1.0]), 1.0, -1.0, 2.0, 9).is_ok());
        // non-normal: ||exp(tA)|| exceeds 1 transiently although the spectrum is stable
        let nn = DenseOperator::from_row_slice(2, 2, &[-1.0, 10.0, 0.0, -1.0]).unwrap();
        assert!(Generator::with_bounds(nn.clone(), 1.0, 0.0, 1.0, 11).is_err());
        let g = Generator::new(nn).unwrap();
        g.certify(1.0, 51).unwrap();
    }

    #[test]
    fn defect_examples() {
        let g = Generator::scalar(-1.0).unwrap();
        let same = GeneratorFamily::new(vec![(1.0, g.clone()), (2.0, g.clone())], g.clone()).unwrap();
        let x = vec![StateVector::new(vec![1.0]).unwrap()];
        for (_, d) in same.trotter_kato_defect(&[0.0, 0.5, 1.0], &x).unwrap() {
            assert!(d <= 1e-12);
        }

        let fam = GeneratorFamily::yosida(&g, &[1.0]).unwrap();
        let d = fam.trotter_kato_defect(&[1.0], &x).unwrap();
        let want = (-0.5f64).exp() - (-1.0f64).exp();
        assert!((d[0].1 - want).abs() < 1e-14);
        assert!((d[0].1 - 0.23865).abs() < 1e-5);
    }

    #[test]
    fn defect_decreases_on_heat_modes() {
        let g = Generator::diagonal(&[-PI * PI, -4.0 * PI * PI]).unwrap();
        let fam = GeneratorFamily::yosida(&g, &[2.0, 4.0, 8.0, 16.0, 32.0]).unwrap();
        let times: Vec<f64> = (0..=20).map(|i| i as f64 * 0.05).collect();
        let probes = vec![
            StateVector::new(vec![1.0, 1.0]).unwrap(),
            StateVector::new(vec![1.0, -0.5]).unwrap(),
        ];
        let table = fam.trotter_kato_defect(&times, &probes).unwrap();
        for w in table.windows(2) {
            assert!(w[1].1 < w[0].1, "{table:?}");
        }
    }

    #[test]
    fn yosida_strong_convergence_heat_generator() {
        let g = Generator::heat_modes(16).unwrap();
        let ns: Vec<f64> = (1..=7).map(|k| 2f64.powi(k)).collect();
        let fam = GeneratorFamily::yosida(&g, &ns).unwrap();
        let x = StateVector::from_fn(16, |k| 1.0 / (k + 1) as f64);
        let table = fam.trotter_kato_defect(&[0.25], &[x]).unwrap();
        assert!(table.last().unwrap().1 < table[0].1 / 10.0, "{table:?}");
    }

    #[test]
    fn spectral_abscissa_paths() {
        assert_eq!(Generator::heat_modes(3).unwrap().spectral_abscissa(), -PI * PI);
        let sym = Generator::new(DenseOperator::from_row_slice(2, 2, &[-2.0, 1.0, 1.0, -2.0]).unwrap()).unwrap();
        assert_relative_eq!(sym.spectral_abscissa(), -1.0, epsilon = 1e-12);
        let tri = Generator::new(DenseOperator::from_row_slice(2, 2, &[-1.0, 5.0, 0.0, -3.0]).unwrap()).unwrap();
        assert_relative_eq!(tri.spectral_abscissa(), -1.0, epsilon = 1e-12);
    }

    /// Random matrices with spectrum in the left half plane.
    fn stable_matrix(d: usize) -> impl Strategy<Value = DMatrix<f64>> {
        proptest::collection::vec(-1.0f64..1.0, d * d).prop_map(move |v| {
            let b = DMatrix::from_vec(d, d, v);
            // ||B|| <= d, so B - (d + 0.5) I has a stable spectrum
            b - DMatrix::identity(d, d) * (d as f64 + 0.5)
        })
    }

    fn sym_matrix(d: usize) -> impl Strategy<Value = DMatrix<f64>> {
        proptest::collection::vec(-1.0f64..1.0, d * d).prop_map(move |v| {
            let b = DMatrix::from_vec(d, d, v);
            -(&b * b.transpose()) - DMatrix::identity(d, d) * 0.1
        })
    }

    proptest! {
        #![proptest_config(ProptestConfig::with_cases(64))]

        #[test]
        fn semigroup_law(a in stable_matrix(4), s in 0.0f64..1.0, t in 0.0f64..1.0,
                         x in proptest::collection::vec(-1.0f64..1.0, 4)) {
            let g = Generator::new(DenseOperator::new(a).unwrap()).unwrap();
            let x = StateVector::new(x).unwrap();
            let joint = g.semigroup_apply(s + t, &x).unwrap();
            let split = g.semigroup_apply(s, &g.semigroup_apply(t, &x).unwrap()).unwrap();
            prop_assert!(joint.distance(&split) <= 1e-9 * (1.0 + joint.norm()));
            let bound = g.bound_m() * (g.bound_alpha() * (s + t)).exp() * x.norm();
            prop_assert!(joint.norm() <= bound * (1.0 + 1e-9) + 1e-12);
        }

        #[test]
        fn resolvent_identity(a in sym_matrix(4), lam in 0.5f64..5.0, mu in 0.5f64..5.0) {
            let g = Generator::new(DenseOperator::new(a).unwrap()).unwrap();
            let rl = g.resolvent(lam).unwrap().into_matrix();
            let rm = g.resolvent(mu).unwrap().into_matrix();
            let lhs = &rl - &rm;
            let rhs = (&rl * &rm) * (mu - lam);
            prop_assert!((lhs - rhs).abs().max() <= 1e-9);
        }

        #[test]
        fn yosida_members_share_parent_bounds(a in sym_matrix(3), n in 0.5f64..200.0) {
            let g = Generator::new(DenseOperator::new(a).unwrap()).unwrap();
            let y = g.yosida(n).unwrap();
            y.certify_against(g.bound_m(), g.bound_alpha(), 2.0, 11).unwrap();
        }
    }
}
