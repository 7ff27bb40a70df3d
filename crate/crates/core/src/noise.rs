//! Q-Wiener increments in the truncated noise space `H2 = R^m`.
//!
//! `Q = diag(kappa_1, ..., kappa_m)` in the canonical basis. Every Gaussian
//! draw comes from a ChaCha8 block cipher keyed by the master seed, with the
//! particle id as the cipher stream and the step number selecting a disjoint
//! window of the keystream, so a draw depends only on
//! `(seed, particle_id, step)` and never on scheduling.

use rand::Rng;
use rand_chacha::rand_core::SeedableRng;
use rand_chacha::ChaCha8Rng;
use rand_distr::StandardNormal;
use rayon::prelude::*;

use crate::error::{Error, Result};
use crate::hilbert::{DenseOperator, StateVector};

/// Keystream partitions so that different uses of one seed never overlap.
#[derive(Clone, Copy, Debug, PartialEq, Eq)]
#[repr(u64)]
pub enum Domain {
    Increment = 1,
    InitialLaw = 2,
    Probe = 3,
}

#[derive(Clone, Debug, PartialEq)]
pub struct QWienerSpec {
    kappas: Vec<f64>,
    trace_q: f64,
}

impl QWienerSpec {
    pub fn new(kappas: Vec<f64>) -> Result<Self> {
        if kappas.is_empty() {
            return Err(Error::DegenerateInput("noise space has dimension 0".into()));
        }
        if let Some(k) = kappas.iter().find(|k| !(k.is_finite() && **k >= 0.0)) {
            return Err(Error::DegenerateInput(format!("covariance eigenvalue {k}")));
        }
        let trace_q = kappas.iter().sum();
        Ok(Self { kappas, trace_q })
    }

    /// `kappa_k = k^{-decay}`, `k = 1..=m`.
    pub fn power_law(m: usize, decay: f64) -> Result<Self> {
        Self::new((1..=m).map(|k| (k as f64).powf(-decay)).collect())
    }

    pub fn dim(&self) -> usize {
        self.kappas.len()
    }

    pub fn kappas(&self) -> &[f64] {
        &self.kappas
    }

    pub fn trace_q(&self) -> f64 {
        self.trace_q
    }
}

/// Position in the keystream of one particle.
#[derive(Clone, Copy, Debug, PartialEq, Eq)]
pub struct NoiseStream {
    seed: u64,
    particle_id: u64,
    step: u64,
}

impl NoiseStream {
    pub fn new(seed: u64, particle_id: u64) -> Self {
        Self::at(seed, particle_id, 0)
    }

    pub fn at(seed: u64, particle_id: u64, step: u64) -> Self {
        Self {
            seed,
            particle_id,
            step,
        }
    }

    pub fn seed(&self) -> u64 {
        self.seed
    }

    pub fn particle_id(&self) -> u64 {
        self.particle_id
    }

    pub fn step(&self) -> u64 {
        self.step
    }

    /// `n` standard normals for the current step, without advancing.
    pub fn normals(&self, domain: Domain, n: usize) -> Vec<f64> {
        let mut rng = keyed_rng(self.seed, domain, self.particle_id, self.step);
        (0..n).map(|_| rng.sample(StandardNormal)).collect()
    }
}

fn keyed_rng(seed: u64, domain: Domain, particle_id: u64, step: u64) -> ChaCha8Rng {
    let mut key = [0u8; 32];
    key[..8].copy_from_slice(&seed.to_le_bytes());
    key[8..16].copy_from_slice(&(domain as u64).to_le_bytes());
    let mut rng = ChaCha8Rng::from_seed(key);
    rng.set_stream(particle_id);
    // 2^32 words per step, far more than any increment consumes
    rng.set_word_pos(u128::from(step) << 32);
    rng
}

/// Draws `dW ~ N(0, dt Q)` and advances the stream by one step.
pub fn sample_increment(q: &QWienerSpec, dt: f64, stream: &mut NoiseStream) -> Result<StateVector> {
    if !(dt > 0.0 && dt.is_finite()) {
        return Err(Error::StepSize(dt));
    }
    let z = stream.normals(Domain::Increment, q.dim());
    stream.step += 1;
    let coords = z
        .iter()
        .zip(q.kappas())
        .map(|(z, k)| z * (k * dt).sqrt())
        .collect();
    StateVector::new(coords)
}

/// Outcome of the moment comparison for `y(T) = sum_j G(t_j) dW_j`.
#[derive(Clone, Debug, PartialEq)]
pub struct ItoMomentCheck {
    /// Monte Carlo estimate of `E|y(T)|^p`.
    pub lhs: f64,
    pub lhs_se: f64,
    /// `[p(p-1)/2]^{p/2} (tr Q)^{p/2} T^{p/2-1} int_0^T |G(r)|^p dr`.
    pub rhs: f64,
    /// `int_0^T tr(G Q G^T) dr`, the exact value of `E|y(T)|^2`.
    pub isometry: f64,
}

impl ItoMomentCheck {
    pub fn within_bound(&self, slack_se: f64) -> bool {
        self.lhs <= self.rhs + slack_se * self.lhs_se
    }
}

/// Compares the Monte Carlo `p`-th moment of a discrete stochastic integral
/// with the Burkholder-type bound. `g_path[j]` is the value of `G` on the
/// `j`-th interval of a uniform grid with spacing `dt`.
pub fn ito_moment_check(
    g_path: &[DenseOperator],
    dt: f64,
    q: &QWienerSpec,
    n_samples: usize,
    p: u32,
    seed: u64,
) -> Result<ItoMomentCheck> {
    if p < 2 || !p.is_multiple_of(2) {
        return Err(Error::DegenerateInput(format!("moment order {p} must be even and >= 2")));
    }
    if !(dt > 0.0) {
        return Err(Error::StepSize(dt));
    }
    if n_samples < 2 {
        return Err(Error::DegenerateInput("need at least two samples".into()));
    }
    let d = match g_path.first() {
        Some(g) => g.rows(),
        None => return Err(Error::DegenerateInput("empty G path".into())),
    };
    for g in g_path {
        crate::hilbert::check_dim(q.dim(), g.cols())?;
        crate::hilbert::check_dim(d, g.rows())?;
    }
    let horizon = dt * g_path.len() as f64;

    let samples: Vec<f64> = (0..n_samples as u64)
        .into_par_iter()
        .map(|id| {
            let mut stream = NoiseStream::new(seed, id);
            let mut y = StateVector::zeros(d);
            for g in g_path {
                let dw = sample_increment(q, dt, &mut stream)?;
                y.axpy(1.0, &g.apply(&dw)?);
            }
            Ok(y.norm().powi(p as i32))
        })
        .collect::<Result<_>>()?;
    let (lhs, lhs_se) = mean_and_se(&samples);

    let pf = p as f64;
    let integral: f64 = g_path.iter().map(|g| g.op_norm().powf(pf) * dt).sum();
    let rhs = (0.5 * pf * (pf - 1.0)).powf(pf / 2.0)
        * q.trace_q().powf(pf / 2.0)
        * horizon.powf(pf / 2.0 - 1.0)
        * integral;
    let isometry = g_path
        .iter()
        .map(|g| g.weighted_trace(q.kappas()).map(|v| v * dt))
        .sum::<Result<f64>>()?;
    Ok(ItoMomentCheck {
        lhs,
        lhs_se,
        rhs,
        isometry,
    })
}

/// Sample mean and its standard error, summed in index order.
pub fn mean_and_se(values: &[f64]) -> (f64, f64) {
    let n = values.len();
    if n == 0 {
        return (0.0, 0.0);
    }
    let mean = values.iter().sum::<f64>() / n as f64;
    if n < 2 {
        return (mean, 0.0);
    }
    let var = values.iter().map(|v| (v - mean) * (v - mean)).sum::<f64>() / (n - 1) as f64;
    (mean, (var / n as f64).sqrt())
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn trace_and_validation() {
        let q = QWienerSpec::new(vec![1.0, 0.5]).unwrap();
        assert_eq!(q.trace_q(), 1.5);
        assert!(QWienerSpec::new(vec![1.0, -0.1]).is_err());
        assert!(QWienerSpec::new(vec![f64::NAN]).is_err());
        assert!(QWienerSpec::new(vec![]).is_err());
        let p = QWienerSpec::power_law(3, 2.0).unwrap();
        assert_eq!(p.kappas(), &[1.0, 0.25, 1.0 / 9.0]);
    }

    #[test]
    fn zero_covariance_gives_zero_increment() {
        let q = QWienerSpec::new(vec![0.0, 0.0]).unwrap();
        let mut s = NoiseStream::new(7, 3);
        for _ in 0..10 {
            assert_eq!(sample_increment(&q, 0.1, &mut s).unwrap(), StateVector::zeros(2));
        }
        assert_eq!(s.step(), 10);
    }

    #[test]
    fn step_size_must_be_positive() {
        let q = QWienerSpec::new(vec![1.0]).unwrap();
        let mut s = NoiseStream::new(0, 0);
        assert!(matches!(sample_increment(&q, 0.0, &mut s), Err(Error::StepSize(_))));
        assert!(matches!(sample_increment(&q, -1.0, &mut s), Err(Error::StepSize(_))));
        assert_eq!(s.step(), 0);
    }

    #[test]
    fn increment_variance() {
        let q = QWienerSpec::new(vec![1.0]).unwrap();
        let dt = 0.01;
        let n = 100_000;
        let draws: Vec<f64> = (0..n)
            .map(|i| {
                let mut s = NoiseStream::new(11, i);
                sample_increment(&q, dt, &mut s).unwrap().coords()[0]
            })
            .collect();
        let sq: Vec<f64> = draws.iter().map(|x| x * x).collect();
        let (var, se) = mean_and_se(&sq);
        assert!((var - dt).abs() < 3.0 * se, "var {var} se {se}");
    }

    #[test]
    fn reproducible_and_random_access() {
        let q = QWienerSpec::new(vec![1.0, 0.3, 0.1]).unwrap();
        let mut a = NoiseStream::new(42, 5);
        let seq: Vec<StateVector> = (0..20).map(|_| sample_increment(&q, 0.5, &mut a).unwrap()).collect();
        let mut b = NoiseStream::new(42, 5);
        for want in &seq {
            let got = sample_increment(&q, 0.5, &mut b).unwrap();
            assert_eq!(got.coords(), want.coords());
        }
        // jumping straight to step 13 yields the same draw
        let mut c = NoiseStream::at(42, 5, 13);
        assert_eq!(sample_increment(&q, 0.5, &mut c).unwrap(), seq[13]);
        // the domain separates keystreams
        let s = NoiseStream::new(42, 5);
        assert_ne!(s.normals(Domain::Increment, 3), s.normals(Domain::InitialLaw, 3));
    }

    #[test]
    fn streams_are_uncorrelated() {
        let q = QWienerSpec::new(vec![1.0]).unwrap();
        let n = 20_000u64;
        let draw = |pid: u64, step: u64| {
            let mut s = NoiseStream::at(3, pid, step);
            sample_increment(&q, 1.0, &mut s).unwrap().coords()[0]
        };
        // particle 0 vs particle 1 over many steps
        let xs: Vec<f64> = (0..n).map(|k| draw(0, k)).collect();
        let ys: Vec<f64> = (0..n).map(|k| draw(1, k)).collect();
        let corr = correlation(&xs, &ys);
        assert!(corr.abs() < 3.0 / (n as f64).sqrt(), "corr {corr}");
    }

    fn correlation(x: &[f64], y: &[f64]) -> f64 {
        let n = x.len() as f64;
        let mx = x.iter().sum::<f64>() / n;
        let my = y.iter().sum::<f64>() / n;
        let cov: f64 = x.iter().zip(y).map(|(a, b)| (a - mx) * (b - my)).sum();
        let vx: f64 = x.iter().map(|a| (a - mx).powi(2)).sum();
        let vy: f64 = y.iter().map(|b| (b - my).powi(2)).sum();
        cov / (vx * vy).sqrt()
    }

    #[test]
    fn ito_zero_integrand() {
        let q = QWienerSpec::new(vec![1.0]).unwrap();
        let path = vec![DenseOperator::zeros(1, 1); 10];
        let c = ito_moment_check(&path, 0.1, &q, 100, 2, 1).unwrap();
        assert_eq!(c.lhs, 0.0);
        assert_eq!(c.rhs, 0.0);
        assert!(c.within_bound(3.0));
    }

    #[test]
    fn ito_second_and_fourth_moment() {
        let q = QWienerSpec::new(vec![1.0]).unwrap();
        let path = vec![DenseOperator::identity(1); 16];
        let c2 = ito_moment_check(&path, 1.0 / 16.0, &q, 40_000, 2, 9).unwrap();
        assert!((c2.rhs - 1.0).abs() < 1e-14);
        assert!((c2.isometry - 1.0).abs() < 1e-14);
        assert!((c2.lhs - 1.0).abs() < 3.0 * c2.lhs_se, "{c2:?}");
        assert!(c2.within_bound(3.0));

        let c4 = ito_moment_check(&path, 1.0 / 16.0, &q, 40_000, 4, 9).unwrap();
        assert!((c4.rhs - 36.0).abs() < 1e-12);
        assert!((c4.lhs - 3.0).abs() < 3.0 * c4.lhs_se, "{c4:?}");
        assert!(c4.lhs < c4.rhs);
    }

    #[test]
    fn ito_rejects_odd_order() {
        let q = QWienerSpec::new(vec![1.0]).unwrap();
        let path = vec![DenseOperator::identity(1); 4];
        assert!(ito_moment_check(&path, 0.25, &q, 10, 3, 0).is_err());
    }
}
