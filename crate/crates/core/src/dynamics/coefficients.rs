use std::fmt::Debug;
use std::sync::Arc;

use nalgebra::DMatrix;

use crate::error::{Error, Result};
use crate::hilbert::{DenseOperator, StateVector};
use crate::measure::{rho_upper, EmpiricalMeasure};
use crate::noise::{Domain, NoiseStream};

/// Drift `f(x, mu)`.
pub trait Drift: Send + Sync + Debug {
    /// Writes `f(x, mu)` into `out`.
    fn eval(&self, x: &[f64], mu: &EmpiricalMeasure, out: &mut [f64]);

    fn depends_on_law(&self) -> bool;
}

/// Diffusion `g(x, mu) in L(H2, H1)`.
pub trait Diffusion: Send + Sync + Debug {
    fn noise_dim(&self) -> usize;

    fn operator(&self, x: &[f64], mu: &EmpiricalMeasure) -> DenseOperator;

    /// Writes `g(x, mu) dw` into `out`.
    fn apply(&self, x: &[f64], mu: &EmpiricalMeasure, dw: &[f64], out: &mut [f64]) {
        let g = self.operator(x, mu);
        let y = g.matrix() * nalgebra::DVector::from_column_slice(dw);
        out.copy_from_slice(y.as_slice());
    }

    fn depends_on_law(&self) -> bool;
}

/// `f(x, mu) = scale * [rate x + theta (mean(mu) - x) + beta sin(x) + c]
///             + bump e_k`, with `sin` taken componentwise.
#[derive(Clone, Debug, PartialEq)]
pub struct StandardDrift {
    pub scale: f64,
    pub rate: f64,
    pub mean_coupling: f64,
    pub sine: f64,
    pub forcing: Vec<f64>,
    /// `(mode, amplitude)` of an additive unit-vector perturbation.
    pub bump: Option<(usize, f64)>,
}

impl StandardDrift {
    pub fn zero() -> Self {
        Self {
            scale: 1.0,
            rate: 0.0,
            mean_coupling: 0.0,
            sine: 0.0,
            forcing: Vec::new(),
            bump: None,
        }
    }

    /// Lipschitz constant with respect to `|x - y| + rho_upper(mu, nu)`.
    pub fn lipschitz(&self) -> f64 {
        self.scale.abs() * (self.rate.abs() + self.mean_coupling.abs() + self.sine.abs())
    }

    /// `K3` with `|f(x, mu)|^2 <= K3 (1 + |x|^2 + ||mu||_phi^2)`.
    pub fn growth(&self) -> f64 {
        let constant = self.scale.abs() * self.forcing.iter().map(|v| v * v).sum::<f64>().sqrt()
            + self.bump.map_or(0.0, |(_, a)| a.abs());
        let l = self.lipschitz().max(constant);
        3.0 * l * l
    }
}

impl Drift for StandardDrift {
    fn eval(&self, x: &[f64], mu: &EmpiricalMeasure, out: &mut [f64]) {
        let m = mu.mean();
        for (k, o) in out.iter_mut().enumerate() {
            let mut v = self.rate * x[k];
            if self.mean_coupling != 0.0 {
                v += self.mean_coupling * (m[k] - x[k]);
            }
            if self.sine != 0.0 {
                v += self.sine * x[k].sin();
            }
            if let Some(c) = self.forcing.get(k) {
                v += c;
            }
            *o = self.scale * v;
        }
        if let Some((k, amp)) = self.bump {
            if let Some(o) = out.get_mut(k) {
                *o += amp;
            }
        }
    }

    fn depends_on_law(&self) -> bool {
        self.mean_coupling != 0.0 && self.scale != 0.0
    }
}

/// Diagonal diffusion `g(x, mu) e_k = (sigma + gamma sin(x_k - mean_k)) e_k`
/// for `k < min(d, m)`; the remaining noise directions do not enter `H1`.
#[derive(Clone, Debug, PartialEq)]
pub struct StandardDiffusion {
    pub state_dim: usize,
    pub noise_dim: usize,
    pub sigma: f64,
    pub gamma: f64,
}

impl StandardDiffusion {
    pub fn lipschitz(&self) -> f64 {
        self.gamma.abs()
    }

    /// `K4` with `|g(x, mu)|^2 <= K4 (1 + |x|^2 + ||mu||_phi^2)`.
    pub fn growth(&self) -> f64 {
        (self.sigma.abs() + self.gamma.abs()).powi(2)
    }

    fn entry(&self, k: usize, x: &[f64], mean: &[f64]) -> f64 {
        if self.gamma == 0.0 {
            self.sigma
        } else {
            self.sigma + self.gamma * (x[k] - mean[k]).sin()
        }
    }
}

impl Diffusion for StandardDiffusion {
    fn noise_dim(&self) -> usize {
        self.noise_dim
    }

    fn operator(&self, x: &[f64], mu: &EmpiricalMeasure) -> DenseOperator {
        let mut m = DMatrix::zeros(self.state_dim, self.noise_dim);
        for k in 0..self.state_dim.min(self.noise_dim) {
            m[(k, k)] = self.entry(k, x, mu.mean());
        }
        DenseOperator::new(m).expect("finite diffusion entries")
    }

    fn apply(&self, x: &[f64], mu: &EmpiricalMeasure, dw: &[f64], out: &mut [f64]) {
        out.iter_mut().for_each(|o| *o = 0.0);
        let mean = mu.mean();
        for k in 0..self.state_dim.min(self.noise_dim) {
            out[k] = self.entry(k, x, mean) * dw[k];
        }
    }

    fn depends_on_law(&self) -> bool {
        self.gamma != 0.0
    }
}

/// The coefficient pair together with its Lipschitz (`K1`, `K2`) and growth
/// (`K3`, `K4`) constants.
#[derive(Clone, Debug)]
pub struct CoefficientSpec {
    pub drift: Arc<dyn Drift>,
    pub diffusion: Arc<dyn Diffusion>,
    pub k1: f64,
    pub k2: f64,
    pub k3: f64,
    pub k4: f64,
}

impl CoefficientSpec {
    pub fn standard(drift: StandardDrift, diffusion: StandardDiffusion) -> Self {
        Self {
            k1: drift.lipschitz(),
            k2: diffusion.lipschitz(),
            k3: drift.growth(),
            k4: diffusion.growth(),
            drift: Arc::new(drift),
            diffusion: Arc::new(diffusion),
        }
    }

    pub fn depends_on_law(&self) -> bool {
        self.drift.depends_on_law() || self.diffusion.depends_on_law()
    }

    /// Spot-checks the Lipschitz constants on random pairs `(x, mu)`,
    /// `(y, nu)` with `atoms`-point measures drawn from `seed`.
    pub fn certify_lipschitz(&self, dim: usize, pairs: usize, atoms: usize, seed: u64) -> Result<()> {
        let draw = |id: u64, n: usize| NoiseStream::new(seed, id).normals(Domain::Probe, n);
        for p in 0..pairs as u64 {
            let x = draw(4 * p, dim);
            let y = draw(4 * p + 1, dim);
            let mu = EmpiricalMeasure::from_flat(dim, draw(4 * p + 2, dim * atoms))?;
            let nu = EmpiricalMeasure::from_flat(dim, scaled(draw(4 * p + 3, dim * atoms), 1.5))?;
            let dx = StateVector::new(x.clone())?.distance(&StateVector::new(y.clone())?);
            let budget = dx + rho_upper(&mu, &nu)?.value;

            let mut fx = vec![0.0; dim];
            let mut fy = vec![0.0; dim];
            self.drift.eval(&x, &mu, &mut fx);
            self.drift.eval(&y, &nu, &mut fy);
            let df = StateVector::new(fx)?.distance(&StateVector::new(fy)?);
            if df > self.k1 * budget + 1e-9 {
                return Err(Error::DegenerateInput(format!(
                    "drift Lipschitz check failed: {df} > {} * {budget}",
                    self.k1
                )));
            }
            let gx = self.diffusion.operator(&x, &mu).into_matrix();
            let gy = self.diffusion.operator(&y, &nu).into_matrix();
            let dg = DenseOperator::new(gx - gy)?.op_norm();
            if dg > self.k2 * budget + 1e-9 {
                return Err(Error::DegenerateInput(format!(
                    "diffusion Lipschitz check failed: {dg} > {} * {budget}",
                    self.k2
                )));
            }
        }
        Ok(())
    }
}

fn scaled(mut v: Vec<f64>, s: f64) -> Vec<f64> {
    v.iter_mut().for_each(|x| *x *= s);
    v
}
