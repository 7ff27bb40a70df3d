//! Interacting-particle approximation of the mild solution.
//!
//! Each step of the exponential Euler scheme is
//!
//! ```text
//! x_{j+1} = S(dt) [ x_j + f(x_j, mu_j) dt + eps g(x_j, mu_j) dW_j ]
//! ```
//!
//! where `mu_j` is the empirical law of the ensemble at the start of the step
//! (or, for the Picard iteration, a frozen law from the previous iterate).
//! Particles are advanced in parallel; particle `i` at step `j` always draws
//! the increment keyed by `(seed, i, j)`, so results do not depend on the
//! worker count.

mod coefficients;

pub use coefficients::{CoefficientSpec, Diffusion, Drift, StandardDiffusion, StandardDrift};

use nalgebra::{DMatrix, DVector};
use rayon::prelude::*;

use crate::error::{Error, Result};
use crate::hilbert::{check_dim, StateVector};
use crate::measure::{d_metric, EmpiricalMeasure, LawTrajectory};
use crate::noise::{mean_and_se, sample_increment, Domain, NoiseStream, QWienerSpec};
use crate::semigroup::Generator;

/// Uniform grid `t_j = j T / S` with every `record_every`-th point stored.
#[derive(Clone, Copy, Debug, PartialEq)]
pub struct TimeGrid {
    pub horizon: f64,
    pub steps: usize,
    pub record_every: usize,
}

impl TimeGrid {
    pub fn new(horizon: f64, steps: usize, record_every: usize) -> Result<Self> {
        if !(horizon > 0.0 && horizon.is_finite()) {
            return Err(Error::Grid(format!("horizon {horizon} must be positive")));
        }
        if steps == 0 || record_every == 0 || !steps.is_multiple_of(record_every) {
            return Err(Error::Grid(format!(
                "{steps} steps cannot be recorded every {record_every}"
            )));
        }
        Ok(Self {
            horizon,
            steps,
            record_every,
        })
    }

    pub fn dt(&self) -> f64 {
        self.horizon / self.steps as f64
    }

    pub fn time(&self, step: usize) -> f64 {
        self.horizon * step as f64 / self.steps as f64
    }

    pub fn recorded_steps(&self) -> impl Iterator<Item = usize> + '_ {
        (0..=self.steps).step_by(self.record_every)
    }

    pub fn recorded_times(&self) -> Vec<f64> {
        self.recorded_steps().map(|j| self.time(j)).collect()
    }
}

#[derive(Clone, Debug, PartialEq)]
pub enum InitialLaw {
    Fixed(StateVector),
    /// Independent Gaussian coordinates with the given means and standard
    /// deviations.
    Gaussian { mean: Vec<f64>, std: Vec<f64> },
}

impl InitialLaw {
    pub fn dim(&self) -> usize {
        match self {
            InitialLaw::Fixed(x) => x.dim(),
            InitialLaw::Gaussian { mean, .. } => mean.len(),
        }
    }

    /// Draw for particle `id`; Gaussian laws reuse the same standard normals
    /// for a given `(seed, id)`, which couples different initial laws.
    pub fn sample(&self, seed: u64, id: u64) -> Vec<f64> {
        match self {
            InitialLaw::Fixed(x) => x.coords().to_vec(),
            InitialLaw::Gaussian { mean, std } => {
                let z = NoiseStream::new(seed, id).normals(Domain::InitialLaw, mean.len());
                mean.iter()
                    .zip(std)
                    .zip(z)
                    .map(|((m, s), z)| m + s * z)
                    .collect()
            }
        }
    }

    /// `E|x_0|^{order}` when known in closed form (fixed initial value).
    pub fn exact_moment(&self, order: u32) -> Option<f64> {
        match self {
            InitialLaw::Fixed(x) => Some(x.norm().powi(order as i32)),
            InitialLaw::Gaussian { .. } => None,
        }
    }
}

#[derive(Clone, Debug)]
pub struct SdeProblem {
    pub generator: Generator,
    pub coeffs: CoefficientSpec,
    pub noise: QWienerSpec,
    pub initial: InitialLaw,
    pub noise_scale: f64,
    pub grid: TimeGrid,
    pub particles: usize,
}

impl SdeProblem {
    pub fn dim(&self) -> usize {
        self.generator.dim()
    }

    pub fn validate(&self) -> Result<()> {
        let d = self.dim();
        check_dim(d, self.initial.dim())?;
        check_dim(self.noise.dim(), self.coeffs.diffusion.noise_dim())?;
        if let InitialLaw::Gaussian { mean, std } = &self.initial {
            check_dim(mean.len(), std.len())?;
        }
        if self.particles == 0 {
            return Err(Error::DegenerateInput("no particles".into()));
        }
        if self.particles < 2 && self.coeffs.depends_on_law() {
            return Err(Error::DegenerateInput(
                "law-dependent coefficients need at least two particles".into(),
            ));
        }
        if !(self.noise_scale >= 0.0 && self.noise_scale.is_finite()) {
            return Err(Error::DegenerateInput(format!("noise scale {}", self.noise_scale)));
        }
        Ok(())
    }

    pub fn with_generator(&self, generator: Generator) -> Self {
        Self {
            generator,
            ..self.clone()
        }
    }
}

/// Particle trajectories on the recorded part of a uniform grid.
#[derive(Clone, Debug, PartialEq)]
pub struct PathEnsemble {
    pub seed: u64,
    pub times: Vec<f64>,
    /// One empirical measure per recorded time, atoms indexed by particle.
    pub snapshots: Vec<EmpiricalMeasure>,
}

impl PathEnsemble {
    pub fn particles(&self) -> usize {
        self.snapshots[0].len()
    }

    pub fn dim(&self) -> usize {
        self.snapshots[0].dim()
    }

    pub fn state(&self, time_index: usize, particle: usize) -> &[f64] {
        self.snapshots[time_index].atom(particle)
    }

    pub fn laws(&self) -> LawTrajectory {
        LawTrajectory {
            times: self.times.clone(),
            laws: self.snapshots.clone(),
        }
    }
}

/// One step `S(dt)[x + f(x, mu) dt + eps g(x, mu) dW]`.
pub fn step_mild_euler(
    generator: &Generator,
    x: &StateVector,
    mu: &EmpiricalMeasure,
    dt: f64,
    dw: &StateVector,
    coeffs: &CoefficientSpec,
    eps: f64,
) -> Result<StateVector> {
    if !(dt > 0.0) {
        return Err(Error::StepSize(dt));
    }
    let d = generator.dim();
    check_dim(d, x.dim())?;
    check_dim(d, mu.dim())?;
    check_dim(coeffs.diffusion.noise_dim(), dw.dim())?;
    let mut f = vec![0.0; d];
    coeffs.drift.eval(x.coords(), mu, &mut f);
    let mut gdw = vec![0.0; d];
    coeffs.diffusion.apply(x.coords(), mu, dw.coords(), &mut gdw);
    let bracket = StateVector::from_fn(d, |k| x.coords()[k] + f[k] * dt + eps * gdw[k]);
    generator.semigroup_apply(dt, &bracket)
}

enum Propagator {
    Diagonal(Vec<f64>),
    Dense(DMatrix<f64>),
}

impl Propagator {
    fn new(generator: &Generator, dt: f64) -> Result<Self> {
        let p = generator.propagator(dt)?;
        Ok(match p.as_diagonal() {
            Some(d) => Propagator::Diagonal(d),
            None => Propagator::Dense(p.into_matrix()),
        })
    }

    fn apply(&self, y: &[f64], out: &mut [f64]) {
        match self {
            Propagator::Diagonal(d) => {
                for ((o, a), v) in out.iter_mut().zip(d).zip(y) {
                    *o = a * v;
                }
            }
            Propagator::Dense(m) => {
                let r = m * DVector::from_column_slice(y);
                out.copy_from_slice(r.as_slice());
            }
        }
    }
}

/// Where the coefficients read the law from.
enum LawSource<'a> {
    /// Empirical law of the ensemble at the start of each step.
    Live,
    /// Externally given law at each step; the last entry is reused past its end.
    Frozen(&'a [EmpiricalMeasure]),
}

struct Integration {
    recorded: Vec<EmpiricalMeasure>,
    every_step: Option<Vec<EmpiricalMeasure>>,
}

fn initial_ensemble(prob: &SdeProblem, seed: u64) -> Result<Vec<f64>> {
    let d = prob.dim();
    let mut state = vec![0.0; prob.particles * d];
    state
        .par_chunks_mut(d)
        .enumerate()
        .for_each(|(i, x)| x.copy_from_slice(&prob.initial.sample(seed, i as u64)));
    Ok(state)
}

fn integrate(prob: &SdeProblem, seed: u64, source: LawSource<'_>, keep_every_step: bool) -> Result<Integration> {
    prob.validate()?;
    let d = prob.dim();
    let grid = prob.grid;
    let dt = grid.dt();
    let eps = prob.noise_scale;
    let propagator = Propagator::new(&prob.generator, dt)?;
    let coeffs = &prob.coeffs;
    let noise = &prob.noise;
    let m = noise.dim();

    let mut state = initial_ensemble(prob, seed)?;
    let mut recorded = Vec::with_capacity(grid.steps / grid.record_every + 1);
    let mut every = keep_every_step.then(|| Vec::with_capacity(grid.steps + 1));

    for j in 0..grid.steps {
        let snapshot = EmpiricalMeasure::from_flat(d, state.clone())?;
        let law = match &source {
            LawSource::Live => &snapshot,
            LawSource::Frozen(laws) => &laws[j.min(laws.len() - 1)],
        };
        state
            .par_chunks_mut(d)
            .enumerate()
            .try_for_each(|(i, x)| -> Result<()> {
                let mut bracket = vec![0.0; d];
                coeffs.drift.eval(x, law, &mut bracket);
                for (b, xv) in bracket.iter_mut().zip(x.iter()) {
                    *b = xv + *b * dt;
                }
                if eps != 0.0 {
                    let mut stream = NoiseStream::at(seed, i as u64, j as u64);
                    let dw = sample_increment(noise, dt, &mut stream)?;
                    let mut gdw = vec![0.0; d];
                    debug_assert_eq!(dw.dim(), m);
                    coeffs.diffusion.apply(x, law, dw.coords(), &mut gdw);
                    for (b, g) in bracket.iter_mut().zip(&gdw) {
                        *b += eps * g;
                    }
                }
                propagator.apply(&bracket, x);
                if x.iter().all(|v| v.is_finite()) {
                    Ok(())
                } else {
                    Err(Error::NumericalRange(format!(
                        "particle {i} left the finite range at step {}",
                        j + 1
                    )))
                }
            })?;
        if j % grid.record_every == 0 {
            recorded.push(snapshot.clone());
        }
        if let Some(all) = every.as_mut() {
            all.push(snapshot);
        }
    }
    let last = EmpiricalMeasure::from_flat(d, state)?;
    recorded.push(last.clone());
    if let Some(all) = every.as_mut() {
        all.push(last);
    }
    Ok(Integration {
        recorded,
        every_step: every,
    })
}

/// Advances all particles jointly; every particle reads the same
/// start-of-step empirical law.
pub fn simulate_particle_system(prob: &SdeProblem, seed: u64) -> Result<PathEnsemble> {
    let run = integrate(prob, seed, LawSource::Live, false)?;
    Ok(PathEnsemble {
        seed,
        times: prob.grid.recorded_times(),
        snapshots: run.recorded,
    })
}

/// Laws produced by the fixed-point iteration `mu -> law(x_mu)`.
#[derive(Clone, Debug)]
pub struct PicardIteration {
    /// `mu^{(1)}, ..., mu^{(k_max)}` on the recorded grid.
    pub laws: Vec<LawTrajectory>,
    /// `gaps[k-1] = D(mu^{(k+1)}, mu^{(k)})`.
    pub gaps: Vec<f64>,
}

/// Iterates the law map starting from the constant-in-time initial law.
/// Iterate `k + 1` solves the equation with the law frozen to iterate `k`;
/// all iterates share the noise of `seed`.
pub fn picard_law_iteration(prob: &SdeProblem, k_max: usize, seed: u64) -> Result<PicardIteration> {
    if k_max == 0 {
        return Err(Error::DegenerateInput("at least one Picard iterate is required".into()));
    }
    prob.validate()?;
    let guess = vec![EmpiricalMeasure::from_flat(prob.dim(), initial_ensemble(prob, seed)?)?];
    let times = prob.grid.recorded_times();

    let mut laws: Vec<LawTrajectory> = Vec::with_capacity(k_max);
    let mut gaps = Vec::with_capacity(k_max.saturating_sub(1));
    let mut frozen = guess;
    for _ in 0..k_max {
        let run = integrate(prob, seed, LawSource::Frozen(&frozen), true)?;
        let traj = LawTrajectory::new(times.clone(), run.recorded)?;
        if let Some(prev) = laws.last() {
            gaps.push(d_metric(&traj, prev)?.0.value);
        }
        laws.push(traj);
        frozen = run.every_step.expect("kept every step");
    }
    Ok(PicardIteration { laws, gaps })
}

/// Per-time Monte Carlo estimate with standard errors and its supremum.
#[derive(Clone, Debug, PartialEq)]
pub struct TimeSeriesEstimate {
    pub times: Vec<f64>,
    pub values: Vec<f64>,
    pub se: Vec<f64>,
}

impl TimeSeriesEstimate {
    /// Index of the largest value (first one on ties).
    pub fn argsup(&self) -> usize {
        let mut best = 0;
        for (i, v) in self.values.iter().enumerate() {
            if *v > self.values[best] {
                best = i;
            }
        }
        best
    }

    pub fn sup(&self) -> f64 {
        self.values[self.argsup()]
    }

    pub fn sup_se(&self) -> f64 {
        self.se[self.argsup()]
    }
}

/// `(1/M) sum_i |x_i(t)|^{order}` for every recorded time.
pub fn estimate_moment(ens: &PathEnsemble, order: u32) -> Result<TimeSeriesEstimate> {
    if order < 2 || !order.is_multiple_of(2) {
        return Err(Error::DegenerateInput(format!("moment order {order} must be even and >= 2")));
    }
    let half = (order / 2) as i32;
    let (values, se) = ens
        .snapshots
        .iter()
        .map(|mu| {
            let samples: Vec<f64> = mu
                .atoms()
                .map(|a| a.iter().map(|v| v * v).sum::<f64>().powi(half))
                .collect();
            mean_and_se(&samples)
        })
        .unzip();
    Ok(TimeSeriesEstimate {
        times: ens.times.clone(),
        values,
        se,
    })
}

/// `(1/M) sum_i |x_{A,i}(t) - x_{B,i}(t)|^2` for two ensembles driven by the
/// same noise.
pub fn coupled_difference(a: &PathEnsemble, b: &PathEnsemble) -> Result<TimeSeriesEstimate> {
    if a.seed != b.seed {
        return Err(Error::Coupling(format!("seeds {} and {} differ", a.seed, b.seed)));
    }
    if a.times != b.times {
        return Err(Error::Coupling("time grids differ".into()));
    }
    if a.particles() != b.particles() || a.dim() != b.dim() {
        return Err(Error::Coupling(format!(
            "ensemble shapes {}x{} and {}x{} differ",
            a.particles(),
            a.dim(),
            b.particles(),
            b.dim()
        )));
    }
    let (values, se) = a
        .snapshots
        .iter()
        .zip(&b.snapshots)
        .map(|(x, y)| {
            let samples: Vec<f64> = x
                .atoms()
                .zip(y.atoms())
                .map(|(p, q)| p.iter().zip(q).map(|(u, v)| (u - v) * (u - v)).sum())
                .collect();
            mean_and_se(&samples)
        })
        .unzip();
    Ok(TimeSeriesEstimate {
        times: a.times.clone(),
        values,
        se,
    })
}

#[cfg(test)]
mod tests;
