//! Line-based `key = value` configuration with `[problem]` and `[study]`
//! sections.
//!
//! Lists are comma- or whitespace-separated. `#` starts a comment. Unknown
//! sections, unknown keys and repeated keys are rejected with the offending
//! line number.

use std::collections::BTreeMap;
use std::f64::consts::PI;
use std::path::Path;
use std::str::FromStr;

use crate::dynamics::{CoefficientSpec, InitialLaw, SdeProblem, StandardDiffusion, StandardDrift, TimeGrid};
use crate::error::{Error, Result};
use crate::hilbert::StateVector;
use crate::noise::QWienerSpec;
use crate::semigroup::{build_divergence_form_generator, sine_basis, CoefficientBounds, Generator};

#[derive(Clone, Copy, Debug, PartialEq, Eq)]
pub enum Basis {
    Sine,
    Nodal,
}

#[derive(Clone, Debug, PartialEq)]
pub enum GeneratorChoice {
    Scalar(f64),
    Diagonal(Vec<f64>),
    /// `diag(-k^2 pi^2)`, `k = 1..=modes`.
    Heat(usize),
    /// `(q x')' + r x'` with `q = q_const + q_sine sin(2 pi z)` and
    /// `r = r_const + r_sine sin(2 pi z)` on `dim` interior nodes.
    Divergence {
        dim: usize,
        q_const: f64,
        q_sine: f64,
        r_const: f64,
        r_sine: f64,
        ellipticity: f64,
        coefficient_bound: f64,
        basis: Basis,
    },
}

#[derive(Clone, Debug, PartialEq)]
pub enum NoiseChoice {
    Kappas(Vec<f64>),
    /// `kappa_k = k^{-decay}`; `dim = None` means the state dimension.
    PowerLaw { dim: Option<usize>, decay: f64 },
}

#[derive(Clone, Copy, Debug, PartialEq, Eq)]
pub enum InitialKind {
    Fixed,
    Gaussian,
}

#[derive(Clone, Debug, PartialEq)]
pub struct ProblemConfig {
    pub generator: GeneratorChoice,
    pub noise: NoiseChoice,
    pub drift_scale: f64,
    pub drift_rate: f64,
    pub drift_mean_coupling: f64,
    pub drift_sine: f64,
    pub drift_forcing: Vec<f64>,
    pub diffusion_sigma: f64,
    pub diffusion_gamma: f64,
    pub noise_scale: f64,
    pub initial: InitialKind,
    pub initial_mean: Vec<f64>,
    pub initial_std: Vec<f64>,
    pub horizon: f64,
    pub steps: usize,
    pub record_points: usize,
    pub particles: usize,
    pub seed: u64,
}

#[derive(Clone, Copy, Debug, PartialEq, Eq)]
pub enum Family {
    /// Yosida approximations `A_n` of the generator.
    Yosida,
    /// Divergence-form generators with `q_n = q + perturb_amplitude sin(2 pi z) / n`.
    Coefficient,
    /// Drifts `f_n = f + (bump_amplitude / n) e_{bump_mode}`.
    Bump,
    /// Drifts `f_lambda = lambda f`.
    Scale,
}

#[derive(Clone, Copy, Debug, PartialEq, Eq)]
pub enum EpsGenerator {
    /// `A_eps = A`.
    Fixed,
    /// `A_eps` is the Yosida approximation with index `1 / eps`.
    Yosida,
}

#[derive(Clone, Debug, PartialEq)]
pub struct StudyConfig {
    pub family: Option<Family>,
    pub sweep: Vec<f64>,
    pub final_ratio: f64,
    pub slope_target: Option<f64>,
    pub slope_tolerance: Option<f64>,
    pub bump_mode: usize,
    pub bump_amplitude: f64,
    pub lambda_limit: f64,
    pub eps_generator: EpsGenerator,
    pub second_initial_mean: Option<Vec<f64>>,
    pub second_initial_std: Option<Vec<f64>>,
    pub bound_m: Option<f64>,
    pub bound_alpha: Option<f64>,
    pub moment_order: Vec<u32>,
    pub x0_grid: Vec<f64>,
    pub replicates: usize,
    pub perturb_amplitude: f64,
    pub picard_iterations: usize,
    pub se_slack: f64,
}

/// Command-line overrides applied on top of a parsed file.
#[derive(Clone, Copy, Debug, Default, PartialEq, Eq)]
pub struct Overrides {
    pub seed: Option<u64>,
    pub particles: Option<usize>,
    pub steps: Option<usize>,
}

#[derive(Clone, Debug, PartialEq)]
pub struct ExperimentConfig {
    pub problem: ProblemConfig,
    pub study: StudyConfig,
    source: Vec<String>,
    overrides: Vec<String>,
}

struct RawEntry {
    line: usize,
    value: String,
}

#[derive(Default)]
struct RawSection {
    entries: BTreeMap<String, RawEntry>,
}

impl RawSection {
    fn take(&mut self, key: &str) -> Option<RawEntry> {
        self.entries.remove(key)
    }

    fn parse<T: FromStr>(&mut self, key: &str) -> Result<Option<T>> {
        match self.take(key) {
            None => Ok(None),
            Some(e) => e.value.parse::<T>().map(Some).map_err(|_| Error::Config {
                line: e.line,
                msg: format!("cannot parse {key} = {:?}", e.value),
            }),
        }
    }

    fn list<T: FromStr>(&mut self, key: &str) -> Result<Option<Vec<T>>> {
        match self.take(key) {
            None => Ok(None),
            Some(e) => e
                .value
                .split(|c: char| c == ',' || c.is_whitespace())
                .filter(|s| !s.is_empty())
                .map(|s| {
                    s.parse::<T>().map_err(|_| Error::Config {
                        line: e.line,
                        msg: format!("cannot parse list entry {s:?} of {key}"),
                    })
                })
                .collect::<Result<Vec<_>>>()
                .map(Some),
        }
    }

    fn choice<T>(&mut self, key: &str, options: &[(&str, T)]) -> Result<Option<T>>
    where
        T: Copy,
    {
        match self.take(key) {
            None => Ok(None),
            Some(e) => options
                .iter()
                .find(|(name, _)| *name == e.value)
                .map(|(_, v)| Some(*v))
                .ok_or_else(|| Error::Config {
                    line: e.line,
                    msg: format!(
                        "{key} must be one of {}, got {:?}",
                        options.iter().map(|(n, _)| *n).collect::<Vec<_>>().join("|"),
                        e.value
                    ),
                }),
        }
    }

    fn finish(self, section: &str) -> Result<()> {
        match self.entries.into_iter().min_by_key(|(_, e)| e.line) {
            None => Ok(()),
            Some((key, e)) => Err(Error::Config {
                line: e.line,
                msg: format!("unknown key {key:?} in [{section}]"),
            }),
        }
    }
}

#[derive(Clone, Copy)]
enum GeneratorKind {
    Scalar,
    Diagonal,
    Heat,
    Divergence,
}

impl ExperimentConfig {
    pub fn from_path(path: &Path) -> Result<Self> {
        let text = std::fs::read_to_string(path).map_err(|source| Error::Io {
            path: path.to_path_buf(),
            source,
        })?;
        Self::parse(&text)
    }

    pub fn parse(text: &str) -> Result<Self> {
        let mut problem = RawSection::default();
        let mut study = RawSection::default();
        let mut current: Option<&str> = None;

        for (idx, raw) in text.lines().enumerate() {
            let line = idx + 1;
            let content = raw.split('#').next().unwrap_or("").trim();
            if content.is_empty() {
                continue;
            }
            if let Some(name) = content.strip_prefix('[').and_then(|s| s.strip_suffix(']')) {
                current = match name.trim() {
                    "problem" => Some("problem"),
                    "study" => Some("study"),
                    other => {
                        return Err(Error::Config {
                            line,
                            msg: format!("unknown section [{other}]"),
                        })
                    }
                };
                continue;
            }
            let (key, value) = content.split_once('=').ok_or_else(|| Error::Config {
                line,
                msg: format!("expected `key = value`, got {content:?}"),
            })?;
            let section = match current {
                Some("problem") => &mut problem,
                Some(_) => &mut study,
                None => {
                    return Err(Error::Config {
                        line,
                        msg: "key outside of a section".into(),
                    })
                }
            };
            let key = key.trim().to_string();
            if key.is_empty() {
                return Err(Error::Config {
                    line,
                    msg: "empty key".into(),
                });
            }
            if let Some(prev) = section.entries.get(&key) {
                return Err(Error::Config {
                    line,
                    msg: format!("duplicate key {key:?} (first set on line {})", prev.line),
                });
            }
            section.entries.insert(
                key,
                RawEntry {
                    line,
                    value: value.trim().to_string(),
                },
            );
        }

        let problem_cfg = parse_problem(&mut problem)?;
        problem.finish("problem")?;
        let study_cfg = parse_study(&mut study)?;
        study.finish("study")?;

        Ok(Self {
            problem: problem_cfg,
            study: study_cfg,
            source: text.lines().map(str::to_string).collect(),
            overrides: Vec::new(),
        })
    }

    pub fn apply_overrides(&mut self, o: Overrides) {
        if let Some(seed) = o.seed {
            self.problem.seed = seed;
            self.overrides.push(format!("seed = {seed}"));
        }
        if let Some(m) = o.particles {
            self.problem.particles = m;
            self.overrides.push(format!("particles = {m}"));
        }
        if let Some(s) = o.steps {
            self.problem.steps = s;
            self.overrides.push(format!("steps = {s}"));
        }
    }

    /// Original file lines followed by any applied overrides.
    pub fn echo(&self) -> Vec<String> {
        self.source
            .iter()
            .cloned()
            .chain(self.overrides.iter().map(|o| format!("override {o}")))
            .collect()
    }

    pub fn seed(&self) -> u64 {
        self.problem.seed
    }

    /// Checks everything that can be checked without running a simulation.
    pub fn validate(&self) -> Result<()> {
        let p = self.build_problem()?;
        p.validate()?;
        let s = &self.study;
        if s.sweep.iter().any(|v| !v.is_finite()) {
            return Err(Error::config("sweep values must be finite"));
        }
        if s.moment_order.iter().any(|&o| o != 2 && o != 4) {
            return Err(Error::config("moment_order entries must be 2 or 4"));
        }
        if !(s.final_ratio > 0.0) || !(s.se_slack >= 0.0) {
            return Err(Error::config("final_ratio must be positive and se_slack non-negative"));
        }
        if s.picard_iterations == 0 {
            return Err(Error::config("picard_iterations must be positive"));
        }
        if s.bump_mode >= p.dim() {
            return Err(Error::config(format!(
                "bump_mode {} outside a {}-dimensional state",
                s.bump_mode,
                p.dim()
            )));
        }
        Ok(())
    }

    pub fn state_dim(&self) -> Result<usize> {
        Ok(match &self.problem.generator {
            GeneratorChoice::Scalar(_) => 1,
            GeneratorChoice::Diagonal(d) => d.len(),
            GeneratorChoice::Heat(m) => *m,
            GeneratorChoice::Divergence { dim, .. } => *dim,
        })
    }

    pub fn build_generator(&self) -> Result<Generator> {
        self.generator_with_perturbation(0.0)
    }

    /// Generator with the divergence-form coefficient `q` replaced by
    /// `q + amplitude sin(2 pi z)`.
    pub fn generator_with_perturbation(&self, amplitude: f64) -> Result<Generator> {
        match &self.problem.generator {
            GeneratorChoice::Scalar(a) if amplitude == 0.0 => Generator::scalar(*a),
            GeneratorChoice::Diagonal(d) if amplitude == 0.0 => Generator::diagonal(d),
            GeneratorChoice::Heat(m) if amplitude == 0.0 => Generator::heat_modes(*m),
            GeneratorChoice::Divergence {
                dim,
                q_const,
                q_sine,
                r_const,
                r_sine,
                ellipticity,
                coefficient_bound,
                basis,
            } => {
                let wave = |z: f64| (2.0 * PI * z).sin();
                let g = build_divergence_form_generator(
                    |z| q_const + (q_sine + amplitude) * wave(z),
                    |z| r_const + r_sine * wave(z),
                    *dim,
                    CoefficientBounds {
                        sigma: *ellipticity,
                        bound: *coefficient_bound,
                    },
                )?;
                match basis {
                    Basis::Sine => g.change_basis(&sine_basis(*dim)),
                    Basis::Nodal => Ok(g),
                }
            }
            _ => Err(Error::config(
                "coefficient perturbations need generator = divergence",
            )),
        }
    }

    pub fn build_noise(&self) -> Result<QWienerSpec> {
        match &self.problem.noise {
            NoiseChoice::Kappas(k) => QWienerSpec::new(k.clone()),
            NoiseChoice::PowerLaw { dim, decay } => {
                QWienerSpec::power_law(dim.unwrap_or(self.state_dim()?), *decay)
            }
        }
    }

    pub fn base_drift(&self) -> Result<StandardDrift> {
        let p = &self.problem;
        Ok(StandardDrift {
            scale: p.drift_scale,
            rate: p.drift_rate,
            mean_coupling: p.drift_mean_coupling,
            sine: p.drift_sine,
            forcing: broadcast(&p.drift_forcing, self.state_dim()?, "drift_forcing", 0.0)?,
            bump: None,
        })
    }

    pub fn base_diffusion(&self) -> Result<StandardDiffusion> {
        Ok(StandardDiffusion {
            state_dim: self.state_dim()?,
            noise_dim: self.build_noise()?.dim(),
            sigma: self.problem.diffusion_sigma,
            gamma: self.problem.diffusion_gamma,
        })
    }

    /// Initial law with the given mean and standard deviations (broadcast).
    pub fn initial_law(&self, mean: &[f64], std: &[f64]) -> Result<InitialLaw> {
        let d = self.state_dim()?;
        let mean = broadcast(mean, d, "initial_mean", 0.0)?;
        Ok(match self.problem.initial {
            InitialKind::Fixed => InitialLaw::Fixed(StateVector::new(mean)?),
            InitialKind::Gaussian => InitialLaw::Gaussian {
                mean,
                std: broadcast(std, d, "initial_std", 0.0)?,
            },
        })
    }

    pub fn time_grid(&self) -> Result<TimeGrid> {
        let p = &self.problem;
        if p.steps == 0 {
            return Err(Error::config("steps must be positive"));
        }
        let points = gcd(p.steps, p.record_points.max(1));
        TimeGrid::new(p.horizon, p.steps, p.steps / points)
    }

    pub fn build_problem(&self) -> Result<SdeProblem> {
        let p = &self.problem;
        let generator = self.build_generator()?;
        let coeffs = CoefficientSpec::standard(self.base_drift()?, self.base_diffusion()?);
        let prob = SdeProblem {
            generator,
            coeffs,
            noise: self.build_noise()?,
            initial: self.initial_law(&p.initial_mean, &p.initial_std)?,
            noise_scale: p.noise_scale,
            grid: self.time_grid()?,
            particles: p.particles,
        };
        prob.validate()?;
        Ok(prob)
    }
}

fn parse_problem(s: &mut RawSection) -> Result<ProblemConfig> {
    let kind = s
        .choice(
            "generator",
            &[
                ("scalar", GeneratorKind::Scalar),
                ("diagonal", GeneratorKind::Diagonal),
                ("heat", GeneratorKind::Heat),
                ("divergence", GeneratorKind::Divergence),
            ],
        )?
        .unwrap_or(GeneratorKind::Scalar);
    let value: Option<f64> = s.parse("generator_value")?;
    let diag: Option<Vec<f64>> = s.list("generator_diag")?;
    let dim: Option<usize> = s.parse("dim")?;
    let q_const: Option<f64> = s.parse("q_const")?;
    let q_sine: Option<f64> = s.parse("q_sine")?;
    let r_const: Option<f64> = s.parse("r_const")?;
    let r_sine: Option<f64> = s.parse("r_sine")?;
    let ellipticity: Option<f64> = s.parse("ellipticity")?;
    let coefficient_bound: Option<f64> = s.parse("coefficient_bound")?;
    let basis = s.choice("basis", &[("sine", Basis::Sine), ("nodal", Basis::Nodal)])?;

    let generator = match kind {
        GeneratorKind::Scalar => GeneratorChoice::Scalar(value.unwrap_or(-1.0)),
        GeneratorKind::Diagonal => GeneratorChoice::Diagonal(
            diag.ok_or_else(|| Error::config("generator = diagonal needs generator_diag"))?,
        ),
        GeneratorKind::Heat => GeneratorChoice::Heat(dim.unwrap_or(16)),
        GeneratorKind::Divergence => GeneratorChoice::Divergence {
            dim: dim.unwrap_or(32),
            q_const: q_const.unwrap_or(1.0),
            q_sine: q_sine.unwrap_or(0.0),
            r_const: r_const.unwrap_or(0.0),
            r_sine: r_sine.unwrap_or(0.0),
            ellipticity: ellipticity.unwrap_or(0.1),
            coefficient_bound: coefficient_bound.unwrap_or(10.0),
            basis: basis.unwrap_or(Basis::Sine),
        },
    };

    let kappas: Option<Vec<f64>> = s.list("noise_kappas")?;
    let noise_dim: Option<usize> = s.parse("noise_dim")?;
    let noise_decay: Option<f64> = s.parse("noise_decay")?;
    let noise = match kappas {
        Some(k) => {
            if noise_dim.is_some() || noise_decay.is_some() {
                return Err(Error::config(
                    "noise_kappas cannot be combined with noise_dim or noise_decay",
                ));
            }
            NoiseChoice::Kappas(k)
        }
        None => NoiseChoice::PowerLaw {
            dim: noise_dim,
            decay: noise_decay.unwrap_or(0.0),
        },
    };

    let initial = s
        .choice(
            "initial",
            &[("fixed", InitialKind::Fixed), ("gaussian", InitialKind::Gaussian)],
        )?
        .unwrap_or(InitialKind::Fixed);

    Ok(ProblemConfig {
        generator,
        noise,
        drift_scale: s.parse("drift_scale")?.unwrap_or(1.0),
        drift_rate: s.parse("drift_rate")?.unwrap_or(0.0),
        drift_mean_coupling: s.parse("drift_mean_coupling")?.unwrap_or(0.0),
        drift_sine: s.parse("drift_sine")?.unwrap_or(0.0),
        drift_forcing: s.list("drift_forcing")?.unwrap_or_default(),
        diffusion_sigma: s.parse("diffusion_sigma")?.unwrap_or(1.0),
        diffusion_gamma: s.parse("diffusion_gamma")?.unwrap_or(0.0),
        noise_scale: s.parse("noise_scale")?.unwrap_or(1.0),
        initial,
        initial_mean: s.list("initial_mean")?.unwrap_or_else(|| vec![0.0]),
        initial_std: s.list("initial_std")?.unwrap_or_else(|| vec![0.0]),
        horizon: s.parse("horizon")?.unwrap_or(1.0),
        steps: s.parse("steps")?.unwrap_or(1024),
        record_points: s.parse("record_points")?.unwrap_or(32),
        particles: s.parse("particles")?.unwrap_or(1000),
        seed: s.parse("seed")?.unwrap_or(0),
    })
}

fn parse_study(s: &mut RawSection) -> Result<StudyConfig> {
    Ok(StudyConfig {
        family: s.choice(
            "family",
            &[
                ("yosida", Family::Yosida),
                ("coefficient", Family::Coefficient),
                ("bump", Family::Bump),
                ("scale", Family::Scale),
            ],
        )?,
        sweep: s.list("sweep")?.unwrap_or_default(),
        final_ratio: s.parse("final_ratio")?.unwrap_or(0.1),
        slope_target: s.parse("slope_target")?,
        slope_tolerance: s.parse("slope_tolerance")?,
        bump_mode: s.parse("bump_mode")?.unwrap_or(0),
        bump_amplitude: s.parse("bump_amplitude")?.unwrap_or(1.0),
        lambda_limit: s.parse("lambda_limit")?.unwrap_or(1.0),
        eps_generator: s
            .choice(
                "eps_generator",
                &[("fixed", EpsGenerator::Fixed), ("yosida", EpsGenerator::Yosida)],
            )?
            .unwrap_or(EpsGenerator::Fixed),
        second_initial_mean: s.list("second_initial_mean")?,
        second_initial_std: s.list("second_initial_std")?,
        bound_m: s.parse("bound_m")?,
        bound_alpha: s.parse("bound_alpha")?,
        moment_order: s.list("moment_order")?.unwrap_or_else(|| vec![2, 4]),
        x0_grid: s.list("x0_grid")?.unwrap_or_else(|| vec![0.0, 1.0, 4.0]),
        replicates: s.parse("replicates")?.unwrap_or(3),
        perturb_amplitude: s.parse("perturb_amplitude")?.unwrap_or(1.0),
        picard_iterations: s.parse("picard_iterations")?.unwrap_or(6),
        se_slack: s.parse("se_slack")?.unwrap_or(3.0),
    })
}

/// Expands a one-element list to `dim` copies; an empty list gives `fill`.
fn broadcast(values: &[f64], dim: usize, name: &str, fill: f64) -> Result<Vec<f64>> {
    match values.len() {
        0 => Ok(vec![fill; dim]),
        1 => Ok(vec![values[0]; dim]),
        n if n == dim => Ok(values.to_vec()),
        n => Err(Error::config(format!("{name} has {n} entries for a {dim}-dimensional state"))),
    }
}

fn gcd(a: usize, b: usize) -> usize {
    if b == 0 {
        a
    } else {
        gcd(b, a % b)
    }
}
