use crate::dynamics::{
    coupled_difference, estimate_moment, picard_law_iteration, simulate_particle_system,
    CoefficientSpec, Drift, PathEnsemble, SdeProblem, StandardDrift, TimeSeriesEstimate,
};
use crate::error::{Error, Result};
use crate::measure::{d_metric, EmpiricalMeasure};
use crate::noise::{Domain, NoiseStream};
use crate::semigroup::{Generator, GeneratorFamily};
use crate::hilbert::StateVector;

use super::config::{EpsGenerator, ExperimentConfig, Family, GeneratorChoice};
use super::report::{fmt_float, ConvergenceReport, ReportRow};
use super::{fit_loglog_slope, replicate_spread};

/// Relative rounding allowance in `rho_upper <= sqrt(coupled error)`.
const COUPLING_RTOL: f64 = 1e-12;
/// Absolute floor below which convergence checks treat errors as zero.
const ABS_FLOOR: f64 = 1e-10;
/// Points used to certify user-supplied `(M, alpha)`.
const CERTIFY_POINTS: usize = 65;

#[derive(Clone, Copy, Debug, Default, PartialEq, Eq)]
pub struct RunOptions {
    /// Size of the worker pool; `None` uses the global pool.
    pub workers: Option<usize>,
}

#[derive(Clone, Copy, Debug, PartialEq, Eq)]
pub enum Study {
    Simulate,
    TrotterKato,
    ZerothOrder,
    Parametric,
    Initial,
    Moments,
    Picard,
}

impl Study {
    pub fn name(self) -> &'static str {
        match self {
            Study::Simulate => "simulate",
            Study::TrotterKato => "trotter-kato",
            Study::ZerothOrder => "zeroth-order",
            Study::Parametric => "parametric",
            Study::Initial => "initial",
            Study::Moments => "moments",
            Study::Picard => "picard",
        }
    }
}

pub fn run_study(study: Study, cfg: &ExperimentConfig, opts: RunOptions) -> Result<ConvergenceReport> {
    match study {
        Study::Simulate => run_simulate(cfg, opts),
        Study::TrotterKato => run_trotter_kato(cfg, opts),
        Study::ZerothOrder => run_zeroth_order(cfg, opts),
        Study::Parametric => run_parametric(cfg, opts),
        Study::Initial => run_initial_dependence(cfg, opts),
        Study::Moments => run_moment_bound(cfg, opts),
        Study::Picard => run_picard(cfg, opts),
    }
}

fn in_pool<T: Send>(opts: RunOptions, f: impl FnOnce() -> Result<T> + Send) -> Result<T> {
    match opts.workers {
        None => f(),
        Some(n) => rayon::ThreadPoolBuilder::new()
            .num_threads(n.max(1))
            .build()
            .map_err(|e| Error::DegenerateInput(format!("thread pool: {e}")))?
            .install(f),
    }
}

fn new_report(study: Study, cfg: &ExperimentConfig) -> ConvergenceReport {
    ConvergenceReport::new(study.name(), cfg.seed(), cfg.echo())
}

fn powers_of_two() -> Vec<f64> {
    vec![2.0, 4.0, 8.0, 16.0, 32.0, 64.0]
}

struct Comparison {
    err: TimeSeriesEstimate,
    rho_sup: f64,
    coupling_ok: bool,
}

/// Coupled second-moment difference, law distance and the per-time check
/// `rho_upper(t) <= sqrt(err(t))`.
fn compare(a: &PathEnsemble, b: &PathEnsemble) -> Result<Comparison> {
    let err = coupled_difference(a, b)?;
    let (sup, per_time) = d_metric(&a.laws(), &b.laws())?;
    let coupling_ok = per_time
        .iter()
        .zip(&err.values)
        .all(|(r, e)| *r <= e.sqrt() * (1.0 + COUPLING_RTOL));
    Ok(Comparison {
        err,
        rho_sup: sup.value,
        coupling_ok,
    })
}

fn fill(row: &mut ReportRow, c: &Comparison) {
    row.sup_coupled_err = c.err.sup();
    row.sup_coupled_err_se = c.err.sup_se();
    row.sup_rho_upper = c.rho_sup;
    row.check("coupling_bound", c.coupling_ok);
}

/// `max(1e-10, 5 x spread)` of the sup error over replicate seeds.
fn convergence_floor(
    cfg: &ExperimentConfig,
    report: &mut ConvergenceReport,
    sup_error_at: impl Fn(u64) -> Result<f64>,
) -> Result<f64> {
    let seed = cfg.seed();
    let reps = cfg.study.replicates;
    let values = if reps >= 2 {
        (1..=reps as u64)
            .map(|r| sup_error_at(seed.wrapping_add(r)))
            .collect::<Result<Vec<_>>>()?
    } else {
        Vec::new()
    };
    let spread = replicate_spread(&values);
    let floor = ABS_FLOOR.max(5.0 * spread);
    report.note("mc_spread", fmt_float(spread));
    report.note("floor", fmt_float(floor));
    Ok(floor)
}

/// Adds the `decrease` and `final_ratio` checks to a convergence table.
fn convergence_checks(rows: &mut [ReportRow], final_ratio: f64, floor: f64) {
    let errs: Vec<f64> = rows.iter().map(|r| r.sup_coupled_err).collect();
    let n = rows.len();
    for i in 1..n {
        rows[i].check("decrease", errs[i] < errs[i - 1] || errs[i - 1] <= floor);
    }
    if n >= 2 {
        let ok = errs[n - 1] < final_ratio * errs[0] || errs[n - 1] <= floor;
        rows[n - 1].check("final_ratio", ok);
    }
}

/// Fits the log-log slope of the sup errors; the target is only asserted
/// when at least two errors exceed `floor`.
fn slope_check(rows: &mut [ReportRow], xs: &[f64], target: Option<f64>, tolerance: f64, floor: f64) {
    let ys: Vec<f64> = rows.iter().map(|r| r.sup_coupled_err).collect();
    let slope = fit_loglog_slope(xs, &ys);
    let resolved = ys.iter().filter(|y| **y > floor).count();
    if let Some(last) = rows.last_mut() {
        last.slope_fit = slope;
        if let (Some(t), true) = (target, resolved >= 2) {
            last.check("slope", (slope - t).abs() <= tolerance);
        }
    }
}

/// Second moment of the ensemble at every recorded time.
pub fn run_simulate(cfg: &ExperimentConfig, opts: RunOptions) -> Result<ConvergenceReport> {
    cfg.validate()?;
    in_pool(opts, || {
        let prob = cfg.build_problem()?;
        let ens = simulate_particle_system(&prob, cfg.seed())?;
        let m2 = estimate_moment(&ens, 2)?;
        let mut report = new_report(Study::Simulate, cfg);
        report.note("trace_q", fmt_float(prob.noise.trace_q()));
        report.note("bound_m", fmt_float(prob.generator.bound_m()));
        report.note("bound_alpha", fmt_float(prob.generator.bound_alpha()));
        for (i, t) in m2.times.iter().enumerate() {
            let mut row = ReportRow::new(*t);
            row.sup_coupled_err = m2.values[i];
            row.sup_coupled_err_se = m2.se[i];
            row.check("second_moment", m2.values[i].is_finite());
            report.rows.push(row);
        }
        Ok(report)
    })
}

/// Coupled errors of the problem under each generator of a family against
/// the problem under the limit generator.
pub fn run_trotter_kato(cfg: &ExperimentConfig, opts: RunOptions) -> Result<ConvergenceReport> {
    cfg.validate()?;
    in_pool(opts, || {
        let prob = cfg.build_problem()?;
        let study = &cfg.study;
        let sweep = if study.sweep.is_empty() { powers_of_two() } else { study.sweep.clone() };
        let members = match study.family.unwrap_or(Family::Yosida) {
            Family::Yosida => sweep
                .iter()
                .map(|&n| Ok((n, prob.generator.yosida(n)?)))
                .collect::<Result<Vec<_>>>()?,
            Family::Coefficient => sweep
                .iter()
                .map(|&n| {
                    if !(n > 0.0) {
                        return Err(Error::config(format!("family index {n} must be positive")));
                    }
                    Ok((n, cfg.generator_with_perturbation(study.perturb_amplitude / n)?))
                })
                .collect::<Result<Vec<_>>>()?,
            other => {
                return Err(Error::config(format!(
                    "trotter-kato needs family = yosida or coefficient, got {other:?}"
                )))
            }
        };
        let family = GeneratorFamily::new(members, prob.generator.clone())?;
        let mut report = new_report(Study::TrotterKato, cfg);
        trotter_kato_table(cfg, &prob, &family, &mut report)?;
        Ok(report)
    })
}

fn trotter_kato_table(
    cfg: &ExperimentConfig,
    prob: &SdeProblem,
    family: &GeneratorFamily,
    report: &mut ConvergenceReport,
) -> Result<()> {
    let seed = cfg.seed();
    let (m, alpha) = family.uniform_bounds();
    report.note("uniform_bound_m", fmt_float(m));
    report.note("uniform_bound_alpha", fmt_float(alpha));
    let probes: Vec<StateVector> = (0..prob.dim()).map(|k| StateVector::unit(prob.dim(), k)).collect();
    for (n, defect) in family.trotter_kato_defect(&prob.grid.recorded_times(), &probes)? {
        report.note(&format!("semigroup_defect[{}]", fmt_float(n)), fmt_float(defect));
    }

    let limit = simulate_particle_system(prob, seed)?;
    let mut rows = Vec::with_capacity(family.members().len());
    for (n, g) in family.members() {
        let ens = simulate_particle_system(&prob.with_generator(g.clone()), seed)?;
        let mut row = ReportRow::new(*n);
        fill(&mut row, &compare(&ens, &limit)?);
        rows.push(row);
    }
    let floor = match family.members().last() {
        Some((_, last)) => {
            let member = prob.with_generator(last.clone());
            convergence_floor(cfg, report, |s| {
                let a = simulate_particle_system(&member, s)?;
                let b = simulate_particle_system(prob, s)?;
                Ok(coupled_difference(&a, &b)?.sup())
            })?
        }
        None => ABS_FLOOR,
    };
    convergence_checks(&mut rows, cfg.study.final_ratio, floor);
    let xs: Vec<f64> = family.members().iter().map(|(n, _)| *n).collect();
    slope_check(
        &mut rows,
        &xs,
        cfg.study.slope_target,
        cfg.study.slope_tolerance.unwrap_or(0.3),
        floor,
    );
    report.rows = rows;
    Ok(())
}

/// `true` when the configured drift vanishes identically.
fn drift_is_zero(cfg: &ExperimentConfig) -> bool {
    let p = &cfg.problem;
    p.drift_scale == 0.0
        || (p.drift_rate == 0.0
            && p.drift_mean_coupling == 0.0
            && p.drift_sine == 0.0
            && p.drift_forcing.iter().all(|c| *c == 0.0))
}

/// `E|x_eps(t) - x'(t)|^2` for a diagonal generator, zero drift and
/// additive noise: `eps^2 sigma^2 sum_k kappa_k (e^{2 a_k t} - 1) / (2 a_k)`.
fn small_noise_oracle(cfg: &ExperimentConfig, prob: &SdeProblem, eps: f64) -> Option<Vec<f64>> {
    if !drift_is_zero(cfg) || cfg.problem.diffusion_gamma != 0.0 {
        return None;
    }
    let diag = match &cfg.problem.generator {
        GeneratorChoice::Scalar(_) | GeneratorChoice::Diagonal(_) | GeneratorChoice::Heat(_) => {
            prob.generator.matrix().as_diagonal()?
        }
        GeneratorChoice::Divergence { .. } => return None,
    };
    let s2 = (eps * cfg.problem.diffusion_sigma).powi(2);
    let kappas = prob.noise.kappas();
    let times = prob.grid.recorded_times();
    Some(
        times
            .iter()
            .map(|&t| {
                diag.iter()
                    .zip(kappas)
                    .map(|(&a, &k)| {
                        let growth = if a == 0.0 { t } else { (2.0 * a * t).exp_m1() / (2.0 * a) };
                        s2 * k * growth
                    })
                    .sum()
            })
            .collect(),
    )
}

/// Coupled errors of the noise-scaled problem against its deterministic
/// (`eps = 0`) counterpart.
pub fn run_zeroth_order(cfg: &ExperimentConfig, opts: RunOptions) -> Result<ConvergenceReport> {
    cfg.validate()?;
    in_pool(opts, || {
        let prob = cfg.build_problem()?;
        let study = &cfg.study;
        let seed = cfg.seed();
        let sweep = if study.sweep.is_empty() { vec![0.2, 0.1, 0.05] } else { study.sweep.clone() };
        if let Some(e) = sweep.iter().find(|e| !(**e >= 0.0)) {
            return Err(Error::config(format!("noise scale {e} must be non-negative")));
        }
        let base_scale = prob.noise_scale;
        let mut deterministic = prob.clone();
        deterministic.noise_scale = 0.0;
        let reference = simulate_particle_system(&deterministic, seed)?;

        let mut report = new_report(Study::ZerothOrder, cfg);
        let fixed = study.eps_generator == EpsGenerator::Fixed;
        let mut rows = Vec::with_capacity(sweep.len());
        for &eps in &sweep {
            let generator = if fixed || eps == 0.0 {
                prob.generator.clone()
            } else {
                prob.generator.yosida(1.0 / eps)?
            };
            let mut p = prob.with_generator(generator);
            p.noise_scale = base_scale * eps;
            let ens = simulate_particle_system(&p, seed)?;
            let cmp = compare(&ens, &reference)?;
            let mut row = ReportRow::new(eps);
            fill(&mut row, &cmp);
            if eps == 0.0 {
                row.check("zero_exact", cmp.err.sup() == 0.0);
            } else if fixed {
                if let Some(oracle) = small_noise_oracle(cfg, &p, base_scale * eps) {
                    let sup = oracle.iter().copied().fold(0.0, f64::max);
                    report.note(&format!("oracle[{}]", fmt_float(eps)), fmt_float(sup));
                    let ok = (cmp.err.sup() - sup).abs() <= study.se_slack * cmp.err.sup_se();
                    row.check("oracle_3se", ok);
                }
            }
            rows.push(row);
        }
        let law_free = !prob.coeffs.depends_on_law();
        let target = study.slope_target.or((fixed && law_free).then_some(2.0));
        slope_check(&mut rows, &sweep, target, study.slope_tolerance.unwrap_or(0.2), ABS_FLOOR);
        if let Some(last) = rows.last() {
            report.note("tau_slope", fmt_float(last.slope_fit));
        }
        report.rows = rows;
        Ok(report)
    })
}

/// `sup |f_a(x, mu) - f_b(x, mu)|` over probe states and a probe law.
fn probe_drift_gap(dim: usize, a: &dyn Drift, b: &dyn Drift, seed: u64) -> Result<f64> {
    const PROBES: usize = 64;
    let law = EmpiricalMeasure::from_flat(
        dim,
        NoiseStream::new(seed, PROBES as u64).normals(Domain::Probe, dim * PROBES),
    )?;
    let mut worst = 0.0_f64;
    let mut fa = vec![0.0; dim];
    let mut fb = vec![0.0; dim];
    for id in 0..PROBES as u64 {
        let x = NoiseStream::new(seed, id).normals(Domain::Probe, dim);
        a.eval(&x, &law, &mut fa);
        b.eval(&x, &law, &mut fb);
        let gap = fa.iter().zip(&fb).map(|(u, v)| (u - v) * (u - v)).sum::<f64>().sqrt();
        worst = worst.max(gap);
    }
    Ok(worst)
}

/// Coupled errors of drift-perturbed problems against the base problem.
pub fn run_parametric(cfg: &ExperimentConfig, opts: RunOptions) -> Result<ConvergenceReport> {
    cfg.validate()?;
    in_pool(opts, || {
        let prob = cfg.build_problem()?;
        let study = &cfg.study;
        let seed = cfg.seed();
        let base = cfg.base_drift()?;
        let diffusion = cfg.base_diffusion()?;
        let family = study.family.unwrap_or(Family::Bump);
        let (sweep, members, limit): (Vec<f64>, Vec<StandardDrift>, StandardDrift) = match family {
            Family::Bump => {
                let sweep = if study.sweep.is_empty() { powers_of_two() } else { study.sweep.clone() };
                if let Some(n) = sweep.iter().find(|n| !(**n > 0.0)) {
                    return Err(Error::config(format!("family index {n} must be positive")));
                }
                let members = sweep
                    .iter()
                    .map(|n| StandardDrift {
                        bump: Some((study.bump_mode, study.bump_amplitude / n)),
                        ..base.clone()
                    })
                    .collect();
                (sweep, members, base.clone())
            }
            Family::Scale => {
                if study.sweep.is_empty() {
                    return Err(Error::config("family = scale needs an explicit sweep"));
                }
                let scaled = |l: f64| StandardDrift {
                    scale: base.scale * l,
                    ..base.clone()
                };
                let members = study.sweep.iter().map(|&l| scaled(l)).collect();
                (study.sweep.clone(), members, scaled(study.lambda_limit))
            }
            other => {
                return Err(Error::config(format!(
                    "parametric needs family = bump or scale, got {other:?}"
                )))
            }
        };

        let mut report = new_report(Study::Parametric, cfg);
        let with_drift = |d: &StandardDrift| SdeProblem {
            coeffs: CoefficientSpec::standard(d.clone(), diffusion.clone()),
            ..prob.clone()
        };
        let limit_prob = with_drift(&limit);
        let limit_ens = simulate_particle_system(&limit_prob, seed)?;

        let mut rows = Vec::with_capacity(members.len());
        let mut gaps = Vec::with_capacity(members.len());
        for (x, drift) in sweep.iter().zip(&members) {
            let p = with_drift(drift);
            let ens = simulate_particle_system(&p, seed)?;
            let mut row = ReportRow::new(*x);
            fill(&mut row, &compare(&ens, &limit_ens)?);
            let gap = probe_drift_gap(prob.dim(), drift, &limit, seed)?;
            report.note(&format!("probe_drift_gap[{}]", fmt_float(*x)), fmt_float(gap));
            gaps.push(gap);
            rows.push(row);
        }

        match family {
            Family::Bump => {
                for i in 1..rows.len() {
                    rows[i].check("a5_premise", gaps[i] < gaps[i - 1] || gaps[i - 1] == 0.0);
                }
                let floor = match members.last() {
                    Some(last) => {
                        let p = with_drift(last);
                        convergence_floor(cfg, &mut report, |s| {
                            let a = simulate_particle_system(&p, s)?;
                            let b = simulate_particle_system(&limit_prob, s)?;
                            Ok(coupled_difference(&a, &b)?.sup())
                        })?
                    }
                    None => ABS_FLOOR,
                };
                convergence_checks(&mut rows, study.final_ratio, floor);
                slope_check(
                    &mut rows,
                    &sweep,
                    Some(study.slope_target.unwrap_or(-2.0)),
                    study.slope_tolerance.unwrap_or(0.3),
                    floor,
                );
            }
            _ => {
                let dist: Vec<f64> = sweep.iter().map(|l| (l - study.lambda_limit).abs()).collect();
                let errs: Vec<f64> = rows.iter().map(|r| r.sup_coupled_err).collect();
                for i in 0..rows.len() {
                    let monotone = (0..rows.len())
                        .filter(|&j| dist[j] < dist[i])
                        .all(|j| errs[j] <= errs[i]);
                    rows[i].check("monotone_distance", monotone);
                    if dist[i] == 0.0 {
                        rows[i].check("zero_at_limit", errs[i] <= ABS_FLOOR);
                    }
                }
                let ys = errs;
                if let Some(last) = rows.last_mut() {
                    last.slope_fit = fit_loglog_slope(&dist, &ys);
                }
            }
        }
        report.rows = rows;
        Ok(report)
    })
}

/// `(M, alpha)` from study overrides (certified against the generator) or
/// from the generator itself.
fn stability_constants(cfg: &ExperimentConfig, prob: &SdeProblem) -> Result<(f64, f64)> {
    let g = &prob.generator;
    match (cfg.study.bound_m, cfg.study.bound_alpha) {
        (None, None) => Ok((g.bound_m(), g.bound_alpha())),
        (m, a) => {
            let m = m.unwrap_or(g.bound_m());
            let a = a.unwrap_or(g.bound_alpha());
            Generator::with_bounds(g.matrix().clone(), m, a, prob.grid.horizon, CERTIFY_POINTS)?;
            Ok((m, a))
        }
    }
}

/// `C = 3 M^2 e^{2 alpha T} exp{12 T M^2 e^{2 alpha T} [T K1^2 + trQ K2^2]}`.
pub fn initial_dependence_constant(m: f64, alpha: f64, t: f64, k1: f64, k2: f64, trace_q: f64) -> f64 {
    let a = m * m * (2.0 * alpha * t).exp();
    3.0 * a * (12.0 * t * a * (t * k1 * k1 + trace_q * k2 * k2)).exp()
}

/// `4 T M^2 e^{2 alpha T} [T K1^2 + trQ K2^2]`; the law map contracts when
/// this is below `1/3`.
pub fn picard_contraction_constant(m: f64, alpha: f64, t: f64, k1: f64, k2: f64, trace_q: f64) -> f64 {
    4.0 * t * m * m * (2.0 * alpha * t).exp() * (t * k1 * k1 + trace_q * k2 * k2)
}

/// Effective `(K1, K2, trQ)`: the noise scale multiplies `g`.
fn lipschitz_data(prob: &SdeProblem) -> (f64, f64, f64) {
    (
        prob.coeffs.k1,
        prob.coeffs.k2 * prob.noise_scale,
        prob.noise.trace_q(),
    )
}

/// Ratio `sup_t E|x(t) - y(t)|^2 / E|x0 - y0|^2` for two coupled initial
/// laws, against the explicit constant `C`.
pub fn run_initial_dependence(cfg: &ExperimentConfig, opts: RunOptions) -> Result<ConvergenceReport> {
    cfg.validate()?;
    in_pool(opts, || {
        let prob = cfg.build_problem()?;
        let study = &cfg.study;
        let p = &cfg.problem;
        let second = cfg.initial_law(
            study.second_initial_mean.as_deref().unwrap_or(&p.initial_mean),
            study.second_initial_std.as_deref().unwrap_or(&p.initial_std),
        )?;
        if second == prob.initial {
            return Err(Error::DegenerateInput("the two initial laws coincide".into()));
        }
        let other = SdeProblem {
            initial: second,
            ..prob.clone()
        };
        let (m, alpha) = stability_constants(cfg, &prob)?;
        let (k1, k2, tq) = lipschitz_data(&prob);
        let horizon = prob.grid.horizon;
        let c = initial_dependence_constant(m, alpha, horizon, k1, k2, tq);

        let mut report = new_report(Study::Initial, cfg);
        for (name, v) in [("bound_m", m), ("bound_alpha", alpha), ("k1", k1), ("k2", k2), ("trace_q", tq), ("constant_c", c)] {
            report.note(name, fmt_float(v));
        }
        for r in 0..study.replicates.max(1) as u64 {
            let seed = cfg.seed().wrapping_add(r);
            let x = simulate_particle_system(&prob, seed)?;
            let y = simulate_particle_system(&other, seed)?;
            let cmp = compare(&x, &y)?;
            let denom = cmp.err.values[0];
            if !(denom > 0.0) {
                return Err(Error::DegenerateInput("E|x0 - y0|^2 vanishes".into()));
            }
            let last = cmp.err.values.len() - 1;
            report.note(
                &format!("terminal_ratio[seed={seed}]"),
                fmt_float(cmp.err.values[last] / denom),
            );
            let mut row = ReportRow::new(seed as f64);
            row.sup_coupled_err = cmp.err.sup() / denom;
            row.sup_coupled_err_se = cmp.err.sup_se() / denom;
            row.sup_rho_upper = cmp.rho_sup;
            row.check("coupling_bound", cmp.coupling_ok);
            row.check(
                "ratio_below_c",
                row.sup_coupled_err - study.se_slack * row.sup_coupled_err_se <= c,
            );
            report.rows.push(row);
        }
        Ok(report)
    })
}

/// Fits `J` in `sup_t E|x(t)|^{2p} <= J (1 + E|x0|^{2p})` on the master
/// seed, freezes it, and checks it on the replicate seeds.
pub fn run_moment_bound(cfg: &ExperimentConfig, opts: RunOptions) -> Result<ConvergenceReport> {
    cfg.validate()?;
    in_pool(opts, || {
        let prob = cfg.build_problem()?;
        let study = &cfg.study;
        if study.x0_grid.is_empty() || study.moment_order.is_empty() {
            return Err(Error::config("moments needs non-empty x0_grid and moment_order"));
        }
        let d = prob.dim();
        let problems: Vec<SdeProblem> = study
            .x0_grid
            .iter()
            .map(|&x0| {
                let mut mean = vec![0.0; d];
                mean[0] = x0;
                Ok(SdeProblem {
                    initial: cfg.initial_law(&mean, &cfg.problem.initial_std)?,
                    ..prob.clone()
                })
            })
            .collect::<Result<_>>()?;
        let moments_at = |seed: u64| -> Result<Vec<Vec<TimeSeriesEstimate>>> {
            problems
                .iter()
                .map(|p| {
                    let ens = simulate_particle_system(p, seed)?;
                    study.moment_order.iter().map(|&o| estimate_moment(&ens, o)).collect()
                })
                .collect()
        };

        let mut report = new_report(Study::Moments, cfg);
        let seed = cfg.seed();
        let calibration = moments_at(seed)?;
        let mut js = Vec::with_capacity(study.moment_order.len());
        for (oi, order) in study.moment_order.iter().enumerate() {
            let j = calibration
                .iter()
                .map(|per_order| {
                    let m = &per_order[oi];
                    m.sup() / (1.0 + m.values[0])
                })
                .fold(0.0, f64::max);
            report.note(&format!("j[2p={order}]"), fmt_float(j));
            js.push(j);
            for (x0, per_order) in study.x0_grid.iter().zip(&calibration) {
                let m = &per_order[oi];
                let mut row = ReportRow::new(*x0);
                row.sup_coupled_err = m.sup();
                row.sup_coupled_err_se = m.sup_se();
                row.slope_fit = j;
                row.check(&format!("calibration[2p={order};seed={seed}]"), true);
                report.rows.push(row);
            }
        }
        for r in 1..=study.replicates as u64 {
            let s = seed.wrapping_add(r);
            let fresh = moments_at(s)?;
            for (oi, order) in study.moment_order.iter().enumerate() {
                for (x0, per_order) in study.x0_grid.iter().zip(&fresh) {
                    let m = &per_order[oi];
                    let bound = js[oi] * (1.0 + m.values[0]);
                    let mut row = ReportRow::new(*x0);
                    row.sup_coupled_err = m.sup();
                    row.sup_coupled_err_se = m.sup_se();
                    row.slope_fit = js[oi];
                    row.check(
                        &format!("moment_bound[2p={order};seed={s}]"),
                        m.sup() - study.se_slack * m.sup_se() <= bound * (1.0 + COUPLING_RTOL),
                    );
                    report.rows.push(row);
                }
            }
        }
        Ok(report)
    })
}

/// Law-map iterates `mu^{(k)}` and their successive distances.
pub fn run_picard(cfg: &ExperimentConfig, opts: RunOptions) -> Result<ConvergenceReport> {
    cfg.validate()?;
    in_pool(opts, || {
        let prob = cfg.build_problem()?;
        let study = &cfg.study;
        let seed = cfg.seed();
        let k_max = study.picard_iterations;
        let (m, alpha) = stability_constants(cfg, &prob)?;
        let (k1, k2, tq) = lipschitz_data(&prob);
        let contraction = picard_contraction_constant(m, alpha, prob.grid.horizon, k1, k2, tq);

        let mut report = new_report(Study::Picard, cfg);
        report.note("contraction_constant", fmt_float(contraction));
        let it = picard_law_iteration(&prob, k_max, seed)?;

        let reps = study.replicates;
        let finals = if reps >= 2 && k_max >= 2 {
            (1..=reps as u64)
                .map(|r| {
                    let run = picard_law_iteration(&prob, k_max, seed.wrapping_add(r))?;
                    Ok(*run.gaps.last().expect("k_max >= 2"))
                })
                .collect::<Result<Vec<_>>>()?
        } else {
            Vec::new()
        };
        let floor = 1e-12 + replicate_spread(&finals);
        report.note("floor", fmt_float(floor));

        let law_free = !prob.coeffs.depends_on_law();
        for (k, gap) in it.gaps.iter().enumerate() {
            let wrap = |i: usize| PathEnsemble {
                seed,
                times: it.laws[i].times.clone(),
                snapshots: it.laws[i].laws.clone(),
            };
            let err = coupled_difference(&wrap(k + 1), &wrap(k))?;
            let mut row = ReportRow::new((k + 1) as f64);
            row.sup_coupled_err = err.sup();
            row.sup_coupled_err_se = err.sup_se();
            row.sup_rho_upper = *gap;
            row.check("coupling_bound", *gap <= err.sup().sqrt() * (1.0 + COUPLING_RTOL));
            if k == 0 {
                row.check("contraction_condition", contraction < 1.0 / 3.0);
                if law_free {
                    row.check("law_free_zero", *gap <= 1e-12);
                }
            } else {
                let prev = it.gaps[k - 1];
                row.check("gap_decrease", *gap < prev || prev <= floor);
            }
            report.rows.push(row);
        }
        Ok(report)
    })
}
