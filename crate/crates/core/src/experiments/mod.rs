//! Reproducible numerical studies built on the particle simulator.
//!
//! Each runner takes an [`ExperimentConfig`], runs coupled simulations
//! (every compared pair shares the master seed, hence the same noise), and
//! returns a [`ConvergenceReport`] whose rows carry pass/fail flags.

mod config;
mod report;
mod runners;

pub use config::{
    Basis, EpsGenerator, ExperimentConfig, Family, GeneratorChoice, InitialKind, NoiseChoice,
    Overrides, ProblemConfig, StudyConfig,
};
pub use report::{emit_report, fmt_float, ConvergenceReport, ReportRow, CSV_COLUMNS};
pub use runners::{
    initial_dependence_constant, picard_contraction_constant, run_initial_dependence,
    run_moment_bound, run_parametric, run_picard, run_simulate, run_study, run_trotter_kato,
    run_zeroth_order, RunOptions, Study,
};

/// Least-squares slope of `ln y` against `ln x` over the pairs with both
/// entries positive; `NaN` with fewer than two such pairs.
pub fn fit_loglog_slope(xs: &[f64], ys: &[f64]) -> f64 {
    let pts: Vec<(f64, f64)> = xs
        .iter()
        .zip(ys)
        .filter(|(x, y)| **x > 0.0 && **y > 0.0)
        .map(|(x, y)| (x.ln(), y.ln()))
        .collect();
    if pts.len() < 2 {
        return f64::NAN;
    }
    let n = pts.len() as f64;
    let mx = pts.iter().map(|p| p.0).sum::<f64>() / n;
    let my = pts.iter().map(|p| p.1).sum::<f64>() / n;
    let sxy: f64 = pts.iter().map(|(x, y)| (x - mx) * (y - my)).sum();
    let sxx: f64 = pts.iter().map(|(x, _)| (x - mx) * (x - mx)).sum();
    if sxx == 0.0 {
        f64::NAN
    } else {
        sxy / sxx
    }
}

/// Sample standard deviation of seed replicates; `0` with fewer than two.
pub fn replicate_spread(values: &[f64]) -> f64 {
    let n = values.len();
    if n < 2 {
        return 0.0;
    }
    let mean = values.iter().sum::<f64>() / n as f64;
    (values.iter().map(|v| (v - mean) * (v - mean)).sum::<f64>() / (n - 1) as f64).sqrt()
}
