//! Empirical measures standing in for the law of the solution.
//!
//! The measure metric is bounded above by the 1-Wasserstein distance: every
//! test function in its unit ball is 1-Lipschitz. Between two equal-weight
//! measures with the same number of atoms that distance is an optimal
//! assignment, solved exactly here up to [`EXACT_ASSIGNMENT_LIMIT`] atoms.

use std::cmp::Ordering;
use std::fmt;

use rayon::prelude::*;

use crate::error::{Error, Result};
use crate::hilbert::{check_dim, StateVector};

/// Largest atom count for which the assignment problem is solved exactly.
pub const EXACT_ASSIGNMENT_LIMIT: usize = 512;

/// `M` equally weighted atoms in `R^d`, stored row-major.
#[derive(Clone, Debug, PartialEq)]
pub struct EmpiricalMeasure {
    dim: usize,
    data: Vec<f64>,
    mean: Vec<f64>,
}

impl EmpiricalMeasure {
    pub fn from_atoms(atoms: &[StateVector]) -> Result<Self> {
        let dim = atoms
            .first()
            .map(StateVector::dim)
            .ok_or_else(|| Error::DegenerateInput("measure without atoms".into()))?;
        let mut data = Vec::with_capacity(dim * atoms.len());
        for a in atoms {
            check_dim(dim, a.dim())?;
            data.extend_from_slice(a.coords());
        }
        Self::from_flat(dim, data)
    }

    /// Atoms laid out contiguously: atom `i` is `data[i*dim..(i+1)*dim]`.
    pub fn from_flat(dim: usize, data: Vec<f64>) -> Result<Self> {
        if dim == 0 || data.is_empty() || !data.len().is_multiple_of(dim) {
            return Err(Error::DegenerateInput(format!(
                "{} values do not form atoms of dimension {dim}",
                data.len()
            )));
        }
        let n = data.len() / dim;
        let mut mean = vec![0.0; dim];
        for atom in data.chunks_exact(dim) {
            for (m, v) in mean.iter_mut().zip(atom) {
                *m += v;
            }
        }
        for m in &mut mean {
            *m /= n as f64;
        }
        Ok(Self { dim, data, mean })
    }

    pub fn len(&self) -> usize {
        self.data.len() / self.dim
    }

    pub fn is_empty(&self) -> bool {
        self.data.is_empty()
    }

    pub fn dim(&self) -> usize {
        self.dim
    }

    pub fn atom(&self, i: usize) -> &[f64] {
        &self.data[i * self.dim..(i + 1) * self.dim]
    }

    pub fn atoms(&self) -> impl Iterator<Item = &[f64]> {
        self.data.chunks_exact(self.dim)
    }

    pub fn flat(&self) -> &[f64] {
        &self.data
    }

    /// Barycentre `int x mu(dx)`.
    pub fn mean(&self) -> &[f64] {
        &self.mean
    }
}

/// `||mu||_{phi^p} = (1/M) sum_i (1 + |x_i|)^p`.
pub fn phi_norm(mu: &EmpiricalMeasure, p: f64) -> Result<f64> {
    if !(p >= 1.0) {
        return Err(Error::DegenerateInput(format!("phi-norm order {p} < 1")));
    }
    let total: f64 = mu.atoms().map(|a| (1.0 + norm(a)).powf(p)).sum();
    Ok(total / mu.len() as f64)
}

#[derive(Clone, Copy, Debug, PartialEq, Eq)]
pub enum BoundKind {
    /// Optimal assignment (exact 1-Wasserstein distance).
    Assignment,
    /// Identity pairing of atoms; used above the exact-solve limit.
    CouplingBound,
}

impl fmt::Display for BoundKind {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        f.write_str(match self {
            BoundKind::Assignment => "assignment",
            BoundKind::CouplingBound => "coupling bound",
        })
    }
}

#[derive(Clone, Copy, Debug, PartialEq)]
pub struct RhoUpper {
    pub value: f64,
    pub kind: BoundKind,
}

/// Upper bound for the measure metric between two empirical measures with
/// equal atom counts.
pub fn rho_upper(mu: &EmpiricalMeasure, nu: &EmpiricalMeasure) -> Result<RhoUpper> {
    if mu.len() != nu.len() {
        return Err(Error::SupportMismatch(mu.len(), nu.len()));
    }
    check_dim(mu.dim(), nu.dim())?;
    // order the pair so that rho(mu, nu) and rho(nu, mu) run the same computation
    let (a, b) = match cmp_flat(mu.flat(), nu.flat()) {
        Ordering::Greater => (nu, mu),
        _ => (mu, nu),
    };
    let n = a.len();
    let identity: f64 = (0..n).map(|i| dist(a.atom(i), b.atom(i))).sum::<f64>() / n as f64;
    if n > EXACT_ASSIGNMENT_LIMIT {
        return Ok(RhoUpper {
            value: identity,
            kind: BoundKind::CouplingBound,
        });
    }
    let cost: Vec<f64> = (0..n)
        .flat_map(|i| (0..n).map(move |j| (i, j)))
        .map(|(i, j)| dist(a.atom(i), b.atom(j)))
        .collect();
    let perm = min_cost_assignment(n, &cost);
    let optimal: f64 = (0..n).map(|i| cost[i * n + perm[i]]).sum::<f64>() / n as f64;
    Ok(RhoUpper {
        value: optimal.min(identity),
        kind: BoundKind::Assignment,
    })
}

/// `(1/M) sum_i |x_i - y_i|` and `sqrt((1/M) sum_i |x_i - y_i|^2)` for
/// atoms paired by index.
pub fn paired_coupling_bounds(mu: &EmpiricalMeasure, nu: &EmpiricalMeasure) -> Result<(f64, f64)> {
    if mu.len() != nu.len() {
        return Err(Error::SupportMismatch(mu.len(), nu.len()));
    }
    check_dim(mu.dim(), nu.dim())?;
    let n = mu.len() as f64;
    let mut l1 = 0.0;
    let mut l2 = 0.0;
    for (x, y) in mu.atoms().zip(nu.atoms()) {
        let d = dist(x, y);
        l1 += d;
        l2 += d * d;
    }
    Ok((l1 / n, (l2 / n).sqrt()))
}

/// Time-indexed family of empirical measures.
#[derive(Clone, Debug, PartialEq)]
pub struct LawTrajectory {
    pub times: Vec<f64>,
    pub laws: Vec<EmpiricalMeasure>,
}

impl LawTrajectory {
    pub fn new(times: Vec<f64>, laws: Vec<EmpiricalMeasure>) -> Result<Self> {
        if times.len() != laws.len() {
            return Err(Error::Grid(format!(
                "{} times for {} measures",
                times.len(),
                laws.len()
            )));
        }
        Ok(Self { times, laws })
    }
}

/// `sup_t rho_upper(mu(t), nu(t))` over a shared time grid, together with
/// the per-time values.
pub fn d_metric(mus: &LawTrajectory, nus: &LawTrajectory) -> Result<(RhoUpper, Vec<f64>)> {
    if mus.times != nus.times {
        return Err(Error::Grid("law trajectories use different time grids".into()));
    }
    if mus.times.is_empty() {
        return Err(Error::Grid("empty time grid".into()));
    }
    let per_time: Vec<RhoUpper> = mus
        .laws
        .par_iter()
        .zip(nus.laws.par_iter())
        .map(|(a, b)| rho_upper(a, b))
        .collect::<Result<_>>()?;
    let kind = if per_time.iter().all(|r| r.kind == BoundKind::Assignment) {
        BoundKind::Assignment
    } else {
        BoundKind::CouplingBound
    };
    let values: Vec<f64> = per_time.iter().map(|r| r.value).collect();
    let value = values.iter().copied().fold(0.0, f64::max);
    Ok((RhoUpper { value, kind }, values))
}

fn norm(a: &[f64]) -> f64 {
    a.iter().map(|v| v * v).sum::<f64>().sqrt()
}

fn dist(a: &[f64], b: &[f64]) -> f64 {
    a.iter()
        .zip(b)
        .map(|(x, y)| (x - y) * (x - y))
        .sum::<f64>()
        .sqrt()
}

fn cmp_flat(a: &[f64], b: &[f64]) -> Ordering {
    for (x, y) in a.iter().zip(b) {
        match x.total_cmp(y) {
            Ordering::Equal => continue,
            other => return other,
        }
    }
    a.len().cmp(&b.len())
}

/// Shortest-augmenting-path Hungarian method with dual potentials, `O(n^3)`.
/// Returns `perm` with row `i` assigned to column `perm[i]`.
pub fn min_cost_assignment(n: usize, cost: &[f64]) -> Vec<usize> {
    assert_eq!(cost.len(), n * n);
    if n == 0 {
        return Vec::new();
    }
    // 1-based indices, column 0 is the virtual source
    let mut u = vec![0.0; n + 1];
    let mut v = vec![0.0; n + 1];
    let mut row_of_col = vec![0usize; n + 1];
    let mut way = vec![0usize; n + 1];
    let mut minv = vec![0.0; n + 1];
    let mut used = vec![false; n + 1];

    for row in 1..=n {
        row_of_col[0] = row;
        let mut j0 = 0usize;
        minv.iter_mut().for_each(|m| *m = f64::INFINITY);
        used.iter_mut().for_each(|f| *f = false);
        loop {
            used[j0] = true;
            let i0 = row_of_col[j0];
            let mut delta = f64::INFINITY;
            let mut j1 = 0usize;
            for j in 1..=n {
                if used[j] {
                    continue;
                }
                let cur = cost[(i0 - 1) * n + (j - 1)] - u[i0] - v[j];
                if cur < minv[j] {
                    minv[j] = cur;
                    way[j] = j0;
                }
                if minv[j] < delta {
                    delta = minv[j];
                    j1 = j;
                }
            }
            for j in 0..=n {
                if used[j] {
                    u[row_of_col[j]] += delta;
                    v[j] -= delta;
                } else {
                    minv[j] -= delta;
                }
            }
            j0 = j1;
            if row_of_col[j0] == 0 {
                break;
            }
        }
        loop {
            let j1 = way[j0];
            row_of_col[j0] = row_of_col[j1];
            j0 = j1;
            if j0 == 0 {
                break;
            }
        }
    }

    let mut perm = vec![0usize; n];
    for j in 1..=n {
        perm[row_of_col[j] - 1] = j - 1;
    }
    perm
}
