use super::*;
use crate::hilbert::DenseOperator;
use crate::measure::{paired_coupling_bounds, rho_upper};

fn drift(rate: f64, mean_coupling: f64) -> StandardDrift {
    StandardDrift {
        rate,
        mean_coupling,
        ..StandardDrift::zero()
    }
}

fn additive(d: usize, m: usize, sigma: f64) -> StandardDiffusion {
    StandardDiffusion {
        state_dim: d,
        noise_dim: m,
        sigma,
        gamma: 0.0,
    }
}

fn scalar_problem(a: f64, f: StandardDrift, sigma: f64, initial: InitialLaw, horizon: f64, steps: usize, particles: usize) -> SdeProblem {
    SdeProblem {
        generator: Generator::scalar(a).unwrap(),
        coeffs: CoefficientSpec::standard(f, additive(1, 1, sigma)),
        noise: QWienerSpec::new(vec![1.0]).unwrap(),
        initial,
        noise_scale: 1.0,
        grid: TimeGrid::new(horizon, steps, 1).unwrap(),
        particles,
    }
}

fn fixed(v: &[f64]) -> InitialLaw {
    InitialLaw::Fixed(StateVector::new(v.to_vec()).unwrap())
}

fn one_atom(v: &[f64]) -> EmpiricalMeasure {
    EmpiricalMeasure::from_flat(v.len(), v.to_vec()).unwrap()
}

#[test]
fn time_grid_validation() {
    let g = TimeGrid::new(1.0, 8, 4).unwrap();
    assert_eq!(g.recorded_times(), vec![0.0, 0.5, 1.0]);
    assert_eq!(g.dt(), 0.125);
    assert!(TimeGrid::new(1.0, 8, 3).is_err());
    assert!(TimeGrid::new(0.0, 8, 1).is_err());
    assert!(TimeGrid::new(1.0, 0, 1).is_err());
}

#[test]
fn step_examples() {
    let x = StateVector::new(vec![0.5, -1.0]).unwrap();
    let mu = one_atom(&[0.5, -1.0]);
    let dw = StateVector::new(vec![0.1, 0.2]).unwrap();
    let heat = Generator::diagonal(&[-1.0, -2.0]).unwrap();
    let zero = Generator::new(DenseOperator::zeros(2, 2)).unwrap();

    // f = g = 0: pure semigroup
    let none = CoefficientSpec::standard(StandardDrift::zero(), additive(2, 2, 0.0));
    let y = step_mild_euler(&heat, &x, &mu, 0.1, &dw, &none, 1.0).unwrap();
    assert_eq!(y, heat.semigroup_apply(0.1, &x).unwrap());

    // A = 0, f = c
    let c = StandardDrift {
        forcing: vec![2.0, -3.0],
        ..StandardDrift::zero()
    };
    let spec = CoefficientSpec::standard(c, additive(2, 2, 0.0));
    let y = step_mild_euler(&zero, &x, &mu, 0.1, &dw, &spec, 1.0).unwrap();
    assert!((y.coords()[0] - 0.7).abs() < 1e-15 && (y.coords()[1] + 1.3).abs() < 1e-15);

    // A = 0, g = I
    let spec = CoefficientSpec::standard(StandardDrift::zero(), additive(2, 2, 1.0));
    let y = step_mild_euler(&zero, &x, &mu, 0.1, &dw, &spec, 1.0).unwrap();
    assert_eq!(y, &x + &dw);

    assert!(matches!(
        step_mild_euler(&zero, &x, &mu, 0.0, &dw, &spec, 1.0),
        Err(Error::StepSize(_))
    ));
    let short = StateVector::zeros(1);
    assert!(matches!(
        step_mild_euler(&zero, &short, &mu, 0.1, &dw, &spec, 1.0),
        Err(Error::Dimension { .. })
    ));
}

#[test]
fn integrator_matches_single_step_function() {
    let prob = SdeProblem {
        grid: TimeGrid::new(0.5, 1, 1).unwrap(),
        ..scalar_problem(-0.7, drift(0.3, 0.8), 0.9, InitialLaw::Gaussian { mean: vec![1.0], std: vec![0.5] }, 0.5, 1, 5)
    };
    let ens = simulate_particle_system(&prob, 17).unwrap();
    let mu0 = &ens.snapshots[0];
    for i in 0..5 {
        let x = StateVector::new(mu0.atom(i).to_vec()).unwrap();
        let mut s = NoiseStream::at(17, i as u64, 0);
        let dw = sample_increment(&prob.noise, 0.5, &mut s).unwrap();
        let y = step_mild_euler(&prob.generator, &x, mu0, 0.5, &dw, &prob.coeffs, 1.0).unwrap();
        assert_eq!(y.coords(), ens.state(1, i));
    }
}

#[test]
fn ou_variance() {
    let prob = scalar_problem(-1.0, StandardDrift::zero(), 1.0, fixed(&[0.0]), 1.0, 256, 2000);
    let ens = simulate_particle_system(&prob, 1).unwrap();
    let m2 = estimate_moment(&ens, 2).unwrap();
    let last = m2.values.len() - 1;
    let want = (1.0 - (-2.0f64).exp()) / 2.0;
    assert!((m2.values[last] - want).abs() < 3.0 * m2.se[last], "{} vs {want} (se {})", m2.values[last], m2.se[last]);
}

#[test]
fn noiseless_linear_decay() {
    let mut prob = scalar_problem(0.0, drift(-1.0, 0.0), 1.0, fixed(&[1.0]), 1.0, 1024, 4);
    prob.noise_scale = 0.0;
    let ens = simulate_particle_system(&prob, 0).unwrap();
    for (j, t) in ens.times.iter().enumerate() {
        for i in 0..4 {
            assert!((ens.state(j, i)[0] - (-t).exp()).abs() < 5e-3);
        }
    }
}

#[test]
fn mean_field_mean_follows_linear_ode() {
    let a = -0.5;
    let mut prob = scalar_problem(
        a,
        drift(0.0, 2.0),
        1.0,
        InitialLaw::Gaussian { mean: vec![2.0], std: vec![0.3] },
        1.0,
        256,
        1000,
    );
    prob.grid = TimeGrid::new(1.0, 256, 32).unwrap();
    let ens = simulate_particle_system(&prob, 5).unwrap();
    for (j, t) in ens.times.iter().enumerate() {
        let xs: Vec<f64> = ens.snapshots[j].atoms().map(|x| x[0]).collect();
        let (mean, se) = mean_and_se(&xs);
        let want = 2.0 * (a * t).exp();
        assert!((mean - want).abs() < 3.0 * se.max(1e-3), "t={t}: {mean} vs {want} se {se}");
    }
}

#[test]
fn moment_examples() {
    let mut prob = scalar_problem(-1.0, StandardDrift::zero(), 1.0, fixed(&[2.0]), 1.0, 16, 3);
    prob.noise_scale = 0.0;
    let ens = simulate_particle_system(&prob, 0).unwrap();
    let m4 = estimate_moment(&ens, 4).unwrap();
    for (j, v) in m4.values.iter().enumerate() {
        let x = ens.state(j, 0)[0];
        assert_eq!(*v, x.powi(4));
        assert_eq!(m4.se[j], 0.0);
    }
    assert_eq!(m4.sup(), 16.0);

    let zero = scalar_problem(-1.0, StandardDrift::zero(), 0.0, fixed(&[0.0]), 1.0, 8, 10);
    let ens = simulate_particle_system(&zero, 0).unwrap();
    assert!(estimate_moment(&ens, 2).unwrap().values.iter().all(|v| *v == 0.0));
    assert!(estimate_moment(&ens, 3).is_err());
}

#[test]
fn coupled_difference_examples() {
    let prob = scalar_problem(-1.0, drift(0.0, 1.0), 1.0, fixed(&[1.0]), 1.0, 16, 10);
    let a = simulate_particle_system(&prob, 3).unwrap();
    let d = coupled_difference(&a, &a).unwrap();
    assert!(d.values.iter().all(|v| *v == 0.0));

    // single particle, hand-built trajectories
    let e1 = PathEnsemble {
        seed: 0,
        times: vec![0.0, 1.0],
        snapshots: vec![one_atom(&[1.0, 0.0]), one_atom(&[0.0, 2.0])],
    };
    let e2 = PathEnsemble {
        snapshots: vec![one_atom(&[1.0, 1.0]), one_atom(&[3.0, -2.0])],
        ..e1.clone()
    };
    let d = coupled_difference(&e1, &e2).unwrap();
    assert_eq!(d.values, vec![1.0, 25.0]);
    assert_eq!(d.sup(), 25.0);

    let other_seed = PathEnsemble { seed: 1, ..e2.clone() };
    assert!(matches!(coupled_difference(&e1, &other_seed), Err(Error::Coupling(_))));
    let other_grid = PathEnsemble {
        times: vec![0.0, 0.5],
        ..e2
    };
    assert!(matches!(coupled_difference(&e1, &other_grid), Err(Error::Coupling(_))));
}

/// Covariance ODE for the coupled pair `dx = a x dt + dW`, `dy = b y dt + dW`,
/// integrated with classical RK4 (test oracle).
fn coupled_ou_second_moment(a: f64, b: f64, x0: f64, times: &[f64]) -> Vec<f64> {
    // state: (E x, E y, Var x, Var y, Cov xy)
    let rhs = |s: [f64; 5]| -> [f64; 5] {
        [a * s[0], b * s[1], 2.0 * a * s[2] + 1.0, 2.0 * b * s[3] + 1.0, (a + b) * s[4] + 1.0]
    };
    let mut s = [x0, x0, 0.0, 0.0, 0.0];
    let mut t = 0.0;
    let h: f64 = 1e-4;
    let mut out = Vec::new();
    for &target in times {
        while t < target - 1e-12 {
            let step = h.min(target - t);
            let k1 = rhs(s);
            let k2 = rhs(std::array::from_fn(|i| s[i] + 0.5 * step * k1[i]));
            let k3 = rhs(std::array::from_fn(|i| s[i] + 0.5 * step * k2[i]));
            let k4 = rhs(std::array::from_fn(|i| s[i] + step * k3[i]));
            for i in 0..5 {
                s[i] += step / 6.0 * (k1[i] + 2.0 * k2[i] + 2.0 * k3[i] + k4[i]);
            }
            t += step;
        }
        out.push((s[0] - s[1]).powi(2) + s[2] + s[3] - 2.0 * s[4]);
    }
    out
}

#[test]
fn coupled_ou_against_moment_ode() {
    let mut pa = scalar_problem(-1.0, StandardDrift::zero(), 1.0, fixed(&[1.0]), 1.0, 512, 2000);
    pa.grid = TimeGrid::new(1.0, 512, 32).unwrap();
    let pb = pa.with_generator(Generator::scalar(-1.1).unwrap());
    let a = simulate_particle_system(&pa, 21).unwrap();
    let b = simulate_particle_system(&pb, 21).unwrap();
    let diff = coupled_difference(&a, &b).unwrap();
    let oracle = coupled_ou_second_moment(-1.0, -1.1, 1.0, &diff.times);
    let oracle_sup = oracle.iter().copied().fold(0.0, f64::max);
    assert!(
        (diff.sup() - oracle_sup).abs() < 3.0 * diff.sup_se() + 1e-4,
        "{} vs {oracle_sup} (se {})",
        diff.sup(),
        diff.sup_se()
    );
}

#[test]
fn deterministic_across_worker_counts() {
    let prob = SdeProblem {
        generator: Generator::heat_modes(4).unwrap(),
        coeffs: CoefficientSpec::standard(
            StandardDrift { sine: 0.5, ..drift(0.0, 1.0) },
            StandardDiffusion { state_dim: 4, noise_dim: 3, sigma: 0.5, gamma: 0.2 },
        ),
        noise: QWienerSpec::power_law(3, 2.0).unwrap(),
        initial: InitialLaw::Gaussian { mean: vec![1.0, 0.5, 0.0, 0.0], std: vec![0.2; 4] },
        noise_scale: 1.0,
        grid: TimeGrid::new(0.5, 64, 8).unwrap(),
        particles: 37,
    };
    let run = |threads: usize| {
        rayon::ThreadPoolBuilder::new()
            .num_threads(threads)
            .build()
            .unwrap()
            .install(|| simulate_particle_system(&prob, 99).unwrap())
    };
    let one = run(1);
    assert_eq!(one, run(2));
    assert_eq!(one, run(8));
}

#[test]
fn zero_noise_equals_deterministic_integrator() {
    let g = Generator::diagonal(&[-1.0, -3.0]).unwrap();
    let f = StandardDrift {
        sine: 0.7,
        forcing: vec![0.5, -0.2],
        ..drift(-0.4, 0.0)
    };
    let prob = SdeProblem {
        generator: g.clone(),
        coeffs: CoefficientSpec::standard(f.clone(), additive(2, 2, 1.0)),
        noise: QWienerSpec::new(vec![1.0, 1.0]).unwrap(),
        initial: fixed(&[1.0, -1.0]),
        noise_scale: 0.0,
        grid: TimeGrid::new(1.0, 50, 1).unwrap(),
        particles: 3,
    };
    let ens = simulate_particle_system(&prob, 4).unwrap();
    // independent deterministic loop: x <- S(dt)(x + f(x) dt)
    let dt = 0.02;
    let mut x = vec![1.0, -1.0];
    let dummy = one_atom(&[0.0, 0.0]);
    for j in 1..=50 {
        let mut fx = vec![0.0; 2];
        f.eval(&x, &dummy, &mut fx);
        let bracket = StateVector::new(vec![x[0] + fx[0] * dt, x[1] + fx[1] * dt]).unwrap();
        x = g.semigroup_apply(dt, &bracket).unwrap().coords().to_vec();
        for i in 0..3 {
            assert_eq!(ens.state(j, i), x.as_slice());
        }
    }
}

#[test]
fn exchangeable_statistics() {
    let prob = scalar_problem(-1.0, drift(0.0, 1.0), 1.0, InitialLaw::Gaussian { mean: vec![0.0], std: vec![1.0] }, 0.5, 32, 50);
    let ens = simulate_particle_system(&prob, 8).unwrap();
    let last = ens.snapshots.last().unwrap();
    let reversed: Vec<f64> = (0..50).rev().flat_map(|i| last.atom(i).to_vec()).collect();
    let perm = EmpiricalMeasure::from_flat(1, reversed).unwrap();
    assert!(rho_upper(last, &perm).unwrap().value <= 1e-12);
    assert!((perm.mean()[0] - last.mean()[0]).abs() < 1e-13);
}

#[test]
fn coupling_chain_end_to_end() {
    let mut pa = scalar_problem(-1.0, drift(0.0, 1.0), 1.0, InitialLaw::Gaussian { mean: vec![1.0], std: vec![0.5] }, 1.0, 64, 200);
    pa.grid = TimeGrid::new(1.0, 64, 8).unwrap();
    let pb = pa.with_generator(Generator::scalar(-2.0).unwrap());
    let a = simulate_particle_system(&pa, 2).unwrap();
    let b = simulate_particle_system(&pb, 2).unwrap();
    let diff = coupled_difference(&a, &b).unwrap();
    for (j, v) in diff.values.iter().enumerate() {
        let rho = rho_upper(&a.snapshots[j], &b.snapshots[j]).unwrap().value;
        let (l1, l2) = paired_coupling_bounds(&a.snapshots[j], &b.snapshots[j]).unwrap();
        assert!(rho <= l1);
        assert!(rho <= v.sqrt() * (1.0 + 1e-12));
        assert!((l2 - v.sqrt()).abs() <= 1e-12 * (1.0 + l2));
    }
}

#[test]
fn picard_law_independent_coefficients() {
    let mut prob = scalar_problem(-1.0, drift(-0.5, 0.0), 1.0, InitialLaw::Gaussian { mean: vec![1.0], std: vec![0.5] }, 0.5, 32, 40);
    prob.grid = TimeGrid::new(0.5, 32, 4).unwrap();
    let it = picard_law_iteration(&prob, 3, 6).unwrap();
    assert_eq!(it.laws.len(), 3);
    assert_eq!(it.gaps.len(), 2);
    assert!(it.gaps[0] <= 1e-12);
    // the frozen run coincides with the live run
    let live = simulate_particle_system(&prob, 6).unwrap();
    assert_eq!(it.laws[0].laws, live.snapshots);

    let single = picard_law_iteration(&prob, 1, 6).unwrap();
    assert_eq!(single.laws.len(), 1);
    assert!(single.gaps.is_empty());
}

#[test]
fn picard_contracts_for_mean_field_drift() {
    let mut prob = scalar_problem(-1.0, drift(0.0, 1.0), 1.0, InitialLaw::Gaussian { mean: vec![2.0], std: vec![0.5] }, 0.25, 64, 60);
    prob.grid = TimeGrid::new(0.25, 64, 8).unwrap();
    let it = picard_law_iteration(&prob, 6, 12).unwrap();
    for w in it.gaps.windows(2) {
        assert!(w[1] < w[0], "{:?}", it.gaps);
    }
    // converges to the live particle system
    let live = simulate_particle_system(&prob, 12).unwrap();
    let (gap, _) = d_metric(it.laws.last().unwrap(), &live.laws()).unwrap();
    assert!(gap.value < 1e-4);
}

#[test]
fn validation_errors() {
    let prob = scalar_problem(-1.0, drift(0.0, 1.0), 1.0, fixed(&[0.0]), 1.0, 4, 1);
    assert!(matches!(simulate_particle_system(&prob, 0), Err(Error::DegenerateInput(_))));
    let bad_dim = SdeProblem {
        initial: fixed(&[0.0, 1.0]),
        particles: 4,
        ..prob.clone()
    };
    assert!(matches!(simulate_particle_system(&bad_dim, 0), Err(Error::Dimension { .. })));
    let blowup = SdeProblem {
        generator: Generator::scalar(700.0).unwrap(),
        grid: TimeGrid::new(2.0, 1, 1).unwrap(),
        particles: 4,
        ..prob
    };
    assert!(simulate_particle_system(&blowup, 0).is_err());
}

#[test]
fn standard_coefficients_pass_lipschitz_spot_check() {
    let spec = CoefficientSpec::standard(
        StandardDrift { sine: 0.5, forcing: vec![1.0], scale: 1.5, ..drift(-0.3, 0.8) },
        StandardDiffusion { state_dim: 3, noise_dim: 2, sigma: 0.4, gamma: 0.6 },
    );
    assert!((spec.k1 - 1.5 * 1.6).abs() < 1e-15);
    assert_eq!(spec.k2, 0.6);
    spec.certify_lipschitz(3, 200, 6, 1).unwrap();

    let understated = CoefficientSpec { k1: 0.1, ..spec };
    assert!(understated.certify_lipschitz(3, 200, 6, 1).is_err());
}
