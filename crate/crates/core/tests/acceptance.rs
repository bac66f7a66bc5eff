//! Acceptance suite: one test per criterion, each printing a single
//! `PASS`/`FAIL` line before asserting.

use std::time::Instant;

use dampwave::discretize::{
    assemble_absorption, assemble_dilation_generator, assemble_h0, assemble_weight, gaussian, Grid, SpongeSpec,
};
use dampwave::evolve::{
    block_resolvent_check, build_dyadic_partition, laplace_transform_check, real, run_and_trace, TraceOptions,
    WaveEquation,
};
use dampwave::flow::{
    build_escape_function, convexity_radius, geometric_control_check, hamiltonian, mourre_commutator_check,
    poisson_bracket, poisson_bracket_check, sample_energy_shell, ControlOptions, EscapeFunction, EscapeParams,
};
use dampwave::medium::{builtin_media, japanese, MediumSpec};
use dampwave::resolvent::{
    apply_resolvent, derivative_terms, dissipative_bound_check, quadratic_estimate_check, GaussInt, NormOptions,
    SolverConfig, WeightedNormSpec, QUADRATIC_SLACK,
};
use dampwave::sweep::{build_system, fit_power_law, fit_trusted, geometric_taus, run_sweep, MuSpec, Regime, SweepPlan};
use dampwave::C64;
use nalgebra::DMatrix;
use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;

fn verdict(id: u32, name: &str, pass: bool, detail: String, started: Instant) {
    println!(
        "{} [{id:>2}] {name}: {detail} ({:.2}s)",
        if pass { "PASS" } else { "FAIL" },
        started.elapsed().as_secs_f64()
    );
    assert!(pass, "criterion {id} ({name}) failed: {detail}");
}

/// Textbook 1-D Dirichlet Laplacian plus `-i z a - z^2`, built densely.
fn dense_operator(n: usize, l: f64, a: impl Fn(f64) -> f64, z: C64) -> DMatrix<C64> {
    let h = 2.0 * l / (n + 1) as f64;
    DMatrix::from_fn(n, n, |r, c| {
        let x = -l + (r + 1) as f64 * h;
        if r == c {
            C64::new(2.0 / (h * h), 0.0) - C64::i() * z * a(x) - z * z
        } else if r.abs_diff(c) == 1 {
            C64::new(-1.0 / (h * h), 0.0)
        } else {
            C64::new(0.0, 0.0)
        }
    })
}

fn largest_singular(m: &DMatrix<C64>) -> f64 {
    m.clone().singular_values().iter().copied().fold(0.0, f64::max)
}

#[test]
fn c01_derivative_algebra() {
    let t0 = Instant::now();
    let mut ok = (0..=6).all(|n| derivative_terms(n).unwrap().constraint_holds());
    let e = derivative_terms(2).unwrap();
    let want = [
        (GaussInt::new(-2, 0), 0u32, vec![1u8, 1]),
        (GaussInt::new(0, 4), 1, vec![0, 1]),
        (GaussInt::new(0, 4), 1, vec![1, 0]),
        (GaussInt::new(2, 0), 0, vec![0]),
        (GaussInt::new(8, 0), 2, vec![0, 0]),
    ];
    ok &= e.terms.len() == want.len();
    ok &= want.iter().all(|(c, k, w)| e.find(*k, w).map(|t| t.coeff) == Some(*c));
    ok &= t0.elapsed().as_secs_f64() < 1.0;
    verdict(1, "derivative algebra", ok, format!("R'' = {e}"), t0);
}

#[test]
fn c02_resolvent_oracle() {
    let t0 = Instant::now();
    let (n, l) = (12, 4.0);
    let m = MediumSpec::damped_free(1, 1.0, 1.0).unwrap();
    let g = Grid::new(1, l, n).unwrap();
    let sys = build_system(&m, &g, None, SolverConfig::default()).unwrap();
    let a = |x: f64| japanese(&[x]).powf(-2.0);
    let mut rng = ChaCha8Rng::seed_from_u64(2);
    let (mut worst, mut worst_adj) = (0.0f64, 0.0f64);
    for _ in 0..10 {
        let z = C64::new(rng.random_range(-3.0..3.0), rng.random_range(0.05..2.0));
        let v: Vec<C64> = (0..n).map(|_| C64::new(rng.random_range(-1.0..1.0), rng.random_range(-1.0..1.0))).collect();
        let (x, _) = apply_resolvent(&sys, z, &v).unwrap();
        let dense = dense_operator(n, l, a, z);
        let want = dense.clone().lu().solve(&nalgebra::DVector::from_vec(v.clone())).unwrap();
        let err = x.iter().zip(want.iter()).map(|(p, q)| (p - q).norm_sqr()).sum::<f64>().sqrt() / want.norm();
        worst = worst.max(err);

        // R(-conj z) against the adjoint of the dense inverse, column by column.
        let inv = dense.try_inverse().unwrap();
        for k in 0..n {
            let mut e = vec![C64::new(0.0, 0.0); n];
            e[k] = C64::new(1.0, 0.0);
            let (col, _) = apply_resolvent(&sys, -z.conj(), &e).unwrap();
            let adj = inv.adjoint();
            let num: f64 = (0..n).map(|r| (col[r] - adj[(r, k)]).norm_sqr()).sum::<f64>().sqrt();
            let den: f64 = (0..n).map(|r| adj[(r, k)].norm_sqr()).sum::<f64>().sqrt();
            worst_adj = worst_adj.max(num / den);
        }
    }
    let ok = worst <= 1e-9 && worst_adj <= 1e-9 && t0.elapsed().as_secs_f64() < 5.0;
    verdict(2, "resolvent oracle", ok, format!("solve {worst:.2e}, adjoint {worst_adj:.2e}"), t0);
}

#[test]
fn c03_dissipative_bounds() {
    let t0 = Instant::now();
    let m = MediumSpec::damped_free(2, 1.0, 1.0).unwrap();
    let g = Grid::new(2, 6.0, 24).unwrap();
    let sys = build_system(&m, &g, None, SolverConfig::default()).unwrap();
    let mut rng = ChaCha8Rng::seed_from_u64(3);
    let mut zs = Vec::new();
    while zs.len() < 10 {
        let z = C64::new(rng.random_range(-2.5..2.5), rng.random_range(0.05..1.0));
        if z.re.abs() >= 0.5 * z.im {
            zs.push(z);
        }
    }
    while zs.len() < 20 {
        let im = rng.random_range(0.2..2.0);
        zs.push(C64::new(rng.random_range(-0.5..0.5) * 0.99 * im, im));
    }
    let opts = NormOptions::default();
    let reps: Vec<_> = zs.iter().map(|&z| dissipative_bound_check(&sys, z, &opts).unwrap()).collect();
    let violations = reps.iter().filter(|r| !r.pass).count();
    let worst = reps.iter().map(|r| r.margin).fold(f64::INFINITY, f64::min);
    let ok = violations == 0 && t0.elapsed().as_secs_f64() < 60.0;
    verdict(3, "dissipative bounds", ok, format!("{violations} violations of 20, smallest relative margin {worst:.3}"), t0);
}

#[test]
fn c04_quadratic_estimate() {
    let t0 = Instant::now();
    let (n, l) = (16, 5.0);
    let m = MediumSpec::damped_free(1, 1.0, 1.0).unwrap();
    let g = Grid::new(1, l, n).unwrap();
    let sys = build_system(&m, &g, None, SolverConfig::default()).unwrap();
    let q = assemble_weight(&g, -1.0);
    let a = |x: f64| japanese(&[x]).powf(-2.0);
    let h = 2.0 * l / (n + 1) as f64;
    let xs: Vec<f64> = (0..n).map(|i| -l + (i + 1) as f64 * h).collect();
    let qd = DMatrix::from_fn(n, n, |r, c| if r == c { C64::new(japanese(&[xs[r]]).powi(-1), 0.0) } else { C64::new(0.0, 0.0) });
    let sa = DMatrix::from_fn(n, n, |r, c| if r == c { C64::new(a(xs[r]).sqrt(), 0.0) } else { C64::new(0.0, 0.0) });
    let mut rng = ChaCha8Rng::seed_from_u64(4);
    let mut ok = true;
    let mut worst_ratio: f64 = 0.0;
    for _ in 0..10 {
        let z = C64::new(rng.random_range(-3.0..3.0), rng.random_range(0.05..1.5));
        let r = dense_operator(n, l, a, z).try_inverse().unwrap();
        let lhs = z.norm() * largest_singular(&(&sa * &r * &qd)).powi(2);
        let rhs = std::f64::consts::SQRT_2 * largest_singular(&(qd.adjoint() * &r * &qd));
        worst_ratio = worst_ratio.max(lhs / rhs);
        ok &= lhs <= QUADRATIC_SLACK * rhs;
        ok &= quadratic_estimate_check(&sys, z, &q, &NormOptions::default()).unwrap().pass;
    }
    ok &= t0.elapsed().as_secs_f64() < 30.0;
    verdict(4, "quadratic estimate", ok, format!("largest lhs/rhs {worst_ratio:.3}"), t0);
}

#[test]
fn c05_low_frequency_exponent() {
    let t0 = Instant::now();
    let g = Grid::new(3, 12.0, 48).unwrap();
    let m = MediumSpec::free(3);
    let sponge = SpongeSpec::default_for(&g);
    let mut plan = SweepPlan::new(Regime::Low, geometric_taus(0.4, 1.0, 5), WeightedNormSpec::plain(2, 3.0));
    plan.mu = MuSpec::Proportional(0.05);
    let res = run_sweep(&plan, &m, &g, Some(&sponge), SolverConfig::default(), &NormOptions::default()).unwrap();
    let fit = fit_power_law(&res, (0.4, 1.0)).unwrap();
    let predicted = Regime::Low.predicted_exponent(3, 2);
    let ok = (fit.exponent - predicted).abs() <= 0.35 && fit.r_squared >= 0.9;
    let values: Vec<String> = res.values().iter().map(|(t, v)| format!("{t:.3}:{v:.3}")).collect();
    verdict(
        5,
        "low-frequency exponent",
        ok,
        format!("exponent {:.3} (want {predicted} +- 0.35), r2 {:.3}, norms [{}]", fit.exponent, fit.r_squared, values.join(" ")),
        t0,
    );
}

#[test]
fn c06_high_frequency_exponent() {
    let t0 = Instant::now();
    let g = Grid::new(2, 10.0, 160).unwrap();
    let m = MediumSpec::damped_free(2, 1.0, 1.0).unwrap();
    let (lo, hi) = (2.0, 5.0f64.min(0.5 / g.h));
    let plan = SweepPlan::new(Regime::High, geometric_taus(lo, hi, 6), WeightedNormSpec::plain(0, 1.0));
    let res = run_sweep(&plan, &m, &g, None, SolverConfig::default(), &NormOptions::default()).unwrap();
    let fit = fit_trusted(&res, (2.0, 5.0)).unwrap();
    let ok = (fit.exponent + 1.0).abs() <= 0.3;
    verdict(
        6,
        "high-frequency exponent",
        ok,
        format!("exponent {:.3} on tau in [{:.2}, {:.2}], r2 {:.4}", fit.exponent, fit.window.0, fit.window.1, fit.r_squared),
        t0,
    );
}

#[test]
fn c07_intermediate_uniformity() {
    let t0 = Instant::now();
    let g = Grid::new(2, 8.0, 64).unwrap();
    let m = MediumSpec::damped_free(2, 1.0, 1.0).unwrap();
    let sys = build_system(&m, &g, None, SolverConfig::default()).unwrap();
    let taus = geometric_taus(0.8, 1.6, 6);
    let mut ok = true;
    let mut parts = Vec::new();
    for n in 0..=2 {
        let mut plan = SweepPlan::new(Regime::Intermediate, taus.clone(), WeightedNormSpec::plain(n, n as f64 + 1.0));
        plan.mu = MuSpec::Fixed(0.02);
        let res = dampwave::sweep::run_sweep_on(&plan, &sys, &NormOptions::default()).unwrap();
        let spread = res.spread();
        ok &= res.points.iter().all(|p| p.value().is_some()) && spread <= 10.0;
        parts.push(format!("n={n}: max/min {spread:.2}"));
    }
    ok &= t0.elapsed().as_secs_f64() < 120.0;
    verdict(7, "intermediate uniformity", ok, parts.join(", "), t0);
}

#[test]
fn c08_energy_dissipation() {
    let t0 = Instant::now();
    let g = Grid::new(2, 8.0, 64).unwrap();
    let mut ok = true;
    let mut parts = Vec::new();
    for m in builtin_media(2) {
        let eq = WaveEquation::from_medium(&m, &g, None).unwrap();
        let u0 = real(&gaussian(&g, &[0.5, -0.5], 1.0, 1.0));
        let u1 = real(&gaussian(&g, &[-1.0, 0.5], 1.2, 0.5));
        let opts = TraceOptions { t_final: 20.0, dt: 0.8 * eq.cfl_limit(), deltas: vec![1.0], sample_every: 1, data_radius: None };
        let tr = run_and_trace(&eq, &u0, &u1, &opts).unwrap();
        let e0 = tr.global_energy[0];
        let monotone = tr.global_energy.windows(2).all(|w| w[1] <= w[0] + 1e-12 * e0);
        let balance = tr.balance_error() / e0;
        ok &= monotone && balance <= 1e-4;
        parts.push(format!("{}: balance {balance:.1e}", m.name));
    }
    ok &= t0.elapsed().as_secs_f64() < 60.0;
    verdict(8, "energy dissipation", ok, parts.join(", "), t0);
}

#[test]
fn c09_fourier_resolvent_identity() {
    let t0 = Instant::now();
    let g = Grid::new(1, 8.0, 32).unwrap();
    let m = MediumSpec::damped_free(1, 1.0, 1.0).unwrap();
    let eq = WaveEquation::from_medium(&m, &g, None).unwrap();
    let u0 = real(&gaussian(&g, &[0.5], 1.0, 1.0));
    let u1 = real(&gaussian(&g, &[-0.5], 1.0, 0.5));
    let (tau, mu) = (1.0, 0.5);
    let t_final = 45.0 / mu;
    let dt = 0.25 * eq.cfl_limit();
    let a = laplace_transform_check(&eq, &u0, &u1, tau, mu, t_final, dt).unwrap();
    let b = laplace_transform_check(&eq, &u0, &u1, tau, mu, t_final, dt / 2.0).unwrap();
    let ratio = a.rel_error / b.rel_error;
    let ok = a.rel_error <= 1e-2 && ratio >= 3.5 && t0.elapsed().as_secs_f64() < 30.0;
    verdict(
        9,
        "Fourier-resolvent identity",
        ok,
        format!("error {:.2e} -> {:.2e} on halving dt (x{ratio:.2}), velocity {:.2e}", a.rel_error, b.rel_error, b.velocity_error),
        t0,
    );
}

#[test]
fn c10_dyadic_partition() {
    let t0 = Instant::now();
    let p = build_dyadic_partition(10).unwrap();
    let top = p.coverage();
    let mut worst: f64 = 0.0;
    let mut overlap = 0usize;
    for k in 0..10_000 {
        let t = top * k as f64 / 9_999.0;
        worst = worst.max((p.sum(t) - 1.0).abs());
        for j in 0..=10 {
            for l in j + 2..=10 {
                if p.level(j, t) * p.level(l, t) != 0.0 {
                    overlap += 1;
                }
            }
        }
    }
    let ok = worst <= 1e-12 && overlap == 0 && t0.elapsed().as_secs_f64() < 1.0;
    verdict(10, "dyadic partition", ok, format!("identity defect {worst:.1e}, {overlap} overlaps"), t0);
}

#[test]
fn c11_flow_and_escape() {
    let t0 = Instant::now();
    let shell_i = (0.5, 1.5);

    let free = MediumSpec::free(2);
    let samples = sample_energy_shell(&free, shell_i, 5.0, 1000, 11).unwrap();
    let f0 = EscapeFunction::free(0.0);
    let free_ok = samples.iter().all(|w| {
        let b = poisson_bracket(&f0, &free, w, 1e-4).unwrap();
        let p = hamiltonian(&free, w);
        (b - 2.0 * p).abs() <= 1e-8 && b >= 1.0 - 1e-9
    });

    let well = MediumSpec::trapping_well(2).unwrap();
    let rg = convexity_radius(&well, 12.0, 0.25, 24);
    let build = sample_energy_shell(&well, shell_i, 5.0, 1000, 12).unwrap();
    let f = build_escape_function(&well, &build, &EscapeParams::new(rg)).unwrap();
    let check = sample_energy_shell(&well, shell_i, 5.0, 1000, 13).unwrap();
    let bracket = poisson_bracket_check(&f, &well, &check, 1e-4).unwrap();

    let copts = ControlOptions { t_max: 30.0, ..ControlOptions::new(rg, 5.0) };
    let ctrl = geometric_control_check(&well, shell_i, &copts).unwrap();
    let displaced = MediumSpec::trapping_well_displaced(2).unwrap();
    let rgd = convexity_radius(&displaced, 12.0, 0.25, 24);
    let ctrl_d = geometric_control_check(&displaced, shell_i, &ControlOptions { t_max: 30.0, ..ControlOptions::new(rgd, 5.0) }).unwrap();

    let ok = free_ok && bracket.pass && f.c0 > 0.0 && ctrl.pass && !ctrl_d.pass && t0.elapsed().as_secs_f64() < 120.0;
    verdict(
        11,
        "flow and escape",
        ok,
        format!(
            "free bracket exact: {free_ok}; well: {} bumps, beta {:.2}, c0 {:.3}, achieved {:.3}; control {}/{} trapped, displaced {}/{}",
            f.bumps.len(),
            f.beta,
            f.c0,
            bracket.c0_achieved,
            ctrl.controlled,
            ctrl.trapped,
            ctrl_d.controlled,
            ctrl_d.trapped
        ),
        t0,
    );
}

#[test]
fn c12_mourre_positivity() {
    let t0 = Instant::now();
    let g = Grid::new(1, 8.0, 32).unwrap();
    let free = MediumSpec::free(1);
    let h = assemble_h0(&free, &g).unwrap();
    let a_gen = assemble_dilation_generator(&g);
    let damped = MediumSpec::damped_free(1, 1.0, 1.0).unwrap();
    let a = assemble_absorption(&damped, &g).unwrap();
    let window = (0.5, 1.5);
    let base = mourre_commutator_check(&h, &a_gen, &a, window, 0.0).unwrap();
    let continuum = 2.0 * window.0;
    let betas = [0.5, 1.0, 2.0];
    let alphas: Vec<f64> = betas.iter().map(|&b| mourre_commutator_check(&h, &a_gen, &a, window, b).unwrap().alpha_estimate).collect();
    let monotone = std::iter::once(base.alpha_estimate).chain(alphas.iter().copied()).collect::<Vec<_>>().windows(2).all(|w| w[1] >= w[0]);
    let ok = base.projector_rank >= 1 && base.alpha_estimate >= 0.8 * continuum && monotone && t0.elapsed().as_secs_f64() < 10.0;
    verdict(
        12,
        "Mourre positivity",
        ok,
        format!(
            "rank {}, alpha {:.4} (want >= {:.2}), beta-monotone {monotone} {alphas:.4?}",
            base.projector_rank,
            base.alpha_estimate,
            0.8 * continuum
        ),
        t0,
    );
}

#[test]
fn c13_block_resolvent() {
    let t0 = Instant::now();
    let g = Grid::new(1, 3.0, 10).unwrap();
    let m = MediumSpec::damped_free(1, 1.0, 1.0).unwrap();
    let h = assemble_h0(&m, &g).unwrap().matrix.to_dense();
    let a: Vec<f64> = assemble_absorption(&m, &g).unwrap().diagonal().iter().map(|v| v.re).collect();
    let mut rng = ChaCha8Rng::seed_from_u64(13);
    let mut worst: f64 = 0.0;
    for _ in 0..5 {
        let z = C64::new(rng.random_range(-3.0..3.0), rng.random_range(0.05..2.0));
        worst = worst.max(block_resolvent_check(&h, &a, z).unwrap().max_rel_diff);
    }
    let ok = worst <= 1e-9 && t0.elapsed().as_secs_f64() < 5.0;
    verdict(13, "block resolvent identity", ok, format!("largest entrywise difference {worst:.2e}"), t0);
}
