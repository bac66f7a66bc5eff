//! Fast oracle checks against closed forms and dense linear algebra.

use dampwave::discretize::{gaussian, Grid};
use dampwave::evolve::{block_resolvent_check, build_dyadic_partition, real, run_and_trace, TraceOptions, WaveEquation};
use dampwave::flow::{hamiltonian, poisson_bracket, sample_energy_shell, EscapeFunction};
use dampwave::medium::{japanese, MediumSpec};
use dampwave::resolvent::{
    apply_resolvent, derivative_terms, dissipative_bound_check, GaussInt, NormOptions, SolverConfig,
};
use dampwave::sweep::build_system;
use dampwave::{Result, C64};
use nalgebra::{DMatrix, DVector};

type Check = fn() -> Result<(bool, String)>;

pub const CHECKS: [(&str, Check); 7] = [
    ("derivative terms", derivative_algebra),
    ("resolvent vs dense solve", resolvent_dense),
    ("dissipative bounds", dissipative),
    ("block resolvent", block),
    ("dyadic partition", dyadic),
    ("energy balance", energy),
    ("free bracket", free_bracket),
];

/// Runs every check, printing one line each; returns whether all passed.
pub fn run() -> bool {
    let mut all = true;
    for (name, check) in CHECKS {
        let (ok, detail) = match check() {
            Ok(r) => r,
            Err(e) => (false, e.to_string()),
        };
        all &= ok;
        println!("{} {name}: {detail}", if ok { "PASS" } else { "FAIL" });
    }
    all
}

fn derivative_algebra() -> Result<(bool, String)> {
    let e = derivative_terms(2)?;
    let ok = (0..=6).all(|n| derivative_terms(n).map(|t| t.constraint_holds()).unwrap_or(false))
        && e.terms.len() == 5
        && e.find(0, &[1, 1]).map(|t| t.coeff) == Some(GaussInt::new(-2, 0))
        && e.find(1, &[0, 1]).map(|t| t.coeff) == Some(GaussInt::new(0, 4))
        && e.find(1, &[1, 0]).map(|t| t.coeff) == Some(GaussInt::new(0, 4))
        && e.find(0, &[0]).map(|t| t.coeff) == Some(GaussInt::new(2, 0))
        && e.find(2, &[0, 0]).map(|t| t.coeff) == Some(GaussInt::new(8, 0));
    Ok((ok, e.to_string()))
}

fn resolvent_dense() -> Result<(bool, String)> {
    let (n, l) = (12, 4.0);
    let g = Grid::new(1, l, n)?;
    let m = MediumSpec::damped_free(1, 1.0, 1.0)?;
    let sys = build_system(&m, &g, None, SolverConfig::default())?;
    let h = 2.0 * l / (n + 1) as f64;
    let mut worst: f64 = 0.0;
    for k in 0..4 {
        let z = C64::new(-1.5 + k as f64, 0.1 + 0.3 * k as f64);
        let mat = DMatrix::from_fn(n, n, |r, c| {
            let x = -l + (r + 1) as f64 * h;
            match r.abs_diff(c) {
                0 => C64::new(2.0 / (h * h), 0.0) - C64::i() * z / japanese(&[x]).powi(2) - z * z,
                1 => C64::new(-1.0 / (h * h), 0.0),
                _ => C64::new(0.0, 0.0),
            }
        });
        let v: Vec<C64> = (0..n).map(|i| C64::new((i as f64).sin(), (i as f64 * 0.7).cos())).collect();
        let want = mat.lu().solve(&DVector::from_vec(v.clone())).expect("invertible");
        let (got, _) = apply_resolvent(&sys, z, &v)?;
        let err = got.iter().zip(want.iter()).map(|(a, b)| (a - b).norm_sqr()).sum::<f64>().sqrt() / want.norm();
        worst = worst.max(err);
    }
    Ok((worst <= 1e-9, format!("relative error {worst:.2e}")))
}

fn dissipative() -> Result<(bool, String)> {
    let g = Grid::new(1, 6.0, 48)?;
    let m = MediumSpec::damped_free(1, 1.0, 1.0)?;
    let sys = build_system(&m, &g, None, SolverConfig::default())?;
    let zs = [C64::new(1.0, 0.2), C64::new(-2.0, 0.5), C64::new(0.1, 1.0), C64::new(0.0, 0.3)];
    let mut worst = f64::INFINITY;
    let mut ok = true;
    for z in zs {
        let r = dissipative_bound_check(&sys, z, &NormOptions::default())?;
        ok &= r.pass;
        worst = worst.min(r.margin);
    }
    Ok((ok, format!("smallest margin {worst:.3}")))
}

fn block() -> Result<(bool, String)> {
    let g = Grid::new(1, 3.0, 10)?;
    let m = MediumSpec::damped_free(1, 1.0, 1.0)?;
    let h = dampwave::discretize::assemble_h0(&m, &g)?.matrix.to_dense();
    let a: Vec<f64> = g.points().map(|x| m.absorption_at(&x)).collect();
    let mut worst: f64 = 0.0;
    for z in [C64::new(0.7, 0.3), C64::new(-1.2, 1.1)] {
        worst = worst.max(block_resolvent_check(&h, &a, z)?.max_rel_diff);
    }
    Ok((worst <= 1e-9, format!("largest difference {worst:.2e}")))
}

fn dyadic() -> Result<(bool, String)> {
    let p = build_dyadic_partition(8)?;
    let top = p.coverage();
    let worst = (0..2000).map(|k| (p.sum(top * k as f64 / 1999.0) - 1.0).abs()).fold(0.0, f64::max);
    Ok((worst <= 1e-12, format!("identity defect {worst:.1e}")))
}

fn energy() -> Result<(bool, String)> {
    let g = Grid::new(1, 8.0, 64)?;
    let m = MediumSpec::damped_free(1, 1.0, 1.0)?;
    let eq = WaveEquation::from_medium(&m, &g, None)?;
    let u0 = real(&gaussian(&g, &[0.0], 1.0, 1.0));
    let u1 = vec![0.0; g.len()];
    let opts = TraceOptions { t_final: 10.0, dt: 0.8 * eq.cfl_limit(), deltas: vec![1.0], sample_every: 1, data_radius: None };
    let tr = run_and_trace(&eq, &u0, &u1, &opts)?;
    let rel = tr.balance_error() / tr.global_energy[0];
    Ok((rel <= 1e-10 && tr.max_increase() <= 0.0, format!("balance {rel:.1e}")))
}

fn free_bracket() -> Result<(bool, String)> {
    let m = MediumSpec::free(2);
    let f = EscapeFunction::free(0.0);
    let mut worst: f64 = 0.0;
    for w in sample_energy_shell(&m, (0.5, 1.5), 5.0, 100, 1)? {
        worst = worst.max((poisson_bracket(&f, &m, &w, 1e-4)? - 2.0 * hamiltonian(&m, &w)).abs());
    }
    Ok((worst <= 1e-8, format!("largest deviation from 2p {worst:.1e}")))
}
