//! Operator-norm estimates by power iteration and the dissipative bounds.

use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;

use super::{derivative_terms, ResolventSystem};
use crate::discretize::{assemble_derivative, DiscreteOperator, Role};
use crate::error::{input, LabError, Result};
use crate::medium::japanese;
use crate::sparse::{norm2, C64};

#[derive(Clone, Copy, Debug, PartialEq)]
pub struct NormOptions {
    pub tol: f64,
    pub max_iterations: usize,
    pub seed: u64,
}

impl Default for NormOptions {
    fn default() -> Self {
        Self { tol: 1e-3, max_iterations: 200, seed: 0x5eed }
    }
}

#[derive(Clone, Copy, Debug, PartialEq)]
pub struct NormEstimate {
    pub value: f64,
    pub iterations: usize,
    /// Worst relative residual over the solves behind the estimate.
    pub residual: f64,
    pub solver_iterations: usize,
}

/// Largest singular value of `T` from power iteration on `T^* T`, started
/// from a seeded random vector. The returned value is the Rayleigh quotient
/// `||T x||` at the final iterate, hence never above the true norm.
pub fn operator_norm(
    dim: usize,
    mut apply: impl FnMut(&[C64]) -> Result<Vec<C64>>,
    mut apply_adjoint: impl FnMut(&[C64]) -> Result<Vec<C64>>,
    opts: &NormOptions,
) -> Result<NormEstimate> {
    let mut rng = ChaCha8Rng::seed_from_u64(opts.seed);
    let mut x: Vec<C64> = (0..dim).map(|_| C64::new(rng.random_range(-1.0..1.0), rng.random_range(-1.0..1.0))).collect();
    let n0 = norm2(&x);
    x.iter_mut().for_each(|v| *v /= n0);
    let mut prev = f64::NAN;
    let mut change = f64::INFINITY;
    for it in 1..=opts.max_iterations {
        let y = apply(&x)?;
        let s = norm2(&y).powi(2);
        let next = apply_adjoint(&y)?;
        let nn = norm2(&next);
        if nn == 0.0 || s == 0.0 {
            return Ok(NormEstimate { value: 0.0, iterations: it, residual: 0.0, solver_iterations: 0 });
        }
        change = ((s - prev) / s).abs();
        if change <= opts.tol {
            return Ok(NormEstimate { value: s.sqrt(), iterations: it, residual: 0.0, solver_iterations: 0 });
        }
        prev = s;
        x = next.into_iter().map(|v| v / nn).collect();
    }
    Err(LabError::Stagnation { iterations: opts.max_iterations, change })
}

/// `T = W(-delta1) D^alpha R^{(n)}(z) W(-delta2)`.
#[derive(Clone, Copy, Debug, PartialEq)]
pub struct WeightedNormSpec {
    pub n: usize,
    pub delta1: f64,
    pub delta2: f64,
    /// Differentiate along this axis on the left when set.
    pub deriv: Option<usize>,
}

impl WeightedNormSpec {
    pub fn plain(n: usize, delta: f64) -> Self {
        Self { n, delta1: delta, delta2: delta, deriv: None }
    }
}

pub fn weighted_norm_estimate(
    system: &ResolventSystem,
    z: C64,
    spec: &WeightedNormSpec,
    opts: &NormOptions,
) -> Result<NormEstimate> {
    let grid = system.grid;
    let expansion = derivative_terms(spec.n)?;
    let w1: Vec<f64> = grid.points().map(|x| japanese(&x).powf(-spec.delta1)).collect();
    let w2: Vec<f64> = grid.points().map(|x| japanese(&x).powf(-spec.delta2)).collect();
    let d = spec.deriv.map(|axis| assemble_derivative(&grid, axis)).transpose()?;
    let r = system.at(z)?;
    let scale = |w: &[f64], v: &[C64]| -> Vec<C64> { v.iter().zip(w).map(|(x, s)| x * s).collect() };
    let est = operator_norm(
        system.dim(),
        |x| {
            let y = r.apply_composite(&expansion, &scale(&w2, x))?;
            let y = match &d {
                Some(d) => d.apply(&y),
                None => y,
            };
            Ok(scale(&w1, &y))
        },
        |y| {
            let v = scale(&w1, y);
            let v = match &d {
                Some(d) => d.matrix.adjoint_mul_vec(&v),
                None => v,
            };
            Ok(scale(&w2, &r.apply_composite_adjoint(&expansion, &v)?))
        },
        opts,
    )?;
    let (residual, its, _) = r.stats();
    Ok(NormEstimate { residual, solver_iterations: its, ..est })
}

/// `1/(2|Re z| Im z)` when `|Re z| >= Im z / 2`, else `4/(3 (Im z)^2)`.
pub fn dissipative_bound(z: C64) -> f64 {
    if z.re.abs() >= 0.5 * z.im {
        1.0 / (2.0 * z.re.abs() * z.im)
    } else {
        4.0 / (3.0 * z.im * z.im)
    }
}

#[derive(Clone, Copy, Debug, PartialEq)]
pub struct DissipativeReport {
    pub z: C64,
    pub estimate: f64,
    pub bound: f64,
    /// `(bound - estimate) / bound`
    pub margin: f64,
    pub pass: bool,
}

pub fn dissipative_bound_check(system: &ResolventSystem, z: C64, opts: &NormOptions) -> Result<DissipativeReport> {
    let estimate = weighted_norm_estimate(system, z, &WeightedNormSpec::plain(0, 0.0), opts)?.value;
    let bound = dissipative_bound(z);
    let margin = (bound - estimate) / bound;
    Ok(DissipativeReport { z, estimate, bound, margin, pass: estimate <= bound })
}

#[derive(Clone, Copy, Debug, PartialEq)]
pub struct QuadraticReport {
    pub z: C64,
    /// `|z| ||sqrt(a) R Q||^2`
    pub lhs: f64,
    /// `sqrt(2) ||Q^* R Q||`
    pub rhs: f64,
    pub pass: bool,
}

pub const QUADRATIC_SLACK: f64 = 1.05;

pub fn quadratic_estimate_check(
    system: &ResolventSystem,
    z: C64,
    q: &DiscreteOperator,
    opts: &NormOptions,
) -> Result<QuadraticReport> {
    if !matches!(q.role, Role::Weight(_)) {
        return input("Q must be a weight operator");
    }
    let qd: Vec<C64> = q.diagonal();
    let sqrt_a: Vec<f64> = system.absorption.iter().map(|a| a.max(0.0).sqrt()).collect();
    let r = system.at(z)?;
    let mul = |w: &[C64], v: &[C64]| -> Vec<C64> { v.iter().zip(w).map(|(x, s)| x * s).collect() };
    let mul_conj = |w: &[C64], v: &[C64]| -> Vec<C64> { v.iter().zip(w).map(|(x, s)| x * s.conj()).collect() };
    let mul_real = |w: &[f64], v: &[C64]| -> Vec<C64> { v.iter().zip(w).map(|(x, s)| x * s).collect() };

    let lhs = if sqrt_a.iter().all(|&s| s == 0.0) {
        0.0
    } else {
        let n = operator_norm(
            system.dim(),
            |x| Ok(mul_real(&sqrt_a, &r.solve(&mul(&qd, x))?.0)),
            |y| Ok(mul_conj(&qd, &r.solve_adjoint(&mul_real(&sqrt_a, y))?.0)),
            opts,
        )?;
        z.norm() * n.value * n.value
    };
    let rhs = std::f64::consts::SQRT_2
        * operator_norm(
            system.dim(),
            |x| Ok(mul_conj(&qd, &r.solve(&mul(&qd, x))?.0)),
            |y| Ok(mul_conj(&qd, &r.solve_adjoint(&mul(&qd, y))?.0)),
            opts,
        )?
        .value;
    Ok(QuadraticReport { z, lhs, rhs, pass: lhs <= QUADRATIC_SLACK * rhs })
}
