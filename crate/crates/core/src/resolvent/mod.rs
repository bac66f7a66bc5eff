//! `R(z) = (H0 - i z a - z^2)^{-1}` for `Im z > 0`, its derivatives and norms.

mod norm;
mod solver;
mod terms;

use std::cell::{Cell, OnceCell};
use std::collections::HashMap;

pub use norm::{
    dissipative_bound, dissipative_bound_check, operator_norm, quadratic_estimate_check, weighted_norm_estimate,
    DissipativeReport, NormEstimate, NormOptions, QuadraticReport, WeightedNormSpec, QUADRATIC_SLACK,
};
pub use solver::{Method, SolveReport, SolverConfig};
pub use terms::{derivative_terms, GaussInt, ResolventTerm, TermExpansion, MAX_ORDER};

use crate::discretize::{DiscreteOperator, Grid, Role};
use crate::error::{input, LabError, Result};
use crate::sparse::{norm2, CsrMatrix, C64};
use solver::{BandLu, ShiftedLaplacian};

/// `H` (with the sponge folded in when present) and the absorption diagonal.
#[derive(Clone, Debug)]
pub struct ResolventSystem {
    pub grid: Grid,
    pub h: CsrMatrix<C64>,
    pub absorption: Vec<f64>,
    pub config: SolverConfig,
    pub sponge: bool,
}

impl ResolventSystem {
    pub fn new(
        h0: &DiscreteOperator,
        a_op: &DiscreteOperator,
        sponge: Option<&DiscreteOperator>,
        config: SolverConfig,
    ) -> Result<Self> {
        if a_op.role != Role::Absorption {
            return input("second operator must be an absorption multiplier");
        }
        if h0.matrix.dim() != a_op.matrix.dim() {
            return input("operator sizes differ");
        }
        let mut h = h0.matrix.clone();
        if let Some(s) = sponge {
            if s.matrix.dim() != h.dim() {
                return input("sponge size differs");
            }
            h = h.add(&s.matrix);
        }
        let absorption = a_op.diagonal().iter().map(|v| v.re).collect();
        Ok(Self { grid: h0.grid, h, absorption, config, sponge: sponge.is_some() })
    }

    pub fn dim(&self) -> usize {
        self.h.dim()
    }

    /// `M(z) = H - i z a - z^2` as a sparse matrix.
    pub fn matrix(&self, z: C64) -> CsrMatrix<C64> {
        let i = C64::new(0.0, 1.0);
        let diag: Vec<C64> = self.absorption.iter().map(|&a| -i * z * a - z * z).collect();
        self.h.add(&CsrMatrix::from_diagonal(&diag))
    }

    pub fn apply_matrix(&self, z: C64, w: &[C64]) -> Vec<C64> {
        let i = C64::new(0.0, 1.0);
        let mut out = self.h.mul_vec(w);
        for ((o, &a), x) in out.iter_mut().zip(&self.absorption).zip(w) {
            *o += (-i * z * a - z * z) * x;
        }
        out
    }

    pub fn apply_matrix_adjoint(&self, z: C64, w: &[C64]) -> Vec<C64> {
        let i = C64::new(0.0, 1.0);
        let zc = z.conj();
        let mut out = self.h.adjoint_mul_vec(w);
        for ((o, &a), x) in out.iter_mut().zip(&self.absorption).zip(w) {
            *o += (i * zc * a - zc * zc) * x;
        }
        out
    }

    pub fn at(&self, z: C64) -> Result<Resolvent<'_>> {
        Resolvent::new(self, z)
    }

    pub fn with_absorption(&self, absorption: Vec<f64>) -> Self {
        Self { absorption, ..self.clone() }
    }
}

enum Backend {
    Dense {
        lu: nalgebra::LU<C64, nalgebra::Dyn, nalgebra::Dyn>,
        adjoint: OnceCell<nalgebra::LU<C64, nalgebra::Dyn, nalgebra::Dyn>>,
        matrix: CsrMatrix<C64>,
    },
    Band(BandLu),
    Iterative { pre: ShiftedLaplacian, pre_adjoint: ShiftedLaplacian },
}

/// `R(z)` at a fixed `z`, with the factorisation or preconditioner prepared.
pub struct Resolvent<'a> {
    pub system: &'a ResolventSystem,
    pub z: C64,
    pub method: Method,
    backend: Backend,
    max_residual: Cell<f64>,
    iterations: Cell<usize>,
    solves: Cell<usize>,
}

impl<'a> Resolvent<'a> {
    pub fn new(system: &'a ResolventSystem, z: C64) -> Result<Self> {
        if !(z.im > 0.0) || !z.re.is_finite() || !z.im.is_finite() {
            return input(format!("resolvent needs Im z > 0, got z = {z}"));
        }
        let n = system.dim();
        let method = system.config.choose(n, system.h.bandwidth());
        let backend = match method {
            Method::DenseDirect => {
                let matrix = system.matrix(z);
                Backend::Dense { lu: solver::dense_lu(&matrix)?, adjoint: OnceCell::new(), matrix }
            }
            Method::SparseDirect => Backend::Band(BandLu::factor(&system.matrix(z))?),
            Method::Iterative => {
                let z2 = z * z;
                let sign = if z2.im < 0.0 { -1.0 } else { 1.0 };
                let shift = z2 + C64::new(0.0, sign * system.config.shift_beta * z2.norm().max(1e-3));
                let pre = ShiftedLaplacian::new(&system.grid, shift);
                let pre_adjoint = pre.adjoint();
                Backend::Iterative { pre, pre_adjoint }
            }
        };
        Ok(Self {
            system,
            z,
            method,
            backend,
            max_residual: Cell::new(0.0),
            iterations: Cell::new(0),
            solves: Cell::new(0),
        })
    }

    fn finish(&self, v: &[C64], w: Vec<C64>, iterations: usize, adjoint: bool) -> Result<(Vec<C64>, SolveReport)> {
        let vn = norm2(v);
        let residual = if vn == 0.0 {
            0.0
        } else {
            let mw = if adjoint {
                self.system.apply_matrix_adjoint(self.z, &w)
            } else {
                self.system.apply_matrix(self.z, &w)
            };
            let r: Vec<C64> = mw.iter().zip(v).map(|(a, b)| a - b).collect();
            norm2(&r) / vn
        };
        self.max_residual.set(self.max_residual.get().max(residual));
        self.iterations.set(self.iterations.get() + iterations);
        self.solves.set(self.solves.get() + 1);
        // direct solves are not held to the iterative tolerance beyond roundoff growth
        let limit = match self.method {
            Method::Iterative => 10.0 * self.system.config.tol,
            _ => 1e-6,
        };
        if !(residual <= limit) {
            return Err(LabError::Solver { residual, iterations });
        }
        Ok((w, SolveReport { residual, iterations, method: self.method }))
    }

    /// `w = R(z) v`
    pub fn solve(&self, v: &[C64]) -> Result<(Vec<C64>, SolveReport)> {
        self.check_len(v)?;
        let cfg = &self.system.config;
        let (w, its) = match &self.backend {
            Backend::Dense { lu, .. } => (solver::dense_solve(lu, v), 1),
            Backend::Band(lu) => (lu.solve(v), 1),
            Backend::Iterative { pre, .. } => {
                let out = solver::gmres(
                    |x| self.system.apply_matrix(self.z, x),
                    |x| pre.apply(x),
                    v,
                    cfg.tol,
                    cfg.restart,
                    cfg.max_iterations,
                );
                (out.x, out.iterations)
            }
        };
        self.finish(v, w, its, false)
    }

    /// `w = R(z)^* v`
    pub fn solve_adjoint(&self, v: &[C64]) -> Result<(Vec<C64>, SolveReport)> {
        self.check_len(v)?;
        let cfg = &self.system.config;
        let (w, its) = match &self.backend {
            Backend::Dense { adjoint, matrix, .. } => {
                if adjoint.get().is_none() {
                    let lu = solver::dense_adjoint(matrix).lu();
                    if !lu.is_invertible() {
                        return Err(LabError::Solver { residual: f64::INFINITY, iterations: 0 });
                    }
                    let _ = adjoint.set(lu);
                }
                (solver::dense_solve(adjoint.get().expect("set above"), v), 1)
            }
            Backend::Band(lu) => (lu.solve_adjoint(v), 1),
            Backend::Iterative { pre_adjoint, .. } => {
                let out = solver::gmres(
                    |x| self.system.apply_matrix_adjoint(self.z, x),
                    |x| pre_adjoint.apply(x),
                    v,
                    cfg.tol,
                    cfg.restart,
                    cfg.max_iterations,
                );
                (out.x, out.iterations)
            }
        };
        self.finish(v, w, its, true)
    }

    fn check_len(&self, v: &[C64]) -> Result<()> {
        if v.len() != self.system.dim() {
            return input(format!("vector of length {} for a system of size {}", v.len(), self.system.dim()));
        }
        if v.iter().any(|x| !x.re.is_finite() || !x.im.is_finite()) {
            return input("non-finite right-hand side");
        }
        Ok(())
    }

    fn times_a(&self, x: &[C64]) -> Vec<C64> {
        x.iter().zip(&self.system.absorption).map(|(v, &a)| v * a).collect()
    }

    /// `sum_terms coeff z^k R a^{j_1} R ... a^{j_m} R v`; intermediate products
    /// are shared between terms with a common word suffix.
    pub fn apply_composite(&self, expansion: &TermExpansion, v: &[C64]) -> Result<Vec<C64>> {
        let mut cache: HashMap<Vec<u8>, Vec<C64>> = HashMap::new();
        let base = self.solve(v)?.0;
        cache.insert(Vec::new(), base);
        let mut out = vec![C64::default(); v.len()];
        for t in &expansion.terms {
            let m = t.m();
            for q in (0..m).rev() {
                let key = t.word[q..].to_vec();
                if cache.contains_key(&key) {
                    continue;
                }
                let prev = &cache[&t.word[q + 1..]];
                let rhs = if t.word[q] == 1 { self.times_a(prev) } else { prev.clone() };
                let next = self.solve(&rhs)?.0;
                cache.insert(key, next);
            }
            let c = t.coeff.to_complex() * self.z.powu(t.k);
            for (o, x) in out.iter_mut().zip(&cache[&t.word[..]]) {
                *o += c * x;
            }
        }
        Ok(out)
    }

    /// Adjoint of [`Self::apply_composite`]: words are read left to right with
    /// `R^*` and conjugated scalars.
    pub fn apply_composite_adjoint(&self, expansion: &TermExpansion, v: &[C64]) -> Result<Vec<C64>> {
        let mut cache: HashMap<Vec<u8>, Vec<C64>> = HashMap::new();
        cache.insert(Vec::new(), self.solve_adjoint(v)?.0);
        let mut out = vec![C64::default(); v.len()];
        for t in &expansion.terms {
            let m = t.m();
            for q in 1..=m {
                let key = t.word[..q].to_vec();
                if cache.contains_key(&key) {
                    continue;
                }
                let prev = &cache[&t.word[..q - 1]];
                let rhs = if t.word[q - 1] == 1 { self.times_a(prev) } else { prev.clone() };
                let next = self.solve_adjoint(&rhs)?.0;
                cache.insert(key, next);
            }
            let c = (t.coeff.to_complex() * self.z.powu(t.k)).conj();
            for (o, x) in out.iter_mut().zip(&cache[&t.word[..]]) {
                *o += c * x;
            }
        }
        Ok(out)
    }

    /// Worst residual, total iterations and solve count so far.
    pub fn stats(&self) -> (f64, usize, usize) {
        (self.max_residual.get(), self.iterations.get(), self.solves.get())
    }
}

/// One-shot `R(z) v`.
pub fn apply_resolvent(system: &ResolventSystem, z: C64, v: &[C64]) -> Result<(Vec<C64>, SolveReport)> {
    system.at(z)?.solve(v)
}

pub fn apply_derivative_composite(
    system: &ResolventSystem,
    expansion: &TermExpansion,
    z: C64,
    v: &[C64],
) -> Result<Vec<C64>> {
    system.at(z)?.apply_composite(expansion, v)
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::discretize::{assemble_absorption, assemble_h0, assemble_sponge, SpongeSpec};
    use crate::medium::MediumSpec;
    use crate::sparse::dot;
    use nalgebra::DVector;
    use rand::{Rng, SeedableRng};
    use rand_chacha::ChaCha8Rng;

    fn system(m: &MediumSpec, g: &Grid, sponge: bool, cfg: SolverConfig) -> ResolventSystem {
        let h0 = assemble_h0(m, g).unwrap();
        let a = assemble_absorption(m, g).unwrap();
        let s = sponge.then(|| assemble_sponge(&SpongeSpec::default_for(g), g).unwrap());
        ResolventSystem::new(&h0, &a, s.as_ref(), cfg).unwrap()
    }

    fn random_vec(n: usize, rng: &mut ChaCha8Rng) -> Vec<C64> {
        (0..n).map(|_| C64::new(rng.random_range(-1.0..1.0), rng.random_range(-1.0..1.0))).collect()
    }

    fn rel(a: &[C64], b: &[C64]) -> f64 {
        let d: Vec<C64> = a.iter().zip(b).map(|(x, y)| x - y).collect();
        norm2(&d) / norm2(b)
    }

    #[test]
    fn eigenvector_is_scaled() {
        let g = Grid::new(1, 3.0, 12).unwrap();
        let sys = system(&MediumSpec::free(1), &g, false, SolverConfig::default());
        let k = 3.0;
        let phi: Vec<C64> = (0..12).map(|i| C64::new((std::f64::consts::PI * k * (i + 1) as f64 / 13.0).sin(), 0.0)).collect();
        let lam = (2.0 - 2.0 * (std::f64::consts::PI * k / 13.0).cos()) / (g.h * g.h);
        let (w, rep) = apply_resolvent(&sys, C64::new(0.0, 1.0), &phi).unwrap();
        let want: Vec<C64> = phi.iter().map(|p| p / (lam + 1.0)).collect();
        assert!(rel(&w, &want) < 1e-12);
        assert_eq!(rep.method, Method::DenseDirect);
    }

    #[test]
    fn matches_dense_lu_oracle() {
        let g = Grid::new(1, 3.0, 12).unwrap();
        let m = MediumSpec::damped_free(1, 1.0, 1.0).unwrap();
        let sys = system(&m, &g, false, SolverConfig::default());
        let mut rng = ChaCha8Rng::seed_from_u64(5);
        let v = random_vec(12, &mut rng);
        let z = C64::new(0.5, 0.5);
        let (w, _) = apply_resolvent(&sys, z, &v).unwrap();
        let dense = sys.matrix(z).to_dense();
        let want = dense.lu().solve(&DVector::from_column_slice(&v)).unwrap();
        for (a, b) in w.iter().zip(want.iter()) {
            assert!((a - b).norm() <= 1e-9);
        }
    }

    #[test]
    fn all_backends_agree() {
        let g = Grid::new(2, 4.0, 20).unwrap();
        let m = MediumSpec::damped_free(2, 1.0, 1.0).unwrap();
        let mut rng = ChaCha8Rng::seed_from_u64(8);
        let v = random_vec(g.len(), &mut rng);
        let z = C64::new(1.3, 0.2);
        let mut sols = Vec::new();
        let mut adjs = Vec::new();
        for method in [Method::DenseDirect, Method::SparseDirect, Method::Iterative] {
            let cfg = SolverConfig { force: Some(method), tol: 1e-11, ..Default::default() };
            for sponge in [false, true] {
                let sys = system(&m, &g, sponge, cfg);
                let r = sys.at(z).unwrap();
                sols.push((sponge, r.solve(&v).unwrap().0));
                adjs.push((sponge, r.solve_adjoint(&v).unwrap().0));
            }
        }
        for list in [&sols, &adjs] {
            for (s, x) in list.iter() {
                let reference = &list.iter().find(|(t, _)| t == s).unwrap().1;
                assert!(rel(x, reference) < 1e-9);
            }
        }
    }

    #[test]
    fn reflected_frequency_is_adjoint_without_sponge() {
        let g = Grid::new(1, 3.0, 12).unwrap();
        let sys = system(&MediumSpec::damped_free(1, 1.0, 1.0).unwrap(), &g, false, SolverConfig::default());
        let mut rng = ChaCha8Rng::seed_from_u64(21);
        for _ in 0..20 {
            let z = C64::new(rng.random_range(-3.0..3.0), rng.random_range(0.05..2.0));
            let u = random_vec(12, &mut rng);
            let v = random_vec(12, &mut rng);
            // <R(-zbar) u, v> = <u, R(z) v>, with dot conjugate-linear in its first slot
            let lhs = dot(&v, &apply_resolvent(&sys, -z.conj(), &u).unwrap().0);
            let rhs = dot(&apply_resolvent(&sys, z, &v).unwrap().0, &u);
            assert!((lhs - rhs).norm() <= 1e-9 * (1.0 + lhs.norm()), "{z}");
        }
    }

    #[test]
    fn rejects_lower_half_plane() {
        let g = Grid::new(1, 3.0, 5).unwrap();
        let sys = system(&MediumSpec::free(1), &g, false, SolverConfig::default());
        assert!(sys.at(C64::new(1.0, 0.0)).is_err());
        assert!(sys.at(C64::new(1.0, -0.1)).is_err());
    }

    #[test]
    fn order_zero_composite_is_the_resolvent() {
        let g = Grid::new(1, 3.0, 12).unwrap();
        let sys = system(&MediumSpec::damped_free(1, 1.0, 1.0).unwrap(), &g, false, SolverConfig::default());
        let mut rng = ChaCha8Rng::seed_from_u64(1);
        let v = random_vec(12, &mut rng);
        let z = C64::new(0.7, 0.3);
        let a = apply_derivative_composite(&sys, &derivative_terms(0).unwrap(), z, &v).unwrap();
        let b = apply_resolvent(&sys, z, &v).unwrap().0;
        assert_eq!(a, b);
    }

    #[test]
    fn composites_match_finite_differences() {
        let g = Grid::new(1, 4.0, 24).unwrap();
        let sys = system(&MediumSpec::damped_free(1, 1.0, 1.0).unwrap(), &g, false, SolverConfig::default());
        let mut rng = ChaCha8Rng::seed_from_u64(2);
        let v = random_vec(g.len(), &mut rng);
        let z = C64::new(0.8, 0.4);
        let dz = 1e-4;
        let vn = norm2(&v);
        for n in 1..=3 {
            let lower = derivative_terms(n - 1).unwrap();
            let at = |s: f64| apply_derivative_composite(&sys, &lower, z + s, &v).unwrap();
            let (p, m) = (at(dz), at(-dz));
            let fd: Vec<C64> = p.iter().zip(&m).map(|(a, b)| (a - b) / (2.0 * dz)).collect();
            let exact = apply_derivative_composite(&sys, &derivative_terms(n).unwrap(), z, &v).unwrap();
            let err: Vec<C64> = fd.iter().zip(&exact).map(|(a, b)| a - b).collect();
            assert!(norm2(&err) <= 1e-5 * vn.max(norm2(&exact)), "n={n} {}", norm2(&err));
        }
        // second derivative against the second central difference of R
        let r = |s: f64| apply_resolvent(&sys, z + s, &v).unwrap().0;
        let h = 1e-3;
        let (p, c, m) = (r(h), r(0.0), r(-h));
        let fd2: Vec<C64> = (0..v.len()).map(|i| (p[i] - 2.0 * c[i] + m[i]) / (h * h)).collect();
        let exact = apply_derivative_composite(&sys, &derivative_terms(2).unwrap(), z, &v).unwrap();
        assert!(rel(&fd2, &exact) <= 1e-3);
    }

    #[test]
    fn composite_adjoint_is_the_adjoint() {
        let g = Grid::new(2, 3.0, 8).unwrap();
        let sys = system(&MediumSpec::damped_free(2, 1.0, 1.0).unwrap(), &g, true, SolverConfig::default());
        let mut rng = ChaCha8Rng::seed_from_u64(4);
        let z = C64::new(-0.6, 0.3);
        let r = sys.at(z).unwrap();
        for n in 0..=3 {
            let e = derivative_terms(n).unwrap();
            let u = random_vec(g.len(), &mut rng);
            let v = random_vec(g.len(), &mut rng);
            let lhs = dot(&v, &r.apply_composite(&e, &u).unwrap());
            let rhs = dot(&r.apply_composite_adjoint(&e, &v).unwrap(), &u);
            assert!((lhs - rhs).norm() <= 1e-10 * lhs.norm().max(1.0));
        }
    }
}
