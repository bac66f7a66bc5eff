//! Linear solvers for `M(z) = H - i z a - z^2`.

use std::sync::Arc;

use nalgebra::{DMatrix, DVector};
use rustfft::{Fft, FftPlanner};

use crate::discretize::Grid;
use crate::error::{LabError, Result};
use crate::sparse::{axpy, dot, norm2, CsrMatrix, C64};

#[derive(Clone, Copy, Debug, PartialEq, Eq)]
pub enum Method {
    DenseDirect,
    SparseDirect,
    Iterative,
}

impl Method {
    pub fn as_str(&self) -> &'static str {
        match self {
            Method::DenseDirect => "dense-direct",
            Method::SparseDirect => "sparse-direct",
            Method::Iterative => "iterative",
        }
    }
}

#[derive(Clone, Copy, Debug, PartialEq)]
pub struct SolveReport {
    pub residual: f64,
    pub iterations: usize,
    pub method: Method,
}

#[derive(Clone, Copy, Debug, PartialEq)]
pub struct SolverConfig {
    /// Relative residual accepted from any backend.
    pub tol: f64,
    pub max_iterations: usize,
    pub restart: usize,
    /// Largest system solved by dense LU.
    pub dense_limit: usize,
    /// Largest band storage (complex entries) for the banded LU.
    pub band_budget: usize,
    /// Imaginary part of the preconditioner shift relative to `|z^2|`.
    pub shift_beta: f64,
    pub force: Option<Method>,
}

impl Default for SolverConfig {
    fn default() -> Self {
        Self {
            tol: 1e-9,
            max_iterations: 4000,
            restart: 80,
            dense_limit: 1024,
            band_budget: 40_000_000,
            shift_beta: 0.5,
            force: None,
        }
    }
}

impl SolverConfig {
    pub fn choose(&self, n: usize, bandwidth: usize) -> Method {
        if let Some(m) = self.force {
            return m;
        }
        if n <= self.dense_limit {
            Method::DenseDirect
        } else if n.saturating_mul(2 * bandwidth + 1) <= self.band_budget {
            Method::SparseDirect
        } else {
            Method::Iterative
        }
    }
}

/// LU without pivoting in band storage. Row `i` keeps columns `i-b ..= i+b`.
pub(crate) struct BandLu {
    n: usize,
    b: usize,
    w: usize,
    data: Vec<C64>,
}

impl BandLu {
    pub(crate) fn factor(m: &CsrMatrix<C64>) -> Result<Self> {
        let n = m.dim();
        let b = m.bandwidth();
        let w = 2 * b + 1;
        let mut data = vec![C64::default(); n * w];
        for (r, c, v) in m.triplets() {
            data[r * w + (c + b - r)] += v;
        }
        let scale = data.iter().map(|v| v.norm()).fold(0.0, f64::max);
        for k in 0..n {
            let pivot = data[k * w + b];
            if !(pivot.norm() > 1e-14 * scale) {
                return Err(LabError::Solver { residual: f64::INFINITY, iterations: k });
            }
            let inv = 1.0 / pivot;
            let last = (k + b).min(n - 1);
            let (head, tail) = data.split_at_mut((k + 1) * w);
            let urow = &head[k * w + b + 1..k * w + b + 1 + (last - k)];
            for i in k + 1..=last {
                let row = &mut tail[(i - k - 1) * w..(i - k) * w];
                // column k sits at offset k + b - i
                let off = k + b - i;
                let l = row[off] * inv;
                row[off] = l;
                for (dst, &u) in row[off + 1..off + 1 + (last - k)].iter_mut().zip(urow) {
                    *dst -= l * u;
                }
            }
        }
        Ok(Self { n, b, w, data })
    }

    fn at(&self, r: usize, c: usize) -> C64 {
        self.data[r * self.w + (c + self.b - r)]
    }

    pub(crate) fn solve(&self, v: &[C64]) -> Vec<C64> {
        let (n, b) = (self.n, self.b);
        let mut y = v.to_vec();
        for i in 0..n {
            let lo = i.saturating_sub(b);
            let mut s = y[i];
            for j in lo..i {
                s -= self.at(i, j) * y[j];
            }
            y[i] = s;
        }
        for i in (0..n).rev() {
            let hi = (i + b).min(n - 1);
            let mut s = y[i];
            for j in i + 1..=hi {
                s -= self.at(i, j) * y[j];
            }
            y[i] = s / self.at(i, i);
        }
        y
    }

    /// Solves `M^H w = v` with `M^H = U^H L^H`.
    pub(crate) fn solve_adjoint(&self, v: &[C64]) -> Vec<C64> {
        let (n, b) = (self.n, self.b);
        let mut y = v.to_vec();
        for j in 0..n {
            y[j] /= self.at(j, j).conj();
            let yj = y[j];
            for i in j + 1..=(j + b).min(n - 1) {
                y[i] -= self.at(j, i).conj() * yj;
            }
        }
        for j in (0..n).rev() {
            let wj = y[j];
            for i in j.saturating_sub(b)..j {
                y[i] -= self.at(j, i).conj() * wj;
            }
        }
        y
    }
}

/// `(T - s)^{-1}` with `T` the free Dirichlet Laplacian on the grid, applied
/// through sine transforms along each axis.
pub(crate) struct ShiftedLaplacian {
    grid: Grid,
    shift: C64,
    eig: Vec<f64>,
    fft: Arc<dyn Fft<f64>>,
}

impl ShiftedLaplacian {
    pub(crate) fn new(grid: &Grid, shift: C64) -> Self {
        let n = grid.n;
        let eig = (1..=n)
            .map(|k| (2.0 - 2.0 * (std::f64::consts::PI * k as f64 / (n as f64 + 1.0)).cos()) / (grid.h * grid.h))
            .collect();
        let fft = FftPlanner::new().plan_fft_forward(2 * (n + 1));
        Self { grid: *grid, shift, eig, fft }
    }

    pub(crate) fn adjoint(&self) -> Self {
        Self { grid: self.grid, shift: self.shift.conj(), eig: self.eig.clone(), fft: self.fft.clone() }
    }

    /// Unnormalised DST-I along every axis.
    fn dst_all(&self, x: &mut [C64]) {
        let n = self.grid.n;
        let mut buf = vec![C64::default(); 2 * (n + 1)];
        let mut scratch = vec![C64::default(); self.fft.get_inplace_scratch_len()];
        let half_i = C64::new(0.0, 0.5);
        for axis in 0..self.grid.dim {
            let stride = self.grid.stride(axis);
            let lines = self.grid.len() / n;
            for line in 0..lines {
                let start = (line / stride) * stride * n + line % stride;
                buf[0] = C64::default();
                buf[n + 1] = C64::default();
                for j in 0..n {
                    let v = x[start + j * stride];
                    buf[j + 1] = v;
                    buf[2 * n + 1 - j] = -v;
                }
                self.fft.process_with_scratch(&mut buf, &mut scratch);
                for k in 0..n {
                    x[start + k * stride] = buf[k + 1] * half_i;
                }
            }
        }
    }

    pub(crate) fn apply(&self, r: &[C64]) -> Vec<C64> {
        let mut x = r.to_vec();
        self.dst_all(&mut x);
        let norm = (2.0 / (self.grid.n as f64 + 1.0)).powi(self.grid.dim as i32);
        for (idx, v) in x.iter_mut().enumerate() {
            let mi = self.grid.multi_index(idx);
            let lam: f64 = (0..self.grid.dim).map(|j| self.eig[mi[j]]).sum();
            *v *= norm / (lam - self.shift);
        }
        self.dst_all(&mut x);
        x
    }
}

pub(crate) struct GmresOutcome {
    pub x: Vec<C64>,
    pub iterations: usize,
    #[allow(dead_code)]
    pub residual: f64,
}

/// Right-preconditioned restarted GMRES from a zero initial guess.
pub(crate) fn gmres(
    apply: impl Fn(&[C64]) -> Vec<C64>,
    precond: impl Fn(&[C64]) -> Vec<C64>,
    b: &[C64],
    tol: f64,
    restart: usize,
    max_iterations: usize,
) -> GmresOutcome {
    let n = b.len();
    let bnorm = norm2(b);
    let mut x = vec![C64::default(); n];
    if bnorm == 0.0 {
        return GmresOutcome { x, iterations: 0, residual: 0.0 };
    }
    let mut r = b.to_vec();
    let mut beta = bnorm;
    let mut total = 0;
    let m = restart.max(1);
    loop {
        let mut basis: Vec<Vec<C64>> = Vec::with_capacity(m + 1);
        basis.push(r.iter().map(|v| v / beta).collect());
        let mut hess = vec![vec![C64::default(); m]; m + 1];
        let mut cs = vec![0.0f64; m];
        let mut sn = vec![C64::default(); m];
        let mut g = vec![C64::default(); m + 1];
        g[0] = C64::new(beta, 0.0);
        let mut cols = 0;
        for j in 0..m {
            let mut w = apply(&precond(&basis[j]));
            for (i, vi) in basis.iter().enumerate() {
                let hij = dot(vi, &w);
                hess[i][j] = hij;
                axpy(-hij, vi, &mut w);
            }
            let hn = norm2(&w);
            hess[j + 1][j] = C64::new(hn, 0.0);
            for i in 0..j {
                let (a, b2) = (hess[i][j], hess[i + 1][j]);
                hess[i][j] = cs[i] * a + sn[i] * b2;
                hess[i + 1][j] = -sn[i].conj() * a + cs[i] * b2;
            }
            let (a, b2) = (hess[j][j], hess[j + 1][j]);
            let rho = (a.norm_sqr() + b2.norm_sqr()).sqrt();
            if a.norm() == 0.0 {
                cs[j] = 0.0;
                sn[j] = C64::new(1.0, 0.0);
            } else {
                cs[j] = a.norm() / rho;
                sn[j] = (a / a.norm()) * b2.conj() / rho;
            }
            hess[j][j] = cs[j] * a + sn[j] * b2;
            hess[j + 1][j] = C64::default();
            let gj = g[j];
            g[j] = cs[j] * gj;
            g[j + 1] = -sn[j].conj() * gj;
            cols = j + 1;
            total += 1;
            if g[j + 1].norm() <= tol * bnorm || total >= max_iterations || hn == 0.0 {
                break;
            }
            basis.push(w.iter().map(|v| v / hn).collect());
        }
        let mut y = vec![C64::default(); cols];
        for i in (0..cols).rev() {
            let mut s = g[i];
            for k in i + 1..cols {
                s -= hess[i][k] * y[k];
            }
            y[i] = s / hess[i][i];
        }
        let mut update = vec![C64::default(); n];
        for (yi, vi) in y.iter().zip(&basis) {
            axpy(*yi, vi, &mut update);
        }
        let dx = precond(&update);
        axpy(C64::new(1.0, 0.0), &dx, &mut x);
        let ax = apply(&x);
        r = b.iter().zip(&ax).map(|(bi, ai)| bi - ai).collect();
        beta = norm2(&r);
        if beta <= tol * bnorm || total >= max_iterations {
            return GmresOutcome { x, iterations: total, residual: beta / bnorm };
        }
    }
}

pub(crate) fn dense_lu(m: &CsrMatrix<C64>) -> Result<nalgebra::LU<C64, nalgebra::Dyn, nalgebra::Dyn>> {
    let lu = m.to_dense().lu();
    if !lu.is_invertible() {
        return Err(LabError::Solver { residual: f64::INFINITY, iterations: 0 });
    }
    Ok(lu)
}

pub(crate) fn dense_solve(lu: &nalgebra::LU<C64, nalgebra::Dyn, nalgebra::Dyn>, v: &[C64]) -> Vec<C64> {
    lu.solve(&DVector::from_column_slice(v))
        .map(|x| x.as_slice().to_vec())
        .unwrap_or_else(|| vec![C64::new(f64::NAN, 0.0); v.len()])
}

pub(crate) fn dense_adjoint(m: &CsrMatrix<C64>) -> DMatrix<C64> {
    m.to_dense().adjoint()
}
