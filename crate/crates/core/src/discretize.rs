//! Tensor-grid operators on `(-L, L)^d` with Dirichlet boundary.

use std::io::Write;

use num_complex::Complex64;

use crate::error::{input, LabError, Result};
use crate::medium::{japanese, MediumSpec, MetricDensitySpec, MetricTensor, MAX_DIM};
use crate::sparse::{norm2, CsrMatrix, C64};

#[derive(Clone, Copy, Debug, PartialEq)]
pub struct Grid {
    pub dim: usize,
    pub half_width: f64,
    pub n: usize,
    pub h: f64,
}

impl Grid {
    pub fn new(dim: usize, half_width: f64, n: usize) -> Result<Self> {
        if dim == 0 || dim > MAX_DIM {
            return input(format!("dimension {dim} not in 1..={MAX_DIM}"));
        }
        if !(half_width > 0.0) || !half_width.is_finite() {
            return input("half width must be positive");
        }
        if n < 3 {
            return input(format!("need at least 3 points per axis, got {n}"));
        }
        if n.checked_pow(dim as u32).is_none_or(|s| s > 50_000_000) {
            return input("grid too large");
        }
        Ok(Self { dim, half_width, n, h: 2.0 * half_width / (n as f64 + 1.0) })
    }

    /// Grid with the given spacing: `L = h (N + 1) / 2`.
    pub fn with_spacing(dim: usize, n: usize, h: f64) -> Result<Self> {
        Self::new(dim, 0.5 * h * (n as f64 + 1.0), n)
    }

    pub fn len(&self) -> usize {
        self.n.pow(self.dim as u32)
    }

    pub fn is_empty(&self) -> bool {
        false
    }

    /// Coordinate of node `i` along any axis.
    pub fn coord(&self, i: usize) -> f64 {
        -self.half_width + (i as f64 + 1.0) * self.h
    }

    /// Axis 0 varies fastest.
    pub fn multi_index(&self, mut idx: usize) -> [usize; MAX_DIM] {
        let mut out = [0; MAX_DIM];
        for o in out.iter_mut().take(self.dim) {
            *o = idx % self.n;
            idx /= self.n;
        }
        out
    }

    pub fn linear_index(&self, mi: &[usize]) -> usize {
        mi[..self.dim].iter().rev().fold(0, |acc, &i| acc * self.n + i)
    }

    pub fn stride(&self, axis: usize) -> usize {
        self.n.pow(axis as u32)
    }

    pub fn point(&self, idx: usize) -> Vec<f64> {
        let mi = self.multi_index(idx);
        (0..self.dim).map(|j| self.coord(mi[j])).collect()
    }

    pub fn points(&self) -> impl Iterator<Item = Vec<f64>> + '_ {
        (0..self.len()).map(|i| self.point(i))
    }

    /// `h^d`
    pub fn cell_volume(&self) -> f64 {
        self.h.powi(self.dim as i32)
    }

    pub fn sample<F: Fn(&[f64]) -> f64>(&self, f: F) -> Vec<f64> {
        self.points().map(|x| f(&x)).collect()
    }

    pub fn sample_complex<F: Fn(&[f64]) -> f64>(&self, f: F) -> Vec<C64> {
        self.points().map(|x| C64::new(f(&x), 0.0)).collect()
    }

    pub fn contains(&self, x: &[f64]) -> bool {
        x.iter().all(|v| v.abs() < self.half_width)
    }
}

#[derive(Clone, Copy, Debug, PartialEq)]
pub enum Role {
    H0,
    LaplaceBeltrami,
    Absorption,
    Weight(f64),
    DilationGenerator,
    Derivative(usize),
    Sponge,
}

#[derive(Clone, Debug)]
pub struct DiscreteOperator {
    pub matrix: CsrMatrix<C64>,
    pub role: Role,
    pub grid: Grid,
    pub hermitian_flag: bool,
}

impl DiscreteOperator {
    pub fn apply(&self, u: &[C64]) -> Vec<C64> {
        self.matrix.mul_vec(u)
    }

    /// Diagonal entries; meaningful for the diagonal roles.
    pub fn diagonal(&self) -> Vec<C64> {
        (0..self.matrix.dim()).map(|i| self.matrix.get(i, i)).collect()
    }

    pub fn write_triplets<W: Write>(&self, out: W) -> std::io::Result<()> {
        self.matrix.write_triplets(out)
    }
}

fn real(v: f64) -> C64 {
    C64::new(v, 0.0)
}

/// Stiffness matrix `K` of the quadratic form
///
/// `h^d sum_cells 2^{-d} sum_corners grad_v u . C(x_cell) grad_v u`
///
/// over the `(N+1)^d` cells whose corners are nodes or zero ghost nodes, with
/// `grad_v` the edge differences through corner `v`. `K` is normalised so that
/// the form equals `h^d <K u, u>`.
fn stiffness(grid: &Grid, coeff: impl Fn(&[f64]) -> MetricTensor) -> Result<CsrMatrix<C64>> {
    let d = grid.dim;
    let n = grid.n;
    let h = grid.h;
    let ncell = (n + 1).pow(d as u32);
    let corners = 1usize << d;
    let corner_weight = 1.0 / corners as f64;
    // weight of the edge leaving node `i` in the positive direction along `axis`,
    // indexed over the extended node range -1..N, stored with offset 1
    let ext = n + 2;
    let mut edge_w = vec![vec![0.0f64; ext.pow(d as u32)]; d];
    let ext_index = |mi: &[isize]| -> usize {
        mi[..d].iter().rev().fold(0usize, |acc, &i| acc * ext + (i + 1) as usize)
    };
    let mut cross: Vec<(usize, usize, C64)> = Vec::new();
    let node = |mi: &[isize]| -> Option<usize> {
        if mi[..d].iter().all(|&i| i >= 0 && (i as usize) < n) {
            Some(mi[..d].iter().rev().fold(0usize, |acc, &i| acc * n + i as usize))
        } else {
            None
        }
    };

    let mut center = vec![0.0; d];
    let mut cell = [0usize; MAX_DIM];
    for _ in 0..ncell {
        for j in 0..d {
            center[j] = -grid.half_width + (cell[j] as f64 + 0.5) * h;
        }
        let g = coeff(&center);
        let (lo, _) = g.eig_bounds();
        if !(lo > 0.0) || !lo.is_finite() {
            return Err(LabError::Assembly(format!(
                "coefficient not positive definite at {center:?} (min eigenvalue {lo})"
            )));
        }
        // each cell edge along j is shared by the two corners on it
        for j in 0..d {
            let gjj = g.get(j, j) * 2.0 * corner_weight;
            for s in 0..corners {
                if s & (1 << j) != 0 {
                    continue;
                }
                let mut mi = [0isize; MAX_DIM];
                for k in 0..d {
                    mi[k] = cell[k] as isize - 1 + ((s >> k) & 1) as isize;
                }
                edge_w[j][ext_index(&mi)] += gjj;
            }
        }
        if !g.is_diagonal() {
            for s in 0..corners {
                // gradient at corner s: component j is the edge difference
                let mut ends = [[None, None]; MAX_DIM];
                for (j, e) in ends.iter_mut().enumerate().take(d) {
                    let mut lo = [0isize; MAX_DIM];
                    for k in 0..d {
                        lo[k] = cell[k] as isize - 1 + ((s >> k) & 1) as isize;
                    }
                    lo[j] = cell[j] as isize - 1;
                    let mut hi = lo;
                    hi[j] += 1;
                    *e = [node(&hi), node(&lo)];
                }
                for j in 0..d {
                    for k in 0..d {
                        if j == k || g.get(j, k) == 0.0 {
                            continue;
                        }
                        let c = g.get(j, k) * corner_weight / (h * h);
                        for (a, sa) in ends[j].iter().zip([1.0, -1.0]) {
                            for (b, sb) in ends[k].iter().zip([1.0, -1.0]) {
                                if let (Some(a), Some(b)) = (a, b) {
                                    cross.push((*a, *b, real(c * sa * sb)));
                                }
                            }
                        }
                    }
                }
            }
        }
        for j in 0..d {
            cell[j] += 1;
            if cell[j] <= n {
                break;
            }
            cell[j] = 0;
        }
    }

    let inv_h2 = 1.0 / (h * h);
    let mut trip: Vec<(usize, usize, C64)> = Vec::with_capacity(grid.len() * (2 * d + 1) + cross.len());
    for idx in 0..grid.len() {
        let mi = grid.multi_index(idx);
        let mut emi = [0isize; MAX_DIM];
        for j in 0..d {
            emi[j] = mi[j] as isize;
        }
        let mut diag = 0.0;
        for j in 0..d {
            let fwd = edge_w[j][ext_index(&emi)];
            let mut back_mi = emi;
            back_mi[j] -= 1;
            let back = edge_w[j][ext_index(&back_mi)];
            diag += fwd + back;
            let s = grid.stride(j);
            if mi[j] + 1 < n {
                trip.push((idx, idx + s, real(-fwd * inv_h2)));
            }
            if mi[j] > 0 {
                trip.push((idx, idx - s, real(-back * inv_h2)));
            }
        }
        trip.push((idx, idx, real(diag * inv_h2)));
    }
    trip.extend(cross);
    let k = CsrMatrix::from_triplets(grid.len(), &trip)?;
    // cross terms are summed in different orders for (a,b) and (b,a)
    let sym: Vec<_> = k.triplets().map(|(r, c, v)| (r, c, 0.5 * (v + k.get(c, r)))).collect();
    CsrMatrix::from_triplets(grid.len(), &sym)
}

pub fn assemble_h0(m: &MediumSpec, grid: &Grid) -> Result<DiscreteOperator> {
    check_dims(m, grid)?;
    let matrix = stiffness(grid, |x| m.metric_at(x))?;
    Ok(DiscreteOperator { matrix, role: Role::H0, grid: *grid, hermitian_flag: true })
}

/// `-Delta_g = -|g|^{-1} d_j (|g| g^{jk} d_k)` with `g^{jk}` the base metric.
/// Self-adjoint for `<u, v>_g = h^d sum |g_i| u_i conj(v_i)`.
pub fn assemble_laplace_beltrami(m: &MetricDensitySpec, grid: &Grid) -> Result<DiscreteOperator> {
    check_dims(&m.base, grid)?;
    let mut dens = Vec::with_capacity(grid.len());
    for x in grid.points() {
        let v = m.density_at(&x);
        if !(v > 0.0) || !v.is_finite() {
            return Err(LabError::Assembly(format!("density {v} not positive at {x:?}")));
        }
        dens.push(v);
    }
    let k = stiffness(grid, |x| {
        let g = m.base.metric_at(x);
        let s = m.density_at(x);
        MetricTensor::from_fn(grid.dim, |j, l| s * g.get(j, l))
    })?;
    let trip: Vec<_> = k.triplets().map(|(r, c, v)| (r, c, v / dens[r])).collect();
    let matrix = CsrMatrix::from_triplets(grid.len(), &trip)?;
    Ok(DiscreteOperator { matrix, role: Role::LaplaceBeltrami, grid: *grid, hermitian_flag: false })
}

/// `h^d sum |g_i| u_i conj(v_i)`
pub fn density_inner(m: &MetricDensitySpec, grid: &Grid, u: &[C64], v: &[C64]) -> C64 {
    let s: C64 = grid.points().zip(u.iter().zip(v)).map(|(x, (a, b))| m.density_at(&x) * a * b.conj()).sum();
    s * grid.cell_volume()
}

pub fn assemble_absorption(m: &MediumSpec, grid: &Grid) -> Result<DiscreteOperator> {
    check_dims(m, grid)?;
    let diag: Vec<C64> = grid.points().map(|x| real(m.absorption_at(&x))).collect();
    Ok(DiscreteOperator {
        matrix: CsrMatrix::from_diagonal(&diag),
        role: Role::Absorption,
        grid: *grid,
        hermitian_flag: true,
    })
}

/// `diag(<x>^delta)`
pub fn assemble_weight(grid: &Grid, delta: f64) -> DiscreteOperator {
    let diag: Vec<C64> = grid.points().map(|x| real(japanese(&x).powf(delta))).collect();
    DiscreteOperator {
        matrix: CsrMatrix::from_diagonal(&diag),
        role: Role::Weight(delta),
        grid: *grid,
        hermitian_flag: true,
    }
}

/// Returns `(a, W(-delta), W(+delta))`; `W(-delta)` is the entrywise
/// reciprocal of `W(+delta)`.
pub fn assemble_absorption_and_weights(
    m: &MediumSpec,
    grid: &Grid,
    delta: f64,
) -> Result<(DiscreteOperator, DiscreteOperator, DiscreteOperator)> {
    let a = assemble_absorption(m, grid)?;
    let plus = assemble_weight(grid, delta);
    let minus = DiscreteOperator {
        matrix: plus.matrix.map(|v| real(1.0 / v.re)),
        role: Role::Weight(-delta),
        grid: *grid,
        hermitian_flag: true,
    };
    Ok((a, minus, plus))
}

/// Centred difference `(u_{i+1} - u_{i-1}) / 2h` along `axis`, zero ghosts.
pub fn assemble_derivative(grid: &Grid, axis: usize) -> Result<DiscreteOperator> {
    if axis >= grid.dim {
        return input(format!("axis {axis} out of range for a {}-d grid", grid.dim));
    }
    let c = 0.5 / grid.h;
    let s = grid.stride(axis);
    let mut trip = Vec::with_capacity(2 * grid.len());
    for idx in 0..grid.len() {
        let i = grid.multi_index(idx)[axis];
        if i + 1 < grid.n {
            trip.push((idx, idx + s, real(c)));
        }
        if i > 0 {
            trip.push((idx, idx - s, real(-c)));
        }
    }
    Ok(DiscreteOperator {
        matrix: CsrMatrix::from_triplets(grid.len(), &trip)?,
        role: Role::Derivative(axis),
        grid: *grid,
        hermitian_flag: false,
    })
}

/// `A = -(i/2) sum_j (X_j D_j + D_j X_j)`
pub fn assemble_dilation_generator(grid: &Grid) -> DiscreteOperator {
    let c = 0.25 / grid.h;
    let mut trip = Vec::with_capacity(2 * grid.dim * grid.len());
    for idx in 0..grid.len() {
        let mi = grid.multi_index(idx);
        for j in 0..grid.dim {
            let s = grid.stride(j);
            let x = grid.coord(mi[j]);
            if mi[j] + 1 < grid.n {
                let xn = grid.coord(mi[j] + 1);
                trip.push((idx, idx + s, C64::new(0.0, -c * (x + xn))));
            }
            if mi[j] > 0 {
                let xp = grid.coord(mi[j] - 1);
                trip.push((idx, idx - s, C64::new(0.0, c * (x + xp))));
            }
        }
    }
    DiscreteOperator {
        matrix: CsrMatrix::from_triplets(grid.len(), &trip).expect("indices in range"),
        role: Role::DilationGenerator,
        grid: *grid,
        hermitian_flag: true,
    }
}

/// `||([H, iA] - 2H) u|| / ||u||`
pub fn commutator_defect(h: &DiscreteOperator, a: &DiscreteOperator, u: &[C64]) -> f64 {
    let i = C64::new(0.0, 1.0);
    let hau = h.apply(&a.apply(u));
    let ahu = a.apply(&h.apply(u));
    let hu = h.apply(u);
    let r: Vec<C64> = (0..u.len()).map(|k| i * (hau[k] - ahu[k]) - 2.0 * hu[k]).collect();
    norm2(&r) / norm2(u)
}

#[derive(Clone, Debug)]
pub struct Dilated {
    pub values: Vec<C64>,
    /// Part of the input support was mapped outside the box.
    pub escaped: bool,
}

/// `x -> e^{d theta/2} u(e^theta x)` by tensor cubic Lagrange interpolation,
/// zero outside the box.
pub fn apply_dilation(u: &[C64], theta: f64, grid: &Grid) -> Result<Dilated> {
    if !(theta.abs() <= 3.0) {
        return input(format!("|theta| = {} exceeds 3", theta.abs()));
    }
    if u.len() != grid.len() {
        return input("grid function has the wrong length");
    }
    let d = grid.dim;
    let scale = theta.exp();
    let amp = (0.5 * d as f64 * theta).exp();

    let umax = u.iter().map(|v| v.norm()).fold(0.0, f64::max);
    let escaped = umax > 0.0
        && grid.points().zip(u).any(|(x, v)| {
            v.norm() > 1e-8 * umax && x.iter().any(|c| (c / scale).abs() >= grid.half_width)
        });

    let at = |mi: &[isize]| -> C64 {
        if mi[..d].iter().all(|&i| i >= 0 && (i as usize) < grid.n) {
            let idx = mi[..d].iter().rev().fold(0usize, |acc, &i| acc * grid.n + i as usize);
            u[idx]
        } else {
            C64::default()
        }
    };

    let mut values = Vec::with_capacity(grid.len());
    for y in grid.points() {
        // per axis: base index and the four Lagrange weights
        let mut base = [0isize; MAX_DIM];
        let mut w = [[0.0f64; 4]; MAX_DIM];
        for j in 0..d {
            let s = (scale * y[j] + grid.half_width) / grid.h - 1.0;
            let i0 = s.floor();
            let t = s - i0;
            base[j] = i0 as isize - 1;
            w[j] = lagrange4(t);
        }
        let mut acc = C64::default();
        let mut mi = [0isize; MAX_DIM];
        for flat in 0..4usize.pow(d as u32) {
            let mut weight = 1.0;
            let mut f = flat;
            for j in 0..d {
                let o = f % 4;
                f /= 4;
                mi[j] = base[j] + o as isize;
                weight *= w[j][o];
            }
            if weight != 0.0 {
                acc += at(&mi) * weight;
            }
        }
        values.push(acc * amp);
    }
    Ok(Dilated { values, escaped })
}

/// Cubic Lagrange weights on nodes -1, 0, 1, 2 at offset `t` in `[0, 1)`.
fn lagrange4(t: f64) -> [f64; 4] {
    [
        -t * (t - 1.0) * (t - 2.0) / 6.0,
        (t + 1.0) * (t - 1.0) * (t - 2.0) / 2.0,
        -(t + 1.0) * t * (t - 2.0) / 2.0,
        (t + 1.0) * t * (t - 1.0) / 6.0,
    ]
}

/// Discrete `L^p` norm `(h^d sum |u|^p)^{1/p}`.
pub fn lp_norm(u: &[C64], p: f64, grid: &Grid) -> f64 {
    (grid.cell_volume() * u.iter().map(|v| v.norm().powf(p)).sum::<f64>()).powf(1.0 / p)
}

#[derive(Clone, Copy, Debug, PartialEq)]
pub struct SpongeSpec {
    pub width: f64,
    pub strength: f64,
}

impl SpongeSpec {
    pub fn default_for(grid: &Grid) -> Self {
        Self { width: 0.25 * grid.half_width, strength: 1.0 }
    }

    /// Ramp in `[0, 1]`: zero inside the inner cube, quintic smoothstep across the shell.
    pub fn ramp(&self, x: &[f64], half_width: f64) -> f64 {
        let r = x.iter().fold(0.0f64, |m, v| m.max(v.abs()));
        let t = ((r - (half_width - self.width)) / self.width).clamp(0.0, 1.0);
        t * t * t * (t * (6.0 * t - 15.0) + 10.0)
    }
}

/// Diagonal `-i s ramp(x)`.
pub fn assemble_sponge(spec: &SpongeSpec, grid: &Grid) -> Result<DiscreteOperator> {
    if !(spec.width > 0.0) || spec.width >= grid.half_width {
        return input(format!("sponge width {} must lie in (0, L)", spec.width));
    }
    if !(spec.strength >= 0.0) {
        return input("sponge strength must be non-negative");
    }
    let diag: Vec<C64> = grid
        .points()
        .map(|x| C64::new(0.0, -spec.strength * spec.ramp(&x, grid.half_width)))
        .collect();
    Ok(DiscreteOperator {
        matrix: CsrMatrix::from_diagonal(&diag),
        role: Role::Sponge,
        grid: *grid,
        hermitian_flag: false,
    })
}

/// Isotropic Gaussian bump sampled on the grid.
pub fn gaussian(grid: &Grid, center: &[f64], width: f64, amplitude: f64) -> Vec<C64> {
    grid.sample_complex(|x| {
        let r2: f64 = x.iter().zip(center).map(|(a, b)| (a - b) * (a - b)).sum();
        amplitude * (-r2 / (width * width)).exp()
    })
}

fn check_dims(m: &MediumSpec, grid: &Grid) -> Result<()> {
    if m.dim != grid.dim {
        return input(format!("medium is {}-d but grid is {}-d", m.dim, grid.dim));
    }
    Ok(())
}

pub fn i() -> C64 {
    Complex64::new(0.0, 1.0)
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::medium::{builtin_media, MediumSpec};
    use crate::sparse::dot;
    use rand::{Rng, SeedableRng};
    use rand_chacha::ChaCha8Rng;
    use std::sync::Arc;

    fn random_vec(n: usize, rng: &mut ChaCha8Rng) -> Vec<C64> {
        (0..n).map(|_| C64::new(rng.random_range(-1.0..1.0), rng.random_range(-1.0..1.0))).collect()
    }

    #[test]
    fn textbook_stencil_in_one_dimension() {
        let g = Grid::with_spacing(1, 3, 1.0).unwrap();
        let h0 = assemble_h0(&MediumSpec::free(1), &g).unwrap();
        let dense = h0.matrix.to_dense();
        let want = [[2.0, -1.0, 0.0], [-1.0, 2.0, -1.0], [0.0, -1.0, 2.0]];
        for r in 0..3 {
            for c in 0..3 {
                assert_eq!(dense[(r, c)], real(want[r][c]));
            }
        }
    }

    #[test]
    fn free_eigenvalues_match_dirichlet_formula() {
        for (d, n) in [(1, 16), (2, 9)] {
            let g = Grid::new(d, 1.7, n).unwrap();
            let h0 = assemble_h0(&MediumSpec::free(d), &g).unwrap();
            let dense = h0.matrix.real_part().triplets().fold(
                nalgebra::DMatrix::<f64>::zeros(g.len(), g.len()),
                |mut m, (r, c, v)| {
                    m[(r, c)] += v;
                    m
                },
            );
            let mut ev: Vec<f64> = dense.symmetric_eigenvalues().iter().copied().collect();
            ev.sort_by(f64::total_cmp);
            let one: Vec<f64> = (1..=n)
                .map(|k| (2.0 - 2.0 * (std::f64::consts::PI * k as f64 / (n as f64 + 1.0)).cos()) / (g.h * g.h))
                .collect();
            let mut want = Vec::new();
            for idx in 0..g.len() {
                let mi = g.multi_index(idx);
                want.push((0..d).map(|j| one[mi[j]]).sum::<f64>());
            }
            want.sort_by(f64::total_cmp);
            for (a, b) in ev.iter().zip(&want) {
                assert!((a - b).abs() < 1e-10, "{a} vs {b}");
            }
        }
    }

    #[test]
    fn h0_is_hermitian_and_semidefinite_on_all_media() {
        let mut rng = ChaCha8Rng::seed_from_u64(7);
        for d in 1..=3 {
            let n = [20, 10, 6][d - 1];
            let g = Grid::new(d, 4.0, n).unwrap();
            for m in builtin_media(d) {
                let h0 = assemble_h0(&m, &g).unwrap();
                assert_eq!(h0.matrix.hermitian_deviation(), 0.0, "{}", m.name);
                let mut worst = f64::INFINITY;
                for _ in 0..100 {
                    let u = random_vec(g.len(), &mut rng);
                    let q = dot(&u, &h0.apply(&u)).re / dot(&u, &u).re;
                    worst = worst.min(q);
                }
                assert!(worst >= -1e-12, "{} {worst}", m.name);
            }
        }
    }

    /// Brute-force energy `sum_cells h^d 2^{-d} sum_corners grad u . G grad u`,
    /// evaluated by looping over cells and corners with explicit ghost lookups.
    fn dense_form_oracle(m: &MediumSpec, g: &Grid) -> nalgebra::DMatrix<f64> {
        let n = g.n as isize;
        let val = |u: &[f64], i: isize, j: isize| -> f64 {
            if i < 0 || j < 0 || i >= n || j >= n {
                0.0
            } else {
                u[(i + n * j) as usize]
            }
        };
        let energy = |u: &[f64]| -> f64 {
            let mut e = 0.0;
            for ci in 0..=n {
                for cj in 0..=n {
                    let xc = [
                        -g.half_width + (ci as f64 + 0.5) * g.h,
                        -g.half_width + (cj as f64 + 0.5) * g.h,
                    ];
                    let gm = m.metric_at(&xc);
                    for (si, sj) in [(0, 0), (1, 0), (0, 1), (1, 1)] {
                        let (pi, pj) = (ci - 1 + si, cj - 1 + sj);
                        let gx = (val(u, ci, pj) - val(u, ci - 1, pj)) / g.h;
                        let gy = (val(u, pi, cj) - val(u, pi, cj - 1)) / g.h;
                        e += 0.25
                            * (gm.get(0, 0) * gx * gx + 2.0 * gm.get(0, 1) * gx * gy + gm.get(1, 1) * gy * gy);
                    }
                }
            }
            e
        };
        let len = g.len();
        let mut out = nalgebra::DMatrix::zeros(len, len);
        let unit = |k: usize| {
            let mut v = vec![0.0; len];
            v[k] = 1.0;
            v
        };
        for a in 0..len {
            for b in 0..len {
                let mut s = unit(a);
                s[b] += 1.0;
                out[(a, b)] = 0.5 * (energy(&s) - energy(&unit(a)) - energy(&unit(b)));
            }
        }
        out
    }

    #[test]
    fn bump_metric_matches_quadratic_form_oracle() {
        let g = Grid::new(2, 3.0, 8).unwrap();
        let m = MediumSpec::bump_metric(2, 0.3, 2.0).unwrap();
        let h0 = assemble_h0(&m, &g).unwrap().matrix.to_dense();
        let oracle = dense_form_oracle(&m, &g);
        for r in 0..g.len() {
            for c in 0..g.len() {
                assert!((h0[(r, c)].re - oracle[(r, c)]).abs() < 1e-9, "({r},{c})");
            }
        }
    }

    #[test]
    fn anisotropic_metric_matches_quadratic_form_oracle() {
        let g = Grid::new(2, 2.0, 6).unwrap();
        let m = MediumSpec::new(
            "aniso",
            2,
            1.0,
            0.5,
            Arc::new(|x: &[f64]| {
                let s = 0.3 * (-x[0] * x[0] - x[1] * x[1]).exp();
                MetricTensor::from_fn(2, |j, k| if j == k { 1.0 + s } else { s })
            }),
            Arc::new(|_: &[f64]| 0.0),
        )
        .unwrap();
        let h0 = assemble_h0(&m, &g).unwrap();
        assert!(h0.matrix.hermitian_deviation() == 0.0);
        let dense = h0.matrix.to_dense();
        let oracle = dense_form_oracle(&m, &g);
        for r in 0..g.len() {
            for c in 0..g.len() {
                assert!((dense[(r, c)].re - oracle[(r, c)]).abs() < 1e-9);
            }
        }
    }

    #[test]
    fn indefinite_metric_is_an_assembly_error() {
        let m = MediumSpec::new(
            "bad",
            1,
            1.0,
            2.0,
            Arc::new(|_: &[f64]| MetricTensor::scalar(1, -1.0)),
            Arc::new(|_: &[f64]| 0.0),
        )
        .unwrap();
        let g = Grid::new(1, 1.0, 5).unwrap();
        assert!(matches!(assemble_h0(&m, &g), Err(LabError::Assembly(_))));
    }

    #[test]
    fn laplace_beltrami_with_unit_density_is_h0() {
        let g = Grid::with_spacing(1, 3, 1.0).unwrap();
        let lb = assemble_laplace_beltrami(&MetricDensitySpec::unit(MediumSpec::free(1)), &g).unwrap();
        let h0 = assemble_h0(&MediumSpec::free(1), &g).unwrap();
        assert_eq!(lb.matrix, h0.matrix);
        assert!(!lb.hermitian_flag);
    }

    fn smooth_density() -> MetricDensitySpec {
        let base = MediumSpec::bump_metric(2, 0.2, 1.5).unwrap();
        MetricDensitySpec::new(
            base,
            Arc::new(|x: &[f64]| 1.0 + 0.5 * crate::medium::bump(crate::medium::norm(x) / 2.0)),
            2.0,
        )
        .unwrap()
    }

    #[test]
    fn laplace_beltrami_is_self_adjoint_in_density_product() {
        let spec = smooth_density();
        let g = Grid::new(2, 3.0, 10).unwrap();
        let lb = assemble_laplace_beltrami(&spec, &g).unwrap();
        let mut rng = ChaCha8Rng::seed_from_u64(11);
        for _ in 0..20 {
            let u = random_vec(g.len(), &mut rng);
            let v = random_vec(g.len(), &mut rng);
            let lhs = density_inner(&spec, &g, &lb.apply(&u), &v);
            let rhs = density_inner(&spec, &g, &u, &lb.apply(&v));
            assert!((lhs - rhs).norm() <= 1e-10);
        }
    }

    #[test]
    fn laplace_beltrami_matches_weighted_form_oracle() {
        // diag(|g|) L is the stiffness of the density-weighted metric
        let spec = smooth_density();
        let g = Grid::new(2, 3.0, 6).unwrap();
        let lb = assemble_laplace_beltrami(&spec, &g).unwrap().matrix.to_dense();
        let weighted = MediumSpec::new(
            "weighted",
            2,
            1.0,
            0.9,
            {
                let s = spec.clone();
                Arc::new(move |x: &[f64]| MetricTensor::scalar(2, s.density_at(x) * s.base.metric_at(x).get(0, 0)))
            },
            Arc::new(|_: &[f64]| 0.0),
        )
        .unwrap();
        let oracle = dense_form_oracle(&weighted, &g);
        for r in 0..g.len() {
            let dr = spec.density_at(&g.point(r));
            for c in 0..g.len() {
                assert!((dr * lb[(r, c)].re - oracle[(r, c)]).abs() < 1e-9);
            }
        }
    }

    #[test]
    fn weights_are_reciprocal() {
        let m = MediumSpec::damped_free(2, 1.0, 1.0).unwrap();
        let g = Grid::new(2, 5.0, 11).unwrap();
        let (a, wm, wp) = assemble_absorption_and_weights(&m, &g, 1.7).unwrap();
        for (x, (p, q)) in wm.diagonal().iter().zip(wp.diagonal()).enumerate() {
            assert!(((p * q).re - 1.0).abs() <= 2.0 * f64::EPSILON, "{x}");
            assert_eq!(p.im, 0.0);
            assert!(q.re > 0.0);
        }
        // the centre node sits at the origin for odd N
        let centre = g.len() / 2;
        assert_eq!(g.point(centre), vec![0.0, 0.0]);
        assert_eq!(wp.diagonal()[centre], real(1.0));
        assert_eq!(a.diagonal()[centre], real(1.0));
        let (_, w0m, w0p) = assemble_absorption_and_weights(&m, &g, 0.0).unwrap();
        assert!(w0m.diagonal().iter().chain(w0p.diagonal().iter()).all(|v| *v == real(1.0)));
    }

    #[test]
    fn dilation_generator_hand_assembly() {
        let g = Grid::with_spacing(1, 3, 1.0).unwrap();
        assert_eq!((0..3).map(|k| g.coord(k)).collect::<Vec<_>>(), vec![-1.0, 0.0, 1.0]);
        let a = assemble_dilation_generator(&g).matrix.to_dense();
        let q = C64::new(0.0, 0.25);
        let z = C64::default();
        let want = [[z, q, z], [-q, z, -q], [z, q, z]];
        for r in 0..3 {
            for c in 0..3 {
                assert!((a[(r, c)] - want[r][c]).norm() < 1e-15);
            }
        }
    }

    #[test]
    fn dilation_generator_on_constants_and_hermitian() {
        for d in 1..=3 {
            let g = Grid::new(d, 2.0, 7).unwrap();
            let a = assemble_dilation_generator(&g);
            assert!(a.matrix.hermitian_deviation() <= 1e-10);
            let u = vec![real(1.0); g.len()];
            let au = a.apply(&u);
            for idx in 0..g.len() {
                let mi = g.multi_index(idx);
                if (0..d).all(|j| mi[j] > 0 && mi[j] + 1 < g.n) {
                    assert!((au[idx] - C64::new(0.0, -0.5 * d as f64)).norm() < 1e-12);
                }
            }
        }
    }

    #[test]
    fn commutator_anchor_is_second_order() {
        let m = MediumSpec::free(2);
        let mut defects = Vec::new();
        for n in [79, 159] {
            let g = Grid::new(2, 8.0, n).unwrap();
            let h0 = assemble_h0(&m, &g).unwrap();
            let a = assemble_dilation_generator(&g);
            let u = gaussian(&g, &[0.3, -0.2], 1.0, 1.0);
            defects.push(commutator_defect(&h0, &a, &u));
        }
        let rate = defects[0] / defects[1];
        assert!(rate > 3.5 && rate < 4.6, "{defects:?}");
    }

    #[test]
    fn derivative_anchor_is_second_order() {
        let i = i();
        let mut errs = Vec::new();
        for n in [79, 159] {
            let g = Grid::new(2, 8.0, n).unwrap();
            let a = assemble_dilation_generator(&g);
            let dx = assemble_derivative(&g, 0).unwrap();
            let u = gaussian(&g, &[0.1, 0.4], 1.0, 1.0);
            let dau = dx.apply(&a.apply(&u));
            let adu = a.apply(&dx.apply(&u));
            let du = dx.apply(&u);
            let r: Vec<C64> = (0..u.len()).map(|k| i * (dau[k] - adu[k]) - du[k]).collect();
            errs.push(norm2(&r) / norm2(&u));
        }
        assert!(errs[1] < errs[0]);
        let rate = errs[0] / errs[1];
        assert!(rate > 3.5, "{errs:?}");
    }

    #[test]
    fn dilation_of_identity_angle_is_identity() {
        let g = Grid::new(2, 4.0, 15).unwrap();
        let u = gaussian(&g, &[0.5, 0.0], 1.0, 1.0);
        let out = apply_dilation(&u, 0.0, &g).unwrap();
        for (a, b) in out.values.iter().zip(&u) {
            assert!((a - b).norm() < 1e-15);
        }
        assert!(!out.escaped);
        assert!(apply_dilation(&u, 3.5, &g).is_err());
    }

    #[test]
    fn dilation_scales_lp_norms() {
        let g = Grid::new(2, 6.0, 119).unwrap();
        let u = gaussian(&g, &[0.2, -0.3], 1.0, 1.0);
        let theta = 0.3;
        let out = apply_dilation(&u, theta, &g).unwrap();
        let r2 = lp_norm(&out.values, 2.0, &g) / lp_norm(&u, 2.0, &g);
        assert!((r2 - 1.0).abs() <= 1e-3, "{r2}");
        let r4 = lp_norm(&out.values, 4.0, &g) / lp_norm(&u, 4.0, &g);
        let want = (theta * (1.0 - 0.5)).exp();
        assert!((r4 / want - 1.0).abs() <= 0.01, "{r4} vs {want}");
    }

    #[test]
    fn dilation_flags_escaping_support() {
        let g = Grid::new(1, 4.0, 79).unwrap();
        let u = gaussian(&g, &[2.5], 0.3, 1.0);
        assert!(apply_dilation(&u, -0.8, &g).unwrap().escaped);
        assert!(!apply_dilation(&u, 0.5, &g).unwrap().escaped);
    }

    #[test]
    fn dilation_conjugates_laplacian_to_scaled_laplacian() {
        // e^{-i theta A}(-Delta)e^{i theta A} = e^{2 theta}(-Delta), tested on a Gaussian:
        // U_theta u = e^{d theta/2} u(e^theta x), so -Delta U_theta u = e^{2 theta} U_theta (-Delta u).
        let g = Grid::new(2, 8.0, 159).unwrap();
        let h0 = assemble_h0(&MediumSpec::free(2), &g).unwrap();
        let u = gaussian(&g, &[0.0, 0.0], 1.2, 1.0);
        let theta = 0.25;
        let lhs = h0.apply(&apply_dilation(&u, theta, &g).unwrap().values);
        let rhs: Vec<C64> = apply_dilation(&h0.apply(&u), theta, &g)
            .unwrap()
            .values
            .iter()
            .map(|v| v * (2.0 * theta).exp())
            .collect();
        let diff: Vec<C64> = lhs.iter().zip(&rhs).map(|(a, b)| a - b).collect();
        assert!(norm2(&diff) / norm2(&rhs) < 1e-2);
    }

    #[test]
    fn sponge_is_dissipative_and_vanishes_inside() {
        let g = Grid::new(2, 4.0, 21).unwrap();
        let spec = SpongeSpec::default_for(&g);
        let s = assemble_sponge(&spec, &g).unwrap();
        let diag = s.diagonal();
        assert!(diag.iter().all(|v| v.re == 0.0 && v.im <= 0.0));
        assert_eq!(diag[g.len() / 2], C64::default());
        for (x, v) in g.points().zip(&diag) {
            if x.iter().all(|c| c.abs() < 3.0) {
                assert_eq!(*v, C64::default());
            }
        }
        assert!(diag.iter().any(|v| v.im < 0.0));
        let off = assemble_sponge(&SpongeSpec { strength: 0.0, ..spec }, &g).unwrap();
        assert!(off.diagonal().iter().all(|v| v.norm() == 0.0));
        assert!(assemble_sponge(&SpongeSpec { width: 4.0, strength: 1.0 }, &g).is_err());
    }

    #[test]
    fn triplet_export_round_trips_values() {
        let g = Grid::with_spacing(1, 3, 1.0).unwrap();
        let a = assemble_dilation_generator(&g);
        let mut buf = Vec::new();
        a.write_triplets(&mut buf).unwrap();
        let text = String::from_utf8(buf).unwrap();
        let mut trip = Vec::new();
        for line in text.lines().skip(1) {
            let f: Vec<&str> = line.split_whitespace().collect();
            trip.push((
                f[0].parse().unwrap(),
                f[1].parse().unwrap(),
                C64::new(f[2].parse().unwrap(), f[3].parse().unwrap()),
            ));
        }
        assert_eq!(CsrMatrix::from_triplets(3, &trip).unwrap(), a.matrix);
    }
}
