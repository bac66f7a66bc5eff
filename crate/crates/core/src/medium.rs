//! Continuous media: metric `G(x)`, absorption `a(x)` and their decay checks.

use std::f64::consts::PI;
use std::fmt;
use std::sync::Arc;

use nalgebra::DMatrix;

use crate::error::{input, LabError, Result};

pub const MAX_DIM: usize = 3;

/// `<x> = (1 + |x|^2)^{1/2}`
pub fn japanese(x: &[f64]) -> f64 {
    (1.0 + x.iter().map(|v| v * v).sum::<f64>()).sqrt()
}

pub fn norm(x: &[f64]) -> f64 {
    x.iter().map(|v| v * v).sum::<f64>().sqrt()
}

/// Symmetric `d x d` tensor stored in a fixed 3x3 block.
#[derive(Clone, Copy, Debug, PartialEq)]
pub struct MetricTensor {
    d: usize,
    m: [[f64; MAX_DIM]; MAX_DIM],
}

impl MetricTensor {
    pub fn identity(d: usize) -> Self {
        Self::scalar(d, 1.0)
    }

    pub fn scalar(d: usize, s: f64) -> Self {
        let mut m = [[0.0; MAX_DIM]; MAX_DIM];
        for (j, row) in m.iter_mut().enumerate().take(d) {
            row[j] = s;
        }
        Self { d, m }
    }

    /// Symmetrises the given entries.
    pub fn from_fn(d: usize, f: impl Fn(usize, usize) -> f64) -> Self {
        let mut m = [[0.0; MAX_DIM]; MAX_DIM];
        for j in 0..d {
            for k in 0..d {
                m[j][k] = 0.5 * (f(j, k) + f(k, j));
            }
        }
        Self { d, m }
    }

    pub fn dim(&self) -> usize {
        self.d
    }

    pub fn get(&self, j: usize, k: usize) -> f64 {
        self.m[j][k]
    }

    pub fn is_diagonal(&self) -> bool {
        (0..self.d).all(|j| (0..self.d).all(|k| j == k || self.m[j][k] == 0.0))
    }

    /// `<G xi, xi>`
    pub fn quad(&self, xi: &[f64]) -> f64 {
        let mut s = 0.0;
        for j in 0..self.d {
            for k in 0..self.d {
                s += self.m[j][k] * xi[j] * xi[k];
            }
        }
        s
    }

    pub fn apply(&self, xi: &[f64]) -> [f64; MAX_DIM] {
        let mut out = [0.0; MAX_DIM];
        for (j, o) in out.iter_mut().enumerate().take(self.d) {
            *o = (0..self.d).map(|k| self.m[j][k] * xi[k]).sum();
        }
        out
    }

    /// Smallest and largest eigenvalue.
    pub fn eig_bounds(&self) -> (f64, f64) {
        if self.is_diagonal() {
            let diag = (0..self.d).map(|j| self.m[j][j]);
            return diag.fold((f64::INFINITY, f64::NEG_INFINITY), |(lo, hi), v| (lo.min(v), hi.max(v)));
        }
        let mat = DMatrix::from_fn(self.d, self.d, |j, k| self.m[j][k]);
        let ev = mat.symmetric_eigenvalues();
        (ev.min(), ev.max())
    }

    /// max_{jk} |G_jk - delta_jk|
    pub fn deviation_from_identity(&self) -> f64 {
        let mut dev: f64 = 0.0;
        for j in 0..self.d {
            for k in 0..self.d {
                let id = if j == k { 1.0 } else { 0.0 };
                dev = dev.max((self.m[j][k] - id).abs());
            }
        }
        dev
    }

    pub fn max_abs_diff(&self, other: &Self) -> f64 {
        let mut dev: f64 = 0.0;
        for j in 0..self.d {
            for k in 0..self.d {
                dev = dev.max((self.m[j][k] - other.m[j][k]).abs());
            }
        }
        dev
    }
}

pub type MetricFn = Arc<dyn Fn(&[f64]) -> MetricTensor + Send + Sync>;
pub type ScalarFn = Arc<dyn Fn(&[f64]) -> f64 + Send + Sync>;

/// A medium on R^d. `epsilon` bounds the spectrum of `G` inside `[1 - eps, 1 + eps]`.
#[derive(Clone)]
pub struct MediumSpec {
    pub name: String,
    pub dim: usize,
    pub rho: f64,
    pub epsilon: f64,
    metric: MetricFn,
    absorption: ScalarFn,
}

impl fmt::Debug for MediumSpec {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        f.debug_struct("MediumSpec")
            .field("name", &self.name)
            .field("dim", &self.dim)
            .field("rho", &self.rho)
            .field("epsilon", &self.epsilon)
            .finish_non_exhaustive()
    }
}

/// `b(s) = exp(1 - 1/(1 - s^2))` on `|s| < 1`, zero outside; `b(0) = 1`.
pub fn bump(s: f64) -> f64 {
    let q = 1.0 - s * s;
    if q <= 0.0 {
        0.0
    } else {
        (1.0 - 1.0 / q).exp()
    }
}

impl MediumSpec {
    pub fn new(
        name: impl Into<String>,
        dim: usize,
        rho: f64,
        epsilon: f64,
        metric: MetricFn,
        absorption: ScalarFn,
    ) -> Result<Self> {
        if dim == 0 || dim > MAX_DIM {
            return input(format!("dimension {dim} not in 1..={MAX_DIM}"));
        }
        if !(rho > 0.0) || !rho.is_finite() {
            return input(format!("decay rate rho = {rho} must be positive"));
        }
        Ok(Self { name: name.into(), dim, rho, epsilon, metric, absorption })
    }

    pub fn free(d: usize) -> Self {
        Self::new(
            "free",
            d,
            1.0,
            0.0,
            Arc::new(move |_| MetricTensor::identity(d)),
            Arc::new(|_| 0.0),
        )
        .expect("valid dimension")
    }

    /// `G = I`, `a = c0 <x>^{-1-rho}`.
    pub fn damped_free(d: usize, c0: f64, rho: f64) -> Result<Self> {
        if c0 < 0.0 {
            return input("absorption amplitude must be non-negative");
        }
        Self::new(
            "damped-free",
            d,
            rho,
            0.0,
            Arc::new(move |_| MetricTensor::identity(d)),
            Arc::new(move |x| c0 * japanese(x).powf(-1.0 - rho)),
        )
    }

    /// `G = (1 + eps b(|x|/r_b)) I`, no absorption.
    pub fn bump_metric(d: usize, eps: f64, rb: f64) -> Result<Self> {
        if !(eps.abs() < 1.0) || !(rb > 0.0) {
            return input("bump amplitude must satisfy |eps| < 1 and radius > 0");
        }
        Self::new(
            "bump-metric",
            d,
            1.0,
            eps.abs(),
            Arc::new(move |x| MetricTensor::scalar(d, 1.0 + eps * bump(norm(x) / rb))),
            Arc::new(|_| 0.0),
        )
    }

    /// Radial well `G = gamma(|x|) I` with `gamma = 1 - depth b((r - r_w)/w)`.
    /// `V = gamma/r^2` has a local minimum inside the well, hence a stable
    /// circular geodesic. Absorption is a bump of amplitude `c` centred at
    /// `damp_center` with half-width `damp_width`.
    pub fn well(
        name: &str,
        d: usize,
        damp_amplitude: f64,
        damp_center: f64,
        damp_width: f64,
    ) -> Result<Self> {
        let depth = WELL_DEPTH;
        let (rw, ww) = (WELL_RADIUS, WELL_WIDTH);
        Self::new(
            name,
            d,
            1.0,
            depth,
            Arc::new(move |x| MetricTensor::scalar(d, 1.0 - depth * bump((norm(x) - rw) / ww))),
            Arc::new(move |x| damp_amplitude * bump((norm(x) - damp_center) / damp_width)),
        )
    }

    pub fn trapping_well(d: usize) -> Result<Self> {
        Self::well("trapping-well", d, 1.0, WELL_RADIUS, 1.5)
    }

    /// Same well, damping moved to an annulus far from the trapped circle.
    pub fn trapping_well_displaced(d: usize) -> Result<Self> {
        Self::well("trapping-well-displaced", d, 1.0, 7.0, 1.0)
    }

    /// `G = gamma(|x|) I`, `a = alpha(|x|)` from piecewise polynomial tables.
    pub fn radial(
        name: impl Into<String>,
        d: usize,
        rho: f64,
        gamma: PiecewisePoly,
        alpha: PiecewisePoly,
    ) -> Result<Self> {
        let rs: Vec<f64> = (0..=400).map(|i| i as f64 * gamma.extent().max(alpha.extent()) / 400.0).collect();
        let (mut lo, mut hi) = (f64::INFINITY, f64::NEG_INFINITY);
        for &r in &rs {
            let g = gamma.eval(r);
            lo = lo.min(g);
            hi = hi.max(g);
            if alpha.eval(r) < 0.0 {
                return input(format!("radial absorption negative at r = {r}"));
            }
        }
        if !(lo > 0.0) {
            return input("radial metric profile must stay positive");
        }
        let eps = (1.0 - lo).abs().max((hi - 1.0).abs());
        Self::new(
            name,
            d,
            rho,
            eps,
            Arc::new(move |x| MetricTensor::scalar(d, gamma.eval(norm(x)))),
            Arc::new(move |x| alpha.eval(norm(x))),
        )
    }

    pub fn metric_at(&self, x: &[f64]) -> MetricTensor {
        (self.metric)(x)
    }

    pub fn absorption_at(&self, x: &[f64]) -> f64 {
        (self.absorption)(x)
    }

    pub fn metric_fn(&self) -> MetricFn {
        self.metric.clone()
    }

    pub fn absorption_fn(&self) -> ScalarFn {
        self.absorption.clone()
    }

    /// Copy of this medium with the absorption switched off.
    pub fn without_absorption(&self) -> Self {
        let mut m = self.clone();
        m.absorption = Arc::new(|_| 0.0);
        m
    }

    pub fn with_absorption(&self, absorption: ScalarFn) -> Self {
        let mut m = self.clone();
        m.absorption = absorption;
        m
    }

    /// Largest eigenvalue of `G` seen over the given points.
    pub fn max_metric_eig(&self, points: impl IntoIterator<Item = Vec<f64>>) -> f64 {
        points.into_iter().map(|x| self.metric_at(&x).eig_bounds().1).fold(1.0, f64::max)
    }
}

pub const WELL_DEPTH: f64 = 0.5;
pub const WELL_RADIUS: f64 = 2.0;
pub const WELL_WIDTH: f64 = 1.0;

/// Default builtin corpus in dimension `d`.
pub fn builtin_media(d: usize) -> Vec<MediumSpec> {
    vec![
        MediumSpec::free(d),
        MediumSpec::damped_free(d, 1.0, 1.0).expect("builtin"),
        MediumSpec::bump_metric(d, 0.3, 2.0).expect("builtin"),
        MediumSpec::trapping_well(d).expect("builtin"),
    ]
}

pub const BUILTIN_NAMES: [&str; 5] =
    ["free", "damped-free", "bump-metric", "trapping-well", "trapping-well-displaced"];

pub fn medium_by_name(name: &str, d: usize) -> Result<MediumSpec> {
    if d == 0 || d > MAX_DIM {
        return input(format!("dimension {d} not in 1..={MAX_DIM}"));
    }
    match name {
        "free" => Ok(MediumSpec::free(d)),
        "damped-free" => MediumSpec::damped_free(d, 1.0, 1.0),
        "bump-metric" => MediumSpec::bump_metric(d, 0.3, 2.0),
        "trapping-well" => MediumSpec::trapping_well(d),
        "trapping-well-displaced" => MediumSpec::trapping_well_displaced(d),
        other => input(format!("unknown medium '{other}'")),
    }
}

pub fn evaluate_fields(m: &MediumSpec, x: &[f64]) -> Result<(MetricTensor, f64)> {
    if x.len() != m.dim {
        return input(format!("point has {} coordinates, medium is {}-dimensional", x.len(), m.dim));
    }
    if x.iter().any(|v| !v.is_finite()) {
        return input("non-finite evaluation point");
    }
    Ok((m.metric_at(x), m.absorption_at(x)))
}

/// Piecewise polynomial in `r`. Piece `i` covers `[breaks[i], breaks[i+1])` and is
/// evaluated in the local variable `r - breaks[i]`; beyond the last break the
/// profile equals `tail`.
#[derive(Clone, Debug, PartialEq)]
pub struct PiecewisePoly {
    breaks: Vec<f64>,
    coeffs: Vec<Vec<f64>>,
    tail: f64,
}

impl PiecewisePoly {
    pub fn new(breaks: Vec<f64>, coeffs: Vec<Vec<f64>>, tail: f64) -> Result<Self> {
        if breaks.len() != coeffs.len() + 1 || coeffs.is_empty() {
            return input("profile needs one more break than pieces");
        }
        if breaks[0] != 0.0 {
            return input("profile must start at r = 0");
        }
        if breaks.windows(2).any(|w| !(w[1] > w[0])) {
            return input("profile breaks must be strictly increasing");
        }
        if breaks.iter().chain(coeffs.iter().flatten()).any(|v| !v.is_finite()) || !tail.is_finite() {
            return input("profile contains non-finite values");
        }
        Ok(Self { breaks, coeffs, tail })
    }

    pub fn constant(v: f64) -> Self {
        Self { breaks: vec![0.0, 1.0], coeffs: vec![vec![v]], tail: v }
    }

    pub fn extent(&self) -> f64 {
        *self.breaks.last().expect("non-empty")
    }

    pub fn eval(&self, r: f64) -> f64 {
        if r >= self.extent() {
            return self.tail;
        }
        let i = self.breaks.partition_point(|&b| b <= r).saturating_sub(1);
        let s = r - self.breaks[i];
        self.coeffs[i].iter().rev().fold(0.0, |acc, c| acc * s + c)
    }
}

// ---------------------------------------------------------------------------
// Symbol decay

#[derive(Clone, Debug)]
pub struct DecayRow {
    pub radius: f64,
    /// sup <x>^rho |G - I|
    pub metric0: f64,
    /// sup <x>^{rho+1} |dG|
    pub metric1: f64,
    /// sup <x>^{1+rho} |a|
    pub absorption0: f64,
    /// sup <x>^{2+rho} |da|
    pub absorption1: f64,
    pub min_metric_eig: f64,
    pub min_absorption: f64,
}

#[derive(Clone, Debug)]
pub struct DecayReport {
    pub rows: Vec<DecayRow>,
    pub growth_factor: f64,
    /// Names of the constant sequences flagged as growing.
    pub violations: Vec<&'static str>,
    pub pass: bool,
}

/// Points on the sphere of radius `r`: both signs in 1-D, equispaced angles in
/// 2-D, a Fibonacci lattice in 3-D.
pub fn sphere_points(d: usize, r: f64, count: usize) -> Vec<Vec<f64>> {
    match d {
        1 => vec![vec![-r], vec![r]],
        2 => (0..count)
            .map(|i| {
                let t = 2.0 * PI * i as f64 / count as f64;
                vec![r * t.cos(), r * t.sin()]
            })
            .collect(),
        _ => {
            let golden = PI * (3.0 - 5f64.sqrt());
            (0..count)
                .map(|i| {
                    let z = 1.0 - 2.0 * (i as f64 + 0.5) / count as f64;
                    let s = (1.0 - z * z).sqrt();
                    let t = golden * i as f64;
                    vec![r * s * t.cos(), r * s * t.sin(), r * z]
                })
                .collect()
        }
    }
}

pub fn verify_symbol_decay(m: &MediumSpec, sample_radii: &[f64]) -> Result<DecayReport> {
    verify_symbol_decay_with(m, sample_radii, 4.0, 32)
}

pub fn verify_symbol_decay_with(
    m: &MediumSpec,
    sample_radii: &[f64],
    growth_factor: f64,
    points_per_sphere: usize,
) -> Result<DecayReport> {
    if sample_radii.is_empty() {
        return input("no sample radii");
    }
    if sample_radii.iter().any(|r| !(*r > 0.0) || !r.is_finite()) {
        return input("sample radii must be positive and finite");
    }
    if sample_radii.windows(2).any(|w| w[1] < w[0]) {
        return input("sample radii must be sorted");
    }
    let d = m.dim;
    let mut rows = Vec::with_capacity(sample_radii.len());
    for &r in sample_radii {
        let mut row = DecayRow {
            radius: r,
            metric0: 0.0,
            metric1: 0.0,
            absorption0: 0.0,
            absorption1: 0.0,
            min_metric_eig: f64::INFINITY,
            min_absorption: f64::INFINITY,
        };
        for x in sphere_points(d, r, points_per_sphere) {
            let jx = japanese(&x);
            let g = m.metric_at(&x);
            let a = m.absorption_at(&x);
            row.metric0 = row.metric0.max(jx.powf(m.rho) * g.deviation_from_identity());
            row.absorption0 = row.absorption0.max(jx.powf(1.0 + m.rho) * a.abs());
            row.min_metric_eig = row.min_metric_eig.min(g.eig_bounds().0);
            row.min_absorption = row.min_absorption.min(a);
            let step = 1e-4 * jx;
            for l in 0..d {
                let mut xp = x.clone();
                let mut xm = x.clone();
                xp[l] += step;
                xm[l] -= step;
                let dg = m.metric_at(&xp).max_abs_diff(&m.metric_at(&xm)) / (2.0 * step);
                let da = (m.absorption_at(&xp) - m.absorption_at(&xm)).abs() / (2.0 * step);
                row.metric1 = row.metric1.max(jx.powf(m.rho + 1.0) * dg);
                row.absorption1 = row.absorption1.max(jx.powf(m.rho + 2.0) * da);
            }
        }
        rows.push(row);
    }

    let mut violations = Vec::new();
    let series: [(&'static str, fn(&DecayRow) -> f64); 4] = [
        ("metric order 0", |r| r.metric0),
        ("metric order 1", |r| r.metric1),
        ("absorption order 0", |r| r.absorption0),
        ("absorption order 1", |r| r.absorption1),
    ];
    for (label, get) in series {
        let vals: Vec<f64> = rows.iter().map(get).collect();
        if vals.iter().any(|v| !v.is_finite()) || grows(&vals, growth_factor) {
            violations.push(label);
        }
    }
    let fields_ok = rows.iter().all(|r| r.min_metric_eig > 0.0 && r.min_absorption >= 0.0);
    if !fields_ok {
        violations.push("field positivity");
    }
    let pass = violations.is_empty();
    Ok(DecayReport { rows, growth_factor, violations, pass })
}

/// Monotone non-decreasing with the last value beyond `factor` times the first.
fn grows(vals: &[f64], factor: f64) -> bool {
    if vals.len() < 2 {
        return false;
    }
    let monotone = vals.windows(2).all(|w| w[1] >= w[0]);
    let (first, last) = (vals[0], vals[vals.len() - 1]);
    monotone && last > 1e-300 && last > factor * first
}

/// Medium paired with a volume density `|g|`, equal to 1 beyond `r0`.
#[derive(Clone)]
pub struct MetricDensitySpec {
    pub base: MediumSpec,
    pub r0: f64,
    density: ScalarFn,
}

impl fmt::Debug for MetricDensitySpec {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        f.debug_struct("MetricDensitySpec")
            .field("base", &self.base)
            .field("r0", &self.r0)
            .finish_non_exhaustive()
    }
}

impl MetricDensitySpec {
    pub fn new(base: MediumSpec, density: ScalarFn, r0: f64) -> Result<Self> {
        let spec = Self { base, r0, density };
        for r in [0.0, 0.5 * r0, r0] {
            for x in sphere_points(spec.base.dim, r.max(1e-9), 16) {
                let v = spec.density_at(&x);
                if !(v > 0.0) {
                    return Err(LabError::Input(format!("density {v} not positive at |x| = {r}")));
                }
            }
        }
        Ok(spec)
    }

    pub fn unit(base: MediumSpec) -> Self {
        Self { base, r0: 0.0, density: Arc::new(|_| 1.0) }
    }

    pub fn density_at(&self, x: &[f64]) -> f64 {
        if norm(x) > self.r0 {
            1.0
        } else {
            (self.density)(x)
        }
    }
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn free_medium_is_identity() {
        let m = MediumSpec::free(2);
        let (g, a) = evaluate_fields(&m, &[3.0, -1.5]).unwrap();
        assert_eq!(g, MetricTensor::identity(2));
        assert_eq!(a, 0.0);
    }

    #[test]
    fn damped_free_profile() {
        let m = MediumSpec::damped_free(3, 1.0, 1.0).unwrap();
        assert_eq!(m.absorption_at(&[0.0, 0.0, 0.0]), 1.0);
        let a = m.absorption_at(&[1.0, 1.0, 1.0]);
        assert!((a - 0.25).abs() < 1e-15);
    }

    #[test]
    fn bump_metric_is_identity_outside_support() {
        let m = MediumSpec::bump_metric(2, 0.3, 2.0).unwrap();
        assert_eq!(m.metric_at(&[2.5, 0.0]), MetricTensor::identity(2));
        let g0 = m.metric_at(&[0.0, 0.0]);
        assert!((g0.get(0, 0) - 1.3).abs() < 1e-15);
    }

    #[test]
    fn rejects_bad_points() {
        let m = MediumSpec::free(2);
        assert!(evaluate_fields(&m, &[f64::NAN, 0.0]).is_err());
        assert!(evaluate_fields(&m, &[0.0]).is_err());
    }

    #[test]
    fn evaluation_is_bitwise_repeatable() {
        for m in builtin_media(3) {
            let x = [0.3, -1.7, 2.2];
            let (g1, a1) = evaluate_fields(&m, &x).unwrap();
            let (g2, a2) = evaluate_fields(&m, &x).unwrap();
            assert_eq!(g1, g2);
            assert_eq!(a1.to_bits(), a2.to_bits());
        }
    }

    #[test]
    fn builtin_metrics_stay_within_epsilon() {
        for d in 1..=3 {
            for m in builtin_media(d) {
                assert!(m.epsilon < 1.0);
                for r in [0.0, 0.5, 1.0, 1.5, 2.0, 2.5, 3.0, 5.0] {
                    for x in sphere_points(d, r, 24) {
                        let (lo, hi) = m.metric_at(&x).eig_bounds();
                        assert!(lo >= 1.0 - m.epsilon - 1e-15 && hi <= 1.0 + m.epsilon + 1e-15, "{}", m.name);
                    }
                }
            }
        }
    }

    #[test]
    fn builtin_media_pass_decay_check() {
        let radii = [1.0, 2.0, 4.0, 8.0, 16.0, 32.0];
        for d in 1..=3 {
            for m in builtin_media(d) {
                let rep = verify_symbol_decay(&m, &radii).unwrap();
                assert!(rep.pass, "{} d={d}: {:?}", m.name, rep.violations);
            }
        }
    }

    #[test]
    fn free_constants_vanish() {
        let rep = verify_symbol_decay(&MediumSpec::free(2), &[1.0, 10.0]).unwrap();
        for r in &rep.rows {
            assert_eq!(r.metric0 + r.metric1 + r.absorption0 + r.absorption1, 0.0);
        }
    }

    #[test]
    fn damped_free_order_zero_constant_is_one() {
        let m = MediumSpec::damped_free(2, 1.0, 1.0).unwrap();
        let rep = verify_symbol_decay(&m, &[1.0, 3.0, 9.0]).unwrap();
        for r in &rep.rows {
            assert!((r.absorption0 - 1.0).abs() < 1e-12);
        }
        assert!(rep.pass);
    }

    #[test]
    fn slow_absorption_is_flagged() {
        let m = MediumSpec::free(2).with_absorption(Arc::new(|x| 1.0 / japanese(x)));
        let rep = verify_symbol_decay(&m, &[1.0, 4.0, 16.0, 64.0]).unwrap();
        // constant grows like <x>
        let ratio = rep.rows[1].absorption0 / rep.rows[0].absorption0;
        assert!((ratio - japanese(&[4.0]) / japanese(&[1.0])).abs() < 1e-9);
        assert!(!rep.pass);
        assert!(rep.violations.contains(&"absorption order 0"));
    }

    #[test]
    fn empty_radii_rejected() {
        assert!(verify_symbol_decay(&MediumSpec::free(1), &[]).is_err());
    }

    #[test]
    fn well_potential_has_interior_minimum() {
        // V(r) = gamma(r)/r^2 must have a local minimum for circular orbits to be stable
        let m = MediumSpec::trapping_well(2).unwrap();
        let v = |r: f64| m.metric_at(&[r, 0.0]).get(0, 0) / (r * r);
        let rs: Vec<f64> = (100..300).map(|i| i as f64 * 0.01).collect();
        let has_min = rs.windows(3).any(|w| v(w[1]) < v(w[0]) && v(w[1]) < v(w[2]));
        assert!(has_min);
    }

    #[test]
    fn piecewise_profile_evaluates_pieces_and_tail() {
        let p = PiecewisePoly::new(vec![0.0, 1.0, 2.0], vec![vec![1.0, 0.0, -0.5], vec![0.5, 0.5]], 1.0)
            .unwrap();
        assert_eq!(p.eval(0.0), 1.0);
        assert!((p.eval(0.5) - 0.875).abs() < 1e-15);
        assert!((p.eval(1.5) - 0.75).abs() < 1e-15);
        assert_eq!(p.eval(7.0), 1.0);
        assert!(PiecewisePoly::new(vec![0.0, 1.0, 1.0], vec![vec![1.0], vec![1.0]], 1.0).is_err());
    }

    #[test]
    fn radial_medium_from_tables() {
        let gamma = PiecewisePoly::new(vec![0.0, 1.0], vec![vec![0.8]], 1.0).unwrap();
        let alpha = PiecewisePoly::constant(0.0);
        let m = MediumSpec::radial("custom", 2, 1.0, gamma, alpha).unwrap();
        assert!((m.epsilon - 0.2).abs() < 1e-15);
        assert_eq!(m.metric_at(&[0.5, 0.0]).get(1, 1), 0.8);
        let neg = PiecewisePoly::constant(-1.0);
        assert!(MediumSpec::radial("bad", 2, 1.0, PiecewisePoly::constant(1.0), neg).is_err());
    }

    #[test]
    fn density_defaults_to_one_outside_r0() {
        let spec = MetricDensitySpec::new(MediumSpec::free(2), Arc::new(|_| 2.0), 1.0).unwrap();
        assert_eq!(spec.density_at(&[0.5, 0.0]), 2.0);
        assert_eq!(spec.density_at(&[1.5, 0.0]), 1.0);
        assert!(MetricDensitySpec::new(MediumSpec::free(2), Arc::new(|_| -1.0), 1.0).is_err());
    }
}
