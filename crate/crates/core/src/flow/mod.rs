//! Hamiltonian flow of `p(x, xi) = <G(x) xi, xi>` and what is built on it:
//! trapping classification, geometric control, escape functions and the
//! discrete commutator check.

mod control;
mod escape;
mod mourre;

use std::io::Write;

use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;

pub use control::{geometric_control_check, ControlOptions, ControlReport};
pub use escape::{
    build_escape_function, poisson_bracket, poisson_bracket_check, Bump, BumpKind, BracketReport, BracketRow,
    EscapeFunction, EscapeParams,
};
pub use mourre::{mourre_commutator_check, CommutatorReport, DENSE_LIMIT};

use crate::error::{input, LabError, Result};
use crate::medium::{sphere_points, MediumSpec, MAX_DIM};

/// `(x, xi)` with the first `dim` entries of each array in use.
#[derive(Clone, Copy, Debug, PartialEq)]
pub struct PhasePoint {
    pub dim: usize,
    pub x: [f64; MAX_DIM],
    pub xi: [f64; MAX_DIM],
}

impl PhasePoint {
    pub fn new(x: &[f64], xi: &[f64]) -> Result<Self> {
        if x.len() != xi.len() || x.is_empty() || x.len() > MAX_DIM {
            return input("phase point needs x and xi of equal dimension 1..=3");
        }
        if x.iter().chain(xi).any(|v| !v.is_finite()) {
            return input("phase point must be finite");
        }
        let mut p = Self { dim: x.len(), x: [0.0; MAX_DIM], xi: [0.0; MAX_DIM] };
        p.x[..x.len()].copy_from_slice(x);
        p.xi[..xi.len()].copy_from_slice(xi);
        Ok(p)
    }

    pub fn pos(&self) -> &[f64] {
        &self.x[..self.dim]
    }

    pub fn mom(&self) -> &[f64] {
        &self.xi[..self.dim]
    }

    pub fn radius(&self) -> f64 {
        self.pos().iter().map(|v| v * v).sum::<f64>().sqrt()
    }

    /// `f_0 = <x, xi>`
    pub fn x_dot_xi(&self) -> f64 {
        self.pos().iter().zip(self.mom()).map(|(a, b)| a * b).sum()
    }

    fn axpy(&self, s: f64, k: &Self) -> Self {
        let mut o = *self;
        for j in 0..self.dim {
            o.x[j] += s * k.x[j];
            o.xi[j] += s * k.xi[j];
        }
        o
    }
}

pub fn hamiltonian(m: &MediumSpec, w: &PhasePoint) -> f64 {
    m.metric_at(w.pos()).quad(w.mom())
}

/// `(dx/dt, dxi/dt) = (2 G xi, -grad_x p)`, the `x`-gradient by central
/// differences with relative step `1e-6`.
fn vector_field(m: &MediumSpec, w: &PhasePoint) -> PhasePoint {
    let d = w.dim;
    let gx = m.metric_at(w.pos()).apply(w.mom());
    let mut out = PhasePoint { dim: d, x: [0.0; MAX_DIM], xi: [0.0; MAX_DIM] };
    for j in 0..d {
        out.x[j] = 2.0 * gx[j];
    }
    let mut x = w.x;
    for k in 0..d {
        let h = 1e-6 * w.x[k].abs().max(1.0);
        x[k] = w.x[k] + h;
        let plus = m.metric_at(&x[..d]).quad(w.mom());
        x[k] = w.x[k] - h;
        let minus = m.metric_at(&x[..d]).quad(w.mom());
        x[k] = w.x[k];
        out.xi[k] = -(plus - minus) / (2.0 * h);
    }
    out
}

/// One classical RK4 step of size `dt` (negative `dt` runs the flow backwards).
pub fn rk4_step(m: &MediumSpec, w: &PhasePoint, dt: f64) -> PhasePoint {
    let k1 = vector_field(m, w);
    let k2 = vector_field(m, &w.axpy(0.5 * dt, &k1));
    let k3 = vector_field(m, &w.axpy(0.5 * dt, &k2));
    let k4 = vector_field(m, &w.axpy(dt, &k3));
    let mut o = *w;
    for j in 0..w.dim {
        o.x[j] += dt / 6.0 * (k1.x[j] + 2.0 * k2.x[j] + 2.0 * k3.x[j] + k4.x[j]);
        o.xi[j] += dt / 6.0 * (k1.xi[j] + 2.0 * k2.xi[j] + 2.0 * k3.xi[j] + k4.xi[j]);
    }
    o
}

/// `phi^t(w)` in steps of at most `dt`.
pub fn flow_to(m: &MediumSpec, w: &PhasePoint, t: f64, dt: f64) -> PhasePoint {
    let n = (t.abs() / dt).ceil().max(1.0) as usize;
    let h = t / n as f64;
    (0..n).fold(*w, |acc, _| rk4_step(m, &acc, h))
}

/// `d|X|^2/dt = 4 <x, G xi>`
pub fn radial_rate(m: &MediumSpec, w: &PhasePoint) -> f64 {
    let gx = m.metric_at(w.pos()).apply(w.mom());
    4.0 * w.pos().iter().zip(gx.iter()).map(|(a, b)| a * b).sum::<f64>()
}

/// Escape predicate: outside `max(r_g, start_radius + 1)` and moving outwards in the
/// direction of travel `sign`.
pub fn has_escaped(m: &MediumSpec, w: &PhasePoint, start_radius: f64, r_g: f64, sign: f64) -> bool {
    w.radius() >= r_g.max(start_radius + 1.0) && sign * radial_rate(m, w) > 0.0
}

#[derive(Clone, Copy, Debug, PartialEq)]
pub struct FlowOptions {
    pub dt: f64,
    pub energy_tol: f64,
    /// Keep every this many steps.
    pub record_every: usize,
    /// Stop once the escape predicate holds with this `R_G`.
    pub stop_on_escape: Option<f64>,
}

impl Default for FlowOptions {
    fn default() -> Self {
        Self { dt: 1e-2, energy_tol: 1e-6, record_every: 1, stop_on_escape: None }
    }
}

#[derive(Clone, Copy, Debug, PartialEq, Eq)]
pub enum Classification {
    Trapped,
    ForwardNontrapped,
    BackwardNontrapped,
    Nontrapped,
    Undecided,
}

impl Classification {
    pub fn as_str(&self) -> &'static str {
        match self {
            Classification::Trapped => "trapped",
            Classification::ForwardNontrapped => "forward_nontrapped",
            Classification::BackwardNontrapped => "backward_nontrapped",
            Classification::Nontrapped => "nontrapped",
            Classification::Undecided => "undecided",
        }
    }
}

#[derive(Clone, Debug, PartialEq)]
pub struct Trajectory {
    pub samples: Vec<(f64, PhasePoint)>,
    pub energy_drift: f64,
    pub classification: Classification,
    pub escape_time: Option<f64>,
}

impl Trajectory {
    pub fn write_csv<W: Write>(&self, m: &MediumSpec, out: W) -> Result<()> {
        let mut w = csv::Writer::from_writer(out);
        let d = self.samples.first().map(|s| s.1.dim).unwrap_or(m.dim);
        let mut header = vec!["t".to_string()];
        header.extend((0..d).map(|j| format!("x{j}")));
        header.extend((0..d).map(|j| format!("xi{j}")));
        header.push("p".into());
        w.write_record(&header)?;
        for (t, p) in &self.samples {
            let mut row = vec![format!("{t:.6}")];
            row.extend(p.pos().iter().map(|v| format!("{v:.12e}")));
            row.extend(p.mom().iter().map(|v| format!("{v:.12e}")));
            row.push(format!("{:.15e}", hamiltonian(m, p)));
            w.write_record(&row)?;
        }
        w.flush()?;
        Ok(())
    }
}

/// Steps from `w0` for `|t| <= t_final` in direction `sign`, calling `visit`
/// after every step; `visit` returning `true` stops the walk. Returns the
/// final point, the time reached and the worst relative energy drift.
pub(crate) fn walk(
    m: &MediumSpec,
    w0: &PhasePoint,
    sign: f64,
    t_final: f64,
    dt: f64,
    energy_tol: f64,
    mut visit: impl FnMut(f64, &PhasePoint) -> bool,
) -> Result<(PhasePoint, f64, f64)> {
    let p0 = hamiltonian(m, w0);
    let scale = if p0 > 0.0 { p0 } else { 1.0 };
    let steps = (t_final / dt).ceil() as usize;
    let mut w = *w0;
    let mut drift: f64 = 0.0;
    let mut t = 0.0;
    for k in 1..=steps {
        let h = if k == steps { t_final - (steps - 1) as f64 * dt } else { dt };
        w = rk4_step(m, &w, sign * h);
        t += h;
        let e = ((hamiltonian(m, &w) - p0) / scale).abs();
        drift = drift.max(e);
        if !(e <= energy_tol) {
            return Err(LabError::EnergyDrift { drift: e, tolerance: energy_tol });
        }
        if visit(t, &w) {
            break;
        }
    }
    Ok((w, t, drift))
}

/// Integrates forward to `t_final`; errors when `p` drifts beyond the
/// tolerance (a smaller `dt` is the fix).
pub fn integrate_flow(m: &MediumSpec, w0: &PhasePoint, t_final: f64, opts: &FlowOptions) -> Result<Trajectory> {
    integrate_directed(m, w0, 1.0, t_final, opts)
}

fn integrate_directed(m: &MediumSpec, w0: &PhasePoint, sign: f64, t_final: f64, opts: &FlowOptions) -> Result<Trajectory> {
    if !(opts.dt > 0.0) || !(t_final >= 0.0) {
        return input("flow needs dt > 0 and T >= 0");
    }
    if w0.dim != m.dim {
        return input("phase point dimension differs from the medium");
    }
    let mut samples = vec![(0.0, *w0)];
    let r0 = w0.radius();
    let mut escape_time = None;
    let mut k = 0usize;
    let every = opts.record_every.max(1);
    let (last, t_end, drift) = walk(m, w0, sign, t_final, opts.dt, opts.energy_tol, |t, w| {
        k += 1;
        if k % every == 0 {
            samples.push((sign * t, *w));
        }
        if let Some(rg) = opts.stop_on_escape {
            if has_escaped(m, w, r0, rg, sign) {
                escape_time = Some(t);
                return true;
            }
        }
        false
    })?;
    if samples.last().map(|s| s.0) != Some(sign * t_end) {
        samples.push((sign * t_end, last));
    }
    Ok(Trajectory { samples, energy_drift: drift, classification: Classification::Undecided, escape_time })
}

#[derive(Clone, Copy, Debug, PartialEq)]
pub struct ClassifyOptions {
    pub r_g: f64,
    /// Ball that a trapped orbit never leaves.
    pub r_esc: f64,
    pub t_max: f64,
    pub flow: FlowOptions,
}

#[derive(Clone, Copy, Debug, PartialEq)]
pub enum DirectionStatus {
    Escaped(f64),
    Bounded,
    Unknown,
}

/// Status of one recorded half-orbit: escaped if the predicate fired,
/// bounded if it stayed in the `r_esc` ball for the whole span.
pub fn direction_status(m: &MediumSpec, traj: &Trajectory, r_g: f64, r_esc: f64, t_max: f64) -> DirectionStatus {
    let Some(first) = traj.samples.first() else {
        return DirectionStatus::Unknown;
    };
    let r0 = first.1.radius();
    let sign = if traj.samples.last().map(|s| s.0 < 0.0).unwrap_or(false) { -1.0 } else { 1.0 };
    for (t, w) in &traj.samples[1..] {
        if has_escaped(m, w, r0, r_g, sign) {
            return DirectionStatus::Escaped(t.abs());
        }
    }
    let span = traj.samples.last().map(|s| s.0.abs()).unwrap_or(0.0);
    if span + 1e-9 >= t_max && traj.samples.iter().all(|(_, w)| w.radius() <= r_esc) {
        DirectionStatus::Bounded
    } else {
        DirectionStatus::Unknown
    }
}

pub fn combine(forward: DirectionStatus, backward: DirectionStatus) -> Classification {
    use DirectionStatus::*;
    match (forward, backward) {
        (Escaped(_), Escaped(_)) => Classification::Nontrapped,
        (Escaped(_), _) => Classification::ForwardNontrapped,
        (_, Escaped(_)) => Classification::BackwardNontrapped,
        (Bounded, Bounded) => Classification::Trapped,
        _ => Classification::Undecided,
    }
}

/// Integrates both half-orbits (with early stop on escape) and classifies.
pub fn classify_trajectory(
    m: &MediumSpec,
    w0: &PhasePoint,
    opts: &ClassifyOptions,
) -> Result<(Classification, Trajectory, Trajectory)> {
    if opts.r_esc < opts.r_g {
        return input("escape ball must contain the convexity radius");
    }
    let fo = FlowOptions { stop_on_escape: Some(opts.r_g), ..opts.flow };
    let mut fwd = integrate_directed(m, w0, 1.0, opts.t_max, &fo)?;
    let mut bwd = integrate_directed(m, w0, -1.0, opts.t_max, &fo)?;
    let f = direction_status(m, &fwd, opts.r_g, opts.r_esc, opts.t_max);
    let b = direction_status(m, &bwd, opts.r_g, opts.r_esc, opts.t_max);
    let c = combine(f, b);
    fwd.classification = c;
    bwd.classification = c;
    if let DirectionStatus::Escaped(t) = f {
        fwd.escape_time = Some(t);
    }
    if let DirectionStatus::Escaped(t) = b {
        bwd.escape_time = Some(t);
    }
    Ok((c, fwd, bwd))
}

/// Radius beyond which the convexity `d^2|X|^2/dt^2 > 4 |G xi|^2` held at
/// every sample, times a safety factor 2. The second derivative is taken by
/// differencing `d|X|^2/dt` along the flow.
pub fn convexity_radius(m: &MediumSpec, r_max: f64, radial_step: f64, per_sphere: usize) -> f64 {
    let d = m.dim;
    let dirs = sphere_points(d, 1.0, per_sphere);
    let delta = 1e-4;
    let mut worst: f64 = 0.0;
    let mut r = radial_step;
    while r <= r_max {
        for x in sphere_points(d, r, per_sphere) {
            for xi in &dirs {
                let w = PhasePoint::new(&x, xi).expect("finite");
                let fwd = rk4_step(m, &w, delta);
                let bwd = rk4_step(m, &w, -delta);
                let second = (radial_rate(m, &fwd) - radial_rate(m, &bwd)) / (2.0 * delta);
                let g = m.metric_at(&x).apply(xi);
                let gxi2: f64 = g[..d].iter().map(|v| v * v).sum();
                if second <= 4.0 * gxi2 {
                    worst = worst.max(r);
                }
            }
        }
        r += radial_step;
    }
    2.0 * worst
}

/// Seeded uniform samples of `p^{-1}(I)` with `|x| <= R`.
pub fn sample_energy_shell(m: &MediumSpec, energy: (f64, f64), r: f64, count: usize, seed: u64) -> Result<Vec<PhasePoint>> {
    if !(energy.0 > 0.0) || energy.1 < energy.0 {
        return input("energy interval must be a compact subset of (0, inf)");
    }
    let d = m.dim;
    let mut rng = ChaCha8Rng::seed_from_u64(seed);
    let cube = |rng: &mut ChaCha8Rng| -> [f64; MAX_DIM] {
        let mut v = [0.0; MAX_DIM];
        for c in v.iter_mut().take(d) {
            *c = rng.random_range(-1.0..1.0);
        }
        v
    };
    let norm = |v: &[f64; MAX_DIM]| v.iter().map(|a| a * a).sum::<f64>().sqrt();
    let mut out = Vec::with_capacity(count);
    while out.len() < count {
        let x = cube(&mut rng);
        if norm(&x) > 1.0 {
            continue;
        }
        let dir = cube(&mut rng);
        let nd = norm(&dir);
        if nd > 1.0 || nd < 1e-3 {
            continue;
        }
        let e = rng.random_range(energy.0..=energy.1);
        let xs: Vec<f64> = x[..d].iter().map(|v| v * r).collect();
        let u: Vec<f64> = dir[..d].iter().map(|v| v / nd).collect();
        let q = m.metric_at(&xs).quad(&u);
        let s = (e / q).sqrt();
        let xi: Vec<f64> = u.iter().map(|v| v * s).collect();
        out.push(PhasePoint::new(&xs, &xi)?);
    }
    Ok(out)
}
