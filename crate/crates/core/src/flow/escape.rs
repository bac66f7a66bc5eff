//! Escape function `f = f_0 + sum_j C_j f_j` with `f_0 = <x, xi>` and
//! bump integrals `f_j` along the flow, and the bracket check
//! `{p, f} + beta a >= 4 c_0`.

use std::io::Write;

use rayon::prelude::*;

use super::control::half_orbit;
use super::{hamiltonian, radial_rate, rk4_step, walk, DirectionStatus, FlowOptions, PhasePoint};
use crate::error::{LabError, Result};
use crate::medium::MediumSpec;

#[derive(Clone, Copy, Debug, PartialEq, Eq)]
pub enum BumpKind {
    /// `int_0^{t_w} g o phi^{-t}`; forward image of the support lands in `{a > 0}`.
    Trapped,
    /// `int_0^inf g o phi^{-t}` for backward-escaping centres.
    Outgoing,
    /// `-int_0^inf g o phi^{t}` for forward-escaping centres.
    Incoming,
}

impl BumpKind {
    pub fn as_str(&self) -> &'static str {
        match self {
            BumpKind::Trapped => "trapped",
            BumpKind::Outgoing => "outgoing",
            BumpKind::Incoming => "incoming",
        }
    }
}

#[derive(Clone, Copy, Debug, PartialEq)]
pub struct Bump {
    pub center: PhasePoint,
    pub radius: f64,
    pub t_w: f64,
    pub kind: BumpKind,
    pub weight: f64,
    pub beta_w: f64,
}

fn cutoff(s: f64) -> f64 {
    if s <= 0.5 {
        1.0
    } else if s >= 1.0 {
        0.0
    } else {
        let u = 2.0 * (s - 0.5);
        1.0 - u * u * u * (10.0 - 15.0 * u + 6.0 * u * u)
    }
}

impl Bump {
    /// Product smoothstep in every phase-space coordinate; 1 on the inner
    /// half box, 0 outside the box of half-side `radius`.
    pub fn g(&self, w: &PhasePoint) -> f64 {
        let mut v = 1.0;
        for j in 0..w.dim {
            let a = (w.x[j] - self.center.x[j]).abs() / self.radius;
            let b = (w.xi[j] - self.center.xi[j]).abs() / self.radius;
            if a >= 1.0 || b >= 1.0 {
                return 0.0;
            }
            v *= cutoff(a) * cutoff(b);
        }
        v
    }

    /// Largest `|x|` on the support.
    fn support_radius(&self) -> f64 {
        self.center.radius() + self.radius * (self.center.dim as f64).sqrt()
    }

    fn axis_points(&self) -> Vec<PhasePoint> {
        let mut out = vec![self.center];
        for j in 0..self.center.dim {
            for s in [-1.0, 1.0] {
                let mut p = self.center;
                p.x[j] += s * self.radius;
                out.push(p);
                let mut p = self.center;
                p.xi[j] += s * self.radius;
                out.push(p);
            }
        }
        out
    }
}

#[derive(Clone, Copy, Debug, PartialEq)]
pub struct EscapeParams {
    pub c_b: f64,
    pub c_inf: f64,
    /// Samples with `{p, f_0} < eps p` need a bump.
    pub eps: f64,
    pub radius: f64,
    pub t_max: f64,
    pub r_g: f64,
    pub dt: f64,
    pub delta: f64,
    pub energy_tol: f64,
}

impl EscapeParams {
    pub fn new(r_g: f64) -> Self {
        Self { c_b: 1.0, c_inf: 1.0, eps: 0.5, radius: 1.0, t_max: 50.0, r_g, dt: 5e-3, delta: 1e-4, energy_tol: 1e-6 }
    }
}

#[derive(Clone, Debug, PartialEq)]
pub struct EscapeFunction {
    pub beta: f64,
    pub c0: f64,
    pub bumps: Vec<Bump>,
    /// Convexity radius used for the escape truncation.
    pub r_g: f64,
    pub dt: f64,
    pub t_cap: f64,
    pub energy_tol: f64,
}

impl EscapeFunction {
    /// `f_0` alone.
    pub fn free(r_g: f64) -> Self {
        Self { beta: 0.0, c0: 0.0, bumps: Vec::new(), r_g, dt: 5e-3, t_cap: 50.0, energy_tol: 1e-6 }
    }

    pub fn eval(&self, m: &MediumSpec, w: &PhasePoint) -> Result<f64> {
        Ok(w.x_dot_xi() + self.bump_part(m, w)?)
    }

    /// `sum_j C_j f_j(w)`; one backward and one forward orbit serve all bumps.
    pub fn bump_part(&self, m: &MediumSpec, w: &PhasePoint) -> Result<f64> {
        let back: Vec<&Bump> = self.bumps.iter().filter(|b| b.kind != BumpKind::Incoming).collect();
        let fwd: Vec<&Bump> = self.bumps.iter().filter(|b| b.kind == BumpKind::Incoming).collect();
        Ok(self.orbit_integral(m, w, -1.0, &back)? - self.orbit_integral(m, w, 1.0, &fwd)?)
    }

    fn orbit_integral(&self, m: &MediumSpec, w: &PhasePoint, sign: f64, bumps: &[&Bump]) -> Result<f64> {
        if bumps.is_empty() {
            return Ok(0.0);
        }
        let mut breaks: Vec<f64> =
            bumps.iter().filter(|b| b.kind == BumpKind::Trapped && b.t_w > 0.0).map(|b| b.t_w).collect();
        breaks.sort_by(f64::total_cmp);
        let t_trapped = breaks.last().copied().unwrap_or(0.0);
        let open_ended = bumps.iter().any(|b| b.kind != BumpKind::Trapped);
        if t_trapped == 0.0 && !open_ended {
            return Ok(0.0);
        }
        let r_out = bumps
            .iter()
            .filter(|b| b.kind != BumpKind::Trapped)
            .map(|b| b.support_radius())
            .fold(self.r_g, f64::max);
        let p0 = hamiltonian(m, w);
        let scale = if p0 > 0.0 { p0 } else { 1.0 };

        let mut acc = vec![0.0; bumps.len()];
        let mut gprev: Vec<f64> = bumps.iter().map(|b| b.g(w)).collect();
        let mut open_done = false;
        let mut t = 0.0;
        let mut cur = *w;
        let mut next_break = 0usize;
        loop {
            let trapped_left = t < t_trapped;
            let open_left = open_ended && !open_done && t < self.t_cap;
            if !trapped_left && !open_left {
                break;
            }
            while next_break < breaks.len() && breaks[next_break] <= t {
                next_break += 1;
            }
            let mut h = self.dt;
            if next_break < breaks.len() {
                h = h.min(breaks[next_break] - t);
            }
            cur = rk4_step(m, &cur, sign * h);
            let tn = t + h;
            if ((hamiltonian(m, &cur) - p0) / scale).abs() > self.energy_tol {
                return Err(LabError::EnergyDrift { drift: ((hamiltonian(m, &cur) - p0) / scale).abs(), tolerance: self.energy_tol });
            }
            for (k, b) in bumps.iter().enumerate() {
                let active = match b.kind {
                    BumpKind::Trapped => tn <= b.t_w + 1e-12,
                    _ => !open_done,
                };
                if !active {
                    continue;
                }
                let g = b.g(&cur);
                acc[k] += 0.5 * h * (gprev[k] + g);
                gprev[k] = g;
            }
            // Beyond the convexity radius and every open support, moving out: |X| only grows.
            if open_ended && cur.radius() >= r_out && sign * radial_rate(m, &cur) > 0.0 {
                open_done = true;
            }
            t = tn;
        }
        Ok(bumps.iter().zip(&acc).map(|(b, v)| b.weight * v).sum())
    }
}

/// `{p, f}(w) = (f(phi^D w) - f(phi^{-D} w)) / 2D`
pub fn poisson_bracket(f: &EscapeFunction, m: &MediumSpec, w: &PhasePoint, delta: f64) -> Result<f64> {
    let plus = rk4_step(m, w, delta);
    let minus = rk4_step(m, w, -delta);
    Ok((f.eval(m, &plus)? - f.eval(m, &minus)?) / (2.0 * delta))
}

/// Forward orbit summary: first time `a >= max a / 2`, and `max a`.
fn damping_time(m: &MediumSpec, w: &PhasePoint, params: &EscapeParams) -> Result<(f64, f64)> {
    let mut series = vec![(0.0, m.absorption_at(w.pos()))];
    walk(m, w, 1.0, params.t_max, params.dt, params.energy_tol, |t, s| {
        series.push((t, m.absorption_at(s.pos())));
        false
    })?;
    let max_a = series.iter().map(|s| s.1).fold(0.0, f64::max);
    let t_w = series.iter().find(|s| s.1 >= 0.5 * max_a).map(|s| s.0).unwrap_or(0.0);
    Ok((t_w, max_a))
}

fn describe(w: &PhasePoint) -> String {
    format!("x = {:?}, xi = {:?}", w.pos(), w.mom())
}

/// Greedy cover of the samples where `{p, f_0}` is small. Each new bump is
/// centred at an uncovered sample: trapped type when the forward orbit meets
/// the damping, otherwise outgoing or incoming by the escaping direction.
pub fn build_escape_function(m: &MediumSpec, samples: &[PhasePoint], params: &EscapeParams) -> Result<EscapeFunction> {
    let mut f = EscapeFunction {
        beta: 0.0,
        c0: 0.0,
        bumps: Vec::new(),
        r_g: params.r_g,
        dt: params.dt,
        t_cap: params.t_max,
        energy_tol: params.energy_tol,
    };
    let f0 = EscapeFunction { bumps: Vec::new(), ..f.clone() };
    let flow = FlowOptions { dt: params.dt, energy_tol: params.energy_tol, ..Default::default() };
    let r_esc = params.r_g + samples.iter().map(|w| w.radius()).fold(0.0, f64::max) + 1.0;

    for w in samples {
        let p = hamiltonian(m, w);
        if poisson_bracket(&f0, m, w, params.delta)? >= params.eps * p {
            continue;
        }
        if f.bumps.iter().any(|b| b.g(w) == 1.0) {
            continue;
        }
        let (t_w, max_a) = damping_time(m, w, params)?;
        let mut radius = params.radius;
        let bump = if max_a > 1e-8 {
            let mut found = None;
            for _ in 0..5 {
                let trial = Bump { center: *w, radius, t_w, kind: BumpKind::Trapped, weight: params.c_b, beta_w: 0.0 };
                let a_min = trial
                    .axis_points()
                    .iter()
                    .map(|y| m.absorption_at(super::flow_to(m, y, t_w, params.dt).pos()))
                    .fold(f64::INFINITY, f64::min);
                if a_min > 1e-8 {
                    found = Some(Bump { beta_w: 1.0 / a_min, ..trial });
                    break;
                }
                radius *= 0.5;
            }
            found.ok_or_else(|| LabError::Construction(format!("no damped landing zone around {}", describe(w))))?
        } else {
            let (b, _) = half_orbit(m, w, -1.0, params.t_max, params.r_g, r_esc, &flow)?;
            let (fw, _) = half_orbit(m, w, 1.0, params.t_max, params.r_g, r_esc, &flow)?;
            let (kind, sign, t_esc) = match (b, fw) {
                (DirectionStatus::Escaped(t), _) => (BumpKind::Outgoing, -1.0, t),
                (_, DirectionStatus::Escaped(t)) => (BumpKind::Incoming, 1.0, t),
                _ => {
                    return Err(LabError::Construction(format!(
                        "trapped sample never meets the damping within T = {}: {}",
                        params.t_max,
                        describe(w)
                    )))
                }
            };
            let mut found = None;
            for _ in 0..5 {
                let trial = Bump { center: *w, radius, t_w: t_esc, kind, weight: params.c_inf, beta_w: 0.0 };
                let all_escape = trial.axis_points().iter().try_fold(true, |ok, y| {
                    let (s, _) = half_orbit(m, y, sign, params.t_max, params.r_g, r_esc, &flow)?;
                    Ok::<bool, LabError>(ok && matches!(s, DirectionStatus::Escaped(_)))
                })?;
                if all_escape {
                    found = Some(trial);
                    break;
                }
                radius *= 0.5;
            }
            found.ok_or_else(|| LabError::Construction(format!("no escaping neighbourhood around {}", describe(w))))?
        };
        f.bumps.push(bump);
    }
    f.beta = f.bumps.iter().filter(|b| b.kind == BumpKind::Trapped).map(|b| b.weight * b.beta_w).sum();

    let lows: Vec<Result<f64>> = samples
        .par_iter()
        .map(|w| Ok(poisson_bracket(&f, m, w, params.delta)? + f.beta * m.absorption_at(w.pos())))
        .collect();
    let mut low = f64::INFINITY;
    for v in lows {
        low = low.min(v?);
    }
    if !(low > 0.0) {
        return Err(LabError::Construction(format!("bracket plus damping reaches {low:.3e} on the samples")));
    }
    f.c0 = low / 8.0;
    Ok(f)
}

#[derive(Clone, Copy, Debug, PartialEq)]
pub struct BracketRow {
    pub index: usize,
    pub bracket: f64,
    pub a: f64,
    /// `{p, f} + beta a - 4 c_0`
    pub margin: f64,
}

#[derive(Clone, Debug, PartialEq)]
pub struct BracketReport {
    pub rows: Vec<BracketRow>,
    pub worst_margin: f64,
    /// `min({p, f} + beta a) / 4` over the samples.
    pub c0_achieved: f64,
    pub pass: bool,
}

impl BracketReport {
    pub fn write_csv<W: Write>(&self, out: W) -> Result<()> {
        let mut w = csv::Writer::from_writer(out);
        w.write_record(["sample", "bracket", "a", "margin"])?;
        for r in &self.rows {
            w.write_record([
                r.index.to_string(),
                format!("{:.9e}", r.bracket),
                format!("{:.9e}", r.a),
                format!("{:.9e}", r.margin),
            ])?;
        }
        w.flush()?;
        Ok(())
    }
}

pub fn poisson_bracket_check(f: &EscapeFunction, m: &MediumSpec, samples: &[PhasePoint], delta: f64) -> Result<BracketReport> {
    let rows: Vec<Result<BracketRow>> = samples
        .par_iter()
        .enumerate()
        .map(|(index, w)| {
            let bracket = poisson_bracket(f, m, w, delta)?;
            let a = m.absorption_at(w.pos());
            Ok(BracketRow { index, bracket, a, margin: bracket + f.beta * a - 4.0 * f.c0 })
        })
        .collect();
    let rows = rows.into_iter().collect::<Result<Vec<_>>>()?;
    let worst_margin = rows.iter().map(|r| r.margin).fold(f64::INFINITY, f64::min);
    let c0_achieved = rows.iter().map(|r| (r.bracket + f.beta * r.a) / 4.0).fold(f64::INFINITY, f64::min);
    Ok(BracketReport { pass: worst_margin >= -1e-9 && c0_achieved > 0.0, rows, worst_margin, c0_achieved })
}
