//! Time stepping of `u'' + H u + a u' = 0` and energy bookkeeping.
//!
//! Leapfrog with the damping treated implicitly (it is diagonal, so the
//! implicit part is a pointwise division):
//!
//! `(1 + a dt/2) u^{n+1} = (2 - dt^2 H) u^n - (1 - a dt/2) u^{n-1}`.
//!
//! The discrete energy is the staggered quantity
//! `E^{n+1/2} = |(u^{n+1} - u^n)/dt|^2 + <H u^{n+1}, u^n>`, which obeys
//! `E^{n+1/2} - E^{n-1/2} = -2 dt <a v^n, v^n>` exactly with the centred
//! velocity `v^n`.

mod block;
mod dyadic;
mod fourier;

use std::io::Write;

pub use block::{block_resolvent_check, BlockReport};
pub use dyadic::{build_dyadic_partition, DyadicPartition};
pub use fourier::{laplace_transform_check, LaplaceReport};

use crate::discretize::{DiscreteOperator, Grid, Role};
use crate::error::{input, LabError, Result};
use crate::medium::{japanese, MediumSpec};
use crate::sparse::{CsrMatrix, C64};
use crate::sweep::{fit_log_log, PowerLawFit};

pub const CFL_SAFETY: f64 = 0.9;

#[derive(Clone, Debug, PartialEq)]
pub struct WaveState {
    pub u: Vec<f64>,
    pub v: Vec<f64>,
    pub t: f64,
}

/// Real stiffness matrix plus the total damping (absorption and, when
/// present, the sponge ramp acting as extra damping).
#[derive(Clone, Debug)]
pub struct WaveEquation {
    pub grid: Grid,
    pub h: CsrMatrix<f64>,
    pub damping: Vec<f64>,
    /// Largest metric eigenvalue over the grid; sets the wave speed.
    pub max_metric: f64,
}

impl WaveEquation {
    pub fn new(
        h0: &DiscreteOperator,
        a: &DiscreteOperator,
        sponge: Option<&DiscreteOperator>,
        medium: &MediumSpec,
    ) -> Result<Self> {
        if h0.role != Role::H0 || a.role != Role::Absorption {
            return input("wave equation needs an H0 operator and an absorption multiplier");
        }
        if h0.matrix.max_imag() > 0.0 {
            return input("H0 must be real");
        }
        let mut damping: Vec<f64> = a.diagonal().iter().map(|v| v.re).collect();
        if let Some(s) = sponge {
            if s.role != Role::Sponge {
                return input("third operator must be a sponge");
            }
            for (d, v) in damping.iter_mut().zip(s.diagonal()) {
                *d += -v.im;
            }
        }
        if damping.iter().any(|&d| d < 0.0 || !d.is_finite()) {
            return input("damping must be finite and non-negative");
        }
        let max_metric = medium.max_metric_eig(h0.grid.points());
        Ok(Self { grid: h0.grid, h: h0.matrix.real_part(), damping, max_metric })
    }

    pub fn from_medium(medium: &MediumSpec, grid: &Grid, sponge: Option<&crate::discretize::SpongeSpec>) -> Result<Self> {
        let h0 = crate::discretize::assemble_h0(medium, grid)?;
        let a = crate::discretize::assemble_absorption(medium, grid)?;
        let s = sponge.map(|s| crate::discretize::assemble_sponge(s, grid)).transpose()?;
        Self::new(&h0, &a, s.as_ref(), medium)
    }

    pub fn wave_speed(&self) -> f64 {
        self.max_metric.sqrt()
    }

    pub fn cfl_limit(&self) -> f64 {
        CFL_SAFETY * self.grid.h / ((self.grid.dim as f64).sqrt() * self.wave_speed())
    }

    pub fn check_dt(&self, dt: f64) -> Result<()> {
        let limit = self.cfl_limit();
        if !(dt > 0.0) || dt > limit {
            return Err(LabError::Cfl { dt, limit });
        }
        Ok(())
    }

    /// `<H u, w> h^d`
    pub fn form(&self, u: &[f64], w: &[f64]) -> f64 {
        let hu = self.h.mul_vec(u);
        dotr(&hu, w) * self.grid.cell_volume()
    }
}

fn dotr(a: &[f64], b: &[f64]) -> f64 {
    a.iter().zip(b).map(|(x, y)| x * y).sum()
}

/// Three consecutive levels `u^{n-1}, u^n, u^{n+1}`; the state reported is
/// the middle one, so its velocity is centred.
#[derive(Clone, Debug)]
pub struct Leapfrog<'a> {
    eq: &'a WaveEquation,
    dt: f64,
    prev: Vec<f64>,
    cur: Vec<f64>,
    next: Vec<f64>,
    hu: Vec<f64>,
    steps: usize,
}

impl<'a> Leapfrog<'a> {
    pub fn new(eq: &'a WaveEquation, u0: &[f64], u1: &[f64], dt: f64) -> Result<Self> {
        eq.check_dt(dt)?;
        let n = eq.grid.len();
        if u0.len() != n || u1.len() != n {
            return input("initial data does not match the grid");
        }
        if u0.iter().chain(u1).any(|v| !v.is_finite()) {
            return input("initial data must be finite");
        }
        let hu = eq.h.mul_vec(u0);
        // Taylor start; u^{-1} is then chosen so the centred velocity at 0 is u1.
        let next: Vec<f64> = (0..n)
            .map(|i| u0[i] - 0.5 * dt * dt * hu[i] + dt * u1[i] - 0.5 * eq.damping[i] * dt * dt * u1[i])
            .collect();
        let prev: Vec<f64> = (0..n).map(|i| next[i] - 2.0 * dt * u1[i]).collect();
        Ok(Self { eq, dt, prev, cur: u0.to_vec(), next, hu: vec![0.0; n], steps: 0 })
    }

    pub fn time(&self) -> f64 {
        self.steps as f64 * self.dt
    }

    pub fn state(&self) -> WaveState {
        WaveState { u: self.cur.clone(), v: self.velocity(), t: self.time() }
    }

    pub fn velocity(&self) -> Vec<f64> {
        let c = 0.5 / self.dt;
        self.next.iter().zip(&self.prev).map(|(a, b)| c * (a - b)).collect()
    }

    pub fn displacement(&self) -> &[f64] {
        &self.cur
    }

    /// Staggered energy between the current level and the next.
    pub fn energy(&self) -> f64 {
        let vol = self.eq.grid.cell_volume();
        let kin: f64 = self.next.iter().zip(&self.cur).map(|(a, b)| ((a - b) / self.dt).powi(2)).sum();
        kin * vol + self.eq.form(&self.next, &self.cur)
    }

    /// `2 dt <a v, v> h^d` at the current level; the energy lost by the next step.
    pub fn dissipation(&self) -> f64 {
        let c = 0.5 / self.dt;
        let s: f64 = (0..self.cur.len())
            .map(|i| {
                let v = c * (self.next[i] - self.prev[i]);
                self.eq.damping[i] * v * v
            })
            .sum();
        2.0 * self.dt * s * self.eq.grid.cell_volume()
    }

    pub fn step(&mut self) {
        let dt = self.dt;
        let dt2 = dt * dt;
        std::mem::swap(&mut self.prev, &mut self.cur);
        std::mem::swap(&mut self.cur, &mut self.next);
        self.eq.h.mul_vec_into(&self.cur, &mut self.hu);
        for i in 0..self.cur.len() {
            let ad = 0.5 * self.eq.damping[i] * dt;
            self.next[i] = (2.0 * self.cur[i] - dt2 * self.hu[i] - (1.0 - ad) * self.prev[i]) / (1.0 + ad);
        }
        self.steps += 1;
    }
}

/// One step from `(u^n, v^n)`; the previous level is reconstructed from the
/// centred velocity by a Taylor step backwards.
pub fn step_wave(state: &WaveState, eq: &WaveEquation, dt: f64) -> Result<WaveState> {
    let mut lf = Leapfrog::new(eq, &state.u, &state.v, dt)?;
    lf.step();
    let mut s = lf.state();
    s.t += state.t;
    Ok(s)
}

#[derive(Clone, Debug, PartialEq)]
pub struct TraceOptions {
    pub t_final: f64,
    pub dt: f64,
    pub deltas: Vec<f64>,
    /// Record every this many steps.
    pub sample_every: usize,
    /// Radius of the initial data support, for the reflection time.
    pub data_radius: Option<f64>,
}

#[derive(Clone, Debug, PartialEq)]
pub struct EnergyTrace {
    pub times: Vec<f64>,
    pub global_energy: Vec<f64>,
    pub deltas: Vec<f64>,
    /// `local_energy[k][s]` for `deltas[k]` at sample `s`.
    pub local_energy: Vec<Vec<f64>>,
    pub dissipated: Vec<f64>,
    pub reflection_time: Option<f64>,
}

impl EnergyTrace {
    pub fn balance_error(&self) -> f64 {
        let e0 = self.global_energy[0];
        let last = self.times.len() - 1;
        (self.global_energy[last] + self.dissipated[last] - e0).abs()
    }

    /// Largest increase between consecutive samples.
    pub fn max_increase(&self) -> f64 {
        self.global_energy.windows(2).map(|w| w[1] - w[0]).fold(0.0, f64::max)
    }

    pub fn write_csv<W: Write>(&self, out: W) -> Result<()> {
        let mut w = csv::Writer::from_writer(out);
        let mut header = vec!["t".to_string(), "E_global".to_string()];
        header.extend(self.deltas.iter().map(|d| format!("E_local_{d}")));
        header.push("dissipated".into());
        w.write_record(&header)?;
        for s in 0..self.times.len() {
            let mut row = vec![format!("{:.6}", self.times[s]), format!("{:.12e}", self.global_energy[s])];
            row.extend(self.local_energy.iter().map(|l| format!("{:.12e}", l[s])));
            row.push(format!("{:.12e}", self.dissipated[s]));
            w.write_record(&row)?;
        }
        w.flush()?;
        Ok(())
    }
}

/// `|<x>^{-delta} grad u| + |<x>^{-delta} v|`, gradient by centred
/// differences and one-sided ones on the outermost nodes.
pub fn local_energy(grid: &Grid, u: &[f64], v: &[f64], delta: f64) -> f64 {
    let n = grid.n;
    let vol = grid.cell_volume();
    let mut grad2 = 0.0;
    let mut vel2 = 0.0;
    for idx in 0..grid.len() {
        let w = japanese(&grid.point(idx)).powf(-2.0 * delta);
        let mi = grid.multi_index(idx);
        let mut g2 = 0.0;
        for axis in 0..grid.dim {
            let s = grid.stride(axis);
            let i = mi[axis];
            let d = if n == 1 {
                0.0
            } else if i == 0 {
                (u[idx + s] - u[idx]) / grid.h
            } else if i == n - 1 {
                (u[idx] - u[idx - s]) / grid.h
            } else {
                (u[idx + s] - u[idx - s]) / (2.0 * grid.h)
            };
            g2 += d * d;
        }
        grad2 += w * g2;
        vel2 += w * v[idx] * v[idx];
    }
    (grad2 * vol).sqrt() + (vel2 * vol).sqrt()
}

/// Energies are recorded at `t_n = n dt` as the staggered value entering
/// step `n`, so `E(t_n) + dissipated(t_n)` telescopes exactly.
pub fn run_and_trace(eq: &WaveEquation, u0: &[f64], u1: &[f64], opts: &TraceOptions) -> Result<EnergyTrace> {
    if !(opts.t_final > 0.0) || opts.sample_every == 0 {
        return input("trace needs T > 0 and a positive sampling stride");
    }
    let mut lf = Leapfrog::new(eq, u0, u1, opts.dt)?;
    let steps = (opts.t_final / opts.dt).round() as usize;
    let mut tr = EnergyTrace {
        times: Vec::new(),
        global_energy: Vec::new(),
        deltas: opts.deltas.clone(),
        local_energy: vec![Vec::new(); opts.deltas.len()],
        dissipated: Vec::new(),
        reflection_time: opts
            .data_radius
            .map(|r| 2.0 * (eq.grid.half_width - r).max(0.0) / eq.wave_speed()),
    };
    let mut e_prev = energy_before_start(&lf);
    let mut dissipated = 0.0;
    for n in 0..=steps {
        if n % opts.sample_every == 0 || n == steps {
            tr.times.push(lf.time());
            tr.global_energy.push(e_prev);
            tr.dissipated.push(dissipated);
            let v = lf.velocity();
            for (k, &d) in opts.deltas.iter().enumerate() {
                tr.local_energy[k].push(local_energy(&eq.grid, lf.displacement(), &v, d));
            }
        }
        if n == steps {
            break;
        }
        let loss = lf.dissipation();
        let e = lf.energy();
        let scale = e_prev.abs().max(f64::MIN_POSITIVE);
        if !e.is_finite() || e - e_prev > 1e-6 * scale {
            return Err(LabError::Instability { time: lf.time(), growth: (e - e_prev) / scale });
        }
        dissipated += loss;
        e_prev = e;
        lf.step();
    }
    Ok(tr)
}

/// `E^{-1/2}`, the staggered energy of the pair `(u^{-1}, u^0)`.
fn energy_before_start(lf: &Leapfrog<'_>) -> f64 {
    let vol = lf.eq.grid.cell_volume();
    let kin: f64 = lf.cur.iter().zip(&lf.prev).map(|(a, b)| ((a - b) / lf.dt).powi(2)).sum();
    kin * vol + lf.eq.form(&lf.cur, &lf.prev)
}

/// Log-log fit of the local energy for `deltas[k]` over `window`, which
/// must end before the first boundary reflection.
pub fn decay_fit(trace: &EnergyTrace, k: usize, window: (f64, f64)) -> Result<PowerLawFit> {
    let series = trace.local_energy.get(k).ok_or_else(|| LabError::Input(format!("no local energy series {k}")))?;
    if let Some(tr) = trace.reflection_time {
        if window.1 > tr {
            return input(format!("fit window ends at {} after the reflection time {tr:.3}", window.1));
        }
    }
    let last = *trace.times.last().unwrap_or(&0.0);
    if window.0 >= window.1 || window.1 > last + 1e-12 {
        return input("fit window outside the trace");
    }
    let data: Vec<(f64, f64)> = trace.times.iter().copied().zip(series.iter().copied()).collect();
    fit_log_log(&data, window)
}

/// Real part of a complex grid function, for initial data built with the
/// complex helpers.
pub fn real(v: &[C64]) -> Vec<f64> {
    v.iter().map(|c| c.re).collect()
}
