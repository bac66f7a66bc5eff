//! Does every trapped or semi-trapped sample meet the damping?

use rayon::prelude::*;

use super::{combine, has_escaped, sample_energy_shell, walk, Classification, DirectionStatus, FlowOptions, PhasePoint};
use crate::error::Result;
use crate::medium::MediumSpec;

#[derive(Clone, Copy, Debug, PartialEq)]
pub struct ControlOptions {
    pub samples: usize,
    pub radius: f64,
    pub t_max: f64,
    pub r_g: f64,
    pub r_esc: f64,
    pub threshold: f64,
    /// Above this fraction of undecided samples the report is inconclusive.
    pub max_undecided: f64,
    pub seed: u64,
    pub flow: FlowOptions,
}

impl ControlOptions {
    pub fn new(r_g: f64, radius: f64) -> Self {
        Self {
            samples: 1000,
            radius,
            t_max: 50.0,
            r_g,
            r_esc: r_g.max(radius) + 1.0,
            threshold: 1e-8,
            max_undecided: 0.02,
            seed: 0x5eed,
            flow: FlowOptions { dt: 5e-3, ..FlowOptions::default() },
        }
    }
}

#[derive(Clone, Debug, PartialEq)]
pub struct ControlReport {
    pub samples: usize,
    /// Trapped or semi-trapped samples.
    pub trapped: usize,
    pub controlled: usize,
    pub undecided: usize,
    /// Smallest `max_t a(X(t))` over the trapped samples.
    pub worst_margin: f64,
    pub fraction_controlled: f64,
    pub inconclusive: bool,
    pub pass: bool,
    /// First uncontrolled sample, if any.
    pub failure: Option<PhasePoint>,
}

/// Half-orbit summary: escape status and the largest damping seen.
pub(crate) fn half_orbit(
    m: &MediumSpec,
    w: &PhasePoint,
    sign: f64,
    t_max: f64,
    r_g: f64,
    r_esc: f64,
    flow: &FlowOptions,
) -> Result<(DirectionStatus, f64)> {
    let r0 = w.radius();
    let mut max_a = m.absorption_at(w.pos());
    let mut escaped = None;
    let mut inside = w.radius() <= r_esc;
    let (_, t_end, _) = walk(m, w, sign, t_max, flow.dt, flow.energy_tol, |t, s| {
        max_a = max_a.max(m.absorption_at(s.pos()));
        inside &= s.radius() <= r_esc;
        if has_escaped(m, s, r0, r_g, sign) {
            escaped = Some(t);
            return true;
        }
        false
    })?;
    let status = match escaped {
        Some(t) => DirectionStatus::Escaped(t),
        None if inside && t_end + 1e-9 >= t_max => DirectionStatus::Bounded,
        None => DirectionStatus::Unknown,
    };
    Ok((status, max_a))
}

pub fn geometric_control_check(m: &MediumSpec, energy: (f64, f64), opts: &ControlOptions) -> Result<ControlReport> {
    let shell = sample_energy_shell(m, energy, opts.radius, opts.samples, opts.seed)?;
    let rows: Vec<Result<(Classification, f64, PhasePoint)>> = shell
        .par_iter()
        .map(|w| {
            let (f, fa) = half_orbit(m, w, 1.0, opts.t_max, opts.r_g, opts.r_esc, &opts.flow)?;
            let (b, ba) = half_orbit(m, w, -1.0, opts.t_max, opts.r_g, opts.r_esc, &opts.flow)?;
            let c = combine(f, b);
            // Damping seen on the bounded half-orbits.
            let mut seen: f64 = 0.0;
            if f == DirectionStatus::Bounded {
                seen = seen.max(fa);
            }
            if b == DirectionStatus::Bounded {
                seen = seen.max(ba);
            }
            Ok((c, seen, *w))
        })
        .collect();
    let mut rep = ControlReport {
        samples: shell.len(),
        trapped: 0,
        controlled: 0,
        undecided: 0,
        worst_margin: f64::INFINITY,
        fraction_controlled: 1.0,
        inconclusive: false,
        pass: true,
        failure: None,
    };
    for r in rows {
        let (c, seen, w) = r?;
        match c {
            Classification::Undecided => rep.undecided += 1,
            Classification::Nontrapped => {}
            _ => {
                rep.trapped += 1;
                rep.worst_margin = rep.worst_margin.min(seen);
                if seen > opts.threshold {
                    rep.controlled += 1;
                } else if rep.failure.is_none() {
                    rep.failure = Some(w);
                }
            }
        }
    }
    if rep.trapped > 0 {
        rep.fraction_controlled = rep.controlled as f64 / rep.trapped as f64;
    }
    rep.inconclusive = rep.undecided as f64 > opts.max_undecided * rep.samples as f64;
    rep.pass = rep.controlled == rep.trapped && !rep.inconclusive;
    Ok(rep)
}
