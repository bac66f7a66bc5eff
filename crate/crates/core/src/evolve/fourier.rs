//! Time-domain Laplace transform versus the resolvent.

use super::{Leapfrog, WaveEquation};
use crate::error::{input, Result};
use crate::resolvent::{apply_resolvent, ResolventSystem, SolverConfig};
use crate::sparse::{norm2, C64};

#[derive(Clone, Copy, Debug, PartialEq)]
pub struct LaplaceReport {
    pub z: C64,
    /// `|U - R(z)(a u0 - i z u0 + u1)| / |R(z)(...)|`
    pub rel_error: f64,
    /// Same for the velocity: `V` against `-u0 - i z R(z)(...)`.
    pub velocity_error: f64,
    pub reference_norm: f64,
    pub steps: usize,
}

/// `int_0^T e^{i z t} u(t) dt` by the trapezoid rule on the leapfrog
/// samples, compared with the resolvent of the same semi-discrete system.
pub fn laplace_transform_check(
    eq: &WaveEquation,
    u0: &[f64],
    u1: &[f64],
    tau: f64,
    mu: f64,
    t_final: f64,
    dt: f64,
) -> Result<LaplaceReport> {
    if !(mu > 0.0) || !(t_final > 0.0) {
        return input("Laplace check needs mu > 0 and T > 0");
    }
    let z = C64::new(tau, mu);
    let steps = (t_final / dt).round() as usize;
    let n = eq.grid.len();
    let mut lf = Leapfrog::new(eq, u0, u1, dt)?;
    let mut uhat = vec![C64::new(0.0, 0.0); n];
    let mut vhat = vec![C64::new(0.0, 0.0); n];
    for k in 0..=steps {
        let w = if k == 0 || k == steps { 0.5 * dt } else { dt };
        let e = (C64::i() * z * lf.time()).exp() * w;
        let v = lf.velocity();
        for i in 0..n {
            uhat[i] += e * lf.displacement()[i];
            vhat[i] += e * v[i];
        }
        if k < steps {
            lf.step();
        }
    }

    let system = ResolventSystem {
        grid: eq.grid,
        h: eq.h.map(|v| C64::new(v, 0.0)),
        absorption: eq.damping.clone(),
        config: SolverConfig::default(),
        sponge: false,
    };
    let rhs: Vec<C64> = (0..n).map(|i| eq.damping[i] * u0[i] - C64::i() * z * u0[i] + u1[i]).collect();
    let (r, _) = apply_resolvent(&system, z, &rhs)?;
    let vref: Vec<C64> = (0..n).map(|i| -u0[i] - C64::i() * z * r[i]).collect();

    let rel = |a: &[C64], b: &[C64]| {
        let d: Vec<C64> = a.iter().zip(b).map(|(x, y)| x - y).collect();
        let nb = norm2(b);
        if nb == 0.0 {
            norm2(&d)
        } else {
            norm2(&d) / nb
        }
    };
    Ok(LaplaceReport {
        z,
        rel_error: rel(&uhat, &r),
        velocity_error: rel(&vhat, &vref),
        reference_norm: norm2(&r),
        steps,
    })
}
