//! Weighted resolvent norms along `z = tau + i mu(tau)` and log-log fits.

use std::io::Write;

use rayon::prelude::*;

use crate::discretize::{assemble_absorption, assemble_h0, assemble_sponge, Grid, SpongeSpec};
use crate::error::{input, LabError, Result};
use crate::medium::MediumSpec;
use crate::resolvent::{weighted_norm_estimate, NormEstimate, NormOptions, ResolventSystem, SolverConfig, WeightedNormSpec};
use crate::sparse::C64;

#[derive(Clone, Copy, Debug, PartialEq, Eq)]
pub enum Regime {
    Low,
    Intermediate,
    High,
}

impl Regime {
    pub fn as_str(&self) -> &'static str {
        match self {
            Regime::Low => "low",
            Regime::Intermediate => "intermediate",
            Regime::High => "high",
        }
    }

    pub fn parse(s: &str) -> Result<Self> {
        match s {
            "low" => Ok(Regime::Low),
            "intermediate" => Ok(Regime::Intermediate),
            "high" => Ok(Regime::High),
            other => input(format!("unknown regime '{other}'")),
        }
    }

    /// Exponent of `|z|` in the bound for `R^{(n)}` in dimension `d`.
    pub fn predicted_exponent(&self, d: usize, n: usize) -> f64 {
        match self {
            Regime::Low => d as f64 - 2.0 - n as f64,
            Regime::Intermediate => 0.0,
            Regime::High => -1.0,
        }
    }
}

#[derive(Clone, Copy, Debug, PartialEq)]
pub enum MuSpec {
    /// `mu = c tau`
    Proportional(f64),
    Fixed(f64),
}

impl MuSpec {
    pub fn at(&self, tau: f64) -> f64 {
        match *self {
            MuSpec::Proportional(c) => c * tau,
            MuSpec::Fixed(m) => m,
        }
    }
}

impl Default for MuSpec {
    fn default() -> Self {
        MuSpec::Proportional(0.05)
    }
}

#[derive(Clone, Debug, PartialEq)]
pub struct SweepPlan {
    pub regime: Regime,
    pub tau_values: Vec<f64>,
    pub mu: MuSpec,
    pub norm: WeightedNormSpec,
    /// Smallest admissible `tau L` in the low regime.
    pub low_threshold: f64,
    /// Largest trusted `tau h`.
    pub dispersion_limit: f64,
    pub workers: usize,
}

impl SweepPlan {
    pub fn new(regime: Regime, tau_values: Vec<f64>, norm: WeightedNormSpec) -> Self {
        Self {
            regime,
            tau_values,
            mu: MuSpec::default(),
            norm,
            low_threshold: 4.0,
            dispersion_limit: 0.5,
            workers: 1,
        }
    }

    pub fn validate(&self, grid: &Grid) -> Result<()> {
        if self.tau_values.is_empty() {
            return input("sweep needs at least one tau value");
        }
        if self.tau_values.iter().any(|t| !(*t > 0.0) || !t.is_finite()) {
            return input("tau values must be positive");
        }
        if self.tau_values.windows(2).any(|w| w[1] <= w[0]) {
            return input("tau values must be strictly increasing");
        }
        if self.tau_values.iter().any(|&t| !(self.mu.at(t) > 0.0)) {
            return input("mu must be positive at every tau");
        }
        if self.regime == Regime::Low && self.tau_values[0] * grid.half_width < self.low_threshold {
            return input(format!(
                "low-frequency sweep starts at tau L = {:.3} below the trusted threshold {}",
                self.tau_values[0] * grid.half_width,
                self.low_threshold
            ));
        }
        Ok(())
    }

    /// Range of `tau` where the truncated grid is trusted for this regime.
    pub fn trust_region(&self, grid: &Grid) -> (f64, f64) {
        match self.regime {
            Regime::Low => (self.low_threshold / grid.half_width, f64::INFINITY),
            Regime::High => (0.0, self.dispersion_limit / grid.h),
            Regime::Intermediate => (0.0, f64::INFINITY),
        }
    }
}

#[derive(Clone, Debug, PartialEq)]
pub struct SweepPoint {
    pub tau: f64,
    pub mu: f64,
    pub estimate: std::result::Result<NormEstimate, String>,
}

impl SweepPoint {
    pub fn value(&self) -> Option<f64> {
        self.estimate.as_ref().ok().map(|e| e.value)
    }
}

#[derive(Clone, Debug)]
pub struct SweepResult {
    pub plan: SweepPlan,
    pub grid: Grid,
    pub points: Vec<SweepPoint>,
}

impl SweepResult {
    pub fn values(&self) -> Vec<(f64, f64)> {
        self.points.iter().filter_map(|p| p.value().map(|v| (p.tau, v))).collect()
    }

    /// max/min over the successful points.
    pub fn spread(&self) -> f64 {
        let v: Vec<f64> = self.values().into_iter().map(|p| p.1).collect();
        let max = v.iter().copied().fold(f64::NEG_INFINITY, f64::max);
        let min = v.iter().copied().fold(f64::INFINITY, f64::min);
        max / min
    }

    pub fn write_csv<W: Write>(&self, out: W) -> Result<()> {
        let mut w = csv::Writer::from_writer(out);
        w.write_record(["tau", "mu", "n", "delta1", "delta2", "deriv", "norm_estimate", "residual", "iterations"])?;
        let nspec = &self.plan.norm;
        let deriv = nspec.deriv.map(|a| a.to_string()).unwrap_or_else(|| "none".into());
        for p in &self.points {
            let (val, res, its) = match &p.estimate {
                Ok(e) => (format!("{:.12e}", e.value), format!("{:.3e}", e.residual), e.solver_iterations.to_string()),
                Err(_) => ("nan".into(), "nan".into(), "0".into()),
            };
            w.write_record([
                format!("{}", p.tau),
                format!("{}", p.mu),
                nspec.n.to_string(),
                format!("{}", nspec.delta1),
                format!("{}", nspec.delta2),
                deriv.clone(),
                val,
                res,
                its,
            ])?;
        }
        w.flush()?;
        Ok(())
    }
}

pub fn build_system(
    medium: &MediumSpec,
    grid: &Grid,
    sponge: Option<&SpongeSpec>,
    solver: SolverConfig,
) -> Result<ResolventSystem> {
    let h0 = assemble_h0(medium, grid)?;
    let a = assemble_absorption(medium, grid)?;
    let s = sponge.map(|s| assemble_sponge(s, grid)).transpose()?;
    ResolventSystem::new(&h0, &a, s.as_ref(), solver)
}

pub fn run_sweep(
    plan: &SweepPlan,
    medium: &MediumSpec,
    grid: &Grid,
    sponge: Option<&SpongeSpec>,
    solver: SolverConfig,
    opts: &NormOptions,
) -> Result<SweepResult> {
    plan.validate(grid)?;
    let system = build_system(medium, grid, sponge, solver)?;
    run_sweep_on(plan, &system, opts)
}

/// Points are evaluated in parallel and merged in `tau` order; a failed
/// point is recorded, and only a sweep with no successful point is an error.
pub fn run_sweep_on(plan: &SweepPlan, system: &ResolventSystem, opts: &NormOptions) -> Result<SweepResult> {
    plan.validate(&system.grid)?;
    let eval = |&tau: &f64| {
        let mu = plan.mu.at(tau);
        let estimate =
            weighted_norm_estimate(system, C64::new(tau, mu), &plan.norm, opts).map_err(|e| e.to_string());
        SweepPoint { tau, mu, estimate }
    };
    let points: Vec<SweepPoint> = if plan.workers <= 1 {
        plan.tau_values.iter().map(eval).collect()
    } else {
        let pool = rayon::ThreadPoolBuilder::new()
            .num_threads(plan.workers)
            .build()
            .map_err(|e| LabError::Input(e.to_string()))?;
        pool.install(|| plan.tau_values.par_iter().map(eval).collect())
    };
    if points.iter().all(|p| p.estimate.is_err()) {
        let first = points[0].estimate.clone().err().unwrap_or_default();
        return Err(LabError::SweepFailed(first));
    }
    Ok(SweepResult { plan: plan.clone(), grid: system.grid, points })
}

#[derive(Clone, Copy, Debug, PartialEq)]
pub struct PowerLawFit {
    pub exponent: f64,
    pub intercept: f64,
    pub r_squared: f64,
    pub window: (f64, f64),
    pub points: usize,
}

/// Least squares of `log y` against `log x` over `x` in the window.
pub fn fit_log_log(data: &[(f64, f64)], window: (f64, f64)) -> Result<PowerLawFit> {
    let pts: Vec<(f64, f64)> = data
        .iter()
        .filter(|(x, y)| *x >= window.0 && *x <= window.1 && *x > 0.0 && *y > 0.0 && y.is_finite())
        .map(|(x, y)| (x.ln(), y.ln()))
        .collect();
    if pts.len() < 4 {
        return input(format!("power-law fit needs 4 points in [{}, {}], found {}", window.0, window.1, pts.len()));
    }
    let n = pts.len() as f64;
    let mx = pts.iter().map(|p| p.0).sum::<f64>() / n;
    let my = pts.iter().map(|p| p.1).sum::<f64>() / n;
    let sxx: f64 = pts.iter().map(|p| (p.0 - mx).powi(2)).sum();
    let sxy: f64 = pts.iter().map(|p| (p.0 - mx) * (p.1 - my)).sum();
    let syy: f64 = pts.iter().map(|p| (p.1 - my).powi(2)).sum();
    if sxx == 0.0 {
        return input("power-law fit needs distinct abscissae");
    }
    let slope = sxy / sxx;
    let intercept = my - slope * mx;
    let r_squared = if syy == 0.0 { 1.0 } else { ((sxy * sxy) / (sxx * syy)).clamp(0.0, 1.0) };
    Ok(PowerLawFit { exponent: slope, intercept, r_squared, window, points: pts.len() })
}

pub fn fit_power_law(result: &SweepResult, window: (f64, f64)) -> Result<PowerLawFit> {
    fit_log_log(&result.values(), window)
}

/// Fit restricted to the intersection of `window` with the regime's trust region.
pub fn fit_trusted(result: &SweepResult, window: (f64, f64)) -> Result<PowerLawFit> {
    let (lo, hi) = result.plan.trust_region(&result.grid);
    fit_power_law(result, (window.0.max(lo), window.1.min(hi)))
}

pub fn write_fit_csv<W: Write>(out: W, rows: &[(Regime, PowerLawFit, f64)]) -> Result<()> {
    let mut w = csv::Writer::from_writer(out);
    w.write_record(["regime", "window_lo", "window_hi", "exponent", "r2", "predicted_exponent"])?;
    for (regime, fit, predicted) in rows {
        w.write_record([
            regime.as_str().to_string(),
            format!("{}", fit.window.0),
            format!("{}", fit.window.1),
            format!("{:.6}", fit.exponent),
            format!("{:.6}", fit.r_squared),
            format!("{predicted}"),
        ])?;
    }
    w.flush()?;
    Ok(())
}

/// `n` points geometrically spaced on `[lo, hi]`.
pub fn geometric_taus(lo: f64, hi: f64, n: usize) -> Vec<f64> {
    if n == 1 {
        return vec![lo];
    }
    (0..n).map(|k| lo * (hi / lo).powf(k as f64 / (n - 1) as f64)).collect()
}
