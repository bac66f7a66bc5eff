//! Experiment configuration: TOML in, validated plan out.

use std::path::{Path, PathBuf};

use dampwave::discretize::{Grid, SpongeSpec};
use dampwave::medium::{medium_by_name, MediumSpec, PiecewisePoly, BUILTIN_NAMES};
use dampwave::resolvent::{Method, NormOptions, SolverConfig, WeightedNormSpec};
use dampwave::sweep::{MuSpec, Regime, SweepPlan};
use dampwave::{LabError, Result};
use serde::{Deserialize, Serialize};

pub const KINDS: [&str; 7] = ["sweep", "evolve", "flow", "escape", "mourre", "fourier-check", "decay-check"];
pub const OUTPUT_ROOT_VAR: &str = "LAB_OUTPUT_ROOT";

fn bad<T>(msg: impl Into<String>) -> Result<T> {
    Err(LabError::Input(msg.into()))
}

fn default_seed() -> u64 {
    0x5eed
}
fn one() -> usize {
    1
}
fn yes() -> bool {
    true
}

#[derive(Clone, Debug, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct ExperimentConfig {
    pub kind: String,
    pub output: String,
    #[serde(default = "default_seed")]
    pub seed: u64,
    #[serde(default = "one")]
    pub workers: usize,
    pub medium: MediumConfig,
    pub grid: GridConfig,
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub sponge: Option<SpongeConfig>,
    #[serde(default)]
    pub solver: SolverSection,
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub sweep: Option<SweepSection>,
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub evolve: Option<EvolveSection>,
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub decay: Option<DecaySection>,
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub flow: Option<FlowSection>,
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub escape: Option<EscapeSection>,
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub mourre: Option<MourreSection>,
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub fourier: Option<FourierSection>,
}

#[derive(Clone, Debug, Default, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct MediumConfig {
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub name: Option<String>,
    /// damped-free amplitude
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub c0: Option<f64>,
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub rho: Option<f64>,
    /// bump-metric amplitude
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub eps: Option<f64>,
    /// bump-metric radius
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub radius: Option<f64>,
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub profile: Option<ProfileConfig>,
}

#[derive(Clone, Debug, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct ProfileConfig {
    #[serde(default = "unit")]
    pub rho: f64,
    pub metric: PolyConfig,
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub absorption: Option<PolyConfig>,
}

fn unit() -> f64 {
    1.0
}

#[derive(Clone, Debug, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct PolyConfig {
    pub breaks: Vec<f64>,
    pub coeffs: Vec<Vec<f64>>,
    pub tail: f64,
}

#[derive(Clone, Copy, Debug, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct GridConfig {
    pub d: usize,
    #[serde(alias = "L")]
    pub half_width: f64,
    #[serde(alias = "N")]
    pub n: usize,
}

#[derive(Clone, Copy, Debug, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct SpongeConfig {
    #[serde(default = "yes")]
    pub enabled: bool,
    /// Defaults to a quarter of the half width.
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub width: Option<f64>,
    #[serde(default = "unit")]
    pub strength: f64,
}

#[derive(Clone, Debug, Serialize, Deserialize)]
#[serde(deny_unknown_fields, default)]
pub struct SolverSection {
    pub tol: f64,
    pub max_iterations: usize,
    pub restart: usize,
    pub dense_limit: usize,
    pub band_budget: usize,
    #[serde(skip_serializing_if = "Option::is_none")]
    pub method: Option<String>,
    pub norm_tol: f64,
    pub norm_max_iterations: usize,
}

impl Default for SolverSection {
    fn default() -> Self {
        let s = SolverConfig::default();
        let n = NormOptions::default();
        Self {
            tol: s.tol,
            max_iterations: s.max_iterations,
            restart: s.restart,
            dense_limit: s.dense_limit,
            band_budget: s.band_budget,
            method: None,
            norm_tol: n.tol,
            norm_max_iterations: n.max_iterations,
        }
    }
}

#[derive(Clone, Debug, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct SweepSection {
    pub regime: String,
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub tau: Option<Vec<f64>>,
    /// Geometric grid `[lo, hi]` with `points` values; alternative to `tau`.
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub tau_range: Option<[f64; 2]>,
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub points: Option<usize>,
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub mu_factor: Option<f64>,
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub mu_fixed: Option<f64>,
    #[serde(default)]
    pub n: usize,
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub delta: Option<f64>,
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub delta1: Option<f64>,
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub delta2: Option<f64>,
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub deriv: Option<usize>,
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub fit_window: Option<[f64; 2]>,
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub expect_exponent: Option<f64>,
    #[serde(default = "sweep_tol")]
    pub tolerance: f64,
}

fn sweep_tol() -> f64 {
    0.35
}

#[derive(Clone, Debug, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct Pulse {
    pub center: Vec<f64>,
    pub width: f64,
    pub amplitude: f64,
}

#[derive(Clone, Debug, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct EvolveSection {
    pub t_final: f64,
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub dt: Option<f64>,
    #[serde(default = "cfl_default")]
    pub cfl_fraction: f64,
    #[serde(default = "deltas_default")]
    pub deltas: Vec<f64>,
    #[serde(default = "one")]
    pub sample_every: usize,
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub data_radius: Option<f64>,
    pub u0: Pulse,
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub u1: Option<Pulse>,
    #[serde(default = "balance_default")]
    pub balance_tol: f64,
}

fn cfl_default() -> f64 {
    0.8
}
fn deltas_default() -> Vec<f64> {
    vec![1.0]
}
fn balance_default() -> f64 {
    1e-4
}

#[derive(Clone, Debug, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct DecaySection {
    /// Index into `evolve.deltas`.
    #[serde(default)]
    pub series: usize,
    pub window: [f64; 2],
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub expect_exponent: Option<f64>,
    #[serde(default = "decay_tol")]
    pub tolerance: f64,
}

fn decay_tol() -> f64 {
    0.5
}

#[derive(Clone, Debug, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct FlowSection {
    pub x: Vec<f64>,
    pub xi: Vec<f64>,
    pub t_final: f64,
    #[serde(default = "flow_dt")]
    pub dt: f64,
    #[serde(default = "energy_tol")]
    pub energy_tol: f64,
    #[serde(default = "one")]
    pub record_every: usize,
    #[serde(default = "yes")]
    pub classify: bool,
    #[serde(default = "t_max_default")]
    pub t_max: f64,
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub r_g: Option<f64>,
}

fn flow_dt() -> f64 {
    1e-2
}
fn energy_tol() -> f64 {
    1e-6
}
fn t_max_default() -> f64 {
    50.0
}

#[derive(Clone, Debug, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct EscapeSection {
    #[serde(default = "shell_default")]
    pub energy: [f64; 2],
    #[serde(default = "shell_radius")]
    pub radius: f64,
    #[serde(default = "thousand")]
    pub samples: usize,
    #[serde(default = "thousand")]
    pub check_samples: usize,
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub r_g: Option<f64>,
    #[serde(default = "half")]
    pub eps: f64,
    #[serde(default = "unit")]
    pub c_b: f64,
    #[serde(default = "unit")]
    pub c_inf: f64,
    #[serde(default = "unit")]
    pub bump_radius: f64,
    #[serde(default = "t_max_default")]
    pub t_max: f64,
    #[serde(default = "escape_dt")]
    pub dt: f64,
    #[serde(default = "bracket_delta")]
    pub delta: f64,
    #[serde(default = "yes")]
    pub control: bool,
    #[serde(default = "control_t_max")]
    pub control_t_max: f64,
    /// Expected outcome of the control check; `true` unless stated.
    #[serde(default = "yes")]
    pub expect_control: bool,
}

fn shell_default() -> [f64; 2] {
    [0.5, 1.5]
}
fn shell_radius() -> f64 {
    5.0
}
fn thousand() -> usize {
    1000
}
fn half() -> f64 {
    0.5
}
fn escape_dt() -> f64 {
    5e-3
}
fn bracket_delta() -> f64 {
    1e-4
}
fn control_t_max() -> f64 {
    30.0
}

#[derive(Clone, Debug, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct MourreSection {
    pub window: [f64; 2],
    #[serde(default = "betas_default")]
    pub betas: Vec<f64>,
}

fn betas_default() -> Vec<f64> {
    vec![0.0, 0.5, 1.0, 2.0]
}

#[derive(Clone, Debug, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct FourierSection {
    pub tau: f64,
    pub mu: f64,
    /// Defaults to `45 / mu`.
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub t_final: Option<f64>,
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub dt: Option<f64>,
    #[serde(default = "fourier_cfl")]
    pub cfl_fraction: f64,
    pub u0: Pulse,
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub u1: Option<Pulse>,
    #[serde(default = "fourier_tol")]
    pub tolerance: f64,
    #[serde(default = "fourier_ratio")]
    pub min_ratio: f64,
}

fn fourier_cfl() -> f64 {
    0.25
}
fn fourier_tol() -> f64 {
    1e-2
}
fn fourier_ratio() -> f64 {
    3.5
}

/// Validated experiment: everything the runner needs, already resolved.
pub struct Plan {
    pub config: ExperimentConfig,
    pub output_dir: PathBuf,
    pub medium: MediumSpec,
    pub grid: Grid,
    pub sponge: Option<SpongeSpec>,
    pub solver: SolverConfig,
    pub norm: NormOptions,
    pub sweep: Option<SweepPlan>,
}

pub fn parse(text: &str) -> Result<ExperimentConfig> {
    toml::from_str(text).map_err(|e| LabError::Input(format!("malformed config: {}", e.message())))
}

pub fn load(path: &Path) -> Result<ExperimentConfig> {
    let text = std::fs::read_to_string(path)
        .map_err(|e| LabError::Input(format!("cannot read {}: {e}", path.display())))?;
    parse(&text)
}

pub fn echo(cfg: &ExperimentConfig) -> String {
    toml::to_string(cfg).expect("config serialises")
}

pub fn output_dir(output: &str) -> PathBuf {
    let p = PathBuf::from(output);
    if p.is_absolute() {
        return p;
    }
    match std::env::var_os(OUTPUT_ROOT_VAR) {
        Some(root) if !root.is_empty() => PathBuf::from(root).join(p),
        _ => p,
    }
}

fn positive(name: &str, v: f64) -> Result<()> {
    if v > 0.0 && v.is_finite() {
        Ok(())
    } else {
        bad(format!("{name} must be positive, got {v}"))
    }
}

fn poly(p: &PolyConfig) -> Result<PiecewisePoly> {
    PiecewisePoly::new(p.breaks.clone(), p.coeffs.clone(), p.tail)
}

pub fn resolve_medium(c: &MediumConfig, d: usize) -> Result<MediumSpec> {
    if let Some(p) = &c.profile {
        if c.c0.is_some() || c.eps.is_some() || c.radius.is_some() || c.rho.is_some() {
            return bad("a custom profile takes no builtin medium parameters");
        }
        let alpha = match &p.absorption {
            Some(a) => poly(a)?,
            None => PiecewisePoly::constant(0.0),
        };
        let name = c.name.clone().unwrap_or_else(|| "custom".into());
        return MediumSpec::radial(name, d, p.rho, poly(&p.metric)?, alpha);
    }
    let Some(name) = c.name.as_deref() else {
        return bad("medium needs a name or a profile");
    };
    if !BUILTIN_NAMES.contains(&name) {
        return bad(format!("unknown medium '{name}'; known: {}", BUILTIN_NAMES.join(", ")));
    }
    match name {
        "damped-free" => {
            if c.eps.is_some() || c.radius.is_some() {
                return bad("damped-free takes only c0 and rho");
            }
            MediumSpec::damped_free(d, c.c0.unwrap_or(1.0), c.rho.unwrap_or(1.0))
        }
        "bump-metric" => {
            if c.c0.is_some() || c.rho.is_some() {
                return bad("bump-metric takes only eps and radius");
            }
            MediumSpec::bump_metric(d, c.eps.unwrap_or(0.3), c.radius.unwrap_or(2.0))
        }
        other => {
            if c.c0.is_some() || c.rho.is_some() || c.eps.is_some() || c.radius.is_some() {
                return bad(format!("medium '{other}' takes no parameters"));
            }
            medium_by_name(other, d)
        }
    }
}

fn solver_config(s: &SolverSection) -> Result<(SolverConfig, NormOptions)> {
    positive("solver.tol", s.tol)?;
    positive("solver.norm_tol", s.norm_tol)?;
    if s.max_iterations == 0 || s.restart == 0 || s.norm_max_iterations == 0 {
        return bad("solver iteration counts must be positive");
    }
    let force = match s.method.as_deref() {
        None => None,
        Some("dense") => Some(Method::DenseDirect),
        Some("sparse") => Some(Method::SparseDirect),
        Some("iterative") => Some(Method::Iterative),
        Some(other) => return bad(format!("unknown solver method '{other}'; use dense, sparse or iterative")),
    };
    let cfg = SolverConfig {
        tol: s.tol,
        max_iterations: s.max_iterations,
        restart: s.restart,
        dense_limit: s.dense_limit,
        band_budget: s.band_budget,
        force,
        ..SolverConfig::default()
    };
    Ok((cfg, NormOptions { tol: s.norm_tol, max_iterations: s.norm_max_iterations, seed: 0 }))
}

fn check_pulse(p: &Pulse, d: usize, what: &str) -> Result<()> {
    if p.center.len() != d {
        return bad(format!("{what}.center has {} coordinates, grid is {d}-dimensional", p.center.len()));
    }
    positive(&format!("{what}.width"), p.width)?;
    if !p.amplitude.is_finite() {
        return bad(format!("{what}.amplitude must be finite"));
    }
    Ok(())
}

fn check_window(name: &str, w: [f64; 2]) -> Result<()> {
    if !(w[0] < w[1]) || !w[0].is_finite() || !w[1].is_finite() {
        return bad(format!("{name} must be an increasing pair"));
    }
    Ok(())
}

fn sweep_plan(s: &SweepSection, grid: &Grid, workers: usize) -> Result<SweepPlan> {
    let regime = Regime::parse(&s.regime)?;
    let taus = match (&s.tau, s.tau_range, s.points) {
        (Some(t), None, None) => t.clone(),
        (None, Some([lo, hi]), Some(k)) => {
            positive("sweep.tau_range", lo)?;
            check_window("sweep.tau_range", [lo, hi])?;
            if k < 2 {
                return bad("sweep.points must be at least 2");
            }
            dampwave::sweep::geometric_taus(lo, hi, k)
        }
        _ => return bad("sweep needs either `tau` or `tau_range` with `points`"),
    };
    let mu = match (s.mu_factor, s.mu_fixed) {
        (None, None) => MuSpec::default(),
        (Some(c), None) => MuSpec::Proportional(c),
        (None, Some(m)) => MuSpec::Fixed(m),
        _ => return bad("give at most one of sweep.mu_factor and sweep.mu_fixed"),
    };
    let d1 = s.delta1.or(s.delta);
    let d2 = s.delta2.or(s.delta);
    let (Some(delta1), Some(delta2)) = (d1, d2) else {
        return bad("sweep needs `delta` or both `delta1` and `delta2`");
    };
    if let Some(a) = s.deriv {
        if a >= grid.dim {
            return bad(format!("sweep.deriv axis {a} out of range for d = {}", grid.dim));
        }
    }
    if let Some(w) = s.fit_window {
        check_window("sweep.fit_window", w)?;
    }
    if s.expect_exponent.is_some() && s.fit_window.is_none() {
        return bad("sweep.expect_exponent needs sweep.fit_window");
    }
    let mut plan = SweepPlan::new(regime, taus, WeightedNormSpec { n: s.n, delta1, delta2, deriv: s.deriv });
    plan.mu = mu;
    plan.workers = workers;
    plan.validate(grid)?;
    dampwave::resolvent::derivative_terms(s.n)?;
    Ok(plan)
}

fn check_evolve(e: &EvolveSection, d: usize) -> Result<()> {
    positive("evolve.t_final", e.t_final)?;
    if let Some(dt) = e.dt {
        positive("evolve.dt", dt)?;
    }
    positive("evolve.cfl_fraction", e.cfl_fraction)?;
    if e.sample_every == 0 {
        return bad("evolve.sample_every must be positive");
    }
    check_pulse(&e.u0, d, "evolve.u0")?;
    if let Some(u1) = &e.u1 {
        check_pulse(u1, d, "evolve.u1")?;
    }
    positive("evolve.balance_tol", e.balance_tol)
}

/// Parse-level config to a runnable plan. Every input problem surfaces here,
/// before anything touches the filesystem.
pub fn validate(config: ExperimentConfig) -> Result<Plan> {
    if !KINDS.contains(&config.kind.as_str()) {
        return bad(format!("unknown experiment kind '{}'; known: {}", config.kind, KINDS.join(", ")));
    }
    if config.output.trim().is_empty() {
        return bad("output directory must be set");
    }
    if config.workers == 0 {
        return bad("workers must be at least 1");
    }
    let g = config.grid;
    let grid = Grid::new(g.d, g.half_width, g.n)?;
    let medium = resolve_medium(&config.medium, g.d)?;
    let sponge = match config.sponge {
        Some(s) if s.enabled => {
            let spec = SpongeSpec { width: s.width.unwrap_or(0.25 * g.half_width), strength: s.strength };
            dampwave::discretize::assemble_sponge(&spec, &grid)?;
            Some(spec)
        }
        _ => None,
    };
    let (solver, mut norm) = solver_config(&config.solver)?;
    norm.seed = config.seed;

    let need = |present: bool, section: &str| -> Result<()> {
        if present {
            Ok(())
        } else {
            bad(format!("kind '{}' needs a [{section}] section", config.kind))
        }
    };
    let mut sweep = None;
    match config.kind.as_str() {
        "sweep" => {
            need(config.sweep.is_some(), "sweep")?;
            sweep = Some(sweep_plan(config.sweep.as_ref().unwrap(), &grid, config.workers)?);
        }
        "evolve" => {
            need(config.evolve.is_some(), "evolve")?;
            check_evolve(config.evolve.as_ref().unwrap(), g.d)?;
        }
        "decay-check" => {
            need(config.evolve.is_some(), "evolve")?;
            need(config.decay.is_some(), "decay")?;
            let e = config.evolve.as_ref().unwrap();
            check_evolve(e, g.d)?;
            let k = config.decay.as_ref().unwrap();
            check_window("decay.window", k.window)?;
            if k.series >= e.deltas.len() {
                return bad(format!("decay.series {} but only {} local energy weights", k.series, e.deltas.len()));
            }
        }
        "flow" => {
            need(config.flow.is_some(), "flow")?;
            let f = config.flow.as_ref().unwrap();
            if f.x.len() != g.d || f.xi.len() != g.d {
                return bad(format!("flow.x and flow.xi need {} coordinates", g.d));
            }
            positive("flow.t_final", f.t_final)?;
            positive("flow.dt", f.dt)?;
            positive("flow.energy_tol", f.energy_tol)?;
            positive("flow.t_max", f.t_max)?;
            if f.record_every == 0 {
                return bad("flow.record_every must be positive");
            }
        }
        "escape" => {
            need(config.escape.is_some(), "escape")?;
            let e = config.escape.as_ref().unwrap();
            check_window("escape.energy", e.energy)?;
            positive("escape.energy", e.energy[0])?;
            for (name, v) in [
                ("escape.radius", e.radius),
                ("escape.eps", e.eps),
                ("escape.c_b", e.c_b),
                ("escape.c_inf", e.c_inf),
                ("escape.bump_radius", e.bump_radius),
                ("escape.t_max", e.t_max),
                ("escape.dt", e.dt),
                ("escape.delta", e.delta),
                ("escape.control_t_max", e.control_t_max),
            ] {
                positive(name, v)?;
            }
            if e.samples == 0 || e.check_samples == 0 {
                return bad("escape sample counts must be positive");
            }
        }
        "mourre" => {
            need(config.mourre.is_some(), "mourre")?;
            let m = config.mourre.as_ref().unwrap();
            check_window("mourre.window", m.window)?;
            if m.betas.is_empty() || m.betas.iter().any(|b| !(*b >= 0.0)) {
                return bad("mourre.betas must be a non-empty list of non-negative values");
            }
            if grid.len() > dampwave::flow::DENSE_LIMIT {
                return bad(format!("mourre needs at most {} unknowns, grid has {}", dampwave::flow::DENSE_LIMIT, grid.len()));
            }
        }
        "fourier-check" => {
            need(config.fourier.is_some(), "fourier")?;
            let f = config.fourier.as_ref().unwrap();
            positive("fourier.tau", f.tau)?;
            positive("fourier.mu", f.mu)?;
            if let Some(t) = f.t_final {
                positive("fourier.t_final", t)?;
            }
            if let Some(dt) = f.dt {
                positive("fourier.dt", dt)?;
            }
            positive("fourier.cfl_fraction", f.cfl_fraction)?;
            check_pulse(&f.u0, g.d, "fourier.u0")?;
            if let Some(u1) = &f.u1 {
                check_pulse(u1, g.d, "fourier.u1")?;
            }
        }
        _ => unreachable!(),
    }
    let output_dir = output_dir(&config.output);
    Ok(Plan { config, output_dir, medium, grid, sponge, solver, norm, sweep })
}
