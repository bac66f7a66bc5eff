//! Experiment execution. Results are rendered in memory and written only
//! once the whole experiment has finished.

use std::collections::BTreeMap;
use std::path::Path;
use std::time::{Instant, SystemTime, UNIX_EPOCH};

use dampwave::discretize::{assemble_absorption, assemble_dilation_generator, assemble_h0, gaussian, Grid};
use dampwave::evolve::{decay_fit, laplace_transform_check, real, run_and_trace, EnergyTrace, TraceOptions, WaveEquation};
use dampwave::flow::{
    build_escape_function, classify_trajectory, convexity_radius, geometric_control_check, integrate_flow,
    mourre_commutator_check, poisson_bracket_check, sample_energy_shell, ClassifyOptions, CommutatorReport,
    ControlOptions, EscapeParams, FlowOptions, PhasePoint,
};
use dampwave::medium::MediumSpec;
use dampwave::sweep::{fit_trusted, run_sweep, write_fit_csv};
use dampwave::{LabError, Result};
use serde::Serialize;

use crate::config::{self, EvolveSection, Plan, Pulse};

pub struct Outcome {
    pub files: Vec<(String, Vec<u8>)>,
    pub passed: bool,
    pub summary: BTreeMap<String, String>,
}

impl Outcome {
    fn new() -> Self {
        Self { files: Vec::new(), passed: true, summary: BTreeMap::new() }
    }

    fn note(&mut self, key: &str, value: impl ToString) {
        self.summary.insert(key.to_string(), value.to_string());
    }

    fn file(&mut self, name: &str, f: impl FnOnce(&mut Vec<u8>) -> Result<()>) -> Result<()> {
        let mut buf = Vec::new();
        f(&mut buf)?;
        self.files.push((name.to_string(), buf));
        Ok(())
    }
}

fn csv_bytes(header: &[&str], rows: &[Vec<String>]) -> Result<Vec<u8>> {
    let mut w = csv::Writer::from_writer(Vec::new());
    w.write_record(header)?;
    for r in rows {
        w.write_record(r)?;
    }
    w.into_inner().map_err(|e| LabError::Io(e.into_error()))
}

fn e12(v: f64) -> String {
    format!("{v:.12e}")
}

fn pulse(grid: &Grid, p: Option<&Pulse>) -> Vec<f64> {
    match p {
        Some(p) => real(&gaussian(grid, &p.center, p.width, p.amplitude)),
        None => vec![0.0; grid.len()],
    }
}

fn default_rg(m: &MediumSpec) -> f64 {
    convexity_radius(m, 12.0, 0.25, 24)
}

pub fn execute(plan: &Plan) -> Result<Outcome> {
    match plan.config.kind.as_str() {
        "sweep" => sweep(plan),
        "evolve" => evolve(plan, false),
        "decay-check" => evolve(plan, true),
        "flow" => flow(plan),
        "escape" => escape(plan),
        "mourre" => mourre(plan),
        "fourier-check" => fourier(plan),
        other => Err(LabError::Input(format!("unknown experiment kind '{other}'"))),
    }
}

fn sweep(p: &Plan) -> Result<Outcome> {
    let mut out = Outcome::new();
    let sp = p.sweep.as_ref().expect("validated");
    let sec = p.config.sweep.as_ref().expect("validated");
    let res = run_sweep(sp, &p.medium, &p.grid, p.sponge.as_ref(), p.solver, &p.norm)?;
    out.file("sweep.csv", |b| res.write_csv(b))?;
    let failed = res.points.iter().filter(|pt| pt.estimate.is_err()).count();
    out.note("points", res.points.len());
    out.note("failed_points", failed);
    out.note("spread", format!("{:.6}", res.spread()));
    if let Some([lo, hi]) = sec.fit_window {
        let predicted = sp.regime.predicted_exponent(p.grid.dim, sp.norm.n);
        match fit_trusted(&res, (lo, hi)) {
            Ok(fit) => {
                out.file("fit.csv", |b| write_fit_csv(b, &[(sp.regime, fit, predicted)]))?;
                out.note("exponent", format!("{:.6}", fit.exponent));
                out.note("r2", format!("{:.6}", fit.r_squared));
                if let Some(want) = sec.expect_exponent {
                    out.passed = (fit.exponent - want).abs() <= sec.tolerance;
                }
            }
            Err(e) => {
                out.note("fit_error", e);
                out.passed = sec.expect_exponent.is_none();
            }
        }
    }
    Ok(out)
}

fn trace(p: &Plan, e: &EvolveSection) -> Result<EnergyTrace> {
    let eq = WaveEquation::from_medium(&p.medium, &p.grid, p.sponge.as_ref())?;
    let dt = e.dt.unwrap_or(e.cfl_fraction * eq.cfl_limit());
    eq.check_dt(dt)?;
    let u0 = pulse(&p.grid, Some(&e.u0));
    let u1 = pulse(&p.grid, e.u1.as_ref());
    let opts = TraceOptions {
        t_final: e.t_final,
        dt,
        deltas: e.deltas.clone(),
        sample_every: e.sample_every,
        data_radius: e.data_radius,
    };
    run_and_trace(&eq, &u0, &u1, &opts)
}

fn evolve(p: &Plan, decay: bool) -> Result<Outcome> {
    let mut out = Outcome::new();
    let e = p.config.evolve.as_ref().expect("validated");
    let tr = trace(p, e)?;
    out.file("energy.csv", |b| tr.write_csv(b))?;
    let e0 = tr.global_energy[0];
    let balance = if e0 > 0.0 { tr.balance_error() / e0 } else { tr.balance_error() };
    let increase = if e0 > 0.0 { tr.max_increase() / e0 } else { tr.max_increase() };
    out.note("initial_energy", e12(e0));
    out.note("final_energy", e12(*tr.global_energy.last().unwrap()));
    out.note("balance_relative", format!("{balance:.3e}"));
    out.note("max_increase_relative", format!("{increase:.3e}"));
    if let Some(t) = tr.reflection_time {
        out.note("reflection_time", format!("{t:.6}"));
    }
    out.passed = balance <= e.balance_tol && increase <= 1e-12;
    if decay {
        let k = p.config.decay.as_ref().expect("validated");
        let fit = decay_fit(&tr, k.series, (k.window[0], k.window[1]))?;
        let expected = k.expect_exponent.map(|v| v.to_string()).unwrap_or_else(|| "none".into());
        let row = vec![
            e.deltas[k.series].to_string(),
            k.window[0].to_string(),
            k.window[1].to_string(),
            format!("{:.6}", fit.exponent),
            format!("{:.6}", fit.r_squared),
            expected,
        ];
        out.files.push((
            "decay.csv".into(),
            csv_bytes(&["delta", "window_lo", "window_hi", "exponent", "r2", "expected_exponent"], &[row])?,
        ));
        out.note("decay_exponent", format!("{:.6}", fit.exponent));
        if let Some(want) = k.expect_exponent {
            out.passed &= (fit.exponent - want).abs() <= k.tolerance;
        }
    }
    Ok(out)
}

fn flow(p: &Plan) -> Result<Outcome> {
    let mut out = Outcome::new();
    let f = p.config.flow.as_ref().expect("validated");
    let w0 = PhasePoint::new(&f.x, &f.xi)?;
    let fo = FlowOptions { dt: f.dt, energy_tol: f.energy_tol, record_every: f.record_every, stop_on_escape: None };
    let traj = integrate_flow(&p.medium, &w0, f.t_final, &fo)?;
    out.file("trajectory.csv", |b| traj.write_csv(&p.medium, b))?;
    out.note("energy_drift", format!("{:.3e}", traj.energy_drift));
    if f.classify {
        let r_g = f.r_g.unwrap_or_else(|| default_rg(&p.medium));
        let opts = ClassifyOptions { r_g, r_esc: r_g.max(w0.radius()) + 1.0, t_max: f.t_max, flow: fo };
        let (c, fwd, bwd) = classify_trajectory(&p.medium, &w0, &opts)?;
        let time = |t: Option<f64>| t.map(|v| format!("{v:.6}")).unwrap_or_else(|| "none".into());
        let row = vec![c.as_str().to_string(), format!("{r_g:.6}"), time(fwd.escape_time), time(bwd.escape_time)];
        out.files.push((
            "classification.csv".into(),
            csv_bytes(&["classification", "r_g", "forward_escape_time", "backward_escape_time"], &[row])?,
        ));
        out.note("classification", c.as_str());
    }
    Ok(out)
}

fn escape(p: &Plan) -> Result<Outcome> {
    let mut out = Outcome::new();
    let e = p.config.escape.as_ref().expect("validated");
    let m = &p.medium;
    let shell = (e.energy[0], e.energy[1]);
    let r_g = e.r_g.unwrap_or_else(|| default_rg(m));
    let params = EscapeParams {
        c_b: e.c_b,
        c_inf: e.c_inf,
        eps: e.eps,
        radius: e.bump_radius,
        t_max: e.t_max,
        dt: e.dt,
        delta: e.delta,
        ..EscapeParams::new(r_g)
    };
    let build = sample_energy_shell(m, shell, e.radius, e.samples, p.config.seed)?;
    let f = build_escape_function(m, &build, &params)?;
    let check = sample_energy_shell(m, shell, e.radius, e.check_samples, p.config.seed.wrapping_add(1))?;
    let rep = poisson_bracket_check(&f, m, &check, e.delta)?;
    out.file("bracket.csv", |b| rep.write_csv(b))?;

    let d = m.dim;
    let mut header: Vec<String> = ["bump", "kind", "radius", "t_w", "weight", "beta_w"].map(String::from).to_vec();
    header.extend((0..d).map(|j| format!("x{j}")));
    header.extend((0..d).map(|j| format!("xi{j}")));
    let rows: Vec<Vec<String>> = f
        .bumps
        .iter()
        .enumerate()
        .map(|(k, b)| {
            let mut r = vec![k.to_string(), b.kind.as_str().into(), e12(b.radius), e12(b.t_w), e12(b.weight), e12(b.beta_w)];
            r.extend(b.center.pos().iter().map(|v| e12(*v)));
            r.extend(b.center.mom().iter().map(|v| e12(*v)));
            r
        })
        .collect();
    let hdr: Vec<&str> = header.iter().map(String::as_str).collect();
    out.files.push(("bumps.csv".into(), csv_bytes(&hdr, &rows)?));

    out.note("r_g", format!("{r_g:.6}"));
    out.note("bumps", f.bumps.len());
    out.note("beta", e12(f.beta));
    out.note("c0", e12(f.c0));
    out.note("c0_achieved", e12(rep.c0_achieved));
    out.note("worst_margin", e12(rep.worst_margin));
    out.passed = rep.pass;

    if e.control {
        let copts = ControlOptions { t_max: e.control_t_max, seed: p.config.seed, ..ControlOptions::new(r_g, e.radius) };
        let c = geometric_control_check(m, shell, &copts)?;
        let row = vec![
            c.samples.to_string(),
            c.trapped.to_string(),
            c.controlled.to_string(),
            c.undecided.to_string(),
            if c.worst_margin.is_finite() { e12(c.worst_margin) } else { "inf".into() },
            format!("{:.6}", c.fraction_controlled),
            c.inconclusive.to_string(),
            c.pass.to_string(),
        ];
        out.files.push((
            "control.csv".into(),
            csv_bytes(
                &["samples", "trapped", "controlled", "undecided", "worst_margin", "fraction_controlled", "inconclusive", "pass"],
                &[row],
            )?,
        ));
        out.note("control_pass", c.pass);
        out.passed &= c.pass == e.expect_control;
    }
    Ok(out)
}

fn mourre(p: &Plan) -> Result<Outcome> {
    let mut out = Outcome::new();
    let s = p.config.mourre.as_ref().expect("validated");
    let h = assemble_h0(&p.medium, &p.grid)?;
    let a_gen = assemble_dilation_generator(&p.grid);
    let damping = assemble_absorption(&p.medium, &p.grid)?;
    let reps: Vec<CommutatorReport> = s
        .betas
        .iter()
        .map(|&b| mourre_commutator_check(&h, &a_gen, &damping, (s.window[0], s.window[1]), b))
        .collect::<Result<_>>()?;
    let rows: Vec<Vec<String>> = reps.iter().map(|r| r.csv_row().to_vec()).collect();
    out.files.push(("mourre.csv".into(), csv_bytes(&CommutatorReport::csv_header(), &rows)?));
    let best = reps.iter().map(|r| r.alpha_estimate).fold(f64::NEG_INFINITY, f64::max);
    out.note("projector_rank", reps[0].projector_rank);
    out.note("alpha_best", e12(best));
    out.passed = reps.iter().all(|r| r.positive);
    Ok(out)
}

fn fourier(p: &Plan) -> Result<Outcome> {
    let mut out = Outcome::new();
    let f = p.config.fourier.as_ref().expect("validated");
    let eq = WaveEquation::from_medium(&p.medium, &p.grid, p.sponge.as_ref())?;
    let dt = f.dt.unwrap_or(f.cfl_fraction * eq.cfl_limit());
    eq.check_dt(dt)?;
    let t_final = f.t_final.unwrap_or(45.0 / f.mu);
    let u0 = pulse(&p.grid, Some(&f.u0));
    let u1 = pulse(&p.grid, f.u1.as_ref());
    let coarse = laplace_transform_check(&eq, &u0, &u1, f.tau, f.mu, t_final, dt)?;
    let fine = laplace_transform_check(&eq, &u0, &u1, f.tau, f.mu, t_final, dt / 2.0)?;
    let rows: Vec<Vec<String>> = [(dt, &coarse), (dt / 2.0, &fine)]
        .iter()
        .map(|(s, r)| {
            vec![e12(*s), f.tau.to_string(), f.mu.to_string(), t_final.to_string(), r.steps.to_string(), e12(r.rel_error), e12(r.velocity_error)]
        })
        .collect();
    out.files.push((
        "fourier.csv".into(),
        csv_bytes(&["dt", "tau", "mu", "t_final", "steps", "rel_error", "velocity_error"], &rows)?,
    ));
    let ratio = coarse.rel_error / fine.rel_error;
    out.note("rel_error", format!("{:.3e}", coarse.rel_error));
    out.note("halving_ratio", format!("{ratio:.3}"));
    out.passed = coarse.rel_error <= f.tolerance && ratio >= f.min_ratio;
    Ok(out)
}

#[derive(Serialize)]
struct Manifest<'a> {
    run: RunInfo<'a>,
    versions: Versions,
    files: Vec<String>,
    summary: &'a BTreeMap<String, String>,
}

#[derive(Serialize)]
struct RunInfo<'a> {
    kind: &'a str,
    config: String,
    output_dir: String,
    seed: u64,
    workers: usize,
    started_unix: u64,
    wall_time_seconds: f64,
    outcome: &'static str,
}

#[derive(Serialize)]
struct Versions {
    dampwave_core: &'static str,
    lab: &'static str,
}

/// Writes the CSVs, the echoed config and the manifest.
pub fn emit(plan: &Plan, config_path: &Path, out: &Outcome, started: SystemTime, clock: Instant) -> Result<Vec<String>> {
    let dir = &plan.output_dir;
    std::fs::create_dir_all(dir)?;
    let mut names = Vec::new();
    for (name, bytes) in &out.files {
        std::fs::write(dir.join(name), bytes)?;
        names.push(name.clone());
    }
    std::fs::write(dir.join("config.echo.toml"), config::echo(&plan.config))?;
    names.push("config.echo.toml".into());
    let manifest = Manifest {
        run: RunInfo {
            kind: &plan.config.kind,
            config: config_path.display().to_string(),
            output_dir: dir.display().to_string(),
            seed: plan.config.seed,
            workers: plan.config.workers,
            started_unix: started.duration_since(UNIX_EPOCH).map(|d| d.as_secs()).unwrap_or(0),
            wall_time_seconds: clock.elapsed().as_secs_f64(),
            outcome: if out.passed { "pass" } else { "fail" },
        },
        versions: Versions { dampwave_core: dampwave::VERSION, lab: env!("CARGO_PKG_VERSION") },
        files: names.clone(),
        summary: &out.summary,
    };
    let text = toml::to_string(&manifest).map_err(|e| LabError::Io(std::io::Error::other(e.to_string())))?;
    std::fs::write(dir.join("manifest.toml"), text)?;
    names.push("manifest.toml".into());
    Ok(names)
}
