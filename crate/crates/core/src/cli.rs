//! The `zohpde` command line: eigensystems, controller design, closed-loop
//! simulation and period sweeps driven by a flat TOML configuration.

use std::fs;
use std::path::{Path, PathBuf};

use clap::{Parser, Subcommand};
use rayon::prelude::*;
use serde::{Deserialize, Serialize};
use serde_json::json;
use sha2::{Digest, Sha256};

use crate::analysis::{default_fit_start, fit_decay, is_bounded, sweep_csv, SweepRow};
use crate::backstepping::{design_backstepping, BacksteppingController, BacksteppingOptions, TruncationPolicy};
use crate::coefficient::Coefficient;
use crate::controller::ControllerSpec;
use crate::error::{Error, Result};
use crate::fd_oracle::{compare_traces, fd_simulate, FdGrid};
use crate::modal_sim::{fmt17, make_schedule, simulate_closed_loop, ScheduleKind, SimOptions, Trace};
use crate::reduced_design::{design_reduced, ReducedDesign, ReducedOptions};
use crate::sl_operator::{analytic_eigensystem, shoot_eigensystem, validate_eigensystem, EigenSystem, SlProblem};

pub const EXIT_OK: i32 = 0;
pub const EXIT_VALIDATION: i32 = 2;
pub const EXIT_NUMERIC: i32 = 3;
pub const EXIT_USAGE: i32 = 64;

/// Largest Gram deviation `eigen` accepts before reporting a validation failure.
const GRAM_LIMIT: f64 = 1e-6;

#[derive(Debug, Parser)]
#[command(name = "zohpde", version, about = "Sampled-data boundary control of 1-D parabolic PDEs")]
pub struct Cli {
    #[command(subcommand)]
    pub command: Command,
    #[arg(long, global = true)]
    pub config: Option<PathBuf>,
    #[arg(long, global = true)]
    pub out: Option<PathBuf>,
    #[arg(long, global = true)]
    pub seed: Option<u64>,
    /// Also run the finite-difference reference solver.
    #[arg(long, global = true)]
    pub oracle: bool,
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Subcommand)]
pub enum Command {
    /// Eigenpairs, input gains and a validation report.
    Eigen,
    /// Controller synthesis and certified sampling period.
    Design,
    /// Closed-loop simulation with trace and snapshot output.
    Simulate,
    /// Stability and decay over a list of sampling periods.
    Sweep,
}

/// A coefficient given as a number, an inline table or a CSV file `z,value`.
#[derive(Clone, Debug, Deserialize, Serialize, PartialEq)]
#[serde(untagged)]
pub enum CoefficientSource {
    Value(f64),
    Table { z: Vec<f64>, values: Vec<f64> },
    File(String),
}

#[derive(Clone, Copy, Debug, Deserialize, Serialize, PartialEq, Eq, Default)]
#[serde(rename_all = "snake_case")]
pub enum ControllerKind {
    #[default]
    None,
    Reduced,
    Backstepping,
}

#[derive(Clone, Copy, Debug, Deserialize, Serialize, PartialEq, Eq, Default)]
#[serde(rename_all = "snake_case")]
pub enum InitialKind {
    /// `z (1 - z)`.
    #[default]
    Parabola,
    /// The first eigenfunction.
    FirstMode,
    /// Preimage of the first target eigenfunction (backstepping only).
    TargetMode,
}

/// Run configuration. Every key is optional except `n_max`.
#[derive(Clone, Debug, Deserialize, Serialize, PartialEq)]
#[serde(deny_unknown_fields)]
pub struct RunConfig {
    pub p: Option<CoefficientSource>,
    /// Potential of the operator `-(p f')' / r + q f / r`.
    pub q: Option<CoefficientSource>,
    /// Reaction coefficient of `r x_t = (p x_z)_z + reaction x`; alternative to `q`.
    pub reaction: Option<CoefficientSource>,
    pub r: Option<CoefficientSource>,
    pub b1: Option<f64>,
    pub b2: Option<f64>,
    pub a1: Option<f64>,
    pub a2: Option<f64>,
    pub n_max: Option<usize>,
    pub grid_size: Option<usize>,
    /// Eigenpairs used to expand the backstepping gain.
    pub design_modes: Option<usize>,

    pub controller: Option<ControllerKind>,
    pub m: Option<usize>,
    pub poles: Option<Vec<f64>>,
    pub c: Option<f64>,
    pub sigma: Option<f64>,
    /// `smallest` or `max_bound`.
    pub truncation: Option<String>,

    /// `periodic` or `jittered`.
    pub schedule: Option<String>,
    /// Sup of the sampling gaps; defaults to `t_fraction * T*`.
    #[serde(rename = "T")]
    pub t_sup: Option<f64>,
    pub t_fraction: Option<f64>,
    pub seed: Option<u64>,

    pub t_end: Option<f64>,
    pub output_dt: Option<f64>,
    pub snapshot_times: Option<Vec<f64>>,
    pub initial: Option<InitialKind>,
    pub initial_scale: Option<f64>,

    pub oracle: Option<bool>,
    pub oracle_m: Option<usize>,
    pub oracle_dt: Option<f64>,

    #[serde(rename = "sweep_T")]
    pub sweep_t: Option<Vec<f64>>,
    pub sweep_horizon: Option<f64>,

    pub out_dir: Option<String>,
}

/// Parsed configuration plus the raw bytes it came from.
#[derive(Clone, Debug)]
pub struct LoadedConfig {
    pub config: RunConfig,
    pub raw: String,
    pub base_dir: PathBuf,
}

impl LoadedConfig {
    pub fn from_str(raw: &str, base_dir: &Path) -> Result<Self> {
        let config: RunConfig = toml::from_str(raw).map_err(|e| Error::Config(e.to_string()))?;
        Ok(Self { config, raw: raw.to_string(), base_dir: base_dir.to_path_buf() })
    }

    pub fn from_path(path: &Path) -> Result<Self> {
        let raw = fs::read_to_string(path)
            .map_err(|e| Error::Config(format!("cannot read {}: {e}", path.display())))?;
        Self::from_str(&raw, path.parent().unwrap_or(Path::new(".")))
    }

    pub fn hash(&self) -> String {
        hex::encode(Sha256::digest(self.raw.as_bytes()))
    }
}

fn coefficient(src: &CoefficientSource, base: &Path, negate: bool) -> Result<Coefficient> {
    let sign = if negate { -1.0 } else { 1.0 };
    match src {
        CoefficientSource::Value(v) => Ok(Coefficient::constant(sign * v)),
        CoefficientSource::Table { z, values } => {
            Coefficient::tabulated(z.clone(), values.iter().map(|v| sign * v).collect())
        }
        CoefficientSource::File(name) => {
            let path = base.join(name);
            let text = fs::read_to_string(&path)
                .map_err(|e| Error::Config(format!("cannot read table {}: {e}", path.display())))?;
            let mut z = Vec::new();
            let mut values = Vec::new();
            for line in text.lines().map(str::trim).filter(|l| !l.is_empty() && !l.starts_with('#')) {
                let mut cells = line.split(',').map(str::trim);
                let (Some(a), Some(b)) = (cells.next(), cells.next()) else {
                    return Err(Error::Config(format!("bad table line in {}: {line}", path.display())));
                };
                match (a.parse::<f64>(), b.parse::<f64>()) {
                    (Ok(a), Ok(b)) => {
                        z.push(a);
                        values.push(sign * b);
                    }
                    // A header line.
                    _ if z.is_empty() => continue,
                    _ => return Err(Error::Config(format!("bad table line in {}: {line}", path.display()))),
                }
            }
            Coefficient::tabulated(z, values)
        }
    }
}

impl RunConfig {
    pub fn problem(&self, base: &Path) -> Result<SlProblem> {
        let one = CoefficientSource::Value(1.0);
        let zero = CoefficientSource::Value(0.0);
        let q = match (&self.q, &self.reaction) {
            (Some(_), Some(_)) => return Err(Error::Config("give either q or reaction, not both".into())),
            (Some(q), None) => coefficient(q, base, false)?,
            (None, Some(r)) => coefficient(r, base, true)?,
            (None, None) => coefficient(&zero, base, false)?,
        };
        SlProblem::new(
            coefficient(self.p.as_ref().unwrap_or(&one), base, false)?,
            q,
            coefficient(self.r.as_ref().unwrap_or(&one), base, false)?,
            (self.b1.unwrap_or(1.0), self.b2.unwrap_or(0.0)),
            (self.a1.unwrap_or(1.0), self.a2.unwrap_or(0.0)),
        )
    }

    pub fn n_max(&self) -> Result<usize> {
        match self.n_max {
            Some(n) if n > 0 => Ok(n),
            Some(_) => Err(Error::Config("n_max must be positive".into())),
            None => Err(Error::Config("n_max is required".into())),
        }
    }

    pub fn grid_size(&self) -> usize {
        self.grid_size.unwrap_or(401)
    }

    fn schedule_kind(&self) -> Result<ScheduleKind> {
        match self.schedule.as_deref().unwrap_or("periodic") {
            "periodic" => Ok(ScheduleKind::Periodic),
            "jittered" => Ok(ScheduleKind::Jittered),
            other => Err(Error::Config(format!("unknown schedule kind {other:?}"))),
        }
    }

    fn policy(&self) -> Result<TruncationPolicy> {
        match self.truncation.as_deref().unwrap_or("smallest") {
            "smallest" => Ok(TruncationPolicy::Smallest),
            "max_bound" => Ok(TruncationPolicy::MaximizeBound),
            other => Err(Error::Config(format!("unknown truncation policy {other:?}"))),
        }
    }
}

/// Eigensystem with `n` pairs: closed form for constant-coefficient
/// Dirichlet problems with unit weight, shooting otherwise.
pub fn build_eigensystem(problem: &SlProblem, n: usize, grid_size: usize) -> Result<EigenSystem> {
    match problem.constants() {
        Some((p, q, r)) if r == 1.0 && problem.is_dirichlet_left() && problem.is_dirichlet_right() && problem.a1 == 1.0 && problem.b1 == 1.0 => {
            analytic_eigensystem(p, -q, n, grid_size)
        }
        _ => shoot_eigensystem(problem, n, grid_size, 1e-12),
    }
}

/// Exit code for an error.
pub fn exit_code(err: &Error) -> i32 {
    match err {
        Error::NumericFailure(_) => EXIT_NUMERIC,
        Error::PreconditionViolation(_)
        | Error::MoreModesRequired { .. }
        | Error::InfeasibleTruncation { .. }
        | Error::Bracket(_)
        | Error::DegenerateTrace(_) => EXIT_VALIDATION,
        Error::InvalidArgument(_) | Error::Config(_) | Error::Io(_) | Error::Json(_) => EXIT_USAGE,
    }
}

/// Write through a temporary file in the same directory, then rename.
pub fn write_atomic(path: &Path, contents: &str) -> Result<()> {
    if let Some(dir) = path.parent() {
        fs::create_dir_all(dir)?;
    }
    let name = path.file_name().and_then(|s| s.to_str()).unwrap_or("out");
    let tmp = path.with_file_name(format!(".{name}.tmp{}", std::process::id()));
    fs::write(&tmp, contents)?;
    fs::rename(&tmp, path)?;
    Ok(())
}

/// Result of running a command: written files and the exit code.
#[derive(Debug, Clone, PartialEq)]
pub struct Outcome {
    pub code: i32,
    pub files: Vec<PathBuf>,
    pub message: String,
}

struct Context {
    cfg: LoadedConfig,
    out: PathBuf,
    seed: u64,
    oracle: bool,
    files: Vec<PathBuf>,
}

impl Context {
    fn write(&mut self, rel: &str, contents: &str) -> Result<()> {
        let path = self.out.join(rel);
        write_atomic(&path, contents)?;
        self.files.push(path);
        Ok(())
    }

    fn write_json(&mut self, rel: &str, value: &impl Serialize) -> Result<()> {
        let text = serde_json::to_string_pretty(value)? + "\n";
        self.write(rel, &text)
    }

    fn c(&self) -> &RunConfig {
        &self.cfg.config
    }

    fn problem(&self) -> Result<SlProblem> {
        self.c().problem(&self.cfg.base_dir)
    }

    fn manifest(&self, command: &str, extra: serde_json::Value) -> serde_json::Value {
        let problem_hash = self
            .problem()
            .ok()
            .map(|p| {
                let desc = json!({
                    "p": p.p.spec(), "q": p.q.spec(), "r": p.r.spec(),
                    "b1": p.b1, "b2": p.b2, "a1": p.a1, "a2": p.a2,
                });
                hex::encode(Sha256::digest(desc.to_string().as_bytes()))
            })
            .unwrap_or_default();
        json!({
            "command": command,
            "config_sha256": self.cfg.hash(),
            "problem_sha256": problem_hash,
            "version": env!("CARGO_PKG_VERSION"),
            "seed": self.seed,
            "n_max": self.c().n_max,
            "grid_size": self.c().grid_size(),
            "details": extra,
        })
    }
}

/// Designed controller with its certified period.
pub struct Design {
    pub controller: ControllerSpec,
    pub t_star: f64,
    pub json: serde_json::Value,
}

fn reduced_json(d: &ReducedDesign) -> serde_json::Value {
    let env = d.envelope.as_ref();
    json!({
        "type": "reduced",
        "m": d.controller.m,
        "k": d.controller.k,
        "g": d.controller.g,
        "lambdas": d.controller.lambdas,
        "poles": d.controller.closed_loop_poles,
        "T_star": d.bound.t_star,
        "G": env.map(|e| e.big_g),
        "sigma": env.map(|e| e.sigma),
        "epsilon": env.map(|e| e.epsilon),
        "Gamma": d.bound.gamma,
    })
}

fn backstepping_json(c: &BacksteppingController) -> serde_json::Value {
    json!({
        "type": "backstepping",
        "c": c.c,
        "N": c.n,
        "gamma": c.gamma,
        "sigma": c.sigma,
        "K_tilde": c.k_tilde,
        "L_tilde": c.l_tilde,
        "T_star": c.t_star,
        "k_norm": c.k_norm,
        "truncation_error": c.tail_norm,
        "k_n": c.k_n,
    })
}

/// Designs the configured controller on top of `eigsys`.
pub fn design_from_config(cfg: &RunConfig, problem: &SlProblem, eigsys: &EigenSystem) -> Result<Design> {
    match cfg.controller.unwrap_or_default() {
        ControllerKind::None => Ok(Design {
            controller: ControllerSpec::None,
            t_star: f64::INFINITY,
            json: json!({ "type": "none" }),
        }),
        ControllerKind::Reduced => {
            let d = design_reduced(
                eigsys,
                &ReducedOptions { m: cfg.m, poles: cfg.poles.clone(), envelope: None },
            )?;
            Ok(Design { t_star: d.bound.t_star, json: reduced_json(&d), controller: ControllerSpec::Reduced(d.controller) })
        }
        ControllerKind::Backstepping => {
            let modes = cfg.design_modes.unwrap_or(2000).max(eigsys.len());
            let big = if modes > eigsys.len() {
                build_eigensystem(problem, modes, eigsys.grid().len())?
            } else {
                eigsys.clone()
            };
            let c = design_backstepping(
                &big,
                &BacksteppingOptions { c: cfg.c, sigma: cfg.sigma, policy: cfg.policy()?, ..Default::default() },
            )?;
            Ok(Design { t_star: c.t_star, json: backstepping_json(&c), controller: ControllerSpec::Backstepping(Box::new(c)) })
        }
    }
}

fn initial_profile(cfg: &RunConfig, eigsys: &EigenSystem, design: &Design, z: &[f64]) -> Result<Vec<f64>> {
    let scale = cfg.initial_scale.unwrap_or(1.0);
    let base: Vec<f64> = match cfg.initial.unwrap_or_default() {
        InitialKind::Parabola => z.iter().map(|s| s * (1.0 - s)).collect(),
        InitialKind::FirstMode => {
            let e = &eigsys.pairs()[0];
            match eigsys.phi_at(0, 0.0) {
                Some(_) => z.iter().map(|&s| eigsys.phi_at(0, s).unwrap()).collect(),
                None => {
                    let spline = crate::quadrature::CubicSpline::new(eigsys.grid().points().to_vec(), e.phi.clone())?;
                    z.iter().map(|&s| spline.eval(s)).collect()
                }
            }
        }
        InitialKind::TargetMode => match &design.controller {
            ControllerSpec::Backstepping(c) => {
                let psi: Vec<f64> = eigsys
                    .grid()
                    .points()
                    .iter()
                    .map(|s| std::f64::consts::SQRT_2 * (std::f64::consts::PI * s).sin())
                    .collect();
                let x = c.inverse_transform(&psi)?;
                if z.len() == x.len() && z == eigsys.grid().points() {
                    x
                } else {
                    let spline = crate::quadrature::CubicSpline::new(eigsys.grid().points().to_vec(), x)?;
                    z.iter().map(|&s| spline.eval(s)).collect()
                }
            }
            _ => return Err(Error::Config("initial = \"target_mode\" needs the backstepping controller".into())),
        },
    };
    Ok(base.into_iter().map(|v| scale * v).collect())
}

fn sim_options(cfg: &RunConfig, t_end: f64) -> SimOptions {
    let mut o = SimOptions::new(t_end, cfg.output_dt.unwrap_or((t_end / 200.0).max(1e-12)));
    o.snapshot_times = cfg.snapshot_times.clone().unwrap_or_default();
    o.diagnostics = cfg.controller.unwrap_or_default() != ControllerKind::None;
    o
}

fn sampling_period(cfg: &RunConfig, t_star: f64) -> Result<f64> {
    if let Some(t) = cfg.t_sup {
        return Ok(t);
    }
    let f = cfg.t_fraction.unwrap_or(0.5);
    if t_star.is_finite() {
        Ok(f * t_star)
    } else {
        Err(Error::Config("T is required when the controller has no certified period".into()))
    }
}

fn cmd_eigen(ctx: &mut Context) -> Result<i32> {
    let problem = ctx.problem()?;
    let n = ctx.c().n_max()?;
    let es = build_eigensystem(&problem, n, ctx.c().grid_size())?;
    let gains = es.gains()?;
    let mut csv = String::from("n,lambda,phi1,dphi1,g_n\n");
    for (e, g) in es.pairs().iter().zip(&gains) {
        csv.push_str(&format!("{},{},{},{},{}\n", e.n, fmt17(e.lambda), fmt17(e.phi1), fmt17(e.dphi1), fmt17(*g)));
    }
    ctx.write("eigen.csv", &csv)?;
    for e in es.pairs() {
        let mut f = String::from("z,phi\n");
        for (z, v) in es.grid().points().iter().zip(&e.phi) {
            f.push_str(&format!("{},{}\n", fmt17(*z), fmt17(*v)));
        }
        ctx.write(&format!("eigenfunctions/phi_{:04}.csv", e.n), &f)?;
    }
    let (report, code) = match validate_eigensystem(&es, 1) {
        Ok(r) => {
            let ok = r.gram_deviation < GRAM_LIMIT;
            (json!({ "ok": ok, "gram_limit": GRAM_LIMIT, "method": if es.closed_form().is_some() { "closed_form" } else { "shooting" }, "report": r }), if ok { EXIT_OK } else { EXIT_VALIDATION })
        }
        Err(e @ Error::PreconditionViolation(_)) => (json!({ "ok": false, "error": e.to_string() }), EXIT_VALIDATION),
        Err(e) => return Err(e),
    };
    ctx.write_json("validation.json", &report)?;
    let m = ctx.manifest("eigen", json!({}));
    ctx.write_json("manifest.json", &m)?;
    Ok(code)
}

fn write_design_files(ctx: &mut Context, design: &Design, eigsys: &EigenSystem) -> Result<()> {
    ctx.write_json("controller.json", &design.json)?;
    match &design.controller {
        ControllerSpec::None => {}
        ControllerSpec::Reduced(c) => {
            let mut f = String::from("z,kernel\n");
            for (z, v) in eigsys.grid().points().iter().zip(&c.kernel) {
                f.push_str(&format!("{},{}\n", fmt17(*z), fmt17(*v)));
            }
            ctx.write("kernel.csv", &f)?;
        }
        ControllerSpec::Backstepping(c) => {
            let mut f = String::from("s,k\n");
            for (z, v) in c.z.iter().zip(&c.kernel_k) {
                f.push_str(&format!("{},{}\n", fmt17(*z), fmt17(*v)));
            }
            ctx.write("gain_kernel.csv", &f)?;
            let mut f = String::from("z,s,K\n");
            for i in 0..c.z.len() {
                for j in 0..=i {
                    f.push_str(&format!("{},{},{}\n", fmt17(c.z[i]), fmt17(c.z[j]), fmt17(c.k_surface.get(i, j))));
                }
            }
            ctx.write("kernel_surface.csv", &f)?;
        }
    }
    Ok(())
}

fn cmd_design(ctx: &mut Context) -> Result<i32> {
    let problem = ctx.problem()?;
    let es = build_eigensystem(&problem, ctx.c().n_max()?, ctx.c().grid_size())?;
    let design = design_from_config(ctx.c(), &problem, &es)?;
    write_design_files(ctx, &design, &es)?;
    let m = ctx.manifest("design", json!({ "controller": design.json["type"], "T_star": design.t_star }));
    ctx.write_json("manifest.json", &m)?;
    Ok(EXIT_OK)
}

fn write_trace(ctx: &mut Context, prefix: &str, trace: &Trace) -> Result<()> {
    ctx.write(&format!("{prefix}trace.csv"), &trace.to_csv())?;
    for i in 0..trace.snapshots.len() {
        ctx.write(&format!("{prefix}snapshots/snapshot_{i:03}.csv"), &trace.snapshot_csv(i))?;
    }
    Ok(())
}

fn cmd_simulate(ctx: &mut Context) -> Result<i32> {
    let problem = ctx.problem()?;
    let cfg = ctx.c().clone();
    let es = build_eigensystem(&problem, cfg.n_max()?, cfg.grid_size())?;
    let design = design_from_config(&cfg, &problem, &es)?;
    let t_sup = sampling_period(&cfg, design.t_star)?;
    let schedule = make_schedule(cfg.schedule_kind()?, t_sup, ctx.seed, None)?;
    let t_end = cfg.t_end.unwrap_or(1.0);
    let opts = sim_options(&cfg, t_end);
    let x0 = initial_profile(&cfg, &es, &design, es.grid().points())?;
    let trace = simulate_closed_loop(&es, &design.controller, &schedule, &x0, &opts)?;
    write_trace(ctx, "", &trace)?;
    let mut details = json!({
        "controller": design.json,
        "schedule": schedule.descriptor(),
        "T": t_sup,
        "t_end": t_end,
        "samples_taken": trace.meta.samples_taken,
    });
    if ctx.oracle {
        let grid = FdGrid::crank_nicolson(cfg.oracle_m.unwrap_or(400), cfg.oracle_dt.unwrap_or(1e-4))?;
        let z = grid.nodes();
        let x0f = initial_profile(&cfg, &es, &design, &z)?;
        let fd = fd_simulate(&es, &design.controller, &schedule, &x0f, &grid, &opts)?;
        write_trace(ctx, "fd_", &fd)?;
        let report = compare_traces(&trace, &fd)?;
        ctx.write_json("comparison.json", &report)?;
        details["oracle"] = json!({ "M": grid.m, "dt": grid.dt, "theta": grid.theta });
    }
    let m = ctx.manifest("simulate", details);
    ctx.write_json("manifest.json", &m)?;
    Ok(EXIT_OK)
}

fn cmd_sweep(ctx: &mut Context) -> Result<i32> {
    let problem = ctx.problem()?;
    let cfg = ctx.c().clone();
    let list = cfg.sweep_t.clone().ok_or_else(|| Error::Config("sweep_T is required for sweep".into()))?;
    if list.is_empty() || list.iter().any(|t| !(*t > 0.0)) {
        return Err(Error::Config("sweep_T must list positive periods".into()));
    }
    let es = build_eigensystem(&problem, cfg.n_max()?, cfg.grid_size())?;
    let design = design_from_config(&cfg, &problem, &es)?;
    let horizon = cfg.sweep_horizon.or(cfg.t_end).unwrap_or(20.0);
    let mut opts = sim_options(&cfg, horizon);
    opts.diagnostics = false;
    opts.snapshot_times.clear();
    let kind = cfg.schedule_kind()?;
    let x0 = initial_profile(&cfg, &es, &design, es.grid().points())?;
    let seed = ctx.seed;
    let rows: Vec<SweepRow> = list
        .par_iter()
        .map(|&t| -> Result<SweepRow> {
            let schedule = make_schedule(kind, t, seed, None)?;
            let ratio = if design.t_star.is_finite() { t / design.t_star } else { 0.0 };
            match simulate_closed_loop(&es, &design.controller, &schedule, &x0, &opts) {
                Ok(trace) => {
                    let fit = fit_decay(&trace, default_fit_start(&trace)).ok();
                    Ok(SweepRow { t, stable: is_bounded(&trace), c_est: fit.map(|f| f.c_est), g_est: fit.map(|f| f.g_est), ratio })
                }
                Err(Error::NumericFailure(_)) => Ok(SweepRow { t, stable: false, c_est: None, g_est: None, ratio }),
                Err(e) => Err(e),
            }
        })
        .collect::<Result<_>>()?;
    ctx.write("sweep.csv", &sweep_csv(&rows))?;
    let m = ctx.manifest("sweep", json!({ "controller": design.json["type"], "T_star": design.t_star, "horizon": horizon, "schedule": format!("{kind:?}").to_lowercase() }));
    ctx.write_json("manifest.json", &m)?;
    Ok(EXIT_OK)
}

/// Runs a parsed command line.
pub fn run(cli: &Cli) -> Outcome {
    let fail = |e: Error| Outcome { code: exit_code(&e), files: Vec::new(), message: e.to_string() };
    let Some(path) = &cli.config else {
        return Outcome { code: EXIT_USAGE, files: Vec::new(), message: "--config PATH is required".into() };
    };
    let cfg = match LoadedConfig::from_path(path) {
        Ok(c) => c,
        Err(e) => return fail(e),
    };
    let out = cli
        .out
        .clone()
        .or_else(|| cfg.config.out_dir.as_ref().map(|d| cfg.base_dir.join(d)))
        .unwrap_or_else(|| PathBuf::from("out"));
    let seed = cli.seed.or(cfg.config.seed).unwrap_or(0);
    let oracle = cli.oracle || cfg.config.oracle.unwrap_or(false);
    let mut ctx = Context { cfg, out, seed, oracle, files: Vec::new() };
    let result = match cli.command {
        Command::Eigen => cmd_eigen(&mut ctx),
        Command::Design => cmd_design(&mut ctx),
        Command::Simulate => cmd_simulate(&mut ctx),
        Command::Sweep => cmd_sweep(&mut ctx),
    };
    match result {
        Ok(code) => Outcome { code, files: ctx.files, message: String::new() },
        Err(e) => Outcome { files: ctx.files, ..fail(e) },
    }
}

/// Parses `args` (program name first) and runs; clap usage errors map to 64.
pub fn main_with_args<I, T>(args: I) -> Outcome
where
    I: IntoIterator<Item = T>,
    T: Into<std::ffi::OsString> + Clone,
{
    match Cli::try_parse_from(args) {
        Ok(cli) => run(&cli),
        Err(e) => {
            let code = match e.kind() {
                clap::error::ErrorKind::DisplayHelp | clap::error::ErrorKind::DisplayVersion => EXIT_OK,
                _ => EXIT_USAGE,
            };
            Outcome { code, files: Vec::new(), message: e.to_string() }
        }
    }
}

#[cfg(test)]
mod tests {
    use super::*;

    fn load(text: &str) -> RunConfig {
        LoadedConfig::from_str(text, Path::new(".")).unwrap().config
    }

    #[test]
    fn reaction_and_q_are_exclusive() {
        let c = load("n_max = 4\nreaction = 15.0\n");
        let p = c.problem(Path::new(".")).unwrap();
        assert_eq!(p.q.as_constant(), Some(-15.0));
        let c = load("n_max = 4\nq = 2.0\nreaction = 1.0\n");
        assert!(c.problem(Path::new(".")).is_err());
    }

    #[test]
    fn unknown_keys_rejected() {
        assert!(LoadedConfig::from_str("n_max = 4\nbogus = 1\n", Path::new(".")).is_err());
    }

    #[test]
    fn n_max_required() {
        assert!(load("p = 1.0\n").n_max().is_err());
        assert!(load("n_max = 0\n").n_max().is_err());
    }

    #[test]
    fn exit_codes() {
        assert_eq!(exit_code(&Error::NumericFailure(String::new())), EXIT_NUMERIC);
        assert_eq!(exit_code(&Error::InfeasibleTruncation { value: 2.0 }), EXIT_VALIDATION);
        assert_eq!(exit_code(&Error::Config(String::new())), EXIT_USAGE);
    }

    #[test]
    fn atomic_write_replaces() {
        let dir = tempfile::tempdir().unwrap();
        let p = dir.path().join("a/b.txt");
        write_atomic(&p, "one").unwrap();
        write_atomic(&p, "two").unwrap();
        assert_eq!(fs::read_to_string(&p).unwrap(), "two");
        assert_eq!(fs::read_dir(dir.path().join("a")).unwrap().count(), 1);
    }
}
