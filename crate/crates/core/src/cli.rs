//! Command-line front end: config files, CSV output and subcommands.
//!
//! Config files are line-oriented `key = value` text; `#` starts a comment.
//! Unknown keys and malformed values are errors that name the key and line.

use std::fmt::Write as _;
use std::fs;
use std::io::Write as _;
use std::path::{Path, PathBuf};

use clap::{Args, Parser, Subcommand, ValueEnum};

use crate::backward::{run_report, RunReport, RunStatus};
use crate::config::{RegressionRoute, RidgeRule, SolverConfig};
use crate::error::{Error, Result};
use crate::forward::{simulate_paths, restore_level};
use crate::harness::{
    check_thresholds, reproduction, run_sweep_with, scaling_report, Figure, Reference, Scale,
    SweepPlan, SweepResult,
};
use crate::model::{builtin_problem, ProblemParams, ProblemSpec};
use crate::regress::{BandwidthRule, KernelSpec, LevelRegressor};

pub const CSV_HEADER: [&str; 14] = [
    "problem",
    "d",
    "T",
    "N",
    "M",
    "seed",
    "Y0",
    "ref",
    "abs_err",
    "rel_err",
    "runtime_s",
    "mean_cg_iters",
    "mean_newton_iters",
    "status",
];

const PROBLEM_KEYS: &[&str] = &[
    "T", "x0", "nu", "theta", "theta_c", "kappa", "a", "b", "sigma", "beta",
];

#[derive(Debug, Clone, Copy, PartialEq, Eq)]
enum BandwidthKind {
    MaxDistance,
    ScaledSqrtDt,
    Fixed,
}

/// Everything a config file can say.
#[derive(Debug, Clone, PartialEq)]
pub struct RunConfig {
    pub problem: Option<String>,
    pub dimension: usize,
    pub params: ProblemParams,
    pub n_steps: usize,
    pub n_particles: usize,
    pub seed: u64,
    pub kernel: KernelSpec,
    bandwidth_kind: BandwidthKind,
    pub bandwidth_c: f64,
    pub ridge: RidgeRule,
    pub route: RegressionRoute,
    pub cg_tol: f64,
    pub cg_maxiter: Option<usize>,
    pub newton_tol: f64,
    pub newton_maxiter: usize,
    pub memory_budget_mb: u64,
    pub checkpoint_stride: Option<usize>,
    pub sweep_n: Vec<usize>,
    pub sweep_m: Vec<usize>,
    pub seeds_per_cell: usize,
    /// Level regressed by `gradtest`; `None` means `N/2`.
    pub grad_level: Option<usize>,
}

impl Default for RunConfig {
    fn default() -> Self {
        let s = SolverConfig::default();
        RunConfig {
            problem: None,
            dimension: 1,
            params: ProblemParams::new(),
            n_steps: s.n_steps,
            n_particles: s.n_particles,
            seed: s.seed,
            kernel: s.kernel,
            bandwidth_kind: BandwidthKind::MaxDistance,
            bandwidth_c: 1.0,
            ridge: s.ridge,
            route: s.route,
            cg_tol: s.cg_tol,
            cg_maxiter: None,
            newton_tol: s.newton.tol,
            newton_maxiter: s.newton.maxiter,
            memory_budget_mb: s.memory_budget_bytes / (1024 * 1024),
            checkpoint_stride: None,
            sweep_n: Vec::new(),
            sweep_m: Vec::new(),
            seeds_per_cell: 5,
            grad_level: None,
        }
    }
}

fn parse_num<T: std::str::FromStr>(key: &str, value: &str) -> std::result::Result<T, String> {
    value
        .parse::<T>()
        .map_err(|_| format!("cannot parse `{value}` for `{key}`"))
}

fn parse_f64(key: &str, value: &str) -> std::result::Result<f64, String> {
    let v: f64 = parse_num(key, value)?;
    if v.is_finite() {
        Ok(v)
    } else {
        Err(format!("`{key}` must be finite"))
    }
}

fn parse_list<T: std::str::FromStr>(key: &str, value: &str) -> std::result::Result<Vec<T>, String> {
    value
        .split(',')
        .map(|s| s.trim())
        .filter(|s| !s.is_empty())
        .map(|s| parse_num(key, s))
        .collect::<std::result::Result<Vec<T>, String>>()
        .and_then(|v| {
            if v.is_empty() {
                Err(format!("`{key}` needs at least one value"))
            } else {
                Ok(v)
            }
        })
}

fn auto_or<T: std::str::FromStr>(key: &str, value: &str) -> std::result::Result<Option<T>, String> {
    if value == "auto" {
        Ok(None)
    } else {
        parse_num(key, value).map(Some)
    }
}

fn join<T: ToString>(v: &[T]) -> String {
    v.iter().map(|x| x.to_string()).collect::<Vec<_>>().join(",")
}

impl RunConfig {
    /// Applies one `key = value` assignment.
    pub fn set(&mut self, key: &str, value: &str) -> std::result::Result<(), String> {
        match key {
            "problem" => {
                if value.is_empty() {
                    return Err("`problem` is empty".into());
                }
                self.problem = Some(value.to_string());
            }
            "d" => self.dimension = parse_num(key, value)?,
            "N" => self.n_steps = parse_num(key, value)?,
            "M" => self.n_particles = parse_num(key, value)?,
            "seed" => self.seed = parse_num(key, value)?,
            "kernel" => {
                self.kernel = match value {
                    "gaussian" => KernelSpec::Gaussian,
                    "epanechnikov" => KernelSpec::Epanechnikov,
                    _ => return Err(format!("unknown kernel `{value}`")),
                }
            }
            "bandwidth_rule" => {
                self.bandwidth_kind = match value {
                    "max_distance" => BandwidthKind::MaxDistance,
                    "scaled_sqrt_dt" => BandwidthKind::ScaledSqrtDt,
                    "fixed" => BandwidthKind::Fixed,
                    _ => return Err(format!("unknown bandwidth_rule `{value}`")),
                }
            }
            "bandwidth_c" => self.bandwidth_c = parse_f64(key, value)?,
            "ridge_lambda" => {
                self.ridge = match value {
                    "auto" => RidgeRule::default(),
                    v => RidgeRule::Fixed(parse_f64(key, v)?),
                }
            }
            "regression_route" => {
                self.route = match value {
                    "auto" => RegressionRoute::Auto,
                    "primal" => RegressionRoute::Primal,
                    "dual" => RegressionRoute::Dual,
                    _ => return Err(format!("unknown regression_route `{value}`")),
                }
            }
            "cg_tol" => self.cg_tol = parse_f64(key, value)?,
            "cg_maxiter" => self.cg_maxiter = auto_or(key, value)?,
            "newton_tol" => self.newton_tol = parse_f64(key, value)?,
            "newton_maxiter" => self.newton_maxiter = parse_num(key, value)?,
            "memory_budget_mb" => self.memory_budget_mb = parse_num(key, value)?,
            "checkpoint_stride" => self.checkpoint_stride = auto_or(key, value)?,
            "sweep_N" => self.sweep_n = parse_list(key, value)?,
            "sweep_M" => self.sweep_m = parse_list(key, value)?,
            "seeds_per_cell" => self.seeds_per_cell = parse_num(key, value)?,
            "grad_level" => self.grad_level = auto_or(key, value)?,
            k if PROBLEM_KEYS.contains(&k) => {
                let v: Vec<f64> = parse_list::<f64>(key, value)?;
                if v.iter().any(|x| !x.is_finite()) {
                    return Err(format!("`{key}` must be finite"));
                }
                self.params.insert(k, v);
            }
            _ => return Err(format!("unknown key `{key}`")),
        }
        Ok(())
    }

    pub fn bandwidth(&self) -> BandwidthRule {
        match self.bandwidth_kind {
            BandwidthKind::MaxDistance => BandwidthRule::MaxDistance,
            BandwidthKind::ScaledSqrtDt => BandwidthRule::ScaledSqrtDt(self.bandwidth_c),
            BandwidthKind::Fixed => BandwidthRule::Fixed(self.bandwidth_c),
        }
    }

    pub fn solver_config(&self) -> SolverConfig {
        let mut s = SolverConfig::default()
            .with_steps(self.n_steps)
            .with_particles(self.n_particles)
            .with_seed(self.seed);
        s.kernel = self.kernel;
        s.bandwidth = self.bandwidth();
        s.ridge = self.ridge;
        s.route = self.route;
        s.cg_tol = self.cg_tol;
        s.cg_maxiter = self.cg_maxiter;
        s.newton.tol = self.newton_tol;
        s.newton.maxiter = self.newton_maxiter;
        s.memory_budget_bytes = self.memory_budget_mb.saturating_mul(1024 * 1024);
        s.checkpoint_stride = self.checkpoint_stride;
        s
    }

    pub fn problem_name(&self) -> Result<&str> {
        self.problem
            .as_deref()
            .ok_or_else(|| Error::config("missing required key `problem`"))
    }

    pub fn build_problem(&self) -> Result<ProblemSpec> {
        builtin_problem(self.problem_name()?, self.dimension, &self.params)
    }

    /// Sweep over `sweep_N × sweep_M`; a missing list falls back to the
    /// single `N` or `M`.
    pub fn sweep_plan(&self) -> Result<SweepPlan> {
        let mut plan = SweepPlan::new(self.problem_name()?, self.dimension);
        plan.params = self.params.clone();
        plan.n_values = if self.sweep_n.is_empty() { vec![self.n_steps] } else { self.sweep_n.clone() };
        plan.m_values = if self.sweep_m.is_empty() { vec![self.n_particles] } else { self.sweep_m.clone() };
        plan.seeds_per_cell = self.seeds_per_cell;
        plan.reference = Reference::Exact;
        plan.validate()?;
        Ok(plan)
    }

    /// Checks the problem and solver settings together.
    pub fn validate(&self) -> Result<()> {
        self.build_problem()?;
        self.solver_config().validate(self.dimension)?;
        if !self.sweep_n.is_empty() || !self.sweep_m.is_empty() || self.seeds_per_cell != 5 {
            self.sweep_plan()?;
        }
        if self.seeds_per_cell < 1 {
            return Err(Error::config("seeds_per_cell must be at least 1"));
        }
        Ok(())
    }

    /// Serializes every key, so that parsing the output reproduces `self`.
    pub fn to_config_string(&self) -> String {
        let mut s = String::new();
        if let Some(p) = &self.problem {
            let _ = writeln!(s, "problem = {p}");
        }
        let _ = writeln!(s, "d = {}", self.dimension);
        for (k, v) in self.params.iter() {
            let _ = writeln!(s, "{k} = {}", join(v));
        }
        let _ = writeln!(s, "N = {}", self.n_steps);
        let _ = writeln!(s, "M = {}", self.n_particles);
        let _ = writeln!(s, "seed = {}", self.seed);
        let kernel = match self.kernel {
            KernelSpec::Gaussian => "gaussian",
            KernelSpec::Epanechnikov => "epanechnikov",
        };
        let _ = writeln!(s, "kernel = {kernel}");
        let rule = match self.bandwidth_kind {
            BandwidthKind::MaxDistance => "max_distance",
            BandwidthKind::ScaledSqrtDt => "scaled_sqrt_dt",
            BandwidthKind::Fixed => "fixed",
        };
        let _ = writeln!(s, "bandwidth_rule = {rule}");
        let _ = writeln!(s, "bandwidth_c = {}", self.bandwidth_c);
        match self.ridge {
            RidgeRule::Auto { .. } => {
                let _ = writeln!(s, "ridge_lambda = auto");
            }
            RidgeRule::Fixed(l) => {
                let _ = writeln!(s, "ridge_lambda = {l}");
            }
        }
        let route = match self.route {
            RegressionRoute::Auto => "auto",
            RegressionRoute::Primal => "primal",
            RegressionRoute::Dual => "dual",
        };
        let _ = writeln!(s, "regression_route = {route}");
        let _ = writeln!(s, "cg_tol = {}", self.cg_tol);
        let opt = |v: Option<usize>| v.map(|x| x.to_string()).unwrap_or_else(|| "auto".into());
        let _ = writeln!(s, "cg_maxiter = {}", opt(self.cg_maxiter));
        let _ = writeln!(s, "newton_tol = {}", self.newton_tol);
        let _ = writeln!(s, "newton_maxiter = {}", self.newton_maxiter);
        let _ = writeln!(s, "memory_budget_mb = {}", self.memory_budget_mb);
        let _ = writeln!(s, "checkpoint_stride = {}", opt(self.checkpoint_stride));
        if !self.sweep_n.is_empty() {
            let _ = writeln!(s, "sweep_N = {}", join(&self.sweep_n));
        }
        if !self.sweep_m.is_empty() {
            let _ = writeln!(s, "sweep_M = {}", join(&self.sweep_m));
        }
        let _ = writeln!(s, "seeds_per_cell = {}", self.seeds_per_cell);
        let _ = writeln!(s, "grad_level = {}", opt(self.grad_level));
        s
    }
}

/// Splits `key = value`; `None` for blank and comment-only lines.
fn split_assignment(line: &str) -> Option<std::result::Result<(&str, &str), String>> {
    let content = line.split('#').next().unwrap_or("").trim();
    if content.is_empty() {
        return None;
    }
    Some(match content.split_once('=') {
        Some((k, v)) if !k.trim().is_empty() => Ok((k.trim(), v.trim())),
        _ => Err(format!("expected `key = value`, got `{content}`")),
    })
}

/// Parses config text, then applies `overrides` (each `key=value`) on top.
pub fn parse_config_str(text: &str, overrides: &[String]) -> Result<RunConfig> {
    let mut cfg = RunConfig::default();
    let mut seen = std::collections::BTreeMap::new();
    for (i, line) in text.lines().enumerate() {
        let lineno = i + 1;
        match split_assignment(line) {
            None => {}
            Some(Err(e)) => return Err(Error::config(format!("line {lineno}: {e}"))),
            Some(Ok((k, v))) => {
                if let Some(prev) = seen.insert(k.to_string(), lineno) {
                    return Err(Error::config(format!(
                        "line {lineno}: key `{k}` already set on line {prev}"
                    )));
                }
                cfg.set(k, v)
                    .map_err(|e| Error::config(format!("line {lineno}: key `{k}`: {e}")))?;
            }
        }
    }
    for o in overrides {
        match split_assignment(o) {
            Some(Ok((k, v))) => cfg
                .set(k, v)
                .map_err(|e| Error::config(format!("--set {o}: key `{k}`: {e}")))?,
            _ => return Err(Error::config(format!("--set expects key=value, got `{o}`"))),
        }
    }
    cfg.validate()?;
    Ok(cfg)
}

pub fn parse_config(path: &Path, overrides: &[String]) -> Result<RunConfig> {
    let text = fs::read_to_string(path)
        .map_err(|e| Error::config(format!("cannot read {}: {e}", path.display())))?;
    parse_config_str(&text, overrides)
}

fn fmt_float(v: f64) -> String {
    format!("{v:.16e}")
}

fn fmt_opt(v: Option<f64>) -> String {
    v.map(fmt_float).unwrap_or_default()
}

fn csv_record(r: &RunReport) -> [String; 14] {
    [
        r.problem.clone(),
        r.dimension.to_string(),
        fmt_float(r.horizon),
        r.n_steps.to_string(),
        r.n_particles.to_string(),
        r.seed.to_string(),
        fmt_float(r.y0),
        fmt_opt(r.reference),
        fmt_opt(r.abs_err()),
        fmt_opt(r.rel_err()),
        format!("{:.6}", r.runtime_s),
        fmt_float(r.mean_cg_iters),
        fmt_float(r.mean_newton_iters),
        r.status.label(),
    ]
}

fn csv_err(path: &Path) -> impl Fn(csv::Error) -> Error + '_ {
    move |source| Error::Csv {
        path: path.to_path_buf(),
        source,
    }
}

/// Writes one CSV row per report under the fixed header.
pub fn emit_csv(rows: &[RunReport], path: &Path) -> Result<()> {
    let mut w = csv::WriterBuilder::new()
        .terminator(csv::Terminator::Any(b'\n'))
        .from_path(path)
        .map_err(csv_err(path))?;
    w.write_record(CSV_HEADER).map_err(csv_err(path))?;
    for r in rows {
        w.write_record(csv_record(r)).map_err(csv_err(path))?;
    }
    w.flush().map_err(|e| Error::io(path, e))
}

/// Plot-ready companion file: `dt, mean_abs_err, mean_rel_err, M`.
pub fn emit_plot_csv(result: &SweepResult, path: &Path) -> Result<()> {
    let mut w = csv::WriterBuilder::new()
        .terminator(csv::Terminator::Any(b'\n'))
        .from_path(path)
        .map_err(csv_err(path))?;
    w.write_record(["dt", "mean_abs_err", "mean_rel_err", "M"]).map_err(csv_err(path))?;
    for p in result.error_points() {
        w.write_record([
            fmt_float(p.dt),
            fmt_float(p.mean_abs_err),
            fmt_float(p.mean_rel_err),
            p.m.to_string(),
        ])
        .map_err(csv_err(path))?;
    }
    w.flush().map_err(|e| Error::io(path, e))
}

#[derive(Parser, Debug)]
#[command(name = "fbsde-llr", version, about = "Particle FBSDE solver with local linear regression")]
pub struct Cli {
    /// More output on stderr (repeat for more).
    #[arg(short, long, action = clap::ArgAction::Count, global = true)]
    pub verbose: u8,

    #[command(subcommand)]
    pub command: Command,
}

#[derive(Args, Debug, Clone)]
pub struct CommonArgs {
    /// `key = value` config file.
    #[arg(short, long)]
    pub config: Option<PathBuf>,
    /// Override a config key; may be repeated.
    #[arg(long = "set", value_name = "KEY=VALUE")]
    pub overrides: Vec<String>,
    #[arg(short, long, default_value = ".")]
    pub output_dir: PathBuf,
    /// Shortcut for `--set seed=S`.
    #[arg(long)]
    pub seed: Option<u64>,
}

#[derive(Subcommand, Debug)]
pub enum Command {
    /// Solve once and print the report.
    Run(CommonArgs),
    /// Convergence sweep over sweep_N × sweep_M × seeds.
    Sweep(CommonArgs),
    /// Regress exact values at one level and compare with the exact gradient.
    Gradtest(CommonArgs),
    /// Runtime table over sweep_N × sweep_M.
    Scaling(CommonArgs),
    /// Run a pre-baked benchmark sweep and check it against its thresholds.
    Reproduce {
        #[arg(value_enum)]
        figure: FigureArg,
        #[arg(value_enum, default_value = "desk")]
        scale: ScaleArg,
        #[arg(short, long, default_value = ".")]
        output_dir: PathBuf,
        #[arg(long)]
        seed: Option<u64>,
        /// Seeds per cell, default 5.
        #[arg(long)]
        seeds: Option<usize>,
    },
}

#[derive(ValueEnum, Debug, Clone, Copy)]
pub enum FigureArg {
    Ac100,
    #[value(name = "ac_log")]
    AcLog,
    Burgers,
    Hj,
}

#[derive(ValueEnum, Debug, Clone, Copy)]
pub enum ScaleArg {
    Desk,
    Paper,
}

pub const EXIT_OK: i32 = 0;
pub const EXIT_FAILURE: i32 = 1;
pub const EXIT_USAGE: i32 = 2;

fn exit_code(e: &Error) -> i32 {
    if e.is_usage() {
        EXIT_USAGE
    } else {
        EXIT_FAILURE
    }
}

fn load(common: &CommonArgs) -> Result<RunConfig> {
    let mut overrides = common.overrides.clone();
    if let Some(seed) = common.seed {
        overrides.push(format!("seed={seed}"));
    }
    let cfg = match &common.config {
        Some(p) => parse_config(p, &overrides)?,
        None => parse_config_str("", &overrides)?,
    };
    fs::create_dir_all(&common.output_dir).map_err(|e| Error::io(&common.output_dir, e))?;
    Ok(cfg)
}

fn status_code(status: &RunStatus) -> i32 {
    match status {
        RunStatus::Ok => EXIT_OK,
        RunStatus::Failed { usage: true, .. } => EXIT_USAGE,
        RunStatus::Failed { .. } => EXIT_FAILURE,
    }
}

fn cmd_run(common: &CommonArgs) -> Result<i32> {
    let cfg = load(common)?;
    let problem = cfg.build_problem()?;
    let report = run_report(&problem, &cfg.solver_config());
    print!("{}", report.to_key_value());
    emit_csv(std::slice::from_ref(&report), &common.output_dir.join("run.csv"))?;
    if let RunStatus::Failed { message, .. } = &report.status {
        eprintln!("error: {message}");
    }
    Ok(status_code(&report.status))
}

fn progress(verbose: u8) -> impl FnMut(&RunReport) {
    move |r: &RunReport| {
        if verbose > 0 {
            eprintln!(
                "{} d={} N={} M={} seed={} Y0={:.6e} t={:.2}s {}",
                r.problem,
                r.dimension,
                r.n_steps,
                r.n_particles,
                r.seed,
                r.y0,
                r.runtime_s,
                r.status.label()
            );
        }
    }
}

fn summarize_sweep(result: &SweepResult) -> String {
    let mut s = String::new();
    let _ = writeln!(s, "problem={} d={} T={}", result.problem, result.dimension, result.horizon);
    match result.reference {
        Some(r) => {
            let _ = writeln!(s, "reference={r:.16e}");
        }
        None => {
            let _ = writeln!(s, "reference=none");
        }
    }
    for p in result.error_points() {
        let _ = writeln!(
            s,
            "M={} N={} dt={:.3e} mean_Y0={:.8e} mean_abs_err={:.4e} mean_rel_err={:.4e} seeds={}",
            p.m, p.n, p.dt, p.mean_y0, p.mean_abs_err, p.mean_rel_err, p.samples
        );
    }
    for (m, slope) in &result.slopes {
        match slope {
            Some(v) => {
                let _ = writeln!(s, "M={m} slope={v:.4}");
            }
            None => {
                let _ = writeln!(s, "M={m} slope=none");
            }
        }
    }
    s
}

fn cmd_sweep(common: &CommonArgs, verbose: u8) -> Result<i32> {
    let cfg = load(common)?;
    let plan = cfg.sweep_plan()?;
    let result = run_sweep_with(&plan, &cfg.solver_config(), progress(verbose))?;
    emit_csv(&result.rows, &common.output_dir.join("sweep.csv"))?;
    emit_plot_csv(&result, &common.output_dir.join("sweep_plot.csv"))?;
    print!("{}", summarize_sweep(&result));
    Ok(if result.failures() > 0 { EXIT_FAILURE } else { EXIT_OK })
}

/// Gradient check at one level: responses are exact `u(t_{k+1}, X_{k+1})`,
/// compared against exact `σᵀ∇u(t_k, X_k)`.
pub fn gradient_check(problem: &ProblemSpec, config: &SolverConfig, level: usize) -> Result<GradCheck> {
    let exact = problem
        .exact
        .as_ref()
        .ok_or_else(|| Error::invalid(format!("problem `{}` has no exact solution", problem.name)))?;
    if level >= config.n_steps {
        return Err(Error::config(format!("grad_level must be below N = {}", config.n_steps)));
    }
    let store = simulate_paths(problem, config)?;
    let lk = restore_level(&store, level, problem)?;
    let lnext = restore_level(&store, level + 1, problem)?;
    let y: Vec<f64> = lnext.particles().map(|x| exact.u(lnext.t, x)).collect();
    let reg = LevelRegressor::new(&lk, &y, problem, config, store.dt)?;
    let mut rel = Vec::with_capacity(lk.n_particles);
    let mut iters = 0usize;
    for m in 0..lk.n_particles {
        let x = lk.particle(m);
        let fit = reg.fit(m).map_err(|e| e.at_particle(level, m))?;
        iters += fit.iterations;
        let z = problem.diffusion.apply_transpose(lk.t, x, &fit.alpha_x)?;
        let z_exact = problem.diffusion.apply_transpose(lk.t, x, &exact.grad(lk.t, x))?;
        let num: f64 = z.iter().zip(&z_exact).map(|(a, b)| (a - b).powi(2)).sum::<f64>().sqrt();
        let den: f64 = z_exact.iter().map(|b| b * b).sum::<f64>().sqrt();
        rel.push(if den > 0.0 { num / den } else { num });
    }
    let n = rel.len() as f64;
    Ok(GradCheck {
        level,
        mean_rel_err: rel.iter().sum::<f64>() / n,
        max_rel_err: rel.iter().cloned().fold(0.0, f64::max),
        mean_cg_iters: iters as f64 / n,
    })
}

#[derive(Debug, Clone, PartialEq)]
pub struct GradCheck {
    pub level: usize,
    pub mean_rel_err: f64,
    pub max_rel_err: f64,
    pub mean_cg_iters: f64,
}

fn cmd_gradtest(common: &CommonArgs) -> Result<i32> {
    let cfg = load(common)?;
    let problem = cfg.build_problem()?;
    let solver = cfg.solver_config();
    let level = cfg.grad_level.unwrap_or(solver.n_steps / 2);
    let g = gradient_check(&problem, &solver, level)?;
    let path = common.output_dir.join("gradtest.csv");
    let mut w = csv::WriterBuilder::new()
        .terminator(csv::Terminator::Any(b'\n'))
        .from_path(&path)
        .map_err(csv_err(&path))?;
    w.write_record(["problem", "d", "N", "M", "seed", "level", "mean_rel_err_z", "max_rel_err_z", "mean_cg_iters"])
        .map_err(csv_err(&path))?;
    w.write_record([
        problem.name.clone(),
        problem.dimension.to_string(),
        solver.n_steps.to_string(),
        solver.n_particles.to_string(),
        solver.seed.to_string(),
        g.level.to_string(),
        fmt_float(g.mean_rel_err),
        fmt_float(g.max_rel_err),
        fmt_float(g.mean_cg_iters),
    ])
    .map_err(csv_err(&path))?;
    w.flush().map_err(|e| Error::io(&path, e))?;
    println!(
        "level={} mean_rel_err_z={:.6e} max_rel_err_z={:.6e} mean_cg_iters={:.2}",
        g.level, g.mean_rel_err, g.max_rel_err, g.mean_cg_iters
    );
    Ok(EXIT_OK)
}

fn cmd_scaling(common: &CommonArgs) -> Result<i32> {
    let cfg = load(common)?;
    let problem = cfg.build_problem()?;
    let ns = if cfg.sweep_n.is_empty() { vec![cfg.n_steps] } else { cfg.sweep_n.clone() };
    let ms = if cfg.sweep_m.is_empty() { vec![cfg.n_particles] } else { cfg.sweep_m.clone() };
    let report = scaling_report(&problem, &cfg.solver_config(), &ns, &ms);
    let path = common.output_dir.join("scaling.csv");
    let mut w = csv::WriterBuilder::new()
        .terminator(csv::Terminator::Any(b'\n'))
        .from_path(&path)
        .map_err(csv_err(&path))?;
    w.write_record(["problem", "d", "N", "M", "runtime_s", "forward_s", "backward_s", "status"])
        .map_err(csv_err(&path))?;
    for c in &report.cells {
        w.write_record([
            report.problem.clone(),
            report.dimension.to_string(),
            c.n.to_string(),
            c.m.to_string(),
            format!("{:.6}", c.runtime_s),
            format!("{:.6}", c.forward_s),
            format!("{:.6}", c.backward_s),
            c.status.label(),
        ])
        .map_err(csv_err(&path))?;
        println!("N={} M={} runtime_s={:.4} forward_s={:.4}", c.n, c.m, c.runtime_s, c.forward_s);
    }
    w.flush().map_err(|e| Error::io(&path, e))?;
    for (m, e) in &report.n_exponents {
        println!("M={m} runtime_exponent_N={e:.3}");
    }
    for (n, e) in &report.m_exponents {
        println!("N={n} runtime_exponent_M={e:.3}");
    }
    let failed = report.cells.iter().any(|c| !c.status.is_ok());
    Ok(if failed { EXIT_FAILURE } else { EXIT_OK })
}

fn cmd_reproduce(
    figure: FigureArg,
    scale: ScaleArg,
    output_dir: &Path,
    seed: Option<u64>,
    seeds: Option<usize>,
    verbose: u8,
) -> Result<i32> {
    let figure = match figure {
        FigureArg::Ac100 => Figure::AllenCahn100,
        FigureArg::AcLog => Figure::AllenCahnLog,
        FigureArg::Burgers => Figure::Burgers,
        FigureArg::Hj => Figure::HamiltonJacobi,
    };
    let scale = match scale {
        ScaleArg::Desk => Scale::Desk,
        ScaleArg::Paper => Scale::Paper,
    };
    let mut repro = reproduction(figure, scale);
    if let Some(s) = seed {
        repro.config.seed = s;
    }
    fs::create_dir_all(output_dir).map_err(|e| Error::io(output_dir, e))?;
    let mut summary = String::new();
    let mut passed = true;
    for mut plan in repro.plans {
        if let Some(k) = seeds {
            plan.seeds_per_cell = k;
        }
        let result = run_sweep_with(&plan, &repro.config, progress(verbose))?;
        let stem = format!("reproduce_{}_d{}", figure.id(), plan.dimension);
        emit_csv(&result.rows, &output_dir.join(format!("{stem}.csv")))?;
        emit_plot_csv(&result, &output_dir.join(format!("{stem}_plot.csv")))?;
        summary.push_str(&summarize_sweep(&result));
        let verdict = check_thresholds(&result, &repro.thresholds);
        passed &= verdict.passed;
        for line in verdict.lines {
            summary.push_str(&line);
            summary.push('\n');
        }
    }
    let _ = writeln!(summary, "overall={}", if passed { "PASS" } else { "FAIL" });
    let path = output_dir.join(format!("reproduce_{}_summary.txt", figure.id()));
    fs::File::create(&path)
        .and_then(|mut f| f.write_all(summary.as_bytes()))
        .map_err(|e| Error::io(&path, e))?;
    print!("{summary}");
    Ok(if passed { EXIT_OK } else { EXIT_FAILURE })
}

/// Runs the CLI on `args` (including the program name) and returns the
/// process exit code.
pub fn main_with_args<I, T>(args: I) -> i32
where
    I: IntoIterator<Item = T>,
    T: Into<std::ffi::OsString> + Clone,
{
    let cli = match Cli::try_parse_from(args) {
        Ok(c) => c,
        Err(e) => {
            let _ = e.print();
            return if e.use_stderr() { EXIT_USAGE } else { EXIT_OK };
        }
    };
    let verbose = cli.verbose;
    let result = match &cli.command {
        Command::Run(c) => cmd_run(c),
        Command::Sweep(c) => cmd_sweep(c, verbose),
        Command::Gradtest(c) => cmd_gradtest(c),
        Command::Scaling(c) => cmd_scaling(c),
        Command::Reproduce {
            figure,
            scale,
            output_dir,
            seed,
            seeds,
        } => cmd_reproduce(*figure, *scale, output_dir, *seed, *seeds, verbose),
    };
    match result {
        Ok(code) => code,
        Err(e) => {
            eprintln!("error: {e}");
            exit_code(&e)
        }
    }
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn minimal_file_uses_defaults() {
        let c = parse_config_str("problem = linear_heat\nd = 2\n", &[]).unwrap();
        let s = c.solver_config();
        assert_eq!(s, SolverConfig::default());
        assert_eq!(c.dimension, 2);
    }

    #[test]
    fn override_wins() {
        let c = parse_config_str("problem = linear_heat\nd = 2\nN = 100\n", &["N=200".into()]).unwrap();
        assert_eq!(c.n_steps, 200);
    }

    #[test]
    fn ridge_required() {
        let e = parse_config_str("problem = linear_heat\nM = 10\nd = 100\nridge_lambda = 0\n", &[]).unwrap_err();
        assert!(e.to_string().contains("ridge required when M <= d+1"), "{e}");
        assert!(e.is_usage());
    }

    #[test]
    fn unknown_key_names_line() {
        let e = parse_config_str("problem = linear_heat\n\n# c\nNN = 3\n", &[]).unwrap_err();
        let msg = e.to_string();
        assert!(msg.contains("line 4") && msg.contains("NN"), "{msg}");
    }

    #[test]
    fn malformed_value_names_key() {
        let e = parse_config_str("problem = linear_heat\nM = ten\n", &[]).unwrap_err();
        let msg = e.to_string();
        assert!(msg.contains("line 2") && msg.contains("`M`"), "{msg}");
    }

    #[test]
    fn duplicate_key_rejected() {
        assert!(parse_config_str("problem = linear_heat\nN = 1\nN = 2\n", &[]).is_err());
    }

    #[test]
    fn param_for_wrong_problem_rejected() {
        assert!(parse_config_str("problem = linear_heat\nnu = 2\n", &[]).is_err());
        assert!(parse_config_str("problem = burgers\nd = 3\nnu = 2\n", &[]).is_ok());
    }

    #[test]
    fn round_trip() {
        let text = "problem = hj_gradient_sink\nd = 7\nkappa = 0.25\nx0 = 0.1\nT = 0.4\nN = 12\nM = 33\nseed = 9\n\
                    kernel = epanechnikov\nbandwidth_rule = scaled_sqrt_dt\nbandwidth_c = 2.5\n\
                    ridge_lambda = 1e-6\ncg_tol = 1e-9\ncg_maxiter = 40\nnewton_tol = 1e-11\n\
                    newton_maxiter = 7\nmemory_budget_mb = 64\nsweep_N = 10,20,40\nsweep_M = 5,10\nseeds_per_cell = 2\n";
        let a = parse_config_str(text, &[]).unwrap();
        let b = parse_config_str(&a.to_config_string(), &[]).unwrap();
        assert_eq!(a, b);
    }

    #[test]
    fn csv_header_and_round_trip() {
        let dir = tempfile::tempdir().unwrap();
        let path = dir.path().join("x.csv");
        emit_csv(&[], &path).unwrap();
        assert_eq!(fs::read_to_string(&path).unwrap(), format!("{}\n", CSV_HEADER.join(",")));
    }
}
