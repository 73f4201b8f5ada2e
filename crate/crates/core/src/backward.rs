//! Backward sweep: per-particle gradient regression and scalar Newton
//! closure of `Y = mean(Y_{k+1}) + f(t, x, Y, z)·Δt`.

use std::fmt::Write as _;
use std::time::Instant;

use rayon::prelude::*;

use crate::config::SolverConfig;
use crate::error::{Error, Result};
use crate::forward::{simulate_paths, BackwardCursor, LevelState, StorageMode};
use crate::linalg::{norm_sq, pairwise_sum};
use crate::model::ProblemSpec;
use crate::regress::LevelRegressor;

#[derive(Debug, Clone, Copy, PartialEq)]
pub struct NewtonConfig {
    /// Absolute tolerance on `|F(y)|`.
    pub tol: f64,
    pub maxiter: usize,
    /// Base step of the central difference used when `∂f/∂y` is not supplied.
    pub fd_step_base: f64,
}

impl Default for NewtonConfig {
    fn default() -> Self {
        NewtonConfig {
            tol: 1e-12,
            maxiter: 50,
            fd_step_base: 1e-6,
        }
    }
}

impl NewtonConfig {
    pub fn validate(&self) -> Result<()> {
        if !(self.tol > 0.0 && self.tol.is_finite()) {
            return Err(Error::config(format!("newton_tol must be positive, got {}", self.tol)));
        }
        if self.maxiter < 1 {
            return Err(Error::config("newton_maxiter must be at least 1"));
        }
        if !(self.fd_step_base > 0.0 && self.fd_step_base.is_finite()) {
            return Err(Error::config("fd step must be positive"));
        }
        Ok(())
    }
}

const SINGULAR_DERIVATIVE: f64 = 1e-12;
const MAX_HALVINGS: usize = 20;

/// Mean of `values` by pairwise summation. A constant vector returns its
/// value unchanged.
pub fn ensemble_mean(values: &[f64]) -> f64 {
    assert!(!values.is_empty(), "ensemble_mean of an empty slice");
    let first = values[0];
    if values.iter().all(|v| v.to_bits() == first.to_bits()) {
        return first;
    }
    pairwise_sum(values) / values.len() as f64
}

/// Solves `F(y) = y − mean_next − f(t, x, y, z)·Δt = 0` by Newton's method
/// started at `mean_next`. Steps that do not reduce `|F|` are halved up to
/// 20 times. Returns the root and the number of Newton updates taken.
pub fn newton_solve_y(
    mean_next: f64,
    t: f64,
    x: &[f64],
    z: &[f64],
    problem: &ProblemSpec,
    dt: f64,
    config: &NewtonConfig,
) -> Result<(f64, usize)> {
    if !(dt > 0.0) {
        return Err(Error::invalid(format!("dt must be positive, got {dt}")));
    }
    if !mean_next.is_finite() {
        return Err(Error::invalid("non-finite ensemble mean"));
    }
    if z.iter().any(|v| !v.is_finite()) {
        return Err(Error::invalid("non-finite z"));
    }
    let f = &problem.driver;
    let residual = |y: f64| y - mean_next - f(t, x, y, z) * dt;
    let dfdy = |y: f64| match &problem.driver_dy {
        Some(dy) => dy(t, x, y, z),
        None => {
            let h = config.fd_step_base.max(config.fd_step_base * y.abs());
            (f(t, x, y + h, z) - f(t, x, y - h, z)) / (2.0 * h)
        }
    };

    let mut y = mean_next;
    let mut r = residual(y);
    for iter in 0..config.maxiter {
        if r.abs() <= config.tol {
            return Ok((y, iter));
        }
        if !r.is_finite() {
            return Err(Error::NewtonNonConvergence {
                iterations: iter,
                residual: r,
            });
        }
        let fp = 1.0 - dt * dfdy(y);
        if !(fp.abs() >= SINGULAR_DERIVATIVE) {
            return Err(Error::SingularJacobian { y, derivative: fp });
        }
        let step = r / fp;
        let mut scale = 1.0;
        let mut accepted = None;
        for _ in 0..=MAX_HALVINGS {
            let cand = y - scale * step;
            let rc = residual(cand);
            if rc.is_finite() && rc.abs() < r.abs() {
                accepted = Some((cand, rc));
                break;
            }
            scale *= 0.5;
        }
        match accepted {
            Some((cand, rc)) => {
                y = cand;
                r = rc;
            }
            None => {
                return Err(Error::NewtonNonConvergence {
                    iterations: iter + 1,
                    residual: r.abs(),
                })
            }
        }
    }
    if r.abs() <= config.tol {
        Ok((y, config.maxiter))
    } else {
        Err(Error::NewtonNonConvergence {
            iterations: config.maxiter,
            residual: r.abs(),
        })
    }
}

/// One level of the backward sweep.
#[derive(Debug, Clone, PartialEq)]
pub struct BackwardState {
    pub k: usize,
    pub y_values: Vec<f64>,
    pub newton_iters: Vec<usize>,
    pub z_norms: Vec<f64>,
    /// CG iterations per particle; empty when the driver ignores `z`.
    pub cg_iters: Vec<usize>,
    /// Largest relative CG residual at this level.
    pub max_cg_residual: f64,
    pub cg_unconverged: usize,
    pub max_newton_residual: f64,
}

fn all_coincide(level: &LevelState) -> bool {
    let first = level.particle(0);
    level.particles().all(|x| x == first)
}

struct ParticleResult {
    y: f64,
    newton_iters: usize,
    z_norm: f64,
    cg_iters: Option<usize>,
    cg_residual: f64,
    cg_converged: bool,
    newton_residual: f64,
}

/// Regression plus Newton for every particle of `level_k`.
///
/// `y_next` are the responses `Y_{k+1}^j` attached to the particles of
/// `level_k`.
pub fn backward_step(
    level_k: &LevelState,
    y_next: &[f64],
    problem: &ProblemSpec,
    config: &SolverConfig,
    dt: f64,
) -> Result<BackwardState> {
    backward_step_with(level_k, None, y_next, problem, config, dt)
}

/// As [`backward_step`]. When every particle of `level_k` sits at the same
/// point (the deterministic start), the gradient is instead regressed on the
/// level `k+1` positions around that point, since level `k` carries no
/// spatial information.
pub fn backward_step_with(
    level_k: &LevelState,
    next_level: Option<&LevelState>,
    y_next: &[f64],
    problem: &ProblemSpec,
    config: &SolverConfig,
    dt: f64,
) -> Result<BackwardState> {
    let (m_count, d) = (level_k.n_particles, level_k.dim);
    if y_next.len() != m_count {
        return Err(Error::DimensionMismatch {
            expected: m_count,
            got: y_next.len(),
        });
    }
    if let Some((j, _)) = y_next.iter().enumerate().find(|(_, y)| !y.is_finite()) {
        return Err(Error::NumericalBlowup {
            particle: j,
            level: level_k.k + 1,
        });
    }
    let mean = ensemble_mean(y_next);
    let t = level_k.t;

    let coincident = problem.driver_uses_gradient && all_coincide(level_k);
    let regressor = if !problem.driver_uses_gradient {
        None
    } else if coincident {
        let next = next_level.ok_or_else(|| Error::DegenerateNeighborhood {
            anchor: 0,
            reason: "all particles coincide and no next level was supplied".into(),
        })?;
        Some(LevelRegressor::new(next, y_next, problem, config, dt)?)
    } else {
        Some(LevelRegressor::new(level_k, y_next, problem, config, dt)?)
    };

    // shared fit when every anchor is the same point
    let shared = match (&regressor, coincident) {
        (Some(reg), true) => {
            let anchor = level_k.particle(0);
            let fit = reg.fit_at(anchor).map_err(|e| e.at_particle(level_k.k, 0))?;
            let z = problem.diffusion.apply_transpose(t, anchor, &fit.alpha_x)?;
            Some((z, fit))
        }
        _ => None,
    };

    let zeros = vec![0.0; d];
    let solve = |m: usize| -> Result<ParticleResult> {
        let x = level_k.particle(m);
        let (z, cg) = match (&regressor, &shared) {
            (None, _) => (None, None),
            (Some(_), Some((z, fit))) => (Some(z.clone()), Some(fit.clone())),
            (Some(reg), None) => {
                let fit = reg.fit(m)?;
                let z = problem.diffusion.apply_transpose(t, x, &fit.alpha_x)?;
                (Some(z), Some(fit))
            }
        };
        let zr = z.as_deref().unwrap_or(&zeros);
        let (y, iters) = newton_solve_y(mean, t, x, zr, problem, dt, &config.newton)?;
        let newton_residual = (y - mean - (problem.driver)(t, x, y, zr) * dt).abs();
        Ok(ParticleResult {
            y,
            newton_iters: iters,
            z_norm: norm_sq(zr).sqrt(),
            cg_iters: cg.as_ref().map(|c| c.iterations),
            cg_residual: cg
                .as_ref()
                .map(|c| {
                    if c.initial_residual_norm > 0.0 {
                        c.residual_norm / c.initial_residual_norm
                    } else {
                        0.0
                    }
                })
                .unwrap_or(0.0),
            cg_converged: cg.as_ref().map(|c| c.converged).unwrap_or(true),
            newton_residual,
        })
    };

    let results: Vec<Result<ParticleResult>> = (0..m_count)
        .into_par_iter()
        .map(|m| solve(m).map_err(|e| e.at_particle(level_k.k, m)))
        .collect();

    let mut state = BackwardState {
        k: level_k.k,
        y_values: Vec::with_capacity(m_count),
        newton_iters: Vec::with_capacity(m_count),
        z_norms: Vec::with_capacity(m_count),
        cg_iters: Vec::new(),
        max_cg_residual: 0.0,
        cg_unconverged: 0,
        max_newton_residual: 0.0,
    };
    for r in results {
        let r = r?;
        state.y_values.push(r.y);
        state.newton_iters.push(r.newton_iters);
        state.z_norms.push(r.z_norm);
        if let Some(it) = r.cg_iters {
            state.cg_iters.push(it);
        }
        state.max_cg_residual = state.max_cg_residual.max(r.cg_residual);
        state.cg_unconverged += usize::from(!r.cg_converged);
        state.max_newton_residual = state.max_newton_residual.max(r.newton_residual);
    }
    Ok(state)
}

#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub enum Phase {
    Setup,
    Forward,
    Backward,
}

impl Phase {
    pub fn as_str(self) -> &'static str {
        match self {
            Phase::Setup => "setup",
            Phase::Forward => "forward",
            Phase::Backward => "backward",
        }
    }
}

#[derive(Debug, Clone, PartialEq)]
pub enum RunStatus {
    Ok,
    Failed { phase: Phase, message: String, usage: bool },
}

impl RunStatus {
    pub fn is_ok(&self) -> bool {
        matches!(self, RunStatus::Ok)
    }

    /// Single-token rendering for CSV cells.
    pub fn label(&self) -> String {
        match self {
            RunStatus::Ok => "ok".into(),
            RunStatus::Failed { phase, .. } => format!("failed:{}", phase.as_str()),
        }
    }
}

#[derive(Debug, Clone, PartialEq)]
pub struct RunReport {
    pub problem: String,
    pub dimension: usize,
    pub horizon: f64,
    pub n_steps: usize,
    pub n_particles: usize,
    pub seed: u64,
    pub y0: f64,
    pub reference: Option<f64>,
    pub runtime_s: f64,
    pub forward_s: f64,
    pub backward_s: f64,
    pub mean_cg_iters: f64,
    pub mean_newton_iters: f64,
    pub max_newton_iters: usize,
    pub max_newton_residual: f64,
    pub max_cg_residual: f64,
    pub cg_unconverged: usize,
    pub checkpoint_stride: Option<usize>,
    pub guard_hits: u64,
    pub status: RunStatus,
}

impl RunReport {
    fn empty(problem: &ProblemSpec, config: &SolverConfig) -> Self {
        RunReport {
            problem: problem.name.clone(),
            dimension: problem.dimension,
            horizon: problem.horizon,
            n_steps: config.n_steps,
            n_particles: config.n_particles,
            seed: config.seed,
            y0: f64::NAN,
            reference: crate::harness::reference_value(problem, 0.0, &problem.query_point),
            runtime_s: 0.0,
            forward_s: 0.0,
            backward_s: 0.0,
            mean_cg_iters: 0.0,
            mean_newton_iters: 0.0,
            max_newton_iters: 0,
            max_newton_residual: 0.0,
            max_cg_residual: 0.0,
            cg_unconverged: 0,
            checkpoint_stride: None,
            guard_hits: 0,
            status: RunStatus::Ok,
        }
    }

    pub fn abs_err(&self) -> Option<f64> {
        self.reference.map(|r| (self.y0 - r).abs())
    }

    pub fn rel_err(&self) -> Option<f64> {
        match self.reference {
            Some(r) if r != 0.0 => Some((self.y0 - r).abs() / r.abs()),
            _ => None,
        }
    }

    /// Flat `key=value` block, one pair per line.
    pub fn to_key_value(&self) -> String {
        let opt = |v: Option<f64>| v.map(|x| format!("{x:.16e}")).unwrap_or_else(|| "none".into());
        let mut s = String::new();
        let _ = writeln!(s, "problem={}", self.problem);
        let _ = writeln!(s, "d={}", self.dimension);
        let _ = writeln!(s, "T={}", self.horizon);
        let _ = writeln!(s, "N={}", self.n_steps);
        let _ = writeln!(s, "M={}", self.n_particles);
        let _ = writeln!(s, "seed={}", self.seed);
        let _ = writeln!(s, "Y0={:.16e}", self.y0);
        let _ = writeln!(s, "ref={}", opt(self.reference));
        let _ = writeln!(s, "abs_err={}", opt(self.abs_err()));
        let _ = writeln!(s, "rel_err={}", opt(self.rel_err()));
        let _ = writeln!(s, "runtime_s={:.6}", self.runtime_s);
        let _ = writeln!(s, "forward_s={:.6}", self.forward_s);
        let _ = writeln!(s, "backward_s={:.6}", self.backward_s);
        let _ = writeln!(s, "mean_cg_iters={:.4}", self.mean_cg_iters);
        let _ = writeln!(s, "mean_newton_iters={:.4}", self.mean_newton_iters);
        let _ = writeln!(s, "max_newton_iters={}", self.max_newton_iters);
        let _ = writeln!(s, "max_newton_residual={:e}", self.max_newton_residual);
        let _ = writeln!(s, "max_cg_rel_residual={:e}", self.max_cg_residual);
        let _ = writeln!(s, "cg_unconverged={}", self.cg_unconverged);
        let _ = writeln!(
            s,
            "checkpoint_stride={}",
            self.checkpoint_stride.map(|v| v.to_string()).unwrap_or_else(|| "none".into())
        );
        let _ = writeln!(s, "guard_hits={}", self.guard_hits);
        match &self.status {
            RunStatus::Ok => {
                let _ = writeln!(s, "status=ok");
            }
            RunStatus::Failed { phase, message, .. } => {
                let _ = writeln!(s, "status=failed");
                let _ = writeln!(s, "failed_phase={}", phase.as_str());
                let _ = writeln!(s, "error={}", message.replace('\n', " "));
            }
        }
        s
    }
}

/// Full solve: forward simulation, terminal condition, backward sweep.
pub fn run(problem: &ProblemSpec, config: &SolverConfig) -> Result<RunReport> {
    let mut report = RunReport::empty(problem, config);
    run_into(problem, config, &mut report).map(|_| report)
}

/// Like [`run`] but never fails; errors land in `status` with the phase.
pub fn run_report(problem: &ProblemSpec, config: &SolverConfig) -> RunReport {
    let mut report = RunReport::empty(problem, config);
    if let Err((phase, e)) = run_phases(problem, config, &mut report) {
        report.y0 = f64::NAN;
        report.status = RunStatus::Failed {
            phase,
            usage: e.is_usage(),
            message: e.to_string(),
        };
    }
    report
}

fn run_into(problem: &ProblemSpec, config: &SolverConfig, report: &mut RunReport) -> Result<()> {
    run_phases(problem, config, report).map_err(|(_, e)| e)
}

fn run_phases(
    problem: &ProblemSpec,
    config: &SolverConfig,
    report: &mut RunReport,
) -> std::result::Result<(), (Phase, Error)> {
    let start = Instant::now();
    let setup = |e| (Phase::Setup, e);
    problem.validate().map_err(setup)?;
    config.validate(problem.dimension).map_err(setup)?;
    let guard_before = problem.guard_hit_count();

    let store = simulate_paths(problem, config).map_err(|e| (Phase::Forward, e))?;
    report.forward_s = start.elapsed().as_secs_f64();
    report.checkpoint_stride = match store.mode() {
        StorageMode::Full => None,
        StorageMode::Checkpointed { stride } => Some(stride),
    };

    let back = Instant::now();
    let bw = |e| (Phase::Backward, e);
    let n = config.n_steps;
    let dt = store.dt;
    let terminal = store.terminal();
    let mut y: Vec<f64> = terminal.particles().map(|x| (problem.terminal)(x)).collect();

    let mut cursor = BackwardCursor::new(&store, problem);
    let mut level_one: Option<LevelState> = if n == 1 { Some(terminal.clone()) } else { None };
    let (mut cg_total, mut cg_count) = (0usize, 0usize);
    let (mut newton_total, mut newton_count) = (0usize, 0usize);
    for k in (0..n).rev() {
        let level = cursor.level(k).map_err(bw)?;
        let state = backward_step_with(level, level_one.as_ref(), &y, problem, config, dt).map_err(bw)?;
        if k == 1 {
            level_one = Some(level.clone());
        }
        cg_total += state.cg_iters.iter().sum::<usize>();
        cg_count += state.cg_iters.len();
        newton_total += state.newton_iters.iter().sum::<usize>();
        newton_count += state.newton_iters.len();
        report.max_newton_iters = report
            .max_newton_iters
            .max(state.newton_iters.iter().copied().max().unwrap_or(0));
        report.max_newton_residual = report.max_newton_residual.max(state.max_newton_residual);
        report.max_cg_residual = report.max_cg_residual.max(state.max_cg_residual);
        report.cg_unconverged += state.cg_unconverged;
        y = state.y_values;
    }
    report.y0 = ensemble_mean(&y);
    report.backward_s = back.elapsed().as_secs_f64();
    report.runtime_s = start.elapsed().as_secs_f64();
    report.mean_cg_iters = if cg_count > 0 {
        cg_total as f64 / cg_count as f64
    } else {
        0.0
    };
    report.mean_newton_iters = if newton_count > 0 {
        newton_total as f64 / newton_count as f64
    } else {
        0.0
    };
    report.guard_hits = problem.guard_hit_count() - guard_before;
    if !report.y0.is_finite() {
        return Err((
            Phase::Backward,
            Error::NumericalBlowup {
                particle: 0,
                level: 0,
            },
        ));
    }
    Ok(())
}
