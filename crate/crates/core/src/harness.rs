//! Convergence sweeps, reference values, log–log slopes and runtime scaling.

use std::time::Instant;

use crate::backward::{run_report, RunReport, RunStatus};
use crate::config::SolverConfig;
use crate::error::{Error, Result};
use crate::model::{builtin_problem, ProblemParams, ProblemSpec};

/// Literature value of the double-well Allen–Cahn problem at the origin for
/// `d = 100`, `T = 0.3`.
pub const ALLEN_CAHN_DW_REFERENCE: f64 = 0.0528;
pub const BURGERS_REFERENCE: f64 = 0.5;

/// `u(t, x)` from the exact solution when there is one, otherwise a cited
/// value for the benchmark configurations that have one.
pub fn reference_value(problem: &ProblemSpec, t: f64, x: &[f64]) -> Option<f64> {
    if let Some(exact) = &problem.exact {
        return Some(exact.u(t, x));
    }
    let at_origin = t == 0.0 && x.iter().all(|v| *v == 0.0);
    match problem.name.as_str() {
        "allen_cahn_dw" if at_origin && problem.dimension == 100 && problem.horizon == 0.3 => {
            Some(ALLEN_CAHN_DW_REFERENCE)
        }
        "burgers" if at_origin => Some(BURGERS_REFERENCE),
        _ => None,
    }
}

#[derive(Debug, Clone, PartialEq)]
pub enum Reference {
    /// Whatever [`reference_value`] yields at `(0, x₀)`.
    Exact,
    Cited(f64),
    None,
}

#[derive(Debug, Clone, PartialEq)]
pub struct SweepPlan {
    pub problem: String,
    pub dimension: usize,
    pub params: ProblemParams,
    /// Strictly increasing.
    pub n_values: Vec<usize>,
    pub m_values: Vec<usize>,
    /// Seeds `base, base+1, …` are used for every cell.
    pub seeds_per_cell: usize,
    pub reference: Reference,
}

impl SweepPlan {
    pub fn new(problem: &str, dimension: usize) -> Self {
        SweepPlan {
            problem: problem.to_string(),
            dimension,
            params: ProblemParams::new(),
            n_values: vec![100, 200, 400, 800],
            m_values: vec![100],
            seeds_per_cell: 5,
            reference: Reference::Exact,
        }
    }

    pub fn validate(&self) -> Result<()> {
        if self.n_values.is_empty() || self.m_values.is_empty() {
            return Err(Error::config("sweep needs at least one N and one M"));
        }
        if self.n_values.windows(2).any(|w| w[0] >= w[1]) {
            return Err(Error::config("sweep_N must be strictly increasing"));
        }
        if self.seeds_per_cell < 1 {
            return Err(Error::config("seeds_per_cell must be at least 1"));
        }
        Ok(())
    }

    pub fn build_problem(&self) -> Result<ProblemSpec> {
        builtin_problem(&self.problem, self.dimension, &self.params)
    }

    pub fn cells(&self) -> usize {
        self.n_values.len() * self.m_values.len() * self.seeds_per_cell
    }
}

#[derive(Debug, Clone, PartialEq)]
pub struct SweepRow {
    pub report: RunReport,
}

impl SweepRow {
    pub fn n(&self) -> usize {
        self.report.n_steps
    }
    pub fn m(&self) -> usize {
        self.report.n_particles
    }
}

/// One point of the plot-ready output.
#[derive(Debug, Clone, PartialEq)]
pub struct ErrorPoint {
    pub m: usize,
    pub n: usize,
    pub dt: f64,
    pub mean_abs_err: f64,
    pub mean_rel_err: f64,
    pub mean_y0: f64,
    /// Seeds that finished; failed cells are left out of the average.
    pub samples: usize,
}

#[derive(Debug, Clone, PartialEq)]
pub struct SweepResult {
    pub problem: String,
    pub dimension: usize,
    pub horizon: f64,
    pub reference: Option<f64>,
    pub rows: Vec<RunReport>,
    /// `(M, slope)`; `None` when fewer than two N values have errors.
    pub slopes: Vec<(usize, Option<f64>)>,
}

impl SweepResult {
    /// Seed-averaged errors per `(M, N)`, ordered by M then N.
    pub fn error_points(&self) -> Vec<ErrorPoint> {
        let mut keys: Vec<(usize, usize)> = self.rows.iter().map(|r| (r.n_particles, r.n_steps)).collect();
        keys.sort_unstable();
        keys.dedup();
        keys.into_iter()
            .filter_map(|(m, n)| {
                let ok: Vec<&RunReport> = self
                    .rows
                    .iter()
                    .filter(|r| r.n_particles == m && r.n_steps == n && r.status.is_ok())
                    .collect();
                if ok.is_empty() {
                    return None;
                }
                let k = ok.len() as f64;
                let mean_y0 = ok.iter().map(|r| r.y0).sum::<f64>() / k;
                let (abs, rel) = match self.reference {
                    Some(r) => (
                        ok.iter().map(|x| (x.y0 - r).abs()).sum::<f64>() / k,
                        if r != 0.0 {
                            ok.iter().map(|x| (x.y0 - r).abs() / r.abs()).sum::<f64>() / k
                        } else {
                            f64::NAN
                        },
                    ),
                    None => (f64::NAN, f64::NAN),
                };
                Some(ErrorPoint {
                    m,
                    n,
                    dt: self.horizon / n as f64,
                    mean_abs_err: abs,
                    mean_rel_err: rel,
                    mean_y0,
                    samples: ok.len(),
                })
            })
            .collect()
    }

    pub fn slope_for(&self, m: usize) -> Option<f64> {
        self.slopes.iter().find(|(mm, _)| *mm == m).and_then(|(_, s)| *s)
    }

    pub fn failures(&self) -> usize {
        self.rows.iter().filter(|r| !r.status.is_ok()).count()
    }

    fn fit_slopes(&mut self) {
        let points = self.error_points();
        let mut ms: Vec<usize> = points.iter().map(|p| p.m).collect();
        ms.dedup();
        self.slopes = ms
            .into_iter()
            .map(|m| {
                let pts: Vec<(f64, f64)> = points
                    .iter()
                    .filter(|p| p.m == m && p.mean_abs_err.is_finite())
                    .map(|p| (p.dt, p.mean_abs_err))
                    .collect();
                (m, fit_slope(&pts).ok())
            })
            .collect();
    }
}

/// Runs every `(M, N, seed)` cell sequentially. Cell failures are kept as
/// rows with a failed status; only plan/problem errors abort the sweep.
pub fn run_sweep(plan: &SweepPlan, base: &SolverConfig) -> Result<SweepResult> {
    run_sweep_with(plan, base, |_| {})
}

/// As [`run_sweep`], calling `progress` after each cell.
pub fn run_sweep_with(
    plan: &SweepPlan,
    base: &SolverConfig,
    mut progress: impl FnMut(&RunReport),
) -> Result<SweepResult> {
    plan.validate()?;
    let problem = plan.build_problem()?;
    let reference = match plan.reference {
        Reference::Exact => reference_value(&problem, 0.0, &problem.query_point),
        Reference::Cited(v) => Some(v),
        Reference::None => None,
    };
    let mut rows = Vec::with_capacity(plan.cells());
    for &m in &plan.m_values {
        for &n in &plan.n_values {
            for s in 0..plan.seeds_per_cell {
                let cfg = base
                    .clone()
                    .with_steps(n)
                    .with_particles(m)
                    .with_seed(base.seed.wrapping_add(s as u64));
                let mut report = run_report(&problem, &cfg);
                report.reference = reference;
                progress(&report);
                rows.push(report);
            }
        }
    }
    let mut result = SweepResult {
        problem: plan.problem.clone(),
        dimension: plan.dimension,
        horizon: problem.horizon,
        reference,
        rows,
        slopes: Vec::new(),
    };
    result.fit_slopes();
    Ok(result)
}

/// Least-squares slope of `log(err)` against `log(dt)`.
pub fn fit_slope(points: &[(f64, f64)]) -> Result<f64> {
    if points.len() < 2 {
        return Err(Error::invalid("slope fit needs at least two points"));
    }
    for &(dt, err) in points {
        if !(dt > 0.0 && dt.is_finite()) {
            return Err(Error::invalid(format!("dt must be positive, got {dt}")));
        }
        if !(err > 0.0 && err.is_finite()) {
            return Err(Error::invalid(format!("error must be positive, got {err}")));
        }
    }
    let xs: Vec<f64> = points.iter().map(|p| p.0.ln()).collect();
    let ys: Vec<f64> = points.iter().map(|p| p.1.ln()).collect();
    let n = xs.len() as f64;
    let mx = xs.iter().sum::<f64>() / n;
    let my = ys.iter().sum::<f64>() / n;
    let sxx: f64 = xs.iter().map(|x| (x - mx).powi(2)).sum();
    if sxx == 0.0 {
        return Err(Error::invalid("dt values must be distinct"));
    }
    let sxy: f64 = xs.iter().zip(&ys).map(|(x, y)| (x - mx) * (y - my)).sum();
    Ok(sxy / sxx)
}

#[derive(Debug, Clone, PartialEq)]
pub struct ScalingCell {
    pub n: usize,
    pub m: usize,
    pub runtime_s: f64,
    pub forward_s: f64,
    pub backward_s: f64,
    pub status: RunStatus,
}

#[derive(Debug, Clone, PartialEq)]
pub struct ScalingReport {
    pub problem: String,
    pub dimension: usize,
    pub cells: Vec<ScalingCell>,
    /// `(M, exponent of runtime in N)`
    pub n_exponents: Vec<(usize, f64)>,
    /// `(N, exponent of runtime in M)`
    pub m_exponents: Vec<(usize, f64)>,
}

impl ScalingReport {
    pub fn runtime(&self, n: usize, m: usize) -> Option<f64> {
        self.cells.iter().find(|c| c.n == n && c.m == m).map(|c| c.runtime_s)
    }

    /// Runtime ratios between consecutive N values at fixed M.
    pub fn n_ratios(&self, m: usize) -> Vec<f64> {
        let mut cells: Vec<&ScalingCell> = self.cells.iter().filter(|c| c.m == m).collect();
        cells.sort_by_key(|c| c.n);
        cells.windows(2).map(|w| w[1].runtime_s / w[0].runtime_s).collect()
    }
}

/// Times one run per `(N, M)` cell and fits runtime power laws.
pub fn scaling_report(
    problem: &ProblemSpec,
    config: &SolverConfig,
    n_list: &[usize],
    m_list: &[usize],
) -> ScalingReport {
    let mut cells = Vec::new();
    for &m in m_list {
        for &n in n_list {
            let cfg = config.clone().with_steps(n).with_particles(m);
            let start = Instant::now();
            let r = run_report(problem, &cfg);
            let elapsed = start.elapsed().as_secs_f64();
            cells.push(ScalingCell {
                n,
                m,
                runtime_s: if r.status.is_ok() { r.runtime_s } else { elapsed },
                forward_s: r.forward_s,
                backward_s: r.backward_s,
                status: r.status,
            });
        }
    }
    let exponent = |pts: Vec<(f64, f64)>| fit_slope(&pts).ok();
    let n_exponents = m_list
        .iter()
        .filter_map(|&m| {
            let pts = cells
                .iter()
                .filter(|c| c.m == m && c.status.is_ok())
                .map(|c| (c.n as f64, c.runtime_s))
                .collect();
            exponent(pts).map(|e| (m, e))
        })
        .collect();
    let m_exponents = n_list
        .iter()
        .filter_map(|&n| {
            let pts = cells
                .iter()
                .filter(|c| c.n == n && c.status.is_ok())
                .map(|c| (c.m as f64, c.runtime_s))
                .collect();
            exponent(pts).map(|e| (n, e))
        })
        .collect();
    ScalingReport {
        problem: problem.name.clone(),
        dimension: problem.dimension,
        cells,
        n_exponents,
        m_exponents,
    }
}

/// Benchmark figures that can be reproduced.
#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub enum Figure {
    AllenCahn100,
    AllenCahnLog,
    Burgers,
    HamiltonJacobi,
}

impl Figure {
    pub const ALL: [Figure; 4] = [
        Figure::AllenCahn100,
        Figure::AllenCahnLog,
        Figure::Burgers,
        Figure::HamiltonJacobi,
    ];

    pub fn id(self) -> &'static str {
        match self {
            Figure::AllenCahn100 => "ac100",
            Figure::AllenCahnLog => "ac_log",
            Figure::Burgers => "burgers",
            Figure::HamiltonJacobi => "hj",
        }
    }

    pub fn parse(s: &str) -> Option<Figure> {
        Figure::ALL.into_iter().find(|f| f.id() == s)
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub enum Scale {
    Desk,
    Paper,
}

impl Scale {
    pub fn parse(s: &str) -> Option<Scale> {
        match s {
            "desk" => Some(Scale::Desk),
            "paper" => Some(Scale::Paper),
            _ => None,
        }
    }
}

/// Pass/fail thresholds checked after a reproduction sweep.
#[derive(Debug, Clone, PartialEq)]
pub struct Thresholds {
    /// Bound on the seed-averaged relative error at the finest N.
    pub max_rel_err: Option<f64>,
    pub slope_range: Option<(f64, f64)>,
    /// Bound on the spread of slopes across M values.
    pub max_slope_spread: Option<f64>,
}

#[derive(Debug, Clone)]
pub struct Reproduction {
    pub figure: Figure,
    pub plans: Vec<SweepPlan>,
    pub config: SolverConfig,
    pub thresholds: Thresholds,
}

/// Pre-baked sweep for a figure. Desk scale keeps `d ≤ 500` and `N ≤ 3200`.
pub fn reproduction(figure: Figure, scale: Scale) -> Reproduction {
    let desk = scale == Scale::Desk;
    let mut config = SolverConfig::default().with_seed(1);
    let plan = |name: &str, d: usize, ns: &[usize], ms: &[usize]| {
        let mut p = SweepPlan::new(name, d);
        p.n_values = ns.to_vec();
        p.m_values = ms.to_vec();
        p
    };
    let slope = Some((0.7, 1.3));
    match figure {
        Figure::AllenCahn100 => Reproduction {
            figure,
            plans: vec![plan(
                "allen_cahn_dw",
                100,
                if desk { &[400, 800, 1600, 3200] } else { &[1250, 2500, 5000, 10000] },
                if desk { &[100] } else { &[50, 100] },
            )],
            config,
            thresholds: Thresholds {
                max_rel_err: Some(0.02),
                slope_range: slope,
                max_slope_spread: None,
            },
        },
        Figure::AllenCahnLog => Reproduction {
            figure,
            plans: if desk {
                vec![plan("allen_cahn_log", 100, &[400, 800, 1600, 3200], &[100])]
            } else {
                vec![
                    plan("allen_cahn_log", 100, &[4000, 8000, 16000, 32000], &[100]),
                    plan("allen_cahn_log", 1000, &[4000, 8000, 16000, 32000], &[100]),
                ]
            },
            config,
            thresholds: Thresholds {
                max_rel_err: Some(0.01),
                slope_range: slope,
                max_slope_spread: None,
            },
        },
        Figure::Burgers => {
            if !desk {
                // 8 GiB of levels at d = 10⁴ forces checkpointing anyway
                config.memory_budget_bytes = 2048 * 1024 * 1024;
            }
            Reproduction {
                figure,
                plans: vec![plan(
                    "burgers",
                    if desk { 500 } else { 10_000 },
                    if desk { &[200, 400, 800, 1600] } else { &[1250, 2500, 5000, 10000] },
                    &[100],
                )],
                config,
                thresholds: Thresholds {
                    max_rel_err: Some(0.02),
                    slope_range: slope,
                    max_slope_spread: None,
                },
            }
        }
        Figure::HamiltonJacobi => {
            let ns: &[usize] = if desk { &[200, 400, 800, 1600] } else { &[3750, 7500, 15000, 30000] };
            let dims: &[usize] = if desk { &[50, 500] } else { &[500, 2000] };
            Reproduction {
                figure,
                plans: dims
                    .iter()
                    .map(|&d| plan("hj_gradient_sink", d, ns, &[50, 100]))
                    .collect(),
                config,
                thresholds: Thresholds {
                    max_rel_err: Some(0.01),
                    slope_range: slope,
                    max_slope_spread: Some(0.2),
                },
            }
        }
    }
}

/// Outcome of checking one sweep against [`Thresholds`].
#[derive(Debug, Clone, PartialEq)]
pub struct Verdict {
    pub passed: bool,
    /// One human-readable line per checked metric.
    pub lines: Vec<String>,
}

pub fn check_thresholds(result: &SweepResult, thresholds: &Thresholds) -> Verdict {
    let mut lines = Vec::new();
    let mut passed = true;
    let points = result.error_points();
    let mut ms: Vec<usize> = points.iter().map(|p| p.m).collect();
    ms.dedup();
    let tag = format!("{} d={}", result.problem, result.dimension);
    if result.failures() > 0 {
        passed = false;
        lines.push(format!("FAIL {tag}: {} failed cells", result.failures()));
    }
    for &m in &ms {
        if let Some(limit) = thresholds.max_rel_err {
            let finest = points.iter().filter(|p| p.m == m).max_by_key(|p| p.n);
            match finest {
                Some(p) if p.mean_rel_err.is_finite() => {
                    let ok = p.mean_rel_err <= limit;
                    passed &= ok;
                    lines.push(format!(
                        "{} {tag} M={m}: rel_err at N={} = {:.4e} (limit {limit})",
                        if ok { "PASS" } else { "FAIL" },
                        p.n,
                        p.mean_rel_err
                    ));
                }
                _ => {
                    passed = false;
                    lines.push(format!("FAIL {tag} M={m}: no relative error available"));
                }
            }
        }
        if let Some((lo, hi)) = thresholds.slope_range {
            match result.slope_for(m) {
                Some(s) => {
                    let ok = (lo..=hi).contains(&s);
                    passed &= ok;
                    lines.push(format!(
                        "{} {tag} M={m}: slope = {s:.3} (range [{lo}, {hi}])",
                        if ok { "PASS" } else { "FAIL" }
                    ));
                }
                None => {
                    passed = false;
                    lines.push(format!("FAIL {tag} M={m}: slope unavailable"));
                }
            }
        }
    }
    if let Some(spread) = thresholds.max_slope_spread {
        let slopes: Vec<f64> = result.slopes.iter().filter_map(|(_, s)| *s).collect();
        if slopes.len() >= 2 {
            let max = slopes.iter().cloned().fold(f64::MIN, f64::max);
            let min = slopes.iter().cloned().fold(f64::MAX, f64::min);
            let ok = max - min <= spread;
            passed &= ok;
            lines.push(format!(
                "{} {tag}: slope spread across M = {:.3} (limit {spread})",
                if ok { "PASS" } else { "FAIL" },
                max - min
            ));
        }
    }
    Verdict { passed, lines }
}
