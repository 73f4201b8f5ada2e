use crate::backward::NewtonConfig;
use crate::error::{Error, Result};
use crate::regress::{BandwidthRule, KernelSpec};

/// Ridge penalty selection for the local regressions.
#[derive(Debug, Clone, Copy, PartialEq)]
pub enum RidgeRule {
    /// `λ = factor · Σⱼ wⱼ‖Dⱼ‖² / d`, computed per anchor.
    Auto { factor: f64 },
    Fixed(f64),
}

impl Default for RidgeRule {
    fn default() -> Self {
        RidgeRule::Auto { factor: 1e-8 }
    }
}

/// Which algebraic form of the ridge normal equations CG is run on.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Default)]
pub enum RegressionRoute {
    /// Dual when `M < 2d`, primal otherwise.
    #[default]
    Auto,
    /// `(DᵀWD + λI) α = DᵀWY` in `R^{d+1}`.
    Primal,
    /// `(W^{½} D Dᵀ W^{½} + λI) s = W^{½} Y` in `R^M`, then `α = Dᵀ W^{½} s`.
    Dual,
}

#[derive(Debug, Clone, PartialEq)]
pub struct SolverConfig {
    pub n_steps: usize,
    pub n_particles: usize,
    pub seed: u64,
    pub kernel: KernelSpec,
    pub bandwidth: BandwidthRule,
    pub ridge: RidgeRule,
    pub route: RegressionRoute,
    pub cg_tol: f64,
    /// `None` means `min(10(d+1), 2000)`.
    pub cg_maxiter: Option<usize>,
    pub newton: NewtonConfig,
    pub memory_budget_bytes: u64,
    /// `None` means `⌈√N⌉` when checkpointing kicks in.
    pub checkpoint_stride: Option<usize>,
}

impl Default for SolverConfig {
    fn default() -> Self {
        SolverConfig {
            n_steps: 1000,
            n_particles: 100,
            seed: 42,
            kernel: KernelSpec::Gaussian,
            bandwidth: BandwidthRule::MaxDistance,
            ridge: RidgeRule::default(),
            route: RegressionRoute::Auto,
            cg_tol: 1e-10,
            cg_maxiter: None,
            newton: NewtonConfig::default(),
            memory_budget_bytes: 4096 * 1024 * 1024,
            checkpoint_stride: None,
        }
    }
}

impl SolverConfig {
    pub fn with_steps(mut self, n: usize) -> Self {
        self.n_steps = n;
        self
    }

    pub fn with_particles(mut self, m: usize) -> Self {
        self.n_particles = m;
        self
    }

    pub fn with_seed(mut self, seed: u64) -> Self {
        self.seed = seed;
        self
    }

    pub fn dt(&self, horizon: f64) -> f64 {
        horizon / self.n_steps as f64
    }

    pub fn cg_maxiter_for(&self, d: usize) -> usize {
        self.cg_maxiter.unwrap_or_else(|| (10 * (d + 1)).min(2000))
    }

    pub fn use_dual(&self, d: usize) -> bool {
        match self.route {
            RegressionRoute::Primal => false,
            RegressionRoute::Dual => true,
            RegressionRoute::Auto => self.n_particles < 2 * d,
        }
    }

    pub fn validate(&self, d: usize) -> Result<()> {
        if self.n_steps < 1 {
            return Err(Error::config("N must be at least 1"));
        }
        if self.n_particles < 2 {
            return Err(Error::config("M must be at least 2"));
        }
        if self.n_steps > u32::MAX as usize || self.n_particles > u32::MAX as usize {
            return Err(Error::config("N and M must fit in 32 bits"));
        }
        match self.ridge {
            RidgeRule::Fixed(l) if !(l >= 0.0 && l.is_finite()) => {
                return Err(Error::config(format!("ridge_lambda must be >= 0, got {l}")))
            }
            RidgeRule::Fixed(l) if l == 0.0 && self.n_particles <= d + 1 => {
                return Err(Error::config("ridge required when M <= d+1"))
            }
            RidgeRule::Auto { factor } if !(factor > 0.0 && factor.is_finite()) => {
                return Err(Error::config(format!("ridge factor must be positive, got {factor}")))
            }
            _ => {}
        }
        if !(self.cg_tol > 0.0 && self.cg_tol < 1.0) {
            return Err(Error::config(format!("cg_tol must be in (0, 1), got {}", self.cg_tol)));
        }
        if self.cg_maxiter == Some(0) {
            return Err(Error::config("cg_maxiter must be positive"));
        }
        if self.checkpoint_stride == Some(0) {
            return Err(Error::config("checkpoint stride must be positive"));
        }
        self.bandwidth.validate()?;
        self.newton.validate()?;
        Ok(())
    }
}
