//! PDE problem description and the built-in benchmark problems.
//!
//! A [`ProblemSpec`] describes
//!
//! ```text
//! ∂ₜu + Lu + f(t, x, u, σᵀ∇u) = 0   on [0, T) × Rᵈ,     u(T, ·) = g,
//! Lu = ½ tr(σσᵀ ∇²u) + μ·∇u
//! ```
//!
//! together with the point `x₀` at which `u(0, x₀)` is wanted. All callbacks
//! are pure and `Send + Sync`, so a spec can be shared by reference across
//! worker threads.

mod builtin;
mod diffusion;

use std::collections::BTreeMap;
use std::fmt;
use std::sync::atomic::{AtomicU64, Ordering};
use std::sync::Arc;

pub use builtin::{builtin_problem, BUILTIN_NAMES};
pub use diffusion::{DiffusionSpec, DENSE_MAX_DIM};

use crate::error::{Error, Result};

/// `(t, x) -> scalar`
pub type ScalarField = Arc<dyn Fn(f64, &[f64]) -> f64 + Send + Sync>;
/// `(t, x, out)`, writes a d-vector into `out`
pub type VectorField = Arc<dyn Fn(f64, &[f64], &mut [f64]) + Send + Sync>;
/// `(t, x, y, z) -> scalar`
pub type DriverFn = Arc<dyn Fn(f64, &[f64], f64, &[f64]) -> f64 + Send + Sync>;
/// `x -> scalar`
pub type TerminalFn = Arc<dyn Fn(&[f64]) -> f64 + Send + Sync>;
/// `(t, x, u, ∇u) -> scalar`, the nonlinearity expressed in terms of `∇u`
pub type Nonlinearity = Arc<dyn Fn(f64, &[f64], f64, &[f64]) -> f64 + Send + Sync>;

#[derive(Clone, Default)]
pub enum Drift {
    #[default]
    Zero,
    Field(VectorField),
}

impl Drift {
    /// `out = μ(t, x)`
    pub fn eval_into(&self, t: f64, x: &[f64], out: &mut [f64]) {
        match self {
            Drift::Zero => out.fill(0.0),
            Drift::Field(f) => f(t, x, out),
        }
    }

    pub fn is_zero(&self) -> bool {
        matches!(self, Drift::Zero)
    }
}

/// Closed-form solution with the derivatives needed to build manufactured
/// sources and to check PDE residuals.
#[derive(Clone)]
pub struct ExactSolution {
    pub value: ScalarField,
    pub time_derivative: ScalarField,
    pub gradient: VectorField,
    pub hessian_diagonal: VectorField,
}

impl ExactSolution {
    pub fn u(&self, t: f64, x: &[f64]) -> f64 {
        (self.value)(t, x)
    }

    pub fn grad(&self, t: f64, x: &[f64]) -> Vec<f64> {
        let mut g = vec![0.0; x.len()];
        (self.gradient)(t, x, &mut g);
        g
    }
}

#[derive(Clone)]
pub struct ProblemSpec {
    pub name: String,
    pub dimension: usize,
    pub horizon: f64,
    pub query_point: Vec<f64>,
    pub drift: Drift,
    pub diffusion: DiffusionSpec,
    pub driver: DriverFn,
    pub driver_dy: Option<DriverFn>,
    /// When false the driver ignores its `z` argument and the backward sweep
    /// skips the gradient regression.
    pub driver_uses_gradient: bool,
    pub terminal: TerminalFn,
    pub exact: Option<ExactSolution>,
    /// Counts evaluations where a guarded nonlinearity had to clamp its input.
    pub guard_hits: Arc<AtomicU64>,
}

impl fmt::Debug for ProblemSpec {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        f.debug_struct("ProblemSpec")
            .field("name", &self.name)
            .field("dimension", &self.dimension)
            .field("horizon", &self.horizon)
            .field("diffusion", &self.diffusion)
            .field("driver_uses_gradient", &self.driver_uses_gradient)
            .field("has_exact", &self.exact.is_some())
            .finish_non_exhaustive()
    }
}

impl ProblemSpec {
    /// A problem with zero drift, query point at the origin and no exact
    /// solution. Use the `with_*` methods to fill in the rest.
    pub fn new(
        name: impl Into<String>,
        dimension: usize,
        horizon: f64,
        diffusion: DiffusionSpec,
        driver: DriverFn,
        terminal: TerminalFn,
    ) -> Self {
        ProblemSpec {
            name: name.into(),
            dimension,
            horizon,
            query_point: vec![0.0; dimension],
            drift: Drift::Zero,
            diffusion,
            driver,
            driver_dy: None,
            driver_uses_gradient: true,
            terminal,
            exact: None,
            guard_hits: Arc::new(AtomicU64::new(0)),
        }
    }

    pub fn with_query_point(mut self, x0: Vec<f64>) -> Self {
        self.query_point = x0;
        self
    }

    pub fn with_drift(mut self, drift: Drift) -> Self {
        self.drift = drift;
        self
    }

    pub fn with_driver_dy(mut self, dy: DriverFn) -> Self {
        self.driver_dy = Some(dy);
        self
    }

    pub fn with_gradient_free_driver(mut self) -> Self {
        self.driver_uses_gradient = false;
        self
    }

    pub fn with_exact(mut self, exact: ExactSolution) -> Self {
        self.exact = Some(exact);
        self
    }

    pub fn zero_driver() -> DriverFn {
        Arc::new(|_, _, _, _| 0.0)
    }

    pub fn validate(&self) -> Result<()> {
        if self.dimension == 0 {
            return Err(Error::invalid("dimension must be at least 1"));
        }
        if !(self.horizon.is_finite() && self.horizon > 0.0) {
            return Err(Error::invalid(format!(
                "horizon must be positive, got {}",
                self.horizon
            )));
        }
        if self.query_point.len() != self.dimension {
            return Err(Error::DimensionMismatch {
                expected: self.dimension,
                got: self.query_point.len(),
            });
        }
        self.diffusion.validate(Some(self.dimension))
    }

    pub fn guard_hit_count(&self) -> u64 {
        self.guard_hits.load(Ordering::Relaxed)
    }

    /// `Lu` of the exact solution at `(t, x)`, when both the solution and a
    /// diagonal generator are available.
    pub fn exact_generator(&self, t: f64, x: &[f64]) -> Option<f64> {
        let exact = self.exact.as_ref()?;
        generator_of(exact, &self.diffusion, &self.drift, t, x)
    }
}

fn generator_of(
    exact: &ExactSolution,
    diffusion: &DiffusionSpec,
    drift: &Drift,
    t: f64,
    x: &[f64],
) -> Option<f64> {
    let d = x.len();
    let half_var = diffusion.half_variance_diagonal(t, x)?;
    let mut hess = vec![0.0; d];
    (exact.hessian_diagonal)(t, x, &mut hess);
    let mut lu: f64 = half_var.iter().zip(&hess).map(|(a, h)| a * h).sum();
    if !drift.is_zero() {
        let mut mu = vec![0.0; d];
        let mut grad = vec![0.0; d];
        drift.eval_into(t, x, &mut mu);
        (exact.gradient)(t, x, &mut grad);
        lu += mu.iter().zip(&grad).map(|(a, b)| a * b).sum::<f64>();
    }
    Some(lu)
}

/// Source term that makes `exact` solve `∂ₜu + Lu + N(u, ∇u) + s = 0`:
///
/// `s(t, x) = −(∂ₜu + Lu)(t, x) − N(t, x, u, ∇u)`.
///
/// The generator must have a diagonal `σσᵀ`; dense diffusion is rejected.
pub fn manufactured_source(
    exact: &ExactSolution,
    diffusion: &DiffusionSpec,
    drift: &Drift,
    nonlinearity: Nonlinearity,
) -> Result<ScalarField> {
    if matches!(diffusion, DiffusionSpec::DenseSmall { .. }) {
        return Err(Error::invalid(
            "manufactured sources need a diagonal diffusion",
        ));
    }
    let exact = exact.clone();
    let diffusion = diffusion.clone();
    let drift = drift.clone();
    Ok(Arc::new(move |t, x| {
        let u = exact.u(t, x);
        let grad = exact.grad(t, x);
        let dtu = (exact.time_derivative)(t, x);
        let lu = generator_of(&exact, &diffusion, &drift, t, x).unwrap_or(f64::NAN);
        -(dtu + lu) - nonlinearity(t, x, u, &grad)
    }))
}

/// Problem parameters as `key -> values`; scalars are one-element vectors.
#[derive(Debug, Clone, Default, PartialEq)]
pub struct ProblemParams {
    values: BTreeMap<String, Vec<f64>>,
}

impl ProblemParams {
    pub fn new() -> Self {
        Self::default()
    }

    pub fn set(mut self, key: &str, value: f64) -> Self {
        self.values.insert(key.to_string(), vec![value]);
        self
    }

    pub fn set_vector(mut self, key: &str, values: Vec<f64>) -> Self {
        self.values.insert(key.to_string(), values);
        self
    }

    pub fn insert(&mut self, key: &str, values: Vec<f64>) {
        self.values.insert(key.to_string(), values);
    }

    pub fn is_empty(&self) -> bool {
        self.values.is_empty()
    }

    pub fn iter(&self) -> impl Iterator<Item = (&str, &[f64])> {
        self.values.iter().map(|(k, v)| (k.as_str(), v.as_slice()))
    }

    pub fn contains(&self, key: &str) -> bool {
        self.values.contains_key(key)
    }

    pub fn scalar(&self, key: &str, default: f64) -> Result<f64> {
        match self.values.get(key) {
            None => Ok(default),
            Some(v) if v.len() == 1 => Ok(v[0]),
            Some(v) => Err(Error::invalid(format!(
                "parameter `{key}` expects one value, got {}",
                v.len()
            ))),
        }
    }

    /// A d-vector; a single value is broadcast to every coordinate.
    pub fn vector(&self, key: &str, d: usize, default: f64) -> Result<Vec<f64>> {
        match self.values.get(key) {
            None => Ok(vec![default; d]),
            Some(v) if v.len() == 1 => Ok(vec![v[0]; d]),
            Some(v) if v.len() == d => Ok(v.clone()),
            Some(v) => Err(Error::invalid(format!(
                "parameter `{key}` expects 1 or {d} values, got {}",
                v.len()
            ))),
        }
    }
}

#[cfg(test)]
mod tests {
    use super::*;

    fn constant_exact(c: f64) -> ExactSolution {
        ExactSolution {
            value: Arc::new(move |_, _| c),
            time_derivative: Arc::new(|_, _| 0.0),
            gradient: Arc::new(|_, _, g| g.fill(0.0)),
            hessian_diagonal: Arc::new(|_, _, h| h.fill(0.0)),
        }
    }

    #[test]
    fn constant_solution_source() {
        let c = 0.7;
        let src = manufactured_source(
            &constant_exact(c),
            &DiffusionSpec::Isotropic(1.3),
            &Drift::Zero,
            Arc::new(|_, _, u, _| u - u * u * u),
        )
        .unwrap();
        for x in [[0.0, 0.0], [1.0, -2.0]] {
            assert!((src(0.1, &x) + (c - c * c * c)).abs() < 1e-15);
        }
    }

    #[test]
    fn dense_generator_rejected() {
        let dense = DiffusionSpec::dense(1, vec![1.0]).unwrap();
        let r = manufactured_source(&constant_exact(1.0), &dense, &Drift::Zero, Arc::new(|_, _, _, _| 0.0));
        assert!(r.is_err());
    }

    #[test]
    fn params_broadcast_and_errors() {
        let p = ProblemParams::new().set("x0", 0.1).set_vector("a", vec![1.0, 2.0]);
        assert_eq!(p.vector("x0", 3, 0.0).unwrap(), vec![0.1; 3]);
        assert_eq!(p.vector("a", 2, 0.0).unwrap(), vec![1.0, 2.0]);
        assert!(p.vector("a", 3, 0.0).is_err());
        assert!(p.scalar("a", 0.0).is_err());
        assert_eq!(p.scalar("missing", 4.0).unwrap(), 4.0);
    }

    #[test]
    fn validate_catches_bad_specs() {
        let g: TerminalFn = Arc::new(|_| 0.0);
        let ok = ProblemSpec::new("t", 2, 1.0, DiffusionSpec::Isotropic(1.0), ProblemSpec::zero_driver(), g.clone());
        assert!(ok.validate().is_ok());
        let bad_t = ProblemSpec::new("t", 2, 0.0, DiffusionSpec::Isotropic(1.0), ProblemSpec::zero_driver(), g.clone());
        assert!(bad_t.validate().is_err());
        let bad_d = ProblemSpec::new("t", 0, 1.0, DiffusionSpec::Isotropic(1.0), ProblemSpec::zero_driver(), g.clone());
        assert!(bad_d.validate().is_err());
        let bad_x0 = ok.clone().with_query_point(vec![0.0; 3]);
        assert!(bad_x0.validate().is_err());
    }
}
