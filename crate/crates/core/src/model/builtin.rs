//! Registry of benchmark problems.

use std::sync::atomic::{AtomicU64, Ordering};
use std::sync::Arc;

use crate::error::{Error, Result};
use crate::linalg::norm_sq;
use crate::model::{
    manufactured_source, DiffusionSpec, Drift, DriverFn, ExactSolution, ProblemParams, ProblemSpec,
};

pub const BUILTIN_NAMES: &[&str] = &[
    "allen_cahn_dw",
    "allen_cahn_log",
    "burgers",
    "hj_gradient_sink",
    "linear_heat",
    "affine_test",
];

const LOG_GUARD: f64 = 1e-12;

/// Builds one of the named benchmark problems in dimension `d`.
///
/// Every problem accepts `T` (horizon) and `x0` (query point, scalar or
/// d-vector). Problem-specific keys:
///
/// | problem            | keys                          |
/// |--------------------|-------------------------------|
/// | `allen_cahn_log`   | `theta`, `theta_c`            |
/// | `burgers`          | `nu`                          |
/// | `hj_gradient_sink` | `kappa`                       |
/// | `linear_heat`      | `sigma`, `beta`               |
/// | `affine_test`      | `a`, `b`, `sigma`             |
///
/// Unknown keys are rejected.
pub fn builtin_problem(name: &str, d: usize, params: &ProblemParams) -> Result<ProblemSpec> {
    if d == 0 {
        return Err(Error::invalid("dimension must be at least 1"));
    }
    let (default_t, extra): (f64, &[&str]) = match name {
        "allen_cahn_dw" => (0.3, &[]),
        "allen_cahn_log" => (1.0, &["theta", "theta_c"]),
        "burgers" => (0.3, &["nu"]),
        "hj_gradient_sink" => (0.5, &["kappa"]),
        "linear_heat" => (1.0, &["sigma", "beta"]),
        "affine_test" => (1.0, &["a", "b", "sigma"]),
        other => return Err(Error::NotFound(other.to_string())),
    };
    for (key, _) in params.iter() {
        if key != "T" && key != "x0" && !extra.contains(&key) {
            return Err(Error::invalid(format!(
                "parameter `{key}` is not used by problem `{name}`"
            )));
        }
    }
    let horizon = params.scalar("T", default_t)?;
    let x0 = params.vector("x0", d, 0.0)?;

    let spec = match name {
        "allen_cahn_dw" => allen_cahn_double_well(d, horizon),
        "allen_cahn_log" => allen_cahn_log(d, horizon, params)?,
        "burgers" => burgers(d, horizon, params)?,
        "hj_gradient_sink" => hj_gradient_sink(d, horizon, params)?,
        "linear_heat" => linear_heat(d, horizon, params)?,
        "affine_test" => affine(d, horizon, params)?,
        _ => unreachable!(),
    };
    let spec = spec.with_query_point(x0);
    spec.validate()?;
    if let Some(exact) = &spec.exact {
        check_terminal_consistency(&spec, exact)?;
    }
    Ok(spec)
}

fn check_terminal_consistency(spec: &ProblemSpec, exact: &ExactSolution) -> Result<()> {
    let d = spec.dimension;
    let probes = [0.0, 0.1, -0.3];
    for p in probes {
        let x: Vec<f64> = (0..d).map(|i| p * (1.0 + (i % 3) as f64 * 0.5)).collect();
        let g = (spec.terminal)(&x);
        let u = exact.u(spec.horizon, &x);
        if (g - u).abs() > 1e-10 {
            return Err(Error::invalid(format!(
                "terminal condition disagrees with exact solution: g = {g}, u(T) = {u}"
            )));
        }
    }
    Ok(())
}

/// `f(u) = u − u³`, `g(x) = 1 / (2 + 0.4‖x‖²)`, `Lu = Δu`.
fn allen_cahn_double_well(d: usize, horizon: f64) -> ProblemSpec {
    let driver: DriverFn = Arc::new(|_, _, y, _| y - y * y * y);
    let dy: DriverFn = Arc::new(|_, _, y, _| 1.0 - 3.0 * y * y);
    ProblemSpec::new(
        "allen_cahn_dw",
        d,
        horizon,
        DiffusionSpec::Isotropic(std::f64::consts::SQRT_2),
        driver,
        Arc::new(|x| 1.0 / (2.0 + 0.4 * norm_sq(x))),
    )
    .with_driver_dy(dy)
    .with_gradient_free_driver()
}

/// Logarithmic potential `(θ/2) ln(|1+u| / |1−u|) − θ_c u`. Arguments within
/// `LOG_GUARD` of ±1 are clamped and counted in `hits`.
fn log_potential(theta: f64, theta_c: f64, hits: Arc<AtomicU64>) -> (DriverFn, DriverFn) {
    let h1 = hits.clone();
    let value: DriverFn = Arc::new(move |_, _, u, _| {
        let num = (1.0 + u).abs();
        let den = (1.0 - u).abs();
        if num < LOG_GUARD || den < LOG_GUARD {
            h1.fetch_add(1, Ordering::Relaxed);
        }
        0.5 * theta * (num.max(LOG_GUARD) / den.max(LOG_GUARD)).ln() - theta_c * u
    });
    let derivative: DriverFn = Arc::new(move |_, _, u, _| {
        let q = 1.0 - u * u;
        let q = if q.abs() < LOG_GUARD {
            hits.fetch_add(1, Ordering::Relaxed);
            LOG_GUARD.copysign(q)
        } else {
            q
        };
        theta / q - theta_c
    });
    (value, derivative)
}

/// Manufactured solution `u = cos(∏xⱼ) e^{cos t − ‖x‖²}` for the
/// logarithmic-potential Allen–Cahn equation.
fn allen_cahn_log(d: usize, horizon: f64, params: &ProblemParams) -> Result<ProblemSpec> {
    let theta = params.scalar("theta", 1.0)?;
    let theta_c = params.scalar("theta_c", 2.0)?;
    if !(theta > 0.0 && theta_c > 0.0 && theta < theta_c) {
        return Err(Error::invalid(format!(
            "allen_cahn_log needs 0 < theta < theta_c, got theta = {theta}, theta_c = {theta_c}"
        )));
    }
    let hits = Arc::new(AtomicU64::new(0));
    let (pot, pot_dy) = log_potential(theta, theta_c, hits.clone());

    let exact = ExactSolution {
        value: Arc::new(|t, x| {
            let p: f64 = x.iter().product();
            p.cos() * (t.cos() - norm_sq(x)).exp()
        }),
        time_derivative: Arc::new(|t, x| {
            let p: f64 = x.iter().product();
            -t.sin() * p.cos() * (t.cos() - norm_sq(x)).exp()
        }),
        gradient: Arc::new(|t, x, g| {
            let e = (t.cos() - norm_sq(x)).exp();
            let others = products_excluding_each(x);
            let p: f64 = x.iter().product();
            let (s, c) = p.sin_cos();
            for ((gi, xi), pi) in g.iter_mut().zip(x).zip(&others) {
                *gi = e * (-s * pi - 2.0 * xi * c);
            }
        }),
        hessian_diagonal: Arc::new(|t, x, h| {
            let e = (t.cos() - norm_sq(x)).exp();
            let others = products_excluding_each(x);
            let p: f64 = x.iter().product();
            let (s, c) = p.sin_cos();
            for ((hi, xi), pi) in h.iter_mut().zip(x).zip(&others) {
                *hi = e * (4.0 * xi * pi * s + (4.0 * xi * xi - 2.0 - pi * pi) * c);
            }
        }),
    };
    let diffusion = DiffusionSpec::Isotropic(std::f64::consts::SQRT_2);
    let pot_for_source = pot.clone();
    let source = manufactured_source(
        &exact,
        &diffusion,
        &Drift::Zero,
        Arc::new(move |t, x, u, _| pot_for_source(t, x, u, &[])),
    )?;
    let driver: DriverFn = Arc::new(move |t, x, y, z| pot(t, x, y, z) + source(t, x));
    let exact_t = exact.clone();
    let mut spec = ProblemSpec::new(
        "allen_cahn_log",
        d,
        horizon,
        diffusion,
        driver,
        Arc::new(move |x| exact_t.u(horizon, x)),
    )
    .with_driver_dy(pot_dy)
    .with_gradient_free_driver()
    .with_exact(exact);
    spec.guard_hits = hits;
    Ok(spec)
}

/// `∏_{j≠i} xⱼ` for every `i`, via prefix and suffix products.
fn products_excluding_each(x: &[f64]) -> Vec<f64> {
    let n = x.len();
    let mut out = vec![1.0; n];
    let mut prefix = 1.0;
    for i in 0..n {
        out[i] = prefix;
        prefix *= x[i];
    }
    let mut suffix = 1.0;
    for i in (0..n).rev() {
        out[i] *= suffix;
        suffix *= x[i];
    }
    out
}

fn sigmoid(s: f64) -> f64 {
    if s >= 0.0 {
        1.0 / (1.0 + (-s).exp())
    } else {
        let e = s.exp();
        e / (1.0 + e)
    }
}

/// Viscous Burgers-type equation
///
/// `∂ₜu + ν(d·u − (2+d)/2) Σᵢ∂ᵢu + (d²ν/2) Δu = 0`
///
/// with `σ = d√ν·I` and exact solution `u = S(νt + (1−ν)T + Σxᵢ/d)`, `S` the
/// logistic function. At `ν = 1` this is `S(t + Σxᵢ/d)` and `u(0, 0) = ½`.
fn burgers(d: usize, horizon: f64, params: &ProblemParams) -> Result<ProblemSpec> {
    let nu = params.scalar("nu", 1.0)?;
    if !(nu.is_finite() && nu > 0.0) {
        return Err(Error::invalid(format!("burgers needs nu > 0, got {nu}")));
    }
    let df = d as f64;
    let sigma = df * nu.sqrt();
    let shift = (1.0 - nu) * horizon;
    let arg = move |t: f64, x: &[f64]| nu * t + shift + x.iter().sum::<f64>() / df;

    // Σᵢ ∂ᵢu = (1ᵀz) / (d√ν) under σ = d√ν·I.
    let driver: DriverFn = Arc::new(move |_, _, y, z| {
        let grad_sum = z.iter().sum::<f64>() / sigma;
        nu * (df * y - 0.5 * (2.0 + df)) * grad_sum
    });
    let dy: DriverFn = Arc::new(move |_, _, _, z| nu * df * z.iter().sum::<f64>() / sigma);
    let exact = ExactSolution {
        value: Arc::new(move |t, x| sigmoid(arg(t, x))),
        time_derivative: Arc::new(move |t, x| {
            let s = sigmoid(arg(t, x));
            nu * s * (1.0 - s)
        }),
        gradient: Arc::new(move |t, x, g| {
            let s = sigmoid(arg(t, x));
            g.fill(s * (1.0 - s) / df);
        }),
        hessian_diagonal: Arc::new(move |t, x, h| {
            let s = sigmoid(arg(t, x));
            h.fill(s * (1.0 - s) * (1.0 - 2.0 * s) / (df * df));
        }),
    };
    Ok(ProblemSpec::new(
        "burgers",
        d,
        horizon,
        DiffusionSpec::isotropic(sigma)?,
        driver,
        Arc::new(move |x| sigmoid(horizon + x.iter().sum::<f64>() / df)),
    )
    .with_driver_dy(dy)
    .with_exact(exact))
}

/// Hamilton–Jacobi-type problem with gradient sink `κ u ‖∇u‖²`, generator
/// `Δu` and exact solution `(1+4t)^{−d/2} exp(−‖x‖² / (1+4t))`. The forcing is
/// manufactured from the exact solution.
fn hj_gradient_sink(d: usize, horizon: f64, params: &ProblemParams) -> Result<ProblemSpec> {
    let kappa = params.scalar("kappa", 0.1)?;
    if !(kappa.is_finite() && kappa >= 0.0) {
        return Err(Error::invalid(format!("kappa must be >= 0, got {kappa}")));
    }
    let df = d as f64;
    // log-space evaluation keeps (1+4t)^{-d/2} representable for large d
    let u = move |t: f64, x: &[f64]| {
        let a = 1.0 + 4.0 * t;
        (-0.5 * df * a.ln() - norm_sq(x) / a).exp()
    };
    let exact = ExactSolution {
        value: Arc::new(u),
        time_derivative: Arc::new(move |t, x| {
            let a = 1.0 + 4.0 * t;
            u(t, x) * (-2.0 * df / a + 4.0 * norm_sq(x) / (a * a))
        }),
        gradient: Arc::new(move |t, x, g| {
            let a = 1.0 + 4.0 * t;
            let v = u(t, x);
            for (gi, xi) in g.iter_mut().zip(x) {
                *gi = -2.0 * xi * v / a;
            }
        }),
        hessian_diagonal: Arc::new(move |t, x, h| {
            let a = 1.0 + 4.0 * t;
            let v = u(t, x);
            for (hi, xi) in h.iter_mut().zip(x) {
                *hi = v * (4.0 * xi * xi / (a * a) - 2.0 / a);
            }
        }),
    };
    let diffusion = DiffusionSpec::Isotropic(std::f64::consts::SQRT_2);
    let source = manufactured_source(
        &exact,
        &diffusion,
        &Drift::Zero,
        Arc::new(move |_, _, u, g| -kappa * u * norm_sq(g)),
    )?;
    // ‖∇u‖² = ‖z‖² / 2 under σ = √2·I
    let driver: DriverFn = Arc::new(move |t, x, y, z| source(t, x) - 0.5 * kappa * y * norm_sq(z));
    let dy: DriverFn = Arc::new(move |_, _, _, z| -0.5 * kappa * norm_sq(z));
    Ok(ProblemSpec::new(
        "hj_gradient_sink",
        d,
        horizon,
        diffusion,
        driver,
        Arc::new(move |x| u(horizon, x)),
    )
    .with_driver_dy(dy)
    .with_exact(exact))
}

/// Heat equation `∂ₜu + (σ²/2)Δu = 0` with `g(x) = exp(−β‖x‖²)`.
fn linear_heat(d: usize, horizon: f64, params: &ProblemParams) -> Result<ProblemSpec> {
    let sigma = params.scalar("sigma", 1.0)?;
    let beta = params.scalar("beta", 0.5)?;
    if !(beta.is_finite() && beta > 0.0) {
        return Err(Error::invalid(format!("beta must be positive, got {beta}")));
    }
    let df = d as f64;
    let rate = 2.0 * beta * sigma * sigma;
    let spread = move |t: f64| 1.0 + rate * (horizon - t);
    let u = move |t: f64, x: &[f64]| {
        let s = spread(t);
        (-0.5 * df * s.ln() - beta * norm_sq(x) / s).exp()
    };
    let exact = ExactSolution {
        value: Arc::new(u),
        time_derivative: Arc::new(move |t, x| {
            let s = spread(t);
            -rate * u(t, x) * (-0.5 * df / s + beta * norm_sq(x) / (s * s))
        }),
        gradient: Arc::new(move |t, x, g| {
            let s = spread(t);
            let v = u(t, x);
            for (gi, xi) in g.iter_mut().zip(x) {
                *gi = -2.0 * beta * xi * v / s;
            }
        }),
        hessian_diagonal: Arc::new(move |t, x, h| {
            let s = spread(t);
            let v = u(t, x);
            for (hi, xi) in h.iter_mut().zip(x) {
                *hi = v * (4.0 * beta * beta * xi * xi / (s * s) - 2.0 * beta / s);
            }
        }),
    };
    Ok(ProblemSpec::new(
        "linear_heat",
        d,
        horizon,
        DiffusionSpec::isotropic(sigma)?,
        ProblemSpec::zero_driver(),
        Arc::new(move |x| (-beta * norm_sq(x)).exp()),
    )
    .with_driver_dy(Arc::new(|_, _, _, _| 0.0))
    .with_gradient_free_driver()
    .with_exact(exact))
}

/// `g(x) = a·x + b`, `f ≡ 0`; the solution is `a·x + b` for all `t`.
fn affine(d: usize, horizon: f64, params: &ProblemParams) -> Result<ProblemSpec> {
    let a = params.vector("a", d, 1.0)?;
    let b = params.scalar("b", 0.0)?;
    let sigma = params.scalar("sigma", 1.0)?;
    let a_val = a.clone();
    let a_grad = a.clone();
    let exact = ExactSolution {
        value: Arc::new(move |_, x| crate::linalg::dot(&a_val, x) + b),
        time_derivative: Arc::new(|_, _| 0.0),
        gradient: Arc::new(move |_, _, g| g.copy_from_slice(&a_grad)),
        hessian_diagonal: Arc::new(|_, _, h| h.fill(0.0)),
    };
    Ok(ProblemSpec::new(
        "affine_test",
        d,
        horizon,
        DiffusionSpec::isotropic(sigma)?,
        ProblemSpec::zero_driver(),
        Arc::new(move |x| crate::linalg::dot(&a, x) + b),
    )
    .with_driver_dy(Arc::new(|_, _, _, _| 0.0))
    .with_gradient_free_driver()
    .with_exact(exact))
}
