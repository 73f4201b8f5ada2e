use std::fmt;

use crate::error::{Error, Result};
use crate::linalg;
use crate::model::ScalarField;

/// Largest dimension for which a dense diffusion matrix is accepted.
pub const DENSE_MAX_DIM: usize = 64;

/// Structured diffusion coefficient `σ(t, x)`.
///
/// Isotropic and diagonal forms cost O(d) per application and never build a
/// d×d matrix. `DenseSmall` exists for testing against explicit matrices.
/// `StateScaled` is `s(t, x)·I`, used for multiplicative-noise SDEs; the
/// caller is responsible for keeping `s` away from zero.
#[derive(Clone)]
pub enum DiffusionSpec {
    Isotropic(f64),
    Diagonal(Vec<f64>),
    /// Row-major `dim × dim` matrix.
    DenseSmall { dim: usize, matrix: Vec<f64> },
    StateScaled(ScalarField),
}

impl fmt::Debug for DiffusionSpec {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        match self {
            DiffusionSpec::Isotropic(c) => f.debug_tuple("Isotropic").field(c).finish(),
            DiffusionSpec::Diagonal(v) => f.debug_tuple("Diagonal").field(v).finish(),
            DiffusionSpec::DenseSmall { dim, .. } => {
                f.debug_struct("DenseSmall").field("dim", dim).finish_non_exhaustive()
            }
            DiffusionSpec::StateScaled(_) => f.write_str("StateScaled(..)"),
        }
    }
}

impl DiffusionSpec {
    pub fn isotropic(c: f64) -> Result<Self> {
        let s = DiffusionSpec::Isotropic(c);
        s.validate(None)?;
        Ok(s)
    }

    pub fn diagonal(v: Vec<f64>) -> Result<Self> {
        let s = DiffusionSpec::Diagonal(v);
        s.validate(None)?;
        Ok(s)
    }

    pub fn dense(dim: usize, matrix: Vec<f64>) -> Result<Self> {
        let s = DiffusionSpec::DenseSmall { dim, matrix };
        s.validate(None)?;
        Ok(s)
    }

    /// Checks nondegeneracy and, when `dim` is given, shape compatibility.
    pub fn validate(&self, dim: Option<usize>) -> Result<()> {
        match self {
            DiffusionSpec::Isotropic(c) => {
                if !(c.is_finite() && *c > 0.0) {
                    return Err(Error::invalid(format!(
                        "isotropic diffusion must be positive, got {c}"
                    )));
                }
            }
            DiffusionSpec::Diagonal(v) => {
                if let Some(d) = dim {
                    check_len(d, v.len())?;
                }
                if v.is_empty() {
                    return Err(Error::invalid("diagonal diffusion is empty"));
                }
                if let Some(bad) = v.iter().find(|e| !(e.is_finite() && **e > 0.0)) {
                    return Err(Error::invalid(format!(
                        "diagonal diffusion entries must be positive, got {bad}"
                    )));
                }
            }
            DiffusionSpec::DenseSmall { dim: n, matrix } => {
                if let Some(d) = dim {
                    check_len(d, *n)?;
                }
                if *n == 0 || *n > DENSE_MAX_DIM {
                    return Err(Error::invalid(format!(
                        "dense diffusion allowed only for 1 <= d <= {DENSE_MAX_DIM}, got {n}"
                    )));
                }
                check_len(n * n, matrix.len())?;
                if linalg::matrix_rank(*n, matrix, 1e-12) < *n {
                    return Err(Error::invalid("dense diffusion matrix is rank deficient"));
                }
            }
            DiffusionSpec::StateScaled(_) => {}
        }
        Ok(())
    }

    /// `out = σ(t, x) · w`
    pub fn apply_into(&self, t: f64, x: &[f64], w: &[f64], out: &mut [f64]) -> Result<()> {
        check_len(x.len(), w.len())?;
        check_len(w.len(), out.len())?;
        match self {
            DiffusionSpec::Isotropic(c) => scale_into(*c, w, out),
            DiffusionSpec::StateScaled(s) => scale_into(s(t, x), w, out),
            DiffusionSpec::Diagonal(v) => {
                check_len(v.len(), w.len())?;
                for ((o, vi), wi) in out.iter_mut().zip(v).zip(w) {
                    *o = vi * wi;
                }
            }
            DiffusionSpec::DenseSmall { dim, matrix } => {
                check_len(*dim, w.len())?;
                for (i, o) in out.iter_mut().enumerate() {
                    *o = linalg::dot(&matrix[i * dim..(i + 1) * dim], w);
                }
            }
        }
        Ok(())
    }

    /// `out = σ(t, x)ᵀ · g`
    pub fn apply_transpose_into(
        &self,
        t: f64,
        x: &[f64],
        g: &[f64],
        out: &mut [f64],
    ) -> Result<()> {
        match self {
            DiffusionSpec::DenseSmall { dim, matrix } => {
                check_len(x.len(), g.len())?;
                check_len(g.len(), out.len())?;
                check_len(*dim, g.len())?;
                out.fill(0.0);
                for (i, gi) in g.iter().enumerate() {
                    linalg::axpy(*gi, &matrix[i * dim..(i + 1) * dim], out);
                }
                Ok(())
            }
            // symmetric forms
            _ => self.apply_into(t, x, g, out),
        }
    }

    pub fn apply(&self, t: f64, x: &[f64], w: &[f64]) -> Result<Vec<f64>> {
        let mut out = vec![0.0; w.len()];
        self.apply_into(t, x, w, &mut out)?;
        Ok(out)
    }

    pub fn apply_transpose(&self, t: f64, x: &[f64], g: &[f64]) -> Result<Vec<f64>> {
        let mut out = vec![0.0; g.len()];
        self.apply_transpose_into(t, x, g, &mut out)?;
        Ok(out)
    }

    /// Diagonal of `½σσᵀ` at `(t, x)`, or `None` for dense matrices with
    /// off-diagonal coupling.
    pub fn half_variance_diagonal(&self, t: f64, x: &[f64]) -> Option<Vec<f64>> {
        let d = x.len();
        match self {
            DiffusionSpec::Isotropic(c) => Some(vec![0.5 * c * c; d]),
            DiffusionSpec::StateScaled(s) => {
                let c = s(t, x);
                Some(vec![0.5 * c * c; d])
            }
            DiffusionSpec::Diagonal(v) => Some(v.iter().map(|e| 0.5 * e * e).collect()),
            DiffusionSpec::DenseSmall { .. } => None,
        }
    }
}

fn scale_into(c: f64, w: &[f64], out: &mut [f64]) {
    for (o, wi) in out.iter_mut().zip(w) {
        *o = c * wi;
    }
}

fn check_len(expected: usize, got: usize) -> Result<()> {
    if expected != got {
        return Err(Error::DimensionMismatch { expected, got });
    }
    Ok(())
}
