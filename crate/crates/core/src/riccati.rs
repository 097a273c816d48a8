//! Steady-state and transient covariance evolution.
//!
//! Conditional covariances of a linear Gaussian quantum system obey
//! deterministic Riccati equations. Steady states are reached by explicit
//! Euler integration from the vacuum until the Frobenius norm of the
//! right-hand side falls below a threshold. Integration (rather than an
//! algebraic Riccati solver) copes with drifts that are only stabilised by
//! the measurement, such as the on-threshold OPO with `A = diag(0, -2)`.
//!
//! An Euler fixed point is an exact zero of the right-hand side, so the
//! converged covariance does not depend on the step size beyond the
//! residual threshold.

use nalgebra::DMatrix;
use serde::Serialize;

use crate::error::{Error, Result};
use crate::linalg;
use crate::model::{kappa, matrix_to_rows, stack, CovMatrix, Sign, SystemModel, Unravelling};

#[derive(Debug, Clone, Copy, PartialEq, Serialize)]
pub struct SteadySolveConfig {
    /// Euler step.
    pub dt: f64,
    /// Integration cutoff; `None` picks `50 / |slowest nonzero damping rate|`.
    pub t_max: Option<f64>,
    /// Residual Frobenius-norm threshold.
    pub tol: f64,
}

impl Default for SteadySolveConfig {
    fn default() -> Self {
        Self {
            dt: 1e-4,
            t_max: None,
            tol: 1e-10,
        }
    }
}

impl SteadySolveConfig {
    pub fn validate(&self) -> Result<()> {
        if !(self.dt > 0.0 && self.dt.is_finite()) {
            return Err(Error::Domain(format!("dt must be positive, got {}", self.dt)));
        }
        if !(self.tol > 0.0) {
            return Err(Error::Domain(format!("tol must be positive, got {}", self.tol)));
        }
        if let Some(t) = self.t_max {
            if !(t > self.dt) {
                return Err(Error::Domain(format!("t_max ({t}) must exceed dt ({})", self.dt)));
            }
        }
        Ok(())
    }

    /// Cutoff actually used for `model`.
    pub fn resolved_t_max(&self, model: &SystemModel) -> f64 {
        self.t_max.unwrap_or_else(|| default_t_max(model.drift()))
    }
}

fn default_t_max(a: &DMatrix<f64>) -> f64 {
    let thr = linalg::damping_threshold(a);
    let slowest = linalg::eigenvalues(a)
        .iter()
        .map(|l| l.re.abs())
        .filter(|r| *r > thr)
        .fold(f64::INFINITY, f64::min);
    if slowest.is_finite() {
        50.0 / slowest
    } else {
        // no damped direction at all: unit time scale
        50.0
    }
}

/// `A V + V A^T + D - K+[V] K+[V]^T`, symmetrised.
///
/// Its vanishing defines the steady filtered covariance; its positivity at
/// a putative true covariance is the realizability condition.
pub fn filtered_rhs(model: &SystemModel, u: &Unravelling, v: &DMatrix<f64>) -> Result<DMatrix<f64>> {
    let k = kappa(v, u, Sign::Plus)?;
    let a = model.drift();
    let out = a * v + v * a.transpose() + model.diffusion() - &k * k.transpose();
    Ok(linalg::symmetrize(&out))
}

/// `-A V - V A^T + D - K-[V] K-[V]^T`, symmetrised: the backward-time
/// (adjoint) equation obeyed by the retrofiltered covariance.
pub fn retrofiltered_rhs(
    model: &SystemModel,
    u: &Unravelling,
    v: &DMatrix<f64>,
) -> Result<DMatrix<f64>> {
    let k = kappa(v, u, Sign::Minus)?;
    let a = model.drift();
    let out = -(a * v) - v * a.transpose() + model.diffusion() - &k * k.transpose();
    Ok(linalg::symmetrize(&out))
}

fn check_unravelling(model: &SystemModel, u: &Unravelling) -> Result<()> {
    if u.dim() != model.dim() {
        return Err(Error::Dimension(format!(
            "unravelling acts on dimension {} but the model has dimension {}",
            u.dim(),
            model.dim()
        )));
    }
    Ok(())
}

fn integrate_to_steady<F>(v0: DMatrix<f64>, t_max: f64, cfg: &SteadySolveConfig, rhs: F) -> Result<CovMatrix>
where
    F: Fn(&DMatrix<f64>) -> Result<DMatrix<f64>>,
{
    cfg.validate()?;
    let mut v = v0;
    let mut t = 0.0;
    loop {
        let r = rhs(&v)?;
        let norm = r.norm();
        if !norm.is_finite() {
            return Err(Error::Numeric(format!("covariance diverged at t = {t:.4}")));
        }
        if norm <= cfg.tol {
            return CovMatrix::symmetrized(&v);
        }
        if t >= t_max {
            return Err(Error::Convergence { residual: norm, t });
        }
        v += r * cfg.dt;
        v = linalg::symmetrize(&v);
        t += cfg.dt;
    }
}

/// Steady filtered covariance `V_F^ss` for the observed unravelling.
pub fn filtered_steady(model: &SystemModel, u_o: &Unravelling, cfg: &SteadySolveConfig) -> Result<CovMatrix> {
    check_unravelling(model, u_o)?;
    let v0 = model.vacuum().into_inner();
    integrate_to_steady(v0, cfg.resolved_t_max(model), cfg, |v| filtered_rhs(model, u_o, v))
}

/// Steady retrofiltered covariance `V_R^ss`.
pub fn retrofiltered_steady(
    model: &SystemModel,
    u_o: &Unravelling,
    cfg: &SteadySolveConfig,
) -> Result<CovMatrix> {
    check_unravelling(model, u_o)?;
    let v0 = model.vacuum().into_inner();
    integrate_to_steady(v0, cfg.resolved_t_max(model), cfg, |v| retrofiltered_rhs(model, u_o, v))
}

/// Steady true covariance: the filtered covariance of an observer holding
/// both the observed and the unobserved records.
pub fn true_steady(
    model: &SystemModel,
    u_o: &Unravelling,
    u_u: &Unravelling,
    cfg: &SteadySolveConfig,
) -> Result<CovMatrix> {
    filtered_steady(model, &stack(u_o, u_u)?, cfg)
}

/// `A V + V A^T + D - K+[V]K+[V]^T` evaluated at a putative true covariance.
pub fn realizability_residual(v: &CovMatrix, model: &SystemModel, u_o: &Unravelling) -> Result<DMatrix<f64>> {
    check_unravelling(model, u_o)?;
    filtered_rhs(model, u_o, v.matrix())
}

/// Unconditioned steady covariance, split into damped and undamped
/// directions.
///
/// Along undamped directions (`Re λ >= 0`) the unconditioned variance grows
/// without bound; those are listed in `unbounded_directions` and impose no
/// constraint. `finite_basis` spans the orthogonal complement, and
/// `finite_cov` is the limiting covariance of the projected coordinates
/// `Q^T x`, which obey a closed, strictly damped OU process with drift
/// `Q^T A Q`.
#[derive(Debug, Clone, PartialEq)]
pub struct UnconditionedBound {
    pub finite_basis: DMatrix<f64>,
    pub finite_cov: DMatrix<f64>,
    pub unbounded_directions: DMatrix<f64>,
}

impl UnconditionedBound {
    pub fn dim(&self) -> usize {
        self.finite_basis.nrows()
    }

    pub fn is_fully_finite(&self) -> bool {
        self.unbounded_directions.ncols() == 0
    }

    /// The full covariance when every direction is damped.
    pub fn full_cov(&self) -> Option<CovMatrix> {
        if !self.is_fully_finite() {
            return None;
        }
        let q = &self.finite_basis;
        CovMatrix::symmetrized(&(q * &self.finite_cov * q.transpose())).ok()
    }

    /// `Q^T (bound - inner) Q` on the finite subspace.
    pub fn gap(&self, inner: &DMatrix<f64>) -> Result<DMatrix<f64>> {
        if inner.shape() != (self.dim(), self.dim()) {
            return Err(Error::Dimension(format!(
                "inner covariance is {:?}, bound has dimension {}",
                inner.shape(),
                self.dim()
            )));
        }
        let q = &self.finite_basis;
        Ok(linalg::symmetrize(&(&self.finite_cov - q.transpose() * inner * q)))
    }

    /// Variance along the unit vector `dir`; infinite if `dir` leaves the
    /// finite subspace.
    pub fn variance_along(&self, dir: &[f64]) -> f64 {
        let d = nalgebra::DVector::from_column_slice(dir);
        let coords = self.finite_basis.transpose() * &d;
        let outside = (&d - &self.finite_basis * &coords).norm();
        if outside > 1e-12 * d.norm().max(1.0) {
            return f64::INFINITY;
        }
        (coords.transpose() * &self.finite_cov * &coords)[(0, 0)]
    }
}

impl Serialize for UnconditionedBound {
    fn serialize<S: serde::Serializer>(&self, s: S) -> std::result::Result<S::Ok, S::Error> {
        use serde::ser::SerializeStruct;
        let mut st = s.serialize_struct("UnconditionedBound", 3)?;
        st.serialize_field("finite_basis", &matrix_to_rows(&self.finite_basis.transpose()))?;
        st.serialize_field("finite_cov", &matrix_to_rows(&self.finite_cov))?;
        st.serialize_field(
            "unbounded_directions",
            &matrix_to_rows(&self.unbounded_directions.transpose()),
        )?;
        st.end()
    }
}

pub fn unconditioned_bound(model: &SystemModel) -> Result<UnconditionedBound> {
    let a = model.drift();
    let q = linalg::damped_complement(a);
    let a_s = q.transpose() * a * &q;
    let d_s = q.transpose() * model.diffusion() * &q;
    let finite_cov = linalg::lyapunov(&a_s, &d_s)?;
    let unbounded_directions = linalg::orthogonal_complement(&q);
    Ok(UnconditionedBound {
        finite_basis: q,
        finite_cov,
        unbounded_directions,
    })
}

/// Euler evolution of the filtered covariance from `v0` for a time `t`.
/// The first element is `v0`; there are `round(t/dt) + 1` elements.
pub fn integrate_cov(
    model: &SystemModel,
    u: &Unravelling,
    v0: &CovMatrix,
    dt: f64,
    t: f64,
) -> Result<Vec<CovMatrix>> {
    check_unravelling(model, u)?;
    if !(dt > 0.0) || !(t >= 0.0) {
        return Err(Error::Domain(format!("need dt > 0 and T >= 0, got dt = {dt}, T = {t}")));
    }
    let steps = (t / dt).round() as usize;
    let mut out = Vec::with_capacity(steps + 1);
    out.push(v0.clone());
    let mut v = v0.matrix().clone();
    for k in 0..steps {
        let r = filtered_rhs(model, u, &v)?;
        v = linalg::symmetrize(&(v + r * dt));
        if v.iter().any(|x| !x.is_finite()) {
            return Err(Error::Numeric(format!("covariance diverged at step {}", k + 1)));
        }
        out.push(CovMatrix::symmetrized(&v)?);
    }
    Ok(out)
}

/// Steady-state inputs shared by classification, smoothing and sweeps for
/// one `(model, observed unravelling)` pair.
#[derive(Debug, Clone)]
pub struct SteadyStates {
    pub filtered: CovMatrix,
    pub retrofiltered: CovMatrix,
    pub unconditioned: UnconditionedBound,
}

impl SteadyStates {
    pub fn solve(model: &SystemModel, u_o: &Unravelling, cfg: &SteadySolveConfig) -> Result<Self> {
        Ok(Self {
            filtered: filtered_steady(model, u_o, cfg)?,
            retrofiltered: retrofiltered_steady(model, u_o, cfg)?,
            unconditioned: unconditioned_bound(model)?,
        })
    }
}
