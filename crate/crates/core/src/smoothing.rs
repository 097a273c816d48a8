//! Steady-state smoothed covariance from a putative true covariance.
//!
//! `V_S = [(V_F - V_T)^-1 + (V_R + V_T)^-1]^-1 + V_T`.
//!
//! The formula is applied to any symmetric `V_T`, physical or not; callers
//! use [`crate::realizability`] to decide whether the premise makes sense.

use nalgebra::DMatrix;
use serde::Serialize;

use crate::error::{Error, Result};
use crate::linalg;
use crate::model::{CovMatrix, SystemModel};
use crate::realizability::{fits_within, uncertainty_check};
use crate::riccati::SteadyStates;

fn same_dim(vf: &CovMatrix, vr: &CovMatrix, vt: &CovMatrix) -> Result<()> {
    if vf.dim() != vr.dim() || vf.dim() != vt.dim() {
        return Err(Error::Dimension(format!(
            "V_F, V_R, V_T have dimensions {}, {}, {}",
            vf.dim(),
            vr.dim(),
            vt.dim()
        )));
    }
    Ok(())
}

pub fn smoothed_cov(vf: &CovMatrix, vr: &CovMatrix, vt: &CovMatrix) -> Result<CovMatrix> {
    same_dim(vf, vr, vt)?;
    let x_inv = linalg::guarded_inverse(&(vf.matrix() - vt.matrix()), "V_F - V_T")?;
    let y_inv = linalg::guarded_inverse(&(vr.matrix() + vt.matrix()), "V_R + V_T")?;
    let sum = linalg::symmetrize(&(x_inv + y_inv));
    let inner = linalg::guarded_inverse(&sum, "(V_F - V_T)^-1 + (V_R + V_T)^-1")?;
    CovMatrix::symmetrized(&(inner + vt.matrix()))
}

/// `V_F - V_S` computed independently as `X (V_R + V_F)^-1 X` with
/// `X = V_F - V_T`.
pub fn filtered_gap_identity(vf: &CovMatrix, vr: &CovMatrix, vt: &CovMatrix) -> Result<DMatrix<f64>> {
    same_dim(vf, vr, vt)?;
    let x = vf.matrix() - vt.matrix();
    let s_inv = linalg::guarded_inverse(&(vr.matrix() + vf.matrix()), "V_R + V_F")?;
    Ok(linalg::symmetrize(&(&x * s_inv * &x)))
}

/// `(2/ħ)^{2N} det V_S`; at least 1 for an S-class single-mode state.
pub fn smoothed_det_normalized(vs: &CovMatrix, model: &SystemModel) -> f64 {
    (2.0 / model.hbar()).powi(vs.dim() as i32) * vs.matrix().determinant()
}

#[derive(Debug, Clone, Copy, PartialEq, Serialize)]
pub struct SClassCheck {
    /// `V_T` is S-class and fits inside `V_F`.
    pub premise: bool,
    /// `V_S` is S-class.
    pub conclusion: bool,
    pub det_normalized: f64,
}

impl SClassCheck {
    /// The implication holds (vacuously if the premise fails).
    pub fn holds(&self) -> bool {
        !self.premise || self.conclusion
    }
}

/// S-class `V_T` fitting inside `V_F` gives an S-class `V_S`.
pub fn theorem_b_check(
    model: &SystemModel,
    steady: &SteadyStates,
    vt: &CovMatrix,
    tol: f64,
) -> Result<SClassCheck> {
    let vs = smoothed_cov(&steady.filtered, &steady.retrofiltered, vt)?;
    let premise = uncertainty_check(vt, model, tol)?.ok && fits_within(&steady.filtered, vt, tol)?.ok;
    Ok(SClassCheck {
        premise,
        conclusion: uncertainty_check(&vs, model, tol)?.ok,
        det_normalized: smoothed_det_normalized(&vs, model),
    })
}

#[derive(Debug, Clone, Copy, PartialEq, Serialize)]
pub struct SmoothedFit {
    pub fits_filtered: bool,
    pub fits_unconditioned: bool,
    pub filtered_min_eig: f64,
    pub unconditioned_min_eig: f64,
}

/// `V_F - V_S ⪰ 0` and `V^ss - V_S ⪰ 0` for an arbitrary `V_T`.
pub fn theorem_c_check(steady: &SteadyStates, vt: &CovMatrix, tol: f64) -> Result<SmoothedFit> {
    let vs = smoothed_cov(&steady.filtered, &steady.retrofiltered, vt)?;
    let f = fits_within(&steady.filtered, &vs, tol)?;
    let u = fits_within(&steady.unconditioned, &vs, tol)?;
    Ok(SmoothedFit {
        fits_filtered: f.ok,
        fits_unconditioned: u.ok,
        filtered_min_eig: f.min_eig,
        unconditioned_min_eig: u.min_eig,
    })
}
