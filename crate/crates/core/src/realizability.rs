//! Physical constraints on putative true covariances.
//!
//! Three nested necessary conditions are checked, from weakest to strongest:
//!
//! 1. the true state fits inside the unconditioned steady state,
//! 2. it fits inside the steady filtered state,
//! 3. the realizability residual `A V + V A^T + D - K+[V]K+[V]^T` is PSD.
//!
//! The third is also sufficient for a pure covariance to be the steady true
//! covariance of some fixed diffusive unobserved measurement. All
//! inequalities are tested on the smallest eigenvalue against a declared
//! tolerance; an eigenvalue in `[-tol, tol]` counts as satisfied and raises
//! the matching boundary flag.

use std::collections::BTreeMap;

use nalgebra::{Complex, DMatrix};
use serde::Serialize;

use crate::error::{Error, Result};
use crate::linalg;
use crate::model::{symplectic_form, CovMatrix, SystemModel, Unravelling};
use crate::riccati::{realizability_residual, SteadySolveConfig, SteadyStates, UnconditionedBound};

/// Default eigenvalue tolerance in units of ħ.
pub const DEFAULT_TOL: f64 = 1e-8;

/// Slack on `|purity - 1|` for the `pure` flag.
pub const PURITY_TOL: f64 = 1e-6;

#[derive(Debug, Clone, Copy, PartialEq, Serialize)]
pub struct PsdCheck {
    pub ok: bool,
    pub min_eig: f64,
}

impl PsdCheck {
    fn from_min(min_eig: f64, tol: f64) -> Self {
        Self {
            ok: min_eig >= -tol,
            min_eig,
        }
    }

    /// Satisfied, but only within the tolerance band.
    pub fn on_boundary(&self, tol: f64) -> bool {
        self.min_eig.abs() <= tol
    }
}

pub fn is_psd(m: &DMatrix<f64>, tol: f64) -> Result<PsdCheck> {
    if m.nrows() != m.ncols() {
        return Err(Error::Dimension(format!("expected a square matrix, got {:?}", m.shape())));
    }
    if linalg::asymmetry(m) > 1e-9 * linalg::max_abs(m).max(1.0) {
        return Err(Error::Domain("PSD test on a non-symmetric matrix".into()));
    }
    Ok(PsdCheck::from_min(linalg::min_eigenvalue(m), tol))
}

#[derive(Debug, Clone, Copy, PartialEq, Serialize)]
pub struct UncertaintyCheck {
    pub ok: bool,
    /// Smallest eigenvalue of the Hermitian matrix `V + iħΣ/2`.
    pub margin: f64,
    /// Single-mode determinant test `det V >= ħ²/4` (with `tr V >= 0`);
    /// `None` for more than one mode.
    pub det_ok: Option<bool>,
}

/// Schrödinger-Heisenberg uncertainty relation `V + iħΣ/2 ⪰ 0`.
pub fn uncertainty_check(v: &CovMatrix, model: &SystemModel, tol: f64) -> Result<UncertaintyCheck> {
    let dim = model.dim();
    if v.dim() != dim {
        return Err(Error::Dimension(format!("covariance is {0}x{0}, model needs {dim}", v.dim())));
    }
    let half = model.hbar() / 2.0;
    let sigma = symplectic_form(model.n_modes());
    let herm = DMatrix::from_fn(dim, dim, |i, j| Complex::new(v.matrix()[(i, j)], half * sigma[(i, j)]));
    let margin = herm
        .symmetric_eigenvalues()
        .iter()
        .copied()
        .fold(f64::INFINITY, f64::min);
    let ok = margin >= -tol;

    let det_ok = (model.n_modes() == 1).then(|| {
        let m = v.matrix();
        let det = m.determinant();
        let trace = m.trace();
        // det(V + iħΣ/2) = det V - ħ²/4 = λ_min λ_max, and λ_max <= tr V
        trace >= -tol && det - half * half >= -tol * trace.abs().max(half)
    });
    Ok(UncertaintyCheck { ok, margin, det_ok })
}

pub fn uncertainty_ok(v: &CovMatrix, model: &SystemModel) -> bool {
    uncertainty_check(v, model, DEFAULT_TOL * model.hbar())
        .map(|c| c.ok)
        .unwrap_or(false)
}

/// Gaussian purity `(ħ/2)^N / √det V`.
pub fn purity(v: &CovMatrix, model: &SystemModel) -> Result<f64> {
    let det = v.matrix().determinant();
    if !(det > 0.0) || !det.is_finite() {
        return Err(Error::Domain(format!("purity undefined for det V = {det:.3e}")));
    }
    Ok((model.hbar() / 2.0).powi(model.n_modes() as i32) / det.sqrt())
}

/// Anything a covariance can be required to fit inside.
pub trait Envelope {
    /// The matrix whose positivity means `inner` fits inside `self`.
    fn gap(&self, inner: &DMatrix<f64>) -> Result<DMatrix<f64>>;
}

impl Envelope for CovMatrix {
    fn gap(&self, inner: &DMatrix<f64>) -> Result<DMatrix<f64>> {
        if inner.shape() != self.matrix().shape() {
            return Err(Error::Dimension(format!(
                "cannot compare {:?} with {:?}",
                self.matrix().shape(),
                inner.shape()
            )));
        }
        Ok(linalg::symmetrize(&(self.matrix() - inner)))
    }
}

impl Envelope for UnconditionedBound {
    fn gap(&self, inner: &DMatrix<f64>) -> Result<DMatrix<f64>> {
        UnconditionedBound::gap(self, inner)
    }
}

/// `outer - inner ⪰ 0`, restricted to the finite subspace for unbounded
/// envelopes. An empty finite subspace is trivially satisfied.
pub fn fits_within<E: Envelope + ?Sized>(outer: &E, inner: &CovMatrix, tol: f64) -> Result<PsdCheck> {
    let gap = outer.gap(inner.matrix())?;
    Ok(PsdCheck::from_min(linalg::min_eigenvalue(&gap), tol))
}

#[derive(Debug, Clone, Copy, PartialEq, Serialize)]
pub struct RealizabilityCheck {
    pub realizable: bool,
    pub min_eig: f64,
    /// Realizable with a rank-deficient residual (eigenvalue within `tol` of 0).
    pub extremal: bool,
}

pub fn check_realizable(
    model: &SystemModel,
    u_o: &Unravelling,
    v: &CovMatrix,
    tol: f64,
) -> Result<RealizabilityCheck> {
    let residual = realizability_residual(v, model, u_o)?;
    let psd = is_psd(&residual, tol)?;
    Ok(RealizabilityCheck {
        realizable: psd.ok,
        min_eig: psd.min_eig,
        extremal: psd.ok && psd.on_boundary(tol),
    })
}

#[derive(Debug, Clone, PartialEq, Serialize)]
pub struct RealizabilityReport {
    pub is_symmetric: bool,
    pub uncertainty_ok: bool,
    /// `None` when `det V <= 0`.
    pub purity: Option<f64>,
    pub pure: bool,
    pub fits_unconditioned: bool,
    pub fits_filtered: bool,
    pub realizable: bool,
    pub extremal: bool,
    /// Checks whose deciding eigenvalue fell inside `[-tol, tol]`.
    pub boundary: Vec<String>,
    pub min_eigs: BTreeMap<String, f64>,
    pub tol: f64,
}

/// Classifies putative true covariances against one `(model, observed
/// unravelling)` pair. The steady filtered covariance and unconditioned
/// bound are computed once at construction.
#[derive(Debug, Clone)]
pub struct Classifier {
    model: SystemModel,
    observed: Unravelling,
    steady: SteadyStates,
    tol: f64,
}

impl Classifier {
    pub fn new(model: &SystemModel, u_o: &Unravelling, cfg: &SteadySolveConfig) -> Result<Self> {
        let steady = SteadyStates::solve(model, u_o, cfg)?;
        Ok(Self::from_steady(model, u_o, steady, DEFAULT_TOL * model.hbar()))
    }

    pub fn from_steady(model: &SystemModel, u_o: &Unravelling, steady: SteadyStates, tol: f64) -> Self {
        Self {
            model: model.clone(),
            observed: u_o.clone(),
            steady,
            tol,
        }
    }

    pub fn with_tol(mut self, tol: f64) -> Self {
        self.tol = tol;
        self
    }

    pub fn tol(&self) -> f64 {
        self.tol
    }

    pub fn model(&self) -> &SystemModel {
        &self.model
    }

    pub fn observed(&self) -> &Unravelling {
        &self.observed
    }

    pub fn steady(&self) -> &SteadyStates {
        &self.steady
    }

    pub fn classify(&self, v: &CovMatrix) -> Result<RealizabilityReport> {
        let tol = self.tol;
        let mut min_eigs = BTreeMap::new();
        let mut boundary = Vec::new();
        let mut note = |name: &str, check: PsdCheck, min_eigs: &mut BTreeMap<String, f64>| {
            min_eigs.insert(name.to_string(), check.min_eig);
            if check.ok && check.on_boundary(tol) {
                boundary.push(name.to_string());
            }
            check.ok
        };

        let unc = uncertainty_check(v, &self.model, tol)?;
        let uncertainty_ok = note(
            "uncertainty",
            PsdCheck {
                ok: unc.ok,
                min_eig: unc.margin,
            },
            &mut min_eigs,
        );
        let purity = purity(v, &self.model).ok();
        let fits_unconditioned = note(
            "unconditioned",
            fits_within(&self.steady.unconditioned, v, tol)?,
            &mut min_eigs,
        );
        let fits_filtered = note("filtered", fits_within(&self.steady.filtered, v, tol)?, &mut min_eigs);
        let real = check_realizable(&self.model, &self.observed, v, tol)?;
        let realizable = note(
            "realizability",
            PsdCheck {
                ok: real.realizable,
                min_eig: real.min_eig,
            },
            &mut min_eigs,
        );

        Ok(RealizabilityReport {
            is_symmetric: linalg::asymmetry(v.matrix()) <= 1e-12 * linalg::max_abs(v.matrix()).max(1.0),
            uncertainty_ok,
            purity,
            pure: purity.is_some_and(|p| (p - 1.0).abs() <= PURITY_TOL),
            fits_unconditioned,
            fits_filtered,
            realizable,
            extremal: real.extremal,
            boundary,
            min_eigs,
            tol,
        })
    }
}

/// One-shot classification; solves the steady states on every call.
pub fn classify(
    model: &SystemModel,
    u_o: &Unravelling,
    v: &CovMatrix,
    cfg: &SteadySolveConfig,
) -> Result<RealizabilityReport> {
    Classifier::new(model, u_o, cfg)?.classify(v)
}

/// Pure single-mode covariance parameters: `γ > 0` and the correlation
/// `δ = β/√(αγ) ∈ (-1, 1)`.
#[derive(Debug, Clone, Copy, PartialEq, Serialize)]
pub struct PutativeParams {
    gamma: f64,
    delta: f64,
}

impl PutativeParams {
    pub fn new(gamma: f64, delta: f64) -> Result<Self> {
        if !(gamma > 0.0 && gamma.is_finite()) {
            return Err(Error::Domain(format!("gamma must be positive, got {gamma}")));
        }
        if !(delta.abs() < 1.0) {
            return Err(Error::Domain(format!(
                "|delta| must be below 1 for a pure covariance, got {delta}"
            )));
        }
        Ok(Self { gamma, delta })
    }

    pub fn gamma(&self) -> f64 {
        self.gamma
    }

    pub fn delta(&self) -> f64 {
        self.delta
    }

    /// `(α, β, γ)` with `αγ - β² = 1`.
    pub fn entries(&self) -> (f64, f64, f64) {
        let one_minus = 1.0 - self.delta * self.delta;
        let beta = self.delta / one_minus.sqrt();
        let alpha = 1.0 / (self.gamma * one_minus);
        (alpha, beta, self.gamma)
    }
}

/// `(ħ/2) [[α, β], [β, γ]]` for a single-mode model.
pub fn param_to_cov(p: &PutativeParams, model: &SystemModel) -> Result<CovMatrix> {
    if model.n_modes() != 1 {
        return Err(Error::Domain("(gamma, delta) parameterisation is single-mode only".into()));
    }
    let (alpha, beta, gamma) = p.entries();
    Ok(CovMatrix::scaled_2x2(model.hbar() / 2.0, alpha, beta, gamma))
}

/// Inverse of [`param_to_cov`] read off the entries; purity is not enforced.
pub fn cov_to_param(v: &CovMatrix, model: &SystemModel) -> Result<(f64, f64)> {
    if v.dim() != 2 {
        return Err(Error::Domain("(gamma, delta) parameterisation is single-mode only".into()));
    }
    let s = 2.0 / model.hbar();
    let m = v.matrix();
    let (alpha, beta, gamma) = (m[(0, 0)] * s, m[(0, 1)] * s, m[(1, 1)] * s);
    if !(alpha > 0.0 && gamma > 0.0) {
        return Err(Error::Domain("diagonal entries must be positive".into()));
    }
    Ok((gamma, beta / (alpha * gamma).sqrt()))
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::presets::{self, Fixture};
    use approx::assert_abs_diff_eq;
    use proptest::prelude::*;

    fn opo() -> (SystemModel, Unravelling) {
        let m = presets::opo_model(1.0);
        let u = presets::observed_homodyne(&m);
        (m, u)
    }

    #[test]
    fn psd_basics() {
        let id = DMatrix::<f64>::identity(3, 3);
        assert_eq!(is_psd(&id, 1e-8).unwrap(), PsdCheck { ok: true, min_eig: 1.0 });
        let m = DMatrix::from_row_slice(2, 2, &[1.0, 0.0, 0.0, -0.1]);
        let c = is_psd(&m, 1e-8).unwrap();
        assert!(!c.ok);
        assert_abs_diff_eq!(c.min_eig, -0.1, epsilon = 1e-15);
        let asym = DMatrix::from_row_slice(2, 2, &[1.0, 0.0, 1e-3, 1.0]);
        assert!(matches!(is_psd(&asym, 1e-8), Err(Error::Domain(_))));
    }

    #[test]
    fn uncertainty_examples() {
        let (m, _) = opo();
        let vac = m.vacuum();
        let c = uncertainty_check(&vac, &m, 1e-8).unwrap();
        assert!(c.ok && c.det_ok == Some(true));
        assert!(c.margin.abs() < 1e-14);
        assert!(!uncertainty_ok(&CovMatrix::scaled_2x2(0.25, 1.0, 0.0, 1.0), &m));
        // det V^(b) = (ħ²/4)(3.18·0.39 − 0.49²) = 1.0001·ħ²/4
        assert!(uncertainty_ok(&Fixture::B.cov(1.0), &m));
        assert_abs_diff_eq!(Fixture::B.cov(1.0).matrix().determinant() * 4.0, 1.0001, epsilon = 1e-12);
        // negative definite matrix with a large determinant is not a state
        let neg = CovMatrix::scaled_2x2(1.0, -2.0, 0.0, -2.0);
        let c = uncertainty_check(&neg, &m, 1e-8).unwrap();
        assert!(!c.ok && c.det_ok == Some(false));
    }

    #[test]
    fn multimode_uncertainty_uses_hermitian_test() {
        let m = SystemModel::new(
            2,
            1.0,
            DMatrix::identity(4, 4) * -1.0,
            DMatrix::identity(4, 4),
        )
        .unwrap();
        let vac = m.vacuum();
        let c = uncertainty_check(&vac, &m, 1e-8).unwrap();
        assert!(c.ok && c.det_ok.is_none());
        // squeezing one mode below vacuum without compensation violates it
        let mut v = vac.into_inner();
        v[(2, 2)] = 0.2;
        assert!(!uncertainty_ok(&CovMatrix::new(v).unwrap(), &m));
    }

    #[test]
    fn purity_examples() {
        let (m, _) = opo();
        assert_abs_diff_eq!(purity(&m.vacuum(), &m).unwrap(), 1.0, epsilon = 1e-15);
        assert_abs_diff_eq!(
            purity(&CovMatrix::scaled_2x2(1.0, 1.0, 0.0, 1.0), &m).unwrap(),
            0.5,
            epsilon = 1e-15
        );
        // det V^(a) = 0.9881·ħ²/4 from the rounded entries
        let p = purity(&Fixture::A.cov(1.0), &m).unwrap();
        assert!((p - 1.0).abs() < 0.02, "{p}");
        assert!(matches!(
            purity(&CovMatrix::scaled_2x2(1.0, 1.0, 1.0, 1.0), &m),
            Err(Error::Domain(_))
        ));
    }

    #[test]
    fn fixture_fits() {
        let (m, u) = opo();
        let steady = SteadyStates::solve(&m, &u, &SteadySolveConfig::default()).unwrap();
        let tol = 1e-8;
        assert!(fits_within(&steady.filtered, &Fixture::B.cov(1.0), tol).unwrap().ok);
        assert!(!fits_within(&steady.filtered, &Fixture::C.cov(1.0), tol).unwrap().ok);
        assert!(fits_within(&steady.unconditioned, &Fixture::C.cov(1.0), tol).unwrap().ok);
        assert!(!fits_within(&steady.unconditioned, &Fixture::D.cov(1.0), tol).unwrap().ok);
        let wrong = CovMatrix::new(DMatrix::identity(4, 4)).unwrap();
        assert!(matches!(fits_within(&steady.filtered, &wrong, tol), Err(Error::Dimension(_))));
    }

    #[test]
    fn realizability_of_fixtures() {
        let (m, u) = opo();
        let a = check_realizable(&m, &u, &Fixture::A.cov(1.0), 1e-8).unwrap();
        assert!(a.realizable);
        // rounding the printed entries down moves it off the boundary
        assert!(!a.extremal && a.min_eig > 0.005);
        let exact = check_realizable(&m, &u, &presets::fixture_a_exact(1.0), 1e-8).unwrap();
        assert!(exact.realizable && exact.extremal);
        assert!(!check_realizable(&m, &u, &Fixture::B.cov(1.0), 1e-8).unwrap().realizable);
        assert!(!check_realizable(&m, &u, &Fixture::D.cov(1.0), 1e-8).unwrap().realizable);
    }

    #[test]
    fn classification_table() {
        let (m, u) = opo();
        let cls = Classifier::new(&m, &u, &SteadySolveConfig::default()).unwrap();
        let a = cls.classify(&Fixture::A.cov(1.0)).unwrap();
        assert!(a.fits_unconditioned && a.fits_filtered && a.realizable);
        let c = cls.classify(&Fixture::C.cov(1.0)).unwrap();
        assert!(c.fits_unconditioned && !c.fits_filtered && !c.realizable);
        assert!(!c.uncertainty_ok, "printed ħ/3 prefactor makes V^(c) violate uncertainty");
        let d = cls.classify(&Fixture::D.cov(1.0)).unwrap();
        assert!(!d.fits_unconditioned);
    }

    #[test]
    fn steady_filtered_classifies_as_degenerate_realizable() {
        let (m, u) = opo();
        let cls = Classifier::new(&m, &u, &SteadySolveConfig::default()).unwrap();
        let vf = cls.steady().filtered.clone();
        let r = cls.classify(&vf).unwrap();
        assert!(r.realizable && r.extremal);
        assert!(r.min_eigs["realizability"].abs() < 1e-9);
        assert!(!r.pure);
        assert!(r.purity.unwrap() < 0.99);
    }

    #[test]
    fn params_vacuum_and_fixture_a() {
        let (m, _) = opo();
        let v = param_to_cov(&PutativeParams::new(1.0, 0.0).unwrap(), &m).unwrap();
        assert!((v.matrix() - m.vacuum().matrix()).norm() < 1e-15);
        let v = param_to_cov(&PutativeParams::new(0.41, 0.0).unwrap(), &m).unwrap();
        let diff = (v.matrix() - Fixture::A.cov(1.0).matrix()) * 2.0;
        // α = 1/0.41 = 2.439 vs printed 2.41
        assert!(diff.iter().all(|x| x.abs() < 0.035));
        assert!(PutativeParams::new(0.5, 1.0).is_err());
        assert!(PutativeParams::new(-0.5, 0.0).is_err());
    }

    #[test]
    fn cov_to_param_inverts() {
        let (m, _) = opo();
        let p = PutativeParams::new(0.37, -0.42).unwrap();
        let (g, d) = cov_to_param(&param_to_cov(&p, &m).unwrap(), &m).unwrap();
        assert_abs_diff_eq!(g, 0.37, epsilon = 1e-14);
        assert_abs_diff_eq!(d, -0.42, epsilon = 1e-14);
    }

    proptest! {
        #[test]
        fn params_are_pure(gamma in 0.01f64..10.0, delta in -0.99f64..0.99, hbar in 0.2f64..3.0) {
            let m = presets::opo_model(hbar);
            let p = PutativeParams::new(gamma, delta).unwrap();
            let (a, b, g) = p.entries();
            prop_assert!((a * g - b * b - 1.0).abs() < 1e-9 * a * g);
            let v = param_to_cov(&p, &m).unwrap();
            let c = uncertainty_check(&v, &m, 1e-8 * hbar).unwrap();
            prop_assert!(c.ok);
            prop_assert!(c.margin.abs() <= 1e-10 * (1.0 + a + g) * hbar, "{}", c.margin);
        }

        #[test]
        fn hermitian_and_determinant_tests_agree(a in -3.0f64..3.0, b in -3.0f64..3.0, c in -3.0f64..3.0) {
            let m = presets::opo_model(1.0);
            let v = CovMatrix::scaled_2x2(1.0, a, b, c);
            let chk = uncertainty_check(&v, &m, 1e-8).unwrap();
            // away from the boundary both routes must give the same answer
            if chk.margin.abs() > 1e-6 {
                prop_assert_eq!(Some(chk.ok), chk.det_ok);
            }
        }
    }
}
