//! System and measurement data types for linear Gaussian quantum systems.
//!
//! Phase-space ordering is `(q_1, p_1, ..., q_N, p_N)`. A [`SystemModel`]
//! carries the drift `A` and diffusion `D` of the unconditioned
//! Ornstein-Uhlenbeck evolution; an [`Unravelling`] carries the output map `C`
//! and back-action map `Γ` of one set of diffusive record channels.

use nalgebra::{DMatrix, DVector};
use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};
use crate::linalg;

/// Relative symmetry slack accepted by [`CovMatrix::new`].
pub const SYMMETRY_TOL: f64 = 1e-12;

#[derive(Debug, Clone, PartialEq)]
pub struct SystemModel {
    n_modes: usize,
    hbar: f64,
    drift: DMatrix<f64>,
    diffusion: DMatrix<f64>,
}

impl SystemModel {
    pub fn new(
        n_modes: usize,
        hbar: f64,
        drift: DMatrix<f64>,
        diffusion: DMatrix<f64>,
    ) -> Result<Self> {
        if n_modes == 0 {
            return Err(Error::Domain("mode count must be positive".into()));
        }
        if !(hbar > 0.0 && hbar.is_finite()) {
            return Err(Error::Domain(format!("hbar must be positive, got {hbar}")));
        }
        let dim = 2 * n_modes;
        if drift.shape() != (dim, dim) || diffusion.shape() != (dim, dim) {
            return Err(Error::Dimension(format!(
                "expected {dim}x{dim} drift and diffusion, got {:?} and {:?}",
                drift.shape(),
                diffusion.shape()
            )));
        }
        if drift.iter().chain(diffusion.iter()).any(|x| !x.is_finite()) {
            return Err(Error::Numeric("model matrices contain non-finite entries".into()));
        }
        let scale = linalg::max_abs(&diffusion).max(1.0);
        if linalg::asymmetry(&diffusion) > SYMMETRY_TOL * scale {
            return Err(Error::Domain("diffusion matrix is not symmetric".into()));
        }
        let min_eig = linalg::min_eigenvalue(&diffusion);
        if min_eig < -1e-10 * scale {
            return Err(Error::Domain(format!(
                "diffusion matrix is not positive semidefinite (min eigenvalue {min_eig:.3e})"
            )));
        }
        Ok(Self {
            n_modes,
            hbar,
            drift,
            diffusion: linalg::symmetrize(&diffusion),
        })
    }

    pub fn n_modes(&self) -> usize {
        self.n_modes
    }

    /// Phase-space dimension 2N.
    pub fn dim(&self) -> usize {
        2 * self.n_modes
    }

    pub fn hbar(&self) -> f64 {
        self.hbar
    }

    pub fn drift(&self) -> &DMatrix<f64> {
        &self.drift
    }

    pub fn diffusion(&self) -> &DMatrix<f64> {
        &self.diffusion
    }

    /// Vacuum covariance `(ħ/2) I`.
    pub fn vacuum(&self) -> CovMatrix {
        CovMatrix(DMatrix::identity(self.dim(), self.dim()) * (self.hbar / 2.0))
    }

    /// Same dynamics with the drift reversed (`A → -A`).
    pub fn time_reversed(&self) -> Self {
        Self {
            drift: -&self.drift,
            ..self.clone()
        }
    }
}

/// Measurement unravelling for `M` diffusive record channels.
///
/// `efficiency` is bookkeeping only: it is set by the homodyne/heterodyne
/// builders and summed by [`stack`], and is `None` for explicit matrices.
#[derive(Debug, Clone, PartialEq)]
pub struct Unravelling {
    c: DMatrix<f64>,
    gamma: DMatrix<f64>,
    efficiency: Option<f64>,
}

impl Unravelling {
    pub fn new(c: DMatrix<f64>, gamma: DMatrix<f64>) -> Result<Self> {
        if c.shape() != gamma.shape() {
            return Err(Error::Dimension(format!(
                "C is {:?} but Gamma is {:?}",
                c.shape(),
                gamma.shape()
            )));
        }
        if c.iter().chain(gamma.iter()).any(|x| !x.is_finite()) {
            return Err(Error::Numeric("unravelling contains non-finite entries".into()));
        }
        Ok(Self {
            c,
            gamma,
            efficiency: None,
        })
    }

    /// Unravelling with no channels for a `dim`-dimensional phase space.
    pub fn empty(dim: usize) -> Self {
        Self {
            c: DMatrix::zeros(0, dim),
            gamma: DMatrix::zeros(0, dim),
            efficiency: Some(0.0),
        }
    }

    pub fn with_efficiency(mut self, eta: f64) -> Self {
        self.efficiency = Some(eta);
        self
    }

    pub fn c(&self) -> &DMatrix<f64> {
        &self.c
    }

    pub fn gamma(&self) -> &DMatrix<f64> {
        &self.gamma
    }

    /// Number of record channels `M`.
    pub fn channels(&self) -> usize {
        self.c.nrows()
    }

    pub fn dim(&self) -> usize {
        self.c.ncols()
    }

    pub fn efficiency(&self) -> Option<f64> {
        self.efficiency
    }

    pub fn is_empty(&self) -> bool {
        self.channels() == 0
    }
}

fn check_mode(eta: f64, mode_index: usize, model: &SystemModel) -> Result<()> {
    if !(eta > 0.0 && eta <= 1.0) {
        return Err(Error::Domain(format!("efficiency must lie in (0, 1], got {eta}")));
    }
    if mode_index >= model.n_modes() {
        return Err(Error::Domain(format!(
            "mode index {mode_index} out of range for {} mode(s)",
            model.n_modes()
        )));
    }
    Ok(())
}

/// Homodyne detection of one mode at phase `theta` with efficiency `eta`:
/// `C = 2√(η/ħ)(cos θ, sin θ)` on that mode's `(q, p)` columns and
/// `Γ = -ħC/2`.
pub fn make_homodyne(
    eta: f64,
    theta: f64,
    mode_index: usize,
    model: &SystemModel,
) -> Result<Unravelling> {
    check_mode(eta, mode_index, model)?;
    let dim = model.dim();
    let amp = 2.0 * (eta / model.hbar()).sqrt();
    let mut c = DMatrix::zeros(1, dim);
    c[(0, 2 * mode_index)] = amp * theta.cos();
    c[(0, 2 * mode_index + 1)] = amp * theta.sin();
    let gamma = &c * (-model.hbar() / 2.0);
    Ok(Unravelling {
        c,
        gamma,
        efficiency: Some(eta),
    })
}

/// Balanced heterodyne: two homodyne channels at `theta` and `theta + π/2`,
/// each carrying half of the efficiency.
pub fn make_heterodyne(
    eta: f64,
    theta: f64,
    mode_index: usize,
    model: &SystemModel,
) -> Result<Unravelling> {
    check_mode(eta, mode_index, model)?;
    let first = make_homodyne(eta / 2.0, theta, mode_index, model)?;
    let second = make_homodyne(eta / 2.0, theta + std::f64::consts::FRAC_PI_2, mode_index, model)?;
    stack(&first, &second)
}

/// Row-concatenates two unravellings on the same phase space.
pub fn stack(u1: &Unravelling, u2: &Unravelling) -> Result<Unravelling> {
    if u1.dim() != u2.dim() {
        return Err(Error::Dimension(format!(
            "cannot stack unravellings on {}- and {}-dimensional phase spaces",
            u1.dim(),
            u2.dim()
        )));
    }
    let m1 = u1.channels();
    let m2 = u2.channels();
    let dim = u1.dim();
    let mut c = DMatrix::zeros(m1 + m2, dim);
    let mut gamma = DMatrix::zeros(m1 + m2, dim);
    c.rows_mut(0, m1).copy_from(&u1.c);
    c.rows_mut(m1, m2).copy_from(&u2.c);
    gamma.rows_mut(0, m1).copy_from(&u1.gamma);
    gamma.rows_mut(m1, m2).copy_from(&u2.gamma);
    let efficiency = match (u1.efficiency, u2.efficiency) {
        (Some(a), Some(b)) => Some(a + b),
        _ => None,
    };
    Ok(Unravelling {
        c,
        gamma,
        efficiency,
    })
}

#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub enum Sign {
    Plus,
    Minus,
}

/// `K±[V] = V C^T ± Γ^T`, a `2N × M` matrix.
pub fn kappa(v: &DMatrix<f64>, u: &Unravelling, sign: Sign) -> Result<DMatrix<f64>> {
    if v.shape() != (u.dim(), u.dim()) {
        return Err(Error::Dimension(format!(
            "covariance is {:?} but unravelling acts on dimension {}",
            v.shape(),
            u.dim()
        )));
    }
    let vc = v * u.c.transpose();
    Ok(match sign {
        Sign::Plus => vc + u.gamma.transpose(),
        Sign::Minus => vc - u.gamma.transpose(),
    })
}

/// `Σ = ⊕^N [[0, 1], [-1, 0]]`.
pub fn symplectic_form(n_modes: usize) -> DMatrix<f64> {
    let dim = 2 * n_modes;
    let mut s = DMatrix::zeros(dim, dim);
    for k in 0..n_modes {
        s[(2 * k, 2 * k + 1)] = 1.0;
        s[(2 * k + 1, 2 * k)] = -1.0;
    }
    s
}

/// Real symmetric phase-space covariance.
///
/// Only symmetry and finiteness are enforced: putative true covariances are
/// allowed to be unphysical, and the predicates in `realizability` decide
/// what they are.
#[derive(Debug, Clone, PartialEq)]
pub struct CovMatrix(DMatrix<f64>);

impl CovMatrix {
    pub fn new(m: DMatrix<f64>) -> Result<Self> {
        if m.nrows() != m.ncols() {
            return Err(Error::Dimension(format!("covariance must be square, got {:?}", m.shape())));
        }
        if m.iter().any(|x| !x.is_finite()) {
            return Err(Error::Numeric("covariance has non-finite entries".into()));
        }
        let scale = linalg::max_abs(&m).max(f64::MIN_POSITIVE);
        if linalg::asymmetry(&m) > SYMMETRY_TOL * scale {
            return Err(Error::Domain("covariance is not symmetric".into()));
        }
        Ok(Self(linalg::symmetrize(&m)))
    }

    /// Symmetrises `m` first; use for computed results that carry rounding
    /// asymmetry.
    pub fn symmetrized(m: &DMatrix<f64>) -> Result<Self> {
        Self::new(linalg::symmetrize(m))
    }

    pub fn from_rows(rows: &[Vec<f64>]) -> Result<Self> {
        Self::new(matrix_from_rows(rows)?)
    }

    /// `scale * [[a, b], [b, c]]`, e.g. `scale = ħ/2` for matrices quoted in
    /// units of ħ/2.
    pub fn scaled_2x2(scale: f64, a: f64, b: f64, c: f64) -> Self {
        Self(DMatrix::from_row_slice(2, 2, &[a, b, b, c]) * scale)
    }

    pub fn matrix(&self) -> &DMatrix<f64> {
        &self.0
    }

    pub fn into_inner(self) -> DMatrix<f64> {
        self.0
    }

    pub fn dim(&self) -> usize {
        self.0.nrows()
    }

    pub fn rows(&self) -> Vec<Vec<f64>> {
        matrix_to_rows(&self.0)
    }
}

impl AsRef<DMatrix<f64>> for CovMatrix {
    fn as_ref(&self) -> &DMatrix<f64> {
        &self.0
    }
}

impl Serialize for CovMatrix {
    fn serialize<S: serde::Serializer>(&self, s: S) -> std::result::Result<S::Ok, S::Error> {
        self.rows().serialize(s)
    }
}

impl<'de> Deserialize<'de> for CovMatrix {
    fn deserialize<D: serde::Deserializer<'de>>(d: D) -> std::result::Result<Self, D::Error> {
        let rows = Vec::<Vec<f64>>::deserialize(d)?;
        CovMatrix::from_rows(&rows).map_err(serde::de::Error::custom)
    }
}

#[derive(Debug, Clone, PartialEq)]
pub struct GaussianState {
    pub mean: DVector<f64>,
    pub cov: CovMatrix,
}

impl GaussianState {
    pub fn new(mean: DVector<f64>, cov: CovMatrix) -> Result<Self> {
        if mean.len() != cov.dim() {
            return Err(Error::Dimension(format!(
                "mean has length {} but covariance is {}x{}",
                mean.len(),
                cov.dim(),
                cov.dim()
            )));
        }
        Ok(Self { mean, cov })
    }

    /// Marginal state of mode `k` (its `(q, p)` block).
    pub fn mode_marginal(&self, k: usize) -> Result<GaussianState> {
        if 2 * k + 1 >= self.mean.len() {
            return Err(Error::Domain(format!("mode {k} out of range")));
        }
        let mean = self.mean.rows(2 * k, 2).into_owned();
        let cov = CovMatrix(self.cov.0.view((2 * k, 2 * k), (2, 2)).into_owned());
        Ok(GaussianState { mean, cov })
    }
}

pub fn matrix_to_rows(m: &DMatrix<f64>) -> Vec<Vec<f64>> {
    m.row_iter().map(|r| r.iter().copied().collect()).collect()
}

/// Builds a matrix from row-major nested vectors. `cols` is needed only for
/// the zero-row case.
pub fn matrix_from_rows_with_cols(rows: &[Vec<f64>], cols: usize) -> Result<DMatrix<f64>> {
    if rows.is_empty() {
        return Ok(DMatrix::zeros(0, cols));
    }
    let ncols = rows[0].len();
    if rows.iter().any(|r| r.len() != ncols) {
        return Err(Error::Input("ragged matrix rows".into()));
    }
    Ok(DMatrix::from_fn(rows.len(), ncols, |i, j| rows[i][j]))
}

pub fn matrix_from_rows(rows: &[Vec<f64>]) -> Result<DMatrix<f64>> {
    matrix_from_rows_with_cols(rows, 0)
}
