//! The on-threshold degenerate OPO and its test covariances.
//!
//! `A = diag(0, -2)`, `D = ħI`, observed by homodyne detection with
//! efficiency 1/2 at phase 3π/8. The four putative true covariances are
//! quoted in units of ħ/2 except the third, which carries a ħ/3 prefactor.

use std::f64::consts::PI;

use nalgebra::DMatrix;

use crate::model::{make_heterodyne, make_homodyne, CovMatrix, SystemModel, Unravelling};

pub const OBSERVED_ETA: f64 = 0.5;
pub const OBSERVED_THETA: f64 = 3.0 * PI / 8.0;
pub const UNOBSERVED_THETA: f64 = -PI / 8.0;

pub fn opo_model(hbar: f64) -> SystemModel {
    SystemModel::new(
        1,
        hbar,
        DMatrix::from_row_slice(2, 2, &[0.0, 0.0, 0.0, -2.0]),
        DMatrix::identity(2, 2) * hbar,
    )
    .expect("OPO preset is a valid model")
}

pub fn observed_homodyne(model: &SystemModel) -> Unravelling {
    make_homodyne(OBSERVED_ETA, OBSERVED_THETA, 0, model).expect("valid preset")
}

/// Unobserved homodyne at phase -π/8 carrying the remaining efficiency.
pub fn unobserved_homodyne(model: &SystemModel) -> Unravelling {
    make_homodyne(1.0 - OBSERVED_ETA, UNOBSERVED_THETA, 0, model).expect("valid preset")
}

/// Unobserved balanced heterodyne carrying the remaining efficiency.
pub fn unobserved_heterodyne(model: &SystemModel) -> Unravelling {
    make_heterodyne(1.0 - OBSERVED_ETA, 0.0, 0, model).expect("valid preset")
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash)]
pub enum Fixture {
    A,
    B,
    C,
    D,
}

impl Fixture {
    pub const ALL: [Fixture; 4] = [Fixture::A, Fixture::B, Fixture::C, Fixture::D];

    pub fn label(self) -> &'static str {
        match self {
            Fixture::A => "a",
            Fixture::B => "b",
            Fixture::C => "c",
            Fixture::D => "d",
        }
    }

    pub fn parse(s: &str) -> Option<Self> {
        match s.trim().to_ascii_lowercase().as_str() {
            "a" => Some(Fixture::A),
            "b" => Some(Fixture::B),
            "c" => Some(Fixture::C),
            "d" => Some(Fixture::D),
            _ => None,
        }
    }

    /// The matrix exactly as printed (two-decimal entries).
    pub fn cov(self, hbar: f64) -> CovMatrix {
        match self {
            Fixture::A => CovMatrix::scaled_2x2(hbar / 2.0, 2.41, 0.0, 0.41),
            Fixture::B => CovMatrix::scaled_2x2(hbar / 2.0, 3.18, 0.49, 0.39),
            Fixture::C => CovMatrix::scaled_2x2(hbar / 3.0, 5.02, -0.50, 0.25),
            Fixture::D => CovMatrix::scaled_2x2(hbar / 2.0, 1.93, 0.79, 0.84),
        }
    }
}

/// Unrounded first fixture: `(ħ/2) diag(1 + √2, √2 - 1)`, the true covariance
/// produced by the unobserved homodyne at -π/8.
pub fn fixture_a_exact(hbar: f64) -> CovMatrix {
    let r = 2f64.sqrt();
    CovMatrix::scaled_2x2(hbar / 2.0, 1.0 + r, 0.0, r - 1.0)
}

/// Third fixture with a ħ/2 prefactor instead of the printed ħ/3. With ħ/2
/// the determinant is ≈ 1.005·ħ²/4, consistent with a (nearly) pure state.
pub fn fixture_c_half_hbar(hbar: f64) -> CovMatrix {
    CovMatrix::scaled_2x2(hbar / 2.0, 5.02, -0.50, 0.25)
}
