//! Grid scans over pure single-mode putative true covariances and over
//! unobserved homodyne phases.

use std::fmt;
use std::io::Write;
use std::str::FromStr;

use rayon::prelude::*;
use serde::Serialize;

use crate::error::{Error, Result};
use crate::model::{make_homodyne, CovMatrix, SystemModel, Unravelling};
use crate::realizability::{check_realizable, cov_to_param, param_to_cov, Classifier, PutativeParams, RealizabilityReport};
use crate::riccati::{true_steady, SteadySolveConfig};
use crate::smoothing::{smoothed_cov, smoothed_det_normalized};

#[derive(Debug, Clone, Copy, PartialEq, Serialize)]
pub struct Axis {
    pub lo: f64,
    pub hi: f64,
    pub steps: usize,
}

impl Axis {
    pub fn new(lo: f64, hi: f64, steps: usize) -> Result<Self> {
        if !(lo < hi) || !lo.is_finite() || !hi.is_finite() {
            return Err(Error::Input(format!("axis needs lo < hi, got {lo}..{hi}")));
        }
        if steps < 2 {
            return Err(Error::Input(format!("axis needs at least 2 steps, got {steps}")));
        }
        Ok(Self { lo, hi, steps })
    }

    pub fn value(&self, i: usize) -> f64 {
        let f = i as f64 / (self.steps - 1) as f64;
        self.lo * (1.0 - f) + self.hi * f
    }
}

impl fmt::Display for Axis {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        write!(f, "{}:{}:{}", self.lo, self.hi, self.steps)
    }
}

impl FromStr for Axis {
    type Err = Error;

    fn from_str(s: &str) -> Result<Self> {
        let parts: Vec<&str> = s.split(':').collect();
        if parts.len() != 3 {
            return Err(Error::Input(format!("axis {s:?} is not lo:hi:n")));
        }
        let num = |t: &str| {
            t.trim()
                .parse::<f64>()
                .map_err(|_| Error::Input(format!("bad number {t:?} in axis {s:?}")))
        };
        let steps = parts[2]
            .trim()
            .parse::<usize>()
            .map_err(|_| Error::Input(format!("bad step count in axis {s:?}")))?;
        Axis::new(num(parts[0])?, num(parts[1])?, steps)
    }
}

/// `γ` and `δ` axes of a scan; `δ` must stay inside `(-1, 1)`.
#[derive(Debug, Clone, Copy, PartialEq, Serialize)]
pub struct GridSpec {
    pub gamma: Axis,
    pub delta: Axis,
}

impl GridSpec {
    pub fn new(gamma: Axis, delta: Axis) -> Result<Self> {
        if gamma.lo <= 0.0 {
            return Err(Error::Input("gamma axis must be positive".into()));
        }
        if delta.lo <= -1.0 || delta.hi >= 1.0 {
            return Err(Error::Input("delta axis must lie inside (-1, 1)".into()));
        }
        Ok(Self { gamma, delta })
    }

    pub fn len(&self) -> usize {
        self.gamma.steps * self.delta.steps
    }

    pub fn is_empty(&self) -> bool {
        self.len() == 0
    }
}

impl Default for GridSpec {
    fn default() -> Self {
        Self {
            gamma: Axis {
                lo: 0.05,
                hi: 1.2,
                steps: 200,
            },
            delta: Axis {
                lo: -0.9,
                hi: 0.9,
                steps: 200,
            },
        }
    }
}

impl fmt::Display for GridSpec {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        write!(f, "{},{}", self.gamma, self.delta)
    }
}

/// Parses `"glo:ghi:gn,dlo:dhi:dn"`.
impl FromStr for GridSpec {
    type Err = Error;

    fn from_str(s: &str) -> Result<Self> {
        let (g, d) = s
            .split_once(',')
            .ok_or_else(|| Error::Input(format!("grid {s:?} is not gamma_axis,delta_axis")))?;
        GridSpec::new(g.parse()?, d.parse()?)
    }
}

#[derive(Debug, Clone, PartialEq, Serialize)]
pub struct SweepRow {
    pub gamma: f64,
    pub delta: f64,
    pub report: RealizabilityReport,
    /// `(2/ħ)² det V_S`; `None` when a smoothing inverse is singular.
    pub det_vs: Option<f64>,
    pub singular: bool,
}

fn sweep_point(cls: &Classifier, gamma: f64, delta: f64) -> Result<SweepRow> {
    let p = PutativeParams::new(gamma, delta)?;
    let v = param_to_cov(&p, cls.model())?;
    let report = cls.classify(&v)?;
    let steady = cls.steady();
    let (det_vs, singular) = match smoothed_cov(&steady.filtered, &steady.retrofiltered, &v) {
        Ok(vs) => (Some(smoothed_det_normalized(&vs, cls.model())), false),
        Err(Error::Singular { .. }) => (None, true),
        Err(e) => return Err(e),
    };
    Ok(SweepRow {
        gamma,
        delta,
        report,
        det_vs,
        singular,
    })
}

/// One row per grid point, `γ` outer and `δ` inner, in that order whatever
/// the thread count.
pub fn sweep_grid(cls: &Classifier, grid: &GridSpec) -> Result<Vec<SweepRow>> {
    if cls.model().n_modes() != 1 {
        return Err(Error::Domain("(gamma, delta) sweeps are single-mode only".into()));
    }
    (0..grid.len())
        .into_par_iter()
        .map(|idx| {
            let (i, j) = (idx / grid.delta.steps, idx % grid.delta.steps);
            sweep_point(cls, grid.gamma.value(i), grid.delta.value(j))
        })
        .collect()
}

fn flag(b: bool) -> u8 {
    u8::from(b)
}

pub fn write_sweep_csv<W: Write>(
    mut w: W,
    rows: &[SweepRow],
    model_hash: &str,
    tol: f64,
    grid: &GridSpec,
) -> Result<()> {
    writeln!(w, "# model_sha256={model_hash}, tol={tol:e}, grid={grid}")?;
    writeln!(w, "gamma,delta,pure,sclass,unc_fit,filt_fit,realizable,extremal,det_vs,singular")?;
    for r in rows {
        let det = r.det_vs.map_or_else(|| "nan".to_string(), |d| format!("{d}"));
        writeln!(
            w,
            "{},{},{},{},{},{},{},{},{},{}",
            r.gamma,
            r.delta,
            flag(r.report.pure),
            flag(r.report.uncertainty_ok),
            flag(r.report.fits_unconditioned),
            flag(r.report.fits_filtered),
            flag(r.report.realizable),
            flag(r.report.extremal),
            det,
            flag(r.singular)
        )?;
    }
    Ok(())
}

#[derive(Debug, Clone, PartialEq, Serialize)]
pub struct BoundaryPoint {
    pub theta_u: f64,
    pub v_t: CovMatrix,
    pub gamma: f64,
    pub delta: f64,
    pub realizable: bool,
    pub extremal: bool,
    /// Smallest eigenvalue of the realizability residual.
    pub min_eig: f64,
}

/// True covariances produced by unobserved homodyne detection at
/// `θ_u = jπ/n`, `j = 0..n`, carrying the efficiency the observed channel
/// leaves over. Errors are reported per phase.
pub fn homodyne_boundary(
    model: &SystemModel,
    u_o: &Unravelling,
    n_phases: usize,
    cfg: &SteadySolveConfig,
    tol: f64,
) -> Result<Vec<Result<BoundaryPoint>>> {
    if model.n_modes() != 1 || u_o.channels() != 1 {
        return Err(Error::Domain(
            "homodyne boundary needs one mode and one observed channel".into(),
        ));
    }
    let eta_o = u_o
        .efficiency()
        .ok_or_else(|| Error::Input("observed unravelling has no known efficiency".into()))?;
    let eta_u = 1.0 - eta_o;
    if !(eta_u > 0.0) {
        return Err(Error::Domain("observed channel is already fully efficient".into()));
    }
    Ok((0..n_phases)
        .into_par_iter()
        .map(|j| {
            let theta_u = std::f64::consts::PI * j as f64 / n_phases as f64;
            let u_u = make_homodyne(eta_u, theta_u, 0, model)?;
            let v_t = true_steady(model, u_o, &u_u, cfg)?;
            let chk = check_realizable(model, u_o, &v_t, tol)?;
            let (gamma, delta) = cov_to_param(&v_t, model)?;
            Ok(BoundaryPoint {
                theta_u,
                v_t,
                gamma,
                delta,
                realizable: chk.realizable,
                extremal: chk.extremal,
                min_eig: chk.min_eig,
            })
        })
        .collect())
}

pub fn write_boundary_csv<W: Write>(mut w: W, points: &[BoundaryPoint], model_hash: &str, tol: f64) -> Result<()> {
    writeln!(w, "# model_sha256={model_hash}, tol={tol:e}")?;
    writeln!(w, "theta_u,gamma,delta,realizable,extremal,min_eig")?;
    for p in points {
        writeln!(
            w,
            "{},{},{},{},{},{}",
            p.theta_u,
            p.gamma,
            p.delta,
            flag(p.realizable),
            flag(p.extremal),
            p.min_eig
        )?;
    }
    Ok(())
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::presets;
    use std::f64::consts::PI;

    fn classifier() -> Classifier {
        let m = presets::opo_model(1.0);
        let u = presets::observed_homodyne(&m);
        Classifier::new(&m, &u, &SteadySolveConfig::default()).unwrap()
    }

    #[test]
    fn grid_parsing() {
        let g: GridSpec = "0.1:1:10,-0.5:0.5:3".parse().unwrap();
        assert_eq!(g.len(), 30);
        assert_eq!(g.gamma.value(9), 1.0);
        assert_eq!(g.delta.value(1), 0.0);
        assert_eq!(g.to_string(), "0.1:1:10,-0.5:0.5:3");
        assert!("0.1:1:10".parse::<GridSpec>().is_err());
        assert!("0.1:1:1,-0.5:0.5:3".parse::<GridSpec>().is_err());
        assert!("0.1:1:10,-1:0.5:3".parse::<GridSpec>().is_err());
        assert!("1:0.1:10,-0.5:0.5:3".parse::<GridSpec>().is_err());
        assert_eq!(GridSpec::default().len(), 40_000);
    }

    #[test]
    fn sweep_order_and_tiers() {
        let cls = classifier();
        let grid: GridSpec = "0.05:1.2:24,-0.9:0.9:19".parse().unwrap();
        let rows = sweep_grid(&cls, &grid).unwrap();
        assert_eq!(rows.len(), grid.len());
        for (idx, r) in rows.iter().enumerate() {
            assert_eq!(r.gamma, grid.gamma.value(idx / 19));
            assert_eq!(r.delta, grid.delta.value(idx % 19));
            assert!(!r.report.realizable || r.report.fits_filtered);
            assert!(!r.report.fits_filtered || r.report.fits_unconditioned);
            // γ = 0.5 sits on the bound and counts as fitting
            if r.gamma > 0.5 + 1e-9 {
                assert!(!r.report.fits_unconditioned);
            }
            assert!(r.report.pure);
        }
    }

    #[test]
    fn triangle_marker_point() {
        let cls = classifier();
        let row = sweep_point(&cls, 0.41, 0.0).unwrap();
        assert!(row.report.realizable);
        assert!(row.det_vs.unwrap() > 1.0);
    }

    #[test]
    fn csv_header_and_rows() {
        let cls = classifier();
        let grid: GridSpec = "0.1:0.9:2,-0.5:0.5:2".parse().unwrap();
        let rows = sweep_grid(&cls, &grid).unwrap();
        let mut buf = Vec::new();
        write_sweep_csv(&mut buf, &rows, "abc", 1e-8, &grid).unwrap();
        let text = String::from_utf8(buf).unwrap();
        let lines: Vec<&str> = text.lines().collect();
        assert_eq!(lines[0], "# model_sha256=abc, tol=1e-8, grid=0.1:0.9:2,-0.5:0.5:2");
        assert_eq!(lines[1], "gamma,delta,pure,sclass,unc_fit,filt_fit,realizable,extremal,det_vs,singular");
        assert_eq!(lines.len(), 6);
    }

    #[test]
    fn boundary_is_extremal_and_contains_fixture_a() {
        let m = presets::opo_model(1.0);
        let u = presets::observed_homodyne(&m);
        let pts: Vec<BoundaryPoint> = homodyne_boundary(&m, &u, 8, &SteadySolveConfig::default(), 1e-8)
            .unwrap()
            .into_iter()
            .collect::<Result<_>>()
            .unwrap();
        assert_eq!(pts.len(), 8);
        for p in &pts {
            assert!(p.realizable && p.extremal, "{p:?}");
        }
        // θ_u = 7π/8 ≡ -π/8
        let a = &pts[7];
        assert!((a.theta_u - 7.0 * PI / 8.0).abs() < 1e-12);
        assert!((a.gamma - (2f64.sqrt() - 1.0)).abs() < 1e-7);
        assert!(a.delta.abs() < 1e-7);
    }

    #[test]
    fn boundary_rejects_bad_models() {
        let m = presets::opo_model(1.0);
        let full = make_homodyne(1.0, 0.0, 0, &m).unwrap();
        assert!(homodyne_boundary(&m, &full, 4, &SteadySolveConfig::default(), 1e-8).is_err());
        let het = presets::unobserved_heterodyne(&m);
        assert!(homodyne_boundary(&m, &het, 4, &SteadySolveConfig::default(), 1e-8).is_err());
    }
}
