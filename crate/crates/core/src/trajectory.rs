//! Seeded simulation of the observed/unobserved measurement scenario.
//!
//! The true mean follows the filter equation of an observer holding every
//! record, with its covariance pinned at the steady true covariance `V_T`:
//!
//! `dx_T = A x_T dt + K+[V_T] dw`, `y dt = C x_T dt + dw`,
//!
//! where `dw` are independent Wiener increments, observed channels first.
//! The partial observer's filter starts from `(x_T(0), V_T)` and sees only the
//! observed rows, so `x_T - x_F` has covariance `V_F(t) - V_T` at every time.
//!
//! Random numbers come from `ChaCha8Rng` seeded with a 64-bit seed; an
//! ensemble member with index `i` uses seed `seed ^ i`. Each step draws one
//! standard normal per channel and scales it by `√dt`.

use std::f64::consts::PI;
use std::io::Write;

use nalgebra::{DMatrix, DVector};
use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;
use rand_distr::StandardNormal;
use rayon::prelude::*;
use serde::Serialize;

use crate::error::{Error, Result};
use crate::linalg;
use crate::model::{kappa, stack, CovMatrix, GaussianState, Sign, SystemModel, Unravelling};
use crate::riccati::{filtered_rhs, integrate_cov, true_steady, SteadySolveConfig};

/// Per-step measurement results `y` (one column per step).
#[derive(Debug, Clone, PartialEq)]
pub struct Record {
    pub dt: f64,
    pub values: DMatrix<f64>,
}

impl Record {
    pub fn channels(&self) -> usize {
        self.values.nrows()
    }

    pub fn steps(&self) -> usize {
        self.values.ncols()
    }
}

/// Output of one simulated run. Column `k` of every matrix belongs to the
/// step ending at `t = (k + 1) dt`.
#[derive(Debug, Clone, PartialEq)]
pub struct TrajectoryBundle {
    pub dt: f64,
    pub seed: u64,
    pub initial_mean: DVector<f64>,
    pub true_means: DMatrix<f64>,
    pub filtered_means: DMatrix<f64>,
    pub observed: Record,
    pub unobserved: Record,
    /// Innovation increments `y_o dt - C_o x_F dt` of the partial observer.
    pub innovations: DMatrix<f64>,
    /// Partial observer's covariance at the final time.
    pub final_filtered_cov: CovMatrix,
}

impl TrajectoryBundle {
    pub fn steps(&self) -> usize {
        self.true_means.ncols()
    }

    pub fn duration(&self) -> f64 {
        self.steps() as f64 * self.dt
    }

    pub fn time(&self, k: usize) -> f64 {
        (k + 1) as f64 * self.dt
    }

    /// Writes the bundle as CSV: a `# seed=…, dt=…` line, a header, then one
    /// row per step.
    pub fn write_csv<W: Write>(&self, mut w: W) -> Result<()> {
        writeln!(w, "# seed={}, dt={}", self.seed, self.dt)?;
        let dim = self.true_means.nrows();
        let n_modes = dim / 2;
        let mut header = vec!["t".to_string()];
        for prefix in ["true", "filt"] {
            for k in 0..n_modes {
                let suffix = if n_modes == 1 { String::new() } else { (k + 1).to_string() };
                header.push(format!("{prefix}_q{suffix}"));
                header.push(format!("{prefix}_p{suffix}"));
            }
        }
        let m = self.observed.channels() + self.unobserved.channels();
        header.extend((1..=m).map(|j| format!("y_{j}")));
        writeln!(w, "{}", header.join(","))?;
        for k in 0..self.steps() {
            let mut row = vec![format!("{}", self.time(k))];
            row.extend(self.true_means.column(k).iter().map(|x| format!("{x}")));
            row.extend(self.filtered_means.column(k).iter().map(|x| format!("{x}")));
            row.extend(self.observed.values.column(k).iter().map(|x| format!("{x}")));
            row.extend(self.unobserved.values.column(k).iter().map(|x| format!("{x}")));
            writeln!(w, "{}", row.join(","))?;
        }
        Ok(())
    }
}

#[derive(Debug, Clone, PartialEq, Serialize)]
pub struct SimulationSpec {
    pub duration: f64,
    pub dt: f64,
    pub seed: u64,
    /// Starting mean for both observers; zero when `None`.
    pub initial_mean: Option<Vec<f64>>,
    /// Force every Wiener increment to zero.
    pub noiseless: bool,
}

impl SimulationSpec {
    pub fn new(duration: f64, dt: f64, seed: u64) -> Self {
        Self {
            duration,
            dt,
            seed,
            initial_mean: None,
            noiseless: false,
        }
    }

    fn steps(&self) -> Result<usize> {
        if !(self.dt > 0.0 && self.dt.is_finite()) || !(self.duration >= 0.0 && self.duration.is_finite()) {
            return Err(Error::Domain(format!(
                "need dt > 0 and duration >= 0, got dt = {}, duration = {}",
                self.dt, self.duration
            )));
        }
        Ok((self.duration / self.dt).round() as usize)
    }
}

/// Gaussian increments with variance `dt` per channel.
pub struct NoiseSource {
    rng: ChaCha8Rng,
    sqrt_dt: f64,
    noiseless: bool,
}

impl NoiseSource {
    pub fn new(seed: u64, dt: f64, noiseless: bool) -> Self {
        Self {
            rng: ChaCha8Rng::seed_from_u64(seed),
            sqrt_dt: dt.sqrt(),
            noiseless,
        }
    }

    pub fn fill(&mut self, out: &mut DVector<f64>) {
        for x in out.iter_mut() {
            *x = if self.noiseless {
                0.0
            } else {
                let z: f64 = self.rng.sample(StandardNormal);
                z * self.sqrt_dt
            };
        }
    }
}

/// Precomputed steady quantities for repeated runs of one scenario.
#[derive(Debug, Clone)]
pub struct Simulator {
    model: SystemModel,
    observed: Unravelling,
    total: Unravelling,
    true_cov: CovMatrix,
    true_gain: DMatrix<f64>,
}

impl Simulator {
    pub fn new(
        model: &SystemModel,
        u_o: &Unravelling,
        u_u: &Unravelling,
        cfg: &SteadySolveConfig,
    ) -> Result<Self> {
        let total = stack(u_o, u_u)?;
        let true_cov = true_steady(model, u_o, u_u, cfg)?;
        let true_gain = kappa(true_cov.matrix(), &total, Sign::Plus)?;
        Ok(Self {
            model: model.clone(),
            observed: u_o.clone(),
            total,
            true_cov,
            true_gain,
        })
    }

    pub fn true_cov(&self) -> &CovMatrix {
        &self.true_cov
    }

    pub fn run(&self, spec: &SimulationSpec) -> Result<TrajectoryBundle> {
        let steps = spec.steps()?;
        let dim = self.model.dim();
        let dt = spec.dt;
        let m_o = self.observed.channels();
        let m = self.total.channels();
        let x0 = match &spec.initial_mean {
            Some(v) if v.len() == dim => DVector::from_column_slice(v),
            Some(v) => {
                return Err(Error::Dimension(format!(
                    "initial mean has length {}, model needs {dim}",
                    v.len()
                )))
            }
            None => DVector::zeros(dim),
        };

        let a = self.model.drift();
        let c = self.total.c();
        let c_o = self.observed.c();
        let mut x_t = x0.clone();
        let mut x_f = x0.clone();
        let mut v_f = self.true_cov.matrix().clone();
        let mut dw = DVector::zeros(m);
        let mut noise = NoiseSource::new(spec.seed, dt, spec.noiseless);

        let mut true_means = DMatrix::zeros(dim, steps);
        let mut filtered_means = DMatrix::zeros(dim, steps);
        let mut y_all = DMatrix::zeros(m, steps);
        let mut innovations = DMatrix::zeros(m_o, steps);

        for k in 0..steps {
            noise.fill(&mut dw);
            let y_dt = c * &x_t * dt + &dw;
            let y_o_dt = y_dt.rows(0, m_o);
            let innov = y_o_dt - c_o * &x_f * dt;
            let k_f = kappa(&v_f, &self.observed, Sign::Plus)?;

            let next_t = &x_t + a * &x_t * dt + &self.true_gain * &dw;
            let next_f = &x_f + a * &x_f * dt + &k_f * &innov;
            let r = filtered_rhs(&self.model, &self.observed, &v_f)?;
            v_f = linalg::symmetrize(&(v_f + r * dt));
            x_t = next_t;
            x_f = next_f;

            if x_t.iter().chain(x_f.iter()).any(|x| !x.is_finite()) {
                return Err(Error::Numeric(format!("mean diverged at step {}", k + 1)));
            }
            true_means.set_column(k, &x_t);
            filtered_means.set_column(k, &x_f);
            y_all.set_column(k, &(y_dt / dt));
            innovations.set_column(k, &innov);
        }

        Ok(TrajectoryBundle {
            dt,
            seed: spec.seed,
            initial_mean: x0,
            true_means,
            filtered_means,
            observed: Record {
                dt,
                values: y_all.rows(0, m_o).into_owned(),
            },
            unobserved: Record {
                dt,
                values: y_all.rows(m_o, m - m_o).into_owned(),
            },
            innovations,
            final_filtered_cov: CovMatrix::symmetrized(&v_f)?,
        })
    }

    /// `n_traj` runs with seeds `spec.seed ^ i`, returned in index order.
    pub fn ensemble(&self, spec: &SimulationSpec, n_traj: usize) -> Result<Vec<TrajectoryBundle>> {
        (0..n_traj as u64)
            .into_par_iter()
            .map(|i| {
                let mut s = spec.clone();
                s.seed = spec.seed ^ i;
                self.run(&s)
            })
            .collect()
    }
}

pub fn simulate_joint(
    model: &SystemModel,
    u_o: &Unravelling,
    u_u: &Unravelling,
    spec: &SimulationSpec,
    cfg: &SteadySolveConfig,
) -> Result<TrajectoryBundle> {
    Simulator::new(model, u_o, u_u, cfg)?.run(spec)
}

fn check_burn_in(bundle: &TrajectoryBundle, burn_in: f64) -> Result<usize> {
    if !(burn_in >= 0.0) || burn_in >= bundle.duration() {
        return Err(Error::Domain(format!(
            "burn-in {burn_in} must lie in [0, {})",
            bundle.duration()
        )));
    }
    let first = (burn_in / bundle.dt).ceil() as usize;
    Ok(first.min(bundle.steps() - 1))
}

/// Time average of `(x_T - x_F)(x_T - x_F)^T` after `burn_in`.
pub fn mixture_statistic(bundle: &TrajectoryBundle, burn_in: f64) -> Result<DMatrix<f64>> {
    let first = check_burn_in(bundle, burn_in)?;
    let dim = bundle.true_means.nrows();
    let mut acc = DMatrix::zeros(dim, dim);
    for k in first..bundle.steps() {
        let e = bundle.true_means.column(k) - bundle.filtered_means.column(k);
        acc += &e * e.transpose();
    }
    Ok(linalg::symmetrize(&(acc / (bundle.steps() - first) as f64)))
}

/// Sample covariance of the innovation increments after `burn_in`, divided
/// by `dt` (the identity for an optimal filter).
pub fn innovation_covariance(bundle: &TrajectoryBundle, burn_in: f64) -> Result<DMatrix<f64>> {
    let first = check_burn_in(bundle, burn_in)?;
    let m = bundle.innovations.nrows();
    let n = bundle.steps() - first;
    let mut acc = DMatrix::zeros(m, m);
    for k in first..bundle.steps() {
        let d = bundle.innovations.column(k);
        acc += d * d.transpose();
    }
    Ok(acc / (n as f64 * bundle.dt))
}

/// Default burn-in: ten slowest damping times (or ten time units with no
/// damping).
pub fn default_burn_in(model: &SystemModel) -> f64 {
    let thr = linalg::damping_threshold(model.drift());
    let slowest = linalg::eigenvalues(model.drift())
        .iter()
        .map(|l| -l.re)
        .filter(|r| *r > thr)
        .fold(f64::INFINITY, f64::min);
    if slowest.is_finite() {
        10.0 / slowest
    } else {
        10.0
    }
}

#[derive(Debug, Clone, PartialEq)]
pub struct Snapshot {
    pub times: Vec<f64>,
    pub mean_path: Vec<DVector<f64>>,
    pub cov_path: Vec<CovMatrix>,
}

impl Snapshot {
    pub fn final_state(&self) -> Result<GaussianState> {
        GaussianState::new(
            self.mean_path.last().expect("non-empty").clone(),
            self.cov_path.last().expect("non-empty").clone(),
        )
    }
}

/// Evolves a putative true state under the observed filter for a time `t`.
/// The covariance path is deterministic; the mean is driven by seeded
/// innovations `dx = A x dt + K+[V'(t)] dw_o`.
pub fn evolve_snapshot(
    model: &SystemModel,
    u_o: &Unravelling,
    v_t: &CovMatrix,
    mean0: &DVector<f64>,
    dt: f64,
    t: f64,
    seed: u64,
) -> Result<Snapshot> {
    if mean0.len() != model.dim() {
        return Err(Error::Dimension(format!(
            "mean has length {}, model needs {}",
            mean0.len(),
            model.dim()
        )));
    }
    let cov_path = integrate_cov(model, u_o, v_t, dt, t)?;
    let mut noise = NoiseSource::new(seed, dt, false);
    let mut dw = DVector::zeros(u_o.channels());
    let mut mean_path = Vec::with_capacity(cov_path.len());
    let mut x = mean0.clone();
    mean_path.push(x.clone());
    for v in &cov_path[..cov_path.len() - 1] {
        noise.fill(&mut dw);
        let k = kappa(v.matrix(), u_o, Sign::Plus)?;
        x = &x + model.drift() * &x * dt + k * &dw;
        mean_path.push(x.clone());
    }
    let times = (0..cov_path.len()).map(|k| k as f64 * dt).collect();
    Ok(Snapshot {
        times,
        mean_path,
        cov_path,
    })
}

/// Points on the 1-SD contour `mean + √V (cos φ, sin φ)` of a single-mode
/// state, `φ = 2πj/n`.
pub fn ellipse_points(state: &GaussianState, n_points: usize) -> Result<Vec<[f64; 2]>> {
    if state.cov.dim() != 2 {
        return Err(Error::Domain("ellipse needs a single-mode state; take a marginal first".into()));
    }
    let root = linalg::psd_sqrt(state.cov.matrix(), 1e-12 * linalg::max_abs(state.cov.matrix()).max(1.0))?;
    Ok((0..n_points)
        .map(|j| {
            let phi = 2.0 * PI * j as f64 / n_points as f64;
            let p = &root * DVector::from_vec(vec![phi.cos(), phi.sin()]);
            [state.mean[0] + p[0], state.mean[1] + p[1]]
        })
        .collect())
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::presets::{self, Fixture};
    use crate::riccati::filtered_steady;
    use approx::assert_abs_diff_eq;

    fn opo_sim(u_u: Unravelling) -> (SystemModel, Simulator) {
        let m = presets::opo_model(1.0);
        let u_o = presets::observed_homodyne(&m);
        let sim = Simulator::new(&m, &u_o, &u_u, &SteadySolveConfig::default()).unwrap();
        (m, sim)
    }

    #[test]
    fn same_seed_same_bundle() {
        let m = presets::opo_model(1.0);
        let (_, sim) = opo_sim(presets::unobserved_homodyne(&m));
        let spec = SimulationSpec::new(2.0, 1e-3, 99);
        let a = sim.run(&spec).unwrap();
        let b = sim.run(&spec).unwrap();
        assert_eq!(a, b);
        let c = sim.run(&SimulationSpec::new(2.0, 1e-3, 100)).unwrap();
        assert_ne!(a.true_means, c.true_means);
        assert_eq!(a.steps(), 2000);
        assert_eq!(a.observed.channels(), 1);
        assert_eq!(a.unobserved.channels(), 1);
    }

    #[test]
    fn noiseless_hurwitz_means_decay() {
        let a = DMatrix::from_row_slice(2, 2, &[-1.0, 0.3, -0.3, -1.5]);
        let m = SystemModel::new(1, 1.0, a, DMatrix::identity(2, 2)).unwrap();
        let u_o = crate::model::make_homodyne(0.5, 0.2, 0, &m).unwrap();
        let u_u = crate::model::make_homodyne(0.5, 1.7, 0, &m).unwrap();
        let mut spec = SimulationSpec::new(10.0, 1e-3, 1);
        spec.noiseless = true;
        spec.initial_mean = Some(vec![1.0, -1.0]);
        let b = simulate_joint(&m, &u_o, &u_u, &spec, &SteadySolveConfig::default()).unwrap();
        let last = b.steps() - 1;
        assert!(b.true_means.column(last).norm() < 1e-3);
        assert!(b.filtered_means.column(last).norm() < 1e-3);
        assert!(b.true_means.column(0).norm() > 1.0);
    }

    #[test]
    fn noise_calibration() {
        let dt = 1e-3;
        let mut src = NoiseSource::new(5, dt, false);
        let mut v = DVector::zeros(2);
        let n = 200_000;
        let mut acc = DMatrix::<f64>::zeros(2, 2);
        for _ in 0..n {
            src.fill(&mut v);
            acc += &v * v.transpose();
        }
        let cov = acc / (n as f64 * dt);
        let se = (2.0 / n as f64).sqrt();
        assert!((cov[(0, 0)] - 1.0).abs() < 3.0 * se, "{cov}");
        assert!((cov[(1, 1)] - 1.0).abs() < 3.0 * se, "{cov}");
        assert!(cov[(0, 1)].abs() < 3.0 / (n as f64).sqrt(), "{cov}");
    }

    #[test]
    fn full_observer_has_zero_mixture() {
        let (_, sim) = opo_sim(Unravelling::empty(2));
        let b = sim.run(&SimulationSpec::new(5.0, 1e-3, 3)).unwrap();
        let s = mixture_statistic(&b, 1.0).unwrap();
        assert!(s.norm() < 1e-20);
        assert_eq!(b.unobserved.channels(), 0);
        assert!(mixture_statistic(&b, 5.0).is_err());
    }

    #[test]
    fn filter_covariance_relaxes_to_steady() {
        let m = presets::opo_model(1.0);
        let (_, sim) = opo_sim(presets::unobserved_homodyne(&m));
        let b = sim.run(&SimulationSpec::new(15.0, 1e-3, 4)).unwrap();
        let vf = filtered_steady(&m, &presets::observed_homodyne(&m), &SteadySolveConfig::default()).unwrap();
        assert!((b.final_filtered_cov.matrix() - vf.matrix()).norm() < 1e-6);
    }

    #[test]
    fn innovations_are_white() {
        let m = presets::opo_model(1.0);
        let (_, sim) = opo_sim(presets::unobserved_homodyne(&m));
        let b = sim.run(&SimulationSpec::new(100.0, 1e-3, 8)).unwrap();
        let cov = innovation_covariance(&b, 5.0).unwrap();
        let n = (b.steps() - 5000) as f64;
        assert!((cov[(0, 0)] - 1.0).abs() < 3.0 * (2.0 / n).sqrt(), "{cov}");
    }

    #[test]
    fn csv_layout() {
        let m = presets::opo_model(1.0);
        let (_, sim) = opo_sim(presets::unobserved_heterodyne(&m));
        let b = sim.run(&SimulationSpec::new(0.01, 1e-3, 42)).unwrap();
        let mut buf = Vec::new();
        b.write_csv(&mut buf).unwrap();
        let text = String::from_utf8(buf).unwrap();
        let lines: Vec<&str> = text.lines().collect();
        assert_eq!(lines[0], "# seed=42, dt=0.001");
        assert_eq!(lines[1], "t,true_q,true_p,filt_q,filt_p,y_1,y_2,y_3");
        assert_eq!(lines.len(), 12);
        assert_eq!(lines[2].split(',').count(), 8);
    }

    #[test]
    fn snapshot_zero_time_and_seed_independence() {
        let m = presets::opo_model(1.0);
        let u_o = presets::observed_homodyne(&m);
        let v = Fixture::A.cov(1.0);
        let x0 = DVector::zeros(2);
        let s0 = evolve_snapshot(&m, &u_o, &v, &x0, 1e-3, 0.0, 1).unwrap();
        assert_eq!(s0.cov_path, vec![v.clone()]);
        assert_eq!(s0.mean_path, vec![x0.clone()]);
        let a = evolve_snapshot(&m, &u_o, &v, &x0, 1e-3, 0.8, 1).unwrap();
        let b = evolve_snapshot(&m, &u_o, &v, &x0, 1e-3, 0.8, 2).unwrap();
        assert_eq!(a.cov_path, b.cov_path);
        assert_ne!(a.mean_path, b.mean_path);
        assert_eq!(a.times.len(), 801);
    }

    #[test]
    fn fixture_a_fits_inside_evolved_state() {
        let m = presets::opo_model(1.0);
        let u_o = presets::observed_homodyne(&m);
        let x0 = DVector::zeros(2);
        for f in Fixture::ALL {
            let v = f.cov(1.0);
            let s = evolve_snapshot(&m, &u_o, &v, &x0, 1e-4, 0.8, 0).unwrap();
            let gap = s.cov_path.last().unwrap().matrix() - v.matrix();
            let e = linalg::min_eigenvalue(&linalg::symmetrize(&gap));
            if f == Fixture::A {
                assert!(e >= -1e-6, "{e}");
            } else {
                assert!(e < -1e-3, "{f:?} {e}");
            }
        }
    }

    #[test]
    fn ellipses() {
        let circle = GaussianState::new(DVector::zeros(2), CovMatrix::scaled_2x2(1.0, 1.0, 0.0, 1.0)).unwrap();
        for p in ellipse_points(&circle, 16).unwrap() {
            assert_abs_diff_eq!(p[0].hypot(p[1]), 1.0, epsilon = 1e-12);
        }
        let e = GaussianState::new(
            DVector::from_vec(vec![1.0, 0.0]),
            CovMatrix::scaled_2x2(1.0, 4.0, 0.0, 1.0),
        )
        .unwrap();
        let pts = ellipse_points(&e, 4).unwrap();
        assert_abs_diff_eq!(pts[0][0], 3.0, epsilon = 1e-12);
        assert_abs_diff_eq!(pts[1][1], 1.0, epsilon = 1e-12);
        // tilted: points satisfy x^T V^-1 x = 1 and the major axis follows the top eigenvector
        let vb = Fixture::B.cov(1.0);
        let inv = vb.matrix().clone().try_inverse().unwrap();
        let st = GaussianState::new(DVector::zeros(2), vb.clone()).unwrap();
        let pts = ellipse_points(&st, 360).unwrap();
        for p in &pts {
            let x = DVector::from_vec(vec![p[0], p[1]]);
            assert_abs_diff_eq!((x.transpose() * &inv * &x)[(0, 0)], 1.0, epsilon = 1e-10);
        }
        let far = pts.iter().max_by(|a, b| a[0].hypot(a[1]).total_cmp(&b[0].hypot(b[1]))).unwrap();
        let eig = vb.matrix().clone().symmetric_eigen();
        let top = if eig.eigenvalues[0] > eig.eigenvalues[1] { 0 } else { 1 };
        let axis = eig.eigenvectors.column(top);
        let cos = (far[0] * axis[0] + far[1] * axis[1]).abs() / far[0].hypot(far[1]);
        assert!(cos > 0.999, "{cos}");
    }
}
