//! `lgq` command-line front end.
//!
//! Exit codes: 0 success, 1 input error, 2 convergence error, 3 singular
//! matrix. Matrices are printed in units of ħ/2 with four decimals; JSON
//! output carries full precision, the parsed options and the model hash.

use std::ffi::OsString;
use std::fs::File;
use std::io::{self, BufWriter, Write};
use std::path::{Path, PathBuf};

use clap::{Args, Parser, Subcommand};
use nalgebra::{DMatrix, DVector};
use serde::Serialize;
use serde_json::{json, Value};

use crate::config::LoadedModel;
use crate::error::{Error, Result};
use crate::linalg;
use crate::model::{CovMatrix, GaussianState, Unravelling};
use crate::presets::Fixture;
use crate::realizability::{param_to_cov, Classifier, PutativeParams, DEFAULT_TOL};
use crate::riccati::{
    filtered_rhs, realizability_residual, retrofiltered_rhs, true_steady, SteadySolveConfig, SteadyStates,
};
use crate::smoothing::{smoothed_cov, smoothed_det_normalized, theorem_b_check, theorem_c_check};
use crate::sweep::{homodyne_boundary, sweep_grid, write_boundary_csv, write_sweep_csv, GridSpec};
use crate::trajectory::{
    default_burn_in, ellipse_points, evolve_snapshot, innovation_covariance, mixture_statistic, SimulationSpec,
    Simulator,
};

#[derive(Debug, Parser)]
#[command(name = "lgq", version, about = "Filtering, smoothing and realizability for linear Gaussian quantum systems")]
pub struct Cli {
    #[command(subcommand)]
    pub command: Command,
}

#[derive(Debug, Subcommand)]
pub enum Command {
    /// Steady filtered and retrofiltered covariances.
    Steady {
        #[command(flatten)]
        common: Common,
        #[command(flatten)]
        solver: SolverArgs,
    },
    /// Classify a putative true covariance.
    Classify {
        #[command(flatten)]
        common: Common,
        #[command(flatten)]
        solver: SolverArgs,
        #[command(flatten)]
        source: Source,
    },
    /// Smoothed covariance for a putative true covariance.
    Smooth {
        #[command(flatten)]
        common: Common,
        #[command(flatten)]
        solver: SolverArgs,
        #[command(flatten)]
        source: Source,
    },
    /// Scan pure single-mode covariances over a (gamma, delta) grid; CSV output.
    Sweep {
        #[command(flatten)]
        common: Common,
        #[command(flatten)]
        solver: SolverArgs,
        /// `glo:ghi:gn,dlo:dhi:dn`; default 0.05:1.2:200,-0.9:0.9:200.
        #[arg(long)]
        grid: Option<String>,
    },
    /// True covariances from unobserved homodyne detection over phases in [0, π); CSV output.
    Boundary {
        #[command(flatten)]
        common: Common,
        #[command(flatten)]
        solver: SolverArgs,
        #[arg(long, default_value_t = 32)]
        n_phases: usize,
    },
    /// Covariance-evolution ellipses for the four OPO test covariances.
    Fig2 {
        #[command(flatten)]
        common: Common,
        /// Comma-separated fixture labels.
        #[arg(long, default_value = "a,b,c,d")]
        fixtures: String,
        #[arg(long, default_value_t = 1e-3)]
        dt: f64,
        #[arg(long, default_value_t = 0.8)]
        duration: f64,
        #[arg(long, default_value_t = 0)]
        seed: u64,
        #[arg(long, default_value_t = 100)]
        n_points: usize,
        /// Directory for `fig2_<label>.csv`.
        #[arg(long)]
        out_dir: Option<PathBuf>,
    },
    /// Simulate observed and unobserved records; report the mixture statistic.
    Simulate {
        #[command(flatten)]
        common: Common,
        /// Unobserved unravelling name.
        #[arg(long, default_value = "homodyne:-pi/8")]
        true_unravelling: String,
        #[arg(long, default_value_t = 100.0)]
        duration: f64,
        #[arg(long, default_value_t = 1e-3)]
        dt: f64,
        #[arg(long, default_value_t = 42)]
        seed: u64,
        #[arg(long, default_value_t = 1)]
        n_traj: usize,
        /// Defaults to ten slowest damping times.
        #[arg(long)]
        burn_in: Option<f64>,
        /// Directory for `traj_<i>.csv`.
        #[arg(long)]
        out_dir: Option<PathBuf>,
    },
}

#[derive(Debug, Clone, Args, Serialize)]
pub struct Common {
    /// Model JSON file or the preset name `opo`.
    #[arg(long, default_value = "opo")]
    pub model: String,
    /// Observed unravelling name.
    #[arg(long, default_value = "observed")]
    pub unravelling: String,
    /// Eigenvalue tolerance; default 1e-8·ħ.
    #[arg(long)]
    pub tol: Option<f64>,
    /// Print JSON instead of text.
    #[arg(long)]
    pub json: bool,
    /// Output file (JSON, or CSV for sweep and boundary).
    #[arg(long)]
    pub out: Option<PathBuf>,
}

#[derive(Debug, Clone, Args, Serialize)]
pub struct SolverArgs {
    /// Euler step of the steady-state solver.
    #[arg(long, default_value_t = 1e-4)]
    pub dt: f64,
    /// Solver cutoff time; default 50 slowest damping times.
    #[arg(long)]
    pub t_max: Option<f64>,
    /// Residual Frobenius-norm threshold.
    #[arg(long, default_value_t = 1e-10)]
    pub residual_tol: f64,
}

impl SolverArgs {
    fn config(&self) -> SteadySolveConfig {
        SteadySolveConfig {
            dt: self.dt,
            t_max: self.t_max,
            tol: self.residual_tol,
        }
    }
}

/// Where the putative true covariance comes from; exactly one source.
#[derive(Debug, Clone, Args, Serialize)]
pub struct Source {
    /// JSON file holding the matrix rows in absolute units.
    #[arg(long)]
    pub cov_file: Option<PathBuf>,
    /// Pure single-mode covariance with V_pp = (ħ/2)γ and q-p correlation δ.
    #[arg(long, requires = "delta")]
    pub gamma: Option<f64>,
    #[arg(long, requires = "gamma", allow_hyphen_values = true)]
    pub delta: Option<f64>,
    /// OPO test covariance a, b, c or d (as printed).
    #[arg(long)]
    pub fixture: Option<String>,
    /// Steady true covariance for this unobserved unravelling.
    #[arg(long)]
    pub true_unravelling: Option<String>,
}

impl Source {
    fn resolve(&self, loaded: &LoadedModel, u_o: &Unravelling, cfg: &SteadySolveConfig) -> Result<CovMatrix> {
        let chosen = [
            self.cov_file.is_some(),
            self.gamma.is_some(),
            self.fixture.is_some(),
            self.true_unravelling.is_some(),
        ]
        .iter()
        .filter(|b| **b)
        .count();
        if chosen != 1 {
            return Err(Error::Input(
                "give exactly one of --cov-file, --gamma/--delta, --fixture, --true-unravelling".into(),
            ));
        }
        let v = if let Some(path) = &self.cov_file {
            let rows: Vec<Vec<f64>> = serde_json::from_str(&std::fs::read_to_string(path)?)?;
            CovMatrix::from_rows(&rows)?
        } else if let (Some(g), Some(d)) = (self.gamma, self.delta) {
            param_to_cov(&PutativeParams::new(g, d)?, &loaded.model)?
        } else if let Some(label) = &self.fixture {
            if loaded.model.n_modes() != 1 {
                return Err(Error::Input("fixtures are single-mode".into()));
            }
            Fixture::parse(label)
                .ok_or_else(|| Error::Input(format!("unknown fixture {label:?}; use a, b, c or d")))?
                .cov(loaded.model.hbar())
        } else {
            let name = self.true_unravelling.as_deref().expect("checked above");
            true_steady(&loaded.model, u_o, loaded.unravelling(name)?, cfg)?
        };
        if v.dim() != loaded.model.dim() {
            return Err(Error::Input(format!(
                "covariance is {0}x{0} but the model has dimension {1}",
                v.dim(),
                loaded.model.dim()
            )));
        }
        Ok(v)
    }
}

/// Exit code for an error.
pub fn exit_code(e: &Error) -> i32 {
    match e {
        Error::Convergence { .. } | Error::Numeric(_) => 2,
        Error::Singular { .. } => 3,
        _ => 1,
    }
}

/// Parses `args`, runs the command and returns the process exit code.
pub fn main_with_args<I, T>(args: I) -> i32
where
    I: IntoIterator<Item = T>,
    T: Into<OsString> + Clone,
{
    let cli = match Cli::try_parse_from(args) {
        Ok(c) => c,
        Err(e) => {
            let _ = e.print();
            return if e.use_stderr() { 1 } else { 0 };
        }
    };
    match run(cli) {
        Ok(()) => 0,
        Err(Error::Io(e)) if e.kind() == io::ErrorKind::BrokenPipe => 0,
        Err(e) => {
            eprintln!("error: {e}");
            exit_code(&e)
        }
    }
}

struct Ctx {
    loaded: LoadedModel,
    observed: Unravelling,
    tol: f64,
}

impl Ctx {
    fn new(common: &Common) -> Result<Self> {
        let loaded = LoadedModel::load(&common.model).map_err(|e| match e {
            Error::Io(_) | Error::Json(_) => Error::Input(format!("model {:?}: {e}", common.model)),
            other => other,
        })?;
        let observed = loaded.unravelling(&common.unravelling)?.clone();
        let tol = common.tol.unwrap_or(DEFAULT_TOL * loaded.model.hbar());
        Ok(Self { loaded, observed, tol })
    }

    fn half(&self) -> f64 {
        self.loaded.model.hbar() / 2.0
    }

    fn envelope<C: Serialize>(&self, command: &str, config: &C, result: Value) -> Value {
        json!({
            "command": command,
            "config": config,
            "model_sha256": self.loaded.content_hash(),
            "result": result,
        })
    }
}

fn format_matrix(name: &str, m: &DMatrix<f64>, unit: f64) -> String {
    let mut s = format!("{name} (units of ħ/2):\n");
    for i in 0..m.nrows() {
        let row: Vec<String> = (0..m.ncols()).map(|j| format!("{:>9.4}", m[(i, j)] / unit)).collect();
        s.push_str(&format!("  [{}]\n", row.join(" ")));
    }
    s
}

fn emit(common: &Common, doc: &Value, text: &str) -> Result<()> {
    if let Some(path) = &common.out {
        write_json(path, doc)?;
    }
    let mut out = io::stdout().lock();
    if common.json {
        writeln!(out, "{}", serde_json::to_string_pretty(doc)?)?;
    } else {
        out.write_all(text.as_bytes())?;
    }
    out.flush()?;
    Ok(())
}

fn write_json(path: &Path, doc: &Value) -> Result<()> {
    let mut f = BufWriter::new(File::create(path)?);
    serde_json::to_writer_pretty(&mut f, doc)?;
    writeln!(f)?;
    Ok(())
}

fn csv_sink(out: &Option<PathBuf>) -> Result<Box<dyn Write>> {
    Ok(match out {
        Some(p) => Box::new(BufWriter::new(File::create(p)?)),
        None => Box::new(BufWriter::new(io::stdout().lock())),
    })
}

pub fn run(cli: Cli) -> Result<()> {
    match cli.command {
        Command::Steady { common, solver } => cmd_steady(&common, &solver),
        Command::Classify { common, solver, source } => cmd_classify(&common, &solver, &source),
        Command::Smooth { common, solver, source } => cmd_smooth(&common, &solver, &source),
        Command::Sweep { common, solver, grid } => cmd_sweep(&common, &solver, grid.as_deref()),
        Command::Boundary { common, solver, n_phases } => cmd_boundary(&common, &solver, n_phases),
        Command::Fig2 {
            common,
            fixtures,
            dt,
            duration,
            seed,
            n_points,
            out_dir,
        } => cmd_fig2(&common, &fixtures, dt, duration, seed, n_points, out_dir.as_deref()),
        Command::Simulate {
            common,
            true_unravelling,
            duration,
            dt,
            seed,
            n_traj,
            burn_in,
            out_dir,
        } => cmd_simulate(
            &common,
            &true_unravelling,
            SimulationSpec::new(duration, dt, seed),
            n_traj,
            burn_in,
            out_dir.as_deref(),
        ),
    }
}

fn cmd_steady(common: &Common, solver: &SolverArgs) -> Result<()> {
    let ctx = Ctx::new(common)?;
    let cfg = solver.config();
    let model = &ctx.loaded.model;
    let steady = SteadyStates::solve(model, &ctx.observed, &cfg)?;
    let rf = filtered_rhs(model, &ctx.observed, steady.filtered.matrix())?.norm();
    let rr = retrofiltered_rhs(model, &ctx.observed, steady.retrofiltered.matrix())?.norm();
    let result = json!({
        "filtered": steady.filtered,
        "retrofiltered": steady.retrofiltered,
        "filtered_residual": rf,
        "retrofiltered_residual": rr,
        "unconditioned": steady.unconditioned,
    });
    let mut text = format_matrix("V_F", steady.filtered.matrix(), ctx.half());
    text += &format!("  residual {rf:.3e}\n");
    text += &format_matrix("V_R", steady.retrofiltered.matrix(), ctx.half());
    text += &format!("  residual {rr:.3e}\n");
    let b = &steady.unconditioned;
    if b.is_fully_finite() {
        text += &format_matrix("V_ss", b.full_cov().expect("finite").matrix(), ctx.half());
    } else {
        text += &format!(
            "V_ss: unbounded along {} direction(s); finite on a {}-dimensional subspace\n",
            b.unbounded_directions.ncols(),
            b.finite_basis.ncols()
        );
    }
    emit(common, &ctx.envelope("steady", &json!({"common": common, "solver": solver}), result), &text)
}

fn cmd_classify(common: &Common, solver: &SolverArgs, source: &Source) -> Result<()> {
    let ctx = Ctx::new(common)?;
    let cfg = solver.config();
    let model = &ctx.loaded.model;
    let v = source.resolve(&ctx.loaded, &ctx.observed, &cfg)?;
    let cls = Classifier::new(model, &ctx.observed, &cfg)?.with_tol(ctx.tol);
    let report = cls.classify(&v)?;
    let residual = realizability_residual(&v, model, &ctx.observed)?;

    let mut text = format_matrix("V_T", v.matrix(), ctx.half());
    let purity = report.purity.map_or_else(|| "undefined".to_string(), |p| format!("{p:.6}"));
    for (name, ok) in [
        ("S-class (uncertainty)", report.uncertainty_ok),
        ("fits unconditioned", report.fits_unconditioned),
        ("fits filtered", report.fits_filtered),
        ("realizable", report.realizable),
        ("extremal", report.extremal),
    ] {
        text += &format!("  {name:<22} {ok}\n");
    }
    text += &format!("  {:<22} {purity}\n", "purity");
    for (k, e) in &report.min_eigs {
        text += &format!("  min eig {k:<14} {e:+.3e}\n");
    }
    let result = json!({"cov": v, "report": report, "residual": DMatrixRows(&residual)});
    emit(
        common,
        &ctx.envelope("classify", &json!({"common": common, "solver": solver, "source": source}), result),
        &text,
    )
}

struct DMatrixRows<'a>(&'a DMatrix<f64>);

impl Serialize for DMatrixRows<'_> {
    fn serialize<S: serde::Serializer>(&self, s: S) -> std::result::Result<S::Ok, S::Error> {
        crate::model::matrix_to_rows(self.0).serialize(s)
    }
}

fn cmd_smooth(common: &Common, solver: &SolverArgs, source: &Source) -> Result<()> {
    let ctx = Ctx::new(common)?;
    let cfg = solver.config();
    let model = &ctx.loaded.model;
    let v = source.resolve(&ctx.loaded, &ctx.observed, &cfg)?;
    let steady = SteadyStates::solve(model, &ctx.observed, &cfg)?;
    let vs = smoothed_cov(&steady.filtered, &steady.retrofiltered, &v)?;
    let det = smoothed_det_normalized(&vs, model);
    let b = theorem_b_check(model, &steady, &v, ctx.tol)?;
    let c = theorem_c_check(&steady, &v, ctx.tol)?;
    let cls = Classifier::from_steady(model, &ctx.observed, steady, ctx.tol);
    let premise = cls.classify(&v)?;

    let mut text = format_matrix("V_T", v.matrix(), ctx.half());
    text += &format_matrix("V_S", vs.matrix(), ctx.half());
    text += &format!("  (2/ħ)^2N det V_S      {det:.6}\n");
    text += &format!("  V_S S-class            {}\n", b.conclusion);
    text += &format!("  V_S fits filtered      {}\n", c.fits_filtered);
    text += &format!("  V_S fits unconditioned {}\n", c.fits_unconditioned);
    text += &format!("  V_T fits unconditioned {}\n", premise.fits_unconditioned);
    text += &format!("  V_T realizable         {}\n", premise.realizable);
    let result = json!({
        "cov": v,
        "smoothed": vs,
        "det_normalized": det,
        "s_class": b,
        "smoothed_fit": c,
        "premise": premise,
    });
    emit(
        common,
        &ctx.envelope("smooth", &json!({"common": common, "solver": solver, "source": source}), result),
        &text,
    )
}

fn cmd_sweep(common: &Common, solver: &SolverArgs, grid: Option<&str>) -> Result<()> {
    let ctx = Ctx::new(common)?;
    let grid = match grid {
        Some(g) => g.parse()?,
        None => GridSpec::default(),
    };
    let cls = Classifier::new(&ctx.loaded.model, &ctx.observed, &solver.config())?.with_tol(ctx.tol);
    let rows = sweep_grid(&cls, &grid)?;
    let mut sink = csv_sink(&common.out)?;
    write_sweep_csv(&mut sink, &rows, &ctx.loaded.content_hash(), ctx.tol, &grid)?;
    sink.flush()?;
    let count = |f: &dyn Fn(&crate::sweep::SweepRow) -> bool| rows.iter().filter(|r| f(r)).count();
    eprintln!(
        "{} points: {} fit unconditioned, {} fit filtered, {} realizable, {} S-class smoothed, {} singular",
        rows.len(),
        count(&|r| r.report.fits_unconditioned),
        count(&|r| r.report.fits_filtered),
        count(&|r| r.report.realizable),
        count(&|r| r.det_vs.is_some_and(|d| d >= 1.0)),
        count(&|r| r.singular)
    );
    Ok(())
}

fn cmd_boundary(common: &Common, solver: &SolverArgs, n_phases: usize) -> Result<()> {
    let ctx = Ctx::new(common)?;
    let results = homodyne_boundary(&ctx.loaded.model, &ctx.observed, n_phases, &solver.config(), ctx.tol)?;
    let mut points = Vec::with_capacity(results.len());
    let mut first_err = None;
    for (j, r) in results.into_iter().enumerate() {
        match r {
            Ok(p) => points.push(p),
            Err(e) => {
                eprintln!("phase {j}: {e}");
                first_err.get_or_insert(e);
            }
        }
    }
    let mut sink = csv_sink(&common.out)?;
    write_boundary_csv(&mut sink, &points, &ctx.loaded.content_hash(), ctx.tol)?;
    sink.flush()?;
    match first_err {
        Some(e) => Err(e),
        None => Ok(()),
    }
}

fn cmd_fig2(
    common: &Common,
    fixtures: &str,
    dt: f64,
    duration: f64,
    seed: u64,
    n_points: usize,
    out_dir: Option<&Path>,
) -> Result<()> {
    let ctx = Ctx::new(common)?;
    let model = &ctx.loaded.model;
    if model.n_modes() != 1 {
        return Err(Error::Input("fig2 needs a single-mode model".into()));
    }
    let labels: Vec<Fixture> = fixtures
        .split(',')
        .map(|s| Fixture::parse(s).ok_or_else(|| Error::Input(format!("unknown fixture {s:?}"))))
        .collect::<Result<_>>()?;
    let steady = SteadyStates::solve(model, &ctx.observed, &SteadySolveConfig::default())?;
    let origin = DVector::zeros(2);
    if let Some(dir) = out_dir {
        std::fs::create_dir_all(dir)?;
    }

    let mut panels = Vec::new();
    let mut text = String::new();
    for f in labels {
        let v = f.cov(model.hbar());
        let snap = evolve_snapshot(model, &ctx.observed, &v, &origin, dt, duration, seed)?;
        let evolved = snap.final_state()?;
        let gap = linalg::symmetrize(&(evolved.cov.matrix() - v.matrix()));
        let min_eig = linalg::min_eigenvalue(&gap);
        let fits = min_eig >= -ctx.tol;
        text += &format!("({}) min eig of V'(T) - V_T = {min_eig:+.4e}  fits inside evolved: {fits}\n", f.label());

        if let Some(dir) = out_dir {
            let mut curves: Vec<(&str, GaussianState)> = vec![
                ("initial", GaussianState::new(origin.clone(), v.clone())?),
                ("translated", GaussianState::new(evolved.mean.clone(), v.clone())?),
                ("evolved", evolved.clone()),
                ("filtered", GaussianState::new(evolved.mean.clone(), steady.filtered.clone())?),
            ];
            if let Some(full) = steady.unconditioned.full_cov() {
                curves.push(("unconditioned", GaussianState::new(origin.clone(), full)?));
            }
            let path = dir.join(format!("fig2_{}.csv", f.label()));
            let mut w = BufWriter::new(File::create(&path)?);
            writeln!(
                w,
                "# model_sha256={}, fixture={}, dt={dt}, T={duration}, seed={seed}",
                ctx.loaded.content_hash(),
                f.label()
            )?;
            writeln!(w, "curve,x,y")?;
            for (name, st) in &curves {
                for p in ellipse_points(st, n_points)? {
                    writeln!(w, "{name},{},{}", p[0], p[1])?;
                }
            }
            w.flush()?;
        }
        panels.push(json!({
            "fixture": f.label(),
            "initial": v,
            "evolved": evolved.cov,
            "evolved_mean": evolved.mean.as_slice(),
            "min_eig": min_eig,
            "fits_inside_evolved": fits,
        }));
    }
    let config = json!({"common": common, "fixtures": fixtures, "dt": dt, "duration": duration,
        "seed": seed, "n_points": n_points, "out_dir": out_dir});
    emit(common, &ctx.envelope("fig2", &config, json!({ "panels": panels })), &text)
}

fn cmd_simulate(
    common: &Common,
    true_unravelling: &str,
    spec: SimulationSpec,
    n_traj: usize,
    burn_in: Option<f64>,
    out_dir: Option<&Path>,
) -> Result<()> {
    if n_traj == 0 {
        return Err(Error::Input("--n-traj must be at least 1".into()));
    }
    let ctx = Ctx::new(common)?;
    let model = &ctx.loaded.model;
    let u_u = ctx.loaded.unravelling(true_unravelling)?;
    let cfg = SteadySolveConfig::default();
    let sim = Simulator::new(model, &ctx.observed, u_u, &cfg)?;
    let steady = SteadyStates::solve(model, &ctx.observed, &cfg)?;
    let burn_in = burn_in.unwrap_or_else(|| default_burn_in(model));
    let bundles = sim.ensemble(&spec, n_traj)?;

    let dim = model.dim();
    let mut mix = DMatrix::zeros(dim, dim);
    let mut innov = DMatrix::zeros(ctx.observed.channels(), ctx.observed.channels());
    for (i, b) in bundles.iter().enumerate() {
        mix += mixture_statistic(b, burn_in)?;
        innov += innovation_covariance(b, burn_in)?;
        if let Some(dir) = out_dir {
            std::fs::create_dir_all(dir)?;
            let mut w = BufWriter::new(File::create(dir.join(format!("traj_{i}.csv")))?);
            b.write_csv(&mut w)?;
            w.flush()?;
        }
    }
    mix /= n_traj as f64;
    innov /= n_traj as f64;
    let expected = steady.filtered.matrix() - sim.true_cov().matrix();
    let rel = (&mix - &expected).norm() / expected.norm().max(f64::MIN_POSITIVE);

    let mut text = format_matrix("mixture statistic", &mix, ctx.half());
    text += &format_matrix("V_F - V_T", &expected, ctx.half());
    text += &format!("  relative Frobenius error {rel:.4}\n");
    text += &format!("  innovation covariance / dt {:.4}\n", innov.trace() / innov.nrows().max(1) as f64);
    let result = json!({
        "mixture_statistic": DMatrixRows(&mix),
        "expected": DMatrixRows(&expected),
        "relative_error": rel,
        "innovation_covariance": DMatrixRows(&innov),
        "true_cov": sim.true_cov(),
        "burn_in": burn_in,
    });
    let config = json!({"common": common, "true_unravelling": true_unravelling, "spec": spec,
        "n_traj": n_traj, "burn_in": burn_in, "out_dir": out_dir, "rng": "ChaCha8Rng, seed ^ index"});
    emit(common, &ctx.envelope("simulate", &config, result), &text)
}
