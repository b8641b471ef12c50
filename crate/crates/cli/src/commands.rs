use std::fs::File;
use std::io::{BufWriter, Write};
use std::path::PathBuf;

use brownlab::brown_measure::{self, Bounds};
use brownlab::hj_engine::{self, HjSolver};
use brownlab::moment_engine::{self, StarWord};
use brownlab::pushforward_map::{self, PushMap};
use brownlab::rmt_lab::{self, Scheme, SimConfig};
use brownlab::spectral_domain::{build_profile, Arc, DomainProfile, Location};
use clap::{Args, ValueEnum};
use num_complex::Complex64;
use serde::Serialize;
use serde_json::json;

use crate::config::{parse_bounds, parse_complex, CommonArgs, RunConfig};
use crate::CliError;

/// Margin added around the bounding box of Σ_{s,τ} for automatic raster bounds.
const AUTO_MARGIN: f64 = 0.1;
/// Polyline resolution used to find automatic raster bounds.
const AUTO_POLYLINE: usize = 720;

type Outputs = Vec<PathBuf>;

#[derive(Debug, Args)]
pub struct DomainArgs {
    #[command(flatten)]
    pub common: CommonArgs,
    /// Base grid size of the boundary profile.
    #[arg(long, default_value_t = 1024)]
    pub n: usize,
    /// Angles on each arc of the boundary polyline.
    #[arg(long, default_value_t = 720)]
    pub polyline: usize,
}

#[derive(Debug, Args)]
pub struct RasterArgs {
    /// Cells along x.
    #[arg(long, default_value_t = 256)]
    pub nx: usize,
    /// Cells along y (defaults to nx).
    #[arg(long)]
    pub ny: Option<usize>,
    /// Raster window "x_min,x_max,y_min,y_max"; defaults to the padded bounding box of the domain.
    #[arg(long, value_parser = parse_bounds, allow_hyphen_values = true)]
    pub bounds: Option<[f64; 4]>,
    /// Base grid size of the boundary profile.
    #[arg(long, default_value_t = 1024)]
    pub grid: usize,
}

#[derive(Debug, Args)]
pub struct DensityArgs {
    #[command(flatten)]
    pub common: CommonArgs,
    #[command(flatten)]
    pub raster: RasterArgs,
}

#[derive(Debug, Args)]
pub struct SampleArgs {
    #[command(flatten)]
    pub common: CommonArgs,
    /// Number of draws from the Brown measure.
    #[arg(long, default_value_t = 10_000)]
    pub n: usize,
    /// Base grid size of the boundary profile.
    #[arg(long, default_value_t = 1024)]
    pub grid: usize,
}

#[derive(Debug, Args)]
pub struct PotentialArgs {
    #[command(flatten)]
    pub common: CommonArgs,
    #[command(flatten)]
    pub raster: RasterArgs,
    /// Regularization ε > 0.
    #[arg(long, default_value_t = 0.1)]
    pub eps: f64,
}

#[derive(Debug, Args)]
pub struct PdeCheckArgs {
    #[command(flatten)]
    pub common: CommonArgs,
    /// Number of interior test points.
    #[arg(long, default_value_t = 10)]
    pub n: usize,
    /// Finite-difference step.
    #[arg(long, default_value_t = 1e-3)]
    pub h: f64,
    /// Smallest ε used for test points.
    #[arg(long, default_value_t = 0.05)]
    pub eps_min: f64,
    /// Largest ε used for test points.
    #[arg(long, default_value_t = 0.5)]
    pub eps_max: f64,
    /// Direction ṡ of the (s, τ) path in the r-equation.
    #[arg(long, default_value_t = 1.0)]
    pub s_dot: f64,
    /// Direction τ̇ of the (s, τ) path in the r-equation.
    #[arg(long, default_value = "0", value_parser = parse_complex)]
    pub tau_dot: Complex64,
    /// Base grid size of the boundary profile.
    #[arg(long, default_value_t = 1024)]
    pub grid: usize,
}

#[derive(Debug, Args)]
pub struct PushforwardArgs {
    #[command(flatten)]
    pub common: CommonArgs,
    /// Number of draws from μ_{s,s}.
    #[arg(long, default_value_t = 100_000)]
    pub n: usize,
    /// Equal-mass bins per strip axis.
    #[arg(long, default_value_t = 10)]
    pub bins: usize,
    /// Base grid size of the boundary profiles.
    #[arg(long, default_value_t = 1024)]
    pub grid: usize,
}

#[derive(Debug, Args)]
pub struct MomentsArgs {
    #[command(flatten)]
    pub common: CommonArgs,
    /// Longest word in the hierarchy.
    #[arg(long, default_value_t = 4)]
    pub max_len: usize,
    /// RK4 steps over [0, r_max].
    #[arg(long, default_value_t = 200)]
    pub steps: usize,
    /// Final time r; the trajectory ends at b_{r s, r τ}.
    #[arg(long, default_value_t = 1.0)]
    pub r_max: f64,
    /// Words to export, e.g. "+*" or "plain,star"; defaults to every canonical word.
    #[arg(long = "word")]
    pub words: Vec<String>,
}

#[derive(Debug, Args)]
pub struct SimArgs {
    /// Matrix dimension N.
    #[arg(long, default_value_t = 200)]
    pub n: usize,
    /// Independent samples.
    #[arg(long, default_value_t = 10)]
    pub samples: usize,
    /// Time steps per path.
    #[arg(long, default_value_t = 200)]
    pub steps: usize,
    /// Time discretization of the matrix SDE.
    #[arg(long, value_enum, default_value_t = SchemeArg::Euler)]
    pub scheme: SchemeArg,
    /// Disable the coupled half-step extrapolation of Monte-Carlo averages.
    #[arg(long)]
    pub no_extrapolation: bool,
}

impl SimArgs {
    fn config(&self, seed: u64) -> Result<SimConfig, CliError> {
        let scheme = match self.scheme {
            SchemeArg::Euler => Scheme::Euler,
            SchemeArg::Exponential => Scheme::Exponential,
        };
        let cfg = SimConfig::new(self.n, self.steps, self.samples, seed)?
            .with_scheme(scheme)
            .with_extrapolation(!self.no_extrapolation);
        cfg.validate()?;
        Ok(cfg)
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, ValueEnum)]
pub enum SchemeArg {
    Euler,
    Exponential,
}

#[derive(Debug, Args)]
pub struct SimulateArgs {
    #[command(flatten)]
    pub common: CommonArgs,
    #[command(flatten)]
    pub sim: SimArgs,
    /// Histogram cells per axis for the density comparison.
    #[arg(long, default_value_t = 20)]
    pub bins: usize,
    /// Raster refinement per histogram cell.
    #[arg(long, default_value_t = 4)]
    pub refine: usize,
    /// Histogram window "x_min,x_max,y_min,y_max"; defaults to the padded bounding box of the domain.
    #[arg(long, value_parser = parse_bounds, allow_hyphen_values = true)]
    pub bounds: Option<[f64; 4]>,
    /// Base grid size of the boundary profile.
    #[arg(long, default_value_t = 1024)]
    pub grid: usize,
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, ValueEnum)]
pub enum CompareKind {
    /// Monte-Carlo regularized log potential against the characteristic solver.
    Potential,
    /// Moment hierarchy against Monte-Carlo ∗-moments.
    Moments,
    /// Moments at (s + s′, τ + τ′) against products of independent factors.
    Factorization,
}

#[derive(Debug, Args)]
pub struct CompareArgs {
    #[command(flatten)]
    pub common: CommonArgs,
    #[command(flatten)]
    pub sim: SimArgs,
    /// Which prediction to test.
    #[arg(long, value_enum, default_value_t = CompareKind::Potential)]
    pub kind: CompareKind,
    /// Evaluation points for the potential; defaults to draws inside and points outside the domain.
    #[arg(long = "at", value_parser = parse_complex, allow_hyphen_values = true)]
    pub at: Vec<Complex64>,
    /// Automatic interior and exterior points, each.
    #[arg(long, default_value_t = 5)]
    pub points: usize,
    /// Regularization ε for the potential.
    #[arg(long, default_value_t = 0.1)]
    pub eps: f64,
    /// Longest word for the moment comparisons.
    #[arg(long, default_value_t = 4)]
    pub max_len: usize,
    /// RK4 steps for the moment hierarchy.
    #[arg(long, default_value_t = 200)]
    pub ode_steps: usize,
    /// s′ of the second factor.
    #[arg(long, default_value_t = 0.5)]
    pub s2: f64,
    /// τ′ of the second factor.
    #[arg(long, default_value = "0.3+0.2i", value_parser = parse_complex)]
    pub tau2: Complex64,
    /// Base grid size of the boundary profile.
    #[arg(long, default_value_t = 1024)]
    pub grid: usize,
}

fn csv_writer(path: &PathBuf) -> Result<csv::Writer<BufWriter<File>>, CliError> {
    Ok(csv::Writer::from_writer(BufWriter::new(File::create(path)?)))
}

fn write_json<T: Serialize>(path: &PathBuf, value: &T) -> Result<(), CliError> {
    let mut w = BufWriter::new(File::create(path)?);
    serde_json::to_writer_pretty(&mut w, value)?;
    w.write_all(b"\n")?;
    Ok(())
}

fn profile(cfg: &RunConfig, grid: usize) -> Result<DomainProfile, CliError> {
    Ok(build_profile(&cfg.measure, cfg.params, grid)?)
}

/// The bounding box of Σ_{s,τ} padded by [`AUTO_MARGIN`] of its larger side.
fn auto_bounds(prof: &DomainProfile) -> Result<Bounds, CliError> {
    let pts = prof.boundary_polyline(AUTO_POLYLINE)?;
    let (mut x0, mut x1, mut y0, mut y1) = (f64::INFINITY, f64::NEG_INFINITY, f64::INFINITY, f64::NEG_INFINITY);
    for (z, _) in &pts {
        x0 = x0.min(z.re);
        x1 = x1.max(z.re);
        y0 = y0.min(z.im);
        y1 = y1.max(z.im);
    }
    let pad = AUTO_MARGIN * (x1 - x0).max(y1 - y0);
    Ok(Bounds::new(x0 - pad, x1 + pad, y0 - pad, y1 + pad)?)
}

fn bounds_or_auto(given: Option<[f64; 4]>, prof: &DomainProfile) -> Result<Bounds, CliError> {
    match given {
        Some([a, b, c, d]) => Ok(Bounds::new(a, b, c, d)?),
        None => auto_bounds(prof),
    }
}

pub fn domain(args: &DomainArgs) -> Result<Outputs, CliError> {
    let cfg = RunConfig::from_args(&args.common)?;
    let prof = profile(&cfg, args.n)?;
    let nodes_path = cfg.path("domain.csv");
    let mut w = csv_writer(&nodes_path)?;
    w.write_record(["theta", "r_s", "I_s", "R_s", "phi_s", "delta", "v1", "v2"])?;
    for q in prof.nodes() {
        let (v1, v2) = prof.strip_of(q);
        w.serialize((q.theta, q.r_s, q.i_s, q.r_big, q.phi, q.delta, v1, v2))?;
    }
    w.flush()?;
    let boundary_path = cfg.path("boundary.csv");
    let mut w = csv_writer(&boundary_path)?;
    w.write_record(["x", "y", "arc"])?;
    for (z, arc) in prof.boundary_polyline(args.polyline)? {
        w.serialize((z.re, z.im, arc.name()))?;
    }
    w.flush()?;
    Ok(vec![nodes_path, boundary_path])
}

pub fn density(args: &DensityArgs) -> Result<Outputs, CliError> {
    let cfg = RunConfig::from_args(&args.common)?;
    let prof = profile(&cfg, args.raster.grid)?;
    let bounds = bounds_or_auto(args.raster.bounds, &prof)?;
    let ny = args.raster.ny.unwrap_or(args.raster.nx);
    let r = brown_measure::raster(&prof, bounds, args.raster.nx, ny)?;
    let csv_path = cfg.path("density.csv");
    let mut w = csv_writer(&csv_path)?;
    w.write_record(["x", "y", "density"])?;
    for j in 0..r.ny {
        for i in 0..r.nx {
            let z = r.centre(i, j);
            w.serialize((z.re, z.im, r.get(i, j)))?;
        }
    }
    w.flush()?;
    let pgm_path = cfg.path("density.pgm");
    std::fs::write(&pgm_path, r.to_pgm())?;
    Ok(vec![csv_path, pgm_path])
}

pub fn sample(args: &SampleArgs) -> Result<Outputs, CliError> {
    let cfg = RunConfig::from_args(&args.common)?;
    let prof = profile(&cfg, args.grid)?;
    let pts = brown_measure::sample(&prof, args.n, cfg.seed)?;
    let path = cfg.path("sample.csv");
    let mut w = csv_writer(&path)?;
    w.write_record(["x", "y"])?;
    for z in pts {
        w.serialize((z.re, z.im))?;
    }
    w.flush()?;
    Ok(vec![path])
}

pub fn potential(args: &PotentialArgs) -> Result<Outputs, CliError> {
    let cfg = RunConfig::from_args(&args.common)?;
    if !(args.eps > 0.0 && args.eps.is_finite()) {
        return Err(CliError::Validation(format!("--eps must be positive, got {}", args.eps)));
    }
    let solver = HjSolver::from_profile(profile(&cfg, args.raster.grid)?);
    let bounds = bounds_or_auto(args.raster.bounds, solver.profile())?;
    let (nx, ny) = (args.raster.nx, args.raster.ny.unwrap_or(args.raster.nx));
    if nx == 0 || ny == 0 {
        return Err(CliError::Validation("raster needs at least one cell per axis".into()));
    }
    let (dx, dy) = ((bounds.x_max - bounds.x_min) / nx as f64, (bounds.y_max - bounds.y_min) / ny as f64);
    let path = cfg.path("potential.csv");
    let mut w = csv_writer(&path)?;
    w.write_record(["x", "y", "eps", "S", "dS_dx", "dS_dy", "dS_deps"])?;
    for j in 0..ny {
        for i in 0..nx {
            let z = Complex64::new(bounds.x_min + (i as f64 + 0.5) * dx, bounds.y_min + (j as f64 + 0.5) * dy);
            let p = solver.evaluate_s(z, args.eps)?;
            let (gx, gy) = p.grad_xy();
            w.serialize((z.re, z.im, args.eps, p.s_value, gx, gy, p.grad_eps))?;
        }
    }
    w.flush()?;
    Ok(vec![path])
}

/// The fractional parts of k·(golden ratio), a low-discrepancy sequence in [0, 1).
fn golden(k: usize) -> f64 {
    let g = 0.5 * (5f64.sqrt() - 1.0);
    (k as f64 * g).fract()
}

pub fn pde_check(args: &PdeCheckArgs) -> Result<Outputs, CliError> {
    let cfg = RunConfig::from_args(&args.common)?;
    if !(args.eps_min > args.h && args.eps_max >= args.eps_min) {
        return Err(CliError::Validation(format!(
            "need h < eps_min ≤ eps_max, got h = {}, eps in [{}, {}]",
            args.h, args.eps_min, args.eps_max
        )));
    }
    let solver = HjSolver::from_profile(profile(&cfg, args.grid)?);
    let pts = brown_measure::sample(solver.profile(), args.n, cfg.seed)?;
    let path = cfg.path("pde_check.csv");
    let mut w = csv_writer(&path)?;
    w.write_record(["lambda_x", "lambda_y", "eps", "residual_tau", "residual_r"])?;
    let (s, tau) = (cfg.params.s(), cfg.params.tau());
    for (k, z) in pts.into_iter().enumerate() {
        let eps = args.eps_min + (args.eps_max - args.eps_min) * golden(k + 1);
        let rt = solver.pde_residual_tau(z, eps, args.h)?;
        let rr = hj_engine::pde_residual_r(&cfg.measure, s, tau, args.s_dot, args.tau_dot, 0.0, z, eps, args.h)?;
        w.serialize((z.re, z.im, eps, rt, rr))?;
    }
    w.flush()?;
    Ok(vec![path])
}

pub fn pushforward(args: &PushforwardArgs) -> Result<Outputs, CliError> {
    let cfg = RunConfig::from_args(&args.common)?;
    let map = PushMap::new(&cfg.measure, cfg.params.s(), cfg.params.tau(), args.grid)?;
    let src = brown_measure::sample(map.source(), args.n, cfg.seed)?;
    let pairs_path = cfg.path("pushforward.csv");
    let mut w = csv_writer(&pairs_path)?;
    w.write_record(["src_x", "src_y", "dst_x", "dst_y"])?;
    for z in src {
        let t = map.phi_stau(z).unwrap_or(Complex64::new(f64::NAN, f64::NAN));
        w.serialize((z.re, z.im, t.re, t.im))?;
    }
    w.flush()?;
    let report = pushforward_map::verify_pushforward(&map, args.n, args.bins, cfg.seed)?;
    let report_path = cfg.path("pushforward.json");
    write_json(&report_path, &report)?;
    Ok(vec![pairs_path, report_path])
}

/// One exported word of the moment hierarchy.
#[derive(Debug, Serialize)]
struct WordTrajectory {
    word: String,
    /// Rows [r, Re tr, Im tr].
    trajectory: Vec<[f64; 3]>,
}

pub fn moments(args: &MomentsArgs) -> Result<Outputs, CliError> {
    let cfg = RunConfig::from_args(&args.common)?;
    let table = moment_engine::solve_hierarchy(cfg.params.s(), cfg.params.tau(), args.r_max, args.max_len, args.steps)?;
    let words: Vec<StarWord> = if args.words.is_empty() {
        table.words().to_vec()
    } else {
        args.words.iter().map(|w| StarWord::parse(w)).collect::<brownlab::Result<_>>()?
    };
    let mut out = Vec::with_capacity(words.len());
    for word in &words {
        let trajectory = table.trajectory(word)?.into_iter().map(|(r, z)| [r, z.re, z.im]).collect();
        out.push(WordTrajectory { word: word.to_string(), trajectory });
    }
    let path = cfg.path("moments.json");
    let mut w = BufWriter::new(File::create(&path)?);
    serde_json::to_writer(&mut w, &out)?;
    w.write_all(b"\n")?;
    Ok(vec![path])
}

pub fn simulate(args: &SimulateArgs) -> Result<Outputs, CliError> {
    let cfg = RunConfig::from_args(&args.common)?;
    let sim = args.sim.config(cfg.seed)?;
    let prof = profile(&cfg, args.grid)?;
    let bounds = bounds_or_auto(args.bounds, &prof)?;
    let cloud = rmt_lab::simulate_eigenvalues(&sim, &cfg.measure, cfg.params.s(), cfg.params.tau())?;
    let csv_path = cfg.path("eigenvalues.csv");
    std::fs::write(&csv_path, cloud.to_csv())?;
    let report = rmt_lab::eig_vs_density(&cloud, &prof, bounds, args.bins, args.refine)?;
    let report_path = cfg.path("simulate.json");
    write_json(&report_path, &report)?;
    Ok(vec![csv_path, report_path])
}

/// One point of the potential comparison.
#[derive(Debug, Serialize)]
struct PotentialRow {
    lambda: Complex64,
    eps: f64,
    region: &'static str,
    predicted: f64,
    estimate: f64,
    stderr: f64,
    sigma: f64,
}

/// Interior draws of μ_{s,τ} and points pushed radially outward beyond the outer boundary.
fn default_points(prof: &DomainProfile, k: usize, seed: u64) -> Result<Vec<Complex64>, CliError> {
    let mut pts = brown_measure::sample(prof, k, seed)?;
    let outer: Vec<Complex64> = prof
        .boundary_polyline(k.max(3))?
        .into_iter()
        .filter(|&(_, a)| a == Arc::Outer)
        .map(|(z, _)| z)
        .collect();
    for z in outer.into_iter().take(k) {
        let mut w = 1.25 * z;
        while prof.contains(w) != Location::Outside {
            w *= 1.25;
        }
        pts.push(w);
    }
    Ok(pts)
}

fn compare_potential(cfg: &RunConfig, args: &CompareArgs, sim: &SimConfig) -> Result<serde_json::Value, CliError> {
    if !(args.eps > 0.0 && args.eps.is_finite()) {
        return Err(CliError::Validation(format!("--eps must be positive, got {}", args.eps)));
    }
    let solver = HjSolver::from_profile(profile(cfg, args.grid)?);
    let pts = if args.at.is_empty() { default_points(solver.profile(), args.points, cfg.seed)? } else { args.at.clone() };
    let queries: Vec<(Complex64, f64)> = pts.iter().map(|&z| (z, args.eps)).collect();
    let (s, tau) = (cfg.params.s(), cfg.params.tau());
    let mc = rmt_lab::estimate_s_mc_many(sim, &cfg.measure, s, tau, &queries)?;
    let mut rows = Vec::with_capacity(pts.len());
    let mut max_sigma = 0.0f64;
    for (&z, &(estimate, stderr)) in pts.iter().zip(&mc) {
        let predicted = solver.evaluate_s(z, args.eps)?.s_value;
        let sigma = (estimate - predicted).abs() / stderr;
        max_sigma = max_sigma.max(sigma);
        let region = match solver.profile().contains(z) {
            Location::Inside => "inside",
            Location::Boundary => "boundary",
            Location::Outside => "outside",
        };
        rows.push(PotentialRow { lambda: z, eps: args.eps, region, predicted, estimate, stderr, sigma });
    }
    Ok(json!({ "kind": "potential", "points": rows, "max_sigma": max_sigma }))
}

pub fn compare(args: &CompareArgs) -> Result<Outputs, CliError> {
    let cfg = RunConfig::from_args(&args.common)?;
    let sim = args.sim.config(cfg.seed)?;
    let (s, tau) = (cfg.params.s(), cfg.params.tau());
    let report = match args.kind {
        CompareKind::Potential => compare_potential(&cfg, args, &sim)?,
        CompareKind::Moments => {
            let r = moment_engine::hierarchy_vs_mc(s, tau, args.max_len, args.ode_steps, &sim)?;
            json!({ "kind": "moments", "report": r })
        }
        CompareKind::Factorization => {
            brownlab::BrownParams::new(args.s2, args.tau2)?;
            let r = moment_engine::factorization_check(s, tau, args.s2, args.tau2, args.max_len, args.ode_steps, &sim)?;
            json!({ "kind": "factorization", "report": r })
        }
    };
    let path = cfg.path("compare.json");
    write_json(&path, &report)?;
    Ok(vec![path])
}
