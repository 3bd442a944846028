use std::io::{BufWriter, Write};
use std::path::{Path, PathBuf};
use std::process::ExitCode;

use anyhow::{bail, Context, Result};
use clap::{Args, Parser, Subcommand, ValueEnum};
use num_complex::Complex64;

use hspde_core::fracpow::{balakrishnan_forward, frac_power_eigen, frac_power_quadrature, FracPowerRequest};
use hspde_core::gamma::{mc_gamma_norm, FiniteRankOperator, TargetNorm};
use hspde_core::io::{read_trajectories, write_trajectories};
use hspde_core::regularity::{check_provenance, vertex_grid, verify_region_unchecked, Theorem};
use hspde_core::spectral::build_laplacian_system;
use hspde_core::{EigenSystem, SpectralDomain};

use hspde_harness::config::{resolve, ExperimentConfig, GConfig, Overrides, QueryConfig};
use hspde_harness::export::{export_plotdata, ExportKind};
use hspde_harness::pipeline::{self, classify, run_experiment, write_json, Estimates, Outcome};
use hspde_harness::presets::PRESETS;
use hspde_harness::tables;

#[derive(Parser)]
#[command(name = "hspde", version, about = "Simulate parabolic SPDEs and check Hölder regularity regions")]
struct Cli {
    /// Worker threads for replica simulation (default: logical cores).
    #[arg(long, global = true)]
    threads: Option<usize>,
    /// More logging (-v info, -vv debug).
    #[arg(short, long, global = true, action = clap::ArgAction::Count)]
    verbose: u8,
    #[command(subcommand)]
    command: Command,
}

#[derive(Subcommand)]
enum Command {
    /// Print the admissible region boundary (or its vertex grid) as CSV.
    Region(RegionArgs),
    /// Simulate an ensemble into an hspde-traj-1 container.
    Simulate(SimulateArgs),
    /// Estimate temporal and spatial exponents of a stored ensemble.
    Estimate(EstimateArgs),
    /// Check a stored ensemble against an admissible region.
    Verify(VerifyArgs),
    /// Monte-Carlo γ-radonifying norm of a finite-rank operator.
    GammaNorm(GammaArgs),
    /// Compare quadrature fractional powers with the eigen route.
    FracpowCheck(FracpowArgs),
    /// Full pipeline: build, hypotheses, simulate, estimate, verify.
    Run(RunArgs),
    /// List the shipped presets.
    Presets(PresetsArgs),
    /// Write plot-ready CSV from a run directory.
    Export(ExportArgs),
}

#[derive(Args)]
struct ConfigArgs {
    /// Preset to start from.
    #[arg(long)]
    preset: Option<String>,
    /// JSON config file layered over the preset.
    #[arg(long)]
    config: Option<PathBuf>,
    #[arg(long)]
    seed: Option<u64>,
    #[arg(long)]
    replicas: Option<usize>,
    #[arg(long)]
    steps: Option<usize>,
    #[arg(long)]
    horizon: Option<f64>,
    /// Drift exponent; replaces any alpha sweep.
    #[arg(long)]
    alpha: Option<f64>,
    #[arg(long)]
    theta: Option<f64>,
    #[arg(long)]
    grid_size: Option<usize>,
    #[arg(long)]
    mode_cutoff: Option<usize>,
    #[arg(long)]
    truncation: Option<usize>,
    /// identity, const[:v], bump, separable:sin or table:<csv>.
    #[arg(long)]
    g: Option<String>,
    #[arg(long)]
    output_dir: Option<PathBuf>,
    /// Also store trajectories (hspde-traj-1).
    #[arg(long)]
    persist_trajectories: bool,
}

impl ConfigArgs {
    fn resolve(&self) -> Result<ExperimentConfig> {
        let overrides = Overrides {
            seed: self.seed,
            replicas: self.replicas,
            steps: self.steps,
            horizon: self.horizon,
            alpha: self.alpha,
            theta: self.theta,
            grid_size: self.grid_size,
            mode_cutoff: self.mode_cutoff,
            truncation: self.truncation,
            g: self.g.as_deref().map(GConfig::parse_flag).transpose()?,
            output_dir: self.output_dir.clone(),
            persist_trajectories: self.persist_trajectories.then_some(true),
        };
        if self.preset.is_none() && self.config.is_none() {
            bail!("give --preset and/or --config");
        }
        resolve(self.preset.as_deref(), self.config.as_deref(), &overrides)
    }
}

#[derive(Args)]
struct QueryArgs {
    /// prop32, remark33, colored or fractional.
    #[arg(long, value_parser = parse_theorem)]
    theorem: Theorem,
    #[arg(long)]
    d: Option<usize>,
    #[arg(long)]
    p: Option<f64>,
    #[arg(long)]
    q: f64,
    #[arg(long)]
    theta: Option<f64>,
    #[arg(long)]
    m: Option<f64>,
    #[arg(long)]
    alpha: Option<f64>,
}

fn parse_theorem(s: &str) -> Result<Theorem, String> {
    Theorem::parse(s).ok_or_else(|| format!("unknown theorem {s:?} (prop32, remark33, colored, fractional)"))
}

impl QueryArgs {
    fn config(&self) -> QueryConfig {
        QueryConfig {
            theorem: self.theorem,
            p: self.p,
            q: self.q,
            theta: self.theta,
            m: self.m,
        }
    }
}

#[derive(Args)]
struct RegionArgs {
    #[command(flatten)]
    query: QueryArgs,
    /// Boundary points.
    #[arg(long, default_value_t = 101)]
    samples: usize,
    /// Print the n×n vertex grid used by `verify` instead of the boundary.
    #[arg(long)]
    vertices: Option<usize>,
    #[arg(long)]
    out: Option<PathBuf>,
}

#[derive(Args)]
struct SimulateArgs {
    #[command(flatten)]
    config: ConfigArgs,
    /// Container path (default: <output_dir>/trajectories.traj).
    #[arg(long)]
    out: Option<PathBuf>,
}

#[derive(Args)]
struct EstimateArgs {
    #[arg(long)]
    traj: PathBuf,
    #[arg(long)]
    out: Option<PathBuf>,
    /// Also write the log-log increment table here.
    #[arg(long)]
    increments: Option<PathBuf>,
}

#[derive(Args)]
struct VerifyArgs {
    #[arg(long)]
    traj: PathBuf,
    #[command(flatten)]
    query: QueryArgs,
    #[arg(long, default_value_t = hspde_core::regularity::verify::DEFAULT_TOLERANCE)]
    tolerance: f64,
    /// Skip the check that the ensemble was generated under the query's parameters.
    #[arg(long)]
    unchecked: bool,
    #[arg(long)]
    out: Option<PathBuf>,
}

#[derive(Clone, Copy, ValueEnum)]
enum GammaKind {
    /// Identity on R^n.
    Identity,
    /// `y ↦ y_1 f` with `f = sin(πξ)` on n grid points.
    RankOne,
}

#[derive(Args)]
struct GammaArgs {
    #[arg(long, value_enum, default_value = "identity")]
    kind: GammaKind,
    #[arg(long, default_value_t = 16)]
    n: usize,
    /// Grid L^p target; Hilbert if absent.
    #[arg(long)]
    p: Option<f64>,
    #[arg(long, default_value_t = 100_000)]
    samples: usize,
    #[arg(long, default_value_t = 0)]
    seed: u64,
}

#[derive(Args)]
struct FracpowArgs {
    /// Synthetic spectrum, e.g. 1,4,9; the d=1 Laplacian when absent.
    #[arg(long, value_delimiter = ',')]
    spectrum: Option<Vec<f64>>,
    /// Laplacian modes.
    #[arg(long, default_value_t = 16)]
    modes: usize,
    #[arg(long, value_delimiter = ',', default_value = "0.25,0.5,0.75")]
    z: Vec<f64>,
    #[arg(long, default_value_t = 200)]
    nodes: usize,
    #[arg(long, default_value_t = 1e-7)]
    tolerance: f64,
}

#[derive(Args)]
struct RunArgs {
    #[command(flatten)]
    config: ConfigArgs,
}

#[derive(Args)]
struct PresetsArgs {
    /// Print the resolved JSON config of one preset.
    #[arg(long)]
    show: Option<String>,
}

#[derive(Args)]
struct ExportArgs {
    /// Run directory (the output_dir of `run`).
    #[arg(long)]
    run: PathBuf,
    #[arg(long, value_enum)]
    kind: ExportKind,
    #[arg(long)]
    out: Option<PathBuf>,
}

fn output(path: Option<&Path>) -> Result<Box<dyn Write>> {
    Ok(match path {
        Some(p) => Box::new(BufWriter::new(
            std::fs::File::create(p).with_context(|| format!("creating {}", p.display()))?,
        )),
        None => Box::new(BufWriter::new(std::io::stdout().lock())),
    })
}

fn region(args: &RegionArgs) -> Result<i32> {
    let q = args.query.config().to_query(args.query.d.unwrap_or(1), args.query.alpha.unwrap_or(2.0))?;
    q.validate()?;
    let mut out = output(args.out.as_deref())?;
    match args.vertices {
        Some(n) => {
            let mut w = csv::Writer::from_writer(&mut out);
            w.write_record(["beta", "gamma"])?;
            for (b, g) in vertex_grid(&q, n)? {
                w.write_record([b.to_string(), g.to_string()])?;
            }
            w.flush()?;
        }
        None => tables::write_region(&mut out, &q.region_boundary(args.samples)?)?,
    }
    out.flush()?;
    Ok(0)
}

fn simulate(args: &SimulateArgs) -> Result<i32> {
    let cfg = args.config.resolve()?;
    let alpha = match &cfg.alpha_sweep {
        Some(s) if s.len() > 1 => bail!("config has an alpha sweep; pass --alpha"),
        Some(s) => s[0],
        None => cfg.plan.alpha,
    };
    let plan = cfg.plan(std::sync::Arc::new(cfg.build_system()?), alpha)?;
    let scheme = cfg.scheme(&plan);
    let path = match &args.out {
        Some(p) => p.clone(),
        None => {
            std::fs::create_dir_all(&cfg.output_dir)?;
            cfg.output_dir.join(pipeline::TRAJECTORY_FILE)
        }
    };
    let ens = pipeline::simulate_batched(&plan, scheme, cfg.plan.batch, None)?;
    let meta = write_trajectories(&path, &ens)?;
    println!(
        "wrote {} shape {:?} scheme {} seed {}",
        path.display(),
        meta.shape,
        meta.scheme,
        meta.seed
    );
    Ok(0)
}

fn estimate(args: &EstimateArgs) -> Result<i32> {
    let ens = read_trajectories(&args.traj)?;
    let e = Estimates::compute(&ens)?;
    let mut out = output(args.out.as_deref())?;
    tables::write_estimates(&mut out, &e.rows())?;
    out.flush()?;
    if let Some(p) = &args.increments {
        pipeline::write_increments(&ens, p)?;
    }
    Ok(0)
}

fn verify(args: &VerifyArgs) -> Result<i32> {
    let ens = read_trajectories(&args.traj)?;
    let d = args.query.d.unwrap_or(ens.provenance.dim);
    let alpha = args.query.alpha.unwrap_or(ens.provenance.alpha);
    let q = args.query.config().to_query(d, alpha)?;
    q.validate()?;
    if !args.unchecked {
        check_provenance(&ens, &q)?;
    }
    let verdict = verify_region_unchecked(&ens, &q, args.tolerance)?;
    match &args.out {
        Some(p) => write_json(p, &verdict)?,
        None => println!("{}", serde_json::to_string_pretty(&verdict)?),
    }
    eprintln!(
        "{}: beta_hat {} gamma_hat {} budget {}",
        if verdict.pass { "PASS" } else { "FAIL" },
        verdict.beta_hat.exponent,
        verdict.gamma_hat.exponent,
        verdict.budget
    );
    Ok(if verdict.pass { 0 } else { Outcome::VerifyFail.exit_code() })
}

fn gamma_norm(args: &GammaArgs) -> Result<i32> {
    let domain = SpectralDomain::new(1, args.n, args.n.min(16))?;
    let (name, r) = match args.kind {
        GammaKind::Identity => ("identity", FiniteRankOperator::identity(args.n)),
        GammaKind::RankOne => (
            "rank-one",
            FiniteRankOperator::rank_one(&domain.sample(|xi| (std::f64::consts::PI * xi[0]).sin()), args.n),
        ),
    };
    let target = match args.p {
        Some(p) => TargetNorm::grid(&domain, p),
        None => TargetNorm::Hilbert,
    };
    let est = mc_gamma_norm(&r, target, args.samples, args.seed)?;
    let mut w = csv::Writer::from_writer(std::io::stdout().lock());
    w.write_record(["kind", "n", "target_p", "estimate", "std_error", "samples", "seed"])?;
    w.write_record([
        name.to_string(),
        args.n.to_string(),
        target.exponent().to_string(),
        est.value.to_string(),
        est.value_std_error().to_string(),
        est.samples.to_string(),
        args.seed.to_string(),
    ])?;
    w.flush()?;
    Ok(0)
}

fn fracpow_check(args: &FracpowArgs) -> Result<i32> {
    let (label, sys) = match &args.spectrum {
        Some(s) => (
            format!("spectrum:{}", s.iter().map(f64::to_string).collect::<Vec<_>>().join(";")),
            EigenSystem::with_spectrum(SpectralDomain::new(1, 31, s.len())?, s)?,
        ),
        None => (
            format!("laplacian:K={}", args.modes),
            build_laplacian_system(SpectralDomain::new(1, args.modes.max(31), args.modes)?, 0.0)?,
        ),
    };
    let x: Vec<f64> = sys.domain().sample(|xi| xi[0] * (1.0 - xi[0]) + (3.0 * std::f64::consts::PI * xi[0]).sin()).iter().copied().collect();
    let req = FracPowerRequest {
        nodes: args.nodes,
        ..Default::default()
    };
    let mut all_ok = true;
    let mut w = csv::Writer::from_writer(std::io::stdout().lock());
    w.write_record(["operator", "z", "method", "rel_error", "pass"])?;
    for &z in &args.z {
        let zc = Complex64::new(z, 0.0);
        let inv = frac_power_eigen(&sys, -zc, &x)?;
        let fwd = frac_power_eigen(&sys, zc, &x)?;
        let quad = frac_power_quadrature(&sys, zc, &x, &req)?.value;
        let bala = balakrishnan_forward(&sys, zc, &x, &req)?.value;
        for (method, got, want) in [("resolvent-inverse", &quad, &inv), ("balakrishnan-forward", &bala, &fwd)] {
            let err = (got - want).norm() / want.norm();
            let ok = err <= args.tolerance;
            all_ok &= ok;
            w.write_record([label.clone(), z.to_string(), method.into(), format!("{err:e}"), ok.to_string()])?;
        }
    }
    w.flush()?;
    Ok(if all_ok { 0 } else { Outcome::NumericalError.exit_code() })
}

fn run(args: &RunArgs) -> Result<i32> {
    let cfg = args.config.resolve()?;
    let manifest = run_experiment(&cfg)?;
    for r in &manifest.runs {
        if let Some(e) = &r.estimates {
            let verdict = match r.verdict_pass {
                Some(true) => "PASS",
                Some(false) => "FAIL",
                None => "-",
            };
            println!(
                "alpha {}: beta_hat(sup) {} beta_hat(pointwise) {} gamma_hat {} verdict {}",
                r.alpha, e.beta_sup_space, e.beta_pointwise, e.gamma, verdict
            );
        }
    }
    if let Some(err) = &manifest.error {
        eprintln!("error: {err}");
    }
    println!(
        "{:?} (exit {}); manifest {}",
        manifest.outcome,
        manifest.exit_code,
        cfg.output_dir.join(pipeline::MANIFEST_FILE).display()
    );
    Ok(manifest.exit_code)
}

fn presets(args: &PresetsArgs) -> Result<i32> {
    match &args.show {
        Some(name) => {
            let cfg = resolve(Some(name), None, &Overrides::default())?;
            println!("{}", serde_json::to_string_pretty(&cfg)?);
        }
        None => {
            for p in PRESETS {
                println!("{:<24} {}", p.name, p.description);
            }
        }
    }
    Ok(0)
}

fn export(args: &ExportArgs) -> Result<i32> {
    let mut out = output(args.out.as_deref())?;
    export_plotdata(&args.run, args.kind, &mut out)?;
    out.flush()?;
    Ok(0)
}

fn main() -> ExitCode {
    let cli = match Cli::try_parse() {
        Ok(cli) => cli,
        Err(e) => {
            let _ = e.print();
            // clap would exit 2, which is reserved for verification failures
            return ExitCode::from(if e.use_stderr() { 1 } else { 0 });
        }
    };
    let level = match cli.verbose {
        0 => "warn",
        1 => "info",
        _ => "debug",
    };
    env_logger::Builder::from_env(env_logger::Env::default().default_filter_or(level)).init();
    if let Some(n) = cli.threads {
        if let Err(e) = rayon::ThreadPoolBuilder::new().num_threads(n).build_global() {
            eprintln!("error: thread pool: {e}");
            return ExitCode::from(1);
        }
    }
    let result = match &cli.command {
        Command::Region(a) => region(a),
        Command::Simulate(a) => simulate(a),
        Command::Estimate(a) => estimate(a),
        Command::Verify(a) => verify(a),
        Command::GammaNorm(a) => gamma_norm(a),
        Command::FracpowCheck(a) => fracpow_check(a),
        Command::Run(a) => run(a),
        Command::Presets(a) => presets(a),
        Command::Export(a) => export(a),
    };
    match result {
        Ok(code) => ExitCode::from(code as u8),
        Err(e) => {
            eprintln!("error: {e:#}");
            let numerical = e.downcast_ref::<hspde_core::Error>().is_some() && classify(&e) == Outcome::NumericalError;
            let code = if numerical { 4 } else { 1 };
            ExitCode::from(code)
        }
    }
}
