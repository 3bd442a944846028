//! The `run` pipeline: build, hypotheses, simulate, estimate, verify.

use std::fs::File;
use std::io::BufWriter;
use std::path::{Path, PathBuf};
use std::sync::Arc;
use std::time::Instant;

use anyhow::{anyhow, Context, Result};
use nalgebra::DMatrix;
use serde::{Deserialize, Serialize};

use hspde_core::convolve::{ensemble_shell, simulate_replicas, Scheme, SimulationPlan, TrajectoryEnsemble};
use hspde_core::io::{TrajWriter, FORMAT_VERSION};
use hspde_core::noise::{validate_noise_hypotheses, NoiseHypothesisReport};
use hspde_core::regularity::estimate::{
    default_spatial_times, spatial_increment_profile, temporal_increment_profile,
};
use hspde_core::regularity::{
    estimate_spatial_exponent, estimate_temporal_exponent, verify_region, ExponentEstimate, LagWindow,
    ParameterSelection, RegularityQuery, TemporalMode, Theorem, Verdict,
};
use hspde_core::EigenSystem;

use crate::config::ExperimentConfig;
use crate::tables::{self, EstimateRow};

pub const MANIFEST_FORMAT: &str = "hspde-run-1";
pub const MANIFEST_FILE: &str = "manifest.json";
pub const ESTIMATES_FILE: &str = "estimates.csv";
pub const REGION_FILE: &str = "region.csv";
pub const INCREMENTS_FILE: &str = "increments.csv";
pub const VERDICT_FILE: &str = "verdict.json";
pub const TRAJECTORY_FILE: &str = "trajectories.traj";
pub const SWEEP_FILE: &str = "sweep.csv";
const REGION_SAMPLES: usize = 101;
/// Any failure inside these stages exits 4, whatever its cause.
const NUMERICAL_STAGES: [&str; 2] = ["simulate", "estimate"];

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "kebab-case")]
pub enum Outcome {
    /// Every verdict passed.
    Pass,
    /// No query to verify; all stages ran.
    Complete,
    VerifyFail,
    HypothesisFail,
    NumericalError,
    ConfigError,
}

impl Outcome {
    pub fn exit_code(self) -> i32 {
        match self {
            Self::Pass | Self::Complete => 0,
            Self::ConfigError => 1,
            Self::VerifyFail => 2,
            Self::HypothesisFail => 3,
            Self::NumericalError => 4,
        }
    }
}

/// Config-shaped core errors exit 1, everything else is numerical.
pub fn classify(err: &anyhow::Error) -> Outcome {
    use hspde_core::Error as E;
    if err.downcast_ref::<HypothesisFailure>().is_some() {
        return Outcome::HypothesisFail;
    }
    match err.downcast_ref::<E>() {
        Some(
            E::InvalidDomain(_)
            | E::InvalidOperator(_)
            | E::InvalidExponent(_)
            | E::InvalidPlan(_)
            | E::InvalidNoise(_)
            | E::TheoremMismatch(_)
            | E::Precondition(_)
            | E::Provenance(_)
            | E::Format(_)
            | E::Io(_)
            | E::Json(_),
        ) => Outcome::ConfigError,
        Some(_) => Outcome::NumericalError,
        None if err.downcast_ref::<std::io::Error>().is_some() => Outcome::ConfigError,
        None => Outcome::NumericalError,
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "kebab-case")]
pub enum StageStatus {
    Ok,
    Failed,
    Skipped,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct StageRecord {
    pub name: String,
    pub alpha: Option<f64>,
    pub status: StageStatus,
    pub seconds: f64,
    pub detail: Option<String>,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct Versions {
    pub hspde_core: String,
    pub hspde: String,
    pub manifest_format: String,
    pub trajectory_format: String,
}

impl Versions {
    pub fn current() -> Self {
        Self {
            hspde_core: hspde_core::VERSION.into(),
            hspde: env!("CARGO_PKG_VERSION").into(),
            manifest_format: MANIFEST_FORMAT.into(),
            trajectory_format: FORMAT_VERSION.into(),
        }
    }
}

/// Quantities derived from the config that the verdict depends on.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct Derived {
    pub requested_shift: f64,
    pub effective_shift: f64,
    pub n_modes: usize,
    pub scheme: Scheme,
    pub query: Option<RegularityQuery<f64>>,
    /// `p` from the colored-noise relation, when the query is colored.
    pub implied_p: Option<f64>,
    pub budget: Option<f64>,
    /// `(β, γ)` at which σ and δ were selected: the region's centroid.
    pub selection_point: Option<(f64, f64)>,
    pub selection: Option<ParameterSelection<f64>>,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct EstimateSummary {
    pub beta_sup_space: f64,
    pub beta_pointwise: f64,
    pub gamma: f64,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct AlphaRun {
    pub alpha: f64,
    /// Artifact directory relative to the output directory.
    pub dir: PathBuf,
    pub derived: Option<Derived>,
    pub hypotheses: Option<NoiseHypothesisReport>,
    pub estimates: Option<EstimateSummary>,
    pub verdict_pass: Option<bool>,
    /// Smallest vertex margin of the verdict.
    pub worst_margin: Option<f64>,
    pub artifacts: Vec<String>,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct RunManifest {
    pub format: String,
    pub versions: Versions,
    pub config: ExperimentConfig,
    pub runs: Vec<AlphaRun>,
    pub stages: Vec<StageRecord>,
    pub outcome: Outcome,
    pub exit_code: i32,
    /// Stage and message of the error that aborted the run.
    pub error: Option<String>,
    pub seconds: f64,
}

impl RunManifest {
    pub fn read(run_dir: &Path) -> Result<Self> {
        let path = run_dir.join(MANIFEST_FILE);
        let file = File::open(&path).with_context(|| format!("no run at {} (missing {MANIFEST_FILE})", run_dir.display()))?;
        serde_json::from_reader(std::io::BufReader::new(file)).with_context(|| format!("parsing {}", path.display()))
    }
}

/// A stage failure carrying its outcome class.
struct Abort {
    outcome: Outcome,
    error: anyhow::Error,
}

fn abort(e: impl Into<anyhow::Error>) -> Abort {
    let error = e.into();
    Abort {
        outcome: classify(&error),
        error,
    }
}

/// Marker error for failed noise hypotheses.
#[derive(Debug)]
struct HypothesisFailure(String);

impl std::fmt::Display for HypothesisFailure {
    fn fmt(&self, f: &mut std::fmt::Formatter<'_>) -> std::fmt::Result {
        write!(f, "noise hypotheses failed: {}", self.0)
    }
}

impl std::error::Error for HypothesisFailure {}

struct Recorder {
    stages: Vec<StageRecord>,
}

impl Recorder {
    fn stage<T>(
        &mut self,
        name: &str,
        alpha: Option<f64>,
        f: impl FnOnce() -> Result<T>,
    ) -> std::result::Result<T, Abort> {
        log::info!("stage {name}{}", alpha.map(|a| format!(" (alpha = {a})")).unwrap_or_default());
        let start = Instant::now();
        let result = f();
        let (status, detail) = match &result {
            Ok(_) => (StageStatus::Ok, None),
            Err(e) => (StageStatus::Failed, Some(format!("{e:#}"))),
        };
        self.stages.push(StageRecord {
            name: name.into(),
            alpha,
            status,
            seconds: start.elapsed().as_secs_f64(),
            detail,
        });
        result.map_err(|e| {
            let mut a = abort(e.context(format!("stage {name} failed")));
            if NUMERICAL_STAGES.contains(&name) {
                a.outcome = Outcome::NumericalError;
            }
            a
        })
    }

    fn skip(&mut self, name: &str, alpha: Option<f64>, why: &str) {
        self.stages.push(StageRecord {
            name: name.into(),
            alpha,
            status: StageStatus::Skipped,
            seconds: 0.0,
            detail: Some(why.into()),
        });
    }
}

/// Simulates `plan` in batches of `batch` replicas, optionally streaming them
/// into a trajectory container.
pub fn simulate_batched(
    plan: &SimulationPlan,
    scheme: Scheme,
    batch: usize,
    persist: Option<&Path>,
) -> Result<TrajectoryEnsemble> {
    let mut ens = ensemble_shell(plan, scheme);
    let mut writer = persist.map(|p| TrajWriter::create(p, &ens)).transpose()?;
    let mut start = 0;
    while start < plan.replicas {
        let end = (start + batch).min(plan.replicas);
        let values: Vec<DMatrix<f64>> = simulate_replicas(plan, scheme, start..end)?;
        if let Some(w) = writer.as_mut() {
            w.append(&values)?;
        }
        ens.values.extend(values);
        log::debug!("simulated replicas {start}..{end}");
        start = end;
    }
    if let Some(w) = writer {
        w.finish()?;
    }
    if !ens.is_finite() {
        return Err(anyhow!("simulation produced non-finite values"));
    }
    Ok(ens)
}

/// The three exponent estimates written to `estimates.csv`.
pub struct Estimates {
    pub beta_sup: ExponentEstimate,
    pub beta_pointwise: ExponentEstimate,
    pub gamma: ExponentEstimate,
}

impl Estimates {
    pub fn compute(ens: &TrajectoryEnsemble) -> Result<Self> {
        Ok(Self {
            beta_sup: estimate_temporal_exponent(ens, TemporalMode::SupSpace)?,
            beta_pointwise: estimate_temporal_exponent(ens, TemporalMode::Pointwise)?,
            gamma: estimate_spatial_exponent(ens, &default_spatial_times(ens))?,
        })
    }

    pub fn rows(&self) -> Vec<EstimateRow<'_>> {
        vec![
            EstimateRow {
                quantity: "beta_hat",
                mode: "sup-space",
                estimate: &self.beta_sup,
            },
            EstimateRow {
                quantity: "beta_hat",
                mode: "pointwise",
                estimate: &self.beta_pointwise,
            },
            EstimateRow {
                quantity: "gamma_hat",
                mode: "default-times",
                estimate: &self.gamma,
            },
        ]
    }

    pub fn write(&self, path: &Path) -> Result<()> {
        tables::write_estimates(BufWriter::new(File::create(path)?), &self.rows())
    }

    pub fn summary(&self) -> EstimateSummary {
        EstimateSummary {
            beta_sup_space: self.beta_sup.exponent,
            beta_pointwise: self.beta_pointwise.exponent,
            gamma: self.gamma.exponent,
        }
    }
}

pub fn write_increments(ens: &TrajectoryEnsemble, path: &Path) -> Result<()> {
    let temporal = temporal_increment_profile(ens, TemporalMode::SupSpace, LagWindow::TEMPORAL.divisor)?;
    let spatial = spatial_increment_profile(ens, &default_spatial_times(ens), LagWindow::SPATIAL.divisor)?;
    tables::write_increments(BufWriter::new(File::create(path)?), &temporal, &spatial)
}

pub fn write_json(path: &Path, value: &impl Serialize) -> Result<()> {
    let mut w = BufWriter::new(File::create(path).with_context(|| format!("creating {}", path.display()))?);
    serde_json::to_writer_pretty(&mut w, value)?;
    std::io::Write::write_all(&mut w, b"\n")?;
    Ok(())
}

/// σ and δ at the region's centroid `(B/3, B/(3c))`; `None` when the region
/// is empty or the theorem has no existence argument.
fn centroid_selection(query: &RegularityQuery<f64>) -> Result<(Option<(f64, f64)>, Option<ParameterSelection<f64>>)> {
    let budget = query.budget()?;
    if budget <= 0.0 || query.theorem == Theorem::Remark33 {
        return Ok((None, None));
    }
    let point = (budget / 3.0, budget / (3.0 * query.gamma_coefficient()));
    Ok((Some(point), Some(query.select_sigma_delta(point.0, point.1)?)))
}

fn alpha_dir(cfg: &ExperimentConfig, alpha: f64) -> PathBuf {
    if cfg.alpha_sweep.is_some() {
        PathBuf::from(format!("alpha-{alpha}"))
    } else {
        PathBuf::new()
    }
}

/// Runs the whole pipeline and writes every artifact under
/// `cfg.output_dir`. Stage failures are reported in the returned manifest
/// (also written to disk); `Err` means the manifest itself could not be
/// written.
pub fn run_experiment(cfg: &ExperimentConfig) -> Result<RunManifest> {
    let started = Instant::now();
    std::fs::create_dir_all(&cfg.output_dir)
        .with_context(|| format!("creating output directory {}", cfg.output_dir.display()))?;
    let mut rec = Recorder { stages: Vec::new() };
    let mut runs = Vec::new();
    let result = run_stages(cfg, &mut rec, &mut runs);
    let (outcome, error) = match result {
        Ok(outcome) => (outcome, None),
        Err(a) => (a.outcome, Some(format!("{:#}", a.error))),
    };
    let manifest = RunManifest {
        format: MANIFEST_FORMAT.into(),
        versions: Versions::current(),
        config: cfg.clone(),
        runs,
        stages: rec.stages,
        outcome,
        exit_code: outcome.exit_code(),
        error,
        seconds: started.elapsed().as_secs_f64(),
    };
    write_json(&cfg.output_dir.join(MANIFEST_FILE), &manifest)?;
    Ok(manifest)
}

fn run_stages(
    cfg: &ExperimentConfig,
    rec: &mut Recorder,
    runs: &mut Vec<AlphaRun>,
) -> std::result::Result<Outcome, Abort> {
    let sys: Arc<EigenSystem> = rec.stage("build", None, || Ok(Arc::new(cfg.build_system()?)))?;
    let mut all_pass = true;
    let mut any_verdict = false;
    for alpha in cfg.alphas() {
        let dir = alpha_dir(cfg, alpha);
        let out = cfg.output_dir.join(&dir);
        std::fs::create_dir_all(&out).map_err(abort)?;
        runs.push(AlphaRun {
            alpha,
            dir,
            derived: None,
            hypotheses: None,
            estimates: None,
            verdict_pass: None,
            worst_margin: None,
            artifacts: Vec::new(),
        });
        let run = runs.last_mut().unwrap();
        let a = Some(alpha);

        let (plan, scheme, query) = rec.stage("plan", a, || {
            let plan = cfg.plan(sys.clone(), alpha)?;
            let scheme = cfg.scheme(&plan);
            let query = cfg.query(alpha)?;
            if let Some(q) = &query {
                q.validate()?;
            }
            Ok((plan, scheme, query))
        })?;

        let mut derived = Derived {
            requested_shift: sys.requested_shift(),
            effective_shift: sys.shift(),
            n_modes: sys.n_modes(),
            scheme,
            query,
            implied_p: None,
            budget: None,
            selection_point: None,
            selection: None,
        };
        if let Some(q) = &query {
            derived.budget = Some(q.budget().map_err(abort)?);
            if q.theorem == Theorem::Colored {
                derived.implied_p = Some(q.implied_p().map_err(abort)?);
            }
            let (point, sel) = centroid_selection(q).map_err(abort)?;
            derived.selection_point = point;
            derived.selection = sel;
        }
        run.derived = Some(derived);

        match query.filter(|q| q.theorem == Theorem::Colored) {
            Some(q) => {
                let report = validate_noise_hypotheses(&plan.g, &plan.noise, q.p, q.d);
                let passed = report.all_passed();
                let failed: Vec<String> = report.clauses.iter().filter(|c| !c.passed).map(|c| c.name.clone()).collect();
                run.hypotheses = Some(report);
                rec.stage("hypotheses", a, || {
                    if passed {
                        Ok(())
                    } else {
                        Err(HypothesisFailure(failed.join("; ")).into())
                    }
                })?;
            }
            None => rec.skip("hypotheses", a, "query does not use the colored-noise hypotheses"),
        }

        if let Some(q) = &query {
            let boundary = q.region_boundary(REGION_SAMPLES).map_err(abort)?;
            tables::write_region(BufWriter::new(File::create(out.join(REGION_FILE)).map_err(abort)?), &boundary)
                .map_err(abort)?;
            run.artifacts.push(REGION_FILE.into());
        }

        let persist = cfg.persist_trajectories.then(|| out.join(TRAJECTORY_FILE));
        let ens = rec.stage("simulate", a, || Ok(simulate_batched(&plan, scheme, cfg.plan.batch, persist.as_deref())?))?;
        if persist.is_some() {
            run.artifacts.push(TRAJECTORY_FILE.into());
        }

        let estimates = rec.stage("estimate", a, || {
            let e = Estimates::compute(&ens)?;
            e.write(&out.join(ESTIMATES_FILE))?;
            write_increments(&ens, &out.join(INCREMENTS_FILE))?;
            Ok(e)
        })?;
        run.artifacts.push(ESTIMATES_FILE.into());
        run.artifacts.push(INCREMENTS_FILE.into());
        run.estimates = Some(estimates.summary());

        match &query {
            Some(q) => {
                let verdict: Verdict = rec.stage("verify", a, || {
                    let v = verify_region(&ens, q)?;
                    write_json(&out.join(VERDICT_FILE), &v)?;
                    Ok(v)
                })?;
                run.artifacts.push(VERDICT_FILE.into());
                run.verdict_pass = Some(verdict.pass);
                run.worst_margin = verdict.worst_vertex().map(|v| v.beta_margin.min(v.gamma_margin));
                log::info!(
                    "alpha = {alpha}: beta_hat = {}, gamma_hat = {}, verdict {}",
                    verdict.beta_hat.exponent,
                    verdict.gamma_hat.exponent,
                    if verdict.pass { "PASS" } else { "FAIL" }
                );
                any_verdict = true;
                all_pass &= verdict.pass;
            }
            None => rec.skip("verify", a, "no query configured"),
        }
    }
    if cfg.alpha_sweep.is_some() {
        write_sweep(&cfg.output_dir.join(SWEEP_FILE), runs).map_err(abort)?;
    }
    Ok(match (any_verdict, all_pass) {
        (false, _) => Outcome::Complete,
        (true, true) => Outcome::Pass,
        (true, false) => Outcome::VerifyFail,
    })
}

fn write_sweep(path: &Path, runs: &[AlphaRun]) -> Result<()> {
    let mut w = csv::Writer::from_path(path)?;
    w.write_record(["alpha", "beta_hat_sup_space", "beta_hat_pointwise", "gamma_hat", "verdict"])?;
    for r in runs {
        let e = r.estimates.as_ref().ok_or_else(|| anyhow!("alpha {} has no estimates", r.alpha))?;
        let verdict = match r.verdict_pass {
            Some(true) => "pass",
            Some(false) => "fail",
            None => "none",
        };
        w.write_record([
            r.alpha.to_string(),
            e.beta_sup_space.to_string(),
            e.beta_pointwise.to_string(),
            e.gamma.to_string(),
            verdict.into(),
        ])?;
    }
    w.flush()?;
    Ok(())
}
