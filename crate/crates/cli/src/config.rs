//! Experiment configuration: typed JSON with preset overlays.
//!
//! Precedence is flags > file > preset. Layers are merged as JSON values and
//! only then deserialized, so a file may override a single nested field.

use std::path::{Path, PathBuf};
use std::sync::Arc;

use anyhow::{anyhow, bail, Context, Result};
use serde::{Deserialize, Serialize};
use serde_json::Value;

use hspde_core::convolve::{Recording, Scheme, SimulationPlan};
use hspde_core::noise::{CameronMartinSpec, GPreset, GProcess};
use hspde_core::regularity::{RegularityQuery, Theorem};
use hspde_core::spectral::{build_laplacian_system, build_variable_coefficient_system, EigenSystem};
use hspde_core::{EllipticOperatorSpec, SpectralDomain};

use crate::presets;

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct ExperimentConfig {
    /// Preset the file was layered on, echoed for the manifest.
    #[serde(default)]
    pub preset: Option<String>,
    pub domain: DomainConfig,
    pub operator: OperatorConfig,
    pub noise: NoiseConfig,
    pub plan: PlanConfig,
    #[serde(default)]
    pub query: Option<QueryConfig>,
    /// Runs the whole pipeline once per listed alpha.
    #[serde(default)]
    pub alpha_sweep: Option<Vec<f64>>,
    #[serde(default = "default_output_dir")]
    pub output_dir: PathBuf,
    #[serde(default)]
    pub persist_trajectories: bool,
}

fn default_output_dir() -> PathBuf {
    PathBuf::from("hspde-out")
}

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct DomainConfig {
    pub dim: usize,
    pub grid_size: usize,
    pub mode_cutoff: usize,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(tag = "kind", rename_all = "kebab-case", deny_unknown_fields)]
pub enum OperatorConfig {
    Laplacian {
        #[serde(default)]
        shift: f64,
    },
    /// `a(ξ) = 1 + ξ/2`, no drift or reaction (d = 1).
    AffineA {
        #[serde(default)]
        shift: f64,
    },
    /// Explicit d = 1 coefficients sampled on the grid.
    Variable {
        a: Vec<f64>,
        b: Vec<f64>,
        c: Vec<f64>,
        #[serde(default)]
        shift: f64,
    },
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct NoiseConfig {
    pub theta: f64,
    pub truncation: usize,
    pub g: GConfig,
    /// Spatial and temporal integrability exponents of `g`; absent for the
    /// identity embedding.
    #[serde(default)]
    pub m: Option<f64>,
    #[serde(default)]
    pub q: Option<f64>,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(tag = "kind", rename_all = "kebab-case", deny_unknown_fields)]
pub enum GConfig {
    Identity,
    Const {
        value: f64,
    },
    Bump,
    #[serde(rename = "separable:sin")]
    SeparableSin {
        slices: usize,
    },
    /// CSV with columns `t_index,space_index,value`.
    Table {
        path: PathBuf,
    },
}

impl GConfig {
    /// Parses the `--g` flag: `identity`, `const[:v]`, `bump`,
    /// `separable:sin`, or `table:<path>`.
    pub fn parse_flag(s: &str) -> Result<Self> {
        if let Some(path) = s.strip_prefix("table:") {
            return Ok(Self::Table { path: path.into() });
        }
        if let Some(v) = s.strip_prefix("const:") {
            return Ok(Self::Const {
                value: v.parse().with_context(|| format!("bad const value {v:?}"))?,
            });
        }
        match s {
            "identity" => Ok(Self::Identity),
            _ => match GPreset::parse(s) {
                Some(GPreset::Const { value }) => Ok(Self::Const { value }),
                Some(GPreset::Bump) => Ok(Self::Bump),
                Some(GPreset::SeparableSin { slices }) => Ok(Self::SeparableSin { slices }),
                None => bail!("unknown g {s:?} (identity, const[:v], bump, separable:sin, table:<path>)"),
            },
        }
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct PlanConfig {
    #[serde(default = "two")]
    pub alpha: f64,
    #[serde(default = "one")]
    pub horizon: f64,
    pub steps: usize,
    pub replicas: usize,
    #[serde(default = "one_usize")]
    pub time_stride: usize,
    #[serde(default = "one_usize")]
    pub space_stride: usize,
    pub seed: u64,
    #[serde(default)]
    pub scheme: SchemeChoice,
    /// Replicas simulated per batch (bounds memory).
    #[serde(default = "default_batch")]
    pub batch: usize,
}

fn two() -> f64 {
    2.0
}
fn one() -> f64 {
    1.0
}
fn one_usize() -> usize {
    1
}
fn default_batch() -> usize {
    16
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Default, Serialize, Deserialize)]
#[serde(rename_all = "kebab-case")]
pub enum SchemeChoice {
    #[default]
    Auto,
    ExactDiagonal,
    FrozenExponential,
}

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct QueryConfig {
    pub theorem: Theorem,
    /// Needed by prop32 and fractional; colored derives it.
    #[serde(default)]
    pub p: Option<f64>,
    pub q: f64,
    #[serde(default)]
    pub theta: Option<f64>,
    #[serde(default)]
    pub m: Option<f64>,
}

impl QueryConfig {
    /// The regularity query for dimension `d` and drift exponent `alpha`.
    pub fn to_query(&self, d: usize, alpha: f64) -> Result<RegularityQuery<f64>> {
        let need = |x: Option<f64>, name: &str| x.ok_or_else(|| anyhow!("{} query needs {name}", self.theorem.name()));
        Ok(match self.theorem {
            Theorem::Prop32 => RegularityQuery::prop32(d, need(self.p, "p")?, self.q),
            Theorem::Fractional => RegularityQuery::fractional(d, need(self.p, "p")?, self.q, alpha),
            Theorem::Colored => RegularityQuery::colored(d, self.q, need(self.theta, "theta")?, need(self.m, "m")?),
            Theorem::Remark33 => RegularityQuery::remark33(d, self.q, need(self.theta, "theta")?),
        })
    }
}

/// Flag-level overrides; `None` leaves the lower layers alone.
#[derive(Debug, Clone, Default)]
pub struct Overrides {
    pub seed: Option<u64>,
    pub replicas: Option<usize>,
    pub steps: Option<usize>,
    pub horizon: Option<f64>,
    pub alpha: Option<f64>,
    pub theta: Option<f64>,
    pub grid_size: Option<usize>,
    pub mode_cutoff: Option<usize>,
    pub truncation: Option<usize>,
    pub g: Option<GConfig>,
    pub output_dir: Option<PathBuf>,
    pub persist_trajectories: Option<bool>,
}

impl Overrides {
    fn apply(&self, v: &mut Value) -> Result<()> {
        let mut set = |path: &[&str], value: Value| {
            let mut cur = &mut *v;
            for key in &path[..path.len() - 1] {
                cur = cur
                    .as_object_mut()
                    .expect("object")
                    .entry(key.to_string())
                    .or_insert_with(|| Value::Object(Default::default()));
            }
            cur.as_object_mut()
                .expect("object")
                .insert(path[path.len() - 1].to_string(), value);
        };
        if let Some(x) = self.seed {
            set(&["plan", "seed"], x.into());
        }
        if let Some(x) = self.replicas {
            set(&["plan", "replicas"], x.into());
        }
        if let Some(x) = self.steps {
            set(&["plan", "steps"], x.into());
        }
        if let Some(x) = self.horizon {
            set(&["plan", "horizon"], x.into());
        }
        if let Some(x) = self.alpha {
            set(&["plan", "alpha"], x.into());
            set(&["alpha_sweep"], Value::Null);
        }
        if let Some(x) = self.theta {
            set(&["noise", "theta"], x.into());
        }
        if let Some(x) = self.grid_size {
            set(&["domain", "grid_size"], x.into());
        }
        if let Some(x) = self.mode_cutoff {
            set(&["domain", "mode_cutoff"], x.into());
        }
        if let Some(x) = self.truncation {
            set(&["noise", "truncation"], x.into());
        }
        if let Some(g) = &self.g {
            set(&["noise", "g"], serde_json::to_value(g)?);
        }
        if let Some(p) = &self.output_dir {
            set(&["output_dir"], serde_json::to_value(p)?);
        }
        if let Some(b) = self.persist_trajectories {
            set(&["persist_trajectories"], b.into());
        }
        Ok(())
    }
}

/// Recursive object merge; non-object values in `top` replace `base`.
pub fn merge(base: &mut Value, top: &Value) {
    match (base, top) {
        (Value::Object(b), Value::Object(t)) => {
            for (k, v) in t {
                match b.get_mut(k) {
                    Some(slot) if slot.is_object() && v.is_object() => merge(slot, v),
                    _ => {
                        b.insert(k.clone(), v.clone());
                    }
                }
            }
        }
        (b, t) => *b = t.clone(),
    }
}

/// Resolves preset, file and flags into one config.
pub fn resolve(preset: Option<&str>, file: Option<&Path>, overrides: &Overrides) -> Result<ExperimentConfig> {
    let file_value: Option<Value> = match file {
        Some(path) => Some(
            serde_json::from_str(
                &std::fs::read_to_string(path).with_context(|| format!("reading config {}", path.display()))?,
            )
            .with_context(|| format!("parsing config {}", path.display()))?,
        ),
        None => None,
    };
    // a preset named inside the file is the bottom layer unless a flag names one
    let preset_name = preset
        .map(str::to_string)
        .or_else(|| file_value.as_ref().and_then(|v| v.get("preset")).and_then(|p| p.as_str()).map(str::to_string));
    let mut value = match &preset_name {
        Some(name) => presets::find(name)
            .ok_or_else(|| anyhow!("unknown preset {name:?}; see `hspde presets`"))?
            .config_value(),
        None => Value::Object(Default::default()),
    };
    if let Some(v) = &file_value {
        merge(&mut value, v);
    }
    overrides.apply(&mut value)?;
    if let Some(name) = preset_name {
        value["preset"] = name.into();
    }
    if value.pointer("/plan/seed").is_none_or(Value::is_null) {
        bail!("config has no plan.seed; a seed is required");
    }
    let cfg: ExperimentConfig = serde_json::from_value(value).context("config does not match the schema")?;
    cfg.validate()?;
    Ok(cfg)
}

impl ExperimentConfig {
    pub fn validate(&self) -> Result<()> {
        self.domain()?;
        if let Some(sweep) = &self.alpha_sweep {
            if sweep.is_empty() {
                bail!("alpha_sweep is empty");
            }
        }
        if self.plan.batch == 0 {
            bail!("plan.batch must be positive");
        }
        Ok(())
    }

    pub fn domain(&self) -> Result<SpectralDomain> {
        Ok(SpectralDomain::new(self.domain.dim, self.domain.grid_size, self.domain.mode_cutoff)?)
    }

    pub fn alphas(&self) -> Vec<f64> {
        self.alpha_sweep.clone().unwrap_or_else(|| vec![self.plan.alpha])
    }

    pub fn build_system(&self) -> Result<EigenSystem> {
        let domain = self.domain()?;
        Ok(match &self.operator {
            OperatorConfig::Laplacian { shift } => build_laplacian_system(domain, *shift)?,
            OperatorConfig::AffineA { shift } => {
                build_variable_coefficient_system(domain, &EllipticOperatorSpec::affine_a(&domain, *shift)?)?
            }
            OperatorConfig::Variable { a, b, c, shift } => build_variable_coefficient_system(
                domain,
                &EllipticOperatorSpec::one_dimensional(a.clone(), b.clone(), c.clone(), *shift),
            )?,
        })
    }

    pub fn operator_label(&self) -> String {
        match &self.operator {
            OperatorConfig::Laplacian { shift } => format!("laplacian(shift={shift})"),
            OperatorConfig::AffineA { shift } => format!("affine-a(shift={shift})"),
            OperatorConfig::Variable { shift, .. } => format!("variable(shift={shift})"),
        }
    }

    pub fn noise_spec(&self) -> CameronMartinSpec {
        CameronMartinSpec {
            theta: self.noise.theta,
            truncation: self.noise.truncation,
        }
    }

    pub fn build_g(&self) -> Result<GProcess> {
        let domain = self.domain()?;
        let m = self.noise.m.unwrap_or(f64::INFINITY);
        let q = self.noise.q.unwrap_or(f64::INFINITY);
        Ok(match &self.noise.g {
            GConfig::Identity => GProcess::identity(m, q),
            GConfig::Const { value } => GPreset::Const { value: *value }.build(&domain, m, q)?,
            GConfig::Bump => GPreset::Bump.build(&domain, m, q)?,
            GConfig::SeparableSin { slices } => GPreset::SeparableSin { slices: *slices }.build(&domain, m, q)?,
            GConfig::Table { path } => crate::tables::read_g_table(path, domain.n_points(), m, q)?,
        })
    }

    pub fn g_label(&self) -> String {
        match &self.noise.g {
            GConfig::Identity => "identity".into(),
            GConfig::Const { value } => format!("const:{value}"),
            GConfig::Bump => "bump".into(),
            GConfig::SeparableSin { slices } => format!("separable:sin({slices})"),
            GConfig::Table { path } => format!("table:{}", path.display()),
        }
    }

    pub fn plan(&self, sys: Arc<EigenSystem>, alpha: f64) -> Result<SimulationPlan> {
        let plan = SimulationPlan {
            sys,
            alpha,
            noise: self.noise_spec(),
            g: self.build_g()?,
            horizon: self.plan.horizon,
            steps: self.plan.steps,
            replicas: self.plan.replicas,
            record: Recording {
                time_stride: self.plan.time_stride,
                space_stride: self.plan.space_stride,
            },
            seed: self.plan.seed,
            label: format!("{} g={}", self.operator_label(), self.g_label()),
        };
        plan.validate()?;
        Ok(plan)
    }

    pub fn scheme(&self, plan: &SimulationPlan) -> Scheme {
        match self.plan.scheme {
            SchemeChoice::Auto => plan.auto_scheme(),
            SchemeChoice::ExactDiagonal => Scheme::ExactDiagonal,
            SchemeChoice::FrozenExponential => Scheme::FrozenExponential,
        }
    }

    pub fn query(&self, alpha: f64) -> Result<Option<RegularityQuery<f64>>> {
        self.query.as_ref().map(|q| q.to_query(self.domain.dim, alpha)).transpose()
    }
}
