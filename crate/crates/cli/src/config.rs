//! TOML run configuration. Every table is optional at parse time; each
//! command checks for the tables it needs. Relative paths inside a config
//! are resolved against the config file's directory.

use std::path::{Path, PathBuf};

use serde::Deserialize;

use scorewalk::schedules::{
    ddpm_sigma_prime, make_geometric_schedule, make_linear_alpha_schedule, make_linear_schedule,
    make_sigmoid_schedule, plan_ddpm, plan_ncsn, plan_simplified, plan_ve_sde, SigmaPrimeRule,
    SigmoidScheduleParams,
};
use scorewalk::training::{Conditioning, Optimizer, Parameterization, SigmaDistribution, WeightRule};
use scorewalk::{AlphaBarSchedule64, GaussianMixture64, Matrix64, NoiseSchedule64, SamplerPlan64, TemplateForm};

use crate::error::{CliError, CliResult};
use crate::toy::toy_image_mixture;

#[derive(Debug, Clone, Default, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct RunConfig {
    pub seed: Option<u64>,
    pub out: Option<PathBuf>,
    pub chains: Option<u64>,
    pub target: Option<MixtureSpec>,
    pub toy_image: Option<ToyImageSpec>,
    pub source: Option<SourceSpec>,
    pub schedule: Option<ScheduleSpec>,
    pub plan: Option<PlanSpec>,
    pub train: Option<TrainSpec>,
    pub condition: Option<ConditionSpec>,
    pub measurement: Option<MeasurementSpec>,
    pub eval: Option<EvalSpec>,
    pub reproduce: Option<ReproduceSpec>,
}

pub(crate) fn require<'a, T>(v: &'a Option<T>, table: &str) -> CliResult<&'a T> {
    v.as_ref()
        .ok_or_else(|| CliError::config(format!("missing [{table}] table")))
}

impl RunConfig {
    pub fn parse(text: &str) -> CliResult<Self> {
        toml::from_str(text).map_err(|e| CliError::config(e.to_string()))
    }

    /// Rewrites relative file paths against `base`.
    pub fn resolve_paths(&mut self, base: &Path) {
        let fix = |p: &mut PathBuf| {
            if p.is_relative() {
                *p = base.join(&*p);
            }
        };
        if let Some(s) = self.source.as_mut() {
            if let Some(p) = s.checkpoint.as_mut() {
                fix(p);
            }
        }
        if let Some(c) = self.condition.as_mut() {
            fix(&mut c.observation);
            if let Some(p) = c.ground_truth.as_mut() {
                fix(p);
            }
        }
        if let Some(m) = self.measurement.as_mut() {
            fix(&mut m.ground_truth);
        }
        if let Some(e) = self.eval.as_mut() {
            e.samples.iter_mut().for_each(fix);
            if let Some(p) = e.reference.as_mut() {
                fix(p);
            }
        }
    }

    /// The data distribution: `[toy_image]` if present, else `[target]`.
    pub fn mixture(&self) -> CliResult<GaussianMixture64> {
        match (&self.toy_image, &self.target) {
            (Some(_), Some(_)) => Err(CliError::config("give either [target] or [toy_image], not both")),
            (Some(t), None) => Ok(toy_image_mixture(t.width, t.height, t.std)?),
            (None, Some(m)) => m.build(),
            (None, None) => Err(CliError::config("missing [target] or [toy_image] table")),
        }
    }

    pub fn image_shape(&self) -> Option<(usize, usize)> {
        self.toy_image.as_ref().map(|t| (t.width, t.height))
    }
}

#[derive(Debug, Clone, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct MixtureSpec {
    pub weights: Vec<f64>,
    pub means: Vec<Vec<f64>>,
    /// Isotropic per-component standard deviations.
    pub stds: Option<Vec<f64>>,
    /// Full per-component covariances, row by row.
    pub covariances: Option<Vec<Vec<Vec<f64>>>>,
}

impl MixtureSpec {
    pub fn build(&self) -> CliResult<GaussianMixture64> {
        let g = match (&self.stds, &self.covariances) {
            (Some(s), None) => GaussianMixture64::isotropic(self.weights.clone(), self.means.clone(), s)?,
            (None, Some(c)) => {
                let covs = c.iter().map(|rows| Matrix64::from_rows(rows)).collect::<Result<Vec<_>, _>>()?;
                GaussianMixture64::new(self.weights.clone(), self.means.clone(), covs)?
            }
            _ => return Err(CliError::config("[target] needs exactly one of `stds` or `covariances`")),
        };
        Ok(g)
    }
}

#[derive(Debug, Clone, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct ToyImageSpec {
    pub width: usize,
    pub height: usize,
    #[serde(default = "default_toy_std")]
    pub std: f64,
}

fn default_toy_std() -> f64 {
    0.05
}

#[derive(Debug, Clone, Copy, Default, PartialEq, Eq, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum SourceKind {
    #[default]
    Analytic,
    Checkpoint,
}

#[derive(Debug, Clone, Default, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct SourceSpec {
    #[serde(default)]
    pub kind: SourceKind,
    pub checkpoint: Option<PathBuf>,
    /// Treat a plan reaching outside the trained noise range as an error.
    #[serde(default)]
    pub strict: bool,
}

#[derive(Debug, Clone, Deserialize)]
#[serde(tag = "kind", rename_all = "snake_case", deny_unknown_fields)]
pub enum ScheduleSpec {
    Geometric {
        sigma_max: f64,
        sigma_min: f64,
        steps: usize,
    },
    Linear {
        sigma_max: f64,
        sigma_min: f64,
        steps: usize,
    },
    Sigmoid {
        zeta: f64,
        c_start: f64,
        c_end: f64,
        sigma_max: f64,
        sigma_min: f64,
        steps: usize,
    },
    Explicit {
        sigmas: Vec<f64>,
    },
    AlphaLinear {
        alpha_first: f64,
        alpha_last: f64,
        steps: usize,
    },
}

impl ScheduleSpec {
    pub fn name(&self) -> &'static str {
        match self {
            ScheduleSpec::Geometric { .. } => "geometric",
            ScheduleSpec::Linear { .. } => "linear",
            ScheduleSpec::Sigmoid { .. } => "sigmoid",
            ScheduleSpec::Explicit { .. } => "explicit",
            ScheduleSpec::AlphaLinear { .. } => "alpha_linear",
        }
    }

    pub fn noise_schedule(&self) -> CliResult<NoiseSchedule64> {
        let s = match *self {
            ScheduleSpec::Geometric { sigma_max, sigma_min, steps } => {
                make_geometric_schedule(sigma_max, sigma_min, steps)?
            }
            ScheduleSpec::Linear { sigma_max, sigma_min, steps } => make_linear_schedule(sigma_max, sigma_min, steps)?,
            ScheduleSpec::Sigmoid {
                zeta,
                c_start,
                c_end,
                sigma_max,
                sigma_min,
                steps,
            } => make_sigmoid_schedule(&SigmoidScheduleParams {
                zeta,
                c_start,
                c_end,
                sigma_first: sigma_max,
                sigma_last: sigma_min,
                steps,
            })?,
            ScheduleSpec::Explicit { ref sigmas } => NoiseSchedule64::new(sigmas.clone())?,
            ScheduleSpec::AlphaLinear { .. } => {
                return Err(CliError::config("an alpha schedule cannot drive this preset; use a sigma schedule"))
            }
        };
        Ok(s)
    }

    pub fn alpha_schedule(&self) -> CliResult<AlphaBarSchedule64> {
        match *self {
            ScheduleSpec::AlphaLinear {
                alpha_first,
                alpha_last,
                steps,
            } => Ok(make_linear_alpha_schedule(alpha_first, alpha_last, steps)?),
            _ => Err(CliError::config(format!(
                "expected schedule kind \"alpha_linear\", found \"{}\"",
                self.name()
            ))),
        }
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum PresetKind {
    Ncsn,
    VeSde,
    Ddpm,
    Simplified,
}

impl PresetKind {
    pub fn name(self) -> &'static str {
        match self {
            PresetKind::Ncsn => "ncsn",
            PresetKind::VeSde => "ve_sde",
            PresetKind::Ddpm => "ddpm",
            PresetKind::Simplified => "simplified",
        }
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum SigmaPrimeKind {
    Beta,
    PosteriorBeta,
    UnitTemperature,
}

#[derive(Debug, Clone, Copy, Default, PartialEq, Eq, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum FormKind {
    #[default]
    Score,
    Denoiser,
}

#[derive(Debug, Clone, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct PlanSpec {
    pub preset: PresetKind,
    pub epsilon: Option<f64>,
    pub temp_start: Option<f64>,
    pub temp_end: Option<f64>,
    /// Explicit temperature sequence, replacing the preset's.
    pub temps: Option<Vec<f64>>,
    pub sigma_prime: Option<SigmaPrimeKind>,
    /// DDPM only: pick the final `σ'` so the last temperature is exactly 1.
    #[serde(default)]
    pub terminal_unit_temperature: bool,
    #[serde(default = "one")]
    pub inner_steps: usize,
    /// Extra iterations repeating the final level.
    #[serde(default)]
    pub terminal_hold: usize,
    /// Truncates the plan; 0 returns the initial states.
    pub max_iterations: Option<usize>,
    #[serde(default)]
    pub form: FormKind,
    pub record_stride: Option<usize>,
}

fn one() -> usize {
    1
}

impl PlanSpec {
    pub fn template_form(&self) -> TemplateForm {
        match self.form {
            FormKind::Score => TemplateForm::Score,
            FormKind::Denoiser => TemplateForm::Denoiser,
        }
    }

    pub fn build(&self, schedule: &ScheduleSpec) -> CliResult<SamplerPlan64> {
        let epsilon = || {
            self.epsilon
                .ok_or_else(|| CliError::config(format!("preset {} needs `epsilon`", self.preset.name())))
        };
        let mut plan = match self.preset {
            PresetKind::Ncsn => plan_ncsn(&schedule.noise_schedule()?, epsilon()?)?,
            PresetKind::VeSde => plan_ve_sde(&schedule.noise_schedule()?)?,
            PresetKind::Simplified => plan_simplified(
                &schedule.noise_schedule()?,
                epsilon()?,
                self.temp_start.unwrap_or(1.0),
                self.temp_end.unwrap_or(1.0),
            )?,
            PresetKind::Ddpm => {
                let alphas = schedule.alpha_schedule()?;
                let rule = match self.sigma_prime {
                    Some(SigmaPrimeKind::Beta) => SigmaPrimeRule::Beta,
                    Some(SigmaPrimeKind::PosteriorBeta) => SigmaPrimeRule::PosteriorBeta,
                    Some(SigmaPrimeKind::UnitTemperature) => SigmaPrimeRule::UnitTemperature,
                    None => {
                        return Err(CliError::config(
                            "preset ddpm needs `sigma_prime` (beta, posterior_beta or unit_temperature)",
                        ))
                    }
                };
                let mut sp = ddpm_sigma_prime(&alphas, rule);
                if self.terminal_unit_temperature {
                    // T = σ'² α/(2 - 2α) = 1 at t = 1; the temperature is
                    // pinned afterwards so rounding cannot leave 1 - ulp.
                    let a = alphas.alpha(1);
                    sp[0] = ((2.0 - 2.0 * a) / a).sqrt();
                    let plan = plan_ddpm(&alphas, &sp)?;
                    let mut temps = plan.temps().to_vec();
                    if let Some(last) = temps.last_mut() {
                        *last = 1.0;
                    }
                    plan.with_temps(temps)?
                } else {
                    plan_ddpm(&alphas, &sp)?
                }
            }
        };
        if self.preset != PresetKind::Ddpm && self.terminal_unit_temperature {
            return Err(CliError::config("`terminal_unit_temperature` applies to the ddpm preset only"));
        }
        if let Some(t) = &self.temps {
            plan = plan.with_temps(t.clone())?;
        }
        if self.terminal_hold > 0 {
            plan = plan.with_terminal_hold(self.terminal_hold);
        }
        if let Some(k) = self.max_iterations {
            plan = plan.truncated(k);
        }
        Ok(plan)
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum ParamKind {
    VeDirect,
    VeResidual,
    VpEpsilon,
}

#[derive(Debug, Clone, Copy, Default, PartialEq, Eq, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum CondKind {
    #[default]
    LogSigma,
    TimeFraction,
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum SigmaKind {
    Uniform,
    VpDiscrete,
    Fixed,
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum WeightKind {
    InverseFourth,
    Balanced,
    Constant,
    Exponent,
}

#[derive(Debug, Clone, Copy, Default, PartialEq, Eq, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum OptimizerKind {
    #[default]
    Momentum,
    Adam,
}

#[derive(Debug, Clone, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct TrainSpec {
    pub parameterization: ParamKind,
    #[serde(default)]
    pub conditioning: CondKind,
    #[serde(default = "default_hidden")]
    pub hidden: Vec<usize>,
    pub sigma: SigmaKind,
    pub sigma_min: Option<f64>,
    pub sigma_max: Option<f64>,
    pub sigma_fixed: Option<f64>,
    pub weight: WeightKind,
    /// Constant for `constant`, power for `exponent`.
    pub weight_value: Option<f64>,
    #[serde(default = "default_batch")]
    pub batch_size: usize,
    pub steps: usize,
    pub learning_rate: f64,
    #[serde(default)]
    pub optimizer: OptimizerKind,
    pub momentum: Option<f64>,
    #[serde(default = "default_window")]
    pub smoothing_window: usize,
}

fn default_hidden() -> Vec<usize> {
    vec![128, 128]
}

fn default_batch() -> usize {
    64
}

fn default_window() -> usize {
    100
}

impl TrainSpec {
    pub fn parameterization(&self) -> Parameterization {
        match self.parameterization {
            ParamKind::VeDirect => Parameterization::VeDirect,
            ParamKind::VeResidual => Parameterization::VeResidual,
            ParamKind::VpEpsilon => Parameterization::VpEpsilon,
        }
    }

    pub fn conditioning(&self) -> Conditioning {
        match self.conditioning {
            CondKind::LogSigma => Conditioning::LogSigma,
            CondKind::TimeFraction => Conditioning::TimeFraction,
        }
    }

    pub fn sigma_distribution(&self, vp: Option<&AlphaBarSchedule64>) -> CliResult<SigmaDistribution<f64>> {
        let need = |v: Option<f64>, key: &str| {
            v.ok_or_else(|| CliError::config(format!("[train] sigma = {:?} needs `{key}`", self.sigma)))
        };
        Ok(match self.sigma {
            SigmaKind::Uniform => SigmaDistribution::Uniform {
                min: need(self.sigma_min, "sigma_min")?,
                max: need(self.sigma_max, "sigma_max")?,
            },
            SigmaKind::Fixed => SigmaDistribution::Fixed(need(self.sigma_fixed, "sigma_fixed")?),
            SigmaKind::VpDiscrete => SigmaDistribution::VpDiscrete(
                vp.cloned()
                    .ok_or_else(|| CliError::config("vp_discrete noise needs an alpha_linear [schedule]"))?,
            ),
        })
    }

    pub fn weight_rule(&self) -> CliResult<WeightRule<f64>> {
        let value = || {
            self.weight_value
                .ok_or_else(|| CliError::config(format!("[train] weight = {:?} needs `weight_value`", self.weight)))
        };
        Ok(match self.weight {
            WeightKind::InverseFourth => WeightRule::InverseFourth,
            WeightKind::Balanced => WeightRule::Balanced,
            WeightKind::Constant => WeightRule::Constant(value()?),
            WeightKind::Exponent => WeightRule::Exponent(value()?),
        })
    }

    pub fn optimizer(&self) -> Optimizer<f64> {
        match self.optimizer {
            OptimizerKind::Momentum => Optimizer::Momentum {
                beta: self.momentum.unwrap_or(0.9),
            },
            OptimizerKind::Adam => Optimizer::adam(),
        }
    }
}

#[derive(Debug, Clone, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct ConditionSpec {
    pub observation: PathBuf,
    pub ground_truth: Option<PathBuf>,
}

#[derive(Debug, Clone, Deserialize)]
#[serde(tag = "kind", rename_all = "snake_case", deny_unknown_fields)]
pub enum OperatorSpec {
    Identity,
    /// Keeps `keep` if given, else a seeded random `keep_fraction` of coordinates.
    Mask {
        keep_fraction: Option<f64>,
        keep: Option<Vec<usize>>,
    },
    BlockAverage {
        factor: usize,
    },
    Dense {
        rows: Vec<Vec<f64>>,
    },
}

#[derive(Debug, Clone, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct MeasurementSpec {
    pub ground_truth: PathBuf,
    pub operator: OperatorSpec,
    pub eta: f64,
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum MetricKind {
    W1,
    SlicedW1,
    Moments,
}

impl MetricKind {
    pub fn name(self) -> &'static str {
        match self {
            MetricKind::W1 => "w1",
            MetricKind::SlicedW1 => "sliced_w1",
            MetricKind::Moments => "moment_max_abs_z",
        }
    }
}

#[derive(Debug, Clone, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct EvalSpec {
    pub samples: Vec<PathBuf>,
    /// Compare against this sample file instead of draws from the target.
    pub reference: Option<PathBuf>,
    #[serde(default = "all_metrics")]
    pub metrics: Vec<MetricKind>,
    #[serde(default = "default_projections")]
    pub projections: usize,
}

/// Extra inputs of the bundled experiment configs.
#[derive(Debug, Clone, Default, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct ReproduceSpec {
    /// Schedule comparison: one sampler run per entry.
    #[serde(default)]
    pub runs: Vec<NamedRun>,
    /// Temperature sweep: terminal temperatures replacing `temp_end`.
    pub temperatures: Option<Vec<f64>>,
    /// Conditional experiment: one posterior run per operator.
    #[serde(default)]
    pub operators: Vec<OperatorSpec>,
    pub eta: Option<f64>,
}

#[derive(Debug, Clone, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct NamedRun {
    pub name: String,
    pub schedule: ScheduleSpec,
    pub plan: PlanSpec,
}

fn all_metrics() -> Vec<MetricKind> {
    vec![MetricKind::W1, MetricKind::SlicedW1, MetricKind::Moments]
}

fn default_projections() -> usize {
    200
}
