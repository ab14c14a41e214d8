mod eval;
mod measure;
pub mod reproduce;
mod sample;
mod train;

use std::path::{Path, PathBuf};

use rand::SeedableRng;
use rand_chacha::ChaCha8Rng;

use scorewalk::schedules::SamplerPlan;
use scorewalk::training::{Checkpoint, SigmaDistributionRecord};
use scorewalk::{AlphaBarSchedule64, GaussianMixture64, MlpDenoiser64, ScoreSource};

use crate::config::{RunConfig, SourceKind};
use crate::error::{CliError, CliResult};
use crate::io::{self, sha256_hex, Meta};

pub use eval::eval;
pub use measure::make_measurement;
pub use reproduce::{reproduce, FIGURE_IDS};
pub use sample::{sample, sample_cond};
pub use train::train;

/// Default output root when neither `--out`, the config nor
/// `SCOREWALK_OUT` names one.
pub const DEFAULT_OUT: &str = "scorewalk-out";
pub const OUT_ENV: &str = "SCOREWALK_OUT";
pub const DEFAULT_CHAINS: u64 = 1000;

/// Flags shared by every subcommand.
#[derive(Debug, Clone, Default)]
pub struct GlobalArgs {
    pub config: Option<PathBuf>,
    pub seed: Option<u64>,
    pub out: Option<PathBuf>,
    pub chains: Option<u64>,
    pub quiet: bool,
}

/// A parsed config with command-line overrides applied.
#[derive(Debug, Clone)]
pub struct Context {
    pub command: &'static str,
    pub config: RunConfig,
    pub config_sha256: String,
    pub seed: u64,
    pub out: PathBuf,
    pub chains: u64,
    pub quiet: bool,
}

impl Context {
    pub fn load(command: &'static str, args: &GlobalArgs) -> CliResult<Self> {
        let path = args
            .config
            .as_ref()
            .ok_or_else(|| CliError::config(format!("`{command}` needs --config PATH")))?;
        let text = io::read_to_string(path)?;
        let base = path.parent().map(Path::to_path_buf).unwrap_or_default();
        Self::from_text(command, &text, &base, args)
    }

    /// `text` is hashed byte for byte; relative paths resolve against `base`.
    pub fn from_text(command: &'static str, text: &str, base: &Path, args: &GlobalArgs) -> CliResult<Self> {
        let mut config = RunConfig::parse(text)?;
        config.resolve_paths(base);
        let out = args
            .out
            .clone()
            .or_else(|| config.out.clone())
            .or_else(|| std::env::var_os(OUT_ENV).map(PathBuf::from))
            .unwrap_or_else(|| PathBuf::from(DEFAULT_OUT));
        let chains = args.chains.or(config.chains).unwrap_or(DEFAULT_CHAINS);
        if chains == 0 {
            return Err(CliError::config("chain count must be positive"));
        }
        Ok(Self {
            command,
            seed: args.seed.or(config.seed).unwrap_or(0),
            config_sha256: sha256_hex(text.as_bytes()),
            config,
            out,
            chains,
            quiet: args.quiet,
        })
    }

    pub fn meta(&self) -> Meta {
        Meta::new(self.command, &self.config_sha256, self.seed)
    }

    pub fn path(&self, name: &str) -> PathBuf {
        self.out.join(name)
    }
}

/// Independent stream for a named purpose, so adding draws in one place
/// leaves the others unchanged.
pub(crate) fn stream_rng(seed: u64, stream: u64) -> ChaCha8Rng {
    let mut rng = ChaCha8Rng::seed_from_u64(seed);
    rng.set_stream(stream);
    rng
}

/// Seed for an auxiliary computation, distinct per `tag`.
pub(crate) fn derive_seed(seed: u64, tag: u64) -> u64 {
    seed.wrapping_mul(0x9E37_79B9_7F4A_7C15).wrapping_add(tag.wrapping_mul(0xD1B5_4A32_D192_ED03) ^ tag)
}

/// A score source plus what the metadata needs to identify it.
pub(crate) struct Source {
    pub model: Box<dyn ScoreSource<f64>>,
    pub label: &'static str,
    pub sha256: String,
    /// Noise range the source is valid on, when it has one.
    pub sigma_range: Option<(f64, f64)>,
    pub strict: bool,
}

pub(crate) fn mixture_hash(g: &GaussianMixture64) -> String {
    let covs: Vec<Vec<Vec<f64>>> = g.covariances().iter().map(|c| c.to_rows()).collect();
    sha256_hex(format!("{:?}|{:?}|{:?}", g.weights(), g.means(), covs).as_bytes())
}

pub(crate) fn resolve_source(config: &RunConfig) -> CliResult<Source> {
    let spec = config.source.clone().unwrap_or_default();
    match spec.kind {
        SourceKind::Analytic => {
            let g = config.mixture()?;
            Ok(Source {
                sha256: mixture_hash(&g),
                model: Box::new(g),
                label: "analytic",
                sigma_range: None,
                strict: spec.strict,
            })
        }
        SourceKind::Checkpoint => {
            let path = spec
                .checkpoint
                .as_ref()
                .ok_or_else(|| CliError::config("[source] kind = \"checkpoint\" needs `checkpoint`"))?;
            let bytes = std::fs::read(path).map_err(|e| CliError::io(path, e))?;
            let ck = Checkpoint::from_bytes(&bytes).map_err(|e| crate::error::in_file(path, e))?;
            let range = match &ck.meta.sigma {
                SigmaDistributionRecord::Uniform { min, max } => (*min, *max),
                SigmaDistributionRecord::Fixed(s) => (*s, *s),
                SigmaDistributionRecord::VpDiscrete { alphas } => {
                    let s = AlphaBarSchedule64::from_alphas(alphas.clone())?;
                    (s.sigma_min(), s.sigma_max())
                }
            };
            Ok(Source {
                model: Box::new(MlpDenoiser64::from_checkpoint(&ck)?),
                label: "checkpoint",
                sha256: sha256_hex(&bytes),
                sigma_range: Some(range),
                strict: spec.strict,
            })
        }
    }
}

/// Warns, or errors under `strict`, when the plan leaves the source's range.
pub(crate) fn check_sigma_range(plan: &SamplerPlan<f64>, source: &Source) -> CliResult<()> {
    let (Some((lo, hi)), Some(&top), Some(&bottom)) =
        (source.sigma_range, plan.sigmas().first(), plan.sigmas().last())
    else {
        return Ok(());
    };
    let slack = 1e-9;
    if top > hi * (1.0 + slack) || bottom < lo * (1.0 - slack) {
        let msg = format!(
            "plan noise range [{bottom}, {top}] exceeds the source's trained range [{lo}, {hi}]"
        );
        if source.strict {
            return Err(CliError::config(msg));
        }
        log::warn!("{msg}; the source will be queried outside its training range");
    }
    Ok(())
}

/// Average diagonal entry, used as a per-coordinate variance summary.
pub(crate) fn mean_diagonal(m: &scorewalk::Matrix64) -> f64 {
    let d = m.rows();
    (0..d).map(|i| m[(i, i)]).sum::<f64>() / d as f64
}
