use scorewalk::training::{train as fit, Checkpoint, SigmaDistributionRecord, TrainConfig};
use scorewalk::{Error, MlpDenoiser64};

use super::{derive_seed, Context};
use crate::config::{require, ScheduleSpec};
use crate::error::CliResult;
use crate::io::{self, sha256_hex};

pub const CHECKPOINT_FILE: &str = "model.ckpt";
pub const SIDECAR_FILE: &str = "model.toml";
pub const LOSS_FILE: &str = "losses.csv";

/// Writes `model.ckpt`, its `model.toml` sidecar and `losses.csv`. On
/// divergence the last good parameters are still written, then the error
/// is returned.
pub fn train(ctx: &Context) -> CliResult<()> {
    let spec = require(&ctx.config.train, "train")?;
    let gmm = ctx.config.mixture()?;
    let vp = match &ctx.config.schedule {
        Some(s @ ScheduleSpec::AlphaLinear { .. }) => Some(s.alpha_schedule()?),
        _ => None,
    };
    let d = gmm.dim();
    let mut widths = vec![d + 1];
    widths.extend(&spec.hidden);
    widths.push(d);
    let model = MlpDenoiser64::init(
        widths,
        spec.parameterization(),
        spec.conditioning(),
        vp.clone(),
        derive_seed(ctx.seed, 1),
    )?;
    let cfg = TrainConfig {
        sigma: spec.sigma_distribution(vp.as_ref())?,
        weight: spec.weight_rule()?,
        batch_size: spec.batch_size,
        steps: spec.steps,
        learning_rate: spec.learning_rate,
        optimizer: spec.optimizer(),
        seed: derive_seed(ctx.seed, 2),
        smoothing_window: spec.smoothing_window,
    };
    log::info!(
        "training {} denoiser for {} steps (batch {})",
        spec.parameterization().name(),
        cfg.steps,
        cfg.batch_size
    );
    match fit(&gmm, model, &cfg) {
        Ok(outcome) => {
            write_checkpoint(ctx, &outcome.checkpoint, "complete")?;
            let rows: Vec<String> = outcome.losses.iter().enumerate().map(|(i, l)| format!("{i},{l}")).collect();
            let meta = ctx.meta().with("parameterization", spec.parameterization().name());
            io::write_csv(&ctx.path(LOSS_FILE), &meta, "step,loss", &rows)?;
            io::report(
                ctx.quiet,
                &[format!(
                    "trained {} steps, final smoothed loss {}",
                    outcome.checkpoint.meta.steps, outcome.checkpoint.meta.final_loss
                )],
            );
            Ok(())
        }
        Err(Error::TrainingDiverged { step, loss, last_good }) => {
            log::warn!(
                "training diverged at step {step} (loss {loss:e}); keeping the last good parameters in {}",
                ctx.path(CHECKPOINT_FILE).display()
            );
            write_checkpoint(ctx, &last_good, "diverged")?;
            Err(Error::TrainingDiverged { step, loss, last_good }.into())
        }
        Err(e) => Err(e.into()),
    }
}

fn toml_float(v: f64) -> String {
    if v.is_nan() {
        "nan".into()
    } else if v.is_infinite() {
        if v > 0.0 { "inf" } else { "-inf" }.into()
    } else {
        format!("{v:?}")
    }
}

fn write_checkpoint(ctx: &Context, ck: &Checkpoint, status: &str) -> CliResult<()> {
    let bytes = ck.to_bytes();
    io::write_bytes(&ctx.path(CHECKPOINT_FILE), &bytes)?;
    let sigma = match &ck.meta.sigma {
        SigmaDistributionRecord::Uniform { min, max } => {
            format!("sigma_distribution = \"uniform\"\nsigma_min = {}\nsigma_max = {}\n", toml_float(*min), toml_float(*max))
        }
        SigmaDistributionRecord::VpDiscrete { alphas } => {
            format!("sigma_distribution = \"vp_discrete\"\nvp_steps = {}\n", alphas.len())
        }
        SigmaDistributionRecord::Fixed(s) => {
            format!("sigma_distribution = \"fixed\"\nsigma_fixed = {}\n", toml_float(*s))
        }
    };
    let widths = ck.widths.iter().map(|w| w.to_string()).collect::<Vec<_>>().join(", ");
    let body = format!(
        "checkpoint = \"{CHECKPOINT_FILE}\"\ncheckpoint_sha256 = \"{}\"\nstatus = \"{status}\"\nparameterization = \"{}\"\nconditioning = \"{}\"\nwidths = [{widths}]\nsteps = {}\nfinal_loss = {}\ntraining_seed = \"{}\"\n{sigma}",
        sha256_hex(&bytes),
        ck.parameterization.name(),
        ck.conditioning.name(),
        ck.meta.steps,
        toml_float(ck.meta.final_loss),
        ck.meta.seed,
    );
    io::write_bytes(&ctx.path(SIDECAR_FILE), (ctx.meta().header() + &body).as_bytes())
}
