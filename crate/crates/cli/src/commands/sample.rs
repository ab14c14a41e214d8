use std::path::Path;

use scorewalk::conditional::{mse, pixelwise_mean, posterior_sample, psnr};
use scorewalk::sampler::{run, RunOutput};
use scorewalk::{Error, SamplerConfig, SamplerPlan64};

use super::{check_sigma_range, resolve_source, Context, Source};
use crate::config::{require, PlanSpec};
use crate::error::{CliError, CliResult};
use crate::io::{self, coord_header, join, sample_rows, sha256_hex, tile_grid, Image, Meta, ObservationFile};

/// Images tiled into the preview grid.
const GRID_TILES: usize = 16;
const GRID_COLS: usize = 4;

pub(crate) fn plan_text(plan: &SamplerPlan64) -> String {
    let mut buf = Vec::new();
    plan.write_columns(&mut buf).expect("writing to a Vec cannot fail");
    String::from_utf8(buf).expect("plan columns are ASCII")
}

pub(crate) fn plan_meta(meta: Meta, spec: &PlanSpec, schedule: &str, plan: &SamplerPlan64) -> Meta {
    let temps = plan.temps();
    meta.with("preset", spec.preset.name())
        .with("schedule", schedule)
        .with("iterations", plan.len())
        .with("inner_steps", spec.inner_steps)
        .with("form", format!("{:?}", spec.form).to_lowercase())
        .with("init_sigma", plan.init_sigma())
        .with("temperature_first", temps.first().map_or("none".into(), |t| t.to_string()))
        .with("temperature_last", temps.last().map_or("none".into(), |t| t.to_string()))
        .with("tempered", plan.is_tempered())
        .with("plan_sha256", sha256_hex(plan_text(plan).as_bytes()))
}

pub(crate) fn sampler_config(spec: &PlanSpec, seed: u64) -> SamplerConfig<f64> {
    let mut cfg = SamplerConfig::new(seed);
    cfg.form = spec.template_form();
    cfg.inner_steps = spec.inner_steps;
    cfg.record_stride = spec.record_stride;
    cfg
}

/// Logs failed chains; fails only if every chain failed.
pub(crate) fn surviving(output: &RunOutput<f64>) -> CliResult<Vec<(u64, Vec<f64>)>> {
    let failures = output.failures();
    for (chain, e) in &failures {
        log::warn!("chain {chain} dropped: {e}");
    }
    let kept = output.labeled_samples();
    if kept.is_empty() && !failures.is_empty() {
        return Err(Error::Numeric(format!("all {} chains failed; first: {}", failures.len(), failures[0].1)).into());
    }
    Ok(kept)
}

pub(crate) fn write_grid(path: &Path, meta: &Meta, samples: &[(u64, Vec<f64>)], shape: (usize, usize)) -> CliResult<()> {
    let imgs: Vec<Vec<f64>> = samples.iter().take(GRID_TILES).map(|(_, x)| x.clone()).collect();
    io::write_pgm(path, meta, &tile_grid(&imgs, shape.0, shape.1, GRID_COLS))
}

fn source_meta(meta: Meta, source: &Source, chains: u64, failed: usize) -> Meta {
    meta.with("source", source.label)
        .with("source_sha256", &source.sha256)
        .with("chains", chains)
        .with("failed_chains", failed)
}

/// Unconditional sampling: `samples.csv`, `plan.csv`, optional
/// `trajectory.csv` and, for image data, `grid.pgm`.
pub fn sample(ctx: &Context) -> CliResult<()> {
    let spec = require(&ctx.config.plan, "plan")?;
    let schedule = require(&ctx.config.schedule, "schedule")?;
    let plan = spec.build(schedule)?;
    let source = resolve_source(&ctx.config)?;
    check_sigma_range(&plan, &source)?;
    let d = source.model.dim();
    log::info!("sampling {} chains over {} iterations in {d} dimensions", ctx.chains, plan.len());

    let output = run(&plan, source.model.as_ref(), 0..ctx.chains, &sampler_config(spec, ctx.seed))?;
    let kept = surviving(&output)?;
    let failed = output.failures().len();
    let meta = source_meta(plan_meta(ctx.meta(), spec, schedule.name(), &plan), &source, ctx.chains, failed);

    io::write_bytes(&ctx.path("plan.csv"), (meta.header() + &plan_text(&plan)).as_bytes())?;
    io::write_csv(&ctx.path("samples.csv"), &meta, &format!("chain,{}", coord_header(d)), &sample_rows(&kept))?;
    let trajectories = output.trajectories();
    if !trajectories.is_empty() {
        let rows: Vec<String> = trajectories
            .iter()
            .flat_map(|(c, t)| t.records.iter().map(move |(k, x)| format!("{c},{k},{}", join(x))))
            .collect();
        let header = format!("chain,k,{}", coord_header(d));
        io::write_csv(&ctx.path("trajectory.csv"), &meta, &header, &rows)?;
    }
    if let Some(shape) = ctx.config.image_shape() {
        write_grid(&ctx.path("grid.pgm"), &meta, &kept, shape)?;
    }
    io::report(
        ctx.quiet,
        &[format!(
            "wrote {} samples ({} failed) to {}",
            kept.len(),
            failed,
            ctx.path("samples.csv").display()
        )],
    );
    Ok(())
}

/// Per-sample PSNRs, their mean, and the PSNR of the pixel-wise mean.
/// `of_average_mse` converts the mean per-sample MSE instead of averaging
/// decibels; it never exceeds `of_mean`.
#[derive(Debug, Clone, PartialEq)]
pub struct PsnrSummary {
    pub per_sample: Vec<(u64, f64)>,
    pub mean_of_samples: f64,
    pub of_average_mse: f64,
    pub of_mean: f64,
}

pub fn psnr_summary(samples: &[(u64, Vec<f64>)], mean: &[f64], truth: &[f64]) -> CliResult<PsnrSummary> {
    let per_sample = samples
        .iter()
        .map(|(c, x)| Ok((*c, psnr(x, truth)?)))
        .collect::<Result<Vec<_>, Error>>()?;
    let n = per_sample.len().max(1) as f64;
    let mean_of_samples = per_sample.iter().map(|p| p.1).sum::<f64>() / n;
    let avg_mse = samples.iter().map(|(_, x)| mse(x, truth)).sum::<Result<f64, Error>>()? / n;
    Ok(PsnrSummary {
        mean_of_samples,
        of_average_mse: -10.0 * avg_mse.log10(),
        of_mean: psnr(mean, truth)?,
        per_sample,
    })
}

pub(crate) fn psnr_rows(s: &PsnrSummary) -> Vec<String> {
    let mut rows: Vec<String> = s.per_sample.iter().map(|(c, p)| format!("sample,{c},{p}")).collect();
    rows.push(format!("mean_of_samples,,{}", s.mean_of_samples));
    rows.push(format!("average_mse,,{}", s.of_average_mse));
    rows.push(format!("pixelwise_mean,,{}", s.of_mean));
    rows
}

/// Posterior sampling: `samples.csv`, `mean.csv`, and `psnr.csv` when a
/// ground truth is configured; PGM previews for image data.
pub fn sample_cond(ctx: &Context) -> CliResult<()> {
    let spec = require(&ctx.config.plan, "plan")?;
    let schedule = require(&ctx.config.schedule, "schedule")?;
    let cond = require(&ctx.config.condition, "condition")?;
    let plan = spec.build(schedule)?;
    let source = resolve_source(&ctx.config)?;
    check_sigma_range(&plan, &source)?;
    let obs_file = ObservationFile::read(&cond.observation)?;
    let obs = obs_file.observation()?;
    let d = source.model.dim();
    if obs.in_dim() != d {
        return Err(Error::Dimension {
            context: "observation operator input vs score source",
            expected: d,
            found: obs.in_dim(),
        }
        .into());
    }
    let truth = match &cond.ground_truth {
        Some(p) => {
            let (x, _) = io::read_vector(p)?;
            if x.len() != d {
                return Err(Error::Dimension {
                    context: "ground truth vs score source",
                    expected: d,
                    found: x.len(),
                }
                .into());
            }
            Some(x)
        }
        None => None,
    };
    let shape = ctx.config.image_shape().or(match (obs_file.image_width, obs_file.image_height) {
        (Some(w), Some(h)) if w * h == d => Some((w, h)),
        _ => None,
    });
    log::info!("posterior sampling {} chains, eta = {}, rho = {}", ctx.chains, obs.eta(), obs.rho());

    let output = posterior_sample(&plan, source.model.as_ref(), &obs, 0..ctx.chains, &sampler_config(spec, ctx.seed))?;
    let kept = surviving(&output)?;
    let failed = output.failures().len();
    let obs_bytes = std::fs::read(&cond.observation).map_err(|e| CliError::io(&cond.observation, e))?;
    let meta = source_meta(plan_meta(ctx.meta(), spec, schedule.name(), &plan), &source, ctx.chains, failed)
        .with("observation_sha256", sha256_hex(&obs_bytes))
        .with("eta", obs.eta())
        .with("step_bound", obs.step_bound());

    let header = coord_header(d);
    io::write_csv(&ctx.path("samples.csv"), &meta, &format!("chain,{header}"), &sample_rows(&kept))?;
    let xs: Vec<Vec<f64>> = kept.iter().map(|(_, x)| x.clone()).collect();
    let mean = pixelwise_mean(&xs)?;
    io::write_csv(&ctx.path("mean.csv"), &meta, &header, &[join(&mean)])?;
    if let Some((w, h)) = shape {
        write_grid(&ctx.path("samples.pgm"), &meta, &kept, (w, h))?;
        io::write_pgm(&ctx.path("mean.pgm"), &meta, &Image::new(w, h, mean.clone())?)?;
    }
    let mut lines = vec![format!("wrote {} posterior samples ({} failed)", kept.len(), failed)];
    if let Some(t) = truth {
        let s = psnr_summary(&kept, &mean, &t)?;
        io::write_csv(&ctx.path("psnr.csv"), &meta, "kind,chain,psnr", &psnr_rows(&s))?;
        lines.push(format!(
            "PSNR: pixel-wise mean {:.3} dB, mean over samples {:.3} dB, mse of mean {}",
            s.of_mean,
            s.mean_of_samples,
            mse(&mean, &t)?
        ));
    }
    io::report(ctx.quiet, &lines);
    Ok(())
}
