use std::path::Path;

use scorewalk::conditional::{pixelwise_mean, posterior_sample};
use scorewalk::evaluation::{
    baseline_mean, moment_check, sample_moments, sliced_wasserstein, MetricReport, BASELINE_REPLICATES,
};
use scorewalk::sampler::run;
use scorewalk::GaussianMixture64;

use super::measure::{build_operator, measure, write_observation};
use super::sample::{plan_meta, plan_text, psnr_rows, psnr_summary, sampler_config, surviving, write_grid};
use super::{derive_seed, mean_diagonal, Context, GlobalArgs};
use crate::config::{require, OperatorSpec, PlanSpec};
use crate::error::{CliError, CliResult};
use crate::io::{self, coord_header, sample_rows, Image};

pub const FIGURE_IDS: [&str; 3] = ["schedules", "temperature", "conditional"];

const SCHEDULES_TOML: &str = include_str!("../../configs/reproduce_schedules.toml");
const TEMPERATURE_TOML: &str = include_str!("../../configs/reproduce_temperature.toml");
const CONDITIONAL_TOML: &str = include_str!("../../configs/reproduce_conditional.toml");

/// The bundled config for a figure id.
pub fn bundled_config(figure: &str) -> CliResult<&'static str> {
    match figure {
        "schedules" => Ok(SCHEDULES_TOML),
        "temperature" => Ok(TEMPERATURE_TOML),
        "conditional" => Ok(CONDITIONAL_TOML),
        other => Err(CliError::config(format!(
            "unknown figure id {other:?}; valid ids: {}",
            FIGURE_IDS.join(", ")
        ))),
    }
}

/// Runs a toy-scale experiment into `<out>/<figure>/`. `--config`
/// replaces the bundled config.
pub fn reproduce(figure: &str, args: &GlobalArgs) -> CliResult<()> {
    let bundled = bundled_config(figure)?;
    let (mut ctx, text) = match &args.config {
        Some(p) => (Context::load("reproduce", args)?, io::read_to_string(p)?),
        None => (Context::from_text("reproduce", bundled, Path::new("."), args)?, bundled.to_string()),
    };
    ctx.out = ctx.out.join(figure);
    io::write_bytes(&ctx.path("config.toml"), (ctx.meta().header() + &text).as_bytes())?;
    match figure {
        "schedules" => schedules(&ctx),
        "temperature" => temperature(&ctx),
        _ => conditional(&ctx),
    }
}

fn schedules(ctx: &Context) -> CliResult<()> {
    let spec = require(&ctx.config.reproduce, "reproduce")?;
    if spec.runs.is_empty() {
        return Err(CliError::config("[reproduce] needs at least one [[reproduce.runs]] entry"));
    }
    let target = ctx.config.mixture()?;
    let proj_seed = derive_seed(ctx.seed, 20);
    let sw = |a: &[Vec<f64>], b: &[Vec<f64>]| sliced_wasserstein(a, b, 200, proj_seed);
    let mut rows = Vec::new();
    for r in &spec.runs {
        let plan = r.plan.build(&r.schedule)?;
        let output = run(&plan, &target, 0..ctx.chains, &sampler_config(&r.plan, ctx.seed))?;
        let kept = surviving(&output)?;
        let xs: Vec<Vec<f64>> = kept.iter().map(|(_, x)| x.clone()).collect();
        let n = xs.len();
        let exact = target.sample_n(n, derive_seed(ctx.seed, 21));
        let report = MetricReport {
            metric: "sliced_w1".into(),
            value: sw(&xs, &exact)?,
            n_samples: n,
            baseline: baseline_mean(&target, n, derive_seed(ctx.seed, 22), BASELINE_REPLICATES, sw)?,
            seed: ctx.seed,
        };
        let meta = plan_meta(ctx.meta().with("run", &r.name), &r.plan, r.schedule.name(), &plan);
        io::write_bytes(&ctx.path(&format!("plan_{}.csv", r.name)), (meta.header() + &plan_text(&plan)).as_bytes())?;
        io::write_csv(
            &ctx.path(&format!("samples_{}.csv", r.name)),
            &meta,
            &format!("chain,{}", coord_header(target.dim())),
            &sample_rows(&kept),
        )?;
        rows.push(format!("{},{}", r.name, report.to_csv_row()));
    }
    let header = format!("schedule,{}", MetricReport::CSV_HEADER);
    io::write_csv(&ctx.path("metrics.csv"), &ctx.meta().with("chains", ctx.chains), &header, &rows)?;
    let mut lines = vec![header];
    lines.extend(rows);
    io::report(ctx.quiet, &lines);
    Ok(())
}

/// Result of one terminal temperature in the sweep.
#[derive(Debug, Clone, PartialEq)]
pub struct TemperatureRow {
    pub temperature: f64,
    pub n_samples: usize,
    /// Coordinate-averaged sample mean.
    pub mean: f64,
    pub variance: f64,
    pub predicted: f64,
    /// Average z-score of the diagonal covariance entries against the
    /// untempered law; negative means too narrow.
    pub variance_z: f64,
    pub max_abs_z: f64,
}

/// Least-squares slope through the origin of variance against temperature.
pub fn fitted_slope(rows: &[TemperatureRow]) -> f64 {
    let num: f64 = rows.iter().map(|r| r.temperature * r.variance).sum();
    let den: f64 = rows.iter().map(|r| r.temperature * r.temperature).sum();
    num / den
}

/// Samples with the terminal temperature set to each of `temps` and
/// compares the variance with `T(s² + σ_last²)`.
pub fn temperature_sweep(
    target: &GaussianMixture64,
    base: &PlanSpec,
    schedule: &crate::config::ScheduleSpec,
    temps: &[f64],
    chains: u64,
    seed: u64,
) -> CliResult<(Vec<TemperatureRow>, f64)> {
    let mut rows = Vec::new();
    let mut sigma_last = f64::NAN;
    for &t in temps {
        let mut spec = base.clone();
        spec.temp_end = Some(t);
        let plan = spec.build(schedule)?;
        sigma_last = *plan.sigmas().last().ok_or_else(|| CliError::config("temperature sweep needs a non-empty plan"))?;
        let output = run(&plan, target, 0..chains, &sampler_config(&spec, seed))?;
        let xs: Vec<Vec<f64>> = surviving(&output)?.into_iter().map(|(_, x)| x).collect();
        let smoothed = target.smoothed(sigma_last)?;
        let (mean, cov) = sample_moments(&xs)?;
        let report = moment_check(&xs, &smoothed.mean(), &smoothed.covariance())?;
        let d = cov.rows();
        rows.push(TemperatureRow {
            temperature: t,
            n_samples: xs.len(),
            mean: mean.iter().sum::<f64>() / d as f64,
            variance: mean_diagonal(&cov),
            predicted: t * mean_diagonal(&smoothed.covariance()),
            variance_z: (0..d).map(|i| report.cov_z[(i, i)]).sum::<f64>() / d as f64,
            max_abs_z: report.max_abs_z(),
        });
    }
    Ok((rows, sigma_last))
}

fn temperature(ctx: &Context) -> CliResult<()> {
    let spec = require(&ctx.config.reproduce, "reproduce")?;
    let temps = spec
        .temperatures
        .as_ref()
        .ok_or_else(|| CliError::config("[reproduce] needs `temperatures`"))?;
    let base = require(&ctx.config.plan, "plan")?;
    let schedule = require(&ctx.config.schedule, "schedule")?;
    let target = ctx.config.mixture()?;
    let (rows, sigma_last) = temperature_sweep(&target, base, schedule, temps, ctx.chains, ctx.seed)?;
    let expected = mean_diagonal(&target.covariance()) + sigma_last * sigma_last;
    let slope = fitted_slope(&rows);
    let meta = ctx.meta().with("chains", ctx.chains).with("sigma_last", sigma_last);
    let lines: Vec<String> = rows
        .iter()
        .map(|r| {
            format!(
                "{},{},{},{},{},{},{}",
                r.temperature,
                r.variance,
                r.predicted,
                r.variance / r.predicted,
                r.variance_z,
                r.max_abs_z,
                r.mean
            )
        })
        .collect();
    let header = "temperature,variance,predicted_variance,ratio,variance_z,max_abs_z,mean";
    io::write_csv(&ctx.path("metrics.csv"), &meta, header, &lines)?;
    let fit = vec![
        format!("fitted_slope,{slope}"),
        format!("expected_slope,{expected}"),
        format!("relative_error,{}", (slope - expected).abs() / expected),
    ];
    io::write_csv(&ctx.path("fit.csv"), &meta, "quantity,value", &fit)?;
    let mut out = vec![header.to_string()];
    out.extend(lines);
    out.extend(fit);
    io::report(ctx.quiet, &out);
    Ok(())
}

fn operator_name(op: &OperatorSpec) -> &'static str {
    match op {
        OperatorSpec::Identity => "identity",
        OperatorSpec::Mask { .. } => "mask",
        OperatorSpec::BlockAverage { .. } => "block_average",
        OperatorSpec::Dense { .. } => "dense",
    }
}

fn conditional(ctx: &Context) -> CliResult<()> {
    let spec = require(&ctx.config.reproduce, "reproduce")?;
    let eta = spec.eta.ok_or_else(|| CliError::config("[reproduce] needs `eta`"))?;
    let shape = ctx
        .config
        .image_shape()
        .ok_or_else(|| CliError::config("conditional experiment needs a [toy_image] table"))?;
    let plan_spec = require(&ctx.config.plan, "plan")?;
    let schedule = require(&ctx.config.schedule, "schedule")?;
    let plan = plan_spec.build(schedule)?;
    let target = ctx.config.mixture()?;
    let truth = target.sample_n(1, derive_seed(ctx.seed, 30)).remove(0);
    io::write_pgm(&ctx.path("truth.pgm"), &ctx.meta(), &Image::new(shape.0, shape.1, truth.clone())?)?;

    let mut rows = Vec::new();
    let mut used: Vec<String> = Vec::new();
    for (i, op_spec) in spec.operators.iter().enumerate() {
        let mut name = operator_name(op_spec).to_string();
        if used.contains(&name) {
            name = format!("{name}_{i}");
        }
        used.push(name.clone());
        let dir = ctx.out.join(&name);
        let op = build_operator(op_spec, truth.len(), Some(shape), derive_seed(ctx.seed, 31 + i as u64))?;
        let obs = measure(op, &truth, eta, derive_seed(ctx.seed, 41 + i as u64))?;
        let meta = plan_meta(ctx.meta().with("operator", &name), plan_spec, schedule.name(), &plan)
            .with("eta", eta)
            .with("observed", obs.y().len());
        write_observation(&dir, &meta, &obs, Some(shape))?;
        let output = posterior_sample(&plan, &target, &obs, 0..ctx.chains, &sampler_config(plan_spec, ctx.seed))?;
        let kept = surviving(&output)?;
        let xs: Vec<Vec<f64>> = kept.iter().map(|(_, x)| x.clone()).collect();
        let mean = pixelwise_mean(&xs)?;
        let s = psnr_summary(&kept, &mean, &truth)?;
        io::write_csv(&dir.join("psnr.csv"), &meta, "kind,chain,psnr", &psnr_rows(&s))?;
        write_grid(&dir.join("samples.pgm"), &meta, &kept, shape)?;
        io::write_pgm(&dir.join("mean.pgm"), &meta, &Image::new(shape.0, shape.1, mean)?)?;
        rows.push(format!(
            "{name},{},{},{},{},{},{}",
            obs.y().len(),
            kept.len(),
            s.of_mean,
            s.mean_of_samples,
            s.of_average_mse,
            s.of_mean > s.mean_of_samples
        ));
    }
    let header = "operator,observed,n_samples,psnr_of_mean,mean_psnr_of_samples,psnr_of_average_mse,mean_beats_samples";
    io::write_csv(&ctx.path("metrics.csv"), &ctx.meta().with("eta", eta), header, &rows)?;
    let mut lines = vec![header.to_string()];
    lines.extend(rows);
    io::report(ctx.quiet, &lines);
    Ok(())
}
