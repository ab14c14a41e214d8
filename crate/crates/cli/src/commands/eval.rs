use scorewalk::evaluation::{
    baseline_mean, moment_check, sliced_wasserstein, wasserstein1_1d, MetricReport, BASELINE_REPLICATES,
};
use scorewalk::{Error, GaussianMixture64};

use super::{derive_seed, Context};
use crate::config::{require, MetricKind};
use crate::error::{CliError, CliResult};
use crate::io;

pub const REPORT_FILE: &str = "eval.csv";

fn column(xs: &[Vec<f64>]) -> Vec<f64> {
    xs.iter().map(|x| x[0]).collect()
}

fn w1(a: &[Vec<f64>], b: &[Vec<f64>]) -> scorewalk::Result<f64> {
    wasserstein1_1d(&column(a), &column(b))
}

fn max_z(target: &GaussianMixture64) -> impl Fn(&[Vec<f64>]) -> scorewalk::Result<f64> + '_ {
    move |xs| Ok(moment_check(xs, &target.mean(), &target.covariance())?.max_abs_z())
}

/// Metrics of each sample file against either the target mixture (fresh
/// exact draws of matched size) or a reference sample file. Baselines are
/// the same metric between pairs of exact draws, averaged over
/// [`BASELINE_REPLICATES`] pairs; they are NaN without a target.
pub fn evaluate(
    samples: &[Vec<f64>],
    target: Option<&GaussianMixture64>,
    reference: Option<&[Vec<f64>]>,
    metrics: &[MetricKind],
    projections: usize,
    seed: u64,
) -> CliResult<Vec<MetricReport>> {
    let n = samples.len();
    if n == 0 {
        return Err(Error::Precondition("sample file has no rows".into()).into());
    }
    let d = samples[0].len();
    if let Some(t) = target {
        if t.dim() != d {
            return Err(Error::Dimension {
                context: "samples vs target",
                expected: t.dim(),
                found: d,
            }
            .into());
        }
    }
    let exact;
    let other: &[Vec<f64>] = match (reference, target) {
        (Some(r), _) => r,
        (None, Some(t)) => {
            exact = t.sample_n(n, derive_seed(seed, 10));
            &exact
        }
        (None, None) => return Err(CliError::config("evaluation needs a target or a reference sample file")),
    };
    if other.first().map(Vec::len) != Some(d) {
        return Err(Error::Dimension {
            context: "samples vs reference",
            expected: d,
            found: other.first().map_or(0, Vec::len),
        }
        .into());
    }
    let baseline_seed = derive_seed(seed, 11);
    let proj_seed = derive_seed(seed, 13);
    let sw = |a: &[Vec<f64>], b: &[Vec<f64>]| sliced_wasserstein(a, b, projections, proj_seed);
    let mut out = Vec::new();
    for &m in metrics {
        let (value, baseline) = match m {
            MetricKind::W1 => {
                if d != 1 {
                    log::warn!("w1 needs one-dimensional samples (d = {d}); skipped");
                    continue;
                }
                let base = match target {
                    Some(t) => baseline_mean(t, n, baseline_seed, BASELINE_REPLICATES, w1)?,
                    None => f64::NAN,
                };
                (w1(samples, other)?, base)
            }
            MetricKind::SlicedW1 => {
                let base = match target {
                    Some(t) => baseline_mean(t, n, baseline_seed, BASELINE_REPLICATES, sw)?,
                    None => f64::NAN,
                };
                (sw(samples, other)?, base)
            }
            MetricKind::Moments => {
                let Some(t) = target else {
                    log::warn!("moment check needs a target; skipped");
                    continue;
                };
                let z = max_z(t);
                (z(samples)?, z(&t.sample_n(n, derive_seed(seed, 12)))?)
            }
        };
        out.push(MetricReport {
            metric: m.name().to_string(),
            value,
            n_samples: n,
            baseline,
            seed,
        });
    }
    Ok(out)
}

/// Writes one report row per (file, metric) to `eval.csv`.
pub fn eval(ctx: &Context) -> CliResult<()> {
    let spec = require(&ctx.config.eval, "eval")?;
    if spec.samples.is_empty() {
        return Err(CliError::config("[eval] samples is empty"));
    }
    let target = if ctx.config.target.is_some() || ctx.config.toy_image.is_some() {
        Some(ctx.config.mixture()?)
    } else {
        None
    };
    let reference = spec.reference.as_ref().map(|p| io::read_samples(p)).transpose()?;
    let mut rows = Vec::new();
    for (i, path) in spec.samples.iter().enumerate() {
        let xs = io::read_samples(path)?;
        let reports = evaluate(
            &xs,
            target.as_ref(),
            reference.as_deref(),
            &spec.metrics,
            spec.projections,
            derive_seed(ctx.seed, i as u64),
        )?;
        let name = path.file_name().map_or_else(|| path.display().to_string(), |f| f.to_string_lossy().into_owned());
        rows.extend(reports.iter().map(|r| format!("{name},{}", r.to_csv_row())));
    }
    let header = format!("samples,{}", MetricReport::CSV_HEADER);
    let meta = ctx.meta().with("projections", spec.projections);
    io::write_csv(&ctx.path(REPORT_FILE), &meta, &header, &rows)?;
    let mut lines = vec![header];
    lines.extend(rows);
    io::report(ctx.quiet, &lines);
    Ok(())
}
