use rand::seq::index;
use rand::Rng;
use rand_distr::StandardNormal;

use scorewalk::conditional::{ForwardOperator, LinearObservation};
use scorewalk::{Error, Matrix64};

use super::{stream_rng, Context};
use crate::config::{require, OperatorSpec};
use crate::error::{CliError, CliResult};
use crate::io::{self, sha256_hex, Image, Meta, ObservationFile, OperatorRecord};

const MASK_STREAM: u64 = 1;
const NOISE_STREAM: u64 = 2;

pub(crate) fn build_operator(
    spec: &OperatorSpec,
    dim: usize,
    shape: Option<(usize, usize)>,
    seed: u64,
) -> CliResult<ForwardOperator<f64>> {
    let op = match spec {
        OperatorSpec::Identity => ForwardOperator::identity(dim),
        OperatorSpec::Mask { keep: Some(keep), keep_fraction: None } => ForwardOperator::Mask {
            dim,
            keep: keep.clone(),
        },
        OperatorSpec::Mask { keep: None, keep_fraction: Some(f) } => {
            if !(*f > 0.0 && *f <= 1.0) {
                return Err(CliError::config(format!("keep_fraction {f} must lie in (0, 1]")));
            }
            let m = ((f * dim as f64).round() as usize).clamp(1, dim);
            let mut keep = index::sample(&mut stream_rng(seed, MASK_STREAM), dim, m).into_vec();
            keep.sort_unstable();
            ForwardOperator::Mask { dim, keep }
        }
        OperatorSpec::Mask { .. } => {
            return Err(CliError::config("mask operator needs exactly one of `keep` or `keep_fraction`"))
        }
        OperatorSpec::BlockAverage { factor } => {
            let (width, height) =
                shape.ok_or_else(|| CliError::config("block_average needs an image-shaped ground truth (.pgm)"))?;
            ForwardOperator::BlockAverage {
                width,
                height,
                factor: *factor,
            }
        }
        OperatorSpec::Dense { rows } => ForwardOperator::Dense(Matrix64::from_rows(rows)?),
    };
    op.validate()?;
    if op.in_dim() != dim {
        return Err(Error::Dimension {
            context: "operator input vs ground truth",
            expected: dim,
            found: op.in_dim(),
        }
        .into());
    }
    Ok(op)
}

/// `y = A x + η n` with `n` from the seeded noise stream.
pub(crate) fn measure(op: ForwardOperator<f64>, x: &[f64], eta: f64, seed: u64) -> CliResult<LinearObservation<f64>> {
    if !eta.is_finite() || eta <= 0.0 {
        return Err(CliError::config(format!("measurement noise eta must be positive, got {eta}")));
    }
    let mut rng = stream_rng(seed, NOISE_STREAM);
    let y: Vec<f64> = op
        .apply(x)
        .into_iter()
        .map(|v| v + eta * rng.sample::<f64, _>(StandardNormal))
        .collect();
    Ok(LinearObservation::new(op, y, eta)?)
}

/// The observation viewed as an image: block averages at reduced size,
/// masked pixels in place with zeros elsewhere.
pub(crate) fn observation_image(obs: &LinearObservation<f64>, shape: (usize, usize)) -> Option<Image> {
    match obs.operator() {
        ForwardOperator::BlockAverage { width, height, factor } => {
            Image::new(width / factor, height / factor, obs.y().to_vec()).ok()
        }
        ForwardOperator::Mask { dim, keep } if *dim == shape.0 * shape.1 => {
            let mut px = vec![0.0; *dim];
            for (&i, &v) in keep.iter().zip(obs.y()) {
                px[i] = v;
            }
            Image::new(shape.0, shape.1, px).ok()
        }
        _ => None,
    }
}

pub(crate) fn observation_file(obs: &LinearObservation<f64>, shape: Option<(usize, usize)>) -> ObservationFile {
    ObservationFile {
        eta: obs.eta(),
        y: obs.y().to_vec(),
        image_width: shape.map(|s| s.0),
        image_height: shape.map(|s| s.1),
        operator: OperatorRecord::from_operator(obs.operator()),
    }
}

pub(crate) fn write_observation(
    dir: &std::path::Path,
    meta: &Meta,
    obs: &LinearObservation<f64>,
    shape: Option<(usize, usize)>,
) -> CliResult<()> {
    let text = observation_file(obs, shape).encode(meta)?;
    io::write_bytes(&dir.join("observation.toml"), text.as_bytes())?;
    if let Some(img) = shape.and_then(|s| observation_image(obs, s)) {
        io::write_pgm(&dir.join("observation.pgm"), meta, &img)?;
    }
    Ok(())
}

/// Writes `observation.toml` (and `observation.pgm` for image data).
pub fn make_measurement(ctx: &Context) -> CliResult<()> {
    let spec = require(&ctx.config.measurement, "measurement")?;
    let (x, shape) = io::read_vector(&spec.ground_truth)?;
    let op = build_operator(&spec.operator, x.len(), shape, ctx.seed)?;
    let obs = measure(op, &x, spec.eta, ctx.seed)?;
    let truth_bytes = std::fs::read(&spec.ground_truth).map_err(|e| CliError::io(&spec.ground_truth, e))?;
    let meta = ctx
        .meta()
        .with("ground_truth_sha256", sha256_hex(&truth_bytes))
        .with("eta", obs.eta())
        .with("observed", obs.y().len());
    write_observation(&ctx.out, &meta, &obs, shape)?;
    io::report(
        ctx.quiet,
        &[format!(
            "wrote {} measurements of a {}-vector to {}",
            obs.y().len(),
            x.len(),
            ctx.path("observation.toml").display()
        )],
    );
    Ok(())
}
