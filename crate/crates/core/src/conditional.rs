//! Sampling from `f_{X|Y=y}` for `y = A x + η n` by adding the exact
//! likelihood gradient `Aᵀ(y - A x)/η²` to the score.

use std::ops::Range;

use crate::error::{ensure_dim, Error, Result};
use crate::linalg::Matrix;
use crate::sampler::{run_with, RunOutput, SamplerConfig};
use crate::scalar::Scalar;
use crate::schedules::SamplerPlan;
use crate::score_sources::ScoreSource;

pub use crate::sampler::conditional_step;

const POWER_ITERATIONS: usize = 10_000;

/// Linear forward operators.
#[derive(Debug, Clone, PartialEq)]
pub enum ForwardOperator<F> {
    /// Keeps the listed coordinates of a `dim`-vector.
    Mask { dim: usize, keep: Vec<usize> },
    /// Averages non-overlapping `factor × factor` blocks of a row-major
    /// `height × width` image.
    BlockAverage {
        width: usize,
        height: usize,
        factor: usize,
    },
    Dense(Matrix<F>),
}

impl<F: Scalar> ForwardOperator<F> {
    /// Mask that keeps every coordinate.
    pub fn identity(dim: usize) -> Self {
        ForwardOperator::Mask {
            dim,
            keep: (0..dim).collect(),
        }
    }

    pub fn validate(&self) -> Result<()> {
        match self {
            ForwardOperator::Mask { dim, keep } => {
                let mut seen = vec![false; *dim];
                for &i in keep {
                    if i >= *dim {
                        return Err(Error::config(format!("mask index {i} out of range 0..{dim}")));
                    }
                    if std::mem::replace(&mut seen[i], true) {
                        return Err(Error::config(format!("mask index {i} repeated")));
                    }
                }
                if keep.is_empty() {
                    return Err(Error::config("mask keeps no coordinates"));
                }
                Ok(())
            }
            ForwardOperator::BlockAverage {
                width,
                height,
                factor,
            } => {
                if *factor == 0 || *width == 0 || *height == 0 {
                    return Err(Error::config("block average needs positive sizes"));
                }
                if width % factor != 0 || height % factor != 0 {
                    return Err(Error::config(format!(
                        "block factor {factor} does not divide image size {width}x{height}"
                    )));
                }
                Ok(())
            }
            ForwardOperator::Dense(a) => {
                if a.rows() == 0 || a.cols() == 0 {
                    return Err(Error::config("dense operator is empty"));
                }
                if !a.as_slice().iter().all(|v| v.is_finite()) {
                    return Err(Error::config("dense operator has non-finite entries"));
                }
                Ok(())
            }
        }
    }

    pub fn in_dim(&self) -> usize {
        match self {
            ForwardOperator::Mask { dim, .. } => *dim,
            ForwardOperator::BlockAverage { width, height, .. } => width * height,
            ForwardOperator::Dense(a) => a.cols(),
        }
    }

    pub fn out_dim(&self) -> usize {
        match self {
            ForwardOperator::Mask { keep, .. } => keep.len(),
            ForwardOperator::BlockAverage {
                width,
                height,
                factor,
            } => (width / factor) * (height / factor),
            ForwardOperator::Dense(a) => a.rows(),
        }
    }

    /// `A x`
    pub fn apply(&self, x: &[F]) -> Vec<F> {
        match self {
            ForwardOperator::Mask { keep, .. } => keep.iter().map(|&i| x[i]).collect(),
            ForwardOperator::BlockAverage {
                width,
                height,
                factor,
            } => {
                let (ow, oh) = (width / factor, height / factor);
                let inv = F::one() / F::from_usize_lossy(factor * factor);
                let mut out = vec![F::zero(); ow * oh];
                for r in 0..*height {
                    for c in 0..*width {
                        let o = (r / factor) * ow + c / factor;
                        out[o] = out[o] + x[r * width + c];
                    }
                }
                out.iter_mut().for_each(|v| *v = *v * inv);
                out
            }
            ForwardOperator::Dense(a) => a.matvec(x),
        }
    }

    /// `Aᵀ y`
    pub fn adjoint(&self, y: &[F]) -> Vec<F> {
        match self {
            ForwardOperator::Mask { dim, keep } => {
                let mut out = vec![F::zero(); *dim];
                for (&i, &v) in keep.iter().zip(y) {
                    out[i] = v;
                }
                out
            }
            ForwardOperator::BlockAverage {
                width,
                height,
                factor,
            } => {
                let ow = width / factor;
                let inv = F::one() / F::from_usize_lossy(factor * factor);
                (0..width * height)
                    .map(|p| {
                        let (r, c) = (p / width, p % width);
                        inv * y[(r / factor) * ow + c / factor]
                    })
                    .collect()
            }
            ForwardOperator::Dense(a) => a.matvec_t(y),
        }
    }

    /// Largest eigenvalue of `AᵀA`.
    pub fn spectral_radius(&self) -> Result<F> {
        match self {
            ForwardOperator::Mask { .. } => Ok(F::one()),
            ForwardOperator::BlockAverage { factor, .. } => {
                Ok(F::one() / F::from_usize_lossy(factor * factor))
            }
            ForwardOperator::Dense(a) => {
                a.spectral_norm_sq(POWER_ITERATIONS, F::lit(1e-12).max(F::epsilon() * F::lit(8.0)))
            }
        }
    }

    pub fn to_dense(&self) -> Matrix<F> {
        if let ForwardOperator::Dense(a) = self {
            return a.clone();
        }
        let (m, n) = (self.out_dim(), self.in_dim());
        let mut out = Matrix::zeros(m, n);
        let mut e = vec![F::zero(); n];
        for j in 0..n {
            e[j] = F::one();
            for (i, v) in self.apply(&e).into_iter().enumerate() {
                out[(i, j)] = v;
            }
            e[j] = F::zero();
        }
        out
    }
}

/// A measurement `y = A x + η n`.
#[derive(Debug, Clone, PartialEq)]
pub struct LinearObservation<F> {
    operator: ForwardOperator<F>,
    y: Vec<F>,
    eta: F,
    rho: F,
}

impl<F: Scalar> LinearObservation<F> {
    pub fn new(operator: ForwardOperator<F>, y: Vec<F>, eta: F) -> Result<Self> {
        operator.validate()?;
        if !(eta > F::zero()) || !eta.is_finite() {
            return Err(Error::config(format!(
                "measurement noise eta = {eta} must be positive; noiseless measurements are not supported"
            )));
        }
        ensure_dim("measurement vector", operator.out_dim(), y.len())?;
        let rho = operator.spectral_radius()?;
        Ok(Self {
            operator,
            y,
            eta,
            rho,
        })
    }

    pub fn operator(&self) -> &ForwardOperator<F> {
        &self.operator
    }

    pub fn y(&self) -> &[F] {
        &self.y
    }

    pub fn eta(&self) -> F {
        self.eta
    }

    /// `λ_max(AᵀA)`
    pub fn rho(&self) -> F {
        self.rho
    }

    pub fn in_dim(&self) -> usize {
        self.operator.in_dim()
    }

    /// `∇_x log f_{Y|X}(y|x) = Aᵀ(y - A x)/η²`
    pub fn likelihood_grad(&self, x: &[F]) -> Result<Vec<F>> {
        ensure_dim("likelihood input", self.in_dim(), x.len())?;
        let resid: Vec<F> = self
            .y
            .iter()
            .zip(self.operator.apply(x))
            .map(|(&y, ax)| y - ax)
            .collect();
        let inv = F::one() / (self.eta * self.eta);
        Ok(self.operator.adjoint(&resid).into_iter().map(|v| v * inv).collect())
    }

    /// `log f_{Y|X}(y|x)` up to its additive constant: `-‖y - A x‖²/(2η²)`.
    pub fn log_likelihood(&self, x: &[F]) -> F {
        let r2: F = self
            .y
            .iter()
            .zip(self.operator.apply(x))
            .map(|(&y, ax)| (y - ax) * (y - ax))
            .sum();
        -r2 / (F::lit(2.0) * self.eta * self.eta)
    }

    /// `η²/ρ`, the step at which the likelihood drift stops contracting.
    pub fn step_bound(&self) -> F {
        self.eta * self.eta / self.rho
    }
}

pub fn likelihood_grad<F: Scalar>(obs: &LinearObservation<F>, x: &[F]) -> Result<Vec<F>> {
    obs.likelihood_grad(x)
}

/// `min(τ, η²/ρ)`.
pub fn clamp_step<F: Scalar>(tau: F, obs: &LinearObservation<F>) -> Result<F> {
    if !(tau > F::zero()) {
        return Err(Error::Precondition(format!("step size {tau} must be positive")));
    }
    Ok(tau.min(obs.step_bound()))
}

/// Applies [`clamp_step`] to every step size of `plan`.
pub fn clamp_plan<F: Scalar>(plan: &SamplerPlan<F>, obs: &LinearObservation<F>) -> Result<SamplerPlan<F>> {
    let taus = plan
        .taus()
        .iter()
        .map(|&t| clamp_step(t, obs))
        .collect::<Result<Vec<_>>>()?;
    plan.with_taus(taus)
}

/// Full conditional run with clamped steps.
pub fn posterior_sample<F: Scalar, S: ScoreSource<F> + ?Sized>(
    plan: &SamplerPlan<F>,
    source: &S,
    obs: &LinearObservation<F>,
    chains: Range<u64>,
    cfg: &SamplerConfig<F>,
) -> Result<RunOutput<F>> {
    let clamped = clamp_plan(plan, obs)?;
    run_with(&clamped, source, Some(obs), chains, cfg)
}

/// Coordinate-wise mean of a non-empty batch.
pub fn pixelwise_mean<F: Scalar>(batch: &[Vec<F>]) -> Result<Vec<F>> {
    let first = batch
        .first()
        .ok_or_else(|| Error::Precondition("pixel-wise mean of an empty batch".into()))?;
    let d = first.len();
    // Running mean: a batch of identical vectors reproduces the vector exactly.
    let mut mean = vec![F::zero(); d];
    for (i, v) in batch.iter().enumerate() {
        ensure_dim("batch member", d, v.len())?;
        let n = F::from_usize_lossy(i + 1);
        for (m, &x) in mean.iter_mut().zip(v) {
            *m = *m + (x - *m) / n;
        }
    }
    Ok(mean)
}

pub fn mse<F: Scalar>(x: &[F], reference: &[F]) -> Result<F> {
    ensure_dim("mse operand", reference.len(), x.len())?;
    if x.is_empty() {
        return Err(Error::Precondition("mse of empty vectors".into()));
    }
    let s: F = x.iter().zip(reference).map(|(&a, &b)| (a - b) * (a - b)).sum();
    Ok(s / F::from_usize_lossy(x.len()))
}

/// `10 log10(1/MSE)` for data in `[0, 1]`; `+∞` when the inputs coincide.
pub fn psnr<F: Scalar>(x: &[F], reference: &[F]) -> Result<F> {
    let m = mse(x, reference)?;
    if m == F::zero() {
        return Ok(F::infinity());
    }
    Ok(F::lit(10.0) * (F::one() / m).log10())
}
