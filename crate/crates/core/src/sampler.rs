//! The sampling template
//! `x_{k+1} = x_k + τ_k ∇log f_{X_{σ_k}}(x_k) + √(2 τ_k T_k) n`
//! and its denoiser form, run over a [`SamplerPlan`].
//!
//! Every chain owns a ChaCha8 stream selected by its chain id, so a chain's
//! output depends only on `(seed, chain id, plan, source)` and not on how
//! chains are split across calls or threads.

use std::ops::Range;

use rand::Rng;
use rand_chacha::rand_core::SeedableRng;
use rand_chacha::ChaCha8Rng;
use rand_distr::StandardNormal;
use rayon::prelude::*;

use crate::conditional::LinearObservation;
use crate::error::{ensure_dim, Error, Result};
use crate::scalar::{all_finite, norm, Scalar};
use crate::schedules::{AlphaBarSchedule, SamplerPlan};
use crate::score_sources::{EpsPredictor, ScoreSource};

/// Chains whose iterate norm exceeds this multiple of `σ_0` are aborted.
pub const DIVERGENCE_FACTOR: f64 = 1e6;

/// Default trajectory recording stride.
pub const DEFAULT_RECORD_STRIDE: usize = 10;

/// Which side of Tweedie's formula drives the update.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Default)]
pub enum TemplateForm {
    /// Query `score(x, σ)` directly.
    #[default]
    Score,
    /// Query `denoise(x, σ)` and use `(D - x)/σ²` as the drift.
    Denoiser,
}

#[derive(Debug, Clone, PartialEq, Default)]
pub enum InitMode<F> {
    /// `x_0 ~ N(0, σ_0² I)` with `σ_0` the plan's initial noise level.
    #[default]
    GaussianSigma0,
    Custom(Vec<F>),
}

/// Iterate, iteration counter and the chain's private random stream.
#[derive(Debug, Clone)]
pub struct SamplerState<F> {
    pub x: Vec<F>,
    pub k: usize,
    pub chain: u64,
    rng: ChaCha8Rng,
}

impl<F: Scalar> SamplerState<F> {
    /// State at `x` with the stream for `(seed, chain)` and no draws taken.
    pub fn from_vector(x: Vec<F>, seed: u64, chain: u64) -> Self {
        Self {
            x,
            k: 0,
            chain,
            rng: chain_rng(seed, chain),
        }
    }

    /// `d` standard normals from the chain stream.
    pub fn draw_noise(&mut self, d: usize) -> Vec<F> {
        draw_normals(&mut self.rng, d)
    }
}

pub(crate) fn chain_rng(seed: u64, chain: u64) -> ChaCha8Rng {
    let mut rng = ChaCha8Rng::seed_from_u64(seed);
    rng.set_stream(chain);
    rng
}

pub(crate) fn draw_normals<F: Scalar, R: Rng + ?Sized>(rng: &mut R, d: usize) -> Vec<F> {
    (0..d)
        .map(|_| F::lit(rng.sample::<f64, _>(StandardNormal)))
        .collect()
}

pub fn init_state<F: Scalar>(
    plan: &SamplerPlan<F>,
    dim: usize,
    mode: &InitMode<F>,
    seed: u64,
    chain: u64,
) -> Result<SamplerState<F>> {
    let mut rng = chain_rng(seed, chain);
    let x = match mode {
        InitMode::GaussianSigma0 => {
            let s0 = plan.init_sigma();
            draw_normals::<F, _>(&mut rng, dim)
                .into_iter()
                .map(|n| s0 * n)
                .collect()
        }
        InitMode::Custom(v) => {
            ensure_dim("custom initial state", dim, v.len())?;
            v.clone()
        }
    };
    Ok(SamplerState { x, k: 0, chain, rng })
}

/// The template arithmetic with the noise supplied by the caller:
/// `x + τ g + τ ℓ + √(2τT) n`, where `ℓ` is an optional likelihood drift.
pub fn template_update<F: Scalar>(
    x: &[F],
    drift: &[F],
    likelihood: Option<&[F]>,
    tau: F,
    temperature: F,
    noise: &[F],
) -> Vec<F> {
    let c = (F::lit(2.0) * tau * temperature).sqrt();
    match likelihood {
        None => x
            .iter()
            .zip(drift)
            .zip(noise)
            .map(|((&xi, &g), &n)| xi + tau * g + c * n)
            .collect(),
        Some(l) => x
            .iter()
            .zip(drift)
            .zip(l)
            .zip(noise)
            .map(|(((&xi, &g), &li), &n)| xi + tau * g + tau * li + c * n)
            .collect(),
    }
}

fn drift<F: Scalar, S: ScoreSource<F> + ?Sized>(
    source: &S,
    x: &[F],
    sigma: F,
    form: TemplateForm,
) -> Vec<F> {
    match form {
        TemplateForm::Score => source.score(x, sigma),
        TemplateForm::Denoiser => {
            let s2 = sigma * sigma;
            source
                .denoise(x, sigma)
                .into_iter()
                .zip(x)
                .map(|(d, &xi)| (d - xi) / s2)
                .collect()
        }
    }
}

/// Per-iteration diagnostics collected while stepping.
#[derive(Debug, Clone, Copy, PartialEq)]
pub struct StepDiagnostics<F> {
    pub score_norm: F,
    pub step_ratio: F,
}

/// Advances `m` inner iterations at level `state.k`, then increments `k`.
fn advance<F: Scalar, S: ScoreSource<F> + ?Sized>(
    state: &mut SamplerState<F>,
    plan: &SamplerPlan<F>,
    source: &S,
    form: TemplateForm,
    obs: Option<&LinearObservation<F>>,
    inner_steps: usize,
) -> Result<StepDiagnostics<F>> {
    let k = state.k;
    if k >= plan.len() {
        return Err(Error::Precondition(format!(
            "step index {k} beyond plan length {}",
            plan.len()
        )));
    }
    let (sigma, tau, temp) = (plan.sigma(k), plan.tau(k), plan.temp(k));
    let limit = F::lit(DIVERGENCE_FACTOR) * plan.init_sigma();
    let d = state.x.len();
    let mut score_norm = F::zero();
    for _ in 0..inner_steps {
        let g = drift(source, &state.x, sigma, form);
        score_norm = norm(&g);
        let lik = match obs {
            Some(o) => Some(o.likelihood_grad(&state.x)?),
            None => None,
        };
        let n = draw_normals::<F, _>(&mut state.rng, d);
        let next = template_update(&state.x, &g, lik.as_deref(), tau, temp, &n);
        let reason = if !all_finite(&next) {
            Some("non-finite iterate")
        } else if norm(&next) > limit {
            Some("iterate norm exceeded divergence bound")
        } else {
            None
        };
        if let Some(reason) = reason {
            return Err(Error::Diverged {
                chain: state.chain,
                step: k,
                sigma: sigma.to_f64_lossy(),
                step_ratio: plan.effective_step(k).to_f64_lossy(),
                reason,
            });
        }
        state.x = next;
    }
    state.k = k + 1;
    Ok(StepDiagnostics {
        score_norm,
        step_ratio: plan.effective_step(k),
    })
}

/// One template iteration at level `state.k`.
pub fn step<F: Scalar, S: ScoreSource<F> + ?Sized>(
    state: &mut SamplerState<F>,
    plan: &SamplerPlan<F>,
    source: &S,
    form: TemplateForm,
) -> Result<StepDiagnostics<F>> {
    ensure_dim("sampler state", source.dim(), state.x.len())?;
    advance(state, plan, source, form, None, 1)
}

/// One conditional iteration: the unconditional update plus
/// `τ_k Aᵀ(y - A x_k)/η²`. The plan's step sizes are used as given.
pub fn conditional_step<F: Scalar, S: ScoreSource<F> + ?Sized>(
    state: &mut SamplerState<F>,
    plan: &SamplerPlan<F>,
    source: &S,
    obs: &LinearObservation<F>,
    form: TemplateForm,
) -> Result<StepDiagnostics<F>> {
    ensure_dim("sampler state", source.dim(), state.x.len())?;
    ensure_dim("observation operator input", source.dim(), obs.in_dim())?;
    advance(state, plan, source, form, Some(obs), 1)
}

/// Recorded iterates and per-iteration diagnostics of one chain.
#[derive(Debug, Clone, PartialEq)]
pub struct Trajectory<F> {
    pub stride: usize,
    /// `(number of completed iterations, iterate)`; the first entry is the
    /// initial state.
    pub records: Vec<(usize, Vec<F>)>,
    pub diagnostics: Vec<StepDiagnostics<F>>,
}

/// Record count for `k` iterations at `stride`: `⌈k/stride⌉ + 1`.
pub fn expected_records(k: usize, stride: usize) -> usize {
    k.div_ceil(stride) + 1
}

#[derive(Debug, Clone, PartialEq)]
pub struct SamplerConfig<F> {
    pub seed: u64,
    pub form: TemplateForm,
    pub init: InitMode<F>,
    /// Template iterations per noise level (`m ≥ 1`).
    pub inner_steps: usize,
    /// Record trajectories at this stride; `None` records nothing.
    pub record_stride: Option<usize>,
}

impl<F> SamplerConfig<F> {
    pub fn new(seed: u64) -> Self {
        Self {
            seed,
            form: TemplateForm::Score,
            init: InitMode::GaussianSigma0,
            inner_steps: 1,
            record_stride: None,
        }
    }
}

#[derive(Debug)]
pub struct ChainOutcome<F> {
    pub chain: u64,
    pub result: Result<ChainResult<F>>,
}

#[derive(Debug, Clone, PartialEq)]
pub struct ChainResult<F> {
    pub x: Vec<F>,
    pub trajectory: Option<Trajectory<F>>,
}

/// Per-chain outcomes in chain-id order.
#[derive(Debug)]
pub struct RunOutput<F> {
    pub outcomes: Vec<ChainOutcome<F>>,
}

impl<F: Clone> RunOutput<F> {
    /// Terminal iterates of the chains that finished.
    pub fn samples(&self) -> Vec<Vec<F>> {
        self.outcomes
            .iter()
            .filter_map(|o| o.result.as_ref().ok().map(|r| r.x.clone()))
            .collect()
    }

    /// `(chain id, terminal iterate)` for the chains that finished.
    pub fn labeled_samples(&self) -> Vec<(u64, Vec<F>)> {
        self.outcomes
            .iter()
            .filter_map(|o| o.result.as_ref().ok().map(|r| (o.chain, r.x.clone())))
            .collect()
    }

    pub fn failures(&self) -> Vec<(u64, &Error)> {
        self.outcomes
            .iter()
            .filter_map(|o| o.result.as_ref().err().map(|e| (o.chain, e)))
            .collect()
    }

    pub fn trajectories(&self) -> Vec<(u64, &Trajectory<F>)> {
        self.outcomes
            .iter()
            .filter_map(|o| {
                o.result
                    .as_ref()
                    .ok()
                    .and_then(|r| r.trajectory.as_ref())
                    .map(|t| (o.chain, t))
            })
            .collect()
    }
}

fn run_chain<F: Scalar, S: ScoreSource<F> + ?Sized>(
    plan: &SamplerPlan<F>,
    source: &S,
    obs: Option<&LinearObservation<F>>,
    cfg: &SamplerConfig<F>,
    chain: u64,
) -> Result<ChainResult<F>> {
    let mut state = init_state(plan, source.dim(), &cfg.init, cfg.seed, chain)?;
    let k_total = plan.len();
    let mut traj = cfg.record_stride.map(|stride| Trajectory {
        stride,
        records: vec![(0, state.x.clone())],
        diagnostics: Vec::with_capacity(k_total),
    });
    for k in 0..k_total {
        let diag = advance(&mut state, plan, source, cfg.form, obs, cfg.inner_steps)?;
        if let Some(t) = traj.as_mut() {
            t.diagnostics.push(diag);
            if k % t.stride == t.stride - 1 || k + 1 == k_total {
                t.records.push((k + 1, state.x.clone()));
            }
        }
    }
    Ok(ChainResult {
        x: state.x,
        trajectory: traj,
    })
}

pub(crate) fn run_with<F: Scalar, S: ScoreSource<F> + ?Sized>(
    plan: &SamplerPlan<F>,
    source: &S,
    obs: Option<&LinearObservation<F>>,
    chains: Range<u64>,
    cfg: &SamplerConfig<F>,
) -> Result<RunOutput<F>> {
    if cfg.inner_steps == 0 {
        return Err(Error::config("inner step count must be at least 1"));
    }
    if cfg.record_stride == Some(0) {
        return Err(Error::config("trajectory stride must be at least 1"));
    }
    if let InitMode::Custom(v) = &cfg.init {
        ensure_dim("custom initial state", source.dim(), v.len())?;
    }
    if let Some(o) = obs {
        ensure_dim("observation operator input", source.dim(), o.in_dim())?;
    }
    let outcomes = chains
        .into_par_iter()
        .map(|chain| ChainOutcome {
            chain,
            result: run_chain(plan, source, obs, cfg, chain),
        })
        .collect();
    Ok(RunOutput { outcomes })
}

/// Runs the chains with ids in `chains`. A chain that diverges is reported
/// in its outcome slot and the others continue.
pub fn run<F: Scalar, S: ScoreSource<F> + ?Sized>(
    plan: &SamplerPlan<F>,
    source: &S,
    chains: Range<u64>,
    cfg: &SamplerConfig<F>,
) -> Result<RunOutput<F>> {
    run_with(plan, source, None, chains, cfg)
}

/// Long random walk at a single noise level. Returns the `n_steps` iterates
/// after `burn_in`, starting from `N(0, σ² I)`.
#[allow(clippy::too_many_arguments)]
pub fn run_fixed_sigma<F: Scalar, S: ScoreSource<F> + ?Sized>(
    sigma: F,
    tau: F,
    temperature: F,
    source: &S,
    burn_in: usize,
    n_steps: usize,
    seed: u64,
    chain: u64,
) -> Result<Vec<Vec<F>>> {
    if !(sigma > F::zero()) || !(tau > F::zero()) || !(temperature >= F::zero()) {
        return Err(Error::config(format!(
            "fixed-sigma walk needs sigma > 0, tau > 0, T >= 0 (got {sigma}, {tau}, {temperature})"
        )));
    }
    let ratio = tau / (sigma * sigma);
    if ratio > F::lit(0.5) {
        log::warn!("tau/sigma^2 = {ratio} is large for a fixed-sigma walk");
    }
    let d = source.dim();
    let mut rng = chain_rng(seed, chain);
    let mut x: Vec<F> = draw_normals::<F, _>(&mut rng, d)
        .into_iter()
        .map(|n| sigma * n)
        .collect();
    let limit = F::lit(DIVERGENCE_FACTOR) * sigma;
    let mut out = Vec::with_capacity(n_steps);
    for i in 0..burn_in + n_steps {
        let g = source.score(&x, sigma);
        let n = draw_normals::<F, _>(&mut rng, d);
        x = template_update(&x, &g, None, tau, temperature, &n);
        if !all_finite(&x) || norm(&x) > limit {
            return Err(Error::Diverged {
                chain,
                step: i,
                sigma: sigma.to_f64_lossy(),
                step_ratio: ratio.to_f64_lossy(),
                reason: "fixed-sigma walk left the stable region",
            });
        }
        if i >= burn_in {
            out.push(x.clone());
        }
    }
    Ok(out)
}

/// Ancestral DDPM iterate
/// `x_{t-1} = (x_t - (1-α_t)/√(1-ᾱ_t) ε(x_t, t))/√α_t + σ'_t n`,
/// with the noise supplied by the caller. `t` is one-based.
pub fn ddpm_reference_step<F: Scalar, E: EpsPredictor<F> + ?Sized>(
    x_t: &[F],
    t: usize,
    eps: &E,
    schedule: &AlphaBarSchedule<F>,
    sigma_prime: F,
    noise: &[F],
) -> Result<Vec<F>> {
    if t == 0 || t > schedule.len() {
        return Err(Error::Precondition(format!(
            "DDPM time {t} outside 1..={}",
            schedule.len()
        )));
    }
    ensure_dim("DDPM state", eps.dim(), x_t.len())?;
    ensure_dim("DDPM noise", x_t.len(), noise.len())?;
    let a = schedule.alpha(t);
    let ab = schedule.alpha_bar(t);
    let coef = (F::one() - a) / (F::one() - ab).sqrt();
    let inv_sqrt_a = F::one() / a.sqrt();
    let e = eps.predict_eps(x_t, F::from_usize_lossy(t));
    Ok(x_t
        .iter()
        .zip(e)
        .zip(noise)
        .map(|((&x, ei), &n)| inv_sqrt_a * (x - coef * ei) + sigma_prime * n)
        .collect())
}
