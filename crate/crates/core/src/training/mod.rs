//! Denoiser training: `min_θ E[w(σ) ‖X - D_θ(X + σN, σ)‖²]` over a small
//! MLP in either the VE or the VP parameterization.

mod checkpoint;
mod mlp;

pub use checkpoint::{Checkpoint, SigmaDistributionRecord, TrainingMeta, CHECKPOINT_MAGIC, CHECKPOINT_VERSION};
pub use mlp::{mlp_gradient_check, param_count, ForwardCache, Mlp};

use rand::Rng;
use rand_chacha::rand_core::SeedableRng;
use rand_chacha::ChaCha8Rng;

use crate::error::{ensure_dim, Error, Result};
use crate::sampler::draw_normals;
use crate::scalar::Scalar;
use crate::schedules::{noise_to_time, AlphaBarSchedule, DEFAULT_GRID_FACTOR};
use crate::score_sources::{tweedie_score, Denoiser, EpsPredictor, GaussianMixture, ScoreSource};

/// How the network output becomes a denoiser.
#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub enum Parameterization {
    /// `D(x, σ) = net(x, c)`
    VeDirect,
    /// `D(x, σ) = x + σ net(x, c)`, i.e. `s_θ = net/σ`.
    VeResidual,
    /// `D(x, σ) = x - σ net(√ᾱ x, c)` with `ᾱ = 1/(1+σ²)`; the network is
    /// a noise predictor in VP coordinates.
    VpEpsilon,
}

impl Parameterization {
    pub fn tag(self) -> u8 {
        match self {
            Parameterization::VeDirect => 0,
            Parameterization::VeResidual => 1,
            Parameterization::VpEpsilon => 2,
        }
    }

    pub fn from_tag(tag: u8) -> Option<Self> {
        match tag {
            0 => Some(Parameterization::VeDirect),
            1 => Some(Parameterization::VeResidual),
            2 => Some(Parameterization::VpEpsilon),
            _ => None,
        }
    }

    pub fn name(self) -> &'static str {
        match self {
            Parameterization::VeDirect => "ve_direct",
            Parameterization::VeResidual => "ve_residual",
            Parameterization::VpEpsilon => "vp_epsilon",
        }
    }

    pub fn is_vp(self) -> bool {
        self == Parameterization::VpEpsilon
    }
}

/// The extra input channel carrying the noise level.
#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub enum Conditioning {
    /// `log σ`
    LogSigma,
    /// `t/T` on the attached VP schedule.
    TimeFraction,
}

impl Conditioning {
    pub fn tag(self) -> u8 {
        match self {
            Conditioning::LogSigma => 0,
            Conditioning::TimeFraction => 1,
        }
    }

    pub fn from_tag(tag: u8) -> Option<Self> {
        match tag {
            0 => Some(Conditioning::LogSigma),
            1 => Some(Conditioning::TimeFraction),
            _ => None,
        }
    }

    pub fn name(self) -> &'static str {
        match self {
            Conditioning::LogSigma => "log_sigma",
            Conditioning::TimeFraction => "time_fraction",
        }
    }
}

/// An [`Mlp`] wrapped as a denoiser. Widths run `d + 1 → … → d`.
#[derive(Debug, Clone, PartialEq)]
pub struct MlpDenoiser<F> {
    net: Mlp<F>,
    parameterization: Parameterization,
    conditioning: Conditioning,
    schedule: Option<AlphaBarSchedule<F>>,
    grid_size: usize,
}

/// Default hidden layers for a `d`-dimensional denoiser.
pub fn default_widths(dim: usize) -> Vec<usize> {
    vec![dim + 1, 128, 128, dim]
}

impl<F: Scalar> MlpDenoiser<F> {
    pub fn new(
        net: Mlp<F>,
        parameterization: Parameterization,
        conditioning: Conditioning,
        schedule: Option<AlphaBarSchedule<F>>,
    ) -> Result<Self> {
        let w = net.widths();
        if w[0] != net.output_width() + 1 {
            return Err(Error::config(format!(
                "denoiser widths {w:?} must run from d + 1 inputs to d outputs"
            )));
        }
        let needs_schedule = parameterization.is_vp() || conditioning == Conditioning::TimeFraction;
        if needs_schedule && schedule.is_none() {
            return Err(Error::config(format!(
                "{} / {} needs a VP schedule",
                parameterization.name(),
                conditioning.name()
            )));
        }
        let grid_size = schedule.as_ref().map_or(0, |s| s.len() * DEFAULT_GRID_FACTOR);
        Ok(Self {
            net,
            parameterization,
            conditioning,
            schedule,
            grid_size,
        })
    }

    /// Randomly initialized denoiser.
    pub fn init(
        widths: Vec<usize>,
        parameterization: Parameterization,
        conditioning: Conditioning,
        schedule: Option<AlphaBarSchedule<F>>,
        seed: u64,
    ) -> Result<Self> {
        let mut rng = ChaCha8Rng::seed_from_u64(seed);
        Self::new(Mlp::random(widths, &mut rng)?, parameterization, conditioning, schedule)
    }

    pub fn net(&self) -> &Mlp<F> {
        &self.net
    }

    pub fn net_mut(&mut self) -> &mut Mlp<F> {
        &mut self.net
    }

    pub fn parameterization(&self) -> Parameterization {
        self.parameterization
    }

    pub fn conditioning(&self) -> Conditioning {
        self.conditioning
    }

    pub fn schedule(&self) -> Option<&AlphaBarSchedule<F>> {
        self.schedule.as_ref()
    }

    pub fn data_dim(&self) -> usize {
        self.net.output_width()
    }

    fn time_of(&self, sigma: F) -> F {
        let sched = self.schedule.as_ref().expect("schedule checked at construction");
        noise_to_time(sigma, sched, self.grid_size)
            .expect("noise level inside the representable range")
            .time
    }

    /// Conditioning channel value at `σ`, or at a known diffusion time.
    fn cond_value(&self, sigma: F, time: Option<F>) -> F {
        match self.conditioning {
            Conditioning::LogSigma => sigma.ln(),
            Conditioning::TimeFraction => {
                let sched = self.schedule.as_ref().expect("schedule checked at construction");
                let t = time.unwrap_or_else(|| self.time_of(sigma));
                t / F::from_usize_lossy(sched.len())
            }
        }
    }

    /// `(offset weight a, output weight b, input scale s)` so that
    /// `D = a x + b net(s x, c)`.
    fn affine(&self, sigma: F) -> (F, F, F) {
        match self.parameterization {
            Parameterization::VeDirect => (F::zero(), F::one(), F::one()),
            Parameterization::VeResidual => (F::one(), sigma, F::one()),
            Parameterization::VpEpsilon => (
                F::one(),
                -sigma,
                (F::one() / (F::one() + sigma * sigma)).sqrt(),
            ),
        }
    }

    fn net_input(&self, x: &[F], scale: F, cond: F) -> Vec<F> {
        let mut input: Vec<F> = x.iter().map(|&v| scale * v).collect();
        input.push(cond);
        input
    }

    fn denoise_with_time(&self, x: &[F], sigma: F, time: Option<F>) -> Vec<F> {
        let (a, b, s) = self.affine(sigma);
        let out = self.net.forward(&self.net_input(x, s, self.cond_value(sigma, time)));
        x.iter().zip(out).map(|(&xi, o)| a * xi + b * o).collect()
    }

    /// Snapshot of the parameters as an `f64` checkpoint.
    pub fn to_checkpoint(&self, meta: TrainingMeta) -> Checkpoint {
        Checkpoint {
            parameterization: self.parameterization,
            conditioning: self.conditioning,
            widths: self.net.widths().to_vec(),
            params: self.net.params().iter().map(|p| p.to_f64_lossy()).collect(),
            schedule_alphas: self
                .schedule
                .as_ref()
                .map(|s| s.alphas().iter().map(|a| a.to_f64_lossy()).collect()),
            meta,
        }
    }

    pub fn from_checkpoint(ck: &Checkpoint) -> Result<Self> {
        let net = Mlp::from_params(ck.widths.clone(), ck.params.iter().map(|&p| F::lit(p)).collect())?;
        let schedule = ck
            .schedule_alphas
            .as_ref()
            .map(|a| AlphaBarSchedule::from_alphas(a.iter().map(|&v| F::lit(v)).collect()))
            .transpose()?;
        Self::new(net, ck.parameterization, ck.conditioning, schedule)
    }
}

impl<F: Scalar> Denoiser<F> for MlpDenoiser<F> {
    fn dim(&self) -> usize {
        self.data_dim()
    }

    fn denoise(&self, x: &[F], sigma: F) -> Vec<F> {
        self.denoise_with_time(x, sigma, None)
    }
}

impl<F: Scalar> ScoreSource<F> for MlpDenoiser<F> {
    fn dim(&self) -> usize {
        self.data_dim()
    }

    fn score(&self, x: &[F], sigma: F) -> Vec<F> {
        tweedie_score(&Denoiser::denoise(self, x, sigma), x, sigma)
    }

    fn denoise(&self, x: &[F], sigma: F) -> Vec<F> {
        Denoiser::denoise(self, x, sigma)
    }
}

/// The raw network as a VP noise predictor `ε(x_vp, t)`; meaningful for
/// [`Parameterization::VpEpsilon`].
impl<F: Scalar> EpsPredictor<F> for MlpDenoiser<F> {
    fn dim(&self) -> usize {
        self.data_dim()
    }

    fn predict_eps(&self, x_scaled: &[F], time: F) -> Vec<F> {
        let sched = self.schedule.as_ref().expect("VP predictor has a schedule");
        let cond = match self.conditioning {
            Conditioning::LogSigma => sched.sigma_at(time).ln(),
            Conditioning::TimeFraction => time / F::from_usize_lossy(sched.len()),
        };
        self.net.forward(&self.net_input(x_scaled, F::one(), cond))
    }
}

#[derive(Debug, Clone, PartialEq)]
pub enum SigmaDistribution<F> {
    Uniform { min: F, max: F },
    /// `t ~ U{1, …, T}`, `σ = √((1-ᾱ_t)/ᾱ_t)`.
    VpDiscrete(AlphaBarSchedule<F>),
    Fixed(F),
}

impl<F: Scalar> SigmaDistribution<F> {
    pub fn validate(&self) -> Result<()> {
        match self {
            SigmaDistribution::Uniform { min, max } => {
                if !(*min > F::zero()) || !(max >= min) || !max.is_finite() {
                    return Err(Error::config(format!(
                        "uniform noise range [{min}, {max}] needs 0 < min <= max"
                    )));
                }
            }
            SigmaDistribution::Fixed(s) => {
                if !(*s > F::zero()) || !s.is_finite() {
                    return Err(Error::config(format!("fixed noise level {s} must be positive")));
                }
            }
            SigmaDistribution::VpDiscrete(_) => {}
        }
        Ok(())
    }

    /// `(σ, t)` with `t` set for the discrete VP distribution.
    pub fn draw<R: Rng + ?Sized>(&self, rng: &mut R) -> (F, Option<usize>) {
        match self {
            SigmaDistribution::Uniform { min, max } => {
                let u: f64 = rng.random();
                (*min + (*max - *min) * F::lit(u), None)
            }
            SigmaDistribution::VpDiscrete(s) => {
                let t = rng.random_range(1..=s.len());
                (s.sigma(t), Some(t))
            }
            SigmaDistribution::Fixed(s) => (*s, None),
        }
    }

    pub fn record(&self) -> SigmaDistributionRecord {
        match self {
            SigmaDistribution::Uniform { min, max } => SigmaDistributionRecord::Uniform {
                min: min.to_f64_lossy(),
                max: max.to_f64_lossy(),
            },
            SigmaDistribution::VpDiscrete(s) => SigmaDistributionRecord::VpDiscrete {
                alphas: s.alphas().iter().map(|a| a.to_f64_lossy()).collect(),
            },
            SigmaDistribution::Fixed(s) => SigmaDistributionRecord::Fixed(s.to_f64_lossy()),
        }
    }
}

/// Loss weight `w(σ)`.
#[derive(Debug, Clone, Copy, PartialEq)]
pub enum WeightRule<F> {
    /// `σ⁻⁴`
    InverseFourth,
    /// `σ⁻²`, equivalently a per-level weight `λ(σ) = σ²` on the score
    /// matching loss.
    Balanced,
    Constant(F),
    /// `σ^p`
    Exponent(F),
}

impl<F: Scalar> WeightRule<F> {
    pub fn weight(&self, sigma: F) -> F {
        match *self {
            WeightRule::InverseFourth => sigma.powi(-4),
            WeightRule::Balanced => sigma.powi(-2),
            WeightRule::Constant(c) => c,
            WeightRule::Exponent(p) => sigma.powf(p),
        }
    }
}

#[derive(Debug, Clone, Copy, PartialEq)]
pub enum Optimizer<F> {
    /// Heavy-ball SGD: `v ← βv + g`, `θ ← θ - ηv`.
    Momentum { beta: F },
    Adam { beta1: F, beta2: F, eps: F },
}

impl<F: Scalar> Default for Optimizer<F> {
    fn default() -> Self {
        Optimizer::Momentum { beta: F::lit(0.9) }
    }
}

impl<F: Scalar> Optimizer<F> {
    pub fn adam() -> Self {
        Optimizer::Adam {
            beta1: F::lit(0.9),
            beta2: F::lit(0.999),
            eps: F::lit(1e-8),
        }
    }
}

#[derive(Debug, Clone, PartialEq)]
pub struct TrainConfig<F> {
    pub sigma: SigmaDistribution<F>,
    pub weight: WeightRule<F>,
    pub batch_size: usize,
    pub steps: usize,
    pub learning_rate: F,
    pub optimizer: Optimizer<F>,
    pub seed: u64,
    /// Window of the moving average reported as the final loss.
    pub smoothing_window: usize,
}

impl<F: Scalar> TrainConfig<F> {
    pub fn validate(&self) -> Result<()> {
        self.sigma.validate()?;
        if self.batch_size == 0 {
            return Err(Error::config("batch size must be positive"));
        }
        if !(self.learning_rate > F::zero()) || !self.learning_rate.is_finite() {
            return Err(Error::config("learning rate must be positive"));
        }
        if self.smoothing_window == 0 {
            return Err(Error::config("loss smoothing window must be positive"));
        }
        Ok(())
    }
}

/// One clean/noisy pair with the noise that produced it.
#[derive(Debug, Clone, PartialEq)]
pub struct TrainingPair<F> {
    pub x: Vec<F>,
    pub x_sigma: Vec<F>,
    pub sigma: F,
    /// Diffusion time when the level came from a VP schedule.
    pub t: Option<usize>,
    pub noise: Vec<F>,
}

pub fn sample_training_pair<F: Scalar, R: Rng + ?Sized>(
    gmm: &GaussianMixture<F>,
    sigma: &SigmaDistribution<F>,
    rng: &mut R,
) -> TrainingPair<F> {
    let x = gmm.sample(rng);
    let (s, t) = sigma.draw(rng);
    let noise: Vec<F> = draw_normals(rng, x.len());
    let x_sigma = x.iter().zip(&noise).map(|(&a, &n)| a + s * n).collect();
    TrainingPair {
        x,
        x_sigma,
        sigma: s,
        t,
        noise,
    }
}

fn pair_time<F: Scalar>(pair: &TrainingPair<F>) -> Option<F> {
    pair.t.map(F::from_usize_lossy)
}

/// `mean_i w(σ_i) ‖x_i - D(x_σ,i, σ_i)‖²`.
pub fn template_loss<F: Scalar>(
    model: &MlpDenoiser<F>,
    batch: &[TrainingPair<F>],
    weight: &WeightRule<F>,
) -> Result<F> {
    if batch.is_empty() {
        return Err(Error::Precondition("loss of an empty batch".into()));
    }
    let mut total = F::zero();
    for p in batch {
        ensure_dim("training pair", model.data_dim(), p.x.len())?;
        let d = model.denoise_with_time(&p.x_sigma, p.sigma, pair_time(p));
        let err: F = p.x.iter().zip(d).map(|(&a, b)| (a - b) * (a - b)).sum();
        total = total + weight.weight(p.sigma) * err;
    }
    let loss = total / F::from_usize_lossy(batch.len());
    if !loss.is_finite() {
        return Err(Error::Numeric(format!("template loss is {loss}")));
    }
    Ok(loss)
}

/// Loss and its parameter gradient on `batch`, summed in batch order.
pub fn loss_and_grad<F: Scalar>(
    model: &MlpDenoiser<F>,
    batch: &[TrainingPair<F>],
    weight: &WeightRule<F>,
) -> Result<(F, Vec<F>)> {
    if batch.is_empty() {
        return Err(Error::Precondition("loss of an empty batch".into()));
    }
    let inv_n = F::one() / F::from_usize_lossy(batch.len());
    let mut grad = vec![F::zero(); model.net.params().len()];
    let mut total = F::zero();
    for p in batch {
        ensure_dim("training pair", model.data_dim(), p.x.len())?;
        let (a, b, s) = model.affine(p.sigma);
        let input = model.net_input(&p.x_sigma, s, model.cond_value(p.sigma, pair_time(p)));
        let cache = model.net.forward_cached(&input);
        let w = weight.weight(p.sigma);
        let resid: Vec<F> = p
            .x
            .iter()
            .zip(&p.x_sigma)
            .zip(cache.output())
            .map(|((&x, &xs), &o)| x - (a * xs + b * o))
            .collect();
        total = total + w * resid.iter().map(|&r| r * r).sum::<F>();
        let scale = -F::lit(2.0) * w * b * inv_n;
        let g_out: Vec<F> = resid.iter().map(|&r| scale * r).collect();
        model.net.backward(&cache, &g_out, &mut grad);
    }
    let loss = total * inv_n;
    Ok((loss, grad))
}

/// Max relative error of the loss gradient on a single pair against
/// central differences with `h = 1e-5`.
pub fn gradient_check<F: Scalar>(
    model: &MlpDenoiser<F>,
    pair: &TrainingPair<F>,
    weight: &WeightRule<F>,
) -> Result<F> {
    let batch = std::slice::from_ref(pair);
    let (_, grad) = loss_and_grad(model, batch, weight)?;
    Ok(mlp::max_rel_error(&grad, |i, h| {
        let mut m = model.clone();
        m.net.params_mut()[i] = m.net.params()[i] + h;
        template_loss(&m, batch, weight).unwrap_or(F::nan())
    }))
}

#[derive(Debug, Clone)]
pub struct TrainOutcome<F> {
    pub model: MlpDenoiser<F>,
    pub checkpoint: Checkpoint,
    /// Per-step mini-batch loss.
    pub losses: Vec<F>,
}

const DIVERGENCE_LOSS: f64 = 1e6;

fn smoothed_tail<F: Scalar>(losses: &[F], window: usize) -> f64 {
    if losses.is_empty() {
        return f64::NAN;
    }
    let tail = &losses[losses.len().saturating_sub(window)..];
    tail.iter().map(|l| l.to_f64_lossy()).sum::<f64>() / tail.len() as f64
}

/// Trains `model` on fresh pairs drawn each step. Deterministic in
/// `config.seed`; a loss above `1e6` or non-finite aborts with the last
/// good parameters.
pub fn train<F: Scalar>(
    gmm: &GaussianMixture<F>,
    mut model: MlpDenoiser<F>,
    config: &TrainConfig<F>,
) -> Result<TrainOutcome<F>> {
    config.validate()?;
    ensure_dim("denoiser output", gmm.dim(), model.data_dim())?;
    if let (SigmaDistribution::VpDiscrete(s), Conditioning::TimeFraction) =
        (&config.sigma, model.conditioning)
    {
        if model.schedule.as_ref() != Some(s) {
            return Err(Error::config("VP training schedule differs from the model's schedule"));
        }
    }
    let mut rng = ChaCha8Rng::seed_from_u64(config.seed);
    let n_params = model.net.params().len();
    let mut m1 = vec![F::zero(); n_params];
    let mut m2 = vec![F::zero(); n_params];
    let mut losses = Vec::with_capacity(config.steps);
    let meta = |steps: usize, losses: &[F]| TrainingMeta {
        steps: steps as u64,
        final_loss: smoothed_tail(losses, config.smoothing_window),
        seed: config.seed,
        sigma: config.sigma.record(),
    };
    for step in 0..config.steps {
        let batch: Vec<TrainingPair<F>> = (0..config.batch_size)
            .map(|_| sample_training_pair(gmm, &config.sigma, &mut rng))
            .collect();
        let (loss, grad) = loss_and_grad(&model, &batch, &config.weight)?;
        if !loss.is_finite() || loss.to_f64_lossy() > DIVERGENCE_LOSS {
            log::warn!("training diverged at step {step} with loss {loss}");
            return Err(Error::TrainingDiverged {
                step,
                loss: loss.to_f64_lossy(),
                last_good: Box::new(model.to_checkpoint(meta(step, &losses))),
            });
        }
        losses.push(loss);
        let lr = config.learning_rate;
        let params = model.net.params_mut();
        match config.optimizer {
            Optimizer::Momentum { beta } => {
                for ((p, v), &g) in params.iter_mut().zip(m1.iter_mut()).zip(&grad) {
                    *v = beta * *v + g;
                    *p = *p - lr * *v;
                }
            }
            Optimizer::Adam { beta1, beta2, eps } => {
                let t = (step + 1) as i32;
                let c1 = F::one() - beta1.powi(t);
                let c2 = F::one() - beta2.powi(t);
                for (((p, m), v), &g) in params.iter_mut().zip(m1.iter_mut()).zip(m2.iter_mut()).zip(&grad) {
                    *m = beta1 * *m + (F::one() - beta1) * g;
                    *v = beta2 * *v + (F::one() - beta2) * g * g;
                    *p = *p - lr * (*m / c1) / ((*v / c2).sqrt() + eps);
                }
            }
        }
        if !params.iter().all(|p| p.is_finite()) {
            return Err(Error::Numeric(format!("non-finite parameters after step {step}")));
        }
    }
    let checkpoint = model.to_checkpoint(meta(config.steps, &losses));
    Ok(TrainOutcome {
        model,
        checkpoint,
        losses,
    })
}
