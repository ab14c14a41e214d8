//! Score functions and the denoisers tied to them by Tweedie's formula,
//! `D(x, σ) = x + σ² ∇log f_{X_σ}(x)`.
//!
//! [`GaussianMixture`] is the analytic reference: its smoothed density,
//! score, MMSE denoiser and linear-Gaussian posterior are all closed form.
//! [`VeScoreAdapter`] and [`VpScoreAdapter`] turn externally parameterized
//! networks into template-compatible score sources.

use rand::Rng;
use rand_chacha::rand_core::SeedableRng;
use rand_chacha::ChaCha8Rng;
use rand_distr::StandardNormal;

use crate::conditional::LinearObservation;
use crate::error::{ensure_dim, Error, Result};
use crate::linalg::{Cholesky, Matrix, SymmetricEigen};
use crate::scalar::Scalar;
use crate::schedules::{noise_to_time, AlphaBarSchedule, NoiseTime};

/// Provider of `∇log f_{X_σ}` and the matching MMSE denoiser.
///
/// Implementations define one of the two methods natively and the other
/// through Tweedie's formula.
pub trait ScoreSource<F: Scalar>: Send + Sync {
    fn dim(&self) -> usize;

    fn score(&self, x: &[F], sigma: F) -> Vec<F>;

    fn denoise(&self, x: &[F], sigma: F) -> Vec<F> {
        let s2 = sigma * sigma;
        self.score(x, sigma)
            .into_iter()
            .zip(x)
            .map(|(g, &xi)| xi + s2 * g)
            .collect()
    }
}

impl<F: Scalar, S: ScoreSource<F> + ?Sized> ScoreSource<F> for &S {
    fn dim(&self) -> usize {
        (**self).dim()
    }
    fn score(&self, x: &[F], sigma: F) -> Vec<F> {
        (**self).score(x, sigma)
    }
    fn denoise(&self, x: &[F], sigma: F) -> Vec<F> {
        (**self).denoise(x, sigma)
    }
}

impl<F: Scalar, S: ScoreSource<F> + ?Sized> ScoreSource<F> for Box<S> {
    fn dim(&self) -> usize {
        (**self).dim()
    }
    fn score(&self, x: &[F], sigma: F) -> Vec<F> {
        (**self).score(x, sigma)
    }
    fn denoise(&self, x: &[F], sigma: F) -> Vec<F> {
        (**self).denoise(x, sigma)
    }
}

#[derive(Debug, Clone)]
struct Component<F> {
    weight: F,
    log_weight: F,
    mean: Vec<F>,
    cov: Matrix<F>,
    chol: Cholesky<F>,
    eigen: SymmetricEigen<F>,
}

/// Finite Gaussian mixture `Σ w_i N(μ_i, Σ_i)` in `d` dimensions.
#[derive(Debug, Clone)]
pub struct GaussianMixture<F> {
    dim: usize,
    components: Vec<Component<F>>,
}

impl<F: Scalar> GaussianMixture<F> {
    pub fn new(weights: Vec<F>, means: Vec<Vec<F>>, covariances: Vec<Matrix<F>>) -> Result<Self> {
        if weights.is_empty() {
            return Err(Error::config("mixture needs at least one component"));
        }
        ensure_dim("mixture means", weights.len(), means.len())?;
        ensure_dim("mixture covariances", weights.len(), covariances.len())?;
        let total: F = weights.iter().copied().sum();
        if (total - F::one()).abs() > F::lit(1e-12).max(F::epsilon() * F::lit(16.0)) {
            return Err(Error::config(format!("mixture weights sum to {total}, not 1")));
        }
        let dim = means[0].len();
        if dim == 0 {
            return Err(Error::config("mixture dimension must be positive"));
        }
        let sym_tol = F::lit(1e-12).max(F::epsilon() * F::lit(16.0));
        let mut components = Vec::with_capacity(weights.len());
        for (i, ((w, mean), cov)) in weights.into_iter().zip(means).zip(covariances).enumerate() {
            if !(w > F::zero()) {
                return Err(Error::config(format!("mixture weight {i} = {w} must be positive")));
            }
            ensure_dim("component mean", dim, mean.len())?;
            ensure_dim("component covariance rows", dim, cov.rows())?;
            ensure_dim("component covariance cols", dim, cov.cols())?;
            if cov.asymmetry() > sym_tol {
                return Err(Error::config(format!("covariance {i} is not symmetric")));
            }
            let chol = cov
                .cholesky()
                .map_err(|_| Error::config(format!("covariance {i} is not positive definite")))?;
            let eigen = cov.symmetric_eigen()?;
            components.push(Component {
                weight: w,
                log_weight: w.ln(),
                mean,
                cov,
                chol,
                eigen,
            });
        }
        Ok(Self { dim, components })
    }

    /// Mixture with isotropic components `N(μ_i, s_i² I)`.
    pub fn isotropic(weights: Vec<F>, means: Vec<Vec<F>>, stds: &[F]) -> Result<Self> {
        let dim = means.first().map_or(0, Vec::len);
        let covs = stds
            .iter()
            .map(|&s| Matrix::scaled_identity(dim, s * s))
            .collect();
        Self::new(weights, means, covs)
    }

    pub fn dim(&self) -> usize {
        self.dim
    }

    pub fn n_components(&self) -> usize {
        self.components.len()
    }

    pub fn weights(&self) -> Vec<F> {
        self.components.iter().map(|c| c.weight).collect()
    }

    pub fn means(&self) -> Vec<Vec<F>> {
        self.components.iter().map(|c| c.mean.clone()).collect()
    }

    pub fn covariances(&self) -> Vec<Matrix<F>> {
        self.components.iter().map(|c| c.cov.clone()).collect()
    }

    /// Law of `X + σN`: covariances become `Σ_i + σ² I`.
    pub fn smoothed(&self, sigma: F) -> Result<Self> {
        if !(sigma >= F::zero()) {
            return Err(Error::Precondition(format!("noise level {sigma} must be >= 0")));
        }
        let s2 = sigma * sigma;
        Self::new(
            self.weights(),
            self.means(),
            self.components.iter().map(|c| c.cov.add_diagonal(s2)).collect(),
        )
    }

    /// Law of `c X`.
    pub fn scaled(&self, c: F) -> Result<Self> {
        Self::new(
            self.weights(),
            self.components
                .iter()
                .map(|k| k.mean.iter().map(|&m| c * m).collect())
                .collect(),
            self.components
                .iter()
                .map(|k| {
                    let rows: Vec<Vec<F>> = k
                        .cov
                        .to_rows()
                        .into_iter()
                        .map(|r| r.into_iter().map(|v| c * c * v).collect())
                        .collect();
                    Matrix::from_rows(&rows).expect("square covariance")
                })
                .collect(),
        )
    }

    pub fn mean(&self) -> Vec<F> {
        let mut m = vec![F::zero(); self.dim];
        for c in &self.components {
            for (mi, &ci) in m.iter_mut().zip(&c.mean) {
                *mi = *mi + c.weight * ci;
            }
        }
        m
    }

    pub fn covariance(&self) -> Matrix<F> {
        let mean = self.mean();
        let mut out = Matrix::zeros(self.dim, self.dim);
        for c in &self.components {
            for i in 0..self.dim {
                for j in 0..self.dim {
                    let dm = (c.mean[i] - mean[i]) * (c.mean[j] - mean[j]);
                    out[(i, j)] = out[(i, j)] + c.weight * (c.cov[(i, j)] + dm);
                }
            }
        }
        out
    }

    /// Per-component `(log w_i + log N(x; μ_i, Σ_i + σ²I), eigen coordinates
    /// of the whitened residual)`.
    fn component_terms(&self, x: &[F], s2: F) -> Vec<(F, Vec<F>)> {
        let half = F::lit(0.5);
        let log_2pi = (F::lit(2.0) * F::PI()).ln();
        let d = F::from_usize_lossy(self.dim);
        self.components
            .iter()
            .map(|c| {
                let diff: Vec<F> = x.iter().zip(&c.mean).map(|(&a, &b)| a - b).collect();
                let coords = c.eigen.to_eigenbasis(&diff);
                let mut quad = F::zero();
                let mut logdet = F::zero();
                let whitened: Vec<F> = coords
                    .iter()
                    .zip(&c.eigen.values)
                    .map(|(&u, &lam)| {
                        let v = lam + s2;
                        quad = quad + u * u / v;
                        logdet = logdet + v.ln();
                        u / v
                    })
                    .collect();
                (c.log_weight - half * (quad + logdet + d * log_2pi), whitened)
            })
            .collect()
    }

    fn responsibilities(terms: &[(F, Vec<F>)]) -> (F, Vec<F>) {
        let max = terms
            .iter()
            .fold(F::neg_infinity(), |m, (l, _)| m.max(*l));
        let sum: F = terms.iter().map(|(l, _)| (*l - max).exp()).sum();
        let lse = max + sum.ln();
        (lse, terms.iter().map(|(l, _)| (*l - lse).exp()).collect())
    }

    /// `log f_{X_σ}(x)`.
    pub fn log_density(&self, x: &[F], sigma: F) -> F {
        assert_eq!(x.len(), self.dim, "log_density dimension");
        let terms = self.component_terms(x, sigma * sigma);
        Self::responsibilities(&terms).0
    }

    /// Posterior component probabilities `P(i | X_σ = x)`.
    pub fn responsibilities_at(&self, x: &[F], sigma: F) -> Vec<F> {
        let terms = self.component_terms(x, sigma * sigma);
        Self::responsibilities(&terms).1
    }

    /// `∇log f_{X_σ}(x)`, responsibility-weighted component scores with the
    /// responsibilities formed in the log domain.
    pub fn score(&self, x: &[F], sigma: F) -> Vec<F> {
        assert_eq!(x.len(), self.dim, "score dimension");
        let terms = self.component_terms(x, sigma * sigma);
        let (_, resp) = Self::responsibilities(&terms);
        let mut coords = vec![F::zero(); self.dim];
        let mut out = vec![F::zero(); self.dim];
        for ((c, (_, whitened)), &g) in self.components.iter().zip(&terms).zip(&resp) {
            if g == F::zero() {
                continue;
            }
            for (o, &w) in coords.iter_mut().zip(whitened) {
                *o = -g * w;
            }
            let back = c.eigen.from_eigenbasis(&coords);
            for (o, b) in out.iter_mut().zip(back) {
                *o = *o + b;
            }
        }
        out
    }

    /// `E[X | X_σ = x]` through Tweedie's formula. Requires `σ > 0`.
    pub fn mmse_denoise(&self, x: &[F], sigma: F) -> Result<Vec<F>> {
        if !(sigma > F::zero()) {
            return Err(Error::Precondition(format!(
                "MMSE denoising needs sigma > 0 (got {sigma}); Tweedie's formula divides by sigma^2"
            )));
        }
        Ok(ScoreSource::denoise(self, x, sigma))
    }

    /// `E[X | X_σ = x]` from the per-component Gaussian posteriors,
    /// `Σ_i γ_i (μ_i + Σ_i(Σ_i + σ²I)^{-1}(x - μ_i))`, without the score.
    pub fn posterior_mean(&self, x: &[F], sigma: F) -> Vec<F> {
        let s2 = sigma * sigma;
        let terms = self.component_terms(x, s2);
        let (_, resp) = Self::responsibilities(&terms);
        let mut out = vec![F::zero(); self.dim];
        for ((c, (_, whitened)), &g) in self.components.iter().zip(&terms).zip(&resp) {
            let shrunk: Vec<F> = whitened
                .iter()
                .zip(&c.eigen.values)
                .map(|(&w, &lam)| w * lam)
                .collect();
            let delta = c.eigen.from_eigenbasis(&shrunk);
            for ((o, &m), dlt) in out.iter_mut().zip(&c.mean).zip(delta) {
                *o = *o + g * (m + dlt);
            }
        }
        out
    }

    /// Score of the posterior of `X_σ` given a linear-Gaussian measurement:
    /// `∇log f_{X_σ}(x) + Aᵀ(y - Ax)/η²`.
    pub fn posterior_score(&self, x: &[F], sigma: F, obs: &LinearObservation<F>) -> Result<Vec<F>> {
        ensure_dim("posterior score input", self.dim, x.len())?;
        ensure_dim("observation operator input", self.dim, obs.in_dim())?;
        let lik = obs.likelihood_grad(x)?;
        Ok(self
            .score(x, sigma)
            .into_iter()
            .zip(lik)
            .map(|(a, b)| a + b)
            .collect())
    }

    /// Exact posterior `f_{X|Y=y}` for `y = A x + η n`; again a Gaussian
    /// mixture with per-component Kalman updates and reweighting by the
    /// evidence `N(y; Aμ_i, AΣ_iAᵀ + η²I)`.
    pub fn condition(&self, obs: &LinearObservation<F>) -> Result<Self> {
        ensure_dim("observation operator input", self.dim, obs.in_dim())?;
        let a = obs.operator().to_dense();
        let at = a.transpose();
        let eta2 = obs.eta() * obs.eta();
        let m = a.rows();
        let half = F::lit(0.5);
        let log_2pi = (F::lit(2.0) * F::PI()).ln();
        let mut log_w = Vec::new();
        let mut means: Vec<Vec<F>> = Vec::new();
        let mut covs: Vec<Matrix<F>> = Vec::new();
        for c in &self.components {
            let a_sigma = a.matmul(&c.cov);
            let s = a_sigma.matmul(&at).add_diagonal(eta2);
            let s_chol = s.cholesky()?;
            let resid: Vec<F> = obs
                .y()
                .iter()
                .zip(a.matvec(&c.mean))
                .map(|(&y, am)| y - am)
                .collect();
            let s_inv_r = s_chol.solve(&resid);
            let quad: F = resid.iter().zip(&s_inv_r).map(|(&r, &v)| r * v).sum();
            log_w.push(
                c.log_weight
                    - half * (quad + s_chol.log_det() + F::from_usize_lossy(m) * log_2pi),
            );
            // Gain applied as Σ Aᵀ S^{-1}.
            let gain_r = c.cov.matvec(&at.matvec(&s_inv_r));
            means.push(c.mean.iter().zip(gain_r).map(|(&mu, g)| mu + g).collect());
            // Σ' = Σ - (AΣ)ᵀ S^{-1} (AΣ)
            let mut cov = c.cov.clone();
            for j in 0..self.dim {
                let col: Vec<F> = (0..m).map(|r| a_sigma[(r, j)]).collect();
                let solved = s_chol.solve(&col);
                for i in 0..self.dim {
                    let mut acc = F::zero();
                    for r in 0..m {
                        acc = acc + a_sigma[(r, i)] * solved[r];
                    }
                    cov[(i, j)] = cov[(i, j)] - acc;
                }
            }
            for i in 0..self.dim {
                for j in (i + 1)..self.dim {
                    let avg = half * (cov[(i, j)] + cov[(j, i)]);
                    cov[(i, j)] = avg;
                    cov[(j, i)] = avg;
                }
            }
            covs.push(cov);
        }
        let max = log_w.iter().fold(F::neg_infinity(), |a, &b| a.max(b));
        let raw: Vec<F> = log_w.iter().map(|&l| (l - max).exp()).collect();
        let total: F = raw.iter().copied().sum();
        let mut weights: Vec<F> = raw.iter().map(|&r| r / total).collect();
        // Drop numerically dead components; they would fail the positivity check.
        let keep: Vec<usize> = (0..weights.len())
            .filter(|&i| weights[i] > F::min_positive_value())
            .collect();
        if keep.len() != weights.len() {
            let t: F = keep.iter().map(|&i| weights[i]).sum();
            weights = keep.iter().map(|&i| weights[i] / t).collect();
            means = keep.iter().map(|&i| means[i].clone()).collect();
            covs = keep.iter().map(|&i| covs[i].clone()).collect();
        }
        let total: F = weights.iter().copied().sum();
        weights.iter_mut().for_each(|w| *w = *w / total);
        Self::new(weights, means, covs)
    }

    /// One ancestral draw: component by weight, then `μ_i + L_i z`.
    pub fn sample<R: Rng + ?Sized>(&self, rng: &mut R) -> Vec<F> {
        let u: f64 = rng.random();
        let mut acc = 0.0;
        let mut idx = self.components.len() - 1;
        for (i, c) in self.components.iter().enumerate() {
            acc += c.weight.to_f64_lossy();
            if u < acc {
                idx = i;
                break;
            }
        }
        let c = &self.components[idx];
        let z: Vec<F> = (0..self.dim)
            .map(|_| F::lit(rng.sample::<f64, _>(StandardNormal)))
            .collect();
        c.chol
            .mul_lower(&z)
            .into_iter()
            .zip(&c.mean)
            .map(|(v, &m)| v + m)
            .collect()
    }

    /// `n` iid draws from a seeded stream.
    pub fn sample_n(&self, n: usize, seed: u64) -> Vec<Vec<F>> {
        let mut rng = ChaCha8Rng::seed_from_u64(seed);
        (0..n).map(|_| self.sample(&mut rng)).collect()
    }
}

impl<F: Scalar> ScoreSource<F> for GaussianMixture<F> {
    fn dim(&self) -> usize {
        self.dim
    }

    fn score(&self, x: &[F], sigma: F) -> Vec<F> {
        GaussianMixture::score(self, x, sigma)
    }
}

/// Free-function form of [`GaussianMixture::smoothed`].
pub fn gmm_smoothed_density_params<F: Scalar>(
    gmm: &GaussianMixture<F>,
    sigma: F,
) -> Result<GaussianMixture<F>> {
    gmm.smoothed(sigma)
}

pub fn gmm_score<F: Scalar>(gmm: &GaussianMixture<F>, x: &[F], sigma: F) -> Result<Vec<F>> {
    ensure_dim("gmm score input", gmm.dim(), x.len())?;
    if !(sigma >= F::zero()) {
        return Err(Error::Precondition(format!("noise level {sigma} must be >= 0")));
    }
    Ok(gmm.score(x, sigma))
}

pub fn gmm_mmse_denoise<F: Scalar>(gmm: &GaussianMixture<F>, x: &[F], sigma: F) -> Result<Vec<F>> {
    ensure_dim("gmm denoise input", gmm.dim(), x.len())?;
    gmm.mmse_denoise(x, sigma)
}

pub fn gmm_posterior_score<F: Scalar>(
    gmm: &GaussianMixture<F>,
    x: &[F],
    sigma: F,
    obs: &LinearObservation<F>,
) -> Result<Vec<F>> {
    gmm.posterior_score(x, sigma, obs)
}

/// A denoiser `D(x, σ)` in the variance-exploding convention.
pub trait Denoiser<F: Scalar>: Send + Sync {
    fn dim(&self) -> usize;
    fn denoise(&self, x: &[F], sigma: F) -> Vec<F>;
}

/// Closure-backed [`Denoiser`].
pub struct DenoiserFn<G> {
    dim: usize,
    f: G,
}

impl<G> DenoiserFn<G> {
    pub fn new(dim: usize, f: G) -> Self {
        Self { dim, f }
    }
}

impl<F: Scalar, G: Fn(&[F], F) -> Vec<F> + Send + Sync> Denoiser<F> for DenoiserFn<G> {
    fn dim(&self) -> usize {
        self.dim
    }
    fn denoise(&self, x: &[F], sigma: F) -> Vec<F> {
        (self.f)(x, sigma)
    }
}

/// `∇log f_{X_σ}(x) = (D(x, σ) - x)/σ²`.
pub fn score_from_ve<F: Scalar, D: Denoiser<F> + ?Sized>(
    denoiser: &D,
    x: &[F],
    sigma: F,
) -> Result<Vec<F>> {
    if !(sigma > F::zero()) {
        return Err(Error::Precondition(format!(
            "score from a denoiser needs sigma > 0 (got {sigma})"
        )));
    }
    ensure_dim("denoiser input", denoiser.dim(), x.len())?;
    Ok(tweedie_score(&denoiser.denoise(x, sigma), x, sigma))
}

#[inline]
pub(crate) fn tweedie_score<F: Scalar>(denoised: &[F], x: &[F], sigma: F) -> Vec<F> {
    let s2 = sigma * sigma;
    denoised.iter().zip(x).map(|(&d, &xi)| (d - xi) / s2).collect()
}

/// Denoiser-native score source.
#[derive(Debug, Clone)]
pub struct VeScoreAdapter<D> {
    inner: D,
}

impl<D> VeScoreAdapter<D> {
    pub fn new(inner: D) -> Self {
        Self { inner }
    }

    pub fn inner(&self) -> &D {
        &self.inner
    }
}

impl<F: Scalar, D: Denoiser<F>> ScoreSource<F> for VeScoreAdapter<D> {
    fn dim(&self) -> usize {
        self.inner.dim()
    }

    fn score(&self, x: &[F], sigma: F) -> Vec<F> {
        tweedie_score(&self.inner.denoise(x, sigma), x, sigma)
    }

    fn denoise(&self, x: &[F], sigma: F) -> Vec<F> {
        self.inner.denoise(x, sigma)
    }
}

/// Noise predictor `ε(x_vp, t)` in the variance-preserving convention,
/// conditioned on a (possibly fractional) diffusion time.
pub trait EpsPredictor<F: Scalar>: Send + Sync {
    fn dim(&self) -> usize;
    fn predict_eps(&self, x_scaled: &[F], time: F) -> Vec<F>;
}

/// Exposes a VP noise predictor as a VE score source.
///
/// For a query `(x, σ)` the input is scaled by `√ᾱ` with `ᾱ = 1/(1+σ²)` and
/// the conditioning time is `t(σ)` from [`noise_to_time`]; the score is
/// `-ε(√ᾱ x, t(σ))/σ`.
#[derive(Debug, Clone)]
pub struct VpScoreAdapter<F, E> {
    inner: E,
    schedule: AlphaBarSchedule<F>,
    grid_size: usize,
}

impl<F: Scalar, E: EpsPredictor<F>> VpScoreAdapter<F, E> {
    pub fn new(inner: E, schedule: AlphaBarSchedule<F>, grid_size: usize) -> Result<Self> {
        if grid_size < schedule.len() {
            return Err(Error::config(format!(
                "noise-to-time grid ({grid_size}) smaller than schedule length ({})",
                schedule.len()
            )));
        }
        Ok(Self {
            inner,
            schedule,
            grid_size,
        })
    }

    /// Adapter with the default grid of `10·T` points.
    pub fn with_default_grid(inner: E, schedule: AlphaBarSchedule<F>) -> Result<Self> {
        let g = schedule.len() * crate::schedules::DEFAULT_GRID_FACTOR;
        Self::new(inner, schedule, g)
    }

    pub fn inner(&self) -> &E {
        &self.inner
    }

    pub fn schedule(&self) -> &AlphaBarSchedule<F> {
        &self.schedule
    }

    pub fn grid_size(&self) -> usize {
        self.grid_size
    }

    /// Noise prediction at a VE query, with the time lookup that produced it.
    pub fn eps_at(&self, x: &[F], sigma: F) -> Result<(Vec<F>, NoiseTime<F>)> {
        ensure_dim("VP adapter input", self.inner.dim(), x.len())?;
        let nt = noise_to_time(sigma, &self.schedule, self.grid_size)?;
        let scale = (F::one() / (F::one() + sigma * sigma)).sqrt();
        let xs: Vec<F> = x.iter().map(|&v| scale * v).collect();
        Ok((self.inner.predict_eps(&xs, nt.time), nt))
    }

    pub fn try_score(&self, x: &[F], sigma: F) -> Result<(Vec<F>, NoiseTime<F>)> {
        if !(sigma > F::zero()) {
            return Err(Error::Precondition(format!("VP adapter needs sigma > 0 (got {sigma})")));
        }
        let (eps, nt) = self.eps_at(x, sigma)?;
        Ok((eps.into_iter().map(|e| -e / sigma).collect(), nt))
    }
}

impl<F: Scalar, E: EpsPredictor<F>> ScoreSource<F> for VpScoreAdapter<F, E> {
    fn dim(&self) -> usize {
        self.inner.dim()
    }

    fn score(&self, x: &[F], sigma: F) -> Vec<F> {
        self.try_score(x, sigma)
            .expect("VP adapter query with valid noise level")
            .0
    }
}

/// Free-function form of [`VpScoreAdapter::try_score`].
pub fn score_from_vp<F: Scalar, E: EpsPredictor<F>>(
    adapter: &VpScoreAdapter<F, E>,
    x: &[F],
    sigma: F,
) -> Result<Vec<F>> {
    adapter.try_score(x, sigma).map(|(s, _)| s)
}

/// The optimal noise predictor `ε*(x_vp, t) = E[N | X_t^VP = x_vp]` of a
/// Gaussian mixture under a VP schedule, with fractional times resolved by
/// [`AlphaBarSchedule::sigma_at`].
#[derive(Debug, Clone)]
pub struct AnalyticEps<F> {
    gmm: GaussianMixture<F>,
    schedule: AlphaBarSchedule<F>,
}

impl<F: Scalar> AnalyticEps<F> {
    pub fn new(gmm: GaussianMixture<F>, schedule: AlphaBarSchedule<F>) -> Self {
        Self { gmm, schedule }
    }

    pub fn gmm(&self) -> &GaussianMixture<F> {
        &self.gmm
    }
}

impl<F: Scalar> EpsPredictor<F> for AnalyticEps<F> {
    fn dim(&self) -> usize {
        self.gmm.dim()
    }

    fn predict_eps(&self, x_scaled: &[F], time: F) -> Vec<F> {
        let sigma = self.schedule.sigma_at(time);
        let inv_scale = (F::one() + sigma * sigma).sqrt();
        let x_ve: Vec<F> = x_scaled.iter().map(|&v| v * inv_scale).collect();
        self.gmm
            .score(&x_ve, sigma)
            .into_iter()
            .map(|g| -sigma * g)
            .collect()
    }
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::schedules::make_linear_alpha_schedule;
    use approx::assert_relative_eq;
    use proptest::prelude::*;

    fn two_mode_1d() -> GaussianMixture<f64> {
        GaussianMixture::isotropic(vec![0.3, 0.7], vec![vec![-1.5], vec![1.0]], &[0.4, 0.6]).unwrap()
    }

    fn mix_2d() -> GaussianMixture<f64> {
        let c0 = Matrix::from_rows(&[vec![0.30, 0.10], vec![0.10, 0.20]]).unwrap();
        let c1 = Matrix::from_rows(&[vec![0.15, -0.05], vec![-0.05, 0.25]]).unwrap();
        let c2 = Matrix::scaled_identity(2, 0.1);
        GaussianMixture::new(
            vec![0.3, 0.3, 0.4],
            vec![vec![-2.0, 0.0], vec![2.0, 0.5], vec![0.0, 2.5]],
            vec![c0, c1, c2],
        )
        .unwrap()
    }

    #[test]
    fn validation_rejects_bad_mixtures() {
        assert!(GaussianMixture::isotropic(vec![0.5, 0.6], vec![vec![0.0], vec![1.0]], &[1.0, 1.0]).is_err());
        assert!(GaussianMixture::isotropic(vec![1.0, 0.0], vec![vec![0.0], vec![1.0]], &[1.0, 1.0]).is_err());
        let asym = Matrix::from_rows(&[vec![1.0, 0.1], vec![0.2, 1.0]]).unwrap();
        assert!(GaussianMixture::new(vec![1.0], vec![vec![0.0, 0.0]], vec![asym]).is_err());
        let indef = Matrix::from_rows(&[vec![1.0, 2.0], vec![2.0, 1.0]]).unwrap();
        assert!(GaussianMixture::new(vec![1.0], vec![vec![0.0, 0.0]], vec![indef]).is_err());
    }

    #[test]
    fn smoothing_by_zero_is_identity() {
        let g = mix_2d();
        let s = g.smoothed(0.0).unwrap();
        assert_eq!(s.covariances(), g.covariances());
        assert_eq!(s.means(), g.means());
    }

    #[test]
    fn single_gaussian_closed_forms() {
        let (mu, s, sigma) = (0.7, 0.5, 0.8);
        let g = GaussianMixture::isotropic(vec![1.0], vec![vec![mu]], &[s]).unwrap();
        let sm = g.smoothed(sigma).unwrap();
        assert_relative_eq!(sm.covariances()[0][(0, 0)], s * s + sigma * sigma, max_relative = 1e-15);
        for x in [-3.0, 0.0, 0.7, 2.5] {
            let v = s * s + sigma * sigma;
            assert_relative_eq!(g.score(&[x], sigma)[0], (mu - x) / v, max_relative = 1e-13);
            let d = g.mmse_denoise(&[x], sigma).unwrap()[0];
            assert_relative_eq!(d, (sigma * sigma * mu + s * s * x) / v, max_relative = 1e-13);
        }
    }

    #[test]
    fn symmetric_mixture_has_zero_score_at_origin() {
        let g = GaussianMixture::<f64>::isotropic(vec![0.5, 0.5], vec![vec![-2.0], vec![2.0]], &[0.5, 0.5]).unwrap();
        for sigma in [0.0, 0.3, 3.0] {
            assert!(g.score(&[0.0], sigma)[0].abs() < 1e-15);
        }
    }

    #[test]
    fn denoise_requires_positive_sigma() {
        let g = two_mode_1d();
        assert!(matches!(gmm_mmse_denoise(&g, &[0.0], 0.0), Err(Error::Precondition(_))));
        assert!(gmm_score(&g, &[0.0, 1.0], 0.5).is_err());
    }

    #[test]
    fn score_stays_finite_far_out() {
        let g = mix_2d();
        for x in [[1e6, -1e6], [-3e7, 5.0], [0.0, 1e8]] {
            let s = g.score(&x, 0.01);
            assert!(s.iter().all(|v| v.is_finite()));
            assert!(g.log_density(&x, 0.01).is_finite());
        }
    }

    #[test]
    fn large_noise_denoiser_tends_to_mixture_mean() {
        let g = mix_2d();
        let sigma = 1e4;
        let m = g.mean();
        for x in [[0.0, 0.0], [1e3, -2e3], [5.0, 5.0]] {
            let d = g.mmse_denoise(&x, sigma).unwrap();
            for i in 0..2 {
                assert!((d[i] - m[i]).abs() < 1e-3, "{d:?} vs {m:?}");
            }
        }
    }

    #[test]
    fn posterior_mean_route_agrees_with_tweedie() {
        let g = mix_2d();
        for (x, sigma) in [([0.3, -0.2], 0.5), ([-1.0, 2.0], 1.3), ([3.0, 3.0], 0.05)] {
            let a = g.mmse_denoise(&x, sigma).unwrap();
            let b = g.posterior_mean(&x, sigma);
            for i in 0..2 {
                assert_relative_eq!(a[i], b[i], epsilon = 1e-12);
            }
        }
    }

    #[test]
    fn vp_adapter_with_null_predictor_is_identity() {
        struct Zero;
        impl EpsPredictor<f64> for Zero {
            fn dim(&self) -> usize {
                2
            }
            fn predict_eps(&self, _: &[f64], _: f64) -> Vec<f64> {
                vec![0.0; 2]
            }
        }
        let sched = make_linear_alpha_schedule(0.9999, 0.98, 100).unwrap();
        let ad = VpScoreAdapter::with_default_grid(Zero, sched).unwrap();
        let x = [0.4, -1.2];
        assert_eq!(ad.score(&x, 0.5), vec![0.0, 0.0]);
        assert_eq!(ad.denoise(&x, 0.5), x.to_vec());
    }

    #[test]
    fn vp_adapter_with_analytic_eps_matches_mixture_score() {
        let g = mix_2d();
        let sched = make_linear_alpha_schedule(0.9999, 0.98, 1000).unwrap();
        let ad = VpScoreAdapter::with_default_grid(AnalyticEps::new(g.clone(), sched.clone()), sched.clone()).unwrap();
        for t in [1usize, 10, 100, 400, 999] {
            let sigma = sched.sigma(t);
            for x in [[0.1, 0.2], [-2.5, 1.0], [4.0, -3.0]] {
                let a = ad.score(&x, sigma);
                let b = g.score(&x, sigma);
                for i in 0..2 {
                    assert!((a[i] - b[i]).abs() <= 1e-8 * (1.0 + b[i].abs()), "t={t}");
                }
            }
        }
    }

    #[test]
    fn ve_score_equals_scaled_vp_score() {
        // Independent route: the VP marginal is itself a mixture with means
        // √ᾱ μ_i and covariances ᾱ(Σ_i + σ²I).
        let g = mix_2d();
        let sched = make_linear_alpha_schedule(0.9999, 0.98, 1000).unwrap();
        for t in [5usize, 200, 800] {
            let ab = sched.alpha_bar(t);
            let sigma = sched.sigma(t);
            let vp = g.smoothed(sigma).unwrap().scaled(ab.sqrt()).unwrap();
            for x in [[0.3, 0.3], [-1.7, 2.2]] {
                let xs = [ab.sqrt() * x[0], ab.sqrt() * x[1]];
                let via_vp = vp.score(&xs, 0.0);
                let ve = g.score(&x, sigma);
                for i in 0..2 {
                    assert!((ab.sqrt() * via_vp[i] - ve[i]).abs() <= 1e-8 * (1.0 + ve[i].abs()));
                }
            }
        }
    }

    #[test]
    fn ve_adapter_round_trips_tweedie() {
        let g = mix_2d();
        let d = DenoiserFn::new(2, |x: &[f64], s: f64| g.mmse_denoise(x, s).unwrap());
        for (x, s) in [([0.5, 0.5], 0.2), ([-2.0, 1.0], 1.5)] {
            let a = score_from_ve(&d, &x, s).unwrap();
            let b = g.score(&x, s);
            for i in 0..2 {
                assert!((a[i] - b[i]).abs() <= 1e-10 * (1.0 + b[i].abs()));
            }
        }
        let ident = DenoiserFn::new(2, |x: &[f64], _s: f64| x.to_vec());
        assert_eq!(score_from_ve(&ident, &[1.0, 2.0], 0.3).unwrap(), vec![0.0, 0.0]);
        assert!(score_from_ve(&ident, &[1.0, 2.0], 0.0).is_err());
    }

    #[test]
    fn score_jacobian_is_symmetric() {
        let g = mix_2d();
        let h = 1e-5;
        for (x, sigma) in [([0.2, 0.4], 0.3), ([-1.5, 0.5], 0.8), ([1.0, 2.0], 0.1)] {
            let mut jac = [[0.0; 2]; 2];
            for j in 0..2 {
                let mut xp = x;
                let mut xm = x;
                xp[j] += h;
                xm[j] -= h;
                let sp = g.score(&xp, sigma);
                let sm = g.score(&xm, sigma);
                for i in 0..2 {
                    jac[i][j] = (sp[i] - sm[i]) / (2.0 * h);
                }
            }
            let scale = jac[0][0].abs().max(jac[1][1].abs()).max(1.0);
            assert!((jac[0][1] - jac[1][0]).abs() / scale < 1e-4);
        }
    }

    #[test]
    fn conditioning_single_gaussian_matches_conjugate_update() {
        use crate::conditional::{ForwardOperator, LinearObservation};
        let (mu, s2, eta): (f64, f64, f64) = (0.3, 0.5, 0.2);
        let g = GaussianMixture::isotropic(vec![1.0], vec![vec![mu, mu]], &[s2.sqrt()]).unwrap();
        let obs = LinearObservation::new(ForwardOperator::identity(2), vec![1.0, -0.5], eta).unwrap();
        let post = g.condition(&obs).unwrap();
        let prec = 1.0 / s2 + 1.0 / (eta * eta);
        for (i, y) in [1.0, -0.5].iter().enumerate() {
            let m = (mu / s2 + y / (eta * eta)) / prec;
            assert_relative_eq!(post.means()[0][i], m, max_relative = 1e-12);
            assert_relative_eq!(post.covariances()[0][(i, i)], 1.0 / prec, max_relative = 1e-12);
        }
    }

    #[test]
    fn ancestral_draws_match_moments() {
        let g = mix_2d();
        let xs = g.sample_n(200_000, 11);
        let n = xs.len() as f64;
        let m = g.mean();
        let c = g.covariance();
        for i in 0..2 {
            let mean = xs.iter().map(|x| x[i]).sum::<f64>() / n;
            let se = (c[(i, i)] / n).sqrt();
            assert!((mean - m[i]).abs() < 4.0 * se);
        }
        assert_eq!(g.sample_n(5, 3), g.sample_n(5, 3));
    }

    proptest! {
        #[test]
        fn tweedie_identity_holds(x0 in -6.0f64..6.0, x1 in -6.0f64..6.0, sigma in 0.01f64..20.0) {
            let g = mix_2d();
            let x = [x0, x1];
            let d = g.denoise(&x, sigma);
            let s = g.score(&x, sigma);
            for i in 0..2 {
                prop_assert!((d[i] - x[i] - sigma * sigma * s[i]).abs() <= 1e-12 * (1.0 + x[i].abs() + d[i].abs()));
            }
        }
    }
}
