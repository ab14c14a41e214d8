//! Two-sample metrics against exact draws from an analytic target.

use rand::Rng;
use rand_chacha::rand_core::SeedableRng;
use rand_chacha::ChaCha8Rng;

use crate::error::{ensure_dim, Error, Result};
use crate::linalg::Matrix;
use crate::sampler::draw_normals;
use crate::scalar::Scalar;
use crate::score_sources::GaussianMixture;

/// A sampler passes when its metric is at most this multiple of the
/// iid-vs-iid baseline at the same sample size.
pub const PASS_FACTOR: f64 = 3.0;

/// Exact `∫ |F_a(t) - F_b(t)| dt` between the empirical CDFs.
///
/// For equal sizes this is the mean absolute difference of the sorted
/// samples; for unequal sizes it is the quantile-function coupling.
pub fn wasserstein1_1d<F: Scalar>(a: &[F], b: &[F]) -> Result<F> {
    if a.is_empty() || b.is_empty() {
        return Err(Error::Precondition("Wasserstein distance of an empty sample".into()));
    }
    let mut a = a.to_vec();
    let mut b = b.to_vec();
    let cmp = |x: &F, y: &F| x.partial_cmp(y).expect("samples must not be NaN");
    a.sort_by(cmp);
    b.sort_by(cmp);
    if a.len() == b.len() {
        let s: F = a.iter().zip(&b).map(|(&x, &y)| (x - y).abs()).sum();
        return Ok(s / F::from_usize_lossy(a.len()));
    }
    let (na, nb) = (F::from_usize_lossy(a.len()), F::from_usize_lossy(b.len()));
    let (mut i, mut j) = (0usize, 0usize);
    let mut prev = a[0].min(b[0]);
    let mut total = F::zero();
    while i < a.len() || j < b.len() {
        let next = match (a.get(i), b.get(j)) {
            (Some(&x), Some(&y)) => x.min(y),
            (Some(&x), None) => x,
            (None, Some(&y)) => y,
            (None, None) => unreachable!(),
        };
        let fa = F::from_usize_lossy(i) / na;
        let fb = F::from_usize_lossy(j) / nb;
        total = total + (fa - fb).abs() * (next - prev);
        while i < a.len() && a[i] <= next {
            i += 1;
        }
        while j < b.len() && b[j] <= next {
            j += 1;
        }
        prev = next;
    }
    Ok(total)
}

fn check_batch<F>(a: &[Vec<F>], b: &[Vec<F>]) -> Result<usize> {
    let d = a
        .first()
        .or(b.first())
        .map(Vec::len)
        .ok_or_else(|| Error::Precondition("empty sample sets".into()))?;
    if d == 0 {
        return Err(Error::Precondition("zero-dimensional samples".into()));
    }
    for v in a.iter().chain(b) {
        ensure_dim("sample dimension", d, v.len())?;
    }
    Ok(d)
}

/// Mean 1D W1 over `n_projections` uniformly random unit directions.
/// In one dimension the single direction `+1` is used; in two the
/// directions are a randomly rotated evenly spaced fan.
pub fn sliced_wasserstein<F: Scalar>(
    a: &[Vec<F>],
    b: &[Vec<F>],
    n_projections: usize,
    seed: u64,
) -> Result<F> {
    let d = check_batch(a, b)?;
    if d == 1 {
        let pa: Vec<F> = a.iter().map(|v| v[0]).collect();
        let pb: Vec<F> = b.iter().map(|v| v[0]).collect();
        return wasserstein1_1d(&pa, &pb);
    }
    if n_projections == 0 {
        return Err(Error::config("sliced Wasserstein needs at least one projection"));
    }
    let mut rng = ChaCha8Rng::seed_from_u64(seed);
    let offset: f64 = rng.random();
    let mut total = F::zero();
    for j in 0..n_projections {
        let dir: Vec<F> = if d == 2 {
            // A randomly rotated, evenly spaced fan: each direction is still
            // uniform on the circle, with far less spread than iid angles.
            let theta = std::f64::consts::PI * (j as f64 + offset) / n_projections as f64;
            vec![F::lit(theta.cos()), F::lit(theta.sin())]
        } else {
            let mut v: Vec<F> = draw_normals(&mut rng, d);
            let len = v.iter().map(|&x| x * x).sum::<F>().sqrt();
            v.iter_mut().for_each(|x| *x = *x / len);
            v
        };
        let project = |set: &[Vec<F>]| -> Vec<F> {
            set.iter()
                .map(|v| v.iter().zip(&dir).map(|(&x, &u)| x * u).sum())
                .collect()
        };
        total = total + wasserstein1_1d(&project(a), &project(b))?;
    }
    Ok(total / F::from_usize_lossy(n_projections))
}

/// Standardized deviations of sample moments from their targets.
#[derive(Debug, Clone, PartialEq)]
pub struct MomentReport<F> {
    pub n: usize,
    pub sample_mean: Vec<F>,
    pub sample_cov: Matrix<F>,
    pub mean_z: Vec<F>,
    /// Row-major `d × d` z-scores of the covariance entries.
    pub cov_z: Matrix<F>,
}

impl<F: Scalar> MomentReport<F> {
    pub fn max_abs_z(&self) -> F {
        self.mean_z
            .iter()
            .chain(self.cov_z.as_slice())
            .fold(F::zero(), |m, z| m.max(z.abs()))
    }

    pub fn within(&self, bound: F) -> bool {
        self.max_abs_z() <= bound
    }
}

fn z_score<F: Scalar>(dev: F, se: F) -> F {
    if dev == F::zero() {
        F::zero()
    } else {
        dev / se
    }
}

/// Sample mean vector and unbiased covariance.
pub fn sample_moments<F: Scalar>(samples: &[Vec<F>]) -> Result<(Vec<F>, Matrix<F>)> {
    let d = check_batch(samples, &[])?;
    let n = F::from_usize_lossy(samples.len());
    let mut mean = vec![F::zero(); d];
    for v in samples {
        for (m, &x) in mean.iter_mut().zip(v) {
            *m = *m + x;
        }
    }
    mean.iter_mut().for_each(|m| *m = *m / n);
    let mut cov = Matrix::zeros(d, d);
    for v in samples {
        for i in 0..d {
            for j in 0..d {
                cov[(i, j)] = cov[(i, j)] + (v[i] - mean[i]) * (v[j] - mean[j]);
            }
        }
    }
    let denom = if samples.len() > 1 { n - F::one() } else { F::one() };
    for i in 0..d {
        for j in 0..d {
            cov[(i, j)] = cov[(i, j)] / denom;
        }
    }
    Ok((mean, cov))
}

/// z-scores of the sample mean and covariance, with standard errors taken
/// from the target: `√(Σ_ii/n)` for means and `√((Σ_ij² + Σ_ii Σ_jj)/n)`
/// for covariance entries (Gaussian fourth moments). A zero deviation
/// scores zero even when the target variance is zero.
pub fn moment_check<F: Scalar>(
    samples: &[Vec<F>],
    target_mean: &[F],
    target_cov: &Matrix<F>,
) -> Result<MomentReport<F>> {
    if samples.len() < 100 {
        return Err(Error::Precondition(format!(
            "moment check needs at least 100 samples (got {})",
            samples.len()
        )));
    }
    let (mean, cov) = sample_moments(samples)?;
    let d = mean.len();
    ensure_dim("target mean", d, target_mean.len())?;
    ensure_dim("target covariance", d, target_cov.rows())?;
    ensure_dim("target covariance", d, target_cov.cols())?;
    let n = F::from_usize_lossy(samples.len());
    let mean_z = (0..d)
        .map(|i| z_score(mean[i] - target_mean[i], (target_cov[(i, i)] / n).sqrt()))
        .collect();
    let mut cov_z = Matrix::zeros(d, d);
    for i in 0..d {
        for j in 0..d {
            let t = target_cov[(i, j)];
            let se = ((t * t + target_cov[(i, i)] * target_cov[(j, j)]) / n).sqrt();
            cov_z[(i, j)] = z_score(cov[(i, j)] - t, se);
        }
    }
    Ok(MomentReport {
        n: samples.len(),
        sample_mean: mean,
        sample_cov: cov,
        mean_z,
        cov_z,
    })
}

/// Mean of a correlated series and its batch-means standard error.
pub fn batch_means<F: Scalar>(series: &[F], n_batches: usize) -> Result<(F, F)> {
    if n_batches < 2 || series.len() < n_batches {
        return Err(Error::Precondition(format!(
            "batch means needs at least 2 batches and one value per batch (got {} values, {n_batches} batches)",
            series.len()
        )));
    }
    let size = series.len() / n_batches;
    let used = &series[..size * n_batches];
    let bsize = F::from_usize_lossy(size);
    let means: Vec<F> = used
        .chunks(size)
        .map(|c| c.iter().copied().sum::<F>() / bsize)
        .collect();
    let nb = F::from_usize_lossy(n_batches);
    let grand = means.iter().copied().sum::<F>() / nb;
    let var = means.iter().map(|&m| (m - grand) * (m - grand)).sum::<F>() / (nb - F::one());
    Ok((grand, (var / nb).sqrt()))
}

/// Metric between two independent exact draws of size `n`: the noise floor
/// that thresholds are scaled from.
pub fn baseline_resample<F, M>(
    target: &GaussianMixture<F>,
    n: usize,
    seeds: (u64, u64),
    metric: M,
) -> Result<F>
where
    F: Scalar,
    M: Fn(&[Vec<F>], &[Vec<F>]) -> Result<F>,
{
    let a = target.sample_n(n, seeds.0);
    let b = target.sample_n(n, seeds.1);
    metric(&a, &b)
}

/// Independent pairs averaged by [`baseline_mean`]. One pair's metric
/// varies by a factor of two between seeds at `n = 10⁴`.
pub const BASELINE_REPLICATES: usize = 5;

/// Mean of [`baseline_resample`] over `replicates` pairs whose seeds are
/// drawn from `seed`.
pub fn baseline_mean<F, M>(
    target: &GaussianMixture<F>,
    n: usize,
    seed: u64,
    replicates: usize,
    metric: M,
) -> Result<F>
where
    F: Scalar,
    M: Fn(&[Vec<F>], &[Vec<F>]) -> Result<F>,
{
    if replicates == 0 {
        return Err(Error::Precondition("baseline needs at least one replicate".into()));
    }
    let mut rng = ChaCha8Rng::seed_from_u64(seed);
    let mut total = F::zero();
    for _ in 0..replicates {
        let seeds = (rng.random::<u64>(), rng.random::<u64>());
        total = total + baseline_resample(target, n, seeds, &metric)?;
    }
    Ok(total / F::from_usize_lossy(replicates))
}

#[derive(Debug, Clone, PartialEq)]
pub struct MetricReport {
    pub metric: String,
    pub value: f64,
    pub n_samples: usize,
    pub baseline: f64,
    pub seed: u64,
}

impl MetricReport {
    pub const CSV_HEADER: &'static str = "metric,value,n_samples,baseline,ratio,pass,seed";

    pub fn ratio(&self) -> f64 {
        if self.baseline == 0.0 {
            if self.value == 0.0 {
                0.0
            } else {
                f64::INFINITY
            }
        } else {
            self.value / self.baseline
        }
    }

    pub fn passes(&self) -> bool {
        self.ratio() <= PASS_FACTOR
    }

    pub fn to_csv_row(&self) -> String {
        format!(
            "{},{},{},{},{},{},{}",
            self.metric,
            self.value,
            self.n_samples,
            self.baseline,
            self.ratio(),
            self.passes(),
            self.seed
        )
    }
}

#[cfg(test)]
mod tests {
    use super::*;
    use approx::assert_relative_eq;
    use proptest::prelude::*;
    use rand::Rng;

    fn normals(n: usize, shift: f64, seed: u64) -> Vec<f64> {
        let mut rng = ChaCha8Rng::seed_from_u64(seed);
        draw_normals::<f64, _>(&mut rng, n).into_iter().map(|v| v + shift).collect()
    }

    #[test]
    fn w1_basic_cases() {
        let a = [0.3, -1.0, 2.0];
        assert_eq!(wasserstein1_1d(&a, &a).unwrap(), 0.0);
        assert_eq!(wasserstein1_1d(&[0.0], &[1.0]).unwrap(), 1.0);
        assert!(wasserstein1_1d::<f64>(&[], &[1.0]).is_err());
        // {0} vs {0, 2}: CDF gap 1/2 over [0, 2].
        assert_relative_eq!(wasserstein1_1d(&[0.0], &[0.0, 2.0]).unwrap(), 1.0, max_relative = 1e-15);
    }

    #[test]
    fn w1_unequal_sizes_matches_replicated_equal_sizes() {
        let a = normals(30, 0.0, 1);
        let b = normals(20, 0.4, 2);
        let a2: Vec<f64> = a.iter().flat_map(|&v| [v, v]).collect();
        let b3: Vec<f64> = b.iter().flat_map(|&v| [v, v, v]).collect();
        let direct = wasserstein1_1d(&a, &b).unwrap();
        let replicated = wasserstein1_1d(&a2, &b3).unwrap();
        assert_relative_eq!(direct, replicated, max_relative = 1e-12);
    }

    #[test]
    fn w1_gaussian_shift() {
        let a = normals(100_000, 0.0, 3);
        let b = normals(100_000, 0.5, 4);
        assert!((wasserstein1_1d(&a, &b).unwrap() - 0.5).abs() < 0.02);
    }

    #[test]
    fn sliced_gaussian_shift_and_collapse() {
        let n = 100_000;
        let xa = normals(2 * n, 0.0, 5);
        let xb = normals(2 * n, 0.0, 6);
        let a: Vec<Vec<f64>> = xa.chunks(2).map(|c| c.to_vec()).collect();
        let b: Vec<Vec<f64>> = xb.chunks(2).map(|c| vec![c[0] + 1.0, c[1]]).collect();
        let sw = sliced_wasserstein(&a, &b, 200, 1).unwrap();
        assert!((sw - 2.0 / std::f64::consts::PI).abs() < 0.02, "{sw}");
        assert_eq!(sliced_wasserstein(&a, &a, 10, 1).unwrap(), 0.0);

        let one_a: Vec<Vec<f64>> = xa[..500].iter().map(|&v| vec![v]).collect();
        let one_b: Vec<Vec<f64>> = xb[..500].iter().map(|&v| vec![v]).collect();
        assert_eq!(
            sliced_wasserstein(&one_a, &one_b, 50, 9).unwrap(),
            wasserstein1_1d(&xa[..500], &xb[..500]).unwrap()
        );
        assert!(sliced_wasserstein(&one_a, &a, 5, 0).is_err());
    }

    #[test]
    fn moment_check_cases() {
        let n = 100_000;
        let xs = normals(2 * n, 0.0, 7);
        let samples: Vec<Vec<f64>> = xs.chunks(2).map(|c| c.to_vec()).collect();
        let rep = moment_check(&samples, &[0.0, 0.0], &Matrix::identity(2)).unwrap();
        assert!(rep.within(4.0), "{:?}", rep.max_abs_z());

        let constant = vec![vec![1.5]; 200];
        let rep = moment_check(&constant, &[1.5], &Matrix::zeros(1, 1)).unwrap();
        assert_eq!(rep.cov_z[(0, 0)], 0.0);
        assert_eq!(rep.mean_z[0], 0.0);

        let shifted: Vec<Vec<f64>> = samples.iter().map(|v| vec![v[0] + 10.0 / (n as f64).sqrt(), v[1]]).collect();
        let rep = moment_check(&shifted, &[0.0, 0.0], &Matrix::identity(2)).unwrap();
        assert!(rep.mean_z[0].abs() > 4.0);
        assert!(moment_check(&samples[..50], &[0.0, 0.0], &Matrix::identity(2)).is_err());
    }

    #[test]
    fn batch_means_of_iid_series() {
        let xs = normals(100_000, 1.0, 8);
        let (m, se) = batch_means(&xs, 50).unwrap();
        assert!((m - 1.0).abs() < 4.0 * se);
        assert!((se - (1.0f64 / 100_000.0).sqrt()).abs() < 0.5 * se);
    }

    #[test]
    fn baseline_mean_averages_replicates() {
        let g = GaussianMixture::isotropic(vec![1.0], vec![vec![0.0]], &[1.0]).unwrap();
        let w1 = |a: &[Vec<f64>], b: &[Vec<f64>]| {
            wasserstein1_1d(&a.iter().map(|x| x[0]).collect::<Vec<_>>(), &b.iter().map(|x| x[0]).collect::<Vec<_>>())
        };
        assert!(baseline_mean(&g, 100, 1, 0, w1).is_err());
        let mut rng = ChaCha8Rng::seed_from_u64(9);
        let mut by_hand = 0.0;
        for _ in 0..3 {
            let seeds = (rng.random::<u64>(), rng.random::<u64>());
            by_hand += baseline_resample(&g, 200, seeds, w1).unwrap() / 3.0;
        }
        assert_eq!(baseline_mean(&g, 200, 9, 3, w1).unwrap(), by_hand);
    }

    #[test]
    fn baseline_with_equal_seeds_is_zero() {
        let g = GaussianMixture::isotropic(vec![0.5, 0.5], vec![vec![-1.0, 0.0], vec![1.0, 0.0]], &[0.3, 0.3]).unwrap();
        let zero = baseline_resample(&g, 1000, (4, 4), |a, b| sliced_wasserstein(a, b, 20, 0)).unwrap();
        assert_eq!(zero, 0.0);
        let floor = baseline_resample(&g, 1000, (4, 5), |a, b| sliced_wasserstein(a, b, 20, 0)).unwrap();
        assert!(floor > 0.0);
    }

    #[test]
    fn report_rows() {
        let r = MetricReport { metric: "sliced_w1".into(), value: 0.02, n_samples: 100, baseline: 0.01, seed: 3 };
        assert!(r.passes());
        assert_eq!(r.to_csv_row(), "sliced_w1,0.02,100,0.01,2,true,3");
    }

    proptest! {
        #[test]
        fn w1_symmetric_and_triangle(seed in 0u64..5000, na in 1usize..40, nb in 1usize..40, nc in 1usize..40) {
            let mut rng = ChaCha8Rng::seed_from_u64(seed);
            let mut draw = |n: usize| (0..n).map(|_| rng.random_range(-3.0..3.0)).collect::<Vec<f64>>();
            let (a, b, c) = (draw(na), draw(nb), draw(nc));
            let ab = wasserstein1_1d(&a, &b).unwrap();
            prop_assert!((ab - wasserstein1_1d(&b, &a).unwrap()).abs() < 1e-12);
            let ac = wasserstein1_1d(&a, &c).unwrap();
            let cb = wasserstein1_1d(&c, &b).unwrap();
            prop_assert!(ab <= ac + cb + 1e-12);
        }

        #[test]
        fn sliced_monotone_in_shift(s1 in 0.0f64..2.0, extra in 0.2f64..2.0) {
            let xs = normals(4000, 0.0, 11);
            let a: Vec<Vec<f64>> = xs.chunks(2).map(|c| c.to_vec()).collect();
            let shift = |s: f64| a.iter().map(|v| vec![v[0] + s, v[1]]).collect::<Vec<_>>();
            let near = sliced_wasserstein(&a, &shift(s1), 30, 2).unwrap();
            let far = sliced_wasserstein(&a, &shift(s1 + extra), 30, 2).unwrap();
            prop_assert!(far >= near);
        }
    }
}
