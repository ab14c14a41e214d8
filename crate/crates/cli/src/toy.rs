//! Small synthetic image distribution for the conditional experiments.

use scorewalk::{GaussianMixture64, Result};

/// Equal-weight mixture over five `width × height` patterns (ramps, a
/// centred square, a checkerboard) with isotropic pixel noise `std`.
/// Intensities lie in `[0, 1]`; images are row-major.
pub fn toy_image_mixture(width: usize, height: usize, std: f64) -> Result<GaussianMixture64> {
    let patterns = toy_patterns(width, height);
    let n = patterns.len();
    GaussianMixture64::isotropic(vec![1.0 / n as f64; n], patterns, &vec![std; n])
}

pub fn toy_patterns(width: usize, height: usize) -> Vec<Vec<f64>> {
    let frac = |i: usize, n: usize| if n > 1 { i as f64 / (n - 1) as f64 } else { 0.5 };
    let image = |f: &dyn Fn(usize, usize) -> f64| -> Vec<f64> {
        (0..height).flat_map(|r| (0..width).map(move |c| (r, c))).map(|(r, c)| f(r, c)).collect()
    };
    vec![
        image(&|_, c| 0.1 + 0.8 * frac(c, width)),
        image(&|r, _| 0.1 + 0.8 * frac(r, height)),
        image(&|r, c| {
            let inside = |i: usize, n: usize| 4 * i >= n && 4 * i < 3 * n;
            if inside(r, height) && inside(c, width) {
                0.85
            } else {
                0.15
            }
        }),
        image(&|r, c| if (r / 2 + c / 2) % 2 == 0 { 0.75 } else { 0.25 }),
        image(&|r, c| 0.1 + 0.8 * (frac(r, height) + frac(c, width)) / 2.0),
    ]
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn patterns_are_distinct_and_in_range() {
        let p = toy_patterns(8, 8);
        for (i, a) in p.iter().enumerate() {
            assert_eq!(a.len(), 64);
            assert!(a.iter().all(|&v| (0.0..=1.0).contains(&v)));
            for b in &p[i + 1..] {
                assert_ne!(a, b);
            }
        }
        let g = toy_image_mixture(8, 8, 0.05).unwrap();
        assert_eq!(g.n_components(), 5);
    }
}
