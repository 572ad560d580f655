//! Small statistical helpers shared by the Monte-Carlo checks.

use statrs::distribution::{ChiSquared, ContinuousCDF};

/// Two-sided 99% normal quantile.
pub const Z99: f64 = 2.575_829_303_548_901;

/// Wilson score interval for `successes` out of `trials` at normal quantile `z`.
pub fn wilson(successes: u64, trials: u64, z: f64) -> (f64, f64) {
    if trials == 0 {
        return (0.0, 1.0);
    }
    let n = trials as f64;
    let p = successes as f64 / n;
    let z2 = z * z;
    let denom = 1.0 + z2 / n;
    let centre = (p + z2 / (2.0 * n)) / denom;
    let half = z * (p * (1.0 - p) / n + z2 / (4.0 * n * n)).sqrt() / denom;
    ((centre - half).max(0.0), (centre + half).min(1.0))
}

/// Upper-tail p-value of Pearson's statistic for `observed` counts against
/// `expected` counts (`len - 1` degrees of freedom).
pub fn chi_square_pvalue(observed: &[u64], expected: &[f64]) -> f64 {
    assert_eq!(observed.len(), expected.len());
    assert!(observed.len() >= 2);
    let stat: f64 = observed
        .iter()
        .zip(expected)
        .map(|(&o, &e)| (o as f64 - e).powi(2) / e)
        .sum();
    let dist = ChiSquared::new((observed.len() - 1) as f64).expect("positive dof");
    1.0 - dist.cdf(stat)
}

/// Running mean and variance (Welford).
#[derive(Debug, Clone, Copy, Default)]
pub struct Moments {
    n: u64,
    mean: f64,
    m2: f64,
}

impl Moments {
    pub fn push(&mut self, x: f64) {
        self.n += 1;
        let delta = x - self.mean;
        self.mean += delta / self.n as f64;
        self.m2 += delta * (x - self.mean);
    }

    pub fn count(&self) -> u64 {
        self.n
    }

    pub fn mean(&self) -> f64 {
        self.mean
    }

    /// Unbiased sample variance.
    pub fn variance(&self) -> f64 {
        if self.n < 2 {
            0.0
        } else {
            self.m2 / (self.n - 1) as f64
        }
    }

    /// Standard error of the mean.
    pub fn std_err(&self) -> f64 {
        (self.variance() / self.n.max(1) as f64).sqrt()
    }
}

/// `|k - np| <= sigmas * sqrt(np(1-p))`.
pub fn within_binomial_band(k: u64, n: u64, p: f64, sigmas: f64) -> bool {
    let n = n as f64;
    let mean = n * p;
    let sd = (n * p * (1.0 - p)).sqrt();
    (k as f64 - mean).abs() <= sigmas * sd
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn wilson_reference_values() {
        let (lo, hi) = wilson(0, 1000, Z99);
        assert_eq!(lo, 0.0);
        assert!((hi - 0.006_591).abs() < 1e-5, "{hi}");
        let (lo, hi) = wilson(50, 100, 1.959_963_984_540_054);
        assert!((lo - 0.403_82).abs() < 1e-4 && (hi - 0.596_18).abs() < 1e-4);
    }

    #[test]
    fn chi_square_uniform_counts() {
        let p = chi_square_pvalue(&[100, 100, 100, 100], &[100.0; 4]);
        assert!((p - 1.0).abs() < 1e-12);
        let p = chi_square_pvalue(&[190, 10], &[100.0, 100.0]);
        assert!(p < 1e-10);
    }

    #[test]
    fn moments_match_direct_formulae() {
        let xs = [1.0, 2.0, 4.0, 7.0];
        let mut m = Moments::default();
        xs.iter().for_each(|&x| m.push(x));
        assert!((m.mean() - 3.5).abs() < 1e-15);
        assert!((m.variance() - 7.0).abs() < 1e-12);
    }
}
