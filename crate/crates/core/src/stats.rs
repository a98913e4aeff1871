//! Small sample-statistics helpers shared by the Monte Carlo modules.

use serde::{Deserialize, Serialize};

/// Sample mean with its standard error.
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct Estimate {
    pub mean: f64,
    pub stderr: f64,
}

impl Estimate {
    /// Mean and `s/√n` for independent samples.
    pub fn from_iid(samples: &[f64]) -> Self {
        let n = samples.len();
        if n == 0 {
            return Estimate { mean: f64::NAN, stderr: f64::NAN };
        }
        let mean = samples.iter().sum::<f64>() / n as f64;
        if n == 1 || samples.iter().all(|&s| s == samples[0]) {
            return Estimate { mean, stderr: 0.0 };
        }
        let var = samples.iter().map(|s| (s - mean).powi(2)).sum::<f64>() / (n - 1) as f64;
        Estimate { mean, stderr: (var / n as f64).sqrt() }
    }

    /// Batch-means standard error for a correlated chain. Falls back to the
    /// iid formula when the chain is too short for `batches` batches.
    pub fn from_chain(samples: &[f64], batches: usize) -> Self {
        let n = samples.len();
        let batches = batches.max(2);
        if n < 2 * batches {
            return Self::from_iid(samples);
        }
        let size = n / batches;
        let means: Vec<f64> = samples
            .chunks_exact(size)
            .take(batches)
            .map(|c| c.iter().sum::<f64>() / size as f64)
            .collect();
        let mean = samples.iter().sum::<f64>() / n as f64;
        let bm = Self::from_iid(&means);
        Estimate { mean, stderr: bm.stderr }
    }
}

pub fn sorted(samples: &[f64]) -> Vec<f64> {
    let mut s = samples.to_vec();
    s.sort_by(|a, b| a.total_cmp(b));
    s
}

/// Linear-interpolated quantile of already sorted data.
pub fn quantile_sorted(sorted: &[f64], q: f64) -> f64 {
    assert!(!sorted.is_empty());
    let pos = q.clamp(0.0, 1.0) * (sorted.len() - 1) as f64;
    let lo = pos.floor() as usize;
    let hi = pos.ceil() as usize;
    let frac = pos - lo as f64;
    sorted[lo] * (1.0 - frac) + sorted[hi] * frac
}

pub fn median(samples: &[f64]) -> f64 {
    quantile_sorted(&sorted(samples), 0.5)
}

pub fn iqr(samples: &[f64]) -> f64 {
    let s = sorted(samples);
    quantile_sorted(&s, 0.75) - quantile_sorted(&s, 0.25)
}

/// Two-sample Kolmogorov–Smirnov statistic `sup |F_a - F_b|`.
pub fn ks_two_sample(a: &[f64], b: &[f64]) -> f64 {
    let a = sorted(a);
    let b = sorted(b);
    let (na, nb) = (a.len() as f64, b.len() as f64);
    let (mut i, mut j) = (0usize, 0usize);
    let mut d: f64 = 0.0;
    while i < a.len() && j < b.len() {
        let x = a[i].min(b[j]);
        while i < a.len() && a[i] <= x {
            i += 1;
        }
        while j < b.len() && b[j] <= x {
            j += 1;
        }
        d = d.max((i as f64 / na - j as f64 / nb).abs());
    }
    d
}

/// Asymptotic 95% noise floor of the two-sample KS statistic.
pub fn ks_noise_floor(n: usize, m: usize) -> f64 {
    1.36 * ((n + m) as f64 / (n as f64 * m as f64)).sqrt()
}

/// Least-squares slope of `y` on `x`.
pub fn ols_slope(x: &[f64], y: &[f64]) -> f64 {
    let n = x.len() as f64;
    let mx = x.iter().sum::<f64>() / n;
    let my = y.iter().sum::<f64>() / n;
    let sxy: f64 = x.iter().zip(y).map(|(a, b)| (a - mx) * (b - my)).sum();
    let sxx: f64 = x.iter().map(|a| (a - mx).powi(2)).sum();
    sxy / sxx
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn ks_identical_samples_is_zero() {
        let a = [0.3, -1.0, 2.0, 0.1];
        assert_eq!(ks_two_sample(&a, &a), 0.0);
    }

    #[test]
    fn ks_disjoint_samples_is_one() {
        assert_eq!(ks_two_sample(&[0.0, 1.0], &[5.0, 6.0, 7.0]), 1.0);
    }

    #[test]
    fn ks_with_ties() {
        // F_a jumps to 1 at 1; F_b is 1/2 at 1
        assert!((ks_two_sample(&[1.0, 1.0], &[1.0, 2.0]) - 0.5).abs() < 1e-15);
    }

    #[test]
    fn quantiles() {
        let s = [1.0, 2.0, 3.0, 4.0, 5.0];
        assert_eq!(median(&s), 3.0);
        assert_eq!(iqr(&s), 2.0);
    }

    #[test]
    fn batch_means_of_constant_chain() {
        let e = Estimate::from_chain(&vec![2.5; 1000], 20);
        assert_eq!(e.mean, 2.5);
        assert_eq!(e.stderr, 0.0);
    }

    #[test]
    fn slope_of_line() {
        let x = [0.0, 1.0, 2.0, 3.0];
        let y: Vec<f64> = x.iter().map(|v| 1.0 - 2.0 * v).collect();
        assert!((ols_slope(&x, &y) + 2.0).abs() < 1e-12);
    }
}
