//! Batch-means confidence intervals and running averages.

use serde::{Deserialize, Serialize};
use statrs::distribution::{ContinuousCDF, StudentsT};

/// Paths per batch.
pub const BATCH_SIZE: usize = 16;

/// Point estimate with a 95% confidence half-width.
#[derive(Clone, Copy, Debug, PartialEq, Serialize, Deserialize)]
pub struct Estimate {
    pub mean: f64,
    pub half_width: f64,
    pub n_batches: usize,
}

impl Estimate {
    pub fn exact(v: f64) -> Self {
        Self {
            mean: v,
            half_width: 0.0,
            n_batches: 0,
        }
    }

    pub fn lo(&self) -> f64 {
        self.mean - self.half_width
    }

    pub fn hi(&self) -> f64 {
        self.mean + self.half_width
    }

    pub fn excludes_zero(&self) -> bool {
        self.lo() > 0.0 || self.hi() < 0.0
    }

    pub fn scaled(&self, s: f64) -> Self {
        Self {
            mean: self.mean * s,
            half_width: self.half_width * s.abs(),
            n_batches: self.n_batches,
        }
    }

    /// `|a - b|` in units of `sqrt(hw_a^2 + hw_b^2)`.
    pub fn discrepancy(&self, other: &Estimate) -> f64 {
        let d = (self.mean - other.mean).abs();
        let hw = self.half_width.hypot(other.half_width);
        if hw == 0.0 {
            if d == 0.0 {
                0.0
            } else {
                f64::INFINITY
            }
        } else {
            d / hw
        }
    }
}

/// Two-sided 95% Student-t quantile.
pub fn t_quantile_975(dof: usize) -> f64 {
    if dof == 0 {
        return f64::INFINITY;
    }
    StudentsT::new(0.0, 1.0, dof as f64)
        .map(|t| t.inverse_cdf(0.975))
        .unwrap_or(f64::INFINITY)
}

fn batch_averages(values: &[f64], batch: usize) -> Vec<f64> {
    values
        .chunks_exact(batch)
        .map(|c| c.iter().sum::<f64>() / batch as f64)
        .collect()
}

fn mean_sd(xs: &[f64]) -> (f64, f64) {
    let n = xs.len() as f64;
    let m = xs.iter().sum::<f64>() / n;
    let var = xs.iter().map(|x| (x - m) * (x - m)).sum::<f64>() / (n - 1.0).max(1.0);
    (m, var.sqrt())
}

/// Batch-means interval over per-path values (in path order). Trailing
/// paths that do not fill a batch contribute to the mean only.
pub fn batch_means(values: &[f64], batch: usize) -> Estimate {
    let n = values.len();
    if n == 0 {
        return Estimate {
            mean: f64::NAN,
            half_width: f64::INFINITY,
            n_batches: 0,
        };
    }
    let mean = values.iter().sum::<f64>() / n as f64;
    let b = batch_averages(values, batch.max(1));
    if b.len() < 2 {
        return Estimate {
            mean,
            half_width: f64::INFINITY,
            n_batches: b.len(),
        };
    }
    let (_, sd) = mean_sd(&b);
    Estimate {
        mean,
        half_width: t_quantile_975(b.len() - 1) * sd / (b.len() as f64).sqrt(),
        n_batches: b.len(),
    }
}

/// Ratio `sum num / sum den` with a delta-method batch-means interval.
pub fn ratio_means(num: &[f64], den: &[f64], batch: usize) -> Estimate {
    assert_eq!(num.len(), den.len());
    let sn: f64 = num.iter().sum();
    let sd: f64 = den.iter().sum();
    let r = sn / sd;
    let bn = batch_averages(num, batch.max(1));
    let bd = batch_averages(den, batch.max(1));
    let k = bn.len();
    if k < 2 {
        return Estimate {
            mean: r,
            half_width: f64::INFINITY,
            n_batches: k,
        };
    }
    let md = bd.iter().sum::<f64>() / k as f64;
    let resid: Vec<f64> = bn.iter().zip(&bd).map(|(a, b)| a - r * b).collect();
    let (_, s) = mean_sd(&resid);
    Estimate {
        mean: r,
        half_width: t_quantile_975(k - 1) * s / ((k as f64).sqrt() * md.abs()),
        n_batches: k,
    }
}

/// Running sum with count (for time averages along a path).
#[derive(Clone, Copy, Debug, Default, PartialEq, Serialize, Deserialize)]
pub struct RunningSum {
    pub sum: f64,
    pub count: u64,
}

impl RunningSum {
    #[inline]
    pub fn push(&mut self, x: f64) {
        self.sum += x;
        self.count += 1;
    }

    pub fn mean(&self) -> f64 {
        if self.count == 0 {
            f64::NAN
        } else {
            self.sum / self.count as f64
        }
    }
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn t_quantiles() {
        assert!((t_quantile_975(1) - 12.706).abs() < 1e-3);
        assert!((t_quantile_975(63) - 1.998).abs() < 1e-3);
    }

    #[test]
    fn constant_values_have_zero_width() {
        let e = batch_means(&[2.5; 64], BATCH_SIZE);
        assert_eq!(e.mean, 2.5);
        assert_eq!(e.half_width, 0.0);
        assert_eq!(e.n_batches, 4);
    }

    #[test]
    fn ratio_of_proportional_series() {
        let den: Vec<f64> = (0..64).map(|i| 1.0 + (i % 5) as f64).collect();
        let num: Vec<f64> = den.iter().map(|d| -3.0 * d).collect();
        let e = ratio_means(&num, &den, BATCH_SIZE);
        assert!((e.mean + 3.0).abs() < 1e-14);
        assert!(e.half_width < 1e-12);
    }

    #[test]
    fn discrepancy_units() {
        let a = Estimate {
            mean: 1.0,
            half_width: 0.3,
            n_batches: 4,
        };
        let b = Estimate {
            mean: 0.5,
            half_width: 0.4,
            n_batches: 4,
        };
        assert!((a.discrepancy(&b) - 1.0).abs() < 1e-12);
    }
}
