//! Statistically annotated sample means.
//!
//! Sums run sequentially in path order so estimates are byte-identical no
//! matter how the paths were produced or how many workers ran them.

use crate::error::{Error, Result};

#[derive(Debug, Clone, Copy, PartialEq)]
pub struct McEstimate {
    pub mean: f64,
    pub se: f64,
    pub npaths: usize,
}

impl McEstimate {
    /// Combined standard error of the difference of two independent
    /// estimates.
    pub fn combined_se(&self, other: &McEstimate) -> f64 {
        (self.se * self.se + other.se * other.se).sqrt()
    }
}

/// Plain sample mean with standard error `sqrt(var / n)` (sample variance
/// with the n-1 denominator).
pub fn estimate(samples: &[f64]) -> Result<McEstimate> {
    if samples.is_empty() {
        return Err(Error::DegenerateEstimate("empty sample list".into()));
    }
    let n = samples.len();
    let mean = samples.iter().sum::<f64>() / n as f64;
    if n == 1 {
        return Ok(McEstimate { mean, se: 0.0, npaths: 1 });
    }
    let var = samples.iter().map(|x| (x - mean) * (x - mean)).sum::<f64>() / (n - 1) as f64;
    Ok(McEstimate {
        mean,
        se: (var / n as f64).sqrt(),
        npaths: n,
    })
}

/// Normalized importance-sampling estimate with the delta-method
/// standard error `sqrt(sum (w (x - mean))^2) / sum w`.
pub fn estimate_weighted(samples: &[f64], weights: &[f64]) -> Result<McEstimate> {
    if samples.is_empty() {
        return Err(Error::DegenerateEstimate("empty sample list".into()));
    }
    if samples.len() != weights.len() {
        return Err(Error::Dimension {
            field: "weights",
            expected: format!("{}", samples.len()),
            got: format!("{}", weights.len()),
        });
    }
    let mut wsum = 0.0;
    for &w in weights {
        if !(w >= 0.0) {
            return Err(Error::Domain(format!("weights must be nonnegative, got {w}")));
        }
        wsum += w;
    }
    if wsum <= 0.0 {
        return Err(Error::DegenerateEstimate("all weights are zero".into()));
    }
    let mut num = 0.0;
    for (x, w) in samples.iter().zip(weights) {
        num += w * x;
    }
    let mean = num / wsum;
    let mut dev2 = 0.0;
    for (x, w) in samples.iter().zip(weights) {
        let d = w * (x - mean);
        dev2 += d * d;
    }
    Ok(McEstimate {
        mean,
        se: dev2.sqrt() / wsum,
        npaths: samples.len(),
    })
}

#[cfg(test)]
mod tests {
    use super::*;
    use approx::assert_relative_eq;

    #[test]
    fn constant_samples() {
        let e = estimate(&[1.0, 1.0, 1.0]).unwrap();
        assert_eq!(e.mean, 1.0);
        assert_eq!(e.se, 0.0);
    }

    #[test]
    fn two_point_textbook_se() {
        let e = estimate(&[0.0, 2.0]).unwrap();
        assert_eq!(e.mean, 1.0);
        assert_eq!(e.se, 1.0);
    }

    #[test]
    fn weighted_degenerate_and_domain_errors() {
        assert!(matches!(
            estimate_weighted(&[1.0, 2.0], &[0.0, 0.0]),
            Err(Error::DegenerateEstimate(_))
        ));
        assert!(estimate_weighted(&[1.0], &[-0.5]).is_err());
        assert!(estimate(&[]).is_err());
    }

    #[test]
    fn uniform_weights_match_plain_mean() {
        let xs = [0.3, -1.2, 2.5, 0.9];
        let w = [2.0; 4];
        let a = estimate(&xs).unwrap();
        let b = estimate_weighted(&xs, &w).unwrap();
        assert_relative_eq!(a.mean, b.mean, max_relative = 1e-15);
    }

    #[test]
    fn se_scales_with_inverse_sqrt_paths() {
        // deterministic alternating sample: doubling n halves var/n
        let xs: Vec<f64> = (0..4096).map(|i| if i % 2 == 0 { 1.0 } else { -1.0 }).collect();
        let a = estimate(&xs[..1024]).unwrap();
        let b = estimate(&xs[..4096]).unwrap();
        assert_relative_eq!(a.se / b.se, 2.0, max_relative = 1e-3);
    }
}
