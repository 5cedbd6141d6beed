//! Utility functions through their inverse marginals.
//!
//! Everything downstream consumes a utility only through `I = (U')^{-1}`,
//! the weighted derivative `J(z) = z I'(z)`, and the Arrow-Pratt absolute
//! risk tolerance. Four families are supported: power `x^p/p` (p < 1,
//! p != 0), log, Pareto-optimal collectives (inverse marginals add), and
//! linear-sharing collectives (marginals add). A positive scale factor
//! `U -> c U` is carried explicitly since collective comparisons need the
//! reference utility in a particular normalization.

use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};

/// Relative tolerance for the numerical marginal/inverse-marginal solves.
const ROOT_TOL: f64 = 1e-13;
/// Initial bracket for the linear-sharing inversion, expanded geometrically.
const ROOT_BRACKET: (f64, f64) = (1e-12, 1e12);

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub enum UtilityKind {
    /// `U(x) = x^p / p` with `p < 1`, `p != 0`.
    Power { exponent: f64 },
    /// `U(x) = log x`.
    Log,
    /// Pareto-optimal sharing: inverse marginal is
    /// `I(z) = sum_i (z / beta_i)^{q_i - 1}`.
    Pareto { betas: Vec<f64>, exponents: Vec<f64> },
    /// Linear sharing: marginal is `U'(x) = sum_i w_i x^{p_i - 1}`.
    LinearSharing { weights: Vec<f64>, exponents: Vec<f64> },
}

/// A utility `scale * kind`, normalized so all calculus routes through
/// the base family.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct UtilitySpec {
    kind: UtilityKind,
    scale: f64,
}

fn q_of(p: f64) -> f64 {
    // p = 0 encodes the log component of a collective.
    if p == 0.0 {
        0.0
    } else {
        p / (p - 1.0)
    }
}

fn check_exponents(ps: &[f64]) -> Result<()> {
    if ps.is_empty() {
        return Err(Error::Domain("collective needs at least one investor".into()));
    }
    for w in ps.windows(2) {
        if !(w[0] < w[1]) {
            return Err(Error::Domain(format!(
                "exponents must be strictly increasing, got {} before {}",
                w[0], w[1]
            )));
        }
    }
    let last = *ps.last().unwrap();
    if !(last <= 0.0) {
        return Err(Error::Domain(format!(
            "largest exponent must be <= 0, got {last}"
        )));
    }
    Ok(())
}

impl UtilitySpec {
    pub fn power(exponent: f64) -> Result<Self> {
        if !(exponent < 1.0) || exponent == 0.0 || !exponent.is_finite() {
            return Err(Error::Domain(format!(
                "power exponent must satisfy p < 1, p != 0, got {exponent}"
            )));
        }
        Ok(Self {
            kind: UtilityKind::Power { exponent },
            scale: 1.0,
        })
    }

    pub fn log() -> Self {
        Self {
            kind: UtilityKind::Log,
            scale: 1.0,
        }
    }

    /// CRRA exponent written as `p <= 0` with `p = 0` meaning log.
    pub fn crra(p: f64) -> Result<Self> {
        if p == 0.0 {
            Ok(Self::log())
        } else {
            Self::power(p)
        }
    }

    pub fn pareto(betas: Vec<f64>, exponents: Vec<f64>) -> Result<Self> {
        if betas.len() != exponents.len() {
            return Err(Error::Dimension {
                field: "betas",
                expected: format!("{}", exponents.len()),
                got: format!("{}", betas.len()),
            });
        }
        check_exponents(&exponents)?;
        if betas.iter().any(|&b| b <= 0.0) {
            return Err(Error::Domain("Pareto weights must be positive".into()));
        }
        let sum: f64 = betas.iter().sum();
        if (sum - 1.0).abs() > 1e-10 {
            return Err(Error::Domain(format!(
                "Pareto weights must sum to 1, got {sum}"
            )));
        }
        Ok(Self {
            kind: UtilityKind::Pareto { betas, exponents },
            scale: 1.0,
        })
    }

    /// Linear sharing rule from proportions `alpha_i` (summing to 1) and
    /// weights `beta_i` (summing to 1); folds into marginal weights
    /// `w_i = beta_i alpha_i^{p_i}`.
    pub fn linear_sharing(alphas: Vec<f64>, betas: Vec<f64>, exponents: Vec<f64>) -> Result<Self> {
        if alphas.len() != exponents.len() || betas.len() != exponents.len() {
            return Err(Error::Dimension {
                field: "alphas",
                expected: format!("{}", exponents.len()),
                got: format!("{}/{}", alphas.len(), betas.len()),
            });
        }
        for (&al, &be) in alphas.iter().zip(&betas) {
            if al <= 0.0 || be <= 0.0 {
                return Err(Error::Domain(
                    "sharing proportions and weights must be positive".into(),
                ));
            }
        }
        for (name, v) in [("proportions", &alphas), ("weights", &betas)] {
            let sum: f64 = v.iter().sum();
            if (sum - 1.0).abs() > 1e-10 {
                return Err(Error::Domain(format!("sharing {name} must sum to 1, got {sum}")));
            }
        }
        let weights = alphas
            .iter()
            .zip(&betas)
            .zip(&exponents)
            .map(|((&al, &be), &p)| be * al.powf(p))
            .collect();
        Self::linear_sharing_weights(weights, exponents)
    }

    /// Linear sharing rule given the folded marginal weights directly.
    pub fn linear_sharing_weights(weights: Vec<f64>, exponents: Vec<f64>) -> Result<Self> {
        if weights.len() != exponents.len() {
            return Err(Error::Dimension {
                field: "weights",
                expected: format!("{}", exponents.len()),
                got: format!("{}", weights.len()),
            });
        }
        check_exponents(&exponents)?;
        if weights.iter().any(|&w| w <= 0.0) {
            return Err(Error::Domain("marginal weights must be positive".into()));
        }
        Ok(Self {
            kind: UtilityKind::LinearSharing { weights, exponents },
            scale: 1.0,
        })
    }

    /// `c * U` for `c > 0`. Strategies are invariant under this; the
    /// multiplier and the diff-bound normalization are not.
    pub fn scaled(mut self, factor: f64) -> Result<Self> {
        if !(factor > 0.0) || !factor.is_finite() {
            return Err(Error::Domain(format!("scale must be positive, got {factor}")));
        }
        self.scale *= factor;
        Ok(self)
    }

    pub fn kind(&self) -> &UtilityKind {
        &self.kind
    }

    pub fn scale(&self) -> f64 {
        self.scale
    }

    /// CRRA dual exponent `q = p/(p-1)` for power/log variants.
    pub fn q_exponent(&self) -> Option<f64> {
        match &self.kind {
            UtilityKind::Power { exponent } => Some(q_of(*exponent)),
            UtilityKind::Log => Some(0.0),
            _ => None,
        }
    }

    /// Collective exponent list, when this is a collective.
    pub fn collective_exponents(&self) -> Option<&[f64]> {
        match &self.kind {
            UtilityKind::Pareto { exponents, .. }
            | UtilityKind::LinearSharing { exponents, .. } => Some(exponents),
            _ => None,
        }
    }

    fn check_positive(z: f64, what: &str) -> Result<()> {
        if !(z > 0.0) || !z.is_finite() {
            return Err(Error::Domain(format!("{what} must be positive, got {z}")));
        }
        Ok(())
    }

    /// Inverse marginal utility `I(z) = (U')^{-1}(z)`.
    pub fn inverse_marginal(&self, z: f64) -> Result<f64> {
        Self::check_positive(z, "marginal level z")?;
        let zb = z / self.scale;
        Ok(match &self.kind {
            UtilityKind::Power { exponent } => zb.powf(q_of(*exponent) - 1.0),
            UtilityKind::Log => 1.0 / zb,
            UtilityKind::Pareto { betas, exponents } => betas
                .iter()
                .zip(exponents)
                .map(|(&b, &p)| (zb / b).powf(q_of(p) - 1.0))
                .sum(),
            UtilityKind::LinearSharing { weights, exponents } => {
                invert_power_sum(weights, exponents, zb)?
            }
        })
    }

    /// `J(z) = z I'(z)`; equals `-ART(I(z))` for every variant.
    pub fn inverse_marginal_derivative_weighted(&self, z: f64) -> Result<f64> {
        Self::check_positive(z, "marginal level z")?;
        let zb = z / self.scale;
        Ok(match &self.kind {
            UtilityKind::Power { exponent } => {
                let qm1 = q_of(*exponent) - 1.0;
                qm1 * zb.powf(qm1)
            }
            UtilityKind::Log => -1.0 / zb,
            UtilityKind::Pareto { betas, exponents } => betas
                .iter()
                .zip(exponents)
                .map(|(&b, &p)| {
                    let qm1 = q_of(p) - 1.0;
                    qm1 * (zb / b).powf(qm1)
                })
                .sum(),
            UtilityKind::LinearSharing { weights, exponents } => {
                let x = invert_power_sum(weights, exponents, zb)?;
                -power_sum_tolerance(weights, exponents, x)
            }
        })
    }

    /// Hedging integrand weight `I(z) + z I'(z)`; identically zero for log.
    pub fn hedging_weight(&self, z: f64) -> Result<f64> {
        Self::check_positive(z, "marginal level z")?;
        let zb = z / self.scale;
        Ok(match &self.kind {
            UtilityKind::Power { exponent } => {
                let q = q_of(*exponent);
                q * zb.powf(q - 1.0)
            }
            UtilityKind::Log => 0.0,
            UtilityKind::Pareto { betas, exponents } => betas
                .iter()
                .zip(exponents)
                .map(|(&b, &p)| {
                    let q = q_of(p);
                    q * (zb / b).powf(q - 1.0)
                })
                .sum(),
            UtilityKind::LinearSharing { weights, exponents } => {
                let x = invert_power_sum(weights, exponents, zb)?;
                x - power_sum_tolerance(weights, exponents, x)
            }
        })
    }

    /// Marginal utility `U'(x)`.
    pub fn marginal(&self, x: f64) -> Result<f64> {
        Self::check_positive(x, "wealth x")?;
        let base = match &self.kind {
            UtilityKind::Power { exponent } => x.powf(exponent - 1.0),
            UtilityKind::Log => 1.0 / x,
            UtilityKind::Pareto { betas, exponents } => {
                invert_decreasing_sum(betas, exponents, x)?
            }
            UtilityKind::LinearSharing { weights, exponents } => weights
                .iter()
                .zip(exponents)
                .map(|(&w, &p)| w * x.powf(p - 1.0))
                .sum(),
        };
        Ok(self.scale * base)
    }

    /// Arrow-Pratt absolute risk tolerance `-U'(x)/U''(x)`. Scale
    /// invariant by construction.
    pub fn risk_tolerance(&self, x: f64) -> Result<f64> {
        Self::check_positive(x, "wealth x")?;
        Ok(match &self.kind {
            UtilityKind::Power { exponent } => x / (1.0 - exponent),
            UtilityKind::Log => x,
            UtilityKind::Pareto { betas, exponents } => {
                // z = U'(x), then ART(x) = -J(z).
                let z = invert_decreasing_sum(betas, exponents, x)?;
                -betas
                    .iter()
                    .zip(exponents)
                    .map(|(&b, &p)| {
                        let qm1 = q_of(p) - 1.0;
                        qm1 * (z / b).powf(qm1)
                    })
                    .sum::<f64>()
            }
            UtilityKind::LinearSharing { weights, exponents } => {
                power_sum_tolerance(weights, exponents, x)
            }
        })
    }
}

/// Risk tolerance of `U'(x) = sum w_i x^{p_i-1}`:
/// `sum w_i x^{p_i-1} / sum w_i (1-p_i) x^{p_i-2}`.
fn power_sum_tolerance(weights: &[f64], exponents: &[f64], x: f64) -> f64 {
    let mut num = 0.0;
    let mut den = 0.0;
    for (&w, &p) in weights.iter().zip(exponents) {
        let t = w * x.powf(p - 1.0);
        num += t;
        den += t * (1.0 - p) / x;
    }
    num / den
}

/// Solve `sum_i w_i x^{p_i - 1} = z` for `x`. Newton on `log x` with a
/// geometrically expanded bisection bracket; the marginal is smooth,
/// strictly decreasing, and convex in log coordinates.
fn invert_power_sum(weights: &[f64], exponents: &[f64], z: f64) -> Result<f64> {
    let f = |v: f64| -> f64 {
        let x = v.exp();
        let s: f64 = weights
            .iter()
            .zip(exponents)
            .map(|(&w, &p)| w * x.powf(p - 1.0))
            .sum();
        s.ln() - z.ln()
    };
    // d/dv log U'(e^v) = x U''/U' = -x / ART(x)
    let fp = |v: f64| -> f64 {
        let x = v.exp();
        -x / power_sum_tolerance(weights, exponents, x)
    };
    solve_decreasing(f, fp, 0.0).map(|v| v.exp())
}

/// Solve `sum_i (z/beta_i)^{q_i-1} = x` for `z` (Pareto marginal).
fn invert_decreasing_sum(betas: &[f64], exponents: &[f64], x: f64) -> Result<f64> {
    let f = |u: f64| -> f64 {
        let z = u.exp();
        let s: f64 = betas
            .iter()
            .zip(exponents)
            .map(|(&b, &p)| (z / b).powf(q_of(p) - 1.0))
            .sum();
        s.ln() - x.ln()
    };
    let fp = |u: f64| -> f64 {
        let z = u.exp();
        let i: f64 = betas
            .iter()
            .zip(exponents)
            .map(|(&b, &p)| (z / b).powf(q_of(p) - 1.0))
            .sum();
        let j: f64 = betas
            .iter()
            .zip(exponents)
            .map(|(&b, &p)| {
                let qm1 = q_of(p) - 1.0;
                qm1 * (z / b).powf(qm1)
            })
            .sum();
        j / i
    };
    solve_decreasing(f, fp, 0.0).map(|u| u.exp())
}

/// Safeguarded Newton for a strictly decreasing `f` in one variable,
/// starting from `u0`, with bracket expansion capped at the configured
/// range.
fn solve_decreasing(
    f: impl Fn(f64) -> f64,
    fp: impl Fn(f64) -> f64,
    u0: f64,
) -> Result<f64> {
    let (cap_lo, cap_hi) = (ROOT_BRACKET.0.ln(), ROOT_BRACKET.1.ln());
    let mut lo = u0;
    let mut hi = u0;
    let mut flo = f(lo);
    let mut fhi = flo;
    let mut width = 1.0;
    // f decreasing: want f(lo) >= 0 >= f(hi).
    while flo < 0.0 {
        lo -= width;
        width *= 2.0;
        if lo < cap_lo * 4.0 {
            return Err(Error::Solver("marginal inversion bracket underflow".into()));
        }
        flo = f(lo);
    }
    width = 1.0;
    while fhi > 0.0 {
        hi += width;
        width *= 2.0;
        if hi > cap_hi * 4.0 {
            return Err(Error::Solver("marginal inversion bracket overflow".into()));
        }
        fhi = f(hi);
    }
    let mut u = 0.5 * (lo + hi);
    for _ in 0..200 {
        let fu = f(u);
        if fu == 0.0 {
            return Ok(u);
        }
        if fu > 0.0 {
            lo = u;
        } else {
            hi = u;
        }
        let d = fp(u);
        let newton = u - fu / d;
        let next = if d < 0.0 && newton > lo && newton < hi {
            newton
        } else {
            0.5 * (lo + hi)
        };
        if (next - u).abs() <= ROOT_TOL * (1.0 + u.abs()) {
            return Ok(next);
        }
        u = next;
    }
    Err(Error::Solver("marginal inversion did not converge".into()))
}

/// Grid evidence for the inverse-marginal difference bound
/// `|I_1 - I_2| <= K (1 + z^alpha)` and its weighted-derivative twin.
#[derive(Debug, Clone)]
pub struct DiffBoundEstimate {
    pub alpha: f64,
    pub k: f64,
    pub zgrid: Vec<f64>,
    pub max_violation: f64,
    /// The required constant keeps growing beyond the grid ends, so no
    /// finite K can make the bound global at this alpha.
    pub k_at_boundary: bool,
    /// Scale applied to the reference so the comparison is in the
    /// normalization the collective theory expects.
    pub reference_scale: f64,
}

/// 200-point log-spaced default grid over 12 decades.
pub fn default_zgrid() -> Vec<f64> {
    log_spaced(1e-6, 1e6, 200)
}

pub fn log_spaced(lo: f64, hi: f64, count: usize) -> Vec<f64> {
    let (llo, lhi) = (lo.ln(), hi.ln());
    (0..count)
        .map(|i| (llo + (lhi - llo) * i as f64 / (count - 1) as f64).exp())
        .collect()
}

/// A (general, CRRA-reference) utility pair prepared for rate analysis.
#[derive(Debug, Clone)]
pub struct UtilityPair {
    pub general: UtilitySpec,
    pub reference: UtilitySpec,
}

impl UtilityPair {
    pub fn new(general: UtilitySpec, reference: UtilitySpec) -> Result<Self> {
        if reference.q_exponent().is_none() {
            return Err(Error::Domain(
                "reference utility must be power or log".into(),
            ));
        }
        Ok(Self { general, reference })
    }

    /// Reference dual exponent `q`.
    pub fn q(&self) -> f64 {
        self.reference.q_exponent().unwrap()
    }

    /// Theoretical comparison exponent alpha for the pair. For linear
    /// sharing a rate parameter from the admissible interval is needed;
    /// `None` picks the interval midpoint.
    pub fn theoretical_alpha(&self, linear_beta: Option<f64>) -> Result<f64> {
        let q = self.q();
        let alpha = match &self.general.kind {
            UtilityKind::Power { .. } | UtilityKind::Log => {
                let q1 = self.general.q_exponent().unwrap();
                if q1 == q {
                    0.0
                } else {
                    q1 - 1.0
                }
            }
            UtilityKind::Pareto { exponents, .. } => {
                self.check_reference_matches(exponents)?;
                if exponents.len() < 2 {
                    0.0
                } else {
                    q_of(exponents[exponents.len() - 2]) - 1.0
                }
            }
            UtilityKind::LinearSharing { exponents, .. } => {
                self.check_reference_matches(exponents)?;
                let qn = q_of(*exponents.last().unwrap());
                let beta = match linear_beta {
                    Some(b) => b,
                    None => {
                        let (lo, hi) = linear_sharing_beta_interval(exponents)?;
                        0.5 * (lo + hi)
                    }
                };
                let (lo, hi) = linear_sharing_beta_interval(exponents)?;
                if !(beta >= lo && beta < hi) {
                    return Err(Error::Domain(format!(
                        "sharing rate parameter {beta} outside admissible [{lo}, {hi})"
                    )));
                }
                beta * (qn - 1.0)
            }
        };
        if !(alpha > q - 1.0 && alpha <= 0.0) {
            return Err(Error::Domain(format!(
                "comparison exponent alpha={alpha} outside ({}, 0]",
                q - 1.0
            )));
        }
        Ok(alpha)
    }

    fn check_reference_matches(&self, exponents: &[f64]) -> Result<()> {
        let pn = *exponents.last().unwrap();
        let ok = match &self.reference.kind {
            UtilityKind::Power { exponent } => *exponent == pn,
            UtilityKind::Log => pn == 0.0,
            _ => false,
        };
        if ok {
            Ok(())
        } else {
            Err(Error::Domain(
                "reference exponent must equal the collective's largest exponent".into(),
            ))
        }
    }

    /// Reference rescaled so the comparison constant is one: the scale is
    /// `beta_n` for Pareto and `w_n` for linear sharing.
    pub fn normalized_reference(&self) -> Result<UtilitySpec> {
        let c = self.normalization_scale()?;
        let mut reference = self.reference.clone();
        reference.scale = c;
        Ok(reference)
    }

    pub fn normalization_scale(&self) -> Result<f64> {
        Ok(match &self.general.kind {
            UtilityKind::Power { .. } | UtilityKind::Log => self.general.scale,
            UtilityKind::Pareto { betas, .. } => *betas.last().unwrap() * self.general.scale,
            UtilityKind::LinearSharing { weights, .. } => {
                *weights.last().unwrap() * self.general.scale
            }
        })
    }
}

/// Admissible interval for the linear-sharing rate parameter:
/// nonnegative values in `(1 + p_{n-1} - p_n, 1)`.
pub fn linear_sharing_beta_interval(exponents: &[f64]) -> Result<(f64, f64)> {
    if exponents.len() < 2 {
        return Err(Error::Domain(
            "linear sharing bound needs at least two investors".into(),
        ));
    }
    let n = exponents.len();
    let lo = (1.0 + exponents[n - 2] - exponents[n - 1]).max(0.0);
    if lo >= 1.0 {
        return Err(Error::Domain(
            "no admissible rate parameter: adjacent exponents differ by one or more".into(),
        ));
    }
    Ok((lo, 1.0))
}

/// Fit the smallest grid constant `K` for the difference bound at the
/// pair's theoretical alpha. The reference inside `pair` is normalized
/// before differencing.
pub fn estimate_diff_bound(
    pair: &UtilityPair,
    zgrid: &[f64],
    linear_beta: Option<f64>,
) -> Result<DiffBoundEstimate> {
    if zgrid.len() < 2 {
        return Err(Error::Domain("z grid needs at least two points".into()));
    }
    let span = zgrid.last().unwrap() / zgrid.first().unwrap();
    if span < 1e8 {
        return Err(Error::Domain(format!(
            "z grid must span at least 8 decades, got {:.2}",
            span.log10()
        )));
    }
    let alpha = pair.theoretical_alpha(linear_beta)?;
    let reference = pair.normalized_reference()?;

    let mut ratios = Vec::with_capacity(zgrid.len());
    for &z in zgrid {
        let d = pair.general.inverse_marginal(z)? - reference.inverse_marginal(z)?;
        let dj = pair.general.inverse_marginal_derivative_weighted(z)?
            - reference.inverse_marginal_derivative_weighted(z)?;
        let envelope = 1.0 + z.powf(alpha);
        ratios.push(d.abs().max(dj.abs()) / envelope);
    }
    let k = ratios.iter().copied().fold(0.0_f64, f64::max);

    let mut max_violation = f64::NEG_INFINITY;
    for (&z, &ratio) in zgrid.iter().zip(&ratios) {
        let envelope = 1.0 + z.powf(alpha);
        max_violation = max_violation.max((ratio - k) * envelope);
    }

    // Probe beyond the grid: a correct alpha keeps the required constant
    // bounded, a wrong one makes it grow geometrically off either end.
    let mut k_at_boundary = false;
    if k > 0.0 {
        let z_lo = zgrid.first().unwrap();
        let z_hi = zgrid.last().unwrap();
        for z in [z_lo / 1e1, z_lo / 1e3, z_hi * 1e1, z_hi * 1e3] {
            let d = pair.general.inverse_marginal(z)? - reference.inverse_marginal(z)?;
            let dj = pair.general.inverse_marginal_derivative_weighted(z)?
                - reference.inverse_marginal_derivative_weighted(z)?;
            let ratio = d.abs().max(dj.abs()) / (1.0 + z.powf(alpha));
            if ratio > k * 1.05 {
                k_at_boundary = true;
            }
        }
    }

    Ok(DiffBoundEstimate {
        alpha,
        k,
        zgrid: zgrid.to_vec(),
        max_violation,
        k_at_boundary,
        reference_scale: reference.scale,
    })
}

#[cfg(test)]
mod tests {
    use super::*;
    use approx::assert_relative_eq;

    fn pareto_half() -> UtilitySpec {
        UtilitySpec::pareto(vec![0.5, 0.5], vec![-1.0, 0.0]).unwrap()
    }

    fn linear_unit_weights() -> UtilitySpec {
        UtilitySpec::linear_sharing_weights(vec![1.0, 1.0], vec![-1.0, 0.0]).unwrap()
    }

    fn all_variants() -> Vec<UtilitySpec> {
        vec![
            UtilitySpec::power(-1.0).unwrap(),
            UtilitySpec::power(-2.5).unwrap(),
            UtilitySpec::log(),
            pareto_half(),
            UtilitySpec::pareto(vec![0.25, 0.35, 0.4], vec![-3.0, -1.5, -0.5]).unwrap(),
            linear_unit_weights(),
            UtilitySpec::linear_sharing(
                vec![0.3, 0.7],
                vec![0.5, 0.5],
                vec![-1.4, -0.5],
            )
            .unwrap(),
        ]
    }

    #[test]
    fn inverse_marginal_power() {
        let u = UtilitySpec::power(-1.0).unwrap();
        assert_relative_eq!(u.inverse_marginal(4.0).unwrap(), 0.5, max_relative = 1e-14);
    }

    #[test]
    fn inverse_marginal_linear_sharing_forced_root() {
        let u = linear_unit_weights();
        // U'(x) = x^{-2} + x^{-1}, so U'(1) = 2.
        assert_relative_eq!(u.inverse_marginal(2.0).unwrap(), 1.0, max_relative = 1e-11);
    }

    #[test]
    fn inverse_marginal_pareto_closed_form() {
        let u = pareto_half();
        let expect = 2.0_f64.powf(-0.5) + 0.5;
        assert_relative_eq!(u.inverse_marginal(1.0).unwrap(), expect, max_relative = 1e-14);
        assert_relative_eq!(u.inverse_marginal(1.0).unwrap(), 1.20710678, max_relative = 1e-8);
    }

    #[test]
    fn weighted_derivative_examples() {
        assert_relative_eq!(
            UtilitySpec::log()
                .inverse_marginal_derivative_weighted(2.0)
                .unwrap(),
            -0.5,
            max_relative = 1e-15
        );
        assert_relative_eq!(
            UtilitySpec::power(-1.0)
                .unwrap()
                .inverse_marginal_derivative_weighted(1.0)
                .unwrap(),
            -0.5,
            max_relative = 1e-15
        );
        let expect = -0.5 * 2.0_f64.powf(-0.5) - 0.5;
        assert_relative_eq!(
            pareto_half()
                .inverse_marginal_derivative_weighted(1.0)
                .unwrap(),
            expect,
            max_relative = 1e-14
        );
        assert_relative_eq!(expect, -0.85355339, max_relative = 1e-8);
    }

    #[test]
    fn risk_tolerance_examples() {
        assert_relative_eq!(UtilitySpec::log().risk_tolerance(3.0).unwrap(), 3.0);
        assert_relative_eq!(
            UtilitySpec::power(-1.0).unwrap().risk_tolerance(2.0).unwrap(),
            1.0
        );
        assert_relative_eq!(
            linear_unit_weights().risk_tolerance(1.0).unwrap(),
            2.0 / 3.0,
            max_relative = 1e-13
        );
    }

    #[test]
    fn domain_errors_on_nonpositive_arguments() {
        for u in all_variants() {
            assert!(u.inverse_marginal(0.0).is_err());
            assert!(u.inverse_marginal(-1.0).is_err());
            assert!(u.risk_tolerance(0.0).is_err());
            assert!(u.inverse_marginal_derivative_weighted(-2.0).is_err());
        }
    }

    #[test]
    fn strict_monotonicity_on_grid() {
        let grid = log_spaced(1e-5, 1e5, 60);
        for u in all_variants() {
            for w in grid.windows(2) {
                let a = u.inverse_marginal(w[0]).unwrap();
                let b = u.inverse_marginal(w[1]).unwrap();
                assert!(a > b, "{u:?} not strictly decreasing at {w:?}");
            }
        }
    }

    #[test]
    fn marginal_round_trip() {
        let grid = log_spaced(1e-5, 1e5, 40);
        for u in all_variants() {
            for &z in &grid {
                let x = u.inverse_marginal(z).unwrap();
                let back = u.marginal(x).unwrap();
                assert!(
                    (back - z).abs() / z <= 1e-10,
                    "round trip failed for {u:?} at z={z}: {back}"
                );
            }
        }
    }

    #[test]
    fn weighted_derivative_matches_risk_tolerance() {
        let grid = log_spaced(1e-4, 1e4, 30);
        for u in all_variants() {
            for &z in &grid {
                let j = u.inverse_marginal_derivative_weighted(z).unwrap();
                let art = u.risk_tolerance(u.inverse_marginal(z).unwrap()).unwrap();
                assert!(
                    (j + art).abs() <= 1e-10 * (1.0 + art.abs()),
                    "identity failed for {u:?} at z={z}: J={j}, ART={art}"
                );
            }
        }
    }

    #[test]
    fn log_hedging_weight_exactly_zero() {
        let u = UtilitySpec::log();
        for &z in &log_spaced(1e-8, 1e8, 50) {
            assert_eq!(u.hedging_weight(z).unwrap(), 0.0);
            let i = u.inverse_marginal(z).unwrap();
            let j = u.inverse_marginal_derivative_weighted(z).unwrap();
            assert_eq!(i + j, 0.0);
        }
    }

    #[test]
    fn power_scaling_shifts_argument() {
        let u = UtilitySpec::power(-1.5).unwrap();
        let c = 3.7;
        let scaled = u.clone().scaled(c).unwrap();
        for &z in &log_spaced(1e-3, 1e3, 20) {
            assert_relative_eq!(
                scaled.inverse_marginal(z).unwrap(),
                u.inverse_marginal(z / c).unwrap(),
                max_relative = 1e-14
            );
        }
    }

    #[test]
    fn diff_bound_identical_pair_zero() {
        let u = UtilitySpec::power(-1.0).unwrap();
        let pair = UtilityPair::new(u.clone(), u).unwrap();
        let est = estimate_diff_bound(&pair, &default_zgrid(), None).unwrap();
        assert_eq!(est.k, 0.0);
        assert!(est.max_violation <= 0.0);
    }

    #[test]
    fn diff_bound_pareto_vs_log_reference() {
        let pair = UtilityPair::new(pareto_half(), UtilitySpec::log()).unwrap();
        let est = estimate_diff_bound(&pair, &default_zgrid(), None).unwrap();
        assert_relative_eq!(est.alpha, -0.5, max_relative = 1e-14);
        assert_relative_eq!(est.reference_scale, 0.5, max_relative = 1e-14);
        assert!(est.max_violation <= 0.0);
        assert!(!est.k_at_boundary, "K should be interiorly attained, got {est:?}");
        // Normalized difference is exactly (2z)^{-1/2}; K must make
        // K(1 + z^{-1/2}) dominate it, so K is near 2^{-1/2}.
        assert!(est.k <= 2.0_f64.powf(-0.5) + 1e-9);
    }

    #[test]
    fn diff_bound_linear_sharing_feasible() {
        let u = UtilitySpec::linear_sharing(
            vec![0.4, 0.6],
            vec![0.5, 0.5],
            vec![-1.5, -1.0],
        )
        .unwrap();
        let pair = UtilityPair::new(u, UtilitySpec::power(-1.0).unwrap()).unwrap();
        let est = estimate_diff_bound(&pair, &default_zgrid(), Some(0.75)).unwrap();
        assert_relative_eq!(est.alpha, 0.75 * (q_of(-1.0) - 1.0), max_relative = 1e-13);
        assert!(est.max_violation <= 0.0);
        assert!(est.k.is_finite() && est.k > 0.0);
    }

    #[test]
    fn theoretical_alpha_rejects_out_of_range_beta() {
        let u = UtilitySpec::linear_sharing_weights(vec![1.0, 1.0], vec![-1.5, -1.0]).unwrap();
        let pair = UtilityPair::new(u, UtilitySpec::power(-1.0).unwrap()).unwrap();
        assert!(pair.theoretical_alpha(Some(0.2)).is_err()); // below 1 + p1 - pn = 0.5
        assert!(pair.theoretical_alpha(Some(0.75)).is_ok());
    }

    #[test]
    fn pareto_acceptance_pair_alpha() {
        let u = UtilitySpec::pareto(vec![0.5, 0.5], vec![-2.0, -1.0]).unwrap();
        let pair = UtilityPair::new(u, UtilitySpec::power(-1.0).unwrap()).unwrap();
        // q1 = 2/3 so alpha = -1/3; q = 1/2.
        assert_relative_eq!(pair.theoretical_alpha(None).unwrap(), -1.0 / 3.0, max_relative = 1e-14);
        assert_relative_eq!(pair.q(), 0.5, max_relative = 1e-15);
    }
}
