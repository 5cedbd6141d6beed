//! Martingale-duality portfolio computation on simulated ensembles:
//! multiplier calibration, myopic and hedging feedback estimators, the
//! terminal wealth gap, and the difference-bound audit.
//!
//! Every operation here insists that the multiplier and the expectations
//! come from the same ensemble; the turnpike differences being resolved
//! are small, and common random numbers are what make them visible.

use nalgebra::{DMatrix, DVector};
use rayon::prelude::*;

use crate::error::{Error, Result};
use crate::model::QtsmModel;
use crate::montecarlo::{estimate, FunctionalsSet, McEstimate};
use crate::utility::UtilitySpec;

/// Budget equation residual target, relative to wealth.
const BUDGET_TOL: f64 = 1e-11;
/// Acceptable residual after calibration, relative to wealth.
const BUDGET_MAX: f64 = 1e-10;
/// Widest bracket expansion in decades (total across both sides).
const MAX_DECADES: f64 = 1e3;
const BLOCK: usize = 8192;

#[derive(Debug, Clone, Copy)]
pub struct CalibratedMultiplier {
    pub lambda_hat: f64,
    pub budget_residual: f64,
    pub iterations: u32,
    pub ensemble_id: u64,
}

/// Empirical budget `E_N[H I(lambda H)]`, block-parallel with a
/// deterministic combination order.
fn budget(u: &UtilitySpec, h: &[f64], lambda: f64) -> Result<f64> {
    let partials: Result<Vec<f64>> = h
        .par_chunks(BLOCK)
        .map(|blk| {
            let mut s = 0.0;
            for &hi in blk {
                s += hi * u.inverse_marginal(lambda * hi)?;
            }
            Ok(s)
        })
        .collect();
    Ok(partials?.iter().sum::<f64>() / h.len() as f64)
}

/// Calibrate the dual multiplier by bisection on `log lambda`; the budget
/// is strictly decreasing in `lambda`, so the root is unique.
pub fn find_lambda_hat(
    u: &UtilitySpec,
    funcs: &FunctionalsSet,
    x: f64,
) -> Result<CalibratedMultiplier> {
    if !(x > 0.0) || !x.is_finite() {
        return Err(Error::Domain(format!("wealth must be positive, got {x}")));
    }
    let h = funcs.state_price()?;

    // Power/log utilities admit a closed-form seed; collectives start at
    // the log-investor guess.
    let seed_lambda = match u.q_exponent() {
        Some(q) => {
            let mhq = moment(h, q);
            u.scale() * (x / mhq).powf(1.0 / (q - 1.0))
        }
        None => 1.0 / x,
    };
    let mut iterations = 0u32;

    let mut lo = seed_lambda; // budget(lo) >= x wanted
    let mut hi = seed_lambda;
    let mut decades = 0.0;
    let mut f_lo = budget(u, h, lo)?;
    iterations += 1;
    while f_lo < x {
        lo /= 10.0;
        decades += 1.0;
        if decades > MAX_DECADES || lo < 1e-290 {
            return Err(Error::Calibration(format!(
                "budget bracket expanded {decades} decades below the seed without \
                 crossing x = {x}"
            )));
        }
        f_lo = budget(u, h, lo)?;
        iterations += 1;
    }
    let mut f_hi = budget(u, h, hi)?;
    iterations += 1;
    while f_hi > x {
        hi *= 10.0;
        decades += 1.0;
        if decades > MAX_DECADES || hi > 1e290 {
            return Err(Error::Calibration(format!(
                "budget bracket expanded {decades} decades above the seed without \
                 crossing x = {x}"
            )));
        }
        f_hi = budget(u, h, hi)?;
        iterations += 1;
    }

    let mut best = (lo, (f_lo - x).abs());
    if (f_hi - x).abs() < best.1 {
        best = (hi, (f_hi - x).abs());
    }
    let (mut llo, mut lhi) = (lo.ln(), hi.ln());
    for _ in 0..200 {
        let mid = ((llo + lhi) / 2.0).exp();
        let f_mid = budget(u, h, mid)?;
        iterations += 1;
        let resid = (f_mid - x).abs();
        if resid < best.1 {
            best = (mid, resid);
        }
        if resid <= BUDGET_TOL * x {
            break;
        }
        if f_mid > x {
            llo = mid.ln();
        } else {
            lhi = mid.ln();
        }
        if lhi - llo < 1e-15 {
            break;
        }
    }
    let (lambda_hat, residual) = best;
    if residual > BUDGET_MAX * x {
        return Err(Error::Calibration(format!(
            "budget residual {residual:.3e} exceeds {BUDGET_MAX:.1e} * x after bisection"
        )));
    }
    Ok(CalibratedMultiplier {
        lambda_hat,
        budget_residual: residual,
        iterations,
        ensemble_id: funcs.ensemble_id,
    })
}

fn moment(h: &[f64], gamma: f64) -> f64 {
    let partials: Vec<f64> = h
        .par_chunks(BLOCK)
        .map(|blk| blk.iter().map(|&v| v.powf(gamma)).sum::<f64>())
        .collect();
    partials.iter().sum::<f64>() / h.len() as f64
}

/// `E_N[H^gamma]` on the ensemble (deterministic reduction order).
pub fn empirical_moment(funcs: &FunctionalsSet, gamma: f64) -> Result<f64> {
    Ok(moment(funcs.state_price()?, gamma))
}

fn check_same_ensemble(cal: &CalibratedMultiplier, funcs: &FunctionalsSet) -> Result<()> {
    if cal.ensemble_id != funcs.ensemble_id {
        return Err(Error::EnsembleMismatch(
            "multiplier was calibrated on a different ensemble".into(),
        ));
    }
    Ok(())
}

/// Componentwise Monte Carlo estimate of a vector quantity.
#[derive(Debug, Clone)]
pub struct VectorEstimate {
    pub value: DVector<f64>,
    pub se: DVector<f64>,
    pub npaths: usize,
}

impl VectorEstimate {
    fn from_samples(samples: &[f64], dim: usize) -> Result<Self> {
        let n = samples.len() / dim;
        let mut value = DVector::zeros(dim);
        let mut se = DVector::zeros(dim);
        let mut column = vec![0.0_f64; n];
        for j in 0..dim {
            for (p, c) in column.iter_mut().enumerate() {
                *c = samples[p * dim + j];
            }
            let e = estimate(&column)?;
            value[j] = e.mean;
            se[j] = e.se;
        }
        Ok(Self {
            value,
            se,
            npaths: n,
        })
    }

    /// Euclidean norm with its delta-method standard error.
    pub fn norm_estimate(&self) -> McEstimate {
        let norm = self.value.norm();
        let se = if norm > 0.0 {
            let mut acc = 0.0;
            for j in 0..self.value.len() {
                let w = self.value[j] / norm;
                acc += w * w * self.se[j] * self.se[j];
            }
            acc.sqrt()
        } else {
            self.se.amax()
        };
        McEstimate {
            mean: norm,
            se,
            npaths: self.npaths,
        }
    }
}

/// Myopic, hedging, and total dollar feedback at wealth `x` with
/// per-path standard errors. Totals are estimated from per-path sums, so
/// their errors respect the correlation between the two parts.
#[derive(Debug, Clone)]
pub struct PortfolioDecomposition {
    pub myopic: VectorEstimate,
    pub hedging: VectorEstimate,
    pub total: VectorEstimate,
}

struct TransformCache {
    /// `(Sigma')^{-1} theta(y)`.
    risk_dir: DVector<f64>,
    /// `(Sigma')^{-1} Lambda'`, row-major `n x m`.
    hedge_map: Vec<f64>,
    n: usize,
    m: usize,
}

fn transforms(model: &QtsmModel, y: &DVector<f64>) -> Result<TransformCache> {
    let sig_t = model.asset_vol().transpose();
    let lu = sig_t.lu();
    let theta = model.risk_price(y);
    let risk_dir = lu
        .solve(&theta)
        .ok_or_else(|| Error::Domain("asset volatility is singular".into()))?;
    let lam_t: DMatrix<f64> = model.factor_vol().transpose();
    let hedge = lu
        .solve(&lam_t)
        .ok_or_else(|| Error::Domain("asset volatility is singular".into()))?;
    Ok(TransformCache {
        risk_dir,
        hedge_map: hedge.transpose().as_slice().to_vec(),
        n: model.asset_dim(),
        m: model.factor_dim(),
    })
}

/// Per-path myopic scalar `-H J(lambda H)` and hedging vector
/// `-H F(lambda H) (Sigma')^{-1} Lambda' L`, flattened `npaths x n`.
fn feedback_samples(
    u: &UtilitySpec,
    funcs: &FunctionalsSet,
    lambda: f64,
    tc: &TransformCache,
) -> Result<(Vec<f64>, Vec<f64>)> {
    let h = funcs.state_price()?;
    let (n, m) = (tc.n, tc.m);
    let npaths = funcs.npaths;

    let results: Result<Vec<(Vec<f64>, Vec<f64>)>> = (0..npaths.div_ceil(BLOCK))
        .into_par_iter()
        .map(|bi| {
            let lo = bi * BLOCK;
            let hi_end = ((bi + 1) * BLOCK).min(npaths);
            let mut myo = Vec::with_capacity(hi_end - lo);
            let mut hed = Vec::with_capacity((hi_end - lo) * n);
            for p in lo..hi_end {
                let hp = h[p];
                let z = lambda * hp;
                myo.push(-hp * u.inverse_marginal_derivative_weighted(z)?);
                let w = -hp * u.hedging_weight(z)?;
                let l = funcs.l_row(p);
                for i in 0..n {
                    let mut v = 0.0;
                    for j in 0..m {
                        v += tc.hedge_map[i * m + j] * l[j];
                    }
                    hed.push(w * v);
                }
            }
            Ok((myo, hed))
        })
        .collect();
    let mut myopic = Vec::with_capacity(npaths);
    let mut hedging = Vec::with_capacity(npaths * n);
    for (mblk, hblk) in results? {
        myopic.extend_from_slice(&mblk);
        hedging.extend_from_slice(&hblk);
    }
    Ok((myopic, hedging))
}

/// Myopic feedback `(Sigma')^{-1} theta(y) E_N[-H J(lambda H)]`.
pub fn myopic_feedback(
    u: &UtilitySpec,
    model: &QtsmModel,
    funcs: &FunctionalsSet,
    cal: &CalibratedMultiplier,
    y: &DVector<f64>,
) -> Result<VectorEstimate> {
    check_same_ensemble(cal, funcs)?;
    let tc = transforms(model, y)?;
    let (myo, _) = feedback_samples(u, funcs, cal.lambda_hat, &tc)?;
    let e = estimate(&myo)?;
    Ok(VectorEstimate {
        value: &tc.risk_dir * e.mean,
        se: tc.risk_dir.abs() * e.se,
        npaths: e.npaths,
    })
}

/// Hedging feedback `(Sigma')^{-1} Lambda' E_N[-H L (I + J)(lambda H)]`.
pub fn hedging_feedback(
    u: &UtilitySpec,
    model: &QtsmModel,
    funcs: &FunctionalsSet,
    cal: &CalibratedMultiplier,
    y: &DVector<f64>,
) -> Result<VectorEstimate> {
    check_same_ensemble(cal, funcs)?;
    let tc = transforms(model, y)?;
    let (_, hed) = feedback_samples(u, funcs, cal.lambda_hat, &tc)?;
    VectorEstimate::from_samples(&hed, tc.n)
}

/// Full decomposition; the total is estimated from per-path sums.
pub fn decompose(
    u: &UtilitySpec,
    model: &QtsmModel,
    funcs: &FunctionalsSet,
    cal: &CalibratedMultiplier,
    y: &DVector<f64>,
) -> Result<PortfolioDecomposition> {
    check_same_ensemble(cal, funcs)?;
    let tc = transforms(model, y)?;
    let (myo, hed) = feedback_samples(u, funcs, cal.lambda_hat, &tc)?;
    let n = tc.n;
    let e_myo = estimate(&myo)?;
    let myopic = VectorEstimate {
        value: &tc.risk_dir * e_myo.mean,
        se: tc.risk_dir.abs() * e_myo.se,
        npaths: e_myo.npaths,
    };
    let hedging = VectorEstimate::from_samples(&hed, n)?;
    let mut total_samples = vec![0.0_f64; hed.len()];
    for p in 0..funcs.npaths {
        for i in 0..n {
            total_samples[p * n + i] = tc.risk_dir[i] * myo[p] + hed[p * n + i];
        }
    }
    let total = VectorEstimate::from_samples(&total_samples, n)?;
    Ok(PortfolioDecomposition {
        myopic,
        hedging,
        total,
    })
}

/// Terminal wealth gap `E_N[H |I_1(l1 H) - I_2(l2 H)|]`.
pub fn terminal_wealth_gap(
    u1: &UtilitySpec,
    cal1: &CalibratedMultiplier,
    u2: &UtilitySpec,
    cal2: &CalibratedMultiplier,
    funcs: &FunctionalsSet,
) -> Result<McEstimate> {
    check_same_ensemble(cal1, funcs)?;
    check_same_ensemble(cal2, funcs)?;
    let h = funcs.state_price()?;
    let samples: Result<Vec<f64>> = h
        .par_chunks(BLOCK)
        .map(|blk| {
            let mut out = Vec::with_capacity(blk.len());
            for &hp in blk {
                let w1 = u1.inverse_marginal(cal1.lambda_hat * hp)?;
                let w2 = u2.inverse_marginal(cal2.lambda_hat * hp)?;
                out.push(hp * (w1 - w2).abs());
            }
            Ok(out)
        })
        .collect::<Result<Vec<Vec<f64>>>>()
        .map(|blocks| blocks.into_iter().flatten().collect());
    estimate(&samples?)
}

/// Per-path difference samples between two calibrated utilities on one
/// shared ensemble; the raw material of every turnpike gap.
#[derive(Debug, Clone)]
pub struct DifferenceSamples {
    /// `-H (J_1(l1 H) - J_2(l2 H))` per path.
    pub myopic: Vec<f64>,
    /// `-H (F_1(l1 H) - F_2(l2 H)) (Sigma')^{-1} Lambda' L`, `npaths x n`.
    pub hedging: Vec<f64>,
    /// `H |I_1(l1 H) - I_2(l2 H)|` per path.
    pub wealth: Vec<f64>,
    pub asset_dim: usize,
}

pub fn difference_samples(
    u1: &UtilitySpec,
    cal1: &CalibratedMultiplier,
    u2: &UtilitySpec,
    cal2: &CalibratedMultiplier,
    model: &QtsmModel,
    funcs: &FunctionalsSet,
    y: &DVector<f64>,
) -> Result<DifferenceSamples> {
    check_same_ensemble(cal1, funcs)?;
    check_same_ensemble(cal2, funcs)?;
    let tc = transforms(model, y)?;
    let h = funcs.state_price()?;
    let (n, m) = (tc.n, tc.m);
    let npaths = funcs.npaths;

    let blocks: Result<Vec<(Vec<f64>, Vec<f64>, Vec<f64>)>> = (0..npaths.div_ceil(BLOCK))
        .into_par_iter()
        .map(|bi| {
            let lo = bi * BLOCK;
            let hi_end = ((bi + 1) * BLOCK).min(npaths);
            let mut myo = Vec::with_capacity(hi_end - lo);
            let mut hed = Vec::with_capacity((hi_end - lo) * n);
            let mut wel = Vec::with_capacity(hi_end - lo);
            for p in lo..hi_end {
                let hp = h[p];
                let z1 = cal1.lambda_hat * hp;
                let z2 = cal2.lambda_hat * hp;
                myo.push(
                    -hp * (u1.inverse_marginal_derivative_weighted(z1)?
                        - u2.inverse_marginal_derivative_weighted(z2)?),
                );
                let w = -hp * (u1.hedging_weight(z1)? - u2.hedging_weight(z2)?);
                let l = funcs.l_row(p);
                for i in 0..n {
                    let mut v = 0.0;
                    for j in 0..m {
                        v += tc.hedge_map[i * m + j] * l[j];
                    }
                    hed.push(w * v);
                }
                wel.push(hp * (u1.inverse_marginal(z1)? - u2.inverse_marginal(z2)?).abs());
            }
            Ok((myo, hed, wel))
        })
        .collect();

    let mut myopic = Vec::with_capacity(npaths);
    let mut hedging = Vec::with_capacity(npaths * n);
    let mut wealth = Vec::with_capacity(npaths);
    for (mb, hb, wb) in blocks? {
        myopic.extend_from_slice(&mb);
        hedging.extend_from_slice(&hb);
        wealth.extend_from_slice(&wb);
    }
    Ok(DifferenceSamples {
        myopic,
        hedging,
        wealth,
        asset_dim: n,
    })
}

impl DifferenceSamples {
    /// Norm of the myopic gap vector with its standard error.
    pub fn myopic_gap(&self, model: &QtsmModel, y: &DVector<f64>) -> Result<McEstimate> {
        let tc = transforms(model, y)?;
        let e = estimate(&self.myopic)?;
        let scale = tc.risk_dir.norm();
        Ok(McEstimate {
            mean: e.mean.abs() * scale,
            se: e.se * scale,
            npaths: e.npaths,
        })
    }

    pub fn hedging_gap(&self) -> Result<McEstimate> {
        Ok(VectorEstimate::from_samples(&self.hedging, self.asset_dim)?.norm_estimate())
    }

    pub fn wealth_gap(&self) -> Result<McEstimate> {
        estimate(&self.wealth)
    }

    /// Norm of the total (myopic + hedging) gap vector per path.
    pub fn total_gap(&self, model: &QtsmModel, y: &DVector<f64>) -> Result<McEstimate> {
        let tc = transforms(model, y)?;
        let n = self.asset_dim;
        let npaths = self.myopic.len();
        let mut samples = vec![0.0_f64; npaths * n];
        for p in 0..npaths {
            for i in 0..n {
                samples[p * n + i] = tc.risk_dir[i] * self.myopic[p] + self.hedging[p * n + i];
            }
        }
        Ok(VectorEstimate::from_samples(&samples, n)?.norm_estimate())
    }
}

/// Evidence for the difference-bound audit
/// `|E_N[H d(l1 H)]| <= K (E_N[H] + l1^alpha E_N[H^{1+alpha}])`.
#[derive(Debug, Clone)]
pub struct DBoundReport {
    pub lhs: f64,
    pub rhs: f64,
    pub holds: bool,
    /// Worst pointwise excess of `|d|` over `K (1 + z^alpha)` across the
    /// sampled `z = l1 H`; nonpositive when the grid constant truly
    /// dominates on this ensemble.
    pub pointwise_max_violation: f64,
    pub mean_h: f64,
    pub mean_h_one_plus_alpha: f64,
}

/// Audit the integrated difference bound on the empirical measure. The
/// reference must already be in the comparison normalization.
#[allow(clippy::too_many_arguments)]
pub fn d_bound_check(
    u1: &UtilitySpec,
    reference: &UtilitySpec,
    funcs: &FunctionalsSet,
    cal1: &CalibratedMultiplier,
    k: f64,
    alpha: f64,
    q: f64,
) -> Result<DBoundReport> {
    check_same_ensemble(cal1, funcs)?;
    if !(alpha > q - 1.0 && alpha <= 0.0) {
        return Err(Error::Domain(format!(
            "alpha={alpha} outside ({}, 0]",
            q - 1.0
        )));
    }
    let h = funcs.state_price()?;
    let l1 = cal1.lambda_hat;

    let mut acc_hd = 0.0;
    let mut acc_h = 0.0;
    let mut acc_h1a = 0.0;
    let mut worst = f64::NEG_INFINITY;
    for &hp in h {
        let z = l1 * hp;
        let d = u1.inverse_marginal(z)? - reference.inverse_marginal(z)?;
        acc_hd += hp * d;
        acc_h += hp;
        acc_h1a += hp.powf(1.0 + alpha);
        worst = worst.max(d.abs() - k * (1.0 + z.powf(alpha)));
    }
    let npaths = h.len() as f64;
    let lhs = (acc_hd / npaths).abs();
    let mean_h = acc_h / npaths;
    let mean_h1a = acc_h1a / npaths;
    let rhs = k * (mean_h + l1.powf(alpha) * mean_h1a);
    Ok(DBoundReport {
        lhs,
        rhs,
        holds: lhs <= rhs * (1.0 + 1e-12) + f64::MIN_POSITIVE,
        pointwise_max_violation: worst,
        mean_h,
        mean_h_one_plus_alpha: mean_h1a,
    })
}

/// Signed `E_N[H d(l1 H)]`, the quantity whose running minimum over a
/// horizon sweep proxies the theory's horizon-free constant.
pub fn signed_hd(
    u1: &UtilitySpec,
    reference: &UtilitySpec,
    funcs: &FunctionalsSet,
    cal1: &CalibratedMultiplier,
) -> Result<f64> {
    check_same_ensemble(cal1, funcs)?;
    let h = funcs.state_price()?;
    let mut acc = 0.0;
    for &hp in h {
        let z = cal1.lambda_hat * hp;
        acc += hp * (u1.inverse_marginal(z)? - reference.inverse_marginal(z)?);
    }
    Ok(acc / h.len() as f64)
}
