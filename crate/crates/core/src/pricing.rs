//! Closed-form analytics on top of the Riccati solvers: zero-coupon bond
//! prices, moments `E[H_T^gamma]`, CRRA optimal feedback, and the drift
//! coefficients of the factor under myopic measures.
//!
//! Two Riccati families appear. The bond family `(C, beta, alpha)` prices
//! the zero coupon,
//!
//! ```text
//! price(T, y) = exp(-alpha(0;T) - beta(0;T)'y - y'C(0;T)y/2),
//! ```
//!
//! and the CRRA value family `(P, q, k)` encodes the power investor's value
//! function `V = x^p/p * exp(-y'P y/2 - q'y - k)`. For `gamma` in `(0,1)`
//! the myopic-measure coefficients are `(1-gamma) (P, q, k)` evaluated at
//! `p = gamma/(gamma-1)`; `gamma = 1` uses the bond family; `gamma = 0` is
//! the physical measure.

use nalgebra::{DMatrix, DVector};

use crate::error::{Error, Result};
use crate::model::QtsmModel;
use crate::riccati::{
    solve_companion_linear, solve_terminal_riccati, CompanionSources, RiccatiSolution,
    RiccatiSpec, DEFAULT_STEPS_PER_UNIT,
};

fn dual_exponent(p: f64) -> f64 {
    if p == 0.0 {
        0.0
    } else {
        p / (p - 1.0)
    }
}

/// Companion sources for the bond family (the `gamma = 1` member).
struct BondSources<'a> {
    model: &'a QtsmModel,
    quad: DMatrix<f64>,       // Lambda Lambda'
    drift_q: DVector<f64>,    // b - Lambda a
}

impl CompanionSources for BondSources<'_> {
    fn beta_source(&self, c: &DMatrix<f64>) -> DVector<f64> {
        c * &self.drift_q + self.model.rate_lin()
    }
    fn scalar_source(&self, c: &DMatrix<f64>, beta: &DVector<f64>) -> f64 {
        0.5 * (&self.quad * c).trace() - 0.5 * (beta.transpose() * &self.quad * beta)[0]
            + self.drift_q.dot(beta)
            + self.model.rate_const()
    }
}

/// Companion sources for the CRRA value family at exponent `p < 0`.
struct CrraSources<'a> {
    model: &'a QtsmModel,
    p: f64,
    lam: DMatrix<f64>,
}

impl CompanionSources for CrraSources<'_> {
    fn beta_source(&self, pmat: &DMatrix<f64>) -> DVector<f64> {
        let q = dual_exponent(self.p);
        let m = self.model;
        pmat * m.drift_const()
            + (m.risk_slope() - self.lam.transpose() * pmat).transpose() * m.risk_const() * q
            - m.rate_lin() * self.p
    }
    fn scalar_source(&self, pmat: &DMatrix<f64>, qvec: &DVector<f64>) -> f64 {
        let m = self.model;
        let q = dual_exponent(self.p);
        let lam_lam = &self.lam * self.lam.transpose();
        let a_norm2 = m.risk_const().norm_squared();
        0.5 * (&lam_lam * pmat).trace()
            + (qvec.transpose() * lam_lam * qvec)[0] / (2.0 * (self.p - 1.0))
            + (m.drift_const() - &self.lam * m.risk_const() * q).dot(qvec)
            + self.p / (2.0 * (self.p - 1.0)) * a_norm2
            - self.p * m.rate_const()
    }
}

/// Bond family `(C, beta, alpha)` on `[0, T]`.
pub fn bond_system(model: &QtsmModel, horizon: f64, steps_per_unit: usize) -> Result<RiccatiSolution> {
    let lam = model.factor_vol();
    let quad = lam * lam.transpose();
    let lin = model.mean_reversion() - lam * model.risk_slope();
    let spec = RiccatiSpec::new(quad.clone(), lin, model.rate_quad().clone(), horizon)?;
    let cpath = solve_terminal_riccati(&spec, steps_per_unit)?;
    let sources = BondSources {
        model,
        quad,
        drift_q: model.drift_const() - lam * model.risk_const(),
    };
    solve_companion_linear(&spec, &cpath, &sources)
}

/// CRRA value family `(P, q, k)` for `p < 0`.
pub fn crra_value_system(
    model: &QtsmModel,
    p: f64,
    horizon: f64,
    steps_per_unit: usize,
) -> Result<RiccatiSolution> {
    if !(p < 0.0) {
        return Err(Error::Domain(format!(
            "CRRA value system needs p < 0, got {p}"
        )));
    }
    let q = dual_exponent(p);
    let lam = model.factor_vol();
    let quad = (lam * lam.transpose()) / (1.0 - p);
    let lin = model.mean_reversion() - lam * model.risk_slope() * q;
    let src = model.risk_slope().transpose() * model.risk_slope() * q - model.rate_quad() * p;
    let spec = RiccatiSpec::new(quad, lin, src, horizon)?;
    let cpath = solve_terminal_riccati(&spec, steps_per_unit)?;
    let sources = CrraSources {
        model,
        p,
        lam: lam.clone(),
    };
    solve_companion_linear(&spec, &cpath, &sources)
}

/// Myopic-measure coefficient family `(C^g, beta^g, alpha^g)` for
/// `gamma` in `[0, 1]`: zeros at 0, `(1-gamma)(P, q, k)` inside, the bond
/// family at 1.
pub fn gamma_coeff_system(
    model: &QtsmModel,
    gamma: f64,
    horizon: f64,
    steps_per_unit: usize,
) -> Result<RiccatiSolution> {
    if !(0.0..=1.0).contains(&gamma) {
        return Err(Error::Domain(format!(
            "gamma must lie in [0, 1], got {gamma}"
        )));
    }
    if gamma == 1.0 {
        return bond_system(model, horizon, steps_per_unit);
    }
    if gamma == 0.0 {
        let m = model.factor_dim();
        let nsteps = ((horizon * steps_per_unit as f64).ceil() as usize).max(2);
        let tgrid = (0..=nsteps)
            .map(|k| horizon * k as f64 / nsteps as f64)
            .collect();
        return Ok(RiccatiSolution {
            tgrid,
            cpath: vec![DMatrix::zeros(m, m); nsteps + 1],
            betapath: Some(vec![DVector::zeros(m); nsteps + 1]),
            scalarpath: Some(vec![0.0; nsteps + 1]),
            meta: Default::default(),
        });
    }
    let p = gamma / (gamma - 1.0);
    let mut sys = crra_value_system(model, p, horizon, steps_per_unit)?;
    let scale = 1.0 - gamma;
    for c in &mut sys.cpath {
        *c *= scale;
    }
    if let Some(betas) = &mut sys.betapath {
        for b in betas.iter_mut() {
            *b *= scale;
        }
    }
    if let Some(scalars) = &mut sys.scalarpath {
        for s in scalars.iter_mut() {
            *s *= scale;
        }
    }
    Ok(sys)
}

/// Direct integration of the `gamma`-family Riccati system, bypassing the
/// CRRA value route. Exists as an independent route for cross-checks.
pub fn gamma_coeff_system_direct(
    model: &QtsmModel,
    gamma: f64,
    horizon: f64,
    steps_per_unit: usize,
) -> Result<RiccatiSolution> {
    if !(0.0..=1.0).contains(&gamma) {
        return Err(Error::Domain(format!(
            "gamma must lie in [0, 1], got {gamma}"
        )));
    }
    let lam = model.factor_vol();
    let quad = lam * lam.transpose();
    let lin = model.mean_reversion() - lam * model.risk_slope() * gamma;
    let src = model.risk_slope().transpose() * model.risk_slope() * (gamma * (1.0 - gamma))
        + model.rate_quad() * gamma;
    let spec = RiccatiSpec::new(quad.clone(), lin, src, horizon)?;
    let cpath = solve_terminal_riccati(&spec, steps_per_unit)?;

    struct GammaSources<'a> {
        model: &'a QtsmModel,
        gamma: f64,
        quad: DMatrix<f64>,
        drift_eff: DVector<f64>, // b - gamma Lambda a
    }
    impl CompanionSources for GammaSources<'_> {
        fn beta_source(&self, c: &DMatrix<f64>) -> DVector<f64> {
            let g = self.gamma;
            c * &self.drift_eff
                + self.model.risk_slope().transpose() * self.model.risk_const() * (g * (1.0 - g))
                + self.model.rate_lin() * g
        }
        fn scalar_source(&self, c: &DMatrix<f64>, beta: &DVector<f64>) -> f64 {
            let g = self.gamma;
            0.5 * (&self.quad * c).trace() - 0.5 * (beta.transpose() * &self.quad * beta)[0]
                + self.drift_eff.dot(beta)
                + 0.5 * g * (1.0 - g) * self.model.risk_const().norm_squared()
                + g * self.model.rate_const()
        }
    }
    let sources = GammaSources {
        model,
        gamma,
        quad,
        drift_eff: model.drift_const() - lam * model.risk_const() * gamma,
    };
    solve_companion_linear(&spec, &cpath, &sources)
}

/// Evaluate `exp(-alpha - beta'y - y'C y / 2)` at the start node of a
/// coefficient family; this is the bond price for the `gamma = 1` family
/// and `E[H_T^gamma]` in general.
pub fn exp_quadratic_at_start(sys: &RiccatiSolution, y: &DVector<f64>) -> Result<f64> {
    let beta = sys
        .betapath
        .as_ref()
        .ok_or_else(|| Error::Domain("system lacks linear coefficients".into()))?;
    let alpha = sys
        .scalarpath
        .as_ref()
        .ok_or_else(|| Error::Domain("system lacks scalar coefficients".into()))?;
    let c = &sys.cpath[0];
    let expo = -alpha[0] - beta[0].dot(y) - 0.5 * (y.transpose() * c * y)[0];
    Ok(expo.exp())
}

/// Price of a zero-coupon bond maturing at `horizon`, observed at time 0
/// with factor level `y`. This is also `E[H_T]`.
pub fn bond_price(model: &QtsmModel, horizon: f64, y: &DVector<f64>) -> Result<f64> {
    bond_price_with(model, horizon, y, DEFAULT_STEPS_PER_UNIT)
}

pub fn bond_price_with(
    model: &QtsmModel,
    horizon: f64,
    y: &DVector<f64>,
    steps_per_unit: usize,
) -> Result<f64> {
    if horizon < 0.0 {
        return Err(Error::Domain(format!("horizon must be >= 0, got {horizon}")));
    }
    if horizon == 0.0 {
        return Ok(1.0);
    }
    let sys = bond_system(model, horizon, steps_per_unit)?;
    exp_quadratic_at_start(&sys, y)
}

/// Closed form for `E[H_T^gamma]`, `gamma` in `[0, 1]`, through the CRRA
/// value identity inside the interval and the bond price at the ends.
pub fn eh_gamma(model: &QtsmModel, gamma: f64, horizon: f64, y: &DVector<f64>) -> Result<f64> {
    eh_gamma_with(model, gamma, horizon, y, DEFAULT_STEPS_PER_UNIT)
}

pub fn eh_gamma_with(
    model: &QtsmModel,
    gamma: f64,
    horizon: f64,
    y: &DVector<f64>,
    steps_per_unit: usize,
) -> Result<f64> {
    if !(0.0..=1.0).contains(&gamma) {
        return Err(Error::Domain(format!(
            "gamma must lie in [0, 1], got {gamma}"
        )));
    }
    if horizon < 0.0 {
        return Err(Error::Domain(format!("horizon must be >= 0, got {horizon}")));
    }
    if gamma == 0.0 || horizon == 0.0 {
        return Ok(1.0);
    }
    let sys = gamma_coeff_system(model, gamma, horizon, steps_per_unit)?;
    exp_quadratic_at_start(&sys, y)
}

/// CRRA optimal feedback split into myopic and hedging parts (dollar
/// amounts at wealth `x`).
#[derive(Debug, Clone)]
pub struct CrraFeedback {
    pub myopic: DVector<f64>,
    pub hedging: DVector<f64>,
}

impl CrraFeedback {
    pub fn total(&self) -> DVector<f64> {
        &self.myopic + &self.hedging
    }
}

/// Optimal feedback for the CRRA investor with exponent `p <= 0`
/// (`p = 0` meaning log), evaluated at time `t` for horizon `horizon`.
pub fn crra_feedback(
    model: &QtsmModel,
    p: f64,
    t: f64,
    horizon: f64,
    x: f64,
    y: &DVector<f64>,
    steps_per_unit: usize,
) -> Result<CrraFeedback> {
    if !(p <= 0.0) {
        return Err(Error::Domain(format!(
            "feedback supports p <= 0 (log at 0), got {p}"
        )));
    }
    if !(x > 0.0) {
        return Err(Error::Domain(format!("wealth must be positive, got {x}")));
    }
    let gamma = dual_exponent(p);
    let sys = gamma_system(model, gamma, horizon.max(t), steps_per_unit)?;
    sys.feedback(model, t, x, y)
}

/// A coefficient family bundled with its exponent.
#[derive(Debug, Clone)]
pub struct GammaSystem {
    pub gamma: f64,
    pub system: RiccatiSolution,
}

pub fn gamma_system(
    model: &QtsmModel,
    gamma: f64,
    horizon: f64,
    steps_per_unit: usize,
) -> Result<GammaSystem> {
    Ok(GammaSystem {
        gamma,
        system: gamma_coeff_system(model, gamma, horizon, steps_per_unit)?,
    })
}

impl GammaSystem {
    /// Dollar feedback of the CRRA investor whose dual exponent is this
    /// system's gamma.
    pub fn feedback(
        &self,
        model: &QtsmModel,
        t: f64,
        x: f64,
        y: &DVector<f64>,
    ) -> Result<CrraFeedback> {
        let c = self.system.c_at(t)?;
        let beta = self.system.beta_at(t)?;
        let theta = model.risk_price(y);
        let sig_t = model.asset_vol().transpose();
        let lu = sig_t.lu();
        let myopic = lu
            .solve(&theta)
            .ok_or_else(|| Error::Domain("asset volatility is singular".into()))?
            * (x * (1.0 - self.gamma));
        let hedge_arg = model.factor_vol().transpose() * (&c * y + &beta);
        let hedging = lu
            .solve(&hedge_arg)
            .ok_or_else(|| Error::Domain("asset volatility is singular".into()))?
            * (-x);
        Ok(CrraFeedback { myopic, hedging })
    }
}

/// Time-0 bond coefficients over an ascending list of horizons.
#[derive(Debug, Clone)]
pub struct BondCurve {
    pub horizons: Vec<f64>,
    pub alpha0: Vec<f64>,
    pub beta0: Vec<DVector<f64>>,
    pub c0: Vec<DMatrix<f64>>,
}

pub fn bond_curve(
    model: &QtsmModel,
    horizons: &[f64],
    steps_per_unit: usize,
) -> Result<BondCurve> {
    let m = model.factor_dim();
    let mut curve = BondCurve {
        horizons: horizons.to_vec(),
        alpha0: Vec::with_capacity(horizons.len()),
        beta0: Vec::with_capacity(horizons.len()),
        c0: Vec::with_capacity(horizons.len()),
    };
    let mut prev = 0.0;
    for &t in horizons {
        if t < prev {
            return Err(Error::Domain("horizons must be ascending".into()));
        }
        prev = t;
        if t == 0.0 {
            curve.alpha0.push(0.0);
            curve.beta0.push(DVector::zeros(m));
            curve.c0.push(DMatrix::zeros(m, m));
            continue;
        }
        let sys = bond_system(model, t, steps_per_unit)?;
        curve.alpha0.push(sys.scalarpath.as_ref().unwrap()[0]);
        curve.beta0.push(sys.betapath.as_ref().unwrap()[0].clone());
        curve.c0.push(sys.cpath[0].clone());
    }
    Ok(curve)
}

impl BondCurve {
    /// `exp(-alpha - beta'y - y'C y / 2)` at horizon index `i`.
    pub fn price(&self, i: usize, y: &DVector<f64>) -> f64 {
        let expo = -self.alpha0[i]
            - self.beta0[i].dot(y)
            - 0.5 * (y.transpose() * &self.c0[i] * y)[0];
        expo.exp()
    }
}

/// Factor drift coefficients under the myopic measure for one horizon:
/// `dY = (intercept(t) + slope(t) Y) dt + Lambda dW^g`.
#[derive(Debug, Clone)]
pub struct MyopicMeasureCoeffs {
    pub gamma: f64,
    pub horizon: f64,
    pub tgrid: Vec<f64>,
    pub c_nodes: Vec<DMatrix<f64>>,
    pub beta_nodes: Vec<DVector<f64>>,
    intercept0: DVector<f64>, // b - gamma Lambda a
    slope0: DMatrix<f64>,     // B - gamma Lambda A
    lam_lam: DMatrix<f64>,
}

pub fn myopic_measure_coeffs(
    model: &QtsmModel,
    gamma: f64,
    horizon: f64,
    steps_per_unit: usize,
) -> Result<MyopicMeasureCoeffs> {
    let sys = gamma_coeff_system(model, gamma, horizon, steps_per_unit)?;
    let lam = model.factor_vol();
    Ok(MyopicMeasureCoeffs {
        gamma,
        horizon,
        tgrid: sys.tgrid.clone(),
        c_nodes: sys.cpath.clone(),
        beta_nodes: sys.betapath.unwrap(),
        intercept0: model.drift_const() - lam * model.risk_const() * gamma,
        slope0: model.mean_reversion() - lam * model.risk_slope() * gamma,
        lam_lam: lam * lam.transpose(),
    })
}

impl MyopicMeasureCoeffs {
    pub fn nodes(&self) -> usize {
        self.tgrid.len()
    }

    pub fn drift_intercept(&self, node: usize) -> DVector<f64> {
        &self.intercept0 - &self.lam_lam * &self.beta_nodes[node]
    }

    pub fn drift_slope(&self, node: usize) -> DMatrix<f64> {
        &self.slope0 - &self.lam_lam * &self.c_nodes[node]
    }
}

/// Incremental decay slopes of `-log price` between successive horizons,
/// plus the relative drift of that slope over the tail half. A market
/// with exponentially vanishing bond prices shows a positive, stabilizing
/// slope.
#[derive(Debug, Clone)]
pub struct DecayDiagnostics {
    pub horizons: Vec<f64>,
    pub prices: Vec<f64>,
    pub tail_slope: f64,
    pub tail_relative_change: f64,
}

pub fn bond_decay_diagnostics(
    model: &QtsmModel,
    horizons: &[f64],
    y: &DVector<f64>,
    steps_per_unit: usize,
) -> Result<DecayDiagnostics> {
    if horizons.len() < 3 {
        return Err(Error::Domain("need at least three horizons".into()));
    }
    let mut prices = Vec::with_capacity(horizons.len());
    for &t in horizons {
        prices.push(bond_price_with(model, t, y, steps_per_unit)?);
    }
    let mut slopes = Vec::new();
    for i in 0..horizons.len() - 1 {
        let dt = horizons[i + 1] - horizons[i];
        slopes.push(-(prices[i + 1].ln() - prices[i].ln()) / dt);
    }
    let tail = &slopes[slopes.len() / 2..];
    let tail_slope = tail.iter().sum::<f64>() / tail.len() as f64;
    let tail_min = tail.iter().copied().fold(f64::INFINITY, f64::min);
    let tail_max = tail.iter().copied().fold(f64::NEG_INFINITY, f64::max);
    let tail_relative_change = if tail_slope.abs() > 0.0 {
        (tail_max - tail_min) / tail_slope.abs()
    } else {
        f64::INFINITY
    };
    Ok(DecayDiagnostics {
        horizons: horizons.to_vec(),
        prices,
        tail_slope,
        tail_relative_change,
    })
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::model::QtsmModel;
    use approx::assert_relative_eq;

    fn scalar_model() -> QtsmModel {
        QtsmModel::scalar(0.045, 0.01, 0.02, 0.2, 0.1, 0.0, -0.6, 0.18, 0.2).unwrap()
    }

    fn y0() -> DVector<f64> {
        DVector::from_element(1, 0.2)
    }

    #[test]
    fn bond_price_at_zero_horizon_is_one() {
        assert_eq!(bond_price(&scalar_model(), 0.0, &y0()).unwrap(), 1.0);
    }

    #[test]
    fn constant_rate_bond_is_exponential() {
        let model = QtsmModel::scalar(0.03, 0.0, 0.0, 0.25, 0.15, 0.1, -0.8, 0.2, 0.3).unwrap();
        for &t in &[0.5, 1.0, 4.0] {
            let p = bond_price_with(&model, t, &y0(), 400).unwrap();
            assert_relative_eq!(p, (-0.03 * t).exp(), max_relative = 1e-12);
        }
    }

    #[test]
    fn eh_gamma_boundary_cases() {
        let model = scalar_model();
        assert_eq!(eh_gamma(&model, 0.0, 7.0, &y0()).unwrap(), 1.0);
        assert_eq!(eh_gamma(&model, 0.5, 0.0, &y0()).unwrap(), 1.0);
        assert!(eh_gamma(&model, 1.4, 1.0, &y0()).is_err());
        assert!(eh_gamma(&model, -0.1, 1.0, &y0()).is_err());
    }

    #[test]
    fn eh_gamma_one_equals_bond_price() {
        let model = scalar_model();
        let t = 5.0;
        let a = eh_gamma_with(&model, 1.0, t, &y0(), 500).unwrap();
        let b = bond_price_with(&model, t, &y0(), 500).unwrap();
        assert_relative_eq!(a, b, max_relative = 1e-10);
    }

    #[test]
    fn gamma_family_matches_direct_route() {
        let model = scalar_model();
        for &gamma in &[0.25, 0.5, 0.75] {
            let via_value = gamma_coeff_system(&model, gamma, 4.0, 500).unwrap();
            let direct = gamma_coeff_system_direct(&model, gamma, 4.0, 500).unwrap();
            let mut worst = 0.0_f64;
            for (a, b) in via_value.cpath.iter().zip(&direct.cpath) {
                worst = worst.max((a - b).abs().max());
            }
            assert!(worst <= 1e-8, "gamma={gamma}: C mismatch {worst:.3e}");
            let (ba, bb) = (
                via_value.betapath.as_ref().unwrap(),
                direct.betapath.as_ref().unwrap(),
            );
            let mut worst_b = 0.0_f64;
            for (a, b) in ba.iter().zip(bb) {
                worst_b = worst_b.max((a - b).abs().max());
            }
            assert!(worst_b <= 1e-8, "gamma={gamma}: beta mismatch {worst_b:.3e}");
            let (sa, sb) = (
                via_value.scalarpath.as_ref().unwrap(),
                direct.scalarpath.as_ref().unwrap(),
            );
            let worst_s = sa
                .iter()
                .zip(sb)
                .map(|(a, b)| (a - b).abs())
                .fold(0.0_f64, f64::max);
            assert!(worst_s <= 1e-8, "gamma={gamma}: alpha mismatch {worst_s:.3e}");
        }
    }

    #[test]
    fn log_investor_feedback_is_pure_myopic() {
        let model = scalar_model();
        let x = 2.5;
        let fb = crra_feedback(&model, 0.0, 0.0, 5.0, x, &y0(), 200).unwrap();
        let theta = model.risk_price(&y0())[0];
        assert_relative_eq!(fb.myopic[0], x * theta / 0.2, max_relative = 1e-12);
        assert_eq!(fb.hedging[0], 0.0);
    }

    #[test]
    fn deterministic_rate_no_risk_premium_zero_feedback() {
        // theta == 0 and a deterministic rate kill both sources.
        let model = QtsmModel::scalar(0.03, 0.0, 0.0, 0.0, 0.0, 0.1, -0.5, 0.2, 0.25).unwrap();
        let fb = crra_feedback(&model, -1.0, 0.0, 5.0, 1.0, &y0(), 200).unwrap();
        assert_eq!(fb.myopic[0], 0.0);
        assert_eq!(fb.hedging[0], 0.0);
    }

    #[test]
    fn myopic_coeffs_reduce_to_physical_at_gamma_zero() {
        let model = scalar_model();
        let coeffs = myopic_measure_coeffs(&model, 0.0, 3.0, 100).unwrap();
        for k in [0, coeffs.nodes() / 2, coeffs.nodes() - 1] {
            assert_eq!(coeffs.drift_intercept(k)[0], model.drift_const()[0]);
            assert_eq!(coeffs.drift_slope(k)[(0, 0)], model.mean_reversion()[(0, 0)]);
        }
    }

    #[test]
    fn forward_measure_constant_rate_shifts_by_lambda() {
        // Constant rate: bond C = beta = 0 so slope = B - Lambda A and
        // intercept = b - Lambda a at every node.
        let model = QtsmModel::scalar(0.03, 0.0, 0.0, 0.25, 0.15, 0.1, -0.8, 0.2, 0.3).unwrap();
        let coeffs = myopic_measure_coeffs(&model, 1.0, 2.0, 100).unwrap();
        for k in [0, coeffs.nodes() - 1] {
            assert_relative_eq!(
                coeffs.drift_intercept(k)[0],
                0.1 - 0.2 * 0.25,
                max_relative = 1e-12
            );
            assert_relative_eq!(
                coeffs.drift_slope(k)[(0, 0)],
                -0.8 - 0.2 * 0.15,
                max_relative = 1e-12
            );
        }
    }

    #[test]
    fn bond_curve_matches_pointwise_prices() {
        let model = scalar_model();
        let horizons = [0.0, 1.0, 3.0, 7.0];
        let curve = bond_curve(&model, &horizons, 300).unwrap();
        assert_eq!(curve.price(0, &y0()), 1.0);
        for (i, &t) in horizons.iter().enumerate() {
            let direct = bond_price_with(&model, t, &y0(), 300).unwrap();
            assert_relative_eq!(curve.price(i, &y0()), direct, max_relative = 1e-14);
            assert!(curve.price(i, &y0()) > 0.0);
        }
    }

    #[test]
    fn bond_prices_decay_and_slope_stabilizes() {
        let model = scalar_model();
        let horizons: Vec<f64> = (1..=20).map(|k| 2.0 * k as f64).collect();
        let diag = bond_decay_diagnostics(&model, &horizons, &y0(), 300).unwrap();
        for w in diag.prices.windows(2) {
            assert!(w[1] < w[0], "bond prices must decrease: {w:?}");
        }
        assert!(diag.tail_slope > 0.0);
        assert!(
            diag.tail_relative_change < 0.05,
            "incremental slope still drifting by {:.3}%",
            100.0 * diag.tail_relative_change
        );
    }

    #[test]
    fn log_eh_gamma_convex_on_acceptance_grid() {
        let model = scalar_model();
        let t = 8.0;
        let gammas = [0.0, 0.5, 2.0 / 3.0, 1.0];
        let vals: Vec<f64> = gammas
            .iter()
            .map(|&g| eh_gamma_with(&model, g, t, &y0(), 400).unwrap().ln())
            .collect();
        for i in 0..gammas.len() - 2 {
            let s1 = (vals[i + 1] - vals[i]) / (gammas[i + 1] - gammas[i]);
            let s2 = (vals[i + 2] - vals[i + 1]) / (gammas[i + 2] - gammas[i + 1]);
            assert!(
                s2 >= s1 - 1e-9,
                "log E[H^gamma] not convex: slopes {s1} then {s2}"
            );
        }
    }
}
