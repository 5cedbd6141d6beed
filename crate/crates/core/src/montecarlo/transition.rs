//! Exact one-step transition data for a (piecewise) linear-Gaussian
//! factor `dY = (c + S Y) dt + Lambda dW`.
//!
//! Over a step of width `dt` the update is
//!
//! ```text
//! Y+ = E Y + mean + xi,   E = exp(S dt),   xi = int_0^dt e^{S(dt-s)} Lambda dW_s,
//! ```
//!
//! and `xi` must be drawn jointly with `dW = W_{t+dt} - W_t`:
//! `xi | dW ~ N(cross dW, resid resid')` with `cross = R Lambda / dt`,
//! `R = int_0^dt e^{Sv} dv`, and residual covariance
//! `Q - cross cross' dt` where `Q` is the full transition covariance
//! (assembled by the augmented-block matrix exponential). A covariance
//! that loses semidefiniteness to rounding is repaired by eigenvalue
//! clipping at zero, with a logged warning.

use nalgebra::DMatrix;

use crate::error::Result;
use crate::linalg;
use crate::model::QtsmModel;
use crate::pricing::MyopicMeasureCoeffs;

use super::SimGrid;

/// Flat row-major per-step coefficients.
pub(super) struct StepCoeffs {
    pub emat: Vec<f64>,  // m x m
    pub mean: Vec<f64>,  // m
    pub cross: Vec<f64>, // m x n
    pub resid: Vec<f64>, // m x m
}

pub(super) struct StepTable {
    pub m: usize,
    pub n: usize,
    steps: Vec<StepCoeffs>,
    homogeneous: bool,
    pub clipped: bool,
}

impl StepTable {
    #[inline]
    pub fn at(&self, k: usize) -> &StepCoeffs {
        if self.homogeneous {
            &self.steps[0]
        } else {
            &self.steps[k]
        }
    }
}

/// Transition data for frozen coefficients `(S, c)` over width `dt`.
fn step_coeffs(
    slope: &DMatrix<f64>,
    intercept: &nalgebra::DVector<f64>,
    lam: &DMatrix<f64>,
    dt: f64,
) -> (StepCoeffs, bool) {
    let m = slope.nrows();

    // E and R from exp([[S, I], [0, 0]] dt).
    let mut aug = DMatrix::<f64>::zeros(2 * m, 2 * m);
    aug.view_mut((0, 0), (m, m)).copy_from(&(slope * dt));
    aug.view_mut((0, m), (m, m))
        .copy_from(&(DMatrix::<f64>::identity(m, m) * dt));
    let e_aug = aug.exp();
    let emat = e_aug.view((0, 0), (m, m)).into_owned();
    let rmat = e_aug.view((0, m), (m, m)).into_owned();

    // Q from exp([[-S, LL'], [0, S']] dt): Q = F2' G1.
    let ll = lam * lam.transpose();
    let mut van = DMatrix::<f64>::zeros(2 * m, 2 * m);
    van.view_mut((0, 0), (m, m)).copy_from(&(-slope * dt));
    van.view_mut((0, m), (m, m)).copy_from(&(&ll * dt));
    van.view_mut((m, m), (m, m)).copy_from(&(slope.transpose() * dt));
    let e_van = van.exp();
    let g1 = e_van.view((0, m), (m, m)).into_owned();
    let f2 = e_van.view((m, m), (m, m)).into_owned();
    let q = f2.transpose() * g1;

    let mean = &rmat * intercept;
    let cross = &rmat * lam / dt;
    let resid_cov = linalg::symmetrized(&(&q - &cross * cross.transpose() * dt));
    let (factor, worst) = linalg::psd_factor_clipped(&resid_cov);
    let clipped = worst < -1e-13 * (1.0 + linalg::max_abs(&resid_cov));
    if clipped {
        log::warn!(
            "transition covariance lost semidefiniteness (min eigenvalue {worst:.3e}); \
             repaired by clipping at zero"
        );
    }

    (
        StepCoeffs {
            emat: emat.transpose().as_slice().to_vec(), // row-major
            mean: mean.as_slice().to_vec(),
            cross: cross.transpose().as_slice().to_vec(),
            resid: factor.transpose().as_slice().to_vec(),
        },
        clipped,
    )
}

/// Constant-coefficient table for the physical measure.
pub(super) fn physical_table(model: &QtsmModel, grid: &SimGrid) -> StepTable {
    let (coeffs, clipped) = step_coeffs(
        model.mean_reversion(),
        model.drift_const(),
        model.factor_vol(),
        grid.dt(),
    );
    StepTable {
        m: model.factor_dim(),
        n: model.asset_dim(),
        steps: vec![coeffs],
        homogeneous: true,
        clipped,
    }
}

/// Piecewise-frozen table for a myopic measure: each interval freezes the
/// drift at its midpoint value.
pub(super) fn myopic_table(
    model: &QtsmModel,
    coeffs: &MyopicMeasureCoeffs,
    grid: &SimGrid,
) -> Result<StepTable> {
    if coeffs.tgrid.len() != grid.nsteps() + 1
        || (coeffs.horizon - grid.horizon()).abs() > 1e-9 * (1.0 + grid.horizon())
    {
        return Err(crate::error::Error::EnsembleMismatch(format!(
            "myopic coefficients cover {} nodes on [0, {}], simulation grid has {} nodes on [0, {}]",
            coeffs.tgrid.len(),
            coeffs.horizon,
            grid.nsteps() + 1,
            grid.horizon()
        )));
    }
    let dt = grid.dt();
    let lam = model.factor_vol();
    let mut steps = Vec::with_capacity(grid.nsteps());
    let mut clipped_any = false;
    for k in 0..grid.nsteps() {
        let slope = (coeffs.drift_slope(k) + coeffs.drift_slope(k + 1)) * 0.5;
        let intercept = (coeffs.drift_intercept(k) + coeffs.drift_intercept(k + 1)) * 0.5;
        let (sc, clipped) = step_coeffs(&slope, &intercept, lam, dt);
        clipped_any |= clipped;
        steps.push(sc);
    }
    Ok(StepTable {
        m: model.factor_dim(),
        n: model.asset_dim(),
        steps,
        homogeneous: false,
        clipped: clipped_any,
    })
}

#[cfg(test)]
mod tests {
    use super::*;
    use approx::assert_relative_eq;
    use nalgebra::DVector;

    #[test]
    fn driftless_identity_noise() {
        // S = 0, c = 0, Lambda = I: Y+ = Y + dW exactly, residual zero.
        let s = DMatrix::zeros(1, 1);
        let c = DVector::zeros(1);
        let lam = DMatrix::identity(1, 1);
        let (sc, clipped) = step_coeffs(&s, &c, &lam, 0.25);
        assert!(!clipped);
        assert_relative_eq!(sc.emat[0], 1.0, max_relative = 1e-14);
        assert_eq!(sc.mean[0], 0.0);
        assert_relative_eq!(sc.cross[0], 1.0, max_relative = 1e-12);
        assert!(sc.resid[0].abs() < 1e-9);
    }

    #[test]
    fn scalar_ou_moments() {
        // dY = -kappa Y dt + dW: E = e^{-kappa dt}, Q = (1-e^{-2 kappa dt})/(2 kappa).
        let kappa = 1.3;
        let dt = 0.2;
        let s = DMatrix::from_element(1, 1, -kappa);
        let c = DVector::zeros(1);
        let lam = DMatrix::identity(1, 1);
        let (sc, _) = step_coeffs(&s, &c, &lam, dt);
        assert_relative_eq!(sc.emat[0], (-kappa * dt).exp(), max_relative = 1e-12);
        let q = sc.resid[0] * sc.resid[0] + sc.cross[0] * sc.cross[0] * dt;
        let q_true = (1.0 - (-2.0 * kappa * dt).exp()) / (2.0 * kappa);
        assert_relative_eq!(q, q_true, max_relative = 1e-10);
        // mean coefficient: R = (1 - e^{-kappa dt}) / kappa against intercept 1
        let (sc2, _) = step_coeffs(&s, &DVector::from_element(1, 1.0), &lam, dt);
        assert_relative_eq!(
            sc2.mean[0],
            (1.0 - (-kappa * dt).exp()) / kappa,
            max_relative = 1e-12
        );
    }
}
