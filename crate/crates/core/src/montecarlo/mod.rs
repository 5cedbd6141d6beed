//! Exact-in-law simulation of the Ornstein-Uhlenbeck factor and the
//! path functionals of the state-price density.
//!
//! The factor transition over one grid step is sampled exactly: the step
//! noise is drawn jointly with the Brownian increment it must be
//! consistent with, so stored `dW` and stored `Y` describe the same path.
//! Integral functionals (`int r`, the Ito integral of `theta`, the
//! sensitivity vector `L`) carry quadrature error only, measured by the
//! step-ladder study in [`convergence`].
//!
//! Reproducibility: each path owns one counter-indexed ChaCha stream, so
//! ensembles are byte-identical for a given `(seed, grid, npaths, model)`
//! no matter how many worker threads run the chunks.

mod convergence;
mod dump;
mod engine;
mod estimate;
mod transition;

pub use convergence::{convergence_study, BiasReport, StudyFunctional};
pub use dump::{load_functionals, write_functionals};
pub use engine::{
    attach_functionals, simulate, simulate_factor, simulate_factor_myopic, PathEnsemble,
    SimOutput, SimSpec,
};
pub use estimate::{estimate, estimate_weighted, McEstimate};

use crate::error::{Error, Result};

/// Uniform simulation grid on `[0, horizon]`.
#[derive(Debug, Clone, Copy, PartialEq)]
pub struct SimGrid {
    horizon: f64,
    nsteps: usize,
}

impl SimGrid {
    pub fn new(horizon: f64, nsteps: usize) -> Result<Self> {
        if !(horizon > 0.0) || !horizon.is_finite() {
            return Err(Error::Domain(format!("horizon must be positive, got {horizon}")));
        }
        if nsteps < 2 {
            return Err(Error::Domain(format!("need at least 2 steps, got {nsteps}")));
        }
        Ok(Self { horizon, nsteps })
    }

    pub fn per_unit(horizon: f64, steps_per_unit: usize) -> Result<Self> {
        if steps_per_unit == 0 {
            return Err(Error::Domain("steps_per_unit must be positive".into()));
        }
        let nsteps = ((horizon * steps_per_unit as f64).ceil() as usize).max(2);
        Self::new(horizon, nsteps)
    }

    pub fn horizon(&self) -> f64 {
        self.horizon
    }

    pub fn nsteps(&self) -> usize {
        self.nsteps
    }

    pub fn dt(&self) -> f64 {
        self.horizon / self.nsteps as f64
    }

    /// Grid node closest to `t`; errors when `t` is not node-aligned.
    pub fn node_of(&self, t: f64) -> Result<usize> {
        let dt = self.dt();
        let idx = (t / dt).round() as usize;
        if idx > self.nsteps || (idx as f64 * dt - t).abs() > 1e-9 * (1.0 + t.abs()) {
            return Err(Error::Domain(format!(
                "time {t} does not sit on the simulation grid (dt = {dt})"
            )));
        }
        Ok(idx)
    }
}

/// Probability measure a path ensemble was generated under.
#[derive(Debug, Clone, Copy, PartialEq)]
pub enum Measure {
    Physical,
    Myopic { gamma: f64 },
}

/// Per-path functionals recorded at one checkpoint horizon.
///
/// Under the physical measure `h` holds the state-price density
/// `H_t = exp(-int_r - stoch_int_theta - int_theta_sq / 2)`; the three
/// components are retained when `keep_components` was requested and the
/// stored `h` is bit-consistent with them. Myopic-measure ensembles carry
/// only the sensitivity vector and the factor snapshot.
#[derive(Debug, Clone)]
pub struct FunctionalsSet {
    pub horizon: f64,
    pub measure: Measure,
    pub npaths: usize,
    pub factor_dim: usize,
    pub seed: u64,
    pub ensemble_id: u64,
    pub h: Vec<f64>,
    pub int_r: Vec<f64>,
    pub stoch_int_theta: Vec<f64>,
    pub int_theta_sq: Vec<f64>,
    /// Factor sensitivity `L` per path, row-major `npaths x m`.
    pub l: Vec<f64>,
    /// Factor value at the checkpoint, row-major `npaths x m`.
    pub y_t: Vec<f64>,
}

impl FunctionalsSet {
    pub fn state_price(&self) -> Result<&[f64]> {
        if self.h.is_empty() {
            return Err(Error::Domain(
                "ensemble carries no state-price density (myopic measure?)".into(),
            ));
        }
        Ok(&self.h)
    }

    pub fn l_row(&self, path: usize) -> &[f64] {
        &self.l[path * self.factor_dim..(path + 1) * self.factor_dim]
    }

    pub fn y_row(&self, path: usize) -> &[f64] {
        &self.y_t[path * self.factor_dim..(path + 1) * self.factor_dim]
    }

    /// Euclidean norm of `L` per path.
    pub fn l_norms(&self) -> Vec<f64> {
        (0..self.npaths)
            .map(|p| self.l_row(p).iter().map(|v| v * v).sum::<f64>().sqrt())
            .collect()
    }
}
