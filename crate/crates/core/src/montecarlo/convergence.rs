//! Discretization-bias study on a ladder of step counts.
//!
//! One fine ensemble is simulated and stored; every coarser level reuses
//! the same paths restricted to its subgrid, with Brownian increments
//! aggregated across fine steps. Differences between levels are therefore
//! pure quadrature error, and a Richardson extrapolation estimates the
//! zero-step limit.

use crate::error::{Error, Result};
use crate::model::QtsmModel;
use nalgebra::DVector;

use super::engine::{simulate_factor, FuncTables, PathAccumulator};
use super::estimate::estimate;
use super::SimGrid;

#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub enum StudyFunctional {
    /// `H_T` per path.
    StatePrice,
    /// The Lebesgue rate integral alone.
    RateIntegral,
    /// Euclidean norm of the sensitivity vector `L_T`.
    SensitivityNorm,
}

#[derive(Debug, Clone)]
pub struct BiasReport {
    pub nsteps: Vec<usize>,
    pub means: Vec<f64>,
    pub ses: Vec<f64>,
    pub richardson: f64,
    /// Observed convergence order from the last three levels, when the
    /// level differences support one.
    pub order: Option<f64>,
    /// Levels whose distance to the extrapolated limit exceeds a third
    /// of their standard error.
    pub flagged: Vec<bool>,
}

/// Run the ladder. `ladder` must be ascending and each entry must divide
/// the finest entry.
pub fn convergence_study(
    model: &QtsmModel,
    horizon: f64,
    y0: &DVector<f64>,
    ladder: &[usize],
    npaths: usize,
    seed: u64,
    functional: StudyFunctional,
) -> Result<BiasReport> {
    if ladder.len() < 2 {
        return Err(Error::Domain("ladder needs at least two levels".into()));
    }
    let finest = *ladder.last().unwrap();
    for w in ladder.windows(2) {
        if w[0] >= w[1] {
            return Err(Error::Domain("ladder must be strictly ascending".into()));
        }
    }
    for &ns in ladder {
        if ns < 2 || finest % ns != 0 {
            return Err(Error::Domain(format!(
                "every level must divide the finest level {finest}; got {ns}"
            )));
        }
    }

    let grid = SimGrid::new(horizon, finest)?;
    let ens = simulate_factor(model, grid, y0.clone(), npaths, seed)?;

    let m = ens.factor_dim;
    let n = ens.noise_dim;
    let mut means = Vec::with_capacity(ladder.len());
    let mut ses = Vec::with_capacity(ladder.len());

    let mut dw_agg = vec![0.0_f64; n];
    for &ns in ladder {
        let stride = finest / ns;
        let level_grid = SimGrid::new(horizon, ns)?;
        let tables = FuncTables::build(model, None, &level_grid, ns);
        let mut acc = PathAccumulator::new(&tables);
        let mut values = Vec::with_capacity(npaths);
        for p in 0..npaths {
            acc.start(ens.y_node(p, 0));
            for k in 0..ns {
                dw_agg.iter_mut().for_each(|v| *v = 0.0);
                for fine in k * stride..(k + 1) * stride {
                    let dw = ens.dw_step(p, fine);
                    for j in 0..n {
                        dw_agg[j] += dw[j];
                    }
                }
                acc.step(k, &dw_agg, ens.y_node(p, (k + 1) * stride));
            }
            values.push(match functional {
                StudyFunctional::StatePrice => acc.state_price(),
                StudyFunctional::RateIntegral => acc.int_r,
                StudyFunctional::SensitivityNorm => {
                    acc.l.iter().map(|v| v * v).sum::<f64>().sqrt()
                }
            });
        }
        let est = estimate(&values)?;
        means.push(est.mean);
        ses.push(est.se);
    }
    let _ = m;

    // Extrapolate from the finest levels. With at least three levels in
    // ratio 2, estimate the order; otherwise take the finest mean.
    let lvls = ladder.len();
    let (richardson, order) = if lvls >= 3 {
        let mf = means[lvls - 1];
        let m2 = means[lvls - 2];
        let m4 = means[lvls - 3];
        let d1 = m2 - mf;
        let d2 = m4 - m2;
        let ratio_steps = (ladder[lvls - 1] / ladder[lvls - 2]) as f64;
        if d1.abs() > 0.0 && d2 / d1 > 1.0 {
            let p = (d2 / d1).ln() / ratio_steps.ln();
            let limit = mf - d1 / (ratio_steps.powf(p) - 1.0);
            (limit, Some(p))
        } else {
            (mf, None)
        }
    } else {
        (means[lvls - 1], None)
    };

    let flagged = means
        .iter()
        .zip(&ses)
        .map(|(m, se)| (m - richardson).abs() > se / 3.0)
        .collect();

    Ok(BiasReport {
        nsteps: ladder.to_vec(),
        means,
        ses,
        richardson,
        order,
        flagged,
    })
}
