//! Horizon sweeps measuring how fast a general utility's feedback
//! strategy folds onto its CRRA reference, with log-log rate fits against
//! the closed-form decay of `E[H_T]`.

use std::io::Write;

use nalgebra::DVector;
use statrs::distribution::{ContinuousCDF, StudentsT};

use crate::error::{Error, Result};
use crate::model::QtsmModel;
use crate::montecarlo::{McEstimate, SimGrid, SimSpec};
use crate::portfolio::{difference_samples, find_lambda_hat, signed_hd};
use crate::pricing::bond_price_with;
use crate::report::fmt_f64;
use crate::utility::{UtilityKind, UtilityPair};

/// Strategy-gap components an experiment can measure.
#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub enum Component {
    Myopic,
    Hedging,
    WealthGap,
    Proportions,
}

impl Component {
    pub fn parse(name: &str) -> Result<Component> {
        Ok(match name {
            "myopic" => Component::Myopic,
            "hedging" => Component::Hedging,
            "wealth_gap" => Component::WealthGap,
            "proportions" => Component::Proportions,
            other => {
                return Err(Error::Config(format!(
                    "unknown component `{other}` (expected myopic | hedging | wealth_gap | proportions)"
                )))
            }
        })
    }

    pub fn name(&self) -> &'static str {
        match self {
            Component::Myopic => "myopic",
            Component::Hedging => "hedging",
            Component::WealthGap => "wealth_gap",
            Component::Proportions => "proportions",
        }
    }
}

#[derive(Debug, Clone)]
pub struct ExperimentConfig {
    pub x: f64,
    pub y0: DVector<f64>,
    pub tgrid: Vec<f64>,
    pub npaths: usize,
    pub nsteps_per_unit: usize,
    pub seed: u64,
    pub components: Vec<Component>,
    /// Wealth grid for the uniform (proportion) gap, log-spaced.
    pub xgrid: Option<Vec<f64>>,
    /// Rate parameter for linear-sharing pairs.
    pub sharing_rate: Option<f64>,
    /// Resolution of the closed-form Riccati abscissa.
    pub riccati_steps_per_unit: usize,
}

impl ExperimentConfig {
    pub fn new(x: f64, y0: DVector<f64>, tgrid: Vec<f64>, npaths: usize, seed: u64) -> Self {
        Self {
            x,
            y0,
            tgrid,
            npaths,
            nsteps_per_unit: 250,
            seed,
            components: vec![Component::Myopic, Component::Hedging, Component::WealthGap],
            xgrid: None,
            sharing_rate: None,
            riccati_steps_per_unit: 2000,
        }
    }
}

/// One horizon's measurements.
#[derive(Debug, Clone)]
pub struct GapRow {
    pub horizon: f64,
    pub eh: f64,
    pub myopic: Option<McEstimate>,
    pub hedging: Option<McEstimate>,
    pub wealth: Option<McEstimate>,
    /// `(x at the supremum, gap estimate)` over the wealth grid.
    pub sup_proportion: Option<(f64, McEstimate)>,
}

#[derive(Debug, Clone)]
pub struct RateFit {
    pub slope: f64,
    pub half_width: f64,
    pub points_used: usize,
    pub points_dropped: usize,
}

#[derive(Debug, Clone)]
pub enum FitOutcome {
    Fitted(RateFit),
    Degenerate { reason: String },
    InsufficientSignal { reason: String },
}

#[derive(Debug, Clone)]
pub struct TurnpikeReport {
    pub rows: Vec<GapRow>,
    pub theoretical_exponent: f64,
    /// The theoretical exponent is an open-interval supremum (linear
    /// sharing) rather than an attained rate.
    pub exponent_is_supremum: bool,
    pub fit_myopic: Option<FitOutcome>,
    pub fit_hedging: Option<FitOutcome>,
    pub fit_wealth: Option<FitOutcome>,
    pub fit_proportions: Option<FitOutcome>,
    /// Decay rate of `-log E[H_T]` per unit horizon over the grid tail.
    pub eh_decay_slope: f64,
    /// Running minimum of the signed budget-difference term, a proxy for
    /// the horizon-free constant in the rate bounds.
    pub hd_running_min: f64,
    /// Present when a sub-step failed and the report stops early.
    pub incomplete: Option<String>,
}

/// Theoretical rate exponent for a utility pair: the gap decays like
/// `E[H_T]` to this power (supremum over admissible parameters for
/// linear sharing).
pub fn theoretical_exponent(pair: &UtilityPair, sharing_rate: Option<f64>) -> Result<f64> {
    let q = pair.q();
    match pair.general.kind() {
        UtilityKind::Power { .. } | UtilityKind::Log => {
            let alpha = pair.theoretical_alpha(None)?;
            Ok(1.0 - alpha / (q - 1.0))
        }
        UtilityKind::Pareto { exponents, .. } => {
            pair.theoretical_alpha(None)?; // validates the range
            let n = exponents.len();
            if n < 2 {
                return Ok(1.0);
            }
            let gamma_second = 1.0 - exponents[n - 2];
            let gamma_last = 1.0 - exponents[n - 1];
            Ok((gamma_second - gamma_last) / gamma_second)
        }
        UtilityKind::LinearSharing { exponents, .. } => {
            pair.theoretical_alpha(sharing_rate)?;
            let n = exponents.len();
            let gamma_second = 1.0 - exponents[n - 2];
            let gamma_last = 1.0 - exponents[n - 1];
            Ok((gamma_second - gamma_last).min(1.0))
        }
    }
}

/// Ordinary least squares of `log gap` on `log E[H]` after dropping rows
/// within three standard errors of zero.
pub fn fit_rate(points: &[(f64, McEstimate)]) -> FitOutcome {
    if !points.is_empty() && points.iter().all(|(_, g)| g.mean == 0.0) {
        return FitOutcome::Degenerate {
            reason: "all gaps are exactly zero".into(),
        };
    }
    let usable: Vec<(f64, f64)> = points
        .iter()
        .filter(|(_, g)| g.mean > 3.0 * g.se && g.mean > 0.0)
        .map(|(eh, g)| (eh.ln(), g.mean.ln()))
        .collect();
    let dropped = points.len() - usable.len();
    if usable.len() < 4 {
        return FitOutcome::InsufficientSignal {
            reason: format!(
                "{} of {} rows above the noise floor; need at least 4",
                usable.len(),
                points.len()
            ),
        };
    }
    let n = usable.len() as f64;
    let mean_x = usable.iter().map(|p| p.0).sum::<f64>() / n;
    let mean_y = usable.iter().map(|p| p.1).sum::<f64>() / n;
    let sxx: f64 = usable.iter().map(|p| (p.0 - mean_x) * (p.0 - mean_x)).sum();
    let sxy: f64 = usable.iter().map(|p| (p.0 - mean_x) * (p.1 - mean_y)).sum();
    if sxx <= 0.0 {
        return FitOutcome::InsufficientSignal {
            reason: "no spread in the abscissa".into(),
        };
    }
    let slope = sxy / sxx;
    let intercept = mean_y - slope * mean_x;
    let ss_res: f64 = usable
        .iter()
        .map(|p| {
            let r = p.1 - (intercept + slope * p.0);
            r * r
        })
        .sum();
    let dof = usable.len() - 2;
    let half_width = if dof == 0 {
        0.0
    } else {
        let se_slope = (ss_res / dof as f64 / sxx).sqrt();
        let t = StudentsT::new(0.0, 1.0, dof as f64)
            .map(|d| d.inverse_cdf(0.975))
            .unwrap_or(1.96);
        t * se_slope
    };
    FitOutcome::Fitted(RateFit {
        slope,
        half_width,
        points_used: usable.len(),
        points_dropped: dropped,
    })
}

/// Run a full horizon sweep with common random numbers: all horizons are
/// prefixes of one shared path ensemble, `E[H_T]` comes from the Riccati
/// closed form, and gaps are estimated from per-path differences.
pub fn run_experiment(
    model: &QtsmModel,
    pair: &UtilityPair,
    cfg: &ExperimentConfig,
) -> Result<TurnpikeReport> {
    if cfg.tgrid.len() < 5 {
        return Err(Error::Refused(format!(
            "horizon grid needs at least 5 points, got {}",
            cfg.tgrid.len()
        )));
    }
    if !(cfg.x > 0.0) {
        return Err(Error::Domain(format!("wealth must be positive, got {}", cfg.x)));
    }
    let q = pair.q();
    let alpha = pair.theoretical_alpha(cfg.sharing_rate)?;
    let theory = theoretical_exponent(pair, cfg.sharing_rate)?;
    let exponent_is_supremum =
        matches!(pair.general.kind(), UtilityKind::LinearSharing { .. });

    // Standing assumptions for both moment exponents in play.
    let validation = model.validate(&[q, 1.0 + alpha]);
    if !validation.passed() {
        return Err(Error::Refused(format!(
            "model fails standing assumptions:\n{validation}"
        )));
    }

    // Closed-form abscissa and the positive-decay gate.
    let mut eh = Vec::with_capacity(cfg.tgrid.len());
    for &t in &cfg.tgrid {
        eh.push(bond_price_with(model, t, &cfg.y0, cfg.riccati_steps_per_unit)?);
    }
    let decay = decay_slope(&cfg.tgrid, &eh);
    if decay <= 0.0 {
        return Err(Error::Refused(format!(
            "bond prices do not decay over the horizon grid (tail slope {decay:.3e}); \
             rate experiments need E[H_T] -> 0"
        )));
    }

    let degenerate = pair.general == pair.reference;

    // One shared simulation; horizons are checkpoints.
    let t_max = *cfg.tgrid.last().unwrap();
    let grid = SimGrid::per_unit(t_max, cfg.nsteps_per_unit)?;
    let spec = SimSpec::physical(
        model,
        grid,
        cfg.y0.clone(),
        cfg.tgrid.clone(),
        cfg.npaths,
        cfg.seed,
    );
    let sim = crate::montecarlo::simulate(&spec)?;

    let reference_norm = pair.normalized_reference()?;
    let want = |c: Component| cfg.components.contains(&c);

    let mut rows: Vec<GapRow> = Vec::with_capacity(cfg.tgrid.len());
    let mut hd_running_min = f64::INFINITY;
    let mut incomplete = None;

    for (i, funcs) in sim.sets.iter().enumerate() {
        let step = (|| -> Result<GapRow> {
            let cal1 = find_lambda_hat(&pair.general, funcs, cfg.x)?;
            let cal2 = find_lambda_hat(&pair.reference, funcs, cfg.x)?;
            let diffs = difference_samples(
                &pair.general,
                &cal1,
                &pair.reference,
                &cal2,
                model,
                funcs,
                &cfg.y0,
            )?;
            let myopic = want(Component::Myopic)
                .then(|| diffs.myopic_gap(model, &cfg.y0))
                .transpose()?;
            let hedging = want(Component::Hedging)
                .then(|| diffs.hedging_gap())
                .transpose()?;
            let wealth = want(Component::WealthGap)
                .then(|| diffs.wealth_gap())
                .transpose()?;
            let sup_proportion = if want(Component::Proportions) {
                let xgrid = cfg
                    .xgrid
                    .clone()
                    .unwrap_or_else(|| crate::utility::log_spaced(cfg.x / 10.0, cfg.x * 10.0, 7));
                Some(sup_proportion_gap(model, pair, funcs, &xgrid, &cfg.y0)?)
            } else {
                None
            };
            hd_running_min =
                hd_running_min.min(signed_hd(&pair.general, &reference_norm, funcs, &cal1)?);
            Ok(GapRow {
                horizon: funcs.horizon,
                eh: eh[i],
                myopic,
                hedging,
                wealth,
                sup_proportion,
            })
        })();
        match step {
            Ok(row) => rows.push(row),
            Err(e) => {
                incomplete = Some(format!("horizon {}: {e}", cfg.tgrid[i]));
                break;
            }
        }
    }

    let fit_for = |extract: &dyn Fn(&GapRow) -> Option<McEstimate>| -> Option<FitOutcome> {
        let points: Vec<(f64, McEstimate)> = rows
            .iter()
            .filter_map(|r| extract(r).map(|g| (r.eh, g)))
            .collect();
        if points.is_empty() {
            return None;
        }
        if degenerate {
            return Some(FitOutcome::Degenerate {
                reason: "general and reference utilities are identical".into(),
            });
        }
        Some(fit_rate(&points))
    };

    let fit_myopic = fit_for(&|r| r.myopic);
    let fit_hedging = fit_for(&|r| r.hedging);
    let fit_wealth = fit_for(&|r| r.wealth);
    let fit_proportions = fit_for(&|r| r.sup_proportion.as_ref().map(|(_, g)| *g));

    Ok(TurnpikeReport {
        rows,
        theoretical_exponent: theory,
        exponent_is_supremum,
        fit_myopic,
        fit_hedging,
        fit_wealth,
        fit_proportions,
        eh_decay_slope: decay,
        hd_running_min,
        incomplete,
    })
}

/// Supremum over a wealth grid of the proportion-gap norm
/// `|pi_1(x)/x - pi_2(x)/x|`, with the multiplier recalibrated at every
/// wealth level on the shared ensemble.
pub fn sup_proportion_gap(
    model: &QtsmModel,
    pair: &UtilityPair,
    funcs: &crate::montecarlo::FunctionalsSet,
    xgrid: &[f64],
    y0: &DVector<f64>,
) -> Result<(f64, McEstimate)> {
    if xgrid.is_empty() {
        return Err(Error::Domain("wealth grid is empty".into()));
    }
    let mut best: Option<(f64, McEstimate)> = None;
    for &x in xgrid {
        let cal1 = find_lambda_hat(&pair.general, funcs, x)?;
        let cal2 = find_lambda_hat(&pair.reference, funcs, x)?;
        let diffs = difference_samples(
            &pair.general,
            &cal1,
            &pair.reference,
            &cal2,
            model,
            funcs,
            y0,
        )?;
        let total = diffs.total_gap(model, y0)?;
        let prop = McEstimate {
            mean: total.mean / x,
            se: total.se / x,
            npaths: total.npaths,
        };
        if best.as_ref().is_none_or(|(_, b)| prop.mean > b.mean) {
            best = Some((x, prop));
        }
    }
    Ok(best.unwrap())
}

/// Tail decay rate of `-log eh` per unit horizon.
fn decay_slope(tgrid: &[f64], eh: &[f64]) -> f64 {
    let mut slopes = Vec::new();
    for i in 0..tgrid.len() - 1 {
        slopes.push(-(eh[i + 1].ln() - eh[i].ln()) / (tgrid[i + 1] - tgrid[i]));
    }
    let tail = &slopes[slopes.len() / 2..];
    tail.iter().sum::<f64>() / tail.len() as f64
}

impl TurnpikeReport {
    /// CSV rows `(T, component, gap, se, eh)`.
    pub fn write_report_csv<W: Write>(&self, out: &mut W) -> Result<()> {
        writeln!(out, "T,component,gap,se,eh")?;
        for row in &self.rows {
            let mut put = |name: &str, g: &McEstimate| -> Result<()> {
                writeln!(
                    out,
                    "{},{name},{},{},{}",
                    fmt_f64(row.horizon),
                    fmt_f64(g.mean),
                    fmt_f64(g.se),
                    fmt_f64(row.eh)
                )?;
                Ok(())
            };
            if let Some(g) = &row.myopic {
                put("myopic", g)?;
            }
            if let Some(g) = &row.hedging {
                put("hedging", g)?;
            }
            if let Some(g) = &row.wealth {
                put("wealth_gap", g)?;
            }
            if let Some((x, g)) = &row.sup_proportion {
                writeln!(
                    out,
                    "{},proportions@x={},{},{},{}",
                    fmt_f64(row.horizon),
                    fmt_f64(*x),
                    fmt_f64(g.mean),
                    fmt_f64(g.se),
                    fmt_f64(row.eh)
                )?;
            }
        }
        Ok(())
    }

    /// CSV rows `(component, slope, half_width, theory, used, dropped, verdict)`.
    pub fn write_rates_csv<W: Write>(&self, out: &mut W) -> Result<()> {
        writeln!(
            out,
            "component,slope,half_width,theory,points_used,points_dropped,verdict"
        )?;
        let mut put = |name: &str, fit: &Option<FitOutcome>| -> Result<()> {
            if let Some(outcome) = fit {
                match outcome {
                    FitOutcome::Fitted(f) => writeln!(
                        out,
                        "{name},{},{},{},{},{},{}",
                        fmt_f64(f.slope),
                        fmt_f64(f.half_width),
                        fmt_f64(self.theoretical_exponent),
                        f.points_used,
                        f.points_dropped,
                        self.verdict_for(outcome)
                    )?,
                    FitOutcome::Degenerate { .. } | FitOutcome::InsufficientSignal { .. } => {
                        writeln!(
                            out,
                            "{name},,,{},0,0,{}",
                            fmt_f64(self.theoretical_exponent),
                            self.verdict_for(outcome)
                        )?
                    }
                }
            }
            Ok(())
        };
        put("myopic", &self.fit_myopic)?;
        put("hedging", &self.fit_hedging)?;
        put("wealth_gap", &self.fit_wealth)?;
        put("proportions", &self.fit_proportions)?;
        Ok(())
    }

    /// Verdict string for one fit against the theoretical exponent. The
    /// theory gives upper bounds, so decisively steeper decay is flagged
    /// rather than failed.
    pub fn verdict_for(&self, fit: &FitOutcome) -> String {
        match fit {
            FitOutcome::Degenerate { .. } => "degenerate".into(),
            FitOutcome::InsufficientSignal { .. } => "insufficient-signal".into(),
            FitOutcome::Fitted(f) => {
                let lo = self.theoretical_exponent - 0.2;
                let hi = self.theoretical_exponent + 0.2;
                if f.slope >= lo && f.slope <= hi {
                    "PASS".into()
                } else if f.slope > hi {
                    "STEEPER".into()
                } else {
                    "FAIL".into()
                }
            }
        }
    }

    pub fn summary_line(&self) -> String {
        let describe = |fit: &Option<FitOutcome>| -> String {
            match fit {
                None => "-".into(),
                Some(FitOutcome::Fitted(f)) => format!("{:.4}±{:.4}", f.slope, f.half_width),
                Some(FitOutcome::Degenerate { .. }) => "degenerate".into(),
                Some(FitOutcome::InsufficientSignal { .. }) => "insufficient-signal".into(),
            }
        };
        let verdict = match &self.fit_myopic {
            Some(f) => self.verdict_for(f),
            None => match &self.fit_wealth {
                Some(f) => self.verdict_for(f),
                None => "-".into(),
            },
        };
        format!(
            "slope={}, hedging={}, wealth={}, theory={:.4}{}, verdict={verdict}",
            describe(&self.fit_myopic),
            describe(&self.fit_hedging),
            describe(&self.fit_wealth),
            self.theoretical_exponent,
            if self.exponent_is_supremum { " (supremum)" } else { "" },
        )
    }
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::utility::UtilitySpec;
    use approx::assert_relative_eq;

    fn pareto_pair() -> UtilityPair {
        UtilityPair::new(
            UtilitySpec::pareto(vec![0.5, 0.5], vec![-2.0, -1.0]).unwrap(),
            UtilitySpec::power(-1.0).unwrap(),
        )
        .unwrap()
    }

    #[test]
    fn exponent_examples() {
        // alpha = 0 gives exponent 1
        let same = UtilityPair::new(
            UtilitySpec::power(-1.0).unwrap(),
            UtilitySpec::power(-1.0).unwrap(),
        )
        .unwrap();
        assert_relative_eq!(theoretical_exponent(&same, None).unwrap(), 1.0);

        // Pareto with gamma (3, 2): exponent 1/3, consistent with the
        // generic 1 - alpha/(q-1) formula.
        let pair = pareto_pair();
        let e = theoretical_exponent(&pair, None).unwrap();
        assert_relative_eq!(e, 1.0 / 3.0, max_relative = 1e-14);
        let alpha = pair.theoretical_alpha(None).unwrap();
        let generic = 1.0 - alpha / (pair.q() - 1.0);
        assert_relative_eq!(e, generic, max_relative = 1e-14);
    }

    #[test]
    fn exponent_domain_error() {
        // general q1 < reference q makes alpha fall outside (q-1, 0]
        let pair = UtilityPair::new(
            UtilitySpec::power(-0.5).unwrap(),
            UtilitySpec::power(-2.0).unwrap(),
        )
        .unwrap();
        assert!(theoretical_exponent(&pair, None).is_err());
    }

    #[test]
    fn linear_sharing_supremum() {
        let pair = UtilityPair::new(
            UtilitySpec::linear_sharing_weights(vec![1.0, 1.0], vec![-1.5, -1.0]).unwrap(),
            UtilitySpec::power(-1.0).unwrap(),
        )
        .unwrap();
        // gamma pair (2.5, 2): supremum min(1, 0.5)
        assert_relative_eq!(
            theoretical_exponent(&pair, Some(0.75)).unwrap(),
            0.5,
            max_relative = 1e-14
        );
    }

    #[test]
    fn fit_rate_exact_power_law() {
        let points: Vec<(f64, McEstimate)> = (1..=8)
            .map(|i| {
                let eh = 0.9_f64.powi(i);
                (
                    eh,
                    McEstimate {
                        mean: 2.5 * eh.powf(0.7),
                        se: 1e-12,
                        npaths: 100,
                    },
                )
            })
            .collect();
        match fit_rate(&points) {
            FitOutcome::Fitted(f) => {
                assert_relative_eq!(f.slope, 0.7, max_relative = 1e-9);
                assert!(f.half_width < 1e-6);
            }
            other => panic!("expected fit, got {other:?}"),
        }
    }

    #[test]
    fn fit_rate_with_noise_recovers_slope() {
        // 5% multiplicative noise from a fixed pseudo-random pattern.
        let noise = [1.03, 0.97, 1.05, 0.95, 1.02, 0.98, 1.04, 0.96];
        let points: Vec<(f64, McEstimate)> = (0..8)
            .map(|i| {
                let eh = 0.85_f64.powi(i as i32 + 1);
                (
                    eh,
                    McEstimate {
                        mean: 2.5 * eh.powf(0.7) * noise[i],
                        se: 0.01 * eh.powf(0.7),
                        npaths: 100,
                    },
                )
            })
            .collect();
        match fit_rate(&points) {
            FitOutcome::Fitted(f) => {
                assert!((f.slope - 0.7).abs() < 0.1, "slope {} too far", f.slope)
            }
            other => panic!("expected fit, got {other:?}"),
        }
    }

    #[test]
    fn fit_rate_noise_floor() {
        let points: Vec<(f64, McEstimate)> = (1..=8)
            .map(|i| {
                (
                    0.9_f64.powi(i),
                    McEstimate {
                        mean: 1e-6,
                        se: 1e-3,
                        npaths: 100,
                    },
                )
            })
            .collect();
        assert!(matches!(
            fit_rate(&points),
            FitOutcome::InsufficientSignal { .. }
        ));
    }

    #[test]
    fn fit_rate_all_zero_is_degenerate() {
        let points: Vec<(f64, McEstimate)> = (1..=6)
            .map(|i| {
                (
                    0.9_f64.powi(i),
                    McEstimate {
                        mean: 0.0,
                        se: 0.0,
                        npaths: 10,
                    },
                )
            })
            .collect();
        assert!(matches!(fit_rate(&points), FitOutcome::Degenerate { .. }));
    }
}
