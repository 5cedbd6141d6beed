//! Optimal feedback portfolio strategies in quadratic term structure models.
//!
//! The crate simulates a Gaussian factor market where the short rate is
//! quadratic and the market price of risk affine in an Ornstein-Uhlenbeck
//! factor, computes optimal feedback portfolios for general utilities via
//! martingale duality, and measures how fast those strategies converge to
//! their CRRA reference as the horizon grows.
//!
//! Layout:
//! - [`model`]: market coefficients and standing-assumption validation
//! - [`utility`]: inverse marginal utilities for power, log, and collective
//!   (Pareto / linear sharing) preferences
//! - [`riccati`]: terminal-value matrix Riccati and companion linear ODEs,
//!   long-horizon limits
//! - [`pricing`]: bond prices, `E[H_T^gamma]` closed forms, CRRA feedback,
//!   myopic-measure drift coefficients
//! - [`montecarlo`]: exact OU path simulation and state-price functionals
//! - [`portfolio`]: multiplier calibration and myopic/hedging feedback
//!   estimators
//! - [`turnpike`]: horizon sweeps, gap regressions, rate verdicts
//! - [`config`], [`report`]: file formats

pub mod config;
pub mod error;
pub mod linalg;
pub mod model;
pub mod montecarlo;
pub mod portfolio;
pub mod pricing;
pub mod report;
pub mod riccati;
pub mod turnpike;
pub mod utility;

pub use error::{Error, Result};
