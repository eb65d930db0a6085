//! Evaluation, risk modelling and analysis machinery for the M6 financial
//! forecasting competition.
//!
//! The crate is organised by concern:
//!
//! * [`market_data`]: price ingestion, forward fill and return primitives.
//! * [`submission`]: the 100-row forecast/decision file, validation and
//!   carry-forward.
//! * [`scoring`]: quintile outcomes, RPS, portfolio returns, IR and the
//!   leaderboards.
//! * [`volatility`]: range-based variance estimators, exponentially weighted
//!   realised variance features and the pooled HEXP regression.
//! * [`factor_risk`]: the layered factor model with scalar BEKK dynamics and
//!   the (ω, γ) grid search.
//! * [`portfolio_opt`]: Sharpe-ratio optimisation, linear-Bayes alphas and
//!   reverse optimisation.
//! * [`analysis`]: crowd combination, connection coefficient, calibration and
//!   strategy metrics.
//! * [`universe`]: per-sector clustering and proportional sampling of stocks.
//!
//! Batch loops run on rayon when the `parallel` feature is enabled (the
//! default); see [`exec`].

// `!(x > y)` is used on purpose so that NaN falls into the rejecting branch.
#![allow(clippy::neg_cmp_op_on_partial_ord, clippy::needless_range_loop)]

pub mod analysis;
pub mod exec;
pub mod factor_risk;
pub mod market_data;
pub mod portfolio_opt;
pub mod scoring;
pub mod stats;
pub mod submission;
pub mod universe;
pub mod volatility;

pub use exec::Execution;
