//! Range-based variance estimators, exponentially weighted realised variance
//! features and the pooled HEXP regression.
//!
//! All variances are daily and in squared log-return units.

use chrono::NaiveDate;
use nalgebra::{DMatrix, DVector};
use serde::{Deserialize, Serialize};
use thiserror::Error;

use crate::exec::Execution;
use crate::market_data::{LogDayComponents, PricePanel};

/// Centres of mass, in trading days, of the four ExpRV features.
pub const COMS: [f64; 4] = [1.0, 5.0, 25.0, 125.0];
/// Lower bound applied to variance forecasts.
pub const VARIANCE_FLOOR: f64 = 1e-10;
pub const REGRESSOR_NAMES: [&str; 5] = ["ExpRV1", "ExpRV5", "ExpRV25", "ExpRV125", "ExpGlRV5"];

const FOUR_LN2: f64 = 4.0 * std::f64::consts::LN_2;

#[derive(Debug, Error)]
pub enum VolatilityError {
    #[error("estimator needs at least {needed} observations, got {got}")]
    TooShort { needed: usize, got: usize },
    #[error("need at least {needed} stacked rows for the HEXP fit, got {got}")]
    TooFewRows { needed: usize, got: usize },
    #[error("rank-deficient HEXP design: column {column} is collinear with the others")]
    RankDeficient { column: &'static str },
    #[error("unsupported horizon {0} (expected 1 or 20)")]
    Horizon(usize),
}

fn need(xs: &[LogDayComponents], n: usize) -> Result<(), VolatilityError> {
    if xs.len() < n {
        Err(VolatilityError::TooShort {
            needed: n,
            got: xs.len(),
        })
    } else {
        Ok(())
    }
}

fn parkinson_term(x: &LogDayComponents) -> f64 {
    (x.u - x.d) * (x.u - x.d) / FOUR_LN2
}

fn rs_term(x: &LogDayComponents) -> f64 {
    x.u * (x.u - x.c) + x.d * (x.d - x.c)
}

/// Parkinson high-low estimator averaged over the window.
pub fn parkinson_var(window: &[LogDayComponents]) -> Result<f64, VolatilityError> {
    need(window, 1)?;
    Ok(window.iter().map(parkinson_term).sum::<f64>() / window.len() as f64)
}

/// Rogers-Satchell drift-independent estimator averaged over the window.
pub fn rogers_satchell_var(window: &[LogDayComponents]) -> Result<f64, VolatilityError> {
    need(window, 1)?;
    Ok(window.iter().map(rs_term).sum::<f64>() / window.len() as f64)
}

/// Single-day Garman-Klass variance, clamped at zero.
pub fn garman_klass_var(x: &LogDayComponents) -> f64 {
    let v = x.o * x.o - 0.383 * x.c * x.c + 1.364 * parkinson_term(x) + 0.019 * rs_term(x);
    v.max(0.0)
}

/// Weight on the close-to-open variance in the Yang-Zhang combination.
pub fn yang_zhang_k(t: usize) -> f64 {
    let t = t as f64;
    0.34 / (1.34 + (t + 1.0) / (t - 1.0))
}

/// Yang-Zhang variance over the window (`T >= 2`).
pub fn yang_zhang_var(window: &[LogDayComponents]) -> Result<f64, VolatilityError> {
    need(window, 2)?;
    let mut acc = RunningYangZhang::default();
    for x in window {
        acc.push(x);
    }
    Ok(acc.variance().expect("T >= 2"))
}

/// Yang-Zhang estimator over an expanding window, updated in O(1).
#[derive(Debug, Clone, Copy, Default)]
pub struct RunningYangZhang {
    n: usize,
    shift_o: f64,
    shift_c: f64,
    sum_o: f64,
    sum_o2: f64,
    sum_c: f64,
    sum_c2: f64,
    sum_rs: f64,
}

impl RunningYangZhang {
    pub fn push(&mut self, x: &LogDayComponents) {
        if self.n == 0 {
            // shifted sums keep the variance accurate when |mean| >> sd
            self.shift_o = x.o;
            self.shift_c = x.c;
        }
        let (o, c) = (x.o - self.shift_o, x.c - self.shift_c);
        self.n += 1;
        self.sum_o += o;
        self.sum_o2 += o * o;
        self.sum_c += c;
        self.sum_c2 += c * c;
        self.sum_rs += rs_term(x);
    }

    pub fn len(&self) -> usize {
        self.n
    }

    pub fn is_empty(&self) -> bool {
        self.n == 0
    }

    pub fn variance(&self) -> Option<f64> {
        if self.n < 2 {
            return None;
        }
        let t = self.n as f64;
        let vo = ((self.sum_o2 - self.sum_o * self.sum_o / t) / (t - 1.0)).max(0.0);
        let vc = ((self.sum_c2 - self.sum_c * self.sum_c / t) / (t - 1.0)).max(0.0);
        let vrs = self.sum_rs / t;
        let k = yang_zhang_k(self.n);
        Some(vo + k * vc + (1.0 - k) * vrs)
    }
}

/// Decay rate for a centre of mass: `ln(1 + 1/com)`.
pub fn exp_rv_lambda(com: f64) -> f64 {
    (1.0 / com).ln_1p()
}

/// Exponentially weighted mean of `series` (oldest first) with weights
/// renormalised over the available history; the last observation carries the
/// largest weight.
pub fn exp_rv(series: &[f64], com: f64) -> Result<f64, VolatilityError> {
    if series.is_empty() {
        return Err(VolatilityError::TooShort { needed: 1, got: 0 });
    }
    Ok(*exp_rv_path(series, com).last().expect("nonempty"))
}

/// [`exp_rv`] evaluated at every prefix of `series`.
pub fn exp_rv_path(series: &[f64], com: f64) -> Vec<f64> {
    let decay = (-exp_rv_lambda(com)).exp();
    let (mut num, mut den) = (0.0, 0.0);
    series
        .iter()
        .map(|&v| {
            num = decay * num + v;
            den = decay * den + 1.0;
            num / den
        })
        .collect()
}

/// Regressors for one asset-day.
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct VarianceFeatures {
    pub exp_rv: [f64; 4],
    pub global_rv: f64,
    pub long_run_rv: f64,
}

impl VarianceFeatures {
    /// The five HEXP regressors, each minus the long-run variance.
    pub fn demeaned(&self) -> [f64; 5] {
        let lr = self.long_run_rv;
        [
            self.exp_rv[0] - lr,
            self.exp_rv[1] - lr,
            self.exp_rv[2] - lr,
            self.exp_rv[3] - lr,
            self.global_rv - lr,
        ]
    }
}

/// Mean over assets of `ExpRV5 / long_run`, rescaled by each asset's own
/// long-run variance. Assets with a zero long-run variance do not enter the
/// average. Returns `None` when no asset contributes.
pub fn global_rv(exp_rv5_and_long_run: &[(f64, f64)]) -> Option<Vec<f64>> {
    let m = mean_ratio(exp_rv5_and_long_run)?;
    Some(exp_rv5_and_long_run.iter().map(|(_, lr)| m * lr).collect())
}

fn mean_ratio(pairs: &[(f64, f64)]) -> Option<f64> {
    let ratios: Vec<f64> = pairs
        .iter()
        .filter(|(_, lr)| *lr > 0.0)
        .map(|(e, lr)| e / lr)
        .collect();
    if ratios.is_empty() {
        None
    } else {
        Some(ratios.iter().sum::<f64>() / ratios.len() as f64)
    }
}

/// Per-asset daily quantities on the panel calendar.
#[derive(Debug, Clone)]
pub struct AssetVolatility {
    pub ticker: String,
    /// Calendar index of the first day with log components.
    pub start: usize,
    pub components: Vec<LogDayComponents>,
    pub gk: Vec<f64>,
    pub exp_rv: Vec<[f64; 4]>,
    pub long_run: Vec<f64>,
}

impl AssetVolatility {
    pub fn from_components(ticker: &str, start: usize, components: Vec<LogDayComponents>) -> Self {
        let gk: Vec<f64> = components.iter().map(garman_klass_var).collect();
        let paths: Vec<Vec<f64>> = COMS.iter().map(|&c| exp_rv_path(&gk, c)).collect();
        let exp_rv = (0..gk.len())
            .map(|t| [paths[0][t], paths[1][t], paths[2][t], paths[3][t]])
            .collect();
        let mut acc = RunningYangZhang::default();
        let long_run = components
            .iter()
            .map(|x| {
                acc.push(x);
                acc.variance().unwrap_or(f64::NAN)
            })
            .collect();
        AssetVolatility {
            ticker: ticker.to_string(),
            start,
            components,
            gk,
            exp_rv,
            long_run,
        }
    }

    fn local(&self, day: usize) -> Option<usize> {
        day.checked_sub(self.start).filter(|&i| i < self.gk.len())
    }
}

/// Volatility state for a whole panel, including the universe factor.
#[derive(Debug, Clone)]
pub struct VolatilityPanel {
    pub calendar: Vec<NaiveDate>,
    pub assets: Vec<AssetVolatility>,
    /// Days of components an asset needs before its features are used.
    pub min_history: usize,
    /// Universe mean of `ExpRV5 / long_run` per calendar day (NaN if none).
    pub global_ratio: Vec<f64>,
}

impl VolatilityPanel {
    /// Computes features for every asset of `panel` (per asset in parallel).
    pub fn from_prices(panel: &PricePanel, min_history: usize, exec: Execution) -> Self {
        let assets = exec.map_range(panel.n_assets(), |i| {
            let off = panel.offsets[i];
            let rows = &panel.histories[i].rows;
            let comps: Vec<LogDayComponents> = rows
                .windows(2)
                .map(|w| LogDayComponents::from_prices(w[0].close, &w[1]))
                .collect();
            AssetVolatility::from_components(&panel.tickers[i], off + 1, comps)
        });
        Self::from_assets(panel.calendar.clone(), assets, min_history)
    }

    pub fn from_assets(calendar: Vec<NaiveDate>, assets: Vec<AssetVolatility>, min_history: usize) -> Self {
        let min_history = min_history.max(2);
        let global_ratio = (0..calendar.len())
            .map(|day| {
                let pairs: Vec<(f64, f64)> = assets
                    .iter()
                    .filter_map(|a| {
                        let i = a.local(day).filter(|&i| i + 1 >= min_history)?;
                        Some((a.exp_rv[i][1], a.long_run[i]))
                    })
                    .collect();
                mean_ratio(&pairs).unwrap_or(f64::NAN)
            })
            .collect();
        VolatilityPanel {
            calendar,
            assets,
            min_history,
            global_ratio,
        }
    }

    pub fn n_assets(&self) -> usize {
        self.assets.len()
    }

    /// Features of asset `a` at calendar day `day`, once it has
    /// `min_history` days of components.
    pub fn features(&self, a: usize, day: usize) -> Option<VarianceFeatures> {
        let asset = &self.assets[a];
        let i = asset.local(day).filter(|&i| i + 1 >= self.min_history)?;
        let ratio = self.global_ratio[day];
        if !ratio.is_finite() {
            return None;
        }
        let lr = asset.long_run[i];
        Some(VarianceFeatures {
            exp_rv: asset.exp_rv[i],
            global_rv: ratio * lr,
            long_run_rv: lr,
        })
    }

    /// Realised variance over days `day+1 ..= day+h`: Garman-Klass for
    /// `h = 1`, Yang-Zhang otherwise.
    pub fn realized(&self, a: usize, day: usize, h: usize) -> Option<f64> {
        let asset = &self.assets[a];
        let first = asset.local(day + 1)?;
        let last = asset.local(day + h)?;
        if h == 1 {
            Some(asset.gk[first])
        } else {
            yang_zhang_var(&asset.components[first..=last]).ok()
        }
    }

    /// Stacked regression rows for all asset-days `t` with `t + h <= last_day`.
    pub fn hexp_rows(&self, horizon: usize, last_day: usize, exec: Execution) -> Vec<HexpRow> {
        let per_asset = exec.map_range(self.n_assets(), |a| {
            let mut rows = Vec::new();
            for day in 0..=last_day.saturating_sub(horizon) {
                if day + horizon > last_day {
                    break;
                }
                if let (Some(f), Some(v)) = (self.features(a, day), self.realized(a, day, horizon)) {
                    rows.push(HexpRow::new(&f, v));
                }
            }
            rows
        });
        per_asset.into_iter().flatten().collect()
    }
}

/// One stacked observation: demeaned regressors and the demeaned target.
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct HexpRow {
    pub x: [f64; 5],
    pub y: f64,
}

impl HexpRow {
    pub fn new(features: &VarianceFeatures, realized: f64) -> Self {
        HexpRow {
            x: features.demeaned(),
            y: realized - features.long_run_rv,
        }
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct HexpDiagnostics {
    pub n_obs: usize,
    pub residual_variance: f64,
    pub standard_errors: [f64; 5],
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct HexpModel {
    pub horizon: usize,
    pub kappa: [f64; 5],
    pub fit_date: Option<NaiveDate>,
    pub diagnostics: HexpDiagnostics,
}

/// JSON dump layout of a fitted model.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct HexpDump {
    pub horizon: usize,
    pub kappa: [f64; 5],
    pub fit_date: Option<NaiveDate>,
    pub n_obs: usize,
}

impl HexpModel {
    pub fn dump(&self) -> HexpDump {
        HexpDump {
            horizon: self.horizon,
            kappa: self.kappa,
            fit_date: self.fit_date,
            n_obs: self.diagnostics.n_obs,
        }
    }
}

/// Least squares without intercept on the stacked rows. Columns are scaled
/// to unit norm before a Householder QR; a column whose pivot falls below
/// `1e-10` of the largest is reported as collinear.
pub fn fit_hexp(
    rows: &[HexpRow],
    horizon: usize,
    fit_date: Option<NaiveDate>,
    min_rows: usize,
) -> Result<HexpModel, VolatilityError> {
    if horizon != 1 && horizon != 20 {
        return Err(VolatilityError::Horizon(horizon));
    }
    let n = rows.len();
    if n < min_rows.max(6) {
        return Err(VolatilityError::TooFewRows {
            needed: min_rows.max(6),
            got: n,
        });
    }
    let mut scale = [0.0f64; 5];
    for r in rows {
        for j in 0..5 {
            scale[j] += r.x[j] * r.x[j];
        }
    }
    for (j, s) in scale.iter_mut().enumerate() {
        *s = s.sqrt();
        if !(*s > 0.0) || !s.is_finite() {
            return Err(VolatilityError::RankDeficient {
                column: REGRESSOR_NAMES[j],
            });
        }
    }
    let x = DMatrix::from_fn(n, 5, |i, j| rows[i].x[j] / scale[j]);
    let mut y = DVector::from_iterator(n, rows.iter().map(|r| r.y));
    let y_orig = y.clone();
    let qr = x.clone().qr();
    let r = qr.r();
    let rmax = (0..5).map(|j| r[(j, j)].abs()).fold(0.0, f64::max);
    for j in 0..5 {
        if r[(j, j)].abs() <= 1e-10 * rmax {
            return Err(VolatilityError::RankDeficient {
                column: REGRESSOR_NAMES[j],
            });
        }
    }
    qr.q_tr_mul(&mut y);
    let qty = y.rows(0, 5).into_owned();
    let beta = r
        .solve_upper_triangular(&qty)
        .ok_or(VolatilityError::RankDeficient {
            column: REGRESSOR_NAMES[4],
        })?;
    let resid = &y_orig - &x * &beta;
    let rss = resid.norm_squared();
    let residual_variance = rss / (n - 5) as f64;
    let rinv = r
        .try_inverse()
        .ok_or(VolatilityError::RankDeficient {
            column: REGRESSOR_NAMES[4],
        })?;
    let cov = &rinv * rinv.transpose();
    let mut kappa = [0.0; 5];
    let mut standard_errors = [0.0; 5];
    for j in 0..5 {
        kappa[j] = beta[j] / scale[j];
        standard_errors[j] = (residual_variance * cov[(j, j)]).sqrt() / scale[j];
    }
    Ok(HexpModel {
        horizon,
        kappa,
        fit_date,
        diagnostics: HexpDiagnostics {
            n_obs: n,
            residual_variance,
            standard_errors,
        },
    })
}

/// `long_run + κ·(demeaned regressors)`, floored at [`VARIANCE_FLOOR`].
pub fn forecast_variance(model: &HexpModel, features: &VarianceFeatures) -> f64 {
    let x = features.demeaned();
    let pred = features.long_run_rv + (0..5).map(|j| model.kappa[j] * x[j]).sum::<f64>();
    pred.max(VARIANCE_FLOOR)
}
