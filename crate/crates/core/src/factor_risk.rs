//! Layered factor model on standardized returns with scalar, covariance
//! targeted BEKK dynamics, plus the (ω, γ) grid search.
//!
//! Returns are first divided by their one-day volatility forecasts. Factor
//! returns are fixed linear combinations of those standardized returns. Each
//! level of factors is regressed out in turn with time-varying loadings; the
//! residuals are re-standardized before the next level. What is left after the
//! last level gets its own scalar BEKK variance. The asset covariance is then
//! `D (B Σ_F B' + Ω) D` with `D` the twenty-day volatility forecasts.

use std::collections::BTreeMap;

use chrono::NaiveDate;
use log::{info, warn};
use nalgebra::{Cholesky, DMatrix, DVector, Dyn, SymmetricEigen};
use serde::{Deserialize, Serialize};
use thiserror::Error;

use crate::exec::Execution;
use crate::market_data::PricePanel;
use crate::volatility::{fit_hexp, forecast_variance, HexpModel, VolatilityError, VolatilityPanel};

pub const DEFAULT_FACTOR_CONFIG: &str = include_str!("../config/factors.toml");
pub const OMEGA_GRID: [f64; 4] = [0.030, 0.020, 0.010, 0.005];
pub const GAMMA_GRID: [f64; 3] = [0.0025, 0.0050, 0.0075];
/// Eigenvalues below this trigger the PSD repair.
pub const PSD_TOLERANCE: f64 = 1e-10;

const LN_2PI: f64 = 1.8378770664093453;

#[derive(Debug, Error)]
pub enum FactorRiskError {
    #[error("invalid BEKK parameters: omega={omega}, gamma={gamma}")]
    Params { omega: f64, gamma: f64 },
    #[error("factor config: {0}")]
    Config(String),
    #[error("factor {0} is degenerate (too few observations or zero variance)")]
    DegenerateFactor(String),
    #[error("no asset has enough history to enter the model")]
    NoAssets,
    #[error("non-finite entry in assembled covariance")]
    NonFinite,
    #[error("covariance is not positive definite")]
    NotPositiveDefinite,
    #[error("expected {expected} entries, got {got}")]
    Dimension { expected: usize, got: usize },
    #[error("every grid cell failed")]
    GridFailed,
    #[error("not enough history: {0}")]
    History(String),
    #[error(transparent)]
    Volatility(#[from] VolatilityError),
}

/// One factor: a fixed combination of standardized asset returns.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct FactorSpec {
    pub name: String,
    pub level: u8,
    pub weights: BTreeMap<String, f64>,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct FactorConfig {
    pub version: u32,
    #[serde(rename = "factor")]
    pub factors: Vec<FactorSpec>,
}

impl FactorConfig {
    /// The shipped 19-factor definition.
    pub fn m6_default() -> Self {
        Self::from_toml(DEFAULT_FACTOR_CONFIG).expect("shipped factor config is valid")
    }

    pub fn from_toml(text: &str) -> Result<Self, FactorRiskError> {
        let cfg: FactorConfig = toml::from_str(text).map_err(|e| FactorRiskError::Config(e.to_string()))?;
        cfg.validated()
    }

    /// Checks the config and orders factors by level (stable).
    pub fn validated(mut self) -> Result<Self, FactorRiskError> {
        if self.version != 1 {
            return Err(FactorRiskError::Config(format!("unsupported version {}", self.version)));
        }
        if self.factors.is_empty() {
            return Err(FactorRiskError::Config("no factors defined".into()));
        }
        let mut names = std::collections::BTreeSet::new();
        for f in &self.factors {
            if !(1..=3).contains(&f.level) {
                return Err(FactorRiskError::Config(format!("{}: level must be 1, 2 or 3", f.name)));
            }
            if !names.insert(f.name.as_str()) {
                return Err(FactorRiskError::Config(format!("duplicate factor {}", f.name)));
            }
            if f.weights.is_empty() || f.weights.values().any(|w| !w.is_finite() || *w == 0.0) {
                return Err(FactorRiskError::Config(format!(
                    "{}: weights must be finite and nonzero",
                    f.name
                )));
            }
        }
        self.factors.sort_by_key(|f| f.level);
        Ok(self)
    }

    pub fn names(&self) -> Vec<String> {
        self.factors.iter().map(|f| f.name.clone()).collect()
    }
}

/// Scalar BEKK weights: `ω` on the target, `γ` on the last shock and
/// `1 − ω − γ` on the previous state.
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct BekkParams {
    pub omega: f64,
    pub gamma: f64,
}

impl BekkParams {
    pub fn new(omega: f64, gamma: f64) -> Result<Self, FactorRiskError> {
        let ok = (0.0..=1.0).contains(&omega) && (0.0..=1.0).contains(&gamma) && omega + gamma <= 1.0 + 1e-15;
        if ok {
            Ok(BekkParams { omega, gamma })
        } else {
            Err(FactorRiskError::Params { omega, gamma })
        }
    }

    pub fn persistence(&self) -> f64 {
        1.0 - self.omega - self.gamma
    }
}

/// Matrix BEKK recursion state.
#[derive(Debug, Clone, PartialEq)]
pub struct BekkState {
    pub params: BekkParams,
    pub sigma0: DMatrix<f64>,
    pub sigma: DMatrix<f64>,
}

impl BekkState {
    /// Starts the recursion at the target.
    pub fn new(params: BekkParams, sigma0: DMatrix<f64>) -> Self {
        BekkState {
            params,
            sigma: sigma0.clone(),
            sigma0,
        }
    }

    pub fn update(&mut self, e: &[f64]) {
        let BekkParams { omega, gamma } = self.params;
        let b = self.params.persistence();
        let k = self.sigma.nrows();
        for i in 0..k {
            for j in i..k {
                let v = omega * self.sigma0[(i, j)] + gamma * e[i] * e[j] + b * self.sigma[(i, j)];
                self.sigma[(i, j)] = v;
                self.sigma[(j, i)] = v;
            }
        }
    }
}

/// Functional form of [`BekkState::update`].
pub fn bekk_update(state: &BekkState, e: &[f64]) -> BekkState {
    let mut next = state.clone();
    next.update(e);
    next
}

/// Scalar recursion `ω σ0 + γ e² + (1 − ω − γ) σ`.
pub fn bekk_scalar_update(params: BekkParams, sigma0: f64, sigma: f64, e: f64) -> f64 {
    params.omega * sigma0 + params.gamma * e * e + params.persistence() * sigma
}

/// Volatility-standardized returns (days × assets, NaN where missing) and the
/// volatilities used to map back to return units.
#[derive(Debug, Clone, PartialEq)]
pub struct StandardizedPanel {
    pub dates: Vec<NaiveDate>,
    pub tickers: Vec<String>,
    pub z: Vec<Vec<f64>>,
    /// Daily volatility per asset for the forecast horizon.
    pub vol_scale: Vec<f64>,
}

impl StandardizedPanel {
    pub fn n_days(&self) -> usize {
        self.z.len()
    }

    pub fn n_assets(&self) -> usize {
        self.tickers.len()
    }

    /// First `n_days` rows with the given volatility scale.
    pub fn prefix(&self, n_days: usize, vol_scale: Vec<f64>) -> Self {
        StandardizedPanel {
            dates: self.dates[..n_days.min(self.dates.len())].to_vec(),
            tickers: self.tickers.clone(),
            z: self.z[..n_days].to_vec(),
            vol_scale,
        }
    }
}

/// `r / σ` elementwise; NaN propagates.
pub fn standardize_returns(returns: &[Vec<f64>], sigma: &[Vec<f64>]) -> Vec<Vec<f64>> {
    returns
        .iter()
        .zip(sigma)
        .map(|(r, s)| r.iter().zip(s).map(|(r, s)| r / s).collect())
        .collect()
}

/// Standardized panel as of calendar day `as_of`: both HEXP models are fitted
/// on data up to `as_of`, each day's return is divided by the in-sample
/// one-day forecast made the day before, and the volatility scale is the
/// twenty-day forecast at `as_of`.
pub fn standardize_at(
    prices: &PricePanel,
    vol: &VolatilityPanel,
    as_of: usize,
    min_rows: usize,
    exec: Execution,
) -> Result<(StandardizedPanel, HexpModel, HexpModel), FactorRiskError> {
    let date = prices.calendar.get(as_of).copied();
    let m1 = fit_hexp(&vol.hexp_rows(1, as_of, exec), 1, date, min_rows)?;
    let m20 = fit_hexp(&vol.hexp_rows(20, as_of, exec), 20, date, min_rows)?;
    let n = prices.n_assets();
    let cols = exec.map_range(n, |i| {
        (0..=as_of)
            .map(|t| {
                if t == 0 {
                    return f64::NAN;
                }
                match (prices.simple_return(i, t), vol.features(i, t - 1)) {
                    (Some(r), Some(f)) => r / forecast_variance(&m1, &f).sqrt(),
                    _ => f64::NAN,
                }
            })
            .collect::<Vec<f64>>()
    });
    let z = (0..=as_of).map(|t| cols.iter().map(|c| c[t]).collect()).collect();
    let vol_scale = (0..n)
        .map(|i| {
            vol.features(i, as_of)
                .map(|f| forecast_variance(&m20, &f).sqrt())
                .unwrap_or(f64::NAN)
        })
        .collect();
    Ok((
        StandardizedPanel {
            dates: prices.calendar[..=as_of].to_vec(),
            tickers: prices.tickers.clone(),
            z,
            vol_scale,
        },
        m1,
        m20,
    ))
}

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct FitOptions {
    /// Observations an asset needs to enter the model, and a factor needs to
    /// be usable.
    pub min_obs: usize,
}

impl Default for FitOptions {
    fn default() -> Self {
        FitOptions { min_obs: 60 }
    }
}

/// Daily factor returns (NaN where a leg has no data), standardized to mean
/// 0 and sd 1 over the days they are defined.
pub fn factor_returns(
    panel: &StandardizedPanel,
    spec: &FactorSpec,
    min_obs: usize,
) -> Result<Vec<f64>, FactorRiskError> {
    let cols: Vec<(usize, f64)> = spec
        .weights
        .iter()
        .filter_map(|(t, &w)| panel.tickers.iter().position(|x| x == t).map(|i| (i, w)))
        .collect();
    if cols.len() < spec.weights.len() {
        warn!(
            "factor {}: {} of {} constituents missing from the panel",
            spec.name,
            spec.weights.len() - cols.len(),
            spec.weights.len()
        );
    }
    let leg_total = |long: bool| -> f64 {
        spec.weights.values().filter(|w| (**w > 0.0) == long).sum()
    };
    let (long_total, short_total) = (leg_total(true), leg_total(false));
    let raw: Vec<f64> = panel
        .z
        .iter()
        .map(|row| {
            let mut value = 0.0;
            for (long, total) in [(true, long_total), (false, short_total)] {
                if total == 0.0 {
                    continue;
                }
                let (mut num, mut den) = (0.0, 0.0);
                for &(i, w) in cols.iter().filter(|(_, w)| (*w > 0.0) == long) {
                    if row[i].is_finite() {
                        num += w * row[i];
                        den += w;
                    }
                }
                if den == 0.0 {
                    return f64::NAN;
                }
                value += num / den * total;
            }
            value
        })
        .collect();
    let vals: Vec<f64> = raw.iter().copied().filter(|x| x.is_finite()).collect();
    if vals.len() < min_obs.max(2) {
        return Err(FactorRiskError::DegenerateFactor(spec.name.clone()));
    }
    let m = vals.iter().sum::<f64>() / vals.len() as f64;
    let sd = (vals.iter().map(|x| (x - m) * (x - m)).sum::<f64>() / (vals.len() - 1) as f64).sqrt();
    if !(sd > 1e-12) {
        return Err(FactorRiskError::DegenerateFactor(spec.name.clone()));
    }
    Ok(raw.iter().map(|x| (x - m) / sd).collect())
}

/// Result of regressing one level of factors out of the inputs.
#[derive(Debug, Clone)]
pub struct LayerFit {
    /// Loadings forecast for the day after the sample (assets × factors).
    pub beta: Vec<Vec<f64>>,
    pub intercept: Vec<f64>,
    /// Mean and sd used to re-standardize each asset's residuals; an sd of
    /// zero means nothing is left to explain.
    pub resid_mean: Vec<f64>,
    pub resid_sd: Vec<f64>,
    /// Re-standardized residuals (assets × days), NaN where undefined.
    pub next: Vec<Vec<f64>>,
}

fn sample_cov(rows: &[&[f64]]) -> DMatrix<f64> {
    let k = rows[0].len();
    let n = rows.len() as f64;
    let mut mean = vec![0.0; k];
    for r in rows {
        for j in 0..k {
            mean[j] += r[j] / n;
        }
    }
    let mut c = DMatrix::zeros(k, k);
    for r in rows {
        for i in 0..k {
            for j in i..k {
                c[(i, j)] += (r[i] - mean[i]) * (r[j] - mean[j]);
            }
        }
    }
    for i in 0..k {
        for j in i..k {
            c[(i, j)] /= n - 1.0;
            c[(j, i)] = c[(i, j)];
        }
    }
    c
}

/// Fits one level. `u` is assets × days, `g` days × factors (rows with any
/// NaN are skipped by every recursion).
pub fn fit_layer(
    u: &[Vec<f64>],
    g: &[Vec<f64>],
    names: &[String],
    params: BekkParams,
    min_obs: usize,
    exec: Execution,
) -> Result<LayerFit, FactorRiskError> {
    let k = names.len();
    let days: Vec<usize> = (0..g.len()).filter(|&t| g[t].iter().all(|x| x.is_finite())).collect();
    let degenerate = || FactorRiskError::DegenerateFactor(names.join("+"));
    if days.len() < min_obs.max(k + 2) {
        return Err(degenerate());
    }
    let rows: Vec<&[f64]> = days.iter().map(|&t| g[t].as_slice()).collect();
    let s0 = sample_cov(&rows);
    if s0.clone().cholesky().is_none() {
        return Err(degenerate());
    }
    // shared factor-covariance path: inverse of the state entering each day,
    // flattened row-major
    let mut state = BekkState::new(params, s0.clone());
    let mut inverses = Vec::with_capacity(days.len() * k * k);
    for &t in &days {
        let inv = state.sigma.clone().try_inverse().ok_or_else(degenerate)?;
        inverses.extend((0..k * k).map(|e| inv[(e / k, e % k)]));
        state.update(&g[t]);
    }
    let final_inv = state.sigma.clone().try_inverse().ok_or_else(degenerate)?;

    let t_len = g.len();
    let per_asset = exec.map(u, |ua| {
        let obs: Vec<usize> = (0..days.len()).filter(|&p| ua[days[p]].is_finite()).collect();
        if obs.len() < k + 2 {
            return (vec![0.0; k], 0.0, 0.0, 0.0, vec![f64::NAN; t_len]);
        }
        let n = obs.len() as f64;
        let mut gbar = vec![0.0; k];
        let mut ubar = 0.0;
        for &p in &obs {
            let t = days[p];
            ubar += ua[t] / n;
            for j in 0..k {
                gbar[j] += g[t][j] / n;
            }
        }
        let mut cgg = DMatrix::zeros(k, k);
        let mut cgu = DVector::zeros(k);
        for &p in &obs {
            let t = days[p];
            let du = ua[t] - ubar;
            for i in 0..k {
                let di = g[t][i] - gbar[i];
                cgu[i] += di * du;
                for j in 0..k {
                    cgg[(i, j)] += di * (g[t][j] - gbar[j]);
                }
            }
        }
        let b = match cgg.cholesky() {
            Some(ch) => ch.solve(&cgu),
            None => return (vec![0.0; k], 0.0, 0.0, 0.0, vec![f64::NAN; t_len]),
        };
        let a = ubar - (0..k).map(|j| b[j] * gbar[j]).sum::<f64>();
        let c0: Vec<f64> = (&s0 * &b).iter().copied().collect();
        let mut c = c0.clone();
        let mut resid = vec![f64::NAN; t_len];
        let bp = params.persistence();
        for (p, &t) in days.iter().enumerate() {
            if !ua[t].is_finite() {
                continue;
            }
            let inv = &inverses[p * k * k..(p + 1) * k * k];
            let mut fitted = 0.0;
            for i in 0..k {
                let beta_i: f64 = (0..k).map(|j| inv[i * k + j] * c[j]).sum();
                fitted += beta_i * g[t][i];
            }
            resid[t] = ua[t] - a - fitted;
            let du = ua[t] - ubar;
            for j in 0..k {
                c[j] = params.omega * c0[j] + params.gamma * g[t][j] * du + bp * c[j];
            }
        }
        let c = DVector::from_vec(c);
        let beta_final = &final_inv * &c;
        let vals: Vec<f64> = resid.iter().copied().filter(|x| x.is_finite()).collect();
        let m = vals.iter().sum::<f64>() / vals.len() as f64;
        let sd = (vals.iter().map(|x| (x - m) * (x - m)).sum::<f64>() / (vals.len() - 1) as f64).sqrt();
        let scale = ua
            .iter()
            .filter(|x| x.is_finite())
            .fold(0.0f64, |acc, x| acc.max(x.abs()));
        if !(sd > 1e-10 * scale.max(1e-300)) {
            return (beta_final.iter().copied().collect(), a, m, 0.0, vec![f64::NAN; t_len]);
        }
        let next = resid.iter().map(|e| (e - m) / sd).collect();
        (beta_final.iter().copied().collect(), a, m, sd, next)
    });

    let mut fit = LayerFit {
        beta: Vec::with_capacity(u.len()),
        intercept: Vec::with_capacity(u.len()),
        resid_mean: Vec::with_capacity(u.len()),
        resid_sd: Vec::with_capacity(u.len()),
        next: Vec::with_capacity(u.len()),
    };
    for (beta, a, m, sd, next) in per_asset {
        fit.beta.push(beta);
        fit.intercept.push(a);
        fit.resid_mean.push(m);
        fit.resid_sd.push(sd);
        fit.next.push(next);
    }
    Ok(fit)
}

fn gaussian_log_density(ch: &Cholesky<f64, Dyn>, x: impl Iterator<Item = f64>) -> f64 {
    let xv = DVector::from_iterator(ch.l_dirty().nrows(), x);
    let sol = ch.solve(&xv);
    let logdet = 2.0 * ch.l_dirty().diagonal().iter().map(|d| d.ln()).sum::<f64>();
    -0.5 * (logdet + xv.dot(&sol) + xv.len() as f64 * LN_2PI)
}

/// Fitted risk model for one date.
#[derive(Debug, Clone, PartialEq)]
pub struct FactorRiskModel {
    pub date: Option<NaiveDate>,
    pub tickers: Vec<String>,
    pub factor_names: Vec<String>,
    pub factor_levels: Vec<u8>,
    pub params: BekkParams,
    /// Assets × factors, in standardized units.
    pub loadings: DMatrix<f64>,
    pub factor_cov: DMatrix<f64>,
    /// Specific variance in standardized units.
    pub specific_var: DVector<f64>,
    /// Daily volatility used to map standardized units back to returns.
    pub vol_scale: DVector<f64>,
}

/// Serializable form of [`FactorRiskModel`].
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct ModelSnapshot {
    pub date: Option<NaiveDate>,
    pub omega: f64,
    pub gamma: f64,
    pub tickers: Vec<String>,
    pub factor_names: Vec<String>,
    pub factor_levels: Vec<u8>,
    pub loadings: Vec<Vec<f64>>,
    pub factor_cov: Vec<Vec<f64>>,
    pub specific_var: Vec<f64>,
    pub vol_scale: Vec<f64>,
}

/// Components of `w Σ w'`.
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct RiskDecomposition {
    pub total: f64,
    pub m6m_var: f64,
    pub other_systematic_var: f64,
    pub specific_var: f64,
    /// Remainder: cross-factor covariance terms (and any PSD repair).
    pub covariance_effect: f64,
}

/// Assembled covariance and whether the PSD repair fired.
#[derive(Debug, Clone, PartialEq)]
pub struct Covariance {
    pub matrix: DMatrix<f64>,
    pub repaired: bool,
}

/// `D (B Σ_F B' + diag(Ω)) D`, with eigenvalue clipping if the smallest
/// eigenvalue is below `−1e-10`.
pub fn assemble_covariance(
    loadings: &DMatrix<f64>,
    factor_cov: &DMatrix<f64>,
    specific_var: &DVector<f64>,
    vol_scale: &DVector<f64>,
) -> Result<Covariance, FactorRiskError> {
    let n = loadings.nrows();
    let mut s = loadings * factor_cov * loadings.transpose();
    for i in 0..n {
        s[(i, i)] += specific_var[i];
    }
    for i in 0..n {
        for j in 0..n {
            s[(i, j)] *= vol_scale[i] * vol_scale[j];
        }
    }
    let s = (&s + s.transpose()) * 0.5;
    if s.iter().any(|x| !x.is_finite()) {
        return Err(FactorRiskError::NonFinite);
    }
    let eig = SymmetricEigen::new(s.clone());
    if eig.eigenvalues.min() >= -PSD_TOLERANCE {
        return Ok(Covariance {
            matrix: s,
            repaired: false,
        });
    }
    let clipped = eig.eigenvalues.map(|l| l.max(0.0));
    let v = &eig.eigenvectors;
    let m = v * DMatrix::from_diagonal(&clipped) * v.transpose();
    Ok(Covariance {
        matrix: (&m + m.transpose()) * 0.5,
        repaired: true,
    })
}

pub fn portfolio_variance(w: &[f64], sigma: &DMatrix<f64>) -> Result<f64, FactorRiskError> {
    if w.len() != sigma.nrows() {
        return Err(FactorRiskError::Dimension {
            expected: sigma.nrows(),
            got: w.len(),
        });
    }
    let w = DVector::from_column_slice(w);
    Ok((w.transpose() * sigma * &w)[(0, 0)])
}

/// `√(252 · w Σ w')`.
pub fn annualized_vol(w: &[f64], sigma: &DMatrix<f64>) -> Result<f64, FactorRiskError> {
    Ok((252.0 * portfolio_variance(w, sigma)?.max(0.0)).sqrt())
}

impl FactorRiskModel {
    pub fn n_assets(&self) -> usize {
        self.tickers.len()
    }

    pub fn asset_index(&self, ticker: &str) -> Option<usize> {
        self.tickers.iter().position(|t| t == ticker)
    }

    pub fn covariance(&self) -> Result<Covariance, FactorRiskError> {
        assemble_covariance(&self.loadings, &self.factor_cov, &self.specific_var, &self.vol_scale)
    }

    pub fn portfolio_variance(&self, w: &[f64]) -> Result<f64, FactorRiskError> {
        portfolio_variance(w, &self.covariance()?.matrix)
    }

    pub fn annualized_vol(&self, w: &[f64]) -> Result<f64, FactorRiskError> {
        annualized_vol(w, &self.covariance()?.matrix)
    }

    /// Splits `w Σ w'` into level-1 factor, other factor, specific and
    /// cross-covariance parts; the four sum to the total.
    pub fn risk_decomposition(&self, w: &[f64]) -> Result<RiskDecomposition, FactorRiskError> {
        let total = self.portfolio_variance(w)?;
        let dw: Vec<f64> = w.iter().zip(self.vol_scale.iter()).map(|(w, d)| w * d).collect();
        let exposures: Vec<f64> = (0..self.factor_names.len())
            .map(|j| (0..dw.len()).map(|i| dw[i] * self.loadings[(i, j)]).sum())
            .collect();
        let (mut m6m, mut other) = (0.0, 0.0);
        for (j, x) in exposures.iter().enumerate() {
            let v = x * x * self.factor_cov[(j, j)];
            if self.factor_levels[j] == 1 {
                m6m += v;
            } else {
                other += v;
            }
        }
        let specific: f64 = dw.iter().zip(self.specific_var.iter()).map(|(d, o)| d * d * o).sum();
        Ok(RiskDecomposition {
            total,
            m6m_var: m6m,
            other_systematic_var: other,
            specific_var: specific,
            covariance_effect: total - m6m - other - specific,
        })
    }

    /// Gaussian mean-zero log density of one day's returns `x` (model asset
    /// order; NaN entries are marginalised out).
    pub fn log_likelihood(&self, x: &[f64]) -> Result<f64, FactorRiskError> {
        if x.len() != self.n_assets() {
            return Err(FactorRiskError::Dimension {
                expected: self.n_assets(),
                got: x.len(),
            });
        }
        let idx: Vec<usize> = (0..x.len()).filter(|&i| x[i].is_finite()).collect();
        if idx.is_empty() {
            return Ok(0.0);
        }
        let k = self.factor_names.len();
        let min_spec = idx.iter().map(|&i| self.specific_var[i]).fold(f64::INFINITY, f64::min);
        let n = idx.len() as f64;
        if min_spec > 1e-12 {
            // Woodbury: Σ_z = B F B' + Ω with Ω diagonal
            let f_chol = self.factor_cov.clone().cholesky().ok_or(FactorRiskError::NotPositiveDefinite)?;
            let mut m = f_chol.inverse();
            let mut v = DVector::zeros(k);
            let (mut logdet, mut quad) = (0.0, 0.0);
            for &i in &idx {
                let d = self.vol_scale[i];
                let om = self.specific_var[i];
                let y = x[i] / d;
                logdet += 2.0 * d.ln() + om.ln();
                quad += y * y / om;
                for a in 0..k {
                    let ba = self.loadings[(i, a)] / om;
                    v[a] += ba * y;
                    for b in 0..k {
                        m[(a, b)] += ba * self.loadings[(i, b)];
                    }
                }
            }
            let m_chol = m.cholesky().ok_or(FactorRiskError::NotPositiveDefinite)?;
            let sol = m_chol.solve(&v);
            quad -= v.dot(&sol);
            logdet += 2.0 * f_chol.l().diagonal().iter().map(|d| d.ln()).sum::<f64>();
            logdet += 2.0 * m_chol.l().diagonal().iter().map(|d| d.ln()).sum::<f64>();
            return Ok(-0.5 * (logdet + quad + n * LN_2PI));
        }
        let full = self.unrepaired_covariance();
        let sub = DMatrix::from_fn(idx.len(), idx.len(), |a, b| full[(idx[a], idx[b])]);
        let ch = sub.cholesky().ok_or(FactorRiskError::NotPositiveDefinite)?;
        Ok(gaussian_log_density(&ch, idx.iter().map(|&i| x[i])))
    }

    /// Summed [`log_likelihood`](Self::log_likelihood) over several days,
    /// factorizing the covariance once when specific variances vanish.
    pub fn log_likelihood_days(&self, days: &[Vec<f64>]) -> Result<f64, FactorRiskError> {
        let min_spec = self.specific_var.iter().copied().fold(f64::INFINITY, f64::min);
        if min_spec > 1e-12 || days.len() < 2 {
            return days.iter().map(|x| self.log_likelihood(x)).sum();
        }
        let ch = self
            .unrepaired_covariance()
            .cholesky()
            .ok_or(FactorRiskError::NotPositiveDefinite)?;
        let mut total = 0.0;
        for x in days {
            if x.len() != self.n_assets() {
                return Err(FactorRiskError::Dimension {
                    expected: self.n_assets(),
                    got: x.len(),
                });
            }
            total += if x.iter().all(|v| v.is_finite()) {
                gaussian_log_density(&ch, x.iter().copied())
            } else {
                self.log_likelihood(x)?
            };
        }
        Ok(total)
    }

    fn unrepaired_covariance(&self) -> DMatrix<f64> {
        let n = self.n_assets();
        let mut s = &self.loadings * &self.factor_cov * self.loadings.transpose();
        for i in 0..n {
            s[(i, i)] += self.specific_var[i];
        }
        for i in 0..n {
            for j in 0..n {
                s[(i, j)] *= self.vol_scale[i] * self.vol_scale[j];
            }
        }
        (&s + s.transpose()) * 0.5
    }

    pub fn snapshot(&self) -> ModelSnapshot {
        let rows = |m: &DMatrix<f64>| -> Vec<Vec<f64>> {
            (0..m.nrows()).map(|i| m.row(i).iter().copied().collect()).collect()
        };
        ModelSnapshot {
            date: self.date,
            omega: self.params.omega,
            gamma: self.params.gamma,
            tickers: self.tickers.clone(),
            factor_names: self.factor_names.clone(),
            factor_levels: self.factor_levels.clone(),
            loadings: rows(&self.loadings),
            factor_cov: rows(&self.factor_cov),
            specific_var: self.specific_var.iter().copied().collect(),
            vol_scale: self.vol_scale.iter().copied().collect(),
        }
    }

    pub fn from_snapshot(s: &ModelSnapshot) -> Result<Self, FactorRiskError> {
        let n = s.tickers.len();
        let k = s.factor_names.len();
        let bad = |expected: usize, got: usize| FactorRiskError::Dimension { expected, got };
        if s.loadings.len() != n || s.loadings.iter().any(|r| r.len() != k) {
            return Err(bad(n * k, s.loadings.iter().map(Vec::len).sum()));
        }
        if s.factor_cov.len() != k || s.factor_cov.iter().any(|r| r.len() != k) {
            return Err(bad(k * k, s.factor_cov.iter().map(Vec::len).sum()));
        }
        if s.specific_var.len() != n || s.vol_scale.len() != n || s.factor_levels.len() != k {
            return Err(bad(n, s.specific_var.len()));
        }
        Ok(FactorRiskModel {
            date: s.date,
            tickers: s.tickers.clone(),
            factor_names: s.factor_names.clone(),
            factor_levels: s.factor_levels.clone(),
            params: BekkParams::new(s.omega, s.gamma)?,
            loadings: DMatrix::from_fn(n, k, |i, j| s.loadings[i][j]),
            factor_cov: DMatrix::from_fn(k, k, |i, j| s.factor_cov[i][j]),
            specific_var: DVector::from_vec(s.specific_var.clone()),
            vol_scale: DVector::from_vec(s.vol_scale.clone()),
        })
    }
}

/// Fits the layered model on every row of `panel`. Assets enter when they
/// have data on the last day, a finite positive volatility scale and at
/// least `min_obs` observations.
pub fn fit_factor_model(
    panel: &StandardizedPanel,
    config: &FactorConfig,
    params: BekkParams,
    opts: &FitOptions,
    exec: Execution,
) -> Result<FactorRiskModel, FactorRiskError> {
    let t_len = panel.n_days();
    if t_len == 0 {
        return Err(FactorRiskError::NoAssets);
    }
    let assets: Vec<usize> = (0..panel.n_assets())
        .filter(|&i| {
            let v = panel.vol_scale[i];
            v.is_finite()
                && v > 0.0
                && panel.z[t_len - 1][i].is_finite()
                && panel.z.iter().filter(|r| r[i].is_finite()).count() >= opts.min_obs
        })
        .collect();
    if assets.is_empty() {
        return Err(FactorRiskError::NoAssets);
    }
    let factors: Vec<Vec<f64>> = config
        .factors
        .iter()
        .map(|f| factor_returns(panel, f, opts.min_obs))
        .collect::<Result<_, _>>()?;
    let k_all = factors.len();
    let n = assets.len();

    let mut u: Vec<Vec<f64>> = assets
        .iter()
        .map(|&i| panel.z.iter().map(|r| r[i]).collect())
        .collect();
    let mut loadings = DMatrix::zeros(n, k_all);
    let mut scale = vec![1.0; n];
    for level in 1..=3u8 {
        let cols: Vec<usize> = (0..k_all).filter(|&j| config.factors[j].level == level).collect();
        if cols.is_empty() {
            continue;
        }
        let g: Vec<Vec<f64>> = (0..t_len).map(|t| cols.iter().map(|&j| factors[j][t]).collect()).collect();
        let names: Vec<String> = cols.iter().map(|&j| config.factors[j].name.clone()).collect();
        let fit = fit_layer(&u, &g, &names, params, opts.min_obs, exec)?;
        for a in 0..n {
            for (p, &j) in cols.iter().enumerate() {
                loadings[(a, j)] = scale[a] * fit.beta[a][p];
            }
            scale[a] *= fit.resid_sd[a];
        }
        u = fit.next;
    }

    let specific: Vec<f64> = exec.map_range(n, |a| {
        if scale[a] == 0.0 {
            return 0.0;
        }
        let vals: Vec<f64> = u[a].iter().copied().filter(|x| x.is_finite()).collect();
        if vals.is_empty() {
            return 0.0;
        }
        let target = vals.iter().map(|e| e * e).sum::<f64>() / vals.len() as f64;
        let h = vals
            .iter()
            .fold(target, |h, &e| bekk_scalar_update(params, target, h, e));
        scale[a] * scale[a] * h
    });

    let mut fstate = BekkState::new(params, DMatrix::identity(k_all, k_all));
    let mut g_row = vec![0.0; k_all];
    for t in 0..t_len {
        for j in 0..k_all {
            g_row[j] = factors[j][t];
        }
        if g_row.iter().all(|x| x.is_finite()) {
            fstate.update(&g_row);
        }
    }

    Ok(FactorRiskModel {
        date: panel.dates.last().copied(),
        tickers: assets.iter().map(|&i| panel.tickers[i].clone()).collect(),
        factor_names: config.names(),
        factor_levels: config.factors.iter().map(|f| f.level).collect(),
        params,
        loadings,
        factor_cov: fstate.sigma,
        specific_var: DVector::from_vec(specific),
        vol_scale: DVector::from_iterator(n, assets.iter().map(|&i| panel.vol_scale[i])),
    })
}

/// One out-of-sample test window: the panel available at its start and the
/// realised returns that follow (days × panel assets).
#[derive(Debug, Clone)]
pub struct GridWindow {
    pub panel: StandardizedPanel,
    pub realized: Vec<Vec<f64>>,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct GridCell {
    pub omega: f64,
    pub gamma: f64,
    pub log_likelihood: Option<f64>,
    pub error: Option<String>,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct GridSearchResult {
    pub omega: f64,
    pub gamma: f64,
    pub cells: Vec<GridCell>,
}

/// Summed log-likelihood of the window's realised returns under the model
/// fitted at its start (covariance held fixed through the window).
pub fn window_log_likelihood(
    window: &GridWindow,
    config: &FactorConfig,
    params: BekkParams,
    opts: &FitOptions,
) -> Result<f64, FactorRiskError> {
    let model = fit_factor_model(&window.panel, config, params, opts, Execution::Sequential)?;
    let cols: Vec<usize> = model
        .tickers
        .iter()
        .map(|t| window.panel.tickers.iter().position(|x| x == t).expect("model asset in panel"))
        .collect();
    let days: Vec<Vec<f64>> = window
        .realized
        .iter()
        .map(|day| cols.iter().map(|&c| day[c]).collect())
        .collect();
    model.log_likelihood_days(&days)
}

/// Evaluates every (ω, γ) pair (cells in parallel) and returns the pair with
/// the largest summed log-likelihood; ties go to the earlier cell. Failed
/// cells are kept in the report but excluded from the choice.
pub fn grid_search(
    windows: &[GridWindow],
    config: &FactorConfig,
    omegas: &[f64],
    gammas: &[f64],
    opts: &FitOptions,
    exec: Execution,
) -> Result<GridSearchResult, FactorRiskError> {
    let pairs: Vec<(f64, f64)> = omegas
        .iter()
        .flat_map(|&o| gammas.iter().map(move |&g| (o, g)))
        .collect();
    let cells = exec.map(&pairs, |&(omega, gamma)| {
        let result = BekkParams::new(omega, gamma).and_then(|p| {
            windows
                .iter()
                .map(|w| window_log_likelihood(w, config, p, opts))
                .sum::<Result<f64, _>>()
        });
        match result {
            Ok(ll) => GridCell {
                omega,
                gamma,
                log_likelihood: Some(ll),
                error: None,
            },
            Err(e) => GridCell {
                omega,
                gamma,
                log_likelihood: None,
                error: Some(e.to_string()),
            },
        }
    });
    let mut best: Option<&GridCell> = None;
    for c in &cells {
        match (&c.log_likelihood, &c.error) {
            (Some(ll), _) => {
                info!("grid cell omega={} gamma={}: log-likelihood {ll}", c.omega, c.gamma);
                if best.is_none_or(|b| *ll > b.log_likelihood.expect("scored")) {
                    best = Some(c);
                }
            }
            (None, e) => warn!(
                "grid cell omega={} gamma={} excluded: {}",
                c.omega,
                c.gamma,
                e.as_deref().unwrap_or("unknown error")
            ),
        }
    }
    let best = best.ok_or(FactorRiskError::GridFailed)?;
    Ok(GridSearchResult {
        omega: best.omega,
        gamma: best.gamma,
        cells: cells.clone(),
    })
}

/// Consecutive `window_len`-day test windows, the last ending on calendar day
/// `last_day`. Each window's panel is standardized as of the day before it
/// starts.
pub fn grid_windows(
    prices: &PricePanel,
    vol: &VolatilityPanel,
    last_day: usize,
    n_windows: usize,
    window_len: usize,
    min_rows: usize,
    exec: Execution,
) -> Result<Vec<GridWindow>, FactorRiskError> {
    let span = n_windows * window_len;
    if last_day + 1 < span + 2 || last_day >= prices.n_days() {
        return Err(FactorRiskError::History(format!(
            "{n_windows} windows of {window_len} days need more than {} days before day {last_day}",
            span
        )));
    }
    let first_start = last_day + 1 - span;
    (0..n_windows)
        .map(|w| {
            let start = first_start + w * window_len;
            let (panel, _, _) = standardize_at(prices, vol, start - 1, min_rows, exec)?;
            let realized = (start..start + window_len)
                .map(|t| {
                    (0..prices.n_assets())
                        .map(|i| prices.simple_return(i, t).unwrap_or(f64::NAN))
                        .collect()
                })
                .collect();
            Ok(GridWindow { panel, realized })
        })
        .collect()
}

/// Test windows cut from an already standardized panel whose realised
/// returns are the standardized values themselves (unit volatility scale).
/// The last window ends on the panel's last day.
pub fn windows_from_standardized(
    full: &StandardizedPanel,
    n_windows: usize,
    window_len: usize,
) -> Result<Vec<GridWindow>, FactorRiskError> {
    let span = n_windows * window_len;
    if full.n_days() <= span {
        return Err(FactorRiskError::History(format!(
            "{n_windows} windows of {window_len} days need more than {span} days"
        )));
    }
    let first_start = full.n_days() - span;
    Ok((0..n_windows)
        .map(|w| {
            let start = first_start + w * window_len;
            GridWindow {
                panel: full.prefix(start, vec![1.0; full.n_assets()]),
                realized: full.z[start..start + window_len].to_vec(),
            }
        })
        .collect())
}

/// Plain-text covariance dump: `#` metadata lines, a `#` ticker header, then
/// one row-major line per asset.
pub fn covariance_text(tickers: &[String], sigma: &DMatrix<f64>, metadata: &[(&str, String)]) -> String {
    let mut s = String::new();
    for (k, v) in metadata {
        s.push_str(&format!("# {k}: {v}\n"));
    }
    s.push_str(&format!("# {}\n", tickers.join(",")));
    for i in 0..sigma.nrows() {
        let row: Vec<String> = (0..sigma.ncols()).map(|j| format!("{:e}", sigma[(i, j)])).collect();
        s.push_str(&row.join(","));
        s.push('\n');
    }
    s
}
