use std::path::PathBuf;

use chrono::NaiveDate;
use m6_core::factor_risk::{
    covariance_text, fit_factor_model, grid_search, grid_windows, standardize_at, BekkParams, FactorConfig,
    FactorRiskModel, FitOptions, ModelSnapshot, GAMMA_GRID, OMEGA_GRID,
};
use m6_core::market_data::PricePanel;
use m6_core::submission::read_submission;
use m6_core::volatility::{HexpDump, VolatilityPanel};
use m6_core::Execution;
use serde::{Deserialize, Serialize};

use crate::config::RunConfig;
use crate::error::{domain, env, CliError, CliResult};
use crate::inputs;
use crate::output::Output;

pub const MODEL_FILE: &str = "riskmodel/model.json";

#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub enum Action {
    Fit,
    Forecast,
    Decompose,
    GridSearch,
}

#[derive(Debug, Clone, Serialize, Deserialize)]
pub struct ModelFile {
    pub as_of: NaiveDate,
    pub hexp_1: HexpDump,
    pub hexp_20: HexpDump,
    pub model: ModelSnapshot,
}

pub fn factor_config(cfg: &RunConfig) -> CliResult<FactorConfig> {
    match &cfg.factors {
        Some(p) => {
            let text = std::fs::read_to_string(p).map_err(|e| env(format!("cannot read {}: {e}", p.display())))?;
            FactorConfig::from_toml(&text).map_err(|e| env(format!("{}: {e}", p.display())))
        }
        None => Ok(FactorConfig::m6_default()),
    }
}

pub fn params(cfg: &RunConfig) -> CliResult<BekkParams> {
    BekkParams::new(cfg.omega, cfg.gamma).map_err(env)
}

/// HEXP models and the layered factor model, both estimated on data up to
/// calendar day `day`.
pub fn fit_at(
    panel: &PricePanel,
    vol: &VolatilityPanel,
    day: usize,
    factors: &FactorConfig,
    params: BekkParams,
    cfg: &RunConfig,
) -> CliResult<(FactorRiskModel, ModelFile)> {
    let exec = Execution::default();
    let (z, m1, m20) = standardize_at(panel, vol, day, cfg.hexp_min_rows, exec).map_err(domain)?;
    let mut model = fit_factor_model(&z, factors, params, &FitOptions::default(), exec).map_err(domain)?;
    model.date = Some(panel.calendar[day]);
    let file = ModelFile {
        as_of: panel.calendar[day],
        hexp_1: m1.dump(),
        hexp_20: m20.dump(),
        model: model.snapshot(),
    };
    Ok((model, file))
}

fn load_model(cfg: &RunConfig, out: &Output, what: &str) -> CliResult<FactorRiskModel> {
    let path: PathBuf = cfg.model.clone().unwrap_or_else(|| out.root().join(MODEL_FILE));
    let text = std::fs::read_to_string(&path).map_err(|_| {
        CliError::Domain(format!(
            "{what} requires a fitted model: {} not found (run `m6 riskmodel fit` first)",
            path.display()
        ))
    })?;
    let file: ModelFile = serde_json::from_str(&text).map_err(|e| env(format!("{}: {e}", path.display())))?;
    FactorRiskModel::from_snapshot(&file.model).map_err(env)
}

pub fn run(cfg: &RunConfig, out: &mut Output, action: Action) -> CliResult<()> {
    match action {
        Action::Fit => fit(cfg, out),
        Action::Forecast => forecast(cfg, out),
        Action::Decompose => decompose(cfg, out),
        Action::GridSearch => gridsearch(cfg, out),
    }
}

fn prices_and_vol(cfg: &RunConfig, what: &str) -> CliResult<(PricePanel, VolatilityPanel)> {
    let prices = cfg.require("prices", &cfg.prices, what)?;
    let universe = inputs::universe(cfg)?;
    let panel = inputs::price_panel(prices, &universe)?;
    let vol = VolatilityPanel::from_prices(&panel, cfg.min_history, Execution::default());
    Ok((panel, vol))
}

pub fn day_index(panel: &PricePanel, date: NaiveDate) -> CliResult<usize> {
    panel
        .day_on_or_before(date)
        .ok_or_else(|| CliError::Domain(format!("no price data on or before {date}")))
}

fn fit(cfg: &RunConfig, out: &mut Output) -> CliResult<()> {
    let (panel, vol) = prices_and_vol(cfg, "riskmodel fit")?;
    let day = match cfg.as_of {
        Some(d) => day_index(&panel, d)?,
        None => panel.n_days() - 1,
    };
    let (_, file) = fit_at(&panel, &vol, day, &factor_config(cfg)?, params(cfg)?, cfg)?;
    println!(
        "fitted {} assets on {} factors as of {} (omega {}, gamma {})",
        file.model.tickers.len(),
        file.model.factor_names.len(),
        file.as_of,
        file.model.omega,
        file.model.gamma
    );
    out.write_json(MODEL_FILE, &file)?;
    Ok(())
}

fn forecast(cfg: &RunConfig, out: &mut Output) -> CliResult<()> {
    let model = load_model(cfg, out, "riskmodel forecast")?;
    let cov = model.covariance().map_err(domain)?;
    let meta = [
        ("as_of", model.date.map_or("unknown".into(), |d| d.to_string())),
        ("omega", model.params.omega.to_string()),
        ("gamma", model.params.gamma.to_string()),
        ("units", "daily return variance, 20-day horizon".to_string()),
        ("psd_repaired", cov.repaired.to_string()),
    ];
    out.write("riskmodel/covariance.txt", covariance_text(&model.tickers, &cov.matrix, &meta).as_bytes())?;
    let mut csv = String::from("ticker,daily_vol,annualized_vol\n");
    for (i, t) in model.tickers.iter().enumerate() {
        let v = cov.matrix[(i, i)].sqrt();
        csv.push_str(&format!("{t},{v:.10e},{:.10e}\n", v * 252f64.sqrt()));
    }
    out.write("riskmodel/volatility.csv", csv.as_bytes())?;
    println!("covariance for {} assets written", model.tickers.len());
    Ok(())
}

#[derive(Debug, Serialize)]
struct DecompositionReport {
    portfolio: String,
    as_of: Option<NaiveDate>,
    total: f64,
    m6m_var: f64,
    other_systematic_var: f64,
    specific_var: f64,
    covariance_effect: f64,
    annualized_vol: f64,
}

fn decompose(cfg: &RunConfig, out: &mut Output) -> CliResult<()> {
    let model = load_model(cfg, out, "riskmodel decompose")?;
    let (name, weights) = match &cfg.portfolio {
        Some(p) => {
            let f = std::fs::File::open(p).map_err(|e| env(format!("cannot read {}: {e}", p.display())))?;
            let sub = read_submission(f, "portfolio", 0).map_err(|e| env(format!("{}: {e}", p.display())))?;
            let by_asset = sub.weights_by_asset();
            let unknown: Vec<&str> = by_asset
                .iter()
                .filter(|(a, w)| **w != 0.0 && model.asset_index(a).is_none())
                .map(|(a, _)| *a)
                .collect();
            if !unknown.is_empty() {
                return Err(domain(format!("portfolio holds assets outside the model: {}", unknown.join(", "))));
            }
            let w = model.tickers.iter().map(|t| by_asset.get(t.as_str()).copied().unwrap_or(0.0)).collect();
            (p.display().to_string(), w)
        }
        None => ("benchmark".to_string(), vec![0.01; model.n_assets()]),
    };
    let d = model.risk_decomposition(&weights).map_err(domain)?;
    let report = DecompositionReport {
        portfolio: name,
        as_of: model.date,
        total: d.total,
        m6m_var: d.m6m_var,
        other_systematic_var: d.other_systematic_var,
        specific_var: d.specific_var,
        covariance_effect: d.covariance_effect,
        annualized_vol: (252.0 * d.total).sqrt(),
    };
    println!(
        "total {:.6e} = M6M {:.6e} + other systematic {:.6e} + specific {:.6e} + covariance {:.6e}",
        d.total, d.m6m_var, d.other_systematic_var, d.specific_var, d.covariance_effect
    );
    out.write_json("riskmodel/decomposition.json", &report)?;
    Ok(())
}

fn gridsearch(cfg: &RunConfig, out: &mut Output) -> CliResult<()> {
    let (panel, vol) = prices_and_vol(cfg, "riskmodel gridsearch")?;
    let last = day_index(&panel, cfg.grid_end)?;
    let exec = Execution::default();
    let windows = grid_windows(&panel, &vol, last, cfg.grid_windows, cfg.grid_window_len, cfg.hexp_min_rows, exec)
        .map_err(domain)?;
    let result = grid_search(&windows, &factor_config(cfg)?, &OMEGA_GRID, &GAMMA_GRID, &FitOptions::default(), exec)
        .map_err(domain)?;
    let mut csv = String::from("omega,gamma,log_likelihood,error\n");
    for c in &result.cells {
        let ll = c.log_likelihood.map_or("NA".into(), |x| format!("{x:.10e}"));
        println!("cell omega={} gamma={} log-likelihood {ll}", c.omega, c.gamma);
        csv.push_str(&format!("{},{},{ll},{}\n", c.omega, c.gamma, c.error.as_deref().unwrap_or("")));
    }
    println!("selected omega={} gamma={}", result.omega, result.gamma);
    out.write("riskmodel/gridsearch.csv", csv.as_bytes())?;
    out.write_json("riskmodel/gridsearch.json", &result)?;
    Ok(())
}
