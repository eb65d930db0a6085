//! Loading of the files a run refers to.

use std::collections::{BTreeMap, BTreeSet};
use std::path::Path;

use log::warn;
use m6_core::market_data::{load_prices, PricePanel};
use m6_core::scoring::{Evaluator, PeriodSchedule};
use m6_core::submission::{read_submission, Submission};
use m6_core::universe::{ETF_TICKERS, M6_STOCK_TICKERS};

use crate::config::RunConfig;
use crate::error::{domain, env, CliResult};

/// Tickers from the universe file (one per line, `#` comments allowed), or
/// the original 100 assets when none is configured.
pub fn universe(cfg: &RunConfig) -> CliResult<Vec<String>> {
    let Some(path) = &cfg.universe else {
        return Ok(M6_STOCK_TICKERS.iter().chain(ETF_TICKERS.iter()).map(|s| s.to_string()).collect());
    };
    let text = std::fs::read_to_string(path).map_err(|e| env(format!("cannot read {}: {e}", path.display())))?;
    let tickers: Vec<String> = text
        .lines()
        .map(str::trim)
        .filter(|l| !l.is_empty() && !l.starts_with('#'))
        .map(str::to_string)
        .collect();
    let unique: BTreeSet<&String> = tickers.iter().collect();
    if unique.len() != tickers.len() {
        return Err(env(format!("{}: duplicate tickers", path.display())));
    }
    if tickers.len() < 5 {
        return Err(env(format!("{}: need at least 5 tickers, got {}", path.display(), tickers.len())));
    }
    Ok(tickers)
}

/// Prices for exactly `universe`; a missing ticker is a coverage gap.
pub fn price_panel(path: &Path, universe: &[String]) -> CliResult<PricePanel> {
    let loaded = load_prices(path, universe).map_err(env)?;
    if !loaded.missing.is_empty() {
        return Err(env(format!("price coverage gap: no prices for {}", loaded.missing.join(", "))));
    }
    let ordered = universe
        .iter()
        .map(|t| loaded.histories[t].clone())
        .collect();
    PricePanel::new(ordered).map_err(env)
}

pub fn schedule(cfg: &RunConfig) -> CliResult<PeriodSchedule> {
    match &cfg.deadlines {
        Some(d) => PeriodSchedule::new(d.clone()).map_err(env),
        None => Ok(PeriodSchedule::default()),
    }
}

/// Evaluator over the configured prices; coverage problems exit 2.
pub fn evaluator(cfg: &RunConfig, panel: &PricePanel, universe: &[String]) -> CliResult<Evaluator> {
    let ev = Evaluator::new(panel, universe, &schedule(cfg)?, cfg.require_100).map_err(env)?;
    let expected = schedule(cfg)?.evaluation_periods();
    let have: BTreeSet<u32> = ev.periods.iter().map(|p| p.index).collect();
    let gaps: Vec<String> = expected.iter().filter(|p| !have.contains(p)).map(u32::to_string).collect();
    if !gaps.is_empty() {
        return Err(env(format!("price coverage gap: prices end before periods {}", gaps.join(", "))));
    }
    Ok(ev)
}

/// Submissions laid out as `<dir>/<team>/<period>.csv`.
pub fn submissions(dir: &Path) -> CliResult<BTreeMap<String, Vec<Submission>>> {
    let mut out = BTreeMap::new();
    let entries = std::fs::read_dir(dir).map_err(|e| env(format!("cannot read {}: {e}", dir.display())))?;
    let mut teams: Vec<_> = entries
        .filter_map(Result::ok)
        .filter(|e| e.path().is_dir())
        .map(|e| e.path())
        .collect();
    teams.sort();
    for team_dir in teams {
        let team = team_dir.file_name().and_then(|n| n.to_str()).unwrap_or_default().to_string();
        let mut files: Vec<_> = std::fs::read_dir(&team_dir)
            .map_err(|e| env(format!("cannot read {}: {e}", team_dir.display())))?
            .filter_map(Result::ok)
            .map(|e| e.path())
            .filter(|p| p.extension().is_some_and(|x| x == "csv"))
            .collect();
        files.sort();
        let mut history = Vec::new();
        for f in files {
            let stem = f.file_stem().and_then(|s| s.to_str()).unwrap_or_default();
            let period: u32 = stem
                .parse()
                .map_err(|_| env(format!("{}: file name must be the period number", f.display())))?;
            let file = std::fs::File::open(&f).map_err(|e| env(format!("cannot read {}: {e}", f.display())))?;
            let sub = read_submission(file, &team, period).map_err(|e| env(format!("{}: {e}", f.display())))?;
            history.push(sub);
        }
        if history.is_empty() {
            warn!("team directory {} has no submissions", team_dir.display());
            continue;
        }
        out.insert(team, history);
    }
    if out.is_empty() {
        return Err(domain(format!("no submissions found under {}", dir.display())));
    }
    Ok(out)
}
