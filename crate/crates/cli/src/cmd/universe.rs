use std::collections::BTreeMap;

use m6_core::market_data::load_prices;
use m6_core::universe::{cluster_sectors, default_sector_plan, read_sector_file, sample_universe, universe_text};
use m6_core::Execution;
use serde_json::json;

use crate::config::RunConfig;
use crate::error::{domain, env, CliResult};
use crate::output::Output;

/// Clusters every sector's candidate stocks and draws the stock half of the
/// universe; the ETF half is fixed.
pub fn run(cfg: &RunConfig, out: &mut Output) -> CliResult<()> {
    let prices = cfg.require("stock_prices", &cfg.stock_prices, "universe")?;
    let sectors_path = cfg.require("sectors", &cfg.sectors, "universe")?;
    let f = std::fs::File::open(sectors_path).map_err(|e| env(format!("cannot read {}: {e}", sectors_path.display())))?;
    let sectors = read_sector_file(f).map_err(|e| env(format!("{}: {e}", sectors_path.display())))?;
    let tickers: Vec<String> = sectors.keys().cloned().collect();
    let loaded = load_prices(prices, &tickers).map_err(env)?;
    if !loaded.missing.is_empty() {
        log::warn!("{} listed stocks have no prices and are left out", loaded.missing.len());
    }
    let plans = default_sector_plan();
    let exec = Execution::default();
    let clustered =
        cluster_sectors(&loaded.histories, &sectors, &plans, cfg.universe_as_of, cfg.seed, exec).map_err(domain)?;
    let groups: Vec<_> = clustered.iter().map(|c| c.groups()).collect();
    let draws = sample_universe(&plans, &groups, cfg.seed).map_err(domain)?;
    let stocks: Vec<String> = draws.iter().flat_map(|d| d.selected.iter().cloned()).collect();
    for d in &draws {
        println!("{:<24} {:>2} stocks from {} clusters", d.sector, d.selected.len(), d.cluster_sizes.len());
        for w in &d.warnings {
            log::warn!("{}: {w}", d.sector);
        }
    }
    let silhouettes: BTreeMap<&str, Option<f64>> =
        clustered.iter().map(|c| (c.sector.as_str(), c.clustering.silhouette)).collect();
    out.write("universe/universe.txt", universe_text(&stocks).as_bytes())?;
    out.write_json(
        "universe/draw.json",
        &json!({
            "as_of": cfg.universe_as_of,
            "seed": cfg.seed,
            "silhouettes": silhouettes,
            "clusters": groups,
            "draws": draws,
        }),
    )?;
    Ok(())
}
