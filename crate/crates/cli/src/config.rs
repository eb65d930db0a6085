//! Run configuration: a flat TOML file whose paths resolve relative to the
//! file itself. Command-line flags override file values.

use std::path::{Path, PathBuf};

use chrono::NaiveDate;
use serde::Deserialize;

use crate::error::{env, CliError, CliResult};

#[derive(Debug, Clone, Default, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct FileConfig {
    pub prices: Option<PathBuf>,
    pub submissions: Option<PathBuf>,
    pub universe: Option<PathBuf>,
    pub factors: Option<PathBuf>,
    pub stock_prices: Option<PathBuf>,
    pub sectors: Option<PathBuf>,
    pub portfolio: Option<PathBuf>,
    pub model: Option<PathBuf>,
    pub out: Option<PathBuf>,
    /// Period deadlines as `YYYY-MM-DD` strings; index 0 is the trial run.
    pub deadlines: Option<Vec<String>>,
    pub as_of: Option<String>,
    pub grid_end: Option<String>,
    pub universe_as_of: Option<String>,
    pub ic: Option<f64>,
    pub omega: Option<f64>,
    pub gamma: Option<f64>,
    pub seed: Option<u64>,
    pub min_history: Option<usize>,
    pub hexp_min_rows: Option<usize>,
    pub grid_windows: Option<usize>,
    pub grid_window_len: Option<usize>,
    pub require_100: Option<bool>,
}

#[derive(Debug, Clone)]
pub struct RunConfig {
    pub prices: Option<PathBuf>,
    pub submissions: Option<PathBuf>,
    pub universe: Option<PathBuf>,
    pub factors: Option<PathBuf>,
    pub stock_prices: Option<PathBuf>,
    pub sectors: Option<PathBuf>,
    pub portfolio: Option<PathBuf>,
    pub model: Option<PathBuf>,
    pub out: PathBuf,
    pub deadlines: Option<Vec<NaiveDate>>,
    pub as_of: Option<NaiveDate>,
    pub grid_end: NaiveDate,
    pub universe_as_of: NaiveDate,
    pub ic: f64,
    pub omega: f64,
    pub gamma: f64,
    pub seed: u64,
    pub min_history: usize,
    pub hexp_min_rows: usize,
    pub grid_windows: usize,
    pub grid_window_len: usize,
    pub require_100: bool,
}

fn date(field: &str, s: &str) -> CliResult<NaiveDate> {
    NaiveDate::parse_from_str(s, "%Y-%m-%d").map_err(|e| env(format!("config `{field}`: bad date `{s}`: {e}")))
}

fn nov_30_2021() -> NaiveDate {
    NaiveDate::from_ymd_opt(2021, 11, 30).expect("valid date")
}

impl RunConfig {
    /// Reads `path` (if any) and applies flag overrides.
    pub fn load(path: Option<&Path>, seed: Option<u64>, out: Option<PathBuf>) -> CliResult<Self> {
        let (file, base) = match path {
            Some(p) => {
                let text = std::fs::read_to_string(p)
                    .map_err(|e| env(format!("cannot read config {}: {e}", p.display())))?;
                let cfg: FileConfig =
                    toml::from_str(&text).map_err(|e| env(format!("config {}: {e}", p.display())))?;
                (cfg, p.parent().map(Path::to_path_buf).unwrap_or_default())
            }
            None => (FileConfig::default(), PathBuf::new()),
        };
        let rel = |p: Option<PathBuf>| p.map(|p| if p.is_absolute() { p } else { base.join(p) });
        let deadlines = match &file.deadlines {
            Some(ds) => {
                let parsed = ds.iter().map(|d| date("deadlines", d)).collect::<CliResult<Vec<_>>>()?;
                if parsed.windows(2).any(|w| w[0] >= w[1]) {
                    return Err(env("config `deadlines` must be strictly increasing"));
                }
                Some(parsed)
            }
            None => None,
        };
        let cfg = RunConfig {
            prices: rel(file.prices),
            submissions: rel(file.submissions),
            universe: rel(file.universe),
            factors: rel(file.factors),
            stock_prices: rel(file.stock_prices),
            sectors: rel(file.sectors),
            portfolio: rel(file.portfolio),
            model: rel(file.model),
            out: out.or(rel(file.out)).unwrap_or_else(|| PathBuf::from("out")),
            deadlines,
            as_of: file.as_of.as_deref().map(|s| date("as_of", s)).transpose()?,
            grid_end: file.grid_end.as_deref().map(|s| date("grid_end", s)).transpose()?.unwrap_or_else(nov_30_2021),
            universe_as_of: file
                .universe_as_of
                .as_deref()
                .map(|s| date("universe_as_of", s))
                .transpose()?
                .unwrap_or_else(nov_30_2021),
            ic: file.ic.unwrap_or(0.1),
            omega: file.omega.unwrap_or(0.01),
            gamma: file.gamma.unwrap_or(0.005),
            seed: seed.or(file.seed).unwrap_or(0),
            min_history: file.min_history.unwrap_or(250),
            hexp_min_rows: file.hexp_min_rows.unwrap_or(100),
            grid_windows: file.grid_windows.unwrap_or(36),
            grid_window_len: file.grid_window_len.unwrap_or(20),
            require_100: file.require_100.unwrap_or(true),
        };
        for (name, p) in [
            ("prices", &cfg.prices),
            ("submissions", &cfg.submissions),
            ("universe", &cfg.universe),
            ("factors", &cfg.factors),
            ("stock_prices", &cfg.stock_prices),
            ("sectors", &cfg.sectors),
            ("portfolio", &cfg.portfolio),
        ] {
            if let Some(p) = p {
                if !p.exists() {
                    return Err(env(format!("config `{name}`: {} does not exist", p.display())));
                }
            }
        }
        Ok(cfg)
    }

    /// The path configured under `name`, or a domain error naming it.
    pub fn require<'a>(&self, name: &str, p: &'a Option<PathBuf>, what: &str) -> CliResult<&'a Path> {
        p.as_deref()
            .ok_or_else(|| CliError::Domain(format!("{what} requires `{name}` in the config")))
    }
}
