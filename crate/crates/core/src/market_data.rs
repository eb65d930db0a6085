//! Daily price ingestion, calendar alignment and return primitives.
//!
//! Prices arrive as a long CSV (`date,ticker,open,high,low,close,adj_close`,
//! optionally followed by `volume`). Each asset becomes a [`PriceHistory`];
//! [`PricePanel`] aligns a set of histories on the union calendar and
//! forward-fills gaps from each asset's first observation onwards.

use std::collections::{BTreeMap, BTreeSet};
use std::io::{Read, Write};
use std::path::Path;

use chrono::NaiveDate;
use serde::{Deserialize, Serialize};
use thiserror::Error;

#[derive(Debug, Error)]
pub enum MarketDataError {
    #[error("io error reading {path}: {source}")]
    Io {
        path: String,
        #[source]
        source: std::io::Error,
    },
    #[error("parse error at line {line}: {message}")]
    Parse { line: usize, message: String },
    #[error("data error for {ticker} on {date}: {message}")]
    Data {
        ticker: String,
        date: NaiveDate,
        message: String,
    },
    #[error("write failed: {0}")]
    Write(#[from] std::io::Error),
    #[error("empty price history for {0}")]
    EmptyHistory(String),
    #[error("{ticker}: need at least {needed} rows, have {have}")]
    TooShort {
        ticker: String,
        needed: usize,
        have: usize,
    },
    #[error("{ticker}: date {date} is not on the universe calendar")]
    OffCalendar { ticker: String, date: NaiveDate },
}

/// One day of quotes. All prices strictly positive.
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct PriceRow {
    pub open: f64,
    pub high: f64,
    pub low: f64,
    pub close: f64,
    pub adj_close: f64,
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub volume: Option<f64>,
}

impl PriceRow {
    /// Row with all four quotes and the adjusted close equal to `price`.
    pub fn flat(price: f64) -> Self {
        PriceRow {
            open: price,
            high: price,
            low: price,
            close: price,
            adj_close: price,
            volume: None,
        }
    }

    fn check(&self) -> Result<(), String> {
        for (name, v) in [
            ("open", self.open),
            ("high", self.high),
            ("low", self.low),
            ("close", self.close),
            ("adj_close", self.adj_close),
        ] {
            if !(v.is_finite() && v > 0.0) {
                return Err(format!("{name} must be strictly positive, got {v}"));
            }
        }
        if self.high < self.open.max(self.close) {
            return Err(format!(
                "high {} below max(open, close) {}",
                self.high,
                self.open.max(self.close)
            ));
        }
        if self.low > self.open.min(self.close) {
            return Err(format!(
                "low {} above min(open, close) {}",
                self.low,
                self.open.min(self.close)
            ));
        }
        if let Some(v) = self.volume {
            if !(v.is_finite() && v >= 0.0) {
                return Err(format!("volume must be nonnegative, got {v}"));
            }
        }
        Ok(())
    }
}

/// Daily quotes for one asset, sorted by date.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct PriceHistory {
    pub asset_id: String,
    pub dates: Vec<NaiveDate>,
    pub rows: Vec<PriceRow>,
}

impl PriceHistory {
    /// Builds a history, sorting by date and checking row invariants.
    pub fn new(
        asset_id: impl Into<String>,
        mut entries: Vec<(NaiveDate, PriceRow)>,
    ) -> Result<Self, MarketDataError> {
        let asset_id = asset_id.into();
        entries.sort_by_key(|(d, _)| *d);
        for w in entries.windows(2) {
            if w[0].0 == w[1].0 {
                return Err(MarketDataError::Data {
                    ticker: asset_id,
                    date: w[0].0,
                    message: "duplicate date".into(),
                });
            }
        }
        for (date, row) in &entries {
            row.check().map_err(|message| MarketDataError::Data {
                ticker: asset_id.clone(),
                date: *date,
                message,
            })?;
        }
        let (dates, rows) = entries.into_iter().unzip();
        Ok(PriceHistory {
            asset_id,
            dates,
            rows,
        })
    }

    pub fn len(&self) -> usize {
        self.rows.len()
    }

    pub fn is_empty(&self) -> bool {
        self.rows.is_empty()
    }

    pub fn first_valid_date(&self) -> Option<NaiveDate> {
        self.dates.first().copied()
    }
}

/// Log-return decomposition of one trading day relative to the prior close.
#[derive(Debug, Clone, Copy, PartialEq, Default, Serialize, Deserialize)]
pub struct LogDayComponents {
    /// Overnight: ln(open) − ln(prior close).
    pub o: f64,
    /// ln(high) − ln(open).
    pub u: f64,
    /// ln(low) − ln(open).
    pub d: f64,
    /// ln(close) − ln(open).
    pub c: f64,
}

impl LogDayComponents {
    pub fn from_prices(prev_close: f64, row: &PriceRow) -> Self {
        let lo = row.open.ln();
        LogDayComponents {
            o: lo - prev_close.ln(),
            u: row.high.ln() - lo,
            d: row.low.ln() - lo,
            c: row.close.ln() - lo,
        }
    }
}

/// Result of [`load_prices`].
#[derive(Debug, Clone)]
pub struct LoadedPrices {
    pub histories: BTreeMap<String, PriceHistory>,
    /// Requested tickers absent from the file.
    pub missing: Vec<String>,
    /// Tickers present in the file but not requested.
    pub unrequested: Vec<String>,
}

/// Loads the price CSV at `path`, keeping only tickers in `universe`
/// (all tickers when `universe` is empty).
pub fn load_prices(
    path: impl AsRef<Path>,
    universe: &[String],
) -> Result<LoadedPrices, MarketDataError> {
    let path = path.as_ref();
    let file = std::fs::File::open(path).map_err(|source| MarketDataError::Io {
        path: path.display().to_string(),
        source,
    })?;
    read_prices(file, universe)
}

pub fn read_prices<R: Read>(
    reader: R,
    universe: &[String],
) -> Result<LoadedPrices, MarketDataError> {
    let mut rdr = csv::ReaderBuilder::new()
        .has_headers(true)
        .trim(csv::Trim::All)
        .from_reader(reader);
    let headers = rdr
        .headers()
        .map_err(|e| MarketDataError::Parse {
            line: 1,
            message: e.to_string(),
        })?
        .clone();
    let expected = ["date", "ticker", "open", "high", "low", "close", "adj_close"];
    let cols: Vec<&str> = headers.iter().collect();
    let has_volume = match cols.as_slice() {
        c if c == expected => false,
        c if c.len() == 8 && c[..7] == expected && c[7] == "volume" => true,
        _ => {
            return Err(MarketDataError::Parse {
                line: 1,
                message: format!(
                    "expected header `{}` (optionally `,volume`), got `{}`",
                    expected.join(","),
                    cols.join(",")
                ),
            })
        }
    };

    let wanted: BTreeSet<&str> = universe.iter().map(String::as_str).collect();
    let mut per_ticker: BTreeMap<String, Vec<(NaiveDate, PriceRow)>> = BTreeMap::new();
    let mut seen: BTreeSet<String> = BTreeSet::new();
    for (i, rec) in rdr.records().enumerate() {
        let line = i + 2;
        let rec = rec.map_err(|e| MarketDataError::Parse {
            line,
            message: e.to_string(),
        })?;
        let want = if has_volume { 8 } else { 7 };
        if rec.len() != want {
            return Err(MarketDataError::Parse {
                line,
                message: format!("expected {want} fields, got {}", rec.len()),
            });
        }
        let date = NaiveDate::parse_from_str(&rec[0], "%Y-%m-%d").map_err(|e| {
            MarketDataError::Parse {
                line,
                message: format!("bad date `{}`: {e}", &rec[0]),
            }
        })?;
        let ticker = rec[1].to_string();
        seen.insert(ticker.clone());
        if !wanted.is_empty() && !wanted.contains(ticker.as_str()) {
            continue;
        }
        let num = |k: usize| -> Result<f64, MarketDataError> {
            rec[k].parse::<f64>().map_err(|e| MarketDataError::Parse {
                line,
                message: format!("bad number `{}` in column {}: {e}", &rec[k], expected.get(k).unwrap_or(&"volume")),
            })
        };
        let row = PriceRow {
            open: num(2)?,
            high: num(3)?,
            low: num(4)?,
            close: num(5)?,
            adj_close: num(6)?,
            volume: if has_volume { Some(num(7)?) } else { None },
        };
        per_ticker.entry(ticker).or_default().push((date, row));
    }

    let mut histories = BTreeMap::new();
    for (ticker, entries) in per_ticker {
        let h = PriceHistory::new(ticker.clone(), entries)?;
        histories.insert(ticker, h);
    }
    let missing = universe
        .iter()
        .filter(|t| !histories.contains_key(t.as_str()))
        .cloned()
        .collect();
    let unrequested = if wanted.is_empty() {
        Vec::new()
    } else {
        seen.into_iter()
            .filter(|t| !wanted.contains(t.as_str()))
            .collect()
    };
    Ok(LoadedPrices {
        histories,
        missing,
        unrequested,
    })
}

/// Writes histories in the layout [`read_prices`] accepts, with a volume
/// column when every row has one.
pub fn write_prices<'a, W: Write>(
    histories: impl IntoIterator<Item = &'a PriceHistory>,
    mut w: W,
) -> Result<(), MarketDataError> {
    let histories: Vec<&PriceHistory> = histories.into_iter().collect();
    let with_volume = histories.iter().all(|h| h.rows.iter().all(|r| r.volume.is_some()));
    write!(w, "date,ticker,open,high,low,close,adj_close")?;
    writeln!(w, "{}", if with_volume { ",volume" } else { "" })?;
    for h in histories {
        for (d, r) in h.dates.iter().zip(&h.rows) {
            write!(w, "{d},{},{},{},{},{},{}", h.asset_id, r.open, r.high, r.low, r.close, r.adj_close)?;
            match r.volume {
                Some(v) if with_volume => writeln!(w, ",{v}")?,
                _ => writeln!(w)?,
            }
        }
    }
    Ok(())
}

/// Union of all dates present across the histories, ascending.
pub fn universe_calendar<'a>(histories: impl IntoIterator<Item = &'a PriceHistory>) -> Vec<NaiveDate> {
    let mut set = BTreeSet::new();
    for h in histories {
        set.extend(h.dates.iter().copied());
    }
    set.into_iter().collect()
}

/// Fills every calendar date on or after the asset's first observation with
/// the last available row. Dates before the first observation stay absent.
pub fn forward_fill(
    history: &PriceHistory,
    calendar: &[NaiveDate],
) -> Result<PriceHistory, MarketDataError> {
    let first = history
        .first_valid_date()
        .ok_or_else(|| MarketDataError::EmptyHistory(history.asset_id.clone()))?;
    let on_calendar: BTreeSet<&NaiveDate> = calendar.iter().collect();
    if let Some(d) = history.dates.iter().find(|d| !on_calendar.contains(d)) {
        return Err(MarketDataError::OffCalendar {
            ticker: history.asset_id.clone(),
            date: *d,
        });
    }
    let start = calendar.partition_point(|d| *d < first);
    let mut dates = Vec::with_capacity(calendar.len() - start);
    let mut rows = Vec::with_capacity(calendar.len() - start);
    let mut j = 0;
    let mut last = history.rows[0];
    for &d in &calendar[start..] {
        if j < history.dates.len() && history.dates[j] == d {
            last = history.rows[j];
            j += 1;
        }
        dates.push(d);
        rows.push(last);
    }
    Ok(PriceHistory {
        asset_id: history.asset_id.clone(),
        dates,
        rows,
    })
}

/// Simple adjusted-close returns, one shorter than the history.
pub fn daily_returns(history: &PriceHistory) -> Result<Vec<f64>, MarketDataError> {
    if history.len() < 2 {
        return Err(MarketDataError::TooShort {
            ticker: history.asset_id.clone(),
            needed: 2,
            have: history.len(),
        });
    }
    Ok(history
        .rows
        .windows(2)
        .map(|w| w[1].adj_close / w[0].adj_close - 1.0)
        .collect())
}

/// Per-day log components; entry `t` describes row `t + 1`.
pub fn log_components(history: &PriceHistory) -> Result<Vec<LogDayComponents>, MarketDataError> {
    if history.len() < 2 {
        return Err(MarketDataError::TooShort {
            ticker: history.asset_id.clone(),
            needed: 2,
            have: history.len(),
        });
    }
    for (date, row) in history.dates.iter().zip(&history.rows) {
        row.check().map_err(|message| MarketDataError::Data {
            ticker: history.asset_id.clone(),
            date: *date,
            message,
        })?;
    }
    Ok(history
        .rows
        .windows(2)
        .map(|w| LogDayComponents::from_prices(w[0].close, &w[1]))
        .collect())
}

/// Forward-filled histories aligned on a shared calendar.
///
/// `offsets[i]` is the calendar index of asset `i`'s first row, so the row for
/// calendar day `t` is `histories[i].rows[t - offsets[i]]` when
/// `t >= offsets[i]`.
#[derive(Debug, Clone)]
pub struct PricePanel {
    pub calendar: Vec<NaiveDate>,
    pub tickers: Vec<String>,
    pub histories: Vec<PriceHistory>,
    pub offsets: Vec<usize>,
}

impl PricePanel {
    /// Aligns `histories` (in the given order) on their union calendar.
    pub fn new(histories: Vec<PriceHistory>) -> Result<Self, MarketDataError> {
        let calendar = universe_calendar(&histories);
        let mut filled = Vec::with_capacity(histories.len());
        let mut offsets = Vec::with_capacity(histories.len());
        for h in &histories {
            let f = forward_fill(h, &calendar)?;
            offsets.push(calendar.len() - f.len());
            filled.push(f);
        }
        Ok(PricePanel {
            calendar,
            tickers: histories.iter().map(|h| h.asset_id.clone()).collect(),
            histories: filled,
            offsets,
        })
    }

    pub fn n_assets(&self) -> usize {
        self.tickers.len()
    }

    pub fn n_days(&self) -> usize {
        self.calendar.len()
    }

    pub fn asset_index(&self, ticker: &str) -> Option<usize> {
        self.tickers.iter().position(|t| t == ticker)
    }

    pub fn row(&self, asset: usize, day: usize) -> Option<&PriceRow> {
        let off = self.offsets[asset];
        if day < off {
            None
        } else {
            self.histories[asset].rows.get(day - off)
        }
    }

    /// Simple adjusted-close return from day `t-1` to `t`; `None` when either
    /// price is absent.
    pub fn simple_return(&self, asset: usize, day: usize) -> Option<f64> {
        if day == 0 {
            return None;
        }
        let prev = self.row(asset, day - 1)?;
        let cur = self.row(asset, day)?;
        Some(cur.adj_close / prev.adj_close - 1.0)
    }

    /// Index of the last calendar day on or before `date`.
    pub fn day_on_or_before(&self, date: NaiveDate) -> Option<usize> {
        let p = self.calendar.partition_point(|d| *d <= date);
        p.checked_sub(1)
    }

    /// Simple-return matrix (days × assets) with NaN where undefined.
    pub fn return_matrix(&self) -> Vec<Vec<f64>> {
        (0..self.n_days())
            .map(|t| {
                (0..self.n_assets())
                    .map(|i| self.simple_return(i, t).unwrap_or(f64::NAN))
                    .collect()
            })
            .collect()
    }
}
