//! Stock universe construction: per-stock features, per-sector k-means with
//! silhouette-chosen k, proportional sampling from clusters, and the static
//! ETF list.

use std::collections::BTreeMap;
use std::io::Read;

use chrono::NaiveDate;
use log::warn;
use rand::seq::index::sample;
use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;
use serde::{Deserialize, Serialize};
use thiserror::Error;

use crate::exec::Execution;
use crate::market_data::PriceHistory;
use crate::stats::{mean, population_sd, sample_sd};

pub const FEATURE_WINDOW: usize = 250;
pub const KMEANS_RESTARTS: usize = 20;
pub const KMEANS_MAX_ITER: usize = 300;
pub const MAX_CLUSTERS: usize = 8;
/// Histories must start within this many days of the long-window anchor.
pub const ANCHOR_SLACK_DAYS: u64 = 7;

pub const ETF_TICKERS: [&str; 50] = [
    "EWA", "EWC", "EWG", "EWH", "EWJ", "EWL", "EWQ", "EWT", "EWU", "EWY", "EWZ", "GSG", "HIGH.L", "HYG", "IAU",
    "ICLN", "IEAA.L", "IEF", "IEFM.L", "IEMG", "IEUS", "IEVL.L", "IGF", "INDA", "IUMO.L", "IUVL.L", "IVV", "IWM",
    "IXN", "JPEA.L", "LQD", "MCHI", "MVEU.L", "REET", "SEGA.L", "SHY", "SLV", "SPMV.L", "TLT", "VXX", "XLB", "XLC",
    "XLE", "XLF", "XLI", "XLK", "XLP", "XLU", "XLV", "XLY",
];

/// The stocks drawn for the original competition universe.
pub const M6_STOCK_TICKERS: [&str; 50] = [
    "ABBV", "ACN", "AEP", "AIZ", "ALLE", "AMAT", "AMP", "AMZN", "AVB", "AVY", "AXP", "BDX", "BF-B", "BMY", "BR",
    "CARR", "CDW", "CE", "CHTR", "CNC", "CNP", "COP", "CTAS", "CZR", "DG", "DPZ", "DRE", "DXC", "FB", "FTV", "GOOG",
    "GPC", "HIG", "HST", "JPM", "KR", "OGN", "PG", "PPL", "PRU", "PYPL", "RE", "ROL", "ROST", "UNH", "URI", "V",
    "VRSK", "WRK", "XOM",
];

#[derive(Debug, Error)]
pub enum UniverseError {
    #[error("{ticker}: not enough history for the {window} window")]
    InsufficientHistory { ticker: String, window: String },
    #[error("{0}: volume missing inside the feature window")]
    MissingVolume(String),
    #[error("{0}: non-finite feature")]
    NonFinite(String),
    #[error("sector plan totals {0}, expected 50")]
    PlanTotal(usize),
    #[error("no stocks for sector {0}")]
    UnknownSector(String),
    #[error("sector {sector}: quota {quota} exceeds its {available} stocks")]
    QuotaExceedsSector {
        sector: String,
        quota: usize,
        available: usize,
    },
    #[error("sector file line {line}: {message}")]
    SectorFile { line: usize, message: String },
    #[error("csv error: {0}")]
    Csv(#[from] csv::Error),
    #[error("io error: {0}")]
    Io(#[from] std::io::Error),
}

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct StockFeatures {
    pub avg_price_250: f64,
    pub price_cv_250: f64,
    pub price_cv_long: f64,
    pub avg_return_long: f64,
    pub sd_return_long: f64,
    pub total_return_250: f64,
    pub total_return_long: f64,
    pub avg_volume_250: f64,
    pub volume_cv_250: f64,
}

impl StockFeatures {
    pub fn to_vec(&self) -> Vec<f64> {
        vec![
            self.avg_price_250,
            self.price_cv_250,
            self.price_cv_long,
            self.avg_return_long,
            self.sd_return_long,
            self.total_return_250,
            self.total_return_long,
            self.avg_volume_250,
            self.volume_cv_250,
        ]
    }
}

pub fn long_window_start() -> NaiveDate {
    NaiveDate::from_ymd_opt(2018, 1, 1).expect("valid date")
}

fn cv(xs: &[f64]) -> f64 {
    sample_sd(xs) / mean(xs)
}

/// Features as of `as_of` from adjusted closes and volumes: the 250-day
/// window is the last 250 rows on or before `as_of`, the long window every
/// row from `long_start` on.
pub fn compute_features(
    history: &PriceHistory,
    as_of: NaiveDate,
    long_start: NaiveDate,
) -> Result<StockFeatures, UniverseError> {
    let ticker = &history.asset_id;
    let end = history.dates.partition_point(|d| *d <= as_of);
    let short = || UniverseError::InsufficientHistory {
        ticker: ticker.clone(),
        window: format!("{FEATURE_WINDOW}-day"),
    };
    if end < FEATURE_WINDOW {
        return Err(short());
    }
    let long_from = history.dates.partition_point(|d| *d < long_start);
    let anchored = history
        .dates
        .first()
        .is_some_and(|d| *d <= long_start + chrono::Days::new(ANCHOR_SLACK_DAYS));
    if !anchored || end < long_from + 2 {
        return Err(UniverseError::InsufficientHistory {
            ticker: ticker.clone(),
            window: format!("since {long_start}"),
        });
    }
    let prices: Vec<f64> = history.rows[..end].iter().map(|r| r.adj_close).collect();
    let recent = &prices[end - FEATURE_WINDOW..];
    let long = &prices[long_from..];
    let returns: Vec<f64> = long.windows(2).map(|w| w[1] / w[0] - 1.0).collect();
    let volumes: Vec<f64> = history.rows[end - FEATURE_WINDOW..end]
        .iter()
        .map(|r| r.volume.ok_or_else(|| UniverseError::MissingVolume(ticker.clone())))
        .collect::<Result<_, _>>()?;
    let f = StockFeatures {
        avg_price_250: mean(recent),
        price_cv_250: cv(recent),
        price_cv_long: cv(long),
        avg_return_long: mean(&returns),
        sd_return_long: if returns.len() > 1 { sample_sd(&returns) } else { 0.0 },
        total_return_250: recent[FEATURE_WINDOW - 1] / recent[0] - 1.0,
        total_return_long: long[long.len() - 1] / long[0] - 1.0,
        avg_volume_250: mean(&volumes),
        volume_cv_250: cv(&volumes),
    };
    if f.to_vec().iter().any(|x| !x.is_finite()) {
        return Err(UniverseError::NonFinite(ticker.clone()));
    }
    Ok(f)
}

/// Z-scores each column (population sd); constant columns become zero.
pub fn standardize_columns(rows: &[Vec<f64>]) -> Vec<Vec<f64>> {
    if rows.is_empty() {
        return Vec::new();
    }
    let d = rows[0].len();
    let stats: Vec<(f64, f64)> = (0..d)
        .map(|j| {
            let col: Vec<f64> = rows.iter().map(|r| r[j]).collect();
            (mean(&col), population_sd(&col))
        })
        .collect();
    rows.iter()
        .map(|r| {
            r.iter()
                .zip(&stats)
                .map(|(x, (m, s))| if *s > 0.0 { (x - m) / s } else { 0.0 })
                .collect()
        })
        .collect()
}

fn sq_dist(a: &[f64], b: &[f64]) -> f64 {
    a.iter().zip(b).map(|(x, y)| (x - y) * (x - y)).sum()
}

#[derive(Debug, Clone, PartialEq)]
pub struct KMeansFit {
    pub labels: Vec<usize>,
    pub centers: Vec<Vec<f64>>,
    pub inertia: f64,
}

fn kmeans_once(x: &[Vec<f64>], k: usize, rng: &mut ChaCha8Rng) -> KMeansFit {
    let n = x.len();
    let mut centers = vec![x[rng.random_range(0..n)].clone()];
    let mut d2: Vec<f64> = x.iter().map(|p| sq_dist(p, &centers[0])).collect();
    while centers.len() < k {
        let total: f64 = d2.iter().sum();
        let next = if total > 0.0 {
            let mut t = rng.random::<f64>() * total;
            let mut pick = n - 1;
            for (i, d) in d2.iter().enumerate() {
                if t < *d {
                    pick = i;
                    break;
                }
                t -= d;
            }
            pick
        } else {
            rng.random_range(0..n)
        };
        centers.push(x[next].clone());
        for (i, p) in x.iter().enumerate() {
            d2[i] = d2[i].min(sq_dist(p, &centers[centers.len() - 1]));
        }
    }
    let mut labels = vec![usize::MAX; n];
    for _ in 0..KMEANS_MAX_ITER {
        let mut changed = false;
        for (i, p) in x.iter().enumerate() {
            let best = (0..k)
                .min_by(|&a, &b| sq_dist(p, &centers[a]).total_cmp(&sq_dist(p, &centers[b])))
                .expect("k >= 1");
            if labels[i] != best {
                labels[i] = best;
                changed = true;
            }
        }
        for (c, center) in centers.iter_mut().enumerate() {
            let members: Vec<&Vec<f64>> = x.iter().zip(&labels).filter(|(_, l)| **l == c).map(|(p, _)| p).collect();
            if members.is_empty() {
                continue;
            }
            for (j, v) in center.iter_mut().enumerate() {
                *v = members.iter().map(|p| p[j]).sum::<f64>() / members.len() as f64;
            }
        }
        // an emptied cluster takes the point farthest from its centre
        for c in 0..k {
            if labels.contains(&c) {
                continue;
            }
            let far = (0..n)
                .max_by(|&a, &b| {
                    sq_dist(&x[a], &centers[labels[a]]).total_cmp(&sq_dist(&x[b], &centers[labels[b]]))
                })
                .expect("n >= 1");
            labels[far] = c;
            centers[c] = x[far].clone();
            changed = true;
        }
        if !changed {
            break;
        }
    }
    let inertia = x.iter().zip(&labels).map(|(p, &l)| sq_dist(p, &centers[l])).sum();
    KMeansFit {
        labels,
        centers,
        inertia,
    }
}

/// Best of `restarts` k-means++ runs by inertia.
pub fn kmeans(x: &[Vec<f64>], k: usize, restarts: usize, rng: &mut ChaCha8Rng) -> KMeansFit {
    let mut best: Option<KMeansFit> = None;
    for _ in 0..restarts.max(1) {
        let fit = kmeans_once(x, k, rng);
        if best.as_ref().is_none_or(|b| fit.inertia < b.inertia) {
            best = Some(fit);
        }
    }
    best.expect("at least one restart")
}

/// Mean silhouette width; points alone in their cluster score 0.
pub fn mean_silhouette(x: &[Vec<f64>], labels: &[usize], k: usize) -> f64 {
    let n = x.len();
    let mut total = 0.0;
    for i in 0..n {
        let mut sums = vec![0.0; k];
        let mut counts = vec![0usize; k];
        for j in 0..n {
            if i != j {
                sums[labels[j]] += sq_dist(&x[i], &x[j]).sqrt();
                counts[labels[j]] += 1;
            }
        }
        let own = labels[i];
        if counts[own] == 0 {
            continue;
        }
        let a = sums[own] / counts[own] as f64;
        let b = (0..k)
            .filter(|&c| c != own && counts[c] > 0)
            .map(|c| sums[c] / counts[c] as f64)
            .fold(f64::INFINITY, f64::min);
        let m = a.max(b);
        if m > 0.0 && b.is_finite() {
            total += (b - a) / m;
        }
    }
    total / n as f64
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct Clustering {
    pub k: usize,
    /// Cluster per stock, numbered by first appearance.
    pub labels: Vec<usize>,
    pub silhouette: Option<f64>,
}

impl Clustering {
    fn single(n: usize) -> Self {
        Clustering {
            k: 1,
            labels: vec![0; n],
            silhouette: None,
        }
    }

    pub fn sizes(&self) -> Vec<usize> {
        let mut s = vec![0; self.k];
        for &l in &self.labels {
            s[l] += 1;
        }
        s
    }
}

fn relabel(labels: &[usize]) -> (Vec<usize>, usize) {
    let mut map = BTreeMap::new();
    let out = labels
        .iter()
        .map(|l| {
            let next = map.len();
            *map.entry(*l).or_insert(next)
        })
        .collect();
    (out, map.len())
}

/// K-means on within-sector z-scored features, k picked by the largest mean
/// silhouette over `2..=min(8, n-1)` (ties to the smaller k). Fewer than
/// three stocks, or features with no spread, give one cluster.
pub fn cluster_sector(features: &[Vec<f64>], seed: u64) -> Clustering {
    let n = features.len();
    let x = standardize_columns(features);
    let k_max = MAX_CLUSTERS.min(n.saturating_sub(1));
    if k_max < 2 || x.iter().all(|r| r.iter().all(|v| *v == 0.0)) {
        return Clustering::single(n);
    }
    let mut rng = ChaCha8Rng::seed_from_u64(seed);
    let mut best: Option<(f64, Vec<usize>)> = None;
    for k in 2..=k_max {
        let fit = kmeans(&x, k, KMEANS_RESTARTS, &mut rng);
        let s = mean_silhouette(&x, &fit.labels, k);
        if best.as_ref().is_none_or(|(b, _)| s > *b) {
            best = Some((s, fit.labels));
        }
    }
    let (s, labels) = best.expect("k range not empty");
    let (labels, k) = relabel(&labels);
    if k < 2 {
        return Clustering::single(n);
    }
    Clustering {
        k,
        labels,
        silhouette: Some(s),
    }
}

/// Largest-remainder split of `quota` across clusters in proportion to
/// their sizes; remainder ties go to the larger cluster, then the earlier
/// one. Any cluster allotted more than it holds passes the excess to the
/// next-largest cluster with room, and a warning is returned.
pub fn apportion(sizes: &[usize], quota: usize) -> (Vec<usize>, Vec<String>) {
    let total: usize = sizes.iter().sum();
    let mut warnings = Vec::new();
    if total == 0 {
        return (vec![0; sizes.len()], warnings);
    }
    let ideal: Vec<f64> = sizes.iter().map(|&s| s as f64 * quota as f64 / total as f64).collect();
    let mut alloc: Vec<usize> = ideal.iter().map(|x| x.floor() as usize).collect();
    let mut order: Vec<usize> = (0..sizes.len()).collect();
    order.sort_by(|&a, &b| {
        let (ra, rb) = (ideal[a] - ideal[a].floor(), ideal[b] - ideal[b].floor());
        rb.total_cmp(&ra).then(sizes[b].cmp(&sizes[a])).then(a.cmp(&b))
    });
    let short = quota.saturating_sub(alloc.iter().sum());
    for &i in order.iter().cycle().take(short) {
        alloc[i] += 1;
    }
    let mut by_size: Vec<usize> = (0..sizes.len()).collect();
    by_size.sort_by(|&a, &b| sizes[b].cmp(&sizes[a]).then(a.cmp(&b)));
    for i in 0..sizes.len() {
        while alloc[i] > sizes[i] {
            let Some(&j) = by_size.iter().find(|&&j| alloc[j] < sizes[j]) else {
                break;
            };
            alloc[i] -= 1;
            alloc[j] += 1;
            let msg = format!("cluster {i} quota exceeds its {} stocks; one moved to cluster {j}", sizes[i]);
            warn!("{msg}");
            warnings.push(msg);
        }
    }
    (alloc, warnings)
}

#[derive(Debug, Clone, PartialEq, Eq, Serialize, Deserialize)]
pub struct SectorPlan {
    pub sector: String,
    pub sp500_count: usize,
    pub m6_count: usize,
}

/// The per-sector allocation of the original universe.
pub fn default_sector_plan() -> Vec<SectorPlan> {
    [
        ("Communication Services", 27, 3),
        ("Consumer Discretionary", 63, 6),
        ("Consumer Staples", 32, 3),
        ("Energy", 21, 2),
        ("Financial", 65, 7),
        ("Health Care", 64, 6),
        ("Industrial", 74, 7),
        ("Information Technology", 74, 7),
        ("Materials", 28, 3),
        ("Real Estate", 29, 3),
        ("Utilities", 28, 3),
    ]
    .into_iter()
    .map(|(s, n, m)| SectorPlan {
        sector: s.to_string(),
        sp500_count: n,
        m6_count: m,
    })
    .collect()
}

pub fn check_plan(plans: &[SectorPlan]) -> Result<(), UniverseError> {
    let total: usize = plans.iter().map(|p| p.m6_count).sum();
    if total != 50 {
        return Err(UniverseError::PlanTotal(total));
    }
    Ok(())
}

/// Tickers grouped into clusters for one sector.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct SectorClusters {
    pub sector: String,
    pub clusters: Vec<Vec<String>>,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct SectorDraw {
    pub sector: String,
    pub cluster_sizes: Vec<usize>,
    pub quotas: Vec<usize>,
    pub selected: Vec<String>,
    pub warnings: Vec<String>,
}

/// Draws each sector's quota from its clusters, uniformly without
/// replacement inside each cluster.
pub fn sample_universe(
    plans: &[SectorPlan],
    clusters: &[SectorClusters],
    seed: u64,
) -> Result<Vec<SectorDraw>, UniverseError> {
    check_plan(plans)?;
    let mut rng = ChaCha8Rng::seed_from_u64(seed);
    let mut out = Vec::with_capacity(plans.len());
    for plan in plans {
        let sc = clusters
            .iter()
            .find(|c| c.sector == plan.sector)
            .ok_or_else(|| UniverseError::UnknownSector(plan.sector.clone()))?;
        let sizes: Vec<usize> = sc.clusters.iter().map(Vec::len).collect();
        let available: usize = sizes.iter().sum();
        if plan.m6_count > available {
            return Err(UniverseError::QuotaExceedsSector {
                sector: plan.sector.clone(),
                quota: plan.m6_count,
                available,
            });
        }
        let (quotas, warnings) = apportion(&sizes, plan.m6_count);
        let mut selected = Vec::with_capacity(plan.m6_count);
        for (members, &q) in sc.clusters.iter().zip(&quotas) {
            let mut picks: Vec<String> = sample(&mut rng, members.len(), q)
                .into_iter()
                .map(|i| members[i].clone())
                .collect();
            picks.sort();
            selected.extend(picks);
        }
        out.push(SectorDraw {
            sector: plan.sector.clone(),
            cluster_sizes: sizes,
            quotas,
            selected,
            warnings,
        });
    }
    Ok(out)
}

/// `ticker,sector` rows (header optional).
pub fn read_sector_file<R: Read>(reader: R) -> Result<BTreeMap<String, String>, UniverseError> {
    let mut rdr = csv::ReaderBuilder::new()
        .has_headers(false)
        .trim(csv::Trim::All)
        .flexible(true)
        .from_reader(reader);
    let mut out = BTreeMap::new();
    for (i, rec) in rdr.records().enumerate() {
        let rec = rec?;
        if rec.len() != 2 {
            return Err(UniverseError::SectorFile {
                line: i + 1,
                message: format!("expected 2 fields, got {}", rec.len()),
            });
        }
        if i == 0 && rec[0].eq_ignore_ascii_case("ticker") {
            continue;
        }
        out.insert(rec[0].to_string(), rec[1].to_string());
    }
    Ok(out)
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct SectorClustering {
    pub sector: String,
    pub tickers: Vec<String>,
    pub clustering: Clustering,
}

/// Features and clusters for every planned sector (sectors in parallel).
/// Stocks whose features cannot be computed are dropped with a warning.
pub fn cluster_sectors(
    histories: &BTreeMap<String, PriceHistory>,
    sectors: &BTreeMap<String, String>,
    plans: &[SectorPlan],
    as_of: NaiveDate,
    seed: u64,
    exec: Execution,
) -> Result<Vec<SectorClustering>, UniverseError> {
    let jobs: Vec<(usize, &SectorPlan)> = plans.iter().enumerate().collect();
    let results = exec.map(&jobs, |&(i, plan)| {
        let mut tickers = Vec::new();
        let mut feats = Vec::new();
        for (t, _) in sectors.iter().filter(|(_, s)| **s == plan.sector) {
            let Some(h) = histories.get(t) else {
                warn!("{t}: no price history, skipped");
                continue;
            };
            match compute_features(h, as_of, long_window_start()) {
                Ok(f) => {
                    tickers.push(t.clone());
                    feats.push(f.to_vec());
                }
                Err(e) => warn!("{e}; skipped"),
            }
        }
        if tickers.is_empty() {
            return Err(UniverseError::UnknownSector(plan.sector.clone()));
        }
        let clustering = cluster_sector(&feats, seed.wrapping_add(i as u64));
        Ok(SectorClustering {
            sector: plan.sector.clone(),
            tickers,
            clustering,
        })
    });
    results.into_iter().collect()
}

impl SectorClustering {
    pub fn groups(&self) -> SectorClusters {
        let mut clusters = vec![Vec::new(); self.clustering.k];
        for (t, &l) in self.tickers.iter().zip(&self.clustering.labels) {
            clusters[l].push(t.clone());
        }
        SectorClusters {
            sector: self.sector.clone(),
            clusters,
        }
    }
}

/// Sampled stocks (sorted) followed by the static ETFs, one per line.
pub fn universe_text(stocks: &[String]) -> String {
    let mut s: Vec<&str> = stocks.iter().map(String::as_str).collect();
    s.sort_unstable();
    let mut out = String::new();
    for t in s.into_iter().chain(ETF_TICKERS) {
        out.push_str(t);
        out.push('\n');
    }
    out
}
