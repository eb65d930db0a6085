//! Cross-team metrics: crowd combination, the forecast/investment connection
//! coefficient, calibration curves, strategy classes, accuracy classes and
//! concentration proxies.

use std::collections::{BTreeMap, BTreeSet};

use serde::{Deserialize, Serialize};
use thiserror::Error;

use crate::exec::Execution;
use crate::scoring::{aggregate_scores, rps_by_asset, Evaluator, LeaderboardEntry, QuintileOutcome, ScoringError};
use crate::stats::{mean, pearson};
use crate::submission::{effective_submission, Submission, SubmissionRow, N_QUINTILES};

pub const COMBINED_TEAM: &str = "COMBINED";
pub const CALIBRATION_BIN: f64 = 0.05;
pub const CALIBRATION_BINS: usize = 20;

/// Top-fraction percentages used by the combination study.
pub const STUDY_PERCENTS: [u32; 20] = [
    5, 10, 15, 20, 25, 30, 35, 40, 45, 50, 55, 60, 65, 70, 75, 80, 85, 90, 95, 100,
];

#[derive(Debug, Error)]
pub enum AnalysisError {
    #[error("nothing to combine")]
    Empty,
    #[error("submission from {team} does not match the first asset set at {asset}")]
    AssetMismatch { team: String, asset: String },
    #[error("no forecast row for {0}")]
    MissingForecast(String),
    #[error(transparent)]
    Scoring(#[from] ScoringError),
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "lowercase")]
pub enum CombineMode {
    /// Average probabilities; weights are left at zero.
    Forecast,
    /// Average weights; probabilities are left uniform.
    Weights,
    Both,
}

/// Element-wise mean of several submissions over the first one's asset
/// order. The result is not validated: averaged weights can net out below
/// the minimum gross exposure.
pub fn combine(subs: &[&Submission], mode: CombineMode) -> Result<Submission, AnalysisError> {
    let first = subs.first().ok_or(AnalysisError::Empty)?;
    let n = subs.len() as f64;
    let lookups: Vec<BTreeMap<&str, &SubmissionRow>> = subs
        .iter()
        .map(|s| s.rows.iter().map(|r| (r.asset_id.as_str(), r)).collect())
        .collect();
    for (s, lookup) in subs.iter().zip(&lookups) {
        if lookup.len() != first.rows.len() {
            let asset = first
                .rows
                .iter()
                .find(|r| !lookup.contains_key(r.asset_id.as_str()))
                .map(|r| r.asset_id.clone())
                .unwrap_or_else(|| "<extra asset>".into());
            return Err(AnalysisError::AssetMismatch {
                team: s.team_id.clone(),
                asset,
            });
        }
    }
    let mut rows = Vec::with_capacity(first.rows.len());
    for row in &first.rows {
        let mut probs = [0.0; N_QUINTILES];
        let mut weight = 0.0;
        for (s, lookup) in subs.iter().zip(&lookups) {
            let r = lookup
                .get(row.asset_id.as_str())
                .ok_or_else(|| AnalysisError::AssetMismatch {
                    team: s.team_id.clone(),
                    asset: row.asset_id.clone(),
                })?;
            for k in 0..N_QUINTILES {
                probs[k] += r.probs[k];
            }
            weight += r.weight;
        }
        let probs = match mode {
            CombineMode::Weights => [1.0 / N_QUINTILES as f64; N_QUINTILES],
            _ => probs.map(|p| p / n),
        };
        let weight = match mode {
            CombineMode::Forecast => 0.0,
            _ => weight / n,
        };
        rows.push(SubmissionRow::new(row.asset_id.clone(), probs, weight));
    }
    Ok(Submission::new(COMBINED_TEAM, first.period_index, rows))
}

/// Teams in the top `percent` of `n_teams`: `max(1, floor(percent·n/100))`.
pub fn team_count(percent: u32, n_teams: usize) -> usize {
    (percent as usize * n_teams / 100).max(1)
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "lowercase")]
pub enum RankingMetric {
    Rps,
    Ir,
    Or,
}

impl RankingMetric {
    pub const ALL: [RankingMetric; 3] = [RankingMetric::Rps, RankingMetric::Ir, RankingMetric::Or];

    pub fn name(self) -> &'static str {
        match self {
            RankingMetric::Rps => "rps",
            RankingMetric::Ir => "ir",
            RankingMetric::Or => "or",
        }
    }
}

/// Team ids ordered best first by the chosen leaderboard rank; ties keep id
/// order.
pub fn rank_teams(entries: &[LeaderboardEntry], metric: RankingMetric) -> Vec<String> {
    let key = |e: &LeaderboardEntry| match metric {
        RankingMetric::Rps => e.rps_rank,
        RankingMetric::Ir => e.ir_rank,
        RankingMetric::Or => e.overall_rank,
    };
    let mut sorted: Vec<&LeaderboardEntry> = entries.iter().collect();
    sorted.sort_by(|a, b| key(a).total_cmp(&key(b)).then_with(|| a.team_id.cmp(&b.team_id)));
    sorted.into_iter().map(|e| e.team_id.clone()).collect()
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct CombinationPoint {
    pub metric: RankingMetric,
    pub percent: u32,
    pub n_teams: usize,
    pub rps: f64,
    /// Annualised IR of the combined portfolio over all periods.
    pub ir: Option<f64>,
}

/// Scores, for each percentage, the per-period average of the top teams'
/// effective submissions. `ranked` is best first.
pub fn top_fraction_study(
    evaluator: &Evaluator,
    universe: &BTreeSet<String>,
    histories: &BTreeMap<String, Vec<Submission>>,
    ranked: &[String],
    metric: RankingMetric,
    percents: &[u32],
    exec: Execution,
) -> Result<Vec<CombinationPoint>, AnalysisError> {
    if ranked.is_empty() {
        return Err(AnalysisError::Empty);
    }
    let points = exec.map(percents, |&percent| {
        let n = team_count(percent, ranked.len());
        let top = &ranked[..n];
        let mut scores = Vec::new();
        for period in evaluator.periods.iter().filter(|p| p.index >= 1) {
            let subs: Vec<&Submission> = top
                .iter()
                .filter_map(|t| histories.get(t))
                .filter_map(|h| effective_submission(h, period.index, universe))
                .collect();
            if subs.is_empty() {
                continue;
            }
            let combined = combine(&subs, CombineMode::Both)?;
            scores.push(evaluator.score_period(&combined, period)?);
        }
        if scores.is_empty() {
            return Err(AnalysisError::Empty);
        }
        let refs: Vec<_> = scores.iter().collect();
        let agg = aggregate_scores(COMBINED_TEAM, &refs)?;
        Ok(CombinationPoint {
            metric,
            percent,
            n_teams: n,
            rps: agg.rps,
            ir: agg.ir.ir_annualized,
        })
    });
    points.into_iter().collect()
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, PartialOrd, Ord, Hash, Serialize, Deserialize)]
#[serde(rename_all = "SCREAMING_SNAKE_CASE")]
pub enum ConnectionClass {
    WellConnected,
    Connected,
    WeaklyConnected,
    Disconnected,
    Opposite,
    Na,
}

impl ConnectionClass {
    pub const ALL: [ConnectionClass; 6] = [
        ConnectionClass::WellConnected,
        ConnectionClass::Connected,
        ConnectionClass::WeaklyConnected,
        ConnectionClass::Disconnected,
        ConnectionClass::Opposite,
        ConnectionClass::Na,
    ];

    pub fn name(self) -> &'static str {
        match self {
            ConnectionClass::WellConnected => "WELL_CONNECTED",
            ConnectionClass::Connected => "CONNECTED",
            ConnectionClass::WeaklyConnected => "WEAKLY_CONNECTED",
            ConnectionClass::Disconnected => "DISCONNECTED",
            ConnectionClass::Opposite => "OPPOSITE",
            ConnectionClass::Na => "NA",
        }
    }
}

pub fn connection_class(r: f64) -> ConnectionClass {
    if r >= 0.75 {
        ConnectionClass::WellConnected
    } else if r >= 0.5 {
        ConnectionClass::Connected
    } else if r >= 0.25 {
        ConnectionClass::WeaklyConnected
    } else if r > -0.25 {
        ConnectionClass::Disconnected
    } else {
        ConnectionClass::Opposite
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct ConnectionResult {
    pub team_id: String,
    /// `None` when the class is NA.
    pub r_con: Option<f64>,
    /// Mean over assets and submissions of `weight × probs`.
    pub mean_vector: [f64; N_QUINTILES],
    pub class: ConnectionClass,
}

/// Correlation of a 5-vector with the ranks 1..5, and its class. A constant
/// vector carries no direction and scores 0.
pub fn connection_from_vector(team_id: &str, v: [f64; N_QUINTILES]) -> ConnectionResult {
    let ranks: Vec<f64> = (1..=N_QUINTILES).map(|k| k as f64).collect();
    let r = pearson(&v, &ranks).unwrap_or(0.0);
    ConnectionResult {
        team_id: team_id.to_string(),
        r_con: Some(r),
        mean_vector: v,
        class: connection_class(r),
    }
}

/// Connection between a team's forecasts and its investment decisions. A
/// team whose every probability is the uniform 0.2 has no forecast signal
/// and is classed NA.
pub fn connection_coefficient(team_id: &str, history: &[Submission]) -> ConnectionResult {
    let uniform = 1.0 / N_QUINTILES as f64;
    let rows: Vec<&SubmissionRow> = history.iter().flat_map(|s| &s.rows).collect();
    let benchmark_like = rows
        .iter()
        .all(|r| r.probs.iter().all(|p| (p - uniform).abs() <= 1e-12));
    let mut v = [0.0; N_QUINTILES];
    for r in &rows {
        for k in 0..N_QUINTILES {
            v[k] += r.weight * r.probs[k] / rows.len() as f64;
        }
    }
    if benchmark_like {
        return ConnectionResult {
            team_id: team_id.to_string(),
            r_con: None,
            mean_vector: v,
            class: ConnectionClass::Na,
        };
    }
    connection_from_vector(team_id, v)
}

/// Count per class, every class present.
pub fn connection_census(results: &[ConnectionResult]) -> BTreeMap<ConnectionClass, usize> {
    let mut census: BTreeMap<ConnectionClass, usize> = ConnectionClass::ALL.iter().map(|&c| (c, 0)).collect();
    for r in results {
        *census.entry(r.class).or_default() += 1;
    }
    census
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct CalibrationPoint {
    pub bin_lower: f64,
    pub bin_mid: f64,
    pub count: usize,
    pub mean_assessed: Option<f64>,
    /// Share of the bin's cells whose quintile occurred, counting tied
    /// outcomes fractionally.
    pub relative_frequency: Option<f64>,
}

/// A forecast row and the realised outcome row for the same asset.
pub type ForecastCell = ([f64; N_QUINTILES], [f64; N_QUINTILES]);

pub fn calibration_bin(p: f64) -> usize {
    ((p / CALIBRATION_BIN + 1e-9).floor().max(0.0) as usize).min(CALIBRATION_BINS - 1)
}

/// Pairs each forecast row with its realised outcome by asset.
pub fn forecast_cells(
    subs: &[&Submission],
    outcomes: &[QuintileOutcome],
) -> Result<Vec<ForecastCell>, AnalysisError> {
    let mut cells = Vec::with_capacity(subs.len() * outcomes.len());
    for s in subs {
        let probs = s.probs_by_asset();
        for o in outcomes {
            let f = probs
                .get(o.asset_id.as_str())
                .ok_or_else(|| AnalysisError::MissingForecast(o.asset_id.clone()))?;
            cells.push((*f, o.q));
        }
    }
    Ok(cells)
}

/// Reliability curve over 0.05-wide bins of assessed probability; every
/// (row, quintile) cell lands in exactly one bin.
pub fn calibration_curve(cells: &[ForecastCell]) -> Vec<CalibrationPoint> {
    let mut count = [0usize; CALIBRATION_BINS];
    let mut assessed = [0.0; CALIBRATION_BINS];
    let mut hits = [0.0; CALIBRATION_BINS];
    for (f, q) in cells {
        for k in 0..N_QUINTILES {
            let b = calibration_bin(f[k]);
            count[b] += 1;
            assessed[b] += f[k];
            hits[b] += q[k];
        }
    }
    (0..CALIBRATION_BINS)
        .map(|b| {
            let lower = b as f64 * CALIBRATION_BIN;
            let n = count[b] as f64;
            CalibrationPoint {
                bin_lower: lower,
                bin_mid: lower + CALIBRATION_BIN / 2.0,
                count: count[b],
                mean_assessed: (count[b] > 0).then(|| assessed[b] / n),
                relative_frequency: (count[b] > 0).then(|| hits[b] / n),
            }
        })
        .collect()
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash, Serialize, Deserialize)]
#[serde(rename_all = "SCREAMING_SNAKE_CASE")]
pub enum Level {
    Low,
    Moderate,
    High,
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash, Serialize, Deserialize)]
#[serde(rename_all = "SCREAMING_SNAKE_CASE")]
pub enum WeightRange {
    Small,
    Large,
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash, Serialize, Deserialize)]
#[serde(rename_all = "SCREAMING_SNAKE_CASE")]
pub enum Directionality {
    Directional,
    NonDirectional,
}

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct StrategyProfile {
    pub gross_exposure: f64,
    pub n_invested: usize,
    /// `(max |w| − min |w|) / gross` over invested assets.
    pub weight_range: f64,
    pub exposure_class: Level,
    pub diversification_class: Level,
    pub weight_range_class: WeightRange,
    pub directionality: Directionality,
}

impl StrategyProfile {
    fn labels(&self) -> (Level, Level, WeightRange, Directionality) {
        (
            self.exposure_class,
            self.diversification_class,
            self.weight_range_class,
            self.directionality,
        )
    }
}

pub fn strategy_profile(sub: &Submission) -> StrategyProfile {
    let gross = sub.gross_exposure();
    let invested: Vec<f64> = sub.rows.iter().map(|r| r.weight).filter(|w| *w != 0.0).collect();
    let abs: Vec<f64> = invested.iter().map(|w| w.abs()).collect();
    let range = if abs.is_empty() || gross == 0.0 {
        0.0
    } else {
        let hi = abs.iter().copied().fold(f64::MIN, f64::max);
        let lo = abs.iter().copied().fold(f64::MAX, f64::min);
        (hi - lo) / gross
    };
    let exposure_class = if gross < 0.5 {
        Level::Low
    } else if gross < 0.8 {
        Level::Moderate
    } else {
        Level::High
    };
    let diversification_class = match invested.len() {
        0..=9 => Level::Low,
        10..=79 => Level::Moderate,
        _ => Level::High,
    };
    let directional = invested.iter().all(|w| *w > 0.0) || invested.iter().all(|w| *w < 0.0);
    StrategyProfile {
        gross_exposure: gross,
        n_invested: invested.len(),
        weight_range: range,
        exposure_class,
        diversification_class,
        weight_range_class: if range < 0.1 { WeightRange::Small } else { WeightRange::Large },
        directionality: if directional {
            Directionality::Directional
        } else {
            Directionality::NonDirectional
        },
    }
}

/// Number of consecutive effective submissions (over `periods`) whose
/// profiles differ in at least one class label.
pub fn strategy_changes(history: &[Submission], universe: &BTreeSet<String>, periods: &[u32]) -> usize {
    let profiles: Vec<StrategyProfile> = periods
        .iter()
        .filter_map(|&p| effective_submission(history, p, universe))
        .map(strategy_profile)
        .collect();
    profiles.windows(2).filter(|w| w[0].labels() != w[1].labels()).count()
}

/// Teams per change count.
pub fn change_histogram(counts: &[usize]) -> BTreeMap<usize, usize> {
    let mut h = BTreeMap::new();
    for &c in counts {
        *h.entry(c).or_default() += 1;
    }
    h
}

/// HIGH below 0.10, LOW above 0.22, MODERATE in between (both ends closed).
pub fn accuracy_class(rps: f64) -> Level {
    if rps < 0.10 {
        Level::High
    } else if rps <= 0.22 {
        Level::Moderate
    } else {
        Level::Low
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct WeightAccuracy {
    /// Pearson correlation of |weight| with per-asset RPS; 0 when either
    /// side has no variance.
    pub r: f64,
    pub degenerate: bool,
    pub n: usize,
}

pub fn weight_accuracy_correlation(pairs: &[(f64, f64)]) -> WeightAccuracy {
    let w: Vec<f64> = pairs.iter().map(|p| p.0.abs()).collect();
    let rps: Vec<f64> = pairs.iter().map(|p| p.1).collect();
    match pearson(&w, &rps) {
        Some(r) => WeightAccuracy {
            r,
            degenerate: false,
            n: pairs.len(),
        },
        None => WeightAccuracy {
            r: 0.0,
            degenerate: true,
            n: pairs.len(),
        },
    }
}

/// `(|weight|, RPS)` for every asset of every evaluation period the team
/// has an effective submission for.
pub fn weight_rps_pairs(
    evaluator: &Evaluator,
    history: &[Submission],
    universe: &BTreeSet<String>,
) -> Result<Vec<(f64, f64)>, AnalysisError> {
    let mut pairs = Vec::new();
    for p in evaluator.periods.iter().filter(|p| p.index >= 1) {
        let Some(sub) = effective_submission(history, p.index, universe) else {
            continue;
        };
        let rps = rps_by_asset(sub, &p.outcomes)?;
        let weights = sub.weights_by_asset();
        for (o, r) in p.outcomes.iter().zip(rps) {
            let w = weights.get(o.asset_id.as_str()).copied().unwrap_or(0.0);
            pairs.push((w.abs(), r));
        }
    }
    Ok(pairs)
}

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct Concentration {
    pub n_invested: usize,
    pub mean_abs_weight: f64,
}

pub fn concentration_metrics(sub: &Submission) -> Concentration {
    let abs: Vec<f64> = sub.rows.iter().map(|r| r.weight.abs()).filter(|w| *w > 0.0).collect();
    Concentration {
        n_invested: abs.len(),
        mean_abs_weight: if abs.is_empty() { 0.0 } else { mean(&abs) },
    }
}

#[cfg(test)]
mod tests {
    use super::*;
    use approx::assert_abs_diff_eq;

    fn sub(team: &str, rows: &[([f64; 5], f64)]) -> Submission {
        Submission::new(
            team,
            1,
            rows.iter()
                .enumerate()
                .map(|(i, (p, w))| SubmissionRow::new(format!("A{i}"), *p, *w))
                .collect(),
        )
    }

    #[test]
    fn two_one_hot_rows_average() {
        let a = sub("a", &[([1.0, 0.0, 0.0, 0.0, 0.0], 0.5)]);
        let b = sub("b", &[([0.0, 0.0, 0.0, 0.0, 1.0], -0.5)]);
        let c = combine(&[&a, &b], CombineMode::Both).unwrap();
        assert_eq!(c.rows[0].probs, [0.5, 0.0, 0.0, 0.0, 0.5]);
        assert_eq!(c.rows[0].weight, 0.0);
    }

    #[test]
    fn combine_rejects_empty_and_mismatched() {
        assert!(matches!(combine(&[], CombineMode::Both), Err(AnalysisError::Empty)));
        let a = sub("a", &[([0.2; 5], 0.5)]);
        let mut b = a.clone();
        b.rows[0].asset_id = "B".into();
        assert!(matches!(
            combine(&[&a, &b], CombineMode::Both),
            Err(AnalysisError::AssetMismatch { .. })
        ));
    }

    #[test]
    fn team_count_rounds_down_with_floor_one() {
        assert_eq!(team_count(5, 163), 8);
        assert_eq!(team_count(5, 10), 1);
        assert_eq!(team_count(100, 163), 163);
    }

    #[test]
    fn class_boundaries() {
        assert_eq!(connection_class(0.75), ConnectionClass::WellConnected);
        assert_eq!(connection_class(0.7499), ConnectionClass::Connected);
        assert_eq!(connection_class(0.5), ConnectionClass::Connected);
        assert_eq!(connection_class(0.25), ConnectionClass::WeaklyConnected);
        assert_eq!(connection_class(0.0), ConnectionClass::Disconnected);
        assert_eq!(connection_class(-0.25), ConnectionClass::Opposite);
        assert_eq!(accuracy_class(0.05), Level::High);
        assert_eq!(accuracy_class(0.10), Level::Moderate);
        assert_eq!(accuracy_class(0.16), Level::Moderate);
        assert_eq!(accuracy_class(0.22), Level::Moderate);
        assert_eq!(accuracy_class(0.2201), Level::Low);
    }

    #[test]
    fn benchmark_forecasts_are_na() {
        let s = sub("b", &[([0.2; 5], 0.5), ([0.2; 5], 0.5)]);
        let r = connection_coefficient("b", &[s]);
        assert_eq!(r.class, ConnectionClass::Na);
        assert_eq!(r.r_con, None);
    }

    #[test]
    fn calibration_bin_edges() {
        assert_eq!(calibration_bin(0.0), 0);
        assert_eq!(calibration_bin(0.2), 4);
        assert_eq!(calibration_bin(0.05), 1);
        assert_eq!(calibration_bin(1.0), 19);
    }

    #[test]
    fn profile_of_long_short_pair() {
        let s = sub("x", &[([0.2; 5], 0.3), ([0.2; 5], -0.1), ([0.2; 5], 0.0)]);
        let p = strategy_profile(&s);
        assert_eq!(p.n_invested, 2);
        assert_abs_diff_eq!(p.weight_range, 0.5, epsilon = 1e-12);
        assert_eq!(p.exposure_class, Level::Low);
        assert_eq!(p.directionality, Directionality::NonDirectional);
        assert_eq!(p.weight_range_class, WeightRange::Large);
    }
}
