//! Forecast and investment scoring: realised quintile outcomes, the ranked
//! probability score, portfolio log returns, the information ratio and the
//! overall-rank leaderboards.

use std::collections::{BTreeMap, BTreeSet};

use chrono::NaiveDate;
use serde::{Deserialize, Serialize};
use thiserror::Error;

use crate::exec::Execution;
use crate::market_data::PricePanel;
use crate::stats::{average_ranks, mean, sig12};
use crate::submission::{effective_submission, Submission, SubmissionRow, N_QUINTILES};

pub const TRADING_DAYS_PER_YEAR: f64 = 252.0;
pub const BENCHMARK_TEAM: &str = "BENCHMARK";

#[derive(Debug, Error)]
pub enum ScoringError {
    #[error("expected {expected} assets for quintile outcomes, got {got}")]
    AssetCount { expected: usize, got: usize },
    #[error("non-finite period return for {0}")]
    NonFiniteReturn(String),
    #[error("submission has no row for {0}")]
    MissingRow(String),
    #[error("portfolio return {0} <= -1, log return undefined")]
    RuinousReturn(f64),
    #[error("need at least 2 daily returns, got {0}")]
    TooFewDays(usize),
    #[error("price coverage gap: {0}")]
    Coverage(String),
    #[error("deadlines must be strictly increasing")]
    Schedule,
}

/// Realised rank of one asset over a period.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct QuintileOutcome {
    pub asset_id: String,
    /// Average quintile rank in `[1, 5]`.
    pub rank_value: f64,
    /// Mass per quintile, summing to 1.
    pub q: [f64; N_QUINTILES],
}

/// Ranks period total returns into quintiles, 1 = worst. Assets tied on a
/// quintile boundary share the average rank and split `q` across the
/// quintiles their positions span.
///
/// With `require_100` the universe size is pinned to 100; otherwise any
/// count ≥ 5 is accepted and position `p` (1-based, ascending) maps to
/// quintile `ceil(5p / N)`.
pub fn quintile_outcomes(
    period_returns: &[(String, f64)],
    require_100: bool,
) -> Result<Vec<QuintileOutcome>, ScoringError> {
    let n = period_returns.len();
    if (require_100 && n != 100) || n < N_QUINTILES {
        return Err(ScoringError::AssetCount {
            expected: 100,
            got: n,
        });
    }
    if let Some((t, _)) = period_returns.iter().find(|(_, r)| !r.is_finite()) {
        return Err(ScoringError::NonFiniteReturn(t.clone()));
    }
    let mut order: Vec<usize> = (0..n).collect();
    order.sort_by(|&a, &b| period_returns[a].1.total_cmp(&period_returns[b].1));
    let bucket = |pos: usize| -> usize { (N_QUINTILES * pos).div_ceil(n) };

    let mut out: Vec<Option<QuintileOutcome>> = vec![None; n];
    let mut i = 0;
    while i < n {
        let mut j = i;
        while j + 1 < n && period_returns[order[j + 1]].1 == period_returns[order[i]].1 {
            j += 1;
        }
        let size = (j - i + 1) as f64;
        let mut q = [0.0; N_QUINTILES];
        for pos in (i + 1)..=(j + 1) {
            q[bucket(pos) - 1] += 1.0 / size;
        }
        let rank_value = q.iter().enumerate().map(|(k, m)| (k + 1) as f64 * m).sum();
        for &k in &order[i..=j] {
            out[k] = Some(QuintileOutcome {
                asset_id: period_returns[k].0.clone(),
                rank_value,
                q,
            });
        }
        i = j + 1;
    }
    Ok(out.into_iter().map(|o| o.expect("every asset ranked")).collect())
}

/// Ranked probability score of one forecast vector against one outcome:
/// the mean squared gap between the cumulative distributions.
pub fn rps_asset(f: &[f64; N_QUINTILES], q: &[f64; N_QUINTILES]) -> f64 {
    let (mut cf, mut cq, mut acc) = (0.0, 0.0, 0.0);
    for k in 0..N_QUINTILES {
        cf += f[k];
        cq += q[k];
        acc += (cq - cf) * (cq - cf);
    }
    acc / N_QUINTILES as f64
}

/// Per-asset RPS for `sub`, in outcome order.
pub fn rps_by_asset(sub: &Submission, outcomes: &[QuintileOutcome]) -> Result<Vec<f64>, ScoringError> {
    let probs = sub.probs_by_asset();
    outcomes
        .iter()
        .map(|o| {
            probs
                .get(o.asset_id.as_str())
                .map(|f| rps_asset(f, &o.q))
                .ok_or_else(|| ScoringError::MissingRow(o.asset_id.clone()))
        })
        .collect()
}

/// Mean RPS across assets for one period.
pub fn rps_period(sub: &Submission, outcomes: &[QuintileOutcome]) -> Result<f64, ScoringError> {
    Ok(mean(&rps_by_asset(sub, outcomes)?))
}

/// Mean of per-period RPS values.
pub fn rps_overall(period_rps: &[f64]) -> f64 {
    mean(period_rps)
}

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct DailyReturn {
    /// Weighted simple return `RET_t`.
    pub simple: f64,
    /// `ln(1 + RET_t)`.
    pub log: f64,
}

/// Portfolio return for one day from `(weight, prev_price, price)` legs.
/// Capital not allocated earns zero.
pub fn portfolio_daily_return(
    legs: impl IntoIterator<Item = (f64, f64, f64)>,
) -> Result<DailyReturn, ScoringError> {
    let simple: f64 = legs
        .into_iter()
        .map(|(w, prev, cur)| if w == 0.0 { 0.0 } else { w * (cur / prev - 1.0) })
        .sum();
    if !(simple > -1.0) {
        return Err(ScoringError::RuinousReturn(simple));
    }
    Ok(DailyReturn {
        simple,
        log: simple.ln_1p(),
    })
}

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct IrStats {
    /// Sum of daily log returns.
    pub ret: f64,
    /// Standard deviation of daily log returns (divisor `T - 1`).
    pub sdp: f64,
    pub n_days: usize,
    /// `ret / sdp`; `None` when `sdp` is zero.
    pub ir_raw: Option<f64>,
    /// `(ret / T) / sdp × √252`; `None` when `sdp` is zero.
    pub ir_annualized: Option<f64>,
}

impl IrStats {
    pub fn ir(&self, annualize: bool) -> Option<f64> {
        if annualize {
            self.ir_annualized
        } else {
            self.ir_raw
        }
    }
}

pub fn information_ratio(daily_log_returns: &[f64]) -> Result<IrStats, ScoringError> {
    let t = daily_log_returns.len();
    if t < 2 {
        return Err(ScoringError::TooFewDays(t));
    }
    let ret: f64 = daily_log_returns.iter().sum();
    let m = ret / t as f64;
    let varp = daily_log_returns.iter().map(|r| (r - m) * (r - m)).sum::<f64>() / (t - 1) as f64;
    let sdp = varp.sqrt();
    let scale = daily_log_returns.iter().map(|r| r.abs()).fold(0.0, f64::max);
    let degenerate = sdp == 0.0 || sdp <= 1e-12 * scale;
    let (ir_raw, ir_annualized) = if degenerate {
        (None, None)
    } else {
        (Some(ret / sdp), Some(m / sdp * TRADING_DAYS_PER_YEAR.sqrt()))
    };
    Ok(IrStats {
        ret,
        sdp: if degenerate { 0.0 } else { sdp },
        n_days: t,
        ir_raw,
        ir_annualized,
    })
}

/// Uniform 0.2 forecast for every asset, no positions.
pub fn benchmark_forecast(universe: &[String]) -> Submission {
    Submission::new(
        BENCHMARK_TEAM,
        1,
        universe
            .iter()
            .map(|t| SubmissionRow::new(t.clone(), [0.2; N_QUINTILES], 0.0))
            .collect(),
    )
}

/// Equal long positions of `1/N` (0.01 for 100 assets) with uniform
/// forecasts, so the same object serves as the full benchmark submission.
pub fn benchmark_portfolio(universe: &[String]) -> Submission {
    let w = 1.0 / universe.len() as f64;
    Submission::new(
        BENCHMARK_TEAM,
        1,
        universe
            .iter()
            .map(|t| SubmissionRow::new(t.clone(), [0.2; N_QUINTILES], w))
            .collect(),
    )
}

/// One team's metrics within a leaderboard scope.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct TeamMetrics {
    pub team_id: String,
    pub rps: f64,
    pub ir: Option<f64>,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct RankedTeam {
    pub team_id: String,
    pub rps: f64,
    pub ir: Option<f64>,
    pub rps_rank: f64,
    pub ir_rank: f64,
    pub overall_rank: f64,
}

/// RPS ranked ascending, IR descending with undefined IRs after every
/// defined one; ties share the average rank. The overall rank is the mean
/// of the two ranks. Output is sorted by overall rank, then team id.
pub fn overall_rank(teams: &[TeamMetrics]) -> Vec<RankedTeam> {
    let rps_ranks = average_ranks(&teams.iter().map(|t| t.rps).collect::<Vec<_>>());
    // negate so that larger IR ranks first; undefined maps above every finite key
    let ir_keys: Vec<f64> = teams
        .iter()
        .map(|t| t.ir.map(|x| -x).unwrap_or(f64::INFINITY))
        .collect();
    let ir_ranks = average_ranks(&ir_keys);
    let mut out: Vec<RankedTeam> = teams
        .iter()
        .enumerate()
        .map(|(i, t)| RankedTeam {
            team_id: t.team_id.clone(),
            rps: t.rps,
            ir: t.ir,
            rps_rank: rps_ranks[i],
            ir_rank: ir_ranks[i],
            overall_rank: (rps_ranks[i] + ir_ranks[i]) / 2.0,
        })
        .collect();
    out.sort_by(|a, b| {
        a.overall_rank
            .total_cmp(&b.overall_rank)
            .then_with(|| a.team_id.cmp(&b.team_id))
    });
    out
}

/// Submission deadlines; period `k` covers the trading days strictly after
/// `deadlines[k]` up to and including the last trading day on or before
/// `deadlines[k + 1]`.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct PeriodSchedule {
    /// Index 0 is the trial run; the final entry closes the last period.
    pub deadlines: Vec<NaiveDate>,
}

impl Default for PeriodSchedule {
    fn default() -> Self {
        let ds = [
            "2022-02-06", "2022-03-06", "2022-04-03", "2022-05-01", "2022-05-29", "2022-06-26",
            "2022-07-24", "2022-08-21", "2022-09-18", "2022-10-16", "2022-11-13", "2022-12-11",
            "2023-01-08", "2023-02-05",
        ];
        PeriodSchedule {
            deadlines: ds
                .iter()
                .map(|s| NaiveDate::parse_from_str(s, "%Y-%m-%d").expect("static date"))
                .collect(),
        }
    }
}

impl PeriodSchedule {
    pub fn new(deadlines: Vec<NaiveDate>) -> Result<Self, ScoringError> {
        if deadlines.len() < 2 || deadlines.windows(2).any(|w| w[0] >= w[1]) {
            return Err(ScoringError::Schedule);
        }
        Ok(PeriodSchedule { deadlines })
    }

    /// Number of periods including the trial run.
    pub fn n_periods(&self) -> usize {
        self.deadlines.len() - 1
    }

    /// Evaluation period indices, excluding the trial run.
    pub fn evaluation_periods(&self) -> Vec<u32> {
        (1..self.n_periods() as u32).collect()
    }

    /// Quarter (1-based) of an evaluation period, three periods per quarter.
    pub fn quarter_of(period: u32) -> u32 {
        period.div_ceil(3)
    }
}

/// Price data resolved for one period.
#[derive(Debug, Clone)]
pub struct PeriodData {
    pub index: u32,
    pub start: NaiveDate,
    pub end: NaiveDate,
    pub outcomes: Vec<QuintileOutcome>,
    /// `relatives[d][i]` = S_{i,t}/S_{i,t-1} − 1 for the `d`-th day.
    pub relatives: Vec<Vec<f64>>,
    pub tickers: Vec<String>,
}

/// One submission scored on one period.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct PeriodScore {
    pub team_id: String,
    pub period_index: u32,
    pub rps: f64,
    pub ret: f64,
    pub sdp: f64,
    pub ir_raw: Option<f64>,
    pub ir_annualized: Option<f64>,
    #[serde(skip)]
    pub daily_log_returns: Vec<f64>,
}

/// Outcomes and daily price relatives for every period of a schedule.
#[derive(Debug, Clone)]
pub struct Evaluator {
    pub periods: Vec<PeriodData>,
    pub universe: Vec<String>,
}

impl Evaluator {
    /// Resolves every period of `schedule` for `universe` against `panel`.
    /// Periods whose final deadline lies beyond the data are skipped, but a
    /// period that starts inside the data must be fully covered.
    pub fn new(
        panel: &PricePanel,
        universe: &[String],
        schedule: &PeriodSchedule,
        require_100: bool,
    ) -> Result<Self, ScoringError> {
        let idx: Vec<usize> = universe
            .iter()
            .map(|t| {
                panel
                    .asset_index(t)
                    .ok_or_else(|| ScoringError::Coverage(format!("no prices for {t}")))
            })
            .collect::<Result<_, _>>()?;
        let last_date = *panel
            .calendar
            .last()
            .ok_or_else(|| ScoringError::Coverage("empty price panel".into()))?;
        let mut periods = Vec::new();
        for k in 0..schedule.n_periods() {
            let (d0, d1) = (schedule.deadlines[k], schedule.deadlines[k + 1]);
            if last_date < d1 {
                continue;
            }
            let base = panel
                .day_on_or_before(d0)
                .ok_or_else(|| ScoringError::Coverage(format!("no trading day on or before {d0}")))?;
            let end = panel
                .day_on_or_before(d1)
                .ok_or_else(|| ScoringError::Coverage(format!("no trading day before {d1}")))?;
            if end <= base + 1 {
                return Err(ScoringError::Coverage(format!(
                    "period {k} ({d0}..{d1}) has fewer than 2 trading days"
                )));
            }
            let mut totals = Vec::with_capacity(universe.len());
            for (t, &i) in universe.iter().zip(&idx) {
                let (p0, p1) = match (panel.row(i, base), panel.row(i, end)) {
                    (Some(a), Some(b)) => (a.adj_close, b.adj_close),
                    _ => {
                        return Err(ScoringError::Coverage(format!(
                            "{t} has no price at {} (period {k})",
                            panel.calendar[base]
                        )))
                    }
                };
                totals.push((t.clone(), p1 / p0 - 1.0));
            }
            let outcomes = quintile_outcomes(&totals, require_100)?;
            let relatives = ((base + 1)..=end)
                .map(|day| {
                    idx.iter()
                        .map(|&i| panel.simple_return(i, day).expect("covered above"))
                        .collect()
                })
                .collect();
            periods.push(PeriodData {
                index: k as u32,
                start: panel.calendar[base + 1],
                end: panel.calendar[end],
                outcomes,
                relatives,
                tickers: universe.to_vec(),
            });
        }
        Ok(Evaluator {
            periods,
            universe: universe.to_vec(),
        })
    }

    pub fn period(&self, index: u32) -> Option<&PeriodData> {
        self.periods.iter().find(|p| p.index == index)
    }

    /// Daily log returns of `sub`'s weights over `period`.
    pub fn portfolio_log_returns(
        &self,
        sub: &Submission,
        period: &PeriodData,
    ) -> Result<Vec<f64>, ScoringError> {
        let weights = sub.weights_by_asset();
        let w: Vec<f64> = period
            .tickers
            .iter()
            .map(|t| weights.get(t.as_str()).copied().unwrap_or(0.0))
            .collect();
        period
            .relatives
            .iter()
            .map(|rel| {
                portfolio_daily_return(w.iter().zip(rel).map(|(&w, &r)| (w, 1.0, 1.0 + r)))
                    .map(|d| d.log)
            })
            .collect()
    }

    pub fn score_period(&self, sub: &Submission, period: &PeriodData) -> Result<PeriodScore, ScoringError> {
        let rps = rps_period(sub, &period.outcomes)?;
        let daily = self.portfolio_log_returns(sub, period)?;
        let ir = information_ratio(&daily)?;
        Ok(PeriodScore {
            team_id: sub.team_id.clone(),
            period_index: period.index,
            rps,
            ret: ir.ret,
            sdp: ir.sdp,
            ir_raw: ir.ir_raw,
            ir_annualized: ir.ir_annualized,
            daily_log_returns: daily,
        })
    }

    /// Scores every evaluation period for which the team has an effective
    /// submission.
    pub fn score_team(
        &self,
        history: &[Submission],
        universe: &BTreeSet<String>,
    ) -> Result<Vec<PeriodScore>, ScoringError> {
        let mut out = Vec::new();
        for p in self.periods.iter().filter(|p| p.index >= 1) {
            if let Some(sub) = effective_submission(history, p.index, universe) {
                out.push(self.score_period(sub, p)?);
            }
        }
        Ok(out)
    }
}

/// Aggregate over a set of periods: mean RPS and IR over the concatenated
/// daily returns.
pub fn aggregate_scores(team_id: &str, scores: &[&PeriodScore]) -> Result<AggregateScore, ScoringError> {
    let rps = mean(&scores.iter().map(|s| s.rps).collect::<Vec<_>>());
    let daily: Vec<f64> = scores.iter().flat_map(|s| s.daily_log_returns.iter().copied()).collect();
    let ir = information_ratio(&daily)?;
    Ok(AggregateScore {
        team_id: team_id.to_string(),
        periods: scores.iter().map(|s| s.period_index).collect(),
        rps,
        ir,
    })
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct AggregateScore {
    pub team_id: String,
    pub periods: Vec<u32>,
    pub rps: f64,
    pub ir: IrStats,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct LeaderboardEntry {
    pub team_id: String,
    pub rps: f64,
    /// Annualised IR.
    pub ir: Option<f64>,
    pub ir_raw: Option<f64>,
    pub ret: f64,
    pub sdp: f64,
    pub rps_rank: f64,
    pub ir_rank: f64,
    #[serde(rename = "or")]
    pub overall_rank: f64,
    pub per_period: Vec<PeriodScore>,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct Leaderboard {
    /// `global`, `Q1`..`Q4` or `P1`..`P12`.
    pub scope: String,
    pub periods: Vec<u32>,
    pub entries: Vec<LeaderboardEntry>,
}

impl Leaderboard {
    pub fn entry(&self, team: &str) -> Option<&LeaderboardEntry> {
        self.entries.iter().find(|e| e.team_id == team)
    }

    /// CSV mirror of the JSON export, numbers at twelve significant digits.
    pub fn to_csv(&self) -> String {
        let opt = |x: Option<f64>| x.map(sig12).unwrap_or_else(|| "NA".into());
        let mut s = String::from("scope,team_id,rps,ir,ir_raw,ret,sdp,rps_rank,ir_rank,or\n");
        for e in &self.entries {
            s.push_str(&format!(
                "{},{},{},{},{},{},{},{},{},{}\n",
                self.scope,
                e.team_id,
                sig12(e.rps),
                opt(e.ir),
                opt(e.ir_raw),
                sig12(e.ret),
                sig12(e.sdp),
                sig12(e.rps_rank),
                sig12(e.ir_rank),
                sig12(e.overall_rank)
            ));
        }
        s
    }
}

/// Builds a leaderboard over `periods` from per-team period scores. Only
/// teams scored on every listed period take part.
pub fn build_leaderboard(
    scope: &str,
    periods: &[u32],
    scores: &BTreeMap<String, Vec<PeriodScore>>,
) -> Result<Leaderboard, ScoringError> {
    let mut aggregates = Vec::new();
    let mut per_team = Vec::new();
    for (team, list) in scores {
        let chosen: Vec<&PeriodScore> = periods
            .iter()
            .filter_map(|p| list.iter().find(|s| s.period_index == *p))
            .collect();
        if chosen.len() != periods.len() || chosen.is_empty() {
            continue;
        }
        let agg = aggregate_scores(team, &chosen)?;
        per_team.push(chosen.into_iter().cloned().collect::<Vec<_>>());
        aggregates.push(agg);
    }
    let metrics: Vec<TeamMetrics> = aggregates
        .iter()
        .map(|a| TeamMetrics {
            team_id: a.team_id.clone(),
            rps: a.rps,
            ir: a.ir.ir_annualized,
        })
        .collect();
    let ranked = overall_rank(&metrics);
    let entries = ranked
        .into_iter()
        .map(|r| {
            let i = aggregates.iter().position(|a| a.team_id == r.team_id).expect("ranked team");
            let a = &aggregates[i];
            LeaderboardEntry {
                team_id: r.team_id,
                rps: a.rps,
                ir: a.ir.ir_annualized,
                ir_raw: a.ir.ir_raw,
                ret: a.ir.ret,
                sdp: a.ir.sdp,
                rps_rank: r.rps_rank,
                ir_rank: r.ir_rank,
                overall_rank: r.overall_rank,
                per_period: per_team[i].clone(),
            }
        })
        .collect();
    Ok(Leaderboard {
        scope: scope.to_string(),
        periods: periods.to_vec(),
        entries,
    })
}

/// Period, quarter and global leaderboards for a set of team histories.
#[derive(Debug, Clone, Serialize, Deserialize)]
pub struct LeaderboardSet {
    pub global: Leaderboard,
    pub quarters: Vec<Leaderboard>,
    pub periods: Vec<Leaderboard>,
}

/// Scores every team (in parallel across teams) and assembles all
/// leaderboards. When `include_benchmark` is set, the benchmark submission
/// takes part under [`BENCHMARK_TEAM`].
pub fn score_competition(
    evaluator: &Evaluator,
    histories: &BTreeMap<String, Vec<Submission>>,
    include_benchmark: bool,
    exec: Execution,
) -> Result<(LeaderboardSet, BTreeMap<String, Vec<PeriodScore>>), ScoringError> {
    let universe: BTreeSet<String> = evaluator.universe.iter().cloned().collect();
    let mut teams: Vec<(String, Vec<Submission>)> =
        histories.iter().map(|(k, v)| (k.clone(), v.clone())).collect();
    if include_benchmark {
        teams.push((BENCHMARK_TEAM.to_string(), vec![benchmark_portfolio(&evaluator.universe)]));
    }
    let scored = exec.map(&teams, |(team, hist)| {
        evaluator.score_team(hist, &universe).map(|s| (team.clone(), s))
    });
    let mut scores = BTreeMap::new();
    for r in scored {
        let (team, s) = r?;
        scores.insert(team, s);
    }
    let eval_periods: Vec<u32> = evaluator.periods.iter().map(|p| p.index).filter(|&p| p >= 1).collect();
    let global = build_leaderboard("global", &eval_periods, &scores)?;
    let mut quarters = Vec::new();
    let mut qs: Vec<u32> = eval_periods.iter().map(|&p| PeriodSchedule::quarter_of(p)).collect();
    qs.dedup();
    for q in qs {
        let ps: Vec<u32> = eval_periods
            .iter()
            .copied()
            .filter(|&p| PeriodSchedule::quarter_of(p) == q)
            .collect();
        quarters.push(build_leaderboard(&format!("Q{q}"), &ps, &scores)?);
    }
    let periods = eval_periods
        .iter()
        .map(|&p| build_leaderboard(&format!("P{p}"), &[p], &scores))
        .collect::<Result<Vec<_>, _>>()?;
    Ok((
        LeaderboardSet {
            global,
            quarters,
            periods,
        },
        scores,
    ))
}
