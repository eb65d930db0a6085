//! Analysis studies over a set of scored submissions. The investment
//! studies refit the risk model at every period's deadline, using only data
//! available then.

use std::collections::{BTreeMap, BTreeSet};

use clap::ValueEnum;
use log::{info, warn};
use m6_core::analysis::{
    accuracy_class, change_histogram, concentration_metrics, connection_census, connection_coefficient,
    forecast_cells, rank_teams, strategy_changes, strategy_profile, top_fraction_study, weight_accuracy_correlation,
    weight_rps_pairs, CalibrationPoint, ConnectionClass, RankingMetric, STUDY_PERCENTS,
};
use m6_core::analysis::calibration_curve;
use m6_core::factor_risk::{annualized_vol, Covariance, FactorRiskModel};
use m6_core::market_data::PricePanel;
use m6_core::portfolio_opt::{
    alpha_vector, ic_quintile_report, max_sharpe, max_sharpe_risk_target, realized_ic, reverse_optimize,
    score_submission, IcStudyEntry, OptimizedPortfolio, OptimizerOptions, ReverseConfig, SolverStatus, TRADING_DAYS,
};
use m6_core::scoring::{rps_by_asset, score_competition, Evaluator, PeriodData, PeriodScore};
use m6_core::stats::{mean, median, pearson, quantile, sample_sd, sig12};
use m6_core::submission::{effective_submission, Submission, SubmissionRow};
use m6_core::volatility::VolatilityPanel;
use m6_core::Execution;
use serde::Serialize;

use crate::cmd::riskmodel::{day_index, factor_config, fit_at, params};
use crate::config::RunConfig;
use crate::error::{domain, env, CliError, CliResult};
use crate::inputs;
use crate::output::Output;

#[derive(Debug, Clone, Copy, PartialEq, Eq, ValueEnum)]
pub enum Study {
    Optimize,
    RiskTarget,
    Reverse,
    Crowds,
    Connection,
    Calibration,
    Strategy,
    Concentration,
}

type Histories = BTreeMap<String, Vec<Submission>>;

pub fn run(cfg: &RunConfig, out: &mut Output, study: Study) -> CliResult<()> {
    let what = format!("study {}", study.to_possible_value().expect("named").get_name());
    let subs_dir = cfg.require("submissions", &cfg.submissions, &what)?;
    let histories = inputs::submissions(subs_dir)?;
    let universe = inputs::universe(cfg)?;
    match study {
        Study::Connection => return connection(out, &histories),
        Study::Strategy => return strategy(cfg, out, &histories, &universe),
        _ => {}
    }
    let prices = cfg.require("prices", &cfg.prices, &what)?;
    let panel = inputs::price_panel(prices, &universe)?;
    let ev = inputs::evaluator(cfg, &panel, &universe)?;
    match study {
        Study::Optimize | Study::RiskTarget | Study::Reverse => {
            let models = period_models(cfg, &panel, &ev)?;
            match study {
                Study::Reverse => reverse(out, &ev, &histories, &models),
                _ => optimize(cfg, out, &ev, &histories, &models, study == Study::RiskTarget),
            }
        }
        Study::Crowds => crowds(out, &ev, &histories),
        Study::Calibration => calibration(out, &ev, &histories),
        Study::Concentration => concentration(out, &ev, &histories),
        Study::Connection | Study::Strategy => unreachable!("handled above"),
    }
}

fn universe_set(ev: &Evaluator) -> BTreeSet<String> {
    ev.universe.iter().cloned().collect()
}

fn eval_periods(ev: &Evaluator) -> impl Iterator<Item = &PeriodData> {
    ev.periods.iter().filter(|p| p.index >= 1)
}

fn opt_str(x: Option<f64>) -> String {
    x.map(sig12).unwrap_or_else(|| "NA".into())
}

struct PeriodModel {
    period: u32,
    model: FactorRiskModel,
    cov: Covariance,
}

/// One model per evaluation period, fitted as of the last trading day on or
/// before the period's submission deadline.
fn period_models(cfg: &RunConfig, panel: &PricePanel, ev: &Evaluator) -> CliResult<Vec<PeriodModel>> {
    let schedule = inputs::schedule(cfg)?;
    let factors = factor_config(cfg)?;
    let params = params(cfg)?;
    let vol = VolatilityPanel::from_prices(panel, cfg.min_history, Execution::default());
    let mut out = Vec::new();
    for p in eval_periods(ev) {
        let deadline = schedule.deadlines[p.index as usize];
        let day = day_index(panel, deadline)?;
        let (model, file) = fit_at(panel, &vol, day, &factors, params, cfg)
            .map_err(|e| CliError::Domain(format!("risk model for period {}: {e}", p.index)))?;
        info!("period {}: risk model fitted as of {}", p.index, file.as_of);
        let cov = model.covariance().map_err(domain)?;
        out.push(PeriodModel {
            period: p.index,
            model,
            cov,
        });
    }
    Ok(out)
}

/// Simple return of each of `tickers` over the whole period.
fn period_asset_returns(period: &PeriodData, tickers: &[String]) -> Vec<f64> {
    tickers
        .iter()
        .map(|t| {
            let i = period.tickers.iter().position(|x| x == t).expect("model asset in universe");
            period.relatives.iter().map(|r| 1.0 + r[i]).product::<f64>() - 1.0
        })
        .collect()
}

fn weights_in(sub: &Submission, tickers: &[String]) -> Vec<f64> {
    let w = sub.weights_by_asset();
    tickers.iter().map(|t| w.get(t.as_str()).copied().unwrap_or(0.0)).collect()
}

/// Realised performance of one portfolio over a period.
#[derive(Debug, Clone, Copy, Serialize)]
struct Realized {
    ex_ante_vol: f64,
    /// Annualised from the period's mean daily log return.
    ret: f64,
    ex_post_vol: f64,
    ir: Option<f64>,
}

fn realized(score: &PeriodScore, ex_ante_vol: f64) -> Realized {
    let n = score.daily_log_returns.len() as f64;
    Realized {
        ex_ante_vol,
        ret: score.ret / n * TRADING_DAYS,
        ex_post_vol: score.sdp * TRADING_DAYS.sqrt(),
        ir: score.ir_annualized,
    }
}

#[derive(Debug, Clone, Serialize)]
struct Instance {
    team_id: String,
    period: u32,
    ic: f64,
    ic_degenerate: bool,
    status: SolverStatus,
    /// Minimum ex-ante volatility asked of the optimiser, if any.
    target_vol: Option<f64>,
    submitted: Realized,
    optimal: Realized,
}

#[derive(Debug, Clone, Serialize)]
struct Skipped {
    team_id: String,
    period: u32,
    reason: String,
}

fn optimize_one(
    cfg: &RunConfig,
    ev: &Evaluator,
    period: &PeriodData,
    pm: &PeriodModel,
    sub: &Submission,
    risk_target: bool,
) -> Result<Instance, String> {
    let tickers = &pm.model.tickers;
    let probs_by = sub.probs_by_asset();
    let probs: Vec<[f64; 5]> = tickers
        .iter()
        .map(|t| probs_by.get(t.as_str()).copied().ok_or_else(|| format!("no forecast for {t}")))
        .collect::<Result<_, _>>()?;
    let scores = score_submission(&probs);
    let var20: Vec<f64> = (0..tickers.len()).map(|i| pm.cov.matrix[(i, i)]).collect();
    let alpha = alpha_vector(&scores, cfg.ic, &var20, true);
    let w_sub = weights_in(sub, tickers);
    let sub_vol = annualized_vol(&w_sub, &pm.cov.matrix).map_err(|e| e.to_string())?;
    let opts = OptimizerOptions {
        seed: cfg.seed,
        ..OptimizerOptions::default()
    };
    let opt: OptimizedPortfolio = if risk_target {
        max_sharpe_risk_target(&alpha, &pm.cov.matrix, sub_vol, &opts)
    } else {
        max_sharpe(&alpha, &pm.cov.matrix, &opts)
    }
    .map_err(|e| e.to_string())?;
    let ic = realized_ic(&scores, &period_asset_returns(period, tickers));

    let opt_w: BTreeMap<&str, f64> = tickers.iter().map(String::as_str).zip(opt.weights.iter().copied()).collect();
    let rows = sub
        .rows
        .iter()
        .map(|r| SubmissionRow::new(r.asset_id.clone(), r.probs, opt_w.get(r.asset_id.as_str()).copied().unwrap_or(0.0)))
        .collect();
    let optimized = Submission::new(sub.team_id.clone(), period.index, rows);
    let s_sub = ev.score_period(sub, period).map_err(|e| e.to_string())?;
    let s_opt = ev.score_period(&optimized, period).map_err(|e| e.to_string())?;
    Ok(Instance {
        team_id: sub.team_id.clone(),
        period: period.index,
        ic: ic.ic,
        ic_degenerate: ic.degenerate,
        status: opt.status,
        target_vol: risk_target.then_some(sub_vol),
        submitted: realized(&s_sub, sub_vol),
        optimal: realized(&s_opt, opt.ex_ante_vol),
    })
}

/// Every (team, period) with an effective submission, best-effort.
fn instances<T: Send>(
    ev: &Evaluator,
    histories: &Histories,
    models: &[PeriodModel],
    f: impl Fn(&PeriodData, &PeriodModel, &Submission) -> Result<T, String> + Sync,
) -> (Vec<T>, Vec<Skipped>) {
    let universe = universe_set(ev);
    let mut jobs = Vec::new();
    for pm in models {
        let period = ev.period(pm.period).expect("model per evaluation period");
        for history in histories.values() {
            if let Some(sub) = effective_submission(history, pm.period, &universe) {
                jobs.push((period, pm, sub));
            }
        }
    }
    let results = Execution::default().map(&jobs, |(period, pm, sub)| f(period, pm, sub));
    let mut ok = Vec::new();
    let mut skipped = Vec::new();
    for ((period, _, sub), r) in jobs.iter().zip(results) {
        match r {
            Ok(x) => ok.push(x),
            Err(reason) => skipped.push(Skipped {
                team_id: sub.team_id.clone(),
                period: period.index,
                reason,
            }),
        }
    }
    (ok, skipped)
}

#[derive(Debug, Serialize)]
struct CohortRow {
    label: String,
    ex_ante_vol_pct: f64,
    ex_post_vol_pct: f64,
    ex_post_return_pct: f64,
    ex_post_ir: f64,
}

/// Mean and median statistics for the instances of `teams`, submitted
/// against re-optimised.
fn cohort_table(instances: &[&Instance], teams: &[String]) -> Vec<CohortRow> {
    let members: Vec<&&Instance> = instances.iter().filter(|i| teams.contains(&i.team_id)).collect();
    if members.is_empty() {
        return Vec::new();
    }
    let mut rows = Vec::new();
    for (agg_name, agg) in [("Mean", mean as fn(&[f64]) -> f64), ("Median", median)] {
        for (side, pick) in [
            ("Submission", (|i: &Instance| i.submitted) as fn(&Instance) -> Realized),
            ("Re-optimized", |i: &Instance| i.optimal),
        ] {
            let col = |g: fn(&Realized) -> f64| agg(&members.iter().map(|i| g(&pick(i))).collect::<Vec<_>>());
            let irs: Vec<f64> = members.iter().filter_map(|i| pick(i).ir).collect();
            rows.push(CohortRow {
                label: format!("{side} ({agg_name})"),
                ex_ante_vol_pct: 100.0 * col(|r| r.ex_ante_vol),
                ex_post_vol_pct: 100.0 * col(|r| r.ex_post_vol),
                ex_post_return_pct: 100.0 * col(|r| r.ret),
                ex_post_ir: if irs.is_empty() { f64::NAN } else { agg(&irs) },
            });
        }
    }
    rows
}

fn cohort_csv(rows: &[CohortRow]) -> String {
    let mut s = String::from("portfolio,ex_ante_vol_pct,ex_post_vol_pct,ex_post_return_pct,ex_post_ir\n");
    for r in rows {
        s.push_str(&format!(
            "{},{},{},{},{}\n",
            r.label,
            sig12(r.ex_ante_vol_pct),
            sig12(r.ex_post_vol_pct),
            sig12(r.ex_post_return_pct),
            sig12(r.ex_post_ir)
        ));
    }
    s
}

#[derive(Debug, Serialize)]
struct OptimizeReport<'a> {
    ic: f64,
    risk_target: bool,
    n_instances: usize,
    n_converged: usize,
    table: Vec<m6_core::portfolio_opt::IcQuintileRow>,
    top10_rps: Vec<String>,
    top10_rps_table: Vec<CohortRow>,
    top10_ir: Vec<String>,
    top10_ir_table: Vec<CohortRow>,
    instances: &'a [Instance],
    skipped: &'a [Skipped],
}

fn optimize(
    cfg: &RunConfig,
    out: &mut Output,
    ev: &Evaluator,
    histories: &Histories,
    models: &[PeriodModel],
    risk_target: bool,
) -> CliResult<()> {
    let name = if risk_target { "risk_target" } else { "optimize" };
    let (all, skipped) = instances(ev, histories, models, |period, pm, sub| {
        optimize_one(cfg, ev, period, pm, sub, risk_target)
    });
    for s in &skipped {
        warn!("{name}: skipped {} period {}: {}", s.team_id, s.period, s.reason);
    }
    let kept: Vec<&Instance> = all
        .iter()
        .filter(|i| i.status == SolverStatus::Converged && i.submitted.ir.is_some() && i.optimal.ir.is_some())
        .collect();
    if kept.is_empty() {
        return Err(domain(format!("{name}: no optimisation converged")));
    }
    let entries: Vec<IcStudyEntry> = kept
        .iter()
        .map(|i| IcStudyEntry {
            team_id: i.team_id.clone(),
            period: i.period,
            ic: i.ic,
            submitted_risk: i.submitted.ex_ante_vol,
            optimal_risk: i.optimal.ex_ante_vol,
            submitted_return: i.submitted.ret,
            optimal_return: i.optimal.ret,
            submitted_ir: i.submitted.ir.expect("filtered"),
            optimal_ir: i.optimal.ir.expect("filtered"),
        })
        .collect();
    let table = ic_quintile_report(&entries);

    let mut csv = String::from(
        "ic_quintile,realized_ic,submission_ex_ante_risk_pct,optimal_ex_ante_risk_pct,\
         submission_return_pct,optimal_return_pct,submission_ir,optimal_ir\n",
    );
    for r in &table {
        csv.push_str(&format!(
            "{},{},{},{},{},{},{},{}\n",
            r.quintile,
            sig12(r.median_ic),
            sig12(100.0 * r.submitted_risk),
            sig12(100.0 * r.optimal_risk),
            sig12(100.0 * r.submitted_return),
            sig12(100.0 * r.optimal_return),
            sig12(r.submitted_ir),
            sig12(r.optimal_ir)
        ));
    }
    out.write(&format!("study/{name}_ic_quintiles.csv"), csv.as_bytes())?;

    let mut inst_csv = String::from(
        "team_id,period,ic,status,target_vol,submitted_ex_ante_vol,optimal_ex_ante_vol,submitted_return,\
         optimal_return,submitted_ex_post_vol,optimal_ex_post_vol,submitted_ir,optimal_ir\n",
    );
    for i in &all {
        inst_csv.push_str(&format!(
            "{},{},{},{},{},{},{},{},{},{},{},{},{}\n",
            i.team_id,
            i.period,
            sig12(i.ic),
            serde_json::to_value(i.status).map_err(env)?.as_str().unwrap_or_default(),
            opt_str(i.target_vol),
            sig12(i.submitted.ex_ante_vol),
            sig12(i.optimal.ex_ante_vol),
            sig12(i.submitted.ret),
            sig12(i.optimal.ret),
            sig12(i.submitted.ex_post_vol),
            sig12(i.optimal.ex_post_vol),
            opt_str(i.submitted.ir),
            opt_str(i.optimal.ir)
        ));
    }
    out.write(&format!("study/{name}_instances.csv"), inst_csv.as_bytes())?;

    let (boards, _) = score_competition(ev, histories, false, Execution::default()).map_err(domain)?;
    let top = |m| -> Vec<String> { rank_teams(&boards.global.entries, m).into_iter().take(10).collect() };
    let (top_rps, top_ir) = (top(RankingMetric::Rps), top(RankingMetric::Ir));
    let rps_rows = cohort_table(&kept, &top_rps);
    let ir_rows = cohort_table(&kept, &top_ir);
    out.write(&format!("study/{name}_top10_rps.csv"), cohort_csv(&rps_rows).as_bytes())?;
    out.write(&format!("study/{name}_top10_ir.csv"), cohort_csv(&ir_rows).as_bytes())?;

    println!(
        "{name}: {} instances, {} converged, {} skipped",
        all.len(),
        kept.len(),
        skipped.len()
    );
    for r in &table {
        println!(
            "  IC quintile {}: n={} realized IC {:.3}, risk {:.1}% -> {:.1}%, IR {:.2} -> {:.2}",
            r.quintile,
            r.count,
            r.median_ic,
            100.0 * r.submitted_risk,
            100.0 * r.optimal_risk,
            r.submitted_ir,
            r.optimal_ir
        );
    }
    let report = OptimizeReport {
        ic: cfg.ic,
        risk_target,
        n_instances: all.len(),
        n_converged: kept.len(),
        table,
        top10_rps: top_rps,
        top10_rps_table: rps_rows,
        top10_ir: top_ir,
        top10_ir_table: ir_rows,
        instances: &all,
        skipped: &skipped,
    };
    out.write_json(&format!("study/{name}.json"), &report)?;
    Ok(())
}

#[derive(Debug, Clone, Serialize)]
struct ReverseInstance {
    team_id: String,
    period: u32,
    /// Pearson correlation of the submitted expected rank with the implied
    /// rank.
    correlation: f64,
}

#[derive(Debug, Serialize)]
struct ReverseSummary {
    n: usize,
    skipped: usize,
    mean: f64,
    sd: f64,
    p25: f64,
    p50: f64,
    p75: f64,
}

fn reverse(out: &mut Output, ev: &Evaluator, histories: &Histories, models: &[PeriodModel]) -> CliResult<()> {
    let cfg = ReverseConfig::default();
    let (all, skipped) = instances(ev, histories, models, |period, pm, sub| {
        let tickers = &pm.model.tickers;
        let w = weights_in(sub, tickers);
        let implied = reverse_optimize(&w, &pm.cov.matrix, &cfg).map_err(|e| e.to_string())?;
        let probs = sub.probs_by_asset();
        let submitted: Vec<f64> = tickers
            .iter()
            .map(|t| {
                probs
                    .get(t.as_str())
                    .map(|p| p.iter().enumerate().map(|(k, x)| (k + 1) as f64 * x).sum())
                    .ok_or_else(|| format!("no forecast for {t}"))
            })
            .collect::<Result<_, _>>()?;
        let ranks: Vec<f64> = implied.ranks.iter().map(|&r| r as f64).collect();
        let correlation = pearson(&submitted, &ranks).ok_or("constant submitted forecast")?;
        Ok(ReverseInstance {
            team_id: sub.team_id.clone(),
            period: period.index,
            correlation,
        })
    });
    if all.is_empty() {
        return Err(domain("reverse: no submission had a usable forecast and portfolio"));
    }
    let r: Vec<f64> = all.iter().map(|i| i.correlation).collect();
    let summary = ReverseSummary {
        n: r.len(),
        skipped: skipped.len(),
        mean: mean(&r),
        sd: if r.len() > 1 { sample_sd(&r) } else { 0.0 },
        p25: quantile(&r, 0.25),
        p50: quantile(&r, 0.5),
        p75: quantile(&r, 0.75),
    };
    let mut csv = String::from("team_id,period,correlation\n");
    for i in &all {
        csv.push_str(&format!("{},{},{}\n", i.team_id, i.period, sig12(i.correlation)));
    }
    out.write("study/reverse_instances.csv", csv.as_bytes())?;
    let s = &summary;
    let table = format!(
        "mean,sd,p25,p50,p75,n,skipped\n{},{},{},{},{},{},{}\n",
        sig12(s.mean),
        sig12(s.sd),
        sig12(s.p25),
        sig12(s.p50),
        sig12(s.p75),
        s.n,
        s.skipped
    );
    out.write("study/reverse_summary.csv", table.as_bytes())?;
    println!(
        "reverse: n={} mean {:.3} sd {:.3} quartiles {:.3} / {:.3} / {:.3} ({} skipped)",
        s.n, s.mean, s.sd, s.p25, s.p50, s.p75, s.skipped
    );
    out.write_json(
        "study/reverse.json",
        &serde_json::json!({ "summary": summary, "instances": all, "skipped": skipped }),
    )?;
    Ok(())
}

fn crowds(out: &mut Output, ev: &Evaluator, histories: &Histories) -> CliResult<()> {
    let exec = Execution::default();
    let (boards, _) = score_competition(ev, histories, false, exec).map_err(domain)?;
    let universe = universe_set(ev);
    let mut points = Vec::new();
    for metric in RankingMetric::ALL {
        let ranked = rank_teams(&boards.global.entries, metric);
        if ranked.is_empty() {
            return Err(domain("crowds: no team was scored on every evaluation period"));
        }
        points.extend(
            top_fraction_study(ev, &universe, histories, &ranked, metric, &STUDY_PERCENTS, exec).map_err(domain)?,
        );
    }
    let mut long = String::from("ranking,percent,n_teams,rps,ir\n");
    for p in &points {
        long.push_str(&format!(
            "{},{},{},{},{}\n",
            p.metric.name(),
            p.percent,
            p.n_teams,
            sig12(p.rps),
            opt_str(p.ir)
        ));
    }
    out.write("study/crowds.csv", long.as_bytes())?;

    let mut wide = String::from("ranking,measure");
    for pct in STUDY_PERCENTS {
        wide.push_str(&format!(",{pct}"));
    }
    wide.push('\n');
    for metric in RankingMetric::ALL {
        let row: Vec<_> = points.iter().filter(|p| p.metric == metric).collect();
        wide.push_str(&format!("{},rps", metric.name()));
        for p in &row {
            wide.push_str(&format!(",{}", sig12(p.rps)));
        }
        wide.push_str(&format!("\n{},ir", metric.name()));
        for p in &row {
            wide.push_str(&format!(",{}", opt_str(p.ir)));
        }
        wide.push('\n');
    }
    out.write("study/crowds_wide.csv", wide.as_bytes())?;
    for metric in RankingMetric::ALL {
        let best = points
            .iter()
            .filter(|p| p.metric == metric)
            .min_by(|a, b| a.rps.total_cmp(&b.rps))
            .expect("non-empty");
        println!(
            "crowds by {}: best combined RPS {:.5} at top {}%",
            metric.name(),
            best.rps,
            best.percent
        );
    }
    out.write_json("study/crowds.json", &points)?;
    Ok(())
}

fn connection(out: &mut Output, histories: &Histories) -> CliResult<()> {
    let results: Vec<_> = histories.iter().map(|(t, h)| connection_coefficient(t, h)).collect();
    let census = connection_census(&results);
    let mut csv = String::from("team_id,r_con,mean_q1,mean_q2,mean_q3,mean_q4,mean_q5,class\n");
    for r in &results {
        csv.push_str(&format!("{},{}", r.team_id, opt_str(r.r_con)));
        for v in r.mean_vector {
            csv.push_str(&format!(",{}", sig12(v)));
        }
        csv.push_str(&format!(",{}\n", r.class.name()));
    }
    out.write("study/connection.csv", csv.as_bytes())?;
    let mut census_csv = String::from("class,teams\n");
    for c in ConnectionClass::ALL {
        let n = census.get(&c).copied().unwrap_or(0);
        census_csv.push_str(&format!("{},{n}\n", c.name()));
        println!("{:<17} {n}", c.name());
    }
    out.write("study/connection_census.csv", census_csv.as_bytes())?;
    let census_named: BTreeMap<&str, usize> = census.iter().map(|(c, n)| (c.name(), *n)).collect();
    out.write_json(
        "study/connection.json",
        &serde_json::json!({ "census": census_named, "teams": results }),
    )?;
    Ok(())
}

fn calibration(out: &mut Output, ev: &Evaluator, histories: &Histories) -> CliResult<()> {
    let universe = universe_set(ev);
    let mut cells = Vec::new();
    for p in eval_periods(ev) {
        let subs: Vec<&Submission> = histories
            .values()
            .filter_map(|h| effective_submission(h, p.index, &universe))
            .collect();
        cells.extend(forecast_cells(&subs, &p.outcomes).map_err(domain)?);
    }
    if cells.is_empty() {
        return Err(domain("calibration: no effective submissions in any evaluation period"));
    }
    let curve: Vec<CalibrationPoint> = calibration_curve(&cells);
    let mut csv = String::from("bin_lower,bin_mid,count,mean_assessed,relative_frequency\n");
    for c in &curve {
        csv.push_str(&format!(
            "{},{},{},{},{}\n",
            sig12(c.bin_lower),
            sig12(c.bin_mid),
            c.count,
            opt_str(c.mean_assessed),
            opt_str(c.relative_frequency)
        ));
    }
    out.write("study/calibration.csv", csv.as_bytes())?;
    println!("calibration: {} forecast cells over {} bins", cells.len(), curve.len());
    out.write_json("study/calibration.json", &curve)?;
    Ok(())
}

fn label<T: Serialize>(x: T) -> String {
    serde_json::to_value(x)
        .ok()
        .and_then(|v| v.as_str().map(str::to_string))
        .unwrap_or_default()
}

fn strategy(cfg: &RunConfig, out: &mut Output, histories: &Histories, universe: &[String]) -> CliResult<()> {
    let periods = inputs::schedule(cfg)?.evaluation_periods();
    let uset: BTreeSet<String> = universe.iter().cloned().collect();
    let mut profiles = String::from(
        "team_id,period,gross_exposure,n_invested,weight_range,exposure,diversification,weight_range_class,directionality\n",
    );
    let mut changes = String::from("team_id,changes\n");
    let mut counts = Vec::new();
    for (team, history) in histories {
        for &p in &periods {
            if let Some(sub) = effective_submission(history, p, &uset) {
                let s = strategy_profile(sub);
                profiles.push_str(&format!(
                    "{team},{p},{},{},{},{},{},{},{}\n",
                    sig12(s.gross_exposure),
                    s.n_invested,
                    sig12(s.weight_range),
                    label(s.exposure_class),
                    label(s.diversification_class),
                    label(s.weight_range_class),
                    label(s.directionality)
                ));
            }
        }
        let n = strategy_changes(history, &uset, &periods);
        changes.push_str(&format!("{team},{n}\n"));
        counts.push(n);
    }
    let hist = change_histogram(&counts);
    let mut hist_csv = String::from("changes,teams\n");
    for (c, n) in &hist {
        hist_csv.push_str(&format!("{c},{n}\n"));
        println!("{c:>3} changes: {n} teams");
    }
    out.write("study/strategy_profiles.csv", profiles.as_bytes())?;
    out.write("study/strategy_changes.csv", changes.as_bytes())?;
    out.write("study/strategy_histogram.csv", hist_csv.as_bytes())?;
    let per_team: BTreeMap<&String, usize> = histories.keys().zip(counts.iter().copied()).collect();
    out.write_json(
        "study/strategy.json",
        &serde_json::json!({ "changes": per_team, "histogram": hist }),
    )?;
    Ok(())
}

fn concentration(out: &mut Output, ev: &Evaluator, histories: &Histories) -> CliResult<()> {
    let universe = universe_set(ev);
    let mut rows = String::from("team_id,period,n_invested,mean_abs_weight,rps,accuracy\n");
    let mut corr = String::from("team_id,r,n,degenerate\n");
    let mut pooled = Vec::new();
    let mut per_team = BTreeMap::new();
    for (team, history) in histories {
        for p in eval_periods(ev) {
            let Some(sub) = effective_submission(history, p.index, &universe) else {
                continue;
            };
            let c = concentration_metrics(sub);
            let rps = mean(&rps_by_asset(sub, &p.outcomes).map_err(domain)?);
            rows.push_str(&format!(
                "{team},{},{},{},{},{}\n",
                p.index,
                c.n_invested,
                sig12(c.mean_abs_weight),
                sig12(rps),
                label(accuracy_class(rps))
            ));
        }
        let pairs = weight_rps_pairs(ev, history, &universe).map_err(domain)?;
        if pairs.is_empty() {
            continue;
        }
        let wa = weight_accuracy_correlation(&pairs);
        corr.push_str(&format!("{team},{},{},{}\n", sig12(wa.r), wa.n, wa.degenerate));
        per_team.insert(team.clone(), wa);
        pooled.extend(pairs);
    }
    if pooled.is_empty() {
        return Err(domain("concentration: no effective submissions in any evaluation period"));
    }
    let all = weight_accuracy_correlation(&pooled);
    println!("weight/accuracy correlation over {} asset-periods: {:.4}", all.n, all.r);
    out.write("study/concentration.csv", rows.as_bytes())?;
    out.write("study/concentration_correlation.csv", corr.as_bytes())?;
    out.write_json(
        "study/concentration.json",
        &serde_json::json!({ "pooled": all, "teams": per_team }),
    )?;
    Ok(())
}
