use log::info;
use m6_core::scoring::score_competition;
use m6_core::Execution;

use crate::config::RunConfig;
use crate::error::{domain, CliResult};
use crate::inputs;
use crate::output::Output;

pub fn run(cfg: &RunConfig, out: &mut Output) -> CliResult<()> {
    let prices = cfg.require("prices", &cfg.prices, "score")?;
    let subs_dir = cfg.require("submissions", &cfg.submissions, "score")?;
    let universe = inputs::universe(cfg)?;
    let histories = inputs::submissions(subs_dir)?;
    let panel = inputs::price_panel(prices, &universe)?;
    let ev = inputs::evaluator(cfg, &panel, &universe)?;
    let (boards, scores) = score_competition(&ev, &histories, true, Execution::default()).map_err(domain)?;
    info!("scored {} teams over {} periods", histories.len(), boards.periods.len());

    out.write("score/leaderboard_global.csv", boards.global.to_csv().as_bytes())?;
    for b in &boards.quarters {
        out.write(&format!("score/leaderboard_{}.csv", b.scope), b.to_csv().as_bytes())?;
    }
    for b in &boards.periods {
        out.write(&format!("score/leaderboard_{}.csv", b.scope), b.to_csv().as_bytes())?;
    }
    out.write_json("score/leaderboards.json", &boards)?;
    out.write_json("score/period_scores.json", &scores)?;
    for e in &boards.global.entries {
        println!("{:>6} {:<24} RPS {:.5}  IR {}", e.overall_rank, e.team_id, e.rps, e.ir.map_or("NA".into(), |x| format!("{x:.4}")));
    }
    Ok(())
}
