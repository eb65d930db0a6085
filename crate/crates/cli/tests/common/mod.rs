//! Synthetic competition written to disk: prices, a small universe, a factor
//! definition, team submissions and a run config.
#![allow(dead_code)]

use std::fmt::Write as _;
use std::path::{Path, PathBuf};
use std::process::Output;

use chrono::{Datelike, Days, NaiveDate, Weekday};
use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;
use rand_distr::StandardNormal;

pub const N_ASSETS: usize = 12;
pub const N_DAYS: usize = 700;
/// Calendar days used as submission deadlines (trial, periods 1 and 2, end).
pub const DEADLINE_DAYS: [usize; 4] = [620, 640, 660, 680];

pub fn tickers() -> Vec<String> {
    (0..N_ASSETS).map(|i| format!("A{i:02}")).collect()
}

pub fn business_days(start: NaiveDate, n: usize) -> Vec<NaiveDate> {
    let mut out = Vec::with_capacity(n);
    let mut d = start;
    while out.len() < n {
        if !matches!(d.weekday(), Weekday::Sat | Weekday::Sun) {
            out.push(d);
        }
        d = d + Days::new(1);
    }
    out
}

/// One-factor OHLCV panel as CSV, rows by date then ticker.
pub fn prices_csv(tickers: &[String], calendar: &[NaiveDate], seed: u64, with_volume: bool) -> String {
    let mut rng = ChaCha8Rng::seed_from_u64(seed);
    let betas: Vec<f64> = tickers.iter().map(|_| 0.6 + 0.8 * rng.random::<f64>()).collect();
    let idio: Vec<f64> = tickers.iter().map(|_| 0.006 + 0.012 * rng.random::<f64>()).collect();
    let mut close: Vec<f64> = tickers.iter().map(|_| 20.0 + 80.0 * rng.random::<f64>()).collect();
    let mut s = String::from("date,ticker,open,high,low,close,adj_close");
    s.push_str(if with_volume { ",volume\n" } else { "\n" });
    for d in calendar {
        let m: f64 = 0.009 * rng.sample::<f64, _>(StandardNormal);
        for (i, t) in tickers.iter().enumerate() {
            let r = 0.0002 + betas[i] * m + idio[i] * rng.sample::<f64, _>(StandardNormal);
            let open = close[i] * (1.0 + 0.002 * rng.sample::<f64, _>(StandardNormal));
            let c = close[i] * (1.0 + r);
            let high = open.max(c) * (1.0 + 0.004 * rng.random::<f64>());
            let low = open.min(c) * (1.0 - 0.004 * rng.random::<f64>());
            write!(s, "{d},{t},{open:.6},{high:.6},{low:.6},{c:.6},{c:.6}").unwrap();
            if with_volume {
                write!(s, ",{}", 100_000 + rng.random_range(0..900_000u64)).unwrap();
            }
            s.push('\n');
            close[i] = c;
        }
    }
    s
}

pub const FACTORS_TOML: &str = r#"version = 1

[[factor]]
name = "MKT"
level = 1
weights = { A00 = 1.0, A01 = 1.0, A02 = 1.0, A03 = 1.0, A04 = 1.0, A05 = 1.0, A06 = 1.0, A07 = 1.0, A08 = 1.0, A09 = 1.0, A10 = 1.0, A11 = 1.0 }

[[factor]]
name = "G1"
level = 2
weights = { A00 = 1.0, A01 = 1.0, A02 = 1.0, A03 = 1.0, A04 = 1.0, A05 = 1.0 }

[[factor]]
name = "G2"
level = 2
weights = { A06 = 1.0, A07 = 1.0, A08 = 1.0, A09 = 1.0, A10 = 1.0, A11 = 1.0 }
"#;

/// Submission CSV from per-asset probabilities and weights.
pub fn submission_csv(rows: &[(String, [f64; 5], f64)]) -> String {
    let mut s = String::from("ID,Rank1,Rank2,Rank3,Rank4,Rank5,Decision\n");
    for (a, p, w) in rows {
        writeln!(s, "{a},{},{},{},{},{},{w}", p[0], p[1], p[2], p[3], p[4]).unwrap();
    }
    s
}

pub fn uniform_rows(weight: f64) -> Vec<(String, [f64; 5], f64)> {
    tickers().into_iter().map(|t| (t, [0.2; 5], weight)).collect()
}

/// A team with its own forecast tilt and portfolio style.
pub fn team_rows(team: usize, period: usize) -> Vec<(String, [f64; 5], f64)> {
    let mut rng = ChaCha8Rng::seed_from_u64((team * 100 + period) as u64);
    tickers()
        .into_iter()
        .map(|t| {
            let raw: Vec<f64> = (0..5).map(|_| 0.05 + rng.random::<f64>()).collect();
            let total: f64 = raw.iter().sum();
            let mut p = [0.0; 5];
            for k in 0..5 {
                p[k] = (raw[k] / total * 1000.0).round() / 1000.0;
            }
            let fix: f64 = p[..4].iter().sum();
            p[4] = ((1.0 - fix) * 1000.0).round() / 1000.0;
            let tilt = p[3] + p[4] - p[0] - p[1];
            let w = if team.is_multiple_of(2) { 0.06 * tilt.signum() } else { 0.04 + 0.04 * tilt };
            (t, p, (w * 1000.0).round() / 1000.0)
        })
        .collect()
}

pub struct Fixture {
    pub dir: tempfile::TempDir,
    pub calendar: Vec<NaiveDate>,
}

impl Fixture {
    /// Prices, universe and factor files plus `n_teams` teams submitting for
    /// periods 0..=2.
    pub fn new(n_teams: usize) -> Fixture {
        let dir = tempfile::tempdir().unwrap();
        let calendar = business_days(NaiveDate::from_ymd_opt(2019, 1, 2).unwrap(), N_DAYS);
        std::fs::write(dir.path().join("prices.csv"), prices_csv(&tickers(), &calendar, 5, false)).unwrap();
        std::fs::write(dir.path().join("universe.txt"), tickers().join("\n") + "\n").unwrap();
        std::fs::write(dir.path().join("factors.toml"), FACTORS_TOML).unwrap();
        std::fs::create_dir_all(dir.path().join("subs")).unwrap();
        let fx = Fixture { dir, calendar };
        for team in 0..n_teams {
            for period in 0..=2 {
                fx.submit(&format!("T{team}"), period, &team_rows(team, period));
            }
        }
        fx
    }

    pub fn path(&self) -> &Path {
        self.dir.path()
    }

    pub fn out(&self) -> PathBuf {
        self.path().join("out")
    }

    pub fn submit(&self, team: &str, period: usize, rows: &[(String, [f64; 5], f64)]) {
        let d = self.path().join("subs").join(team);
        std::fs::create_dir_all(&d).unwrap();
        std::fs::write(d.join(format!("{period}.csv")), submission_csv(rows)).unwrap();
    }

    /// Writes `config.toml` with the fixture's files and `extra` appended.
    pub fn config(&self, extra: &str) -> PathBuf {
        let deadlines: Vec<String> = DEADLINE_DAYS.iter().map(|&i| format!("\"{}\"", self.calendar[i])).collect();
        let text = format!(
            "prices = \"prices.csv\"\nsubmissions = \"subs\"\nuniverse = \"universe.txt\"\nfactors = \"factors.toml\"\n\
             deadlines = [{}]\nrequire_100 = false\nmin_history = 120\nhexp_min_rows = 80\n\
             grid_windows = 4\ngrid_window_len = 10\ngrid_end = \"{}\"\n{extra}",
            deadlines.join(", "),
            self.calendar[N_DAYS - 1]
        );
        let p = self.path().join("config.toml");
        std::fs::write(&p, text).unwrap();
        p
    }

    pub fn run(&self, args: &[&str]) -> Output {
        let cfg = self.path().join("config.toml");
        if !cfg.exists() {
            self.config("");
        }
        let out = self.out();
        let mut all = vec!["--config", cfg.to_str().unwrap(), "--out", out.to_str().unwrap()];
        all.extend_from_slice(args);
        m6(&all)
    }

    pub fn read(&self, rel: &str) -> String {
        std::fs::read_to_string(self.out().join(rel)).unwrap_or_else(|e| panic!("{rel}: {e}"))
    }
}

pub fn m6(args: &[&str]) -> Output {
    std::process::Command::new(env!("CARGO_BIN_EXE_m6"))
        .args(args)
        .env("RUST_LOG", "warn")
        .output()
        .expect("m6 runs")
}

pub fn code(o: &Output) -> i32 {
    o.status.code().expect("exited normally")
}

pub fn stdout(o: &Output) -> String {
    String::from_utf8_lossy(&o.stdout).into_owned()
}

pub fn stderr(o: &Output) -> String {
    String::from_utf8_lossy(&o.stderr).into_owned()
}

/// Parses a CSV body into rows of fields, header first.
pub fn csv_rows(text: &str) -> Vec<Vec<String>> {
    text.lines().map(|l| l.split(',').map(str::to_string).collect()).collect()
}
