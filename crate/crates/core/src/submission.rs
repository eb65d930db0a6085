//! Team submissions: the 100-row probability/decision table, rule checks and
//! carry-forward of the latest valid entry.

use std::collections::{BTreeMap, BTreeSet};
use std::fmt;
use std::io::{Read, Write};

use chrono::NaiveDateTime;
use serde::{Deserialize, Serialize};
use thiserror::Error;

pub const N_QUINTILES: usize = 5;
pub const PROB_SUM_TOLERANCE: f64 = 1e-6;
pub const MIN_GROSS: f64 = 0.25;
pub const MAX_GROSS: f64 = 1.0;
/// Slack on the gross-exposure bounds to absorb summation round-off
/// (100 × 0.01 does not sum to exactly 1.0 in binary floating point).
pub const GROSS_ROUNDOFF: f64 = 1e-9;

pub const CSV_HEADER: [&str; 7] = ["ID", "Rank1", "Rank2", "Rank3", "Rank4", "Rank5", "Decision"];

#[derive(Debug, Error)]
pub enum SubmissionError {
    #[error("parse error at line {line}: {message}")]
    Parse { line: usize, message: String },
    #[error("csv error: {0}")]
    Csv(#[from] csv::Error),
    #[error("io error: {0}")]
    Io(#[from] std::io::Error),
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct SubmissionRow {
    pub asset_id: String,
    pub probs: [f64; N_QUINTILES],
    pub weight: f64,
}

impl SubmissionRow {
    pub fn new(asset_id: impl Into<String>, probs: [f64; N_QUINTILES], weight: f64) -> Self {
        SubmissionRow {
            asset_id: asset_id.into(),
            probs,
            weight,
        }
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct Submission {
    pub team_id: String,
    /// 1..=12 for evaluation rounds, 0 for the trial run.
    pub period_index: u32,
    pub rows: Vec<SubmissionRow>,
    pub submitted_at: Option<NaiveDateTime>,
}

impl Submission {
    pub fn new(team_id: impl Into<String>, period_index: u32, rows: Vec<SubmissionRow>) -> Self {
        Submission {
            team_id: team_id.into(),
            period_index,
            rows,
            submitted_at: None,
        }
    }

    pub fn gross_exposure(&self) -> f64 {
        self.rows.iter().map(|r| r.weight.abs()).sum()
    }

    pub fn row(&self, asset: &str) -> Option<&SubmissionRow> {
        self.rows.iter().find(|r| r.asset_id == asset)
    }

    pub fn weights_by_asset(&self) -> BTreeMap<&str, f64> {
        self.rows.iter().map(|r| (r.asset_id.as_str(), r.weight)).collect()
    }

    pub fn probs_by_asset(&self) -> BTreeMap<&str, [f64; N_QUINTILES]> {
        self.rows.iter().map(|r| (r.asset_id.as_str(), r.probs)).collect()
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, PartialOrd, Ord, Hash, Serialize, Deserialize)]
#[serde(rename_all = "SCREAMING_SNAKE_CASE")]
pub enum Rule {
    ProbSum,
    ProbNegative,
    WeightGrossHigh,
    WeightGrossLow,
    MissingAsset,
    DuplicateAsset,
    UnknownAsset,
}

impl Rule {
    pub fn name(self) -> &'static str {
        match self {
            Rule::ProbSum => "PROB_SUM",
            Rule::ProbNegative => "PROB_NEGATIVE",
            Rule::WeightGrossHigh => "WEIGHT_GROSS_HIGH",
            Rule::WeightGrossLow => "WEIGHT_GROSS_LOW",
            Rule::MissingAsset => "MISSING_ASSET",
            Rule::DuplicateAsset => "DUPLICATE_ASSET",
            Rule::UnknownAsset => "UNKNOWN_ASSET",
        }
    }
}

impl fmt::Display for Rule {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        f.write_str(self.name())
    }
}

#[derive(Debug, Clone, PartialEq, Eq, PartialOrd, Ord, Serialize, Deserialize)]
pub struct Violation {
    pub rule: Rule,
    /// Asset identifier, or `None` for whole-submission rules.
    pub asset_id: Option<String>,
    pub detail: String,
}

#[derive(Debug, Clone, Default, PartialEq, Serialize, Deserialize)]
pub struct ValidationReport {
    pub violations: Vec<Violation>,
    pub gross_exposure: f64,
}

impl ValidationReport {
    pub fn is_valid(&self) -> bool {
        self.violations.is_empty()
    }

    pub fn has(&self, rule: Rule) -> bool {
        self.violations.iter().any(|v| v.rule == rule)
    }
}

/// Checks `sub` against the submission rules. Violations are sorted so the
/// report does not depend on row order.
pub fn validate(sub: &Submission, universe: &BTreeSet<String>) -> ValidationReport {
    let mut violations = Vec::new();
    let mut counts: BTreeMap<&str, usize> = BTreeMap::new();
    for row in &sub.rows {
        *counts.entry(row.asset_id.as_str()).or_default() += 1;
        let id = Some(row.asset_id.clone());
        if row.probs.iter().any(|p| *p < 0.0) {
            violations.push(Violation {
                rule: Rule::ProbNegative,
                asset_id: id.clone(),
                detail: format!("probabilities {:?}", row.probs),
            });
        }
        let s: f64 = row.probs.iter().sum();
        if !s.is_finite() || (s - 1.0).abs() > PROB_SUM_TOLERANCE {
            violations.push(Violation {
                rule: Rule::ProbSum,
                asset_id: id.clone(),
                detail: format!("probabilities sum to {s}"),
            });
        }
        if !universe.is_empty() && !universe.contains(&row.asset_id) {
            violations.push(Violation {
                rule: Rule::UnknownAsset,
                asset_id: id,
                detail: "asset not in universe".into(),
            });
        }
    }
    for (asset, n) in &counts {
        if *n > 1 {
            violations.push(Violation {
                rule: Rule::DuplicateAsset,
                asset_id: Some(asset.to_string()),
                detail: format!("{n} rows"),
            });
        }
    }
    for asset in universe {
        if !counts.contains_key(asset.as_str()) {
            violations.push(Violation {
                rule: Rule::MissingAsset,
                asset_id: Some(asset.clone()),
                detail: "no row for asset".into(),
            });
        }
    }
    let gross = sub.gross_exposure();
    if !gross.is_finite() || gross > MAX_GROSS + GROSS_ROUNDOFF {
        violations.push(Violation {
            rule: Rule::WeightGrossHigh,
            asset_id: None,
            detail: format!("sum of absolute weights {gross} exceeds {MAX_GROSS}"),
        });
    } else if gross < MIN_GROSS - GROSS_ROUNDOFF {
        violations.push(Violation {
            rule: Rule::WeightGrossLow,
            asset_id: None,
            detail: format!("sum of absolute weights {gross} below {MIN_GROSS}"),
        });
    }
    violations.sort();
    ValidationReport {
        violations,
        gross_exposure: gross,
    }
}

/// The submission in force for `period`: the last valid submission whose
/// period index is at most `period`. Within a period the latest
/// `submitted_at` wins, then the later position in `history`.
pub fn effective_submission<'a>(
    history: &'a [Submission],
    period: u32,
    universe: &BTreeSet<String>,
) -> Option<&'a Submission> {
    history
        .iter()
        .enumerate()
        .filter(|(_, s)| s.period_index <= period)
        .filter(|(_, s)| validate(s, universe).is_valid())
        .max_by(|(ia, a), (ib, b)| {
            (a.period_index, a.submitted_at, ia).cmp(&(b.period_index, b.submitted_at, ib))
        })
        .map(|(_, s)| s)
}

/// Parses the `ID,Rank1..Rank5,Decision` CSV layout.
pub fn read_submission<R: Read>(
    reader: R,
    team_id: &str,
    period_index: u32,
) -> Result<Submission, SubmissionError> {
    let mut rdr = csv::ReaderBuilder::new()
        .has_headers(true)
        .trim(csv::Trim::All)
        .from_reader(reader);
    let headers = rdr.headers()?.clone();
    let cols: Vec<&str> = headers.iter().collect();
    if cols != CSV_HEADER {
        return Err(SubmissionError::Parse {
            line: 1,
            message: format!("expected header `{}`, got `{}`", CSV_HEADER.join(","), cols.join(",")),
        });
    }
    let mut rows = Vec::new();
    for (i, rec) in rdr.records().enumerate() {
        let line = i + 2;
        let rec = rec.map_err(|e| SubmissionError::Parse {
            line,
            message: e.to_string(),
        })?;
        if rec.len() != 7 {
            return Err(SubmissionError::Parse {
                line,
                message: format!("expected 7 fields, got {}", rec.len()),
            });
        }
        let num = |k: usize| -> Result<f64, SubmissionError> {
            rec[k].parse::<f64>().map_err(|e| SubmissionError::Parse {
                line,
                message: format!("bad number `{}` in {}: {e}", &rec[k], CSV_HEADER[k]),
            })
        };
        rows.push(SubmissionRow {
            asset_id: rec[0].to_string(),
            probs: [num(1)?, num(2)?, num(3)?, num(4)?, num(5)?],
            weight: num(6)?,
        });
    }
    Ok(Submission::new(team_id, period_index, rows))
}

/// Writes the CSV layout. Numbers use the shortest round-trip
/// representation, so canonical inputs (e.g. `0.05`, `-0.2`, `1`) are
/// reproduced byte for byte.
pub fn write_submission<W: Write>(sub: &Submission, mut w: W) -> Result<(), SubmissionError> {
    writeln!(w, "{}", CSV_HEADER.join(","))?;
    for r in &sub.rows {
        writeln!(
            w,
            "{},{},{},{},{},{},{}",
            r.asset_id, r.probs[0], r.probs[1], r.probs[2], r.probs[3], r.probs[4], r.weight
        )?;
    }
    Ok(())
}

#[cfg(test)]
mod tests {
    use super::*;

    pub(crate) const TABLE2: &str = "ID,Rank1,Rank2,Rank3,Rank4,Rank5,Decision
ABBV,0,0.1,0.2,0.5,0.2,0
CNC,0,0,1,0,0,0
GOOG,0.1,0.1,0.1,0.1,0.6,0.5
EWG,0.5,0.4,0.05,0.05,0,0
BMY,0.2,0.2,0.2,0.2,0.2,0
OGN,0,0,0.1,0.4,0.5,0.3
DRE,0.7,0.3,0,0,0,-0.2
UNH,0,0,1,0,0,0
";

    fn universe_of(sub: &Submission) -> BTreeSet<String> {
        sub.rows.iter().map(|r| r.asset_id.clone()).collect()
    }

    #[test]
    fn table2_example_is_valid_and_round_trips() {
        let sub = read_submission(TABLE2.as_bytes(), "team", 1).unwrap();
        let report = validate(&sub, &universe_of(&sub));
        assert!(report.is_valid(), "{:?}", report.violations);
        let mut out = Vec::new();
        write_submission(&sub, &mut out).unwrap();
        assert_eq!(String::from_utf8(out).unwrap(), TABLE2);
    }

    #[test]
    fn prob_sum_violation() {
        let mut sub = read_submission(TABLE2.as_bytes(), "team", 1).unwrap();
        let u = universe_of(&sub);
        sub.rows[0].probs = [0.3; 5];
        let r = validate(&sub, &u);
        assert_eq!(r.violations.len(), 1);
        assert_eq!(r.violations[0].rule, Rule::ProbSum);
        assert_eq!(r.violations[0].asset_id.as_deref(), Some("ABBV"));
    }

    #[test]
    fn zero_weights_gross_low() {
        let mut sub = read_submission(TABLE2.as_bytes(), "team", 1).unwrap();
        let u = universe_of(&sub);
        sub.rows.iter_mut().for_each(|r| r.weight = 0.0);
        assert!(validate(&sub, &u).has(Rule::WeightGrossLow));
        sub.rows[2].weight = 0.25;
        assert!(validate(&sub, &u).is_valid());
        sub.rows[2].weight = -1.0;
        assert!(validate(&sub, &u).is_valid());
        sub.rows[3].weight = 0.01;
        assert!(validate(&sub, &u).has(Rule::WeightGrossHigh));
    }

    #[test]
    fn coverage_rules() {
        let mut sub = read_submission(TABLE2.as_bytes(), "team", 1).unwrap();
        let mut u = universe_of(&sub);
        u.insert("XOM".into());
        let dup = sub.rows[1].clone();
        sub.rows.push(dup);
        sub.rows[0].probs = [-0.1, 0.3, 0.3, 0.3, 0.2];
        let r = validate(&sub, &u);
        assert!(r.has(Rule::MissingAsset));
        assert!(r.has(Rule::DuplicateAsset));
        assert!(r.has(Rule::ProbNegative));
    }

    #[test]
    fn validation_ignores_row_order() {
        let mut sub = read_submission(TABLE2.as_bytes(), "team", 1).unwrap();
        let u = universe_of(&sub);
        sub.rows[4].probs = [0.5; 5];
        let a = validate(&sub, &u);
        sub.rows.reverse();
        assert_eq!(validate(&sub, &u), a);
    }

    #[test]
    fn carry_forward() {
        let base = read_submission(TABLE2.as_bytes(), "t", 1).unwrap();
        let u = universe_of(&base);
        let mut p3 = base.clone();
        p3.period_index = 3;
        let hist = vec![base.clone(), p3.clone()];
        assert_eq!(effective_submission(&hist, 2, &u), Some(&hist[0]));
        assert_eq!(effective_submission(&hist, 12, &u), Some(&hist[1]));
        assert_eq!(effective_submission(&hist[..1], 12, &u), Some(&hist[0]));
        assert_eq!(effective_submission(&[], 1, &u), None);

        // a later invalid entry does not displace the earlier valid one
        let mut bad = p3.clone();
        bad.rows[0].probs = [1.0; 5];
        let hist2 = vec![base.clone(), bad];
        assert_eq!(effective_submission(&hist2, 3, &u), Some(&hist2[0]));

        // last submission in a period wins
        let mut second = base.clone();
        second.rows[2].weight = 0.4;
        let hist3 = vec![base, second];
        assert_eq!(effective_submission(&hist3, 1, &u), Some(&hist3[1]));
    }
}
