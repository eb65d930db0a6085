use std::collections::BTreeSet;
use std::path::Path;

use m6_core::submission::{read_submission, validate, Violation};
use serde::Serialize;

use crate::config::RunConfig;
use crate::error::{env, CliError, CliResult};
use crate::inputs;
use crate::output::Output;

#[derive(Debug, Serialize)]
struct Report<'a> {
    file: String,
    valid: bool,
    gross_exposure: Option<f64>,
    parse_error: Option<String>,
    violations: &'a [Violation],
}

pub fn run(cfg: &RunConfig, out: &mut Output, file: &Path) -> CliResult<()> {
    let universe: BTreeSet<String> = inputs::universe(cfg)?.into_iter().collect();
    let handle = std::fs::File::open(file).map_err(|e| env(format!("cannot read {}: {e}", file.display())))?;
    let stem = file.file_stem().and_then(|s| s.to_str()).unwrap_or("submission");
    let rel = format!("validate/{stem}.json");
    let name = file.display().to_string();
    let sub = match read_submission(handle, "submission", 0) {
        Ok(s) => s,
        Err(e) => {
            println!("{name}: INVALID");
            println!("  PARSE: {e}");
            let report = Report {
                file: name.clone(),
                valid: false,
                gross_exposure: None,
                parse_error: Some(e.to_string()),
                violations: &[],
            };
            out.write_json(&rel, &report)?;
            return Err(CliError::Domain(format!("{name} could not be parsed")));
        }
    };
    let r = validate(&sub, &universe);
    println!("{name}: {} (gross exposure {:.6})", if r.is_valid() { "VALID" } else { "INVALID" }, r.gross_exposure);
    for v in &r.violations {
        match &v.asset_id {
            Some(a) => println!("  {}: {a}: {}", v.rule, v.detail),
            None => println!("  {}: {}", v.rule, v.detail),
        }
    }
    out.write_json(
        &rel,
        &Report {
            file: name.clone(),
            valid: r.is_valid(),
            gross_exposure: Some(r.gross_exposure),
            parse_error: None,
            violations: &r.violations,
        },
    )?;
    if r.is_valid() {
        Ok(())
    } else {
        Err(CliError::Domain(format!("{name} violates {} rule(s)", r.violations.len())))
    }
}
