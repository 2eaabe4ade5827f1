//! Runs a directory of spec files in name order and tabulates the results.

use std::fmt::Write as _;
use std::fs;
use std::path::Path;
use std::time::Instant;

use branchtail::asymptotics::fmt17;

use crate::pipeline::{self, exit, exit_code};
use crate::spec::{self, SpecError};

struct Row {
    name: String,
    case: String,
    predicted: String,
    fitted: String,
    tolerance: String,
    status: String,
    seconds: f64,
    code: u8,
}

/// Runs every `*.spec` file in `dir`, writing artifacts to `out/<stem>/` and
/// the table to `out/summary.txt`. Returns the exit code: 0 if every spec
/// passes, otherwise the largest code any spec produced.
pub fn verify_all(
    dir: &Path,
    out: &Path,
    seed: Option<u64>,
    replicates: Option<usize>,
) -> anyhow::Result<u8> {
    let mut specs: Vec<_> = fs::read_dir(dir)
        .map_err(|e| SpecError {
            line: 0,
            column: 0,
            message: format!("cannot read {}: {e}", dir.display()),
        })?
        .filter_map(|e| e.ok().map(|e| e.path()))
        .filter(|p| p.extension().is_some_and(|x| x == "spec"))
        .collect();
    specs.sort();
    if specs.is_empty() {
        anyhow::bail!(SpecError {
            line: 0,
            column: 0,
            message: format!("no *.spec files in {}", dir.display())
        });
    }
    fs::create_dir_all(out)?;

    let mut rows = Vec::new();
    for path in &specs {
        let name = path.file_stem().unwrap().to_string_lossy().into_owned();
        let started = Instant::now();
        let result =
            spec::load(path, seed, replicates).and_then(|s| pipeline::run(&s, &out.join(&name)));
        let seconds = started.elapsed().as_secs_f64();
        let row = match result {
            Ok(outcome) => {
                let first = outcome.checks.first();
                let passed = outcome.passed();
                Row {
                    name,
                    case: outcome.regime.regime.label().to_string(),
                    predicted: first.map_or("-".into(), |c| fmt17(c.predicted)),
                    fitted: first.map_or("-".into(), |c| fmt17(c.observed)),
                    tolerance: first.map_or("-".into(), |c| fmt17(c.tolerance)),
                    status: if passed { "PASS".into() } else { "FAIL".into() },
                    seconds,
                    code: if passed { exit::OK } else { exit::CHECK_FAILED },
                }
            }
            Err(e) => {
                let code = exit_code(&e);
                eprintln!("{name}: {e:#}");
                Row {
                    name,
                    case: "-".into(),
                    predicted: "-".into(),
                    fitted: "-".into(),
                    tolerance: "-".into(),
                    status: format!("FAIL(exit {code})"),
                    seconds,
                    code,
                }
            }
        };
        println!("{}: {}", row.name, row.status);
        rows.push(row);
        // rewrite after every spec so a partial table survives an abort
        fs::write(out.join("summary.txt"), table(&rows))?;
    }
    Ok(rows.iter().map(|r| r.code).max().unwrap_or(exit::OK))
}

fn table(rows: &[Row]) -> String {
    let mut s = format!("# {}\n", pipeline::VERSION);
    s.push_str("spec\tcase\tpredicted\tfitted\ttolerance\tstatus\twall_seconds\n");
    for r in rows {
        let _ = writeln!(
            s,
            "{}\t{}\t{}\t{}\t{}\t{}\t{:.1}",
            r.name, r.case, r.predicted, r.fitted, r.tolerance, r.status, r.seconds
        );
    }
    s
}
