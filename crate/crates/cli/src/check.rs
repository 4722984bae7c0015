//! `blendlab check`: runs check suites and prints one line per criterion.

use blendlab::checks::{run_suite, CheckReport, SUITES};

use crate::{CliError, EXIT_OK};

/// Exit code 1 when any criterion fails.
pub const EXIT_FAILED: i32 = 1;

pub fn render(report: &CheckReport) -> String {
    let mut out = format!("[{}]\n", report.suite);
    for c in &report.criteria {
        let status = if c.passed { "PASS" } else { "FAIL" };
        out.push_str(&format!("  {status} {}: {}\n", c.name, c.detail));
    }
    for d in &report.details {
        for line in d.lines() {
            out.push_str(&format!("    {line}\n"));
        }
    }
    out
}

pub fn cmd_check(suite: &str) -> Result<i32, CliError> {
    let names: Vec<&str> = if suite == "all" {
        SUITES.to_vec()
    } else if SUITES.contains(&suite) {
        vec![suite]
    } else {
        return Err(CliError::config(format!(
            "unknown suite {suite:?}; valid suites: {}, all",
            SUITES.join(", ")
        )));
    };
    let mut passed = 0;
    let mut total = 0;
    for name in names {
        let report = run_suite(name).expect("listed suites exist");
        print!("{}", render(&report));
        total += report.criteria.len();
        passed += report.criteria.iter().filter(|c| c.passed).count();
    }
    println!("{passed}/{total} criteria passed");
    Ok(if passed == total { EXIT_OK } else { EXIT_FAILED })
}
