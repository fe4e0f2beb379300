//! The grad-check subcommand: runs the componentwise gradient audit and
//! prints one line per component.

use crate::CliError;
use bytespeech::diagnostics::gradient_audit;

pub(crate) fn run(seed: u64, tol: f64) -> Result<(), CliError> {
    if tol <= 0.0 {
        return Err(CliError::Usage("--tol must be positive".into()));
    }
    let mut failures = Vec::new();
    for (name, report) in gradient_audit(seed, tol) {
        let status = if report.passed() { "pass" } else { "FAIL" };
        println!(
            "{name}: {status} (max relative error {:.3e}, tolerance {:.1e})",
            report.max_rel_err, tol
        );
        if !report.passed() {
            failures.push(format!("{name} ({:?})", report.failures));
        }
    }
    if failures.is_empty() {
        Ok(())
    } else {
        Err(CliError::numeric(format!(
            "gradient check failed: {}",
            failures.join(", ")
        )))
    }
}
