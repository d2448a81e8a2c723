//! Runs the full desk-scale lab and writes every report under the given
//! directory (default `lab-out`).

use std::path::PathBuf;

use amclab::labharness::{emit_report, run_lab, LabConfig, ReportFormat};

fn main() -> amclab::Result<()> {
    env_logger::Builder::from_env(env_logger::Env::default().default_filter_or("info")).init();
    let dir = PathBuf::from(std::env::args().nth(1).unwrap_or_else(|| "lab-out".into()));
    let outcome = run_lab(&LabConfig::default())?;
    for report in outcome.reports() {
        emit_report(report, &dir, report.kind.name(), &ReportFormat::ALL)?;
    }
    for (stage, secs) in &outcome.timings {
        println!("{stage:>18}: {secs:8.1}s");
    }
    Ok(())
}
