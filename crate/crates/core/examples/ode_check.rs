//! Spatially uniform homogenized runs against the exact solution.

use twotemp::harness::{run_ode_check, ExperimentConfig};

fn main() -> twotemp::Result<()> {
    let report = run_ode_check(&ExperimentConfig::default())?;
    print!("{}", report.to_csv());
    println!("checks: {:?}", report.checks);
    println!("passed: {}", report.passed());
    Ok(())
}
