//! Finite conductivity towards the infinite-conductivity limit.

use twotemp::harness::{run_eta_sweep, ExperimentConfig};

fn main() -> twotemp::Result<()> {
    let report = run_eta_sweep(&ExperimentConfig::default())?;
    print!("{}", report.to_csv());
    println!("fitted rates: {:?}", report.fitted_rate);
    println!("failures: {:?}", report.failures());
    Ok(())
}
