//! Infinite conductivity towards the homogenized system. Pass `--quick` for
//! a coarse run that skips the 128^3 level.

use twotemp::harness::{run_epsilon_sweep, ExperimentConfig};

fn main() -> twotemp::Result<()> {
    let mut cfg = ExperimentConfig::default();
    if std::env::args().any(|a| a == "--quick") {
        cfg.epsilon_sweep.epsilons = vec![0.25, 0.125];
    }
    let report = run_epsilon_sweep(&cfg)?;
    for name in ["weak_t", "weak_theta", "initial_theta_pairing"] {
        println!("{name}: {:?}", report.metric(name));
    }
    println!("failures: {:?}", report.failures());
    Ok(())
}
