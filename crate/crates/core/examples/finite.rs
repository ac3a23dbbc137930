//! Finite-conductivity run: inclusions start hot and equilibrate.

use twotemp::discretization::{build_grid, classify_cells};
use twotemp::geometry::{place_inclusions, DensitySpec};
use twotemp::model_finite::{init_finite, MaterialParams};
use twotemp::Domain;

fn main() -> twotemp::Result<()> {
    let domain = Domain::default();
    let set = place_inclusions(0.25, &DensitySpec::uniform(domain), &domain, 1, 100)?;
    let grid = build_grid(&domain, 0.125)?;
    let mask = classify_cells(&grid, &set)?;
    let balls = set.clone();
    let t_in = move |x| if balls.locate(&x).is_some() { 2.0 } else { 1.0 };
    let mut state = init_finite(&grid, &mask, &set, MaterialParams::new(1.0, 1.0, 1e-2)?, t_in, true)?;
    for step in 1..=100 {
        state.step(1e-3, 1e-10)?;
        if step % 25 == 0 {
            println!(
                "t={:.3} spread={:.3e} incl_diss_rate={:.3e} mean={:.12}",
                state.time,
                state.max_inclusion_spread(),
                state.inclusion_dissipation_rate(),
                state.weighted_mean()
            );
        }
    }
    println!("max energy residual {:.2e}", state.ledger.max_abs_residual());
    Ok(())
}
