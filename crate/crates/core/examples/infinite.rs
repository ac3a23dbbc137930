//! Infinite-conductivity run with super-nodes, plus the aggregation check.

use std::sync::Arc;

use twotemp::discretization::{build_grid, classify_cells};
use twotemp::geometry::{place_inclusions, DensitySpec};
use twotemp::model_finite::MaterialParams;
use twotemp::model_infinite::{build_reduced_system, init_infinite, limiting_full_stiffness};
use twotemp::Domain;

fn main() -> twotemp::Result<()> {
    let domain = Domain::default();
    let set = place_inclusions(0.125, &DensitySpec::uniform(domain), &domain, 3, 100)?;
    let grid = build_grid(&domain, 1.0 / 32.0)?;
    let mask = classify_cells(&grid, &set)?;
    let params = MaterialParams::new(1.0, 1.0, 1.0)?;
    let sys = Arc::new(build_reduced_system(&grid, &mask, &set, params)?);
    println!(
        "{} cells -> {} nodes, P^T K P == K_red: {}",
        grid.cell_count(),
        sys.node_count(),
        sys.aggregates_exactly(&limiting_full_stiffness(&grid, &mask, 1.0))
    );
    let balls = set.clone();
    let mut state = init_infinite(sys, move |x| if balls.locate(&x).is_some() { 3.0 } else { x[0] }, &set)?;
    for _ in 0..50 {
        state.step(2e-3, 1e-10)?;
    }
    let ti = state.inclusion_temperatures();
    println!("t={} T_i = {:.4?}", state.time, ti);
    println!("heat drift {:.2e}", state.ledger.max_relative_heat_drift());
    state.write_csv(std::io::stdout().lock())?;
    Ok(())
}
