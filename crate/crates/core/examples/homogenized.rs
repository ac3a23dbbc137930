//! Homogenized two-temperature system with a tilted density.

use twotemp::discretization::build_grid;
use twotemp::geometry::DensitySpec;
use twotemp::model_finite::MaterialParams;
use twotemp::model_homogenized::init_hom;
use twotemp::Domain;

fn main() -> twotemp::Result<()> {
    let domain = Domain::default();
    let rho = DensitySpec::from_fn(domain, "tilt", |x| 1.0 + 0.5 * x[2])?;
    let grid = build_grid(&domain, 0.125)?;
    let g_theta = |x: [f64; 3]| 2.0 + 0.5 * (std::f64::consts::PI * x[1]).sin();
    let mut state = init_hom(&grid, |x| 1.0 + 0.5 * x[0], |x| rho.eval(x) * g_theta(x), &rho, MaterialParams::new(1.0, 0.5, 1.0)?)?;
    for _ in 0..100 {
        state.step(1e-3, 1e-10)?;
    }
    state.write_csv(std::io::stdout().lock())?;
    Ok(())
}
