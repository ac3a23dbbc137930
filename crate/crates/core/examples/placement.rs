//! Places inclusions for a few epsilons on the default cube and checks them.

use twotemp::geometry::{check_admissibility, pair_empirical, place_inclusions, DensitySpec};
use twotemp::Domain;

fn main() -> twotemp::Result<()> {
    let domain = Domain::default();
    let rho = DensitySpec::uniform(domain);
    for eps in [0.25, 0.125, 0.0625, 1.0 / 64.0] {
        let set = place_inclusions(eps, &rho, &domain, 7, 100)?;
        let report = check_admissibility(&set, &domain, 2.0);
        println!(
            "eps={eps:<8} N={:<3} min_dist={:.4} (need > {:.4}) admissible={} <|x|^2>={:.4}",
            set.count(),
            set.min_pairwise_distance().unwrap_or(f64::INFINITY),
            2.0 * set.r_protect(),
            report.is_admissible(),
            pair_empirical(&set, |x| x[0] * x[0] + x[1] * x[1] + x[2] * x[2]),
        );
    }
    match place_inclusions(1.0 / 64.0, &rho, &Domain::centered_cube(1.0)?, 7, 100) {
        Err(e) => println!("unit cube: {e}"),
        Ok(_) => println!("unit cube: unexpectedly feasible"),
    }
    Ok(())
}
