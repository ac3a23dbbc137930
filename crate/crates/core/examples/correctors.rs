//! Corrector norms and capacity pairings over a range of epsilon.

use std::f64::consts::PI;

use twotemp::correctors::{capacity_error_const_case, capacity_pairing, chi_norms, oscillation_bound, CorrectorProfile};
use twotemp::geometry::{place_inclusions, DensitySpec};
use twotemp::Domain;

fn main() -> twotemp::Result<()> {
    println!("epsilon,r_eps,l2_sq,h1_semi_sq,h1_over_4pi_eps,osc_bound");
    for eps in [1e-1, 1e-2, 1e-3, 1e-4] {
        let p = CorrectorProfile::scaled(eps)?;
        let n = chi_norms(&p);
        println!(
            "{eps},{},{},{},{},{}",
            p.r_protect,
            n.l2_sq,
            n.h1_semi_sq,
            n.h1_semi_sq / (4.0 * PI * eps),
            oscillation_bound(1.0, &p)
        );
    }
    let domain = Domain::default();
    let rho = DensitySpec::uniform(domain);
    for eps in [0.25, 0.125, 0.0625, 1.0 / 64.0] {
        let set = place_inclusions(eps, &rho, &domain, 11, 100)?;
        let p = capacity_pairing(&set, |x| 1.0 + 0.3 * x[0], |x| (x[1]).cos());
        println!("eps={eps} const-case error={:.6} pairing={p:.6}", capacity_error_const_case(&set));
    }
    Ok(())
}
