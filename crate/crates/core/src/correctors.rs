//! Closed-form cell correctors around a single inclusion.
//!
//! `χ[1]` is the harmonic function on the annulus `ε < |z| < r` equal to 1
//! on the inner sphere and 0 on the outer one, extended by 1 inside and 0
//! outside. Only this constant-data corrector is evaluated; correctors for
//! general boundary data enter only through [`oscillation_bound`].

use std::f64::consts::PI;

use serde::Serialize;

use crate::error::{Error, Result};
use crate::geometry::{protection_radius, InclusionSet, Point};

#[derive(Clone, Copy, Debug, PartialEq, Serialize)]
pub struct CorrectorProfile {
    pub epsilon: f64,
    pub r_protect: f64,
}

impl CorrectorProfile {
    pub fn new(epsilon: f64, r_protect: f64) -> Result<Self> {
        if !(epsilon > 0.0 && epsilon < r_protect && r_protect.is_finite()) {
            return Err(Error::InvalidParameter(format!(
                "corrector needs 0 < epsilon < r_protect (got {epsilon}, {r_protect})"
            )));
        }
        Ok(Self { epsilon, r_protect })
    }

    /// Profile with `r_protect = epsilon^(1/3)`.
    pub fn scaled(epsilon: f64) -> Result<Self> {
        Self::new(epsilon, protection_radius(epsilon))
    }

    /// `ε r / (r − ε)`, the coefficient of `1/|z|`.
    fn amplitude(&self) -> f64 {
        self.epsilon * self.r_protect / (self.r_protect - self.epsilon)
    }
}

/// `χ[1]` at distance `radius` from the center.
pub fn chi_one(radius: f64, profile: &CorrectorProfile) -> f64 {
    let CorrectorProfile { epsilon, r_protect } = *profile;
    if radius <= epsilon {
        1.0
    } else if radius >= r_protect {
        0.0
    } else {
        profile.amplitude() * (1.0 / radius - 1.0 / r_protect)
    }
}

/// Radial derivative of `χ[1]` on the closed annulus (one-sided at the
/// spheres), zero elsewhere.
pub fn chi_one_derivative(radius: f64, profile: &CorrectorProfile) -> f64 {
    if radius < profile.epsilon || radius > profile.r_protect {
        0.0
    } else {
        -profile.amplitude() / (radius * radius)
    }
}

#[derive(Clone, Copy, Debug, PartialEq, Serialize)]
pub struct ChiNorms {
    pub l2_sq: f64,
    pub h1_semi_sq: f64,
}

/// `‖χ[1]‖² = (4π/3) ε² r` and `‖∇χ[1]‖² = 4π ε r / (r − ε)` over R³.
pub fn chi_norms(profile: &CorrectorProfile) -> ChiNorms {
    let CorrectorProfile { epsilon, r_protect } = *profile;
    ChiNorms {
        l2_sq: 4.0 * PI / 3.0 * epsilon * epsilon * r_protect,
        h1_semi_sq: 4.0 * PI * epsilon * r_protect / (r_protect - epsilon),
    }
}

/// Bound `(4π/3) g² (ε² + 2 ε r)` on the squared gradient norm of the
/// oscillating part of `φ χ`, for `‖∇φ‖_∞ = g`.
pub fn oscillation_bound(grad_inf: f64, profile: &CorrectorProfile) -> f64 {
    let CorrectorProfile { epsilon, r_protect } = *profile;
    4.0 * PI / 3.0 * grad_inf * grad_inf * (epsilon * epsilon + 2.0 * epsilon * r_protect)
}

/// 26-point Lebedev rule on the unit sphere (exact for polynomials of
/// degree 7). Weights sum to one.
pub fn sphere_rule() -> Vec<(Point, f64)> {
    let mut nodes = Vec::with_capacity(26);
    for axis in 0..3 {
        for s in [1.0, -1.0] {
            let mut p = [0.0; 3];
            p[axis] = s;
            nodes.push((p, 1.0 / 21.0));
        }
    }
    let a = std::f64::consts::FRAC_1_SQRT_2;
    for (i, j) in [(0, 1), (0, 2), (1, 2)] {
        for si in [a, -a] {
            for sj in [a, -a] {
                let mut p = [0.0; 3];
                p[i] = si;
                p[j] = sj;
                nodes.push((p, 4.0 / 105.0));
            }
        }
    }
    let b = 1.0 / 3f64.sqrt();
    for sx in [b, -b] {
        for sy in [b, -b] {
            for sz in [b, -b] {
                nodes.push(([sx, sy, sz], 9.0 / 280.0));
            }
        }
    }
    nodes
}

/// `∮_{∂B(center, radius)} psi dS` by the 26-point rule.
pub fn sphere_integral(center: Point, radius: f64, psi: &dyn Fn(Point) -> f64) -> f64 {
    let area = 4.0 * PI * radius * radius;
    area * sphere_rule()
        .iter()
        .map(|(n, w)| {
            w * psi([
                center[0] + radius * n[0],
                center[1] + radius * n[1],
                center[2] + radius * n[2],
            ])
        })
        .sum::<f64>()
}

/// Pairing of the capacity measure
/// `−(ε r / (r² (r − ε))) Σ φ(x_i) δ_{∂B(x_i, r)}` with `psi`, `r` the
/// protection radius. Tends to `−4π ∫ ρ φ psi` as ε → 0.
pub fn capacity_pairing(set: &InclusionSet, phi: impl Fn(Point) -> f64, psi: impl Fn(Point) -> f64) -> f64 {
    let (eps, r) = (set.epsilon(), set.r_protect());
    let scale = -eps * r / (r * r * (r - eps));
    scale
        * set
            .centers()
            .iter()
            .map(|&x| {
                let f = phi(x);
                if f == 0.0 {
                    0.0
                } else {
                    f * sphere_integral(x, r, &psi)
                }
            })
            .sum::<f64>()
}

/// Relative error of the constant-data pairing against `−4π`, which is
/// exactly `ε / (r − ε)` when `N ε = 1`.
pub fn capacity_error_const_case(set: &InclusionSet) -> f64 {
    let p = capacity_pairing(set, |_| 1.0, |_| 1.0);
    (p + 4.0 * PI).abs() / (4.0 * PI)
}
