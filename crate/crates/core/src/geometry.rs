//! Admissible inclusion configurations.
//!
//! `N = 1/epsilon` spheres of radius `epsilon`, with centers kept more than
//! `2 r` apart where `r = epsilon^(1/3)` is the protection radius. For the
//! side-2 box this forces packing fractions close to that of a simple cubic
//! lattice, so centers are laid out on a jittered product lattice whose axis
//! positions are stratified quantiles of the density marginals.
//!
//! How centers are generated for a non-uniform density is a choice of this
//! crate; only the constraints and the empirical-measure limit are fixed.

use std::fmt;
use std::sync::Arc;

use rand::seq::index;
use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;
use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};

pub type Point = [f64; 3];

/// Relative margin added to the separation constraint during placement so
/// that the strict inequality survives round-off.
pub const SEPARATION_MARGIN: f64 = 1e-6;

const EPSILON_INTEGRALITY: f64 = 1e-9;

pub fn distance(a: &Point, b: &Point) -> f64 {
    ((a[0] - b[0]).powi(2) + (a[1] - b[1]).powi(2) + (a[2] - b[2]).powi(2)).sqrt()
}

#[derive(Clone, Copy, Debug, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct Domain {
    pub lower: Point,
    pub upper: Point,
}

impl Domain {
    pub fn new(lower: Point, upper: Point) -> Result<Self> {
        for k in 0..3 {
            if !(upper[k] > lower[k]) || !lower[k].is_finite() || !upper[k].is_finite() {
                return Err(Error::InvalidDomain(format!(
                    "axis {k}: upper {} must exceed lower {}",
                    upper[k], lower[k]
                )));
            }
        }
        Ok(Self { lower, upper })
    }

    /// Axis-aligned cube of the given side centered at the origin.
    pub fn centered_cube(side: f64) -> Result<Self> {
        let half = 0.5 * side;
        Self::new([-half; 3], [half; 3])
    }

    pub fn side(&self, axis: usize) -> f64 {
        self.upper[axis] - self.lower[axis]
    }

    pub fn volume(&self) -> f64 {
        self.side(0) * self.side(1) * self.side(2)
    }

    pub fn contains(&self, x: &Point) -> bool {
        (0..3).all(|k| x[k] >= self.lower[k] && x[k] <= self.upper[k])
    }

    /// True when the closed ball lies in the open box (no contact with the
    /// boundary).
    pub fn contains_ball_strictly(&self, center: &Point, radius: f64) -> bool {
        (0..3).all(|k| center[k] - radius > self.lower[k] && center[k] + radius < self.upper[k])
    }

    /// `∫ |x|^2 dx / |Ω|`, the second moment of the uniform distribution.
    pub fn uniform_second_moment(&self) -> f64 {
        (0..3)
            .map(|k| {
                let (a, b) = (self.lower[k], self.upper[k]);
                (b.powi(3) - a.powi(3)) / (3.0 * (b - a))
            })
            .sum()
    }
}

impl Default for Domain {
    fn default() -> Self {
        Self {
            lower: [-1.0; 3],
            upper: [1.0; 3],
        }
    }
}

type DensityFn = Arc<dyn Fn(Point) -> f64 + Send + Sync>;

#[derive(Clone)]
enum DensityKind {
    Uniform,
    Custom { f: DensityFn, scale: f64 },
}

/// Probability density of inclusion centers on a domain.
#[derive(Clone)]
pub struct DensitySpec {
    domain: Domain,
    kind: DensityKind,
    name: String,
}

impl fmt::Debug for DensitySpec {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        f.debug_struct("DensitySpec")
            .field("name", &self.name)
            .field("domain", &self.domain)
            .finish()
    }
}

const DENSITY_QUADRATURE: usize = 48;
const MARGINAL_BINS: usize = 512;
const MARGINAL_TRANSVERSE: usize = 24;

impl DensitySpec {
    pub fn uniform(domain: Domain) -> Self {
        Self {
            domain,
            kind: DensityKind::Uniform,
            name: "uniform".into(),
        }
    }

    /// Normalizes a positive function to unit mass on the domain. The
    /// normalization integral uses a midpoint rule on a 48^3 lattice.
    pub fn from_fn(
        domain: Domain,
        name: impl Into<String>,
        f: impl Fn(Point) -> f64 + Send + Sync + 'static,
    ) -> Result<Self> {
        let f: DensityFn = Arc::new(f);
        let (integral, min, max) = midpoint_stats(&domain, DENSITY_QUADRATURE, |x| f(x));
        if !(min > 0.0) || !max.is_finite() {
            return Err(Error::InvalidDensity(format!(
                "density must be bounded and bounded away from zero (sampled range [{min}, {max}])"
            )));
        }
        Ok(Self {
            domain,
            kind: DensityKind::Custom {
                f,
                scale: 1.0 / integral,
            },
            name: name.into(),
        })
    }

    pub fn domain(&self) -> &Domain {
        &self.domain
    }

    pub fn name(&self) -> &str {
        &self.name
    }

    pub fn is_uniform(&self) -> bool {
        matches!(self.kind, DensityKind::Uniform)
    }

    pub fn eval(&self, x: Point) -> f64 {
        match &self.kind {
            DensityKind::Uniform => 1.0 / self.domain.volume(),
            DensityKind::Custom { f, scale } => scale * f(x),
        }
    }

    /// Total mass on the domain (midpoint quadrature). Equals one up to
    /// quadrature error.
    pub fn normalization(&self) -> f64 {
        midpoint_stats(&self.domain, DENSITY_QUADRATURE, |x| self.eval(x)).0
    }

    /// Sampled lower and upper bounds of the density.
    pub fn bounds(&self) -> (f64, f64) {
        let (_, min, max) = midpoint_stats(&self.domain, DENSITY_QUADRATURE, |x| self.eval(x));
        (min, max)
    }

    /// Positions along `axis` at the marginal quantiles `(j + 1/2) / n`.
    pub fn axis_quantiles(&self, axis: usize, n: usize) -> Vec<f64> {
        let lo = self.domain.lower[axis];
        let side = self.domain.side(axis);
        if self.is_uniform() {
            return (0..n)
                .map(|j| lo + side * (j as f64 + 0.5) / n as f64)
                .collect();
        }
        // Piecewise-linear marginal CDF on MARGINAL_BINS bins.
        let (a, b) = match axis {
            0 => (1, 2),
            1 => (0, 2),
            _ => (0, 1),
        };
        let bin = side / MARGINAL_BINS as f64;
        let ha = self.domain.side(a) / MARGINAL_TRANSVERSE as f64;
        let hb = self.domain.side(b) / MARGINAL_TRANSVERSE as f64;
        let mut cdf = Vec::with_capacity(MARGINAL_BINS + 1);
        cdf.push(0.0);
        let mut acc = 0.0;
        for i in 0..MARGINAL_BINS {
            let mut x = [0.0; 3];
            x[axis] = lo + (i as f64 + 0.5) * bin;
            let mut slab = 0.0;
            for ia in 0..MARGINAL_TRANSVERSE {
                x[a] = self.domain.lower[a] + (ia as f64 + 0.5) * ha;
                for ib in 0..MARGINAL_TRANSVERSE {
                    x[b] = self.domain.lower[b] + (ib as f64 + 0.5) * hb;
                    slab += self.eval(x);
                }
            }
            acc += slab * ha * hb * bin;
            cdf.push(acc);
        }
        let total = acc;
        (0..n)
            .map(|j| {
                let target = total * (j as f64 + 0.5) / n as f64;
                let i = cdf.partition_point(|&c| c < target).clamp(1, MARGINAL_BINS);
                let (c0, c1) = (cdf[i - 1], cdf[i]);
                let frac = if c1 > c0 { (target - c0) / (c1 - c0) } else { 0.5 };
                lo + (i as f64 - 1.0 + frac) * bin
            })
            .collect()
    }
}

fn midpoint_stats(domain: &Domain, n: usize, f: impl Fn(Point) -> f64) -> (f64, f64, f64) {
    let h = [
        domain.side(0) / n as f64,
        domain.side(1) / n as f64,
        domain.side(2) / n as f64,
    ];
    let dv = h[0] * h[1] * h[2];
    let (mut sum, mut min, mut max) = (0.0, f64::INFINITY, f64::NEG_INFINITY);
    for k in 0..n {
        for j in 0..n {
            for i in 0..n {
                let x = [
                    domain.lower[0] + (i as f64 + 0.5) * h[0],
                    domain.lower[1] + (j as f64 + 0.5) * h[1],
                    domain.lower[2] + (k as f64 + 0.5) * h[2],
                ];
                let v = f(x);
                sum += v * dv;
                min = min.min(v);
                max = max.max(v);
            }
        }
    }
    (sum, min, max)
}

/// Number of inclusions `N = 1/epsilon`, rejecting non-integral reciprocals.
pub fn inclusion_count(epsilon: f64) -> Result<usize> {
    if !(epsilon > 0.0) || !epsilon.is_finite() {
        return Err(Error::InvalidEpsilon {
            epsilon,
            reason: "must be positive and finite",
        });
    }
    let inv = 1.0 / epsilon;
    let n = inv.round();
    if (inv - n).abs() > EPSILON_INTEGRALITY || n < 1.0 {
        return Err(Error::InvalidEpsilon {
            epsilon,
            reason: "1/epsilon must be an integer",
        });
    }
    Ok(n as usize)
}

pub fn protection_radius(epsilon: f64) -> f64 {
    epsilon.cbrt()
}

/// Inclusion centers with radius `epsilon` and protection radius
/// `epsilon^(1/3)`. The count always equals `1/epsilon`; the geometric
/// constraints are checked by [`check_admissibility`].
#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
#[serde(try_from = "InclusionSetRepr", into = "InclusionSetRepr")]
pub struct InclusionSet {
    epsilon: f64,
    r_protect: f64,
    centers: Vec<Point>,
}

#[derive(Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
struct InclusionSetRepr {
    epsilon: f64,
    centers: Vec<Point>,
}

impl TryFrom<InclusionSetRepr> for InclusionSet {
    type Error = Error;

    fn try_from(repr: InclusionSetRepr) -> Result<Self> {
        InclusionSet::new(repr.epsilon, repr.centers)
    }
}

impl From<InclusionSet> for InclusionSetRepr {
    fn from(set: InclusionSet) -> Self {
        Self {
            epsilon: set.epsilon,
            centers: set.centers,
        }
    }
}

impl InclusionSet {
    pub fn new(epsilon: f64, centers: Vec<Point>) -> Result<Self> {
        let count = inclusion_count(epsilon)?;
        if centers.len() != count {
            return Err(Error::InvalidEpsilon {
                epsilon,
                reason: "center count must equal round(1/epsilon)",
            });
        }
        Ok(Self {
            epsilon,
            r_protect: protection_radius(epsilon),
            centers,
        })
    }

    pub fn epsilon(&self) -> f64 {
        self.epsilon
    }

    pub fn r_protect(&self) -> f64 {
        self.r_protect
    }

    pub fn centers(&self) -> &[Point] {
        &self.centers
    }

    pub fn count(&self) -> usize {
        self.centers.len()
    }

    pub fn min_pairwise_distance(&self) -> Option<f64> {
        let mut best: Option<f64> = None;
        for (i, a) in self.centers.iter().enumerate() {
            for b in &self.centers[i + 1..] {
                let d = distance(a, b);
                best = Some(best.map_or(d, |m| m.min(d)));
            }
        }
        best
    }

    pub fn second_moment(&self) -> f64 {
        pair_empirical(self, |x| x[0] * x[0] + x[1] * x[1] + x[2] * x[2])
    }

    /// Index of the inclusion whose closed ball contains `x`.
    pub fn locate(&self, x: &Point) -> Option<usize> {
        self.centers
            .iter()
            .position(|c| distance(c, x) <= self.epsilon)
    }
}

#[derive(Clone, Debug, PartialEq, Serialize)]
#[serde(tag = "kind", rename_all = "snake_case")]
pub enum Violation {
    Count { expected: usize, actual: usize },
    Separation { i: usize, j: usize, distance: f64, required: f64 },
    Containment { index: usize },
    SecondMoment { value: f64, bound: f64 },
}

#[derive(Clone, Debug, Default, PartialEq, Serialize)]
pub struct AdmissibilityReport {
    pub violations: Vec<Violation>,
}

impl AdmissibilityReport {
    pub fn is_admissible(&self) -> bool {
        self.violations.is_empty()
    }
}

/// Brute-force check of every inclusion constraint. The separation test is
/// the strict inequality `|x_i - x_j| > 2 r`.
pub fn check_admissibility(set: &InclusionSet, domain: &Domain, c_in: f64) -> AdmissibilityReport {
    let mut violations = Vec::new();
    if let Ok(expected) = inclusion_count(set.epsilon) {
        if expected != set.count() {
            violations.push(Violation::Count {
                expected,
                actual: set.count(),
            });
        }
    }
    let required = 2.0 * set.r_protect;
    for i in 0..set.count() {
        for j in i + 1..set.count() {
            let d = distance(&set.centers[i], &set.centers[j]);
            if !(d > required) {
                violations.push(Violation::Separation {
                    i,
                    j,
                    distance: d,
                    required,
                });
            }
        }
    }
    for (index, c) in set.centers.iter().enumerate() {
        if !domain.contains_ball_strictly(c, set.epsilon) {
            violations.push(Violation::Containment { index });
        }
    }
    let m2 = set.second_moment();
    if m2 > c_in {
        violations.push(Violation::SecondMoment {
            value: m2,
            bound: c_in,
        });
    }
    AdmissibilityReport { violations }
}

/// `(1/N) Σ phi(x_i)`.
pub fn pair_empirical(set: &InclusionSet, phi: impl Fn(Point) -> f64) -> f64 {
    if set.centers.is_empty() {
        return 0.0;
    }
    set.centers.iter().map(|&x| phi(x)).sum::<f64>() / set.count() as f64
}

/// Axis positions of a product lattice, already spread so neighboring
/// positions are at least `sep` apart and clamped to `[lo, hi]`.
fn axis_positions(
    density: &DensitySpec,
    axis: usize,
    n: usize,
    sep: f64,
    lo: f64,
    hi: f64,
) -> Option<Vec<f64>> {
    let q = density.axis_quantiles(axis, n);
    if n == 1 {
        return Some(vec![q[0].clamp(lo, hi)]);
    }
    let min_gap = q.windows(2).map(|w| w[1] - w[0]).fold(f64::INFINITY, f64::min);
    if !(min_gap > 0.0) {
        return None;
    }
    let scale = (sep / min_gap).max(1.0);
    let mid = 0.5 * (q[0] + q[n - 1]);
    let mut p: Vec<f64> = q.iter().map(|&x| mid + scale * (x - mid)).collect();
    if p[n - 1] - p[0] > hi - lo {
        return None;
    }
    let shift = if p[0] < lo {
        lo - p[0]
    } else if p[n - 1] > hi {
        hi - p[n - 1]
    } else {
        0.0
    };
    for x in &mut p {
        *x += shift;
    }
    Some(p)
}

/// Places `round(1/epsilon)` inclusions by a jittered product lattice.
///
/// Lattice shapes are tried from the smallest slot count up; each axis uses
/// the density's marginal quantiles, spread about their midpoint until
/// neighbors clear the separation. Surplus slots are dropped at random,
/// then every center is jittered uniformly and symmetrically about its
/// lattice position, within half the spare gap to its lattice neighbors (or
/// the wall). Symmetric jitter leaves the mean position unbiased, and any
/// two centers stay separated along at least one axis.
pub fn place_inclusions(
    epsilon: f64,
    density: &DensitySpec,
    domain: &Domain,
    seed: u64,
    max_attempts: usize,
) -> Result<InclusionSet> {
    let count = inclusion_count(epsilon)?;
    if epsilon > 1.0 {
        return Err(Error::InvalidEpsilon {
            epsilon,
            reason: "must not exceed 1",
        });
    }
    let r = protection_radius(epsilon);
    let sep = 2.0 * r * (1.0 + SEPARATION_MARGIN);
    let infeasible = |reason: String| Error::PackingInfeasible {
        epsilon,
        count,
        reason,
    };

    let mut lo = [0.0; 3];
    let mut hi = [0.0; 3];
    let mut max_per_axis = [0usize; 3];
    for k in 0..3 {
        let margin = epsilon * (1.0 + 1e-9) + 1e-12 * domain.side(k);
        lo[k] = domain.lower[k] + margin;
        hi[k] = domain.upper[k] - margin;
        if !(hi[k] > lo[k]) {
            return Err(infeasible(format!(
                "a ball of radius {epsilon} does not fit along axis {k}"
            )));
        }
        max_per_axis[k] = if count == 1 {
            1
        } else {
            ((hi[k] - lo[k]) / sep).floor() as usize + 1
        };
    }

    let mut shapes = Vec::new();
    for nx in 1..=max_per_axis[0].min(count) {
        for ny in 1..=max_per_axis[1].min(count) {
            for nz in 1..=max_per_axis[2].min(count) {
                if nx * ny * nz >= count {
                    shapes.push([nx, ny, nz]);
                }
            }
        }
    }
    shapes.sort_by_key(|s| {
        let spread = s.iter().max().unwrap() - s.iter().min().unwrap();
        (s[0] * s[1] * s[2], spread, std::cmp::Reverse(*s))
    });

    let lattice = shapes.iter().find_map(|shape| {
        let axes: Option<Vec<Vec<f64>>> = (0..3)
            .map(|k| axis_positions(density, k, shape[k], sep, lo[k], hi[k]))
            .collect();
        axes.map(|a| (*shape, a))
    });
    let Some((shape, axes)) = lattice else {
        return Err(infeasible(format!(
            "no lattice with at most {max_per_axis:?} positions per axis holds {count} centers \
             separated by {:.6}",
            2.0 * r
        )));
    };

    // Jitter intervals [-left, right] for each axis position.
    let slack: Vec<Vec<(f64, f64)>> = (0..3)
        .map(|k| {
            let p = &axes[k];
            let n = p.len();
            (0..n)
                .map(|j| {
                    let left = if j == 0 { p[0] - lo[k] } else { 0.5 * (p[j] - p[j - 1] - sep) };
                    let right = if j + 1 == n {
                        hi[k] - p[j]
                    } else {
                        0.5 * (p[j + 1] - p[j] - sep)
                    };
                    (left.max(0.0), right.max(0.0))
                })
                .collect()
        })
        .collect();

    let slots = shape[0] * shape[1] * shape[2];
    let mut rng = ChaCha8Rng::seed_from_u64(seed);
    let mut chosen: Vec<usize> = if slots > count {
        index::sample(&mut rng, slots, count).into_vec()
    } else {
        (0..slots).collect()
    };
    chosen.sort_unstable();

    let required = 2.0 * r;
    for _ in 0..max_attempts.max(1) {
        let centers: Vec<Point> = chosen
            .iter()
            .map(|&s| {
                let idx = [s % shape[0], (s / shape[0]) % shape[1], s / (shape[0] * shape[1])];
                let mut c = [0.0; 3];
                for k in 0..3 {
                    let (left, right) = slack[k][idx[k]];
                    let reach = left.min(right);
                    let jitter = if reach > 0.0 {
                        rng.gen_range(-reach..=reach)
                    } else {
                        0.0
                    };
                    c[k] = axes[k][idx[k]] + jitter;
                }
                c
            })
            .collect();
        let separated = centers.iter().enumerate().all(|(i, a)| {
            centers[i + 1..]
                .iter()
                .all(|b| distance(a, b) > required)
        });
        let contained = centers
            .iter()
            .all(|c| domain.contains_ball_strictly(c, epsilon));
        if separated && contained {
            return InclusionSet::new(epsilon, centers);
        }
    }
    Err(infeasible(format!(
        "rejection re-draws exhausted after {max_attempts} attempts"
    )))
}
