//! Norms, weak-* distances, conserved quantities and sweep reports.
//!
//! Weak-* convergence of measures is measured against a fixed finite
//! dictionary of smooth test functions: the distance between two objects is
//! the largest pairing difference over the dictionary, each pairing scaled
//! by the test function's sup norm. This is a computable stand-in for the
//! measure topology, not a dual norm.

use std::collections::BTreeMap;
use std::f64::consts::PI;

use serde::Serialize;

use crate::discretization::Grid;
use crate::error::{Error, Result};
use crate::geometry::{Domain, Point};
use crate::model_finite::FiniteState;
use crate::model_homogenized::HomState;
use crate::model_infinite::InfiniteState;

/// Finite sum of weighted Dirac masses.
#[derive(Clone, Debug, Default, PartialEq, Serialize)]
pub struct EmpiricalMeasure {
    pub atoms: Vec<(Point, f64)>,
}

/// Anything that can be integrated against a test function.
pub trait WeakPairing {
    fn pair(&self, psi: &dyn Fn(Point) -> f64) -> f64;

    /// Pairings with every dictionary element. The default evaluates
    /// [`pair`](Self::pair) once per element.
    fn pair_dictionary(&self, dict: &TestDictionary) -> Vec<f64> {
        (0..dict.len()).map(|m| self.pair(&|x| dict.eval(m, x))).collect()
    }
}

impl WeakPairing for EmpiricalMeasure {
    fn pair(&self, psi: &dyn Fn(Point) -> f64) -> f64 {
        self.atoms.iter().map(|(x, w)| w * psi(*x)).sum()
    }
}

/// A per-cell density paired by the midpoint rule `Σ h³ f(c) psi(c)`.
pub struct CellField<'a> {
    pub grid: &'a Grid,
    pub values: &'a [f64],
}

impl WeakPairing for CellField<'_> {
    fn pair(&self, psi: &dyn Fn(Point) -> f64) -> f64 {
        let vol = self.grid.cell_volume();
        self.values
            .iter()
            .enumerate()
            .map(|(c, v)| vol * v * psi(self.grid.center(c)))
            .sum()
    }

    fn pair_dictionary(&self, dict: &TestDictionary) -> Vec<f64> {
        // Tensor-product dictionary: tabulate each axis factor once.
        let dims = self.grid.dims();
        let vol = self.grid.cell_volume();
        let tables: Vec<Vec<Vec<f64>>> = (0..3)
            .map(|axis| {
                (0..=dict.max_mode)
                    .map(|k| {
                        (0..dims[axis])
                            .map(|i| {
                                let mut x = self.grid.center(0);
                                x[axis] = self.grid.domain().lower[axis] + (i as f64 + 0.5) * self.grid.h();
                                dict.axis_factor(axis, k, x[axis])
                            })
                            .collect()
                    })
                    .collect()
            })
            .collect();
        dict.modes
            .iter()
            .map(|m| {
                let (tx, ty, tz) = (&tables[0][m[0]], &tables[1][m[1]], &tables[2][m[2]]);
                let mut total = 0.0;
                for k in 0..dims[2] {
                    for j in 0..dims[1] {
                        let w = ty[j] * tz[k];
                        let base = dims[0] * (j + dims[1] * k);
                        let row = &self.values[base..base + dims[0]];
                        let mut acc = 0.0;
                        for (v, fx) in row.iter().zip(tx) {
                            acc += v * fx;
                        }
                        total += w * acc;
                    }
                }
                vol * total
            })
            .collect()
    }
}

/// Tensor-product cosines `Π_a cos(k_a π (x_a - lower_a) / side_a)` with
/// `0 <= k_a <= max_mode`; each has zero normal derivative on the box and
/// sup norm 1. Mode `(0,0,0)` is the constant function.
#[derive(Clone, Debug, PartialEq, Serialize)]
pub struct TestDictionary {
    pub domain: Domain,
    pub max_mode: usize,
    pub modes: Vec<[usize; 3]>,
}

impl TestDictionary {
    pub fn cosine(domain: Domain, max_mode: usize) -> Self {
        let mut modes = Vec::new();
        for kz in 0..=max_mode {
            for ky in 0..=max_mode {
                for kx in 0..=max_mode {
                    modes.push([kx, ky, kz]);
                }
            }
        }
        Self {
            domain,
            max_mode,
            modes,
        }
    }

    pub fn len(&self) -> usize {
        self.modes.len()
    }

    pub fn is_empty(&self) -> bool {
        self.modes.is_empty()
    }

    fn axis_factor(&self, axis: usize, k: usize, x: f64) -> f64 {
        if k == 0 {
            1.0
        } else {
            (k as f64 * PI * (x - self.domain.lower[axis]) / self.domain.side(axis)).cos()
        }
    }

    pub fn eval(&self, index: usize, x: Point) -> f64 {
        let m = self.modes[index];
        (0..3).map(|a| self.axis_factor(a, m[a], x[a])).product()
    }

    pub fn sup_norm(&self, _index: usize) -> f64 {
        1.0
    }
}

fn check_len(a: usize, b: usize) -> Result<()> {
    if a != b {
        return Err(Error::GridMismatch { left: a, right: b });
    }
    Ok(())
}

/// `sqrt(Σ w (a - b)²)`.
pub fn field_distance(a: &[f64], b: &[f64], weights: &[f64]) -> Result<f64> {
    check_len(a.len(), b.len())?;
    check_len(a.len(), weights.len())?;
    Ok(a.iter()
        .zip(b)
        .zip(weights)
        .map(|((x, y), w)| w * (x - y) * (x - y))
        .sum::<f64>()
        .sqrt())
}

/// `max_psi |<mu, psi> - <nu, psi>| / ‖psi‖_sup` with `nu` a cell density on
/// `grid`.
pub fn weak_distance(mu: &dyn WeakPairing, nu: &[f64], dict: &TestDictionary, grid: &Grid) -> Result<f64> {
    check_len(nu.len(), grid.cell_count())?;
    let field = CellField { grid, values: nu };
    let a = mu.pair_dictionary(dict);
    let b = field.pair_dictionary(dict);
    Ok(a.iter()
        .zip(&b)
        .enumerate()
        .map(|(m, (x, y))| (x - y).abs() / dict.sup_norm(m))
        .fold(0.0, f64::max))
}

/// Model-appropriate conserved totals (the constant test function in each
/// weak formulation).
pub trait ConservedFunctionals {
    fn conserved_functionals(&self) -> BTreeMap<&'static str, f64>;
}

impl ConservedFunctionals for FiniteState {
    fn conserved_functionals(&self) -> BTreeMap<&'static str, f64> {
        BTreeMap::from([("total_heat", self.system.total_heat(&self.temperature))])
    }
}

impl ConservedFunctionals for InfiniteState {
    fn conserved_functionals(&self) -> BTreeMap<&'static str, f64> {
        BTreeMap::from([("total_heat", self.system.total_heat(&self.unknowns))])
    }
}

impl ConservedFunctionals for HomState {
    fn conserved_functionals(&self) -> BTreeMap<&'static str, f64> {
        BTreeMap::from([("total_heat", self.conserved_functional()), ("lyapunov", self.lyapunov())])
    }
}

/// Least-squares slope of `log(metric)` against `log(parameter)`; `None`
/// with fewer than three points or any non-positive value.
pub fn fit_log_log_slope(parameters: &[f64], metric: &[f64]) -> Option<f64> {
    if parameters.len() < 3 || parameters.len() != metric.len() {
        return None;
    }
    if parameters.iter().chain(metric).any(|&v| !(v > 0.0)) {
        return None;
    }
    let xs: Vec<f64> = parameters.iter().map(|p| p.ln()).collect();
    let ys: Vec<f64> = metric.iter().map(|m| m.ln()).collect();
    let n = xs.len() as f64;
    let mx = xs.iter().sum::<f64>() / n;
    let my = ys.iter().sum::<f64>() / n;
    let sxy: f64 = xs.iter().zip(&ys).map(|(x, y)| (x - mx) * (y - my)).sum();
    let sxx: f64 = xs.iter().map(|x| (x - mx).powi(2)).sum();
    Some(sxy / sxx)
}

/// True when every later value is strictly smaller than the previous one.
pub fn strictly_decreasing(values: &[f64]) -> bool {
    values.windows(2).all(|w| w[1] < w[0])
}

#[derive(Clone, Debug, Default, PartialEq, Serialize)]
pub struct SweepReport {
    pub experiment: String,
    pub parameter: String,
    pub values: Vec<f64>,
    pub metrics: BTreeMap<String, Vec<f64>>,
    pub monotone_decrease: BTreeMap<String, bool>,
    pub fitted_rate: BTreeMap<String, Option<f64>>,
    /// Scalar checks (energy residuals, conservation drift, ...).
    pub checks: BTreeMap<String, f64>,
    /// Pass/fail of each asserted property.
    pub acceptance: BTreeMap<String, bool>,
    pub notes: Vec<String>,
}

impl SweepReport {
    pub fn new(experiment: impl Into<String>, parameter: impl Into<String>, values: Vec<f64>) -> Self {
        Self {
            experiment: experiment.into(),
            parameter: parameter.into(),
            values,
            ..Default::default()
        }
    }

    /// Adds a metric series, with its monotonicity flag and fitted rate
    /// against the parameter.
    pub fn add_metric(&mut self, name: &str, series: Vec<f64>) {
        debug_assert!(series.iter().all(|v| *v >= 0.0 || v.is_nan()));
        self.monotone_decrease.insert(name.into(), strictly_decreasing(&series));
        self.fitted_rate
            .insert(name.into(), fit_log_log_slope(&self.values, &series));
        self.metrics.insert(name.into(), series);
    }

    pub fn accept(&mut self, name: &str, passed: bool) {
        self.acceptance.insert(name.into(), passed);
    }

    pub fn passed(&self) -> bool {
        self.acceptance.values().all(|&p| p)
    }

    pub fn failures(&self) -> Vec<&str> {
        self.acceptance
            .iter()
            .filter(|(_, &p)| !p)
            .map(|(k, _)| k.as_str())
            .collect()
    }

    pub fn metric(&self, name: &str) -> &[f64] {
        self.metrics.get(name).map(Vec::as_slice).unwrap_or(&[])
    }

    /// One CSV row per parameter value: `<parameter>,<metric...>` in
    /// metric-name order.
    pub fn to_csv(&self) -> String {
        let mut out = self.parameter.clone();
        for name in self.metrics.keys() {
            out.push(',');
            out.push_str(name);
        }
        out.push('\n');
        for (row, v) in self.values.iter().enumerate() {
            out.push_str(&v.to_string());
            for series in self.metrics.values() {
                out.push(',');
                out.push_str(&series.get(row).map_or(String::new(), |x| x.to_string()));
            }
            out.push('\n');
        }
        out
    }
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::discretization::build_grid;
    use proptest::prelude::*;

    fn grid() -> Grid {
        build_grid(&Domain::centered_cube(2.0).unwrap(), 0.25).unwrap()
    }

    #[test]
    fn distance_of_constant_offset() {
        let w = vec![0.5, 1.5, 2.0];
        let a = vec![1.0, 2.0, 3.0];
        let b: Vec<f64> = a.iter().map(|x| x - 0.3).collect();
        let d = field_distance(&a, &b, &w).unwrap();
        assert!((d - 0.3 * 4.0f64.sqrt()).abs() < 1e-14);
        assert_eq!(field_distance(&a, &a, &w).unwrap(), 0.0);
        assert!(matches!(field_distance(&a, &b[..2], &w), Err(Error::GridMismatch { .. })));
    }

    #[test]
    fn dictionary_contains_constant() {
        let d = TestDictionary::cosine(Domain::default(), 3);
        assert_eq!(d.len(), 64);
        assert_eq!(d.modes[0], [0, 0, 0]);
        assert_eq!(d.eval(0, [0.3, 0.1, -0.7]), 1.0);
    }

    #[test]
    fn tabulated_pairing_matches_direct() {
        let g = grid();
        let dict = TestDictionary::cosine(*g.domain(), 3);
        let values = g.sample(|x| x[0] * x[0] + (x[1] * 2.0).sin() - x[2]);
        let f = CellField { grid: &g, values: &values };
        let fast = f.pair_dictionary(&dict);
        for (m, v) in fast.iter().enumerate() {
            let slow = f.pair(&|x| dict.eval(m, x));
            assert!((v - slow).abs() < 1e-12);
        }
    }

    #[test]
    fn matching_atoms_have_zero_distance() {
        let g = grid();
        let dict = TestDictionary::cosine(*g.domain(), 3);
        let nu = g.sample(|x| 1.0 + x[0]);
        let mu = EmpiricalMeasure {
            atoms: (0..g.cell_count()).map(|c| (g.center(c), g.cell_volume() * nu[c])).collect(),
        };
        assert!(weak_distance(&mu, &nu, &dict, &g).unwrap() < 1e-12);
    }

    #[test]
    fn single_atom_against_zero() {
        let g = grid();
        let dict = TestDictionary::cosine(*g.domain(), 3);
        let mu = EmpiricalMeasure {
            atoms: vec![([0.1, 0.2, 0.3], 1.0)],
        };
        assert!(weak_distance(&mu, &vec![0.0; g.cell_count()], &dict, &g).unwrap() >= 1.0);
    }

    #[test]
    fn slope_fit() {
        let p = [1e-1, 1e-2, 1e-3];
        let m: Vec<f64> = p.iter().map(|x| 3.0 * x * x).collect();
        assert!((fit_log_log_slope(&p, &m).unwrap() - 2.0).abs() < 1e-12);
        assert!(fit_log_log_slope(&p[..2], &m[..2]).is_none());
    }

    #[test]
    fn report_csv() {
        let mut r = SweepReport::new("x", "eta", vec![0.1, 0.01, 0.001]);
        r.add_metric("l2", vec![3.0, 2.0, 1.0]);
        assert!(r.monotone_decrease["l2"]);
        assert_eq!(r.to_csv(), "eta,l2\n0.1,3\n0.01,2\n0.001,1\n");
    }

    proptest! {
        #[test]
        fn triangle_inequality(
            a in prop::collection::vec(-5.0f64..5.0, 8),
            b in prop::collection::vec(-5.0f64..5.0, 8),
            c in prop::collection::vec(-5.0f64..5.0, 8),
            w in prop::collection::vec(0.01f64..2.0, 8),
        ) {
            let ab = field_distance(&a, &b, &w).unwrap();
            let bc = field_distance(&b, &c, &w).unwrap();
            let ac = field_distance(&a, &c, &w).unwrap();
            prop_assert!(ac <= ab + bc + 1e-12);
            prop_assert!((ab - field_distance(&b, &a, &w).unwrap()).abs() < 1e-15);
        }

        #[test]
        fn weak_bounded_by_strong(seed in 0u64..1000) {
            // |Σ h³ (a-b) psi| <= sqrt(|Ω|) ‖a-b‖_M for |psi| <= 1
            let g = grid();
            let dict = TestDictionary::cosine(*g.domain(), 3);
            let s = seed as f64;
            let a = g.sample(|x| (s * x[0]).sin() + x[1]);
            let b = g.sample(|x| (s * 0.5 * x[2]).cos());
            let w = vec![g.cell_volume(); g.cell_count()];
            let weak = weak_distance(&CellField { grid: &g, values: &a }, &b, &dict, &g).unwrap();
            let strong = field_distance(&a, &b, &w).unwrap();
            prop_assert!(weak <= strong * g.domain().volume().sqrt() + 1e-12);
        }
    }
}
