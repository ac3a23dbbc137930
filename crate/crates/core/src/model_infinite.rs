//! Infinite-conductivity inclusions: diffusion on background cells, each
//! inclusion collapsed to one isothermal super-node of capacity
//! `epsilon sigma / sigma'`.
//!
//! The reduced stiffness is the zero-`eta` limit of the finite-conductivity
//! stencil. A background cell sees an isothermal neighbor half a cell away,
//! so interface faces carry conductance `2 sigma h` (the harmonic mean of
//! `sigma` and an infinite conductivity); faces inside an inclusion drop out
//! because fields are constant there.

use std::io::Write;
use std::sync::Arc;

use crate::diagnostics::EmpiricalMeasure;
use crate::discretization::{assemble_stiffness, backward_euler_step, DiffusionOperator, Grid, Phase, PhaseMask};
use crate::error::{Error, Result};
use crate::geometry::{InclusionSet, Point};
use crate::ledger::EnergyLedger;
use crate::model_finite::{voxel_average, MaterialParams};
use crate::sparse::{dot, CsrMatrix};

#[derive(Debug)]
pub struct ReducedSystem {
    pub grid: Grid,
    pub params: MaterialParams,
    pub epsilon: f64,
    pub operator: DiffusionOperator,
    pub supernode_capacity: f64,
    node_of_cell: Vec<usize>,
    background_cells: Vec<usize>,
    inclusion_cells: Vec<Vec<usize>>,
    centers: Vec<Point>,
}

fn face_limit(phases: &[Phase], a: usize, b: usize, sigma_h: f64) -> f64 {
    match (phases[a], phases[b]) {
        (Phase::Background, Phase::Background) => sigma_h,
        (Phase::Background, Phase::Inclusion(_)) | (Phase::Inclusion(_), Phase::Background) => 2.0 * sigma_h,
        _ => 0.0,
    }
}

/// Full-grid stiffness in the zero-`eta` limit: background faces `sigma h`,
/// interface faces `2 sigma h`, inclusion-internal faces dropped. Its
/// aggregation `Pᵀ K P` is the reduced stiffness.
pub fn limiting_full_stiffness(grid: &Grid, mask: &PhaseMask, sigma: f64) -> CsrMatrix {
    let phases = mask.phases();
    let sigma_h = sigma * grid.h();
    assemble_stiffness(grid, |a, b| face_limit(phases, a, b, sigma_h))
}

fn neighbors(grid: &Grid, c: usize) -> impl Iterator<Item = usize> {
    let [nx, ny, nz] = grid.dims();
    let [i, j, k] = grid.coords(c);
    let plane = nx * ny;
    [
        (k > 0).then(|| c - plane),
        (j > 0).then(|| c - nx),
        (i > 0).then(|| c - 1),
        (i + 1 < nx).then(|| c + 1),
        (j + 1 < ny).then(|| c + nx),
        (k + 1 < nz).then(|| c + plane),
    ]
    .into_iter()
    .flatten()
}

/// Assembles the reduced system over background cells (in cell order)
/// followed by one super-node per inclusion.
pub fn build_reduced_system(
    grid: &Grid,
    mask: &PhaseMask,
    set: &InclusionSet,
    params: MaterialParams,
) -> Result<ReducedSystem> {
    if mask.inclusion_count() != set.count() || mask.phases().len() != grid.cell_count() {
        return Err(Error::Invariant {
            module: "model_infinite",
            message: "phase mask does not match grid and inclusion set".into(),
        });
    }
    let phases = mask.phases();
    let n_cells = grid.cell_count();
    let background_cells: Vec<usize> = (0..n_cells).filter(|&c| mask.is_background(c)).collect();
    let n_bg = background_cells.len();
    let n_nodes = n_bg + mask.inclusion_count();
    let mut node_of_cell = vec![0; n_cells];
    for (node, &c) in background_cells.iter().enumerate() {
        node_of_cell[c] = node;
    }
    let inclusion_cells: Vec<Vec<usize>> =
        (0..mask.inclusion_count()).map(|i| mask.inclusion_cells(i).to_vec()).collect();
    for (i, cells) in inclusion_cells.iter().enumerate() {
        for &c in cells {
            node_of_cell[c] = n_bg + i;
        }
    }

    // Entries are accumulated cell by cell and face by face in the same
    // order as the aggregated full stencil, so the two agree bit for bit.
    let sigma_h = params.sigma * grid.h();
    let mut rows: Vec<Vec<(usize, f64)>> = vec![Vec::new(); n_nodes];
    for (node, &c) in background_cells.iter().enumerate() {
        let row = &mut rows[node];
        let mut diag = 0.0;
        let mut off = Vec::with_capacity(6);
        for nb in neighbors(grid, c) {
            let g = face_limit(phases, c, nb, sigma_h);
            diag += g;
            off.push((node_of_cell[nb], -g));
        }
        row.extend_from_slice(&off);
        row.push((node, diag));
    }
    for (i, cells) in inclusion_cells.iter().enumerate() {
        let node = n_bg + i;
        let row = &mut rows[node];
        let mut super_diag = 0.0;
        for &c in cells {
            let mut diag = 0.0;
            for nb in neighbors(grid, c) {
                match phases[nb] {
                    Phase::Background => {
                        let g = face_limit(phases, c, nb, sigma_h);
                        diag += g;
                        row.push((node_of_cell[nb], -g));
                    }
                    Phase::Inclusion(j) if j as usize != i => {
                        return Err(Error::Invariant {
                            module: "model_infinite",
                            message: format!("inclusions {i} and {j} share a face"),
                        });
                    }
                    Phase::Inclusion(_) => {}
                }
            }
            super_diag += diag;
        }
        row.push((node, super_diag));
    }
    let stiffness = CsrMatrix::from_rows(rows);

    let supernode_capacity = set.epsilon() * params.capacity_ratio();
    let vol = grid.cell_volume();
    let mut mass = vec![vol; n_bg];
    mass.extend(std::iter::repeat(supernode_capacity).take(mask.inclusion_count()));
    Ok(ReducedSystem {
        grid: grid.clone(),
        params,
        epsilon: set.epsilon(),
        operator: DiffusionOperator { stiffness, mass },
        supernode_capacity,
        node_of_cell,
        background_cells,
        inclusion_cells,
        centers: set.centers().to_vec(),
    })
}

impl ReducedSystem {
    pub fn node_count(&self) -> usize {
        self.operator.mass.len()
    }

    pub fn background_count(&self) -> usize {
        self.background_cells.len()
    }

    pub fn inclusion_count(&self) -> usize {
        self.inclusion_cells.len()
    }

    /// The aggregation map `P` as a cell-to-node table.
    pub fn aggregation_map(&self) -> &[usize] {
        &self.node_of_cell
    }

    /// Voxel volume of each inclusion, for comparison with the continuum
    /// ball volume.
    pub fn voxel_volumes(&self) -> Vec<f64> {
        let vol = self.grid.cell_volume();
        self.inclusion_cells.iter().map(|c| c.len() as f64 * vol).collect()
    }

    /// `P u`: extends node values to every cell.
    pub fn lift(&self, nodes: &[f64]) -> Vec<f64> {
        self.node_of_cell.iter().map(|&n| nodes[n]).collect()
    }

    /// Largest entrywise difference between `Pᵀ K P` and the reduced
    /// stiffness.
    pub fn aggregation_defect(&self, full: &CsrMatrix) -> f64 {
        full.aggregate(&self.node_of_cell, self.node_count())
            .max_abs_difference(&self.operator.stiffness)
    }

    /// True when `Pᵀ K P` equals the reduced stiffness entry for entry.
    pub fn aggregates_exactly(&self, full: &CsrMatrix) -> bool {
        full.aggregate(&self.node_of_cell, self.node_count()) == self.operator.stiffness
    }

    pub fn stored_energy(&self, u: &[f64]) -> f64 {
        0.5 * u.iter().zip(&self.operator.mass).map(|(v, m)| m * v * v).sum::<f64>()
    }

    /// `1ᵀM_bg T_bg + (epsilon sigma / sigma') Σ T_i`.
    pub fn total_heat(&self, u: &[f64]) -> f64 {
        dot(&self.operator.mass, u)
    }
}

#[derive(Clone, Copy, Debug, PartialEq)]
pub struct InclusionStats {
    pub min_ti: f64,
    pub max_ti: f64,
    pub theta_pairing_const1: f64,
}

#[derive(Clone, Debug)]
pub struct InfiniteState {
    pub system: Arc<ReducedSystem>,
    pub time: f64,
    /// Background cells first, then one value per inclusion.
    pub unknowns: Vec<f64>,
    pub ledger: EnergyLedger,
    pub history: Vec<InclusionStats>,
    pub last_iterations: usize,
}

/// Background cells take `t_in` at their centers; inclusion `i` takes the
/// voxel average of `t_in` over its cells.
pub fn init_infinite(
    system: Arc<ReducedSystem>,
    t_in: impl Fn(Point) -> f64,
    set: &InclusionSet,
) -> Result<InfiniteState> {
    if set.count() != system.inclusion_count() {
        return Err(Error::Invariant {
            module: "model_infinite",
            message: "inclusion set does not match reduced system".into(),
        });
    }
    let samples = system.grid.sample(&t_in);
    let mut unknowns: Vec<f64> = system.background_cells.iter().map(|&c| samples[c]).collect();
    for cells in &system.inclusion_cells {
        unknowns.push(voxel_average(cells, &samples));
    }
    let ledger = EnergyLedger::new(system.stored_energy(&unknowns), system.total_heat(&unknowns));
    let mut state = InfiniteState {
        system,
        time: 0.0,
        unknowns,
        ledger,
        history: Vec::new(),
        last_iterations: 0,
    };
    state.history.push(state.inclusion_stats());
    Ok(state)
}

impl InfiniteState {
    pub fn background(&self) -> &[f64] {
        &self.unknowns[..self.system.background_count()]
    }

    /// `T_{i,epsilon}` for every inclusion.
    pub fn inclusion_temperatures(&self) -> &[f64] {
        &self.unknowns[self.system.background_count()..]
    }

    /// Cell field: background values, extended by the inclusion values.
    pub fn lifted(&self) -> Vec<f64> {
        self.system.lift(&self.unknowns)
    }

    pub fn step(&mut self, dt: f64, rel_tol: f64) -> Result<()> {
        if !(dt > 0.0) {
            return Err(Error::InvalidParameter(format!("time step {dt} must be positive")));
        }
        let sys = &self.system;
        let outcome = backward_euler_step(&sys.operator, &self.unknowns, dt, rel_tol)?;
        let u = outcome.solution;
        let stored = sys.stored_energy(&u);
        let dissipated = dt * sys.operator.stiffness.quadratic_form(&u);
        let numerical = 0.5
            * u.iter()
                .zip(&self.unknowns)
                .zip(&sys.operator.mass)
                .map(|((a, b), m)| m * (a - b) * (a - b))
                .sum::<f64>();
        self.time += dt;
        let heat = sys.total_heat(&u);
        self.ledger.record(self.time, stored, dissipated, numerical, heat);
        self.unknowns = u;
        self.last_iterations = outcome.iterations;
        self.history.push(self.inclusion_stats());
        Ok(())
    }

    fn inclusion_stats(&self) -> InclusionStats {
        let ti = self.inclusion_temperatures();
        let n = ti.len().max(1) as f64;
        InclusionStats {
            min_ti: ti.iter().cloned().fold(f64::INFINITY, f64::min),
            max_ti: ti.iter().cloned().fold(f64::NEG_INFINITY, f64::max),
            theta_pairing_const1: ti.iter().sum::<f64>() / n,
        }
    }

    /// `∫_{A_eps} T² + (sigma/sigma') epsilon Σ T_i²` on the grid.
    pub fn energy_norm(&self) -> f64 {
        let vol = self.system.grid.cell_volume();
        let bg: f64 = self.background().iter().map(|t| t * t * vol).sum();
        bg + self.inclusion_second_moment()
    }

    /// `epsilon (sigma/sigma') Σ T_i²`.
    pub fn inclusion_second_moment(&self) -> f64 {
        let sys = &self.system;
        sys.epsilon * sys.params.capacity_ratio() * self.inclusion_temperatures().iter().map(|t| t * t).sum::<f64>()
    }

    /// Ledger CSV plus `min_Ti,max_Ti,theta_pairing_const1`.
    pub fn write_csv(&self, out: impl Write) -> Result<()> {
        let history = &self.history;
        self.ledger.write_csv_with(
            out,
            &["min_Ti", "max_Ti", "theta_pairing_const1"],
            |w, row| {
                let s = history[row];
                write!(w, ",{},{},{}", s.min_ti, s.max_ti, s.theta_pairing_const1)
            },
        )
    }
}

pub fn step_infinite(mut state: InfiniteState, dt: f64, rel_tol: f64) -> Result<InfiniteState> {
    state.step(dt, rel_tol)?;
    Ok(state)
}

/// `ϑ_eps = (1/N) Σ T_{i,eps} δ_{x_i}`.
pub fn theta_measure(state: &InfiniteState, set: &InclusionSet) -> EmpiricalMeasure {
    let n = set.count() as f64;
    EmpiricalMeasure {
        atoms: set
            .centers()
            .iter()
            .zip(state.inclusion_temperatures())
            .map(|(&x, &t)| (x, t / n))
            .collect(),
    }
}

impl ReducedSystem {
    pub fn centers(&self) -> &[Point] {
        &self.centers
    }
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::diagnostics::WeakPairing;
    use crate::discretization::{build_grid, classify_cells};
    use crate::geometry::Domain;
    use crate::model_finite::init_finite;

    fn four(h: f64) -> (Grid, PhaseMask, InclusionSet) {
        let d = Domain::centered_cube(2.0).unwrap();
        let g = build_grid(&d, h).unwrap();
        let set = InclusionSet::new(
            0.25,
            vec![[-0.5, -0.5, -0.5], [0.5, 0.5, -0.5], [0.5, -0.5, 0.5], [-0.56, 0.5, 0.5]],
        )
        .unwrap();
        let mask = classify_cells(&g, &set).unwrap();
        (g, mask, set)
    }

    #[test]
    fn supernode_capacity_value() {
        let d = Domain::centered_cube(2.0).unwrap();
        let g = build_grid(&d, 0.05).unwrap();
        let centers: Vec<Point> = (0..10)
            .map(|i| {
                let a = i as f64 * 0.6283;
                [0.7 * a.cos(), 0.7 * a.sin(), if i % 2 == 0 { 0.4 } else { -0.4 }]
            })
            .collect();
        let set = InclusionSet::new(0.1, centers).unwrap();
        let mask = classify_cells(&g, &set).unwrap();
        let sys = build_reduced_system(&g, &mask, &set, MaterialParams::new(1.0, 1.0, 1.0).unwrap()).unwrap();
        assert!((sys.supernode_capacity - 0.1).abs() < 1e-15);
        assert!(sys.operator.mass[sys.background_count()..].iter().all(|&m| m == sys.supernode_capacity));
    }

    #[test]
    fn reduced_dimension_and_null_space() {
        let (g, mask, set) = four(0.125);
        let sys = build_reduced_system(&g, &mask, &set, MaterialParams::new(1.0, 1.0, 1.0).unwrap()).unwrap();
        let k: usize = (0..4).map(|i| mask.inclusion_cells(i).len()).sum();
        assert_eq!(sys.node_count(), g.cell_count() - k + 4);
        let ones = vec![1.0; sys.node_count()];
        assert!(sys.operator.stiffness.matvec(&ones).iter().all(|&v| v == 0.0));
        assert_eq!(sys.operator.stiffness.symmetry_defect(), 0.0);
    }

    #[test]
    fn aggregation_is_exact_for_several_sigmas() {
        let (g, mask, set) = four(0.125);
        for sigma in [1.0, 0.7, 3.3] {
            let sys = build_reduced_system(&g, &mask, &set, MaterialParams::new(sigma, 1.0, 1.0).unwrap()).unwrap();
            let full = limiting_full_stiffness(&g, &mask, sigma);
            assert!(sys.aggregates_exactly(&full), "sigma = {sigma}");
        }
    }

    #[test]
    fn finite_operator_aggregates_to_reduced_as_eta_vanishes() {
        let (g, mask, set) = four(0.125);
        let p = MaterialParams::new(1.0, 1.0, 1.0).unwrap();
        let sys = build_reduced_system(&g, &mask, &set, p).unwrap();
        let mut prev = f64::INFINITY;
        for eta in [1e-1, 1e-2, 1e-3] {
            let fin = init_finite(&g, &mask, &set, MaterialParams { eta, ..p }, |_| 0.0, true).unwrap();
            let defect = sys.aggregation_defect(&fin.system.operator.stiffness);
            // interface faces differ by 2σhη/(1+η), so the defect is O(η)
            assert!(defect < 0.2 * prev);
            prev = defect;
        }
    }

    #[test]
    fn uniform_state_is_fixed() {
        let (g, mask, set) = four(0.125);
        let sys = Arc::new(build_reduced_system(&g, &mask, &set, MaterialParams::new(1.0, 2.0, 1.0).unwrap()).unwrap());
        let mut s = init_infinite(sys, |_| 3.0, &set).unwrap();
        s.step(0.01, 1e-10).unwrap();
        assert!(s.unknowns.iter().all(|&u| (u - 3.0).abs() < 1e-13));
        let m = theta_measure(&s, &set);
        assert!((m.pair(&|_| 1.0) - 3.0).abs() < 1e-13);
    }

    #[test]
    fn linear_data_averages_to_center_value() {
        let (g, mask, set) = four(0.0625);
        let sys = Arc::new(build_reduced_system(&g, &mask, &set, MaterialParams::new(1.0, 1.0, 1.0).unwrap()).unwrap());
        // centers on cell corners with h = 1/16: the voxel ball is symmetric
        let f = |x: Point| 2.0 + x[0] - 3.0 * x[1] + 0.5 * x[2];
        let s = init_infinite(sys, f, &set).unwrap();
        // the fourth center is off the grid corners
        for (ti, c) in s.inclusion_temperatures().iter().zip(set.centers()).take(3) {
            assert!((ti - f(*c)).abs() < 1e-12, "{ti} vs {}", f(*c));
        }
        assert!(s.energy_norm().is_finite());
    }

    #[test]
    fn hot_inclusion_cools_monotonically() {
        let d = Domain::centered_cube(2.0).unwrap();
        let g = build_grid(&d, 0.125).unwrap();
        let set = InclusionSet::new(
            0.25,
            vec![[-0.5, -0.5, -0.5], [0.5, 0.5, -0.5], [0.5, -0.5, 0.5], [-0.5, 0.5, 0.5]],
        )
        .unwrap();
        let mask = classify_cells(&g, &set).unwrap();
        let sys = Arc::new(build_reduced_system(&g, &mask, &set, MaterialParams::new(1.0, 1.0, 1.0).unwrap()).unwrap());
        let balls = set.clone();
        let f = move |x: Point| if balls.locate(&x).is_some() { 10.0 } else { 0.0 };
        let mut s = init_infinite(sys, f, &set).unwrap();
        let nbg = s.system.background_count();
        let bg_mean = |s: &InfiniteState| s.background().iter().sum::<f64>() / nbg as f64;
        let q0 = s.system.total_heat(&s.unknowns);
        let mut t_prev = s.inclusion_temperatures().to_vec();
        let mut m_prev = bg_mean(&s);
        let m2_0 = s.inclusion_second_moment();
        for _ in 0..100 {
            s.step(0.01, 1e-10).unwrap();
            let t = s.inclusion_temperatures().to_vec();
            let m = bg_mean(&s);
            assert!(t.iter().zip(&t_prev).all(|(a, b)| a < b));
            assert!(m > m_prev);
            t_prev = t;
            m_prev = m;
            assert!(s.inclusion_second_moment() <= m2_0 * (1.0 + 1e-12));
            assert!(s.ledger.max_abs_residual() <= 1e-9 * s.ledger.initial_stored);
        }
        let q = s.system.total_heat(&s.unknowns);
        assert!((q - q0).abs() <= 1e-9 * q0.abs());
        let mut buf = Vec::new();
        s.write_csv(&mut buf).unwrap();
        let text = String::from_utf8(buf).unwrap();
        assert!(text.lines().next().unwrap().ends_with(",min_Ti,max_Ti,theta_pairing_const1"));
        assert_eq!(text.lines().count(), 102);
    }
}
