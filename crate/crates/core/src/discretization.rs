//! Voxel grid, phase classification and conservative 7-point diffusion
//! operators with zero-flux outer boundary.
//!
//! Cells are indexed with `x` fastest: `index = i + nx (j + ny k)`.

use std::io::Write;

use serde::Serialize;

use crate::error::{Error, Result};
use crate::geometry::{distance, Domain, InclusionSet, Point};
use crate::sparse::{default_iteration_cap, solve_shifted, CsrMatrix, ShiftedSystem, SolveOutcome};

const SPACING_TOLERANCE: f64 = 1e-9;

#[derive(Clone, Debug, PartialEq, Serialize)]
pub struct Grid {
    domain: Domain,
    h: f64,
    dims: [usize; 3],
}

/// Uniform grid of cubes of side `h` covering the domain.
pub fn build_grid(domain: &Domain, h: f64) -> Result<Grid> {
    if !(h > 0.0) || !h.is_finite() {
        return Err(Error::InvalidParameter(format!("grid spacing {h} must be positive")));
    }
    let mut dims = [0; 3];
    for (k, dim) in dims.iter_mut().enumerate() {
        let side = domain.side(k);
        let n = (side / h).round();
        if n < 1.0 || (n * h - side).abs() > SPACING_TOLERANCE * side {
            return Err(Error::IncommensurateSpacing { h, side, axis: k });
        }
        *dim = n as usize;
    }
    Ok(Grid {
        domain: *domain,
        h,
        dims,
    })
}

impl Grid {
    pub fn domain(&self) -> &Domain {
        &self.domain
    }

    pub fn h(&self) -> f64 {
        self.h
    }

    pub fn dims(&self) -> [usize; 3] {
        self.dims
    }

    pub fn cell_count(&self) -> usize {
        self.dims[0] * self.dims[1] * self.dims[2]
    }

    pub fn cell_volume(&self) -> f64 {
        self.h * self.h * self.h
    }

    pub fn index(&self, i: usize, j: usize, k: usize) -> usize {
        i + self.dims[0] * (j + self.dims[1] * k)
    }

    pub fn coords(&self, cell: usize) -> [usize; 3] {
        let nx = self.dims[0];
        let ny = self.dims[1];
        [cell % nx, (cell / nx) % ny, cell / (nx * ny)]
    }

    pub fn center(&self, cell: usize) -> Point {
        let c = self.coords(cell);
        [
            self.domain.lower[0] + (c[0] as f64 + 0.5) * self.h,
            self.domain.lower[1] + (c[1] as f64 + 0.5) * self.h,
            self.domain.lower[2] + (c[2] as f64 + 0.5) * self.h,
        ]
    }

    /// Samples a function at every cell center.
    pub fn sample(&self, f: impl Fn(Point) -> f64) -> Vec<f64> {
        (0..self.cell_count()).map(|c| f(self.center(c))).collect()
    }

    /// Calls `visit(a, b)` once per interior face, `a < b`.
    pub fn for_each_face(&self, mut visit: impl FnMut(usize, usize)) {
        let [nx, ny, nz] = self.dims;
        for k in 0..nz {
            for j in 0..ny {
                for i in 0..nx {
                    let c = self.index(i, j, k);
                    if i + 1 < nx {
                        visit(c, c + 1);
                    }
                    if j + 1 < ny {
                        visit(c, c + nx);
                    }
                    if k + 1 < nz {
                        visit(c, c + nx * ny);
                    }
                }
            }
        }
    }
}

#[derive(Clone, Copy, Debug, PartialEq, Eq, Serialize)]
pub enum Phase {
    Background,
    Inclusion(u32),
}

/// Per-cell phase labels plus the member cells of every inclusion.
#[derive(Clone, Debug)]
pub struct PhaseMask {
    phases: Vec<Phase>,
    inclusion_cells: Vec<Vec<usize>>,
}

impl PhaseMask {
    pub fn phase(&self, cell: usize) -> Phase {
        self.phases[cell]
    }

    pub fn phases(&self) -> &[Phase] {
        &self.phases
    }

    pub fn inclusion_cells(&self, inclusion: usize) -> &[usize] {
        &self.inclusion_cells[inclusion]
    }

    pub fn inclusion_count(&self) -> usize {
        self.inclusion_cells.len()
    }

    pub fn background_count(&self) -> usize {
        self.phases.len() - self.inclusion_cells.iter().map(Vec::len).sum::<usize>()
    }

    pub fn is_background(&self, cell: usize) -> bool {
        self.phases[cell] == Phase::Background
    }
}

/// Labels a cell `Inclusion(i)` when its center lies in the closed ball
/// `B(x_i, epsilon)`.
pub fn classify_cells(grid: &Grid, set: &InclusionSet) -> Result<PhaseMask> {
    let eps = set.epsilon();
    let h = grid.h();
    if h > 0.5 * eps {
        log::warn!("grid spacing {h} exceeds epsilon/2 = {}; inclusions are barely resolved", 0.5 * eps);
    }
    let mut phases = vec![Phase::Background; grid.cell_count()];
    let mut inclusion_cells = Vec::with_capacity(set.count());
    let lower = grid.domain().lower;
    let dims = grid.dims();
    for (index, center) in set.centers().iter().enumerate() {
        let mut range = [(0usize, 0usize); 3];
        for k in 0..3 {
            let lo = ((center[k] - eps - lower[k]) / h - 0.5).floor().max(0.0) as usize;
            let hi = (((center[k] + eps - lower[k]) / h - 0.5).ceil().max(0.0) as usize).min(dims[k] - 1);
            range[k] = (lo, hi);
        }
        let mut cells = Vec::new();
        for k in range[2].0..=range[2].1 {
            for j in range[1].0..=range[1].1 {
                for i in range[0].0..=range[0].1 {
                    let c = grid.index(i, j, k);
                    if distance(&grid.center(c), center) <= eps {
                        if let Phase::Inclusion(other) = phases[c] {
                            return Err(Error::Invariant {
                                module: "discretization",
                                message: format!("cell {c} lies in inclusions {other} and {index}"),
                            });
                        }
                        phases[c] = Phase::Inclusion(index as u32);
                        cells.push(c);
                    }
                }
            }
        }
        if cells.is_empty() {
            return Err(Error::UnresolvedInclusion { index });
        }
        inclusion_cells.push(cells);
    }
    Ok(PhaseMask {
        phases,
        inclusion_cells,
    })
}

/// Stiffness `K` (symmetric, zero row sums) and lumped mass `M`.
#[derive(Clone, Debug)]
pub struct DiffusionOperator {
    pub stiffness: CsrMatrix,
    pub mass: Vec<f64>,
}

/// Assembles a 7-point stiffness matrix from a face-conductance rule.
/// `face(a, b)` is called with `a < b` and must return the conductance of
/// the shared face (already multiplied by `h^2 / h`); zero drops the face.
pub fn assemble_stiffness(grid: &Grid, face: impl Fn(usize, usize) -> f64) -> CsrMatrix {
    let n = grid.cell_count();
    let [nx, ny, nz] = grid.dims();
    let plane = nx * ny;
    let mut row_ptr = Vec::with_capacity(n + 1);
    let mut cols = Vec::with_capacity(7 * n);
    let mut vals = Vec::with_capacity(7 * n);
    row_ptr.push(0);
    for c in 0..n {
        let [i, j, k] = grid.coords(c);
        let mut below: [(usize, f64); 3] = [(0, 0.0); 3];
        let mut above: [(usize, f64); 3] = [(0, 0.0); 3];
        let mut nb = 0;
        let mut na = 0;
        if k > 0 {
            below[nb] = (c - plane, face(c - plane, c));
            nb += 1;
        }
        if j > 0 {
            below[nb] = (c - nx, face(c - nx, c));
            nb += 1;
        }
        if i > 0 {
            below[nb] = (c - 1, face(c - 1, c));
            nb += 1;
        }
        if i + 1 < nx {
            above[na] = (c + 1, face(c, c + 1));
            na += 1;
        }
        if j + 1 < ny {
            above[na] = (c + nx, face(c, c + nx));
            na += 1;
        }
        if k + 1 < nz {
            above[na] = (c + plane, face(c, c + plane));
            na += 1;
        }
        let mut diag = 0.0;
        for &(_, g) in below[..nb].iter().chain(&above[..na]) {
            diag += g;
        }
        for &(col, g) in &below[..nb] {
            if g != 0.0 {
                cols.push(col as u32);
                vals.push(-g);
            }
        }
        if diag != 0.0 {
            cols.push(c as u32);
            vals.push(diag);
        }
        for &(col, g) in &above[..na] {
            if g != 0.0 {
                cols.push(col as u32);
                vals.push(-g);
            }
        }
        row_ptr.push(cols.len());
    }
    CsrMatrix::from_raw(n, row_ptr, cols, vals)
}

pub fn harmonic_mean(a: f64, b: f64) -> f64 {
    2.0 * a * b / (a + b)
}

/// Conservative finite-volume heat operator: face conductance is the
/// harmonic mean of the two cell conductivities times `h`, and
/// `M[c] = capacity[c] h^3`.
pub fn assemble_heat_operator(
    grid: &Grid,
    conductivity: &[f64],
    capacity: &[f64],
) -> Result<DiffusionOperator> {
    let n = grid.cell_count();
    if conductivity.len() != n || capacity.len() != n {
        return Err(Error::GridMismatch {
            left: n,
            right: conductivity.len().min(capacity.len()),
        });
    }
    for (cell, &value) in conductivity.iter().chain(capacity).enumerate() {
        if !(value > 0.0) || !value.is_finite() {
            return Err(Error::NonpositiveCoefficient { cell: cell % n, value });
        }
    }
    let h = grid.h();
    let stiffness = assemble_stiffness(grid, |a, b| h * harmonic_mean(conductivity[a], conductivity[b]));
    let vol = grid.cell_volume();
    let mass = capacity.iter().map(|c| c * vol).collect();
    Ok(DiffusionOperator { stiffness, mass })
}

fn check_step(dt: f64, rel_tol: f64) -> Result<()> {
    if !(dt >= 0.0) || !dt.is_finite() {
        return Err(Error::InvalidParameter(format!("time step {dt} must be non-negative")));
    }
    if !(rel_tol > 0.0 && rel_tol <= 1e-6) {
        return Err(Error::InvalidParameter(format!(
            "relative tolerance {rel_tol} must lie in (0, 1e-6]"
        )));
    }
    Ok(())
}

/// One backward-Euler step `(M + dt K) u = M state`, with solver statistics.
pub fn backward_euler_step(
    op: &DiffusionOperator,
    state: &[f64],
    dt: f64,
    rel_tol: f64,
) -> Result<SolveOutcome> {
    check_step(dt, rel_tol)?;
    if state.len() != op.mass.len() {
        return Err(Error::GridMismatch {
            left: op.mass.len(),
            right: state.len(),
        });
    }
    let rhs: Vec<f64> = op.mass.iter().zip(state).map(|(m, s)| m * s).collect();
    let system = ShiftedSystem {
        stiffness: &op.stiffness,
        shift: &op.mass,
        dt,
    };
    solve_shifted(&system, &rhs, state, rel_tol, default_iteration_cap(state.len()))
}

pub fn solve_backward_euler(
    op: &DiffusionOperator,
    state: &[f64],
    dt: f64,
    rel_tol: f64,
) -> Result<Vec<f64>> {
    backward_euler_step(op, state, dt, rel_tol).map(|o| o.solution)
}

/// Writes cell fields as CSV (`cell,x,y,z,<names...>`), `x` fastest.
pub fn write_fields_csv(
    grid: &Grid,
    names: &[&str],
    fields: &[&[f64]],
    mut out: impl Write,
) -> Result<()> {
    write!(out, "cell,x,y,z")?;
    for name in names {
        write!(out, ",{name}")?;
    }
    writeln!(out)?;
    for c in 0..grid.cell_count() {
        let p = grid.center(c);
        write!(out, "{c},{},{},{}", p[0], p[1], p[2])?;
        for f in fields {
            write!(out, ",{}", f[c])?;
        }
        writeln!(out)?;
    }
    Ok(())
}

/// Writes a field as little-endian `f64`, `x` fastest.
pub fn write_field_binary(field: &[f64], mut out: impl Write) -> Result<()> {
    for v in field {
        out.write_all(&v.to_le_bytes())?;
    }
    Ok(())
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::geometry::protection_radius;
    use std::f64::consts::PI;

    fn side2() -> Domain {
        Domain::centered_cube(2.0).unwrap()
    }

    #[test]
    fn grid_dimensions() {
        let g = build_grid(&side2(), 0.25).unwrap();
        assert_eq!(g.dims(), [8, 8, 8]);
        assert_eq!(g.cell_count(), 512);
        let g = build_grid(&side2(), 1.0 / 32.0).unwrap();
        assert_eq!(g.dims(), [64, 64, 64]);
        assert!(matches!(
            build_grid(&side2(), 0.3),
            Err(Error::IncommensurateSpacing { .. })
        ));
    }

    #[test]
    fn voxel_ball_volume() {
        let exact = 4.0 / 3.0 * PI * 0.25f64.powi(3);
        let mut errors = Vec::new();
        for h in [0.125, 0.0625, 0.03125, 0.015625] {
            let g = build_grid(&side2(), h).unwrap();
            // shift so the center sits on a cell center
            let c = g.center(g.index(g.dims()[0] / 2, g.dims()[1] / 2, g.dims()[2] / 2));
            let set = InclusionSet::new(0.25, vec![c, [-0.6, -0.6, -0.6], [0.6, -0.6, 0.6], [-0.6, 0.6, 0.6]]).unwrap();
            let mask = classify_cells(&g, &set).unwrap();
            let vol = mask.inclusion_cells(0).len() as f64 * g.cell_volume();
            errors.push((vol - exact).abs() / exact);
        }
        assert!(errors[0] < 0.35, "{errors:?}");
        // the lattice-point count error is not monotone but stays O(h/eps)
        for (e, h) in errors.iter().zip([0.125, 0.0625, 0.03125, 0.015625]) {
            assert!(*e < 0.5 * h / 0.25 + 0.02, "{errors:?}");
        }
        assert!(errors[3] < 0.02);
    }

    #[test]
    fn unresolved_inclusion() {
        let g = build_grid(&side2(), 0.25).unwrap();
        // a cell corner; epsilon smaller than h/2 misses every center
        let eps = 1.0 / 16.0;
        let mut centers = vec![[0.0, 0.0, 0.0]];
        for s in 1..16 {
            centers.push([0.5 + 0.01 * s as f64, 0.25, 0.25]);
        }
        let set = InclusionSet::new(eps, centers).unwrap();
        assert!(matches!(
            classify_cells(&g, &set),
            Err(Error::UnresolvedInclusion { index: 0 })
        ));
    }

    #[test]
    fn inclusions_at_minimum_separation_are_disjoint() {
        let eps = 0.125;
        let r = protection_radius(eps);
        let gap = 2.0 * r * (1.0 + 1e-6);
        let centers: Vec<Point> = (0..8)
            .map(|s| {
                let o = |b: usize| if b == 0 { -0.5 * gap } else { 0.5 * gap };
                [o(s & 1), o((s >> 1) & 1), o((s >> 2) & 1)]
            })
            .collect();
        let set = InclusionSet::new(eps, centers).unwrap();
        let g = build_grid(&side2(), 1.0 / 32.0).unwrap();
        let mask = classify_cells(&g, &set).unwrap();
        let mut owner = vec![usize::MAX; g.cell_count()];
        for i in 0..mask.inclusion_count() {
            for &c in mask.inclusion_cells(i) {
                assert_eq!(owner[c], usize::MAX);
                owner[c] = i;
                assert_eq!(mask.phase(c), Phase::Inclusion(i as u32));
            }
        }
    }

    #[test]
    fn two_cell_hand_assembly() {
        let d = Domain::new([0.0; 3], [1.0, 0.5, 0.5]).unwrap();
        let g = build_grid(&d, 0.5).unwrap();
        assert_eq!(g.cell_count(), 2);
        let kappa = 3.0;
        let op = assemble_heat_operator(&g, &[kappa; 2], &[1.0; 2]).unwrap();
        let h = 0.5;
        assert_eq!(op.stiffness.get(0, 1), -kappa * h);
        assert_eq!(op.stiffness.get(0, 0), kappa * h);
        assert_eq!(op.stiffness.get(1, 1), kappa * h);
        assert_eq!(op.mass, vec![h * h * h; 2]);
    }

    #[test]
    fn harmonic_face_limit() {
        let d = Domain::new([0.0; 3], [1.0, 0.5, 0.5]).unwrap();
        let g = build_grid(&d, 0.5).unwrap();
        let kappa = 2.0;
        for eta in [1e-1, 1e-3, 1e-6] {
            let op = assemble_heat_operator(&g, &[kappa, kappa / eta], &[1.0; 2]).unwrap();
            let expected = 2.0 * kappa * 0.5 / (1.0 + eta);
            assert!((-op.stiffness.get(0, 1) - expected).abs() < 1e-12 * expected);
        }
    }

    #[test]
    fn null_space_and_symmetry() {
        let g = build_grid(&side2(), 0.25).unwrap();
        let kappa: Vec<f64> = (0..g.cell_count()).map(|c| 1.0 + (c % 7) as f64 * 0.3).collect();
        let op = assemble_heat_operator(&g, &kappa, &vec![1.0; g.cell_count()]).unwrap();
        assert_eq!(op.stiffness.symmetry_defect(), 0.0);
        let k1 = op.stiffness.matvec(&vec![1.0; g.cell_count()]);
        assert!(k1.iter().all(|v| v.abs() < 1e-14));
    }

    #[test]
    fn rejects_nonpositive_coefficients() {
        let g = build_grid(&side2(), 0.5).unwrap();
        let mut kappa = vec![1.0; g.cell_count()];
        kappa[3] = 0.0;
        assert!(matches!(
            assemble_heat_operator(&g, &kappa, &vec![1.0; g.cell_count()]),
            Err(Error::NonpositiveCoefficient { cell: 3, .. })
        ));
    }

    #[test]
    fn zero_step_and_uniform_fields() {
        let g = build_grid(&side2(), 0.25).unwrap();
        let n = g.cell_count();
        let op = assemble_heat_operator(&g, &vec![1.3; n], &vec![0.7; n]).unwrap();
        let state = g.sample(|x| x[0] * x[1] + 0.2);
        let u = solve_backward_euler(&op, &state, 0.0, 1e-10).unwrap();
        for (a, b) in u.iter().zip(&state) {
            assert!((a - b).abs() < 1e-14);
        }
        let u = solve_backward_euler(&op, &vec![4.0; n], 0.5, 1e-10).unwrap();
        assert!(u.iter().all(|v| (v - 4.0).abs() < 1e-13));
    }

    #[test]
    fn cosine_mode_damping() {
        // A cosine along x on an n x 1 x 1 column is an exact eigenvector.
        let n = 32;
        let h = 1.0 / n as f64;
        let d = Domain::new([0.0; 3], [1.0, h, h]).unwrap();
        let g = build_grid(&d, h).unwrap();
        let kappa = 0.8;
        let op = assemble_heat_operator(&g, &vec![kappa; n], &vec![1.0; n]).unwrap();
        let state = g.sample(|x| (PI * x[0]).cos());
        let dt = 0.01;
        let u = solve_backward_euler(&op, &state, dt, 1e-12).unwrap();
        let lambda = 2.0 * kappa / (h * h) * (1.0 - (PI * h).cos());
        let factor = 1.0 / (1.0 + dt * lambda);
        for (a, b) in u.iter().zip(&state) {
            assert!((a - factor * b).abs() < 1e-10);
        }
    }

    #[test]
    fn conservation_and_damping() {
        let g = build_grid(&side2(), 0.125).unwrap();
        let n = g.cell_count();
        let kappa = g.sample(|x| if x[0] > 0.1 { 50.0 } else { 1.0 });
        let cap = g.sample(|x| 1.0 + x[1].abs());
        let op = assemble_heat_operator(&g, &kappa, &cap).unwrap();
        let state = g.sample(|x| (3.0 * x[0]).sin() + x[2] * x[2]);
        let u = solve_backward_euler(&op, &state, 0.01, 1e-10).unwrap();
        let heat = |f: &[f64]| f.iter().zip(&op.mass).map(|(a, m)| a * m).sum::<f64>();
        let ms: f64 = state.iter().zip(&op.mass).map(|(a, m)| (a * m).abs()).sum();
        assert!((heat(&u) - heat(&state)).abs() <= 1e-10 * ms);
        let energy = |f: &[f64]| f.iter().zip(&op.mass).map(|(a, m)| a * a * m).sum::<f64>();
        assert!(energy(&u) <= energy(&state));
        assert_eq!(u.len(), n);
    }

    #[test]
    fn csv_export_orders_x_fastest() {
        let d = Domain::new([0.0; 3], [1.0, 0.5, 0.5]).unwrap();
        let g = build_grid(&d, 0.5).unwrap();
        let mut buf = Vec::new();
        write_fields_csv(&g, &["t"], &[&[1.0, 2.0]], &mut buf).unwrap();
        let text = String::from_utf8(buf).unwrap();
        assert_eq!(text, "cell,x,y,z,t\n0,0.25,0.25,0.25,1\n1,0.75,0.25,0.25,2\n");
    }
}
