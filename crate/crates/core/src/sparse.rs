//! Compressed sparse row storage and a Jacobi-preconditioned conjugate
//! gradient for the shifted systems `(D + dt K) u = b` used by every
//! backward-Euler step.

use crate::error::{Error, Result};

/// Square CSR matrix with sorted column indices per row.
#[derive(Clone, Debug, PartialEq)]
pub struct CsrMatrix {
    n: usize,
    row_ptr: Vec<usize>,
    cols: Vec<u32>,
    vals: Vec<f64>,
}

impl CsrMatrix {
    /// Builds from per-row `(column, value)` lists. Duplicate columns are
    /// summed in the order given; explicit zeros are dropped.
    pub fn from_rows(rows: Vec<Vec<(usize, f64)>>) -> Self {
        let n = rows.len();
        let mut row_ptr = Vec::with_capacity(n + 1);
        let mut cols = Vec::new();
        let mut vals = Vec::new();
        row_ptr.push(0);
        for mut row in rows {
            row.sort_by_key(|&(c, _)| c);
            let start = cols.len();
            for (c, v) in row {
                if cols.len() > start && *cols.last().unwrap() as usize == c {
                    *vals.last_mut().unwrap() += v;
                } else {
                    cols.push(c as u32);
                    vals.push(v);
                }
            }
            // drop entries that are exactly zero
            let mut w = start;
            for r in start..cols.len() {
                if vals[r] != 0.0 {
                    cols[w] = cols[r];
                    vals[w] = vals[r];
                    w += 1;
                }
            }
            cols.truncate(w);
            vals.truncate(w);
            row_ptr.push(cols.len());
        }
        Self {
            n,
            row_ptr,
            cols,
            vals,
        }
    }

    /// Builds directly from already sorted, duplicate-free CSR arrays.
    pub(crate) fn from_raw(n: usize, row_ptr: Vec<usize>, cols: Vec<u32>, vals: Vec<f64>) -> Self {
        debug_assert_eq!(row_ptr.len(), n + 1);
        debug_assert_eq!(cols.len(), vals.len());
        Self {
            n,
            row_ptr,
            cols,
            vals,
        }
    }

    pub fn dim(&self) -> usize {
        self.n
    }

    pub fn nnz(&self) -> usize {
        self.vals.len()
    }

    pub fn row(&self, i: usize) -> impl Iterator<Item = (usize, f64)> + '_ {
        let r = self.row_ptr[i]..self.row_ptr[i + 1];
        self.cols[r.clone()]
            .iter()
            .zip(&self.vals[r])
            .map(|(&c, &v)| (c as usize, v))
    }

    pub fn get(&self, i: usize, j: usize) -> f64 {
        let r = self.row_ptr[i]..self.row_ptr[i + 1];
        match self.cols[r.clone()].binary_search(&(j as u32)) {
            Ok(pos) => self.vals[r.start + pos],
            Err(_) => 0.0,
        }
    }

    pub fn diagonal(&self) -> Vec<f64> {
        (0..self.n).map(|i| self.get(i, i)).collect()
    }

    pub fn matvec_into(&self, x: &[f64], y: &mut [f64]) {
        for (i, yi) in y.iter_mut().enumerate().take(self.n) {
            let mut acc = 0.0;
            for p in self.row_ptr[i]..self.row_ptr[i + 1] {
                acc += self.vals[p] * x[self.cols[p] as usize];
            }
            *yi = acc;
        }
    }

    pub fn matvec(&self, x: &[f64]) -> Vec<f64> {
        let mut y = vec![0.0; self.n];
        self.matvec_into(x, &mut y);
        y
    }

    /// `xᵀ A x`.
    pub fn quadratic_form(&self, x: &[f64]) -> f64 {
        let mut total = 0.0;
        for i in 0..self.n {
            let mut acc = 0.0;
            for p in self.row_ptr[i]..self.row_ptr[i + 1] {
                acc += self.vals[p] * x[self.cols[p] as usize];
            }
            total += x[i] * acc;
        }
        total
    }

    pub fn row_sums(&self) -> Vec<f64> {
        (0..self.n).map(|i| self.row(i).map(|(_, v)| v).sum()).collect()
    }

    /// Largest `|A_ij - A_ji|`; zero for an exactly symmetric matrix.
    pub fn symmetry_defect(&self) -> f64 {
        let mut worst: f64 = 0.0;
        for i in 0..self.n {
            for (j, v) in self.row(i) {
                worst = worst.max((v - self.get(j, i)).abs());
            }
        }
        worst
    }

    /// Largest entrywise difference, treating absent entries as zero.
    pub fn max_abs_difference(&self, other: &CsrMatrix) -> f64 {
        assert_eq!(self.n, other.n, "dimension mismatch");
        let mut worst: f64 = 0.0;
        for i in 0..self.n {
            for (j, v) in self.row(i) {
                worst = worst.max((v - other.get(i, j)).abs());
            }
            for (j, v) in other.row(i) {
                worst = worst.max((v - self.get(i, j)).abs());
            }
        }
        worst
    }

    /// `Pᵀ A P` for the 0/1 aggregation map `P` sending row `i` to node
    /// `map[i]`.
    pub fn aggregate(&self, map: &[usize], nodes: usize) -> CsrMatrix {
        assert_eq!(map.len(), self.n);
        let mut rows: Vec<Vec<(usize, f64)>> = vec![Vec::new(); nodes];
        for i in 0..self.n {
            let target = &mut rows[map[i]];
            for (j, v) in self.row(i) {
                target.push((map[j], v));
            }
        }
        CsrMatrix::from_rows(rows)
    }
}

pub fn dot(a: &[f64], b: &[f64]) -> f64 {
    a.iter().zip(b).map(|(x, y)| x * y).sum()
}

fn norm(a: &[f64]) -> f64 {
    dot(a, a).sqrt()
}

/// The operator `diag(shift) + dt K`, with `K` having zero row sums.
pub struct ShiftedSystem<'a> {
    pub stiffness: &'a CsrMatrix,
    pub shift: &'a [f64],
    pub dt: f64,
}

impl ShiftedSystem<'_> {
    pub fn apply(&self, x: &[f64], y: &mut [f64]) {
        self.stiffness.matvec_into(x, y);
        for ((yi, &s), &xi) in y.iter_mut().zip(self.shift).zip(x) {
            *yi = s * xi + self.dt * *yi;
        }
    }

    fn jacobi(&self) -> Vec<f64> {
        self.stiffness
            .diagonal()
            .iter()
            .zip(self.shift)
            .map(|(&k, &s)| 1.0 / (s + self.dt * k))
            .collect()
    }
}

#[derive(Clone, Debug)]
pub struct SolveOutcome {
    pub solution: Vec<f64>,
    pub iterations: usize,
    /// `‖b - A u‖ / ‖b‖` after the mass-balance correction.
    pub relative_residual: f64,
}

/// Default iteration cap `10 sqrt(n)`.
pub fn default_iteration_cap(n: usize) -> usize {
    ((10.0 * (n as f64).sqrt()).ceil() as usize).max(10)
}

/// Jacobi-preconditioned CG on `(diag(shift) + dt K) u = b`, started from
/// `guess`, stopping at relative residual `rel_tol`.
///
/// The converged iterate is then shifted by a constant so that
/// `1ᵀ(b - A u) = 0` exactly. Because `K 1 = 0`, this is the discrete
/// balance obtained from the constant test function, which therefore holds
/// to round-off instead of to the solver tolerance.
pub fn solve_shifted(
    system: &ShiftedSystem<'_>,
    rhs: &[f64],
    guess: &[f64],
    rel_tol: f64,
    max_iterations: usize,
) -> Result<SolveOutcome> {
    let n = rhs.len();
    let b_norm = norm(rhs);
    if b_norm == 0.0 {
        return Ok(SolveOutcome {
            solution: vec![0.0; n],
            iterations: 0,
            relative_residual: 0.0,
        });
    }
    let inv_diag = system.jacobi();
    let mut x = guess.to_vec();
    let mut ax = vec![0.0; n];
    system.apply(&x, &mut ax);
    let mut r: Vec<f64> = rhs.iter().zip(&ax).map(|(b, a)| b - a).collect();
    let mut z: Vec<f64> = r.iter().zip(&inv_diag).map(|(r, d)| r * d).collect();
    let mut p = z.clone();
    let mut rz = dot(&r, &z);
    let mut ap = vec![0.0; n];
    let mut iterations = 0;
    let mut rel = norm(&r) / b_norm;
    while rel > rel_tol {
        if iterations >= max_iterations {
            return Err(Error::NoConvergence {
                iterations,
                residual: rel,
            });
        }
        system.apply(&p, &mut ap);
        let pap = dot(&p, &ap);
        if !(pap > 0.0) {
            return Err(Error::NoConvergence {
                iterations,
                residual: rel,
            });
        }
        let alpha = rz / pap;
        for i in 0..n {
            x[i] += alpha * p[i];
            r[i] -= alpha * ap[i];
        }
        for i in 0..n {
            z[i] = r[i] * inv_diag[i];
        }
        let rz_new = dot(&r, &z);
        let beta = rz_new / rz;
        rz = rz_new;
        for i in 0..n {
            p[i] = z[i] + beta * p[i];
        }
        iterations += 1;
        rel = norm(&r) / b_norm;
    }

    // Mass-balance correction along the constant vector: A 1 = shift.
    system.apply(&x, &mut ax);
    let defect: f64 = rhs.iter().sum::<f64>() - ax.iter().sum::<f64>();
    let weight: f64 = system.shift.iter().sum();
    let c = defect / weight;
    for xi in &mut x {
        *xi += c;
    }
    system.apply(&x, &mut ax);
    let residual: Vec<f64> = rhs.iter().zip(&ax).map(|(b, a)| b - a).collect();
    Ok(SolveOutcome {
        solution: x,
        iterations,
        relative_residual: norm(&residual) / b_norm,
    })
}
