//! Two-temperature homogenized system
//!
//! ```text
//! ∂t T − σ ΔT + 4πσ (ρT − ϑ) = 0
//! ∂t ϑ + 4πσ' (ϑ − ρT)     = 0
//! ```
//!
//! with zero-flux boundary. `ϑ` is the density-weighted inclusion
//! temperature; `θ = ϑ/ρ` is available as a derived field.
//!
//! Backward Euler with `a = 4πσ' dt` eliminates `ϑ` exactly:
//! `ϑ' = (ϑ + aρT') / (1 + a)`, leaving one SPD solve
//! `M (1 + 4πσ dt ρ/(1+a)) T' + dt K T' = M (T + 4πσ dt ϑ/(1+a))`.

use std::io::Write;
use std::sync::Arc;

use serde::Serialize;

use crate::discretization::{assemble_stiffness, Grid};
use crate::error::{Error, Result};
use crate::geometry::{DensitySpec, Point};
use crate::ledger::EnergyLedger;
use crate::model_finite::MaterialParams;
use crate::sparse::{default_iteration_cap, solve_shifted, CsrMatrix, ShiftedSystem};

const FOUR_PI: f64 = 4.0 * std::f64::consts::PI;

#[derive(Clone, Copy, Debug, PartialEq, Serialize)]
pub struct HomRecord {
    pub step: usize,
    pub time: f64,
    pub l2_t: f64,
    pub l2_vartheta: f64,
    pub conserved_functional: f64,
    pub lyapunov_functional: f64,
}

#[derive(Clone, Debug)]
pub struct HomState {
    pub grid: Grid,
    /// Uniform-conductivity stiffness `K_σ`.
    pub stiffness: Arc<CsrMatrix>,
    pub rho: Vec<f64>,
    pub params: MaterialParams,
    pub time: f64,
    pub temperature: Vec<f64>,
    pub vartheta: Vec<f64>,
    /// `stored` is the Lyapunov functional; `total_heat` the conserved
    /// functional.
    pub ledger: EnergyLedger,
    pub records: Vec<HomRecord>,
    pub last_iterations: usize,
}

/// `K_σ` on `grid` (face conductance `σ h`).
pub fn uniform_stiffness(grid: &Grid, sigma: f64) -> CsrMatrix {
    let g = sigma * grid.h();
    assemble_stiffness(grid, |_, _| g)
}

/// Samples `t_in`, `theta_in` and the density at cell centers.
pub fn init_hom(
    grid: &Grid,
    t_in: impl Fn(Point) -> f64,
    theta_in: impl Fn(Point) -> f64,
    density: &DensitySpec,
    params: MaterialParams,
) -> Result<HomState> {
    let rho = grid.sample(|x| density.eval(x));
    HomState::from_fields(grid, grid.sample(t_in), grid.sample(theta_in), rho, params, None)
}

impl HomState {
    /// Builds a state from per-cell fields. A prebuilt `K_σ` may be passed
    /// to share it between runs.
    pub fn from_fields(
        grid: &Grid,
        temperature: Vec<f64>,
        vartheta: Vec<f64>,
        rho: Vec<f64>,
        params: MaterialParams,
        stiffness: Option<Arc<CsrMatrix>>,
    ) -> Result<Self> {
        params.validate()?;
        let n = grid.cell_count();
        for len in [temperature.len(), vartheta.len(), rho.len()] {
            if len != n {
                return Err(Error::GridMismatch { left: n, right: len });
            }
        }
        if let Some((cell, &value)) = rho.iter().enumerate().find(|(_, r)| !(**r > 0.0) || !r.is_finite()) {
            return Err(Error::NonpositiveCoefficient { cell, value });
        }
        let stiffness = match stiffness {
            Some(k) if k.dim() == n => k,
            Some(k) => return Err(Error::GridMismatch { left: n, right: k.dim() }),
            None => Arc::new(uniform_stiffness(grid, params.sigma)),
        };
        let mut state = Self {
            grid: grid.clone(),
            stiffness,
            rho,
            params,
            time: 0.0,
            temperature,
            vartheta,
            ledger: EnergyLedger::new(0.0, 0.0),
            records: Vec::new(),
            last_iterations: 0,
        };
        state.ledger = EnergyLedger::new(state.lyapunov(), state.conserved_functional());
        state.records.push(state.record(0));
        Ok(state)
    }

    fn record(&self, step: usize) -> HomRecord {
        let vol = self.grid.cell_volume();
        HomRecord {
            step,
            time: self.time,
            l2_t: (vol * self.temperature.iter().map(|t| t * t).sum::<f64>()).sqrt(),
            l2_vartheta: (vol * self.vartheta.iter().map(|t| t * t).sum::<f64>()).sqrt(),
            conserved_functional: self.conserved_functional(),
            lyapunov_functional: self.lyapunov(),
        }
    }

    /// `Σ h³ (T + (σ/σ') ϑ)`.
    pub fn conserved_functional(&self) -> f64 {
        let k = self.params.capacity_ratio();
        self.grid.cell_volume()
            * self
                .temperature
                .iter()
                .zip(&self.vartheta)
                .map(|(t, v)| t + k * v)
                .sum::<f64>()
    }

    /// `½ Σ h³ T² + (σ/σ') ½ Σ h³ ϑ²/ρ`.
    pub fn lyapunov(&self) -> f64 {
        let vol = self.grid.cell_volume();
        let k = self.params.capacity_ratio();
        let a: f64 = self.temperature.iter().map(|t| t * t).sum();
        let b: f64 = self.vartheta.iter().zip(&self.rho).map(|(v, r)| v * v / r).sum();
        0.5 * vol * (a + k * b)
    }

    /// `θ = ϑ / ρ`.
    pub fn theta(&self) -> Vec<f64> {
        self.vartheta.iter().zip(&self.rho).map(|(v, r)| v / r).collect()
    }

    pub fn step(&mut self, dt: f64, rel_tol: f64) -> Result<()> {
        if !(dt > 0.0) || !dt.is_finite() {
            return Err(Error::InvalidParameter(format!("time step {dt} must be positive")));
        }
        let MaterialParams {
            sigma, sigma_prime, ..
        } = self.params;
        let vol = self.grid.cell_volume();
        let a = FOUR_PI * sigma_prime * dt;
        let c = FOUR_PI * sigma * dt / (1.0 + a);
        let shift: Vec<f64> = self.rho.iter().map(|r| vol * (1.0 + c * r)).collect();
        let rhs: Vec<f64> = self
            .temperature
            .iter()
            .zip(&self.vartheta)
            .map(|(t, v)| vol * (t + c * v))
            .collect();
        let system = ShiftedSystem {
            stiffness: &self.stiffness,
            shift: &shift,
            dt,
        };
        let n = rhs.len();
        let outcome = solve_shifted(&system, &rhs, &self.temperature, rel_tol, default_iteration_cap(n))?;
        let u = outcome.solution;
        let w: Vec<f64> = self
            .vartheta
            .iter()
            .zip(&self.rho)
            .zip(&u)
            .map(|((v, r), t)| (v + a * r * t) / (1.0 + a))
            .collect();

        let k = self.params.capacity_ratio();
        let relaxation: f64 = u
            .iter()
            .zip(&w)
            .zip(&self.rho)
            .map(|((t, v), r)| (r * t - v).powi(2) / r)
            .sum();
        let dissipated = dt * self.stiffness.quadratic_form(&u) + FOUR_PI * sigma * dt * vol * relaxation;
        let dt_sq: f64 = u.iter().zip(&self.temperature).map(|(a, b)| (a - b).powi(2)).sum();
        let dv_sq: f64 = w
            .iter()
            .zip(&self.vartheta)
            .zip(&self.rho)
            .map(|((a, b), r)| (a - b).powi(2) / r)
            .sum();
        let numerical = 0.5 * vol * (dt_sq + k * dv_sq);

        self.temperature = u;
        self.vartheta = w;
        self.time += dt;
        self.last_iterations = outcome.iterations;
        let stored = self.lyapunov();
        let conserved = self.conserved_functional();
        self.ledger.record(self.time, stored, dissipated, numerical, conserved);
        self.records.push(self.record(self.records.len()));
        Ok(())
    }

    /// CSV `step,time,L2_T,L2_vartheta,conserved_functional,lyapunov_functional`.
    pub fn write_csv(&self, mut out: impl Write) -> Result<()> {
        writeln!(out, "step,time,L2_T,L2_vartheta,conserved_functional,lyapunov_functional")?;
        for r in &self.records {
            writeln!(
                out,
                "{},{},{},{},{},{}",
                r.step, r.time, r.l2_t, r.l2_vartheta, r.conserved_functional, r.lyapunov_functional
            )?;
        }
        Ok(())
    }
}

pub fn step_hom(mut state: HomState, dt: f64, rel_tol: f64) -> Result<HomState> {
    state.step(dt, rel_tol)?;
    Ok(state)
}

/// Exact solution of the spatially uniform system
/// `T' = −4πσ(ρT − ϑ)`, `ϑ' = −4πσ'(ϑ − ρT)`.
pub fn ode_reduction(t0: f64, th0: f64, rho: f64, sigma: f64, sigma_prime: f64, t: f64) -> (f64, f64) {
    let k = sigma / sigma_prime;
    let c = t0 + k * th0;
    let t_inf = c / (1.0 + k * rho);
    let lambda = FOUR_PI * (sigma * rho + sigma_prime);
    // Both components relax towards the equilibrium ϑ = ρT.
    let s = -(-lambda * t).exp_m1();
    (t0 + (t_inf - t0) * s, th0 + (rho * t_inf - th0) * s)
}
