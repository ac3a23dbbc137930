//! Finite-conductivity two-phase heat equation with zero-flux boundary.
//!
//! Background cells carry capacity 1 and conductivity `sigma`; inclusion
//! cells carry conductivity `sigma / eta`. With scaled inclusion capacity,
//! each inclusion holds total capacity `epsilon sigma / sigma'` spread over
//! its voxels, which matches the super-node of the infinite-conductivity
//! model on the same grid.

use std::sync::Arc;

use serde::{Deserialize, Serialize};

use crate::discretization::{
    assemble_heat_operator, assemble_stiffness, backward_euler_step, DiffusionOperator, Grid, Phase,
    PhaseMask,
};
use crate::error::{Error, Result};
use crate::geometry::{InclusionSet, Point};
use crate::ledger::EnergyLedger;
use crate::sparse::{dot, CsrMatrix};

#[derive(Clone, Copy, Debug, PartialEq, Serialize, Deserialize)]
pub struct MaterialParams {
    pub sigma: f64,
    pub sigma_prime: f64,
    pub eta: f64,
}

impl MaterialParams {
    pub fn new(sigma: f64, sigma_prime: f64, eta: f64) -> Result<Self> {
        let p = Self {
            sigma,
            sigma_prime,
            eta,
        };
        p.validate()?;
        Ok(p)
    }

    pub fn validate(&self) -> Result<()> {
        if !(self.sigma > 0.0) || !(self.sigma_prime > 0.0) || !self.sigma.is_finite() || !self.sigma_prime.is_finite() {
            return Err(Error::InvalidParameter(format!(
                "sigma = {} and sigma' = {} must be positive",
                self.sigma, self.sigma_prime
            )));
        }
        if !(self.eta > 0.0 && self.eta <= 1.0) {
            return Err(Error::InvalidParameter(format!("eta = {} must lie in (0, 1]", self.eta)));
        }
        Ok(())
    }

    /// `sigma / sigma'`.
    pub fn capacity_ratio(&self) -> f64 {
        self.sigma / self.sigma_prime
    }
}

#[derive(Debug)]
pub struct FiniteSystem {
    pub grid: Grid,
    pub mask: PhaseMask,
    pub params: MaterialParams,
    pub epsilon: f64,
    pub operator: DiffusionOperator,
    /// Inclusion-internal faces only, conductance `sigma h`.
    pub inclusion_stiffness: CsrMatrix,
}

#[derive(Clone, Debug)]
pub struct FiniteState {
    pub system: Arc<FiniteSystem>,
    pub time: f64,
    pub temperature: Vec<f64>,
    pub ledger: EnergyLedger,
    pub last_iterations: usize,
}

/// Voxel average of cell samples over one inclusion.
pub(crate) fn voxel_average(cells: &[usize], samples: &[f64]) -> f64 {
    cells.iter().map(|&c| samples[c]).sum::<f64>() / cells.len() as f64
}

/// Sets up the finite-conductivity model. Initial data are sampled at cell
/// centers, then each inclusion is overwritten by its voxel average so the
/// data are constant per inclusion.
pub fn init_finite(
    grid: &Grid,
    mask: &PhaseMask,
    set: &InclusionSet,
    params: MaterialParams,
    t_in: impl Fn(Point) -> f64,
    scaled_inclusion_capacity: bool,
) -> Result<FiniteState> {
    params.validate()?;
    if mask.inclusion_count() != set.count() || mask.phases().len() != grid.cell_count() {
        return Err(Error::Invariant {
            module: "model_finite",
            message: "phase mask does not match grid and inclusion set".into(),
        });
    }
    let n = grid.cell_count();
    let mut conductivity = vec![params.sigma; n];
    let mut capacity = vec![1.0; n];
    let vol = grid.cell_volume();
    for i in 0..mask.inclusion_count() {
        let cells = mask.inclusion_cells(i);
        let cap = if scaled_inclusion_capacity {
            set.epsilon() * params.capacity_ratio() / (cells.len() as f64 * vol)
        } else {
            1.0
        };
        for &c in cells {
            conductivity[c] = params.sigma / params.eta;
            capacity[c] = cap;
        }
    }
    let operator = assemble_heat_operator(grid, &conductivity, &capacity)?;
    let h = grid.h();
    let phases = mask.phases();
    let inclusion_stiffness = assemble_stiffness(grid, |a, b| match (phases[a], phases[b]) {
        (Phase::Inclusion(p), Phase::Inclusion(q)) if p == q => params.sigma * h,
        _ => 0.0,
    });

    let mut temperature = grid.sample(&t_in);
    for i in 0..mask.inclusion_count() {
        let cells = mask.inclusion_cells(i);
        let avg = voxel_average(cells, &temperature);
        for &c in cells {
            temperature[c] = avg;
        }
    }
    let system = Arc::new(FiniteSystem {
        grid: grid.clone(),
        mask: mask.clone(),
        params,
        epsilon: set.epsilon(),
        operator,
        inclusion_stiffness,
    });
    let ledger = EnergyLedger::new(
        system.stored_energy(&temperature),
        system.total_heat(&temperature),
    );
    Ok(FiniteState {
        system,
        time: 0.0,
        temperature,
        ledger,
        last_iterations: 0,
    })
}

impl FiniteSystem {
    pub fn stored_energy(&self, t: &[f64]) -> f64 {
        0.5 * t.iter().zip(&self.operator.mass).map(|(v, m)| m * v * v).sum::<f64>()
    }

    pub fn total_heat(&self, t: &[f64]) -> f64 {
        dot(&self.operator.mass, t)
    }
}

impl FiniteState {
    pub fn step(&mut self, dt: f64, rel_tol: f64) -> Result<()> {
        if !(dt > 0.0) {
            return Err(Error::InvalidParameter(format!("time step {dt} must be positive")));
        }
        let sys = &self.system;
        let outcome = backward_euler_step(&sys.operator, &self.temperature, dt, rel_tol)?;
        let u = outcome.solution;
        let stored = sys.stored_energy(&u);
        let dissipated = dt * sys.operator.stiffness.quadratic_form(&u);
        let numerical = 0.5
            * u.iter()
                .zip(&self.temperature)
                .zip(&sys.operator.mass)
                .map(|((a, b), m)| m * (a - b) * (a - b))
                .sum::<f64>();
        self.time += dt;
        let heat = sys.total_heat(&u);
        self.ledger.record(self.time, stored, dissipated, numerical, heat);
        self.temperature = u;
        self.last_iterations = outcome.iterations;
        Ok(())
    }

    /// Power dissipated inside the inclusions, `(1/eta) Tᵀ K_incl T`.
    pub fn inclusion_dissipation_rate(&self) -> f64 {
        self.system.inclusion_stiffness.quadratic_form(&self.temperature) / self.system.params.eta
    }

    /// Largest `max - min` of the temperature over the cells of one
    /// inclusion.
    pub fn max_inclusion_spread(&self) -> f64 {
        let mask = &self.system.mask;
        (0..mask.inclusion_count())
            .map(|i| {
                let cells = mask.inclusion_cells(i);
                let (lo, hi) = cells.iter().fold((f64::INFINITY, f64::NEG_INFINITY), |(lo, hi), &c| {
                    (lo.min(self.temperature[c]), hi.max(self.temperature[c]))
                });
                hi - lo
            })
            .fold(0.0, f64::max)
    }

    /// Weighted mean `1ᵀM T / 1ᵀM 1`.
    pub fn weighted_mean(&self) -> f64 {
        self.system.total_heat(&self.temperature) / self.system.operator.mass.iter().sum::<f64>()
    }
}

pub fn step_finite(mut state: FiniteState, dt: f64, rel_tol: f64) -> Result<FiniteState> {
    state.step(dt, rel_tol)?;
    Ok(state)
}
