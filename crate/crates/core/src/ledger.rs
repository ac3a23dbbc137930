//! Per-step energy bookkeeping for backward-Euler solvers.
//!
//! For a step `(M + dt K) u = M s` the exact identity
//!
//! ```text
//! ½‖u‖²_M − ½‖s‖²_M + dt‖u‖²_K + ½‖u − s‖²_M = −uᵀr
//! ```
//!
//! holds with `r` the linear-solver residual, so the recorded `residual`
//! measures solver error only.

use std::io::Write;

use serde::Serialize;

use crate::error::Result;

#[derive(Clone, Copy, Debug, PartialEq, Serialize)]
pub struct LedgerEntry {
    pub step: usize,
    pub time: f64,
    pub stored: f64,
    pub dissipated_increment: f64,
    pub numerical_dissipation: f64,
    pub residual: f64,
    pub total_heat: f64,
}

#[derive(Clone, Debug, PartialEq, Serialize)]
pub struct EnergyLedger {
    pub initial_stored: f64,
    pub initial_total_heat: f64,
    pub entries: Vec<LedgerEntry>,
}

impl EnergyLedger {
    pub fn new(initial_stored: f64, initial_total_heat: f64) -> Self {
        Self {
            initial_stored,
            initial_total_heat,
            entries: Vec::new(),
        }
    }

    pub fn last_stored(&self) -> f64 {
        self.entries.last().map_or(self.initial_stored, |e| e.stored)
    }

    pub fn last_total_heat(&self) -> f64 {
        self.entries.last().map_or(self.initial_total_heat, |e| e.total_heat)
    }

    /// Appends a step, computing the residual from the previous stored
    /// energy.
    pub fn record(
        &mut self,
        time: f64,
        stored: f64,
        dissipated_increment: f64,
        numerical_dissipation: f64,
        total_heat: f64,
    ) -> LedgerEntry {
        let previous = self.last_stored();
        let entry = LedgerEntry {
            step: self.entries.len() + 1,
            time,
            stored,
            dissipated_increment,
            numerical_dissipation,
            residual: stored - previous + dissipated_increment + numerical_dissipation,
            total_heat,
        };
        self.entries.push(entry);
        entry
    }

    pub fn max_abs_residual(&self) -> f64 {
        self.entries.iter().map(|e| e.residual.abs()).fold(0.0, f64::max)
    }

    /// Largest `|Q(n) − Q(0)| / |Q(0)|` of the recorded total heat.
    pub fn max_relative_heat_drift(&self) -> f64 {
        let q0 = self.initial_total_heat;
        let scale = if q0 != 0.0 { q0.abs() } else { 1.0 };
        self.entries
            .iter()
            .map(|e| (e.total_heat - q0).abs() / scale)
            .fold(0.0, f64::max)
    }

    pub fn cumulative_dissipation(&self) -> f64 {
        self.entries.iter().map(|e| e.dissipated_increment).sum()
    }

    /// CSV with columns `step,time,stored,dissipated_cumulative,
    /// numerical_dissipation_cumulative,residual,total_heat`; row 0 is the
    /// initial state.
    pub fn write_csv(&self, out: impl Write) -> Result<()> {
        self.write_csv_with(out, &[], |_, _| Ok(()))
    }

    /// Same as [`write_csv`](Self::write_csv) with extra trailing columns;
    /// `extra(out, row)` writes `,v1,v2,...` for row `row` (0 = initial).
    pub fn write_csv_with(
        &self,
        mut out: impl Write,
        extra_names: &[&str],
        mut extra: impl FnMut(&mut dyn Write, usize) -> std::io::Result<()>,
    ) -> Result<()> {
        write!(
            out,
            "step,time,stored,dissipated_cumulative,numerical_dissipation_cumulative,residual,total_heat"
        )?;
        for name in extra_names {
            write!(out, ",{name}")?;
        }
        writeln!(out)?;
        write!(out, "0,0,{},0,0,0,{}", self.initial_stored, self.initial_total_heat)?;
        extra(&mut out, 0)?;
        writeln!(out)?;
        let (mut dissipated, mut numerical) = (0.0, 0.0);
        for e in &self.entries {
            dissipated += e.dissipated_increment;
            numerical += e.numerical_dissipation;
            write!(
                out,
                "{},{},{},{},{},{},{}",
                e.step, e.time, e.stored, dissipated, numerical, e.residual, e.total_heat
            )?;
            extra(&mut out, e.step)?;
            writeln!(out)?;
        }
        Ok(())
    }
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn residual_closes_the_balance() {
        let mut ledger = EnergyLedger::new(10.0, 3.0);
        let e = ledger.record(0.1, 8.0, 1.5, 0.5, 3.0);
        assert_eq!(e.residual, 0.0);
        let e = ledger.record(0.2, 7.0, 0.5, 0.25, 3.0);
        assert_eq!(e.residual, -0.25);
        assert_eq!(ledger.max_abs_residual(), 0.25);
        assert_eq!(ledger.cumulative_dissipation(), 2.0);
    }

    #[test]
    fn csv_layout() {
        let mut ledger = EnergyLedger::new(2.0, 1.0);
        ledger.record(0.5, 1.0, 0.75, 0.25, 1.0);
        let mut buf = Vec::new();
        ledger.write_csv(&mut buf).unwrap();
        let text = String::from_utf8(buf).unwrap();
        let lines: Vec<_> = text.lines().collect();
        assert_eq!(
            lines[0],
            "step,time,stored,dissipated_cumulative,numerical_dissipation_cumulative,residual,total_heat"
        );
        assert_eq!(lines[1], "0,0,2,0,0,0,1");
        assert_eq!(lines[2], "1,0.5,1,0.75,0.25,0,1");
    }
}
