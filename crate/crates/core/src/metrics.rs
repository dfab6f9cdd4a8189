//! Error measures against a fine-scale reference and checks of the a
//! posteriori bounds.

use std::io::Write;

use crate::assembly::{recover_flux, FineOperator, FluxField, PressureField};
use crate::error::{Error, Result};
use crate::grid::{CoarsePartition, FineGrid};
use crate::online::IterationRecord;

/// A fine-scale solution with its flux and energy `a(p_h, p_h)`.
#[derive(Clone, Debug)]
pub struct Reference {
    pub pressure: PressureField,
    pub flux: FluxField,
    pub energy: f64,
}

impl Reference {
    pub fn new(grid: &FineGrid, op: &FineOperator, pressure: PressureField) -> Self {
        let flux = recover_flux(grid, &pressure);
        let energy = op.energy(&pressure);
        Reference { pressure, flux, energy }
    }
}

fn ratio(num: f64, den: f64) -> Result<f64> {
    if den <= 0.0 || !den.is_finite() {
        return Err(Error::ZeroReference);
    }
    Ok(num / den)
}

/// Relative squared pressure error `Σ|w|(p_h - p_ms)² / Σ|w| p_h²`.
pub fn pressure_error(grid: &FineGrid, p_h: &[f64], p_ms: &[f64]) -> Result<f64> {
    let vol = grid.cell_volume();
    let num: f64 = p_h.iter().zip(p_ms).map(|(a, b)| vol * (a - b) * (a - b)).sum();
    let den: f64 = p_h.iter().map(|a| vol * a * a).sum();
    ratio(num, den)
}

/// Trapezoidal edge weights: `(|w1| + |w2|) / 2` inside, `|w| / 2` on
/// Dirichlet faces.
pub fn velocity_weights(grid: &FineGrid) -> (Vec<f64>, Vec<f64>) {
    let vol = grid.cell_volume();
    (vec![vol; grid.interior_edges.len()], vec![0.5 * vol; grid.dirichlet_edges.len()])
}

/// Relative squared velocity error in the lumped `L²` norm.
pub fn velocity_error(grid: &FineGrid, u_h: &FluxField, u_ms: &FluxField) -> Result<f64> {
    let (wi, wd) = velocity_weights(grid);
    let (hi, hd) = (u_h.interior_velocity(grid), u_h.dirichlet_velocity(grid));
    let (mi, md) = (u_ms.interior_velocity(grid), u_ms.dirichlet_velocity(grid));
    let mut num = 0.0;
    let mut den = 0.0;
    for ((w, a), b) in wi.iter().zip(&hi).zip(&mi) {
        num += w * (a - b) * (a - b);
        den += w * a * a;
    }
    for ((w, a), b) in wd.iter().zip(&hd).zip(&md) {
        num += w * (a - b) * (a - b);
        den += w * a * a;
    }
    ratio(num, den)
}

/// `a(p_h - p_ms, p_h - p_ms)`.
pub fn energy_error(op: &FineOperator, p_h: &[f64], p_ms: &[f64]) -> f64 {
    let e: Vec<f64> = p_h.iter().zip(p_ms).map(|(a, b)| a - b).collect();
    op.energy(&e).max(0.0)
}

/// `κ⁻¹`-weighted lumped velocity norm squared. For a flux field recovered
/// from a pressure this equals the energy of that pressure's homogeneous part.
pub fn velocity_energy(grid: &FineGrid, flux: &FluxField) -> f64 {
    let vol = grid.cell_volume();
    let ui = flux.interior_velocity(grid);
    let ud = flux.dirichlet_velocity(grid);
    let inner: f64 = grid
        .interior_edges
        .iter()
        .zip(&ui)
        .map(|(e, u)| 0.5 * (vol / grid.kappa[e.w1] + vol / grid.kappa[e.w2]) * u * u)
        .sum();
    let outer: f64 = grid
        .dirichlet_edges
        .iter()
        .zip(&ud)
        .map(|(d, u)| 0.5 * vol / grid.kappa[d.cell] * u * u)
        .sum();
    inner + outer
}

/// Net outward flux of each block minus its source integral.
pub fn block_mass_defect(grid: &FineGrid, part: &CoarsePartition, flux: &FluxField, source: &[f64]) -> Vec<f64> {
    let cell = flux.divergence_defect(grid, source);
    part.blocks.iter().map(|b| b.cells.iter().map(|&w| cell[w]).sum()).collect()
}

#[derive(Clone, Copy, Debug, PartialEq)]
pub struct ErrorReport {
    pub dim: usize,
    pub e_p: f64,
    pub e_u: f64,
    pub energy_sq: f64,
}

impl ErrorReport {
    pub fn new(grid: &FineGrid, op: &FineOperator, reference: &Reference, p_ms: &[f64], dim: usize) -> Result<Self> {
        let flux = recover_flux(grid, p_ms);
        Ok(ErrorReport {
            dim,
            e_p: pressure_error(grid, &reference.pressure, p_ms)?,
            e_u: velocity_error(grid, &reference.flux, &flux)?,
            energy_sq: energy_error(op, &reference.pressure, p_ms),
        })
    }

    pub fn sqrt_e_p(&self) -> f64 {
        self.e_p.sqrt()
    }

    pub fn sqrt_e_u(&self) -> f64 {
        self.e_u.sqrt()
    }
}

/// `Dim,e_p,e_u,sqrt_e_p,sqrt_e_u,energy_sq`, one row per report.
pub fn write_convergence_csv<W: Write>(reports: &[ErrorReport], header: &[String], mut out: W) -> Result<()> {
    for h in header {
        writeln!(out, "# {h}")?;
    }
    writeln!(out, "Dim,e_p,e_u,sqrt_e_p,sqrt_e_u,energy_sq")?;
    for r in reports {
        writeln!(
            out,
            "{},{:.16e},{:.16e},{:.16e},{:.16e},{:.16e}",
            r.dim,
            r.e_p,
            r.e_u,
            r.sqrt_e_p(),
            r.sqrt_e_u(),
            r.energy_sq
        )?;
    }
    Ok(())
}

/// Relative slack allowed on the right-hand side of a bound.
pub const BOUND_REL_SLACK: f64 = 1e-6;
/// Absolute floor, relative to `a(p_h, p_h)`, below which errors count as zero.
pub const BOUND_ABS_FLOOR: f64 = 1e-12;

#[derive(Clone, Copy, Debug, PartialEq, Eq)]
pub enum BoundKind {
    /// `a(e, e) <= (2/Λ) Σ δ_i²`.
    Residual,
    /// `a(e_n, e_n) <= (1 - θΛ/2) a(e_{n-1}, e_{n-1})`.
    Contraction,
    /// `a(e_n, e_n) <= a(e_{n-1}, e_{n-1})`.
    Monotone,
}

impl BoundKind {
    pub fn name(self) -> &'static str {
        match self {
            BoundKind::Residual => "residual",
            BoundKind::Contraction => "contraction",
            BoundKind::Monotone => "monotone",
        }
    }
}

#[derive(Clone, Debug, PartialEq)]
pub struct BoundEntry {
    pub iter: usize,
    pub kind: BoundKind,
    pub lhs: f64,
    pub rhs: f64,
    pub pass: bool,
}

impl BoundEntry {
    /// `rhs / lhs`; infinite when the left side vanishes.
    pub fn margin(&self) -> f64 {
        if self.lhs > 0.0 {
            self.rhs / self.lhs
        } else {
            f64::INFINITY
        }
    }
}

#[derive(Clone, Debug, Default, PartialEq)]
pub struct BoundReport {
    pub entries: Vec<BoundEntry>,
    pub notes: Vec<String>,
}

impl BoundReport {
    pub fn all_pass(&self) -> bool {
        self.entries.iter().all(|e| e.pass)
    }

    pub fn of_kind(&self, kind: BoundKind) -> impl Iterator<Item = &BoundEntry> + '_ {
        self.entries.iter().filter(move |e| e.kind == kind)
    }
}

/// Checks the residual bound at every logged iteration and the decay of the
/// energy error between consecutive iterations. Records without an energy
/// error are skipped. `reference_energy` sets the absolute floor.
pub fn bound_check(records: &[IterationRecord], theta: f64, reference_energy: f64) -> BoundReport {
    let floor = BOUND_ABS_FLOOR * reference_energy.abs();
    let mut report = BoundReport::default();
    for r in records {
        let Some(lhs) = r.energy_sq else {
            report.notes.push(format!("iteration {}: no reference, bounds skipped", r.iter));
            continue;
        };
        let rhs = r.bound_rhs;
        report.entries.push(BoundEntry {
            iter: r.iter,
            kind: BoundKind::Residual,
            lhs,
            rhs,
            pass: lhs <= rhs * (1.0 + BOUND_REL_SLACK) + floor,
        });
    }
    for pair in records.windows(2) {
        let (Some(prev), Some(cur)) = (pair[0].energy_sq, pair[1].energy_sq) else {
            continue;
        };
        let lambda = pair[1].lambda_min;
        let factor = 1.0 - theta * lambda / 2.0;
        if factor > 0.0 && factor < 1.0 {
            let rhs = factor * prev;
            report.entries.push(BoundEntry {
                iter: pair[1].iter,
                kind: BoundKind::Contraction,
                lhs: cur,
                rhs,
                pass: cur <= rhs * (1.0 + BOUND_REL_SLACK) + floor,
            });
        } else {
            report.notes.push(format!(
                "iteration {}: contraction factor {factor} outside (0, 1), only monotonicity checked",
                pair[1].iter
            ));
        }
        report.entries.push(BoundEntry {
            iter: pair[1].iter,
            kind: BoundKind::Monotone,
            lhs: cur,
            rhs: prev,
            pass: cur <= prev * (1.0 + BOUND_REL_SLACK) + floor,
        });
    }
    report
}
