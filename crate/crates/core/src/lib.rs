//! Multiscale solver for single-phase Darcy flow in perforated 2D domains.
//!
//! The fine problem is the two-point flux pressure system obtained from
//! lowest-order Raviart-Thomas mixed elements with trapezoidal mass lumping.
//! The coarse approximation uses block-local spectral bases (offline) enriched
//! by residual-driven local solves (online).
//!
//! ```no_run
//! use darcy_ms::prelude::*;
//!
//! let perf = random_perforations(1, 20, 3.0, 7.0, 100.0, 100.0);
//! let grid = build_grid(
//!     GridParams::unit_cells(100, 100),
//!     &perf,
//!     &PermeabilitySpec::LogNormal { mean_log: 0.0, std_log: 1.0, seed: 2 },
//!     BoundarySpec::default(),
//! )?;
//! let part = build_partition(&grid, 20, 20)?;
//! let op = assemble(&grid, &SourceSpec::default())?;
//! let locals = LocalProblems::new(&grid, &part);
//! let space = build_offline_space(&part, &locals.spectra, 1, 1e5)?;
//! let (p_ms, _) = coarse_solve(&op, &part, &space)?;
//! # Ok::<(), darcy_ms::Error>(())
//! ```

pub mod assembly;
pub mod error;
pub mod grid;
pub mod metrics;
pub mod offline;
pub mod online;

pub use error::{Error, Result};

pub mod prelude {
    pub use crate::assembly::{
        assemble, divergence_defect, recover_flux, solve_fine, FineOperator, FluxField, PressureField, SourceSpec,
    };
    pub use crate::grid::{
        build_grid, build_partition, random_perforations, BoundarySpec, Circle, CoarsePartition, FineGrid,
        GridParams, PerforationSpec, PermeabilitySpec,
    };
    pub use crate::metrics::{energy_error, pressure_error, velocity_error, Reference};
    pub use crate::offline::{build_offline_space, coarse_solve, MultiscaleSpace};
    pub use crate::online::{compute_indicators, enrich_loop, select_blocks, LocalProblems, OnlineConfig};
}
