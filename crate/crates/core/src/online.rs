//! Online stage: residual indicators, local residual solves, and adaptive
//! enrichment.
//!
//! The residual of a multiscale solution is `r = F - A p_ms`, restricted to
//! each block. Its size in block `i` is measured in the dual of the
//! velocity-weighted norm, `δ_i² = r_iᵀ A_V,i⁻¹ r_i = sup_q r_i(q)² / ‖q‖²_{V_i}`.
//! Selected blocks receive one new basis function each, the solution of the
//! block problem with no-flux conditions on the block boundary driven by
//! `r_i`.

use nalgebra::{Cholesky, DMatrix, DVector, Dyn, SymmetricEigen};
use rayon::prelude::*;

use crate::assembly::{recover_flux, FineOperator, PressureField};
use crate::error::{Error, Result};
use crate::grid::{CoarsePartition, FineGrid};
use crate::metrics::{pressure_error, velocity_error, Reference};
use crate::offline::{all_block_operators, coarse_solve, compute_spectra, BlockOperators, BlockSpectrum, MultiscaleSpace};

/// Local block problems of a fixed grid and partition, factored once.
pub struct LocalProblems {
    pub ops: Vec<BlockOperators>,
    pub spectra: Vec<BlockSpectrum>,
    velocity: Vec<PinnedSolver>,
    local: Vec<PinnedSolver>,
}

/// A block operator with every floating component pinned by a rank-one term
/// along its constant. For right-hand sides with zero mean on those
/// components this returns the zero-mean solution of the singular system.
struct PinnedSolver {
    chol: Cholesky<f64, Dyn>,
    floating: Vec<Vec<usize>>,
}

impl PinnedSolver {
    /// `anchored(c)` tells whether component `c` is already definite.
    fn new(ops: &BlockOperators, matrix: &DMatrix<f64>, anchored: impl Fn(usize) -> bool) -> Self {
        let mut members = vec![Vec::new(); ops.num_components];
        for (k, &c) in ops.component.iter().enumerate() {
            members[c].push(k);
        }
        let floating: Vec<Vec<usize>> = members
            .into_iter()
            .enumerate()
            .filter(|(c, _)| !anchored(*c))
            .map(|(_, m)| m)
            .collect();
        let mut reg = matrix.clone();
        for comp in &floating {
            let n = comp.len() as f64;
            let mean_diag = comp.iter().map(|&k| matrix[(k, k)]).sum::<f64>() / n;
            let alpha = if mean_diag > 0.0 { mean_diag } else { 1.0 } / n;
            for &r in comp {
                for &c in comp {
                    reg[(r, c)] += alpha;
                }
            }
        }
        let chol = Cholesky::new(reg).expect("pinned block operator is SPD");
        PinnedSolver { chol, floating }
    }

    /// Solves after projecting out the floating means. Returns the largest
    /// relative mean removed.
    fn solve(&self, r: &DVector<f64>) -> (DVector<f64>, f64) {
        let norm = r.norm();
        let mut rhs = r.clone();
        let mut worst = 0.0f64;
        for comp in &self.floating {
            let sum: f64 = comp.iter().map(|&k| rhs[k]).sum();
            if norm > 0.0 {
                worst = worst.max(sum.abs() / norm);
            }
            let mean = sum / comp.len() as f64;
            for &k in comp {
                rhs[k] -= mean;
            }
        }
        (self.chol.solve(&rhs), worst)
    }
}

impl LocalProblems {
    pub fn new(grid: &FineGrid, part: &CoarsePartition) -> Self {
        let ops = all_block_operators(grid, part);
        let spectra = compute_spectra(&ops);
        let (velocity, local): (Vec<_>, Vec<_>) = ops
            .par_iter()
            .map(|o| {
                // a component is anchored in the velocity norm when any of its cells carries an exterior face
                let mut outer = vec![false; o.num_components];
                for (k, &c) in o.component.iter().enumerate() {
                    if o.velocity[(k, k)] > o.interior[(k, k)] {
                        outer[c] = true;
                    }
                }
                let v = PinnedSolver::new(o, &o.velocity, |c| outer[c]);
                let l = PinnedSolver::new(o, &o.local, |c| o.component_dirichlet[c]);
                (v, l)
            })
            .unzip();
        LocalProblems { ops, spectra, velocity, local }
    }

    /// `A_V,i⁻¹ r`.
    pub fn velocity_solve(&self, block: usize, r: &DVector<f64>) -> DVector<f64> {
        self.velocity[block].solve(r).0
    }

    pub fn num_blocks(&self) -> usize {
        self.ops.len()
    }
}

#[derive(Clone, Debug)]
pub struct ResidualIndicators {
    pub iteration: usize,
    /// `(F - A p_ms)` restricted to each block.
    pub residuals: Vec<DVector<f64>>,
    pub delta: Vec<f64>,
}

impl ResidualIndicators {
    pub fn sum_sq(&self) -> f64 {
        self.delta.iter().map(|d| d * d).sum()
    }

    pub fn max(&self) -> f64 {
        self.delta.iter().cloned().fold(0.0, f64::max)
    }
}

pub fn compute_indicators(
    op: &FineOperator,
    part: &CoarsePartition,
    locals: &LocalProblems,
    p_ms: &[f64],
    iteration: usize,
) -> ResidualIndicators {
    let r = op.residual(p_ms);
    let (residuals, delta): (Vec<_>, Vec<_>) = (0..part.num_blocks())
        .into_par_iter()
        .map(|b| {
            let ri = DVector::from_vec(part.restrict(b, &r));
            let z = locals.velocity_solve(b, &ri);
            let d2 = ri.dot(&z).max(0.0);
            (ri, d2.sqrt())
        })
        .unzip();
    ResidualIndicators { iteration, residuals, delta }
}

/// Blocks to enrich, ordered by descending `δ_i` (ties by block id).
///
/// Takes the shortest prefix whose squared indicators reach `θ Σ δ_i²`, then
/// drops blocks with `δ_i < skip_tol · δ_ref`.
pub fn select_blocks(delta: &[f64], theta: f64, skip_tol: f64, delta_ref: f64) -> Vec<usize> {
    if theta <= 0.0 {
        return Vec::new();
    }
    let mut order: Vec<usize> = (0..delta.len()).collect();
    order.sort_by(|&a, &b| delta[b].total_cmp(&delta[a]).then(a.cmp(&b)));
    let total: f64 = order.iter().map(|&b| delta[b] * delta[b]).sum();
    if total == 0.0 {
        return Vec::new();
    }
    let target = theta * total;
    let mut cum = 0.0;
    let mut k = order.len();
    for (n, &b) in order.iter().enumerate() {
        cum += delta[b] * delta[b];
        if cum >= target {
            k = n + 1;
            break;
        }
    }
    order.truncate(k);
    order.retain(|&b| delta[b] >= skip_tol * delta_ref && delta[b] > 0.0);
    order
}

/// Solves the block residual problem and scales the result to unit
/// `s_i`-norm. Returns `None` for a zero residual.
pub fn online_basis(locals: &LocalProblems, block: usize, residual: &DVector<f64>) -> Result<Option<DVector<f64>>> {
    let norm = residual.norm();
    if norm == 0.0 {
        return Ok(None);
    }
    let (mut beta, mean) = locals.local[block].solve(residual);
    if mean > 1e-8 {
        return Err(Error::Consistency(format!(
            "block {block}: residual has relative mean {mean:e} on a no-flux component"
        )));
    }
    let mass = &locals.ops[block].mass;
    let snorm = beta.iter().zip(mass.iter()).map(|(b, s)| s * b * b).sum::<f64>().sqrt();
    if snorm == 0.0 || !snorm.is_finite() {
        return Ok(None);
    }
    beta /= snorm;
    Ok(Some(beta))
}

/// Smallest singular value of `S^{1/2} Z` for the block's columns `Z`.
pub fn block_min_singular_value(space: &MultiscaleSpace, mass: &DVector<f64>, block: usize) -> f64 {
    let z = &space.blocks[block].columns;
    let sz = DMatrix::from_fn(z.nrows(), z.ncols(), |r, c| z[(r, c)] * mass[r].sqrt());
    let gram = sz.transpose() * &sz;
    let eig = SymmetricEigen::new(gram);
    eig.eigenvalues.iter().cloned().fold(f64::INFINITY, f64::min).max(0.0).sqrt()
}

/// Threshold for the linear independence of an appended online column.
pub const MIN_SINGULAR_VALUE: f64 = 1e-8;

#[derive(Clone, Copy, Debug, PartialEq)]
pub struct OnlineConfig {
    pub theta: f64,
    pub max_iter: usize,
    pub skip_tol: f64,
}

impl Default for OnlineConfig {
    fn default() -> Self {
        OnlineConfig { theta: 1.0, max_iter: 5, skip_tol: 1e-3 }
    }
}

impl OnlineConfig {
    pub fn validate(&self) -> Result<()> {
        if !(0.0..=1.0).contains(&self.theta) {
            return Err(Error::Invalid(format!("theta must lie in [0, 1], got {}", self.theta)));
        }
        if !(self.skip_tol >= 0.0) {
            return Err(Error::Invalid(format!("skip tolerance must be >= 0, got {}", self.skip_tol)));
        }
        Ok(())
    }
}

/// One logged state of the enrichment loop.
#[derive(Clone, Debug, PartialEq)]
pub struct IterationRecord {
    pub iter: usize,
    pub dim: usize,
    pub e_p: Option<f64>,
    pub e_u: Option<f64>,
    pub energy_sq: Option<f64>,
    pub sum_delta_sq: f64,
    pub lambda_min: f64,
    /// `energy_sq`.
    pub bound_lhs: Option<f64>,
    /// `(2/Λ) Σ δ_i²`.
    pub bound_rhs: f64,
    /// Blocks enriched to reach this state.
    pub selected: Vec<usize>,
}

pub struct EnrichmentRun {
    pub space: MultiscaleSpace,
    /// Solution after each iteration; entry 0 is the initial solution.
    pub pressures: Vec<PressureField>,
    pub indicators: Vec<ResidualIndicators>,
    pub records: Vec<IterationRecord>,
}

impl EnrichmentRun {
    pub fn final_pressure(&self) -> &PressureField {
        self.pressures.last().expect("at least the initial solution")
    }
}

fn record(
    grid: &FineGrid,
    op: &FineOperator,
    space: &MultiscaleSpace,
    p: &PressureField,
    ind: &ResidualIndicators,
    reference: Option<&Reference>,
    selected: Vec<usize>,
) -> Result<IterationRecord> {
    let sum_delta_sq = ind.sum_sq();
    let lambda = space.lambda;
    let bound_rhs = if lambda.is_finite() { 2.0 / lambda * sum_delta_sq } else { 0.0 };
    let (e_p, e_u, energy) = match reference {
        Some(r) => {
            let flux = recover_flux(grid, p);
            let diff: Vec<f64> = r.pressure.iter().zip(p.iter()).map(|(a, b)| a - b).collect();
            (
                Some(pressure_error(grid, &r.pressure, p)?),
                Some(velocity_error(grid, &r.flux, &flux)?),
                Some(op.energy(&diff).max(0.0)),
            )
        }
        None => (None, None, None),
    };
    Ok(IterationRecord {
        iter: ind.iteration,
        dim: space.dim(),
        e_p,
        e_u,
        energy_sq: energy,
        sum_delta_sq,
        lambda_min: lambda,
        bound_lhs: energy,
        bound_rhs,
        selected,
    })
}

/// Adaptive online enrichment.
///
/// Each iteration computes the indicators of the current solution, selects
/// blocks by the `θ` rule, appends one basis function per selected block,
/// and re-solves the coarse system. Stops early when nothing is selected.
/// The skip reference `δ_ref` is the largest indicator of the first iteration.
pub fn enrich_loop(
    grid: &FineGrid,
    op: &FineOperator,
    part: &CoarsePartition,
    locals: &LocalProblems,
    mut space: MultiscaleSpace,
    cfg: &OnlineConfig,
    reference: Option<&Reference>,
) -> Result<EnrichmentRun> {
    cfg.validate()?;
    let (mut p, _) = coarse_solve(op, part, &space)?;
    let mut ind = compute_indicators(op, part, locals, &p, 0);
    let mut records = vec![record(grid, op, &space, &p, &ind, reference, Vec::new())?];
    let mut pressures = vec![p.clone()];
    let mut indicators = vec![ind.clone()];
    let delta_ref = ind.max();

    for n in 1..=cfg.max_iter {
        let selected = select_blocks(&ind.delta, cfg.theta, cfg.skip_tol, delta_ref);
        if selected.is_empty() {
            log::info!("online iteration {n}: no block selected, stopping");
            break;
        }
        let mut blocks = selected.clone();
        blocks.sort_unstable();
        let new_columns: Vec<(usize, Option<DVector<f64>>)> = blocks
            .par_iter()
            .map(|&b| online_basis(locals, b, &ind.residuals[b]).map(|beta| (b, beta)))
            .collect::<Result<_>>()?;
        let mut added = Vec::new();
        for (b, beta) in new_columns {
            if let Some(beta) = beta {
                space.append_online(b, &beta);
                let sigma = block_min_singular_value(&space, &locals.ops[b].mass, b);
                if sigma <= MIN_SINGULAR_VALUE {
                    return Err(Error::Consistency(format!(
                        "online column in block {b} is linearly dependent (smallest singular value {sigma:e})"
                    )));
                }
                added.push(b);
            }
        }
        if added.is_empty() {
            break;
        }
        space.generation += 1;
        let (pn, _) = coarse_solve(op, part, &space)?;
        p = pn;
        ind = compute_indicators(op, part, locals, &p, n);
        records.push(record(grid, op, &space, &p, &ind, reference, selected)?);
        log::debug!(
            "online iteration {n}: dim {} sum delta^2 {:e}",
            space.dim(),
            ind.sum_sq()
        );
        pressures.push(p.clone());
        indicators.push(ind.clone());
    }
    Ok(EnrichmentRun { space, pressures, indicators, records })
}
