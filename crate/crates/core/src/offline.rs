//! Offline stage: local spectral problems, the direct-sum multiscale space,
//! and the Galerkin coarse solve.
//!
//! In every block `K_i` the snapshot space is spanned by the fine-cell
//! indicators of the block, and the local problem is
//! `a_i(ζ, q) = λ s_i(ζ, q)` with `a_i` restricted to the block's interior
//! edges and `s_i(p, q) = Σ κ_w |w| p_w q_w`. The first `l_i` modes of every
//! block form the offline space; blocks never share support.

use std::collections::BTreeMap;

use nalgebra::{Cholesky, DMatrix, DVector, SymmetricEigen};
use rayon::prelude::*;

use crate::assembly::{FineOperator, PressureField};
use crate::error::{Error, Result};
use crate::grid::{connected_components, CoarsePartition, FineGrid};

/// Dense per-block operators.
#[derive(Clone, Debug)]
pub struct BlockOperators {
    pub block_id: usize,
    /// `a_i` over the block's interior edges (pure Neumann on the block).
    pub interior: DMatrix<f64>,
    /// `interior` plus `t_e` on the diagonal for every coupling and Dirichlet
    /// edge: the block-diagonal part of the global `A`. Its quadratic form is
    /// the velocity-weighted norm `‖·‖²_{V_i}` with zero exterior extension.
    pub velocity: DMatrix<f64>,
    /// `interior` plus the Dirichlet diagonal terms only.
    pub local: DMatrix<f64>,
    /// Diagonal of `s_i`: `κ_w |w|`.
    pub mass: DVector<f64>,
    /// Component label of every block cell under the block's interior edges.
    pub component: Vec<usize>,
    pub num_components: usize,
    /// Whether each component has at least one Dirichlet face.
    pub component_dirichlet: Vec<bool>,
}

impl BlockOperators {
    pub fn len(&self) -> usize {
        self.mass.len()
    }

    pub fn is_empty(&self) -> bool {
        self.mass.is_empty()
    }
}

pub fn block_operators(grid: &FineGrid, part: &CoarsePartition, block_id: usize) -> BlockOperators {
    let block = &part.blocks[block_id];
    let n = block.len();
    let loc = |w: usize| part.local_index[w];
    let mut interior = DMatrix::zeros(n, n);
    let mut local_edges = Vec::with_capacity(block.interior_edges.len());
    for &e in &block.interior_edges {
        let edge = &grid.interior_edges[e];
        let (a, b) = (loc(edge.w1), loc(edge.w2));
        interior[(a, a)] += edge.trans;
        interior[(b, b)] += edge.trans;
        interior[(a, b)] -= edge.trans;
        interior[(b, a)] -= edge.trans;
        local_edges.push((a, b));
    }
    let mut velocity = interior.clone();
    let mut local = interior.clone();
    for &e in &block.coupling_edges {
        let edge = &grid.interior_edges[e];
        let w = if part.block_of[edge.w1] == block_id { edge.w1 } else { edge.w2 };
        velocity[(loc(w), loc(w))] += edge.trans;
    }
    let (component, num_components) = connected_components(n, &local_edges);
    let mut component_dirichlet = vec![false; num_components];
    for &d in &block.dirichlet_edges {
        let edge = &grid.dirichlet_edges[d];
        let a = loc(edge.cell);
        velocity[(a, a)] += edge.trans;
        local[(a, a)] += edge.trans;
        component_dirichlet[component[a]] = true;
    }
    let vol = grid.cell_volume();
    let mass = DVector::from_iterator(n, block.cells.iter().map(|&w| grid.kappa[w] * vol));
    BlockOperators { block_id, interior, velocity, local, mass, component, num_components, component_dirichlet }
}

/// Operators for every block, computed in parallel and ordered by block id.
pub fn all_block_operators(grid: &FineGrid, part: &CoarsePartition) -> Vec<BlockOperators> {
    (0..part.num_blocks()).into_par_iter().map(|b| block_operators(grid, part, b)).collect()
}

/// Generalized eigendecomposition of one block.
#[derive(Clone, Debug)]
pub struct BlockSpectrum {
    pub block_id: usize,
    /// Ascending, except that the zero mode of every connected component
    /// comes first (one per component, in component order).
    pub eigenvalues: Vec<f64>,
    /// `s_i`-orthonormal eigenvectors as columns, same order as `eigenvalues`.
    pub eigenvectors: DMatrix<f64>,
    pub mass: DVector<f64>,
    pub num_components: usize,
}

impl BlockSpectrum {
    pub fn len(&self) -> usize {
        self.eigenvalues.len()
    }

    pub fn is_empty(&self) -> bool {
        self.eigenvalues.is_empty()
    }

    pub fn lambda_max(&self) -> f64 {
        self.eigenvalues.iter().cloned().fold(0.0, f64::max)
    }
}

/// Solves `A ζ = λ S ζ` for symmetric `A` and positive diagonal `S`.
///
/// The block is split into the connected components of `A`'s graph and each
/// component is solved as `S^{-1/2} A S^{-1/2} v = λ v`, `ζ = S^{-1/2} v`. The
/// lowest mode of each component is its null mode. Eigenvectors are signed so
/// that their first entry of non-negligible magnitude is positive.
pub fn solve_block_spectrum(block_id: usize, interior: &DMatrix<f64>, mass: &DVector<f64>) -> BlockSpectrum {
    let n = mass.len();
    assert!(mass.iter().all(|s| *s > 0.0), "mass weights must be positive");
    let mut edges = Vec::new();
    for c in 0..n {
        for r in (c + 1)..n {
            if interior[(r, c)] != 0.0 {
                edges.push((r, c));
            }
        }
    }
    let (component, count) = connected_components(n, &edges);
    let mut members: Vec<Vec<usize>> = vec![Vec::new(); count];
    for (k, &c) in component.iter().enumerate() {
        members[c].push(k);
    }

    // (is_higher_mode, λ, component, rank within component, vector)
    let mut modes: Vec<(bool, f64, usize, usize, Vec<f64>)> = Vec::with_capacity(n);
    for (c, idx) in members.iter().enumerate() {
        let m = idx.len();
        let scale: Vec<f64> = idx.iter().map(|&k| 1.0 / mass[k].sqrt()).collect();
        let sym = DMatrix::from_fn(m, m, |r, q| interior[(idx[r], idx[q])] * scale[r] * scale[q]);
        let eig = SymmetricEigen::new(sym);
        let mut order: Vec<usize> = (0..m).collect();
        order.sort_by(|&a, &b| eig.eigenvalues[a].total_cmp(&eig.eigenvalues[b]).then(a.cmp(&b)));
        for (rank, &o) in order.iter().enumerate() {
            let mut v = vec![0.0; n];
            for (r, &k) in idx.iter().enumerate() {
                v[k] = eig.eigenvectors[(r, o)] * scale[r];
            }
            fix_sign(&mut v);
            modes.push((rank > 0, eig.eigenvalues[o], c, rank, v));
        }
    }
    modes.sort_by(|a, b| {
        a.0.cmp(&b.0)
            .then_with(|| if a.0 { a.1.total_cmp(&b.1) } else { std::cmp::Ordering::Equal })
            .then(a.2.cmp(&b.2))
            .then(a.3.cmp(&b.3))
    });
    let eigenvalues = modes.iter().map(|m| m.1).collect();
    let eigenvectors = DMatrix::from_fn(n, n, |r, c| modes[c].4[r]);
    BlockSpectrum { block_id, eigenvalues, eigenvectors, mass: mass.clone(), num_components: count }
}

fn fix_sign(v: &mut [f64]) {
    let max = v.iter().fold(0.0f64, |m, x| m.max(x.abs()));
    if let Some(first) = v.iter().find(|x| x.abs() > 1e-8 * max) {
        if *first < 0.0 {
            v.iter_mut().for_each(|x| *x = -*x);
        }
    }
}

/// Spectra of every block, in parallel, ordered by block id.
pub fn compute_spectra(ops: &[BlockOperators]) -> Vec<BlockSpectrum> {
    ops.par_iter().map(|o| solve_block_spectrum(o.block_id, &o.interior, &o.mass)).collect()
}

#[derive(Clone, Copy, Debug, PartialEq, Eq)]
pub enum ColumnKind {
    Offline,
    Online,
}

/// Basis columns living on one block.
#[derive(Clone, Debug)]
pub struct BlockBasis {
    pub block_id: usize,
    pub cells: Vec<usize>,
    /// `n_i x m_i`, one column per basis function.
    pub columns: DMatrix<f64>,
    pub kinds: Vec<ColumnKind>,
}

impl BlockBasis {
    pub fn len(&self) -> usize {
        self.kinds.len()
    }

    pub fn is_empty(&self) -> bool {
        self.kinds.is_empty()
    }

    pub fn offline_count(&self) -> usize {
        self.kinds.iter().filter(|k| **k == ColumnKind::Offline).count()
    }

    pub fn online_count(&self) -> usize {
        self.len() - self.offline_count()
    }
}

/// The multiscale space `R0`: a direct sum of block-local spaces.
///
/// Columns are ordered block by block and, within a block, in insertion order.
#[derive(Clone, Debug)]
pub struct MultiscaleSpace {
    pub blocks: Vec<BlockBasis>,
    /// Smallest eigenvalue left out of the offline space; `+∞` if every block
    /// keeps its whole spectrum.
    pub lambda: f64,
    /// Number of online enrichment rounds applied.
    pub generation: usize,
    pub num_fine: usize,
}

/// Selects `l_i = min(L, |K_i|, #{λ_j <= cutoff})` modes per block, raised to
/// the block's component count so that every component keeps its constant.
pub fn build_offline_space(
    part: &CoarsePartition,
    spectra: &[BlockSpectrum],
    modes: usize,
    eig_cutoff: f64,
) -> Result<MultiscaleSpace> {
    if modes == 0 {
        return Err(Error::Invalid("need at least one offline mode per block".into()));
    }
    if !(eig_cutoff > 0.0) {
        return Err(Error::Invalid(format!("eigenvalue cutoff must be positive, got {eig_cutoff}")));
    }
    let mut lambda = f64::INFINITY;
    let mut blocks = Vec::with_capacity(spectra.len());
    for s in spectra {
        let below = s.eigenvalues.iter().filter(|l| **l <= eig_cutoff).count();
        let keep = modes.min(s.len()).min(below).max(s.num_components).min(s.len());
        if keep < s.len() {
            lambda = lambda.min(s.eigenvalues[keep]);
        }
        blocks.push(BlockBasis {
            block_id: s.block_id,
            cells: part.blocks[s.block_id].cells.clone(),
            columns: s.eigenvectors.columns(0, keep).into_owned(),
            kinds: vec![ColumnKind::Offline; keep],
        });
    }
    let num_fine = part.block_of.len();
    Ok(MultiscaleSpace { blocks, lambda, generation: 0, num_fine })
}

impl MultiscaleSpace {
    pub fn dim(&self) -> usize {
        self.blocks.iter().map(BlockBasis::len).sum()
    }

    pub fn offsets(&self) -> Vec<usize> {
        let mut off = Vec::with_capacity(self.blocks.len() + 1);
        let mut acc = 0;
        off.push(0);
        for b in &self.blocks {
            acc += b.len();
            off.push(acc);
        }
        off
    }

    /// `R0 y`.
    pub fn prolongate(&self, coeffs: &[f64]) -> Vec<f64> {
        let mut out = vec![0.0; self.num_fine];
        let mut off = 0;
        for b in &self.blocks {
            let m = b.len();
            let y = DVector::from_column_slice(&coeffs[off..off + m]);
            let v = &b.columns * y;
            for (k, &w) in b.cells.iter().enumerate() {
                out[w] = v[k];
            }
            off += m;
        }
        out
    }

    /// `R0ᵀ v`.
    pub fn restrict(&self, v: &[f64]) -> Vec<f64> {
        let mut out = Vec::with_capacity(self.dim());
        for b in &self.blocks {
            let local = DVector::from_iterator(b.cells.len(), b.cells.iter().map(|&w| v[w]));
            out.extend((b.columns.transpose() * local).iter());
        }
        out
    }

    /// Every column as a global vector, with its block and kind.
    pub fn columns(&self) -> impl Iterator<Item = (usize, ColumnKind, Vec<f64>)> + '_ {
        self.blocks.iter().flat_map(move |b| {
            (0..b.len()).map(move |c| {
                let mut v = vec![0.0; self.num_fine];
                for (k, &w) in b.cells.iter().enumerate() {
                    v[w] = b.columns[(k, c)];
                }
                (b.block_id, b.kinds[c], v)
            })
        })
    }

    pub fn append_online(&mut self, block_id: usize, column: &DVector<f64>) {
        let b = &mut self.blocks[block_id];
        assert_eq!(b.block_id, block_id);
        let m = b.columns.ncols();
        let cols = std::mem::replace(&mut b.columns, DMatrix::zeros(0, 0));
        let mut cols = cols.insert_column(m, 0.0);
        cols.set_column(m, column);
        b.columns = cols;
        b.kinds.push(ColumnKind::Online);
    }
}

/// `A_c = R0ᵀ A R0`, `F_c = R0ᵀ F`, and the coarse solution.
#[derive(Clone, Debug)]
pub struct CoarseSystem {
    pub matrix: DMatrix<f64>,
    pub rhs: DVector<f64>,
    pub solution: DVector<f64>,
}

/// Assembles `R0ᵀ A R0` block by block from the sparse fine operator. For
/// block `i` the product `A R0_i` only touches rows of block `i` and of the
/// cells across its coupling edges, so off-diagonal coarse blocks are formed
/// from those few rows alone.
pub fn coarse_matrix(op: &FineOperator, space: &MultiscaleSpace, block_of: &[usize], local_index: &[usize]) -> DMatrix<f64> {
    let dim = space.dim();
    let offsets = space.offsets();
    let pieces: Vec<Vec<(usize, usize, DMatrix<f64>)>> = space
        .blocks
        .par_iter()
        .enumerate()
        .map(|(i, b)| {
            let m = b.len();
            let mut inside = DMatrix::zeros(b.cells.len(), m);
            let mut outside: BTreeMap<usize, Vec<f64>> = BTreeMap::new();
            for (k, &w) in b.cells.iter().enumerate() {
                let row = op.matrix.outer_view(w).expect("row in range");
                let z = b.columns.row(k);
                for (v, &a) in row.iter() {
                    if block_of[v] == i {
                        let mut target = inside.row_mut(local_index[v]);
                        target += &z * a;
                    } else {
                        let entry = outside.entry(v).or_insert_with(|| vec![0.0; m]);
                        for (e, zc) in entry.iter_mut().zip(z.iter()) {
                            *e += a * zc;
                        }
                    }
                }
            }
            let mut out = vec![(i, i, b.columns.transpose() * inside)];
            let mut cross: BTreeMap<usize, DMatrix<f64>> = BTreeMap::new();
            for (v, y) in outside {
                let j = block_of[v];
                let bj = &space.blocks[j];
                let zj = bj.columns.row(local_index[v]);
                let acc = cross.entry(j).or_insert_with(|| DMatrix::zeros(bj.len(), m));
                for r in 0..bj.len() {
                    for c in 0..m {
                        acc[(r, c)] += zj[r] * y[c];
                    }
                }
            }
            out.extend(cross.into_iter().map(|(j, mat)| (j, i, mat)));
            out
        })
        .collect();
    let mut ac = DMatrix::zeros(dim, dim);
    for list in pieces {
        for (j, i, mat) in list {
            ac.view_mut((offsets[j], offsets[i]), (mat.nrows(), mat.ncols())).copy_from(&mat);
        }
    }
    // exact symmetry for the factorization
    let sym = (&ac + ac.transpose()) * 0.5;
    sym
}

/// Relative residual required of the coarse solve.
pub const COARSE_RESIDUAL_TOL: f64 = 1e-12;

/// Galerkin projection `p_ms = R0 (R0ᵀ A R0)⁻¹ R0ᵀ F`.
pub fn coarse_solve(op: &FineOperator, part: &CoarsePartition, space: &MultiscaleSpace) -> Result<(PressureField, CoarseSystem)> {
    if space.dim() == 0 {
        return Err(Error::Invalid("multiscale space is empty".into()));
    }
    let matrix = coarse_matrix(op, space, &part.block_of, &part.local_index);
    let rhs = DVector::from_vec(space.restrict(&op.rhs));
    let chol = Cholesky::new(matrix.clone()).ok_or_else(|| {
        Error::Solve("coarse matrix is not positive definite (rank-deficient basis?)".into())
    })?;
    let mut y = chol.solve(&rhs);
    let fnorm = rhs.norm();
    for _ in 0..4 {
        let res = &rhs - &matrix * &y;
        if res.norm() <= 1e-15 * fnorm {
            break;
        }
        y += chol.solve(&res);
    }
    let rel = if fnorm > 0.0 { (&rhs - &matrix * &y).norm() / fnorm } else { 0.0 };
    if !(rel <= COARSE_RESIDUAL_TOL) {
        return Err(Error::Solve(format!("coarse solve residual {rel:e} above {COARSE_RESIDUAL_TOL:e}")));
    }
    let p = space.prolongate(y.as_slice());
    Ok((PressureField(p), CoarseSystem { matrix, rhs, solution: y }))
}
