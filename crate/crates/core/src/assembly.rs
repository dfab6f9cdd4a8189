//! Pressure-only fine system.
//!
//! With trapezoidal lumping of the lowest-order Raviart-Thomas mass matrix the
//! velocity unknowns drop out and the fine problem becomes
//! `a(p, q) = Σ_e t_e [p]_e [q]_e = (f, q)`, a cell-centered two-point flux
//! scheme. Only the pressure operator `A` and load `F` are ever formed.
//! Dirichlet faces are folded in with the half-cell rule: `t_e` is added to
//! the diagonal and `t_e g` to the load.

use std::f64::consts::PI;
use std::io::Write;
use std::ops::Deref;

use sprs::{CsMat, TriMat};
use sprs_ldl::Ldl;

use crate::error::{Error, Result};
use crate::grid::{connected_components, FineGrid, InteriorEdge, Side};

/// `t_e = κ̄_e |e|²` with `κ̄_e = 2 / (|w1|/κ1 + |w2|/κ2)`.
#[inline]
pub fn interior_transmissibility(k1: f64, vol1: f64, k2: f64, vol2: f64, face: f64) -> f64 {
    2.0 / (vol1 / k1 + vol2 / k2) * face * face
}

/// Half-cell rule for a Dirichlet face: `t_e = (2κ/|w|) |e|²`.
#[inline]
pub fn boundary_transmissibility(k: f64, vol: f64, face: f64) -> f64 {
    2.0 * k / vol * face * face
}

#[derive(Clone, Debug, PartialEq)]
pub enum SourceSpec {
    Constant(f64),
    /// `f = amplitude · sin(2πx/lx) · sin(2πy/ly)`; zero net source on the unperforated rectangle.
    Sine { amplitude: f64 },
    /// Point values per active cell.
    PerCell(Vec<f64>),
}

impl Default for SourceSpec {
    fn default() -> Self {
        SourceSpec::Constant(0.0)
    }
}

impl SourceSpec {
    /// Midpoint-rule cell integrals `∫_w f ≈ f(x_w) |w|`.
    pub fn integrals(&self, grid: &FineGrid) -> Result<Vec<f64>> {
        let vol = grid.cell_volume();
        let n = grid.num_cells();
        let v = match self {
            SourceSpec::Constant(c) => vec![c * vol; n],
            SourceSpec::Sine { amplitude } => (0..n)
                .map(|w| {
                    let (x, y) = grid.cell_center(w);
                    amplitude * (2.0 * PI * x / grid.lx).sin() * (2.0 * PI * y / grid.ly).sin() * vol
                })
                .collect(),
            SourceSpec::PerCell(values) => {
                if values.len() != n {
                    return Err(Error::Invalid(format!(
                        "source has {} values, grid has {n} active cells",
                        values.len()
                    )));
                }
                values.iter().map(|f| f * vol).collect()
            }
        };
        if v.iter().any(|x| !x.is_finite()) {
            return Err(Error::Invalid("source must be finite".into()));
        }
        Ok(v)
    }
}

/// Pressure values indexed by active cell id.
#[derive(Clone, Debug, PartialEq)]
pub struct PressureField(pub Vec<f64>);

impl Deref for PressureField {
    type Target = [f64];

    fn deref(&self) -> &[f64] {
        &self.0
    }
}

impl From<Vec<f64>> for PressureField {
    fn from(v: Vec<f64>) -> Self {
        PressureField(v)
    }
}

#[derive(Clone, Debug)]
pub struct FineOperator {
    /// Symmetric pressure operator in CSR form.
    pub matrix: CsMat<f64>,
    /// `∫_w f + Σ_{Dirichlet e of w} t_e g_e`.
    pub rhs: Vec<f64>,
    /// Cell source integrals `∫_w f`.
    pub source: Vec<f64>,
    /// Dirichlet pressure per Dirichlet edge, in grid order.
    pub dirichlet_values: Vec<f64>,
    /// Sum of Dirichlet transmissibilities per cell (the row sums of `A`).
    pub dirichlet_trans: Vec<f64>,
    /// No Dirichlet face at all: `A` has the constants in its kernel.
    pub singular: bool,
    cells: Vec<(usize, usize)>,
}

pub fn assemble(grid: &FineGrid, source: &SourceSpec) -> Result<FineOperator> {
    let n = grid.num_cells();
    let src = source.integrals(grid)?;
    let mut diag = vec![0.0; n];
    let mut dirichlet_trans = vec![0.0; n];
    let mut rhs = src.clone();
    let mut tri = TriMat::with_capacity((n, n), n + 2 * grid.interior_edges.len());
    for e in &grid.interior_edges {
        diag[e.w1] += e.trans;
        diag[e.w2] += e.trans;
        tri.add_triplet(e.w1, e.w2, -e.trans);
        tri.add_triplet(e.w2, e.w1, -e.trans);
    }
    for d in &grid.dirichlet_edges {
        diag[d.cell] += d.trans;
        dirichlet_trans[d.cell] += d.trans;
        rhs[d.cell] += d.trans * d.value;
    }
    for (w, &v) in diag.iter().enumerate() {
        tri.add_triplet(w, w, v);
    }
    let singular = grid.dirichlet_edges.is_empty();
    if singular {
        let net: f64 = src.iter().sum();
        let scale: f64 = src.iter().map(|x| x.abs()).sum();
        if net.abs() > 1e-12 * scale.max(f64::MIN_POSITIVE) && net != 0.0 {
            return Err(Error::IncompatibleSource(net));
        }
    }
    Ok(FineOperator {
        matrix: tri.to_csr(),
        rhs,
        source: src,
        dirichlet_values: grid.dirichlet_edges.iter().map(|d| d.value).collect(),
        dirichlet_trans,
        singular,
        cells: grid.cells.clone(),
    })
}

impl FineOperator {
    pub fn dim(&self) -> usize {
        self.rhs.len()
    }

    pub fn apply(&self, p: &[f64]) -> Vec<f64> {
        let mut out = vec![0.0; self.dim()];
        for (row, vec) in self.matrix.outer_iterator().enumerate() {
            out[row] = vec.iter().map(|(col, &a)| a * p[col]).sum();
        }
        out
    }

    /// `F - A p`.
    pub fn residual(&self, p: &[f64]) -> Vec<f64> {
        let ap = self.apply(p);
        self.rhs.iter().zip(ap).map(|(f, a)| f - a).collect()
    }

    /// `a(p, q) = pᵀ A q`.
    pub fn bilinear(&self, p: &[f64], q: &[f64]) -> f64 {
        let aq = self.apply(q);
        p.iter().zip(aq).map(|(x, y)| x * y).sum()
    }

    pub fn energy(&self, p: &[f64]) -> f64 {
        self.bilinear(p, p)
    }

    /// Checks every connected component of the cell graph reaches a Dirichlet face.
    fn check_anchored(&self) -> Result<()> {
        let edges: Vec<(usize, usize)> = self
            .matrix
            .iter()
            .filter(|(_, (r, c))| r < c)
            .map(|(_, (r, c))| (r, c))
            .collect();
        let (comp, count) = connected_components(self.dim(), &edges);
        let mut anchored = vec![false; count];
        let mut size = vec![0usize; count];
        let mut first = vec![usize::MAX; count];
        for (w, &c) in comp.iter().enumerate() {
            anchored[c] |= self.dirichlet_trans[w] > 0.0;
            size[c] += 1;
            first[c] = first[c].min(w);
        }
        if let Some(c) = (0..count).find(|&c| !anchored[c]) {
            let (i, j) = self.cells[first[c]];
            return Err(Error::Singular { size: size[c], i, j });
        }
        Ok(())
    }
}

fn norm(v: &[f64]) -> f64 {
    v.iter().map(|x| x * x).sum::<f64>().sqrt()
}

/// Relative residual the fine reference solve must reach.
pub const FINE_RESIDUAL_TOL: f64 = 1e-10;

/// Direct sparse LDLᵀ solve (reverse Cuthill-McKee ordering) followed by a
/// few steps of iterative refinement.
pub fn solve_fine(op: &FineOperator) -> Result<PressureField> {
    op.check_anchored()?;
    let n = op.dim();
    let fnorm = norm(&op.rhs);
    if fnorm == 0.0 {
        return Ok(PressureField(vec![0.0; n]));
    }
    let csc = op.matrix.to_csc();
    let ldl = Ldl::new()
        .check_symmetry(sprs::SymmetryCheck::DontCheckSymmetry)
        .fill_in_reduction(sprs::FillInReduction::ReverseCuthillMcKee)
        .numeric(csc.view())
        .map_err(|e| Error::Solve(format!("sparse factorization: {e}")))?;
    let mut p: Vec<f64> = ldl.solve(&op.rhs);
    let mut res = op.residual(&p);
    for _ in 0..4 {
        if norm(&res) <= 1e-14 * fnorm {
            break;
        }
        let dp: Vec<f64> = ldl.solve(&res);
        for (x, d) in p.iter_mut().zip(&dp) {
            *x += d;
        }
        res = op.residual(&p);
    }
    let rel = norm(&res) / fnorm;
    if !(rel <= FINE_RESIDUAL_TOL) {
        return Err(Error::Solve(format!("fine solve residual {rel:e} above {FINE_RESIDUAL_TOL:e}")));
    }
    Ok(PressureField(p))
}

/// Signed fluxes `Φ_e = |e| u_e`.
///
/// Interior faces carry the Darcy flux from `w1` into `w2`,
/// `Φ_e = t_e (p_w1 - p_w2) = -t_e [p]_e`. Dirichlet faces carry the outward
/// flux `Φ_e = t_e (p_w - g)`. Unlisted faces carry nothing.
#[derive(Clone, Debug, PartialEq)]
pub struct FluxField {
    pub interior: Vec<f64>,
    pub dirichlet: Vec<f64>,
}

/// Flux through an interior face in its stored orientation.
#[inline]
pub fn edge_flux(edge: &InteriorEdge, p: &[f64]) -> f64 {
    -edge.trans * edge.jump(p)
}

pub fn recover_flux(grid: &FineGrid, p: &[f64]) -> FluxField {
    FluxField {
        interior: grid.interior_edges.iter().map(|e| edge_flux(e, p)).collect(),
        dirichlet: grid.dirichlet_edges.iter().map(|d| d.trans * (p[d.cell] - d.value)).collect(),
    }
}

impl FluxField {
    /// Edge velocity dofs `u_e = κ̄_e |e| [p]_e` in the flux orientation.
    pub fn interior_velocity(&self, grid: &FineGrid) -> Vec<f64> {
        grid.interior_edges
            .iter()
            .zip(&self.interior)
            .map(|(e, phi)| phi / grid.face_length(e.axis))
            .collect()
    }

    pub fn dirichlet_velocity(&self, grid: &FineGrid) -> Vec<f64> {
        grid.dirichlet_edges
            .iter()
            .zip(&self.dirichlet)
            .map(|(d, phi)| phi / grid.side_length(d.side))
            .collect()
    }

    /// Net outward flux minus source, per cell.
    pub fn divergence_defect(&self, grid: &FineGrid, source: &[f64]) -> Vec<f64> {
        let mut out: Vec<f64> = source.iter().map(|s| -s).collect();
        for (e, phi) in grid.interior_edges.iter().zip(&self.interior) {
            out[e.w1] += phi;
            out[e.w2] -= phi;
        }
        for (d, phi) in grid.dirichlet_edges.iter().zip(&self.dirichlet) {
            out[d.cell] += phi;
        }
        out
    }
}

pub fn divergence_defect(grid: &FineGrid, flux: &FluxField, source: &[f64]) -> Vec<f64> {
    flux.divergence_defect(grid, source)
}

/// Writes a cell field as `i,j,value`, row-major, 17 significant digits.
pub fn write_cell_csv<W: Write>(grid: &FineGrid, values: &[f64], header: &[String], mut out: W) -> Result<()> {
    for h in header {
        writeln!(out, "# {h}")?;
    }
    writeln!(out, "i,j,value")?;
    for (w, &(i, j)) in grid.cells.iter().enumerate() {
        writeln!(out, "{i},{j},{:.16e}", values[w])?;
    }
    Ok(())
}

/// Writes fluxes as `i,j,face,value`: each interior face once as the east
/// (`E`) or north (`N`) face of its `w1` cell, Dirichlet faces by side.
pub fn write_flux_csv<W: Write>(grid: &FineGrid, flux: &FluxField, header: &[String], mut out: W) -> Result<()> {
    for h in header {
        writeln!(out, "# {h}")?;
    }
    writeln!(out, "i,j,face,value")?;
    let mut rows: Vec<(usize, usize, u8, f64)> = Vec::with_capacity(flux.interior.len() + flux.dirichlet.len());
    for (e, &phi) in grid.interior_edges.iter().zip(&flux.interior) {
        let (i, j) = grid.cells[e.w1];
        let face = match e.axis {
            crate::grid::Axis::X => b'E',
            crate::grid::Axis::Y => b'N',
        };
        rows.push((j, i, face, phi));
    }
    for (d, &phi) in grid.dirichlet_edges.iter().zip(&flux.dirichlet) {
        let (i, j) = grid.cells[d.cell];
        let face = match d.side {
            Side::Left => b'W',
            Side::Right => b'E',
            Side::Bottom => b'S',
            Side::Top => b'N',
        };
        rows.push((j, i, face, phi));
    }
    rows.sort_by(|a, b| (a.0, a.1, a.2).cmp(&(b.0, b.1, b.2)));
    for (j, i, face, phi) in rows {
        writeln!(out, "{i},{j},{},{phi:.16e}", face as char)?;
    }
    Ok(())
}
