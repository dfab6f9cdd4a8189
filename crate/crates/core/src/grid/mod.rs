//! Perforated Cartesian fine grids and their coarse partition.
//!
//! A fine cell is removed from the domain when all four of its corners lie
//! strictly inside the union of the perforation circles; every other cell is
//! kept as a full cell with its own permeability. Faces adjacent to removed
//! cells, and domain-boundary faces without Dirichlet data, are simply not
//! listed, which makes them no-flux faces.

mod io;
mod partition;
mod perforation;

pub use io::{load_grid, read_grid, save_grid, write_grid};
pub use partition::{build_partition, Block, CoarsePartition};
pub use perforation::{random_perforations, Circle, PerforationSpec};

use rand::SeedableRng;
use rand_chacha::ChaCha8Rng;
use rand_distr::{Distribution, StandardNormal, Uniform};

use crate::assembly::{boundary_transmissibility, interior_transmissibility};
use crate::error::{Error, Result};

#[derive(Clone, Copy, Debug, PartialEq, Eq, Hash, PartialOrd, Ord)]
pub enum Axis {
    X,
    Y,
}

#[derive(Clone, Copy, Debug, PartialEq, Eq, Hash)]
pub enum Side {
    Left,
    Right,
    Bottom,
    Top,
}

impl Side {
    pub const ALL: [Side; 4] = [Side::Left, Side::Right, Side::Bottom, Side::Top];

    pub fn name(self) -> &'static str {
        match self {
            Side::Left => "left",
            Side::Right => "right",
            Side::Bottom => "bottom",
            Side::Top => "top",
        }
    }
}

/// Dirichlet pressure per domain side; `None` means no-flux.
#[derive(Clone, Copy, Debug, PartialEq)]
pub struct BoundarySpec {
    pub left: Option<f64>,
    pub right: Option<f64>,
    pub bottom: Option<f64>,
    pub top: Option<f64>,
}

impl Default for BoundarySpec {
    /// Unit pressure drop from left to right, no-flux top and bottom.
    fn default() -> Self {
        BoundarySpec::pressure_drop(1.0, 0.0)
    }
}

impl BoundarySpec {
    pub fn pressure_drop(g_left: f64, g_right: f64) -> Self {
        BoundarySpec { left: Some(g_left), right: Some(g_right), bottom: None, top: None }
    }

    pub fn uniform(g: f64) -> Self {
        BoundarySpec { left: Some(g), right: Some(g), bottom: Some(g), top: Some(g) }
    }

    pub fn neumann() -> Self {
        BoundarySpec { left: None, right: None, bottom: None, top: None }
    }

    pub fn value(&self, side: Side) -> Option<f64> {
        match side {
            Side::Left => self.left,
            Side::Right => self.right,
            Side::Bottom => self.bottom,
            Side::Top => self.top,
        }
    }

    pub fn is_pure_neumann(&self) -> bool {
        Side::ALL.iter().all(|&s| self.value(s).is_none())
    }
}

/// Cell permeability field.
#[derive(Clone, Debug, PartialEq)]
pub enum PermeabilitySpec {
    Constant(f64),
    /// `ln κ` uniform in `[ln min, ln max]`, i.i.d. per cell.
    LogUniform { min: f64, max: f64, seed: u64 },
    /// `ln κ ~ N(mean_log, std_log²)`, i.i.d. per cell.
    LogNormal { mean_log: f64, std_log: f64, seed: u64 },
    /// Explicit values for all `nx * ny` cells, row-major (`j * nx + i`).
    PerCell(Vec<f64>),
}

impl PermeabilitySpec {
    /// One value per cell of the full `nx * ny` grid. Random fields draw in
    /// row-major order from a ChaCha8 stream, so removed cells still consume
    /// their draw and the field does not depend on the perforations.
    pub fn sample(&self, nx: usize, ny: usize) -> Result<Vec<f64>> {
        let n = nx * ny;
        let values = match self {
            PermeabilitySpec::Constant(k) => vec![*k; n],
            PermeabilitySpec::LogUniform { min, max, seed } => {
                if !(*min > 0.0 && min <= max) {
                    return Err(Error::Invalid(format!(
                        "log-uniform permeability needs 0 < min <= max, got [{min}, {max}]"
                    )));
                }
                let mut rng = ChaCha8Rng::seed_from_u64(*seed);
                let (lo, hi) = (min.ln(), max.ln());
                if lo == hi {
                    vec![*min; n]
                } else {
                    let dist = Uniform::new(lo, hi)
                        .map_err(|e| Error::Invalid(format!("log-uniform range: {e}")))?;
                    (0..n).map(|_| dist.sample(&mut rng).exp()).collect()
                }
            }
            PermeabilitySpec::LogNormal { mean_log, std_log, seed } => {
                if !(*std_log >= 0.0) || !mean_log.is_finite() {
                    return Err(Error::Invalid(format!(
                        "log-normal permeability needs finite mean and std >= 0, got ({mean_log}, {std_log})"
                    )));
                }
                let mut rng = ChaCha8Rng::seed_from_u64(*seed);
                (0..n)
                    .map(|_| {
                        let z: f64 = StandardNormal.sample(&mut rng);
                        (mean_log + std_log * z).exp()
                    })
                    .collect()
            }
            PermeabilitySpec::PerCell(v) => {
                if v.len() != n {
                    return Err(Error::Invalid(format!(
                        "per-cell permeability has {} values, grid has {n} cells",
                        v.len()
                    )));
                }
                v.clone()
            }
        };
        if let Some((idx, k)) = values.iter().enumerate().find(|(_, k)| !(**k > 0.0 && k.is_finite())) {
            return Err(Error::Invalid(format!(
                "permeability must be positive and finite, cell ({}, {}) has {k}",
                idx % nx,
                idx / nx
            )));
        }
        Ok(values)
    }
}

/// Fine-grid face shared by two active cells. `w1` is the left (X) or lower
/// (Y) cell; the jump across the face is `p[w2] - p[w1]`.
#[derive(Clone, Copy, Debug, PartialEq)]
pub struct InteriorEdge {
    pub w1: usize,
    pub w2: usize,
    pub axis: Axis,
    pub trans: f64,
}

impl InteriorEdge {
    #[inline]
    pub fn jump(&self, p: &[f64]) -> f64 {
        p[self.w2] - p[self.w1]
    }

    /// Same face with the orientation reversed.
    pub fn flipped(&self) -> Self {
        InteriorEdge { w1: self.w2, w2: self.w1, ..*self }
    }
}

/// Domain-boundary face of an active cell carrying a Dirichlet pressure.
#[derive(Clone, Copy, Debug, PartialEq)]
pub struct DirichletEdge {
    pub cell: usize,
    pub side: Side,
    pub value: f64,
    pub trans: f64,
}

#[derive(Clone, Copy, Debug, PartialEq)]
pub struct GridParams {
    pub nx: usize,
    pub ny: usize,
    pub lx: f64,
    pub ly: f64,
}

impl GridParams {
    pub fn new(nx: usize, ny: usize, lx: f64, ly: f64) -> Self {
        GridParams { nx, ny, lx, ly }
    }

    /// `nx * ny` unit cells.
    pub fn unit_cells(nx: usize, ny: usize) -> Self {
        GridParams { nx, ny, lx: nx as f64, ly: ny as f64 }
    }
}

#[derive(Clone, Debug)]
pub struct FineGrid {
    pub nx: usize,
    pub ny: usize,
    pub lx: f64,
    pub ly: f64,
    pub hx: f64,
    pub hy: f64,
    /// Active flag for each of the `nx * ny` cells, row-major.
    pub active: Vec<bool>,
    /// Row-major cell index to active cell id.
    cell_id: Vec<Option<usize>>,
    /// Active cell id to `(i, j)`.
    pub cells: Vec<(usize, usize)>,
    /// Permeability of every cell of the full grid, row-major.
    pub kappa_field: Vec<f64>,
    /// Permeability per active cell.
    pub kappa: Vec<f64>,
    pub interior_edges: Vec<InteriorEdge>,
    pub dirichlet_edges: Vec<DirichletEdge>,
    pub perforations: PerforationSpec,
    pub bc: BoundarySpec,
}

/// Builds the fine grid: active mask, permeability, and transmissibility
/// decorated edges.
pub fn build_grid(
    params: GridParams,
    perf: &PerforationSpec,
    field: &PermeabilitySpec,
    bc: BoundarySpec,
) -> Result<FineGrid> {
    validate_params(&params)?;
    let GridParams { nx, ny, lx, ly } = params;
    let hx = lx / nx as f64;
    let hy = ly / ny as f64;
    for c in &perf.circles {
        if !(c.r > 0.0) {
            return Err(Error::Invalid(format!("perforation radius must be positive, got {}", c.r)));
        }
    }
    let kappa_field = field.sample(nx, ny)?;
    let mut active = vec![true; nx * ny];
    if !perf.is_empty() {
        for j in 0..ny {
            for i in 0..nx {
                let x0 = i as f64 * hx;
                let y0 = j as f64 * hy;
                let x1 = (i + 1) as f64 * hx;
                let y1 = (j + 1) as f64 * hy;
                let removed = perf.covers(x0, y0)
                    && perf.covers(x1, y0)
                    && perf.covers(x0, y1)
                    && perf.covers(x1, y1);
                active[j * nx + i] = !removed;
            }
        }
    }
    FineGrid::from_mask(params, active, kappa_field, perf.clone(), bc)
}

fn validate_params(p: &GridParams) -> Result<()> {
    if p.nx == 0 || p.ny == 0 {
        return Err(Error::Invalid(format!("grid needs nx, ny >= 1, got {} x {}", p.nx, p.ny)));
    }
    if !(p.lx > 0.0 && p.ly > 0.0 && p.lx.is_finite() && p.ly.is_finite()) {
        return Err(Error::Invalid(format!("domain lengths must be positive, got {} x {}", p.lx, p.ly)));
    }
    Ok(())
}

impl FineGrid {
    /// Assembles a grid from an explicit active mask and full-grid permeability.
    pub fn from_mask(
        params: GridParams,
        active: Vec<bool>,
        kappa_field: Vec<f64>,
        perforations: PerforationSpec,
        bc: BoundarySpec,
    ) -> Result<FineGrid> {
        validate_params(&params)?;
        let GridParams { nx, ny, lx, ly } = params;
        if active.len() != nx * ny || kappa_field.len() != nx * ny {
            return Err(Error::Invalid("mask and permeability must cover every cell".into()));
        }
        if let Some(k) = kappa_field.iter().find(|k| !(**k > 0.0 && k.is_finite())) {
            return Err(Error::Invalid(format!("permeability must be positive and finite, got {k}")));
        }
        let hx = lx / nx as f64;
        let hy = ly / ny as f64;
        let vol = hx * hy;

        let mut cell_id = vec![None; nx * ny];
        let mut cells = Vec::new();
        let mut kappa = Vec::new();
        for j in 0..ny {
            for i in 0..nx {
                if active[j * nx + i] {
                    cell_id[j * nx + i] = Some(cells.len());
                    cells.push((i, j));
                    kappa.push(kappa_field[j * nx + i]);
                }
            }
        }
        if cells.is_empty() {
            return Err(Error::EmptyDomain);
        }

        let mut interior_edges = Vec::new();
        let mut dirichlet_edges = Vec::new();
        for (w, &(i, j)) in cells.iter().enumerate() {
            if i + 1 < nx {
                if let Some(v) = cell_id[j * nx + i + 1] {
                    let trans = interior_transmissibility(kappa[w], vol, kappa[v], vol, hy);
                    interior_edges.push(InteriorEdge { w1: w, w2: v, axis: Axis::X, trans });
                }
            }
            if j + 1 < ny {
                if let Some(v) = cell_id[(j + 1) * nx + i] {
                    let trans = interior_transmissibility(kappa[w], vol, kappa[v], vol, hx);
                    interior_edges.push(InteriorEdge { w1: w, w2: v, axis: Axis::Y, trans });
                }
            }
            let sides = [
                (Side::Left, i == 0, hy),
                (Side::Right, i + 1 == nx, hy),
                (Side::Bottom, j == 0, hx),
                (Side::Top, j + 1 == ny, hx),
            ];
            for (side, on_boundary, face) in sides {
                if !on_boundary {
                    continue;
                }
                if let Some(value) = bc.value(side) {
                    let trans = boundary_transmissibility(kappa[w], vol, face);
                    dirichlet_edges.push(DirichletEdge { cell: w, side, value, trans });
                }
            }
        }

        Ok(FineGrid {
            nx,
            ny,
            lx,
            ly,
            hx,
            hy,
            active,
            cell_id,
            cells,
            kappa_field,
            kappa,
            interior_edges,
            dirichlet_edges,
            perforations,
            bc,
        })
    }

    pub fn params(&self) -> GridParams {
        GridParams { nx: self.nx, ny: self.ny, lx: self.lx, ly: self.ly }
    }

    pub fn num_cells(&self) -> usize {
        self.cells.len()
    }

    pub fn cell_volume(&self) -> f64 {
        self.hx * self.hy
    }

    pub fn cell_id(&self, i: usize, j: usize) -> Option<usize> {
        if i < self.nx && j < self.ny {
            self.cell_id[j * self.nx + i]
        } else {
            None
        }
    }

    pub fn cell_center(&self, w: usize) -> (f64, f64) {
        let (i, j) = self.cells[w];
        ((i as f64 + 0.5) * self.hx, (j as f64 + 0.5) * self.hy)
    }

    pub fn face_length(&self, axis: Axis) -> f64 {
        match axis {
            Axis::X => self.hy,
            Axis::Y => self.hx,
        }
    }

    pub fn side_length(&self, side: Side) -> f64 {
        match side {
            Side::Left | Side::Right => self.hy,
            Side::Bottom | Side::Top => self.hx,
        }
    }

    /// Connected components of the active-cell graph; returns the component
    /// index of every cell and the component count. Components are numbered
    /// in order of their smallest cell id.
    pub fn components(&self) -> (Vec<usize>, usize) {
        let edges: Vec<(usize, usize)> = self.interior_edges.iter().map(|e| (e.w1, e.w2)).collect();
        connected_components(self.num_cells(), &edges)
    }
}

/// Labels connected components of an undirected graph on `n` nodes.
/// Labels follow the order of each component's smallest node.
pub(crate) fn connected_components(n: usize, edges: &[(usize, usize)]) -> (Vec<usize>, usize) {
    let mut parent: Vec<usize> = (0..n).collect();
    fn find(parent: &mut [usize], mut x: usize) -> usize {
        while parent[x] != x {
            parent[x] = parent[parent[x]];
            x = parent[x];
        }
        x
    }
    for &(a, b) in edges {
        let ra = find(&mut parent, a);
        let rb = find(&mut parent, b);
        if ra != rb {
            let (lo, hi) = if ra < rb { (ra, rb) } else { (rb, ra) };
            parent[hi] = lo;
        }
    }
    let mut label = vec![usize::MAX; n];
    let mut count = 0;
    let mut comp = vec![0; n];
    for x in 0..n {
        let r = find(&mut parent, x);
        if label[r] == usize::MAX {
            label[r] = count;
            count += 1;
        }
        comp[x] = label[r];
    }
    (comp, count)
}

#[cfg(test)]
mod tests {
    use super::*;

    fn unit(nx: usize, ny: usize) -> GridParams {
        GridParams::new(nx, ny, 1.0, 1.0)
    }

    #[test]
    fn central_circle_removes_four_cells() {
        let perf = PerforationSpec::from_circles(vec![Circle::new(0.5, 0.5, 0.4)]);
        let g = build_grid(unit(4, 4), &perf, &PermeabilitySpec::Constant(1.0), BoundarySpec::default()).unwrap();
        assert_eq!(g.num_cells(), 12);
        for (i, j) in [(1, 1), (1, 2), (2, 1), (2, 2)] {
            assert!(!g.active[j * 4 + i]);
            assert_eq!(g.cell_id(i, j), None);
        }
    }

    #[test]
    fn smaller_circle_removes_nothing() {
        let perf = PerforationSpec::from_circles(vec![Circle::new(0.5, 0.5, 0.3)]);
        let g = build_grid(unit(4, 4), &perf, &PermeabilitySpec::Constant(1.0), BoundarySpec::default()).unwrap();
        assert_eq!(g.num_cells(), 16);
    }

    #[test]
    fn full_two_by_two_connectivity() {
        let g = build_grid(unit(2, 2), &PerforationSpec::none(), &PermeabilitySpec::Constant(1.0), BoundarySpec::default())
            .unwrap();
        assert_eq!(g.num_cells(), 4);
        assert_eq!(g.interior_edges.len(), 4);
        // left and right sides, two cells each
        assert_eq!(g.dirichlet_edges.len(), 4);
        for e in &g.interior_edges {
            assert_ne!(e.w1, e.w2);
            assert!(e.trans > 0.0);
        }
    }

    #[test]
    fn overlapping_circles_cover_the_union() {
        // neither circle alone covers the cell [0.25,0.5]x[0.25,0.5], together they do
        let perf = PerforationSpec::from_circles(vec![Circle::new(0.25, 0.375, 0.2), Circle::new(0.5, 0.375, 0.2)]);
        let g = build_grid(unit(4, 4), &perf, &PermeabilitySpec::Constant(1.0), BoundarySpec::default()).unwrap();
        assert!(!g.active[4 + 1]);
        let single = PerforationSpec::from_circles(vec![Circle::new(0.25, 0.375, 0.2)]);
        let g1 = build_grid(unit(4, 4), &single, &PermeabilitySpec::Constant(1.0), BoundarySpec::default()).unwrap();
        assert!(g1.active[4 + 1]);
    }

    #[test]
    fn everything_removed_is_an_error() {
        let perf = PerforationSpec::from_circles(vec![Circle::new(0.5, 0.5, 2.0)]);
        let err = build_grid(unit(4, 4), &perf, &PermeabilitySpec::Constant(1.0), BoundarySpec::default()).unwrap_err();
        assert!(matches!(err, Error::EmptyDomain));
    }

    #[test]
    fn non_positive_permeability_is_rejected() {
        for spec in [
            PermeabilitySpec::Constant(0.0),
            PermeabilitySpec::Constant(-1.0),
            PermeabilitySpec::LogUniform { min: 0.0, max: 1.0, seed: 1 },
        ] {
            let err = build_grid(unit(2, 2), &PerforationSpec::none(), &spec, BoundarySpec::default()).unwrap_err();
            assert!(matches!(err, Error::Invalid(_)), "{spec:?}");
        }
    }

    #[test]
    fn degenerate_params_rejected() {
        let k = PermeabilitySpec::Constant(1.0);
        assert!(build_grid(GridParams::new(0, 3, 1.0, 1.0), &PerforationSpec::none(), &k, BoundarySpec::default()).is_err());
        assert!(build_grid(GridParams::new(3, 3, 0.0, 1.0), &PerforationSpec::none(), &k, BoundarySpec::default()).is_err());
    }

    #[test]
    fn random_fields_are_reproducible_and_positive() {
        let s = PermeabilitySpec::LogNormal { mean_log: 0.0, std_log: 1.0, seed: 9 };
        let a = s.sample(10, 7).unwrap();
        let b = s.sample(10, 7).unwrap();
        assert_eq!(a, b);
        assert!(a.iter().all(|k| *k > 0.0));
        let u = PermeabilitySpec::LogUniform { min: 0.1, max: 10.0, seed: 9 }.sample(10, 7).unwrap();
        assert!(u.iter().all(|k| (0.1..=10.0).contains(k)));
    }

    #[test]
    fn dirichlet_edges_only_on_configured_sides() {
        let g = build_grid(unit(3, 2), &PerforationSpec::none(), &PermeabilitySpec::Constant(1.0), BoundarySpec::default())
            .unwrap();
        assert!(g.dirichlet_edges.iter().all(|d| matches!(d.side, Side::Left | Side::Right)));
        let left: Vec<_> = g.dirichlet_edges.iter().filter(|d| d.side == Side::Left).collect();
        assert_eq!(left.len(), 2);
        assert!(left.iter().all(|d| d.value == 1.0));
        let n = build_grid(unit(3, 2), &PerforationSpec::none(), &PermeabilitySpec::Constant(1.0), BoundarySpec::neumann())
            .unwrap();
        assert!(n.dirichlet_edges.is_empty());
    }

    #[test]
    fn components_split_by_a_wall() {
        // remove the middle column of a 3x3 grid
        let mut active = vec![true; 9];
        for j in 0..3 {
            active[j * 3 + 1] = false;
        }
        let g = FineGrid::from_mask(unit(3, 3), active, vec![1.0; 9], PerforationSpec::none(), BoundarySpec::default())
            .unwrap();
        let (comp, count) = g.components();
        assert_eq!(count, 2);
        assert_eq!(comp[g.cell_id(0, 0).unwrap()], 0);
        assert_eq!(comp[g.cell_id(2, 2).unwrap()], 1);
    }
}
