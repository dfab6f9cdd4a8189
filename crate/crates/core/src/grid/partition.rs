use super::FineGrid;
use crate::error::{Error, Result};

/// A coarse block: an axis-aligned group of fine cells.
#[derive(Clone, Debug)]
pub struct Block {
    pub id: usize,
    /// Coarse coordinates `(bi, bj)` before compaction.
    pub coarse: (usize, usize),
    /// Active cell ids in ascending order.
    pub cells: Vec<usize>,
    /// Interior edges (indices into `FineGrid::interior_edges`) with both cells in the block.
    pub interior_edges: Vec<usize>,
    /// Interior edges with exactly one cell in the block.
    pub coupling_edges: Vec<usize>,
    /// Dirichlet edges (indices into `FineGrid::dirichlet_edges`) of block cells.
    pub dirichlet_edges: Vec<usize>,
}

impl Block {
    pub fn len(&self) -> usize {
        self.cells.len()
    }

    pub fn is_empty(&self) -> bool {
        self.cells.is_empty()
    }
}

#[derive(Clone, Debug)]
pub struct CoarsePartition {
    pub cx: usize,
    pub cy: usize,
    pub blocks: Vec<Block>,
    /// Block id of every active cell.
    pub block_of: Vec<usize>,
    /// Position of every active cell inside its block's `cells`.
    pub local_index: Vec<usize>,
}

impl CoarsePartition {
    pub fn num_blocks(&self) -> usize {
        self.blocks.len()
    }

    pub fn max_block_size(&self) -> usize {
        self.blocks.iter().map(Block::len).max().unwrap_or(0)
    }

    /// Restricts a global cell vector to block `b`.
    pub fn restrict(&self, b: usize, v: &[f64]) -> Vec<f64> {
        self.blocks[b].cells.iter().map(|&w| v[w]).collect()
    }
}

/// Groups fine cell `(i, j)` into block `(i / cx, j / cy)`, drops empty
/// blocks, and numbers the rest row-major.
pub fn build_partition(grid: &FineGrid, cx: usize, cy: usize) -> Result<CoarsePartition> {
    if cx == 0 || cy == 0 || cx > grid.nx || cy > grid.ny {
        return Err(Error::Invalid(format!(
            "coarse factors must satisfy 1 <= cx <= {} and 1 <= cy <= {}, got ({cx}, {cy})",
            grid.nx, grid.ny
        )));
    }
    let nbx = grid.nx.div_ceil(cx);
    let nby = grid.ny.div_ceil(cy);
    let mut raw: Vec<Vec<usize>> = vec![Vec::new(); nbx * nby];
    for (w, &(i, j)) in grid.cells.iter().enumerate() {
        raw[(j / cy) * nbx + i / cx].push(w);
    }

    let n = grid.num_cells();
    let mut block_of = vec![0; n];
    let mut local_index = vec![0; n];
    let mut blocks = Vec::new();
    for (slot, cells) in raw.into_iter().enumerate() {
        if cells.is_empty() {
            continue;
        }
        let id = blocks.len();
        for (k, &w) in cells.iter().enumerate() {
            block_of[w] = id;
            local_index[w] = k;
        }
        blocks.push(Block {
            id,
            coarse: (slot % nbx, slot / nbx),
            cells,
            interior_edges: Vec::new(),
            coupling_edges: Vec::new(),
            dirichlet_edges: Vec::new(),
        });
    }

    for (e, edge) in grid.interior_edges.iter().enumerate() {
        let (b1, b2) = (block_of[edge.w1], block_of[edge.w2]);
        if b1 == b2 {
            blocks[b1].interior_edges.push(e);
        } else {
            blocks[b1].coupling_edges.push(e);
            blocks[b2].coupling_edges.push(e);
        }
    }
    for (d, edge) in grid.dirichlet_edges.iter().enumerate() {
        blocks[block_of[edge.cell]].dirichlet_edges.push(d);
    }

    Ok(CoarsePartition { cx, cy, blocks, block_of, local_index })
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::grid::{build_grid, BoundarySpec, Circle, GridParams, PerforationSpec, PermeabilitySpec};

    fn full(n: usize) -> FineGrid {
        build_grid(
            GridParams::new(n, n, 1.0, 1.0),
            &PerforationSpec::none(),
            &PermeabilitySpec::Constant(1.0),
            BoundarySpec::default(),
        )
        .unwrap()
    }

    #[test]
    fn four_blocks_of_four() {
        let g = full(4);
        let p = build_partition(&g, 2, 2).unwrap();
        assert_eq!(p.num_blocks(), 4);
        for b in &p.blocks {
            assert_eq!(b.len(), 4);
            assert_eq!(b.interior_edges.len(), 4);
        }
        // 24 interior edges total: 4 blocks x 4 inside, 8 between blocks
        let coupling: usize = p.blocks.iter().map(|b| b.coupling_edges.len()).sum();
        assert_eq!(coupling, 16);
    }

    #[test]
    fn single_block_couples_only_through_dirichlet() {
        let g = full(4);
        let p = build_partition(&g, 4, 4).unwrap();
        assert_eq!(p.num_blocks(), 1);
        assert!(p.blocks[0].coupling_edges.is_empty());
        assert_eq!(p.blocks[0].dirichlet_edges.len(), g.dirichlet_edges.len());
    }

    #[test]
    fn perforated_blocks_keep_three_cells() {
        let perf = PerforationSpec::from_circles(vec![Circle::new(0.5, 0.5, 0.4)]);
        let g = build_grid(GridParams::new(4, 4, 1.0, 1.0), &perf, &PermeabilitySpec::Constant(1.0), BoundarySpec::default())
            .unwrap();
        let p = build_partition(&g, 2, 2).unwrap();
        assert_eq!(p.num_blocks(), 4);
        assert!(p.blocks.iter().all(|b| b.len() == 3));
    }

    #[test]
    fn empty_blocks_are_dropped_and_ids_compacted() {
        // remove the whole lower-left 2x2 block
        let mut active = vec![true; 16];
        for j in 0..2 {
            for i in 0..2 {
                active[j * 4 + i] = false;
            }
        }
        let g = FineGrid::from_mask(GridParams::new(4, 4, 1.0, 1.0), active, vec![1.0; 16], PerforationSpec::none(), BoundarySpec::default())
            .unwrap();
        let p = build_partition(&g, 2, 2).unwrap();
        assert_eq!(p.num_blocks(), 3);
        for (k, b) in p.blocks.iter().enumerate() {
            assert_eq!(b.id, k);
        }
        assert_eq!(p.blocks[0].coarse, (1, 0));
    }

    #[test]
    fn ragged_factors_cover_everything() {
        let g = full(5);
        let p = build_partition(&g, 2, 3).unwrap();
        let total: usize = p.blocks.iter().map(Block::len).sum();
        assert_eq!(total, g.num_cells());
        assert_eq!(p.num_blocks(), 3 * 2);
    }

    #[test]
    fn bad_factors_rejected() {
        let g = full(4);
        assert!(build_partition(&g, 0, 2).is_err());
        assert!(build_partition(&g, 5, 2).is_err());
    }
}
