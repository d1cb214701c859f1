use std::ops::Range;

use serde::Serialize;

use crate::mech::{BucketGrid, TransitionKernel};
use crate::Side;

/// Bucket transition probabilities for the mixture of honest and poison
/// reports.
///
/// Columns `0..d` hold the honest-user kernel; the remaining columns are
/// poison buckets, each a unit vector on one output bucket of the poisoned
/// side.
#[derive(Clone, Debug, Serialize)]
pub struct TransformMatrix {
    grid: BucketGrid,
    side: Side,
    /// Row-major `d_out × d` honest block.
    normal: Vec<f64>,
    poison_rows: Range<usize>,
}

impl TransformMatrix {
    pub fn grid(&self) -> &BucketGrid {
        &self.grid
    }

    pub fn side(&self) -> Side {
        self.side
    }

    pub fn d(&self) -> usize {
        self.grid.d()
    }

    pub fn d_out(&self) -> usize {
        self.grid.d_out()
    }

    /// Output buckets that double as poison buckets.
    pub fn poison_rows(&self) -> Range<usize> {
        self.poison_rows.clone()
    }

    pub fn poison_len(&self) -> usize {
        self.poison_rows.len()
    }

    pub fn columns(&self) -> usize {
        self.d() + self.poison_len()
    }

    /// Honest-block row for output bucket `i`.
    pub fn normal_row(&self, i: usize) -> &[f64] {
        let d = self.d();
        &self.normal[i * d..(i + 1) * d]
    }

    /// Full-matrix entry; column `d + j` is poison bucket `j`.
    pub fn entry(&self, row: usize, col: usize) -> f64 {
        let d = self.d();
        if col < d {
            self.normal[row * d + col]
        } else if self.poison_rows.start + (col - d) == row {
            1.0
        } else {
            0.0
        }
    }

    pub fn column_sum(&self, col: usize) -> f64 {
        (0..self.d_out()).map(|i| self.entry(i, col)).sum()
    }
}

/// Transform matrix with the poisoned side's half of the output buckets as
/// poison buckets.
pub fn build_transform(grid: &BucketGrid, side: Side) -> TransformMatrix {
    build_transform_split(grid, side, grid.d_out() / 2)
}

/// Transform matrix split at output edge `split`: `Right` uses buckets
/// `split..d_out`, `Left` uses `0..split`.
pub fn build_transform_split(grid: &BucketGrid, side: Side, split: usize) -> TransformMatrix {
    let (d, d_out) = (grid.d(), grid.d_out());
    let split = split.min(d_out);
    let kernel = TransitionKernel::new(grid);
    let mut normal = vec![0.0; d_out * d];
    for i in 0..d_out {
        for k in 0..d {
            normal[i * d + k] = kernel.prob(k, i);
        }
    }
    let poison_rows = match side {
        Side::Right => split..d_out,
        Side::Left => 0..split,
    };
    TransformMatrix {
        grid: *grid,
        side,
        normal,
        poison_rows,
    }
}

/// Split edge for a pessimistic reference `o_prime`: the output bucket edge
/// nearest to it.
pub fn split_at(grid: &BucketGrid, o_prime: f64) -> usize {
    grid.nearest_output_edge(o_prime)
}
