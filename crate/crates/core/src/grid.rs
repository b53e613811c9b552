//! Square grid of cells laid over projected coordinates.

use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};

pub const DEFAULT_CELL_SIZE: f64 = 500.0;

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct GridSpec {
    pub origin_x: f64,
    pub origin_y: f64,
    pub cell_size: f64,
    pub n_rows: usize,
    pub n_cols: usize,
}

impl GridSpec {
    pub fn new(origin_x: f64, origin_y: f64, cell_size: f64, n_rows: usize, n_cols: usize) -> Result<Self> {
        let grid = GridSpec {
            origin_x,
            origin_y,
            cell_size,
            n_rows,
            n_cols,
        };
        grid.validate()?;
        Ok(grid)
    }

    pub fn validate(&self) -> Result<()> {
        if !(self.cell_size > 0.0 && self.cell_size.is_finite()) {
            return Err(Error::InvalidGrid(format!("cell size {} must be positive", self.cell_size)));
        }
        if self.n_rows == 0 || self.n_cols == 0 {
            return Err(Error::InvalidGrid(format!(
                "grid needs at least one row and column, got {}x{}",
                self.n_rows, self.n_cols
            )));
        }
        if !self.origin_x.is_finite() || !self.origin_y.is_finite() {
            return Err(Error::InvalidGrid("origin must be finite".into()));
        }
        Ok(())
    }

    pub fn n_cells(&self) -> usize {
        self.n_rows * self.n_cols
    }

    pub fn cell_index(&self, row: usize, col: usize) -> usize {
        row * self.n_cols + col
    }

    pub fn row_col(&self, cell: usize) -> (usize, usize) {
        (cell / self.n_cols, cell % self.n_cols)
    }

    pub fn max_x(&self) -> f64 {
        self.origin_x + self.cell_size * self.n_cols as f64
    }

    pub fn max_y(&self) -> f64 {
        self.origin_y + self.cell_size * self.n_rows as f64
    }

    /// Row-major cell containing `(x, y)`.
    ///
    /// Points on an interior boundary belong to the higher-index cell; points
    /// on the outer maximum edge belong to the last row/column.
    pub fn assign_cell(&self, x: f64, y: f64) -> Result<usize> {
        if !x.is_finite() || !y.is_finite() || x < self.origin_x || y < self.origin_y || x > self.max_x() || y > self.max_y() {
            return Err(Error::OutOfBounds { x, y });
        }
        let col = (((x - self.origin_x) / self.cell_size).floor() as usize).min(self.n_cols - 1);
        let row = (((y - self.origin_y) / self.cell_size).floor() as usize).min(self.n_rows - 1);
        Ok(self.cell_index(row, col))
    }

    pub fn cell_center(&self, cell: usize) -> (f64, f64) {
        let (row, col) = self.row_col(cell);
        (
            self.origin_x + (col as f64 + 0.5) * self.cell_size,
            self.origin_y + (row as f64 + 0.5) * self.cell_size,
        )
    }

    /// Closed ring of the cell's corners, counter-clockwise from the lower-left.
    pub fn cell_polygon(&self, cell: usize) -> [[f64; 2]; 5] {
        let (row, col) = self.row_col(cell);
        let x0 = self.origin_x + col as f64 * self.cell_size;
        let y0 = self.origin_y + row as f64 * self.cell_size;
        let x1 = x0 + self.cell_size;
        let y1 = y0 + self.cell_size;
        [[x0, y0], [x1, y0], [x1, y1], [x0, y1], [x0, y0]]
    }

    /// Chebyshev distance in cell units.
    pub fn chebyshev(&self, a: usize, b: usize) -> usize {
        let (ra, ca) = self.row_col(a);
        let (rb, cb) = self.row_col(b);
        ra.abs_diff(rb).max(ca.abs_diff(cb))
    }

    /// Moore (8-neighbourhood) adjacency of two distinct cells.
    pub fn is_moore_neighbor(&self, a: usize, b: usize) -> bool {
        a != b && self.chebyshev(a, b) <= 1
    }

    pub fn center_distance(&self, a: usize, b: usize) -> f64 {
        let (xa, ya) = self.cell_center(a);
        let (xb, yb) = self.cell_center(b);
        (xa - xb).hypot(ya - yb)
    }
}

#[cfg(test)]
mod tests {
    use super::*;
    use rand::{Rng, SeedableRng};
    use rand_chacha::ChaCha8Rng;

    fn grid(rows: usize, cols: usize) -> GridSpec {
        GridSpec::new(0.0, 0.0, 500.0, rows, cols).unwrap()
    }

    #[test]
    fn first_cell() {
        assert_eq!(grid(2, 2).assign_cell(10.0, 10.0).unwrap(), 0);
    }

    #[test]
    fn interior_boundary_goes_to_higher_cell() {
        assert_eq!(grid(1, 2).assign_cell(500.0, 0.0).unwrap(), 1);
        assert_eq!(grid(2, 1).assign_cell(0.0, 500.0).unwrap(), 1);
    }

    #[test]
    fn outer_edge_goes_to_last_cell() {
        let g = grid(2, 3);
        assert_eq!(g.assign_cell(1500.0, 1000.0).unwrap(), 5);
    }

    #[test]
    fn out_of_bounds_carries_point() {
        match grid(2, 2).assign_cell(-1.0, 3.0) {
            Err(Error::OutOfBounds { x, y }) => assert_eq!((x, y), (-1.0, 3.0)),
            other => panic!("unexpected {other:?}"),
        }
        assert!(grid(2, 2).assign_cell(0.0, 1000.1).is_err());
        assert!(grid(2, 2).assign_cell(f64::NAN, 1.0).is_err());
    }

    #[test]
    fn random_points_match_floor_division() {
        let g = GridSpec::new(1234.5, -300.0, 250.0, 7, 11).unwrap();
        let mut rng = ChaCha8Rng::seed_from_u64(7);
        for _ in 0..1000 {
            let x = rng.random_range(g.origin_x..g.max_x());
            let y = rng.random_range(g.origin_y..g.max_y());
            let row = ((y - g.origin_y) / g.cell_size).floor() as usize;
            let col = ((x - g.origin_x) / g.cell_size).floor() as usize;
            assert_eq!(g.assign_cell(x, y).unwrap(), row * g.n_cols + col);
        }
    }

    #[test]
    fn rejects_bad_specs() {
        assert!(GridSpec::new(0.0, 0.0, 0.0, 1, 1).is_err());
        assert!(GridSpec::new(0.0, 0.0, 500.0, 0, 1).is_err());
        assert!(GridSpec::new(0.0, 0.0, -1.0, 1, 1).is_err());
    }

    #[test]
    fn moore_neighbourhood() {
        let g = grid(5, 5);
        let c = g.cell_index(2, 2);
        let n = (0..25).filter(|&o| g.is_moore_neighbor(c, o)).count();
        assert_eq!(n, 8);
        assert!(!g.is_moore_neighbor(c, c));
        assert_eq!(g.chebyshev(g.cell_index(0, 0), g.cell_index(0, 3)), 3);
    }
}
