//! Uniform rectangular grids of square cells.

use serde::{Deserialize, Serialize};

use crate::covariance::{Rect, Scale};
use crate::error::{Error, Result};
use crate::gp::TaggedPoints;

/// `n1 x n2` square cells covering `[origin, origin + extent]`. Cells are
/// numbered `i2 * n1 + i1`, with `i1` running along the first axis.
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct StructuredGrid {
    pub origin: [f64; 2],
    pub extent: [f64; 2],
    pub shape: [usize; 2],
}

impl StructuredGrid {
    pub fn new(origin: [f64; 2], extent: [f64; 2], shape: [usize; 2]) -> Result<Self> {
        let g = Self { origin, extent, shape };
        g.validate()?;
        Ok(g)
    }

    /// Grid on `domain` with `n1` cells along the first axis; the second
    /// count follows from the square-cell requirement.
    pub fn on(domain: &Rect, n1: usize) -> Result<Self> {
        let lx = domain.hi[0] - domain.lo[0];
        let ly = domain.hi[1] - domain.lo[1];
        let n2 = (n1 as f64 * ly / lx).round() as usize;
        Self::new(domain.lo, [lx, ly], [n1, n2])
    }

    pub fn validate(&self) -> Result<()> {
        let [lx, ly] = self.extent;
        let [n1, n2] = self.shape;
        if n1 == 0 || n2 == 0 {
            return Err(Error::Config(format!("grid shape must be positive, got {n1}x{n2}")));
        }
        if !(lx > 0.0 && ly > 0.0 && lx.is_finite() && ly.is_finite()) {
            return Err(Error::Config(format!("grid extent must be positive, got {lx}x{ly}")));
        }
        if self.origin.iter().any(|v| !v.is_finite()) {
            return Err(Error::Config("grid origin must be finite".into()));
        }
        let (d1, d2) = (lx / n1 as f64, ly / n2 as f64);
        if (d1 - d2).abs() > 1e-9 * d1.max(d2) {
            return Err(Error::Config(format!("grid cells are not square: {d1} x {d2}")));
        }
        Ok(())
    }

    /// Cell side.
    pub fn dx(&self) -> f64 {
        self.extent[0] / self.shape[0] as f64
    }

    pub fn cell_area(&self) -> f64 {
        let d = self.dx();
        d * d
    }

    pub fn len(&self) -> usize {
        self.shape[0] * self.shape[1]
    }

    pub fn is_empty(&self) -> bool {
        self.len() == 0
    }

    pub fn index(&self, i1: usize, i2: usize) -> usize {
        i2 * self.shape[0] + i1
    }

    pub fn cell(&self, idx: usize) -> (usize, usize) {
        (idx % self.shape[0], idx / self.shape[0])
    }

    pub fn centroid(&self, idx: usize) -> [f64; 2] {
        let (i1, i2) = self.cell(idx);
        let d = self.dx();
        [self.origin[0] + (i1 as f64 + 0.5) * d, self.origin[1] + (i2 as f64 + 0.5) * d]
    }

    /// Centroids in cell order, all tagged `scale`.
    pub fn centroids(&self, scale: Scale) -> TaggedPoints {
        let mut coords = Vec::with_capacity(2 * self.len());
        for idx in 0..self.len() {
            coords.extend_from_slice(&self.centroid(idx));
        }
        TaggedPoints::uniform(2, coords, scale).expect("grid coordinates are well formed")
    }

    pub fn domain(&self) -> Rect {
        Rect {
            lo: self.origin,
            hi: [self.origin[0] + self.extent[0], self.origin[1] + self.extent[1]],
        }
    }

    /// `min(Lx, Ly)`.
    pub fn length_scale(&self) -> f64 {
        self.extent[0].min(self.extent[1])
    }

    /// Cell containing `x`, if any.
    pub fn locate(&self, x: &[f64]) -> Option<usize> {
        let d = self.dx();
        let f1 = ((x[0] - self.origin[0]) / d).floor();
        let f2 = ((x[1] - self.origin[1]) / d).floor();
        if f1 < 0.0 || f2 < 0.0 {
            return None;
        }
        let (i1, i2) = (f1 as usize, f2 as usize);
        (i1 < self.shape[0] && i2 < self.shape[1]).then(|| self.index(i1, i2))
    }

    /// Cells in the row `i2` closest to the horizontal line at height `x2`.
    pub fn row_nearest(&self, x2: f64) -> Vec<usize> {
        let d = self.dx();
        let i2 = (((x2 - self.origin[1]) / d) - 0.5).round().clamp(0.0, (self.shape[1] - 1) as f64) as usize;
        (0..self.shape[0]).map(|i1| self.index(i1, i2)).collect()
    }

    /// Same grid geometry to within `1e-12` relative.
    pub fn same_as(&self, other: &StructuredGrid) -> bool {
        let close = |a: f64, b: f64| (a - b).abs() <= 1e-12 * a.abs().max(b.abs()).max(1.0);
        self.shape == other.shape
            && (0..2).all(|k| close(self.origin[k], other.origin[k]) && close(self.extent[k], other.extent[k]))
    }
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn square_cells_and_numbering() {
        let g = StructuredGrid::new([0.0, 0.0], [2.0, 1.0], [256, 128]).unwrap();
        assert_eq!(g.len(), 256 * 128);
        assert_eq!(g.dx(), 2.0 / 256.0);
        let idx = g.index(3, 5);
        assert_eq!(idx, 5 * 256 + 3);
        assert_eq!(g.cell(idx), (3, 5));
        let c = g.centroid(idx);
        assert!((c[0] - 3.5 * g.dx()).abs() < 1e-15 && (c[1] - 5.5 * g.dx()).abs() < 1e-15);
        assert_eq!(g.locate(&c), Some(idx));
        assert_eq!(g.locate(&[2.5, 0.5]), None);
        assert!(StructuredGrid::new([0.0, 0.0], [2.0, 1.0], [256, 100]).is_err());
        assert!(StructuredGrid::new([0.0, 0.0], [2.0, 1.0], [0, 100]).is_err());
    }

    #[test]
    fn profile_row() {
        let g = StructuredGrid::on(&Rect::new([0.0, 0.0], [2.0, 1.0]).unwrap(), 16).unwrap();
        assert_eq!(g.shape, [16, 8]);
        let row = g.row_nearest(0.5);
        assert_eq!(row.len(), 16);
        let y = g.centroid(row[0])[1];
        assert!((y - 0.5).abs() <= 0.5 * g.dx() + 1e-15);
    }
}
