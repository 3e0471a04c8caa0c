//! Query grids for density evaluation and quadrature.

use crate::error::{Error, Result};
use crate::partition_tree::Region;

/// A set of query points stored row-major. Regular grids carry their cell
/// volume and tensor grids per-cell weights, so that weighted sums act as
/// midpoint-rule integrals.
#[derive(Debug, Clone, PartialEq)]
pub struct Grid {
    dim: usize,
    values: Vec<f64>,
    cell_volume: Option<f64>,
    weights: Option<Vec<f64>>,
    shape: Vec<usize>,
}

impl Grid {
    /// Cell midpoints of a regular `cells^d` grid over `bounds`, with the
    /// last coordinate varying fastest.
    pub fn regular(bounds: &Region, cells: usize) -> Self {
        let d = bounds.dim();
        let axes: Vec<Vec<f64>> = (0..d)
            .map(|j| {
                let w = bounds.width(j) / cells as f64;
                (0..cells)
                    .map(|i| bounds.lower[j] + (i as f64 + 0.5) * w)
                    .collect()
            })
            .collect();
        let total = cells.pow(d as u32);
        let mut values = Vec::with_capacity(total * d);
        let mut counter = vec![0usize; d];
        for _ in 0..total {
            for j in 0..d {
                values.push(axes[j][counter[j]]);
            }
            for j in (0..d).rev() {
                counter[j] += 1;
                if counter[j] < cells {
                    break;
                }
                counter[j] = 0;
            }
        }
        Self {
            dim: d,
            values,
            cell_volume: Some(bounds.volume() / total as f64),
            weights: None,
            shape: vec![cells; d],
        }
    }

    /// Cell midpoints of the tensor product of per-axis cell edges, weighted
    /// by cell volume. Edges must be ascending.
    pub fn tensor(edges: &[Vec<f64>]) -> Result<Self> {
        let d = edges.len();
        if edges.iter().any(|e| e.len() < 2 || e.windows(2).any(|w| !(w[0] < w[1]))) {
            return Err(Error::GridMismatch(
                "tensor grid edges must be strictly ascending with two or more entries".into(),
            ));
        }
        let shape: Vec<usize> = edges.iter().map(|e| e.len() - 1).collect();
        let total: usize = shape.iter().product();
        let mut values = Vec::with_capacity(total * d);
        let mut weights = Vec::with_capacity(total);
        let mut counter = vec![0usize; d];
        for _ in 0..total {
            let mut w = 1.0;
            for j in 0..d {
                let (a, b) = (edges[j][counter[j]], edges[j][counter[j] + 1]);
                values.push(0.5 * (a + b));
                w *= b - a;
            }
            weights.push(w);
            for j in (0..d).rev() {
                counter[j] += 1;
                if counter[j] < shape[j] {
                    break;
                }
                counter[j] = 0;
            }
        }
        Ok(Self {
            dim: d,
            values,
            cell_volume: None,
            weights: Some(weights),
            shape,
        })
    }

    /// A regular `cells^d` grid whose axes are further split at `extra`
    /// coordinates. With the cut points of a piecewise-constant density as
    /// extras, the midpoint rule integrates that density exactly.
    pub fn refined(bounds: &Region, cells: usize, extra: &[Vec<f64>]) -> Result<Self> {
        let edges: Vec<Vec<f64>> = (0..bounds.dim())
            .map(|j| {
                let (lo, hi) = (bounds.lower[j], bounds.upper[j]);
                let mut e: Vec<f64> = (0..=cells)
                    .map(|i| lo + (hi - lo) * i as f64 / cells as f64)
                    .chain(extra.get(j).into_iter().flatten().copied())
                    .filter(|v| *v >= lo && *v <= hi)
                    .collect();
                e.sort_by(f64::total_cmp);
                e.dedup();
                e
            })
            .collect();
        Self::tensor(&edges)
    }

    /// Arbitrary query points; no quadrature weights.
    pub fn from_points(dim: usize, points: &[Vec<f64>]) -> Result<Self> {
        let mut values = Vec::with_capacity(points.len() * dim);
        for p in points {
            if p.len() != dim {
                return Err(Error::DimensionMismatch {
                    expected: dim,
                    got: p.len(),
                });
            }
            values.extend_from_slice(p);
        }
        Ok(Self {
            dim,
            values,
            cell_volume: None,
            weights: None,
            shape: vec![points.len()],
        })
    }

    pub fn dim(&self) -> usize {
        self.dim
    }

    pub fn len(&self) -> usize {
        self.values.len() / self.dim
    }

    pub fn is_empty(&self) -> bool {
        self.values.is_empty()
    }

    pub fn point(&self, i: usize) -> &[f64] {
        &self.values[i * self.dim..(i + 1) * self.dim]
    }

    pub fn points(&self) -> impl Iterator<Item = &[f64]> {
        self.values.chunks_exact(self.dim)
    }

    pub fn cell_volume(&self) -> Option<f64> {
        self.cell_volume
    }

    pub fn shape(&self) -> &[usize] {
        &self.shape
    }

    /// Per-cell quadrature weights of a tensor grid.
    pub fn weights(&self) -> Option<&[f64]> {
        self.weights.as_deref()
    }

    /// Midpoint-rule integral of `values` over the grid.
    pub fn integrate(&self, values: &[f64]) -> Result<f64> {
        if values.len() != self.len() {
            return Err(Error::GridMismatch(format!(
                "{} values for {} grid points",
                values.len(),
                self.len()
            )));
        }
        match (&self.weights, self.cell_volume) {
            (Some(w), _) => Ok(values.iter().zip(w).map(|(v, w)| v * w).sum()),
            (None, Some(vol)) => Ok(values.iter().sum::<f64>() * vol),
            (None, None) => Err(Error::GridMismatch("grid has no quadrature weights".into())),
        }
    }
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn regular_grid_layout() {
        let g = Grid::regular(&Region::unit(2), 4);
        assert_eq!(g.len(), 16);
        assert_eq!(g.point(0), &[0.125, 0.125]);
        assert_eq!(g.point(1), &[0.125, 0.375]);
        assert_eq!(g.point(4), &[0.375, 0.125]);
        assert!((g.cell_volume().unwrap() - 1.0 / 16.0).abs() < 1e-15);
        let ones = vec![1.0; 16];
        assert!((g.integrate(&ones).unwrap() - 1.0).abs() < 1e-15);
    }

    #[test]
    fn refined_grid_integrates_steps_exactly() {
        let g = Grid::refined(&Region::unit(1), 4, &[vec![0.3, 0.5]]).unwrap();
        assert_eq!(g.len(), 5);
        let step: Vec<f64> = g.points().map(|x| if x[0] <= 0.3 { 2.0 } else { 4.0 / 7.0 }).collect();
        assert!((g.integrate(&step).unwrap() - 1.0).abs() < 1e-15);
    }
}
