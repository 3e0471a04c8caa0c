use std::io::BufRead;

use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};

/// Axis-aligned rectangle `[lower, upper]`.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct Region {
    pub lower: Vec<f64>,
    pub upper: Vec<f64>,
}

impl Region {
    pub fn new(lower: Vec<f64>, upper: Vec<f64>) -> Result<Self> {
        if lower.is_empty() || lower.len() != upper.len() {
            return Err(Error::EmptyDomain(format!(
                "bounds have {} lower and {} upper coordinates",
                lower.len(),
                upper.len()
            )));
        }
        for (j, (lo, hi)) in lower.iter().zip(&upper).enumerate() {
            if !(lo.is_finite() && hi.is_finite() && lo < hi) {
                return Err(Error::EmptyDomain(format!(
                    "dimension {j} has bounds [{lo}, {hi}]"
                )));
            }
        }
        Ok(Self { lower, upper })
    }

    /// The unit cube `[0, 1]^d`.
    pub fn unit(d: usize) -> Self {
        Self {
            lower: vec![0.0; d],
            upper: vec![1.0; d],
        }
    }

    pub fn dim(&self) -> usize {
        self.lower.len()
    }

    pub fn contains(&self, x: &[f64]) -> bool {
        x.len() == self.dim()
            && x
                .iter()
                .zip(self.lower.iter().zip(&self.upper))
                .all(|(v, (lo, hi))| *lo <= *v && *v <= *hi)
    }

    pub fn width(&self, j: usize) -> f64 {
        self.upper[j] - self.lower[j]
    }

    pub fn volume(&self) -> f64 {
        (0..self.dim()).map(|j| self.width(j)).product()
    }

    pub fn midpoint(&self, j: usize) -> f64 {
        0.5 * (self.lower[j] + self.upper[j])
    }

    /// True when `cut` lies strictly inside the extent on dimension `j`.
    pub fn is_interior_cut(&self, j: usize, cut: f64) -> bool {
        self.lower[j] < cut && cut < self.upper[j]
    }

    pub fn split(&self, j: usize, cut: f64) -> (Region, Region) {
        let mut left = self.clone();
        let mut right = self.clone();
        left.upper[j] = cut;
        right.lower[j] = cut;
        (left, right)
    }

    /// Affine image `x -> offset + scale * x`, applied per coordinate.
    pub fn affine(&self, offset: &[f64], scale: &[f64]) -> Region {
        Region {
            lower: (0..self.dim())
                .map(|j| offset[j] + scale[j] * self.lower[j])
                .collect(),
            upper: (0..self.dim())
                .map(|j| offset[j] + scale[j] * self.upper[j])
                .collect(),
        }
    }
}

/// Observations stored row-major together with the declared sample space.
#[derive(Debug, Clone, PartialEq)]
pub struct Dataset {
    values: Vec<f64>,
    dim: usize,
    bounds: Region,
}

impl Dataset {
    pub fn new(points: Vec<Vec<f64>>, bounds: Region) -> Result<Self> {
        let dim = bounds.dim();
        let mut values = Vec::with_capacity(points.len() * dim);
        for p in &points {
            if p.len() != dim {
                return Err(Error::DimensionMismatch {
                    expected: dim,
                    got: p.len(),
                });
            }
            if !bounds.contains(p) {
                return Err(Error::OutOfDomain(p.clone()));
            }
            values.extend_from_slice(p);
        }
        Ok(Self {
            values,
            dim,
            bounds,
        })
    }

    /// Univariate convenience constructor.
    pub fn from_values(xs: &[f64], lower: f64, upper: f64) -> Result<Self> {
        let bounds = Region::new(vec![lower], vec![upper])?;
        Self::new(xs.iter().map(|&x| vec![x]).collect(), bounds)
    }

    pub fn empty(bounds: Region) -> Self {
        Self {
            values: Vec::new(),
            dim: bounds.dim(),
            bounds,
        }
    }

    pub fn len(&self) -> usize {
        self.values.len() / self.dim
    }

    pub fn is_empty(&self) -> bool {
        self.values.is_empty()
    }

    pub fn dim(&self) -> usize {
        self.dim
    }

    pub fn bounds(&self) -> &Region {
        &self.bounds
    }

    pub fn point(&self, i: usize) -> &[f64] {
        &self.values[i * self.dim..(i + 1) * self.dim]
    }

    #[inline]
    pub fn coord(&self, i: usize, j: usize) -> f64 {
        self.values[i * self.dim + j]
    }

    pub fn points(&self) -> impl Iterator<Item = &[f64]> {
        self.values.chunks_exact(self.dim)
    }

    /// Applies `x -> offset + scale * x` to every point and to the bounds.
    pub fn affine(&self, offset: &[f64], scale: &[f64]) -> Result<Self> {
        let bounds = self.bounds.affine(offset, scale);
        let pts = self
            .points()
            .map(|p| (0..self.dim).map(|j| offset[j] + scale[j] * p[j]).collect())
            .collect();
        Self::new(pts, Region::new(bounds.lower, bounds.upper)?)
    }

    /// Reads comma-separated rows of `d` numbers. A first line that does not
    /// parse as numbers is taken as a header; any later failure aborts with
    /// the 1-based line number.
    pub fn from_csv<R: BufRead>(reader: R, bounds: Option<Region>) -> Result<Self> {
        let mut rows: Vec<(usize, Vec<f64>)> = Vec::new();
        for (idx, line) in reader.lines().enumerate() {
            let line = line?;
            let lineno = idx + 1;
            let trimmed = line.trim();
            if trimmed.is_empty() {
                continue;
            }
            let parsed: std::result::Result<Vec<f64>, _> = trimmed
                .split(',')
                .map(|f| f.trim().parse::<f64>())
                .collect();
            match parsed {
                Ok(v) if v.iter().all(|x| x.is_finite()) => rows.push((lineno, v)),
                Ok(_) => {
                    return Err(Error::Parse {
                        line: lineno,
                        message: "non-finite value".into(),
                    })
                }
                Err(_) if lineno == 1 => continue,
                Err(e) => {
                    return Err(Error::Parse {
                        line: lineno,
                        message: format!("cannot parse `{trimmed}`: {e}"),
                    })
                }
            }
        }
        let bounds = match bounds {
            Some(b) => b,
            None => Region::unit(rows.first().map_or(1, |(_, r)| r.len())),
        };
        let dim = bounds.dim();
        let mut points = Vec::with_capacity(rows.len());
        for (line, row) in rows {
            if row.len() != dim {
                return Err(Error::Parse {
                    line,
                    message: format!("expected {dim} columns, found {}", row.len()),
                });
            }
            if !bounds.contains(&row) {
                return Err(Error::Parse {
                    line,
                    message: format!("point {row:?} lies outside the sample space"),
                });
            }
            points.push(row);
        }
        Self::new(points, bounds)
    }
}
