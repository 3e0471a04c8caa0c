use serde::{Deserialize, Serialize};
use statrs::function::beta::beta_reg;

use crate::error::{Error, Result};
use crate::math::ln_beta;
use crate::partition_tree::Region;

/// One coordinate of a product base measure, defined relative to the
/// coordinate's bounds `[lo, hi]`.
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
#[serde(tag = "kind", rename_all = "snake_case")]
pub enum Marginal {
    Uniform,
    /// `Beta(a, b)` rescaled to the coordinate's bounds.
    Beta { a: f64, b: f64 },
}

#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub enum BaseKind {
    Uniform,
    ProductOfMarginals,
}

/// Centering measure `H` of the tree prior, a product of per-dimension
/// marginals on the sample space.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct BaseMeasure {
    bounds: Region,
    marginals: Vec<Marginal>,
}

impl BaseMeasure {
    pub fn uniform(bounds: Region) -> Self {
        let d = bounds.dim();
        Self {
            bounds,
            marginals: vec![Marginal::Uniform; d],
        }
    }

    pub fn product(bounds: Region, marginals: Vec<Marginal>) -> Result<Self> {
        if marginals.len() != bounds.dim() {
            return Err(Error::DimensionMismatch {
                expected: bounds.dim(),
                got: marginals.len(),
            });
        }
        for m in &marginals {
            if let Marginal::Beta { a, b } = *m {
                if !(a > 0.0 && b > 0.0 && a.is_finite() && b.is_finite()) {
                    return Err(Error::InvalidPrior(format!(
                        "beta marginal needs positive shapes, got ({a}, {b})"
                    )));
                }
            }
        }
        Ok(Self { bounds, marginals })
    }

    pub fn bounds(&self) -> &Region {
        &self.bounds
    }

    pub fn marginals(&self) -> &[Marginal] {
        &self.marginals
    }

    pub fn dim(&self) -> usize {
        self.bounds.dim()
    }

    pub fn kind(&self) -> BaseKind {
        if self.marginals.iter().all(|m| *m == Marginal::Uniform) {
            BaseKind::Uniform
        } else {
            BaseKind::ProductOfMarginals
        }
    }

    /// Same measure carried along `x -> offset + scale * x`.
    pub fn affine(&self, offset: &[f64], scale: &[f64]) -> Result<Self> {
        let b = self.bounds.affine(offset, scale);
        Self::product(Region::new(b.lower, b.upper)?, self.marginals.clone())
    }

    fn unit_coord(&self, j: usize, x: f64) -> f64 {
        ((x - self.bounds.lower[j]) / self.bounds.width(j)).clamp(0.0, 1.0)
    }

    /// Marginal CDF of coordinate `j`, measured from the lower bound.
    pub fn marginal_cdf(&self, j: usize, x: f64) -> f64 {
        let t = self.unit_coord(j, x);
        match self.marginals[j] {
            Marginal::Uniform => t,
            Marginal::Beta { a, b } => beta_reg(a, b, t),
        }
    }

    /// Marginal density of coordinate `j`.
    pub fn marginal_pdf(&self, j: usize, x: f64) -> f64 {
        let lo = self.bounds.lower[j];
        let hi = self.bounds.upper[j];
        if x < lo || x > hi {
            return 0.0;
        }
        let w = hi - lo;
        match self.marginals[j] {
            Marginal::Uniform => 1.0 / w,
            Marginal::Beta { a, b } => {
                let t = (x - lo) / w;
                let log = (a - 1.0) * t.ln() + (b - 1.0) * (1.0 - t).ln() - ln_beta(a, b);
                log.exp() / w
            }
        }
    }

    /// Density `h(x)`.
    pub fn density(&self, x: &[f64]) -> f64 {
        (0..self.dim()).map(|j| self.marginal_pdf(j, x[j])).product()
    }

    /// `H(A)`.
    pub fn mass(&self, region: &Region) -> f64 {
        (0..self.dim())
            .map(|j| self.marginal_cdf(j, region.upper[j]) - self.marginal_cdf(j, region.lower[j]))
            .product()
    }

    /// Conditional masses `(H(A_l | A), H(A_r | A))` of the two halves of
    /// `region` cut at `cut` on dimension `j`. The pair sums to one.
    pub fn conditional_masses(&self, region: &Region, j: usize, cut: f64) -> Result<(f64, f64)> {
        let (lo, hi) = (region.lower[j], region.upper[j]);
        let (left, right) = match self.marginals[j] {
            Marginal::Uniform => (cut - lo, hi - cut),
            Marginal::Beta { .. } => {
                let c = self.marginal_cdf(j, cut);
                (c - self.marginal_cdf(j, lo), self.marginal_cdf(j, hi) - c)
            }
        };
        let total = left + right;
        if !(total > 0.0) || left < 0.0 || right < 0.0 {
            return Err(Error::ZeroMass);
        }
        Ok((left / total, right / total))
    }
}
