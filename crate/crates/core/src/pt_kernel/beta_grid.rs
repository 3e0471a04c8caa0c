use std::collections::HashMap;

use crate::math::ln_beta;

/// Tabulated `ln B(c q + a, c (1 - q) + b)` on the grid `q = step, 2 step,
/// ..., 1 - step`, one row per `(c, a, b)` triple, filled on first use.
/// Lookups between grid points interpolate linearly; `q` outside the grid
/// range is evaluated directly.
#[derive(Debug, Clone)]
pub struct BetaGrid {
    step: f64,
    points: usize,
    rows: HashMap<(u64, u64, u64), Vec<f64>>,
}

impl Default for BetaGrid {
    fn default() -> Self {
        Self::new(0.01)
    }
}

impl BetaGrid {
    pub fn new(step: f64) -> Self {
        assert!(step > 0.0 && step < 0.5, "grid step must lie in (0, 0.5)");
        let points = (1.0 / step).round() as usize - 1;
        Self {
            step,
            points,
            rows: HashMap::new(),
        }
    }

    pub fn step(&self) -> f64 {
        self.step
    }

    /// Number of rows materialized so far.
    pub fn rows(&self) -> usize {
        self.rows.len()
    }

    fn row(&mut self, c: f64, a: f64, b: f64) -> &[f64] {
        let step = self.step;
        let points = self.points;
        self.rows
            .entry((c.to_bits(), a.to_bits(), b.to_bits()))
            .or_insert_with(|| {
                (1..=points)
                    .map(|i| {
                        let q = i as f64 * step;
                        ln_beta(c * q + a, c * (1.0 - q) + b)
                    })
                    .collect()
            })
    }

    pub fn ln_beta(&mut self, c: f64, q: f64, a: f64, b: f64) -> f64 {
        let pos = q / self.step;
        let nearest = pos.round();
        let lo_edge = 1.0;
        let hi_edge = self.points as f64;
        if !(pos >= lo_edge - 1e-9 && pos <= hi_edge + 1e-9) {
            return ln_beta(c * q + a, c * (1.0 - q) + b);
        }
        if (pos - nearest).abs() < 1e-9 {
            let i = nearest as usize - 1;
            return self.row(c, a, b)[i];
        }
        let i = pos.floor() as usize;
        let t = pos - i as f64;
        let row = self.row(c, a, b);
        (1.0 - t) * row[i - 1] + t * row[i]
    }
}
