//! Small numerical helpers shared across the crate.

use statrs::function::gamma::ln_gamma;

/// `ln B(a, b)` through log-gamma.
pub fn ln_beta(a: f64, b: f64) -> f64 {
    ln_gamma(a) + ln_gamma(b) - ln_gamma(a + b)
}

/// `ln(exp(a) + exp(b))`, exact for infinite arguments.
pub fn log_add_exp(a: f64, b: f64) -> f64 {
    if a == f64::NEG_INFINITY {
        return b;
    }
    if b == f64::NEG_INFINITY {
        return a;
    }
    if a > b {
        a + (b - a).exp().ln_1p()
    } else {
        b + (a - b).exp().ln_1p()
    }
}

/// Log-sum-exp over a slice with the maximum subtracted first.
pub fn log_sum_exp(values: &[f64]) -> f64 {
    let max = values.iter().copied().fold(f64::NEG_INFINITY, f64::max);
    if max == f64::NEG_INFINITY {
        return f64::NEG_INFINITY;
    }
    if max == f64::INFINITY {
        return f64::INFINITY;
    }
    max + values.iter().map(|v| (v - max).exp()).sum::<f64>().ln()
}

fn splitmix64(mut z: u64) -> u64 {
    z = z.wrapping_add(0x9E37_79B9_7F4A_7C15);
    z = (z ^ (z >> 30)).wrapping_mul(0xBF58_476D_1CE4_E5B9);
    z = (z ^ (z >> 27)).wrapping_mul(0x94D0_49BB_1331_11EB);
    z ^ (z >> 31)
}

/// Derives a child seed from a master seed and a path of indices.
///
/// The mapping is a fixed function of its inputs, so every consumer of a
/// derived stream sees the same numbers whatever order work is scheduled in.
pub fn derive_seed(master: u64, path: &[u64]) -> u64 {
    path.iter()
        .fold(splitmix64(master), |acc, &p| splitmix64(acc ^ splitmix64(p)))
}

/// Pointwise quantiles across equally long rows of `draws`: one output
/// vector per level, each as long as a row.
pub fn pointwise_quantiles(draws: &[Vec<f64>], levels: &[f64]) -> Vec<Vec<f64>> {
    let Some(len) = draws.first().map(Vec::len) else {
        return vec![Vec::new(); levels.len()];
    };
    let mut out = vec![vec![0.0; len]; levels.len()];
    let mut column = vec![0.0; draws.len()];
    for i in 0..len {
        for (c, d) in column.iter_mut().zip(draws) {
            *c = d[i];
        }
        column.sort_by(f64::total_cmp);
        for (o, q) in out.iter_mut().zip(levels) {
            o[i] = quantile_sorted(&column, *q);
        }
    }
    out
}

/// Empirical quantile with linear interpolation between order statistics
/// (the "type 7" definition). `sorted` must be ascending and non-empty.
pub fn quantile_sorted(sorted: &[f64], q: f64) -> f64 {
    let n = sorted.len();
    if n == 1 {
        return sorted[0];
    }
    let h = (n - 1) as f64 * q.clamp(0.0, 1.0);
    let lo = h.floor() as usize;
    let hi = (lo + 1).min(n - 1);
    sorted[lo] + (h - lo as f64) * (sorted[hi] - sorted[lo])
}
