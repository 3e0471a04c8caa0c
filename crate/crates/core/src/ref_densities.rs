//! Reference densities for the simulation scenarios: exact evaluation and
//! exact seeded sampling.

use rand::distr::weighted::WeightedIndex;
use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;
use rand_distr::{Beta, Distribution, Gamma, StandardNormal};
use serde::{Deserialize, Serialize};
use statrs::function::erf::erf;
use statrs::function::gamma::ln_gamma;

use crate::error::{Error, Result};
use crate::math::ln_beta;

/// Parameters `(a0, b0, a1, b1, a2, b2)` of the bivariate generalized Beta,
/// built from three independent gammas with shapes `a_i` and rates `b_i`.
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct GBetaParams {
    pub a0: f64,
    pub b0: f64,
    pub a1: f64,
    pub b1: f64,
    pub a2: f64,
    pub b2: f64,
}

impl GBetaParams {
    pub const fn new(a0: f64, b0: f64, a1: f64, b1: f64, a2: f64, b2: f64) -> Self {
        Self { a0, b0, a1, b1, a2, b2 }
    }

    pub fn as_array(&self) -> [f64; 6] {
        [self.a0, self.b0, self.a1, self.b1, self.a2, self.b2]
    }

    fn validate(&self) -> Result<()> {
        if self.as_array().iter().all(|v| *v > 0.0 && v.is_finite()) {
            Ok(())
        } else {
            Err(Error::DomainError(format!(
                "generalized beta parameters must be positive: {:?}",
                self.as_array()
            )))
        }
    }
}

fn ln_gbeta(p: &GBetaParams, x: f64, y: f64) -> f64 {
    let l1 = p.b1 / p.b0;
    let l2 = p.b2 / p.b0;
    let ln_norm = ln_gamma(p.a0) + ln_gamma(p.a1) + ln_gamma(p.a2) - ln_gamma(p.a0 + p.a1 + p.a2);
    let tx = x / (1.0 - x);
    let ty = y / (1.0 - y);
    p.a1 * l1.ln() + (p.a1 - 1.0) * x.ln() - (p.a1 + 1.0) * (-x).ln_1p()
        + p.a2 * l2.ln()
        + (p.a2 - 1.0) * y.ln()
        - (p.a2 + 1.0) * (-y).ln_1p()
        - (p.a0 + p.a1 + p.a2) * (l1 * tx + l2 * ty).ln_1p()
        - ln_norm
}

/// Density of `(G1/(G1+G0), G2/(G2+G0))` at `(x, y)` in the open unit square.
pub fn eval_generalized_beta(params: &GBetaParams, x: f64, y: f64) -> Result<f64> {
    params.validate()?;
    if !(x > 0.0 && x < 1.0 && y > 0.0 && y < 1.0) {
        return Err(Error::DomainError(format!(
            "generalized beta is defined on (0,1)^2, got ({x}, {y})"
        )));
    }
    Ok(ln_gbeta(params, x, y).exp())
}

fn gamma_draw<R: Rng>(shape: f64, rate: f64, rng: &mut R) -> f64 {
    Gamma::new(shape, 1.0 / rate)
        .expect("validated gamma parameters")
        .sample(rng)
}

fn gbeta_draw<R: Rng>(p: &GBetaParams, rng: &mut R) -> [f64; 2] {
    let g0 = gamma_draw(p.a0, p.b0, rng);
    let g1 = gamma_draw(p.a1, p.b1, rng);
    let g2 = gamma_draw(p.a2, p.b2, rng);
    [g1 / (g1 + g0), g2 / (g2 + g0)]
}

/// `n` seeded draws from the generalized Beta, one `[x, y]` row each.
pub fn sample_generalized_beta(params: &GBetaParams, n: usize, seed: u64) -> Result<Vec<[f64; 2]>> {
    params.validate()?;
    let mut rng = ChaCha8Rng::seed_from_u64(seed);
    Ok((0..n).map(|_| gbeta_draw(params, &mut rng)).collect())
}

/// Normal with diagonal covariance truncated to a box; the truncation
/// factorizes per coordinate.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct TruncatedNormal {
    pub mean: Vec<f64>,
    pub sd: Vec<f64>,
    pub lower: Vec<f64>,
    pub upper: Vec<f64>,
}

fn std_normal_cdf(z: f64) -> f64 {
    0.5 * (1.0 + erf(z / std::f64::consts::SQRT_2))
}

impl TruncatedNormal {
    pub fn univariate(mean: f64, sd: f64, lower: f64, upper: f64) -> Self {
        Self {
            mean: vec![mean],
            sd: vec![sd],
            lower: vec![lower],
            upper: vec![upper],
        }
    }

    /// Probability mass of the untruncated coordinate `j` inside the box.
    pub fn coordinate_mass(&self, j: usize) -> f64 {
        std_normal_cdf((self.upper[j] - self.mean[j]) / self.sd[j])
            - std_normal_cdf((self.lower[j] - self.mean[j]) / self.sd[j])
    }

    pub fn pdf(&self, x: &[f64]) -> f64 {
        let mut out = 1.0;
        for (j, &v) in x.iter().enumerate() {
            if v < self.lower[j] || v > self.upper[j] {
                return 0.0;
            }
            let z = (v - self.mean[j]) / self.sd[j];
            out *= (-0.5 * z * z).exp()
                / (self.sd[j] * (2.0 * std::f64::consts::PI).sqrt() * self.coordinate_mass(j));
        }
        out
    }

    fn sample<R: Rng>(&self, rng: &mut R) -> Vec<f64> {
        (0..self.mean.len())
            .map(|j| loop {
                let z: f64 = rng.sample(StandardNormal);
                let v = self.mean[j] + self.sd[j] * z;
                if v >= self.lower[j] && v <= self.upper[j] {
                    break v;
                }
            })
            .collect()
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(tag = "kind", rename_all = "snake_case")]
pub enum Component {
    Uniform,
    Beta { a: f64, b: f64 },
    TruncatedNormal(TruncatedNormal),
    GeneralizedBeta(GBetaParams),
}

impl Component {
    fn pdf(&self, x: &[f64]) -> f64 {
        match self {
            Component::Uniform => {
                if x.iter().all(|v| (0.0..=1.0).contains(v)) {
                    1.0
                } else {
                    0.0
                }
            }
            Component::Beta { a, b } => {
                let v = x[0];
                if !(v > 0.0 && v < 1.0) {
                    return 0.0;
                }
                ((a - 1.0) * v.ln() + (b - 1.0) * (-v).ln_1p() - ln_beta(*a, *b)).exp()
            }
            Component::TruncatedNormal(t) => t.pdf(x),
            Component::GeneralizedBeta(p) => {
                let (u, v) = (x[0], x[1]);
                if u > 0.0 && u < 1.0 && v > 0.0 && v < 1.0 {
                    ln_gbeta(p, u, v).exp()
                } else {
                    0.0
                }
            }
        }
    }

    fn sample<R: Rng>(&self, dim: usize, rng: &mut R) -> Vec<f64> {
        match self {
            Component::Uniform => (0..dim).map(|_| rng.random::<f64>()).collect(),
            Component::Beta { a, b } => vec![Beta::new(*a, *b).expect("valid beta").sample(rng)],
            Component::TruncatedNormal(t) => t.sample(rng),
            Component::GeneralizedBeta(p) => gbeta_draw(p, rng).to_vec(),
        }
    }
}

/// A named mixture density on the unit interval or unit square.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct ScenarioDensity {
    pub name: String,
    pub dim: usize,
    pub components: Vec<(f64, Component)>,
}

impl ScenarioDensity {
    pub fn pdf(&self, x: &[f64]) -> f64 {
        self.components.iter().map(|(w, c)| w * c.pdf(x)).sum()
    }

    pub fn weights(&self) -> Vec<f64> {
        self.components.iter().map(|(w, _)| *w).collect()
    }

    pub fn sample_with<R: Rng>(&self, n: usize, rng: &mut R) -> Vec<Vec<f64>> {
        let pick = WeightedIndex::new(self.weights()).expect("positive mixture weights");
        (0..n)
            .map(|_| self.components[pick.sample(rng)].1.sample(self.dim, rng))
            .collect()
    }

    pub fn sample(&self, n: usize, seed: u64) -> Vec<Vec<f64>> {
        self.sample_with(n, &mut ChaCha8Rng::seed_from_u64(seed))
    }
}

pub const GBETA_1: GBetaParams = GBetaParams::new(50.0, 1.0, 100.0, 1.0, 150.0, 1.0);
pub const GBETA_2: GBetaParams = GBetaParams::new(12.0, 1.0, 25.0, 1.0, 35.0, 1.0);
pub const GBETA_3: GBetaParams = GBetaParams::new(3.0, 1.0, 6.0, 1.0, 9.0, 1.0);
pub const GBETA_4: GBetaParams = GBetaParams::new(5.0, 10.0, 3.0, 10.0, 3.0, 10.0);

pub const SCENARIOS: [&str; 9] = [
    "beta6_4", "beta500_20", "mix1d", "gbeta1", "gbeta2", "gbeta3", "gbeta4", "mix2d_1", "mix2d_2",
];

fn single(name: &str, dim: usize, c: Component) -> ScenarioDensity {
    ScenarioDensity {
        name: name.into(),
        dim,
        components: vec![(1.0, c)],
    }
}

fn mixture_2d(name: &str, spike: GBetaParams) -> ScenarioDensity {
    let unit = vec![0.0, 0.0];
    let one = vec![1.0, 1.0];
    let normal_a = TruncatedNormal {
        mean: vec![0.2, 0.5],
        sd: vec![0.01f64.sqrt(), 0.03f64.sqrt()],
        lower: unit.clone(),
        upper: one.clone(),
    };
    let normal_b = TruncatedNormal {
        mean: vec![0.4, 0.3],
        sd: vec![0.02f64.sqrt(), 0.02f64.sqrt()],
        lower: unit,
        upper: one,
    };
    ScenarioDensity {
        name: name.into(),
        dim: 2,
        components: vec![
            (0.4, Component::TruncatedNormal(normal_a)),
            (0.4, Component::TruncatedNormal(normal_b)),
            (0.2, Component::GeneralizedBeta(spike)),
        ],
    }
}

/// Looks up a registered scenario by name.
pub fn scenario(name: &str) -> Result<ScenarioDensity> {
    Ok(match name {
        "beta6_4" => single(name, 1, Component::Beta { a: 6.0, b: 4.0 }),
        "beta500_20" => single(name, 1, Component::Beta { a: 500.0, b: 20.0 }),
        "mix1d" => ScenarioDensity {
            name: name.into(),
            dim: 1,
            components: vec![
                (0.1, Component::Uniform),
                (0.2, Component::Beta { a: 2.0, b: 5.0 }),
                (0.2, Component::Beta { a: 1200.0, b: 800.0 }),
                (
                    0.3,
                    Component::TruncatedNormal(TruncatedNormal::univariate(0.5, 0.1, 0.1, 0.9)),
                ),
                (
                    0.2,
                    Component::TruncatedNormal(TruncatedNormal::univariate(0.7, 0.05, 0.3, 0.87)),
                ),
            ],
        },
        "gbeta1" => single(name, 2, Component::GeneralizedBeta(GBETA_1)),
        "gbeta2" => single(name, 2, Component::GeneralizedBeta(GBETA_2)),
        "gbeta3" => single(name, 2, Component::GeneralizedBeta(GBETA_3)),
        "gbeta4" => single(name, 2, Component::GeneralizedBeta(GBETA_4)),
        "mix2d_1" => mixture_2d(name, GBetaParams::new(200.0, 1.0, 150.0, 1.0, 150.0, 1.0)),
        "mix2d_2" => mixture_2d(name, GBetaParams::new(100.0, 1.0, 250.0, 1.0, 250.0, 1.0)),
        _ => return Err(Error::UnknownScenario(name.into())),
    })
}
