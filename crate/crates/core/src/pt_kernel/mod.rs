//! Conjugate Pólya-tree inference on a given partition tree.
//!
//! Everything is expressed relative to the base measure `H`: node evidences
//! are Bayes factors against `H`, and predictive densities are computed as
//! `h(x)` times a product of posterior branch-mass ratios. On a
//! data-dependent tree the counts stored in each node already exclude the
//! anchors, so the same formulas give the partial-likelihood posterior.

mod base;
mod beta_grid;

use std::fmt;
use std::str::FromStr;

use rand::SeedableRng;
use rand_chacha::ChaCha8Rng;
use rand_distr::{Beta, Distribution};
use serde::{Deserialize, Serialize};

pub use base::{BaseKind, BaseMeasure, Marginal};
pub use beta_grid::BetaGrid;

use crate::error::{Error, Result};
use crate::grid::Grid;
use crate::math::ln_beta;
use crate::partition_tree::{PartitionNode, PartitionTree, SplitMode};

#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash, PartialOrd, Ord, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum LikelihoodMode {
    Partial,
    Full,
}

impl LikelihoodMode {
    pub fn split_mode(self) -> SplitMode {
        match self {
            LikelihoodMode::Partial => SplitMode::MedianOnData,
            LikelihoodMode::Full => SplitMode::FixedMidpoint,
        }
    }

    pub fn from_split_mode(mode: SplitMode) -> Self {
        match mode {
            SplitMode::MedianOnData => LikelihoodMode::Partial,
            SplitMode::FixedMidpoint => LikelihoodMode::Full,
        }
    }

    pub fn as_str(self) -> &'static str {
        match self {
            LikelihoodMode::Partial => "partial",
            LikelihoodMode::Full => "full",
        }
    }
}

impl fmt::Display for LikelihoodMode {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        f.write_str(self.as_str())
    }
}

impl FromStr for LikelihoodMode {
    type Err = Error;

    fn from_str(s: &str) -> Result<Self> {
        match s.trim() {
            "partial" => Ok(LikelihoodMode::Partial),
            "full" => Ok(LikelihoodMode::Full),
            other => Err(Error::InvalidPlan(format!("unknown likelihood mode `{other}`"))),
        }
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub enum Side {
    Left,
    Right,
}

/// Concentration `c(A)`: constant, or indexed by node depth (the last
/// entry repeats for deeper levels).
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum Concentration {
    Constant(f64),
    ByLevel(Vec<f64>),
}

impl Default for Concentration {
    fn default() -> Self {
        Concentration::Constant(2.0)
    }
}

impl Concentration {
    pub fn at(&self, depth: usize) -> f64 {
        match self {
            Concentration::Constant(c) => *c,
            Concentration::ByLevel(cs) => cs[depth.min(cs.len() - 1)],
        }
    }

    pub fn validate(&self) -> Result<()> {
        let ok = |c: &f64| c.is_finite() && *c > 0.0;
        let valid = match self {
            Concentration::Constant(c) => ok(c),
            Concentration::ByLevel(cs) => !cs.is_empty() && cs.iter().all(ok),
        };
        if valid {
            Ok(())
        } else {
            Err(Error::InvalidPrior(format!(
                "concentration must be positive and finite: {self:?}"
            )))
        }
    }
}

/// `Beta(alpha_left, alpha_right)` prior on `F(A_l | A)`.
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct BetaNodePrior {
    pub alpha_left: f64,
    pub alpha_right: f64,
}

impl BetaNodePrior {
    pub fn new(alpha_left: f64, alpha_right: f64) -> Result<Self> {
        if !(alpha_left > 0.0 && alpha_right > 0.0 && alpha_left.is_finite() && alpha_right.is_finite()) {
            return Err(Error::InvalidPrior(format!(
                "beta pseudo-counts must be positive, got ({alpha_left}, {alpha_right})"
            )));
        }
        Ok(Self {
            alpha_left,
            alpha_right,
        })
    }

    /// `alpha = c * (H(A_l | A), H(A_r | A))`, which centers the prior on `H`.
    pub fn centered(c: f64, masses: (f64, f64)) -> Result<Self> {
        Self::new(c * masses.0, c * masses.1)
    }
}

/// Log marginal partial likelihood of one node and its ratio to the
/// likelihood under `H`.
#[derive(Debug, Clone, Copy, PartialEq, Default, Serialize, Deserialize)]
pub struct NodeEvidence {
    pub log_m: f64,
    pub log_eta: f64,
}

/// Beta-binomial evidence for child counts `(n_left, n_right)`.
pub fn beta_binomial_evidence(
    n_left: usize,
    n_right: usize,
    prior: &BetaNodePrior,
    masses: (f64, f64),
) -> Result<NodeEvidence> {
    let (nl, nr) = (n_left as f64, n_right as f64);
    let log_m = ln_beta(prior.alpha_left + nl, prior.alpha_right + nr)
        - ln_beta(prior.alpha_left, prior.alpha_right);
    Ok(NodeEvidence {
        log_m,
        log_eta: log_m - base_log_likelihood(n_left, n_right, masses)?,
    })
}

fn base_log_likelihood(n_left: usize, n_right: usize, masses: (f64, f64)) -> Result<f64> {
    let term = |n: usize, h: f64| -> Result<f64> {
        match (n, h > 0.0) {
            (0, _) => Ok(0.0),
            (_, true) => Ok(n as f64 * h.ln()),
            (_, false) => Err(Error::ZeroMass),
        }
    };
    Ok(term(n_left, masses.0)? + term(n_right, masses.1)?)
}

/// Evidence of a single tree node for its realized split. Nodes holding at
/// most one observation, and leaves, contribute a factor of one.
pub fn node_marginal(
    node: &PartitionNode,
    prior: &BetaNodePrior,
    masses: (f64, f64),
) -> Result<NodeEvidence> {
    match node.split_counts() {
        Some((nl, nr)) if node.n_total > 1 && !node.is_leaf() => {
            beta_binomial_evidence(nl, nr, prior, masses)
        }
        _ => Ok(NodeEvidence::default()),
    }
}

/// How `ln B` terms are evaluated when computing evidences.
#[derive(Debug, Clone, Default)]
pub enum EvidenceEval {
    #[default]
    Exact,
    Grid(BetaGrid),
}

impl EvidenceEval {
    /// Evidence under the centered prior `alpha = c * masses`.
    pub fn centered(
        &mut self,
        c: f64,
        masses: (f64, f64),
        n_left: usize,
        n_right: usize,
    ) -> Result<NodeEvidence> {
        let prior = BetaNodePrior::centered(c, masses)?;
        match self {
            EvidenceEval::Exact => beta_binomial_evidence(n_left, n_right, &prior, masses),
            EvidenceEval::Grid(grid) => {
                let q = masses.0;
                let log_m = grid.ln_beta(c, q, n_left as f64, n_right as f64)
                    - grid.ln_beta(c, q, 0.0, 0.0);
                Ok(NodeEvidence {
                    log_m,
                    log_eta: log_m - base_log_likelihood(n_left, n_right, masses)?,
                })
            }
        }
    }
}

/// Realized-split base masses for every node (`None` on leaves).
pub fn split_masses(tree: &PartitionTree, base: &BaseMeasure) -> Result<Vec<Option<(f64, f64)>>> {
    tree.nodes
        .iter()
        .enumerate()
        .map(|(id, node)| {
            if node.is_leaf() {
                Ok(None)
            } else {
                tree.base_masses(id, base).map(Some)
            }
        })
        .collect()
}

/// Per-node evidences of the centered Pólya tree.
pub fn node_evidences(
    tree: &PartitionTree,
    base: &BaseMeasure,
    conc: &Concentration,
    eval: &mut EvidenceEval,
) -> Result<Vec<NodeEvidence>> {
    conc.validate()?;
    let masses = split_masses(tree, base)?;
    tree.nodes
        .iter()
        .zip(masses)
        .map(|(node, m)| match (m, node.split_counts()) {
            (Some(m), Some((nl, nr))) if node.n_total > 1 => {
                eval.centered(conc.at(node.depth), m, nl, nr)
            }
            _ => Ok(NodeEvidence::default()),
        })
        .collect()
}

/// `ln phi(Omega)`: the Bayes factor of the Pólya-tree model against `H`.
pub fn bayes_factor(tree: &PartitionTree, base: &BaseMeasure, conc: &Concentration) -> Result<f64> {
    bayes_factor_with(tree, base, conc, &mut EvidenceEval::Exact)
}

pub fn bayes_factor_with(
    tree: &PartitionTree,
    base: &BaseMeasure,
    conc: &Concentration,
    eval: &mut EvidenceEval,
) -> Result<f64> {
    Ok(node_evidences(tree, base, conc, eval)?
        .iter()
        .map(|e| e.log_eta)
        .sum())
}

/// Builds a grid cache and fills it with every count pair used by `tree`.
pub fn precompute_beta_grid(
    tree: &PartitionTree,
    conc: &Concentration,
    grid_step: f64,
) -> BetaGrid {
    let mut grid = BetaGrid::new(grid_step);
    for node in &tree.nodes {
        if let Some((nl, nr)) = node.split_counts() {
            let c = conc.at(node.depth);
            grid.ln_beta(c, 0.5 * grid_step, nl as f64, nr as f64);
            grid.ln_beta(c, 0.5, nl as f64, nr as f64);
            grid.ln_beta(c, 0.5, 0.0, 0.0);
        }
    }
    grid
}

/// Log partial likelihood `sum_A n(A_l) ln F_l(A) + n(A_r) ln (1 - F_l(A))`
/// for plugged-in left branch probabilities, one entry per node (ignored on
/// leaves).
pub fn log_partial_likelihood(tree: &PartitionTree, left_probs: &[f64]) -> Result<f64> {
    if left_probs.len() != tree.len() {
        return Err(Error::DimensionMismatch {
            expected: tree.len(),
            got: left_probs.len(),
        });
    }
    let mut total = 0.0;
    for (node, &f) in tree.nodes.iter().zip(left_probs) {
        if let Some((nl, nr)) = node.split_counts() {
            total += nl as f64 * f.ln() + nr as f64 * (-f).ln_1p();
        }
    }
    Ok(total)
}

/// Posterior mean of `F(child | A)`. The denominator uses the post-removal
/// child total, which equals `n(A)` on a fixed tree and `n(A)` minus the
/// removed anchors and ties on a data-dependent one.
pub fn posterior_branch_mean(node: &PartitionNode, side: Side, prior: &BetaNodePrior) -> Result<f64> {
    let (nl, nr) = node
        .split_counts()
        .ok_or_else(|| Error::Numerical("branch mean requested on a leaf".into()))?;
    Ok(branch_mean(nl, nr, side, prior))
}

pub(crate) fn branch_mean(n_left: usize, n_right: usize, side: Side, prior: &BetaNodePrior) -> f64 {
    let total = prior.alpha_left + prior.alpha_right + (n_left + n_right) as f64;
    match side {
        Side::Left => (prior.alpha_left + n_left as f64) / total,
        Side::Right => (prior.alpha_right + n_right as f64) / total,
    }
}

/// Posterior branch-mass ratio `varphi` of the child of `id` on `side`.
fn varphi(
    tree: &PartitionTree,
    id: usize,
    side: Side,
    c: f64,
    masses: (f64, f64),
) -> Result<f64> {
    let prior = BetaNodePrior::centered(c, masses)?;
    let mean = posterior_branch_mean(&tree.nodes[id], side, &prior)?;
    Ok(match side {
        Side::Left => mean / masses.0,
        Side::Right => mean / masses.1,
    })
}

/// Which child of node `parent` the node `child` is.
pub(crate) fn side_of(tree: &PartitionTree, parent: usize, child: usize) -> Side {
    match tree.nodes[parent].children {
        Some((l, _)) if l == child => Side::Left,
        _ => Side::Right,
    }
}

/// Posterior predictive density at `x`.
pub fn predictive_density(
    tree: &PartitionTree,
    base: &BaseMeasure,
    conc: &Concentration,
    x: &[f64],
) -> Result<f64> {
    conc.validate()?;
    let path = tree.locate(x)?;
    // bottom-up: xi(A_k) = 1, xi(A_i) = varphi(A_{i+1}) xi(A_{i+1})
    let mut xi = 1.0;
    for w in path.windows(2).rev() {
        let (parent, child) = (w[0], w[1]);
        let node = &tree.nodes[parent];
        let masses = tree.base_masses(parent, base)?;
        xi *= varphi(tree, parent, side_of(tree, parent, child), conc.at(node.depth), masses)?;
    }
    Ok(base.density(x) * xi)
}

pub fn predictive_grid(
    tree: &PartitionTree,
    base: &BaseMeasure,
    conc: &Concentration,
    grid: &Grid,
) -> Result<Vec<f64>> {
    grid.points()
        .map(|x| predictive_density(tree, base, conc, x))
        .collect()
}

/// One posterior density draw evaluated on `grid`: every internal node gets
/// an independent `Beta(alpha_l + n_l, alpha_r + n_r)` branch probability.
pub fn sample_posterior_density(
    tree: &PartitionTree,
    base: &BaseMeasure,
    conc: &Concentration,
    rng_seed: u64,
    grid: &Grid,
) -> Result<Vec<f64>> {
    let mut rng = ChaCha8Rng::seed_from_u64(rng_seed);
    sample_with_rng(tree, base, conc, &mut rng, grid)
}

/// Draw `index` of a reproducible family of posterior draws: each index
/// reads its own ChaCha stream under the master seed.
pub fn sample_posterior_draw(
    tree: &PartitionTree,
    base: &BaseMeasure,
    conc: &Concentration,
    master_seed: u64,
    index: u64,
    grid: &Grid,
) -> Result<Vec<f64>> {
    let mut rng = ChaCha8Rng::seed_from_u64(master_seed);
    rng.set_stream(index);
    sample_with_rng(tree, base, conc, &mut rng, grid)
}

fn sample_with_rng(
    tree: &PartitionTree,
    base: &BaseMeasure,
    conc: &Concentration,
    rng: &mut ChaCha8Rng,
    grid: &Grid,
) -> Result<Vec<f64>> {
    conc.validate()?;
    let masses = split_masses(tree, base)?;
    let mut ratios = vec![(1.0, 1.0); tree.len()];
    for (id, node) in tree.nodes.iter().enumerate() {
        if let (Some(m), Some((nl, nr))) = (masses[id], node.split_counts()) {
            let prior = BetaNodePrior::centered(conc.at(node.depth), m)?;
            let beta = Beta::new(prior.alpha_left + nl as f64, prior.alpha_right + nr as f64)
                .map_err(|e| Error::Numerical(format!("beta posterior: {e}")))?;
            let f = beta.sample(rng);
            ratios[id] = (f / m.0, (1.0 - f) / m.1);
        }
    }
    grid.points()
        .map(|x| {
            let path = tree.locate(x)?;
            let ratio: f64 = path
                .windows(2)
                .map(|w| match side_of(tree, w[0], w[1]) {
                    Side::Left => ratios[w[0]].0,
                    Side::Right => ratios[w[0]].1,
                })
                .product();
            Ok(base.density(x) * ratio)
        })
        .collect()
}
