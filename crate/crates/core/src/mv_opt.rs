//! Multivariate optional Pólya tree with latent splitting dimensions.
//!
//! Every node that some sequence of splitting choices can reach is
//! expanded, with per-dimension evidences for each latent state. A
//! bottom-up pass then marginalizes both the splitting dimension `J(A)`
//! and the state `S(A)`, giving the joint posterior transitions of
//! `(J, S)`. Posterior-mean densities are estimated by sampling trees
//! top-down and averaging their tree-conditional predictives.
//!
//! On a data-dependent tree the median cuts of different dimensions do not
//! commute, so the expansion is essentially a tree over (dimension, side)
//! sequences. With midpoint cuts the same region is reached by many
//! sequences; nodes are memoized on a key of region, depth and point set,
//! which turns the expansion into a DAG.

use std::collections::HashMap;

use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;
use rand_distr::{Beta, Distribution};
use rayon::prelude::*;
use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};
use crate::grid::Grid;
use crate::latent_markov::{draw_index, StateKind};
use crate::math::{log_sum_exp, pointwise_quantiles};
use crate::partition_tree::{candidate_splits, Dataset, Region, TreeConfig};
use crate::prior::PriorSpec;
use crate::pt_kernel::{branch_mean, BetaNodePrior, EvidenceEval, LikelihoodMode, Side};

/// Default cap on the number of expanded nodes.
pub const DEFAULT_NODE_BUDGET: usize = 4_000_000;

#[derive(Debug, Clone, PartialEq)]
pub struct ExpansionConfig {
    pub tree: TreeConfig,
    pub node_budget: usize,
    pub memoize: bool,
}

impl ExpansionConfig {
    pub fn new(max_depth: i64) -> Result<Self> {
        Ok(Self {
            tree: TreeConfig::new(max_depth, 0.5)?,
            node_budget: DEFAULT_NODE_BUDGET,
            memoize: true,
        })
    }
}

/// Memo key of an expansion node: region bounds (bitwise), depth and the
/// sorted ids of the observations it holds.
#[derive(Debug, Clone, PartialEq, Eq, Hash)]
pub struct NodeKey {
    region: Vec<u64>,
    depth: usize,
    points: Vec<u32>,
}

impl NodeKey {
    fn new(region: &Region, depth: usize, points: &[usize]) -> Self {
        Self {
            depth,
            region: region
                .lower
                .iter()
                .chain(&region.upper)
                .map(|v| v.to_bits())
                .collect(),
            points: points.iter().map(|&i| i as u32).collect(),
        }
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct ExpSplit {
    pub cut: f64,
    pub n_left: usize,
    pub n_right: usize,
    pub ties: usize,
    pub masses: (f64, f64),
    pub left: usize,
    pub right: usize,
    /// `ln eta_{j,s}` per state.
    pub log_eta: Vec<f64>,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct ExpNode {
    pub region: Region,
    pub depth: usize,
    pub n: usize,
    pub anchors: Vec<Vec<f64>>,
    /// Candidate split per dimension; all `None` on leaves.
    pub splits: Vec<Option<ExpSplit>>,
    /// `ln phi_s(A)` per parent state.
    pub log_phi: Vec<f64>,
    /// `P(J = j', S = s' | S(A_p) = s, x)` stored at `[s][j' * S + s']`.
    pub joint: Option<Vec<Vec<f64>>>,
}

impl ExpNode {
    pub fn is_leaf(&self) -> bool {
        self.joint.is_none()
    }
}

#[derive(Debug, Clone, Copy, Default, PartialEq, Eq, Serialize, Deserialize)]
pub struct ExpansionStats {
    pub nodes: usize,
    pub pruned: usize,
    pub memo_hits: usize,
}

/// Result of the expansion and message pass.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct JointPosterior {
    pub mode: LikelihoodMode,
    pub prior: PriorSpec,
    pub lambda: Vec<f64>,
    pub max_depth: usize,
    pub root: usize,
    pub nodes: Vec<ExpNode>,
    pub stats: ExpansionStats,
}

struct Expander<'a> {
    data: &'a Dataset,
    prior: &'a PriorSpec,
    lambda: &'a [f64],
    config: &'a ExpansionConfig,
    mode: LikelihoodMode,
    leaf_size: usize,
    log_rho: Vec<Vec<f64>>,
    eval: EvidenceEval,
    nodes: Vec<ExpNode>,
    memo: HashMap<NodeKey, usize>,
    stats: ExpansionStats,
}

impl Expander<'_> {
    fn expand(&mut self, idx: Vec<usize>, region: Region, depth: usize) -> Result<usize> {
        let key = self.config.memoize.then(|| NodeKey::new(&region, depth, &idx));
        if let Some(id) = key.as_ref().and_then(|k| self.memo.get(k)) {
            self.stats.memo_hits += 1;
            return Ok(*id);
        }
        if self.nodes.len() >= self.config.node_budget {
            return Err(Error::NodeBudgetExceeded {
                budget: self.config.node_budget,
                depth,
            });
        }
        let s = self.prior.states.len();
        let d = self.data.dim();
        let n = idx.len();
        let mut node = ExpNode {
            region,
            depth,
            n,
            anchors: Vec::new(),
            splits: vec![None; d],
            log_phi: vec![0.0; s],
            joint: None,
        };
        if n <= self.leaf_size || depth >= self.config.tree.max_depth {
            self.stats.pruned += 1;
            return Ok(self.push(node, key));
        }
        let cands = candidate_splits(
            self.data,
            &idx,
            &node.region,
            self.mode.split_mode(),
            self.config.tree.quantile,
        );
        drop(idx);
        let usable: Vec<usize> = (0..d)
            .filter(|&j| cands.per_dim[j].interior && self.lambda[j] > 0.0)
            .collect();
        if usable.is_empty() {
            self.stats.pruned += 1;
            return Ok(self.push(node, key));
        }
        node.anchors = cands
            .anchors
            .iter()
            .map(|&i| self.data.point(i).to_vec())
            .collect();
        let weight_sum: f64 = usable.iter().map(|&j| self.lambda[j]).sum();
        let mut terms: Vec<Vec<f64>> = vec![Vec::with_capacity(usable.len() * s); s];
        let mut per_dim = cands.per_dim;
        for &j in &usable {
            let cand = std::mem::replace(
                &mut per_dim[j],
                crate::partition_tree::DimSplit {
                    cut: 0.0,
                    order_index: None,
                    left: Vec::new(),
                    right: Vec::new(),
                    ties: 0,
                    interior: false,
                },
            );
            let masses = self
                .prior
                .base
                .conditional_masses(&node.region, j, cand.cut)?;
            let (nl, nr) = (cand.left.len(), cand.right.len());
            let mut log_eta = vec![0.0; s];
            for (k, st) in self.prior.states.states.iter().enumerate() {
                if let StateKind::Active { concentration } = st {
                    log_eta[k] = self.eval.centered(concentration.at(depth), masses, nl, nr)?.log_eta;
                }
            }
            let (lr, rr) = node.region.split(j, cand.cut);
            let left = self.expand(cand.left, lr, depth + 1)?;
            let right = self.expand(cand.right, rr, depth + 1)?;
            let log_w = (self.lambda[j] / weight_sum).ln();
            for (from, t) in terms.iter_mut().enumerate() {
                for to in 0..s {
                    t.push(
                        log_w
                            + self.log_rho[from][to]
                            + log_eta[to]
                            + self.nodes[left].log_phi[to]
                            + self.nodes[right].log_phi[to],
                    );
                }
            }
            node.splits[j] = Some(ExpSplit {
                cut: cand.cut,
                n_left: nl,
                n_right: nr,
                ties: cand.ties,
                masses,
                left,
                right,
                log_eta,
            });
        }
        // scatter the per-usable-dimension terms into the full j' x s' layout
        let mut joint = vec![vec![0.0; d * s]; s];
        for from in 0..s {
            let phi = log_sum_exp(&terms[from]);
            if phi == f64::NEG_INFINITY {
                return Err(Error::Numerical(format!(
                    "phi vanishes at depth {depth} for parent state {from}"
                )));
            }
            node.log_phi[from] = phi;
            for (u, &j) in usable.iter().enumerate() {
                for to in 0..s {
                    joint[from][j * s + to] = (terms[from][u * s + to] - phi).exp();
                }
            }
        }
        node.joint = Some(joint);
        Ok(self.push(node, key))
    }

    fn push(&mut self, node: ExpNode, key: Option<NodeKey>) -> usize {
        let id = self.nodes.len();
        self.nodes.push(node);
        self.stats.nodes += 1;
        if let Some(k) = key {
            self.memo.insert(k, id);
        }
        id
    }
}

/// Expands all reachable nodes and computes the joint `(J, S)` posterior.
/// Splitting dimensions are weighted by the prior's split weights.
pub fn expand_and_pass(
    data: &Dataset,
    prior: &PriorSpec,
    mode: LikelihoodMode,
    config: &ExpansionConfig,
) -> Result<JointPosterior> {
    expand_and_pass_with(data, prior, mode, config, EvidenceEval::Exact)
}

pub fn expand_and_pass_with(
    data: &Dataset,
    prior: &PriorSpec,
    mode: LikelihoodMode,
    config: &ExpansionConfig,
    eval: EvidenceEval,
) -> Result<JointPosterior> {
    prior.validate()?;
    let d = data.dim();
    if prior.dim() != d {
        return Err(Error::DimensionMismatch {
            expected: d,
            got: prior.dim(),
        });
    }
    let lambda = prior.split_weights();
    let mut ex = Expander {
        data,
        prior,
        lambda: &lambda,
        config,
        mode,
        leaf_size: config.tree.leaf_size_for(mode.split_mode(), d),
        log_rho: prior.states.log_transition(),
        eval,
        nodes: Vec::new(),
        memo: HashMap::new(),
        stats: ExpansionStats::default(),
    };
    let root = ex.expand((0..data.len()).collect(), data.bounds().clone(), 0)?;
    Ok(JointPosterior {
        mode,
        prior: prior.clone(),
        lambda: lambda.clone(),
        max_depth: config.tree.max_depth,
        root,
        nodes: ex.nodes,
        stats: ex.stats,
    })
}

#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub enum SampledKind {
    /// No split available (too few points or maximum depth).
    Leaf,
    /// Entered a stopping state.
    Stopped { state: usize },
    Split {
        dim: usize,
        state: usize,
        left: usize,
        right: usize,
    },
}

#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub struct SampledNode {
    pub node: usize,
    pub kind: SampledKind,
}

/// A tree drawn from the joint posterior; entry 0 is the root.
#[derive(Debug, Clone, PartialEq, Eq)]
pub struct SampledTree {
    pub nodes: Vec<SampledNode>,
}

/// Posterior-mean estimate on a grid, optionally with per-draw densities
/// for credible bands.
#[derive(Debug, Clone, PartialEq)]
pub struct McEstimate {
    pub mean: Vec<f64>,
    pub draws: Option<Vec<Vec<f64>>>,
}

impl McEstimate {
    /// Pointwise empirical quantiles of the draws, one vector per level.
    pub fn quantiles(&self, levels: &[f64]) -> Option<Vec<Vec<f64>>> {
        match &self.draws {
            Some(d) if !d.is_empty() => Some(pointwise_quantiles(d, levels)),
            _ => None,
        }
    }
}

const MC_CHUNK: usize = 8;

fn tree_rng(seed: u64, index: usize) -> ChaCha8Rng {
    let mut rng = ChaCha8Rng::seed_from_u64(seed);
    rng.set_stream(index as u64);
    rng
}

impl JointPosterior {
    pub fn dim(&self) -> usize {
        self.lambda.len()
    }

    pub fn root_node(&self) -> &ExpNode {
        &self.nodes[self.root]
    }

    pub fn log_bayes_factor(&self) -> f64 {
        self.root_node().log_phi[self.prior.states.root_state]
    }

    /// Joint posterior row at `node` for parent state `from`, indexed by
    /// `j * S + s`.
    pub fn joint_row(&self, node: usize, from: usize) -> Option<&[f64]> {
        self.nodes[node].joint.as_ref().map(|m| m[from].as_slice())
    }

    /// `P(J(Omega) = j | x)` summed over states.
    pub fn root_dimension_marginals(&self) -> Vec<f64> {
        let s = self.prior.states.len();
        let d = self.dim();
        match self.joint_row(self.root, self.prior.states.root_state) {
            Some(row) => (0..d).map(|j| row[j * s..(j + 1) * s].iter().sum()).collect(),
            None => vec![0.0; d],
        }
    }

    pub fn sample_tree<R: Rng>(&self, rng: &mut R) -> SampledTree {
        let s = self.prior.states.len();
        let mut nodes = Vec::new();
        let mut stack = vec![(self.root, self.prior.states.root_state, usize::MAX, false)];
        while let Some((id, from, parent, is_right)) = stack.pop() {
            let pos = nodes.len();
            let kind = match &self.nodes[id].joint {
                None => SampledKind::Leaf,
                Some(m) => {
                    let pick = draw_index(&m[from], rng);
                    let (dim, state) = (pick / s, pick % s);
                    if self.prior.states.states[state].is_stop() {
                        SampledKind::Stopped { state }
                    } else {
                        let split = self.nodes[id].splits[dim]
                            .as_ref()
                            .expect("posterior mass on an unavailable dimension");
                        // right pushed first so the left subtree is laid out first
                        stack.push((split.right, state, pos, true));
                        stack.push((split.left, state, pos, false));
                        SampledKind::Split {
                            dim,
                            state,
                            left: usize::MAX,
                            right: usize::MAX,
                        }
                    }
                }
            };
            nodes.push(SampledNode { node: id, kind });
            if parent != usize::MAX {
                if let SampledKind::Split { left, right, .. } = &mut nodes[parent].kind {
                    if is_right {
                        *right = pos;
                    } else {
                        *left = pos;
                    }
                }
            }
        }
        SampledTree { nodes }
    }

    /// Exact posterior predictive density at `x`, marginalizing dimensions,
    /// states and branch probabilities. The cost grows with the number of
    /// expansion nodes containing `x`, so this suits spot checks rather
    /// than dense grids.
    pub fn predictive(&self, x: &[f64]) -> Result<f64> {
        let root = self.root_node();
        if x.len() != self.dim() || !root.region.contains(x) {
            return Err(Error::OutOfDomain(x.to_vec()));
        }
        let mut memo: HashMap<usize, Vec<f64>> = HashMap::new();
        let ratio = self.expected_ratio(self.root, x, &mut memo)?;
        Ok(self.prior.base.density(x) * ratio[self.prior.states.root_state])
    }

    /// `E[f(x) / h(x) | S(parent) = s, data]` restricted to `node`, per `s`.
    fn expected_ratio(
        &self,
        id: usize,
        x: &[f64],
        memo: &mut HashMap<usize, Vec<f64>>,
    ) -> Result<Vec<f64>> {
        if let Some(v) = memo.get(&id) {
            return Ok(v.clone());
        }
        let s = self.prior.states.len();
        let node = &self.nodes[id];
        let Some(joint) = &node.joint else {
            return Ok(vec![1.0; s]);
        };
        let mut out = vec![0.0; s];
        for (j, split) in node.splits.iter().enumerate() {
            let Some(split) = split else { continue };
            let (child, side, mass) = if x[j] <= split.cut {
                (split.left, Side::Left, split.masses.0)
            } else {
                (split.right, Side::Right, split.masses.1)
            };
            let below = self.expected_ratio(child, x, memo)?;
            for to in 0..s {
                let term = match &self.prior.states.states[to] {
                    StateKind::Stop => 1.0,
                    StateKind::Active { concentration } => {
                        let prior = BetaNodePrior::centered(concentration.at(node.depth), split.masses)?;
                        branch_mean(split.n_left, split.n_right, side, &prior) / mass * below[to]
                    }
                };
                for (from, o) in out.iter_mut().enumerate() {
                    *o += joint[from][j * s + to] * term;
                }
            }
        }
        memo.insert(id, out.clone());
        Ok(out)
    }

    /// Tree-conditional posterior density on `grid`. With `rng` set, beta
    /// branch probabilities are drawn from their conjugate posteriors;
    /// otherwise their posterior means are used.
    pub fn tree_density<R: Rng>(
        &self,
        tree: &SampledTree,
        grid: &Grid,
        mut rng: Option<&mut R>,
    ) -> Result<Vec<f64>> {
        let mut out = vec![0.0; grid.len()];
        let mut idx: Vec<usize> = (0..grid.len()).collect();
        let mut stack: Vec<(usize, usize, usize, f64)> = vec![(0, 0, idx.len(), 1.0)];
        while let Some((pos, start, end, ratio)) = stack.pop() {
            let sampled = tree.nodes[pos];
            match sampled.kind {
                SampledKind::Leaf | SampledKind::Stopped { .. } => {
                    for &i in &idx[start..end] {
                        out[i] = ratio;
                    }
                }
                SampledKind::Split {
                    dim,
                    state,
                    left,
                    right,
                } => {
                    let node = &self.nodes[sampled.node];
                    let node_depth = node.depth;
                    let split = node.splits[dim].as_ref().expect("sampled split exists");
                    let StateKind::Active { concentration } = &self.prior.states.states[state]
                    else {
                        unreachable!("split nodes are in active states");
                    };
                    let prior = BetaNodePrior::centered(concentration.at(node_depth), split.masses)?;
                    let f_left = match rng.as_deref_mut() {
                        Some(r) => Beta::new(
                            prior.alpha_left + split.n_left as f64,
                            prior.alpha_right + split.n_right as f64,
                        )
                        .map_err(|e| Error::Numerical(format!("beta posterior: {e}")))?
                        .sample(r),
                        None => branch_mean(split.n_left, split.n_right, Side::Left, &prior),
                    };
                    let slice = &mut idx[start..end];
                    let mut mid = 0;
                    for k in 0..slice.len() {
                        if grid.point(slice[k])[dim] <= split.cut {
                            slice.swap(k, mid);
                            mid += 1;
                        }
                    }
                    stack.push((right, start + mid, end, ratio * (1.0 - f_left) / split.masses.1));
                    stack.push((left, start, start + mid, ratio * f_left / split.masses.0));
                }
            }
        }
        for (o, x) in out.iter_mut().zip(grid.points()) {
            *o *= self.prior.base.density(x);
        }
        Ok(out)
    }

    /// The trees `posterior_mean_mc` draws under `seed`.
    pub fn sample_trees(&self, n_trees: usize, seed: u64) -> Vec<SampledTree> {
        (0..n_trees)
            .map(|i| self.sample_tree(&mut tree_rng(seed, i)))
            .collect()
    }

    /// Cut locations of the split nodes of `tree`, grouped by dimension.
    pub fn split_locations(&self, tree: &SampledTree) -> Vec<Vec<f64>> {
        let mut out = vec![Vec::new(); self.dim()];
        for sn in &tree.nodes {
            if let SampledKind::Split { dim, .. } = sn.kind {
                out[dim].push(self.nodes[sn.node].splits[dim].as_ref().expect("split").cut);
            }
        }
        out
    }

    /// Monte Carlo posterior mean over `n_trees` sampled trees. Tree `i`
    /// reads ChaCha stream `i` under `seed`, and partial sums are combined
    /// in a fixed order, so the result does not depend on thread count.
    pub fn posterior_mean_mc(
        &self,
        n_trees: usize,
        grid: &Grid,
        seed: u64,
        with_draws: bool,
    ) -> Result<McEstimate> {
        if n_trees == 0 {
            return Err(Error::InvalidPlan("at least one tree is required".into()));
        }
        let chunks: Vec<(usize, usize)> = (0..n_trees)
            .step_by(MC_CHUNK)
            .map(|a| (a, (a + MC_CHUNK).min(n_trees)))
            .collect();
        let partials: Vec<(Vec<f64>, Vec<Vec<f64>>)> = chunks
            .par_iter()
            .map(|&(a, b)| {
                let mut sum = vec![0.0; grid.len()];
                let mut draws = Vec::new();
                for i in a..b {
                    let mut rng = tree_rng(seed, i);
                    let tree = self.sample_tree(&mut rng);
                    let dens = self.tree_density::<ChaCha8Rng>(&tree, grid, None)?;
                    for (s, v) in sum.iter_mut().zip(&dens) {
                        *s += v;
                    }
                    if with_draws {
                        draws.push(self.tree_density(&tree, grid, Some(&mut rng))?);
                    }
                }
                Ok((sum, draws))
            })
            .collect::<Result<_>>()?;
        let mut mean = vec![0.0; grid.len()];
        let mut all_draws = Vec::new();
        for (sum, draws) in partials {
            for (m, v) in mean.iter_mut().zip(&sum) {
                *m += v;
            }
            all_draws.extend(draws);
        }
        for m in &mut mean {
            *m /= n_trees as f64;
        }
        Ok(McEstimate {
            mean,
            draws: with_draws.then_some(all_draws),
        })
    }
}
