//! Pólya trees with latent Markov states on the nodes.
//!
//! Each node carries a state `S(A)` drawn from a transition matrix given its
//! parent's state. Active states put a beta prior on the branch
//! probability; stopping states fix `F(. | A) = H(. | A)` for the whole
//! subtree. A bottom-up pass computes the per-state Bayes factors
//! `phi_s(A)`, from which posterior transitions and the exact posterior
//! predictive follow.

use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;
use rand_distr::{Beta, Distribution};
use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};
use crate::grid::Grid;
use crate::math::log_sum_exp;
use crate::partition_tree::PartitionTree;
use crate::prior::PriorSpec;
use crate::pt_kernel::{
    branch_mean, side_of, split_masses, BetaNodePrior, Concentration, EvidenceEval, Side,
};

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(tag = "kind", rename_all = "snake_case")]
pub enum StateKind {
    Active { concentration: Concentration },
    Stop,
}

impl StateKind {
    pub fn is_stop(&self) -> bool {
        matches!(self, StateKind::Stop)
    }
}

/// Finite state space with a node-homogeneous transition matrix. The root
/// is entered from a virtual parent in `root_state`.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct StateModel {
    pub states: Vec<StateKind>,
    pub transition: Vec<Vec<f64>>,
    #[serde(default)]
    pub root_state: usize,
}

impl StateModel {
    pub fn single(concentration: Concentration) -> Self {
        Self {
            states: vec![StateKind::Active { concentration }],
            transition: vec![vec![1.0]],
            root_state: 0,
        }
    }

    pub fn optional(concentration: Concentration, stop_prob: f64) -> Result<Self> {
        let m = Self {
            states: vec![StateKind::Active { concentration }, StateKind::Stop],
            transition: vec![vec![1.0 - stop_prob, stop_prob], vec![0.0, 1.0]],
            root_state: 0,
        };
        m.validate()?;
        Ok(m)
    }

    pub fn len(&self) -> usize {
        self.states.len()
    }

    pub fn is_empty(&self) -> bool {
        self.states.is_empty()
    }

    pub fn validate(&self) -> Result<()> {
        let s = self.states.len();
        if s == 0 {
            return Err(Error::InvalidPrior("state model has no states".into()));
        }
        if self.root_state >= s {
            return Err(Error::InvalidPrior(format!("root state {} out of range", self.root_state)));
        }
        if self.transition.len() != s || self.transition.iter().any(|r| r.len() != s) {
            return Err(Error::InvalidPrior(format!("transition matrix must be {s}x{s}")));
        }
        for (i, row) in self.transition.iter().enumerate() {
            if row.iter().any(|p| !(0.0..=1.0).contains(p)) {
                return Err(Error::InvalidPrior(format!("transition row {i} has entries outside [0, 1]")));
            }
            if (row.iter().sum::<f64>() - 1.0).abs() > 1e-12 {
                return Err(Error::InvalidPrior(format!("transition row {i} does not sum to one")));
            }
            if self.states[i].is_stop() && row[i] != 1.0 {
                return Err(Error::InvalidPrior(format!("stopping state {i} must be absorbing")));
            }
        }
        for st in &self.states {
            if let StateKind::Active { concentration } = st {
                concentration.validate()?;
            }
        }
        Ok(())
    }

    pub(crate) fn log_transition(&self) -> Vec<Vec<f64>> {
        self.transition
            .iter()
            .map(|r| r.iter().map(|p| p.ln()).collect())
            .collect()
    }
}

/// Bottom-up messages. `log_phi[node][s]` is `ln phi_s(A)` given that the
/// parent of `A` is in state `s`; `log_eta[node][s]` is the node evidence
/// under state `s`.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct MessageTable {
    pub log_phi: Vec<Vec<f64>>,
    pub log_eta: Vec<Vec<f64>>,
}

impl MessageTable {
    /// `ln phi(Omega)` entered from the root state.
    pub fn log_bayes_factor(&self, model: &StateModel) -> f64 {
        self.log_phi[0][model.root_state]
    }
}

pub fn message_pass(tree: &PartitionTree, prior: &PriorSpec) -> Result<MessageTable> {
    message_pass_with(tree, prior, &mut EvidenceEval::Exact)
}

pub fn message_pass_with(
    tree: &PartitionTree,
    prior: &PriorSpec,
    eval: &mut EvidenceEval,
) -> Result<MessageTable> {
    let model = &prior.states;
    model.validate()?;
    let s = model.len();
    let log_rho = model.log_transition();
    let masses = split_masses(tree, &prior.base)?;
    let mut log_phi = vec![vec![0.0; s]; tree.len()];
    let mut log_eta = vec![vec![0.0; s]; tree.len()];
    let mut terms = vec![0.0; s];
    // preorder: children always follow their parent
    for id in (0..tree.len()).rev() {
        let node = &tree.nodes[id];
        let (Some((l, r)), Some((nl, nr)), Some(m)) = (node.children, node.split_counts(), masses[id])
        else {
            continue;
        };
        if node.n_total <= 1 {
            continue;
        }
        for (k, st) in model.states.iter().enumerate() {
            log_eta[id][k] = match st {
                StateKind::Stop => 0.0,
                StateKind::Active { concentration } => {
                    eval.centered(concentration.at(node.depth), m, nl, nr)?.log_eta
                }
            };
        }
        for from in 0..s {
            for to in 0..s {
                terms[to] = log_rho[from][to] + log_eta[id][to] + log_phi[l][to] + log_phi[r][to];
            }
            log_phi[id][from] = log_sum_exp(&terms);
        }
    }
    Ok(MessageTable { log_phi, log_eta })
}

/// Posterior transition matrices; `None` on nodes where the recursion
/// terminates.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct PosteriorTransition {
    pub matrices: Vec<Option<Vec<Vec<f64>>>>,
}

pub fn posterior_transitions(
    tree: &PartitionTree,
    table: &MessageTable,
    model: &StateModel,
) -> Result<PosteriorTransition> {
    let s = model.len();
    let log_rho = model.log_transition();
    let matrices = tree
        .nodes
        .iter()
        .enumerate()
        .map(|(id, node)| {
            let Some((l, r)) = node.children else {
                return Ok(None);
            };
            if node.n_total <= 1 {
                return Ok(None);
            }
            let mut mat = vec![vec![0.0; s]; s];
            for (from, row) in mat.iter_mut().enumerate() {
                let denom = table.log_phi[id][from];
                if denom == f64::NEG_INFINITY {
                    return Err(Error::Numerical(format!(
                        "phi vanishes at node {id} for parent state {from}"
                    )));
                }
                for (to, v) in row.iter_mut().enumerate() {
                    *v = (log_rho[from][to] + table.log_eta[id][to] + table.log_phi[l][to]
                        + table.log_phi[r][to]
                        - denom)
                        .exp();
                }
            }
            Ok(Some(mat))
        })
        .collect::<Result<Vec<_>>>()?;
    Ok(PosteriorTransition { matrices })
}

/// A fitted latent-state model on one tree.
#[derive(Debug, Clone)]
pub struct LatentFit<'a> {
    pub tree: &'a PartitionTree,
    pub prior: &'a PriorSpec,
    pub table: MessageTable,
    pub posterior: PosteriorTransition,
}

impl<'a> LatentFit<'a> {
    pub fn new(tree: &'a PartitionTree, prior: &'a PriorSpec) -> Result<Self> {
        Self::with_eval(tree, prior, &mut EvidenceEval::Exact)
    }

    pub fn with_eval(
        tree: &'a PartitionTree,
        prior: &'a PriorSpec,
        eval: &mut EvidenceEval,
    ) -> Result<Self> {
        let table = message_pass_with(tree, prior, eval)?;
        let posterior = posterior_transitions(tree, &table, &prior.states)?;
        Ok(Self {
            tree,
            prior,
            table,
            posterior,
        })
    }

    pub fn log_bayes_factor(&self) -> f64 {
        self.table.log_bayes_factor(&self.prior.states)
    }

    /// Per-state branch ratio `varphi_s` for the child of `parent` on `side`.
    fn varphi(&self, parent: usize, side: Side, state: usize, masses: (f64, f64)) -> Result<f64> {
        match &self.prior.states.states[state] {
            StateKind::Stop => Ok(1.0),
            StateKind::Active { concentration } => {
                let node = &self.tree.nodes[parent];
                let (nl, nr) = node.split_counts().unwrap_or((0, 0));
                let prior = BetaNodePrior::centered(concentration.at(node.depth), masses)?;
                let mean = branch_mean(nl, nr, side, &prior);
                Ok(match side {
                    Side::Left => mean / masses.0,
                    Side::Right => mean / masses.1,
                })
            }
        }
    }

    /// Exact posterior predictive density at `x`.
    pub fn predictive(&self, x: &[f64]) -> Result<f64> {
        let path = self.tree.locate(x)?;
        let s = self.prior.states.len();
        let mut xi = vec![1.0; s];
        let mut next = vec![0.0; s];
        for w in path.windows(2).rev() {
            let (parent, child) = (w[0], w[1]);
            let Some(mat) = &self.posterior.matrices[parent] else {
                continue;
            };
            let masses = self.tree.base_masses(parent, &self.prior.base)?;
            let side = side_of(self.tree, parent, child);
            let weighted: Vec<f64> = (0..s)
                .map(|to| Ok(self.varphi(parent, side, to, masses)? * xi[to]))
                .collect::<Result<_>>()?;
            for (from, v) in next.iter_mut().enumerate() {
                *v = (0..s).map(|to| mat[from][to] * weighted[to]).sum();
            }
            std::mem::swap(&mut xi, &mut next);
        }
        Ok(self.prior.base.density(x) * xi[self.prior.states.root_state])
    }

    pub fn predictive_grid(&self, grid: &Grid) -> Result<Vec<f64>> {
        grid.points().map(|x| self.predictive(x)).collect()
    }

    /// Posterior marginal `P(S(A) = s | x)` for every node with a transition.
    pub fn state_marginals(&self) -> Vec<Option<Vec<f64>>> {
        let s = self.prior.states.len();
        let mut entering: Vec<Vec<f64>> = vec![vec![0.0; s]; self.tree.len()];
        entering[0][self.prior.states.root_state] = 1.0;
        let mut out = vec![None; self.tree.len()];
        for id in 0..self.tree.len() {
            let Some(mat) = &self.posterior.matrices[id] else {
                continue;
            };
            let marg: Vec<f64> = (0..s)
                .map(|to| (0..s).map(|from| entering[id][from] * mat[from][to]).sum())
                .collect();
            if let Some((l, r)) = self.tree.nodes[id].children {
                entering[l] = marg.clone();
                entering[r] = marg.clone();
            }
            out[id] = Some(marg);
        }
        out
    }

    /// One posterior density realization: states drawn top-down from the
    /// posterior transitions, then beta branch probabilities in active
    /// nodes. Stopped subtrees keep the base measure.
    pub fn sample_density<R: Rng>(&self, rng: &mut R, grid: &Grid) -> Result<Vec<f64>> {
        let tree = self.tree;
        let masses = split_masses(tree, &self.prior.base)?;
        let mut state = vec![self.prior.states.root_state; tree.len()];
        let mut entering = vec![self.prior.states.root_state; tree.len()];
        let mut ratios = vec![(1.0, 1.0); tree.len()];
        for id in 0..tree.len() {
            let node = &tree.nodes[id];
            let from = entering[id];
            let current = match &self.posterior.matrices[id] {
                Some(mat) => draw_index(&mat[from], rng),
                None => from,
            };
            state[id] = current;
            if let (Some((l, r)), Some(m), Some(_)) =
                (node.children, masses[id], &self.posterior.matrices[id])
            {
                entering[l] = current;
                entering[r] = current;
                if let StateKind::Active { concentration } = &self.prior.states.states[current] {
                    let (nl, nr) = node.split_counts().unwrap_or((0, 0));
                    let p = BetaNodePrior::centered(concentration.at(node.depth), m)?;
                    let beta = Beta::new(p.alpha_left + nl as f64, p.alpha_right + nr as f64)
                        .map_err(|e| Error::Numerical(format!("beta posterior: {e}")))?;
                    let f = beta.sample(rng);
                    ratios[id] = (f / m.0, (1.0 - f) / m.1);
                }
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
                Ok(self.prior.base.density(x) * ratio)
            })
            .collect()
    }

    /// Draw `index` of a reproducible family of posterior draws.
    pub fn posterior_draw(&self, master_seed: u64, index: u64, grid: &Grid) -> Result<Vec<f64>> {
        let mut rng = ChaCha8Rng::seed_from_u64(master_seed);
        rng.set_stream(index);
        self.sample_density(&mut rng, grid)
    }
}

pub(crate) fn draw_index<R: Rng>(probs: &[f64], rng: &mut R) -> usize {
    let u: f64 = rng.random();
    let mut acc = 0.0;
    let mut last = 0;
    for (i, p) in probs.iter().enumerate() {
        if *p > 0.0 {
            last = i;
            acc += p;
            if u < acc {
                return i;
            }
        }
    }
    last
}

/// Exact predictive density from the message table and transitions.
pub fn predictive_density_latent(
    tree: &PartitionTree,
    prior: &PriorSpec,
    table: &MessageTable,
    posterior: &PosteriorTransition,
    query: &[f64],
) -> Result<f64> {
    LatentFit {
        tree,
        prior,
        table: table.clone(),
        posterior: posterior.clone(),
    }
    .predictive(query)
}
