//! Independent reference computations shared by the integration tests.
//! Nothing here calls the library's evidence, message-passing or predictive
//! code; trees are only used for their topology and cut locations, and
//! counts are recomputed from the raw data.
#![allow(dead_code)]

use ptree::latent_markov::{StateKind, StateModel};
use ptree::partition_tree::{Dataset, PartitionTree, SplitMode};
use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;

/// `ln` of the rising factorial `a (a+1) ... (a+n-1)`.
pub fn ln_rising(a: f64, n: usize) -> f64 {
    (0..n).map(|i| (a + i as f64).ln()).sum()
}

/// Log beta-binomial evidence ratio against `H`, built from rising
/// factorials: `E[F^nl (1-F)^nr] / (hl^nl hr^nr)` for `F ~ Beta(c hl, c hr)`.
pub fn ln_eta(c: f64, hl: f64, hr: f64, nl: usize, nr: usize) -> f64 {
    let (al, ar) = (c * hl, c * hr);
    ln_rising(al, nl) + ln_rising(ar, nr) - ln_rising(al + ar, nl + nr)
        - nl as f64 * hl.ln()
        - nr as f64 * hr.ln()
}

pub fn posterior_left_mean(c: f64, hl: f64, hr: f64, nl: usize, nr: usize) -> f64 {
    (c * hl + nl as f64) / (c * (hl + hr) + (nl + nr) as f64)
}

pub fn concentration_of(model: &StateModel, s: usize, depth: usize) -> Option<f64> {
    match &model.states[s] {
        StateKind::Active { concentration } => Some(concentration.at(depth)),
        StateKind::Stop => None,
    }
}

pub fn random_points(rng: &mut ChaCha8Rng, n: usize, d: usize) -> Vec<Vec<f64>> {
    (0..n).map(|_| (0..d).map(|_| rng.random::<f64>()).collect()).collect()
}

pub fn rng(seed: u64) -> ChaCha8Rng {
    ChaCha8Rng::seed_from_u64(seed)
}

/// Point ids reaching each node of a one-dimensional tree, recomputed by
/// pushing the data down the recorded cuts.
pub fn recount(tree: &PartitionTree, data: &Dataset) -> Vec<Vec<usize>> {
    let mut members = vec![Vec::new(); tree.len()];
    members[0] = (0..data.len()).collect();
    for id in 0..tree.len() {
        let node = &tree.nodes[id];
        let (Some((l, r)), Some(split)) = (node.children, &node.split) else {
            continue;
        };
        let j = split.dimension;
        let cut = split.location;
        let pts = members[id].clone();
        for i in pts {
            let v = data.coord(i, j);
            match tree.mode {
                SplitMode::FixedMidpoint => {
                    if v <= cut {
                        members[l].push(i)
                    } else {
                        members[r].push(i)
                    }
                }
                SplitMode::MedianOnData => {
                    let anchor = split.anchor_points.iter().any(|a| a.as_slice() == data.point(i));
                    if anchor || v == cut {
                        continue;
                    }
                    if v < cut {
                        members[l].push(i)
                    } else {
                        members[r].push(i)
                    }
                }
            }
        }
    }
    members
}

fn parent_of(tree: &PartitionTree) -> Vec<Option<usize>> {
    let mut parent = vec![None; tree.len()];
    for (id, node) in tree.nodes.iter().enumerate() {
        if let Some((l, r)) = node.children {
            parent[l] = Some(id);
            parent[r] = Some(id);
        }
    }
    parent
}

/// Exhaustive enumeration over latent-state assignments to the internal
/// nodes of a univariate tree under a uniform base on its bounds.
pub struct LatentEnumeration {
    pub internal: Vec<usize>,
    /// `(prior weight * likelihood ratio, assignment)` per configuration.
    pub configs: Vec<(f64, Vec<usize>)>,
    pub z: f64,
    pub counts: Vec<(usize, usize)>,
    pub masses: Vec<(f64, f64)>,
}

impl LatentEnumeration {
    pub fn new(tree: &PartitionTree, data: &Dataset, model: &StateModel) -> Self {
        let members = recount(tree, data);
        let parent = parent_of(tree);
        let internal: Vec<usize> = (0..tree.len()).filter(|&i| tree.nodes[i].children.is_some()).collect();
        let mut counts = vec![(0, 0); tree.len()];
        let mut masses = vec![(0.5, 0.5); tree.len()];
        for &id in &internal {
            let (l, r) = tree.nodes[id].children.unwrap();
            counts[id] = (members[l].len(), members[r].len());
            let reg = &tree.nodes[id].region;
            let cut = tree.nodes[id].split.as_ref().unwrap().location;
            let hl = (cut - reg.lower[0]) / (reg.upper[0] - reg.lower[0]);
            masses[id] = (hl, 1.0 - hl);
        }
        let s = model.states.len();
        let k = internal.len();
        let mut configs = Vec::new();
        let mut z = 0.0;
        for code in 0..s.pow(k as u32) {
            let mut assign = vec![usize::MAX; tree.len()];
            let mut c = code;
            for &id in &internal {
                assign[id] = c % s;
                c /= s;
            }
            let mut w = 1.0;
            for &id in &internal {
                let from = parent[id].map_or(model.root_state, |p| assign[p]);
                w *= model.transition[from][assign[id]];
                if let Some(conc) = concentration_of(model, assign[id], tree.nodes[id].depth) {
                    let (nl, nr) = counts[id];
                    w *= ln_eta(conc, masses[id].0, masses[id].1, nl, nr).exp();
                }
            }
            z += w;
            configs.push((w, assign));
        }
        Self {
            internal,
            configs,
            z,
            counts,
            masses,
        }
    }

    pub fn log_phi(&self) -> f64 {
        self.z.ln()
    }

    /// `P(S(child) = b | S(parent) = a, x)`; `None` when the conditioning
    /// event has zero posterior mass.
    pub fn transition(&self, tree: &PartitionTree, child: usize, a: usize, b: usize, root_state: usize) -> Option<f64> {
        let parent = parent_of(tree)[child];
        if parent.is_none() && a != root_state {
            return None;
        }
        let (mut num, mut den) = (0.0, 0.0);
        for (w, assign) in &self.configs {
            let pa = parent.map_or(root_state, |p| assign[p]);
            if pa == a {
                den += w;
                if assign[child] == b {
                    num += w;
                }
            }
        }
        (den > 0.0).then(|| num / den)
    }

    /// Posterior predictive density at `x` under a uniform base on `[lo, hi]`.
    pub fn predictive(&self, tree: &PartitionTree, model: &StateModel, x: f64) -> f64 {
        let bounds = &tree.bounds;
        let h = 1.0 / (bounds.upper[0] - bounds.lower[0]);
        let mut path = vec![0];
        while let Some((l, r)) = tree.nodes[*path.last().unwrap()].children {
            let cut = tree.nodes[*path.last().unwrap()].split.as_ref().unwrap().location;
            path.push(if x <= cut { l } else { r });
        }
        let mut total = 0.0;
        for (w, assign) in &self.configs {
            let mut ratio = 1.0;
            for win in path.windows(2) {
                let (p, c) = (win[0], win[1]);
                if let Some(conc) = concentration_of(model, assign[p], tree.nodes[p].depth) {
                    let (nl, nr) = self.counts[p];
                    let (hl, hr) = self.masses[p];
                    let left = posterior_left_mean(conc, hl, hr, nl, nr);
                    ratio *= if tree.nodes[p].children.unwrap().0 == c {
                        left / hl
                    } else {
                        (1.0 - left) / hr
                    };
                }
            }
            total += w * ratio;
        }
        h * total / self.z
    }
}

/// One configuration of the multivariate model on a node: a leaf, a stop,
/// or an active split on a dimension with both child configurations.
#[derive(Debug, Clone)]
pub enum Config {
    Leaf,
    Stop { state: usize },
    Split {
        dim: usize,
        dim_weight: f64,
        state: usize,
        cut: f64,
        counts: (usize, usize),
        masses: (f64, f64),
        depth: usize,
        left: Box<Config>,
        right: Box<Config>,
    },
}

pub struct MvEnumerator<'a> {
    pub data: &'a [Vec<f64>],
    pub model: &'a StateModel,
    pub lambda: Vec<f64>,
    pub partial: bool,
    pub max_depth: usize,
}

impl MvEnumerator<'_> {
    /// Every configuration below a node, recomputing cuts and memberships
    /// from scratch.
    pub fn configs(&self, lower: Vec<f64>, upper: Vec<f64>, ids: Vec<usize>, depth: usize) -> Vec<Config> {
        let d = lower.len();
        let n = ids.len();
        let leaf_size = if self.partial { d } else { 1 };
        if n <= leaf_size || depth >= self.max_depth {
            return vec![Config::Leaf];
        }
        let mut cuts = vec![0.0; d];
        let mut anchors = Vec::new();
        for j in 0..d {
            if self.partial {
                let mut order: Vec<usize> = ids.clone();
                order.sort_by(|&a, &b| self.data[a][j].total_cmp(&self.data[b][j]).then(a.cmp(&b)));
                let k = ((n as f64) * 0.5).ceil() as usize;
                let anchor = order[k - 1];
                cuts[j] = self.data[anchor][j];
                if !anchors.contains(&anchor) {
                    anchors.push(anchor);
                }
            } else {
                cuts[j] = 0.5 * (lower[j] + upper[j]);
            }
        }
        let usable: Vec<usize> = (0..d)
            .filter(|&j| cuts[j] > lower[j] && cuts[j] < upper[j] && self.lambda[j] > 0.0)
            .collect();
        if usable.is_empty() {
            return vec![Config::Leaf];
        }
        let mut out = Vec::new();
        for (s, kind) in self.model.states.iter().enumerate() {
            if kind.is_stop() {
                out.push(Config::Stop { state: s });
                continue;
            }
            for &j in &usable {
                let cut = cuts[j];
                let (mut l, mut r) = (Vec::new(), Vec::new());
                for &i in &ids {
                    let v = self.data[i][j];
                    if self.partial {
                        if anchors.contains(&i) || v == cut {
                            continue;
                        }
                        if v < cut {
                            l.push(i)
                        } else {
                            r.push(i)
                        }
                    } else if v <= cut {
                        l.push(i)
                    } else {
                        r.push(i)
                    }
                }
                let hl = (cut - lower[j]) / (upper[j] - lower[j]);
                let dim_weight = self.lambda[j] / usable.iter().map(|&u| self.lambda[u]).sum::<f64>();
                let counts = (l.len(), r.len());
                let (mut ul, mut lr) = (upper.clone(), lower.clone());
                ul[j] = cut;
                lr[j] = cut;
                let lefts = self.configs(lower.clone(), ul, l, depth + 1);
                let rights = self.configs(lr, upper.clone(), r, depth + 1);
                for a in &lefts {
                    for b in &rights {
                        out.push(Config::Split {
                            dim: j,
                            dim_weight,
                            state: s,
                            cut,
                            counts,
                            masses: (hl, 1.0 - hl),
                            depth,
                            left: Box::new(a.clone()),
                            right: Box::new(b.clone()),
                        });
                    }
                }
            }
        }
        out
    }

    /// Prior probability of `cfg` entered from parent state `from`.
    pub fn prior(&self, cfg: &Config, from: usize) -> f64 {
        match cfg {
            Config::Leaf => 1.0,
            Config::Stop { state } => self.model.transition[from][*state],
            Config::Split { dim_weight, state, left, right, .. } => {
                dim_weight
                    * self.model.transition[from][*state]
                    * self.prior(left, *state)
                    * self.prior(right, *state)
            }
        }
    }

    pub fn likelihood(&self, cfg: &Config) -> f64 {
        match cfg {
            Config::Leaf | Config::Stop { .. } => 1.0,
            Config::Split { state, counts, masses, depth, left, right, .. } => {
                let c = concentration_of(self.model, *state, *depth).unwrap();
                ln_eta(c, masses.0, masses.1, counts.0, counts.1).exp()
                    * self.likelihood(left)
                    * self.likelihood(right)
            }
        }
    }

    /// `E[f(x) / h(x)]` under the tree-conditional posterior of `cfg`.
    pub fn ratio(&self, cfg: &Config, x: &[f64]) -> f64 {
        match cfg {
            Config::Leaf | Config::Stop { .. } => 1.0,
            Config::Split { dim, state, cut, counts, masses, depth, left, right, .. } => {
                let c = concentration_of(self.model, *state, *depth).unwrap();
                let lm = posterior_left_mean(c, masses.0, masses.1, counts.0, counts.1);
                if x[*dim] <= *cut {
                    lm / masses.0 * self.ratio(left, x)
                } else {
                    (1.0 - lm) / masses.1 * self.ratio(right, x)
                }
            }
        }
    }
}

/// Posterior summaries from a full configuration enumeration at the root.
pub struct MvSummary {
    pub log_phi: f64,
    /// `P(J = j, S = s | x)` at the root; stop states collapse onto `j = 0`.
    pub root_joint: Vec<Vec<f64>>,
    pub stop_mass: Vec<f64>,
    pub configs: Vec<(f64, Config)>,
}

impl MvEnumerator<'_> {
    pub fn summarize(&self, lower: Vec<f64>, upper: Vec<f64>) -> MvSummary {
        let d = lower.len();
        let s = self.model.len();
        let ids = (0..self.data.len()).collect();
        let root = self.model.root_state;
        let configs: Vec<(f64, Config)> = self
            .configs(lower, upper, ids, 0)
            .into_iter()
            .map(|c| (self.prior(&c, root) * self.likelihood(&c), c))
            .collect();
        let z: f64 = configs.iter().map(|(w, _)| w).sum();
        let mut root_joint = vec![vec![0.0; s]; d];
        let mut stop_mass = vec![0.0; s];
        for (w, c) in &configs {
            match c {
                Config::Split { dim, state, .. } => root_joint[*dim][*state] += w / z,
                Config::Stop { state } => stop_mass[*state] += w / z,
                Config::Leaf => {}
            }
        }
        MvSummary {
            log_phi: z.ln(),
            root_joint,
            stop_mass,
            configs,
        }
    }

    pub fn predictive(&self, summary: &MvSummary, x: &[f64], base_density: f64) -> f64 {
        let z: f64 = summary.configs.iter().map(|(w, _)| w).sum();
        let num: f64 = summary.configs.iter().map(|(w, c)| w * self.ratio(c, x)).sum();
        base_density * num / z
    }
}

fn simpson_step<F: Fn(f64) -> f64>(f: &F, a: f64, b: f64, fa: f64, fm: f64, fb: f64, whole: f64, tol: f64, depth: u32) -> f64 {
    let m = 0.5 * (a + b);
    let (lm, rm) = (0.5 * (a + m), 0.5 * (m + b));
    let (flm, frm) = (f(lm), f(rm));
    let left = (m - a) / 6.0 * (fa + 4.0 * flm + fm);
    let right = (b - m) / 6.0 * (fm + 4.0 * frm + fb);
    let delta = left + right - whole;
    if depth == 0 || delta.abs() <= 15.0 * tol {
        return left + right + delta / 15.0;
    }
    simpson_step(f, a, m, fa, flm, fm, left, 0.5 * tol, depth - 1)
        + simpson_step(f, m, b, fm, frm, fb, right, 0.5 * tol, depth - 1)
}

/// Adaptive Simpson quadrature on `[a, b]`, started from `pieces` equal
/// panels so that narrow peaks are not missed.
pub fn integrate_1d<F: Fn(f64) -> f64>(f: F, a: f64, b: f64, tol: f64, pieces: usize) -> f64 {
    let w = (b - a) / pieces as f64;
    (0..pieces)
        .map(|i| {
            let (lo, hi) = (a + i as f64 * w, a + (i + 1) as f64 * w);
            let (fa, fm, fb) = (f(lo), f(0.5 * (lo + hi)), f(hi));
            let whole = (hi - lo) / 6.0 * (fa + 4.0 * fm + fb);
            simpson_step(&f, lo, hi, fa, fm, fb, whole, tol / pieces as f64, 40)
        })
        .sum()
}

/// Nested adaptive Simpson over the unit square.
pub fn integrate_unit_square<F: Fn(f64, f64) -> f64>(f: F, tol: f64, pieces: usize) -> f64 {
    integrate_1d(|x| integrate_1d(|y| f(x, y), 0.0, 1.0, tol, pieces), 0.0, 1.0, tol, pieces)
}
