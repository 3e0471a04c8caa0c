//! Dyadic partition trees over a rectangular sample space.
//!
//! Two constructions are provided. The data-dependent tree cuts every node
//! at an empirical order statistic of its own points (the median by
//! default) and removes the observations it cuts on from both children.
//! The fixed tree cuts at geometric midpoints and removes nothing.

mod dataset;

use serde::{Deserialize, Serialize};

pub use dataset::{Dataset, Region};

use crate::error::{Error, Result};
use crate::pt_kernel::BaseMeasure;

#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum SplitMode {
    MedianOnData,
    FixedMidpoint,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct SplitSpec {
    pub mode: SplitMode,
    pub dimension: usize,
    pub location: f64,
    /// 1-based rank of the cut point among the node's values on `dimension`.
    pub order_index: Option<usize>,
    /// Every per-dimension anchor removed at this node (data-dependent mode).
    pub anchor_points: Vec<Vec<f64>>,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct PartitionNode {
    pub region: Region,
    pub depth: usize,
    pub n_total: usize,
    /// Candidate cut per dimension; empty on leaves.
    pub cuts: Vec<f64>,
    pub counts_left: Vec<usize>,
    pub counts_right: Vec<usize>,
    /// Non-anchor observations lying exactly on the cut, per dimension.
    pub tie_counts: Vec<usize>,
    /// Distinct observations removed as anchors.
    pub n_anchors: usize,
    pub split: Option<SplitSpec>,
    pub children: Option<(usize, usize)>,
}

impl PartitionNode {
    pub fn is_leaf(&self) -> bool {
        self.children.is_none()
    }

    /// `n({x_A})` on dimension `j`: anchors plus duplicates of the cut value.
    pub fn tie_count(&self, j: usize) -> usize {
        self.tie_counts.get(j).map_or(0, |t| t + self.n_anchors)
    }

    /// Child counts `(n(A_l), n(A_r))` for the realized split.
    pub fn split_counts(&self) -> Option<(usize, usize)> {
        let s = self.split.as_ref()?;
        Some((self.counts_left[s.dimension], self.counts_right[s.dimension]))
    }

    fn leaf(region: Region, depth: usize, n_total: usize) -> Self {
        Self {
            region,
            depth,
            n_total,
            cuts: Vec::new(),
            counts_left: Vec::new(),
            counts_right: Vec::new(),
            tie_counts: Vec::new(),
            n_anchors: 0,
            split: None,
            children: None,
        }
    }
}

/// Construction parameters shared by both tree kinds.
#[derive(Debug, Clone, Copy, PartialEq)]
pub struct TreeConfig {
    pub max_depth: usize,
    pub quantile: f64,
    /// Nodes with at most this many points are leaves. `None` means one in
    /// fixed mode and `d` in data-dependent mode.
    pub leaf_size: Option<usize>,
}

impl TreeConfig {
    pub fn new(max_depth: i64, quantile: f64) -> Result<Self> {
        if max_depth < 0 {
            return Err(Error::DepthNegative(max_depth));
        }
        if !(quantile > 0.0 && quantile < 1.0) {
            return Err(Error::InvalidQuantile(quantile));
        }
        Ok(Self {
            max_depth: max_depth as usize,
            quantile,
            leaf_size: None,
        })
    }

    pub fn leaf_size_for(&self, mode: SplitMode, dim: usize) -> usize {
        self.leaf_size.unwrap_or(match mode {
            SplitMode::FixedMidpoint => 1,
            SplitMode::MedianOnData => dim.max(1),
        })
    }
}

/// Per-dimension outcome of cutting a node.
#[derive(Debug, Clone)]
pub(crate) struct DimSplit {
    pub cut: f64,
    pub order_index: Option<usize>,
    pub left: Vec<usize>,
    pub right: Vec<usize>,
    pub ties: usize,
    pub interior: bool,
}

#[derive(Debug, Clone)]
pub(crate) struct NodeSplits {
    pub anchors: Vec<usize>,
    pub per_dim: Vec<DimSplit>,
}

/// 1-based order index `ceil(n * p)`, clamped to `1..=n`.
pub fn order_index(n: usize, p: f64) -> usize {
    ((n as f64 * p).ceil() as usize).clamp(1, n.max(1))
}

/// Computes every per-dimension candidate split of the points `idx` in
/// `region`. Ties in coordinate values are broken by observation index, so
/// the result is a deterministic function of the data.
pub(crate) fn candidate_splits(
    data: &Dataset,
    idx: &[usize],
    region: &Region,
    mode: SplitMode,
    quantile: f64,
) -> NodeSplits {
    let d = data.dim();
    match mode {
        SplitMode::FixedMidpoint => {
            let per_dim = (0..d)
                .map(|j| {
                    let cut = region.midpoint(j);
                    let (left, right): (Vec<usize>, Vec<usize>) =
                        idx.iter().partition(|&&i| data.coord(i, j) <= cut);
                    DimSplit {
                        cut,
                        order_index: None,
                        left,
                        right,
                        ties: 0,
                        interior: region.is_interior_cut(j, cut),
                    }
                })
                .collect();
            NodeSplits {
                anchors: Vec::new(),
                per_dim,
            }
        }
        SplitMode::MedianOnData => {
            let k = order_index(idx.len(), quantile);
            let mut scratch = idx.to_vec();
            let mut picks = Vec::with_capacity(d);
            for j in 0..d {
                let (_, &mut anchor, _) = scratch.select_nth_unstable_by(k - 1, |&a, &b| {
                    data.coord(a, j)
                        .total_cmp(&data.coord(b, j))
                        .then(a.cmp(&b))
                });
                picks.push(anchor);
            }
            let mut anchors = picks.clone();
            anchors.sort_unstable();
            anchors.dedup();
            let remaining: Vec<usize> = idx
                .iter()
                .copied()
                .filter(|i| anchors.binary_search(i).is_err())
                .collect();
            let per_dim = picks
                .iter()
                .enumerate()
                .map(|(j, &a)| {
                    let cut = data.coord(a, j);
                    let mut left = Vec::new();
                    let mut right = Vec::new();
                    let mut ties = 0;
                    for &i in &remaining {
                        let v = data.coord(i, j);
                        if v < cut {
                            left.push(i);
                        } else if v > cut {
                            right.push(i);
                        } else {
                            ties += 1;
                        }
                    }
                    DimSplit {
                        cut,
                        order_index: Some(k),
                        left,
                        right,
                        ties,
                        interior: region.is_interior_cut(j, cut),
                    }
                })
                .collect();
            NodeSplits { anchors, per_dim }
        }
    }
}

/// A finished partition tree; nodes are stored in preorder, root first.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct PartitionTree {
    pub mode: SplitMode,
    pub bounds: Region,
    pub max_depth: usize,
    pub nodes: Vec<PartitionNode>,
}

impl PartitionTree {
    pub fn root(&self) -> &PartitionNode {
        &self.nodes[0]
    }

    pub fn dim(&self) -> usize {
        self.bounds.dim()
    }

    pub fn len(&self) -> usize {
        self.nodes.len()
    }

    pub fn is_empty(&self) -> bool {
        self.nodes.is_empty()
    }

    pub fn leaves(&self) -> impl Iterator<Item = &PartitionNode> {
        self.nodes.iter().filter(|n| n.is_leaf())
    }

    /// Node ids from the root to the leaf containing `x`. A point exactly on
    /// a cut follows the left branch.
    pub fn locate(&self, x: &[f64]) -> Result<Vec<usize>> {
        if !self.bounds.contains(x) {
            return Err(Error::OutOfDomain(x.to_vec()));
        }
        let mut path = vec![0];
        let mut id = 0;
        while let (Some((l, r)), Some(s)) = (self.nodes[id].children, &self.nodes[id].split) {
            id = if x[s.dimension] <= s.location { l } else { r };
            path.push(id);
        }
        Ok(path)
    }

    /// Realized cut locations grouped by dimension.
    pub fn split_locations(&self) -> Vec<Vec<f64>> {
        let mut out = vec![Vec::new(); self.dim()];
        for s in self.nodes.iter().filter_map(|n| n.split.as_ref()) {
            out[s.dimension].push(s.location);
        }
        out
    }

    /// Conditional base masses of the realized split at node `id`.
    pub fn base_masses(&self, id: usize, base: &BaseMeasure) -> Result<(f64, f64)> {
        let node = &self.nodes[id];
        let s = node
            .split
            .as_ref()
            .ok_or_else(|| Error::Numerical("base masses requested on a leaf".into()))?;
        node_base_mass(node, base, s.dimension)
    }
}

/// `(H(A_{j,l} | A), H(A_{j,r} | A))` for the candidate cut of `node` on `j`.
pub fn node_base_mass(node: &PartitionNode, base: &BaseMeasure, j: usize) -> Result<(f64, f64)> {
    let cut = *node
        .cuts
        .get(j)
        .ok_or_else(|| Error::Numerical(format!("node has no cut on dimension {j}")))?;
    base.conditional_masses(&node.region, j, cut)
}

/// Builds the data-dependent tree with cuts at the `ceil(n p)`-th order
/// statistic.
pub fn build_partial_tree(data: &Dataset, max_depth: i64, quantile: f64) -> Result<PartitionTree> {
    build_tree(data, &TreeConfig::new(max_depth, quantile)?, SplitMode::MedianOnData)
}

/// Builds the fixed dyadic tree with midpoint cuts.
pub fn build_fixed_tree(data: &Dataset, max_depth: i64) -> Result<PartitionTree> {
    build_tree(data, &TreeConfig::new(max_depth, 0.5)?, SplitMode::FixedMidpoint)
}

pub fn build_tree(data: &Dataset, config: &TreeConfig, mode: SplitMode) -> Result<PartitionTree> {
    let bounds = data.bounds().clone();
    Region::new(bounds.lower.clone(), bounds.upper.clone())?;
    let mut tree = PartitionTree {
        mode,
        bounds: bounds.clone(),
        max_depth: config.max_depth,
        nodes: Vec::new(),
    };
    let leaf_size = config.leaf_size_for(mode, data.dim());
    let all: Vec<usize> = (0..data.len()).collect();
    grow(
        &mut tree,
        data,
        all,
        bounds,
        0,
        &Grow {
            config,
            mode,
            leaf_size,
        },
    );
    Ok(tree)
}

struct Grow<'a> {
    config: &'a TreeConfig,
    mode: SplitMode,
    leaf_size: usize,
}

fn grow(
    tree: &mut PartitionTree,
    data: &Dataset,
    idx: Vec<usize>,
    region: Region,
    depth: usize,
    g: &Grow<'_>,
) -> usize {
    let id = tree.nodes.len();
    let n = idx.len();
    if n <= g.leaf_size || depth >= g.config.max_depth {
        tree.nodes.push(PartitionNode::leaf(region, depth, n));
        return id;
    }
    let splits = candidate_splits(data, &idx, &region, g.mode, g.config.quantile);
    let d = data.dim();
    let Some(dim) = (0..d).map(|o| (depth + o) % d).find(|&j| splits.per_dim[j].interior) else {
        tree.nodes.push(PartitionNode::leaf(region, depth, n));
        return id;
    };
    let chosen = &splits.per_dim[dim];
    let spec = SplitSpec {
        mode: g.mode,
        dimension: dim,
        location: chosen.cut,
        order_index: chosen.order_index,
        anchor_points: splits
            .anchors
            .iter()
            .map(|&i| data.point(i).to_vec())
            .collect(),
    };
    let (left_region, right_region) = region.split(dim, chosen.cut);
    tree.nodes.push(PartitionNode {
        region,
        depth,
        n_total: n,
        cuts: splits.per_dim.iter().map(|s| s.cut).collect(),
        counts_left: splits.per_dim.iter().map(|s| s.left.len()).collect(),
        counts_right: splits.per_dim.iter().map(|s| s.right.len()).collect(),
        tie_counts: splits.per_dim.iter().map(|s| s.ties).collect(),
        n_anchors: splits.anchors.len(),
        split: Some(spec),
        children: None,
    });
    let mut per_dim = splits.per_dim;
    let chosen = per_dim.swap_remove(dim);
    let l = grow(tree, data, chosen.left, left_region, depth + 1, g);
    let r = grow(tree, data, chosen.right, right_region, depth + 1, g);
    tree.nodes[id].children = Some((l, r));
    id
}
