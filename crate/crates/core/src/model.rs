//! Fitted models and their JSON persistence.
//!
//! A univariate model stores its partition tree in preorder together with
//! the per-node log evidences of every latent state. A multivariate model
//! stores the full expansion arena with its joint posterior. Reloading a
//! model reproduces predictions bit for bit.

use std::io::{Read, Write};

use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};
use crate::grid::Grid;
use crate::latent_markov::{LatentFit, MessageTable};
use crate::math::derive_seed;
use crate::mv_opt::{expand_and_pass, ExpansionConfig, ExpansionStats, JointPosterior};
use crate::partition_tree::{build_tree, Dataset, PartitionTree, TreeConfig};
use crate::prior::PriorSpec;
use crate::pt_kernel::LikelihoodMode;

pub const MODEL_VERSION: &str = "ptree-model/1";

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(tag = "kind", rename_all = "snake_case")]
pub enum ModelBody {
    Univariate {
        tree: PartitionTree,
        messages: MessageTable,
    },
    Multivariate {
        posterior: JointPosterior,
    },
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct FitSummary {
    pub n: usize,
    pub dim: usize,
    pub max_depth: usize,
    pub log_bayes_factor: f64,
    pub nodes: usize,
    pub leaves: usize,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct FittedModel {
    pub version: String,
    pub mode: LikelihoodMode,
    pub prior: PriorSpec,
    pub summary: FitSummary,
    pub body: ModelBody,
}

/// Density estimate on a grid with optional per-draw densities.
#[derive(Debug, Clone, PartialEq)]
pub struct Prediction {
    pub mean: Vec<f64>,
    pub draws: Vec<Vec<f64>>,
}

impl FittedModel {
    /// Fits the latent-state model: exactly on a single tree in one
    /// dimension, by full expansion in several.
    pub fn fit(
        data: &Dataset,
        prior: &PriorSpec,
        mode: LikelihoodMode,
        max_depth: i64,
        node_budget: usize,
    ) -> Result<Self> {
        prior.validate()?;
        if prior.dim() != data.dim() {
            return Err(Error::DimensionMismatch {
                expected: data.dim(),
                got: prior.dim(),
            });
        }
        let (summary, body) = if data.dim() == 1 {
            let tree = build_tree(data, &TreeConfig::new(max_depth, 0.5)?, mode.split_mode())?;
            let fit = LatentFit::new(&tree, prior)?;
            let summary = FitSummary {
                n: data.len(),
                dim: 1,
                max_depth: tree.max_depth,
                log_bayes_factor: fit.log_bayes_factor(),
                nodes: tree.len(),
                leaves: tree.leaves().count(),
            };
            let messages = fit.table;
            (summary, ModelBody::Univariate { tree, messages })
        } else {
            let mut config = ExpansionConfig::new(max_depth)?;
            config.node_budget = node_budget;
            let posterior = expand_and_pass(data, prior, mode, &config)?;
            let ExpansionStats { nodes, pruned, .. } = posterior.stats;
            let summary = FitSummary {
                n: data.len(),
                dim: data.dim(),
                max_depth: posterior.max_depth,
                log_bayes_factor: posterior.log_bayes_factor(),
                nodes,
                leaves: pruned,
            };
            (summary, ModelBody::Multivariate { posterior })
        };
        Ok(Self {
            version: MODEL_VERSION.into(),
            mode,
            prior: prior.clone(),
            summary,
            body,
        })
    }

    pub fn dim(&self) -> usize {
        self.summary.dim
    }

    /// Posterior mean on `grid`; exact in one dimension, otherwise averaged
    /// over `mc_trees` sampled trees. With `draws > 0`, also returns that
    /// many posterior density draws.
    pub fn predict(&self, grid: &Grid, draws: usize, mc_trees: usize, seed: u64) -> Result<Prediction> {
        if grid.dim() != self.dim() {
            return Err(Error::DimensionMismatch {
                expected: self.dim(),
                got: grid.dim(),
            });
        }
        match &self.body {
            ModelBody::Univariate { tree, .. } => {
                let fit = LatentFit::new(tree, &self.prior)?;
                let mean = fit.predictive_grid(grid)?;
                let draws = (0..draws as u64)
                    .map(|i| fit.posterior_draw(seed, i, grid))
                    .collect::<Result<_>>()?;
                Ok(Prediction { mean, draws })
            }
            ModelBody::Multivariate { posterior } => {
                let mean = posterior.posterior_mean_mc(mc_trees, grid, seed, false)?.mean;
                let draws = if draws > 0 {
                    posterior
                        .posterior_mean_mc(draws, grid, derive_seed(seed, &[1]), true)?
                        .draws
                        .unwrap_or_default()
                } else {
                    Vec::new()
                };
                Ok(Prediction { mean, draws })
            }
        }
    }

    pub fn to_json(&self) -> Result<String> {
        Ok(serde_json::to_string(self)?)
    }

    pub fn write<W: Write>(&self, w: W) -> Result<()> {
        Ok(serde_json::to_writer(w, self)?)
    }

    /// Parses a model, rejecting any version other than the current one.
    pub fn from_json(text: &str) -> Result<Self> {
        let value: serde_json::Value = serde_json::from_str(text)?;
        match value.get("version").and_then(|v| v.as_str()) {
            Some(MODEL_VERSION) => Ok(serde_json::from_value(value)?),
            Some(other) => Err(Error::UnknownModelVersion(other.into())),
            None => Err(Error::UnknownModelVersion("<missing>".into())),
        }
    }

    pub fn read<R: Read>(mut r: R) -> Result<Self> {
        let mut text = String::new();
        r.read_to_string(&mut text)?;
        Self::from_json(&text)
    }
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::partition_tree::Region;
    use crate::pt_kernel::BaseMeasure;

    fn prior(d: usize) -> PriorSpec {
        PriorSpec::optional_polya_tree(BaseMeasure::uniform(Region::unit(d)), 2.0, 0.5).unwrap()
    }

    #[test]
    fn univariate_round_trip_is_bit_identical() {
        let xs: Vec<f64> = (0..40).map(|i| ((i * 37 % 101) as f64 + 0.5) / 101.0).collect();
        let data = Dataset::from_values(&xs, 0.0, 1.0).unwrap();
        let model = FittedModel::fit(&data, &prior(1), LikelihoodMode::Partial, 5, 1000).unwrap();
        let back = FittedModel::from_json(&model.to_json().unwrap()).unwrap();
        assert_eq!(back, model);
        let grid = Grid::regular(&Region::unit(1), 64);
        let a = model.predict(&grid, 3, 0, 1).unwrap();
        let b = back.predict(&grid, 3, 0, 1).unwrap();
        assert_eq!(a, b);
    }

    #[test]
    fn unknown_version_is_rejected() {
        let data = Dataset::empty(Region::unit(1));
        let model = FittedModel::fit(&data, &prior(1), LikelihoodMode::Full, 2, 10).unwrap();
        let text = model.to_json().unwrap().replace(MODEL_VERSION, "ptree-model/9");
        assert!(matches!(
            FittedModel::from_json(&text),
            Err(Error::UnknownModelVersion(v)) if v == "ptree-model/9"
        ));
    }
}
