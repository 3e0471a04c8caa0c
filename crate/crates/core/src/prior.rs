use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};
use crate::latent_markov::StateModel;
use crate::pt_kernel::{BaseMeasure, Concentration};

/// Full set of tree-prior hyperparameters: base measure, latent-state
/// model (one active state for a plain Pólya tree) and, in several
/// dimensions, the prior weights of the splitting dimension.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct PriorSpec {
    pub base: BaseMeasure,
    pub states: StateModel,
    #[serde(default)]
    pub split_weights: Option<Vec<f64>>,
}

impl PriorSpec {
    pub fn polya_tree(base: BaseMeasure, concentration: Concentration) -> Self {
        Self {
            base,
            states: StateModel::single(concentration),
            split_weights: None,
        }
    }

    /// Optional Pólya tree: an active state with concentration `c` and an
    /// absorbing stopping state entered with probability `stop_prob`.
    pub fn optional_polya_tree(base: BaseMeasure, c: f64, stop_prob: f64) -> Result<Self> {
        Ok(Self {
            base,
            states: StateModel::optional(Concentration::Constant(c), stop_prob)?,
            split_weights: None,
        })
    }

    pub fn with_split_weights(mut self, weights: Vec<f64>) -> Result<Self> {
        self.split_weights = Some(weights);
        self.validate()?;
        Ok(self)
    }

    pub fn dim(&self) -> usize {
        self.base.dim()
    }

    /// `lambda_j`, uniform unless set.
    pub fn split_weights(&self) -> Vec<f64> {
        self.split_weights
            .clone()
            .unwrap_or_else(|| vec![1.0 / self.dim() as f64; self.dim()])
    }

    pub fn validate(&self) -> Result<()> {
        self.states.validate()?;
        if let Some(w) = &self.split_weights {
            if w.len() != self.dim() {
                return Err(Error::DimensionMismatch {
                    expected: self.dim(),
                    got: w.len(),
                });
            }
            let sum: f64 = w.iter().sum();
            if w.iter().any(|v| !(*v >= 0.0)) || (sum - 1.0).abs() > 1e-12 {
                return Err(Error::InvalidPrior(format!(
                    "split weights must be non-negative and sum to one: {w:?}"
                )));
            }
        }
        Ok(())
    }
}
