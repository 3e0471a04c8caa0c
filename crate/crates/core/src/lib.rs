//! Bayesian density estimation on dyadic partition trees.
//!
//! The crate fits Pólya-tree and optional-Pólya-tree models either on a
//! fixed tree of midpoint cuts (ordinary likelihood) or on a tree whose
//! cuts sit on empirical medians of the data, in which case inference uses
//! the partial likelihood that drops the density at the cut points.
//!
//! ```
//! use ptree::partition_tree::{build_partial_tree, Dataset};
//! use ptree::pt_kernel::{bayes_factor, predictive_density, BaseMeasure, Concentration};
//!
//! let data = Dataset::from_values(&[0.12, 0.31, 0.33, 0.35, 0.8], 0.0, 1.0).unwrap();
//! let tree = build_partial_tree(&data, 8, 0.5).unwrap();
//! let base = BaseMeasure::uniform(data.bounds().clone());
//! let c = Concentration::Constant(2.0);
//! let log_bf = bayes_factor(&tree, &base, &c).unwrap();
//! let f = predictive_density(&tree, &base, &c, &[0.32]).unwrap();
//! assert!(log_bf.is_finite() && f > 0.0);
//! ```

pub mod error;
pub mod grid;
pub mod latent_markov;
pub mod math;
pub mod model;
pub mod mv_opt;
pub mod partition_tree;
pub mod prior;
pub mod pt_kernel;
pub mod ref_densities;
pub mod risk_harness;

pub use error::{Error, Result};
pub use grid::Grid;
pub use prior::PriorSpec;
