//! Run configuration assembled from an optional TOML file and flags.

use std::path::Path;

use ptree::latent_markov::StateModel;
use ptree::partition_tree::Region;
use ptree::pt_kernel::{BaseMeasure, Concentration, LikelihoodMode};
use ptree::{Error, PriorSpec, Result};
use serde::Deserialize;

/// Keys accepted in the `--config` file. Flags override file values.
#[derive(Debug, Default, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct FileConfig {
    pub mode: Option<LikelihoodMode>,
    pub max_depth: Option<i64>,
    pub states: Option<usize>,
    pub stop_prob: Option<f64>,
    pub concentration: Option<f64>,
    pub split_weights: Option<Vec<f64>>,
    pub lower: Option<Vec<f64>>,
    pub upper: Option<Vec<f64>>,
    /// Full state model; replaces `states`, `stop_prob` and `concentration`.
    pub state_model: Option<StateModel>,
}

impl FileConfig {
    pub fn load(path: Option<&Path>) -> Result<Self> {
        let Some(path) = path else {
            return Ok(Self::default());
        };
        let text = std::fs::read_to_string(path)?;
        toml::from_str(&text)
            .map_err(|e| Error::InvalidPrior(format!("config {}: {e}", path.display())))
    }
}

#[derive(Debug, Clone, PartialEq)]
pub struct RunConfig {
    pub mode: LikelihoodMode,
    pub max_depth: i64,
    pub bounds: Option<Region>,
    pub prior_states: StateModel,
    pub split_weights: Option<Vec<f64>>,
}

pub struct FitFlags {
    pub mode: Option<LikelihoodMode>,
    pub max_depth: Option<i64>,
    pub states: Option<usize>,
    pub stop_prob: Option<f64>,
    pub concentration: Option<f64>,
    pub bounds: Option<String>,
}

impl RunConfig {
    pub fn resolve(file: FileConfig, flags: FitFlags) -> Result<Self> {
        let concentration = flags.concentration.or(file.concentration).unwrap_or(2.0);
        let stop_prob = flags.stop_prob.or(file.stop_prob).unwrap_or(0.5);
        let states = flags.states.or(file.states).unwrap_or(2);
        let prior_states = match (file.state_model, flags.states) {
            (Some(m), None) => m,
            _ => match states {
                1 => StateModel::single(Concentration::Constant(concentration)),
                2 => StateModel::optional(Concentration::Constant(concentration), stop_prob)?,
                k => {
                    return Err(Error::InvalidPrior(format!(
                        "--states takes 1 or 2; use a config file for {k} states"
                    )))
                }
            },
        };
        prior_states.validate()?;
        let bounds = match flags.bounds {
            Some(text) => Some(parse_bounds(&text)?),
            None => match (file.lower, file.upper) {
                (Some(l), Some(u)) => Some(Region::new(l, u)?),
                (None, None) => None,
                _ => return Err(Error::InvalidPrior("lower and upper must be given together".into())),
            },
        };
        Ok(Self {
            mode: flags.mode.or(file.mode).unwrap_or(LikelihoodMode::Partial),
            max_depth: flags.max_depth.or(file.max_depth).unwrap_or(8),
            bounds,
            prior_states,
            split_weights: file.split_weights,
        })
    }

    pub fn prior(&self, bounds: Region) -> Result<PriorSpec> {
        let mut prior = PriorSpec {
            base: BaseMeasure::uniform(bounds),
            states: self.prior_states.clone(),
            split_weights: None,
        };
        if let Some(w) = &self.split_weights {
            prior = prior.with_split_weights(w.clone())?;
        }
        prior.validate()?;
        Ok(prior)
    }
}

/// Parses `lo:hi[,lo:hi...]`, one pair per dimension.
pub fn parse_bounds(text: &str) -> Result<Region> {
    let mut lower = Vec::new();
    let mut upper = Vec::new();
    for part in text.split(',') {
        let (a, b) = part
            .split_once(':')
            .ok_or_else(|| Error::InvalidPrior(format!("bounds entry {part:?} is not lo:hi")))?;
        let parse = |s: &str| {
            s.trim()
                .parse::<f64>()
                .map_err(|_| Error::InvalidPrior(format!("bad bound {s:?}")))
        };
        lower.push(parse(a)?);
        upper.push(parse(b)?);
    }
    Region::new(lower, upper)
}
