//! Monte Carlo risk experiments comparing the two likelihood modes.
//!
//! Each replicate draws one sample per size from the scenario density and
//! fits both modes at every depth on that same sample. One-dimensional fits
//! use the exact optional-Pólya-tree predictive; two-dimensional fits use
//! the Monte Carlo posterior mean over sampled trees.

use std::collections::BTreeMap;
use std::fmt;
use std::io::{BufRead, Write};
use std::str::FromStr;

use rand::SeedableRng;
use rand_chacha::ChaCha8Rng;
use rayon::prelude::*;
use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};
use crate::grid::Grid;
use crate::latent_markov::LatentFit;
use crate::math::derive_seed;
use crate::mv_opt::{expand_and_pass, ExpansionConfig, DEFAULT_NODE_BUDGET};
use crate::partition_tree::{build_tree, Dataset, Region, TreeConfig};
use crate::prior::PriorSpec;
use crate::pt_kernel::{BaseMeasure, LikelihoodMode};
use crate::ref_densities::{scenario, ScenarioDensity};

#[derive(Debug, Clone, Copy, PartialEq, Eq, PartialOrd, Ord, Hash, Serialize, Deserialize)]
pub enum Metric {
    L1,
    L2,
    Linf,
}

impl Metric {
    pub const ALL: [Metric; 3] = [Metric::L1, Metric::L2, Metric::Linf];

    pub fn as_str(self) -> &'static str {
        match self {
            Metric::L1 => "L1",
            Metric::L2 => "L2",
            Metric::Linf => "Linf",
        }
    }
}

impl fmt::Display for Metric {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        f.write_str(self.as_str())
    }
}

impl FromStr for Metric {
    type Err = Error;

    fn from_str(s: &str) -> Result<Self> {
        match s.to_ascii_lowercase().as_str() {
            "l1" => Ok(Metric::L1),
            "l2" => Ok(Metric::L2),
            "linf" => Ok(Metric::Linf),
            _ => Err(Error::InvalidPlan(format!("unknown metric {s:?}"))),
        }
    }
}

/// Distance between two densities tabulated on the same regular grid.
pub fn loss(estimate: &[f64], truth: &[f64], metric: Metric, cell_volume: f64) -> Result<f64> {
    if estimate.len() != truth.len() {
        return Err(Error::GridMismatch(format!(
            "{} estimate values against {} truth values",
            estimate.len(),
            truth.len()
        )));
    }
    let diffs = estimate.iter().zip(truth).map(|(a, b)| (a - b).abs());
    Ok(match metric {
        Metric::L1 => diffs.sum::<f64>() * cell_volume,
        Metric::L2 => (diffs.map(|v| v * v).sum::<f64>() * cell_volume).sqrt(),
        Metric::Linf => diffs.fold(0.0, f64::max),
    })
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct ExperimentPlan {
    pub scenario: String,
    pub sample_sizes: Vec<usize>,
    pub depths: Vec<usize>,
    pub modes: Vec<LikelihoodMode>,
    pub replicates: usize,
    pub master_seed: u64,
    /// Cells per dimension of the risk grid.
    pub grid: usize,
    pub metrics: Vec<Metric>,
    /// Sampled trees per two-dimensional fit.
    pub mc_trees: usize,
    pub stop_prob: f64,
    pub concentration: f64,
    pub node_budget: usize,
}

impl ExperimentPlan {
    /// Desk-scale defaults; 4096 cells in one dimension, 256 per axis in two.
    pub fn new(scenario_name: &str, master_seed: u64) -> Result<Self> {
        let dim = scenario(scenario_name)?.dim;
        Ok(Self {
            scenario: scenario_name.into(),
            sample_sizes: vec![500, 5000],
            depths: (1..=12).collect(),
            modes: vec![LikelihoodMode::Partial, LikelihoodMode::Full],
            replicates: 20,
            master_seed,
            grid: if dim == 1 { 4096 } else { 256 },
            metrics: Metric::ALL.to_vec(),
            mc_trees: 200,
            stop_prob: 0.5,
            concentration: 2.0,
            node_budget: DEFAULT_NODE_BUDGET,
        })
    }

    pub fn validate(&self) -> Result<()> {
        let fail = |m: &str| Err(Error::InvalidPlan(m.into()));
        scenario(&self.scenario)?;
        if self.replicates == 0 {
            return fail("replicates must be at least 1");
        }
        if self.sample_sizes.is_empty() || self.depths.is_empty() {
            return fail("sample sizes and depths must be non-empty");
        }
        if self.depths.windows(2).any(|w| w[0] >= w[1]) {
            return fail("depths must be strictly ascending");
        }
        if self.grid < 64 {
            return fail("grid must have at least 64 cells per dimension");
        }
        if self.modes.is_empty() || self.metrics.is_empty() {
            return fail("modes and metrics must be non-empty");
        }
        if self.mc_trees == 0 {
            return fail("mc_trees must be at least 1");
        }
        if !(0.0..=1.0).contains(&self.stop_prob) {
            return fail("stop_prob must lie in [0, 1]");
        }
        if !(self.concentration > 0.0 && self.concentration.is_finite()) {
            return fail("concentration must be positive");
        }
        Ok(())
    }

    /// Reads a flat `key = value` plan. Lists are comma separated and
    /// depths also accept an inclusive range `a..b`; `#` starts a comment.
    pub fn parse<R: BufRead>(reader: R) -> Result<Self> {
        Self::parse_with_seed(reader, None)
    }

    /// As [`ExperimentPlan::parse`]; a given `seed` replaces the plan's
    /// `seed` key, which then becomes optional.
    pub fn parse_with_seed<R: BufRead>(reader: R, seed: Option<u64>) -> Result<Self> {
        let mut entries: BTreeMap<String, (usize, String)> = BTreeMap::new();
        for (i, line) in reader.lines().enumerate() {
            let line = line?;
            let body = line.split('#').next().unwrap_or("").trim();
            if body.is_empty() {
                continue;
            }
            let (k, v) = body.split_once('=').ok_or_else(|| Error::Parse {
                line: i + 1,
                message: format!("expected key = value, got {body:?}"),
            })?;
            entries.insert(k.trim().to_string(), (i + 1, v.trim().to_string()));
        }
        let take = |entries: &mut BTreeMap<String, (usize, String)>, key: &str| entries.remove(key);
        let mut e = entries;
        let (_, name) = take(&mut e, "scenario")
            .ok_or_else(|| Error::InvalidPlan("missing key: scenario".into()))?;
        let file_seed = take(&mut e, "seed")
            .map(|(_, v)| parse_value::<u64>(&v, "seed"))
            .transpose()?;
        let seed = seed
            .or(file_seed)
            .ok_or_else(|| Error::InvalidPlan("missing key: seed".into()))?;
        let mut plan = Self::new(&name, seed)?;
        if let Some((_, v)) = take(&mut e, "sample_sizes") {
            plan.sample_sizes = parse_list(&v, "sample_sizes")?;
        }
        if let Some((_, v)) = take(&mut e, "depths") {
            plan.depths = match v.split_once("..") {
                Some((a, b)) => {
                    (parse_value(a.trim(), "depths")?..=parse_value(b.trim(), "depths")?).collect()
                }
                None => parse_list(&v, "depths")?,
            };
        }
        if let Some((_, v)) = take(&mut e, "modes") {
            plan.modes = parse_list(&v, "modes")?;
        }
        if let Some((_, v)) = take(&mut e, "metrics") {
            plan.metrics = parse_list(&v, "metrics")?;
        }
        if let Some((_, v)) = take(&mut e, "replicates") {
            plan.replicates = parse_value(&v, "replicates")?;
        }
        if let Some((_, v)) = take(&mut e, "grid") {
            plan.grid = parse_value(&v, "grid")?;
        }
        if let Some((_, v)) = take(&mut e, "mc_trees") {
            plan.mc_trees = parse_value(&v, "mc_trees")?;
        }
        if let Some((_, v)) = take(&mut e, "stop_prob") {
            plan.stop_prob = parse_value(&v, "stop_prob")?;
        }
        if let Some((_, v)) = take(&mut e, "concentration") {
            plan.concentration = parse_value(&v, "concentration")?;
        }
        if let Some((_, v)) = take(&mut e, "node_budget") {
            plan.node_budget = parse_value(&v, "node_budget")?;
        }
        if let Some((key, (line, _))) = e.into_iter().next() {
            return Err(Error::InvalidPlan(format!("unknown key {key:?} on line {line}")));
        }
        plan.validate()?;
        Ok(plan)
    }
}

fn parse_value<T: FromStr>(v: &str, key: &str) -> Result<T> {
    v.parse()
        .map_err(|_| Error::InvalidPlan(format!("bad value for {key}: {v:?}")))
}

fn parse_list<T: FromStr>(v: &str, key: &str) -> Result<Vec<T>> {
    v.split(',').map(|s| parse_value(s.trim(), key)).collect()
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct RiskRow {
    pub scenario: String,
    pub n: usize,
    pub depth: usize,
    pub mode: LikelihoodMode,
    pub replicate: usize,
    pub metric: Metric,
    pub loss: f64,
}

/// Mean and standard error of the per-replicate log losses of one cell.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct RiskAggregate {
    pub scenario: String,
    pub n: usize,
    pub depth: usize,
    pub mode: LikelihoodMode,
    pub metric: Metric,
    pub count: usize,
    pub mean_log_loss: f64,
    pub se: f64,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct RiskReport {
    pub rows: Vec<RiskRow>,
    pub aggregates: Vec<RiskAggregate>,
}

impl RiskReport {
    fn from_rows(rows: Vec<RiskRow>) -> Self {
        type Key = (String, usize, usize, LikelihoodMode, Metric);
        let mut groups: BTreeMap<Key, Vec<f64>> = BTreeMap::new();
        for r in &rows {
            groups
                .entry((r.scenario.clone(), r.n, r.depth, r.mode, r.metric))
                .or_default()
                .push(r.loss.ln());
        }
        let aggregates = groups
            .into_iter()
            .map(|((scenario, n, depth, mode, metric), logs)| {
                let k = logs.len() as f64;
                let mean = logs.iter().sum::<f64>() / k;
                let se = if logs.len() > 1 {
                    (logs.iter().map(|v| (v - mean).powi(2)).sum::<f64>() / (k - 1.0)).sqrt()
                        / k.sqrt()
                } else {
                    0.0
                };
                RiskAggregate {
                    scenario,
                    n,
                    depth,
                    mode,
                    metric,
                    count: logs.len(),
                    mean_log_loss: mean,
                    se,
                }
            })
            .collect();
        Self { rows, aggregates }
    }

    pub fn aggregate(
        &self,
        n: usize,
        depth: usize,
        mode: LikelihoodMode,
        metric: Metric,
    ) -> Option<&RiskAggregate> {
        self.aggregates
            .iter()
            .find(|a| a.n == n && a.depth == depth && a.mode == mode && a.metric == metric)
    }

    pub fn write_rows<W: Write>(&self, mut w: W) -> Result<()> {
        writeln!(w, "scenario,n,depth,mode,replicate,metric,loss")?;
        for r in &self.rows {
            writeln!(
                w,
                "{},{},{},{},{},{},{:.16e}",
                r.scenario, r.n, r.depth, r.mode, r.replicate, r.metric, r.loss
            )?;
        }
        Ok(())
    }

    pub fn write_aggregates<W: Write>(&self, mut w: W) -> Result<()> {
        writeln!(w, "scenario,n,depth,mode,metric,count,mean_log_loss,se")?;
        for a in &self.aggregates {
            writeln!(
                w,
                "{},{},{},{},{},{},{:.16e},{:.16e}",
                a.scenario, a.n, a.depth, a.mode, a.metric, a.count, a.mean_log_loss, a.se
            )?;
        }
        Ok(())
    }
}

/// Posterior predictive of one fit on the risk grid.
pub fn fit_predictive(
    data: &Dataset,
    prior: &PriorSpec,
    mode: LikelihoodMode,
    depth: usize,
    grid: &Grid,
    mc_trees: usize,
    mc_seed: u64,
    node_budget: usize,
) -> Result<Vec<f64>> {
    if data.dim() == 1 {
        let config = TreeConfig::new(depth as i64, 0.5)?;
        let tree = build_tree(data, &config, mode.split_mode())?;
        LatentFit::new(&tree, prior)?.predictive_grid(grid)
    } else {
        let mut config = ExpansionConfig::new(depth as i64)?;
        config.node_budget = node_budget;
        let post = expand_and_pass(data, prior, mode, &config)?;
        Ok(post.posterior_mean_mc(mc_trees, grid, mc_seed, false)?.mean)
    }
}

/// Tabulates a scenario density on a regular grid over its unit domain.
pub fn truth_grid(density: &ScenarioDensity, cells: usize) -> (Grid, Vec<f64>) {
    let grid = Grid::regular(&Region::unit(density.dim), cells);
    let values = grid.points().map(|x| density.pdf(x)).collect();
    (grid, values)
}

/// Runs every cell of the plan. The report is a pure function of the plan.
pub fn run_plan(plan: &ExperimentPlan) -> Result<RiskReport> {
    plan.validate()?;
    let density = scenario(&plan.scenario)?;
    let (grid, truth) = truth_grid(&density, plan.grid);
    let vol = grid.cell_volume().expect("regular grid");
    let bounds = Region::unit(density.dim);
    let prior = PriorSpec::optional_polya_tree(
        BaseMeasure::uniform(bounds.clone()),
        plan.concentration,
        plan.stop_prob,
    )?;
    let per_rep: Vec<Vec<RiskRow>> = (0..plan.replicates)
        .into_par_iter()
        .map(|rep| {
            let mut rows = Vec::new();
            for &n in &plan.sample_sizes {
                let data_seed = derive_seed(plan.master_seed, &[rep as u64, n as u64]);
                let mut rng = ChaCha8Rng::seed_from_u64(data_seed);
                let data = Dataset::new(density.sample_with(n, &mut rng), bounds.clone())?;
                for &depth in &plan.depths {
                    let mc_seed =
                        derive_seed(plan.master_seed, &[rep as u64, n as u64, depth as u64, 1]);
                    for &mode in &plan.modes {
                        let tag = |e: Error| Error::Cell {
                            cell: format!(
                                "scenario={} n={n} depth={depth} mode={mode} replicate={rep}",
                                plan.scenario
                            ),
                            source: Box::new(e),
                        };
                        let est = fit_predictive(
                            &data,
                            &prior,
                            mode,
                            depth,
                            &grid,
                            plan.mc_trees,
                            mc_seed,
                            plan.node_budget,
                        )
                        .map_err(tag)?;
                        for &metric in &plan.metrics {
                            rows.push(RiskRow {
                                scenario: plan.scenario.clone(),
                                n,
                                depth,
                                mode,
                                replicate: rep,
                                metric,
                                loss: loss(&est, &truth, metric, vol).map_err(tag)?,
                            });
                        }
                    }
                }
            }
            Ok(rows)
        })
        .collect::<Result<_>>()?;
    Ok(RiskReport::from_rows(per_rep.into_iter().flatten().collect()))
}
