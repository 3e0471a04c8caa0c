//! `ptree`: fit, evaluate and benchmark partition-tree density estimators.

mod config;

use std::fs::File;
use std::io::{self, BufReader, BufWriter, Write};
use std::path::{Path, PathBuf};
use std::process::ExitCode;

use clap::{Parser, Subcommand};
use ptree::math::pointwise_quantiles;
use ptree::model::FittedModel;
use ptree::mv_opt::DEFAULT_NODE_BUDGET;
use ptree::partition_tree::Dataset;
use ptree::pt_kernel::LikelihoodMode;
use ptree::ref_densities::{scenario, SCENARIOS};
use ptree::risk_harness::{run_plan, ExperimentPlan};
use ptree::{Error, Grid, Result};

use config::{FileConfig, FitFlags, RunConfig};

#[derive(Parser)]
#[command(name = "ptree", version, about = "Pólya-tree density estimation on data-dependent and fixed partitions")]
struct Cli {
    /// Worker threads; defaults to the number of logical cores.
    #[arg(long, global = true)]
    threads: Option<usize>,
    #[command(subcommand)]
    command: Command,
}

#[derive(Subcommand)]
enum Command {
    /// Fit a model to a CSV sample and write it as JSON.
    Fit {
        #[arg(long)]
        input: PathBuf,
        #[arg(long)]
        output: PathBuf,
        #[arg(long)]
        mode: Option<LikelihoodMode>,
        #[arg(long, allow_negative_numbers = true)]
        max_depth: Option<i64>,
        /// 1 for a plain Pólya tree, 2 for the optional Pólya tree.
        #[arg(long)]
        states: Option<usize>,
        #[arg(long)]
        stop_prob: Option<f64>,
        #[arg(long)]
        concentration: Option<f64>,
        /// Sample space as `lo:hi` per dimension, comma separated.
        #[arg(long)]
        bounds: Option<String>,
        /// TOML file with defaults for the options above.
        #[arg(long)]
        config: Option<PathBuf>,
    },
    /// Evaluate a fitted model on a grid or at query points.
    Predict {
        /// Model JSON written by `fit`.
        #[arg(long)]
        input: PathBuf,
        #[arg(long)]
        output: Option<PathBuf>,
        /// Cells per dimension of a regular grid over the sample space.
        #[arg(long, conflicts_with = "query")]
        grid: Option<usize>,
        /// CSV of query points.
        #[arg(long)]
        query: Option<PathBuf>,
        /// Posterior density draws for credible bands.
        #[arg(long, default_value_t = 0)]
        draws: usize,
        #[arg(long, value_delimiter = ',')]
        quantiles: Vec<f64>,
        #[arg(long, default_value_t = 200)]
        mc_trees: usize,
        #[arg(long, default_value_t = 0)]
        seed: u64,
    },
    /// Draw a sample from a registered scenario density.
    Simulate {
        #[arg(long)]
        scenario: String,
        #[arg(long)]
        n: usize,
        #[arg(long)]
        seed: u64,
        #[arg(long)]
        output: Option<PathBuf>,
    },
    /// Run a risk experiment described by a plan file.
    Benchmark {
        /// Plan file of `key = value` lines.
        #[arg(long)]
        input: PathBuf,
        /// Per-replicate losses.
        #[arg(long)]
        output: PathBuf,
        /// Aggregated mean log losses; defaults to `<output>.agg.csv`.
        #[arg(long)]
        aggregate: Option<PathBuf>,
        #[arg(long)]
        seed: u64,
        #[arg(long)]
        mc_trees: Option<usize>,
    },
    /// List registered scenario densities.
    Scenarios,
}

fn exit_code(err: &Error) -> u8 {
    match err {
        Error::Cell { source, .. } => exit_code(source),
        Error::Parse { .. } | Error::OutOfDomain(_) => 2,
        Error::EmptyDomain(_)
        | Error::DepthNegative(_)
        | Error::InvalidQuantile(_)
        | Error::InvalidPrior(_)
        | Error::DimensionMismatch { .. }
        | Error::UnknownScenario(_)
        | Error::GridMismatch(_)
        | Error::InvalidPlan(_)
        | Error::UnknownModelVersion(_)
        | Error::Json(_) => 3,
        Error::ZeroMass
        | Error::NodeBudgetExceeded { .. }
        | Error::Numerical(_)
        | Error::DomainError(_) => 4,
        Error::Io(_) => 1,
    }
}

fn node_budget() -> Result<usize> {
    match std::env::var("PTREE_NODE_BUDGET") {
        Ok(v) => v
            .trim()
            .parse()
            .map_err(|_| Error::InvalidPrior(format!("PTREE_NODE_BUDGET is not a count: {v:?}"))),
        Err(_) => Ok(DEFAULT_NODE_BUDGET),
    }
}

fn open_output(path: Option<&Path>) -> Result<Box<dyn Write>> {
    Ok(match path {
        Some(p) => Box::new(BufWriter::new(File::create(p)?)),
        None => Box::new(BufWriter::new(io::stdout().lock())),
    })
}

fn write_row(out: &mut dyn Write, values: &[f64]) -> io::Result<()> {
    let mut first = true;
    for v in values {
        if !first {
            out.write_all(b",")?;
        }
        first = false;
        write!(out, "{v:.16e}")?;
    }
    out.write_all(b"\n")
}

fn run(cli: Cli) -> Result<()> {
    match cli.command {
        Command::Fit {
            input,
            output,
            mode,
            max_depth,
            states,
            stop_prob,
            concentration,
            bounds,
            config,
        } => {
            let file = FileConfig::load(config.as_deref())?;
            let cfg = RunConfig::resolve(
                file,
                FitFlags {
                    mode,
                    max_depth,
                    states,
                    stop_prob,
                    concentration,
                    bounds,
                },
            )?;
            let data = Dataset::from_csv(BufReader::new(File::open(&input)?), cfg.bounds.clone())?;
            let prior = cfg.prior(data.bounds().clone())?;
            let model = FittedModel::fit(&data, &prior, cfg.mode, cfg.max_depth, node_budget()?)?;
            let mut w = BufWriter::new(File::create(&output)?);
            model.write(&mut w)?;
            w.flush()?;
            let s = &model.summary;
            let mut out = io::stdout().lock();
            writeln!(out, "mode: {}", model.mode)?;
            writeln!(out, "n: {}", s.n)?;
            writeln!(out, "dim: {}", s.dim)?;
            writeln!(out, "max_depth: {}", s.max_depth)?;
            writeln!(out, "log_bayes_factor: {:.16e}", s.log_bayes_factor)?;
            writeln!(out, "nodes: {}", s.nodes)?;
            writeln!(out, "leaves: {}", s.leaves)?;
        }
        Command::Predict {
            input,
            output,
            grid,
            query,
            draws,
            quantiles,
            mc_trees,
            seed,
        } => {
            let model = FittedModel::read(BufReader::new(File::open(&input)?))?;
            if quantiles.iter().any(|q| !(0.0..=1.0).contains(q)) {
                return Err(Error::InvalidPrior("quantiles must lie in [0, 1]".into()));
            }
            if !quantiles.is_empty() && draws == 0 {
                return Err(Error::InvalidPrior("--quantiles needs --draws".into()));
            }
            let bounds = model.prior.base.bounds().clone();
            let grid = match (grid, query) {
                (_, Some(q)) => {
                    let pts = Dataset::from_csv(BufReader::new(File::open(&q)?), Some(bounds))?;
                    Grid::from_points(pts.dim(), &pts.points().map(<[f64]>::to_vec).collect::<Vec<_>>())?
                }
                (cells, None) => Grid::regular(&bounds, cells.unwrap_or(128)),
            };
            let pred = model.predict(&grid, draws, mc_trees, seed)?;
            let bands = if pred.draws.is_empty() {
                Vec::new()
            } else {
                pointwise_quantiles(&pred.draws, &quantiles)
            };
            let mut out = open_output(output.as_deref())?;
            let mut header: Vec<String> = (1..=grid.dim()).map(|j| format!("x{j}")).collect();
            header.push("density".into());
            header.extend(quantiles.iter().map(|q| format!("q{q}")));
            writeln!(out, "{}", header.join(","))?;
            let mut row = Vec::new();
            for (i, x) in grid.points().enumerate() {
                row.clear();
                row.extend_from_slice(x);
                row.push(pred.mean[i]);
                row.extend(bands.iter().map(|b| b[i]));
                write_row(&mut out, &row)?;
            }
            out.flush()?;
        }
        Command::Simulate {
            scenario: name,
            n,
            seed,
            output,
        } => {
            let density = scenario(&name)?;
            let mut out = open_output(output.as_deref())?;
            let header: Vec<String> = (1..=density.dim).map(|j| format!("x{j}")).collect();
            writeln!(out, "{}", header.join(","))?;
            for p in density.sample(n, seed) {
                write_row(&mut out, &p)?;
            }
            out.flush()?;
        }
        Command::Benchmark {
            input,
            output,
            aggregate,
            seed,
            mc_trees,
        } => {
            let mut plan = ExperimentPlan::parse_with_seed(BufReader::new(File::open(&input)?), Some(seed))?;
            if let Some(k) = mc_trees {
                plan.mc_trees = k;
            }
            if std::env::var_os("PTREE_NODE_BUDGET").is_some() {
                plan.node_budget = node_budget()?;
            }
            plan.validate()?;
            let report = run_plan(&plan)?;
            let agg_path = aggregate.unwrap_or_else(|| {
                let mut s = output.clone().into_os_string();
                s.push(".agg.csv");
                s.into()
            });
            let mut w = BufWriter::new(File::create(&output)?);
            report.write_rows(&mut w)?;
            w.flush()?;
            let mut w = BufWriter::new(File::create(&agg_path)?);
            report.write_aggregates(&mut w)?;
            w.flush()?;
            let mut out = io::stdout().lock();
            writeln!(out, "rows: {}", report.rows.len())?;
            writeln!(out, "aggregates: {}", agg_path.display())?;
        }
        Command::Scenarios => {
            let mut out = io::stdout().lock();
            for name in SCENARIOS {
                writeln!(out, "{name}\t{}", scenario(name)?.dim)?;
            }
        }
    }
    Ok(())
}

fn main() -> ExitCode {
    let cli = Cli::parse();
    if let Some(t) = cli.threads {
        if let Err(e) = rayon::ThreadPoolBuilder::new().num_threads(t).build_global() {
            eprintln!("error: {e}");
            return ExitCode::from(3);
        }
    }
    match run(cli) {
        Ok(()) => ExitCode::SUCCESS,
        Err(Error::Io(e)) if e.kind() == io::ErrorKind::BrokenPipe => ExitCode::SUCCESS,
        Err(e) => {
            eprintln!("error: {e}");
            ExitCode::from(exit_code(&e))
        }
    }
}
