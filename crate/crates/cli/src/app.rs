//! Command-line parsing and the subcommands.

use std::path::PathBuf;

use anyhow::{bail, Context};
use clap::{Args, Parser, Subcommand};
use prlab_core::harness::{run_cells, run_sweep};
use prlab_core::{CellSpec, SweepResult};

use crate::config::{parse_config, RunConfig};
use crate::emit::{emit_results, read_episodes, summary_tables, write_cell_plots, PlotSelection};

#[derive(Debug, Parser)]
#[command(
    name = "prlab",
    version,
    about = "Pseudorehearsal experiments on cart-pole"
)]
pub struct Cli {
    #[command(flatten)]
    pub global: GlobalArgs,
    #[command(subcommand)]
    pub command: Command,
}

#[derive(Debug, Args)]
pub struct GlobalArgs {
    /// TOML configuration file; defaults apply when omitted.
    #[arg(long, global = true, env = "PRLAB_CONFIG")]
    pub config: Option<PathBuf>,
    /// Output directory (overrides `output.dir`).
    #[arg(long, global = true, env = "PRLAB_OUT")]
    pub out: Option<PathBuf>,
    /// Base seed (overrides `sweep.base_seed`).
    #[arg(long, global = true, env = "PRLAB_SEED")]
    pub seed: Option<u64>,
    /// Comma-separated cell-id substrings; `sweep` runs and `plot` draws only
    /// matching cells.
    #[arg(long, global = true, env = "PRLAB_CELLS", value_delimiter = ',')]
    pub cells: Option<Vec<String>>,
    /// Replications per cell (overrides `sweep.replications`).
    #[arg(long, global = true, env = "PRLAB_REPLICATIONS")]
    pub replications: Option<usize>,
    /// Worker threads for cell-level parallelism.
    #[arg(long, global = true, env = "PRLAB_THREADS")]
    pub threads: Option<usize>,
    /// Tries per run (overrides `sweep.tries_per_run`).
    #[arg(long, global = true, env = "PRLAB_TRIES")]
    pub tries: Option<usize>,
    /// Suppress the summary tables and progress lines on stdout.
    #[arg(long, short, global = true, env = "PRLAB_QUIET")]
    pub quiet: bool,
}

#[derive(Debug, Subcommand)]
pub enum Command {
    /// Run the single cell described by the [agent] and [rehearsal] sections.
    Run,
    /// Run the full grid of the [sweep] section.
    Sweep,
    /// Run the random policy once per observability.
    Baseline,
    /// Redraw plots from an existing episodes.csv in the output directory.
    Plot,
    /// Print the effective configuration as TOML.
    Config,
}

/// Loads the config file (or defaults) and applies flag overrides.
pub fn effective_config(global: &GlobalArgs) -> anyhow::Result<RunConfig> {
    let mut config = match &global.config {
        Some(path) => parse_config(path)?,
        None => RunConfig::default(),
    };
    if let Some(out) = &global.out {
        config.output.dir = out.clone();
    }
    if let Some(seed) = global.seed {
        config.sweep.base_seed = seed;
    }
    if let Some(r) = global.replications {
        config.sweep.replications = r;
    }
    if let Some(t) = global.tries {
        config.sweep.tries_per_run = t;
    }
    config.validate().context("invalid command-line override")?;
    Ok(config)
}

fn filter_matches(filters: &Option<Vec<String>>, id: &str) -> bool {
    match filters {
        Some(f) if !f.is_empty() => f.iter().any(|s| id.contains(s.as_str())),
        _ => true,
    }
}

fn plot_selection(config: &RunConfig, global: &GlobalArgs) -> PlotSelection {
    PlotSelection {
        enabled: config.output.plots,
        cells: global
            .cells
            .clone()
            .filter(|c| !c.is_empty())
            .unwrap_or_else(|| config.output.plot_cells.clone()),
    }
}

/// Runs a parsed command line; returns the process exit code.
pub fn execute(cli: Cli) -> anyhow::Result<i32> {
    let config = effective_config(&cli.global)?;
    let pool = {
        let mut b = rayon::ThreadPoolBuilder::new();
        if let Some(n) = cli.global.threads {
            if n == 0 {
                bail!("--threads must be at least 1");
            }
            b = b.num_threads(n);
        }
        b.build().context("cannot start worker threads")?
    };
    let out = config.output.dir.clone();
    let protocol = config.protocol();
    let reps = config.sweep.replications;
    let seed = config.sweep.base_seed;

    let result: SweepResult = match cli.command {
        Command::Config => {
            print!("{}", config.to_toml_string());
            return Ok(0);
        }
        Command::Plot => {
            let path = out.join("episodes.csv");
            let selection = plot_selection(&config, &cli.global);
            let mut count = 0;
            for (id, series) in read_episodes(&path)? {
                if selection.selects(&id) {
                    count += write_cell_plots(&out, &id, &series)?.len();
                }
            }
            if !cli.global.quiet {
                println!("wrote {count} plot(s) to {}", out.join("plots").display());
            }
            return Ok(0);
        }
        Command::Run => {
            let cells = vec![config.run_cell()];
            pool.install(|| run_cells(&protocol, cells, reps, seed))?
        }
        Command::Baseline => {
            let cells = config
                .sweep
                .observabilities
                .iter()
                .map(|&o| CellSpec::random(o))
                .collect();
            pool.install(|| run_cells(&protocol, cells, reps, seed))?
        }
        Command::Sweep => {
            let spec = config.sweep_spec();
            let filters = &cli.global.cells;
            pool.install(|| run_sweep(&protocol, &spec, |c| filter_matches(filters, &c.id())))?
        }
    };
    if result.cells.is_empty() {
        bail!("no cells matched the --cells filter");
    }
    let written = emit_results(&result, &out, &plot_selection(&config, &cli.global))?;
    if !cli.global.quiet {
        print!("{}", summary_tables(&result));
        println!("wrote {} file(s) to {}", written.len(), out.display());
    }
    let failed: Vec<String> = result
        .cells
        .iter()
        .filter_map(|c| c.error().map(|e| format!("{}: {e}", c.cell.id())))
        .collect();
    for f in &failed {
        eprintln!("cell failed: {f}");
    }
    Ok(if failed.is_empty() { 0 } else { 1 })
}
