use std::io::Write;
use std::path::{Path, PathBuf};
use std::process::ExitCode;

use absgraph::envsim::{EnvKind, EnvSpec};
use absgraph_cli::evaluate::DEFAULT_PAIRS;
use absgraph_cli::{
    cmd_evaluate, cmd_generate, cmd_learn, cmd_localize, cmd_plan, exit, io, BaselineKind, CliError, EvaluateOptions,
    LearnConfig, LearnOverrides,
};
use clap::{Parser, Subcommand, ValueEnum};
use serde::Serialize;

/// Learn bipartite abstract transition graphs from rearrangement traces.
///
/// Exit codes: 0 success, 1 failure, 2 usage error, 3 no feasible sweep cell,
/// 4 no path between the localized nodes.
#[derive(Debug, Parser)]
#[command(name = "absgraph", version)]
struct Cli {
    /// Seed for every random choice; overrides config files and dataset specs.
    #[arg(long, global = true)]
    seed: Option<u64>,
    /// Worker threads (default: all cores).
    #[arg(long, global = true)]
    threads: Option<usize>,
    /// Output path; its meaning depends on the command.
    #[arg(long, global = true)]
    out: Option<PathBuf>,
    #[command(subcommand)]
    command: Command,
}

#[derive(Debug, Clone, Copy, ValueEnum)]
enum Kind {
    FruitHom,
    FruitHet,
    Blocks2,
    Blocks3,
}

impl From<Kind> for EnvKind {
    fn from(k: Kind) -> EnvKind {
        match k {
            Kind::FruitHom => EnvKind::FruitHom,
            Kind::FruitHet => EnvKind::FruitHet,
            Kind::Blocks2 => EnvKind::Blocks2,
            Kind::Blocks3 => EnvKind::Blocks3,
        }
    }
}

#[derive(Debug, Subcommand)]
enum Command {
    /// Sample and render a synthetic dataset into a directory (--out, default `dataset`).
    Generate {
        /// Environment spec as JSON.
        #[arg(required_unless_present = "kind", conflicts_with = "kind")]
        spec: Option<PathBuf>,
        /// Use the default spec of this environment instead of a file.
        #[arg(long, value_enum)]
        kind: Option<Kind>,
        /// Number of observations (default: the environment's reference size).
        #[arg(long)]
        n_obs: Option<usize>,
    },
    /// Sweep cluster counts and caps, select a partition, and write a bundle
    /// directory (--out, default `bundle`).
    Learn {
        dataset: PathBuf,
        /// JSON config; flags take precedence over it.
        #[arg(long)]
        config: Option<PathBuf>,
        /// Grid cells as `KPICKxKPLACE`, comma separated.
        #[arg(long, value_delimiter = ',', value_parser = parse_cell, num_args = 0..)]
        grid: Option<Vec<(usize, usize)>>,
        /// Out-degree caps, comma separated.
        #[arg(long, value_delimiter = ',', num_args = 0..)]
        caps: Option<Vec<usize>>,
        /// Affinity temperature.
        #[arg(long)]
        tau: Option<f64>,
        /// Sinkhorn regularization relative to the map diagonal.
        #[arg(long)]
        epsilon: Option<f64>,
        /// Print the selected cell's search log (decisions, backtracks, violations).
        #[arg(long)]
        explain: bool,
    },
    /// Score the bundle's graph against ground truth and write a metrics CSV
    /// (--out, default `<bundle>/metrics.csv`).
    Evaluate {
        bundle: PathBuf,
        dataset: PathBuf,
        #[arg(long, default_value_t = DEFAULT_PAIRS)]
        n_pairs: usize,
        /// Baselines to add as rows.
        #[arg(long = "baseline", value_enum)]
        baselines: Vec<BaselineKind>,
        /// Add a row for the ground-truth graph.
        #[arg(long)]
        ground_truth: bool,
    },
    /// Localize two maps and print a plan between their nodes as JSON.
    Plan {
        bundle: PathBuf,
        start_map: PathBuf,
        goal_map: PathBuf,
    },
    /// Print the node of each map as JSON.
    Localize {
        bundle: PathBuf,
        #[arg(required = true)]
        maps: Vec<PathBuf>,
    },
}

fn parse_cell(s: &str) -> Result<(usize, usize), String> {
    let (a, b) = s
        .split_once('x')
        .ok_or_else(|| format!("expected KPICKxKPLACE, got `{s}`"))?;
    let parse = |t: &str| t.trim().parse::<usize>().map_err(|e| format!("`{t}`: {e}"));
    Ok((parse(a)?, parse(b)?))
}

/// Writes JSON to `out` or stdout.
fn emit<T: Serialize>(value: &T, out: Option<&Path>) -> Result<(), CliError> {
    match out {
        Some(path) => io::write_json(path, value),
        None => {
            let stdout = std::io::stdout();
            let mut lock = stdout.lock();
            serde_json::to_writer_pretty(&mut lock, value)
                .map_err(std::io::Error::other)
                .and_then(|_| writeln!(lock))
                .map_err(CliError::io(Path::new("<stdout>")))
        }
    }
}

fn run(cli: Cli) -> Result<(), CliError> {
    if let Some(n) = cli.threads {
        rayon::ThreadPoolBuilder::new()
            .num_threads(n)
            .build_global()
            .map_err(|e| CliError::Usage(e.to_string()))?;
    }
    match cli.command {
        Command::Generate { spec, kind, n_obs } => {
            let mut spec = match (spec, kind) {
                (Some(path), _) => io::read_json::<EnvSpec>(&path)?,
                (None, Some(kind)) => EnvSpec::new(kind.into(), 0),
                (None, None) => unreachable!("clap requires a spec or a kind"),
            };
            if let Some(seed) = cli.seed {
                spec.seed = seed;
            }
            if n_obs.is_some() {
                spec.n_obs = n_obs;
            }
            let out = cli.out.unwrap_or_else(|| PathBuf::from("dataset"));
            cmd_generate(&spec, &out)?;
        }
        Command::Learn {
            dataset,
            config,
            grid,
            caps,
            tau,
            epsilon,
            explain,
        } => {
            let base = match config {
                Some(path) => io::read_json::<LearnConfig>(&path)?,
                None => LearnConfig::default(),
            };
            let config = LearnOverrides {
                grid,
                caps,
                tau,
                epsilon,
                seed: cli.seed,
            }
            .apply(base);
            let out = cli.out.unwrap_or_else(|| PathBuf::from("bundle"));
            let manifest = cmd_learn(&dataset, &config, &out)?;
            let c = manifest.selected;
            println!(
                "selected k_pick={} k_place={} cap={} v={:.6}",
                c.k_pick, c.k_place, c.cap, manifest.v_score
            );
            if explain {
                let log = io::read_bytes(&out.join(absgraph_cli::learn::SEARCH_LOG))?;
                std::io::stdout()
                    .write_all(&log)
                    .map_err(CliError::io(Path::new("<stdout>")))?;
            }
        }
        Command::Evaluate {
            bundle,
            dataset,
            n_pairs,
            baselines,
            ground_truth,
        } => {
            let options = EvaluateOptions {
                n_pairs,
                seed: cli.seed.unwrap_or(0),
                baselines,
                ground_truth,
            };
            let out = cli.out.unwrap_or_else(|| bundle.join("metrics.csv"));
            let rows = cmd_evaluate(&bundle, &dataset, &options, &out)?;
            for (method, m) in rows {
                println!(
                    "{method}: opt {:.1}% any {:.1}% transition {:.1}% v {:.4}",
                    m.opt_path_pct, m.any_path_pct, m.transition_pct, m.v_score
                );
            }
        }
        Command::Plan {
            bundle,
            start_map,
            goal_map,
        } => emit(&cmd_plan(&bundle, &start_map, &goal_map)?, cli.out.as_deref())?,
        Command::Localize { bundle, maps } => emit(&cmd_localize(&bundle, &maps)?, cli.out.as_deref())?,
    }
    Ok(())
}

fn main() -> ExitCode {
    env_logger::Builder::from_env(env_logger::Env::default().default_filter_or("warn")).init();
    let cli = Cli::parse();
    match run(cli) {
        Ok(()) => ExitCode::from(exit::OK),
        Err(e) => {
            eprintln!("error: {e}");
            ExitCode::from(e.exit_code())
        }
    }
}
