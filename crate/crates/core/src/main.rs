use std::path::{Path, PathBuf};
use std::process::ExitCode;

use clap::{Args, Parser, Subcommand};

use orbitfl::aggregation::Simulation;
use orbitfl::harness::experiment::ExperimentError;
use orbitfl::harness::metrics::{parse_metrics_csv, write_atomic};
use orbitfl::harness::plot::emit_plots;
use orbitfl::harness::shard::federation_files;
use orbitfl::harness::{build_data, cluster_table, load_config, run_experiment, synthesize};

#[derive(Parser)]
#[command(
    name = "orbitfl",
    version,
    about = "Hierarchical semi-supervised FL over LEO satellite clusters"
)]
struct Cli {
    #[command(subcommand)]
    command: Command,
}

#[derive(Args)]
struct ConfigArgs {
    /// Experiment config file (`key = value` lines).
    #[arg(long)]
    config: PathBuf,
    /// `key=value` applied after the file; repeatable.
    #[arg(long = "override", value_name = "KEY=VALUE")]
    overrides: Vec<String>,
}

#[derive(Subcommand)]
enum Command {
    /// Run an experiment and write metrics, logs and plots.
    Run {
        #[command(flatten)]
        config: ConfigArgs,
        #[arg(long, default_value = "out")]
        out: PathBuf,
        /// Stop once the evaluation accuracy reaches this value.
        #[arg(long)]
        stop_at_accuracy: Option<f64>,
    },
    /// Write the synthetic non-IID split as shard files.
    Partition {
        #[command(flatten)]
        config: ConfigArgs,
        #[arg(long, default_value = "shards")]
        out: PathBuf,
    },
    /// Inspect simulation state.
    Inspect {
        #[command(subcommand)]
        what: Inspect,
    },
    /// Render SVG charts from a metrics CSV.
    Plot {
        #[arg(long)]
        metrics: PathBuf,
        #[arg(long, default_value = "plots")]
        out: PathBuf,
    },
}

#[derive(Subcommand)]
enum Inspect {
    /// Cluster label and parameter-server flag of every client after warm-up.
    Clusters {
        #[command(flatten)]
        config: ConfigArgs,
    },
}

fn io(path: &Path) -> impl FnOnce(std::io::Error) -> ExperimentError + '_ {
    move |source| ExperimentError::Io {
        path: path.to_path_buf(),
        source,
    }
}

fn execute(cli: Cli) -> Result<(), ExperimentError> {
    match cli.command {
        Command::Run {
            config,
            out,
            stop_at_accuracy,
        } => {
            let mut cfg = load_config(&config.config, &config.overrides)?;
            if stop_at_accuracy.is_some() {
                cfg.stop_at_accuracy = stop_at_accuracy;
                cfg = cfg.validate()?;
            }
            let run = run_experiment(&cfg, &out)?;
            if let Some(last) = run.rows.last() {
                println!(
                    "{} rounds, accuracy {:.4}, simulated time {:.3} s, uplink {} bytes",
                    run.rows.len(),
                    last.accuracy,
                    run.rows.iter().map(|r| r.wall_clock_s).sum::<f64>(),
                    run.rows.iter().map(|r| r.bytes_up).sum::<u64>()
                );
            } else {
                println!("0 rounds");
            }
        }
        Command::Partition { config, out } => {
            let cfg = load_config(&config.config, &config.overrides)?;
            let part = synthesize(&cfg)?;
            std::fs::create_dir_all(&out).map_err(io(&out))?;
            for (name, bytes) in federation_files(&part.data)? {
                let path = out.join(name);
                write_atomic(&path, &bytes).map_err(io(&path))?;
            }
            println!(
                "wrote {} client shards to {}",
                part.data.shards.len(),
                out.display()
            );
        }
        Command::Inspect {
            what: Inspect::Clusters { config },
        } => {
            let cfg = load_config(&config.config, &config.overrides)?;
            let data = build_data(&cfg)?;
            let sim = Simulation::new(cfg, data)?;
            print!("{}", cluster_table(&sim));
        }
        Command::Plot { metrics, out } => {
            let text = std::fs::read_to_string(&metrics).map_err(io(&metrics))?;
            let rows = parse_metrics_csv(&text).map_err(|e| ExperimentError::Io {
                path: metrics.clone(),
                source: std::io::Error::new(std::io::ErrorKind::InvalidData, e),
            })?;
            let plots = emit_plots(&rows);
            if plots.is_empty() {
                eprintln!(
                    "warning: {} has no rows; nothing plotted",
                    metrics.display()
                );
                return Ok(());
            }
            std::fs::create_dir_all(&out).map_err(io(&out))?;
            for (name, svg) in plots {
                let path = out.join(name);
                write_atomic(&path, svg.as_bytes()).map_err(io(&path))?;
            }
        }
    }
    Ok(())
}

fn main() -> ExitCode {
    match execute(Cli::parse()) {
        Ok(()) => ExitCode::SUCCESS,
        Err(e) => {
            eprintln!("error: {e}");
            ExitCode::from(e.exit_code() as u8)
        }
    }
}
