use std::io;
use std::path::PathBuf;
use std::process::ExitCode;

use clap::{Args, Parser, Subcommand};
use ldpopt::harness::{
    run_dimension_study, run_experiment, summarize, write_artifacts, write_dimension_csv, write_dimension_table, DimStudyConfig,
    ExperimentConfig,
};
use ldpopt::privacy::{gamma_bound, gamma_bound_corrected, gamma_exact, gamma_monte_carlo};
use ldpopt::{generate_random_graph, Error, PrivacyLedger};

#[derive(Parser)]
#[command(name = "ldpopt", version, about = "Private decentralized optimization simulator and accountant")]
struct Cli {
    #[command(subcommand)]
    command: Command,
}

#[derive(Subcommand)]
enum Command {
    /// Run an experiment config and write traces, ledgers and summaries.
    Run {
        config: PathBuf,
        /// Output directory (default `results/<name>`).
        #[arg(long)]
        out: Option<PathBuf>,
    },
    /// Compose a per-entry ledger CSV into per-agent totals.
    Accountant {
        ledger: PathBuf,
        /// δ for strong composition; omitted means pure composition only.
        #[arg(long)]
        delta: Option<f64>,
    },
    /// Amplification constant over an (ω, β) grid.
    Gamma(GammaArgs),
    /// Final gap against ambient dimension under a fixed budget.
    Dimstudy {
        config: PathBuf,
        /// CSV destination (default stdout).
        #[arg(long)]
        out: Option<PathBuf>,
    },
    /// Graph utilities.
    Graph {
        #[command(subcommand)]
        command: GraphCommand,
    },
}

#[derive(Args)]
struct GammaArgs {
    /// Interval widths, comma separated.
    #[arg(long, value_delimiter = ',', default_values_t = [0.1, 0.2, 0.3, 0.4, 0.5, 0.6, 0.7, 0.8, 0.9, 1.0])]
    omega: Vec<f64>,
    /// Noise inverse scales, comma separated.
    #[arg(long, value_delimiter = ',', default_values_t = [2.0, 3.0, 4.0, 5.0, 6.0, 7.0, 8.0, 9.0, 10.0])]
    beta: Vec<f64>,
    /// Shift bound α·B∞.
    #[arg(long, default_value_t = 0.001)]
    alphab: f64,
    /// Monte Carlo draws per grid point; 0 skips the estimate.
    #[arg(long, default_value_t = 0)]
    draws: usize,
    #[arg(long, default_value_t = 1)]
    seed: u64,
}

#[derive(Subcommand)]
enum GraphCommand {
    /// Connected random graph with the given node and edge counts.
    Gen {
        #[arg(long)]
        nodes: usize,
        #[arg(long)]
        edges: usize,
        #[arg(long, default_value_t = 0)]
        seed: u64,
        /// Edge-list destination (default stdout).
        #[arg(long)]
        out: Option<PathBuf>,
    },
}

fn main() -> ExitCode {
    match run(Cli::parse()) {
        Ok(()) => ExitCode::SUCCESS,
        Err(e) => {
            eprintln!("error: {e}");
            ExitCode::from(exit_code(&e))
        }
    }
}

fn exit_code(e: &Error) -> u8 {
    match e {
        Error::Validation(_) | Error::Config(_) | Error::InvalidArgument(_) | Error::DimensionMismatch { .. } => 2,
        Error::Ingestion(_) | Error::Csv(_) => 3,
        _ => 1,
    }
}

fn run(cli: Cli) -> ldpopt::Result<()> {
    match cli.command {
        Command::Run { config, out } => {
            let cfg = ExperimentConfig::load(&config)?;
            let reports = run_experiment(&cfg)?;
            let dir = out.unwrap_or_else(|| PathBuf::from("results").join(&cfg.name));
            let written = write_artifacts(&cfg, &reports, &dir)?;
            let summary = summarize(&cfg, &reports);
            let mut w = csv::Writer::from_writer(io::stdout());
            w.write_record(["arm", "final_mean_accuracy", "final_objective_gap", "mean_privacy_ratio"])?;
            for a in &summary.arms {
                w.write_record(&[
                    a.label.clone(),
                    format!("{:e}", a.mean_accuracy.last().copied().unwrap_or(f64::NAN)),
                    format!("{:e}", a.final_objective_gap),
                    a.mean_privacy_ratio.map(|r| format!("{r:e}")).unwrap_or_default(),
                ])?;
            }
            w.flush()?;
            eprintln!("wrote {} files to {}", written.len(), dir.display());
        }
        Command::Accountant { ledger, delta } => {
            let s = PrivacyLedger::read_csv(&ledger)?.summary(delta)?;
            let mut w = csv::Writer::from_writer(io::stdout());
            w.write_record(["agent", "realized_pure", "worst_pure", "realized_strong", "mean_ratio"])?;
            for a in &s.agents {
                w.write_record(&[
                    (a.agent + 1).to_string(),
                    format!("{:e}", a.realized_pure),
                    format!("{:e}", a.worst_pure),
                    a.realized_strong.map(|v| format!("{v:e}")).unwrap_or_default(),
                    format!("{:e}", a.mean_ratio),
                ])?;
            }
            w.write_record(&[
                "max".to_string(),
                format!("{:e}", s.pure_total),
                format!("{:e}", s.worst_total),
                s.strong_total.map(|v| format!("{v:e}")).unwrap_or_default(),
                format!("{:e}", s.mean_ratio),
            ])?;
            w.flush()?;
        }
        Command::Gamma(args) => {
            let mut w = csv::Writer::from_writer(io::stdout());
            w.write_record(["omega", "beta", "alphab", "gamma_bound", "gamma_corrected", "gamma_exact", "mc_mean", "mc_se"])?;
            for &omega in &args.omega {
                for &beta in &args.beta {
                    let (mc, se) = if args.draws > 0 {
                        let (m, s) = gamma_monte_carlo(omega, beta, args.alphab, args.draws, args.seed)?;
                        (format!("{m:e}"), format!("{s:e}"))
                    } else {
                        Default::default()
                    };
                    w.write_record(&[
                        omega.to_string(),
                        beta.to_string(),
                        args.alphab.to_string(),
                        format!("{:e}", gamma_bound(omega, beta, args.alphab)?),
                        format!("{:e}", gamma_bound_corrected(omega, beta, args.alphab)?),
                        format!("{:e}", gamma_exact(omega, beta, args.alphab)?),
                        mc,
                        se,
                    ])?;
                }
            }
            w.flush()?;
        }
        Command::Dimstudy { config, out } => {
            let rows = run_dimension_study(&DimStudyConfig::load(&config)?)?;
            match out {
                Some(path) => write_dimension_table(&rows, path)?,
                None => write_dimension_csv(&rows, io::stdout())?,
            }
        }
        Command::Graph { command: GraphCommand::Gen { nodes, edges, seed, out } } => {
            let g = generate_random_graph(nodes, edges, seed)?;
            match out {
                Some(path) => g.write_edge_list(path)?,
                None => print!("{}", g.to_edge_list()),
            }
        }
    }
    Ok(())
}
