use std::path::PathBuf;
use std::process::ExitCode;
use std::time::Duration;

use clap::{Parser, Subcommand};
use obsim_cli::serve::{serve, ServeOptions};
use obsim_cli::{cmd_distinguish, cmd_reduce, cmd_render, cmd_simulate, load_config, CandidateFlag, CliError};

#[derive(Parser)]
#[command(name = "obsim", version, about = "Observable simulations and the force-injection test")]
struct Cli {
    /// Scenario config (TOML); defaults to the bundled paper-sem scenario.
    #[arg(long, global = true)]
    config: Option<PathBuf>,
    /// Output file or directory.
    #[arg(long, global = true)]
    out: Option<PathBuf>,
    /// Seed for session assignment.
    #[arg(long, global = true, default_value_t = 0)]
    seed: u64,
    #[arg(short, long, global = true)]
    verbose: bool,
    #[command(subcommand)]
    command: Command,
}

#[derive(Subcommand)]
enum Command {
    /// Integrate the scenario and write a trajectory CSV.
    Simulate,
    /// Build a reduced single-DOF model from a trajectory CSV.
    Reduce {
        #[arg(long)]
        traj: PathBuf,
    },
    /// Run the force-injection protocol on a candidate.
    Distinguish {
        /// copy | padded | reduced | kinematic
        #[arg(long, default_value = "reduced")]
        candidate: CandidateFlag,
        /// Use a saved model instead of recording one.
        #[arg(long)]
        model: Option<PathBuf>,
    },
    /// Render a trajectory to PGM frames.
    Render {
        #[arg(long)]
        traj: PathBuf,
    },
    /// Host blind trials over WebSocket or line-delimited TCP.
    Serve {
        #[arg(long, default_value_t = 7878)]
        port: u16,
        #[arg(long, default_value_t = 50)]
        tick_ms: u64,
    },
}

fn run(cli: Cli) -> Result<(), CliError> {
    let config = load_config(cli.config.as_deref())?;
    let out = |default: &str| cli.out.clone().unwrap_or_else(|| PathBuf::from(default));
    match cli.command {
        Command::Simulate => {
            let path = out("trajectory.csv");
            let rows = cmd_simulate(&config, &path)?;
            println!("wrote {rows} samples to {}", path.display());
        }
        Command::Reduce { traj } => {
            let path = out("model.json");
            let res = cmd_reduce(&traj, &config, &path);
            let summary_file = obsim_cli::summary_path(&path);
            if let Ok(text) = std::fs::read_to_string(&summary_file) {
                println!("{text}");
            }
            res?;
        }
        Command::Distinguish { candidate, model } => {
            let path = out("report.json");
            let r = cmd_distinguish(&config, candidate, model.as_deref(), &path)?;
            println!(
                "{}: dof {} of {}, pre-phase equal {}, D_max {:.3} -> {}",
                r.candidate, r.dof, r.n, r.pre_equal, r.d_max, r.verdict
            );
        }
        Command::Render { traj } => {
            let dir = out("frames");
            for line in cmd_render(&traj, &config, &dir)? {
                println!("{line}");
            }
        }
        Command::Serve { port, tick_ms } => {
            let opts = ServeOptions {
                seed: cli.seed,
                tick: Duration::from_millis(tick_ms),
                verbose: cli.verbose,
                ..ServeOptions::default()
            };
            let rt = tokio::runtime::Runtime::new()?;
            rt.block_on(async {
                let listener = tokio::net::TcpListener::bind(("127.0.0.1", port)).await?;
                eprintln!("listening on {}", listener.local_addr()?);
                serve(listener, config, opts).await
            })?;
        }
    }
    Ok(())
}

fn main() -> ExitCode {
    let cli = Cli::parse();
    let verbose = cli.verbose;
    match run(cli) {
        Ok(()) => ExitCode::SUCCESS,
        Err(e) => {
            eprintln!("error: {e}");
            if verbose {
                eprintln!("exit code {}", e.exit_code());
            }
            ExitCode::from(e.exit_code() as u8)
        }
    }
}
