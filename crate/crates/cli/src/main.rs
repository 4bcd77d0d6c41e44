use std::path::PathBuf;
use std::process::ExitCode;

use clap::{Parser, Subcommand};
use veripc::plot::parse_dims;
use veripc::{cmd_plot, cmd_simulate, cmd_synthesize, cmd_verify, threads_from_env, CliError, VerifyOptions};

#[derive(Parser)]
#[command(name = "veripc", version, about = "Explicit MPC synthesis and closed-loop safety verification")]
struct Cli {
    #[command(subcommand)]
    command: Command,
}

#[derive(Subcommand)]
enum Command {
    /// Compute the explicit control law and write it as JSON.
    Synthesize {
        model: PathBuf,
        #[arg(short = 'o')]
        out: PathBuf,
    },
    /// Verify bounded-time safety; exit 0 RobustSafe, 2 MaxPart, 3 Infeasible.
    Verify {
        model: PathBuf,
        #[arg(long)]
        solution: Option<PathBuf>,
        #[arg(short = 'o', default_value = ".")]
        out: PathBuf,
        /// Omit wall time so repeated runs give identical files.
        #[arg(long)]
        deterministic: bool,
    },
    /// Simulate one closed-loop trajectory to CSV.
    Simulate {
        model: PathBuf,
        #[arg(long, value_delimiter = ',', allow_hyphen_values = true, required = true)]
        x0: Vec<f64>,
        #[arg(long)]
        tv: f64,
        #[arg(long)]
        step: f64,
        #[arg(short = 'o')]
        out: PathBuf,
    },
    /// Draw a reachtube projected onto two coordinates (0-based).
    Plot {
        tube: PathBuf,
        #[arg(long)]
        dims: String,
        #[arg(short = 'o')]
        out: PathBuf,
        /// Model whose initial box and unsafe sets are drawn too.
        #[arg(long)]
        model: Option<PathBuf>,
    },
}

fn run(cli: Cli) -> Result<u8, CliError> {
    match cli.command {
        Command::Synthesize { model, out } => {
            let report = cmd_synthesize(&model, &out)?;
            println!("k = {}, wall time {:.3} s", report.k, report.wall_time_s);
            Ok(0)
        }
        Command::Verify { model, solution, out, deterministic } => {
            let opts = VerifyOptions { threads: threads_from_env()?, deterministic };
            let v = cmd_verify(&model, solution.as_deref(), &out, opts)?;
            println!("{:?}: {}", v.kind, v.detail);
            println!("partitions used: {}", v.partitions_used);
            Ok(v.kind.exit_code() as u8)
        }
        Command::Simulate { model, x0, tv, step, out } => {
            let traj = cmd_simulate(&model, &x0, tv, step, &out)?;
            if traj.infeasible {
                let last = traj.last();
                eprintln!("state left the feasible region at t = {}", last.t);
                return Ok(3);
            }
            Ok(0)
        }
        Command::Plot { tube, dims, out, model } => {
            cmd_plot(&tube, parse_dims(&dims)?, &out, model.as_deref())?;
            Ok(0)
        }
    }
}

fn main() -> ExitCode {
    match run(Cli::parse()) {
        Ok(code) => ExitCode::from(code),
        Err(e) => {
            eprintln!("error: {e}");
            ExitCode::from(1)
        }
    }
}
