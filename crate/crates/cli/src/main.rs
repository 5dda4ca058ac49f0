use std::path::PathBuf;
use std::process::ExitCode;

use clap::{Parser, Subcommand};
use stochabs_cli::{config, default_out_dir, execute, reproduce, Status};

#[derive(Parser)]
#[command(name = "stochabs", version, about = "Finite abstractions, closeness bounds and barrier certificates for stochastic control systems")]
struct Cli {
    #[command(subcommand)]
    command: Command,

    /// Output directory (defaults to $STOCHABS_OUT, then ./stochabs-out).
    #[arg(long, global = true)]
    out: Option<PathBuf>,

    /// Worker threads for parallel stages.
    #[arg(long, global = true)]
    threads: Option<usize>,
}

#[derive(clap::Args)]
struct ConfigArgs {
    /// TOML run configuration.
    #[arg(long)]
    config: PathBuf,

    /// Override a config entry, e.g. `--set sim.seed=7`.
    #[arg(long = "set", value_name = "KEY=VALUE")]
    set: Vec<String>,
}

#[derive(Subcommand)]
enum Command {
    /// Build the finite MDP of a model on a grid.
    Abstract(ConfigArgs),
    /// Compute optimal satisfaction probabilities and a policy.
    Synthesize(ConfigArgs),
    /// Evaluate closeness bounds and check SSF conditions.
    Bounds(ConfigArgs),
    /// Check a barrier certificate and report the safety bound.
    VerifyBarrier(ConfigArgs),
    /// Interconnect subsystems, check small-gain conditions, bound the network.
    Compose(ConfigArgs),
    /// Simulate closed-loop trajectories.
    Simulate(ConfigArgs),
    /// Compare a formal bound against Monte Carlo frequencies.
    Validate(ConfigArgs),
    /// Run the built-in worked examples end to end.
    ReproducePaper {
        #[arg(long, value_parser = clap::value_parser!(u32).range(4..=7))]
        section: u32,
    },
}

fn main() -> ExitCode {
    env_logger::Builder::from_env(env_logger::Env::default().default_filter_or("warn")).init();
    let cli = Cli::parse();
    if let Some(n) = cli.threads {
        if n == 0 || rayon::ThreadPoolBuilder::new().num_threads(n).build_global().is_err() {
            eprintln!("error: cannot start {n} worker threads");
            return ExitCode::from(Status::UsageError as u8);
        }
    }
    let explicit_out = cli.out;
    let (name, args) = match cli.command {
        Command::Abstract(a) => ("abstract", a),
        Command::Synthesize(a) => ("synthesize", a),
        Command::Bounds(a) => ("bounds", a),
        Command::VerifyBarrier(a) => ("verify-barrier", a),
        Command::Compose(a) => ("compose", a),
        Command::Simulate(a) => ("simulate", a),
        Command::Validate(a) => ("validate", a),
        Command::ReproducePaper { section } => {
            let out = explicit_out.unwrap_or_else(default_out_dir);
            let (status, art) = reproduce(section, &out, cli.threads);
            print!("{}", art.console());
            return ExitCode::from(status as u8);
        }
    };
    let (cfg, hash) = match config::load(&args.config, &args.set) {
        Ok(v) => v,
        Err(e) => {
            eprintln!("error[{}]: {e}", e.code());
            return ExitCode::from(Status::UsageError as u8);
        }
    };
    let out = explicit_out
        .or_else(|| cfg.output.as_ref().map(|o| PathBuf::from(&o.dir)))
        .unwrap_or_else(default_out_dir);
    let (status, art) = execute(name, &cfg, Some(hash), &out, cli.threads);
    if status == Status::UsageError {
        eprint!("{}", art.console());
    } else {
        print!("{}", art.console());
    }
    ExitCode::from(status as u8)
}
