use std::path::PathBuf;
use std::process::ExitCode;

use clap::{Parser, Subcommand};
use rdbpf_cli::{CliError, CliResult, RunConfig};

/// Generate stochastic Oregonator datasets and filter them with block
/// particle filters.
#[derive(Parser)]
#[command(name = "rdbpf", version)]
struct Cli {
    /// TOML run configuration; missing keys take their defaults.
    #[arg(long, short, global = true)]
    config: Option<PathBuf>,
    /// Override a configuration key, e.g. `--set filter.n_particles=64`.
    #[arg(long = "set", value_name = "KEY=VALUE", global = true)]
    overrides: Vec<String>,
    /// Worker threads (0 = one per core).
    #[arg(long, env = "RDBPF_THREADS", default_value_t = 0, global = true)]
    threads: usize,
    /// Suppress progress messages.
    #[arg(long, short, global = true)]
    quiet: bool,
    #[command(subcommand)]
    command: Command,
}

#[derive(Subcommand)]
enum Command {
    /// Simulate ground truth and observations into the output directory.
    Generate {
        /// Output directory (`output.dir`).
        #[arg(long)]
        out: Option<PathBuf>,
        /// Grid points per dimension (`lattice.side`).
        #[arg(long)]
        side: Option<usize>,
        /// Simulated time (`dynamics.horizon`).
        #[arg(long)]
        horizon: Option<f64>,
        /// Simulation seed (`seeds.simulation`).
        #[arg(long)]
        seed: Option<u64>,
    },
    /// Run the block particle filter on a generated dataset.
    Filter {
        /// Dataset directory [default: output.dir].
        #[arg(long)]
        data: Option<PathBuf>,
        /// Where to write results [default: <output.dir>/filter-<proposal>].
        #[arg(long)]
        out: Option<PathBuf>,
        /// `optimal`, `standard` or `bootstrap` (`filter.proposal`).
        #[arg(long)]
        proposal: Option<String>,
        #[arg(long)]
        n_particles: Option<usize>,
        #[arg(long)]
        block_side: Option<usize>,
        #[arg(long)]
        side: Option<usize>,
        #[arg(long)]
        horizon: Option<f64>,
        /// Filter seed (`seeds.filter`).
        #[arg(long)]
        seed: Option<u64>,
    },
    /// Align the traces of two filter runs.
    Compare {
        first: PathBuf,
        second: PathBuf,
        #[arg(long, default_value = "compare")]
        out: PathBuf,
    },
    /// Print the homogeneous fixed point of the reaction.
    SteadyState,
}

fn push<T: ToString>(overrides: &mut Vec<String>, key: &str, value: Option<T>) {
    if let Some(v) = value {
        let v = v.to_string();
        // Quote strings so that TOML parsing keeps them verbatim.
        let v = if v.parse::<f64>().is_ok() { v } else { format!("{v:?}") };
        overrides.push(format!("{key}={v}"));
    }
}

fn run(cli: Cli) -> CliResult<()> {
    if cli.threads > 0 {
        rayon::ThreadPoolBuilder::new()
            .num_threads(cli.threads)
            .build_global()
            .map_err(|e| CliError::Usage(format!("cannot start thread pool: {e}")))?;
    }
    let mut overrides = cli.overrides;
    let verbose = !cli.quiet;
    match cli.command {
        Command::Generate { out, side, horizon, seed } => {
            push(&mut overrides, "output.dir", out.map(|p| p.display().to_string()));
            push(&mut overrides, "lattice.side", side);
            push(&mut overrides, "dynamics.horizon", horizon);
            push(&mut overrides, "seeds.simulation", seed);
            let cfg = RunConfig::load(cli.config.as_deref(), &overrides)?;
            let m = rdbpf_cli::generate(&cfg, verbose)?;
            println!(
                "generated {} steps ({} state, {} output variables per step) in {}",
                m.dataset.n_steps,
                m.dataset.n_state,
                m.dataset.n_output,
                cfg.output.dir.display()
            );
        }
        Command::Filter {
            data,
            out,
            proposal,
            n_particles,
            block_side,
            side,
            horizon,
            seed,
        } => {
            push(&mut overrides, "filter.proposal", proposal);
            push(&mut overrides, "filter.n_particles", n_particles);
            push(&mut overrides, "filter.block_side", block_side);
            push(&mut overrides, "lattice.side", side);
            push(&mut overrides, "dynamics.horizon", horizon);
            push(&mut overrides, "seeds.filter", seed);
            let cfg = RunConfig::load(cli.config.as_deref(), &overrides)?;
            let data = data.unwrap_or_else(|| cfg.output.dir.clone());
            let proposal = match cfg.filter.proposal {
                rdbpf::ProposalKind::Bootstrap => "standard",
                rdbpf::ProposalKind::Optimal => "optimal",
            };
            let out = out.unwrap_or_else(|| cfg.output.dir.join(format!("filter-{proposal}")));
            let s = rdbpf_cli::filter(&cfg, &data, &out, verbose)?;
            println!(
                "filtered {} observations: final rmse {:e}, log-evidence {:e}, results in {}",
                s.observations,
                s.final_rmse_total,
                s.total_log_evidence,
                out.display()
            );
        }
        Command::Compare { first, second, out } => {
            let c = rdbpf_cli::compare(&first, &second, &out)?;
            print!("{}", c.summary);
        }
        Command::SteadyState => {
            let cfg = RunConfig::load(cli.config.as_deref(), &overrides)?;
            let (z1, z2) = rdbpf_cli::steady_state(&cfg)?;
            println!("z1 = {z1}\nz2 = {z2}");
        }
    }
    Ok(())
}

fn main() -> ExitCode {
    let cli = match Cli::try_parse() {
        Ok(c) => c,
        Err(e) => {
            let code = if e.use_stderr() { 1 } else { 0 };
            let _ = e.print();
            return ExitCode::from(code);
        }
    };
    match run(cli) {
        Ok(()) => ExitCode::SUCCESS,
        Err(e) => {
            eprintln!("error: {e}");
            ExitCode::from(e.exit_code() as u8)
        }
    }
}
