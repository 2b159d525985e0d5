use std::path::PathBuf;
use std::process::ExitCode;

use clap::{Args, Parser, Subcommand};

use minivp_cli::commands::ablate::cmd_ablate;
use minivp_cli::commands::eval::cmd_eval;
use minivp_cli::commands::gen_data::cmd_gen_data;
use minivp_cli::commands::sample::cmd_sample;
use minivp_cli::commands::sweep::cmd_sweep;
use minivp_cli::commands::train::cmd_train;
use minivp_cli::commands::train_probes::cmd_train_probes;
use minivp_cli::config::load_config;
use minivp_cli::init_workers;

#[derive(Args)]
struct RunArgs {
    /// Config JSON, or a manifest.json from an earlier run.
    #[arg(long)]
    config: PathBuf,
    /// Output directory; created if missing.
    #[arg(long)]
    out: PathBuf,
    /// Overrides the config's seed.
    #[arg(long)]
    seed: Option<u64>,
    /// Shrinks sample counts and step budgets for smoke runs.
    #[arg(long)]
    fast: bool,
}

#[derive(Subcommand)]
enum Cmd {
    /// Synthesize a dataset with train and test splits.
    GenData(RunArgs),
    /// Train feature probes on a dataset and checkpoint them.
    TrainProbes(RunArgs),
    /// Train one model and checkpoint it with a loss log.
    Train(RunArgs),
    /// Score a trained model against the test split.
    Eval(RunArgs),
    /// Train and score the capacity grid.
    Sweep(RunArgs),
    /// Paired skip or context ablation tables.
    Ablate(RunArgs),
    /// Render qualitative prediction strips.
    Sample(RunArgs),
}

#[derive(Parser)]
#[command(name = "minivp", version, about = "video prediction workbench")]
struct Cli {
    #[command(subcommand)]
    cmd: Cmd,
}

fn dispatch(cmd: &Cmd) -> minivp_core::error::Result<()> {
    // Manifest seed and fast-mode carry over unless the flags override them.
    macro_rules! run {
        ($args:expr, $name:literal, $f:ident) => {{
            let (cfg, mseed, mfast) = load_config(&$args.config, $name)?;
            let seed = $args.seed.or(mseed);
            let fast = $args.fast || mfast.unwrap_or(false);
            $f(&cfg, &$args.out, seed, fast)
        }};
    }
    match cmd {
        Cmd::GenData(a) => run!(a, "gen-data", cmd_gen_data),
        Cmd::TrainProbes(a) => run!(a, "train-probes", cmd_train_probes),
        Cmd::Train(a) => run!(a, "train", cmd_train),
        Cmd::Eval(a) => run!(a, "eval", cmd_eval),
        Cmd::Sweep(a) => run!(a, "sweep", cmd_sweep),
        Cmd::Ablate(a) => run!(a, "ablate", cmd_ablate),
        Cmd::Sample(a) => run!(a, "sample", cmd_sample),
    }
}

fn main() -> ExitCode {
    init_workers();
    let cli = Cli::parse();
    match dispatch(&cli.cmd) {
        Ok(()) => ExitCode::SUCCESS,
        Err(e) => {
            eprintln!("error: {e}");
            ExitCode::FAILURE
        }
    }
}
