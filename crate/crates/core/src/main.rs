use std::path::PathBuf;
use std::process::ExitCode;

use clap::{Args, Parser, Subcommand};

use gbd_agent::cli::{
    cmd_evalpolicy, cmd_experiment, cmd_gendata, cmd_solve, cmd_train, EvalArgs, ExperimentArgs,
    GendataArgs, SolveArgs, SolveMode, TrainArgs, TrainStage,
};
use gbd_agent::policy::HeadKind;

/// Decomposition workbench: expert data generation, policy training and
/// evaluation, and solver runs with classical or learned master steps.
#[derive(Parser)]
#[command(name = "gbd-agent", version, about)]
struct Cli {
    #[command(subcommand)]
    command: Command,
}

#[derive(Subcommand)]
enum Command {
    /// Generate expert data by running the classical solver on sampled
    /// instances (seeds scan upward, infeasible instances are skipped).
    Gendata(Gendata),
    /// Train a policy on an expert dataset.
    Train(Train),
    /// Evaluate trained policies on a dataset, writing a metrics CSV.
    Evalpolicy(Evalpolicy),
    /// Solve one instance and write its trace.
    Solve(Solve),
    /// End-to-end experiment: data, training, evaluation, driver
    /// comparison and report.
    Experiment(Experiment),
}

#[derive(Args)]
struct Gendata {
    /// Number of feasible instances to collect.
    #[arg(long, value_parser = clap::value_parser!(u32).range(1..))]
    instances: u32,
    /// Base seed of the scan.
    #[arg(long, default_value_t = 0)]
    seed: u64,
    /// Output dataset (JSON Lines).
    #[arg(long)]
    out: PathBuf,
    /// Instance manifest path (defaults to <out>.manifest.json).
    #[arg(long)]
    manifest: Option<PathBuf>,
    /// Config file of key=value lines.
    #[arg(long)]
    config: Option<PathBuf>,
}

#[derive(Args)]
struct Train {
    /// Training dataset (JSON Lines).
    #[arg(long)]
    data: PathBuf,
    /// Output model file.
    #[arg(long)]
    out: PathBuf,
    /// Training stage: 1, 2 or both.
    #[arg(long, default_value = "both")]
    stage: TrainStage,
    /// Output head: combination or independent.
    #[arg(long, default_value = "combination", value_parser = parse_head)]
    head: HeadKind,
    /// Stage-1 model to fine-tune (required with --stage 2).
    #[arg(long)]
    model_in: Option<PathBuf>,
    /// Feasibility penalty weight of stage 2.
    #[arg(long)]
    omega: Option<f64>,
    /// Training seed.
    #[arg(long)]
    seed: Option<u64>,
    #[arg(long)]
    epochs: Option<usize>,
    #[arg(long)]
    batch: Option<usize>,
    /// Stage-1 learning rate.
    #[arg(long)]
    lr1: Option<f64>,
    /// Stage-2 learning rate.
    #[arg(long)]
    lr2: Option<f64>,
    /// Held-out instance fraction (0 trains on everything).
    #[arg(long)]
    split: Option<f64>,
    /// Where to write the held-out samples.
    #[arg(long)]
    holdout_out: Option<PathBuf>,
    #[arg(long)]
    config: Option<PathBuf>,
}

fn parse_head(s: &str) -> Result<HeadKind, String> {
    match s {
        "combination" => Ok(HeadKind::Combination),
        "independent" => Ok(HeadKind::Independent),
        other => Err(format!(
            "unknown head {other:?} (expected combination or independent)"
        )),
    }
}

#[derive(Args)]
struct Evalpolicy {
    /// Evaluation dataset (JSON Lines).
    #[arg(long)]
    data: PathBuf,
    /// Model file; repeat for one CSV row per model.
    #[arg(long, required = true)]
    model: Vec<PathBuf>,
    /// Output metrics CSV.
    #[arg(long)]
    out: PathBuf,
}

#[derive(Args)]
struct Solve {
    /// Instance seed.
    #[arg(long)]
    seed: u64,
    /// classical, agent, agent-independent or oracle.
    #[arg(long)]
    mode: SolveMode,
    /// Trained model (agent modes).
    #[arg(long)]
    model: Option<PathBuf>,
    /// Output trace file.
    #[arg(long)]
    out: PathBuf,
    /// Also write the expert samples (classical mode).
    #[arg(long)]
    data_out: Option<PathBuf>,
    #[arg(long)]
    config: Option<PathBuf>,
}

#[derive(Args)]
struct Experiment {
    /// Directory for all artifacts.
    #[arg(long)]
    outdir: PathBuf,
    #[arg(long)]
    train_instances: Option<usize>,
    #[arg(long)]
    test_instances: Option<usize>,
    /// Base seed of the training-instance scan.
    #[arg(long)]
    seed: Option<u64>,
    /// Base seed of the held-out-instance scan.
    #[arg(long)]
    test_seed: Option<u64>,
    /// Reuse existing artifacts instead of recomputing them.
    #[arg(long)]
    resume: bool,
    #[arg(long)]
    config: Option<PathBuf>,
}

fn main() -> ExitCode {
    let cli = Cli::parse();
    let result = match cli.command {
        Command::Gendata(a) => cmd_gendata(&GendataArgs {
            instances: a.instances as usize,
            seed: a.seed,
            out: a.out,
            manifest: a.manifest,
            config: a.config,
        }),
        Command::Train(a) => cmd_train(&TrainArgs {
            data: a.data,
            out: a.out,
            stage: a.stage,
            head: a.head,
            model_in: a.model_in,
            omega: a.omega,
            seed: a.seed,
            epochs: a.epochs,
            batch: a.batch,
            lr1: a.lr1,
            lr2: a.lr2,
            split: a.split,
            holdout_out: a.holdout_out,
            config: a.config,
        }),
        Command::Evalpolicy(a) => cmd_evalpolicy(&EvalArgs {
            data: a.data,
            models: a.model,
            out: a.out,
        }),
        Command::Solve(a) => cmd_solve(&SolveArgs {
            seed: a.seed,
            mode: a.mode,
            model: a.model,
            out: a.out,
            data_out: a.data_out,
            config: a.config,
        }),
        Command::Experiment(a) => cmd_experiment(&ExperimentArgs {
            outdir: a.outdir,
            train_instances: a.train_instances,
            test_instances: a.test_instances,
            seed: a.seed,
            test_seed: a.test_seed,
            resume: a.resume,
            config: a.config,
        }),
    };
    match result {
        Ok(()) => ExitCode::SUCCESS,
        Err(err) => {
            eprintln!("error: {err}");
            ExitCode::FAILURE
        }
    }
}
