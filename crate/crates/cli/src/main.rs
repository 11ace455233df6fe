//! `binrec`: prepare data, train the teacher, distill binary codes, and serve
//! or evaluate them.

mod commands;
mod config;

use std::path::PathBuf;
use std::process::ExitCode;

use clap::{Args, Parser, Subcommand};

use binrec::teacher::Activation;
use binrec::Error;

#[derive(Parser)]
#[command(name = "binrec", version, about = "Graph-convolutional recommender distilled into binary codes")]
struct Cli {
    #[command(subcommand)]
    command: Command,
}

/// Shared by every subcommand.
#[derive(Args, Clone, Debug)]
pub struct Common {
    /// key=value config file; flags override its values
    #[arg(long)]
    pub config: Option<PathBuf>,
    /// Output directory (created if missing); receives the artifact and run.kv
    #[arg(long)]
    pub out: Option<PathBuf>,
}

/// Training knobs. Unset flags fall back to the config file, then to the defaults shown.
#[derive(Args, Clone, Debug, Default)]
pub struct HyperArgs {
    /// Teacher latent width D; codes have 3D bits [default: 64]
    #[arg(long)]
    pub dim: Option<usize>,
    /// L2 weight on the teacher embeddings [default: 0.001]
    #[arg(long)]
    pub lambda: Option<f64>,
    /// Adam learning rate [default: 0.001]
    #[arg(long)]
    pub lr: Option<f64>,
    /// Maximum number of epochs [default: 200]
    #[arg(long)]
    pub epochs: Option<usize>,
    /// RNG seed [default: 1]
    #[arg(long)]
    pub seed: Option<u64>,
    /// Training pairs per optimiser step, 0 for full batch [default: 0]
    #[arg(long)]
    pub batch_size: Option<usize>,
    /// Teacher: relative loss change over 10 epochs that stops training, 0 to disable [default: 0.0001]
    #[arg(long)]
    pub convergence_tol: Option<f64>,
    /// Spectral convolution nonlinearity: identity, sigmoid, tanh [default: sigmoid]
    #[arg(long)]
    pub activation: Option<Activation>,
    /// Train the cross layers; false keeps their weights at zero [default: true]
    #[arg(long)]
    pub cross_layers: Option<bool>,
    /// Distillation weight; 0 trains plain binary BPR [default: 10]
    #[arg(long)]
    pub alpha: Option<f64>,
    /// Distillation softmax temperature T [default: 1]
    #[arg(long)]
    pub temperature: Option<f64>,
    /// Rounding-noise temperature [default: 0.2]
    #[arg(long)]
    pub tau: Option<f64>,
    /// Corner penalty weight [default: 0.001]
    #[arg(long)]
    pub beta: Option<f64>,
    /// Rounding-noise penalty weight [default: 0.001]
    #[arg(long)]
    pub nu: Option<f64>,
}

#[derive(Subcommand)]
enum Command {
    /// Parse ratings, filter by degree, split per user, and write a data directory
    Prepare {
        #[command(flatten)]
        common: Common,
        /// Rating file
        #[arg(long)]
        input: Option<PathBuf>,
        /// movielens-dat (`u::i::r::t`) or tsv [default: movielens-dat]
        #[arg(long)]
        format: Option<String>,
        /// Minimum ratings per user [default: 20]
        #[arg(long)]
        min_user: Option<usize>,
        /// Minimum ratings per item [default: 20]
        #[arg(long)]
        min_item: Option<usize>,
        /// Fraction of each user's items used for training [default: 0.5]
        #[arg(long)]
        split: Option<f64>,
        /// Keep this fraction of users after filtering [default: 1]
        #[arg(long)]
        subsample: Option<f64>,
        /// Split seed [default: 1]
        #[arg(long)]
        seed: Option<u64>,
    },
    /// Train the graph-convolutional teacher
    TrainTeacher {
        #[command(flatten)]
        common: Common,
        /// Data directory from `prepare`
        #[arg(long)]
        data: Option<PathBuf>,
        #[command(flatten)]
        hyper: HyperArgs,
    },
    /// Distill the teacher into a binary-code student
    Distill {
        #[command(flatten)]
        common: Common,
        #[arg(long)]
        data: Option<PathBuf>,
        /// teacher.dgcb from `train-teacher`
        #[arg(long)]
        teacher: Option<PathBuf>,
        #[command(flatten)]
        hyper: HyperArgs,
    },
    /// Binarise a student checkpoint into packed user and item codes
    ExportCodes {
        #[command(flatten)]
        common: Common,
        /// student.dgcb from `distill`
        #[arg(long)]
        student: Option<PathBuf>,
    },
    /// Print the top-K items for one user from packed codes
    Recommend {
        #[command(flatten)]
        common: Common,
        #[arg(long)]
        data: Option<PathBuf>,
        /// Directory with users.binc and items.binc
        #[arg(long)]
        codes: Option<PathBuf>,
        /// External user key
        #[arg(long)]
        user: Option<String>,
        /// Number of items [default: 10]
        #[arg(long)]
        k: Option<usize>,
    },
    /// Recall/MAP/NDCG at one or more cutoffs for packed codes or a teacher
    Evaluate {
        #[command(flatten)]
        common: Common,
        #[arg(long)]
        data: Option<PathBuf>,
        /// Directory with users.binc and items.binc
        #[arg(long)]
        codes: Option<PathBuf>,
        /// Evaluate real-valued teacher embeddings instead of codes
        #[arg(long)]
        teacher: Option<PathBuf>,
        /// Comma-separated cutoffs [default: 100]
        #[arg(long)]
        k: Option<String>,
        /// Dataset label for the CSV row [default: data directory name]
        #[arg(long)]
        dataset: Option<String>,
        /// Model label for the CSV row [default: binary or teacher]
        #[arg(long)]
        model: Option<String>,
        /// Seed label for the CSV row [default: the seed recorded with the model]
        #[arg(long)]
        seed: Option<u64>,
    },
    /// Time packed-binary top-K retrieval against a 32-bit dense baseline
    Bench {
        #[command(flatten)]
        common: Common,
        /// Directory with users.binc and items.binc; random codes when absent
        #[arg(long)]
        codes: Option<PathBuf>,
        /// Code length for random codes [default: 192]
        #[arg(long)]
        bits: Option<usize>,
        /// Item count for random codes [default: 100000]
        #[arg(long)]
        items: Option<usize>,
        /// Query count for random codes [default: 200]
        #[arg(long)]
        users: Option<usize>,
        /// Cutoff [default: 100]
        #[arg(long)]
        k: Option<usize>,
        /// Timed passes over all queries [default: 3]
        #[arg(long)]
        repetitions: Option<usize>,
        /// Seed for random codes [default: 1]
        #[arg(long)]
        seed: Option<u64>,
    },
}

fn exit_code(e: &Error) -> u8 {
    match e {
        Error::Config(_) => 2,
        Error::NonFinite(_) => 4,
        _ => 3,
    }
}

fn main() -> ExitCode {
    env_logger::Builder::from_env(env_logger::Env::default().default_filter_or("info")).init();
    let cli = Cli::parse();
    let result = match cli.command {
        Command::Prepare {
            common,
            input,
            format,
            min_user,
            min_item,
            split,
            subsample,
            seed,
        } => commands::prepare(&common, input, format, min_user, min_item, split, subsample, seed),
        Command::TrainTeacher { common, data, hyper } => commands::train_teacher(&common, data, &hyper),
        Command::Distill {
            common,
            data,
            teacher,
            hyper,
        } => commands::distill(&common, data, teacher, &hyper),
        Command::ExportCodes { common, student } => commands::export_codes(&common, student),
        Command::Recommend {
            common,
            data,
            codes,
            user,
            k,
        } => commands::recommend(&common, data, codes, user, k),
        Command::Evaluate {
            common,
            data,
            codes,
            teacher,
            k,
            dataset,
            model,
            seed,
        } => commands::evaluate(&common, data, codes, teacher, k, dataset, model, seed),
        Command::Bench {
            common,
            codes,
            bits,
            items,
            users,
            k,
            repetitions,
            seed,
        } => commands::bench(&common, codes, bits, items, users, k, repetitions, seed),
    };
    match result {
        Ok(()) => ExitCode::SUCCESS,
        Err(e) => {
            eprintln!("error: {e}");
            ExitCode::from(exit_code(&e))
        }
    }
}
