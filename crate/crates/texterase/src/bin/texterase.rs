use std::path::PathBuf;
use std::process::ExitCode;

use clap::{Parser, Subcommand};
use texterase::cli;

#[derive(Parser)]
#[command(
    name = "texterase",
    about = "Stroke-based scene text erasing: synthesize training data, train the network, erase text, evaluate results"
)]
struct Cli {
    #[command(subcommand)]
    command: Command,
}

#[derive(Subcommand)]
enum Command {
    /// Generate a synthetic training dataset
    Synth {
        /// Engine configuration (JSON)
        #[arg(long)]
        config: PathBuf,
        /// Number of samples to generate
        #[arg(long)]
        count: usize,
        /// Output dataset directory
        #[arg(long)]
        out: PathBuf,
        /// Override the config's seed
        #[arg(long)]
        seed: Option<u64>,
    },
    /// Train the erasing network
    Train {
        /// Training configuration (JSON)
        #[arg(long)]
        config: PathBuf,
    },
    /// Erase annotated text regions from an image
    Erase {
        /// Input photo (PNG or JPEG)
        #[arg(long)]
        input: PathBuf,
        /// Region annotations (JSON)
        #[arg(long)]
        regions: PathBuf,
        /// Network checkpoint
        #[arg(long)]
        weights: PathBuf,
        /// Output image path
        #[arg(long)]
        output: PathBuf,
        /// Optional full-size predicted stroke mask (PNG, text = white)
        #[arg(long)]
        mask_out: Option<PathBuf>,
        /// Process regions concurrently
        #[arg(long)]
        parallel: bool,
        /// Box expansion per side as a fraction of the short side
        #[arg(long)]
        expand: Option<f64>,
    },
    /// Compute PSNR/SSIM/MSE over matched prediction/ground-truth pairs
    Eval {
        /// Directory of predictions
        #[arg(long)]
        pred: PathBuf,
        /// Directory of ground-truth images (matching filenames)
        #[arg(long)]
        gt: PathBuf,
        /// Report base path (writes <base>.json and <base>.csv)
        #[arg(long, default_value = "eval_report")]
        report: PathBuf,
    },
}

fn main() -> ExitCode {
    let cli = Cli::parse();
    let result = match cli.command {
        Command::Synth {
            config,
            count,
            out,
            seed,
        } => cli::cmd_synth(&config, count, &out, seed).map(|_| ()),
        Command::Train { config } => cli::cmd_train(&config).map(|_| ()),
        Command::Erase {
            input,
            regions,
            weights,
            output,
            mask_out,
            parallel,
            expand,
        } => cli::cmd_erase(
            &input,
            &regions,
            &weights,
            &output,
            mask_out.as_deref(),
            parallel,
            expand,
        ),
        Command::Eval { pred, gt, report } => cli::cmd_eval(&pred, &gt, &report),
    };
    match result {
        Ok(()) => ExitCode::SUCCESS,
        Err(e) => {
            eprintln!("error: {e}");
            ExitCode::FAILURE
        }
    }
}
