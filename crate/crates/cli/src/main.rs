//! `vnet`: algebra inspection, equivalence audits, parameter counts, data
//! preparation, training and inference for vector-valued EfficientNets.

mod algebra;
mod data;
mod equiv;
mod error;
mod params;
mod train;

use std::io::Write;
use std::process::ExitCode;

use clap::{Parser, Subcommand, ValueEnum};
use vnet_core::Precision;

use error::CliResult;

#[derive(Debug, Parser)]
#[command(name = "vnet", version, about = "Vector-valued neural networks over arbitrary algebras")]
struct Cli {
    /// Seed for every random choice (default 0).
    #[arg(long, global = true)]
    seed: Option<u64>,

    /// Floating-point precision of the computation.
    #[arg(long, global = true, value_enum)]
    precision: Option<PrecisionArg>,

    /// Machine-readable JSON on stdout.
    #[arg(long, global = true)]
    json: bool,

    #[command(subcommand)]
    command: Command,
}

#[derive(Debug, Clone, Copy, ValueEnum)]
enum PrecisionArg {
    F32,
    F64,
}

impl From<PrecisionArg> for Precision {
    fn from(p: PrecisionArg) -> Self {
        match p {
            PrecisionArg::F32 => Precision::F32,
            PrecisionArg::F64 => Precision::F64,
        }
    }
}

/// Options shared by every command.
#[derive(Debug, Clone, Copy)]
pub struct Globals {
    pub seed: u64,
    pub seed_given: bool,
    pub precision: Option<Precision>,
    pub json: bool,
}

impl Globals {
    pub fn precision_or(&self, default: Precision) -> Precision {
        self.precision.unwrap_or(default)
    }
}

#[derive(Debug, Subcommand)]
enum Command {
    /// Print an algebra's multiplication table and its properties.
    Algebra(algebra::AlgebraArgs),
    /// Compare every emulated vector layer against its direct reference.
    Equiv(equiv::EquivArgs),
    /// Per-layer and total trainable parameter counts.
    Params(params::ParamsArgs),
    /// Convert, embed and split an image folder into a dataset.
    Prepare(data::PrepareArgs),
    /// Apply one random augmentation to an image (preview).
    Augment(data::AugmentArgs),
    /// Write the synthetic two-class texture image folder.
    Synth(data::SynthArgs),
    /// Train a model on a prepared dataset.
    Train(train::TrainArgs),
    /// Logits, class and softmax for one sample or a batch.
    Infer(train::InferArgs),
}

fn run(cli: Cli) -> CliResult {
    let g = Globals {
        seed: cli.seed.unwrap_or(0),
        seed_given: cli.seed.is_some(),
        precision: cli.precision.map(Into::into),
        json: cli.json,
    };
    match cli.command {
        Command::Algebra(a) => algebra::run(&a, &g),
        Command::Equiv(a) => equiv::run(&a, &g),
        Command::Params(a) => params::run(&a, &g),
        Command::Prepare(a) => data::prepare(&a, &g),
        Command::Augment(a) => data::augment(&a, &g),
        Command::Synth(a) => data::synth(&a, &g),
        Command::Train(a) => train::train(&a, &g),
        Command::Infer(a) => train::infer(&a, &g),
    }
}

fn main() -> ExitCode {
    let cli = match Cli::try_parse() {
        Ok(c) => c,
        Err(e) => {
            let code = if e.use_stderr() { error::EXIT_BAD_INPUT } else { 0 };
            let _ = e.print();
            return ExitCode::from(code);
        }
    };
    match run(cli) {
        Ok(()) => ExitCode::SUCCESS,
        Err(e) => {
            eprintln!("error: {e}");
            ExitCode::from(e.code())
        }
    }
}

pub(crate) fn json_out(value: &impl serde::Serialize) -> CliResult {
    let s = serde_json::to_string_pretty(value).map_err(|e| error::failure("serializing output", e))?;
    let mut out = std::io::stdout().lock();
    match writeln!(out, "{s}") {
        Err(e) if e.kind() != std::io::ErrorKind::BrokenPipe => Err(error::failure("writing output", e)),
        _ => Ok(()),
    }
}
