//! `patchrev`: batch driver for reversible adversarial patch attacks.

mod attack;
mod bench;
mod corpus;
mod evaluate;
mod oracle;
mod restore;
mod train;

use std::fmt;
use std::process::ExitCode;

use clap::{Args, Parser, Subcommand};
use patchrev_core::attack::{AttackError, BheConfig, OracleError};
use patchrev_core::{Codec, EmbedConfig, ImageError, PipelineError, Thresholds};

#[derive(Parser)]
#[command(
    name = "patchrev",
    version,
    about = "Reversible adversarial patch attacks on image corpora"
)]
struct Cli {
    #[command(subcommand)]
    command: Command,
}

#[derive(Subcommand)]
enum Command {
    /// Place a patch on every input image and write reversible adversarial examples
    Attack(attack::AttackArgs),
    /// Recover the original images from reversible adversarial examples
    Restore(restore::RestoreArgs),
    /// Restore RAEs and compare them bit-for-bit with their originals
    Verify(restore::VerifyArgs),
    /// ASR, PSNR and SSIM per noise percentage, as CSV
    Evaluate(evaluate::EvaluateArgs),
    /// Payload size against embedding capacity per image, as CSV
    Capacity(attack::CapacityArgs),
    /// Mean embed and restore wall-clock time per image
    Bench(bench::BenchArgs),
    /// Train a patch against the built-in toy classifier
    TrainPatch(train::TrainArgs),
    /// Write a seeded corpus of synthetic images
    Synth(train::SynthArgs),
}

/// A run-level failure, mapped to the process exit code.
#[derive(Debug)]
pub enum Failure {
    Verify(String),
    Config(String),
    Oracle(String),
}

impl Failure {
    fn code(&self) -> u8 {
        match self {
            Failure::Verify(_) => 1,
            Failure::Config(_) => 2,
            Failure::Oracle(_) => 3,
        }
    }
}

impl fmt::Display for Failure {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        match self {
            Failure::Verify(m) => write!(f, "verification failed: {m}"),
            Failure::Config(m) => write!(f, "{m}"),
            Failure::Oracle(m) => write!(f, "oracle: {m}"),
        }
    }
}

impl From<OracleError> for Failure {
    fn from(e: OracleError) -> Self {
        Failure::Oracle(e.to_string())
    }
}

pub fn config(e: impl fmt::Display) -> Failure {
    Failure::Config(e.to_string())
}

/// Outcome of one image that did not produce output. `Fatal` stops the batch.
#[derive(Debug)]
pub enum ItemError {
    Fatal(Failure),
    Skip {
        status: &'static str,
        message: String,
    },
}

impl ItemError {
    fn error(e: impl fmt::Display) -> Self {
        ItemError::Skip {
            status: "error",
            message: e.to_string(),
        }
    }
}

impl From<Failure> for ItemError {
    fn from(f: Failure) -> Self {
        ItemError::Fatal(f)
    }
}

impl From<PipelineError> for ItemError {
    fn from(e: PipelineError) -> Self {
        if e.is_capacity() {
            ItemError::Skip {
                status: "capacity_exceeded",
                message: e.to_string(),
            }
        } else {
            ItemError::error(e)
        }
    }
}

impl From<ImageError> for ItemError {
    fn from(e: ImageError) -> Self {
        ItemError::error(e)
    }
}

impl From<OracleError> for ItemError {
    fn from(e: OracleError) -> Self {
        ItemError::Fatal(e.into())
    }
}

impl From<AttackError> for ItemError {
    fn from(e: AttackError) -> Self {
        match e {
            AttackError::Oracle(o) => o.into(),
            e @ (AttackError::ClassOutOfRange { .. } | AttackError::Config(_)) => {
                ItemError::Fatal(config(e))
            }
            e => ItemError::error(e),
        }
    }
}

#[derive(Args, Debug, Clone)]
pub struct EmbedArgs {
    /// PEE threshold for all three channels [default: smallest that fits]
    #[arg(long, value_name = "N")]
    threshold: Option<u8>,
    #[arg(long = "threshold-b", value_name = "N")]
    threshold_b: Option<u8>,
    #[arg(long = "threshold-r", value_name = "N")]
    threshold_r: Option<u8>,
    #[arg(long = "threshold-g", value_name = "N")]
    threshold_g: Option<u8>,
    /// Compression for the covered pixels: raw, deflate or webp
    #[arg(long, default_value = "deflate")]
    codec: Codec,
}

impl EmbedArgs {
    pub fn config(&self) -> Result<EmbedConfig, Failure> {
        let per = [self.threshold_b, self.threshold_r, self.threshold_g];
        let thresholds = if self.threshold.is_none() && per.iter().all(Option::is_none) {
            Thresholds::Auto
        } else {
            let mut t = [0u8; 3];
            for (slot, (v, name)) in t.iter_mut().zip(per.iter().zip(["b", "r", "g"])) {
                *slot = v.or(self.threshold).ok_or_else(|| {
                    config(format!(
                        "--threshold-{name} missing; give all three channels or --threshold"
                    ))
                })?;
            }
            patchrev_core::pipeline::threshold_params(t).map_err(config)?;
            Thresholds::Fixed(t)
        };
        Ok(EmbedConfig {
            thresholds,
            codec: self.codec,
        })
    }
}

/// Oracle and placement search settings.
#[derive(Args, Debug, Clone)]
pub struct SearchArgs {
    /// `toy`, `toy:SEED` or `HOST:PORT`; PATCHREV_ORACLE takes precedence
    #[arg(long, default_value = "toy")]
    oracle: String,
    #[arg(long, default_value_t = 0)]
    seed: u64,
    /// BHE population size
    #[arg(long, default_value_t = 10)]
    population: usize,
    #[arg(long, default_value_t = 20)]
    generations: usize,
    /// Random hops per member and generation
    #[arg(long, default_value_t = 3)]
    hops: usize,
}

impl SearchArgs {
    pub fn bhe(&self, width: usize, height: usize, seed: u64) -> BheConfig {
        BheConfig {
            population: self.population,
            generations: self.generations,
            hops_per_gen: self.hops,
            ..BheConfig::for_image(width, height, seed)
        }
    }

    pub fn open_oracle(&self) -> Result<oracle::Oracle, Failure> {
        oracle::Oracle::open(&oracle::resolve(&self.oracle))
    }
}

fn main() -> ExitCode {
    let cli = Cli::parse();
    let result = match cli.command {
        Command::Attack(a) => attack::run(&a),
        Command::Restore(a) => restore::run(&a),
        Command::Verify(a) => restore::verify(&a),
        Command::Evaluate(a) => evaluate::run(&a),
        Command::Capacity(a) => attack::capacity(&a),
        Command::Bench(a) => bench::run(&a),
        Command::TrainPatch(a) => train::run(&a),
        Command::Synth(a) => train::synth(&a),
    };
    match result {
        Ok(()) => ExitCode::SUCCESS,
        Err(f) => {
            eprintln!("patchrev: {f}");
            ExitCode::from(f.code())
        }
    }
}
