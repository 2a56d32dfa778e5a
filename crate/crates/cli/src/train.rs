use std::fs;
use std::path::PathBuf;

use clap::Args;
use patchrev_core::attack::{train_patch_eot, EotConfig};
use patchrev_core::imagecore::square_side_for_fraction;
use patchrev_core::synth::synthetic_image;
use patchrev_core::{load_png, save_png, RasterImage};
use rand::SeedableRng;
use rand_chacha::ChaCha8Rng;

use crate::corpus::list_pngs;
use crate::oracle::{resolve, Oracle};
use crate::{config, Failure};

#[derive(Args, Debug)]
pub struct TrainArgs {
    /// Training images [default: synthetic images of --size]
    #[arg(long = "in", value_name = "DIR")]
    input: Option<PathBuf>,
    /// Side of the synthetic training images
    #[arg(long, default_value_t = 32)]
    size: usize,
    /// Number of synthetic training images
    #[arg(long, default_value_t = 32)]
    count: usize,
    /// Patch area as a percentage of the first training image
    #[arg(long, default_value_t = 6, value_parser = clap::value_parser!(u8).range(1..=50))]
    pct: u8,
    /// Explicit patch side in pixels, instead of --pct
    #[arg(long, conflicts_with = "pct")]
    side: Option<usize>,
    #[arg(long)]
    target: usize,
    #[arg(long)]
    steps: Option<usize>,
    #[arg(long, default_value_t = 0)]
    seed: u64,
    /// `toy` or `toy:SEED`
    #[arg(long, default_value = "toy")]
    oracle: String,
    /// Output patch PNG; the sidecar goes next to it
    #[arg(long, value_name = "FILE")]
    out: PathBuf,
}

pub fn run(args: &TrainArgs) -> Result<(), Failure> {
    let oracle = Oracle::open(&resolve(&args.oracle))?;
    let clf = oracle.toy().ok_or_else(|| {
        config("train-patch needs the toy oracle; remote models train their own patches")
    })?;
    let data: Vec<RasterImage> = match &args.input {
        Some(dir) => list_pngs(dir)?
            .iter()
            .map(|p| load_png(p))
            .collect::<Result<_, _>>()
            .map_err(config)?,
        None => {
            let mut rng = ChaCha8Rng::seed_from_u64(args.seed);
            (0..args.count)
                .map(|_| synthetic_image(&mut rng, args.size, args.size))
                .collect()
        }
    };
    let first = data.first().ok_or_else(|| config("no training images"))?;
    let side = args.side.unwrap_or_else(|| {
        square_side_for_fraction(first.width(), first.height(), args.pct as f64 / 100.0)
    });
    let mut cfg = EotConfig::for_images(args.target, first.height(), first.width(), args.seed);
    if let Some(steps) = args.steps {
        cfg.steps = steps;
    }
    let patch = train_patch_eot(clf, &data, &cfg, side).map_err(config)?;
    if let Some(dir) = args.out.parent().filter(|d| !d.as_os_str().is_empty()) {
        fs::create_dir_all(dir).map_err(config)?;
    }
    patch.save(&args.out).map_err(config)?;
    eprintln!(
        "train-patch: {side}px patch for class {} -> {}",
        args.target,
        args.out.display()
    );
    Ok(())
}

#[derive(Args, Debug)]
pub struct SynthArgs {
    #[arg(long, value_name = "DIR")]
    out: PathBuf,
    #[arg(long, default_value_t = 10)]
    count: usize,
    #[arg(long, default_value_t = 32)]
    size: usize,
    #[arg(long, default_value_t = 0)]
    seed: u64,
}

pub fn synth(args: &SynthArgs) -> Result<(), Failure> {
    if args.size == 0 {
        return Err(config("--size must be positive"));
    }
    fs::create_dir_all(&args.out).map_err(config)?;
    let mut rng = ChaCha8Rng::seed_from_u64(args.seed);
    for i in 0..args.count {
        let img = synthetic_image(&mut rng, args.size, args.size);
        save_png(&img, &args.out.join(format!("img_{i:04}.png"))).map_err(config)?;
    }
    Ok(())
}
