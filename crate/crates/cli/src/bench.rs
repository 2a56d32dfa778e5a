use std::path::PathBuf;
use std::time::{Duration, Instant};

use clap::Args;
use patchrev_core::pipeline::protect_adv;
use patchrev_core::{apply_patch, load_png, restore, PatchBBox, PatchTransform};
use serde::Serialize;

use crate::attack::{fit_patch, PatchArgs};
use crate::corpus::{emit, file_name, list_pngs};
use crate::{config, EmbedArgs, Failure, ItemError};

pub const MIN_WARMUP: usize = 3;

#[derive(Args, Debug)]
pub struct BenchArgs {
    #[arg(long = "in", value_name = "DIR")]
    input: PathBuf,
    /// Untimed runs per image before measuring
    #[arg(long, default_value_t = MIN_WARMUP)]
    warmup: usize,
    /// Timed runs per image
    #[arg(long, default_value_t = 1)]
    iterations: usize,
    /// JSON output [default: stdout]
    #[arg(long, value_name = "FILE")]
    report: Option<PathBuf>,
    #[command(flatten)]
    patch: PatchArgs,
    #[command(flatten)]
    embed: EmbedArgs,
}

#[derive(Serialize)]
struct BenchReport {
    images: usize,
    skipped: usize,
    warmup: usize,
    iterations: usize,
    embed_mean_ms: f64,
    restore_mean_ms: f64,
    embed_total_ms: f64,
    restore_total_ms: f64,
}

fn ms(d: Duration) -> f64 {
    d.as_secs_f64() * 1e3
}

/// Timing uses a centred patch, so no oracle is involved.
pub fn run(args: &BenchArgs) -> Result<(), Failure> {
    if args.warmup < MIN_WARMUP {
        return Err(config(format!("--warmup must be at least {MIN_WARMUP}")));
    }
    if args.iterations == 0 {
        return Err(config("--iterations must be at least 1"));
    }
    let cfg = args.embed.config()?;
    let patch = args.patch.load()?;
    let inputs = list_pngs(&args.input)?;

    let (mut embed, mut restore_t) = (Duration::ZERO, Duration::ZERO);
    let (mut images, mut skipped) = (0, 0);
    for path in &inputs {
        let outcome = (|| -> Result<(Duration, Duration), ItemError> {
            let image = load_png(path)?;
            let sized = fit_patch(&patch, args.patch.side_for(&image))?;
            let side = sized.side();
            let bbox = PatchBBox::square(
                (image.width() - side) / 2,
                (image.height() - side) / 2,
                side,
            );
            let adv = apply_patch(&image, &sized, bbox, &PatchTransform::IDENTITY)?;
            let (mut e, mut r) = (Duration::ZERO, Duration::ZERO);
            for i in 0..args.warmup + args.iterations {
                let t0 = Instant::now();
                let prot = protect_adv(&image, &adv, bbox, &cfg)?;
                let t1 = Instant::now();
                let back = restore(&prot.rae)?;
                let t2 = Instant::now();
                if back.image != image {
                    return Err(ItemError::error("restored image differs from the original"));
                }
                if i >= args.warmup {
                    e += t1 - t0;
                    r += t2 - t1;
                }
            }
            Ok((e, r))
        })();
        match outcome {
            Ok((e, r)) => {
                embed += e;
                restore_t += r;
                images += 1;
            }
            Err(ItemError::Fatal(f)) => return Err(f),
            Err(ItemError::Skip { status, message }) => {
                eprintln!("{}: {status}: {message}", file_name(path));
                skipped += 1;
            }
        }
    }
    if images == 0 {
        return Err(config("no image could be benchmarked"));
    }
    let runs = (images * args.iterations) as f64;
    let report = BenchReport {
        images,
        skipped,
        warmup: args.warmup,
        iterations: args.iterations,
        embed_mean_ms: ms(embed) / runs,
        restore_mean_ms: ms(restore_t) / runs,
        embed_total_ms: ms(embed),
        restore_total_ms: ms(restore_t),
    };
    let mut text = serde_json::to_string_pretty(&report).map_err(config)?;
    text.push('\n');
    emit(args.report.as_deref(), &text)
}
