use std::path::PathBuf;

use clap::Args;
use patchrev_core::attack::{argmax, ClassifierOracle};
use patchrev_core::pipeline::protect_adv;
use patchrev_core::{load_png, psnr, ssim, Psnr, RasterImage};

use crate::attack::{fit_patch, place, side_for_pct};
use crate::corpus::{emit, file_name, item_seed, list_pngs, num};
use crate::{config, EmbedArgs, Failure, ItemError, SearchArgs};

#[derive(Args, Debug)]
pub struct EvaluateArgs {
    /// Directory of original images
    #[arg(long = "in", value_name = "DIR")]
    input: PathBuf,
    /// Patch PNG with its JSON sidecar, at least as large as the biggest placement
    #[arg(long, value_name = "FILE")]
    patch: PathBuf,
    /// Noise percentages to evaluate
    #[arg(long, value_delimiter = ',', default_value = "3,4,5,6", value_parser = clap::value_parser!(u8).range(3..=6))]
    pcts: Vec<u8>,
    /// CSV output [default: stdout]
    #[arg(long, value_name = "FILE")]
    report: Option<PathBuf>,
    #[command(flatten)]
    search: SearchArgs,
    #[command(flatten)]
    embed: EmbedArgs,
}

pub const EVALUATE_HEADER: &str = "noise_pct,images,capacity_failures,asr_adv,asr_rae,\
psnr_rae_vs_adv_db,ssim_rae_vs_adv,psnr_rae_vs_original_db,ssim_rae_vs_original";

#[derive(Default)]
struct Tally {
    images: usize,
    capacity_failures: usize,
    hits_adv: usize,
    hits_rae: usize,
    psnr_adv: Vec<Psnr>,
    ssim_adv: Vec<f64>,
    psnr_orig: Vec<Psnr>,
    ssim_orig: Vec<f64>,
}

/// Mean over finite values; `inf` when every pair was identical.
fn mean_psnr(values: &[Psnr]) -> String {
    let finite: Vec<f64> = values.iter().filter_map(|p| p.db()).collect();
    if finite.is_empty() {
        return if values.is_empty() {
            "nan".into()
        } else {
            Psnr::Infinite.to_string()
        };
    }
    num(finite.iter().sum::<f64>() / finite.len() as f64)
}

fn mean(values: &[f64]) -> f64 {
    values.iter().sum::<f64>() / values.len() as f64
}

impl Tally {
    fn row(&self, pct: u8) -> String {
        let n = self.images as f64;
        format!(
            "{pct},{},{},{},{},{},{},{},{}\n",
            self.images,
            self.capacity_failures,
            num(self.hits_adv as f64 / n),
            num(self.hits_rae as f64 / n),
            mean_psnr(&self.psnr_adv),
            num(mean(&self.ssim_adv)),
            mean_psnr(&self.psnr_orig),
            num(mean(&self.ssim_orig)),
        )
    }
}

fn metrics(a: &RasterImage, b: &RasterImage) -> Result<(Psnr, f64), ItemError> {
    let both = psnr(a, b).and_then(|p| Ok((p, ssim(a, b)?)));
    both.map_err(ItemError::error)
}

pub fn run(args: &EvaluateArgs) -> Result<(), Failure> {
    let cfg = args.embed.config()?;
    let patch = patchrev_core::Patch::load(&args.patch)
        .map_err(|e| config(format!("patch {}: {e}", args.patch.display())))?;
    let inputs = list_pngs(&args.input)?;
    if inputs.is_empty() {
        return Err(config(format!("no PNG images in {}", args.input.display())));
    }
    let images = inputs
        .iter()
        .map(|p| load_png(p).map(|img| (file_name(p), img)))
        .collect::<Result<Vec<_>, _>>()
        .map_err(config)?;
    let mut oracle = args.search.open_oracle()?;
    let target = patch.target_class;

    let mut out = format!("{EVALUATE_HEADER}\n");
    for &pct in &args.pcts {
        let mut tally = Tally::default();
        for (name, image) in &images {
            let seed = item_seed(args.search.seed, name);
            let outcome = (|| -> Result<(), ItemError> {
                let sized = fit_patch(&patch, side_for_pct(image, pct))?;
                let p = place(&mut oracle, image, &sized, &args.search, seed)?;
                let prot = protect_adv(image, &p.adv, p.bbox, &cfg)?;
                let hit_adv = argmax(&oracle.probs(&p.adv)?) == target;
                let hit_rae = argmax(&oracle.probs(&prot.rae)?) == target;
                let (pa, sa) = metrics(&p.adv, &prot.rae)?;
                let (po, so) = metrics(image, &prot.rae)?;
                tally.images += 1;
                tally.hits_adv += hit_adv as usize;
                tally.hits_rae += hit_rae as usize;
                tally.psnr_adv.push(pa);
                tally.ssim_adv.push(sa);
                tally.psnr_orig.push(po);
                tally.ssim_orig.push(so);
                Ok(())
            })();
            match outcome {
                Ok(()) => {}
                Err(ItemError::Fatal(f)) => return Err(f),
                Err(ItemError::Skip { status, message }) => {
                    eprintln!("{pct}% {name}: {status}: {message}");
                    tally.capacity_failures += (status == "capacity_exceeded") as usize;
                }
            }
        }
        out += &tally.row(pct);
    }
    emit(args.report.as_deref(), &out)
}
