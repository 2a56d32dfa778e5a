use std::path::{Path, PathBuf};

use clap::Args;
use patchrev_core::attack::bhe_optimize;
use patchrev_core::imagecore::square_side_for_fraction;
use patchrev_core::pipeline::{protect_adv, required_bits, AUTO_MAX_THRESHOLD};
use patchrev_core::{
    apply_patch, load_png, save_png, Codec, Patch, PatchBBox, PatchTransform, RasterImage,
    Rotation, Thresholds,
};
use serde::Serialize;

use crate::corpus::{emit, file_name, item_seed, list_pngs, prepare_out, write_json};
use crate::oracle::Oracle;
use crate::{config, EmbedArgs, Failure, ItemError, SearchArgs};

#[derive(Args, Debug, Clone)]
pub struct PatchArgs {
    /// Patch PNG with its JSON sidecar
    #[arg(long, value_name = "FILE")]
    pub patch: PathBuf,
    /// Patch area as a percentage of the image
    #[arg(long, default_value_t = 3, value_parser = clap::value_parser!(u8).range(3..=6))]
    pub pct: u8,
    /// Explicit patch side in pixels, instead of --pct
    #[arg(long, conflicts_with = "pct")]
    pub side: Option<usize>,
}

impl PatchArgs {
    pub fn load(&self) -> Result<Patch, Failure> {
        Patch::load(&self.patch).map_err(|e| config(format!("patch {}: {e}", self.patch.display())))
    }

    pub fn side_for(&self, image: &RasterImage) -> usize {
        self.side.unwrap_or_else(|| side_for_pct(image, self.pct))
    }
}

pub fn side_for_pct(image: &RasterImage, pct: u8) -> usize {
    square_side_for_fraction(image.width(), image.height(), pct as f64 / 100.0)
}

/// The patch shrunk to `side` pixels.
pub fn fit_patch(patch: &Patch, side: usize) -> Result<Patch, ItemError> {
    if side == 0 || side > patch.side() {
        return Err(ItemError::error(format!(
            "a {}px patch cannot cover a {side}px square",
            patch.side()
        )));
    }
    let t = PatchTransform::to_side(patch.side(), side, Rotation::R0)?;
    Ok(Patch::new(patch.transformed(&t)?, patch.target_class)?)
}

pub struct Placement {
    pub adv: RasterImage,
    pub bbox: PatchBBox,
    pub fitness: f64,
    pub queries: usize,
}

/// BHE placement of `patch` (already at its final size) and the pasted image.
pub fn place(
    oracle: &mut Oracle,
    image: &RasterImage,
    patch: &Patch,
    search: &SearchArgs,
    seed: u64,
) -> Result<Placement, ItemError> {
    let cfg = search.bhe(image.width(), image.height(), seed);
    let best = bhe_optimize(&mut *oracle, image, patch, &cfg)?;
    let adv = apply_patch(image, patch, best.bbox, &PatchTransform::IDENTITY)?;
    Ok(Placement {
        adv,
        bbox: best.bbox,
        fitness: best.fitness,
        queries: best.queries,
    })
}

#[derive(Args, Debug)]
pub struct AttackArgs {
    #[arg(long = "in", value_name = "DIR")]
    input: PathBuf,
    #[arg(long, value_name = "DIR")]
    out: PathBuf,
    /// JSON report with the status of every file
    #[arg(long, value_name = "FILE")]
    report: Option<PathBuf>,
    #[command(flatten)]
    patch: PatchArgs,
    #[command(flatten)]
    search: SearchArgs,
    #[command(flatten)]
    embed: EmbedArgs,
}

#[derive(Serialize)]
struct Sidecar {
    source: String,
    oracle: String,
    seed: u64,
    noise_pct: Option<u8>,
    bbox: PatchBBox,
    fitness: f64,
    queries: usize,
    target_class: usize,
    threshold_mode: &'static str,
    thresholds: [u8; 3],
    codec: Codec,
    capacity_bits: [usize; 3],
    payload_bits: usize,
    secret_bytes: usize,
}

#[derive(Serialize)]
pub struct FileStatus {
    pub file: String,
    pub status: &'static str,
    #[serde(skip_serializing_if = "Option::is_none")]
    pub message: Option<String>,
}

#[derive(Serialize)]
struct AttackReport {
    written: usize,
    skipped: usize,
    files: Vec<FileStatus>,
}

pub fn run(args: &AttackArgs) -> Result<(), Failure> {
    let cfg = args.embed.config()?;
    let patch = args.patch.load()?;
    let inputs = list_pngs(&args.input)?;
    prepare_out(&args.input, &args.out)?;
    let oracle_name = crate::oracle::resolve(&args.search.oracle);
    let mut oracle = args.search.open_oracle()?;

    let mut files = Vec::new();
    for path in &inputs {
        let name = file_name(path);
        let seed = item_seed(args.search.seed, &name);
        let outcome = (|| -> Result<Sidecar, ItemError> {
            let image = load_png(path)?;
            let sized = fit_patch(&patch, args.patch.side_for(&image))?;
            let p = place(&mut oracle, &image, &sized, &args.search, seed)?;
            let prot = protect_adv(&image, &p.adv, p.bbox, &cfg)?;
            save_png(&prot.rae, &args.out.join(&name))?;
            Ok(Sidecar {
                source: name.clone(),
                oracle: oracle_name.clone(),
                seed,
                noise_pct: args.patch.side.is_none().then_some(args.patch.pct),
                bbox: p.bbox,
                fitness: p.fitness,
                queries: p.queries,
                target_class: patch.target_class,
                threshold_mode: match cfg.thresholds {
                    Thresholds::Auto => "auto",
                    Thresholds::Fixed(_) => "fixed",
                },
                thresholds: prot.header.thresholds.map(|t| t.threshold()),
                codec: prot.codec,
                capacity_bits: prot.capacity,
                payload_bits: prot.payload_bits,
                secret_bytes: prot.secret_bytes,
            })
        })();
        let status = match outcome {
            Ok(sidecar) => {
                write_json(&sidecar_path(&args.out, &name), &sidecar)?;
                FileStatus {
                    file: name,
                    status: "ok",
                    message: None,
                }
            }
            Err(ItemError::Fatal(f)) => return Err(f),
            Err(ItemError::Skip { status, message }) => {
                eprintln!("{name}: {status}: {message}");
                FileStatus {
                    file: name,
                    status,
                    message: Some(message),
                }
            }
        };
        files.push(status);
    }

    let written = files.iter().filter(|f| f.status == "ok").count();
    eprintln!(
        "attack: {written} written, {} skipped",
        files.len() - written
    );
    if let Some(report) = &args.report {
        write_json(
            report,
            &AttackReport {
                written,
                skipped: files.len() - written,
                files,
            },
        )?;
    }
    Ok(())
}

pub fn sidecar_path(dir: &Path, png_name: &str) -> PathBuf {
    dir.join(png_name).with_extension("json")
}

#[derive(Args, Debug)]
pub struct CapacityArgs {
    #[arg(long = "in", value_name = "DIR")]
    input: PathBuf,
    /// CSV output [default: stdout]
    #[arg(long, value_name = "FILE")]
    report: Option<PathBuf>,
    #[command(flatten)]
    patch: PatchArgs,
    #[command(flatten)]
    search: SearchArgs,
    #[command(flatten)]
    embed: EmbedArgs,
}

pub const CAPACITY_HEADER: &str = "image,status,x0,y0,side,t_b,t_r,t_g,required_bits,capacity_bits";

struct CapacityRow {
    bbox: PatchBBox,
    t: [u8; 3],
    needed: usize,
    available: usize,
}

pub fn capacity(args: &CapacityArgs) -> Result<(), Failure> {
    let cfg = args.embed.config()?;
    let patch = args.patch.load()?;
    let inputs = list_pngs(&args.input)?;
    let mut oracle = args.search.open_oracle()?;

    let mut out = format!("{CAPACITY_HEADER}\n");
    for path in &inputs {
        let name = file_name(path);
        let seed = item_seed(args.search.seed, &name);
        let row = (|| -> Result<CapacityRow, ItemError> {
            let image = load_png(path)?;
            let sized = fit_patch(&patch, args.patch.side_for(&image))?;
            let p = place(&mut oracle, &image, &sized, &args.search, seed)?;
            let candidates: Vec<[u8; 3]> = match cfg.thresholds {
                Thresholds::Fixed(t) => vec![t],
                Thresholds::Auto => (1..=AUTO_MAX_THRESHOLD).map(|t| [t; 3]).collect(),
            };
            let auto = matches!(cfg.thresholds, Thresholds::Auto);
            let mut last = None;
            for t in candidates {
                match required_bits(&image, &p.adv, p.bbox, t, cfg.codec) {
                    Ok((needed, available)) => {
                        last = Some(CapacityRow {
                            bbox: p.bbox,
                            t,
                            needed,
                            available,
                        });
                        if needed <= available {
                            break;
                        }
                    }
                    // the header alone may not fit at a low threshold
                    Err(_) if auto => {}
                    Err(e) => return Err(e.into()),
                }
            }
            last.ok_or_else(|| ItemError::error("header does not fit at any threshold"))
        })();
        match row {
            Ok(r) => {
                let status = if r.needed <= r.available {
                    "fits"
                } else {
                    "exceeds"
                };
                out += &format!(
                    "{name},{status},{},{},{},{},{},{},{},{}\n",
                    r.bbox.x0, r.bbox.y0, r.bbox.w, r.t[0], r.t[1], r.t[2], r.needed, r.available
                );
            }
            Err(ItemError::Fatal(f)) => return Err(f),
            Err(ItemError::Skip { message, .. }) => {
                eprintln!("{name}: {message}");
                out += &format!("{name},error,,,,,,,,\n");
            }
        }
    }
    emit(args.report.as_deref(), &out)
}
