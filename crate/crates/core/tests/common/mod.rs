#![allow(dead_code)]

use std::path::{Path, PathBuf};

use patchrev_core::attack::{bhe_optimize, train_patch_eot, BheConfig, EotConfig, ToyClassifier};
use patchrev_core::imagecore::{extract_region, load_png, square_side_for_fraction};
use patchrev_core::synth::synthetic_image;
use patchrev_core::{Patch, PatchBBox, RasterImage};
use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;
use sha2::{Digest, Sha256};

pub const SIDE: usize = 32;
pub const PCTS: [usize; 4] = [3, 4, 5, 6];
pub const TARGET: usize = 2;

pub fn data_dir() -> PathBuf {
    Path::new(env!("CARGO_MANIFEST_DIR")).join("tests/data/photos")
}

pub fn photos() -> Vec<RasterImage> {
    let mut paths: Vec<_> = std::fs::read_dir(data_dir())
        .expect("photo fixtures")
        .map(|e| e.unwrap().path())
        .filter(|p| p.extension().is_some_and(|e| e == "png"))
        .collect();
    paths.sort();
    paths.iter().map(|p| load_png(p).unwrap()).collect()
}

pub fn random_crop(rng: &mut ChaCha8Rng, photos: &[RasterImage], side: usize) -> RasterImage {
    let p = &photos[rng.gen_range(0..photos.len())];
    let y = rng.gen_range(0..=p.height() - side);
    let x = rng.gen_range(0..=p.width() - side);
    extract_region(p, PatchBBox::square(x, y, side)).unwrap()
}

pub fn synthetic(rng: &mut ChaCha8Rng) -> RasterImage {
    synthetic_image(rng, SIDE, SIDE)
}

pub fn patch_side(pct: usize) -> usize {
    square_side_for_fraction(SIDE, SIDE, pct as f64 / 100.0)
}

pub fn sha256(img: &RasterImage) -> [u8; 32] {
    Sha256::digest(img.data()).into()
}

/// Toy classifier plus one trained patch per noise percentage.
pub struct ToySetup {
    pub clf: ToyClassifier,
    pub patches: Vec<(usize, Patch)>,
}

impl ToySetup {
    pub fn new(seed: u64) -> Self {
        let clf = ToyClassifier::toy(seed);
        let mut rng = ChaCha8Rng::seed_from_u64(seed ^ 0xa5a5);
        let train: Vec<RasterImage> = (0..32).map(|_| synthetic(&mut rng)).collect();
        let patches = PCTS
            .iter()
            .map(|&pct| {
                let cfg = EotConfig::for_images(TARGET, SIDE, SIDE, seed + pct as u64);
                (
                    pct,
                    train_patch_eot(&clf, &train, &cfg, patch_side(pct)).unwrap(),
                )
            })
            .collect();
        Self { clf, patches }
    }

    pub fn patch(&self, pct: usize) -> &Patch {
        &self.patches.iter().find(|(p, _)| *p == pct).unwrap().1
    }

    /// BHE placement of the `pct` patch on `image`.
    pub fn place(&self, image: &RasterImage, pct: usize, cfg: &BheConfig) -> PatchBBox {
        bhe_optimize(self.clf.clone(), image, self.patch(pct), cfg)
            .unwrap()
            .bbox
    }
}

/// Reduced search used where thousands of images are attacked.
pub fn light_bhe(seed: u64) -> BheConfig {
    BheConfig {
        population: 6,
        generations: 4,
        hops_per_gen: 2,
        ..BheConfig::for_image(SIDE, SIDE, seed)
    }
}
