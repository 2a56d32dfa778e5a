//! Shared fixtures for the benchmarks.

use patchrev_core::imagecore::square_side_for_fraction;
use patchrev_core::synth::synthetic_image;
use patchrev_core::{apply_patch, Patch, PatchBBox, PatchTransform, RasterImage};
use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;

pub struct Scene {
    pub original: RasterImage,
    pub patch: Patch,
    pub bbox: PatchBBox,
    pub adv: RasterImage,
}

/// A `size`×`size` synthetic image with a random patch covering `pct`% of it, centred.
pub fn scene(seed: u64, size: usize, pct: u8) -> Scene {
    let mut rng = ChaCha8Rng::seed_from_u64(seed);
    let original = synthetic_image(&mut rng, size, size);
    let side = square_side_for_fraction(size, size, pct as f64 / 100.0);
    let patch = Patch::new(RasterImage::from_fn(side, side, |_, _| rng.gen()), 0).expect("square");
    let bbox = PatchBBox::square((size - side) / 2, (size - side) / 2, side);
    let adv = apply_patch(&original, &patch, bbox, &PatchTransform::IDENTITY).expect("fits");
    Scene {
        original,
        patch,
        bbox,
        adv,
    }
}
