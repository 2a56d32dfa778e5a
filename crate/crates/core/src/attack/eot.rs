//! Patch training by expectation over transformation: gradient ascent on
//! the batch mean of log Pr(target | patched image), with image, location
//! and transform resampled every step.

use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;

use super::toy::{PoolGrid, ToyClassifier};
use super::AttackError;
use crate::imagecore::{Patch, PatchTransform, RasterImage, Rotation};

#[derive(Debug, Clone)]
pub struct EotConfig {
    pub target_class: usize,
    pub steps: usize,
    pub step_size: f64,
    pub transforms: Vec<PatchTransform>,
    /// Images drawn from the dataset per step.
    pub batch: usize,
    pub seed: u64,
}

impl EotConfig {
    /// Defaults for `height`×`width` training images: 150 steps of batch 8
    /// over the four right-angle rotations. The step grows with image area
    /// because each pixel's share of its pooling cell shrinks.
    pub fn for_images(target_class: usize, height: usize, width: usize, seed: u64) -> Self {
        Self {
            target_class,
            steps: 150,
            step_size: 25.0 * (height * width) as f64,
            transforms: Rotation::ALL
                .iter()
                .map(|&r| PatchTransform::new(r, 1.0).expect("unit scale"))
                .collect(),
            batch: 8,
            seed,
        }
    }

    pub fn validate(&self) -> Result<(), AttackError> {
        if !(self.step_size.is_finite() && self.step_size > 0.0) {
            return Err(AttackError::Config(format!(
                "step size {} must be positive",
                self.step_size
            )));
        }
        if self.transforms.is_empty() {
            return Err(AttackError::Config("transform set is empty".into()));
        }
        if self.batch == 0 {
            return Err(AttackError::Config("batch must be at least 1".into()));
        }
        for t in &self.transforms {
            t.validate()?;
        }
        Ok(())
    }
}

/// One draw of (image, transform, location).
#[derive(Debug, Clone, Copy)]
pub struct EotSample {
    pub image: usize,
    pub transform: usize,
    pub x0: usize,
    pub y0: usize,
}

/// A real-valued patch under training.
#[derive(Debug, Clone)]
pub struct PatchParams {
    side: usize,
    /// Interleaved RGB in `[0, 255]`.
    pub values: Vec<f64>,
}

impl PatchParams {
    pub fn random(side: usize, rng: &mut impl Rng) -> Self {
        Self {
            side,
            values: (0..side * side * 3)
                .map(|_| rng.gen_range(0.0..=255.0))
                .collect(),
        }
    }

    pub fn from_patch(patch: &Patch) -> Self {
        Self {
            side: patch.side(),
            values: patch.pixels.data().iter().map(|&v| v as f64).collect(),
        }
    }

    pub fn side(&self) -> usize {
        self.side
    }

    pub fn to_patch(&self, target_class: usize) -> Patch {
        let data = self
            .values
            .iter()
            .map(|v| v.round().clamp(0.0, 255.0) as u8)
            .collect();
        let pixels = RasterImage::new(self.side, self.side, data).expect("patch shape");
        Patch::new(pixels, target_class).expect("square")
    }
}

struct Placed {
    samples: Vec<f64>,
    /// `(image sample index, patch sample index)` for each pasted sample.
    links: Vec<(usize, usize)>,
}

fn place(
    image: &RasterImage,
    patch: &PatchParams,
    t: &PatchTransform,
    x0: usize,
    y0: usize,
) -> Result<Placed, AttackError> {
    let (side, map) = t.index_map(patch.side)?;
    let mut samples: Vec<f64> = image.data().iter().map(|&v| v as f64).collect();
    let mut links = Vec::with_capacity(side * side * 3);
    for dy in 0..side {
        for dx in 0..side {
            let src = map[dy * side + dx];
            let px = (y0 + dy) * image.width() + x0 + dx;
            for c in 0..3 {
                samples[px * 3 + c] = patch.values[src * 3 + c];
                links.push((px * 3 + c, src * 3 + c));
            }
        }
    }
    Ok(Placed { samples, links })
}

fn check_fits(dataset: &[RasterImage], cfg: &EotConfig, side: usize) -> Result<(), AttackError> {
    if dataset.is_empty() {
        return Err(AttackError::Config("dataset is empty".into()));
    }
    for t in &cfg.transforms {
        let s = t.scaled_side(side);
        if s == 0 {
            return Err(AttackError::Config(format!(
                "scale {} collapses the patch",
                t.scale
            )));
        }
        if let Some(img) = dataset
            .iter()
            .find(|img| img.width() < s || img.height() < s)
        {
            return Err(AttackError::PatchTooLarge {
                side: s,
                width: img.width(),
                height: img.height(),
            });
        }
    }
    Ok(())
}

/// Draw `n` samples uniformly over images, transforms and valid locations.
pub fn draw_samples(
    dataset: &[RasterImage],
    cfg: &EotConfig,
    side: usize,
    n: usize,
    rng: &mut impl Rng,
) -> Vec<EotSample> {
    (0..n)
        .map(|_| {
            let image = rng.gen_range(0..dataset.len());
            let transform = rng.gen_range(0..cfg.transforms.len());
            let s = cfg.transforms[transform].scaled_side(side);
            let img = &dataset[image];
            EotSample {
                image,
                transform,
                x0: rng.gen_range(0..=img.width() - s),
                y0: rng.gen_range(0..=img.height() - s),
            }
        })
        .collect()
}

/// Mean log Pr(target) over fixed samples.
pub fn eot_objective(
    clf: &ToyClassifier,
    dataset: &[RasterImage],
    cfg: &EotConfig,
    patch: &PatchParams,
    samples: &[EotSample],
) -> Result<f64, AttackError> {
    let mut total = 0.0;
    for s in samples {
        let img = &dataset[s.image];
        let placed = place(img, patch, &cfg.transforms[s.transform], s.x0, s.y0)?;
        let grid = PoolGrid::new(img.height(), img.width());
        total += clf.log_prob(&grid.features(&placed.samples), cfg.target_class);
    }
    Ok(total / samples.len() as f64)
}

/// Gradient of [`eot_objective`] with respect to the patch values.
pub fn eot_gradient(
    clf: &ToyClassifier,
    dataset: &[RasterImage],
    cfg: &EotConfig,
    patch: &PatchParams,
    samples: &[EotSample],
) -> Result<Vec<f64>, AttackError> {
    let mut grad = vec![0.0; patch.values.len()];
    for s in samples {
        let img = &dataset[s.image];
        let placed = place(img, patch, &cfg.transforms[s.transform], s.x0, s.y0)?;
        let grid = PoolGrid::new(img.height(), img.width());
        let g = clf.log_prob_grad_samples(&grid, &placed.samples, cfg.target_class);
        for &(img_i, patch_i) in &placed.links {
            grad[patch_i] += g[img_i];
        }
    }
    let n = samples.len() as f64;
    grad.iter_mut().for_each(|v| *v /= n);
    Ok(grad)
}

/// Train from `init`, returning the real-valued patch.
pub fn train_from(
    clf: &ToyClassifier,
    dataset: &[RasterImage],
    cfg: &EotConfig,
    init: PatchParams,
) -> Result<PatchParams, AttackError> {
    cfg.validate()?;
    check_fits(dataset, cfg, init.side)?;
    if cfg.target_class >= clf.classes() {
        return Err(AttackError::Config(format!(
            "target class {} outside {} classes",
            cfg.target_class,
            clf.classes()
        )));
    }
    let mut rng = ChaCha8Rng::seed_from_u64(cfg.seed);
    let mut patch = init;
    for _ in 0..cfg.steps {
        let samples = draw_samples(dataset, cfg, patch.side, cfg.batch, &mut rng);
        let grad = eot_gradient(clf, dataset, cfg, &patch, &samples)?;
        for (v, g) in patch.values.iter_mut().zip(&grad) {
            *v = (*v + cfg.step_size * g).clamp(0.0, 255.0);
        }
    }
    Ok(patch)
}

/// Seeded random initial patch for [`train_patch_eot`].
pub fn initial_patch(side: usize, seed: u64) -> PatchParams {
    let mut rng = ChaCha8Rng::seed_from_u64(seed ^ 0x9e37_79b9_7f4a_7c15);
    PatchParams::random(side, &mut rng)
}

/// Train a `patch_side` patch from a seeded random start. Pixels are
/// rounded only once, at the end.
pub fn train_patch_eot(
    clf: &ToyClassifier,
    dataset: &[RasterImage],
    cfg: &EotConfig,
    patch_side: usize,
) -> Result<Patch, AttackError> {
    if patch_side == 0 {
        return Err(AttackError::Config("patch side must be positive".into()));
    }
    let trained = train_from(clf, dataset, cfg, initial_patch(patch_side, cfg.seed))?;
    Ok(trained.to_patch(cfg.target_class))
}
