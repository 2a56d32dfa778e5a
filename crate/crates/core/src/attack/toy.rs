//! Small differentiable classifier: 8×8 mean-pooled grayscale features
//! followed by a linear softmax layer.

use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;

use super::oracle::{ClassifierOracle, OracleError};
use crate::imagecore::RasterImage;

pub const POOL: usize = 8;
pub const FEATURES: usize = POOL * POOL;
pub const TOY_CLASSES: usize = 10;
pub const TOY_WEIGHT_SCALE: f64 = 2.0;

#[derive(Debug, Clone, PartialEq)]
pub struct ToyClassifier {
    classes: usize,
    /// Row-major `classes × (FEATURES + 1)`; the last column is the bias.
    weights: Vec<f64>,
}

/// Pooling cell geometry for an `h`×`w` image.
#[derive(Debug, Clone)]
pub struct PoolGrid {
    height: usize,
    width: usize,
    /// Cell of every pixel.
    cell_of: Vec<usize>,
    /// Pixels per cell.
    count: [usize; FEATURES],
}

impl PoolGrid {
    pub fn new(height: usize, width: usize) -> Self {
        assert!(
            height >= POOL && width >= POOL,
            "image smaller than the {POOL}x{POOL} pooling grid"
        );
        let mut cell_of = Vec::with_capacity(height * width);
        let mut count = [0; FEATURES];
        for y in 0..height {
            let cy = y * POOL / height;
            for x in 0..width {
                let cell = cy * POOL + x * POOL / width;
                cell_of.push(cell);
                count[cell] += 1;
            }
        }
        Self {
            height,
            width,
            cell_of,
            count,
        }
    }

    pub fn dims(&self) -> (usize, usize) {
        (self.height, self.width)
    }

    #[inline]
    pub fn cell(&self, pixel: usize) -> usize {
        self.cell_of[pixel]
    }

    /// d feature / d sample for any sample in `cell`.
    #[inline]
    pub fn sample_weight(&self, cell: usize) -> f64 {
        1.0 / (3.0 * 255.0 * self.count[cell] as f64)
    }

    /// Features from interleaved RGB samples given as reals in `[0, 255]`.
    pub fn features(&self, samples: &[f64]) -> [f64; FEATURES] {
        debug_assert_eq!(samples.len(), self.height * self.width * 3);
        let mut f = [0.0; FEATURES];
        for (px, rgb) in samples.chunks_exact(3).enumerate() {
            f[self.cell_of[px]] += rgb[0] + rgb[1] + rgb[2];
        }
        for (c, v) in f.iter_mut().enumerate() {
            *v *= self.sample_weight(c);
        }
        f
    }
}

fn softmax(logits: &[f64]) -> Vec<f64> {
    let max = logits.iter().copied().fold(f64::NEG_INFINITY, f64::max);
    let exps: Vec<f64> = logits.iter().map(|l| (l - max).exp()).collect();
    let sum: f64 = exps.iter().sum();
    exps.into_iter().map(|e| e / sum).collect()
}

impl ToyClassifier {
    pub fn new(classes: usize, weights: Vec<f64>) -> Self {
        assert!(classes >= 2, "need at least two classes");
        assert_eq!(
            weights.len(),
            classes * (FEATURES + 1),
            "weight matrix shape"
        );
        Self { classes, weights }
    }

    /// Weights drawn uniformly from `[-scale, scale]`, with each bias set so
    /// a mid-grey image scores zero in every class.
    pub fn random(classes: usize, scale: f64, seed: u64) -> Self {
        let mut rng = ChaCha8Rng::seed_from_u64(seed);
        let mut weights = Vec::with_capacity(classes * (FEATURES + 1));
        for _ in 0..classes {
            let row: Vec<f64> = (0..FEATURES)
                .map(|_| rng.gen_range(-scale..=scale))
                .collect();
            let bias = -0.5 * row.iter().sum::<f64>();
            weights.extend(row);
            weights.push(bias);
        }
        Self::new(classes, weights)
    }

    /// The default toy model for `seed`.
    pub fn toy(seed: u64) -> Self {
        Self::random(TOY_CLASSES, TOY_WEIGHT_SCALE, seed)
    }

    pub fn classes(&self) -> usize {
        self.classes
    }

    pub fn weights(&self) -> &[f64] {
        &self.weights
    }

    fn row(&self, class: usize) -> &[f64] {
        &self.weights[class * (FEATURES + 1)..(class + 1) * (FEATURES + 1)]
    }

    pub fn logits(&self, features: &[f64; FEATURES]) -> Vec<f64> {
        (0..self.classes)
            .map(|k| {
                let w = self.row(k);
                w[FEATURES]
                    + w[..FEATURES]
                        .iter()
                        .zip(features)
                        .map(|(a, b)| a * b)
                        .sum::<f64>()
            })
            .collect()
    }

    pub fn probs_from_features(&self, features: &[f64; FEATURES]) -> Vec<f64> {
        softmax(&self.logits(features))
    }

    pub fn features(image: &RasterImage) -> [f64; FEATURES] {
        let samples: Vec<f64> = image.data().iter().map(|&v| v as f64).collect();
        PoolGrid::new(image.height(), image.width()).features(&samples)
    }

    pub fn log_prob(&self, features: &[f64; FEATURES], class: usize) -> f64 {
        let logits = self.logits(features);
        let max = logits.iter().copied().fold(f64::NEG_INFINITY, f64::max);
        let lse = max + logits.iter().map(|l| (l - max).exp()).sum::<f64>().ln();
        logits[class] - lse
    }

    /// ∇ log Pr(class) with respect to the features: `w_class − Σ_k p_k w_k`.
    pub fn log_prob_grad_features(
        &self,
        features: &[f64; FEATURES],
        class: usize,
    ) -> [f64; FEATURES] {
        let probs = self.probs_from_features(features);
        let mut g = [0.0; FEATURES];
        g.copy_from_slice(&self.row(class)[..FEATURES]);
        for (k, p) in probs.iter().enumerate() {
            for (gi, wi) in g.iter_mut().zip(&self.row(k)[..FEATURES]) {
                *gi -= p * wi;
            }
        }
        g
    }

    /// ∇ log Pr(class) with respect to every interleaved RGB sample.
    pub fn log_prob_grad_samples(
        &self,
        grid: &PoolGrid,
        samples: &[f64],
        class: usize,
    ) -> Vec<f64> {
        let gf = self.log_prob_grad_features(&grid.features(samples), class);
        let mut out = Vec::with_capacity(samples.len());
        for px in 0..samples.len() / 3 {
            let cell = grid.cell(px);
            let g = gf[cell] * grid.sample_weight(cell);
            out.extend_from_slice(&[g, g, g]);
        }
        out
    }
}

impl ClassifierOracle for ToyClassifier {
    fn class_count(&self) -> Option<usize> {
        Some(self.classes)
    }

    fn probs(&mut self, image: &RasterImage) -> Result<Vec<f64>, OracleError> {
        if image.height() < POOL || image.width() < POOL {
            return Err(OracleError::Protocol(format!(
                "toy classifier needs at least {POOL}x{POOL} images"
            )));
        }
        Ok(self.probs_from_features(&Self::features(image)))
    }
}
