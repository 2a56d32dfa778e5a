//! Adversarial patch training, black-box placement and classifier oracles.

mod bhe;
mod eot;
mod oracle;
mod toy;

pub use bhe::{bhe_optimize, exhaustive_best_location, BheConfig, BheResult};
pub use eot::{
    draw_samples, eot_gradient, eot_objective, initial_patch, train_from, train_patch_eot,
    EotConfig, EotSample, PatchParams,
};
pub use oracle::{
    argmax, oracle_client, validate_probs, ClassifierOracle, CountingOracle, OracleClient,
    OracleError, OracleRequest, OracleResponse, PROB_SUM_TOLERANCE,
};
pub use toy::{PoolGrid, ToyClassifier, FEATURES, POOL, TOY_CLASSES, TOY_WEIGHT_SCALE};

use serde::{Deserialize, Serialize};
use thiserror::Error;

use crate::imagecore::{apply_patch, ImageError, Patch, PatchBBox, PatchTransform, RasterImage};

#[derive(Debug, Error)]
pub enum AttackError {
    #[error("invalid configuration: {0}")]
    Config(String),
    #[error("a {side}px patch does not fit a {width}x{height} image")]
    PatchTooLarge {
        side: usize,
        width: usize,
        height: usize,
    },
    #[error("class {class} outside the oracle's {classes} classes")]
    ClassOutOfRange { class: usize, classes: usize },
    #[error(transparent)]
    Image(#[from] ImageError),
    #[error(transparent)]
    Oracle(#[from] OracleError),
}

/// What the fitness rewards.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Default, Serialize, Deserialize)]
#[serde(rename_all = "lowercase", tag = "mode")]
pub enum Goal {
    /// Probability of the patch's target class.
    #[default]
    Targeted,
    /// One minus the probability of the true class.
    Untargeted { true_class: usize },
}

fn class_prob(probs: &[f64], class: usize) -> Result<f64, AttackError> {
    probs
        .get(class)
        .copied()
        .ok_or(AttackError::ClassOutOfRange {
            class,
            classes: probs.len(),
        })
}

/// Target-class probability of the patched image.
pub fn fitness<O: ClassifierOracle + ?Sized>(
    oracle: &mut O,
    image: &RasterImage,
    patch: &Patch,
    bbox: PatchBBox,
    t: &PatchTransform,
) -> Result<f64, AttackError> {
    let patched = apply_patch(image, patch, bbox, t)?;
    let probs = oracle.probs(&patched)?;
    class_prob(&probs, patch.target_class)
}

/// Fitness of an identity-transform placement under `goal`.
pub fn fitness_with_goal<O: ClassifierOracle + ?Sized>(
    oracle: &mut O,
    image: &RasterImage,
    patch: &Patch,
    bbox: PatchBBox,
    goal: Goal,
) -> Result<f64, AttackError> {
    match goal {
        Goal::Targeted => fitness(oracle, image, patch, bbox, &PatchTransform::IDENTITY),
        Goal::Untargeted { true_class } => {
            let patched = apply_patch(image, patch, bbox, &PatchTransform::IDENTITY)?;
            let probs = oracle.probs(&patched)?;
            Ok(1.0 - class_prob(&probs, true_class)?)
        }
    }
}
