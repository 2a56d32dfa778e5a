//! Reversible adversarial patches.
//!
//! An adversarial patch is pasted onto an image; the pixels it hides are
//! compressed and embedded into the rest of the image with reversible
//! prediction-error expansion, so an authorized reader can restore the
//! original bit-exactly.

pub mod attack;
pub mod bitstream;
pub mod imagecore;
pub mod metrics;
pub mod payload;
pub mod pipeline;
pub mod rdh;
pub mod synth;

pub use attack::{AttackError, ClassifierOracle, Goal, OracleError};
pub use bitstream::BitStream;
pub use imagecore::{
    apply_patch, carve_carrier, extract_region, load_png, save_png, write_region, CarrierIndex,
    Channel, ImageError, Patch, PatchBBox, PatchTransform, RasterImage, Rotation,
};
pub use metrics::{mse, psnr, ssim, Psnr, QualityReport};
pub use payload::{Codec, SecretRecord};
pub use pipeline::{
    protect, protect_adv, restore, EmbedConfig, PipelineError, Protected, Restored, Thresholds,
};
pub use rdh::{AuxHeader, PeeParams, RdhError};
