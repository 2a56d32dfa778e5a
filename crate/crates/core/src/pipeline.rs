//! End-to-end protect / restore.
//!
//! Payload layout: the saved LSBs of header-reserved samples outside the
//! patch, then the compressed secret record.

use serde::{Deserialize, Serialize};
use thiserror::Error;

use crate::bitstream::BitStream;
use crate::imagecore::{
    apply_patch, extract_region, write_region, ImageError, Patch, PatchBBox, PatchTransform,
    RasterImage,
};
use crate::payload::{
    assemble_payload, compress_secret, decompress_secret, parse_payload, Codec, PayloadError,
    SecretRecord,
};
use crate::rdh::{
    embed_with_layout, extract_payload, saved_lsb_slots, AuxHeader, EmbeddingLayout, PeeParams,
    RdhError, MIN_THRESHOLD,
};

/// Largest uniform threshold tried by [`Thresholds::Auto`].
pub const AUTO_MAX_THRESHOLD: u8 = 32;

#[derive(Debug, Error)]
pub enum PipelineError {
    #[error(transparent)]
    Image(#[from] ImageError),
    #[error(transparent)]
    Rdh(#[from] RdhError),
    #[error(transparent)]
    Payload(#[from] PayloadError),
}

impl PipelineError {
    pub fn is_capacity(&self) -> bool {
        matches!(self, PipelineError::Rdh(RdhError::CapacityExceeded { .. }))
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Default, Serialize, Deserialize)]
#[serde(rename_all = "lowercase")]
pub enum Thresholds {
    /// Smallest uniform threshold in `1..=AUTO_MAX_THRESHOLD` whose capacity
    /// holds the payload.
    #[default]
    Auto,
    /// B, R, G.
    Fixed([u8; 3]),
}

impl Thresholds {
    pub fn uniform(t: u8) -> Self {
        Thresholds::Fixed([t; 3])
    }

    fn candidates(self) -> Vec<[u8; 3]> {
        match self {
            Thresholds::Auto => (MIN_THRESHOLD..=AUTO_MAX_THRESHOLD)
                .map(|t| [t; 3])
                .collect(),
            Thresholds::Fixed(t) => vec![t],
        }
    }
}

pub fn threshold_params([b, r, g]: [u8; 3]) -> Result<[PeeParams; 3], RdhError> {
    Ok([PeeParams::new(b)?, PeeParams::new(r)?, PeeParams::new(g)?])
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Default, Serialize, Deserialize)]
pub struct EmbedConfig {
    pub thresholds: Thresholds,
    pub codec: Codec,
}

#[derive(Debug, Clone)]
pub struct Protected {
    /// Adversarial example before embedding.
    pub adv: RasterImage,
    pub rae: RasterImage,
    pub header: AuxHeader,
    /// Per-channel capacity in B, R, G order.
    pub capacity: [usize; 3],
    pub payload_bits: usize,
    /// Codec actually used for the secret.
    pub codec: Codec,
    pub secret_bytes: usize,
}

/// Embed the pixels of `original` under `bbox` into the adversarial
/// example `adv`.
pub fn protect_adv(
    original: &RasterImage,
    adv: &RasterImage,
    bbox: PatchBBox,
    cfg: &EmbedConfig,
) -> Result<Protected, PipelineError> {
    if !original.same_dims(adv) {
        return Err(ImageError::SizeMismatch {
            expected_w: original.width(),
            expected_h: original.height(),
            got_w: adv.width(),
            got_h: adv.height(),
        }
        .into());
    }
    let secret = compress_secret(&extract_region(original, bbox)?, cfg.codec)?;
    // closest miss, reported when nothing fits
    let mut best_miss: Option<RdhError> = None;
    for t in cfg.thresholds.candidates() {
        let miss = match EmbeddingLayout::plan(adv, bbox, threshold_params(t)?) {
            Ok(layout) => {
                let payload = assemble_payload(&layout.saved_lsbs(adv), &secret);
                if payload.len() <= layout.capacity() {
                    return finish(adv, &layout, &payload, &secret);
                }
                RdhError::CapacityExceeded {
                    required: payload.len(),
                    available: layout.capacity(),
                }
            }
            Err(e @ RdhError::HeaderTooLarge { .. }) => e,
            Err(e) => return Err(e.into()),
        };
        let shortfall = |e: &RdhError| match e {
            RdhError::CapacityExceeded {
                required,
                available,
            } => required - available,
            _ => usize::MAX,
        };
        if best_miss
            .as_ref()
            .is_none_or(|b| shortfall(&miss) < shortfall(b))
        {
            best_miss = Some(miss);
        }
    }
    Err(best_miss.expect("at least one threshold candidate").into())
}

fn finish(
    adv: &RasterImage,
    layout: &EmbeddingLayout,
    payload: &BitStream,
    secret: &SecretRecord,
) -> Result<Protected, PipelineError> {
    let emb = embed_with_layout(adv, layout, payload)?;
    Ok(Protected {
        adv: adv.clone(),
        rae: emb.rae,
        header: emb.header,
        capacity: emb.capacity,
        payload_bits: payload.len(),
        codec: secret.codec,
        secret_bytes: secret.compressed_len(),
    })
}

/// Paste `patch` onto `original` at `bbox` and embed the occluded pixels.
pub fn protect(
    original: &RasterImage,
    patch: &Patch,
    bbox: PatchBBox,
    transform: &PatchTransform,
    cfg: &EmbedConfig,
) -> Result<Protected, PipelineError> {
    let adv = apply_patch(original, patch, bbox, transform)?;
    protect_adv(original, &adv, bbox, cfg)
}

#[derive(Debug, Clone)]
pub struct Restored {
    pub image: RasterImage,
    /// The adversarial example outside the patch. Inside it, header-reserved
    /// samples keep their header LSBs.
    pub adv: RasterImage,
    pub header: AuxHeader,
}

/// Recover the original image from a reversible adversarial example.
pub fn restore(rae: &RasterImage) -> Result<Restored, PipelineError> {
    let ext = extract_payload(rae)?;
    let bbox = ext.header.bbox;
    let slots = saved_lsb_slots(ext.header.bit_len(), rae.width(), rae.height(), bbox);
    let (saved, secret) = parse_payload(&ext.payload, slots.len())?;

    let mut adv = ext.carrier_restored;
    let data = adv.data_mut();
    for ((c, px), &bit) in slots.iter().zip(saved.bits()) {
        let i = px * 3 + c.offset();
        data[i] = (data[i] & !1) | bit as u8;
    }
    let region = decompress_secret(&secret, bbox.w, bbox.h)?;
    let image = write_region(&adv, bbox, &region)?;
    Ok(Restored {
        image,
        adv,
        header: ext.header,
    })
}

/// Payload bits needed and capacity available at fixed thresholds `t`.
pub fn required_bits(
    original: &RasterImage,
    adv: &RasterImage,
    bbox: PatchBBox,
    t: [u8; 3],
    codec: Codec,
) -> Result<(usize, usize), PipelineError> {
    let secret = compress_secret(&extract_region(original, bbox)?, codec)?;
    let layout = EmbeddingLayout::plan(adv, bbox, threshold_params(t)?)?;
    Ok((
        layout.saved_lsbs(adv).len() + secret.bit_len(),
        layout.capacity(),
    ))
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::imagecore::Rotation;
    use rand::{Rng, SeedableRng};
    use rand_chacha::ChaCha8Rng;

    fn smooth(rng: &mut ChaCha8Rng, h: usize, w: usize) -> RasterImage {
        let base: [f64; 3] = [
            rng.gen_range(60.0..190.0),
            rng.gen_range(60.0..190.0),
            rng.gen_range(60.0..190.0),
        ];
        let (gy, gx) = (rng.gen_range(-2.0..2.0), rng.gen_range(-2.0..2.0));
        RasterImage::from_fn(h, w, |y, x| {
            let mut v = |c: usize| {
                (base[c] + gy * y as f64 + gx * x as f64 + rng.gen_range(-2.0..2.0))
                    .clamp(0.0, 255.0) as u8
            };
            [v(0), v(1), v(2)]
        })
    }

    #[test]
    fn round_trip_all_codecs() {
        let mut rng = ChaCha8Rng::seed_from_u64(4);
        for codec in [Codec::Raw, Codec::Deflate, Codec::Webp] {
            for _ in 0..5 {
                let original = smooth(&mut rng, 32, 32);
                let patch = Patch::new(RasterImage::from_fn(6, 6, |_, _| rng.gen()), 1).unwrap();
                let t = PatchTransform::new(Rotation::R90, 1.0).unwrap();
                let bbox = PatchBBox::square(rng.gen_range(0..=26), rng.gen_range(0..=26), 6);
                let cfg = EmbedConfig {
                    thresholds: Thresholds::uniform(4),
                    codec,
                };
                let p = protect(&original, &patch, bbox, &t, &cfg).unwrap();
                let r = restore(&p.rae).unwrap();
                assert_eq!(r.image, original);
                for y in 0..32 {
                    for x in 0..32 {
                        if !bbox.contains(y, x) {
                            assert_eq!(r.adv.pixel(y, x), p.adv.pixel(y, x));
                        }
                    }
                }
                assert_eq!(r.header, p.header);
            }
        }
    }

    #[test]
    fn capacity_error_is_reported() {
        let mut rng = ChaCha8Rng::seed_from_u64(1);
        let original = RasterImage::from_fn(32, 32, |_, _| rng.gen());
        let patch = Patch::new(RasterImage::from_fn(7, 7, |_, _| rng.gen()), 0).unwrap();
        let cfg = EmbedConfig {
            thresholds: Thresholds::uniform(1),
            codec: Codec::Deflate,
        };
        let err = protect(
            &original,
            &patch,
            PatchBBox::square(3, 3, 7),
            &PatchTransform::IDENTITY,
            &cfg,
        )
        .unwrap_err();
        assert!(err.is_capacity(), "{err}");
        let auto = EmbedConfig {
            thresholds: Thresholds::Auto,
            codec: Codec::Deflate,
        };
        assert!(protect(
            &original,
            &patch,
            PatchBBox::square(3, 3, 7),
            &PatchTransform::IDENTITY,
            &auto
        )
        .unwrap_err()
        .is_capacity());
    }

    #[test]
    fn auto_picks_smallest_fitting_threshold() {
        let mut rng = ChaCha8Rng::seed_from_u64(6);
        for _ in 0..10 {
            let original = smooth(&mut rng, 32, 32);
            let patch = Patch::new(RasterImage::from_fn(7, 7, |_, _| rng.gen()), 0).unwrap();
            let bbox = PatchBBox::square(rng.gen_range(0..=25), rng.gen_range(0..=25), 7);
            let p = protect(
                &original,
                &patch,
                bbox,
                &PatchTransform::IDENTITY,
                &EmbedConfig::default(),
            )
            .unwrap();
            let t = p.header.thresholds[0].threshold();
            assert!(p.header.thresholds.iter().all(|x| x.threshold() == t));
            for smaller in 1..t {
                let (need, cap) =
                    required_bits(&original, &p.adv, bbox, [smaller; 3], Codec::Deflate).unwrap();
                assert!(need > cap);
            }
            assert_eq!(restore(&p.rae).unwrap().image, original);
        }
    }

    #[test]
    fn rejects_bad_threshold_and_plain_images() {
        let img = RasterImage::filled(16, 16, [9, 9, 9]);
        let cfg = EmbedConfig {
            thresholds: Thresholds::Fixed([0, 2, 2]),
            codec: Codec::Raw,
        };
        assert!(protect_adv(&img, &img, PatchBBox::square(0, 0, 2), &cfg).is_err());
        assert!(matches!(
            restore(&img),
            Err(PipelineError::Rdh(RdhError::BadMagic(_)))
        ));
    }
}
