//! Reversible embedding of a payload into the out-of-patch region.
//!
//! Channels are filled in B, R, G order with threshold-controlled
//! prediction-error expansion. The auxiliary header is written by LSB
//! substitution into a reserved prefix of the image: B-channel raster LSBs
//! first, spilling into R and G for very small images.
//!
//! The reserved length depends on the overflow lists, which depend on the
//! candidate set, which excludes the reserved pixels. [`EmbeddingLayout::plan`]
//! resolves this by growing the reservation until the header fits, then
//! padding the overflow lists so header length equals reservation length.

mod channel;
mod header;
mod pee;

pub use channel::{
    channel_capacity, embed_channel, extract_channel, overflow_list, ChannelEmbedding, ChannelPlan,
    OVERFLOW_PAD,
};
pub use header::{
    decode_header, encode_header, AuxHeader, FIXED_BITS, MAGIC, OVERFLOW_ENTRY_BITS, VERSION,
};
pub use pee::{
    apply_prediction, compute_error, expand_or_shift, invert, predict_med, PeeParams,
    MAX_THRESHOLD, MIN_THRESHOLD,
};

use thiserror::Error;

use crate::bitstream::{BitStream, Truncated};
use crate::imagecore::{carve_carrier, CarrierIndex, Channel, ImageError, PatchBBox, RasterImage};

#[derive(Debug, Error)]
pub enum RdhError {
    #[error("threshold {0} outside [{MIN_THRESHOLD}, {MAX_THRESHOLD}]")]
    InvalidThreshold(u8),
    #[error("error {error} {} a payload bit", if *expected_bit { "requires" } else { "cannot take" })]
    BitMismatch { error: i32, expected_bit: bool },
    #[error("carrier position {0} is context-only")]
    ContextOnly(usize),
    #[error("capacity exceeded: {required} bits required, {available} available")]
    CapacityExceeded { required: usize, available: usize },
    #[error("auxiliary header needs {required} bits but the image has {available} sample LSBs")]
    HeaderTooLarge { required: usize, available: usize },
    #[error("not a reversible adversarial example (magic {0:#06x})")]
    BadMagic(u16),
    #[error("unsupported header version {0}")]
    BadVersion(u8),
    #[error("header field out of range: {0}")]
    HeaderField(String),
    #[error("corrupt embedding: {0}")]
    Corrupt(String),
    #[error(transparent)]
    Truncated(#[from] Truncated),
    #[error(transparent)]
    Image(#[from] ImageError),
}

/// Sample location holding header bit `j`.
#[inline]
fn reserved_slot(j: usize, pixels: usize) -> (Channel, usize) {
    (Channel::BRG[j / pixels], j % pixels)
}

/// Full-image pixel indices reserved in each channel (B, R, G) for a
/// header of `header_bits` bits.
pub fn reserved_pixels(header_bits: usize, width: usize, height: usize) -> [Vec<usize>; 3] {
    let pixels = width * height;
    let mut out: [Vec<usize>; 3] = Default::default();
    for (c, list) in out.iter_mut().enumerate() {
        let start = c * pixels;
        let end = header_bits.min(start + pixels);
        if end > start {
            *list = (0..end - start).collect();
        }
    }
    out
}

/// Reserved header slots that lie outside the patch, in header-bit order.
/// Their original LSBs travel at the front of the payload.
pub fn saved_lsb_slots(
    header_bits: usize,
    width: usize,
    height: usize,
    bbox: PatchBBox,
) -> Vec<(Channel, usize)> {
    let pixels = width * height;
    (0..header_bits)
        .map(|j| reserved_slot(j, pixels))
        .filter(|&(_, px)| !bbox.contains(px / width, px % width))
        .collect()
}

/// Reservation, plans and capacities for embedding into one image.
#[derive(Debug, Clone)]
pub struct EmbeddingLayout {
    bbox: PatchBBox,
    width: usize,
    height: usize,
    header_bits: usize,
    plans: [ChannelPlan; 3],
    overflow: [Vec<u32>; 3],
    capacity: [usize; 3],
}

fn build_plans(
    carrier: &CarrierIndex,
    thresholds: [PeeParams; 3],
    header_bits: usize,
    width: usize,
    height: usize,
) -> [ChannelPlan; 3] {
    let reserved = reserved_pixels(header_bits, width, height);
    [0, 1, 2].map(|c| ChannelPlan::new(Channel::BRG[c], thresholds[c], carrier, &reserved[c]))
}

impl EmbeddingLayout {
    /// Resolve the reserved header region for `image` (the adversarial
    /// example) and compute per-channel capacities.
    pub fn plan(
        image: &RasterImage,
        bbox: PatchBBox,
        thresholds: [PeeParams; 3],
    ) -> Result<Self, RdhError> {
        let (width, height) = (image.width(), image.height());
        let carrier = carve_carrier(width, height, bbox)?;
        let available = 3 * width * height;
        let planes = Channel::BRG.map(|c| image.channel_plane(c));

        let mut reserved_bits = FIXED_BITS;
        loop {
            if reserved_bits > available {
                return Err(RdhError::HeaderTooLarge {
                    required: reserved_bits,
                    available,
                });
            }
            let plans = build_plans(&carrier, thresholds, reserved_bits, width, height);
            let mut overflow = [0, 1, 2].map(|c| overflow_list(&planes[c], &plans[c]));
            let needed =
                FIXED_BITS + OVERFLOW_ENTRY_BITS * overflow.iter().map(Vec::len).sum::<usize>();
            if needed > reserved_bits {
                reserved_bits = needed;
                continue;
            }
            // never shrink: pad up to the reservation so the decoder can
            // derive it from the header length alone
            let pad = (reserved_bits - needed) / OVERFLOW_ENTRY_BITS;
            overflow[0].extend(std::iter::repeat_n(OVERFLOW_PAD, pad));
            let capacity = [0, 1, 2].map(|c| channel_capacity(&planes[c], &plans[c]));
            return Ok(Self {
                bbox,
                width,
                height,
                header_bits: reserved_bits,
                plans,
                overflow,
                capacity,
            });
        }
    }

    pub fn bbox(&self) -> PatchBBox {
        self.bbox
    }

    pub fn header_bits(&self) -> usize {
        self.header_bits
    }

    pub fn plans(&self) -> &[ChannelPlan; 3] {
        &self.plans
    }

    /// Per-channel capacity in bits, B, R, G.
    pub fn channel_capacities(&self) -> [usize; 3] {
        self.capacity
    }

    pub fn capacity(&self) -> usize {
        self.capacity.iter().sum()
    }

    pub fn saved_lsb_slots(&self) -> Vec<(Channel, usize)> {
        saved_lsb_slots(self.header_bits, self.width, self.height, self.bbox)
    }

    /// Original LSBs of the reserved samples outside the patch.
    pub fn saved_lsbs(&self, image: &RasterImage) -> BitStream {
        self.saved_lsb_slots()
            .into_iter()
            .map(|(c, px)| image.data()[px * 3 + c.offset()] & 1 == 1)
            .collect()
    }
}

#[derive(Debug, Clone)]
pub struct Embedded {
    pub rae: RasterImage,
    pub header: AuxHeader,
    pub capacity: [usize; 3],
}

/// Embed `payload` into the out-of-patch region of `adv` and write the
/// header. Pixels inside `bbox` change only where the header reservation
/// overlaps the patch.
pub fn embed_payload(
    adv: &RasterImage,
    bbox: PatchBBox,
    payload: &BitStream,
    thresholds: [PeeParams; 3],
) -> Result<Embedded, RdhError> {
    let layout = EmbeddingLayout::plan(adv, bbox, thresholds)?;
    embed_with_layout(adv, &layout, payload)
}

pub fn embed_with_layout(
    adv: &RasterImage,
    layout: &EmbeddingLayout,
    payload: &BitStream,
) -> Result<Embedded, RdhError> {
    if payload.len() > layout.capacity() {
        return Err(RdhError::CapacityExceeded {
            required: payload.len(),
            available: layout.capacity(),
        });
    }
    let mut rae = adv.clone();
    let mut bits = payload.clone();
    bits.rewind();
    let mut seg_len = [0u32; 3];
    for (c, plan) in layout.plans.iter().enumerate() {
        if bits.remaining() == 0 {
            break;
        }
        let plane = adv.channel_plane(plan.channel());
        let emb = embed_channel(&plane, plan, &mut bits);
        seg_len[c] = emb.bits_consumed as u32;
        rae.set_channel_plane(plan.channel(), &emb.plane);
    }
    debug_assert_eq!(bits.remaining(), 0);

    let header = AuxHeader {
        bbox: layout.bbox,
        thresholds: layout.plans.each_ref().map(|p| p.params()),
        seg_len,
        overflow: layout.overflow.clone(),
    };
    let encoded = encode_header(&header)?;
    debug_assert_eq!(encoded.len(), layout.header_bits);
    let pixels = adv.pixel_count();
    let data = rae.data_mut();
    for (j, &bit) in encoded.bits().iter().enumerate() {
        let (c, px) = reserved_slot(j, pixels);
        let i = px * 3 + c.offset();
        data[i] = (data[i] & !1) | bit as u8;
    }
    Ok(Embedded {
        rae,
        header,
        capacity: layout.capacity,
    })
}

#[derive(Debug, Clone)]
pub struct Extracted {
    pub header: AuxHeader,
    pub payload: BitStream,
    /// The adversarial example, except that reserved samples still hold
    /// header LSBs.
    pub carrier_restored: RasterImage,
}

fn read_lsbs(image: &RasterImage, range: std::ops::Range<usize>) -> BitStream {
    let pixels = image.pixel_count();
    range
        .map(|j| {
            let (c, px) = reserved_slot(j, pixels);
            image.data()[px * 3 + c.offset()] & 1 == 1
        })
        .collect()
}

/// Read the header, then extract every channel segment in B, R, G order.
pub fn extract_payload(rae: &RasterImage) -> Result<Extracted, RdhError> {
    let available = 3 * rae.pixel_count();
    if available < FIXED_BITS {
        return Err(RdhError::HeaderTooLarge {
            required: FIXED_BITS,
            available,
        });
    }
    let mut head = read_lsbs(rae, 0..FIXED_BITS);
    let fixed = header::decode_fixed(&mut head)?;
    let total = fixed.total_bits();
    if total > available {
        return Err(RdhError::Corrupt(format!(
            "header claims {total} bits, image holds {available}"
        )));
    }
    let mut lists = read_lsbs(rae, FIXED_BITS..total);
    let header = header::decode_lists(fixed, &mut lists)?;

    let (width, height) = (rae.width(), rae.height());
    if !header.bbox.fits(width, height) {
        return Err(RdhError::Corrupt(format!(
            "patch {:?} outside {width}x{height} image",
            header.bbox
        )));
    }
    let carrier = carve_carrier(width, height, header.bbox)?;
    let plans = build_plans(&carrier, header.thresholds, total, width, height);

    let mut restored = rae.clone();
    let mut payload = BitStream::with_capacity(header.total_payload_bits());
    for (c, plan) in plans.iter().enumerate() {
        let seg = header.seg_len[c] as usize;
        if seg == 0 {
            continue;
        }
        let plane = rae.channel_plane(plan.channel());
        let (bits, plane) = extract_channel(&plane, plan, seg, &header.overflow[c])?;
        payload.extend(&bits);
        restored.set_channel_plane(plan.channel(), &plane);
    }
    Ok(Extracted {
        header,
        payload,
        carrier_restored: restored,
    })
}
