//! Single-channel PEE codec over the carrier grid.
//!
//! The carrier is the out-of-patch pixels re-flowed at the image width.
//! The first virtual row and column only provide context. Reserved header
//! pixels are excluded from embedding and read with their LSB cleared, so
//! the context is identical before and after the header is written.

use crate::bitstream::BitStream;
use crate::imagecore::{CarrierIndex, Channel};

use super::pee::{
    apply_prediction, compute_error, expand_or_shift, invert, predict_med, PeeParams,
};
use super::RdhError;

/// Padding entry in an overflow list; never matches a candidate.
pub const OVERFLOW_PAD: u32 = u32::MAX;

#[derive(Debug, Clone, PartialEq, Eq)]
pub struct ChannelPlan {
    channel: Channel,
    params: PeeParams,
    grid_width: usize,
    /// Full-image pixel index of each carrier position.
    pixel_of: Vec<usize>,
    /// Carrier positions whose LSB carries header bits in this channel.
    masked: Vec<bool>,
    candidates: Vec<usize>,
    reserved: Vec<usize>,
}

impl ChannelPlan {
    /// `reserved` holds full-image pixel indices whose LSB in `channel` is
    /// used by the header.
    pub fn new(
        channel: Channel,
        params: PeeParams,
        carrier: &CarrierIndex,
        reserved: &[usize],
    ) -> Self {
        let mut reserved = reserved.to_vec();
        reserved.sort_unstable();
        reserved.dedup();
        let width = carrier.grid_width();
        let pixel_of: Vec<usize> = (0..carrier.len()).map(|k| carrier.pixel_index(k)).collect();
        let masked: Vec<bool> = pixel_of
            .iter()
            .map(|px| reserved.binary_search(px).is_ok())
            .collect();
        let candidates = (0..carrier.len())
            .filter(|&k| k >= width && k % width != 0 && !masked[k])
            .collect();
        Self {
            channel,
            params,
            grid_width: width,
            pixel_of,
            masked,
            candidates,
            reserved,
        }
    }

    pub fn channel(&self) -> Channel {
        self.channel
    }

    pub fn params(&self) -> PeeParams {
        self.params
    }

    /// Eligible carrier positions, strictly increasing.
    pub fn candidates(&self) -> &[usize] {
        &self.candidates
    }

    pub fn reserved(&self) -> &[usize] {
        &self.reserved
    }

    pub fn carrier_len(&self) -> usize {
        self.pixel_of.len()
    }

    #[inline]
    fn context(&self, plane: &[u8], k: usize) -> u8 {
        let v = plane[self.pixel_of[k]];
        if self.masked[k] {
            v & !1
        } else {
            v
        }
    }

    /// MED prediction at carrier position `k`.
    pub fn predict(&self, plane: &[u8], k: usize) -> Result<u8, RdhError> {
        if k >= self.pixel_of.len() || k < self.grid_width || k.is_multiple_of(self.grid_width) {
            return Err(RdhError::ContextOnly(k));
        }
        Ok(self.predict_unchecked(plane, k, &mut |_, _| {}))
    }

    #[inline]
    fn predict_unchecked(
        &self,
        plane: &[u8],
        k: usize,
        trace: &mut impl FnMut(usize, usize),
    ) -> u8 {
        let w = self.grid_width;
        trace(k, k - 1);
        trace(k, k - w);
        trace(k, k - w - 1);
        predict_med(
            self.context(plane, k - 1),
            self.context(plane, k - w),
            self.context(plane, k - w - 1),
        )
    }

    #[inline]
    fn sample(&self, plane: &[u8], k: usize) -> u8 {
        plane[self.pixel_of[k]]
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Eq)]
enum Slot {
    /// Prediction outside the safe band.
    Unsafe,
    /// Shifting would leave the sample range.
    Overflow,
    Expand(u8, i32),
    Shift(u8, i32),
}

fn classify(params: PeeParams, value: u8, predicted: u8) -> Slot {
    if !params.in_safe_band(predicted) {
        return Slot::Unsafe;
    }
    let p = compute_error(value, predicted);
    if params.expandable(p) {
        return Slot::Expand(predicted, p);
    }
    let t = params.t();
    let shifted = if p >= t {
        value as i32 + t
    } else {
        value as i32 - t
    };
    if (0..=255).contains(&shifted) {
        Slot::Shift(predicted, p)
    } else {
        Slot::Overflow
    }
}

/// Rule-B candidate indices over the whole plan. Independent of the payload.
pub fn overflow_list(plane: &[u8], plan: &ChannelPlan) -> Vec<u32> {
    plan.candidates
        .iter()
        .enumerate()
        .filter_map(|(ci, &k)| {
            let pred = plan.predict_unchecked(plane, k, &mut |_, _| {});
            (classify(plan.params, plan.sample(plane, k), pred) == Slot::Overflow)
                .then_some(ci as u32)
        })
        .collect()
}

/// Number of bits the channel can carry under `plan`; at most one per candidate.
pub fn channel_capacity(plane: &[u8], plan: &ChannelPlan) -> usize {
    plan.candidates
        .iter()
        .filter(|&&k| {
            let pred = plan.predict_unchecked(plane, k, &mut |_, _| {});
            matches!(
                classify(plan.params, plan.sample(plane, k), pred),
                Slot::Expand(..)
            )
        })
        .count()
}

#[derive(Debug, Clone, PartialEq, Eq)]
pub struct ChannelEmbedding {
    pub plane: Vec<u8>,
    pub bits_consumed: usize,
    /// Rule-B candidates met before the payload ran out.
    pub overflow: Vec<u32>,
}

/// Embed bits from `bits` (starting at its cursor) into one channel plane.
///
/// Stops right after the candidate that takes the last bit, whether the
/// payload or the channel ran out first; later candidates are left as they
/// are. The cursor is advanced by `bits_consumed`.
pub fn embed_channel(plane: &[u8], plan: &ChannelPlan, bits: &mut BitStream) -> ChannelEmbedding {
    // predictions always come from the unmodified plane, so every slot is
    // known up front
    let slots: Vec<Slot> = plan
        .candidates
        .iter()
        .map(|&k| {
            let pred = plan.predict_unchecked(plane, k, &mut |_, _| {});
            classify(plan.params, plan.sample(plane, k), pred)
        })
        .collect();
    // one past the candidate that takes the last bit
    let end = slots
        .iter()
        .enumerate()
        .filter(|(_, s)| matches!(s, Slot::Expand(..)))
        .take(bits.remaining())
        .last()
        .map_or(0, |(i, _)| i + 1);

    let mut out = plane.to_vec();
    let mut consumed = 0;
    let mut overflow = Vec::new();
    let t = plan.params.threshold();
    for (ci, (&k, &slot)) in plan.candidates.iter().zip(&slots).enumerate().take(end) {
        let (pred, marked) = match slot {
            Slot::Unsafe => continue,
            Slot::Overflow => {
                overflow.push(ci as u32);
                continue;
            }
            Slot::Expand(pred, p) => {
                let bit = bits.read_bit().expect("bit budget checked");
                consumed += 1;
                (pred, expand_or_shift(p, Some(bit), t).expect("expandable"))
            }
            Slot::Shift(pred, p) => (pred, expand_or_shift(p, None, t).expect("not expandable")),
        };
        out[plan.pixel_of[k]] = apply_prediction(pred, marked);
    }
    ChannelEmbedding {
        plane: out,
        bits_consumed: consumed,
        overflow,
    }
}

/// Recover `seg_len` bits and the pre-embedding plane.
pub fn extract_channel(
    plane: &[u8],
    plan: &ChannelPlan,
    seg_len: usize,
    overflow: &[u32],
) -> Result<(BitStream, Vec<u8>), RdhError> {
    extract_channel_traced(plane, plan, seg_len, overflow, &mut |_, _| {})
}

/// [`extract_channel`] reporting every context read as `(position, neighbour)`.
pub(crate) fn extract_channel_traced(
    plane: &[u8],
    plan: &ChannelPlan,
    seg_len: usize,
    overflow: &[u32],
    trace: &mut impl FnMut(usize, usize),
) -> Result<(BitStream, Vec<u8>), RdhError> {
    let mut skip = Vec::with_capacity(overflow.len());
    for &ci in overflow {
        if ci == OVERFLOW_PAD {
            continue;
        }
        if ci as usize >= plan.candidates.len() {
            return Err(RdhError::Corrupt(format!(
                "overflow index {ci} beyond {} candidates",
                plan.candidates.len()
            )));
        }
        skip.push(ci as usize);
    }
    skip.sort_unstable();

    let mut restored = plane.to_vec();
    let mut bits = BitStream::with_capacity(seg_len);
    let t = plan.params.threshold();
    for (ci, &k) in plan.candidates.iter().enumerate() {
        if bits.len() == seg_len {
            break;
        }
        // neighbours precede k in raster order and are already restored
        let pred = plan.predict_unchecked(&restored, k, trace);
        if !plan.params.in_safe_band(pred) || skip.binary_search(&ci).is_ok() {
            continue;
        }
        let marked = compute_error(plan.sample(&restored, k), pred);
        let (p, bit) = invert(marked, t);
        if let Some(b) = bit {
            bits.push_bit(b);
        }
        let original = pred as i32 + p;
        if !(0..=255).contains(&original) {
            return Err(RdhError::Corrupt(format!(
                "restored sample {original} out of range at carrier position {k}"
            )));
        }
        restored[plan.pixel_of[k]] = original as u8;
    }
    if bits.len() < seg_len {
        return Err(RdhError::Corrupt(format!(
            "{:?} channel yielded {} of {seg_len} bits",
            plan.channel,
            bits.len()
        )));
    }
    Ok((bits, restored))
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::imagecore::PatchBBox;
    use rand::{Rng, SeedableRng};
    use rand_chacha::ChaCha8Rng;

    fn full_plan(side: usize, t: u8) -> ChannelPlan {
        let carrier = CarrierIndex::full(side, side);
        ChannelPlan::new(Channel::B, PeeParams::new(t).unwrap(), &carrier, &[])
    }

    /// Smooth field plus noise, the typical photographic texture.
    fn textured_plane(rng: &mut ChaCha8Rng, side: usize) -> Vec<u8> {
        let gx: f64 = rng.gen_range(-3.0..3.0);
        let gy: f64 = rng.gen_range(-3.0..3.0);
        let base: f64 = rng.gen_range(40.0..200.0);
        let noise = rng.gen_range(0..6);
        (0..side * side)
            .map(|i| {
                let (y, x) = ((i / side) as f64, (i % side) as f64);
                let n = if noise == 0 {
                    0
                } else {
                    rng.gen_range(-noise..=noise)
                };
                (base + gx * x + gy * y + n as f64)
                    .round()
                    .clamp(0.0, 255.0) as u8
            })
            .collect()
    }

    /// Brute-force skip-rule simulation written against the raw grid.
    fn brute_capacity(plane: &[u8], side: usize, t: i32) -> usize {
        let mut n = 0;
        for y in 1..side {
            for x in 1..side {
                let a = plane[y * side + x - 1] as i32;
                let b = plane[(y - 1) * side + x] as i32;
                let c = plane[(y - 1) * side + x - 1] as i32;
                let pred = if c >= a.max(b) {
                    a.min(b)
                } else if c <= a.min(b) {
                    a.max(b)
                } else {
                    a + b - c
                };
                let p = plane[y * side + x] as i32 - pred;
                if pred >= 2 * t && pred <= 255 - 2 * t && p >= -t && p < t {
                    n += 1;
                }
            }
        }
        n
    }

    #[test]
    fn capacity_constant_planes() {
        let plan = full_plan(8, 1);
        assert_eq!(plan.candidates().len(), 49);
        assert_eq!(channel_capacity(&[0u8; 64], &plan), 0);
        assert_eq!(brute_capacity(&[0u8; 64], 8, 1), 0);
        assert_eq!(channel_capacity(&[128u8; 64], &plan), 49);
        assert_eq!(brute_capacity(&[128u8; 64], 8, 1), 49);
    }

    #[test]
    fn capacity_matches_brute_force_and_bound() {
        let mut rng = ChaCha8Rng::seed_from_u64(11);
        for _ in 0..50 {
            let plane: Vec<u8> = (0..64).map(|_| rng.gen()).collect();
            for t in [1u8, 3, 8, 20, 64] {
                let plan = full_plan(8, t);
                let cap = channel_capacity(&plane, &plan);
                assert_eq!(cap, brute_capacity(&plane, 8, t as i32));
                assert!(cap <= 49);
            }
        }
    }

    #[test]
    fn capacity_monotone_in_threshold() {
        let mut rng = ChaCha8Rng::seed_from_u64(12);
        for _ in 0..20 {
            let plane = textured_plane(&mut rng, 16);
            let caps: Vec<usize> = (1..=64u8)
                .map(|t| channel_capacity(&plane, &full_plan(16, t)))
                .collect();
            // the safe band narrows as T grows, so monotonicity only holds
            // while every prediction stays inside it
            let preds_min = *plane.iter().min().unwrap() as usize;
            let preds_max = *plane.iter().max().unwrap() as usize;
            for t in 1..64usize {
                if 2 * (t + 1) <= preds_min && preds_max + 2 * (t + 1) <= 255 {
                    assert!(
                        caps[t] >= caps[t - 1],
                        "T={} cap {} < {}",
                        t + 1,
                        caps[t],
                        caps[t - 1]
                    );
                }
            }
        }
    }

    #[test]
    fn predict_rejects_context_positions() {
        let plan = full_plan(8, 2);
        let plane = [100u8; 64];
        assert!(plan.predict(&plane, 3).is_err());
        assert!(plan.predict(&plane, 8).is_err());
        assert!(plan.predict(&plane, 64).is_err());
        assert_eq!(plan.predict(&plane, 9).unwrap(), 100);
    }

    #[test]
    fn single_bit_on_flat_plane() {
        let plan = full_plan(8, 1);
        let plane = [128u8; 64];
        for bit in [false, true] {
            let mut bits = BitStream::from_bits(vec![bit]);
            let emb = embed_channel(&plane, &plan, &mut bits);
            assert_eq!(emb.bits_consumed, 1);
            let changed: Vec<usize> = (0..64).filter(|&i| emb.plane[i] != plane[i]).collect();
            let first = plan.candidates()[0];
            assert_eq!(first, 9);
            assert_eq!(emb.plane[first], 128 + bit as u8);
            assert!(changed.len() <= 1);
            let (got, restored) = extract_channel(&emb.plane, &plan, 1, &emb.overflow).unwrap();
            assert_eq!(got.bits(), &[bit]);
            assert_eq!(restored, plane);
        }
    }

    #[test]
    fn payload_longer_than_capacity() {
        let mut rng = ChaCha8Rng::seed_from_u64(3);
        let plane = textured_plane(&mut rng, 16);
        let plan = full_plan(16, 4);
        let cap = channel_capacity(&plane, &plan);
        let mut bits: BitStream = (0..cap + 100).map(|_| rng.gen()).collect();
        let emb = embed_channel(&plane, &plan, &mut bits);
        assert_eq!(emb.bits_consumed, cap);
        assert_eq!(bits.cursor(), cap);
        let (got, restored) =
            extract_channel(&emb.plane, &plan, cap, &overflow_list(&plane, &plan)).unwrap();
        assert_eq!(got.bits(), &bits.bits()[..cap]);
        assert_eq!(restored, plane);
    }

    #[test]
    fn random_round_trips_with_patch_and_reserved() {
        let mut rng = ChaCha8Rng::seed_from_u64(99);
        for trial in 0..60 {
            let side = 64;
            let plane: Vec<u8> = if trial % 3 == 0 {
                (0..side * side).map(|_| rng.gen()).collect()
            } else {
                textured_plane(&mut rng, side)
            };
            let bbox = PatchBBox::square(
                rng.gen_range(0..48),
                rng.gen_range(0..48),
                rng.gen_range(1..16),
            );
            let carrier = crate::imagecore::carve_carrier(side, side, bbox).unwrap();
            let reserved: Vec<usize> = (0..rng.gen_range(0..300)).collect();
            let t = rng.gen_range(1..=8);
            let plan =
                ChannelPlan::new(Channel::R, PeeParams::new(t).unwrap(), &carrier, &reserved);
            let cap = channel_capacity(&plane, &plan);
            assert!(cap <= plan.candidates().len());
            let len = if cap == 0 { 1 } else { rng.gen_range(1..=cap) };
            let mut bits: BitStream = (0..len).map(|_| rng.gen()).collect();
            let emb = embed_channel(&plane, &plan, &mut bits);
            assert_eq!(emb.bits_consumed, len.min(cap));
            // reserved pixels are never touched by PEE
            for &px in &reserved {
                assert_eq!(emb.plane[px], plane[px]);
            }
            let full = overflow_list(&plane, &plan);
            for ov in [&emb.overflow, &full] {
                let (got, restored) =
                    extract_channel(&emb.plane, &plan, emb.bits_consumed, ov).unwrap();
                assert_eq!(got.bits(), &bits.bits()[..emb.bits_consumed]);
                assert_eq!(restored, plane);
            }
        }
    }

    #[test]
    fn header_lsb_changes_do_not_disturb_decoding() {
        let mut rng = ChaCha8Rng::seed_from_u64(5);
        let side = 32;
        let plane = textured_plane(&mut rng, side);
        let carrier = CarrierIndex::full(side, side);
        let reserved: Vec<usize> = (0..100).collect();
        let plan = ChannelPlan::new(Channel::B, PeeParams::new(3).unwrap(), &carrier, &reserved);
        let cap = channel_capacity(&plane, &plan);
        let mut bits: BitStream = (0..cap).map(|_| rng.gen()).collect();
        let mut emb = embed_channel(&plane, &plan, &mut bits);
        for &px in &reserved {
            emb.plane[px] ^= rng.gen::<u8>() & 1;
        }
        let (got, restored) = extract_channel(&emb.plane, &plan, cap, &emb.overflow).unwrap();
        assert_eq!(got.bits(), bits.bits());
        for i in 100..side * side {
            assert_eq!(restored[i], plane[i]);
        }
    }

    #[test]
    fn overflow_pixels_are_listed_and_skipped() {
        // bright plane with spikes: the spikes shift past 255
        let side = 16;
        let mut plane = vec![200u8; side * side];
        for i in (side + 1..side * side).step_by(7) {
            plane[i] = 254;
        }
        let plan = full_plan(side, 4);
        let ov = overflow_list(&plane, &plan);
        assert!(!ov.is_empty());
        let cap = channel_capacity(&plane, &plan);
        let mut bits: BitStream = (0..cap).map(|i| i % 3 == 0).collect();
        let emb = embed_channel(&plane, &plan, &mut bits);
        for &ci in &ov {
            let px = plan.pixel_of[plan.candidates()[ci as usize]];
            assert_eq!(emb.plane[px], plane[px]);
        }
        let (got, restored) = extract_channel(&emb.plane, &plan, cap, &ov).unwrap();
        assert_eq!(got.bits(), bits.bits());
        assert_eq!(restored, plane);
        // without the list the decoder misreads the spikes
        assert!(extract_channel(&emb.plane, &plan, cap, &[])
            .map(|(_, r)| r != plane)
            .unwrap_or(true));
    }

    #[test]
    fn seg_len_beyond_capacity_is_corruption() {
        let plan = full_plan(8, 1);
        let plane = [128u8; 64];
        assert!(matches!(
            extract_channel(&plane, &plan, 50, &[]),
            Err(RdhError::Corrupt(_))
        ));
        assert!(matches!(
            extract_channel(&plane, &plan, 1, &[49]),
            Err(RdhError::Corrupt(_))
        ));
        assert!(extract_channel(&plane, &plan, 1, &[OVERFLOW_PAD]).is_ok());
    }

    #[test]
    fn decoder_reads_only_restored_context() {
        let mut rng = ChaCha8Rng::seed_from_u64(21);
        let side = 24;
        let plane = textured_plane(&mut rng, side);
        let carrier =
            crate::imagecore::carve_carrier(side, side, PatchBBox::square(5, 7, 6)).unwrap();
        let plan = ChannelPlan::new(
            Channel::G,
            PeeParams::new(4).unwrap(),
            &carrier,
            &[0, 1, 2, 3],
        );
        let cap = channel_capacity(&plane, &plan);
        let mut bits: BitStream = (0..cap).map(|_| rng.gen()).collect();
        let emb = embed_channel(&plane, &plan, &mut bits);
        let mut last_reader = 0;
        let mut reads = 0;
        let (_, restored) =
            extract_channel_traced(&emb.plane, &plan, cap, &emb.overflow, &mut |k, n| {
                assert!(n < k, "position {k} read unrestored neighbour {n}");
                assert!(k >= last_reader, "candidates visited out of order");
                last_reader = k;
                reads += 1;
            })
            .unwrap();
        assert!(reads > 0);
        assert_eq!(restored, plane);
    }
}
