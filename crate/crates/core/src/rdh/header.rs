//! Bit-exact auxiliary header.
//!
//! Layout (big-endian, MSB first):
//!
//! | field        | bits     |
//! |--------------|----------|
//! | magic 0x5241 | 16       |
//! | version      | 8        |
//! | x0, y0, w, h | 4 × 16   |
//! | flags        | 8        |
//! | T_B, T_R, T_G| 3 × 8    |
//! | seg_len      | 3 × 32   |
//! | n_overflow   | 3 × 16   |
//! | overflow     | 32 each  |
//!
//! Per-channel arrays are in B, R, G order; flag bit 0 is B, bit 1 R, bit 2 G.

use crate::bitstream::BitStream;
use crate::imagecore::PatchBBox;

use super::pee::PeeParams;
use super::RdhError;

pub const MAGIC: u16 = 0x5241;
pub const VERSION: u8 = 1;
/// Length of the fixed part, before the overflow lists.
pub const FIXED_BITS: usize = 16 + 8 + 4 * 16 + 8 + 3 * 8 + 3 * 32 + 3 * 16;
pub const OVERFLOW_ENTRY_BITS: usize = 32;

#[derive(Debug, Clone, PartialEq, Eq)]
pub struct AuxHeader {
    pub bbox: PatchBBox,
    pub thresholds: [PeeParams; 3],
    /// PEE-embedded bits per channel, B, R, G.
    pub seg_len: [u32; 3],
    pub overflow: [Vec<u32>; 3],
}

impl AuxHeader {
    /// Bit `c` set iff channel `c` (B, R, G) carries data.
    pub fn flags(&self) -> u8 {
        self.seg_len
            .iter()
            .enumerate()
            .fold(0, |acc, (c, &n)| acc | (((n > 0) as u8) << c))
    }

    pub fn bit_len(&self) -> usize {
        FIXED_BITS + OVERFLOW_ENTRY_BITS * self.overflow.iter().map(Vec::len).sum::<usize>()
    }

    pub fn total_payload_bits(&self) -> usize {
        self.seg_len.iter().map(|&n| n as usize).sum()
    }
}

pub fn encode_header(header: &AuxHeader) -> Result<BitStream, RdhError> {
    let b = header.bbox;
    for v in [b.x0, b.y0, b.w, b.h] {
        if v > u16::MAX as usize {
            return Err(RdhError::HeaderField(format!(
                "bbox coordinate {v} exceeds 16 bits"
            )));
        }
    }
    for list in &header.overflow {
        if list.len() > u16::MAX as usize {
            return Err(RdhError::HeaderField(format!(
                "{} overflow entries exceed 16 bits",
                list.len()
            )));
        }
    }
    let mut s = BitStream::with_capacity(header.bit_len());
    s.push_bits(MAGIC as u64, 16);
    s.push_bits(VERSION as u64, 8);
    for v in [b.x0, b.y0, b.w, b.h] {
        s.push_bits(v as u64, 16);
    }
    s.push_bits(header.flags() as u64, 8);
    for t in &header.thresholds {
        s.push_bits(t.threshold() as u64, 8);
    }
    for &n in &header.seg_len {
        s.push_bits(n as u64, 32);
    }
    for list in &header.overflow {
        s.push_bits(list.len() as u64, 16);
    }
    for list in &header.overflow {
        for &ci in list {
            s.push_bits(ci as u64, 32);
        }
    }
    debug_assert_eq!(s.len(), header.bit_len());
    Ok(s)
}

/// Parsed fixed part: everything needed to know how many bits follow.
#[derive(Debug, Clone, PartialEq, Eq)]
pub(crate) struct FixedPart {
    bbox: PatchBBox,
    flags: u8,
    thresholds: [PeeParams; 3],
    seg_len: [u32; 3],
    n_overflow: [usize; 3],
}

impl FixedPart {
    pub(crate) fn total_bits(&self) -> usize {
        FIXED_BITS + OVERFLOW_ENTRY_BITS * self.n_overflow.iter().sum::<usize>()
    }
}

pub(crate) fn decode_fixed(s: &mut BitStream) -> Result<FixedPart, RdhError> {
    let magic = s.read_bits(16)? as u16;
    if magic != MAGIC {
        return Err(RdhError::BadMagic(magic));
    }
    let version = s.read_bits(8)? as u8;
    if version != VERSION {
        return Err(RdhError::BadVersion(version));
    }
    let mut coords = [0usize; 4];
    for c in &mut coords {
        *c = s.read_bits(16)? as usize;
    }
    let flags = s.read_bits(8)? as u8;
    let mut thresholds = [PeeParams::new(1)?; 3];
    for t in &mut thresholds {
        *t = PeeParams::new(s.read_bits(8)? as u8)?;
    }
    let mut seg_len = [0u32; 3];
    for n in &mut seg_len {
        *n = s.read_bits(32)? as u32;
    }
    let mut n_overflow = [0usize; 3];
    for n in &mut n_overflow {
        *n = s.read_bits(16)? as usize;
    }
    let fixed = FixedPart {
        bbox: PatchBBox::new(coords[0], coords[1], coords[2], coords[3]),
        flags,
        thresholds,
        seg_len,
        n_overflow,
    };
    Ok(fixed)
}

pub(crate) fn decode_lists(fixed: FixedPart, s: &mut BitStream) -> Result<AuxHeader, RdhError> {
    let mut overflow: [Vec<u32>; 3] = Default::default();
    for (list, &n) in overflow.iter_mut().zip(&fixed.n_overflow) {
        *list = (0..n)
            .map(|_| s.read_bits(32).map(|v| v as u32))
            .collect::<Result<_, _>>()?;
    }
    let header = AuxHeader {
        bbox: fixed.bbox,
        thresholds: fixed.thresholds,
        seg_len: fixed.seg_len,
        overflow,
    };
    if header.flags() != fixed.flags {
        return Err(RdhError::Corrupt(format!(
            "flags {:#05b} disagree with segment lengths {:?}",
            fixed.flags, fixed.seg_len
        )));
    }
    Ok(header)
}

pub fn decode_header(s: &mut BitStream) -> Result<AuxHeader, RdhError> {
    let fixed = decode_fixed(s)?;
    decode_lists(fixed, s)
}

#[cfg(test)]
mod tests {
    use super::*;
    use proptest::prelude::*;

    fn sample() -> AuxHeader {
        AuxHeader {
            bbox: PatchBBox::new(3, 4, 5, 6),
            thresholds: [
                PeeParams::new(2).unwrap(),
                PeeParams::new(3).unwrap(),
                PeeParams::new(64).unwrap(),
            ],
            seg_len: [700, 12, 0],
            overflow: Default::default(),
        }
    }

    #[test]
    fn fixed_width_sum() {
        assert_eq!(FIXED_BITS, 16 + 8 + 64 + 8 + 24 + 96 + 48);
        assert_eq!(FIXED_BITS, 264);
    }

    #[test]
    fn minimal_header_hand_packed() {
        let h = sample();
        assert_eq!(h.flags(), 0b011);
        let s = encode_header(&h).unwrap();
        assert_eq!(s.len(), 264);
        let expected: Vec<u8> = [
            &[0x52, 0x41, 0x01][..],
            &[0, 3, 0, 4, 0, 5, 0, 6],
            &[0b011],
            &[2, 3, 64],
            &[0, 0, 0x02, 0xBC, 0, 0, 0, 12, 0, 0, 0, 0],
            &[0, 0, 0, 0, 0, 0],
        ]
        .concat();
        assert_eq!(s.to_bytes(), expected);
    }

    #[test]
    fn overflow_lists_extend_length() {
        let mut h = sample();
        h.overflow = [vec![1, 2], vec![], vec![u32::MAX]];
        let s = encode_header(&h).unwrap();
        assert_eq!(s.len(), 264 + 3 * 32);
        let mut r = s.clone();
        assert_eq!(decode_header(&mut r).unwrap(), h);
        assert_eq!(r.remaining(), 0);
    }

    #[test]
    fn flipped_magic_rejected() {
        let s = encode_header(&sample()).unwrap();
        let mut bits = s.bits().to_vec();
        bits[5] = !bits[5];
        assert!(matches!(
            decode_header(&mut BitStream::from_bits(bits)),
            Err(RdhError::BadMagic(_))
        ));
    }

    #[test]
    fn bad_version_and_flags_rejected() {
        let s = encode_header(&sample()).unwrap();
        let mut bits = s.bits().to_vec();
        bits[23] = !bits[23];
        assert!(matches!(
            decode_header(&mut BitStream::from_bits(bits)),
            Err(RdhError::BadVersion(0))
        ));
        let mut bits = s.bits().to_vec();
        let flag_g = 16 + 8 + 64 + 5;
        bits[flag_g] = true;
        assert!(matches!(
            decode_header(&mut BitStream::from_bits(bits)),
            Err(RdhError::Corrupt(_))
        ));
    }

    #[test]
    fn oversized_fields_rejected() {
        let mut h = sample();
        h.bbox.x0 = 70_000;
        assert!(encode_header(&h).is_err());
    }

    proptest! {
        #[test]
        fn round_trip(
            coords in proptest::array::uniform4(0usize..=u16::MAX as usize),
            ts in proptest::array::uniform3(1u8..=64),
            seg in proptest::array::uniform3(any::<u32>()),
            lists in proptest::array::uniform3(proptest::collection::vec(any::<u32>(), 0..5)),
        ) {
            let h = AuxHeader {
                bbox: PatchBBox::new(coords[0], coords[1], coords[2], coords[3]),
                thresholds: ts.map(|t| PeeParams::new(t).unwrap()),
                seg_len: seg,
                overflow: lists,
            };
            let mut s = encode_header(&h).unwrap();
            prop_assert_eq!(s.len(), h.bit_len());
            prop_assert_eq!(decode_header(&mut s).unwrap(), h);
        }
    }
}
