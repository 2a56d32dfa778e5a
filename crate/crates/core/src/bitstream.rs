//! MSB-first bit container used for the auxiliary header and the payload.

use thiserror::Error;

#[derive(Debug, Clone, PartialEq, Eq, Error)]
#[error("bitstream truncated: wanted {wanted} bits at offset {offset}, {available} available")]
pub struct Truncated {
    pub wanted: usize,
    pub offset: usize,
    pub available: usize,
}

/// Ordered bits with a read cursor. Writes always append.
#[derive(Debug, Clone, Default, PartialEq, Eq)]
pub struct BitStream {
    bits: Vec<bool>,
    cursor: usize,
}

impl BitStream {
    pub fn new() -> Self {
        Self::default()
    }

    pub fn with_capacity(n: usize) -> Self {
        Self {
            bits: Vec::with_capacity(n),
            cursor: 0,
        }
    }

    pub fn from_bits(bits: Vec<bool>) -> Self {
        Self { bits, cursor: 0 }
    }

    pub fn from_bytes(bytes: &[u8]) -> Self {
        let mut s = Self::with_capacity(bytes.len() * 8);
        s.push_bytes(bytes);
        s
    }

    pub fn len(&self) -> usize {
        self.bits.len()
    }

    pub fn is_empty(&self) -> bool {
        self.bits.is_empty()
    }

    pub fn cursor(&self) -> usize {
        self.cursor
    }

    pub fn remaining(&self) -> usize {
        self.bits.len() - self.cursor
    }

    pub fn bits(&self) -> &[bool] {
        &self.bits
    }

    pub fn rewind(&mut self) {
        self.cursor = 0;
    }

    pub fn push_bit(&mut self, bit: bool) {
        self.bits.push(bit);
    }

    /// Append the low `width` bits of `value`, most significant first.
    pub fn push_bits(&mut self, value: u64, width: u32) {
        debug_assert!(width <= 64);
        debug_assert!(
            width == 64 || value >> width == 0,
            "value does not fit in {width} bits"
        );
        for shift in (0..width).rev() {
            self.bits.push((value >> shift) & 1 == 1);
        }
    }

    pub fn push_bytes(&mut self, bytes: &[u8]) {
        for &b in bytes {
            self.push_bits(b as u64, 8);
        }
    }

    pub fn extend(&mut self, other: &BitStream) {
        self.bits.extend_from_slice(&other.bits);
    }

    fn need(&self, wanted: usize) -> Result<(), Truncated> {
        if self.remaining() < wanted {
            Err(Truncated {
                wanted,
                offset: self.cursor,
                available: self.remaining(),
            })
        } else {
            Ok(())
        }
    }

    pub fn read_bit(&mut self) -> Result<bool, Truncated> {
        self.need(1)?;
        let b = self.bits[self.cursor];
        self.cursor += 1;
        Ok(b)
    }

    pub fn read_bits(&mut self, width: u32) -> Result<u64, Truncated> {
        self.need(width as usize)?;
        let mut v = 0u64;
        for _ in 0..width {
            v = (v << 1) | self.bits[self.cursor] as u64;
            self.cursor += 1;
        }
        Ok(v)
    }

    pub fn read_bytes(&mut self, n: usize) -> Result<Vec<u8>, Truncated> {
        self.need(n * 8)?;
        (0..n).map(|_| self.read_bits(8).map(|v| v as u8)).collect()
    }

    /// Take the next `n` bits as a new stream.
    pub fn read_stream(&mut self, n: usize) -> Result<BitStream, Truncated> {
        self.need(n)?;
        let out = BitStream::from_bits(self.bits[self.cursor..self.cursor + n].to_vec());
        self.cursor += n;
        Ok(out)
    }

    /// Pack into bytes, zero-padding the final byte.
    pub fn to_bytes(&self) -> Vec<u8> {
        self.bits
            .chunks(8)
            .map(|chunk| {
                chunk
                    .iter()
                    .enumerate()
                    .fold(0u8, |acc, (i, &b)| acc | ((b as u8) << (7 - i)))
            })
            .collect()
    }
}

impl FromIterator<bool> for BitStream {
    fn from_iter<I: IntoIterator<Item = bool>>(iter: I) -> Self {
        Self::from_bits(iter.into_iter().collect())
    }
}
