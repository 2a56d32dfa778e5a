//! Pointwise prediction-error expansion with histogram shifting.

use super::RdhError;

pub const MIN_THRESHOLD: u8 = 1;
pub const MAX_THRESHOLD: u8 = 64;

/// Per-channel error bound `T`: errors in `[-T, T)` carry one bit, the rest
/// are shifted outward by `T`.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash)]
pub struct PeeParams {
    threshold: u8,
}

impl PeeParams {
    pub fn new(threshold: u8) -> Result<Self, RdhError> {
        if !(MIN_THRESHOLD..=MAX_THRESHOLD).contains(&threshold) {
            return Err(RdhError::InvalidThreshold(threshold));
        }
        Ok(Self { threshold })
    }

    #[inline]
    pub fn threshold(&self) -> u8 {
        self.threshold
    }

    #[inline]
    pub(crate) fn t(&self) -> i32 {
        self.threshold as i32
    }

    /// Predictions outside `[2T, 255-2T]` are never used, whatever
    /// the bit, so expanded values always stay in range.
    #[inline]
    pub fn in_safe_band(&self, predicted: u8) -> bool {
        let p = predicted as i32;
        let t = self.t();
        p >= 2 * t && p <= 255 - 2 * t
    }

    #[inline]
    pub fn expandable(&self, error: i32) -> bool {
        let t = self.t();
        (-t..t).contains(&error)
    }
}

/// Median edge detector over left `a`, top `b`, top-left `c`.
#[inline]
pub fn predict_med(left: u8, top: u8, top_left: u8) -> u8 {
    let (a, b, c) = (left as i32, top as i32, top_left as i32);
    let v = if c >= a.max(b) {
        a.min(b)
    } else if c <= a.min(b) {
        a.max(b)
    } else {
        a + b - c
    };
    v.clamp(0, 255) as u8
}

#[inline]
pub fn compute_error(value: u8, predicted: u8) -> i32 {
    value as i32 - predicted as i32
}

/// Expand an error in `[-T, T)` with `bit`, or shift it away from zero by `T`.
pub fn expand_or_shift(error: i32, bit: Option<bool>, t: u8) -> Result<i32, RdhError> {
    let t = t as i32;
    match (error >= -t && error < t, bit) {
        (true, Some(i)) => Ok(2 * error + i as i32),
        (true, None) => Err(RdhError::BitMismatch {
            error,
            expected_bit: true,
        }),
        (false, None) if error >= t => Ok(error + t),
        (false, None) => Ok(error - t),
        (false, Some(_)) => Err(RdhError::BitMismatch {
            error,
            expected_bit: false,
        }),
    }
}

/// Inverse of [`expand_or_shift`]. Total on all integers.
pub fn invert(marked: i32, t: u8) -> (i32, Option<bool>) {
    let t = t as i32;
    if marked >= 2 * t {
        (marked - t, None)
    } else if marked < -2 * t {
        (marked + t, None)
    } else {
        let p = marked.div_euclid(2);
        (p, Some(marked - 2 * p == 1))
    }
}

/// `â + p_s`. The skip rules guarantee the result is a valid sample.
#[inline]
pub fn apply_prediction(predicted: u8, marked: i32) -> u8 {
    let v = predicted as i32 + marked;
    assert!(
        (0..=255).contains(&v),
        "skip rules violated: {predicted} + {marked} leaves the sample range"
    );
    v as u8
}
