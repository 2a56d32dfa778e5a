//! Image quality metrics and attack success rate.

use std::fmt;

use serde::{Deserialize, Serialize};
use thiserror::Error;

use crate::attack::{argmax, ClassifierOracle, OracleError};
use crate::imagecore::RasterImage;

pub const MAX_VALUE: f64 = 255.0;
pub const SSIM_WINDOW: usize = 11;
pub const SSIM_SIGMA: f64 = 1.5;
pub const SSIM_C1: f64 = (0.01 * MAX_VALUE) * (0.01 * MAX_VALUE);
pub const SSIM_C2: f64 = (0.03 * MAX_VALUE) * (0.03 * MAX_VALUE);

#[derive(Debug, Error)]
pub enum MetricsError {
    #[error("image sizes differ: {0}x{1} vs {2}x{3}")]
    SizeMismatch(usize, usize, usize, usize),
    #[error("no examples to score")]
    Empty,
    #[error(transparent)]
    Oracle(#[from] OracleError),
}

fn check_dims(a: &RasterImage, b: &RasterImage) -> Result<(), MetricsError> {
    if a.same_dims(b) {
        Ok(())
    } else {
        Err(MetricsError::SizeMismatch(
            a.width(),
            a.height(),
            b.width(),
            b.height(),
        ))
    }
}

/// Mean squared error over every sample of all three channels.
pub fn mse(a: &RasterImage, b: &RasterImage) -> Result<f64, MetricsError> {
    check_dims(a, b)?;
    let sum: u64 = a
        .data()
        .iter()
        .zip(b.data())
        .map(|(&x, &y)| {
            let d = x.abs_diff(y) as u64;
            d * d
        })
        .sum();
    Ok(sum as f64 / a.data().len() as f64)
}

/// PSNR in dB, with identical images as a distinct value.
#[derive(Debug, Clone, Copy, PartialEq)]
pub enum Psnr {
    Db(f64),
    Infinite,
}

impl Psnr {
    pub fn from_mse(mse: f64) -> Self {
        if mse == 0.0 {
            Psnr::Infinite
        } else {
            Psnr::Db(10.0 * (MAX_VALUE * MAX_VALUE / mse).log10())
        }
    }

    pub fn db(self) -> Option<f64> {
        match self {
            Psnr::Db(v) => Some(v),
            Psnr::Infinite => None,
        }
    }

    pub fn is_infinite(self) -> bool {
        self == Psnr::Infinite
    }
}

impl fmt::Display for Psnr {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        match self {
            Psnr::Db(v) => write!(f, "{v:.6}"),
            Psnr::Infinite => f.write_str("inf"),
        }
    }
}

impl Serialize for Psnr {
    fn serialize<S: serde::Serializer>(&self, s: S) -> Result<S::Ok, S::Error> {
        match self {
            Psnr::Db(v) => s.serialize_f64(*v),
            Psnr::Infinite => s.serialize_str("inf"),
        }
    }
}

impl<'de> Deserialize<'de> for Psnr {
    fn deserialize<D: serde::Deserializer<'de>>(d: D) -> Result<Self, D::Error> {
        #[derive(Deserialize)]
        #[serde(untagged)]
        enum Raw {
            Num(f64),
            Text(String),
        }
        match Raw::deserialize(d)? {
            Raw::Num(v) => Ok(Psnr::Db(v)),
            Raw::Text(t) if t == "inf" => Ok(Psnr::Infinite),
            Raw::Text(t) => Err(serde::de::Error::custom(format!("bad psnr {t:?}"))),
        }
    }
}

pub fn psnr(a: &RasterImage, b: &RasterImage) -> Result<Psnr, MetricsError> {
    Ok(Psnr::from_mse(mse(a, b)?))
}

/// Normalized 2-D Gaussian weights, row-major `SSIM_WINDOW²`.
pub fn gaussian_window() -> Vec<f64> {
    let r = (SSIM_WINDOW / 2) as f64;
    let g: Vec<f64> = (0..SSIM_WINDOW)
        .map(|i| (-((i as f64 - r).powi(2)) / (2.0 * SSIM_SIGMA * SSIM_SIGMA)).exp())
        .collect();
    let mut w: Vec<f64> = g
        .iter()
        .flat_map(|a| g.iter().map(move |b| a * b))
        .collect();
    let total: f64 = w.iter().sum();
    w.iter_mut().for_each(|v| *v /= total);
    w
}

#[inline]
fn ssim_formula(mx: f64, my: f64, vx: f64, vy: f64, cxy: f64) -> f64 {
    ((2.0 * mx * my + SSIM_C1) * (2.0 * cxy + SSIM_C2))
        / ((mx * mx + my * my + SSIM_C1) * (vx + vy + SSIM_C2))
}

fn plane(img: &RasterImage, c: usize) -> Vec<f64> {
    img.data()
        .iter()
        .skip(c)
        .step_by(3)
        .map(|&v| v as f64)
        .collect()
}

fn ssim_global(x: &[f64], y: &[f64]) -> f64 {
    let n = x.len() as f64;
    let mx = x.iter().sum::<f64>() / n;
    let my = y.iter().sum::<f64>() / n;
    let (mut vx, mut vy, mut cxy) = (0.0, 0.0, 0.0);
    for (a, b) in x.iter().zip(y) {
        vx += (a - mx) * (a - mx);
        vy += (b - my) * (b - my);
        cxy += (a - mx) * (b - my);
    }
    ssim_formula(mx, my, vx / n, vy / n, cxy / n)
}

fn ssim_windowed(x: &[f64], y: &[f64], h: usize, w: usize, win: &[f64]) -> f64 {
    let mut total = 0.0;
    let positions = (h - SSIM_WINDOW + 1) * (w - SSIM_WINDOW + 1);
    for y0 in 0..=h - SSIM_WINDOW {
        for x0 in 0..=w - SSIM_WINDOW {
            let (mut mx, mut my) = (0.0, 0.0);
            for dy in 0..SSIM_WINDOW {
                for dx in 0..SSIM_WINDOW {
                    let k = (y0 + dy) * w + x0 + dx;
                    let g = win[dy * SSIM_WINDOW + dx];
                    mx += g * x[k];
                    my += g * y[k];
                }
            }
            let (mut vx, mut vy, mut cxy) = (0.0, 0.0, 0.0);
            for dy in 0..SSIM_WINDOW {
                for dx in 0..SSIM_WINDOW {
                    let k = (y0 + dy) * w + x0 + dx;
                    let g = win[dy * SSIM_WINDOW + dx];
                    let (a, b) = (x[k] - mx, y[k] - my);
                    vx += g * a * a;
                    vy += g * b * b;
                    cxy += g * a * b;
                }
            }
            total += ssim_formula(mx, my, vx, vy, cxy);
        }
    }
    total / positions as f64
}

/// Mean of the per-channel SSIM. Images smaller than the window in either
/// dimension use whole-image statistics.
pub fn ssim(a: &RasterImage, b: &RasterImage) -> Result<f64, MetricsError> {
    check_dims(a, b)?;
    let (h, w) = (a.height(), a.width());
    let windowed = h.min(w) >= SSIM_WINDOW;
    let win = if windowed {
        gaussian_window()
    } else {
        Vec::new()
    };
    let mut sum = 0.0;
    for c in 0..3 {
        let (x, y) = (plane(a, c), plane(b, c));
        sum += if windowed {
            ssim_windowed(&x, &y, h, w, &win)
        } else {
            ssim_global(&x, &y)
        };
    }
    Ok(sum / 3.0)
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct QualityReport {
    pub mse: f64,
    pub psnr_db: Psnr,
    pub ssim: f64,
}

impl QualityReport {
    pub const CSV_HEADER: &'static str = "image_id,mse,psnr_db,ssim";

    pub fn compute(reference: &RasterImage, test: &RasterImage) -> Result<Self, MetricsError> {
        let mse = mse(reference, test)?;
        Ok(Self {
            mse,
            psnr_db: Psnr::from_mse(mse),
            ssim: ssim(reference, test)?,
        })
    }

    pub fn csv_row(&self, image_id: &str) -> String {
        format!(
            "{image_id},{:.6},{},{:.6}",
            self.mse, self.psnr_db, self.ssim
        )
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
pub enum AsrMode {
    /// Success when the prediction equals this class.
    Targeted(usize),
    /// Success when the prediction differs from the true label.
    Untargeted,
}

/// Fraction of `(image, true_label)` examples on which the attack succeeds.
pub fn attack_success_rate<O: ClassifierOracle + ?Sized>(
    oracle: &mut O,
    examples: &[(RasterImage, usize)],
    mode: AsrMode,
) -> Result<f64, MetricsError> {
    if examples.is_empty() {
        return Err(MetricsError::Empty);
    }
    let mut hits = 0;
    for (img, label) in examples {
        let pred = argmax(&oracle.probs(img)?);
        let ok = match mode {
            AsrMode::Targeted(t) => pred == t,
            AsrMode::Untargeted => pred != *label,
        };
        hits += ok as usize;
    }
    Ok(hits as f64 / examples.len() as f64)
}
