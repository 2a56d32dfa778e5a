//! Lossless compression of the occluded region and payload framing.
//!
//! Payload bit order: the saved header-slot LSBs, then the serialized
//! [`SecretRecord`] (`codec_id:u8`, `compressed_len:u32` big-endian, body).

use std::io::{Read, Write};

use flate2::read::DeflateDecoder;
use flate2::write::DeflateEncoder;
use flate2::Compression;
use image::codecs::webp::WebPEncoder;
use image::{ExtendedColorType, ImageEncoder, ImageFormat};
use thiserror::Error;

use crate::bitstream::{BitStream, Truncated};
use crate::imagecore::{from_dynamic, RasterImage};

#[derive(Debug, Error)]
pub enum PayloadError {
    #[error("unknown codec id {0}")]
    UnknownCodec(u8),
    #[error("corrupt secret body: {0}")]
    Corrupt(String),
    #[error("secret decodes to {got} bytes, expected {expected}")]
    LengthMismatch { expected: usize, got: usize },
    #[error("codec failure: {0}")]
    Codec(String),
    #[error(transparent)]
    Truncated(#[from] Truncated),
}

#[derive(
    Debug, Clone, Copy, PartialEq, Eq, Hash, Default, serde::Serialize, serde::Deserialize,
)]
#[serde(rename_all = "lowercase")]
pub enum Codec {
    Raw = 0,
    #[default]
    Deflate = 1,
    /// Lossless WebP.
    Webp = 2,
}

impl Codec {
    pub fn id(self) -> u8 {
        self as u8
    }

    pub fn from_id(id: u8) -> Result<Self, PayloadError> {
        match id {
            0 => Ok(Codec::Raw),
            1 => Ok(Codec::Deflate),
            2 => Ok(Codec::Webp),
            other => Err(PayloadError::UnknownCodec(other)),
        }
    }

    pub fn name(self) -> &'static str {
        match self {
            Codec::Raw => "raw",
            Codec::Deflate => "deflate",
            Codec::Webp => "webp",
        }
    }
}

impl std::str::FromStr for Codec {
    type Err = String;

    fn from_str(s: &str) -> Result<Self, Self::Err> {
        match s {
            "raw" => Ok(Codec::Raw),
            "deflate" => Ok(Codec::Deflate),
            "webp" => Ok(Codec::Webp),
            other => Err(format!(
                "unknown codec {other:?} (expected raw, deflate or webp)"
            )),
        }
    }
}

#[derive(Debug, Clone, PartialEq, Eq)]
pub struct SecretRecord {
    pub codec: Codec,
    pub body: Vec<u8>,
}

impl SecretRecord {
    pub fn compressed_len(&self) -> usize {
        self.body.len()
    }

    pub fn to_bytes(&self) -> Vec<u8> {
        let mut out = Vec::with_capacity(5 + self.body.len());
        out.push(self.codec.id());
        out.extend_from_slice(&(self.body.len() as u32).to_be_bytes());
        out.extend_from_slice(&self.body);
        out
    }

    pub fn bit_len(&self) -> usize {
        8 * (5 + self.body.len())
    }
}

fn deflate(bytes: &[u8]) -> Result<Vec<u8>, PayloadError> {
    let mut enc = DeflateEncoder::new(Vec::new(), Compression::best());
    enc.write_all(bytes)
        .map_err(|e| PayloadError::Codec(e.to_string()))?;
    enc.finish().map_err(|e| PayloadError::Codec(e.to_string()))
}

fn inflate(body: &[u8], expected: usize) -> Result<Vec<u8>, PayloadError> {
    let mut out = Vec::with_capacity(expected);
    DeflateDecoder::new(body)
        .take(expected as u64 + 1)
        .read_to_end(&mut out)
        .map_err(|e| PayloadError::Corrupt(e.to_string()))?;
    Ok(out)
}

fn webp_encode(region: &RasterImage) -> Result<Vec<u8>, PayloadError> {
    let mut out = Vec::new();
    WebPEncoder::new_lossless(&mut out)
        .write_image(
            region.data(),
            region.width() as u32,
            region.height() as u32,
            ExtendedColorType::Rgb8,
        )
        .map_err(|e| PayloadError::Codec(e.to_string()))?;
    Ok(out)
}

fn webp_decode(body: &[u8]) -> Result<RasterImage, PayloadError> {
    let img = image::load_from_memory_with_format(body, ImageFormat::WebP)
        .map_err(|e| PayloadError::Corrupt(e.to_string()))?;
    from_dynamic(img).map_err(|e| PayloadError::Corrupt(e.to_string()))
}

/// Compress `region` with `codec`, falling back to raw when that is no larger.
pub fn compress_secret(region: &RasterImage, codec: Codec) -> Result<SecretRecord, PayloadError> {
    let raw = region.data();
    let body = match codec {
        Codec::Raw => raw.to_vec(),
        Codec::Deflate => deflate(raw)?,
        Codec::Webp => webp_encode(region)?,
    };
    if codec != Codec::Raw && body.len() >= raw.len() {
        return Ok(SecretRecord {
            codec: Codec::Raw,
            body: raw.to_vec(),
        });
    }
    Ok(SecretRecord { codec, body })
}

pub fn decompress_secret(
    record: &SecretRecord,
    w: usize,
    h: usize,
) -> Result<RasterImage, PayloadError> {
    let expected = w * h * 3;
    let bytes = match record.codec {
        Codec::Raw => record.body.clone(),
        Codec::Deflate => inflate(&record.body, expected)?,
        Codec::Webp => {
            let img = webp_decode(&record.body)?;
            if img.width() != w || img.height() != h {
                return Err(PayloadError::LengthMismatch {
                    expected,
                    got: img.data().len(),
                });
            }
            img.into_data()
        }
    };
    if bytes.len() != expected {
        return Err(PayloadError::LengthMismatch {
            expected,
            got: bytes.len(),
        });
    }
    RasterImage::new(h, w, bytes).map_err(|e| PayloadError::Corrupt(e.to_string()))
}

pub fn assemble_payload(saved_lsbs: &BitStream, secret: &SecretRecord) -> BitStream {
    let mut out = BitStream::with_capacity(saved_lsbs.len() + secret.bit_len());
    out.extend(saved_lsbs);
    out.push_bytes(&secret.to_bytes());
    out
}

/// Inverse of [`assemble_payload`]; `n_saved` comes from the header geometry.
pub fn parse_payload(
    stream: &BitStream,
    n_saved: usize,
) -> Result<(BitStream, SecretRecord), PayloadError> {
    let mut s = stream.clone();
    s.rewind();
    let saved = s.read_stream(n_saved)?;
    let codec = Codec::from_id(s.read_bits(8)? as u8)?;
    let len = s.read_bits(32)? as usize;
    let body = s.read_bytes(len)?;
    Ok((saved, SecretRecord { codec, body }))
}
