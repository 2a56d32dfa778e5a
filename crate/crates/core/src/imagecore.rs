//! Raster images, lossless PNG I/O and the rectangular patch geometry.
//!
//! Everything here is value-semantic: operations take images by reference
//! and return new ones, so they can be called from any number of workers.

use std::fs;
use std::io;
use std::path::Path;

use image::{ColorType, DynamicImage, ImageFormat};
use serde::{Deserialize, Serialize};
use thiserror::Error;

/// Errors produced by image I/O and geometry operations.
#[derive(Debug, Error)]
pub enum ImageError {
    #[error("file not found: {0}")]
    NotFound(String),
    #[error("i/o error: {0}")]
    Io(#[from] io::Error),
    #[error("malformed png: {0}")]
    Malformed(String),
    #[error("unsupported bit depth: {0} bits per sample")]
    UnsupportedBitDepth(u16),
    #[error("unsupported color type: {0}")]
    UnsupportedColor(String),
    #[error("bounding box {bbox:?} does not fit a {width}x{height} image")]
    OutOfBounds {
        bbox: PatchBBox,
        width: usize,
        height: usize,
    },
    #[error("size mismatch: expected {expected_w}x{expected_h}, got {got_w}x{got_h}")]
    SizeMismatch {
        expected_w: usize,
        expected_h: usize,
        got_w: usize,
        got_h: usize,
    },
    #[error("invalid transform: {0}")]
    InvalidTransform(String),
    #[error("patch covers the entire image, no carrier pixels remain")]
    NoCarrier,
    #[error("invalid raster: {0}")]
    InvalidRaster(String),
    #[error("bad patch sidecar: {0}")]
    Sidecar(String),
}

/// Color channel index into the interleaved R,G,B storage.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash, Serialize, Deserialize)]
pub enum Channel {
    R = 0,
    G = 1,
    B = 2,
}

impl Channel {
    /// Embedding order used by the reversible codec.
    pub const BRG: [Channel; 3] = [Channel::B, Channel::R, Channel::G];

    #[inline]
    pub fn offset(self) -> usize {
        self as usize
    }
}

/// An H×W 8-bit RGB raster stored row-major, interleaved R,G,B.
#[derive(Clone, PartialEq, Eq, Hash)]
pub struct RasterImage {
    height: usize,
    width: usize,
    data: Vec<u8>,
}

impl std::fmt::Debug for RasterImage {
    fn fmt(&self, f: &mut std::fmt::Formatter<'_>) -> std::fmt::Result {
        f.debug_struct("RasterImage")
            .field("height", &self.height)
            .field("width", &self.width)
            .finish_non_exhaustive()
    }
}

impl RasterImage {
    pub fn new(height: usize, width: usize, data: Vec<u8>) -> Result<Self, ImageError> {
        if height == 0 || width == 0 {
            return Err(ImageError::InvalidRaster(format!(
                "dimensions must be positive, got {width}x{height}"
            )));
        }
        if data.len() != height * width * 3 {
            return Err(ImageError::InvalidRaster(format!(
                "expected {} samples, got {}",
                height * width * 3,
                data.len()
            )));
        }
        Ok(Self {
            height,
            width,
            data,
        })
    }

    pub fn filled(height: usize, width: usize, rgb: [u8; 3]) -> Self {
        assert!(height > 0 && width > 0, "empty raster");
        let data = rgb
            .iter()
            .copied()
            .cycle()
            .take(height * width * 3)
            .collect();
        Self {
            height,
            width,
            data,
        }
    }

    pub fn from_fn(
        height: usize,
        width: usize,
        mut f: impl FnMut(usize, usize) -> [u8; 3],
    ) -> Self {
        assert!(height > 0 && width > 0, "empty raster");
        let mut data = Vec::with_capacity(height * width * 3);
        for y in 0..height {
            for x in 0..width {
                data.extend_from_slice(&f(y, x));
            }
        }
        Self {
            height,
            width,
            data,
        }
    }

    #[inline]
    pub fn height(&self) -> usize {
        self.height
    }

    #[inline]
    pub fn width(&self) -> usize {
        self.width
    }

    #[inline]
    pub fn pixel_count(&self) -> usize {
        self.height * self.width
    }

    #[inline]
    pub fn data(&self) -> &[u8] {
        &self.data
    }

    #[inline]
    pub fn data_mut(&mut self) -> &mut [u8] {
        &mut self.data
    }

    pub fn into_data(self) -> Vec<u8> {
        self.data
    }

    #[inline]
    pub fn pixel(&self, y: usize, x: usize) -> [u8; 3] {
        let i = (y * self.width + x) * 3;
        [self.data[i], self.data[i + 1], self.data[i + 2]]
    }

    #[inline]
    pub fn set_pixel(&mut self, y: usize, x: usize, rgb: [u8; 3]) {
        let i = (y * self.width + x) * 3;
        self.data[i..i + 3].copy_from_slice(&rgb);
    }

    #[inline]
    pub fn sample(&self, y: usize, x: usize, channel: Channel) -> u8 {
        self.data[(y * self.width + x) * 3 + channel.offset()]
    }

    /// One channel as a row-major plane.
    pub fn channel_plane(&self, channel: Channel) -> Vec<u8> {
        self.data
            .iter()
            .skip(channel.offset())
            .step_by(3)
            .copied()
            .collect()
    }

    pub fn set_channel_plane(&mut self, channel: Channel, plane: &[u8]) {
        assert_eq!(plane.len(), self.pixel_count(), "plane size mismatch");
        for (dst, &v) in self
            .data
            .iter_mut()
            .skip(channel.offset())
            .step_by(3)
            .zip(plane)
        {
            *dst = v;
        }
    }

    pub fn same_dims(&self, other: &RasterImage) -> bool {
        self.height == other.height && self.width == other.width
    }
}

/// Axis-aligned patch rectangle; `x0` is a column, `y0` a row.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash, PartialOrd, Ord, Serialize, Deserialize)]
pub struct PatchBBox {
    pub x0: usize,
    pub y0: usize,
    pub w: usize,
    pub h: usize,
}

impl PatchBBox {
    pub fn new(x0: usize, y0: usize, w: usize, h: usize) -> Self {
        Self { x0, y0, w, h }
    }

    pub fn square(x0: usize, y0: usize, side: usize) -> Self {
        Self::new(x0, y0, side, side)
    }

    pub fn fits(&self, width: usize, height: usize) -> bool {
        self.w >= 1 && self.h >= 1 && self.x0 + self.w <= width && self.y0 + self.h <= height
    }

    pub fn check(&self, width: usize, height: usize) -> Result<(), ImageError> {
        if self.fits(width, height) {
            Ok(())
        } else {
            Err(ImageError::OutOfBounds {
                bbox: *self,
                width,
                height,
            })
        }
    }

    #[inline]
    pub fn contains(&self, y: usize, x: usize) -> bool {
        y >= self.y0 && y < self.y0 + self.h && x >= self.x0 && x < self.x0 + self.w
    }

    pub fn area(&self) -> usize {
        self.w * self.h
    }

    /// Patch area as a fraction of the image area.
    pub fn noise_percentage(&self, width: usize, height: usize) -> f64 {
        self.area() as f64 / (width * height) as f64
    }
}

/// Side of the largest square whose area does not exceed `fraction` of the image.
pub fn square_side_for_fraction(width: usize, height: usize, fraction: f64) -> usize {
    let area = fraction * (width * height) as f64;
    let mut side = area.sqrt().floor() as usize;
    // sqrt may land just below an exact square
    while (((side + 1) * (side + 1)) as f64) <= area {
        side += 1;
    }
    while side > 0 && (side * side) as f64 > area {
        side -= 1;
    }
    side
}

/// Lossless quarter-turn rotations, clockwise.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash, Default, Serialize, Deserialize)]
pub enum Rotation {
    #[default]
    R0,
    R90,
    R180,
    R270,
}

impl Rotation {
    pub const ALL: [Rotation; 4] = [Rotation::R0, Rotation::R90, Rotation::R180, Rotation::R270];

    pub fn degrees(self) -> u16 {
        match self {
            Rotation::R0 => 0,
            Rotation::R90 => 90,
            Rotation::R180 => 180,
            Rotation::R270 => 270,
        }
    }

    pub fn from_degrees(deg: u16) -> Option<Self> {
        match deg {
            0 => Some(Rotation::R0),
            90 => Some(Rotation::R90),
            180 => Some(Rotation::R180),
            270 => Some(Rotation::R270),
            _ => None,
        }
    }

    /// Source coordinate in an unrotated `h`×`w` grid for destination
    /// `(y, x)` in the rotated grid.
    #[inline]
    pub(crate) fn source_of(self, y: usize, x: usize, h: usize, w: usize) -> (usize, usize) {
        match self {
            Rotation::R0 => (y, x),
            // rotated grid is w×h
            Rotation::R90 => (h - 1 - x, y),
            Rotation::R180 => (h - 1 - y, w - 1 - x),
            Rotation::R270 => (x, w - 1 - y),
        }
    }
}

pub const MIN_SCALE: f64 = 0.05;
pub const MAX_SCALE: f64 = 1.0;

/// Scale (nearest neighbour) followed by an exact rotation.
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct PatchTransform {
    pub rotation: Rotation,
    pub scale: f64,
}

impl Default for PatchTransform {
    fn default() -> Self {
        Self::IDENTITY
    }
}

impl PatchTransform {
    pub const IDENTITY: PatchTransform = PatchTransform {
        rotation: Rotation::R0,
        scale: 1.0,
    };

    pub fn new(rotation: Rotation, scale: f64) -> Result<Self, ImageError> {
        let t = Self { rotation, scale };
        t.validate()?;
        Ok(t)
    }

    /// Transform that shrinks a `patch_side` patch to exactly `target_side`.
    pub fn to_side(
        patch_side: usize,
        target_side: usize,
        rotation: Rotation,
    ) -> Result<Self, ImageError> {
        if target_side == 0 || target_side > patch_side {
            return Err(ImageError::InvalidTransform(format!(
                "cannot scale a {patch_side}px patch to {target_side}px"
            )));
        }
        Self::new(rotation, target_side as f64 / patch_side as f64)
    }

    pub fn validate(&self) -> Result<(), ImageError> {
        if !(self.scale.is_finite() && (MIN_SCALE..=MAX_SCALE).contains(&self.scale)) {
            return Err(ImageError::InvalidTransform(format!(
                "scale {} outside [{MIN_SCALE}, {MAX_SCALE}]",
                self.scale
            )));
        }
        Ok(())
    }

    /// ⌊side·scale⌋, tolerant of the rounding in `target/side` ratios.
    pub fn scaled_side(&self, side: usize) -> usize {
        ((side as f64) * self.scale + 1e-9).floor() as usize
    }

    /// For every destination pixel of the transformed `side`×`side` patch,
    /// the row-major source index in the untransformed patch.
    pub fn index_map(&self, side: usize) -> Result<(usize, Vec<usize>), ImageError> {
        self.validate()?;
        let scaled = self.scaled_side(side);
        if scaled == 0 {
            return Err(ImageError::InvalidTransform(format!(
                "scale {} collapses a {side}px patch",
                self.scale
            )));
        }
        let mut map = Vec::with_capacity(scaled * scaled);
        for y in 0..scaled {
            for x in 0..scaled {
                let (sy, sx) = self.rotation.source_of(y, x, scaled, scaled);
                let py = sy * side / scaled;
                let px = sx * side / scaled;
                map.push(py * side + px);
            }
        }
        Ok((scaled, map))
    }
}

/// A square adversarial patch and the class it pushes towards.
#[derive(Debug, Clone, PartialEq, Eq)]
pub struct Patch {
    pub pixels: RasterImage,
    pub target_class: usize,
}

#[derive(Debug, Serialize, Deserialize)]
struct PatchSidecar {
    side: usize,
    target_class: usize,
}

impl Patch {
    pub fn new(pixels: RasterImage, target_class: usize) -> Result<Self, ImageError> {
        if pixels.width() != pixels.height() {
            return Err(ImageError::InvalidRaster(format!(
                "patch must be square, got {}x{}",
                pixels.width(),
                pixels.height()
            )));
        }
        Ok(Self {
            pixels,
            target_class,
        })
    }

    pub fn side(&self) -> usize {
        self.pixels.width()
    }

    /// Transformed patch pixels.
    pub fn transformed(&self, t: &PatchTransform) -> Result<RasterImage, ImageError> {
        let side = self.side();
        let (out_side, map) = t.index_map(side)?;
        let src = self.pixels.data();
        let mut data = Vec::with_capacity(out_side * out_side * 3);
        for &i in &map {
            data.extend_from_slice(&src[i * 3..i * 3 + 3]);
        }
        RasterImage::new(out_side, out_side, data)
    }

    /// Path of the JSON sidecar that accompanies a patch PNG.
    pub fn sidecar_path(png: &Path) -> std::path::PathBuf {
        png.with_extension("json")
    }

    pub fn save(&self, png: &Path) -> Result<(), ImageError> {
        save_png(&self.pixels, png)?;
        let sidecar = PatchSidecar {
            side: self.side(),
            target_class: self.target_class,
        };
        let json = serde_json::to_string_pretty(&sidecar)
            .map_err(|e| ImageError::Sidecar(e.to_string()))?;
        fs::write(Self::sidecar_path(png), json)?;
        Ok(())
    }

    pub fn load(png: &Path) -> Result<Self, ImageError> {
        let pixels = load_png(png)?;
        let sidecar_path = Self::sidecar_path(png);
        let text = fs::read_to_string(&sidecar_path).map_err(|e| match e.kind() {
            io::ErrorKind::NotFound => ImageError::NotFound(sidecar_path.display().to_string()),
            _ => ImageError::Io(e),
        })?;
        let sidecar: PatchSidecar =
            serde_json::from_str(&text).map_err(|e| ImageError::Sidecar(e.to_string()))?;
        if sidecar.side != pixels.width() || sidecar.side != pixels.height() {
            return Err(ImageError::Sidecar(format!(
                "sidecar side {} does not match {}x{} pixels",
                sidecar.side,
                pixels.width(),
                pixels.height()
            )));
        }
        Patch::new(pixels, sidecar.target_class)
    }
}

/// Decode an 8-bit RGB or RGBA PNG; alpha is dropped.
pub fn load_png(path: &Path) -> Result<RasterImage, ImageError> {
    let bytes = fs::read(path).map_err(|e| match e.kind() {
        io::ErrorKind::NotFound => ImageError::NotFound(path.display().to_string()),
        _ => ImageError::Io(e),
    })?;
    decode_png(&bytes)
}

pub fn decode_png(bytes: &[u8]) -> Result<RasterImage, ImageError> {
    let img = image::load_from_memory_with_format(bytes, ImageFormat::Png)
        .map_err(|e| ImageError::Malformed(e.to_string()))?;
    from_dynamic(img)
}

pub(crate) fn from_dynamic(img: DynamicImage) -> Result<RasterImage, ImageError> {
    let (w, h) = (img.width() as usize, img.height() as usize);
    match img.color() {
        ColorType::Rgb8 => RasterImage::new(h, w, img.into_rgb8().into_raw()),
        ColorType::Rgba8 => RasterImage::new(
            h,
            w,
            DynamicImage::ImageRgba8(img.into_rgba8())
                .into_rgb8()
                .into_raw(),
        ),
        ColorType::Rgb16 | ColorType::Rgba16 | ColorType::L16 | ColorType::La16 => {
            Err(ImageError::UnsupportedBitDepth(16))
        }
        ColorType::Rgb32F | ColorType::Rgba32F => Err(ImageError::UnsupportedBitDepth(32)),
        other => Err(ImageError::UnsupportedColor(format!("{other:?}"))),
    }
}

pub fn encode_png(image: &RasterImage) -> Result<Vec<u8>, ImageError> {
    let mut out = io::Cursor::new(Vec::new());
    image::write_buffer_with_format(
        &mut out,
        image.data(),
        image.width() as u32,
        image.height() as u32,
        image::ExtendedColorType::Rgb8,
        ImageFormat::Png,
    )
    .map_err(|e| match e {
        image::ImageError::IoError(io) => ImageError::Io(io),
        other => ImageError::Malformed(other.to_string()),
    })?;
    Ok(out.into_inner())
}

/// Write `image` as a lossless 8-bit RGB PNG, replacing any existing file.
pub fn save_png(image: &RasterImage, path: &Path) -> Result<(), ImageError> {
    let bytes = encode_png(image)?;
    fs::write(path, bytes)?;
    Ok(())
}

/// Paste the transformed patch into `bbox`; the transformed patch must be
/// exactly `bbox.w`×`bbox.h`.
pub fn apply_patch(
    image: &RasterImage,
    patch: &Patch,
    bbox: PatchBBox,
    t: &PatchTransform,
) -> Result<RasterImage, ImageError> {
    bbox.check(image.width(), image.height())?;
    let transformed = patch.transformed(t)?;
    if transformed.width() != bbox.w || transformed.height() != bbox.h {
        return Err(ImageError::SizeMismatch {
            expected_w: bbox.w,
            expected_h: bbox.h,
            got_w: transformed.width(),
            got_h: transformed.height(),
        });
    }
    write_region(image, bbox, &transformed)
}

pub fn extract_region(image: &RasterImage, bbox: PatchBBox) -> Result<RasterImage, ImageError> {
    bbox.check(image.width(), image.height())?;
    let mut data = Vec::with_capacity(bbox.area() * 3);
    for y in bbox.y0..bbox.y0 + bbox.h {
        let start = (y * image.width() + bbox.x0) * 3;
        data.extend_from_slice(&image.data()[start..start + bbox.w * 3]);
    }
    RasterImage::new(bbox.h, bbox.w, data)
}

pub fn write_region(
    image: &RasterImage,
    bbox: PatchBBox,
    region: &RasterImage,
) -> Result<RasterImage, ImageError> {
    bbox.check(image.width(), image.height())?;
    if region.width() != bbox.w || region.height() != bbox.h {
        return Err(ImageError::SizeMismatch {
            expected_w: bbox.w,
            expected_h: bbox.h,
            got_w: region.width(),
            got_h: region.height(),
        });
    }
    let mut out = image.clone();
    let width = image.width();
    for (ry, y) in (bbox.y0..bbox.y0 + bbox.h).enumerate() {
        let dst = (y * width + bbox.x0) * 3;
        let src = ry * bbox.w * 3;
        out.data_mut()[dst..dst + bbox.w * 3]
            .copy_from_slice(&region.data()[src..src + bbox.w * 3]);
    }
    Ok(out)
}

/// The out-of-patch pixels re-flowed row-major into a virtual grid of the
/// original image width. The last virtual row may be partial.
#[derive(Debug, Clone, PartialEq, Eq)]
pub struct CarrierIndex {
    /// Full-image `(row, col)` of each carrier pixel, in raster order.
    coords: Vec<(usize, usize)>,
    grid_width: usize,
}

impl CarrierIndex {
    /// Carrier covering every pixel, for codecs used without a patch.
    pub fn full(width: usize, height: usize) -> Self {
        let coords = (0..height)
            .flat_map(|y| (0..width).map(move |x| (y, x)))
            .collect();
        Self {
            coords,
            grid_width: width,
        }
    }

    pub fn coords(&self) -> &[(usize, usize)] {
        &self.coords
    }

    pub fn len(&self) -> usize {
        self.coords.len()
    }

    pub fn is_empty(&self) -> bool {
        self.coords.is_empty()
    }

    pub fn grid_width(&self) -> usize {
        self.grid_width
    }

    pub fn grid_rows(&self) -> usize {
        self.coords.len().div_ceil(self.grid_width)
    }

    /// Whether the last virtual row is shorter than the grid width.
    pub fn last_row_partial(&self) -> bool {
        !self.coords.len().is_multiple_of(self.grid_width)
    }

    /// Virtual `(row, col)` of carrier position `k`.
    #[inline]
    pub fn grid_pos(&self, k: usize) -> (usize, usize) {
        (k / self.grid_width, k % self.grid_width)
    }

    /// Full-image pixel index (`row * width + col`) of carrier position `k`.
    #[inline]
    pub fn pixel_index(&self, k: usize) -> usize {
        let (y, x) = self.coords[k];
        y * self.grid_width + x
    }
}

pub fn carve_carrier(
    width: usize,
    height: usize,
    bbox: PatchBBox,
) -> Result<CarrierIndex, ImageError> {
    bbox.check(width, height)?;
    if bbox.area() == width * height {
        return Err(ImageError::NoCarrier);
    }
    let mut coords = Vec::with_capacity(width * height - bbox.area());
    for y in 0..height {
        for x in 0..width {
            if !bbox.contains(y, x) {
                coords.push((y, x));
            }
        }
    }
    Ok(CarrierIndex {
        coords,
        grid_width: width,
    })
}
