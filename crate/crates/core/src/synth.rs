//! Seeded synthetic images: smooth colour fields with a few soft blobs and
//! mild noise. Uniform noise has almost no embedding capacity, so these
//! stand in for natural images in tests, benches and toy corpora.

use rand::Rng;

use crate::imagecore::RasterImage;

struct Blob {
    cy: f64,
    cx: f64,
    inv_r2: f64,
    rgb: [f64; 3],
}

pub fn synthetic_image(rng: &mut impl Rng, height: usize, width: usize) -> RasterImage {
    let base: [f64; 3] = std::array::from_fn(|_| rng.gen_range(50.0..200.0));
    let scale = 32.0 / height.max(width) as f64;
    let gy: [f64; 3] = std::array::from_fn(|_| rng.gen_range(-1.5..1.5) * scale);
    let gx: [f64; 3] = std::array::from_fn(|_| rng.gen_range(-1.5..1.5) * scale);
    let blobs: Vec<Blob> = (0..rng.gen_range(1..=3))
        .map(|_| {
            let r = rng.gen_range(0.15..0.4) * height.min(width) as f64;
            Blob {
                cy: rng.gen_range(0.0..height as f64),
                cx: rng.gen_range(0.0..width as f64),
                inv_r2: 1.0 / (r * r),
                rgb: std::array::from_fn(|_| rng.gen_range(-50.0..50.0)),
            }
        })
        .collect();
    let noise = rng.gen_range(0.5..2.5);
    RasterImage::from_fn(height, width, |y, x| {
        let (yf, xf) = (y as f64, x as f64);
        let mut v: [f64; 3] = std::array::from_fn(|c| base[c] + gy[c] * yf + gx[c] * xf);
        for b in &blobs {
            let d2 = (yf - b.cy).powi(2) + (xf - b.cx).powi(2);
            let w = (-d2 * b.inv_r2).exp();
            for (s, d) in v.iter_mut().zip(b.rgb) {
                *s += w * d;
            }
        }
        v.map(|s| {
            (s + rng.gen_range(-noise..=noise))
                .round()
                .clamp(0.0, 255.0) as u8
        })
    })
}
