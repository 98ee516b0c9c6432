//! Procedurally generated sample inputs.
//!
//! Everything here is a pure function of its arguments, so the textures are
//! identical on every machine and need no binary assets in the repository.

use std::f64::consts::PI;
use std::path::Path;

use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;

use crate::tensors::{ImageBuffer, RegionMask};
use crate::tiling::{depth_path, image_path, View, ViewSet};
use crate::{Error, Result};

/// Side length of the bundled textures.
pub const SAMPLE_SIZE: usize = 32;

fn smoothstep(t: f64) -> f64 {
    let t = t.clamp(0.0, 1.0);
    t * t * (3.0 - 2.0 * t)
}

/// Soft sky-to-ground gradient with a round blob: a plain "photo".
pub fn content_image(size: usize) -> ImageBuffer {
    let s = size as f64;
    ImageBuffer::from_fn(size, size, 3, |y, x, c| {
        let (fy, fx) = (y as f64 / s, x as f64 / s);
        let sky = [0.55 + 0.25 * fx, 0.7, 0.9 - 0.2 * fy];
        let ground = [0.35, 0.55 - 0.2 * fx, 0.25];
        let t = smoothstep((fy - 0.55) * 6.0);
        let base = sky[c] * (1.0 - t) + ground[c] * t;
        let d = ((fx - 0.35).powi(2) + (fy - 0.4).powi(2)).sqrt();
        let blob = smoothstep((0.18 - d) * 20.0);
        let sun = [0.95, 0.8, 0.3];
        base * (1.0 - blob) + sun[c] * blob
    })
    .expect("valid size")
}

/// High-contrast warm diagonal stripes with jitter.
pub fn style_image(size: usize) -> ImageBuffer {
    let mut rng = ChaCha8Rng::seed_from_u64(0x57_1E01);
    let jitter: Vec<f64> = (0..size * size)
        .map(|_| rng.random_range(-0.08..0.08))
        .collect();
    ImageBuffer::from_fn(size, size, 3, |y, x, c| {
        let phase = (x as f64 + 0.6 * y as f64) * 2.0 * PI / 6.0;
        let t = 0.5 + 0.5 * phase.sin();
        let dark = [0.45, 0.08, 0.1];
        let light = [0.98, 0.75, 0.2];
        dark[c] + t * (light[c] - dark[c]) + jitter[y * size + x]
    })
    .expect("valid size")
}

/// Cool polka dots on a teal ground.
pub fn style2_image(size: usize) -> ImageBuffer {
    let mut rng = ChaCha8Rng::seed_from_u64(0x57_1E02);
    let jitter: Vec<f64> = (0..size * size)
        .map(|_| rng.random_range(-0.05..0.05))
        .collect();
    ImageBuffer::from_fn(size, size, 3, |y, x, c| {
        let (cy, cx) = ((y % 8) as f64 - 3.5, (x % 8) as f64 - 3.5);
        let dot = smoothstep(2.6 - (cy * cy + cx * cx).sqrt());
        let ground = [0.05, 0.35, 0.4];
        let ink = [0.85, 0.9, 1.0];
        ground[c] + dot * (ink[c] - ground[c]) + jitter[y * size + x]
    })
    .expect("valid size")
}

/// Binary mask: label 1 inside the central disc, 0 outside.
pub fn disc_mask(size: usize) -> RegionMask {
    let s = size as f64;
    let labels = (0..size * size)
        .map(|i| {
            let (y, x) = ((i / size) as f64 + 0.5, (i % size) as f64 + 0.5);
            (((y - s / 2.0).powi(2) + (x - s / 2.0).powi(2)).sqrt() < 0.3 * s) as u8
        })
        .collect();
    RegionMask::with_max_label(size, size, labels, 1).expect("valid size")
}

/// Binary mask: label 0 on the left half, 1 on the right.
pub fn split_mask(size: usize) -> RegionMask {
    let labels = (0..size * size)
        .map(|i| (i % size >= size / 2) as u8)
        .collect();
    RegionMask::with_max_label(size, size, labels, 1).expect("valid size")
}

/// `n` views of a small synthetic scene orbiting a tilted plane, with depth.
pub fn views(n: usize, size: usize) -> Result<ViewSet> {
    let s = size as f64;
    let out = (0..n)
        .map(|v| {
            let angle = v as f64 * 2.0 * PI / n.max(1) as f64;
            let (sa, ca) = angle.sin_cos();
            let image = ImageBuffer::from_fn(size, size, 3, |y, x, c| {
                let u = x as f64 / s - 0.5;
                let w = y as f64 / s - 0.5;
                let (ru, rw) = (u * ca - w * sa, u * sa + w * ca);
                let check = ((ru * 6.0).floor() + (rw * 6.0).floor()).rem_euclid(2.0);
                let tint = [0.8, 0.5 + 0.3 * sa, 0.3 + 0.3 * ca];
                0.15 + 0.7 * check * tint[c] + 0.1 * (c as f64) * (1.0 - check)
            })?;
            let depth = ImageBuffer::from_fn(size, size, 1, |y, x, _| {
                let u = x as f64 / s - 0.5;
                let w = y as f64 / s - 0.5;
                0.5 + 0.4 * (u * ca + w * sa)
            })?;
            Ok(View {
                id: format!("view{v:03}"),
                image,
                depth,
            })
        })
        .collect::<Result<Vec<_>>>()?;
    ViewSet::new(out)
}

/// Writes the bundled inputs into `dir`:
/// `content.png`, `style.png`, `style2.png`, `mask.png` (disc),
/// `split_mask.png`, and a `views/` directory with five views.
pub fn write_samples(dir: impl AsRef<Path>) -> Result<()> {
    let dir = dir.as_ref();
    std::fs::create_dir_all(dir).map_err(|e| Error::io(dir, e))?;
    content_image(SAMPLE_SIZE).save_png(dir.join("content.png"))?;
    style_image(SAMPLE_SIZE).save_png(dir.join("style.png"))?;
    style2_image(SAMPLE_SIZE).save_png(dir.join("style2.png"))?;
    disc_mask(SAMPLE_SIZE).save_png(dir.join("mask.png"))?;
    split_mask(SAMPLE_SIZE).save_png(dir.join("split_mask.png"))?;
    let vdir = dir.join("views");
    std::fs::create_dir_all(&vdir).map_err(|e| Error::io(&vdir, e))?;
    for v in views(5, SAMPLE_SIZE)?.views() {
        v.image.save_png(image_path(&vdir, &v.id))?;
        v.depth.save_png(depth_path(&vdir, &v.id))?;
    }
    Ok(())
}
