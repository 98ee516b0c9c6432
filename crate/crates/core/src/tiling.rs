//! Multi-view editing with a tiled depth reference.
//!
//! Four views spread over the input order are tiled 2x2 into a reference.
//! The views are then processed four at a time: each group is tiled, handed
//! to a [`Stylizer`] together with the reference tile, and the result is split
//! back into views. A short final group is padded by repeating its last view;
//! the padding is dropped after untiling.
//!
//! The generative model is abstracted behind [`Stylizer`]. Three mock
//! stylizers are bundled: [`IdentityStylizer`], [`PaletteStylizer`] and
//! [`AdainStylizer`], the last of which recolors every tile toward the
//! reference tile's color statistics.

use std::collections::HashSet;
use std::fmt::Write as _;
use std::path::{Path, PathBuf};

use ndarray::ArrayView2;
use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;
use rayon::prelude::*;

use crate::attention::adain;
use crate::slicing::derive_seed;
use crate::tensors::ImageBuffer;
use crate::{Error, Result};

#[derive(Debug, Clone, PartialEq)]
pub struct View {
    pub id: String,
    pub image: ImageBuffer,
    pub depth: ImageBuffer,
}

/// Ordered views with uniform dimensions and single-channel depth.
#[derive(Debug, Clone, PartialEq)]
pub struct ViewSet {
    views: Vec<View>,
}

impl ViewSet {
    pub fn new(views: Vec<View>) -> Result<Self> {
        let first = views.first().ok_or(Error::Empty("view set"))?;
        let (h, w, c) = (
            first.image.height(),
            first.image.width(),
            first.image.channels(),
        );
        let mut ids = HashSet::new();
        for v in &views {
            if !ids.insert(v.id.as_str()) {
                return Err(Error::InvalidArgument(format!(
                    "duplicate view id {}",
                    v.id
                )));
            }
            if v.depth.channels() != 1 {
                return Err(Error::InvalidArgument(format!(
                    "depth of view {} is not single-channel",
                    v.id
                )));
            }
            if (v.image.height(), v.image.width(), v.image.channels()) != (h, w, c)
                || (v.depth.height(), v.depth.width()) != (h, w)
            {
                return Err(Error::Dimension(format!(
                    "view {} differs in size from {}",
                    v.id, first.id
                )));
            }
        }
        Ok(Self { views })
    }

    pub fn len(&self) -> usize {
        self.views.len()
    }

    pub fn is_empty(&self) -> bool {
        self.views.is_empty()
    }

    pub fn views(&self) -> &[View] {
        &self.views
    }

    pub fn ids(&self) -> Vec<&str> {
        self.views.iter().map(|v| v.id.as_str()).collect()
    }

    /// Reads `<id>.png` images with `<id>.depth.png` depth maps, ordered by id.
    pub fn load_dir(dir: impl AsRef<Path>) -> Result<Self> {
        let dir = dir.as_ref();
        let mut ids = Vec::new();
        for entry in std::fs::read_dir(dir).map_err(|e| Error::io(dir, e))? {
            let name = entry.map_err(|e| Error::io(dir, e))?.file_name();
            let name = name.to_string_lossy();
            if let Some(id) = name.strip_suffix(".png") {
                if !id.ends_with(".depth") {
                    ids.push(id.to_string());
                }
            }
        }
        ids.sort();
        let missing: Vec<String> = ids
            .iter()
            .filter(|id| !depth_path(dir, id).is_file())
            .cloned()
            .collect();
        if !missing.is_empty() {
            return Err(Error::MissingDepth(missing));
        }
        let views = ids
            .into_iter()
            .map(|id| {
                Ok(View {
                    image: ImageBuffer::load_rgb(image_path(dir, &id))?,
                    depth: ImageBuffer::load_gray(depth_path(dir, &id))?,
                    id,
                })
            })
            .collect::<Result<Vec<_>>>()?;
        Self::new(views)
    }
}

pub fn image_path(dir: &Path, id: &str) -> PathBuf {
    dir.join(format!("{id}.png"))
}

pub fn depth_path(dir: &Path, id: &str) -> PathBuf {
    dir.join(format!("{id}.depth.png"))
}

/// Places `a | b` over `c | d`.
pub fn tile_2x2(
    a: &ImageBuffer,
    b: &ImageBuffer,
    c: &ImageBuffer,
    d: &ImageBuffer,
) -> Result<ImageBuffer> {
    if ![b, c, d].iter().all(|x| x.same_shape(a)) {
        return Err(Error::Dimension("tile_2x2 inputs differ in shape".into()));
    }
    let (h, w, ch) = (a.height(), a.width(), a.channels());
    let row = w * ch;
    let mut data = Vec::with_capacity(4 * h * row);
    for (left, right) in [(a, b), (c, d)] {
        for y in 0..h {
            data.extend_from_slice(&left.data()[y * row..(y + 1) * row]);
            data.extend_from_slice(&right.data()[y * row..(y + 1) * row]);
        }
    }
    ImageBuffer::new(2 * h, 2 * w, ch, data)
}

/// Inverse of [`tile_2x2`].
pub fn untile_2x2(t: &ImageBuffer) -> Result<[ImageBuffer; 4]> {
    if !t.height().is_multiple_of(2) || !t.width().is_multiple_of(2) {
        return Err(Error::Dimension(format!(
            "untile_2x2 needs even dims, got {}x{}",
            t.height(),
            t.width()
        )));
    }
    let (h, w, ch) = (t.height() / 2, t.width() / 2, t.channels());
    let quadrant = |oy: usize, ox: usize| {
        let mut data = Vec::with_capacity(h * w * ch);
        for y in 0..h {
            let start = ((oy + y) * t.width() + ox) * ch;
            data.extend_from_slice(&t.data()[start..start + w * ch]);
        }
        ImageBuffer::new(h, w, ch, data)
    };
    Ok([
        quadrant(0, 0)?,
        quadrant(0, w)?,
        quadrant(h, 0)?,
        quadrant(h, w)?,
    ])
}

/// Reference view indices: quartile strides `⌊0⌋, ⌊n/4⌋, ⌊n/2⌋, ⌊3n/4⌋` for
/// `n ≥ 4`; fewer views repeat cyclically (`i mod n`).
pub fn reference_indices(n: usize) -> Result<[usize; 4]> {
    match n {
        0 => Err(Error::Empty("view set")),
        1..=3 => Ok([0, 1 % n, 2 % n, 3 % n]),
        _ => Ok([0, n / 4, n / 2, 3 * n / 4]),
    }
}

/// The four depth maps that make up the reference tile.
pub fn sample_ref_depths(views: &ViewSet) -> Result<[ImageBuffer; 4]> {
    let idx = reference_indices(views.len())?;
    Ok(idx.map(|i| views.views[i].depth.clone()))
}

/// Everything a stylizer sees for one group of four views.
#[derive(Debug, Clone, Copy)]
pub struct StylizeRequest<'a> {
    pub reference_depth: &'a ImageBuffer,
    /// Color tile of the same four reference views.
    pub reference_image: &'a ImageBuffer,
    pub depth_tile: &'a ImageBuffer,
    pub image_tile: &'a ImageBuffer,
    pub prompt: &'a str,
    pub seed: u64,
}

/// Produces a stylized color tile with the dimensions of `image_tile`.
pub trait Stylizer: Sync {
    fn name(&self) -> &str;
    fn stylize(&self, request: &StylizeRequest<'_>) -> Result<ImageBuffer>;
}

/// Returns the color tile unchanged.
#[derive(Debug, Clone, Copy, Default)]
pub struct IdentityStylizer;

impl Stylizer for IdentityStylizer {
    fn name(&self) -> &str {
        "identity"
    }

    fn stylize(&self, request: &StylizeRequest<'_>) -> Result<ImageBuffer> {
        Ok(request.image_tile.clone())
    }
}

/// Maps luminance onto a two-color ramp drawn from `(prompt, seed)`.
#[derive(Debug, Clone, Copy, Default)]
pub struct PaletteStylizer;

impl Stylizer for PaletteStylizer {
    fn name(&self) -> &str {
        "palette"
    }

    fn stylize(&self, request: &StylizeRequest<'_>) -> Result<ImageBuffer> {
        let key = request
            .prompt
            .bytes()
            .fold(0xCBF2_9CE4_8422_2325u64, |h, b| {
                (h ^ u64::from(b)).wrapping_mul(0x100_0000_01B3)
            });
        let mut rng = ChaCha8Rng::seed_from_u64(key ^ request.seed);
        let dark: [f64; 3] = std::array::from_fn(|_| rng.random_range(0.0..0.4));
        let light: [f64; 3] = std::array::from_fn(|_| rng.random_range(0.6..1.0));
        let t = request.image_tile;
        ImageBuffer::from_fn(t.height(), t.width(), 3, |y, x, c| {
            let p = t.pixel(y, x);
            let luma = if p.len() == 3 {
                0.299 * p[0] + 0.587 * p[1] + 0.114 * p[2]
            } else {
                p[0]
            };
            dark[c] + luma * (light[c] - dark[c])
        })
    }
}

/// Recolors the tile with AdaIN against the reference color tile, treating
/// pixels as tokens and color channels as features. Results are clamped to
/// `[0, 1]`.
#[derive(Debug, Clone, Copy, Default)]
pub struct AdainStylizer;

impl Stylizer for AdainStylizer {
    fn name(&self) -> &str {
        "adain"
    }

    fn stylize(&self, request: &StylizeRequest<'_>) -> Result<ImageBuffer> {
        let t = request.image_tile;
        let r = request.reference_image;
        let x = ArrayView2::from_shape((t.pixel_count(), t.channels()), t.data())
            .map_err(|e| Error::Dimension(e.to_string()))?;
        let y = ArrayView2::from_shape((r.pixel_count(), r.channels()), r.data())
            .map_err(|e| Error::Dimension(e.to_string()))?;
        let out = adain(x, y)?;
        let data = out.iter().map(|v| v.clamp(0.0, 1.0)).collect();
        ImageBuffer::new(t.height(), t.width(), t.channels(), data)
    }
}

/// Looks up a bundled stylizer by name.
pub fn stylizer_by_name(name: &str) -> Option<Box<dyn Stylizer>> {
    match name {
        "identity" => Some(Box::new(IdentityStylizer)),
        "palette" => Some(Box::new(PaletteStylizer)),
        "adain" => Some(Box::new(AdainStylizer)),
        _ => None,
    }
}

/// Output of [`run_multiview_edit`].
#[derive(Debug, Clone)]
pub struct MultiViewOutcome {
    /// Stylized images with the original ids and depths, in input order.
    pub views: ViewSet,
    pub reference_depth: ImageBuffer,
    pub reference_image: ImageBuffer,
    /// Stylized tiles, one per group of four (padding included).
    pub tiles: Vec<ImageBuffer>,
}

/// Runs the tiled-reference editing loop over all views.
pub fn run_multiview_edit(
    views: &ViewSet,
    prompt: &str,
    stylizer: &dyn Stylizer,
    seed: u64,
) -> Result<MultiViewOutcome> {
    let ref_idx = reference_indices(views.len())?;
    let pick = |i: usize| &views.views[i];
    let [a, b, c, d] = ref_idx;
    let reference_depth = tile_2x2(
        &pick(a).depth,
        &pick(b).depth,
        &pick(c).depth,
        &pick(d).depth,
    )?;
    let reference_image = tile_2x2(
        &pick(a).image,
        &pick(b).image,
        &pick(c).image,
        &pick(d).image,
    )?;

    let groups: Vec<[usize; 4]> = (0..views.len())
        .step_by(4)
        .map(|start| std::array::from_fn(|j| (start + j).min(views.len() - 1)))
        .collect();

    let tiles = groups
        .par_iter()
        .enumerate()
        .map(|(g, idx)| {
            let [a, b, c, d] = idx.map(pick);
            let depth_tile = tile_2x2(&a.depth, &b.depth, &c.depth, &d.depth)?;
            let image_tile = tile_2x2(&a.image, &b.image, &c.image, &d.image)?;
            let request = StylizeRequest {
                reference_depth: &reference_depth,
                reference_image: &reference_image,
                depth_tile: &depth_tile,
                image_tile: &image_tile,
                prompt,
                seed: derive_seed(seed, g as u64, 0),
            };
            let out = stylizer.stylize(&request)?;
            if !out.same_shape(&image_tile) {
                return Err(Error::Contract(format!(
                    "stylizer {} returned {}x{}x{} for a {}x{}x{} tile",
                    stylizer.name(),
                    out.height(),
                    out.width(),
                    out.channels(),
                    image_tile.height(),
                    image_tile.width(),
                    image_tile.channels()
                )));
            }
            Ok(out)
        })
        .collect::<Result<Vec<_>>>()?;

    let mut out_views = Vec::with_capacity(views.len());
    for (start, tile) in (0..views.len()).step_by(4).zip(&tiles) {
        for (j, image) in untile_2x2(tile)?.into_iter().enumerate() {
            let i = start + j;
            if i >= views.len() {
                break;
            }
            out_views.push(View {
                id: views.views[i].id.clone(),
                image,
                depth: views.views[i].depth.clone(),
            });
        }
    }
    Ok(MultiViewOutcome {
        views: ViewSet::new(out_views)?,
        reference_depth,
        reference_image,
        tiles,
    })
}

/// Writes stylized images as `<id>.png` and a tab-separated `manifest.txt`
/// with lines `view_id  input_path  output_path  prompt  seed`.
pub fn write_outputs(
    outcome: &MultiViewOutcome,
    input_dir: &Path,
    out_dir: &Path,
    prompt: &str,
    seed: u64,
) -> Result<PathBuf> {
    std::fs::create_dir_all(out_dir).map_err(|e| Error::io(out_dir, e))?;
    let mut manifest = String::new();
    for v in outcome.views.views() {
        let out = image_path(out_dir, &v.id);
        v.image.save_png(&out)?;
        let _ = writeln!(
            manifest,
            "{}\t{}\t{}\t{}\t{}",
            v.id,
            image_path(input_dir, &v.id).display(),
            out.display(),
            prompt.replace(['\t', '\n'], " "),
            seed
        );
    }
    let path = out_dir.join("manifest.txt");
    std::fs::write(&path, manifest).map_err(|e| Error::io(&path, e))?;
    Ok(path)
}
