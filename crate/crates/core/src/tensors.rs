//! Numeric containers and their on-disk formats.
//!
//! Everything is held in 64-bit floats in memory. The FMAP feature format
//! persists 32-bit floats:
//!
//! ```text
//! offset  size        content
//! 0       8           magic "FMAPv001"
//! 8       4           rank (u32 LE, always 4)
//! 12      16          dims (u32 LE each): layer_id, channels, height, width
//! 28      4·h·w·c     f32 LE values, pixel-major, channel-minor
//! ```

use std::path::Path;

use image::{DynamicImage, GrayImage, ImageReader, RgbImage};

use crate::{Error, Result};

pub const FMAP_MAGIC: &[u8; 8] = b"FMAPv001";
const FMAP_MAGIC_PREFIX: &[u8; 5] = b"FMAPv";
const FMAP_RANK: u32 = 4;
const FMAP_HEADER_LEN: usize = 8 + 4 + 4 * FMAP_RANK as usize;

/// A row-major, channel-interleaved image with values in `[0, 1]`.
#[derive(Debug, Clone, PartialEq)]
pub struct ImageBuffer {
    height: usize,
    width: usize,
    channels: usize,
    data: Vec<f64>,
}

impl ImageBuffer {
    pub fn new(height: usize, width: usize, channels: usize, data: Vec<f64>) -> Result<Self> {
        if channels != 1 && channels != 3 {
            return Err(Error::InvalidArgument(format!(
                "image must have 1 or 3 channels, got {channels}"
            )));
        }
        if height == 0 || width == 0 {
            return Err(Error::Empty("image has a zero dimension"));
        }
        if data.len() != height * width * channels {
            return Err(Error::Dimension(format!(
                "image data length {} != {height}x{width}x{channels}",
                data.len()
            )));
        }
        if data.iter().any(|v| !v.is_finite()) {
            return Err(Error::NonFinite("image data"));
        }
        if data.iter().any(|v| !(0.0..=1.0).contains(v)) {
            return Err(Error::InvalidArgument(
                "image values must lie in [0, 1]".into(),
            ));
        }
        Ok(Self {
            height,
            width,
            channels,
            data,
        })
    }

    /// Builds an image by evaluating `f(y, x, c)`; values are clamped to `[0, 1]`.
    pub fn from_fn(
        height: usize,
        width: usize,
        channels: usize,
        f: impl Fn(usize, usize, usize) -> f64,
    ) -> Result<Self> {
        let mut data = Vec::with_capacity(height * width * channels);
        for y in 0..height {
            for x in 0..width {
                for c in 0..channels {
                    data.push(f(y, x, c).clamp(0.0, 1.0));
                }
            }
        }
        Self::new(height, width, channels, data)
    }

    pub fn filled(height: usize, width: usize, channels: usize, value: f64) -> Result<Self> {
        Self::new(
            height,
            width,
            channels,
            vec![value; height * width * channels],
        )
    }

    pub fn height(&self) -> usize {
        self.height
    }

    pub fn width(&self) -> usize {
        self.width
    }

    pub fn channels(&self) -> usize {
        self.channels
    }

    pub fn pixel_count(&self) -> usize {
        self.height * self.width
    }

    pub fn data(&self) -> &[f64] {
        &self.data
    }

    pub fn into_data(self) -> Vec<f64> {
        self.data
    }

    pub fn get(&self, y: usize, x: usize, c: usize) -> f64 {
        self.data[(y * self.width + x) * self.channels + c]
    }

    pub fn pixel(&self, y: usize, x: usize) -> &[f64] {
        let start = (y * self.width + x) * self.channels;
        &self.data[start..start + self.channels]
    }

    pub fn same_shape(&self, other: &ImageBuffer) -> bool {
        self.height == other.height && self.width == other.width && self.channels == other.channels
    }

    /// Per-channel mean and population standard deviation.
    pub fn channel_stats(&self) -> Vec<(f64, f64)> {
        let n = self.pixel_count() as f64;
        (0..self.channels)
            .map(|c| {
                let mean = self.data.iter().skip(c).step_by(self.channels).sum::<f64>() / n;
                let var = self
                    .data
                    .iter()
                    .skip(c)
                    .step_by(self.channels)
                    .map(|v| (v - mean).powi(2))
                    .sum::<f64>()
                    / n;
                (mean, var.sqrt())
            })
            .collect()
    }

    /// Raw colors as a layer-0 feature map. Values are copied exactly.
    pub fn to_feature_map(&self) -> FeatureMap {
        FeatureMap {
            layer_id: 0,
            channels: self.channels,
            height: self.height,
            width: self.width,
            data: self.data.clone(),
        }
    }

    pub fn from_feature_map(map: &FeatureMap) -> Result<Self> {
        Self::new(map.height, map.width, map.channels, map.data.clone())
    }

    /// Loads any 8-bit image as RGB.
    pub fn load_rgb(path: impl AsRef<Path>) -> Result<Self> {
        let img = decode(path.as_ref())?.to_rgb8();
        let (w, h) = img.dimensions();
        let data = img.into_raw().into_iter().map(from_u8).collect();
        Self::new(h as usize, w as usize, 3, data)
    }

    /// Loads any 8-bit image as a single-channel (luma) buffer, e.g. a depth map.
    pub fn load_gray(path: impl AsRef<Path>) -> Result<Self> {
        let img = decode(path.as_ref())?.to_luma8();
        let (w, h) = img.dimensions();
        let data = img.into_raw().into_iter().map(from_u8).collect();
        Self::new(h as usize, w as usize, 1, data)
    }

    /// Quantizes to 8 bits per channel. Round-trips exactly for images loaded from 8-bit files.
    pub fn to_u8(&self) -> Vec<u8> {
        self.data.iter().map(|&v| to_u8(v)).collect()
    }

    pub fn save_png(&self, path: impl AsRef<Path>) -> Result<()> {
        let path = path.as_ref();
        let (w, h) = (self.width as u32, self.height as u32);
        let bytes = self.to_u8();
        let result = if self.channels == 3 {
            RgbImage::from_raw(w, h, bytes)
                .expect("buffer length checked at construction")
                .save_with_format(path, image::ImageFormat::Png)
        } else {
            GrayImage::from_raw(w, h, bytes)
                .expect("buffer length checked at construction")
                .save_with_format(path, image::ImageFormat::Png)
        };
        result.map_err(|e| Error::image(path, e))
    }
}

fn from_u8(v: u8) -> f64 {
    f64::from(v) / 255.0
}

fn to_u8(v: f64) -> u8 {
    (v.clamp(0.0, 1.0) * 255.0).round() as u8
}

fn decode(path: &Path) -> Result<DynamicImage> {
    ImageReader::open(path)
        .map_err(|e| Error::io(path, e))?
        .with_guessed_format()
        .map_err(|e| Error::io(path, e))?
        .decode()
        .map_err(|e| Error::image(path, e))
}

/// Feature vectors of one layer: `pixel_count` rows of `channels` values.
#[derive(Debug, Clone, PartialEq)]
pub struct FeatureMap {
    layer_id: u32,
    channels: usize,
    height: usize,
    width: usize,
    data: Vec<f64>,
}

impl FeatureMap {
    pub fn new(
        layer_id: u32,
        channels: usize,
        height: usize,
        width: usize,
        data: Vec<f64>,
    ) -> Result<Self> {
        if channels == 0 || height == 0 || width == 0 {
            return Err(Error::Empty("feature map has a zero dimension"));
        }
        if data.len() != channels * height * width {
            return Err(Error::Dimension(format!(
                "feature data length {} != {height}x{width}x{channels}",
                data.len()
            )));
        }
        if data.iter().any(|v| !v.is_finite()) {
            return Err(Error::NonFinite("feature map"));
        }
        Ok(Self {
            layer_id,
            channels,
            height,
            width,
            data,
        })
    }

    /// A map with no spatial structure: `rows` pixels laid out as `rows×1`.
    pub fn from_rows(layer_id: u32, channels: usize, data: Vec<f64>) -> Result<Self> {
        if channels == 0 {
            return Err(Error::Empty("feature map has zero channels"));
        }
        let rows = data.len() / channels;
        Self::new(layer_id, channels, rows, 1, data)
    }

    pub fn layer_id(&self) -> u32 {
        self.layer_id
    }

    pub fn channels(&self) -> usize {
        self.channels
    }

    pub fn height(&self) -> usize {
        self.height
    }

    pub fn width(&self) -> usize {
        self.width
    }

    pub fn spatial(&self) -> (usize, usize) {
        (self.height, self.width)
    }

    pub fn pixel_count(&self) -> usize {
        self.height * self.width
    }

    pub fn data(&self) -> &[f64] {
        &self.data
    }

    pub fn row(&self, m: usize) -> &[f64] {
        &self.data[m * self.channels..(m + 1) * self.channels]
    }

    pub fn same_shape(&self, other: &FeatureMap) -> bool {
        self.channels == other.channels && self.height == other.height && self.width == other.width
    }

    pub fn with_layer_id(mut self, layer_id: u32) -> Self {
        self.layer_id = layer_id;
        self
    }

    /// Serializes to FMAP bytes.
    pub fn to_fmap_bytes(&self) -> Result<Vec<u8>> {
        let dims = [
            self.layer_id,
            dim_u32(self.channels)?,
            dim_u32(self.height)?,
            dim_u32(self.width)?,
        ];
        let mut out = Vec::with_capacity(FMAP_HEADER_LEN + 4 * self.data.len());
        out.extend_from_slice(FMAP_MAGIC);
        out.extend_from_slice(&FMAP_RANK.to_le_bytes());
        for d in dims {
            out.extend_from_slice(&d.to_le_bytes());
        }
        for &v in &self.data {
            let v32 = v as f32;
            if !v32.is_finite() {
                return Err(Error::NonFinite("feature map (value overflows f32)"));
            }
            out.extend_from_slice(&v32.to_le_bytes());
        }
        Ok(out)
    }

    pub fn from_fmap_bytes(bytes: &[u8]) -> Result<Self> {
        if bytes.len() < 8 {
            return Err(Error::Format("file shorter than FMAP magic".into()));
        }
        let magic = &bytes[..8];
        if magic != FMAP_MAGIC {
            if magic.starts_with(FMAP_MAGIC_PREFIX) {
                return Err(Error::Version {
                    found: String::from_utf8_lossy(magic).into_owned(),
                });
            }
            return Err(Error::Format("bad FMAP magic".into()));
        }
        if bytes.len() < FMAP_HEADER_LEN {
            return Err(Error::Format("truncated FMAP header".into()));
        }
        let word = |i: usize| {
            let at = 8 + 4 * i;
            u32::from_le_bytes(bytes[at..at + 4].try_into().expect("4-byte slice"))
        };
        let rank = word(0);
        if rank != FMAP_RANK {
            return Err(Error::Format(format!("FMAP rank {rank}, expected 4")));
        }
        let (layer_id, channels, height, width) = (
            word(1),
            word(2) as usize,
            word(3) as usize,
            word(4) as usize,
        );
        let count = channels
            .checked_mul(height)
            .and_then(|v| v.checked_mul(width))
            .ok_or_else(|| Error::Format("FMAP dims overflow".into()))?;
        let payload = &bytes[FMAP_HEADER_LEN..];
        if payload.len() < 4 * count {
            return Err(Error::Format(format!(
                "truncated FMAP payload: {} bytes for {count} values",
                payload.len()
            )));
        }
        if payload.len() != 4 * count {
            return Err(Error::Format(format!(
                "FMAP payload of {} bytes inconsistent with dims ({count} values)",
                payload.len()
            )));
        }
        let data = payload
            .chunks_exact(4)
            .map(|c| f64::from(f32::from_le_bytes(c.try_into().expect("4-byte chunk"))))
            .collect();
        Self::new(layer_id, channels, height, width, data).map_err(|e| match e {
            Error::Empty(_) => Error::Format("FMAP has a zero dimension".into()),
            Error::NonFinite(_) => Error::Format("FMAP contains non-finite values".into()),
            other => other,
        })
    }
}

fn dim_u32(v: usize) -> Result<u32> {
    u32::try_from(v).map_err(|_| Error::Dimension(format!("dimension {v} exceeds u32")))
}

/// Writes a feature map as FMAP. Values are narrowed to `f32`.
pub fn write_fmap(map: &FeatureMap, path: impl AsRef<Path>) -> Result<()> {
    let path = path.as_ref();
    let bytes = map.to_fmap_bytes()?;
    std::fs::write(path, bytes).map_err(|e| Error::io(path, e))
}

pub fn read_fmap(path: impl AsRef<Path>) -> Result<FeatureMap> {
    let path = path.as_ref();
    let bytes = std::fs::read(path).map_err(|e| Error::io(path, e))?;
    FeatureMap::from_fmap_bytes(&bytes)
}

/// Per-pixel categorical labels. `max_label` is the `K` of a `K`-categorical mask.
#[derive(Debug, Clone, PartialEq, Eq)]
pub struct RegionMask {
    height: usize,
    width: usize,
    labels: Vec<u8>,
    max_label: u8,
}

impl RegionMask {
    /// `K` is taken as the largest label present.
    pub fn new(height: usize, width: usize, labels: Vec<u8>) -> Result<Self> {
        let max_label = labels.iter().copied().max().unwrap_or(0);
        Self::with_max_label(height, width, labels, max_label)
    }

    pub fn with_max_label(
        height: usize,
        width: usize,
        labels: Vec<u8>,
        max_label: u8,
    ) -> Result<Self> {
        if height == 0 || width == 0 {
            return Err(Error::Empty("mask has a zero dimension"));
        }
        if labels.len() != height * width {
            return Err(Error::Dimension(format!(
                "mask length {} != {height}x{width}",
                labels.len()
            )));
        }
        if let Some(&bad) = labels.iter().find(|&&l| l > max_label) {
            return Err(Error::Mask(format!("label {bad} exceeds K = {max_label}")));
        }
        Ok(Self {
            height,
            width,
            labels,
            max_label,
        })
    }

    pub fn uniform(height: usize, width: usize, label: u8) -> Result<Self> {
        Self::new(height, width, vec![label; height * width])
    }

    pub fn height(&self) -> usize {
        self.height
    }

    pub fn width(&self) -> usize {
        self.width
    }

    pub fn labels(&self) -> &[u8] {
        &self.labels
    }

    pub fn max_label(&self) -> u8 {
        self.max_label
    }

    pub fn label(&self, y: usize, x: usize) -> u8 {
        self.labels[y * self.width + x]
    }

    /// Sorted distinct labels present in the mask.
    pub fn present_labels(&self) -> Vec<u8> {
        let mut seen = [false; 256];
        for &l in &self.labels {
            seen[l as usize] = true;
        }
        (0..=255u8).filter(|&l| seen[l as usize]).collect()
    }

    pub fn save_png(&self, path: impl AsRef<Path>) -> Result<()> {
        let path = path.as_ref();
        GrayImage::from_raw(self.width as u32, self.height as u32, self.labels.clone())
            .expect("length checked at construction")
            .save_with_format(path, image::ImageFormat::Png)
            .map_err(|e| Error::image(path, e))
    }
}

/// Loads an 8-bit single-channel PNG/PGM; pixel value `v` becomes label `v`.
pub fn load_mask(path: impl AsRef<Path>) -> Result<RegionMask> {
    let path = path.as_ref();
    match decode(path)? {
        DynamicImage::ImageLuma8(img) => {
            let (w, h) = img.dimensions();
            RegionMask::new(h as usize, w as usize, img.into_raw())
        }
        other => Err(Error::Format(format!(
            "mask {} must be 8-bit single-channel, got {:?}",
            path.display(),
            other.color()
        ))),
    }
}

/// Nearest-neighbour resampling of labels to `target = (height, width)`.
///
/// Output pixel `(y, x)` takes the label of the source pixel containing its
/// center, `floor((2y + 1)·H / 2h)`. `K` is inherited from the input.
pub fn downsample_mask(mask: &RegionMask, target: (usize, usize)) -> Result<RegionMask> {
    let (th, tw) = target;
    if th == 0 || tw == 0 {
        return Err(Error::InvalidArgument("zero target mask dims".into()));
    }
    if th > mask.height || tw > mask.width {
        return Err(Error::InvalidArgument(format!(
            "cannot downsample {}x{} mask to larger {th}x{tw}",
            mask.height, mask.width
        )));
    }
    let mut labels = Vec::with_capacity(th * tw);
    for y in 0..th {
        let sy = ((2 * y + 1) * mask.height) / (2 * th);
        for x in 0..tw {
            let sx = ((2 * x + 1) * mask.width) / (2 * tw);
            labels.push(mask.label(sy, sx));
        }
    }
    RegionMask::with_max_label(th, tw, labels, mask.max_label)
}

/// Per-projection diagnostic of a sliced loss.
#[derive(Debug, Clone, Copy, PartialEq)]
pub struct ProjectionStat {
    pub distance: f64,
    pub weight: f64,
}

#[derive(Debug, Clone, PartialEq)]
pub struct LayerLoss {
    pub layer_id: u32,
    pub value: f64,
    pub projections: Vec<ProjectionStat>,
}

/// Scalar loss with its per-layer and per-projection breakdown.
///
/// `total` is the sum of the per-layer style values plus `content`.
#[derive(Debug, Clone, PartialEq, Default)]
pub struct LossReport {
    pub total: f64,
    pub per_layer: Vec<LayerLoss>,
    pub content: f64,
}

impl LossReport {
    pub fn style_total(&self) -> f64 {
        self.per_layer.iter().map(|l| l.value).sum()
    }
}
