//! Built-in multi-scale feature extractor.
//!
//! Four stages of `conv3x3 (reflect padding, no bias) → leaky ReLU (0.2) →
//! 2x2 average pool` with widths 64/128/256/512. Filters are seeded Gaussian
//! draws orthogonalized with modified Gram-Schmidt, so the network is fixed
//! and deterministic but carries no pretrained knowledge. Each stage exposes
//! two taps: its activation before pooling and after pooling, giving layer ids
//! `1..=8`.
//!
//! The network is piecewise linear in the input, which makes [`Extractor::jvp`]
//! and [`Extractor::backprop`] exact linear maps that are adjoint to each other.
//!
//! Pretrained features can be supplied instead through FMAP files with
//! [`load_external_features`]; those carry no gradient to pixels.

use std::path::Path;

use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;
use rand_distr::StandardNormal;

use crate::swdloss::GradientBuffer;
use crate::tensors::{read_fmap, FeatureMap, ImageBuffer};
use crate::{linalg, Error, Result};

pub const DEFAULT_WIDTHS: [usize; 4] = [64, 128, 256, 512];
pub const DEFAULT_SEED: u64 = 0x5EED_F00D;
pub const LEAKY_SLOPE: f64 = 0.2;
/// Pixel values are centered by this offset before the first convolution.
const INPUT_CENTER: f64 = 0.5;

#[derive(Debug, Clone, PartialEq)]
pub struct ExtractorSpec {
    pub seed: u64,
    pub widths: Vec<usize>,
    pub slope: f64,
}

impl Default for ExtractorSpec {
    fn default() -> Self {
        Self {
            seed: DEFAULT_SEED,
            widths: DEFAULT_WIDTHS.to_vec(),
            slope: LEAKY_SLOPE,
        }
    }
}

impl ExtractorSpec {
    /// Smallest accepted image side: every stage must see at least 2x2 pixels.
    pub fn min_side(&self) -> usize {
        (1usize << self.widths.len()).max(16)
    }

    /// Channel count of each tap, in tap order.
    pub fn tap_channels(&self) -> Vec<usize> {
        self.widths.iter().flat_map(|&w| [w, w]).collect()
    }

    /// Spatial size of each tap for an `height × width` input.
    pub fn tap_shapes(&self, height: usize, width: usize) -> Vec<(usize, usize)> {
        let (mut h, mut w) = (height, width);
        let mut out = Vec::with_capacity(2 * self.widths.len());
        for _ in &self.widths {
            out.push((h, w));
            h /= 2;
            w /= 2;
            out.push((h, w));
        }
        out
    }
}

#[derive(Debug, Clone)]
struct Stage {
    cin: usize,
    cout: usize,
    /// `(9·cin) × cout`, row index `(ky·3 + kx)·cin + ci`.
    weights: Vec<f64>,
}

/// The instantiated network.
#[derive(Debug, Clone)]
pub struct Extractor {
    spec: ExtractorSpec,
    stages: Vec<Stage>,
}

#[derive(Debug, Clone)]
struct StageTape {
    h: usize,
    w: usize,
    /// Pre-activation, `h·w × cout`.
    pre: Vec<f64>,
}

/// Taps plus the activation pattern needed to differentiate them.
#[derive(Debug, Clone)]
pub struct Forward {
    pub taps: Vec<FeatureMap>,
    height: usize,
    width: usize,
    stages: Vec<StageTape>,
}

impl Extractor {
    pub fn new(spec: ExtractorSpec) -> Result<Self> {
        if spec.widths.is_empty() || spec.widths.contains(&0) {
            return Err(Error::InvalidArgument(
                "extractor widths must be non-empty and >= 1".into(),
            ));
        }
        if !(spec.slope > 0.0 && spec.slope.is_finite()) {
            return Err(Error::InvalidArgument(
                "leaky slope must be positive".into(),
            ));
        }
        let mut rng = ChaCha8Rng::seed_from_u64(spec.seed);
        let gain = (2.0 / (1.0 + spec.slope * spec.slope)).sqrt();
        let mut cin = 3;
        let mut stages = Vec::with_capacity(spec.widths.len());
        for &cout in &spec.widths {
            stages.push(Stage {
                cin,
                cout,
                weights: orthogonal(9 * cin, cout, gain, &mut rng),
            });
            cin = cout;
        }
        Ok(Self { spec, stages })
    }

    pub fn spec(&self) -> &ExtractorSpec {
        &self.spec
    }

    fn check_image(&self, img: &ImageBuffer) -> Result<()> {
        if img.channels() != 3 {
            return Err(Error::InvalidArgument(format!(
                "extractor needs an RGB image, got {} channels",
                img.channels()
            )));
        }
        let min = self.spec.min_side();
        if img.height() < min || img.width() < min {
            return Err(Error::InvalidArgument(format!(
                "image {}x{} is smaller than {min}x{min}",
                img.height(),
                img.width()
            )));
        }
        Ok(())
    }

    pub fn extract(&self, img: &ImageBuffer) -> Result<Vec<FeatureMap>> {
        Ok(self.forward(img)?.taps)
    }

    pub fn forward(&self, img: &ImageBuffer) -> Result<Forward> {
        self.check_image(img)?;
        let (mut h, mut w) = (img.height(), img.width());
        let mut act: Vec<f64> = img.data().iter().map(|v| v - INPUT_CENTER).collect();
        let mut taps = Vec::with_capacity(2 * self.stages.len());
        let mut tapes = Vec::with_capacity(self.stages.len());
        for (s, stage) in self.stages.iter().enumerate() {
            let cols = im2col(&act, h, w, stage.cin);
            let pre = linalg::matmul(&cols, &stage.weights, h * w, 9 * stage.cin, stage.cout);
            let post: Vec<f64> = pre.iter().map(|&z| leaky(z, self.spec.slope)).collect();
            let (pooled, ph, pw) = avg_pool(&post, h, w, stage.cout);
            let id = 2 * s as u32;
            taps.push(FeatureMap::new(id + 1, stage.cout, h, w, post)?);
            taps.push(FeatureMap::new(id + 2, stage.cout, ph, pw, pooled.clone())?);
            tapes.push(StageTape { h, w, pre });
            act = pooled;
            h = ph;
            w = pw;
        }
        Ok(Forward {
            taps,
            height: img.height(),
            width: img.width(),
            stages: tapes,
        })
    }

    /// Vector-Jacobian product: `∂(Σ_l ⟨G_l, F_l⟩)/∂img`, returned in image layout.
    pub fn backprop(&self, fwd: &Forward, tap_grads: &[GradientBuffer]) -> Result<Vec<f64>> {
        if tap_grads.len() != fwd.taps.len() {
            return Err(Error::Dimension(format!(
                "{} tap gradients for {} taps",
                tap_grads.len(),
                fwd.taps.len()
            )));
        }
        for (g, t) in tap_grads.iter().zip(&fwd.taps) {
            if !g.matches(t) {
                return Err(Error::Dimension(format!(
                    "gradient for tap {} has the wrong shape",
                    t.layer_id()
                )));
            }
        }
        let slope = self.spec.slope;
        let mut upstream: Option<Vec<f64>> = None;
        for (s, (stage, tape)) in self.stages.iter().zip(&fwd.stages).enumerate().rev() {
            let mut d_pooled = tap_grads[2 * s + 1].data().to_vec();
            if let Some(up) = upstream.take() {
                d_pooled.iter_mut().zip(up).for_each(|(a, b)| *a += b);
            }
            let mut d_act = avg_pool_backward(&d_pooled, tape.h, tape.w, stage.cout);
            d_act
                .iter_mut()
                .zip(tap_grads[2 * s].data())
                .zip(&tape.pre)
                .for_each(|((d, g), &z)| *d = (*d + g) * leaky_slope(z, slope));
            let d_cols = linalg::matmul_bt(
                &d_act,
                &stage.weights,
                tape.h * tape.w,
                stage.cout,
                9 * stage.cin,
            );
            upstream = Some(col2im(&d_cols, tape.h, tape.w, stage.cin));
        }
        Ok(upstream.unwrap_or_else(|| vec![0.0; fwd.height * fwd.width * 3]))
    }

    /// Jacobian-vector product of every tap along image direction `direction`.
    pub fn jvp(&self, img: &ImageBuffer, direction: &[f64]) -> Result<Vec<Vec<f64>>> {
        if direction.len() != img.data().len() {
            return Err(Error::Dimension(
                "direction does not match image size".into(),
            ));
        }
        let fwd = self.forward(img)?;
        let slope = self.spec.slope;
        let mut t = direction.to_vec();
        let mut out = Vec::with_capacity(fwd.taps.len());
        for (stage, tape) in self.stages.iter().zip(&fwd.stages) {
            let cols = im2col(&t, tape.h, tape.w, stage.cin);
            let mut dt = linalg::matmul(
                &cols,
                &stage.weights,
                tape.h * tape.w,
                9 * stage.cin,
                stage.cout,
            );
            dt.iter_mut()
                .zip(&tape.pre)
                .for_each(|(v, &z)| *v *= leaky_slope(z, slope));
            let (pooled, _, _) = avg_pool(&dt, tape.h, tape.w, stage.cout);
            out.push(dt);
            out.push(pooled.clone());
            t = pooled;
        }
        Ok(out)
    }
}

/// Extracts the tap list of `img` under `spec`.
pub fn extract(img: &ImageBuffer, spec: &ExtractorSpec) -> Result<Vec<FeatureMap>> {
    Extractor::new(spec.clone())?.extract(img)
}

/// Image gradient of `Σ_l ⟨G_l, F_l⟩` under `spec`.
pub fn backprop(
    img: &ImageBuffer,
    spec: &ExtractorSpec,
    tap_grads: &[GradientBuffer],
) -> Result<Vec<f64>> {
    let ex = Extractor::new(spec.clone())?;
    let fwd = ex.forward(img)?;
    ex.backprop(&fwd, tap_grads)
}

/// Loads externally exported feature maps. Layer ids must strictly increase.
pub fn load_external_features<P: AsRef<Path>>(paths: &[P]) -> Result<Vec<FeatureMap>> {
    if paths.is_empty() {
        return Err(Error::Empty("no feature files"));
    }
    let maps = paths.iter().map(read_fmap).collect::<Result<Vec<_>>>()?;
    for pair in maps.windows(2) {
        let (a, b) = (pair[0].layer_id(), pair[1].layer_id());
        if a == b {
            return Err(Error::InvalidArgument(format!("duplicate layer_id {a}")));
        }
        if b < a {
            return Err(Error::InvalidArgument(format!(
                "layer_ids out of order: {a} before {b}"
            )));
        }
    }
    Ok(maps)
}

fn leaky(z: f64, slope: f64) -> f64 {
    if z >= 0.0 {
        z
    } else {
        slope * z
    }
}

fn leaky_slope(z: f64, slope: f64) -> f64 {
    if z >= 0.0 {
        1.0
    } else {
        slope
    }
}

fn reflect(i: isize, n: usize) -> usize {
    let n = n as isize;
    let r = if i < 0 {
        -i
    } else if i >= n {
        2 * n - 2 - i
    } else {
        i
    };
    r as usize
}

/// `h·w × 9c` patch matrix with reflect padding.
fn im2col(x: &[f64], h: usize, w: usize, c: usize) -> Vec<f64> {
    let mut cols = Vec::with_capacity(h * w * 9 * c);
    for y in 0..h {
        for xx in 0..w {
            for ky in 0..3 {
                let sy = reflect(y as isize + ky - 1, h);
                for kx in 0..3 {
                    let sx = reflect(xx as isize + kx - 1, w);
                    let at = (sy * w + sx) * c;
                    cols.extend_from_slice(&x[at..at + c]);
                }
            }
        }
    }
    cols
}

/// Adjoint of [`im2col`]: scatter-adds patch gradients back onto pixels.
fn col2im(cols: &[f64], h: usize, w: usize, c: usize) -> Vec<f64> {
    let mut x = vec![0.0; h * w * c];
    let mut row = 0;
    for y in 0..h {
        for xx in 0..w {
            for ky in 0..3 {
                let sy = reflect(y as isize + ky - 1, h);
                for kx in 0..3 {
                    let sx = reflect(xx as isize + kx - 1, w);
                    let at = (sy * w + sx) * c;
                    x[at..at + c]
                        .iter_mut()
                        .zip(&cols[row..row + c])
                        .for_each(|(a, b)| *a += b);
                    row += c;
                }
            }
        }
    }
    x
}

/// 2x2 mean pooling; odd trailing rows/columns are dropped.
fn avg_pool(x: &[f64], h: usize, w: usize, c: usize) -> (Vec<f64>, usize, usize) {
    let (ph, pw) = (h / 2, w / 2);
    let mut out = vec![0.0; ph * pw * c];
    for y in 0..ph {
        for xx in 0..pw {
            let o = (y * pw + xx) * c;
            for (dy, dx) in [(0, 0), (0, 1), (1, 0), (1, 1)] {
                let i = ((2 * y + dy) * w + 2 * xx + dx) * c;
                for ch in 0..c {
                    out[o + ch] += 0.25 * x[i + ch];
                }
            }
        }
    }
    (out, ph, pw)
}

fn avg_pool_backward(d: &[f64], h: usize, w: usize, c: usize) -> Vec<f64> {
    let (ph, pw) = (h / 2, w / 2);
    let mut dx = vec![0.0; h * w * c];
    for y in 0..ph {
        for xx in 0..pw {
            let o = (y * pw + xx) * c;
            for (dy, dxx) in [(0, 0), (0, 1), (1, 0), (1, 1)] {
                let i = ((2 * y + dy) * w + 2 * xx + dxx) * c;
                for ch in 0..c {
                    dx[i + ch] += 0.25 * d[o + ch];
                }
            }
        }
    }
    dx
}

/// Seeded `fan_in × fan_out` matrix with orthonormal columns (or rows, when
/// there are more outputs than inputs), scaled so each output sees a weight
/// vector of squared norm `gain²` on average.
fn orthogonal(fan_in: usize, fan_out: usize, gain: f64, rng: &mut ChaCha8Rng) -> Vec<f64> {
    let (count, len) = if fan_out <= fan_in {
        (fan_out, fan_in)
    } else {
        (fan_in, fan_out)
    };
    // `count` vectors of length `len`, stored contiguously.
    let mut v: Vec<f64> = (0..count * len)
        .map(|_| rng.sample(StandardNormal))
        .collect();
    for i in 0..count {
        let (done, rest) = v.split_at_mut(i * len);
        let cur = &mut rest[..len];
        for j in 0..i {
            let prev = &done[j * len..(j + 1) * len];
            let dot: f64 = prev.iter().zip(cur.iter()).map(|(a, b)| a * b).sum();
            cur.iter_mut().zip(prev).for_each(|(c, p)| *c -= dot * p);
        }
        let norm = cur.iter().map(|x| x * x).sum::<f64>().sqrt();
        cur.iter_mut().for_each(|c| *c /= norm);
    }
    let scale = gain * (fan_out as f64 / fan_in as f64).max(1.0).sqrt();
    let mut out = vec![0.0; fan_in * fan_out];
    for r in 0..fan_in {
        for c in 0..fan_out {
            out[r * fan_out + c] = scale
                * if fan_out <= fan_in {
                    v[c * len + r]
                } else {
                    v[r * len + c]
                };
        }
    }
    out
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::tensors::write_fmap;

    fn small_spec() -> ExtractorSpec {
        ExtractorSpec {
            seed: 3,
            widths: vec![4, 6],
            slope: 0.2,
        }
    }

    fn noise_image(h: usize, w: usize, seed: u64) -> ImageBuffer {
        let mut rng = ChaCha8Rng::seed_from_u64(seed);
        let data = (0..h * w * 3).map(|_| rng.random::<f64>()).collect();
        ImageBuffer::new(h, w, 3, data).unwrap()
    }

    #[test]
    fn orthogonal_columns_are_orthonormal_up_to_gain() {
        let mut rng = ChaCha8Rng::seed_from_u64(1);
        let m = orthogonal(10, 4, 1.0, &mut rng);
        for a in 0..4 {
            for b in 0..4 {
                let dot: f64 = (0..10).map(|r| m[r * 4 + a] * m[r * 4 + b]).sum();
                let expect = if a == b { 1.0 } else { 0.0 };
                assert!((dot - expect).abs() < 1e-12);
            }
        }
    }

    #[test]
    fn constant_image_gives_constant_taps() {
        let ex = Extractor::new(ExtractorSpec::default()).unwrap();
        let img = ImageBuffer::from_fn(16, 16, 3, |_, _, c| 0.2 + 0.3 * c as f64).unwrap();
        for tap in ex.extract(&img).unwrap() {
            let first = tap.row(0).to_vec();
            for m in 0..tap.pixel_count() {
                for (a, b) in tap.row(m).iter().zip(&first) {
                    assert!((a - b).abs() < 1e-12, "tap {} not constant", tap.layer_id());
                }
            }
        }
    }

    #[test]
    fn deterministic_taps() {
        let img = noise_image(16, 16, 2);
        let a = extract(&img, &ExtractorSpec::default()).unwrap();
        let b = extract(&img, &ExtractorSpec::default()).unwrap();
        assert_eq!(a, b);
    }

    #[test]
    fn tap_shapes_halve_per_stage() {
        let img = noise_image(32, 32, 4);
        let spec = ExtractorSpec::default();
        let taps = extract(&img, &spec).unwrap();
        let pre_pool: Vec<usize> = taps.iter().step_by(2).map(|t| t.height()).collect();
        assert_eq!(pre_pool, vec![32, 16, 8, 4]);
        let channels: Vec<usize> = taps.iter().map(|t| t.channels()).collect();
        assert_eq!(channels, spec.tap_channels());
        let shapes: Vec<(usize, usize)> = taps.iter().map(|t| t.spatial()).collect();
        assert_eq!(shapes, spec.tap_shapes(32, 32));
        let ids: Vec<u32> = taps.iter().map(|t| t.layer_id()).collect();
        assert_eq!(ids, (1..=8).collect::<Vec<_>>());
    }

    #[test]
    fn rejects_undersized_and_gray_images() {
        let ex = Extractor::new(ExtractorSpec::default()).unwrap();
        assert!(ex.extract(&noise_image(15, 16, 1)).is_err());
        assert!(ex
            .extract(&ImageBuffer::filled(16, 16, 1, 0.5).unwrap())
            .is_err());
    }

    #[test]
    fn zero_gradients_give_zero_image_gradient() {
        let ex = Extractor::new(small_spec()).unwrap();
        let img = noise_image(16, 16, 5);
        let fwd = ex.forward(&img).unwrap();
        let zeros: Vec<GradientBuffer> = fwd.taps.iter().map(GradientBuffer::zeros_like).collect();
        assert!(ex.backprop(&fwd, &zeros).unwrap().iter().all(|&g| g == 0.0));
    }

    #[test]
    fn one_hot_gradient_stays_in_receptive_field() {
        let ex = Extractor::new(small_spec()).unwrap();
        let img = noise_image(16, 16, 6);
        let fwd = ex.forward(&img).unwrap();
        let mut grads: Vec<GradientBuffer> =
            fwd.taps.iter().map(GradientBuffer::zeros_like).collect();
        // Tap 1 (first conv, pre-pool) at pixel (8, 8), channel 0: 3x3 field.
        grads[0].data_mut()[(8 * 16 + 8) * 4] = 1.0;
        let g = ex.backprop(&fwd, &grads).unwrap();
        for y in 0..16 {
            for x in 0..16 {
                let inside = (7..=9).contains(&y) && (7..=9).contains(&x);
                let mag: f64 = (0..3).map(|c| g[(y * 16 + x) * 3 + c].abs()).sum();
                if !inside {
                    assert_eq!(mag, 0.0, "gradient leaked to ({y}, {x})");
                }
            }
        }
        assert!(g.iter().any(|&v| v != 0.0));
    }

    #[test]
    fn lipschitz_regression_bound() {
        // Measured once over seeds 0..4: worst ratio 1.083. Frozen with margin.
        const BOUND: f64 = 1.5;
        let ex = Extractor::new(ExtractorSpec::default()).unwrap();
        let eps = 1e-3;
        for seed in 0..4 {
            let img = noise_image(16, 16, seed);
            let base = ex.extract(&img).unwrap();
            let mut data = img.data().to_vec();
            let at = (seed as usize * 37) % data.len();
            data[at] = if data[at] > 0.5 {
                data[at] - eps
            } else {
                data[at] + eps
            };
            let moved = ex
                .extract(&ImageBuffer::new(16, 16, 3, data).unwrap())
                .unwrap();
            let worst = base
                .iter()
                .zip(&moved)
                .flat_map(|(a, b)| a.data().iter().zip(b.data()).map(|(x, y)| (x - y).abs()))
                .fold(0.0, f64::max);
            assert!(worst / eps <= BOUND, "seed {seed}: ratio {}", worst / eps);
        }
    }

    #[test]
    fn external_features_are_validated() {
        let dir = tempfile::tempdir().unwrap();
        let write = |name: &str, id: u32| {
            let p = dir.path().join(name);
            write_fmap(&FeatureMap::new(id, 1, 1, 1, vec![0.25]).unwrap(), &p).unwrap();
            p
        };
        let a = write("a.fmap", 1);
        let b = write("b.fmap", 2);
        let dup = write("c.fmap", 2);
        assert_eq!(load_external_features(&[&a]).unwrap().len(), 1);
        assert_eq!(load_external_features(&[&a, &b]).unwrap().len(), 2);
        assert!(load_external_features(&[&b, &a]).is_err());
        assert!(load_external_features(&[&b, &dup]).is_err());
    }
}
