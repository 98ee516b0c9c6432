//! Pixel-space stylization by adaptive-moment gradient descent.
//!
//! Each iteration extracts features from the current image, evaluates the
//! (multi-region, optionally importance-weighted) sliced loss against cached
//! style features plus the content term, backpropagates to pixels and takes
//! one Adam step followed by clamping to `[0, 1]`.
//!
//! Region routing:
//!
//! | content mask | styles | style mask | targets |
//! |---|---|---|---|
//! | no | 1 | no | whole image against the style |
//! | yes | 1 | yes | region `k` against style region `k` |
//! | yes | 1 | no | every active region against the whole style |
//! | yes | n ≥ 2 | no | `i`-th active label (ascending) against style `i` |
//!
//! Active labels are those present in the content mask other than the
//! excluded one. Pixels carrying the excluded label receive no update.

use std::fmt::Write as _;
use std::io::Write as _;
use std::path::Path;
use std::time::Instant;

use crate::features::{Extractor, ExtractorSpec};
use crate::slicing::{derive_seed, sample_projections};
use crate::swdloss::{
    content_loss, gather_rows, sliced_loss, GradientBuffer, LayerPlan, LossConfig, RegionPair,
    WeightGradient, WeightMode,
};
use crate::tensors::{downsample_mask, FeatureMap, ImageBuffer, RegionMask};
use crate::{Error, Result};

pub const DEFAULT_ITERATIONS: usize = 1000;
pub const DEFAULT_LEARNING_RATE: f64 = 0.02;
pub const DEFAULT_BETAS: (f64, f64) = (0.9, 0.999);
pub const ADAM_EPS: f64 = 1e-8;
pub const DEFAULT_JOB_SEED: u64 = 0x5717_1E00;

#[derive(Debug, Clone)]
pub struct StylizeJob {
    pub content: ImageBuffer,
    pub styles: Vec<ImageBuffer>,
    pub content_mask: Option<RegionMask>,
    pub style_mask: Option<RegionMask>,
    pub loss: LossConfig,
    pub iterations: usize,
    pub learning_rate: f64,
    pub betas: (f64, f64),
    pub seed: u64,
    /// Keep a copy of the image every this many iterations.
    pub snapshot_every: Option<usize>,
    /// Keep the images produced by the last this many iterations.
    pub keep_last: usize,
    pub extractor: ExtractorSpec,
}

impl StylizeJob {
    pub fn new(content: ImageBuffer, style: ImageBuffer) -> Self {
        Self {
            content,
            styles: vec![style],
            content_mask: None,
            style_mask: None,
            loss: LossConfig::default(),
            iterations: DEFAULT_ITERATIONS,
            learning_rate: DEFAULT_LEARNING_RATE,
            betas: DEFAULT_BETAS,
            seed: DEFAULT_JOB_SEED,
            snapshot_every: None,
            keep_last: 0,
            extractor: ExtractorSpec::default(),
        }
    }

    fn validate(&self) -> Result<()> {
        self.loss.validate()?;
        if self.iterations == 0 {
            return Err(Error::InvalidArgument("iterations must be >= 1".into()));
        }
        if !(self.learning_rate > 0.0 && self.learning_rate.is_finite()) {
            return Err(Error::InvalidArgument(format!(
                "bad learning rate {}",
                self.learning_rate
            )));
        }
        let (b1, b2) = self.betas;
        if !((0.0..1.0).contains(&b1) && (0.0..1.0).contains(&b2)) {
            return Err(Error::InvalidArgument(format!(
                "moments must lie in [0, 1), got {b1}, {b2}"
            )));
        }
        if self.styles.is_empty() {
            return Err(Error::Empty("style images"));
        }
        for img in std::iter::once(&self.content).chain(&self.styles) {
            if img.channels() != 3 {
                return Err(Error::InvalidArgument(
                    "stylization needs RGB images".into(),
                ));
            }
        }
        if let Some(m) = &self.content_mask {
            if (m.height(), m.width()) != (self.content.height(), self.content.width()) {
                return Err(Error::Mask(format!(
                    "content mask is {}x{}, content image {}x{}",
                    m.height(),
                    m.width(),
                    self.content.height(),
                    self.content.width()
                )));
            }
        }
        if let Some(m) = &self.style_mask {
            let s = &self.styles[0];
            if self.content_mask.is_none() {
                return Err(Error::Mask("a style mask needs a content mask".into()));
            }
            if self.styles.len() > 1 {
                return Err(Error::Mask(
                    "a style mask cannot be combined with several styles".into(),
                ));
            }
            if (m.height(), m.width()) != (s.height(), s.width()) {
                return Err(Error::Mask(format!(
                    "style mask is {}x{}, style image {}x{}",
                    m.height(),
                    m.width(),
                    s.height(),
                    s.width()
                )));
            }
        }
        if self.content_mask.is_none() {
            if self.styles.len() > 1 {
                return Err(Error::Mask(format!(
                    "{} styles given without a mask to assign them",
                    self.styles.len()
                )));
            }
            if self.loss.exclude_label.is_some() {
                return Err(Error::Mask("an excluded label needs a content mask".into()));
            }
        }
        Ok(())
    }
}

/// One row of a [`RunTrace`].
#[derive(Debug, Clone, PartialEq)]
pub struct TraceRow {
    pub iteration: usize,
    pub total: f64,
    pub per_layer: Vec<f64>,
    pub content: f64,
    /// Wall-clock time of the whole iteration.
    pub ms: f64,
    /// Wall-clock time of the style loss alone (direction sampling included).
    pub loss_ms: f64,
}

#[derive(Debug, Clone, PartialEq, Default)]
pub struct RunTrace {
    pub layer_ids: Vec<u32>,
    pub rows: Vec<TraceRow>,
}

impl RunTrace {
    pub fn header(&self) -> String {
        let mut h = String::from("iteration,total");
        for id in &self.layer_ids {
            let _ = write!(h, ",layer{id}");
        }
        h.push_str(",ms");
        h
    }

    /// CSV text with header `iteration,total,layer<id>...,ms`.
    pub fn to_csv(&self) -> String {
        let mut out = self.header();
        out.push('\n');
        for r in &self.rows {
            let _ = write!(out, "{},{}", r.iteration, fmt_g9(r.total));
            for v in &r.per_layer {
                let _ = write!(out, ",{}", fmt_g9(*v));
            }
            let _ = writeln!(out, ",{:.3}", r.ms);
        }
        out
    }

    pub fn write_csv(&self, path: impl AsRef<Path>) -> Result<()> {
        let path = path.as_ref();
        let mut f = std::fs::File::create(path).map_err(|e| Error::io(path, e))?;
        f.write_all(self.to_csv().as_bytes())
            .map_err(|e| Error::io(path, e))
    }

    pub fn mean_loss_ms(&self) -> f64 {
        self.rows.iter().map(|r| r.loss_ms).sum::<f64>() / self.rows.len().max(1) as f64
    }

    pub fn mean_ms(&self) -> f64 {
        self.rows.iter().map(|r| r.ms).sum::<f64>() / self.rows.len().max(1) as f64
    }
}

/// Formats with 9 significant digits, dropping trailing zeros.
pub fn fmt_g9(v: f64) -> String {
    if v == 0.0 {
        return "0".into();
    }
    if !v.is_finite() {
        return v.to_string();
    }
    let exp = v.abs().log10().floor() as i32;
    if (-5..9).contains(&exp) {
        let decimals = (8 - exp).max(0) as usize;
        let s = format!("{v:.decimals$}");
        if s.contains('.') {
            s.trim_end_matches('0').trim_end_matches('.').to_string()
        } else {
            s
        }
    } else {
        let s = format!("{v:.8e}");
        let (mantissa, e) = s.split_once('e').expect("exponent");
        let mantissa = if mantissa.contains('.') {
            mantissa.trim_end_matches('0').trim_end_matches('.')
        } else {
            mantissa
        };
        format!("{mantissa}e{e}")
    }
}

#[derive(Debug, Clone)]
pub struct RunOutcome {
    pub image: ImageBuffer,
    pub trace: RunTrace,
    pub snapshots: Vec<(usize, ImageBuffer)>,
    /// The last `keep_last` iterates, oldest first; the final image is last.
    pub tail: Vec<ImageBuffer>,
}

/// Per-layer region plans; `None` where no region survives downsampling.
type Plans = Vec<Option<LayerPlan>>;

/// Active content labels in ascending order.
fn active_labels(mask: &RegionMask, exclude: Option<u8>) -> Vec<u8> {
    mask.present_labels()
        .into_iter()
        .filter(|&l| Some(l) != exclude)
        .collect()
}

/// Resolves which style rows every active content region is matched against,
/// validating label consistency at full resolution.
fn build_plans(
    job: &StylizeJob,
    taps: &[FeatureMap],
    style_taps: &[Vec<FeatureMap>],
) -> Result<Plans> {
    let exclude = job.loss.exclude_label;
    let Some(cmask) = &job.content_mask else {
        return Ok(taps
            .iter()
            .zip(&style_taps[0])
            .map(|(s, t)| Some(LayerPlan::global(s.pixel_count(), t)))
            .collect());
    };
    let labels = active_labels(cmask, exclude);
    if labels.is_empty() {
        return Err(Error::Mask("content mask has no active region".into()));
    }
    // (content label, style index, style-side label filter)
    let routes: Vec<(u8, usize, Option<u8>)> = if job.styles.len() > 1 {
        if labels.len() != job.styles.len() {
            return Err(Error::Mask(format!(
                "{} styles for {} active mask regions (labels {:?})",
                job.styles.len(),
                labels.len(),
                labels
            )));
        }
        labels
            .iter()
            .enumerate()
            .map(|(i, &l)| (l, i, None))
            .collect()
    } else if let Some(smask) = &job.style_mask {
        let present = smask.present_labels();
        let missing: Vec<u8> = labels
            .iter()
            .copied()
            .filter(|l| !present.contains(l))
            .collect();
        if !missing.is_empty() {
            return Err(Error::Mask(format!(
                "labels {missing:?} are absent from the style mask"
            )));
        }
        labels.iter().map(|&l| (l, 0, Some(l))).collect()
    } else {
        labels.iter().map(|&l| (l, 0, None)).collect()
    };

    let mut plans = Vec::with_capacity(taps.len());
    for (layer, tap) in taps.iter().enumerate() {
        let clabels = downsample_mask(cmask, tap.spatial())?;
        let mut regions = Vec::new();
        for &(label, style, style_label) in &routes {
            let target_map = &style_taps[style][layer];
            let source_pixels: Vec<usize> = clabels
                .labels()
                .iter()
                .enumerate()
                .filter(|(_, &l)| l == label)
                .map(|(m, _)| m)
                .collect();
            let target = match (style_label, &job.style_mask) {
                (Some(sl), Some(smask)) => {
                    let slabels = downsample_mask(smask, target_map.spatial())?;
                    gather_rows(target_map, slabels.labels(), sl)
                }
                _ => target_map.data().to_vec(),
            };
            if !source_pixels.is_empty() && !target.is_empty() {
                regions.push(RegionPair {
                    label,
                    source_pixels,
                    target,
                });
            }
        }
        plans.push(if regions.is_empty() {
            None
        } else {
            Some(LayerPlan::from_regions(
                tap.channels(),
                tap.pixel_count(),
                regions,
            )?)
        });
    }
    Ok(plans)
}

/// Per-pixel update mask (false where the label is excluded), in image layout.
fn frozen_pixels(job: &StylizeJob) -> Option<Vec<bool>> {
    let mask = job.content_mask.as_ref()?;
    let ex = job.loss.exclude_label?;
    let c = job.content.channels();
    Some(
        mask.labels()
            .iter()
            .flat_map(|&l| std::iter::repeat_n(l == ex, c))
            .collect(),
    )
}

struct Adam {
    lr: f64,
    b1: f64,
    b2: f64,
    t: i32,
    m: Vec<f64>,
    v: Vec<f64>,
}

impl Adam {
    fn new(n: usize, lr: f64, (b1, b2): (f64, f64)) -> Self {
        Self {
            lr,
            b1,
            b2,
            t: 0,
            m: vec![0.0; n],
            v: vec![0.0; n],
        }
    }

    fn step(&mut self, x: &mut [f64], g: &[f64]) {
        self.t += 1;
        let c1 = 1.0 - self.b1.powi(self.t);
        let c2 = 1.0 - self.b2.powi(self.t);
        for (((x, &g), m), v) in x.iter_mut().zip(g).zip(&mut self.m).zip(&mut self.v) {
            *m = self.b1 * *m + (1.0 - self.b1) * g;
            *v = self.b2 * *v + (1.0 - self.b2) * g * g;
            let step = self.lr * (*m / c1) / ((*v / c2).sqrt() + ADAM_EPS);
            *x = (*x - step).clamp(0.0, 1.0);
        }
    }
}

/// Runs a stylization job. Deterministic given the job.
pub fn stylize(job: &StylizeJob) -> Result<RunOutcome> {
    job.validate()?;
    let extractor = Extractor::new(job.extractor.clone())?;
    let content_taps = extractor.extract(&job.content)?;
    let style_taps = job
        .styles
        .iter()
        .map(|s| extractor.extract(s))
        .collect::<Result<Vec<_>>>()?;
    let plans = build_plans(job, &content_taps, &style_taps)?;
    let frozen = frozen_pixels(job);
    let channels: Vec<usize> = content_taps.iter().map(FeatureMap::channels).collect();
    let use_content = job.loss.content_weight > 0.0;

    let mut data = job.content.data().to_vec();
    let (h, w, c) = (
        job.content.height(),
        job.content.width(),
        job.content.channels(),
    );
    let mut adam = Adam::new(data.len(), job.learning_rate, job.betas);
    let mut trace = RunTrace {
        layer_ids: content_taps.iter().map(FeatureMap::layer_id).collect(),
        rows: Vec::with_capacity(job.iterations),
    };
    let mut snapshots = Vec::new();
    let mut tail = Vec::with_capacity(job.keep_last.min(job.iterations));

    for it in 0..job.iterations {
        let t0 = Instant::now();
        let image = ImageBuffer::new(h, w, c, data.clone())?;
        let fwd = extractor.forward(&image)?;

        let t_loss = Instant::now();
        let projections = job
            .loss
            .sample_layer_projections(&channels, job.seed, it as u64)?;
        let mut per_layer = Vec::with_capacity(plans.len());
        let mut grads = Vec::with_capacity(plans.len());
        for ((tap, plan), proj) in fwd.taps.iter().zip(&plans).zip(&projections) {
            match plan {
                Some(plan) => {
                    let out =
                        sliced_loss(tap, plan, proj, job.loss.mode, job.loss.weight_gradient)?;
                    per_layer.push(out.value);
                    grads.push(out.gradient);
                }
                None => {
                    per_layer.push(0.0);
                    grads.push(GradientBuffer::zeros_like(tap));
                }
            }
        }
        let loss_ms = t_loss.elapsed().as_secs_f64() * 1e3;

        let mut content = 0.0;
        if use_content {
            let (value, cg) = content_loss(&fwd.taps, &content_taps, job.loss.content_weight)?;
            content = value;
            grads.iter_mut().zip(&cg).for_each(|(g, c)| g.add_assign(c));
        }
        let total = per_layer.iter().sum::<f64>() + content;
        if !total.is_finite() {
            let bad: Vec<String> = trace
                .layer_ids
                .iter()
                .zip(&per_layer)
                .filter(|(_, v)| !v.is_finite())
                .map(|(id, v)| format!("layer{id}={v}"))
                .collect();
            return Err(Error::Diverged {
                iteration: it,
                detail: format!("total={total} content={content} {}", bad.join(" ")),
            });
        }

        let mut pixel_grad = extractor.backprop(&fwd, &grads)?;
        if let Some(frozen) = &frozen {
            pixel_grad
                .iter_mut()
                .zip(frozen)
                .filter(|(_, &f)| f)
                .for_each(|(g, _)| *g = 0.0);
        }
        if pixel_grad.iter().any(|g| !g.is_finite()) {
            return Err(Error::Diverged {
                iteration: it,
                detail: "non-finite pixel gradient".into(),
            });
        }
        adam.step(&mut data, &pixel_grad);

        trace.rows.push(TraceRow {
            iteration: it,
            total,
            per_layer,
            content,
            ms: t0.elapsed().as_secs_f64() * 1e3,
            loss_ms,
        });
        if let Some(every) = job.snapshot_every.filter(|&e| e > 0) {
            if (it + 1) % every == 0 {
                snapshots.push((it + 1, ImageBuffer::new(h, w, c, data.clone())?));
            }
        }
        if it + job.keep_last >= job.iterations {
            tail.push(ImageBuffer::new(h, w, c, data.clone())?);
        }
    }
    Ok(RunOutcome {
        image: ImageBuffer::new(h, w, c, data)?,
        trace,
        snapshots,
        tail,
    })
}

/// Uniform sliced loss at one projection per channel on fixed directions,
/// summed over layers. Used to score results independently of the
/// configuration they were optimized with.
pub fn full_budget_swd(source: &[FeatureMap], target: &[FeatureMap], seed: u64) -> Result<f64> {
    if source.len() != target.len() {
        return Err(Error::Dimension("layer counts differ".into()));
    }
    let mut total = 0.0;
    for (l, (s, t)) in source.iter().zip(target).enumerate() {
        let proj = sample_projections(
            s.channels(),
            s.channels(),
            derive_seed(seed, u64::MAX, l as u64),
        )?;
        let plan = LayerPlan::global(s.pixel_count(), t);
        total += sliced_loss(
            s,
            &plan,
            &proj,
            WeightMode::Uniform,
            WeightGradient::Detached,
        )?
        .value;
    }
    Ok(total)
}

/// [`full_budget_swd`] between the pixels of `image` labelled `label` (all
/// pixels when `mask` is `None`) and the whole of `style`. Layers where the
/// region vanishes are skipped.
pub fn region_swd(
    image: &ImageBuffer,
    mask: Option<(&RegionMask, u8)>,
    style: &ImageBuffer,
    spec: &ExtractorSpec,
    seed: u64,
) -> Result<f64> {
    let ex = Extractor::new(spec.clone())?;
    let taps = ex.extract(image)?;
    let style_taps = ex.extract(style)?;
    let mut src = Vec::new();
    let mut tgt = Vec::new();
    for (tap, st) in taps.into_iter().zip(style_taps) {
        let tap = match mask {
            None => tap,
            Some((m, label)) => {
                let labels = downsample_mask(m, tap.spatial())?;
                let rows = gather_rows(&tap, labels.labels(), label);
                if rows.is_empty() {
                    continue;
                }
                FeatureMap::from_rows(tap.layer_id(), tap.channels(), rows)?
            }
        };
        src.push(tap);
        tgt.push(st);
    }
    if src.is_empty() {
        return Err(Error::Empty("region is empty at every layer"));
    }
    // Keep the direction seeds keyed by the original tap index.
    let mut total = 0.0;
    for (s, t) in src.iter().zip(&tgt) {
        let l = (s.layer_id() - 1) as u64;
        let proj = sample_projections(s.channels(), s.channels(), derive_seed(seed, u64::MAX, l))?;
        let plan = LayerPlan::global(s.pixel_count(), t);
        total += sliced_loss(
            s,
            &plan,
            &proj,
            WeightMode::Uniform,
            WeightGradient::Detached,
        )?
        .value;
    }
    Ok(total)
}

/// Result of [`benchmark_iw_vs_vanilla`].
#[derive(Debug, Clone)]
pub struct BenchmarkReport {
    pub uniform: RunOutcome,
    pub importance: RunOutcome,
    /// Mean style-loss time per iteration.
    pub uniform_ms: f64,
    pub importance_ms: f64,
    pub speedup: f64,
    /// Median [`full_budget_swd`] to the style over the last
    /// [`TAIL_WINDOW`] iterates.
    pub final_uniform: f64,
    pub final_importance: f64,
    /// `|final_importance − final_uniform| / final_uniform`.
    pub relative_gap: f64,
    /// [`full_budget_swd`] of the final iterate alone.
    pub last_uniform: f64,
    pub last_importance: f64,
}

impl BenchmarkReport {
    /// Key-value summary, one `name,value` pair per line.
    pub fn summary_csv(&self) -> String {
        let rows = [
            ("iterations", self.uniform.trace.rows.len().to_string()),
            ("uniform_mean_ms", format!("{:.3}", self.uniform_ms)),
            ("importance_mean_ms", format!("{:.3}", self.importance_ms)),
            ("speedup", format!("{:.3}", self.speedup)),
            ("uniform_initial_loss", fmt_g9(first_total(&self.uniform))),
            ("uniform_final_loss", fmt_g9(last_total(&self.uniform))),
            (
                "importance_initial_loss",
                fmt_g9(first_total(&self.importance)),
            ),
            (
                "importance_final_loss",
                fmt_g9(last_total(&self.importance)),
            ),
            ("uniform_final_eval", fmt_g9(self.final_uniform)),
            ("importance_final_eval", fmt_g9(self.final_importance)),
            ("relative_gap", fmt_g9(self.relative_gap)),
            ("uniform_last_eval", fmt_g9(self.last_uniform)),
            ("importance_last_eval", fmt_g9(self.last_importance)),
        ];
        let mut out = String::from("metric,value\n");
        for (k, v) in rows {
            let _ = writeln!(out, "{k},{v}");
        }
        out
    }
}

fn first_total(r: &RunOutcome) -> f64 {
    r.trace.rows.first().map_or(f64::NAN, |r| r.total)
}

fn last_total(r: &RunOutcome) -> f64 {
    r.trace.rows.last().map_or(f64::NAN, |r| r.total)
}

/// Seed of the fixed evaluation directions used by the benchmark.
pub const EVAL_SEED: u64 = 0xE7A1;

/// Iterates over which the benchmark's final loss is taken (median).
pub const TAIL_WINDOW: usize = 50;

fn median(mut v: Vec<f64>) -> f64 {
    v.sort_by(f64::total_cmp);
    let n = v.len();
    if n % 2 == 1 {
        v[n / 2]
    } else {
        (v[n / 2 - 1] + v[n / 2]) / 2.0
    }
}

/// Runs `base` twice: uniform weighting with one projection per channel, and
/// importance weighting at a 5% budget. Everything else is shared.
pub fn benchmark_iw_vs_vanilla(base: &StylizeJob) -> Result<BenchmarkReport> {
    let mut vanilla = base.clone();
    vanilla.keep_last = TAIL_WINDOW;
    vanilla.loss = LossConfig {
        content_weight: base.loss.content_weight,
        ..LossConfig::full_budget_uniform()
    };
    let mut iw = base.clone();
    iw.keep_last = TAIL_WINDOW;
    iw.loss = LossConfig {
        content_weight: base.loss.content_weight,
        ..LossConfig::default()
    };
    let uniform = stylize(&vanilla)?;
    let importance = stylize(&iw)?;
    let ex = Extractor::new(base.extractor.clone())?;
    let style = ex.extract(&base.styles[0])?;
    let evals = |o: &RunOutcome| -> Result<Vec<f64>> {
        o.tail
            .iter()
            .map(|img| full_budget_swd(&ex.extract(img)?, &style, EVAL_SEED))
            .collect()
    };
    let (eu, ei) = (evals(&uniform)?, evals(&importance)?);
    let (last_uniform, last_importance) = (eu[eu.len() - 1], ei[ei.len() - 1]);
    let final_uniform = median(eu);
    let final_importance = median(ei);
    let uniform_ms = uniform.trace.mean_loss_ms();
    let importance_ms = importance.trace.mean_loss_ms();
    Ok(BenchmarkReport {
        speedup: uniform_ms / importance_ms,
        relative_gap: (final_importance - final_uniform).abs() / final_uniform,
        uniform,
        importance,
        uniform_ms,
        importance_ms,
        final_uniform,
        final_importance,
        last_uniform,
        last_importance,
    })
}

#[cfg(test)]
mod tests {
    use super::*;

    fn small_spec() -> ExtractorSpec {
        ExtractorSpec {
            widths: vec![8, 16],
            ..ExtractorSpec::default()
        }
    }

    fn gradient(h: usize, w: usize, phase: f64) -> ImageBuffer {
        ImageBuffer::from_fn(h, w, 3, |y, x, c| {
            0.5 + 0.4 * ((y as f64 * 0.7 + x as f64 * 0.3 + c as f64 + phase).sin())
        })
        .unwrap()
    }

    #[test]
    fn g9_formatting() {
        assert_eq!(fmt_g9(0.0), "0");
        assert_eq!(fmt_g9(1.0), "1");
        assert_eq!(fmt_g9(0.5), "0.5");
        assert_eq!(fmt_g9(1.0 / 3.0), "0.333333333");
        assert_eq!(fmt_g9(123456789.0), "123456789");
        assert_eq!(fmt_g9(-2.5e-7), "-2.5e-7");
        assert_eq!(fmt_g9(1.0e12), "1e12");
    }

    #[test]
    fn trace_header_lists_layers() {
        let t = RunTrace {
            layer_ids: vec![1, 2],
            rows: vec![TraceRow {
                iteration: 0,
                total: 1.5,
                per_layer: vec![1.0, 0.5],
                content: 0.0,
                ms: 2.0,
                loss_ms: 1.0,
            }],
        };
        assert_eq!(
            t.to_csv(),
            "iteration,total,layer1,layer2,ms\n0,1.5,1,0.5,2.000\n"
        );
    }

    #[test]
    fn job_validation() {
        let img = gradient(16, 16, 0.0);
        let mut job = StylizeJob::new(img.clone(), img.clone());
        job.iterations = 0;
        assert!(stylize(&job).is_err());
        let mut job = StylizeJob::new(img.clone(), img.clone());
        job.styles.push(img.clone());
        assert!(matches!(stylize(&job), Err(Error::Mask(_))));
        let mut job = StylizeJob::new(img.clone(), img);
        job.loss.exclude_label = Some(0);
        assert!(matches!(stylize(&job), Err(Error::Mask(_))));
    }

    #[test]
    fn style_count_must_match_regions() {
        let img = gradient(16, 16, 0.0);
        let labels = (0..256).map(|i| (i % 16 >= 8) as u8).collect();
        let mut job = StylizeJob::new(img.clone(), img.clone());
        job.extractor = small_spec();
        job.content_mask = Some(RegionMask::new(16, 16, labels).unwrap());
        job.styles = vec![img.clone(), img.clone(), img];
        job.iterations = 1;
        match stylize(&job) {
            Err(Error::Mask(msg)) => assert!(msg.contains("3 styles for 2")),
            other => panic!("unexpected {other:?}"),
        }
    }

    #[test]
    fn loss_decreases_on_small_job() {
        let mut job = StylizeJob::new(gradient(16, 16, 0.0), gradient(16, 16, 2.0));
        job.extractor = small_spec();
        job.iterations = 40;
        job.loss.content_weight = 0.0;
        let out = stylize(&job).unwrap();
        let rows = &out.trace.rows;
        assert_eq!(rows.len(), 40);
        assert!(rows.last().unwrap().total < rows[0].total);
    }

    #[test]
    fn snapshots_follow_cadence() {
        let mut job = StylizeJob::new(gradient(16, 16, 0.0), gradient(16, 16, 1.0));
        job.extractor = small_spec();
        job.iterations = 5;
        job.snapshot_every = Some(2);
        let out = stylize(&job).unwrap();
        let its: Vec<usize> = out.snapshots.iter().map(|(i, _)| *i).collect();
        assert_eq!(its, vec![2, 4]);
    }
}
