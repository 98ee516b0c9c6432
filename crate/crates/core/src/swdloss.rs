//! Sliced Wasserstein losses with analytic gradients.
//!
//! All kernels return the gradient with respect to the *source* side only;
//! the target side is a fixed reference.
//!
//! The building block is the sorted 1D match: with `n = |p|`,
//!
//! ```text
//! sw1d(p, q) = (1/n) Σ_r (sort(p)_r − sort(q)_r)²
//! ∂/∂p_m     = (2/n) (p_m − sort(q)_{rank(m)})
//! ```
//!
//! A layer loss projects features on `K` directions, evaluates the (optionally
//! region-partitioned) 1D cost per direction and combines the `K` distances
//! either uniformly or with softmax importance weights.

use rayon::prelude::*;

use crate::slicing::{self, derive_seed, ProjectionSet};
use crate::tensors::{
    downsample_mask, FeatureMap, LayerLoss, LossReport, ProjectionStat, RegionMask,
};
use crate::{linalg, Error, Result};

/// How per-projection distances are combined.
#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub enum WeightMode {
    /// Plain mean over projections.
    Uniform,
    /// Softmax over the sampled projections' distances, per layer.
    Importance,
}

/// Whether the importance weights take part in differentiation.
#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub enum WeightGradient {
    /// Weights are treated as constants (stop-gradient).
    Detached,
    /// Exact derivative of `Σ softmax(d)_k d_k`, including the weights.
    Full,
}

#[derive(Debug, Clone, PartialEq)]
pub struct LossConfig {
    pub mode: WeightMode,
    /// Fraction of a layer's channel count used as its projection budget.
    pub projection_fraction: f64,
    /// Explicit per-layer counts; overrides `projection_fraction` when set.
    pub projection_counts: Option<Vec<usize>>,
    /// Weight of the content term (λ).
    pub content_weight: f64,
    /// Region label skipped by the style loss.
    pub exclude_label: Option<u8>,
    pub weight_gradient: WeightGradient,
}

impl Default for LossConfig {
    fn default() -> Self {
        Self {
            mode: WeightMode::Importance,
            projection_fraction: 0.05,
            projection_counts: None,
            content_weight: 0.1,
            exclude_label: None,
            weight_gradient: WeightGradient::Detached,
        }
    }
}

impl LossConfig {
    /// Uniform weighting with one projection per channel.
    pub fn full_budget_uniform() -> Self {
        Self {
            mode: WeightMode::Uniform,
            projection_fraction: 1.0,
            ..Self::default()
        }
    }

    pub fn validate(&self) -> Result<()> {
        if !(self.projection_fraction > 0.0 && self.projection_fraction <= 1.0) {
            return Err(Error::InvalidArgument(format!(
                "projection fraction must lie in (0, 1], got {}",
                self.projection_fraction
            )));
        }
        if let Some(counts) = &self.projection_counts {
            if counts.is_empty() || counts.contains(&0) {
                return Err(Error::InvalidArgument(
                    "projection counts must be non-empty and >= 1".into(),
                ));
            }
        }
        if !self.content_weight.is_finite() || self.content_weight < 0.0 {
            return Err(Error::InvalidArgument(format!(
                "content weight must be finite and >= 0, got {}",
                self.content_weight
            )));
        }
        Ok(())
    }

    /// Projection budget for the `layer_index`-th layer of width `channels`.
    ///
    /// With the default 5% fraction this yields 3, 6, 13 and 26 for widths 64,
    /// 128, 256 and 512. Explicit counts shorter than the layer list repeat
    /// their last entry.
    pub fn projection_count(&self, layer_index: usize, channels: usize) -> usize {
        match &self.projection_counts {
            Some(counts) => counts[layer_index.min(counts.len() - 1)],
            None => ((self.projection_fraction * channels as f64).round() as usize).max(1),
        }
    }

    /// Fresh directions for every layer, keyed by `(seed, iteration, layer)`.
    pub fn sample_layer_projections(
        &self,
        channels: &[usize],
        seed: u64,
        iteration: u64,
    ) -> Result<Vec<ProjectionSet>> {
        channels
            .iter()
            .enumerate()
            .map(|(l, &c)| {
                slicing::sample_projections(
                    c,
                    self.projection_count(l, c),
                    derive_seed(seed, iteration, l as u64),
                )
            })
            .collect()
    }
}

/// `∂L/∂F` for one feature map, same layout as the map.
#[derive(Debug, Clone, PartialEq)]
pub struct GradientBuffer {
    layer_id: u32,
    channels: usize,
    height: usize,
    width: usize,
    data: Vec<f64>,
}

impl GradientBuffer {
    pub fn zeros_like(map: &FeatureMap) -> Self {
        Self {
            layer_id: map.layer_id(),
            channels: map.channels(),
            height: map.height(),
            width: map.width(),
            data: vec![0.0; map.data().len()],
        }
    }

    fn from_data(map: &FeatureMap, data: Vec<f64>) -> Self {
        debug_assert_eq!(data.len(), map.data().len());
        Self {
            layer_id: map.layer_id(),
            channels: map.channels(),
            height: map.height(),
            width: map.width(),
            data,
        }
    }

    pub fn layer_id(&self) -> u32 {
        self.layer_id
    }

    pub fn channels(&self) -> usize {
        self.channels
    }

    pub fn spatial(&self) -> (usize, usize) {
        (self.height, self.width)
    }

    pub fn data(&self) -> &[f64] {
        &self.data
    }

    pub fn data_mut(&mut self) -> &mut [f64] {
        &mut self.data
    }

    pub fn matches(&self, map: &FeatureMap) -> bool {
        self.channels == map.channels() && (self.height, self.width) == map.spatial()
    }

    pub(crate) fn add_assign(&mut self, other: &GradientBuffer) {
        self.data
            .iter_mut()
            .zip(&other.data)
            .for_each(|(a, b)| *a += b);
    }
}

/// Stable ascending argsort; ties keep their original order.
pub(crate) fn argsort(values: &[f64]) -> Vec<usize> {
    let mut idx: Vec<usize> = (0..values.len()).collect();
    idx.sort_by(|&a, &b| values[a].total_cmp(&values[b]));
    idx
}

fn sorted(values: &[f64]) -> Vec<f64> {
    let mut v = values.to_vec();
    v.sort_by(f64::total_cmp);
    v
}

/// Matches `p` against an already sorted `q` of the same length.
/// Returns the mean squared difference and its gradient with respect to `p`.
fn matched_cost(p: &[f64], q_sorted: &[f64]) -> (f64, Vec<f64>) {
    debug_assert_eq!(p.len(), q_sorted.len());
    let n = p.len() as f64;
    let order = argsort(p);
    let mut grad = vec![0.0; p.len()];
    let mut sum = 0.0;
    for (r, &m) in order.iter().enumerate() {
        let diff = p[m] - q_sorted[r];
        sum += diff * diff;
        grad[m] = 2.0 * diff / n;
    }
    (sum / n, grad)
}

/// Sorted target for a source of length `len`, resampled only when lengths differ.
fn target_quantiles(q: &[f64], len: usize) -> Vec<f64> {
    if q.len() == len {
        sorted(q)
    } else {
        resample_sorted(&sorted(q), len)
    }
}

/// One-dimensional sliced term: mean squared difference of sorted values.
pub fn sw1d(p: &[f64], q: &[f64]) -> Result<(f64, Vec<f64>)> {
    if p.is_empty() || q.is_empty() {
        return Err(Error::Empty("sw1d population"));
    }
    if p.len() != q.len() {
        return Err(Error::Dimension(format!(
            "sw1d populations of length {} and {}",
            p.len(),
            q.len()
        )));
    }
    Ok(matched_cost(p, &sorted(q)))
}

/// Linear interpolation of `sort(p)` at `target_len` evenly spaced quantiles,
/// endpoints included. A single output takes the median position.
pub fn quantile_resample(p: &[f64], target_len: usize) -> Result<Vec<f64>> {
    if p.is_empty() {
        return Err(Error::Empty("quantile_resample input"));
    }
    if target_len == 0 {
        return Err(Error::InvalidArgument(
            "quantile_resample target length 0".into(),
        ));
    }
    Ok(resample_sorted(&sorted(p), target_len))
}

fn resample_sorted(s: &[f64], len: usize) -> Vec<f64> {
    let n = s.len();
    if len == n {
        return s.to_vec();
    }
    let at = |t: f64| {
        let i = (t.floor() as usize).min(n - 1);
        let frac = t - i as f64;
        if i + 1 < n && frac > 0.0 {
            s[i] + frac * (s[i + 1] - s[i])
        } else {
            s[i]
        }
    };
    if len == 1 {
        return vec![at((n - 1) as f64 / 2.0)];
    }
    let scale = (n - 1) as f64 / (len - 1) as f64;
    (0..len).map(|j| at(j as f64 * scale)).collect()
}

/// Region-partitioned 1D cost.
///
/// Labels `0..=max_label` each define a region; the cost is the sum over
/// regions non-empty on both sides of `sw1d` within the region, with the
/// target region quantile-resampled to the source region's size when they
/// differ. `exclude` skips a region entirely (zero cost, zero gradient).
pub fn mr_sw1d(
    p: &[f64],
    q: &[f64],
    labels_p: &[u8],
    labels_q: &[u8],
    max_label: u8,
    exclude: Option<u8>,
) -> Result<(f64, Vec<f64>)> {
    if labels_p.len() != p.len() || labels_q.len() != q.len() {
        return Err(Error::Dimension(
            "labels must align with populations".into(),
        ));
    }
    if let Some(&bad) = labels_p.iter().chain(labels_q).find(|&&l| l > max_label) {
        return Err(Error::Mask(format!("label {bad} exceeds K = {max_label}")));
    }
    let mut grad = vec![0.0; p.len()];
    let mut value = 0.0;
    let mut active = 0usize;
    for label in 0..=max_label {
        if Some(label) == exclude {
            continue;
        }
        let idx: Vec<usize> = (0..p.len()).filter(|&m| labels_p[m] == label).collect();
        let q_k: Vec<f64> = q
            .iter()
            .zip(labels_q)
            .filter(|(_, &l)| l == label)
            .map(|(&v, _)| v)
            .collect();
        match (idx.is_empty(), q_k.is_empty()) {
            (true, true) => continue,
            (false, false) => {}
            _ => {
                return Err(Error::Mask(format!(
                    "region {label} is empty on exactly one side"
                )))
            }
        }
        let p_k: Vec<f64> = idx.iter().map(|&m| p[m]).collect();
        let (cost, g) = matched_cost(&p_k, &target_quantiles(&q_k, p_k.len()));
        value += cost;
        for (&m, gv) in idx.iter().zip(g) {
            grad[m] = gv;
        }
        active += 1;
    }
    if active == 0 {
        return Err(Error::Empty("all regions are empty"));
    }
    Ok((value, grad))
}

/// Source pixels of one region and the target feature rows they are matched to.
#[derive(Debug, Clone, PartialEq)]
pub struct RegionPair {
    pub label: u8,
    pub source_pixels: Vec<usize>,
    /// Pixel-major `rows × channels` target features.
    pub target: Vec<f64>,
}

/// Region layout for one layer: which source pixels match which target rows.
#[derive(Debug, Clone, PartialEq)]
pub struct LayerPlan {
    channels: usize,
    source_len: usize,
    regions: Vec<RegionPair>,
}

impl LayerPlan {
    /// Whole source against whole target.
    pub fn global(source_len: usize, target: &FeatureMap) -> Self {
        Self {
            channels: target.channels(),
            source_len,
            regions: vec![RegionPair {
                label: 0,
                source_pixels: (0..source_len).collect(),
                target: target.data().to_vec(),
            }],
        }
    }

    /// Regions from aligned label vectors on both sides.
    ///
    /// A non-excluded label present on exactly one side is an error, as is a
    /// plan with no active region.
    pub fn from_labels(
        source_labels: &[u8],
        target: &FeatureMap,
        target_labels: &[u8],
        exclude: Option<u8>,
    ) -> Result<Self> {
        if target_labels.len() != target.pixel_count() {
            return Err(Error::Dimension(format!(
                "target mask has {} labels for {} pixels",
                target_labels.len(),
                target.pixel_count()
            )));
        }
        let mut regions = Vec::new();
        for label in 0..=255u8 {
            if Some(label) == exclude {
                continue;
            }
            let source_pixels: Vec<usize> = source_labels
                .iter()
                .enumerate()
                .filter(|(_, &l)| l == label)
                .map(|(m, _)| m)
                .collect();
            let rows = gather_rows(target, target_labels, label);
            match (source_pixels.is_empty(), rows.is_empty()) {
                (true, true) => continue,
                (false, false) => regions.push(RegionPair {
                    label,
                    source_pixels,
                    target: rows,
                }),
                _ => {
                    return Err(Error::Mask(format!(
                        "region {label} is empty on exactly one side"
                    )))
                }
            }
        }
        if regions.is_empty() {
            return Err(Error::Empty("all regions are empty"));
        }
        Ok(Self {
            channels: target.channels(),
            source_len: source_labels.len(),
            regions,
        })
    }

    /// Explicit region list, for targets drawn from different images.
    pub fn from_regions(
        channels: usize,
        source_len: usize,
        regions: Vec<RegionPair>,
    ) -> Result<Self> {
        for r in &regions {
            if r.source_pixels.is_empty() || r.target.is_empty() {
                return Err(Error::Empty("region pair with an empty side"));
            }
            if r.target.len() % channels != 0 {
                return Err(Error::Dimension(
                    "target rows do not match channel count".into(),
                ));
            }
            if r.source_pixels.iter().any(|&m| m >= source_len) {
                return Err(Error::Dimension("region pixel index out of range".into()));
            }
        }
        if regions.is_empty() {
            return Err(Error::Empty("all regions are empty"));
        }
        Ok(Self {
            channels,
            source_len,
            regions,
        })
    }

    pub fn channels(&self) -> usize {
        self.channels
    }

    pub fn regions(&self) -> &[RegionPair] {
        &self.regions
    }
}

pub(crate) fn gather_rows(map: &FeatureMap, labels: &[u8], label: u8) -> Vec<f64> {
    labels
        .iter()
        .enumerate()
        .filter(|(_, &l)| l == label)
        .flat_map(|(m, _)| map.row(m).iter().copied())
        .collect()
}

/// Value, per-projection diagnostics and source gradient of one layer.
#[derive(Debug, Clone, PartialEq)]
pub struct SlicedLoss {
    pub value: f64,
    pub distances: Vec<f64>,
    pub weights: Vec<f64>,
    pub gradient: GradientBuffer,
}

/// Numerically stable softmax.
pub fn softmax(values: &[f64]) -> Vec<f64> {
    let max = values.iter().copied().fold(f64::NEG_INFINITY, f64::max);
    let exps: Vec<f64> = values.iter().map(|v| (v - max).exp()).collect();
    let total: f64 = exps.iter().sum();
    exps.into_iter().map(|e| e / total).collect()
}

/// The general layer kernel behind [`swd`], [`iw_swd`] and region-masked losses.
pub fn sliced_loss(
    source: &FeatureMap,
    plan: &LayerPlan,
    proj: &ProjectionSet,
    mode: WeightMode,
    weight_gradient: WeightGradient,
) -> Result<SlicedLoss> {
    let dim = source.channels();
    if plan.channels != dim || proj.dim() != dim {
        return Err(Error::Dimension(format!(
            "source has {dim} channels, target {} and projections {}",
            plan.channels,
            proj.dim()
        )));
    }
    if plan.source_len != source.pixel_count() {
        return Err(Error::Dimension(format!(
            "plan expects {} source pixels, map has {}",
            plan.source_len,
            source.pixel_count()
        )));
    }
    let m = source.pixel_count();
    let k = proj.count();
    let src_proj = slicing::project_rows(source.data(), dim, proj)?;
    let tgt_proj: Vec<Vec<f64>> = plan
        .regions
        .iter()
        .map(|r| slicing::project_rows(&r.target, dim, proj))
        .collect::<Result<_>>()?;

    // Per direction: total region cost and dense population gradient.
    let per_direction: Vec<(f64, Vec<f64>)> = (0..k)
        .into_par_iter()
        .map(|j| {
            let mut grad = vec![0.0; m];
            let mut dist = 0.0;
            for (region, t) in plan.regions.iter().zip(&tgt_proj) {
                let p: Vec<f64> = region
                    .source_pixels
                    .iter()
                    .map(|&i| src_proj[i * k + j])
                    .collect();
                let q: Vec<f64> = t.iter().skip(j).step_by(k).copied().collect();
                let (cost, g) = matched_cost(&p, &target_quantiles(&q, p.len()));
                dist += cost;
                for (&i, gv) in region.source_pixels.iter().zip(g) {
                    grad[i] = gv;
                }
            }
            (dist, grad)
        })
        .collect();

    let distances: Vec<f64> = per_direction.iter().map(|(d, _)| *d).collect();
    let (value, weights, coefficients) = combine(&distances, mode, weight_gradient);

    let mut scaled = vec![0.0; m * k];
    for (j, ((_, g), c)) in per_direction.iter().zip(&coefficients).enumerate() {
        for (i, gv) in g.iter().enumerate() {
            scaled[i * k + j] = c * gv;
        }
    }
    let grad = linalg::matmul(&scaled, proj.vectors(), m, k, dim);
    Ok(SlicedLoss {
        value,
        distances,
        weights,
        gradient: GradientBuffer::from_data(source, grad),
    })
}

/// Returns `(value, weights, gradient coefficient per direction)`.
fn combine(distances: &[f64], mode: WeightMode, wg: WeightGradient) -> (f64, Vec<f64>, Vec<f64>) {
    let k = distances.len() as f64;
    match mode {
        WeightMode::Uniform => {
            let value = distances.iter().sum::<f64>() / k;
            let w = vec![1.0 / k; distances.len()];
            (value, w.clone(), w)
        }
        WeightMode::Importance => {
            let w = softmax(distances);
            let value: f64 = w.iter().zip(distances).map(|(w, d)| w * d).sum();
            let coef = match wg {
                WeightGradient::Detached => w.clone(),
                // d/dd_j Σ_k softmax(d)_k d_k = w_j (1 + d_j − value)
                WeightGradient::Full => w
                    .iter()
                    .zip(distances)
                    .map(|(w, d)| w * (1.0 + d - value))
                    .collect(),
            };
            (value, w, coef)
        }
    }
}

/// Sliced Wasserstein loss: mean over projections of `sw1d`.
///
/// A target with a different pixel count is quantile-resampled to the source size.
pub fn swd(
    src: &FeatureMap,
    tgt: &FeatureMap,
    proj: &ProjectionSet,
) -> Result<(f64, GradientBuffer)> {
    check_channels(src, tgt)?;
    let plan = LayerPlan::global(src.pixel_count(), tgt);
    let out = sliced_loss(
        src,
        &plan,
        proj,
        WeightMode::Uniform,
        WeightGradient::Detached,
    )?;
    Ok((out.value, out.gradient))
}

/// Importance-weighted sliced loss `Σ_k softmax(d)_k d_k` with detached weights.
pub fn iw_swd(
    src: &FeatureMap,
    tgt: &FeatureMap,
    proj: &ProjectionSet,
) -> Result<(f64, GradientBuffer, Vec<f64>)> {
    iw_swd_with(src, tgt, proj, WeightGradient::Detached)
}

pub fn iw_swd_with(
    src: &FeatureMap,
    tgt: &FeatureMap,
    proj: &ProjectionSet,
    weight_gradient: WeightGradient,
) -> Result<(f64, GradientBuffer, Vec<f64>)> {
    check_channels(src, tgt)?;
    let plan = LayerPlan::global(src.pixel_count(), tgt);
    let out = sliced_loss(src, &plan, proj, WeightMode::Importance, weight_gradient)?;
    Ok((out.value, out.gradient, out.weights))
}

fn check_channels(src: &FeatureMap, tgt: &FeatureMap) -> Result<()> {
    if src.channels() != tgt.channels() {
        return Err(Error::Dimension(format!(
            "source has {} channels, target {}",
            src.channels(),
            tgt.channels()
        )));
    }
    Ok(())
}

/// `λ Σ_l ‖F^l − F̂^l‖² / (M_l N_l)` and its gradient with respect to `F`.
pub fn content_loss(
    src: &[FeatureMap],
    reference: &[FeatureMap],
    weight: f64,
) -> Result<(f64, Vec<GradientBuffer>)> {
    if src.len() != reference.len() {
        return Err(Error::Dimension(format!(
            "{} source layers vs {} reference layers",
            src.len(),
            reference.len()
        )));
    }
    let mut value = 0.0;
    let mut grads = Vec::with_capacity(src.len());
    for (f, r) in src.iter().zip(reference) {
        if !f.same_shape(r) {
            return Err(Error::Dimension(format!(
                "content layer {} shape mismatch",
                f.layer_id()
            )));
        }
        let n = f.data().len() as f64;
        let mut sq = 0.0;
        let g: Vec<f64> = f
            .data()
            .iter()
            .zip(r.data())
            .map(|(a, b)| {
                let d = a - b;
                sq += d * d;
                2.0 * weight * d / n
            })
            .collect();
        value += weight * sq / n;
        grads.push(GradientBuffer::from_data(f, g));
    }
    Ok((value, grads))
}

/// Multi-layer style loss plus optional content term, with masks taken at
/// full resolution and downsampled to each layer.
pub fn style_loss(
    source: &[FeatureMap],
    target: &[FeatureMap],
    masks: Option<(&RegionMask, &RegionMask)>,
    content: Option<&[FeatureMap]>,
    config: &LossConfig,
    projections: &[ProjectionSet],
) -> Result<(LossReport, Vec<GradientBuffer>)> {
    if source.len() != target.len() {
        return Err(Error::Dimension(format!(
            "{} source layers vs {} target layers",
            source.len(),
            target.len()
        )));
    }
    let plans = source
        .iter()
        .zip(target)
        .map(|(s, t)| {
            check_channels(s, t)?;
            match masks {
                None => Ok(LayerPlan::global(s.pixel_count(), t)),
                Some((ms, mt)) => {
                    let ls = downsample_mask(ms, s.spatial())?;
                    let lt = downsample_mask(mt, t.spatial())?;
                    LayerPlan::from_labels(ls.labels(), t, lt.labels(), config.exclude_label)
                }
            }
        })
        .collect::<Result<Vec<_>>>()?;
    planned_style_loss(source, &plans, content, config, projections)
}

/// [`style_loss`] on prebuilt plans. Per-layer values are summed.
pub fn planned_style_loss(
    source: &[FeatureMap],
    plans: &[LayerPlan],
    content: Option<&[FeatureMap]>,
    config: &LossConfig,
    projections: &[ProjectionSet],
) -> Result<(LossReport, Vec<GradientBuffer>)> {
    config.validate()?;
    if plans.len() != source.len() || projections.len() != source.len() {
        return Err(Error::Dimension(format!(
            "{} layers, {} plans, {} projection sets",
            source.len(),
            plans.len(),
            projections.len()
        )));
    }
    let mut report = LossReport::default();
    let mut grads = Vec::with_capacity(source.len());
    for ((s, plan), proj) in source.iter().zip(plans).zip(projections) {
        let out = sliced_loss(s, plan, proj, config.mode, config.weight_gradient)?;
        report.per_layer.push(LayerLoss {
            layer_id: s.layer_id(),
            value: out.value,
            projections: out
                .distances
                .iter()
                .zip(&out.weights)
                .map(|(&distance, &weight)| ProjectionStat { distance, weight })
                .collect(),
        });
        grads.push(out.gradient);
    }
    if let Some(reference) = content {
        let (value, content_grads) = content_loss(source, reference, config.content_weight)?;
        report.content = value;
        for (g, c) in grads.iter_mut().zip(&content_grads) {
            g.add_assign(c);
        }
    }
    report.total = report.style_total() + report.content;
    Ok((report, grads))
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::slicing::sample_projections;

    fn fmap(c: usize, m: usize, f: impl Fn(usize) -> f64) -> FeatureMap {
        FeatureMap::from_rows(1, c, (0..c * m).map(f).collect()).unwrap()
    }

    #[test]
    fn sw1d_small_cases() {
        assert_eq!(sw1d(&[3.0, 1.0, 2.0], &[2.0, 3.0, 1.0]).unwrap().0, 0.0);
        assert_eq!(sw1d(&[0.0, 1.0], &[1.0, 0.0]).unwrap().0, 0.0);
        let (v, g) = sw1d(&[0.0, 2.0], &[1.0, 3.0]).unwrap();
        assert_eq!(v, 1.0);
        assert_eq!(g, vec![-1.0, -1.0]);
    }

    #[test]
    fn sw1d_rejects_bad_lengths() {
        assert!(matches!(sw1d(&[], &[]), Err(Error::Empty(_))));
        assert!(matches!(
            sw1d(&[1.0], &[1.0, 2.0]),
            Err(Error::Dimension(_))
        ));
    }

    #[test]
    fn ties_use_stable_matching() {
        // Equal p values: the earlier index takes the smaller target.
        let (_, g) = sw1d(&[1.0, 1.0], &[0.0, 2.0]).unwrap();
        assert_eq!(g, vec![1.0, -1.0]);
    }

    #[test]
    fn quantile_resample_cases() {
        assert_eq!(
            quantile_resample(&[1.0, 0.0], 3).unwrap(),
            vec![0.0, 0.5, 1.0]
        );
        assert_eq!(
            quantile_resample(&[3.0, 1.0, 2.0], 3).unwrap(),
            vec![1.0, 2.0, 3.0]
        );
        assert_eq!(
            quantile_resample(&[0.0, 1.0, 2.0, 3.0], 2).unwrap(),
            vec![0.0, 3.0]
        );
        assert_eq!(quantile_resample(&[0.0, 1.0, 2.0], 1).unwrap(), vec![1.0]);
        assert_eq!(quantile_resample(&[5.0], 3).unwrap(), vec![5.0; 3]);
        assert!(quantile_resample(&[], 2).is_err());
        assert!(quantile_resample(&[1.0], 0).is_err());
    }

    #[test]
    fn mr_single_region_matches_sw1d_bitwise() {
        let p = [0.3, -1.2, 2.5, 0.7];
        let q = [1.1, 0.4, -0.6, 2.0];
        let a = sw1d(&p, &q).unwrap();
        let b = mr_sw1d(&p, &q, &[0; 4], &[0; 4], 0, None).unwrap();
        assert_eq!(a.0.to_bits(), b.0.to_bits());
        assert_eq!(a.1, b.1);
    }

    #[test]
    fn mr_two_region_example() {
        let (v, _) = mr_sw1d(
            &[0.0, 2.0, 5.0, 7.0],
            &[1.0, 3.0, 4.0, 8.0],
            &[0, 0, 1, 1],
            &[0, 0, 1, 1],
            1,
            None,
        )
        .unwrap();
        assert_eq!(v, 2.0);
    }

    #[test]
    fn mr_exclusion_zeroes_region() {
        let (v, g) = mr_sw1d(
            &[0.0, 2.0, 5.0, 7.0],
            &[1.0, 3.0, 4.0, 8.0],
            &[0, 0, 1, 1],
            &[0, 0, 1, 1],
            1,
            Some(1),
        )
        .unwrap();
        assert_eq!(v, 1.0);
        assert_eq!(&g[2..], &[0.0, 0.0]);
    }

    #[test]
    fn mr_errors() {
        let p = [0.0, 1.0];
        assert!(matches!(
            mr_sw1d(&p, &p, &[0, 1], &[0, 0], 1, None),
            Err(Error::Mask(_))
        ));
        assert!(matches!(
            mr_sw1d(&p, &p, &[1, 1], &[1, 1], 1, Some(1)),
            Err(Error::Empty(_))
        ));
        assert!(matches!(
            mr_sw1d(&p, &p, &[0, 2], &[0, 2], 1, None),
            Err(Error::Mask(_))
        ));
    }

    #[test]
    fn swd_identity_and_one_channel() {
        let a = fmap(3, 10, |i| (i as f64 * 0.37).sin());
        let proj = sample_projections(3, 8, 1).unwrap();
        let (v, g) = swd(&a, &a, &proj).unwrap();
        assert_eq!(v, 0.0);
        assert!(g.data().iter().all(|&x| x == 0.0));

        let p = fmap(1, 5, |i| i as f64 * 0.5);
        let q = fmap(1, 5, |i| (i as f64).powi(2) * 0.1);
        let exact = sw1d(p.data(), q.data()).unwrap().0;
        for k in [1, 4, 9] {
            let v = swd(&p, &q, &sample_projections(1, k, k as u64).unwrap())
                .unwrap()
                .0;
            assert!((v - exact).abs() < 1e-12);
        }
    }

    #[test]
    fn iw_weights_cases() {
        let p = fmap(1, 4, |i| i as f64);
        let q = fmap(1, 4, |i| i as f64 * 2.0);
        let one = ProjectionSet::from_vectors(1, vec![1.0]).unwrap();
        let (v, _, w) = iw_swd(&p, &q, &one).unwrap();
        assert_eq!(w, vec![1.0]);
        assert_eq!(v, sw1d(p.data(), q.data()).unwrap().0);

        let two = ProjectionSet::from_vectors(1, vec![1.0, -1.0]).unwrap();
        let (v, _, w) = iw_swd(&p, &q, &two).unwrap();
        assert_eq!(w, vec![0.5, 0.5]);
        assert!((v - swd(&p, &q, &two).unwrap().0).abs() < 1e-12);
    }

    #[test]
    fn softmax_of_hand_distances() {
        let d = [0.0, 3f64.ln()];
        let w = softmax(&d);
        assert!((w[0] - 0.25).abs() < 1e-15 && (w[1] - 0.75).abs() < 1e-15);
        let (v, _, _) = combine(&d, WeightMode::Importance, WeightGradient::Detached);
        assert!((v - 0.75 * 3f64.ln()).abs() < 1e-15);
        assert!((v - 0.823_959_216_501_0).abs() < 1e-12);
    }

    #[test]
    fn content_loss_cases() {
        let a = fmap(2, 3, |i| i as f64);
        let b = fmap(2, 3, |i| i as f64 - 1.0);
        assert_eq!(
            content_loss(std::slice::from_ref(&a), std::slice::from_ref(&a), 0.1)
                .unwrap()
                .0,
            0.0
        );
        assert_eq!(
            content_loss(std::slice::from_ref(&a), std::slice::from_ref(&b), 0.0)
                .unwrap()
                .0,
            0.0
        );
        let (v, g) = content_loss(std::slice::from_ref(&a), &[b], 0.1).unwrap();
        assert!((v - 0.1).abs() < 1e-15);
        assert!(g[0].data().iter().all(|&x| (x - 0.2 / 6.0).abs() < 1e-15));
        let c = fmap(3, 2, |i| i as f64);
        assert!(content_loss(&[a], &[c], 0.1).is_err());
    }

    #[test]
    fn default_budget_follows_width_groups() {
        let cfg = LossConfig::default();
        let counts: Vec<usize> = [64, 128, 256, 512]
            .iter()
            .enumerate()
            .map(|(l, &c)| cfg.projection_count(l, c))
            .collect();
        assert_eq!(counts, vec![3, 6, 13, 26]);
        assert_eq!(cfg.content_weight, 0.1);
        assert_eq!(
            LossConfig::full_budget_uniform().projection_count(0, 64),
            64
        );
    }

    #[test]
    fn config_validation() {
        let mut c = LossConfig {
            projection_fraction: 0.0,
            ..LossConfig::default()
        };
        assert!(c.validate().is_err());
        c = LossConfig::default();
        c.content_weight = f64::NAN;
        assert!(c.validate().is_err());
        c = LossConfig::default();
        c.projection_counts = Some(vec![3, 0]);
        assert!(c.validate().is_err());
    }

    #[test]
    fn style_loss_identity_is_zero() {
        let a = vec![
            fmap(2, 6, |i| (i as f64).cos()),
            fmap(3, 4, |i| (i as f64).sin()),
        ];
        let cfg = LossConfig::default();
        let proj = cfg.sample_layer_projections(&[2, 3], 5, 0).unwrap();
        let (rep, grads) = style_loss(&a, &a, None, Some(&a), &cfg, &proj).unwrap();
        assert_eq!(rep.total, 0.0);
        assert!(grads.iter().all(|g| g.data().iter().all(|&x| x == 0.0)));
    }
}
