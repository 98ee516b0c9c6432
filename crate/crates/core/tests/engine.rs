mod common;

use swdstyle::engine::{stylize, StylizeJob};
use swdstyle::features::ExtractorSpec;
use swdstyle::samples::{content_image, split_mask, style2_image, style_image};
use swdstyle::swdloss::LossConfig;
use swdstyle::tensors::{ImageBuffer, RegionMask};
use swdstyle::Error;

fn median(mut v: Vec<f64>) -> f64 {
    v.sort_by(f64::total_cmp);
    v[v.len() / 2]
}

#[test]
fn noise_toward_constant_color_matches_channel_means() {
    let mut r = common::rng(5);
    let noise = ImageBuffer::new(16, 16, 3, common::uniform_vec(&mut r, 768, 0.0, 1.0)).unwrap();
    let color = [0.2, 0.6, 0.4];
    let style = ImageBuffer::from_fn(16, 16, 3, |_, _, c| color[c]).unwrap();
    let mut job = StylizeJob::new(noise, style);
    job.loss.content_weight = 0.0;
    job.iterations = 400;
    let out = stylize(&job).unwrap();
    for (c, (mean, _)) in out.image.channel_stats().into_iter().enumerate() {
        assert!((mean - color[c]).abs() < 1e-2, "channel {c}: {mean}");
    }
}

#[test]
fn loss_trend_on_bundled_pair() {
    let mut job = StylizeJob::new(content_image(32), style_image(32));
    job.iterations = 200;
    let out = stylize(&job).unwrap();
    let totals: Vec<f64> = out.trace.rows.iter().map(|r| r.total).collect();
    assert!(median(totals[150..].to_vec()) < median(totals[..50].to_vec()));
    assert!(out
        .trace
        .rows
        .iter()
        .enumerate()
        .all(|(i, r)| r.iteration == i && r.total.is_finite()));
}

#[test]
fn full_budget_uniform_keeps_the_fixed_point() {
    let img = content_image(16);
    let mut job = StylizeJob::new(img.clone(), img.clone());
    job.loss = LossConfig::full_budget_uniform();
    job.iterations = 20;
    let out = stylize(&job).unwrap();
    assert_eq!(out.image, img);
    assert!(out.trace.rows.iter().all(|r| r.total == 0.0));
}

#[test]
fn style_mask_routes_regions_to_matching_style_regions() {
    // Style: left half from one texture, right half from another. With
    // aligned masks each content half should drift toward its own half.
    let (a, b) = (style_image(32), style2_image(32));
    let style = ImageBuffer::from_fn(32, 32, 3, |y, x, c| {
        if x < 16 {
            a.get(y, x, c)
        } else {
            b.get(y, x, c)
        }
    })
    .unwrap();
    let mask = split_mask(32);
    let mut job = StylizeJob::new(content_image(32), style);
    job.content_mask = Some(mask.clone());
    job.style_mask = Some(mask.clone());
    job.iterations = 300;
    let out = stylize(&job).unwrap();
    let spec = ExtractorSpec::default();
    let own_left =
        swdstyle::engine::region_swd(&out.image, Some((&mask, 0)), &a, &spec, 1).unwrap();
    let cross_left =
        swdstyle::engine::region_swd(&out.image, Some((&mask, 0)), &b, &spec, 1).unwrap();
    assert!(own_left < cross_left);
}

#[test]
fn label_missing_from_style_mask_is_reported_before_iterating() {
    let labels = (0..256).map(|i| (i % 16 >= 8) as u8 * 2).collect();
    let mut job = StylizeJob::new(content_image(16), style_image(16));
    job.content_mask = Some(RegionMask::new(16, 16, labels).unwrap());
    job.style_mask = Some(RegionMask::uniform(16, 16, 0).unwrap());
    job.iterations = 1000;
    let start = std::time::Instant::now();
    match stylize(&job) {
        Err(Error::Mask(msg)) => assert!(msg.contains("[2]"), "{msg}"),
        other => panic!("unexpected {other:?}"),
    }
    assert!(start.elapsed().as_secs_f64() < 5.0);
}

#[test]
fn identical_jobs_give_identical_images() {
    let mut job = StylizeJob::new(content_image(16), style_image(16));
    job.iterations = 15;
    let a = stylize(&job).unwrap();
    let b = stylize(&job).unwrap();
    assert_eq!(a.image.to_u8(), b.image.to_u8());
    assert_eq!(a.image, b.image);
    job.seed += 1;
    assert_ne!(stylize(&job).unwrap().image, a.image);
}
