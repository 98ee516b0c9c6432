use std::path::PathBuf;

use swdstyle::features::load_external_features;
use swdstyle::swdloss::LossConfig;
use swdstyle::tensors::{read_fmap, write_fmap, FeatureMap};
use swdstyle::Error;

fn fixture(name: &str) -> PathBuf {
    PathBuf::from(env!("CARGO_MANIFEST_DIR"))
        .join("tests/fixtures")
        .join(name)
}

// Written by an independent writer; values are the f32 roundings of
// -1 + 0.25 i (even i) and 0.1 i (odd i).
#[test]
fn golden_fixture_loads_with_expected_shape_and_values() {
    let map = read_fmap(fixture("golden.fmap")).unwrap();
    assert_eq!(map.layer_id(), 3);
    assert_eq!(map.channels(), 2);
    assert_eq!(map.spatial(), (2, 3));
    let expect: Vec<f64> = (0..12)
        .map(|i| {
            let v = if i % 2 == 0 {
                -1.0 + 0.25 * i as f64
            } else {
                0.1 * i as f64
            };
            v as f32 as f64
        })
        .collect();
    assert_eq!(map.data(), &expect[..]);
    assert_eq!(map.row(1), &[expect[2], expect[3]]);
}

#[test]
fn golden_fixture_rewrites_byte_identically() {
    let bytes = std::fs::read(fixture("golden.fmap")).unwrap();
    let map = FeatureMap::from_fmap_bytes(&bytes).unwrap();
    assert_eq!(map.to_fmap_bytes().unwrap(), bytes);
    let dir = tempfile::tempdir().unwrap();
    let out = dir.path().join("again.fmap");
    write_fmap(&map, &out).unwrap();
    assert_eq!(std::fs::read(out).unwrap(), bytes);
}

#[test]
fn truncated_fixture_is_a_format_error() {
    let bytes = std::fs::read(fixture("golden.fmap")).unwrap();
    let err = FeatureMap::from_fmap_bytes(&bytes[..bytes.len() - 1]).unwrap_err();
    assert!(matches!(err, Error::Format(_)));
    assert!(err.is_format());
}

const EXPORTED_WIDTHS: [usize; 12] = [64, 64, 128, 128, 256, 256, 256, 256, 512, 512, 512, 512];

fn write_stack(dir: &std::path::Path, ids: &[u32]) -> Vec<PathBuf> {
    ids.iter()
        .zip(EXPORTED_WIDTHS)
        .map(|(&id, c)| {
            let side = 2;
            let data = (0..c * side * side)
                .map(|i| (i % 7) as f64 * 0.125)
                .collect();
            let p = dir.join(format!("layer{id:02}.fmap"));
            write_fmap(&FeatureMap::new(id, c, side, side, data).unwrap(), &p).unwrap();
            p
        })
        .collect()
}

#[test]
fn twelve_exported_layers_follow_the_projection_schedule() {
    let dir = tempfile::tempdir().unwrap();
    let ids: Vec<u32> = (1..=12).collect();
    let maps = load_external_features(&write_stack(dir.path(), &ids)).unwrap();
    assert_eq!(maps.len(), 12);
    let config = LossConfig::default();
    let counts: Vec<usize> = maps
        .iter()
        .enumerate()
        .map(|(l, m)| config.projection_count(l, m.channels()))
        .collect();
    assert_eq!(counts, vec![3, 3, 6, 6, 13, 13, 13, 13, 26, 26, 26, 26]);
}

#[test]
fn exported_layers_out_of_order_are_rejected() {
    let dir = tempfile::tempdir().unwrap();
    let mut ids: Vec<u32> = (1..=12).collect();
    ids.swap(3, 4);
    let err = load_external_features(&write_stack(dir.path(), &ids)).unwrap_err();
    assert!(matches!(err, Error::InvalidArgument(_)));
}

#[test]
fn single_trivial_external_layer() {
    let dir = tempfile::tempdir().unwrap();
    let p = dir.path().join("one.fmap");
    write_fmap(&FeatureMap::new(1, 1, 1, 1, vec![0.5]).unwrap(), &p).unwrap();
    let maps = load_external_features(&[p]).unwrap();
    assert_eq!(maps.len(), 1);
    assert_eq!(maps[0].data(), &[0.5]);
}
