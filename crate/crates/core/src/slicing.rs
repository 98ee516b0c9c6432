//! Projection directions on the unit hypersphere.
//!
//! Directions are normalized standard-normal draws from ChaCha8, a
//! counter-based generator, so a `(seed, dim, count)` triple always yields the
//! same bytes. Per-iteration, per-layer streams are keyed with [`derive_seed`].

use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;
use rand_distr::StandardNormal;
use rayon::prelude::*;

use crate::linalg;
use crate::tensors::FeatureMap;
use crate::{Error, Result};

/// Draws with a norm below this are rejected and redrawn.
const MIN_DRAW_NORM: f64 = 1e-12;

/// `count` unit vectors of dimension `dim`, stored row-major.
#[derive(Debug, Clone, PartialEq)]
pub struct ProjectionSet {
    dim: usize,
    count: usize,
    seed: u64,
    vectors: Vec<f64>,
}

impl ProjectionSet {
    /// Wraps explicit directions. Rows are normalized; zero rows are rejected.
    pub fn from_vectors(dim: usize, vectors: Vec<f64>) -> Result<Self> {
        if dim == 0 || vectors.is_empty() || !vectors.len().is_multiple_of(dim) {
            return Err(Error::Dimension(format!(
                "{} values do not form rows of dimension {dim}",
                vectors.len()
            )));
        }
        let count = vectors.len() / dim;
        let mut vectors = vectors;
        for row in vectors.chunks_exact_mut(dim) {
            let norm = row.iter().map(|v| v * v).sum::<f64>().sqrt();
            if !norm.is_finite() || norm < MIN_DRAW_NORM {
                return Err(Error::InvalidArgument(
                    "projection direction has zero norm".into(),
                ));
            }
            row.iter_mut().for_each(|v| *v /= norm);
        }
        Ok(Self {
            dim,
            count,
            seed: 0,
            vectors,
        })
    }

    pub fn dim(&self) -> usize {
        self.dim
    }

    pub fn count(&self) -> usize {
        self.count
    }

    pub fn seed(&self) -> u64 {
        self.seed
    }

    pub fn vector(&self, k: usize) -> &[f64] {
        &self.vectors[k * self.dim..(k + 1) * self.dim]
    }

    pub fn vectors(&self) -> &[f64] {
        &self.vectors
    }
}

/// Samples `count` i.i.d. uniform directions on the `(dim − 1)`-sphere.
pub fn sample_projections(dim: usize, count: usize, seed: u64) -> Result<ProjectionSet> {
    if dim == 0 {
        return Err(Error::InvalidArgument("projection dim must be >= 1".into()));
    }
    if count == 0 {
        return Err(Error::InvalidArgument(
            "projection count must be >= 1".into(),
        ));
    }
    let mut rng = ChaCha8Rng::seed_from_u64(seed);
    let mut vectors = Vec::with_capacity(dim * count);
    let mut row = vec![0.0; dim];
    for _ in 0..count {
        loop {
            row.iter_mut().for_each(|v| *v = rng.sample(StandardNormal));
            let norm = row.iter().map(|v| v * v).sum::<f64>().sqrt();
            if norm >= MIN_DRAW_NORM {
                vectors.extend(row.iter().map(|v| v / norm));
                break;
            }
        }
    }
    Ok(ProjectionSet {
        dim,
        count,
        seed,
        vectors,
    })
}

/// Mixes a master seed with an iteration and a layer index into a stream seed.
pub fn derive_seed(master: u64, iteration: u64, layer: u64) -> u64 {
    let mut h = splitmix(master ^ 0x243F_6A88_85A3_08D3);
    h = splitmix(h ^ iteration.wrapping_mul(0x9E37_79B9_7F4A_7C15));
    splitmix(h ^ layer.wrapping_mul(0xC2B2_AE3D_27D4_EB4F))
}

fn splitmix(mut z: u64) -> u64 {
    z = z.wrapping_add(0x9E37_79B9_7F4A_7C15);
    z = (z ^ (z >> 30)).wrapping_mul(0xBF58_476D_1CE4_E5B9);
    z = (z ^ (z >> 27)).wrapping_mul(0x94D0_49BB_1331_11EB);
    z ^ (z >> 31)
}

/// Projects every feature row onto every direction: `out[k][m] = ⟨F_m, V_k⟩`.
pub fn project(map: &FeatureMap, proj: &ProjectionSet) -> Result<Vec<Vec<f64>>> {
    let flat = project_rows(map.data(), map.channels(), proj)?;
    let m = map.pixel_count();
    let k = proj.count();
    Ok((0..k)
        .into_par_iter()
        .map(|j| (0..m).map(|i| flat[i * k + j]).collect())
        .collect())
}

/// Row-major `rows × count` projections of a pixel-major `rows × dim` block.
pub(crate) fn project_rows(data: &[f64], dim: usize, proj: &ProjectionSet) -> Result<Vec<f64>> {
    if dim != proj.dim() {
        return Err(Error::Dimension(format!(
            "features have {dim} channels, projections have dim {}",
            proj.dim()
        )));
    }
    let rows = data.len() / dim;
    Ok(linalg::matmul_bt(
        data,
        &proj.vectors,
        rows,
        dim,
        proj.count(),
    ))
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn zero_sphere_has_sign_vectors() {
        let p = sample_projections(1, 32, 9).unwrap();
        assert!(p.vectors().iter().all(|&v| v == 1.0 || v == -1.0));
        assert!(p.vectors().iter().any(|&v| v < 0.0));
    }

    #[test]
    fn layer_one_budget_gives_three_unit_vectors() {
        let p = sample_projections(64, 3, 1).unwrap();
        assert_eq!(p.count(), 3);
        for k in 0..3 {
            let n: f64 = p.vector(k).iter().map(|v| v * v).sum::<f64>().sqrt();
            assert!((n - 1.0).abs() < 1e-6);
        }
    }

    #[test]
    fn sample_mean_is_near_origin() {
        let p = sample_projections(8, 10_000, 3).unwrap();
        for c in 0..8 {
            let mean: f64 = (0..10_000).map(|k| p.vector(k)[c]).sum::<f64>() / 10_000.0;
            assert!(mean.abs() < 0.05, "coordinate {c} mean {mean}");
        }
    }

    #[test]
    fn regeneration_is_bit_identical() {
        let a = sample_projections(13, 7, 77).unwrap();
        let b = sample_projections(13, 7, 77).unwrap();
        assert_eq!(a.vectors(), b.vectors());
        assert_ne!(
            a.vectors(),
            sample_projections(13, 7, 78).unwrap().vectors()
        );
    }

    #[test]
    fn derived_seeds_separate_streams() {
        let s = derive_seed(42, 0, 0);
        assert_ne!(s, derive_seed(42, 1, 0));
        assert_ne!(s, derive_seed(42, 0, 1));
        assert_ne!(derive_seed(42, 1, 0), derive_seed(42, 0, 1));
        assert_eq!(s, derive_seed(42, 0, 0));
    }

    #[test]
    fn rejects_zero_sizes() {
        assert!(sample_projections(0, 3, 1).is_err());
        assert!(sample_projections(3, 0, 1).is_err());
    }

    #[test]
    fn basis_direction_selects_channel() {
        let map = FeatureMap::new(1, 3, 2, 2, (0..12).map(f64::from).collect()).unwrap();
        let e1 = ProjectionSet::from_vectors(3, vec![0.0, 1.0, 0.0]).unwrap();
        let out = project(&map, &e1).unwrap();
        assert_eq!(out, vec![vec![1.0, 4.0, 7.0, 10.0]]);
    }

    #[test]
    fn identical_rows_give_constant_populations() {
        let map = FeatureMap::new(1, 2, 3, 1, [0.3, -0.7].repeat(3)).unwrap();
        let proj = sample_projections(2, 4, 5).unwrap();
        for pop in project(&map, &proj).unwrap() {
            assert!(pop.iter().all(|&v| v == pop[0]));
        }
    }

    #[test]
    fn matches_scalar_dot_products() {
        let data = vec![0.25, -1.5, 2.0, 0.5, -0.75, 1.25];
        let map = FeatureMap::new(1, 2, 3, 1, data.clone()).unwrap();
        let proj = ProjectionSet::from_vectors(2, vec![0.6, 0.8, -0.8, 0.6]).unwrap();
        let out = project(&map, &proj).unwrap();
        for (k, row) in out.iter().enumerate() {
            for m in 0..3 {
                let mut acc = 0.0;
                for c in 0..2 {
                    acc += data[m * 2 + c] * proj.vector(k)[c];
                }
                assert!((row[m] - acc).abs() < 1e-15);
            }
        }
    }

    #[test]
    fn rejects_dimension_mismatch() {
        let map = FeatureMap::new(1, 2, 1, 1, vec![1.0, 2.0]).unwrap();
        let proj = sample_projections(3, 1, 0).unwrap();
        assert!(matches!(project(&map, &proj), Err(Error::Dimension(_))));
    }
}
