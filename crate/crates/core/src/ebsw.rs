//! Monte Carlo sliced Wasserstein and its energy-based, importance-sampled variant
//! on general weighted discrete measures.
//!
//! With `d_k = W_p^p(V_k♯μ, V_k♯ν)` for directions `V_k` drawn from a proposal σ₀:
//!
//! ```text
//! SW_hat     = ((1/K) Σ_k d_k)^(1/p)
//! IS-EBSW    = (Σ_k ŵ_k d_k)^(1/p),   ŵ_k ∝ f(d_k) / σ₀(V_k)
//! ```
//!
//! With a uniform proposal and `f = exp` the weights are `softmax(d)`, the
//! same weighting used by [`crate::swdloss::iw_swd`]. For any increasing `f`
//! the weighted mean dominates the plain mean on the same directions, so
//! `IS-EBSW ≥ SW_hat` holds sample by sample.

use std::fmt;
use std::sync::Arc;

use rayon::prelude::*;

use crate::slicing::{sample_projections, ProjectionSet};
use crate::{Error, Result};

/// Finitely supported probability measure on `R^dim`.
#[derive(Debug, Clone, PartialEq)]
pub struct DiscreteMeasure {
    dim: usize,
    support: Vec<f64>,
    weights: Vec<f64>,
}

impl DiscreteMeasure {
    /// Uniform weights `1/n` over the rows of `support`.
    pub fn uniform(dim: usize, support: Vec<f64>) -> Result<Self> {
        if dim == 0 || support.is_empty() || !support.len().is_multiple_of(dim) {
            return Err(Error::Dimension(format!(
                "{} support values do not form points of dimension {dim}",
                support.len()
            )));
        }
        let n = support.len() / dim;
        Self::new(dim, support, vec![1.0 / n as f64; n])
    }

    /// Weights must be non-negative and sum to 1 within `1e-9`.
    pub fn new(dim: usize, support: Vec<f64>, weights: Vec<f64>) -> Result<Self> {
        if dim == 0 || support.is_empty() || support.len() != dim * weights.len() {
            return Err(Error::Dimension(format!(
                "{} support values for {} weights in dimension {dim}",
                support.len(),
                weights.len()
            )));
        }
        if support.iter().chain(&weights).any(|v| !v.is_finite()) {
            return Err(Error::NonFinite("measure"));
        }
        if weights.iter().any(|&w| w < 0.0) {
            return Err(Error::InvalidArgument("negative measure weight".into()));
        }
        let total: f64 = weights.iter().sum();
        if (total - 1.0).abs() > 1e-9 {
            return Err(Error::InvalidArgument(format!(
                "measure weights sum to {total}, expected 1"
            )));
        }
        Ok(Self {
            dim,
            support,
            weights,
        })
    }

    pub fn dim(&self) -> usize {
        self.dim
    }

    pub fn len(&self) -> usize {
        self.weights.len()
    }

    pub fn is_empty(&self) -> bool {
        self.weights.is_empty()
    }

    pub fn weights(&self) -> &[f64] {
        &self.weights
    }

    pub fn point(&self, i: usize) -> &[f64] {
        &self.support[i * self.dim..(i + 1) * self.dim]
    }

    /// Support of the push-forward `V♯μ`.
    pub fn project(&self, direction: &[f64]) -> Vec<f64> {
        self.support
            .chunks_exact(self.dim)
            .map(|x| x.iter().zip(direction).map(|(a, b)| a * b).sum())
            .collect()
    }
}

/// `W_p^p` between two weighted 1D measures by quantile-function coupling.
///
/// Both CDFs are inverted on the merged set of breakpoints, so arbitrary
/// weights and sizes are supported.
pub fn wasserstein_1d_pow(x: &[f64], a: &[f64], y: &[f64], b: &[f64], p: f64) -> f64 {
    let ox = sort_index(x);
    let oy = sort_index(y);
    let (mut i, mut j) = (0usize, 0usize);
    let (mut ca, mut cb) = (a[ox[0]], b[oy[0]]);
    let mut prev = 0.0;
    let mut cost = 0.0;
    loop {
        let t = ca.min(cb);
        let gap = (x[ox[i]] - y[oy[j]]).abs();
        cost += (t - prev).max(0.0) * gap.powf(p);
        prev = t;
        let advance_i = ca <= cb;
        let advance_j = cb <= ca;
        if advance_i {
            i += 1;
            if i == ox.len() {
                break;
            }
            ca += a[ox[i]];
        }
        if advance_j {
            j += 1;
            if j == oy.len() {
                break;
            }
            cb += b[oy[j]];
        }
    }
    cost
}

fn sort_index(v: &[f64]) -> Vec<usize> {
    let mut idx: Vec<usize> = (0..v.len()).collect();
    idx.sort_by(|&i, &j| v[i].total_cmp(&v[j]));
    idx
}

fn check_pair(mu: &DiscreteMeasure, nu: &DiscreteMeasure, p: f64) -> Result<()> {
    if mu.dim != nu.dim {
        return Err(Error::Dimension(format!(
            "measures of dimension {} and {}",
            mu.dim, nu.dim
        )));
    }
    if !(p >= 1.0 && p.is_finite()) {
        return Err(Error::InvalidArgument(format!(
            "order p must be >= 1, got {p}"
        )));
    }
    Ok(())
}

/// `d_k = W_p^p(V_k♯μ, V_k♯ν)` for every direction of `proj`.
pub fn projected_distances(
    mu: &DiscreteMeasure,
    nu: &DiscreteMeasure,
    p: f64,
    proj: &ProjectionSet,
) -> Result<Vec<f64>> {
    check_pair(mu, nu, p)?;
    if proj.dim() != mu.dim {
        return Err(Error::Dimension(format!(
            "projections of dim {} for measures of dim {}",
            proj.dim(),
            mu.dim
        )));
    }
    Ok((0..proj.count())
        .into_par_iter()
        .map(|k| {
            let v = proj.vector(k);
            wasserstein_1d_pow(&mu.project(v), &mu.weights, &nu.project(v), &nu.weights, p)
        })
        .collect())
}

/// Monte Carlo sliced Wasserstein with `K` uniform directions.
pub fn sw_hat(
    mu: &DiscreteMeasure,
    nu: &DiscreteMeasure,
    p: f64,
    k: usize,
    seed: u64,
) -> Result<f64> {
    check_pair(mu, nu, p)?;
    let proj = sample_projections(mu.dim, k, seed)?;
    let d = projected_distances(mu, nu, p, &proj)?;
    Ok((d.iter().sum::<f64>() / k as f64).powf(1.0 / p))
}

#[derive(Clone)]
enum EnergyKind {
    Exponential,
    Identity,
    Polynomial(f64),
    Constant,
    Custom(Arc<dyn Fn(f64) -> f64 + Send + Sync>),
}

/// Increasing energy `f: [0, ∞) → (0, ∞)` that shapes the slicing distribution.
#[derive(Clone)]
pub struct EnergyFunction {
    kind: EnergyKind,
}

impl fmt::Debug for EnergyFunction {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        let name = match &self.kind {
            EnergyKind::Exponential => "exp".to_string(),
            EnergyKind::Identity => "identity".to_string(),
            EnergyKind::Polynomial(q) => format!("poly({q})"),
            EnergyKind::Constant => "constant".to_string(),
            EnergyKind::Custom(_) => "custom".to_string(),
        };
        write!(f, "EnergyFunction({name})")
    }
}

impl EnergyFunction {
    /// `f(x) = e^x`; weights become a softmax of the distances.
    pub fn exponential() -> Self {
        Self {
            kind: EnergyKind::Exponential,
        }
    }

    /// `f(x) = x`. Zero at the origin; all-zero distances fall back to uniform weights.
    pub fn identity() -> Self {
        Self {
            kind: EnergyKind::Identity,
        }
    }

    /// `f(x) = x^q` for `q >= 0`.
    pub fn polynomial(q: f64) -> Result<Self> {
        if !q.is_finite() || q < 0.0 {
            return Err(Error::InvalidArgument(format!(
                "polynomial energy needs q >= 0, got {q} (decreasing)"
            )));
        }
        Ok(Self {
            kind: EnergyKind::Polynomial(q),
        })
    }

    /// `f(x) = 1`: every direction weighs the same and IS-EBSW reduces to SW.
    pub fn constant() -> Self {
        Self {
            kind: EnergyKind::Constant,
        }
    }

    /// Arbitrary energy, probed on `[0, 64]` and rejected if it ever decreases
    /// or leaves `[0, ∞)`.
    pub fn custom(f: impl Fn(f64) -> f64 + Send + Sync + 'static) -> Result<Self> {
        let mut prev = f(0.0);
        for i in 0..=256 {
            let x = i as f64 * 0.25;
            let y = f(x);
            if !y.is_finite() || y < 0.0 {
                return Err(Error::InvalidArgument(format!(
                    "energy must be finite and non-negative, f({x}) = {y}"
                )));
            }
            if y < prev {
                return Err(Error::InvalidArgument(format!(
                    "energy function decreases near x = {x}"
                )));
            }
            prev = y;
        }
        Ok(Self {
            kind: EnergyKind::Custom(Arc::new(f)),
        })
    }

    pub fn eval(&self, x: f64) -> f64 {
        match &self.kind {
            EnergyKind::Exponential => x.exp(),
            EnergyKind::Identity => x,
            EnergyKind::Polynomial(q) => x.powf(*q),
            EnergyKind::Constant => 1.0,
            EnergyKind::Custom(f) => f(x),
        }
    }

    /// Normalized `f(d_k) / σ₀(V_k)`.
    fn weights(&self, distances: &[f64], proposal: Option<&[f64]>) -> Vec<f64> {
        let k = distances.len();
        let raw: Vec<f64> = match &self.kind {
            // Shift by the max before exponentiating; the shift cancels in the ratio.
            EnergyKind::Exponential => {
                let max = distances.iter().copied().fold(f64::NEG_INFINITY, f64::max);
                distances.iter().map(|d| (d - max).exp()).collect()
            }
            _ => distances.iter().map(|&d| self.eval(d)).collect(),
        };
        let raw: Vec<f64> = match proposal {
            Some(density) => raw.iter().zip(density).map(|(w, s)| w / s).collect(),
            None => raw,
        };
        let total: f64 = raw.iter().sum();
        if total > 0.0 && total.is_finite() {
            raw.into_iter().map(|w| w / total).collect()
        } else {
            vec![1.0 / k as f64; k]
        }
    }
}

/// IS-EBSW over given per-direction distances (uniform proposal).
pub fn is_ebsw_from_distances(
    distances: &[f64],
    p: f64,
    f: &EnergyFunction,
) -> Result<(f64, Vec<f64>)> {
    if distances.is_empty() {
        return Err(Error::Empty("no projected distances"));
    }
    let w = f.weights(distances, None);
    let value: f64 = w.iter().zip(distances).map(|(w, d)| w * d).sum();
    Ok((value.powf(1.0 / p), w))
}

/// Importance-sampled energy-based SW with `K` uniform directions.
pub fn is_ebsw(
    mu: &DiscreteMeasure,
    nu: &DiscreteMeasure,
    p: f64,
    k: usize,
    f: &EnergyFunction,
    seed: u64,
) -> Result<(f64, Vec<f64>)> {
    check_pair(mu, nu, p)?;
    let proj = sample_projections(mu.dim, k, seed)?;
    is_ebsw_on(mu, nu, p, &proj, f)
}

/// IS-EBSW on caller-supplied directions, assumed drawn uniformly.
pub fn is_ebsw_on(
    mu: &DiscreteMeasure,
    nu: &DiscreteMeasure,
    p: f64,
    proj: &ProjectionSet,
    f: &EnergyFunction,
) -> Result<(f64, Vec<f64>)> {
    let d = projected_distances(mu, nu, p, proj)?;
    is_ebsw_from_distances(&d, p, f)
}

/// IS-EBSW with directions drawn from a non-uniform proposal whose density at
/// each direction is `proposal_density[k]`.
pub fn is_ebsw_with_proposal(
    mu: &DiscreteMeasure,
    nu: &DiscreteMeasure,
    p: f64,
    proj: &ProjectionSet,
    proposal_density: &[f64],
    f: &EnergyFunction,
) -> Result<(f64, Vec<f64>)> {
    if proposal_density.len() != proj.count() {
        return Err(Error::Dimension(format!(
            "{} proposal densities for {} directions",
            proposal_density.len(),
            proj.count()
        )));
    }
    if proposal_density
        .iter()
        .any(|&s| !(s > 0.0 && s.is_finite()))
    {
        return Err(Error::InvalidArgument(
            "proposal density must be positive".into(),
        ));
    }
    let d = projected_distances(mu, nu, p, proj)?;
    let w = f.weights(&d, Some(proposal_density));
    let value: f64 = w.iter().zip(&d).map(|(w, d)| w * d).sum();
    Ok((value.powf(1.0 / p), w))
}

/// SW and exponential-energy EBSW on one shared direction sample.
#[derive(Debug, Clone, Copy, PartialEq)]
pub struct BoundCheck {
    pub sw: f64,
    pub ebsw: f64,
    pub holds: bool,
}

pub fn bound_check(
    mu: &DiscreteMeasure,
    nu: &DiscreteMeasure,
    p: f64,
    k: usize,
    seed: u64,
) -> Result<BoundCheck> {
    check_pair(mu, nu, p)?;
    let proj = sample_projections(mu.dim, k, seed)?;
    let d = projected_distances(mu, nu, p, &proj)?;
    let sw = (d.iter().sum::<f64>() / k as f64).powf(1.0 / p);
    let (ebsw, _) = is_ebsw_from_distances(&d, p, &EnergyFunction::exponential())?;
    Ok(BoundCheck {
        sw,
        ebsw,
        holds: ebsw >= sw - 1e-12,
    })
}

#[cfg(test)]
mod tests {
    use super::*;

    fn measure(dim: usize, pts: &[f64]) -> DiscreteMeasure {
        DiscreteMeasure::uniform(dim, pts.to_vec()).unwrap()
    }

    #[test]
    fn weighted_1d_matches_hand_values() {
        // Uniform equal-size: sorted matching.
        let c = wasserstein_1d_pow(&[0.0, 2.0], &[0.5, 0.5], &[3.0, 1.0], &[0.5, 0.5], 2.0);
        assert!((c - 1.0).abs() < 1e-15);
        // Point mass vs two points: W1 = 0.5*1 + 0.5*1.
        let c = wasserstein_1d_pow(&[0.0], &[1.0], &[-1.0, 1.0], &[0.5, 0.5], 1.0);
        assert!((c - 1.0).abs() < 1e-15);
        // Unequal weights: 0.25 mass moves 0->1 and 0.75 mass moves 0->2 (W1).
        let c = wasserstein_1d_pow(&[0.0], &[1.0], &[1.0, 2.0], &[0.25, 0.75], 1.0);
        assert!((c - 1.75).abs() < 1e-15);
    }

    #[test]
    fn sw_hat_identity_and_one_dim() {
        let mu = measure(2, &[0.0, 1.0, 2.0, -1.0, 0.5, 0.5]);
        assert_eq!(sw_hat(&mu, &mu, 2.0, 16, 3).unwrap(), 0.0);

        let a = measure(1, &[0.0, 1.0, 5.0]);
        let b = measure(1, &[2.0, 2.0, 3.0]);
        for p in [1.0, 2.0, 3.0] {
            let exact = wasserstein_1d_pow(
                &[0.0, 1.0, 5.0],
                a.weights(),
                &[2.0, 2.0, 3.0],
                b.weights(),
                p,
            )
            .powf(1.0 / p);
            for k in [1, 7] {
                assert!((sw_hat(&a, &b, p, k, 11).unwrap() - exact).abs() < 1e-12);
            }
        }
    }

    #[test]
    fn single_direction_and_constant_energy() {
        let mu = measure(3, &[0.0, 1.0, 2.0, 1.0, -1.0, 0.0]);
        let nu = measure(3, &[1.0, 1.0, 1.0, 0.0, 0.0, 2.0]);
        let proj = sample_projections(3, 1, 9).unwrap();
        let d = projected_distances(&mu, &nu, 2.0, &proj).unwrap();
        let (v, w) = is_ebsw(&mu, &nu, 2.0, 1, &EnergyFunction::exponential(), 9).unwrap();
        assert_eq!(w, vec![1.0]);
        assert!((v - d[0].sqrt()).abs() < 1e-15);

        let (v, w) = is_ebsw(&mu, &nu, 2.0, 32, &EnergyFunction::constant(), 4).unwrap();
        assert!(w.iter().all(|&x| (x - 1.0 / 32.0).abs() < 1e-15));
        assert!((v - sw_hat(&mu, &nu, 2.0, 32, 4).unwrap()).abs() < 1e-12);
    }

    #[test]
    fn exponential_energy_on_hand_distances() {
        let (v, w) =
            is_ebsw_from_distances(&[0.0, 3f64.ln()], 1.0, &EnergyFunction::exponential()).unwrap();
        assert!((w[0] - 0.25).abs() < 1e-15 && (w[1] - 0.75).abs() < 1e-15);
        assert!((v - 0.75 * 3f64.ln()).abs() < 1e-15);
    }

    #[test]
    fn energy_validation() {
        assert!(EnergyFunction::polynomial(-1.0).is_err());
        assert!(EnergyFunction::polynomial(2.0).is_ok());
        assert!(EnergyFunction::custom(|x| (-x).exp()).is_err());
        assert!(EnergyFunction::custom(|x| 1.0 + x.sqrt()).is_ok());
        assert_eq!(EnergyFunction::identity().eval(2.5), 2.5);
    }

    #[test]
    fn identity_energy_with_zero_distances_is_uniform() {
        let (v, w) = is_ebsw_from_distances(&[0.0, 0.0], 2.0, &EnergyFunction::identity()).unwrap();
        assert_eq!(v, 0.0);
        assert_eq!(w, vec![0.5, 0.5]);
    }

    #[test]
    fn bound_check_cases() {
        let mu = measure(2, &[0.0, 0.0, 1.0, 1.0]);
        let b = bound_check(&mu, &mu, 2.0, 8, 1).unwrap();
        assert_eq!((b.sw, b.ebsw, b.holds), (0.0, 0.0, true));

        // Measures in 1D: all directions give the same distance -> equality.
        let a = measure(1, &[0.0, 1.0]);
        let c = measure(1, &[2.0, 4.0]);
        let b = bound_check(&a, &c, 2.0, 10, 2).unwrap();
        assert!((b.sw - b.ebsw).abs() < 1e-12 && b.holds);
    }

    #[test]
    fn non_uniform_proposal_reweights() {
        let mu = measure(2, &[0.0, 0.0, 1.0, 0.0]);
        let nu = measure(2, &[0.0, 1.0, 0.0, 2.0]);
        let proj = ProjectionSet::from_vectors(2, vec![1.0, 0.0, 0.0, 1.0]).unwrap();
        let uniform = is_ebsw_on(&mu, &nu, 1.0, &proj, &EnergyFunction::constant()).unwrap();
        let skewed = is_ebsw_with_proposal(
            &mu,
            &nu,
            1.0,
            &proj,
            &[1.0, 3.0],
            &EnergyFunction::constant(),
        )
        .unwrap();
        assert!((uniform.1[0] - 0.5).abs() < 1e-15);
        assert!((skewed.1[0] - 0.75).abs() < 1e-15);
        assert!(
            is_ebsw_with_proposal(&mu, &nu, 1.0, &proj, &[1.0], &EnergyFunction::constant())
                .is_err()
        );
    }

    #[test]
    fn rejects_bad_inputs() {
        let a = measure(2, &[0.0, 0.0]);
        let b = measure(3, &[0.0, 0.0, 0.0]);
        assert!(matches!(
            sw_hat(&a, &b, 2.0, 4, 0),
            Err(Error::Dimension(_))
        ));
        assert!(sw_hat(&a, &a, 2.0, 0, 0).is_err());
        assert!(sw_hat(&a, &a, 0.5, 4, 0).is_err());
        assert!(DiscreteMeasure::new(1, vec![0.0, 1.0], vec![0.7, 0.7]).is_err());
        assert!(DiscreteMeasure::new(1, vec![0.0, 1.0], vec![1.5, -0.5]).is_err());
    }
}
