//! Adaptive instance normalization and reference-anchored shared attention.
//!
//! Matrices are `tokens × features`. Statistics are taken per feature over
//! tokens (the instance-norm convention).

use ndarray::{concatenate, Array1, Array2, ArrayView2, Axis};

use crate::{Error, Result};

/// Guard added to `σ(x)` in the AdaIN denominator.
pub const ADAIN_EPS: f64 = 1e-5;

/// Per-column mean and population standard deviation.
pub fn column_stats(x: ArrayView2<'_, f64>) -> (Array1<f64>, Array1<f64>) {
    let mean = x.mean_axis(Axis(0)).expect("non-empty");
    let std = x.std_axis(Axis(0), 0.0);
    (mean, std)
}

/// `σ(y)·(x − μ(x))/(σ(x) + ε) + μ(y)`, per feature.
pub fn adain(x: ArrayView2<'_, f64>, y: ArrayView2<'_, f64>) -> Result<Array2<f64>> {
    if x.nrows() == 0 || y.nrows() == 0 || x.ncols() == 0 {
        return Err(Error::Empty("adain input"));
    }
    if x.ncols() != y.ncols() {
        return Err(Error::Dimension(format!(
            "adain feature dims {} and {}",
            x.ncols(),
            y.ncols()
        )));
    }
    let (mx, sx) = column_stats(x);
    let (my, sy) = column_stats(y);
    let scale = &sy / &(sx + ADAIN_EPS);
    Ok((&x - &mx) * &scale + &my)
}

/// Participant in shared attention.
#[derive(Debug, Clone, PartialEq)]
pub struct AttentionBlock {
    pub queries: Array2<f64>,
    pub keys: Array2<f64>,
    pub values: Array2<f64>,
}

impl AttentionBlock {
    pub fn new(queries: Array2<f64>, keys: Array2<f64>, values: Array2<f64>) -> Result<Self> {
        if queries.ncols() != keys.ncols() {
            return Err(Error::Dimension(format!(
                "query dim {} != key dim {}",
                queries.ncols(),
                keys.ncols()
            )));
        }
        if keys.nrows() != values.nrows() {
            return Err(Error::Dimension(format!(
                "{} keys for {} values",
                keys.nrows(),
                values.nrows()
            )));
        }
        Ok(Self {
            queries,
            keys,
            values,
        })
    }

    /// A reference with no tokens.
    pub fn empty(head_dim: usize, value_dim: usize) -> Self {
        Self {
            queries: Array2::zeros((0, head_dim)),
            keys: Array2::zeros((0, head_dim)),
            values: Array2::zeros((0, value_dim)),
        }
    }

    pub fn tokens(&self) -> usize {
        self.keys.nrows()
    }

    pub fn head_dim(&self) -> usize {
        self.keys.ncols()
    }
}

/// Row-wise softmax.
fn softmax_rows(mut logits: Array2<f64>) -> Array2<f64> {
    for mut row in logits.rows_mut() {
        let max = row.fold(f64::NEG_INFINITY, |a, &b| a.max(b));
        row.mapv_inplace(|v| (v - max).exp());
        let total = row.sum();
        row /= total;
    }
    logits
}

/// Attention probabilities of the target's queries over `[reference; target]` keys.
pub fn shared_attention_weights(
    target: &AttentionBlock,
    reference: &AttentionBlock,
) -> Result<Array2<f64>> {
    Ok(anchored(target, reference)?.0)
}

/// Target queries and keys are AdaIN-normalized to the reference's; keys and
/// values are prefixed with the reference's, so the target attends to both.
/// Values are concatenated without normalization. An empty reference gives
/// plain self-attention.
pub fn shared_attention(
    target: &AttentionBlock,
    reference: &AttentionBlock,
) -> Result<Array2<f64>> {
    let (weights, values) = anchored(target, reference)?;
    Ok(weights.dot(&values))
}

fn anchored(
    target: &AttentionBlock,
    reference: &AttentionBlock,
) -> Result<(Array2<f64>, Array2<f64>)> {
    if target.tokens() == 0 || target.queries.nrows() == 0 {
        return Err(Error::Empty("target attention block"));
    }
    let d = target.head_dim();
    if reference.head_dim() != d || reference.queries.ncols() != d {
        return Err(Error::Dimension(format!(
            "reference head dim {} != target head dim {d}",
            reference.head_dim()
        )));
    }
    if reference.tokens() > 0 && reference.values.ncols() != target.values.ncols() {
        return Err(Error::Dimension(
            "reference and target value dims differ".into(),
        ));
    }
    let (q, k_rt, v_rt) = if reference.tokens() == 0 {
        (
            target.queries.clone(),
            target.keys.clone(),
            target.values.clone(),
        )
    } else {
        let q = adain(target.queries.view(), reference.queries.view())?;
        let k = adain(target.keys.view(), reference.keys.view())?;
        let k_rt =
            concatenate(Axis(0), &[reference.keys.view(), k.view()]).expect("matching key widths");
        let v_rt = concatenate(Axis(0), &[reference.values.view(), target.values.view()])
            .expect("matching value widths");
        (q, k_rt, v_rt)
    };
    let logits = q.dot(&k_rt.t()) / (d as f64).sqrt();
    Ok((softmax_rows(logits), v_rt))
}
