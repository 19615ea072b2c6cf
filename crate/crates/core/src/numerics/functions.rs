//! Stand-alone (non-recorded) numeric primitives.

use super::tensor::Tensor;
use crate::error::{Error, Result};

/// Norms below this are treated as zero vectors.
pub const NORM_FLOOR: f64 = 1e-12;
/// Probability floor inside the log of the cross-entropy.
pub const PROB_FLOOR: f64 = 1e-12;

#[inline]
pub fn leaky_relu_scalar(x: f64, slope: f64) -> f64 {
    if x > 0.0 {
        x
    } else {
        slope * x
    }
}

/// Derivative of leaky ReLU; the point `x == 0` takes the negative-side slope.
#[inline]
pub fn leaky_relu_grad(x: f64, slope: f64) -> f64 {
    if x > 0.0 {
        1.0
    } else {
        slope
    }
}

pub fn leaky_relu(x: &Tensor, slope: f64) -> Result<Tensor> {
    if !(slope > 0.0 && slope < 1.0) {
        return Err(Error::Validation(format!(
            "leaky slope {slope} outside (0, 1)"
        )));
    }
    if !x.is_finite() {
        return Err(Error::NonFinite("leaky_relu input".into()));
    }
    Ok(x.map(|v| leaky_relu_scalar(v, slope)))
}

/// Max-shifted softmax over a flat vector. Masked-out entries (`false`) are exactly zero.
pub fn softmax(logits: &[f64], mask: Option<&[bool]>) -> Result<Vec<f64>> {
    if let Some(m) = mask {
        if m.len() != logits.len() {
            return Err(Error::Dimension {
                op: "softmax",
                left: vec![logits.len()],
                right: vec![m.len()],
            });
        }
    }
    let keep = |i: usize| mask.is_none_or(|m| m[i]);
    if (0..logits.len()).any(|i| keep(i) && (logits[i].is_nan() || logits[i] == f64::INFINITY)) {
        return Err(Error::NonFinite("softmax logits".into()));
    }
    let max = (0..logits.len())
        .filter(|&i| keep(i))
        .map(|i| logits[i])
        .fold(f64::NEG_INFINITY, f64::max);
    if max == f64::NEG_INFINITY {
        return Err(Error::Degenerate(
            "softmax needs at least one unmasked finite logit".into(),
        ));
    }
    let mut out: Vec<f64> = (0..logits.len())
        .map(|i| {
            if keep(i) {
                (logits[i] - max).exp()
            } else {
                0.0
            }
        })
        .collect();
    let total: f64 = out.iter().sum();
    for v in &mut out {
        *v /= total;
    }
    Ok(out)
}

/// Cosine of the angle between `u` and `v`; zero when either norm is below [`NORM_FLOOR`].
pub fn cosine_similarity(u: &[f64], v: &[f64]) -> Result<f64> {
    if u.len() != v.len() || u.is_empty() {
        return Err(Error::Dimension {
            op: "cosine_similarity",
            left: vec![u.len()],
            right: vec![v.len()],
        });
    }
    let dot: f64 = u.iter().zip(v).map(|(a, b)| a * b).sum();
    let nu = u.iter().map(|a| a * a).sum::<f64>().sqrt();
    let nv = v.iter().map(|b| b * b).sum::<f64>().sqrt();
    if nu < NORM_FLOOR || nv < NORM_FLOOR {
        return Ok(0.0);
    }
    Ok((dot / (nu * nv)).clamp(-1.0, 1.0))
}

pub fn cross_entropy(probs: &[f64], label: usize) -> Result<f64> {
    if label >= probs.len() {
        return Err(Error::Index {
            index: label,
            len: probs.len(),
        });
    }
    let total: f64 = probs.iter().sum();
    if (total - 1.0).abs() > 1e-6 {
        return Err(Error::Validation(format!(
            "probabilities sum to {total}, expected 1"
        )));
    }
    Ok(-probs[label].max(PROB_FLOOR).ln())
}

/// Index of the largest value; ties resolve to the lowest index.
pub fn argmax(values: &[f64]) -> usize {
    let mut best = 0;
    for (i, &v) in values.iter().enumerate().skip(1) {
        if v > values[best] {
            best = i;
        }
    }
    best
}
