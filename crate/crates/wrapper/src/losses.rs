use proactive_autograd::{Graph, Scalar, Tensor, TensorError, Var};

use crate::config::LossWeights;
use crate::{Result, WrapperError};

type GraphResult<T> = std::result::Result<T, TensorError>;

/// Added to the norm product so zero maps give a loss of exactly 1.
pub const COSINE_EPS: f64 = 1e-8;

/// Per-image `1 − cos(a, b)` over every non-batch axis of two `[B, C, H, W]`
/// maps (either may have batch 1 and broadcast). Returns shape `[B]`.
pub fn cosine_loss<T: Scalar>(g: &mut Graph<T>, a: Var, b: Var) -> GraphResult<Var> {
    let axes = [1, 2, 3];
    let dot = g.dot(a, b, &axes, false)?;
    let na = g.l2_norm_axes(a, &axes, false)?;
    let nb = g.l2_norm_axes(b, &axes, false)?;
    let denom = g.mul(na, nb)?;
    let denom = g.add_scalar(denom, COSINE_EPS);
    let cos = g.div(dot, denom)?;
    let neg = g.neg(cos);
    Ok(g.add_scalar(neg, 1.0))
}

/// Template against the ground-truth map, averaged over the batch. Images
/// without any foreground carry no signal and contribute zero.
pub fn loss_encoder<T: Scalar>(g: &mut Graph<T>, template: Var, gt: Var) -> GraphResult<Var> {
    let batch = g.shape(gt)[0];
    let mask: Vec<T> = {
        let gt_val = g.value(gt);
        let per = gt_val.numel() / batch.max(1);
        gt_val
            .data()
            .chunks(per.max(1))
            .map(|c| if c.iter().any(|&v| v != T::zero()) { T::one() } else { T::zero() })
            .collect()
    };
    let per_image = cosine_loss(g, template, gt)?;
    let mask = g.constant(Tensor::new(&[batch], mask)?);
    let masked = g.mul(per_image, mask)?;
    let total = g.sum(masked)?;
    Ok(g.scale(total, 1.0 / batch.max(1) as f64))
}

/// Recovered template against the one that was applied, averaged over the batch.
pub fn loss_decoder<T: Scalar>(g: &mut Graph<T>, recovered: Var, template: Var) -> GraphResult<Var> {
    let per_image = cosine_loss(g, recovered, template)?;
    g.mean(per_image)
}

/// `λ_obj·J_obj + λ_e·J_E + λ_d·J_D`; absent terms are skipped.
pub fn total_loss<T: Scalar>(
    g: &mut Graph<T>,
    j_obj: Var,
    j_enc: Option<Var>,
    j_dec: Option<Var>,
    weights: &LossWeights,
) -> Result<Var> {
    let terms = [("detection", Some(j_obj), weights.obj), ("encoder", j_enc, weights.enc), ("decoder", j_dec, weights.dec)];
    let mut total: Option<Var> = None;
    for (name, term, w) in terms {
        let Some(v) = term else { continue };
        if !g.value(v).all_finite() {
            return Err(WrapperError::NonFinite(name));
        }
        let scaled = g.scale(v, w);
        total = Some(match total {
            None => scaled,
            Some(t) => g.add(t, scaled)?,
        });
    }
    Ok(total.expect("detection term is always present"))
}

/// Scalar version of [`total_loss`].
pub fn weighted_total(j_obj: f64, j_enc: f64, j_dec: f64, weights: &LossWeights, use_decoder: bool) -> Result<f64> {
    for (name, v) in [("detection", j_obj), ("encoder", j_enc), ("decoder", j_dec)] {
        if !v.is_finite() && (name != "decoder" || use_decoder) {
            return Err(WrapperError::NonFinite(name));
        }
    }
    let dec = if use_decoder { weights.dec * j_dec } else { 0.0 };
    Ok(weights.obj * j_obj + weights.enc * j_enc + dec)
}
