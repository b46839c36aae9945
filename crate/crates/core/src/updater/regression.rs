//! Soft-argmax disparity regression, the discounted sequence loss, and their
//! analytic gradients.
//!
//! Per-pixel kernels are generic over the float type: the pipeline runs them
//! in `f32`, gradient checks rerun them in `f64`.

use num_traits::Float;
use rayon::prelude::*;

use crate::cost_volume::{softmax, LocalCostVolume};
use crate::error::{Error, Result};
use crate::imagery::DisparityMap;
use crate::lookup::HypothesisSet;

/// Σ m_j · softmax(c)_j, clamped to [min m, max m].
pub fn soft_argmax<T: Float>(costs: &[T], values: &[T]) -> T {
    let probs = softmax(costs);
    let mut acc = T::zero();
    let mut lo = T::infinity();
    let mut hi = T::neg_infinity();
    for (&p, &m) in probs.iter().zip(values) {
        acc = acc + p * m;
        lo = lo.min(m);
        hi = hi.max(m);
    }
    acc.max(lo).min(hi)
}

/// ∂L/∂c_j = upstream · p_j (m_j − D).
pub fn soft_argmax_gradient<T: Float>(costs: &[T], values: &[T], upstream: T) -> Vec<T> {
    let probs = softmax(costs);
    let mean = probs.iter().zip(values).fold(T::zero(), |acc, (&p, &m)| acc + p * m);
    probs
        .iter()
        .zip(values)
        .map(|(&p, &m)| upstream * p * (m - mean))
        .collect()
}

fn check_shapes(costs: &LocalCostVolume, hypotheses: &HypothesisSet) -> Result<()> {
    if costs.per_level != hypotheses.per_pixel
        || costs.height() != hypotheses.height
        || costs.width() != hypotheses.width
    {
        return Err(Error::Dimension(format!(
            "costs {}x{}x{} vs hypotheses {}x{}x{}",
            costs.per_level,
            costs.height(),
            costs.width(),
            hypotheses.per_pixel,
            hypotheses.height,
            hypotheses.width
        )));
    }
    Ok(())
}

/// Expected disparity under the softmax of the level-0 hypothesis block.
pub fn regress_disparity(costs: &LocalCostVolume, hypotheses: &HypothesisSet, scale: usize) -> Result<DisparityMap> {
    check_shapes(costs, hypotheses)?;
    let values: Vec<f32> = (0..hypotheses.height * hypotheses.width)
        .into_par_iter()
        .map_init(Vec::new, |buf, p| {
            costs.base_costs(p, buf);
            soft_argmax(buf, hypotheses.pixel(p))
        })
        .collect();
    DisparityMap::from_values(hypotheses.width, hypotheses.height, scale, values)
}

/// Gradient of a scalar loss w.r.t. the level-0 cost block, given ∂L/∂D per
/// pixel. Returned channel-major (`per_level` planes), computed in `f64`.
pub fn regress_disparity_gradient(
    costs: &LocalCostVolume,
    hypotheses: &HypothesisSet,
    upstream: &[f64],
) -> Result<Vec<f64>> {
    check_shapes(costs, hypotheses)?;
    let n = hypotheses.height * hypotheses.width;
    if upstream.len() != n {
        return Err(Error::Dimension("upstream gradient length".into()));
    }
    let per_pixel: Vec<Vec<f64>> = (0..n)
        .into_par_iter()
        .map(|p| {
            let mut buf = Vec::new();
            costs.base_costs(p, &mut buf);
            let c: Vec<f64> = buf.iter().map(|&v| v as f64).collect();
            let m: Vec<f64> = hypotheses.pixel(p).iter().map(|&v| v as f64).collect();
            soft_argmax_gradient(&c, &m, upstream[p])
        })
        .collect();
    let mut out = vec![0.0; costs.per_level * n];
    for (p, g) in per_pixel.iter().enumerate() {
        for (j, v) in g.iter().enumerate() {
            out[j * n + p] = *v;
        }
    }
    Ok(out)
}

fn check_gamma(gamma: f64) -> Result<()> {
    if !(gamma > 0.0 && gamma <= 1.0) {
        return Err(Error::param(format!("gamma must lie in (0, 1], got {gamma}")));
    }
    Ok(())
}

/// Σ_i γ^{N−i} · MAE(d_i, d_gt) over `valid` pixels, for raw `f64` maps.
pub fn sequence_loss_raw(predictions: &[Vec<f64>], gt: &[f64], valid: &[bool], gamma: f64) -> Result<f64> {
    check_gamma(gamma)?;
    if predictions.is_empty() {
        return Err(Error::param("no predictions"));
    }
    let count = valid.iter().filter(|v| **v).count();
    if count == 0 {
        return Err(Error::EmptySupport);
    }
    let n = predictions.len();
    let mut loss = 0.0;
    for (i, pred) in predictions.iter().enumerate() {
        if pred.len() != gt.len() || valid.len() != gt.len() {
            return Err(Error::Dimension("prediction size".into()));
        }
        let mae = pred
            .iter()
            .zip(gt)
            .zip(valid)
            .filter(|(_, ok)| **ok)
            .map(|((d, g), _)| (g - d).abs())
            .sum::<f64>()
            / count as f64;
        loss += gamma.powi((n - 1 - i) as i32) * mae;
    }
    Ok(loss)
}

/// ∂L/∂d_i per prediction; the L1 kink at zero error has subgradient 0.
pub fn sequence_loss_gradient(
    predictions: &[Vec<f64>],
    gt: &[f64],
    valid: &[bool],
    gamma: f64,
) -> Result<Vec<Vec<f64>>> {
    check_gamma(gamma)?;
    let count = valid.iter().filter(|v| **v).count();
    if count == 0 {
        return Err(Error::EmptySupport);
    }
    let n = predictions.len();
    predictions
        .iter()
        .enumerate()
        .map(|(i, pred)| {
            if pred.len() != gt.len() || valid.len() != gt.len() {
                return Err(Error::Dimension("prediction size".into()));
            }
            let w = gamma.powi((n - 1 - i) as i32) / count as f64;
            Ok(pred
                .iter()
                .zip(gt)
                .zip(valid)
                .map(|((d, g), ok)| {
                    let e = d - g;
                    if !*ok || e == 0.0 {
                        0.0
                    } else {
                        w * e.signum()
                    }
                })
                .collect())
        })
        .collect()
}

/// Sequence loss over disparity maps; pixels count where the ground truth
/// and every prediction are valid.
pub fn sequence_loss(predictions: &[DisparityMap], gt: &DisparityMap, gamma: f64) -> Result<f64> {
    let mut valid: Vec<bool> = gt.validity().to_vec();
    for pred in predictions {
        if pred.width() != gt.width() || pred.height() != gt.height() || pred.scale() != gt.scale() {
            return Err(Error::Dimension(format!(
                "prediction {}x{}@{} vs ground truth {}x{}@{}",
                pred.width(),
                pred.height(),
                pred.scale(),
                gt.width(),
                gt.height(),
                gt.scale()
            )));
        }
        for (v, ok) in valid.iter_mut().zip(pred.validity()) {
            *v &= ok;
        }
    }
    let to_f64 = |m: &DisparityMap| m.values().iter().map(|&v| v as f64).collect::<Vec<_>>();
    let preds: Vec<Vec<f64>> = predictions.iter().map(to_f64).collect();
    sequence_loss_raw(&preds, &to_f64(gt), &valid, gamma)
}
