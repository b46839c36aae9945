//! Deterministic stand-ins for a trained updater.

use crate::error::{Error, Result};
use crate::imagery::DisparityMap;
use crate::lookup::HypothesisSet;
use crate::tensor::Tensor3;

/// ΔC ≡ 0 over the level-0 hypothesis block.
pub fn null_update(hypotheses: &HypothesisSet) -> Tensor3 {
    Tensor3::zeros(hypotheses.per_pixel, hypotheses.height, hypotheses.width)
}

/// Median of `map` over a `window`×`window` neighborhood (edge-replicated).
pub fn window_median(map: &DisparityMap, x: usize, y: usize, window: usize) -> f32 {
    let half = (window / 2) as isize;
    let (w, h) = (map.width() as isize, map.height() as isize);
    let mut vals = Vec::with_capacity(window * window);
    for dy in -half..=half {
        for dx in -half..=half {
            let sx = (x as isize + dx).clamp(0, w - 1) as usize;
            let sy = (y as isize + dy).clamp(0, h - 1) as usize;
            vals.push(map.get(sx, sy));
        }
    }
    vals.sort_by(f32::total_cmp);
    vals[vals.len() / 2]
}

/// The hypothesis value nearest to `target` (ties go to the smaller value).
pub fn nearest_value(values: &[f32], target: f32) -> f32 {
    let mut best = values[0];
    for &v in &values[1..] {
        let (dv, db) = ((v - target).abs(), (best - target).abs());
        if dv < db || (dv == db && v < best) {
            best = v;
        }
    }
    best
}

/// +λ on every slot holding the hypothesis nearest the local median of
/// `d_prev`, −λ/(N−1) on the rest.
pub fn neighborhood_sharpen(
    hypotheses: &HypothesisSet,
    d_prev: &DisparityMap,
    lambda: f32,
    window: usize,
) -> Result<Tensor3> {
    if lambda.is_nan() || lambda < 0.0 {
        return Err(Error::param(format!("lambda must be non-negative, got {lambda}")));
    }
    if window == 0 || window.is_multiple_of(2) {
        return Err(Error::param(format!("window must be odd, got {window}")));
    }
    if d_prev.width() != hypotheses.width || d_prev.height() != hypotheses.height {
        return Err(Error::Dimension("previous disparity vs hypotheses".into()));
    }
    let n = hypotheses.per_pixel;
    let mut delta = null_update(hypotheses);
    if lambda == 0.0 {
        return Ok(delta);
    }
    let penalty = if n > 1 { -lambda / (n - 1) as f32 } else { 0.0 };
    let plane = hypotheses.height * hypotheses.width;
    for y in 0..hypotheses.height {
        for x in 0..hypotheses.width {
            let p = y * hypotheses.width + x;
            let values = hypotheses.pixel(p);
            let target = nearest_value(values, window_median(d_prev, x, y, window));
            for (j, &v) in values.iter().enumerate() {
                delta.data[j * plane + p] = if v == target { lambda } else { penalty };
            }
        }
    }
    Ok(delta)
}

#[cfg(test)]
mod tests {
    use super::*;

    fn hyps(values: Vec<f32>, per_pixel: usize, w: usize, h: usize) -> HypothesisSet {
        HypothesisSet {
            k: 1,
            radius: per_pixel / 2,
            per_pixel,
            height: h,
            width: w,
            values,
        }
    }

    #[test]
    fn zero_lambda_is_null() {
        let hs = hyps(vec![1.0, 2.0, 3.0], 3, 1, 1);
        let d = DisparityMap::filled(1, 1, 4, 2.0);
        assert_eq!(neighborhood_sharpen(&hs, &d, 0.0, 3).unwrap(), null_update(&hs));
    }

    #[test]
    fn constant_prev_boosts_nearest() {
        let hs = hyps((0..2).flat_map(|_| [4.0, 5.0, 6.0, 7.0, 8.0]).collect(), 5, 2, 1);
        let d = DisparityMap::filled(2, 1, 4, 6.4);
        let delta = neighborhood_sharpen(&hs, &d, 1.0, 3).unwrap();
        for p in 0..2 {
            assert_eq!(delta.data[2 * 2 + p], 1.0);
            assert_eq!(delta.data[p], -0.25);
        }
    }

    #[test]
    fn duplicate_slots_all_boosted() {
        let hs = hyps(vec![0.0, 0.0, 1.0, 2.0], 4, 1, 1);
        let d = DisparityMap::filled(1, 1, 4, 0.1);
        let delta = neighborhood_sharpen(&hs, &d, 0.9, 1).unwrap();
        assert_eq!(&delta.data[..2], &[0.9, 0.9]);
        assert!(delta.data[2..].iter().all(|v| (v + 0.3).abs() < 1e-6));
    }

    #[test]
    fn nearest_value_tie_prefers_smaller() {
        assert_eq!(nearest_value(&[3.0, 1.0, 2.0], 1.5), 1.0);
    }

    #[test]
    fn rejects_bad_parameters() {
        let hs = hyps(vec![1.0], 1, 1, 1);
        let d = DisparityMap::filled(1, 1, 4, 1.0);
        assert!(neighborhood_sharpen(&hs, &d, -1.0, 3).is_err());
        assert!(neighborhood_sharpen(&hs, &d, 1.0, 2).is_err());
    }
}
