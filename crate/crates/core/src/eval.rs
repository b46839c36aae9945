//! Disparity error metrics.

use serde::Serialize;

use crate::error::{Error, Result};
use crate::imagery::DisparityMap;

pub const BAD_THRESHOLDS: [f32; 4] = [1.0, 2.0, 3.0, 4.0];

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize)]
#[serde(rename_all = "snake_case")]
pub enum Region {
    All,
    NonOccluded,
}

#[derive(Debug, Clone, PartialEq, Serialize)]
pub struct MetricReport {
    pub epe: f64,
    /// Fractions with error above 1, 2, 3 and 4 pixels.
    pub bad: [f64; 4],
    /// Error > 3 px and > 5% of ground truth.
    pub d1: f64,
    pub valid: usize,
    pub evaluated: usize,
    pub region: Region,
}

impl MetricReport {
    pub fn bad_at(&self, tau: usize) -> f64 {
        self.bad[tau - 1]
    }
}

pub fn is_d1_outlier(err: f32, gt: f32) -> bool {
    err > 3.0 && err > 0.05 * gt.abs()
}

/// Metrics over pixels where both maps are valid and, if a mask is given,
/// not occluded. Accumulates in `f64` in scan order.
pub fn evaluate(pred: &DisparityMap, gt: &DisparityMap, occlusion: Option<&[bool]>) -> Result<MetricReport> {
    if pred.width() != gt.width() || pred.height() != gt.height() {
        return Err(Error::Dimension(format!(
            "prediction is {}x{}, ground truth is {}x{}",
            pred.width(),
            pred.height(),
            gt.width(),
            gt.height()
        )));
    }
    if let Some(mask) = occlusion {
        if mask.len() != gt.values().len() {
            return Err(Error::Dimension(format!(
                "occlusion mask has {} entries, maps have {}",
                mask.len(),
                gt.values().len()
            )));
        }
    }
    let mut valid = 0usize;
    let mut evaluated = 0usize;
    let mut sum = 0.0f64;
    let mut bad = [0usize; 4];
    let mut d1 = 0usize;
    for i in 0..gt.values().len() {
        if !(gt.validity()[i] && pred.validity()[i]) {
            continue;
        }
        valid += 1;
        if occlusion.is_some_and(|m| m[i]) {
            continue;
        }
        evaluated += 1;
        let g = gt.values()[i];
        let err = (pred.values()[i] - g).abs();
        sum += err as f64;
        for (count, tau) in bad.iter_mut().zip(BAD_THRESHOLDS) {
            if err > tau {
                *count += 1;
            }
        }
        if is_d1_outlier(err, g) {
            d1 += 1;
        }
    }
    if evaluated == 0 {
        return Err(Error::EmptySupport);
    }
    let n = evaluated as f64;
    Ok(MetricReport {
        epe: sum / n,
        bad: bad.map(|c| c as f64 / n),
        d1: d1 as f64 / n,
        valid,
        evaluated,
        region: if occlusion.is_some() {
            Region::NonOccluded
        } else {
            Region::All
        },
    })
}

#[cfg(test)]
mod tests {
    use super::*;

    fn map(values: &[f32]) -> DisparityMap {
        DisparityMap::from_values(values.len(), 1, 1, values.to_vec()).unwrap()
    }

    #[test]
    fn exact_prediction() {
        let gt = map(&[1.0, 5.0, 9.0]);
        let r = evaluate(&gt, &gt, None).unwrap();
        assert_eq!(r.epe, 0.0);
        assert_eq!(r.bad, [0.0; 4]);
        assert_eq!(r.d1, 0.0);
    }

    #[test]
    fn uniform_offset() {
        let gt = map(&[1.0, 5.0, 9.0, 20.0]);
        let pred = map(&[3.0, 7.0, 11.0, 22.0]);
        let r = evaluate(&pred, &gt, None).unwrap();
        assert_eq!(r.epe, 2.0);
        assert_eq!(r.bad_at(1), 1.0);
        assert_eq!(r.bad_at(3), 0.0);
    }

    #[test]
    fn crafted_four_pixels() {
        let gt = map(&[10.0, 10.0, 10.0, 100.0]);
        let pred = map(&[10.5, 11.5, 13.5, 110.0]);
        let r = evaluate(&pred, &gt, None).unwrap();
        assert!((r.epe - 3.875).abs() < 1e-12);
        assert_eq!(r.bad_at(1), 0.75);
        assert_eq!(r.bad_at(3), 0.5);
        // 3.5 on 10 and 10 on 100 both exceed 3 px and 5%
        assert_eq!(r.d1, 0.5);
    }

    #[test]
    fn occlusion_and_validity() {
        let gt = map(&[1.0, 2.0, 3.0]).with_validity(vec![true, true, false]).unwrap();
        let pred = map(&[1.0, 10.0, 3.0]);
        let r = evaluate(&pred, &gt, Some(&[false, true, false])).unwrap();
        assert_eq!((r.valid, r.evaluated, r.region), (2, 1, Region::NonOccluded));
        assert_eq!(r.epe, 0.0);
        assert!(matches!(
            evaluate(&pred, &gt, Some(&[true, true, true])),
            Err(Error::EmptySupport)
        ));
    }

    #[test]
    fn dimension_mismatch() {
        assert!(matches!(
            evaluate(&map(&[1.0]), &map(&[1.0, 2.0]), None),
            Err(Error::Dimension(_))
        ));
    }
}
