//! Multi-peak lookup and the cascade search-range schedule.
//!
//! Each iteration turns the previous costs into probabilities, keeps the `k`
//! most probable hypothesis *values*, lays a window of `2r + 1` unit-spaced
//! samples around each, and samples the pyramid there. Windows are clamped
//! to the disparity range but never shortened, so every pixel always carries
//! exactly `k (2r + 1)` hypotheses.

use std::fmt;
use std::str::FromStr;

use rayon::prelude::*;
use serde::{Deserialize, Serialize};

use crate::cost_volume::{sample_local_cost, softmax, CostPyramid, CostVolume, LocalCostVolume};
use crate::error::{Error, Result};

/// Per-pixel ordered hypotheses `[Ω¹, …, Ωᵏ]`, stored pixel-major.
#[derive(Debug, Clone, PartialEq)]
pub struct HypothesisSet {
    pub k: usize,
    pub radius: usize,
    pub per_pixel: usize,
    pub height: usize,
    pub width: usize,
    pub values: Vec<f32>,
}

impl HypothesisSet {
    pub fn pixel(&self, p: usize) -> &[f32] {
        &self.values[p * self.per_pixel..(p + 1) * self.per_pixel]
    }

    pub fn at(&self, x: usize, y: usize) -> &[f32] {
        self.pixel(y * self.width + x)
    }
}

/// Number of samples per pixel for `k` peaks at radius `r`.
pub const fn hypothesis_count(k: usize, radius: usize) -> usize {
    k * (2 * radius + 1)
}

/// The `k` most probable candidate values, most probable first.
///
/// Ties go to the smaller disparity value, then to the earlier slot.
pub fn top_k_peaks(values: &[f32], probabilities: &[f32], k: usize) -> Result<Vec<f32>> {
    if k == 0 {
        return Err(Error::param("k must be at least 1"));
    }
    if k > values.len() {
        return Err(Error::param(format!("k = {k} exceeds the {} candidates", values.len())));
    }
    debug_assert_eq!(values.len(), probabilities.len());
    let mut order: Vec<usize> = (0..values.len()).collect();
    order.sort_by(|&a, &b| {
        probabilities[b]
            .total_cmp(&probabilities[a])
            .then(values[a].total_cmp(&values[b]))
            .then(a.cmp(&b))
    });
    Ok(order[..k].iter().map(|&i| values[i]).collect())
}

/// Appends `[d − r, …, d + r]` for every peak, clamped to `[lo, hi]`.
pub fn expand_into(peaks: &[f32], radius: usize, lo: f32, hi: f32, out: &mut Vec<f32>) {
    let r = radius as isize;
    for &d in peaks {
        for t in -r..=r {
            out.push((d + t as f32).clamp(lo, hi));
        }
    }
}

pub fn expand_hypotheses(peaks: &[f32], radius: usize, bounds: (f32, f32)) -> Vec<f32> {
    let mut out = Vec::with_capacity(peaks.len() * (2 * radius + 1));
    expand_into(peaks, radius, bounds.0, bounds.1, &mut out);
    out
}

/// What the lookup selects peaks from.
#[derive(Debug, Clone, Copy)]
pub enum LookupSource<'a> {
    /// The initial correlation volume; candidates are the integer bins.
    Initial(&'a CostVolume),
    /// A refined local volume; candidates are the previous hypothesis values
    /// with their level-0 costs.
    Refined {
        hypotheses: &'a HypothesisSet,
        costs: &'a LocalCostVolume,
    },
}

impl LookupSource<'_> {
    fn dims(&self) -> (usize, usize) {
        match self {
            LookupSource::Initial(v) => (v.height(), v.width()),
            LookupSource::Refined { hypotheses, .. } => (hypotheses.height, hypotheses.width),
        }
    }

    fn candidates(&self, p: usize, values: &mut Vec<f32>, costs: &mut Vec<f32>) {
        match self {
            LookupSource::Initial(v) => {
                values.clear();
                values.extend((0..v.depth()).map(|d| d as f32));
                v.costs.gather_pixel(p, costs);
            }
            LookupSource::Refined {
                hypotheses,
                costs: local,
            } => {
                values.clear();
                values.extend_from_slice(hypotheses.pixel(p));
                local.base_costs(p, costs);
            }
        }
    }
}

/// Peak selection and window expansion for every pixel, without sampling.
pub fn select_hypotheses(
    source: LookupSource<'_>,
    k: usize,
    radius: usize,
    max_disparity: f32,
) -> Result<HypothesisSet> {
    let (height, width) = source.dims();
    if let LookupSource::Refined { hypotheses, costs } = source {
        if costs.per_level != hypotheses.per_pixel || costs.height() != height || costs.width() != width {
            return Err(Error::Dimension(
                "refined costs do not match their hypothesis set".into(),
            ));
        }
    }
    let per_pixel = hypothesis_count(k, radius);
    let rows: Vec<Result<Vec<f32>>> = (0..height)
        .into_par_iter()
        .map(|y| {
            let mut values = Vec::new();
            let mut costs = Vec::new();
            let mut row = Vec::with_capacity(width * per_pixel);
            for x in 0..width {
                source.candidates(y * width + x, &mut values, &mut costs);
                let probs = softmax(&costs);
                let peaks = top_k_peaks(&values, &probs, k)?;
                expand_into(&peaks, radius, 0.0, max_disparity, &mut row);
            }
            Ok(row)
        })
        .collect();
    let mut values = Vec::with_capacity(height * width * per_pixel);
    for row in rows {
        values.extend(row?);
    }
    Ok(HypothesisSet {
        k,
        radius,
        per_pixel,
        height,
        width,
        values,
    })
}

/// Softmax → top-k → window expansion → pyramid sampling.
pub fn multi_peak_lookup(
    source: LookupSource<'_>,
    k: usize,
    radius: usize,
    pyramid: &CostPyramid,
) -> Result<(HypothesisSet, LocalCostVolume)> {
    let hypotheses = select_hypotheses(source, k, radius, pyramid.max_disparity())?;
    let local = sample_local_cost(pyramid, &hypotheses)?;
    Ok((hypotheses, local))
}

// ---------------------------------------------------------------------------
// Cascade schedule
// ---------------------------------------------------------------------------

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
pub struct Stage {
    pub radius: usize,
    pub iterations: usize,
}

/// Stage-wise search radii; radii strictly decrease from stage to stage.
#[derive(Debug, Clone, PartialEq, Eq)]
pub struct CascadeSchedule {
    stages: Vec<Stage>,
}

impl CascadeSchedule {
    pub fn new(stages: Vec<Stage>) -> Result<Self> {
        if stages.is_empty() {
            return Err(Error::param("schedule needs at least one stage"));
        }
        if let Some(s) = stages.iter().find(|s| s.iterations == 0) {
            return Err(Error::param(format!(
                "stage with radius {} has zero iterations",
                s.radius
            )));
        }
        for pair in stages.windows(2) {
            if pair[1].radius >= pair[0].radius {
                return Err(Error::param(format!(
                    "radii must strictly decrease, got {} then {}",
                    pair[0].radius, pair[1].radius
                )));
            }
        }
        Ok(Self { stages })
    }

    /// A single stage with a fixed radius.
    pub fn fixed(radius: usize, iterations: usize) -> Result<Self> {
        Self::new(vec![Stage { radius, iterations }])
    }

    pub fn stages(&self) -> &[Stage] {
        &self.stages
    }

    pub fn total(&self) -> usize {
        self.stages.iter().map(|s| s.iterations).sum()
    }

    /// `(radius, stage index)` for the 1-based iteration `i`.
    pub fn radius_at(&self, i: usize) -> Result<(usize, usize)> {
        if i == 0 || i > self.total() {
            return Err(Error::param(format!("iteration {i} outside 1..={}", self.total())));
        }
        let mut end = 0;
        for (idx, s) in self.stages.iter().enumerate() {
            end += s.iterations;
            if i <= end {
                return Ok((s.radius, idx));
            }
        }
        unreachable!("iteration bounded by total")
    }
}

impl Default for CascadeSchedule {
    fn default() -> Self {
        Self {
            stages: vec![
                Stage {
                    radius: 12,
                    iterations: 6,
                },
                Stage {
                    radius: 4,
                    iterations: 10,
                },
                Stage {
                    radius: 2,
                    iterations: 16,
                },
            ],
        }
    }
}

pub fn schedule_radius(i: usize, schedule: &CascadeSchedule) -> Result<(usize, usize)> {
    schedule.radius_at(i)
}

impl FromStr for CascadeSchedule {
    type Err = Error;

    /// Parses `RxCOUNT` terms separated by commas, e.g. `12x6,4x10,2x16`.
    fn from_str(s: &str) -> Result<Self> {
        let mut stages = Vec::new();
        for term in s.split(',') {
            let term = term.trim();
            let (r, n) = term
                .split_once(['x', 'X'])
                .ok_or_else(|| Error::param(format!("schedule term {term:?} is not RxCOUNT")))?;
            let radius = r
                .trim()
                .parse()
                .map_err(|_| Error::param(format!("bad radius in {term:?}")))?;
            let iterations = n
                .trim()
                .parse()
                .map_err(|_| Error::param(format!("bad count in {term:?}")))?;
            stages.push(Stage { radius, iterations });
        }
        Self::new(stages)
    }
}

impl fmt::Display for CascadeSchedule {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        let terms: Vec<String> = self
            .stages
            .iter()
            .map(|s| format!("{}x{}", s.radius, s.iterations))
            .collect();
        f.write_str(&terms.join(","))
    }
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn top_k_direct_selection() {
        let peaks = top_k_peaks(&[0.0, 1.0, 2.0, 3.0], &[0.1, 0.5, 0.1, 0.3], 2).unwrap();
        assert_eq!(peaks, vec![1.0, 3.0]);
    }

    #[test]
    fn top_k_ties_prefer_smaller_disparity() {
        let peaks = top_k_peaks(&[3.0, 1.0, 2.0, 0.0], &[0.25; 4], 2).unwrap();
        assert_eq!(peaks, vec![0.0, 1.0]);
    }

    #[test]
    fn top_k_too_many() {
        assert!(top_k_peaks(&[0.0, 1.0], &[0.5, 0.5], 3).is_err());
        assert!(top_k_peaks(&[0.0], &[1.0], 0).is_err());
    }

    #[test]
    fn expand_centered_window() {
        assert_eq!(
            expand_hypotheses(&[10.0], 2, (0.0, 48.0)),
            vec![8.0, 9.0, 10.0, 11.0, 12.0]
        );
    }

    #[test]
    fn expand_clamps_without_dropping() {
        assert_eq!(
            expand_hypotheses(&[1.0], 4, (0.0, 48.0)),
            vec![0.0, 0.0, 0.0, 0.0, 1.0, 2.0, 3.0, 4.0, 5.0]
        );
    }

    #[test]
    fn hypothesis_counts() {
        assert_eq!(hypothesis_count(3, 12), 75);
        assert_eq!(hypothesis_count(3, 4), 27);
        assert_eq!(hypothesis_count(3, 2), 15);
    }

    #[test]
    fn default_schedule_radii() {
        let s = CascadeSchedule::default();
        let r = |i| s.radius_at(i).unwrap().0;
        assert_eq!([r(6), r(7), r(16), r(17), r(32)], [12, 4, 4, 2, 2]);
        assert_eq!(s.total(), 32);
        let ranges: Vec<usize> = s.stages().iter().map(|st| 2 * st.radius + 1).collect();
        assert_eq!(ranges, vec![25, 9, 5]);
        assert_eq!(s.radius_at(7).unwrap().1, 1);
        assert!(s.radius_at(0).is_err());
        assert!(s.radius_at(33).is_err());
    }

    #[test]
    fn fixed_schedule_is_constant() {
        let s = CascadeSchedule::fixed(4, 32).unwrap();
        assert!((1..=32).all(|i| s.radius_at(i).unwrap() == (4, 0)));
    }

    #[test]
    fn schedule_parsing() {
        let s: CascadeSchedule = "12x6,4x10,2x16".parse().unwrap();
        assert_eq!(s, CascadeSchedule::default());
        assert_eq!(s.to_string(), "12x6,4x10,2x16");
        assert!("4x16,4x16".parse::<CascadeSchedule>().is_err());
        assert!("2x6,4x10".parse::<CascadeSchedule>().is_err());
        assert!("4x0".parse::<CascadeSchedule>().is_err());
        assert!("4-32".parse::<CascadeSchedule>().is_err());
        assert!("".parse::<CascadeSchedule>().is_err());
    }
}
