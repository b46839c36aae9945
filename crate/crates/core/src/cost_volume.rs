//! Correlation volume, the frozen disparity pyramid, and sampling of local
//! cost volumes at fractional hypotheses.

use std::hash::{DefaultHasher, Hash, Hasher};

use num_traits::Float;
use rayon::prelude::*;

use crate::error::{Error, Result};
use crate::features::FeatureMap;
use crate::lookup::HypothesisSet;
use crate::tensor::Tensor3;

/// Cost assigned when the matching column falls left of the right image.
pub const OUT_OF_FRAME_COST: f32 = -1.0;

/// D×H×W correlation costs; bin `d` is disparity `d` at this volume's scale.
#[derive(Debug, Clone, PartialEq)]
pub struct CostVolume {
    pub scale: usize,
    pub costs: Tensor3,
}

impl CostVolume {
    pub fn depth(&self) -> usize {
        self.costs.channels
    }

    pub fn height(&self) -> usize {
        self.costs.height
    }

    pub fn width(&self) -> usize {
        self.costs.width
    }

    pub fn at(&self, d: usize, x: usize, y: usize) -> f32 {
        self.costs.at(d, y, x)
    }

    /// The cost curve over all bins at one pixel.
    pub fn curve(&self, x: usize, y: usize) -> Vec<f32> {
        let mut out = Vec::with_capacity(self.depth());
        self.costs.gather_pixel(y * self.width() + x, &mut out);
        out
    }

    /// `disparity,cost` rows for one pixel (disparity in bins of this volume).
    pub fn curve_csv(&self, x: usize, y: usize) -> String {
        let mut s = String::from("disparity,cost\n");
        for (d, c) in self.curve(x, y).iter().enumerate() {
            s.push_str(&format!("{d},{c}\n"));
        }
        s
    }
}

/// C(d, x, y) = ⟨f_l(x, y), f_r(x − d, y)⟩ for d = 0..=d_max/scale.
pub fn build_correlation_volume(left: &FeatureMap, right: &FeatureMap, d_max: usize) -> Result<CostVolume> {
    if left.scale != right.scale || left.channels() != right.channels() || !left.tensor.same_spatial(&right.tensor) {
        return Err(Error::param(format!(
            "feature maps differ: {}x{}x{} @{} vs {}x{}x{} @{}",
            left.channels(),
            left.height(),
            left.width(),
            left.scale,
            right.channels(),
            right.height(),
            right.width(),
            right.scale
        )));
    }
    if !d_max.is_multiple_of(left.scale) {
        return Err(Error::param(format!(
            "d_max {d_max} is not a multiple of scale {}",
            left.scale
        )));
    }
    let depth = d_max / left.scale + 1;
    let (h, w, c) = (left.height(), left.width(), left.channels());
    let n = h * w;
    let mut costs = Tensor3::zeros(depth, h, w);
    costs.data.par_chunks_mut(n).enumerate().for_each(|(d, plane)| {
        for y in 0..h {
            for x in 0..w {
                plane[y * w + x] = if x < d {
                    OUT_OF_FRAME_COST
                } else {
                    let (pl, pr) = (y * w + x, y * w + x - d);
                    let mut acc = 0.0f32;
                    for ch in 0..c {
                        acc += left.tensor.data[ch * n + pl] * right.tensor.data[ch * n + pr];
                    }
                    acc
                };
            }
        }
    });
    Ok(CostVolume {
        scale: left.scale,
        costs,
    })
}

/// Disparity-pooled pyramid; level ℓ (0-based) has stride 2^ℓ in base bins.
///
/// There is no mutable access: the pyramid never changes once built.
#[derive(Debug, Clone, PartialEq)]
pub struct CostPyramid {
    levels: Vec<CostVolume>,
}

pub const DEFAULT_PYRAMID_LEVELS: usize = 2;

pub fn build_pyramid(c_init: &CostVolume) -> CostPyramid {
    build_pyramid_levels(c_init, DEFAULT_PYRAMID_LEVELS)
}

/// Each level averages bin pairs of the previous one (kernel = stride = 2),
/// dropping a trailing odd bin.
pub fn build_pyramid_levels(c_init: &CostVolume, levels: usize) -> CostPyramid {
    let mut out = vec![c_init.clone()];
    while out.len() < levels.max(1) {
        let prev = &out[out.len() - 1];
        let depth = prev.depth() / 2;
        if depth == 0 {
            break;
        }
        let n = prev.costs.plane_len();
        let mut costs = Tensor3::zeros(depth, prev.height(), prev.width());
        costs.data.par_chunks_mut(n).enumerate().for_each(|(d, plane)| {
            let a = prev.costs.plane(2 * d);
            let b = prev.costs.plane(2 * d + 1);
            for i in 0..n {
                plane[i] = 0.5 * (a[i] + b[i]);
            }
        });
        out.push(CostVolume {
            scale: prev.scale,
            costs,
        });
    }
    CostPyramid { levels: out }
}

impl CostPyramid {
    pub fn levels(&self) -> &[CostVolume] {
        &self.levels
    }

    pub fn level_count(&self) -> usize {
        self.levels.len()
    }

    pub fn base(&self) -> &CostVolume {
        &self.levels[0]
    }

    /// Largest hypothesis value, in base bins.
    pub fn max_disparity(&self) -> f32 {
        (self.base().depth() - 1) as f32
    }

    /// Content hash over every stored cost bit pattern.
    pub fn checksum(&self) -> u64 {
        let mut hasher = DefaultHasher::new();
        for level in &self.levels {
            level.depth().hash(&mut hasher);
            for v in &level.costs.data {
                v.to_bits().hash(&mut hasher);
            }
        }
        hasher.finish()
    }
}

/// Linear interpolation along one cost curve at a clamped coordinate.
#[inline]
pub fn interpolate_curve(curve: impl Fn(usize) -> f32, depth: usize, coord: f32) -> f32 {
    let c = coord.clamp(0.0, (depth - 1) as f32);
    let i0 = c.floor() as usize;
    let i1 = (i0 + 1).min(depth - 1);
    let t = c - i0 as f32;
    let (a, b) = (curve(i0), curve(i1));
    if t == 0.0 {
        return a;
    }
    (a + t * (b - a)).clamp(a.min(b), a.max(b))
}

/// Costs sampled from every pyramid level at every hypothesis.
///
/// Channels are level-major: `[level 0: n hypotheses, level 1: n, ...]`.
#[derive(Debug, Clone, PartialEq)]
pub struct LocalCostVolume {
    pub levels: usize,
    pub per_level: usize,
    pub costs: Tensor3,
}

impl LocalCostVolume {
    pub fn height(&self) -> usize {
        self.costs.height
    }

    pub fn width(&self) -> usize {
        self.costs.width
    }

    /// Channel-major slab of one level's `per_level` channels.
    pub fn level_block(&self, level: usize) -> &[f32] {
        let n = self.costs.plane_len();
        &self.costs.data[level * self.per_level * n..(level + 1) * self.per_level * n]
    }

    /// Level-0 costs at pixel `p`.
    pub fn base_costs(&self, p: usize, out: &mut Vec<f32>) {
        let n = self.costs.plane_len();
        out.clear();
        out.extend((0..self.per_level).map(|j| self.costs.data[j * n + p]));
    }

    pub fn at(&self, level: usize, hypothesis: usize, x: usize, y: usize) -> f32 {
        self.costs.at(level * self.per_level + hypothesis, y, x)
    }
}

/// Samples every pyramid level at coordinate `m / 2^ℓ` for each hypothesis `m`.
pub fn sample_local_cost(pyramid: &CostPyramid, hypotheses: &HypothesisSet) -> Result<LocalCostVolume> {
    let base = pyramid.base();
    if hypotheses.height != base.height() || hypotheses.width != base.width() {
        return Err(Error::Dimension(format!(
            "hypotheses {}x{} vs pyramid {}x{}",
            hypotheses.height,
            hypotheses.width,
            base.height(),
            base.width()
        )));
    }
    let n = hypotheses.per_pixel;
    let levels = pyramid.level_count();
    let plane = base.costs.plane_len();
    let mut costs = Tensor3::zeros(levels * n, base.height(), base.width());
    costs.data.par_chunks_mut(plane).enumerate().for_each(|(channel, out)| {
        let (level, j) = (channel / n, channel % n);
        let vol = &pyramid.levels[level];
        let depth = vol.depth();
        let stride = (1usize << level) as f32;
        for (p, slot) in out.iter_mut().enumerate() {
            let m = hypotheses.values[p * n + j];
            *slot = interpolate_curve(|d| vol.costs.data[d * plane + p], depth, m / stride);
        }
    });
    Ok(LocalCostVolume {
        levels,
        per_level: n,
        costs,
    })
}

/// Max-subtracted softmax of one cost vector.
pub fn softmax<T: Float>(costs: &[T]) -> Vec<T> {
    let max = costs.iter().copied().fold(T::neg_infinity(), T::max);
    let exps: Vec<T> = costs.iter().map(|&c| (c - max).exp()).collect();
    let sum = exps.iter().copied().fold(T::zero(), |a, b| a + b);
    exps.into_iter().map(|e| e / sum).collect()
}

/// Per-pixel softmax over the disparity bins of a full volume.
pub fn probability_volume(volume: &CostVolume) -> Tensor3 {
    softmax_channels(&volume.costs, volume.depth())
}

/// Per-pixel softmax over the level-0 hypothesis block of a local volume.
pub fn local_probabilities(local: &LocalCostVolume) -> Tensor3 {
    softmax_channels(&local.costs, local.per_level)
}

fn softmax_channels(t: &Tensor3, channels: usize) -> Tensor3 {
    let n = t.plane_len();
    let per_pixel: Vec<Vec<f32>> = (0..n)
        .into_par_iter()
        .map(|p| {
            let costs: Vec<f32> = (0..channels).map(|c| t.data[c * n + p]).collect();
            softmax(&costs)
        })
        .collect();
    let mut out = Tensor3::zeros(channels, t.height, t.width);
    for (p, probs) in per_pixel.iter().enumerate() {
        for (c, v) in probs.iter().enumerate() {
            out.data[c * n + p] = *v;
        }
    }
    out
}

#[cfg(test)]
mod tests {
    use super::*;

    fn volume(depth: usize, h: usize, w: usize, f: impl Fn(usize, usize, usize) -> f32) -> CostVolume {
        let mut costs = Tensor3::zeros(depth, h, w);
        for d in 0..depth {
            for y in 0..h {
                for x in 0..w {
                    *costs.at_mut(d, y, x) = f(d, y, x);
                }
            }
        }
        CostVolume { scale: 4, costs }
    }

    #[test]
    fn pyramid_pairwise_means() {
        let v = volume(4, 1, 1, |d, _, _| [1.0, 3.0, 5.0, 7.0][d]);
        let p = build_pyramid(&v);
        assert_eq!(p.level_count(), 2);
        assert_eq!(p.levels()[0], v);
        assert_eq!(p.levels()[1].curve(0, 0), vec![2.0, 6.0]);
    }

    #[test]
    fn pyramid_truncates_odd_bin() {
        let v = volume(9, 2, 2, |d, y, x| (d * 7 + y + x) as f32);
        assert_eq!(build_pyramid(&v).levels()[1].depth(), 4);
    }

    #[test]
    fn interpolation_at_knot_and_midpoint() {
        let curve = [0.0, 1.0, 4.0, 8.0];
        assert_eq!(interpolate_curve(|d| curve[d], 4, 2.0), 4.0);
        assert_eq!(interpolate_curve(|d| curve[d], 4, 2.5), 6.0);
        assert_eq!(interpolate_curve(|d| curve[d], 4, 9.0), 8.0);
        assert_eq!(interpolate_curve(|d| curve[d], 4, -1.0), 0.0);
    }

    #[test]
    fn softmax_closed_forms() {
        let p = softmax(&[0.0f64, 3f64.ln()]);
        assert!((p[0] - 0.25).abs() < 1e-15 && (p[1] - 0.75).abs() < 1e-15);
        let u = softmax(&[2.0f32; 5]);
        assert!(u.iter().all(|&v| (v - 0.2).abs() < 1e-7));
        let a = softmax(&[0.3f64, -1.2, 2.5]);
        let b = softmax(&[100.3f64, 98.8, 102.5]);
        for (x, y) in a.iter().zip(&b) {
            assert!((x - y).abs() < 1e-12);
        }
    }

    #[test]
    fn out_of_frame_uses_sentinel() {
        let f = FeatureMap {
            scale: 1,
            tensor: Tensor3::from_vec(1, 1, 3, vec![1.0, 1.0, 1.0]).unwrap(),
        };
        let v = build_correlation_volume(&f, &f, 2).unwrap();
        assert_eq!(v.curve(0, 0), vec![1.0, -1.0, -1.0]);
        assert_eq!(v.curve(2, 0), vec![1.0, 1.0, 1.0]);
    }

    #[test]
    fn mismatched_features_rejected() {
        let a = FeatureMap {
            scale: 1,
            tensor: Tensor3::zeros(2, 2, 2),
        };
        let b = FeatureMap {
            scale: 1,
            tensor: Tensor3::zeros(3, 2, 2),
        };
        assert!(matches!(build_correlation_volume(&a, &b, 4), Err(Error::Parameter(_))));
        assert!(build_correlation_volume(&a, &a, 3).is_ok());
    }

    #[test]
    fn csv_dump_has_header_and_rows() {
        let v = volume(3, 1, 1, |d, _, _| d as f32 * 0.5);
        assert_eq!(v.curve_csv(0, 0), "disparity,cost\n0,0\n1,0.5\n2,1\n");
    }
}
