//! Brute-force reference implementations.
//!
//! Each function recomputes one stage of the pipeline with plain nested loops
//! and no shared helpers, so the optimized code paths can be checked against
//! it. Layouts follow the main types: volumes are bin-major `[d][y][x]`,
//! tensors channel-major `[c][y][x]`.

use crate::imagery::DisparityMap;

/// Triple-loop correlation. Features are `[c][y][x]`; returns `[d][y][x]`.
pub fn correlation(
    left: &[f32],
    right: &[f32],
    channels: usize,
    height: usize,
    width: usize,
    depth: usize,
) -> Vec<f32> {
    let mut out = vec![0.0; depth * height * width];
    for d in 0..depth {
        for y in 0..height {
            for x in 0..width {
                let v = if x < d {
                    -1.0
                } else {
                    let mut acc = 0.0f32;
                    for c in 0..channels {
                        acc += left[(c * height + y) * width + x] * right[(c * height + y) * width + (x - d)];
                    }
                    acc
                };
                out[(d * height + y) * width + x] = v;
            }
        }
    }
    out
}

/// Pairwise means along the bin axis, dropping a trailing odd bin.
pub fn pool_pairs(volume: &[f32], depth: usize, plane: usize) -> Vec<f32> {
    let half = depth / 2;
    let mut out = vec![0.0; half * plane];
    for d in 0..half {
        for p in 0..plane {
            out[d * plane + p] = (volume[2 * d * plane + p] + volume[(2 * d + 1) * plane + p]) / 2.0;
        }
    }
    out
}

/// Linear interpolation of `curve` at `coord`, clamped to the bin range.
/// Evaluated in `f64`.
pub fn interpolate(curve: &[f32], coord: f64) -> f64 {
    let last = (curve.len() - 1) as f64;
    let c = coord.max(0.0).min(last);
    let lo = c.floor();
    let hi = (lo + 1.0).min(last);
    let t = c - lo;
    (1.0 - t) * curve[lo as usize] as f64 + t * curve[hi as usize] as f64
}

/// Probabilities exactly as the pipeline's `f32` softmax would produce them:
/// subtract the maximum, exponentiate, divide by the left-to-right sum.
pub fn softmax_f32(costs: &[f32]) -> Vec<f32> {
    let mut max = f32::NEG_INFINITY;
    for &c in costs {
        if c > max {
            max = c;
        }
    }
    let mut exps = Vec::with_capacity(costs.len());
    let mut sum = 0.0f32;
    for &c in costs {
        let e = (c - max).exp();
        exps.push(e);
        sum += e;
    }
    exps.iter().map(|e| e / sum).collect()
}

/// Full sort of (probability desc, value asc, slot asc); first `k` values.
pub fn top_k(values: &[f32], costs: &[f32], k: usize) -> Vec<f32> {
    let probs = softmax_f32(costs);
    let mut entries: Vec<(f32, f32, usize)> = (0..values.len()).map(|i| (probs[i], values[i], i)).collect();
    // insertion sort keeps the comparison in one readable place
    for i in 1..entries.len() {
        let mut j = i;
        while j > 0 && before(&entries[j], &entries[j - 1]) {
            entries.swap(j, j - 1);
            j -= 1;
        }
    }
    entries[..k].iter().map(|e| e.1).collect()
}

fn before(a: &(f32, f32, usize), b: &(f32, f32, usize)) -> bool {
    if a.0 != b.0 {
        return a.0 > b.0;
    }
    if a.1 != b.1 {
        return a.1 < b.1;
    }
    a.2 < b.2
}

/// `[d − r, …, d + r]` per peak, each clamped into `[lo, hi]`.
pub fn expand(peaks: &[f32], radius: usize, lo: f32, hi: f32) -> Vec<f32> {
    let mut out = Vec::new();
    for &d in peaks {
        for i in 0..=2 * radius {
            let v = d - radius as f32 + i as f32;
            out.push(if v < lo {
                lo
            } else if v > hi {
                hi
            } else {
                v
            });
        }
    }
    out
}

/// One pixel of the lookup chain: candidates → softmax → top-k → expansion →
/// interpolation on every pyramid level. `levels[l]` is that level's cost
/// curve at the pixel. Returns (Ω, costs level-major).
pub fn lookup_pixel(
    candidate_values: &[f32],
    candidate_costs: &[f32],
    k: usize,
    radius: usize,
    max_disparity: f32,
    levels: &[Vec<f32>],
) -> (Vec<f32>, Vec<f64>) {
    let peaks = top_k(candidate_values, candidate_costs, k);
    let omega = expand(&peaks, radius, 0.0, max_disparity);
    let mut costs = Vec::with_capacity(levels.len() * omega.len());
    for (l, curve) in levels.iter().enumerate() {
        for &m in &omega {
            costs.push(interpolate(curve, m as f64 / (1u64 << l) as f64));
        }
    }
    (omega, costs)
}

/// Σ m_j softmax(c)_j in `f64`.
pub fn soft_argmax(costs: &[f64], values: &[f64]) -> f64 {
    let max = costs.iter().cloned().fold(f64::NEG_INFINITY, f64::max);
    let mut num = 0.0;
    let mut den = 0.0;
    for (c, m) in costs.iter().zip(values) {
        let e = (c - max).exp();
        num += e * m;
        den += e;
    }
    num / den
}

fn sigmoid(x: f64) -> f64 {
    1.0 / (1.0 + (-x).exp())
}

/// Zero-padded "same" convolution of one output pixel, `f64` accumulation.
#[allow(clippy::too_many_arguments)]
fn conv_at(
    input: &[f32],
    cin: usize,
    height: usize,
    width: usize,
    kernel: &[f32],
    bias: f32,
    o: usize,
    kh: usize,
    kw: usize,
    y: usize,
    x: usize,
) -> f64 {
    let mut acc = bias as f64;
    for i in 0..cin {
        for u in 0..kh {
            for v in 0..kw {
                let sy = y as isize + u as isize - (kh / 2) as isize;
                let sx = x as isize + v as isize - (kw / 2) as isize;
                if sy < 0 || sx < 0 || sy >= height as isize || sx >= width as isize {
                    continue;
                }
                let k = kernel[((o * cin + i) * kh + u) * kw + v] as f64;
                acc += k * input[(i * height + sy as usize) * width + sx as usize] as f64;
            }
        }
    }
    acc
}

/// Dense 3×3-style layer description for the scalar GRU.
pub struct DenseConv<'a> {
    pub out_channels: usize,
    pub kh: usize,
    pub kw: usize,
    pub kernel: &'a [f32],
    pub bias: &'a [f32],
}

fn conv_all(input: &[f32], cin: usize, height: usize, width: usize, layer: &DenseConv<'_>) -> Vec<f64> {
    let mut out = vec![0.0; layer.out_channels * height * width];
    for o in 0..layer.out_channels {
        for y in 0..height {
            for x in 0..width {
                out[(o * height + y) * width + x] = conv_at(
                    input,
                    cin,
                    height,
                    width,
                    layer.kernel,
                    layer.bias[o],
                    o,
                    layer.kh,
                    layer.kw,
                    y,
                    x,
                );
            }
        }
    }
    out
}

/// Scalar GRU step in `f64`. Returns (h', ΔC).
#[allow(clippy::too_many_arguments)]
pub fn gru_step(
    hidden: &[f32],
    hidden_channels: usize,
    input: &[f32],
    input_channels: usize,
    height: usize,
    width: usize,
    update: &DenseConv<'_>,
    reset: &DenseConv<'_>,
    candidate: &DenseConv<'_>,
    head: &DenseConv<'_>,
) -> (Vec<f64>, Vec<f64>) {
    let joint: Vec<f32> = hidden.iter().chain(input).copied().collect();
    let cj = hidden_channels + input_channels;
    let z: Vec<f64> = conv_all(&joint, cj, height, width, update)
        .into_iter()
        .map(sigmoid)
        .collect();
    let r: Vec<f64> = conv_all(&joint, cj, height, width, reset)
        .into_iter()
        .map(sigmoid)
        .collect();
    let mut gated: Vec<f32> = hidden.iter().zip(&r).map(|(h, r)| (*h as f64 * r) as f32).collect();
    gated.extend_from_slice(input);
    let cand: Vec<f64> = conv_all(&gated, cj, height, width, candidate)
        .into_iter()
        .map(f64::tanh)
        .collect();
    let next: Vec<f64> = (0..hidden.len())
        .map(|i| (1.0 - z[i]) * hidden[i] as f64 + z[i] * cand[i])
        .collect();
    let next32: Vec<f32> = next.iter().map(|v| *v as f32).collect();
    let delta = conv_all(&next32, hidden_channels, height, width, head);
    (next, delta)
}

/// Median over an edge-replicated odd square window.
pub fn window_median(values: &[f32], width: usize, height: usize, x: usize, y: usize, window: usize) -> f32 {
    let half = window as isize / 2;
    let mut vals = Vec::new();
    for dy in -half..=half {
        for dx in -half..=half {
            let sx = (x as isize + dx).max(0).min(width as isize - 1) as usize;
            let sy = (y as isize + dy).max(0).min(height as isize - 1) as usize;
            vals.push(values[sy * width + sx]);
        }
    }
    let n = vals.len();
    vals.sort_by(|a, b| a.partial_cmp(b).expect("finite"));
    vals[n / 2]
}

/// Per-pixel metric reference: (EPE, bad counts τ = 1..4, D1 count, evaluated).
pub fn metrics(
    pred: &DisparityMap,
    gt: &DisparityMap,
    occlusion: Option<&[bool]>,
) -> Option<(f64, [f64; 4], f64, usize)> {
    let mut errs = Vec::new();
    let mut gts = Vec::new();
    for y in 0..gt.height() {
        for x in 0..gt.width() {
            let i = y * gt.width() + x;
            if !gt.is_valid(x, y) || !pred.is_valid(x, y) || occlusion.is_some_and(|m| m[i]) {
                continue;
            }
            errs.push((pred.get(x, y) - gt.get(x, y)).abs());
            gts.push(gt.get(x, y));
        }
    }
    if errs.is_empty() {
        return None;
    }
    let n = errs.len() as f64;
    let epe = errs.iter().map(|&e| e as f64).sum::<f64>() / n;
    let mut bad = [0.0; 4];
    for (t, b) in bad.iter_mut().enumerate() {
        *b = errs.iter().filter(|&&e| e > (t + 1) as f32).count() as f64 / n;
    }
    let d1 = errs
        .iter()
        .zip(&gts)
        .filter(|(e, g)| **e > 3.0 && **e > 0.05 * g.abs())
        .count() as f64
        / n;
    Some((epe, bad, d1, errs.len()))
}
