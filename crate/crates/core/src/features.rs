//! Per-pixel descriptors for matching (left/right) and for the updater's
//! context input.
//!
//! Census and NCC descriptors are unit-bounded, so every inner product
//! between two of them lies in [−1, 1]. The convolutional extractor runs a
//! loadable weight stack instead.

use rand::{Rng, SeedableRng};
use rand_xoshiro::SplitMix64;
use rayon::prelude::*;

use crate::error::{Error, Result};
use crate::imagery::IntensityImage;
use crate::tensor::{conv2d_same, open_tanh, Tensor3};
use crate::weights::ConvWeights;

pub const NCC_EPSILON: f32 = 1e-6;

/// C×H×W descriptors at a resolution divisor of 1 or 4.
#[derive(Debug, Clone, PartialEq)]
pub struct FeatureMap {
    pub scale: usize,
    pub tensor: Tensor3,
}

impl FeatureMap {
    pub fn channels(&self) -> usize {
        self.tensor.channels
    }

    pub fn height(&self) -> usize {
        self.tensor.height
    }

    pub fn width(&self) -> usize {
        self.tensor.width
    }

    pub fn vector(&self, x: usize, y: usize) -> Vec<f32> {
        let mut v = Vec::with_capacity(self.channels());
        self.tensor.gather_pixel(y * self.width() + x, &mut v);
        v
    }
}

/// Context feature plus one initial hidden state per cascade stage.
#[derive(Debug, Clone, PartialEq)]
pub struct ContextBundle {
    pub context: FeatureMap,
    pub hidden_init: Vec<FeatureMap>,
}

#[derive(Debug, Clone, PartialEq)]
pub enum FeatureExtractor {
    Census { window: usize },
    Ncc { window: usize },
    Conv(ConvWeights),
}

impl Default for FeatureExtractor {
    fn default() -> Self {
        FeatureExtractor::Census { window: 5 }
    }
}

impl FeatureExtractor {
    pub fn extract(&self, image: &IntensityImage, scale: usize) -> Result<FeatureMap> {
        match self {
            FeatureExtractor::Census { window } => census_features(image, *window, scale),
            FeatureExtractor::Ncc { window } => ncc_patch_features(image, *window, scale),
            FeatureExtractor::Conv(weights) => conv_features(image, weights, scale),
        }
    }
}

/// Grayscale plane at the requested scale, in [0, 1].
pub fn gray_plane(image: &IntensityImage, scale: usize) -> Result<(Vec<f32>, usize, usize)> {
    let luma = image.luma();
    let (w, h) = (image.width(), image.height());
    match scale {
        1 => Ok((luma, w, h)),
        4 => {
            if w % 4 != 0 || h % 4 != 0 {
                return Err(Error::param(format!("{w}x{h} image is not divisible by 4")));
            }
            let (qw, qh) = (w / 4, h / 4);
            let mut out = vec![0.0f32; qw * qh];
            for qy in 0..qh {
                for qx in 0..qw {
                    let mut acc = 0.0f32;
                    for dy in 0..4 {
                        for dx in 0..4 {
                            acc += luma[(qy * 4 + dy) * w + qx * 4 + dx];
                        }
                    }
                    out[qy * qw + qx] = acc / 16.0;
                }
            }
            Ok((out, qw, qh))
        }
        other => Err(Error::param(format!("scale must be 1 or 4, got {other}"))),
    }
}

fn check_window(window: usize) -> Result<()> {
    if window < 3 || window.is_multiple_of(2) {
        return Err(Error::param(format!("window must be odd and at least 3, got {window}")));
    }
    Ok(())
}

#[inline]
fn replicate(v: isize, len: usize) -> usize {
    v.clamp(0, len as isize - 1) as usize
}

/// Census descriptor: one ±1/√C channel per non-center neighbor, +1 where
/// the neighbor is at least as bright as the center.
pub fn census_features(image: &IntensityImage, window: usize, scale: usize) -> Result<FeatureMap> {
    check_window(window)?;
    let (plane, w, h) = gray_plane(image, scale)?;
    let half = (window / 2) as isize;
    let offsets: Vec<(isize, isize)> = (-half..=half)
        .flat_map(|dy| (-half..=half).map(move |dx| (dy, dx)))
        .filter(|&o| o != (0, 0))
        .collect();
    let c = offsets.len();
    let amp = 1.0 / (c as f32).sqrt();
    let mut tensor = Tensor3::zeros(c, h, w);
    tensor
        .data
        .par_chunks_mut(h * w)
        .zip(offsets.par_iter())
        .for_each(|(out, &(dy, dx))| {
            for y in 0..h {
                for x in 0..w {
                    let center = plane[y * w + x];
                    let ny = replicate(y as isize + dy, h);
                    let nx = replicate(x as isize + dx, w);
                    out[y * w + x] = if plane[ny * w + nx] - center >= 0.0 { amp } else { -amp };
                }
            }
        });
    Ok(FeatureMap { scale, tensor })
}

/// Zero-mean patch divided by (its norm + ε); inner products are zero-lag NCC.
pub fn ncc_patch_features(image: &IntensityImage, window: usize, scale: usize) -> Result<FeatureMap> {
    check_window(window)?;
    let (plane, w, h) = gray_plane(image, scale)?;
    let half = (window / 2) as isize;
    let c = window * window;
    let pixels: Vec<Vec<f32>> = (0..h * w)
        .into_par_iter()
        .map(|p| {
            let (y, x) = ((p / w) as isize, (p % w) as isize);
            let mut patch = Vec::with_capacity(c);
            for dy in -half..=half {
                for dx in -half..=half {
                    patch.push(plane[replicate(y + dy, h) * w + replicate(x + dx, w)]);
                }
            }
            let mean = patch.iter().sum::<f32>() / c as f32;
            patch.iter_mut().for_each(|v| *v -= mean);
            let norm = patch.iter().map(|v| v * v).sum::<f32>().sqrt() + NCC_EPSILON;
            patch.iter_mut().for_each(|v| *v /= norm);
            patch
        })
        .collect();
    let mut tensor = Tensor3::zeros(c, h, w);
    for (p, patch) in pixels.iter().enumerate() {
        for (ch, v) in patch.iter().enumerate() {
            tensor.data[ch * h * w + p] = *v;
        }
    }
    Ok(FeatureMap { scale, tensor })
}

/// Runs a convolution stack over the single-channel grayscale plane.
pub fn conv_features(image: &IntensityImage, weights: &ConvWeights, scale: usize) -> Result<FeatureMap> {
    if weights.in_channels() != 1 {
        return Err(Error::WeightFormat(format!(
            "first layer expects {} channels, grayscale input has 1",
            weights.in_channels()
        )));
    }
    let (plane, w, h) = gray_plane(image, scale)?;
    let mut x = Tensor3::from_vec(1, h, w, plane)?;
    for layer in &weights.layers {
        if layer.in_channels != x.channels {
            return Err(Error::WeightFormat(format!(
                "layer expects {} channels, got {}",
                layer.in_channels, x.channels
            )));
        }
        let act = layer.activation;
        x = conv2d_same(&x, &layer.kernel, &layer.bias, layer.out_channels, layer.kh, layer.kw)?.map(|v| act.apply(v));
    }
    Ok(FeatureMap { scale, tensor: x })
}

/// Context features on the left image and per-stage hidden states
/// `tanh(P_s · f_c)` where `P_s` is a fixed projection seeded by stage.
pub fn context_features(
    left: &IntensityImage,
    extractor: &FeatureExtractor,
    num_stages: usize,
    hidden_channels: usize,
    seed: u64,
) -> Result<ContextBundle> {
    if num_stages == 0 {
        return Err(Error::param("at least one cascade stage is required"));
    }
    if hidden_channels == 0 {
        return Err(Error::param("hidden channel count must be positive"));
    }
    let context = extractor.extract(left, 4)?;
    let hidden_init = (0..num_stages)
        .map(|stage| hidden_projection(&context, hidden_channels, stage_seed(seed, stage)))
        .collect();
    Ok(ContextBundle { context, hidden_init })
}

fn stage_seed(seed: u64, stage: usize) -> u64 {
    seed ^ (0x9e37_79b9_7f4a_7c15u64.wrapping_mul(stage as u64 + 1))
}

fn hidden_projection(context: &FeatureMap, hidden: usize, seed: u64) -> FeatureMap {
    let cin = context.channels();
    let mut rng = SplitMix64::seed_from_u64(seed);
    let amp = 1.0 / (cin.max(1) as f32).sqrt();
    let proj: Vec<f32> = (0..hidden * cin)
        .map(|_| rng.random_range(-1.0f32..1.0) * amp)
        .collect();
    let n = context.tensor.plane_len();
    let mut tensor = Tensor3::zeros(hidden, context.height(), context.width());
    tensor.data.par_chunks_mut(n).enumerate().for_each(|(o, out)| {
        for (p, slot) in out.iter_mut().enumerate() {
            let mut acc = 0.0f32;
            for i in 0..cin {
                acc += proj[o * cin + i] * context.tensor.data[i * n + p];
            }
            *slot = open_tanh(acc);
        }
    });
    FeatureMap {
        scale: context.scale,
        tensor,
    }
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::weights::{Activation, ConvLayer};

    fn dot(a: &[f32], b: &[f32]) -> f32 {
        a.iter().zip(b).map(|(x, y)| x * y).sum()
    }

    fn ramp(w: usize, h: usize) -> IntensityImage {
        let data = (0..w * h).map(|i| ((i * 37) % 251) as u8).collect();
        IntensityImage::gray(w, h, data).unwrap()
    }

    #[test]
    fn census_identical_neighborhoods_cost_one() {
        let img = ramp(8, 8);
        let f = census_features(&img, 3, 1).unwrap();
        assert_eq!(f.channels(), 8);
        let v = f.vector(4, 4);
        assert!((dot(&v, &v) - 1.0).abs() < 1e-6);
    }

    #[test]
    fn census_inverted_neighborhood_cost_minus_one() {
        // strictly ordered 3x3 patch so every comparison is strict
        let a: Vec<u8> = vec![10, 20, 30, 40, 50, 60, 70, 80, 90];
        let b: Vec<u8> = a.iter().map(|v| 255 - v).collect();
        let fa = census_features(&IntensityImage::gray(3, 3, a).unwrap(), 3, 1).unwrap();
        let fb = census_features(&IntensityImage::gray(3, 3, b).unwrap(), 3, 1).unwrap();
        assert!((dot(&fa.vector(1, 1), &fb.vector(1, 1)) + 1.0).abs() < 1e-6);
    }

    #[test]
    fn census_constant_image_all_positive() {
        let img = IntensityImage::gray(4, 4, vec![77; 16]).unwrap();
        let f = census_features(&img, 5, 1).unwrap();
        let amp = 1.0 / 24f32.sqrt();
        assert!(f.tensor.data.iter().all(|&v| v == amp));
    }

    #[test]
    fn even_window_rejected() {
        let img = ramp(4, 4);
        assert!(matches!(census_features(&img, 4, 1), Err(Error::Parameter(_))));
        assert!(matches!(ncc_patch_features(&img, 2, 1), Err(Error::Parameter(_))));
    }

    #[test]
    fn ncc_affine_invariance() {
        let a: Vec<u8> = (0..25).map(|i| ((i * 53) % 97) as u8).collect();
        let b: Vec<u8> = a.iter().map(|&v| (2 * v as u32 + 11) as u8).collect();
        let fa = ncc_patch_features(&IntensityImage::gray(5, 5, a).unwrap(), 5, 1).unwrap();
        let fb = ncc_patch_features(&IntensityImage::gray(5, 5, b).unwrap(), 5, 1).unwrap();
        assert!((dot(&fa.vector(2, 2), &fb.vector(2, 2)) - 1.0).abs() < 1e-4);
    }

    #[test]
    fn ncc_constant_patch_is_zero() {
        let f = ncc_patch_features(&IntensityImage::gray(5, 5, vec![9; 25]).unwrap(), 3, 1).unwrap();
        assert!(f.tensor.data.iter().all(|&v| v == 0.0));
    }

    #[test]
    fn identity_conv_returns_input() {
        let img = ramp(6, 5);
        let weights = ConvWeights::new(vec![ConvLayer::new(
            1,
            1,
            1,
            1,
            Activation::Linear,
            vec![1.0],
            vec![0.0],
        )
        .unwrap()])
        .unwrap();
        let f = conv_features(&img, &weights, 1).unwrap();
        assert_eq!(f.tensor.data, img.luma());
    }

    #[test]
    fn conv_channel_mismatch() {
        let weights = ConvWeights::new(vec![ConvLayer::new(
            1,
            3,
            1,
            1,
            Activation::Linear,
            vec![1.0; 3],
            vec![0.0],
        )
        .unwrap()])
        .unwrap();
        assert!(matches!(
            conv_features(&ramp(4, 4), &weights, 1),
            Err(Error::WeightFormat(_))
        ));
    }

    #[test]
    fn scale_four_downsamples() {
        let img = ramp(16, 8);
        let f = census_features(&img, 3, 4).unwrap();
        assert_eq!((f.width(), f.height(), f.scale), (4, 2, 4));
        assert!(census_features(&ramp(6, 8), 3, 4).is_err());
    }

    #[test]
    fn context_bundle_shapes_and_bounds() {
        let img = ramp(16, 16);
        let bundle = context_features(&img, &FeatureExtractor::default(), 3, 8, 7).unwrap();
        assert_eq!(bundle.hidden_init.len(), 3);
        for h in &bundle.hidden_init {
            assert_eq!((h.width(), h.height(), h.scale), (4, 4, 4));
            assert!(h.tensor.data.iter().all(|v| v.abs() < 1.0));
        }
        assert_ne!(bundle.hidden_init[0], bundle.hidden_init[1]);
        let again = context_features(&img, &FeatureExtractor::default(), 3, 8, 7).unwrap();
        assert_eq!(bundle, again);
    }

    #[test]
    fn zero_image_context_is_uniform() {
        let img = IntensityImage::gray(8, 8, vec![0; 64]).unwrap();
        let bundle = context_features(&img, &FeatureExtractor::default(), 1, 4, 0).unwrap();
        let first = bundle.context.vector(0, 0);
        for y in 0..2 {
            for x in 0..2 {
                assert_eq!(bundle.context.vector(x, y), first);
            }
        }
    }
}
