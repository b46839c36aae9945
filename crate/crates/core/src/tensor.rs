//! Channel-major planar buffers and the stride-1 "same" convolution shared
//! by the feature stack and the recurrent updater.

use rayon::prelude::*;

use crate::error::{Error, Result};

/// C×H×W reals stored channel-major.
#[derive(Debug, Clone, PartialEq)]
pub struct Tensor3 {
    pub channels: usize,
    pub height: usize,
    pub width: usize,
    pub data: Vec<f32>,
}

impl Tensor3 {
    pub fn zeros(channels: usize, height: usize, width: usize) -> Self {
        Self {
            channels,
            height,
            width,
            data: vec![0.0; channels * height * width],
        }
    }

    pub fn from_vec(channels: usize, height: usize, width: usize, data: Vec<f32>) -> Result<Self> {
        if data.len() != channels * height * width {
            return Err(Error::Dimension(format!(
                "{} values for a {channels}x{height}x{width} tensor",
                data.len()
            )));
        }
        Ok(Self {
            channels,
            height,
            width,
            data,
        })
    }

    #[inline]
    pub fn plane_len(&self) -> usize {
        self.height * self.width
    }

    #[inline]
    pub fn at(&self, c: usize, y: usize, x: usize) -> f32 {
        self.data[(c * self.height + y) * self.width + x]
    }

    #[inline]
    pub fn at_mut(&mut self, c: usize, y: usize, x: usize) -> &mut f32 {
        &mut self.data[(c * self.height + y) * self.width + x]
    }

    pub fn plane(&self, c: usize) -> &[f32] {
        let n = self.plane_len();
        &self.data[c * n..(c + 1) * n]
    }

    /// Copies the channel vector at pixel index `p` (row-major) into `out`.
    pub fn gather_pixel(&self, p: usize, out: &mut Vec<f32>) {
        out.clear();
        let n = self.plane_len();
        out.extend((0..self.channels).map(|c| self.data[c * n + p]));
    }

    pub fn same_spatial(&self, other: &Tensor3) -> bool {
        self.height == other.height && self.width == other.width
    }

    /// Stacks tensors along the channel axis.
    pub fn concat(parts: &[&Tensor3]) -> Result<Tensor3> {
        let first = parts.first().ok_or_else(|| Error::param("nothing to concatenate"))?;
        let mut data = Vec::new();
        let mut channels = 0;
        for t in parts {
            if !t.same_spatial(first) {
                return Err(Error::Dimension(format!(
                    "cannot concatenate {}x{} with {}x{}",
                    t.height, t.width, first.height, first.width
                )));
            }
            data.extend_from_slice(&t.data);
            channels += t.channels;
        }
        Ok(Tensor3 {
            channels,
            height: first.height,
            width: first.width,
            data,
        })
    }

    pub fn map(&self, f: impl Fn(f32) -> f32 + Sync) -> Tensor3 {
        Tensor3 {
            data: self.data.par_iter().map(|&v| f(v)).collect(),
            ..*self
        }
    }
}

/// Stride-1 convolution with zero padding that keeps H×W (odd kernels).
///
/// `kernel` is out×in×kh×kw row-major. Every output element is summed in a
/// fixed order, so results do not depend on the thread count.
pub fn conv2d_same(
    input: &Tensor3,
    kernel: &[f32],
    bias: &[f32],
    out_channels: usize,
    kh: usize,
    kw: usize,
) -> Result<Tensor3> {
    let cin = input.channels;
    if kh.is_multiple_of(2) || kw.is_multiple_of(2) {
        return Err(Error::WeightFormat(format!("kernel {kh}x{kw} must be odd-sized")));
    }
    if kernel.len() != out_channels * cin * kh * kw || bias.len() != out_channels {
        return Err(Error::WeightFormat(format!(
            "kernel of {} values / bias of {} does not fit {out_channels}x{cin}x{kh}x{kw}",
            kernel.len(),
            bias.len()
        )));
    }
    let (h, w) = (input.height, input.width);
    let (ph, pw) = (kh / 2, kw / 2);
    let mut out = Tensor3::zeros(out_channels, h, w);
    out.data.par_chunks_mut(h * w).enumerate().for_each(|(o, plane)| {
        for y in 0..h {
            for x in 0..w {
                let mut acc = bias[o];
                for i in 0..cin {
                    let kbase = (o * cin + i) * kh * kw;
                    for ky in 0..kh {
                        let sy = y as isize + ky as isize - ph as isize;
                        if sy < 0 || sy >= h as isize {
                            continue;
                        }
                        for kx in 0..kw {
                            let sx = x as isize + kx as isize - pw as isize;
                            if sx < 0 || sx >= w as isize {
                                continue;
                            }
                            acc += kernel[kbase + ky * kw + kx] * input.at(i, sy as usize, sx as usize);
                        }
                    }
                }
                plane[y * w + x] = acc;
            }
        }
    });
    Ok(out)
}

pub fn sigmoid(v: f32) -> f32 {
    1.0 / (1.0 + (-v).exp())
}

/// Largest f32 strictly below 1.
pub const BELOW_ONE: f32 = 1.0 - f32::EPSILON / 2.0;

/// tanh clamped to the open interval (−1, 1); plain f32 tanh saturates to ±1.
pub fn open_tanh(v: f32) -> f32 {
    v.tanh().clamp(-BELOW_ONE, BELOW_ONE)
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn below_one_is_adjacent() {
        assert_eq!(f32::from_bits(BELOW_ONE.to_bits() + 1), 1.0);
        assert!(open_tanh(50.0) < 1.0);
        assert!(open_tanh(-50.0) > -1.0);
    }

    #[test]
    fn impulse_response_is_kernel() {
        let mut img = Tensor3::zeros(1, 5, 5);
        *img.at_mut(0, 2, 2) = 1.0;
        let kernel: Vec<f32> = (1..=9).map(|v| v as f32).collect();
        let out = conv2d_same(&img, &kernel, &[0.0], 1, 3, 3).unwrap();
        // correlation: output(y, x) picks kernel(2 - (y - 1), ...) flipped
        for ky in 0..3 {
            for kx in 0..3 {
                assert_eq!(out.at(0, 3 - ky, 3 - kx), kernel[ky * 3 + kx]);
            }
        }
    }

    #[test]
    fn concat_rejects_spatial_mismatch() {
        let a = Tensor3::zeros(1, 2, 2);
        let b = Tensor3::zeros(1, 2, 3);
        assert!(Tensor3::concat(&[&a, &b]).is_err());
        assert_eq!(Tensor3::concat(&[&a, &a]).unwrap().channels, 2);
    }
}
