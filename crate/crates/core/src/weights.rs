//! The `MCW1` weight container.
//!
//! Layout (all integers and floats little-endian):
//!
//! ```text
//! "MCW1"  u32 layer_count
//! per layer: u32 out, u32 in, u32 kh, u32 kw, u8 tag,
//!            f32 kernel[out*in*kh*kw] (row-major), f32 bias[out]
//! ```
//!
//! The low nibble of `tag` is the activation (0 linear, 1 relu, 2 tanh). The
//! high nibble is a tensor role used by recurrent updater files
//! (0 plain, 1 update gate, 2 reset gate, 3 candidate, 4 output head), so a
//! plain convolution stack always has a tag byte equal to its activation.

use std::fs;
use std::path::Path;

use crate::error::{Error, Result};

const MAGIC: &[u8; 4] = b"MCW1";

#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub enum Activation {
    Linear,
    Relu,
    Tanh,
}

impl Activation {
    fn tag(self) -> u8 {
        match self {
            Activation::Linear => 0,
            Activation::Relu => 1,
            Activation::Tanh => 2,
        }
    }

    fn from_tag(tag: u8) -> Option<Self> {
        match tag {
            0 => Some(Activation::Linear),
            1 => Some(Activation::Relu),
            2 => Some(Activation::Tanh),
            _ => None,
        }
    }

    pub fn apply(self, v: f32) -> f32 {
        match self {
            Activation::Linear => v,
            Activation::Relu => v.max(0.0),
            Activation::Tanh => v.tanh(),
        }
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub enum Role {
    Plain,
    UpdateGate,
    ResetGate,
    Candidate,
    Head,
}

impl Role {
    fn tag(self) -> u8 {
        match self {
            Role::Plain => 0,
            Role::UpdateGate => 1,
            Role::ResetGate => 2,
            Role::Candidate => 3,
            Role::Head => 4,
        }
    }

    fn from_tag(tag: u8) -> Option<Self> {
        match tag {
            0 => Some(Role::Plain),
            1 => Some(Role::UpdateGate),
            2 => Some(Role::ResetGate),
            3 => Some(Role::Candidate),
            4 => Some(Role::Head),
            _ => None,
        }
    }
}

#[derive(Debug, Clone, PartialEq)]
pub struct ConvLayer {
    pub out_channels: usize,
    pub in_channels: usize,
    pub kh: usize,
    pub kw: usize,
    pub activation: Activation,
    pub role: Role,
    pub kernel: Vec<f32>,
    pub bias: Vec<f32>,
}

impl ConvLayer {
    pub fn new(
        out_channels: usize,
        in_channels: usize,
        kh: usize,
        kw: usize,
        activation: Activation,
        kernel: Vec<f32>,
        bias: Vec<f32>,
    ) -> Result<Self> {
        let layer = Self {
            out_channels,
            in_channels,
            kh,
            kw,
            activation,
            role: Role::Plain,
            kernel,
            bias,
        };
        layer.validate()?;
        Ok(layer)
    }

    pub fn with_role(mut self, role: Role) -> Self {
        self.role = role;
        self
    }

    pub fn validate(&self) -> Result<()> {
        if self.kh.is_multiple_of(2) || self.kw.is_multiple_of(2) {
            return Err(Error::WeightFormat(format!(
                "kernel {}x{} must be odd-sized",
                self.kh, self.kw
            )));
        }
        if self.kernel.len() != self.out_channels * self.in_channels * self.kh * self.kw {
            return Err(Error::WeightFormat("kernel length does not match dims".into()));
        }
        if self.bias.len() != self.out_channels {
            return Err(Error::WeightFormat("bias length does not match dims".into()));
        }
        if self.kernel.iter().chain(&self.bias).any(|v| !v.is_finite()) {
            return Err(Error::WeightFormat("non-finite parameter".into()));
        }
        Ok(())
    }
}

/// An ordered convolution stack.
#[derive(Debug, Clone, PartialEq)]
pub struct ConvWeights {
    pub layers: Vec<ConvLayer>,
}

impl ConvWeights {
    pub fn new(layers: Vec<ConvLayer>) -> Result<Self> {
        if layers.is_empty() {
            return Err(Error::WeightFormat("empty layer list".into()));
        }
        for layer in &layers {
            layer.validate()?;
        }
        for pair in layers.windows(2) {
            if pair[1].in_channels != pair[0].out_channels {
                return Err(Error::WeightFormat(format!(
                    "layer expects {} input channels but previous layer emits {}",
                    pair[1].in_channels, pair[0].out_channels
                )));
            }
        }
        Ok(Self { layers })
    }

    pub fn in_channels(&self) -> usize {
        self.layers[0].in_channels
    }

    pub fn out_channels(&self) -> usize {
        self.layers[self.layers.len() - 1].out_channels
    }

    pub fn load(path: impl AsRef<Path>) -> Result<Self> {
        Self::new(read_layers(path)?)
    }

    pub fn save(&self, path: impl AsRef<Path>) -> Result<()> {
        write_layers(&self.layers, path)
    }
}

pub fn encode_layers(layers: &[ConvLayer]) -> Vec<u8> {
    let mut out = Vec::new();
    out.extend_from_slice(MAGIC);
    out.extend_from_slice(&(layers.len() as u32).to_le_bytes());
    for l in layers {
        for d in [l.out_channels, l.in_channels, l.kh, l.kw] {
            out.extend_from_slice(&(d as u32).to_le_bytes());
        }
        out.push(l.activation.tag() | (l.role.tag() << 4));
        for v in l.kernel.iter().chain(&l.bias) {
            out.extend_from_slice(&v.to_le_bytes());
        }
    }
    out
}

struct Cursor<'a> {
    bytes: &'a [u8],
    pos: usize,
}

impl Cursor<'_> {
    fn take(&mut self, n: usize) -> Result<&[u8]> {
        if self.pos + n > self.bytes.len() {
            return Err(Error::WeightFormat(format!(
                "truncated at byte {} (need {n} more)",
                self.pos
            )));
        }
        let s = &self.bytes[self.pos..self.pos + n];
        self.pos += n;
        Ok(s)
    }

    fn u32(&mut self) -> Result<u32> {
        let b = self.take(4)?;
        Ok(u32::from_le_bytes([b[0], b[1], b[2], b[3]]))
    }

    fn f32s(&mut self, n: usize) -> Result<Vec<f32>> {
        let b = self.take(
            n.checked_mul(4)
                .ok_or_else(|| Error::WeightFormat("tensor size overflow".into()))?,
        )?;
        Ok(b.chunks_exact(4)
            .map(|c| f32::from_le_bytes([c[0], c[1], c[2], c[3]]))
            .collect())
    }
}

pub fn decode_layers(bytes: &[u8]) -> Result<Vec<ConvLayer>> {
    let mut cur = Cursor { bytes, pos: 0 };
    if cur.take(4)? != MAGIC {
        return Err(Error::WeightFormat("missing MCW1 magic".into()));
    }
    let count = cur.u32()? as usize;
    let mut layers = Vec::with_capacity(count.min(1024));
    for _ in 0..count {
        let dims = [cur.u32()?, cur.u32()?, cur.u32()?, cur.u32()?].map(|d| d as usize);
        let tag_at = cur.pos;
        let tag = cur.take(1)?[0];
        let activation = Activation::from_tag(tag & 0x0f)
            .ok_or_else(|| Error::WeightFormat(format!("unknown activation tag {} at byte {tag_at}", tag & 0x0f)))?;
        let role = Role::from_tag(tag >> 4)
            .ok_or_else(|| Error::WeightFormat(format!("unknown role tag {} at byte {tag_at}", tag >> 4)))?;
        let [out_channels, in_channels, kh, kw] = dims;
        let kernel = cur.f32s(out_channels * in_channels * kh * kw)?;
        let bias = cur.f32s(out_channels)?;
        let layer = ConvLayer {
            out_channels,
            in_channels,
            kh,
            kw,
            activation,
            role,
            kernel,
            bias,
        };
        layer.validate()?;
        layers.push(layer);
    }
    if cur.pos != bytes.len() {
        return Err(Error::WeightFormat(format!(
            "{} trailing bytes after last layer",
            bytes.len() - cur.pos
        )));
    }
    Ok(layers)
}

pub fn read_layers(path: impl AsRef<Path>) -> Result<Vec<ConvLayer>> {
    let path = path.as_ref();
    let bytes = fs::read(path).map_err(|e| Error::io(path, e))?;
    decode_layers(&bytes)
}

pub fn write_layers(layers: &[ConvLayer], path: impl AsRef<Path>) -> Result<()> {
    let path = path.as_ref();
    fs::write(path, encode_layers(layers)).map_err(|e| Error::io(path, e))
}

#[cfg(test)]
mod tests {
    use super::*;

    fn layer(out: usize, inp: usize) -> ConvLayer {
        ConvLayer::new(
            out,
            inp,
            3,
            3,
            Activation::Relu,
            (0..out * inp * 9).map(|i| i as f32 * 0.5).collect(),
            vec![0.25; out],
        )
        .unwrap()
    }

    #[test]
    fn container_round_trip() {
        let layers = vec![layer(2, 1), layer(3, 2).with_role(Role::Head)];
        let bytes = encode_layers(&layers);
        assert_eq!(&bytes[..4], b"MCW1");
        assert_eq!(decode_layers(&bytes).unwrap(), layers);
    }

    #[test]
    fn plain_tag_byte_is_activation() {
        let bytes = encode_layers(&[layer(1, 1)]);
        assert_eq!(bytes[8 + 16], 1);
    }

    #[test]
    fn channel_mismatch_rejected() {
        let err = ConvWeights::new(vec![layer(2, 1), layer(3, 3)]).unwrap_err();
        assert!(matches!(err, Error::WeightFormat(_)));
    }

    #[test]
    fn truncated_file_rejected() {
        let bytes = encode_layers(&[layer(2, 1)]);
        assert!(decode_layers(&bytes[..bytes.len() - 1]).is_err());
    }

    #[test]
    fn bad_activation_rejected() {
        let mut bytes = encode_layers(&[layer(1, 1)]);
        bytes[24] = 7;
        assert!(decode_layers(&bytes).is_err());
    }
}
