//! Image and disparity-map containers plus their file formats.
//!
//! Inputs are binary PGM/PPM with maxval 255. Disparity maps travel as
//! grayscale PFM ("Pf"); quarter-resolution maps use the `.q.pfm` suffix
//! since PFM has nowhere to store the resolution divisor. PNG is written for
//! visualization only.

use std::fs;
use std::path::Path;

use crate::error::{Error, Result};

/// Rectified 8-bit image, row-major, interleaved channels.
#[derive(Debug, Clone, PartialEq, Eq)]
pub struct IntensityImage {
    width: usize,
    height: usize,
    channels: usize,
    data: Vec<u8>,
}

impl IntensityImage {
    pub fn new(width: usize, height: usize, channels: usize, data: Vec<u8>) -> Result<Self> {
        if width == 0 || height == 0 {
            return Err(Error::param("image dimensions must be at least 1x1"));
        }
        if channels != 1 && channels != 3 {
            return Err(Error::param(format!("unsupported channel count {channels}")));
        }
        if data.len() != width * height * channels {
            return Err(Error::Dimension(format!(
                "expected {} samples for {width}x{height}x{channels}, got {}",
                width * height * channels,
                data.len()
            )));
        }
        Ok(Self {
            width,
            height,
            channels,
            data,
        })
    }

    pub fn gray(width: usize, height: usize, data: Vec<u8>) -> Result<Self> {
        Self::new(width, height, 1, data)
    }

    pub fn width(&self) -> usize {
        self.width
    }

    pub fn height(&self) -> usize {
        self.height
    }

    pub fn channels(&self) -> usize {
        self.channels
    }

    pub fn data(&self) -> &[u8] {
        &self.data
    }

    pub fn sample(&self, x: usize, y: usize, c: usize) -> u8 {
        self.data[(y * self.width + x) * self.channels + c]
    }

    /// Luma in [0, 1] using 0.299/0.587/0.114 weights for color inputs.
    pub fn luma(&self) -> Vec<f32> {
        match self.channels {
            1 => self.data.iter().map(|&v| v as f32 / 255.0).collect(),
            _ => self
                .data
                .chunks_exact(3)
                .map(|px| (0.299 * px[0] as f32 + 0.587 * px[1] as f32 + 0.114 * px[2] as f32) / 255.0)
                .collect(),
        }
    }
}

/// Sub-pixel disparities at a given resolution divisor, with a validity mask.
#[derive(Debug, Clone, PartialEq)]
pub struct DisparityMap {
    width: usize,
    height: usize,
    scale: usize,
    values: Vec<f32>,
    valid: Vec<bool>,
}

impl DisparityMap {
    /// All-valid map filled with `fill`.
    pub fn filled(width: usize, height: usize, scale: usize, fill: f32) -> Self {
        Self {
            width,
            height,
            scale,
            values: vec![fill; width * height],
            valid: vec![true; width * height],
        }
    }

    /// Builds a map from raw values; non-finite or negative entries become invalid.
    pub fn from_values(width: usize, height: usize, scale: usize, values: Vec<f32>) -> Result<Self> {
        if values.len() != width * height {
            return Err(Error::Dimension(format!(
                "expected {} values for {width}x{height}, got {}",
                width * height,
                values.len()
            )));
        }
        let valid = values.iter().map(|v| v.is_finite() && *v >= 0.0).collect();
        Ok(Self {
            width,
            height,
            scale,
            values,
            valid,
        })
    }

    pub fn with_validity(mut self, valid: Vec<bool>) -> Result<Self> {
        if valid.len() != self.values.len() {
            return Err(Error::Dimension("validity mask length".into()));
        }
        for (v, ok) in self.values.iter().zip(&valid) {
            if *ok && !(v.is_finite() && *v >= 0.0) {
                return Err(Error::param("valid disparities must be finite and non-negative"));
            }
        }
        self.valid = valid;
        Ok(self)
    }

    pub fn width(&self) -> usize {
        self.width
    }

    pub fn height(&self) -> usize {
        self.height
    }

    pub fn scale(&self) -> usize {
        self.scale
    }

    pub fn values(&self) -> &[f32] {
        &self.values
    }

    pub fn validity(&self) -> &[bool] {
        &self.valid
    }

    pub fn get(&self, x: usize, y: usize) -> f32 {
        self.values[y * self.width + x]
    }

    pub fn is_valid(&self, x: usize, y: usize) -> bool {
        self.valid[y * self.width + x]
    }

    pub fn set(&mut self, x: usize, y: usize, value: f32) {
        let i = y * self.width + x;
        self.values[i] = value;
        self.valid[i] = value.is_finite() && value >= 0.0;
    }

    pub fn invalidate(&mut self, x: usize, y: usize) {
        self.valid[y * self.width + x] = false;
    }

    pub fn valid_count(&self) -> usize {
        self.valid.iter().filter(|v| **v).count()
    }
}

// ---------------------------------------------------------------------------
// PGM / PPM
// ---------------------------------------------------------------------------

struct HeaderReader<'a> {
    bytes: &'a [u8],
    pos: usize,
}

impl<'a> HeaderReader<'a> {
    fn new(bytes: &'a [u8]) -> Self {
        Self { bytes, pos: 0 }
    }

    fn skip_space_and_comments(&mut self) {
        while self.pos < self.bytes.len() {
            match self.bytes[self.pos] {
                b'#' => {
                    while self.pos < self.bytes.len() && self.bytes[self.pos] != b'\n' {
                        self.pos += 1;
                    }
                }
                b if b.is_ascii_whitespace() => self.pos += 1,
                _ => break,
            }
        }
    }

    fn token(&mut self, what: &str) -> Result<(usize, &'a str)> {
        self.skip_space_and_comments();
        let start = self.pos;
        while self.pos < self.bytes.len() && !self.bytes[self.pos].is_ascii_whitespace() {
            self.pos += 1;
        }
        if start == self.pos {
            return Err(Error::format(start, format!("missing {what}")));
        }
        let text = std::str::from_utf8(&self.bytes[start..self.pos])
            .map_err(|_| Error::format(start, format!("non-ASCII {what}")))?;
        Ok((start, text))
    }

    fn number(&mut self, what: &str) -> Result<(usize, u32)> {
        let (at, text) = self.token(what)?;
        let value = text
            .parse()
            .map_err(|_| Error::format(at, format!("bad {what} {text:?}")))?;
        Ok((at, value))
    }

    /// Consumes the single whitespace byte separating header from payload.
    fn end_header(&mut self) -> Result<usize> {
        match self.bytes.get(self.pos) {
            Some(b) if b.is_ascii_whitespace() => Ok(self.pos + 1),
            _ => Err(Error::format(self.pos, "expected whitespace after header")),
        }
    }
}

/// Decodes binary PGM (P5) or PPM (P6) with maxval 255.
pub fn decode_pnm(bytes: &[u8]) -> Result<IntensityImage> {
    let mut rd = HeaderReader::new(bytes);
    let (at, magic) = rd.token("magic number")?;
    let channels = match magic {
        "P5" => 1,
        "P6" => 3,
        other => return Err(Error::format(at, format!("unsupported magic {other:?}"))),
    };
    let width = rd.number("width")?.1 as usize;
    let height = rd.number("height")?.1 as usize;
    let (maxval_at, maxval) = rd.number("maxval")?;
    if maxval != 255 {
        if maxval == 0 || maxval > 65535 {
            return Err(Error::format(maxval_at, format!("maxval {maxval} out of range")));
        }
        return Err(Error::UnsupportedMaxval(maxval));
    }
    if width == 0 || height == 0 {
        return Err(Error::format(at, "zero image dimension"));
    }
    let start = rd.end_header()?;
    let need = width * height * channels;
    let payload = &bytes[start..];
    if payload.len() < need {
        return Err(Error::format(
            bytes.len(),
            format!("truncated payload: need {need} bytes, found {}", payload.len()),
        ));
    }
    IntensityImage::new(width, height, channels, payload[..need].to_vec())
}

/// Canonical encoding: `P5\n<w> <h>\n255\n` followed by raw samples.
pub fn encode_pnm(image: &IntensityImage) -> Vec<u8> {
    let magic = if image.channels == 1 { "P5" } else { "P6" };
    let mut out = format!("{magic}\n{} {}\n255\n", image.width, image.height).into_bytes();
    out.extend_from_slice(&image.data);
    out
}

pub fn load_image(path: impl AsRef<Path>) -> Result<IntensityImage> {
    let path = path.as_ref();
    let bytes = fs::read(path).map_err(|e| Error::io(path, e))?;
    decode_pnm(&bytes)
}

pub fn save_image(image: &IntensityImage, path: impl AsRef<Path>) -> Result<()> {
    let path = path.as_ref();
    fs::write(path, encode_pnm(image)).map_err(|e| Error::io(path, e))
}

// ---------------------------------------------------------------------------
// PFM
// ---------------------------------------------------------------------------

/// Resolution divisor implied by a file name (`*.q.pfm` holds quarter-res maps).
pub fn scale_from_path(path: &Path) -> usize {
    let name = path.file_name().and_then(|n| n.to_str()).unwrap_or("");
    if name.ends_with(".q.pfm") {
        4
    } else {
        1
    }
}

pub fn decode_pfm(bytes: &[u8], scale: usize) -> Result<DisparityMap> {
    let mut rd = HeaderReader::new(bytes);
    let (at, magic) = rd.token("magic number")?;
    match magic {
        "Pf" => {}
        "PF" => return Err(Error::UnsupportedVariant("color PFM (PF)".into())),
        other => return Err(Error::format(at, format!("unsupported magic {other:?}"))),
    }
    let width = rd.number("width")?.1 as usize;
    let height = rd.number("height")?.1 as usize;
    let (scale_at, scale_text) = rd.token("scale")?;
    let endian: f64 = scale_text
        .parse()
        .map_err(|_| Error::format(scale_at, format!("bad scale {scale_text:?}")))?;
    if endian == 0.0 || !endian.is_finite() {
        return Err(Error::format(scale_at, "scale must be non-zero"));
    }
    let little = endian < 0.0;
    let start = rd.end_header()?;
    let payload = &bytes[start..];
    let need = width * height * 4;
    if payload.len() != need {
        return Err(Error::format(
            start,
            format!(
                "payload of {} bytes does not match {width}x{height} ({need} bytes)",
                payload.len()
            ),
        ));
    }
    let mut values = vec![0.0f32; width * height];
    for (i, chunk) in payload.chunks_exact(4).enumerate() {
        let raw = [chunk[0], chunk[1], chunk[2], chunk[3]];
        let v = if little {
            f32::from_le_bytes(raw)
        } else {
            f32::from_be_bytes(raw)
        };
        // rows are stored bottom-to-top
        let (row, col) = (i / width, i % width);
        values[(height - 1 - row) * width + col] = v;
    }
    let valid: Vec<bool> = values.iter().map(|v| v.is_finite() && *v >= 0.0).collect();
    for (v, ok) in values.iter_mut().zip(&valid) {
        if !ok {
            *v = 0.0;
        }
    }
    DisparityMap::from_values(width, height, scale, values)?.with_validity(valid)
}

/// Little-endian PFM; invalid pixels are stored as +inf.
pub fn encode_pfm(map: &DisparityMap) -> Vec<u8> {
    let mut out = format!("Pf\n{} {}\n-1.0\n", map.width, map.height).into_bytes();
    out.reserve(map.values.len() * 4);
    for row in (0..map.height).rev() {
        for col in 0..map.width {
            let i = row * map.width + col;
            let v = if map.valid[i] { map.values[i] } else { f32::INFINITY };
            out.extend_from_slice(&v.to_le_bytes());
        }
    }
    out
}

pub fn read_pfm(path: impl AsRef<Path>) -> Result<DisparityMap> {
    let path = path.as_ref();
    let bytes = fs::read(path).map_err(|e| Error::io(path, e))?;
    decode_pfm(&bytes, scale_from_path(path))
}

pub fn write_pfm(map: &DisparityMap, path: impl AsRef<Path>) -> Result<()> {
    let path = path.as_ref();
    let implied = scale_from_path(path);
    if implied != map.scale {
        return Err(Error::param(format!(
            "map at scale {} written to {} (implies scale {implied})",
            map.scale,
            path.display()
        )));
    }
    fs::write(path, encode_pfm(map)).map_err(|e| Error::io(path, e))
}

// ---------------------------------------------------------------------------
// Visualization
// ---------------------------------------------------------------------------

const COLORMAP: [(f32, [f32; 3]); 6] = [
    (0.0, [0.0, 0.0, 143.0]),
    (0.125, [0.0, 0.0, 255.0]),
    (0.375, [0.0, 255.0, 255.0]),
    (0.625, [255.0, 255.0, 0.0]),
    (0.875, [255.0, 0.0, 0.0]),
    (1.0, [128.0, 0.0, 0.0]),
];

/// Jet-style color for `t` in [0, 1] (clamped).
pub fn colormap(t: f32) -> [u8; 3] {
    let t = if t.is_nan() { 0.0 } else { t.clamp(0.0, 1.0) };
    let mut out = COLORMAP[COLORMAP.len() - 1].1;
    for pair in COLORMAP.windows(2) {
        let (t0, c0) = pair[0];
        let (t1, c1) = pair[1];
        if t <= t1 {
            let a = (t - t0) / (t1 - t0);
            out = [
                c0[0] + a * (c1[0] - c0[0]),
                c0[1] + a * (c1[1] - c0[1]),
                c0[2] + a * (c1[2] - c0[2]),
            ];
            break;
        }
    }
    out.map(|v| v.round() as u8)
}

/// RGB rendering of a disparity map; invalid pixels are black.
pub fn colorize(map: &DisparityMap, d_max: f32) -> Result<Vec<u8>> {
    if d_max.is_nan() || d_max <= 0.0 {
        return Err(Error::param("d_max must be positive"));
    }
    let mut rgb = Vec::with_capacity(map.values.len() * 3);
    for (v, ok) in map.values.iter().zip(&map.valid) {
        if *ok {
            rgb.extend_from_slice(&colormap(v / d_max));
        } else {
            rgb.extend_from_slice(&[0, 0, 0]);
        }
    }
    Ok(rgb)
}

pub fn write_disparity_png(map: &DisparityMap, d_max: f32, path: impl AsRef<Path>) -> Result<()> {
    let rgb = colorize(map, d_max)?;
    let buffer = image::RgbImage::from_raw(map.width as u32, map.height as u32, rgb)
        .ok_or_else(|| Error::Dimension("rgb buffer".into()))?;
    let path = path.as_ref();
    buffer
        .save_with_format(path, image::ImageFormat::Png)
        .map_err(|e| match e {
            image::ImageError::IoError(io) => Error::io(path, io),
            other => Error::Image(other),
        })
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn decodes_minimal_pgm() {
        let mut bytes = b"P5 2 2 255\n".to_vec();
        bytes.extend_from_slice(&[0, 64, 128, 255]);
        let img = decode_pnm(&bytes).unwrap();
        assert_eq!((img.width(), img.height(), img.channels()), (2, 2, 1));
        assert_eq!(img.data(), &[0, 64, 128, 255]);
    }

    #[test]
    fn decodes_ppm_with_comment() {
        let mut bytes = b"P6\n# a comment\n3 1\n255\n".to_vec();
        bytes.extend_from_slice(&[1, 2, 3, 4, 5, 6, 7, 8, 9]);
        let img = decode_pnm(&bytes).unwrap();
        assert_eq!((img.width(), img.height(), img.channels()), (3, 1, 3));
        assert_eq!(img.sample(2, 0, 1), 8);
    }

    #[test]
    fn rejects_16_bit() {
        let bytes = b"P5 1 1 65535\n\0\0".to_vec();
        assert!(matches!(decode_pnm(&bytes), Err(Error::UnsupportedMaxval(65535))));
    }

    #[test]
    fn truncated_payload_names_offset() {
        let bytes = b"P5 2 2 255\n\x01\x02".to_vec();
        match decode_pnm(&bytes) {
            Err(Error::Format { offset, .. }) => assert_eq!(offset, bytes.len()),
            other => panic!("unexpected {other:?}"),
        }
    }

    #[test]
    fn malformed_width_names_offset() {
        match decode_pnm(b"P5 x 2 255\n") {
            Err(Error::Format { offset, .. }) => assert_eq!(offset, 3),
            other => panic!("unexpected {other:?}"),
        }
    }

    #[test]
    fn pfm_round_trip_small() {
        let map = DisparityMap::from_values(2, 2, 1, vec![0.0, 1.5, 3.25, 192.0]).unwrap();
        let back = decode_pfm(&encode_pfm(&map), 1).unwrap();
        assert_eq!(back, map);
        assert_eq!(back.valid_count(), 4);
    }

    #[test]
    fn pfm_infinity_becomes_invalid() {
        let mut bytes = b"Pf\n2 1\n-1.0\n".to_vec();
        bytes.extend_from_slice(&1.0f32.to_le_bytes());
        bytes.extend_from_slice(&f32::INFINITY.to_le_bytes());
        let map = decode_pfm(&bytes, 1).unwrap();
        assert!(map.is_valid(0, 0));
        assert!(!map.is_valid(1, 0));
    }

    #[test]
    fn pfm_direct_decode_bottom_to_top() {
        let mut bytes = b"Pf\n3 2\n-1.0\n".to_vec();
        for v in [1.0f32, 2.0, 3.0, 4.0, 5.0, 6.0] {
            bytes.extend_from_slice(&v.to_le_bytes());
        }
        let map = decode_pfm(&bytes, 1).unwrap();
        assert_eq!((map.width(), map.height()), (3, 2));
        // first stored row is the bottom row
        assert_eq!(map.values(), &[4.0, 5.0, 6.0, 1.0, 2.0, 3.0]);
    }

    #[test]
    fn pfm_big_endian() {
        let mut bytes = b"Pf\n1 1\n1.0\n".to_vec();
        bytes.extend_from_slice(&2.5f32.to_be_bytes());
        assert_eq!(decode_pfm(&bytes, 1).unwrap().get(0, 0), 2.5);
    }

    #[test]
    fn pfm_color_variant_rejected() {
        let bytes = b"PF\n1 1\n-1.0\n\0\0\0\0\0\0\0\0\0\0\0\0".to_vec();
        assert!(matches!(decode_pfm(&bytes, 1), Err(Error::UnsupportedVariant(_))));
    }

    #[test]
    fn pfm_size_mismatch() {
        let bytes = b"Pf\n2 2\n-1.0\n\0\0\0\0".to_vec();
        assert!(matches!(decode_pfm(&bytes, 1), Err(Error::Format { .. })));
    }

    #[test]
    fn quarter_suffix_sets_scale() {
        assert_eq!(scale_from_path(Path::new("a/b.q.pfm")), 4);
        assert_eq!(scale_from_path(Path::new("a/b.pfm")), 1);
    }

    #[test]
    fn colormap_endpoints_and_clamp() {
        let map = DisparityMap::from_values(3, 1, 1, vec![0.0, 10.0, 20.0]).unwrap();
        let rgb = colorize(&map, 10.0).unwrap();
        assert_eq!(&rgb[0..3], &colormap(0.0));
        assert_eq!(&rgb[3..6], &colormap(1.0));
        assert_eq!(&rgb[3..6], &rgb[6..9]);
        assert_ne!(colormap(0.0), [0, 0, 0]);
    }

    #[test]
    fn invalid_pixels_render_black() {
        let map = DisparityMap::from_values(2, 1, 1, vec![f32::NAN, f32::INFINITY]).unwrap();
        assert!(colorize(&map, 5.0).unwrap().iter().all(|&b| b == 0));
    }

    #[test]
    fn luma_weights() {
        let img = IntensityImage::new(1, 1, 3, vec![255, 0, 0]).unwrap();
        assert!((img.luma()[0] - 0.299).abs() < 1e-6);
    }
}
