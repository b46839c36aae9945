//! Synthetic stereo pairs with exact ground truth.
//!
//! Every generator is a pure function of its parameters and seed. Random
//! numbers come from SplitMix64 (64-bit state, fixed published constants),
//! so scenes are byte-identical on every platform.

use std::fs;
use std::path::Path;

use rand::{Rng, SeedableRng};
use rand_distr::{Distribution, Normal};
use rand_xoshiro::SplitMix64;
use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};
use crate::imagery::{load_image, read_pfm, save_image, write_pfm, DisparityMap, IntensityImage};

/// Closed-form disparity fields in full-resolution pixels.
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
#[serde(tag = "kind", rename_all = "snake_case")]
pub enum FieldSpec {
    Constant {
        d: f32,
    },
    /// `d1` left of column `x0`, `d2` from `x0` on.
    Step {
        d1: f32,
        d2: f32,
        x0: usize,
    },
    /// d(x, y) = a·x + b·y + c.
    SlantedPlane {
        a: f32,
        b: f32,
        c: f32,
    },
}

/// Rounds to the nearest quarter pixel.
fn quarter_round(v: f32) -> f32 {
    (v * 4.0).round() / 4.0
}

impl FieldSpec {
    /// Evaluates the field, rounded to quarter-pixel steps and checked
    /// against `[0, d_max]`.
    pub fn evaluate(&self, width: usize, height: usize, d_max: f32) -> Result<Vec<f32>> {
        let mut out = Vec::with_capacity(width * height);
        for y in 0..height {
            for x in 0..width {
                let d = match *self {
                    FieldSpec::Constant { d } => d,
                    FieldSpec::Step { d1, d2, x0 } => {
                        if x < x0 {
                            d1
                        } else {
                            d2
                        }
                    }
                    FieldSpec::SlantedPlane { a, b, c } => a * x as f32 + b * y as f32 + c,
                };
                let d = quarter_round(d);
                if !(0.0..=d_max).contains(&d) {
                    return Err(Error::param(format!(
                        "disparity {d} at ({x}, {y}) outside [0, {d_max}]"
                    )));
                }
                out.push(d);
            }
        }
        Ok(out)
    }
}

pub fn constant_field(width: usize, height: usize, d: f32, d_max: f32) -> Result<Vec<f32>> {
    FieldSpec::Constant { d }.evaluate(width, height, d_max)
}

pub fn step_field(width: usize, height: usize, d1: f32, d2: f32, x0: usize, d_max: f32) -> Result<Vec<f32>> {
    FieldSpec::Step { d1, d2, x0 }.evaluate(width, height, d_max)
}

pub fn slanted_plane_field(width: usize, height: usize, a: f32, b: f32, c: f32, d_max: f32) -> Result<Vec<f32>> {
    FieldSpec::SlantedPlane { a, b, c }.evaluate(width, height, d_max)
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(tag = "mode", rename_all = "snake_case")]
pub enum SceneKind {
    RandomDot {
        field: FieldSpec,
        dot_density: f32,
        dot_size: usize,
        noise_sigma: f32,
    },
    RepeatedTexture {
        period: usize,
        disparity: usize,
        aperture: usize,
    },
}

/// Generator parameters, stored next to a scene as `spec.json`.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct SceneSpec {
    pub width: usize,
    pub height: usize,
    pub d_max: f32,
    pub seed: u64,
    #[serde(flatten)]
    pub kind: SceneKind,
}

#[derive(Debug, Clone, PartialEq)]
pub struct SyntheticScene {
    pub left: IntensityImage,
    pub right: IntensityImage,
    /// Left-view disparities; invalid where occluded.
    pub gt: DisparityMap,
    pub occlusion: Vec<bool>,
    /// Pixels inside the periodic texture (repeated-texture scenes only).
    pub periodic: Vec<bool>,
    pub spec: SceneSpec,
}

impl SyntheticScene {
    pub fn width(&self) -> usize {
        self.spec.width
    }

    pub fn height(&self) -> usize {
        self.spec.height
    }
}

pub fn generate(spec: &SceneSpec) -> Result<SyntheticScene> {
    match spec.kind {
        SceneKind::RandomDot {
            field,
            dot_density,
            dot_size,
            noise_sigma,
        } => random_dot_stereogram(&RdsParams {
            width: spec.width,
            height: spec.height,
            field,
            dot_density,
            dot_size,
            noise_sigma,
            seed: spec.seed,
            d_max: spec.d_max,
        }),
        SceneKind::RepeatedTexture {
            period,
            disparity,
            aperture,
        } => repeated_texture_pair(&RepeatParams {
            width: spec.width,
            height: spec.height,
            period,
            disparity,
            aperture,
            seed: spec.seed,
            d_max: spec.d_max,
        }),
    }
}

// ---------------------------------------------------------------------------
// Texture
// ---------------------------------------------------------------------------

fn check_dims(width: usize, height: usize) -> Result<()> {
    if width == 0 || height == 0 || !width.is_multiple_of(4) || !height.is_multiple_of(4) {
        return Err(Error::param(format!(
            "scene size {width}x{height} must be positive multiples of 4"
        )));
    }
    Ok(())
}

/// Random graylevel dot texture in [0, 255].
///
/// `dot_size == 1` draws an independent gray value per pixel (with
/// probability `density`, else mid-gray). Larger sizes splat Gaussian dots of
/// that diameter with random signed contrast, roughly `density` dots per
/// `dot_size²` pixels, over a weak per-pixel noise floor so no region is flat.
fn dot_texture(width: usize, height: usize, dot_size: usize, density: f32, rng: &mut SplitMix64) -> Vec<f32> {
    if dot_size <= 1 {
        return (0..width * height)
            .map(|_| {
                let v = rng.random_range(0.0f32..255.0);
                if rng.random::<f32>() < density {
                    v
                } else {
                    128.0
                }
            })
            .collect();
    }
    let sigma = dot_size as f32 / 2.0;
    let reach = (3.0 * sigma).ceil() as isize;
    let count = ((width * height) as f32 * density / (dot_size * dot_size) as f32).ceil() as usize;
    let mut acc: Vec<f32> = (0..width * height).map(|_| rng.random_range(-0.15f32..0.15)).collect();
    for _ in 0..count {
        let cx = rng.random_range(0.0..width as f32);
        let cy = rng.random_range(0.0..height as f32);
        let amp = rng.random_range(-1.0f32..1.0);
        let (x0, y0) = (cx as isize, cy as isize);
        for y in (y0 - reach).max(0)..(y0 + reach + 1).min(height as isize) {
            for x in (x0 - reach).max(0)..(x0 + reach + 1).min(width as isize) {
                let (dx, dy) = (x as f32 + 0.5 - cx, y as f32 + 0.5 - cy);
                let w = (-(dx * dx + dy * dy) / (2.0 * sigma * sigma)).exp();
                acc[y as usize * width + x as usize] += amp * w;
            }
        }
    }
    let lo = acc.iter().copied().fold(f32::INFINITY, f32::min);
    let hi = acc.iter().copied().fold(f32::NEG_INFINITY, f32::max);
    let span = (hi - lo).max(1e-6);
    acc.iter().map(|v| (v - lo) / span * 255.0).collect()
}

fn to_u8(v: f32) -> u8 {
    v.round().clamp(0.0, 255.0) as u8
}

// ---------------------------------------------------------------------------
// Random-dot stereograms
// ---------------------------------------------------------------------------

#[derive(Debug, Clone, PartialEq)]
pub struct RdsParams {
    pub width: usize,
    pub height: usize,
    pub field: FieldSpec,
    pub dot_density: f32,
    pub dot_size: usize,
    pub noise_sigma: f32,
    pub seed: u64,
    pub d_max: f32,
}

impl Default for RdsParams {
    fn default() -> Self {
        Self {
            width: 128,
            height: 96,
            field: FieldSpec::Constant { d: 8.0 },
            dot_density: 1.0,
            dot_size: 1,
            noise_sigma: 0.0,
            seed: 0,
            d_max: 192.0,
        }
    }
}

/// Right view by forward-warping the left texture along the field.
///
/// Targets are resolved to the nearest right-image column; when two left
/// pixels land on the same target the larger disparity (nearer surface) wins
/// and the loser is occluded. Right pixels nobody lands on get fresh dots.
pub fn random_dot_stereogram(params: &RdsParams) -> Result<SyntheticScene> {
    let (w, h) = (params.width, params.height);
    check_dims(w, h)?;
    if !(params.dot_density > 0.0 && params.dot_density <= 1.0) {
        return Err(Error::param("dot density must lie in (0, 1]"));
    }
    if params.noise_sigma.is_nan() || params.noise_sigma < 0.0 {
        return Err(Error::param("noise sigma must be non-negative"));
    }
    let field = params.field.evaluate(w, h, params.d_max)?;
    let mut rng = SplitMix64::seed_from_u64(params.seed);
    let texture = dot_texture(w, h, params.dot_size, params.dot_density, &mut rng);
    let fill = dot_texture(w, h, params.dot_size, params.dot_density, &mut rng);
    let (left, right, occlusion) = warp_pair(w, h, &texture, &fill, &field);
    let spec = SceneSpec {
        width: w,
        height: h,
        d_max: params.d_max,
        seed: params.seed,
        kind: SceneKind::RandomDot {
            field: params.field,
            dot_density: params.dot_density,
            dot_size: params.dot_size,
            noise_sigma: params.noise_sigma,
        },
    };
    finish_scene(
        left,
        right,
        field,
        occlusion,
        vec![false; w * h],
        spec,
        params.noise_sigma,
        &mut rng,
    )
}

/// Returns (left, right, left-view occlusion) as float images.
fn warp_pair(w: usize, h: usize, texture: &[f32], fill: &[f32], field: &[f32]) -> (Vec<f32>, Vec<f32>, Vec<bool>) {
    let left = texture.to_vec();
    let mut right = vec![0.0f32; w * h];
    let mut occlusion = vec![false; w * h];
    for y in 0..h {
        // winner per right column: (disparity, left x)
        let mut owner: Vec<Option<(f32, usize)>> = vec![None; w];
        for x in 0..w {
            let d = field[y * w + x];
            let target = (x as f32 - d).round();
            if target < 0.0 {
                occlusion[y * w + x] = true;
                continue;
            }
            let t = target as usize;
            match owner[t] {
                Some((od, ox)) if od >= d => {
                    let _ = ox;
                    occlusion[y * w + x] = true;
                }
                Some((_, ox)) => {
                    occlusion[y * w + ox] = true;
                    owner[t] = Some((d, x));
                }
                None => owner[t] = Some((d, x)),
            }
        }
        for (t, slot) in owner.iter().enumerate() {
            right[y * w + t] = match slot {
                Some((_, x)) => left[y * w + x],
                None => fill[y * w + t],
            };
        }
    }
    (left, right, occlusion)
}

#[allow(clippy::too_many_arguments)]
fn finish_scene(
    left: Vec<f32>,
    right: Vec<f32>,
    field: Vec<f32>,
    occlusion: Vec<bool>,
    periodic: Vec<bool>,
    spec: SceneSpec,
    noise_sigma: f32,
    rng: &mut SplitMix64,
) -> Result<SyntheticScene> {
    let (w, h) = (spec.width, spec.height);
    let noisy = |img: Vec<f32>, rng: &mut SplitMix64| -> Result<Vec<u8>> {
        if noise_sigma > 0.0 {
            let normal = Normal::new(0.0f32, noise_sigma).map_err(|e| Error::param(format!("noise: {e}")))?;
            Ok(img.iter().map(|v| to_u8(v + normal.sample(rng))).collect())
        } else {
            Ok(img.iter().map(|&v| to_u8(v)).collect())
        }
    };
    let left = IntensityImage::gray(w, h, noisy(left, rng)?)?;
    let right = IntensityImage::gray(w, h, noisy(right, rng)?)?;
    let valid: Vec<bool> = occlusion.iter().map(|o| !o).collect();
    let gt = DisparityMap::from_values(w, h, 1, field)?.with_validity(valid)?;
    Ok(SyntheticScene {
        left,
        right,
        gt,
        occlusion,
        periodic,
        spec,
    })
}

// ---------------------------------------------------------------------------
// Repeated texture
// ---------------------------------------------------------------------------

#[derive(Debug, Clone, PartialEq)]
pub struct RepeatParams {
    pub width: usize,
    pub height: usize,
    pub period: usize,
    pub disparity: usize,
    /// Side of the centered square that carries the periodic texture.
    pub aperture: usize,
    pub seed: u64,
    pub d_max: f32,
}

impl Default for RepeatParams {
    fn default() -> Self {
        Self {
            width: 128,
            height: 128,
            period: 8,
            disparity: 12,
            aperture: 64,
            seed: 0,
            d_max: 192.0,
        }
    }
}

/// A pair with constant disparity whose left view is horizontally periodic
/// (period `P`) inside a centered `aperture`×`aperture` square.
///
/// Inside the square, matching at `d*` and at `d* ± P` compares identical
/// texture, so the cost curve has equal peaks there. Outside it the texture
/// is aperiodic and the match is unique.
pub fn repeated_texture_pair(params: &RepeatParams) -> Result<SyntheticScene> {
    let (w, h) = (params.width, params.height);
    check_dims(w, h)?;
    let (p, d) = (params.period, params.disparity);
    if p < 2 {
        return Err(Error::param("period must be at least 2"));
    }
    let d_max = params.d_max;
    let ok = |v: isize| v >= 0 && v as f32 <= d_max;
    if !ok(d as isize) || !ok(d as isize - p as isize) || !ok((d + p) as isize) {
        return Err(Error::param(format!(
            "d* = {d} and d* ± P = {d} ± {p} must lie in [0, {d_max}]"
        )));
    }
    let mut rng = SplitMix64::seed_from_u64(params.seed);
    let mut texture = dot_texture(w, h, 1, 1.0, &mut rng);
    let pattern = dot_texture(p.min(w), h, 1, 1.0, &mut rng);
    let side = params.aperture.min(w).min(h);
    let (x0, y0) = ((w - side) / 2, (h - side) / 2);
    let mut periodic = vec![false; w * h];
    for y in y0..y0 + side {
        for x in x0..x0 + side {
            texture[y * w + x] = pattern[y * p.min(w) + (x - x0) % p.min(w)];
            periodic[y * w + x] = p < w;
        }
    }
    let fill = dot_texture(w, h, 1, 1.0, &mut rng);
    let field = vec![d as f32; w * h];
    let (left, right, occlusion) = warp_pair(w, h, &texture, &fill, &field);
    let spec = SceneSpec {
        width: w,
        height: h,
        d_max,
        seed: params.seed,
        kind: SceneKind::RepeatedTexture {
            period: p,
            disparity: d,
            aperture: params.aperture,
        },
    };
    finish_scene(left, right, field, occlusion, periodic, spec, 0.0, &mut rng)
}

// ---------------------------------------------------------------------------
// Scene directories
// ---------------------------------------------------------------------------

fn mask_image(mask: &[bool], w: usize, h: usize) -> Result<IntensityImage> {
    IntensityImage::gray(w, h, mask.iter().map(|&m| if m { 255 } else { 0 }).collect())
}

/// Writes `left.pgm`, `right.pgm`, `gt.pfm`, `occ.pgm` and `spec.json`
/// (plus `periodic.pgm` for repeated-texture scenes).
pub fn write_scene(scene: &SyntheticScene, dir: impl AsRef<Path>) -> Result<()> {
    let dir = dir.as_ref();
    fs::create_dir_all(dir).map_err(|e| Error::io(dir, e))?;
    let (w, h) = (scene.width(), scene.height());
    save_image(&scene.left, dir.join("left.pgm"))?;
    save_image(&scene.right, dir.join("right.pgm"))?;
    write_pfm(&scene.gt, dir.join("gt.pfm"))?;
    save_image(&mask_image(&scene.occlusion, w, h)?, dir.join("occ.pgm"))?;
    if scene.periodic.iter().any(|&p| p) {
        save_image(&mask_image(&scene.periodic, w, h)?, dir.join("periodic.pgm"))?;
    }
    let json = serde_json::to_string_pretty(&scene.spec)?;
    let spec_path = dir.join("spec.json");
    fs::write(&spec_path, json + "\n").map_err(|e| Error::io(spec_path, e))
}

/// Reads a mask PGM: nonzero samples are set.
pub fn read_mask(path: impl AsRef<Path>) -> Result<Vec<bool>> {
    let img = load_image(path)?;
    Ok(img.data().iter().step_by(img.channels()).map(|&v| v != 0).collect())
}

pub fn read_scene(dir: impl AsRef<Path>) -> Result<SyntheticScene> {
    let dir = dir.as_ref();
    let spec_path = dir.join("spec.json");
    let text = fs::read_to_string(&spec_path).map_err(|e| Error::io(&spec_path, e))?;
    let spec: SceneSpec = serde_json::from_str(&text)?;
    let left = load_image(dir.join("left.pgm"))?;
    let right = load_image(dir.join("right.pgm"))?;
    let gt = read_pfm(dir.join("gt.pfm"))?;
    let occlusion = read_mask(dir.join("occ.pgm"))?;
    let periodic_path = dir.join("periodic.pgm");
    let periodic = if periodic_path.exists() {
        read_mask(periodic_path)?
    } else {
        vec![false; spec.width * spec.height]
    };
    Ok(SyntheticScene {
        left,
        right,
        gt,
        occlusion,
        periodic,
        spec,
    })
}

#[cfg(test)]
mod tests {
    use super::*;

    fn rds(field: FieldSpec, seed: u64) -> SyntheticScene {
        random_dot_stereogram(&RdsParams {
            width: 64,
            height: 32,
            field,
            seed,
            ..RdsParams::default()
        })
        .unwrap()
    }

    fn assert_warp_consistent(scene: &SyntheticScene) {
        let w = scene.width();
        for y in 0..scene.height() {
            for x in 0..w {
                if scene.occlusion[y * w + x] {
                    continue;
                }
                let xr = (x as f32 - scene.gt.get(x, y)).round() as usize;
                assert_eq!(scene.right.sample(xr, y, 0), scene.left.sample(x, y, 0), "({x},{y})");
            }
        }
    }

    #[test]
    fn constant_shift_geometry() {
        let s = rds(FieldSpec::Constant { d: 8.0 }, 3);
        assert!(s.gt.values().iter().all(|&d| d == 8.0));
        for y in 0..32 {
            for x in 0..64 {
                assert_eq!(s.occlusion[y * 64 + x], x < 8);
            }
        }
        assert_warp_consistent(&s);
    }

    #[test]
    fn step_occlusion_band() {
        let s = rds(
            FieldSpec::Step {
                d1: 4.0,
                d2: 16.0,
                x0: 32,
            },
            5,
        );
        for y in 0..32 {
            let occluded: Vec<usize> = (0..64).filter(|&x| s.occlusion[y * 64 + x]).collect();
            let expected: Vec<usize> = (0..4).chain(20..32).collect();
            assert_eq!(occluded, expected);
        }
        assert_warp_consistent(&s);
    }

    #[test]
    fn slanted_plane_warp_consistent() {
        let s = random_dot_stereogram(&RdsParams {
            width: 64,
            height: 32,
            field: FieldSpec::SlantedPlane {
                a: 0.1,
                b: 0.05,
                c: 2.0,
            },
            dot_size: 6,
            seed: 9,
            ..RdsParams::default()
        })
        .unwrap();
        assert_warp_consistent(&s);
    }

    #[test]
    fn seeded_generation_is_deterministic() {
        let a = rds(FieldSpec::Constant { d: 4.0 }, 11);
        let b = rds(FieldSpec::Constant { d: 4.0 }, 11);
        assert_eq!(a, b);
        assert_ne!(a.left, rds(FieldSpec::Constant { d: 4.0 }, 12).left);
    }

    #[test]
    fn field_closed_forms() {
        assert!(constant_field(64, 64, 8.0, 192.0).unwrap().iter().all(|&d| d == 8.0));
        let step = step_field(64, 2, 4.0, 16.0, 32, 192.0).unwrap();
        assert!(step[..32].iter().all(|&d| d == 4.0) && step[32..64].iter().all(|&d| d == 16.0));
        let plane = slanted_plane_field(8, 4, 0.5, 0.25, 1.0, 192.0).unwrap();
        assert_eq!(plane[3 * 8 + 5], 0.5 * 5.0 + 0.25 * 3.0 + 1.0);
        assert!(constant_field(4, 4, 200.0, 192.0).is_err());
        // quarter-pixel rounding
        assert_eq!(slanted_plane_field(4, 4, 0.0, 0.0, 1.1, 192.0).unwrap()[0], 1.0);
    }

    #[test]
    fn parameter_checks() {
        let bad_density = RdsParams {
            dot_density: 0.0,
            ..RdsParams::default()
        };
        assert!(random_dot_stereogram(&bad_density).is_err());
        let bad_size = RdsParams {
            width: 30,
            ..RdsParams::default()
        };
        assert!(random_dot_stereogram(&bad_size).is_err());
        let bad_period = RepeatParams {
            period: 1,
            ..RepeatParams::default()
        };
        assert!(repeated_texture_pair(&bad_period).is_err());
        let bad_range = RepeatParams {
            disparity: 4,
            ..RepeatParams::default()
        };
        assert!(repeated_texture_pair(&bad_range).is_err());
    }

    #[test]
    fn repeated_texture_is_periodic_inside_aperture() {
        let s = repeated_texture_pair(&RepeatParams {
            width: 64,
            height: 64,
            aperture: 32,
            ..RepeatParams::default()
        })
        .unwrap();
        for y in 16..48 {
            for x in 16..40 {
                assert!(s.periodic[y * 64 + x]);
                assert_eq!(s.left.sample(x, y, 0), s.left.sample(x + 8, y, 0));
            }
        }
        assert!(!s.periodic[0]);
        assert_warp_consistent(&s);
    }

    #[test]
    fn period_wider_than_image_is_aperiodic() {
        let s = repeated_texture_pair(&RepeatParams {
            width: 32,
            height: 32,
            period: 36,
            disparity: 40,
            aperture: 32,
            ..RepeatParams::default()
        })
        .unwrap();
        assert!(s.periodic.iter().all(|p| !p));
    }

    #[test]
    fn scene_directory_round_trip() {
        let dir = tempfile::tempdir().unwrap();
        let s = repeated_texture_pair(&RepeatParams {
            width: 32,
            height: 32,
            aperture: 16,
            ..RepeatParams::default()
        })
        .unwrap();
        write_scene(&s, dir.path()).unwrap();
        let back = read_scene(dir.path()).unwrap();
        assert_eq!((&back.left, &back.right, &back.spec), (&s.left, &s.right, &s.spec));
        assert_eq!((&back.occlusion, &back.periodic), (&s.occlusion, &s.periodic));
        assert_eq!(back.gt.validity(), s.gt.validity());
        for (i, ok) in s.gt.validity().iter().enumerate() {
            if *ok {
                assert_eq!(back.gt.values()[i], s.gt.values()[i]);
            }
        }
    }
}
