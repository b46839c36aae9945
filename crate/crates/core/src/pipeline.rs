//! End-to-end orchestration: features → correlation volume → pyramid →
//! cascaded lookup/update/regress iterations → full-resolution disparity.

use std::fs;
use std::path::Path;
use std::str::FromStr;

use rayon::prelude::*;
use serde::Serialize;

use crate::cost_volume::{build_correlation_volume, build_pyramid, CostPyramid, LocalCostVolume};
use crate::error::{Error, Result};
use crate::features::{context_features, ContextBundle, FeatureExtractor, FeatureMap};
use crate::imagery::{DisparityMap, IntensityImage};
use crate::lookup::{hypothesis_count, multi_peak_lookup, CascadeSchedule, HypothesisSet, LookupSource};
use crate::updater::{
    assemble_update_input, conv_gru_step, load_gru_stages, neighborhood_sharpen, null_update, refine_local_cost,
    regress_disparity, update_input_channels, GruWeights,
};
use crate::weights::ConvWeights;

/// Working resolution of the iterative stage relative to the input images.
pub const SCALE: usize = 4;

#[derive(Debug, Clone, PartialEq)]
pub enum UpdaterChoice {
    /// ΔC ≡ 0: pure lookup + regression.
    Null,
    /// Boosts the hypothesis nearest the local median of the previous map.
    Sharpen { lambda: f32, window: usize },
    /// One set of GRU weights per cascade stage.
    Gru(Vec<GruWeights>),
}

impl UpdaterChoice {
    /// Parses `null`, `sharpen:λ,w` or `gru:PATH` (the last loads the file).
    pub fn parse(s: &str) -> Result<Self> {
        if s == "null" {
            return Ok(UpdaterChoice::Null);
        }
        if let Some(rest) = s.strip_prefix("sharpen:") {
            let (l, w) = rest
                .split_once(',')
                .ok_or_else(|| Error::param(format!("expected sharpen:λ,window, got {s:?}")))?;
            let lambda = l
                .trim()
                .parse()
                .map_err(|_| Error::param(format!("bad sharpen strength {l:?}")))?;
            let window = w
                .trim()
                .parse()
                .map_err(|_| Error::param(format!("bad sharpen window {w:?}")))?;
            return Ok(UpdaterChoice::Sharpen { lambda, window });
        }
        if let Some(path) = s.strip_prefix("gru:") {
            return Ok(UpdaterChoice::Gru(load_gru_stages(path)?));
        }
        Err(Error::param(format!(
            "unknown updater {s:?} (expected null, sharpen:λ,w or gru:PATH)"
        )))
    }
}

/// Parses `census[:w]`, `ncc[:w]` or `weights:PATH`.
pub fn parse_extractor(s: &str) -> Result<FeatureExtractor> {
    let window = |rest: Option<&str>| -> Result<usize> {
        match rest {
            None => Ok(5),
            Some(w) => w.parse().map_err(|_| Error::param(format!("bad window {w:?}"))),
        }
    };
    let (name, rest) = match s.split_once(':') {
        Some((n, r)) => (n, Some(r)),
        None => (s, None),
    };
    match name {
        "census" => Ok(FeatureExtractor::Census { window: window(rest)? }),
        "ncc" => Ok(FeatureExtractor::Ncc { window: window(rest)? }),
        "weights" => {
            let path = rest.ok_or_else(|| Error::param("weights: needs a path"))?;
            Ok(FeatureExtractor::Conv(ConvWeights::load(path)?))
        }
        _ => Err(Error::param(format!(
            "unknown feature extractor {s:?} (expected census, ncc or weights:PATH)"
        ))),
    }
}

#[derive(Debug, Clone, PartialEq)]
pub struct PipelineConfig {
    pub features: FeatureExtractor,
    /// Largest disparity searched, in full-resolution pixels.
    pub d_max: usize,
    /// Peaks kept per pixel.
    pub k: usize,
    pub schedule: CascadeSchedule,
    pub updater: UpdaterChoice,
    pub iterations: usize,
    /// Hidden width of the context-derived GRU states (GRU weights override it).
    pub hidden_channels: usize,
    pub seed: u64,
    /// Keep every intermediate quarter-resolution map in the trace.
    pub keep_snapshots: bool,
}

impl Default for PipelineConfig {
    fn default() -> Self {
        let schedule = CascadeSchedule::default();
        Self {
            features: FeatureExtractor::default(),
            d_max: 192,
            k: 3,
            iterations: schedule.total(),
            schedule,
            updater: UpdaterChoice::Null,
            hidden_channels: 32,
            seed: 0,
            keep_snapshots: false,
        }
    }
}

impl PipelineConfig {
    /// Replaces the schedule and keeps `iterations` in step with it.
    pub fn with_schedule(mut self, schedule: CascadeSchedule) -> Self {
        self.iterations = schedule.total();
        self.schedule = schedule;
        self
    }

    pub fn validate(&self) -> Result<()> {
        if self.k == 0 {
            return Err(Error::param("k must be at least 1"));
        }
        if self.d_max == 0 || !self.d_max.is_multiple_of(SCALE) {
            return Err(Error::param(format!(
                "d_max must be a positive multiple of {SCALE}, got {}",
                self.d_max
            )));
        }
        if self.schedule.total() != self.iterations {
            return Err(Error::param(format!(
                "schedule {} runs {} iterations, configured {}",
                self.schedule,
                self.schedule.total(),
                self.iterations
            )));
        }
        if self.d_max / SCALE + 1 < self.k {
            return Err(Error::param(format!(
                "k = {} exceeds the {} disparity bins",
                self.k,
                self.d_max / SCALE + 1
            )));
        }
        if let UpdaterChoice::Gru(stages) = &self.updater {
            if stages.len() != self.schedule.stages().len() {
                return Err(Error::WeightFormat(format!(
                    "{} GRU stages for a {}-stage schedule",
                    stages.len(),
                    self.schedule.stages().len()
                )));
            }
            if stages.iter().any(|s| s.hidden != stages[0].hidden) {
                return Err(Error::WeightFormat("GRU stages disagree on hidden size".into()));
            }
        }
        Ok(())
    }

    fn hidden(&self) -> usize {
        match &self.updater {
            UpdaterChoice::Gru(stages) => stages[0].hidden,
            _ => self.hidden_channels,
        }
    }
}

/// Everything computed once per stereo pair before iterating.
#[derive(Debug, Clone)]
pub struct Prepared {
    pub left: FeatureMap,
    pub right: FeatureMap,
    pub context: ContextBundle,
    pub pyramid: CostPyramid,
}

pub fn prepare(left: &IntensityImage, right: &IntensityImage, config: &PipelineConfig) -> Result<Prepared> {
    config.validate()?;
    let (w, h) = (left.width(), left.height());
    if right.width() != w || right.height() != h {
        return Err(Error::param(format!(
            "left is {w}x{h}, right is {}x{}",
            right.width(),
            right.height()
        )));
    }
    if w == 0 || h == 0 || w % SCALE != 0 || h % SCALE != 0 {
        return Err(Error::param(format!(
            "image size {w}x{h} is not a positive multiple of {SCALE}"
        )));
    }
    let lf = config.features.extract(left, SCALE)?;
    let rf = config.features.extract(right, SCALE)?;
    let context = context_features(
        left,
        &config.features,
        config.schedule.stages().len(),
        config.hidden(),
        config.seed,
    )?;
    let volume = build_correlation_volume(&lf, &rf, config.d_max)?;
    let pyramid = build_pyramid(&volume);
    Ok(Prepared {
        left: lf,
        right: rf,
        context,
        pyramid,
    })
}

/// Ω_1 and its unrefined local costs from C_init, plus D_0 regressed over them.
pub fn initialize_iteration(
    pyramid: &CostPyramid,
    k: usize,
    radius: usize,
) -> Result<(HypothesisSet, LocalCostVolume, DisparityMap)> {
    let (hyps, local) = multi_peak_lookup(LookupSource::Initial(pyramid.base()), k, radius, pyramid)?;
    let d0 = regress_disparity(&local, &hyps, SCALE)?;
    Ok((hyps, local, d0))
}

#[derive(Debug, Clone, PartialEq, Serialize)]
pub struct IterationRecord {
    pub iter: usize,
    pub stage: usize,
    pub radius: usize,
    pub n_hyp: usize,
    pub mean_abs_delta: f64,
    #[serde(skip)]
    pub snapshot: Option<DisparityMap>,
}

#[derive(Debug, Clone, PartialEq)]
pub struct IterationTrace {
    pub records: Vec<IterationRecord>,
    /// Final map in quarter-resolution bins.
    pub quarter: DisparityMap,
    /// Final map in full-resolution pixels.
    pub full: DisparityMap,
}

impl IterationTrace {
    /// One JSON object per iteration, newline-terminated.
    pub fn to_jsonl(&self) -> Result<String> {
        let mut out = String::new();
        for r in &self.records {
            out.push_str(&serde_json::to_string(r)?);
            out.push('\n');
        }
        Ok(out)
    }

    pub fn write_jsonl(&self, path: impl AsRef<Path>) -> Result<()> {
        let path = path.as_ref();
        fs::write(path, self.to_jsonl()?).map_err(|e| Error::io(path, e))
    }
}

fn mean_abs_delta(a: &DisparityMap, b: &DisparityMap) -> f64 {
    let n = a.values().len().max(1);
    a.values()
        .iter()
        .zip(b.values())
        .map(|(x, y)| (*x as f64 - *y as f64).abs())
        .sum::<f64>()
        / n as f64
}

fn check_gru_stages(stages: &[GruWeights], config: &PipelineConfig, prepared: &Prepared) -> Result<()> {
    let levels = prepared.pyramid.level_count();
    let ctx = prepared.context.context.channels();
    for (s, (w, stage)) in stages.iter().zip(config.schedule.stages()).enumerate() {
        let n = hypothesis_count(config.k, stage.radius);
        if w.output() != n {
            return Err(Error::WeightFormat(format!(
                "stage {s}: head emits {} channels, stage has {n} hypotheses",
                w.output()
            )));
        }
        let expected = update_input_channels(levels, n, ctx);
        if w.input != expected {
            return Err(Error::WeightFormat(format!(
                "stage {s}: GRU reads {} input channels, updater input has {expected}",
                w.input
            )));
        }
    }
    Ok(())
}

/// Runs the iteration loop on prepared features.
pub fn iterate(prepared: &Prepared, config: &PipelineConfig) -> Result<IterationTrace> {
    config.validate()?;
    if let UpdaterChoice::Gru(stages) = &config.updater {
        check_gru_stages(stages, config, prepared)?;
    }
    let pyramid = &prepared.pyramid;
    let d_norm = (config.d_max / SCALE) as f32;
    let (r1, _) = config.schedule.radius_at(1)?;
    let (mut hyps, mut local, mut d_prev) = initialize_iteration(pyramid, config.k, r1)?;
    let mut refined: Option<LocalCostVolume> = None;
    let mut hidden = None;
    let mut current_stage = usize::MAX;
    let mut records = Vec::with_capacity(config.iterations);

    for i in 1..=config.iterations {
        let (radius, stage) = config.schedule.radius_at(i)?;
        if let Some(prev) = &refined {
            let source = LookupSource::Refined {
                hypotheses: &hyps,
                costs: prev,
            };
            (hyps, local) = multi_peak_lookup(source, config.k, radius, pyramid)?;
        }
        if stage != current_stage {
            current_stage = stage;
            hidden = Some(prepared.context.hidden_init[stage].tensor.clone());
        }
        let delta = match &config.updater {
            UpdaterChoice::Null => null_update(&hyps),
            UpdaterChoice::Sharpen { lambda, window } => neighborhood_sharpen(&hyps, &d_prev, *lambda, *window)?,
            UpdaterChoice::Gru(stages) => {
                let input = assemble_update_input(&local, &d_prev, &prepared.context.context, d_norm)?;
                let h = hidden.take().expect("hidden state set at stage entry");
                let (next, delta) = conv_gru_step(&h, &input.tensor, &stages[stage])?;
                hidden = Some(next);
                delta
            }
        };
        let c_ref = refine_local_cost(&local, &delta)?;
        let d = regress_disparity(&c_ref, &hyps, SCALE)?;
        records.push(IterationRecord {
            iter: i,
            stage,
            radius,
            n_hyp: hyps.per_pixel,
            mean_abs_delta: mean_abs_delta(&d, &d_prev),
            snapshot: config.keep_snapshots.then(|| d.clone()),
        });
        d_prev = d;
        refined = Some(c_ref);
    }
    let full = upsample_disparity(&d_prev);
    Ok(IterationTrace {
        records,
        quarter: d_prev,
        full,
    })
}

pub fn run(
    left: &IntensityImage,
    right: &IntensityImage,
    config: &PipelineConfig,
) -> Result<(DisparityMap, IterationTrace)> {
    let prepared = prepare(left, right, config)?;
    let trace = iterate(&prepared, config)?;
    Ok((trace.full.clone(), trace))
}

/// Bilinear ×4 upsampling with half-pixel-centred sampling and edge clamping;
/// values are multiplied by 4. An output pixel is invalid if any of its
/// source pixels is.
pub fn upsample_disparity(map: &DisparityMap) -> DisparityMap {
    let (w, h) = (map.width(), map.height());
    let (ow, oh) = (w * SCALE, h * SCALE);
    let axis = |o: usize, n: usize| -> (usize, usize, f32) {
        let s = ((o as f32 + 0.5) / SCALE as f32 - 0.5).clamp(0.0, (n - 1) as f32);
        let i0 = s.floor() as usize;
        let i1 = (i0 + 1).min(n - 1);
        (i0, i1, s - i0 as f32)
    };
    let rows: Vec<(Vec<f32>, Vec<bool>)> = (0..oh)
        .into_par_iter()
        .map(|oy| {
            let (y0, y1, ty) = axis(oy, h);
            let mut vals = Vec::with_capacity(ow);
            let mut ok = Vec::with_capacity(ow);
            for ox in 0..ow {
                let (x0, x1, tx) = axis(ox, w);
                let top = map.get(x0, y0) * (1.0 - tx) + map.get(x1, y0) * tx;
                let bottom = map.get(x0, y1) * (1.0 - tx) + map.get(x1, y1) * tx;
                vals.push((top * (1.0 - ty) + bottom * ty) * SCALE as f32);
                ok.push(map.is_valid(x0, y0) && map.is_valid(x1, y0) && map.is_valid(x0, y1) && map.is_valid(x1, y1));
            }
            (vals, ok)
        })
        .collect();
    let mut values = Vec::with_capacity(ow * oh);
    let mut valid = Vec::with_capacity(ow * oh);
    for (v, ok) in rows {
        values.extend(v);
        valid.extend(ok);
    }
    DisparityMap::from_values(ow, oh, 1, values)
        .and_then(|m| m.with_validity(valid))
        .expect("sizes agree by construction")
}

impl FromStr for UpdaterChoice {
    type Err = Error;

    fn from_str(s: &str) -> Result<Self> {
        UpdaterChoice::parse(s)
    }
}
