//! Runs a grid of pipeline configurations over a set of scenes and tabulates
//! the metrics.

use std::fmt::Write as _;
use std::fs;
use std::path::Path;

use rayon::prelude::*;
use serde::Deserialize;

use crate::error::{Error, Result};
use crate::eval::{evaluate, MetricReport};
use crate::lookup::CascadeSchedule;
use crate::pipeline::{parse_extractor, run, PipelineConfig, UpdaterChoice};
use crate::synth::{read_scene, SyntheticScene};

/// One grid entry. Omitted fields take the pipeline defaults.
///
/// ```json
/// {"configs": [{"id": "k1", "peaks": 1, "updater": "sharpen:0.1,3"},
///              {"id": "k3", "peaks": 3, "updater": "sharpen:0.1,3"}]}
/// ```
#[derive(Debug, Clone, PartialEq, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct GridEntry {
    pub id: String,
    pub peaks: Option<usize>,
    pub schedule: Option<String>,
    pub updater: Option<String>,
    pub features: Option<String>,
    pub dmax: Option<usize>,
    pub seed: Option<u64>,
}

impl GridEntry {
    pub fn to_config(&self) -> Result<PipelineConfig> {
        let mut cfg = PipelineConfig::default();
        if let Some(k) = self.peaks {
            cfg.k = k;
        }
        if let Some(s) = &self.schedule {
            cfg = cfg.with_schedule(s.parse::<CascadeSchedule>()?);
        }
        if let Some(u) = &self.updater {
            cfg.updater = UpdaterChoice::parse(u)?;
        }
        if let Some(f) = &self.features {
            cfg.features = parse_extractor(f)?;
        }
        if let Some(d) = self.dmax {
            cfg.d_max = d;
        }
        if let Some(seed) = self.seed {
            cfg.seed = seed;
        }
        cfg.validate()?;
        Ok(cfg)
    }
}

#[derive(Debug, Clone, PartialEq, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct AblationGrid {
    pub configs: Vec<GridEntry>,
}

impl AblationGrid {
    pub fn load(path: impl AsRef<Path>) -> Result<Self> {
        let path = path.as_ref();
        let text = fs::read_to_string(path).map_err(|e| Error::io(path, e))?;
        Ok(serde_json::from_str(&text)?)
    }
}

/// Scenes below `dir`: either `dir` itself, or each subdirectory holding a
/// `spec.json`, named by directory and sorted.
pub fn load_scene_set(dir: impl AsRef<Path>) -> Result<Vec<(String, SyntheticScene)>> {
    let dir = dir.as_ref();
    if dir.join("spec.json").is_file() {
        let name = dir
            .file_name()
            .map(|n| n.to_string_lossy().into_owned())
            .unwrap_or_else(|| "scene".into());
        return Ok(vec![(name, read_scene(dir)?)]);
    }
    let mut names = Vec::new();
    for entry in fs::read_dir(dir).map_err(|e| Error::io(dir, e))? {
        let entry = entry.map_err(|e| Error::io(dir, e))?;
        if entry.path().join("spec.json").is_file() {
            names.push(entry.file_name().to_string_lossy().into_owned());
        }
    }
    names.sort();
    names
        .into_iter()
        .map(|n| {
            let scene = read_scene(dir.join(&n))?;
            Ok((n, scene))
        })
        .collect()
}

#[derive(Debug, Clone, PartialEq)]
pub struct AblationRow {
    pub scene: String,
    pub config: String,
    pub report: MetricReport,
}

#[derive(Debug, Clone, PartialEq)]
pub struct ConfigSummary {
    pub config: String,
    pub scenes: usize,
    pub epe: f64,
    pub bad1: f64,
    pub bad3: f64,
    pub d1: f64,
}

#[derive(Debug, Clone, PartialEq)]
pub struct AblationTable {
    /// Sorted by scene id, then config id.
    pub rows: Vec<AblationRow>,
}

impl AblationTable {
    pub fn to_csv(&self) -> String {
        let mut out = String::from("scene,config,epe,bad1,bad2,bad3,bad4,d1,evaluated\n");
        for r in &self.rows {
            let m = &r.report;
            let _ = writeln!(
                out,
                "{},{},{:.6},{:.6},{:.6},{:.6},{:.6},{:.6},{}",
                r.scene, r.config, m.epe, m.bad[0], m.bad[1], m.bad[2], m.bad[3], m.d1, m.evaluated
            );
        }
        out
    }

    /// Per-config means over scenes, sorted by config id.
    pub fn summary(&self) -> Vec<ConfigSummary> {
        let mut ids: Vec<&str> = self.rows.iter().map(|r| r.config.as_str()).collect();
        ids.sort();
        ids.dedup();
        ids.into_iter()
            .map(|id| {
                let rows: Vec<&MetricReport> = self.rows.iter().filter(|r| r.config == id).map(|r| &r.report).collect();
                let n = rows.len() as f64;
                let mean = |f: fn(&MetricReport) -> f64| rows.iter().map(|r| f(r)).sum::<f64>() / n;
                ConfigSummary {
                    config: id.to_string(),
                    scenes: rows.len(),
                    epe: mean(|r| r.epe),
                    bad1: mean(|r| r.bad[0]),
                    bad3: mean(|r| r.bad[2]),
                    d1: mean(|r| r.d1),
                }
            })
            .collect()
    }

    pub fn to_markdown(&self) -> String {
        let mut out = String::from("| config | scenes | EPE | >1px (%) | >3px (%) | D1 (%) |\n");
        out.push_str("|---|---:|---:|---:|---:|---:|\n");
        for s in self.summary() {
            let _ = writeln!(
                out,
                "| {} | {} | {:.3} | {:.2} | {:.2} | {:.2} |",
                s.config,
                s.scenes,
                s.epe,
                100.0 * s.bad1,
                100.0 * s.bad3,
                100.0 * s.d1
            );
        }
        out
    }
}

/// Runs every (scene, config) pair; metrics are over non-occluded pixels.
pub fn ablation_run(scenes: &[(String, SyntheticScene)], grid: &AblationGrid) -> Result<AblationTable> {
    if grid.configs.is_empty() {
        return Err(Error::param("ablation grid has no configurations"));
    }
    if scenes.is_empty() {
        return Err(Error::param("ablation needs at least one scene"));
    }
    let mut configs: Vec<(String, PipelineConfig)> = grid
        .configs
        .iter()
        .map(|e| Ok((e.id.clone(), e.to_config()?)))
        .collect::<Result<_>>()?;
    configs.sort_by(|a, b| a.0.cmp(&b.0));
    if configs.windows(2).any(|w| w[0].0 == w[1].0) {
        return Err(Error::param("ablation config ids must be unique"));
    }
    let mut order: Vec<&(String, SyntheticScene)> = scenes.iter().collect();
    order.sort_by(|a, b| a.0.cmp(&b.0));
    let jobs: Vec<_> = order
        .iter()
        .flat_map(|s| configs.iter().map(move |c| (*s, c)))
        .collect();
    let rows = jobs
        .par_iter()
        .map(|((scene_id, scene), (config_id, cfg))| {
            let (full, _) = run(&scene.left, &scene.right, cfg)?;
            let report = evaluate(&full, &scene.gt, Some(&scene.occlusion))?;
            Ok(AblationRow {
                scene: scene_id.clone(),
                config: config_id.clone(),
                report,
            })
        })
        .collect::<Result<Vec<_>>>()?;
    Ok(AblationTable { rows })
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::synth::{random_dot_stereogram, FieldSpec, RdsParams};

    fn scenes() -> Vec<(String, SyntheticScene)> {
        (0..2)
            .map(|seed| {
                let s = random_dot_stereogram(&RdsParams {
                    width: 32,
                    height: 16,
                    field: FieldSpec::Constant { d: 4.0 },
                    seed,
                    d_max: 16.0,
                    ..RdsParams::default()
                })
                .unwrap();
                (format!("s{seed}"), s)
            })
            .collect()
    }

    fn grid(json: &str) -> AblationGrid {
        serde_json::from_str(json).unwrap()
    }

    #[test]
    fn empty_grid_rejected() {
        assert!(matches!(
            ablation_run(&scenes(), &grid(r#"{"configs": []}"#)),
            Err(Error::Parameter(_))
        ));
    }

    #[test]
    fn two_config_table_is_sorted_and_deterministic() {
        let g = grid(
            r#"{"configs": [
                {"id": "k3", "peaks": 3, "dmax": 16, "schedule": "2x4"},
                {"id": "k1", "peaks": 1, "dmax": 16, "schedule": "2x4"}
            ]}"#,
        );
        let a = ablation_run(&scenes(), &g).unwrap();
        let b = ablation_run(&scenes(), &g).unwrap();
        assert_eq!(a.to_csv(), b.to_csv());
        assert_eq!(a.to_markdown(), b.to_markdown());
        let keys: Vec<(&str, &str)> = a.rows.iter().map(|r| (r.scene.as_str(), r.config.as_str())).collect();
        assert_eq!(keys, vec![("s0", "k1"), ("s0", "k3"), ("s1", "k1"), ("s1", "k3")]);
        assert_eq!(a.to_markdown().lines().count(), 4);
    }

    #[test]
    fn unknown_fields_and_bad_configs() {
        assert!(serde_json::from_str::<AblationGrid>(r#"{"configs": [{"id": "a", "k": 2}]}"#).is_err());
        let g = grid(r#"{"configs": [{"id": "a", "schedule": "4x2,4x2"}]}"#);
        assert!(ablation_run(&scenes(), &g).is_err());
        let dup = grid(r#"{"configs": [{"id": "a", "dmax": 16}, {"id": "a", "dmax": 16}]}"#);
        assert!(ablation_run(&scenes(), &dup).is_err());
    }
}
