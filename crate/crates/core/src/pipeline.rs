//! The four workflow stages (project, segment, back-project, evaluate) over
//! every scene of a [`SceneConfig`], plus the file layout they share.
//!
//! Work directory layout:
//!
//! ```text
//! <out>/<scene>.ppm            equirectangular image
//! <out>/<scene>.spmap          point↔pixel mapping
//! <masks>/<scene>/mask_union.pgm  (or boxes.json + mask_<k>.pgm)
//! <out>/prediction.txt         merged prediction set
//! <out>/highlighted.ply        cloud with predicted points recolored
//! <out>/report.json            evaluation report
//! ```

use std::fmt;
use std::fs;
use std::path::{Path, PathBuf};

use serde::{Deserialize, Serialize};

use crate::backproject::{
    apply_labels, backproject, merge_predictions, read_prediction, write_prediction,
    PredictionSet, HIGHLIGHT,
};
use crate::cloud::{load_point_cloud, save_labeled_cloud, CloudFormat, LabeledCloud};
use crate::config::SceneConfig;
use crate::eval::{
    aggregate, compute_metrics, confusion_counts, confusion_counts_within, fp_breakdown,
    fp_breakdown_within, fp_columns, render_fp_table, render_metrics_table, AreaReport,
    Confusion, FpBreakdown, MetricsReport,
};
use crate::image::write_image;
use crate::mapping::{read_mapping, write_mapping, PixelMapping};
use crate::masks::{
    box_mask_file, filter_boxes, merge_masks, read_boxes_indexed, read_mask_pgm, write_mask_pgm,
    Mask, BOXES_FILE, UNION_MASK_FILE,
};
use crate::oracle::{oracle_mask, perturb_mask, OracleRule};
use crate::projection::{project_scene, ProjectionStats};

pub const PREDICTION_FILE: &str = "prediction.txt";
pub const HIGHLIGHTED_FILE: &str = "highlighted.ply";
pub const REPORT_FILE: &str = "report.json";
pub const MASKS_DIR: &str = "masks";

#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub enum Stage {
    Load,
    Project,
    Segment,
    Backproject,
    Evaluate,
}

impl fmt::Display for Stage {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        f.write_str(match self {
            Stage::Load => "load",
            Stage::Project => "project",
            Stage::Segment => "segment",
            Stage::Backproject => "backproject",
            Stage::Evaluate => "evaluate",
        })
    }
}

type BoxedError = Box<dyn std::error::Error + Send + Sync>;

#[derive(Debug, thiserror::Error)]
pub enum PipelineError {
    #[error(transparent)]
    Config(#[from] crate::config::ConfigError),
    #[error("{stage}{}: {source}", scene_suffix(.scene))]
    Data {
        stage: Stage,
        scene: Option<String>,
        #[source]
        source: BoxedError,
    },
}

fn scene_suffix(scene: &Option<String>) -> String {
    scene
        .as_ref()
        .map_or_else(String::new, |s| format!(" [scene {s}]"))
}

impl PipelineError {
    /// Process exit code: 1 for configuration problems, 2 for data errors.
    pub fn exit_code(&self) -> i32 {
        match self {
            PipelineError::Config(_) => 1,
            PipelineError::Data { .. } => 2,
        }
    }

    pub fn stage(&self) -> Option<Stage> {
        match self {
            PipelineError::Config(_) => None,
            PipelineError::Data { stage, .. } => Some(*stage),
        }
    }
}

trait StageContext<T> {
    fn at(self, stage: Stage, scene: Option<&str>) -> Result<T, PipelineError>;
}

impl<T, E: Into<BoxedError>> StageContext<T> for Result<T, E> {
    fn at(self, stage: Stage, scene: Option<&str>) -> Result<T, PipelineError> {
        self.map_err(|e| PipelineError::Data {
            stage,
            scene: scene.map(str::to_string),
            source: e.into(),
        })
    }
}

pub fn image_path(dir: &Path, scene: &str) -> PathBuf {
    dir.join(format!("{scene}.ppm"))
}

pub fn mapping_path(dir: &Path, scene: &str) -> PathBuf {
    dir.join(format!("{scene}.spmap"))
}

pub fn scene_mask_dir(masks_dir: &Path, scene: &str) -> PathBuf {
    masks_dir.join(scene)
}

/// Loads the configured cloud and applies the category override.
pub fn load_cloud(cfg: &SceneConfig) -> Result<LabeledCloud, PipelineError> {
    let mut cloud = load_point_cloud(&cfg.cloud_path, cfg.cloud_format).at(Stage::Load, None)?;
    if let Some(names) = &cfg.categories {
        cloud = cloud.with_category_names(names.clone()).at(Stage::Load, None)?;
    }
    cloud.ensure_valid().at(Stage::Load, None)?;
    if cloud.category_name(cfg.building_label).is_none() {
        return Err(PipelineError::Config(crate::config::ConfigError::Invalid(
            format!("building_label {} is not a category of the cloud", cfg.building_label),
        )));
    }
    Ok(cloud)
}

fn create_dir(dir: &Path, stage: Stage) -> Result<(), PipelineError> {
    fs::create_dir_all(dir).at(stage, None)
}

#[derive(Debug, Clone, PartialEq, Serialize)]
pub struct SceneProjection {
    pub scene: String,
    pub stats: ProjectionStats,
}

/// Writes `<scene>.ppm` and `<scene>.spmap` for every scene.
pub fn cmd_project(
    cfg: &SceneConfig,
    cloud: &LabeledCloud,
    out_dir: &Path,
) -> Result<Vec<SceneProjection>, PipelineError> {
    create_dir(out_dir, Stage::Project)?;
    let mut summaries = Vec::with_capacity(cfg.scenes.len());
    for scene in &cfg.scenes {
        let name = Some(scene.name.as_str());
        let p = project_scene(
            cloud,
            &scene.reference_point(),
            cfg.image.width,
            cfg.image.height,
            cfg.max_range,
        )
        .at(Stage::Project, name)?;
        write_image(&p.image, &image_path(out_dir, &scene.name)).at(Stage::Project, name)?;
        write_mapping(&p.mapping, &mapping_path(out_dir, &scene.name)).at(Stage::Project, name)?;
        if p.stats.dropped_degenerate > 0 {
            log::warn!(
                "scene {}: dropped {} point(s) at the reference",
                scene.name,
                p.stats.dropped_degenerate
            );
        }
        summaries.push(SceneProjection {
            scene: scene.name.clone(),
            stats: p.stats,
        });
    }
    Ok(summaries)
}

fn load_scene_mapping(
    cfg: &SceneConfig,
    work_dir: &Path,
    scene: &str,
    stage: Stage,
) -> Result<PixelMapping, PipelineError> {
    let mapping = read_mapping(&mapping_path(work_dir, scene)).at(stage, Some(scene))?;
    if (mapping.width(), mapping.height()) != (cfg.image.width, cfg.image.height) {
        return Err(format!(
            "mapping is {}x{} but config image is {}x{}",
            mapping.width(),
            mapping.height(),
            cfg.image.width,
            cfg.image.height
        ))
        .at(stage, Some(scene));
    }
    Ok(mapping)
}

/// Writes `<masks_dir>/<scene>/mask_union.pgm` from ground truth, optionally
/// dilated to imitate contour bleed.
pub fn cmd_segment_oracle(
    cfg: &SceneConfig,
    cloud: &LabeledCloud,
    work_dir: &Path,
    masks_dir: &Path,
    rule: OracleRule,
    dilate_px: u32,
) -> Result<(), PipelineError> {
    for scene in &cfg.scenes {
        let name = Some(scene.name.as_str());
        let mapping = load_scene_mapping(cfg, work_dir, &scene.name, Stage::Segment)?;
        let mask = oracle_mask(&mapping, cloud, cfg.building_label, rule).at(Stage::Segment, name)?;
        let mask = perturb_mask(&mask, dilate_px, 0);
        let dir = scene_mask_dir(masks_dir, &scene.name);
        fs::create_dir_all(&dir).at(Stage::Segment, name)?;
        write_mask_pgm(&mask, &dir.join(UNION_MASK_FILE)).at(Stage::Segment, name)?;
    }
    Ok(())
}

/// Reads the building mask of one scene from a segmenter output directory.
///
/// With a `boxes.json`, boxes scoring below `min_score` are discarded and the
/// masks of the remaining boxes are merged; otherwise `mask_union.pgm` is used.
pub fn load_scene_mask(
    dir: &Path,
    width: u32,
    height: u32,
    min_score: f64,
) -> Result<Mask, BoxedError> {
    let boxes_path = dir.join(BOXES_FILE);
    let union_path = dir.join(UNION_MASK_FILE);
    let mask = if boxes_path.exists() {
        let (set, indices) = read_boxes_indexed(&boxes_path, width, height)?;
        let kept = filter_boxes(&set, min_score);
        let mut masks = vec![Mask::new(width, height)];
        for (b, k) in set.boxes.iter().zip(indices) {
            if kept.boxes.contains(b) {
                masks.push(read_mask_pgm(&dir.join(box_mask_file(k)))?);
            }
        }
        for m in &masks {
            m.ensure_dims(width, height)?;
        }
        merge_masks(&masks)?
    } else if union_path.exists() {
        read_mask_pgm(&union_path)?
    } else {
        return Err(format!(
            "no {BOXES_FILE} or {UNION_MASK_FILE} in {}",
            dir.display()
        )
        .into());
    };
    mask.ensure_dims(width, height)?;
    Ok(mask)
}

/// Checks that every scene has a readable mask of the configured size.
pub fn check_masks(cfg: &SceneConfig, masks_dir: &Path) -> Result<(), PipelineError> {
    for scene in &cfg.scenes {
        load_scene_mask(
            &scene_mask_dir(masks_dir, &scene.name),
            cfg.image.width,
            cfg.image.height,
            cfg.min_score,
        )
        .at(Stage::Segment, Some(&scene.name))?;
    }
    Ok(())
}

/// Back-projects every scene's mask, merges the predictions and writes
/// `prediction.txt` and `highlighted.ply` into `work_dir`.
pub fn cmd_backproject(
    cfg: &SceneConfig,
    cloud: &LabeledCloud,
    work_dir: &Path,
    masks_dir: &Path,
) -> Result<PredictionSet, PipelineError> {
    let mode = cfg
        .depth_mode()
        .map_err(|e| crate::config::ConfigError::Invalid(e.to_string()))?;
    let mut sets = Vec::with_capacity(cfg.scenes.len());
    for scene in &cfg.scenes {
        let name = Some(scene.name.as_str());
        let mapping = load_scene_mapping(cfg, work_dir, &scene.name, Stage::Backproject)?;
        let mask = load_scene_mask(
            &scene_mask_dir(masks_dir, &scene.name),
            cfg.image.width,
            cfg.image.height,
            cfg.min_score,
        )
        .at(Stage::Backproject, name)?;
        sets.push(backproject(&mask, &mapping, mode, cloud.len()).at(Stage::Backproject, name)?);
    }
    let merged = merge_predictions(&sets).at(Stage::Backproject, None)?;
    write_prediction(&merged, &work_dir.join(PREDICTION_FILE)).at(Stage::Backproject, None)?;
    let highlighted = apply_labels(cloud, &merged, HIGHLIGHT).at(Stage::Backproject, None)?;
    save_labeled_cloud(
        &highlighted,
        &work_dir.join(HIGHLIGHTED_FILE),
        CloudFormat::PlyAscii,
    )
    .at(Stage::Backproject, None)?;
    Ok(merged)
}

/// Whole-cloud row plus one row per scene restricted to the points that
/// scene's mapping contains.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct EvaluationReport {
    #[serde(flatten)]
    pub total: AreaReport,
    pub scenes: Vec<AreaReport>,
}

impl EvaluationReport {
    pub fn render(&self, fp_extra: &[&str]) -> String {
        let mut rows: Vec<MetricsReport> = self.scenes.iter().map(AreaReport::metrics_report).collect();
        rows.push(self.total.metrics_report());
        let mut fp_rows: Vec<(String, FpBreakdown)> = self
            .scenes
            .iter()
            .map(|s| (s.area.clone(), s.fp_breakdown.clone()))
            .collect();
        fp_rows.push((self.total.area.clone(), self.total.fp_breakdown.clone()));
        let cols = fp_columns(fp_extra.iter().copied());
        format!(
            "{}\nFalse-positive share by category\n{}",
            render_metrics_table(&rows),
            render_fp_table(&cols, &fp_rows)
        )
    }
}

fn non_building_names(cloud: &LabeledCloud, building_label: u32) -> Vec<&str> {
    cloud
        .category_names()
        .iter()
        .filter(|(&id, _)| id != building_label)
        .map(|(_, n)| n.as_str())
        .collect()
}

/// Evaluates a prediction against the cloud's labels and writes `report.json`.
pub fn cmd_evaluate(
    cfg: &SceneConfig,
    cloud: &LabeledCloud,
    work_dir: &Path,
    prediction_path: &Path,
) -> Result<(EvaluationReport, String), PipelineError> {
    let pred = read_prediction(prediction_path).at(Stage::Evaluate, None)?;
    let report = evaluate_prediction(cfg, cloud, work_dir, &pred)?;
    let json = serde_json::to_string_pretty(&report).at(Stage::Evaluate, None)?;
    fs::write(work_dir.join(REPORT_FILE), json + "\n").at(Stage::Evaluate, None)?;
    let table = report.render(&non_building_names(cloud, cfg.building_label));
    Ok((report, table))
}

pub fn evaluate_prediction(
    cfg: &SceneConfig,
    cloud: &LabeledCloud,
    work_dir: &Path,
    pred: &PredictionSet,
) -> Result<EvaluationReport, PipelineError> {
    let label = cfg.building_label;
    let confusion = confusion_counts(pred, cloud, label).at(Stage::Evaluate, None)?;
    let fp = fp_breakdown(pred, cloud, label).at(Stage::Evaluate, None)?;
    let total = AreaReport::new(compute_metrics(&confusion, cfg.area_name()), fp);

    let mut scenes = Vec::with_capacity(cfg.scenes.len());
    for scene in &cfg.scenes {
        let name = Some(scene.name.as_str());
        let mapping = load_scene_mapping(cfg, work_dir, &scene.name, Stage::Evaluate)?;
        let mut visible: Vec<usize> = (0..mapping.n_pixels())
            .flat_map(|p| mapping.pixel_entries(p).iter().map(|e| e.point_index as usize))
            .collect();
        visible.sort_unstable();
        if visible.last().is_some_and(|&i| i >= cloud.len()) {
            return Err("mapping references points beyond the cloud").at(Stage::Evaluate, name);
        }
        let c = confusion_counts_within(pred, cloud, label, visible.iter().copied())
            .at(Stage::Evaluate, name)?;
        let fp = fp_breakdown_within(pred, cloud, label, visible.iter().copied())
            .at(Stage::Evaluate, name)?;
        scenes.push(AreaReport::new(compute_metrics(&c, &scene.name), fp));
    }
    Ok(EvaluationReport { total, scenes })
}

#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub enum MaskSource<'a> {
    Oracle { rule: OracleRule, dilate_px: u32 },
    External(&'a Path),
}

#[derive(Debug, Clone)]
pub struct PipelineRun {
    pub projections: Vec<SceneProjection>,
    pub prediction: PredictionSet,
    pub report: EvaluationReport,
    pub table: String,
}

/// Runs all stages; the first failing stage aborts the run.
pub fn cmd_pipeline(
    cfg: &SceneConfig,
    out_dir: &Path,
    masks: MaskSource<'_>,
) -> Result<PipelineRun, PipelineError> {
    let cloud = load_cloud(cfg)?;
    let projections = cmd_project(cfg, &cloud, out_dir)?;
    let masks_dir = match masks {
        MaskSource::Oracle { rule, dilate_px } => {
            let dir = out_dir.join(MASKS_DIR);
            cmd_segment_oracle(cfg, &cloud, out_dir, &dir, rule, dilate_px)?;
            dir
        }
        MaskSource::External(dir) => {
            check_masks(cfg, dir)?;
            dir.to_path_buf()
        }
    };
    let prediction = cmd_backproject(cfg, &cloud, out_dir, &masks_dir)?;
    let (report, table) = cmd_evaluate(cfg, &cloud, out_dir, &out_dir.join(PREDICTION_FILE))?;
    Ok(PipelineRun {
        projections,
        prediction,
        report,
        table,
    })
}

/// Pools several areas' reports into a per-area table with a `Total` row.
pub fn summarize(reports: &[EvaluationReport]) -> Result<(Vec<AreaReport>, String), PipelineError> {
    let rows: Vec<AreaReport> = reports.iter().map(|r| r.total.clone()).collect();
    let pooled: Vec<(Confusion, String)> =
        rows.iter().map(|r| (r.confusion, r.area.clone())).collect();
    let total = aggregate(&pooled).at(Stage::Evaluate, None)?;

    // Per-category false-positive counts are recovered from ratio × fp.
    let mut fp_counts: std::collections::BTreeMap<String, f64> = Default::default();
    for r in &rows {
        for (name, ratio) in &r.fp_breakdown.ratios {
            *fp_counts.entry(name.clone()).or_default() += (ratio * r.confusion.fp as f64).round();
        }
    }
    let fp_sum: f64 = fp_counts.values().sum();
    let total_fp = FpBreakdown {
        ratios: if fp_sum > 0.0 {
            fp_counts.into_iter().map(|(k, v)| (k, v / fp_sum)).collect()
        } else {
            Default::default()
        },
    };
    let mut all_rows = rows.clone();
    all_rows.push(AreaReport::new(total, total_fp));

    let metric_rows: Vec<MetricsReport> = all_rows.iter().map(AreaReport::metrics_report).collect();
    let extra: Vec<&str> = all_rows
        .iter()
        .flat_map(|r| r.fp_breakdown.ratios.keys().map(String::as_str))
        .collect();
    let fp_rows: Vec<(String, FpBreakdown)> = all_rows
        .iter()
        .map(|r| (r.area.clone(), r.fp_breakdown.clone()))
        .collect();
    let table = format!(
        "{}\nFalse-positive share by category\n{}",
        render_metrics_table(&metric_rows),
        render_fp_table(&fp_columns(extra), &fp_rows)
    );
    Ok((all_rows, table))
}
