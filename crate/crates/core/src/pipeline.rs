//! Two-stage orchestration: detect third molars, classify each ROI, explain
//! every classification, and aggregate evaluation metrics over batches.

use std::path::{Path, PathBuf};
use std::sync::atomic::{AtomicUsize, Ordering};
use std::sync::Mutex;

use serde::{Deserialize, Serialize};

use crate::classification::{classify, CaseLabel, ClassScores};
use crate::dataset::ManifestEntry;
use crate::detection::{decode, dedupe_per_quadrant, nms, Detection};
use crate::error::{Error, Result};
use crate::explain::explain;
use crate::graph::{GraphModel, ModelKind, TensorValue};
use crate::imaging::{crop_roi, letterbox_resize, load_png, render_overlay, save_heatmap_png,
    save_png_rgb8, to_grayscale};
use crate::metrics::{classification_report, map_range, EvaluationReport, GtBox, PredBox};

/// Which class the heatmap explains.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "lowercase")]
pub enum ExplainClass {
    /// Explain whichever class the classifier predicted.
    Predicted,
    /// Always explain the pericoronitis logit.
    Pericoronitis,
}

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct PipelineConfig {
    pub conf_threshold: f64,
    pub nms_iou: f64,
    pub cls_threshold: f64,
    pub overlay_alpha: f64,
    pub explain_class: ExplainClass,
    pub seed: u64,
}

impl Default for PipelineConfig {
    fn default() -> Self {
        Self {
            conf_threshold: crate::detection::DEFAULT_CONF_THRESHOLD,
            nms_iou: crate::detection::DEFAULT_NMS_IOU,
            cls_threshold: crate::classification::DEFAULT_CLS_THRESHOLD,
            overlay_alpha: 0.5,
            explain_class: ExplainClass::Predicted,
            seed: 0,
        }
    }
}

impl PipelineConfig {
    pub fn validate(&self) -> Result<()> {
        let check = |name: &str, v: f64, lo: f64, hi: f64| {
            if (lo..=hi).contains(&v) {
                Ok(())
            } else {
                Err(Error::InvalidArgument(format!(
                    "{name} = {v} outside [{lo}, {hi}]"
                )))
            }
        };
        check("conf_threshold", self.conf_threshold, 0.0, 1.0)?;
        check("nms_iou", self.nms_iou, 0.0, 1.0)?;
        check("overlay_alpha", self.overlay_alpha, 0.0, 1.0)?;
        if !(0.0 < self.cls_threshold && self.cls_threshold < 1.0) {
            return Err(Error::InvalidArgument(format!(
                "cls_threshold = {} outside (0, 1)",
                self.cls_threshold
            )));
        }
        Ok(())
    }
}

/// One classified, explained detection.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct ClassifiedDetection {
    #[serde(flatten)]
    pub detection: Detection,
    pub scores: ClassScores,
    pub label: CaseLabel,
    pub heatmap_path: PathBuf,
    pub overlay_path: PathBuf,
}

/// Identifiers echoed into every report so a run can be reproduced.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct ModelIds {
    pub detector: String,
    pub classifier: String,
}

/// Per-image result bundle.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct CaseReport {
    pub image_path: PathBuf,
    pub detections: Vec<ClassifiedDetection>,
    pub config: PipelineConfig,
    pub models: ModelIds,
}

fn require_kind(model: &GraphModel, kind: ModelKind, stage: &'static str) -> Result<()> {
    if model.kind() != kind {
        return Err(Error::Model(format!(
            "expected a {kind:?} model, got {:?}",
            model.kind()
        ))
        .in_stage(stage));
    }
    Ok(())
}

/// Run the full two-stage flow on one image and write heatmap/overlay PNGs
/// into `out_dir`.
pub fn run_case(
    image_path: &Path,
    detector: &GraphModel,
    classifier: &GraphModel,
    config: &PipelineConfig,
    models: &ModelIds,
    out_dir: &Path,
) -> Result<CaseReport> {
    config.validate()?;
    require_kind(detector, ModelKind::Detector, "detect")?;
    require_kind(classifier, ModelKind::Classifier, "classify")?;
    std::fs::create_dir_all(out_dir).map_err(|source| Error::Io {
        path: out_dir.to_path_buf(),
        source,
    })?;

    let image = load_png(image_path).map_err(|e| e.in_stage("input"))?;
    let gray = to_grayscale(&image).map_err(|e| e.in_stage("input"))?;

    let target = detector.input_size();
    let (boxed, transform) = letterbox_resize(&gray, target).map_err(|e| e.in_stage("letterbox"))?;
    let input = TensorValue::new(vec![1, 1, target, target], boxed.pixels().to_vec())
        .map_err(|e| e.in_stage("detect"))?;
    let raw = detector.forward(&input).map_err(|e| e.in_stage("detect"))?;
    let decoded =
        decode(&raw, config.conf_threshold, &transform).map_err(|e| e.in_stage("detect"))?;
    let kept = dedupe_per_quadrant(&nms(&decoded, config.nms_iou));

    let stem = image_path
        .file_stem()
        .map(|s| s.to_string_lossy().into_owned())
        .unwrap_or_else(|| "case".to_string());

    let mut detections = Vec::with_capacity(kept.len());
    for (i, det) in kept.iter().enumerate() {
        let roi = crop_roi(&gray, &det.bbox).map_err(|e| e.in_stage("roi"))?;
        let (scores, label) =
            classify(classifier, &roi, config.cls_threshold).map_err(|e| e.in_stage("classify"))?;
        let class_idx = match config.explain_class {
            ExplainClass::Pericoronitis => 1,
            ExplainClass::Predicted => match label {
                CaseLabel::Normal => 0,
                CaseLabel::Pericoronitis => 1,
            },
        };
        let heatmap = explain(classifier, &roi, class_idx).map_err(|e| e.in_stage("explain"))?;
        let heatmap_path = out_dir.join(format!("{stem}_det{i}_heatmap.png"));
        let overlay_path = out_dir.join(format!("{stem}_det{i}_overlay.png"));
        save_heatmap_png(&heatmap, &heatmap_path).map_err(|e| e.in_stage("explain"))?;
        let overlay = render_overlay(&roi.pixels, &heatmap, config.overlay_alpha)
            .map_err(|e| e.in_stage("explain"))?;
        save_png_rgb8(&overlay, &overlay_path).map_err(|e| e.in_stage("explain"))?;
        detections.push(ClassifiedDetection {
            detection: *det,
            scores,
            label,
            heatmap_path,
            overlay_path,
        });
    }

    Ok(CaseReport {
        image_path: image_path.to_path_buf(),
        detections,
        config: *config,
        models: models.clone(),
    })
}

/// Write a case report as pretty JSON.
pub fn write_report(report: &CaseReport, path: &Path) -> Result<()> {
    let text = serde_json::to_string_pretty(report).expect("report serializes");
    std::fs::write(path, text).map_err(|source| Error::Io {
        path: path.to_path_buf(),
        source,
    })
}

/// Outcome of a batch run: ordered per-case reports plus aggregate metrics
/// when the manifest carried ground truth.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct BatchReport {
    pub cases: Vec<CaseReport>,
    #[serde(skip_serializing_if = "Option::is_none")]
    pub evaluation: Option<EvaluationReport>,
}

/// Process a manifest; cases run concurrently up to `parallelism`, output
/// order follows the manifest regardless of execution order.
pub fn run_batch(
    entries: &[ManifestEntry],
    detector: &GraphModel,
    classifier: &GraphModel,
    config: &PipelineConfig,
    models: &ModelIds,
    out_dir: &Path,
    parallelism: usize,
) -> Result<BatchReport> {
    config.validate()?;
    let parallelism = parallelism.max(1);
    let next = AtomicUsize::new(0);
    let slots: Mutex<Vec<Option<Result<CaseReport>>>> =
        Mutex::new((0..entries.len()).map(|_| None).collect());

    std::thread::scope(|scope| {
        for _ in 0..parallelism.min(entries.len().max(1)) {
            scope.spawn(|| loop {
                let i = next.fetch_add(1, Ordering::Relaxed);
                if i >= entries.len() {
                    break;
                }
                let result =
                    run_case(&entries[i].image, detector, classifier, config, models, out_dir);
                slots.lock().expect("worker poisoned the result lock")[i] = Some(result);
            });
        }
    });

    let mut cases = Vec::with_capacity(entries.len());
    for slot in slots.into_inner().expect("result lock poisoned") {
        cases.push(slot.expect("every manifest index processed")?);
    }

    let evaluation = aggregate(entries, &cases, config);
    Ok(BatchReport { cases, evaluation })
}

/// Aggregate batch metrics from per-case reports. Public so the same numbers
/// can be recomputed offline from emitted JSON.
pub fn aggregate(
    entries: &[ManifestEntry],
    cases: &[CaseReport],
    config: &PipelineConfig,
) -> Option<EvaluationReport> {
    let has_det_gt = entries.iter().any(|e| !e.detections.is_empty());
    let has_labels = entries.iter().any(|e| e.label.is_some());
    if !has_det_gt && !has_labels {
        return None;
    }

    let detection = if has_det_gt {
        let mut gts = Vec::new();
        let mut preds = Vec::new();
        for (i, (entry, case)) in entries.iter().zip(cases).enumerate() {
            for g in &entry.detections {
                let class_id = Detection {
                    bbox: g.bbox,
                    quadrant: g.quadrant,
                    angulation: g.angulation,
                    confidence: 1.0,
                }
                .composite_index();
                gts.push(GtBox { image_id: i, class_id, bbox: g.bbox });
            }
            for d in &case.detections {
                preds.push(PredBox {
                    image_id: i,
                    class_id: d.detection.composite_index(),
                    bbox: d.detection.bbox,
                    confidence: d.detection.confidence,
                });
            }
        }
        Some(map_range(&preds, &gts, config.conf_threshold))
    } else {
        None
    };

    let classification = if has_labels {
        let mut preds = Vec::new();
        let mut truths = Vec::new();
        let mut scores = Vec::new();
        for (entry, case) in entries.iter().zip(cases) {
            let Some(truth) = entry.label else { continue };
            // case-level call: pericoronitis if any ROI is, scored by the
            // maximum per-ROI probability
            let score = case
                .detections
                .iter()
                .map(|d| d.scores.p_pericoronitis)
                .fold(0.0, f64::max);
            let label = if case.detections.iter().any(|d| d.label == CaseLabel::Pericoronitis) {
                CaseLabel::Pericoronitis
            } else {
                CaseLabel::Normal
            };
            preds.push(label);
            truths.push(truth);
            scores.push(score);
        }
        classification_report(&preds, &truths, Some(&scores)).ok()
    } else {
        None
    };

    Some(EvaluationReport { detection, classification })
}
