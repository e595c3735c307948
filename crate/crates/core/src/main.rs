//! Thin command-line front end over the library; every capability also has a
//! runnable program under `examples/`.

use std::path::{Path, PathBuf};
use std::process::ExitCode;

use clap::{Parser, Subcommand, ValueEnum};
use serde::{Deserialize, Serialize};

use periscan::classification::{classify, CaseLabel, ClassScores};
use periscan::dataset::{
    agreement_tally, load_manifest, load_reviews, parse_manifest, stratified_split,
    write_manifest, GtDetection, ManifestEntry,
};
use periscan::detection::{decode, dedupe_per_quadrant, nms, Detection};
use periscan::error::{Error, Result};
use periscan::explain::explain;
use periscan::graph::{load_model, reference_net, save_model, GraphModel, ModelKind, ReferenceKind,
    TensorValue};
use periscan::imaging::{
    hflip, letterbox_resize, load_png, mosaic, render_overlay, rotate,
    save_heatmap_png, save_png_rgb8, to_grayscale, CropTransform, RoiPatch,
};
use periscan::metrics::{classification_report, map_range, EvaluationReport, GtBox, PredBox};
use periscan::pipeline::{run_case, write_report, ExplainClass, ModelIds, PipelineConfig};

#[derive(Parser)]
#[command(name = "periscan", about = "Two-stage third-molar detection, pericoronitis classification and heatmap explanation on panoramic radiographs", version)]
struct Cli {
    #[command(subcommand)]
    command: Command,
}

#[derive(Clone, Copy, ValueEnum)]
enum ClassArg {
    Predicted,
    Normal,
    Pericoronitis,
}

#[derive(Clone, Copy, ValueEnum)]
enum RefKindArg {
    Detector,
    Classifier,
}

#[derive(Subcommand)]
enum Command {
    /// Detect third molars on a radiograph.
    Detect {
        #[arg(long)]
        image: PathBuf,
        #[arg(long)]
        model: PathBuf,
        #[arg(long, default_value_t = 0.25)]
        conf: f64,
        #[arg(long, default_value_t = 0.45)]
        iou: f64,
        #[arg(long, default_value = "report.json")]
        out: PathBuf,
    },
    /// Classify a single ROI patch PNG.
    Classify {
        #[arg(long)]
        roi: PathBuf,
        #[arg(long)]
        model: PathBuf,
        #[arg(long, default_value_t = 0.5)]
        threshold: f64,
    },
    /// Produce a heatmap and overlay for an ROI patch PNG.
    Explain {
        #[arg(long)]
        roi: PathBuf,
        #[arg(long)]
        model: PathBuf,
        #[arg(long, value_enum, default_value_t = ClassArg::Predicted)]
        class: ClassArg,
        #[arg(long, default_value_t = 0.5)]
        alpha: f64,
        #[arg(long, default_value = "explain")]
        out_prefix: PathBuf,
    },
    /// Full two-stage pipeline on one radiograph.
    Pipeline {
        #[arg(long)]
        image: PathBuf,
        #[arg(long)]
        detector: PathBuf,
        #[arg(long)]
        classifier: PathBuf,
        #[arg(long, default_value = "out")]
        out_dir: PathBuf,
        #[arg(long, default_value_t = 0.25)]
        conf: f64,
        #[arg(long, default_value_t = 0.45)]
        iou: f64,
        #[arg(long, default_value_t = 0.5)]
        threshold: f64,
        #[arg(long, default_value_t = 0.5)]
        alpha: f64,
        #[arg(long, value_enum, default_value_t = ClassArg::Predicted)]
        explain_class: ClassArg,
        #[arg(long, default_value_t = 0)]
        seed: u64,
    },
    /// Detection metrics from prediction/ground-truth box JSON files.
    EvalDet {
        #[arg(long)]
        preds: PathBuf,
        #[arg(long)]
        gts: PathBuf,
        #[arg(long, default_value_t = 0.25)]
        conf: f64,
    },
    /// Classification metrics from prediction/ground-truth label JSON files.
    EvalCls {
        #[arg(long)]
        preds: PathBuf,
        #[arg(long)]
        gts: PathBuf,
    },
    /// Stratified train/val split of a manifest.
    Split {
        #[arg(long)]
        manifest: PathBuf,
        #[arg(long, default_value_t = 0.8)]
        ratio: f64,
        #[arg(long, default_value_t = 0)]
        seed: u64,
        #[arg(long)]
        out_train: PathBuf,
        #[arg(long)]
        out_val: PathBuf,
    },
    /// Reader-agreement rate over a review file.
    Agreement {
        #[arg(long)]
        reviews: PathBuf,
    },
    /// Geometric augmentation of a manifest (hflip, rotate90/180/270, mosaic).
    Augment {
        #[arg(long)]
        manifest: PathBuf,
        #[arg(long, value_delimiter = ',')]
        ops: Vec<String>,
        #[arg(long, default_value_t = 0)]
        seed: u64,
        #[arg(long)]
        out_dir: PathBuf,
    },
    /// Export a deterministic reference model for smoke tests.
    ReferenceModel {
        #[arg(long, value_enum)]
        kind: RefKindArg,
        #[arg(long)]
        out: PathBuf,
    },
}

fn write_json<T: Serialize>(value: &T, path: &Path) -> Result<()> {
    let text = serde_json::to_string_pretty(value).expect("report serializes");
    std::fs::write(path, text).map_err(|source| Error::Io { path: path.to_path_buf(), source })
}

fn read_json<T: for<'de> Deserialize<'de>>(path: &Path) -> Result<T> {
    let text = std::fs::read_to_string(path)
        .map_err(|source| Error::Io { path: path.to_path_buf(), source })?;
    serde_json::from_str(&text).map_err(|e| Error::MalformedJson {
        path: path.to_path_buf(),
        message: e.to_string(),
    })
}

fn print_json<T: Serialize>(value: &T) {
    println!("{}", serde_json::to_string_pretty(value).expect("value serializes"));
}

/// Wrap a whole PNG as an ROI patch with an identity transform.
fn load_roi(path: &Path) -> Result<RoiPatch> {
    let gray = to_grayscale(&load_png(path)?)?;
    let (w, h) = (gray.width() as f64, gray.height() as f64);
    Ok(RoiPatch {
        source_box: periscan::detection::BBox { x1: 0.0, y1: 0.0, x2: w, y2: h },
        crop_transform: CropTransform {
            scale: 1.0,
            crop_x: 0.0,
            crop_y: 0.0,
            region_x: 0.0,
            region_y: 0.0,
        },
        pixels: gray,
    })
}

#[derive(Serialize)]
struct DetectReport {
    image: PathBuf,
    conf_threshold: f64,
    nms_iou: f64,
    detections: Vec<Detection>,
}

fn run_detect(image: &Path, model: &Path, conf: f64, iou: f64, out: &Path) -> Result<()> {
    let model = load_model(model, ModelKind::Detector)?;
    let gray = to_grayscale(&load_png(image)?)?;
    let target = model.input_size();
    let (boxed, transform) = letterbox_resize(&gray, target)?;
    let input = TensorValue::new(vec![1, 1, target, target], boxed.pixels().to_vec())?;
    let raw = model.forward(&input)?;
    let detections = dedupe_per_quadrant(&nms(&decode(&raw, conf, &transform)?, iou));
    let report = DetectReport { image: image.to_path_buf(), conf_threshold: conf, nms_iou: iou, detections };
    write_json(&report, out)?;
    print_json(&report);
    Ok(())
}

fn run_classify(roi: &Path, model: &Path, threshold: f64) -> Result<()> {
    let model = load_model(model, ModelKind::Classifier)?;
    let patch = load_roi(roi)?;
    let (scores, label) = classify(&model, &patch, threshold)?;
    #[derive(Serialize)]
    struct Out {
        scores: ClassScores,
        label: CaseLabel,
        threshold: f64,
    }
    print_json(&Out { scores, label, threshold });
    Ok(())
}

fn run_explain(
    roi: &Path,
    model: &Path,
    class: ClassArg,
    alpha: f64,
    out_prefix: &Path,
) -> Result<()> {
    let model = load_model(model, ModelKind::Classifier)?;
    let patch = load_roi(roi)?;
    let class_idx = match class {
        ClassArg::Normal => 0,
        ClassArg::Pericoronitis => 1,
        ClassArg::Predicted => {
            let (_, label) = classify(&model, &patch, 0.5)?;
            match label {
                CaseLabel::Normal => 0,
                CaseLabel::Pericoronitis => 1,
            }
        }
    };
    let heatmap = explain(&model, &patch, class_idx)?;
    let prefix = out_prefix.to_string_lossy();
    let heatmap_path = PathBuf::from(format!("{prefix}_heatmap.png"));
    let overlay_path = PathBuf::from(format!("{prefix}_overlay.png"));
    save_heatmap_png(&heatmap, &heatmap_path)?;
    // the ROI PNG may have any size; stretch the map to fit for the overlay
    let fitted = periscan::explain::upsample(&heatmap, patch.pixels.width(), patch.pixels.height())?;
    save_png_rgb8(&render_overlay(&patch.pixels, &fitted, alpha)?, &overlay_path)?;
    #[derive(Serialize)]
    struct Out {
        class_index: usize,
        heatmap_path: PathBuf,
        overlay_path: PathBuf,
    }
    print_json(&Out { class_index: class_idx, heatmap_path, overlay_path });
    Ok(())
}

#[allow(clippy::too_many_arguments)]
fn run_pipeline(
    image: &Path,
    detector: &Path,
    classifier: &Path,
    out_dir: &Path,
    config: PipelineConfig,
) -> Result<()> {
    let det = load_model(detector, ModelKind::Detector)?;
    let cls = load_model(classifier, ModelKind::Classifier)?;
    let models = ModelIds {
        detector: detector.display().to_string(),
        classifier: classifier.display().to_string(),
    };
    let report = run_case(image, &det, &cls, &config, &models, out_dir)?;
    write_report(&report, &out_dir.join("report.json"))?;
    print_json(&report);
    Ok(())
}

fn run_eval_det(preds: &Path, gts: &Path, conf: f64) -> Result<()> {
    let preds: Vec<PredBox> = read_json(preds)?;
    let gts: Vec<GtBox> = read_json(gts)?;
    let report = EvaluationReport {
        detection: Some(map_range(&preds, &gts, conf)),
        classification: None,
    };
    print_json(&report);
    Ok(())
}

#[derive(Deserialize)]
struct ClsPred {
    label: CaseLabel,
    #[serde(default)]
    score: Option<f64>,
}

fn run_eval_cls(preds: &Path, gts: &Path) -> Result<()> {
    let preds: Vec<ClsPred> = read_json(preds)?;
    let truths: Vec<CaseLabel> = read_json(gts)?;
    let labels: Vec<CaseLabel> = preds.iter().map(|p| p.label).collect();
    let scores: Option<Vec<f64>> = preds.iter().map(|p| p.score).collect();
    let report = EvaluationReport {
        detection: None,
        classification: Some(classification_report(&labels, &truths, scores.as_deref())?),
    };
    print_json(&report);
    Ok(())
}

fn run_split(
    manifest: &Path,
    ratio: f64,
    seed: u64,
    out_train: &Path,
    out_val: &Path,
) -> Result<()> {
    let entries = parse_manifest(manifest)?;
    let (train, val) = stratified_split(&entries, ratio, seed)?;
    write_manifest(&train, out_train)?;
    write_manifest(&val, out_val)?;
    #[derive(Serialize)]
    struct Out {
        train: usize,
        val: usize,
    }
    print_json(&Out { train: train.len(), val: val.len() });
    Ok(())
}

fn run_agreement(reviews: &Path) -> Result<()> {
    let set = load_reviews(reviews)?;
    let rate = agreement_tally(&set.reviews)?;
    #[derive(Serialize)]
    struct Out {
        reviews: usize,
        agreements: usize,
        rate: f64,
    }
    print_json(&Out {
        reviews: set.reviews.len(),
        agreements: set.reviews.iter().filter(|r| r.agrees).count(),
        rate,
    });
    Ok(())
}

fn boxes_of(entry: &ManifestEntry) -> Vec<periscan::detection::BBox> {
    entry.detections.iter().map(|d| d.bbox).collect()
}

fn run_augment(manifest: &Path, ops: &[String], seed: u64, out_dir: &Path) -> Result<()> {
    let loaded = load_manifest(manifest)?;
    std::fs::create_dir_all(out_dir)
        .map_err(|source| Error::Io { path: out_dir.to_path_buf(), source })?;
    let mut out_entries = Vec::new();
    for op in ops {
        match op.as_str() {
            "hflip" | "rotate90" | "rotate180" | "rotate270" => {
                for (i, entry) in loaded.entries.iter().enumerate() {
                    let gray = to_grayscale(&load_png(&entry.image)?)?;
                    let (img, boxes) = match op.as_str() {
                        "hflip" => hflip(&gray, &boxes_of(entry)),
                        "rotate90" => rotate(&gray, &boxes_of(entry), 90)?,
                        "rotate180" => rotate(&gray, &boxes_of(entry), 180)?,
                        _ => rotate(&gray, &boxes_of(entry), 270)?,
                    };
                    let path = out_dir.join(format!("{op}_{i}.png"));
                    save_png_rgb8(&img, &path)?;
                    let detections = entry
                        .detections
                        .iter()
                        .zip(&boxes)
                        .map(|(d, &bbox)| GtDetection { bbox, ..*d })
                        .collect();
                    out_entries.push(ManifestEntry {
                        image: path,
                        detections,
                        label: entry.label,
                        split: entry.split,
                    });
                }
            }
            "mosaic" => {
                for (group, chunk) in loaded.entries.chunks_exact(4).enumerate() {
                    let imgs: Vec<_> = chunk
                        .iter()
                        .map(|e| to_grayscale(&load_png(&e.image)?))
                        .collect::<Result<_>>()?;
                    let imgs: [_; 4] = imgs.try_into().expect("chunk of 4");
                    let boxes: [Vec<_>; 4] = [
                        boxes_of(&chunk[0]),
                        boxes_of(&chunk[1]),
                        boxes_of(&chunk[2]),
                        boxes_of(&chunk[3]),
                    ];
                    let (canvas, kept) = mosaic(&imgs, &boxes, seed.wrapping_add(group as u64))?;
                    let path = out_dir.join(format!("mosaic_{group}.png"));
                    save_png_rgb8(&canvas, &path)?;
                    let detections = kept
                        .iter()
                        .map(|m| GtDetection {
                            bbox: m.bbox,
                            ..chunk[m.tile].detections[m.source_index]
                        })
                        .collect();
                    out_entries.push(ManifestEntry {
                        image: path,
                        detections,
                        label: None,
                        split: None,
                    });
                }
            }
            other => {
                return Err(Error::InvalidArgument(format!(
                    "unknown augmentation op `{other}` (expected hflip, rotate90, rotate180, rotate270 or mosaic)"
                )))
            }
        }
    }
    let out_manifest = out_dir.join("manifest.json");
    write_manifest(&out_entries, &out_manifest)?;
    #[derive(Serialize)]
    struct Out {
        entries: usize,
        manifest: PathBuf,
    }
    print_json(&Out { entries: out_entries.len(), manifest: out_manifest });
    Ok(())
}

fn run_reference_model(kind: RefKindArg, out: &Path) -> Result<()> {
    let model: GraphModel = reference_net(match kind {
        RefKindArg::Detector => ReferenceKind::DetectorStub,
        RefKindArg::Classifier => ReferenceKind::ClassifierStub,
    });
    save_model(&model, out)?;
    #[derive(Serialize)]
    struct Out {
        path: PathBuf,
    }
    print_json(&Out { path: out.to_path_buf() });
    Ok(())
}

fn dispatch(cli: Cli) -> Result<()> {
    match cli.command {
        Command::Detect { image, model, conf, iou, out } => run_detect(&image, &model, conf, iou, &out),
        Command::Classify { roi, model, threshold } => run_classify(&roi, &model, threshold),
        Command::Explain { roi, model, class, alpha, out_prefix } => {
            run_explain(&roi, &model, class, alpha, &out_prefix)
        }
        Command::Pipeline {
            image,
            detector,
            classifier,
            out_dir,
            conf,
            iou,
            threshold,
            alpha,
            explain_class,
            seed,
        } => run_pipeline(
            &image,
            &detector,
            &classifier,
            &out_dir,
            PipelineConfig {
                conf_threshold: conf,
                nms_iou: iou,
                cls_threshold: threshold,
                overlay_alpha: alpha,
                explain_class: match explain_class {
                    ClassArg::Pericoronitis => ExplainClass::Pericoronitis,
                    _ => ExplainClass::Predicted,
                },
                seed,
            },
        ),
        Command::EvalDet { preds, gts, conf } => run_eval_det(&preds, &gts, conf),
        Command::EvalCls { preds, gts } => run_eval_cls(&preds, &gts),
        Command::Split { manifest, ratio, seed, out_train, out_val } => {
            run_split(&manifest, ratio, seed, &out_train, &out_val)
        }
        Command::Agreement { reviews } => run_agreement(&reviews),
        Command::Augment { manifest, ops, seed, out_dir } => {
            run_augment(&manifest, &ops, seed, &out_dir)
        }
        Command::ReferenceModel { kind, out } => run_reference_model(kind, &out),
    }
}

fn main() -> ExitCode {
    let cli = Cli::parse();
    match dispatch(cli) {
        Ok(()) => ExitCode::SUCCESS,
        Err(e) => {
            eprintln!("error: {e}");
            ExitCode::from(e.exit_code() as u8)
        }
    }
}
