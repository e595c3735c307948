//! The evaluation battery on synthetic predictions: detection mAP, the
//! per-class precision/recall/F1 table, the confusion matrix, and the ROC
//! curve with its AUC.
//!
//!     cargo run --example evaluation_metrics

use periscan::classification::CaseLabel::{self, Normal, Pericoronitis};
use periscan::detection::BBox;
use periscan::metrics::{
    class_report, classification_report, confusion, map_range, roc_auc, round_half_up, GtBox,
    PredBox,
};

fn main() {
    // --- detection: 3 images, 4 ground truths, 5 predictions ---------------
    let b = |x: f64, y: f64| BBox { x1: x, y1: y, x2: x + 40.0, y2: y + 30.0 };
    let gts = vec![
        GtBox { image_id: 0, class_id: 0, bbox: b(10.0, 10.0) },
        GtBox { image_id: 0, class_id: 5, bbox: b(200.0, 40.0) },
        GtBox { image_id: 1, class_id: 0, bbox: b(50.0, 60.0) },
        GtBox { image_id: 2, class_id: 9, bbox: b(120.0, 90.0) },
    ];
    let preds = vec![
        PredBox { image_id: 0, class_id: 0, bbox: b(12.0, 11.0), confidence: 0.95 },
        PredBox { image_id: 0, class_id: 5, bbox: b(203.0, 42.0), confidence: 0.88 },
        PredBox { image_id: 1, class_id: 0, bbox: b(52.0, 58.0), confidence: 0.75 },
        PredBox { image_id: 2, class_id: 9, bbox: b(300.0, 10.0), confidence: 0.60 }, // miss
        PredBox { image_id: 1, class_id: 3, bbox: b(90.0, 20.0), confidence: 0.30 }, // spurious
    ];
    let det = map_range(&preds, &gts, 0.25);
    println!("detection @conf 0.25:");
    println!("  precision {:.3}  recall {:.3}", det.precision, det.recall);
    println!("  mAP50 {:.3}  mAP50-95 {:.3}", det.map50, det.map50_95);

    // --- classification: 10 cases ------------------------------------------
    let truths = [
        Pericoronitis, Pericoronitis, Pericoronitis, Pericoronitis, Normal,
        Normal, Normal, Normal, Normal, Normal,
    ];
    let scores = [0.92, 0.85, 0.77, 0.41, 0.66, 0.38, 0.30, 0.22, 0.15, 0.08];
    let preds: Vec<CaseLabel> = scores
        .iter()
        .map(|&s| if s >= 0.5 { Pericoronitis } else { Normal })
        .collect();

    let cm = confusion(&preds, &truths).unwrap();
    println!("confusion [[tp fn][fp tn]]: [[{} {}][{} {}]]", cm.tp, cm.fn_, cm.fp, cm.tn);
    let table = class_report(&cm);
    for row in [&table.normal, &table.pericoronitis] {
        println!(
            "  {:<14} P {:.2}  R {:.2}  F1 {:.2}  n={}",
            format!("{:?}", row.class),
            round_half_up(row.precision, 2),
            round_half_up(row.recall, 2),
            round_half_up(row.f1, 2),
            row.support,
        );
    }

    let roc = roc_auc(&scores, &truths).unwrap();
    println!("ROC ({} points), AUC {:.4}", roc.points.len(), roc.auc);

    // the same numbers assembled into the aggregate report JSON
    let report = classification_report(&preds, &truths, Some(&scores)).unwrap();
    println!("{}", serde_json::to_string_pretty(&report).unwrap());
}
