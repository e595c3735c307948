//! End-to-end run: detect third molars on a synthetic radiograph, classify
//! each ROI, and write heatmap/overlay PNGs plus a JSON report.
//!
//!     cargo run --example two_stage_pipeline

use std::collections::BTreeMap;
use std::path::PathBuf;

use periscan::graph::{reference_net, GraphModel, Layer, ModelKind, ReferenceKind};
use periscan::imaging::{save_png_rgb8, RadiographImage};
use periscan::pipeline::{run_case, write_report, ModelIds, PipelineConfig};

/// A detector whose output is a single fixed box, independent of the input.
/// Real deployments load a trained model JSON instead (see the README).
fn demo_detector() -> GraphModel {
    let mut column = vec![0.0; 20];
    column[0] = 48.0; // center x in the 64x64 letterbox frame
    column[1] = 40.0;
    column[2] = 16.0; // width
    column[3] = 12.0; // height
    column[4 + 2] = 0.9; // class 2: upper-right, horizontal
    let layers = vec![
        Layer::GlobalAvgPool,
        Layer::Linear { out_dim: 20, in_dim: 1, weight: vec![0.0; 20], bias: column },
        Layer::Reshape { shape: vec![20, 1] },
    ];
    GraphModel::build(ModelKind::Detector, vec![1, 1, 64, 64], layers, BTreeMap::new()).unwrap()
}

fn main() {
    let out_dir = PathBuf::from("target/examples/two_stage_pipeline");
    std::fs::create_dir_all(&out_dir).unwrap();

    // synthetic panoramic radiograph: a smooth gradient with a bright blob
    let (w, h) = (256, 128);
    let pixels: Vec<f64> = (0..w * h)
        .map(|i| {
            let (x, y) = ((i % w) as f64, (i / w) as f64);
            let blob = (-((x - 190.0).powi(2) + (y - 70.0).powi(2)) / 300.0).exp();
            ((x / w as f64) * 0.4 + blob * 0.6).min(1.0)
        })
        .collect();
    let image = RadiographImage::new(w, h, 1, pixels).unwrap();
    let image_path = out_dir.join("radiograph.png");
    save_png_rgb8(&image, &image_path).unwrap();

    let detector = demo_detector();
    let classifier = reference_net(ReferenceKind::ClassifierStub);
    let ids = ModelIds { detector: "demo:fixed-box".into(), classifier: "reference:classifier".into() };

    let report =
        run_case(&image_path, &detector, &classifier, &PipelineConfig::default(), &ids, &out_dir)
            .unwrap();
    write_report(&report, &out_dir.join("report.json")).unwrap();

    println!("image: {}", report.image_path.display());
    for d in &report.detections {
        println!(
            "  {:?} {:?} conf {:.2} -> {:?} (p_pericoronitis {:.3})",
            d.detection.quadrant,
            d.detection.angulation,
            d.detection.confidence,
            d.label,
            d.scores.p_pericoronitis,
        );
        println!("    heatmap: {}", d.heatmap_path.display());
        println!("    overlay: {}", d.overlay_path.display());
    }
    println!("full report: {}", out_dir.join("report.json").display());
}
