//! Explain a single classification: compute channel weights analytically and
//! by finite differences, build the class-activation heatmap, and render it
//! over the ROI.
//!
//!     cargo run --example gradcam_overlay

use std::path::PathBuf;

use periscan::classification::{classify, preprocess};
use periscan::detection::BBox;
use periscan::explain::{explain, gradcam_weights, WeightMode};
use periscan::graph::{reference_net, ReferenceKind};
use periscan::imaging::{render_overlay, save_heatmap_png, save_png_rgb8, CropTransform,
    RadiographImage, RoiPatch};

fn main() {
    let out_dir = PathBuf::from("target/examples/gradcam_overlay");
    std::fs::create_dir_all(&out_dir).unwrap();

    // a 224x224 ROI with diagonal texture
    let pixels: Vec<f64> = (0..224 * 224)
        .map(|i| (((i % 224) + (i / 224)) % 37) as f64 / 36.0)
        .collect();
    let roi = RoiPatch {
        pixels: RadiographImage::new(224, 224, 1, pixels).unwrap(),
        source_box: BBox { x1: 0.0, y1: 0.0, x2: 224.0, y2: 224.0 },
        crop_transform: CropTransform { scale: 1.0, crop_x: 0.0, crop_y: 0.0, region_x: 0.0, region_y: 0.0 },
    };

    let model = reference_net(ReferenceKind::ClassifierStub);
    let (scores, label) = classify(&model, &roi, 0.5).unwrap();
    println!("prediction: {label:?} (p_pericoronitis {:.4})", scores.p_pericoronitis);

    // the GAP+linear head makes the weights analytic; finite differences
    // reproduce them through the tapped forward pass
    let class_idx = 1; // explain the pericoronitis logit
    let input = {
        // the reference net takes 16x16; classify() resizes internally, so
        // mirror that here for the weight comparison
        let resized = periscan::imaging::resize_bilinear(&roi.pixels, 16, 16).unwrap();
        preprocess(&RoiPatch { pixels: resized, ..roi.clone() })
    };
    let analytic = gradcam_weights(&model, &input, class_idx, WeightMode::Analytic).unwrap();
    let fd = gradcam_weights(&model, &input, class_idx, WeightMode::FiniteDifference).unwrap();
    println!("channel weights (analytic vs finite-difference):");
    for (k, (a, f)) in analytic.0.iter().zip(&fd.0).enumerate() {
        println!("  k={k}: {a:+.6e}  {f:+.6e}");
    }

    let heatmap = explain(&model, &roi, class_idx).unwrap();
    let heatmap_path = out_dir.join("heatmap.png");
    let overlay_path = out_dir.join("overlay.png");
    save_heatmap_png(&heatmap, &heatmap_path).unwrap();
    save_png_rgb8(&render_overlay(&roi.pixels, &heatmap, 0.5).unwrap(), &overlay_path).unwrap();
    println!("heatmap: {}", heatmap_path.display());
    println!("overlay: {}", overlay_path.display());
}
