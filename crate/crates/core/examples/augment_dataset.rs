//! Geometric augmentation with box remapping: horizontal flip, rotations,
//! and a four-image mosaic with seeded tiling.
//!
//!     cargo run --example augment_dataset

use std::path::PathBuf;

use periscan::detection::BBox;
use periscan::imaging::{hflip, mosaic, rotate, save_png_rgb8, RadiographImage};

fn checkerboard(w: usize, h: usize, phase: usize) -> RadiographImage {
    let px: Vec<f64> = (0..w * h)
        .map(|i| {
            let (x, y) = (i % w, i / w);
            if (x / 8 + y / 8 + phase) % 2 == 0 { 0.2 } else { 0.8 }
        })
        .collect();
    RadiographImage::new(w, h, 1, px).unwrap()
}

fn main() {
    let out_dir = PathBuf::from("target/examples/augment_dataset");
    std::fs::create_dir_all(&out_dir).unwrap();

    let img = checkerboard(96, 64, 0);
    let boxes = [BBox { x1: 10.0, y1: 8.0, x2: 34.0, y2: 28.0 }];

    let (flipped, fboxes) = hflip(&img, &boxes);
    println!("hflip: {:?} -> {:?}", boxes[0], fboxes[0]);
    save_png_rgb8(&flipped, &out_dir.join("hflip.png")).unwrap();

    for deg in [90, 180, 270] {
        let (rot, rboxes) = rotate(&img, &boxes, deg).unwrap();
        println!("rotate {deg}: {:?} -> {:?} ({}x{})", boxes[0], rboxes[0], rot.width(), rot.height());
        save_png_rgb8(&rot, &out_dir.join(format!("rotate{deg}.png"))).unwrap();
    }

    // four tiles, each carrying one box; the seed fixes the split point
    let tiles = [
        checkerboard(96, 64, 0),
        checkerboard(96, 64, 1),
        checkerboard(96, 64, 0),
        checkerboard(96, 64, 1),
    ];
    let tile_boxes = [
        vec![BBox { x1: 5.0, y1: 5.0, x2: 30.0, y2: 25.0 }],
        vec![BBox { x1: 60.0, y1: 10.0, x2: 90.0, y2: 40.0 }],
        vec![BBox { x1: 20.0, y1: 30.0, x2: 50.0, y2: 60.0 }],
        vec![BBox { x1: 70.0, y1: 40.0, x2: 95.0, y2: 62.0 }],
    ];
    let (canvas, kept) = mosaic(&tiles, &tile_boxes, 7).unwrap();
    save_png_rgb8(&canvas, &out_dir.join("mosaic.png")).unwrap();
    println!("mosaic: {}x{} canvas, {} boxes kept (under-25%-area boxes dropped)",
        canvas.width(), canvas.height(), kept.len());
    for m in &kept {
        println!("  tile {} box {} -> {:?}", m.tile, m.source_index, m.bbox);
    }
    println!("images written to {}", out_dir.display());
}
