//! Detector post-processing on a hand-built raw grid: decode columns into
//! boxes, suppress overlaps, and keep one detection per quadrant.
//!
//!     cargo run --example detection_postprocess

use periscan::detection::{decode, dedupe_per_quadrant, nms, RAW_CHANNELS};
use periscan::graph::TensorValue;
use periscan::imaging::letterbox_transform;

/// Fill one grid column: center box plus a one-hot class score.
fn column(grid: &mut [f64], n: usize, col: usize, cx: f64, cy: f64, w: f64, h: f64, class: usize, score: f64) {
    grid[col] = cx;
    grid[n + col] = cy;
    grid[2 * n + col] = w;
    grid[3 * n + col] = h;
    grid[(4 + class) * n + col] = score;
}

fn main() {
    // a 1664x832 radiograph letterboxed to 832: scale 0.5, pad_y 208
    let t = letterbox_transform(1664, 832, 832).unwrap();
    println!("letterbox: scale {}, pad ({}, {})", t.scale, t.pad_x, t.pad_y);

    let n = 4;
    let mut grid = vec![0.0; RAW_CHANNELS * n];
    // two overlapping candidates for the same upper-right vertical molar...
    column(&mut grid, n, 0, 100.0, 300.0, 50.0, 40.0, 0, 0.90);
    column(&mut grid, n, 1, 104.0, 302.0, 50.0, 40.0, 0, 0.60);
    // ...a second site in the same quadrant with a different angulation...
    column(&mut grid, n, 2, 180.0, 300.0, 40.0, 40.0, 1, 0.70);
    // ...and a low-confidence column that the threshold drops
    column(&mut grid, n, 3, 400.0, 500.0, 30.0, 30.0, 8, 0.10);
    let raw = TensorValue::new(vec![RAW_CHANNELS, n], grid).unwrap();

    let decoded = decode(&raw, 0.25, &t).unwrap();
    println!("decoded ({}):", decoded.len());
    for d in &decoded {
        println!("  {:?} {:?} conf {:.2} box {:?}", d.quadrant, d.angulation, d.confidence, d.bbox);
    }

    let suppressed = nms(&decoded, 0.45);
    println!("after NMS ({}):", suppressed.len());
    for d in &suppressed {
        println!("  {:?} {:?} conf {:.2}", d.quadrant, d.angulation, d.confidence);
    }

    let unique = dedupe_per_quadrant(&suppressed);
    println!("after per-quadrant dedupe ({}):", unique.len());
    for d in &unique {
        println!("  {:?} {:?} conf {:.2}", d.quadrant, d.angulation, d.confidence);
    }
}
