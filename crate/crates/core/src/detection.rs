//! Stage 1 post-processing: decode the raw detector grid into labeled
//! third-molar detections, filter by confidence, suppress duplicates, and
//! keep at most one detection per jaw quadrant.

use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};
use crate::graph::TensorValue;
use crate::imaging::{invert_box, LetterboxTransform};

/// Number of composite classes: 4 quadrants x 4 Winter angulations.
pub const NUM_CLASSES: usize = 16;

/// Channels per raw detector column: cx, cy, w, h + one score per class.
pub const RAW_CHANNELS: usize = 4 + NUM_CLASSES;

/// Default confidence threshold applied when decoding detector output.
pub const DEFAULT_CONF_THRESHOLD: f64 = 0.25;

/// Default IoU threshold for non-maximum suppression.
pub const DEFAULT_NMS_IOU: f64 = 0.45;

/// Axis-aligned box in corner convention; `x2 > x1`, `y2 > y1`.
#[derive(Debug, Clone, Copy, PartialEq)]
pub struct BBox {
    pub x1: f64,
    pub y1: f64,
    pub x2: f64,
    pub y2: f64,
}

impl BBox {
    pub fn new(x1: f64, y1: f64, x2: f64, y2: f64) -> Result<Self> {
        if !(x2 > x1 && y2 > y1) {
            return Err(Error::InvalidArgument(format!(
                "degenerate box ({x1},{y1},{x2},{y2})"
            )));
        }
        Ok(Self { x1, y1, x2, y2 })
    }

    pub fn area(&self) -> f64 {
        (self.x2 - self.x1).max(0.0) * (self.y2 - self.y1).max(0.0)
    }
}

impl Serialize for BBox {
    fn serialize<S: serde::Serializer>(&self, s: S) -> std::result::Result<S::Ok, S::Error> {
        [self.x1, self.y1, self.x2, self.y2].serialize(s)
    }
}

impl<'de> Deserialize<'de> for BBox {
    fn deserialize<D: serde::Deserializer<'de>>(d: D) -> std::result::Result<Self, D::Error> {
        let [x1, y1, x2, y2] = <[f64; 4]>::deserialize(d)?;
        BBox::new(x1, y1, x2, y2).map_err(serde::de::Error::custom)
    }
}

/// Jaw quadrant of a third molar.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash, PartialOrd, Ord, Serialize, Deserialize)]
pub enum Quadrant {
    #[serde(rename = "UR")]
    UpperRight,
    #[serde(rename = "UL")]
    UpperLeft,
    #[serde(rename = "LL")]
    LowerLeft,
    #[serde(rename = "LR")]
    LowerRight,
}

impl Quadrant {
    pub const ALL: [Quadrant; 4] = [
        Quadrant::UpperRight,
        Quadrant::UpperLeft,
        Quadrant::LowerLeft,
        Quadrant::LowerRight,
    ];
}

/// Winter's angulation classification of a third molar.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash, PartialOrd, Ord, Serialize, Deserialize)]
#[serde(rename_all = "lowercase")]
pub enum Angulation {
    Vertical,
    Mesioangular,
    Horizontal,
    Distoangular,
}

impl Angulation {
    pub const ALL: [Angulation; 4] = [
        Angulation::Vertical,
        Angulation::Mesioangular,
        Angulation::Horizontal,
        Angulation::Distoangular,
    ];
}

/// A labeled third-molar detection in original-image coordinates.
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct Detection {
    #[serde(rename = "box")]
    pub bbox: BBox,
    pub quadrant: Quadrant,
    pub angulation: Angulation,
    pub confidence: f64,
}

impl Detection {
    pub fn composite_index(&self) -> usize {
        let q = Quadrant::ALL.iter().position(|&q| q == self.quadrant).unwrap();
        let a = Angulation::ALL.iter().position(|&a| a == self.angulation).unwrap();
        4 * q + a
    }
}

/// Decode a composite class index `4*q + a` into its quadrant/angulation pair.
pub fn composite_class(idx: usize) -> Result<(Quadrant, Angulation)> {
    if idx >= NUM_CLASSES {
        return Err(Error::InvalidArgument(format!(
            "composite class index {idx} out of range 0..{NUM_CLASSES}"
        )));
    }
    Ok((Quadrant::ALL[idx / 4], Angulation::ALL[idx % 4]))
}

/// Intersection-over-union of two boxes; 0 when disjoint.
pub fn iou(a: &BBox, b: &BBox) -> f64 {
    let ix = (a.x2.min(b.x2) - a.x1.max(b.x1)).max(0.0);
    let iy = (a.y2.min(b.y2) - a.y1.max(b.y1)).max(0.0);
    let inter = ix * iy;
    let union = a.area() + b.area() - inter;
    if union <= 0.0 {
        0.0
    } else {
        inter / union
    }
}

/// Decode a raw `(4+16) x N` detector grid into detections in original-image
/// coordinates.
///
/// Per column: class score = max over the 16 class channels; columns below
/// `conf_threshold` or with non-positive width/height are dropped; centers
/// are converted to corners and mapped back through the letterbox transform.
pub fn decode(
    raw: &TensorValue,
    conf_threshold: f64,
    t: &LetterboxTransform,
) -> Result<Vec<Detection>> {
    if !(0.0..=1.0).contains(&conf_threshold) {
        return Err(Error::InvalidArgument(format!(
            "confidence threshold {conf_threshold} outside [0, 1]"
        )));
    }
    // Accept (4+16) x N with optional leading singleton dims.
    let dims: Vec<usize> = raw
        .shape
        .iter()
        .copied()
        .skip_while(|&d| d == 1)
        .collect();
    let n = match dims.as_slice() {
        [RAW_CHANNELS] => 1,
        [RAW_CHANNELS, n] => *n,
        _ => {
            return Err(Error::ShapeMismatch(format!(
                "detector output shape {:?}, expected ({RAW_CHANNELS}, N)",
                raw.shape
            )))
        }
    };
    let at = |ch: usize, col: usize| raw.data[ch * n + col];
    let mut dets = Vec::new();
    for col in 0..n {
        let (mut best_cls, mut best_score) = (0usize, f64::NEG_INFINITY);
        for cls in 0..NUM_CLASSES {
            let s = at(4 + cls, col);
            if s > best_score {
                best_score = s;
                best_cls = cls;
            }
        }
        if best_score < conf_threshold {
            continue;
        }
        let (cx, cy, w, h) = (at(0, col), at(1, col), at(2, col), at(3, col));
        if w <= 0.0 || h <= 0.0 {
            continue;
        }
        let lb_box = BBox {
            x1: cx - w / 2.0,
            y1: cy - h / 2.0,
            x2: cx + w / 2.0,
            y2: cy + h / 2.0,
        };
        let orig = invert_box(&lb_box, t);
        if orig.x2 <= orig.x1 || orig.y2 <= orig.y1 {
            continue; // clamped away: box entirely outside the frame
        }
        let (quadrant, angulation) = composite_class(best_cls)?;
        dets.push(Detection {
            bbox: orig,
            quadrant,
            angulation,
            confidence: best_score.clamp(0.0, 1.0),
        });
    }
    Ok(dets)
}

/// Greedy class-aware non-maximum suppression.
///
/// Detections are visited by descending confidence (ties: smaller box area
/// first, then input order); one is kept iff its IoU with every already-kept
/// detection of the same composite class stays below `iou_threshold`.
pub fn nms(dets: &[Detection], iou_threshold: f64) -> Vec<Detection> {
    let mut order: Vec<usize> = (0..dets.len()).collect();
    order.sort_by(|&a, &b| {
        dets[b]
            .confidence
            .partial_cmp(&dets[a].confidence)
            .unwrap_or(std::cmp::Ordering::Equal)
            .then(
                dets[a]
                    .bbox
                    .area()
                    .partial_cmp(&dets[b].bbox.area())
                    .unwrap_or(std::cmp::Ordering::Equal),
            )
            .then(a.cmp(&b))
    });
    let mut kept: Vec<Detection> = Vec::new();
    for &i in &order {
        let d = &dets[i];
        let suppressed = kept.iter().any(|k| {
            k.quadrant == d.quadrant
                && k.angulation == d.angulation
                && iou(&k.bbox, &d.bbox) >= iou_threshold
        });
        if !suppressed {
            kept.push(*d);
        }
    }
    kept
}

/// Keep at most one detection per quadrant: the maximum-confidence one,
/// ties broken by input order.
pub fn dedupe_per_quadrant(dets: &[Detection]) -> Vec<Detection> {
    let mut best: [Option<usize>; 4] = [None; 4];
    for (i, d) in dets.iter().enumerate() {
        let q = Quadrant::ALL.iter().position(|&q| q == d.quadrant).unwrap();
        match best[q] {
            Some(j) if dets[j].confidence >= d.confidence => {}
            _ => best[q] = Some(i),
        }
    }
    let mut keep: Vec<usize> = best.into_iter().flatten().collect();
    keep.sort_unstable();
    keep.into_iter().map(|i| dets[i]).collect()
}
