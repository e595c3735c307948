//! Gradient-weighted class-activation heatmaps over the classifier's last
//! convolutional layer.
//!
//! For GAP + linear heads the channel weights have a closed form
//! (`alpha_k = W[c,k] / (H*W)`); opaque heads fall back to central finite
//! differences through `forward_from_tap`. The two routes agree to within
//! numerical-gradient accuracy, which the tests exploit as an oracle.

use crate::classification::classifier_input;
use crate::error::{Error, Result};
use crate::graph::{GraphModel, HeadKind, TensorValue, LAST_CONV_TAP};
use crate::imaging::RoiPatch;

/// Finite-difference step on tap activations (activations are order-1 after
/// ReLU; central differences give second-order accuracy).
pub const FD_STEP: f64 = 1e-3;

/// Spatially normalized activation map; values in [0, 1].
#[derive(Debug, Clone, PartialEq)]
pub struct Heatmap {
    pub width: usize,
    pub height: usize,
    pub values: Vec<f64>,
}

impl Heatmap {
    pub fn new(width: usize, height: usize, values: Vec<f64>) -> Result<Self> {
        if values.len() != width * height {
            return Err(Error::ShapeMismatch(format!(
                "heatmap buffer length {} != {width}x{height}",
                values.len()
            )));
        }
        if values.iter().any(|&v| !(0.0..=1.0).contains(&v) || v.is_nan()) {
            return Err(Error::InvalidImage("heatmap value outside [0, 1]".into()));
        }
        Ok(Self { width, height, values })
    }
}

/// One importance weight per channel of the tapped activation.
#[derive(Debug, Clone, PartialEq)]
pub struct ChannelWeights(pub Vec<f64>);

/// How to obtain the channel weights.
#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub enum WeightMode {
    Analytic,
    FiniteDifference,
}

/// Channel-importance weights: spatial mean of the gradient of `logit_c`
/// with respect to each `last_conv` channel.
pub fn gradcam_weights(
    model: &GraphModel,
    input: &TensorValue,
    class_idx: usize,
    mode: WeightMode,
) -> Result<ChannelWeights> {
    let tap_shape = model.tap_shape(LAST_CONV_TAP)?.to_vec();
    let [channels, h, w] = tap_shape.as_slice() else {
        return Err(Error::ShapeMismatch(format!(
            "tap `{LAST_CONV_TAP}` must be [C, H, W], got {tap_shape:?}"
        )));
    };
    let (channels, area) = (*channels, (h * w) as f64);
    match mode {
        WeightMode::Analytic => {
            let HeadKind::GapLinear(head) = model.head() else {
                return Err(Error::OpaqueHead);
            };
            if class_idx >= head.classes {
                return Err(Error::InvalidArgument(format!(
                    "class index {class_idx} out of range 0..{}",
                    head.classes
                )));
            }
            let alphas = (0..channels)
                .map(|k| head.weight[class_idx * head.channels + k] / area)
                .collect();
            Ok(ChannelWeights(alphas))
        }
        WeightMode::FiniteDifference => {
            let (_, taps) = model.forward_with_taps(input, &[LAST_CONV_TAP])?;
            let act = &taps[LAST_CONV_TAP];
            let cells = h * w;
            let mut alphas = vec![0.0; channels];
            let mut probe = act.clone();
            for (k, alpha) in alphas.iter_mut().enumerate() {
                let mut sum = 0.0;
                for cell in 0..cells {
                    let idx = k * cells + cell;
                    let orig = probe.data[idx];
                    probe.data[idx] = orig + FD_STEP;
                    let plus = model.forward_from_tap(LAST_CONV_TAP, &probe)?;
                    probe.data[idx] = orig - FD_STEP;
                    let minus = model.forward_from_tap(LAST_CONV_TAP, &probe)?;
                    probe.data[idx] = orig;
                    if class_idx >= plus.numel() {
                        return Err(Error::InvalidArgument(format!(
                            "class index {class_idx} out of range for output {:?}",
                            plus.shape
                        )));
                    }
                    sum += (plus.data[class_idx] - minus.data[class_idx]) / (2.0 * FD_STEP);
                }
                *alpha = sum / area;
            }
            Ok(ChannelWeights(alphas))
        }
    }
}

/// ReLU of the alpha-weighted channel sum: `raw(i,j) = max(0, sum_k a_k A_k(i,j))`.
pub fn cam(activations: &TensorValue, alpha: &ChannelWeights) -> Result<TensorValue> {
    let [c, h, w] = activations.shape.as_slice() else {
        return Err(Error::ShapeMismatch(format!(
            "cam expects [C, H, W] activations, got {:?}",
            activations.shape
        )));
    };
    let (c, h, w) = (*c, *h, *w);
    if alpha.0.len() != c {
        return Err(Error::ShapeMismatch(format!(
            "{} channel weights for {c} channels",
            alpha.0.len()
        )));
    }
    let cells = h * w;
    let mut out = vec![0.0; cells];
    for (slot_idx, slot) in out.iter_mut().enumerate() {
        let mut acc = 0.0;
        for (k, &a) in alpha.0.iter().enumerate() {
            acc += a * activations.data[k * cells + slot_idx];
        }
        *slot = acc.max(0.0);
    }
    TensorValue::new(vec![h, w], out)
}

/// Min-max normalize a raw map into [0, 1]; a constant map becomes all zeros.
pub fn normalize(raw: &TensorValue) -> Result<Heatmap> {
    let [h, w] = raw.shape.as_slice() else {
        return Err(Error::ShapeMismatch(format!(
            "normalize expects an [H, W] map, got {:?}",
            raw.shape
        )));
    };
    let (h, w) = (*h, *w);
    let min = raw.data.iter().copied().fold(f64::INFINITY, f64::min);
    let max = raw.data.iter().copied().fold(f64::NEG_INFINITY, f64::max);
    let values = if max > min {
        raw.data.iter().map(|&v| ((v - min) / (max - min)).clamp(0.0, 1.0)).collect()
    } else {
        vec![0.0; raw.data.len()]
    };
    Heatmap::new(w, h, values)
}

/// Bilinear upsample with half-pixel-center alignment.
pub fn upsample(map: &Heatmap, target_w: usize, target_h: usize) -> Result<Heatmap> {
    if target_w == 0 || target_h == 0 {
        return Err(Error::InvalidArgument("zero-dimension upsample target".into()));
    }
    if target_w == map.width && target_h == map.height {
        return Ok(map.clone());
    }
    let sx = map.width as f64 / target_w as f64;
    let sy = map.height as f64 / target_h as f64;
    let sample = |x: f64, y: f64| -> f64 {
        let x = x.clamp(0.0, map.width as f64 - 1.0);
        let y = y.clamp(0.0, map.height as f64 - 1.0);
        let x0 = x.floor() as usize;
        let y0 = y.floor() as usize;
        let x1 = (x0 + 1).min(map.width - 1);
        let y1 = (y0 + 1).min(map.height - 1);
        let (fx, fy) = (x - x0 as f64, y - y0 as f64);
        let top = map.values[y0 * map.width + x0] * (1.0 - fx) + map.values[y0 * map.width + x1] * fx;
        let bot = map.values[y1 * map.width + x0] * (1.0 - fx) + map.values[y1 * map.width + x1] * fx;
        top * (1.0 - fy) + bot * fy
    };
    let mut values = Vec::with_capacity(target_w * target_h);
    for y in 0..target_h {
        let src_y = (y as f64 + 0.5) * sy - 0.5;
        for x in 0..target_w {
            let src_x = (x as f64 + 0.5) * sx - 0.5;
            values.push(sample(src_x, src_y).clamp(0.0, 1.0));
        }
    }
    Heatmap::new(target_w, target_h, values)
}

/// Side length of the emitted explanation heatmap.
pub const EXPLAIN_SIZE: usize = 224;

/// Full Grad-CAM chain for one ROI: capture `last_conv`, weight (analytic
/// when the head allows, else finite differences), combine, normalize, and
/// upsample to 224x224.
pub fn explain(model: &GraphModel, roi: &RoiPatch, class_idx: usize) -> Result<Heatmap> {
    let input = classifier_input(model, roi)?;
    explain_tensor(model, &input, class_idx)
}

/// Same as [`explain`] but starting from an already-built input tensor.
pub fn explain_tensor(model: &GraphModel, input: &TensorValue, class_idx: usize) -> Result<Heatmap> {
    let mode = match model.head() {
        HeadKind::GapLinear(_) => WeightMode::Analytic,
        HeadKind::Opaque => WeightMode::FiniteDifference,
    };
    let alpha = gradcam_weights(model, input, class_idx, mode)?;
    let (_, taps) = model.forward_with_taps(input, &[LAST_CONV_TAP])?;
    let raw = cam(&taps[LAST_CONV_TAP], &alpha)?;
    let norm = normalize(&raw)?;
    upsample(&norm, EXPLAIN_SIZE, EXPLAIN_SIZE)
}
