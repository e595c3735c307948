//! Minimal neural-network execution backend.
//!
//! The pipeline only needs a narrow contract: run a forward pass, capture
//! named intermediate activations ("taps"), and re-enter the graph at a tap
//! with substituted activations. Models are small operator graphs stored as
//! a JSON document (see `Artifact` below) with an optional metadata sidecar.
//!
//! Two fully deterministic reference networks are built in so every test and
//! example runs without external model files.

use std::collections::BTreeMap;
use std::path::Path;

use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};

/// Name of the tap every classifier model must expose.
pub const LAST_CONV_TAP: &str = "last_conv";

/// Dense row-major tensor.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct TensorValue {
    pub shape: Vec<usize>,
    pub data: Vec<f64>,
}

impl TensorValue {
    pub fn new(shape: Vec<usize>, data: Vec<f64>) -> Result<Self> {
        let numel: usize = shape.iter().product();
        if data.len() != numel {
            return Err(Error::ShapeMismatch(format!(
                "data length {} does not match shape {:?}",
                data.len(),
                shape
            )));
        }
        Ok(Self { shape, data })
    }

    pub fn zeros(shape: Vec<usize>) -> Self {
        let numel = shape.iter().product();
        Self { shape, data: vec![0.0; numel] }
    }

    pub fn numel(&self) -> usize {
        self.data.len()
    }

    /// Interpret as [C, H, W]; errors otherwise.
    fn chw(&self) -> Result<(usize, usize, usize)> {
        match self.shape.as_slice() {
            [c, h, w] => Ok((*c, *h, *w)),
            other => Err(Error::ShapeMismatch(format!(
                "expected a [C, H, W] tensor, got {other:?}"
            ))),
        }
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "lowercase")]
pub enum ModelKind {
    Detector,
    Classifier,
}

/// One operator in the (purely sequential) graph.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(tag = "op", rename_all = "snake_case")]
pub enum Layer {
    Conv2d {
        out_channels: usize,
        in_channels: usize,
        kernel: usize,
        padding: usize,
        /// [out, in, k, k] row-major.
        weight: Vec<f64>,
        #[serde(default, skip_serializing_if = "Option::is_none")]
        bias: Option<Vec<f64>>,
    },
    Relu,
    MaxPool2x2,
    GlobalAvgPool,
    Linear {
        out_dim: usize,
        in_dim: usize,
        /// [out, in] row-major.
        weight: Vec<f64>,
        bias: Vec<f64>,
    },
    Reshape {
        shape: Vec<usize>,
    },
}

/// Weights of a global-average-pool + linear classification head, exposed so
/// class-activation weights can be computed analytically.
#[derive(Debug, Clone, PartialEq)]
pub struct GapLinearHead {
    /// [classes, tap_channels] row-major.
    pub weight: Vec<f64>,
    pub bias: Vec<f64>,
    pub classes: usize,
    pub channels: usize,
}

#[derive(Debug, Clone, PartialEq)]
pub enum HeadKind {
    GapLinear(GapLinearHead),
    Opaque,
}

impl HeadKind {
    pub fn name(&self) -> &'static str {
        match self {
            HeadKind::GapLinear(_) => "gap_linear",
            HeadKind::Opaque => "opaque",
        }
    }
}

/// An immutable, validated model: shapes inferred, taps resolved, head
/// classified. Shareable across threads; forwards take `&self`.
#[derive(Debug, Clone, PartialEq)]
pub struct GraphModel {
    kind: ModelKind,
    /// [1, 1, H, W].
    input_spec: Vec<usize>,
    output_spec: Vec<usize>,
    layers: Vec<Layer>,
    /// tap name -> (index of the layer whose output is captured, shape).
    taps: BTreeMap<String, (usize, Vec<usize>)>,
    head: HeadKind,
}

impl GraphModel {
    pub fn kind(&self) -> ModelKind {
        self.kind
    }

    pub fn input_spec(&self) -> &[usize] {
        &self.input_spec
    }

    /// Spatial input side length (inputs are square 1x1xSxS).
    pub fn input_size(&self) -> usize {
        self.input_spec[3]
    }

    pub fn output_spec(&self) -> &[usize] {
        &self.output_spec
    }

    pub fn head(&self) -> &HeadKind {
        &self.head
    }

    pub fn tap_shape(&self, name: &str) -> Result<&[usize]> {
        self.taps
            .get(name)
            .map(|(_, s)| s.as_slice())
            .ok_or_else(|| Error::UnknownTap(name.into()))
    }

    pub fn tap_names(&self) -> impl Iterator<Item = &str> {
        self.taps.keys().map(|s| s.as_str())
    }
}

// ---------------------------------------------------------------------------
// Shape inference and model construction
// ---------------------------------------------------------------------------

fn infer_shape(layer: &Layer, input: &[usize]) -> Result<Vec<usize>> {
    match layer {
        Layer::Conv2d { out_channels, in_channels, kernel, padding, weight, bias } => {
            let (c, h, w) = match input {
                [c, h, w] => (*c, *h, *w),
                other => {
                    return Err(Error::ShapeMismatch(format!(
                        "conv2d expects [C, H, W], got {other:?}"
                    )))
                }
            };
            if c != *in_channels {
                return Err(Error::ShapeMismatch(format!(
                    "conv2d declared {in_channels} input channels, got {c}"
                )));
            }
            if weight.len() != out_channels * in_channels * kernel * kernel {
                return Err(Error::ShapeMismatch("conv2d weight length".into()));
            }
            if let Some(b) = bias {
                if b.len() != *out_channels {
                    return Err(Error::ShapeMismatch("conv2d bias length".into()));
                }
            }
            let oh = h + 2 * padding + 1 - kernel;
            let ow = w + 2 * padding + 1 - kernel;
            if h + 2 * padding < *kernel || w + 2 * padding < *kernel {
                return Err(Error::ShapeMismatch("conv2d input smaller than kernel".into()));
            }
            Ok(vec![*out_channels, oh, ow])
        }
        Layer::Relu => Ok(input.to_vec()),
        Layer::MaxPool2x2 => match input {
            [c, h, w] if *h >= 2 && *w >= 2 => Ok(vec![*c, h / 2, w / 2]),
            other => Err(Error::ShapeMismatch(format!(
                "max_pool_2x2 expects [C, H>=2, W>=2], got {other:?}"
            ))),
        },
        Layer::GlobalAvgPool => match input {
            [c, _, _] => Ok(vec![*c]),
            other => Err(Error::ShapeMismatch(format!(
                "global_avg_pool expects [C, H, W], got {other:?}"
            ))),
        },
        Layer::Linear { out_dim, in_dim, weight, bias } => {
            let n: usize = input.iter().product();
            if n != *in_dim {
                return Err(Error::ShapeMismatch(format!(
                    "linear declared {in_dim} inputs, got {n}"
                )));
            }
            if weight.len() != out_dim * in_dim || bias.len() != *out_dim {
                return Err(Error::ShapeMismatch("linear weight/bias length".into()));
            }
            Ok(vec![*out_dim])
        }
        Layer::Reshape { shape } => {
            let n: usize = input.iter().product();
            let m: usize = shape.iter().product();
            if n != m {
                return Err(Error::ShapeMismatch(format!(
                    "reshape {input:?} -> {shape:?} changes element count"
                )));
            }
            Ok(shape.clone())
        }
    }
}

/// Classify the head: a tap followed by exactly [GlobalAvgPool, Linear] is
/// the analytic CAM fast path.
fn classify_head(layers: &[Layer], tap_index: Option<usize>, tap_shape: Option<&[usize]>) -> HeadKind {
    let (Some(idx), Some(shape)) = (tap_index, tap_shape) else {
        return HeadKind::Opaque;
    };
    let suffix = &layers[idx + 1..];
    match suffix {
        [Layer::GlobalAvgPool, Layer::Linear { out_dim, in_dim, weight, bias }]
            if shape.first() == Some(in_dim) =>
        {
            HeadKind::GapLinear(GapLinearHead {
                weight: weight.clone(),
                bias: bias.clone(),
                classes: *out_dim,
                channels: *in_dim,
            })
        }
        _ => HeadKind::Opaque,
    }
}

impl GraphModel {
    /// Build and validate a model from its parts. `taps` maps a name to the
    /// index of the layer whose output is captured.
    pub fn build(
        kind: ModelKind,
        input_spec: Vec<usize>,
        layers: Vec<Layer>,
        taps: BTreeMap<String, usize>,
    ) -> Result<Self> {
        let spatial = match input_spec.as_slice() {
            [1, 1, h, w] if *h > 0 && *w > 0 => vec![1, *h, *w],
            other => {
                return Err(Error::ShapeMismatch(format!(
                    "input spec must be [1, 1, H, W], got {other:?}"
                )))
            }
        };
        // Infer every intermediate shape.
        let mut shapes = Vec::with_capacity(layers.len());
        let mut cur = spatial;
        for layer in &layers {
            cur = infer_shape(layer, &cur)?;
            shapes.push(cur.clone());
        }
        let output_spec = shapes
            .last()
            .cloned()
            .ok_or_else(|| Error::Model("model has no layers".into()))?;

        let mut resolved = BTreeMap::new();
        for (name, idx) in taps {
            let shape = shapes
                .get(idx)
                .cloned()
                .ok_or_else(|| Error::Model(format!("tap `{name}` points past the last layer")))?;
            resolved.insert(name, (idx, shape));
        }

        // Kind-specific structural contract.
        match kind {
            ModelKind::Classifier => {
                if output_spec != [2] {
                    return Err(Error::ShapeMismatch(format!(
                        "classifier must emit 2 logits, got output shape {output_spec:?}"
                    )));
                }
                if !resolved.contains_key(LAST_CONV_TAP) {
                    return Err(Error::Model(format!(
                        "classifier model lacks the required `{LAST_CONV_TAP}` tap"
                    )));
                }
            }
            ModelKind::Detector => {
                let ok = matches!(
                    output_spec.as_slice(),
                    [c, _] if *c == crate::detection::RAW_CHANNELS
                );
                if !ok {
                    return Err(Error::ShapeMismatch(format!(
                        "detector must emit a ({}, N) grid, got output shape {output_spec:?}",
                        crate::detection::RAW_CHANNELS
                    )));
                }
            }
        }

        let (tap_idx, tap_shape) = match resolved.get(LAST_CONV_TAP) {
            Some((i, s)) => (Some(*i), Some(s.as_slice())),
            None => (None, None),
        };
        let head = classify_head(&layers, tap_idx, tap_shape);
        Ok(Self {
            kind,
            input_spec,
            output_spec,
            layers,
            taps: resolved,
            head,
        })
    }
}

// ---------------------------------------------------------------------------
// Forward execution
// ---------------------------------------------------------------------------

fn apply(layer: &Layer, input: &TensorValue) -> Result<TensorValue> {
    match layer {
        Layer::Conv2d { out_channels, in_channels, kernel, padding, weight, bias } => {
            let (c, h, w) = input.chw()?;
            debug_assert_eq!(c, *in_channels);
            let k = *kernel;
            let p = *padding as isize;
            let oh = h + 2 * padding + 1 - k;
            let ow = w + 2 * padding + 1 - k;
            let mut out = vec![0.0; out_channels * oh * ow];
            for co in 0..*out_channels {
                let b = bias.as_ref().map_or(0.0, |b| b[co]);
                for oy in 0..oh {
                    for ox in 0..ow {
                        let mut acc = b;
                        for ci in 0..c {
                            for ky in 0..k {
                                let iy = oy as isize + ky as isize - p;
                                if iy < 0 || iy >= h as isize {
                                    continue;
                                }
                                for kx in 0..k {
                                    let ix = ox as isize + kx as isize - p;
                                    if ix < 0 || ix >= w as isize {
                                        continue;
                                    }
                                    let wv = weight[((co * c + ci) * k + ky) * k + kx];
                                    acc += wv * input.data[(ci * h + iy as usize) * w + ix as usize];
                                }
                            }
                        }
                        out[(co * oh + oy) * ow + ox] = acc;
                    }
                }
            }
            TensorValue::new(vec![*out_channels, oh, ow], out)
        }
        Layer::Relu => Ok(TensorValue {
            shape: input.shape.clone(),
            data: input.data.iter().map(|&v| v.max(0.0)).collect(),
        }),
        Layer::MaxPool2x2 => {
            let (c, h, w) = input.chw()?;
            let (oh, ow) = (h / 2, w / 2);
            let mut out = vec![0.0; c * oh * ow];
            for ci in 0..c {
                for oy in 0..oh {
                    for ox in 0..ow {
                        let mut m = f64::NEG_INFINITY;
                        for dy in 0..2 {
                            for dx in 0..2 {
                                m = m.max(input.data[(ci * h + 2 * oy + dy) * w + 2 * ox + dx]);
                            }
                        }
                        out[(ci * oh + oy) * ow + ox] = m;
                    }
                }
            }
            TensorValue::new(vec![c, oh, ow], out)
        }
        Layer::GlobalAvgPool => {
            let (c, h, w) = input.chw()?;
            let area = (h * w) as f64;
            let out = (0..c)
                .map(|ci| input.data[ci * h * w..(ci + 1) * h * w].iter().sum::<f64>() / area)
                .collect();
            TensorValue::new(vec![c], out)
        }
        Layer::Linear { out_dim, in_dim, weight, bias } => {
            let mut out = bias.clone();
            for (o, slot) in out.iter_mut().enumerate() {
                for i in 0..*in_dim {
                    *slot += weight[o * in_dim + i] * input.data[i];
                }
            }
            TensorValue::new(vec![*out_dim], out)
        }
        Layer::Reshape { shape } => TensorValue::new(shape.clone(), input.data.clone()),
    }
}

impl GraphModel {
    fn check_input(&self, input: &TensorValue) -> Result<TensorValue> {
        let ok = input.shape == self.input_spec
            || input.shape == self.input_spec[1..]
            || (input.shape.len() == 3 && input.shape == self.input_spec[1..]);
        if !ok {
            return Err(Error::ShapeMismatch(format!(
                "input shape {:?} does not match model input {:?}",
                input.shape, self.input_spec
            )));
        }
        TensorValue::new(self.input_spec[1..].to_vec(), input.data.clone())
    }

    /// Plain forward pass; deterministic for identical inputs.
    pub fn forward(&self, input: &TensorValue) -> Result<TensorValue> {
        let mut cur = self.check_input(input)?;
        for layer in &self.layers {
            cur = apply(layer, &cur)?;
        }
        Ok(cur)
    }

    /// Forward pass capturing the named tap activations.
    pub fn forward_with_taps(
        &self,
        input: &TensorValue,
        tap_names: &[&str],
    ) -> Result<(TensorValue, BTreeMap<String, TensorValue>)> {
        let mut wanted: BTreeMap<usize, Vec<&str>> = BTreeMap::new();
        for &name in tap_names {
            let (idx, _) = self
                .taps
                .get(name)
                .ok_or_else(|| Error::UnknownTap(name.into()))?;
            wanted.entry(*idx).or_default().push(name);
        }
        let mut captured = BTreeMap::new();
        let mut cur = self.check_input(input)?;
        for (i, layer) in self.layers.iter().enumerate() {
            cur = apply(layer, &cur)?;
            if let Some(names) = wanted.get(&i) {
                for &name in names {
                    captured.insert(name.to_string(), cur.clone());
                }
            }
        }
        Ok((cur, captured))
    }

    /// Resume the forward pass after `tap_name`, substituting the given
    /// activations. Equals a full forward whose tap activations match.
    pub fn forward_from_tap(&self, tap_name: &str, activations: &TensorValue) -> Result<TensorValue> {
        let (idx, shape) = self
            .taps
            .get(tap_name)
            .ok_or_else(|| Error::UnknownTap(tap_name.into()))?;
        if &activations.shape != shape {
            return Err(Error::ShapeMismatch(format!(
                "tap `{tap_name}` expects shape {shape:?}, got {:?}",
                activations.shape
            )));
        }
        let mut cur = activations.clone();
        for layer in &self.layers[idx + 1..] {
            cur = apply(layer, &cur)?;
        }
        Ok(cur)
    }

    /// Gradient of one output logit with respect to the input, by reverse
    /// accumulation through the stored forward activations.
    pub fn input_gradient(&self, input: &TensorValue, class_idx: usize) -> Result<TensorValue> {
        let x0 = self.check_input(input)?;
        let mut acts = vec![x0.clone()];
        for layer in &self.layers {
            let next = apply(layer, acts.last().unwrap())?;
            acts.push(next);
        }
        let out = acts.last().unwrap();
        if class_idx >= out.numel() {
            return Err(Error::InvalidArgument(format!(
                "class index {class_idx} out of range for output {:?}",
                out.shape
            )));
        }
        let mut grad = TensorValue::zeros(out.shape.clone());
        grad.data[class_idx] = 1.0;
        for (i, layer) in self.layers.iter().enumerate().rev() {
            grad = backward(layer, &acts[i], &grad)?;
        }
        Ok(grad)
    }
}

fn backward(layer: &Layer, input: &TensorValue, gout: &TensorValue) -> Result<TensorValue> {
    match layer {
        Layer::Conv2d { out_channels, kernel, padding, weight, .. } => {
            let (c, h, w) = input.chw()?;
            let k = *kernel;
            let p = *padding as isize;
            let (oh, ow) = (h + 2 * padding + 1 - k, w + 2 * padding + 1 - k);
            let mut gin = TensorValue::zeros(input.shape.clone());
            for co in 0..*out_channels {
                for oy in 0..oh {
                    for ox in 0..ow {
                        let g = gout.data[(co * oh + oy) * ow + ox];
                        if g == 0.0 {
                            continue;
                        }
                        for ci in 0..c {
                            for ky in 0..k {
                                let iy = oy as isize + ky as isize - p;
                                if iy < 0 || iy >= h as isize {
                                    continue;
                                }
                                for kx in 0..k {
                                    let ix = ox as isize + kx as isize - p;
                                    if ix < 0 || ix >= w as isize {
                                        continue;
                                    }
                                    let wv = weight[((co * c + ci) * k + ky) * k + kx];
                                    gin.data[(ci * h + iy as usize) * w + ix as usize] += g * wv;
                                }
                            }
                        }
                    }
                }
            }
            Ok(gin)
        }
        Layer::Relu => Ok(TensorValue {
            shape: input.shape.clone(),
            data: input
                .data
                .iter()
                .zip(&gout.data)
                .map(|(&x, &g)| if x > 0.0 { g } else { 0.0 })
                .collect(),
        }),
        Layer::MaxPool2x2 => {
            let (c, h, w) = input.chw()?;
            let (oh, ow) = (h / 2, w / 2);
            let mut gin = TensorValue::zeros(input.shape.clone());
            for ci in 0..c {
                for oy in 0..oh {
                    for ox in 0..ow {
                        // route to the first maximum, scanned row-major
                        let (mut best, mut by, mut bx) = (f64::NEG_INFINITY, 0, 0);
                        for dy in 0..2 {
                            for dx in 0..2 {
                                let v = input.data[(ci * h + 2 * oy + dy) * w + 2 * ox + dx];
                                if v > best {
                                    best = v;
                                    by = dy;
                                    bx = dx;
                                }
                            }
                        }
                        gin.data[(ci * h + 2 * oy + by) * w + 2 * ox + bx] +=
                            gout.data[(ci * oh + oy) * ow + ox];
                    }
                }
            }
            Ok(gin)
        }
        Layer::GlobalAvgPool => {
            let (c, h, w) = input.chw()?;
            let area = (h * w) as f64;
            let mut gin = TensorValue::zeros(input.shape.clone());
            for ci in 0..c {
                let g = gout.data[ci] / area;
                for v in &mut gin.data[ci * h * w..(ci + 1) * h * w] {
                    *v = g;
                }
            }
            Ok(gin)
        }
        Layer::Linear { out_dim, in_dim, weight, .. } => {
            let mut gin = TensorValue::zeros(input.shape.clone());
            for o in 0..*out_dim {
                let g = gout.data[o];
                if g == 0.0 {
                    continue;
                }
                for i in 0..*in_dim {
                    gin.data[i] += g * weight[o * in_dim + i];
                }
            }
            Ok(gin)
        }
        Layer::Reshape { .. } => TensorValue::new(input.shape.clone(), gout.data.clone()),
    }
}

// ---------------------------------------------------------------------------
// Model artifact (JSON) and metadata sidecar
// ---------------------------------------------------------------------------

/// On-disk model document.
#[derive(Debug, Serialize, Deserialize)]
pub struct Artifact {
    pub kind: ModelKind,
    pub input: Vec<usize>,
    pub layers: Vec<Layer>,
    #[serde(default)]
    pub taps: BTreeMap<String, usize>,
}

/// Optional `<model>.meta.json` sidecar.
#[derive(Debug, Serialize, Deserialize)]
pub struct ModelMeta {
    pub kind: ModelKind,
    pub head: String,
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub fc_weights_source: Option<String>,
}

/// Load and validate a model artifact against the requested kind.
pub fn load_model(path: &Path, kind: ModelKind) -> Result<GraphModel> {
    let text = std::fs::read_to_string(path).map_err(|source| Error::Io {
        path: path.to_path_buf(),
        source,
    })?;
    let artifact: Artifact = serde_json::from_str(&text).map_err(|e| Error::MalformedJson {
        path: path.to_path_buf(),
        message: e.to_string(),
    })?;
    let model = GraphModel::build(kind, artifact.input, artifact.layers, artifact.taps)?;
    if artifact.kind != kind {
        return Err(Error::Model(format!(
            "artifact declares kind {:?} but was loaded as {:?}",
            artifact.kind, kind
        )));
    }
    // Cross-check the sidecar when present.
    let meta_path = sidecar_path(path);
    if meta_path.exists() {
        let meta_text = std::fs::read_to_string(&meta_path).map_err(|source| Error::Io {
            path: meta_path.clone(),
            source,
        })?;
        let meta: ModelMeta = serde_json::from_str(&meta_text).map_err(|e| Error::MalformedJson {
            path: meta_path,
            message: e.to_string(),
        })?;
        if meta.kind != kind {
            return Err(Error::Model(format!(
                "sidecar declares kind {:?} but model was loaded as {:?}",
                meta.kind, kind
            )));
        }
        if meta.head != model.head.name() {
            return Err(Error::Model(format!(
                "sidecar declares head `{}` but the graph suffix is `{}`",
                meta.head,
                model.head.name()
            )));
        }
    }
    Ok(model)
}

/// Serialize a model plus its metadata sidecar.
pub fn save_model(model: &GraphModel, path: &Path) -> Result<()> {
    let artifact = Artifact {
        kind: model.kind,
        input: model.input_spec.clone(),
        layers: model.layers.clone(),
        taps: model.taps.iter().map(|(k, (i, _))| (k.clone(), *i)).collect(),
    };
    let write = |p: &Path, s: String| {
        std::fs::write(p, s).map_err(|source| Error::Io { path: p.to_path_buf(), source })
    };
    write(path, serde_json::to_string(&artifact).expect("artifact serializes"))?;
    let meta = ModelMeta {
        kind: model.kind,
        head: model.head.name().to_string(),
        fc_weights_source: None,
    };
    write(
        &sidecar_path(path),
        serde_json::to_string(&meta).expect("meta serializes"),
    )
}

fn sidecar_path(path: &Path) -> std::path::PathBuf {
    let mut s = path.as_os_str().to_os_string();
    s.push(".meta.json");
    std::path::PathBuf::from(s)
}

// ---------------------------------------------------------------------------
// Reference networks
// ---------------------------------------------------------------------------

/// Linear congruential weight generator: `x_{n+1} = (1103515245 x_n + 12345)
/// mod 2^31`, seeded at 42; each draw advances the state and maps it to
/// `(x / 2^31 - 0.5) / 5`. Weights are consumed in layer declaration order.
#[derive(Debug, Clone)]
pub struct WeightGen {
    state: u64,
}

impl WeightGen {
    const MODULUS: u64 = 1 << 31;

    pub fn new() -> Self {
        Self { state: 42 }
    }

    pub fn next_weight(&mut self) -> f64 {
        self.state = (1103515245u64.wrapping_mul(self.state) + 12345) % Self::MODULUS;
        (self.state as f64 / Self::MODULUS as f64 - 0.5) / 5.0
    }

    pub fn take(&mut self, n: usize) -> Vec<f64> {
        (0..n).map(|_| self.next_weight()).collect()
    }
}

impl Default for WeightGen {
    fn default() -> Self {
        Self::new()
    }
}

/// Which desk-scale reference network to construct.
#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub enum ReferenceKind {
    DetectorStub,
    ClassifierStub,
}

/// Deterministic reference network. Two constructions are bit-identical.
///
/// classifier_stub: 1x1x16x16 -> conv3x3(4, pad 1) -> ReLU -> maxpool2x2 ->
/// conv3x3(8, pad 1) -> ReLU (tap `last_conv`, 8x8x8) -> GAP -> linear(2).
/// Convolutions carry no bias; the linear head does.
///
/// detector_stub: 1x1x64x64 -> conv3x3(4, pad 1) -> ReLU -> maxpool2x2 ->
/// conv3x3(8, pad 1) -> ReLU -> maxpool2x2 -> conv3x3(20, pad 1) ->
/// reshape to (4+16) x 256. No biases anywhere.
pub fn reference_net(kind: ReferenceKind) -> GraphModel {
    let mut gen = WeightGen::new();
    match kind {
        ReferenceKind::ClassifierStub => {
            let layers = vec![
                Layer::Conv2d {
                    out_channels: 4,
                    in_channels: 1,
                    kernel: 3,
                    padding: 1,
                    weight: gen.take(4 * 1 * 3 * 3),
                    bias: None,
                },
                Layer::Relu,
                Layer::MaxPool2x2,
                Layer::Conv2d {
                    out_channels: 8,
                    in_channels: 4,
                    kernel: 3,
                    padding: 1,
                    weight: gen.take(8 * 4 * 3 * 3),
                    bias: None,
                },
                Layer::Relu,
                Layer::GlobalAvgPool,
                Layer::Linear {
                    out_dim: 2,
                    in_dim: 8,
                    weight: gen.take(2 * 8),
                    bias: gen.take(2),
                },
            ];
            let taps = BTreeMap::from([(LAST_CONV_TAP.to_string(), 4usize)]);
            GraphModel::build(ModelKind::Classifier, vec![1, 1, 16, 16], layers, taps)
                .expect("reference classifier is valid")
        }
        ReferenceKind::DetectorStub => {
            let layers = vec![
                Layer::Conv2d {
                    out_channels: 4,
                    in_channels: 1,
                    kernel: 3,
                    padding: 1,
                    weight: gen.take(4 * 1 * 3 * 3),
                    bias: None,
                },
                Layer::Relu,
                Layer::MaxPool2x2,
                Layer::Conv2d {
                    out_channels: 8,
                    in_channels: 4,
                    kernel: 3,
                    padding: 1,
                    weight: gen.take(8 * 4 * 3 * 3),
                    bias: None,
                },
                Layer::Relu,
                Layer::MaxPool2x2,
                Layer::Conv2d {
                    out_channels: crate::detection::RAW_CHANNELS,
                    in_channels: 8,
                    kernel: 3,
                    padding: 1,
                    weight: gen.take(crate::detection::RAW_CHANNELS * 8 * 3 * 3),
                    bias: None,
                },
                Layer::Reshape {
                    shape: vec![crate::detection::RAW_CHANNELS, 16 * 16],
                },
            ];
            GraphModel::build(ModelKind::Detector, vec![1, 1, 64, 64], layers, BTreeMap::new())
                .expect("reference detector is valid")
        }
    }
}

#[cfg(test)]
pub(crate) mod tests {
    use super::*;

    /// Straight-line re-implementation of the classifier_stub forward pass,
    /// independent of the Layer machinery.
    pub(crate) fn oracle_classifier_forward(input16: &[f64]) -> [f64; 2] {
        assert_eq!(input16.len(), 16 * 16);
        let mut gen = WeightGen::new();
        let w1 = gen.take(36);
        let w2 = gen.take(288);
        let wl = gen.take(16);
        let bl = gen.take(2);

        // conv1 (1->4, pad 1) + relu on 16x16
        let mut a1 = vec![0.0; 4 * 16 * 16];
        for co in 0..4 {
            for y in 0..16i64 {
                for x in 0..16i64 {
                    let mut acc = 0.0;
                    for ky in 0..3i64 {
                        for kx in 0..3i64 {
                            let (iy, ix) = (y + ky - 1, x + kx - 1);
                            if (0..16).contains(&iy) && (0..16).contains(&ix) {
                                acc += w1[(co * 9 + (ky * 3 + kx) as usize) as usize]
                                    * input16[(iy * 16 + ix) as usize];
                            }
                        }
                    }
                    a1[co * 256 + (y * 16 + x) as usize] = acc.max(0.0);
                }
            }
        }
        // maxpool 2x2 -> 4 x 8 x 8
        let mut p1 = vec![0.0; 4 * 64];
        for c in 0..4 {
            for y in 0..8 {
                for x in 0..8 {
                    let mut m = f64::NEG_INFINITY;
                    for dy in 0..2 {
                        for dx in 0..2 {
                            m = m.max(a1[c * 256 + (2 * y + dy) * 16 + 2 * x + dx]);
                        }
                    }
                    p1[c * 64 + y * 8 + x] = m;
                }
            }
        }
        // conv2 (4->8, pad 1) + relu on 8x8
        let mut a2 = vec![0.0; 8 * 64];
        for co in 0..8 {
            for y in 0..8i64 {
                for x in 0..8i64 {
                    let mut acc = 0.0;
                    for ci in 0..4 {
                        for ky in 0..3i64 {
                            for kx in 0..3i64 {
                                let (iy, ix) = (y + ky - 1, x + kx - 1);
                                if (0..8).contains(&iy) && (0..8).contains(&ix) {
                                    acc += w2[((co * 4 + ci) * 9) + (ky * 3 + kx) as usize]
                                        * p1[ci * 64 + (iy * 8 + ix) as usize];
                                }
                            }
                        }
                    }
                    a2[co * 64 + (y * 8 + x) as usize] = acc.max(0.0);
                }
            }
        }
        // GAP + linear
        let mut logits = [bl[0], bl[1]];
        for c in 0..8 {
            let mean: f64 = a2[c * 64..(c + 1) * 64].iter().sum::<f64>() / 64.0;
            logits[0] += wl[c] * mean;
            logits[1] += wl[8 + c] * mean;
        }
        logits
    }

    pub(crate) fn fixed_test_patch_16() -> Vec<f64> {
        // deterministic, structured 16x16 input in [0, 1]
        (0..256)
            .map(|i| {
                let (x, y) = (i % 16, i / 16);
                (((x * 7 + y * 13) % 29) as f64) / 28.0
            })
            .collect()
    }

    #[test]
    fn weight_gen_matches_lcg_by_hand() {
        let mut g = WeightGen::new();
        // x1 = (1103515245*42 + 12345) mod 2^31
        let x1 = (1103515245u64 * 42 + 12345) % (1 << 31);
        let expected = (x1 as f64 / (1u64 << 31) as f64 - 0.5) / 5.0;
        assert_eq!(g.next_weight(), expected);
    }

    #[test]
    fn reference_nets_are_bit_identical() {
        assert_eq!(
            reference_net(ReferenceKind::ClassifierStub),
            reference_net(ReferenceKind::ClassifierStub)
        );
        assert_eq!(
            reference_net(ReferenceKind::DetectorStub),
            reference_net(ReferenceKind::DetectorStub)
        );
    }

    #[test]
    fn classifier_stub_shapes_and_head() {
        let m = reference_net(ReferenceKind::ClassifierStub);
        assert_eq!(m.input_spec(), [1, 1, 16, 16]);
        assert_eq!(m.output_spec(), [2]);
        assert_eq!(m.tap_shape(LAST_CONV_TAP).unwrap(), [8, 8, 8]);
        match m.head() {
            HeadKind::GapLinear(h) => {
                assert_eq!(h.classes, 2);
                assert_eq!(h.channels, 8);
            }
            HeadKind::Opaque => panic!("classifier stub must have a gap_linear head"),
        }
    }

    #[test]
    fn detector_stub_grid_shape() {
        let m = reference_net(ReferenceKind::DetectorStub);
        assert_eq!(m.output_spec(), [crate::detection::RAW_CHANNELS, 256]);
    }

    #[test]
    fn zero_input_logits_equal_linear_bias() {
        let m = reference_net(ReferenceKind::ClassifierStub);
        let out = m.forward(&TensorValue::zeros(vec![1, 1, 16, 16])).unwrap();
        let mut gen = WeightGen::new();
        let _ = gen.take(36 + 288 + 16);
        let bias = gen.take(2);
        assert_eq!(out.data, bias);
    }

    #[test]
    fn forward_matches_independent_oracle() {
        let m = reference_net(ReferenceKind::ClassifierStub);
        let patch = fixed_test_patch_16();
        let out = m
            .forward(&TensorValue::new(vec![1, 1, 16, 16], patch.clone()).unwrap())
            .unwrap();
        let oracle = oracle_classifier_forward(&patch);
        assert!((out.data[0] - oracle[0]).abs() < 1e-12);
        assert!((out.data[1] - oracle[1]).abs() < 1e-12);
    }

    #[test]
    fn forward_with_taps_matches_plain_forward() {
        let m = reference_net(ReferenceKind::ClassifierStub);
        let input = TensorValue::new(vec![1, 1, 16, 16], fixed_test_patch_16()).unwrap();
        let plain = m.forward(&input).unwrap();
        let (out, taps) = m.forward_with_taps(&input, &[LAST_CONV_TAP]).unwrap();
        assert_eq!(plain, out);
        assert_eq!(taps[LAST_CONV_TAP].shape, vec![8, 8, 8]);
    }

    #[test]
    fn forward_from_tap_consistency() {
        let m = reference_net(ReferenceKind::ClassifierStub);
        let input = TensorValue::new(vec![1, 1, 16, 16], fixed_test_patch_16()).unwrap();
        let (out, taps) = m.forward_with_taps(&input, &[LAST_CONV_TAP]).unwrap();
        let resumed = m.forward_from_tap(LAST_CONV_TAP, &taps[LAST_CONV_TAP]).unwrap();
        assert_eq!(out, resumed);
    }

    #[test]
    fn zero_tap_activations_give_bias_logits() {
        let m = reference_net(ReferenceKind::ClassifierStub);
        let out = m
            .forward_from_tap(LAST_CONV_TAP, &TensorValue::zeros(vec![8, 8, 8]))
            .unwrap();
        let HeadKind::GapLinear(h) = m.head() else { panic!() };
        assert_eq!(out.data, h.bias);
    }

    #[test]
    fn forward_from_tap_rejects_bad_shape_and_name() {
        let m = reference_net(ReferenceKind::ClassifierStub);
        assert!(m.forward_from_tap(LAST_CONV_TAP, &TensorValue::zeros(vec![8, 4, 4])).is_err());
        assert!(m.forward_from_tap("no_such_tap", &TensorValue::zeros(vec![8, 8, 8])).is_err());
    }

    #[test]
    fn input_gradient_matches_central_difference_on_probe_pixels() {
        let m = reference_net(ReferenceKind::ClassifierStub);
        let patch = fixed_test_patch_16();
        let analytic = m
            .input_gradient(&TensorValue::new(vec![1, 1, 16, 16], patch.clone()).unwrap(), 0)
            .unwrap();
        let h = 1e-4;
        for &idx in &[0usize, 77, 200] {
            let mut plus = patch.clone();
            plus[idx] += h;
            let mut minus = patch.clone();
            minus[idx] -= h;
            let fp = m.forward(&TensorValue::new(vec![1, 1, 16, 16], plus).unwrap()).unwrap();
            let fm = m.forward(&TensorValue::new(vec![1, 1, 16, 16], minus).unwrap()).unwrap();
            let fd = (fp.data[0] - fm.data[0]) / (2.0 * h);
            assert!(
                (fd - analytic.data[idx]).abs() < 1e-7,
                "pixel {idx}: fd {fd} vs analytic {}",
                analytic.data[idx]
            );
        }
    }

    #[test]
    fn artifact_roundtrip_and_kind_validation() {
        let dir = tempfile::tempdir().unwrap();
        let cls_path = dir.path().join("cls.json");
        let det_path = dir.path().join("det.json");
        save_model(&reference_net(ReferenceKind::ClassifierStub), &cls_path).unwrap();
        save_model(&reference_net(ReferenceKind::DetectorStub), &det_path).unwrap();

        let cls = load_model(&cls_path, ModelKind::Classifier).unwrap();
        assert_eq!(cls.output_spec(), [2]);
        assert_eq!(cls, reference_net(ReferenceKind::ClassifierStub));

        // detector artifact loaded as classifier -> shape mismatch
        let err = load_model(&det_path, ModelKind::Classifier).unwrap_err();
        assert!(matches!(err, Error::ShapeMismatch(_)), "{err}");

        assert!(load_model(&dir.path().join("missing.json"), ModelKind::Detector).is_err());
    }

    #[test]
    fn classifier_without_last_conv_tap_is_rejected() {
        let m = reference_net(ReferenceKind::ClassifierStub);
        let dir = tempfile::tempdir().unwrap();
        let path = dir.path().join("noTap.json");
        save_model(&m, &path).unwrap();
        // strip the tap from the artifact
        let mut v: serde_json::Value =
            serde_json::from_str(&std::fs::read_to_string(&path).unwrap()).unwrap();
        v["taps"] = serde_json::json!({});
        std::fs::write(&path, v.to_string()).unwrap();
        std::fs::remove_file(sidecar_path(&path)).unwrap();
        let err = load_model(&path, ModelKind::Classifier).unwrap_err();
        assert!(matches!(err, Error::Model(_)), "{err}");
    }
}
