//! Pixel-level primitives: PNG decode/encode, grayscale conversion, letterbox
//! resizing, ROI cropping, geometric augmentations, and heatmap overlay
//! rendering.
//!
//! All images are immutable value types with pixels stored row-major in
//! `[0, 1]`. Every operation here is a pure function and safe to call from
//! many threads.

use std::path::Path;

use crate::detection::BBox;
use crate::error::{Error, Result};
use crate::explain::Heatmap;

/// Gray value used to fill letterbox borders (114/255, the convention the
/// stage-1 detector family is trained with).
pub const LETTERBOX_PAD: f64 = 0.447;

/// Side length of the classifier ROI patch.
pub const ROI_SIZE: usize = 224;

/// A decoded radiograph: row-major scalars in `[0, 1]`, 1 or 3 channels.
#[derive(Debug, Clone, PartialEq)]
pub struct RadiographImage {
    width: usize,
    height: usize,
    channels: usize,
    pixels: Vec<f64>,
}

impl RadiographImage {
    pub fn new(width: usize, height: usize, channels: usize, pixels: Vec<f64>) -> Result<Self> {
        if width == 0 || height == 0 {
            return Err(Error::InvalidImage("zero-dimension image".into()));
        }
        if channels != 1 && channels != 3 {
            return Err(Error::UnsupportedChannels(channels));
        }
        if pixels.len() != width * height * channels {
            return Err(Error::InvalidImage(format!(
                "pixel buffer length {} != {}x{}x{}",
                pixels.len(),
                width,
                height,
                channels
            )));
        }
        if pixels.iter().any(|&p| !(0.0..=1.0).contains(&p) || p.is_nan()) {
            return Err(Error::InvalidImage("pixel value outside [0, 1]".into()));
        }
        Ok(Self {
            width,
            height,
            channels,
            pixels,
        })
    }

    /// Image filled with a constant value.
    pub fn constant(width: usize, height: usize, channels: usize, value: f64) -> Result<Self> {
        Self::new(width, height, channels, vec![value; width * height * channels])
    }

    pub fn width(&self) -> usize {
        self.width
    }

    pub fn height(&self) -> usize {
        self.height
    }

    pub fn channels(&self) -> usize {
        self.channels
    }

    pub fn pixels(&self) -> &[f64] {
        &self.pixels
    }

    #[inline]
    pub fn get(&self, x: usize, y: usize, c: usize) -> f64 {
        self.pixels[(y * self.width + x) * self.channels + c]
    }

    #[inline]
    fn set(&mut self, x: usize, y: usize, c: usize, v: f64) {
        self.pixels[(y * self.width + x) * self.channels + c] = v;
    }
}

/// Records how an image was mapped into a square letterbox canvas, so box
/// coordinates can be carried back to the original frame.
#[derive(Debug, Clone, Copy, PartialEq, serde::Serialize, serde::Deserialize)]
pub struct LetterboxTransform {
    pub scale: f64,
    pub pad_x: f64,
    pub pad_y: f64,
    pub orig_width: usize,
    pub orig_height: usize,
}

impl LetterboxTransform {
    pub fn identity(width: usize, height: usize) -> Self {
        Self {
            scale: 1.0,
            pad_x: 0.0,
            pad_y: 0.0,
            orig_width: width,
            orig_height: height,
        }
    }

    /// Original-frame coordinate -> letterbox coordinate.
    pub fn forward_point(&self, x: f64, y: f64) -> (f64, f64) {
        (x * self.scale + self.pad_x, y * self.scale + self.pad_y)
    }

    pub fn forward_box(&self, b: &BBox) -> BBox {
        let (x1, y1) = self.forward_point(b.x1, b.y1);
        let (x2, y2) = self.forward_point(b.x2, b.y2);
        BBox { x1, y1, x2, y2 }
    }
}

/// Maps ROI patch coordinates back to the original image frame:
/// `orig = (patch + crop_offset) / scale + region_origin`.
#[derive(Debug, Clone, Copy, PartialEq, serde::Serialize, serde::Deserialize)]
pub struct CropTransform {
    pub scale: f64,
    pub crop_x: f64,
    pub crop_y: f64,
    pub region_x: f64,
    pub region_y: f64,
}

impl CropTransform {
    pub fn to_original(&self, px: f64, py: f64) -> (f64, f64) {
        (
            self.region_x + (px + self.crop_x) / self.scale,
            self.region_y + (py + self.crop_y) / self.scale,
        )
    }
}

/// 224x224 single-channel crop tied to its source detection box.
#[derive(Debug, Clone, PartialEq)]
pub struct RoiPatch {
    pub pixels: RadiographImage,
    pub source_box: BBox,
    pub crop_transform: CropTransform,
}

/// Convert to a single-channel image. Three-channel input uses BT.601 luma
/// (0.299 R + 0.587 G + 0.114 B); single-channel input is returned as is.
pub fn to_grayscale(img: &RadiographImage) -> Result<RadiographImage> {
    match img.channels {
        1 => Ok(img.clone()),
        3 => {
            let mut pixels = Vec::with_capacity(img.width * img.height);
            for px in img.pixels.chunks_exact(3) {
                let v = 0.299 * px[0] + 0.587 * px[1] + 0.114 * px[2];
                pixels.push(v.clamp(0.0, 1.0));
            }
            RadiographImage::new(img.width, img.height, 1, pixels)
        }
        n => Err(Error::UnsupportedChannels(n)),
    }
}

/// Bilinear sample with half-pixel-center alignment, clamped at borders.
fn sample_bilinear(img: &RadiographImage, c: usize, sx: f64, sy: f64) -> f64 {
    let x = sx.clamp(0.0, img.width as f64 - 1.0);
    let y = sy.clamp(0.0, img.height as f64 - 1.0);
    let x0 = x.floor() as usize;
    let y0 = y.floor() as usize;
    let x1 = (x0 + 1).min(img.width - 1);
    let y1 = (y0 + 1).min(img.height - 1);
    let fx = x - x0 as f64;
    let fy = y - y0 as f64;
    let top = img.get(x0, y0, c) * (1.0 - fx) + img.get(x1, y0, c) * fx;
    let bot = img.get(x0, y1, c) * (1.0 - fx) + img.get(x1, y1, c) * fx;
    top * (1.0 - fy) + bot * fy
}

/// Resize to exact dimensions with bilinear, half-pixel-center sampling.
pub fn resize_bilinear(img: &RadiographImage, new_w: usize, new_h: usize) -> Result<RadiographImage> {
    if new_w == 0 || new_h == 0 {
        return Err(Error::InvalidImage("zero-dimension resize target".into()));
    }
    if new_w == img.width && new_h == img.height {
        return Ok(img.clone());
    }
    let sx = img.width as f64 / new_w as f64;
    let sy = img.height as f64 / new_h as f64;
    let mut pixels = Vec::with_capacity(new_w * new_h * img.channels);
    for y in 0..new_h {
        let src_y = (y as f64 + 0.5) * sy - 0.5;
        for x in 0..new_w {
            let src_x = (x as f64 + 0.5) * sx - 0.5;
            for c in 0..img.channels {
                pixels.push(sample_bilinear(img, c, src_x, src_y).clamp(0.0, 1.0));
            }
        }
    }
    RadiographImage::new(new_w, new_h, img.channels, pixels)
}

/// The transform a [`letterbox_resize`] of a `width` x `height` image onto a
/// square `target` canvas would apply, without touching any pixels.
pub fn letterbox_transform(width: usize, height: usize, target: usize) -> Result<LetterboxTransform> {
    if target == 0 || width == 0 || height == 0 {
        return Err(Error::InvalidArgument("letterbox dimensions must be > 0".into()));
    }
    let scale = target as f64 / width.max(height) as f64;
    let new_w = ((width as f64 * scale).round() as usize).clamp(1, target);
    let new_h = ((height as f64 * scale).round() as usize).clamp(1, target);
    Ok(LetterboxTransform {
        scale,
        pad_x: (target - new_w).div_ceil(2) as f64,
        pad_y: (target - new_h).div_ceil(2) as f64,
        orig_width: width,
        orig_height: height,
    })
}

/// Aspect-preserving resize onto a square `target` canvas, borders filled
/// with [`LETTERBOX_PAD`]. Odd padding is absorbed on the left/top side.
pub fn letterbox_resize(
    img: &RadiographImage,
    target: usize,
) -> Result<(RadiographImage, LetterboxTransform)> {
    let t = letterbox_transform(img.width, img.height, target)?;
    let scale = t.scale;
    let new_w = ((img.width as f64 * scale).round() as usize).clamp(1, target);
    let new_h = ((img.height as f64 * scale).round() as usize).clamp(1, target);
    let pad_x = t.pad_x as usize;
    let pad_y = t.pad_y as usize;
    let resized = resize_bilinear(img, new_w, new_h)?;
    let mut out = RadiographImage::constant(target, target, img.channels, LETTERBOX_PAD)?;
    for y in 0..new_h {
        for x in 0..new_w {
            for c in 0..img.channels {
                out.set(x + pad_x, y + pad_y, c, resized.get(x, y, c));
            }
        }
    }
    Ok((out, t))
}

/// Letterbox-frame box -> original-frame box, clamped to image bounds.
pub fn invert_box(b: &BBox, t: &LetterboxTransform) -> BBox {
    let w = t.orig_width as f64;
    let h = t.orig_height as f64;
    BBox {
        x1: ((b.x1 - t.pad_x) / t.scale).clamp(0.0, w),
        y1: ((b.y1 - t.pad_y) / t.scale).clamp(0.0, h),
        x2: ((b.x2 - t.pad_x) / t.scale).clamp(0.0, w),
        y2: ((b.y2 - t.pad_y) / t.scale).clamp(0.0, h),
    }
}

/// Crop the box region (clamped to the image), scale the shorter side to
/// 224 and center-crop to a 224x224 single-channel patch.
pub fn crop_roi(img: &RadiographImage, bbox: &BBox) -> Result<RoiPatch> {
    let gray = to_grayscale(img)?;
    let rx0 = (bbox.x1.floor().max(0.0)) as usize;
    let ry0 = (bbox.y1.floor().max(0.0)) as usize;
    let rx1 = (bbox.x2.ceil().min(gray.width as f64)) as usize;
    let ry1 = (bbox.y2.ceil().min(gray.height as f64)) as usize;
    if rx1 <= rx0 || ry1 <= ry0 {
        return Err(Error::InvalidArgument(format!(
            "box ({:.1},{:.1},{:.1},{:.1}) does not intersect a {}x{} image",
            bbox.x1, bbox.y1, bbox.x2, bbox.y2, gray.width, gray.height
        )));
    }
    let rw = rx1 - rx0;
    let rh = ry1 - ry0;
    let mut region = Vec::with_capacity(rw * rh);
    for y in ry0..ry1 {
        for x in rx0..rx1 {
            region.push(gray.get(x, y, 0));
        }
    }
    let region = RadiographImage::new(rw, rh, 1, region)?;

    let scale = ROI_SIZE as f64 / rw.min(rh) as f64;
    let sw = ((rw as f64 * scale).round() as usize).max(ROI_SIZE);
    let sh = ((rh as f64 * scale).round() as usize).max(ROI_SIZE);
    let scaled = resize_bilinear(&region, sw, sh)?;
    let off_x = (sw - ROI_SIZE) / 2;
    let off_y = (sh - ROI_SIZE) / 2;

    let mut pixels = Vec::with_capacity(ROI_SIZE * ROI_SIZE);
    for y in 0..ROI_SIZE {
        for x in 0..ROI_SIZE {
            pixels.push(scaled.get(x + off_x, y + off_y, 0));
        }
    }
    Ok(RoiPatch {
        pixels: RadiographImage::new(ROI_SIZE, ROI_SIZE, 1, pixels)?,
        source_box: *bbox,
        crop_transform: CropTransform {
            scale,
            crop_x: off_x as f64,
            crop_y: off_y as f64,
            region_x: rx0 as f64,
            region_y: ry0 as f64,
        },
    })
}

/// Piecewise-linear blue -> cyan -> yellow -> red colormap over `t` in [0, 1].
pub fn colormap(t: f64) -> [f64; 3] {
    const STOPS: [[f64; 3]; 5] = [
        [0.0, 0.0, 0.5],
        [0.0, 0.5, 1.0],
        [0.0, 1.0, 0.5],
        [1.0, 1.0, 0.0],
        [1.0, 0.0, 0.0],
    ];
    let t = t.clamp(0.0, 1.0);
    let pos = t * 4.0;
    let i = (pos.floor() as usize).min(3);
    let f = pos - i as f64;
    let lo = STOPS[i];
    let hi = STOPS[i + 1];
    [
        lo[0] + (hi[0] - lo[0]) * f,
        lo[1] + (hi[1] - lo[1]) * f,
        lo[2] + (hi[2] - lo[2]) * f,
    ]
}

/// Blend an activation map over the image:
/// `out = (1 - alpha) * gray_as_rgb + alpha * colormap(map)`.
pub fn render_overlay(img: &RadiographImage, map: &Heatmap, alpha: f64) -> Result<RadiographImage> {
    if map.width != img.width || map.height != img.height {
        return Err(Error::ShapeMismatch(format!(
            "heatmap {}x{} does not match image {}x{}",
            map.width, map.height, img.width, img.height
        )));
    }
    if !(0.0..=1.0).contains(&alpha) {
        return Err(Error::InvalidArgument(format!("alpha {alpha} outside [0, 1]")));
    }
    let gray = to_grayscale(img)?;
    let mut pixels = Vec::with_capacity(img.width * img.height * 3);
    for (i, &g) in gray.pixels.iter().enumerate() {
        let rgb = colormap(map.values[i]);
        for ch in rgb {
            pixels.push(((1.0 - alpha) * g + alpha * ch).clamp(0.0, 1.0));
        }
    }
    RadiographImage::new(img.width, img.height, 3, pixels)
}

/// Mirror pixels and boxes across the vertical axis.
pub fn hflip(img: &RadiographImage, boxes: &[BBox]) -> (RadiographImage, Vec<BBox>) {
    let mut out = img.clone();
    for y in 0..img.height {
        for x in 0..img.width {
            for c in 0..img.channels {
                out.set(x, y, c, img.get(img.width - 1 - x, y, c));
            }
        }
    }
    let w = img.width as f64;
    let boxes = boxes
        .iter()
        .map(|b| BBox {
            x1: w - b.x2,
            y1: b.y1,
            x2: w - b.x1,
            y2: b.y2,
        })
        .collect();
    (out, boxes)
}

/// Rotate pixels and boxes clockwise by 90, 180 or 270 degrees.
pub fn rotate(
    img: &RadiographImage,
    boxes: &[BBox],
    degrees: u32,
) -> Result<(RadiographImage, Vec<BBox>)> {
    let (w, h) = (img.width as f64, img.height as f64);
    match degrees {
        90 => {
            // (x, y) -> (H - y, x)
            let mut out = RadiographImage::constant(img.height, img.width, img.channels, 0.0)?;
            for y in 0..img.height {
                for x in 0..img.width {
                    for c in 0..img.channels {
                        out.set(img.height - 1 - y, x, c, img.get(x, y, c));
                    }
                }
            }
            let boxes = boxes
                .iter()
                .map(|b| BBox {
                    x1: h - b.y2,
                    y1: b.x1,
                    x2: h - b.y1,
                    y2: b.x2,
                })
                .collect();
            Ok((out, boxes))
        }
        180 => {
            let mut out = img.clone();
            for y in 0..img.height {
                for x in 0..img.width {
                    for c in 0..img.channels {
                        out.set(x, y, c, img.get(img.width - 1 - x, img.height - 1 - y, c));
                    }
                }
            }
            let boxes = boxes
                .iter()
                .map(|b| BBox {
                    x1: w - b.x2,
                    y1: h - b.y2,
                    x2: w - b.x1,
                    y2: h - b.y1,
                })
                .collect();
            Ok((out, boxes))
        }
        270 => {
            // (x, y) -> (y, W - x)
            let mut out = RadiographImage::constant(img.height, img.width, img.channels, 0.0)?;
            for y in 0..img.height {
                for x in 0..img.width {
                    for c in 0..img.channels {
                        out.set(y, img.width - 1 - x, c, img.get(x, y, c));
                    }
                }
            }
            let boxes = boxes
                .iter()
                .map(|b| BBox {
                    x1: b.y1,
                    y1: w - b.x2,
                    x2: b.y2,
                    y2: w - b.x1,
                })
                .collect();
            Ok((out, boxes))
        }
        d => Err(Error::InvalidArgument(format!(
            "unsupported rotation angle {d} (expected 90, 180 or 270)"
        ))),
    }
}

/// A box surviving a mosaic, tagged with the tile and box index it came from.
#[derive(Debug, Clone, Copy, PartialEq)]
pub struct MosaicBox {
    pub tile: usize,
    pub source_index: usize,
    pub bbox: BBox,
}

/// Fraction of a box's area that must survive clipping for the box to be
/// kept in the mosaic output.
pub const MOSAIC_MIN_AREA_FRACTION: f64 = 0.25;

/// Tile four same-size images into a 2x canvas around a seeded random split
/// point, remapping boxes and discarding those with under 25% surviving area.
///
/// Tile order: top-left, top-right, bottom-left, bottom-right.
pub fn mosaic(
    imgs: &[RadiographImage; 4],
    boxes: &[Vec<BBox>; 4],
    seed: u64,
) -> Result<(RadiographImage, Vec<MosaicBox>)> {
    use rand::{Rng, SeedableRng};

    let (w, h, ch) = (imgs[0].width, imgs[0].height, imgs[0].channels);
    if imgs.iter().any(|i| i.width != w || i.height != h || i.channels != ch) {
        return Err(Error::InvalidArgument(
            "mosaic inputs must share a common size".into(),
        ));
    }
    let mut rng = rand_chacha::ChaCha8Rng::seed_from_u64(seed);
    let sx = rng.gen_range(w / 2..=w + w / 2) as i64;
    let sy = rng.gen_range(h / 2..=h + h / 2) as i64;
    let (wi, hi) = (w as i64, h as i64);

    let mut canvas = RadiographImage::constant(2 * w, 2 * h, ch, LETTERBOX_PAD)?;
    // Each tile's top-left corner on the canvas.
    let offsets = [
        (sx - wi, sy - hi),
        (sx, sy - hi),
        (sx - wi, sy),
        (sx, sy),
    ];
    let mut out_boxes = Vec::new();
    for (tile, (img, (ox, oy))) in imgs.iter().zip(offsets).enumerate() {
        for y in 0..hi {
            let cy = y + oy;
            if cy < 0 || cy >= 2 * hi {
                continue;
            }
            for x in 0..wi {
                let cx = x + ox;
                if cx < 0 || cx >= 2 * wi {
                    continue;
                }
                for c in 0..ch {
                    canvas.set(cx as usize, cy as usize, c, img.get(x as usize, y as usize, c));
                }
            }
        }
        // Visible part of this tile on the canvas.
        let vis_x1 = (ox.max(0)) as f64;
        let vis_y1 = (oy.max(0)) as f64;
        let vis_x2 = ((ox + wi).min(2 * wi)) as f64;
        let vis_y2 = ((oy + hi).min(2 * hi)) as f64;
        for (i, b) in boxes[tile].iter().enumerate() {
            let shifted = BBox {
                x1: b.x1 + ox as f64,
                y1: b.y1 + oy as f64,
                x2: b.x2 + ox as f64,
                y2: b.y2 + oy as f64,
            };
            let clipped = BBox {
                x1: shifted.x1.max(vis_x1),
                y1: shifted.y1.max(vis_y1),
                x2: shifted.x2.min(vis_x2),
                y2: shifted.y2.min(vis_y2),
            };
            if clipped.x2 <= clipped.x1 || clipped.y2 <= clipped.y1 {
                continue;
            }
            if clipped.area() >= MOSAIC_MIN_AREA_FRACTION * b.area() {
                out_boxes.push(MosaicBox {
                    tile,
                    source_index: i,
                    bbox: clipped,
                });
            }
        }
    }
    Ok((canvas, out_boxes))
}

// ---------------------------------------------------------------------------
// PNG I/O
// ---------------------------------------------------------------------------

/// Load an 8-bit/16-bit grayscale or 8-bit RGB PNG, normalizing to [0, 1].
pub fn load_png(path: &Path) -> Result<RadiographImage> {
    let dynimg = image::open(path).map_err(|e| match e {
        image::ImageError::IoError(source) => Error::Io {
            path: path.to_path_buf(),
            source,
        },
        other => Error::InvalidImage(format!("{}: {other}", path.display())),
    })?;
    match dynimg {
        image::DynamicImage::ImageLuma8(buf) => {
            let (w, h) = (buf.width() as usize, buf.height() as usize);
            let pixels = buf.into_raw().into_iter().map(|v| v as f64 / 255.0).collect();
            RadiographImage::new(w, h, 1, pixels)
        }
        image::DynamicImage::ImageLuma16(buf) => {
            let (w, h) = (buf.width() as usize, buf.height() as usize);
            let pixels = buf.into_raw().into_iter().map(|v| v as f64 / 65535.0).collect();
            RadiographImage::new(w, h, 1, pixels)
        }
        image::DynamicImage::ImageRgb8(buf) => {
            let (w, h) = (buf.width() as usize, buf.height() as usize);
            let pixels = buf.into_raw().into_iter().map(|v| v as f64 / 255.0).collect();
            RadiographImage::new(w, h, 3, pixels)
        }
        other => Err(Error::InvalidImage(format!(
            "{}: unsupported PNG color type {:?}",
            path.display(),
            other.color()
        ))),
    }
}

/// Save a 3-channel image as 8-bit RGB PNG (1-channel input is replicated).
pub fn save_png_rgb8(img: &RadiographImage, path: &Path) -> Result<()> {
    let mut raw = Vec::with_capacity(img.width * img.height * 3);
    match img.channels {
        3 => raw.extend(img.pixels.iter().map(|&v| (v * 255.0).round() as u8)),
        1 => {
            for &v in &img.pixels {
                let b = (v * 255.0).round() as u8;
                raw.extend_from_slice(&[b, b, b]);
            }
        }
        n => return Err(Error::UnsupportedChannels(n)),
    }
    let buf = image::RgbImage::from_raw(img.width as u32, img.height as u32, raw)
        .expect("buffer sized from image dims");
    buf.save(path).map_err(|e| Error::InvalidImage(format!("{}: {e}", path.display())))
}

/// Save a heatmap as 16-bit grayscale PNG, `value = round(v * 65535)`.
pub fn save_heatmap_png(map: &Heatmap, path: &Path) -> Result<()> {
    let raw: Vec<u16> = map.values.iter().map(|&v| (v * 65535.0).round() as u16).collect();
    let buf = image::ImageBuffer::<image::Luma<u16>, _>::from_raw(
        map.width as u32,
        map.height as u32,
        raw,
    )
    .expect("buffer sized from map dims");
    buf.save(path).map_err(|e| Error::InvalidImage(format!("{}: {e}", path.display())))
}

/// Load a 16-bit grayscale heatmap PNG back into a [`Heatmap`].
pub fn load_heatmap_png(path: &Path) -> Result<Heatmap> {
    let img = load_png(path)?;
    if img.channels != 1 {
        return Err(Error::InvalidImage(format!(
            "{}: heatmap PNG must be grayscale",
            path.display()
        )));
    }
    Heatmap::new(img.width, img.height, img.pixels)
}
