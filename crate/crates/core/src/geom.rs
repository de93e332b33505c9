//! Screen geometry in normalized coordinates.
//!
//! Every grounding target and prediction is expressed relative to the
//! screenshot, with `(0, 0)` the top-left and `(1, 1)` the bottom-right
//! corner. Pixel quantities only appear where an image is actually resized
//! or cropped.

use serde::{Deserialize, Serialize};
use thiserror::Error;

#[derive(Debug, Clone, PartialEq, Error)]
pub enum GeomError {
    #[error("invalid coordinate: {0}")]
    InvalidCoordinate(String),
    #[error("invalid box: {0}")]
    InvalidBox(String),
    #[error("invalid pixel size {width}x{height}")]
    InvalidSize { width: u32, height: u32 },
    #[error("invalid resize spec: {0}")]
    InvalidResizeSpec(String),
    #[error("zoom factor must be > 1, got {0}")]
    InvalidZoom(f64),
    #[error("point ({x:.4}, {y:.4}) lies outside the crop window")]
    OutOfWindow { x: f64, y: f64 },
}

/// Image dimensions in pixels.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash, Serialize, Deserialize)]
pub struct PixelSize {
    pub width: u32,
    pub height: u32,
}

impl PixelSize {
    pub fn new(width: u32, height: u32) -> Result<Self, GeomError> {
        if width == 0 || height == 0 {
            return Err(GeomError::InvalidSize { width, height });
        }
        Ok(Self { width, height })
    }

    pub fn area(&self) -> u64 {
        u64::from(self.width) * u64::from(self.height)
    }
}

/// A point in screen-relative coordinates, both axes in `[0, 1]`.
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
#[serde(try_from = "RawPoint")]
pub struct NormPoint {
    x: f64,
    y: f64,
}

#[derive(Deserialize)]
struct RawPoint {
    x: f64,
    y: f64,
}

impl TryFrom<RawPoint> for NormPoint {
    type Error = GeomError;

    fn try_from(raw: RawPoint) -> Result<Self, Self::Error> {
        NormPoint::new(raw.x, raw.y)
    }
}

fn unit_interval(v: f64) -> bool {
    v.is_finite() && (0.0..=1.0).contains(&v)
}

impl NormPoint {
    pub fn new(x: f64, y: f64) -> Result<Self, GeomError> {
        if !unit_interval(x) || !unit_interval(y) {
            return Err(GeomError::InvalidCoordinate(format!(
                "coordinate out of range: ({x}, {y})"
            )));
        }
        Ok(Self { x, y })
    }

    pub fn x(&self) -> f64 {
        self.x
    }

    pub fn y(&self) -> f64 {
        self.y
    }

    pub fn distance(&self, other: &NormPoint) -> f64 {
        (self.x - other.x).hypot(self.y - other.y)
    }
}

/// Clamp a raw model-emitted point into the unit square.
pub fn clamp_point(x: f64, y: f64) -> Result<NormPoint, GeomError> {
    if !x.is_finite() || !y.is_finite() {
        return Err(GeomError::InvalidCoordinate(format!(
            "non-finite coordinate: ({x}, {y})"
        )));
    }
    Ok(NormPoint {
        x: x.clamp(0.0, 1.0),
        y: y.clamp(0.0, 1.0),
    })
}

/// An axis-aligned box in screen-relative coordinates.
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
#[serde(try_from = "RawBox")]
pub struct NormBox {
    x_min: f64,
    y_min: f64,
    x_max: f64,
    y_max: f64,
}

#[derive(Deserialize)]
struct RawBox {
    x_min: f64,
    y_min: f64,
    x_max: f64,
    y_max: f64,
}

impl TryFrom<RawBox> for NormBox {
    type Error = GeomError;

    fn try_from(raw: RawBox) -> Result<Self, Self::Error> {
        NormBox::new(raw.x_min, raw.y_min, raw.x_max, raw.y_max)
    }
}

impl NormBox {
    pub fn new(x_min: f64, y_min: f64, x_max: f64, y_max: f64) -> Result<Self, GeomError> {
        if ![x_min, y_min, x_max, y_max].iter().all(|v| unit_interval(*v)) {
            return Err(GeomError::InvalidCoordinate(format!(
                "coordinate out of range: ({x_min}, {y_min}, {x_max}, {y_max})"
            )));
        }
        if x_min >= x_max || y_min >= y_max {
            return Err(GeomError::InvalidBox(format!(
                "empty box: ({x_min}, {y_min}, {x_max}, {y_max})"
            )));
        }
        Ok(Self {
            x_min,
            y_min,
            x_max,
            y_max,
        })
    }

    pub fn x_min(&self) -> f64 {
        self.x_min
    }
    pub fn y_min(&self) -> f64 {
        self.y_min
    }
    pub fn x_max(&self) -> f64 {
        self.x_max
    }
    pub fn y_max(&self) -> f64 {
        self.y_max
    }

    pub fn width(&self) -> f64 {
        self.x_max - self.x_min
    }

    pub fn height(&self) -> f64 {
        self.y_max - self.y_min
    }

    pub fn center(&self) -> NormPoint {
        NormPoint {
            x: (self.x_min + self.x_max) / 2.0,
            y: (self.y_min + self.y_max) / 2.0,
        }
    }

    /// The point of the box closest to `p`.
    pub fn nearest_point(&self, p: &NormPoint) -> NormPoint {
        NormPoint {
            x: p.x.clamp(self.x_min, self.x_max),
            y: p.y.clamp(self.y_min, self.y_max),
        }
    }
}

/// Edges are inside.
pub fn point_in_box(p: &NormPoint, b: &NormBox) -> bool {
    b.x_min <= p.x && p.x <= b.x_max && b.y_min <= p.y && p.y <= b.y_max
}

/// How the distance from a prediction to a target box is measured.
#[derive(Debug, Clone, Copy, Default, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum DistanceMetric {
    #[default]
    Euclidean,
    Chebyshev,
}

/// Distance from `p` to the nearest point of `b`; zero exactly when the
/// point is inside the box.
pub fn deviation(p: &NormPoint, b: &NormBox) -> f64 {
    deviation_with(p, b, DistanceMetric::Euclidean)
}

pub fn deviation_with(p: &NormPoint, b: &NormBox, metric: DistanceMetric) -> f64 {
    let dx = (b.x_min - p.x).max(0.0).max(p.x - b.x_max);
    let dy = (b.y_min - p.y).max(0.0).max(p.y - b.y_max);
    match metric {
        DistanceMetric::Euclidean => dx.hypot(dy),
        DistanceMetric::Chebyshev => dx.max(dy),
    }
}

/// Pixel budget and dimension granularity used when resizing screenshots
/// for the vision encoder.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
pub struct ResizeSpec {
    pub pixel_budget: u64,
    /// Patch size times the spatial merge factor (14 px patches, 2x2 merge).
    pub dim_factor: u32,
}

impl Default for ResizeSpec {
    fn default() -> Self {
        Self {
            pixel_budget: 927_360,
            dim_factor: 28,
        }
    }
}

impl ResizeSpec {
    pub fn new(pixel_budget: u64, dim_factor: u32) -> Result<Self, GeomError> {
        let spec = Self {
            pixel_budget,
            dim_factor,
        };
        spec.validate()?;
        Ok(spec)
    }

    pub fn validate(&self) -> Result<(), GeomError> {
        if self.dim_factor == 0 {
            return Err(GeomError::InvalidResizeSpec("dim_factor must be >= 1".into()));
        }
        let f = u64::from(self.dim_factor);
        if self.pixel_budget < f * f {
            return Err(GeomError::InvalidResizeSpec(format!(
                "pixel_budget {} is below dim_factor^2 = {}",
                self.pixel_budget,
                f * f
            )));
        }
        Ok(())
    }

    /// Number of vision tokens an image of `size` occupies after resizing.
    pub fn token_count(&self, size: PixelSize) -> u64 {
        let f = u64::from(self.dim_factor);
        size.area() / (f * f)
    }
}

/// Resize so both sides are multiples of `dim_factor` and the area stays
/// within `pixel_budget`.
///
/// Each side is first rounded to the nearest multiple (never below one
/// step). When that overshoots the budget, both original sides are scaled
/// by `sqrt(budget / area)` and floored to multiples instead.
pub fn smart_resize(size: PixelSize, spec: &ResizeSpec) -> PixelSize {
    let f = f64::from(spec.dim_factor);
    let step = u64::from(spec.dim_factor);
    let (w, h) = (f64::from(size.width), f64::from(size.height));

    let round_to = |v: f64| ((v / f).round() as u64).max(1) * step;
    let floor_to = |v: f64| ((v / f).floor() as u64).max(1) * step;

    let mut out_w = round_to(w);
    let mut out_h = round_to(h);
    if out_w * out_h > spec.pixel_budget {
        let scale = (spec.pixel_budget as f64 / (w * h)).sqrt();
        out_w = floor_to(w * scale);
        out_h = floor_to(h * scale);
        // Extreme aspect ratios can still overshoot once the short side is
        // held at one step; trim the long side until the budget holds.
        while out_w * out_h > spec.pixel_budget {
            if out_w >= out_h {
                out_w -= step;
            } else {
                out_h -= step;
            }
        }
    }
    PixelSize {
        width: out_w as u32,
        height: out_h as u32,
    }
}

/// A pixel-aligned crop region of a screenshot plus the zoom factor that
/// produced it.
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct CropWindow {
    pub origin_x: u32,
    pub origin_y: u32,
    pub width: u32,
    pub height: u32,
    pub zoom_k: f64,
}

impl CropWindow {
    pub fn size(&self) -> PixelSize {
        PixelSize {
            width: self.width,
            height: self.height,
        }
    }

    /// Window bounds as a normalized box over `image`.
    pub fn to_norm_box(&self, image: PixelSize) -> NormBox {
        let (iw, ih) = (f64::from(image.width), f64::from(image.height));
        NormBox {
            x_min: f64::from(self.origin_x) / iw,
            y_min: f64::from(self.origin_y) / ih,
            x_max: f64::from(self.origin_x + self.width) / iw,
            y_max: f64::from(self.origin_y + self.height) / ih,
        }
    }
}

/// Window of `1/k` the image size per axis, centered on `pred` and shifted
/// (never shrunk) to stay inside the image.
pub fn crop_window(pred: &NormPoint, image: PixelSize, k: f64) -> Result<CropWindow, GeomError> {
    if !(k.is_finite() && k > 1.0) {
        return Err(GeomError::InvalidZoom(k));
    }
    let axis = |extent: u32, center: f64| -> (u32, u32) {
        let size = ((f64::from(extent) / k).round() as u32).clamp(1, extent);
        let max_origin = extent - size;
        let origin = (center * f64::from(extent) - f64::from(size) / 2.0).round();
        let origin = origin.clamp(0.0, f64::from(max_origin)) as u32;
        (origin, size)
    };
    let (origin_x, width) = axis(image.width, pred.x);
    let (origin_y, height) = axis(image.height, pred.y);
    Ok(CropWindow {
        origin_x,
        origin_y,
        width,
        height,
        zoom_k: k,
    })
}

/// Map a point predicted inside the crop back onto the full screenshot.
pub fn local_to_global(local: &NormPoint, window: &CropWindow, image: PixelSize) -> NormPoint {
    let gx = (f64::from(window.origin_x) + local.x * f64::from(window.width)) / f64::from(image.width);
    let gy =
        (f64::from(window.origin_y) + local.y * f64::from(window.height)) / f64::from(image.height);
    NormPoint {
        x: gx.clamp(0.0, 1.0),
        y: gy.clamp(0.0, 1.0),
    }
}

/// Inverse of [`local_to_global`].
pub fn global_to_local(
    global: &NormPoint,
    window: &CropWindow,
    image: PixelSize,
) -> Result<NormPoint, GeomError> {
    const SLACK: f64 = 1e-9;
    let px = global.x * f64::from(image.width);
    let py = global.y * f64::from(image.height);
    let (ox, oy) = (f64::from(window.origin_x), f64::from(window.origin_y));
    let (ww, wh) = (f64::from(window.width), f64::from(window.height));
    let lx = (px - ox) / ww;
    let ly = (py - oy) / wh;
    if !(-SLACK..=1.0 + SLACK).contains(&lx) || !(-SLACK..=1.0 + SLACK).contains(&ly) {
        return Err(GeomError::OutOfWindow {
            x: global.x,
            y: global.y,
        });
    }
    Ok(NormPoint {
        x: lx.clamp(0.0, 1.0),
        y: ly.clamp(0.0, 1.0),
    })
}

/// Express `target` in the window's local coordinates, clipped to the
/// window. `None` when the box and window do not overlap.
pub fn box_to_local(target: &NormBox, window: &CropWindow, image: PixelSize) -> Option<NormBox> {
    let w = window.to_norm_box(image);
    let x_min = target.x_min.max(w.x_min);
    let y_min = target.y_min.max(w.y_min);
    let x_max = target.x_max.min(w.x_max);
    let y_max = target.y_max.min(w.y_max);
    if x_min >= x_max || y_min >= y_max {
        return None;
    }
    let (ww, wh) = (w.width(), w.height());
    NormBox::new(
        ((x_min - w.x_min) / ww).clamp(0.0, 1.0),
        ((y_min - w.y_min) / wh).clamp(0.0, 1.0),
        ((x_max - w.x_min) / ww).clamp(0.0, 1.0),
        ((y_max - w.y_min) / wh).clamp(0.0, 1.0),
    )
    .ok()
}

#[cfg(test)]
mod tests {
    use super::*;

    fn pt(x: f64, y: f64) -> NormPoint {
        NormPoint::new(x, y).unwrap()
    }

    fn bx() -> NormBox {
        NormBox::new(0.6, 0.6, 0.8, 0.8).unwrap()
    }

    /// Exhaustive search over multiples of the factor: among all sizes within
    /// budget, pick the one closest in aspect ratio, then the largest area.
    fn brute_force_resize(size: PixelSize, spec: &ResizeSpec) -> PixelSize {
        let f = u64::from(spec.dim_factor);
        let ratio = f64::from(size.width) / f64::from(size.height);
        let mut best: Option<(f64, u64, u64, u64)> = None;
        let max_steps = spec.pixel_budget / (f * f);
        for wi in 1..=max_steps {
            for hi in 1..=(max_steps / wi) {
                let (w, h) = (wi * f, hi * f);
                let distortion = ((w as f64 / h as f64) - ratio).abs();
                let area = w * h;
                let better = match best {
                    None => true,
                    Some((d, a, _, _)) => distortion < d - 1e-12 || ((distortion - d).abs() <= 1e-12 && area > a),
                };
                if better {
                    best = Some((distortion, area, w, h));
                }
            }
        }
        let (_, _, w, h) = best.unwrap();
        PixelSize::new(w as u32, h as u32).unwrap()
    }

    #[test]
    fn smart_resize_examples() {
        let spec = ResizeSpec::default();
        let r = |w, h| smart_resize(PixelSize::new(w, h).unwrap(), &spec);
        assert_eq!(r(28, 28), PixelSize::new(28, 28).unwrap());
        assert_eq!(r(2800, 2800), PixelSize::new(952, 952).unwrap());
        assert_eq!(r(1000, 800), PixelSize::new(1008, 812).unwrap());
        assert!(1008 * 812 <= 927_360);
    }

    #[test]
    fn square_downscale_matches_exhaustive_oracle() {
        let spec = ResizeSpec::default();
        let size = PixelSize::new(2800, 2800).unwrap();
        assert_eq!(brute_force_resize(size, &spec), PixelSize::new(952, 952).unwrap());
        assert_eq!(smart_resize(size, &spec), brute_force_resize(size, &spec));
    }

    #[test]
    fn extreme_aspect_stays_in_budget() {
        let spec = ResizeSpec::new(28 * 28 * 4, 28).unwrap();
        let out = smart_resize(PixelSize::new(1, 100_000).unwrap(), &spec);
        assert!(out.area() <= spec.pixel_budget);
        assert_eq!(out.width % 28, 0);
        assert_eq!(out.height % 28, 0);
    }

    #[test]
    fn resize_spec_validation() {
        assert!(ResizeSpec::new(100, 28).is_err());
        assert!(ResizeSpec::new(100, 0).is_err());
        assert!(ResizeSpec::new(784, 28).is_ok());
    }

    #[test]
    fn clamp_examples() {
        assert_eq!(clamp_point(0.5, 0.5).unwrap(), pt(0.5, 0.5));
        assert_eq!(clamp_point(1.2, -0.1).unwrap(), pt(1.0, 0.0));
        assert!(matches!(
            clamp_point(f64::NAN, 0.3),
            Err(GeomError::InvalidCoordinate(_))
        ));
        assert!(clamp_point(f64::INFINITY, 0.3).is_err());
    }

    #[test]
    fn point_in_box_examples() {
        assert!(point_in_box(&pt(0.7, 0.7), &bx()));
        assert!(point_in_box(&pt(0.6, 0.6), &bx()));
        assert!(!point_in_box(&pt(0.5, 0.7), &bx()));
    }

    #[test]
    fn deviation_examples() {
        assert_eq!(deviation(&pt(0.7, 0.7), &bx()), 0.0);
        assert!((deviation(&pt(0.5, 0.5), &bx()) - 0.141_421_356).abs() < 1e-6);
        assert!((deviation(&pt(0.7, 0.5), &bx()) - 0.1).abs() < 1e-12);
        assert!(
            (deviation_with(&pt(0.5, 0.45), &bx(), DistanceMetric::Chebyshev) - 0.15).abs() < 1e-12
        );
    }

    #[test]
    fn box_rejects_degenerate_and_out_of_range() {
        assert!(NormBox::new(0.5, 0.1, 0.5, 0.2).is_err());
        assert!(NormBox::new(0.1, 0.1, 1.2, 0.2).is_err());
        assert!(NormPoint::new(1.5, 0.1).is_err());
    }

    #[test]
    fn crop_window_examples() {
        let image = PixelSize::new(1000, 800).unwrap();
        let w = crop_window(&pt(0.5, 0.5), image, 2.0).unwrap();
        assert_eq!((w.origin_x, w.origin_y, w.width, w.height), (250, 200, 500, 400));
        let w = crop_window(&pt(0.0, 0.0), image, 2.0).unwrap();
        assert_eq!((w.origin_x, w.origin_y, w.width, w.height), (0, 0, 500, 400));
        let w = crop_window(&pt(0.9, 0.9), image, 4.0).unwrap();
        assert_eq!((w.origin_x, w.origin_y, w.width, w.height), (750, 600, 250, 200));
        assert_eq!(w.zoom_k, 4.0);
        assert!(matches!(
            crop_window(&pt(0.5, 0.5), image, 1.0),
            Err(GeomError::InvalidZoom(_))
        ));
        assert!(crop_window(&pt(0.5, 0.5), image, f64::NAN).is_err());
    }

    #[test]
    fn crop_window_tiny_image() {
        let image = PixelSize::new(1, 1).unwrap();
        let w = crop_window(&pt(0.9, 0.1), image, 3.0).unwrap();
        assert_eq!((w.origin_x, w.origin_y, w.width, w.height), (0, 0, 1, 1));
    }

    #[test]
    fn remap_examples() {
        let image = PixelSize::new(1000, 800).unwrap();
        let centered = CropWindow {
            origin_x: 250,
            origin_y: 200,
            width: 500,
            height: 400,
            zoom_k: 2.0,
        };
        assert_eq!(local_to_global(&pt(0.5, 0.5), &centered, image), pt(0.5, 0.5));
        assert_eq!(local_to_global(&pt(0.0, 0.0), &centered, image), pt(0.25, 0.25));
        let corner = CropWindow {
            origin_x: 750,
            origin_y: 600,
            width: 250,
            height: 200,
            zoom_k: 4.0,
        };
        assert_eq!(local_to_global(&pt(1.0, 1.0), &corner, image), pt(1.0, 1.0));

        assert_eq!(global_to_local(&pt(0.5, 0.5), &centered, image).unwrap(), pt(0.5, 0.5));
        assert_eq!(global_to_local(&pt(0.25, 0.25), &centered, image).unwrap(), pt(0.0, 0.0));
        assert!(matches!(
            global_to_local(&pt(0.9, 0.9), &centered, image),
            Err(GeomError::OutOfWindow { .. })
        ));
    }

    #[test]
    fn box_to_local_clips() {
        let image = PixelSize::new(1000, 800).unwrap();
        let window = CropWindow {
            origin_x: 250,
            origin_y: 200,
            width: 500,
            height: 400,
            zoom_k: 2.0,
        };
        let inside = NormBox::new(0.4, 0.4, 0.6, 0.6).unwrap();
        let local = box_to_local(&inside, &window, image).unwrap();
        assert!((local.x_min() - 0.3).abs() < 1e-12 && (local.x_max() - 0.7).abs() < 1e-12);
        let straddling = NormBox::new(0.7, 0.7, 0.9, 0.9).unwrap();
        let local = box_to_local(&straddling, &window, image).unwrap();
        assert!((local.x_max() - 1.0).abs() < 1e-12);
        let outside = NormBox::new(0.8, 0.8, 0.9, 0.9).unwrap();
        assert!(box_to_local(&outside, &window, image).is_none());
    }
}
