//! Two-step grounding refinement for click predictions.
//!
//! The first answer on the full screenshot picks a region. A window of
//! `1/k` the screenshot size is cropped around it, enlarged `k` times and
//! shown to the policy again. The second, window-local answer is mapped
//! back to screen coordinates.

use std::path::{Path, PathBuf};
use std::sync::atomic::{AtomicUsize, Ordering};

use image::imageops::FilterType;
use serde::{Deserialize, Serialize};
use thiserror::Error;

use crate::geom::{crop_window, local_to_global, CropWindow, GeomError, NormPoint, PixelSize};
use crate::policy::{predict, CropContext, Instruction, Observation, PolicyBackend, PolicyError, PolicyMode, PolicyQuery};
use crate::seed::derive_seed;

#[derive(Debug, Error)]
pub enum ImageError {
    #[error("cannot read image {path}: {message}")]
    Unreadable { path: PathBuf, message: String },
    #[error("cannot write image {path}: {message}")]
    Unwritable { path: PathBuf, message: String },
    #[error("crop window {window:?} exceeds image {size:?}")]
    WindowOutside { window: CropWindow, size: PixelSize },
}

#[derive(Debug, Error)]
pub enum RefineError {
    #[error("first-step prediction failed: {0}")]
    FirstStep(#[source] PolicyError),
    #[error("refinement failed: {0}")]
    RefineFailed(String),
    #[error("invalid refine config: {0}")]
    Config(String),
}

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
#[serde(default, deny_unknown_fields)]
pub struct RefineConfig {
    pub k: f64,
    pub enabled: bool,
    pub fallback_on_error: bool,
    /// Zoom rounds after the first prediction. Round `n` crops around the
    /// latest estimate at zoom `k^n`.
    pub max_rounds: u32,
}

impl Default for RefineConfig {
    fn default() -> Self {
        Self {
            k: 2.0,
            enabled: true,
            fallback_on_error: true,
            max_rounds: 1,
        }
    }
}

impl RefineConfig {
    pub fn disabled() -> Self {
        Self {
            enabled: false,
            ..Self::default()
        }
    }

    pub fn validate(&self) -> Result<(), RefineError> {
        if !(self.k.is_finite() && self.k > 1.0) {
            return Err(RefineError::Config(format!("k must be > 1, got {}", self.k)));
        }
        if self.max_rounds == 0 {
            return Err(RefineError::Config("max_rounds must be >= 1".into()));
        }
        Ok(())
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct RefineTrace {
    pub first_point: NormPoint,
    /// Window of the last completed round; `None` when refinement was off.
    pub window: Option<CropWindow>,
    pub second_local: Option<NormPoint>,
    pub final_point: NormPoint,
    pub fell_back: bool,
    pub rounds: u32,
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub fallback_reason: Option<String>,
}

/// Produces enlarged crops of screenshots.
pub trait ImageService: Send + Sync {
    fn crop_and_enlarge(&self, source: &Observation, window: &CropWindow) -> Result<Observation, ImageError>;
}

/// Pixel size of a window enlarged by its zoom factor.
pub fn enlarged_size(window: &CropWindow) -> PixelSize {
    let scale = |v: u32| ((f64::from(v) * window.zoom_k).round() as u32).max(1);
    PixelSize {
        width: scale(window.width),
        height: scale(window.height),
    }
}

fn check_window(window: &CropWindow, size: PixelSize) -> Result<(), ImageError> {
    let fits = window.width > 0
        && window.height > 0
        && window.origin_x.checked_add(window.width).is_some_and(|r| r <= size.width)
        && window.origin_y.checked_add(window.height).is_some_and(|b| b <= size.height);
    if fits {
        Ok(())
    } else {
        Err(ImageError::WindowOutside { window: *window, size })
    }
}

/// Crops real image files with bilinear enlargement and writes PNGs into
/// `out_dir`.
pub struct FsImageService {
    out_dir: PathBuf,
}

static TMP_COUNTER: AtomicUsize = AtomicUsize::new(0);

impl FsImageService {
    pub fn new(out_dir: impl Into<PathBuf>) -> Self {
        Self { out_dir: out_dir.into() }
    }

    fn output_path(&self, source: &Path, window: &CropWindow) -> PathBuf {
        let stem = source.file_stem().and_then(|s| s.to_str()).unwrap_or("image");
        let tag = derive_seed(0, &[&source.to_string_lossy()]);
        self.out_dir.join(format!(
            "{stem}-{tag:016x}-{}_{}_{}x{}-k{}.png",
            window.origin_x, window.origin_y, window.width, window.height, window.zoom_k
        ))
    }
}

impl ImageService for FsImageService {
    fn crop_and_enlarge(&self, source: &Observation, window: &CropWindow) -> Result<Observation, ImageError> {
        let path = &source.screenshot_ref;
        let img = image::open(path).map_err(|e| ImageError::Unreadable {
            path: path.clone(),
            message: e.to_string(),
        })?;
        let actual = PixelSize {
            width: img.width(),
            height: img.height(),
        };
        check_window(window, actual)?;
        let out_size = enlarged_size(window);
        let cropped = img.crop_imm(window.origin_x, window.origin_y, window.width, window.height);
        let enlarged = cropped.resize_exact(out_size.width, out_size.height, FilterType::Triangle);

        let out = self.output_path(path, window);
        let unwritable = |message: String| ImageError::Unwritable {
            path: out.clone(),
            message,
        };
        std::fs::create_dir_all(&self.out_dir).map_err(|e| unwritable(e.to_string()))?;
        let tmp = out.with_extension(format!(
            "{}-{}.tmp.png",
            std::process::id(),
            TMP_COUNTER.fetch_add(1, Ordering::Relaxed)
        ));
        enlarged
            .save_with_format(&tmp, image::ImageFormat::Png)
            .map_err(|e| unwritable(e.to_string()))?;
        std::fs::rename(&tmp, &out).map_err(|e| unwritable(e.to_string()))?;
        Ok(Observation {
            screenshot_ref: out,
            size: out_size,
            step_index: source.step_index,
        })
    }
}

/// Computes crop geometry without touching pixels, for backends that never
/// look at the image (the mock oracle).
#[derive(Debug, Clone, Copy, Default)]
pub struct VirtualImageService;

impl ImageService for VirtualImageService {
    fn crop_and_enlarge(&self, source: &Observation, window: &CropWindow) -> Result<Observation, ImageError> {
        check_window(window, source.size)?;
        Ok(Observation {
            screenshot_ref: PathBuf::from(format!(
                "{}#crop={},{},{}x{}@{}",
                source.screenshot_ref.display(),
                window.origin_x,
                window.origin_y,
                window.width,
                window.height,
                window.zoom_k
            )),
            size: enlarged_size(window),
            step_index: source.step_index,
        })
    }
}

/// What the policy is grounding.
#[derive(Debug, Clone, Copy)]
pub struct GroundingRequest<'a> {
    pub query_id: &'a str,
    pub instruction: &'a Instruction,
    pub observation: &'a Observation,
}

/// Full two-step grounding: a first prediction on the screenshot followed
/// by refinement around it.
pub fn refine_click(
    policy: &dyn PolicyBackend,
    images: &dyn ImageService,
    request: &GroundingRequest<'_>,
    cfg: &RefineConfig,
) -> Result<RefineTrace, RefineError> {
    cfg.validate()?;
    let query = PolicyQuery {
        query_id: request.query_id,
        history: &[],
        instruction: request.instruction,
        current: request.observation,
        mode: PolicyMode::Grounding,
        crop: None,
    };
    let first = predict(policy, &query).map_err(RefineError::FirstStep)?;
    let first_point = first
        .action
        .point()
        .ok_or_else(|| RefineError::FirstStep(PolicyError::InvalidQuery("first step did not click".into())))?;
    refine_point(policy, images, request, first_point, cfg)
}

fn zoom_round(
    policy: &dyn PolicyBackend,
    images: &dyn ImageService,
    request: &GroundingRequest<'_>,
    around: &NormPoint,
    zoom: f64,
) -> Result<(CropWindow, NormPoint, NormPoint), String> {
    let size = request.observation.size;
    let window = crop_window(around, size, zoom).map_err(|e: GeomError| e.to_string())?;
    let crop_obs = images
        .crop_and_enlarge(request.observation, &window)
        .map_err(|e| e.to_string())?;
    let query = PolicyQuery {
        query_id: request.query_id,
        history: &[],
        instruction: request.instruction,
        current: &crop_obs,
        mode: PolicyMode::Grounding,
        crop: Some(CropContext {
            window,
            source_size: size,
        }),
    };
    let answer = predict(policy, &query).map_err(|e| e.to_string())?;
    let local = answer.action.point().ok_or("second step did not click")?;
    Ok((window, local, local_to_global(&local, &window, size)))
}

/// Refine an existing first-step click at `first_point`.
pub fn refine_point(
    policy: &dyn PolicyBackend,
    images: &dyn ImageService,
    request: &GroundingRequest<'_>,
    first_point: NormPoint,
    cfg: &RefineConfig,
) -> Result<RefineTrace, RefineError> {
    cfg.validate()?;
    let mut trace = RefineTrace {
        first_point,
        window: None,
        second_local: None,
        final_point: first_point,
        fell_back: false,
        rounds: 0,
        fallback_reason: None,
    };
    if !cfg.enabled {
        return Ok(trace);
    }
    for round in 1..=cfg.max_rounds {
        let zoom = cfg.k.powi(round as i32);
        match zoom_round(policy, images, request, &trace.final_point, zoom) {
            Ok((window, local, global)) => {
                trace.window = Some(window);
                trace.second_local = Some(local);
                trace.final_point = global;
                trace.rounds = round;
            }
            Err(why) if round == 1 => {
                if !cfg.fallback_on_error {
                    return Err(RefineError::RefineFailed(why));
                }
                trace.fell_back = true;
                trace.fallback_reason = Some(why);
                return Ok(trace);
            }
            // Later rounds keep the last successful estimate.
            Err(_) => break,
        }
    }
    Ok(trace)
}
