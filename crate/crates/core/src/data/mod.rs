//! Grounding datasets: JSONL manifests, target unification, modality
//! mixing, benchmark step sampling and speech synthesis.
//!
//! ## Manifest format
//!
//! One JSON object per line, keys in sorted order, coordinates rounded to
//! 6 decimals. Grounding sample fields:
//!
//! | field              | type                                  | required |
//! |--------------------|---------------------------------------|----------|
//! | `id`               | string, unique, non-empty             | yes      |
//! | `image_path`       | path, relative to the image root      | yes      |
//! | `instruction_text` | string                                | yes      |
//! | `audio_path`       | path, relative to the audio root      | for speech |
//! | `modality`         | `text` / `speech` / `both`            | yes      |
//! | `target_point`     | `{"x":..,"y":..}` in [0,1]             | one of   |
//! | `target_bbox`      | `{"x_min":..,"y_min":..,"x_max":..,"y_max":..}` | these |
//! | `platform`         | `mobile` / `desktop` / `web`          | yes      |
//! | `element_kind`     | `text` / `icon_widget`                | yes      |
//! | `source`           | string (originating dataset)          | yes      |
//!
//! Episode manifests hold one [`crate::agent::EpisodeRecord`] per line.

pub mod mix;
pub mod sampler;
pub mod tts;

use std::io::{BufRead, BufReader, Write};
use std::path::{Path, PathBuf};

use serde::de::DeserializeOwned;
use serde::{Deserialize, Serialize};
use serde_json::Value;
use thiserror::Error;

use crate::geom::{NormBox, NormPoint};
use crate::policy::Modality;

pub use mix::{apply_plan, mix_modalities, mix_modalities_stratified, speech_count, MixPlan, DEFAULT_SPEECH_FRACTION};
pub use sampler::{sample_steps, StepRef, DEFAULT_SAMPLE_N};

#[derive(Debug, Error)]
pub enum DataError {
    #[error("manifest line {line}: {message}")]
    Manifest { line: usize, message: String },
    #[error("i/o error on {path}: {source}")]
    Io {
        path: PathBuf,
        #[source]
        source: std::io::Error,
    },
    #[error("sample {0} has neither target_point nor target_bbox")]
    MissingTarget(String),
    #[error("requested {requested} steps but only {available} exist")]
    InsufficientSteps { available: usize, requested: usize },
    #[error("duplicate sample id `{0}`")]
    DuplicateId(String),
    #[error("speech fraction must lie in [0, 1], got {0}")]
    InvalidFraction(f64),
    #[error("samples assigned speech have no audio: {}", .0.join(", "))]
    MissingAudio(Vec<String>),
}

impl DataError {
    pub(crate) fn io(path: &Path, source: std::io::Error) -> Self {
        DataError::Io {
            path: path.to_path_buf(),
            source,
        }
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash, PartialOrd, Ord, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum Platform {
    Mobile,
    Desktop,
    Web,
}

impl Platform {
    pub const ALL: [Platform; 3] = [Platform::Mobile, Platform::Desktop, Platform::Web];

    pub fn label(&self) -> &'static str {
        match self {
            Platform::Mobile => "Mobile",
            Platform::Desktop => "Desktop",
            Platform::Web => "Web",
        }
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash, PartialOrd, Ord, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum ElementKind {
    Text,
    IconWidget,
}

impl ElementKind {
    pub const ALL: [ElementKind; 2] = [ElementKind::Text, ElementKind::IconWidget];

    pub fn label(&self) -> &'static str {
        match self {
            ElementKind::Text => "Text",
            ElementKind::IconWidget => "Icon/Widget",
        }
    }
}

/// One grounding item.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(try_from = "RawSample")]
pub struct Sample {
    pub id: String,
    pub image_path: PathBuf,
    pub instruction_text: String,
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub audio_path: Option<PathBuf>,
    pub modality: Modality,
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub target_point: Option<NormPoint>,
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub target_bbox: Option<NormBox>,
    pub platform: Platform,
    pub element_kind: ElementKind,
    pub source: String,
}

#[derive(Deserialize)]
#[serde(deny_unknown_fields)]
struct RawSample {
    id: String,
    image_path: PathBuf,
    instruction_text: String,
    #[serde(default)]
    audio_path: Option<PathBuf>,
    modality: Modality,
    #[serde(default)]
    target_point: Option<NormPoint>,
    #[serde(default)]
    target_bbox: Option<NormBox>,
    platform: Platform,
    element_kind: ElementKind,
    source: String,
}

impl TryFrom<RawSample> for Sample {
    type Error = String;

    fn try_from(r: RawSample) -> Result<Self, Self::Error> {
        let s = Sample {
            id: r.id,
            image_path: r.image_path,
            instruction_text: r.instruction_text,
            audio_path: r.audio_path,
            modality: r.modality,
            target_point: r.target_point,
            target_bbox: r.target_bbox,
            platform: r.platform,
            element_kind: r.element_kind,
            source: r.source,
        };
        s.validate()?;
        Ok(s)
    }
}

impl Sample {
    pub fn validate(&self) -> Result<(), String> {
        if self.id.is_empty() {
            return Err("empty sample id".into());
        }
        if self.modality.has_audio() && self.audio_path.is_none() {
            return Err(format!("sample {}: {} modality requires audio_path", self.id, self.modality.as_str()));
        }
        Ok(())
    }

    pub fn instruction_len_chars(&self) -> usize {
        self.instruction_text.chars().count()
    }
}

/// Give every sample a point target; box-only samples get the box center
/// and keep the box for scoring.
pub fn unify_target(sample: Sample) -> Result<Sample, DataError> {
    match (sample.target_point, sample.target_bbox) {
        (Some(_), _) => Ok(sample),
        (None, Some(b)) => Ok(Sample {
            target_point: Some(b.center()),
            ..sample
        }),
        (None, None) => Err(DataError::MissingTarget(sample.id)),
    }
}

fn round6(v: &mut Value) {
    match v {
        Value::Number(n) if !(n.is_i64() || n.is_u64()) => {
            if let Some(f) = n.as_f64() {
                let r = (f * 1e6).round() / 1e6;
                if let Some(num) = serde_json::Number::from_f64(if r == 0.0 { 0.0 } else { r }) {
                    *n = num;
                }
            }
        }
        Value::Array(items) => items.iter_mut().for_each(round6),
        Value::Object(map) => map.values_mut().for_each(round6),
        _ => {}
    }
}

/// One canonical manifest line (without the trailing newline).
pub fn canonical_line<T: Serialize>(item: &T) -> Result<String, serde_json::Error> {
    let mut v = serde_json::to_value(item)?;
    round6(&mut v);
    serde_json::to_string(&v)
}

/// Read a JSONL manifest; blank lines are skipped and errors carry the
/// 1-based line number.
pub fn load_jsonl<T: DeserializeOwned>(path: &Path) -> Result<Vec<T>, DataError> {
    let file = std::fs::File::open(path).map_err(|e| DataError::io(path, e))?;
    let mut out = Vec::new();
    for (i, line) in BufReader::new(file).lines().enumerate() {
        let line = line.map_err(|e| DataError::io(path, e))?;
        if line.trim().is_empty() {
            continue;
        }
        let item = serde_json::from_str(&line).map_err(|e| DataError::Manifest {
            line: i + 1,
            message: e.to_string(),
        })?;
        out.push(item);
    }
    Ok(out)
}

pub fn write_jsonl<T: Serialize>(items: &[T], path: &Path) -> Result<(), DataError> {
    if let Some(parent) = path.parent().filter(|p| !p.as_os_str().is_empty()) {
        std::fs::create_dir_all(parent).map_err(|e| DataError::io(parent, e))?;
    }
    let mut buf = Vec::new();
    for (i, item) in items.iter().enumerate() {
        let line = canonical_line(item).map_err(|e| DataError::Manifest {
            line: i + 1,
            message: e.to_string(),
        })?;
        buf.extend_from_slice(line.as_bytes());
        buf.push(b'\n');
    }
    let mut f = std::fs::File::create(path).map_err(|e| DataError::io(path, e))?;
    f.write_all(&buf).map_err(|e| DataError::io(path, e))
}

/// Load grounding samples, rejecting duplicate ids.
pub fn load_manifest(path: &Path) -> Result<Vec<Sample>, DataError> {
    let samples: Vec<Sample> = load_jsonl(path)?;
    let mut seen = std::collections::HashSet::new();
    for s in &samples {
        if !seen.insert(s.id.as_str()) {
            return Err(DataError::DuplicateId(s.id.clone()));
        }
    }
    Ok(samples)
}

pub fn write_manifest(samples: &[Sample], path: &Path) -> Result<(), DataError> {
    write_jsonl(samples, path)
}

#[cfg(test)]
mod tests {
    use super::*;

    pub(crate) fn sample(id: &str) -> Sample {
        Sample {
            id: id.into(),
            image_path: "img/a.png".into(),
            instruction_text: "open the menu".into(),
            audio_path: None,
            modality: Modality::Text,
            target_point: None,
            target_bbox: Some(NormBox::new(0.2, 0.2, 0.4, 0.6).unwrap()),
            platform: Platform::Mobile,
            element_kind: ElementKind::IconWidget,
            source: "toy".into(),
        }
    }

    #[test]
    fn unify_examples() {
        let s = unify_target(sample("a")).unwrap();
        let p = s.target_point.unwrap();
        assert!((p.x() - 0.3).abs() < 1e-12 && (p.y() - 0.4).abs() < 1e-12);
        assert!(s.target_bbox.is_some());

        let mut with_point = sample("b");
        with_point.target_point = Some(NormPoint::new(0.9, 0.9).unwrap());
        assert_eq!(unify_target(with_point.clone()).unwrap(), with_point);

        let mut none = sample("c");
        none.target_bbox = None;
        assert!(matches!(unify_target(none), Err(DataError::MissingTarget(id)) if id == "c"));
    }

    #[test]
    fn unify_is_idempotent() {
        let once = unify_target(sample("a")).unwrap();
        assert_eq!(unify_target(once.clone()).unwrap(), once);
    }

    #[test]
    fn canonical_line_sorts_keys_and_rounds() {
        let mut s = sample("a");
        s.target_point = Some(NormPoint::new(0.123_456_789, 0.5).unwrap());
        let line = canonical_line(&s).unwrap();
        assert!(line.starts_with(r#"{"element_kind":"icon_widget","id":"a","#), "{line}");
        assert!(line.contains(r#""target_point":{"x":0.123457,"y":0.5}"#), "{line}");
    }

    #[test]
    fn manifest_errors_carry_line_numbers() {
        let dir = tempfile::tempdir().unwrap();
        let path = dir.path().join("m.jsonl");
        let good = canonical_line(&sample("a")).unwrap();
        let bad_coord = good.replace(r#""x_max":0.4"#, r#""x_max":1.5"#);
        std::fs::write(&path, format!("{good}\n{bad_coord}\n")).unwrap();
        match load_manifest(&path) {
            Err(DataError::Manifest { line: 2, message }) => assert!(message.contains("coordinate out of range"), "{message}"),
            other => panic!("unexpected {other:?}"),
        }

        let no_id = good.replace(r#""id":"a","#, "");
        std::fs::write(&path, format!("{no_id}\n")).unwrap();
        match load_manifest(&path) {
            Err(DataError::Manifest { line: 1, message }) => assert!(message.contains("missing field `id`"), "{message}"),
            other => panic!("unexpected {other:?}"),
        }

        std::fs::write(&path, format!("{good}\n{good}\n")).unwrap();
        assert!(matches!(load_manifest(&path), Err(DataError::DuplicateId(_))));

        let speech = good.replace(r#""modality":"text""#, r#""modality":"speech""#);
        std::fs::write(&path, format!("{speech}\n")).unwrap();
        assert!(matches!(load_manifest(&path), Err(DataError::Manifest { line: 1, .. })));
    }

    #[test]
    fn three_sample_round_trip_is_byte_identical() {
        let dir = tempfile::tempdir().unwrap();
        let a = dir.path().join("a.jsonl");
        let b = dir.path().join("b.jsonl");
        let mut s2 = sample("two");
        s2.modality = Modality::Speech;
        s2.audio_path = Some("audio/two.wav".into());
        s2.target_point = Some(NormPoint::new(0.25, 0.75).unwrap());
        let mut s3 = sample("three");
        s3.platform = Platform::Web;
        s3.instruction_text = "quote \" and ünïcode".into();
        write_manifest(&[sample("one"), s2, s3], &a).unwrap();
        write_manifest(&load_manifest(&a).unwrap(), &b).unwrap();
        assert_eq!(std::fs::read(&a).unwrap(), std::fs::read(&b).unwrap());
    }
}
