//! The policy model behind an abstract backend.
//!
//! A backend maps (history, instruction, current observation) to the next
//! action. Two implementations ship: [`mock::MockOracle`], a seeded oracle
//! that knows the ground truth and injects controlled errors, and
//! [`remote::RemoteBackend`], which speaks a chat-completions wire format to
//! any multimodal model server.

pub mod mock;
pub mod prompt;
pub mod remote;
pub mod stub;

use std::path::PathBuf;

use serde::{Deserialize, Serialize};
use thiserror::Error;

use crate::action::{Action, ActionError, ActionText};
use crate::geom::{CropWindow, PixelSize};

pub use prompt::{assemble_prompt, ContentPart, PromptBundle, PromptTemplate, Role, Turn};

#[derive(Debug, Error)]
pub enum PolicyError {
    #[error("backend unavailable: {0}")]
    BackendUnavailable(String),
    #[error("backend rejected request (HTTP {status}): {body}")]
    BackendRejected { status: u16, body: String },
    #[error("unparsable model output `{raw}`: {source}")]
    MalformedAction {
        raw: String,
        #[source]
        source: ActionError,
    },
    #[error("template error: {0}")]
    TemplateError(String),
    #[error("invalid query: {0}")]
    InvalidQuery(String),
    #[error("no ground truth registered for query `{0}`")]
    UnknownQuery(String),
    #[error("target is not visible in the crop window")]
    TargetLost,
    #[error("i/o error on {path}: {source}")]
    Io {
        path: PathBuf,
        #[source]
        source: std::io::Error,
    },
}

impl PolicyError {
    /// Transport-level failures, as opposed to per-query problems.
    pub fn is_transport(&self) -> bool {
        matches!(self, PolicyError::BackendUnavailable(_))
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash, PartialOrd, Ord, Serialize, Deserialize, Default)]
#[serde(rename_all = "snake_case")]
pub enum Modality {
    #[default]
    Text,
    Speech,
    Both,
}

impl Modality {
    pub fn as_str(&self) -> &'static str {
        match self {
            Modality::Text => "text",
            Modality::Speech => "speech",
            Modality::Both => "both",
        }
    }

    pub fn has_text(&self) -> bool {
        matches!(self, Modality::Text | Modality::Both)
    }

    pub fn has_audio(&self) -> bool {
        matches!(self, Modality::Speech | Modality::Both)
    }
}

/// A user instruction in text form, spoken form, or both.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(try_from = "RawInstruction")]
pub struct Instruction {
    text: Option<String>,
    audio_ref: Option<PathBuf>,
    modality: Modality,
}

#[derive(Deserialize)]
struct RawInstruction {
    #[serde(default)]
    text: Option<String>,
    #[serde(default)]
    audio_ref: Option<PathBuf>,
    modality: Modality,
}

impl TryFrom<RawInstruction> for Instruction {
    type Error = String;

    fn try_from(raw: RawInstruction) -> Result<Self, Self::Error> {
        Instruction::new(raw.text, raw.audio_ref, raw.modality)
    }
}

impl Instruction {
    pub fn new(text: Option<String>, audio_ref: Option<PathBuf>, modality: Modality) -> Result<Self, String> {
        if modality.has_text() && text.is_none() {
            return Err(format!("{} instruction requires text", modality.as_str()));
        }
        if modality.has_audio() && audio_ref.is_none() {
            return Err(format!("{} instruction requires audio_ref", modality.as_str()));
        }
        Ok(Self {
            text,
            audio_ref,
            modality,
        })
    }

    pub fn text(text: impl Into<String>) -> Self {
        Self {
            text: Some(text.into()),
            audio_ref: None,
            modality: Modality::Text,
        }
    }

    /// Spoken instruction; the transcript is kept for bookkeeping only and
    /// never shown to the model.
    pub fn speech(audio_ref: impl Into<PathBuf>, transcript: Option<String>) -> Self {
        Self {
            text: transcript,
            audio_ref: Some(audio_ref.into()),
            modality: Modality::Speech,
        }
    }

    pub fn modality(&self) -> Modality {
        self.modality
    }

    pub fn text_content(&self) -> Option<&str> {
        self.text.as_deref()
    }

    pub fn audio_ref(&self) -> Option<&PathBuf> {
        self.audio_ref.as_ref()
    }

    /// Transcript length in characters (0 when unknown).
    pub fn len_chars(&self) -> usize {
        self.text.as_deref().map_or(0, |t| t.chars().count())
    }
}

/// One screenshot the agent sees.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct Observation {
    pub screenshot_ref: PathBuf,
    pub size: PixelSize,
    pub step_index: u32,
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum PolicyMode {
    /// Locate one element; the answer is always a click.
    Grounding,
    /// Choose the next action given a task and history.
    Planning,
}

/// Set on second-step queries whose observation is an enlarged crop.
#[derive(Debug, Clone, Copy, PartialEq)]
pub struct CropContext {
    pub window: CropWindow,
    pub source_size: PixelSize,
}

/// Everything a backend may use to answer one query.
#[derive(Debug, Clone, Copy)]
pub struct PolicyQuery<'a> {
    /// Stable identity of the query (sample id or `episode#step`); mock
    /// backends derive their randomness from it.
    pub query_id: &'a str,
    pub history: &'a [(Observation, Action)],
    pub instruction: &'a Instruction,
    pub current: &'a Observation,
    pub mode: PolicyMode,
    pub crop: Option<CropContext>,
}

#[derive(Debug, Clone, PartialEq)]
pub struct Prediction {
    pub raw: ActionText,
    pub action: Action,
}

pub trait PolicyBackend: Send + Sync {
    fn predict(&self, query: &PolicyQuery<'_>) -> Result<Prediction, PolicyError>;

    /// Short identifier echoed into reports.
    fn name(&self) -> &str;
}

/// Query a backend, enforcing the grounding-mode contract: no history in
/// the request and a click in the answer.
pub fn predict(backend: &dyn PolicyBackend, query: &PolicyQuery<'_>) -> Result<Prediction, PolicyError> {
    if query.mode == PolicyMode::Grounding && !query.history.is_empty() {
        return Err(PolicyError::InvalidQuery("grounding queries take no history".into()));
    }
    let prediction = backend.predict(query)?;
    if query.mode == PolicyMode::Grounding && !matches!(prediction.action, Action::Click { .. }) {
        return Err(PolicyError::MalformedAction {
            raw: prediction.raw.as_str().to_string(),
            source: ActionError::MalformedAction(format!(
                "grounding answer must be a click, got `{}`",
                prediction.raw
            )),
        });
    }
    Ok(prediction)
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn instruction_modality_invariants() {
        assert!(Instruction::new(None, Some("a.wav".into()), Modality::Text).is_err());
        assert!(Instruction::new(Some("x".into()), None, Modality::Speech).is_err());
        assert!(Instruction::new(Some("x".into()), None, Modality::Both).is_err());
        assert!(Instruction::new(Some("x".into()), Some("a.wav".into()), Modality::Both).is_ok());
        let bad: Result<Instruction, _> = serde_json::from_str(r#"{"modality":"speech","text":"hi"}"#);
        assert!(bad.is_err());
    }

    #[test]
    fn len_counts_chars_not_bytes() {
        assert_eq!(Instruction::text("héllo").len_chars(), 5);
    }
}
