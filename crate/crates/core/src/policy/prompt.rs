//! Prompt assembly for grounding and planning queries.

use std::collections::BTreeMap;
use std::path::{Path, PathBuf};

use serde::{Deserialize, Serialize};

use super::{Instruction, Observation, PolicyError, PolicyMode};
use crate::action::{serialize_action, Action};

/// Number of most recent history steps whose screenshots are kept.
pub const HISTORY_SCREENSHOTS: usize = 4;

const GROUNDING_TEMPLATE: &str = include_str!("../../templates/grounding.toml");
const PLANNING_TEMPLATE: &str = include_str!("../../templates/planning.toml");

#[derive(Debug, Clone, PartialEq, Eq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct PromptTemplate {
    pub system: String,
    /// Wraps the instruction text; rendered only for text-bearing modalities.
    pub instruction: String,
    /// Shown alongside the audio part for spoken instructions.
    pub speech_cue: String,
    /// Stands in for history screenshots older than [`HISTORY_SCREENSHOTS`].
    pub history_omitted: String,
}

impl PromptTemplate {
    pub fn from_toml_str(s: &str) -> Result<Self, PolicyError> {
        toml::from_str(s).map_err(|e| PolicyError::TemplateError(e.to_string()))
    }

    pub fn from_file(path: &Path) -> Result<Self, PolicyError> {
        let s = std::fs::read_to_string(path).map_err(|source| PolicyError::Io {
            path: path.to_path_buf(),
            source,
        })?;
        Self::from_toml_str(&s)
    }

    /// Shipped default (non-canonical) template for a mode.
    pub fn default_for(mode: PolicyMode) -> Self {
        let src = match mode {
            PolicyMode::Grounding => GROUNDING_TEMPLATE,
            PolicyMode::Planning => PLANNING_TEMPLATE,
        };
        Self::from_toml_str(src).expect("bundled template parses")
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum Role {
    User,
    Assistant,
}

#[derive(Debug, Clone, PartialEq, Eq, Serialize, Deserialize)]
#[serde(tag = "type", rename_all = "snake_case")]
pub enum ContentPart {
    Text { text: String },
    /// The instruction text itself (sent as plain text on the wire).
    Instruction { text: String },
    Image { path: PathBuf },
    /// Spoken instruction audio.
    Audio { path: PathBuf },
}

#[derive(Debug, Clone, PartialEq, Eq, Serialize, Deserialize)]
pub struct Turn {
    pub role: Role,
    pub parts: Vec<ContentPart>,
}

#[derive(Debug, Clone, PartialEq, Eq, Serialize, Deserialize)]
pub struct PromptBundle {
    pub system_text: String,
    pub turns: Vec<Turn>,
}

impl PromptBundle {
    pub fn parts(&self) -> impl Iterator<Item = &ContentPart> {
        self.turns.iter().flat_map(|t| t.parts.iter())
    }

    pub fn count_audio(&self) -> usize {
        self.parts().filter(|p| matches!(p, ContentPart::Audio { .. })).count()
    }

    pub fn count_instruction_text(&self) -> usize {
        self.parts()
            .filter(|p| matches!(p, ContentPart::Instruction { .. }))
            .count()
    }

    pub fn count_images(&self) -> usize {
        self.parts().filter(|p| matches!(p, ContentPart::Image { .. })).count()
    }

    /// Roles alternate starting with the user, and the last turn is the user's.
    pub fn is_well_formed(&self) -> bool {
        !self.turns.is_empty()
            && self.turns.iter().enumerate().all(|(i, t)| {
                t.role
                    == if i % 2 == 0 {
                        Role::User
                    } else {
                        Role::Assistant
                    }
            })
            && self.turns.last().is_some_and(|t| t.role == Role::User)
    }
}

/// Substitute `{name}` placeholders; `{{` and `}}` are literal braces.
pub fn render(template: &str, values: &BTreeMap<&str, String>) -> Result<String, PolicyError> {
    let mut out = String::with_capacity(template.len());
    let mut chars = template.chars().peekable();
    while let Some(c) = chars.next() {
        match c {
            '{' if chars.peek() == Some(&'{') => {
                chars.next();
                out.push('{');
            }
            '}' if chars.peek() == Some(&'}') => {
                chars.next();
                out.push('}');
            }
            '{' => {
                let mut name = String::new();
                loop {
                    match chars.next() {
                        Some('}') => break,
                        Some(c) => name.push(c),
                        None => return Err(PolicyError::TemplateError(format!("unclosed placeholder `{{{name}`"))),
                    }
                }
                let value = values
                    .get(name.as_str())
                    .ok_or_else(|| PolicyError::TemplateError(format!("no value for placeholder `{{{name}}}`")))?;
                out.push_str(value);
            }
            '}' => return Err(PolicyError::TemplateError("unmatched `}`".into())),
            c => out.push(c),
        }
    }
    Ok(out)
}

/// Build the request for one query.
///
/// Prior steps appear as user/assistant turn pairs (screenshot, action
/// text); only the last [`HISTORY_SCREENSHOTS`] keep their image. The final
/// user turn carries the current screenshot and the instruction: text as an
/// instruction part, speech as a single audio part with no instruction text.
pub fn assemble_prompt(
    instruction: &Instruction,
    current: &Observation,
    history: &[(Observation, Action)],
    mode: PolicyMode,
    template: &PromptTemplate,
) -> Result<PromptBundle, PolicyError> {
    if mode == PolicyMode::Grounding && !history.is_empty() {
        return Err(PolicyError::InvalidQuery("grounding prompts take no history".into()));
    }
    let base = |step: u32| -> BTreeMap<&str, String> {
        BTreeMap::from([
            ("width", current.size.width.to_string()),
            ("height", current.size.height.to_string()),
            ("step", step.to_string()),
        ])
    };

    let system_text = render(&template.system, &base(current.step_index))?;
    let mut turns = Vec::with_capacity(history.len() * 2 + 1);
    let keep_from = history.len().saturating_sub(HISTORY_SCREENSHOTS);
    for (i, (obs, action)) in history.iter().enumerate() {
        let shown = if i >= keep_from {
            ContentPart::Image {
                path: obs.screenshot_ref.clone(),
            }
        } else {
            ContentPart::Text {
                text: render(&template.history_omitted, &base(obs.step_index))?,
            }
        };
        turns.push(Turn {
            role: Role::User,
            parts: vec![shown],
        });
        turns.push(Turn {
            role: Role::Assistant,
            parts: vec![ContentPart::Text {
                text: serialize_action(action).as_str().to_string(),
            }],
        });
    }

    let mut parts = vec![ContentPart::Image {
        path: current.screenshot_ref.clone(),
    }];
    let modality = instruction.modality();
    if modality.has_audio() {
        let path = instruction
            .audio_ref()
            .ok_or_else(|| PolicyError::TemplateError("speech instruction without audio".into()))?;
        parts.push(ContentPart::Audio { path: path.clone() });
        if !modality.has_text() {
            parts.push(ContentPart::Text {
                text: render(&template.speech_cue, &base(current.step_index))?,
            });
        }
    }
    if modality.has_text() {
        let text = instruction
            .text_content()
            .ok_or_else(|| PolicyError::TemplateError("no value for placeholder `{instruction}`".into()))?;
        let mut values = base(current.step_index);
        values.insert("instruction", text.to_string());
        parts.push(ContentPart::Instruction {
            text: render(&template.instruction, &values)?,
        });
    }
    turns.push(Turn {
        role: Role::User,
        parts,
    });

    Ok(PromptBundle { system_text, turns })
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::geom::{NormPoint, PixelSize};

    fn obs(step: u32) -> Observation {
        Observation {
            screenshot_ref: PathBuf::from(format!("shot{step}.png")),
            size: PixelSize::new(1080, 2400).unwrap(),
            step_index: step,
        }
    }

    fn click() -> Action {
        Action::Click {
            point: NormPoint::new(0.25, 0.5).unwrap(),
        }
    }

    #[test]
    fn speech_has_one_audio_and_no_instruction_text() {
        let ins = Instruction::speech("a.wav", Some("open settings".into()));
        let t = PromptTemplate::default_for(PolicyMode::Grounding);
        let b = assemble_prompt(&ins, &obs(1), &[], PolicyMode::Grounding, &t).unwrap();
        assert_eq!(b.count_audio(), 1);
        assert_eq!(b.count_instruction_text(), 0);
        assert!(!b.parts().any(|p| matches!(p, ContentPart::Text { text } if text.contains("open settings"))));
        assert!(b.is_well_formed());
    }

    #[test]
    fn text_has_no_audio() {
        let ins = Instruction::text("open settings");
        let t = PromptTemplate::default_for(PolicyMode::Grounding);
        let b = assemble_prompt(&ins, &obs(1), &[], PolicyMode::Grounding, &t).unwrap();
        assert_eq!(b.count_audio(), 0);
        assert_eq!(b.count_instruction_text(), 1);
        assert_eq!(b.count_images(), 1);
    }

    #[test]
    fn both_modality_carries_both() {
        let ins = Instruction::new(Some("x".into()), Some("a.wav".into()), crate::policy::Modality::Both).unwrap();
        let t = PromptTemplate::default_for(PolicyMode::Planning);
        let b = assemble_prompt(&ins, &obs(1), &[], PolicyMode::Planning, &t).unwrap();
        assert_eq!((b.count_audio(), b.count_instruction_text()), (1, 1));
    }

    #[test]
    fn history_renders_prior_action_turns_in_order() {
        let ins = Instruction::text("do it");
        let t = PromptTemplate::default_for(PolicyMode::Planning);
        let history = vec![(obs(1), click()), (obs(2), Action::PressBack)];
        let b = assemble_prompt(&ins, &obs(3), &history, PolicyMode::Planning, &t).unwrap();
        let assistant: Vec<_> = b
            .turns
            .iter()
            .filter(|t| t.role == Role::Assistant)
            .map(|t| t.parts.clone())
            .collect();
        assert_eq!(
            assistant,
            vec![
                vec![ContentPart::Text {
                    text: "click(x=0.2500, y=0.5000)".into()
                }],
                vec![ContentPart::Text {
                    text: "press_back()".into()
                }],
            ]
        );
        assert!(b.is_well_formed());
        assert_eq!(b.count_images(), 3);
    }

    #[test]
    fn old_screenshots_are_dropped() {
        let ins = Instruction::text("do it");
        let t = PromptTemplate::default_for(PolicyMode::Planning);
        let history: Vec<_> = (1..=6).map(|i| (obs(i), Action::Wait)).collect();
        let b = assemble_prompt(&ins, &obs(7), &history, PolicyMode::Planning, &t).unwrap();
        assert_eq!(b.count_images(), HISTORY_SCREENSHOTS + 1);
        assert_eq!(
            b.turns[0].parts,
            vec![ContentPart::Text {
                text: "Screenshot of step 1 omitted.".into()
            }]
        );
        assert_eq!(b.turns.iter().filter(|t| t.role == Role::Assistant).count(), 6);
    }

    #[test]
    fn missing_placeholder_is_template_error() {
        let mut t = PromptTemplate::default_for(PolicyMode::Grounding);
        t.system = "Screen is {width}x{height}; goal {instruction}".into();
        let err = assemble_prompt(&Instruction::text("x"), &obs(1), &[], PolicyMode::Grounding, &t).unwrap_err();
        assert!(matches!(err, PolicyError::TemplateError(_)));
        t.system = "unclosed {width".into();
        assert!(assemble_prompt(&Instruction::text("x"), &obs(1), &[], PolicyMode::Grounding, &t).is_err());
    }

    #[test]
    fn render_escapes_braces() {
        let values = BTreeMap::from([("a", "1".to_string())]);
        assert_eq!(render("{{a}} = {a}", &values).unwrap(), "{a} = 1");
    }

    #[test]
    fn grounding_rejects_history() {
        let t = PromptTemplate::default_for(PolicyMode::Grounding);
        let r = assemble_prompt(&Instruction::text("x"), &obs(2), &[(obs(1), click())], PolicyMode::Grounding, &t);
        assert!(matches!(r, Err(PolicyError::InvalidQuery(_))));
    }
}
