//! Episode orchestration: the observe → predict → act loop against an
//! environment, and teacher-forced single-step prediction for offline
//! benchmark scoring.

use serde::{Deserialize, Serialize};
use thiserror::Error;

use crate::action::{Action, ActionKind, ActionText};
use crate::geom::NormBox;
use crate::policy::{predict, Instruction, Observation, PolicyBackend, PolicyError, PolicyMode, PolicyQuery};
use crate::refine::{refine_point, GroundingRequest, ImageService, RefineConfig, RefineError, RefineTrace};

pub const DEFAULT_MAX_STEPS: usize = 25;

#[derive(Debug, Error)]
pub enum AgentError {
    #[error("episode {episode_id} step {step_index} has no low-level instruction")]
    MissingAnnotation { episode_id: String, step_index: u32 },
    #[error("episode {episode_id} has no step {step_index}")]
    NoSuchStep { episode_id: String, step_index: u32 },
    #[error(transparent)]
    Policy(#[from] PolicyError),
    #[error(transparent)]
    Refine(#[from] RefineError),
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct EpisodeStep {
    pub observation: Observation,
    pub gt_action: Action,
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub gt_bbox: Option<NormBox>,
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub low_level_text: Option<String>,
}

#[derive(Debug, Clone, PartialEq, Eq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct EpisodeMeta {
    pub benchmark: String,
    pub episode_id: String,
    #[serde(default)]
    pub platform: String,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields, try_from = "RawEpisode")]
pub struct EpisodeRecord {
    pub goal: Instruction,
    pub steps: Vec<EpisodeStep>,
    pub meta: EpisodeMeta,
}

#[derive(Deserialize)]
#[serde(deny_unknown_fields)]
struct RawEpisode {
    goal: Instruction,
    steps: Vec<EpisodeStep>,
    meta: EpisodeMeta,
}

impl TryFrom<RawEpisode> for EpisodeRecord {
    type Error = String;

    fn try_from(raw: RawEpisode) -> Result<Self, Self::Error> {
        EpisodeRecord::new(raw.goal, raw.steps, raw.meta)
    }
}

impl EpisodeRecord {
    pub fn new(goal: Instruction, steps: Vec<EpisodeStep>, meta: EpisodeMeta) -> Result<Self, String> {
        if steps.is_empty() {
            return Err(format!("episode {} has no steps", meta.episode_id));
        }
        for (i, s) in steps.iter().enumerate() {
            if s.observation.step_index as usize != i + 1 {
                return Err(format!(
                    "episode {}: step {} has step_index {}",
                    meta.episode_id,
                    i + 1,
                    s.observation.step_index
                ));
            }
        }
        Ok(Self { goal, steps, meta })
    }

    pub fn id(&self) -> &str {
        &self.meta.episode_id
    }

    pub fn step(&self, step_index: u32) -> Option<&EpisodeStep> {
        step_index
            .checked_sub(1)
            .and_then(|i| self.steps.get(i as usize))
    }
}

/// Query identity of one episode step, used to key mock ground truth.
pub fn step_query_id(episode_id: &str, step_index: u32) -> String {
    format!("{episode_id}#{step_index}")
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum StepMode {
    /// Per-step low-level instruction, no history.
    Low,
    /// Episode goal plus ground-truth history of earlier steps.
    High,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct StepPrediction {
    pub episode_id: String,
    pub step_index: u32,
    pub pred: Action,
    pub raw: ActionText,
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub refine_trace: Option<RefineTrace>,
}

fn predict_and_refine(
    policy: &dyn PolicyBackend,
    images: &dyn ImageService,
    query: &PolicyQuery<'_>,
    refine_cfg: &RefineConfig,
) -> Result<(Action, ActionText, Option<RefineTrace>), AgentError> {
    let first = predict(policy, query)?;
    let (Some(point), true) = (first.action.point(), refine_cfg.enabled) else {
        return Ok((first.action, first.raw, None));
    };
    let request = GroundingRequest {
        query_id: query.query_id,
        instruction: query.instruction,
        observation: query.current,
    };
    let trace = refine_point(policy, images, &request, point, refine_cfg)?;
    Ok((first.action.with_point(trace.final_point), first.raw, Some(trace)))
}

/// Predict one benchmark step offline.
///
/// Low mode uses the step's own annotation; high mode uses the goal and the
/// ground-truth (teacher-forced) history of all earlier steps.
pub fn run_offline_step(
    policy: &dyn PolicyBackend,
    images: &dyn ImageService,
    episode: &EpisodeRecord,
    step_index: u32,
    mode: StepMode,
    refine_cfg: &RefineConfig,
) -> Result<StepPrediction, AgentError> {
    let step = episode.step(step_index).ok_or_else(|| AgentError::NoSuchStep {
        episode_id: episode.id().to_string(),
        step_index,
    })?;
    let (instruction, history): (Instruction, Vec<(Observation, Action)>) = match mode {
        StepMode::Low => {
            let text = step.low_level_text.as_ref().ok_or_else(|| AgentError::MissingAnnotation {
                episode_id: episode.id().to_string(),
                step_index,
            })?;
            (Instruction::text(text.clone()), Vec::new())
        }
        StepMode::High => (
            episode.goal.clone(),
            episode.steps[..step_index as usize - 1]
                .iter()
                .map(|s| (s.observation.clone(), s.gt_action.clone()))
                .collect(),
        ),
    };
    let query_id = step_query_id(episode.id(), step_index);
    let query = PolicyQuery {
        query_id: &query_id,
        history: &history,
        instruction: &instruction,
        current: &step.observation,
        mode: PolicyMode::Planning,
        crop: None,
    };
    let (pred, raw, refine_trace) = predict_and_refine(policy, images, &query, refine_cfg)?;
    Ok(StepPrediction {
        episode_id: episode.id().to_string(),
        step_index,
        pred,
        raw,
        refine_trace,
    })
}

/// Something the agent acts in.
pub trait Environment {
    /// Stable id used to derive per-step query ids.
    fn id(&self) -> &str;
    fn reset(&mut self) -> Result<Observation, String>;
    /// Execute `action` and return the next observation.
    fn apply(&mut self, action: &Action) -> Result<Observation, String>;
}

/// Replays a recorded episode: each applied action advances to the next
/// recorded screenshot regardless of what was done.
pub struct ReplayEnvironment {
    episode: EpisodeRecord,
    cursor: usize,
}

impl ReplayEnvironment {
    pub fn new(episode: EpisodeRecord) -> Self {
        Self { episode, cursor: 0 }
    }
}

impl Environment for ReplayEnvironment {
    fn id(&self) -> &str {
        self.episode.id()
    }

    fn reset(&mut self) -> Result<Observation, String> {
        self.cursor = 0;
        Ok(self.episode.steps[0].observation.clone())
    }

    fn apply(&mut self, _action: &Action) -> Result<Observation, String> {
        self.cursor += 1;
        self.episode
            .steps
            .get(self.cursor)
            .map(|s| s.observation.clone())
            .ok_or_else(|| format!("replay of {} exhausted after {} steps", self.episode.id(), self.cursor))
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum Termination {
    TerminateAction,
    MaxSteps,
    Error,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct RunStep {
    pub pred: Action,
    pub raw: ActionText,
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub refine_trace: Option<RefineTrace>,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct EpisodeRun {
    pub episode_id: String,
    pub steps: Vec<RunStep>,
    pub terminated_by: Termination,
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub error: Option<String>,
}

/// Run the agent loop until it terminates, runs out of steps, or fails.
pub fn run_episode(
    policy: &dyn PolicyBackend,
    images: &dyn ImageService,
    env: &mut dyn Environment,
    goal: &Instruction,
    max_steps: usize,
    refine_cfg: &RefineConfig,
) -> EpisodeRun {
    let episode_id = env.id().to_string();
    let mut run = EpisodeRun {
        episode_id: episode_id.clone(),
        steps: Vec::new(),
        terminated_by: Termination::MaxSteps,
        error: None,
    };
    let fail = |mut run: EpisodeRun, msg: String| {
        run.terminated_by = Termination::Error;
        run.error = Some(msg);
        run
    };
    let mut obs = match env.reset() {
        Ok(o) => o,
        Err(e) => return fail(run, e),
    };
    let mut history: Vec<(Observation, Action)> = Vec::new();
    for n in 1..=max_steps {
        let query_id = step_query_id(&episode_id, n as u32);
        let query = PolicyQuery {
            query_id: &query_id,
            history: &history,
            instruction: goal,
            current: &obs,
            mode: PolicyMode::Planning,
            crop: None,
        };
        let (pred, raw, refine_trace) = match predict_and_refine(policy, images, &query, refine_cfg) {
            Ok(r) => r,
            Err(e) => return fail(run, e.to_string()),
        };
        let done = pred.kind() == ActionKind::Terminate;
        run.steps.push(RunStep {
            pred: pred.clone(),
            raw,
            refine_trace,
        });
        if done {
            run.terminated_by = Termination::TerminateAction;
            return run;
        }
        if n == max_steps {
            break;
        }
        let next = match env.apply(&pred) {
            Ok(o) => o,
            Err(e) => return fail(run, e),
        };
        history.push((std::mem::replace(&mut obs, next), pred));
    }
    run
}
