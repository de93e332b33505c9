//! Command-line interface.
//!
//! Exit codes: 0 success, 1 partial (some items failed), 2 usage or invalid
//! input, 3 transport (backend or TTS unreachable). On any non-zero exit a
//! one-line JSON summary is printed to stderr.

pub mod config;
mod eval;
mod tools;

use std::ffi::OsString;
use std::path::{Path, PathBuf};

use clap::{Args, Parser, Subcommand};
use serde_json::json;

use crate::metrics::ItemError;
pub use config::{BackendKind, RunConfig};

#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub enum ExitCode {
    Ok = 0,
    Partial = 1,
    Usage = 2,
    Transport = 3,
}

#[derive(Debug)]
pub struct CliError {
    pub code: ExitCode,
    pub kind: &'static str,
    pub message: String,
}

impl CliError {
    pub fn usage(message: impl ToString) -> Self {
        Self {
            code: ExitCode::Usage,
            kind: "invalid_input",
            message: message.to_string(),
        }
    }

    pub fn transport(message: impl ToString) -> Self {
        Self {
            code: ExitCode::Transport,
            kind: "transport",
            message: message.to_string(),
        }
    }

    pub fn with_kind(mut self, kind: &'static str) -> Self {
        self.kind = kind;
        self
    }
}

#[derive(Parser, Debug)]
#[command(name = "speechui", version, about = "Speech-driven GUI agent evaluation toolkit")]
pub struct Cli {
    #[command(subcommand)]
    pub command: Command,
}

#[derive(Subcommand, Debug)]
pub enum Command {
    /// Score grounding predictions on a sample manifest.
    EvalGrounding(eval::GroundingArgs),
    /// Score sampled benchmark steps on an episode manifest.
    EvalSteps(eval::StepsArgs),
    /// Synthesize spoken instructions through a TTS adapter.
    SynthSpeech(tools::SynthArgs),
    /// Assign speech or text modality to each sample.
    Mix(tools::MixArgs),
    /// Serve scripted chat-completions replies for testing.
    StubServer(tools::StubServerArgs),
    /// Stand-in TTS that writes silence (for tests and dry runs).
    #[command(hide = true)]
    StubTts(tools::StubTtsArgs),
}

/// Flags shared by the evaluation commands. Each one, when given, overrides
/// the config file and environment.
#[derive(Args, Debug, Default)]
pub struct CommonArgs {
    /// TOML config file.
    #[arg(long)]
    pub config: Option<PathBuf>,
    #[arg(long, value_enum)]
    pub backend: Option<BackendKind>,
    #[arg(long)]
    pub seed: Option<u64>,
    /// Worker threads (0 = logical CPU count).
    #[arg(long)]
    pub workers: Option<usize>,
    #[arg(long)]
    pub base_url: Option<String>,
    #[arg(long)]
    pub model: Option<String>,
    #[arg(long)]
    pub image_root: Option<PathBuf>,
    #[arg(long)]
    pub audio_root: Option<PathBuf>,
    /// Write enlarged crops here. Remote runs default to <out>/crops; the mock needs no pixels.
    #[arg(long)]
    pub crop_dir: Option<PathBuf>,
    #[arg(long, conflicts_with = "no_refine")]
    pub refine: bool,
    #[arg(long)]
    pub no_refine: bool,
    /// Zoom factor of the refinement crop.
    #[arg(long)]
    pub k: Option<f64>,
    #[arg(long)]
    pub max_rounds: Option<u32>,
    #[arg(long)]
    pub p_exact: Option<f64>,
    #[arg(long)]
    pub p_near: Option<f64>,
    #[arg(long)]
    pub p_far: Option<f64>,
    #[arg(long)]
    pub near_radius: Option<f64>,
    #[arg(long)]
    pub mock_seed: Option<u64>,
    #[arg(long)]
    pub click_radius: Option<f64>,
}

impl CommonArgs {
    pub fn resolve(&self) -> Result<RunConfig, CliError> {
        let env = |k: &str| std::env::var(k).ok();
        let mut cfg = config::load(self.config.as_deref(), &env).map_err(|e| CliError::usage(e).with_kind("config"))?;
        macro_rules! set {
            ($flag:expr => $($field:tt)+) => {
                if let Some(v) = $flag.clone() {
                    cfg.$($field)+ = v;
                }
            };
        }
        set!(self.backend => backend);
        set!(self.seed => seed);
        set!(self.workers => workers);
        set!(self.base_url => remote.base_url);
        set!(self.model => remote.model_name);
        set!(self.k => refine.k);
        set!(self.max_rounds => refine.max_rounds);
        set!(self.p_exact => mock.p_exact);
        set!(self.p_near => mock.p_near);
        set!(self.p_far => mock.p_far);
        set!(self.near_radius => mock.near_radius);
        set!(self.mock_seed => mock.seed);
        set!(self.click_radius => matching.click_radius);
        if self.image_root.is_some() {
            cfg.image_root = self.image_root.clone();
        }
        if self.audio_root.is_some() {
            cfg.audio_root = self.audio_root.clone();
        }
        if self.crop_dir.is_some() {
            cfg.crop_dir = self.crop_dir.clone();
        }
        if self.refine {
            cfg.refine.enabled = true;
        }
        if self.no_refine {
            cfg.refine.enabled = false;
        }
        cfg.validate().map_err(|e| CliError::usage(e).with_kind("config"))?;
        Ok(cfg)
    }
}

pub(crate) fn resolve_path(base: &Path, p: &Path) -> PathBuf {
    if p.is_absolute() {
        p.to_path_buf()
    } else {
        base.join(p)
    }
}

pub(crate) fn parent_dir(p: &Path) -> PathBuf {
    p.parent().map(Path::to_path_buf).unwrap_or_default()
}

pub(crate) fn pool(workers: usize) -> Result<rayon::ThreadPool, CliError> {
    rayon::ThreadPoolBuilder::new()
        .num_threads(workers.max(1))
        .build()
        .map_err(|e| CliError::usage(e).with_kind("workers"))
}

/// Exit code for a finished batch, plus the stderr summary when partial.
pub(crate) fn batch_outcome(scored: usize, errors: &[ItemError], out: &Path) -> ExitCode {
    if errors.is_empty() {
        return ExitCode::Ok;
    }
    let mut by_kind = std::collections::BTreeMap::<&str, usize>::new();
    for e in errors {
        *by_kind.entry(e.kind.as_str()).or_default() += 1;
    }
    let code = if scored == 0 && by_kind.contains_key("transport") {
        ExitCode::Transport
    } else {
        ExitCode::Partial
    };
    eprintln!(
        "{}",
        json!({
            "exit_code": code as i32,
            "kind": if code == ExitCode::Transport { "transport" } else { "partial" },
            "errors": errors.len(),
            "by_kind": by_kind,
            "out": out,
        })
    );
    code
}

pub fn dispatch(cli: Cli) -> Result<ExitCode, CliError> {
    match cli.command {
        Command::EvalGrounding(a) => eval::eval_grounding(&a),
        Command::EvalSteps(a) => eval::eval_steps(&a),
        Command::SynthSpeech(a) => tools::synth_speech(&a),
        Command::Mix(a) => tools::mix(&a),
        Command::StubServer(a) => tools::stub_server(&a),
        Command::StubTts(a) => tools::stub_tts(&a),
    }
}

/// Parse `args` (including the program name) and run; returns the exit code.
pub fn run<I, T>(args: I) -> i32
where
    I: IntoIterator<Item = T>,
    T: Into<OsString> + Clone,
{
    let cli = match Cli::try_parse_from(args) {
        Ok(c) => c,
        Err(e) => {
            let code = if e.use_stderr() { ExitCode::Usage } else { ExitCode::Ok };
            let _ = e.print();
            return code as i32;
        }
    };
    match dispatch(cli) {
        Ok(code) => code as i32,
        Err(e) => {
            eprintln!("{}", json!({"exit_code": e.code as i32, "kind": e.kind, "message": e.message}));
            e.code as i32
        }
    }
}
