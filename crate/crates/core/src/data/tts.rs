//! Speech synthesis of instruction text through an external TTS.
//!
//! Two transports are supported:
//! * an external command, invoked as `{cmd} --text {file} --seed {n} --out {wav}`
//!   and expected to exit 0 after writing the WAV;
//! * an HTTP endpoint taking `POST {"text": .., "speaker_seed": ..}` and
//!   answering with WAV bytes.
//!
//! Either way the output must be mono PCM16 at the configured sample rate.
//! TTS models are not guaranteed to be deterministic, so the pipeline
//! guarantees identical *requests* and records a checksum of every produced
//! file instead.

use std::path::{Path, PathBuf};
use std::process::Command;
use std::time::Duration;

use rayon::prelude::*;
use serde::{Deserialize, Serialize};
use sha2::{Digest, Sha256};
use thiserror::Error;

use super::{write_jsonl, DataError, Sample};
use crate::seed::derive_seed;

pub const DEFAULT_SAMPLE_RATE: u32 = 24_000;

#[derive(Debug, Clone, Error, PartialEq, Eq, Serialize, Deserialize)]
#[serde(tag = "kind", content = "message", rename_all = "snake_case")]
pub enum TtsError {
    /// The adapter could not be reached at all (missing binary, refused
    /// connection).
    #[error("TTS adapter unreachable: {0}")]
    Unreachable(String),
    #[error("TTS adapter failed: {0}")]
    Failed(String),
    #[error("invalid audio: {0}")]
    InvalidAudio(String),
    #[error("empty instruction text")]
    EmptyText,
    #[error("i/o error: {0}")]
    Io(String),
}

#[derive(Debug, Clone, PartialEq, Eq, Serialize, Deserialize)]
#[serde(tag = "kind", rename_all = "snake_case", deny_unknown_fields)]
pub enum TtsTransport {
    /// Program plus leading arguments, split on whitespace.
    ExternalCommand { command: String },
    Http { endpoint: String },
}

#[derive(Debug, Clone, PartialEq, Eq, Serialize, Deserialize)]
pub struct TtsAdapterSpec {
    pub transport: TtsTransport,
    /// Global seed; per-sample speaker seeds derive from it.
    pub speaker_seed: u64,
    pub sample_rate: u32,
    pub timeout_secs: u64,
}

impl TtsAdapterSpec {
    pub fn new(transport: TtsTransport, speaker_seed: u64) -> Self {
        Self {
            transport,
            speaker_seed,
            sample_rate: DEFAULT_SAMPLE_RATE,
            timeout_secs: 300,
        }
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Default, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum SpeakerPolicy {
    #[default]
    RandomPerSample,
    Fixed,
}

impl SpeakerPolicy {
    pub fn speaker_seed(&self, global: u64, sample_id: &str) -> u64 {
        match self {
            SpeakerPolicy::RandomPerSample => derive_seed(global, &["speaker", sample_id]),
            SpeakerPolicy::Fixed => global,
        }
    }
}

/// Everything sent to the adapter for one sample. Paths are relative to the
/// output directory so the log is identical across machines.
#[derive(Debug, Clone, PartialEq, Eq, Serialize, Deserialize)]
pub struct TtsRequest {
    pub id: String,
    pub text: String,
    pub speaker_seed: u64,
    pub sample_rate: u32,
    pub out: PathBuf,
}

pub trait TtsAdapter: Send + Sync {
    /// Produce a WAV at `out_wav`. `text_file` already holds the text.
    fn synthesize(&self, req: &TtsRequest, text_file: &Path, out_wav: &Path) -> Result<(), TtsError>;
}

pub struct CommandTts {
    program: String,
    args: Vec<String>,
}

impl CommandTts {
    pub fn new(command: &str) -> Result<Self, TtsError> {
        let mut parts = command.split_whitespace().map(str::to_string);
        let program = parts.next().ok_or_else(|| TtsError::Unreachable("empty TTS command".into()))?;
        Ok(Self {
            program,
            args: parts.collect(),
        })
    }
}

impl TtsAdapter for CommandTts {
    fn synthesize(&self, req: &TtsRequest, text_file: &Path, out_wav: &Path) -> Result<(), TtsError> {
        let output = Command::new(&self.program)
            .args(&self.args)
            .arg("--text")
            .arg(text_file)
            .arg("--seed")
            .arg(req.speaker_seed.to_string())
            .arg("--out")
            .arg(out_wav)
            .output()
            .map_err(|e| TtsError::Unreachable(format!("{}: {e}", self.program)))?;
        if output.status.success() {
            Ok(())
        } else {
            let stderr = String::from_utf8_lossy(&output.stderr);
            Err(TtsError::Failed(format!("{} exited with {}: {}", self.program, output.status, stderr.trim())))
        }
    }
}

pub struct HttpTts {
    endpoint: String,
    agent: ureq::Agent,
}

impl HttpTts {
    pub fn new(endpoint: &str, timeout_secs: u64) -> Self {
        let agent = ureq::Agent::config_builder()
            .timeout_global(Some(Duration::from_secs(timeout_secs)))
            .http_status_as_error(false)
            .build()
            .into();
        Self {
            endpoint: endpoint.to_string(),
            agent,
        }
    }
}

impl TtsAdapter for HttpTts {
    fn synthesize(&self, req: &TtsRequest, _text_file: &Path, out_wav: &Path) -> Result<(), TtsError> {
        let body = serde_json::json!({"speaker_seed": req.speaker_seed, "text": req.text}).to_string();
        let mut resp = self
            .agent
            .post(&self.endpoint)
            .header("Content-Type", "application/json")
            .send(&body)
            .map_err(|e| TtsError::Unreachable(format!("{}: {e}", self.endpoint)))?;
        let status = resp.status().as_u16();
        if !(200..300).contains(&status) {
            let text = resp.body_mut().read_to_string().unwrap_or_default();
            return Err(TtsError::Failed(format!("HTTP {status}: {text}")));
        }
        let bytes = resp
            .body_mut()
            .with_config()
            .limit(256 * 1024 * 1024)
            .read_to_vec()
            .map_err(|e| TtsError::Failed(format!("reading body: {e}")))?;
        std::fs::write(out_wav, bytes).map_err(|e| TtsError::Io(e.to_string()))
    }
}

pub fn adapter_for(spec: &TtsAdapterSpec) -> Result<Box<dyn TtsAdapter>, TtsError> {
    Ok(match &spec.transport {
        TtsTransport::ExternalCommand { command } => Box::new(CommandTts::new(command)?),
        TtsTransport::Http { endpoint } => Box::new(HttpTts::new(endpoint, spec.timeout_secs)),
    })
}

/// Check that a WAV is mono PCM16 at `sample_rate`; returns the frame count.
pub fn validate_wav(path: &Path, sample_rate: u32) -> Result<u32, TtsError> {
    let reader = hound::WavReader::open(path).map_err(|e| TtsError::InvalidAudio(format!("{}: {e}", path.display())))?;
    let s = reader.spec();
    if s.channels != 1 || s.bits_per_sample != 16 || s.sample_format != hound::SampleFormat::Int {
        return Err(TtsError::InvalidAudio(format!(
            "expected mono PCM16, got {} channel(s) {}-bit {:?}",
            s.channels, s.bits_per_sample, s.sample_format
        )));
    }
    if s.sample_rate != sample_rate {
        return Err(TtsError::InvalidAudio(format!("expected {sample_rate} Hz, got {} Hz", s.sample_rate)));
    }
    Ok(reader.duration())
}

/// Write `seconds` of silence as mono PCM16; the stand-in TTS uses this.
pub fn write_silence_wav(path: &Path, seconds: f64, sample_rate: u32) -> Result<(), hound::Error> {
    let spec = hound::WavSpec {
        channels: 1,
        sample_rate,
        bits_per_sample: 16,
        sample_format: hound::SampleFormat::Int,
    };
    let mut w = hound::WavWriter::create(path, spec)?;
    let frames = (seconds * f64::from(sample_rate)).round() as u64;
    for _ in 0..frames {
        w.write_sample(0i16)?;
    }
    w.finalize()
}

/// File stem for a sample id. Ids that are not already filename-safe get a
/// hash suffix so that sanitizing cannot make two ids collide.
pub fn file_stem(id: &str) -> String {
    let safe: String = id
        .chars()
        .map(|c| if c.is_ascii_alphanumeric() || matches!(c, '-' | '_' | '.') { c } else { '_' })
        .collect();
    if safe == id && !id.starts_with('.') {
        safe
    } else {
        let digest = Sha256::digest(id.as_bytes());
        format!("{}-{}", safe.trim_start_matches('.'), &hex::encode(digest)[..8])
    }
}

#[derive(Debug, Clone, PartialEq, Eq, Serialize, Deserialize)]
pub struct SynthFailure {
    pub id: String,
    pub error: TtsError,
}

#[derive(Debug, Clone, PartialEq, Eq, Serialize, Deserialize)]
pub struct Checksum {
    pub id: String,
    pub path: PathBuf,
    pub sha256: String,
    pub frames: u32,
}

#[derive(Debug, Clone, Default)]
pub struct SynthesisOutcome {
    /// All input samples, in input order; successes carry `audio_path`.
    pub samples: Vec<Sample>,
    pub requests: Vec<TtsRequest>,
    pub failures: Vec<SynthFailure>,
    pub checksums: Vec<Checksum>,
}

impl SynthesisOutcome {
    pub fn any_unreachable(&self) -> bool {
        self.failures.iter().any(|f| matches!(f.error, TtsError::Unreachable(_)))
    }
}

fn synthesize_one(
    adapter: &dyn TtsAdapter,
    req: &TtsRequest,
    out_dir: &Path,
) -> Result<Checksum, TtsError> {
    if req.text.trim().is_empty() {
        return Err(TtsError::EmptyText);
    }
    let io = |e: std::io::Error| TtsError::Io(e.to_string());
    let stem = req.out.file_stem().and_then(|s| s.to_str()).unwrap_or("sample");
    let text_file = out_dir.join("text").join(format!("{stem}.txt"));
    std::fs::write(&text_file, &req.text).map_err(io)?;
    let wav = out_dir.join(&req.out);
    adapter.synthesize(req, &text_file, &wav)?;
    let frames = validate_wav(&wav, req.sample_rate)?;
    let bytes = std::fs::read(&wav).map_err(io)?;
    Ok(Checksum {
        id: req.id.clone(),
        path: req.out.clone(),
        sha256: hex::encode(Sha256::digest(&bytes)),
        frames,
    })
}

/// Synthesize every sample's instruction on a pool of `workers` threads.
/// Failures are recorded per sample and never stop the batch.
pub fn synthesize_speech(
    samples: &[Sample],
    adapter: &dyn TtsAdapter,
    spec: &TtsAdapterSpec,
    policy: SpeakerPolicy,
    out_dir: &Path,
    workers: usize,
) -> Result<SynthesisOutcome, DataError> {
    for sub in ["audio", "text"] {
        let d = out_dir.join(sub);
        std::fs::create_dir_all(&d).map_err(|e| DataError::io(&d, e))?;
    }
    let requests: Vec<TtsRequest> = samples
        .iter()
        .map(|s| TtsRequest {
            id: s.id.clone(),
            text: s.instruction_text.clone(),
            speaker_seed: policy.speaker_seed(spec.speaker_seed, &s.id),
            sample_rate: spec.sample_rate,
            out: PathBuf::from("audio").join(format!("{}.wav", file_stem(&s.id))),
        })
        .collect();

    let pool = rayon::ThreadPoolBuilder::new()
        .num_threads(workers.max(1))
        .build()
        .expect("thread pool");
    let results: Vec<Result<Checksum, TtsError>> =
        pool.install(|| requests.par_iter().map(|r| synthesize_one(adapter, r, out_dir)).collect());

    let mut out = SynthesisOutcome {
        requests: requests.clone(),
        ..Default::default()
    };
    for ((sample, req), res) in samples.iter().zip(&requests).zip(results) {
        let mut sample = sample.clone();
        match res {
            Ok(sum) => {
                sample.audio_path = Some(req.out.clone());
                out.checksums.push(sum);
            }
            Err(error) => out.failures.push(SynthFailure {
                id: sample.id.clone(),
                error,
            }),
        }
        out.samples.push(sample);
    }
    Ok(out)
}

/// Write `manifest.jsonl`, `failures.jsonl`, `requests.jsonl` and
/// `audio.sha256` (in `sha256sum` format) under `out_dir`.
pub fn write_outputs(outcome: &SynthesisOutcome, out_dir: &Path) -> Result<(), DataError> {
    write_jsonl(&outcome.samples, &out_dir.join("manifest.jsonl"))?;
    write_jsonl(&outcome.failures, &out_dir.join("failures.jsonl"))?;
    write_jsonl(&outcome.requests, &out_dir.join("requests.jsonl"))?;
    let sums: String = outcome
        .checksums
        .iter()
        .map(|c| format!("{}  {}\n", c.sha256, c.path.display()))
        .collect();
    let path = out_dir.join("audio.sha256");
    std::fs::write(&path, sums).map_err(|e| DataError::io(&path, e))
}
