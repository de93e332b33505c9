use std::path::PathBuf;

use clap::{Args, ValueEnum};
use serde_json::json;

use super::{CliError, ExitCode};
use crate::data::tts::{adapter_for, synthesize_speech, write_outputs, write_silence_wav, SpeakerPolicy, TtsAdapterSpec, TtsTransport, DEFAULT_SAMPLE_RATE};
use crate::data::{apply_plan, load_manifest, mix_modalities, mix_modalities_stratified, write_manifest, DataError};
use crate::data::mix::DEFAULT_SPEECH_FRACTION;
use crate::policy::stub::{StubScript, StubServer};
use crate::policy::Modality;

#[derive(Debug, Clone, Copy, PartialEq, Eq, ValueEnum)]
pub enum TtsKind {
    Cmd,
    Http,
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, ValueEnum)]
pub enum SpeakerArg {
    Random,
    Fixed,
}

#[derive(Args, Debug)]
pub struct SynthArgs {
    #[arg(long)]
    pub manifest: PathBuf,
    #[arg(long, value_enum)]
    pub tts: TtsKind,
    /// Command for `--tts cmd`; it is called as
    /// `<command> --text FILE --seed N --out WAV`.
    #[arg(long)]
    pub tts_command: Option<String>,
    /// URL for `--tts http`.
    #[arg(long)]
    pub tts_endpoint: Option<String>,
    #[arg(long, value_enum, default_value = "random")]
    pub speaker: SpeakerArg,
    #[arg(long, default_value_t = 0)]
    pub seed: u64,
    #[arg(long, default_value_t = DEFAULT_SAMPLE_RATE)]
    pub sample_rate: u32,
    #[arg(long, default_value_t = 300)]
    pub timeout_secs: u64,
    #[arg(long, default_value_t = 4)]
    pub workers: usize,
    #[arg(long)]
    pub out: PathBuf,
}

#[derive(Args, Debug)]
pub struct MixArgs {
    #[arg(long)]
    pub manifest: PathBuf,
    #[arg(long, default_value_t = DEFAULT_SPEECH_FRACTION)]
    pub speech_frac: f64,
    #[arg(long, default_value_t = 0)]
    pub seed: u64,
    /// Apply the fraction within each `source` instead of globally.
    #[arg(long)]
    pub stratify: bool,
    #[arg(long)]
    pub out: PathBuf,
}

#[derive(Args, Debug)]
pub struct StubServerArgs {
    #[arg(long, default_value = "127.0.0.1")]
    pub host: String,
    #[arg(long, default_value_t = 0)]
    pub port: u16,
    /// JSON script: `{"responses": [{"status": 200, "content": "click(x=0.5,y=0.5)"}], "repeat_last": true}`.
    #[arg(long)]
    pub script: PathBuf,
    /// Save every received body as `request_NNNN.json` here.
    #[arg(long)]
    pub log_dir: Option<PathBuf>,
}

#[derive(Args, Debug)]
pub struct StubTtsArgs {
    #[arg(long)]
    pub text: PathBuf,
    #[arg(long)]
    pub seed: u64,
    #[arg(long)]
    pub out: PathBuf,
    #[arg(long, default_value_t = 1.0)]
    pub seconds: f64,
    #[arg(long, default_value_t = DEFAULT_SAMPLE_RATE)]
    pub sample_rate: u32,
}

fn input(e: DataError) -> CliError {
    CliError::usage(e).with_kind("manifest")
}

pub fn synth_speech(args: &SynthArgs) -> Result<ExitCode, CliError> {
    let transport = match (args.tts, &args.tts_command, &args.tts_endpoint) {
        (TtsKind::Cmd, Some(c), _) => TtsTransport::ExternalCommand { command: c.clone() },
        (TtsKind::Http, _, Some(u)) => TtsTransport::Http { endpoint: u.clone() },
        (TtsKind::Cmd, None, _) => return Err(CliError::usage("--tts cmd needs --tts-command")),
        (TtsKind::Http, _, None) => return Err(CliError::usage("--tts http needs --tts-endpoint")),
    };
    let samples = load_manifest(&args.manifest).map_err(input)?;
    let spec = TtsAdapterSpec {
        sample_rate: args.sample_rate,
        timeout_secs: args.timeout_secs,
        ..TtsAdapterSpec::new(transport, args.seed)
    };
    let adapter = adapter_for(&spec).map_err(CliError::usage)?;
    let policy = match args.speaker {
        SpeakerArg::Random => SpeakerPolicy::RandomPerSample,
        SpeakerArg::Fixed => SpeakerPolicy::Fixed,
    };
    let outcome = synthesize_speech(&samples, adapter.as_ref(), &spec, policy, &args.out, args.workers).map_err(input)?;
    write_outputs(&outcome, &args.out).map_err(input)?;
    println!(
        "synthesized {}/{} -> {}",
        outcome.checksums.len(),
        samples.len(),
        args.out.display()
    );
    if outcome.failures.is_empty() {
        return Ok(ExitCode::Ok);
    }
    let code = if outcome.any_unreachable() {
        ExitCode::Transport
    } else {
        ExitCode::Partial
    };
    let first = &outcome.failures[0];
    eprintln!(
        "{}",
        json!({
            "exit_code": code as i32,
            "kind": if code == ExitCode::Transport { "transport" } else { "partial" },
            "errors": outcome.failures.len(),
            "first": {"id": first.id, "error": first.error.to_string()},
            "failures": args.out.join("failures.jsonl"),
        })
    );
    Ok(code)
}

pub fn mix(args: &MixArgs) -> Result<ExitCode, CliError> {
    let samples = load_manifest(&args.manifest).map_err(input)?;
    let plan = if args.stratify {
        mix_modalities_stratified(&samples, args.speech_frac, args.seed)
    } else {
        mix_modalities(&samples, args.speech_frac, args.seed)
    }
    .map_err(|e| CliError::usage(e).with_kind("usage"))?;
    std::fs::create_dir_all(&args.out).map_err(|e| CliError::usage(e).with_kind("io"))?;
    let plan_path = args.out.join("plan.json");
    let mut text = serde_json::to_string_pretty(&plan).map_err(CliError::usage)?;
    text.push('\n');
    std::fs::write(&plan_path, text).map_err(|e| CliError::usage(e).with_kind("io"))?;
    let mixed = apply_plan(&samples, &plan).map_err(|e| CliError::usage(e).with_kind("missing_audio"))?;
    write_manifest(&mixed, &args.out.join("manifest.jsonl")).map_err(input)?;
    println!(
        "speech {} / text {} -> {}",
        plan.count(Modality::Speech),
        plan.count(Modality::Text),
        args.out.display()
    );
    Ok(ExitCode::Ok)
}

pub fn stub_server(args: &StubServerArgs) -> Result<ExitCode, CliError> {
    let script = StubScript::from_file(&args.script).map_err(CliError::usage)?;
    let addr = format!("{}:{}", args.host, args.port);
    let server = StubServer::start(&addr, script, args.log_dir.clone()).map_err(|e| CliError::transport(e).with_kind("bind"))?;
    println!("{}", server.base_url());
    use std::io::Write as _;
    let _ = std::io::stdout().flush();
    server.wait();
    Ok(ExitCode::Ok)
}

pub fn stub_tts(args: &StubTtsArgs) -> Result<ExitCode, CliError> {
    std::fs::read_to_string(&args.text).map_err(|e| CliError::usage(format!("{}: {e}", args.text.display())))?;
    write_silence_wav(&args.out, args.seconds, args.sample_rate)
        .map_err(|e| CliError::usage(format!("{}: {e}", args.out.display())).with_kind("io"))?;
    Ok(ExitCode::Ok)
}
