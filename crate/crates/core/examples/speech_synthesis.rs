// Batch speech synthesis through a custom in-process TTS adapter.

use std::path::Path;

use speechui::data::tts::*;
use speechui::data::load_manifest;

/// Writes silence, 50 ms per word.
struct SilentTts;

impl TtsAdapter for SilentTts {
    fn synthesize(&self, req: &TtsRequest, _text_file: &Path, out_wav: &Path) -> Result<(), TtsError> {
        let secs = 0.05 * req.text.split_whitespace().count() as f64;
        write_silence_wav(out_wav, secs, req.sample_rate).map_err(|e| TtsError::Failed(e.to_string()))
    }
}

pub fn run_example() -> Result<(), Box<dyn std::error::Error>> {
    let fixtures = Path::new(env!("CARGO_MANIFEST_DIR")).join("tests/fixtures");
    let samples = load_manifest(&fixtures.join("three_samples.jsonl"))?;
    let spec = TtsAdapterSpec::new(TtsTransport::ExternalCommand { command: "in-process".into() }, 1234);
    let out = tempfile::tempdir()?;

    let outcome = synthesize_speech(&samples, &SilentTts, &spec, SpeakerPolicy::RandomPerSample, out.path(), 2)?;
    write_outputs(&outcome, out.path())?;
    for c in &outcome.checksums {
        println!("{} -> {} ({} frames)", c.id, c.path.display(), c.frames);
    }
    for f in &outcome.failures {
        println!("{} failed: {:?}", f.id, f.error);
    }
    for r in &outcome.requests {
        println!("{} speaker seed {}", r.id, r.speaker_seed);
    }
    Ok(())
}

#[allow(dead_code)]
fn main() {
    run_example().unwrap();
}
