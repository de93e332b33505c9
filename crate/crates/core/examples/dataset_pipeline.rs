// Manifest loading, target unification, 70/30 modality mixing and step sampling.

use std::path::Path;

use speechui::agent::EpisodeRecord;
use speechui::data::*;
use speechui::policy::Modality;

pub fn run_example() -> Result<(), Box<dyn std::error::Error>> {
    let fixtures = Path::new(env!("CARGO_MANIFEST_DIR")).join("tests/fixtures");
    let samples = load_manifest(&fixtures.join("grounding_60.jsonl"))?;
    let unified: Vec<Sample> = samples.into_iter().map(unify_target).collect::<Result<_, _>>()?;
    let with_audio: Vec<Sample> = unified.into_iter().filter(|s| s.audio_path.is_some()).collect();
    println!("{} samples carry audio", with_audio.len());

    let plan = mix_modalities(&with_audio, DEFAULT_SPEECH_FRACTION, 7)?;
    println!(
        "mix: {} speech, {} text",
        plan.count(Modality::Speech),
        plan.count(Modality::Text)
    );
    let mixed = apply_plan(&with_audio, &plan)?;

    let out = tempfile::tempdir()?;
    let path = out.path().join("mixed.jsonl");
    write_manifest(&mixed, &path)?;
    // Canonical lines round floats, so a second pass is byte-stable.
    let again = out.path().join("again.jsonl");
    write_manifest(&load_manifest(&path)?, &again)?;
    assert_eq!(std::fs::read(&path)?, std::fs::read(&again)?);
    println!("wrote {} canonical lines", mixed.len());

    let episodes: Vec<EpisodeRecord> = load_jsonl(&fixtures.join("episodes.jsonl"))?;
    let picks = sample_steps(&episodes, 8, 7)?;
    let labels: Vec<String> = picks.iter().map(|r| format!("{}#{}", r.episode_id, r.step_index)).collect();
    println!("sampled steps: {}", labels.join(" "));
    match sample_steps(&episodes, DEFAULT_SAMPLE_N, 7) {
        Err(e) => println!("default sample size on this toy set: {e}"),
        Ok(_) => unreachable!(),
    }
    Ok(())
}

#[allow(dead_code)]
fn main() {
    run_example().unwrap();
}
