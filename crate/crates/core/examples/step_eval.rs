// Offline step evaluation with teacher forcing, plus a closed-loop replay run.

use std::path::Path;

use speechui::action::MatchRules;
use speechui::agent::*;
use speechui::data::{load_jsonl, sample_steps};
use speechui::metrics::{score_step, step_table};
use speechui::policy::mock::{MockOracle, MockOracleConfig, MockTarget};
use speechui::refine::{RefineConfig, VirtualImageService};

pub fn run_example() -> Result<(), Box<dyn std::error::Error>> {
    let fixtures = Path::new(env!("CARGO_MANIFEST_DIR")).join("tests/fixtures");
    let episodes: Vec<EpisodeRecord> = load_jsonl(&fixtures.join("episodes.jsonl"))?;

    // The mock replays ground truth, with some clicks knocked off target.
    let targets = episodes.iter().flat_map(|e| {
        e.steps.iter().map(move |s| {
            let target = MockTarget {
                action: s.gt_action.clone(),
                bbox: s.gt_bbox,
            };
            (step_query_id(e.id(), s.observation.step_index), target)
        })
    });
    let mock = MockOracle::new(MockOracleConfig {
        p_exact: 0.7,
        p_near: 0.3,
        ..MockOracleConfig::default()
    })?
    .with_targets(targets);

    let rules = MatchRules::default();
    let mut scored = Vec::new();
    for pick in sample_steps(&episodes, 20, 1)? {
        let ep = episodes.iter().find(|e| e.id() == pick.episode_id).unwrap();
        let pred = run_offline_step(&mock, &VirtualImageService, ep, pick.step_index, StepMode::High, &RefineConfig::disabled())?;
        let step = ep.step(pick.step_index).unwrap();
        scored.push(score_step(&ep.meta.benchmark, ep.id(), pick.step_index, &pred.pred, &step.gt_action, step.gt_bbox.as_ref(), &rules));
    }
    let t = step_table(&scored);
    println!("type {} grounding {} success {}", t.type_acc.cell(), t.grounding_acc.cell(), t.sr.cell());

    // Replays have no terminate step, so cap the run at the recorded length.
    let ep = episodes[0].clone();
    let (goal, len) = (ep.goal.clone(), ep.steps.len());
    let mut env = ReplayEnvironment::new(ep);
    let run = run_episode(&mock, &VirtualImageService, &mut env, &goal, len, &RefineConfig::default());
    println!("{} ran {} steps, ended by {:?}", run.episode_id, run.steps.len(), run.terminated_by);
    Ok(())
}

#[allow(dead_code)]
fn main() {
    run_example().unwrap();
}
