use std::collections::{BTreeMap, HashSet};
use std::path::{Path, PathBuf};

use clap::{Args, ValueEnum};
use rayon::prelude::*;
use serde_json::json;

use super::{batch_outcome, parent_dir, pool, resolve_path, BackendKind, CliError, CommonArgs, ExitCode, RunConfig};
use crate::action::serialize_action;
use crate::agent::{run_offline_step, step_query_id, AgentError, EpisodeRecord, StepMode};
use crate::data::{canonical_line, load_jsonl, load_manifest, sample_steps, unify_target, DataError, Sample};
use crate::geom::{NormBox, PixelSize};
use crate::metrics::report::SCHEMA_VERSION;
use crate::metrics::{
    deviation_curve, emit_report, grounding_strata, grounding_table, score_step, step_table, step_tables_by_benchmark,
    GroundingResult, GroundingSection, ItemError, Report, ReportKind, StepResult, StepsSection,
};
use crate::policy::mock::{MockOracle, MockTarget};
use crate::policy::remote::RemoteBackend;
use crate::policy::{Instruction, Modality, Observation, PolicyBackend, PolicyError};
use crate::refine::{refine_click, FsImageService, GroundingRequest, ImageService, RefineError, VirtualImageService};

#[derive(Args, Debug)]
pub struct GroundingArgs {
    /// JSONL manifest of grounding samples.
    #[arg(long)]
    pub manifest: PathBuf,
    /// Output directory for report.json, report.md and predictions.jsonl.
    #[arg(long)]
    pub out: PathBuf,
    #[command(flatten)]
    pub common: CommonArgs,
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, ValueEnum)]
pub enum ModeArg {
    Low,
    High,
}

#[derive(Args, Debug)]
pub struct StepsArgs {
    /// JSONL manifest of episodes.
    #[arg(long)]
    pub episodes: PathBuf,
    #[arg(long, value_enum, default_value = "high")]
    pub mode: ModeArg,
    /// Number of steps to sample (defaults to the config value, 800).
    #[arg(long)]
    pub sample_n: Option<usize>,
    #[arg(long)]
    pub out: PathBuf,
    #[command(flatten)]
    pub common: CommonArgs,
}

fn item_error(id: &str, kind: &str, message: impl ToString) -> ItemError {
    ItemError {
        id: id.to_string(),
        kind: kind.to_string(),
        message: message.to_string(),
    }
}

fn backend(cfg: &RunConfig, targets: Vec<(String, MockTarget)>) -> Result<Box<dyn PolicyBackend>, CliError> {
    Ok(match cfg.backend {
        BackendKind::Mock => Box::new(
            MockOracle::new(cfg.mock)
                .map_err(|e| CliError::usage(e).with_kind("config"))?
                .with_targets(targets),
        ),
        BackendKind::Remote => {
            Box::new(RemoteBackend::new(cfg.remote.clone()).map_err(|e| CliError::usage(e).with_kind("config"))?)
        }
    })
}

/// Remote models need real pixels, so crops land in `<out>/crops` unless a
/// directory is configured. The mock only needs the geometry.
fn images(cfg: &RunConfig, out: &Path) -> Box<dyn ImageService> {
    match (&cfg.crop_dir, cfg.backend) {
        (Some(dir), _) => Box::new(FsImageService::new(dir)),
        (None, BackendKind::Remote) => Box::new(FsImageService::new(out.join("crops"))),
        (None, BackendKind::Mock) => Box::new(VirtualImageService),
    }
}

fn data_error(e: DataError) -> CliError {
    match e {
        DataError::InsufficientSteps { .. } => CliError::usage(e).with_kind("insufficient_steps"),
        DataError::Io { .. } => CliError::usage(e).with_kind("io"),
        _ => CliError::usage(e).with_kind("manifest"),
    }
}

fn policy_kind(e: &PolicyError) -> &'static str {
    if e.is_transport() {
        "transport"
    } else {
        "policy"
    }
}

fn write_lines(path: &Path, lines: &[serde_json::Value]) -> Result<(), CliError> {
    let mut text = String::new();
    for l in lines {
        text.push_str(&canonical_line(l).map_err(CliError::usage)?);
        text.push('\n');
    }
    std::fs::write(path, text).map_err(|e| CliError::usage(format!("{}: {e}", path.display())).with_kind("io"))
}

fn emit(report: &Report, out: &Path) -> Result<(), CliError> {
    emit_report(report, out).map_err(|e| CliError::usage(e).with_kind("io"))?;
    Ok(())
}

struct Prepared {
    sample: Sample,
    bbox: NormBox,
    instruction: Instruction,
    observation: Observation,
}

fn prepare(s: Sample, cfg: &RunConfig, base: &Path) -> Result<Prepared, ItemError> {
    let id = s.id.clone();
    let s = unify_target(s).map_err(|e| item_error(&id, "missing_target", e))?;
    let bbox = s
        .target_bbox
        .ok_or_else(|| item_error(&id, "missing_bbox", "grounding accuracy needs a target_bbox"))?;
    let image_path = resolve_path(cfg.image_root.as_deref().unwrap_or(base), &s.image_path);
    let (w, h) = image::image_dimensions(&image_path)
        .map_err(|e| item_error(&id, "image", format!("cannot read {}: {e}", s.image_path.display())))?;
    let size = PixelSize::new(w, h).map_err(|e| item_error(&id, "image", e))?;
    let audio = || {
        let rel = s.audio_path.as_ref().expect("validated at load");
        resolve_path(cfg.audio_root.as_deref().unwrap_or(base), rel)
    };
    let instruction = match s.modality {
        Modality::Text => Instruction::text(s.instruction_text.clone()),
        Modality::Speech => Instruction::speech(audio(), Some(s.instruction_text.clone())),
        Modality::Both => Instruction::new(Some(s.instruction_text.clone()), Some(audio()), Modality::Both)
            .map_err(|e| item_error(&id, "manifest", e))?,
    };
    Ok(Prepared {
        bbox,
        instruction,
        observation: Observation {
            screenshot_ref: image_path,
            size,
            step_index: 1,
        },
        sample: s,
    })
}

pub fn eval_grounding(args: &GroundingArgs) -> Result<ExitCode, CliError> {
    let cfg = args.common.resolve()?;
    let samples = load_manifest(&args.manifest).map_err(data_error)?;
    let n_items = samples.len() as u64;
    let base = parent_dir(&args.manifest);

    let mut errors = Vec::new();
    let mut prepared = Vec::new();
    for s in samples {
        match prepare(s, &cfg, &base) {
            Ok(p) => prepared.push(p),
            Err(e) => errors.push(e),
        }
    }
    let targets = prepared
        .iter()
        .map(|p| {
            let point = p.sample.target_point.expect("unified");
            (p.sample.id.clone(), MockTarget::click(point, Some(p.bbox)))
        })
        .collect();
    let policy = backend(&cfg, targets)?;
    let images = images(&cfg, &args.out);

    let outcomes: Vec<_> = pool(cfg.worker_count())?.install(|| {
        prepared
            .par_iter()
            .map(|p| {
                let id = p.sample.id.as_str();
                let request = GroundingRequest {
                    query_id: id,
                    instruction: &p.instruction,
                    observation: &p.observation,
                };
                match refine_click(policy.as_ref(), images.as_ref(), &request, &cfg.refine) {
                    Ok(trace) => {
                        let r = GroundingResult::new(
                            id,
                            trace.final_point,
                            p.bbox,
                            p.sample.platform,
                            p.sample.element_kind,
                            p.sample.instruction_len_chars() as u64,
                            p.sample.modality,
                        );
                        Ok((r, trace))
                    }
                    Err(RefineError::FirstStep(e)) => Err(item_error(id, policy_kind(&e), e)),
                    Err(e) => Err(item_error(id, "refine", e)),
                }
            })
            .collect()
    });

    let mut results = Vec::new();
    let mut predictions = Vec::new();
    for o in outcomes {
        match o {
            Ok((r, trace)) => {
                predictions.push(json!({
                    "id": r.sample_id,
                    "first_point": trace.first_point,
                    "final_point": trace.final_point,
                    "fell_back": trace.fell_back,
                    "rounds": trace.rounds,
                    "deviation": r.deviation,
                    "hit": r.hit(),
                }));
                results.push(r);
            }
            Err(e) => errors.push(e),
        }
    }
    results.sort_by(|a, b| a.sample_id.cmp(&b.sample_id));
    predictions.sort_by(|a, b| a["id"].as_str().cmp(&b["id"].as_str()));
    errors.sort();

    let mut curves = BTreeMap::new();
    let devs = |m: Option<Modality>| -> Vec<f64> {
        results.iter().filter(|r| m.is_none_or(|m| r.modality == m)).map(|r| r.deviation).collect()
    };
    curves.insert("all".to_string(), deviation_curve(&devs(None), &cfg.thresholds));
    let present: HashSet<Modality> = results.iter().map(|r| r.modality).collect();
    for m in [Modality::Text, Modality::Speech, Modality::Both] {
        if present.contains(&m) {
            curves.insert(m.as_str().to_string(), deviation_curve(&devs(Some(m)), &cfg.thresholds));
        }
    }

    let report = Report {
        schema_version: SCHEMA_VERSION,
        kind: ReportKind::Grounding,
        config: json!({"command": "eval-grounding", "manifest": args.manifest, "run": cfg}),
        n_items,
        grounding: Some(GroundingSection {
            table: grounding_table(&results),
            deviation_curves: curves,
            length_strata: grounding_strata(&results, &cfg.length_edges),
        }),
        steps: None,
        errors,
        notes: vec![
            "A prediction is a hit when it lies inside or on the target box (deviation 0).".into(),
            "Items listed under errors are excluded from every table.".into(),
        ],
    };
    emit(&report, &args.out)?;
    write_lines(&args.out.join("predictions.jsonl"), &predictions)?;
    let micro = &report.grounding.as_ref().expect("set above").table.micro;
    println!("micro accuracy {} -> {}", micro.cell(), args.out.display());
    Ok(batch_outcome(results.len(), &report.errors, &args.out))
}

pub fn eval_steps(args: &StepsArgs) -> Result<ExitCode, CliError> {
    let mut cfg = args.common.resolve()?;
    if let Some(n) = args.sample_n {
        cfg.sample_n = n;
    }
    let mode = match args.mode {
        ModeArg::Low => StepMode::Low,
        ModeArg::High => StepMode::High,
    };
    let mut episodes: Vec<EpisodeRecord> = load_jsonl(&args.episodes).map_err(data_error)?;
    let mut seen = HashSet::new();
    for e in &episodes {
        if !seen.insert(e.id().to_string()) {
            return Err(CliError::usage(format!("duplicate episode id `{}`", e.id())).with_kind("manifest"));
        }
    }
    let base = parent_dir(&args.episodes);
    let image_base = cfg.image_root.clone().unwrap_or(base);
    for ep in &mut episodes {
        for s in &mut ep.steps {
            s.observation.screenshot_ref = resolve_path(&image_base, &s.observation.screenshot_ref);
        }
    }
    let by_id: BTreeMap<&str, &EpisodeRecord> = episodes.iter().map(|e| (e.id(), e)).collect();
    let picks = sample_steps(&episodes, cfg.sample_n, cfg.seed).map_err(data_error)?;

    if mode == StepMode::Low {
        let missing: Vec<String> = picks
            .iter()
            .filter(|p| by_id[p.episode_id.as_str()].step(p.step_index).is_some_and(|s| s.low_level_text.is_none()))
            .map(|p| step_query_id(&p.episode_id, p.step_index))
            .collect();
        if !missing.is_empty() {
            return Err(CliError::usage(format!(
                "low-level mode needs low_level_text; missing on {}",
                missing.join(", ")
            ))
            .with_kind("missing_annotation"));
        }
    }

    let targets = picks
        .iter()
        .map(|p| {
            let step = by_id[p.episode_id.as_str()].step(p.step_index).expect("sampled from episodes");
            (
                step_query_id(&p.episode_id, p.step_index),
                MockTarget {
                    action: step.gt_action.clone(),
                    bbox: step.gt_bbox,
                },
            )
        })
        .collect();
    let policy = backend(&cfg, targets)?;
    let images = images(&cfg, &args.out);

    let outcomes: Vec<Result<(StepResult, serde_json::Value), ItemError>> = pool(cfg.worker_count())?.install(|| {
        picks
            .par_iter()
            .map(|p| {
                let ep = by_id[p.episode_id.as_str()];
                let qid = step_query_id(&p.episode_id, p.step_index);
                let pred = run_offline_step(policy.as_ref(), images.as_ref(), ep, p.step_index, mode, &cfg.refine)
                    .map_err(|e| match &e {
                        AgentError::Policy(pe) | AgentError::Refine(RefineError::FirstStep(pe)) => {
                            item_error(&qid, policy_kind(pe), &e)
                        }
                        AgentError::MissingAnnotation { .. } => item_error(&qid, "missing_annotation", &e),
                        _ => item_error(&qid, "agent", &e),
                    })?;
                let step = ep.step(p.step_index).expect("checked");
                let r = score_step(
                    &ep.meta.benchmark,
                    ep.id(),
                    p.step_index,
                    &pred.pred,
                    &step.gt_action,
                    step.gt_bbox.as_ref(),
                    &cfg.matching,
                );
                let record = json!({
                    "id": qid,
                    "raw": pred.raw,
                    "pred": serialize_action(&pred.pred),
                    "gt": serialize_action(&step.gt_action),
                    "type_match": r.type_match,
                    "grounding_match": r.grounding_match,
                    "step_success": r.step_success,
                });
                Ok((r, record))
            })
            .collect()
    });

    let mut results = Vec::new();
    let mut records = Vec::new();
    let mut errors = Vec::new();
    for o in outcomes {
        match o {
            Ok((r, rec)) => {
                results.push(r);
                records.push(rec);
            }
            Err(e) => errors.push(e),
        }
    }
    records.sort_by(|a, b| a["id"].as_str().cmp(&b["id"].as_str()));
    errors.sort();

    let mode_note = match mode {
        StepMode::High => "High-level mode is teacher-forced: step n sees the ground-truth actions of steps 1..n-1, not the policy's own earlier outputs.",
        StepMode::Low => "Low-level mode gives each step its own instruction and no history.",
    };
    let report = Report {
        schema_version: SCHEMA_VERSION,
        kind: ReportKind::Steps,
        config: json!({
            "command": "eval-steps",
            "episodes": args.episodes,
            "mode": format!("{mode:?}").to_lowercase(),
            "run": cfg,
        }),
        n_items: picks.len() as u64,
        grounding: None,
        steps: Some(StepsSection {
            mode: format!("{mode:?}").to_lowercase(),
            overall: step_table(&results),
            by_benchmark: step_tables_by_benchmark(&results),
        }),
        errors,
        notes: vec![mode_note.to_string(), "Items listed under errors are excluded from every table.".into()],
    };
    emit(&report, &args.out)?;
    write_lines(&args.out.join("predictions.jsonl"), &records)?;
    let t = &report.steps.as_ref().expect("set above").overall;
    println!(
        "type {} grounding {} SR {} -> {}",
        t.type_acc.cell(),
        t.grounding_acc.cell(),
        t.sr.cell(),
        args.out.display()
    );
    Ok(batch_outcome(results.len(), &report.errors, &args.out))
}
