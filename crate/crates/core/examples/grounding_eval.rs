// Scoring grounding predictions into platform tables, deviation curves and
// length strata, then rendering the report.

use rand::{Rng, SeedableRng};
use speechui::data::{ElementKind, Platform};
use speechui::geom::{NormBox, NormPoint};
use speechui::metrics::report::SCHEMA_VERSION;
use speechui::metrics::*;
use speechui::policy::Modality;

pub fn run_example() -> Result<(), Box<dyn std::error::Error>> {
    let mut rng = rand_chacha::ChaCha8Rng::seed_from_u64(3);
    let results: Vec<GroundingResult> = (0..240)
        .map(|i| {
            let b = NormBox::new(0.40, 0.40, 0.45, 0.44).unwrap();
            // Most clicks land in the box, the rest scatter around it.
            let pred = if rng.random_bool(0.8) {
                b.center()
            } else {
                NormPoint::new(rng.random_range(0.3..0.6), rng.random_range(0.3..0.6)).unwrap()
            };
            let modality = if i % 3 == 0 { Modality::Text } else { Modality::Speech };
            GroundingResult::new(format!("s{i}"), pred, b, Platform::ALL[i % 3], ElementKind::ALL[i % 2], rng.random_range(5..260), modality)
        })
        .collect();

    let table = grounding_table(&results);
    println!("micro accuracy {}", table.micro.cell());
    let devs: Vec<f64> = results.iter().map(|r| r.deviation).collect();
    let curve = deviation_curve(&devs, &DEFAULT_THRESHOLDS);
    println!("by deviation threshold: {}", curve.row());

    let report = Report {
        schema_version: SCHEMA_VERSION,
        kind: ReportKind::Grounding,
        config: serde_json::json!({"example": "grounding_eval"}),
        n_items: results.len() as u64,
        grounding: Some(GroundingSection {
            table,
            deviation_curves: [("all".to_string(), curve)].into(),
            length_strata: grounding_strata(&results, &DEFAULT_LENGTH_EDGES),
        }),
        steps: None,
        errors: vec![],
        notes: vec![],
    };
    report.validate()?;
    print!("{}", report.to_markdown());
    Ok(())
}

#[allow(dead_code)]
fn main() {
    run_example().unwrap();
}
