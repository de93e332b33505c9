// Two-step grounding against the seeded mock oracle, swept over zoom factors.

use rand::{Rng, SeedableRng};
use speechui::geom::{point_in_box, NormBox, PixelSize};
use speechui::metrics::Ratio;
use speechui::policy::mock::{MockOracle, MockOracleConfig, MockTarget};
use speechui::policy::{Instruction, Observation};
use speechui::refine::{refine_click, GroundingRequest, RefineConfig, VirtualImageService};

pub fn run_example() -> Result<(), Box<dyn std::error::Error>> {
    let mut rng = rand_chacha::ChaCha8Rng::seed_from_u64(42);
    let targets: Vec<(String, NormBox)> = (0..1000)
        .map(|i| {
            let side = rng.random_range(0.02..0.06);
            let (x, y) = (rng.random_range(0.0..1.0 - side), rng.random_range(0.0..1.0 - side));
            (format!("t{i}"), NormBox::new(x, y, x + side, y + side).unwrap())
        })
        .collect();
    let oracle = MockOracle::new(MockOracleConfig {
        p_exact: 0.79,
        p_near: 0.15,
        p_far: 0.06,
        seed: 42,
        ..MockOracleConfig::default()
    })?
    .with_targets(targets.iter().map(|(id, b)| (id.clone(), MockTarget::click(b.center(), Some(*b)))));

    let screen = Observation {
        screenshot_ref: "screen.png".into(),
        size: PixelSize::new(1080, 2400)?,
        step_index: 1,
    };
    let instruction = Instruction::text("tap the target");
    for k in [2.0, 3.0, 4.0] {
        let cfg = RefineConfig { k, ..RefineConfig::default() };
        let (mut before, mut after) = (Ratio::default(), Ratio::default());
        for (id, b) in &targets {
            let req = GroundingRequest {
                query_id: id,
                instruction: &instruction,
                observation: &screen,
            };
            let trace = refine_click(&oracle, &VirtualImageService, &req, &cfg)?;
            before.add(point_in_box(&trace.first_point, b));
            after.add(point_in_box(&trace.final_point, b));
        }
        println!("k={k}: {} -> {}", before.cell(), after.cell());
    }
    Ok(())
}

#[allow(dead_code)]
fn main() {
    run_example().unwrap();
}
