// The chat-completions backend against the scripted stub server, including a
// retried server error and a real crop written to disk.

use std::path::Path;

use speechui::geom::PixelSize;
use speechui::policy::remote::{RemoteBackend, RemoteConfig};
use speechui::policy::stub::{ScriptedResponse, StubScript, StubServer};
use speechui::policy::{Instruction, Observation};
use speechui::refine::{refine_click, FsImageService, GroundingRequest, RefineConfig};

pub fn run_example() -> Result<(), Box<dyn std::error::Error>> {
    let fixtures = Path::new(env!("CARGO_MANIFEST_DIR")).join("tests/fixtures");
    let script = StubScript {
        responses: vec![
            ScriptedResponse::error(503),
            ScriptedResponse::reply("Thought: top right.\nclick(x=0.9000, y=0.1000)"),
            ScriptedResponse::reply("click(x=0.4000, y=0.6000)"),
        ],
        repeat_last: false,
    };
    let server = StubServer::start("127.0.0.1:0", script, None)?;
    let backend = RemoteBackend::new(RemoteConfig {
        base_url: server.base_url(),
        backoff_base_ms: 10,
        ..RemoteConfig::default()
    })?;

    let crops = tempfile::tempdir()?;
    let screen = Observation {
        screenshot_ref: fixtures.join("images/desktop.png"),
        size: PixelSize::new(1920, 1080)?,
        step_index: 1,
    };
    let instruction = Instruction::text("close the window");
    let req = GroundingRequest {
        query_id: "close",
        instruction: &instruction,
        observation: &screen,
    };
    let trace = refine_click(&backend, &FsImageService::new(crops.path()), &req, &RefineConfig::default())?;
    println!("first ({:.4}, {:.4})", trace.first_point.x(), trace.first_point.y());
    println!("refined ({:.4}, {:.4}) after {} round(s)", trace.final_point.x(), trace.final_point.y(), trace.rounds);
    println!("server saw {} requests", server.received().len());
    Ok(())
}

#[allow(dead_code)]
fn main() {
    run_example().unwrap();
}
