// Screenshot resizing, crop windows and coordinate remapping.

use speechui::geom::*;

pub fn run_example() -> Result<(), Box<dyn std::error::Error>> {
    let spec = ResizeSpec::default();
    for (w, h) in [(1080, 2400), (1920, 1080), (3840, 2160)] {
        let size = PixelSize::new(w, h)?;
        let out = smart_resize(size, &spec);
        println!("{w}x{h} -> {}x{} ({} tokens)", out.width, out.height, spec.token_count(out));
    }

    let screen = PixelSize::new(1080, 2400)?;
    let first = NormPoint::new(0.92, 0.05)?;
    let window = crop_window(&first, screen, 2.0)?;
    println!(
        "crop around ({}, {}): origin ({}, {}), {}x{}",
        first.x(),
        first.y(),
        window.origin_x,
        window.origin_y,
        window.width,
        window.height
    );

    // A crop-local answer maps back to the full screen and round-trips.
    let local = NormPoint::new(0.25, 0.75)?;
    let global = local_to_global(&local, &window, screen);
    let back = global_to_local(&global, &window, screen)?;
    println!("local ({}, {}) -> global ({:.4}, {:.4})", local.x(), local.y(), global.x(), global.y());
    assert!((back.x() - local.x()).abs() < 1e-9 && (back.y() - local.y()).abs() < 1e-9);

    let target = NormBox::new(0.80, 0.02, 0.88, 0.06)?;
    println!("deviation of the first click from the target: {:.4}", deviation(&first, &target));
    println!("deviation of the remapped click: {:.4}", deviation(&global, &target));
    Ok(())
}

#[allow(dead_code)]
fn main() {
    run_example().unwrap();
}
