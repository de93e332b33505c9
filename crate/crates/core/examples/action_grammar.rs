// Parsing model replies into actions and matching them against ground truth.

use speechui::action::*;
use speechui::geom::{NormBox, NormPoint};

pub fn run_example() -> Result<(), Box<dyn std::error::Error>> {
    let reply = ActionText::new("The alarm tab is at the bottom.\nclick(x=0.4210, y=0.9130)")?;
    let action = parse_action(&reply)?;
    println!("parsed {action:?}");
    println!("canonical form: {}", serialize_action(&action).as_str());

    for raw in ["type(text='7:30 am')", "scroll(direction='down')", "terminate(status='success')"] {
        let a = parse_action(&ActionText::new(raw)?)?;
        assert_eq!(serialize_action(&a).as_str(), raw);
        println!("{raw} -> {:?}", a.kind());
    }

    match parse_action(&ActionText::new("tap the second button")?) {
        Ok(a) => println!("unexpected {a:?}"),
        Err(e) => println!("rejected: {e}"),
    }

    // Clicks match inside the ground-truth box, or within the radius of its point.
    let rules = MatchRules::default();
    let gt = Action::Click {
        point: NormPoint::new(0.42, 0.90)?,
    };
    let bbox = NormBox::new(0.38, 0.88, 0.46, 0.94)?;
    println!("inside box: {}", actions_match(&action, &gt, Some(&bbox), &rules));
    let far = Action::Click {
        point: NormPoint::new(0.42, 0.60)?,
    };
    println!("far click without box: {}", actions_match(&far, &gt, None, &rules));
    Ok(())
}

#[allow(dead_code)]
fn main() {
    run_example().unwrap();
}
