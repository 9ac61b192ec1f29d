//! Applies each perturbation kind to one prompt and shows the edit log.
//!
//! `cargo run --example perturb_prompt -- "<prompt>" [seed]`

use coipo::perturb::{replay, CleanPrompt, PerturbationConfig, PerturbationKind, Perturber};
use coipo::rng::SeededRng;

fn main() -> Result<(), Box<dyn std::error::Error>> {
    let mut args = std::env::args().skip(1);
    let text = args
        .next()
        .unwrap_or_else(|| "Is the following review positive or negative? the film was great".into());
    let seed: u64 = args.next().map(|s| s.parse()).transpose()?.unwrap_or(42);
    let perturber = Perturber::new(PerturbationConfig::default())?;
    let clean = CleanPrompt::new(text.clone())?;
    println!("clean: {text}");
    for kind in PerturbationKind::ALL {
        let out = perturber.perturb(&clean, Some(kind), &mut SeededRng::new(seed))?;
        println!("\n{kind} (radius {}): {}", out.radius, out.text);
        for e in &out.edits {
            println!("  {:?} at {}: {:?} -> {:?}", e.op, e.position, e.before, e.after);
        }
        assert_eq!(replay(&text, &out.edits)?, out.text);
    }
    Ok(())
}
