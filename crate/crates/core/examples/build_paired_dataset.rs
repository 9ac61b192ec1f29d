//! Renders the bundled suite records through their templates, perturbs them
//! and samples contrastive triples.
//!
//! `cargo run --example build_paired_dataset -- [out.jsonl]`

use coipo::pairs::{build_pairs, make_triples, parse_records_jsonl, parse_templates, write_jsonl};
use coipo::perturb::{PerturbationConfig, Perturber};
use coipo::rng::SeededRng;
use coipo::suite::{SUITE_RECORDS_JSONL, SUITE_TEMPLATES_JSON};

fn main() -> Result<(), Box<dyn std::error::Error>> {
    let templates = parse_templates(SUITE_TEMPLATES_JSON)?;
    let records = parse_records_jsonl(SUITE_RECORDS_JSONL)?;
    let perturber = Perturber::new(PerturbationConfig::default())?;
    let pairs = build_pairs(&records, &templates, &perturber, 200, &mut SeededRng::new(7))?;
    for p in pairs.iter().take(3) {
        println!(
            "[{}] {}\n  noisy: {}\n  target: {}\n",
            p.task_name, p.original_instruction, p.paraphrased_instruction, p.targets
        );
    }
    let triples = make_triples(&pairs, &mut SeededRng::new(8))?;
    let t = &triples[0];
    println!(
        "triple: noisy={:?}\n        same={:?}\n        other={:?} ({})",
        t.noisy, t.clean_same, t.clean_other, t.task_name_other
    );
    if let Some(path) = std::env::args().nth(1) {
        let n = write_jsonl(&pairs, path.as_ref())?;
        println!("wrote {n} pairs to {path}");
    }
    Ok(())
}
