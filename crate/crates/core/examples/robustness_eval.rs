//! Scores a freshly initialized model on the held-out suite cases and prints
//! the per-task accuracy grid, accuracy-versus-radius curve and decoding
//! radii.

use coipo::eval::{evaluate_cases, grid_csv, render_report, DEFAULT_THRESHOLDS};
use coipo::model::{ModelConfig, ToyLm};
use coipo::suite::{build_suite, SuiteConfig};

fn main() -> Result<(), Box<dyn std::error::Error>> {
    let suite = build_suite(&SuiteConfig::default())?;
    let model = ToyLm::new(
        ModelConfig {
            max_seq: 64,
            ..ModelConfig::default()
        },
        suite.vocab.clone(),
    )?;
    let results = evaluate_cases(&model, &suite.eval_cases)?;
    let report = render_report("untrained", &results, &DEFAULT_THRESHOLDS)?;
    print!("{}", grid_csv(std::slice::from_ref(&report)));
    println!("\naccuracy by radius:");
    for p in &report.curve.points {
        println!("  r={:<2} {:.3}", p.radius, p.accuracy);
    }
    for r in &report.decoding_radii {
        println!("decoding radius at {:.1}: {:?}", r.threshold, r.radius);
    }
    println!(
        "drop histogram {:?} (excluded {})",
        report.drop_buckets, report.drop_excluded
    );
    Ok(())
}
