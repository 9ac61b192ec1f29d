//! SFT versus CoIPO on the bundled synthetic suite, five seeds.
//!
//! `cargo run --release --example directional_experiment [-- <seed>...]`

use coipo::suite::{build_suite, run_directional, DirectionalConfig, SuiteConfig};

fn main() -> Result<(), Box<dyn std::error::Error>> {
    env_logger::Builder::from_env(env_logger::Env::default().default_filter_or("info")).init();
    let mut config = DirectionalConfig::default();
    let seeds: Vec<u64> = std::env::args().skip(1).map(|a| a.parse()).collect::<Result<_, _>>()?;
    if !seeds.is_empty() {
        config.seeds = seeds;
    }
    let suite = build_suite(&SuiteConfig::default())?;
    println!(
        "train pairs {}, eval cases {}, vocab {}",
        suite.train.len(),
        suite.eval_cases.len(),
        suite.vocab.len()
    );
    let out = run_directional(&suite, &config)?;
    for r in &out.runs {
        println!(
            "seed {:>3} {:<6} clean {:.4} noisy {:.4} drop {:+.4} final loss {:.4}",
            r.seed, r.method, r.summary.clean_acc, r.summary.noisy_acc, r.summary.drop, r.final_total
        );
    }
    println!(
        "median drop   sft {:.4}  coipo {:.4}",
        out.median_drop_sft, out.median_drop_coipo
    );
    println!(
        "median noisy  sft {:.4}  coipo {:.4}",
        out.median_noisy_sft, out.median_noisy_coipo
    );
    println!("{:.1}s", out.seconds);
    Ok(())
}
