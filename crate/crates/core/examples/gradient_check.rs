//! Central finite differences against the hand-written backward pass on the
//! tiny model, for each loss preset.

use coipo::loss::LossConfig;
use coipo::model::{grad_check_sampled, ModelConfig, Parameters, TokenTriple};

fn main() -> Result<(), Box<dyn std::error::Error>> {
    let params = Parameters::init(&ModelConfig::tiny(), 12)?;
    let triple = TokenTriple::align(&[4, 5, 3, 6], &[4, 5, 6], &[7, 8, 9, 10, 11], &[3, 11])?;
    println!("{} parameter entries", params.num_entries());
    for (name, cfg) in [
        ("sft", LossConfig::sft()),
        ("coipo+ce", LossConfig::default()),
        ("cl", LossConfig::cl()),
        ("invdpo", LossConfig::invdpo()),
    ] {
        let r = grad_check_sampled(&params, &triple, &cfg, 1e-4, None)?;
        println!(
            "{name:<9} max rel err {:.3e} over {} entries (worst entry {})",
            r.max_rel_error, r.entries_checked, r.worst_entry
        );
    }
    Ok(())
}
