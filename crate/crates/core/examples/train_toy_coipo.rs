//! Trains the toy LM with CoIPO + CE on the bundled suite, saves a
//! checkpoint and prints the loss curve.
//!
//! `cargo run --release --example train_toy_coipo -- [checkpoint.json]`

use coipo::loss::LossConfig;
use coipo::model::{encode_triple, train, ModelConfig, OptimizerState, ToyLm};
use coipo::pairs::make_triples;
use coipo::rng::SeededRng;
use coipo::suite::{build_suite, SuiteConfig};

fn main() -> Result<(), Box<dyn std::error::Error>> {
    let suite = build_suite(&SuiteConfig::default())?;
    let config = ModelConfig {
        max_seq: 64,
        ..ModelConfig::default()
    };
    let init = ToyLm::new(config, suite.vocab.clone())?;
    let triples = make_triples(&suite.train, &mut SeededRng::new(1))?;
    let tokens = triples
        .iter()
        .map(|t| encode_triple(&init.vocab, t))
        .collect::<Result<Vec<_>, _>>()?;
    let mut opt = OptimizerState::new(1e-4);
    let out = train(
        init.params.clone(),
        &tokens,
        &LossConfig::default(),
        &mut opt,
        1,
        64,
        42,
    )?;
    for m in out.log.iter().step_by(4) {
        println!(
            "step {:>3} total {:.4} ce {:.4} pull {:.4} push {:.4}",
            m.step, m.total, m.ce, m.pull_kl, m.push_kl
        );
    }
    let model = ToyLm {
        params: out.params,
        ..init
    };
    if let Some(path) = std::env::args().nth(1) {
        model.save(path.as_ref())?;
        println!("saved {path}");
    }
    Ok(())
}
