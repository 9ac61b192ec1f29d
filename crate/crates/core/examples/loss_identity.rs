//! Pull/push KL terms on random logits, and the exact relation between the
//! contrastive loss and the mutual-information gain.

use coipo::loss::{coipo_loss, delta_mi, label_mask, LogitMatrix};
use coipo::rng::SeededRng;
use ndarray::Array2;

fn main() -> Result<(), Box<dyn std::error::Error>> {
    let mut rng = SeededRng::new(1);
    let (prompt_len, label_len, vocab) = (3, 2, 8);
    let mut draw = || -> Result<LogitMatrix, coipo::loss::LossError> {
        let m = Array2::from_shape_fn((prompt_len + label_len, vocab), |_| rng.uniform(-3.0, 3.0));
        LogitMatrix::new(m, prompt_len, label_len)
    };
    let (noisy, same, other) = (draw()?, draw()?, draw()?);
    let mask = label_mask(prompt_len, label_len)?;
    println!("mask rows: {:?}", mask.positions());
    let parts = coipo_loss(&noisy, &same, &other, &mask)?;
    let gain = delta_mi(&noisy, &same, &other, &mask)?;
    println!("pull KL(noisy || same)  = {:.6}", parts.pull_kl);
    println!("push KL(noisy || other) = {:.6}", parts.push_kl);
    println!("coipo = {:.17}", parts.coipo);
    println!("-dMI  = {:.17}", -gain);
    assert_eq!(parts.coipo.to_bits(), (-gain).to_bits());
    let self_pull = coipo_loss(&noisy, &noisy, &other, &mask)?;
    println!("with clean_same = noisy the pull term is {}", self_pull.pull_kl);
    Ok(())
}
