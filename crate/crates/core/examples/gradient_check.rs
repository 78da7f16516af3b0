//! Compares hand-written backpropagation against central differences on a
//! freshly initialised head.
//!
//! cargo run --example gradient_check -- [seed]

use anyhow::Result;
use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;

use kinship_retrieval::similarity::{combine, Combination, SimilarityHead, DEFAULT_HIDDEN};
use kinship_retrieval::training::{
    backward, numerical_gradient, sample_loss, Loss, DEFAULT_FD_EPSILON,
};

fn main() -> Result<()> {
    let seed = std::env::args()
        .nth(1)
        .map(|s| s.parse())
        .transpose()?
        .unwrap_or(7);
    let mut rng = ChaCha8Rng::seed_from_u64(seed);
    let x: Vec<f64> = (0..4).map(|_| rng.random_range(-1.0..1.0)).collect();
    let y: Vec<f64> = (0..4).map(|_| rng.random_range(-1.0..1.0)).collect();

    for comb in Combination::ALL {
        let head = SimilarityHead::xavier(comb, 4, &DEFAULT_HIDDEN, &mut rng);
        let input = combine(comb, &x, &y)?;
        for loss in [Loss::bce(), Loss::focal(2.0)] {
            for label in [0, 1] {
                let analytic = backward(&head, &input, label, loss)?.flatten();
                let mut probe = head.clone();
                let numeric = numerical_gradient(
                    |p| {
                        probe.set_params(p).unwrap();
                        sample_loss(&probe, &input, label, loss).unwrap()
                    },
                    &head.params(),
                    DEFAULT_FD_EPSILON,
                );
                let diff: f64 = analytic
                    .iter()
                    .zip(&numeric)
                    .map(|(a, n)| (a - n).powi(2))
                    .sum();
                let scale: f64 = analytic.iter().map(|a| a * a).sum();
                println!(
                    "{comb} {:>5?} label {label}: {} params, relative error {:.2e}",
                    loss.kind,
                    analytic.len(),
                    (diff / scale).sqrt()
                );
            }
        }
    }
    Ok(())
}
