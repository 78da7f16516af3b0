//! Trains the FC similarity head with BCE and focal loss and checks it on
//! pairs from unseen families.
//!
//! cargo run --release --example train_head

use anyhow::Result;
use kinship_retrieval::pairing::sample_pairs;
use kinship_retrieval::similarity::{Combination, SimilarityHead};
use kinship_retrieval::synth::{generate, SynthParams};
use kinship_retrieval::training::{pair_accuracy, train, LossKind, TrainConfig};

fn main() -> Result<()> {
    let train_set = generate(&SynthParams {
        seed: 1,
        ..SynthParams::default()
    })?;
    let unseen = generate(&SynthParams {
        seed: 2,
        ..SynthParams::default()
    })?;
    let train_pairs = sample_pairs(&train_set.manifest, 500, 500, 1)?.pairs;
    let test_pairs = sample_pairs(&unseen.manifest, 500, 500, 2)?.pairs;

    for (loss_kind, comb) in [
        (LossKind::Bce, Combination::Comb1),
        (LossKind::Focal, Combination::Comb1),
        (LossKind::Bce, Combination::Comb2),
    ] {
        let config = TrainConfig {
            loss_kind,
            epochs: 60,
            ..TrainConfig::default()
        };
        let report = train(&train_set.store, &train_pairs, comb, &config)?;
        let curve: Vec<String> = report
            .epoch_losses
            .iter()
            .step_by(15)
            .map(|l| format!("{l:.3}"))
            .collect();
        println!(
            "{loss_kind:>5} {comb}: loss {} → {:.4}, unseen accuracy {:.3}",
            curve.join(" → "),
            report.final_loss().unwrap(),
            pair_accuracy(&report.head, &unseen.store, &test_pairs)?
        );

        let restored = SimilarityHead::from_json(&report.head.to_json()?)?;
        assert_eq!(restored, report.head);
    }
    Ok(())
}
