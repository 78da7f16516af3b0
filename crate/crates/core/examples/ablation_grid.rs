//! Runs the loss × combination (FC) and loss × pooling (cosine) grid on
//! synthetic feature maps and prints the composite-score table.
//!
//! cargo run --release --example ablation_grid

use anyhow::Result;
use kinship_retrieval::evaluation::{run_grid, FeatureSource, GridInputs, GridSpec};
use kinship_retrieval::pairing::sample_pairs;
use kinship_retrieval::synth::{feature_maps, generate, SynthParams};
use kinship_retrieval::training::TrainConfig;

fn main() -> Result<()> {
    // noisy enough that the cells differ
    let params = SynthParams {
        image_noise: 2.0,
        identity_spread: 0.5,
        ..SynthParams::default()
    };
    let ds = generate(&params)?;
    let maps = feature_maps(&ds.store, 3, 3, 2.0, params.seed)?;
    let probe_ids =
        kinship_retrieval::synth::Split::images(&ds.manifest, &ds.split.probe_identities);
    let gallery_ids =
        kinship_retrieval::synth::Split::images(&ds.manifest, &ds.split.gallery_identities);

    let train_ds = generate(&SynthParams {
        seed: 100,
        ..params.clone()
    })?;
    let pairs = sample_pairs(&train_ds.manifest, 400, 400, 0)?.pairs;

    let inputs = GridInputs {
        manifest: ds.manifest.clone(),
        probe: FeatureSource::Maps(maps.subset(probe_ids)?),
        gallery: FeatureSource::Maps(maps.subset(gallery_ids)?),
        train: FeatureSource::Vectors(train_ds.store),
        pairs,
        train_config: TrainConfig {
            epochs: 40,
            ..TrainConfig::default()
        },
        k: 10,
        exclude_self: false,
    };
    let table = run_grid(&inputs, &GridSpec::full());
    print!("{}", table.to_csv());
    for row in &table.rows {
        if let Some(r) = row.report() {
            println!(
                "{:>6} {:>5} {:>5}: mAP {:.3}  Rank@10 {:.3}",
                row.similarity, row.variant, row.loss, r.map, r.rank_at_k[&10]
            );
        }
    }
    Ok(())
}
