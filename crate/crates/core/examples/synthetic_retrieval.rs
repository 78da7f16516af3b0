//! Probe/gallery retrieval on synthetic family-structured embeddings with
//! the cosine scorer, from raw vectors to mAP and Rank@K.
//!
//! cargo run --example synthetic_retrieval -- [seed]

use anyhow::Result;
use kinship_retrieval::evaluation::{evaluate, RelevanceJudgments};
use kinship_retrieval::retrieval::{merge_by_identity, rank, score_pairs, Scorer};
use kinship_retrieval::synth::{generate, SynthParams};

fn main() -> Result<()> {
    let seed = std::env::args()
        .nth(1)
        .map(|s| s.parse())
        .transpose()?
        .unwrap_or(0);
    let params = SynthParams {
        seed,
        ..SynthParams::default()
    };
    let ds = generate(&params)?;
    println!(
        "{} families, {} identities, {} images (D = {})",
        ds.manifest.family_count(),
        ds.manifest.identity_count(),
        ds.manifest.image_count(),
        ds.store.dim()
    );

    let probe = ds.probe_store()?;
    let gallery = ds.gallery_store()?;
    let table = score_pairs(&probe, &gallery, &Scorer::Cosine)?;
    let merged = merge_by_identity(&table, &ds.manifest, &ds.manifest)?;
    let lists = rank(&merged, false);

    let first = &lists[0];
    println!("\ntop of the list for {}:", first.probe);
    for (g, s) in first.gallery.iter().zip(&first.scores).take(5) {
        let kin =
            ds.manifest.family_of_identity(g)? == ds.manifest.family_of_identity(&first.probe)?;
        println!("  {g:<12} {s:+.4}{}", if kin { "  (kin)" } else { "" });
    }

    let judgments = RelevanceJudgments::for_ranked_lists(&ds.manifest, &lists)?;
    let report = evaluate(
        &lists,
        &judgments,
        10,
        &[1, 5],
        serde_json::json!({ "seed": seed }),
    )?;
    println!("\n{}", report.to_json()?);
    Ok(())
}
