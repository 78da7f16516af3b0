//! Samples balanced kin / non-kin training pairs and writes them as CSV.
//!
//! cargo run --example pair_sampling -- [n-per-class] [seed]

use anyhow::Result;
use kinship_retrieval::pairing::{sample_pairs, write_pairs_csv};
use kinship_retrieval::synth::{generate, SynthParams};

fn main() -> Result<()> {
    let mut args = std::env::args().skip(1);
    let n: usize = args.next().map(|s| s.parse()).transpose()?.unwrap_or(1000);
    let seed: u64 = args.next().map(|s| s.parse()).transpose()?.unwrap_or(0);

    let ds = generate(&SynthParams::default())?;
    let sample = sample_pairs(&ds.manifest, n, n, seed)?;
    println!(
        "positives {}/{} (available {}), negatives {}/{} (available {})",
        sample.positives(),
        sample.requested_pos,
        sample.available_pos,
        sample.negatives(),
        sample.requested_neg,
        sample.available_neg
    );
    if sample.shortfall_pos() > 0 {
        println!("short by {} positive pairs", sample.shortfall_pos());
    }
    for p in sample
        .pairs
        .iter()
        .take(3)
        .chain(sample.pairs.iter().rev().take(3))
    {
        println!("  {} {} {}", p.image_a, p.image_b, p.label);
    }

    let dir = tempfile::tempdir()?;
    let out = dir.path().join("pairs.csv");
    write_pairs_csv(&sample.pairs, &out)?;
    println!(
        "{} lines written",
        std::fs::read_to_string(&out)?.lines().count()
    );
    Ok(())
}
