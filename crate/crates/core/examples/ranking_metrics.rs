//! Average precision, mAP, Rank@K and the composite score on hand-made
//! ranked lists.
//!
//! cargo run --example ranking_metrics

use std::collections::BTreeMap;

use anyhow::Result;
use kinship_retrieval::evaluation::{
    average_precision, composite_score, mean_average_precision, rank_at_k, RelevanceJudgments,
};
use kinship_retrieval::retrieval::RankedList;

fn list(probe: &str, gallery: &[&str]) -> RankedList {
    RankedList {
        probe: probe.into(),
        gallery: gallery.iter().map(|s| s.to_string()).collect(),
        scores: Vec::new(),
    }
}

fn main() -> Result<()> {
    let judgments = RelevanceJudgments {
        relevant: BTreeMap::from([
            ("P1".to_string(), ["A", "C"].map(String::from).into()),
            ("P2".to_string(), ["D"].map(String::from).into()),
            ("P3".to_string(), Default::default()),
        ]),
    };
    let lists = [
        list("P1", &["A", "B", "C", "D"]),
        list("P2", &["A", "B", "C", "D"]),
        list("P3", &["A", "B", "C", "D"]),
    ];
    for l in &lists {
        let rel = &judgments.relevant[&l.probe];
        println!("{} AP = {:.4}", l.probe, average_precision(&l.gallery, rel));
    }
    let map = mean_average_precision(&lists, &judgments)?;
    println!(
        "mAP = {:.4} over {} probes ({} without kin excluded)",
        map.value, map.evaluated, map.excluded
    );
    for k in [1, 2, 4] {
        let r = rank_at_k(&lists, &judgments, k)?;
        println!(
            "Rank@{k} = {r:.2}, composite = {:.4}",
            composite_score(map.value, r)
        );
    }
    Ok(())
}
