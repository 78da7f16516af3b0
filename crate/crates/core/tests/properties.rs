//! Cross-module invariants, mostly as property tests.

use std::collections::{BTreeMap, BTreeSet, HashSet};
use std::fs;

use proptest::prelude::*;
use rand::seq::SliceRandom;
use rand::SeedableRng;
use rand_chacha::ChaCha8Rng;

use kinship_retrieval::embedding::EmbeddingStore;
use kinship_retrieval::evaluation::{
    average_precision, composite_score, evaluate_retrieval, mean_average_precision, rank_at_k,
    RelevanceJudgments,
};
use kinship_retrieval::manifest::{DatasetManifest, FamilyRecord, IdentityRecord};
use kinship_retrieval::pairing::sample_pairs;
use kinship_retrieval::retrieval::{
    merge_by_identity, rank, score_pairs, RankedList, ScoreTable, Scorer,
};
use kinship_retrieval::similarity::{combine, Combination, SimilarityHead, DEFAULT_HIDDEN};
use kinship_retrieval::synth::{generate, SynthParams};
use kinship_retrieval::training::{bce_loss, focal_loss};

/// Manifest with `shape[f][i]` images for identity `i` of family `f`.
fn manifest_from_shape(shape: &[Vec<usize>]) -> DatasetManifest {
    let families = shape
        .iter()
        .enumerate()
        .map(|(f, ids)| FamilyRecord {
            id: format!("F{f:02}"),
            identities: ids
                .iter()
                .enumerate()
                .map(|(i, &n)| IdentityRecord {
                    id: format!("F{f:02}/M{i}"),
                    images: (0..n).map(|p| format!("F{f:02}/M{i}/P{p}")).collect(),
                })
                .collect(),
        })
        .collect();
    DatasetManifest::new(families).unwrap()
}

fn manifest_shape() -> impl Strategy<Value = Vec<Vec<usize>>> {
    prop::collection::vec(prop::collection::vec(1usize..4, 2..4), 1..5)
}

fn ranked(probe: &str, gallery: &[&str]) -> RankedList {
    RankedList {
        probe: probe.into(),
        gallery: gallery.iter().map(|s| s.to_string()).collect(),
        scores: Vec::new(),
    }
}

fn naive_ap(ranking: &[usize], relevant: &BTreeSet<usize>) -> f64 {
    let mut sum = 0.0;
    for k in 0..ranking.len() {
        if relevant.contains(&ranking[k]) {
            let above = ranking[..=k]
                .iter()
                .filter(|g| relevant.contains(g))
                .count();
            sum += above as f64 / (k + 1) as f64;
        }
    }
    sum / relevant.len() as f64
}

fn permutations(n: usize) -> Vec<Vec<usize>> {
    if n == 0 {
        return vec![Vec::new()];
    }
    let mut out = Vec::new();
    for p in permutations(n - 1) {
        for pos in 0..=p.len() {
            let mut q = p.clone();
            q.insert(pos, n - 1);
            out.push(q);
        }
    }
    out
}

#[test]
fn map_matches_brute_force_over_all_permutations() {
    for size in 1..=6usize {
        let perms = permutations(size);
        for mask in 1u32..(1 << size) {
            let relevant: BTreeSet<usize> = (0..size).filter(|i| mask >> i & 1 == 1).collect();
            let names: BTreeSet<String> = relevant.iter().map(|g| format!("g{g}")).collect();
            let mut lists = Vec::new();
            let mut judgments = RelevanceJudgments::default();
            let mut expected = 0.0;
            for (p, perm) in perms.iter().enumerate() {
                let probe = format!("p{p}");
                lists.push(RankedList {
                    probe: probe.clone(),
                    gallery: perm.iter().map(|g| format!("g{g}")).collect(),
                    scores: Vec::new(),
                });
                judgments.relevant.insert(probe, names.clone());
                expected += naive_ap(perm, &relevant);
            }
            expected /= perms.len() as f64;
            let got = mean_average_precision(&lists, &judgments).unwrap().value;
            assert!(
                (got - expected).abs() < 1e-12,
                "size {size} mask {mask:b}: {got} vs {expected}"
            );
        }
    }
}

#[test]
fn retrieval_quality_tracks_separation() {
    let ratios = [0.25, 0.5, 1.0, 2.0, 4.0, 10.0];
    let mut previous = 0.0;
    for ratio in ratios {
        let mut total = 0.0;
        for seed in 0..5 {
            let params = SynthParams {
                image_noise: 1.0 / ratio,
                seed,
                ..SynthParams::default()
            };
            let ds = generate(&params).unwrap();
            let report = evaluate_retrieval(
                &ds.manifest,
                &ds.probe_store().unwrap(),
                &ds.gallery_store().unwrap(),
                &Scorer::Cosine,
                10,
                false,
                serde_json::Value::Null,
            )
            .unwrap();
            total += report.map;
        }
        let mean = total / 5.0;
        assert!(
            mean >= previous,
            "ratio {ratio}: mean mAP {mean} < {previous}"
        );
        previous = mean;
    }
    assert!(previous >= 0.9);
}

#[test]
fn synth_manifest_round_trips_and_validates() {
    let ds = generate(&SynthParams::default()).unwrap();
    let again = DatasetManifest::from_json(&ds.manifest.to_json().unwrap()).unwrap();
    assert_eq!(again, ds.manifest);
    for image in ds.manifest.image_ids() {
        assert!(ds.store.contains(image));
    }
}

proptest! {
    #![proptest_config(ProptestConfig::with_cases(48))]

    #[test]
    fn same_family_symmetric_and_reflexive(shape in manifest_shape()) {
        let m = manifest_from_shape(&shape);
        let images: Vec<&str> = m.image_ids().collect();
        for a in &images {
            prop_assert!(m.same_family(a, a).unwrap());
            for b in &images {
                prop_assert_eq!(m.same_family(a, b).unwrap(), m.same_family(b, a).unwrap());
            }
        }
    }

    #[test]
    fn every_image_has_one_identity_and_family(shape in manifest_shape()) {
        let m = manifest_from_shape(&shape);
        let mut seen = HashSet::new();
        for (family, identity) in m.identities() {
            for image in &identity.images {
                prop_assert!(seen.insert(image.clone()));
                prop_assert_eq!(m.identity_of(image).unwrap(), identity.id.as_str());
                prop_assert_eq!(m.family_of(image).unwrap(), family.id.as_str());
            }
        }
        prop_assert_eq!(seen.len(), m.image_count());
    }

    #[test]
    fn scan_is_order_independent(shape in manifest_shape(), seed in any::<u64>()) {
        let expected = manifest_from_shape(&shape);
        let mut files: Vec<String> = expected.image_ids().map(|i| format!("{i}.jpg")).collect();
        files.shuffle(&mut ChaCha8Rng::seed_from_u64(seed));
        let dir = tempfile::tempdir().unwrap();
        for f in &files {
            let path = dir.path().join(f);
            fs::create_dir_all(path.parent().unwrap()).unwrap();
            fs::write(path, b"").unwrap();
        }
        let first = DatasetManifest::scan(dir.path()).unwrap();
        prop_assert_eq!(&first, &expected);
        prop_assert_eq!(DatasetManifest::scan(dir.path()).unwrap(), first);
    }

    #[test]
    fn pairs_are_labelled_unique_and_balanced(
        shape in prop::collection::vec(prop::collection::vec(1usize..4, 2..4), 2..5),
        n_pos in 0usize..40,
        n_neg in 0usize..40,
        seed in any::<u64>(),
    ) {
        let m = manifest_from_shape(&shape);
        let sample = sample_pairs(&m, n_pos, n_neg, seed).unwrap();
        let mut seen = HashSet::new();
        for p in &sample.pairs {
            prop_assert_eq!(p.label == 1, m.same_family(&p.image_a, &p.image_b).unwrap());
            prop_assert!(p.image_a != p.image_b);
            let key = if p.image_a < p.image_b {
                (p.image_a.clone(), p.image_b.clone())
            } else {
                (p.image_b.clone(), p.image_a.clone())
            };
            prop_assert!(seen.insert(key));
        }
        prop_assert_eq!(sample.positives(), n_pos.min(sample.available_pos as usize));
        prop_assert_eq!(sample.negatives(), n_neg.min(sample.available_neg as usize));
    }

    #[test]
    fn fc_forward_is_deterministic_and_bounded(
        seed in any::<u64>(),
        x in prop::collection::vec(-50.0f64..50.0, 3),
        y in prop::collection::vec(-50.0f64..50.0, 3),
    ) {
        for comb in Combination::ALL {
            let head = SimilarityHead::xavier(comb, 3, &DEFAULT_HIDDEN, &mut ChaCha8Rng::seed_from_u64(seed));
            let input = combine(comb, &x, &y).unwrap();
            let s = head.forward(&input).unwrap();
            prop_assert!(s.is_finite() && (0.0..=1.0).contains(&s));
            prop_assert_eq!(s.to_bits(), head.forward(&input).unwrap().to_bits());
        }
    }

    #[test]
    fn losses_nonnegative_and_decreasing(a in 0.001f64..0.999, b in 0.001f64..0.999, gamma in 0.0f64..5.0) {
        let (lo, hi) = if a < b { (a, b) } else { (b, a) };
        prop_assume!(hi - lo > 1e-9);
        for label in [0u8, 1] {
            prop_assert!(bce_loss(a, label) >= 0.0);
            prop_assert!(focal_loss(a, label, gamma) >= 0.0);
        }
        prop_assert!(bce_loss(hi, 1) < bce_loss(lo, 1));
        prop_assert!(focal_loss(hi, 1, gamma) < focal_loss(lo, 1, gamma));
    }

    #[test]
    fn rank_is_a_permutation_and_order_invariant(
        scores in prop::collection::vec(-1.0f64..1.0, 36),
        seed in any::<u64>(),
    ) {
        // 2 probe images × 3 gallery identities × 2 images each
        let m = manifest_from_shape(&[vec![2, 2], vec![2, 2]]);
        let probes = vec!["F00/M0/P0".to_string(), "F00/M0/P1".into()];
        let gallery: Vec<String> = m
            .image_ids()
            .filter(|i| !i.starts_with("F00/M0/"))
            .map(String::from)
            .collect();
        let table = ScoreTable {
            scorer: "test".into(),
            probes: probes.clone(),
            gallery: gallery.clone(),
            scores: scores[..probes.len() * gallery.len()].to_vec(),
        };
        let lists = rank(&merge_by_identity(&table, &m, &m).unwrap(), false);

        let mut rng = ChaCha8Rng::seed_from_u64(seed);
        let mut p_order: Vec<usize> = (0..probes.len()).collect();
        let mut g_order: Vec<usize> = (0..gallery.len()).collect();
        p_order.shuffle(&mut rng);
        g_order.shuffle(&mut rng);
        let shuffled = ScoreTable {
            scorer: "test".into(),
            probes: p_order.iter().map(|&i| probes[i].clone()).collect(),
            gallery: g_order.iter().map(|&j| gallery[j].clone()).collect(),
            scores: p_order
                .iter()
                .flat_map(|&i| g_order.iter().map(|&j| table.get(i, j)).collect::<Vec<_>>())
                .collect(),
        };
        prop_assert_eq!(&rank(&merge_by_identity(&shuffled, &m, &m).unwrap(), false), &lists);

        let identities: BTreeSet<&str> = gallery.iter().map(|g| m.identity_of(g).unwrap()).collect();
        for l in &lists {
            let got: BTreeSet<&str> = l.gallery.iter().map(String::as_str).collect();
            prop_assert_eq!(&got, &identities);
            prop_assert_eq!(l.gallery.len(), identities.len());
        }
    }

    #[test]
    fn cosine_ranking_ignores_gallery_scale(seed in 0u64..1000, factor in 0.01f32..100.0) {
        let ds = generate(&SynthParams { n_families: 4, dim: 8, image_noise: 1.0, seed, ..SynthParams::default() }).unwrap();
        let probe = ds.probe_store().unwrap();
        let gallery = ds.gallery_store().unwrap();
        let order = |g: &EmbeddingStore| {
            let t = score_pairs(&probe, g, &Scorer::Cosine).unwrap();
            rank(&merge_by_identity(&t, &ds.manifest, &ds.manifest).unwrap(), false)
                .into_iter()
                .map(|l| l.gallery)
                .collect::<Vec<_>>()
        };
        prop_assert_eq!(order(&gallery), order(&gallery.scaled(factor).unwrap()));
    }

    #[test]
    fn rank_at_k_is_monotone_in_k(seed in any::<u64>(), n in 2usize..12, n_rel in 1usize..3) {
        let mut gallery: Vec<String> = (0..n).map(|i| format!("g{i}")).collect();
        gallery.shuffle(&mut ChaCha8Rng::seed_from_u64(seed));
        let relevant: BTreeSet<String> = (0..n_rel.min(n)).map(|i| format!("g{i}")).collect();
        let lists = vec![RankedList { probe: "p".into(), gallery, scores: Vec::new() }];
        let j = RelevanceJudgments { relevant: BTreeMap::from([("p".to_string(), relevant)]) };
        let mut previous = 0.0;
        for k in 1..=n + 2 {
            let r = rank_at_k(&lists, &j, k).unwrap();
            prop_assert!(r >= previous);
            previous = r;
        }
        prop_assert_eq!(previous, 1.0);
    }

    #[test]
    fn ap_perfect_prefix_and_tail_invariance(n_rel in 1usize..5, n_irr in 0usize..6, seed in any::<u64>()) {
        let rel: Vec<String> = (0..n_rel).map(|i| format!("r{i}")).collect();
        let mut irr: Vec<String> = (0..n_irr).map(|i| format!("x{i}")).collect();
        let relevant: BTreeSet<String> = rel.iter().cloned().collect();
        let perfect: Vec<String> = rel.iter().chain(&irr).cloned().collect();
        prop_assert_eq!(average_precision(&perfect, &relevant), 1.0);

        // one irrelevant item above the last relevant one, the rest below
        prop_assume!(n_irr >= 1);
        let mut list = vec![irr[0].clone()];
        list.extend(rel.iter().cloned());
        let base = average_precision(&[list.clone(), irr[1..].to_vec()].concat(), &relevant);
        irr[1..].shuffle(&mut ChaCha8Rng::seed_from_u64(seed));
        list.extend(irr[1..].iter().cloned());
        prop_assert_eq!(average_precision(&list, &relevant), base);
    }

    #[test]
    fn composite_is_symmetric(a in 0.0f64..1.0, b in 0.0f64..1.0) {
        prop_assert_eq!(composite_score(a, b), composite_score(b, a));
    }
}

#[test]
fn ranked_helper_matches_hand_case() {
    let j = RelevanceJudgments {
        relevant: BTreeMap::from([(
            "P".to_string(),
            ["A", "C"].iter().map(|s| s.to_string()).collect(),
        )]),
    };
    let m = mean_average_precision(&[ranked("P", &["A", "B", "C"])], &j).unwrap();
    assert!((m.value - 5.0 / 6.0).abs() < 1e-15);
}
