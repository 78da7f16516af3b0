//! Labeled training pairs: positives drawn within a family, negatives
//! across families.
//!
//! Sampling is uniform over unordered image pairs of each class, without
//! replacement, driven by a seeded ChaCha8 stream ([`RNG_ALGORITHM`]).

use std::collections::HashSet;
use std::fs;
use std::path::Path;

use rand::seq::index;
use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;
use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};
use crate::manifest::DatasetManifest;

/// Identifier of the pseudo-random generator and sampling routine,
/// recorded next to every pairs file.
pub const RNG_ALGORITHM: &str = "chacha8-rand0.9/pairs-v1";

/// Pair counts per class used for training.
pub const DEFAULT_PAIRS_PER_CLASS: usize = 5000;

/// Below this many candidate pairs in a class, sampling enumerates them all.
const ENUMERATION_LIMIT: u64 = 2_000_000;

#[derive(Debug, Clone, PartialEq, Eq, Hash, Serialize, Deserialize)]
pub struct LabeledPair {
    pub image_a: String,
    pub image_b: String,
    pub label: u8,
}

impl LabeledPair {
    pub fn is_positive(&self) -> bool {
        self.label == 1
    }
}

/// Result of [`sample_pairs`]: the pairs plus any shortfall against the request.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct PairSample {
    pub pairs: Vec<LabeledPair>,
    pub requested_pos: usize,
    pub requested_neg: usize,
    pub available_pos: u64,
    pub available_neg: u64,
    pub seed: u64,
    pub algorithm: String,
}

impl PairSample {
    pub fn positives(&self) -> usize {
        self.pairs.iter().filter(|p| p.is_positive()).count()
    }

    pub fn negatives(&self) -> usize {
        self.pairs.len() - self.positives()
    }

    pub fn shortfall_pos(&self) -> usize {
        self.requested_pos - self.positives()
    }

    pub fn shortfall_neg(&self) -> usize {
        self.requested_neg - self.negatives()
    }
}

struct Population<'a> {
    /// Images grouped by family, manifest order.
    families: Vec<Vec<&'a str>>,
    /// Flat list of (family index, image).
    images: Vec<(usize, &'a str)>,
}

impl<'a> Population<'a> {
    fn new(manifest: &'a DatasetManifest) -> Self {
        let families: Vec<Vec<&str>> = manifest
            .families()
            .iter()
            .map(|f| {
                f.identities
                    .iter()
                    .flat_map(|i| i.images.iter().map(String::as_str))
                    .collect()
            })
            .collect();
        let images = families
            .iter()
            .enumerate()
            .flat_map(|(fi, imgs)| imgs.iter().map(move |&img| (fi, img)))
            .collect();
        Self { families, images }
    }

    fn positive_count(&self) -> u64 {
        self.families.iter().map(|f| choose2(f.len() as u64)).sum()
    }

    fn total_count(&self) -> u64 {
        choose2(self.images.len() as u64)
    }

    fn all_positive(&self) -> Vec<(&'a str, &'a str)> {
        let mut out = Vec::new();
        for imgs in &self.families {
            for i in 0..imgs.len() {
                for j in i + 1..imgs.len() {
                    out.push((imgs[i], imgs[j]));
                }
            }
        }
        out
    }

    fn all_negative(&self) -> Vec<(&'a str, &'a str)> {
        let mut out = Vec::new();
        for i in 0..self.images.len() {
            for j in i + 1..self.images.len() {
                if self.images[i].0 != self.images[j].0 {
                    out.push((self.images[i].1, self.images[j].1));
                }
            }
        }
        out
    }

    /// One positive pair, uniform over all within-family unordered pairs.
    fn draw_positive(
        &self,
        rng: &mut ChaCha8Rng,
        weights: &[u64],
        total: u64,
    ) -> (&'a str, &'a str) {
        let mut t = rng.random_range(0..total);
        let mut fi = 0;
        while t >= weights[fi] {
            t -= weights[fi];
            fi += 1;
        }
        let imgs = &self.families[fi];
        let i = rng.random_range(0..imgs.len());
        let mut j = rng.random_range(0..imgs.len() - 1);
        if j >= i {
            j += 1;
        }
        (imgs[i], imgs[j])
    }

    /// One negative pair by rejection, uniform over cross-family pairs.
    fn draw_negative(&self, rng: &mut ChaCha8Rng) -> (&'a str, &'a str) {
        loop {
            let i = rng.random_range(0..self.images.len());
            let j = rng.random_range(0..self.images.len());
            if self.images[i].0 != self.images[j].0 {
                return (self.images[i].1, self.images[j].1);
            }
        }
    }
}

fn choose2(n: u64) -> u64 {
    n * n.saturating_sub(1) / 2
}

fn ordered<'a>(a: &'a str, b: &'a str) -> (&'a str, &'a str) {
    if a <= b {
        (a, b)
    } else {
        (b, a)
    }
}

fn pick<'a>(
    rng: &mut ChaCha8Rng,
    want: usize,
    available: u64,
    enumerate: impl FnOnce() -> Vec<(&'a str, &'a str)>,
    mut draw: impl FnMut(&mut ChaCha8Rng) -> (&'a str, &'a str),
) -> Vec<(&'a str, &'a str)> {
    let take = (want as u64).min(available) as usize;
    if take == 0 {
        return Vec::new();
    }
    // rejection sampling degrades when most candidates are wanted
    if available <= ENUMERATION_LIMIT || take as u64 * 2 > available {
        let all = enumerate();
        return index::sample(rng, all.len(), take)
            .into_iter()
            .map(|i| ordered(all[i].0, all[i].1))
            .collect();
    }
    let mut seen = HashSet::with_capacity(take);
    let mut out = Vec::with_capacity(take);
    while out.len() < take {
        let (a, b) = draw(rng);
        let pair = ordered(a, b);
        if seen.insert(pair) {
            out.push(pair);
        }
    }
    out
}

/// Samples `n_pos` within-family and `n_neg` cross-family image pairs.
///
/// If a class has fewer distinct pairs than requested, all of them are
/// returned and the shortfall is visible on the [`PairSample`].
pub fn sample_pairs(
    manifest: &DatasetManifest,
    n_pos: usize,
    n_neg: usize,
    seed: u64,
) -> Result<PairSample> {
    let pop = Population::new(manifest);
    if n_neg > 0 && pop.families.len() < 2 {
        return Err(Error::Pairing(
            "no negative pairs possible: manifest has a single family".into(),
        ));
    }
    let available_pos = pop.positive_count();
    let available_neg = pop.total_count() - available_pos;

    let mut rng = ChaCha8Rng::seed_from_u64(seed);
    let weights: Vec<u64> = pop
        .families
        .iter()
        .map(|f| choose2(f.len() as u64))
        .collect();

    let positives = pick(
        &mut rng,
        n_pos,
        available_pos,
        || pop.all_positive(),
        |rng| pop.draw_positive(rng, &weights, available_pos),
    );
    let negatives = pick(
        &mut rng,
        n_neg,
        available_neg,
        || pop.all_negative(),
        |rng| pop.draw_negative(rng),
    );

    let pairs = positives
        .into_iter()
        .map(|p| (p, 1))
        .chain(negatives.into_iter().map(|p| (p, 0)))
        .map(|((a, b), label)| LabeledPair {
            image_a: a.to_string(),
            image_b: b.to_string(),
            label,
        })
        .collect();

    Ok(PairSample {
        pairs,
        requested_pos: n_pos,
        requested_neg: n_neg,
        available_pos,
        available_neg,
        seed,
        algorithm: RNG_ALGORITHM.to_string(),
    })
}

/// Writes `image_a,image_b,label` CSV (LF line endings).
pub fn write_pairs_csv(pairs: &[LabeledPair], path: impl AsRef<Path>) -> Result<()> {
    let path = path.as_ref();
    let mut w = csv::WriterBuilder::new()
        .terminator(csv::Terminator::Any(b'\n'))
        .from_path(path)?;
    for p in pairs {
        w.serialize(p)?;
    }
    w.flush().map_err(|e| Error::io(path, e))
}

pub fn read_pairs_csv(path: impl AsRef<Path>) -> Result<Vec<LabeledPair>> {
    let mut r = csv::Reader::from_path(path)?;
    let headers = r.headers()?.clone();
    if headers != vec!["image_a", "image_b", "label"] {
        return Err(Error::Pairing(format!(
            "unexpected pairs header {:?}",
            headers.iter().collect::<Vec<_>>()
        )));
    }
    let mut out = Vec::new();
    for row in r.deserialize() {
        let pair: LabeledPair = row?;
        if pair.label > 1 {
            return Err(Error::Pairing(format!(
                "label {} is not 0 or 1",
                pair.label
            )));
        }
        out.push(pair);
    }
    Ok(out)
}

/// Sidecar metadata written next to a pairs file: seed, generator and
/// shortfall accounting.
pub fn write_pairs_meta(sample: &PairSample, path: impl AsRef<Path>) -> Result<()> {
    #[derive(Serialize)]
    struct Meta<'a> {
        algorithm: &'a str,
        seed: u64,
        requested_pos: usize,
        requested_neg: usize,
        emitted_pos: usize,
        emitted_neg: usize,
        available_pos: u64,
        available_neg: u64,
    }
    let meta = Meta {
        algorithm: &sample.algorithm,
        seed: sample.seed,
        requested_pos: sample.requested_pos,
        requested_neg: sample.requested_neg,
        emitted_pos: sample.positives(),
        emitted_neg: sample.negatives(),
        available_pos: sample.available_pos,
        available_neg: sample.available_neg,
    };
    let path = path.as_ref();
    let mut text = serde_json::to_string_pretty(&meta)?;
    text.push('\n');
    fs::write(path, text).map_err(|e| Error::io(path, e))
}

#[cfg(test)]
mod tests {
    use super::*;

    fn tiny() -> DatasetManifest {
        DatasetManifest::from_json(
            r#"{"families":[
            {"id":"F1","identities":[{"id":"A","images":["a"]},{"id":"B","images":["b"]}]},
            {"id":"F2","identities":[{"id":"C","images":["c"]},{"id":"D","images":["d"]}]}]}"#,
        )
        .unwrap()
    }

    #[test]
    fn tiny_manifest_against_enumeration() {
        let m = tiny();
        let ids = ["a", "b", "c", "d"];
        let mut all = Vec::new();
        for i in 0..4 {
            for j in i + 1..4 {
                all.push((ids[i], ids[j], m.same_family(ids[i], ids[j]).unwrap()));
            }
        }
        assert_eq!(all.len(), 6);
        assert_eq!(all.iter().filter(|p| p.2).count(), 2);

        for seed in 0..20 {
            let s = sample_pairs(&m, 1, 1, seed).unwrap();
            assert_eq!(s.pairs.len(), 2);
            let pos = &s.pairs[0];
            let neg = &s.pairs[1];
            assert!(all.contains(&(pos.image_a.as_str(), pos.image_b.as_str(), true)));
            assert!(all.contains(&(neg.image_a.as_str(), neg.image_b.as_str(), false)));
        }
    }

    #[test]
    fn shortfall_reported() {
        let s = sample_pairs(&tiny(), 10, 10, 1).unwrap();
        assert_eq!((s.positives(), s.negatives()), (2, 4));
        assert_eq!((s.shortfall_pos(), s.shortfall_neg()), (8, 6));
    }

    #[test]
    fn single_family_cannot_give_negatives() {
        let m = DatasetManifest::from_json(
            r#"{"families":[{"id":"F1","identities":[{"id":"A","images":["a"]},{"id":"B","images":["b"]}]}]}"#,
        )
        .unwrap();
        let err = sample_pairs(&m, 1, 1, 0).unwrap_err().to_string();
        assert!(err.contains("no negative pairs possible"), "{err}");
        assert_eq!(sample_pairs(&m, 1, 0, 0).unwrap().pairs.len(), 1);
    }

    #[test]
    fn csv_round_trip() {
        let dir = tempfile::tempdir().unwrap();
        let s = sample_pairs(&tiny(), 2, 3, 9).unwrap();
        let p = dir.path().join("pairs.csv");
        write_pairs_csv(&s.pairs, &p).unwrap();
        let text = fs::read_to_string(&p).unwrap();
        assert!(text.starts_with("image_a,image_b,label\n"));
        assert!(!text.contains('\r'));
        assert_eq!(read_pairs_csv(&p).unwrap(), s.pairs);
    }

    #[test]
    fn bad_header_rejected() {
        let dir = tempfile::tempdir().unwrap();
        let p = dir.path().join("pairs.csv");
        fs::write(&p, "a,b,y\nx,y,1\n").unwrap();
        assert!(read_pairs_csv(&p).is_err());
    }
}
