//! Probe × gallery scoring, per-identity score merging and ranking.
//!
//! Scoring is exhaustive and parallel over probe rows; merge and rank run
//! afterwards on the full table. Every reduction sorts its inputs first, so
//! outputs do not depend on thread count or on enumeration order.

use std::collections::BTreeMap;
use std::fs;
use std::io::Write;
use std::path::Path;

use rayon::prelude::*;

use crate::embedding::EmbeddingStore;
use crate::error::{check_dims, Error, Result};
use crate::manifest::DatasetManifest;
use crate::similarity::{combine, cosine_similarity, SimilarityHead};

/// How a probe/gallery vector pair is turned into a score.
#[derive(Debug, Clone)]
pub enum Scorer {
    Cosine,
    /// FC head over `combine(probe, gallery)`; directed.
    Fc(SimilarityHead),
}

impl Scorer {
    pub fn descriptor(&self) -> String {
        match self {
            Scorer::Cosine => "cosine".into(),
            Scorer::Fc(head) => format!("fc-{}", head.combination()),
        }
    }

    pub fn score(&self, probe: &[f64], gallery: &[f64]) -> Result<f64> {
        match self {
            Scorer::Cosine => cosine_similarity(probe, gallery),
            Scorer::Fc(head) => head.forward(&combine(head.combination(), probe, gallery)?),
        }
    }

    fn check_dim(&self, dim: usize) -> Result<()> {
        match self {
            Scorer::Cosine => Ok(()),
            Scorer::Fc(head) => check_dims(head.input_dim(), head.combination().output_dim(dim)),
        }
    }
}

/// Image-level scores, row-major over `probes × gallery`.
#[derive(Debug, Clone, PartialEq)]
pub struct ScoreTable {
    pub scorer: String,
    pub probes: Vec<String>,
    pub gallery: Vec<String>,
    pub scores: Vec<f64>,
}

impl ScoreTable {
    pub fn len(&self) -> usize {
        self.scores.len()
    }

    pub fn is_empty(&self) -> bool {
        self.scores.is_empty()
    }

    pub fn get(&self, probe: usize, gallery: usize) -> f64 {
        self.scores[probe * self.gallery.len() + gallery]
    }

    pub fn iter(&self) -> impl Iterator<Item = (&str, &str, f64)> {
        self.probes.iter().enumerate().flat_map(move |(i, p)| {
            self.gallery
                .iter()
                .enumerate()
                .map(move |(j, g)| (p.as_str(), g.as_str(), self.get(i, j)))
        })
    }

    /// CSV with header `probe_image,gallery_image,score`, probe-major.
    pub fn write_csv(&self, path: impl AsRef<Path>) -> Result<()> {
        let path = path.as_ref();
        let mut w = csv::WriterBuilder::new()
            .terminator(csv::Terminator::Any(b'\n'))
            .from_path(path)?;
        w.write_record(["probe_image", "gallery_image", "score"])?;
        for (p, g, s) in self.iter() {
            w.write_record([p, g, &s.to_string()])?;
        }
        w.flush().map_err(|e| Error::io(path, e))
    }

    /// Reads a score CSV. Rows must cover a full probes × gallery grid.
    pub fn read_csv(path: impl AsRef<Path>, scorer: impl Into<String>) -> Result<Self> {
        let mut r = csv::Reader::from_path(path)?;
        let mut probes: Vec<String> = Vec::new();
        let mut gallery_index: BTreeMap<String, usize> = BTreeMap::new();
        let mut gallery: Vec<String> = Vec::new();
        let mut cells: BTreeMap<(usize, usize), f64> = BTreeMap::new();
        let mut probe_index: BTreeMap<String, usize> = BTreeMap::new();
        for row in r.records() {
            let row = row?;
            if row.len() != 3 {
                return Err(Error::Format(format!("score row has {} fields", row.len())));
            }
            let score: f64 = row[2]
                .parse()
                .map_err(|e| Error::Format(format!("bad score `{}`: {e}", &row[2])))?;
            if !score.is_finite() {
                return Err(Error::NonFinite(format!("score {score}")));
            }
            let pi = *probe_index.entry(row[0].to_string()).or_insert_with(|| {
                probes.push(row[0].to_string());
                probes.len() - 1
            });
            let gi = *gallery_index.entry(row[1].to_string()).or_insert_with(|| {
                gallery.push(row[1].to_string());
                gallery.len() - 1
            });
            if cells.insert((pi, gi), score).is_some() {
                return Err(Error::Format(format!(
                    "duplicate score for ({}, {})",
                    &row[0], &row[1]
                )));
            }
        }
        if cells.len() != probes.len() * gallery.len() {
            return Err(Error::Format(format!(
                "score table has {} entries for {} probes × {} gallery images",
                cells.len(),
                probes.len(),
                gallery.len()
            )));
        }
        let mut scores = vec![0.0; cells.len()];
        for ((pi, gi), s) in cells {
            scores[pi * gallery.len() + gi] = s;
        }
        Ok(Self {
            scorer: scorer.into(),
            probes,
            gallery,
            scores,
        })
    }
}

/// Scores every probe image against every gallery image.
///
/// Runs on the current rayon pool; the result is identical for any pool size.
pub fn score_pairs(
    probe_store: &EmbeddingStore,
    gallery_store: &EmbeddingStore,
    scorer: &Scorer,
) -> Result<ScoreTable> {
    check_dims(probe_store.dim(), gallery_store.dim())?;
    scorer.check_dim(probe_store.dim())?;
    let widen = |s: &EmbeddingStore| -> Vec<(String, Vec<f64>)> {
        s.iter()
            .map(|(id, v)| (id.to_string(), v.iter().map(|&x| f64::from(x)).collect()))
            .collect()
    };
    let probes = widen(probe_store);
    let gallery = widen(gallery_store);

    let rows: Vec<Vec<f64>> = probes
        .par_iter()
        .map(|(_, p)| {
            gallery
                .iter()
                .map(|(_, g)| scorer.score(p, g))
                .collect::<Result<Vec<f64>>>()
        })
        .collect::<Result<_>>()?;

    Ok(ScoreTable {
        scorer: scorer.descriptor(),
        probes: probes.into_iter().map(|(id, _)| id).collect(),
        gallery: gallery.into_iter().map(|(id, _)| id).collect(),
        scores: rows.into_iter().flatten().collect(),
    })
}

/// Mean image-pair score for every (probe identity, gallery identity).
#[derive(Debug, Clone, PartialEq)]
pub struct MergedScores {
    pub scores: BTreeMap<String, BTreeMap<String, f64>>,
}

/// Averages all probe-image × gallery-image scores of each identity pair.
///
/// Scores are summed in sorted order, so the mean is bit-identical under any
/// permutation of the table's rows or columns.
pub fn merge_by_identity(
    table: &ScoreTable,
    probe_manifest: &DatasetManifest,
    gallery_manifest: &DatasetManifest,
) -> Result<MergedScores> {
    let probe_ids = table
        .probes
        .iter()
        .map(|p| probe_manifest.identity_of(p))
        .collect::<Result<Vec<_>>>()?;
    let gallery_ids = table
        .gallery
        .iter()
        .map(|g| gallery_manifest.identity_of(g))
        .collect::<Result<Vec<_>>>()?;

    let mut buckets: BTreeMap<&str, BTreeMap<&str, Vec<f64>>> = BTreeMap::new();
    for (i, pid) in probe_ids.iter().enumerate() {
        let row = buckets.entry(pid).or_default();
        for (j, gid) in gallery_ids.iter().enumerate() {
            row.entry(gid).or_default().push(table.get(i, j));
        }
    }

    let scores = buckets
        .into_iter()
        .map(|(pid, row)| {
            let merged = row
                .into_iter()
                .map(|(gid, mut values)| {
                    values.sort_by(f64::total_cmp);
                    let mean = values.iter().sum::<f64>() / values.len() as f64;
                    (gid.to_string(), mean)
                })
                .collect();
            (pid.to_string(), merged)
        })
        .collect();
    Ok(MergedScores { scores })
}

/// Gallery identities ordered for one probe identity.
///
/// `scores` is either empty (order only, e.g. read back from a ranked CSV)
/// or parallel to `gallery` and non-increasing.
#[derive(Debug, Clone, PartialEq)]
pub struct RankedList {
    pub probe: String,
    pub gallery: Vec<String>,
    pub scores: Vec<f64>,
}

fn sort_desc(entries: &mut [(String, f64)]) {
    entries.sort_by(|a, b| b.1.total_cmp(&a.1).then_with(|| a.0.cmp(&b.0)));
}

/// Sorts each probe's gallery identities by merged score, descending; ties go
/// to the lexicographically smaller gallery id. With `exclude_self`, a
/// gallery identity equal to the probe identity is dropped.
pub fn rank(merged: &MergedScores, exclude_self: bool) -> Vec<RankedList> {
    merged
        .scores
        .iter()
        .map(|(probe, row)| {
            let mut entries: Vec<(String, f64)> = row
                .iter()
                .filter(|(g, _)| !(exclude_self && *g == probe))
                .map(|(g, s)| (g.clone(), *s))
                .collect();
            sort_desc(&mut entries);
            let (gallery, scores) = entries.into_iter().unzip();
            RankedList {
                probe: probe.clone(),
                gallery,
                scores,
            }
        })
        .collect()
}

/// Image-level ranking straight from the table, without identity merging.
pub fn rank_images(table: &ScoreTable) -> Vec<RankedList> {
    table
        .probes
        .iter()
        .enumerate()
        .map(|(i, p)| {
            let mut entries: Vec<(String, f64)> = table
                .gallery
                .iter()
                .enumerate()
                .map(|(j, g)| (g.clone(), table.get(i, j)))
                .collect();
            sort_desc(&mut entries);
            let (gallery, scores) = entries.into_iter().unzip();
            RankedList {
                probe: p.clone(),
                gallery,
                scores,
            }
        })
        .collect()
}

/// One row per probe: `probe_id,gallery_id_1,gallery_id_2,...`, no header.
pub fn write_ranked_csv(lists: &[RankedList], path: impl AsRef<Path>) -> Result<()> {
    let path = path.as_ref();
    let mut w = csv::WriterBuilder::new()
        .flexible(true)
        .terminator(csv::Terminator::Any(b'\n'))
        .from_path(path)?;
    for list in lists {
        let mut row = Vec::with_capacity(list.gallery.len() + 1);
        row.push(list.probe.as_str());
        row.extend(list.gallery.iter().map(String::as_str));
        w.write_record(&row)?;
    }
    w.flush().map_err(|e| Error::io(path, e))
}

/// Audit companion to the ranked CSV: `probe_id,rank,gallery_id,score`.
pub fn write_ranked_scores_csv(lists: &[RankedList], path: impl AsRef<Path>) -> Result<()> {
    let path = path.as_ref();
    let file = fs::File::create(path).map_err(|e| Error::io(path, e))?;
    let mut w = std::io::BufWriter::new(file);
    let io = |e| Error::io(path, e);
    writeln!(w, "probe_id,rank,gallery_id,score").map_err(io)?;
    let mut csvw = csv::WriterBuilder::new()
        .has_headers(false)
        .terminator(csv::Terminator::Any(b'\n'))
        .from_writer(w);
    for list in lists {
        for (r, (g, s)) in list.gallery.iter().zip(&list.scores).enumerate() {
            csvw.write_record([list.probe.as_str(), &(r + 1).to_string(), g, &s.to_string()])?;
        }
    }
    csvw.flush().map_err(|e| Error::io(path, e))
}

pub fn read_ranked_csv(path: impl AsRef<Path>) -> Result<Vec<RankedList>> {
    let mut r = csv::ReaderBuilder::new()
        .has_headers(false)
        .flexible(true)
        .from_path(path)?;
    let mut out = Vec::new();
    for row in r.records() {
        let row = row?;
        let mut fields = row.iter();
        let probe = fields
            .next()
            .filter(|p| !p.is_empty())
            .ok_or_else(|| Error::Format("ranked row without probe id".into()))?
            .to_string();
        let gallery: Vec<String> = fields.map(str::to_string).collect();
        let mut seen = std::collections::HashSet::new();
        if let Some(dup) = gallery.iter().find(|g| !seen.insert(g.as_str())) {
            return Err(Error::Format(format!(
                "gallery identity `{dup}` ranked twice for probe `{probe}`"
            )));
        }
        out.push(RankedList {
            probe,
            gallery,
            scores: Vec::new(),
        });
    }
    Ok(out)
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::embedding::FeatureVector;
    use crate::similarity::{Combination, DEFAULT_HIDDEN};

    fn store(entries: &[(&str, [f32; 2])]) -> EmbeddingStore {
        EmbeddingStore::from_vectors(
            2,
            entries
                .iter()
                .map(|(id, v)| FeatureVector::new(*id, v.to_vec()).unwrap()),
        )
        .unwrap()
    }

    fn manifest() -> DatasetManifest {
        DatasetManifest::from_json(
            r#"{"families":[
            {"id":"F1","identities":[{"id":"P","images":["p1","p2"]},{"id":"A","images":["a1","a2"]}]},
            {"id":"F2","identities":[{"id":"B","images":["b1"]},{"id":"C","images":["c1"]}]}]}"#,
        )
        .unwrap()
    }

    fn table(probes: &[&str], gallery: &[&str], scores: Vec<f64>) -> ScoreTable {
        ScoreTable {
            scorer: "test".into(),
            probes: probes.iter().map(|s| s.to_string()).collect(),
            gallery: gallery.iter().map(|s| s.to_string()).collect(),
            scores,
        }
    }

    #[test]
    fn cardinality_and_cosine_diagonal() {
        let p = store(&[("p1", [1.0, 0.0]), ("p2", [0.5, 0.5])]);
        let g = store(&[("a1", [1.0, 1.0]), ("b1", [0.0, 2.0]), ("c1", [3.0, 0.1])]);
        let t = score_pairs(&p, &g, &Scorer::Cosine).unwrap();
        assert_eq!(t.len(), 6);

        let same = score_pairs(&g, &g, &Scorer::Cosine).unwrap();
        for i in 0..3 {
            assert!((same.get(i, i) - 1.0).abs() < 1e-12);
        }
    }

    #[test]
    fn zero_fc_head_scores_half() {
        let p = store(&[("p1", [1.0, 0.0])]);
        let g = store(&[("a1", [1.0, 1.0]), ("b1", [0.0, 2.0])]);
        let head = SimilarityHead::zeros(Combination::Comb1, 2, &DEFAULT_HIDDEN);
        let t = score_pairs(&p, &g, &Scorer::Fc(head)).unwrap();
        assert!(t.scores.iter().all(|&s| s == 0.5));
        assert_eq!(t.scorer, "fc-comb1");
    }

    #[test]
    fn fc_head_dimension_checked() {
        let p = store(&[("p1", [1.0, 0.0])]);
        let head = SimilarityHead::zeros(Combination::Comb1, 3, &[4]);
        assert!(matches!(
            score_pairs(&p, &p, &Scorer::Fc(head)),
            Err(Error::DimensionMismatch { .. })
        ));
    }

    #[test]
    fn zero_vector_under_cosine() {
        let p = store(&[("p1", [0.0, 0.0])]);
        let g = store(&[("a1", [1.0, 1.0])]);
        assert!(matches!(
            score_pairs(&p, &g, &Scorer::Cosine),
            Err(Error::ZeroNorm)
        ));
    }

    #[test]
    fn merge_averages_identity_pairs() {
        let m = manifest();
        let t = table(&["p1"], &["a1", "a2", "b1"], vec![0.2, 0.4, 0.7]);
        let merged = merge_by_identity(&t, &m, &m).unwrap();
        let row = &merged.scores["P"];
        assert!((row["A"] - 0.3).abs() < 1e-15);
        assert_eq!(row["B"], 0.7);
    }

    #[test]
    fn merge_averages_both_sides() {
        let m = manifest();
        let t = table(&["p1", "p2"], &["a1", "a2"], vec![0.1, 0.2, 0.3, 0.6]);
        let merged = merge_by_identity(&t, &m, &m).unwrap();
        assert!((merged.scores["P"]["A"] - 0.3).abs() < 1e-15);
    }

    #[test]
    fn merge_is_permutation_invariant() {
        let m = manifest();
        let a = table(
            &["p1", "p2"],
            &["a1", "a2", "b1"],
            vec![0.1, 0.7, 0.3, 0.9, 0.2, 0.4],
        );
        let b = table(
            &["p2", "p1"],
            &["b1", "a2", "a1"],
            vec![0.4, 0.2, 0.9, 0.3, 0.7, 0.1],
        );
        assert_eq!(
            merge_by_identity(&a, &m, &m).unwrap(),
            merge_by_identity(&b, &m, &m).unwrap()
        );
    }

    #[test]
    fn merge_unresolvable_image() {
        let m = manifest();
        let t = table(&["zz"], &["a1"], vec![0.1]);
        assert!(matches!(
            merge_by_identity(&t, &m, &m),
            Err(Error::UnknownImage(_))
        ));
    }

    fn merged(entries: &[(&str, f64)]) -> MergedScores {
        let row = entries.iter().map(|(g, s)| (g.to_string(), *s)).collect();
        MergedScores {
            scores: BTreeMap::from([("P".to_string(), row)]),
        }
    }

    #[test]
    fn rank_orders_and_breaks_ties() {
        let r = rank(&merged(&[("A", 0.9), ("B", 0.1), ("C", 0.5)]), false);
        assert_eq!(r[0].gallery, vec!["A", "C", "B"]);
        let r = rank(&merged(&[("B", 0.5), ("A", 0.5)]), false);
        assert_eq!(r[0].gallery, vec!["A", "B"]);
    }

    #[test]
    fn rank_invariant_to_monotone_transform() {
        let base: [(&str, f64); 4] = [("A", 0.9), ("B", -0.1), ("C", 0.5), ("D", 0.5)];
        let transformed: Vec<(&str, f64)> =
            base.iter().map(|(g, s)| (*g, (3.0 * s).exp())).collect();
        assert_eq!(
            rank(&merged(&base), false)[0].gallery,
            rank(&merged(&transformed), false)[0].gallery
        );
    }

    #[test]
    fn exclude_self_drops_probe_identity() {
        let r = rank(&merged(&[("P", 1.0), ("A", 0.5)]), true);
        assert_eq!(r[0].gallery, vec!["A"]);
        let r = rank(&merged(&[("P", 1.0), ("A", 0.5)]), false);
        assert_eq!(r[0].gallery, vec!["P", "A"]);
    }

    #[test]
    fn csv_round_trips() {
        let dir = tempfile::tempdir().unwrap();
        let t = table(
            &["p1", "p2"],
            &["a1", "b1"],
            vec![0.1, 1.0 / 3.0, -0.25, 0.5],
        );
        let path = dir.path().join("scores.csv");
        t.write_csv(&path).unwrap();
        assert_eq!(ScoreTable::read_csv(&path, "test").unwrap(), t);

        let lists = rank(&merged(&[("A", 0.9), ("B", 0.1)]), false);
        let rp = dir.path().join("ranked.csv");
        write_ranked_csv(&lists, &rp).unwrap();
        assert_eq!(fs::read_to_string(&rp).unwrap(), "P,A,B\n");
        let back = read_ranked_csv(&rp).unwrap();
        assert_eq!(back[0].gallery, lists[0].gallery);

        let sp = dir.path().join("ranked.scores.csv");
        write_ranked_scores_csv(&lists, &sp).unwrap();
        assert_eq!(
            fs::read_to_string(&sp).unwrap(),
            "probe_id,rank,gallery_id,score\nP,1,A,0.9\nP,2,B,0.1\n"
        );
    }

    #[test]
    fn incomplete_score_table_rejected() {
        let dir = tempfile::tempdir().unwrap();
        let path = dir.path().join("scores.csv");
        fs::write(
            &path,
            "probe_image,gallery_image,score\np1,a1,0.1\np2,b1,0.2\n",
        )
        .unwrap();
        assert!(ScoreTable::read_csv(&path, "x").is_err());
    }
}
