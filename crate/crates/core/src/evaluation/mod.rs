//! Ranked-retrieval metrics: average precision, mAP, Rank@K and the
//! composite (mean of mAP and Rank@K) used to order challenge entries.

mod grid;

pub use grid::{
    evaluate_retrieval, run_grid, CellOutcome, Channel, FeatureSource, GridCell, GridInputs,
    GridRow, GridSpec, GridTable,
};

use std::collections::{BTreeMap, BTreeSet};
use std::fs;
use std::path::Path;

use serde::Serialize;

use crate::error::{Error, Result};
use crate::manifest::DatasetManifest;
use crate::retrieval::RankedList;

pub const DEFAULT_K: usize = 10;

/// Probe identity → relevant gallery identities (same family, never the
/// probe identity itself).
#[derive(Debug, Clone, PartialEq, Eq, Default)]
pub struct RelevanceJudgments {
    pub relevant: BTreeMap<String, BTreeSet<String>>,
}

impl RelevanceJudgments {
    pub fn from_manifest<'a>(
        manifest: &DatasetManifest,
        probe_identities: impl IntoIterator<Item = &'a str>,
        gallery_identities: impl IntoIterator<Item = &'a str>,
    ) -> Result<Self> {
        let gallery: Vec<(&str, &str)> = gallery_identities
            .into_iter()
            .map(|g| Ok((g, manifest.family_of_identity(g)?)))
            .collect::<Result<_>>()?;
        let mut relevant = BTreeMap::new();
        for p in probe_identities {
            let family = manifest.family_of_identity(p)?;
            let set = gallery
                .iter()
                .filter(|(g, f)| *f == family && *g != p)
                .map(|(g, _)| g.to_string())
                .collect();
            relevant.insert(p.to_string(), set);
        }
        Ok(Self { relevant })
    }

    /// Judgments for exactly the probes and gallery identities that appear
    /// in `lists`.
    pub fn for_ranked_lists(manifest: &DatasetManifest, lists: &[RankedList]) -> Result<Self> {
        let gallery: BTreeSet<&str> = lists
            .iter()
            .flat_map(|l| l.gallery.iter().map(String::as_str))
            .collect();
        Self::from_manifest(manifest, lists.iter().map(|l| l.probe.as_str()), gallery)
    }

    pub fn len(&self) -> usize {
        self.relevant.len()
    }

    pub fn is_empty(&self) -> bool {
        self.relevant.is_empty()
    }
}

/// AP of a relevance pattern, `hits[r]` true when rank `r + 1` is relevant.
///
/// `(1 / n_relevant) · Σ_{relevant r} precision@r`. Relevant items missing
/// from the pattern contribute zero precision.
pub fn average_precision_flags(hits: &[bool], n_relevant: usize) -> f64 {
    if n_relevant == 0 {
        return 0.0;
    }
    let mut found = 0usize;
    let mut sum = 0.0;
    for (r, &hit) in hits.iter().enumerate() {
        if hit {
            found += 1;
            sum += found as f64 / (r + 1) as f64;
        }
    }
    sum / n_relevant as f64
}

pub fn average_precision<S: AsRef<str>>(ranked: &[S], relevant: &BTreeSet<String>) -> f64 {
    let hits: Vec<bool> = ranked
        .iter()
        .map(|g| relevant.contains(g.as_ref()))
        .collect();
    average_precision_flags(&hits, relevant.len())
}

/// mAP with the bookkeeping of which probes were left out.
#[derive(Debug, Clone, PartialEq, Serialize)]
pub struct MapSummary {
    pub value: f64,
    pub evaluated: usize,
    pub excluded: usize,
}

fn lists_by_probe(lists: &[RankedList]) -> BTreeMap<&str, &RankedList> {
    lists.iter().map(|l| (l.probe.as_str(), l)).collect()
}

type Evaluable<'a> = Vec<(&'a RankedList, &'a BTreeSet<String>)>;

/// Judged probes with ≥ 1 relevant identity, each paired with its ranked
/// list, plus the count of judged probes without any.
fn evaluable<'a>(
    lists: &'a [RankedList],
    judgments: &'a RelevanceJudgments,
) -> Result<(Evaluable<'a>, usize)> {
    let by_probe = lists_by_probe(lists);
    let mut out = Vec::new();
    let mut excluded = 0;
    for (probe, relevant) in &judgments.relevant {
        let list = by_probe.get(probe.as_str()).ok_or_else(|| {
            Error::Evaluation(format!("no ranked list for judged probe `{probe}`"))
        })?;
        if relevant.is_empty() {
            excluded += 1;
        } else {
            out.push((*list, relevant));
        }
    }
    Ok((out, excluded))
}

/// Mean AP over judged probes that have at least one relevant identity.
pub fn mean_average_precision(
    lists: &[RankedList],
    judgments: &RelevanceJudgments,
) -> Result<MapSummary> {
    let (probes, excluded) = evaluable(lists, judgments)?;
    let value = if probes.is_empty() {
        0.0
    } else {
        probes
            .iter()
            .map(|(l, rel)| average_precision(&l.gallery, rel))
            .sum::<f64>()
            / probes.len() as f64
    };
    Ok(MapSummary {
        value,
        evaluated: probes.len(),
        excluded,
    })
}

/// Fraction of evaluable probes with a relevant identity in the top `k`.
pub fn rank_at_k(lists: &[RankedList], judgments: &RelevanceJudgments, k: usize) -> Result<f64> {
    if k == 0 {
        return Err(Error::InvalidParam("K must be at least 1".into()));
    }
    let (probes, _) = evaluable(lists, judgments)?;
    if probes.is_empty() {
        return Ok(0.0);
    }
    let hits = probes
        .iter()
        .filter(|(l, rel)| l.gallery.iter().take(k).any(|g| rel.contains(g)))
        .count();
    Ok(hits as f64 / probes.len() as f64)
}

/// Arithmetic mean of mAP and Rank@K.
pub fn composite_score(map_value: f64, rank_at_k_value: f64) -> f64 {
    (map_value + rank_at_k_value) / 2.0
}

#[derive(Debug, Clone, PartialEq, Serialize)]
pub struct MetricsReport {
    pub map: f64,
    /// Rank@K for every requested K.
    pub rank_at_k: BTreeMap<usize, f64>,
    /// Mean of `map` and Rank@K at the primary K.
    pub composite: f64,
    pub evaluated_probes: usize,
    pub excluded_probes: usize,
    pub config: serde_json::Value,
}

impl MetricsReport {
    pub fn to_json(&self) -> Result<String> {
        Ok(serde_json::to_string_pretty(self)?)
    }

    pub fn save(&self, path: impl AsRef<Path>) -> Result<()> {
        let path = path.as_ref();
        let mut text = self.to_json()?;
        text.push('\n');
        fs::write(path, text).map_err(|e| Error::io(path, e))
    }
}

/// mAP, Rank@K for each of `ks` and the composite at `primary_k`.
pub fn evaluate(
    lists: &[RankedList],
    judgments: &RelevanceJudgments,
    primary_k: usize,
    extra_ks: &[usize],
    config: serde_json::Value,
) -> Result<MetricsReport> {
    let map = mean_average_precision(lists, judgments)?;
    if map.evaluated == 0 {
        return Err(Error::Evaluation(
            "no probe has a relevant gallery identity".into(),
        ));
    }
    let mut rank = BTreeMap::new();
    for &k in std::iter::once(&primary_k).chain(extra_ks) {
        rank.insert(k, rank_at_k(lists, judgments, k)?);
    }
    Ok(MetricsReport {
        map: map.value,
        composite: composite_score(map.value, rank[&primary_k]),
        rank_at_k: rank,
        evaluated_probes: map.evaluated,
        excluded_probes: map.excluded,
        config,
    })
}
