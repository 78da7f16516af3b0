//! Ablation grid over {similarity channel, combination or pooling, loss}.
//!
//! FC cells train a head per (loss, combination) on the training pairs and
//! rank with it; cosine cells rank directly on pooled vectors. Cosine cells
//! carry a loss label to keep the loss × variant layout of the FC table, but
//! the loss has no effect on them here because the backbone that would have
//! been trained with it is outside this crate.

use std::borrow::Cow;
use std::fmt::Write as _;
use std::fs;
use std::path::Path;

use rayon::prelude::*;
use serde::Serialize;
use serde_json::json;

use super::{evaluate, MetricsReport, RelevanceJudgments};
use crate::embedding::{EmbeddingStore, FeatureMapStore, Pooling};
use crate::error::{Error, Result};
use crate::manifest::DatasetManifest;
use crate::pairing::LabeledPair;
use crate::retrieval::{merge_by_identity, rank, score_pairs, Scorer};
use crate::similarity::Combination;
use crate::training::{train, LossKind, TrainConfig};

/// Embeddings as either pooled vectors or raw feature maps.
#[derive(Debug, Clone)]
pub enum FeatureSource {
    /// Already pooled; treated as average-pooled.
    Vectors(EmbeddingStore),
    Maps(FeatureMapStore),
}

impl FeatureSource {
    pub fn pooled(&self, pooling: Pooling) -> Result<Cow<'_, EmbeddingStore>> {
        match (self, pooling) {
            (FeatureSource::Vectors(s), Pooling::Average) => Ok(Cow::Borrowed(s)),
            (FeatureSource::Vectors(_), Pooling::Max) => Err(Error::InvalidParam(
                "max pooling needs feature maps, got pooled vectors".into(),
            )),
            (FeatureSource::Maps(m), p) => Ok(Cow::Owned(m.pool(p)?)),
        }
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash)]
pub enum Channel {
    Fc(Combination),
    Cosine(Pooling),
}

impl Channel {
    pub fn similarity(self) -> &'static str {
        match self {
            Channel::Fc(_) => "fc",
            Channel::Cosine(_) => "cosine",
        }
    }

    pub fn variant(self) -> &'static str {
        match self {
            Channel::Fc(c) => c.name(),
            Channel::Cosine(p) => p.name(),
        }
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash)]
pub struct GridCell {
    pub channel: Channel,
    pub loss: LossKind,
}

#[derive(Debug, Clone, Default, PartialEq)]
pub struct GridSpec {
    pub cells: Vec<GridCell>,
}

impl GridSpec {
    /// Losses × combinations under FC similarity.
    pub fn fc_table() -> Self {
        let cells = [LossKind::Focal, LossKind::Bce]
            .into_iter()
            .flat_map(|loss| {
                Combination::ALL.into_iter().map(move |c| GridCell {
                    channel: Channel::Fc(c),
                    loss,
                })
            })
            .collect();
        Self { cells }
    }

    /// Losses × poolings (max, then average) under cosine similarity.
    pub fn cosine_table() -> Self {
        let cells = [LossKind::Focal, LossKind::Bce]
            .into_iter()
            .flat_map(|loss| {
                [Pooling::Max, Pooling::Average]
                    .into_iter()
                    .map(move |p| GridCell {
                        channel: Channel::Cosine(p),
                        loss,
                    })
            })
            .collect();
        Self { cells }
    }

    pub fn full() -> Self {
        let mut spec = Self::fc_table();
        spec.cells.extend(Self::cosine_table().cells);
        spec
    }

    pub fn len(&self) -> usize {
        self.cells.len()
    }

    pub fn is_empty(&self) -> bool {
        self.cells.is_empty()
    }
}

pub struct GridInputs {
    /// Manifest resolving every probe and gallery image.
    pub manifest: DatasetManifest,
    pub probe: FeatureSource,
    pub gallery: FeatureSource,
    /// Training embeddings for FC cells (average-pooled).
    pub train: FeatureSource,
    pub pairs: Vec<LabeledPair>,
    /// Template; `loss_kind` is overridden per cell.
    pub train_config: TrainConfig,
    pub k: usize,
    pub exclude_self: bool,
}

#[derive(Debug, Clone, Serialize)]
pub struct GridRow {
    pub similarity: &'static str,
    pub variant: &'static str,
    pub loss: LossKind,
    #[serde(skip)]
    pub cell: GridCell,
    #[serde(flatten)]
    pub outcome: CellOutcome,
}

#[derive(Debug, Clone, Serialize)]
#[serde(untagged)]
pub enum CellOutcome {
    Ok { report: MetricsReport },
    Failed { error: String },
}

impl GridRow {
    pub fn report(&self) -> Option<&MetricsReport> {
        match &self.outcome {
            CellOutcome::Ok { report } => Some(report),
            CellOutcome::Failed { .. } => None,
        }
    }
}

#[derive(Debug, Clone, Serialize)]
pub struct GridTable {
    pub rows: Vec<GridRow>,
}

impl GridTable {
    /// Pivot: one row per (similarity, loss), one column per variant, each
    /// cell holding the composite score (`error` for a failed cell).
    pub fn to_csv(&self) -> String {
        let mut variants: Vec<&str> = Vec::new();
        let mut keys: Vec<(&str, LossKind)> = Vec::new();
        for r in &self.rows {
            if !variants.contains(&r.variant) {
                variants.push(r.variant);
            }
            if !keys.contains(&(r.similarity, r.loss)) {
                keys.push((r.similarity, r.loss));
            }
        }
        let mut out = String::from("similarity,loss");
        for v in &variants {
            out.push(',');
            out.push_str(v);
        }
        out.push('\n');
        for (sim, loss) in keys {
            let _ = write!(out, "{sim},{loss}");
            for v in &variants {
                out.push(',');
                let cell = self
                    .rows
                    .iter()
                    .find(|r| r.similarity == sim && r.loss == loss && r.variant == *v);
                match cell.map(|r| &r.outcome) {
                    Some(CellOutcome::Ok { report }) => {
                        let _ = write!(out, "{}", report.composite);
                    }
                    Some(CellOutcome::Failed { .. }) => out.push_str("error"),
                    None => {}
                }
            }
            out.push('\n');
        }
        out
    }

    pub fn save(&self, dir: impl AsRef<Path>) -> Result<()> {
        let dir = dir.as_ref();
        fs::create_dir_all(dir).map_err(|e| Error::io(dir, e))?;
        let csv_path = dir.join("grid.csv");
        fs::write(&csv_path, self.to_csv()).map_err(|e| Error::io(&csv_path, e))?;
        let json_path = dir.join("grid.json");
        let mut text = serde_json::to_string_pretty(self)?;
        text.push('\n');
        fs::write(&json_path, text).map_err(|e| Error::io(&json_path, e))
    }
}

/// Scores, merges, ranks and evaluates one probe/gallery pair of stores.
pub fn evaluate_retrieval(
    manifest: &DatasetManifest,
    probe: &EmbeddingStore,
    gallery: &EmbeddingStore,
    scorer: &Scorer,
    k: usize,
    exclude_self: bool,
    config: serde_json::Value,
) -> Result<MetricsReport> {
    let table = score_pairs(probe, gallery, scorer)?;
    let merged = merge_by_identity(&table, manifest, manifest)?;
    let lists = rank(&merged, exclude_self);
    let judgments = RelevanceJudgments::for_ranked_lists(manifest, &lists)?;
    evaluate(&lists, &judgments, k, &[], config)
}

fn run_cell(inputs: &GridInputs, cell: GridCell) -> Result<MetricsReport> {
    let (scorer, pooling) = match cell.channel {
        Channel::Cosine(p) => (Scorer::Cosine, p),
        Channel::Fc(comb) => {
            let cfg = TrainConfig {
                loss_kind: cell.loss,
                ..inputs.train_config.clone()
            };
            let train_store = inputs.train.pooled(Pooling::Average)?;
            let report = train(&train_store, &inputs.pairs, comb, &cfg)?;
            (Scorer::Fc(report.head), Pooling::Average)
        }
    };
    let probe = inputs.probe.pooled(pooling)?;
    let gallery = inputs.gallery.pooled(pooling)?;
    let config = json!({
        "similarity": cell.channel.similarity(),
        "variant": cell.channel.variant(),
        "loss": cell.loss,
        "k": inputs.k,
        "scorer": scorer.descriptor(),
    });
    evaluate_retrieval(
        &inputs.manifest,
        &probe,
        &gallery,
        &scorer,
        inputs.k,
        inputs.exclude_self,
        config,
    )
}

/// Runs every cell independently; a failing cell is recorded, not fatal.
pub fn run_grid(inputs: &GridInputs, spec: &GridSpec) -> GridTable {
    let rows = spec
        .cells
        .par_iter()
        .map(|&cell| GridRow {
            similarity: cell.channel.similarity(),
            variant: cell.channel.variant(),
            loss: cell.loss,
            cell,
            outcome: match run_cell(inputs, cell) {
                Ok(report) => CellOutcome::Ok { report },
                Err(e) => CellOutcome::Failed {
                    error: e.to_string(),
                },
            },
        })
        .collect();
    GridTable { rows }
}
