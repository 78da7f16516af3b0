//! `kinret`: batch command line over the library.
//!
//! Stages communicate only through files (manifest JSON, KEMB/KMAP, pairs
//! CSV, head checkpoint JSON, score CSV, ranked CSV, metrics JSON), so any
//! stage can be swapped for an external tool.

use std::ffi::OsString;
use std::fs;
use std::path::{Path, PathBuf};

use anyhow::{bail, Context, Result};
use clap::{Args, Parser, Subcommand, ValueEnum};
use serde_json::json;

use crate::embedding::{read_any, write_map_store, write_store, AnyStore, EmbeddingStore, Pooling};
use crate::evaluation::{
    evaluate, run_grid, FeatureSource, GridInputs, GridSpec, RelevanceJudgments, DEFAULT_K,
};
use crate::manifest::DatasetManifest;
use crate::pairing::{
    read_pairs_csv, sample_pairs, write_pairs_csv, write_pairs_meta, DEFAULT_PAIRS_PER_CLASS,
};
use crate::retrieval::{
    merge_by_identity, rank, read_ranked_csv, score_pairs, write_ranked_csv,
    write_ranked_scores_csv, ScoreTable, Scorer,
};
use crate::similarity::{Combination, SimilarityHead};
use crate::synth::{feature_maps, generate, SynthParams};
use crate::training::{train, LossKind, TrainConfig};

#[derive(Debug, Parser)]
#[command(
    name = "kinret",
    version,
    about = "Kinship retrieval over face embeddings"
)]
pub struct Cli {
    /// Worker threads for scoring and grid cells (0 = all cores). Output does not depend on it.
    #[arg(long, global = true, default_value_t = 0)]
    pub threads: usize,

    #[command(subcommand)]
    pub command: Command,
}

#[derive(Debug, Subcommand)]
pub enum Command {
    /// Build a manifest from a <root>/<family>/<identity>/<image> tree.
    Scan(ScanArgs),
    /// Generate a synthetic dataset (manifest, embeddings, probe/gallery split).
    Synth(SynthArgs),
    /// Sample labeled positive/negative training pairs.
    Sample(SampleArgs),
    /// Train an FC similarity head on labeled pairs.
    Train(TrainArgs),
    /// Score every probe image against every gallery image.
    Score(ScoreArgs),
    /// Merge scores per identity pair and rank gallery identities.
    Rank(RankArgs),
    /// Compute mAP, Rank@K and the composite for ranked lists.
    Eval(EvalArgs),
    /// Run the loss × combination / pooling ablation grid.
    Grid(GridArgs),
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, ValueEnum)]
pub enum ScorerArg {
    CosineAvg,
    CosineMax,
    FcComb1,
    FcComb2,
}

impl ScorerArg {
    fn pooling(self) -> Pooling {
        match self {
            ScorerArg::CosineMax => Pooling::Max,
            _ => Pooling::Average,
        }
    }

    fn combination(self) -> Option<Combination> {
        match self {
            ScorerArg::FcComb1 => Some(Combination::Comb1),
            ScorerArg::FcComb2 => Some(Combination::Comb2),
            _ => None,
        }
    }

    fn name(self) -> &'static str {
        match self {
            ScorerArg::CosineAvg => "cosine-avg",
            ScorerArg::CosineMax => "cosine-max",
            ScorerArg::FcComb1 => "fc-comb1",
            ScorerArg::FcComb2 => "fc-comb2",
        }
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, ValueEnum)]
pub enum LossArg {
    Bce,
    Focal,
}

impl From<LossArg> for LossKind {
    fn from(l: LossArg) -> Self {
        match l {
            LossArg::Bce => LossKind::Bce,
            LossArg::Focal => LossKind::Focal,
        }
    }
}

#[derive(Debug, Args)]
pub struct ScanArgs {
    /// Dataset root directory.
    pub root: PathBuf,
    #[arg(long)]
    pub out: PathBuf,
}

#[derive(Debug, Args)]
pub struct SynthArgs {
    /// Output directory.
    #[arg(long)]
    pub out: PathBuf,
    #[arg(long, default_value_t = 0)]
    pub seed: u64,
    #[arg(long, default_value_t = 20)]
    pub families: usize,
    #[arg(long, default_value_t = 3)]
    pub identities: usize,
    #[arg(long, default_value_t = 3)]
    pub images: usize,
    #[arg(long, default_value_t = 64)]
    pub dim: usize,
    #[arg(long, default_value_t = 1.0)]
    pub family_spread: f64,
    #[arg(long, default_value_t = 0.1)]
    pub identity_spread: f64,
    #[arg(long, default_value_t = 0.1)]
    pub image_noise: f64,
    /// Also write H×H feature maps (`*.kmap`) when > 0.
    #[arg(long, default_value_t = 0)]
    pub map_size: usize,
    #[arg(long, default_value_t = 0.1)]
    pub spatial_noise: f64,
}

#[derive(Debug, Args)]
pub struct SampleArgs {
    #[arg(long)]
    pub manifest: PathBuf,
    #[arg(long, default_value_t = DEFAULT_PAIRS_PER_CLASS)]
    pub n_pos: usize,
    #[arg(long, default_value_t = DEFAULT_PAIRS_PER_CLASS)]
    pub n_neg: usize,
    #[arg(long, default_value_t = 0)]
    pub seed: u64,
    /// Pairs CSV; a `.meta.json` sidecar is written next to it.
    #[arg(long)]
    pub out: PathBuf,
}

#[derive(Debug, Args)]
pub struct TrainArgs {
    #[arg(long)]
    pub embeddings: PathBuf,
    #[arg(long)]
    pub pairs: PathBuf,
    #[arg(long, value_enum, default_value_t = ScorerArg::FcComb1)]
    pub scorer: ScorerArg,
    /// JSON training config; explicit flags override its fields.
    #[arg(long)]
    pub config: Option<PathBuf>,
    #[arg(long, value_enum)]
    pub loss: Option<LossArg>,
    #[arg(long)]
    pub gamma: Option<f64>,
    #[arg(long)]
    pub lr: Option<f64>,
    #[arg(long)]
    pub epochs: Option<usize>,
    #[arg(long)]
    pub batch_size: Option<usize>,
    #[arg(long)]
    pub seed: Option<u64>,
    /// Head checkpoint JSON; a `.report.json` with the loss history is written next to it.
    #[arg(long)]
    pub out: PathBuf,
}

#[derive(Debug, Args)]
pub struct ScoreArgs {
    #[arg(long)]
    pub probe_embeddings: PathBuf,
    #[arg(long)]
    pub gallery_embeddings: PathBuf,
    #[arg(long, value_enum, default_value_t = ScorerArg::CosineAvg)]
    pub scorer: ScorerArg,
    /// Head checkpoint, required by the fc scorers.
    #[arg(long)]
    pub checkpoint: Option<PathBuf>,
    #[arg(long)]
    pub out: PathBuf,
}

#[derive(Debug, Args)]
pub struct RankArgs {
    /// Score CSV written by `score`.
    #[arg(long)]
    pub scores: PathBuf,
    #[arg(long)]
    pub manifest: PathBuf,
    /// Drop the probe's own identity from its ranked list.
    #[arg(long)]
    pub exclude_self: bool,
    /// Ranked CSV; a `.scores.csv` audit file is written next to it.
    #[arg(long)]
    pub out: PathBuf,
}

#[derive(Debug, Args)]
pub struct EvalArgs {
    /// Ranked CSV written by `rank`.
    #[arg(long)]
    pub ranked: PathBuf,
    #[arg(long)]
    pub manifest: PathBuf,
    #[arg(long, default_value_t = DEFAULT_K)]
    pub k: usize,
    #[arg(long)]
    pub out: PathBuf,
}

#[derive(Debug, Args)]
pub struct GridArgs {
    /// Manifest covering the probe and gallery images.
    #[arg(long)]
    pub manifest: PathBuf,
    #[arg(long)]
    pub probe_embeddings: PathBuf,
    #[arg(long)]
    pub gallery_embeddings: PathBuf,
    /// Training embeddings for the FC cells.
    #[arg(long)]
    pub embeddings: PathBuf,
    #[arg(long)]
    pub pairs: PathBuf,
    #[arg(long, default_value_t = crate::training::DEFAULT_GAMMA)]
    pub gamma: f64,
    #[arg(long, default_value_t = 1e-2)]
    pub lr: f64,
    #[arg(long, default_value_t = 120)]
    pub epochs: usize,
    #[arg(long, default_value_t = 64)]
    pub batch_size: usize,
    #[arg(long, default_value_t = DEFAULT_K)]
    pub k: usize,
    #[arg(long, default_value_t = 0)]
    pub seed: u64,
    #[arg(long)]
    pub exclude_self: bool,
    /// Output directory for `grid.csv` and `grid.json`.
    #[arg(long)]
    pub out: PathBuf,
}

/// Parses `argv` and runs it; returns the process exit code.
pub fn run<I, T>(argv: I) -> i32
where
    I: IntoIterator<Item = T>,
    T: Into<OsString> + Clone,
{
    let cli = match Cli::try_parse_from(argv) {
        Ok(cli) => cli,
        Err(e) => {
            let code = e.exit_code();
            let _ = e.print();
            return code;
        }
    };
    match execute(cli) {
        Ok(()) => 0,
        Err(e) => {
            eprintln!("error: {e:#}");
            1
        }
    }
}

pub fn execute(cli: Cli) -> Result<()> {
    eprintln!("[kinret] threads={} {:?}", cli.threads, cli.command);
    let pool = rayon::ThreadPoolBuilder::new()
        .num_threads(cli.threads)
        .build()
        .context("building thread pool")?;
    pool.install(|| match cli.command {
        Command::Scan(a) => cmd_scan(a),
        Command::Synth(a) => cmd_synth(a),
        Command::Sample(a) => cmd_sample(a),
        Command::Train(a) => cmd_train(a),
        Command::Score(a) => cmd_score(a),
        Command::Rank(a) => cmd_rank(a),
        Command::Eval(a) => cmd_eval(a),
        Command::Grid(a) => cmd_grid(a),
    })
}

fn require_files(paths: &[&Path]) -> Result<()> {
    for p in paths {
        if !p.is_file() {
            bail!("input file `{}` does not exist", p.display());
        }
    }
    Ok(())
}

fn sibling(path: &Path, suffix: &str) -> PathBuf {
    let mut name = path.file_stem().unwrap_or_default().to_os_string();
    name.push(suffix);
    path.with_file_name(name)
}

fn load_manifest(path: &Path) -> Result<DatasetManifest> {
    DatasetManifest::load(path).with_context(|| format!("manifest `{}`", path.display()))
}

fn load_source(path: &Path) -> Result<FeatureSource> {
    let store = read_any(path).with_context(|| format!("embeddings `{}`", path.display()))?;
    Ok(match store {
        AnyStore::Vectors(s) => FeatureSource::Vectors(s),
        AnyStore::Maps(m) => FeatureSource::Maps(m),
    })
}

fn load_vectors(path: &Path, pooling: Pooling) -> Result<EmbeddingStore> {
    let source = load_source(path)?;
    let pooled = source
        .pooled(pooling)
        .with_context(|| format!("embeddings `{}`", path.display()))?;
    Ok(pooled.into_owned())
}

fn cmd_scan(a: ScanArgs) -> Result<()> {
    let manifest = DatasetManifest::scan(&a.root).context("scan")?;
    manifest.save(&a.out)?;
    eprintln!(
        "[kinret] {} families, {} identities, {} images",
        manifest.family_count(),
        manifest.identity_count(),
        manifest.image_count()
    );
    Ok(())
}

fn cmd_synth(a: SynthArgs) -> Result<()> {
    let params = SynthParams {
        n_families: a.families,
        identities_per_family: a.identities,
        images_per_identity: a.images,
        dim: a.dim,
        family_spread: a.family_spread,
        identity_spread: a.identity_spread,
        image_noise: a.image_noise,
        seed: a.seed,
    };
    let ds = generate(&params).context("synth")?;
    fs::create_dir_all(&a.out).with_context(|| format!("creating `{}`", a.out.display()))?;
    ds.manifest.save(a.out.join("manifest.json"))?;
    let probe = ds.probe_store()?;
    let gallery = ds.gallery_store()?;
    write_store(&ds.store, a.out.join("embeddings.kemb"))?;
    write_store(&probe, a.out.join("probe.kemb"))?;
    write_store(&gallery, a.out.join("gallery.kemb"))?;
    let mut split = serde_json::to_string_pretty(&json!({
        "params": params,
        "split": ds.split,
    }))?;
    split.push('\n');
    fs::write(a.out.join("split.json"), split)?;
    if a.map_size > 0 {
        let maps = feature_maps(&ds.store, a.map_size, a.map_size, a.spatial_noise, a.seed)?;
        write_map_store(&maps, a.out.join("embeddings.kmap"))?;
        let ids = |s: &EmbeddingStore| s.ids().map(str::to_string).collect::<Vec<_>>();
        write_map_store(
            &maps.subset(ids(&probe).iter().map(String::as_str))?,
            a.out.join("probe.kmap"),
        )?;
        write_map_store(
            &maps.subset(ids(&gallery).iter().map(String::as_str))?,
            a.out.join("gallery.kmap"),
        )?;
    }
    Ok(())
}

fn cmd_sample(a: SampleArgs) -> Result<()> {
    require_files(&[&a.manifest])?;
    let manifest = load_manifest(&a.manifest)?;
    let sample = sample_pairs(&manifest, a.n_pos, a.n_neg, a.seed).context("sample")?;
    if sample.shortfall_pos() > 0 || sample.shortfall_neg() > 0 {
        eprintln!(
            "[kinret] shortfall: {} positive, {} negative pairs unavailable",
            sample.shortfall_pos(),
            sample.shortfall_neg()
        );
    }
    write_pairs_csv(&sample.pairs, &a.out)?;
    write_pairs_meta(&sample, sibling(&a.out, ".meta.json"))?;
    Ok(())
}

fn cmd_train(a: TrainArgs) -> Result<()> {
    require_files(&[&a.embeddings, &a.pairs])?;
    let Some(combination) = a.scorer.combination() else {
        bail!(
            "train needs an fc scorer (fc-comb1 or fc-comb2), got {}",
            a.scorer.name()
        );
    };
    let mut cfg = match &a.config {
        Some(p) => TrainConfig::load(p).with_context(|| format!("config `{}`", p.display()))?,
        None => TrainConfig::default(),
    };
    if let Some(l) = a.loss {
        cfg.loss_kind = l.into();
    }
    if let Some(g) = a.gamma {
        cfg.gamma = g;
    }
    if let Some(lr) = a.lr {
        cfg.learning_rate = lr;
    }
    if let Some(e) = a.epochs {
        cfg.epochs = e;
    }
    if let Some(b) = a.batch_size {
        cfg.batch_size = b;
    }
    if let Some(s) = a.seed {
        cfg.seed = s;
    }
    eprintln!("[kinret] train config {}", serde_json::to_string(&cfg)?);

    let store = load_vectors(&a.embeddings, Pooling::Average)?;
    let pairs = read_pairs_csv(&a.pairs)?;
    let report = train(&store, &pairs, combination, &cfg).context("train")?;
    report.head.save(&a.out)?;
    let mut text = serde_json::to_string_pretty(&report)?;
    text.push('\n');
    fs::write(sibling(&a.out, ".report.json"), text)?;
    eprintln!(
        "[kinret] final loss {:?} after {:.2?}",
        report.final_loss(),
        report.elapsed
    );
    Ok(())
}

fn cmd_score(a: ScoreArgs) -> Result<()> {
    require_files(&[&a.probe_embeddings, &a.gallery_embeddings])?;
    let scorer = match (a.scorer.combination(), &a.checkpoint) {
        (Some(comb), Some(ck)) => {
            require_files(&[ck])?;
            let head = SimilarityHead::load(ck)
                .with_context(|| format!("checkpoint `{}`", ck.display()))?;
            if head.combination() != comb {
                bail!(
                    "checkpoint was trained with {} but --scorer is {}",
                    head.combination(),
                    a.scorer.name()
                );
            }
            Scorer::Fc(head)
        }
        (Some(_), None) => bail!("--scorer {} requires --checkpoint", a.scorer.name()),
        (None, Some(_)) => bail!("--checkpoint only applies to fc scorers"),
        (None, None) => Scorer::Cosine,
    };
    let probe = load_vectors(&a.probe_embeddings, a.scorer.pooling())?;
    let gallery = load_vectors(&a.gallery_embeddings, a.scorer.pooling())?;
    let table = score_pairs(&probe, &gallery, &scorer).context("score")?;
    table.write_csv(&a.out)?;
    Ok(())
}

fn cmd_rank(a: RankArgs) -> Result<()> {
    require_files(&[&a.scores, &a.manifest])?;
    let manifest = load_manifest(&a.manifest)?;
    let table = ScoreTable::read_csv(&a.scores, "file").context("score table")?;
    let merged = merge_by_identity(&table, &manifest, &manifest).context("merge")?;
    let lists = rank(&merged, a.exclude_self);
    write_ranked_csv(&lists, &a.out)?;
    write_ranked_scores_csv(&lists, sibling(&a.out, ".scores.csv"))?;
    Ok(())
}

fn cmd_eval(a: EvalArgs) -> Result<()> {
    require_files(&[&a.ranked, &a.manifest])?;
    if a.k == 0 {
        bail!("--k must be at least 1");
    }
    let manifest = load_manifest(&a.manifest)?;
    let lists = read_ranked_csv(&a.ranked)?;
    let judgments = RelevanceJudgments::for_ranked_lists(&manifest, &lists)?;
    let report = evaluate(&lists, &judgments, a.k, &[], json!({ "k": a.k })).context("eval")?;
    report.save(&a.out)?;
    eprintln!(
        "[kinret] mAP {:.4}  Rank@{} {:.4}  composite {:.4}",
        report.map, a.k, report.rank_at_k[&a.k], report.composite
    );
    Ok(())
}

fn cmd_grid(a: GridArgs) -> Result<()> {
    require_files(&[
        &a.manifest,
        &a.probe_embeddings,
        &a.gallery_embeddings,
        &a.embeddings,
        &a.pairs,
    ])?;
    if a.k == 0 {
        bail!("--k must be at least 1");
    }
    let inputs = GridInputs {
        manifest: load_manifest(&a.manifest)?,
        probe: load_source(&a.probe_embeddings)?,
        gallery: load_source(&a.gallery_embeddings)?,
        train: load_source(&a.embeddings)?,
        pairs: read_pairs_csv(&a.pairs)?,
        train_config: TrainConfig {
            gamma: a.gamma,
            learning_rate: a.lr,
            epochs: a.epochs,
            batch_size: a.batch_size,
            seed: a.seed,
            ..TrainConfig::default()
        },
        k: a.k,
        exclude_self: a.exclude_self,
    };
    inputs.train_config.validate()?;
    let table = run_grid(&inputs, &GridSpec::full());
    table.save(&a.out)?;
    eprint!("{}", table.to_csv());
    Ok(())
}
