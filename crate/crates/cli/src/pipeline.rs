//! The experiment stages. Every stage reads its inputs from, and writes its
//! outputs to, fixed locations under the configured output directory.

use std::fs;
use std::path::{Path, PathBuf};

use anyhow::{bail, Context, Result};
use serde::Serialize;
use weaksupcon_core::analysis::{
    cosine_histogram, densest_anchor, evaluate, histogram_edges, mean_std, pca_spread, MetricsReport, HISTOGRAM_BINS,
};
use weaksupcon_core::checkpoint::{load_checkpoint, save_checkpoint};
use weaksupcon_core::mildata::{read_feature_store, write_feature_store, FeatureStore};
use weaksupcon_core::mildata::{generate_synthetic, Bag, BagLabel};
use weaksupcon_core::milmodels::{predict_bags, train_mil, MilModel};
use weaksupcon_core::numcore::Tensor;
use weaksupcon_core::representation::{extract_features, pretrain, ContrastiveModel, PretrainMode};

use crate::config::RunConfig;
use crate::report::{fmt_f64, write_csv};

pub const SPLITS: [&str; 3] = ["train", "val", "test"];

/// Where each artifact lives for a given config.
#[derive(Debug, Clone)]
pub struct Layout {
    pub root: PathBuf,
}

impl Layout {
    pub fn new(cfg: &RunConfig) -> Self {
        Layout {
            root: cfg.out_dir.clone(),
        }
    }

    pub fn data(&self, split: &str) -> PathBuf {
        self.root.join("data").join(format!("{split}.wscf"))
    }

    /// Identifies one pretraining run.
    pub fn pretrain_tag(cfg: &RunConfig, seed: u64) -> String {
        let l = &cfg.pretrain.loss;
        format!("{}-tau{}-alpha{}-seed{seed}", cfg.pretrain.mode.name(), l.tau, l.alpha)
    }

    pub fn mil_tag(cfg: &RunConfig, seed: u64) -> String {
        format!("{}-{}", Self::pretrain_tag(cfg, seed), cfg.mil.kind.name())
    }

    pub fn encoder_checkpoint(&self, tag: &str) -> PathBuf {
        self.root.join("pretrain").join(format!("{tag}.wsck"))
    }

    pub fn loss_log(&self, tag: &str) -> PathBuf {
        self.root.join("pretrain").join(format!("{tag}-loss.csv"))
    }

    /// Embeddings `h` per split, plus projected `z` as split `train-z`.
    pub fn features(&self, tag: &str, split: &str) -> PathBuf {
        self.root.join("features").join(tag).join(format!("{split}.wscf"))
    }

    pub fn mil_checkpoint(&self, tag: &str) -> PathBuf {
        self.root.join("mil").join(format!("{tag}.wsck"))
    }

    pub fn mil_log(&self, tag: &str) -> PathBuf {
        self.root.join("mil").join(format!("{tag}-val.csv"))
    }

    pub fn metrics(&self, cfg: &RunConfig) -> PathBuf {
        let l = &cfg.pretrain.loss;
        self.root.join("eval").join(format!(
            "{}-tau{}-alpha{}-{}-metrics.csv",
            cfg.pretrain.mode.name(),
            l.tau,
            l.alpha,
            cfg.mil.kind.name()
        ))
    }

    pub fn analysis(&self, tag: &str, name: &str) -> PathBuf {
        self.root.join("analysis").join(tag).join(name)
    }

    pub fn ablation(&self) -> PathBuf {
        self.root.join("ablate").join("ablation.csv")
    }
}

fn ensure_parent(path: &Path) -> Result<()> {
    if let Some(p) = path.parent() {
        fs::create_dir_all(p).with_context(|| format!("creating {}", p.display()))?;
    }
    Ok(())
}

fn read_store(path: &Path) -> Result<FeatureStore> {
    if !path.exists() {
        bail!("missing input {}", path.display());
    }
    read_feature_store(path).with_context(|| format!("reading {}", path.display()))
}

fn write_store(path: &Path, dim: usize, bags: Vec<Bag>) -> Result<PathBuf> {
    ensure_parent(path)?;
    write_feature_store(path, &FeatureStore::new(dim, bags)?)?;
    Ok(path.to_path_buf())
}

pub fn gen_data(cfg: &RunConfig) -> Result<Vec<PathBuf>> {
    let layout = Layout::new(cfg);
    let data = generate_synthetic(&cfg.data)?;
    let mut out = Vec::new();
    for (split, bags) in SPLITS.iter().zip([data.train, data.val, data.test]) {
        out.push(write_store(&layout.data(split), cfg.data.d, bags)?);
    }
    Ok(out)
}

pub fn pretrain_stage(cfg: &RunConfig, seed: u64) -> Result<Vec<PathBuf>> {
    let layout = Layout::new(cfg);
    let train = read_store(&layout.data("train"))?;
    let pc = cfg.pretrain_for(seed);
    let out = pretrain(&train.bags, &pc)?;
    let tag = Layout::pretrain_tag(cfg, seed);

    let ck_path = layout.encoder_checkpoint(&tag);
    ensure_parent(&ck_path)?;
    let ck = out
        .model
        .to_checkpoint(seed, pc.epochs, cfg.hash(), Some(pc.mode.name().to_string()));
    save_checkpoint(&ck_path, &ck)?;

    let log_path = layout.loss_log(&tag);
    let rows = out.log.iter().map(|e| {
        vec![
            e.epoch.to_string(),
            fmt_f64(e.total),
            fmt_f64(e.similarity_part),
            fmt_f64(e.simclr_part),
        ]
    });
    write_csv(&log_path, &["epoch", "total", "similarity_part", "simclr_part"], rows)?;
    Ok(vec![ck_path, log_path])
}

fn load_encoder(cfg: &RunConfig, path: &Path) -> Result<ContrastiveModel> {
    if !path.exists() {
        bail!("missing input {}", path.display());
    }
    let ck = load_checkpoint(path).with_context(|| format!("reading {}", path.display()))?;
    ck.check_config_hash(&cfg.hash());
    Ok(ContrastiveModel::from_checkpoint(&ck)?)
}

pub fn extract_stage(cfg: &RunConfig, seed: u64) -> Result<Vec<PathBuf>> {
    let layout = Layout::new(cfg);
    let tag = Layout::pretrain_tag(cfg, seed);
    let model = load_encoder(cfg, &layout.encoder_checkpoint(&tag))?;
    let emb = cfg.pretrain.encoder.embedding_dim();
    let mut out = Vec::new();
    for split in SPLITS {
        let store = read_store(&layout.data(split))?;
        let h = extract_features(&store.bags, &model, false)?;
        out.push(write_store(&layout.features(&tag, split), emb, h)?);
    }
    let train = read_store(&layout.data("train"))?;
    let z = extract_features(&train.bags, &model, true)?;
    out.push(write_store(
        &layout.features(&tag, "train-z"),
        cfg.pretrain.projection.output_width,
        z,
    )?);
    Ok(out)
}

pub fn train_mil_stage(cfg: &RunConfig, seed: u64) -> Result<Vec<PathBuf>> {
    let layout = Layout::new(cfg);
    let ptag = Layout::pretrain_tag(cfg, seed);
    let train = read_store(&layout.features(&ptag, "train"))?;
    let val = read_store(&layout.features(&ptag, "val"))?;
    let tc = cfg.mil_train_for(seed);
    let out = train_mil(&train.bags, &val.bags, &cfg.mil, &tc)?;
    let tag = Layout::mil_tag(cfg, seed);

    let ck_path = layout.mil_checkpoint(&tag);
    ensure_parent(&ck_path)?;
    save_checkpoint(&ck_path, &out.model.to_checkpoint(seed, out.best_epoch, cfg.hash()))?;

    let log_path = layout.mil_log(&tag);
    let rows = out.history.iter().map(|e| {
        vec![
            e.epoch.to_string(),
            fmt_f64(e.train_loss),
            fmt_f64(e.val_auc),
            (e.epoch == out.best_epoch).to_string(),
        ]
    });
    write_csv(&log_path, &["epoch", "train_loss", "val_auc", "selected"], rows)?;
    Ok(vec![ck_path, log_path])
}

/// Test-split metrics for one seed's MIL model.
pub fn test_metrics(cfg: &RunConfig, seed: u64) -> Result<MetricsReport> {
    let layout = Layout::new(cfg);
    let ptag = Layout::pretrain_tag(cfg, seed);
    let ck_path = layout.mil_checkpoint(&Layout::mil_tag(cfg, seed));
    if !ck_path.exists() {
        bail!("missing input {}", ck_path.display());
    }
    let ck = load_checkpoint(&ck_path).with_context(|| format!("reading {}", ck_path.display()))?;
    ck.check_config_hash(&cfg.hash());
    let model = MilModel::from_checkpoint(&ck)?;
    if model.spec.kind != cfg.mil.kind {
        bail!(
            "checkpoint {} holds a {} model, config asks for {}",
            ck_path.display(),
            model.spec.kind.name(),
            cfg.mil.kind.name()
        );
    }
    let test = read_store(&layout.features(&ptag, "test"))?;
    let preds = predict_bags(&model, &test.bags, seed)?;
    let scores: Vec<f64> = preds.iter().map(|p| p.score).collect();
    let labels: Vec<bool> = test.bags.iter().map(|b| b.label.is_positive()).collect();
    Ok(evaluate(&scores, &labels, cfg.decision_threshold)?)
}

/// Per-seed rows followed by `mean` and `std` (sample) rows.
pub fn metrics_rows(model: &str, per_seed: &[(u64, MetricsReport)]) -> Vec<Vec<String>> {
    let mut rows: Vec<Vec<String>> = per_seed
        .iter()
        .map(|(s, m)| {
            vec![
                model.to_string(),
                s.to_string(),
                fmt_f64(m.balanced_accuracy),
                fmt_f64(m.accuracy),
                fmt_f64(m.auc),
            ]
        })
        .collect();
    let col = |f: fn(&MetricsReport) -> f64| mean_std(&per_seed.iter().map(|(_, m)| f(m)).collect::<Vec<_>>());
    let stats = [col(|m| m.balanced_accuracy), col(|m| m.accuracy), col(|m| m.auc)];
    rows.push(
        [model.to_string(), "mean".into()]
            .into_iter()
            .chain(stats.iter().map(|s| fmt_f64(s.0)))
            .collect(),
    );
    rows.push(
        [model.to_string(), "std".into()]
            .into_iter()
            .chain(stats.iter().map(|s| fmt_f64(s.1)))
            .collect(),
    );
    rows
}

pub const METRICS_HEADER: [&str; 5] = ["model", "seed", "balanced_accuracy", "accuracy", "auc"];

pub fn eval_stage(cfg: &RunConfig) -> Result<(Vec<PathBuf>, Vec<(u64, MetricsReport)>)> {
    let layout = Layout::new(cfg);
    let per_seed = cfg
        .seeds()
        .into_iter()
        .map(|s| Ok((s, test_metrics(cfg, s)?)))
        .collect::<Result<Vec<_>>>()?;
    let model = format!("{}+{}", cfg.pretrain.mode.name(), cfg.mil.kind.name());
    let path = layout.metrics(cfg);
    write_csv(&path, &METRICS_HEADER, metrics_rows(&model, &per_seed))?;
    Ok((vec![path], per_seed))
}

/// Stacked rows of every bag with one group name per row.
fn stack(bags: &[Bag]) -> Result<(Tensor, Vec<String>)> {
    let d = bags.first().map(|b| b.dim()).context("no bags to analyze")?;
    let mut data = Vec::new();
    let mut groups = Vec::new();
    for b in bags {
        data.extend_from_slice(b.instances.data());
        let g = match b.label {
            BagLabel::Negative => "negative",
            BagLabel::Positive => "positive",
        };
        groups.extend(std::iter::repeat_n(g.to_string(), b.len()));
    }
    Ok((Tensor::matrix(groups.len(), d, data)?, groups))
}

/// Diagnostics on projected training features.
#[derive(Debug, Clone, Serialize)]
pub struct AnalysisSummary {
    pub anchor_index: usize,
    pub neighbor_count: usize,
    pub fraction_above_0_9: f64,
    pub fraction_above_0_999: f64,
    pub negative_fraction_above_0_9: f64,
    pub positive_fraction_above_0_9: f64,
    pub negative_pc1_range: f64,
    pub positive_pc1_range: f64,
}

pub fn analyze_stage(cfg: &RunConfig, seed: u64) -> Result<(Vec<PathBuf>, AnalysisSummary)> {
    let layout = Layout::new(cfg);
    let tag = Layout::pretrain_tag(cfg, seed);
    let store = read_store(&layout.features(&tag, "train-z"))?;
    let (z, groups) = stack(&store.bags)?;
    let report = densest_anchor(&z, cfg.anchor_threshold)?;

    let group_frac = |name: &str, t: f64| {
        let vals: Vec<f64> = report
            .cosines
            .iter()
            .zip(&groups)
            .filter(|(_, g)| *g == name)
            .map(|(c, _)| *c)
            .collect();
        if vals.is_empty() {
            f64::NAN
        } else {
            vals.iter().filter(|&&c| c > t).count() as f64 / vals.len() as f64
        }
    };
    let spread = pca_spread(&z, &groups)?;
    let summary = AnalysisSummary {
        anchor_index: report.anchor_index,
        neighbor_count: report.neighbor_count,
        fraction_above_0_9: report.fraction_above(0.9),
        fraction_above_0_999: report.fraction_above(0.999),
        negative_fraction_above_0_9: group_frac("negative", 0.9),
        positive_fraction_above_0_9: group_frac("positive", 0.9),
        negative_pc1_range: spread.range_of("negative").unwrap_or(f64::NAN),
        positive_pc1_range: spread.range_of("positive").unwrap_or(f64::NAN),
    };

    let mut out = Vec::new();
    let anchor_path = layout.analysis(&tag, "anchor.csv");
    let rows = vec![
        vec!["anchor_index".to_string(), summary.anchor_index.to_string()],
        vec!["threshold".into(), fmt_f64(cfg.anchor_threshold)],
        vec!["neighbor_count".into(), summary.neighbor_count.to_string()],
        vec!["sample_count".into(), report.cosines.len().to_string()],
        vec!["fraction_above_0.9".into(), fmt_f64(summary.fraction_above_0_9)],
        vec!["fraction_above_0.999".into(), fmt_f64(summary.fraction_above_0_999)],
        vec!["negative_fraction_above_0.9".into(), fmt_f64(summary.negative_fraction_above_0_9)],
        vec!["positive_fraction_above_0.9".into(), fmt_f64(summary.positive_fraction_above_0_9)],
        vec!["negative_fraction_above_0.999".into(), fmt_f64(group_frac("negative", 0.999))],
        vec!["positive_fraction_above_0.999".into(), fmt_f64(group_frac("positive", 0.999))],
        vec!["negative_pc1_range".into(), fmt_f64(summary.negative_pc1_range)],
        vec!["positive_pc1_range".into(), fmt_f64(summary.positive_pc1_range)],
    ];
    write_csv(&anchor_path, &["metric", "value"], rows)?;
    out.push(anchor_path);

    let edges = histogram_edges(HISTOGRAM_BINS);
    for (name, filter) in [("histogram.csv", None), ("histogram-negative.csv", Some("negative")), ("histogram-positive.csv", Some("positive"))] {
        let vals: Vec<f64> = report
            .cosines
            .iter()
            .zip(&groups)
            .filter(|(_, g)| filter.is_none_or(|f| *g == f))
            .map(|(c, _)| *c)
            .collect();
        let counts = cosine_histogram(&vals, HISTOGRAM_BINS)?;
        let rows = edges
            .iter()
            .zip(counts)
            .map(|(&(l, r), c)| vec![fmt_f64(l), fmt_f64(r), c.to_string()]);
        let path = layout.analysis(&tag, name);
        write_csv(&path, &["bin_left", "bin_right", "count"], rows)?;
        out.push(path);
    }

    let pca_path = layout.analysis(&tag, "pca.csv");
    let rows = spread
        .points
        .iter()
        .map(|p| vec![fmt_f64(p.x), fmt_f64(p.y), p.group.clone()]);
    write_csv(&pca_path, &["x", "y", "group"], rows)?;
    out.push(pca_path);
    Ok((out, summary))
}

pub const ABLATION_ALPHAS: [f64; 3] = [0.25, 1.0, 4.0];

/// WeakSupCon pretraining, extraction, MIL training and evaluation for each
/// Similarity Loss weight, over every repeat seed.
pub fn ablate_stage(cfg: &RunConfig) -> Result<Vec<PathBuf>> {
    let layout = Layout::new(cfg);
    if !layout.data("train").exists() {
        gen_data(cfg)?;
    }
    let mut out = Vec::new();
    let mut table = Vec::new();
    for alpha in ABLATION_ALPHAS {
        let mut c = cfg.clone();
        c.pretrain.mode = PretrainMode::Weaksupcon;
        c.pretrain.loss.alpha = alpha;
        for seed in c.seeds() {
            out.extend(pretrain_stage(&c, seed)?);
            out.extend(extract_stage(&c, seed)?);
            out.extend(train_mil_stage(&c, seed)?);
        }
        let (paths, per_seed) = eval_stage(&c)?;
        out.extend(paths);
        let col = |f: fn(&MetricsReport) -> f64| mean_std(&per_seed.iter().map(|(_, m)| f(m)).collect::<Vec<_>>());
        let (ba, acc, auc) = (col(|m| m.balanced_accuracy), col(|m| m.accuracy), col(|m| m.auc));
        table.push(vec![
            fmt_f64(alpha),
            c.mil.kind.name().to_string(),
            fmt_f64(ba.0),
            fmt_f64(ba.1),
            fmt_f64(acc.0),
            fmt_f64(acc.1),
            fmt_f64(auc.0),
            fmt_f64(auc.1),
        ]);
    }
    let path = layout.ablation();
    write_csv(
        &path,
        &[
            "alpha",
            "mil_kind",
            "balanced_accuracy_mean",
            "balanced_accuracy_std",
            "accuracy_mean",
            "accuracy_std",
            "auc_mean",
            "auc_std",
        ],
        table,
    )?;
    out.push(path);
    Ok(out)
}
