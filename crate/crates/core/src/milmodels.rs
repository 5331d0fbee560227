//! Bag classifiers over frozen instance features: mean pooling, max pooling,
//! gated attention (AB-MIL), and the two-tier pseudo-bag scheme (DTFD).

use std::cmp::Ordering;
use std::sync::Arc;

use serde::{Deserialize, Serialize};

use crate::analysis::roc_auc;
use crate::checkpoint::{Architecture, Checkpoint};
use crate::error::{Error, Result};
use crate::mildata::{Bag, BagLabel};
use crate::numcore::{sigmoid, Graph, Rng, Tensor, Var};
use crate::representation::{mlp_from, sgd_step, Activation, BoundMlp, Linear, Mlp};

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "lowercase")]
pub enum MilKind {
    Mean,
    Max,
    Abmil,
    Dtfd,
}

impl MilKind {
    pub fn name(self) -> &'static str {
        match self {
            MilKind::Mean => "mean",
            MilKind::Max => "max",
            MilKind::Abmil => "abmil",
            MilKind::Dtfd => "dtfd",
        }
    }
}

impl std::str::FromStr for MilKind {
    type Err = Error;
    fn from_str(s: &str) -> Result<Self> {
        match s {
            "mean" => Ok(MilKind::Mean),
            "max" => Ok(MilKind::Max),
            "abmil" => Ok(MilKind::Abmil),
            "dtfd" => Ok(MilKind::Dtfd),
            other => Err(Error::InvalidConfig(format!("unknown MIL kind {other:?}"))),
        }
    }
}

#[derive(Debug, Clone, PartialEq, Eq, Serialize, Deserialize)]
#[serde(deny_unknown_fields, default)]
pub struct MilModelSpec {
    pub kind: MilKind,
    pub input_dim: usize,
    pub attention_dim: usize,
    pub num_pseudo_bags: usize,
    /// Hidden widths of the bag-level classifier (empty: linear).
    pub classifier_widths: Vec<usize>,
}

impl Default for MilModelSpec {
    fn default() -> Self {
        MilModelSpec {
            kind: MilKind::Abmil,
            input_dim: 32,
            attention_dim: 16,
            num_pseudo_bags: 4,
            classifier_widths: vec![],
        }
    }
}

impl MilModelSpec {
    pub fn validate(&self) -> Result<()> {
        if self.input_dim == 0 || self.attention_dim == 0 || self.classifier_widths.contains(&0) {
            return Err(Error::InvalidConfig(format!("MIL widths must be >= 1: {self:?}")));
        }
        if self.kind == MilKind::Dtfd && self.num_pseudo_bags < 2 {
            return Err(Error::InvalidConfig(format!(
                "dtfd needs num_pseudo_bags >= 2, got {}",
                self.num_pseudo_bags
            )));
        }
        Ok(())
    }

    fn classifier_dims(&self) -> Vec<usize> {
        std::iter::once(self.input_dim)
            .chain(self.classifier_widths.iter().copied())
            .chain(std::iter::once(1))
            .collect()
    }
}

/// Bag-level output.
#[derive(Debug, Clone, PartialEq)]
pub struct BagPrediction {
    pub bag_id: u32,
    /// Positive-class probability.
    pub score: f64,
    pub attention: Option<Vec<f64>>,
}

/// Gated attention scorer: `e_k = w · (tanh(V h_k) ⊙ sigmoid(U h_k))`.
#[derive(Debug, Clone, PartialEq)]
pub struct GatedAttention {
    pub v: Linear,
    pub u: Linear,
    pub w: Tensor,
}

impl GatedAttention {
    fn init(d: usize, a: usize, rng: &mut Rng) -> Self {
        let v = Linear::init(d, a, rng);
        let u = Linear::init(d, a, rng);
        let bound = (6.0 / a as f64).sqrt();
        let w = Tensor::matrix(a, 1, (0..a).map(|_| rng.uniform_range(-bound, bound)).collect()).expect("a >= 1");
        GatedAttention { v, u, w }
    }

    fn tensors_mut(&mut self) -> impl Iterator<Item = &mut Tensor> {
        [
            &mut self.v.weight,
            &mut self.v.bias,
            &mut self.u.weight,
            &mut self.u.bias,
            &mut self.w,
        ]
        .into_iter()
    }

    fn named(&self, prefix: &str) -> Vec<(String, Tensor)> {
        vec![
            (format!("{prefix}.v.weight"), self.v.weight.clone()),
            (format!("{prefix}.v.bias"), self.v.bias.clone()),
            (format!("{prefix}.u.weight"), self.u.weight.clone()),
            (format!("{prefix}.u.bias"), self.u.bias.clone()),
            (format!("{prefix}.w"), self.w.clone()),
        ]
    }

    fn from_checkpoint(ck: &Checkpoint, prefix: &str, d: usize, a: usize) -> Result<Self> {
        let get = |name: &str, shape: [usize; 2]| -> Result<Tensor> {
            let t = ck.tensor(&format!("{prefix}.{name}"))?;
            if t.shape() != shape {
                return Err(Error::ArchitectureMismatch(format!(
                    "{prefix}.{name}: expected {shape:?}, found {:?}",
                    t.shape()
                )));
            }
            Ok(t.clone())
        };
        Ok(GatedAttention {
            v: Linear {
                weight: get("v.weight", [d, a])?,
                bias: get("v.bias", [1, a])?,
            },
            u: Linear {
                weight: get("u.weight", [d, a])?,
                bias: get("u.bias", [1, a])?,
            },
            w: get("w", [a, 1])?,
        })
    }
}

#[derive(Debug, Clone, Copy)]
struct BoundAttention {
    vw: Var,
    vb: Var,
    uw: Var,
    ub: Var,
    w: Var,
}

impl BoundAttention {
    fn bind(a: &GatedAttention, g: &mut Graph) -> Self {
        BoundAttention {
            vw: g.param(a.v.weight.clone()),
            vb: g.param(a.v.bias.clone()),
            uw: g.param(a.u.weight.clone()),
            ub: g.param(a.u.bias.clone()),
            w: g.param(a.w.clone()),
        }
    }

    fn vars(&self) -> [Var; 5] {
        [self.vw, self.vb, self.uw, self.ub, self.w]
    }

    /// `(attention n×1, pooled 1×D)`.
    fn pool(&self, g: &mut Graph, h: Var) -> Result<(Var, Var)> {
        let v = g.matmul(h, self.vw)?;
        let v = g.add_row(v, self.vb)?;
        let v = g.tanh(v);
        let u = g.matmul(h, self.uw)?;
        let u = g.add_row(u, self.ub)?;
        let u = g.sigmoid(u);
        let gated = g.mul(v, u)?;
        let e = g.matmul(gated, self.w)?;
        let a = g.softmax(e);
        let pooled = g.matmul_tn(a, h)?;
        Ok((a, pooled))
    }
}

/// Parameters of any MIL head.
#[derive(Debug, Clone, PartialEq)]
pub struct MilModel {
    pub spec: MilModelSpec,
    /// Tier-1 attention for dtfd.
    pub attention: Option<GatedAttention>,
    /// Bag classifier (tier-1 pseudo-bag classifier for dtfd).
    pub classifier: Mlp,
    pub tier2_attention: Option<GatedAttention>,
    pub tier2_classifier: Option<Mlp>,
}

/// Graph handles for a [`MilModel`].
#[derive(Debug, Clone)]
pub struct BoundMil {
    attention: Option<BoundAttention>,
    classifier: BoundMlp,
    tier2_attention: Option<BoundAttention>,
    tier2_classifier: Option<BoundMlp>,
}

impl BoundMil {
    /// Parameter handles in [`MilModel::tensors_mut`] order.
    pub fn vars(&self) -> Vec<Var> {
        let mut v: Vec<Var> = self.attention.iter().flat_map(|a| a.vars()).collect();
        v.extend(self.classifier.vars());
        v.extend(self.tier2_attention.iter().flat_map(|a| a.vars()));
        if let Some(c) = &self.tier2_classifier {
            v.extend(c.vars());
        }
        v
    }
}

/// Recorded forward pass of one bag.
#[derive(Debug, Clone)]
pub struct MilForward {
    /// Bag logit (`1×1`).
    pub logit: Var,
    pub attention: Option<Var>,
    /// Tier-1 pseudo-bag logits (dtfd only).
    pub tier1_logits: Vec<Var>,
}

impl MilModel {
    pub fn init(spec: &MilModelSpec, rng: &mut Rng) -> Result<Self> {
        spec.validate()?;
        let d = spec.input_dim;
        let attention = matches!(spec.kind, MilKind::Abmil | MilKind::Dtfd).then(|| GatedAttention::init(d, spec.attention_dim, rng));
        let classifier = Mlp::init(&spec.classifier_dims(), Activation::Relu, rng);
        let (tier2_attention, tier2_classifier) = if spec.kind == MilKind::Dtfd {
            (
                Some(GatedAttention::init(d, spec.attention_dim, rng)),
                Some(Mlp::init(&spec.classifier_dims(), Activation::Relu, rng)),
            )
        } else {
            (None, None)
        };
        Ok(MilModel {
            spec: spec.clone(),
            attention,
            classifier,
            tier2_attention,
            tier2_classifier,
        })
    }

    pub fn bind(&self, g: &mut Graph) -> BoundMil {
        BoundMil {
            attention: self.attention.as_ref().map(|a| BoundAttention::bind(a, g)),
            classifier: self.classifier.bind(g),
            tier2_attention: self.tier2_attention.as_ref().map(|a| BoundAttention::bind(a, g)),
            tier2_classifier: self.tier2_classifier.as_ref().map(|c| c.bind(g)),
        }
    }

    pub fn tensors_mut(&mut self) -> Vec<&mut Tensor> {
        let mut v: Vec<&mut Tensor> = Vec::new();
        if let Some(a) = &mut self.attention {
            v.extend(a.tensors_mut());
        }
        v.extend(self.classifier.tensors_mut());
        if let Some(a) = &mut self.tier2_attention {
            v.extend(a.tensors_mut());
        }
        if let Some(c) = &mut self.tier2_classifier {
            v.extend(c.tensors_mut());
        }
        v
    }

    pub fn named_tensors(&self) -> Vec<(String, Tensor)> {
        let mut v = Vec::new();
        if let Some(a) = &self.attention {
            v.extend(a.named("attention"));
        }
        v.extend(self.classifier.named("classifier"));
        if let Some(a) = &self.tier2_attention {
            v.extend(a.named("tier2.attention"));
        }
        if let Some(c) = &self.tier2_classifier {
            v.extend(c.named("tier2.classifier"));
        }
        v
    }

    pub fn to_checkpoint(&self, seed: u64, epoch: u32, config_hash: String) -> Checkpoint {
        Checkpoint::new(
            Architecture::Mil { spec: self.spec.clone() },
            seed,
            epoch,
            config_hash,
            Some(self.spec.kind.name().to_string()),
            self.named_tensors(),
        )
    }

    pub fn from_checkpoint(ck: &Checkpoint) -> Result<Self> {
        let Architecture::Mil { spec } = &ck.header.architecture else {
            return Err(Error::ArchitectureMismatch(format!(
                "expected a MIL checkpoint, found {}",
                ck.header.architecture.kind()
            )));
        };
        spec.validate()?;
        let (d, a) = (spec.input_dim, spec.attention_dim);
        let dims = spec.classifier_dims();
        let attention = match spec.kind {
            MilKind::Abmil | MilKind::Dtfd => Some(GatedAttention::from_checkpoint(ck, "attention", d, a)?),
            _ => None,
        };
        let classifier = mlp_from(ck, "classifier", &dims, Activation::Relu)?;
        let (tier2_attention, tier2_classifier) = if spec.kind == MilKind::Dtfd {
            (
                Some(GatedAttention::from_checkpoint(ck, "tier2.attention", d, a)?),
                Some(mlp_from(ck, "tier2.classifier", &dims, Activation::Relu)?),
            )
        } else {
            (None, None)
        };
        Ok(MilModel {
            spec: spec.clone(),
            attention,
            classifier,
            tier2_attention,
            tier2_classifier,
        })
    }

    /// Records the forward pass for one bag's `n×D` features.
    ///
    /// `rng` drives the dtfd pseudo-bag split and is ignored by other kinds.
    pub fn forward_graph(&self, bound: &BoundMil, g: &mut Graph, h: Var, rng: &mut Rng) -> Result<MilForward> {
        let n = g.value(h).rows();
        if n == 0 {
            return Err(Error::EmptyBag(u32::MAX));
        }
        match self.spec.kind {
            MilKind::Mean => {
                let m = g.mean_rows(h)?;
                let logit = bound.classifier.forward(g, m)?;
                Ok(MilForward {
                    logit,
                    attention: None,
                    tier1_logits: vec![],
                })
            }
            MilKind::Max => {
                let scores = bound.classifier.forward(g, h)?;
                let logit = g.max_all(scores);
                Ok(MilForward {
                    logit,
                    attention: None,
                    tier1_logits: vec![],
                })
            }
            MilKind::Abmil => {
                let att = bound.attention.as_ref().expect("abmil binds attention");
                let (a, pooled) = att.pool(g, h)?;
                let logit = bound.classifier.forward(g, pooled)?;
                Ok(MilForward {
                    logit,
                    attention: Some(a),
                    tier1_logits: vec![],
                })
            }
            MilKind::Dtfd => {
                let m = self.spec.num_pseudo_bags;
                let groups = dtfd_groups(g.value(h), m, rng)?;
                let att1 = bound.attention.as_ref().expect("dtfd binds tier-1 attention");
                let mut feats = Vec::with_capacity(m);
                let mut tier1 = Vec::with_capacity(m);
                for idx in groups {
                    let hm = g.select_rows(h, Arc::new(idx))?;
                    let (_, pooled) = att1.pool(g, hm)?;
                    tier1.push(bound.classifier.forward(g, pooled)?);
                    feats.push(pooled);
                }
                let f = g.concat_rows(&feats)?;
                let att2 = bound.tier2_attention.as_ref().expect("dtfd binds tier-2 attention");
                let (a2, pooled2) = att2.pool(g, f)?;
                let logit = bound.tier2_classifier.as_ref().expect("dtfd binds tier-2 classifier").forward(g, pooled2)?;
                Ok(MilForward {
                    logit,
                    attention: Some(a2),
                    tier1_logits: tier1,
                })
            }
        }
    }

    /// Training loss: BCE on the bag logit, plus for dtfd the mean tier-1
    /// BCE (pseudo-bags inherit the bag label).
    pub fn loss_graph(&self, g: &mut Graph, fwd: &MilForward, label: BagLabel) -> Result<Var> {
        let y = label.as_f64();
        let main = g.bce_with_logits(fwd.logit, y)?;
        if fwd.tier1_logits.is_empty() {
            return Ok(main);
        }
        let mut tier1 = g.bce_with_logits(fwd.tier1_logits[0], y)?;
        for &l in &fwd.tier1_logits[1..] {
            let b = g.bce_with_logits(l, y)?;
            tier1 = g.add(tier1, b)?;
        }
        let tier1 = g.scale(tier1, 1.0 / fwd.tier1_logits.len() as f64);
        g.add(main, tier1)
    }

    /// Scores one bag's features. dtfd draws its split from `rng`.
    pub fn predict_with(&self, bag_id: u32, features: &Tensor, rng: &mut Rng) -> Result<(BagPrediction, Vec<f64>)> {
        if features.rank() != 2 || features.rows() == 0 {
            return Err(Error::EmptyBag(bag_id));
        }
        if features.cols() != self.spec.input_dim {
            return Err(crate::error::shape_mismatch("mil_forward", features.shape(), &[self.spec.input_dim]));
        }
        let mut g = Graph::new();
        let bound = self.bind(&mut g);
        let h = g.constant(features.clone());
        let fwd = self.forward_graph(&bound, &mut g, h, rng).map_err(|e| match e {
            Error::EmptyBag(_) => Error::EmptyBag(bag_id),
            other => other,
        })?;
        let tier1 = fwd
            .tier1_logits
            .iter()
            .map(|&l| g.scalar_value(l).map(sigmoid))
            .collect::<Result<Vec<_>>>()?;
        Ok((
            BagPrediction {
                bag_id,
                score: sigmoid(g.scalar_value(fwd.logit)?),
                attention: fwd.attention.map(|a| g.value(a).data().to_vec()),
            },
            tier1,
        ))
    }

    /// Scores a bag; dtfd uses a split seeded by `(eval_seed, bag id)`.
    pub fn predict(&self, bag: &Bag, eval_seed: u64) -> Result<BagPrediction> {
        let mut rng = Rng::substream(eval_seed, "dtfd-eval", &[bag.id as u64]);
        Ok(self.predict_with(bag.id, &bag.instances, &mut rng)?.0)
    }
}

fn require_kind(model: &MilModel, kind: MilKind) -> Result<()> {
    if model.spec.kind != kind {
        return Err(Error::ArchitectureMismatch(format!(
            "{} forward called on a {} model",
            kind.name(),
            model.spec.kind.name()
        )));
    }
    Ok(())
}

pub fn mean_pool_forward(bag_id: u32, features: &Tensor, model: &MilModel) -> Result<BagPrediction> {
    require_kind(model, MilKind::Mean)?;
    Ok(model.predict_with(bag_id, features, &mut Rng::seed_from_u64(0))?.0)
}

pub fn max_pool_forward(bag_id: u32, features: &Tensor, model: &MilModel) -> Result<BagPrediction> {
    require_kind(model, MilKind::Max)?;
    Ok(model.predict_with(bag_id, features, &mut Rng::seed_from_u64(0))?.0)
}

pub fn abmil_forward(bag_id: u32, features: &Tensor, model: &MilModel) -> Result<BagPrediction> {
    require_kind(model, MilKind::Abmil)?;
    Ok(model.predict_with(bag_id, features, &mut Rng::seed_from_u64(0))?.0)
}

/// Two-tier forward: final prediction plus each pseudo-bag's tier-1 score.
pub fn dtfd_forward(bag_id: u32, features: &Tensor, model: &MilModel, rng: &mut Rng) -> Result<(BagPrediction, Vec<f64>)> {
    require_kind(model, MilKind::Dtfd)?;
    model.predict_with(bag_id, features, rng)
}

/// A pseudo-bag: row indices into its parent bag, with the parent's label.
#[derive(Debug, Clone, PartialEq, Eq)]
pub struct PseudoBag {
    pub label: BagLabel,
    pub indices: Vec<usize>,
}

/// Shuffled round-robin partition of `0..n` into `m` groups whose sizes
/// differ by at most one (the first `n % m` groups get the extra element).
pub fn partition_indices(order: &[usize], m: usize, rng: &mut Rng) -> Result<Vec<Vec<usize>>> {
    let n = order.len();
    if m == 0 || n < m {
        return Err(Error::InvalidBatch(format!("cannot split {n} instances into {m} pseudo-bags")));
    }
    let perm = rng.permutation(n);
    let mut groups = vec![Vec::with_capacity(n / m + 1); m];
    for (k, &p) in perm.iter().enumerate() {
        groups[k % m].push(order[p]);
    }
    Ok(groups)
}

pub fn dtfd_split(bag: &Bag, m: usize, rng: &mut Rng) -> Result<Vec<PseudoBag>> {
    let order: Vec<usize> = (0..bag.len()).collect();
    Ok(partition_indices(&order, m, rng)?
        .into_iter()
        .map(|indices| PseudoBag {
            label: bag.label,
            indices,
        })
        .collect())
}

fn lexicographic(a: &[f64], b: &[f64]) -> Ordering {
    a.iter()
        .zip(b)
        .map(|(x, y)| x.total_cmp(y))
        .find(|o| o.is_ne())
        .unwrap_or(Ordering::Equal)
}

// Splitting a content-sorted order makes the grouping a function of the
// instance multiset, so the dtfd score does not depend on row order.
fn dtfd_groups(h: &Tensor, m: usize, rng: &mut Rng) -> Result<Vec<Vec<usize>>> {
    let mut order: Vec<usize> = (0..h.rows()).collect();
    order.sort_by(|&a, &b| lexicographic(h.row(a), h.row(b)));
    partition_indices(&order, m, rng)
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields, default)]
pub struct MilTrainConfig {
    pub epochs: u32,
    pub learning_rate: f64,
    pub seed: u64,
}

impl Default for MilTrainConfig {
    fn default() -> Self {
        MilTrainConfig {
            epochs: 50,
            learning_rate: 0.01,
            seed: 7,
        }
    }
}

#[derive(Debug, Clone, Copy, PartialEq)]
pub struct MilEpoch {
    pub epoch: u32,
    pub train_loss: f64,
    pub val_auc: f64,
}

#[derive(Debug, Clone)]
pub struct MilTrainOutput {
    /// Parameters from the selected epoch.
    pub model: MilModel,
    pub best_epoch: u32,
    pub history: Vec<MilEpoch>,
}

/// Scores for a list of bags, in order.
pub fn predict_bags(model: &MilModel, bags: &[Bag], eval_seed: u64) -> Result<Vec<BagPrediction>> {
    #[cfg(feature = "parallel")]
    {
        use rayon::prelude::*;
        if crate::numcore::kernels::execution() == crate::numcore::kernels::Execution::Parallel {
            return bags.par_iter().map(|b| model.predict(b, eval_seed)).collect();
        }
    }
    bags.iter().map(|b| model.predict(b, eval_seed)).collect()
}

fn auc_of(model: &MilModel, bags: &[Bag], eval_seed: u64) -> Result<f64> {
    let preds = predict_bags(model, bags, eval_seed)?;
    let scores: Vec<f64> = preds.iter().map(|p| p.score).collect();
    let labels: Vec<bool> = bags.iter().map(|b| b.label.is_positive()).collect();
    roc_auc(&scores, &labels)
}

/// One SGD step per bag in a freshly shuffled order each epoch; keeps the
/// parameters from the epoch with the highest validation AUC (earliest on
/// ties).
pub fn train_mil(train: &[Bag], val: &[Bag], spec: &MilModelSpec, cfg: &MilTrainConfig) -> Result<MilTrainOutput> {
    spec.validate()?;
    if train.is_empty() || val.is_empty() {
        return Err(Error::InvalidConfig("MIL training needs nonempty train and validation sets".into()));
    }
    let has = |l: BagLabel| val.iter().any(|b| b.label == l);
    if !has(BagLabel::Negative) || !has(BagLabel::Positive) {
        return Err(Error::MetricUndefined("validation set has a single label; AUC is undefined".into()));
    }
    if let Some(b) = train.iter().chain(val).find(|b| b.dim() != spec.input_dim) {
        return Err(crate::error::shape_mismatch("train_mil", b.instances.shape(), &[spec.input_dim]));
    }
    if !(cfg.learning_rate >= 0.0) {
        return Err(Error::InvalidConfig(format!("learning_rate must be >= 0, got {}", cfg.learning_rate)));
    }

    let mut model = MilModel::init(spec, &mut Rng::stream(cfg.seed, "init"))?;
    let mut best: Option<(f64, u32, MilModel)> = None;
    let mut history = Vec::with_capacity(cfg.epochs as usize);
    let eval_seed = cfg.seed;

    for epoch in 1..=cfg.epochs {
        let mut order: Vec<usize> = (0..train.len()).collect();
        Rng::substream(cfg.seed, "shuffle", &[epoch as u64]).shuffle(&mut order);
        let mut loss_sum = 0.0;
        for &bi in &order {
            let bag = &train[bi];
            let mut rng = Rng::substream(cfg.seed, "dtfd", &[epoch as u64, bag.id as u64]);
            let mut g = Graph::new();
            let bound = model.bind(&mut g);
            let h = g.constant(bag.instances.clone());
            let fwd = model.forward_graph(&bound, &mut g, h, &mut rng)?;
            let loss = model.loss_graph(&mut g, &fwd, bag.label)?;
            loss_sum += g.scalar_value(loss)?;
            let mut grads = g.backward(loss)?;
            let vars = bound.vars();
            let tensors = model.tensors_mut();
            sgd_step(tensors.into_iter(), vars.into_iter().map(|v| grads.take(v)), cfg.learning_rate);
        }
        let val_auc = auc_of(&model, val, eval_seed)?;
        history.push(MilEpoch {
            epoch,
            train_loss: loss_sum / train.len() as f64,
            val_auc,
        });
        if best.as_ref().is_none_or(|(b, _, _)| val_auc > *b) {
            best = Some((val_auc, epoch, model.clone()));
        }
    }
    let (best_epoch, model) = match best {
        Some((_, e, m)) => (e, m),
        None => (0, model),
    };
    Ok(MilTrainOutput {
        model,
        best_epoch,
        history,
    })
}

#[cfg(test)]
mod tests {
    use super::*;
    use approx::assert_abs_diff_eq;

    fn spec(kind: MilKind) -> MilModelSpec {
        MilModelSpec {
            kind,
            input_dim: 4,
            attention_dim: 3,
            num_pseudo_bags: 2,
            classifier_widths: vec![],
        }
    }

    fn features(n: usize, seed: u64) -> Tensor {
        let mut r = Rng::seed_from_u64(seed);
        Tensor::matrix(n, 4, (0..n * 4).map(|_| r.normal()).collect()).unwrap()
    }

    #[test]
    fn identical_instances() {
        let row = [0.3, -0.1, 0.8, 0.2];
        let one = Tensor::from_rows(&[row]).unwrap();
        let many = Tensor::from_rows(&[row; 5]).unwrap();
        for kind in [MilKind::Mean, MilKind::Max, MilKind::Abmil] {
            let m = MilModel::init(&spec(kind), &mut Rng::seed_from_u64(1)).unwrap();
            let a = m.predict_with(0, &one, &mut Rng::seed_from_u64(0)).unwrap().0;
            let b = m.predict_with(0, &many, &mut Rng::seed_from_u64(0)).unwrap().0;
            assert_abs_diff_eq!(a.score, b.score, epsilon = 1e-12);
            if kind == MilKind::Abmil {
                assert_eq!(a.attention.unwrap(), vec![1.0]);
                for w in b.attention.unwrap() {
                    assert_abs_diff_eq!(w, 0.2, epsilon = 1e-12);
                }
            }
        }
    }

    #[test]
    fn max_pool_picks_the_high_instance() {
        let m = MilModel::init(&spec(MilKind::Max), &mut Rng::seed_from_u64(2)).unwrap();
        let x = features(6, 3);
        let per_instance = m.classifier.forward_values(&x).unwrap();
        let best = per_instance.data().iter().copied().fold(f64::NEG_INFINITY, f64::max);
        let p = max_pool_forward(0, &x, &m).unwrap();
        assert_abs_diff_eq!(p.score, sigmoid(best), epsilon = 1e-15);
    }

    #[test]
    fn empty_bag_is_an_error() {
        let m = MilModel::init(&spec(MilKind::Mean), &mut Rng::seed_from_u64(2)).unwrap();
        let empty = Tensor::matrix(0, 4, vec![]).unwrap();
        assert!(matches!(mean_pool_forward(5, &empty, &m), Err(Error::EmptyBag(5))));
    }

    #[test]
    fn dtfd_needs_two_pseudo_bags() {
        let s = MilModelSpec {
            num_pseudo_bags: 1,
            ..spec(MilKind::Dtfd)
        };
        assert!(s.validate().is_err());
    }

    #[test]
    fn split_sizes() {
        let bag = Bag::new(0, BagLabel::Positive, features(10, 1), None).unwrap();
        let mut rng = Rng::seed_from_u64(5);
        let two = dtfd_split(&bag, 2, &mut rng).unwrap();
        assert_eq!(two.iter().map(|p| p.indices.len()).collect::<Vec<_>>(), vec![5, 5]);
        assert!(two.iter().all(|p| p.label == BagLabel::Positive));
        let three = dtfd_split(&bag, 3, &mut rng).unwrap();
        assert_eq!(three.iter().map(|p| p.indices.len()).collect::<Vec<_>>(), vec![4, 3, 3]);
        assert!(dtfd_split(&bag, 11, &mut rng).is_err());
    }

    #[test]
    fn dtfd_identical_instances_uniform_tier2() {
        let row = [0.3, -0.1, 0.8, 0.2];
        let x = Tensor::from_rows(&[row; 9]).unwrap();
        let s = MilModelSpec {
            num_pseudo_bags: 3,
            ..spec(MilKind::Dtfd)
        };
        let m = MilModel::init(&s, &mut Rng::seed_from_u64(8)).unwrap();
        let (p, tier1) = dtfd_forward(0, &x, &m, &mut Rng::seed_from_u64(0)).unwrap();
        assert_eq!(tier1.len(), 3);
        for w in p.attention.unwrap() {
            assert_abs_diff_eq!(w, 1.0 / 3.0, epsilon = 1e-12);
        }
    }

    #[test]
    fn kind_mismatch_rejected() {
        let m = MilModel::init(&spec(MilKind::Mean), &mut Rng::seed_from_u64(2)).unwrap();
        assert!(abmil_forward(0, &features(3, 1), &m).is_err());
    }

    #[test]
    fn checkpoint_round_trip_all_kinds() {
        for kind in [MilKind::Mean, MilKind::Max, MilKind::Abmil, MilKind::Dtfd] {
            let m = MilModel::init(&spec(kind), &mut Rng::seed_from_u64(3)).unwrap();
            let ck = m.to_checkpoint(1, 2, "h".into());
            let back = MilModel::from_checkpoint(&Checkpoint::decode(&ck.encode().unwrap()).unwrap()).unwrap();
            let expect = MilModel::from_checkpoint(&ck.quantized()).unwrap();
            assert_eq!(back, expect);
        }
    }

    #[test]
    fn single_label_validation_rejected() {
        let bag = |id, label| Bag::new(id, label, features(5, id as u64), None).unwrap();
        let train = vec![bag(0, BagLabel::Negative), bag(1, BagLabel::Positive)];
        let val = vec![bag(2, BagLabel::Negative), bag(3, BagLabel::Negative)];
        let r = train_mil(&train, &val, &spec(MilKind::Abmil), &MilTrainConfig::default());
        assert!(matches!(r, Err(Error::MetricUndefined(_))));
    }

    #[test]
    fn zero_learning_rate_keeps_initialization() {
        let bag = |id, label| Bag::new(id, label, features(6, id as u64), None).unwrap();
        let train = vec![bag(0, BagLabel::Negative), bag(1, BagLabel::Positive)];
        let val = vec![bag(2, BagLabel::Negative), bag(3, BagLabel::Positive)];
        let cfg = MilTrainConfig {
            epochs: 3,
            learning_rate: 0.0,
            seed: 11,
        };
        let out = train_mil(&train, &val, &spec(MilKind::Abmil), &cfg).unwrap();
        let init = MilModel::init(&spec(MilKind::Abmil), &mut Rng::stream(11, "init")).unwrap();
        assert_eq!(out.model, init);
        assert_eq!(out.best_epoch, 1);
    }
}
