//! Encoder and projection head, two-view augmentation, contrastive
//! pretraining, and frozen feature extraction.
//!
//! Each pretraining step samples `batch_n` instances uniformly (with
//! replacement) from every training instance regardless of bag, augments
//! each twice, and routes views by bag label: negative-bag views feed the
//! Similarity Loss, positive-bag views the SimCLR term. Both tasks share the
//! encoder and projection head and are optimized jointly.

use serde::{Deserialize, Serialize};

use crate::checkpoint::{Architecture, Checkpoint};
use crate::error::{Error, Result};
use crate::losses::{self, BatchLayout, LossConfig};
use crate::mildata::{Bag, BagLabel, InstancePool};
use crate::numcore::{Graph, Rng, RngStreams, Tensor, Var};

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "lowercase")]
pub enum Activation {
    Relu,
    Tanh,
}

impl Activation {
    fn apply(self, g: &mut Graph, x: Var) -> Var {
        match self {
            Activation::Relu => g.relu(x),
            Activation::Tanh => g.tanh(x),
        }
    }

    fn apply_values(self, x: &mut Tensor) {
        match self {
            Activation::Relu => x.data_mut().iter_mut().for_each(|v| *v = v.max(0.0)),
            Activation::Tanh => x.data_mut().iter_mut().for_each(|v| *v = v.tanh()),
        }
    }
}

#[derive(Debug, Clone, PartialEq, Eq, Serialize, Deserialize)]
#[serde(deny_unknown_fields, default)]
pub struct EncoderSpec {
    /// Input width, hidden widths, embedding width.
    pub layer_widths: Vec<usize>,
    pub activation: Activation,
}

impl EncoderSpec {
    pub fn desk(d_raw: usize) -> Self {
        EncoderSpec {
            layer_widths: vec![d_raw, 64, 32],
            activation: Activation::Relu,
        }
    }

    pub fn validate(&self) -> Result<()> {
        if self.layer_widths.len() < 3 || self.layer_widths.contains(&0) {
            return Err(Error::InvalidConfig(format!(
                "encoder needs input, >= 1 hidden and output widths, all >= 1; got {:?}",
                self.layer_widths
            )));
        }
        Ok(())
    }

    pub fn input_dim(&self) -> usize {
        self.layer_widths[0]
    }

    pub fn embedding_dim(&self) -> usize {
        *self.layer_widths.last().unwrap()
    }
}

impl Default for EncoderSpec {
    fn default() -> Self {
        EncoderSpec::desk(32)
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(deny_unknown_fields, default)]
pub struct ProjectionSpec {
    pub hidden_width: usize,
    pub output_width: usize,
}

impl Default for ProjectionSpec {
    fn default() -> Self {
        ProjectionSpec {
            hidden_width: 32,
            output_width: 16,
        }
    }
}

impl ProjectionSpec {
    pub fn validate(&self) -> Result<()> {
        if self.output_width < 2 || self.hidden_width == 0 {
            return Err(Error::InvalidConfig(format!(
                "projection needs hidden_width >= 1 and output_width >= 2, got {self:?}"
            )));
        }
        Ok(())
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields, default)]
pub struct AugmentationSpec {
    pub noise_sigma: f64,
    pub dropout_p: f64,
}

impl Default for AugmentationSpec {
    fn default() -> Self {
        AugmentationSpec {
            noise_sigma: 0.1,
            dropout_p: 0.1,
        }
    }
}

impl AugmentationSpec {
    pub fn validate(&self) -> Result<()> {
        if !(self.noise_sigma >= 0.0) || !(0.0..=0.5).contains(&self.dropout_p) {
            return Err(Error::InvalidConfig(format!(
                "augmentation needs noise_sigma >= 0 and dropout_p in [0, 0.5], got {self:?}"
            )));
        }
        Ok(())
    }
}

/// One augmented view: additive Gaussian noise, then per-coordinate zeroing.
fn augment_once(x: &[f64], spec: &AugmentationSpec, rng: &mut Rng, out: &mut Vec<f64>) {
    for &v in x {
        let noisy = v + spec.noise_sigma * rng.normal();
        let keep = spec.dropout_p == 0.0 || !rng.bernoulli(spec.dropout_p);
        out.push(if keep { noisy } else { 0.0 });
    }
}

/// Two independently augmented views of `x`.
pub fn augment_two_views(x: &[f64], spec: &AugmentationSpec, rng: &mut Rng) -> (Vec<f64>, Vec<f64>) {
    let mut a = Vec::with_capacity(x.len());
    let mut b = Vec::with_capacity(x.len());
    augment_once(x, spec, rng, &mut a);
    augment_once(x, spec, rng, &mut b);
    (a, b)
}

/// A dense layer: `y = x W + b` with `W` stored `in × out`.
#[derive(Debug, Clone, PartialEq)]
pub struct Linear {
    pub weight: Tensor,
    pub bias: Tensor,
}

impl Linear {
    /// Uniform fan-in initialization, `|w| ≤ sqrt(6 / fan_in)`; zero bias.
    pub fn init(fan_in: usize, fan_out: usize, rng: &mut Rng) -> Self {
        let bound = (6.0 / fan_in as f64).sqrt();
        let w = (0..fan_in * fan_out).map(|_| rng.uniform_range(-bound, bound)).collect();
        Linear {
            weight: Tensor::matrix(fan_in, fan_out, w).expect("nonzero widths"),
            bias: Tensor::zeros(&[1, fan_out]),
        }
    }

    pub fn zeros(fan_in: usize, fan_out: usize) -> Self {
        Linear {
            weight: Tensor::zeros(&[fan_in, fan_out]),
            bias: Tensor::zeros(&[1, fan_out]),
        }
    }
}

/// Stack of [`Linear`] layers with an activation between consecutive layers
/// (none after the last).
#[derive(Debug, Clone, PartialEq)]
pub struct Mlp {
    pub layers: Vec<Linear>,
    pub activation: Activation,
}

/// Graph handles for an [`Mlp`]'s parameters, in layer order (weight, bias).
#[derive(Debug, Clone)]
pub struct BoundMlp {
    vars: Vec<(Var, Var)>,
    activation: Activation,
}

impl BoundMlp {
    pub fn forward(&self, g: &mut Graph, x: Var) -> Result<Var> {
        let mut h = x;
        for (k, &(w, b)) in self.vars.iter().enumerate() {
            let y = g.matmul(h, w)?;
            h = g.add_row(y, b)?;
            if k + 1 < self.vars.len() {
                h = self.activation.apply(g, h);
            }
        }
        Ok(h)
    }

    pub fn vars(&self) -> impl Iterator<Item = Var> + '_ {
        self.vars.iter().flat_map(|&(w, b)| [w, b])
    }
}

impl Mlp {
    pub fn init(widths: &[usize], activation: Activation, rng: &mut Rng) -> Self {
        Mlp {
            layers: widths.windows(2).map(|w| Linear::init(w[0], w[1], rng)).collect(),
            activation,
        }
    }

    pub fn input_dim(&self) -> usize {
        self.layers[0].weight.rows()
    }

    pub fn output_dim(&self) -> usize {
        self.layers.last().unwrap().weight.cols()
    }

    pub fn bind(&self, g: &mut Graph) -> BoundMlp {
        BoundMlp {
            vars: self
                .layers
                .iter()
                .map(|l| (g.param(l.weight.clone()), g.param(l.bias.clone())))
                .collect(),
            activation: self.activation,
        }
    }

    /// Same arithmetic as the graph path, without recording.
    pub fn forward_values(&self, x: &Tensor) -> Result<Tensor> {
        if x.cols() != self.input_dim() {
            return Err(crate::error::shape_mismatch("mlp_forward", x.shape(), self.layers[0].weight.shape()));
        }
        let mut h = x.clone();
        for (k, layer) in self.layers.iter().enumerate() {
            h = h.matmul(&layer.weight)?;
            let n = h.cols();
            for row in h.data_mut().chunks_mut(n) {
                for (o, b) in row.iter_mut().zip(layer.bias.data()) {
                    *o += b;
                }
            }
            if k + 1 < self.layers.len() {
                self.activation.apply_values(&mut h);
            }
        }
        Ok(h)
    }

    pub fn tensors(&self) -> impl Iterator<Item = &Tensor> {
        self.layers.iter().flat_map(|l| [&l.weight, &l.bias])
    }

    pub fn tensors_mut(&mut self) -> impl Iterator<Item = &mut Tensor> {
        self.layers.iter_mut().flat_map(|l| [&mut l.weight, &mut l.bias])
    }

    /// `(name, tensor)` pairs as `{prefix}.{layer}.{weight|bias}`.
    pub fn named(&self, prefix: &str) -> Vec<(String, Tensor)> {
        self.layers
            .iter()
            .enumerate()
            .flat_map(|(k, l)| {
                [
                    (format!("{prefix}.{k}.weight"), l.weight.clone()),
                    (format!("{prefix}.{k}.bias"), l.bias.clone()),
                ]
            })
            .collect()
    }

    pub fn num_tensors(&self) -> usize {
        self.layers.len() * 2
    }
}

/// Plain SGD step: `p ← p − lr · g`.
pub fn sgd_step<'a>(params: impl Iterator<Item = &'a mut Tensor>, grads: impl Iterator<Item = Tensor>, lr: f64) {
    for (p, g) in params.zip(grads) {
        for (pv, gv) in p.data_mut().iter_mut().zip(g.data()) {
            *pv -= lr * gv;
        }
    }
}

/// Shared encoder plus projection head.
#[derive(Debug, Clone, PartialEq)]
pub struct ContrastiveModel {
    pub encoder: Mlp,
    pub projection: Mlp,
}

/// Graph handles for a bound [`ContrastiveModel`].
#[derive(Debug, Clone)]
pub struct BoundModel {
    pub encoder: BoundMlp,
    pub projection: BoundMlp,
}

impl BoundModel {
    /// `(h, z)`: encoder output and unit-norm projection.
    pub fn encode_project(&self, g: &mut Graph, x: Var) -> Result<(Var, Var)> {
        let h = self.encoder.forward(g, x)?;
        let p = self.projection.forward(g, h)?;
        let z = g.l2_normalize_rows(p)?;
        Ok((h, z))
    }

    pub fn vars(&self) -> Vec<Var> {
        self.encoder.vars().chain(self.projection.vars()).collect()
    }
}

impl ContrastiveModel {
    pub fn init(enc: &EncoderSpec, proj: &ProjectionSpec, rng: &mut Rng) -> Result<Self> {
        enc.validate()?;
        proj.validate()?;
        let encoder = Mlp::init(&enc.layer_widths, enc.activation, rng);
        let projection = Mlp::init(
            &[enc.embedding_dim(), proj.hidden_width, proj.output_width],
            Activation::Relu,
            rng,
        );
        Ok(ContrastiveModel { encoder, projection })
    }

    pub fn bind(&self, g: &mut Graph) -> BoundModel {
        BoundModel {
            encoder: self.encoder.bind(g),
            projection: self.projection.bind(g),
        }
    }

    pub fn tensors_mut(&mut self) -> impl Iterator<Item = &mut Tensor> {
        self.encoder.tensors_mut().chain(self.projection.tensors_mut())
    }

    pub fn tensors(&self) -> impl Iterator<Item = &Tensor> {
        self.encoder.tensors().chain(self.projection.tensors())
    }

    pub fn input_dim(&self) -> usize {
        self.encoder.input_dim()
    }

    /// Non-recording forward: `(h, z)`.
    pub fn encode_project_values(&self, x: &Tensor) -> Result<(Tensor, Tensor)> {
        let h = self.encoder.forward_values(x)?;
        let z = self.projection.forward_values(&h)?.l2_normalize_rows()?;
        Ok((h, z))
    }

    pub fn architecture(&self) -> Architecture {
        Architecture::Contrastive {
            encoder_widths: std::iter::once(self.encoder.input_dim())
                .chain(self.encoder.layers.iter().map(|l| l.weight.cols()))
                .collect(),
            encoder_activation: self.encoder.activation,
            projection_widths: std::iter::once(self.projection.input_dim())
                .chain(self.projection.layers.iter().map(|l| l.weight.cols()))
                .collect(),
        }
    }

    pub fn named_tensors(&self) -> Vec<(String, Tensor)> {
        let mut v = self.encoder.named("encoder");
        v.extend(self.projection.named("projection"));
        v
    }

    pub fn from_checkpoint(ck: &Checkpoint) -> Result<Self> {
        let Architecture::Contrastive {
            encoder_widths,
            encoder_activation,
            projection_widths,
        } = &ck.header.architecture
        else {
            return Err(Error::ArchitectureMismatch(format!(
                "expected a contrastive checkpoint, found {}",
                ck.header.architecture.kind()
            )));
        };
        let encoder = mlp_from(ck, "encoder", encoder_widths, *encoder_activation)?;
        let projection = mlp_from(ck, "projection", projection_widths, Activation::Relu)?;
        Ok(ContrastiveModel { encoder, projection })
    }

    pub fn to_checkpoint(&self, seed: u64, epoch: u32, config_hash: String, loss_mode: Option<String>) -> Checkpoint {
        Checkpoint::new(self.architecture(), seed, epoch, config_hash, loss_mode, self.named_tensors())
    }
}

pub(crate) fn mlp_from(ck: &Checkpoint, prefix: &str, widths: &[usize], activation: Activation) -> Result<Mlp> {
    let mut layers = Vec::new();
    for (k, w) in widths.windows(2).enumerate() {
        let weight = ck.tensor(&format!("{prefix}.{k}.weight"))?;
        let bias = ck.tensor(&format!("{prefix}.{k}.bias"))?;
        if weight.shape() != [w[0], w[1]] || bias.shape() != [1, w[1]] {
            return Err(Error::ArchitectureMismatch(format!(
                "{prefix}.{k}: expected {}x{}, found {:?} / {:?}",
                w[0],
                w[1],
                weight.shape(),
                bias.shape()
            )));
        }
        layers.push(Linear {
            weight: weight.clone(),
            bias: bias.clone(),
        });
    }
    Ok(Mlp { layers, activation })
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "lowercase")]
pub enum PretrainMode {
    Simclr,
    Supcon,
    Weaksupcon,
}

impl PretrainMode {
    pub fn name(self) -> &'static str {
        match self {
            PretrainMode::Simclr => "simclr",
            PretrainMode::Supcon => "supcon",
            PretrainMode::Weaksupcon => "weaksupcon",
        }
    }
}

impl std::str::FromStr for PretrainMode {
    type Err = Error;
    fn from_str(s: &str) -> Result<Self> {
        match s {
            "simclr" => Ok(PretrainMode::Simclr),
            "supcon" => Ok(PretrainMode::Supcon),
            "weaksupcon" => Ok(PretrainMode::Weaksupcon),
            other => Err(Error::InvalidConfig(format!("unknown pretrain mode {other:?}"))),
        }
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields, default)]
pub struct PretrainConfig {
    pub mode: PretrainMode,
    pub loss: LossConfig,
    /// Original samples per batch; each contributes two views.
    pub batch_n: usize,
    pub epochs: u32,
    pub learning_rate: f64,
    pub seed: u64,
    pub encoder: EncoderSpec,
    pub projection: ProjectionSpec,
    pub augmentation: AugmentationSpec,
}

impl Default for PretrainConfig {
    fn default() -> Self {
        PretrainConfig {
            mode: PretrainMode::Weaksupcon,
            loss: LossConfig::default(),
            batch_n: 256,
            epochs: 200,
            learning_rate: 0.05,
            seed: 7,
            encoder: EncoderSpec::default(),
            projection: ProjectionSpec::default(),
            augmentation: AugmentationSpec::default(),
        }
    }
}

impl PretrainConfig {
    pub fn validate(&self) -> Result<()> {
        self.loss.validate()?;
        self.encoder.validate()?;
        self.projection.validate()?;
        self.augmentation.validate()?;
        if self.batch_n < 2 {
            return Err(Error::InvalidConfig(format!("batch_n must be >= 2, got {}", self.batch_n)));
        }
        // zero is accepted: it is how a frozen run is expressed
        if !(self.learning_rate >= 0.0) || !self.learning_rate.is_finite() {
            return Err(Error::InvalidConfig(format!(
                "learning_rate must be finite and >= 0, got {}",
                self.learning_rate
            )));
        }
        Ok(())
    }
}

/// Mean losses over one epoch's steps. Parts that do not apply to the mode
/// are reported as 0.
#[derive(Debug, Clone, Copy, PartialEq)]
pub struct EpochLoss {
    pub epoch: u32,
    pub total: f64,
    pub similarity_part: f64,
    pub simclr_part: f64,
}

#[derive(Debug, Clone)]
pub struct PretrainOutput {
    pub model: ContrastiveModel,
    pub log: Vec<EpochLoss>,
}

/// Steps per epoch: enough batches to draw as many instances as the pool
/// holds.
pub fn steps_per_epoch(pool_len: usize, batch_n: usize) -> usize {
    pool_len.div_ceil(batch_n).max(1)
}

/// Builds an augmented `2·batch_n × d` batch with views at rows `2k, 2k+1`.
pub fn sample_batch(
    pool: &InstancePool<'_>,
    batch_n: usize,
    aug: &AugmentationSpec,
    sampler: &mut Rng,
    augmenter: &mut Rng,
) -> Result<(Tensor, BatchLayout)> {
    let d = pool.instance(0).len();
    let mut data = Vec::with_capacity(2 * batch_n * d);
    let mut labels = Vec::with_capacity(batch_n);
    for _ in 0..batch_n {
        let k = sampler.below(pool.len() as u64) as usize;
        let (a, b) = augment_two_views(pool.instance(k), aug, augmenter);
        data.extend(a);
        data.extend(b);
        labels.push(pool.label(k));
    }
    let pseudo: Vec<u32> = labels.iter().map(|l| l.as_u8() as u32).collect();
    let layout = BatchLayout::interleaved(&labels, Some(&pseudo))?;
    Ok((Tensor::matrix(2 * batch_n, d, data)?, layout))
}

/// Loss nodes for one batch under `mode`: `(total, similarity, simclr)`.
pub fn mode_loss(g: &mut Graph, z: Var, layout: &BatchLayout, mode: PretrainMode, cfg: &LossConfig) -> Result<(Var, Option<Var>, Option<Var>)> {
    match mode {
        PretrainMode::Simclr => {
            let all: Vec<usize> = (0..layout.len()).collect();
            let l = losses::simclr_loss_graph(g, z, layout, &all, cfg)?;
            Ok((l, None, Some(l)))
        }
        PretrainMode::Supcon => Ok((losses::supcon_loss_graph(g, z, layout, cfg)?, None, None)),
        PretrainMode::Weaksupcon => {
            let v = losses::weaksupcon_loss_graph(g, z, layout, cfg)?;
            Ok((v.total, Some(v.similarity), Some(v.simclr)))
        }
    }
}

/// Contrastive pretraining with plain SGD.
pub fn pretrain(train: &[Bag], cfg: &PretrainConfig) -> Result<PretrainOutput> {
    pretrain_with(train, cfg, |_, _| {})
}

/// [`pretrain`] with a per-epoch callback receiving the epoch's losses and
/// the current model.
pub fn pretrain_with(
    train: &[Bag],
    cfg: &PretrainConfig,
    mut on_epoch: impl FnMut(&EpochLoss, &ContrastiveModel),
) -> Result<PretrainOutput> {
    cfg.validate()?;
    let pool = InstancePool::new(train);
    if pool.is_empty() {
        return Err(Error::InvalidConfig("pretraining needs at least one training instance".into()));
    }
    let d = pool.instance(0).len();
    if d != cfg.encoder.input_dim() {
        return Err(crate::error::shape_mismatch("pretrain", &[d], &[cfg.encoder.input_dim()]));
    }
    if cfg.mode == PretrainMode::Weaksupcon {
        let has = |l: BagLabel| train.iter().any(|b| b.label == l);
        if !has(BagLabel::Negative) || !has(BagLabel::Positive) {
            return Err(Error::InvalidConfig(
                "weaksupcon pretraining needs both negative and positive training bags".into(),
            ));
        }
    }

    let mut streams = RngStreams::new(cfg.seed);
    let mut model = ContrastiveModel::init(&cfg.encoder, &cfg.projection, &mut streams.init)?;
    let steps = steps_per_epoch(pool.len(), cfg.batch_n);
    let mut log = Vec::with_capacity(cfg.epochs as usize);

    for epoch in 1..=cfg.epochs {
        let (mut tot, mut sim, mut clr) = (0.0, 0.0, 0.0);
        for _ in 0..steps {
            let (x, layout) = sample_batch(&pool, cfg.batch_n, &cfg.augmentation, &mut streams.shuffle, &mut streams.augmentation)?;
            let mut g = Graph::new();
            let bound = model.bind(&mut g);
            let xv = g.constant(x);
            let (_, z) = bound.encode_project(&mut g, xv)?;
            let (total, sim_v, clr_v) = mode_loss(&mut g, z, &layout, cfg.mode, &cfg.loss)?;
            tot += g.scalar_value(total)?;
            if let Some(v) = sim_v {
                sim += g.scalar_value(v)?;
            }
            if let Some(v) = clr_v {
                clr += g.scalar_value(v)?;
            }
            let mut grads = g.backward(total)?;
            let vars = bound.vars();
            sgd_step(model.tensors_mut(), vars.into_iter().map(|v| grads.take(v)), cfg.learning_rate);
        }
        let n = steps as f64;
        let entry = EpochLoss {
            epoch,
            total: tot / n,
            similarity_part: sim / n,
            simclr_part: clr / n,
        };
        if !entry.total.is_finite() {
            return Err(Error::NonFinite {
                op: "pretrain",
                index: epoch as usize,
            });
        }
        log::debug!("pretrain {} epoch {epoch}: total {:.6}", cfg.mode.name(), entry.total);
        on_epoch(&entry, &model);
        log.push(entry);
    }
    Ok(PretrainOutput { model, log })
}

/// Frozen features for every bag: embeddings `h`, or unit-norm projections
/// `z` when `use_projection` is set. Bag ids, labels and masks carry over.
pub fn extract_features(bags: &[Bag], model: &ContrastiveModel, use_projection: bool) -> Result<Vec<Bag>> {
    let one = |bag: &Bag| -> Result<Bag> {
        if bag.dim() != model.input_dim() {
            return Err(crate::error::shape_mismatch("extract_features", bag.instances.shape(), &[model.input_dim()]));
        }
        let (h, z) = model.encode_project_values(&bag.instances)?;
        Ok(Bag {
            id: bag.id,
            label: bag.label,
            instances: if use_projection { z } else { h },
            witness_mask: bag.witness_mask.clone(),
        })
    };
    #[cfg(feature = "parallel")]
    {
        use rayon::prelude::*;
        if crate::numcore::kernels::execution() == crate::numcore::kernels::Execution::Parallel {
            return bags.par_iter().map(one).collect();
        }
    }
    bags.iter().map(one).collect()
}

#[cfg(test)]
mod tests {
    use super::*;
    use approx::assert_abs_diff_eq;

    #[test]
    fn identity_augmentation() {
        let x = [0.5, -1.0, 2.0];
        let spec = AugmentationSpec {
            noise_sigma: 0.0,
            dropout_p: 0.0,
        };
        let (a, b) = augment_two_views(&x, &spec, &mut Rng::seed_from_u64(1));
        assert_eq!(a, x);
        assert_eq!(b, x);
    }

    #[test]
    fn augmentation_replays() {
        let x = [0.5, -1.0, 2.0, 0.0];
        let spec = AugmentationSpec::default();
        let r = Rng::seed_from_u64(9);
        let first = augment_two_views(&x, &spec, &mut r.clone());
        let second = augment_two_views(&x, &spec, &mut r.clone());
        assert_eq!(first, second);
        assert_ne!(first.0, first.1);
    }

    #[test]
    fn zero_model_cannot_project() {
        let enc = Mlp {
            layers: vec![Linear::zeros(4, 3), Linear::zeros(3, 3)],
            activation: Activation::Relu,
        };
        let proj = Mlp {
            layers: vec![Linear::zeros(3, 3), Linear::zeros(3, 2)],
            activation: Activation::Relu,
        };
        let model = ContrastiveModel {
            encoder: enc.clone(),
            projection: proj,
        };
        let x = Tensor::matrix(2, 4, vec![1.0, 2.0, 3.0, 4.0, -1.0, 0.0, 0.5, 2.0]).unwrap();
        assert_eq!(enc.forward_values(&x).unwrap(), Tensor::zeros(&[2, 3]));
        assert!(matches!(model.encode_project_values(&x), Err(Error::ZeroNorm { .. })));
        let mut g = Graph::new();
        let b = model.bind(&mut g);
        let xv = g.constant(x);
        assert!(matches!(b.encode_project(&mut g, xv), Err(Error::ZeroNorm { .. })));
    }

    #[test]
    fn identity_linear_encoder() {
        let enc = Mlp {
            layers: vec![Linear {
                weight: Tensor::identity(3),
                bias: Tensor::zeros(&[1, 3]),
            }],
            activation: Activation::Relu,
        };
        let x = Tensor::matrix(2, 3, vec![1.0, -2.0, 3.0, 0.5, 0.0, -0.25]).unwrap();
        assert_eq!(enc.forward_values(&x).unwrap(), x);
    }

    #[test]
    fn width_mismatch() {
        let mut rng = Rng::seed_from_u64(0);
        let m = ContrastiveModel::init(&EncoderSpec::desk(8), &ProjectionSpec::default(), &mut rng).unwrap();
        let x = Tensor::zeros(&[3, 5]);
        assert!(matches!(m.encode_project_values(&x), Err(Error::ShapeMismatch { .. })));
    }

    #[test]
    fn graph_and_value_forward_agree() {
        let mut rng = Rng::seed_from_u64(4);
        let m = ContrastiveModel::init(&EncoderSpec::desk(6), &ProjectionSpec::default(), &mut rng).unwrap();
        let x = Tensor::matrix(5, 6, (0..30).map(|_| rng.normal()).collect()).unwrap();
        let (h, z) = m.encode_project_values(&x).unwrap();
        let mut g = Graph::new();
        let b = m.bind(&mut g);
        let xv = g.constant(x);
        let (hv, zv) = b.encode_project(&mut g, xv).unwrap();
        assert_eq!(g.value(hv), &h);
        assert_eq!(g.value(zv), &z);
        for i in 0..z.rows() {
            let n: f64 = z.row(i).iter().map(|v| v * v).sum::<f64>().sqrt();
            assert_abs_diff_eq!(n, 1.0, epsilon = 1e-12);
        }
    }

    #[test]
    fn config_rejects_tiny_batch() {
        let cfg = PretrainConfig {
            batch_n: 1,
            ..PretrainConfig::default()
        };
        assert!(cfg.validate().is_err());
    }
}
