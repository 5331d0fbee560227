//! Contrastive loss family: the SimCLR pair term, SupCon (and its expanded
//! form), the Similarity Loss over negative-bag views, and the weighted
//! WeakSupCon total.
//!
//! Every loss has a graph form (`*_graph`) used for training and gradient
//! checks, plus a value-level wrapper over a [`ContrastiveBatch`].

use std::collections::BTreeMap;
use std::sync::Arc;

use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};
use crate::mildata::BagLabel;
use crate::numcore::kernels::dot;
use crate::numcore::{Graph, Tensor, Var};

/// Temperature and weighting for the loss family.
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields, default)]
pub struct LossConfig {
    pub tau: f64,
    /// Weight on the Similarity Loss.
    pub alpha: f64,
    /// Weight on the positive-bag SimCLR term. `0` leaves the Similarity
    /// Loss alone, which is how the collapse ablation is run.
    pub simclr_weight: f64,
    /// L2-normalize rows before SupCon / Similarity dot products.
    pub normalize_inputs: bool,
}

impl Default for LossConfig {
    fn default() -> Self {
        LossConfig {
            tau: 0.5,
            alpha: 1.0,
            simclr_weight: 1.0,
            normalize_inputs: true,
        }
    }
}

impl LossConfig {
    pub fn validate(&self) -> Result<()> {
        if !(self.tau > 0.0) || !self.tau.is_finite() {
            return Err(Error::InvalidConfig(format!("tau must be > 0, got {}", self.tau)));
        }
        if !(self.alpha >= 0.0) || !self.alpha.is_finite() {
            return Err(Error::InvalidConfig(format!("alpha must be >= 0, got {}", self.alpha)));
        }
        if !(self.simclr_weight >= 0.0) || !self.simclr_weight.is_finite() {
            return Err(Error::InvalidConfig(format!(
                "simclr_weight must be >= 0, got {}",
                self.simclr_weight
            )));
        }
        Ok(())
    }
}

/// Everything about a contrastive batch except the feature values: which
/// views share an origin, and their bag / pseudo labels.
#[derive(Debug, Clone, PartialEq)]
pub struct BatchLayout {
    origin: Vec<usize>,
    bag_label: Vec<BagLabel>,
    pseudo_label: Option<Vec<u32>>,
    partner: Vec<usize>,
}

impl BatchLayout {
    /// Validates that every origin appears exactly twice and both views of an
    /// origin agree on their labels.
    pub fn new(origin: Vec<usize>, bag_label: Vec<BagLabel>, pseudo_label: Option<Vec<u32>>) -> Result<Self> {
        let n = origin.len();
        if bag_label.len() != n || pseudo_label.as_ref().is_some_and(|p| p.len() != n) {
            return Err(Error::InvalidBatch(format!(
                "label arrays must have length {n} (bag_label {}, pseudo_label {:?})",
                bag_label.len(),
                pseudo_label.as_ref().map(Vec::len)
            )));
        }
        let mut seen: BTreeMap<usize, Vec<usize>> = BTreeMap::new();
        for (i, &o) in origin.iter().enumerate() {
            seen.entry(o).or_default().push(i);
        }
        let mut partner = vec![0; n];
        for (o, views) in &seen {
            if views.len() != 2 {
                return Err(Error::InvalidBatch(format!(
                    "origin {o} appears {} times, expected 2",
                    views.len()
                )));
            }
            let (a, b) = (views[0], views[1]);
            if bag_label[a] != bag_label[b] {
                return Err(Error::InvalidBatch(format!("views of origin {o} disagree on bag label")));
            }
            if let Some(p) = &pseudo_label {
                if p[a] != p[b] {
                    return Err(Error::InvalidBatch(format!("views of origin {o} disagree on pseudo-label")));
                }
            }
            partner[a] = b;
            partner[b] = a;
        }
        Ok(BatchLayout {
            origin,
            bag_label,
            pseudo_label,
            partner,
        })
    }

    /// Layout for `n` origins whose views sit at rows `2k` and `2k + 1`.
    pub fn interleaved(labels: &[BagLabel], pseudo: Option<&[u32]>) -> Result<Self> {
        let origin = (0..labels.len()).flat_map(|k| [k, k]).collect();
        let bag_label = labels.iter().flat_map(|&l| [l, l]).collect();
        let pseudo_label = pseudo.map(|p| p.iter().flat_map(|&l| [l, l]).collect());
        BatchLayout::new(origin, bag_label, pseudo_label)
    }

    pub fn len(&self) -> usize {
        self.origin.len()
    }

    pub fn is_empty(&self) -> bool {
        self.origin.is_empty()
    }

    /// Number of original samples (half the number of views).
    pub fn n_origins(&self) -> usize {
        self.origin.len() / 2
    }

    pub fn origin(&self) -> &[usize] {
        &self.origin
    }

    pub fn bag_label(&self) -> &[BagLabel] {
        &self.bag_label
    }

    pub fn pseudo_label(&self) -> Option<&[u32]> {
        self.pseudo_label.as_deref()
    }

    /// Index of the other view of `i`'s origin.
    pub fn partner(&self, i: usize) -> usize {
        self.partner[i]
    }

    pub fn indices_with(&self, label: BagLabel) -> Vec<usize> {
        (0..self.len()).filter(|&i| self.bag_label[i] == label).collect()
    }

    /// Returns an error listing origins whose partner view is missing.
    pub fn check_closed(&self, subset: &[usize]) -> Result<()> {
        let mut member = vec![false; self.len()];
        for &i in subset {
            if i >= self.len() {
                return Err(Error::InvalidBatch(format!("index {i} out of range")));
            }
            if member[i] {
                return Err(Error::InvalidBatch(format!("index {i} repeated in subset")));
            }
            member[i] = true;
        }
        let mut orphans: Vec<usize> = subset
            .iter()
            .filter(|&&i| !member[self.partner[i]])
            .map(|&i| self.origin[i])
            .collect();
        if orphans.is_empty() {
            return Ok(());
        }
        orphans.sort_unstable();
        orphans.dedup();
        Err(Error::InvalidBatch(format!(
            "subset not closed under view pairing; orphan origins {orphans:?}"
        )))
    }
}

/// Projected features plus their layout.
#[derive(Debug, Clone, PartialEq)]
pub struct ContrastiveBatch {
    pub z: Tensor,
    pub layout: BatchLayout,
}

impl ContrastiveBatch {
    pub fn new(z: Tensor, layout: BatchLayout) -> Result<Self> {
        if z.rank() != 2 || z.rows() != layout.len() {
            return Err(Error::InvalidBatch(format!(
                "z has shape {:?} but layout has {} views",
                z.shape(),
                layout.len()
            )));
        }
        Ok(ContrastiveBatch { z, layout })
    }

    /// Rows of `z` with unit norm within `tol`.
    pub fn is_unit_norm(&self, tol: f64) -> bool {
        (0..self.z.rows()).all(|i| {
            let r = self.z.row(i);
            (dot(r, r).sqrt() - 1.0).abs() <= tol
        })
    }
}

/// Cosine similarity, clamped to `[-1, 1]`.
pub fn cosine_similarity(u: &[f64], v: &[f64]) -> Result<f64> {
    if u.len() != v.len() {
        return Err(crate::error::shape_mismatch("cosine_similarity", &[u.len()], &[v.len()]));
    }
    let nu = dot(u, u).sqrt();
    let nv = dot(v, v).sqrt();
    if nu <= 1e-12 || nv <= 1e-12 {
        return Err(Error::ZeroNorm {
            op: "cosine_similarity",
            row: if nu <= 1e-12 { 0 } else { 1 },
        });
    }
    Ok((dot(u, v) / (nu * nv)).clamp(-1.0, 1.0))
}

fn normalized(g: &mut Graph, z: Var, normalize: bool) -> Result<Var> {
    if normalize {
        g.l2_normalize_rows(z)
    } else {
        Ok(z)
    }
}

fn zero(g: &mut Graph) -> Var {
    g.constant(Tensor::scalar(0.0))
}

fn off_diagonal(n: usize) -> Arc<Vec<bool>> {
    Arc::new((0..n * n).map(|k| k / n != k % n).collect())
}

/// Σ_{i∈subset} ℓ_{i,p(i)} with numerator and denominator restricted to the
/// subset. Similarities are cosine regardless of `normalize_inputs`.
pub fn simclr_loss_graph(g: &mut Graph, z: Var, layout: &BatchLayout, subset: &[usize], cfg: &LossConfig) -> Result<Var> {
    cfg.validate()?;
    layout.check_closed(subset)?;
    if subset.is_empty() {
        return Ok(zero(g));
    }
    let m = subset.len();
    let mut local = vec![usize::MAX; layout.len()];
    for (k, &i) in subset.iter().enumerate() {
        local[i] = k;
    }
    let zn = g.l2_normalize_rows(z)?;
    let zs = g.select_rows(zn, Arc::new(subset.to_vec()))?;
    let gram = g.matmul_nt(zs, zs)?;
    let logits = g.scale(gram, 1.0 / cfg.tau);
    let lse = g.row_lse_masked(logits, off_diagonal(m))?;
    let lse_sum = g.sum(lse);
    let mut w = Tensor::zeros(&[m, m]);
    for (k, &i) in subset.iter().enumerate() {
        w.data_mut()[k * m + local[layout.partner(i)]] = -1.0;
    }
    let pos = g.weighted_sum(logits, Arc::new(w))?;
    g.add(lse_sum, pos)
}

/// SupCon over the full batch, evaluated in the expanded form
/// `Σ_i −1/|P(i)| Σ_p (s_ip − log Σ_{a≠i} exp s_ia)`.
pub fn supcon_loss_graph(g: &mut Graph, z: Var, layout: &BatchLayout, cfg: &LossConfig) -> Result<Var> {
    cfg.validate()?;
    let positives = supcon_positive_sets(layout)?;
    let n = layout.len();
    let zn = normalized(g, z, cfg.normalize_inputs)?;
    let gram = g.matmul_nt(zn, zn)?;
    let logits = g.scale(gram, 1.0 / cfg.tau);
    let lse = g.row_lse_masked(logits, off_diagonal(n))?;
    let lse_sum = g.sum(lse);
    let mut w = Tensor::zeros(&[n, n]);
    for (i, ps) in positives.iter().enumerate() {
        let c = -1.0 / ps.len() as f64;
        for &p in ps {
            w.data_mut()[i * n + p] = c;
        }
    }
    let pos = g.weighted_sum(logits, Arc::new(w))?;
    g.add(lse_sum, pos)
}

/// P(i) for every view: the other views sharing its pseudo-label.
pub fn supcon_positive_sets(layout: &BatchLayout) -> Result<Vec<Vec<usize>>> {
    let labels = layout
        .pseudo_label()
        .ok_or_else(|| Error::InvalidBatch("supcon requires pseudo-labels".into()))?;
    let mut by_class: BTreeMap<u32, Vec<usize>> = BTreeMap::new();
    for (i, &c) in labels.iter().enumerate() {
        by_class.entry(c).or_default().push(i);
    }
    if let Some((c, _)) = by_class.iter().find(|(_, members)| members.len() < 2) {
        return Err(Error::InvalidBatch(format!("class {c} has a single member")));
    }
    Ok((0..labels.len())
        .map(|i| by_class[&labels[i]].iter().copied().filter(|&p| p != i).collect())
        .collect())
}

/// Σ_{i∈Neg} −1/|Neg| Σ_{j∈Neg, j≠i} z_i·z_j/τ; zero when |Neg| ≤ 1.
pub fn similarity_loss_graph(g: &mut Graph, z: Var, layout: &BatchLayout, cfg: &LossConfig) -> Result<Var> {
    cfg.validate()?;
    let neg = layout.indices_with(BagLabel::Negative);
    let m = neg.len();
    if m <= 1 {
        return Ok(zero(g));
    }
    let zn = normalized(g, z, cfg.normalize_inputs)?;
    let zs = g.select_rows(zn, Arc::new(neg))?;
    let gram = g.matmul_nt(zs, zs)?;
    let c = -1.0 / (m as f64 * cfg.tau);
    let w = Tensor::new(
        vec![m, m],
        (0..m * m).map(|k| if k / m != k % m { c } else { 0.0 }).collect(),
    )?;
    g.weighted_sum(gram, Arc::new(w))
}

/// Nodes of the WeakSupCon objective.
#[derive(Debug, Clone, Copy)]
pub struct WeakSupConVars {
    pub total: Var,
    pub similarity: Var,
    pub simclr: Var,
}

/// `α · Similarity(Neg) + w · SimCLR(Pos)`.
pub fn weaksupcon_loss_graph(g: &mut Graph, z: Var, layout: &BatchLayout, cfg: &LossConfig) -> Result<WeakSupConVars> {
    cfg.validate()?;
    let pos = layout.indices_with(BagLabel::Positive);
    let similarity = similarity_loss_graph(g, z, layout, cfg)?;
    let simclr = simclr_loss_graph(g, z, layout, &pos, cfg)?;
    let a = g.scale(similarity, cfg.alpha);
    let b = g.scale(simclr, cfg.simclr_weight);
    let total = g.add(a, b)?;
    Ok(WeakSupConVars {
        total,
        similarity,
        simclr,
    })
}

fn eval<F>(batch: &ContrastiveBatch, f: F) -> Result<f64>
where
    F: FnOnce(&mut Graph, Var) -> Result<Var>,
{
    let mut g = Graph::new();
    let z = g.constant(batch.z.clone());
    let out = f(&mut g, z)?;
    g.scalar_value(out)
}

/// ℓ_{i,j} with the denominator over every view in `subset` except `i`.
pub fn simclr_pair_term_in(batch: &ContrastiveBatch, subset: &[usize], i: usize, j: usize, cfg: &LossConfig) -> Result<f64> {
    cfg.validate()?;
    let layout = &batch.layout;
    if i == j {
        return Err(Error::InvalidBatch(format!("pair term needs distinct views, got i = j = {i}")));
    }
    if i >= layout.len() || j >= layout.len() || layout.origin()[i] != layout.origin()[j] {
        return Err(Error::InvalidBatch(format!("views {i} and {j} do not share an origin")));
    }
    if !subset.contains(&i) || !subset.contains(&j) {
        return Err(Error::InvalidBatch(format!("views {i} and {j} must both be in the subset")));
    }
    let zi = batch.z.row(i);
    let mut logits = Vec::with_capacity(subset.len());
    let mut numer = 0.0;
    for &k in subset {
        if k == i {
            continue;
        }
        let s = cosine_similarity(zi, batch.z.row(k))? / cfg.tau;
        if k == j {
            numer = s;
        }
        logits.push(s);
    }
    // lse ≥ numer always; clamp tiny negative roundoff
    Ok((crate::numcore::tensor::log_sum_exp(&logits) - numer).max(0.0))
}

/// ℓ_{i,j} over the whole batch.
pub fn simclr_pair_term(batch: &ContrastiveBatch, i: usize, j: usize, cfg: &LossConfig) -> Result<f64> {
    let all: Vec<usize> = (0..batch.layout.len()).collect();
    simclr_pair_term_in(batch, &all, i, j, cfg)
}

pub fn simclr_loss(batch: &ContrastiveBatch, subset: &[usize], cfg: &LossConfig) -> Result<f64> {
    eval(batch, |g, z| simclr_loss_graph(g, z, &batch.layout, subset, cfg))
}

pub fn supcon_loss(batch: &ContrastiveBatch, cfg: &LossConfig) -> Result<f64> {
    eval(batch, |g, z| supcon_loss_graph(g, z, &batch.layout, cfg))
}

pub fn similarity_loss(batch: &ContrastiveBatch, cfg: &LossConfig) -> Result<f64> {
    eval(batch, |g, z| similarity_loss_graph(g, z, &batch.layout, cfg))
}

/// WeakSupCon total with its two parts (unweighted), for logging.
#[derive(Debug, Clone, Copy, PartialEq)]
pub struct WeakSupConParts {
    pub total: f64,
    pub similarity: f64,
    pub simclr: f64,
}

pub fn weaksupcon_loss(batch: &ContrastiveBatch, cfg: &LossConfig) -> Result<WeakSupConParts> {
    let mut g = Graph::new();
    let z = g.constant(batch.z.clone());
    let v = weaksupcon_loss_graph(&mut g, z, &batch.layout, cfg)?;
    Ok(WeakSupConParts {
        total: g.scalar_value(v.total)?,
        similarity: g.scalar_value(v.similarity)?,
        simclr: g.scalar_value(v.simclr)?,
    })
}

fn unit_rows(batch: &ContrastiveBatch, cfg: &LossConfig) -> Result<Tensor> {
    if cfg.normalize_inputs {
        batch.z.l2_normalize_rows()
    } else {
        Ok(batch.z.clone())
    }
}

/// SupCon written as `−1/|P| Σ_p log(exp(s_ip) / Σ_a exp(s_ia))`, evaluated
/// literally with a ratio inside the log.
pub fn supcon_ratio_form(batch: &ContrastiveBatch, cfg: &LossConfig) -> Result<f64> {
    cfg.validate()?;
    let positives = supcon_positive_sets(&batch.layout)?;
    let z = unit_rows(batch, cfg)?;
    let n = batch.layout.len();
    let mut total = 0.0;
    for (i, ps) in positives.iter().enumerate() {
        let denom = (0..n)
            .filter(|&a| a != i)
            .fold(0.0, |acc, a| acc + (dot(z.row(i), z.row(a)) / cfg.tau).exp());
        let inner = ps.iter().fold(0.0, |acc, &p| {
            acc + ((dot(z.row(i), z.row(p)) / cfg.tau).exp() / denom).ln()
        });
        total += -inner / ps.len() as f64;
    }
    Ok(total)
}

/// SupCon in the expanded form `Σ_i −1/|P(i)| Σ_p (s_ip − log Σ_a exp s_ia)`.
pub fn supcon_expanded_form(batch: &ContrastiveBatch, cfg: &LossConfig) -> Result<f64> {
    cfg.validate()?;
    let positives = supcon_positive_sets(&batch.layout)?;
    let z = unit_rows(batch, cfg)?;
    let n = batch.layout.len();
    let mut total = 0.0;
    for (i, ps) in positives.iter().enumerate() {
        let logits: Vec<f64> = (0..n)
            .filter(|&a| a != i)
            .map(|a| dot(z.row(i), z.row(a)) / cfg.tau)
            .collect();
        let lse = crate::numcore::tensor::log_sum_exp(&logits);
        let inner = ps
            .iter()
            .fold(0.0, |acc, &p| acc + (dot(z.row(i), z.row(p)) / cfg.tau - lse));
        total += -inner / ps.len() as f64;
    }
    Ok(total)
}

/// Absolute difference between the ratio and expanded SupCon forms.
pub fn supcon_decomposition_check(batch: &ContrastiveBatch, cfg: &LossConfig) -> Result<f64> {
    Ok((supcon_ratio_form(batch, cfg)? - supcon_expanded_form(batch, cfg)?).abs())
}
