//! Synthetic MIL bags under the standard MIL assumption, dataset splits, and
//! the `WSCF` feature-store format.

mod store;

pub use store::{decode_feature_store, encode_feature_store, read_feature_store, write_feature_store, FeatureStore};

use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};
use crate::numcore::{Rng, Tensor};

#[derive(Debug, Clone, Copy, PartialEq, Eq, PartialOrd, Ord, Hash, Serialize, Deserialize)]
#[serde(rename_all = "lowercase")]
pub enum BagLabel {
    Negative,
    Positive,
}

impl BagLabel {
    pub fn as_u8(self) -> u8 {
        match self {
            BagLabel::Negative => 0,
            BagLabel::Positive => 1,
        }
    }

    pub fn from_u8(v: u8) -> Option<Self> {
        match v {
            0 => Some(BagLabel::Negative),
            1 => Some(BagLabel::Positive),
            _ => None,
        }
    }

    pub fn as_f64(self) -> f64 {
        self.as_u8() as f64
    }

    pub fn is_positive(self) -> bool {
        self == BagLabel::Positive
    }
}

/// A labeled set of instance vectors.
#[derive(Debug, Clone, PartialEq)]
pub struct Bag {
    pub id: u32,
    pub label: BagLabel,
    /// `n_i × d`.
    pub instances: Tensor,
    /// Ground-truth instance positivity. Only synthetic data carries it, and
    /// nothing on a training path reads it.
    pub witness_mask: Option<Vec<bool>>,
}

impl Bag {
    pub fn new(id: u32, label: BagLabel, instances: Tensor, witness_mask: Option<Vec<bool>>) -> Result<Self> {
        let bag = Bag {
            id,
            label,
            instances,
            witness_mask,
        };
        bag.validate()?;
        Ok(bag)
    }

    pub fn validate(&self) -> Result<()> {
        if self.instances.rank() != 2 || self.instances.rows() == 0 {
            return Err(Error::EmptyBag(self.id));
        }
        if let Some(mask) = &self.witness_mask {
            if mask.len() != self.len() {
                return Err(Error::InvalidBatch(format!(
                    "bag {}: witness mask has {} entries for {} instances",
                    self.id,
                    mask.len(),
                    self.len()
                )));
            }
            let any = mask.iter().any(|&w| w);
            if any != self.label.is_positive() {
                return Err(Error::InvalidBatch(format!(
                    "bag {} violates the MIL assumption: label {:?} with witnesses present = {any}",
                    self.id, self.label
                )));
            }
        }
        Ok(())
    }

    pub fn len(&self) -> usize {
        self.instances.rows()
    }

    pub fn is_empty(&self) -> bool {
        self.len() == 0
    }

    pub fn dim(&self) -> usize {
        self.instances.cols()
    }

    pub fn witness_count(&self) -> usize {
        self.witness_mask
            .as_ref()
            .map_or(0, |m| m.iter().filter(|&&w| w).count())
    }
}

/// Generator parameters for a Gaussian-mixture MIL benchmark.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields, default)]
pub struct SyntheticSpec {
    pub d: usize,
    pub neg_clusters: usize,
    pub pos_clusters: usize,
    pub cluster_sigma: f64,
    /// Minimum distance between any positive and any negative component mean.
    pub cluster_separation: f64,
    /// Fraction of witnesses in positive bags, in `(0, 1]`.
    pub witness_rate: f64,
    pub bag_size_range: [usize; 2],
    pub counts: SplitCounts,
    pub seed: u64,
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(deny_unknown_fields, default)]
pub struct SplitCounts {
    pub train_neg: usize,
    pub train_pos: usize,
    pub val_neg: usize,
    pub val_pos: usize,
    pub test_neg: usize,
    pub test_pos: usize,
}

impl SplitCounts {
    pub fn total(&self) -> usize {
        self.train_neg + self.train_pos + self.val_neg + self.val_pos + self.test_neg + self.test_pos
    }
}

impl Default for SplitCounts {
    fn default() -> Self {
        standard_benchmark().counts
    }
}

impl Default for SyntheticSpec {
    fn default() -> Self {
        standard_benchmark()
    }
}

impl SyntheticSpec {
    pub fn validate(&self) -> Result<()> {
        let bad = |m: String| Err(Error::InvalidConfig(m));
        if self.d == 0 {
            return bad("d must be >= 1".into());
        }
        if self.neg_clusters == 0 || self.pos_clusters == 0 {
            return bad("cluster counts must be >= 1".into());
        }
        if !(self.witness_rate > 0.0 && self.witness_rate <= 1.0) {
            return bad(format!("witness_rate must be in (0, 1], got {}", self.witness_rate));
        }
        if self.bag_size_range[0] < 2 || self.bag_size_range[1] < self.bag_size_range[0] {
            return bad(format!("bag_size_range {:?} must satisfy 2 <= min <= max", self.bag_size_range));
        }
        if !(self.cluster_separation > 0.0) {
            return bad(format!("cluster_separation must be > 0, got {}", self.cluster_separation));
        }
        if !(self.cluster_sigma >= 0.0) {
            return bad(format!("cluster_sigma must be >= 0, got {}", self.cluster_sigma));
        }
        Ok(())
    }
}

/// The frozen desk-scale benchmark used by the acceptance suite.
pub fn standard_benchmark() -> SyntheticSpec {
    SyntheticSpec {
        d: 32,
        neg_clusters: 3,
        pos_clusters: 2,
        cluster_sigma: 0.5,
        cluster_separation: 3.0,
        witness_rate: 0.1,
        bag_size_range: [40, 60],
        counts: SplitCounts {
            train_neg: 30,
            train_pos: 30,
            val_neg: 10,
            val_pos: 10,
            test_neg: 15,
            test_pos: 15,
        },
        seed: 7,
    }
}

#[derive(Debug, Clone, PartialEq)]
pub struct DatasetSplit {
    pub train: Vec<Bag>,
    pub val: Vec<Bag>,
    pub test: Vec<Bag>,
}

impl DatasetSplit {
    pub fn all_bags(&self) -> impl Iterator<Item = &Bag> {
        self.train.iter().chain(&self.val).chain(&self.test)
    }

    pub fn validate(&self) -> Result<()> {
        let mut ids: Vec<u32> = self.all_bags().map(|b| b.id).collect();
        ids.sort_unstable();
        if let Some(w) = ids.windows(2).find(|w| w[0] == w[1]) {
            return Err(Error::InvalidBatch(format!("duplicate bag id {}", w[0])));
        }
        self.all_bags().try_for_each(Bag::validate)
    }
}

const MAX_REJECTION_ROUNDS: usize = 1000;

fn sq_dist(a: &[f64], b: &[f64]) -> f64 {
    a.iter().zip(b).fold(0.0, |acc, (x, y)| acc + (x - y) * (x - y))
}

/// Component means: isotropic Gaussian with per-coordinate scale
/// `separation / sqrt(2d)`, so that a typical pair of means sits about
/// `separation` apart, redrawn until every positive/negative pair clears it.
fn draw_means(spec: &SyntheticSpec, rng: &mut Rng) -> Result<(Vec<Vec<f64>>, Vec<Vec<f64>>)> {
    let scale = spec.cluster_separation / (2.0 * spec.d as f64).sqrt();
    let min_sq = spec.cluster_separation * spec.cluster_separation;
    for _ in 0..MAX_REJECTION_ROUNDS {
        let mut draw = |k: usize| -> Vec<Vec<f64>> {
            (0..k)
                .map(|_| (0..spec.d).map(|_| scale * rng.normal()).collect())
                .collect()
        };
        let neg = draw(spec.neg_clusters);
        let pos = draw(spec.pos_clusters);
        let ok = pos.iter().all(|p| neg.iter().all(|n| sq_dist(p, n) >= min_sq));
        if ok {
            return Ok((neg, pos));
        }
    }
    Err(Error::InvalidConfig(format!(
        "cluster_separation {} not attained in {MAX_REJECTION_ROUNDS} rejection rounds; try a smaller separation",
        spec.cluster_separation
    )))
}

fn sample_instance(mean: &[f64], sigma: f64, rng: &mut Rng, out: &mut Vec<f64>) {
    out.extend(mean.iter().map(|m| m + sigma * rng.normal()));
}

fn make_bag(
    id: u32,
    label: BagLabel,
    spec: &SyntheticSpec,
    neg: &[Vec<f64>],
    pos: &[Vec<f64>],
    rng: &mut Rng,
) -> Result<Bag> {
    let [lo, hi] = spec.bag_size_range;
    let n = rng.between(lo as u64, hi as u64) as usize;
    let witnesses = match label {
        BagLabel::Negative => 0,
        BagLabel::Positive => ((spec.witness_rate * n as f64).ceil() as usize).clamp(1, n),
    };
    let mut mask: Vec<bool> = (0..n).map(|k| k < witnesses).collect();
    rng.shuffle(&mut mask);
    let mut data = Vec::with_capacity(n * spec.d);
    for &w in &mask {
        let comps = if w { pos } else { neg };
        let c = rng.below(comps.len() as u64) as usize;
        sample_instance(&comps[c], spec.cluster_sigma, rng, &mut data);
    }
    Bag::new(id, label, Tensor::matrix(n, spec.d, data)?, Some(mask))
}

/// Draws a full train/val/test split. Bag ids run consecutively from 0:
/// train negatives, train positives, then val and test likewise.
pub fn generate_synthetic(spec: &SyntheticSpec) -> Result<DatasetSplit> {
    spec.validate()?;
    let mut rng = Rng::stream(spec.seed, "data");
    let (neg, pos) = draw_means(spec, &mut rng)?;
    let mut next_id = 0u32;
    let mut split = |n_neg: usize, n_pos: usize, rng: &mut Rng| -> Result<Vec<Bag>> {
        let mut bags = Vec::with_capacity(n_neg + n_pos);
        for (count, label) in [(n_neg, BagLabel::Negative), (n_pos, BagLabel::Positive)] {
            for _ in 0..count {
                bags.push(make_bag(next_id, label, spec, &neg, &pos, rng)?);
                next_id += 1;
            }
        }
        Ok(bags)
    };
    let c = spec.counts;
    let train = split(c.train_neg, c.train_pos, &mut rng)?;
    let val = split(c.val_neg, c.val_pos, &mut rng)?;
    let test = split(c.test_neg, c.test_pos, &mut rng)?;
    Ok(DatasetSplit { train, val, test })
}

/// Every instance inherits its bag's label (0 = negative, 1 = positive),
/// concatenated in bag order.
pub fn assign_pseudo_labels(bags: &[Bag]) -> Vec<u32> {
    bags.iter()
        .flat_map(|b| std::iter::repeat_n(b.label.as_u8() as u32, b.len()))
        .collect()
}

/// Flat view over every instance of a set of bags.
#[derive(Debug, Clone)]
pub struct InstancePool<'a> {
    bags: &'a [Bag],
    /// `(bag index, row)` per pooled instance.
    index: Vec<(usize, usize)>,
}

impl<'a> InstancePool<'a> {
    pub fn new(bags: &'a [Bag]) -> Self {
        let index = bags
            .iter()
            .enumerate()
            .flat_map(|(b, bag)| (0..bag.len()).map(move |r| (b, r)))
            .collect();
        InstancePool { bags, index }
    }

    pub fn len(&self) -> usize {
        self.index.len()
    }

    pub fn is_empty(&self) -> bool {
        self.index.is_empty()
    }

    pub fn instance(&self, k: usize) -> &[f64] {
        let (b, r) = self.index[k];
        self.bags[b].instances.row(r)
    }

    pub fn label(&self, k: usize) -> BagLabel {
        self.bags[self.index[k].0].label
    }
}
