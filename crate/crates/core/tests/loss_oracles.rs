//! Loss values against direct double-loop oracles, closed forms, and the
//! algebraic identities between the loss forms.

use approx::assert_abs_diff_eq;
use weaksupcon_core::losses::*;
use weaksupcon_core::mildata::BagLabel;
use weaksupcon_core::numcore::{Rng, Tensor};

fn gaussian(rows: usize, cols: usize, rng: &mut Rng) -> Tensor {
    Tensor::matrix(rows, cols, (0..rows * cols).map(|_| rng.normal()).collect()).unwrap()
}

fn random_batch(rng: &mut Rng, pseudo_unique: bool) -> ContrastiveBatch {
    let n = 3 + rng.below(6) as usize;
    let mut labels: Vec<BagLabel> = (0..n)
        .map(|_| if rng.bernoulli(0.5) { BagLabel::Positive } else { BagLabel::Negative })
        .collect();
    labels[0] = BagLabel::Negative;
    labels[1] = BagLabel::Positive;
    let pseudo: Vec<u32> = if pseudo_unique {
        (0..n as u32).collect()
    } else {
        labels.iter().map(|l| l.as_u8() as u32).collect()
    };
    let layout = BatchLayout::interleaved(&labels, Some(&pseudo)).unwrap();
    let z = gaussian(2 * n, 6, rng);
    ContrastiveBatch::new(z, layout).unwrap()
}

fn cos(a: &[f64], b: &[f64]) -> f64 {
    let dot: f64 = a.iter().zip(b).map(|(x, y)| x * y).sum();
    let na: f64 = a.iter().map(|x| x * x).sum::<f64>().sqrt();
    let nb: f64 = b.iter().map(|x| x * x).sum::<f64>().sqrt();
    dot / (na * nb)
}

fn raw_dot(a: &[f64], b: &[f64]) -> f64 {
    a.iter().zip(b).map(|(x, y)| x * y).sum()
}

fn sim(batch: &ContrastiveBatch, i: usize, j: usize, cfg: &LossConfig) -> f64 {
    let (a, b) = (batch.z.row(i), batch.z.row(j));
    if cfg.normalize_inputs {
        cos(a, b)
    } else {
        raw_dot(a, b)
    }
}

fn partner(batch: &ContrastiveBatch, i: usize) -> usize {
    let o = batch.layout.origin();
    (0..o.len()).find(|&j| j != i && o[j] == o[i]).unwrap()
}

fn oracle_simclr(batch: &ContrastiveBatch, subset: &[usize], tau: f64) -> f64 {
    let mut total = 0.0;
    for &i in subset {
        let j = partner(batch, i);
        let num = (cos(batch.z.row(i), batch.z.row(j)) / tau).exp();
        let den: f64 = subset
            .iter()
            .filter(|&&k| k != i)
            .map(|&k| (cos(batch.z.row(i), batch.z.row(k)) / tau).exp())
            .sum();
        total += -(num / den).ln();
    }
    total
}

fn oracle_supcon(batch: &ContrastiveBatch, cfg: &LossConfig) -> f64 {
    let n = batch.layout.len();
    let y = batch.layout.pseudo_label().unwrap();
    let mut total = 0.0;
    for i in 0..n {
        let den: f64 = (0..n).filter(|&a| a != i).map(|a| (sim(batch, i, a, cfg) / cfg.tau).exp()).sum();
        let pos: Vec<usize> = (0..n).filter(|&p| p != i && y[p] == y[i]).collect();
        let inner: f64 = pos
            .iter()
            .map(|&p| ((sim(batch, i, p, cfg) / cfg.tau).exp() / den).ln())
            .sum();
        total += -inner / pos.len() as f64;
    }
    total
}

fn oracle_similarity(batch: &ContrastiveBatch, cfg: &LossConfig) -> f64 {
    let neg: Vec<usize> = (0..batch.layout.len())
        .filter(|&i| batch.layout.bag_label()[i] == BagLabel::Negative)
        .collect();
    if neg.len() <= 1 {
        return 0.0;
    }
    let mut total = 0.0;
    for &i in &neg {
        for &j in &neg {
            if j != i {
                total += -sim(batch, i, j, cfg) / (cfg.tau * neg.len() as f64);
            }
        }
    }
    total
}

fn random_cfg(rng: &mut Rng, normalize: bool) -> LossConfig {
    LossConfig {
        tau: 0.1 + rng.uniform(),
        alpha: 4.0 * rng.uniform(),
        simclr_weight: 1.0,
        normalize_inputs: normalize,
    }
}

#[test]
pub fn losses_match_double_loop_oracles() {
    let mut rng = Rng::seed_from_u64(100);
    for case in 0..100 {
        let batch = random_batch(&mut rng, false);
        let cfg = random_cfg(&mut rng, case % 2 == 0);
        let all: Vec<usize> = (0..batch.layout.len()).collect();
        let pos = batch.layout.indices_with(BagLabel::Positive);

        assert_abs_diff_eq!(simclr_loss(&batch, &all, &cfg).unwrap(), oracle_simclr(&batch, &all, cfg.tau), epsilon = 1e-9);
        assert_abs_diff_eq!(simclr_loss(&batch, &pos, &cfg).unwrap(), oracle_simclr(&batch, &pos, cfg.tau), epsilon = 1e-9);
        assert_abs_diff_eq!(supcon_loss(&batch, &cfg).unwrap(), oracle_supcon(&batch, &cfg), epsilon = 1e-9);
        assert_abs_diff_eq!(similarity_loss(&batch, &cfg).unwrap(), oracle_similarity(&batch, &cfg), epsilon = 1e-9);

        let parts = weaksupcon_loss(&batch, &cfg).unwrap();
        let expect = cfg.alpha * oracle_similarity(&batch, &cfg) + oracle_simclr(&batch, &pos, cfg.tau);
        assert_abs_diff_eq!(parts.total, expect, epsilon = 1e-9);
    }
}

#[test]
pub fn pair_term_matches_oracle() {
    let mut rng = Rng::seed_from_u64(101);
    for _ in 0..50 {
        let batch = random_batch(&mut rng, false);
        let cfg = random_cfg(&mut rng, true);
        let n = batch.layout.len();
        let i = rng.below(n as u64) as usize;
        let j = partner(&batch, i);
        let num = (cos(batch.z.row(i), batch.z.row(j)) / cfg.tau).exp();
        let den: f64 = (0..n).filter(|&k| k != i).map(|k| (cos(batch.z.row(i), batch.z.row(k)) / cfg.tau).exp()).sum();
        assert_abs_diff_eq!(simclr_pair_term(&batch, i, j, &cfg).unwrap(), -(num / den).ln(), epsilon = 1e-9);
    }
}

fn identical(n_origins: usize, label: BagLabel, row: &[f64]) -> ContrastiveBatch {
    let labels = vec![label; n_origins];
    let layout = BatchLayout::interleaved(&labels, None).unwrap();
    let rows: Vec<f64> = (0..2 * n_origins).flat_map(|_| row.iter().copied()).collect();
    ContrastiveBatch::new(Tensor::matrix(2 * n_origins, row.len(), rows).unwrap(), layout).unwrap()
}

#[test]
pub fn closed_form_pair_term_ln3() {
    let batch = identical(2, BagLabel::Positive, &[0.6, 0.8]);
    let cfg = LossConfig {
        tau: 1.0,
        ..LossConfig::default()
    };
    for i in 0..4 {
        let j = batch.layout.partner(i);
        assert_abs_diff_eq!(simclr_pair_term(&batch, i, j, &cfg).unwrap(), 3f64.ln(), epsilon = 1e-9);
    }
}

#[test]
pub fn closed_form_similarity() {
    let cfg = LossConfig::default();
    // |Neg| = 4 views of one unit feature: −(4 − 1)/τ
    let same = identical(2, BagLabel::Negative, &[0.0, 1.0, 0.0]);
    assert_abs_diff_eq!(similarity_loss(&same, &cfg).unwrap(), -6.0, epsilon = 1e-9);

    let layout = BatchLayout::interleaved(&[BagLabel::Negative, BagLabel::Negative], None).unwrap();
    let ortho = ContrastiveBatch::new(Tensor::identity(4), layout).unwrap();
    assert_abs_diff_eq!(similarity_loss(&ortho, &cfg).unwrap(), 0.0, epsilon = 1e-9);
}

#[test]
pub fn closed_form_single_pair() {
    let layout = BatchLayout::interleaved(&[BagLabel::Positive], None).unwrap();
    let batch = ContrastiveBatch::new(Tensor::from_rows(&[[0.3, -1.2], [2.0, 0.7]]).unwrap(), layout).unwrap();
    let cfg = LossConfig::default();
    assert_abs_diff_eq!(simclr_pair_term(&batch, 0, 1, &cfg).unwrap(), 0.0, epsilon = 1e-9);
    assert_abs_diff_eq!(simclr_loss(&batch, &[0, 1], &cfg).unwrap(), 0.0, epsilon = 1e-9);
}

#[test]
pub fn supcon_forms_agree_on_100_batches() {
    let mut rng = Rng::seed_from_u64(102);
    for case in 0..100 {
        let batch = random_batch(&mut rng, false);
        let cfg = random_cfg(&mut rng, case % 2 == 0);
        let diff = supcon_decomposition_check(&batch, &cfg).unwrap();
        assert!(diff < 1e-9, "case {case}: {diff:e}");
        assert_abs_diff_eq!(supcon_ratio_form(&batch, &cfg).unwrap(), supcon_loss(&batch, &cfg).unwrap(), epsilon = 1e-9);
    }
}

#[test]
pub fn supcon_with_unique_labels_is_simclr() {
    let mut rng = Rng::seed_from_u64(103);
    for _ in 0..100 {
        let batch = random_batch(&mut rng, true);
        let cfg = random_cfg(&mut rng, true);
        let all: Vec<usize> = (0..batch.layout.len()).collect();
        assert_abs_diff_eq!(supcon_loss(&batch, &cfg).unwrap(), simclr_loss(&batch, &all, &cfg).unwrap(), epsilon = 1e-9);
    }
}

#[test]
pub fn weaksupcon_is_affine_in_alpha() {
    let mut rng = Rng::seed_from_u64(104);
    for _ in 0..100 {
        let batch = random_batch(&mut rng, false);
        let base = random_cfg(&mut rng, true);
        let at = |alpha: f64| weaksupcon_loss(&batch, &LossConfig { alpha, ..base }).unwrap();
        let p0 = at(0.0);
        for alpha in [0.25, 1.0, 4.0, 10.0 * rng.uniform()] {
            let p = at(alpha);
            assert_abs_diff_eq!(p.total, p0.total + alpha * p.similarity, epsilon = 1e-9);
            assert_abs_diff_eq!((p.total - p0.total) / alpha, p0.similarity, epsilon = 1e-9);
        }
    }
}

#[test]
pub fn loss_is_invariant_to_view_order() {
    let mut rng = Rng::seed_from_u64(105);
    for _ in 0..30 {
        let batch = random_batch(&mut rng, false);
        let cfg = random_cfg(&mut rng, true);
        let n = batch.layout.len();
        let perm = rng.permutation(n);
        let origin: Vec<usize> = perm.iter().map(|&p| batch.layout.origin()[p]).collect();
        let label: Vec<BagLabel> = perm.iter().map(|&p| batch.layout.bag_label()[p]).collect();
        let pseudo: Vec<u32> = perm.iter().map(|&p| batch.layout.pseudo_label().unwrap()[p]).collect();
        let z = batch.z.select_rows(&perm).unwrap();
        let shuffled = ContrastiveBatch::new(z, BatchLayout::new(origin, label, Some(pseudo)).unwrap()).unwrap();
        let a = weaksupcon_loss(&batch, &cfg).unwrap();
        let b = weaksupcon_loss(&shuffled, &cfg).unwrap();
        assert_abs_diff_eq!(a.total, b.total, epsilon = 1e-9);
        assert_abs_diff_eq!(supcon_loss(&batch, &cfg).unwrap(), supcon_loss(&shuffled, &cfg).unwrap(), epsilon = 1e-9);
    }
}
