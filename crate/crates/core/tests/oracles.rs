//! Metric, diagnostic, PCA and pseudo-bag routines against brute-force or
//! third-party reference implementations.

use approx::assert_abs_diff_eq;
use nalgebra::{DMatrix, SymmetricEigen};
use weaksupcon_core::analysis::*;
use weaksupcon_core::mildata::{Bag, BagLabel};
use weaksupcon_core::milmodels::*;
use weaksupcon_core::numcore::{pca_top2, Graph, Rng, Tensor};

fn pairwise_auc(scores: &[f64], labels: &[bool]) -> f64 {
    let mut twice = 0u64;
    let (mut p, mut n) = (0u64, 0u64);
    for (i, &li) in labels.iter().enumerate() {
        if li {
            p += 1;
        } else {
            n += 1;
        }
        if !li {
            continue;
        }
        for (j, &lj) in labels.iter().enumerate() {
            if lj {
                continue;
            }
            if scores[i] > scores[j] {
                twice += 2;
            } else if scores[i] == scores[j] {
                twice += 1;
            }
        }
    }
    twice as f64 / (2.0 * p as f64 * n as f64)
}

fn random_scored(rng: &mut Rng) -> (Vec<f64>, Vec<bool>) {
    let n = 2 + rng.below(499) as usize;
    // coarse grid so ties are common
    let levels = 1 + rng.below(40);
    let scores: Vec<f64> = (0..n).map(|_| rng.below(levels) as f64 / levels as f64).collect();
    let mut labels: Vec<bool> = (0..n).map(|_| rng.bernoulli(0.4)).collect();
    labels[0] = true;
    labels[1] = false;
    (scores, labels)
}

#[test]
pub fn auc_equals_pairwise_count() {
    let mut rng = Rng::seed_from_u64(200);
    for case in 0..100 {
        let (scores, labels) = random_scored(&mut rng);
        assert_eq!(roc_auc(&scores, &labels).unwrap(), pairwise_auc(&scores, &labels), "case {case}");
    }
}

#[test]
pub fn auc_is_rank_based() {
    let mut rng = Rng::seed_from_u64(201);
    for _ in 0..50 {
        let (scores, labels) = random_scored(&mut rng);
        let warped: Vec<f64> = scores.iter().map(|s| (3.0 * s).exp() - 7.0).collect();
        assert_eq!(roc_auc(&scores, &labels).unwrap(), roc_auc(&warped, &labels).unwrap());
    }
}

#[test]
pub fn constant_predictor_balanced_accuracy() {
    let mut rng = Rng::seed_from_u64(202);
    for _ in 0..50 {
        let (_, labels) = random_scored(&mut rng);
        let s = rng.uniform();
        let r = accuracy_metrics(&vec![s; labels.len()], &labels, 0.5).unwrap();
        assert_eq!(r.balanced_accuracy, 0.5);
    }
}

fn unit_rows(rows: Vec<Vec<f64>>) -> Tensor {
    let d = rows[0].len();
    let data: Vec<f64> = rows
        .into_iter()
        .flat_map(|r| {
            let n = r.iter().map(|v| v * v).sum::<f64>().sqrt();
            r.into_iter().map(move |v| v / n)
        })
        .collect();
    Tensor::matrix(data.len() / d, d, data).unwrap()
}

/// Clustered unit vectors so that some neighborhoods clear 0.999.
fn clustered(rng: &mut Rng, n: usize, d: usize) -> Tensor {
    let centers: Vec<Vec<f64>> = (0..4).map(|_| (0..d).map(|_| rng.normal()).collect()).collect();
    let rows = (0..n)
        .map(|_| {
            let c = &centers[rng.below(4) as usize];
            let spread = [0.0, 0.01, 0.05, 1.0][rng.below(4) as usize];
            c.iter().map(|v| v + spread * rng.normal()).collect()
        })
        .collect();
    unit_rows(rows)
}

#[test]
pub fn anchor_equals_brute_force() {
    let mut rng = Rng::seed_from_u64(203);
    for case in 0..20 {
        let n = 2 + rng.below(199) as usize;
        let f = clustered(&mut rng, n, 8);
        let report = densest_anchor(&f, 0.999).unwrap();

        let dot = |i: usize, j: usize| f.row(i).iter().zip(f.row(j)).map(|(a, b)| a * b).sum::<f64>();
        let mut counts = vec![0usize; n];
        for (i, c) in counts.iter_mut().enumerate() {
            for j in 0..n {
                if i != j && dot(i, j) > 0.999 {
                    *c += 1;
                }
            }
        }
        let best = *counts.iter().max().unwrap();
        let anchor = counts.iter().position(|&c| c == best).unwrap();
        assert_eq!(report.anchor_index, anchor, "case {case}");
        assert_eq!(report.neighbor_count, best, "case {case}");
        for t in [0.9, 0.999] {
            let frac = (0..n).filter(|&j| dot(anchor, j).clamp(-1.0, 1.0) > t).count() as f64 / n as f64;
            assert_eq!(report.fraction_above(t), frac);
        }
        assert_eq!(report.histogram.iter().sum::<usize>(), n);
    }
}

#[test]
pub fn histogram_on_uniform_grid() {
    let values: Vec<f64> = (0..160).map(|k| -1.0 + (k as f64 + 0.5) / 80.0).collect();
    assert_eq!(cosine_histogram(&values, 80).unwrap(), vec![2; 80]);
}

#[test]
pub fn pca_matches_nalgebra() {
    let mut rng = Rng::seed_from_u64(204);
    for case in 0..20 {
        let n = 3 + rng.below(60) as usize;
        let d = 2 + rng.below(10) as usize;
        let scales: Vec<f64> = (0..d).map(|k| 1.0 + 2.0 * k as f64).collect();
        let x = Tensor::matrix(n, d, (0..n * d).map(|k| scales[k % d] * rng.normal()).collect()).unwrap();
        let pca = pca_top2(&x).unwrap();

        let m = DMatrix::from_row_slice(n, d, x.data());
        let mean = m.row_mean();
        let centered = DMatrix::from_fn(n, d, |i, j| m[(i, j)] - mean[j]);
        let cov = centered.transpose() * &centered / (n as f64 - 1.0);
        let eig = SymmetricEigen::new(cov);
        let mut order: Vec<usize> = (0..d).collect();
        order.sort_by(|&a, &b| eig.eigenvalues[b].total_cmp(&eig.eigenvalues[a]));
        for k in 0..2 {
            let lambda = eig.eigenvalues[order[k]].max(0.0);
            assert_abs_diff_eq!(pca.explained_variance[k], lambda, epsilon = 1e-8 * lambda.max(1.0));
            let v = eig.eigenvectors.column(order[k]);
            let ours = pca.components.row(k);
            let sign = if v.iter().zip(ours).map(|(a, b)| a * b).sum::<f64>() < 0.0 { -1.0 } else { 1.0 };
            for j in 0..d {
                assert_abs_diff_eq!(ours[j], sign * v[j], epsilon = 1e-8);
            }
            for i in 0..n {
                let proj: f64 = (0..d).map(|j| centered[(i, j)] * v[j]).sum::<f64>() * sign;
                assert_abs_diff_eq!(pca.projected.row(i)[k], proj, epsilon = 1e-8 * scales[d - 1]);
            }
        }
        let _ = case;
    }
}

#[test]
pub fn pca_two_by_two_closed_form() {
    // covariance [[a, b], [b, c]] has eigenvalues (a + c)/2 ± sqrt(((a − c)/2)² + b²)
    let x = Tensor::from_rows(&[[2.0, 1.0], [0.0, 0.0], [-1.0, 1.0], [3.0, -2.0]]).unwrap();
    let pca = pca_top2(&x).unwrap();
    let (a, b, c) = {
        let m = [1.0, 0.0];
        let rows: Vec<[f64; 2]> = (0..4).map(|i| [x.row(i)[0] - m[0], x.row(i)[1] - m[1]]).collect();
        let s = |p: usize, q: usize| rows.iter().map(|r| r[p] * r[q]).sum::<f64>() / 3.0;
        (s(0, 0), s(0, 1), s(1, 1))
    };
    let mid = (a + c) / 2.0;
    let rad = (((a - c) / 2.0).powi(2) + b * b).sqrt();
    assert_abs_diff_eq!(pca.explained_variance[0], mid + rad, epsilon = 1e-12);
    assert_abs_diff_eq!(pca.explained_variance[1], mid - rad, epsilon = 1e-12);
}

fn bag(id: u32, n: usize, d: usize, rng: &mut Rng) -> Bag {
    let x = Tensor::matrix(n, d, (0..n * d).map(|_| rng.normal()).collect()).unwrap();
    Bag::new(id, BagLabel::Negative, x, None).unwrap()
}

#[test]
pub fn dtfd_split_is_a_balanced_partition() {
    let mut rng = Rng::seed_from_u64(205);
    for case in 0..1000 {
        let m = 2 + rng.below(7) as usize;
        let n = m + rng.below(60) as usize;
        let label = if case % 2 == 0 { BagLabel::Positive } else { BagLabel::Negative };
        let mut b = bag(case, n, 3, &mut rng);
        b.label = label;
        let parts = dtfd_split(&b, m, &mut rng).unwrap();
        assert_eq!(parts.len(), m);
        let sizes: Vec<usize> = parts.iter().map(|p| p.indices.len()).collect();
        assert!(sizes.iter().max().unwrap() - sizes.iter().min().unwrap() <= 1);
        assert!(parts.iter().all(|p| p.label == label));
        let mut all: Vec<usize> = parts.iter().flat_map(|p| p.indices.iter().copied()).collect();
        all.sort_unstable();
        assert_eq!(all, (0..n).collect::<Vec<_>>(), "case {case}");
    }
    let small = bag(0, 2, 3, &mut rng);
    assert!(dtfd_split(&small, 3, &mut rng).is_err());
}

#[test]
pub fn aggregators_are_permutation_invariant() {
    let mut rng = Rng::seed_from_u64(206);
    for kind in [MilKind::Mean, MilKind::Max, MilKind::Abmil, MilKind::Dtfd] {
        let spec = MilModelSpec {
            kind,
            input_dim: 5,
            attention_dim: 4,
            num_pseudo_bags: 3,
            classifier_widths: vec![4],
        };
        for _ in 0..20 {
            let model = MilModel::init(&spec, &mut rng).unwrap();
            let b = bag(3, 6 + rng.below(20) as usize, 5, &mut rng);
            let perm = rng.permutation(b.len());
            let shuffled = Bag::new(3, b.label, b.instances.select_rows(&perm).unwrap(), None).unwrap();
            let p = model.predict(&b, 9).unwrap();
            let q = model.predict(&shuffled, 9).unwrap();
            assert_abs_diff_eq!(p.score, q.score, epsilon = 1e-12);
            if let Some(a) = &p.attention {
                assert!(a.iter().all(|&w| w >= 0.0));
                assert_abs_diff_eq!(a.iter().sum::<f64>(), 1.0, epsilon = 1e-9);
            }
        }
    }
}

#[test]
pub fn max_pool_tie_routes_gradient_to_first_copy() {
    let spec = MilModelSpec {
        kind: MilKind::Max,
        input_dim: 3,
        ..MilModelSpec::default()
    };
    let model = MilModel::init(&spec, &mut Rng::seed_from_u64(207)).unwrap();
    // linear classifier: whichever of r, −r scores higher is duplicated
    let r = [1.0, 2.0, 3.0];
    let m: Vec<f64> = r.iter().map(|v| -v).collect();
    let per = model.classifier.forward_values(&Tensor::from_rows(&[r, [m[0], m[1], m[2]]]).unwrap()).unwrap();
    let (hi, lo) = if per.data()[0] > per.data()[1] { (r, [m[0], m[1], m[2]]) } else { ([m[0], m[1], m[2]], r) };
    let x = Tensor::from_rows(&[lo, hi, hi]).unwrap();
    let mut g = Graph::new();
    let b = model.bind(&mut g);
    let h = g.param(x);
    let fwd = model.forward_graph(&b, &mut g, h, &mut Rng::seed_from_u64(0)).unwrap();
    let grads = g.backward(fwd.logit).unwrap();
    let gx = grads.wrt(h);
    assert!(gx.row(1).iter().any(|&v| v != 0.0));
    assert!(gx.row(2).iter().all(|&v| v == 0.0));
    assert!(gx.row(0).iter().all(|&v| v == 0.0));
}
