use crate::error::{Error, Result};
use crate::numcore::tensor::Tensor;

/// Top-two principal components of a feature matrix.
#[derive(Debug, Clone, PartialEq)]
pub struct Pca2 {
    /// `2×d`, orthonormal rows.
    pub components: Tensor,
    /// `n×2`: mean-centered data times the components.
    pub projected: Tensor,
    pub explained_variance: [f64; 2],
    pub mean: Vec<f64>,
}

/// Symmetric eigendecomposition by cyclic Jacobi rotations.
///
/// Returns eigenvalues in descending order and the matching unit
/// eigenvectors as rows of a `d×d` matrix.
pub fn symmetric_eigen(a: &Tensor) -> Result<(Vec<f64>, Tensor)> {
    let d = a.rows();
    if a.rank() != 2 || a.cols() != d {
        return Err(Error::Domain {
            op: "symmetric_eigen",
            detail: format!("expected a square matrix, got {:?}", a.shape()),
        });
    }
    let mut m = a.data().to_vec();
    // v holds eigenvectors as columns
    let mut v = Tensor::identity(d).into_data();

    let scale = m.iter().fold(0.0f64, |acc, x| acc.max(x.abs())).max(f64::MIN_POSITIVE);
    for _sweep in 0..100 {
        let mut off = 0.0;
        for p in 0..d {
            for q in p + 1..d {
                off += m[p * d + q] * m[p * d + q];
            }
        }
        if off.sqrt() <= 1e-15 * scale {
            break;
        }
        for p in 0..d {
            for q in p + 1..d {
                let apq = m[p * d + q];
                if apq.abs() <= 1e-300 {
                    continue;
                }
                let app = m[p * d + p];
                let aqq = m[q * d + q];
                let theta = (aqq - app) / (2.0 * apq);
                let t = theta.signum() / (theta.abs() + (theta * theta + 1.0).sqrt());
                let t = if theta == 0.0 { 1.0 } else { t };
                let c = 1.0 / (t * t + 1.0).sqrt();
                let s = t * c;
                for k in 0..d {
                    let mkp = m[k * d + p];
                    let mkq = m[k * d + q];
                    m[k * d + p] = c * mkp - s * mkq;
                    m[k * d + q] = s * mkp + c * mkq;
                }
                for k in 0..d {
                    let mpk = m[p * d + k];
                    let mqk = m[q * d + k];
                    m[p * d + k] = c * mpk - s * mqk;
                    m[q * d + k] = s * mpk + c * mqk;
                }
                for k in 0..d {
                    let vkp = v[k * d + p];
                    let vkq = v[k * d + q];
                    v[k * d + p] = c * vkp - s * vkq;
                    v[k * d + q] = s * vkp + c * vkq;
                }
            }
        }
    }

    let mut order: Vec<usize> = (0..d).collect();
    order.sort_by(|&i, &j| m[j * d + j].total_cmp(&m[i * d + i]));
    let values = order.iter().map(|&i| m[i * d + i]).collect();
    let mut vectors = Vec::with_capacity(d * d);
    for &i in &order {
        let mut col: Vec<f64> = (0..d).map(|k| v[k * d + i]).collect();
        fix_sign(&mut col);
        vectors.extend(col);
    }
    Ok((values, Tensor::matrix(d, d, vectors)?))
}

// First nonzero coordinate positive.
fn fix_sign(v: &mut [f64]) {
    if let Some(first) = v.iter().find(|x| x.abs() > 1e-12) {
        if *first < 0.0 {
            v.iter_mut().for_each(|x| *x = -*x);
        }
    }
}

/// Sample covariance (divisor `n − 1`) and column means, summed in row order.
pub fn covariance(x: &Tensor) -> Result<(Tensor, Vec<f64>)> {
    let (n, d) = (x.rows(), x.cols());
    if n < 2 {
        return Err(Error::Domain {
            op: "covariance",
            detail: format!("need at least 2 rows, got {n}"),
        });
    }
    let mut mean = vec![0.0; d];
    for i in 0..n {
        for (m, v) in mean.iter_mut().zip(x.row(i)) {
            *m += v;
        }
    }
    mean.iter_mut().for_each(|m| *m /= n as f64);
    let mut cov = vec![0.0; d * d];
    let mut c = vec![0.0; d];
    for i in 0..n {
        for (k, (ck, v)) in c.iter_mut().zip(x.row(i)).enumerate() {
            *ck = v - mean[k];
        }
        for a in 0..d {
            for b in a..d {
                cov[a * d + b] += c[a] * c[b];
            }
        }
    }
    for a in 0..d {
        for b in a..d {
            let v = cov[a * d + b] / (n - 1) as f64;
            cov[a * d + b] = v;
            cov[b * d + a] = v;
        }
    }
    Ok((Tensor::matrix(d, d, cov)?, mean))
}

/// Projects `features` (`n×d`, `n ≥ 2`, `d ≥ 2`) onto its top two principal
/// axes after mean-centering.
pub fn pca_top2(features: &Tensor) -> Result<Pca2> {
    if features.rank() != 2 || features.rows() < 2 {
        return Err(Error::Domain {
            op: "pca_top2",
            detail: format!("need at least 2 rows, got shape {:?}", features.shape()),
        });
    }
    if features.cols() < 2 {
        return Err(Error::Domain {
            op: "pca_top2",
            detail: format!("need at least 2 columns, got {}", features.cols()),
        });
    }
    let (cov, mean) = covariance(features)?;
    let (values, vectors) = symmetric_eigen(&cov)?;
    let d = features.cols();
    let components = vectors.select_rows(&[0, 1])?;
    let mut proj = Vec::with_capacity(features.rows() * 2);
    let mut centered = vec![0.0; d];
    for i in 0..features.rows() {
        for (k, (c, v)) in centered.iter_mut().zip(features.row(i)).enumerate() {
            *c = v - mean[k];
        }
        for r in 0..2 {
            let comp = components.row(r);
            proj.push(centered.iter().zip(comp).fold(0.0, |acc, (a, b)| acc + a * b));
        }
    }
    // Roundoff can push a zero eigenvalue slightly negative.
    let explained_variance = [values[0].max(0.0), values[1].max(0.0)];
    Ok(Pca2 {
        components,
        projected: Tensor::matrix(features.rows(), 2, proj)?,
        explained_variance,
        mean,
    })
}
