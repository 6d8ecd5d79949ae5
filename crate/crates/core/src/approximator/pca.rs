use nalgebra::{DMatrix, DVector, SymmetricEigen};

use crate::error::{Error, Result};

/// Principal-component projection of a set of row vectors.
#[derive(Debug, Clone, PartialEq)]
pub struct Pca {
    /// Projected rows, one per input row.
    pub embedding: Vec<Vec<f64>>,
    /// Unit loading vectors of the kept components, each of input length.
    pub components: Vec<Vec<f64>>,
    /// Variance captured by each kept component, descending.
    pub variances: Vec<f64>,
    pub total_variance: f64,
    pub mean: Vec<f64>,
    pub degenerate: bool,
}

const RELATIVE_EIGEN_TOL: f64 = 1e-12;
const COVERAGE_SLACK: f64 = 1e-10;

/// Mean-centres `rows` and keeps the fewest leading components whose cumulative
/// explained variance is at least `target` of the total.
///
/// Eigenvectors come from the covariance matrix when the row length does not exceed the
/// row count, and from the Gram matrix otherwise (same spectrum, smaller problem).
/// Each loading vector is sign-fixed so its first nonzero coordinate is positive.
pub fn pca(rows: &[Vec<f64>], target: f64) -> Result<Pca> {
    if !(target > 0.0 && target <= 1.0) {
        return Err(Error::invalid(format!(
            "explained variance must be in (0,1], got {target}"
        )));
    }
    let n = rows.len();
    if n < 2 {
        return Err(Error::invalid("PCA needs at least two rows"));
    }
    let d = rows[0].len();
    if d == 0 || rows.iter().any(|r| r.len() != d) {
        return Err(Error::invalid("PCA rows must share a positive length"));
    }
    let mut mean = vec![0.0; d];
    for r in rows {
        for (m, v) in mean.iter_mut().zip(r) {
            *m += v;
        }
    }
    mean.iter_mut().for_each(|m| *m /= n as f64);
    let x = DMatrix::from_fn(n, d, |i, j| rows[i][j] - mean[j]);
    let scale = 1.0 / (n as f64 - 1.0);
    let total_variance = x.iter().map(|v| v * v).sum::<f64>() * scale;

    if total_variance == 0.0 {
        return Ok(Pca {
            embedding: vec![vec![0.0]; n],
            components: vec![],
            variances: vec![],
            total_variance,
            mean,
            degenerate: true,
        });
    }

    // (eigenvalue, unit loading vector in input space)
    let mut pairs: Vec<(f64, DVector<f64>)> = if d <= n {
        let cov = x.transpose() * &x * scale;
        let eig = SymmetricEigen::new(cov);
        (0..d)
            .map(|i| (eig.eigenvalues[i], eig.eigenvectors.column(i).into_owned()))
            .collect()
    } else {
        let gram = &x * x.transpose() * scale;
        let eig = SymmetricEigen::new(gram);
        (0..n)
            .filter_map(|i| {
                let v = x.transpose() * eig.eigenvectors.column(i);
                let norm = v.norm();
                (norm > 0.0).then(|| (eig.eigenvalues[i], v / norm))
            })
            .collect()
    };
    pairs.sort_by(|a, b| b.0.total_cmp(&a.0));
    let floor = pairs.first().map_or(0.0, |p| p.0) * RELATIVE_EIGEN_TOL;
    pairs.retain(|p| p.0 > floor);

    let goal = target * total_variance * (1.0 - COVERAGE_SLACK);
    let mut keep = 0;
    let mut acc = 0.0;
    for (lambda, _) in &pairs {
        keep += 1;
        acc += lambda;
        if acc >= goal {
            break;
        }
    }
    pairs.truncate(keep);

    let mut components = Vec::with_capacity(keep);
    let mut variances = Vec::with_capacity(keep);
    for (lambda, mut v) in pairs {
        if let Some(first) = v.iter().find(|c| c.abs() > 0.0) {
            if *first < 0.0 {
                v.neg_mut();
            }
        }
        variances.push(lambda);
        components.push(v);
    }
    let embedding = (0..n)
        .map(|i| {
            let row = x.row(i);
            components.iter().map(|v| row.dot(&v.transpose())).collect()
        })
        .collect();
    Ok(Pca {
        embedding,
        components: components
            .into_iter()
            .map(|v| v.iter().copied().collect())
            .collect(),
        variances,
        total_variance,
        mean,
        degenerate: false,
    })
}
