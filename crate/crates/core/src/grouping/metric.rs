use serde::{Deserialize, Serialize};

use crate::approximator::EstimateKind;
use crate::error::{Error, Result};

/// Additive smoothing applied to both arguments of the KL divergence.
pub const KL_EPSILON: f64 = 1e-9;

/// Distance / heterogeneity measure between two distribution estimates.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash, Serialize, Deserialize)]
pub enum Metric {
    /// `1 - cos(a, b)`
    Cosine,
    Euclidean,
    /// Earth mover's distance along the class axis (confidence vectors) or between the
    /// sorted coordinates (embeddings).
    Wasserstein,
    /// `KL(a || b)` after smoothing. Confidence vectors only.
    Kl,
    /// Gini impurity of the even mixture of `a` and `b`. Confidence vectors only.
    Gini,
}

impl Metric {
    pub const ALL: [Metric; 5] = [
        Metric::Cosine,
        Metric::Euclidean,
        Metric::Wasserstein,
        Metric::Kl,
        Metric::Gini,
    ];

    pub fn name(self) -> &'static str {
        match self {
            Metric::Cosine => "cosine",
            Metric::Euclidean => "euclidean",
            Metric::Wasserstein => "wasserstein",
            Metric::Kl => "kl",
            Metric::Gini => "gini",
        }
    }

    pub fn supports(self, kind: EstimateKind) -> bool {
        !matches!(
            (self, kind),
            (Metric::Kl | Metric::Gini, EstimateKind::Embedding)
        )
    }
}

impl std::str::FromStr for Metric {
    type Err = Error;

    fn from_str(s: &str) -> Result<Self> {
        Metric::ALL
            .into_iter()
            .find(|m| m.name() == s)
            .ok_or_else(|| Error::invalid(format!("unknown metric `{s}`")))
    }
}

fn smoothed(v: &[f64]) -> Vec<f64> {
    let total: f64 = v.iter().sum::<f64>() + KL_EPSILON * v.len() as f64;
    v.iter().map(|x| (x + KL_EPSILON) / total).collect()
}

pub fn tau(a: &[f64], b: &[f64], metric: Metric, kind: EstimateKind) -> Result<f64> {
    if a.len() != b.len() || a.is_empty() {
        return Err(Error::invalid(format!(
            "estimate lengths differ or are empty: {} vs {}",
            a.len(),
            b.len()
        )));
    }
    if !metric.supports(kind) {
        return Err(Error::invalid(format!(
            "metric {} requires confidence vectors",
            metric.name()
        )));
    }
    Ok(match metric {
        Metric::Cosine => {
            let na = a.iter().map(|x| x * x).sum::<f64>().sqrt();
            let nb = b.iter().map(|x| x * x).sum::<f64>().sqrt();
            if na == 0.0 {
                return Err(Error::ZeroNorm { index: 0 });
            }
            if nb == 0.0 {
                return Err(Error::ZeroNorm { index: 1 });
            }
            let dot: f64 = a.iter().zip(b).map(|(x, y)| x * y).sum();
            1.0 - dot / (na * nb)
        }
        Metric::Euclidean => a
            .iter()
            .zip(b)
            .map(|(x, y)| (x - y).powi(2))
            .sum::<f64>()
            .sqrt(),
        Metric::Wasserstein => match kind {
            EstimateKind::Confidence => {
                let (mut ca, mut cb, mut total) = (0.0, 0.0, 0.0);
                for (x, y) in a.iter().zip(b) {
                    ca += x;
                    cb += y;
                    total += (ca - cb).abs();
                }
                total
            }
            EstimateKind::Embedding => {
                let mut sa = a.to_vec();
                let mut sb = b.to_vec();
                sa.sort_by(f64::total_cmp);
                sb.sort_by(f64::total_cmp);
                sa.iter().zip(&sb).map(|(x, y)| (x - y).abs()).sum::<f64>() / a.len() as f64
            }
        },
        Metric::Kl => {
            let pa = smoothed(a);
            let pb = smoothed(b);
            pa.iter()
                .zip(&pb)
                .map(|(p, q)| p * (p / q).ln())
                .sum::<f64>()
                .max(0.0)
        }
        Metric::Gini => {
            1.0 - a
                .iter()
                .zip(b)
                .map(|(x, y)| (0.5 * x + 0.5 * y).powi(2))
                .sum::<f64>()
        }
    })
}

#[cfg(test)]
mod tests {
    use super::*;

    const C: EstimateKind = EstimateKind::Confidence;

    #[test]
    fn identical_inputs() {
        let a = [0.2, 0.5, 0.3];
        for m in [Metric::Kl, Metric::Wasserstein, Metric::Euclidean] {
            assert_eq!(tau(&a, &a, m, C).unwrap(), 0.0, "{m:?}");
        }
        assert!(tau(&a, &a, Metric::Cosine, C).unwrap().abs() < 1e-15);
    }

    #[test]
    fn uniform_mixture_gini() {
        let u = [0.25; 4];
        assert!((tau(&u, &u, Metric::Gini, C).unwrap() - 0.75).abs() < 1e-15);
    }

    #[test]
    fn opposite_one_hots() {
        let a = [1.0, 0.0];
        let b = [0.0, 1.0];
        assert_eq!(tau(&a, &b, Metric::Wasserstein, C).unwrap(), 1.0);
        assert!((tau(&a, &b, Metric::Euclidean, C).unwrap() - 2f64.sqrt()).abs() < 1e-15);
        assert_eq!(tau(&a, &b, Metric::Cosine, C).unwrap(), 1.0);
    }

    #[test]
    fn errors() {
        assert!(tau(&[0.0, 0.0], &[1.0, 0.0], Metric::Cosine, C).is_err());
        assert!(tau(&[1.0], &[1.0, 0.0], Metric::Euclidean, C).is_err());
        assert!(tau(
            &[1.0, 2.0],
            &[1.0, 0.0],
            Metric::Kl,
            EstimateKind::Embedding
        )
        .is_err());
    }

    #[test]
    fn embedding_wasserstein_ignores_coordinate_order() {
        let e = EstimateKind::Embedding;
        let a = [3.0, -1.0, 2.0];
        let b = [2.0, 3.0, -1.0];
        assert_eq!(tau(&a, &b, Metric::Wasserstein, e).unwrap(), 0.0);
        // sorted (-1,2,3) vs (0,0,3): |−1|+|2|+0 over 3
        let c = [0.0, 3.0, 0.0];
        assert!((tau(&a, &c, Metric::Wasserstein, e).unwrap() - 1.0).abs() < 1e-15);
    }
}
