use rand_distr::{Distribution, StandardNormal};

use super::dataset::LabeledDataset;
use crate::error::{Error, Result};
use crate::rng::{self, Stream};

/// Unit-norm class directions. Axis vectors when `dim >= num_classes`, otherwise
/// Gaussian directions from a fixed stream, so every split shares the same means.
fn class_directions(num_classes: usize, dim: usize) -> Vec<Vec<f64>> {
    if dim >= num_classes {
        return (0..num_classes)
            .map(|c| {
                let mut v = vec![0.0; dim];
                v[c] = 1.0;
                v
            })
            .collect();
    }
    let mut rng = rng::stream(0, Stream::Synth, &[num_classes as u64, dim as u64]);
    (0..num_classes)
        .map(|_| {
            let mut v: Vec<f64> = (0..dim).map(|_| StandardNormal.sample(&mut rng)).collect();
            let norm = v
                .iter()
                .map(|x| x * x)
                .sum::<f64>()
                .sqrt()
                .max(f64::MIN_POSITIVE);
            v.iter_mut().for_each(|x| *x /= norm);
            v
        })
        .collect()
}

/// Gaussian blobs with identity covariance, class `c` centred at
/// `separation * direction_c`. Rows are ordered by class.
pub fn synth_dataset(
    num_classes: usize,
    per_class: usize,
    dim: usize,
    separation: f64,
    seed: u64,
) -> Result<LabeledDataset> {
    if !(separation > 0.0) {
        return Err(Error::invalid("separation must be positive"));
    }
    if per_class == 0 || dim == 0 {
        return Err(Error::invalid("per_class and dim must be positive"));
    }
    let means = class_directions(num_classes, dim);
    let mut rng = rng::stream(seed, Stream::Synth, &[]);
    let n = num_classes * per_class;
    let mut inputs = Vec::with_capacity(n * dim);
    let mut labels = Vec::with_capacity(n);
    for (c, mean) in means.iter().enumerate() {
        for _ in 0..per_class {
            for m in mean {
                let z: f64 = StandardNormal.sample(&mut rng);
                inputs.push(separation * m + z);
            }
            labels.push(c);
        }
    }
    LabeledDataset::new(inputs, dim, labels, num_classes)
}

/// Train and test splits drawn from the same class means with independent noise.
pub fn synth_split(
    num_classes: usize,
    train_per_class: usize,
    test_per_class: usize,
    dim: usize,
    separation: f64,
    seed: u64,
) -> Result<(LabeledDataset, LabeledDataset)> {
    let train_seed = rng::derive_seed(seed, Stream::Synth, &[0]);
    let test_seed = rng::derive_seed(seed, Stream::Synth, &[1]);
    Ok((
        synth_dataset(num_classes, train_per_class, dim, separation, train_seed)?,
        synth_dataset(num_classes, test_per_class, dim, separation, test_seed)?,
    ))
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn size_and_determinism() {
        let a = synth_dataset(4, 7, 3, 2.0, 11).unwrap();
        assert_eq!(a.len(), 28);
        assert_eq!(a, synth_dataset(4, 7, 3, 2.0, 11).unwrap());
        assert_ne!(a, synth_dataset(4, 7, 3, 2.0, 12).unwrap());
    }

    #[test]
    fn low_dim_directions_are_unit_and_shared() {
        let d = class_directions(5, 2);
        for v in &d {
            assert!((v.iter().map(|x| x * x).sum::<f64>() - 1.0).abs() < 1e-12);
        }
        assert_eq!(d, class_directions(5, 2));
    }

    #[test]
    fn rejects_nonpositive_separation() {
        assert!(synth_dataset(2, 3, 2, 0.0, 1).is_err());
    }
}
