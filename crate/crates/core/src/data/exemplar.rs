use rand::seq::SliceRandom;

use super::dataset::LabeledDataset;
use crate::error::{Error, Result};
use crate::rng::{self, Stream};

/// Server-side probe set: exactly `per_class` samples of every class.
#[derive(Debug, Clone, PartialEq)]
pub struct ExemplarSet {
    pub data: LabeledDataset,
    /// Rows of the source split that were retained, class-major.
    pub source_indices: Vec<usize>,
    pub per_class: usize,
    pub source: String,
}

impl ExemplarSet {
    /// Rows of this set belonging to `class`.
    pub fn class_rows(&self, class: usize) -> std::ops::Range<usize> {
        class * self.per_class..(class + 1) * self.per_class
    }
}

pub fn build_exemplar_set(
    split: &LabeledDataset,
    per_class: usize,
    seed: u64,
    source: &str,
) -> Result<ExemplarSet> {
    if per_class == 0 {
        return Err(Error::invalid("exemplar count per class must be >= 1"));
    }
    let mut rng = rng::stream(seed, Stream::Exemplar, &[]);
    let mut chosen = Vec::with_capacity(per_class * split.num_classes());
    for (class, mut pool) in split.indices_by_class().into_iter().enumerate() {
        if pool.len() < per_class {
            return Err(Error::Data(format!(
                "class {class} has {} samples, {per_class} exemplars requested",
                pool.len()
            )));
        }
        pool.shuffle(&mut rng);
        let mut picked = pool[..per_class].to_vec();
        picked.sort_unstable();
        chosen.extend(picked);
    }
    Ok(ExemplarSet {
        data: split.subset(&chosen)?,
        source_indices: chosen,
        per_class,
        source: source.to_string(),
    })
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::data::synth_dataset;

    #[test]
    fn ten_per_class() {
        let test = synth_dataset(10, 30, 4, 3.0, 2).unwrap();
        let ex = build_exemplar_set(&test, 10, 5, "test").unwrap();
        assert_eq!(ex.data.len(), 100);
        assert!(ex.data.class_counts(0..100).iter().all(|&c| c == 10));
        for c in 0..10 {
            assert!(ex.data.labels()[ex.class_rows(c)].iter().all(|&y| y == c));
        }
    }

    #[test]
    fn one_per_class_and_determinism() {
        let test = synth_dataset(3, 5, 2, 3.0, 2).unwrap();
        let a = build_exemplar_set(&test, 1, 8, "test").unwrap();
        assert_eq!(a.data.len(), 3);
        assert_eq!(a, build_exemplar_set(&test, 1, 8, "test").unwrap());
    }

    #[test]
    fn too_few_samples_errors() {
        let test = synth_dataset(3, 5, 2, 3.0, 2).unwrap();
        assert!(build_exemplar_set(&test, 6, 1, "test").is_err());
    }
}
