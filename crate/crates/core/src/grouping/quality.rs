use std::fmt::Write as _;

use super::methods::Superclient;
use crate::data::{ClientPartition, LabeledDataset};

/// Pooled label histogram of a superclient.
pub fn superclient_counts(
    sc: &Superclient,
    partition: &ClientPartition,
    dataset: &LabeledDataset,
) -> Vec<usize> {
    dataset.class_counts(
        sc.clients
            .iter()
            .flat_map(|&k| partition.indices(k).iter().copied()),
    )
}

/// `min_c N_c / max_c N_c`; zero when any class is absent.
pub fn balance_ratio_from_counts(counts: &[usize]) -> f64 {
    let max = counts.iter().copied().max().unwrap_or(0);
    let min = counts.iter().copied().min().unwrap_or(0);
    if max == 0 {
        return 0.0;
    }
    min as f64 / max as f64
}

/// Fraction of classes with at least one sample.
pub fn covered_classes_from_counts(counts: &[usize]) -> f64 {
    if counts.is_empty() {
        return 0.0;
    }
    counts.iter().filter(|&&c| c > 0).count() as f64 / counts.len() as f64
}

pub fn balance_ratio(
    sc: &Superclient,
    partition: &ClientPartition,
    dataset: &LabeledDataset,
) -> f64 {
    balance_ratio_from_counts(&superclient_counts(sc, partition, dataset))
}

pub fn covered_classes(
    sc: &Superclient,
    partition: &ClientPartition,
    dataset: &LabeledDataset,
) -> f64 {
    covered_classes_from_counts(&superclient_counts(sc, partition, dataset))
}

#[derive(Debug, Clone, PartialEq)]
pub struct GroupingQuality {
    pub balance: Vec<f64>,
    pub covered: Vec<f64>,
    pub mean_balance: f64,
    pub mean_covered: f64,
    pub mean_samples: f64,
}

pub fn grouping_quality(
    superclients: &[Superclient],
    partition: &ClientPartition,
    dataset: &LabeledDataset,
) -> GroupingQuality {
    let counts: Vec<Vec<usize>> = superclients
        .iter()
        .map(|s| superclient_counts(s, partition, dataset))
        .collect();
    let balance: Vec<f64> = counts
        .iter()
        .map(|c| balance_ratio_from_counts(c))
        .collect();
    let covered: Vec<f64> = counts
        .iter()
        .map(|c| covered_classes_from_counts(c))
        .collect();
    let n = superclients.len().max(1) as f64;
    GroupingQuality {
        mean_balance: balance.iter().sum::<f64>() / n,
        mean_covered: covered.iter().sum::<f64>() / n,
        mean_samples: superclients
            .iter()
            .map(|s| s.num_samples as f64)
            .sum::<f64>()
            / n,
        balance,
        covered,
    }
}

/// `superclient_id,members,num_samples,balance_ratio,covered_classes`, members joined
/// by `;`, followed by a `mean` summary row.
pub fn grouping_csv(superclients: &[Superclient], quality: &GroupingQuality) -> String {
    let mut out =
        String::from("superclient_id,members,num_samples,balance_ratio,covered_classes\n");
    for (i, s) in superclients.iter().enumerate() {
        let members: Vec<String> = s.clients.iter().map(usize::to_string).collect();
        let _ = writeln!(
            out,
            "{},{},{},{},{}",
            s.id,
            members.join(";"),
            s.num_samples,
            quality.balance[i],
            quality.covered[i]
        );
    }
    let _ = writeln!(
        out,
        "mean,,{},{},{}",
        quality.mean_samples, quality.mean_balance, quality.mean_covered
    );
    out
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn balance_ratio_cases() {
        assert_eq!(balance_ratio_from_counts(&[5, 5, 5]), 1.0);
        assert_eq!(balance_ratio_from_counts(&[5, 0, 5]), 0.0);
        assert_eq!(balance_ratio_from_counts(&[10, 20, 40]), 0.25);
    }

    #[test]
    fn covered_classes_cases() {
        assert_eq!(covered_classes_from_counts(&[1, 2, 3]), 1.0);
        let mut single = vec![0; 10];
        single[4] = 9;
        assert_eq!(covered_classes_from_counts(&single), 0.1);
    }

    #[test]
    fn run_value_is_mean_over_superclients() {
        let data = LabeledDataset::new(vec![0.0; 8], 1, vec![0, 1, 0, 0, 1, 1, 0, 0], 2).unwrap();
        let partition =
            ClientPartition::new(vec![vec![0, 1], vec![2, 3], vec![4, 5], vec![6, 7]], 8).unwrap();
        let sc = |id, clients: Vec<usize>| Superclient {
            id,
            num_samples: clients.len() * 2,
            clients,
            undersized: false,
        };
        let groups = vec![sc(0, vec![0]), sc(1, vec![1, 3])];
        let q = grouping_quality(&groups, &partition, &data);
        assert_eq!(q.covered, vec![1.0, 0.5]);
        assert_eq!(q.mean_covered, 0.75);
        assert_eq!(q.balance, vec![1.0, 0.0]);
        let csv = grouping_csv(&groups, &q);
        assert!(csv.starts_with("superclient_id,members,num_samples,balance_ratio,covered_classes\n0,0,2,1,1\n1,1;3,4,0,0.5\n"));
        assert!(csv.ends_with("mean,,3,0.5,0.75\n"));
    }
}
