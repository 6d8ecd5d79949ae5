//! Client grouping: heterogeneity metrics, the random / k-means / greedy grouping
//! methods, and superclient quality measures.

mod kmeans;
mod methods;
mod metric;
mod quality;

pub use kmeans::{kmeans, KMeans, MAX_ITERATIONS};
pub use methods::{
    group_clients, is_exact_partition, mix_half, phi_greedy, phi_kmeans, phi_random,
    GroupingConfig, GroupingMethod, Superclient,
};
pub use metric::{tau, Metric, KL_EPSILON};
pub use quality::{
    balance_ratio, balance_ratio_from_counts, covered_classes, covered_classes_from_counts,
    grouping_csv, grouping_quality, superclient_counts, GroupingQuality,
};
