mod common;

use fedseq_core::approximator::{DistributionEstimate, EstimateKind};
use fedseq_core::grouping::{
    grouping_quality, is_exact_partition, phi_greedy, phi_kmeans, phi_random, GroupingConfig,
    GroupingMethod, Metric,
};

fn config(method: GroupingMethod, metric: Metric, seed: u64) -> GroupingConfig {
    GroupingConfig {
        min_samples: 100,
        max_clients: 11,
        method,
        metric,
        seed,
    }
}

#[test]
fn random_grouping_cuts_by_size() {
    let sizes = vec![100; 10];
    let mut cfg = config(GroupingMethod::Random, Metric::Kl, 1);
    cfg.min_samples = 300;
    let sc = phi_random(&sizes, &cfg).unwrap();
    assert_eq!(
        sc.iter().map(|s| s.clients.len()).collect::<Vec<_>>(),
        vec![3, 3, 3, 1]
    );
    assert!(sc[3].undersized && !sc[0].undersized);
    assert!(is_exact_partition(&sc, 10));

    cfg.max_clients = 1;
    let sc = phi_random(&sizes, &cfg).unwrap();
    assert_eq!(sc.len(), 10);
    assert!(sc.iter().all(|s| s.clients.len() == 1));
}

#[test]
fn greedy_pairs_the_only_candidate() {
    let est = DistributionEstimate {
        kind: EstimateKind::Confidence,
        rows: vec![vec![1.0, 0.0], vec![0.0, 1.0]],
        degenerate: false,
    };
    let mut cfg = config(GroupingMethod::Greedy, Metric::Kl, 0);
    cfg.max_clients = 2;
    cfg.min_samples = 1000;
    let sc = phi_greedy(&est, &[5, 5], &cfg).unwrap();
    assert_eq!(sc.len(), 1);
    assert_eq!(sc[0].num_samples, 10);
}

#[test]
fn kmeans_superclients_cover_every_class() {
    for seed in 0..10 {
        let (data, partition, est) = common::single_class_instance(seed);
        let sizes = partition.sizes();
        let sc = phi_kmeans(
            &est,
            &sizes,
            10,
            &config(GroupingMethod::KMeans, Metric::Kl, seed),
        )
        .unwrap();
        assert!(is_exact_partition(&sc, 100));
        let q = grouping_quality(&sc, &partition, &data);
        assert_eq!(q.mean_covered, 1.0, "seed {seed}");
    }
}

#[test]
fn identical_estimates_still_partition() {
    let est = DistributionEstimate {
        kind: EstimateKind::Confidence,
        rows: vec![vec![0.5, 0.5]; 12],
        degenerate: false,
    };
    let sizes = vec![10; 12];
    let sc = phi_kmeans(
        &est,
        &sizes,
        2,
        &config(GroupingMethod::KMeans, Metric::Kl, 3),
    )
    .unwrap();
    assert!(is_exact_partition(&sc, 12));
    assert!(sc.iter().all(|s| s.clients.len() <= 10));
}

#[test]
fn heterogeneity_seeking_beats_random() {
    let (mut greedy_wins, mut ordered) = (0, 0);
    for seed in 0..10 {
        let (data, partition, est) = common::single_class_instance(seed);
        let sizes = partition.sizes();
        let balance = |sc: &[_]| grouping_quality(sc, &partition, &data).mean_balance;
        let random = balance(
            &phi_random(&sizes, &config(GroupingMethod::Random, Metric::Kl, seed)).unwrap(),
        );
        let cosine = balance(
            &phi_greedy(
                &est,
                &sizes,
                &config(GroupingMethod::Greedy, Metric::Cosine, seed),
            )
            .unwrap(),
        );
        let kl = balance(
            &phi_greedy(
                &est,
                &sizes,
                &config(GroupingMethod::Greedy, Metric::Kl, seed),
            )
            .unwrap(),
        );
        let km = balance(
            &phi_kmeans(
                &est,
                &sizes,
                10,
                &config(GroupingMethod::KMeans, Metric::Kl, seed),
            )
            .unwrap(),
        );
        if cosine > random {
            greedy_wins += 1;
        }
        if kl >= km && km >= random {
            ordered += 1;
        }
    }
    assert!(
        greedy_wins >= 8,
        "greedy+cosine beat random in {greedy_wins}/10 seeds"
    );
    assert!(
        ordered >= 8,
        "greedy >= kmeans >= random in {ordered}/10 seeds"
    );
}
