use std::io::Write as _;

use fedseq_core::data::{
    build_exemplar_set, dirichlet_partition, label_entropy, load_cifar10_batch, synth_dataset,
    LabeledDataset, CIFAR10_MEAN, CIFAR10_STD, RECORD_BYTES,
};

fn mean_entropy(data: &LabeledDataset, alpha: f64, seeds: std::ops::Range<u64>) -> f64 {
    let mut total = 0.0;
    let mut count = 0;
    for seed in seeds {
        let p = dirichlet_partition(data, 20, alpha, seed).unwrap();
        for h in p.histograms(data) {
            total += label_entropy(&h);
            count += 1;
        }
    }
    total / count as f64
}

#[test]
fn alpha_zero_gives_one_class_per_client() {
    let data = synth_dataset(10, 40, 3, 2.0, 0).unwrap();
    for seed in 0..5 {
        let p = dirichlet_partition(&data, 10, 0.0, seed).unwrap();
        for h in p.histograms(&data) {
            assert_eq!(h.iter().filter(|&&c| c > 0).count(), 1);
        }
    }
}

#[test]
fn large_alpha_is_near_uniform() {
    let data = synth_dataset(10, 1000, 2, 1.0, 1).unwrap();
    for seed in 0..20 {
        let p = dirichlet_partition(&data, 10, 1000.0, seed).unwrap();
        for h in p.histograms(&data) {
            let n: usize = h.iter().sum();
            assert!(n >= 1000);
            for &c in &h {
                assert!(
                    (c as f64 / n as f64 - 0.1).abs() <= 0.05,
                    "seed {seed}: {h:?}"
                );
            }
        }
    }
}

#[test]
fn entropy_increases_with_alpha() {
    let data = synth_dataset(10, 100, 2, 1.0, 2).unwrap();
    let e: Vec<f64> = [0.0, 0.2, 0.5, 1000.0]
        .iter()
        .map(|&a| mean_entropy(&data, a, 0..10))
        .collect();
    assert_eq!(e[0], 0.0);
    assert!(e.windows(2).all(|w| w[0] < w[1]), "{e:?}");
}

#[test]
fn partitions_are_disjoint_and_in_range() {
    let data = synth_dataset(5, 30, 2, 1.0, 3).unwrap();
    for k in [1, 3, 10, 25] {
        for alpha in [0.0, 0.05, 0.5, 10.0] {
            for seed in 0..4 {
                let p = dirichlet_partition(&data, k, alpha, seed).unwrap();
                let mut all: Vec<usize> = p.clients().concat();
                assert!(p.sizes().iter().all(|&s| s >= 1));
                all.sort_unstable();
                let len = all.len();
                all.dedup();
                assert_eq!(all.len(), len);
                assert!(len <= data.len() && all.iter().all(|&i| i < data.len()));
            }
        }
    }
}

#[test]
fn exemplars_are_excluded_from_evaluation() {
    let test = synth_dataset(4, 20, 3, 2.0, 5).unwrap();
    let ex = build_exemplar_set(&test, 3, 1, "test").unwrap();
    let eval = test.without(&ex.source_indices).unwrap();
    assert_eq!(eval.len(), test.len() - 12);
    for &i in &ex.source_indices {
        let row = test.row(i);
        assert!((0..eval.len()).all(|j| eval.row(j) != row));
    }
}

#[test]
fn cifar_first_label_is_first_byte() {
    let dir = tempfile::tempdir().unwrap();
    let path = dir.path().join("data_batch_1.bin");
    let mut bytes = Vec::new();
    for r in 0..3u8 {
        bytes.push(7 - r);
        bytes.extend((0..RECORD_BYTES - 1).map(|i| ((i + r as usize) % 256) as u8));
    }
    std::fs::File::create(&path)
        .unwrap()
        .write_all(&bytes)
        .unwrap();
    let raw = std::fs::read(&path).unwrap();
    let (pixels, labels) = load_cifar10_batch(&path).unwrap();
    assert_eq!(labels[0], raw[0] as usize);
    assert_eq!(labels, vec![7, 6, 5]);
    // first pixel of the green plane of record 0
    let expected = (raw[1 + 1024] as f64 / 255.0 - CIFAR10_MEAN[1]) / CIFAR10_STD[1];
    assert!((pixels[1024] - expected).abs() < 1e-12);
}
