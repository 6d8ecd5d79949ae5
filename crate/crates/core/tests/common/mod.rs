#![allow(dead_code)]

use fedseq_core::nn::{forward, Batch, ModelSpec, ParamVector};

/// Mean cross-entropy computed from logits with an explicit log-sum-exp.
pub fn cross_entropy(params: &ParamVector, spec: &ModelSpec, batch: &Batch) -> f64 {
    let logits = forward(params, spec, batch).unwrap();
    let mut total = 0.0;
    for (r, &y) in batch.labels().iter().enumerate() {
        let row = logits.row(r);
        let max = row.iter().cloned().fold(f64::NEG_INFINITY, f64::max);
        let lse = max + row.iter().map(|v| (v - max).exp()).sum::<f64>().ln();
        total += lse - row[y];
    }
    total / batch.rows() as f64
}

/// Central finite differences of [`cross_entropy`].
pub fn numeric_grad(params: &ParamVector, spec: &ModelSpec, batch: &Batch, eps: f64) -> Vec<f64> {
    let mut p = params.clone();
    (0..params.len())
        .map(|i| {
            let orig = p.values()[i];
            p.values_mut()[i] = orig + eps;
            let up = cross_entropy(&p, spec, batch);
            p.values_mut()[i] = orig - eps;
            let down = cross_entropy(&p, spec, batch);
            p.values_mut()[i] = orig;
            (up - down) / (2.0 * eps)
        })
        .collect()
}

/// `|a - n| / max(|a|, |n|, floor)`, maximised over coordinates.
pub fn max_relative_error(analytic: &[f64], numeric: &[f64], floor: f64) -> f64 {
    analytic
        .iter()
        .zip(numeric)
        .map(|(a, n)| (a - n).abs() / a.abs().max(n.abs()).max(floor))
        .fold(0.0, f64::max)
}

/// Dense ReLU network as explicit matrix products over `dims`, layer weights stored
/// row-major `out x in` followed by the biases.
pub fn mlp_logits(values: &[f64], dims: &[usize], x: &[f64]) -> Vec<f64> {
    let mut offset = 0;
    let mut h = x.to_vec();
    for l in 0..dims.len() - 1 {
        let (n_in, n_out) = (dims[l], dims[l + 1]);
        let w = &values[offset..offset + n_in * n_out];
        let b = &values[offset + n_in * n_out..offset + n_in * n_out + n_out];
        offset += n_in * n_out + n_out;
        let mut next = vec![0.0; n_out];
        for o in 0..n_out {
            next[o] = b[o];
            for i in 0..n_in {
                next[o] += w[o * n_in + i] * h[i];
            }
            if l + 2 < dims.len() {
                next[o] = next[o].max(0.0);
            }
        }
        h = next;
    }
    h
}

/// `theta = sum_k (n_k / n) theta_k`.
pub fn fedavg_oracle(thetas: &[Vec<f64>], sizes: &[usize]) -> Vec<f64> {
    let n: usize = sizes.iter().sum();
    let mut out = vec![0.0; thetas[0].len()];
    for (t, &nk) in thetas.iter().zip(sizes) {
        for (o, v) in out.iter_mut().zip(t) {
            *o += nk as f64 / n as f64 * v;
        }
    }
    out
}

/// `theta = (1/|P|) sum_k theta_k - h`, `h = h_prev + (1/m) sum_k (theta_k - theta_prev)`.
pub fn feddyn_oracle(
    thetas: &[Vec<f64>],
    prev: &[f64],
    h_prev: &[f64],
    m: usize,
) -> (Vec<f64>, Vec<f64>) {
    let p = thetas.len() as f64;
    let d = prev.len();
    let mut h = h_prev.to_vec();
    let mut mean = vec![0.0; d];
    for t in thetas {
        for i in 0..d {
            mean[i] += t[i] / p;
            h[i] += (t[i] - prev[i]) / m as f64;
        }
    }
    let theta = (0..d).map(|i| mean[i] - h[i]).collect();
    (theta, h)
}

pub fn max_abs_diff(a: &[f64], b: &[f64]) -> f64 {
    assert_eq!(a.len(), b.len());
    a.iter()
        .zip(b)
        .map(|(x, y)| (x - y).abs())
        .fold(0.0, f64::max)
}

/// α=0 instance with K=100 clients of 10 samples over 10 classes, plus oracle estimates.
pub fn single_class_instance(
    seed: u64,
) -> (
    fedseq_core::data::LabeledDataset,
    fedseq_core::data::ClientPartition,
    fedseq_core::approximator::DistributionEstimate,
) {
    let data = fedseq_core::data::synth_dataset(10, 100, 2, 1.0, seed).unwrap();
    let partition = fedseq_core::data::dirichlet_partition(&data, 100, 0.0, seed).unwrap();
    let est = fedseq_core::approximator::oracle_estimate(&partition, &data);
    (data, partition, est)
}
