use rand::Rng as _;
use serde::{Deserialize, Serialize};

use super::params::{LayerSlot, ParamVector, Role};
use crate::error::{Error, Result};
use crate::rng::{self, Stream};

const KERNEL: usize = 3;
const POOL: usize = 2;

#[derive(Debug, Clone, PartialEq, Eq, Serialize, Deserialize)]
pub enum Architecture {
    /// Dense layers only. The first hidden layer is the feature extractor, the rest
    /// form the classifier.
    Mlp,
    /// One 3x3 valid convolution + ReLU + 2x2 max-pool as the feature extractor,
    /// followed by dense classifier layers.
    SmallCnn {
        channels: usize,
        height: usize,
        width: usize,
        filters: usize,
    },
}

#[derive(Debug, Clone, PartialEq, Eq, Serialize, Deserialize)]
pub struct ModelSpec {
    pub input_dim: usize,
    pub hidden: Vec<usize>,
    pub num_classes: usize,
    pub arch: Architecture,
}

impl ModelSpec {
    pub fn mlp(input_dim: usize, hidden: Vec<usize>, num_classes: usize) -> Result<Self> {
        let spec = Self {
            input_dim,
            hidden,
            num_classes,
            arch: Architecture::Mlp,
        };
        spec.validate()?;
        Ok(spec)
    }

    pub fn small_cnn(
        (channels, height, width): (usize, usize, usize),
        filters: usize,
        hidden: Vec<usize>,
        num_classes: usize,
    ) -> Result<Self> {
        let spec = Self {
            input_dim: channels * height * width,
            hidden,
            num_classes,
            arch: Architecture::SmallCnn {
                channels,
                height,
                width,
                filters,
            },
        };
        spec.validate()?;
        Ok(spec)
    }

    pub fn validate(&self) -> Result<()> {
        if self.num_classes < 2 {
            return Err(Error::invalid("num_classes must be at least 2"));
        }
        if self.input_dim == 0 || self.hidden.contains(&0) {
            return Err(Error::invalid("layer widths must be positive"));
        }
        if let Architecture::SmallCnn {
            channels,
            height,
            width,
            filters,
        } = self.arch
        {
            if channels * height * width != self.input_dim {
                return Err(Error::invalid("input_dim must equal channels*height*width"));
            }
            if height < KERNEL + 1 || width < KERNEL + 1 || filters == 0 {
                return Err(Error::invalid(
                    "image too small for a 3x3 conv and 2x2 pool",
                ));
            }
        }
        Ok(())
    }

    /// Conv geometry: (channels, height, width, filters, conv_h, conv_w, pooled_h, pooled_w).
    fn conv_geometry(&self) -> Option<ConvGeometry> {
        match self.arch {
            Architecture::Mlp => None,
            Architecture::SmallCnn {
                channels,
                height,
                width,
                filters,
            } => {
                let conv_h = height - KERNEL + 1;
                let conv_w = width - KERNEL + 1;
                Some(ConvGeometry {
                    channels,
                    height,
                    width,
                    filters,
                    conv_h,
                    conv_w,
                    pool_h: conv_h / POOL,
                    pool_w: conv_w / POOL,
                })
            }
        }
    }

    /// Widths of the dense stack, input first.
    fn dense_dims(&self) -> Vec<usize> {
        let first = match self.conv_geometry() {
            None => self.input_dim,
            Some(g) => g.filters * g.pool_h * g.pool_w,
        };
        let mut dims = Vec::with_capacity(self.hidden.len() + 2);
        dims.push(first);
        dims.extend(&self.hidden);
        dims.push(self.num_classes);
        dims
    }

    pub fn layout(&self) -> Vec<LayerSlot> {
        let mut slots = Vec::new();
        let mut offset = 0;
        let mut push = |name: String, role: Role, len: usize| {
            slots.push(LayerSlot {
                name,
                role,
                offset,
                len,
            });
            offset += len;
        };
        let conv = self.conv_geometry();
        if let Some(g) = conv {
            push(
                "conv1".into(),
                Role::Feature,
                g.filters * g.channels * KERNEL * KERNEL + g.filters,
            );
        }
        let dims = self.dense_dims();
        for (i, w) in dims.windows(2).enumerate() {
            let role = if conv.is_none() && i == 0 && dims.len() > 2 {
                Role::Feature
            } else {
                Role::Classifier
            };
            push(format!("fc{}", i + 1), role, w[0] * w[1] + w[1]);
        }
        slots
    }

    pub fn num_params(&self) -> usize {
        self.layout().iter().map(|s| s.len).sum()
    }

    pub fn zeros(&self) -> ParamVector {
        ParamVector::zeros(self.layout()).expect("spec layouts are valid")
    }

    /// Uniform in [-1/sqrt(fan_in), 1/sqrt(fan_in)] per layer, weights and biases alike.
    pub fn init(&self, seed: u64) -> ParamVector {
        let mut rng = rng::stream(seed, Stream::Init, &[]);
        let mut params = self.zeros();
        let fan_ins = self.fan_ins();
        for (i, fan_in) in fan_ins.into_iter().enumerate() {
            let bound = 1.0 / (fan_in as f64).sqrt();
            for v in params.layer_mut(i) {
                *v = rng.random_range(-bound..bound);
            }
        }
        params
    }

    fn fan_ins(&self) -> Vec<usize> {
        let mut fans = Vec::new();
        if let Some(g) = self.conv_geometry() {
            fans.push(g.channels * KERNEL * KERNEL);
        }
        let dims = self.dense_dims();
        fans.extend(dims[..dims.len() - 1].iter().copied());
        fans
    }

    fn check_params(&self, params: &ParamVector) -> Result<()> {
        let expected = self.layout();
        if params.layout() == expected.as_slice() {
            return Ok(());
        }
        for (i, slot) in expected.iter().enumerate() {
            match params.layout().get(i) {
                Some(found) if found == slot => continue,
                Some(found) => {
                    return Err(Error::Shape {
                        layer: slot.name.clone(),
                        expected: slot.len,
                        found: found.len,
                    })
                }
                None => {
                    return Err(Error::Shape {
                        layer: slot.name.clone(),
                        expected: slot.len,
                        found: 0,
                    })
                }
            }
        }
        let extra = &params.layout()[expected.len()];
        Err(Error::Shape {
            layer: extra.name.clone(),
            expected: 0,
            found: extra.len,
        })
    }
}

#[derive(Debug, Clone, Copy)]
struct ConvGeometry {
    channels: usize,
    height: usize,
    width: usize,
    filters: usize,
    conv_h: usize,
    conv_w: usize,
    pool_h: usize,
    pool_w: usize,
}

/// A row-major mini-batch.
#[derive(Debug, Clone, PartialEq)]
pub struct Batch {
    inputs: Vec<f64>,
    dim: usize,
    labels: Vec<usize>,
}

impl Batch {
    pub fn new(inputs: Vec<f64>, dim: usize, labels: Vec<usize>) -> Result<Self> {
        if labels.is_empty() {
            return Err(Error::invalid("batch must contain at least one row"));
        }
        if dim == 0 || inputs.len() != dim * labels.len() {
            return Err(Error::Shape {
                layer: "input".into(),
                expected: dim * labels.len(),
                found: inputs.len(),
            });
        }
        Ok(Self {
            inputs,
            dim,
            labels,
        })
    }

    pub fn rows(&self) -> usize {
        self.labels.len()
    }

    pub fn dim(&self) -> usize {
        self.dim
    }

    pub fn inputs(&self) -> &[f64] {
        &self.inputs
    }

    pub fn labels(&self) -> &[usize] {
        &self.labels
    }

    pub fn row(&self, i: usize) -> &[f64] {
        &self.inputs[i * self.dim..(i + 1) * self.dim]
    }
}

/// Row-major logits, `rows x num_classes`.
#[derive(Debug, Clone, PartialEq)]
pub struct Logits {
    pub values: Vec<f64>,
    pub rows: usize,
    pub cols: usize,
}

impl Logits {
    pub fn row(&self, i: usize) -> &[f64] {
        &self.values[i * self.cols..(i + 1) * self.cols]
    }

    /// Row-wise softmax probabilities.
    pub fn softmax(&self) -> Vec<f64> {
        let mut out = self.values.clone();
        for row in out.chunks_mut(self.cols) {
            softmax_in_place(row);
        }
        out
    }

    /// Argmax per row, ties to the lowest class index.
    pub fn argmax(&self) -> Vec<usize> {
        (0..self.rows)
            .map(|i| {
                let row = self.row(i);
                let mut best = 0;
                for (c, &v) in row.iter().enumerate().skip(1) {
                    if v > row[best] {
                        best = c;
                    }
                }
                best
            })
            .collect()
    }
}

pub fn softmax_in_place(row: &mut [f64]) {
    let max = row.iter().copied().fold(f64::NEG_INFINITY, f64::max);
    let mut sum = 0.0;
    for v in row.iter_mut() {
        *v = (*v - max).exp();
        sum += *v;
    }
    for v in row.iter_mut() {
        *v /= sum;
    }
}

struct ConvTrace {
    /// Pre-activation conv output, `rows x filters x conv_h x conv_w`.
    pre: Vec<f64>,
    /// Flat index into `pre` selected by each pooled cell.
    argmax: Vec<usize>,
}

struct Trace {
    conv: Option<ConvTrace>,
    /// Input of each dense layer (post-activation of the previous one).
    dense_inputs: Vec<Vec<f64>>,
    logits: Vec<f64>,
}

fn check_finite(values: &[f64], layer: usize) -> Result<()> {
    if values.iter().all(|v| v.is_finite()) {
        Ok(())
    } else {
        Err(Error::Overflow { layer })
    }
}

fn dense_forward(w: &[f64], input: &[f64], rows: usize, n_in: usize, n_out: usize) -> Vec<f64> {
    let (weights, bias) = w.split_at(n_in * n_out);
    let mut out = Vec::with_capacity(rows * n_out);
    for r in 0..rows {
        let x = &input[r * n_in..(r + 1) * n_in];
        for o in 0..n_out {
            let row = &weights[o * n_in..(o + 1) * n_in];
            let mut acc = bias[o];
            for (a, b) in row.iter().zip(x) {
                acc += a * b;
            }
            out.push(acc);
        }
    }
    out
}

fn conv_forward(g: &ConvGeometry, w: &[f64], input: &[f64], rows: usize) -> (ConvTrace, Vec<f64>) {
    let k2 = KERNEL * KERNEL;
    let (kernels, bias) = w.split_at(g.filters * g.channels * k2);
    let conv_size = g.conv_h * g.conv_w;
    let img_size = g.height * g.width;
    let mut pre = vec![0.0; rows * g.filters * conv_size];
    for r in 0..rows {
        let img = &input[r * g.channels * img_size..(r + 1) * g.channels * img_size];
        for f in 0..g.filters {
            let out =
                &mut pre[(r * g.filters + f) * conv_size..(r * g.filters + f + 1) * conv_size];
            out.iter_mut().for_each(|v| *v = bias[f]);
            for c in 0..g.channels {
                let plane = &img[c * img_size..(c + 1) * img_size];
                let k = &kernels[(f * g.channels + c) * k2..(f * g.channels + c + 1) * k2];
                for i in 0..g.conv_h {
                    for j in 0..g.conv_w {
                        let mut acc = 0.0;
                        for ki in 0..KERNEL {
                            let base = (i + ki) * g.width + j;
                            for kj in 0..KERNEL {
                                acc += k[ki * KERNEL + kj] * plane[base + kj];
                            }
                        }
                        out[i * g.conv_w + j] += acc;
                    }
                }
            }
        }
    }
    let pool_size = g.pool_h * g.pool_w;
    let mut pooled = vec![0.0; rows * g.filters * pool_size];
    let mut argmax = vec![0usize; pooled.len()];
    for map in 0..rows * g.filters {
        let base = map * conv_size;
        for pi in 0..g.pool_h {
            for pj in 0..g.pool_w {
                let mut best_idx = base + (pi * POOL) * g.conv_w + pj * POOL;
                let mut best = pre[best_idx].max(0.0);
                for di in 0..POOL {
                    for dj in 0..POOL {
                        let idx = base + (pi * POOL + di) * g.conv_w + pj * POOL + dj;
                        let v = pre[idx].max(0.0);
                        if v > best {
                            best = v;
                            best_idx = idx;
                        }
                    }
                }
                let cell = map * pool_size + pi * g.pool_w + pj;
                pooled[cell] = best;
                argmax[cell] = best_idx;
            }
        }
    }
    (ConvTrace { pre, argmax }, pooled)
}

fn run_forward(params: &ParamVector, spec: &ModelSpec, batch: &Batch) -> Result<Trace> {
    spec.check_params(params)?;
    if batch.dim() != spec.input_dim {
        return Err(Error::Shape {
            layer: "input".into(),
            expected: spec.input_dim,
            found: batch.dim(),
        });
    }
    let rows = batch.rows();
    let mut layer_idx = 0;
    let (conv, mut current) = match spec.conv_geometry() {
        Some(g) => {
            let (trace, pooled) = conv_forward(&g, params.layer(0), batch.inputs(), rows);
            check_finite(&trace.pre, 0)?;
            layer_idx = 1;
            (Some(trace), pooled)
        }
        None => (None, batch.inputs().to_vec()),
    };
    let dims = spec.dense_dims();
    let n_dense = dims.len() - 1;
    let mut dense_inputs = Vec::with_capacity(n_dense);
    for l in 0..n_dense {
        let mut out = dense_forward(
            params.layer(layer_idx),
            &current,
            rows,
            dims[l],
            dims[l + 1],
        );
        check_finite(&out, layer_idx)?;
        if l + 1 < n_dense {
            out.iter_mut().for_each(|v| *v = v.max(0.0));
        }
        dense_inputs.push(std::mem::replace(&mut current, out));
        layer_idx += 1;
    }
    Ok(Trace {
        conv,
        dense_inputs,
        logits: current,
    })
}

/// Logits for every row of the batch.
pub fn forward(params: &ParamVector, spec: &ModelSpec, batch: &Batch) -> Result<Logits> {
    let trace = run_forward(params, spec, batch)?;
    Ok(Logits {
        values: trace.logits,
        rows: batch.rows(),
        cols: spec.num_classes,
    })
}

/// Mean cross-entropy over the batch and its gradient with respect to every parameter.
pub fn loss_and_grad(
    params: &ParamVector,
    spec: &ModelSpec,
    batch: &Batch,
) -> Result<(f64, ParamVector)> {
    if let Some(&bad) = batch.labels().iter().find(|&&y| y >= spec.num_classes) {
        return Err(Error::invalid(format!(
            "label {bad} out of range for {} classes",
            spec.num_classes
        )));
    }
    let trace = run_forward(params, spec, batch)?;
    let rows = batch.rows();
    let nc = spec.num_classes;
    let inv_rows = 1.0 / rows as f64;

    let mut loss = 0.0;
    let mut delta = trace.logits;
    for (r, row) in delta.chunks_mut(nc).enumerate() {
        let y = batch.labels()[r];
        let max = row.iter().copied().fold(f64::NEG_INFINITY, f64::max);
        let lse = max + row.iter().map(|v| (v - max).exp()).sum::<f64>().ln();
        loss += lse - row[y];
        for v in row.iter_mut() {
            *v = (*v - lse).exp() * inv_rows;
        }
        row[y] -= inv_rows;
    }
    loss *= inv_rows;
    if !loss.is_finite() {
        return Err(Error::Overflow {
            layer: params.layout().len() - 1,
        });
    }

    let mut grad = params.zeros_like();
    let dims = spec.dense_dims();
    let n_dense = dims.len() - 1;
    let first_dense = usize::from(trace.conv.is_some());
    for l in (0..n_dense).rev() {
        let (n_in, n_out) = (dims[l], dims[l + 1]);
        let layer_idx = first_dense + l;
        let input = &trace.dense_inputs[l];
        {
            let g = grad.layer_mut(layer_idx);
            let (gw, gb) = g.split_at_mut(n_in * n_out);
            for r in 0..rows {
                let x = &input[r * n_in..(r + 1) * n_in];
                let d = &delta[r * n_out..(r + 1) * n_out];
                for o in 0..n_out {
                    let dv = d[o];
                    gb[o] += dv;
                    if dv != 0.0 {
                        for (gwi, xi) in gw[o * n_in..(o + 1) * n_in].iter_mut().zip(x) {
                            *gwi += dv * xi;
                        }
                    }
                }
            }
        }
        if l == 0 && trace.conv.is_none() {
            break;
        }
        let weights = &params.layer(layer_idx)[..n_in * n_out];
        let mut prev = vec![0.0; rows * n_in];
        for r in 0..rows {
            let d = &delta[r * n_out..(r + 1) * n_out];
            let p = &mut prev[r * n_in..(r + 1) * n_in];
            for o in 0..n_out {
                let dv = d[o];
                if dv != 0.0 {
                    for (pi, wi) in p.iter_mut().zip(&weights[o * n_in..(o + 1) * n_in]) {
                        *pi += dv * wi;
                    }
                }
            }
        }
        // ReLU mask; pooled conv outputs are already post-ReLU as well.
        for (p, x) in prev.iter_mut().zip(input) {
            if *x <= 0.0 {
                *p = 0.0;
            }
        }
        delta = prev;
    }

    if let (Some(conv), Some(g)) = (&trace.conv, spec.conv_geometry()) {
        let conv_size = g.conv_h * g.conv_w;
        let mut dpre = vec![0.0; conv.pre.len()];
        for (cell, &idx) in conv.argmax.iter().enumerate() {
            if conv.pre[idx] > 0.0 {
                dpre[idx] += delta[cell];
            }
        }
        let k2 = KERNEL * KERNEL;
        let img_size = g.height * g.width;
        let gl = grad.layer_mut(0);
        let (gk, gb) = gl.split_at_mut(g.filters * g.channels * k2);
        for r in 0..rows {
            let img = &batch.inputs()[r * g.channels * img_size..(r + 1) * g.channels * img_size];
            for f in 0..g.filters {
                let d = &dpre[(r * g.filters + f) * conv_size..(r * g.filters + f + 1) * conv_size];
                gb[f] += d.iter().sum::<f64>();
                for c in 0..g.channels {
                    let plane = &img[c * img_size..(c + 1) * img_size];
                    let k = &mut gk[(f * g.channels + c) * k2..(f * g.channels + c + 1) * k2];
                    for i in 0..g.conv_h {
                        for j in 0..g.conv_w {
                            let dv = d[i * g.conv_w + j];
                            if dv == 0.0 {
                                continue;
                            }
                            for ki in 0..KERNEL {
                                let base = (i + ki) * g.width + j;
                                for kj in 0..KERNEL {
                                    k[ki * KERNEL + kj] += dv * plane[base + kj];
                                }
                            }
                        }
                    }
                }
            }
        }
    }

    Ok((loss, grad))
}
