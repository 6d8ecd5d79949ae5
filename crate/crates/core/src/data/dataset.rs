use crate::error::{Error, Result};

/// Row-major feature matrix with integer class labels.
#[derive(Debug, Clone, PartialEq)]
pub struct LabeledDataset {
    inputs: Vec<f64>,
    dim: usize,
    labels: Vec<usize>,
    num_classes: usize,
}

impl LabeledDataset {
    pub fn new(
        inputs: Vec<f64>,
        dim: usize,
        labels: Vec<usize>,
        num_classes: usize,
    ) -> Result<Self> {
        if dim == 0 || inputs.len() != dim * labels.len() {
            return Err(Error::Data(format!(
                "inputs hold {} values, expected {} rows x {dim}",
                inputs.len(),
                labels.len()
            )));
        }
        if num_classes < 2 {
            return Err(Error::Data("a dataset needs at least two classes".into()));
        }
        if let Some((i, &y)) = labels.iter().enumerate().find(|(_, &y)| y >= num_classes) {
            return Err(Error::Data(format!(
                "label {y} at row {i} out of range for {num_classes} classes"
            )));
        }
        if labels.len() < num_classes {
            return Err(Error::Data(format!(
                "{} samples is fewer than {num_classes} classes",
                labels.len()
            )));
        }
        Ok(Self {
            inputs,
            dim,
            labels,
            num_classes,
        })
    }

    pub fn len(&self) -> usize {
        self.labels.len()
    }

    pub fn is_empty(&self) -> bool {
        self.labels.is_empty()
    }

    pub fn dim(&self) -> usize {
        self.dim
    }

    pub fn num_classes(&self) -> usize {
        self.num_classes
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

    pub fn class_counts(&self, indices: impl IntoIterator<Item = usize>) -> Vec<usize> {
        let mut counts = vec![0; self.num_classes];
        for i in indices {
            counts[self.labels[i]] += 1;
        }
        counts
    }

    /// Row indices grouped by label, ascending within each class.
    pub fn indices_by_class(&self) -> Vec<Vec<usize>> {
        let mut by_class = vec![Vec::new(); self.num_classes];
        for (i, &y) in self.labels.iter().enumerate() {
            by_class[y].push(i);
        }
        by_class
    }

    /// A new dataset holding `rows` in the given order.
    pub fn subset(&self, rows: &[usize]) -> Result<Self> {
        let mut inputs = Vec::with_capacity(rows.len() * self.dim);
        let mut labels = Vec::with_capacity(rows.len());
        for &r in rows {
            if r >= self.len() {
                return Err(Error::Data(format!("row {r} out of range")));
            }
            inputs.extend_from_slice(self.row(r));
            labels.push(self.labels[r]);
        }
        Self::new(inputs, self.dim, labels, self.num_classes)
    }

    /// Everything except `excluded`, order preserved.
    pub fn without(&self, excluded: &[usize]) -> Result<Self> {
        let mut drop = vec![false; self.len()];
        for &i in excluded {
            if i < drop.len() {
                drop[i] = true;
            }
        }
        let keep: Vec<usize> = (0..self.len()).filter(|&i| !drop[i]).collect();
        self.subset(&keep)
    }
}
