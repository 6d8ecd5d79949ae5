use std::path::Path;

use super::dataset::LabeledDataset;
use crate::error::{Error, Result};

pub const RECORD_BYTES: usize = 1 + 3 * 32 * 32;
const PLANE: usize = 32 * 32;
pub const CIFAR10_MEAN: [f64; 3] = [0.4914, 0.4822, 0.4465];
pub const CIFAR10_STD: [f64; 3] = [0.2470, 0.2435, 0.2616];

const TRAIN_FILES: [&str; 5] = [
    "data_batch_1.bin",
    "data_batch_2.bin",
    "data_batch_3.bin",
    "data_batch_4.bin",
    "data_batch_5.bin",
];
const TEST_FILE: &str = "test_batch.bin";

#[derive(Debug, Clone)]
pub struct Cifar10 {
    pub train: LabeledDataset,
    pub test: LabeledDataset,
    pub mean: [f64; 3],
    pub std: [f64; 3],
}

/// Decodes one binary batch file into (normalised pixels, labels).
pub fn load_cifar10_batch(path: &Path) -> Result<(Vec<f64>, Vec<usize>)> {
    let bytes = std::fs::read(path).map_err(|e| Error::io(path, e))?;
    let whole = bytes.len() / RECORD_BYTES * RECORD_BYTES;
    if whole != bytes.len() {
        return Err(Error::Format {
            path: path.to_path_buf(),
            offset: whole as u64,
            message: format!(
                "truncated record: {} trailing bytes, records are {RECORD_BYTES} bytes",
                bytes.len() - whole
            ),
        });
    }
    let records = bytes.len() / RECORD_BYTES;
    let mut pixels = Vec::with_capacity(records * (RECORD_BYTES - 1));
    let mut labels = Vec::with_capacity(records);
    for (r, record) in bytes.chunks_exact(RECORD_BYTES).enumerate() {
        let label = record[0] as usize;
        if label >= 10 {
            return Err(Error::Format {
                path: path.to_path_buf(),
                offset: (r * RECORD_BYTES) as u64,
                message: format!("label byte {label} outside [0, 10)"),
            });
        }
        labels.push(label);
        for (i, &px) in record[1..].iter().enumerate() {
            let c = i / PLANE;
            pixels.push((px as f64 / 255.0 - CIFAR10_MEAN[c]) / CIFAR10_STD[c]);
        }
    }
    Ok((pixels, labels))
}

/// Reads the five training batches and the test batch from `dir`.
pub fn load_cifar10(dir: &Path) -> Result<Cifar10> {
    let read_all = |files: &[&str]| -> Result<LabeledDataset> {
        let mut pixels = Vec::new();
        let mut labels = Vec::new();
        for f in files {
            let (p, l) = load_cifar10_batch(&dir.join(f))?;
            pixels.extend(p);
            labels.extend(l);
        }
        LabeledDataset::new(pixels, RECORD_BYTES - 1, labels, 10)
    };
    Ok(Cifar10 {
        train: read_all(&TRAIN_FILES)?,
        test: read_all(&[TEST_FILE])?,
        mean: CIFAR10_MEAN,
        std: CIFAR10_STD,
    })
}
