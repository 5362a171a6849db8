//! Datasets (CSV ingest and synthetic sequences) and the partitioning
//! regimes the experiments sweep: IID-balanced, normal-imbalanced and
//! sorted-class non-IID.

mod partition;

pub use partition::{
    partition_iid, partition_imbalanced, partition_noniid, partition_stats, PartitionPlan,
    PartitionStats,
};

use std::fs;
use std::path::Path;

use rand::seq::SliceRandom;
use rand_distr::{Distribution, Normal};
use thiserror::Error;

use crate::seed::{rng_for, tag};
use crate::tensor::Tensor;

#[derive(Debug, Error)]
pub enum DataError {
    #[error("io error on {path}: {source}")]
    Io {
        path: String,
        #[source]
        source: std::io::Error,
    },
    #[error("csv row {row}: {message}")]
    Csv { row: usize, message: String },
    #[error("dataset is empty")]
    Empty,
    #[error("{clients} clients cannot partition {samples} samples")]
    TooManyClients { clients: usize, samples: usize },
    #[error("plan line {line}: {message}")]
    Plan { line: usize, message: String },
    #[error("{0}")]
    Invalid(String),
}

/// Labeled sequence dataset; samples are `[n, channels, length]`.
#[derive(Debug, Clone)]
pub struct Dataset {
    samples: Tensor,
    labels: Vec<usize>,
    class_count: usize,
}

impl Dataset {
    pub fn new(samples: Tensor, labels: Vec<usize>, class_count: usize) -> Result<Self, DataError> {
        let shape = samples.shape();
        if shape.len() != 3 {
            return Err(DataError::Invalid(format!(
                "samples must be [n, channels, length], got {shape:?}"
            )));
        }
        if shape[0] != labels.len() {
            return Err(DataError::Invalid(format!(
                "{} samples vs {} labels",
                shape[0],
                labels.len()
            )));
        }
        if labels.is_empty() {
            return Err(DataError::Empty);
        }
        if let Some(&bad) = labels.iter().find(|&&l| l >= class_count) {
            return Err(DataError::Invalid(format!(
                "label {bad} out of range for {class_count} classes"
            )));
        }
        Ok(Dataset {
            samples,
            labels,
            class_count,
        })
    }

    pub fn len(&self) -> usize {
        self.labels.len()
    }

    pub fn is_empty(&self) -> bool {
        self.labels.is_empty()
    }

    pub fn channels(&self) -> usize {
        self.samples.shape()[1]
    }

    pub fn sample_len(&self) -> usize {
        self.samples.shape()[2]
    }

    pub fn class_count(&self) -> usize {
        self.class_count
    }

    pub fn labels(&self) -> &[usize] {
        &self.labels
    }

    /// Batch tensor `[indices.len(), channels, length]` plus labels.
    pub fn gather(&self, indices: &[usize]) -> (Tensor, Vec<usize>) {
        let (c, l) = (self.channels(), self.sample_len());
        let row = c * l;
        let mut data = Vec::with_capacity(indices.len() * row);
        let mut labels = Vec::with_capacity(indices.len());
        for &i in indices {
            data.extend_from_slice(&self.samples.data()[i * row..][..row]);
            labels.push(self.labels[i]);
        }
        (
            Tensor::new(vec![indices.len(), c, l], data).expect("consistent row size"),
            labels,
        )
    }

    /// New dataset holding copies of the selected rows.
    pub fn subset(&self, indices: &[usize]) -> Dataset {
        let (samples, labels) = self.gather(indices);
        Dataset {
            samples,
            labels,
            class_count: self.class_count,
        }
    }
}

/// Loads `label, f1, .., fm` rows into a single-channel dataset. Every row
/// must have the same width; labels must fall below `class_count`.
pub fn load_csv(path: impl AsRef<Path>, class_count: usize) -> Result<Dataset, DataError> {
    let path = path.as_ref();
    let text = fs::read_to_string(path).map_err(|source| DataError::Io {
        path: path.display().to_string(),
        source,
    })?;
    parse_csv(&text, class_count)
}

fn parse_csv(text: &str, class_count: usize) -> Result<Dataset, DataError> {
    let mut width = None;
    let mut data = Vec::new();
    let mut labels = Vec::new();
    for (line_idx, line) in text.lines().enumerate() {
        let row = line_idx + 1;
        let line = line.trim();
        if line.is_empty() {
            continue;
        }
        let mut cells = line.split(',').map(str::trim);
        let label_cell = cells.next().unwrap_or("");
        let label: usize = label_cell.parse().map_err(|_| DataError::Csv {
            row,
            message: format!("label {label_cell:?} is not a non-negative integer"),
        })?;
        if label >= class_count {
            return Err(DataError::Csv {
                row,
                message: format!("label {label} out of range for {class_count} classes"),
            });
        }
        let mut features = Vec::new();
        for cell in cells {
            let v: f32 = cell.parse().map_err(|_| DataError::Csv {
                row,
                message: format!("cell {cell:?} is not a number"),
            })?;
            features.push(v);
        }
        match width {
            None => {
                if features.is_empty() {
                    return Err(DataError::Csv {
                        row,
                        message: "row has a label but no features".into(),
                    });
                }
                width = Some(features.len());
            }
            Some(w) if w != features.len() => {
                return Err(DataError::Csv {
                    row,
                    message: format!("row has {} features, expected {w}", features.len()),
                });
            }
            _ => {}
        }
        labels.push(label);
        data.extend_from_slice(&features);
    }
    let width = width.ok_or(DataError::Empty)?;
    let n = labels.len();
    Dataset::new(
        Tensor::new(vec![n, 1, width], data).expect("consistent widths"),
        labels,
        class_count,
    )
}

/// Class template: a sinusoid whose frequency and phase depend on the class.
fn synth_template(class: usize, classes: usize, length: usize) -> Vec<f32> {
    let freq = 1.0 + class as f32;
    let phase = std::f32::consts::PI * class as f32 / classes as f32;
    (0..length)
        .map(|t| {
            (2.0 * std::f32::consts::PI * freq * t as f32 / length as f32 + phase).sin()
        })
        .collect()
}

/// Synthetic sequence classification task: per-class sinusoid templates plus
/// Gaussian noise. Classes are balanced to within one sample; deterministic
/// for a given seed.
pub fn synth_sequences(
    n: usize,
    classes: usize,
    length: usize,
    noise_std: f32,
    seed: u64,
) -> Result<Dataset, DataError> {
    if classes == 0 || n < classes {
        return Err(DataError::Invalid(format!(
            "need at least one sample per class: n={n}, classes={classes}"
        )));
    }
    if length < 8 {
        return Err(DataError::Invalid(format!(
            "length must be >= 8, got {length}"
        )));
    }
    if noise_std < 0.0 {
        return Err(DataError::Invalid("noise_std must be >= 0".into()));
    }
    let templates: Vec<Vec<f32>> = (0..classes)
        .map(|c| synth_template(c, classes, length))
        .collect();
    let mut rng = rng_for(seed, &[tag::SYNTH]);
    let normal = Normal::new(0.0f32, 1.0).expect("valid std");
    let mut data = Vec::with_capacity(n * length);
    let mut labels = Vec::with_capacity(n);
    for i in 0..n {
        let class = i % classes;
        labels.push(class);
        for t in 0..length {
            let noise = if noise_std > 0.0 {
                noise_std * normal.sample(&mut rng)
            } else {
                0.0
            };
            data.push(templates[class][t] + noise);
        }
    }
    Dataset::new(Tensor::new(vec![n, 1, length], data).unwrap(), labels, classes)
}

/// Splits off a held-out test set; `test_fraction` of the samples are chosen
/// at random (deterministically per seed).
pub fn holdout_split(
    dataset: &Dataset,
    test_fraction: f32,
    seed: u64,
) -> Result<(Dataset, Dataset), DataError> {
    if !(0.0..1.0).contains(&test_fraction) || test_fraction <= 0.0 {
        return Err(DataError::Invalid(format!(
            "test_fraction must be in (0, 1), got {test_fraction}"
        )));
    }
    let n = dataset.len();
    let n_test = ((n as f64) * f64::from(test_fraction)).round() as usize;
    let n_test = n_test.clamp(1, n - 1);
    let mut indices: Vec<usize> = (0..n).collect();
    indices.shuffle(&mut rng_for(seed, &[tag::HOLDOUT]));
    let train = dataset.subset(&indices[n_test..]);
    let test = dataset.subset(&indices[..n_test]);
    Ok((train, test))
}
