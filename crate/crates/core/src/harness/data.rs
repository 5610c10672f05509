//! Datasets: CSV ingestion and seeded synthetic generators.

use std::io::Read;
use std::path::Path;

use rand::seq::SliceRandom;
use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;
use rand_distr::{Distribution, Normal};

use crate::error::{Error, Result};
use crate::tensor::{self, Tensor};

#[derive(Debug, Clone, PartialEq)]
pub struct Example {
    pub x: Tensor,
    /// Class index for classification, real target for regression.
    pub target: f64,
}

impl Example {
    pub fn label(&self) -> usize {
        self.target as usize
    }
}

#[derive(Debug, Clone, Default, PartialEq)]
pub struct Dataset {
    pub examples: Vec<Example>,
}

impl Dataset {
    pub fn new(examples: Vec<Example>) -> Self {
        Dataset { examples }
    }

    pub fn len(&self) -> usize {
        self.examples.len()
    }

    pub fn is_empty(&self) -> bool {
        self.examples.is_empty()
    }

    pub fn iter(&self) -> std::slice::Iter<'_, Example> {
        self.examples.iter()
    }

    /// Seeded shuffle, then the first `n_train` examples go to the first
    /// half of the pair.
    pub fn split(&self, n_train: usize, seed: u64) -> Result<(Dataset, Dataset)> {
        if n_train > self.len() {
            return Err(Error::Domain(format!(
                "cannot take {n_train} training examples from {}",
                self.len()
            )));
        }
        let mut order: Vec<usize> = (0..self.len()).collect();
        order.shuffle(&mut ChaCha8Rng::seed_from_u64(seed));
        let pick = |idx: &[usize]| Dataset::new(idx.iter().map(|&i| self.examples[i].clone()).collect());
        Ok((pick(&order[..n_train]), pick(&order[n_train..])))
    }

    pub fn take(&self, n: usize) -> Dataset {
        Dataset::new(self.examples.iter().take(n).cloned().collect())
    }

    pub fn targets(&self) -> Vec<f64> {
        self.examples.iter().map(|e| e.target).collect()
    }
}

/// How the columns after the first are read.
#[derive(Debug, Clone, PartialEq)]
pub enum CsvLayout {
    /// Pixels in 0..=255, scaled to [0,1] and reshaped.
    Image { shape: Vec<usize> },
    /// Feature values taken as they are, reshaped.
    Series { shape: Vec<usize> },
}

impl CsvLayout {
    pub fn fashion_mnist() -> Self {
        CsvLayout::Image { shape: vec![28, 28] }
    }

    fn shape(&self) -> &[usize] {
        match self {
            CsvLayout::Image { shape } | CsvLayout::Series { shape } => shape,
        }
    }
}

pub fn load_csv(path: &Path, layout: &CsvLayout) -> Result<Dataset> {
    read_csv(std::fs::File::open(path)?, layout)
}

/// Rows are `target, v1, ..., vn` with no header. Row numbers in errors
/// start at 1.
pub fn read_csv(input: impl Read, layout: &CsvLayout) -> Result<Dataset> {
    let mut reader = csv::ReaderBuilder::new()
        .has_headers(false)
        .flexible(true)
        .from_reader(input);
    let width: usize = layout.shape().iter().product();
    let mut examples = Vec::new();
    for (i, record) in reader.records().enumerate() {
        let row = i + 1;
        let parse_error = |message: String| Error::Parse { row, message };
        let record = record.map_err(|e| parse_error(e.to_string()))?;
        if record.len() != width + 1 {
            return Err(parse_error(format!("expected {} columns, found {}", width + 1, record.len())));
        }
        let mut cells = record.iter().map(|c| {
            c.trim()
                .parse::<f64>()
                .map_err(|_| parse_error(format!("`{c}` is not a number")))
        });
        let target = cells.next().expect("width checked")?;
        let mut values = cells.collect::<Result<Vec<f64>>>()?;
        if let CsvLayout::Image { .. } = layout {
            if values.iter().any(|v| !(0.0..=255.0).contains(v)) {
                return Err(parse_error("pixel outside 0..=255".into()));
            }
            values.iter_mut().for_each(|v| *v /= 255.0);
        }
        let x = tensor::from_shape(layout.shape(), values).expect("width checked");
        examples.push(Example { x, target });
    }
    Ok(Dataset::new(examples))
}

/// Gaussian clusters in `[0,1]^shape`, one centre per class.
pub fn synthetic_blobs(n: usize, classes: usize, shape: &[usize], spread: f64, seed: u64) -> Dataset {
    let mut rng = ChaCha8Rng::seed_from_u64(seed);
    let dim: usize = shape.iter().product();
    let centres: Vec<Vec<f64>> = (0..classes)
        .map(|_| (0..dim).map(|_| rng.gen_range(0.1..0.9)).collect())
        .collect();
    let noise = Normal::new(0.0, spread).expect("spread is finite and non-negative");
    let examples = (0..n)
        .map(|i| {
            let class = i % classes;
            let values = centres[class]
                .iter()
                .map(|c| (c + noise.sample(&mut rng)).clamp(0.0, 1.0))
                .collect();
            Example {
                x: tensor::from_shape(shape, values).expect("dim matches shape"),
                target: class as f64,
            }
        })
        .collect();
    let mut ds = Dataset::new(examples);
    ds.examples.shuffle(&mut rng);
    ds
}

/// Seasonal series with an upward trend and small noise, kept inside
/// (0.1, 0.95).
pub fn synthetic_series(len: usize, seed: u64) -> Vec<f64> {
    let mut rng = ChaCha8Rng::seed_from_u64(seed);
    let noise = Normal::new(0.0, 0.01).expect("valid deviation");
    let period = 24.0;
    (0..len)
        .map(|t| {
            let t = t as f64;
            let seasonal = 0.2 * (2.0 * std::f64::consts::PI * t / period).sin();
            let trend = 0.3 * t / len as f64;
            (0.4 + seasonal + trend + noise.sample(&mut rng)).clamp(0.1, 0.95)
        })
        .collect()
}

/// Sliding windows over `series`: each input is `[window, 2]` holding the
/// value and a phase feature, and the target is the next value.
pub fn series_windows(series: &[f64], window: usize) -> Dataset {
    let period = 24.0;
    let examples = (0..series.len().saturating_sub(window))
        .map(|start| {
            let mut values = Vec::with_capacity(window * 2);
            for t in start..start + window {
                values.push(series[t]);
                values.push(0.5 + 0.5 * (2.0 * std::f64::consts::PI * t as f64 / period).cos());
            }
            Example {
                x: tensor::from_shape(&[window, 2], values).expect("window shape"),
                target: series[start + window],
            }
        })
        .collect();
    Dataset::new(examples)
}
