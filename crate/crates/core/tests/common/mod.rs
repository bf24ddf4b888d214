#![allow(dead_code, clippy::needless_range_loop)]

pub mod gradcheck;
pub mod oracle;

use fixbi::models::{Arch, ClassifierModel};
use fixbi::rng::Rng;
use fixbi::Tensor;
use rand::Rng as _;

pub fn random_tensor(rng: &mut Rng, rows: usize, cols: usize, scale: f64) -> Tensor {
    let data = (0..rows * cols)
        .map(|_| scale * (2.0 * rng.random::<f64>() - 1.0))
        .collect();
    Tensor::new(vec![rows, cols], data).unwrap()
}

pub fn random_labels(rng: &mut Rng, n: usize, c: usize) -> Vec<usize> {
    (0..n).map(|_| rng.random_range(0..c)).collect()
}

/// A classifier whose every parameter (including the log-temperature) is
/// drawn uniformly from `[-scale, scale]`.
pub fn random_model(
    rng: &mut Rng,
    input_dim: usize,
    widths: Vec<usize>,
    num_classes: usize,
    scale: f64,
) -> ClassifierModel {
    let mut m = ClassifierModel::init(
        Arch {
            input_dim,
            widths,
            num_classes,
        },
        rng.random(),
    )
    .unwrap();
    let n = m.params().num_scalars();
    let flat: Vec<f64> = (0..n).map(|_| scale * (2.0 * rng.random::<f64>() - 1.0)).collect();
    m.params_mut().set_flat(&flat).unwrap();
    m
}

pub fn random_probs(rng: &mut Rng, rows: usize, cols: usize) -> Tensor {
    let mut data = Vec::with_capacity(rows * cols);
    for _ in 0..rows {
        let raw: Vec<f64> = (0..cols).map(|_| rng.random::<f64>() + 1e-3).collect();
        let s: f64 = raw.iter().sum();
        data.extend(raw.iter().map(|v| v / s));
    }
    Tensor::new(vec![rows, cols], data).unwrap()
}
