#![allow(dead_code)]

use nalgebra::{DMatrix, DVector};
use piq::linalg::Dataset;
use piq::loss::sigmoid;
use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;
use rand_distr::StandardNormal;

pub fn rng(seed: u64) -> ChaCha8Rng {
    ChaCha8Rng::seed_from_u64(seed)
}

pub fn gaussian_matrix(rng: &mut ChaCha8Rng, n: usize, p: usize) -> DMatrix<f64> {
    DMatrix::from_fn(n, p, |_, _| rng.sample::<f64, _>(StandardNormal))
}

pub fn gaussian_vector(rng: &mut ChaCha8Rng, n: usize) -> DVector<f64> {
    DVector::from_fn(n, |_, _| rng.sample::<f64, _>(StandardNormal))
}

/// Gaussian regression with the first `o` responses shifted by `shift`.
pub fn shifted_regression(seed: u64, n: usize, p: usize, o: usize, shift: f64) -> Dataset {
    let mut r = rng(seed);
    let x = gaussian_matrix(&mut r, n, p);
    let beta = DVector::from_fn(p, |j, _| if j % 2 == 0 { 1.0 } else { -0.5 });
    let noise = gaussian_vector(&mut r, n);
    let y = DVector::from_fn(n, |i, _| {
        let s: f64 = (0..p).map(|j| x[(i, j)] * beta[j]).sum();
        s + 0.5 * noise[i] + if i < o { shift } else { 0.0 }
    });
    Dataset::new(x, y).unwrap()
}

/// Logistic labels with the first `o` labels flipped.
pub fn flipped_logistic(seed: u64, n: usize, p: usize, o: usize) -> Dataset {
    let mut r = rng(seed);
    let x = gaussian_matrix(&mut r, n, p);
    let beta = DVector::from_fn(p, |j, _| if j % 2 == 0 { 1.5 } else { -1.0 });
    let eta = &x * beta;
    let y = DVector::from_fn(n, |i, _| {
        let label = f64::from(r.random::<f64>() < sigmoid(eta[i]));
        if i < o {
            1.0 - label
        } else {
            label
        }
    });
    Dataset::new(x, y).unwrap()
}
