#![allow(dead_code)]

use bakr::rng::rng_from_seed;
use nalgebra::DMatrix;
use rand_distr::{Distribution, StandardNormal};

pub fn normal_matrix(n: usize, p: usize, seed: u64) -> DMatrix<f64> {
    let mut rng = rng_from_seed(seed);
    DMatrix::from_fn(n, p, |_, _| StandardNormal.sample(&mut rng))
}

/// Columns centered and scaled to unit sample variance.
pub fn standardized(x: &DMatrix<f64>) -> DMatrix<f64> {
    let n = x.nrows() as f64;
    let mut out = x.clone();
    for mut col in out.column_iter_mut() {
        let m = col.mean();
        let var = col.iter().map(|v| (v - m).powi(2)).sum::<f64>() / (n - 1.0);
        let sd = var.sqrt();
        col.iter_mut().for_each(|v| *v = (*v - m) / sd);
    }
    out
}

/// Brute-force Gaussian kernel, one pair at a time.
pub fn gaussian_oracle(x: &DMatrix<f64>, h: f64) -> DMatrix<f64> {
    let n = x.nrows();
    DMatrix::from_fn(n, n, |i, j| {
        let d2: f64 = (0..x.ncols()).map(|c| (x[(i, c)] - x[(j, c)]).powi(2)).sum();
        (-h * d2).exp()
    })
}

pub fn symmetric_eigenvalues(m: &DMatrix<f64>) -> Vec<f64> {
    let mut ev: Vec<f64> = m.clone().symmetric_eigen().eigenvalues.iter().copied().collect();
    ev.sort_by(|a, b| b.total_cmp(a));
    ev
}
