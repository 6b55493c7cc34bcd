//! Independent reference computations shared by the integration tests.
#![allow(dead_code)]

use nalgebra::{DMatrix, SymmetricEigen};
use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;
use rand_distr::StandardNormal;

pub fn rng(seed: u64) -> ChaCha8Rng {
    ChaCha8Rng::seed_from_u64(seed)
}

pub fn gaussian(rng: &mut ChaCha8Rng, rows: usize, cols: usize) -> DMatrix<f64> {
    DMatrix::from_fn(rows, cols, |_, _| rng.sample(StandardNormal))
}

pub fn unit_rows(mut m: DMatrix<f64>) -> DMatrix<f64> {
    for mut row in m.row_iter_mut() {
        let n = row.norm();
        row /= n;
    }
    m
}

pub fn random_unit(rng: &mut ChaCha8Rng, rows: usize, cols: usize) -> DMatrix<f64> {
    unit_rows(gaussian(rng, rows, cols))
}

pub fn random_orthogonal(rng: &mut ChaCha8Rng, d: usize) -> DMatrix<f64> {
    gaussian(rng, d, d).qr().q()
}

/// `Σ ln(1 + c λ)` over eigenvalues of the d×d matrix `MᵀM`.
pub fn logdet_eigen(m: &DMatrix<f64>, c: f64) -> f64 {
    let gram = m.transpose() * m;
    SymmetricEigen::new(gram)
        .eigenvalues
        .iter()
        .map(|&l| (1.0 + c * l.max(0.0)).ln())
        .sum()
}

/// `Σ ln(1 + c σ²)` over singular values, computed on the N×N side.
pub fn logdet_eigen_rows(m: &DMatrix<f64>, c: f64) -> f64 {
    let gram = m * m.transpose();
    SymmetricEigen::new(gram)
        .eigenvalues
        .iter()
        .map(|&l| (1.0 + c * l.max(0.0)).ln())
        .sum()
}

pub fn expansion_oracle(z: &DMatrix<f64>, eps: f64) -> f64 {
    let (n, d) = z.shape();
    logdet_eigen(z, d as f64 / (n as f64 * eps * eps))
}

/// Compression term by explicit class loops over `Zᵀ Diag(π_j) Z`.
pub fn compression_oracle(z: &DMatrix<f64>, membership: &DMatrix<f64>, total_n: usize, eps: f64) -> f64 {
    let d = z.ncols();
    let mut total = 0.0;
    for j in 0..membership.ncols() {
        let n_j: f64 = membership.column(j).sum();
        if n_j <= 0.0 {
            continue;
        }
        let mut cov = DMatrix::<f64>::zeros(d, d);
        for i in 0..z.nrows() {
            let w = membership[(i, j)];
            for a in 0..d {
                for b in 0..d {
                    cov[(a, b)] += w * z[(i, a)] * z[(i, b)];
                }
            }
        }
        let c = d as f64 / (n_j * eps * eps);
        let lam = SymmetricEigen::new(cov).eigenvalues;
        total += n_j / total_n as f64 * lam.iter().map(|&l| (1.0 + c * l.max(0.0)).ln()).sum::<f64>();
    }
    total
}

/// Central differences of `f` at `x`, entry by entry.
pub fn fd_grad(x: &DMatrix<f64>, h: f64, mut f: impl FnMut(&DMatrix<f64>) -> f64) -> DMatrix<f64> {
    let mut g = DMatrix::zeros(x.nrows(), x.ncols());
    let mut xp = x.clone();
    for i in 0..x.nrows() {
        for j in 0..x.ncols() {
            let orig = xp[(i, j)];
            xp[(i, j)] = orig + h;
            let fp = f(&xp);
            xp[(i, j)] = orig - h;
            let fm = f(&xp);
            xp[(i, j)] = orig;
            g[(i, j)] = (fp - fm) / (2.0 * h);
        }
    }
    g
}

/// `‖a − b‖ / max(‖b‖, floor)` in Frobenius norm.
pub fn rel_err(a: &DMatrix<f64>, b: &DMatrix<f64>, floor: f64) -> f64 {
    (a - b).norm() / b.norm().max(floor)
}

pub fn rel_scalar(a: f64, b: f64) -> f64 {
    (a - b).abs() / b.abs().max(1e-300)
}

/// Random one-hot labels in `0..k`.
pub fn random_labels(rng: &mut ChaCha8Rng, n: usize, k: usize) -> Vec<usize> {
    (0..n).map(|_| rng.random_range(0..k)).collect()
}

/// Random soft memberships: each row a normalized vector of uniform draws.
pub fn random_soft(rng: &mut ChaCha8Rng, n: usize, k: usize) -> DMatrix<f64> {
    let mut m = DMatrix::from_fn(n, k, |_, _| rng.random::<f64>());
    for mut row in m.row_iter_mut() {
        let s = row.sum();
        row /= s;
    }
    m
}

/// Best agreement over every injective relabeling of predicted ids onto true ids.
pub fn brute_force_agreement(pred: &[usize], truth: &[usize]) -> usize {
    let mut p_ids: Vec<usize> = pred.to_vec();
    p_ids.sort_unstable();
    p_ids.dedup();
    let mut t_ids: Vec<usize> = truth.to_vec();
    t_ids.sort_unstable();
    t_ids.dedup();
    let size = p_ids.len().max(t_ids.len());
    // Pad the true side so every predicted id can map somewhere.
    let targets: Vec<Option<usize>> = t_ids.iter().map(|&t| Some(t)).chain(std::iter::repeat(None)).take(size).collect();
    let mut best = 0;
    let mut perm: Vec<usize> = (0..size).collect();
    permute(&mut perm, 0, &mut |perm| {
        let hits = pred
            .iter()
            .zip(truth)
            .filter(|(p, t)| {
                let pi = p_ids.iter().position(|x| x == *p).unwrap();
                targets[perm[pi]] == Some(**t)
            })
            .count();
        best = best.max(hits);
    });
    best
}

fn permute(v: &mut Vec<usize>, k: usize, visit: &mut impl FnMut(&[usize])) {
    if k == v.len() {
        visit(v);
        return;
    }
    for i in k..v.len() {
        v.swap(k, i);
        permute(v, k + 1, visit);
        v.swap(k, i);
    }
}
