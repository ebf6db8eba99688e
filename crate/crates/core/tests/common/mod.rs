//! Independent reference implementations used across integration tests.
#![allow(dead_code)]

use nalgebra::{DMatrix, SymmetricEigen};
use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;
use sparse_sir::linalg::SymMatrix;

pub fn rng(seed: u64) -> ChaCha8Rng {
    ChaCha8Rng::seed_from_u64(seed)
}

pub fn sym(m: DMatrix<f64>) -> SymMatrix {
    let s = (&m + m.transpose()) * 0.5;
    SymMatrix::new(s).unwrap()
}

pub fn random_matrix(rng: &mut ChaCha8Rng, rows: usize, cols: usize, scale: f64) -> DMatrix<f64> {
    DMatrix::from_fn(rows, cols, |_, _| scale * rng.random_range(-1.0..1.0))
}

/// Stable order of `0..n` by `(y, index)`.
pub fn y_order(y: &[f64]) -> Vec<usize> {
    let mut idx: Vec<usize> = (0..y.len()).collect();
    idx.sort_by(|&a, &b| y[a].partial_cmp(&y[b]).unwrap().then(a.cmp(&b)));
    idx
}

/// `(1/n) Σ_{i ≤ ⌊n/2⌋} (x_(2i) − x_(2i−1))(x_(2i) − x_(2i−1))ᵀ`, term by term.
pub fn diff_t_direct(y: &[f64], x: &DMatrix<f64>) -> DMatrix<f64> {
    let (n, d) = x.shape();
    let order = y_order(y);
    let mut t = DMatrix::zeros(d, d);
    for i in 0..n / 2 {
        let (a, b) = (order[2 * i], order[2 * i + 1]);
        for r in 0..d {
            for c in 0..d {
                t[(r, c)] += (x[(b, r)] - x[(a, r)]) * (x[(b, c)] - x[(a, c)]);
            }
        }
    }
    t / n as f64
}

/// `(1/H) Σ_h (1/n_h) Σ_{i∈S_h} (x_i − x̄_h)(x_i − x̄_h)ᵀ` with the first `n mod H` slices one larger.
pub fn slice_t_direct(y: &[f64], x: &DMatrix<f64>, h: usize) -> DMatrix<f64> {
    let (n, d) = x.shape();
    let order = y_order(y);
    let mut t = DMatrix::zeros(d, d);
    let mut start = 0;
    for s in 0..h {
        let size = n / h + usize::from(s < n % h);
        let members = &order[start..start + size];
        start += size;
        let mut mean = vec![0.0; d];
        for &i in members {
            for c in 0..d {
                mean[c] += x[(i, c)] / size as f64;
            }
        }
        for &i in members {
            for r in 0..d {
                for c in 0..d {
                    t[(r, c)] += (x[(i, r)] - mean[r]) * (x[(i, c)] - mean[c]) / (size as f64 * h as f64);
                }
            }
        }
    }
    t
}

pub fn cov_direct(x: &DMatrix<f64>) -> DMatrix<f64> {
    let (n, d) = x.shape();
    let mean: Vec<f64> = (0..d).map(|c| x.column(c).sum() / n as f64).collect();
    DMatrix::from_fn(d, d, |r, c| {
        (0..n)
            .map(|i| (x[(i, r)] - mean[r]) * (x[(i, c)] - mean[c]))
            .sum::<f64>()
            / n as f64
    })
}

/// Orthonormal basis of the top-`k` generalized eigenspace of `(m, sigma)`, `sigma` positive definite.
pub fn generalized_top_k(m: &DMatrix<f64>, sigma: &DMatrix<f64>, k: usize) -> DMatrix<f64> {
    let l = sigma.clone().cholesky().expect("positive definite").l();
    let l_inv = l.clone().try_inverse().unwrap();
    let c = &l_inv * m * l_inv.transpose();
    let c = (&c + c.transpose()) * 0.5;
    let eig = SymmetricEigen::new(c);
    let mut idx: Vec<usize> = (0..eig.eigenvalues.len()).collect();
    idx.sort_by(|&a, &b| eig.eigenvalues[b].total_cmp(&eig.eigenvalues[a]));
    let u = eig.eigenvectors.select_columns(idx[..k].iter());
    let v = l_inv.transpose() * u;
    v.qr().q()
}

/// `‖UUᵀ − WWᵀ‖_F` for orthonormal `U`, `W`.
pub fn projector_distance(u: &DMatrix<f64>, w: &DMatrix<f64>) -> f64 {
    (u * u.transpose() - w * w.transpose()).norm()
}

/// Smallest `γ ≥ 0` with `Σ clip(ω − γ, 0, 1) ≤ K`, by bisection.
pub fn bisect_gamma(omega: &[f64], k: usize) -> f64 {
    let f = |g: f64| omega.iter().map(|&w| (w - g).clamp(0.0, 1.0)).sum::<f64>();
    let target = k as f64;
    if f(0.0) <= target {
        return 0.0;
    }
    let (mut lo, mut hi) = (0.0, omega.iter().cloned().fold(0.0, f64::max));
    for _ in 0..200 {
        let mid = 0.5 * (lo + hi);
        if f(mid) > target {
            lo = mid;
        } else {
            hi = mid;
        }
        if hi - lo <= 1e-14 * hi.max(1.0) {
            break;
        }
    }
    hi
}

fn clip_spectrum(w: &DMatrix<f64>) -> DMatrix<f64> {
    let eig = SymmetricEigen::new(w.clone());
    let vals = eig.eigenvalues.map(|v| v.clamp(0.0, 1.0));
    &eig.eigenvectors * DMatrix::from_diagonal(&vals) * eig.eigenvectors.transpose()
}

fn trace_halfspace(w: &DMatrix<f64>, k: usize) -> DMatrix<f64> {
    let d = w.nrows();
    let excess = w.trace() - k as f64;
    if excess <= 0.0 {
        w.clone()
    } else {
        w - DMatrix::identity(d, d) * (excess / d as f64)
    }
}

/// Projection onto `{0 ⪯ H ⪯ I} ∩ {tr H ≤ K}` by Dykstra's alternating projections.
pub fn dykstra_fantope(w: &DMatrix<f64>, k: usize) -> DMatrix<f64> {
    let d = w.nrows();
    let mut x = w.clone();
    let mut p = DMatrix::zeros(d, d);
    let mut q = DMatrix::zeros(d, d);
    for _ in 0..100_000 {
        let y = clip_spectrum(&(&x + &p));
        p = &x + &p - &y;
        let next = trace_halfspace(&(&y + &q), k);
        q = &y + &q - &next;
        let change = (&next - &x).norm();
        let gap = (&next - &y).norm();
        x = next;
        if change < 1e-14 && gap < 1e-12 {
            break;
        }
    }
    x
}

/// Minimizer of `‖H − W‖_F` over a grid on the feasible 2x2 matrices `[[a, b], [b, c]]`.
pub fn grid_fantope_2x2(w: &DMatrix<f64>, k: usize, step: f64) -> DMatrix<f64> {
    let feasible = |a: f64, b: f64, c: f64| {
        let mean = 0.5 * (a + c);
        let rad = (0.25 * (a - c) * (a - c) + b * b).sqrt();
        mean - rad >= 0.0 && mean + rad <= 1.0 && a + c <= k as f64
    };
    let steps = (1.0 / step).round() as i64;
    let mut best = (f64::INFINITY, DMatrix::zeros(2, 2));
    for ia in 0..=steps {
        let a = ia as f64 * step;
        for ic in 0..=steps {
            let c = ic as f64 * step;
            for ib in -steps..=steps {
                let b = 0.5 * ib as f64 * step;
                if !feasible(a, b, c) {
                    continue;
                }
                let dist = (a - w[(0, 0)]).powi(2) + 2.0 * (b - w[(0, 1)]).powi(2) + (c - w[(1, 1)]).powi(2);
                if dist < best.0 {
                    best = (dist, DMatrix::from_row_slice(2, 2, &[a, b, b, c]));
                }
            }
        }
    }
    best.1
}
