//! Spectral embedding on the normalized Laplacian and a small k-means,
//! used to seed EM.
//!
//! For `N < 2000` the eigenproblem is solved densely; above that a Lanczos
//! iteration with full reorthogonalization is applied to
//! `B = I + D^{-1/2} A D^{-1/2}`, whose largest eigenvalues correspond to the
//! smallest of `L_sym = I - D^{-1/2} A D^{-1/2}`.

use nalgebra::{DMatrix, SymmetricEigen};
use rand::Rng;
use rand::SeedableRng;
use rand_chacha::ChaCha8Rng;
use thiserror::Error;

use crate::graph::Graph;

const DENSE_LIMIT: usize = 2000;

#[derive(Debug, Error)]
pub enum SpectralError {
    #[error("eigensolver failed to converge ({0})")]
    NoConvergence(String),
}

/// `y = B x` with `B = I + D^{-1/2} A D^{-1/2}`. Degree-0 vertices act as
/// isolated unit diagonal entries.
fn apply_shifted(g: &Graph, inv_sqrt_deg: &[f64], x: &[f64], y: &mut [f64]) {
    for i in 0..g.n() {
        let mut acc = x[i];
        let wi = inv_sqrt_deg[i];
        for e in g.out_edges(i) {
            let j = g.dst(e);
            acc += wi * inv_sqrt_deg[j] * x[j];
        }
        y[i] = acc;
    }
}

/// Row-major `n x q` matrix of the eigenvectors of `L_sym` with the `q`
/// smallest eigenvalues, plus those eigenvalues in ascending order.
pub fn smallest_laplacian_eigenvectors(
    g: &Graph,
    q: usize,
    seed: u64,
) -> Result<(Vec<f64>, Vec<f64>), SpectralError> {
    let n = g.n();
    assert!(q >= 1 && q <= n);
    let inv_sqrt_deg: Vec<f64> = g
        .degrees()
        .iter()
        .map(|&d| if d > 0 { 1.0 / (d as f64).sqrt() } else { 0.0 })
        .collect();
    if n < DENSE_LIMIT {
        let mut m = DMatrix::<f64>::zeros(n, n);
        for i in 0..n {
            m[(i, i)] = 1.0;
            for e in g.out_edges(i) {
                let j = g.dst(e);
                m[(i, j)] = -inv_sqrt_deg[i] * inv_sqrt_deg[j];
            }
        }
        let eig = SymmetricEigen::new(m);
        let mut order: Vec<usize> = (0..n).collect();
        order.sort_by(|&a, &b| eig.eigenvalues[a].total_cmp(&eig.eigenvalues[b]));
        let mut vectors = vec![0.0; n * q];
        let mut values = vec![0.0; q];
        for (col, &idx) in order.iter().take(q).enumerate() {
            values[col] = eig.eigenvalues[idx];
            for row in 0..n {
                vectors[row * q + col] = eig.eigenvectors[(row, idx)];
            }
        }
        return Ok((vectors, values));
    }
    lanczos_smallest(g, &inv_sqrt_deg, q, seed)
}

fn lanczos_smallest(
    g: &Graph,
    inv_sqrt_deg: &[f64],
    q: usize,
    seed: u64,
) -> Result<(Vec<f64>, Vec<f64>), SpectralError> {
    let n = g.n();
    let steps = (4 * q + 60).min(n);
    let mut rng = ChaCha8Rng::seed_from_u64(seed);
    // Lanczos basis, kept fully for reorthogonalization.
    let mut basis: Vec<Vec<f64>> = Vec::with_capacity(steps);
    let mut alpha = Vec::with_capacity(steps);
    let mut beta: Vec<f64> = Vec::new();
    let mut v: Vec<f64> = (0..n).map(|_| rng.gen_range(-1.0..1.0)).collect();
    normalize(&mut v);
    let mut w = vec![0.0; n];
    for step in 0..steps {
        apply_shifted(g, inv_sqrt_deg, &v, &mut w);
        let a = dot(&v, &w);
        alpha.push(a);
        for (wi, vi) in w.iter_mut().zip(&v) {
            *wi -= a * vi;
        }
        if let Some(prev) = basis.last() {
            let b = *beta.last().unwrap();
            for (wi, pi) in w.iter_mut().zip(prev) {
                *wi -= b * pi;
            }
        }
        basis.push(v.clone());
        // Full reorthogonalization, twice for safety.
        for _ in 0..2 {
            for u in &basis {
                let c = dot(u, &w);
                for (wi, ui) in w.iter_mut().zip(u) {
                    *wi -= c * ui;
                }
            }
        }
        let b = dot(&w, &w).sqrt();
        if step + 1 == steps {
            beta.push(b);
            break;
        }
        if b < 1e-12 {
            // Invariant subspace found; restart with a fresh random direction.
            let mut fresh: Vec<f64> = (0..n).map(|_| rng.gen_range(-1.0..1.0)).collect();
            for u in &basis {
                let c = dot(u, &fresh);
                for (fi, ui) in fresh.iter_mut().zip(u) {
                    *fi -= c * ui;
                }
            }
            let norm = dot(&fresh, &fresh).sqrt();
            if norm < 1e-12 {
                beta.push(0.0);
                break;
            }
            for fi in fresh.iter_mut() {
                *fi /= norm;
            }
            beta.push(0.0);
            v = fresh;
        } else {
            beta.push(b);
            v = w.iter().map(|&x| x / b).collect();
        }
    }
    let m = alpha.len();
    if m < q {
        return Err(SpectralError::NoConvergence(format!(
            "Krylov space of dimension {m} < q = {q}"
        )));
    }
    let mut tri = DMatrix::<f64>::zeros(m, m);
    for i in 0..m {
        tri[(i, i)] = alpha[i];
        if i + 1 < m {
            tri[(i, i + 1)] = beta[i];
            tri[(i + 1, i)] = beta[i];
        }
    }
    let eig = SymmetricEigen::new(tri);
    // Largest Ritz values of B = smallest of L_sym.
    let mut order: Vec<usize> = (0..m).collect();
    order.sort_by(|&a, &b| eig.eigenvalues[b].total_cmp(&eig.eigenvalues[a]));
    let last_beta = *beta.last().unwrap_or(&0.0);
    let mut vectors = vec![0.0; n * q];
    let mut values = vec![0.0; q];
    for (col, &idx) in order.iter().take(q).enumerate() {
        let y = eig.eigenvectors.column(idx);
        let resid = (last_beta * y[m - 1]).abs();
        if resid > 1e-5 {
            return Err(SpectralError::NoConvergence(format!(
                "Ritz residual {resid:.2e} for eigenpair {col}"
            )));
        }
        values[col] = 2.0 - eig.eigenvalues[idx];
        for (j, u) in basis.iter().enumerate() {
            let c = y[j];
            for row in 0..n {
                vectors[row * q + col] += c * u[row];
            }
        }
    }
    // Report in ascending Laplacian eigenvalue order (already is: largest B
    // first = smallest L first).
    Ok((vectors, values))
}

fn dot(a: &[f64], b: &[f64]) -> f64 {
    a.iter().zip(b).map(|(x, y)| x * y).sum()
}

fn normalize(v: &mut [f64]) {
    let norm = dot(v, v).sqrt();
    for x in v.iter_mut() {
        *x /= norm;
    }
}

/// Normalizes each row of an `n x q` embedding to unit length; zero rows are
/// left untouched.
pub fn row_normalize(data: &mut [f64], q: usize) {
    for row in data.chunks_mut(q) {
        let norm = dot(row, row).sqrt();
        if norm > 0.0 {
            for x in row.iter_mut() {
                *x /= norm;
            }
        }
    }
}

/// Lloyd's k-means with k-means++ seeding; returns the labeling with the
/// lowest inertia over `restarts` seeded restarts.
pub fn kmeans(data: &[f64], q: usize, k: usize, seed: u64, restarts: usize, iters: usize) -> Vec<usize> {
    let n = data.len() / q;
    assert!(k >= 1 && n >= 1);
    if k == 1 {
        return vec![0; n];
    }
    let mut best_labels = vec![0; n];
    let mut best_inertia = f64::INFINITY;
    for r in 0..restarts {
        let mut rng = ChaCha8Rng::seed_from_u64(seed.wrapping_add(r as u64));
        let (labels, inertia) = kmeans_once(data, q, k, iters, &mut rng);
        if inertia < best_inertia {
            best_inertia = inertia;
            best_labels = labels;
        }
    }
    best_labels
}

fn sq_dist(a: &[f64], b: &[f64]) -> f64 {
    a.iter().zip(b).map(|(x, y)| (x - y) * (x - y)).sum()
}

fn kmeans_once(data: &[f64], q: usize, k: usize, iters: usize, rng: &mut ChaCha8Rng) -> (Vec<usize>, f64) {
    let n = data.len() / q;
    let row = |i: usize| &data[i * q..(i + 1) * q];
    // k-means++ seeding.
    let mut centers: Vec<f64> = Vec::with_capacity(k * q);
    let first = rng.gen_range(0..n);
    centers.extend_from_slice(row(first));
    let mut dists: Vec<f64> = (0..n).map(|i| sq_dist(row(i), &centers[0..q])).collect();
    while centers.len() < k * q {
        let total: f64 = dists.iter().sum();
        let pick = if total > 0.0 {
            let mut target = rng.gen_range(0.0..total);
            let mut chosen = n - 1;
            for (i, &d) in dists.iter().enumerate() {
                if target < d {
                    chosen = i;
                    break;
                }
                target -= d;
            }
            chosen
        } else {
            rng.gen_range(0..n)
        };
        let c0 = centers.len();
        centers.extend_from_slice(row(pick));
        for i in 0..n {
            let d = sq_dist(row(i), &centers[c0..c0 + q]);
            if d < dists[i] {
                dists[i] = d;
            }
        }
    }
    let mut labels = vec![0usize; n];
    let mut counts = vec![0usize; k];
    for _ in 0..iters {
        let mut changed = false;
        for i in 0..n {
            let mut best = 0;
            let mut best_d = f64::INFINITY;
            for c in 0..k {
                let d = sq_dist(row(i), &centers[c * q..(c + 1) * q]);
                if d < best_d {
                    best_d = d;
                    best = c;
                }
            }
            if labels[i] != best {
                labels[i] = best;
                changed = true;
            }
        }
        centers.iter_mut().for_each(|c| *c = 0.0);
        counts.iter_mut().for_each(|c| *c = 0);
        for i in 0..n {
            counts[labels[i]] += 1;
            for s in 0..q {
                centers[labels[i] * q + s] += data[i * q + s];
            }
        }
        for c in 0..k {
            if counts[c] > 0 {
                for s in 0..q {
                    centers[c * q + s] /= counts[c] as f64;
                }
            } else {
                // Re-seed an empty cluster at the farthest point.
                let far = (0..n)
                    .max_by(|&a, &b| {
                        let da = sq_dist(row(a), &centers[labels[a] * q..(labels[a] + 1) * q]);
                        let db = sq_dist(row(b), &centers[labels[b] * q..(labels[b] + 1) * q]);
                        da.total_cmp(&db)
                    })
                    .unwrap();
                centers[c * q..(c + 1) * q].copy_from_slice(row(far));
            }
        }
        if !changed {
            break;
        }
    }
    let inertia: f64 = (0..n)
        .map(|i| sq_dist(row(i), &centers[labels[i] * q..(labels[i] + 1) * q]))
        .sum();
    (labels, inertia)
}
