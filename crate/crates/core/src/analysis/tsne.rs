use nalgebra::{DMatrix, SymmetricEigen};
use rand_distr::{Distribution, Normal};
use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};
use crate::seeding::{stream, streams};

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum TsneInit {
    Pca,
    Random,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct TsneConfig {
    pub perplexity: f64,
    pub iterations: usize,
    pub init: TsneInit,
    pub early_exaggeration: f64,
    pub exaggeration_iterations: usize,
    /// `None` picks `max(N / early_exaggeration / 4, 50)`.
    pub learning_rate: Option<f64>,
}

impl Default for TsneConfig {
    fn default() -> Self {
        Self {
            perplexity: 30.0,
            iterations: 1000,
            init: TsneInit::Pca,
            early_exaggeration: 12.0,
            exaggeration_iterations: 250,
            learning_rate: None,
        }
    }
}

/// Largest perplexity accepted for `n` points (strictly below `n / 3`).
pub fn max_perplexity(n: usize) -> f64 {
    (n as f64 - 1.0) / 3.0
}

fn sq_distances(x: &[f64], n: usize, d: usize) -> Vec<f64> {
    let mut out = vec![0.0; n * n];
    for i in 0..n {
        for j in i + 1..n {
            let s: f64 = x[i * d..(i + 1) * d]
                .iter()
                .zip(&x[j * d..(j + 1) * d])
                .map(|(a, b)| (a - b) * (a - b))
                .sum();
            out[i * n + j] = s;
            out[j * n + i] = s;
        }
    }
    out
}

/// Row-conditional affinities with per-point bandwidth matched to the
/// perplexity by bisection, symmetrised and normalised to sum 1.
fn joint_probabilities(dist: &[f64], n: usize, perplexity: f64) -> Vec<f64> {
    let target = perplexity.ln();
    let mut p = vec![0.0; n * n];
    let mut row = vec![0.0; n];
    for i in 0..n {
        let d = &dist[i * n..(i + 1) * n];
        let (mut beta, mut lo, mut hi) = (1.0f64, f64::NEG_INFINITY, f64::INFINITY);
        for _ in 0..200 {
            let dmin = d.iter().enumerate().filter(|(j, _)| *j != i).map(|(_, v)| *v).fold(f64::INFINITY, f64::min);
            let mut sum = 0.0;
            let mut weighted = 0.0;
            for j in 0..n {
                row[j] = if j == i { 0.0 } else { (-(d[j] - dmin) * beta).exp() };
                sum += row[j];
                weighted += row[j] * (d[j] - dmin);
            }
            let entropy = sum.ln() + beta * weighted / sum;
            for v in row.iter_mut() {
                *v /= sum;
            }
            let diff = entropy - target;
            if diff.abs() < 1e-5 {
                break;
            }
            if diff > 0.0 {
                lo = beta;
                beta = if hi.is_finite() { (beta + hi) / 2.0 } else { beta * 2.0 };
            } else {
                hi = beta;
                beta = if lo.is_finite() { (beta + lo) / 2.0 } else { beta / 2.0 };
            }
        }
        p[i * n..(i + 1) * n].copy_from_slice(&row);
    }
    let mut joint = vec![0.0; n * n];
    for i in 0..n {
        for j in 0..n {
            joint[i * n + j] = ((p[i * n + j] + p[j * n + i]) / (2.0 * n as f64)).max(1e-12);
        }
    }
    joint
}

/// First two principal component scores, scaled so the first has standard
/// deviation 1e-4. Signs are fixed so the largest-magnitude score of each
/// component is positive.
fn pca_init(x: &[f64], n: usize, d: usize) -> Option<Vec<[f64; 2]>> {
    let mut centered = DMatrix::from_row_slice(n, d, x);
    for c in 0..d {
        let mean = centered.column(c).mean();
        centered.column_mut(c).add_scalar_mut(-mean);
    }
    let gram = &centered * centered.transpose();
    let eig = SymmetricEigen::new(gram);
    let mut order: Vec<usize> = (0..n).collect();
    order.sort_by(|&a, &b| eig.eigenvalues[b].total_cmp(&eig.eigenvalues[a]));
    let mut out = vec![[0.0; 2]; n];
    for (k, &idx) in order.iter().take(2).enumerate() {
        let lambda = eig.eigenvalues[idx];
        if !(lambda > 1e-12) {
            return None;
        }
        let v = eig.eigenvectors.column(idx);
        let pivot = v.iter().copied().fold(0.0f64, |m, a| if a.abs() > m.abs() { a } else { m });
        let sign = if pivot < 0.0 { -1.0 } else { 1.0 };
        for i in 0..n {
            out[i][k] = sign * v[i] * lambda.sqrt();
        }
    }
    let std = (out.iter().map(|p| p[0] * p[0]).sum::<f64>() / n as f64).sqrt();
    for p in &mut out {
        p[0] *= 1e-4 / std;
        p[1] *= 1e-4 / std;
    }
    Some(out)
}

fn center(y: &mut [[f64; 2]]) {
    let n = y.len() as f64;
    let m = y.iter().fold([0.0, 0.0], |a, p| [a[0] + p[0], a[1] + p[1]]);
    for p in y {
        p[0] -= m[0] / n;
        p[1] -= m[1] / n;
    }
}

/// Exact t-SNE of `features` (row-major `n × d`) into two dimensions.
/// Deterministic for fixed inputs; the output is centred.
pub fn tsne_embed(features: &[f64], n: usize, d: usize, seed: u64, cfg: &TsneConfig) -> Result<Vec<[f64; 2]>> {
    if features.len() != n * d || d == 0 {
        return Err(Error::Validation(format!(
            "feature matrix has {} values, expected {n} x {d}",
            features.len()
        )));
    }
    if features.iter().any(|v| !v.is_finite()) {
        return Err(Error::Validation("t-SNE features must be finite".into()));
    }
    if !(cfg.perplexity > 0.0) || n as f64 <= 3.0 * cfg.perplexity {
        return Err(Error::Validation(format!(
            "perplexity {} is too large for {n} points: need n > 3 * perplexity (at most {:.3})",
            cfg.perplexity,
            max_perplexity(n)
        )));
    }
    let p = joint_probabilities(&sq_distances(features, n, d), n, cfg.perplexity);
    let init = match cfg.init {
        TsneInit::Pca => pca_init(features, n, d),
        TsneInit::Random => None,
    };
    let mut y = init.unwrap_or_else(|| {
        let mut rng = stream(seed, &[streams::TSNE]);
        let normal = Normal::new(0.0, 1e-4).expect("valid normal");
        (0..n).map(|_| [normal.sample(&mut rng), normal.sample(&mut rng)]).collect()
    });
    let lr = cfg
        .learning_rate
        .unwrap_or_else(|| (n as f64 / cfg.early_exaggeration / 4.0).max(50.0));
    let mut update = vec![[0.0f64; 2]; n];
    let mut gains = vec![[1.0f64; 2]; n];
    let mut num = vec![0.0f64; n * n];
    let mut grad = vec![[0.0f64; 2]; n];
    for it in 0..cfg.iterations {
        let exaggerating = it < cfg.exaggeration_iterations;
        let exag = if exaggerating { cfg.early_exaggeration } else { 1.0 };
        let momentum = if exaggerating { 0.5 } else { 0.8 };
        let mut zsum = 0.0;
        for i in 0..n {
            for j in i + 1..n {
                let dx = y[i][0] - y[j][0];
                let dy = y[i][1] - y[j][1];
                let q = 1.0 / (1.0 + dx * dx + dy * dy);
                num[i * n + j] = q;
                num[j * n + i] = q;
                zsum += 2.0 * q;
            }
        }
        for i in 0..n {
            let mut g = [0.0, 0.0];
            for j in 0..n {
                if i == j {
                    continue;
                }
                let q = num[i * n + j];
                let m = (exag * p[i * n + j] - q / zsum) * q;
                g[0] += m * (y[i][0] - y[j][0]);
                g[1] += m * (y[i][1] - y[j][1]);
            }
            grad[i] = [4.0 * g[0], 4.0 * g[1]];
        }
        for i in 0..n {
            for k in 0..2 {
                let same_sign = (grad[i][k] > 0.0) == (update[i][k] > 0.0);
                gains[i][k] = if same_sign { (gains[i][k] * 0.8).max(0.01) } else { gains[i][k] + 0.2 };
                update[i][k] = momentum * update[i][k] - lr * gains[i][k] * grad[i][k];
                y[i][k] += update[i][k];
            }
        }
        center(&mut y);
    }
    Ok(y)
}
