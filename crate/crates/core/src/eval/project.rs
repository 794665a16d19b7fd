//! 2-D projection of feature sets onto their top two principal components,
//! by power iteration with deflation. Deterministic given the seed and the
//! fixed iteration count.

use crate::error::{Error, Result};
use crate::numerics::rng::SeededRng;

const POWER_ITERATIONS: usize = 200;

/// Projection result: the 2-D points plus the principal axes and their
/// eigenvalues (sample covariance, divisor k-1).
#[derive(Debug, Clone, PartialEq)]
pub struct Projection {
    pub points: Vec<[f64; 2]>,
    pub axes: [Vec<f64>; 2],
    pub eigenvalues: [f64; 2],
}

fn covariance(centered: &[Vec<f64>], dim: usize) -> Vec<f64> {
    let k = centered.len();
    let mut cov = vec![0.0; dim * dim];
    for row in centered {
        for i in 0..dim {
            let xi = row[i];
            if xi == 0.0 {
                continue;
            }
            for j in 0..dim {
                cov[i * dim + j] += xi * row[j];
            }
        }
    }
    let scale = 1.0 / (k as f64 - 1.0);
    cov.iter_mut().for_each(|v| *v *= scale);
    cov
}

fn matvec(m: &[f64], v: &[f64], dim: usize, out: &mut [f64]) {
    for i in 0..dim {
        out[i] = m[i * dim..(i + 1) * dim]
            .iter()
            .zip(v)
            .map(|(a, b)| a * b)
            .sum();
    }
}

fn normalize(v: &mut [f64]) -> f64 {
    let norm = v.iter().map(|x| x * x).sum::<f64>().sqrt();
    if norm > 0.0 {
        v.iter_mut().for_each(|x| *x /= norm);
    }
    norm
}

fn orthogonalize(v: &mut [f64], against: &[f64]) {
    let dot: f64 = v.iter().zip(against).map(|(a, b)| a * b).sum();
    for (x, a) in v.iter_mut().zip(against) {
        *x -= dot * a;
    }
}

/// Top-two principal directions and eigenvalues of the feature set.
pub fn top_two_components(features: &[Vec<f64>], seed: u64) -> Result<Projection> {
    if features.len() < 3 {
        return Err(Error::invalid(format!(
            "projection needs at least 3 vectors, got {}",
            features.len()
        )));
    }
    let dim = features[0].len();
    if dim < 2 || features.iter().any(|f| f.len() != dim) {
        return Err(Error::shape("feature vectors must share a dimension >= 2"));
    }

    let k = features.len();
    let mut mean = vec![0.0; dim];
    for f in features {
        for (m, x) in mean.iter_mut().zip(f) {
            *m += x;
        }
    }
    mean.iter_mut().for_each(|m| *m /= k as f64);
    let centered: Vec<Vec<f64>> = features
        .iter()
        .map(|f| f.iter().zip(&mean).map(|(x, m)| x - m).collect())
        .collect();

    let cov = covariance(&centered, dim);
    let total_variance: f64 = (0..dim).map(|i| cov[i * dim + i]).sum();
    if total_variance <= 1e-12 {
        return Err(Error::invalid("rank-0 input: no variance to project"));
    }

    let mut rng = SeededRng::new(seed).derive("pca-init");
    let mut axes = [vec![0.0; dim], vec![0.0; dim]];
    let mut eigenvalues = [0.0; 2];
    let mut buf = vec![0.0; dim];
    for comp in 0..2 {
        let mut v = vec![0.0; dim];
        rng.fill_uniform(&mut v, -1.0, 1.0);
        if comp == 1 {
            orthogonalize(&mut v, &axes[0]);
        }
        normalize(&mut v);
        for _ in 0..POWER_ITERATIONS {
            matvec(&cov, &v, dim, &mut buf);
            if comp == 1 {
                orthogonalize(&mut buf, &axes[0]);
            }
            if normalize(&mut buf) == 0.0 {
                // residual is numerically zero: keep the current direction
                break;
            }
            if comp == 1 {
                // Normalizing can re-amplify rounding noise along the first
                // axis when the residual spectrum is (near) zero; project it
                // out again on the unit vector.
                orthogonalize(&mut buf, &axes[0]);
                if normalize(&mut buf) == 0.0 {
                    break;
                }
            }
            v.copy_from_slice(&buf);
        }
        if comp == 1 {
            orthogonalize(&mut v, &axes[0]);
            if normalize(&mut v) == 0.0 {
                // The orthogonal complement carries no signal at all; any
                // unit vector orthogonal to the first axis serves. Take the
                // basis vector least aligned with it.
                let j = (0..dim)
                    .min_by(|&a, &b| {
                        axes[0][a]
                            .abs()
                            .partial_cmp(&axes[0][b].abs())
                            .expect("axis entries are finite")
                    })
                    .expect("dim >= 2");
                v.iter_mut().for_each(|x| *x = 0.0);
                v[j] = 1.0;
                orthogonalize(&mut v, &axes[0]);
                normalize(&mut v);
            }
        }
        matvec(&cov, &v, dim, &mut buf);
        eigenvalues[comp] = v.iter().zip(&buf).map(|(a, b)| a * b).sum();
        axes[comp] = v;
    }

    let points = centered
        .iter()
        .map(|row| {
            [
                row.iter().zip(&axes[0]).map(|(a, b)| a * b).sum(),
                row.iter().zip(&axes[1]).map(|(a, b)| a * b).sum(),
            ]
        })
        .collect();

    Ok(Projection {
        points,
        axes,
        eigenvalues,
    })
}

/// Mean-centered projection onto the top two principal directions.
pub fn project_2d(features: &[Vec<f64>], seed: u64) -> Result<Vec<[f64; 2]>> {
    Ok(top_two_components(features, seed)?.points)
}
