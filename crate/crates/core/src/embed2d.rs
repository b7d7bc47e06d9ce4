//! Exact t-SNE: perplexity-calibrated Gaussian affinities in the input space,
//! Student-t affinities in the plane, and momentum gradient descent on
//! KL(P‖Q) with early exaggeration.

use ndarray::{Array2, ArrayView2, Axis};
use rand::SeedableRng;
use rand_chacha::ChaCha8Rng;
use rand_distr::{Distribution, Normal};
use rayon::prelude::*;
use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};

const MAX_BISECTION_STEPS: usize = 200;
const PERPLEXITY_TOL: f64 = 1e-4;

/// 2-D coordinates with the optimization trace.
#[derive(Debug, Clone, PartialEq)]
pub struct Embedding2D {
    /// N×2, rows in input order.
    pub coords: Array2<f64>,
    /// `(iteration, KL)` measured without exaggeration, before each update,
    /// plus a final entry for the last iterate.
    pub kl_trace: Vec<(usize, f64)>,
    /// KL of the returned coordinates: the minimum over the trace.
    pub kl: f64,
    pub perplexity: f64,
    pub seed: u64,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(default)]
pub struct TsneConfig {
    pub perplexity: f64,
    pub iters: usize,
    pub seed: u64,
    pub learning_rate: f64,
    pub early_exaggeration: f64,
    pub exaggeration_iters: usize,
    pub momentum: f64,
    pub final_momentum: f64,
    pub momentum_switch_iter: usize,
    /// Standard deviation of the Gaussian initialization.
    pub init_sigma: f64,
    /// Per-coordinate adaptive step gains (Jacobs' delta-bar-delta).
    pub adaptive_gains: bool,
    pub min_gain: f64,
}

impl Default for TsneConfig {
    fn default() -> Self {
        TsneConfig {
            perplexity: 30.0,
            iters: 1000,
            seed: 0,
            learning_rate: 200.0,
            early_exaggeration: 12.0,
            exaggeration_iters: 250,
            momentum: 0.5,
            final_momentum: 0.8,
            momentum_switch_iter: 250,
            init_sigma: 1e-2,
            adaptive_gains: true,
            min_gain: 0.01,
        }
    }
}

fn squared_distances(points: ArrayView2<f64>) -> Array2<f64> {
    let n = points.nrows();
    let rows: Vec<Vec<f64>> = (0..n)
        .into_par_iter()
        .map(|i| {
            (0..n)
                .map(|j| {
                    points
                        .row(i)
                        .iter()
                        .zip(points.row(j))
                        .map(|(a, b)| (a - b) * (a - b))
                        .sum()
                })
                .collect()
        })
        .collect();
    Array2::from_shape_fn((n, n), |(i, j)| rows[i][j])
}

/// Shannon entropy in bits of `p_j ∝ exp(-beta·s_j)` with the shifts
/// `s_j ≥ 0`, and the normalized distribution.
fn entropy_bits(shifted: &[f64], beta: f64) -> (f64, Vec<f64>) {
    let w: Vec<f64> = shifted.iter().map(|&s| (-beta * s).exp()).collect();
    let z: f64 = w.iter().sum();
    let mean_s: f64 = w.iter().zip(shifted).map(|(w, s)| w * s).sum::<f64>() / z;
    let h_nats = beta * mean_s + z.ln();
    (
        h_nats / std::f64::consts::LN_2,
        w.into_iter().map(|x| x / z).collect(),
    )
}

/// Row-stochastic conditional affinities `P_{j|i}` with per-point precisions.
#[derive(Debug, Clone)]
pub struct Conditionals {
    pub p: Array2<f64>,
    pub beta: Vec<f64>,
}

fn calibrate_row(i: usize, d2: &[f64], perplexity: f64) -> Result<(f64, Vec<f64>)> {
    let others: Vec<f64> = d2
        .iter()
        .enumerate()
        .filter(|&(j, _)| j != i)
        .map(|(_, &d)| d)
        .collect();
    let dmin = others.iter().copied().fold(f64::INFINITY, f64::min);
    let shifted: Vec<f64> = others.iter().map(|d| d - dmin).collect();
    let target = perplexity.log2();
    let closest = shifted.iter().filter(|&&s| s == 0.0).count();
    if (closest as f64) > perplexity + PERPLEXITY_TOL {
        return Err(Error::Calibration {
            index: i,
            reason: format!(
                "{closest} points tie for nearest neighbour, more than the perplexity {perplexity}"
            ),
        });
    }
    let spread: f64 = shifted.iter().sum();
    let mut beta = if spread > 0.0 {
        others.len() as f64 / spread
    } else {
        1.0
    };
    let (mut lo, mut hi) = (0.0, f64::INFINITY);
    let mut best = entropy_bits(&shifted, beta);
    for _ in 0..MAX_BISECTION_STEPS {
        let err = best.0.exp2() - perplexity;
        if err.abs() <= PERPLEXITY_TOL * 0.1 {
            break;
        }
        if best.0 > target {
            lo = beta;
            beta = if hi.is_finite() {
                0.5 * (lo + hi)
            } else {
                beta * 2.0
            };
        } else {
            hi = beta;
            beta = 0.5 * (lo + hi);
        }
        best = entropy_bits(&shifted, beta);
    }
    if (best.0.exp2() - perplexity).abs() > PERPLEXITY_TOL {
        return Err(Error::Calibration {
            index: i,
            reason: format!(
                "achieved perplexity {} for target {perplexity}",
                best.0.exp2()
            ),
        });
    }
    let mut row = best.1;
    row.insert(i, 0.0);
    Ok((beta, row))
}

/// Finds each point's Gaussian precision by bisection so its conditional
/// neighbour distribution has perplexity `perplexity`.
pub fn calibrate_conditionals(points: ArrayView2<f64>, perplexity: f64) -> Result<Conditionals> {
    let n = points.nrows();
    if n < 3 {
        return Err(Error::InvalidArgument(format!(
            "t-SNE needs at least 3 points, got {n}"
        )));
    }
    if !(perplexity > 1.0 && perplexity < n as f64) {
        return Err(Error::InvalidArgument(format!(
            "perplexity must lie in (1, {n}), got {perplexity}"
        )));
    }
    let d2 = squared_distances(points);
    let rows: Vec<(f64, Vec<f64>)> = (0..n)
        .into_par_iter()
        .map(|i| calibrate_row(i, d2.row(i).as_slice().expect("contiguous"), perplexity))
        .collect::<Result<_>>()?;
    let mut p = Array2::zeros((n, n));
    let mut beta = Vec::with_capacity(n);
    for (i, (b, row)) in rows.into_iter().enumerate() {
        beta.push(b);
        for (j, x) in row.into_iter().enumerate() {
            p[[i, j]] = x;
        }
    }
    Ok(Conditionals { p, beta })
}

/// Joint affinities `P_ij = (P_{j|i} + P_{i|j}) / 2N`.
pub fn calibrate_affinities(points: ArrayView2<f64>, perplexity: f64) -> Result<Array2<f64>> {
    let c = calibrate_conditionals(points, perplexity)?;
    let n = c.p.nrows() as f64;
    Ok((&c.p + &c.p.t()) / (2.0 * n))
}

/// Student-t kernel `1 / (1 + |y_i - y_j|²)` with a zero diagonal, and its
/// off-diagonal sum.
fn student_kernel(y: ArrayView2<f64>) -> (Array2<f64>, f64) {
    let n = y.nrows();
    let rows: Vec<Vec<f64>> = (0..n)
        .into_par_iter()
        .map(|i| {
            (0..n)
                .map(|j| {
                    if i == j {
                        0.0
                    } else {
                        let dx = y[[i, 0]] - y[[j, 0]];
                        let dy = y[[i, 1]] - y[[j, 1]];
                        1.0 / (1.0 + dx * dx + dy * dy)
                    }
                })
                .collect()
        })
        .collect();
    let z = rows.iter().map(|r| r.iter().sum::<f64>()).sum();
    (Array2::from_shape_fn((n, n), |(i, j)| rows[i][j]), z)
}

fn kl_from_kernel(p: ArrayView2<f64>, num: &Array2<f64>, z: f64) -> f64 {
    p.iter()
        .zip(num.iter())
        .filter(|(&p, _)| p > 0.0)
        .map(|(&p, &q)| p * (p / (q / z)).ln())
        .sum()
}

/// KL(P‖Q) for the embedding `y` (N×2).
pub fn kl_divergence(p: ArrayView2<f64>, y: ArrayView2<f64>) -> f64 {
    let (num, z) = student_kernel(y);
    kl_from_kernel(p, &num, z)
}

fn gradient_from_kernel(
    p: ArrayView2<f64>,
    y: ArrayView2<f64>,
    num: &Array2<f64>,
    z: f64,
    exaggeration: f64,
) -> Array2<f64> {
    let n = y.nrows();
    let rows: Vec<[f64; 2]> = (0..n)
        .into_par_iter()
        .map(|i| {
            let mut g = [0.0; 2];
            for j in 0..n {
                let m = (exaggeration * p[[i, j]] - num[[i, j]] / z) * num[[i, j]];
                g[0] += m * (y[[i, 0]] - y[[j, 0]]);
                g[1] += m * (y[[i, 1]] - y[[j, 1]]);
            }
            [4.0 * g[0], 4.0 * g[1]]
        })
        .collect();
    Array2::from_shape_fn((n, 2), |(i, d)| rows[i][d])
}

/// Gradient of KL(P‖Q) with respect to every coordinate of `y`.
pub fn kl_gradient(p: ArrayView2<f64>, y: ArrayView2<f64>) -> Array2<f64> {
    let (num, z) = student_kernel(y);
    gradient_from_kernel(p, y, &num, z, 1.0)
}

/// Embeds `points` with default settings and the given perplexity, iteration
/// count and seed; point `i` draws its initial position from stream `i`.
pub fn tsne(
    points: ArrayView2<f64>,
    perplexity: f64,
    iters: usize,
    seed: u64,
) -> Result<Embedding2D> {
    let keys: Vec<u64> = (0..points.nrows() as u64).collect();
    tsne_keyed(
        points,
        &keys,
        &TsneConfig {
            perplexity,
            iters,
            seed,
            ..TsneConfig::default()
        },
    )
}

/// t-SNE where each point carries a unique key. Initial positions are drawn
/// from a per-key stream and the optimization runs in key order, so permuting
/// the input (with its keys) permutes the output identically.
pub fn tsne_keyed(points: ArrayView2<f64>, keys: &[u64], cfg: &TsneConfig) -> Result<Embedding2D> {
    let n = points.nrows();
    if keys.len() != n {
        return Err(Error::DimensionMismatch {
            what: "t-SNE keys vs points",
            expected: n,
            got: keys.len(),
        });
    }
    if cfg.iters < 1 {
        return Err(Error::InvalidArgument(
            "t-SNE needs at least one iteration".into(),
        ));
    }
    let mut order: Vec<usize> = (0..n).collect();
    order.sort_by_key(|&i| keys[i]);
    if order.windows(2).any(|w| keys[w[0]] == keys[w[1]]) {
        return Err(Error::InvalidArgument(
            "t-SNE point keys must be unique".into(),
        ));
    }
    let canonical = points.select(Axis(0), &order);
    let p = calibrate_affinities(canonical.view(), cfg.perplexity)?;

    let normal = Normal::new(0.0, cfg.init_sigma)
        .map_err(|e| Error::InvalidArgument(format!("init_sigma: {e}")))?;
    let mut y = Array2::zeros((n, 2));
    for (row, &i) in order.iter().enumerate() {
        let mut rng = ChaCha8Rng::seed_from_u64(cfg.seed);
        rng.set_stream(keys[i]);
        y[[row, 0]] = normal.sample(&mut rng);
        y[[row, 1]] = normal.sample(&mut rng);
    }

    let mut velocity = Array2::<f64>::zeros((n, 2));
    let mut gains = Array2::<f64>::ones((n, 2));
    let mut trace = Vec::with_capacity(cfg.iters + 1);
    let mut best = (f64::INFINITY, y.clone());
    for it in 0..cfg.iters {
        let (num, z) = student_kernel(y.view());
        let kl = kl_from_kernel(p.view(), &num, z);
        trace.push((it, kl));
        if kl < best.0 {
            best = (kl, y.clone());
        }
        let exaggeration = if it < cfg.exaggeration_iters {
            cfg.early_exaggeration
        } else {
            1.0
        };
        let momentum = if it < cfg.momentum_switch_iter {
            cfg.momentum
        } else {
            cfg.final_momentum
        };
        let grad = gradient_from_kernel(p.view(), y.view(), &num, z, exaggeration);
        if cfg.adaptive_gains {
            // Grow the step where the gradient keeps pointing the same way as
            // the last update, shrink it where it flips.
            ndarray::Zip::from(&mut gains)
                .and(&grad)
                .and(&velocity)
                .for_each(|gain, &g, &v| {
                    *gain = if (g > 0.0) != (v > 0.0) {
                        *gain + 0.2
                    } else {
                        *gain * 0.8
                    };
                    *gain = gain.max(cfg.min_gain);
                });
        }
        ndarray::Zip::from(&mut velocity)
            .and(&grad)
            .and(&gains)
            .for_each(|v, &g, &gain| *v = momentum * *v - cfg.learning_rate * gain * g);
        y += &velocity;
        if !y.iter().all(|x| x.is_finite()) {
            return Err(Error::NonFinite(format!(
                "t-SNE coordinates at iteration {it}"
            )));
        }
    }
    let kl = kl_divergence(p.view(), y.view());
    trace.push((cfg.iters, kl));
    if kl < best.0 {
        best = (kl, y);
    }

    let mut coords = Array2::zeros((n, 2));
    for (row, &i) in order.iter().enumerate() {
        coords.row_mut(i).assign(&best.1.row(row));
    }
    Ok(Embedding2D {
        coords,
        kl_trace: trace,
        kl: best.0,
        perplexity: cfg.perplexity,
        seed: cfg.seed,
    })
}
