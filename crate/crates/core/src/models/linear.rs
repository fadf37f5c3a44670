use nalgebra::{DMatrix, DVector};
use serde::{Deserialize, Serialize};

use super::{Matrix, ModelError};

/// Ridge added to the scaled Gram matrix when it is (near) singular.
const RIDGE: f64 = 1e-6;
/// Smallest accepted ratio between the squared extreme Cholesky pivots.
const MIN_PIVOT_RATIO: f64 = 1e-12;
const LOGISTIC_TOL: f64 = 1e-6;
const LOGISTIC_MAX_ITER: usize = 100;
/// Small ridge keeping the logistic Hessian invertible on separable data.
const LOGISTIC_RIDGE: f64 = 1e-8;

/// Column means and standard deviations; constant columns get `sd = 0`.
struct Scaler {
    mean: Vec<f64>,
    sd: Vec<f64>,
}

impl Scaler {
    fn fit(x: &Matrix) -> Self {
        let n = x.n_rows() as f64;
        let (mut mean, mut sd) = (Vec::new(), Vec::new());
        for c in 0..x.n_cols() {
            let col = x.column(c);
            let m = col.iter().sum::<f64>() / n;
            let var = col.iter().map(|v| (v - m).powi(2)).sum::<f64>() / n;
            mean.push(m);
            sd.push(var.sqrt());
        }
        Scaler { mean, sd }
    }

    /// Standardized design; constant columns become all-zero.
    fn transform(&self, x: &Matrix) -> DMatrix<f64> {
        DMatrix::from_fn(x.n_rows(), x.n_cols(), |r, c| {
            if self.sd[c] > 0.0 {
                (x.get(r, c) - self.mean[c]) / self.sd[c]
            } else {
                0.0
            }
        })
    }

    /// Maps standardized coefficients back to the raw feature scale.
    fn unscale(&self, w_std: &[f64], b_std: f64) -> (Vec<f64>, f64) {
        let mut intercept = b_std;
        let w = w_std
            .iter()
            .enumerate()
            .map(|(j, &w)| {
                if self.sd[j] > 0.0 {
                    let raw = w / self.sd[j];
                    intercept -= raw * self.mean[j];
                    raw
                } else {
                    0.0
                }
            })
            .collect();
        (w, intercept)
    }
}

/// Solves `G w = b` for symmetric PSD `G`, adding a ridge when Cholesky
/// fails or its pivots show near rank-deficiency. Returns whether the ridge
/// was needed.
fn solve_spd(g: DMatrix<f64>, b: &DVector<f64>) -> (DVector<f64>, bool) {
    let p = g.nrows();
    if p == 0 {
        return (DVector::zeros(0), false);
    }
    if let Some(ch) = g.clone().cholesky() {
        let diag = ch.l_dirty().diagonal();
        let (lo, hi) = diag
            .iter()
            .fold((f64::INFINITY, 0.0f64), |(lo, hi), &d| (lo.min(d * d), hi.max(d * d)));
        if hi > 0.0 && lo / hi > MIN_PIVOT_RATIO {
            return (ch.solve(b), false);
        }
    }
    let ridged = g + DMatrix::identity(p, p) * RIDGE;
    let ch = ridged.cholesky().expect("ridged Gram matrix is positive definite");
    (ch.solve(b), true)
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct LinearModel {
    pub weights: Vec<f64>,
    pub intercept: f64,
    /// The normal equations were singular and a small ridge was applied.
    pub singular: bool,
}

impl LinearModel {
    pub fn predict(&self, x: &[f64]) -> f64 {
        self.intercept + self.weights.iter().zip(x).map(|(w, v)| w * v).sum::<f64>()
    }
}

/// Ordinary least squares on standardized features.
pub fn fit_linear(x: &Matrix, y: &[f64]) -> Result<LinearModel, ModelError> {
    check(x, y)?;
    let n = x.n_rows() as f64;
    let scaler = Scaler::fit(x);
    let z = scaler.transform(x);
    let y_mean = y.iter().sum::<f64>() / n;
    let yc = DVector::from_iterator(y.len(), y.iter().map(|v| v - y_mean));
    let gram = z.tr_mul(&z) / n;
    let rhs = z.tr_mul(&yc) / n;
    let (w, singular) = solve_spd(gram, &rhs);
    let (weights, intercept) = scaler.unscale(w.as_slice(), y_mean);
    Ok(LinearModel {
        weights,
        intercept,
        singular,
    })
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct LogisticModel {
    pub weights: Vec<f64>,
    pub intercept: f64,
    pub iterations: usize,
    pub converged: bool,
}

fn sigmoid(t: f64) -> f64 {
    if t >= 0.0 {
        1.0 / (1.0 + (-t).exp())
    } else {
        let e = t.exp();
        e / (1.0 + e)
    }
}

impl LogisticModel {
    pub fn predict_proba(&self, x: &[f64]) -> f64 {
        sigmoid(self.intercept + self.weights.iter().zip(x).map(|(w, v)| w * v).sum::<f64>())
    }
}

/// Maximum-likelihood logistic regression on standardized features, by
/// Newton steps with step halving until the gradient norm drops below 1e-6.
pub fn fit_logistic(x: &Matrix, y: &[f64]) -> Result<LogisticModel, ModelError> {
    check(x, y)?;
    if let Some(&bad) = y.iter().find(|&&v| v != 0.0 && v != 1.0) {
        return Err(ModelError::NonBinaryTarget(bad));
    }
    let n = x.n_rows();
    let p = x.n_cols();
    let scaler = Scaler::fit(x);
    let z = scaler.transform(x);
    // design with a leading intercept column
    let d = DMatrix::from_fn(n, p + 1, |r, c| if c == 0 { 1.0 } else { z[(r, c - 1)] });
    let yv = DVector::from_column_slice(y);
    let nf = n as f64;

    let log_lik = |beta: &DVector<f64>| -> f64 {
        let eta = &d * beta;
        let ll: f64 = eta
            .iter()
            .zip(yv.iter())
            .map(|(&e, &t)| {
                // log(1 + exp(e)) computed stably
                let softplus = if e > 0.0 {
                    e + (-e).exp().ln_1p()
                } else {
                    e.exp().ln_1p()
                };
                t * e - softplus
            })
            .sum();
        ll / nf - 0.5 * LOGISTIC_RIDGE * beta.rows(1, p).norm_squared()
    };

    let mut beta = DVector::zeros(p + 1);
    let mut ll = log_lik(&beta);
    let mut iterations = 0;
    let mut converged = false;
    while iterations < LOGISTIC_MAX_ITER {
        let mu = (&d * &beta).map(sigmoid);
        let mut grad = d.tr_mul(&(&yv - &mu)) / nf;
        let mut penalty = beta.clone() * LOGISTIC_RIDGE;
        penalty[0] = 0.0;
        grad -= &penalty;
        if grad.norm() < LOGISTIC_TOL {
            converged = true;
            break;
        }
        let w = mu.map(|m| m * (1.0 - m));
        let dw = DMatrix::from_fn(n, p + 1, |r, c| d[(r, c)] * w[r]);
        let mut h = d.tr_mul(&dw) / nf;
        for i in 1..=p {
            h[(i, i)] += LOGISTIC_RIDGE;
        }
        let (step, _) = solve_spd(h, &grad);
        let mut t = 1.0;
        loop {
            let cand = &beta + &step * t;
            let cand_ll = log_lik(&cand);
            if cand_ll >= ll || t < 1e-10 {
                beta = cand;
                ll = cand_ll;
                break;
            }
            t *= 0.5;
        }
        iterations += 1;
    }
    let (weights, intercept) = scaler.unscale(&beta.as_slice()[1..], beta[0]);
    Ok(LogisticModel {
        weights,
        intercept,
        iterations,
        converged,
    })
}

fn check(x: &Matrix, y: &[f64]) -> Result<(), ModelError> {
    if x.n_rows() == 0 {
        return Err(ModelError::EmptyData);
    }
    if y.len() != x.n_rows() {
        return Err(ModelError::DimensionMismatch {
            expected: x.n_rows(),
            found: y.len(),
        });
    }
    Ok(())
}
