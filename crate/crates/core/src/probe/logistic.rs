use crate::error::{Error, Result};

/// Ridge penalty on the weights (not the bias). Keeps the optimum finite on
/// linearly separable data so gradient descent can meet its tolerance.
const L2: f64 = 1e-3;
/// Gradient-norm stopping tolerance.
const TOLERANCE: f64 = 1e-6;
const MAX_ITERS: usize = 100_000;

/// Binary logistic regression on standardized features, fit by full-batch
/// gradient descent with Nesterov momentum.
#[derive(Clone, Debug, PartialEq)]
pub struct LogisticRegression {
    mean: Vec<f64>,
    scale: Vec<f64>,
    weights: Vec<f64>,
    bias: f64,
    pub iterations: usize,
    pub converged: bool,
}

impl LogisticRegression {
    pub fn fit(x: &[Vec<f64>], y: &[bool]) -> Result<Self> {
        let n = x.len();
        if n == 0 || n != y.len() {
            return Err(Error::Invalid("logistic regression needs matching non-empty data".into()));
        }
        let pos = y.iter().filter(|&&v| v).count();
        if pos == 0 || pos == n {
            return Err(Error::Invalid("logistic regression needs both classes".into()));
        }
        let d = x[0].len();
        if x.iter().any(|r| r.len() != d) {
            return Err(Error::Invalid("ragged feature rows".into()));
        }
        let nf = n as f64;
        let mean: Vec<f64> = (0..d).map(|j| x.iter().map(|r| r[j]).sum::<f64>() / nf).collect();
        let scale: Vec<f64> = (0..d)
            .map(|j| {
                let var = x.iter().map(|r| (r[j] - mean[j]).powi(2)).sum::<f64>() / nf;
                if var > 1e-24 {
                    var.sqrt()
                } else {
                    1.0
                }
            })
            .collect();
        let z: Vec<Vec<f64>> = x
            .iter()
            .map(|r| r.iter().enumerate().map(|(j, &v)| (v - mean[j]) / scale[j]).collect())
            .collect();
        let lipschitz = 0.25 * top_eigenvalue(&z) + L2;
        let lr = 1.0 / lipschitz;
        let (mut w, mut b) = (vec![0.0; d], 0.0);
        // Nesterov momentum with a restart whenever the loss goes up.
        let (mut yw, mut yb) = (w.clone(), b);
        let mut t = 1.0f64;
        let mut prev_loss = f64::INFINITY;
        let mut converged = false;
        let mut iterations = 0;
        while iterations < MAX_ITERS {
            let (loss, gw, gb) = loss_and_grad(&z, y, &yw, yb);
            let norm = (gw.iter().map(|g| g * g).sum::<f64>() + gb * gb).sqrt();
            if norm < TOLERANCE {
                w = yw;
                b = yb;
                converged = true;
                break;
            }
            let nw: Vec<f64> = yw.iter().zip(&gw).map(|(v, g)| v - lr * g).collect();
            let nb = yb - lr * gb;
            if loss > prev_loss {
                t = 1.0;
            }
            prev_loss = loss;
            let nt = (1.0 + (1.0 + 4.0 * t * t).sqrt()) / 2.0;
            let mom = (t - 1.0) / nt;
            yw = nw.iter().zip(&w).map(|(n, o)| n + mom * (n - o)).collect();
            yb = nb + mom * (nb - b);
            w = nw;
            b = nb;
            t = nt;
            iterations += 1;
        }
        if !converged {
            log::warn!("logistic regression stopped after {MAX_ITERS} iterations without meeting tolerance");
        }
        Ok(LogisticRegression {
            mean,
            scale,
            weights: w,
            bias: b,
            iterations,
            converged,
        })
    }

    /// Probability of the positive class.
    pub fn probability(&self, x: &[f64]) -> f64 {
        let z: f64 = x
            .iter()
            .enumerate()
            .map(|(j, &v)| self.weights[j] * (v - self.mean[j]) / self.scale[j])
            .sum();
        sigmoid(z + self.bias)
    }

    pub fn predict(&self, x: &[f64]) -> bool {
        self.probability(x) >= 0.5
    }
}

/// Mean logistic loss with the ridge term, and its gradient.
fn loss_and_grad(z: &[Vec<f64>], y: &[bool], w: &[f64], b: f64) -> (f64, Vec<f64>, f64) {
    let nf = z.len() as f64;
    let mut gw: Vec<f64> = w.iter().map(|&wj| L2 * wj).collect();
    let mut gb = 0.0;
    let mut loss = 0.5 * L2 * w.iter().map(|v| v * v).sum::<f64>();
    for (r, &t) in z.iter().zip(y) {
        let m = dot(w, r) + b;
        // log(1 + e^{-s·m}) with s = ±1, computed stably.
        let sm = if t { m } else { -m };
        loss += (softplus(-sm)) / nf;
        let s = sigmoid(m) - if t { 1.0 } else { 0.0 };
        gw.iter_mut().zip(r).for_each(|(g, &v)| *g += s * v / nf);
        gb += s / nf;
    }
    (loss, gw, gb)
}

/// Largest eigenvalue of `[z, 1]ᵀ[z, 1] / n` by power iteration.
fn top_eigenvalue(z: &[Vec<f64>]) -> f64 {
    let d = z[0].len() + 1;
    let nf = z.len() as f64;
    let mut v = vec![1.0 / (d as f64).sqrt(); d];
    let mut lambda = 0.0;
    for _ in 0..100 {
        let mut next = vec![0.0; d];
        for r in z {
            let s = dot(&r[..], &v[..d - 1]) + v[d - 1];
            next.iter_mut().zip(r.iter().chain(std::iter::once(&1.0))).for_each(|(a, &x)| *a += s * x / nf);
        }
        let norm = next.iter().map(|x| x * x).sum::<f64>().sqrt();
        if norm == 0.0 {
            return 0.0;
        }
        lambda = norm;
        v = next.into_iter().map(|x| x / norm).collect();
    }
    // Small safety margin over the iterate, which approaches from below.
    lambda * 1.05
}

fn softplus(x: f64) -> f64 {
    if x > 0.0 {
        x + (-x).exp().ln_1p()
    } else {
        x.exp().ln_1p()
    }
}

fn dot(a: &[f64], b: &[f64]) -> f64 {
    a.iter().zip(b).map(|(x, y)| x * y).sum()
}

fn sigmoid(z: f64) -> f64 {
    if z >= 0.0 {
        1.0 / (1.0 + (-z).exp())
    } else {
        let e = z.exp();
        e / (1.0 + e)
    }
}
