//! L2-regularized logistic regression fitted with L-BFGS.

use serde::{Deserialize, Serialize};

use super::{sigmoid, ClassifierError, Result};

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(default)]
pub struct LogisticParams {
    /// Inverse regularization strength.
    pub c: f64,
    pub max_iterations: usize,
    /// Stop once the largest gradient component falls below this.
    pub tolerance: f64,
    /// Standardize features with training mean/std before fitting.
    pub standardize: bool,
}

impl Default for LogisticParams {
    fn default() -> Self {
        Self {
            c: 1.0,
            max_iterations: 1000,
            tolerance: 1e-6,
            standardize: true,
        }
    }
}

impl LogisticParams {
    /// Settings for the stacking meta-learner: plain features, C = 1.
    pub fn meta() -> Self {
        Self {
            standardize: false,
            ..Self::default()
        }
    }

    pub fn validate(&self) -> Result<()> {
        if !(self.c > 0.0) || self.max_iterations == 0 || !(self.tolerance > 0.0) {
            return Err(ClassifierError::InvalidConfig(
                "logistic regression needs C > 0, max_iterations > 0, tolerance > 0".into(),
            ));
        }
        Ok(())
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct LogisticRegression {
    pub weights: Vec<f64>,
    pub intercept: f64,
    /// Per-feature (mean, scale) applied before the linear term.
    pub scaling: Option<Vec<(f64, f64)>>,
    pub iterations: usize,
}

/// Numerically stable log(1 + exp(z)).
fn softplus(z: f64) -> f64 {
    if z > 0.0 {
        z + (-z).exp().ln_1p()
    } else {
        z.exp().ln_1p()
    }
}

impl LogisticRegression {
    pub fn fit(rows: &[&[f64]], y: &[u8], params: &LogisticParams) -> Self {
        let n = rows.len();
        let d = rows.first().map_or(0, |r| r.len());
        let scaling = params.standardize.then(|| {
            (0..d)
                .map(|j| {
                    let mean = rows.iter().map(|r| r[j]).sum::<f64>() / n as f64;
                    let var = rows.iter().map(|r| (r[j] - mean).powi(2)).sum::<f64>() / n as f64;
                    let sd = var.sqrt();
                    (mean, if sd > 1e-12 { sd } else { 1.0 })
                })
                .collect::<Vec<_>>()
        });
        // dense design matrix, row-major, scaled
        let mut x = Vec::with_capacity(n * d);
        for r in rows {
            match &scaling {
                Some(s) => x.extend(r.iter().zip(s).map(|(v, (m, sd))| (v - m) / sd)),
                None => x.extend_from_slice(r),
            }
        }
        let yf: Vec<f64> = y.iter().map(|&v| v as f64).collect();
        let problem = Problem {
            x: &x,
            y: &yf,
            n,
            d,
            alpha: 1.0 / (params.c * n as f64),
        };
        let (theta, iterations) = lbfgs(&problem, params.max_iterations, params.tolerance);
        Self {
            weights: theta[..d].to_vec(),
            intercept: theta[d],
            scaling,
            iterations,
        }
    }

    pub fn decision(&self, x: &[f64]) -> f64 {
        let dot: f64 = match &self.scaling {
            Some(s) => x
                .iter()
                .zip(&self.weights)
                .zip(s)
                .map(|((v, w), (m, sd))| w * (v - m) / sd)
                .sum(),
            None => x.iter().zip(&self.weights).map(|(v, w)| w * v).sum(),
        };
        dot + self.intercept
    }

    pub fn predict_proba(&self, x: &[f64]) -> f64 {
        sigmoid(self.decision(x))
    }
}

/// Mean log-loss plus (alpha/2)·‖w‖² (intercept unpenalized). Minimizer is
/// identical to C·Σ loss + ½‖w‖² with alpha = 1/(C·n).
struct Problem<'a> {
    x: &'a [f64],
    y: &'a [f64],
    n: usize,
    d: usize,
    alpha: f64,
}

impl Problem<'_> {
    fn eval(&self, theta: &[f64], grad: &mut [f64]) -> f64 {
        let (d, n) = (self.d, self.n);
        let w = &theta[..d];
        let b = theta[d];
        grad.fill(0.0);
        let mut loss = 0.0;
        for i in 0..n {
            let row = &self.x[i * d..(i + 1) * d];
            let z: f64 = row.iter().zip(w).map(|(a, b)| a * b).sum::<f64>() + b;
            // y=1: log(1+e^-z); y=0: log(1+e^z)
            loss += if self.y[i] > 0.5 {
                softplus(-z)
            } else {
                softplus(z)
            };
            let r = sigmoid(z) - self.y[i];
            for (g, a) in grad[..d].iter_mut().zip(row) {
                *g += r * a;
            }
            grad[d] += r;
        }
        let inv = 1.0 / n as f64;
        loss *= inv;
        for g in grad.iter_mut() {
            *g *= inv;
        }
        let mut penalty = 0.0;
        for j in 0..d {
            penalty += w[j] * w[j];
            grad[j] += self.alpha * w[j];
        }
        loss + 0.5 * self.alpha * penalty
    }
}

fn dot(a: &[f64], b: &[f64]) -> f64 {
    a.iter().zip(b).map(|(x, y)| x * y).sum()
}

fn lbfgs(problem: &Problem<'_>, max_iter: usize, tol: f64) -> (Vec<f64>, usize) {
    const HISTORY: usize = 10;
    let dim = problem.d + 1;
    let mut theta = vec![0.0; dim];
    let mut grad = vec![0.0; dim];
    let mut f = problem.eval(&theta, &mut grad);
    let mut s_hist: Vec<Vec<f64>> = Vec::new();
    let mut y_hist: Vec<Vec<f64>> = Vec::new();
    let mut rho: Vec<f64> = Vec::new();
    let mut new_theta = vec![0.0; dim];
    let mut new_grad = vec![0.0; dim];

    for iter in 0..max_iter {
        if grad.iter().fold(0.0f64, |m, g| m.max(g.abs())) < tol {
            return (theta, iter);
        }
        // two-loop recursion
        let mut q = grad.clone();
        let mut alphas = vec![0.0; s_hist.len()];
        for k in (0..s_hist.len()).rev() {
            alphas[k] = rho[k] * dot(&s_hist[k], &q);
            for (qi, yi) in q.iter_mut().zip(&y_hist[k]) {
                *qi -= alphas[k] * yi;
            }
        }
        let gamma = match (s_hist.last(), y_hist.last()) {
            (Some(s), Some(y)) => dot(s, y) / dot(y, y),
            _ => 1.0 / grad.iter().map(|g| g * g).sum::<f64>().sqrt().max(1.0),
        };
        for qi in q.iter_mut() {
            *qi *= gamma;
        }
        for k in 0..s_hist.len() {
            let beta = rho[k] * dot(&y_hist[k], &q);
            for (qi, si) in q.iter_mut().zip(&s_hist[k]) {
                *qi += si * (alphas[k] - beta);
            }
        }
        let mut direction: Vec<f64> = q.iter().map(|v| -v).collect();
        let mut slope = dot(&grad, &direction);
        if slope >= 0.0 {
            // not a descent direction; restart from steepest descent
            s_hist.clear();
            y_hist.clear();
            rho.clear();
            direction = grad.iter().map(|g| -g).collect();
            slope = dot(&grad, &direction);
        }
        // backtracking Armijo line search
        let mut step = 1.0;
        let mut accepted = false;
        let mut new_f = f;
        for _ in 0..50 {
            for i in 0..dim {
                new_theta[i] = theta[i] + step * direction[i];
            }
            new_f = problem.eval(&new_theta, &mut new_grad);
            if new_f <= f + 1e-4 * step * slope {
                accepted = true;
                break;
            }
            step *= 0.5;
        }
        if !accepted {
            return (theta, iter);
        }
        let s: Vec<f64> = new_theta.iter().zip(&theta).map(|(a, b)| a - b).collect();
        let yv: Vec<f64> = new_grad.iter().zip(&grad).map(|(a, b)| a - b).collect();
        let sy = dot(&s, &yv);
        std::mem::swap(&mut theta, &mut new_theta);
        std::mem::swap(&mut grad, &mut new_grad);
        let improvement = f - new_f;
        f = new_f;
        if sy > 1e-12 {
            if s_hist.len() == HISTORY {
                s_hist.remove(0);
                y_hist.remove(0);
                rho.remove(0);
            }
            s_hist.push(s);
            y_hist.push(yv);
            rho.push(1.0 / sy);
        }
        if improvement.abs() <= 1e-15 * f.abs().max(1.0) {
            return (theta, iter + 1);
        }
    }
    (theta, max_iter)
}
