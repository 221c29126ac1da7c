//! Multinomial logistic regression trained by full-batch gradient descent
//! with Armijo backtracking line search.
//!
//! The weight matrix is `(p + 1) × n_classes` with the intercept in row 0 and
//! class 0 as the reference (its column is pinned at zero). The objective is
//! mean cross-entropy plus `(l2/2)·‖W‖²` over the non-intercept,
//! non-reference entries.

use crate::error::Error;
use crate::linalg::Matrix;
use crate::num::Real;
use crate::textio;
use crate::{Result, Scalar};

use super::{softmax, Posterior};

const ARMIJO_C: f64 = 1e-4;
const ARMIJO_SHRINK: f64 = 0.5;
const MIN_STEP: f64 = 1e-20;

/// Fitted multinomial logistic regression.
#[derive(Debug, Clone, PartialEq)]
pub struct MlrModel<F> {
    /// `(p + 1) × n_classes`; row 0 is the intercept, column 0 is zero.
    weights: Matrix<F>,
}

/// Fit result with optimizer diagnostics.
#[derive(Debug, Clone)]
pub struct MlrFit<F> {
    pub model: MlrModel<F>,
    pub iterations: usize,
    pub final_grad_max: F,
    pub converged: bool,
    /// Objective after every accepted step (index 0 is the starting loss).
    pub loss_trace: Vec<F>,
}

fn augment<F: Real>(x: &Matrix<F>) -> Matrix<F> {
    let (n, p) = (x.rows(), x.cols());
    let mut xa = Matrix::zeros(n, p + 1);
    for i in 0..n {
        xa[(i, 0)] = F::one();
        xa.row_mut(i)[1..].copy_from_slice(x.row(i));
    }
    xa
}

/// Mean cross-entropy + ridge penalty at the given weights. `x` is the raw
/// (un-augmented) feature matrix.
pub fn mlr_loss<F: Real>(weights: &Matrix<F>, x: &Matrix<F>, y: &[usize], l2: f64) -> F {
    loss_augmented(weights, &augment(x), y, F::from_f64_lossy(l2))
}

/// Analytic gradient of [`mlr_loss`] at the given weights.
pub fn mlr_gradient<F: Real>(weights: &Matrix<F>, x: &Matrix<F>, y: &[usize], l2: f64) -> Matrix<F> {
    gradient(weights, &augment(x), y, F::from_f64_lossy(l2))
}

fn loss_augmented<F: Real>(weights: &Matrix<F>, xa: &Matrix<F>, y: &[usize], l2: F) -> F {
    let n = xa.rows();
    let mut total = F::zero();
    for (i, &label) in y.iter().enumerate() {
        let logits = logits_for(weights, xa.row(i));
        let max = logits.iter().fold(F::neg_infinity(), |m, &v| m.max(v));
        let log_sum = logits.iter().map(|&v| (v - max).exp()).sum::<F>().ln() + max;
        total += log_sum - logits[label];
    }
    let mut penalty = F::zero();
    for j in 1..weights.rows() {
        for k in 1..weights.cols() {
            penalty += weights[(j, k)] * weights[(j, k)];
        }
    }
    total / F::from_count(n) + F::from_f64_lossy(0.5) * l2 * penalty
}

fn logits_for<F: Real>(weights: &Matrix<F>, xrow: &[F]) -> Vec<F> {
    (0..weights.cols())
        .map(|k| {
            xrow.iter()
                .enumerate()
                .map(|(j, &v)| v * weights[(j, k)])
                .sum()
        })
        .collect()
}

/// Analytic gradient: `(1/n)·X̃ᵀ(P − Y) + l2·W` with the intercept row
/// unpenalized and the reference column pinned at zero.
fn gradient<F: Real>(weights: &Matrix<F>, xa: &Matrix<F>, y: &[usize], l2: F) -> Matrix<F> {
    let (n, cols) = (xa.rows(), weights.cols());
    let mut grad: Matrix<F> = Matrix::zeros(weights.rows(), cols);
    for (i, &label) in y.iter().enumerate() {
        let probs = softmax(&logits_for(weights, xa.row(i)));
        let xrow = xa.row(i);
        for k in 0..cols {
            let residual = probs[k] - if k == label { F::one() } else { F::zero() };
            for (j, &v) in xrow.iter().enumerate() {
                grad[(j, k)] += v * residual;
            }
        }
    }
    let nf = F::from_count(n);
    for j in 0..weights.rows() {
        for k in 0..cols {
            grad[(j, k)] /= nf;
        }
    }
    for j in 1..weights.rows() {
        for k in 1..cols {
            grad[(j, k)] += l2 * weights[(j, k)];
        }
    }
    for j in 0..weights.rows() {
        grad[(j, 0)] = F::zero();
    }
    grad
}

/// Trains by gradient descent, stopping when the gradient max-norm falls
/// below `tol` or after `max_iter` accepted steps.
pub fn mlr_fit<F: Real>(
    x: &Matrix<F>,
    y: &[usize],
    n_classes: usize,
    l2: f64,
    tol: f64,
    max_iter: usize,
) -> Result<MlrFit<F>> {
    if let Some(&bad) = y.iter().find(|&&c| c >= n_classes) {
        return Err(Error::Validation(format!(
            "label {bad} out of range for {n_classes} classes"
        )));
    }
    if y.len() != x.rows() || x.rows() == 0 {
        return Err(Error::Validation(format!(
            "{} labels for {} training rows",
            y.len(),
            x.rows()
        )));
    }
    let xa = augment(x);
    let l2f = F::from_f64_lossy(l2);
    let tolf = F::from_f64_lossy(tol);
    let c = F::from_f64_lossy(ARMIJO_C);
    let shrink = F::from_f64_lossy(ARMIJO_SHRINK);
    let min_step = F::from_f64_lossy(MIN_STEP);

    let mut weights: Matrix<F> = Matrix::zeros(xa.cols(), n_classes);
    let mut loss = loss_augmented(&weights, &xa, y, l2f);
    let mut loss_trace = vec![loss];
    let mut converged = false;
    let mut final_grad_max = F::zero();
    let mut iterations = 0;

    for iter in 0..max_iter {
        if !loss.is_finite() {
            return Err(Error::Numeric(format!(
                "non-finite loss at iteration {iter}"
            )));
        }
        let grad = gradient(&weights, &xa, y, l2f);
        final_grad_max = grad.max_abs();
        if final_grad_max < tolf {
            converged = true;
            break;
        }
        let grad_norm_sq = grad.data().iter().map(|&g| g * g).sum::<F>();

        let mut step = F::one();
        let mut accepted = None;
        while step >= min_step {
            let mut candidate = weights.clone();
            for j in 0..candidate.rows() {
                for k in 0..candidate.cols() {
                    candidate[(j, k)] -= step * grad[(j, k)];
                }
            }
            let candidate_loss = loss_augmented(&candidate, &xa, y, l2f);
            if !candidate_loss.is_finite() {
                return Err(Error::Numeric(format!(
                    "non-finite loss at iteration {iter}, step size {step}"
                )));
            }
            if candidate_loss <= loss - c * step * grad_norm_sq {
                accepted = Some((candidate, candidate_loss));
                break;
            }
            step *= shrink;
        }
        let Some((next, next_loss)) = accepted else {
            // no productive step exists at floating-point resolution
            break;
        };
        weights = next;
        loss = next_loss;
        loss_trace.push(loss);
        iterations = iter + 1;
    }

    Ok(MlrFit {
        model: MlrModel { weights },
        iterations,
        final_grad_max,
        converged,
        loss_trace,
    })
}

impl<F: Real> MlrModel<F> {
    /// `softmax(Wᵀx̃)` with the reference-class logit fixed at zero.
    pub fn predict_proba(&self, query: &[F]) -> Result<Posterior<F>> {
        if query.len() + 1 != self.weights.rows() {
            return Err(Error::Validation(format!(
                "query has {} features, model expects {}",
                query.len(),
                self.weights.rows() - 1
            )));
        }
        let mut xrow = Vec::with_capacity(query.len() + 1);
        xrow.push(F::one());
        xrow.extend_from_slice(query);
        Ok(softmax(&logits_for(&self.weights, &xrow)))
    }

    pub fn weights(&self) -> &Matrix<F> {
        &self.weights
    }

    pub fn from_weights(weights: Matrix<F>) -> Self {
        MlrModel { weights }
    }
}

impl MlrModel<Scalar> {
    pub(super) fn write_into(&self, out: &mut String) {
        textio::write_usizes(out, "mlr_shape", &[self.weights.rows(), self.weights.cols()]);
        for j in 0..self.weights.rows() {
            textio::write_floats(out, "mlr_row", self.weights.row(j));
        }
    }

    pub(super) fn read_from(lines: &mut textio::Lines<'_>) -> Result<Self> {
        let shape = lines.expect_usizes("mlr_shape")?;
        if shape.len() != 2 {
            return Err(Error::Format("'mlr_shape' needs 2 values".into()));
        }
        let (rows, cols) = (shape[0], shape[1]);
        let mut data = Vec::with_capacity(rows * cols);
        for _ in 0..rows {
            data.extend(lines.expect_floats("mlr_row", cols)?);
        }
        Ok(MlrModel { weights: Matrix::from_vec(rows, cols, data) })
    }
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::models::argmax;
    use crate::rng::DetRng;

    #[test]
    fn zero_weights_give_uniform_posterior() {
        let model: MlrModel<f64> = MlrModel { weights: Matrix::zeros(3, 4) };
        let p = model.predict_proba(&[0.3, -1.2]).unwrap();
        for &v in &p {
            assert!((v - 0.25).abs() < 1e-15);
        }
    }

    #[test]
    fn separable_two_class_data_reaches_full_training_accuracy() {
        let mut rng = DetRng::new(12);
        let mut rows = Vec::new();
        let mut y = Vec::new();
        for _ in 0..40 {
            rows.push(vec![rng.uniform_in(-2.0, -0.5), rng.normal()]);
            y.push(0);
            rows.push(vec![rng.uniform_in(0.5, 2.0), rng.normal()]);
            y.push(1);
        }
        let x = Matrix::from_rows(&rows);
        let fit = mlr_fit(&x, &y, 2, 1e-4, 1e-6, 5000).unwrap();
        let correct = rows
            .iter()
            .zip(&y)
            .filter(|(row, &label)| argmax(&fit.model.predict_proba(row).unwrap()) == label)
            .count();
        assert_eq!(correct, y.len());
        // L2 keeps the weights finite and bounded
        assert!(fit.model.weights.max_abs() < 100.0);
    }

    #[test]
    fn loss_is_non_increasing_across_accepted_steps() {
        let mut rng = DetRng::new(13);
        let rows: Vec<Vec<f64>> = (0..60)
            .map(|i| vec![(i % 4) as f64 + 0.3 * rng.normal(), rng.normal()])
            .collect();
        let y: Vec<usize> = (0..60).map(|i| i % 4).collect();
        let x = Matrix::from_rows(&rows);
        let fit = mlr_fit(&x, &y, 4, 1e-4, 1e-6, 300).unwrap();
        for w in fit.loss_trace.windows(2) {
            assert!(w[1] <= w[0] + 1e-12, "loss increased: {} -> {}", w[0], w[1]);
        }
    }

    #[test]
    fn converged_fit_has_small_gradient() {
        let x = Matrix::from_rows(&[
            vec![0.0],
            vec![0.2],
            vec![3.0],
            vec![3.2],
        ]);
        let fit = mlr_fit(&x, &[0, 0, 1, 1], 2, 1e-2, 1e-6, 20_000).unwrap();
        assert!(fit.converged, "iterations: {}", fit.iterations);
        assert!(fit.final_grad_max < 1e-6);
    }

    #[test]
    fn analytic_gradient_matches_central_differences() {
        let mut rng = DetRng::new(14);
        let rows: Vec<Vec<f64>> = (0..20)
            .map(|_| (0..3).map(|_| rng.normal()).collect())
            .collect();
        let y: Vec<usize> = (0..20).map(|_| rng.index(4)).collect();
        let x = Matrix::from_rows(&rows);
        let xa = augment(&x);

        let mut weights: Matrix<f64> = Matrix::zeros(4, 4);
        for j in 0..4 {
            for k in 1..4 {
                weights[(j, k)] = 0.5 * rng.normal();
            }
        }
        let l2 = 1e-3;
        let analytic = gradient(&weights, &xa, &y, l2);

        let h = 1e-5;
        for j in 0..4 {
            for k in 1..4 {
                let mut plus = weights.clone();
                plus[(j, k)] += h;
                let mut minus = weights.clone();
                minus[(j, k)] -= h;
                let fd = (mlr_loss(&plus, &x, &y, l2) - mlr_loss(&minus, &x, &y, l2)) / (2.0 * h);
                let denom = analytic[(j, k)].abs().max(fd.abs()).max(1e-8);
                assert!(
                    (analytic[(j, k)] - fd).abs() / denom < 1e-4,
                    "w[{j}][{k}]: analytic {} vs fd {fd}",
                    analytic[(j, k)]
                );
            }
        }
        // reference column gradient is pinned at zero
        for j in 0..4 {
            assert_eq!(analytic[(j, 0)], 0.0);
        }
    }

    #[test]
    fn out_of_range_label_is_rejected() {
        let x = Matrix::from_rows(&[vec![0.0], vec![1.0]]);
        assert!(mlr_fit(&x, &[0, 4], 4, 1e-4, 1e-6, 10).is_err());
    }
}
