//! Gaussian generative classifiers: LDA (shared covariance) and QDA
//! (per-class covariance).
//!
//! Covariances are maximum-likelihood estimates (denominator `n`, not
//! `n − 1`), so duplicating every training row leaves the fitted
//! discriminants unchanged. Every covariance gets a ridge of
//! `1e-6 · trace/dim` on the diagonal before inversion, which keeps the
//! models total on degenerate strata.

use crate::error::Error;
use crate::linalg::{Cholesky, Matrix};
use crate::num::Real;
use crate::textio;
use crate::{Result, Scalar};

use super::{softmax, Posterior};

const RIDGE_SCALE: f64 = 1e-6;

/// Indices per class; every class in `0..n_classes` must occur at least
/// `min_count` times.
fn partition(y: &[usize], n_classes: usize, min_count: usize) -> Result<Vec<Vec<usize>>> {
    let mut classes = vec![Vec::new(); n_classes];
    for (i, &c) in y.iter().enumerate() {
        if c >= n_classes {
            return Err(Error::Validation(format!(
                "label {c} out of range for {n_classes} classes"
            )));
        }
        classes[c].push(i);
    }
    for (c, members) in classes.iter().enumerate() {
        if members.is_empty() {
            return Err(Error::Validation(format!(
                "class {c} is absent from the training data"
            )));
        }
        if members.len() < min_count {
            return Err(Error::Validation(format!(
                "class {c} has {} example(s), at least {min_count} required",
                members.len()
            )));
        }
    }
    Ok(classes)
}

fn class_mean<F: Real>(x: &Matrix<F>, rows: &[usize]) -> Vec<F> {
    let p = x.cols();
    let mut mean = vec![F::zero(); p];
    for &i in rows {
        for (m, &v) in mean.iter_mut().zip(x.row(i)) {
            *m += v;
        }
    }
    let nf = F::from_count(rows.len());
    for m in &mut mean {
        *m /= nf;
    }
    mean
}

/// Sum of outer products of the centered rows.
fn scatter<F: Real>(x: &Matrix<F>, rows: &[usize], mean: &[F]) -> Matrix<F> {
    let p = x.cols();
    let mut s: Matrix<F> = Matrix::zeros(p, p);
    for &i in rows {
        let row = x.row(i);
        for a in 0..p {
            let da = row[a] - mean[a];
            for b in a..p {
                s[(a, b)] += da * (row[b] - mean[b]);
            }
        }
    }
    for a in 0..p {
        for b in (a + 1)..p {
            s[(b, a)] = s[(a, b)];
        }
    }
    s
}

/// Ridge-regularized inverse and log-determinant of a covariance matrix.
fn ridge_inverse<F: Real>(cov: &Matrix<F>) -> Result<(Matrix<F>, F)> {
    let p = cov.rows();
    let ridge = F::from_f64_lossy(RIDGE_SCALE) * cov.trace() / F::from_count(p);
    let mut regularized = cov.clone();
    for i in 0..p {
        regularized[(i, i)] += ridge;
    }
    let ch = Cholesky::new(&regularized)?;
    Ok((ch.inverse(), ch.log_det()))
}

/// Linear discriminant analysis with a pooled covariance.
#[derive(Debug, Clone, PartialEq)]
pub struct LdaModel<F> {
    means: Matrix<F>,
    cov_inv: Matrix<F>,
    priors: Vec<F>,
}

/// Fits LDA: class means, empirical priors, pooled MLE covariance.
pub fn lda_fit<F: Real>(x: &Matrix<F>, y: &[usize], n_classes: usize) -> Result<LdaModel<F>> {
    let classes = partition(y, n_classes, 2)?;
    let (n, p) = (x.rows(), x.cols());
    let mut means = Matrix::zeros(n_classes, p);
    let mut priors = Vec::with_capacity(n_classes);
    let mut pooled: Matrix<F> = Matrix::zeros(p, p);
    for (c, rows) in classes.iter().enumerate() {
        let mean = class_mean(x, rows);
        means.row_mut(c).copy_from_slice(&mean);
        priors.push(F::from_count(rows.len()) / F::from_count(n));
        let s = scatter(x, rows, &mean);
        for a in 0..p {
            for b in 0..p {
                pooled[(a, b)] += s[(a, b)];
            }
        }
    }
    let nf = F::from_count(n);
    for a in 0..p {
        for b in 0..p {
            pooled[(a, b)] /= nf;
        }
    }
    let (cov_inv, _) = ridge_inverse(&pooled)?;
    Ok(LdaModel { means, cov_inv, priors })
}

impl<F: Real> LdaModel<F> {
    /// `δ_k(x) = xᵀΣ⁻¹μ_k − ½μ_kᵀΣ⁻¹μ_k + ln π_k`
    pub fn discriminants(&self, query: &[F]) -> Result<Vec<F>> {
        if query.len() != self.means.cols() {
            return Err(Error::Validation(format!(
                "query has {} features, model expects {}",
                query.len(),
                self.means.cols()
            )));
        }
        let half = F::from_f64_lossy(0.5);
        Ok((0..self.means.rows())
            .map(|c| {
                let mu = self.means.row(c);
                let sigma_mu = self.cov_inv.matvec(mu);
                let x_term: F = query.iter().zip(&sigma_mu).map(|(&a, &b)| a * b).sum();
                let mu_term: F = mu.iter().zip(&sigma_mu).map(|(&a, &b)| a * b).sum();
                x_term - half * mu_term + self.priors[c].ln()
            })
            .collect())
    }

    pub fn predict_proba(&self, query: &[F]) -> Result<Posterior<F>> {
        Ok(softmax(&self.discriminants(query)?))
    }

    pub fn priors(&self) -> &[F] {
        &self.priors
    }
}

/// Quadratic discriminant analysis with per-class covariances.
#[derive(Debug, Clone, PartialEq)]
pub struct QdaModel<F> {
    means: Matrix<F>,
    cov_invs: Vec<Matrix<F>>,
    log_dets: Vec<F>,
    priors: Vec<F>,
    /// Classes too small for their own covariance (fewer than `dim + 1`
    /// examples) fall back to the pooled covariance.
    pooled_fallback: Vec<bool>,
}

pub fn qda_fit<F: Real>(x: &Matrix<F>, y: &[usize], n_classes: usize) -> Result<QdaModel<F>> {
    let classes = partition(y, n_classes, 2)?;
    let (n, p) = (x.rows(), x.cols());
    let mut means = Matrix::zeros(n_classes, p);
    let mut priors = Vec::with_capacity(n_classes);
    let mut scatters = Vec::with_capacity(n_classes);
    let mut pooled: Matrix<F> = Matrix::zeros(p, p);
    for (c, rows) in classes.iter().enumerate() {
        let mean = class_mean(x, rows);
        means.row_mut(c).copy_from_slice(&mean);
        priors.push(F::from_count(rows.len()) / F::from_count(n));
        let s = scatter(x, rows, &mean);
        for a in 0..p {
            for b in 0..p {
                pooled[(a, b)] += s[(a, b)];
            }
        }
        scatters.push(s);
    }
    let nf = F::from_count(n);
    for a in 0..p {
        for b in 0..p {
            pooled[(a, b)] /= nf;
        }
    }

    let mut cov_invs = Vec::with_capacity(n_classes);
    let mut log_dets = Vec::with_capacity(n_classes);
    let mut pooled_fallback = Vec::with_capacity(n_classes);
    for (c, rows) in classes.iter().enumerate() {
        let fallback = rows.len() < p + 1;
        let cov = if fallback {
            log::warn!(
                "class {c} has {} example(s) in {p} dimensions; using the pooled covariance",
                rows.len()
            );
            pooled.clone()
        } else {
            let mut cov = scatters[c].clone();
            let nk = F::from_count(rows.len());
            for a in 0..p {
                for b in 0..p {
                    cov[(a, b)] /= nk;
                }
            }
            cov
        };
        let (inv, log_det) = ridge_inverse(&cov)?;
        cov_invs.push(inv);
        log_dets.push(log_det);
        pooled_fallback.push(fallback);
    }
    Ok(QdaModel {
        means,
        cov_invs,
        log_dets,
        priors,
        pooled_fallback,
    })
}

impl<F: Real> QdaModel<F> {
    /// `δ_k(x) = −½ln|Σ_k| − ½(x−μ_k)ᵀΣ_k⁻¹(x−μ_k) + ln π_k`
    pub fn discriminants(&self, query: &[F]) -> Result<Vec<F>> {
        if query.len() != self.means.cols() {
            return Err(Error::Validation(format!(
                "query has {} features, model expects {}",
                query.len(),
                self.means.cols()
            )));
        }
        let half = F::from_f64_lossy(0.5);
        Ok((0..self.means.rows())
            .map(|c| {
                let diff: Vec<F> = query
                    .iter()
                    .zip(self.means.row(c))
                    .map(|(&a, &b)| a - b)
                    .collect();
                let sigma_diff = self.cov_invs[c].matvec(&diff);
                let mahalanobis: F = diff.iter().zip(&sigma_diff).map(|(&a, &b)| a * b).sum();
                -half * self.log_dets[c] - half * mahalanobis + self.priors[c].ln()
            })
            .collect())
    }

    pub fn predict_proba(&self, query: &[F]) -> Result<Posterior<F>> {
        Ok(softmax(&self.discriminants(query)?))
    }

    pub fn priors(&self) -> &[F] {
        &self.priors
    }

    pub fn used_pooled_fallback(&self, class: usize) -> bool {
        self.pooled_fallback[class]
    }
}

fn write_matrix(out: &mut String, tag: &str, m: &Matrix<Scalar>) {
    textio::write_usizes(out, &format!("{tag}_shape"), &[m.rows(), m.cols()]);
    for i in 0..m.rows() {
        textio::write_floats(out, tag, m.row(i));
    }
}

fn read_matrix(lines: &mut textio::Lines<'_>, tag: &str) -> Result<Matrix<Scalar>> {
    let shape = lines.expect_usizes(&format!("{tag}_shape"))?;
    if shape.len() != 2 {
        return Err(Error::Format(format!("'{tag}_shape' needs 2 values")));
    }
    let (rows, cols) = (shape[0], shape[1]);
    let mut data = Vec::with_capacity(rows * cols);
    for _ in 0..rows {
        data.extend(lines.expect_floats(tag, cols)?);
    }
    Ok(Matrix::from_vec(rows, cols, data))
}

impl LdaModel<Scalar> {
    pub(super) fn write_into(&self, out: &mut String) {
        write_matrix(out, "lda_means", &self.means);
        write_matrix(out, "lda_covinv", &self.cov_inv);
        textio::write_floats(out, "lda_priors", &self.priors);
    }

    pub(super) fn read_from(lines: &mut textio::Lines<'_>) -> Result<Self> {
        let means = read_matrix(lines, "lda_means")?;
        let cov_inv = read_matrix(lines, "lda_covinv")?;
        let priors = lines.expect_floats("lda_priors", means.rows())?;
        Ok(LdaModel { means, cov_inv, priors })
    }
}

impl QdaModel<Scalar> {
    pub(super) fn write_into(&self, out: &mut String) {
        write_matrix(out, "qda_means", &self.means);
        for inv in &self.cov_invs {
            write_matrix(out, "qda_covinv", inv);
        }
        textio::write_floats(out, "qda_logdets", &self.log_dets);
        textio::write_floats(out, "qda_priors", &self.priors);
        textio::write_usizes(
            out,
            "qda_fallback",
            &self
                .pooled_fallback
                .iter()
                .map(|&b| usize::from(b))
                .collect::<Vec<_>>(),
        );
    }

    pub(super) fn read_from(lines: &mut textio::Lines<'_>) -> Result<Self> {
        let means = read_matrix(lines, "qda_means")?;
        let n_classes = means.rows();
        let mut cov_invs = Vec::with_capacity(n_classes);
        for _ in 0..n_classes {
            cov_invs.push(read_matrix(lines, "qda_covinv")?);
        }
        let log_dets = lines.expect_floats("qda_logdets", n_classes)?;
        let priors = lines.expect_floats("qda_priors", n_classes)?;
        let pooled_fallback = lines
            .expect_usizes("qda_fallback")?
            .into_iter()
            .map(|v| v != 0)
            .collect();
        Ok(QdaModel {
            means,
            cov_invs,
            log_dets,
            priors,
            pooled_fallback,
        })
    }
}
