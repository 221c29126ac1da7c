//! K-nearest-neighbors classifier (exhaustive scan).
//!
//! Training stores the matrix; prediction scans every row. At desk scale the
//! scan is faster and simpler than a tree, and it doubles as its own oracle:
//! distance ties break toward the smaller training-row index, which pins the
//! output exactly.

use crate::error::Error;
use crate::linalg::{euclidean, Matrix};
use crate::num::Real;
use crate::textio;
use crate::{Result, Scalar};

use super::Posterior;

/// Fitted KNN model.
#[derive(Debug, Clone, PartialEq)]
pub struct KnnModel<F> {
    x: Matrix<F>,
    y: Vec<usize>,
    k: usize,
    n_classes: usize,
}

impl<F: Real> KnnModel<F> {
    pub fn fit(x: Matrix<F>, y: Vec<usize>, k: usize, n_classes: usize) -> Result<Self> {
        if k == 0 || k > x.rows() {
            return Err(Error::Config(format!(
                "k = {k} must lie in 1..={} (training size)",
                x.rows()
            )));
        }
        if y.len() != x.rows() {
            return Err(Error::Validation(format!(
                "{} labels for {} training rows",
                y.len(),
                x.rows()
            )));
        }
        if let Some(&bad) = y.iter().find(|&&c| c >= n_classes) {
            return Err(Error::Validation(format!(
                "label {bad} out of range for {n_classes} classes"
            )));
        }
        Ok(KnnModel { x, y, k, n_classes })
    }

    pub fn k(&self) -> usize {
        self.k
    }

    /// Vote fractions among the k nearest neighbors.
    pub fn predict_proba(&self, query: &[F]) -> Result<Posterior<F>> {
        if query.len() != self.x.cols() {
            return Err(Error::Validation(format!(
                "query has {} features, model expects {}",
                query.len(),
                self.x.cols()
            )));
        }
        let mut order: Vec<(F, usize)> = self
            .x
            .iter_rows()
            .enumerate()
            .map(|(i, row)| (euclidean(query, row), i))
            .collect();
        order.sort_by(|a, b| {
            a.0.partial_cmp(&b.0)
                .expect("distances are finite")
                .then(a.1.cmp(&b.1))
        });

        let mut posterior = vec![F::zero(); self.n_classes];
        let share = F::one() / F::from_count(self.k);
        for &(_, idx) in order.iter().take(self.k) {
            posterior[self.y[idx]] += share;
        }
        Ok(posterior)
    }
}

impl KnnModel<Scalar> {
    pub(super) fn write_into(&self, out: &mut String) {
        textio::write_usizes(out, "knn_k", &[self.k]);
        textio::write_usizes(out, "knn_classes", &[self.n_classes]);
        textio::write_usizes(out, "knn_shape", &[self.x.rows(), self.x.cols()]);
        for i in 0..self.x.rows() {
            textio::write_floats(out, "knn_row", self.x.row(i));
        }
        textio::write_usizes(out, "knn_y", &self.y);
    }

    pub(super) fn read_from(lines: &mut textio::Lines<'_>) -> Result<Self> {
        let k = lines.expect_usize("knn_k")?;
        let n_classes = lines.expect_usize("knn_classes")?;
        let shape = lines.expect_usizes("knn_shape")?;
        if shape.len() != 2 {
            return Err(Error::Format("'knn_shape' needs 2 values".into()));
        }
        let (n, p) = (shape[0], shape[1]);
        let mut data = Vec::with_capacity(n * p);
        for _ in 0..n {
            data.extend(lines.expect_floats("knn_row", p)?);
        }
        let y = lines.expect_usizes("knn_y")?;
        if y.len() != n {
            return Err(Error::Format(format!(
                "'knn_y' carries {} labels for {n} rows",
                y.len()
            )));
        }
        KnnModel::fit(Matrix::from_vec(n, p, data), y, k, n_classes)
    }
}
