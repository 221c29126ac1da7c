//! Preprocessing stack: near-zero-variance elimination, correlated-predictor
//! elimination, centering and scaling, a per-feature OLS/R² summary, and PCA.
//!
//! The steps run in that order, are fitted on training data only, and replay
//! on new data through the frozen [`PipelineState`]. The OLS summary ranks
//! features by how linearly they track the ordinal label encoding (Once=1 ..
//! Futile=4); it is descriptive and never drops columns.

use crate::error::Error;
use crate::linalg::{jacobi_eigen, Matrix};
use crate::num::Real;
use crate::textio;
use crate::{Result, Scalar};

/// Tunables for the whole stack. The filter cutoffs follow the conventional
/// defaults of R-style preprocessing (95/5 frequency ratio, 10% unique, 0.9
/// correlation, 95% retained variance).
#[derive(Debug, Clone, PartialEq)]
pub struct PreprocessConfig {
    pub nzv_freq_ratio_cutoff: f64,
    pub nzv_unique_pct_cutoff: f64,
    pub corr_cutoff: f64,
    pub pca_variance_retained: f64,
    /// When false, the models consume standardized features instead of PCA
    /// scores.
    pub use_pca: bool,
}

impl Default for PreprocessConfig {
    fn default() -> Self {
        PreprocessConfig {
            nzv_freq_ratio_cutoff: 19.0,
            nzv_unique_pct_cutoff: 10.0,
            corr_cutoff: 0.9,
            pca_variance_retained: 0.95,
            use_pca: true,
        }
    }
}

impl PreprocessConfig {
    pub fn validate(&self) -> Result<()> {
        if self.nzv_freq_ratio_cutoff <= 0.0 || self.nzv_unique_pct_cutoff <= 0.0 {
            return Err(Error::Config("nzv cutoffs must be positive".into()));
        }
        if !(self.corr_cutoff > 0.0 && self.corr_cutoff <= 1.0) {
            return Err(Error::Config(format!(
                "corr_cutoff must lie in (0, 1], got {}",
                self.corr_cutoff
            )));
        }
        if !(self.pca_variance_retained > 0.0 && self.pca_variance_retained <= 1.0) {
            return Err(Error::Config(format!(
                "pca_variance_retained must lie in (0, 1], got {}",
                self.pca_variance_retained
            )));
        }
        Ok(())
    }
}

/// Near-zero-variance filter. A column is dropped iff its variance is exactly
/// zero, or the ratio of its most-common to second-most-common value count
/// exceeds `freq_ratio_cutoff` while its percent-unique falls below
/// `unique_pct_cutoff`. Returns the kept column indices, in order.
pub fn nzv_filter<F: Real>(
    x: &Matrix<F>,
    freq_ratio_cutoff: f64,
    unique_pct_cutoff: f64,
) -> Vec<usize> {
    let n = x.rows();
    (0..x.cols())
        .filter(|&j| {
            let mut col = x.column(j);
            col.sort_by(|a, b| a.partial_cmp(b).expect("finite values"));
            let mut counts: Vec<usize> = Vec::new();
            let mut run = 1usize;
            for w in col.windows(2) {
                if w[0] == w[1] {
                    run += 1;
                } else {
                    counts.push(run);
                    run = 1;
                }
            }
            counts.push(run);
            let distinct = counts.len();
            if distinct <= 1 {
                return false; // zero variance
            }
            counts.sort_unstable_by(|a, b| b.cmp(a));
            let freq_ratio = counts[0] as f64 / counts[1] as f64;
            let unique_pct = 100.0 * distinct as f64 / n as f64;
            !(freq_ratio > freq_ratio_cutoff && unique_pct < unique_pct_cutoff)
        })
        .collect()
}

/// Pearson correlation matrix of the columns. Columns with zero variance are
/// treated as uncorrelated with everything.
fn correlation_matrix<F: Real>(x: &Matrix<F>) -> Matrix<F> {
    let (n, p) = (x.rows(), x.cols());
    let nf = F::from_count(n);
    let means: Vec<F> = (0..p)
        .map(|j| x.column(j).iter().copied().sum::<F>() / nf)
        .collect();
    let mut cross: Matrix<F> = Matrix::zeros(p, p);
    for row in x.iter_rows() {
        for a in 0..p {
            let da = row[a] - means[a];
            for b in a..p {
                cross[(a, b)] += da * (row[b] - means[b]);
            }
        }
    }
    let mut corr = Matrix::identity(p);
    for a in 0..p {
        for b in (a + 1)..p {
            let denom = (cross[(a, a)] * cross[(b, b)]).sqrt();
            let r = if denom > F::zero() {
                cross[(a, b)] / denom
            } else {
                F::zero()
            };
            corr[(a, b)] = r;
            corr[(b, a)] = r;
        }
    }
    corr
}

/// Greedy correlated-predictor elimination.
///
/// While any pair of kept columns has `|r| > cutoff`, take the worst pair
/// (largest `|r|`, ties to the lexicographically smallest pair) and drop the
/// member with the larger mean absolute correlation to the other kept
/// columns, breaking ties toward the larger column index.
pub fn corr_filter<F: Real>(x: &Matrix<F>, cutoff: f64) -> Vec<usize> {
    let p = x.cols();
    let corr = correlation_matrix(x);
    let cutoff = F::from_f64_lossy(cutoff);
    let mut kept: Vec<usize> = (0..p).collect();

    loop {
        let mut worst: Option<(usize, usize, F)> = None;
        for (ai, &a) in kept.iter().enumerate() {
            for &b in &kept[ai + 1..] {
                let r = corr[(a, b)].abs();
                if r > cutoff && worst.map_or(true, |(_, _, best)| r > best) {
                    worst = Some((a, b, r));
                }
            }
        }
        let Some((a, b, _)) = worst else { break };

        let mean_abs = |col: usize| -> F {
            let others: Vec<F> = kept
                .iter()
                .filter(|&&k| k != col)
                .map(|&k| corr[(col, k)].abs())
                .collect();
            if others.is_empty() {
                F::zero()
            } else {
                others.iter().copied().sum::<F>() / F::from_count(others.len())
            }
        };
        let (ma, mb) = (mean_abs(a), mean_abs(b));
        let drop = if ma > mb {
            a
        } else if mb > ma {
            b
        } else {
            a.max(b)
        };
        kept.retain(|&k| k != drop);
    }
    kept
}

/// Per-column means and sample standard deviations (n−1 denominator).
/// Fails, naming the column, if any standard deviation is zero.
pub fn standardize_fit<F: Real>(x: &Matrix<F>) -> Result<(Vec<F>, Vec<F>)> {
    let (n, p) = (x.rows(), x.cols());
    if n < 2 {
        return Err(Error::Validation(format!(
            "standardization needs at least 2 rows, got {n}"
        )));
    }
    let nf = F::from_count(n);
    let mut means = Vec::with_capacity(p);
    let mut stds = Vec::with_capacity(p);
    for j in 0..p {
        let col = x.column(j);
        let mean = col.iter().copied().sum::<F>() / nf;
        let ss: F = col.iter().map(|&v| (v - mean) * (v - mean)).sum();
        let std = (ss / F::from_count(n - 1)).sqrt();
        if std == F::zero() {
            return Err(Error::Numeric(format!(
                "column {j} has zero variance; standardization would divide by zero"
            )));
        }
        means.push(mean);
        stds.push(std);
    }
    Ok((means, stds))
}

/// `z[i][j] = (x[i][j] − mean_j) / std_j`, using frozen fit parameters.
pub fn standardize_apply<F: Real>(x: &Matrix<F>, means: &[F], stds: &[F]) -> Matrix<F> {
    assert_eq!(x.cols(), means.len());
    assert_eq!(x.cols(), stds.len());
    let mut z = Matrix::zeros(x.rows(), x.cols());
    for i in 0..x.rows() {
        for j in 0..x.cols() {
            z[(i, j)] = (x[(i, j)] - means[j]) / stds[j];
        }
    }
    z
}

/// Simple-regression summary of one feature against the ordinal label.
#[derive(Debug, Clone, PartialEq)]
pub struct FeatureSummary<F> {
    pub name: String,
    pub slope: F,
    pub intercept: F,
    pub r_squared: F,
}

/// Per-column least-squares fit `y ≈ slope·z_j + intercept`, reported sorted
/// by descending R². A constant `y` defines every R² as 0.
pub fn ols_summary<F: Real>(
    z: &Matrix<F>,
    y_ord: &[F],
    names: &[String],
) -> Vec<FeatureSummary<F>> {
    let (n, p) = (z.rows(), z.cols());
    assert_eq!(n, y_ord.len(), "y length mismatch");
    assert_eq!(p, names.len(), "names length mismatch");
    let nf = F::from_count(n);
    let y_mean = y_ord.iter().copied().sum::<F>() / nf;
    let ss_tot: F = y_ord.iter().map(|&y| (y - y_mean) * (y - y_mean)).sum();

    let mut summaries: Vec<FeatureSummary<F>> = (0..p)
        .map(|j| {
            let col = z.column(j);
            let z_mean = col.iter().copied().sum::<F>() / nf;
            let sxx: F = col.iter().map(|&v| (v - z_mean) * (v - z_mean)).sum();
            let sxy: F = col
                .iter()
                .zip(y_ord)
                .map(|(&v, &y)| (v - z_mean) * (y - y_mean))
                .sum();
            let slope = if sxx > F::zero() { sxy / sxx } else { F::zero() };
            let intercept = y_mean - slope * z_mean;
            let r_squared = if ss_tot > F::zero() {
                let ss_res: F = col
                    .iter()
                    .zip(y_ord)
                    .map(|(&v, &y)| {
                        let e = y - (slope * v + intercept);
                        e * e
                    })
                    .sum();
                (F::one() - ss_res / ss_tot).max(F::zero()).min(F::one())
            } else {
                F::zero()
            };
            FeatureSummary {
                name: names[j].clone(),
                slope,
                intercept,
                r_squared,
            }
        })
        .collect();
    summaries.sort_by(|a, b| {
        b.r_squared
            .partial_cmp(&a.r_squared)
            .expect("r_squared is finite")
    });
    summaries
}

/// Principal components of (already centered) data.
#[derive(Debug, Clone, PartialEq)]
pub struct PcaFit<F> {
    /// `p' × m` orthonormal loading matrix, sign-fixed so each component's
    /// largest-magnitude entry is positive.
    pub components: Matrix<F>,
    /// The `m` kept eigenvalues, non-increasing.
    pub eigenvalues: Vec<F>,
    /// Sum of all `p'` eigenvalues (the covariance trace).
    pub total_variance: F,
}

/// Eigendecomposition of the sample covariance of `z`; keeps the smallest
/// component count whose eigenvalue mass reaches `variance_retained`.
pub fn pca_fit<F: Real>(z: &Matrix<F>, variance_retained: f64) -> Result<PcaFit<F>> {
    let (n, p) = (z.rows(), z.cols());
    if n < 2 {
        return Err(Error::Validation(format!(
            "PCA needs at least 2 rows, got {n}"
        )));
    }
    let cov = z.covariance(F::from_count(n - 1));
    let (eigenvalues, vectors) = jacobi_eigen(&cov)?;
    let total: F = eigenvalues.iter().copied().sum();
    let target = F::from_f64_lossy(variance_retained) * total;
    let mut m = p.max(1).min(p);
    let mut cum = F::zero();
    for (k, &val) in eigenvalues.iter().enumerate() {
        cum += val;
        if cum >= target {
            m = k + 1;
            break;
        }
    }

    let mut components = vectors.select_columns(&(0..m).collect::<Vec<_>>());
    for c in 0..m {
        let lead = (0..p)
            .max_by(|&a, &b| {
                components[(a, c)]
                    .abs()
                    .partial_cmp(&components[(b, c)].abs())
                    .expect("finite loadings")
                    .then(b.cmp(&a)) // first occurrence wins
            })
            .expect("non-empty component");
        if components[(lead, c)] < F::zero() {
            for r in 0..p {
                components[(r, c)] = -components[(r, c)];
            }
        }
    }
    Ok(PcaFit {
        components,
        eigenvalues: eigenvalues[..m].to_vec(),
        total_variance: total,
    })
}

/// Projects centered data onto the fitted components.
pub fn pca_transform<F: Real>(z: &Matrix<F>, components: &Matrix<F>) -> Matrix<F> {
    z.matmul(components)
}

/// The whole fitted stack, replayable on new data.
#[derive(Debug, Clone, PartialEq)]
pub struct PipelineState<F> {
    /// Original column names, in dataset order.
    pub feature_names: Vec<String>,
    /// Original column indices surviving the NZV filter.
    pub kept_after_nzv: Vec<usize>,
    /// Original column indices surviving the correlation filter.
    pub kept_after_corr: Vec<usize>,
    pub means: Vec<F>,
    pub stds: Vec<F>,
    /// OLS ranking of the kept columns, best R² first.
    pub ols: Vec<FeatureSummary<F>>,
    pub pca_components: Matrix<F>,
    pub pca_eigenvalues: Vec<F>,
    pub variance_retained: F,
    pub use_pca: bool,
}

impl<F: Real> PipelineState<F> {
    /// Width of the matrix [`apply_pipeline`] produces.
    pub fn output_dim(&self) -> usize {
        if self.use_pca {
            self.pca_components.cols()
        } else {
            self.kept_after_corr.len()
        }
    }
}

/// Fits the five-step stack on training data.
///
/// `y_idx` are class indices (0..3); the OLS summary regresses the ordinal
/// encoding `index + 1` on each standardized column.
pub fn fit_pipeline<F: Real>(
    x: &Matrix<F>,
    y_idx: &[usize],
    names: &[String],
    cfg: &PreprocessConfig,
) -> Result<PipelineState<F>> {
    cfg.validate()?;
    assert_eq!(x.rows(), y_idx.len(), "label length mismatch");
    assert_eq!(x.cols(), names.len(), "names length mismatch");
    if x.rows() < 2 {
        return Err(Error::Validation(format!(
            "pipeline fit needs at least 2 rows, got {}",
            x.rows()
        )));
    }

    let kept_after_nzv = nzv_filter(x, cfg.nzv_freq_ratio_cutoff, cfg.nzv_unique_pct_cutoff);
    if kept_after_nzv.is_empty() {
        return Err(Error::Validation(
            "no features survive the near-zero-variance filter".into(),
        ));
    }
    let x_nzv = x.select_columns(&kept_after_nzv);

    let kept_local = corr_filter(&x_nzv, cfg.corr_cutoff);
    let kept_after_corr: Vec<usize> = kept_local.iter().map(|&j| kept_after_nzv[j]).collect();
    let x_kept = x.select_columns(&kept_after_corr);

    let (means, stds) = standardize_fit(&x_kept)?;
    let z = standardize_apply(&x_kept, &means, &stds);

    let y_ord: Vec<F> = y_idx.iter().map(|&i| F::from_count(i + 1)).collect();
    let kept_names: Vec<String> = kept_after_corr
        .iter()
        .map(|&j| names[j].clone())
        .collect();
    let ols = ols_summary(&z, &y_ord, &kept_names);

    let pca = pca_fit(&z, cfg.pca_variance_retained)?;
    Ok(PipelineState {
        feature_names: names.to_vec(),
        kept_after_nzv,
        kept_after_corr,
        means,
        stds,
        ols,
        pca_components: pca.components,
        pca_eigenvalues: pca.eigenvalues,
        variance_retained: F::from_f64_lossy(cfg.pca_variance_retained),
        use_pca: cfg.use_pca,
    })
}

/// Replays the fitted stack on new data with the same original columns.
pub fn apply_pipeline<F: Real>(state: &PipelineState<F>, x: &Matrix<F>) -> Result<Matrix<F>> {
    if x.cols() != state.feature_names.len() {
        return Err(Error::Validation(format!(
            "pipeline was fitted on {} columns, input has {}",
            state.feature_names.len(),
            x.cols()
        )));
    }
    let x_kept = x.select_columns(&state.kept_after_corr);
    let z = standardize_apply(&x_kept, &state.means, &state.stds);
    Ok(if state.use_pca {
        pca_transform(&z, &state.pca_components)
    } else {
        z
    })
}

pub const PIPELINE_FORMAT: &str = "searchlab.pipeline.v1";

impl PipelineState<Scalar> {
    /// Appends the state to `out` as tagged text records (17 significant
    /// digits per float). Field order is fixed: names, NZV survivors,
    /// correlation survivors, means, stds, OLS ranking, PCA shape, PCA rows,
    /// eigenvalues, retained-variance target, PCA switch.
    pub fn write_into(&self, out: &mut String) {
        out.push_str("feature_names");
        for name in &self.feature_names {
            out.push(' ');
            out.push_str(name);
        }
        out.push('\n');
        textio::write_usizes(out, "kept_after_nzv", &self.kept_after_nzv);
        textio::write_usizes(out, "kept_after_corr", &self.kept_after_corr);
        textio::write_floats(out, "means", &self.means);
        textio::write_floats(out, "stds", &self.stds);
        textio::write_usizes(out, "ols_count", &[self.ols.len()]);
        for s in &self.ols {
            out.push_str("ols ");
            out.push_str(&s.name);
            for v in [s.slope, s.intercept, s.r_squared] {
                out.push(' ');
                out.push_str(&textio::fmt_f64(v));
            }
            out.push('\n');
        }
        textio::write_usizes(
            out,
            "pca_shape",
            &[self.pca_components.rows(), self.pca_components.cols()],
        );
        for i in 0..self.pca_components.rows() {
            textio::write_floats(out, "pca_row", self.pca_components.row(i));
        }
        textio::write_floats(out, "pca_eigenvalues", &self.pca_eigenvalues);
        textio::write_floats(out, "variance_retained", &[self.variance_retained]);
        textio::write_usizes(out, "use_pca", &[usize::from(self.use_pca)]);
    }

    pub fn read_from(lines: &mut textio::Lines<'_>) -> Result<Self> {
        let feature_names: Vec<String> = lines
            .expect_tag("feature_names")?
            .iter()
            .map(|s| s.to_string())
            .collect();
        let kept_after_nzv = lines.expect_usizes("kept_after_nzv")?;
        let kept_after_corr = lines.expect_usizes("kept_after_corr")?;
        let kept = kept_after_corr.len();
        let means = lines.expect_floats("means", kept)?;
        let stds = lines.expect_floats("stds", kept)?;
        let ols_count = lines.expect_usize("ols_count")?;
        let mut ols = Vec::with_capacity(ols_count);
        for _ in 0..ols_count {
            let fields = lines.expect_tag("ols")?;
            if fields.len() != 4 {
                return Err(Error::Format(format!(
                    "'ols' carries {} fields, expected 4",
                    fields.len()
                )));
            }
            ols.push(FeatureSummary {
                name: fields[0].to_string(),
                slope: textio::parse_f64("ols slope", fields[1])?,
                intercept: textio::parse_f64("ols intercept", fields[2])?,
                r_squared: textio::parse_f64("ols r_squared", fields[3])?,
            });
        }
        let shape = lines.expect_usizes("pca_shape")?;
        if shape.len() != 2 {
            return Err(Error::Format("'pca_shape' needs 2 values".into()));
        }
        let (rows, cols) = (shape[0], shape[1]);
        let mut data = Vec::with_capacity(rows * cols);
        for _ in 0..rows {
            data.extend(lines.expect_floats("pca_row", cols)?);
        }
        let pca_components = Matrix::from_vec(rows, cols, data);
        let pca_eigenvalues = lines.expect_floats("pca_eigenvalues", cols)?;
        let variance_retained = lines.expect_floats("variance_retained", 1)?[0];
        let use_pca = lines.expect_usize("use_pca")? != 0;
        Ok(PipelineState {
            feature_names,
            kept_after_nzv,
            kept_after_corr,
            means,
            stds,
            ols,
            pca_components,
            pca_eigenvalues,
            variance_retained,
            use_pca,
        })
    }

    pub fn to_text(&self) -> String {
        let mut out = String::from(PIPELINE_FORMAT);
        out.push('\n');
        self.write_into(&mut out);
        out
    }

    pub fn from_text(text: &str) -> Result<Self> {
        let mut lines = textio::Lines::new(text);
        textio::expect_version(&mut lines, PIPELINE_FORMAT)?;
        Self::read_from(&mut lines)
    }

    pub fn write_file(&self, path: &std::path::Path) -> Result<()> {
        std::fs::write(path, self.to_text())?;
        Ok(())
    }

    pub fn read_file(path: &std::path::Path) -> Result<Self> {
        Self::from_text(&std::fs::read_to_string(path)?)
    }
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::Mat;
    use approx::assert_abs_diff_eq;
    use proptest::prelude::*;

    fn mat_from_cols(cols: &[Vec<f64>]) -> Mat {
        let n = cols[0].len();
        let rows: Vec<Vec<f64>> = (0..n)
            .map(|i| cols.iter().map(|c| c[i]).collect())
            .collect();
        Mat::from_rows(&rows)
    }

    #[test]
    fn nzv_keeps_mildly_skewed_column() {
        // freq ratio 5, unique 33%
        let x = mat_from_cols(&[vec![1.0, 1.0, 1.0, 1.0, 1.0, 2.0]]);
        assert_eq!(nzv_filter(&x, 19.0, 10.0), vec![0]);
    }

    #[test]
    fn nzv_drops_constant_column() {
        let x = mat_from_cols(&[vec![3.5; 6], vec![1.0, 2.0, 3.0, 4.0, 5.0, 6.0]]);
        assert_eq!(nzv_filter(&x, 19.0, 10.0), vec![1]);
    }

    #[test]
    fn nzv_drops_heavily_skewed_low_unique_column() {
        // 96×1, 2×2, 1×3, 1×4: freq ratio 48 > 19, unique 4% < 10
        let mut col = vec![1.0; 96];
        col.extend([2.0, 2.0, 3.0, 4.0]);
        let x = mat_from_cols(&[col.clone()]);
        assert_eq!(nzv_filter(&x, 19.0, 10.0), Vec::<usize>::new());
        // hand check of the counting itself
        assert_eq!(col.len(), 100);
    }

    #[test]
    fn corr_filter_drops_duplicate_scaled_column() {
        // B = 2A is perfectly correlated; mean-abs-corr ties, larger index drops.
        let a = vec![1.0, 2.0, 3.0, 4.0];
        let b = vec![2.0, 4.0, 6.0, 8.0];
        let c = vec![1.0, -1.0, 1.0, -1.0];
        let x = mat_from_cols(&[a, b, c]);
        assert_eq!(corr_filter(&x, 0.9), vec![0, 2]);
    }

    #[test]
    fn corr_filter_keeps_orthogonal_columns() {
        let x = mat_from_cols(&[
            vec![1.0, -1.0, 1.0, -1.0],
            vec![1.0, 1.0, -1.0, -1.0],
            vec![1.0, 2.0, 3.0, 4.0],
        ]);
        assert_eq!(corr_filter(&x, 0.9), vec![0, 1, 2]);
    }

    #[test]
    fn corr_filter_removes_exactly_one_of_a_duplicate_pair() {
        let a = vec![0.3, 1.7, -0.2, 0.9, 2.4];
        let x = mat_from_cols(&[a.clone(), a]);
        assert_eq!(corr_filter(&x, 0.9), vec![0]);
    }

    #[test]
    fn standardize_matches_hand_calculation() {
        let x = mat_from_cols(&[vec![1.0, 2.0, 3.0]]);
        let (means, stds) = standardize_fit(&x).unwrap();
        assert_eq!(means, vec![2.0]);
        assert_eq!(stds, vec![1.0]);
        let z = standardize_apply(&x, &means, &stds);
        assert_eq!(z.column(0), vec![-1.0, 0.0, 1.0]);
    }

    #[test]
    fn standardized_columns_have_zero_mean_unit_std() {
        let x = mat_from_cols(&[
            vec![0.5, 1.5, 9.0, -3.0, 2.2],
            vec![100.0, 104.0, 99.5, 98.0, 101.0],
        ]);
        let (means, stds) = standardize_fit(&x).unwrap();
        let z = standardize_apply(&x, &means, &stds);
        let (zm, zs) = standardize_fit(&z).unwrap();
        for j in 0..2 {
            assert_abs_diff_eq!(zm[j], 0.0, epsilon = 1e-10);
            assert_abs_diff_eq!(zs[j], 1.0, epsilon = 1e-10);
        }
        // re-standardizing fit output leaves it unchanged
        let z2 = standardize_apply(&z, &zm, &zs);
        for i in 0..z.rows() {
            for j in 0..z.cols() {
                assert_abs_diff_eq!(z2[(i, j)], z[(i, j)], epsilon = 1e-10);
            }
        }
    }

    #[test]
    fn apply_does_not_refit() {
        let train = mat_from_cols(&[vec![1.0, 2.0, 3.0]]);
        let test = mat_from_cols(&[vec![10.0, 11.0, 12.0]]);
        let (means, stds) = standardize_fit(&train).unwrap();
        let z = standardize_apply(&test, &means, &stds);
        let test_mean: f64 = z.column(0).iter().sum::<f64>() / 3.0;
        assert!(test_mean.abs() > 1.0, "test mean {test_mean} shows no refit");
    }

    #[test]
    fn zero_std_column_is_a_numeric_error_naming_the_column() {
        let x = mat_from_cols(&[vec![1.0, 2.0, 3.0], vec![5.0, 5.0, 5.0]]);
        let err = standardize_fit(&x).unwrap_err();
        assert!(matches!(err, Error::Numeric(_)));
        assert!(err.to_string().contains("column 1"), "{err}");
    }

    #[test]
    fn ols_matches_normal_equation_oracle() {
        // 4 points (z, y) = (−1,1),(0,2),(1,2),(2,3)
        let z = mat_from_cols(&[vec![-1.0, 0.0, 1.0, 2.0]]);
        let y = vec![1.0, 2.0, 2.0, 3.0];

        // independent oracle: solve the 2×2 normal equations directly
        let n = 4.0;
        let sz: f64 = -1.0 + 0.0 + 1.0 + 2.0;
        let szz: f64 = 1.0 + 0.0 + 1.0 + 4.0;
        let sy: f64 = 8.0;
        let szy: f64 = -1.0 + 0.0 + 2.0 + 6.0;
        let det = n * szz - sz * sz;
        let oracle_slope = (n * szy - sz * sy) / det;
        let oracle_intercept = (szz * sy - sz * szy) / det;

        let summary = ols_summary(&z, &y, &["f".to_string()]);
        assert_abs_diff_eq!(summary[0].slope, oracle_slope, epsilon = 1e-12);
        assert_abs_diff_eq!(summary[0].intercept, oracle_intercept, epsilon = 1e-12);
        assert_abs_diff_eq!(summary[0].slope, 0.6, epsilon = 1e-12);
        assert_abs_diff_eq!(summary[0].intercept, 1.7, epsilon = 1e-12);
        assert_abs_diff_eq!(summary[0].r_squared, 0.9, epsilon = 1e-12);
    }

    #[test]
    fn ols_perfect_fit_and_orthogonal_feature() {
        let z = mat_from_cols(&[
            vec![1.0, 2.0, 3.0, 4.0],      // y = z exactly
            vec![1.0, -1.0, -1.0, 1.0],    // orthogonal to centered y
        ]);
        let y = vec![1.0, 2.0, 3.0, 4.0];
        let summary = ols_summary(&z, &y, &["exact".to_string(), "orth".to_string()]);
        assert_eq!(summary[0].name, "exact");
        assert_abs_diff_eq!(summary[0].r_squared, 1.0, epsilon = 1e-12);
        let orth = summary.iter().find(|s| s.name == "orth").unwrap();
        assert_abs_diff_eq!(orth.slope, 0.0, epsilon = 1e-12);
        assert_abs_diff_eq!(orth.r_squared, 0.0, epsilon = 1e-12);
    }

    #[test]
    fn ols_constant_y_gives_zero_r_squared() {
        let z = mat_from_cols(&[vec![1.0, 2.0, 3.0]]);
        let y = vec![2.0, 2.0, 2.0];
        let summary = ols_summary(&z, &y, &["f".to_string()]);
        assert_eq!(summary[0].r_squared, 0.0);
    }

    /// Dyadic five-point fixture whose sample covariance is exactly diag(4, 1).
    fn diag41_fixture() -> Mat {
        Mat::from_rows(&[
            vec![2.0, 1.0],
            vec![-2.0, -1.0],
            vec![2.0, -1.0],
            vec![-2.0, 1.0],
            vec![0.0, 0.0],
        ])
    }

    #[test]
    fn pca_on_diag_covariance_fixture() {
        let z = diag41_fixture();
        let fit = pca_fit(&z, 0.95).unwrap();
        // eigenvalues (4, 1); 4/5 = 80% < 95%, so both components are kept
        assert_eq!(fit.eigenvalues, vec![4.0, 1.0]);
        assert_eq!(fit.components.cols(), 2);
        // first component is +e1 after sign fixing
        assert_eq!(fit.components.column(0), vec![1.0, 0.0]);
        assert_eq!(fit.total_variance, 5.0);

        // 80% target keeps only the first component
        let fit80 = pca_fit(&z, 0.8).unwrap();
        assert_eq!(fit80.components.cols(), 1);
    }

    #[test]
    fn pca_isotropic_keeps_all_components() {
        // exact identity sample covariance
        let z = Mat::from_rows(&[
            vec![1.0, 1.0],
            vec![-1.0, -1.0],
            vec![1.0, -1.0],
            vec![-1.0, 1.0],
            vec![0.0, 0.0],
        ]);
        let fit = pca_fit(&z, 0.95).unwrap();
        assert_eq!(fit.components.cols(), 2);
        assert_abs_diff_eq!(fit.eigenvalues[0], fit.eigenvalues[1], epsilon = 1e-12);
    }

    #[test]
    fn pca_components_are_orthonormal_and_trace_preserving() {
        let mut rng = crate::rng::DetRng::new(11);
        let rows: Vec<Vec<f64>> = (0..40)
            .map(|_| (0..5).map(|_| rng.normal()).collect())
            .collect();
        let x = Mat::from_rows(&rows);
        let (means, stds) = standardize_fit(&x).unwrap();
        let z = standardize_apply(&x, &means, &stds);
        let fit = pca_fit(&z, 1.0).unwrap();

        let ctc = fit.components.transpose().matmul(&fit.components);
        for i in 0..ctc.rows() {
            for j in 0..ctc.cols() {
                let expect = if i == j { 1.0 } else { 0.0 };
                assert!((ctc[(i, j)] - expect).abs() <= 1e-8, "CtC[{i}][{j}]");
            }
        }
        let cov = z.covariance(39.0);
        let eig_sum: f64 = fit.eigenvalues.iter().sum();
        assert_abs_diff_eq!(eig_sum, cov.trace(), epsilon = 1e-8);
    }

    #[test]
    fn pca_reconstruction_error_is_bounded_by_dropped_variance() {
        let mut rng = crate::rng::DetRng::new(23);
        // correlated columns so PCA can actually drop something
        let rows: Vec<Vec<f64>> = (0..60)
            .map(|_| {
                let a = rng.normal();
                let b = rng.normal();
                vec![a, 0.9 * a + 0.2 * rng.normal(), b, 0.5 * b + 0.5 * rng.normal()]
            })
            .collect();
        let x = Mat::from_rows(&rows);
        let (means, stds) = standardize_fit(&x).unwrap();
        let z = standardize_apply(&x, &means, &stds);
        let retained = 0.9;
        let fit = pca_fit(&z, retained).unwrap();
        let scores = pca_transform(&z, &fit.components);
        let recon = scores.matmul(&fit.components.transpose());

        let mut res = 0.0;
        let mut total = 0.0;
        for i in 0..z.rows() {
            for j in 0..z.cols() {
                let d = z[(i, j)] - recon[(i, j)];
                res += d * d;
                total += z[(i, j)] * z[(i, j)];
            }
        }
        assert!(
            res / total <= 1.0 - retained + 1e-8,
            "residual fraction {} exceeds {}",
            res / total,
            1.0 - retained
        );
    }

    fn demo_dataset() -> (Mat, Vec<usize>, Vec<String>) {
        let mut rng = crate::rng::DetRng::new(5);
        let n = 80;
        let mut rows = Vec::with_capacity(n);
        let mut y = Vec::with_capacity(n);
        for i in 0..n {
            let class = i % 4;
            let signal = class as f64 + 0.2 * rng.normal();
            let noise = rng.normal();
            let dup = 2.0 * signal; // perfectly correlated with column 0
            let constant = 7.0;
            rows.push(vec![signal, noise, dup, constant]);
            y.push(class);
        }
        let names = ["signal", "noise", "dup", "constant"]
            .iter()
            .map(|s| s.to_string())
            .collect();
        (Mat::from_rows(&rows), y, names)
    }

    #[test]
    fn full_pipeline_fit_apply_replay() {
        let (x, y, names) = demo_dataset();
        let cfg = PreprocessConfig::default();
        let state = fit_pipeline(&x, &y, &names, &cfg).unwrap();

        // constant dropped by NZV, dup dropped by the correlation filter
        assert_eq!(state.kept_after_nzv, vec![0, 1, 2]);
        assert_eq!(state.kept_after_corr, vec![0, 1]);
        // signal should top the OLS ranking
        assert_eq!(state.ols[0].name, "signal");
        assert!(state.ols[0].r_squared > state.ols[1].r_squared);

        let z1 = apply_pipeline(&state, &x).unwrap();
        let state2 = fit_pipeline(&x, &y, &names, &cfg).unwrap();
        let z2 = apply_pipeline(&state2, &x).unwrap();
        assert_eq!(z1, z2);
        assert_eq!(z1.cols(), state.output_dim());
    }

    #[test]
    fn filters_are_row_permutation_invariant() {
        let (x, ..) = demo_dataset();
        let mut rows: Vec<Vec<f64>> = x.iter_rows().map(|r| r.to_vec()).collect();
        rows.reverse();
        let xr = Mat::from_rows(&rows);
        assert_eq!(nzv_filter(&x, 19.0, 10.0), nzv_filter(&xr, 19.0, 10.0));
        let kept = nzv_filter(&x, 19.0, 10.0);
        assert_eq!(
            corr_filter(&x.select_columns(&kept), 0.9),
            corr_filter(&xr.select_columns(&kept), 0.9)
        );
    }

    #[test]
    fn pipeline_state_serialization_round_trips_bit_exactly() {
        let (x, y, names) = demo_dataset();
        let state = fit_pipeline(&x, &y, &names, &PreprocessConfig::default()).unwrap();
        let text = state.to_text();
        let back = PipelineState::from_text(&text).unwrap();
        assert_eq!(back, state);
        assert_eq!(back.to_text(), text);
    }

    #[test]
    fn pipeline_state_rejects_wrong_version() {
        let (x, y, names) = demo_dataset();
        let state = fit_pipeline(&x, &y, &names, &PreprocessConfig::default()).unwrap();
        let text = state.to_text().replace("pipeline.v1", "pipeline.v9");
        assert!(matches!(
            PipelineState::from_text(&text),
            Err(Error::Format(_))
        ));
    }

    #[test]
    fn use_pca_false_returns_standardized_features() {
        let (x, y, names) = demo_dataset();
        let cfg = PreprocessConfig { use_pca: false, ..PreprocessConfig::default() };
        let state = fit_pipeline(&x, &y, &names, &cfg).unwrap();
        let z = apply_pipeline(&state, &x).unwrap();
        assert_eq!(z.cols(), state.kept_after_corr.len());
        let (zm, zs) = standardize_fit(&z).unwrap();
        for j in 0..z.cols() {
            assert_abs_diff_eq!(zm[j], 0.0, epsilon = 1e-10);
            assert_abs_diff_eq!(zs[j], 1.0, epsilon = 1e-10);
        }
    }

    proptest! {
        #![proptest_config(ProptestConfig::with_cases(24))]

        #[test]
        fn r_squared_equals_squared_pearson(seed in 0u64..500) {
            let mut rng = crate::rng::DetRng::new(seed);
            let n = 30;
            let col: Vec<f64> = (0..n).map(|_| rng.normal()).collect();
            let y: Vec<f64> = col
                .iter()
                .map(|&v| 0.7 * v + rng.normal())
                .collect();
            let z = mat_from_cols(&[col.clone()]);
            let summary = ols_summary(&z, &y, &["f".to_string()]);
            let r2 = summary[0].r_squared;
            prop_assert!((0.0..=1.0).contains(&r2));

            let nf = n as f64;
            let mz = col.iter().sum::<f64>() / nf;
            let my = y.iter().sum::<f64>() / nf;
            let cov: f64 = col.iter().zip(&y).map(|(&a, &b)| (a - mz) * (b - my)).sum();
            let vz: f64 = col.iter().map(|&a| (a - mz) * (a - mz)).sum();
            let vy: f64 = y.iter().map(|&b| (b - my) * (b - my)).sum();
            let pearson2 = (cov * cov) / (vz * vy);
            prop_assert!((r2 - pearson2).abs() < 1e-10);
        }
    }
}
