//! The four classifiers and their majority-vote ensemble.
//!
//! KNN, LDA, QDA, and multinomial logistic regression all share one
//! prediction contract: `predict_proba` returns a per-class posterior that is
//! non-negative and sums to 1. The ensemble lets each model cast one vote
//! (its argmax class); the modal class wins, ties defer to the MLR posterior
//! restricted to the tied classes, and any remaining tie takes the smaller
//! class index.
//!
//! The models are class-count generic; the session pipeline always runs them
//! with [`NUM_CLASSES`] = 4 (Once, Twice, Multiform, Futile).

mod gaussian;
mod knn;
mod mlr;

pub use gaussian::{lda_fit, qda_fit, LdaModel, QdaModel};
pub use knn::KnnModel;
pub use mlr::{mlr_fit, mlr_gradient, mlr_loss, MlrFit, MlrModel};

use crate::error::Error;
use crate::linalg::Matrix;
use crate::num::Real;
use crate::preprocess::PipelineState;
use crate::textio;
use crate::{Result, Scalar};

/// Class count of the session-outcome problem.
pub const NUM_CLASSES: usize = 4;

/// Per-class posterior probabilities.
pub type Posterior<F> = Vec<F>;

/// Index of the largest entry, ties to the smaller index.
pub fn argmax<F: Real>(values: &[F]) -> usize {
    let mut best = 0;
    for (i, &v) in values.iter().enumerate().skip(1) {
        if v > values[best] {
            best = i;
        }
    }
    best
}

/// Shift-invariant softmax over discriminant scores.
pub fn softmax<F: Real>(scores: &[F]) -> Posterior<F> {
    let max = scores
        .iter()
        .fold(F::neg_infinity(), |m, &v| m.max(v));
    let exps: Vec<F> = scores.iter().map(|&v| (v - max).exp()).collect();
    let total: F = exps.iter().copied().sum();
    exps.into_iter().map(|e| e / total).collect()
}

/// Model hyperparameters.
#[derive(Debug, Clone, PartialEq)]
pub struct ModelConfig {
    pub knn_k: usize,
    pub mlr_l2: f64,
    pub mlr_tol: f64,
    pub mlr_max_iter: usize,
}

impl Default for ModelConfig {
    fn default() -> Self {
        ModelConfig {
            knn_k: 5,
            mlr_l2: 1e-4,
            mlr_tol: 1e-6,
            mlr_max_iter: 10_000,
        }
    }
}

impl ModelConfig {
    pub fn validate(&self) -> Result<()> {
        if self.knn_k == 0 {
            return Err(Error::Config("knn_k must be at least 1".into()));
        }
        if self.mlr_l2 < 0.0 {
            return Err(Error::Config("mlr_l2 must be non-negative".into()));
        }
        if self.mlr_tol <= 0.0 {
            return Err(Error::Config("mlr_tol must be positive".into()));
        }
        if self.mlr_max_iter == 0 {
            return Err(Error::Config("mlr_max_iter must be at least 1".into()));
        }
        Ok(())
    }
}

/// Resolves the majority vote: modal class over the four votes, ties broken
/// by the MLR posterior restricted to the tied classes, then by the smaller
/// class index. Pure so the tie-break chain can be pinned by tests.
pub fn resolve_votes<F: Real>(votes: &[usize; 4], mlr_posterior: &[F]) -> usize {
    let mut counts = [0usize; NUM_CLASSES];
    for &v in votes {
        counts[v] += 1;
    }
    let top = *counts.iter().max().expect("non-empty");
    let tied: Vec<usize> = (0..NUM_CLASSES).filter(|&c| counts[c] == top).collect();
    if tied.len() == 1 {
        return tied[0];
    }
    let mut winner = tied[0];
    for &c in &tied[1..] {
        if mlr_posterior[c] > mlr_posterior[winner] {
            winner = c;
        }
    }
    winner
}

/// The deployable predictor: the fitted preprocessing stack plus the four
/// fitted classifiers and the vote rule version.
#[derive(Debug, Clone, PartialEq)]
pub struct FittedEnsemble<F> {
    pub pipeline: PipelineState<F>,
    pub knn: KnnModel<F>,
    pub lda: LdaModel<F>,
    pub qda: QdaModel<F>,
    pub mlr: MlrModel<F>,
    pub vote_rule_version: u32,
}

/// Current majority-vote rule version written into model files.
pub const VOTE_RULE_VERSION: u32 = 1;

impl<F: Real> FittedEnsemble<F> {
    /// Fits all four models on an already-preprocessed matrix.
    pub fn fit(
        pipeline: PipelineState<F>,
        z: &Matrix<F>,
        y: &[usize],
        cfg: &ModelConfig,
    ) -> Result<Self> {
        cfg.validate()?;
        if z.cols() != pipeline.output_dim() {
            return Err(Error::Validation(format!(
                "processed matrix has {} columns, pipeline produces {}",
                z.cols(),
                pipeline.output_dim()
            )));
        }
        let knn = KnnModel::fit(z.clone(), y.to_vec(), cfg.knn_k, NUM_CLASSES)?;
        let lda = lda_fit(z, y, NUM_CLASSES)?;
        let qda = qda_fit(z, y, NUM_CLASSES)?;
        let mlr = mlr_fit(z, y, NUM_CLASSES, cfg.mlr_l2, cfg.mlr_tol, cfg.mlr_max_iter)?.model;
        Ok(FittedEnsemble {
            pipeline,
            knn,
            lda,
            qda,
            mlr,
            vote_rule_version: VOTE_RULE_VERSION,
        })
    }

    /// Feature-space dimensionality the models expect.
    pub fn input_dim(&self) -> usize {
        self.pipeline.output_dim()
    }

    /// Majority-vote prediction on a preprocessed row. Returns the winning
    /// class and the unweighted mean of the four posteriors.
    pub fn predict_processed(&self, row: &[F]) -> Result<(usize, Posterior<F>)> {
        if row.len() != self.input_dim() {
            return Err(Error::Validation(format!(
                "query has {} features, models expect {}",
                row.len(),
                self.input_dim()
            )));
        }
        let posteriors = [
            self.knn.predict_proba(row)?,
            self.lda.predict_proba(row)?,
            self.qda.predict_proba(row)?,
            self.mlr.predict_proba(row)?,
        ];
        let votes = [
            argmax(&posteriors[0]),
            argmax(&posteriors[1]),
            argmax(&posteriors[2]),
            argmax(&posteriors[3]),
        ];
        let winner = resolve_votes(&votes, &posteriors[3]);
        let quarter = F::one() / F::from_count(4);
        let mean: Posterior<F> = (0..NUM_CLASSES)
            .map(|c| posteriors.iter().map(|p| p[c]).sum::<F>() * quarter)
            .collect();
        Ok((winner, mean))
    }

    /// Prediction on a raw feature row (original dataset columns): replays
    /// the preprocessing stack, then votes.
    pub fn predict_raw(&self, raw: &[F]) -> Result<(usize, Posterior<F>)> {
        let x = Matrix::from_vec(1, raw.len(), raw.to_vec());
        let z = crate::preprocess::apply_pipeline(&self.pipeline, &x)?;
        self.predict_processed(z.row(0))
    }
}

pub const MODEL_FORMAT: &str = "searchlab.model.v1";

impl FittedEnsemble<Scalar> {
    pub fn to_text(&self) -> String {
        let mut out = String::from(MODEL_FORMAT);
        out.push('\n');
        textio::write_usizes(&mut out, "vote_rule", &[self.vote_rule_version as usize]);
        self.pipeline.write_into(&mut out);
        self.knn.write_into(&mut out);
        self.lda.write_into(&mut out);
        self.qda.write_into(&mut out);
        self.mlr.write_into(&mut out);
        out
    }

    pub fn from_text(text: &str) -> Result<Self> {
        let mut lines = textio::Lines::new(text);
        textio::expect_version(&mut lines, MODEL_FORMAT)?;
        let vote_rule_version = lines.expect_usize("vote_rule")? as u32;
        if vote_rule_version != VOTE_RULE_VERSION {
            return Err(Error::Format(format!(
                "model file uses vote rule version {vote_rule_version}, this build implements {VOTE_RULE_VERSION}"
            )));
        }
        let pipeline = PipelineState::read_from(&mut lines)?;
        let knn = KnnModel::read_from(&mut lines)?;
        let lda = LdaModel::read_from(&mut lines)?;
        let qda = QdaModel::read_from(&mut lines)?;
        let mlr = MlrModel::read_from(&mut lines)?;
        Ok(FittedEnsemble {
            pipeline,
            knn,
            lda,
            qda,
            mlr,
            vote_rule_version,
        })
    }

    pub fn write_file(&self, path: &std::path::Path) -> Result<()> {
        std::fs::write(path, self.to_text())?;
        Ok(())
    }

    pub fn read_file(path: &std::path::Path) -> Result<Self> {
        Self::from_text(&std::fs::read_to_string(path)?)
    }
}

/// Fits the preprocessing stack and all four models on a labeled dataset.
pub fn train_ensemble(
    ds: &crate::features::LabeledDataset,
    prep_cfg: &crate::preprocess::PreprocessConfig,
    model_cfg: &ModelConfig,
) -> Result<FittedEnsemble<Scalar>> {
    ds.validate()?;
    let names: Vec<String> = ds.columns.names().iter().map(|s| s.to_string()).collect();
    let y = ds.y_indices();
    let pipeline = crate::preprocess::fit_pipeline(&ds.x, &y, &names, prep_cfg)?;
    let z = crate::preprocess::apply_pipeline(&pipeline, &ds.x)?;
    FittedEnsemble::fit(pipeline, &z, &y, model_cfg)
}

#[cfg(test)]
mod tests {
    use super::*;
    use approx::assert_abs_diff_eq;
    use proptest::prelude::*;

    #[test]
    fn argmax_prefers_smaller_index_on_ties() {
        assert_eq!(argmax(&[0.25f64, 0.25, 0.25, 0.25]), 0);
        assert_eq!(argmax(&[0.1f64, 0.4, 0.4, 0.1]), 1);
        assert_eq!(argmax(&[0.0f64, 0.0, 0.0, 1.0]), 3);
    }

    #[test]
    fn unanimous_vote_wins() {
        let p = vec![0.1f64, 0.1, 0.7, 0.1];
        assert_eq!(resolve_votes(&[2, 2, 2, 2], &p), 2);
    }

    #[test]
    fn strict_majority_wins_over_mlr_preference() {
        // votes (3,1,1,0): class 1 is modal even though MLR prefers 3
        let p = vec![0.05f64, 0.15, 0.05, 0.75];
        assert_eq!(resolve_votes(&[3, 1, 1, 0], &p), 1);
    }

    #[test]
    fn two_two_tie_defers_to_mlr() {
        let favor_one = vec![0.2f64, 0.6, 0.1, 0.1];
        assert_eq!(resolve_votes(&[0, 0, 1, 1], &favor_one), 1);
        let favor_zero = vec![0.6f64, 0.2, 0.1, 0.1];
        assert_eq!(resolve_votes(&[0, 0, 1, 1], &favor_zero), 0);
    }

    #[test]
    fn full_tie_takes_smaller_class() {
        let uniform = vec![0.25f64; 4];
        assert_eq!(resolve_votes(&[0, 1, 2, 3], &uniform), 0);
    }

    proptest! {
        #![proptest_config(ProptestConfig::with_cases(64))]

        #[test]
        fn softmax_is_shift_invariant(
            scores in proptest::collection::vec(-30.0f64..30.0, 4),
            shift in -50.0f64..50.0,
        ) {
            let base = softmax(&scores);
            let shifted_scores: Vec<f64> = scores.iter().map(|s| s + shift).collect();
            let shifted = softmax(&shifted_scores);
            for (a, b) in base.iter().zip(&shifted) {
                prop_assert!((a - b).abs() < 1e-12);
            }
            let sum: f64 = base.iter().sum();
            prop_assert!((sum - 1.0).abs() < 1e-9);
            prop_assert!(base.iter().all(|&p| p >= 0.0));
        }

        #[test]
        fn vote_resolution_is_order_invariant(
            votes in proptest::collection::vec(0usize..4, 4),
            perm in 0usize..24,
        ) {
            let votes: [usize; 4] = votes.try_into().unwrap();
            let p = vec![0.4f64, 0.3, 0.2, 0.1];
            // permute the vote order; multiset semantics must hold
            let mut permuted = votes;
            let (a, b) = (perm % 4, (perm / 4) % 4);
            permuted.swap(a, b);
            prop_assert_eq!(resolve_votes(&votes, &p), resolve_votes(&permuted, &p));
        }
    }
}
