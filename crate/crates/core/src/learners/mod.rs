//! Base learners: one-vs-rest logistic elastic net and one-vs-one
//! polynomial-kernel SVM, behind a common [`TrainedModel`].

pub mod enet;
pub mod svm;

use std::path::Path;

use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};
use crate::features::{FeatureId, FeatureMatrix};
use crate::preprocess::ColumnStats;
use crate::windowing::Label;

pub use enet::{enet_cv_fit, enet_fit, CvSummary, EnetGrid, EnetModel, EnetParams};
pub use svm::{svm_fit, SvmModel, SvmParams};

const MODEL_FORMAT: &str = "lobbench-model";
const MODEL_VERSION: u32 = 1;

#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum ModelKind {
    Enet,
    Svm,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(tag = "kind", rename_all = "snake_case")]
pub enum ModelBody {
    Enet(EnetModel),
    Svm(SvmModel),
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct TrainedModel {
    pub format: String,
    pub version: u32,
    pub feature_ids: Vec<FeatureId>,
    pub body: ModelBody,
    /// Statistics the training rows were standardized with, if any.
    pub column_stats: Option<ColumnStats>,
    pub converged: bool,
    pub diagnostics: Vec<String>,
}

impl TrainedModel {
    pub(crate) fn new(feature_ids: Vec<FeatureId>, body: ModelBody, converged: bool, diagnostics: Vec<String>) -> Self {
        TrainedModel {
            format: MODEL_FORMAT.to_string(),
            version: MODEL_VERSION,
            feature_ids,
            body,
            column_stats: None,
            converged,
            diagnostics,
        }
    }

    pub fn kind(&self) -> ModelKind {
        match self.body {
            ModelBody::Enet(_) => ModelKind::Enet,
            ModelBody::Svm(_) => ModelKind::Svm,
        }
    }

    pub fn with_column_stats(mut self, stats: ColumnStats) -> Self {
        self.column_stats = Some(stats);
        self
    }

    /// Per-class scores: linear scores for the elastic net, summed pairwise
    /// decision values for the SVM. Absent classes score `-inf`.
    pub fn scores(&self, x: &[f64]) -> [f64; 3] {
        match &self.body {
            ModelBody::Enet(m) => m.scores(x),
            ModelBody::Svm(m) => m.scores(x),
        }
    }

    pub fn predict_one(&self, x: &[f64]) -> (Label, [f64; 3]) {
        match &self.body {
            ModelBody::Enet(m) => {
                let s = m.scores(x);
                (argmax_label(&s), s)
            }
            ModelBody::Svm(m) => m.predict_one(x),
        }
    }

    pub fn check_features(&self, rows: &FeatureMatrix) -> Result<()> {
        if rows.feature_ids != self.feature_ids {
            return Err(Error::Param(format!(
                "feature order mismatch: model expects {:?}, rows carry {:?}",
                self.feature_ids.iter().map(ToString::to_string).collect::<Vec<_>>(),
                rows.feature_ids.iter().map(ToString::to_string).collect::<Vec<_>>()
            )));
        }
        Ok(())
    }

    pub fn predict_with_scores(&self, rows: &FeatureMatrix) -> Result<Vec<(Label, [f64; 3])>> {
        self.check_features(rows)?;
        Ok(rows.rows.iter().map(|r| self.predict_one(&r.values)).collect())
    }

    pub fn save(&self, path: impl AsRef<Path>) -> Result<()> {
        let path = path.as_ref();
        let text = serde_json::to_string(self)?;
        std::fs::write(path, text).map_err(|e| Error::io(path, e))
    }

    pub fn load(path: impl AsRef<Path>) -> Result<TrainedModel> {
        let path = path.as_ref();
        let text = std::fs::read_to_string(path).map_err(|e| Error::io(path, e))?;
        let m: TrainedModel = serde_json::from_str(&text)?;
        if m.format != MODEL_FORMAT {
            return Err(Error::Param(format!("{} is not a model file", path.display())));
        }
        if m.version != MODEL_VERSION {
            return Err(Error::Version {
                found: m.version,
                expected: MODEL_VERSION,
            });
        }
        Ok(m)
    }
}

/// Which base learner to fit and with what settings.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(tag = "kind", rename_all = "snake_case")]
pub enum LearnerSpec {
    /// Cross-validated over `grid` unless it holds a single point.
    Enet {
        grid: EnetGrid,
        folds: usize,
        params: EnetParams,
    },
    Svm(SvmParams),
}

impl LearnerSpec {
    pub fn kind(&self) -> ModelKind {
        match self {
            LearnerSpec::Enet { .. } => ModelKind::Enet,
            LearnerSpec::Svm(_) => ModelKind::Svm,
        }
    }

    pub fn validate(&self) -> Result<()> {
        match self {
            LearnerSpec::Enet { grid, folds, params } => {
                if grid.is_empty() {
                    return Err(Error::Param("empty elastic-net grid".into()));
                }
                if grid.len() > 1 && *folds < 2 {
                    return Err(Error::Param(format!("need at least 2 folds, got {folds}")));
                }
                for &lambda in &grid.lambdas {
                    for &alpha_star in &grid.alphas {
                        EnetParams {
                            lambda,
                            alpha_star,
                            ..*params
                        }
                        .validate()?;
                    }
                }
                Ok(())
            }
            LearnerSpec::Svm(p) => p.validate(),
        }
    }

    /// `seed` drives the cross-validation folds; SVM fits ignore it.
    pub fn fit(&self, train: &FeatureMatrix, seed: u64) -> Result<TrainedModel> {
        match self {
            LearnerSpec::Enet { grid, folds, params } => {
                if grid.len() == 1 {
                    let p = EnetParams {
                        lambda: grid.lambdas[0],
                        alpha_star: grid.alphas[0],
                        ..*params
                    };
                    enet_fit(train, &p)
                } else {
                    enet_cv_fit(train, grid, *folds, seed, params).map(|(m, _)| m)
                }
            }
            LearnerSpec::Svm(p) => svm_fit(train, p),
        }
    }

    /// Resolves a cross-validated grid to its winner on `train`, leaving a
    /// spec whose fits need no further tuning. Other specs are returned as is.
    pub fn tuned(&self, train: &FeatureMatrix, seed: u64) -> Result<LearnerSpec> {
        match self {
            LearnerSpec::Enet { grid, folds, params } if grid.len() > 1 => {
                let (_, cv) = enet_cv_fit(train, grid, *folds, seed, params)?;
                Ok(LearnerSpec::Enet {
                    grid: EnetGrid {
                        lambdas: vec![cv.lambda],
                        alphas: vec![cv.alpha_star],
                    },
                    folds: *folds,
                    params: *params,
                })
            }
            _ => Ok(self.clone()),
        }
    }
}

pub fn predict(model: &TrainedModel, rows: &FeatureMatrix) -> Result<Vec<Label>> {
    Ok(model
        .predict_with_scores(rows)?
        .into_iter()
        .map(|(l, _)| l)
        .collect())
}

/// Highest score wins; equal scores go to the earlier class.
pub fn argmax_label(scores: &[f64; 3]) -> Label {
    let mut best = 0;
    for c in 1..3 {
        if scores[c] > scores[best] {
            best = c;
        }
    }
    Label::ALL[best]
}

/// Rows as one dense row-major buffer plus labels; rejects non-finite input.
pub(crate) fn dense(rows: &FeatureMatrix) -> Result<(Vec<f64>, Vec<Label>, usize)> {
    rows.check_finite()?;
    let p = rows.n_features();
    let mut x = Vec::with_capacity(rows.len() * p);
    for r in &rows.rows {
        if r.values.len() != p {
            return Err(Error::Param("row length does not match feature count".into()));
        }
        x.extend_from_slice(&r.values);
    }
    Ok((x, rows.labels(), p))
}

pub(crate) fn classes_present(labels: &[Label]) -> [bool; 3] {
    let mut present = [false; 3];
    for l in labels {
        present[l.index()] = true;
    }
    present
}
