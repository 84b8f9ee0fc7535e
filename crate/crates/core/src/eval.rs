//! Cross-validation and depth sweeps.

use rand::seq::SliceRandom;
use rayon::prelude::*;
use serde::{Deserialize, Serialize};
use sha2::{Digest, Sha256};
use thiserror::Error;

use crate::forest::{fit_forest, ForestConfig, ForestError, RandomForest};
use crate::linreg::{fit_poly, r2_score, LinregError, PolyModel};
use crate::matrix::Matrix;
use crate::rng::{substream, FOLD_STREAM};
use crate::tree::{fit_tree, RegressionTree, TreeConfig, TreeError};

/// Stream index reserved for train/test splitting.
pub const SPLIT_STREAM: u64 = 0x5911_7000_5911_7000;

/// Default overfit tolerance on test R².
pub const DEFAULT_OVERFIT_TOLERANCE: f64 = 0.005;

pub const DEFAULT_FOLDS: usize = 5;

#[derive(Debug, Error)]
pub enum EvalError {
    #[error("k must be in 2..={n}, got {k}")]
    FoldCount { k: usize, n: usize },
    #[error("fold plan covers {plan} rows but the data has {data}")]
    PlanMismatch { plan: usize, data: usize },
    #[error("feature matrix has {rows} rows but there are {targets} targets")]
    LengthMismatch { rows: usize, targets: usize },
    #[error("feature index {index} out of range for {cols} columns")]
    FeatureIndex { index: usize, cols: usize },
    #[error("{0}")]
    Unsupported(String),
    #[error("test fraction must be in (0, 1), got {0}")]
    TestFraction(f64),
    #[error(transparent)]
    Linreg(#[from] LinregError),
    #[error(transparent)]
    Tree(#[from] TreeError),
    #[error(transparent)]
    Forest(#[from] ForestError),
}

pub type Result<T, E = EvalError> = std::result::Result<T, E>;

/// Seeded assignment of rows to folds.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct FoldPlan {
    pub k: usize,
    pub seed: u64,
    pub assignments: Vec<usize>,
}

/// Shuffles the rows with the fold substream of `seed`, then deals them to
/// folds round-robin, so fold sizes differ by at most one.
pub fn kfold_plan(n: usize, k: usize, seed: u64) -> Result<FoldPlan> {
    if k < 2 || k > n {
        return Err(EvalError::FoldCount { k, n });
    }
    let mut perm: Vec<usize> = (0..n).collect();
    perm.shuffle(&mut substream(seed, FOLD_STREAM));
    let mut assignments = vec![0; n];
    for (i, &row) in perm.iter().enumerate() {
        assignments[row] = i % k;
    }
    Ok(FoldPlan {
        k,
        seed,
        assignments,
    })
}

impl FoldPlan {
    pub fn n(&self) -> usize {
        self.assignments.len()
    }

    pub fn test_rows(&self, fold: usize) -> Vec<usize> {
        (0..self.n()).filter(|&r| self.assignments[r] == fold).collect()
    }

    pub fn train_rows(&self, fold: usize) -> Vec<usize> {
        (0..self.n()).filter(|&r| self.assignments[r] != fold).collect()
    }

    pub fn fold_sizes(&self) -> Vec<usize> {
        let mut sizes = vec![0; self.k];
        for &a in &self.assignments {
            sizes[a] += 1;
        }
        sizes
    }

    /// SHA-256 over `k` and the assignments; equal digests mean the same folds.
    pub fn digest(&self) -> String {
        let mut h = Sha256::new();
        h.update((self.k as u64).to_le_bytes());
        for &a in &self.assignments {
            h.update((a as u64).to_le_bytes());
        }
        format!("{:x}", h.finalize())
    }
}

/// Seeded shuffle split into `(train, test)` row indices, each sorted.
pub fn train_test_split(n: usize, test_fraction: f64, seed: u64) -> Result<(Vec<usize>, Vec<usize>)> {
    if !(test_fraction > 0.0 && test_fraction < 1.0) {
        return Err(EvalError::TestFraction(test_fraction));
    }
    let mut perm: Vec<usize> = (0..n).collect();
    perm.shuffle(&mut substream(seed, SPLIT_STREAM));
    let n_test = ((n as f64 * test_fraction).round() as usize).clamp(1, n.saturating_sub(1).max(1));
    let mut test = perm[..n_test].to_vec();
    let mut train = perm[n_test..].to_vec();
    test.sort_unstable();
    train.sort_unstable();
    Ok((train, test))
}

/// What to fit on each training set.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(tag = "kind", rename_all = "snake_case")]
pub enum ModelSpec {
    /// Polynomial in a single column of the feature matrix.
    Poly { degree: usize, feature: usize },
    Tree { config: TreeConfig },
    Forest { config: ForestConfig },
}

#[derive(Debug, Clone)]
pub enum FittedModel {
    Poly { model: PolyModel, feature: usize },
    Tree(RegressionTree),
    Forest(RandomForest),
}

impl ModelSpec {
    pub fn fit(&self, x: &Matrix, y: &[f64]) -> Result<FittedModel> {
        if x.nrows() != y.len() {
            return Err(EvalError::LengthMismatch {
                rows: x.nrows(),
                targets: y.len(),
            });
        }
        Ok(match self {
            ModelSpec::Poly { degree, feature } => {
                if *feature >= x.ncols() {
                    return Err(EvalError::FeatureIndex {
                        index: *feature,
                        cols: x.ncols(),
                    });
                }
                FittedModel::Poly {
                    model: fit_poly(&x.column(*feature), y, *degree)?,
                    feature: *feature,
                }
            }
            ModelSpec::Tree { config } => FittedModel::Tree(fit_tree(x, y, config)?),
            ModelSpec::Forest { config } => FittedModel::Forest(fit_forest(x, y, config)?),
        })
    }

    /// Same model with its tree depth limit replaced.
    pub fn with_max_depth(&self, depth: usize) -> Result<Self> {
        match self {
            ModelSpec::Tree { config } => Ok(ModelSpec::Tree {
                config: TreeConfig {
                    max_depth: Some(depth),
                    ..config.clone()
                },
            }),
            ModelSpec::Forest { config } => {
                let mut config = config.clone();
                config.tree.max_depth = Some(depth);
                Ok(ModelSpec::Forest { config })
            }
            ModelSpec::Poly { .. } => Err(EvalError::Unsupported(
                "depth sweeps need a tree or forest model".into(),
            )),
        }
    }
}

impl FittedModel {
    pub fn predict(&self, x: &Matrix) -> Result<Vec<f64>> {
        Ok(match self {
            FittedModel::Poly { model, feature } => {
                if *feature >= x.ncols() {
                    return Err(EvalError::FeatureIndex {
                        index: *feature,
                        cols: x.ncols(),
                    });
                }
                crate::linreg::predict(model, &x.column(*feature))
            }
            FittedModel::Tree(t) => t.predict(x)?,
            FittedModel::Forest(f) => f.predict(x)?,
        })
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct CvReport {
    pub k: usize,
    pub seed: u64,
    pub plan_digest: String,
    pub model: ModelSpec,
    pub fold_sizes: Vec<usize>,
    /// `None` for flagged folds.
    pub per_fold_r2: Vec<Option<f64>>,
    /// Folds whose test targets have zero variance; they are not scored.
    pub flagged_folds: Vec<usize>,
    pub mean_r2: Option<f64>,
    /// Population standard deviation of the scored folds.
    pub std_r2: Option<f64>,
}

/// Unweighted mean and population standard deviation of the defined scores.
pub fn summarize(scores: &[Option<f64>]) -> (Option<f64>, Option<f64>) {
    let defined: Vec<f64> = scores.iter().flatten().copied().collect();
    if defined.is_empty() {
        return (None, None);
    }
    let n = defined.len() as f64;
    let mean = defined.iter().sum::<f64>() / n;
    let var = defined.iter().map(|s| (s - mean).powi(2)).sum::<f64>() / n;
    (Some(mean), Some(var.sqrt()))
}

fn is_constant(v: &[f64]) -> bool {
    v.iter().all(|&a| a == v[0])
}

/// Fits on every fold's complement and scores R² on the fold.
pub fn cross_validate(x: &Matrix, y: &[f64], spec: &ModelSpec, plan: &FoldPlan) -> Result<CvReport> {
    if x.nrows() != y.len() {
        return Err(EvalError::LengthMismatch {
            rows: x.nrows(),
            targets: y.len(),
        });
    }
    if plan.n() != y.len() {
        return Err(EvalError::PlanMismatch {
            plan: plan.n(),
            data: y.len(),
        });
    }
    let scores: Vec<Option<f64>> = (0..plan.k)
        .into_par_iter()
        .map(|fold| -> Result<Option<f64>> {
            let test = plan.test_rows(fold);
            let y_test: Vec<f64> = test.iter().map(|&r| y[r]).collect();
            if y_test.len() < 2 || is_constant(&y_test) {
                return Ok(None);
            }
            let train = plan.train_rows(fold);
            let y_train: Vec<f64> = train.iter().map(|&r| y[r]).collect();
            let model = spec.fit(&x.select_rows(&train), &y_train)?;
            let pred = model.predict(&x.select_rows(&test))?;
            Ok(Some(r2_score(&y_test, &pred)?))
        })
        .collect::<Result<_>>()?;
    let (mean_r2, std_r2) = summarize(&scores);
    Ok(CvReport {
        k: plan.k,
        seed: plan.seed,
        plan_digest: plan.digest(),
        model: spec.clone(),
        fold_sizes: plan.fold_sizes(),
        flagged_folds: scores
            .iter()
            .enumerate()
            .filter(|(_, s)| s.is_none())
            .map(|(i, _)| i)
            .collect(),
        per_fold_r2: scores,
        mean_r2,
        std_r2,
    })
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct DepthSweepReport {
    pub model: ModelSpec,
    pub depths: Vec<usize>,
    pub train_r2: Vec<Option<f64>>,
    pub test_r2: Vec<Option<f64>>,
    pub tolerance: f64,
    pub overfit_depth: Option<usize>,
}

/// Smallest listed depth whose test score is beaten by at least `tolerance`
/// at every later listed depth. The last depth never qualifies.
pub fn find_overfit_depth(depths: &[usize], test_r2: &[Option<f64>], tolerance: f64) -> Option<usize> {
    (0..depths.len().saturating_sub(1)).find_map(|i| {
        let peak = test_r2[i]?;
        test_r2[i + 1..]
            .iter()
            .all(|s| s.is_some_and(|v| v <= peak - tolerance))
            .then_some(depths[i])
    })
}

/// Fits one model per depth and records train and test R².
pub fn depth_sweep(
    x_train: &Matrix,
    y_train: &[f64],
    x_test: &Matrix,
    y_test: &[f64],
    depths: &[usize],
    spec: &ModelSpec,
    tolerance: f64,
) -> Result<DepthSweepReport> {
    let specs = depths
        .iter()
        .map(|&d| spec.with_max_depth(d))
        .collect::<Result<Vec<_>>>()?;
    let scores: Vec<(Option<f64>, Option<f64>)> = specs
        .par_iter()
        .map(|s| -> Result<_> {
            let model = s.fit(x_train, y_train)?;
            let train = r2_score(y_train, &model.predict(x_train)?).ok();
            let test = r2_score(y_test, &model.predict(x_test)?).ok();
            Ok((train, test))
        })
        .collect::<Result<_>>()?;
    let (train_r2, test_r2): (Vec<_>, Vec<_>) = scores.into_iter().unzip();
    Ok(DepthSweepReport {
        model: spec.clone(),
        depths: depths.to_vec(),
        overfit_depth: find_overfit_depth(depths, &test_r2, tolerance),
        train_r2,
        test_r2,
        tolerance,
    })
}
