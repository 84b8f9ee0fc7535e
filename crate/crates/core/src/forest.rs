//! Bagged regression forest.
//!
//! Tree `i` is grown on a row sample drawn from the substream
//! `rng::substream(seed, i)`, so every tree can be fit independently (and in
//! parallel) with identical results. The forest predicts the arithmetic mean
//! of its trees' predictions.

use rand::seq::index::sample;
use rand::Rng;
use rayon::prelude::*;
use serde::{Deserialize, Serialize};
use thiserror::Error;

use crate::linreg::r2_score;
use crate::matrix::Matrix;
use crate::rng::substream;
use crate::tree::{fit_tree_with, FeatureSampler, RegressionTree, TreeConfig, TreeError};

#[derive(Debug, Error)]
pub enum ForestError {
    #[error("invalid forest config: {0}")]
    Config(String),
    #[error(transparent)]
    Tree(#[from] TreeError),
    #[error(transparent)]
    Json(#[from] serde_json::Error),
}

pub type Result<T, E = ForestError> = std::result::Result<T, E>;

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
#[serde(tag = "mode", rename_all = "snake_case")]
pub enum SampleMode {
    /// `n` draws with replacement.
    Bootstrap,
    /// `ceil(fraction * n)` distinct rows.
    Subsample { fraction: f64 },
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(default, deny_unknown_fields)]
pub struct ForestConfig {
    pub n_trees: usize,
    pub tree: TreeConfig,
    pub seed: u64,
    pub sample_mode: SampleMode,
    /// Features drawn at each split; `None` considers all of them.
    pub max_features: Option<usize>,
}

impl Default for ForestConfig {
    fn default() -> Self {
        Self {
            n_trees: 100,
            tree: TreeConfig::default(),
            seed: 0,
            sample_mode: SampleMode::Bootstrap,
            max_features: None,
        }
    }
}

impl ForestConfig {
    pub fn validate(&self) -> Result<()> {
        if self.n_trees == 0 {
            return Err(ForestError::Config("n_trees must be >= 1".into()));
        }
        if let SampleMode::Subsample { fraction } = self.sample_mode {
            if !(fraction > 0.0 && fraction <= 1.0) {
                return Err(ForestError::Config(format!(
                    "subsample fraction must be in (0, 1], got {fraction}"
                )));
            }
        }
        if self.max_features == Some(0) {
            return Err(ForestError::Config("max_features must be >= 1".into()));
        }
        self.tree.validate()?;
        Ok(())
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct RandomForest {
    pub config: ForestConfig,
    pub feature_names: Vec<String>,
    pub target_name: String,
    pub train_r2: Option<f64>,
    pub trees: Vec<RegressionTree>,
    /// Training rows of each tree, sorted ascending.
    pub per_tree_row_indices: Vec<Vec<usize>>,
}

/// Row sample for one tree, sorted so the fit does not depend on draw order.
pub fn draw_rows<R: Rng>(rng: &mut R, n: usize, mode: SampleMode) -> Vec<usize> {
    let mut rows = match mode {
        SampleMode::Bootstrap => (0..n).map(|_| rng.random_range(0..n)).collect(),
        SampleMode::Subsample { fraction } => {
            let m = ((fraction * n as f64).ceil() as usize).clamp(1, n);
            sample(rng, n, m).into_vec()
        }
    };
    rows.sort_unstable();
    rows
}

fn fit_one(x: &Matrix, y: &[f64], config: &ForestConfig, index: usize) -> Result<(RegressionTree, Vec<usize>)> {
    let mut rng = substream(config.seed, index as u64);
    let rows = draw_rows(&mut rng, y.len(), config.sample_mode);
    let xs = x.select_rows(&rows);
    let ys: Vec<f64> = rows.iter().map(|&r| y[r]).collect();
    let sampler = config.max_features.map(|count| FeatureSampler {
        count,
        rng: &mut rng,
    });
    let tree = fit_tree_with(&xs, &ys, &config.tree, sampler)?;
    Ok((tree, rows))
}

/// Fits `n_trees` trees in parallel; the result is identical to a sequential
/// fit.
pub fn fit_forest(x: &Matrix, y: &[f64], config: &ForestConfig) -> Result<RandomForest> {
    config.validate()?;
    if y.is_empty() {
        return Err(TreeError::Empty.into());
    }
    if x.nrows() != y.len() {
        return Err(TreeError::LengthMismatch {
            rows: x.nrows(),
            targets: y.len(),
        }
        .into());
    }
    let fitted: Vec<(RegressionTree, Vec<usize>)> = (0..config.n_trees)
        .into_par_iter()
        .map(|i| fit_one(x, y, config, i))
        .collect::<Result<_>>()?;
    let (trees, per_tree_row_indices) = fitted.into_iter().unzip();
    let mut forest = RandomForest {
        config: config.clone(),
        feature_names: (0..x.ncols()).map(|j| format!("f{j}")).collect(),
        target_name: "y".into(),
        train_r2: None,
        trees,
        per_tree_row_indices,
    };
    let fitted = forest.predict(x)?;
    forest.train_r2 = r2_score(y, &fitted).ok();
    Ok(forest)
}

impl RandomForest {
    pub fn with_names(mut self, features: &[String], target: &str) -> Self {
        assert_eq!(features.len(), self.feature_names.len(), "feature name count");
        self.feature_names = features.to_vec();
        self.target_name = target.to_string();
        for t in &mut self.trees {
            t.feature_names = features.to_vec();
            t.target_name = target.to_string();
        }
        self
    }

    /// Mean of the trees' predictions, summed in tree order.
    pub fn predict_row(&self, row: &[f64]) -> Result<f64> {
        let mut sum = 0.0;
        for t in &self.trees {
            sum += t.predict_row(row)?;
        }
        Ok(sum / self.trees.len() as f64)
    }

    pub fn predict(&self, x: &Matrix) -> Result<Vec<f64>> {
        x.rows().map(|r| self.predict_row(r)).collect()
    }

    pub fn to_json(&self) -> String {
        serde_json::to_string_pretty(self).expect("forest serializes")
    }

    pub fn from_json(s: &str) -> Result<Self> {
        let mut de = serde_json::Deserializer::from_str(s);
        de.disable_recursion_limit();
        let forest = Self::deserialize(&mut de)?;
        de.end()?;
        forest.config.validate()?;
        if forest.trees.len() != forest.config.n_trees {
            return Err(ForestError::Config(format!(
                "document has {} trees, config says {}",
                forest.trees.len(),
                forest.config.n_trees
            )));
        }
        Ok(forest)
    }
}
