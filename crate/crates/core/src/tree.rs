//! Regression trees grown by greedy axis/threshold search.
//!
//! A node holding the training set `S` is split on a single feature `j` and a
//! threshold `t` into
//!
//! ```text
//! S_left  = { (x, y) in S | x_j <  t }
//! S_right = { (x, y) in S | x_j >= t }
//! ```
//!
//! Each child's variance is the mean squared deviation of its targets from
//! their mean (population normalization), and the split loss is the plain,
//! **unweighted** sum of the two child variances. The pair `(j, t)` with the
//! smallest loss wins; candidate thresholds are midpoints between consecutive
//! distinct values of the feature, and ties go to the smallest `j`, then the
//! smallest `t`. Leaves predict the mean of their training targets, which is
//! the minimizer of the leaf's squared error.
//!
//! A size-weighted loss (`(n_l V_l + n_r V_r) / n`) is available through
//! [`TreeConfig::weighted_loss`] for comparison; it is off by default.

use std::fmt::Write as _;

use rand::seq::index::sample;
use serde::{Deserialize, Serialize};
use thiserror::Error;

use crate::linreg::r2_score;
use crate::matrix::Matrix;
use crate::rng::StreamRng;

#[derive(Debug, Error)]
pub enum TreeError {
    #[error("cannot fit a tree on an empty dataset")]
    Empty,
    #[error("feature matrix has no columns")]
    NoFeatures,
    #[error("feature matrix has {rows} rows but there are {targets} targets")]
    LengthMismatch { rows: usize, targets: usize },
    #[error("training data contains non-finite values")]
    NonFinite,
    #[error("row has {got} features, the tree was trained on {expected}")]
    WidthMismatch { expected: usize, got: usize },
    #[error("invalid tree config: {0}")]
    Config(String),
    #[error("malformed tree document: {0}")]
    Document(String),
    #[error(transparent)]
    Json(#[from] serde_json::Error),
}

pub type Result<T, E = TreeError> = std::result::Result<T, E>;

/// Growth limits. `max_depth = None` grows until the other stopping rules
/// apply.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(default, deny_unknown_fields)]
pub struct TreeConfig {
    pub max_depth: Option<usize>,
    pub min_samples_split: usize,
    pub min_samples_leaf: usize,
    pub weighted_loss: bool,
}

impl Default for TreeConfig {
    fn default() -> Self {
        Self {
            max_depth: None,
            min_samples_split: 2,
            min_samples_leaf: 1,
            weighted_loss: false,
        }
    }
}

impl TreeConfig {
    pub fn with_max_depth(depth: usize) -> Self {
        Self {
            max_depth: Some(depth),
            ..Self::default()
        }
    }

    pub fn validate(&self) -> Result<()> {
        if self.min_samples_split < 2 {
            return Err(TreeError::Config(format!(
                "min_samples_split must be >= 2, got {}",
                self.min_samples_split
            )));
        }
        if self.min_samples_leaf < 1 {
            return Err(TreeError::Config("min_samples_leaf must be >= 1".into()));
        }
        Ok(())
    }
}

/// Route left iff `x[feature] < threshold`.
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct SplitRule {
    #[serde(rename = "j")]
    pub feature: usize,
    #[serde(rename = "t")]
    pub threshold: f64,
}

impl SplitRule {
    #[inline]
    pub fn goes_left(&self, row: &[f64]) -> bool {
        row[self.feature] < self.threshold
    }
}

#[derive(Debug, Clone, Copy, PartialEq)]
pub struct SplitCandidate {
    pub rule: SplitRule,
    pub loss: f64,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(try_from = "NodeDoc", into = "NodeDoc")]
pub enum TreeNode {
    Internal {
        rule: SplitRule,
        left: Box<TreeNode>,
        right: Box<TreeNode>,
        n: usize,
        variance: f64,
    },
    Leaf {
        prediction: f64,
        n: usize,
        variance: f64,
    },
}

/// Wire form of a node.
#[derive(Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
struct NodeDoc {
    rule: Option<SplitRule>,
    n: usize,
    variance: f64,
    prediction: Option<f64>,
    left: Option<Box<NodeDoc>>,
    right: Option<Box<NodeDoc>>,
}

impl From<TreeNode> for NodeDoc {
    fn from(node: TreeNode) -> Self {
        match node {
            TreeNode::Internal {
                rule,
                left,
                right,
                n,
                variance,
            } => NodeDoc {
                rule: Some(rule),
                n,
                variance,
                prediction: None,
                left: Some(Box::new((*left).into())),
                right: Some(Box::new((*right).into())),
            },
            TreeNode::Leaf {
                prediction,
                n,
                variance,
            } => NodeDoc {
                rule: None,
                n,
                variance,
                prediction: Some(prediction),
                left: None,
                right: None,
            },
        }
    }
}

impl TryFrom<NodeDoc> for TreeNode {
    type Error = TreeError;
    fn try_from(d: NodeDoc) -> Result<Self> {
        match (d.rule, d.prediction, d.left, d.right) {
            (Some(rule), None, Some(l), Some(r)) => Ok(TreeNode::Internal {
                rule,
                left: Box::new((*l).try_into()?),
                right: Box::new((*r).try_into()?),
                n: d.n,
                variance: d.variance,
            }),
            (None, Some(prediction), None, None) => Ok(TreeNode::Leaf {
                prediction,
                n: d.n,
                variance: d.variance,
            }),
            _ => Err(TreeError::Document(
                "a node needs either a rule and two children, or a prediction".into(),
            )),
        }
    }
}

impl TreeNode {
    pub fn n(&self) -> usize {
        match self {
            TreeNode::Internal { n, .. } | TreeNode::Leaf { n, .. } => *n,
        }
    }

    pub fn variance(&self) -> f64 {
        match self {
            TreeNode::Internal { variance, .. } | TreeNode::Leaf { variance, .. } => *variance,
        }
    }

    pub fn is_leaf(&self) -> bool {
        matches!(self, TreeNode::Leaf { .. })
    }

    /// Longest root-to-leaf path, in edges.
    pub fn depth(&self) -> usize {
        match self {
            TreeNode::Leaf { .. } => 0,
            TreeNode::Internal { left, right, .. } => 1 + left.depth().max(right.depth()),
        }
    }

    pub fn count_leaves(&self) -> usize {
        match self {
            TreeNode::Leaf { .. } => 1,
            TreeNode::Internal { left, right, .. } => left.count_leaves() + right.count_leaves(),
        }
    }

    pub fn count_internal(&self) -> usize {
        match self {
            TreeNode::Leaf { .. } => 0,
            TreeNode::Internal { left, right, .. } => {
                1 + left.count_internal() + right.count_internal()
            }
        }
    }

    /// Leaf reached by `row`.
    pub fn route(&self, row: &[f64]) -> &TreeNode {
        let mut node = self;
        while let TreeNode::Internal {
            rule, left, right, ..
        } = node
        {
            node = if rule.goes_left(row) { left } else { right };
        }
        node
    }

    fn leaf_value(&self) -> f64 {
        match self {
            TreeNode::Leaf { prediction, .. } => *prediction,
            TreeNode::Internal { .. } => unreachable!("route always ends at a leaf"),
        }
    }

    fn max_feature(&self) -> Option<usize> {
        match self {
            TreeNode::Leaf { .. } => None,
            TreeNode::Internal {
                rule, left, right, ..
            } => [Some(rule.feature), left.max_feature(), right.max_feature()]
                .into_iter()
                .flatten()
                .max(),
        }
    }
}

/// A fitted regression tree.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct RegressionTree {
    pub feature_names: Vec<String>,
    pub target_name: String,
    pub config: TreeConfig,
    pub train_r2: Option<f64>,
    pub root: TreeNode,
}

/// Mean squared deviation from the mean, `(1/n) sum (y - mean)^2`.
pub fn node_variance(y: &[f64]) -> Option<f64> {
    if y.is_empty() {
        return None;
    }
    let n = y.len() as f64;
    let mean = y.iter().sum::<f64>() / n;
    Some(y.iter().map(|v| (v - mean) * (v - mean)).sum::<f64>() / n)
}

/// `V(left) + V(right)`, unweighted by child size. `None` if a child is empty.
pub fn split_loss(y_left: &[f64], y_right: &[f64]) -> Option<f64> {
    Some(node_variance(y_left)? + node_variance(y_right)?)
}

/// `(n_l V(left) + n_r V(right)) / (n_l + n_r)`.
pub fn weighted_split_loss(y_left: &[f64], y_right: &[f64]) -> Option<f64> {
    let (nl, nr) = (y_left.len() as f64, y_right.len() as f64);
    Some((nl * node_variance(y_left)? + nr * node_variance(y_right)?) / (nl + nr))
}

fn mean(y: &[f64]) -> f64 {
    y.iter().sum::<f64>() / y.len() as f64
}

fn is_constant(y: &[f64]) -> bool {
    y.iter().all(|&v| v == y[0])
}

/// Midpoint of two consecutive distinct values, kept inside `(lo, hi]`.
pub fn midpoint(lo: f64, hi: f64) -> f64 {
    let t = (lo + hi) / 2.0;
    if t > lo && t <= hi {
        t
    } else {
        hi
    }
}

fn loss_of(config: &TreeConfig, left: &[f64], right: &[f64]) -> f64 {
    if config.weighted_loss {
        weighted_split_loss(left, right)
    } else {
        split_loss(left, right)
    }
    .expect("both children non-empty")
}

struct Scratch {
    left: Vec<f64>,
    right: Vec<f64>,
    /// Per-row flag for the side being partitioned.
    goes_left: Vec<bool>,
}

impl Scratch {
    fn new() -> Self {
        Self {
            left: Vec::new(),
            right: Vec::new(),
            goes_left: Vec::new(),
        }
    }
}

/// Exact loss of a candidate, with both children collected in row order.
fn exact_loss(
    x: &Matrix,
    y: &[f64],
    rows: &[usize],
    rule: SplitRule,
    config: &TreeConfig,
    s: &mut Scratch,
) -> f64 {
    s.left.clear();
    s.right.clear();
    for &r in rows {
        if rule.goes_left(x.row(r)) {
            s.left.push(y[r]);
        } else {
            s.right.push(y[r]);
        }
    }
    loss_of(config, &s.left, &s.right)
}

/// Per-feature row orders, each sorted by `(x[r][j], r)`.
fn sorted_orders(x: &Matrix, rows: &[usize]) -> Vec<Vec<usize>> {
    (0..x.ncols())
        .map(|j| {
            let mut o = rows.to_vec();
            o.sort_by(|&a, &b| x.get(a, j).total_cmp(&x.get(b, j)).then(a.cmp(&b)));
            o
        })
        .collect()
}

/// Best split over `rows` restricted to `features`.
///
/// `orders[j]` holds the same rows sorted by feature `j`. Each feature is
/// swept with prefix sums of the centered targets to screen candidates;
/// every candidate within a small tolerance of the screened minimum is then
/// re-scored exactly from the split sets, and the final choice uses that
/// exact loss with the `(loss, j, t)` order.
fn best_split_sorted(
    x: &Matrix,
    y: &[f64],
    rows: &[usize],
    orders: &[Vec<usize>],
    features: &[usize],
    config: &TreeConfig,
    s: &mut Scratch,
) -> Option<SplitCandidate> {
    let n = rows.len();
    if n < config.min_samples_split.max(2) {
        return None;
    }
    let ys: Vec<f64> = rows.iter().map(|&r| y[r]).collect();
    if is_constant(&ys) {
        return None;
    }
    let center = mean(&ys);
    let node_var = node_variance(&ys).expect("non-empty");
    let min_leaf = config.min_samples_leaf.max(1);
    if n < 2 * min_leaf {
        return None;
    }
    let total1: f64 = ys.iter().map(|v| v - center).sum();
    let total2: f64 = ys.iter().map(|v| (v - center).powi(2)).sum();

    // (feature, threshold, screened loss)
    let mut screened: Vec<(usize, f64, f64)> = Vec::new();
    let mut best_screened = f64::INFINITY;
    let nf = n as f64;
    for &j in features {
        let order = &orders[j];
        let (mut s1, mut s2) = (0.0, 0.0);
        for pos in 1..n {
            let c = y[order[pos - 1]] - center;
            s1 += c;
            s2 += c * c;
            let lo = x.get(order[pos - 1], j);
            let hi = x.get(order[pos], j);
            if lo == hi || pos < min_leaf || n - pos < min_leaf {
                continue;
            }
            let (nl, nr) = (pos as f64, (n - pos) as f64);
            let vl = (s2 / nl - (s1 / nl).powi(2)).max(0.0);
            let (r1, r2) = (total1 - s1, total2 - s2);
            let vr = (r2 / nr - (r1 / nr).powi(2)).max(0.0);
            let loss = if config.weighted_loss {
                (nl * vl + nr * vr) / nf
            } else {
                vl + vr
            };
            if loss <= best_screened + 1e-9 * node_var + f64::MIN_POSITIVE {
                best_screened = best_screened.min(loss);
                screened.push((j, midpoint(lo, hi), loss));
            }
        }
    }
    if screened.is_empty() {
        return None;
    }
    let tol = 1e-9 * node_var + f64::MIN_POSITIVE;
    let mut best: Option<SplitCandidate> = None;
    for &(j, t, approx) in &screened {
        if approx > best_screened + tol {
            continue;
        }
        let rule = SplitRule {
            feature: j,
            threshold: t,
        };
        let loss = exact_loss(x, y, rows, rule, config, s);
        let better = match best {
            None => true,
            Some(b) => {
                loss < b.loss
                    || (loss == b.loss
                        && (j < b.rule.feature || (j == b.rule.feature && t < b.rule.threshold)))
            }
        };
        if better {
            best = Some(SplitCandidate { rule, loss });
        }
    }
    best
}

fn check_inputs(x: &Matrix, y: &[f64]) -> Result<()> {
    if x.nrows() != y.len() {
        return Err(TreeError::LengthMismatch {
            rows: x.nrows(),
            targets: y.len(),
        });
    }
    if y.is_empty() {
        return Err(TreeError::Empty);
    }
    if x.ncols() == 0 {
        return Err(TreeError::NoFeatures);
    }
    if !x.all_finite() || y.iter().any(|v| !v.is_finite()) {
        return Err(TreeError::NonFinite);
    }
    Ok(())
}

/// Loss-minimizing split over all rows and features, or `None` when no
/// admissible candidate exists or the targets are constant.
pub fn best_split(x: &Matrix, y: &[f64], config: &TreeConfig) -> Option<SplitCandidate> {
    if x.nrows() != y.len() || y.is_empty() {
        return None;
    }
    let rows: Vec<usize> = (0..y.len()).collect();
    let features: Vec<usize> = (0..x.ncols()).collect();
    let orders = sorted_orders(x, &rows);
    best_split_sorted(x, y, &rows, &orders, &features, config, &mut Scratch::new())
}

/// Draws `count` of the features at every node.
pub(crate) struct FeatureSampler<'a> {
    pub count: usize,
    pub rng: &'a mut StreamRng,
}

struct Grower<'a> {
    x: &'a Matrix,
    y: &'a [f64],
    config: &'a TreeConfig,
    sampler: Option<FeatureSampler<'a>>,
    scratch: Scratch,
    all_features: Vec<usize>,
}

impl Grower<'_> {
    /// `rows` ascending; `orders[j]` the same rows sorted by feature `j`.
    fn grow(&mut self, rows: Vec<usize>, orders: Vec<Vec<usize>>, depth: usize) -> TreeNode {
        let ys: Vec<f64> = rows.iter().map(|&r| self.y[r]).collect();
        let n = rows.len();
        let variance = node_variance(&ys).expect("nodes are never empty");
        let leaf = TreeNode::Leaf {
            prediction: mean(&ys),
            n,
            variance,
        };
        if self.config.max_depth.is_some_and(|d| depth >= d)
            || n < self.config.min_samples_split
            || is_constant(&ys)
        {
            return leaf;
        }
        let features = match &mut self.sampler {
            Some(s) if s.count < self.all_features.len() => {
                let mut f = sample(s.rng, self.all_features.len(), s.count).into_vec();
                f.sort_unstable();
                f
            }
            _ => self.all_features.clone(),
        };
        let Some(split) = best_split_sorted(
            self.x,
            self.y,
            &rows,
            &orders,
            &features,
            self.config,
            &mut self.scratch,
        ) else {
            return leaf;
        };
        let mask = &mut self.scratch.goes_left;
        for &r in &rows {
            mask[r] = split.rule.goes_left(self.x.row(r));
        }
        let partition = |v: Vec<usize>| -> (Vec<usize>, Vec<usize>) { v.into_iter().partition(|&r| mask[r]) };
        let (left_rows, right_rows) = partition(rows);
        let (left_orders, right_orders): (Vec<_>, Vec<_>) = orders.into_iter().map(partition).unzip();
        let left = self.grow(left_rows, left_orders, depth + 1);
        let right = self.grow(right_rows, right_orders, depth + 1);
        TreeNode::Internal {
            rule: split.rule,
            left: Box::new(left),
            right: Box::new(right),
            n,
            variance,
        }
    }
}

pub(crate) fn fit_tree_with(
    x: &Matrix,
    y: &[f64],
    config: &TreeConfig,
    sampler: Option<FeatureSampler<'_>>,
) -> Result<RegressionTree> {
    check_inputs(x, y)?;
    config.validate()?;
    if let Some(s) = &sampler {
        if s.count == 0 {
            return Err(TreeError::Config("feature subsample count must be >= 1".into()));
        }
    }
    let mut grower = Grower {
        x,
        y,
        config,
        sampler,
        scratch: Scratch::new(),
        all_features: (0..x.ncols()).collect(),
    };
    grower.scratch.goes_left = vec![false; y.len()];
    let rows: Vec<usize> = (0..y.len()).collect();
    let orders = sorted_orders(x, &rows);
    let root = grower.grow(rows, orders, 0);
    let mut tree = RegressionTree {
        feature_names: (0..x.ncols()).map(|j| format!("f{j}")).collect(),
        target_name: "y".into(),
        config: config.clone(),
        train_r2: None,
        root,
    };
    let fitted: Vec<f64> = x.rows().map(|r| tree.root.route(r).leaf_value()).collect();
    tree.train_r2 = r2_score(y, &fitted).ok();
    Ok(tree)
}

/// Grows a tree on all rows of `x`.
pub fn fit_tree(x: &Matrix, y: &[f64], config: &TreeConfig) -> Result<RegressionTree> {
    fit_tree_with(x, y, config, None)
}

impl RegressionTree {
    pub fn with_names(mut self, features: &[String], target: &str) -> Self {
        assert_eq!(features.len(), self.feature_names.len(), "feature name count");
        self.feature_names = features.to_vec();
        self.target_name = target.to_string();
        self
    }

    pub fn n_features(&self) -> usize {
        self.feature_names.len()
    }

    /// Prediction for one row; a value equal to a threshold routes right.
    pub fn predict_row(&self, row: &[f64]) -> Result<f64> {
        if row.len() != self.n_features() {
            return Err(TreeError::WidthMismatch {
                expected: self.n_features(),
                got: row.len(),
            });
        }
        Ok(self.root.route(row).leaf_value())
    }

    pub fn predict(&self, x: &Matrix) -> Result<Vec<f64>> {
        x.rows().map(|r| self.predict_row(r)).collect()
    }

    pub fn depth(&self) -> usize {
        self.root.depth()
    }

    pub fn to_json(&self) -> String {
        serde_json::to_string_pretty(self).expect("tree serializes")
    }

    pub fn from_json(s: &str) -> Result<Self> {
        let mut de = serde_json::Deserializer::from_str(s);
        de.disable_recursion_limit();
        let tree = Self::deserialize(&mut de)?;
        de.end()?;
        tree.validate()?;
        Ok(tree)
    }

    pub fn from_value(v: serde_json::Value) -> Result<Self> {
        let tree: Self = serde_json::from_value(v)?;
        tree.validate()?;
        Ok(tree)
    }

    fn validate(&self) -> Result<()> {
        if let Some(j) = self.root.max_feature() {
            if j >= self.n_features() {
                return Err(TreeError::Document(format!(
                    "rule uses feature {j} but only {} are named",
                    self.n_features()
                )));
            }
        }
        self.config.validate()
    }

    /// Indented text rendering of the split rules.
    pub fn render_text(&self) -> String {
        let mut out = String::new();
        self.render_node(&self.root, 0, &mut out);
        out
    }

    fn render_node(&self, node: &TreeNode, indent: usize, out: &mut String) {
        let pad = "  ".repeat(indent);
        match node {
            TreeNode::Leaf {
                prediction,
                n,
                variance,
            } => {
                let _ = writeln!(
                    out,
                    "{pad}predict {prediction:.4} (n={n}, variance={variance:.4})"
                );
            }
            TreeNode::Internal {
                rule,
                left,
                right,
                n,
                variance,
            } => {
                let name = &self.feature_names[rule.feature];
                let _ = writeln!(
                    out,
                    "{pad}if {name} < {} (n={n}, variance={variance:.4})",
                    rule.threshold
                );
                self.render_node(left, indent + 1, out);
                let _ = writeln!(out, "{pad}else");
                self.render_node(right, indent + 1, out);
            }
        }
    }
}

#[cfg(test)]
mod tests {
    use super::*;
    use proptest::prelude::*;
    use rand::{Rng, SeedableRng};
    use rand_chacha::ChaCha8Rng;

    fn step_data() -> (Matrix, Vec<f64>) {
        (
            Matrix::from_column(&[1.0, 2.0, 3.0, 4.0]),
            vec![0.0, 0.0, 10.0, 10.0],
        )
    }

    #[test]
    fn variance_examples() {
        assert_eq!(node_variance(&[3.5, 3.5, 3.5]), Some(0.0));
        assert_eq!(node_variance(&[1.0, 3.0]), Some(1.0));
        assert_eq!(node_variance(&[0.0, 0.0, 10.0, 10.0]), Some(25.0));
        assert_eq!(node_variance(&[]), None);
    }

    #[test]
    fn loss_examples() {
        assert_eq!(split_loss(&[0.0, 0.0], &[10.0, 10.0]), Some(0.0));
        let l = split_loss(&[0.0], &[0.0, 10.0, 10.0]).unwrap();
        assert!((l - 200.0 / 9.0).abs() < 1e-12, "{l}");
        assert_eq!(split_loss(&[1.0, 3.0], &[1.0, 3.0]), Some(2.0));
        assert_eq!(split_loss(&[], &[1.0]), None);
        // weighted: (1*0 + 3*200/9) / 4
        let w = weighted_split_loss(&[0.0], &[0.0, 10.0, 10.0]).unwrap();
        assert!((w - 50.0 / 3.0).abs() < 1e-12);
    }

    #[test]
    fn best_split_examples() {
        let (x, y) = step_data();
        let c = best_split(&x, &y, &TreeConfig::default()).unwrap();
        assert_eq!(c.rule, SplitRule { feature: 0, threshold: 2.5 });
        assert_eq!(c.loss, 0.0);

        let x2 = Matrix::from_rows(&[
            vec![10.0, 1.0],
            vec![20.0, 2.0],
            vec![30.0, 3.0],
            vec![40.0, 4.0],
        ])
        .unwrap();
        let x2_swapped = x2.select_columns(&[1, 0]);
        let c = best_split(&x2, &y, &TreeConfig::default()).unwrap();
        assert_eq!(c.rule, SplitRule { feature: 0, threshold: 25.0 });
        let c = best_split(&x2_swapped, &y, &TreeConfig::default()).unwrap();
        assert_eq!(c.rule, SplitRule { feature: 0, threshold: 2.5 });

        assert!(best_split(&x, &[1.0; 4], &TreeConfig::default()).is_none());
        assert!(best_split(&Matrix::from_column(&[1.0; 4]), &y, &TreeConfig::default()).is_none());
        let strict = TreeConfig {
            min_samples_leaf: 3,
            ..TreeConfig::default()
        };
        assert!(best_split(&x, &y, &strict).is_none());
    }

    #[test]
    fn fit_examples() {
        let (x, y) = step_data();
        let t = fit_tree(&x, &y, &TreeConfig::with_max_depth(1)).unwrap();
        assert_eq!(t.train_r2, Some(1.0));
        assert_eq!(t.predict_row(&[1.0]).unwrap(), 0.0);
        assert_eq!(t.predict_row(&[2.5]).unwrap(), 10.0);
        assert_eq!(t.root.count_internal(), 1);
        assert_eq!(t.root.count_leaves(), 2);

        let stump = fit_tree(&x, &y, &TreeConfig::with_max_depth(0)).unwrap();
        assert!(stump.root.is_leaf());
        assert_eq!(stump.predict_row(&[123.0]).unwrap(), 5.0);

        let flat = fit_tree(&x, &[2.0; 4], &TreeConfig::default()).unwrap();
        assert!(flat.root.is_leaf());
        assert_eq!(flat.train_r2, None);
    }

    #[test]
    fn fit_errors() {
        let (x, y) = step_data();
        assert!(matches!(fit_tree(&x, &y[..3], &TreeConfig::default()), Err(TreeError::LengthMismatch { .. })));
        let empty = Matrix::from_vec(0, 1, vec![]).unwrap();
        assert!(matches!(fit_tree(&empty, &[], &TreeConfig::default()), Err(TreeError::Empty)));
        let bad = TreeConfig {
            min_samples_split: 1,
            ..TreeConfig::default()
        };
        assert!(matches!(fit_tree(&x, &y, &bad), Err(TreeError::Config(_))));
        let t = fit_tree(&x, &y, &TreeConfig::default()).unwrap();
        assert!(matches!(t.predict_row(&[1.0, 2.0]), Err(TreeError::WidthMismatch { .. })));
    }

    #[test]
    fn export_round_trip() {
        let (x, y) = step_data();
        let t = fit_tree(&x, &y, &TreeConfig::with_max_depth(1)).unwrap();
        let doc = t.to_json();
        let back = RegressionTree::from_json(&doc).unwrap();
        assert_eq!(back, t);
        assert_eq!(back.to_json(), doc);
        let v: serde_json::Value = serde_json::from_str(&doc).unwrap();
        assert_eq!(v["root"]["rule"]["j"], 0);
        assert_eq!(v["root"]["rule"]["t"], 2.5);
        assert!(v["root"]["prediction"].is_null());
        assert_eq!(v["root"]["left"]["prediction"], 0.0);
        assert!(v["root"]["left"]["left"].is_null());

        let stump = fit_tree(&x, &y, &TreeConfig::with_max_depth(0)).unwrap();
        let v: serde_json::Value = serde_json::from_str(&stump.to_json()).unwrap();
        assert!(v["root"]["rule"].is_null());
        assert_eq!(v["root"]["n"], 4);

        assert!(RegressionTree::from_json(r#"{"feature_names":["a"],"target_name":"y","config":{},"train_r2":null,
            "root":{"rule":null,"n":1,"variance":0,"prediction":null,"left":null,"right":null}}"#)
            .is_err());
        let out_of_range = doc.replace("\"j\": 0", "\"j\": 3");
        assert!(RegressionTree::from_json(&out_of_range).is_err());
    }

    #[test]
    fn render_mentions_feature_names() {
        let (x, y) = step_data();
        let t = fit_tree(&x, &y, &TreeConfig::with_max_depth(1))
            .unwrap()
            .with_names(&["income".to_string()], "bad_health");
        let text = t.render_text();
        assert!(text.starts_with("if income < 2.5"), "{text}");
    }

    fn random_data(seed: u64, n: usize, d: usize) -> (Matrix, Vec<f64>) {
        let mut rng = ChaCha8Rng::seed_from_u64(seed);
        let rows: Vec<Vec<f64>> = (0..n)
            .map(|_| (0..d).map(|_| rng.random_range(0.0..10.0)).collect())
            .collect();
        let y = rows
            .iter()
            .map(|r| if r[0] < 5.0 { 1.0 } else { 3.0 } + r[d - 1] * 0.2 + rng.random::<f64>())
            .collect();
        (Matrix::from_rows(&rows).unwrap(), y)
    }

    fn leaves_match_means(node: &TreeNode, x: &Matrix, y: &[f64], rows: Vec<usize>) {
        match node {
            TreeNode::Leaf { prediction, n, .. } => {
                let ys: Vec<f64> = rows.iter().map(|&r| y[r]).collect();
                assert_eq!(*n, ys.len());
                let m = ys.iter().sum::<f64>() / ys.len() as f64;
                assert!((prediction - m).abs() <= 1e-12);
            }
            TreeNode::Internal { rule, left, right, n, .. } => {
                assert_eq!(*n, rows.len());
                let (l, r): (Vec<usize>, Vec<usize>) =
                    rows.into_iter().partition(|&i| x.get(i, rule.feature) < rule.threshold);
                assert!(!l.is_empty() && !r.is_empty());
                leaves_match_means(left, x, y, l);
                leaves_match_means(right, x, y, r);
            }
        }
    }

    proptest! {
        #![proptest_config(ProptestConfig::with_cases(48))]

        #[test]
        fn leaves_store_means(seed in 0u64..10_000, n in 2usize..120, depth in 0usize..8) {
            let (x, y) = random_data(seed, n, 3);
            let t = fit_tree(&x, &y, &TreeConfig::with_max_depth(depth)).unwrap();
            prop_assert!(t.depth() <= depth);
            leaves_match_means(&t.root, &x, &y, (0..n).collect());
        }

        #[test]
        fn train_r2_non_decreasing_in_depth(seed in 0u64..10_000, n in 10usize..150) {
            let (x, y) = random_data(seed, n, 3);
            let mut prev = f64::NEG_INFINITY;
            for d in 0..10 {
                let r2 = fit_tree(&x, &y, &TreeConfig::with_max_depth(d)).unwrap().train_r2.unwrap();
                prop_assert!(r2 >= prev - 1e-12, "depth {} r2 {} < {}", d, r2, prev);
                prev = r2;
            }
        }

        #[test]
        fn unlimited_tree_memorizes(seed in 0u64..10_000, n in 2usize..150) {
            let (x, y) = random_data(seed, n, 2);
            let t = fit_tree(&x, &y, &TreeConfig::default()).unwrap();
            prop_assert!((t.train_r2.unwrap() - 1.0).abs() < 1e-12);
        }

        #[test]
        fn piecewise_constant_prediction(seed in 0u64..10_000, probe in 0usize..50, frac in 0.0f64..1.0) {
            let (x, y) = random_data(seed, 50, 3);
            let t = fit_tree(&x, &y, &TreeConfig::with_max_depth(6)).unwrap();
            let row = x.row(probe).to_vec();
            // interval of feature 1 allowed by the routing path
            let (mut lo, mut hi) = (f64::NEG_INFINITY, f64::INFINITY);
            let mut node = &t.root;
            while let TreeNode::Internal { rule, left, right, .. } = node {
                let go_left = rule.goes_left(&row);
                if rule.feature == 1 {
                    if go_left { hi = hi.min(rule.threshold) } else { lo = lo.max(rule.threshold) }
                }
                node = if go_left { left } else { right };
            }
            let (lo_f, hi_f) = (lo.max(-100.0), hi.min(100.0));
            let mut moved = row.clone();
            moved[1] = lo_f + (hi_f - lo_f) * frac;
            prop_assume!(moved[1] >= lo && moved[1] < hi);
            prop_assert_eq!(t.predict_row(&row).unwrap().to_bits(), t.predict_row(&moved).unwrap().to_bits());
        }
    }

    #[test]
    fn weighted_mode_changes_the_split() {
        let x = Matrix::from_column(&[1.0, 2.0, 3.0, 4.0, 5.0, 6.0]);
        let y = [7.0, 7.0, 6.0, 3.0, 1.0, 7.0];
        let unweighted = best_split(&x, &y, &TreeConfig::default()).unwrap();
        let weighted = best_split(
            &x,
            &y,
            &TreeConfig {
                weighted_loss: true,
                ..TreeConfig::default()
            },
        )
        .unwrap();
        assert_eq!(unweighted.rule.threshold, 2.5);
        assert!((unweighted.loss - 5.6875).abs() < 1e-12);
        assert_eq!(weighted.rule.threshold, 3.5);
        assert!((weighted.loss - 29.0 / 9.0).abs() < 1e-12);
    }
}
