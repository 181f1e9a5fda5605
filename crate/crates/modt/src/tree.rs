//! Depth-limited binary CART classifier with per-sample weights.
//!
//! Trees are grown greedily: every node picks the (feature, threshold) pair
//! minimizing the weighted Gini impurity of the split, with thresholds at
//! midpoints between consecutive distinct feature values. Leaves store the
//! weight-normalized class distribution of the samples that reach them,
//! which is what the trainer's confidence function consumes.

use ndarray::{Array2, ArrayView1};
use rand_chacha::ChaCha8Rng;
use serde::{Deserialize, Serialize};
use thiserror::Error;

/// Samples lighter than this are ignored while searching for splits but
/// still contribute their (negligible) weight to leaf distributions.
const MIN_SPLIT_WEIGHT: f64 = 1e-12;

#[derive(Debug, Error, PartialEq)]
pub enum TreeError {
    #[error("at least one sample is required")]
    EmptyInput,
    #[error("all sample weights are zero")]
    AllWeightsZero,
    #[error("sample weights must be nonnegative")]
    NegativeWeight,
    #[error("max depth must be at least 1")]
    ZeroDepth,
    #[error("class mass is entirely zero")]
    ZeroMass,
    #[error("class index {index} is out of range for {n_classes} classes")]
    ClassOutOfRange { index: usize, n_classes: usize },
    #[error("input has {got} features but the tree was fit on {expected}")]
    WidthMismatch { expected: usize, got: usize },
    #[error("shape mismatch: {0}")]
    ShapeMismatch(String),
}

/// Gini impurity of a weighted class mass vector: `1 - sum((m_c / total)^2)`.
pub fn gini(weighted_class_mass: &[f64]) -> Result<f64, TreeError> {
    let total: f64 = weighted_class_mass.iter().sum();
    if total <= 0.0 {
        return Err(TreeError::ZeroMass);
    }
    let sq: f64 = weighted_class_mass
        .iter()
        .map(|&m| {
            let p = m / total;
            p * p
        })
        .sum();
    Ok(1.0 - sq)
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum TreeNode {
    Internal {
        feature_index: usize,
        threshold: f64,
        left: Box<TreeNode>,
        right: Box<TreeNode>,
    },
    Leaf {
        /// Class distribution, nonnegative and summing to one.
        distribution: Vec<f64>,
        majority_class: usize,
    },
}

impl TreeNode {
    pub fn depth(&self) -> usize {
        match self {
            TreeNode::Leaf { .. } => 0,
            TreeNode::Internal { left, right, .. } => 1 + left.depth().max(right.depth()),
        }
    }

    pub fn node_count(&self) -> usize {
        match self {
            TreeNode::Leaf { .. } => 1,
            TreeNode::Internal { left, right, .. } => 1 + left.node_count() + right.node_count(),
        }
    }

    pub fn leaf_count(&self) -> usize {
        match self {
            TreeNode::Leaf { .. } => 1,
            TreeNode::Internal { left, right, .. } => left.leaf_count() + right.leaf_count(),
        }
    }
}

/// A fitted classification tree.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct DecisionTree {
    root: TreeNode,
    /// Depth limit used at fit time; `None` means the tree grew to purity.
    max_depth: Option<usize>,
    n_classes: usize,
    n_features: usize,
}

impl DecisionTree {
    pub fn from_parts(
        root: TreeNode,
        max_depth: Option<usize>,
        n_classes: usize,
        n_features: usize,
    ) -> DecisionTree {
        DecisionTree {
            root,
            max_depth,
            n_classes,
            n_features,
        }
    }

    pub fn root(&self) -> &TreeNode {
        &self.root
    }

    pub fn max_depth(&self) -> Option<usize> {
        self.max_depth
    }

    pub fn n_classes(&self) -> usize {
        self.n_classes
    }

    pub fn n_features(&self) -> usize {
        self.n_features
    }

    pub fn depth(&self) -> usize {
        self.root.depth()
    }

    pub fn node_count(&self) -> usize {
        self.root.node_count()
    }

    fn leaf_for(&self, x: ArrayView1<f64>) -> Result<&TreeNode, TreeError> {
        if x.len() != self.n_features {
            return Err(TreeError::WidthMismatch {
                expected: self.n_features,
                got: x.len(),
            });
        }
        let mut node = &self.root;
        loop {
            match node {
                TreeNode::Leaf { .. } => return Ok(node),
                TreeNode::Internal {
                    feature_index,
                    threshold,
                    left,
                    right,
                } => {
                    node = if x[*feature_index] <= *threshold {
                        left
                    } else {
                        right
                    };
                }
            }
        }
    }

    /// Majority class of the leaf reached by `x`.
    pub fn predict_class(&self, x: ArrayView1<f64>) -> Result<usize, TreeError> {
        match self.leaf_for(x)? {
            TreeNode::Leaf { majority_class, .. } => Ok(*majority_class),
            TreeNode::Internal { .. } => unreachable!("leaf_for returns leaves"),
        }
    }

    /// Class distribution of the leaf reached by `x`.
    pub fn predict_proba(&self, x: ArrayView1<f64>) -> Result<Vec<f64>, TreeError> {
        match self.leaf_for(x)? {
            TreeNode::Leaf { distribution, .. } => Ok(distribution.clone()),
            TreeNode::Internal { .. } => unreachable!("leaf_for returns leaves"),
        }
    }

    pub fn predict_batch(&self, x: &Array2<f64>) -> Result<Vec<usize>, TreeError> {
        x.outer_iter().map(|row| self.predict_class(row)).collect()
    }
}

/// Options for the internal tree builder. `fit_tree` covers the standard
/// case; the random forest uses per-node feature subsampling on top.
pub(crate) struct TreeFitter<'a> {
    pub x: &'a Array2<f64>,
    pub y: &'a [usize],
    pub w: &'a [f64],
    pub n_classes: usize,
    pub max_depth: Option<usize>,
    /// Number of features to consider per node; `None` means all.
    pub mtry: Option<usize>,
}

struct BestSplit {
    feature: usize,
    threshold: f64,
    score: f64,
}

impl<'a> TreeFitter<'a> {
    pub fn fit(&self, rng: Option<&mut ChaCha8Rng>) -> Result<DecisionTree, TreeError> {
        let n = self.x.nrows();
        if n == 0 {
            return Err(TreeError::EmptyInput);
        }
        if self.y.len() != n || self.w.len() != n {
            return Err(TreeError::ShapeMismatch(format!(
                "{} rows vs {} labels vs {} weights",
                n,
                self.y.len(),
                self.w.len()
            )));
        }
        if self.w.iter().any(|&w| w < 0.0) {
            return Err(TreeError::NegativeWeight);
        }
        if self.w.iter().all(|&w| w == 0.0) {
            return Err(TreeError::AllWeightsZero);
        }
        if let Some(&bad) = self.y.iter().find(|&&c| c >= self.n_classes) {
            return Err(TreeError::ClassOutOfRange {
                index: bad,
                n_classes: self.n_classes,
            });
        }
        if self.max_depth == Some(0) {
            return Err(TreeError::ZeroDepth);
        }
        let indices: Vec<usize> = (0..n).collect();
        let uniform = vec![1.0 / self.n_classes as f64; self.n_classes];
        let mut rng = rng;
        let root = self.build(&indices, 0, &uniform, &mut rng);
        Ok(DecisionTree {
            root,
            max_depth: self.max_depth,
            n_classes: self.n_classes,
            n_features: self.x.ncols(),
        })
    }

    fn class_mass(&self, indices: &[usize]) -> Vec<f64> {
        let mut mass = vec![0.0; self.n_classes];
        for &i in indices {
            mass[self.y[i]] += self.w[i];
        }
        mass
    }

    fn leaf(&self, indices: &[usize], parent_dist: &[f64]) -> TreeNode {
        let mass = self.class_mass(indices);
        let total: f64 = mass.iter().sum();
        let distribution: Vec<f64> = if total > 0.0 {
            mass.iter().map(|&m| m / total).collect()
        } else {
            // Zero local mass: inherit the parent distribution.
            parent_dist.to_vec()
        };
        let majority_class = argmax(&distribution);
        TreeNode::Leaf {
            distribution,
            majority_class,
        }
    }

    fn build(
        &self,
        indices: &[usize],
        depth: usize,
        parent_dist: &[f64],
        rng: &mut Option<&mut ChaCha8Rng>,
    ) -> TreeNode {
        if self.max_depth.is_some_and(|d| depth >= d) {
            return self.leaf(indices, parent_dist);
        }
        let eligible: Vec<usize> = indices
            .iter()
            .copied()
            .filter(|&i| self.w[i] >= MIN_SPLIT_WEIGHT)
            .collect();
        let Some(split) = self.best_split(&eligible, rng) else {
            return self.leaf(indices, parent_dist);
        };
        let (left_idx, right_idx): (Vec<usize>, Vec<usize>) = indices
            .iter()
            .copied()
            .partition(|&i| self.x[[i, split.feature]] <= split.threshold);
        let mass = self.class_mass(indices);
        let total: f64 = mass.iter().sum();
        let dist: Vec<f64> = if total > 0.0 {
            mass.iter().map(|&m| m / total).collect()
        } else {
            parent_dist.to_vec()
        };
        let left = self.build(&left_idx, depth + 1, &dist, rng);
        let right = self.build(&right_idx, depth + 1, &dist, rng);
        TreeNode::Internal {
            feature_index: split.feature,
            threshold: split.threshold,
            left: Box::new(left),
            right: Box::new(right),
        }
    }

    /// Exhaustive sweep over candidate splits of the eligible samples.
    /// Candidates are midpoints between consecutive distinct values; ties on
    /// the criterion keep the lowest feature index, then lowest threshold.
    fn best_split(
        &self,
        eligible: &[usize],
        rng: &mut Option<&mut ChaCha8Rng>,
    ) -> Option<BestSplit> {
        if eligible.len() < 2 {
            return None;
        }
        let parent_mass = self.class_mass(eligible);
        let parent_total: f64 = parent_mass.iter().sum();
        if parent_total <= 0.0 {
            return None;
        }
        let parent_gini = gini(&parent_mass).ok()?;

        let p = self.x.ncols();
        let features: Vec<usize> = match self.mtry {
            None => (0..p).collect(),
            Some(m) => {
                let m = m.min(p);
                let mut all: Vec<usize> = (0..p).collect();
                if let Some(rng) = rng.as_deref_mut() {
                    // Partial Fisher-Yates, then sort so the tie-break order
                    // stays "lowest feature index" within the sampled set.
                    for i in 0..m {
                        let j = rand::Rng::random_range(&mut *rng, i..p);
                        all.swap(i, j);
                    }
                }
                let mut chosen = all[..m].to_vec();
                chosen.sort_unstable();
                chosen
            }
        };

        let mut best: Option<BestSplit> = None;
        let mut order: Vec<usize> = Vec::with_capacity(eligible.len());
        for &f in &features {
            order.clear();
            order.extend_from_slice(eligible);
            order.sort_by(|&a, &b| {
                self.x[[a, f]]
                    .partial_cmp(&self.x[[b, f]])
                    .unwrap_or(std::cmp::Ordering::Equal)
                    .then(a.cmp(&b))
            });
            let mut left_mass = vec![0.0; self.n_classes];
            let mut left_total = 0.0;
            for k in 0..order.len() - 1 {
                let i = order[k];
                left_mass[self.y[i]] += self.w[i];
                left_total += self.w[i];
                let v_cur = self.x[[i, f]];
                let v_next = self.x[[order[k + 1], f]];
                if v_next <= v_cur {
                    continue;
                }
                let threshold = 0.5 * (v_cur + v_next);
                // Adjacent floats can round the midpoint onto an endpoint,
                // which would send every sample to one side; skip those.
                if !(threshold > v_cur && threshold < v_next) {
                    continue;
                }
                let right_total = parent_total - left_total;
                if left_total <= 0.0 || right_total <= 0.0 {
                    continue;
                }
                let gini_left = gini_from(&left_mass, left_total);
                let right_mass: Vec<f64> = parent_mass
                    .iter()
                    .zip(&left_mass)
                    .map(|(&p, &l)| (p - l).max(0.0))
                    .collect();
                let gini_right = gini_from(&right_mass, right_total);
                let score = (left_total * gini_left + right_total * gini_right) / parent_total;
                if best.as_ref().is_none_or(|b| score < b.score) {
                    best = Some(BestSplit {
                        feature: f,
                        threshold,
                        score,
                    });
                }
            }
        }
        match best {
            Some(b) if b.score < parent_gini => Some(b),
            _ => None,
        }
    }
}

fn gini_from(mass: &[f64], total: f64) -> f64 {
    let sq: f64 = mass
        .iter()
        .map(|&m| {
            let p = m / total;
            p * p
        })
        .sum();
    1.0 - sq
}

/// Lowest-index argmax.
pub(crate) fn argmax(values: &[f64]) -> usize {
    let mut best = 0;
    for (i, &v) in values.iter().enumerate().skip(1) {
        if v > values[best] {
            best = i;
        }
    }
    best
}

/// Fits a depth-limited CART on weighted samples.
///
/// Greedy induction stops at the depth limit, at pure nodes, or when no
/// candidate split improves the weighted Gini impurity.
pub fn fit_tree(
    x: &Array2<f64>,
    y: &[usize],
    w: &[f64],
    max_depth: usize,
    n_classes: usize,
) -> Result<DecisionTree, TreeError> {
    if max_depth == 0 {
        return Err(TreeError::ZeroDepth);
    }
    TreeFitter {
        x,
        y,
        w,
        n_classes,
        max_depth: Some(max_depth),
        mtry: None,
    }
    .fit(None)
}

/// Fit options used by the random-forest baseline.
pub(crate) fn fit_tree_with_options(
    x: &Array2<f64>,
    y: &[usize],
    w: &[f64],
    max_depth: Option<usize>,
    n_classes: usize,
    mtry: Option<usize>,
    rng: &mut ChaCha8Rng,
) -> Result<DecisionTree, TreeError> {
    TreeFitter {
        x,
        y,
        w,
        n_classes,
        max_depth,
        mtry,
    }
    .fit(Some(rng))
}

/// Weighted training-set Gini of a fitted tree: the weighted average of the
/// leaf impurities over the samples that reach each leaf.
pub fn weighted_training_gini(
    tree: &DecisionTree,
    x: &Array2<f64>,
    y: &[usize],
    w: &[f64],
) -> Result<f64, TreeError> {
    fn walk(
        node: &TreeNode,
        x: &Array2<f64>,
        y: &[usize],
        w: &[f64],
        indices: &[usize],
        n_classes: usize,
    ) -> f64 {
        match node {
            TreeNode::Leaf { .. } => {
                let mut mass = vec![0.0; n_classes];
                for &i in indices {
                    mass[y[i]] += w[i];
                }
                let total: f64 = mass.iter().sum();
                if total > 0.0 {
                    total * gini_from(&mass, total)
                } else {
                    0.0
                }
            }
            TreeNode::Internal {
                feature_index,
                threshold,
                left,
                right,
            } => {
                let (li, ri): (Vec<usize>, Vec<usize>) = indices
                    .iter()
                    .copied()
                    .partition(|&i| x[[i, *feature_index]] <= *threshold);
                walk(left, x, y, w, &li, n_classes) + walk(right, x, y, w, &ri, n_classes)
            }
        }
    }
    let indices: Vec<usize> = (0..x.nrows()).collect();
    let total: f64 = w.iter().sum();
    if total <= 0.0 {
        return Err(TreeError::AllWeightsZero);
    }
    Ok(walk(tree.root(), x, y, w, &indices, tree.n_classes()) / total)
}
