//! The linear gating function: parameter matrix, softmax gating values,
//! full and two-feature gate modes, feature selection for the 2D mode, and
//! a Gaussian-mixture heuristic for choosing the expert count.

use ndarray::{Array1, Array2, Axis};
use rand::Rng;
use rand::SeedableRng;
use rand_chacha::ChaCha8Rng;
use serde::{Deserialize, Serialize};
use thiserror::Error;

use crate::data::{append_bias, BiasedMatrix};
use crate::linalg;
use crate::tree::{self, TreeError, TreeNode};

#[derive(Debug, Error, PartialEq)]
pub enum GatingError {
    #[error("gate feature indices ({i}, {j}) are invalid for {p} features (must be distinct and in range)")]
    BadFeatureIndex { i: usize, j: usize, p: usize },
    #[error("gating input contains non-finite values")]
    NonFiniteInput,
    #[error("shape mismatch: {0}")]
    ShapeMismatch(String),
    #[error("feature selection needs at least two features, found {0}")]
    TooFewFeatures(usize),
    #[error("manual feature pair ({i}, {j}) is invalid for {p} features")]
    BadManualPair { i: usize, j: usize, p: usize },
    #[error(transparent)]
    Tree(#[from] TreeError),
}

/// Which features the gate sees: all of them, or a selected pair.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum GateMode {
    Full,
    TwoD { feature_i: usize, feature_j: usize },
}

impl GateMode {
    /// Gate input width before the bias column.
    pub fn width(&self, p: usize) -> usize {
        match self {
            GateMode::Full => p,
            GateMode::TwoD { .. } => 2,
        }
    }
}

/// A trained (or initialized) linear softmax gate.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct GatingModel {
    theta: Array2<f64>,
    mode: GateMode,
    /// Width of the encoded feature space the gate was built for.
    n_features: usize,
}

impl GatingModel {
    pub fn new(theta: Array2<f64>, mode: GateMode, n_features: usize) -> Result<Self, GatingError> {
        if theta.ncols() == 0 {
            return Err(GatingError::ShapeMismatch(
                "gate needs at least one expert column".into(),
            ));
        }
        let expected_rows = mode.width(n_features) + 1;
        if theta.nrows() != expected_rows {
            return Err(GatingError::ShapeMismatch(format!(
                "theta has {} rows, expected {}",
                theta.nrows(),
                expected_rows
            )));
        }
        if let GateMode::TwoD {
            feature_i,
            feature_j,
        } = mode
        {
            if feature_i == feature_j || feature_i >= n_features || feature_j >= n_features {
                return Err(GatingError::BadFeatureIndex {
                    i: feature_i,
                    j: feature_j,
                    p: n_features,
                });
            }
        }
        Ok(GatingModel {
            theta,
            mode,
            n_features,
        })
    }

    pub fn theta(&self) -> &Array2<f64> {
        &self.theta
    }

    pub fn mode(&self) -> GateMode {
        self.mode
    }

    pub fn n_experts(&self) -> usize {
        self.theta.ncols()
    }

    pub fn n_features(&self) -> usize {
        self.n_features
    }

    /// Gating values for a batch of (unencoded-width) feature rows.
    pub fn values(&self, x: &Array2<f64>) -> Result<GatingValues, GatingError> {
        if x.ncols() != self.n_features {
            return Err(GatingError::ShapeMismatch(format!(
                "input has {} features, gate expects {}",
                x.ncols(),
                self.n_features
            )));
        }
        let xg = gate_input(x, self.mode)?;
        gating_values(xg.matrix(), &self.theta)
    }
}

/// Row-stochastic matrix of expert-selection probabilities.
#[derive(Debug, Clone, PartialEq)]
pub struct GatingValues(Array2<f64>);

impl GatingValues {
    /// Wraps a matrix after checking it is row-stochastic (entries
    /// nonnegative, every row summing to one within 1e-9).
    pub fn from_matrix(m: Array2<f64>) -> Result<Self, GatingError> {
        for row in m.outer_iter() {
            let sum: f64 = row.sum();
            if (sum - 1.0).abs() > 1e-9 || row.iter().any(|&v| !(0.0..=1.0 + 1e-9).contains(&v)) {
                return Err(GatingError::ShapeMismatch(
                    "gating rows must be probability vectors".into(),
                ));
            }
        }
        Ok(GatingValues(m))
    }

    pub fn matrix(&self) -> &Array2<f64> {
        &self.0
    }

    pub fn n_rows(&self) -> usize {
        self.0.nrows()
    }

    pub fn n_experts(&self) -> usize {
        self.0.ncols()
    }

    pub fn row(&self, i: usize) -> &[f64] {
        self.0.row(i).to_slice().expect("rows are contiguous")
    }

    /// Total gating mass per expert (column sums).
    pub fn expert_mass(&self) -> Vec<f64> {
        self.0.sum_axis(Axis(0)).to_vec()
    }
}

/// Builds the gate's input matrix: the selected feature columns (all of them
/// in full mode) extended by the constant-one bias column.
pub fn gate_input(x: &Array2<f64>, mode: GateMode) -> Result<BiasedMatrix, GatingError> {
    match mode {
        GateMode::Full => Ok(append_bias(x)),
        GateMode::TwoD {
            feature_i,
            feature_j,
        } => {
            let p = x.ncols();
            if feature_i == feature_j || feature_i >= p || feature_j >= p {
                return Err(GatingError::BadFeatureIndex {
                    i: feature_i,
                    j: feature_j,
                    p,
                });
            }
            let selected = x.select(Axis(1), &[feature_i, feature_j]);
            Ok(append_bias(&selected))
        }
    }
}

/// Row-wise softmax of `Xg . theta`, stabilized by subtracting each row's
/// maximum logit before exponentiation.
pub fn gating_values(xg: &Array2<f64>, theta: &Array2<f64>) -> Result<GatingValues, GatingError> {
    if xg.ncols() != theta.nrows() {
        return Err(GatingError::ShapeMismatch(format!(
            "gate input width {} does not match theta rows {}",
            xg.ncols(),
            theta.nrows()
        )));
    }
    if xg.iter().any(|v| !v.is_finite()) || theta.iter().any(|v| !v.is_finite()) {
        return Err(GatingError::NonFiniteInput);
    }
    let logits = xg.dot(theta);
    let mut g = logits;
    for mut row in g.rows_mut() {
        let max = row.iter().cloned().fold(f64::NEG_INFINITY, f64::max);
        row.mapv_inplace(|v| (v - max).exp());
        let sum: f64 = row.sum();
        row.mapv_inplace(|v| v / sum);
    }
    Ok(GatingValues(g))
}

/// Lowest-index argmax over one gating row.
pub fn select_expert(gating_row: &[f64]) -> usize {
    tree::argmax(gating_row)
}

/// Random gate initialization: entries i.i.d. uniform on [-1, 1].
pub fn init_theta(q: usize, e: usize, seed: u64) -> Array2<f64> {
    assert!(e >= 1, "expert count must be at least 1");
    let mut rng = ChaCha8Rng::seed_from_u64(seed);
    theta_from_rng(q, e, &mut rng)
}

pub(crate) fn theta_from_rng(q: usize, e: usize, rng: &mut ChaCha8Rng) -> Array2<f64> {
    Array2::from_shape_fn((q + 1, e), |_| rng.random_range(-1.0..=1.0))
}

pub(crate) fn theta_column_from_rng(theta: &mut Array2<f64>, col: usize, rng: &mut ChaCha8Rng) {
    for v in theta.column_mut(col) {
        *v = rng.random_range(-1.0..=1.0);
    }
}

/// How to pick the two gate features in 2D mode.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum FeatureSelection {
    /// Rank features by total Gini decrease in an unweighted depth-5 tree.
    TreeImportance,
    /// Rank by summed absolute coefficients of a one-vs-rest least-squares
    /// fit on standardized features.
    LinearImportance,
    /// Two features with the largest absolute loading on the first
    /// principal component of the standardized features.
    Pca,
    Manual { i: usize, j: usize },
}

/// Picks the 2D gate feature pair. Ranked methods return the pair in
/// ascending index order; `Manual` echoes its (validated) pair as given.
pub fn select_gating_features(
    x: &Array2<f64>,
    y: &[usize],
    n_classes: usize,
    method: FeatureSelection,
) -> Result<(usize, usize), GatingError> {
    let p = x.ncols();
    if p < 2 {
        return Err(GatingError::TooFewFeatures(p));
    }
    let scores = match method {
        FeatureSelection::Manual { i, j } => {
            if i == j || i >= p || j >= p {
                return Err(GatingError::BadManualPair { i, j, p });
            }
            return Ok((i, j));
        }
        FeatureSelection::TreeImportance => tree_importances(x, y, n_classes)?,
        FeatureSelection::LinearImportance => linear_importances(x, y, n_classes),
        FeatureSelection::Pca => pca_loadings(x),
    };
    let (a, b) = top_two(&scores);
    Ok((a.min(b), a.max(b)))
}

/// Indices of the two largest scores; ties resolve to lower indices.
fn top_two(scores: &[f64]) -> (usize, usize) {
    let mut order: Vec<usize> = (0..scores.len()).collect();
    order.sort_by(|&a, &b| {
        scores[b]
            .partial_cmp(&scores[a])
            .unwrap_or(std::cmp::Ordering::Equal)
            .then(a.cmp(&b))
    });
    (order[0], order[1])
}

/// Total weighted Gini decrease per feature in an unweighted depth-5 tree.
fn tree_importances(
    x: &Array2<f64>,
    y: &[usize],
    n_classes: usize,
) -> Result<Vec<f64>, GatingError> {
    let n = x.nrows();
    let w = vec![1.0; n];
    let fitted = tree::fit_tree(x, y, &w, 5, n_classes)?;
    let mut importances = vec![0.0; x.ncols()];
    let indices: Vec<usize> = (0..n).collect();

    fn node_mass(y: &[usize], indices: &[usize], k: usize) -> (Vec<f64>, f64) {
        let mut mass = vec![0.0; k];
        for &i in indices {
            mass[y[i]] += 1.0;
        }
        let total: f64 = mass.iter().sum();
        (mass, total)
    }

    fn gini_of(mass: &[f64], total: f64) -> f64 {
        if total <= 0.0 {
            return 0.0;
        }
        1.0 - mass.iter().map(|&m| (m / total) * (m / total)).sum::<f64>()
    }

    fn walk(
        node: &TreeNode,
        x: &Array2<f64>,
        y: &[usize],
        indices: &[usize],
        k: usize,
        importances: &mut [f64],
    ) {
        if let TreeNode::Internal {
            feature_index,
            threshold,
            left,
            right,
        } = node
        {
            let (mass, total) = node_mass(y, indices, k);
            let (li, ri): (Vec<usize>, Vec<usize>) = indices
                .iter()
                .copied()
                .partition(|&i| x[[i, *feature_index]] <= *threshold);
            let (lm, lt) = node_mass(y, &li, k);
            let (rm, rt) = node_mass(y, &ri, k);
            importances[*feature_index] +=
                total * gini_of(&mass, total) - lt * gini_of(&lm, lt) - rt * gini_of(&rm, rt);
            walk(left, x, y, &li, k, importances);
            walk(right, x, y, &ri, k, importances);
        }
    }

    walk(fitted.root(), x, y, &indices, n_classes, &mut importances);
    Ok(importances)
}

/// Column-standardized copy; constant columns become all zeros.
fn standardize(x: &Array2<f64>) -> Array2<f64> {
    let n = x.nrows() as f64;
    let mut out = x.clone();
    for mut col in out.columns_mut() {
        let mean = col.sum() / n;
        let var = col.iter().map(|v| (v - mean) * (v - mean)).sum::<f64>() / n;
        let std = var.sqrt();
        if std > 1e-12 {
            col.mapv_inplace(|v| (v - mean) / std);
        } else {
            col.fill(0.0);
        }
    }
    out
}

fn linear_importances(x: &Array2<f64>, y: &[usize], n_classes: usize) -> Vec<f64> {
    let xs = standardize(x);
    let xb = append_bias(&xs);
    let n = x.nrows();
    let mut targets = Array2::<f64>::zeros((n, n_classes));
    for (i, &c) in y.iter().enumerate() {
        targets[[i, c]] = 1.0;
    }
    let beta = linalg::ridge_normal_equations(xb.matrix(), &targets, 1e-8)
        .unwrap_or_else(|| Array2::zeros((x.ncols() + 1, n_classes)));
    (0..x.ncols())
        .map(|f| beta.row(f).iter().map(|b| b.abs()).sum())
        .collect()
}

/// Absolute loadings of the first principal component, computed by power
/// iteration on the covariance of the standardized features.
fn pca_loadings(x: &Array2<f64>) -> Vec<f64> {
    let xs = standardize(x);
    let n = (x.nrows().max(2) - 1) as f64;
    let cov = xs.t().dot(&xs) / n;
    let p = cov.nrows();
    let mut v = Array1::<f64>::from_elem(p, 1.0 / (p as f64).sqrt());
    for _ in 0..500 {
        let next = cov.dot(&v);
        let norm = next.iter().map(|a| a * a).sum::<f64>().sqrt();
        if norm < 1e-300 {
            return vec![0.0; p];
        }
        let next = next / norm;
        let delta = (&next - &v).iter().map(|d| d.abs()).fold(0.0, f64::max);
        v = next;
        if delta < 1e-12 {
            break;
        }
    }
    v.iter().map(|a| a.abs()).collect()
}

// --- expert-count estimation via spherical Gaussian mixtures ---------------

struct SphericalGmm {
    weights: Vec<f64>,
    means: Array2<f64>,
    variances: Vec<f64>,
}

impl SphericalGmm {
    /// One EM fit with k-means++-style seeding of the means.
    fn fit(x: &Array2<f64>, e: usize, rng: &mut ChaCha8Rng, max_iter: usize) -> (Self, f64) {
        let n = x.nrows();
        let p = x.ncols();

        // Seed means: first uniformly, the rest proportional to squared
        // distance from the nearest chosen center.
        let mut means = Array2::<f64>::zeros((e, p));
        let first = rng.random_range(0..n);
        means.row_mut(0).assign(&x.row(first));
        let mut d2: Vec<f64> = (0..n)
            .map(|i| sq_dist(x.row(i).to_slice().unwrap(), means.row(0).to_slice().unwrap()))
            .collect();
        for c in 1..e {
            let total: f64 = d2.iter().sum();
            let pick = if total > 0.0 {
                let mut target = rng.random_range(0.0..total);
                let mut chosen = n - 1;
                for (i, &d) in d2.iter().enumerate() {
                    if target < d {
                        chosen = i;
                        break;
                    }
                    target -= d;
                }
                chosen
            } else {
                rng.random_range(0..n)
            };
            means.row_mut(c).assign(&x.row(pick));
            for (i, best) in d2.iter_mut().enumerate() {
                let d = sq_dist(x.row(i).to_slice().unwrap(), means.row(c).to_slice().unwrap());
                if d < *best {
                    *best = d;
                }
            }
        }

        let global_var = {
            let mean = x.mean_axis(Axis(0)).unwrap();
            let mut s = 0.0;
            for row in x.outer_iter() {
                s += sq_dist(row.to_slice().unwrap(), mean.as_slice().unwrap());
            }
            (s / (n as f64 * p as f64)).max(1e-9)
        };
        let mut gmm = SphericalGmm {
            weights: vec![1.0 / e as f64; e],
            means,
            variances: vec![global_var; e],
        };

        let mut ll = f64::NEG_INFINITY;
        let mut resp = Array2::<f64>::zeros((n, e));
        for _ in 0..max_iter {
            // E-step with log-sum-exp.
            let mut new_ll = 0.0;
            for (i, row) in x.outer_iter().enumerate() {
                let xi = row.to_slice().unwrap();
                let mut logp = vec![0.0; e];
                for (j, lp) in logp.iter_mut().enumerate() {
                    let var = gmm.variances[j];
                    let d = sq_dist(xi, gmm.means.row(j).to_slice().unwrap());
                    *lp = gmm.weights[j].max(1e-300).ln()
                        - 0.5 * p as f64 * (2.0 * std::f64::consts::PI * var).ln()
                        - d / (2.0 * var);
                }
                let max = logp.iter().cloned().fold(f64::NEG_INFINITY, f64::max);
                let sum: f64 = logp.iter().map(|l| (l - max).exp()).sum();
                new_ll += max + sum.ln();
                for j in 0..e {
                    resp[[i, j]] = (logp[j] - max).exp() / sum;
                }
            }
            // M-step.
            for j in 0..e {
                let nj: f64 = resp.column(j).sum();
                if nj < 1e-12 {
                    continue;
                }
                gmm.weights[j] = nj / n as f64;
                let mut mean = vec![0.0; p];
                for (i, row) in x.outer_iter().enumerate() {
                    let r = resp[[i, j]];
                    for (m, &v) in mean.iter_mut().zip(row.iter()) {
                        *m += r * v;
                    }
                }
                for m in &mut mean {
                    *m /= nj;
                }
                let mut var = 0.0;
                for (i, row) in x.outer_iter().enumerate() {
                    var += resp[[i, j]] * sq_dist(row.to_slice().unwrap(), &mean);
                }
                gmm.means.row_mut(j).assign(&Array1::from_vec(mean));
                gmm.variances[j] = (var / (nj * p as f64)).max(1e-9);
            }
            if (new_ll - ll).abs() < 1e-9 * (1.0 + new_ll.abs()) {
                ll = new_ll;
                break;
            }
            ll = new_ll;
        }
        (gmm, ll)
    }
}

fn sq_dist(a: &[f64], b: &[f64]) -> f64 {
    a.iter()
        .zip(b)
        .map(|(x, y)| (x - y) * (x - y))
        .sum()
}

/// BIC of a fitted spherical mixture: `-2 ll + m ln n` with
/// `m = e p + e + (e - 1)` free parameters.
pub(crate) fn gmm_bic(ll: f64, e: usize, n: usize, p: usize) -> f64 {
    let m = (e * p + e + (e - 1)) as f64;
    -2.0 * ll + m * (n as f64).ln()
}

/// Estimates a suitable expert count by fitting spherical Gaussian mixtures
/// for each candidate count and picking the one minimizing the BIC. Falls
/// back to 1 on degenerate data.
pub fn estimate_expert_count(x: &Array2<f64>, e_max: usize, seed: u64) -> usize {
    assert!(e_max >= 1, "e_max must be at least 1");
    let n = x.nrows();
    if n < 2 {
        return 1;
    }
    let e_max = e_max.min(n.saturating_sub(1)).max(1);
    let mut rng = ChaCha8Rng::seed_from_u64(seed);
    let mut best = (1, f64::INFINITY);
    for e in 1..=e_max {
        // Best log-likelihood over a few restarts.
        let mut ll = f64::NEG_INFINITY;
        for _ in 0..3 {
            let (_, fit_ll) = SphericalGmm::fit(x, e, &mut rng, 100);
            if fit_ll > ll {
                ll = fit_ll;
            }
        }
        if !ll.is_finite() {
            continue;
        }
        let bic = gmm_bic(ll, e, n, x.ncols());
        if bic < best.1 {
            best = (e, bic);
        }
    }
    best.0
}

/// Log-likelihood of data under a spherical mixture fit, exposed for tests
/// that recompute the BIC curve independently.
#[cfg(test)]
pub(crate) fn gmm_best_loglik(x: &Array2<f64>, e: usize, seed: u64, restarts: usize) -> f64 {
    let mut rng = ChaCha8Rng::seed_from_u64(seed);
    let mut ll = f64::NEG_INFINITY;
    for _ in 0..restarts {
        let (_, fit_ll) = SphericalGmm::fit(x, e, &mut rng, 100);
        if fit_ll > ll {
            ll = fit_ll;
        }
    }
    ll
}

#[cfg(test)]
mod tests {
    use super::*;
    use ndarray::array;

    #[test]
    fn gate_input_full_appends_bias() {
        let x = array![[1.0, 2.0, 3.0], [4.0, 5.0, 6.0]];
        let xg = gate_input(&x, GateMode::Full).unwrap();
        assert_eq!(
            xg.matrix(),
            &array![[1.0, 2.0, 3.0, 1.0], [4.0, 5.0, 6.0, 1.0]]
        );
    }

    #[test]
    fn gate_input_two_d_selects_columns() {
        let x = array![[10.0, 20.0, 30.0, 40.0]];
        let xg = gate_input(
            &x,
            GateMode::TwoD {
                feature_i: 0,
                feature_j: 2,
            },
        )
        .unwrap();
        assert_eq!(xg.matrix(), &array![[10.0, 30.0, 1.0]]);
    }

    #[test]
    fn gate_input_rejects_duplicate_indices() {
        let x = array![[1.0, 2.0, 3.0, 4.0]];
        assert_eq!(
            gate_input(
                &x,
                GateMode::TwoD {
                    feature_i: 1,
                    feature_j: 1
                }
            )
            .unwrap_err(),
            GatingError::BadFeatureIndex { i: 1, j: 1, p: 4 }
        );
    }

    #[test]
    fn zero_theta_gives_uniform_gating() {
        let xg = array![[1.0, 2.0, 1.0], [0.5, -3.0, 1.0]];
        let theta = Array2::zeros((3, 3));
        let g = gating_values(&xg, &theta).unwrap();
        for row in g.matrix().outer_iter() {
            for &v in row {
                assert!((v - 1.0 / 3.0).abs() < 1e-12);
            }
        }
    }

    #[test]
    fn softmax_shift_invariance() {
        // Adding a constant to every logit of a row leaves the row unchanged.
        let xg = array![[2.0, -1.0, 1.0]];
        let theta = array![[0.3, -0.4], [1.1, 0.2], [-0.7, 0.9]];
        let g1 = gating_values(&xg, &theta).unwrap();
        // Shifting both columns of theta's bias row adds c to every logit.
        let mut theta2 = theta.clone();
        for v in theta2.row_mut(2) {
            *v += 17.5;
        }
        let g2 = gating_values(&xg, &theta2).unwrap();
        for (a, b) in g1.matrix().iter().zip(g2.matrix().iter()) {
            assert!((a - b).abs() < 1e-12);
        }
    }

    #[test]
    fn known_logits_normalize_exactly() {
        // Logits [ln 7, ln 2, ln 1] must produce [0.7, 0.2, 0.1].
        let xg = array![[1.0]];
        let theta = array![[7.0f64.ln(), 2.0f64.ln(), 1.0f64.ln()]];
        let g = gating_values(&xg, &theta).unwrap();
        let row = g.row(0);
        assert!((row[0] - 0.7).abs() < 1e-12);
        assert!((row[1] - 0.2).abs() < 1e-12);
        assert!((row[2] - 0.1).abs() < 1e-12);
    }

    #[test]
    fn gating_values_rejects_non_finite() {
        let xg = array![[f64::NAN, 1.0]];
        let theta = Array2::zeros((2, 2));
        assert_eq!(
            gating_values(&xg, &theta).unwrap_err(),
            GatingError::NonFiniteInput
        );
    }

    #[test]
    fn gating_is_stable_for_huge_logits() {
        let xg = array![[1e6, 1.0], [-1e6, 1.0]];
        let theta = array![[1.0, -1.0], [0.0, 0.0]];
        let g = gating_values(&xg, &theta).unwrap();
        for row in g.matrix().outer_iter() {
            let sum: f64 = row.sum();
            assert!((sum - 1.0).abs() < 1e-9);
            assert!(row.iter().all(|v| v.is_finite() && *v >= 0.0));
        }
    }

    #[test]
    fn select_expert_cases() {
        assert_eq!(select_expert(&[0.7, 0.2, 0.1]), 0);
        assert_eq!(select_expert(&[0.5, 0.5]), 0);
        // Scale invariance of the argmax.
        assert_eq!(select_expert(&[0.07, 0.02, 0.01]), 0);
        assert_eq!(select_expert(&[0.1, 0.2, 0.7]), 2);
    }

    #[test]
    fn init_theta_is_seeded_and_bounded() {
        let a = init_theta(4, 3, 123);
        let b = init_theta(4, 3, 123);
        assert_eq!(a, b);
        assert_ne!(a, init_theta(4, 3, 124));
        let big = init_theta(99, 100, 5);
        assert_eq!(big.dim(), (100, 100));
        assert!(big.iter().all(|&v| (-1.0..=1.0).contains(&v)));
    }

    #[test]
    fn single_expert_gate_is_all_ones() {
        let theta = init_theta(2, 1, 9);
        let xg = array![[3.0, -2.0, 1.0], [0.0, 0.0, 1.0]];
        let g = gating_values(&xg, &theta).unwrap();
        assert!(g.matrix().iter().all(|&v| (v - 1.0).abs() < 1e-15));
    }

    #[test]
    fn two_feature_dataset_always_selects_the_pair() {
        let x = array![[0.0, 1.0], [1.0, 0.0], [0.0, 0.0], [1.0, 1.0]];
        let y = vec![0, 1, 0, 1];
        for method in [
            FeatureSelection::TreeImportance,
            FeatureSelection::LinearImportance,
            FeatureSelection::Pca,
            FeatureSelection::Manual { i: 0, j: 1 },
        ] {
            assert_eq!(
                select_gating_features(&x, &y, 2, method).unwrap(),
                (0, 1),
                "{method:?}"
            );
        }
    }

    #[test]
    fn tree_importance_finds_the_informative_feature() {
        // Feature 0 determines the label; features 1 and 2 are constant.
        let n = 40;
        let x = Array2::from_shape_fn((n, 3), |(i, j)| match j {
            0 => i as f64,
            _ => 1.0,
        });
        let y: Vec<usize> = (0..n).map(|i| usize::from(i >= n / 2)).collect();
        let scores = tree_importances(&x, &y, 2).unwrap();
        assert!(scores[0] > 0.0);
        assert_eq!(scores[1], 0.0);
        assert_eq!(scores[2], 0.0);
        let (i, j) = select_gating_features(&x, &y, 2, FeatureSelection::TreeImportance).unwrap();
        assert_eq!(i, 0, "feature 0 must rank first");
        assert!(j == 1 || j == 2);
    }

    #[test]
    fn manual_pair_is_echoed_in_order() {
        let x = Array2::zeros((3, 5));
        let y = vec![0, 1, 0];
        assert_eq!(
            select_gating_features(&x, &y, 2, FeatureSelection::Manual { i: 3, j: 1 }).unwrap(),
            (3, 1)
        );
        assert_eq!(
            select_gating_features(&x, &y, 2, FeatureSelection::Manual { i: 3, j: 3 }).unwrap_err(),
            GatingError::BadManualPair { i: 3, j: 3, p: 5 }
        );
    }

    #[test]
    fn too_few_features_is_rejected() {
        let x = Array2::zeros((3, 1));
        let y = vec![0, 1, 0];
        assert_eq!(
            select_gating_features(&x, &y, 2, FeatureSelection::Pca).unwrap_err(),
            GatingError::TooFewFeatures(1)
        );
    }

    fn blobs(centers: &[(f64, f64)], per: usize, spread: f64, seed: u64) -> Array2<f64> {
        let mut rng = ChaCha8Rng::seed_from_u64(seed);
        let mut rows = Vec::new();
        for &(cx, cy) in centers {
            for _ in 0..per {
                rows.push(cx + rng.random_range(-spread..spread));
                rows.push(cy + rng.random_range(-spread..spread));
            }
        }
        Array2::from_shape_vec((centers.len() * per, 2), rows).unwrap()
    }

    #[test]
    fn expert_count_finds_three_separated_blobs() {
        let x = blobs(&[(-10.0, 0.0), (10.0, 0.0), (0.0, 15.0)], 40, 0.8, 1);
        let e = estimate_expert_count(&x, 6, 7);
        assert_eq!(e, 3);
        // Independent BIC curve recomputation: the returned count minimizes
        // the curve built from separately computed log-likelihoods.
        let n = x.nrows();
        let p = x.ncols();
        let mut best = (1, f64::INFINITY);
        for cand in 1..=6 {
            let ll = gmm_best_loglik(&x, cand, 1000 + cand as u64, 3);
            let bic = gmm_bic(ll, cand, n, p);
            if bic < best.1 {
                best = (cand, bic);
            }
        }
        assert_eq!(best.0, 3, "independent BIC curve disagrees");
    }

    #[test]
    fn expert_count_degenerate_cases() {
        let x = Array2::from_elem((30, 2), 5.0);
        assert_eq!(estimate_expert_count(&x, 5, 3), 1);
        let x2 = blobs(&[(-5.0, 0.0), (5.0, 0.0)], 30, 0.5, 2);
        assert_eq!(estimate_expert_count(&x2, 1, 3), 1);
    }
}
