//! EM training loop: the E-step fits one gate-weighted tree per expert and
//! scores how confidently each tree predicts the true labels; the M-step
//! regresses the desired change in gating values onto the gate inputs and
//! steps the gate parameters by a learning rate.

use ndarray::Array2;
use rand::SeedableRng;
use rand_chacha::ChaCha8Rng;
use serde::{Deserialize, Serialize};
use thiserror::Error;

use crate::data::{DataError, Dataset};
use crate::gating::{
    gate_input, gating_values, select_expert, select_gating_features, theta_column_from_rng,
    theta_from_rng, FeatureSelection, GateMode, GatingError, GatingModel, GatingValues,
};
use crate::linalg;
use crate::predict::MoDTModel;
use crate::tree::{fit_tree, DecisionTree, TreeError};

/// Ridge term that keeps the normal equations solvable on rank-deficient
/// gate inputs.
const RIDGE_LAMBDA: f64 = 1e-8;
/// An expert whose total gating mass falls below `1e-9 * n` is considered
/// dead and gets its gate column reinitialized.
const DEAD_EXPERT_MASS_PER_ROW: f64 = 1e-9;
/// Early-stop tolerance on the max absolute gate parameter change.
const EARLY_STOP_TOL: f64 = 1e-6;

#[derive(Debug, Error)]
pub enum TrainError {
    #[error("invalid training config: {0}")]
    InvalidConfig(String),
    #[error("expert {expert} holds total gating mass {mass:.3e}, too small to train on")]
    DegenerateExpert { expert: usize, mass: f64 },
    #[error("non-finite values in least-squares input")]
    NonFiniteInput,
    #[error("shape mismatch: {0}")]
    ShapeMismatch(String),
    #[error(transparent)]
    Tree(#[from] TreeError),
    #[error(transparent)]
    Gating(#[from] GatingError),
    #[error(transparent)]
    Data(#[from] DataError),
}

/// Which iterate of the gate parameters the returned model keeps.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum ModelSelection {
    LastIteration,
    BestTrainingAccuracy,
}

/// Gate requested in a training config: full-width, or two features chosen
/// by the given selection method.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum GateSpec {
    Full,
    TwoD(FeatureSelection),
}

/// Hyperparameters for one training run.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct TrainConfig {
    pub n_experts: usize,
    pub max_depth: usize,
    pub gate: GateSpec,
    pub gamma: f64,
    pub iterations: usize,
    pub seed: u64,
    pub model_selection: ModelSelection,
    /// Stop once the max absolute gate parameter change drops below 1e-6.
    #[serde(default)]
    pub early_stop: bool,
}

impl Default for TrainConfig {
    fn default() -> Self {
        TrainConfig {
            n_experts: 3,
            max_depth: 2,
            gate: GateSpec::TwoD(FeatureSelection::TreeImportance),
            gamma: 1.0,
            iterations: 40,
            seed: 0,
            model_selection: ModelSelection::BestTrainingAccuracy,
            early_stop: false,
        }
    }
}

impl TrainConfig {
    pub fn validate(&self) -> Result<(), TrainError> {
        if self.n_experts < 1 {
            return Err(TrainError::InvalidConfig("expert count must be >= 1".into()));
        }
        if self.max_depth < 1 {
            return Err(TrainError::InvalidConfig("tree depth must be >= 1".into()));
        }
        if !self.gamma.is_finite() || self.gamma <= 0.0 {
            return Err(TrainError::InvalidConfig(format!(
                "learning rate must be finite and > 0, got {}",
                self.gamma
            )));
        }
        if self.iterations < 1 {
            return Err(TrainError::InvalidConfig("iterations must be >= 1".into()));
        }
        Ok(())
    }
}

/// Per-iteration diagnostics recorded during training.
#[derive(Debug, Clone)]
pub struct IterationRecord {
    pub iteration: usize,
    pub train_accuracy: f64,
    /// Total gating mass per expert at this iteration.
    pub expert_mass: Vec<f64>,
    /// Gate parameters the iteration's trees were fit under.
    pub theta: Array2<f64>,
}

/// Training diagnostics: one record per executed iteration.
#[derive(Debug, Clone, Default)]
pub struct TrainingTrace {
    pub records: Vec<IterationRecord>,
}

impl TrainingTrace {
    pub fn len(&self) -> usize {
        self.records.len()
    }

    pub fn is_empty(&self) -> bool {
        self.records.is_empty()
    }

    /// CSV with one row per iteration: accuracy plus per-expert mass.
    pub fn to_csv_string(&self) -> String {
        let e = self.records.first().map_or(0, |r| r.expert_mass.len());
        let mut out = String::from("iteration,train_accuracy");
        for j in 0..e {
            out.push_str(&format!(",mass_expert_{j}"));
        }
        out.push('\n');
        for rec in &self.records {
            out.push_str(&format!("{},{}", rec.iteration, rec.train_accuracy));
            for m in &rec.expert_mass {
                out.push_str(&format!(",{m}"));
            }
            out.push('\n');
        }
        out
    }
}

/// Row-stochastic expectation matrix produced by the E-step.
#[derive(Debug, Clone, PartialEq)]
pub struct ExpectationMatrix(Array2<f64>);

impl ExpectationMatrix {
    pub fn matrix(&self) -> &Array2<f64> {
        &self.0
    }

    pub fn row(&self, i: usize) -> &[f64] {
        self.0.row(i).to_slice().expect("rows are contiguous")
    }
}

/// Summary of a finished training run, stored inside the model file.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct TrainMeta {
    pub config: TrainConfig,
    pub iterations_run: usize,
    pub best_train_accuracy: f64,
    pub final_train_accuracy: f64,
}

/// A trained model together with its training trace.
#[derive(Debug, Clone)]
pub struct TrainResult {
    pub model: MoDTModel,
    pub trace: TrainingTrace,
}

/// Per-point, per-expert probability assigned to the true class:
/// `C[i][j] = predict_proba(tree_j, x_i)[y_i]`.
pub fn confidence_matrix(
    trees: &[DecisionTree],
    x: &Array2<f64>,
    y: &[usize],
) -> Result<Array2<f64>, TrainError> {
    let n = x.nrows();
    if y.len() != n {
        return Err(TrainError::ShapeMismatch(format!(
            "{} rows vs {} labels",
            n,
            y.len()
        )));
    }
    let mut c = Array2::<f64>::zeros((n, trees.len()));
    for (j, tree) in trees.iter().enumerate() {
        for (i, row) in x.outer_iter().enumerate() {
            let proba = tree.predict_proba(row)?;
            c[[i, j]] = proba[y[i]];
        }
    }
    Ok(c)
}

/// Row-normalized elementwise product of gating values and confidences.
/// Rows whose product mass is below 1e-12 fall back to the gating row.
pub fn expectation(g: &GatingValues, c: &Array2<f64>) -> Result<ExpectationMatrix, TrainError> {
    let gm = g.matrix();
    if gm.dim() != c.dim() {
        return Err(TrainError::ShapeMismatch(format!(
            "gating {:?} vs confidence {:?}",
            gm.dim(),
            c.dim()
        )));
    }
    let mut e = gm * c;
    for (i, mut row) in e.rows_mut().into_iter().enumerate() {
        let sum: f64 = row.sum();
        if sum < 1e-12 {
            row.assign(&gm.row(i));
        } else {
            row.mapv_inplace(|v| v / sum);
        }
    }
    Ok(ExpectationMatrix(e))
}

/// E-step: gate-weighted tree fitting plus the expectation computation.
pub fn e_step(
    xg: &Array2<f64>,
    x: &Array2<f64>,
    y: &[usize],
    theta: &Array2<f64>,
    max_depth: usize,
    n_classes: usize,
) -> Result<(Vec<DecisionTree>, GatingValues, ExpectationMatrix), TrainError> {
    let g = gating_values(xg, theta)?;
    let trees = fit_expert_trees(&g, x, y, max_depth, n_classes)?;
    let c = confidence_matrix(&trees, x, y)?;
    let e = expectation(&g, &c)?;
    Ok((trees, g, e))
}

fn fit_expert_trees(
    g: &GatingValues,
    x: &Array2<f64>,
    y: &[usize],
    max_depth: usize,
    n_classes: usize,
) -> Result<Vec<DecisionTree>, TrainError> {
    let gm = g.matrix();
    let mut trees = Vec::with_capacity(gm.ncols());
    for j in 0..gm.ncols() {
        let w: Vec<f64> = gm.column(j).to_vec();
        let mass: f64 = w.iter().sum();
        if mass < 1e-9 {
            return Err(TrainError::DegenerateExpert { expert: j, mass });
        }
        trees.push(fit_tree(x, y, &w, max_depth, n_classes)?);
    }
    Ok(trees)
}

/// Least-squares coefficients minimizing the residual sum of squares of
/// `T - Xg . beta`, solved via the ridge-stabilized normal equations.
pub fn least_squares(xg: &Array2<f64>, t: &Array2<f64>) -> Result<Array2<f64>, TrainError> {
    if xg.nrows() != t.nrows() {
        return Err(TrainError::ShapeMismatch(format!(
            "{} input rows vs {} target rows",
            xg.nrows(),
            t.nrows()
        )));
    }
    if xg.iter().any(|v| !v.is_finite()) || t.iter().any(|v| !v.is_finite()) {
        return Err(TrainError::NonFiniteInput);
    }
    linalg::ridge_normal_equations(xg, t, RIDGE_LAMBDA).ok_or(TrainError::NonFiniteInput)
}

/// M-step: regress `E - G` (the desired movement of the gating values) onto
/// the gate inputs and step the parameters by the learning rate.
pub fn m_step(
    xg: &Array2<f64>,
    e: &ExpectationMatrix,
    g: &GatingValues,
    theta: &Array2<f64>,
    gamma: f64,
) -> Result<Array2<f64>, TrainError> {
    let target = e.matrix() - g.matrix();
    let beta = least_squares(xg, &target)?;
    Ok(theta + &(beta * gamma))
}

/// Hard-gate predictions from precomputed gating values.
fn hard_gate_predictions(
    g: &GatingValues,
    trees: &[DecisionTree],
    x: &Array2<f64>,
) -> Result<Vec<usize>, TrainError> {
    let mut out = Vec::with_capacity(x.nrows());
    for (i, row) in x.outer_iter().enumerate() {
        let j = select_expert(g.row(i));
        out.push(trees[j].predict_class(row)?);
    }
    Ok(out)
}

fn accuracy(pred: &[usize], y: &[usize]) -> f64 {
    let correct = pred.iter().zip(y).filter(|(a, b)| a == b).count();
    correct as f64 / y.len() as f64
}

/// Reinitializes gate columns whose total mass is below the dead-expert
/// threshold. Errors if an expert cannot be revived.
fn revive_dead_experts(
    xg: &Array2<f64>,
    theta: &mut Array2<f64>,
    rng: &mut ChaCha8Rng,
    n: usize,
) -> Result<(), TrainError> {
    let threshold = DEAD_EXPERT_MASS_PER_ROW * n as f64;
    for _ in 0..8 {
        let g = gating_values(xg, theta)?;
        let mass = g.expert_mass();
        let dead: Vec<usize> = mass
            .iter()
            .enumerate()
            .filter(|(_, &m)| m < threshold)
            .map(|(j, _)| j)
            .collect();
        if dead.is_empty() {
            return Ok(());
        }
        for &j in &dead {
            log::warn!(
                "expert {j} holds gating mass {:.3e} (< {threshold:.3e}); reinitializing its gate column",
                mass[j]
            );
            theta_column_from_rng(theta, j, rng);
        }
    }
    let g = gating_values(xg, theta)?;
    let mass = g.expert_mass();
    match mass
        .iter()
        .enumerate()
        .find(|(_, &m)| m < threshold)
    {
        Some((j, &m)) => Err(TrainError::DegenerateExpert { expert: j, mass: m }),
        None => Ok(()),
    }
}

/// Runs the full EM loop and returns the trained model with its trace.
///
/// Deterministic given `(dataset, config)`: all randomness flows from the
/// config seed through one generator.
pub fn train(dataset: &Dataset, config: &TrainConfig) -> Result<TrainResult, TrainError> {
    config.validate()?;
    let x = &dataset.x;
    let y = &dataset.y;
    let n = dataset.n_samples();
    let k = dataset.n_classes();
    let e = config.n_experts;

    let mode = match config.gate {
        GateSpec::Full => GateMode::Full,
        GateSpec::TwoD(method) => {
            let (feature_i, feature_j) = select_gating_features(x, y, k, method)?;
            GateMode::TwoD {
                feature_i,
                feature_j,
            }
        }
    };
    let xg = gate_input(x, mode)?;
    let xg = xg.matrix();

    let mut rng = ChaCha8Rng::seed_from_u64(config.seed);
    let mut theta = theta_from_rng(mode.width(dataset.n_features()), e, &mut rng);

    let mut trace = TrainingTrace::default();
    let mut best: Option<(f64, Array2<f64>)> = None;
    for iteration in 1..=config.iterations {
        revive_dead_experts(xg, &mut theta, &mut rng, n)?;
        let (trees, g, e_mat) = e_step(xg, x, y, &theta, config.max_depth, k)?;
        let train_accuracy = accuracy(&hard_gate_predictions(&g, &trees, x)?, y);
        trace.records.push(IterationRecord {
            iteration,
            train_accuracy,
            expert_mass: g.expert_mass(),
            theta: theta.clone(),
        });
        if best.as_ref().is_none_or(|(acc, _)| train_accuracy > *acc) {
            best = Some((train_accuracy, theta.clone()));
        }
        log::debug!("iteration {iteration}: training accuracy {train_accuracy:.4}");

        let theta_new = m_step(xg, &e_mat, &g, &theta, config.gamma)?;
        let max_delta = (&theta_new - &theta)
            .iter()
            .map(|d| d.abs())
            .fold(0.0, f64::max);
        theta = theta_new;
        if config.early_stop && max_delta < EARLY_STOP_TOL {
            log::debug!("early stop after iteration {iteration} (max delta {max_delta:.2e})");
            break;
        }
    }

    let (best_train_accuracy, best_theta) = best.expect("at least one iteration ran");
    let final_theta = match config.model_selection {
        ModelSelection::BestTrainingAccuracy => best_theta,
        ModelSelection::LastIteration => theta,
    };

    // Refit the shipped trees under the shipped gate so they always match.
    let g = gating_values(xg, &final_theta)?;
    let trees = fit_expert_trees(&g, x, y, config.max_depth, k)?;
    let final_train_accuracy = accuracy(&hard_gate_predictions(&g, &trees, x)?, y);

    let gating = GatingModel::new(final_theta, mode, dataset.n_features())?;
    let meta = TrainMeta {
        config: config.clone(),
        iterations_run: trace.len(),
        best_train_accuracy,
        final_train_accuracy,
    };
    let model = MoDTModel::new(
        gating,
        trees,
        dataset.class_names.clone(),
        dataset.feature_names.clone(),
        Some(dataset.encoder.clone()),
        meta,
    )
    .map_err(|e| TrainError::ShapeMismatch(e.to_string()))?;
    Ok(TrainResult { model, trace })
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::data::Dataset;
    use crate::gating::init_theta;
    use crate::tree::TreeNode;
    use ndarray::array;
    use rand::Rng;

    fn gv(rows: Array2<f64>) -> GatingValues {
        GatingValues::from_matrix(rows).unwrap()
    }

    #[test]
    fn expectation_matches_worked_example() {
        let g = gv(array![[0.7, 0.2, 0.1]]);
        let c = array![[1.0, 0.9, 0.5]];
        let e = expectation(&g, &c).unwrap();
        let row = e.row(0);
        assert!((row[0] - 0.753).abs() < 5e-4, "{row:?}");
        assert!((row[1] - 0.194).abs() < 5e-4);
        assert!((row[2] - 0.054).abs() < 5e-4);
    }

    #[test]
    fn expectation_with_uniform_confidence_returns_gating() {
        let g = gv(array![[0.6, 0.3, 0.1]]);
        let c = array![[0.4, 0.4, 0.4]];
        let e = expectation(&g, &c).unwrap();
        for (a, b) in e.row(0).iter().zip(g.row(0)) {
            assert!((a - b).abs() < 1e-12);
        }
    }

    #[test]
    fn expectation_zero_row_falls_back_to_gating() {
        let g = gv(array![[0.5, 0.5]]);
        let c = array![[0.0, 0.0]];
        let e = expectation(&g, &c).unwrap();
        assert_eq!(e.row(0), g.row(0));
    }

    #[test]
    fn expectation_matches_row_oracle_on_random_input() {
        let mut rng = ChaCha8Rng::seed_from_u64(8);
        for _ in 0..50 {
            let raw: Vec<f64> = (0..3).map(|_| rng.random_range(0.05..1.0)).collect();
            let sum: f64 = raw.iter().sum();
            let grow: Vec<f64> = raw.iter().map(|v| v / sum).collect();
            let g = gv(Array2::from_shape_vec((1, 3), grow.clone()).unwrap());
            let crow: Vec<f64> = (0..3).map(|_| rng.random_range(0.0..1.0)).collect();
            let c = Array2::from_shape_vec((1, 3), crow.clone()).unwrap();
            let e = expectation(&g, &c).unwrap();
            // Independent oracle: product then normalize.
            let prod: Vec<f64> = g.row(0).iter().zip(&crow).map(|(a, b)| a * b).collect();
            let total: f64 = prod.iter().sum();
            for (got, want) in e.row(0).iter().zip(prod.iter().map(|v| v / total)) {
                assert!((got - want).abs() < 1e-12);
            }
        }
    }

    #[test]
    fn e_step_single_expert_is_all_ones() {
        let x = array![[0.0], [1.0], [2.0], [3.0]];
        let y = vec![0, 0, 1, 1];
        let xg = crate::data::append_bias(&x);
        let theta = init_theta(1, 1, 5);
        let (trees, g, e) = e_step(xg.matrix(), &x, &y, &theta, 1, 2).unwrap();
        assert_eq!(trees.len(), 1);
        assert!(g.matrix().iter().all(|&v| v == 1.0));
        assert!(e.matrix().iter().all(|&v| (v - 1.0).abs() < 1e-12));
    }

    #[test]
    fn e_step_perfectly_confident_experts_reproduce_gating() {
        // All labels are class 0, so every tree is a pure class-0 leaf and
        // the confidence matrix is identically one.
        let x = array![[0.0, 3.0], [1.0, -1.0], [2.0, 0.5]];
        let y = vec![0, 0, 0];
        let xg = crate::data::append_bias(&x);
        let theta = init_theta(2, 3, 11);
        let (_, g, e) = e_step(xg.matrix(), &x, &y, &theta, 2, 1).unwrap();
        for (a, b) in e.matrix().iter().zip(g.matrix().iter()) {
            assert!((a - b).abs() < 1e-12);
        }
    }

    #[test]
    fn e_step_matches_row_oracle_on_random_dataset() {
        let mut rng = ChaCha8Rng::seed_from_u64(30);
        let x = Array2::from_shape_fn((30, 2), |_| rng.random_range(-2.0..2.0));
        let y: Vec<usize> = (0..30).map(|_| rng.random_range(0..2)).collect();
        let xg = crate::data::append_bias(&x);
        let theta = init_theta(2, 3, 1);
        let (trees, g, e) = e_step(xg.matrix(), &x, &y, &theta, 2, 2).unwrap();
        let c = confidence_matrix(&trees, &x, &y).unwrap();
        for i in 0..30 {
            let prod: Vec<f64> = g.row(i).iter().zip(c.row(i)).map(|(a, b)| a * b).collect();
            let total: f64 = prod.iter().sum();
            for (got, want) in e.row(i).iter().zip(prod.iter().map(|v| v / total)) {
                assert!((got - want).abs() < 1e-12);
            }
        }
    }

    #[test]
    fn confidence_matrix_reads_leaf_probabilities() {
        // A pure single-leaf tree is fully confident.
        let x = array![[1.0], [2.0]];
        let pure = fit_tree(&x, &[1, 1], &[1.0, 1.0], 1, 2).unwrap();
        let c = confidence_matrix(&[pure], &x, &[1, 1]).unwrap();
        assert!(c.iter().all(|&v| v == 1.0));

        // A leaf with distribution [0.25, 0.75] has confidence 0.25 for
        // true class 0.
        let leaf = DecisionTree::from_parts(
            TreeNode::Leaf {
                distribution: vec![0.25, 0.75],
                majority_class: 1,
            },
            Some(1),
            2,
            1,
        );
        let c = confidence_matrix(&[leaf], &x, &[0, 1]).unwrap();
        assert_eq!(c[[0, 0]], 0.25);
        assert_eq!(c[[1, 0]], 0.75);
    }

    #[test]
    fn confidence_matrix_matches_hand_traced_stumps() {
        // Ten points through two hand-built stumps.
        let x = Array2::from_shape_fn((10, 1), |(i, _)| i as f64);
        let y: Vec<usize> = (0..10).map(|i| usize::from(i >= 5)).collect();
        let stump = |thr: f64, left: Vec<f64>, right: Vec<f64>| {
            DecisionTree::from_parts(
                TreeNode::Internal {
                    feature_index: 0,
                    threshold: thr,
                    left: Box::new(TreeNode::Leaf {
                        majority_class: crate::tree::argmax(&left),
                        distribution: left,
                    }),
                    right: Box::new(TreeNode::Leaf {
                        majority_class: crate::tree::argmax(&right),
                        distribution: right,
                    }),
                },
                Some(1),
                2,
                1,
            )
        };
        let t0 = stump(4.5, vec![1.0, 0.0], vec![0.0, 1.0]);
        let t1 = stump(2.5, vec![0.8, 0.2], vec![0.3, 0.7]);
        let c = confidence_matrix(&[t0, t1], &x, &y).unwrap();
        for i in 0..10 {
            // Tree 0 is exactly right everywhere.
            assert_eq!(c[[i, 0]], 1.0);
            // Tree 1: left leaf covers x <= 2.5 (true class 0 -> 0.8);
            // right leaf covers the rest (class 0 until i=4 -> 0.3, then 0.7).
            let expected = if i <= 2 {
                0.8
            } else if i <= 4 {
                0.3
            } else {
                0.7
            };
            assert!((c[[i, 1]] - expected).abs() < 1e-12, "i={i}");
        }
    }

    #[test]
    fn least_squares_recovers_planted_coefficients() {
        let mut rng = ChaCha8Rng::seed_from_u64(2);
        let xg = Array2::from_shape_fn((50, 4), |_| rng.random_range(-1.0..1.0));
        let beta0 = Array2::from_shape_fn((4, 3), |_| rng.random_range(-2.0..2.0));
        let t = xg.dot(&beta0);
        let beta = least_squares(&xg, &t).unwrap();
        for (a, b) in beta.iter().zip(beta0.iter()) {
            assert!((a - b).abs() < 1e-6);
        }
    }

    #[test]
    fn least_squares_zero_targets_give_zero_coefficients() {
        let mut rng = ChaCha8Rng::seed_from_u64(3);
        let xg = Array2::from_shape_fn((20, 3), |_| rng.random_range(-1.0..1.0));
        let t = Array2::zeros((20, 2));
        let beta = least_squares(&xg, &t).unwrap();
        assert!(beta.iter().all(|&b| b.abs() < 1e-6));
    }

    #[test]
    fn least_squares_satisfies_normal_equations_and_optimality() {
        let mut rng = ChaCha8Rng::seed_from_u64(4);
        let xg = Array2::from_shape_fn((50, 4), |_| rng.random_range(-1.0..1.0));
        let t = Array2::from_shape_fn((50, 3), |_| rng.random_range(-1.0..1.0));
        let beta = least_squares(&xg, &t).unwrap();
        // Residual of the normal equations.
        let lhs = {
            let mut xtx = xg.t().dot(&xg);
            for i in 0..4 {
                xtx[[i, i]] += 1e-8;
            }
            xtx.dot(&beta)
        };
        let rhs = xg.t().dot(&t);
        for (a, b) in lhs.iter().zip(rhs.iter()) {
            assert!((a - b).abs() < 1e-8);
        }
        // No random perturbation does better on the RSS.
        let rss = |b: &Array2<f64>| {
            let r = &t - &xg.dot(b);
            r.iter().map(|v| v * v).sum::<f64>()
        };
        let base = rss(&beta);
        for _ in 0..1000 {
            let delta = Array2::from_shape_fn((4, 3), |_| rng.random_range(-0.1..0.1));
            assert!(rss(&(&beta + &delta)) + 1e-12 >= base);
        }
    }

    #[test]
    fn m_step_is_fixed_point_when_expectation_equals_gating() {
        let mut rng = ChaCha8Rng::seed_from_u64(5);
        let x = Array2::from_shape_fn((20, 2), |_| rng.random_range(-1.0..1.0));
        let xg = crate::data::append_bias(&x);
        let theta = init_theta(2, 3, 6);
        let g = gating_values(xg.matrix(), &theta).unwrap();
        let e = ExpectationMatrix(g.matrix().clone());
        let theta_new = m_step(xg.matrix(), &e, &g, &theta, 1.0).unwrap();
        for (a, b) in theta_new.iter().zip(theta.iter()) {
            assert!((a - b).abs() < 1e-6);
        }
    }

    #[test]
    fn config_rejects_zero_gamma() {
        let config = TrainConfig {
            gamma: 0.0,
            ..TrainConfig::default()
        };
        assert!(matches!(
            config.validate(),
            Err(TrainError::InvalidConfig(_))
        ));
    }

    #[test]
    fn m_step_single_row_moves_toward_better_expert() {
        // One data point with gate input [1]: beta = (E - G) / (1 + lambda),
        // so the update raises the column where E > G (the confident expert)
        // and lowers the others.
        let xg = array![[1.0]];
        let g = gv(array![[0.7, 0.2, 0.1]]);
        let c = array![[1.0, 0.9, 0.5]];
        let e = expectation(&g, &c).unwrap();
        let theta = Array2::zeros((1, 3));
        let theta_new = m_step(&xg, &e, &g, &theta, 1.0).unwrap();
        // Hand-computed signs of E - G: [+0.0527, -0.0065, -0.0462].
        assert!(theta_new[[0, 0]] > 0.0);
        assert!(theta_new[[0, 1]] < 0.0);
        assert!(theta_new[[0, 2]] < 0.0);
        assert!((theta_new[[0, 0]] - 0.052688).abs() < 1e-4);
    }

    fn separable_dataset() -> Dataset {
        let x = array![[0.0], [1.0], [2.0], [3.0], [10.0], [11.0], [12.0], [13.0]];
        let y = vec![0, 0, 0, 0, 1, 1, 1, 1];
        Dataset::from_parts(
            x,
            y,
            vec!["a".into(), "b".into()],
            vec!["f0".into()],
        )
        .unwrap()
    }

    #[test]
    fn train_single_expert_on_separable_data_is_perfect() {
        let ds = separable_dataset();
        let config = TrainConfig {
            n_experts: 1,
            max_depth: 1,
            gate: GateSpec::Full,
            iterations: 5,
            ..TrainConfig::default()
        };
        let result = train(&ds, &config).unwrap();
        assert_eq!(result.model.train_meta.final_train_accuracy, 1.0);
        assert_eq!(result.trace.len(), 5);
    }

    #[test]
    fn train_is_bit_reproducible() {
        let ds = crate::synth::three_bands(120, 3);
        let config = TrainConfig {
            iterations: 8,
            gate: GateSpec::Full,
            seed: 42,
            ..TrainConfig::default()
        };
        let a = train(&ds, &config).unwrap();
        let b = train(&ds, &config).unwrap();
        assert_eq!(a.model.gating.theta(), b.model.gating.theta());
        let pa = a.model.predict(&ds.x).unwrap();
        let pb = b.model.predict(&ds.x).unwrap();
        assert_eq!(pa, pb);
    }

    #[test]
    fn best_selection_is_at_least_first_iteration_accuracy() {
        let ds = crate::synth::three_bands(200, 9);
        let config = TrainConfig {
            iterations: 15,
            gate: GateSpec::Full,
            gamma: 2.0,
            seed: 4,
            model_selection: ModelSelection::BestTrainingAccuracy,
            ..TrainConfig::default()
        };
        let result = train(&ds, &config).unwrap();
        let first = result.trace.records[0].train_accuracy;
        assert!(result.model.train_meta.best_train_accuracy >= first);
        assert!(
            (result.model.train_meta.final_train_accuracy
                - result.model.train_meta.best_train_accuracy)
                .abs()
                < 1e-12,
            "refit under the selected gate must reproduce the recorded best"
        );
    }

    #[test]
    fn expectation_ratio_monotone_in_confidence() {
        // For any row, higher confidence means a larger E/G ratio.
        let mut rng = ChaCha8Rng::seed_from_u64(12);
        for _ in 0..200 {
            let raw: Vec<f64> = (0..4).map(|_| rng.random_range(0.05..1.0)).collect();
            let sum: f64 = raw.iter().sum();
            let grow: Vec<f64> = raw.iter().map(|v| v / sum).collect();
            let g = gv(Array2::from_shape_vec((1, 4), grow.clone()).unwrap());
            let crow: Vec<f64> = (0..4).map(|_| rng.random_range(0.01..1.0)).collect();
            let c = Array2::from_shape_vec((1, 4), crow.clone()).unwrap();
            let e = expectation(&g, &c).unwrap();
            let ratio: Vec<f64> = e.row(0).iter().zip(g.row(0)).map(|(a, b)| a / b).collect();
            for j in 0..4 {
                for l in 0..4 {
                    if crow[j] > crow[l] {
                        assert!(
                            ratio[j] > ratio[l],
                            "c={crow:?} ratios={ratio:?} ({j} vs {l})"
                        );
                    }
                }
            }
        }
    }

    #[test]
    fn three_band_toy_trains_to_three_regions() {
        let ds = crate::synth::three_bands(600, 5);
        let config = TrainConfig {
            n_experts: 3,
            max_depth: 1,
            gate: GateSpec::Full,
            gamma: 2.0,
            iterations: 60,
            seed: 0,
            ..TrainConfig::default()
        };
        let result = train(&ds, &config).unwrap();
        let acc = result.model.train_meta.final_train_accuracy;
        assert!(acc >= 0.95, "training accuracy {acc}");
        let assignments = result.model.predict_with_experts(&ds.x).unwrap();
        let mut experts: Vec<usize> = assignments.iter().map(|&(_, e)| e).collect();
        experts.sort_unstable();
        experts.dedup();
        assert_eq!(experts.len(), 3, "expected three active gating regions");
    }

    #[test]
    fn iris_two_d_gate_reaches_training_accuracy() {
        let schema = crate::data::Schema::load(concat!(
            env!("CARGO_MANIFEST_DIR"),
            "/../../data/iris.schema"
        ))
        .unwrap();
        let raw = crate::data::load_csv(
            concat!(env!("CARGO_MANIFEST_DIR"), "/../../data/iris.csv"),
            &schema,
        )
        .unwrap();
        let ds = crate::data::one_hot_encode(&raw).unwrap();
        for seed in 0..10 {
            let config = TrainConfig {
                seed,
                ..TrainConfig::default()
            };
            let result = train(&ds, &config).unwrap();
            let acc = result.model.train_meta.final_train_accuracy;
            assert!(acc >= 0.90, "seed {seed}: training accuracy {acc}");
        }
    }
}
