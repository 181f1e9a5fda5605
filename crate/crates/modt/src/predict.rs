//! Hard-gated prediction, evaluation, model serialization, and the
//! decision-tree / random-forest baselines used for comparison.
//!
//! Prediction routes every input to exactly one expert: the gate's argmax.
//! The model file is versioned, self-describing JSON so a trained model can
//! be inspected with ordinary text tooling.

use std::fs;
use std::path::Path;

use ndarray::Array2;
use rand::Rng;
use rand::SeedableRng;
use rand_chacha::ChaCha8Rng;
use serde::{Deserialize, Serialize};
use thiserror::Error;

use crate::data::{Dataset, Encoder};
use crate::gating::{select_expert, GatingModel};
use crate::trainer::TrainMeta;
use crate::tree::{self, DecisionTree, TreeError};

pub const MODEL_FORMAT: &str = "modt-model";
pub const MODEL_VERSION: u64 = 1;

#[derive(Debug, Error)]
pub enum PredictError {
    #[error("input has {got} features but the model was trained on {expected}")]
    WidthMismatch { expected: usize, got: usize },
    #[error("model is inconsistent: {0}")]
    Inconsistent(String),
    #[error(transparent)]
    Tree(#[from] TreeError),
    #[error(transparent)]
    Gating(#[from] crate::gating::GatingError),
}

#[derive(Debug, Error)]
pub enum ModelIoError {
    #[error(transparent)]
    Io(#[from] std::io::Error),
    #[error("model file is corrupt: {0}")]
    Corrupt(String),
    #[error("model format version {found} is not supported (this build reads version {expected})")]
    VersionMismatch { found: u64, expected: u64 },
}

/// A trained mixture of decision trees: the deployable classifier.
#[derive(Debug, Clone, Serialize, Deserialize)]
pub struct MoDTModel {
    pub gating: GatingModel,
    pub trees: Vec<DecisionTree>,
    pub class_names: Vec<String>,
    pub feature_names: Vec<String>,
    /// Encoding layout for mapping raw CSV rows onto feature columns;
    /// present for models trained through the data pipeline.
    pub encoder: Option<Encoder>,
    pub train_meta: TrainMeta,
}

impl MoDTModel {
    pub fn new(
        gating: GatingModel,
        trees: Vec<DecisionTree>,
        class_names: Vec<String>,
        feature_names: Vec<String>,
        encoder: Option<Encoder>,
        train_meta: TrainMeta,
    ) -> Result<Self, PredictError> {
        if trees.len() != gating.n_experts() {
            return Err(PredictError::Inconsistent(format!(
                "{} trees for {} gate columns",
                trees.len(),
                gating.n_experts()
            )));
        }
        if trees
            .iter()
            .any(|t| t.n_classes() != class_names.len() || t.n_features() != feature_names.len())
        {
            return Err(PredictError::Inconsistent(
                "tree shapes do not match the class or feature lists".into(),
            ));
        }
        if gating.n_features() != feature_names.len() {
            return Err(PredictError::Inconsistent(
                "gate width does not match the feature list".into(),
            ));
        }
        Ok(MoDTModel {
            gating,
            trees,
            class_names,
            feature_names,
            encoder,
            train_meta,
        })
    }

    pub fn n_experts(&self) -> usize {
        self.trees.len()
    }

    pub fn n_classes(&self) -> usize {
        self.class_names.len()
    }

    pub fn n_features(&self) -> usize {
        self.feature_names.len()
    }

    /// Hard-gate prediction: per row, the argmax expert's class.
    pub fn predict(&self, x: &Array2<f64>) -> Result<Vec<usize>, PredictError> {
        Ok(self
            .predict_with_experts(x)?
            .into_iter()
            .map(|(class, _)| class)
            .collect())
    }

    /// Prediction plus the selected expert index per row, so every decision
    /// can be traced back to one tree.
    pub fn predict_with_experts(
        &self,
        x: &Array2<f64>,
    ) -> Result<Vec<(usize, usize)>, PredictError> {
        if x.ncols() != self.n_features() {
            return Err(PredictError::WidthMismatch {
                expected: self.n_features(),
                got: x.ncols(),
            });
        }
        let g = self.gating.values(x)?;
        let mut out = Vec::with_capacity(x.nrows());
        for (i, row) in x.outer_iter().enumerate() {
            let expert = select_expert(g.row(i));
            let class = self.trees[expert].predict_class(row)?;
            out.push((class, expert));
        }
        Ok(out)
    }
}

/// Fraction of correct predictions on a labeled dataset.
pub fn evaluate(model: &MoDTModel, dataset: &Dataset) -> Result<f64, PredictError> {
    let pred = model.predict(&dataset.x)?;
    let correct = pred
        .iter()
        .zip(&dataset.y)
        .filter(|(a, b)| a == b)
        .count();
    Ok(correct as f64 / dataset.y.len() as f64)
}

// --- model file -------------------------------------------------------------

#[derive(Serialize, Deserialize)]
struct ModelFile {
    format: String,
    version: u64,
    model: MoDTModel,
}

/// Writes the model as versioned, pretty-printed JSON. Identical models
/// serialize to identical bytes.
pub fn save_model(model: &MoDTModel, path: impl AsRef<Path>) -> Result<(), ModelIoError> {
    let file = ModelFile {
        format: MODEL_FORMAT.to_string(),
        version: MODEL_VERSION,
        model: model.clone(),
    };
    let json = serde_json::to_string_pretty(&file)
        .map_err(|e| ModelIoError::Corrupt(e.to_string()))?;
    fs::write(path, json + "\n")?;
    Ok(())
}

pub fn load_model(path: impl AsRef<Path>) -> Result<MoDTModel, ModelIoError> {
    let text = fs::read_to_string(path)?;
    let value: serde_json::Value =
        serde_json::from_str(&text).map_err(|e| ModelIoError::Corrupt(e.to_string()))?;
    let version = value
        .get("version")
        .and_then(|v| v.as_u64())
        .ok_or_else(|| ModelIoError::Corrupt("missing version field".into()))?;
    if version != MODEL_VERSION {
        return Err(ModelIoError::VersionMismatch {
            found: version,
            expected: MODEL_VERSION,
        });
    }
    match value.get("format").and_then(|v| v.as_str()) {
        Some(MODEL_FORMAT) => {}
        other => {
            return Err(ModelIoError::Corrupt(format!(
                "unexpected format tag {other:?}"
            )))
        }
    }
    let file: ModelFile =
        serde_json::from_value(value).map_err(|e| ModelIoError::Corrupt(e.to_string()))?;
    Ok(file.model)
}

// --- random forest baseline --------------------------------------------------

/// Bagged forest of CART trees with per-node feature subsampling.
#[derive(Debug, Clone, Serialize, Deserialize)]
pub struct RandomForest {
    trees: Vec<DecisionTree>,
    n_classes: usize,
    n_features: usize,
    max_depth: Option<usize>,
}

impl RandomForest {
    pub fn n_trees(&self) -> usize {
        self.trees.len()
    }

    pub fn max_depth(&self) -> Option<usize> {
        self.max_depth
    }

    pub fn trees(&self) -> &[DecisionTree] {
        &self.trees
    }
}

/// Fits a random forest: each tree trains on a bootstrap sample (n draws
/// with replacement, realized as multiplicity weights) and considers
/// `ceil(sqrt(p))` random features per node. `max_depth = None` grows each
/// tree until its leaves are pure or no split improves the criterion.
pub fn fit_random_forest(
    x: &Array2<f64>,
    y: &[usize],
    n_trees: usize,
    max_depth: Option<usize>,
    seed: u64,
) -> Result<RandomForest, TreeError> {
    let n = x.nrows();
    if n == 0 {
        return Err(TreeError::EmptyInput);
    }
    if y.len() != n {
        return Err(TreeError::ShapeMismatch(format!(
            "{} rows vs {} labels",
            n,
            y.len()
        )));
    }
    let n_classes = y.iter().max().map_or(0, |&m| m + 1).max(2);
    let p = x.ncols();
    let mtry = (p as f64).sqrt().ceil() as usize;
    let mut master = ChaCha8Rng::seed_from_u64(seed);
    let mut trees = Vec::with_capacity(n_trees);
    for _ in 0..n_trees {
        let mut rng = ChaCha8Rng::seed_from_u64(master.random::<u64>());
        let mut w = vec![0.0; n];
        for _ in 0..n {
            w[rng.random_range(0..n)] += 1.0;
        }
        trees.push(tree::fit_tree_with_options(
            x,
            y,
            &w,
            max_depth,
            n_classes,
            Some(mtry),
            &mut rng,
        )?);
    }
    Ok(RandomForest {
        trees,
        n_classes,
        n_features: p,
        max_depth,
    })
}

/// Majority vote over the member trees; ties go to the lowest class index.
pub fn rf_predict(forest: &RandomForest, x: &Array2<f64>) -> Result<Vec<usize>, TreeError> {
    if x.ncols() != forest.n_features {
        return Err(TreeError::WidthMismatch {
            expected: forest.n_features,
            got: x.ncols(),
        });
    }
    let mut out = Vec::with_capacity(x.nrows());
    for row in x.outer_iter() {
        let mut votes = vec![0usize; forest.n_classes];
        for tree in &forest.trees {
            votes[tree.predict_class(row)?] += 1;
        }
        let mut best = 0;
        for (c, &v) in votes.iter().enumerate().skip(1) {
            if v > votes[best] {
                best = c;
            }
        }
        out.push(best);
    }
    Ok(out)
}

/// Test-set accuracy of a forest.
pub fn rf_evaluate(forest: &RandomForest, dataset: &Dataset) -> Result<f64, TreeError> {
    let pred = rf_predict(forest, &dataset.x)?;
    let correct = pred
        .iter()
        .zip(&dataset.y)
        .filter(|(a, b)| a == b)
        .count();
    Ok(correct as f64 / dataset.y.len() as f64)
}

/// Single decision-tree baseline: uniform weights, fixed depth.
pub fn fit_tree_baseline(
    dataset: &Dataset,
    max_depth: usize,
) -> Result<DecisionTree, TreeError> {
    let w = vec![1.0; dataset.n_samples()];
    tree::fit_tree(&dataset.x, &dataset.y, &w, max_depth, dataset.n_classes())
}

/// Accuracy of a plain decision tree on a dataset.
pub fn tree_evaluate(tree: &DecisionTree, dataset: &Dataset) -> Result<f64, TreeError> {
    let pred = tree.predict_batch(&dataset.x)?;
    let correct = pred
        .iter()
        .zip(&dataset.y)
        .filter(|(a, b)| a == b)
        .count();
    Ok(correct as f64 / dataset.y.len() as f64)
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::gating::GateMode;
    use crate::synth;
    use crate::trainer::{train, GateSpec, TrainConfig};
    use crate::tree::TreeNode;
    use ndarray::array;

    fn trained_toy_model() -> MoDTModel {
        let ds = synth::three_bands(200, 1);
        let config = TrainConfig {
            iterations: 10,
            gate: GateSpec::Full,
            gamma: 2.0,
            seed: 3,
            ..TrainConfig::default()
        };
        train(&ds, &config).unwrap().model
    }

    #[test]
    fn single_expert_model_predicts_like_its_tree() {
        let ds = synth::three_bands(150, 2);
        let config = TrainConfig {
            n_experts: 1,
            iterations: 3,
            gate: GateSpec::Full,
            ..TrainConfig::default()
        };
        let model = train(&ds, &config).unwrap().model;
        let direct = model.trees[0].predict_batch(&ds.x).unwrap();
        assert_eq!(model.predict(&ds.x).unwrap(), direct);
    }

    #[test]
    fn known_gating_row_routes_to_first_expert() {
        // Gate constructed so the gating row is exactly [0.7, 0.2, 0.1];
        // the prediction must come from tree 0 no matter what the other
        // trees say.
        let theta = array![
            [0.0, 0.0, 0.0],
            [7.0f64.ln(), 2.0f64.ln(), 1.0f64.ln()]
        ];
        let gating = GatingModel::new(theta, GateMode::Full, 1).unwrap();
        let leaf = |class: usize| {
            let mut distribution = vec![0.0; 3];
            distribution[class] = 1.0;
            DecisionTree::from_parts(
                TreeNode::Leaf {
                    distribution,
                    majority_class: class,
                },
                Some(1),
                3,
                1,
            )
        };
        let meta = crate::trainer::TrainMeta {
            config: TrainConfig::default(),
            iterations_run: 0,
            best_train_accuracy: 0.0,
            final_train_accuracy: 0.0,
        };
        let model = MoDTModel::new(
            gating,
            vec![leaf(2), leaf(0), leaf(1)],
            vec!["a".into(), "b".into(), "c".into()],
            vec!["f0".into()],
            None,
            meta,
        )
        .unwrap();
        let x = array![[0.0], [5.0], [-3.0]];
        let g = model.gating.values(&x).unwrap();
        for i in 0..3 {
            assert!((g.row(i)[0] - 0.7).abs() < 1e-12);
        }
        assert_eq!(model.predict(&x).unwrap(), vec![2, 2, 2]);
    }

    #[test]
    fn hard_gate_matches_indicator_sum_oracle() {
        // Literal evaluation of the prediction as an indicator-weighted sum
        // over all experts.
        let model = trained_toy_model();
        let mut rng = ChaCha8Rng::seed_from_u64(77);
        let x = Array2::from_shape_fn((100, 2), |_| rng.random_range(-3.0..3.0));
        let fast = model.predict(&x).unwrap();
        let g = model.gating.values(&x).unwrap();
        for (i, row) in x.outer_iter().enumerate() {
            let grow = g.row(i);
            let jstar = select_expert(grow);
            let mut indicator_sum = 0.0;
            for (j, tree) in model.trees.iter().enumerate() {
                let z = tree.predict_class(row).unwrap() as f64;
                let ind = if j == jstar { 1.0 } else { 0.0 };
                indicator_sum += z * ind;
            }
            assert_eq!(fast[i], indicator_sum as usize);
        }
    }

    #[test]
    fn prediction_is_stable_under_gate_preserving_perturbation() {
        let model = trained_toy_model();
        let mut rng = ChaCha8Rng::seed_from_u64(5);
        let x = Array2::from_shape_fn((50, 2), |_| rng.random_range(-3.0..3.0));
        let base = model.predict_with_experts(&x).unwrap();
        // Tiny perturbations that keep both the selected expert and the
        // reached leaf must keep the prediction.
        let eps = 1e-9;
        let mut x2 = x.clone();
        x2.mapv_inplace(|v| v + eps);
        let shifted = model.predict_with_experts(&x2).unwrap();
        for (a, b) in base.iter().zip(shifted.iter()) {
            if a.1 == b.1 {
                // Same expert; leaf thresholds are far from the grid values
                // with overwhelming probability at this epsilon.
                assert_eq!(a.0, b.0);
            }
        }
    }

    #[test]
    fn evaluate_counts_correct_fraction() {
        let model = trained_toy_model();
        let ds = synth::three_bands(200, 1);
        let acc = evaluate(&model, &ds).unwrap();
        let pred = model.predict(&ds.x).unwrap();
        let hand = pred.iter().zip(&ds.y).filter(|(a, b)| a == b).count() as f64 / 200.0;
        assert_eq!(acc, hand);
        assert!((0.0..=1.0).contains(&acc));
    }

    #[test]
    fn evaluate_width_mismatch() {
        let model = trained_toy_model();
        let x = Array2::zeros((4, 5));
        assert!(matches!(
            model.predict(&x),
            Err(PredictError::WidthMismatch {
                expected: 2,
                got: 5
            })
        ));
    }

    #[test]
    fn save_load_roundtrip_preserves_predictions_and_theta() {
        let model = trained_toy_model();
        let dir = tempfile::tempdir().unwrap();
        let path = dir.path().join("model.json");
        save_model(&model, &path).unwrap();
        let loaded = load_model(&path).unwrap();
        assert_eq!(loaded.gating.theta(), model.gating.theta());
        assert_eq!(loaded.trees, model.trees);
        let mut rng = ChaCha8Rng::seed_from_u64(6);
        let x = Array2::from_shape_fn((100, 2), |_| rng.random_range(-4.0..4.0));
        assert_eq!(loaded.predict(&x).unwrap(), model.predict(&x).unwrap());
    }

    #[test]
    fn save_twice_is_byte_identical() {
        let model = trained_toy_model();
        let dir = tempfile::tempdir().unwrap();
        let a = dir.path().join("a.json");
        let b = dir.path().join("b.json");
        save_model(&model, &a).unwrap();
        save_model(&model, &b).unwrap();
        assert_eq!(fs::read(a).unwrap(), fs::read(b).unwrap());
    }

    #[test]
    fn truncated_model_file_is_corrupt() {
        let model = trained_toy_model();
        let dir = tempfile::tempdir().unwrap();
        let path = dir.path().join("model.json");
        save_model(&model, &path).unwrap();
        let text = fs::read_to_string(&path).unwrap();
        fs::write(&path, &text[..text.len() / 2]).unwrap();
        assert!(matches!(load_model(&path), Err(ModelIoError::Corrupt(_))));
    }

    #[test]
    fn future_version_is_rejected() {
        let dir = tempfile::tempdir().unwrap();
        let path = dir.path().join("model.json");
        fs::write(&path, r#"{"format":"modt-model","version":999,"model":{}}"#).unwrap();
        assert!(matches!(
            load_model(&path),
            Err(ModelIoError::VersionMismatch {
                found: 999,
                expected: 1
            })
        ));
    }

    #[test]
    fn forest_is_deterministic_per_seed() {
        let ds = synth::three_bands(100, 8);
        let a = fit_random_forest(&ds.x, &ds.y, 5, Some(2), 42).unwrap();
        let b = fit_random_forest(&ds.x, &ds.y, 5, Some(2), 42).unwrap();
        assert_eq!(a.trees(), b.trees());
        let c = fit_random_forest(&ds.x, &ds.y, 1, Some(2), 43).unwrap();
        assert_eq!(c.n_trees(), 1);
    }

    #[test]
    fn forest_majority_vote_and_ties() {
        // Hand-built single-leaf trees voting (0, 0, 1) -> 0.
        let leaf = |class: usize| {
            let mut distribution = vec![0.0; 2];
            distribution[class] = 1.0;
            DecisionTree::from_parts(
                TreeNode::Leaf {
                    distribution,
                    majority_class: class,
                },
                None,
                2,
                1,
            )
        };
        let forest = RandomForest {
            trees: vec![leaf(0), leaf(0), leaf(1)],
            n_classes: 2,
            n_features: 1,
            max_depth: None,
        };
        let x = array![[0.0]];
        assert_eq!(rf_predict(&forest, &x).unwrap(), vec![0]);
        // Tie (one vote each) resolves to the lowest class index.
        let tied = RandomForest {
            trees: vec![leaf(1), leaf(0)],
            n_classes: 2,
            n_features: 1,
            max_depth: None,
        };
        assert_eq!(rf_predict(&tied, &x).unwrap(), vec![0]);
    }

    #[test]
    fn forest_vote_matches_hand_tally() {
        let ds = synth::three_bands(120, 4);
        let forest = fit_random_forest(&ds.x, &ds.y, 7, Some(3), 9).unwrap();
        let mut rng = ChaCha8Rng::seed_from_u64(10);
        let x = Array2::from_shape_fn((20, 2), |_| rng.random_range(-3.0..3.0));
        let pred = rf_predict(&forest, &x).unwrap();
        for (i, row) in x.outer_iter().enumerate() {
            let mut votes = [0usize; 2];
            for t in forest.trees() {
                votes[t.predict_class(row).unwrap()] += 1;
            }
            let expected = if votes[0] >= votes[1] { 0 } else { 1 };
            assert_eq!(pred[i], expected);
        }
    }

    #[test]
    fn unrestricted_forest_grows_to_purity_on_training_data() {
        let ds = synth::three_bands(150, 6);
        let forest = fit_random_forest(&ds.x, &ds.y, 30, None, 11).unwrap();
        // Bagged, so training accuracy is high but not necessarily 1.0.
        let acc = rf_evaluate(&forest, &ds).unwrap();
        assert!(acc > 0.9, "training accuracy {acc}");
    }

    #[test]
    fn forest_width_mismatch() {
        let ds = synth::three_bands(50, 6);
        let forest = fit_random_forest(&ds.x, &ds.y, 2, Some(1), 1).unwrap();
        let bad = Array2::zeros((2, 7));
        assert!(matches!(
            rf_predict(&forest, &bad),
            Err(TreeError::WidthMismatch { .. })
        ));
    }
}
