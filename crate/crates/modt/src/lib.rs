//! Mixture of decision trees (MoDT).
//!
//! An interpretable mixture-of-experts classifier: a linear softmax gating
//! function routes every input to exactly one depth-limited decision tree,
//! so each prediction is explained by one small tree plus one linear rule.
//! Training alternates between fitting gate-weighted trees (E-step) and
//! updating the gate parameters with a least-squares regression (M-step).
//!
//! The crate also ships the surrounding tooling: CSV ingestion with one-hot
//! encoding, decision-tree and random-forest baselines, random hyperparameter
//! search, a benchmark protocol, and SVG rendering of gating regions and
//! expert trees.

pub use ndarray;

pub mod data;
pub mod gating;
mod linalg;
pub mod predict;
pub mod search;
pub mod synth;
pub mod trainer;
pub mod tree;
pub mod viz;

pub use data::{
    append_bias, load_csv, one_hot_encode, train_test_split, BiasedMatrix, ColumnKind, DataError,
    Dataset, Encoder, RawDataset, Schema,
};
pub use gating::{
    estimate_expert_count, gate_input, gating_values, init_theta, select_expert,
    select_gating_features, FeatureSelection, GateMode, GatingError, GatingModel, GatingValues,
};
pub use predict::{
    evaluate, fit_random_forest, load_model, rf_predict, save_model, MoDTModel, ModelIoError,
    PredictError, RandomForest,
};
pub use search::{
    benchmark, random_search, BenchProtocol, BenchReport, BenchRow, GateFamily, SearchError,
    SearchResult, SearchSpace, TrialResult,
};
pub use trainer::{
    confidence_matrix, e_step, expectation, least_squares, m_step, train, ExpectationMatrix,
    GateSpec, IterationRecord, ModelSelection, TrainConfig, TrainError, TrainResult, TrainingTrace,
};
pub use tree::{fit_tree, gini, DecisionTree, TreeError, TreeNode};
pub use viz::{
    default_class_palette, default_region_palette, gate_region_grid, render_gating_plot,
    render_tree, GatePlotSpec, TreePlotSpec, VizError,
};
