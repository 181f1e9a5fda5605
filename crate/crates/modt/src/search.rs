//! Random hyperparameter search and the benchmark protocol: split the data
//! 75/25, search on the training side, keep the best configurations, retrain
//! each repeatedly, and report mean and standard deviation of the accuracy
//! per method alongside decision-tree and random-forest baselines.

use rand::Rng;
use rand::SeedableRng;
use rand_chacha::ChaCha8Rng;
use rayon::prelude::*;
use serde::{Deserialize, Serialize};
use thiserror::Error;

use crate::data::{train_test_split, DataError, Dataset};
use crate::gating::FeatureSelection;
use crate::predict::{
    evaluate, fit_random_forest, fit_tree_baseline, rf_evaluate, tree_evaluate,
};
use crate::trainer::{train, GateSpec, ModelSelection, TrainConfig, TrainError};

#[derive(Debug, Error)]
pub enum SearchError {
    #[error("invalid search arguments: {0}")]
    InvalidArgs(String),
    #[error("every trial failed; last error: {0}")]
    AllTrialsFailed(String),
    #[error(transparent)]
    Data(#[from] DataError),
    #[error(transparent)]
    Train(#[from] TrainError),
    #[error(transparent)]
    Tree(#[from] crate::tree::TreeError),
    #[error(transparent)]
    Predict(#[from] crate::predict::PredictError),
}

/// Which gate the search is tuning (the 2D search also samples the
/// feature-selection method).
#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum GateFamily {
    Full,
    TwoD,
}

/// The sampled hyperparameter dimensions. Expert count, tree depth, and the
/// gate family stay fixed across a search.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct SearchSpace {
    pub gate: GateFamily,
    pub n_experts: usize,
    pub max_depth: usize,
    /// Learning rate, sampled log-uniformly from this inclusive range.
    pub gamma_range: (f64, f64),
    /// Iteration count, sampled uniformly from this inclusive range.
    pub iterations_range: (usize, usize),
    /// Candidate init seeds; `None` draws seeds freely.
    pub init_seeds: Option<Vec<u64>>,
    pub model_selections: Vec<ModelSelection>,
    /// Feature-selection methods to sample from in 2D mode.
    pub selection_methods: Vec<FeatureSelection>,
}

impl SearchSpace {
    pub fn with_gate(gate: GateFamily) -> SearchSpace {
        SearchSpace {
            gate,
            ..SearchSpace::default()
        }
    }

    fn validate(&self) -> Result<(), SearchError> {
        if self.n_experts < 1 || self.max_depth < 1 {
            return Err(SearchError::InvalidArgs(
                "experts and depth must be at least 1".into(),
            ));
        }
        let (glo, ghi) = self.gamma_range;
        if !(glo > 0.0 && ghi >= glo) {
            return Err(SearchError::InvalidArgs(format!(
                "bad gamma range ({glo}, {ghi})"
            )));
        }
        let (ilo, ihi) = self.iterations_range;
        if ilo < 1 || ihi < ilo {
            return Err(SearchError::InvalidArgs(format!(
                "bad iterations range ({ilo}, {ihi})"
            )));
        }
        if self.model_selections.is_empty() {
            return Err(SearchError::InvalidArgs("no model-selection policies".into()));
        }
        if self.gate == GateFamily::TwoD && self.selection_methods.is_empty() {
            return Err(SearchError::InvalidArgs(
                "2D search needs at least one feature-selection method".into(),
            ));
        }
        if self.init_seeds.as_ref().is_some_and(|s| s.is_empty()) {
            return Err(SearchError::InvalidArgs("empty init seed list".into()));
        }
        Ok(())
    }

    fn sample(&self, rng: &mut ChaCha8Rng) -> TrainConfig {
        let (glo, ghi) = self.gamma_range;
        let gamma = (rng.random_range(glo.ln()..=ghi.ln())).exp();
        let (ilo, ihi) = self.iterations_range;
        let iterations = rng.random_range(ilo..=ihi);
        let seed = match &self.init_seeds {
            Some(seeds) => seeds[rng.random_range(0..seeds.len())],
            None => rng.random(),
        };
        let model_selection = self.model_selections[rng.random_range(0..self.model_selections.len())];
        let gate = match self.gate {
            GateFamily::Full => GateSpec::Full,
            GateFamily::TwoD => {
                let m = self.selection_methods[rng.random_range(0..self.selection_methods.len())];
                GateSpec::TwoD(m)
            }
        };
        TrainConfig {
            n_experts: self.n_experts,
            max_depth: self.max_depth,
            gate,
            gamma,
            iterations,
            seed,
            model_selection,
            early_stop: false,
        }
    }

    /// True when `config` could have been drawn from this space.
    pub fn contains(&self, config: &TrainConfig) -> bool {
        let gate_ok = match (self.gate, &config.gate) {
            (GateFamily::Full, GateSpec::Full) => true,
            (GateFamily::TwoD, GateSpec::TwoD(m)) => self.selection_methods.contains(m),
            _ => false,
        };
        gate_ok
            && config.n_experts == self.n_experts
            && config.max_depth == self.max_depth
            && config.gamma >= self.gamma_range.0 * (1.0 - 1e-12)
            && config.gamma <= self.gamma_range.1 * (1.0 + 1e-12)
            && config.iterations >= self.iterations_range.0
            && config.iterations <= self.iterations_range.1
            && self.model_selections.contains(&config.model_selection)
            && self
                .init_seeds
                .as_ref()
                .is_none_or(|s| s.contains(&config.seed))
    }
}

impl Default for SearchSpace {
    fn default() -> Self {
        SearchSpace {
            gate: GateFamily::TwoD,
            n_experts: 3,
            max_depth: 2,
            gamma_range: (1e-2, 1e1),
            iterations_range: (10, 100),
            init_seeds: None,
            model_selections: vec![
                ModelSelection::BestTrainingAccuracy,
                ModelSelection::LastIteration,
            ],
            selection_methods: vec![
                FeatureSelection::TreeImportance,
                FeatureSelection::LinearImportance,
                FeatureSelection::Pca,
            ],
        }
    }
}

/// One scored trial.
#[derive(Debug, Clone)]
pub struct TrialResult {
    pub trial_index: usize,
    pub config: TrainConfig,
    /// Validation accuracy on the internal 80/20 sub-split.
    pub score: f64,
    /// 1-based rank by score (ties keep the earlier trial first).
    pub rank: usize,
}

/// All scored trials plus the top-k slice.
#[derive(Debug, Clone)]
pub struct SearchResult {
    /// The `k_best` highest-scoring trials, best first.
    pub best: Vec<TrialResult>,
    /// Every completed trial in trial order, with ranks filled in.
    pub trials: Vec<TrialResult>,
}

impl SearchResult {
    /// Trial log as CSV, one row per completed trial.
    pub fn trial_log_csv(&self) -> String {
        let mut out =
            String::from("trial,gate,gamma,iterations,init_seed,model_selection,score,rank\n");
        for t in &self.trials {
            let (gate, method) = match &t.config.gate {
                GateSpec::Full => ("full".to_string(), String::new()),
                GateSpec::TwoD(m) => ("2d".to_string(), format!("{m:?}")),
            };
            let gate_desc = if method.is_empty() {
                gate
            } else {
                format!("{gate}:{method}")
            };
            out.push_str(&format!(
                "{},{},{},{},{},{:?},{},{}\n",
                t.trial_index,
                gate_desc,
                t.config.gamma,
                t.config.iterations,
                t.config.seed,
                t.config.model_selection,
                t.score,
                t.rank
            ));
        }
        out
    }
}

/// Samples `n_trials` configurations, scores each by training on an internal
/// 80/20 sub-split of `train_set`, and returns the `k_best` best by
/// validation accuracy. A failed trial is logged and skipped; it aborts only
/// itself, not the search.
pub fn random_search(
    train_set: &Dataset,
    space: &SearchSpace,
    n_trials: usize,
    k_best: usize,
    seed: u64,
) -> Result<SearchResult, SearchError> {
    if n_trials < k_best || k_best < 1 {
        return Err(SearchError::InvalidArgs(format!(
            "need n_trials >= k_best >= 1, got {n_trials} and {k_best}"
        )));
    }
    space.validate()?;
    let mut rng = ChaCha8Rng::seed_from_u64(seed);
    let split_seed: u64 = rng.random();
    let (sub_train, sub_val) = train_test_split(train_set, 0.2, split_seed)?;
    let configs: Vec<TrainConfig> = (0..n_trials).map(|_| space.sample(&mut rng)).collect();

    let outcomes: Vec<Result<f64, TrainError>> = configs
        .par_iter()
        .map(|config| {
            let result = train(&sub_train, config)?;
            evaluate(&result.model, &sub_val).map_err(|e| TrainError::ShapeMismatch(e.to_string()))
        })
        .collect();

    let mut trials = Vec::with_capacity(n_trials);
    let mut last_error = None;
    for (trial_index, (config, outcome)) in configs.into_iter().zip(outcomes).enumerate() {
        match outcome {
            Ok(score) => trials.push(TrialResult {
                trial_index,
                config,
                score,
                rank: 0,
            }),
            Err(err) => {
                log::warn!("trial {trial_index} failed: {err}");
                last_error = Some(err.to_string());
            }
        }
    }
    if trials.is_empty() {
        return Err(SearchError::AllTrialsFailed(
            last_error.unwrap_or_else(|| "no trials ran".into()),
        ));
    }

    let mut order: Vec<usize> = (0..trials.len()).collect();
    order.sort_by(|&a, &b| {
        trials[b]
            .score
            .partial_cmp(&trials[a].score)
            .unwrap_or(std::cmp::Ordering::Equal)
            .then(trials[a].trial_index.cmp(&trials[b].trial_index))
    });
    for (rank, &i) in order.iter().enumerate() {
        trials[i].rank = rank + 1;
    }
    let best = order
        .iter()
        .take(k_best)
        .map(|&i| trials[i].clone())
        .collect();
    Ok(SearchResult { best, trials })
}

// --- benchmark protocol -----------------------------------------------------

/// Methods the benchmark grid can include.
#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub enum BenchMethod {
    MoDT2d,
    MoDTFull,
    /// Single CART of the given depth.
    DecisionTree(usize),
    /// Forest matched to the mixture's complexity (depth 2, 3 trees).
    RandomForestMatched,
    /// Default forest: 100 trees, unrestricted depth.
    RandomForestDefault,
}

impl BenchMethod {
    pub fn label(&self) -> String {
        match self {
            BenchMethod::MoDT2d => "MoDT 2D".into(),
            BenchMethod::MoDTFull => "MoDT FG".into(),
            BenchMethod::DecisionTree(d) => format!("DT d={d}"),
            BenchMethod::RandomForestMatched => "RF d=2 e=3".into(),
            BenchMethod::RandomForestDefault => "RF d=* e=100".into(),
        }
    }

    pub fn full_grid() -> Vec<BenchMethod> {
        vec![
            BenchMethod::MoDT2d,
            BenchMethod::MoDTFull,
            BenchMethod::DecisionTree(2),
            BenchMethod::DecisionTree(3),
            BenchMethod::DecisionTree(4),
            BenchMethod::RandomForestMatched,
            BenchMethod::RandomForestDefault,
        ]
    }
}

/// Benchmark settings. The defaults run a desk-scale version of the full
/// protocol (100 trials and 20 repetitions instead of 500 and 100).
#[derive(Debug, Clone)]
pub struct BenchProtocol {
    pub test_fraction: f64,
    pub n_trials: usize,
    pub k_best: usize,
    pub n_reps: usize,
    pub n_experts: usize,
    pub max_depth: usize,
    pub seed: u64,
    pub methods: Vec<BenchMethod>,
}

impl Default for BenchProtocol {
    fn default() -> Self {
        BenchProtocol {
            test_fraction: 0.25,
            n_trials: 100,
            k_best: 10,
            n_reps: 20,
            n_experts: 3,
            max_depth: 2,
            seed: 0,
            methods: BenchMethod::full_grid(),
        }
    }
}

/// One line of the benchmark report.
#[derive(Debug, Clone)]
pub struct BenchRow {
    pub method: String,
    pub train_mean: f64,
    pub train_std: f64,
    pub test_mean: f64,
    pub test_std: f64,
}

#[derive(Debug, Clone)]
pub struct BenchReport {
    pub dataset: String,
    pub rows: Vec<BenchRow>,
    /// Combined search trial log across the mixture methods, as CSV with a
    /// leading method column.
    pub trial_log_csv: String,
}

impl BenchReport {
    pub fn row(&self, method: &str) -> Option<&BenchRow> {
        self.rows.iter().find(|r| r.method == method)
    }

    pub fn to_csv_string(&self) -> String {
        let mut out = String::from("method,train_mean,train_std,test_mean,test_std\n");
        for r in &self.rows {
            out.push_str(&format!(
                "{},{:.4},{:.4},{:.4},{:.4}\n",
                r.method, r.train_mean, r.train_std, r.test_mean, r.test_std
            ));
        }
        out
    }

    pub fn to_markdown(&self) -> String {
        let mut out = format!("### {}\n\n", self.dataset);
        out.push_str("| method | training | test |\n|---|---|---|\n");
        for r in &self.rows {
            out.push_str(&format!(
                "| {} | {:.2}±{:.2} | {:.2}±{:.2} |\n",
                r.method, r.train_mean, r.train_std, r.test_mean, r.test_std
            ));
        }
        out
    }
}

fn mean_std(samples: &[f64]) -> (f64, f64) {
    let n = samples.len() as f64;
    let mean = samples.iter().sum::<f64>() / n;
    let std = if samples.len() > 1 {
        (samples.iter().map(|s| (s - mean) * (s - mean)).sum::<f64>() / (n - 1.0)).sqrt()
    } else {
        0.0
    };
    (mean, std)
}

fn rep_seed(base: u64, rep: usize) -> u64 {
    base.wrapping_add((rep as u64 + 1).wrapping_mul(0x9E37_79B9_7F4A_7C15))
}

/// Runs the full protocol on one dataset: 75/25 split, per-method search
/// and/or repeated retraining, mean and standard deviation per method.
pub fn benchmark(
    name: &str,
    dataset: &Dataset,
    protocol: &BenchProtocol,
) -> Result<BenchReport, SearchError> {
    let mut rng = ChaCha8Rng::seed_from_u64(protocol.seed);
    let split_seed: u64 = rng.random();
    let search_seed: u64 = rng.random();
    let forest_seed: u64 = rng.random();
    let (train_set, test_set) = train_test_split(dataset, protocol.test_fraction, split_seed)?;

    let mut rows = Vec::with_capacity(protocol.methods.len());
    let mut trial_log_csv =
        String::from("method,trial,gate,gamma,iterations,init_seed,model_selection,score,rank\n");
    for method in &protocol.methods {
        let (train_scores, test_scores) = match method {
            BenchMethod::MoDT2d | BenchMethod::MoDTFull => {
                // 2D gating needs at least two features.
                if matches!(method, BenchMethod::MoDT2d) && dataset.n_features() < 2 {
                    log::warn!("skipping {} (needs >= 2 features)", method.label());
                    continue;
                }
                let family = if matches!(method, BenchMethod::MoDT2d) {
                    GateFamily::TwoD
                } else {
                    GateFamily::Full
                };
                let space = SearchSpace {
                    gate: family,
                    n_experts: protocol.n_experts,
                    max_depth: protocol.max_depth,
                    ..SearchSpace::default()
                };
                let result = random_search(
                    &train_set,
                    &space,
                    protocol.n_trials,
                    protocol.k_best,
                    search_seed,
                )?;
                for line in result.trial_log_csv().lines().skip(1) {
                    trial_log_csv.push_str(&format!("{},{line}\n", method.label()));
                }
                let jobs: Vec<(TrainConfig, u64)> = result
                    .best
                    .iter()
                    .flat_map(|t| {
                        (0..protocol.n_reps)
                            .map(|rep| (t.config.clone(), rep_seed(t.config.seed, rep)))
                            .collect::<Vec<_>>()
                    })
                    .collect();
                let scores: Vec<Result<(f64, f64), SearchError>> = jobs
                    .par_iter()
                    .map(|(config, seed)| {
                        let config = TrainConfig {
                            seed: *seed,
                            ..config.clone()
                        };
                        let trained = train(&train_set, &config)?;
                        let train_acc = evaluate(&trained.model, &train_set)?;
                        let test_acc = evaluate(&trained.model, &test_set)?;
                        Ok((train_acc, test_acc))
                    })
                    .collect();
                let mut train_scores = Vec::with_capacity(scores.len());
                let mut test_scores = Vec::with_capacity(scores.len());
                for s in scores {
                    let (tr, te) = s?;
                    train_scores.push(tr);
                    test_scores.push(te);
                }
                (train_scores, test_scores)
            }
            BenchMethod::DecisionTree(depth) => {
                // CART induction is deterministic, so one fit stands in for
                // every repetition.
                let tree = fit_tree_baseline(&train_set, *depth)?;
                (
                    vec![tree_evaluate(&tree, &train_set)?],
                    vec![tree_evaluate(&tree, &test_set)?],
                )
            }
            BenchMethod::RandomForestMatched | BenchMethod::RandomForestDefault => {
                let (n_trees, depth) = if matches!(method, BenchMethod::RandomForestMatched) {
                    (protocol.n_experts, Some(protocol.max_depth))
                } else {
                    (100, None)
                };
                let reps: Vec<Result<(f64, f64), SearchError>> = (0..protocol.n_reps)
                    .into_par_iter()
                    .map(|rep| {
                        let forest = fit_random_forest(
                            &train_set.x,
                            &train_set.y,
                            n_trees,
                            depth,
                            rep_seed(forest_seed, rep),
                        )?;
                        Ok((
                            rf_evaluate(&forest, &train_set)?,
                            rf_evaluate(&forest, &test_set)?,
                        ))
                    })
                    .collect();
                let mut train_scores = Vec::with_capacity(reps.len());
                let mut test_scores = Vec::with_capacity(reps.len());
                for r in reps {
                    let (tr, te) = r?;
                    train_scores.push(tr);
                    test_scores.push(te);
                }
                (train_scores, test_scores)
            }
        };
        let (train_mean, train_std) = mean_std(&train_scores);
        let (test_mean, test_std) = mean_std(&test_scores);
        rows.push(BenchRow {
            method: method.label(),
            train_mean,
            train_std,
            test_mean,
            test_std,
        });
    }
    Ok(BenchReport {
        dataset: name.to_string(),
        rows,
        trial_log_csv,
    })
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::synth;

    #[test]
    fn single_trial_search_returns_it() {
        let ds = synth::three_bands(120, 1);
        let space = SearchSpace {
            gate: GateFamily::Full,
            iterations_range: (5, 10),
            ..SearchSpace::default()
        };
        let result = random_search(&ds, &space, 1, 1, 7).unwrap();
        assert_eq!(result.best.len(), 1);
        assert_eq!(result.trials.len(), 1);
        assert_eq!(result.best[0].rank, 1);
        assert!((0.0..=1.0).contains(&result.best[0].score));
    }

    #[test]
    fn collapsed_space_yields_identical_configs_and_scores() {
        let ds = synth::three_bands(120, 2);
        let space = SearchSpace {
            gate: GateFamily::Full,
            gamma_range: (2.0, 2.0),
            iterations_range: (8, 8),
            init_seeds: Some(vec![42]),
            model_selections: vec![ModelSelection::BestTrainingAccuracy],
            ..SearchSpace::default()
        };
        let result = random_search(&ds, &space, 5, 5, 9).unwrap();
        assert_eq!(result.trials.len(), 5);
        let first = &result.trials[0];
        for t in &result.trials {
            assert_eq!(t.config, first.config);
            assert_eq!(t.score, first.score);
        }
    }

    #[test]
    fn search_is_deterministic_and_stays_in_space() {
        let ds = synth::three_bands(150, 3);
        let space = SearchSpace {
            gate: GateFamily::TwoD,
            iterations_range: (5, 20),
            ..SearchSpace::default()
        };
        let a = random_search(&ds, &space, 8, 3, 11).unwrap();
        let b = random_search(&ds, &space, 8, 3, 11).unwrap();
        assert_eq!(a.trials.len(), b.trials.len());
        for (x, y) in a.trials.iter().zip(&b.trials) {
            assert_eq!(x.config, y.config);
            assert_eq!(x.score, y.score);
        }
        for t in &a.trials {
            assert!(space.contains(&t.config), "config outside space: {t:?}");
        }
        // Ranks are a permutation of 1..=n.
        let mut ranks: Vec<usize> = a.trials.iter().map(|t| t.rank).collect();
        ranks.sort_unstable();
        assert_eq!(ranks, (1..=a.trials.len()).collect::<Vec<_>>());
    }

    #[test]
    fn best_score_at_least_median() {
        let ds = synth::three_bands(150, 4);
        let space = SearchSpace {
            gate: GateFamily::Full,
            iterations_range: (5, 15),
            ..SearchSpace::default()
        };
        let result = random_search(&ds, &space, 12, 3, 5).unwrap();
        let mut scores: Vec<f64> = result.trials.iter().map(|t| t.score).collect();
        scores.sort_by(|a, b| a.partial_cmp(b).unwrap());
        let median = scores[scores.len() / 2];
        assert!(result.best[0].score >= median);
    }

    #[test]
    fn search_rejects_bad_arguments() {
        let ds = synth::three_bands(60, 5);
        let space = SearchSpace::default();
        assert!(matches!(
            random_search(&ds, &space, 2, 5, 1),
            Err(SearchError::InvalidArgs(_))
        ));
        let bad = SearchSpace {
            gamma_range: (-1.0, 1.0),
            ..SearchSpace::default()
        };
        assert!(matches!(
            random_search(&ds, &bad, 5, 1, 1),
            Err(SearchError::InvalidArgs(_))
        ));
    }

    #[test]
    fn bench_report_covers_requested_grid() {
        let ds = synth::three_bands(200, 6);
        let protocol = BenchProtocol {
            n_trials: 4,
            k_best: 2,
            n_reps: 2,
            seed: 3,
            ..BenchProtocol::default()
        };
        let report = benchmark("bands", &ds, &protocol).unwrap();
        assert_eq!(report.rows.len(), 7);
        for row in &report.rows {
            assert!((0.0..=1.0).contains(&row.train_mean), "{row:?}");
            assert!((0.0..=1.0).contains(&row.test_mean), "{row:?}");
            assert!(row.train_std >= 0.0 && row.test_std >= 0.0);
        }
        let csv = report.to_csv_string();
        assert_eq!(csv.lines().count(), 8);
        let md = report.to_markdown();
        assert!(md.contains("| MoDT 2D |"));
        assert!(md.contains("| RF d=* e=100 |"));
    }
}
