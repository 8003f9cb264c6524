//! Random forest over affect features and the evaluation report.
//!
//! Trees are unpruned CART classifiers with Gini splits, trained on bootstrap
//! samples with `m` candidate features drawn per node. Each tree gets its own
//! RNG stream derived from the forest seed and the tree index, so the result
//! does not depend on how trees are scheduled across threads.

use std::collections::HashSet;
use std::fmt::{self, Write as _};
use std::fs;
use std::path::Path;

use log::warn;
use rand::seq::SliceRandom;
use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;
use serde::{Deserialize, Serialize};
use thiserror::Error;

use crate::status::SystemStatus;
use crate::{derive_seed, par};

#[derive(Debug, Error)]
pub enum ModelError {
    #[error("need at least {need} labeled rows, got {got}")]
    TooFewRows { need: usize, got: usize },
    #[error("training data has a single label ({0}); need at least two")]
    SingleLabel(SystemStatus),
    #[error("row {0} has no label")]
    Unlabeled(usize),
    #[error("invalid forest parameters: {0}")]
    Params(String),
    #[error("feature schema mismatch: expected {expected} values, got {got}")]
    SchemaMismatch { expected: usize, got: usize },
    #[error("feature names differ: model has [{model}], data has [{data}]")]
    SchemaNames { model: String, data: String },
    #[error("{0} predictions but {1} true labels")]
    LengthMismatch(usize, usize),
    #[error("nothing to evaluate")]
    Empty,
    #[error("label {0} is not in the class set")]
    UnknownLabel(SystemStatus),
    #[error("need 2 <= folds <= {n}, got {k}")]
    Folds { k: usize, n: usize },
    #[error("rows passed to oob_error ({got}) are not the training rows ({expected})")]
    OobRows { expected: usize, got: usize },
    #[error("schema: {0}")]
    Schema(String),
    #[error("model file: {0}")]
    Format(String),
    #[error("{path}: {source}")]
    Io {
        path: String,
        #[source]
        source: std::io::Error,
    },
}

const AFFECT: &[&str] = &[
    "anger",
    "disgust",
    "fear",
    "joy",
    "sadness",
    "openness",
    "conscientiousness",
    "extraversion",
    "agreeableness",
    "neuroticism",
];

/// Ordered feature names. Emotion and trait columns must lie in [0,1] and
/// `age` must be positive; other names only need finite values.
#[derive(Debug, Clone, PartialEq, Eq, Serialize, Deserialize)]
pub struct FeatureSchema {
    names: Vec<String>,
}

impl Default for FeatureSchema {
    fn default() -> Self {
        FeatureSchema {
            names: [
                "anger",
                "disgust",
                "joy",
                "sadness",
                "conscientiousness",
                "agreeableness",
                "neuroticism",
                "age",
            ]
            .iter()
            .map(|s| s.to_string())
            .collect(),
        }
    }
}

impl FeatureSchema {
    pub fn new(names: Vec<String>) -> Result<Self, ModelError> {
        if names.is_empty() {
            return Err(ModelError::Schema("no features".into()));
        }
        let mut seen = HashSet::new();
        for n in &names {
            if n.is_empty() || n == "label" {
                return Err(ModelError::Schema(format!("invalid feature name {n:?}")));
            }
            if !seen.insert(n.as_str()) {
                return Err(ModelError::Schema(format!("duplicate feature {n:?}")));
            }
        }
        Ok(FeatureSchema { names })
    }

    /// Comma separated names, e.g. `anger,joy,age`.
    pub fn parse(list: &str) -> Result<Self, ModelError> {
        Self::new(list.split(',').map(|s| s.trim().to_string()).collect())
    }

    pub fn names(&self) -> &[String] {
        &self.names
    }

    pub fn len(&self) -> usize {
        self.names.len()
    }

    pub fn is_empty(&self) -> bool {
        self.names.is_empty()
    }

    pub fn validate(&self, row: &FeatureRow) -> Result<(), String> {
        if row.values.len() != self.names.len() {
            return Err(format!(
                "expected {} feature values, got {}",
                self.names.len(),
                row.values.len()
            ));
        }
        for (name, &v) in self.names.iter().zip(&row.values) {
            if !v.is_finite() {
                return Err(format!("{name} is not finite"));
            }
            if AFFECT.contains(&name.as_str()) && !(0.0..=1.0).contains(&v) {
                return Err(format!("{name} = {v} outside [0,1]"));
            }
            if name == "age" && v <= 0.0 {
                return Err(format!("age must be positive, got {v}"));
            }
        }
        Ok(())
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct FeatureRow {
    pub values: Vec<f64>,
    pub label: Option<SystemStatus>,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct ForestParams {
    pub n_trees: usize,
    /// Features tried per split; `None` means ceil(sqrt(M)).
    pub m: Option<usize>,
    pub seed: u64,
    pub min_samples_leaf: usize,
}

impl Default for ForestParams {
    fn default() -> Self {
        ForestParams {
            n_trees: 100,
            m: None,
            seed: 1,
            min_samples_leaf: 1,
        }
    }
}

impl ForestParams {
    /// Resolved `m` for `n_features` columns.
    pub fn features_per_split(&self, n_features: usize) -> Result<usize, ModelError> {
        if n_features < 2 {
            return Err(ModelError::Params(format!(
                "need at least 2 features, got {n_features}"
            )));
        }
        let m = self
            .m
            .unwrap_or_else(|| ((n_features as f64).sqrt().ceil() as usize).min(n_features - 1));
        if m == 0 || m >= n_features {
            return Err(ModelError::Params(format!(
                "m must satisfy 1 <= m <= {}, got {m}",
                n_features - 1
            )));
        }
        Ok(m)
    }

    fn check(&self, n_features: usize) -> Result<usize, ModelError> {
        if self.n_trees == 0 {
            return Err(ModelError::Params("n_trees must be positive".into()));
        }
        if self.min_samples_leaf == 0 {
            return Err(ModelError::Params("min_samples_leaf must be positive".into()));
        }
        self.features_per_split(n_features)
    }
}

/// One tree in array form. Node 0 is the root; `feature[i] < 0` marks a leaf
/// whose class index is `value[i]`. Rows with `x[feature] <= threshold` go left.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct Tree {
    pub feature: Vec<i32>,
    pub threshold: Vec<f64>,
    pub left: Vec<u32>,
    pub right: Vec<u32>,
    pub value: Vec<u8>,
    /// Training rows absent from this tree's bootstrap sample, ascending.
    pub out_of_bag: Vec<u32>,
}

impl Tree {
    fn leaf_of(&self, x: &[f64]) -> usize {
        let mut i = 0;
        while self.feature[i] >= 0 {
            let f = self.feature[i] as usize;
            i = if x[f] <= self.threshold[i] {
                self.left[i]
            } else {
                self.right[i]
            } as usize;
        }
        i
    }

    pub fn predict_index(&self, x: &[f64]) -> usize {
        self.value[self.leaf_of(x)] as usize
    }

    pub fn node_count(&self) -> usize {
        self.feature.len()
    }

    fn push_leaf(&mut self, class: usize) -> usize {
        self.feature.push(-1);
        self.threshold.push(0.0);
        self.left.push(0);
        self.right.push(0);
        self.value.push(class as u8);
        self.feature.len() - 1
    }
}

pub const FORMAT_NAME: &str = "pmsys-forest";
pub const FORMAT_VERSION: u32 = 1;

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct Forest {
    pub format: String,
    pub version: u32,
    pub schema: FeatureSchema,
    /// Classes seen in training, ascending; tree leaves index into this.
    pub labels: Vec<SystemStatus>,
    pub params: ForestParams,
    pub n_train: usize,
    pub trees: Vec<Tree>,
}

#[derive(Debug, Clone, PartialEq, Serialize)]
pub struct Prediction {
    pub label: SystemStatus,
    /// Vote share per class of the forest, aligned with `Forest::labels`.
    pub fractions: Vec<f64>,
}

struct TrainSet<'a> {
    x: Vec<&'a [f64]>,
    y: Vec<usize>,
    n_classes: usize,
}

fn gini_sum(counts: &[usize], n: usize) -> f64 {
    // n * gini = n - sum(c^2) / n
    let n_f = n as f64;
    n_f - counts.iter().map(|&c| (c * c) as f64).sum::<f64>() / n_f
}

fn plurality(counts: &[usize]) -> usize {
    // first maximum, so ties go to the smaller label
    let mut best = 0;
    for (k, &c) in counts.iter().enumerate() {
        if c > counts[best] {
            best = k;
        }
    }
    best
}

struct SplitChoice {
    feature: usize,
    threshold: f64,
    left: Vec<usize>,
    right: Vec<usize>,
}

fn best_split_on(
    data: &TrainSet<'_>,
    samples: &[usize],
    feature: usize,
    min_leaf: usize,
    order: &mut Vec<usize>,
) -> Option<(f64, usize, f64)> {
    order.clear();
    order.extend_from_slice(samples);
    order.sort_by(|&a, &b| {
        data.x[a][feature]
            .partial_cmp(&data.x[b][feature])
            .expect("finite features")
    });
    let n = order.len();
    let mut left = vec![0usize; data.n_classes];
    let mut right = vec![0usize; data.n_classes];
    for &s in order.iter() {
        right[data.y[s]] += 1;
    }
    // (impurity, split position, threshold)
    let mut best: Option<(f64, usize, f64)> = None;
    for i in 0..n - 1 {
        let s = order[i];
        left[data.y[s]] += 1;
        right[data.y[s]] -= 1;
        let nl = i + 1;
        let (a, b) = (data.x[s][feature], data.x[order[i + 1]][feature]);
        if a == b || nl < min_leaf || n - nl < min_leaf {
            continue;
        }
        let imp = gini_sum(&left, nl) + gini_sum(&right, n - nl);
        if best.is_none_or(|(bi, _, _)| imp < bi) {
            best = Some((imp, nl, a));
        }
    }
    best
}

fn choose_split(
    data: &TrainSet<'_>,
    samples: &[usize],
    m: usize,
    min_leaf: usize,
    rng: &mut ChaCha8Rng,
) -> Option<SplitChoice> {
    let n_features = data.x[0].len();
    let mut features: Vec<usize> = (0..n_features).collect();
    features.shuffle(rng);
    let mut order = Vec::with_capacity(samples.len());
    let mut best: Option<(f64, usize, usize, f64)> = None;
    // keep drawing past m while no usable split has been found
    for (visited, &f) in features.iter().enumerate() {
        if visited >= m && best.is_some() {
            break;
        }
        if let Some((imp, pos, thr)) = best_split_on(data, samples, f, min_leaf, &mut order) {
            if best.is_none_or(|(bi, _, _, _)| imp < bi) {
                best = Some((imp, f, pos, thr));
            }
        }
    }
    let (_, feature, _, threshold) = best?;
    let (left, right): (Vec<usize>, Vec<usize>) = samples
        .iter()
        .partition(|&&s| data.x[s][feature] <= threshold);
    Some(SplitChoice {
        feature,
        threshold,
        left,
        right,
    })
}

fn grow_tree(data: &TrainSet<'_>, m: usize, min_leaf: usize, seed: u64) -> Tree {
    let mut rng = ChaCha8Rng::seed_from_u64(seed);
    let n = data.y.len();
    let mut in_bag = vec![false; n];
    let bootstrap: Vec<usize> = (0..n)
        .map(|_| {
            let i = rng.random_range(0..n);
            in_bag[i] = true;
            i
        })
        .collect();
    let mut tree = Tree {
        feature: Vec::new(),
        threshold: Vec::new(),
        left: Vec::new(),
        right: Vec::new(),
        value: Vec::new(),
        out_of_bag: (0..n).filter(|&i| !in_bag[i]).map(|i| i as u32).collect(),
    };

    // (node index, samples); node index is patched into the parent on creation
    let root = tree.push_leaf(0);
    let mut stack = vec![(root, bootstrap)];
    while let Some((node, samples)) = stack.pop() {
        let mut counts = vec![0usize; data.n_classes];
        for &s in &samples {
            counts[data.y[s]] += 1;
        }
        tree.value[node] = plurality(&counts) as u8;
        let pure = counts.iter().filter(|&&c| c > 0).count() <= 1;
        if pure || samples.len() < 2 * min_leaf {
            continue;
        }
        let Some(split) = choose_split(data, &samples, m, min_leaf, &mut rng) else {
            continue;
        };
        let l = tree.push_leaf(0);
        let r = tree.push_leaf(0);
        tree.feature[node] = split.feature as i32;
        tree.threshold[node] = split.threshold;
        tree.left[node] = l as u32;
        tree.right[node] = r as u32;
        stack.push((r, split.right));
        stack.push((l, split.left));
    }
    tree
}

/// Fit a forest on labeled rows.
pub fn train_forest(
    rows: &[FeatureRow],
    schema: &FeatureSchema,
    params: &ForestParams,
) -> Result<Forest, ModelError> {
    let m = params.check(schema.len())?;
    if rows.len() < 10 {
        return Err(ModelError::TooFewRows {
            need: 10,
            got: rows.len(),
        });
    }
    let mut truth = Vec::with_capacity(rows.len());
    for (i, r) in rows.iter().enumerate() {
        if r.values.len() != schema.len() {
            return Err(ModelError::SchemaMismatch {
                expected: schema.len(),
                got: r.values.len(),
            });
        }
        schema.validate(r).map_err(ModelError::Schema)?;
        truth.push(r.label.ok_or(ModelError::Unlabeled(i))?);
    }
    let mut labels: Vec<SystemStatus> = truth.clone();
    labels.sort();
    labels.dedup();
    if labels.len() < 2 {
        return Err(ModelError::SingleLabel(labels[0]));
    }
    let data = TrainSet {
        x: rows.iter().map(|r| r.values.as_slice()).collect(),
        y: truth
            .iter()
            .map(|t| labels.binary_search(t).expect("label present"))
            .collect(),
        n_classes: labels.len(),
    };
    let trees = par::map_range(params.n_trees, |t| {
        grow_tree(&data, m, params.min_samples_leaf, derive_seed(params.seed, t as u64))
    });
    Ok(Forest {
        format: FORMAT_NAME.into(),
        version: FORMAT_VERSION,
        schema: schema.clone(),
        labels,
        params: params.clone(),
        n_train: rows.len(),
        trees,
    })
}

fn vote(labels: &[SystemStatus], votes: &[usize]) -> Prediction {
    let total: usize = votes.iter().sum();
    Prediction {
        label: labels[plurality(votes)],
        fractions: votes.iter().map(|&v| v as f64 / total as f64).collect(),
    }
}

impl Forest {
    pub fn predict(&self, x: &[f64]) -> Result<Prediction, ModelError> {
        if x.len() != self.schema.len() {
            return Err(ModelError::SchemaMismatch {
                expected: self.schema.len(),
                got: x.len(),
            });
        }
        let mut votes = vec![0usize; self.labels.len()];
        for t in &self.trees {
            votes[t.predict_index(x)] += 1;
        }
        Ok(vote(&self.labels, &votes))
    }

    pub fn predict_batch(&self, rows: &[FeatureRow]) -> Result<Vec<Prediction>, ModelError> {
        par::map_slice(rows, |r| self.predict(&r.values))
            .into_iter()
            .collect()
    }

    /// Vote fractions spread over all four statuses.
    pub fn distribution(&self, p: &Prediction) -> Vec<f64> {
        SystemStatus::ALL
            .iter()
            .map(|s| {
                self.labels
                    .iter()
                    .position(|l| l == s)
                    .map_or(0.0, |i| p.fractions[i])
            })
            .collect()
    }

    pub fn ensure_schema(&self, schema: &FeatureSchema) -> Result<(), ModelError> {
        if &self.schema != schema {
            return Err(ModelError::SchemaNames {
                model: self.schema.names().join(","),
                data: schema.names().join(","),
            });
        }
        Ok(())
    }

    pub fn to_json(&self) -> String {
        serde_json::to_string(self).expect("forest serializes")
    }

    pub fn from_json(text: &str) -> Result<Self, ModelError> {
        let header: serde_json::Value =
            serde_json::from_str(text).map_err(|e| ModelError::Format(e.to_string()))?;
        if header.get("format").and_then(|v| v.as_str()) != Some(FORMAT_NAME) {
            return Err(ModelError::Format(format!("not a {FORMAT_NAME} file")));
        }
        match header.get("version").and_then(|v| v.as_u64()) {
            Some(v) if v == FORMAT_VERSION as u64 => {}
            other => {
                return Err(ModelError::Format(format!(
                    "unsupported version {other:?}, expected {FORMAT_VERSION}"
                )))
            }
        }
        let forest: Forest =
            serde_json::from_value(header).map_err(|e| ModelError::Format(e.to_string()))?;
        forest.check_arrays()?;
        Ok(forest)
    }

    fn check_arrays(&self) -> Result<(), ModelError> {
        if self.labels.is_empty() || self.trees.is_empty() {
            return Err(ModelError::Format("no labels or no trees".into()));
        }
        for (ti, t) in self.trees.iter().enumerate() {
            let n = t.feature.len();
            let bad = n == 0
                || [t.threshold.len(), t.left.len(), t.right.len(), t.value.len()]
                    .iter()
                    .any(|&l| l != n)
                || (0..n).any(|i| {
                    t.value[i] as usize >= self.labels.len()
                        || (t.feature[i] >= 0
                            && (t.feature[i] as usize >= self.schema.len()
                                || t.left[i] as usize <= i
                                || t.right[i] as usize <= i
                                || t.left[i] as usize >= n
                                || t.right[i] as usize >= n))
                });
            if bad {
                return Err(ModelError::Format(format!("tree {ti} is malformed")));
            }
        }
        Ok(())
    }

    pub fn save(&self, path: impl AsRef<Path>) -> Result<(), ModelError> {
        let path = path.as_ref();
        fs::write(path, self.to_json()).map_err(|source| ModelError::Io {
            path: path.display().to_string(),
            source,
        })
    }

    pub fn load(path: impl AsRef<Path>) -> Result<Self, ModelError> {
        let path = path.as_ref();
        let text = fs::read_to_string(path).map_err(|source| ModelError::Io {
            path: path.display().to_string(),
            source,
        })?;
        Self::from_json(&text)
    }
}

#[derive(Debug, Clone, PartialEq, Serialize)]
pub struct OobEstimate {
    pub error: f64,
    pub covered: usize,
    /// Rows that were in every tree's bootstrap sample.
    pub skipped: usize,
}

/// Out-of-bag error over the rows the forest was trained on.
pub fn oob_error(forest: &Forest, rows: &[FeatureRow]) -> Result<OobEstimate, ModelError> {
    if rows.len() != forest.n_train {
        return Err(ModelError::OobRows {
            expected: forest.n_train,
            got: rows.len(),
        });
    }
    let mut votes = vec![vec![0usize; forest.labels.len()]; rows.len()];
    for t in &forest.trees {
        for &i in &t.out_of_bag {
            let i = i as usize;
            votes[i][t.predict_index(&rows[i].values)] += 1;
        }
    }
    let mut covered = 0;
    let mut wrong = 0;
    for (i, v) in votes.iter().enumerate() {
        if v.iter().all(|&c| c == 0) {
            continue;
        }
        covered += 1;
        let p = vote(&forest.labels, v);
        if Some(p.label) != rows[i].label {
            wrong += 1;
        }
    }
    Ok(OobEstimate {
        error: if covered == 0 {
            0.0
        } else {
            wrong as f64 / covered as f64
        },
        covered,
        skipped: rows.len() - covered,
    })
}

#[derive(Debug, Clone, PartialEq, Serialize)]
pub struct LabelMetrics {
    pub label: SystemStatus,
    pub support: usize,
    pub tp_rate: f64,
    pub fp_rate: f64,
    pub precision: f64,
    pub recall: f64,
    pub f1: f64,
    /// Undefined when the label is absent or is the only one present.
    pub roc_area: Option<f64>,
}

#[derive(Debug, Clone, PartialEq, Serialize)]
pub struct WeightedMetrics {
    pub tp_rate: f64,
    pub fp_rate: f64,
    pub precision: f64,
    pub recall: f64,
    pub f1: f64,
    pub roc_area: Option<f64>,
}

#[derive(Debug, Clone, PartialEq, Serialize)]
pub struct EvalReport {
    pub labels: Vec<SystemStatus>,
    pub instances: usize,
    pub correct: usize,
    pub accuracy_pct: f64,
    pub kappa: f64,
    pub mae: f64,
    pub rmse: f64,
    /// Rows are actual labels, columns predicted.
    pub confusion: Vec<Vec<usize>>,
    pub per_label: Vec<LabelMetrics>,
    pub weighted: WeightedMetrics,
}

fn ratio(a: usize, b: usize) -> f64 {
    if b == 0 {
        0.0
    } else {
        a as f64 / b as f64
    }
}

/// One-vs-rest area under the ROC curve via the rank-sum statistic.
fn rank_auc(scores: &[f64], positive: &[bool]) -> Option<f64> {
    let p = positive.iter().filter(|&&b| b).count();
    let n = positive.len() - p;
    if p == 0 || n == 0 {
        return None;
    }
    let ranks = crate::stats::midranks(scores);
    let rank_sum: f64 = ranks
        .iter()
        .zip(positive)
        .filter(|(_, &b)| b)
        .map(|(r, _)| r)
        .sum();
    Some((rank_sum - (p * (p + 1)) as f64 / 2.0) / (p as f64 * n as f64))
}

/// Score class distributions against true labels. `dists[i][k]` is the
/// probability of `labels[k]` for instance `i`; the predicted label is the
/// first maximum.
pub fn evaluate(
    labels: &[SystemStatus],
    dists: &[Vec<f64>],
    truth: &[SystemStatus],
) -> Result<EvalReport, ModelError> {
    if dists.len() != truth.len() {
        return Err(ModelError::LengthMismatch(dists.len(), truth.len()));
    }
    if truth.is_empty() || labels.is_empty() {
        return Err(ModelError::Empty);
    }
    let k = labels.len();
    let n = truth.len();
    let mut actual = Vec::with_capacity(n);
    for t in truth {
        actual.push(
            labels
                .iter()
                .position(|l| l == t)
                .ok_or(ModelError::UnknownLabel(*t))?,
        );
    }
    let mut confusion = vec![vec![0usize; k]; k];
    let mut abs_err = 0.0;
    let mut sq_err = 0.0;
    for (d, &a) in dists.iter().zip(&actual) {
        if d.len() != k {
            return Err(ModelError::SchemaMismatch {
                expected: k,
                got: d.len(),
            });
        }
        let mut pred = 0;
        for j in 1..k {
            if d[j] > d[pred] {
                pred = j;
            }
        }
        confusion[a][pred] += 1;
        for (j, &p) in d.iter().enumerate() {
            let e = p - if j == a { 1.0 } else { 0.0 };
            abs_err += e.abs();
            sq_err += e * e;
        }
    }
    let denom = (n * k) as f64;
    let correct: usize = (0..k).map(|i| confusion[i][i]).sum();
    let row_sum: Vec<usize> = confusion.iter().map(|r| r.iter().sum()).collect();
    let col_sum: Vec<usize> = (0..k).map(|j| confusion.iter().map(|r| r[j]).sum()).collect();

    let nf = n as f64;
    let p_o = correct as f64 / nf;
    let p_e: f64 = (0..k)
        .map(|i| (row_sum[i] as f64 / nf) * (col_sum[i] as f64 / nf))
        .sum();
    let kappa = if p_e >= 1.0 {
        if p_o >= 1.0 {
            1.0
        } else {
            0.0
        }
    } else {
        (p_o - p_e) / (1.0 - p_e)
    };

    let per_label: Vec<LabelMetrics> = (0..k)
        .map(|i| {
            let tp = confusion[i][i];
            let fp = col_sum[i] - tp;
            let recall = ratio(tp, row_sum[i]);
            let precision = ratio(tp, col_sum[i]);
            let f1 = if precision + recall > 0.0 {
                2.0 * precision * recall / (precision + recall)
            } else {
                0.0
            };
            let scores: Vec<f64> = dists.iter().map(|d| d[i]).collect();
            let positive: Vec<bool> = actual.iter().map(|&a| a == i).collect();
            LabelMetrics {
                label: labels[i],
                support: row_sum[i],
                tp_rate: recall,
                fp_rate: ratio(fp, n - row_sum[i]),
                precision,
                recall,
                f1,
                roc_area: rank_auc(&scores, &positive),
            }
        })
        .collect();

    let weighted_of = |f: &dyn Fn(&LabelMetrics) -> f64| {
        per_label.iter().map(|m| m.support as f64 * f(m)).sum::<f64>() / nf
    };
    let roc_area = {
        let defined: Vec<&LabelMetrics> = per_label
            .iter()
            .filter(|m| m.support > 0 && m.roc_area.is_some())
            .collect();
        let w: usize = defined.iter().map(|m| m.support).sum();
        (w > 0).then(|| {
            defined
                .iter()
                .map(|m| m.support as f64 * m.roc_area.unwrap_or(0.0))
                .sum::<f64>()
                / w as f64
        })
    };
    let weighted = WeightedMetrics {
        tp_rate: weighted_of(&|m| m.tp_rate),
        fp_rate: weighted_of(&|m| m.fp_rate),
        precision: weighted_of(&|m| m.precision),
        recall: weighted_of(&|m| m.recall),
        f1: weighted_of(&|m| m.f1),
        roc_area,
    };

    Ok(EvalReport {
        labels: labels.to_vec(),
        instances: n,
        correct,
        accuracy_pct: 100.0 * p_o,
        kappa,
        mae: abs_err / denom,
        rmse: (sq_err / denom).sqrt(),
        confusion,
        per_label,
        weighted,
    })
}

/// Evaluate a trained forest on labeled rows, over all four statuses.
pub fn evaluate_forest(forest: &Forest, rows: &[FeatureRow]) -> Result<EvalReport, ModelError> {
    let truth = rows
        .iter()
        .enumerate()
        .map(|(i, r)| r.label.ok_or(ModelError::Unlabeled(i)))
        .collect::<Result<Vec<_>, _>>()?;
    let preds = forest.predict_batch(rows)?;
    let dists: Vec<Vec<f64>> = preds.iter().map(|p| forest.distribution(p)).collect();
    evaluate(&SystemStatus::ALL, &dists, &truth)
}

#[derive(Debug, Clone, PartialEq, Serialize)]
pub struct CvOutcome {
    pub folds: usize,
    pub stratified: bool,
    pub report: EvalReport,
}

const FOLD_STREAM: u64 = u64::MAX;

/// Assign each row a fold in `0..k`. Stratified unless some label has
/// fewer than `k` rows.
pub fn assign_folds(labels: &[SystemStatus], k: usize, seed: u64) -> (Vec<usize>, bool) {
    let mut rng = ChaCha8Rng::seed_from_u64(derive_seed(seed, FOLD_STREAM));
    let stratified = SystemStatus::ALL.iter().all(|s| {
        let c = labels.iter().filter(|l| *l == s).count();
        c == 0 || c >= k
    });
    let mut order: Vec<usize> = (0..labels.len()).collect();
    order.shuffle(&mut rng);
    if stratified {
        // stable grouping keeps the shuffled order within each label
        order.sort_by_key(|&i| labels[i]);
    } else {
        warn!("a label has fewer than {k} rows; folds are not stratified");
    }
    let mut fold = vec![0; labels.len()];
    for (pos, &i) in order.iter().enumerate() {
        fold[i] = pos % k;
    }
    (fold, stratified)
}

/// k-fold cross-validation; predictions from every fold are pooled into one
/// report.
pub fn cross_validate(
    rows: &[FeatureRow],
    schema: &FeatureSchema,
    k: usize,
    params: &ForestParams,
    seed: u64,
) -> Result<CvOutcome, ModelError> {
    let n = rows.len();
    if k < 2 || k > n {
        return Err(ModelError::Folds { k, n });
    }
    let truth = rows
        .iter()
        .enumerate()
        .map(|(i, r)| r.label.ok_or(ModelError::Unlabeled(i)))
        .collect::<Result<Vec<_>, _>>()?;
    let (fold, stratified) = assign_folds(&truth, k, seed);

    let per_fold = par::map_range(k, |f| -> Result<Vec<(usize, Vec<f64>)>, ModelError> {
        let train: Vec<FeatureRow> = rows
            .iter()
            .zip(&fold)
            .filter(|(_, &g)| g != f)
            .map(|(r, _)| r.clone())
            .collect();
        let fold_params = ForestParams {
            seed: derive_seed(params.seed, f as u64),
            ..params.clone()
        };
        let forest = train_forest(&train, schema, &fold_params)?;
        (0..n)
            .filter(|&i| fold[i] == f)
            .map(|i| {
                let p = forest.predict(&rows[i].values)?;
                Ok((i, forest.distribution(&p)))
            })
            .collect()
    });
    let mut dists = vec![Vec::new(); n];
    for r in per_fold {
        for (i, d) in r? {
            dists[i] = d;
        }
    }
    Ok(CvOutcome {
        folds: k,
        stratified,
        report: evaluate(&SystemStatus::ALL, &dists, &truth)?,
    })
}

fn fmt_opt(v: Option<f64>) -> String {
    v.map_or_else(|| "?".to_string(), |x| format!("{x:.3}"))
}

impl EvalReport {
    pub fn to_json_pretty(&self) -> String {
        serde_json::to_string_pretty(self).expect("report serializes")
    }
}

impl fmt::Display for EvalReport {
    /// Fixed-width summary in the layout of common ML workbench output.
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        let n = self.instances;
        let wrong = n - self.correct;
        let mut s = String::new();
        writeln!(s, "=== Summary ===")?;
        writeln!(s)?;
        writeln!(
            s,
            "Correctly Classified Instances   {:>10}   {:>12.4} %",
            self.correct, self.accuracy_pct
        )?;
        writeln!(
            s,
            "Incorrectly Classified Instances {:>10}   {:>12.4} %",
            wrong,
            100.0 - self.accuracy_pct
        )?;
        writeln!(s, "Kappa statistic                  {:>10.4}", self.kappa)?;
        writeln!(s, "Mean absolute error              {:>10.4}", self.mae)?;
        writeln!(s, "Root mean squared error          {:>10.4}", self.rmse)?;
        writeln!(s, "Total Number of Instances        {:>10}", n)?;
        writeln!(s)?;
        writeln!(s, "=== Detailed Accuracy By Class ===")?;
        writeln!(s)?;
        writeln!(
            s,
            "               TP Rate  FP Rate  Precision  Recall  F-Measure  ROC Area  Class"
        )?;
        for m in &self.per_label {
            writeln!(
                s,
                "               {:>7.3}  {:>7.3}  {:>9.3}  {:>6.3}  {:>9.3}  {:>8}  {}",
                m.tp_rate,
                m.fp_rate,
                m.precision,
                m.recall,
                m.f1,
                fmt_opt(m.roc_area),
                m.label
            )?;
        }
        let w = &self.weighted;
        writeln!(
            s,
            "Weighted Avg.  {:>7.3}  {:>7.3}  {:>9.3}  {:>6.3}  {:>9.3}  {:>8}",
            w.tp_rate,
            w.fp_rate,
            w.precision,
            w.recall,
            w.f1,
            fmt_opt(w.roc_area)
        )?;
        writeln!(s)?;
        writeln!(s, "=== Confusion Matrix ===")?;
        writeln!(s)?;
        let letters: Vec<char> = (0..self.labels.len()).map(|i| (b'a' + i as u8) as char).collect();
        for c in &letters {
            write!(s, "{c:>6}")?;
        }
        writeln!(s, "   <-- classified as")?;
        for (i, row) in self.confusion.iter().enumerate() {
            for v in row {
                write!(s, "{v:>6}")?;
            }
            writeln!(s, " |   {} = {}", letters[i], self.labels[i])?;
        }
        f.write_str(&s)
    }
}
