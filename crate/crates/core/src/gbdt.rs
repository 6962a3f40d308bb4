//! Gradient-boosted regression trees with squared loss.
//!
//! Each tree is fit to the current residuals `y - F(x)` by greedy
//! variance-reduction splits; leaves hold the mean residual of their rows and
//! the ensemble advances as `F += learning_rate * tree`. Split search scans
//! a fixed set of candidate thresholds per feature (midpoints between
//! quantile-spaced unique values), so every row maps to a small bin index
//! computed once before boosting.
//!
//! Split selection is deterministic: a candidate replaces the current best
//! only if its gain is larger by more than a relative tolerance, and features
//! and thresholds are scanned in ascending order, so near-exact ties resolve
//! to the lowest feature index, then the lowest threshold.

use std::io::{Read, Write};

use rand_chacha::ChaCha8Rng;
use rand_core::{RngCore, SeedableRng};
use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};
use crate::features::FeatureTable;

/// Gains within `TIE_TOLERANCE * parent_sse` of each other are ties.
pub const TIE_TOLERANCE: f64 = 1e-10;

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct Hyperparams {
    pub n_trees: usize,
    pub max_depth: usize,
    pub min_leaf: usize,
    pub learning_rate: f64,
    pub max_thresholds_per_feature: usize,
    /// Fraction of rows drawn (seeded) for each tree. 1.0 uses every row.
    #[serde(default = "one")]
    pub subsample: f64,
}

fn one() -> f64 {
    1.0
}

impl Default for Hyperparams {
    fn default() -> Self {
        Hyperparams {
            n_trees: 200,
            max_depth: 3,
            min_leaf: 5,
            learning_rate: 0.1,
            max_thresholds_per_feature: 32,
            subsample: 1.0,
        }
    }
}

impl Hyperparams {
    pub fn validate(&self) -> Result<()> {
        let bad = |msg: &str| Err(Error::Param(msg.to_string()));
        if self.n_trees < 1 {
            return bad("n_trees must be at least 1");
        }
        if self.max_depth < 1 {
            return bad("max_depth must be at least 1");
        }
        if self.min_leaf < 1 {
            return bad("min_leaf must be at least 1");
        }
        if !(self.learning_rate > 0.0 && self.learning_rate <= 1.0) {
            return bad("learning_rate must be in (0, 1]");
        }
        if !(1..u16::MAX as usize).contains(&self.max_thresholds_per_feature) {
            return bad("max_thresholds_per_feature must be in 1..65535");
        }
        if !(self.subsample > 0.0 && self.subsample <= 1.0) {
            return bad("subsample must be in (0, 1]");
        }
        Ok(())
    }
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
#[serde(untagged)]
pub enum TreeNode {
    Split {
        feature_index: usize,
        threshold: f64,
        /// Squared-error reduction on the training rows routed here.
        gain: f64,
        n_samples: usize,
        left: Box<TreeNode>,
        right: Box<TreeNode>,
    },
    Leaf {
        value: f64,
    },
}

impl TreeNode {
    /// `x[feature_index] <= threshold` goes left.
    pub fn eval(&self, x: &[f64]) -> f64 {
        let mut node = self;
        loop {
            match node {
                TreeNode::Leaf { value } => return *value,
                TreeNode::Split {
                    feature_index,
                    threshold,
                    left,
                    right,
                    ..
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

    pub fn depth(&self) -> usize {
        match self {
            TreeNode::Leaf { .. } => 0,
            TreeNode::Split { left, right, .. } => 1 + left.depth().max(right.depth()),
        }
    }

    fn for_each_split(&self, f: &mut impl FnMut(usize, f64)) {
        if let TreeNode::Split {
            feature_index,
            gain,
            left,
            right,
            ..
        } = self
        {
            f(*feature_index, *gain);
            left.for_each_split(f);
            right.for_each_split(f);
        }
    }
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct TrainingMeta {
    pub n_rows: usize,
    pub seed: u64,
    pub hyperparams: Hyperparams,
    /// Training MSE before any tree, then after each tree.
    pub train_mse: Vec<f64>,
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct GbdtModel {
    pub base_prediction: f64,
    pub learning_rate: f64,
    pub feature_names: Vec<String>,
    pub trees: Vec<TreeNode>,
    pub training_meta: TrainingMeta,
}

/// Midpoints between unique values, at most `max` of them, spread evenly over
/// the sorted gaps when there are more.
pub fn candidate_thresholds(values: &[f64], max: usize) -> Vec<f64> {
    let mut unique = values.to_vec();
    unique.sort_by(f64::total_cmp);
    unique.dedup();
    let gaps = unique.len().saturating_sub(1);
    let picks: Vec<usize> = if gaps <= max {
        (0..gaps).collect()
    } else {
        (0..max).map(|j| (2 * j + 1) * gaps / (2 * max)).collect()
    };
    picks
        .into_iter()
        .map(|g| {
            let (lo, hi) = (unique[g], unique[g + 1]);
            let mid = lo + (hi - lo) / 2.0;
            if mid < hi {
                mid
            } else {
                lo
            }
        })
        .collect()
}

struct Binned {
    thresholds: Vec<Vec<f64>>,
    /// `bins[f][i]`: number of thresholds of feature `f` strictly below `x[i][f]`.
    bins: Vec<Vec<u16>>,
}

fn bin_features(table: &FeatureTable, max_thresholds: usize) -> Binned {
    let d = table.names.len();
    let mut thresholds = Vec::with_capacity(d);
    let mut bins = Vec::with_capacity(d);
    for f in 0..d {
        let column: Vec<f64> = table.rows.iter().map(|r| r.x[f]).collect();
        let th = candidate_thresholds(&column, max_thresholds);
        bins.push(
            column
                .iter()
                .map(|&v| th.partition_point(|&t| t < v) as u16)
                .collect(),
        );
        thresholds.push(th);
    }
    Binned { thresholds, bins }
}

struct TreeBuilder<'a> {
    binned: &'a Binned,
    residuals: &'a [f64],
    hp: &'a Hyperparams,
}

struct BestSplit {
    feature: usize,
    bin: usize,
    gain: f64,
}

impl TreeBuilder<'_> {
    fn mean_residual(&self, rows: &[usize]) -> f64 {
        rows.iter().map(|&i| self.residuals[i]).sum::<f64>() / rows.len() as f64
    }

    fn sse(&self, rows: &[usize]) -> f64 {
        let m = self.mean_residual(rows);
        rows.iter()
            .map(|&i| (self.residuals[i] - m) * (self.residuals[i] - m))
            .sum()
    }

    fn best_split(&self, rows: &[usize]) -> Option<BestSplit> {
        let parent_sse = self.sse(rows);
        if !(parent_sse > 0.0) {
            return None;
        }
        let tol = TIE_TOLERANCE * parent_sse;
        let n = rows.len();
        let total: f64 = rows.iter().map(|&i| self.residuals[i]).sum();
        let parent_term = total * total / n as f64;
        let min_leaf = self.hp.min_leaf;

        let mut best: Option<BestSplit> = None;
        let mut sums = Vec::new();
        let mut counts = Vec::new();
        for (f, th) in self.binned.thresholds.iter().enumerate() {
            if th.is_empty() {
                continue;
            }
            sums.clear();
            sums.resize(th.len() + 1, 0.0);
            counts.clear();
            counts.resize(th.len() + 1, 0usize);
            let fbins = &self.binned.bins[f];
            for &i in rows {
                let b = fbins[i] as usize;
                sums[b] += self.residuals[i];
                counts[b] += 1;
            }
            let (mut left_sum, mut left_n) = (0.0, 0usize);
            for j in 0..th.len() {
                left_sum += sums[j];
                left_n += counts[j];
                let right_n = n - left_n;
                if left_n < min_leaf {
                    continue;
                }
                if right_n < min_leaf {
                    break;
                }
                let right_sum = total - left_sum;
                let gain = left_sum * left_sum / left_n as f64
                    + right_sum * right_sum / right_n as f64
                    - parent_term;
                let better = match &best {
                    None => gain > tol,
                    Some(b) => gain > b.gain + tol,
                };
                if better {
                    best = Some(BestSplit {
                        feature: f,
                        bin: j,
                        gain,
                    });
                }
            }
        }
        best
    }

    fn build(&self, rows: Vec<usize>, depth: usize) -> TreeNode {
        let leaf = |rows: &[usize]| TreeNode::Leaf {
            value: self.mean_residual(rows),
        };
        if depth >= self.hp.max_depth || rows.len() < 2 * self.hp.min_leaf {
            return leaf(&rows);
        }
        let Some(split) = self.best_split(&rows) else {
            return leaf(&rows);
        };
        let fbins = &self.binned.bins[split.feature];
        let (left, right): (Vec<usize>, Vec<usize>) =
            rows.iter().partition(|&&i| fbins[i] as usize <= split.bin);
        TreeNode::Split {
            feature_index: split.feature,
            threshold: self.binned.thresholds[split.feature][split.bin],
            gain: split.gain.max(0.0),
            n_samples: rows.len(),
            left: Box::new(self.build(left, depth + 1)),
            right: Box::new(self.build(right, depth + 1)),
        }
    }
}

fn mse(y: &[f64], f: &[f64]) -> f64 {
    y.iter().zip(f).map(|(a, b)| (a - b) * (a - b)).sum::<f64>() / y.len() as f64
}

fn check_row(x: &[f64], d: usize, at: &dyn std::fmt::Display) -> Result<()> {
    if x.len() != d {
        return Err(Error::Shape {
            expected: d,
            actual: x.len(),
        });
    }
    if x.iter().any(|v| !v.is_finite()) {
        return Err(Error::Training(format!("non-finite feature in row {at}")));
    }
    Ok(())
}

/// Fits a boosted ensemble on `table`. Deterministic in `(table, hp, seed)`.
pub fn fit(table: &FeatureTable, hp: &Hyperparams, seed: u64) -> Result<GbdtModel> {
    hp.validate()?;
    let n = table.rows.len();
    if n < 2 * hp.min_leaf {
        return Err(Error::Training(format!(
            "too few rows: {n}, need at least {}",
            2 * hp.min_leaf
        )));
    }
    let d = table.names.len();
    let mut y = Vec::with_capacity(n);
    for row in &table.rows {
        check_row(&row.x, d, &row.at)?;
        match row.y {
            Some(v) => y.push(v as f64),
            None => return Err(Error::Training(format!("row {} has no target", row.at))),
        }
    }

    let binned = bin_features(table, hp.max_thresholds_per_feature);
    let base = y.iter().sum::<f64>() / n as f64;
    let mut fitted = vec![base; n];
    let mut residuals = vec![0.0; n];
    let mut train_mse = vec![mse(&y, &fitted)];
    let mut rng = ChaCha8Rng::seed_from_u64(seed);
    let mut trees = Vec::with_capacity(hp.n_trees);

    for _ in 0..hp.n_trees {
        for i in 0..n {
            residuals[i] = y[i] - fitted[i];
        }
        let rows: Vec<usize> = if hp.subsample < 1.0 {
            let sampled: Vec<usize> = (0..n)
                .filter(|_| unit_f64(&mut rng) < hp.subsample)
                .collect();
            if sampled.len() < 2 * hp.min_leaf {
                (0..n).collect()
            } else {
                sampled
            }
        } else {
            (0..n).collect()
        };
        let builder = TreeBuilder {
            binned: &binned,
            residuals: &residuals,
            hp,
        };
        let tree = builder.build(rows, 0);
        for (i, row) in table.rows.iter().enumerate() {
            fitted[i] += hp.learning_rate * tree.eval(&row.x);
        }
        train_mse.push(mse(&y, &fitted));
        trees.push(tree);
    }

    Ok(GbdtModel {
        base_prediction: base,
        learning_rate: hp.learning_rate,
        feature_names: table.names.clone(),
        trees,
        training_meta: TrainingMeta {
            n_rows: n,
            seed,
            hyperparams: hp.clone(),
            train_mse,
        },
    })
}

fn unit_f64(rng: &mut ChaCha8Rng) -> f64 {
    (rng.next_u64() >> 11) as f64 * (1.0 / (1u64 << 53) as f64)
}

#[derive(Clone, Debug, PartialEq, Serialize)]
pub struct ImportanceEntry {
    pub feature: String,
    pub score: f64,
}

#[derive(Clone, Debug, PartialEq, Serialize)]
pub struct ImportanceReport {
    /// Sorted by descending score, then by feature order.
    pub entries: Vec<ImportanceEntry>,
}

impl ImportanceReport {
    pub fn top(&self, k: usize) -> impl Iterator<Item = &str> {
        self.entries.iter().take(k).map(|e| e.feature.as_str())
    }
}

impl GbdtModel {
    pub fn n_features(&self) -> usize {
        self.feature_names.len()
    }

    /// Unclipped prediction: the base plus each tree scaled by the learning
    /// rate, accumulated in tree order.
    pub fn predict_raw(&self, x: &[f64]) -> Result<f64> {
        if x.len() != self.n_features() {
            return Err(Error::Shape {
                expected: self.n_features(),
                actual: x.len(),
            });
        }
        if x.iter().any(|v| !v.is_finite()) {
            return Err(Error::Param(
                "feature vector contains non-finite values".into(),
            ));
        }
        let mut acc = self.base_prediction;
        for tree in &self.trees {
            acc += self.learning_rate * tree.eval(x);
        }
        Ok(acc)
    }

    /// Prediction clipped below at zero, for reporting counts.
    pub fn predict(&self, x: &[f64]) -> Result<f64> {
        Ok(self.predict_raw(x)?.max(0.0))
    }

    fn check_columns(&self, table: &FeatureTable) -> Result<()> {
        if table.names != self.feature_names {
            return Err(Error::Shape {
                expected: self.n_features(),
                actual: table.names.len(),
            });
        }
        Ok(())
    }

    /// Mean absolute error of unclipped predictions.
    pub fn evaluate_mae(&self, table: &FeatureTable) -> Result<f64> {
        self.check_columns(table)?;
        if table.rows.is_empty() {
            return Err(Error::Empty("no rows to evaluate"));
        }
        let mut total = 0.0;
        for row in &table.rows {
            let y = row
                .y
                .ok_or_else(|| Error::Param(format!("row {} has no target", row.at)))?;
            total += (y as f64 - self.predict_raw(&row.x)?).abs();
        }
        Ok(total / table.rows.len() as f64)
    }

    /// Split-gain importance per feature, normalized to sum to 1.
    pub fn feature_importance(&self) -> ImportanceReport {
        let mut scores = vec![0.0; self.n_features()];
        for tree in &self.trees {
            tree.for_each_split(&mut |f, gain| scores[f] += gain);
        }
        let total: f64 = scores.iter().sum();
        if total > 0.0 {
            scores.iter_mut().for_each(|s| *s /= total);
        }
        let mut order: Vec<usize> = (0..scores.len()).collect();
        order.sort_by(|&a, &b| scores[b].total_cmp(&scores[a]).then(a.cmp(&b)));
        ImportanceReport {
            entries: order
                .into_iter()
                .map(|i| ImportanceEntry {
                    feature: self.feature_names[i].clone(),
                    score: scores[i],
                })
                .collect(),
        }
    }

    pub fn to_writer<W: Write>(&self, writer: W) -> Result<()> {
        serde_json::to_writer_pretty(writer, self)?;
        Ok(())
    }

    pub fn from_reader<R: Read>(reader: R) -> Result<Self> {
        let model: GbdtModel = serde_json::from_reader(reader)?;
        for tree in &model.trees {
            let mut bad = None;
            tree.for_each_split(&mut |f, _| {
                if f >= model.feature_names.len() {
                    bad = Some(f);
                }
            });
            if let Some(f) = bad {
                return Err(Error::Shape {
                    expected: model.feature_names.len(),
                    actual: f + 1,
                });
            }
        }
        Ok(model)
    }
}
