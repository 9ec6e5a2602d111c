//! Random-forest classification of empirical density spectra.
//!
//! Trees use bootstrap resampling, Gini-impurity axis-aligned splits and a
//! random subset of `sqrt(d)` candidate features per node. Leaves store the
//! fraction of class-1 samples; the forest score is the mean leaf fraction.

use std::cmp::Ordering;

use rand::seq::SliceRandom;
use rand::Rng;
use serde::{Deserialize, Serialize};

use crate::error::{invalid, Error, Result};
use crate::parqvd::{sample_empirical, ClassLabel, DensitySpectrum, EmpiricalDistribution};
use crate::rng::{derive_seed, multinomial, seeded};

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct LabeledSample {
    pub features: Vec<f64>,
    /// 0 = non-vortical, 1 = vortical.
    pub label: u8,
}

impl LabeledSample {
    pub fn from_empirical(d: &EmpiricalDistribution) -> Self {
        Self {
            features: d.normalized(),
            label: d.label.as_u8(),
        }
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
#[serde(default)]
pub struct ForestParams {
    pub n_trees: usize,
    pub max_depth: usize,
    pub min_split: usize,
    /// Candidate features per split; `None` means `round(sqrt(d))`.
    pub features_per_split: Option<usize>,
    pub bootstrap: bool,
}

impl Default for ForestParams {
    fn default() -> Self {
        Self {
            n_trees: 100,
            max_depth: 8,
            min_split: 2,
            features_per_split: None,
            bootstrap: true,
        }
    }
}

/// One tree as parallel node arrays. `feature[i] < 0` marks a leaf.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct Tree {
    pub feature: Vec<i64>,
    pub threshold: Vec<f64>,
    pub left: Vec<usize>,
    pub right: Vec<usize>,
    /// Class-1 fraction of the training samples reaching the node.
    pub value: Vec<f64>,
}

impl Tree {
    fn push_node(&mut self, value: f64) -> usize {
        self.feature.push(-1);
        self.threshold.push(0.0);
        self.left.push(0);
        self.right.push(0);
        self.value.push(value);
        self.feature.len() - 1
    }

    /// Leaf fraction reached by `x`; samples with `x[f] <= threshold` go left.
    pub fn predict(&self, x: &[f64]) -> f64 {
        let mut i = 0;
        while self.feature[i] >= 0 {
            let f = self.feature[i] as usize;
            i = if x[f] <= self.threshold[i] {
                self.left[i]
            } else {
                self.right[i]
            };
        }
        self.value[i]
    }

    pub fn n_nodes(&self) -> usize {
        self.feature.len()
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct ForestModel {
    pub params: ForestParams,
    pub seed: u64,
    pub n_features: usize,
    pub trees: Vec<Tree>,
}

struct Columns {
    /// `cols[f][i]`, samples in canonical order.
    cols: Vec<Vec<f64>>,
    labels: Vec<u8>,
}

fn canonical_order(samples: &[LabeledSample]) -> Vec<usize> {
    let mut idx: Vec<usize> = (0..samples.len()).collect();
    idx.sort_by(|&a, &b| {
        let (sa, sb) = (&samples[a], &samples[b]);
        for (x, y) in sa.features.iter().zip(&sb.features) {
            match x.total_cmp(y) {
                Ordering::Equal => continue,
                o => return o,
            }
        }
        sa.label.cmp(&sb.label)
    });
    idx
}

fn gini(n0: f64, n1: f64) -> f64 {
    let n = n0 + n1;
    if n == 0.0 {
        return 0.0;
    }
    let (p0, p1) = (n0 / n, n1 / n);
    1.0 - p0 * p0 - p1 * p1
}

/// Best threshold on one feature for the samples `idx`:
/// `(weighted child impurity, threshold)`, or `None` when constant.
fn best_split(col: &[f64], labels: &[u8], idx: &[usize]) -> Option<(f64, f64)> {
    // Histogram features are mostly zero; sort only the nonzero entries.
    let mut zeros = [0.0f64; 2];
    let mut nonzero: Vec<(f64, u8)> = Vec::new();
    for &i in idx {
        let v = col[i];
        if v == 0.0 {
            zeros[labels[i] as usize] += 1.0;
        } else {
            nonzero.push((v, labels[i]));
        }
    }
    nonzero.sort_unstable_by(|a, b| a.0.total_cmp(&b.0));
    // Groups of equal value in ascending order: (value, n0, n1).
    let mut groups: Vec<(f64, f64, f64)> = Vec::new();
    let mut zero_done = zeros[0] + zeros[1] == 0.0;
    for &(v, y) in &nonzero {
        if !zero_done && v > 0.0 {
            groups.push((0.0, zeros[0], zeros[1]));
            zero_done = true;
        }
        match groups.last_mut() {
            Some(g) if g.0 == v => {
                if y == 0 {
                    g.1 += 1.0
                } else {
                    g.2 += 1.0
                }
            }
            _ => groups.push((v, (y == 0) as u8 as f64, (y == 1) as u8 as f64)),
        }
    }
    if !zero_done {
        groups.push((0.0, zeros[0], zeros[1]));
    }
    if groups.len() < 2 {
        return None;
    }
    let total0: f64 = groups.iter().map(|g| g.1).sum();
    let total1: f64 = groups.iter().map(|g| g.2).sum();
    let (mut l0, mut l1) = (0.0, 0.0);
    let mut best: Option<(f64, f64)> = None;
    for w in groups.windows(2) {
        l0 += w[0].1;
        l1 += w[0].2;
        let (r0, r1) = (total0 - l0, total1 - l1);
        let score = (l0 + l1) * gini(l0, l1) + (r0 + r1) * gini(r0, r1);
        if best.is_none_or(|b| score < b.0) {
            best = Some((score, 0.5 * (w[0].0 + w[1].0)));
        }
    }
    best
}

fn grow_tree<R: Rng>(data: &Columns, sample_idx: Vec<usize>, params: &ForestParams, mtry: usize, rng: &mut R) -> Tree {
    let mut tree = Tree {
        feature: Vec::new(),
        threshold: Vec::new(),
        left: Vec::new(),
        right: Vec::new(),
        value: Vec::new(),
    };
    let n_features = data.cols.len();
    let mut feature_order: Vec<usize> = (0..n_features).collect();
    let frac = |idx: &[usize]| idx.iter().filter(|&&i| data.labels[i] == 1).count() as f64 / idx.len() as f64;
    let root = tree.push_node(frac(&sample_idx));
    let mut stack = vec![(root, sample_idx, 0usize)];
    while let Some((node, idx, depth)) = stack.pop() {
        let value = tree.value[node];
        if depth >= params.max_depth || idx.len() < params.min_split || value == 0.0 || value == 1.0 {
            continue;
        }
        feature_order.shuffle(rng);
        let mut evaluated = 0;
        let mut best: Option<(f64, usize, f64)> = None;
        for &f in &feature_order {
            if evaluated >= mtry {
                break;
            }
            if let Some((score, thr)) = best_split(&data.cols[f], &data.labels, &idx) {
                evaluated += 1;
                if best.is_none_or(|b| score < b.0) {
                    best = Some((score, f, thr));
                }
            }
        }
        let Some((_, f, thr)) = best else { continue };
        let (li, ri): (Vec<usize>, Vec<usize>) = idx.iter().partition(|&&i| data.cols[f][i] <= thr);
        let l = tree.push_node(frac(&li));
        let r = tree.push_node(frac(&ri));
        tree.feature[node] = f as i64;
        tree.threshold[node] = thr;
        tree.left[node] = l;
        tree.right[node] = r;
        stack.push((r, ri, depth + 1));
        stack.push((l, li, depth + 1));
    }
    tree
}

fn check_samples(samples: &[LabeledSample]) -> Result<usize> {
    if samples.len() < 2 {
        return Err(invalid("need at least two samples"));
    }
    let d = samples[0].features.len();
    if d == 0 {
        return Err(invalid("samples have no features"));
    }
    for s in samples {
        if s.features.len() != d {
            return Err(Error::DimensionMismatch {
                expected: d,
                got: s.features.len(),
            });
        }
        if s.label > 1 {
            return Err(invalid("labels must be 0 or 1"));
        }
    }
    let ones = samples.iter().filter(|s| s.label == 1).count();
    if ones == 0 || ones == samples.len() {
        return Err(Error::SingleClass);
    }
    Ok(d)
}

/// Fit a forest. Samples are put in a canonical order before bootstrapping,
/// so the model does not depend on the input order.
pub fn train_forest(samples: &[LabeledSample], params: &ForestParams, seed: u64) -> Result<ForestModel> {
    let d = check_samples(samples)?;
    if params.n_trees == 0 || params.min_split < 2 {
        return Err(invalid("n_trees must be >= 1 and min_split >= 2"));
    }
    let order = canonical_order(samples);
    let data = Columns {
        cols: (0..d).map(|f| order.iter().map(|&i| samples[i].features[f]).collect()).collect(),
        labels: order.iter().map(|&i| samples[i].label).collect(),
    };
    let mtry = params
        .features_per_split
        .unwrap_or_else(|| (d as f64).sqrt().round() as usize)
        .clamp(1, d);
    let n = samples.len();
    let trees = (0..params.n_trees)
        .map(|t| {
            let mut rng = seeded(derive_seed(seed, t as u64));
            let idx: Vec<usize> = if params.bootstrap {
                (0..n).map(|_| rng.random_range(0..n)).collect()
            } else {
                (0..n).collect()
            };
            grow_tree(&data, idx, params, mtry, &mut rng)
        })
        .collect();
    Ok(ForestModel {
        params: *params,
        seed,
        n_features: d,
        trees,
    })
}

/// Mean class-1 leaf fraction over the trees.
pub fn predict_proba(model: &ForestModel, features: &[f64]) -> Result<f64> {
    if features.len() != model.n_features {
        return Err(Error::DimensionMismatch {
            expected: model.n_features,
            got: features.len(),
        });
    }
    let sum: f64 = model.trees.iter().map(|t| t.predict(features)).sum();
    Ok(sum / model.trees.len() as f64)
}

/// Hard label at the 0.5 threshold (ties go to class 0).
pub fn predict(model: &ForestModel, features: &[f64]) -> Result<u8> {
    Ok((predict_proba(model, features)? > 0.5) as u8)
}

/// F1 score of the positive class; 1.0 when there are no positives at all.
pub fn f1_score(truth: &[u8], predicted: &[u8]) -> f64 {
    let (mut tp, mut fp, mut fn_) = (0usize, 0usize, 0usize);
    for (&t, &p) in truth.iter().zip(predicted) {
        match (t, p) {
            (1, 1) => tp += 1,
            (0, 1) => fp += 1,
            (1, 0) => fn_ += 1,
            _ => {}
        }
    }
    let denom = 2 * tp + fp + fn_;
    if denom == 0 {
        1.0
    } else {
        2.0 * tp as f64 / denom as f64
    }
}

/// ROC AUC by the Mann-Whitney rank statistic, ties sharing average rank.
pub fn auc_score(truth: &[u8], scores: &[f64]) -> Result<f64> {
    let n1 = truth.iter().filter(|&&t| t == 1).count();
    let n0 = truth.len() - n1;
    if n1 == 0 {
        return Err(Error::InsufficientClassMembers {
            label: 1,
            have: 0,
            need: 1,
        });
    }
    if n0 == 0 {
        return Err(Error::InsufficientClassMembers {
            label: 0,
            have: 0,
            need: 1,
        });
    }
    let mut idx: Vec<usize> = (0..scores.len()).collect();
    idx.sort_by(|&a, &b| scores[a].total_cmp(&scores[b]));
    let mut ranks = vec![0.0; scores.len()];
    let mut i = 0;
    while i < idx.len() {
        let mut j = i;
        while j + 1 < idx.len() && scores[idx[j + 1]] == scores[idx[i]] {
            j += 1;
        }
        let avg = (i + j) as f64 / 2.0 + 1.0;
        for &k in &idx[i..=j] {
            ranks[k] = avg;
        }
        i = j + 1;
    }
    let r1: f64 = truth.iter().zip(&ranks).filter(|(t, _)| **t == 1).map(|(_, r)| r).sum();
    Ok((r1 - (n1 * (n1 + 1)) as f64 / 2.0) / (n1 * n0) as f64)
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct ClassMetrics {
    pub f1: f64,
    pub auc: f64,
    pub f1_std: f64,
    pub auc_std: f64,
    pub fold_f1: Vec<f64>,
    pub fold_auc: Vec<f64>,
}

fn mean_std(v: &[f64]) -> (f64, f64) {
    let n = v.len() as f64;
    let m = v.iter().sum::<f64>() / n;
    let var = v.iter().map(|x| (x - m).powi(2)).sum::<f64>() / n;
    (m, var.sqrt())
}

/// Stratified `k_folds` cross-validation: F1 at 0.5 and AUC per fold.
pub fn evaluate_cv(samples: &[LabeledSample], k_folds: usize, params: &ForestParams, seed: u64) -> Result<ClassMetrics> {
    if k_folds < 2 {
        return Err(invalid("k_folds must be >= 2"));
    }
    check_samples(samples)?;
    let mut fold_of = vec![0usize; samples.len()];
    let mut rng = seeded(seed);
    for label in [0u8, 1] {
        let mut members: Vec<usize> = (0..samples.len()).filter(|&i| samples[i].label == label).collect();
        if members.len() < k_folds {
            return Err(Error::InsufficientClassMembers {
                label,
                have: members.len(),
                need: k_folds,
            });
        }
        members.shuffle(&mut rng);
        for (pos, &i) in members.iter().enumerate() {
            fold_of[i] = pos % k_folds;
        }
    }
    let mut fold_f1 = Vec::with_capacity(k_folds);
    let mut fold_auc = Vec::with_capacity(k_folds);
    for fold in 0..k_folds {
        let train: Vec<LabeledSample> = samples
            .iter()
            .zip(&fold_of)
            .filter(|(_, f)| **f != fold)
            .map(|(s, _)| s.clone())
            .collect();
        let test: Vec<&LabeledSample> = samples.iter().zip(&fold_of).filter(|(_, f)| **f == fold).map(|(s, _)| s).collect();
        let model = train_forest(&train, params, derive_seed(seed, fold as u64 + 1))?;
        let truth: Vec<u8> = test.iter().map(|s| s.label).collect();
        let scores = test
            .iter()
            .map(|s| predict_proba(&model, &s.features))
            .collect::<Result<Vec<f64>>>()?;
        let predicted: Vec<u8> = scores.iter().map(|&p| (p > 0.5) as u8).collect();
        fold_f1.push(f1_score(&truth, &predicted));
        fold_auc.push(auc_score(&truth, &scores)?);
    }
    let (f1, f1_std) = mean_std(&fold_f1);
    let (auc, auc_std) = mean_std(&fold_auc);
    Ok(ClassMetrics {
        f1,
        auc,
        f1_std,
        auc_std,
        fold_f1,
        fold_auc,
    })
}

/// Balanced labeled set of `budget / shots` empirical histograms per class.
pub fn empirical_samples(
    non_vortical: &EmpiricalDistribution,
    vortical: &EmpiricalDistribution,
    shots: u64,
    budget: u64,
    seed: u64,
) -> Result<Vec<LabeledSample>> {
    let mut out: Vec<LabeledSample> = sample_empirical(non_vortical, shots, budget, derive_seed(seed, 0))?
        .iter()
        .map(LabeledSample::from_empirical)
        .collect();
    out.extend(
        sample_empirical(vortical, shots, budget, derive_seed(seed, 1))?
            .iter()
            .map(LabeledSample::from_empirical),
    );
    Ok(out)
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct SweepPoint {
    pub shots: u64,
    pub n_distributions: u64,
    pub metrics: ClassMetrics,
}

/// Cross-validated metrics versus shot count under a fixed measurement
/// budget per class.
pub fn shots_sweep(
    non_vortical: &EmpiricalDistribution,
    vortical: &EmpiricalDistribution,
    shot_list: &[u64],
    budget: u64,
    k_folds: usize,
    params: &ForestParams,
    seed: u64,
) -> Result<Vec<SweepPoint>> {
    if let Some(&shots) = shot_list.iter().find(|&&s| s == 0 || budget % s != 0) {
        return Err(Error::BudgetNotDivisible { budget, shots });
    }
    shot_list
        .iter()
        .map(|&shots| {
            let s = derive_seed(seed, shots);
            let samples = empirical_samples(non_vortical, vortical, shots, budget, s)?;
            Ok(SweepPoint {
                shots,
                n_distributions: budget / shots,
                metrics: evaluate_cv(&samples, k_folds, params, derive_seed(s, 7))?,
            })
        })
        .collect()
}

pub fn metrics_csv(points: &[SweepPoint]) -> String {
    let mut out = String::from("shots,f1_mean,f1_std,auc_mean,auc_std\n");
    for p in points {
        out.push_str(&format!(
            "{},{},{},{},{}\n",
            p.shots, p.metrics.f1, p.metrics.f1_std, p.metrics.auc, p.metrics.auc_std
        ));
    }
    out
}

/// Held-out accuracy on unseen fields: a forest trained on empirical
/// distributions from the class representatives classifies `draws_per_field`
/// fresh `shots`-shot histograms of every test field's own density spectrum.
/// Accuracy is counted per histogram.
#[allow(clippy::too_many_arguments)]
pub fn heldout_accuracy(
    non_vortical: &EmpiricalDistribution,
    vortical: &EmpiricalDistribution,
    test: &[(DensitySpectrum, ClassLabel)],
    shots: u64,
    budget: u64,
    draws_per_field: usize,
    params: &ForestParams,
    seed: u64,
) -> Result<f64> {
    let train = empirical_samples(non_vortical, vortical, shots, budget, derive_seed(seed, 0))?;
    let model = train_forest(&train, params, derive_seed(seed, 1))?;
    if test.is_empty() || draws_per_field == 0 {
        return Err(invalid("empty test set"));
    }
    let mut correct = 0usize;
    let mut total = 0usize;
    for (i, (spectrum, label)) in test.iter().enumerate() {
        let mut rng = seeded(derive_seed(seed, 100 + i as u64));
        for _ in 0..draws_per_field {
            let counts = multinomial(&mut rng, &spectrum.probs, shots);
            let d = EmpiricalDistribution {
                counts,
                shots,
                label: *label,
            };
            if predict(&model, &d.normalized())? == label.as_u8() {
                correct += 1;
            }
            total += 1;
        }
    }
    Ok(correct as f64 / total as f64)
}

#[cfg(test)]
mod tests {
    use super::*;

    fn s(features: Vec<f64>, label: u8) -> LabeledSample {
        LabeledSample { features, label }
    }

    fn separable() -> Vec<LabeledSample> {
        (0..20)
            .map(|i| {
                let label = (i % 2) as u8;
                s(vec![label as f64 * 10.0 + (i as f64) * 0.01], label)
            })
            .collect()
    }

    #[test]
    fn separable_one_feature() {
        let data = separable();
        let m = train_forest(&data, &ForestParams::default(), 1).unwrap();
        for x in &data {
            assert_eq!(predict(&m, &x.features).unwrap(), x.label);
        }
    }

    #[test]
    fn conflicting_duplicates_give_half() {
        let data = vec![s(vec![1.0, 2.0], 0), s(vec![1.0, 2.0], 1)];
        let params = ForestParams {
            n_trees: 1,
            bootstrap: false,
            ..ForestParams::default()
        };
        let m = train_forest(&data, &params, 0).unwrap();
        assert_eq!(m.trees[0].n_nodes(), 1);
        assert_eq!(predict_proba(&m, &[1.0, 2.0]).unwrap(), 0.5);
    }

    #[test]
    fn xor_is_learned() {
        let mut rng = seeded(4);
        let data: Vec<LabeledSample> = (0..200)
            .map(|_| {
                let a: f64 = rng.random_range(-1.0..1.0);
                let b: f64 = rng.random_range(-1.0..1.0);
                s(vec![a, b], ((a > 0.0) ^ (b > 0.0)) as u8)
            })
            .collect();
        let params = ForestParams {
            n_trees: 50,
            max_depth: 6,
            ..ForestParams::default()
        };
        let m = train_forest(&data, &params, 3).unwrap();
        let acc = data.iter().filter(|x| predict(&m, &x.features).unwrap() == x.label).count() as f64 / 200.0;
        assert!(acc >= 0.95, "accuracy {acc}");
    }

    #[test]
    fn single_class_rejected() {
        let data = vec![s(vec![1.0], 1), s(vec![2.0], 1)];
        assert!(matches!(train_forest(&data, &ForestParams::default(), 0), Err(Error::SingleClass)));
    }

    #[test]
    fn dimension_mismatch() {
        let m = train_forest(&separable(), &ForestParams::default(), 1).unwrap();
        assert!(matches!(predict_proba(&m, &[1.0, 2.0]), Err(Error::DimensionMismatch { .. })));
    }

    #[test]
    fn single_tree_leaf_fraction() {
        // Root splits x <= 0.5; the right leaf holds labels {1, 1, 0} on a
        // constant feature value.
        let data = vec![
            s(vec![0.0], 0),
            s(vec![0.0], 0),
            s(vec![1.0], 1),
            s(vec![1.0], 1),
            s(vec![1.0], 0),
        ];
        let params = ForestParams {
            n_trees: 1,
            bootstrap: false,
            ..ForestParams::default()
        };
        let m = train_forest(&data, &params, 0).unwrap();
        assert!((predict_proba(&m, &[1.0]).unwrap() - 2.0 / 3.0).abs() < 1e-15);
        assert_eq!(predict_proba(&m, &[0.0]).unwrap(), 0.0);
    }

    #[test]
    fn order_invariance() {
        let mut data = separable();
        data.push(s(vec![5.0], 1));
        data.push(s(vec![5.0], 0));
        let a = train_forest(&data, &ForestParams::default(), 9).unwrap();
        data.reverse();
        let b = train_forest(&data, &ForestParams::default(), 9).unwrap();
        assert_eq!(a, b);
    }

    #[test]
    fn threshold_reproduces_majority_vote_with_pure_leaves() {
        let data = separable();
        let m = train_forest(&data, &ForestParams::default(), 5).unwrap();
        for x in [0.0, 3.0, 5.0, 7.0, 10.5] {
            let votes = m.trees.iter().filter(|t| t.predict(&[x]) >= 0.5).count();
            let majority = (2 * votes > m.trees.len()) as u8;
            assert_eq!(predict(&m, &[x]).unwrap(), majority);
        }
    }

    #[test]
    fn f1_hand_confusion() {
        // tp = 2, fp = 1, fn = 1
        let truth = [1, 1, 1, 0, 0, 0];
        let pred = [1, 1, 0, 1, 0, 0];
        assert!((f1_score(&truth, &pred) - 4.0 / 6.0).abs() < 1e-15);
    }

    #[test]
    fn auc_with_ties() {
        // pairs (pos, neg): 0.9>0.1, 0.9>0.5, 0.5=0.5 (half), 0.5>0.1
        let truth = [1, 1, 0, 0];
        let scores = [0.9, 0.5, 0.5, 0.1];
        assert!((auc_score(&truth, &scores).unwrap() - 3.5 / 4.0).abs() < 1e-15);
    }

    #[test]
    fn cv_perfect_and_errors() {
        let data = separable();
        let m = evaluate_cv(&data, 5, &ForestParams::default(), 2).unwrap();
        assert!(m.fold_f1.iter().all(|f| *f == 1.0));
        assert!(m.fold_auc.iter().all(|a| *a == 1.0));
        assert!(matches!(
            evaluate_cv(&data[..6], 5, &ForestParams::default(), 2),
            Err(Error::InsufficientClassMembers { .. })
        ));
        assert!(evaluate_cv(&data, 1, &ForestParams::default(), 2).is_err());
    }

    #[test]
    fn sweep_rejects_indivisible_budget() {
        let rep = EmpiricalDistribution {
            counts: vec![1, 1],
            shots: 2,
            label: ClassLabel::Vortical,
        };
        assert!(matches!(
            shots_sweep(&rep, &rep, &[3], 10_000, 5, &ForestParams::default(), 0),
            Err(Error::BudgetNotDivisible { .. })
        ));
    }

    #[test]
    fn tree_json_roundtrip() {
        let m = train_forest(&separable(), &ForestParams { n_trees: 3, ..Default::default() }, 1).unwrap();
        let json = serde_json::to_string(&m).unwrap();
        let back: ForestModel = serde_json::from_str(&json).unwrap();
        assert_eq!(back, m);
    }
}
