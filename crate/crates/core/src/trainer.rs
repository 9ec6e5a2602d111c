//! Fitting detection parameters to labelled vortex counts.
//!
//! Two searches share one objective cache: an exhaustive grid search and a
//! Gaussian-process Bayesian optimizer with expected-improvement
//! acquisition over the same finite lattice.

use std::cmp::Ordering;
use std::collections::HashMap;

use nalgebra::{DMatrix, DVector};
use rand::seq::SliceRandom;
use serde::{Deserialize, Serialize};
use statrs::distribution::{Continuous, ContinuousCDF, Normal};
use statrs::statistics::{Data, Median, OrderStatistics};

use crate::error::{invalid, Error, Result};
use crate::flowgen::FlowField;
use crate::qstate::RegisterLayout;
use crate::rng::seeded;
use crate::seqqvd::{
    default_merge_radius, report_from_scan, scan_field, ContourTemplate, DetectionParams, SpectrumPath, WindowResponse,
};

/// Box of candidate parameters. `gamma_steps` evenly spaced thresholds
/// (inclusive of both ends) discretize the real `gamma` interval.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(default)]
pub struct SearchSpace {
    pub alpha_range: (usize, usize),
    pub beta_range: (usize, usize),
    pub gamma_range: (f64, f64),
    pub gamma_steps: usize,
}

impl Default for SearchSpace {
    fn default() -> Self {
        Self {
            alpha_range: (4, 32),
            beta_range: (1, 8),
            gamma_range: (0.1, 3.0),
            gamma_steps: 30,
        }
    }
}

impl SearchSpace {
    pub fn singleton(p: &DetectionParams) -> Self {
        Self {
            alpha_range: (p.alpha, p.alpha),
            beta_range: (p.beta.round() as usize, p.beta.round() as usize),
            gamma_range: (p.gamma, p.gamma),
            gamma_steps: 1,
        }
    }

    pub fn validate(&self) -> Result<()> {
        let (a0, a1) = self.alpha_range;
        let (b0, b1) = self.beta_range;
        let (g0, g1) = self.gamma_range;
        if a0 < 1 || a0 > a1 {
            return Err(invalid(format!("alpha range [{a0}, {a1}]")));
        }
        if b0 < 1 || b0 > b1 {
            return Err(invalid(format!("beta range [{b0}, {b1}]")));
        }
        if !(g0 > 0.0) || !(g0 <= g1) || !g1.is_finite() {
            return Err(invalid(format!("gamma range [{g0}, {g1}]")));
        }
        if self.gamma_steps == 0 || (self.gamma_steps == 1 && g0 != g1) {
            return Err(invalid("gamma_steps must be >= 1, and 1 only for a point range"));
        }
        Ok(())
    }

    pub fn gammas(&self) -> Vec<f64> {
        let (g0, g1) = self.gamma_range;
        if self.gamma_steps == 1 {
            return vec![g0];
        }
        let n = self.gamma_steps - 1;
        (0..=n).map(|i| g0 + (g1 - g0) * i as f64 / n as f64).collect()
    }

    /// Integer `beta` values whose contour fits the layout's window.
    pub fn valid_betas(&self, layout: &RegisterLayout) -> Vec<usize> {
        (self.beta_range.0..=self.beta_range.1)
            .filter(|&b| ContourTemplate::for_layout(layout, b as f64).is_ok())
            .collect()
    }

    /// Every lattice point in preference order: ascending `alpha`, then
    /// ascending `beta`, then descending `gamma`.
    pub fn lattice(&self, layout: &RegisterLayout) -> Result<Vec<DetectionParams>> {
        self.validate()?;
        let betas = self.valid_betas(layout);
        if betas.is_empty() {
            return Err(invalid(format!(
                "no beta in [{}, {}] gives a valid contour for a {}-pixel window",
                self.beta_range.0,
                self.beta_range.1,
                layout.window_side()
            )));
        }
        let mut gammas = self.gammas();
        gammas.reverse();
        let mut out = Vec::new();
        for alpha in self.alpha_range.0..=self.alpha_range.1 {
            for &beta in &betas {
                for &gamma in &gammas {
                    out.push(DetectionParams {
                        alpha,
                        beta: beta as f64,
                        gamma,
                    });
                }
            }
        }
        Ok(out)
    }

    fn normalize(&self, p: &DetectionParams) -> [f64; 3] {
        let unit = |v: f64, lo: f64, hi: f64| if hi > lo { (v - lo) / (hi - lo) } else { 0.0 };
        [
            unit(p.alpha as f64, self.alpha_range.0 as f64, self.alpha_range.1 as f64),
            unit(p.beta, self.beta_range.0 as f64, self.beta_range.1 as f64),
            unit(p.gamma, self.gamma_range.0, self.gamma_range.1),
        ]
    }
}

/// Preference order used to break objective ties.
fn preference(a: &DetectionParams, b: &DetectionParams) -> Ordering {
    a.alpha
        .cmp(&b.alpha)
        .then(a.beta.total_cmp(&b.beta))
        .then(b.gamma.total_cmp(&a.gamma))
}

/// Mean squared count error.
pub fn mse_from_counts(truth: &[usize], predicted: &[usize]) -> f64 {
    let sum: f64 = truth
        .iter()
        .zip(predicted)
        .map(|(&t, &p)| (t as f64 - p as f64).powi(2))
        .sum();
    sum / truth.len() as f64
}

/// Fraction of exact count matches.
pub fn accuracy_from_counts(truth: &[usize], predicted: &[usize]) -> f64 {
    truth.iter().zip(predicted).filter(|(t, p)| t == p).count() as f64 / truth.len() as f64
}

/// Detected counts for a dataset. Window scans are cached per
/// `(field, alpha, beta)`, so sweeping `gamma` costs only the thresholding.
pub struct CountEvaluator<'a> {
    fields: &'a [FlowField],
    layout: RegisterLayout,
    path: SpectrumPath,
    templates: HashMap<u64, ContourTemplate>,
    scans: HashMap<(usize, usize, u64), Vec<WindowResponse>>,
}

impl<'a> CountEvaluator<'a> {
    pub fn new(fields: &'a [FlowField], layout: &RegisterLayout) -> Self {
        Self::with_path(fields, layout, SpectrumPath::Direct)
    }

    pub fn with_path(fields: &'a [FlowField], layout: &RegisterLayout, path: SpectrumPath) -> Self {
        Self {
            fields,
            layout: *layout,
            path,
            templates: HashMap::new(),
            scans: HashMap::new(),
        }
    }

    pub fn truth(&self) -> Vec<usize> {
        self.fields.iter().map(|f| f.true_count).collect()
    }

    pub fn counts(&mut self, params: &DetectionParams) -> Result<Vec<usize>> {
        params.validate()?;
        let key = params.beta.to_bits();
        if !self.templates.contains_key(&key) {
            let t = ContourTemplate::for_layout(&self.layout, params.beta)?;
            self.templates.insert(key, t);
        }
        let template = &self.templates[&key];
        let radius = default_merge_radius(template);
        let mut out = Vec::with_capacity(self.fields.len());
        for (i, field) in self.fields.iter().enumerate() {
            let scan_key = (i, params.alpha, key);
            if !self.scans.contains_key(&scan_key) {
                let scan = scan_field(field, params.alpha, template, &self.layout, self.path)?;
                self.scans.insert(scan_key, scan);
            }
            out.push(report_from_scan(&self.scans[&scan_key], params.gamma, radius).count);
        }
        Ok(out)
    }

    pub fn mse(&mut self, params: &DetectionParams) -> Result<f64> {
        let c = self.counts(params)?;
        Ok(mse_from_counts(&self.truth(), &c))
    }

    pub fn accuracy(&mut self, params: &DetectionParams) -> Result<f64> {
        let c = self.counts(params)?;
        Ok(accuracy_from_counts(&self.truth(), &c))
    }
}

fn non_empty(dataset: &[FlowField]) -> Result<()> {
    if dataset.is_empty() {
        Err(invalid("dataset is empty"))
    } else {
        Ok(())
    }
}

pub fn mse_loss(dataset: &[FlowField], params: &DetectionParams, layout: &RegisterLayout) -> Result<f64> {
    non_empty(dataset)?;
    CountEvaluator::new(dataset, layout).mse(params)
}

pub fn accuracy(dataset: &[FlowField], params: &DetectionParams, layout: &RegisterLayout) -> Result<f64> {
    non_empty(dataset)?;
    CountEvaluator::new(dataset, layout).accuracy(params)
}

/// Split into train and test sets stratified by true vortex count.
///
/// The train set has `round(train_fraction * n)` fields; per-count quotas
/// use largest remainders. Both sets keep dataset order.
pub fn stratified_split(dataset: &[FlowField], train_fraction: f64, seed: u64) -> Result<(Vec<FlowField>, Vec<FlowField>)> {
    if !(train_fraction > 0.0 && train_fraction < 1.0) {
        return Err(invalid(format!("train fraction {train_fraction} outside (0, 1)")));
    }
    let n = dataset.len();
    let n_train = (train_fraction * n as f64).round() as usize;
    if n_train == 0 || n_train == n {
        return Err(invalid(format!("a {train_fraction} split of {n} fields leaves an empty set")));
    }
    let mut groups: Vec<(usize, Vec<usize>)> = Vec::new();
    for (i, f) in dataset.iter().enumerate() {
        match groups.iter_mut().find(|g| g.0 == f.true_count) {
            Some(g) => g.1.push(i),
            None => groups.push((f.true_count, vec![i])),
        }
    }
    groups.sort_by_key(|g| g.0);
    let mut quotas: Vec<usize> = groups
        .iter()
        .map(|g| (train_fraction * g.1.len() as f64).floor() as usize)
        .collect();
    let mut order: Vec<usize> = (0..groups.len()).collect();
    let rem = |g: usize| train_fraction * groups[g].1.len() as f64 - quotas[g] as f64;
    order.sort_by(|&a, &b| rem(b).total_cmp(&rem(a)).then(a.cmp(&b)));
    let missing = n_train - quotas.iter().sum::<usize>();
    for &g in order.iter().take(missing) {
        quotas[g] += 1;
    }
    let mut rng = seeded(seed);
    let mut is_train = vec![false; n];
    for (g, quota) in groups.iter_mut().zip(&quotas) {
        g.1.shuffle(&mut rng);
        for &i in &g.1[..*quota] {
            is_train[i] = true;
        }
    }
    let (train, test): (Vec<_>, Vec<_>) = dataset.iter().cloned().zip(&is_train).partition(|(_, t)| **t);
    Ok((train.into_iter().map(|x| x.0).collect(), test.into_iter().map(|x| x.0).collect()))
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct GridPoint {
    pub params: DetectionParams,
    pub mse: f64,
    pub accuracy: f64,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct GridResult {
    pub best: GridPoint,
    pub table: Vec<GridPoint>,
}

/// Exhaustive search for the minimum-MSE lattice point.
pub fn grid_search(dataset: &[FlowField], space: &SearchSpace, layout: &RegisterLayout) -> Result<GridResult> {
    non_empty(dataset)?;
    let lattice = space.lattice(layout)?;
    let mut eval = CountEvaluator::new(dataset, layout);
    let truth = eval.truth();
    let mut table = Vec::with_capacity(lattice.len());
    for params in lattice {
        let c = eval.counts(&params)?;
        table.push(GridPoint {
            params,
            mse: mse_from_counts(&truth, &c),
            accuracy: accuracy_from_counts(&truth, &c),
        });
    }
    let best = table
        .iter()
        .min_by(|a, b| a.mse.total_cmp(&b.mse).then(preference(&a.params, &b.params)))
        .cloned()
        .expect("lattice is non-empty");
    Ok(GridResult { best, table })
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize, Default)]
#[serde(rename_all = "snake_case")]
pub enum Objective {
    #[default]
    Mse,
    /// Maximize exact-count accuracy (minimizes `1 - accuracy`).
    Accuracy,
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize, Default)]
#[serde(rename_all = "snake_case")]
pub enum Acquisition {
    #[default]
    ExpectedImprovement,
    /// Next unevaluated lattice point in preference order.
    Exhaustive,
}

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
#[serde(default)]
pub struct BayesConfig {
    pub epochs: usize,
    pub initial_points: usize,
    pub length_scale: f64,
    pub nugget: f64,
    pub objective: Objective,
    pub acquisition: Acquisition,
}

impl Default for BayesConfig {
    fn default() -> Self {
        Self {
            epochs: 20,
            initial_points: 5,
            length_scale: 0.2,
            nugget: 1e-6,
            objective: Objective::Mse,
            acquisition: Acquisition::ExpectedImprovement,
        }
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct Evaluation {
    pub params: DetectionParams,
    pub train_mse: f64,
    pub train_accuracy: f64,
    pub loss: f64,
}

/// State after one epoch. All metrics refer to the best parameters so far.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct EpochRecord {
    pub epoch: usize,
    pub train_loss: f64,
    pub train_mse: f64,
    pub test_mse: f64,
    /// Exact-count accuracy on the test set.
    pub accuracy: f64,
    pub params: DetectionParams,
    /// Point evaluated during this epoch, if any remained.
    pub proposed: Option<DetectionParams>,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct LossHistory {
    pub seed: u64,
    pub objective: Objective,
    pub initial: Vec<Evaluation>,
    pub epochs: Vec<EpochRecord>,
}

impl LossHistory {
    pub fn best(&self) -> &EpochRecord {
        self.epochs.last().expect("at least one epoch")
    }

    pub fn to_csv(&self) -> String {
        let mut out = String::from("epoch,train_mse,test_mse,accuracy,alpha,beta,gamma\n");
        for e in &self.epochs {
            out.push_str(&format!(
                "{},{},{},{},{},{},{}\n",
                e.epoch, e.train_mse, e.test_mse, e.accuracy, e.params.alpha, e.params.beta, e.params.gamma
            ));
        }
        out
    }
}

struct Surrogate {
    x: Vec<[f64; 3]>,
    alpha: DVector<f64>,
    chol: nalgebra::Cholesky<f64, nalgebra::Dyn>,
    mean: f64,
    scale: f64,
    length_scale: f64,
}

fn rbf(a: &[f64; 3], b: &[f64; 3], l: f64) -> f64 {
    let d2: f64 = a.iter().zip(b).map(|(x, y)| (x - y).powi(2)).sum();
    (-d2 / (2.0 * l * l)).exp()
}

impl Surrogate {
    /// Zero-mean GP with unit signal variance on standardized targets.
    fn fit(x: Vec<[f64; 3]>, y: &[f64], length_scale: f64, nugget: f64) -> Result<Self> {
        let n = x.len();
        let mean = y.iter().sum::<f64>() / n as f64;
        let sd = (y.iter().map(|v| (v - mean).powi(2)).sum::<f64>() / n as f64).sqrt();
        let scale = if sd > 0.0 { sd } else { 1.0 };
        let ys = DVector::from_iterator(n, y.iter().map(|v| (v - mean) / scale));
        let k = DMatrix::from_fn(n, n, |i, j| rbf(&x[i], &x[j], length_scale) + if i == j { nugget } else { 0.0 });
        let chol = k
            .cholesky()
            .ok_or_else(|| Error::InvalidParameter("surrogate kernel matrix is not positive definite".into()))?;
        let alpha = chol.solve(&ys);
        Ok(Self {
            x,
            alpha,
            chol,
            mean,
            scale,
            length_scale,
        })
    }

    /// Posterior mean and standard deviation in standardized units.
    fn predict(&self, p: &[f64; 3]) -> (f64, f64) {
        let k = DVector::from_iterator(self.x.len(), self.x.iter().map(|xi| rbf(xi, p, self.length_scale)));
        let mu = k.dot(&self.alpha);
        let v = self.chol.solve(&k);
        let var = (1.0 - k.dot(&v)).max(0.0);
        (mu, var.sqrt())
    }

    fn standardize(&self, y: f64) -> f64 {
        (y - self.mean) / self.scale
    }
}

/// Expected improvement below `best` for a Gaussian `(mu, sigma)`.
pub fn expected_improvement(mu: f64, sigma: f64, best: f64) -> f64 {
    let gain = best - mu;
    if sigma <= 1e-12 {
        return gain.max(0.0);
    }
    let z = gain / sigma;
    let n = Normal::standard();
    gain * n.cdf(z) + sigma * n.pdf(z)
}

/// Bayesian optimization over the space lattice.
///
/// `initial_points` random lattice points seed a Gaussian-process surrogate
/// (RBF kernel on unit-scaled parameters). Each epoch evaluates the
/// unevaluated point of maximal expected improvement and logs the best
/// parameters so far together with their test metrics. A single-point space
/// is solved by [`grid_search`].
pub fn bayes_opt(
    train: &[FlowField],
    test: &[FlowField],
    space: &SearchSpace,
    layout: &RegisterLayout,
    config: &BayesConfig,
    seed: u64,
) -> Result<LossHistory> {
    if config.epochs < 1 {
        return Err(invalid("epochs must be >= 1"));
    }
    non_empty(train)?;
    non_empty(test)?;
    let lattice = space.lattice(layout)?;
    let mut train_eval = CountEvaluator::new(train, layout);
    let mut test_eval = CountEvaluator::new(test, layout);
    let truth = train_eval.truth();
    let test_truth = test_eval.truth();
    let mut evaluate = |p: &DetectionParams| -> Result<Evaluation> {
        let c = train_eval.counts(p)?;
        let train_mse = mse_from_counts(&truth, &c);
        let train_accuracy = accuracy_from_counts(&truth, &c);
        let loss = match config.objective {
            Objective::Mse => train_mse,
            Objective::Accuracy => 1.0 - train_accuracy,
        };
        Ok(Evaluation {
            params: *p,
            train_mse,
            train_accuracy,
            loss,
        })
    };
    let mut record = |epoch: usize, best: &Evaluation, proposed: Option<DetectionParams>| -> Result<EpochRecord> {
        let c = test_eval.counts(&best.params)?;
        Ok(EpochRecord {
            epoch,
            train_loss: best.loss,
            train_mse: best.train_mse,
            test_mse: mse_from_counts(&test_truth, &c),
            accuracy: accuracy_from_counts(&test_truth, &c),
            params: best.params,
            proposed,
        })
    };
    let better = |a: &Evaluation, b: &Evaluation| a.loss.total_cmp(&b.loss).then(preference(&a.params, &b.params)) == Ordering::Less;

    if lattice.len() == 1 {
        let result = grid_search(train, space, layout)?;
        let best = evaluate(&result.best.params)?;
        let epochs = (1..=config.epochs)
            .map(|e| record(e, &best, (e == 1).then_some(best.params)))
            .collect::<Result<Vec<_>>>()?;
        return Ok(LossHistory {
            seed,
            objective: config.objective,
            initial: Vec::new(),
            epochs,
        });
    }

    let mut evaluated = vec![false; lattice.len()];
    let mut history: Vec<(usize, Evaluation)> = Vec::new();
    let mut initial = Vec::new();
    if config.acquisition == Acquisition::ExpectedImprovement {
        let mut idx: Vec<usize> = (0..lattice.len()).collect();
        idx.shuffle(&mut seeded(seed));
        for &i in idx.iter().take(config.initial_points.min(lattice.len())) {
            let e = evaluate(&lattice[i])?;
            evaluated[i] = true;
            initial.push(e.clone());
            history.push((i, e));
        }
    }
    let mut best: Option<Evaluation> = history
        .iter()
        .map(|h| &h.1)
        .fold(None, |acc: Option<&Evaluation>, e| match acc {
            Some(b) if !better(e, b) => Some(b),
            _ => Some(e),
        })
        .cloned();
    let normalized: Vec<[f64; 3]> = lattice.iter().map(|p| space.normalize(p)).collect();

    let mut epochs = Vec::with_capacity(config.epochs);
    for epoch in 1..=config.epochs {
        let next = match config.acquisition {
            Acquisition::Exhaustive => evaluated.iter().position(|e| !e),
            Acquisition::ExpectedImprovement => {
                if evaluated.iter().all(|e| *e) {
                    None
                } else {
                    let x: Vec<[f64; 3]> = history.iter().map(|h| normalized[h.0]).collect();
                    let y: Vec<f64> = history.iter().map(|h| h.1.loss).collect();
                    let gp = Surrogate::fit(x, &y, config.length_scale, config.nugget)?;
                    let target = gp.standardize(y.iter().cloned().fold(f64::INFINITY, f64::min));
                    let mut pick: Option<(usize, f64)> = None;
                    for (i, p) in normalized.iter().enumerate() {
                        if evaluated[i] {
                            continue;
                        }
                        let (mu, sigma) = gp.predict(p);
                        let ei = expected_improvement(mu, sigma, target);
                        if pick.is_none_or(|(_, b)| ei > b) {
                            pick = Some((i, ei));
                        }
                    }
                    pick.map(|p| p.0)
                }
            }
        };
        let proposed = match next {
            Some(i) => {
                let e = evaluate(&lattice[i])?;
                evaluated[i] = true;
                if best.as_ref().is_none_or(|b| better(&e, b)) {
                    best = Some(e.clone());
                }
                history.push((i, e));
                Some(lattice[i])
            }
            None => None,
        };
        let b = best.as_ref().expect("at least one evaluation");
        epochs.push(record(epoch, b, proposed)?);
    }
    Ok(LossHistory {
        seed,
        objective: config.objective,
        initial,
        epochs,
    })
}

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct Quartiles {
    pub q1: f64,
    pub median: f64,
    pub q3: f64,
}

impl Quartiles {
    pub fn of(values: &[f64]) -> Result<Self> {
        if values.is_empty() {
            return Err(invalid("no values to summarize"));
        }
        let mut d = Data::new(values.to_vec());
        Ok(Self {
            q1: d.lower_quartile(),
            median: d.median(),
            q3: d.upper_quartile(),
        })
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct EpochSummary {
    pub epoch: usize,
    pub train_mse: Quartiles,
    pub test_mse: Quartiles,
    pub accuracy: Quartiles,
}

/// Per-epoch quartiles across seeds.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct TrainingSummary {
    pub seeds: Vec<u64>,
    pub epochs: Vec<EpochSummary>,
    pub final_params: Vec<DetectionParams>,
}

pub fn summarize(histories: &[LossHistory]) -> Result<TrainingSummary> {
    let n_epochs = histories.first().ok_or_else(|| invalid("no histories"))?.epochs.len();
    if histories.iter().any(|h| h.epochs.len() != n_epochs) {
        return Err(invalid("histories have different lengths"));
    }
    let epochs = (0..n_epochs)
        .map(|e| {
            let col = |f: fn(&EpochRecord) -> f64| histories.iter().map(|h| f(&h.epochs[e])).collect::<Vec<_>>();
            Ok(EpochSummary {
                epoch: e + 1,
                train_mse: Quartiles::of(&col(|r| r.train_mse))?,
                test_mse: Quartiles::of(&col(|r| r.test_mse))?,
                accuracy: Quartiles::of(&col(|r| r.accuracy))?,
            })
        })
        .collect::<Result<Vec<_>>>()?;
    Ok(TrainingSummary {
        seeds: histories.iter().map(|h| h.seed).collect(),
        epochs,
        final_params: histories.iter().map(|h| h.best().params).collect(),
    })
}
