use rand::seq::SliceRandom;
use rand::Rng;
use statrs::statistics::{Data, Median};

use qvd::classifier::{evaluate_cv, predict_proba, shots_sweep, train_forest, ForestParams, LabeledSample};
use qvd::flowgen::{
    eval_lamb_oseen, generate_balanced_dataset, generate_dataset, CountRange, DatasetSpec, FlowField, ScalarGrid,
    VortexParams,
};
use qvd::parqvd::{
    density_spectrum, representative_from_spectra, sample_empirical, total_variation, ClassLabel,
    DensitySpectrum, EmpiricalDistribution, ParallelConfig,
};
use qvd::qstate::{sample, RegisterLayout, StateVector};
use qvd::rng::seeded;
use qvd::seqqvd::{detect_field, extract_contour, power_spectrum, ContourTemplate, DetectionParams};
use qvd::trainer::{bayes_opt, grid_search, stratified_split, BayesConfig, Objective, SearchSpace};

fn layout() -> RegisterLayout {
    RegisterLayout::for_grid(200, 200).unwrap()
}

/// Noise-free single vortex on a 200x200 grid, normalized to unit peak.
fn single_vortex(cx: f64, cy: f64) -> FlowField {
    let v = VortexParams::new(cx, cy, 1.0, 1.0, 10.0, 1).unwrap();
    let h = 1e-4;
    let rv = |r: f64| r * eval_lamb_oseen(&v, r);
    let grid = ScalarGrid::from_fn(200, 200, |x, y| {
        let r = (x as f64 - cx).hypot(y as f64 - cy);
        if r < h {
            2.0 * eval_lamb_oseen(&v, h) / h
        } else {
            (rv(r + h) - rv(r - h)) / (2.0 * h) / r
        }
    });
    let max = grid.max_abs();
    let data = grid.data.iter().map(|x| x / max).collect();
    FlowField::new(ScalarGrid { data, ..grid }, vec![v], 0).unwrap()
}

#[test]
fn centered_vortex_contour_is_flat_and_detected() {
    let f = single_vortex(100.0, 100.0);
    let template = ContourTemplate::for_layout(&layout(), 3.0).unwrap();
    let c = extract_contour(&f, (84, 84), &template).unwrap();
    let mean = c.iter().sum::<f64>() / c.len() as f64;
    assert!(mean > 0.0);
    assert!(c.iter().all(|v| (v - mean).abs() < 0.1 * mean));
    let ps = power_spectrum(&c, 3).unwrap();
    let (peak, k) = ps.low_band_peak();
    assert_eq!(k, 0);
    assert!(peak >= 0.9);
    let r = detect_field(&f, &DetectionParams::default(), &layout()).unwrap();
    assert_eq!(r.count, 1);
    let (x, y) = r.unique_centers[0];
    assert!((x - 100.0).hypot(y - 100.0) < template.radius);
}

#[test]
fn background_window_is_weak() {
    let spec = DatasetSpec {
        n_fields: 1,
        vortex_count_range: CountRange::new(1, 1),
        seed: 4,
        ..DatasetSpec::default()
    };
    let f = generate_dataset(&spec).unwrap().remove(0);
    let v = f.vortices[0];
    let template = ContourTemplate::for_layout(&layout(), 3.0).unwrap();
    // Window farthest from the vortex among the four corners.
    let corners = [(0usize, 0usize), (168, 0), (0, 168), (168, 168)];
    let far = *corners
        .iter()
        .max_by(|a, b| {
            let d = |c: &(usize, usize)| (c.0 as f64 + 16.0 - v.center_x).hypot(c.1 as f64 + 16.0 - v.center_y);
            d(a).total_cmp(&d(b))
        })
        .unwrap();
    let background = power_spectrum(&extract_contour(&f, far, &template).unwrap(), 3).unwrap();
    assert!(background.low_band_peak().0 < 0.9);
    let origin = ((v.center_x.round() as usize) - 16, (v.center_y.round() as usize) - 16);
    let vortex = power_spectrum(&extract_contour(&f, origin, &template).unwrap(), 3).unwrap();
    assert!(vortex.low_band_peak().0 >= 0.9);
}

fn spectra(fields: &[FlowField]) -> Vec<DensitySpectrum> {
    let cfg = ParallelConfig::for_grid(200, 200, &layout()).unwrap();
    fields
        .iter()
        .map(|f| density_spectrum(f, &DetectionParams::default(), &cfg, &layout()).unwrap())
        .collect()
}

fn mean_spectrum(s: &[DensitySpectrum]) -> Vec<f64> {
    let mut m = vec![0.0; s[0].probs.len()];
    for x in s {
        for (a, b) in m.iter_mut().zip(&x.probs) {
            *a += b / s.len() as f64;
        }
    }
    m
}

#[test]
fn density_spectra_separate_classes() {
    let base = DatasetSpec {
        seed: 21,
        ..DatasetSpec::default()
    };
    let (nv, v) = generate_balanced_dataset(&base, 30, CountRange::new(1, 8)).unwrap();
    let (snv, sv) = (spectra(&nv), spectra(&v));
    for s in snv.iter().chain(&sv) {
        assert_eq!(s.probs.len(), 256);
        assert!(s.probs.iter().all(|p| *p >= 0.0));
        assert!((s.probs.iter().sum::<f64>() - 1.0).abs() < 1e-9);
    }
    let (mnv, mv) = (mean_spectrum(&snv), mean_spectrum(&sv));
    let within = |s: &[DensitySpectrum], m: &[f64]| {
        s.iter().map(|x| total_variation(&x.probs, m)).sum::<f64>() / s.len() as f64
    };
    let between = total_variation(&mnv, &mv);
    assert!(between > within(&snv, &mnv), "{between}");
    assert!(between > within(&sv, &mv), "{between}");
}

#[test]
fn isolated_vortex_spreads_ancilla_mass() {
    let s = spectra(&[single_vortex(60.0, 120.0)]).remove(0);
    assert!(s.probs[0] < 0.5);
    assert!(s.probs[1..].iter().filter(|p| **p > 1e-3).count() >= 4);
}

fn representatives(seed: u64) -> (EmpiricalDistribution, EmpiricalDistribution) {
    let base = DatasetSpec {
        seed,
        ..DatasetSpec::default()
    };
    let (nv, v) = generate_balanced_dataset(&base, 10, CountRange::new(1, 8)).unwrap();
    (
        representative_from_spectra(&spectra(&nv), 10_000, 1, ClassLabel::NonVortical).unwrap(),
        representative_from_spectra(&spectra(&v), 10_000, 2, ClassLabel::Vortical).unwrap(),
    )
}

#[test]
fn dense_histogram_sweep_needs_one_distribution() {
    let (nv, v) = representatives(5);
    // 10,000 shots leaves one histogram per class: too few for any folds.
    assert!(shots_sweep(&nv, &v, &[10_000], 10_000, 5, &ForestParams::default(), 0).is_err());
    let points = shots_sweep(&nv, &v, &[10_000], 50_000, 5, &ForestParams::default(), 0).unwrap();
    assert_eq!(points.len(), 1);
    assert_eq!(points[0].n_distributions, 5);
}

#[test]
fn histogram_count_follows_budget() {
    let (nv, _) = representatives(5);
    assert_eq!(sample_empirical(&nv, 10_000, 10_000, 0).unwrap().len(), 1);
    let small = sample_empirical(&nv, 5, 10_000, 0).unwrap();
    assert_eq!(small.len(), 2000);
    assert!(small.iter().all(|d| d.counts.iter().sum::<u64>() == 5));
}

#[test]
fn identical_classes_are_indistinguishable() {
    let (nv, _) = representatives(6);
    let twin = EmpiricalDistribution {
        label: ClassLabel::Vortical,
        ..nv.clone()
    };
    let aucs: Vec<f64> = (0..3)
        .map(|seed| shots_sweep(&nv, &twin, &[100], 50_000, 5, &ForestParams::default(), seed).unwrap()[0].metrics.auc)
        .collect();
    let auc = Data::new(aucs).median();
    assert!((auc - 0.5).abs() < 0.1, "{auc}");
}

#[test]
fn shuffled_labels_give_chance_auc() {
    let mut rng = seeded(8);
    let mut samples: Vec<LabeledSample> = (0..400)
        .map(|i| LabeledSample {
            features: (0..8).map(|_| rng.random_range(0.0..1.0)).collect(),
            label: (i % 2) as u8,
        })
        .collect();
    let mut labels: Vec<u8> = samples.iter().map(|s| s.label).collect();
    labels.shuffle(&mut rng);
    for (s, l) in samples.iter_mut().zip(labels) {
        s.label = l;
    }
    let m = evaluate_cv(&samples, 5, &ForestParams::default(), 3).unwrap();
    assert!((m.auc - 0.5).abs() < 0.1, "{}", m.auc);
}

#[test]
fn unanimous_forest_scores_are_exact() {
    let samples: Vec<LabeledSample> = (0..20)
        .map(|i| LabeledSample {
            features: vec![if i < 10 { 0.0 } else { 1.0 }],
            label: (i >= 10) as u8,
        })
        .collect();
    let m = train_forest(&samples, &ForestParams::default(), 2).unwrap();
    assert_eq!(predict_proba(&m, &[0.0]).unwrap(), 0.0);
    assert_eq!(predict_proba(&m, &[1.0]).unwrap(), 1.0);
}

#[test]
fn more_shots_classify_better() {
    let (nv, v) = representatives(9);
    let mut f1 = [Vec::new(), Vec::new()];
    for seed in 0..5 {
        let pts = shots_sweep(&nv, &v, &[1, 100], 10_000, 5, &ForestParams::default(), seed).unwrap();
        f1[0].push(pts[0].metrics.f1);
        f1[1].push(pts[1].metrics.f1);
    }
    let med = |v: &Vec<f64>| Data::new(v.clone()).median();
    assert!(med(&f1[1]) >= med(&f1[0]));
}

#[test]
fn sampling_converges_with_shots() {
    let mut rng = seeded(12);
    let values: Vec<f64> = (0..16).map(|_| rng.random_range(-1.0..1.0)).collect();
    let s = StateVector::from_real(&values).unwrap().normalized().unwrap();
    let probs = s.probabilities();
    let tvd = |shots: u64| {
        let h = sample(&s, shots, 3);
        let freq: Vec<f64> = h.iter().map(|&c| c as f64 / shots as f64).collect();
        total_variation(&freq, &probs)
    };
    let ladder: Vec<f64> = [100, 10_000, 1_000_000].iter().map(|&n| tvd(n)).collect();
    assert!(ladder.windows(2).all(|w| w[1] < w[0]), "{ladder:?}");
}

fn dataset() -> Vec<FlowField> {
    generate_dataset(&DatasetSpec {
        seed: 7,
        ..DatasetSpec::default()
    })
    .unwrap()
}

#[test]
fn known_perfect_point_is_found() {
    let data: Vec<FlowField> = dataset().into_iter().take(6).collect();
    let lay = layout();
    // Search a space that includes the point with zero training error.
    let full = grid_search(&data, &SearchSpace::default(), &lay).unwrap();
    assert_eq!(full.best.mse, 0.0, "no perfect point on this subset");
    let p = full.best.params;
    let space = SearchSpace {
        alpha_range: (p.alpha - 1, p.alpha + 1),
        beta_range: (2, 3),
        gamma_range: (p.gamma, p.gamma + 0.5),
        gamma_steps: 6,
    };
    let g = grid_search(&data, &space, &lay).unwrap();
    assert_eq!(g.best.mse, 0.0);
}

#[test]
fn three_point_space_is_exhausted() {
    let data: Vec<FlowField> = dataset().into_iter().take(10).collect();
    let (train, test) = stratified_split(&data, 0.7, 0).unwrap();
    let space = SearchSpace {
        alpha_range: (8, 8),
        beta_range: (3, 3),
        gamma_range: (0.3, 2.7),
        gamma_steps: 3,
    };
    let grid = grid_search(&train, &space, &layout()).unwrap();
    let cfg = BayesConfig {
        epochs: 3,
        ..BayesConfig::default()
    };
    let h = bayes_opt(&train, &test, &space, &layout(), &cfg, 4).unwrap();
    assert_eq!(h.best().train_mse, grid.best.mse);
    assert_eq!(h.best().params, grid.best.params);
}

#[test]
fn accuracy_grows_with_training_set_size() {
    let data = dataset();
    let cfg = BayesConfig {
        objective: Objective::Accuracy,
        ..BayesConfig::default()
    };
    let mut medians = Vec::new();
    for size in [5usize, 10, 20, 30, 45] {
        let mut acc = Vec::new();
        for seed in 0..5 {
            let (pool, test) = stratified_split(&data, 0.75, seed).unwrap();
            let train = if size == pool.len() {
                pool
            } else {
                stratified_split(&pool, size as f64 / pool.len() as f64, seed).unwrap().0
            };
            assert_eq!(train.len(), size);
            let h = bayes_opt(&train, &test, &SearchSpace::default(), &layout(), &cfg, seed).unwrap();
            acc.push(h.best().accuracy);
        }
        medians.push(Data::new(acc).median());
    }
    assert!(medians.windows(2).all(|w| w[1] >= w[0] - 0.1), "{medians:?}");
}

#[test]
fn generator_example_dataset() {
    let spec = DatasetSpec {
        n_fields: 60,
        vortex_count_range: CountRange::new(4, 8),
        seed: 7,
        ..DatasetSpec::default()
    };
    let data = generate_dataset(&spec).unwrap();
    assert_eq!(data.len(), 60);
    assert!(data.iter().all(|f| (4..=8).contains(&f.true_count)));
}
