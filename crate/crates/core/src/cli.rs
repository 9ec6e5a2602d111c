//! Command-line front end.
//!
//! Every command resolves a [`RunConfig`] from an optional JSON file and
//! flag overrides, echoes it to `<out>/config.json`, and writes its data
//! products next to it. Exit codes: 0 success, 1 invalid input, 2 runtime
//! failure.

use std::ffi::OsString;
use std::fs;
use std::path::{Path, PathBuf};

use clap::{Args, Parser, Subcommand, ValueEnum};
use serde::{Deserialize, Serialize};

use crate::classifier::{empirical_samples, metrics_csv, shots_sweep, train_forest, ForestParams};
use crate::error::{invalid, Error, Result};
use crate::flowgen::{generate_balanced_dataset, generate_dataset, CountRange, DatasetSpec, FlowField};
use crate::io::{load_dataset, render_ppm, save_dataset, write_json, Circle};
use crate::parqvd::{density_spectrum, representative_from_spectra, ClassLabel, DensitySpectrum, ParallelConfig};
use crate::qstate::RegisterLayout;
use crate::rng::derive_seed;
use crate::seqqvd::{
    default_merge_radius, extract_contour, report_from_scan, scan_field, window_peaks_csv, window_positions,
    ContourTemplate, DetectionParams, SpectrumAnalyzer, SpectrumPath,
};
use crate::trainer::{
    accuracy_from_counts, bayes_opt, grid_search, mse_from_counts, stratified_split, summarize, BayesConfig,
    Objective, SearchSpace,
};

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
#[serde(default)]
pub struct ParallelSettings {
    pub n_a: usize,
    pub selected_k: usize,
    pub truncate_qubits: usize,
}

impl Default for ParallelSettings {
    fn default() -> Self {
        Self {
            n_a: 8,
            selected_k: 0,
            truncate_qubits: 8,
        }
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Default, Serialize, Deserialize, ValueEnum)]
#[serde(rename_all = "snake_case")]
pub enum TrainMethod {
    #[default]
    Bayes,
    Grid,
}

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
#[serde(default)]
pub struct TrainingSettings {
    pub split: f64,
    pub seeds: usize,
    pub method: TrainMethod,
}

impl Default for TrainingSettings {
    fn default() -> Self {
        Self {
            split: 0.75,
            seeds: 5,
            method: TrainMethod::Bayes,
        }
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(default)]
pub struct ClassifySettings {
    pub shots: Vec<u64>,
    pub budget: u64,
    pub shots_per_field: u64,
    pub k_folds: usize,
    /// Fields per class when no dataset is given.
    pub n_per_class: usize,
    pub vortical_counts: CountRange,
}

impl Default for ClassifySettings {
    fn default() -> Self {
        Self {
            shots: vec![1, 5, 10, 100, 1000],
            budget: 10_000,
            shots_per_field: 10_000,
            k_folds: 5,
            n_per_class: 30,
            vortical_counts: CountRange::new(1, 8),
        }
    }
}

/// Fully resolved parameters of a run.
#[derive(Debug, Clone, PartialEq, Default, Serialize, Deserialize)]
#[serde(default)]
pub struct RunConfig {
    pub seed: u64,
    pub data: Option<PathBuf>,
    pub dataset: DatasetSpec,
    /// `None` derives the layout from the field size.
    pub layout: Option<RegisterLayout>,
    pub detection: DetectionParams,
    /// `None` uses twice the contour radius.
    pub merge_radius: Option<f64>,
    pub spectrum_path: SpectrumPath,
    pub parallel: ParallelSettings,
    pub search: SearchSpace,
    pub bayes: BayesConfig,
    pub training: TrainingSettings,
    pub forest: ForestParams,
    pub classify: ClassifySettings,
}

#[derive(Debug, Parser)]
#[command(name = "qvd", version, about = "Quantum vortex detection emulator")]
struct Cli {
    #[command(subcommand)]
    command: Command,
}

#[derive(Debug, Subcommand)]
enum Command {
    /// Generate a synthetic Lamb-Oseen dataset.
    Gen(GenArgs),
    /// Run sliding-window detection on a dataset.
    Detect(DetectArgs),
    /// Fit detection parameters.
    Train(TrainArgs),
    /// Classify vortical vs non-vortical density spectra.
    Classify(ClassifyArgs),
    /// Export window power spectra and density spectra.
    Spectra(SpectraArgs),
}

#[derive(Debug, Args)]
struct Common {
    /// JSON run configuration; flags override its values.
    #[arg(long)]
    config: Option<PathBuf>,
    /// Output directory.
    #[arg(long)]
    out: PathBuf,
}

#[derive(Debug, Args)]
struct DetectionFlags {
    #[arg(long)]
    alpha: Option<usize>,
    #[arg(long)]
    beta: Option<f64>,
    #[arg(long)]
    gamma: Option<f64>,
}

#[derive(Debug, Clone, Copy, ValueEnum)]
enum PathArg {
    Direct,
    Circuit,
}

#[derive(Debug, Clone, Copy, ValueEnum)]
enum ObjectiveArg {
    Mse,
    Accuracy,
}

#[derive(Debug, Args)]
struct GenArgs {
    #[command(flatten)]
    common: Common,
    /// Number of fields.
    #[arg(long)]
    n: Option<usize>,
    #[arg(long)]
    m_min: Option<usize>,
    #[arg(long)]
    m_max: Option<usize>,
    #[arg(long)]
    width: Option<usize>,
    #[arg(long)]
    height: Option<usize>,
    #[arg(long)]
    seed: Option<u64>,
}

#[derive(Debug, Args)]
struct DetectArgs {
    #[command(flatten)]
    common: Common,
    /// Dataset directory or single field file.
    #[arg(long)]
    data: Option<PathBuf>,
    #[command(flatten)]
    params: DetectionFlags,
    #[arg(long)]
    merge_radius: Option<f64>,
    #[arg(long, value_enum)]
    path: Option<PathArg>,
    /// Also write a PPM heatmap with detection overlays per field.
    #[arg(long)]
    render: bool,
}

#[derive(Debug, Args)]
struct TrainArgs {
    #[command(flatten)]
    common: Common,
    #[arg(long)]
    data: Option<PathBuf>,
    #[arg(long)]
    epochs: Option<usize>,
    #[arg(long)]
    seeds: Option<usize>,
    /// Training fraction of the stratified split.
    #[arg(long)]
    split: Option<f64>,
    #[arg(long, value_enum)]
    method: Option<TrainMethod>,
    #[arg(long, value_enum)]
    objective: Option<ObjectiveArg>,
    /// `min:max`
    #[arg(long)]
    alpha_range: Option<String>,
    /// `min:max`
    #[arg(long)]
    beta_range: Option<String>,
    /// `min:max`
    #[arg(long)]
    gamma_range: Option<String>,
    #[arg(long)]
    gamma_steps: Option<usize>,
    #[arg(long)]
    seed: Option<u64>,
}

#[derive(Debug, Args)]
struct ClassifyArgs {
    #[command(flatten)]
    common: Common,
    /// Dataset directory; fields with no vortices form the non-vortical
    /// class. Without it a balanced dataset is generated.
    #[arg(long)]
    data: Option<PathBuf>,
    /// Comma-separated shot counts.
    #[arg(long, value_delimiter = ',')]
    shots: Option<Vec<u64>>,
    #[arg(long)]
    budget: Option<u64>,
    #[arg(long)]
    shots_per_field: Option<u64>,
    #[arg(long)]
    folds: Option<usize>,
    #[arg(long)]
    n_per_class: Option<usize>,
    #[command(flatten)]
    params: DetectionFlags,
    #[arg(long)]
    seed: Option<u64>,
}

#[derive(Debug, Args)]
struct SpectraArgs {
    #[command(flatten)]
    common: Common,
    #[arg(long)]
    data: Option<PathBuf>,
    /// Field index; all fields when omitted.
    #[arg(long)]
    field: Option<usize>,
    #[command(flatten)]
    params: DetectionFlags,
}

/// Parse `args` (including the program name), run, and return the exit code.
pub fn run<I, T>(args: I) -> i32
where
    I: IntoIterator<Item = T>,
    T: Into<OsString> + Clone,
{
    let cli = match Cli::try_parse_from(args) {
        Ok(c) => c,
        Err(e) => {
            let _ = e.print();
            return if e.use_stderr() { 1 } else { 0 };
        }
    };
    match dispatch(cli.command) {
        Ok(()) => 0,
        Err(e) => {
            eprintln!("error: {e}");
            exit_code(&e)
        }
    }
}

pub fn exit_code(e: &Error) -> i32 {
    match e {
        Error::Io(_)
        | Error::Json(_)
        | Error::Format(_)
        | Error::PlacementFailure { .. }
        | Error::EmptyField
        | Error::ProjectionEmpty => 2,
        _ => 1,
    }
}

fn dispatch(command: Command) -> Result<()> {
    match command {
        Command::Gen(a) => {
            let mut cfg = load_config(&a.common)?;
            let d = &mut cfg.dataset;
            set(&mut d.n_fields, a.n);
            set(&mut d.vortex_count_range.min, a.m_min);
            set(&mut d.vortex_count_range.max, a.m_max);
            set(&mut d.width, a.width);
            set(&mut d.height, a.height);
            set(&mut d.seed, a.seed);
            cmd_gen(&cfg, &a.common.out)
        }
        Command::Detect(a) => {
            let mut cfg = load_config(&a.common)?;
            set_opt(&mut cfg.data, a.data);
            apply_detection(&mut cfg, &a.params);
            set_opt(&mut cfg.merge_radius, a.merge_radius);
            if let Some(p) = a.path {
                cfg.spectrum_path = match p {
                    PathArg::Direct => SpectrumPath::Direct,
                    PathArg::Circuit => SpectrumPath::Circuit,
                };
            }
            cmd_detect(&cfg, &a.common.out, a.render)
        }
        Command::Train(a) => {
            let mut cfg = load_config(&a.common)?;
            set_opt(&mut cfg.data, a.data);
            set(&mut cfg.bayes.epochs, a.epochs);
            set(&mut cfg.training.seeds, a.seeds);
            set(&mut cfg.training.split, a.split);
            set(&mut cfg.training.method, a.method);
            set(&mut cfg.seed, a.seed);
            if let Some(o) = a.objective {
                cfg.bayes.objective = match o {
                    ObjectiveArg::Mse => Objective::Mse,
                    ObjectiveArg::Accuracy => Objective::Accuracy,
                };
            }
            if let Some(r) = &a.alpha_range {
                cfg.search.alpha_range = parse_range(r)?;
            }
            if let Some(r) = &a.beta_range {
                cfg.search.beta_range = parse_range(r)?;
            }
            if let Some(r) = &a.gamma_range {
                cfg.search.gamma_range = parse_range(r)?;
            }
            set(&mut cfg.search.gamma_steps, a.gamma_steps);
            cmd_train(&cfg, &a.common.out)
        }
        Command::Classify(a) => {
            let mut cfg = load_config(&a.common)?;
            set_opt(&mut cfg.data, a.data);
            set(&mut cfg.classify.shots, a.shots);
            set(&mut cfg.classify.budget, a.budget);
            set(&mut cfg.classify.shots_per_field, a.shots_per_field);
            set(&mut cfg.classify.k_folds, a.folds);
            set(&mut cfg.classify.n_per_class, a.n_per_class);
            set(&mut cfg.seed, a.seed);
            apply_detection(&mut cfg, &a.params);
            cmd_classify(&cfg, &a.common.out)
        }
        Command::Spectra(a) => {
            let mut cfg = load_config(&a.common)?;
            set_opt(&mut cfg.data, a.data);
            apply_detection(&mut cfg, &a.params);
            cmd_spectra(&cfg, &a.common.out, a.field)
        }
    }
}

fn set<T>(slot: &mut T, v: Option<T>) {
    if let Some(v) = v {
        *slot = v;
    }
}

fn set_opt<T>(slot: &mut Option<T>, v: Option<T>) {
    if v.is_some() {
        *slot = v;
    }
}

fn apply_detection(cfg: &mut RunConfig, f: &DetectionFlags) {
    set(&mut cfg.detection.alpha, f.alpha);
    set(&mut cfg.detection.beta, f.beta);
    set(&mut cfg.detection.gamma, f.gamma);
}

fn parse_range<T: std::str::FromStr>(s: &str) -> Result<(T, T)> {
    let bad = || invalid(format!("range '{s}' is not min:max"));
    let (a, b) = s.split_once(':').ok_or_else(bad)?;
    Ok((a.trim().parse().map_err(|_| bad())?, b.trim().parse().map_err(|_| bad())?))
}

fn load_config(common: &Common) -> Result<RunConfig> {
    match &common.config {
        Some(p) => crate::io::read_json(p),
        None => Ok(RunConfig::default()),
    }
}

fn prepare_out(cfg: &RunConfig, out: &Path) -> Result<()> {
    fs::create_dir_all(out)?;
    write_json(cfg, &out.join("config.json"))
}

fn write_text(out: &Path, name: &str, text: &str) -> Result<()> {
    fs::write(out.join(name), text)?;
    Ok(())
}

fn require_data(cfg: &RunConfig) -> Result<Vec<FlowField>> {
    let path = cfg.data.as_ref().ok_or_else(|| invalid("no dataset given (--data)"))?;
    Ok(load_dataset(path)?.1)
}

fn layout_for(cfg: &RunConfig, field: &FlowField) -> Result<RegisterLayout> {
    match cfg.layout {
        Some(l) => {
            l.validate()?;
            Ok(l)
        }
        None => RegisterLayout::for_grid(field.width, field.height),
    }
}

/// One layout for a dataset whose fields share a size.
fn common_layout(cfg: &RunConfig, fields: &[FlowField]) -> Result<RegisterLayout> {
    let first = fields.first().ok_or_else(|| invalid("dataset is empty"))?;
    if let Some(f) = fields.iter().find(|f| (f.width, f.height) != (first.width, first.height)) {
        return Err(Error::ShapeMismatch(format!(
            "fields of {}x{} and {}x{}",
            first.width, first.height, f.width, f.height
        )));
    }
    layout_for(cfg, first)
}

pub fn cmd_gen(cfg: &RunConfig, out: &Path) -> Result<()> {
    cfg.dataset.validate()?;
    let fields = generate_dataset(&cfg.dataset)?;
    prepare_out(cfg, out)?;
    save_dataset(&cfg.dataset, &fields, out)?;
    Ok(())
}

#[derive(Debug, Serialize)]
struct DetectSummary {
    params: DetectionParams,
    counts: Vec<usize>,
    truth: Vec<usize>,
    mse: Option<f64>,
    accuracy: Option<f64>,
}

pub fn cmd_detect(cfg: &RunConfig, out: &Path, render: bool) -> Result<()> {
    cfg.detection.validate()?;
    let fields = require_data(cfg)?;
    prepare_out(cfg, out)?;
    let mut counts = Vec::with_capacity(fields.len());
    for (id, field) in fields.iter().enumerate() {
        let layout = layout_for(cfg, field)?;
        let template = ContourTemplate::for_layout(&layout, cfg.detection.beta)?;
        let radius = cfg.merge_radius.unwrap_or_else(|| default_merge_radius(&template));
        if !(radius > 0.0) {
            return Err(invalid("merge radius must be positive"));
        }
        let scan = scan_field(field, cfg.detection.alpha, &template, &layout, cfg.spectrum_path)?;
        let report = report_from_scan(&scan, cfg.detection.gamma, radius);
        write_json(&report.to_record(id, cfg.detection), &out.join(format!("report_{id:04}.json")))?;
        write_text(out, &format!("peaks_{id:04}.csv"), &window_peaks_csv(&scan))?;
        if render {
            let mut circles: Vec<Circle> = report
                .raw
                .iter()
                .map(|d| Circle {
                    x: d.x,
                    y: d.y,
                    radius: template.radius,
                    color: [0, 0, 0],
                })
                .collect();
            circles.extend(report.unique_centers.iter().map(|&(x, y)| Circle {
                x,
                y,
                radius: template.radius + 2.0,
                color: [0, 160, 0],
            }));
            fs::write(out.join(format!("render_{id:04}.ppm")), render_ppm(field, &circles))?;
        }
        counts.push(report.count);
    }
    let truth: Vec<usize> = fields.iter().map(|f| f.true_count).collect();
    let any = !fields.is_empty();
    write_json(
        &DetectSummary {
            params: cfg.detection,
            mse: any.then(|| mse_from_counts(&truth, &counts)),
            accuracy: any.then(|| accuracy_from_counts(&truth, &counts)),
            counts,
            truth,
        },
        &out.join("summary.json"),
    )
}

pub fn cmd_train(cfg: &RunConfig, out: &Path) -> Result<()> {
    if cfg.bayes.epochs < 1 {
        return Err(invalid("epochs must be >= 1"));
    }
    if !(cfg.training.split > 0.0 && cfg.training.split < 1.0) {
        return Err(invalid(format!("split {} outside (0, 1)", cfg.training.split)));
    }
    if cfg.training.seeds < 1 {
        return Err(invalid("seeds must be >= 1"));
    }
    cfg.search.validate()?;
    let fields = require_data(cfg)?;
    let layout = common_layout(cfg, &fields)?;
    prepare_out(cfg, out)?;
    match cfg.training.method {
        TrainMethod::Grid => {
            let result = grid_search(&fields, &cfg.search, &layout)?;
            let mut csv = String::from("alpha,beta,gamma,mse,accuracy\n");
            for g in &result.table {
                csv.push_str(&format!(
                    "{},{},{},{},{}\n",
                    g.params.alpha, g.params.beta, g.params.gamma, g.mse, g.accuracy
                ));
            }
            write_text(out, "grid.csv", &csv)?;
            write_json(&result.best, &out.join("best_params.json"))
        }
        TrainMethod::Bayes => {
            let mut histories = Vec::with_capacity(cfg.training.seeds);
            for i in 0..cfg.training.seeds {
                let seed = cfg.seed.wrapping_add(i as u64);
                let (train, test) = stratified_split(&fields, cfg.training.split, seed)?;
                let h = bayes_opt(&train, &test, &cfg.search, &layout, &cfg.bayes, seed)?;
                write_text(out, &format!("history_seed{seed}.csv"), &h.to_csv())?;
                histories.push(h);
            }
            write_json(&histories, &out.join("history.json"))?;
            let summary = summarize(&histories)?;
            write_json(&summary.final_params, &out.join("best_params.json"))?;
            write_json(&summary, &out.join("summary.json"))
        }
    }
}

fn parallel_config(cfg: &RunConfig, field: &FlowField, layout: &RegisterLayout) -> Result<ParallelConfig> {
    let p = &cfg.parallel;
    ParallelConfig::coarse_grid(
        field.width,
        field.height,
        layout.window_side(),
        p.n_a,
        p.selected_k,
        p.truncate_qubits,
    )
}

#[derive(Debug, Serialize)]
struct Representatives<'a> {
    non_vortical: &'a crate::parqvd::EmpiricalDistribution,
    vortical: &'a crate::parqvd::EmpiricalDistribution,
    n_non_vortical: usize,
    n_vortical: usize,
}

pub fn cmd_classify(cfg: &RunConfig, out: &Path) -> Result<()> {
    let c = &cfg.classify;
    cfg.detection.validate()?;
    if c.shots.is_empty() {
        return Err(invalid("no shot counts given"));
    }
    if let Some(&shots) = c.shots.iter().find(|&&s| s == 0 || c.budget % s != 0) {
        return Err(Error::BudgetNotDivisible {
            budget: c.budget,
            shots,
        });
    }
    let (non_vortical, vortical): (Vec<FlowField>, Vec<FlowField>) = match &cfg.data {
        Some(p) => load_dataset(p)?.1.into_iter().partition(|f| f.true_count == 0),
        None => generate_balanced_dataset(&cfg.dataset, c.n_per_class, c.vortical_counts)?,
    };
    if non_vortical.is_empty() || vortical.is_empty() {
        return Err(Error::SingleClass);
    }
    let all: Vec<FlowField> = non_vortical.iter().chain(&vortical).cloned().collect();
    let layout = common_layout(cfg, &all)?;
    let pcfg = parallel_config(cfg, &all[0], &layout)?;
    prepare_out(cfg, out)?;
    let spectra = |fields: &[FlowField]| -> Result<Vec<DensitySpectrum>> {
        fields
            .iter()
            .map(|f| density_spectrum(f, &cfg.detection, &pcfg, &layout))
            .collect()
    };
    let rep_nv = representative_from_spectra(
        &spectra(&non_vortical)?,
        c.shots_per_field,
        derive_seed(cfg.seed, 0),
        ClassLabel::NonVortical,
    )?;
    let rep_v = representative_from_spectra(
        &spectra(&vortical)?,
        c.shots_per_field,
        derive_seed(cfg.seed, 1),
        ClassLabel::Vortical,
    )?;
    write_text(out, "representative_non_vortical.csv", &rep_nv.to_csv())?;
    write_text(out, "representative_vortical.csv", &rep_v.to_csv())?;
    write_json(
        &Representatives {
            non_vortical: &rep_nv,
            vortical: &rep_v,
            n_non_vortical: non_vortical.len(),
            n_vortical: vortical.len(),
        },
        &out.join("representatives.json"),
    )?;
    let sweep = shots_sweep(
        &rep_nv,
        &rep_v,
        &c.shots,
        c.budget,
        c.k_folds,
        &cfg.forest,
        derive_seed(cfg.seed, 2),
    )?;
    write_text(out, "metrics.csv", &metrics_csv(&sweep))?;
    write_json(&sweep, &out.join("sweep.json"))?;
    let samples = empirical_samples(&rep_nv, &rep_v, c.shots[0], c.budget, derive_seed(cfg.seed, 3))?;
    let model = train_forest(&samples, &cfg.forest, derive_seed(cfg.seed, 4))?;
    write_json(&model, &out.join("model.json"))
}

pub fn cmd_spectra(cfg: &RunConfig, out: &Path, field_id: Option<usize>) -> Result<()> {
    cfg.detection.validate()?;
    let fields = require_data(cfg)?;
    let ids: Vec<usize> = match field_id {
        Some(id) if id >= fields.len() => {
            return Err(invalid(format!("no field {id} in a dataset of {}", fields.len())));
        }
        Some(id) => vec![id],
        None => (0..fields.len()).collect(),
    };
    prepare_out(cfg, out)?;
    for id in ids {
        let field = &fields[id];
        let layout = layout_for(cfg, field)?;
        let template = ContourTemplate::for_layout(&layout, cfg.detection.beta)?;
        let analyzer = SpectrumAnalyzer::new(template.points.len(), layout.n_lfps)?;
        let mut csv = String::from("x,y");
        for k in 0..template.points.len() {
            csv.push_str(&format!(",p{k}"));
        }
        csv.push('\n');
        let offset = template.center_offset();
        for origin in window_positions(field.width, field.height, cfg.detection.alpha, template.window_side)? {
            let ps = analyzer.spectrum(&extract_contour(field, origin, &template)?)?;
            csv.push_str(&format!("{},{}", origin.0 + offset, origin.1 + offset));
            for v in &ps.values {
                csv.push_str(&format!(",{v}"));
            }
            csv.push('\n');
        }
        write_text(out, &format!("window_spectra_{id:04}.csv"), &csv)?;
        let pcfg = parallel_config(cfg, field, &layout)?;
        let density = density_spectrum(field, &cfg.detection, &pcfg, &layout)?;
        write_text(out, &format!("density_{id:04}.csv"), &density.to_csv())?;
    }
    Ok(())
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn ranges_parse() {
        assert_eq!(parse_range::<usize>("4:32").unwrap(), (4, 32));
        assert_eq!(parse_range::<f64>("0.1:3").unwrap(), (0.1, 3.0));
        assert!(parse_range::<usize>("4-32").is_err());
    }

    #[test]
    fn config_roundtrip_with_partial_json() {
        let cfg: RunConfig = serde_json::from_str(r#"{"detection": {"gamma": 0.5}, "seed": 3}"#).unwrap();
        assert_eq!(cfg.detection.gamma, 0.5);
        assert_eq!(cfg.detection.alpha, DetectionParams::default().alpha);
        assert_eq!(cfg.seed, 3);
        let back: RunConfig = serde_json::from_str(&serde_json::to_string(&cfg).unwrap()).unwrap();
        assert_eq!(back, cfg);
    }

    #[test]
    fn exit_codes() {
        assert_eq!(exit_code(&invalid("x")), 1);
        assert_eq!(exit_code(&Error::SingleClass), 1);
        assert_eq!(exit_code(&Error::Format("x".into())), 2);
    }
}
