//! Parallel QVD: window positions held in superposition on an ancilla
//! register.
//!
//! Conditioned on ancilla value `x`, the window circuit for position `x` is
//! applied to the flow register; a rank-1 projector then keeps contour
//! frequency `k*` (with every qubit below the contour register at `|0>`),
//! leaving the ancilla with amplitudes `a_x / sqrt(2^n_a)`. A QFT on the
//! ancilla and a measurement in its computational basis sample the density
//! spectrum.
//!
//! [`density_spectrum`] computes `a_x` position by position;
//! [`density_spectrum_circuit`] simulates the full controlled circuit and
//! serves as the reference for it.

use std::f64::consts::TAU;

use num_complex::Complex64;
use rustfft::FftPlanner;
use serde::{Deserialize, Serialize};

use crate::error::{invalid, Error, Result};
use crate::flowgen::FlowField;
use crate::qstate::{apply_qft, encode_flow, project_rank1, QubitRange, RegisterLayout, StateVector};
use crate::rng::{derive_seed, multinomial, seeded};
use crate::seqqvd::{extract_contour, ContourTemplate, DetectionParams, WindowCircuit};

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct ParallelConfig {
    /// Ancilla qubits; one window position per ancilla basis state.
    pub n_a: usize,
    /// Window origins, row-major over the coarse grid.
    pub positions: Vec<(usize, usize)>,
    /// Contour frequency kept by the rank-1 projector.
    pub selected_k: usize,
    /// The density spectrum keeps the first `2^truncate_qubits` ancilla
    /// frequencies.
    pub truncate_qubits: usize,
}

impl ParallelConfig {
    /// Evenly spaced `2^ceil(n_a/2)` columns by `2^floor(n_a/2)` rows of
    /// window origins spanning the field.
    pub fn coarse_grid(
        width: usize,
        height: usize,
        window_side: usize,
        n_a: usize,
        selected_k: usize,
        truncate_qubits: usize,
    ) -> Result<Self> {
        if window_side > width || window_side > height {
            return Err(Error::WindowTooLarge {
                window: window_side,
                width,
                height,
            });
        }
        let nx = 1usize << n_a.div_ceil(2);
        let ny = 1usize << (n_a / 2);
        let axis = |count: usize, size: usize| -> Vec<usize> {
            let span = (size - window_side) as f64;
            (0..count)
                .map(|i| {
                    if count == 1 {
                        (span / 2.0).round() as usize
                    } else {
                        (span * i as f64 / (count - 1) as f64).round() as usize
                    }
                })
                .collect()
        };
        let xs = axis(nx, width);
        let ys = axis(ny, height);
        let positions = ys.iter().flat_map(|&y| xs.iter().map(move |&x| (x, y))).collect();
        let cfg = Self {
            n_a,
            positions,
            selected_k,
            truncate_qubits,
        };
        Ok(cfg)
    }

    /// Defaults for a grid: 8 ancilla qubits (16x16 positions), `k* = 0`,
    /// spectrum truncated to 8 qubits.
    pub fn for_grid(width: usize, height: usize, layout: &RegisterLayout) -> Result<Self> {
        Self::coarse_grid(width, height, layout.window_side(), 8, 0, 8)
    }

    pub fn validate(&self, layout: &RegisterLayout, width: usize, height: usize) -> Result<()> {
        if self.positions.len() != 1 << self.n_a {
            return Err(invalid(format!(
                "{} positions for {} ancilla qubits",
                self.positions.len(),
                self.n_a
            )));
        }
        if self.selected_k >= layout.contour_len() {
            return Err(invalid(format!(
                "selected_k {} outside a {}-point contour",
                self.selected_k,
                layout.contour_len()
            )));
        }
        if self.truncate_qubits > self.n_a {
            return Err(invalid("truncate_qubits exceeds n_a"));
        }
        let w = layout.window_side();
        if let Some(p) = self.positions.iter().find(|p| p.0 + w > width || p.1 + w > height) {
            return Err(invalid(format!("window at {p:?} leaves the {width}x{height} field")));
        }
        Ok(())
    }

    pub fn bins(&self) -> usize {
        1 << self.truncate_qubits
    }
}

/// Ancilla-frequency distribution of one field.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct DensitySpectrum {
    pub probs: Vec<f64>,
    /// Probability that the rank-1 post-selection succeeds, for a normalized
    /// encoded input (0 for an identically zero field).
    pub success_probability: f64,
}

impl DensitySpectrum {
    pub fn to_csv(&self) -> String {
        let mut out = String::from("bin,value\n");
        for (i, p) in self.probs.iter().enumerate() {
            out.push_str(&format!("{i},{p}\n"));
        }
        out
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash, PartialOrd, Ord, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum ClassLabel {
    NonVortical,
    Vortical,
}

impl ClassLabel {
    pub fn as_u8(self) -> u8 {
        match self {
            ClassLabel::NonVortical => 0,
            ClassLabel::Vortical => 1,
        }
    }

    pub fn of_count(count: usize) -> Self {
        if count == 0 {
            ClassLabel::NonVortical
        } else {
            ClassLabel::Vortical
        }
    }
}

/// Shot histogram over the density-spectrum bins.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct EmpiricalDistribution {
    pub counts: Vec<u64>,
    pub shots: u64,
    pub label: ClassLabel,
}

impl EmpiricalDistribution {
    /// Relative frequencies; all zero when no shots were taken.
    pub fn normalized(&self) -> Vec<f64> {
        if self.shots == 0 {
            return vec![0.0; self.counts.len()];
        }
        self.counts.iter().map(|&c| c as f64 / self.shots as f64).collect()
    }

    pub fn to_csv(&self) -> String {
        let mut out = String::from("bin,count\n");
        for (i, c) in self.counts.iter().enumerate() {
            out.push_str(&format!("{i},{c}\n"));
        }
        out
    }
}

/// Contour-frequency amplitudes `a_x = <k*| QFT c(x)>` over all positions,
/// in field units.
pub fn position_amplitudes(
    field: &FlowField,
    template: &ContourTemplate,
    cfg: &ParallelConfig,
) -> Result<Vec<Complex64>> {
    let n = template.points.len();
    let norm = 1.0 / (n as f64).sqrt();
    let k = cfg.selected_k;
    let twiddles: Vec<Complex64> = (0..n)
        .map(|m| Complex64::from_polar(norm, -TAU * ((k * m) % n) as f64 / n as f64))
        .collect();
    cfg.positions
        .iter()
        .map(|&origin| {
            let c = extract_contour(field, origin, template)?;
            Ok(c.iter().zip(&twiddles).map(|(v, t)| t * v).sum())
        })
        .collect()
}

fn truncate_and_normalize(mut probs: Vec<f64>, bins: usize) -> Result<Vec<f64>> {
    probs.truncate(bins);
    let total: f64 = probs.iter().sum();
    if total <= 0.0 {
        return Err(Error::ProjectionEmpty);
    }
    probs.iter_mut().for_each(|p| *p /= total);
    Ok(probs)
}

/// Density spectrum of `field` under the parallel circuit.
///
/// Only `params.beta` matters here; positions come from `cfg`. A perfectly
/// uniform response (every `a_x` equal, including all zero) puts all the
/// mass on ancilla frequency 0.
pub fn density_spectrum(
    field: &FlowField,
    params: &DetectionParams,
    cfg: &ParallelConfig,
    layout: &RegisterLayout,
) -> Result<DensitySpectrum> {
    cfg.validate(layout, field.width, field.height)?;
    let template = ContourTemplate::for_layout(layout, params.beta)?;
    let a = position_amplitudes(field, &template, cfg)?;
    let dim = a.len();
    let energy: f64 = a.iter().map(|z| z.norm_sqr()).sum();
    let field_energy = field.l2_norm().powi(2);
    let success_probability = if field_energy > 0.0 {
        energy / (dim as f64 * field_energy)
    } else {
        0.0
    };
    let bins = cfg.bins();
    if a.iter().all(|z| *z == a[0]) {
        let mut probs = vec![0.0; bins];
        probs[0] = 1.0;
        return Ok(DensitySpectrum {
            probs,
            success_probability,
        });
    }
    let mut buf = a;
    FftPlanner::new().plan_fft_forward(dim).process(&mut buf);
    let probs: Vec<f64> = buf.iter().map(|z| z.norm_sqr()).collect();
    Ok(DensitySpectrum {
        probs: truncate_and_normalize(probs, bins)?,
        success_probability,
    })
}

/// Full `(n_a + n_f)`-qubit simulation of the parallel circuit:
/// `|+>^{n_a} (x) |psi_f>`, controlled window circuits, rank-1 projection,
/// ancilla QFT. Exponential in `n_a + n_f`; meant for small instances.
pub fn density_spectrum_circuit(
    field: &FlowField,
    params: &DetectionParams,
    cfg: &ParallelConfig,
    layout: &RegisterLayout,
) -> Result<DensitySpectrum> {
    cfg.validate(layout, field.width, field.height)?;
    let template = ContourTemplate::for_layout(layout, params.beta)?;
    let circuit = WindowCircuit::new(*layout, template)?;
    let flow = encode_flow(field, layout)?;
    let n_f = layout.n_f;
    let flow_dim = 1usize << n_f;
    let anc_dim = 1usize << cfg.n_a;
    let weight = 1.0 / (anc_dim as f64).sqrt();

    let mut amplitudes = Vec::with_capacity(anc_dim * flow_dim);
    for _ in 0..anc_dim {
        amplitudes.extend(flow.amplitudes.iter().map(|a| a * weight));
    }
    for (x, &origin) in cfg.positions.iter().enumerate() {
        let block = &mut amplitudes[x * flow_dim..(x + 1) * flow_dim];
        let sub = StateVector {
            n_qubits: n_f,
            amplitudes: block.to_vec(),
            layout: Some(*layout),
        };
        let out = circuit.run(&sub, origin)?;
        block.copy_from_slice(&out.ps_state.amplitudes);
    }
    let full = StateVector {
        n_qubits: cfg.n_a + n_f,
        amplitudes,
        layout: None,
    };
    let contour = layout.contour_register();
    let (rest, _) = project_rank1(&full, cfg.selected_k, contour)?;
    // `rest` holds the ancilla above the qubits that sat below the contour
    // register; those must read |0>.
    let (ancilla, success_probability) = project_rank1(&rest, 0, QubitRange::new(0, contour.lsb))?;
    let spectrum = apply_qft(&ancilla, QubitRange::all(cfg.n_a))?;
    Ok(DensitySpectrum {
        probs: truncate_and_normalize(spectrum.probabilities(), cfg.bins())?,
        success_probability,
    })
}

/// Sample each spectrum `shots_per_field` times and pool the counts.
pub fn representative_from_spectra(
    spectra: &[DensitySpectrum],
    shots_per_field: u64,
    seed: u64,
    label: ClassLabel,
) -> Result<EmpiricalDistribution> {
    let first = spectra.first().ok_or_else(|| invalid("no spectra to pool"))?;
    let bins = first.probs.len();
    let mut counts = vec![0u64; bins];
    for (i, s) in spectra.iter().enumerate() {
        if s.probs.len() != bins {
            return Err(Error::DimensionMismatch {
                expected: bins,
                got: s.probs.len(),
            });
        }
        let mut rng = seeded(derive_seed(seed, i as u64));
        for (c, d) in counts.iter_mut().zip(multinomial(&mut rng, &s.probs, shots_per_field)) {
            *c += d;
        }
    }
    Ok(EmpiricalDistribution {
        counts,
        shots: shots_per_field * spectra.len() as u64,
        label,
    })
}

/// Class-level histogram from the density spectra of `fields`.
pub fn representative_distribution(
    fields: &[FlowField],
    params: &DetectionParams,
    cfg: &ParallelConfig,
    layout: &RegisterLayout,
    shots_per_field: u64,
    seed: u64,
    label: ClassLabel,
) -> Result<EmpiricalDistribution> {
    if fields.is_empty() {
        return Err(invalid("representative distribution needs at least one field"));
    }
    let spectra = fields
        .iter()
        .map(|f| density_spectrum(f, params, cfg, layout))
        .collect::<Result<Vec<_>>>()?;
    representative_from_spectra(&spectra, shots_per_field, seed, label)
}

/// `budget / shots` independent `shots`-shot histograms drawn from the
/// normalized representative distribution.
pub fn sample_empirical(
    rep: &EmpiricalDistribution,
    shots: u64,
    budget: u64,
    seed: u64,
) -> Result<Vec<EmpiricalDistribution>> {
    if shots == 0 {
        return Err(invalid("shots must be positive"));
    }
    if budget % shots != 0 {
        return Err(Error::BudgetNotDivisible { budget, shots });
    }
    if rep.shots == 0 {
        return Err(invalid("representative distribution has no shots"));
    }
    let probs = rep.normalized();
    let mut rng = seeded(seed);
    Ok((0..budget / shots)
        .map(|_| EmpiricalDistribution {
            counts: multinomial(&mut rng, &probs, shots),
            shots,
            label: rep.label,
        })
        .collect())
}

/// Total variation distance between two probability vectors.
pub fn total_variation(p: &[f64], q: &[f64]) -> f64 {
    0.5 * p.iter().zip(q).map(|(a, b)| (a - b).abs()).sum::<f64>()
}
