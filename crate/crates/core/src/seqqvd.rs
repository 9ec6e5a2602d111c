//! Sequential sliding-window vortex detection.
//!
//! For every window position the detector reads a circular contour of
//! `2^n_c` pixels around the window center, takes the power spectrum of the
//! contour, and flags the window when the largest low-band value reaches the
//! threshold `gamma`. Overlapping hits are merged into unique centers.
//!
//! Two equivalent routes compute the contour spectrum:
//!
//! * the direct route reads the contour pixels from the field and takes a
//!   DFT (production path);
//! * the circuit route applies shift, window permutation, contour
//!   permutation and QFT to the amplitude-encoded state and reads the
//!   projected low band ([`WindowCircuit`]).
//!
//! The circuit route works in state units, where every amplitude is divided
//! by the encoding norm `||psi||_2`; its spectra times `||psi||_2^2` equal the
//! direct route's field-unit spectra.

use std::f64::consts::TAU;
use std::sync::Arc;

use num_complex::Complex64;
use rustfft::{Fft, FftPlanner};
use serde::{Deserialize, Serialize};

use crate::error::{invalid, Error, Result};
use crate::flowgen::FlowField;
use crate::qstate::{
    apply_permutation, apply_qft, apply_shift, encode_flow, project_low, project_rank1, Permutation, QubitRange,
    RegisterLayout, StateVector,
};

/// The trainable triple.
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
#[serde(default)]
pub struct DetectionParams {
    /// Window step in pixels.
    pub alpha: usize,
    /// Inverse contour radius; the contour radius is `W / (2 beta)`.
    pub beta: f64,
    /// Threshold on the low-band spectral peak, field units.
    #[serde(with = "extended_f64")]
    pub gamma: f64,
}

/// JSON has no infinities; non-finite values travel as strings (`"inf"`).
mod extended_f64 {
    use serde::{Deserialize, Deserializer, Serializer};

    pub fn serialize<S: Serializer>(v: &f64, s: S) -> Result<S::Ok, S::Error> {
        if v.is_finite() {
            s.serialize_f64(*v)
        } else {
            s.serialize_str(&v.to_string())
        }
    }

    #[derive(Deserialize)]
    #[serde(untagged)]
    enum Repr {
        Number(f64),
        Text(String),
    }

    pub fn deserialize<'de, D: Deserializer<'de>>(d: D) -> Result<f64, D::Error> {
        match Repr::deserialize(d)? {
            Repr::Number(v) => Ok(v),
            Repr::Text(t) => t.parse().map_err(serde::de::Error::custom),
        }
    }
}

impl DetectionParams {
    pub fn new(alpha: usize, beta: f64, gamma: f64) -> Result<Self> {
        let p = Self { alpha, beta, gamma };
        p.validate()?;
        Ok(p)
    }

    pub fn validate(&self) -> Result<()> {
        if self.alpha < 1 {
            return Err(invalid("alpha must be >= 1"));
        }
        if !(self.beta >= 1.0 && self.beta.is_finite()) {
            return Err(invalid("beta must be finite and >= 1"));
        }
        if !(self.gamma > 0.0) {
            return Err(invalid("gamma must be > 0"));
        }
        Ok(())
    }
}

impl Default for DetectionParams {
    fn default() -> Self {
        Self {
            alpha: 8,
            beta: 3.0,
            gamma: 0.9,
        }
    }
}

/// Ordered contour pixels relative to the window center `(W/2, W/2)`.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct ContourTemplate {
    pub window_side: usize,
    pub radius: f64,
    /// `2^n_c` offsets, anticlockwise from angle 0.
    pub points: Vec<(i64, i64)>,
}

impl ContourTemplate {
    pub fn new(window_side: usize, beta: f64, n_c: usize) -> Result<Self> {
        if !(beta > 0.0) {
            return Err(invalid("beta must be positive"));
        }
        let n = 1usize << n_c;
        let radius = window_side as f64 / (2.0 * beta);
        let min_radius = n as f64 / TAU;
        if radius < min_radius {
            return Err(invalid(format!(
                "contour radius {radius:.3} is below {min_radius:.3}, too small for {n} distinct points"
            )));
        }
        let center = (window_side / 2) as i64;
        let points: Vec<(i64, i64)> = (0..n)
            .map(|m| {
                let theta = TAU * m as f64 / n as f64;
                ((radius * theta.cos()).round() as i64, (radius * theta.sin()).round() as i64)
            })
            .collect();
        let outside = points.iter().any(|&(dx, dy)| {
            let (x, y) = (center + dx, center + dy);
            x < 0 || y < 0 || x >= window_side as i64 || y >= window_side as i64
        });
        if outside {
            return Err(invalid(format!(
                "contour radius {radius:.3} does not fit a {window_side}-pixel window"
            )));
        }
        let mut sorted = points.clone();
        sorted.sort_unstable();
        sorted.dedup();
        if sorted.len() != n {
            return Err(invalid(format!(
                "contour radius {radius:.3} yields repeated pixels for {n} points"
            )));
        }
        Ok(Self {
            window_side,
            radius,
            points,
        })
    }

    pub fn for_layout(layout: &RegisterLayout, beta: f64) -> Result<Self> {
        Self::new(layout.window_side(), beta, layout.n_c)
    }

    /// Offset of the contour center inside the window.
    pub fn center_offset(&self) -> usize {
        self.window_side / 2
    }

    /// Window-local pixel of contour point `m`.
    pub fn local_pixel(&self, m: usize) -> (usize, usize) {
        let c = self.center_offset() as i64;
        let (dx, dy) = self.points[m];
        ((c + dx) as usize, (c + dy) as usize)
    }
}

/// Power spectrum of one contour.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct PowerSpectrum {
    pub values: Vec<f64>,
    pub low_len: usize,
}

impl PowerSpectrum {
    pub fn low_band(&self) -> &[f64] {
        &self.values[..self.low_len]
    }

    /// Largest low-band value and its frequency (first on ties).
    pub fn low_band_peak(&self) -> (f64, usize) {
        self.low_band()
            .iter()
            .enumerate()
            .fold((f64::NEG_INFINITY, 0), |(best, bk), (k, &v)| if v > best { (v, k) } else { (best, bk) })
    }
}

/// Reusable FFT plan for contours of one length.
#[derive(Clone)]
pub struct SpectrumAnalyzer {
    fft: Arc<dyn Fft<f64>>,
    len: usize,
    n_lfps: usize,
}

impl SpectrumAnalyzer {
    pub fn new(contour_len: usize, n_lfps: usize) -> Result<Self> {
        if !contour_len.is_power_of_two() || (1usize << n_lfps) > contour_len {
            return Err(invalid(format!(
                "contour length {contour_len} with a 2^{n_lfps} low band"
            )));
        }
        let fft = FftPlanner::new().plan_fft_forward(contour_len);
        Ok(Self {
            fft,
            len: contour_len,
            n_lfps,
        })
    }

    /// `values[k] = |sum_m c_m exp(-2 pi i k m / N)|^2 / N`.
    pub fn spectrum(&self, contour: &[f64]) -> Result<PowerSpectrum> {
        if contour.len() != self.len {
            return Err(Error::DimensionMismatch {
                expected: self.len,
                got: contour.len(),
            });
        }
        let mut buf: Vec<Complex64> = contour.iter().map(|&c| Complex64::new(c, 0.0)).collect();
        self.fft.process(&mut buf);
        let n = self.len as f64;
        Ok(PowerSpectrum {
            values: buf.iter().map(|z| z.norm_sqr() / n).collect(),
            low_len: 1 << self.n_lfps,
        })
    }
}

pub fn power_spectrum(contour: &[f64], n_lfps: usize) -> Result<PowerSpectrum> {
    SpectrumAnalyzer::new(contour.len(), n_lfps)?.spectrum(contour)
}

/// Raster-ordered window origins with step `alpha`; the last row and column
/// snap to the boundary so the field is covered.
pub fn window_positions(width: usize, height: usize, alpha: usize, window_side: usize) -> Result<Vec<(usize, usize)>> {
    if window_side > width || window_side > height || window_side == 0 {
        return Err(Error::WindowTooLarge {
            window: window_side,
            width,
            height,
        });
    }
    if alpha == 0 {
        return Err(invalid("alpha must be >= 1"));
    }
    let axis = |size: usize| -> Vec<usize> {
        let last = size - window_side;
        let mut v: Vec<usize> = (0..=last).step_by(alpha).collect();
        if *v.last().unwrap() != last {
            v.push(last);
        }
        v
    };
    let xs = axis(width);
    let ys = axis(height);
    Ok(ys.iter().flat_map(|&y| xs.iter().map(move |&x| (x, y))).collect())
}

/// Contour values read directly from the field (field units).
pub fn extract_contour(field: &FlowField, origin: (usize, usize), template: &ContourTemplate) -> Result<Vec<f64>> {
    if origin.0 + template.window_side > field.width || origin.1 + template.window_side > field.height {
        return Err(Error::WindowTooLarge {
            window: template.window_side,
            width: field.width.saturating_sub(origin.0),
            height: field.height.saturating_sub(origin.1),
        });
    }
    Ok((0..template.points.len())
        .map(|m| {
            let (lx, ly) = template.local_pixel(m);
            field.at(origin.0 + lx, origin.1 + ly)
        })
        .collect())
}

/// The window-extraction circuit `QFT(n_c) P(n_w, l_2) P(n_f, l_1) S(n_f, d)`
/// for one layout and contour template.
///
/// * `S(n_f, d)` moves the window origin to index 0 of the flow register.
/// * `P(n_f, l_1)` sends window pixel `(a, b)` to window-register value
///   `a * W + b` with all lower flow qubits zero.
/// * `P(n_w, l_2)` sends contour point `m` to contour-register value `m`
///   with the lower window qubits zero.
#[derive(Debug, Clone)]
pub struct WindowCircuit {
    pub layout: RegisterLayout,
    pub template: ContourTemplate,
    window_perm: Permutation,
    contour_perm: Permutation,
}

/// Output of [`WindowCircuit::run`].
#[derive(Debug, Clone)]
pub struct ContourExtraction {
    /// Contour register amplitudes before the QFT (state units).
    pub contour_amplitudes: Vec<Complex64>,
    /// `|psi_ps>`, the state after the QFT.
    pub ps_state: StateVector,
}

impl WindowCircuit {
    pub fn new(layout: RegisterLayout, template: ContourTemplate) -> Result<Self> {
        layout.validate()?;
        let w = layout.window_side();
        if template.window_side != w {
            return Err(invalid(format!(
                "template window {} does not match layout window {w}",
                template.window_side
            )));
        }
        if template.points.len() != layout.contour_len() {
            return Err(Error::DimensionMismatch {
                expected: layout.contour_len(),
                got: template.points.len(),
            });
        }
        let below_window = layout.n_f - layout.n_w;
        let window_moves = (0..w).flat_map(|a| {
            (0..w).map(move |b| {
                let source = (a << layout.y_bits) | b;
                let target = (a * w + b) << below_window;
                (target, source)
            })
        });
        let window_perm = Permutation::from_partial(layout.n_f, window_moves)?;

        let below_contour = layout.n_w - layout.n_c;
        let contour_moves: Vec<(usize, usize)> = (0..template.points.len())
            .map(|m| {
                let (a, b) = template.local_pixel(m);
                (m << below_contour, a * w + b)
            })
            .collect();
        let contour_perm = Permutation::from_partial(layout.n_w, contour_moves)?;
        Ok(Self {
            layout,
            template,
            window_perm,
            contour_perm,
        })
    }

    /// Shift offset selecting the window at `origin`.
    pub fn shift_offset(&self, origin: (usize, usize)) -> i64 {
        -(self.layout.pixel_index(origin.0, origin.1) as i64)
    }

    /// Apply shift, both permutations and the contour QFT to `state`.
    pub fn run(&self, state: &StateVector, origin: (usize, usize)) -> Result<ContourExtraction> {
        let l = &self.layout;
        if state.n_qubits != l.n_f {
            return Err(Error::DimensionMismatch {
                expected: l.n_f,
                got: state.n_qubits,
            });
        }
        let w = self.template.window_side;
        if origin.0 + w > 1 << l.x_bits || origin.1 + w > 1 << l.y_bits {
            return Err(invalid(format!("window at {origin:?} leaves the flow register")));
        }
        let shifted = apply_shift(state, self.shift_offset(origin), l.flow_register())?;
        let windowed = apply_permutation(&shifted, &self.window_perm, l.flow_register())?;
        let contoured = apply_permutation(&windowed, &self.contour_perm, l.window_register())?;
        let reg = l.contour_register();
        let contour_amplitudes = (0..reg.dim()).map(|m| contoured.amplitudes[m << reg.lsb]).collect();
        let ps_state = apply_qft(&contoured, reg)?;
        Ok(ContourExtraction {
            contour_amplitudes,
            ps_state,
        })
    }

    /// Full contour spectrum read off `|psi_ps>`, state units: the squared
    /// amplitudes with the contour register at `k` and every lower qubit 0.
    pub fn full_spectrum(&self, ps_state: &StateVector) -> PowerSpectrum {
        let reg = self.layout.contour_register();
        PowerSpectrum {
            values: (0..reg.dim())
                .map(|k| ps_state.amplitudes[k << reg.lsb].norm_sqr())
                .collect(),
            low_len: self.layout.low_band_len(),
        }
    }

    /// Low-band spectrum by projection: `Pi(n_lfps)` on the contour register,
    /// then post-selection of the qubits below it on `|0>`. Returns the
    /// squared amplitudes over the `2^n_lfps` kept frequencies (state units).
    pub fn low_band_by_projection(&self, ps_state: &StateVector) -> Result<Vec<f64>> {
        let l = &self.layout;
        let reg = l.contour_register();
        let (low, _) = project_low(ps_state, l.n_lfps, reg)?;
        // Remaining qubits after fixing the bottom register to 0 are the
        // contour register alone.
        let (contour_only, _) = project_rank1(&low, 0, QubitRange::new(0, reg.lsb))?;
        Ok(contour_only.amplitudes[..l.low_band_len()]
            .iter()
            .map(|a| a.norm_sqr())
            .collect())
    }
}

/// Contour values through the statevector circuit, converted to field units
/// with the encoding norm.
pub fn extract_contour_state(
    state: &StateVector,
    encoding_norm: f64,
    origin: (usize, usize),
    circuit: &WindowCircuit,
) -> Result<(Vec<f64>, ContourExtraction)> {
    let out = circuit.run(state, origin)?;
    let values = out.contour_amplitudes.iter().map(|a| a.re * encoding_norm).collect();
    Ok((values, out))
}

/// One window whose low-band peak reached the threshold.
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct Detection {
    pub x: f64,
    pub y: f64,
    pub peak: f64,
    pub frequency: usize,
}

pub fn detect_window(ps: &PowerSpectrum, gamma: f64, center: (f64, f64)) -> Option<Detection> {
    let (peak, k) = ps.low_band_peak();
    (peak >= gamma).then_some(Detection {
        x: center.0,
        y: center.1,
        peak,
        frequency: k,
    })
}

/// Merge detections whose centers are within `merge_radius` (transitively)
/// and return the group centroids in order of first appearance.
///
/// Groups whose centroids end up within `merge_radius` of each other are
/// merged as well, until all centroids are farther apart than the radius.
/// Each center is the centroid of its member detections.
pub fn dedup(raw: &[Detection], merge_radius: f64) -> (Vec<(f64, f64)>, usize) {
    let pts: Vec<(f64, f64)> = raw.iter().map(|d| (d.x, d.y)).collect();
    let centers = merge_points(&pts, merge_radius);
    let n = centers.len();
    (centers, n)
}

pub(crate) fn merge_points(pts: &[(f64, f64)], merge_radius: f64) -> Vec<(f64, f64)> {
    let n = pts.len();
    let mut parent: Vec<usize> = (0..n).collect();
    fn find(parent: &mut [usize], mut i: usize) -> usize {
        while parent[i] != i {
            parent[i] = parent[parent[i]];
            i = parent[i];
        }
        i
    }
    fn union(parent: &mut [usize], i: usize, j: usize) -> bool {
        let (a, b) = (find(parent, i), find(parent, j));
        if a != b {
            parent[a.max(b)] = a.min(b);
        }
        a != b
    }
    let close = |a: (f64, f64), b: (f64, f64)| (a.0 - b.0).hypot(a.1 - b.1) <= merge_radius;
    for i in 0..n {
        for j in i + 1..n {
            if close(pts[i], pts[j]) {
                union(&mut parent, i, j);
            }
        }
    }
    loop {
        // (root, centroid) per group, in order of first appearance.
        let mut roots: Vec<usize> = Vec::new();
        let mut sums: Vec<(f64, f64, usize)> = Vec::new();
        let mut slot = vec![usize::MAX; n];
        for i in 0..n {
            let root = find(&mut parent, i);
            if slot[root] == usize::MAX {
                slot[root] = sums.len();
                sums.push((0.0, 0.0, 0));
                roots.push(root);
            }
            let s = &mut sums[slot[root]];
            s.0 += pts[i].0;
            s.1 += pts[i].1;
            s.2 += 1;
        }
        let centers: Vec<(f64, f64)> = sums.into_iter().map(|(x, y, c)| (x / c as f64, y / c as f64)).collect();
        let mut merged = false;
        for a in 0..centers.len() {
            for b in a + 1..centers.len() {
                if close(centers[a], centers[b]) {
                    merged |= union(&mut parent, roots[a], roots[b]);
                }
            }
        }
        if !merged {
            return centers;
        }
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct DetectionReport {
    pub raw: Vec<Detection>,
    pub unique_centers: Vec<(f64, f64)>,
    pub count: usize,
}

/// Low-band response of one window.
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct WindowResponse {
    pub origin: (usize, usize),
    pub center: (f64, f64),
    pub peak: f64,
    pub frequency: usize,
}

/// Route used to compute window spectra.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Default, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum SpectrumPath {
    /// Contour pixels read from the field, classical DFT.
    #[default]
    Direct,
    /// Full statevector circuit per window.
    Circuit,
}

/// Per-window low-band peaks for step `alpha` and contour `template`.
///
/// Thresholding these responses at any `gamma` reproduces
/// [`detect_field`], which lets training reuse one scan for many
/// thresholds.
pub fn scan_field(
    field: &FlowField,
    alpha: usize,
    template: &ContourTemplate,
    layout: &RegisterLayout,
    path: SpectrumPath,
) -> Result<Vec<WindowResponse>> {
    let w = template.window_side;
    let origins = window_positions(field.width, field.height, alpha, w)?;
    let offset = template.center_offset() as f64;
    let centers = origins.iter().map(|&(x, y)| (x as f64 + offset, y as f64 + offset));
    match path {
        SpectrumPath::Direct => {
            let analyzer = SpectrumAnalyzer::new(template.points.len(), layout.n_lfps)?;
            origins
                .iter()
                .zip(centers)
                .map(|(&origin, center)| {
                    let c = extract_contour(field, origin, template)?;
                    let (peak, frequency) = analyzer.spectrum(&c)?.low_band_peak();
                    Ok(WindowResponse {
                        origin,
                        center,
                        peak,
                        frequency,
                    })
                })
                .collect()
        }
        SpectrumPath::Circuit => {
            let circuit = WindowCircuit::new(*layout, template.clone())?;
            if field.is_zero() {
                // Nothing to encode; every spectrum is identically zero.
                return Ok(origins
                    .iter()
                    .zip(centers)
                    .map(|(&origin, center)| WindowResponse {
                        origin,
                        center,
                        peak: 0.0,
                        frequency: 0,
                    })
                    .collect());
            }
            let state = encode_flow(field, layout)?;
            let scale = field.l2_norm().powi(2);
            origins
                .iter()
                .zip(centers)
                .map(|(&origin, center)| {
                    let out = circuit.run(&state, origin)?;
                    let low = circuit.low_band_by_projection(&out.ps_state).unwrap_or_else(|_| vec![0.0; layout.low_band_len()]);
                    let (peak, frequency) = low
                        .iter()
                        .enumerate()
                        .fold((f64::NEG_INFINITY, 0), |(b, bk), (k, &v)| if v * scale > b { (v * scale, k) } else { (b, bk) });
                    Ok(WindowResponse {
                        origin,
                        center,
                        peak,
                        frequency,
                    })
                })
                .collect()
        }
    }
}

/// Threshold a scan at `gamma` and merge the hits.
pub fn report_from_scan(scan: &[WindowResponse], gamma: f64, merge_radius: f64) -> DetectionReport {
    let raw: Vec<Detection> = scan
        .iter()
        .filter(|r| r.peak >= gamma)
        .map(|r| Detection {
            x: r.center.0,
            y: r.center.1,
            peak: r.peak,
            frequency: r.frequency,
        })
        .collect();
    let (unique_centers, count) = dedup(&raw, merge_radius);
    DetectionReport {
        raw,
        unique_centers,
        count,
    }
}

/// Default merge radius, twice the contour radius.
pub fn default_merge_radius(template: &ContourTemplate) -> f64 {
    2.0 * template.radius
}

/// Count vortices in `field` with the direct spectrum route.
pub fn detect_field(field: &FlowField, params: &DetectionParams, layout: &RegisterLayout) -> Result<DetectionReport> {
    detect_field_with(field, params, layout, SpectrumPath::Direct, None)
}

pub fn detect_field_with(
    field: &FlowField,
    params: &DetectionParams,
    layout: &RegisterLayout,
    path: SpectrumPath,
    merge_radius: Option<f64>,
) -> Result<DetectionReport> {
    params.validate()?;
    let template = ContourTemplate::for_layout(layout, params.beta)?;
    let scan = scan_field(field, params.alpha, &template, layout, path)?;
    let radius = merge_radius.unwrap_or_else(|| default_merge_radius(&template));
    if !(radius > 0.0) {
        return Err(invalid("merge radius must be positive"));
    }
    Ok(report_from_scan(&scan, params.gamma, radius))
}

/// JSON record of a report.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct ReportRecord {
    pub field_id: usize,
    pub params: DetectionParams,
    pub raw: Vec<RawRecord>,
    pub unique: Vec<CenterRecord>,
    pub count: usize,
}

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct RawRecord {
    pub x: f64,
    pub y: f64,
    pub peak: f64,
    pub k: usize,
}

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct CenterRecord {
    pub x: f64,
    pub y: f64,
}

impl DetectionReport {
    pub fn to_record(&self, field_id: usize, params: DetectionParams) -> ReportRecord {
        ReportRecord {
            field_id,
            params,
            raw: self
                .raw
                .iter()
                .map(|d| RawRecord {
                    x: d.x,
                    y: d.y,
                    peak: d.peak,
                    k: d.frequency,
                })
                .collect(),
            unique: self.unique_centers.iter().map(|&(x, y)| CenterRecord { x, y }).collect(),
            count: self.count,
        }
    }
}

/// CSV of per-window peaks (`x,y,peak,k`) for heatmaps.
pub fn window_peaks_csv(scan: &[WindowResponse]) -> String {
    let mut out = String::from("x,y,peak,k\n");
    for r in scan {
        out.push_str(&format!("{},{},{},{}\n", r.center.0, r.center.1, r.peak, r.frequency));
    }
    out
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::rng::seeded;
    use rand::Rng;

    fn layout() -> RegisterLayout {
        RegisterLayout::for_grid(200, 200).unwrap()
    }

    /// O(N^2) DFT power spectrum.
    fn dft_power(c: &[f64]) -> Vec<f64> {
        let n = c.len();
        (0..n)
            .map(|k| {
                let z: Complex64 = c
                    .iter()
                    .enumerate()
                    .map(|(m, &v)| Complex64::from_polar(v, -TAU * (k * m) as f64 / n as f64))
                    .sum();
                z.norm_sqr() / n as f64
            })
            .collect()
    }

    #[test]
    fn positions_single_window() {
        for a in [1, 3, 100] {
            assert_eq!(window_positions(8, 8, a, 8).unwrap(), vec![(0, 0)]);
        }
    }

    #[test]
    fn positions_200_grid() {
        let p = window_positions(200, 200, 8, 32).unwrap();
        assert_eq!(p.len(), 22 * 22);
        assert_eq!(p[0], (0, 0));
        assert_eq!(p[21], (168, 0));
        assert_eq!(*p.last().unwrap(), (168, 168));
    }

    #[test]
    fn positions_large_step_gives_corners() {
        let p = window_positions(50, 40, 500, 10).unwrap();
        assert_eq!(p, vec![(0, 0), (40, 0), (0, 30), (40, 30)]);
        assert!(matches!(window_positions(10, 40, 1, 11), Err(Error::WindowTooLarge { .. })));
    }

    #[test]
    fn template_default_is_valid() {
        let t = ContourTemplate::new(32, 3.0, 5).unwrap();
        assert_eq!(t.points.len(), 32);
        assert!((t.radius - 32.0 / 6.0).abs() < 1e-12);
        assert_eq!(t.points[0], (5, 0));
        assert_eq!(t.points[8], (0, 5));
    }

    #[test]
    fn template_guards() {
        // radius 4 < 32 / (2 pi)
        assert!(ContourTemplate::new(32, 4.0, 5).is_err());
        // radius 16 leaves the window
        assert!(ContourTemplate::new(32, 1.0, 5).is_err());
        assert!(ContourTemplate::new(32, 2.0, 5).is_ok());
    }

    #[test]
    fn spectrum_of_zero_and_constant() {
        let z = power_spectrum(&[0.0; 32], 3).unwrap();
        assert!(z.values.iter().all(|v| *v == 0.0));
        let a = 0.7;
        let c = power_spectrum(&[a; 32], 3).unwrap();
        assert!((c.values[0] - 32.0 * a * a).abs() < 1e-12);
        assert!(c.values[1..].iter().all(|v| v.abs() < 1e-12));
        assert_eq!(c.low_band().len(), 8);
        assert!(power_spectrum(&[1.0; 31], 3).is_err());
        assert!(SpectrumAnalyzer::new(32, 3).unwrap().spectrum(&[0.0; 16]).is_err());
    }

    #[test]
    fn spectrum_matches_direct_dft() {
        let mut rng = seeded(8);
        for _ in 0..10 {
            let c: Vec<f64> = (0..32).map(|_| rng.random_range(-1.0..1.0)).collect();
            let ps = power_spectrum(&c, 3).unwrap();
            let oracle = dft_power(&c);
            for (a, b) in ps.values.iter().zip(&oracle) {
                assert!((a - b).abs() < 1e-10);
            }
            let energy: f64 = c.iter().map(|v| v * v).sum();
            assert!((ps.values.iter().sum::<f64>() - energy).abs() < 1e-9);
        }
    }

    #[test]
    fn detect_window_threshold() {
        let flat = PowerSpectrum {
            values: vec![0.01; 32],
            low_len: 8,
        };
        assert!(detect_window(&flat, 0.9, (0.0, 0.0)).is_none());
        let mut values = vec![0.05; 32];
        values[0] = 2.4;
        let peaked = PowerSpectrum { values, low_len: 8 };
        let d = detect_window(&peaked, 0.9, (3.0, 4.0)).unwrap();
        assert_eq!((d.frequency, d.x, d.y), (0, 3.0, 4.0));
        assert!(detect_window(&peaked, f64::INFINITY, (0.0, 0.0)).is_none());
    }

    fn det(x: f64, y: f64) -> Detection {
        Detection {
            x,
            y,
            peak: 1.0,
            frequency: 0,
        }
    }

    #[test]
    fn dedup_basic() {
        assert_eq!(dedup(&[], 10.0).1, 0);
        let (c, n) = dedup(&[det(10.0, 10.0), det(11.0, 10.0)], 10.0);
        assert_eq!(n, 1);
        assert_eq!(c[0], (10.5, 10.0));
    }

    #[test]
    fn dedup_is_transitive() {
        let (c, n) = dedup(&[det(0.0, 0.0), det(8.0, 0.0), det(16.0, 0.0), det(100.0, 0.0)], 10.0);
        assert_eq!(n, 2);
        assert_eq!(c, vec![(8.0, 0.0), (100.0, 0.0)]);
    }

    #[test]
    fn contour_of_constant_window() {
        let f = FlowField::from_values(40, 40, vec![0.5; 1600]).unwrap();
        let t = ContourTemplate::new(32, 3.0, 5).unwrap();
        assert!(extract_contour(&f, (3, 5), &t).unwrap().iter().all(|v| *v == 0.5));
        assert!(extract_contour(&f, (9, 0), &t).is_err());
    }

    #[test]
    fn circuit_reads_contour_pixels() {
        let l = layout();
        let t = ContourTemplate::for_layout(&l, 3.0).unwrap();
        let circuit = WindowCircuit::new(l, t.clone()).unwrap();
        let mut rng = seeded(21);
        let values: Vec<f64> = (0..200 * 200).map(|_| rng.random_range(-1.0..1.0)).collect();
        let f = FlowField::from_values(200, 200, values).unwrap();
        let state = encode_flow(&f, &l).unwrap();
        let norm = f.l2_norm();
        let origin = (37, 101);
        let (via_state, out) = extract_contour_state(&state, norm, origin, &circuit).unwrap();
        let direct = extract_contour(&f, origin, &t).unwrap();
        for (a, b) in via_state.iter().zip(&direct) {
            assert!((a - b).abs() < 1e-12 * b.abs().max(1.0));
        }
        let full = circuit.full_spectrum(&out.ps_state);
        let ps = power_spectrum(&direct, l.n_lfps).unwrap();
        let scale = norm * norm;
        for (a, b) in full.values.iter().zip(&ps.values) {
            assert!((a * scale - b).abs() < 1e-9 * b.max(1e-3));
        }
        let low = circuit.low_band_by_projection(&out.ps_state).unwrap();
        for (a, b) in low.iter().zip(ps.low_band()) {
            assert!((a * scale - b).abs() < 1e-9 * b.max(1e-3));
        }
    }

    #[test]
    fn zero_field_has_no_detections() {
        let f = FlowField::from_values(200, 200, vec![0.0; 40000]).unwrap();
        let r = detect_field(&f, &DetectionParams::default(), &layout()).unwrap();
        assert_eq!(r.count, 0);
        let r = detect_field_with(&f, &DetectionParams::default(), &layout(), SpectrumPath::Circuit, None).unwrap();
        assert_eq!(r.count, 0);
    }

    #[test]
    fn report_record_shape() {
        let report = DetectionReport {
            raw: vec![det(1.0, 2.0)],
            unique_centers: vec![(1.0, 2.0)],
            count: 1,
        };
        let json = serde_json::to_value(report.to_record(4, DetectionParams::default())).unwrap();
        assert_eq!(json["field_id"], 4);
        assert_eq!(json["raw"][0]["k"], 0);
        assert_eq!(json["unique"][0]["y"], 2.0);
        assert_eq!(json["count"], 1);
    }

    #[test]
    fn infinite_gamma_json_roundtrip() {
        let p = DetectionParams::new(8, 3.0, f64::INFINITY).unwrap();
        let json = serde_json::to_string(&p).unwrap();
        assert!(json.contains("\"inf\""));
        assert_eq!(serde_json::from_str::<DetectionParams>(&json).unwrap(), p);
        let q: DetectionParams = serde_json::from_str(r#"{"gamma": 0.5}"#).unwrap();
        assert_eq!(q.gamma, 0.5);
    }
}
