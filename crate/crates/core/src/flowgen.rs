//! Synthetic Lamb-Oseen flow fields.
//!
//! Velocity fields are built by superposing randomly placed Lamb-Oseen
//! vortices and a smoothed Gaussian noise field; vorticity is the discrete
//! curl of that velocity, normalized per field so that `max |psi| = 1`.

use rand::Rng;
use rand_distr::{Distribution, StandardNormal};
use serde::{Deserialize, Serialize};

use crate::error::{invalid, Error, Result};
use crate::rng::{derive_seed, seeded};

/// Attempts allowed when rejection-sampling vortex centers for one field.
pub const PLACEMENT_ATTEMPTS: usize = 20_000;

/// Largest number of vortices a dataset may request per field.
pub const MAX_VORTICES: usize = 8;

/// Dense row-major scalar grid; `data[y * width + x]`.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct ScalarGrid {
    pub width: usize,
    pub height: usize,
    pub data: Vec<f64>,
}

impl ScalarGrid {
    pub fn zeros(width: usize, height: usize) -> Self {
        Self {
            width,
            height,
            data: vec![0.0; width * height],
        }
    }

    pub fn from_fn(width: usize, height: usize, f: impl Fn(usize, usize) -> f64) -> Self {
        let mut data = Vec::with_capacity(width * height);
        for y in 0..height {
            for x in 0..width {
                data.push(f(x, y));
            }
        }
        Self {
            width,
            height,
            data,
        }
    }

    #[inline]
    pub fn get(&self, x: usize, y: usize) -> f64 {
        self.data[y * self.width + x]
    }

    #[inline]
    pub fn set(&mut self, x: usize, y: usize, v: f64) {
        self.data[y * self.width + x] = v;
    }

    pub fn max_abs(&self) -> f64 {
        self.data.iter().fold(0.0, |m, v| m.max(v.abs()))
    }

    fn same_shape(&self, other: &ScalarGrid) -> bool {
        self.width == other.width && self.height == other.height
    }
}

/// One Lamb-Oseen vortex.
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct VortexParams {
    pub center_x: f64,
    pub center_y: f64,
    /// Dimensionless vorticity diffusion parameter.
    pub delta: f64,
    /// Peak tangential velocity.
    pub v_max: f64,
    /// Core radius in pixels.
    pub core_radius: f64,
    /// +1 for anticlockwise (positive vorticity), -1 for clockwise.
    pub circulation_sign: i8,
}

impl VortexParams {
    pub fn new(
        center_x: f64,
        center_y: f64,
        delta: f64,
        v_max: f64,
        core_radius: f64,
        circulation_sign: i8,
    ) -> Result<Self> {
        let p = Self {
            center_x,
            center_y,
            delta,
            v_max,
            core_radius,
            circulation_sign,
        };
        p.validate()?;
        Ok(p)
    }

    pub fn validate(&self) -> Result<()> {
        if !(self.delta > 0.0 && self.v_max > 0.0 && self.core_radius > 0.0) {
            return Err(invalid("vortex delta, v_max and core_radius must be positive"));
        }
        if self.circulation_sign != 1 && self.circulation_sign != -1 {
            return Err(invalid("circulation_sign must be +1 or -1"));
        }
        Ok(())
    }

    /// Peak vorticity at the core, `v_max (2 delta + 1) / r`.
    pub fn peak_vorticity(&self) -> f64 {
        self.v_max * (2.0 * self.delta + 1.0) / self.core_radius
    }
}

/// Tangential speed of a Lamb-Oseen vortex at radial distance `radius`.
///
/// `v_max (1 + 1/(2 delta)) (r/R) [1 - exp(-delta R^2 / r^2)]`, with the
/// removable singularity at `R = 0` evaluated as its limit 0.
pub fn eval_lamb_oseen(p: &VortexParams, radius: f64) -> f64 {
    if radius <= 0.0 {
        return 0.0;
    }
    let r = p.core_radius;
    let scaled = p.delta * radius * radius / (r * r);
    // -expm1(-x) == 1 - exp(-x) without cancellation for tiny x
    p.v_max * (1.0 + 1.0 / (2.0 * p.delta)) * (r / radius) * (-(-scaled).exp_m1())
}

/// Inclusive real interval.
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct ParamRange {
    pub min: f64,
    pub max: f64,
}

impl ParamRange {
    pub const fn new(min: f64, max: f64) -> Self {
        Self { min, max }
    }

    pub fn midpoint(&self) -> f64 {
        0.5 * (self.min + self.max)
    }

    fn sample<R: Rng + ?Sized>(&self, rng: &mut R) -> f64 {
        if self.max > self.min {
            rng.random_range(self.min..=self.max)
        } else {
            self.min
        }
    }

    fn validate(&self, name: &str) -> Result<()> {
        if !(self.min.is_finite() && self.max.is_finite() && self.min <= self.max) {
            return Err(invalid(format!("{name} range must be finite with min <= max")));
        }
        Ok(())
    }
}

/// Inclusive integer interval of vortex counts.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
pub struct CountRange {
    pub min: usize,
    pub max: usize,
}

impl CountRange {
    pub const fn new(min: usize, max: usize) -> Self {
        Self { min, max }
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
#[serde(default)]
pub struct NoiseConfig {
    /// Standard deviation of each smoothed noise velocity component, as a
    /// fraction of the mean of the `v_max` range.
    pub amplitude: f64,
    /// Gaussian smoothing width in pixels.
    pub kernel_sigma: f64,
    pub seed: u64,
}

impl Default for NoiseConfig {
    fn default() -> Self {
        Self {
            amplitude: 0.1,
            kernel_sigma: 5.0,
            seed: 0,
        }
    }
}

impl NoiseConfig {
    pub fn silent() -> Self {
        Self {
            amplitude: 0.0,
            ..Self::default()
        }
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(default)]
pub struct DatasetSpec {
    pub n_fields: usize,
    pub width: usize,
    pub height: usize,
    pub vortex_count_range: CountRange,
    pub delta_range: ParamRange,
    pub v_max_range: ParamRange,
    pub core_radius_range: ParamRange,
    /// Minimum pairwise distance between vortex centers, in pixels.
    pub min_separation: f64,
    /// Vortex centers are kept at least this far from the grid boundary.
    pub edge_margin: f64,
    pub noise: NoiseConfig,
    pub seed: u64,
}

impl Default for DatasetSpec {
    fn default() -> Self {
        Self {
            n_fields: 60,
            width: 200,
            height: 200,
            vortex_count_range: CountRange::new(4, 8),
            delta_range: ParamRange::new(0.5, 2.0),
            v_max_range: ParamRange::new(0.5, 1.5),
            core_radius_range: ParamRange::new(6.0, 14.0),
            min_separation: 40.0,
            edge_margin: 20.0,
            noise: NoiseConfig::default(),
            seed: 0,
        }
    }
}

impl DatasetSpec {
    pub fn validate(&self) -> Result<()> {
        if self.width == 0 || self.height == 0 {
            return Err(invalid("grid dimensions must be positive"));
        }
        let c = self.vortex_count_range;
        if c.min > c.max || c.max > MAX_VORTICES {
            return Err(invalid(format!(
                "vortex_count_range [{}, {}] must satisfy min <= max <= {MAX_VORTICES}",
                c.min, c.max
            )));
        }
        self.delta_range.validate("delta")?;
        self.v_max_range.validate("v_max")?;
        self.core_radius_range.validate("core_radius")?;
        if self.delta_range.min <= 0.0 || self.v_max_range.min <= 0.0 || self.core_radius_range.min <= 0.0 {
            return Err(invalid("vortex parameter ranges must be strictly positive"));
        }
        if !(self.min_separation > 0.0) {
            return Err(invalid("min_separation must be positive"));
        }
        if !(self.edge_margin >= 0.0)
            || 2.0 * self.edge_margin > self.width as f64
            || 2.0 * self.edge_margin > self.height as f64
        {
            return Err(invalid("edge_margin leaves no room for vortex centers"));
        }
        if !(self.noise.amplitude >= 0.0) || !(self.noise.kernel_sigma > 0.0) {
            return Err(invalid("noise amplitude must be >= 0 and kernel_sigma > 0"));
        }
        Ok(())
    }

    /// Seed of field `index`; the only source of randomness for that field.
    pub fn field_seed(&self, index: usize) -> u64 {
        derive_seed(self.seed, index as u64)
    }
}

/// A vorticity field with its ground truth.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct FlowField {
    pub width: usize,
    pub height: usize,
    /// Row-major vorticity, `vorticity[y * width + x]`.
    pub vorticity: Vec<f64>,
    pub vortices: Vec<VortexParams>,
    pub true_count: usize,
    pub seed: u64,
}

impl FlowField {
    pub fn new(grid: ScalarGrid, vortices: Vec<VortexParams>, seed: u64) -> Result<Self> {
        if grid.data.len() != grid.width * grid.height {
            return Err(Error::ShapeMismatch("grid data length".into()));
        }
        if grid.data.iter().any(|v| !v.is_finite()) {
            return Err(invalid("vorticity must be finite"));
        }
        Ok(Self {
            width: grid.width,
            height: grid.height,
            vorticity: grid.data,
            true_count: vortices.len(),
            vortices,
            seed,
        })
    }

    /// Field with no ground-truth vortices.
    pub fn from_values(width: usize, height: usize, values: Vec<f64>) -> Result<Self> {
        if values.len() != width * height {
            return Err(Error::ShapeMismatch(format!(
                "{} values for a {width}x{height} grid",
                values.len()
            )));
        }
        Self::new(
            ScalarGrid {
                width,
                height,
                data: values,
            },
            Vec::new(),
            0,
        )
    }

    #[inline]
    pub fn at(&self, x: usize, y: usize) -> f64 {
        self.vorticity[y * self.width + x]
    }

    pub fn l2_norm(&self) -> f64 {
        self.vorticity.iter().map(|v| v * v).sum::<f64>().sqrt()
    }

    pub fn is_zero(&self) -> bool {
        self.vorticity.iter().all(|&v| v == 0.0)
    }
}

/// Velocity components on the grid plus the vortices that produced them.
#[derive(Debug, Clone)]
pub struct VelocityField {
    pub vx: ScalarGrid,
    pub vy: ScalarGrid,
    pub vortices: Vec<VortexParams>,
}

fn place_vortices<R: Rng + ?Sized>(spec: &DatasetSpec, rng: &mut R) -> Result<Vec<VortexParams>> {
    let count_range = spec.vortex_count_range;
    let m = rng.random_range(count_range.min..=count_range.max);
    let mut vortices: Vec<VortexParams> = Vec::with_capacity(m);
    let (lo_x, hi_x) = (spec.edge_margin, spec.width as f64 - 1.0 - spec.edge_margin);
    let (lo_y, hi_y) = (spec.edge_margin, spec.height as f64 - 1.0 - spec.edge_margin);
    let mut attempts = 0;
    while vortices.len() < m {
        if attempts >= PLACEMENT_ATTEMPTS {
            return Err(Error::PlacementFailure {
                requested: m,
                placed: vortices.len(),
                min_separation: spec.min_separation,
                attempts,
            });
        }
        attempts += 1;
        let cx = if hi_x > lo_x { rng.random_range(lo_x..=hi_x) } else { lo_x };
        let cy = if hi_y > lo_y { rng.random_range(lo_y..=hi_y) } else { lo_y };
        let clear = vortices
            .iter()
            .all(|v| (v.center_x - cx).hypot(v.center_y - cy) >= spec.min_separation);
        if !clear {
            continue;
        }
        let delta = spec.delta_range.sample(rng);
        let v_max = spec.v_max_range.sample(rng);
        let core_radius = spec.core_radius_range.sample(rng);
        let sign = if rng.random_bool(0.5) { 1 } else { -1 };
        vortices.push(VortexParams::new(cx, cy, delta, v_max, core_radius, sign)?);
    }
    Ok(vortices)
}

/// Separable Gaussian blur, kernel truncated at `3 sigma`, edges clamped.
pub fn gaussian_smooth(grid: &ScalarGrid, sigma: f64) -> ScalarGrid {
    let kernel = gaussian_kernel(sigma);
    let half = (kernel.len() / 2) as isize;
    let (w, h) = (grid.width as isize, grid.height as isize);
    let mut tmp = ScalarGrid::zeros(grid.width, grid.height);
    for y in 0..h {
        for x in 0..w {
            let mut acc = 0.0;
            for (k, kv) in kernel.iter().enumerate() {
                let xx = (x + k as isize - half).clamp(0, w - 1);
                acc += kv * grid.data[(y * w + xx) as usize];
            }
            tmp.data[(y * w + x) as usize] = acc;
        }
    }
    let mut out = ScalarGrid::zeros(grid.width, grid.height);
    for y in 0..h {
        for x in 0..w {
            let mut acc = 0.0;
            for (k, kv) in kernel.iter().enumerate() {
                let yy = (y + k as isize - half).clamp(0, h - 1);
                acc += kv * tmp.data[(yy * w + x) as usize];
            }
            out.data[(y * w + x) as usize] = acc;
        }
    }
    out
}

fn gaussian_kernel(sigma: f64) -> Vec<f64> {
    let half = (3.0 * sigma).ceil() as isize;
    let mut k: Vec<f64> = (-half..=half)
        .map(|i| (-(i * i) as f64 / (2.0 * sigma * sigma)).exp())
        .collect();
    let s: f64 = k.iter().sum();
    k.iter_mut().for_each(|v| *v /= s);
    k
}

/// One component of smoothed noise with standard deviation `std` (away
/// from the clamped edges).
fn smoothed_noise<R: Rng + ?Sized>(width: usize, height: usize, sigma: f64, std: f64, rng: &mut R) -> ScalarGrid {
    let white = ScalarGrid {
        width,
        height,
        data: (0..width * height).map(|_| StandardNormal.sample(rng)).collect(),
    };
    let mut smooth = gaussian_smooth(&white, sigma);
    // A separable unit-sum kernel k scales unit white noise to std sum(k^2).
    let gain: f64 = gaussian_kernel(sigma).iter().map(|v| v * v).sum();
    let scale = std / gain;
    smooth.data.iter_mut().for_each(|v| *v *= scale);
    smooth
}

/// Random Lamb-Oseen velocity field for one dataset member.
pub fn synthesize_velocity(spec: &DatasetSpec, seed: u64) -> Result<VelocityField> {
    spec.validate()?;
    let mut rng = seeded(seed);
    let vortices = place_vortices(spec, &mut rng)?;

    let (w, h) = (spec.width, spec.height);
    let mut vx = ScalarGrid::zeros(w, h);
    let mut vy = ScalarGrid::zeros(w, h);
    for v in &vortices {
        let sign = v.circulation_sign as f64;
        for y in 0..h {
            for x in 0..w {
                let dx = x as f64 - v.center_x;
                let dy = y as f64 - v.center_y;
                let radius = dx.hypot(dy);
                if radius == 0.0 {
                    continue;
                }
                let speed = sign * eval_lamb_oseen(v, radius) / radius;
                let i = y * w + x;
                vx.data[i] -= speed * dy;
                vy.data[i] += speed * dx;
            }
        }
    }

    if spec.noise.amplitude > 0.0 {
        let std = spec.noise.amplitude * spec.v_max_range.midpoint();
        let mut noise_rng = seeded(derive_seed(spec.noise.seed, seed));
        let nx = smoothed_noise(w, h, spec.noise.kernel_sigma, std, &mut noise_rng);
        let ny = smoothed_noise(w, h, spec.noise.kernel_sigma, std, &mut noise_rng);
        vx.data.iter_mut().zip(&nx.data).for_each(|(a, b)| *a += b);
        vy.data.iter_mut().zip(&ny.data).for_each(|(a, b)| *a += b);
    }
    Ok(VelocityField { vx, vy, vortices })
}

/// Derivative along one axis: central differences inside, one-sided at the
/// two ends, unit spacing.
fn diff_1d(n: usize, at: impl Fn(usize) -> f64, i: usize) -> f64 {
    if n < 2 {
        0.0
    } else if i == 0 {
        at(1) - at(0)
    } else if i == n - 1 {
        at(n - 1) - at(n - 2)
    } else {
        0.5 * (at(i + 1) - at(i - 1))
    }
}

/// Scalar 2D curl `d(v_y)/dx - d(v_x)/dy` with unit pixel spacing.
pub fn curl2d(vx: &ScalarGrid, vy: &ScalarGrid) -> Result<ScalarGrid> {
    if !vx.same_shape(vy) || vx.data.len() != vx.width * vx.height || vy.data.len() != vy.width * vy.height {
        return Err(Error::ShapeMismatch(format!(
            "v_x is {}x{}, v_y is {}x{}",
            vx.width, vx.height, vy.width, vy.height
        )));
    }
    let (w, h) = (vx.width, vx.height);
    Ok(ScalarGrid::from_fn(w, h, |x, y| {
        let dvy_dx = diff_1d(w, |xx| vy.get(xx, y), x);
        let dvx_dy = diff_1d(h, |yy| vx.get(x, yy), y);
        dvy_dx - dvx_dy
    }))
}

/// Field `index` of the dataset described by `spec`.
pub fn generate_field(spec: &DatasetSpec, index: usize) -> Result<FlowField> {
    let seed = spec.field_seed(index);
    let velocity = synthesize_velocity(spec, seed)?;
    let mut vorticity = curl2d(&velocity.vx, &velocity.vy)?;
    let peak = vorticity.max_abs();
    if peak > 0.0 {
        vorticity.data.iter_mut().for_each(|v| *v /= peak);
    }
    FlowField::new(vorticity, velocity.vortices, seed)
}

pub fn generate_dataset(spec: &DatasetSpec) -> Result<Vec<FlowField>> {
    spec.validate()?;
    (0..spec.n_fields).map(|i| generate_field(spec, i)).collect()
}

/// Balanced two-class dataset: `n_per_class` vortex-free fields followed by
/// `n_per_class` fields drawing their vortex count from `vortical_counts`.
///
/// The classes use independent seed streams derived from `base.seed`.
pub fn generate_balanced_dataset(
    base: &DatasetSpec,
    n_per_class: usize,
    vortical_counts: CountRange,
) -> Result<(Vec<FlowField>, Vec<FlowField>)> {
    let non_vortical = DatasetSpec {
        n_fields: n_per_class,
        vortex_count_range: CountRange::new(0, 0),
        seed: derive_seed(base.seed, u64::MAX),
        ..base.clone()
    };
    let vortical = DatasetSpec {
        n_fields: n_per_class,
        vortex_count_range: vortical_counts,
        seed: derive_seed(base.seed, u64::MAX - 1),
        ..base.clone()
    };
    Ok((generate_dataset(&non_vortical)?, generate_dataset(&vortical)?))
}
