//! Dense statevectors and the linear maps of the detection circuits.
//!
//! Basis index convention: for a flow of `x_bits + y_bits` qubits the pixel
//! at column `x`, row `y` lives at index `x * 2^y_bits + y`, i.e. the
//! x-register holds the most significant qubits. A [`QubitRange`] addresses
//! a contiguous block of qubits by its least significant position; operators
//! on a register act blockwise over every other qubit.

use std::io::{Read, Write};

use num_complex::Complex64;
use rustfft::FftPlanner;
use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};
use crate::flowgen::FlowField;
use crate::rng::{multinomial, seeded};

/// Contiguous qubits `[lsb, lsb + len)` of a state's index.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
pub struct QubitRange {
    pub lsb: usize,
    pub len: usize,
}

impl QubitRange {
    pub const fn new(lsb: usize, len: usize) -> Self {
        Self { lsb, len }
    }

    /// The whole index of an `n`-qubit state.
    pub const fn all(n: usize) -> Self {
        Self { lsb: 0, len: n }
    }

    pub fn dim(&self) -> usize {
        1 << self.len
    }

    fn check(&self, n_qubits: usize) -> Result<()> {
        if self.lsb + self.len > n_qubits {
            return Err(Error::InvalidLayout(format!(
                "register [{}, {}) exceeds {n_qubits} qubits",
                self.lsb,
                self.lsb + self.len
            )));
        }
        Ok(())
    }
}

/// Qubit budget of the detection circuit.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
pub struct RegisterLayout {
    /// Flow register, `x_bits + y_bits`.
    pub n_f: usize,
    /// Window register (top `n_w` flow qubits after the window permutation).
    pub n_w: usize,
    /// Contour register (top `n_c` qubits after the contour permutation).
    pub n_c: usize,
    /// Low-frequency band kept by the projector.
    pub n_lfps: usize,
    pub x_bits: usize,
    pub y_bits: usize,
}

impl RegisterLayout {
    pub fn new(x_bits: usize, y_bits: usize, n_w: usize, n_c: usize, n_lfps: usize) -> Result<Self> {
        let layout = Self {
            n_f: x_bits + y_bits,
            n_w,
            n_c,
            n_lfps,
            x_bits,
            y_bits,
        };
        layout.validate()?;
        Ok(layout)
    }

    /// Smallest flow register holding `width x height`, with a 10-qubit
    /// (32x32) window, 5-qubit contour and 3-qubit low band.
    pub fn for_grid(width: usize, height: usize) -> Result<Self> {
        Self::new(bits_for(width), bits_for(height), 10, 5, 3)
    }

    pub fn validate(&self) -> Result<()> {
        if self.x_bits + self.y_bits != self.n_f {
            return Err(Error::InvalidLayout("x_bits + y_bits must equal n_f".into()));
        }
        if !(self.n_f >= self.n_w && self.n_w > self.n_c && self.n_c > self.n_lfps) {
            return Err(Error::InvalidLayout(format!(
                "need n_f >= n_w > n_c > n_lfps, got {} {} {} {}",
                self.n_f, self.n_w, self.n_c, self.n_lfps
            )));
        }
        if self.n_f > 28 {
            return Err(Error::InvalidLayout("flow register above 28 qubits".into()));
        }
        if self.window_side() > (1 << self.x_bits) || self.window_side() > (1 << self.y_bits) {
            return Err(Error::InvalidLayout("window is wider than the flow register".into()));
        }
        Ok(())
    }

    /// Side of the square window held by the window register: the largest
    /// `W` with `W^2 <= 2^n_w`.
    pub fn window_side(&self) -> usize {
        let cap = 1usize << self.n_w;
        let mut w = (cap as f64).sqrt() as usize;
        while (w + 1) * (w + 1) <= cap {
            w += 1;
        }
        while w * w > cap {
            w -= 1;
        }
        w
    }

    pub fn contour_len(&self) -> usize {
        1 << self.n_c
    }

    pub fn low_band_len(&self) -> usize {
        1 << self.n_lfps
    }

    pub fn flow_register(&self) -> QubitRange {
        QubitRange::new(0, self.n_f)
    }

    pub fn x_register(&self) -> QubitRange {
        QubitRange::new(self.y_bits, self.x_bits)
    }

    pub fn y_register(&self) -> QubitRange {
        QubitRange::new(0, self.y_bits)
    }

    pub fn window_register(&self) -> QubitRange {
        QubitRange::new(self.n_f - self.n_w, self.n_w)
    }

    pub fn contour_register(&self) -> QubitRange {
        QubitRange::new(self.n_f - self.n_c, self.n_c)
    }

    /// Basis index of pixel `(x, y)`.
    #[inline]
    pub fn pixel_index(&self, x: usize, y: usize) -> usize {
        (x << self.y_bits) | y
    }
}

fn bits_for(n: usize) -> usize {
    n.max(1).next_power_of_two().trailing_zeros() as usize
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct StateVector {
    pub n_qubits: usize,
    pub amplitudes: Vec<Complex64>,
    pub layout: Option<RegisterLayout>,
}

impl StateVector {
    pub fn new(amplitudes: Vec<Complex64>) -> Result<Self> {
        let len = amplitudes.len();
        if len == 0 || !len.is_power_of_two() {
            return Err(Error::InvalidParameter(format!(
                "statevector length {len} is not a power of two"
            )));
        }
        Ok(Self {
            n_qubits: len.trailing_zeros() as usize,
            amplitudes,
            layout: None,
        })
    }

    pub fn from_real(values: &[f64]) -> Result<Self> {
        Self::new(values.iter().map(|&v| Complex64::new(v, 0.0)).collect())
    }

    pub fn basis(n_qubits: usize, index: usize) -> Self {
        let mut amplitudes = vec![Complex64::new(0.0, 0.0); 1 << n_qubits];
        amplitudes[index] = Complex64::new(1.0, 0.0);
        Self {
            n_qubits,
            amplitudes,
            layout: None,
        }
    }

    pub fn with_layout(mut self, layout: RegisterLayout) -> Self {
        self.layout = Some(layout);
        self
    }

    pub fn dim(&self) -> usize {
        self.amplitudes.len()
    }

    pub fn norm_sqr(&self) -> f64 {
        self.amplitudes.iter().map(|a| a.norm_sqr()).sum()
    }

    pub fn normalized(&self) -> Result<Self> {
        let n = self.norm_sqr().sqrt();
        if n == 0.0 {
            return Err(Error::ProjectionEmpty);
        }
        Ok(Self {
            amplitudes: self.amplitudes.iter().map(|a| a / n).collect(),
            ..self.clone()
        })
    }

    pub fn probabilities(&self) -> Vec<f64> {
        self.amplitudes.iter().map(|a| a.norm_sqr()).collect()
    }

    /// Apply `f` to every register slice in place. The slice handed to `f`
    /// is indexed by the register value.
    fn for_each_block(&mut self, reg: QubitRange, mut f: impl FnMut(&mut [Complex64])) {
        let stride = 1usize << reg.lsb;
        let dim = reg.dim();
        let outer = self.dim() >> (reg.lsb + reg.len);
        let mut buf = vec![Complex64::new(0.0, 0.0); dim];
        for hi in 0..outer {
            let base_hi = hi << (reg.lsb + reg.len);
            for lo in 0..stride {
                let base = base_hi | lo;
                for (r, b) in buf.iter_mut().enumerate() {
                    *b = self.amplitudes[base + r * stride];
                }
                f(&mut buf);
                for (r, b) in buf.iter().enumerate() {
                    self.amplitudes[base + r * stride] = *b;
                }
            }
        }
    }

    /// Write the binary dump: magic, qubit count, optional layout and
    /// interleaved little-endian `f64` real/imaginary pairs.
    pub fn write_dump<W: Write>(&self, mut w: W) -> Result<()> {
        w.write_all(DUMP_MAGIC)?;
        w.write_all(&(self.n_qubits as u32).to_le_bytes())?;
        match &self.layout {
            Some(l) => {
                w.write_all(&[1])?;
                for v in [l.n_f, l.n_w, l.n_c, l.n_lfps, l.x_bits, l.y_bits] {
                    w.write_all(&(v as u32).to_le_bytes())?;
                }
            }
            None => w.write_all(&[0])?,
        }
        for a in &self.amplitudes {
            w.write_all(&a.re.to_le_bytes())?;
            w.write_all(&a.im.to_le_bytes())?;
        }
        Ok(())
    }

    pub fn read_dump<R: Read>(mut r: R) -> Result<Self> {
        let mut magic = [0u8; 8];
        r.read_exact(&mut magic)?;
        if &magic != DUMP_MAGIC {
            return Err(Error::Format("not a statevector dump".into()));
        }
        let n_qubits = read_u32(&mut r)? as usize;
        if n_qubits > 30 {
            return Err(Error::Format(format!("{n_qubits} qubits")));
        }
        let mut flag = [0u8; 1];
        r.read_exact(&mut flag)?;
        let layout = if flag[0] == 1 {
            let mut v = [0usize; 6];
            for slot in &mut v {
                *slot = read_u32(&mut r)? as usize;
            }
            Some(RegisterLayout {
                n_f: v[0],
                n_w: v[1],
                n_c: v[2],
                n_lfps: v[3],
                x_bits: v[4],
                y_bits: v[5],
            })
        } else {
            None
        };
        let mut amplitudes = Vec::with_capacity(1 << n_qubits);
        let mut buf = [0u8; 16];
        for _ in 0..(1usize << n_qubits) {
            r.read_exact(&mut buf)?;
            let re = f64::from_le_bytes(buf[..8].try_into().unwrap());
            let im = f64::from_le_bytes(buf[8..].try_into().unwrap());
            amplitudes.push(Complex64::new(re, im));
        }
        Ok(Self {
            n_qubits,
            amplitudes,
            layout,
        })
    }
}

const DUMP_MAGIC: &[u8; 8] = b"QVDSTATE";

fn read_u32<R: Read>(r: &mut R) -> Result<u32> {
    let mut b = [0u8; 4];
    r.read_exact(&mut b)?;
    Ok(u32::from_le_bytes(b))
}

/// A bijection on `[0, 2^n)`; `order[j]` is the basis index that is moved
/// to `|j>`.
#[derive(Debug, Clone, PartialEq, Eq, Serialize, Deserialize)]
pub struct Permutation {
    order: Vec<usize>,
}

impl Permutation {
    pub fn new(order: Vec<usize>) -> Result<Self> {
        let n = order.len();
        if n == 0 || !n.is_power_of_two() {
            return Err(Error::NotABijection(n));
        }
        let mut seen = vec![false; n];
        for &o in &order {
            if o >= n || seen[o] {
                return Err(Error::NotABijection(n));
            }
            seen[o] = true;
        }
        Ok(Self { order })
    }

    pub fn identity(n_qubits: usize) -> Self {
        Self {
            order: (0..1 << n_qubits).collect(),
        }
    }

    /// The permutation equivalent to a cyclic shift by `d`:
    /// `order[j] = (j - d) mod 2^n`.
    pub fn cyclic_shift(n_qubits: usize, d: i64) -> Self {
        let dim = 1i64 << n_qubits;
        Self {
            order: (0..dim).map(|j| (j - d).rem_euclid(dim) as usize).collect(),
        }
    }

    /// Build from the relevant subset only. `moves` lists `(target, source)`
    /// pairs; every other target receives the remaining sources in
    /// increasing order, which fixes the unconstrained part deterministically.
    pub fn from_partial(n_qubits: usize, moves: impl IntoIterator<Item = (usize, usize)>) -> Result<Self> {
        let dim = 1usize << n_qubits;
        let mut order = vec![usize::MAX; dim];
        let mut used = vec![false; dim];
        for (target, source) in moves {
            if target >= dim || source >= dim || order[target] != usize::MAX || used[source] {
                return Err(Error::NotABijection(dim));
            }
            order[target] = source;
            used[source] = true;
        }
        let mut free_sources = used.iter().enumerate().filter(|(_, u)| !**u).map(|(i, _)| i);
        for slot in order.iter_mut().filter(|o| **o == usize::MAX) {
            *slot = free_sources.next().expect("counts match");
        }
        Ok(Self { order })
    }

    pub fn n_qubits(&self) -> usize {
        self.order.len().trailing_zeros() as usize
    }

    pub fn order(&self) -> &[usize] {
        &self.order
    }

    pub fn inverse(&self) -> Self {
        let mut inv = vec![0; self.order.len()];
        for (j, &o) in self.order.iter().enumerate() {
            inv[o] = j;
        }
        Self { order: inv }
    }
}

/// Amplitude-encode a vorticity field: `psi[x, y] / ||psi||` at
/// `x * 2^y_bits + y`, zero on the padding.
pub fn encode_flow(field: &FlowField, layout: &RegisterLayout) -> Result<StateVector> {
    layout.validate()?;
    if field.width > 1 << layout.x_bits || field.height > 1 << layout.y_bits {
        return Err(Error::GridTooLarge {
            width: field.width,
            height: field.height,
            x_bits: layout.x_bits,
            y_bits: layout.y_bits,
        });
    }
    let norm = field.l2_norm();
    if norm == 0.0 {
        return Err(Error::EmptyField);
    }
    let mut amplitudes = vec![Complex64::new(0.0, 0.0); 1 << layout.n_f];
    for y in 0..field.height {
        for x in 0..field.width {
            amplitudes[layout.pixel_index(x, y)] = Complex64::new(field.at(x, y) / norm, 0.0);
        }
    }
    Ok(StateVector {
        n_qubits: layout.n_f,
        amplitudes,
        layout: Some(*layout),
    })
}

/// Cyclic shift `|j> -> |(j + d) mod 2^len>` on `reg`.
pub fn apply_shift(s: &StateVector, d: i64, reg: QubitRange) -> Result<StateVector> {
    reg.check(s.n_qubits)?;
    let dim = reg.dim();
    let d = d.rem_euclid(dim as i64) as usize;
    let mut out = s.clone();
    if d != 0 {
        out.for_each_block(reg, |block| block.rotate_right(d));
    }
    Ok(out)
}

/// Permutation operator on `reg`: the amplitude at `order[j]` moves to `j`.
pub fn apply_permutation(s: &StateVector, p: &Permutation, reg: QubitRange) -> Result<StateVector> {
    reg.check(s.n_qubits)?;
    if p.order.len() != reg.dim() {
        return Err(Error::DimensionMismatch {
            expected: reg.dim(),
            got: p.order.len(),
        });
    }
    let mut out = s.clone();
    if reg.lsb == 0 && reg.len == s.n_qubits {
        for (j, &o) in p.order.iter().enumerate() {
            out.amplitudes[j] = s.amplitudes[o];
        }
        return Ok(out);
    }
    let mut scratch = vec![Complex64::new(0.0, 0.0); reg.dim()];
    out.for_each_block(reg, |block| {
        scratch.copy_from_slice(block);
        for (j, &o) in p.order.iter().enumerate() {
            block[j] = scratch[o];
        }
    });
    Ok(out)
}

fn qft_impl(s: &StateVector, reg: QubitRange, inverse: bool) -> Result<StateVector> {
    reg.check(s.n_qubits)?;
    let dim = reg.dim();
    let mut planner = FftPlanner::<f64>::new();
    let fft = if inverse {
        planner.plan_fft_inverse(dim)
    } else {
        planner.plan_fft_forward(dim)
    };
    let scale = 1.0 / (dim as f64).sqrt();
    let mut out = s.clone();
    if reg.lsb == 0 && reg.len == s.n_qubits {
        fft.process(&mut out.amplitudes);
        out.amplitudes.iter_mut().for_each(|a| *a *= scale);
        return Ok(out);
    }
    out.for_each_block(reg, |block| {
        fft.process(block);
        block.iter_mut().for_each(|a| *a *= scale);
    });
    Ok(out)
}

/// `QFT(n) = 2^{-n/2} sum_{j,k} exp(-2 pi i jk / 2^n) |k><j|` on `reg`.
pub fn apply_qft(s: &StateVector, reg: QubitRange) -> Result<StateVector> {
    qft_impl(s, reg, false)
}

pub fn apply_inverse_qft(s: &StateVector, reg: QubitRange) -> Result<StateVector> {
    qft_impl(s, reg, true)
}

/// Rank-`2^m` projector keeping register values `< 2^m`.
///
/// Returns the unnormalized projected state and its squared norm (the
/// post-selection probability when `s` is normalized).
pub fn project_low(s: &StateVector, m: usize, reg: QubitRange) -> Result<(StateVector, f64)> {
    reg.check(s.n_qubits)?;
    if m > reg.len {
        return Err(Error::InvalidParameter(format!(
            "cannot keep 2^{m} values of a {}-qubit register",
            reg.len
        )));
    }
    let keep = 1usize << m;
    let mut out = s.clone();
    if keep < reg.dim() {
        out.for_each_block(reg, |block| {
            block[keep..].iter_mut().for_each(|a| *a = Complex64::new(0.0, 0.0));
        });
    }
    let p = out.norm_sqr();
    if p == 0.0 {
        return Err(Error::ProjectionEmpty);
    }
    Ok((out, p))
}

/// Rank-1 projector `|k><k|` on `reg`.
///
/// Returns the conditional (unnormalized) state of the remaining qubits,
/// ordered as `hi * 2^lsb + lo`, and its squared norm.
pub fn project_rank1(s: &StateVector, k: usize, reg: QubitRange) -> Result<(StateVector, f64)> {
    reg.check(s.n_qubits)?;
    if k >= reg.dim() {
        return Err(Error::InvalidParameter(format!(
            "frequency {k} outside a {}-qubit register",
            reg.len
        )));
    }
    let stride = 1usize << reg.lsb;
    let outer = s.dim() >> (reg.lsb + reg.len);
    let mut amplitudes = Vec::with_capacity(outer * stride);
    for hi in 0..outer {
        let base = (hi << (reg.lsb + reg.len)) | (k << reg.lsb);
        amplitudes.extend_from_slice(&s.amplitudes[base..base + stride]);
    }
    let slice = StateVector {
        n_qubits: s.n_qubits - reg.len,
        amplitudes,
        layout: None,
    };
    let p = slice.norm_sqr();
    if p == 0.0 {
        return Err(Error::ProjectionEmpty);
    }
    Ok((slice, p))
}

/// `shots` projective measurements in the computational basis; returns the
/// histogram over all `2^n` basis indices.
pub fn sample(s: &StateVector, shots: u64, seed: u64) -> Vec<u64> {
    let mut rng = seeded(seed);
    multinomial(&mut rng, &s.probabilities(), shots)
}
