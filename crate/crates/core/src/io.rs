//! Dataset files, manifests and heatmap rendering.
//!
//! A field file (`.qvdf`) is little-endian binary:
//!
//! ```text
//! magic    b"QVDFIELD"
//! version  u32 (1)
//! width    u32
//! height   u32
//! count    u32   ground-truth vortex count
//! seed     u64
//! n        u32   vortex records that follow
//! n x      center_x, center_y, delta, v_max, core_radius: f64; sign: i8
//! data     width * height f64, row-major
//! ```

use std::fs;
use std::io::{BufReader, BufWriter, Read, Write};
use std::path::{Path, PathBuf};

use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};
use crate::flowgen::{DatasetSpec, FlowField, VortexParams};

const FIELD_MAGIC: &[u8; 8] = b"QVDFIELD";
const FIELD_VERSION: u32 = 1;
pub const MANIFEST: &str = "manifest.json";

fn read_array<const N: usize, R: Read>(r: &mut R) -> Result<[u8; N]> {
    let mut b = [0u8; N];
    r.read_exact(&mut b)?;
    Ok(b)
}

fn read_u32<R: Read>(r: &mut R) -> Result<u32> {
    Ok(u32::from_le_bytes(read_array(r)?))
}

fn read_f64<R: Read>(r: &mut R) -> Result<f64> {
    Ok(f64::from_le_bytes(read_array(r)?))
}

pub fn write_field<W: Write>(field: &FlowField, mut w: W) -> Result<()> {
    w.write_all(FIELD_MAGIC)?;
    for v in [FIELD_VERSION, field.width as u32, field.height as u32, field.true_count as u32] {
        w.write_all(&v.to_le_bytes())?;
    }
    w.write_all(&field.seed.to_le_bytes())?;
    w.write_all(&(field.vortices.len() as u32).to_le_bytes())?;
    for v in &field.vortices {
        for x in [v.center_x, v.center_y, v.delta, v.v_max, v.core_radius] {
            w.write_all(&x.to_le_bytes())?;
        }
        w.write_all(&v.circulation_sign.to_le_bytes())?;
    }
    for x in &field.vorticity {
        w.write_all(&x.to_le_bytes())?;
    }
    Ok(())
}

pub fn read_field<R: Read>(mut r: R) -> Result<FlowField> {
    if &read_array::<8, _>(&mut r)? != FIELD_MAGIC {
        return Err(Error::Format("not a field file".into()));
    }
    let version = read_u32(&mut r)?;
    if version != FIELD_VERSION {
        return Err(Error::Format(format!("unsupported field version {version}")));
    }
    let width = read_u32(&mut r)? as usize;
    let height = read_u32(&mut r)? as usize;
    let true_count = read_u32(&mut r)? as usize;
    let seed = u64::from_le_bytes(read_array(&mut r)?);
    let n = read_u32(&mut r)? as usize;
    if width.checked_mul(height).is_none_or(|p| p > 1 << 28) {
        return Err(Error::Format(format!("{width}x{height} grid")));
    }
    let mut vortices = Vec::with_capacity(n.min(1024));
    for _ in 0..n {
        let mut v = [0.0; 5];
        for slot in &mut v {
            *slot = read_f64(&mut r)?;
        }
        let sign = i8::from_le_bytes(read_array(&mut r)?);
        vortices.push(VortexParams {
            center_x: v[0],
            center_y: v[1],
            delta: v[2],
            v_max: v[3],
            core_radius: v[4],
            circulation_sign: sign,
        });
    }
    let mut vorticity = Vec::with_capacity(width * height);
    for _ in 0..width * height {
        vorticity.push(read_f64(&mut r)?);
    }
    let mut rest = [0u8; 1];
    if r.read(&mut rest)? != 0 {
        return Err(Error::Format("trailing bytes after field data".into()));
    }
    Ok(FlowField {
        width,
        height,
        vorticity,
        vortices,
        true_count,
        seed,
    })
}

pub fn save_field(field: &FlowField, path: &Path) -> Result<()> {
    let mut w = BufWriter::new(fs::File::create(path)?);
    write_field(field, &mut w)?;
    w.flush()?;
    Ok(())
}

pub fn load_field(path: &Path) -> Result<FlowField> {
    read_field(BufReader::new(fs::File::open(path)?))
}

/// Ground-truth sidecar written next to each field file.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct FieldMeta {
    pub id: usize,
    pub width: usize,
    pub height: usize,
    pub seed: u64,
    pub true_count: usize,
    pub vortices: Vec<VortexParams>,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct ManifestEntry {
    pub id: usize,
    pub file: String,
    pub meta: String,
    pub true_count: usize,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct Manifest {
    pub spec: DatasetSpec,
    pub fields: Vec<ManifestEntry>,
}

pub fn write_json<T: Serialize>(value: &T, path: &Path) -> Result<()> {
    let mut s = serde_json::to_string_pretty(value)?;
    s.push('\n');
    fs::write(path, s)?;
    Ok(())
}

pub fn read_json<T: for<'de> Deserialize<'de>>(path: &Path) -> Result<T> {
    Ok(serde_json::from_slice(&fs::read(path)?)?)
}

/// Write `fields` with sidecars and a manifest into `dir`.
pub fn save_dataset(spec: &DatasetSpec, fields: &[FlowField], dir: &Path) -> Result<Manifest> {
    fs::create_dir_all(dir)?;
    let mut entries = Vec::with_capacity(fields.len());
    for (id, f) in fields.iter().enumerate() {
        let file = format!("field_{id:04}.qvdf");
        let meta = format!("field_{id:04}.json");
        save_field(f, &dir.join(&file))?;
        write_json(
            &FieldMeta {
                id,
                width: f.width,
                height: f.height,
                seed: f.seed,
                true_count: f.true_count,
                vortices: f.vortices.clone(),
            },
            &dir.join(&meta),
        )?;
        entries.push(ManifestEntry {
            id,
            file,
            meta,
            true_count: f.true_count,
        });
    }
    let manifest = Manifest {
        spec: spec.clone(),
        fields: entries,
    };
    write_json(&manifest, &dir.join(MANIFEST))?;
    Ok(manifest)
}

/// Read a dataset directory, or a single field file.
pub fn load_dataset(path: &Path) -> Result<(Option<Manifest>, Vec<FlowField>)> {
    if path.is_file() {
        return Ok((None, vec![load_field(path)?]));
    }
    let manifest_path: PathBuf = path.join(MANIFEST);
    if !manifest_path.is_file() {
        return Err(Error::Io(std::io::Error::new(
            std::io::ErrorKind::NotFound,
            format!("no dataset at {}", path.display()),
        )));
    }
    let manifest: Manifest = read_json(&manifest_path)?;
    let fields = manifest
        .fields
        .iter()
        .map(|e| load_field(&path.join(&e.file)))
        .collect::<Result<Vec<_>>>()?;
    Ok((Some(manifest), fields))
}

/// Circle overlay drawn on a rendered field.
#[derive(Debug, Clone, Copy, PartialEq)]
pub struct Circle {
    pub x: f64,
    pub y: f64,
    pub radius: f64,
    pub color: [u8; 3],
}

/// Binary PPM (P6) heatmap of the vorticity: blue for negative, white for
/// zero, red for positive, scaled by the largest magnitude. Circles are
/// drawn in order, later ones on top.
pub fn render_ppm(field: &FlowField, circles: &[Circle]) -> Vec<u8> {
    let (w, h) = (field.width, field.height);
    let scale = field.vorticity.iter().fold(0.0f64, |m, v| m.max(v.abs()));
    let mut px = vec![255u8; w * h * 3];
    for (i, &v) in field.vorticity.iter().enumerate() {
        let t = if scale > 0.0 { (v / scale).clamp(-1.0, 1.0) } else { 0.0 };
        let fade = (255.0 * (1.0 - t.abs())).round() as u8;
        px[3 * i..3 * i + 3].copy_from_slice(&if t >= 0.0 { [255, fade, fade] } else { [fade, fade, 255] });
    }
    for c in circles {
        let steps = ((2.0 * std::f64::consts::PI * c.radius).ceil() as usize * 2).max(16);
        for s in 0..steps {
            let th = 2.0 * std::f64::consts::PI * s as f64 / steps as f64;
            let x = (c.x + c.radius * th.cos()).round();
            let y = (c.y + c.radius * th.sin()).round();
            if x >= 0.0 && y >= 0.0 && (x as usize) < w && (y as usize) < h {
                let i = y as usize * w + x as usize;
                px[3 * i..3 * i + 3].copy_from_slice(&c.color);
            }
        }
    }
    let mut out = format!("P6\n{w} {h}\n255\n").into_bytes();
    out.extend_from_slice(&px);
    out
}
