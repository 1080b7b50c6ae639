//! Snapshot and estimate export: CSV with 17-significant-digit round-trip
//! floats, and a compact little-endian binary format.
//!
//! Binary layout: magic "MVJP", u32 version, u64 particle count, u32
//! dimension, f64 time, then row-major f64 positions.

use std::io::{Read, Write};
use std::path::Path;

use crate::error::{Error, Result};
use crate::estimators::DensityEstimate;

const MAGIC: &[u8; 4] = b"MVJP";
const VERSION: u32 = 1;

/// Full-precision float formatting (17 significant digits round-trips f64).
pub fn fmt_f64(x: f64) -> String {
    format!("{x:.16e}")
}

/// One row per particle, d comma-separated coordinate columns.
pub fn write_positions_csv(path: &Path, positions: &[f64], dim: usize) -> Result<()> {
    let mut out = String::new();
    out.push_str(
        &(0..dim)
            .map(|j| format!("x{j}"))
            .collect::<Vec<_>>()
            .join(","),
    );
    out.push('\n');
    for row in positions.chunks_exact(dim) {
        let line = row.iter().map(|v| fmt_f64(*v)).collect::<Vec<_>>().join(",");
        out.push_str(&line);
        out.push('\n');
    }
    std::fs::write(path, out)?;
    Ok(())
}

pub fn write_positions_binary(path: &Path, positions: &[f64], dim: usize, time: f64) -> Result<()> {
    let n = positions.len() / dim;
    let mut file = std::fs::File::create(path)?;
    file.write_all(MAGIC)?;
    file.write_all(&VERSION.to_le_bytes())?;
    file.write_all(&(n as u64).to_le_bytes())?;
    file.write_all(&(dim as u32).to_le_bytes())?;
    file.write_all(&time.to_le_bytes())?;
    let mut buf = Vec::with_capacity(positions.len() * 8);
    for v in positions {
        buf.extend_from_slice(&v.to_le_bytes());
    }
    file.write_all(&buf)?;
    Ok(())
}

pub struct BinarySnapshot {
    pub positions: Vec<f64>,
    pub dim: usize,
    pub time: f64,
}

pub fn read_positions_binary(path: &Path) -> Result<BinarySnapshot> {
    let mut file = std::fs::File::open(path)?;
    let mut head = [0u8; 4 + 4 + 8 + 4 + 8];
    file.read_exact(&mut head)?;
    if &head[0..4] != MAGIC {
        return Err(Error::numeric("bad snapshot magic"));
    }
    let version = u32::from_le_bytes(head[4..8].try_into().unwrap());
    if version != VERSION {
        return Err(Error::numeric(format!("unsupported snapshot version {version}")));
    }
    let n = u64::from_le_bytes(head[8..16].try_into().unwrap()) as usize;
    let dim = u32::from_le_bytes(head[16..20].try_into().unwrap()) as usize;
    let time = f64::from_le_bytes(head[20..28].try_into().unwrap());
    let mut buf = vec![0u8; n * dim * 8];
    file.read_exact(&mut buf)?;
    let positions = buf
        .chunks_exact(8)
        .map(|b| f64::from_le_bytes(b.try_into().unwrap()))
        .collect();
    Ok(BinarySnapshot { positions, dim, time })
}

/// Columns: grid coordinates, value, method, delta, N.
pub fn write_density_csv(path: &Path, est: &DensityEstimate) -> Result<()> {
    let mut out = String::new();
    let mut header: Vec<String> = (0..est.dim).map(|j| format!("x{j}")).collect();
    header.extend_from_slice(&[
        "value".to_string(),
        "method".to_string(),
        "delta".to_string(),
        "n".to_string(),
    ]);
    out.push_str(&header.join(","));
    out.push('\n');
    for (point, value) in est.grid.chunks_exact(est.dim).zip(&est.values) {
        let mut cols: Vec<String> = point.iter().map(|v| fmt_f64(*v)).collect();
        cols.push(fmt_f64(*value));
        cols.push(est.method.clone());
        cols.push(fmt_f64(est.delta));
        cols.push(est.particles.to_string());
        out.push_str(&cols.join(","));
        out.push('\n');
    }
    std::fs::write(path, out)?;
    Ok(())
}
