//! Versioned binary snapshots for resume and inspection.
//!
//! Layout (little-endian), version 1:
//! network — `[1u8][m: u32][d: u32][W row-major][a][W0 row-major][a0]`,
//! dataset — `[1u8][n: u32][d: u32][inputs row-major][targets]`,
//! all payload entries `f64`. JSON snapshots of [`NetworkParams`] go
//! through serde directly.

use crate::data::Dataset;
use crate::error::{Error, Result};
use crate::model::NetworkParams;
use std::io::{Read, Write};

pub const SNAPSHOT_VERSION: u8 = 1;

fn write_f64s<W: Write>(out: &mut W, values: &[f64]) -> Result<()> {
    for v in values {
        out.write_all(&v.to_le_bytes())?;
    }
    Ok(())
}

fn read_f64s<R: Read>(input: &mut R, n: usize) -> Result<Vec<f64>> {
    let mut buf = [0u8; 8];
    let mut values = Vec::with_capacity(n);
    for _ in 0..n {
        input.read_exact(&mut buf)?;
        values.push(f64::from_le_bytes(buf));
    }
    Ok(values)
}

fn read_u32<R: Read>(input: &mut R) -> Result<u32> {
    let mut buf = [0u8; 4];
    input.read_exact(&mut buf)?;
    Ok(u32::from_le_bytes(buf))
}

fn check_version<R: Read>(input: &mut R, what: &str) -> Result<()> {
    let mut v = [0u8; 1];
    input.read_exact(&mut v)?;
    if v[0] != SNAPSHOT_VERSION {
        return Err(Error::Snapshot(format!(
            "{what}: unsupported version {} (expected {SNAPSHOT_VERSION})",
            v[0]
        )));
    }
    Ok(())
}

pub fn write_network<W: Write>(out: &mut W, p: &NetworkParams) -> Result<()> {
    out.write_all(&[SNAPSHOT_VERSION])?;
    out.write_all(&(p.m() as u32).to_le_bytes())?;
    out.write_all(&(p.d() as u32).to_le_bytes())?;
    write_f64s(out, p.w_flat())?;
    write_f64s(out, p.a())?;
    write_f64s(out, p.w0_flat())?;
    write_f64s(out, p.a0())?;
    Ok(())
}

pub fn read_network<R: Read>(input: &mut R) -> Result<NetworkParams> {
    check_version(input, "network snapshot")?;
    let m = read_u32(input)? as usize;
    let d = read_u32(input)? as usize;
    let w = read_f64s(input, m * d)?;
    let a = read_f64s(input, m)?;
    let w0 = read_f64s(input, m * d)?;
    let a0 = read_f64s(input, m)?;
    NetworkParams::from_raw(m, d, w, a, w0, a0)
}

pub fn write_dataset<W: Write>(out: &mut W, ds: &Dataset) -> Result<()> {
    out.write_all(&[SNAPSHOT_VERSION])?;
    out.write_all(&(ds.len() as u32).to_le_bytes())?;
    out.write_all(&(ds.dim() as u32).to_le_bytes())?;
    for x in &ds.inputs {
        write_f64s(out, x)?;
    }
    write_f64s(out, &ds.targets)?;
    Ok(())
}

pub fn read_dataset<R: Read>(input: &mut R) -> Result<Dataset> {
    check_version(input, "dataset snapshot")?;
    let n = read_u32(input)? as usize;
    let d = read_u32(input)? as usize;
    let mut inputs = Vec::with_capacity(n);
    for _ in 0..n {
        inputs.push(read_f64s(input, d)?);
    }
    let targets = read_f64s(input, n)?;
    Dataset::new(inputs, targets)
}
