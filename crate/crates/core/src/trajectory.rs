//! Per-step records and their on-disk formats.
//!
//! # Trajectory CSV
//!
//! One header row, then one row per executed step, columns in this order:
//!
//! ```text
//! k,t,eta,gamma,r_tot,norm_f,norm_g_r,norm_g_kl,
//! raw_glb,std_glb,w_glb, raw_per,std_per,w_per, raw_rg,std_rg,w_rg,
//! raw_oc,std_oc,w_oc, raw_hps,std_hps,w_hps, raw_vqa,std_vqa,w_vqa
//! ```
//!
//! Floats use Rust's shortest round-trip formatting. Family cells are empty
//! when that family was disabled at the step.
//!
//! # Snapshot file
//!
//! Little-endian throughout. A 32-byte header:
//!
//! | offset | type      | field                         |
//! |--------|-----------|-------------------------------|
//! | 0      | `[u8; 8]` | magic `GLSNAP01`              |
//! | 8      | `u32`     | latent dimension `D`          |
//! | 12     | `u32`     | stride (steps between frames) |
//! | 16     | `u64`     | frame count `N`               |
//! | 24     | `u64`     | reserved, zero                |
//!
//! followed by `N` frames of `u64 k`, `f64 t`, then `D` values `f64`.

use std::io::{self, Read, Write};

use crate::error::{Error, Result};
use crate::guidance::FamilyRecord;
use crate::math::Vector;
use crate::rewards::{Family, FamilyMap};

pub const SNAPSHOT_MAGIC: &[u8; 8] = b"GLSNAP01";

#[derive(Clone, Debug, Default, PartialEq)]
pub struct StepRecord {
    pub k: usize,
    pub t: f64,
    pub eta: f64,
    pub gamma: f64,
    pub r_tot: f64,
    pub families: FamilyMap<FamilyRecord>,
    pub norm_f: f64,
    pub norm_g_r: f64,
    pub norm_g_kl: f64,
}

#[derive(Clone, Debug, PartialEq)]
pub struct Snapshot {
    pub k: usize,
    pub t: f64,
    pub z: Vector,
}

#[derive(Clone, Debug, Default, PartialEq)]
pub struct Trajectory {
    pub records: Vec<StepRecord>,
    pub snapshots: Vec<Snapshot>,
    pub snapshot_stride: usize,
}

pub fn csv_header() -> String {
    let mut cols: Vec<String> = ["k", "t", "eta", "gamma", "r_tot", "norm_f", "norm_g_r", "norm_g_kl"]
        .iter()
        .map(|s| s.to_string())
        .collect();
    for f in Family::ALL {
        for p in ["raw", "std", "w"] {
            cols.push(format!("{p}_{f}"));
        }
    }
    cols.join(",")
}

impl Trajectory {
    pub fn len(&self) -> usize {
        self.records.len()
    }

    pub fn is_empty(&self) -> bool {
        self.records.is_empty()
    }

    pub fn write_csv<W: Write>(&self, mut w: W) -> io::Result<()> {
        writeln!(w, "{}", csv_header())?;
        for r in &self.records {
            write!(
                w,
                "{},{},{},{},{},{},{},{}",
                r.k, r.t, r.eta, r.gamma, r.r_tot, r.norm_f, r.norm_g_r, r.norm_g_kl
            )?;
            for (_, fr) in r.families.iter() {
                if fr.enabled {
                    write!(w, ",{},{},{}", fr.raw, fr.standardized, fr.weight)?;
                } else {
                    write!(w, ",,,")?;
                }
            }
            writeln!(w)?;
        }
        Ok(())
    }

    pub fn write_snapshots<W: Write>(&self, mut w: W) -> io::Result<()> {
        let dim = self.snapshots.first().map_or(0, |s| s.z.len());
        w.write_all(SNAPSHOT_MAGIC)?;
        w.write_all(&(dim as u32).to_le_bytes())?;
        w.write_all(&(self.snapshot_stride as u32).to_le_bytes())?;
        w.write_all(&(self.snapshots.len() as u64).to_le_bytes())?;
        w.write_all(&0u64.to_le_bytes())?;
        for s in &self.snapshots {
            w.write_all(&(s.k as u64).to_le_bytes())?;
            w.write_all(&s.t.to_le_bytes())?;
            for x in s.z.iter() {
                w.write_all(&x.to_le_bytes())?;
            }
        }
        Ok(())
    }
}

fn read_u32<R: Read>(r: &mut R) -> io::Result<u32> {
    let mut b = [0u8; 4];
    r.read_exact(&mut b)?;
    Ok(u32::from_le_bytes(b))
}

fn read_u64<R: Read>(r: &mut R) -> io::Result<u64> {
    let mut b = [0u8; 8];
    r.read_exact(&mut b)?;
    Ok(u64::from_le_bytes(b))
}

fn read_f64<R: Read>(r: &mut R) -> io::Result<f64> {
    let mut b = [0u8; 8];
    r.read_exact(&mut b)?;
    Ok(f64::from_le_bytes(b))
}

/// Reads a snapshot file; returns `(stride, frames)`.
pub fn read_snapshots<R: Read>(mut r: R) -> Result<(usize, Vec<Snapshot>)> {
    let mut magic = [0u8; 8];
    r.read_exact(&mut magic)?;
    if &magic != SNAPSHOT_MAGIC {
        return Err(Error::invalid("snapshot file", "bad magic"));
    }
    let dim = read_u32(&mut r)? as usize;
    let stride = read_u32(&mut r)? as usize;
    let count = read_u64(&mut r)? as usize;
    let _reserved = read_u64(&mut r)?;
    let mut frames = Vec::with_capacity(count);
    for _ in 0..count {
        let k = read_u64(&mut r)? as usize;
        let t = read_f64(&mut r)?;
        let z = (0..dim).map(|_| read_f64(&mut r)).collect::<io::Result<Vec<f64>>>()?;
        frames.push(Snapshot { k, t, z: Vector::from_vec(z) });
    }
    Ok((stride, frames))
}

/// Reads a raw little-endian `f64` array (the external vector file format).
pub fn read_f64_array<R: Read>(mut r: R) -> Result<Vec<f64>> {
    let mut bytes = Vec::new();
    r.read_to_end(&mut bytes)?;
    if bytes.len() % 8 != 0 {
        return Err(Error::invalid("vector file", format!("length {} is not a multiple of 8", bytes.len())));
    }
    Ok(bytes
        .chunks_exact(8)
        .map(|c| f64::from_le_bytes(c.try_into().expect("chunk of 8")))
        .collect())
}
