//! On-disk trajectory format.
//!
//! A binary file holds a fixed little-endian header followed by row-major
//! `f64` samples:
//!
//! ```text
//! b"LTRJ1" | dt: f64 | n_rows: u64 | flags: u32 | seed: u64 | rows...
//! ```
//!
//! `flags` marks which column groups are present (1 positions, 2 velocities,
//! 4 voltages); each group contributes three columns per row in that order.
//! A JSON sidecar next to the file (same stem, `.json`) carries the run
//! metadata and a SHA-256 over the header bytes and the serialized metadata.

use std::fs::File;
use std::io::{BufReader, BufWriter, Read, Write};
use std::path::{Path, PathBuf};

use serde::{Deserialize, Serialize};
use sha2::{Digest, Sha256};

use crate::error::{Error, Result};
use crate::trajectory::{Trajectory, TrajectoryMetadata};

pub const MAGIC: &[u8; 5] = b"LTRJ1";
pub const HEADER_LEN: u64 = 5 + 8 + 8 + 4 + 8;

pub const FLAG_POSITIONS: u32 = 1;
pub const FLAG_VELOCITIES: u32 = 2;
pub const FLAG_VOLTAGES: u32 = 4;

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
struct Sidecar {
    metadata: TrajectoryMetadata,
    checksum: String,
}

pub fn sidecar_path(path: &Path) -> PathBuf {
    path.with_extension("json")
}

fn header_bytes(dt: f64, n: u64, flags: u32, seed: u64) -> Vec<u8> {
    let mut h = Vec::with_capacity(HEADER_LEN as usize);
    h.extend_from_slice(MAGIC);
    h.extend_from_slice(&dt.to_le_bytes());
    h.extend_from_slice(&n.to_le_bytes());
    h.extend_from_slice(&flags.to_le_bytes());
    h.extend_from_slice(&seed.to_le_bytes());
    h
}

fn checksum(header: &[u8], metadata: &TrajectoryMetadata) -> Result<String> {
    let mut hasher = Sha256::new();
    hasher.update(header);
    hasher.update(serde_json::to_vec(metadata)?);
    Ok(hex::encode(hasher.finalize()))
}

fn flags_of(traj: &Trajectory) -> u32 {
    FLAG_POSITIONS
        | if traj.velocities.is_some() { FLAG_VELOCITIES } else { 0 }
        | if traj.voltages.is_some() { FLAG_VOLTAGES } else { 0 }
}

/// Writes the binary file and its JSON sidecar.
pub fn write_trajectory(traj: &Trajectory, path: &Path) -> Result<()> {
    let flags = flags_of(traj);
    let header = header_bytes(traj.dt, traj.len() as u64, flags, traj.metadata.sim.seed);
    let mut out = BufWriter::new(File::create(path)?);
    out.write_all(&header)?;
    for i in 0..traj.len() {
        let groups = [
            Some(&traj.positions),
            traj.velocities.as_ref(),
            traj.voltages.as_ref(),
        ];
        for g in groups.into_iter().flatten() {
            for v in g[i] {
                out.write_all(&v.to_le_bytes())?;
            }
        }
    }
    out.flush()?;
    let sidecar = Sidecar {
        checksum: checksum(&header, &traj.metadata)?,
        metadata: traj.metadata.clone(),
    };
    std::fs::write(sidecar_path(path), serde_json::to_string_pretty(&sidecar)?)?;
    Ok(())
}

/// A trajectory read back from disk, plus any integrity warnings.
#[derive(Debug, Clone)]
pub struct LoadedTrajectory {
    pub trajectory: Trajectory,
    pub warnings: Vec<String>,
}

fn take<const N: usize>(bytes: &[u8], at: &mut usize) -> [u8; N] {
    let out: [u8; N] = bytes[*at..*at + N].try_into().expect("length checked");
    *at += N;
    out
}

pub fn read_trajectory(path: &Path) -> Result<LoadedTrajectory> {
    let file = File::open(path)?;
    let actual = file.metadata()?.len();
    let mut reader = BufReader::new(file);
    let mut header = vec![0u8; HEADER_LEN.min(actual) as usize];
    reader.read_exact(&mut header)?;
    if header.len() < MAGIC.len() || &header[..5] != MAGIC {
        return Err(Error::BadMagic {
            found: header[..header.len().min(5)].to_vec(),
        });
    }
    if actual < HEADER_LEN {
        return Err(Error::Truncated {
            expected: HEADER_LEN,
            actual,
        });
    }
    let mut at = 5;
    let dt = f64::from_le_bytes(take(&header, &mut at));
    let n = u64::from_le_bytes(take(&header, &mut at));
    let flags = u32::from_le_bytes(take(&header, &mut at));
    let seed = u64::from_le_bytes(take(&header, &mut at));
    if flags & FLAG_POSITIONS == 0 || flags > 7 {
        return Err(Error::invalid("trajectory flags", format!("unsupported value {flags}")));
    }
    let groups = flags.count_ones() as u64;
    let expected = n
        .checked_mul(groups * 3 * 8)
        .and_then(|b| b.checked_add(HEADER_LEN))
        .ok_or_else(|| Error::invalid("trajectory header", "row count overflows"))?;
    if actual != expected {
        return Err(Error::Truncated { expected, actual });
    }

    let mut body = Vec::with_capacity((expected - HEADER_LEN) as usize);
    reader.read_to_end(&mut body)?;
    let mut cursor = 0;
    let mut row = || {
        let mut r = [0.0; 3];
        for v in &mut r {
            *v = f64::from_le_bytes(take(&body, &mut cursor));
        }
        r
    };
    let n = n as usize;
    let mut positions = Vec::with_capacity(n);
    let mut velocities = (flags & FLAG_VELOCITIES != 0).then(|| Vec::with_capacity(n));
    let mut voltages = (flags & FLAG_VOLTAGES != 0).then(|| Vec::with_capacity(n));
    for _ in 0..n {
        positions.push(row());
        if let Some(v) = velocities.as_mut() {
            v.push(row());
        }
        if let Some(v) = voltages.as_mut() {
            v.push(row());
        }
    }

    let sidecar: Sidecar = serde_json::from_str(&std::fs::read_to_string(sidecar_path(path))?)?;
    let mut warnings = Vec::new();
    if checksum(&header, &sidecar.metadata)? != sidecar.checksum {
        let msg = format!(
            "checksum mismatch between {} and its sidecar; metadata may not describe this data",
            path.display()
        );
        log::warn!("{msg}");
        warnings.push(msg);
    }
    if sidecar.metadata.sim.seed != seed {
        warnings.push(format!(
            "header seed {seed} differs from sidecar seed {}",
            sidecar.metadata.sim.seed
        ));
    }
    Ok(LoadedTrajectory {
        trajectory: Trajectory::new(dt, positions, velocities, voltages, sidecar.metadata)?,
        warnings,
    })
}

/// Plain-text export with a time column.
pub fn write_csv(traj: &Trajectory, path: &Path) -> Result<()> {
    let mut out = BufWriter::new(File::create(path)?);
    let mut header = vec!["t", "x", "y", "z"];
    if traj.velocities.is_some() {
        header.extend(["vx", "vy", "vz"]);
    }
    if traj.voltages.is_some() {
        header.extend(["ux", "uy", "uz"]);
    }
    writeln!(out, "{}", header.join(","))?;
    for i in 0..traj.len() {
        write!(out, "{:e}", i as f64 * traj.dt)?;
        let groups = [
            Some(&traj.positions),
            traj.velocities.as_ref(),
            traj.voltages.as_ref(),
        ];
        for g in groups.into_iter().flatten() {
            for v in g[i] {
                write!(out, ",{v:e}")?;
            }
        }
        writeln!(out)?;
    }
    out.flush()?;
    Ok(())
}
