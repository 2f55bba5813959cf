//! Raw little-endian `f32` snapshot dump with a JSON sidecar.

use std::fs;
use std::path::Path;

use serde::{Deserialize, Serialize};

use super::WavefieldMovie;
use crate::{Error, Result};

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct SnapshotHeader {
    /// `[frames, depth, horizontal]`.
    pub shape: [usize; 3],
    pub stride: usize,
    pub dtype: String,
    pub dt: f64,
}

/// Writes `<stem>.f32` and `<stem>.json`.
pub fn write_snapshots(movie: &WavefieldMovie, dt: f64, stem: &Path) -> Result<()> {
    let header = SnapshotHeader {
        shape: [movie.n_frames(), movie.ny, movie.nx],
        stride: movie.stride,
        dtype: "<f4".into(),
        dt,
    };
    let bytes: Vec<u8> = movie.snapshots.iter().flat_map(|v| v.to_le_bytes()).collect();
    let raw = stem.with_extension("f32");
    fs::write(&raw, bytes).map_err(|e| Error::io(&raw, e))?;
    let side = stem.with_extension("json");
    fs::write(&side, serde_json::to_vec_pretty(&header)?).map_err(|e| Error::io(&side, e))?;
    Ok(())
}

pub fn read_snapshots(stem: &Path) -> Result<(SnapshotHeader, WavefieldMovie)> {
    let side = stem.with_extension("json");
    let text = fs::read(&side).map_err(|e| Error::io(&side, e))?;
    let header: SnapshotHeader = serde_json::from_slice(&text)?;
    if header.dtype != "<f4" {
        return Err(Error::InvalidArgument(format!("unsupported snapshot dtype {}", header.dtype)));
    }
    let raw = stem.with_extension("f32");
    let bytes = fs::read(&raw).map_err(|e| Error::io(&raw, e))?;
    let n: usize = header.shape.iter().product();
    if bytes.len() != 4 * n {
        return Err(Error::Shape { context: "snapshot file".into(), expected: header.shape.to_vec(), got: vec![bytes.len() / 4] });
    }
    let snapshots = bytes.chunks_exact(4).map(|c| f32::from_le_bytes([c[0], c[1], c[2], c[3]])).collect();
    let movie = WavefieldMovie { stride: header.stride, ny: header.shape[1], nx: header.shape[2], snapshots };
    Ok((header, movie))
}
