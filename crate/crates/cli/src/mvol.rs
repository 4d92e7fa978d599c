//! MVOL binary volumes.
//!
//! Layout: magic `MVOL1\0`, one `u8` axis count, that many little-endian
//! `u32` extents, then the voxels as row-major little-endian IEEE-754 `f32`.

use std::path::Path;

use peakforge::Volume;

pub const MAGIC: &[u8; 6] = b"MVOL1\0";

#[derive(Debug, thiserror::Error)]
pub enum MvolError {
    #[error("{path}: {error}")]
    Io { path: String, error: std::io::Error },
    /// The bytes do not form a valid volume; `offset` is where parsing failed.
    #[error("{path}: byte {offset}: {reason}")]
    Format {
        path: String,
        offset: usize,
        reason: String,
    },
}

/// Size of the header for `ndim` axes.
pub fn header_len(ndim: usize) -> usize {
    MAGIC.len() + 1 + 4 * ndim
}

/// Serializes `v`. Fails only when an extent does not fit in `u32`.
pub fn encode(v: &Volume) -> Result<Vec<u8>, String> {
    let mut out = Vec::with_capacity(header_len(v.ndim()) + 4 * v.len());
    out.extend_from_slice(MAGIC);
    out.push(v.ndim() as u8);
    for &n in v.dims() {
        let n = u32::try_from(n).map_err(|_| format!("extent {n} exceeds u32"))?;
        out.extend_from_slice(&n.to_le_bytes());
    }
    for x in v.data() {
        out.extend_from_slice(&x.to_le_bytes());
    }
    Ok(out)
}

/// Parses MVOL bytes; `path` only labels errors.
pub fn decode(bytes: &[u8], path: &str) -> Result<Volume, MvolError> {
    let fail = |offset: usize, reason: String| MvolError::Format {
        path: path.to_string(),
        offset,
        reason,
    };
    if bytes.len() < MAGIC.len() || &bytes[..MAGIC.len()] != MAGIC {
        let at = bytes
            .iter()
            .zip(MAGIC)
            .position(|(a, b)| a != b)
            .unwrap_or(bytes.len().min(MAGIC.len()));
        return Err(fail(at, "missing MVOL1 magic".into()));
    }
    let Some(&ndim) = bytes.get(MAGIC.len()) else {
        return Err(fail(MAGIC.len(), "file ends before the axis count".into()));
    };
    if !(2..=3).contains(&ndim) {
        return Err(fail(
            MAGIC.len(),
            format!("axis count {ndim} is not 2 or 3"),
        ));
    }
    let ndim = ndim as usize;
    let mut dims = Vec::with_capacity(ndim);
    for a in 0..ndim {
        let at = MAGIC.len() + 1 + 4 * a;
        let Some(raw) = bytes.get(at..at + 4) else {
            return Err(fail(at, format!("file ends inside extent {a}")));
        };
        let n = u32::from_le_bytes(raw.try_into().expect("4 bytes")) as usize;
        if n == 0 {
            return Err(fail(at, format!("extent {a} is zero")));
        }
        dims.push(n);
    }
    let start = header_len(ndim);
    let count = dims
        .iter()
        .try_fold(1usize, |acc, &n| acc.checked_mul(n))
        .filter(|c| c.checked_mul(4).is_some())
        .ok_or_else(|| fail(MAGIC.len() + 1, format!("extents {dims:?} overflow")))?;
    let expected = start + 4 * count;
    if bytes.len() < expected {
        return Err(fail(
            bytes.len(),
            format!("file ends early: {count} voxels need {expected} bytes"),
        ));
    }
    if bytes.len() > expected {
        return Err(fail(
            expected,
            format!("{} trailing bytes", bytes.len() - expected),
        ));
    }
    let mut data = Vec::with_capacity(count);
    for (i, chunk) in bytes[start..].chunks_exact(4).enumerate() {
        let x = f32::from_le_bytes(chunk.try_into().expect("4 bytes"));
        if !x.is_finite() {
            return Err(fail(start + 4 * i, format!("voxel {i} is not finite")));
        }
        data.push(x);
    }
    Volume::from_data(&dims, data).map_err(|e| fail(start, e.to_string()))
}

pub fn read(path: &Path) -> Result<Volume, MvolError> {
    let label = path.display().to_string();
    let bytes = std::fs::read(path).map_err(|error| MvolError::Io {
        path: label.clone(),
        error,
    })?;
    decode(&bytes, &label)
}

/// Atomically writes `v` to `path`.
pub fn write(path: &Path, v: &Volume) -> Result<(), MvolError> {
    let label = path.display().to_string();
    let bytes = encode(v).map_err(|reason| MvolError::Format {
        path: label.clone(),
        offset: MAGIC.len() + 1,
        reason,
    })?;
    crate::write_atomic(path, &bytes).map_err(|error| MvolError::Io { path: label, error })
}
