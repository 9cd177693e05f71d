//! Versioned binary policy checkpoints.
//!
//! Layout, all integers and floats little-endian:
//!   magic "DYXP" | u32 format version | u64 policy version | u32 layer count
//!   per layer: u32 rows | u32 cols
//!   per layer: rows*cols f64 weights (row-major), then rows f64 biases

use std::fs::File;
use std::io::{BufReader, BufWriter, Read, Write};
use std::path::Path;

use crate::error::CoreError;
use crate::policy::{Layer, PolicyParams};
use crate::Result;

const MAGIC: [u8; 4] = *b"DYXP";
const FORMAT_VERSION: u32 = 1;

pub fn save(params: &PolicyParams, path: &Path) -> Result<()> {
    let mut w = BufWriter::new(File::create(path)?);
    w.write_all(&MAGIC)?;
    w.write_all(&FORMAT_VERSION.to_le_bytes())?;
    w.write_all(&params.version().to_le_bytes())?;
    w.write_all(&(params.layers().len() as u32).to_le_bytes())?;
    for l in params.layers() {
        w.write_all(&(l.rows as u32).to_le_bytes())?;
        w.write_all(&(l.cols as u32).to_le_bytes())?;
    }
    for l in params.layers() {
        for x in l.w.iter().chain(&l.b) {
            w.write_all(&x.to_le_bytes())?;
        }
    }
    w.flush()?;
    Ok(())
}

fn read_u32(r: &mut impl Read) -> Result<u32> {
    let mut buf = [0u8; 4];
    r.read_exact(&mut buf)?;
    Ok(u32::from_le_bytes(buf))
}

fn read_u64(r: &mut impl Read) -> Result<u64> {
    let mut buf = [0u8; 8];
    r.read_exact(&mut buf)?;
    Ok(u64::from_le_bytes(buf))
}

fn read_f64(r: &mut impl Read) -> Result<f64> {
    let mut buf = [0u8; 8];
    r.read_exact(&mut buf)?;
    Ok(f64::from_le_bytes(buf))
}

pub fn load(path: &Path) -> Result<PolicyParams> {
    let mut r = BufReader::new(File::open(path)?);
    let mut magic = [0u8; 4];
    r.read_exact(&mut magic)?;
    if magic != MAGIC {
        return Err(CoreError::Checkpoint(format!(
            "bad magic {magic:?} in {}",
            path.display()
        )));
    }
    let format = read_u32(&mut r)?;
    if format != FORMAT_VERSION {
        return Err(CoreError::Checkpoint(format!(
            "unsupported format version {format} (expected {FORMAT_VERSION})"
        )));
    }
    let policy_version = read_u64(&mut r)?;
    let n_layers = read_u32(&mut r)? as usize;
    if n_layers == 0 || n_layers > 64 {
        return Err(CoreError::Checkpoint(format!(
            "implausible layer count {n_layers}"
        )));
    }
    let mut dims = Vec::with_capacity(n_layers);
    for _ in 0..n_layers {
        let rows = read_u32(&mut r)? as usize;
        let cols = read_u32(&mut r)? as usize;
        if rows == 0 || cols == 0 || rows * cols > 16_000_000 {
            return Err(CoreError::Checkpoint(format!(
                "implausible layer shape {rows}x{cols}"
            )));
        }
        dims.push((rows, cols));
    }
    let mut layers = Vec::with_capacity(n_layers);
    for (rows, cols) in dims {
        let mut w = Vec::with_capacity(rows * cols);
        for _ in 0..rows * cols {
            w.push(read_f64(&mut r)?);
        }
        let mut b = Vec::with_capacity(rows);
        for _ in 0..rows {
            b.push(read_f64(&mut r)?);
        }
        layers.push(Layer { rows, cols, w, b });
    }
    let mut trailing = [0u8; 1];
    if r.read(&mut trailing)? != 0 {
        return Err(CoreError::Checkpoint("trailing bytes after body".into()));
    }
    PolicyParams::from_layers(layers, policy_version)
        .map_err(|e| CoreError::Checkpoint(format!("invalid parameters: {e}")))
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn round_trip_preserves_everything() {
        let dir = std::env::temp_dir().join(format!("dynamix-ckpt-{}", std::process::id()));
        std::fs::create_dir_all(&dir).unwrap();
        let path = dir.join("p.ckpt");

        let params = PolicyParams::init(32, 123);
        save(&params, &path).unwrap();
        let loaded = load(&path).unwrap();
        assert_eq!(params, loaded);
        std::fs::remove_dir_all(&dir).ok();
    }

    #[test]
    fn bad_magic_rejected() {
        let dir = std::env::temp_dir().join(format!("dynamix-ckpt-bad-{}", std::process::id()));
        std::fs::create_dir_all(&dir).unwrap();
        let path = dir.join("junk.ckpt");
        std::fs::write(&path, b"NOPE0000000000000000").unwrap();
        let err = load(&path).unwrap_err();
        assert!(matches!(err, CoreError::Checkpoint(_)));
        std::fs::remove_dir_all(&dir).ok();
    }

    #[test]
    fn truncated_file_rejected() {
        let dir = std::env::temp_dir().join(format!("dynamix-ckpt-trunc-{}", std::process::id()));
        std::fs::create_dir_all(&dir).unwrap();
        let path = dir.join("p.ckpt");
        let params = PolicyParams::init(8, 5);
        save(&params, &path).unwrap();
        let bytes = std::fs::read(&path).unwrap();
        std::fs::write(&path, &bytes[..bytes.len() - 9]).unwrap();
        assert!(load(&path).is_err());
        std::fs::remove_dir_all(&dir).ok();
    }
}
