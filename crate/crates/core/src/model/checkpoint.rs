//! Binary parameter checkpoints.
//!
//! Layout (little endian):
//!
//! ```text
//! magic        8 bytes  "MASRPRM\0"
//! version      u32      1
//! architecture u32      0 = masr, 1 = baseline
//! d, m, K, T   4 x u64  feature dim, attributes, categories, cascade depth
//! values       f64...   every parameter group in `MasrParams::groups` order
//! ```

use std::fs;
use std::io::{Read, Write};
use std::path::Path;

use super::{Architecture, MasrParams, ModelDims};
use crate::error::{Error, Result};

const MAGIC: &[u8; 8] = b"MASRPRM\0";
const VERSION: u32 = 1;

pub(crate) fn read_exact<R: Read>(r: &mut R, buf: &mut [u8], what: &str) -> Result<()> {
    r.read_exact(buf)
        .map_err(|e| Error::Checkpoint(format!("truncated while reading {what}: {e}")))
}

pub(crate) fn read_u32<R: Read>(r: &mut R, what: &str) -> Result<u32> {
    let mut b = [0u8; 4];
    read_exact(r, &mut b, what)?;
    Ok(u32::from_le_bytes(b))
}

pub(crate) fn read_u64<R: Read>(r: &mut R, what: &str) -> Result<u64> {
    let mut b = [0u8; 8];
    read_exact(r, &mut b, what)?;
    Ok(u64::from_le_bytes(b))
}

pub(crate) fn read_f64<R: Read>(r: &mut R, what: &str) -> Result<f64> {
    Ok(f64::from_bits(read_u64(r, what)?))
}

fn io_err(e: std::io::Error) -> Error {
    Error::Checkpoint(format!("write failed: {e}"))
}

impl MasrParams {
    pub fn write_to<W: Write>(&self, w: &mut W) -> Result<()> {
        let dims = self.dims();
        let arch = match self.architecture {
            Architecture::Masr => 0u32,
            Architecture::Baseline => 1u32,
        };
        let mut buf = Vec::with_capacity(48 + 8 * self.num_params());
        buf.extend_from_slice(MAGIC);
        buf.extend_from_slice(&VERSION.to_le_bytes());
        buf.extend_from_slice(&arch.to_le_bytes());
        for v in [
            dims.feature_dim,
            dims.attributes,
            dims.categories,
            dims.cascade_depth,
        ] {
            buf.extend_from_slice(&(v as u64).to_le_bytes());
        }
        for (_, group) in self.groups() {
            for v in group {
                buf.extend_from_slice(&v.to_le_bytes());
            }
        }
        w.write_all(&buf).map_err(io_err)
    }

    /// Reads one parameter block; trailing bytes are left in the reader.
    pub fn read_from<R: Read>(r: &mut R) -> Result<Self> {
        let mut magic = [0u8; 8];
        read_exact(r, &mut magic, "magic")?;
        if &magic != MAGIC {
            return Err(Error::Checkpoint(
                "not a parameter checkpoint (bad magic)".into(),
            ));
        }
        let version = read_u32(r, "version")?;
        if version != VERSION {
            return Err(Error::Checkpoint(format!("unsupported version {version}")));
        }
        let architecture = match read_u32(r, "architecture")? {
            0 => Architecture::Masr,
            1 => Architecture::Baseline,
            other => {
                return Err(Error::Checkpoint(format!(
                    "unknown architecture tag {other}"
                )))
            }
        };
        let mut dim = |what| -> Result<usize> {
            let v = read_u64(r, what)?;
            usize::try_from(v)
                .ok()
                .filter(|&v| v <= 1 << 24)
                .ok_or_else(|| Error::Checkpoint(format!("implausible {what} {v}")))
        };
        let dims = ModelDims {
            feature_dim: dim("feature dim")?,
            attributes: dim("attribute count")?,
            categories: dim("category count")?,
            cascade_depth: dim("cascade depth")?,
        };
        dims.validate()
            .map_err(|e| Error::Checkpoint(format!("invalid header: {e}")))?;
        let mut params = MasrParams::zeros(dims, architecture);
        for group in params.groups_mut() {
            for v in group.iter_mut() {
                let x = read_f64(r, "parameters")?;
                if !x.is_finite() {
                    return Err(Error::Checkpoint("non-finite parameter value".into()));
                }
                *v = x;
            }
        }
        Ok(params)
    }

    pub fn save(&self, path: &Path) -> Result<()> {
        let mut buf = Vec::new();
        self.write_to(&mut buf)?;
        fs::write(path, buf).map_err(|e| Error::io(path, e))
    }

    pub fn load(path: &Path) -> Result<Self> {
        let bytes = fs::read(path).map_err(|e| Error::io(path, e))?;
        let mut cursor = bytes.as_slice();
        let params = Self::read_from(&mut cursor)?;
        if !cursor.is_empty() {
            return Err(Error::Checkpoint(format!(
                "{} trailing bytes after parameters",
                cursor.len()
            )));
        }
        Ok(params)
    }
}
