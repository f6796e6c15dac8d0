//! Versioned binary record for fitted linear models.
//!
//! Little-endian layout: magic `CLLM`, `u16` version, `u32` header length,
//! JSON header, `f64` coefficients, CRC32 of the coefficient bytes.

use std::fs;
use std::path::Path;

use serde::{Deserialize, Serialize};

use super::linreg::{LinRegMode, LinearModel};
use crate::error::{Error, Result};
use crate::grid::Grid;

pub const MODEL_MAGIC: [u8; 4] = *b"CLLM";
pub const MODEL_VERSION: u16 = 1;

#[derive(Serialize, Deserialize)]
struct Header {
    mode: LinRegMode,
    stencil: usize,
    lambda: f64,
    input_channels: Vec<String>,
    target_channels: Vec<String>,
    lats: Vec<f64>,
    lons: Vec<f64>,
    periodic_lon: bool,
    n_coef: usize,
}

pub fn write_model(model: &LinearModel, path: impl AsRef<Path>) -> Result<()> {
    let path = path.as_ref();
    let header = Header {
        mode: model.mode,
        stencil: model.stencil,
        lambda: model.lambda,
        input_channels: model.input_channels.clone(),
        target_channels: model.target_channels.clone(),
        lats: model.grid.lats().to_vec(),
        lons: model.grid.lons().to_vec(),
        periodic_lon: model.grid.periodic_lon(),
        n_coef: model.coef.len(),
    };
    let json = serde_json::to_vec(&header)?;
    let mut out = Vec::with_capacity(10 + json.len() + 8 * model.coef.len() + 4);
    out.extend_from_slice(&MODEL_MAGIC);
    out.extend_from_slice(&MODEL_VERSION.to_le_bytes());
    out.extend_from_slice(&(json.len() as u32).to_le_bytes());
    out.extend_from_slice(&json);
    let start = out.len();
    for c in &model.coef {
        out.extend_from_slice(&c.to_le_bytes());
    }
    let crc = crc32fast::hash(&out[start..]);
    out.extend_from_slice(&crc.to_le_bytes());
    fs::write(path, out).map_err(|e| Error::io(path, e))
}

pub fn read_model(path: impl AsRef<Path>) -> Result<LinearModel> {
    let path = path.as_ref();
    let bytes = fs::read(path).map_err(|e| Error::io(path, e))?;
    if bytes.len() < 10 || bytes[..4] != MODEL_MAGIC {
        return Err(Error::BadMagic {
            path: path.to_path_buf(),
            expected: MODEL_MAGIC,
        });
    }
    let version = u16::from_le_bytes([bytes[4], bytes[5]]);
    if version != MODEL_VERSION {
        return Err(Error::UnsupportedVersion(version));
    }
    let hlen = u32::from_le_bytes(bytes[6..10].try_into().unwrap()) as usize;
    let hend = 10 + hlen;
    if bytes.len() < hend {
        return Err(Error::Truncated {
            expected: hend,
            found: bytes.len(),
        });
    }
    let header: Header = serde_json::from_slice(&bytes[10..hend]).map_err(|e| Error::HeaderParse(e.to_string()))?;
    let end = hend + 8 * header.n_coef;
    if bytes.len() != end + 4 {
        return Err(Error::Truncated {
            expected: end + 4,
            found: bytes.len(),
        });
    }
    let stored = u32::from_le_bytes(bytes[end..end + 4].try_into().unwrap());
    let computed = crc32fast::hash(&bytes[hend..end]);
    if stored != computed {
        return Err(Error::ChecksumMismatch { stored, computed });
    }
    let coef = bytes[hend..end]
        .chunks_exact(8)
        .map(|c| f64::from_le_bytes(c.try_into().unwrap()))
        .collect();
    let model = LinearModel {
        mode: header.mode,
        stencil: header.stencil,
        lambda: header.lambda,
        input_channels: header.input_channels,
        target_channels: header.target_channels,
        grid: Grid::new(header.lats, header.lons, header.periodic_lon)?,
        coef,
    };
    if model.coef.len() != model.expected_coefficients() {
        return Err(Error::DimensionMismatch("coefficient count does not match the model shape".into()));
    }
    Ok(model)
}
