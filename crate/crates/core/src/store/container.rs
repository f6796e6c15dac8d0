//! The CLBT v1 container.
//!
//! Little-endian layout:
//!
//! | bytes | content |
//! |-------|---------|
//! | 4 | magic `CLBT` |
//! | 2 | version (`u16`, = 1) |
//! | 4 | header length `n` (`u32`) |
//! | n | UTF-8 JSON header |
//! | 4·T·C·H·W | row-major `f32` payload |
//! | 4 | CRC32 of the payload (`u32`) |
//!
//! Header keys beyond the fixed set are preserved verbatim as "extra" keys;
//! prediction and mask containers use them for alignment metadata.

use std::collections::BTreeMap;
use std::fs;
use std::io::Write;
use std::path::Path;

use ndarray::Array4;
use serde::{Deserialize, Serialize};
use serde_json::Value;

use super::series::{FieldSeries, Variable};
use crate::error::{Error, Result};
use crate::grid::Grid;

pub const MAGIC: [u8; 4] = *b"CLBT";
pub const VERSION: u16 = 1;
const PREAMBLE: usize = 4 + 2 + 4;

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct ContainerHeader {
    pub dims: [usize; 4],
    pub vars: Vec<Variable>,
    pub lats: Vec<f64>,
    pub lons: Vec<f64>,
    pub periodic_lon: bool,
    pub time_start_unix: i64,
    pub time_step_seconds: i64,
    pub dtype: String,
    #[serde(flatten)]
    pub extra: BTreeMap<String, Value>,
}

pub fn write_container(series: &FieldSeries, path: impl AsRef<Path>) -> Result<()> {
    write_container_with_extra(series, &BTreeMap::new(), path)
}

pub fn write_container_with_extra(
    series: &FieldSeries,
    extra: &BTreeMap<String, Value>,
    path: impl AsRef<Path>,
) -> Result<()> {
    let path = path.as_ref();
    let bytes = encode(series, extra)?;
    let mut f = fs::File::create(path).map_err(|e| Error::io(path, e))?;
    f.write_all(&bytes).map_err(|e| Error::io(path, e))?;
    f.sync_all().map_err(|e| Error::io(path, e))
}

pub fn read_container(path: impl AsRef<Path>) -> Result<FieldSeries> {
    read_container_with_extra(path).map(|(s, _)| s)
}

pub fn read_container_with_extra(path: impl AsRef<Path>) -> Result<(FieldSeries, BTreeMap<String, Value>)> {
    let path = path.as_ref();
    let bytes = fs::read(path).map_err(|e| Error::io(path, e))?;
    decode(&bytes).map_err(|e| match e {
        Error::BadMagic { expected, .. } => Error::BadMagic {
            path: path.to_path_buf(),
            expected,
        },
        other => other,
    })
}

pub(crate) fn encode(series: &FieldSeries, extra: &BTreeMap<String, Value>) -> Result<Vec<u8>> {
    series.validate()?;
    let (t, c, h, w) = series.data().dim();
    const RESERVED: [&str; 8] = [
        "dims",
        "vars",
        "lats",
        "lons",
        "periodic_lon",
        "time_start_unix",
        "time_step_seconds",
        "dtype",
    ];
    if let Some(k) = extra.keys().find(|k| RESERVED.contains(&k.as_str())) {
        return Err(Error::InvalidArgument(format!("extra header key {k:?} is reserved")));
    }
    let header = ContainerHeader {
        dims: [t, c, h, w],
        vars: series.variables().to_vec(),
        lats: series.grid().lats().to_vec(),
        lons: series.grid().lons().to_vec(),
        periodic_lon: series.grid().periodic_lon(),
        time_start_unix: series.time_start(),
        time_step_seconds: series.time_step(),
        dtype: "f32".into(),
        extra: extra.clone(),
    };
    let json = serde_json::to_vec(&header)?;
    let n = t * c * h * w;
    let mut out = Vec::with_capacity(PREAMBLE + json.len() + 4 * n + 4);
    out.extend_from_slice(&MAGIC);
    out.extend_from_slice(&VERSION.to_le_bytes());
    let header_len = u32::try_from(json.len())
        .map_err(|_| Error::InvalidArgument("header exceeds 4 GiB".into()))?;
    out.extend_from_slice(&header_len.to_le_bytes());
    out.extend_from_slice(&json);
    let payload_start = out.len();
    for v in series.data().iter() {
        out.extend_from_slice(&v.to_le_bytes());
    }
    let crc = crc32fast::hash(&out[payload_start..]);
    out.extend_from_slice(&crc.to_le_bytes());
    Ok(out)
}

pub(crate) fn decode(bytes: &[u8]) -> Result<(FieldSeries, BTreeMap<String, Value>)> {
    if bytes.len() < 4 || bytes[..4] != MAGIC {
        return Err(Error::BadMagic {
            path: Default::default(),
            expected: MAGIC,
        });
    }
    if bytes.len() < PREAMBLE {
        return Err(Error::Truncated {
            expected: PREAMBLE,
            found: bytes.len(),
        });
    }
    let version = u16::from_le_bytes([bytes[4], bytes[5]]);
    if version != VERSION {
        return Err(Error::UnsupportedVersion(version));
    }
    let header_len = u32::from_le_bytes(bytes[6..10].try_into().unwrap()) as usize;
    let header_end = PREAMBLE
        .checked_add(header_len)
        .filter(|&end| end <= bytes.len())
        .ok_or_else(|| {
            Error::HeaderParse(format!(
                "header length {header_len} exceeds file size {}",
                bytes.len()
            ))
        })?;
    let header: ContainerHeader = serde_json::from_slice(&bytes[PREAMBLE..header_end])
        .map_err(|e| Error::HeaderParse(e.to_string()))?;
    if header.dtype != "f32" {
        return Err(Error::HeaderParse(format!("unsupported dtype {:?}", header.dtype)));
    }
    let [t, c, h, w] = header.dims;
    if c != header.vars.len() || h != header.lats.len() || w != header.lons.len() {
        return Err(Error::DimensionMismatch(format!(
            "dims {:?} disagree with {} vars, {} lats, {} lons",
            header.dims,
            header.vars.len(),
            header.lats.len(),
            header.lons.len()
        )));
    }
    let n = t
        .checked_mul(c)
        .and_then(|v| v.checked_mul(h))
        .and_then(|v| v.checked_mul(w))
        .ok_or_else(|| Error::DimensionMismatch(format!("dims {:?} overflow", header.dims)))?;
    let expected = n * 4 + 4;
    let rest = &bytes[header_end..];
    if rest.len() < expected {
        return Err(Error::Truncated {
            expected,
            found: rest.len(),
        });
    }
    if rest.len() > expected {
        return Err(Error::DimensionMismatch(format!(
            "{} trailing bytes after payload",
            rest.len() - expected
        )));
    }
    let payload = &rest[..n * 4];
    let stored = u32::from_le_bytes(rest[n * 4..].try_into().unwrap());
    let computed = crc32fast::hash(payload);
    if stored != computed {
        return Err(Error::ChecksumMismatch { stored, computed });
    }
    let values: Vec<f32> = payload
        .chunks_exact(4)
        .map(|b| f32::from_le_bytes(b.try_into().unwrap()))
        .collect();
    let data = Array4::from_shape_vec((t, c, h, w), values)
        .map_err(|e| Error::DimensionMismatch(e.to_string()))?;
    let grid = Grid::new(header.lats, header.lons, header.periodic_lon)?;
    let series = FieldSeries::new(
        grid,
        header.vars,
        header.time_start_unix,
        header.time_step_seconds,
        data,
    )?;
    Ok((series, header.extra))
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::store::Level;
    use rand::{Rng, SeedableRng};
    use rand_chacha::ChaCha8Rng;

    fn random_series(dims: (usize, usize, usize, usize), seed: u64) -> FieldSeries {
        let mut rng = ChaCha8Rng::seed_from_u64(seed);
        let (t, c, h, w) = dims;
        let lats = (0..h).map(|i| -80.0 + i as f64 * (160.0 / h as f64)).collect();
        let lons = (0..w).map(|j| j as f64 * 360.0 / w as f64).collect();
        let grid = Grid::new(lats, lons, true).unwrap();
        let mut data = Array4::from_shape_fn((t, c, h, w), |_| rng.random::<f32>() * 100.0 - 50.0);
        data[[0, 0, 0, 0]] = f32::NAN;
        let vars = (0..c)
            .map(|k| Variable::dynamic(format!("v{k}"), "K", Level::Pressure(500.0)))
            .collect();
        FieldSeries::new(grid, vars, 1_000_000, 21_600, data).unwrap()
    }

    #[test]
    fn round_trip_is_bit_exact() {
        let s = random_series((4, 2, 8, 16), 1);
        let mut extra = BTreeMap::new();
        extra.insert("lead_hours".to_string(), Value::from(6));
        let bytes = encode(&s, &extra).unwrap();
        let (back, back_extra) = decode(&bytes).unwrap();
        assert_eq!(back_extra, extra);
        assert_eq!(back.grid(), s.grid());
        assert_eq!(back.variables(), s.variables());
        let a: Vec<u32> = s.data().iter().map(|v| v.to_bits()).collect();
        let b: Vec<u32> = back.data().iter().map(|v| v.to_bits()).collect();
        assert_eq!(a, b);
    }

    #[test]
    fn identical_series_encode_identically() {
        let s = random_series((2, 1, 3, 4), 9);
        assert_eq!(encode(&s, &BTreeMap::new()).unwrap(), encode(&s, &BTreeMap::new()).unwrap());
    }

    #[test]
    fn minimal_series_has_one_payload_element() {
        let grid = Grid::new(vec![0.0], vec![0.0], false).unwrap();
        let s = FieldSeries::new(
            grid,
            vec![Variable::dynamic("x", "", Level::surface())],
            0,
            1,
            Array4::from_elem((1, 1, 1, 1), 3.5),
        )
        .unwrap();
        let bytes = encode(&s, &BTreeMap::new()).unwrap();
        let header_len = u32::from_le_bytes(bytes[6..10].try_into().unwrap()) as usize;
        assert_eq!(bytes.len(), PREAMBLE + header_len + 4 + 4);
        assert_eq!(&bytes[PREAMBLE + header_len..PREAMBLE + header_len + 4], &3.5f32.to_le_bytes());
    }

    #[test]
    fn corrupted_header_length_is_a_header_parse_error() {
        let s = random_series((1, 1, 2, 2), 2);
        let mut bytes = encode(&s, &BTreeMap::new()).unwrap();
        bytes[6..10].copy_from_slice(&u32::MAX.to_le_bytes());
        assert!(matches!(decode(&bytes), Err(Error::HeaderParse(_))));
        let mut bytes = encode(&s, &BTreeMap::new()).unwrap();
        bytes[6..10].copy_from_slice(&7u32.to_le_bytes());
        assert!(matches!(decode(&bytes), Err(Error::HeaderParse(_))));
    }

    #[test]
    fn distinct_errors_for_distinct_corruptions() {
        let s = random_series((2, 1, 2, 2), 3);
        let good = encode(&s, &BTreeMap::new()).unwrap();

        let mut bad = good.clone();
        bad[0] = b'X';
        assert!(matches!(decode(&bad), Err(Error::BadMagic { .. })));

        let mut bad = good.clone();
        bad[4] = 9;
        assert!(matches!(decode(&bad), Err(Error::UnsupportedVersion(9))));

        let bad = &good[..good.len() - 5];
        assert!(matches!(decode(bad), Err(Error::Truncated { .. })));

        let mut bad = good.clone();
        bad.extend_from_slice(&[0, 0, 0, 0]);
        assert!(matches!(decode(&bad), Err(Error::DimensionMismatch(_))));

        let mut bad = good.clone();
        let n = bad.len();
        bad[n - 8] ^= 0xff;
        assert!(matches!(decode(&bad), Err(Error::ChecksumMismatch { .. })));
    }

    #[test]
    fn reserved_extra_keys_rejected() {
        let s = random_series((1, 1, 2, 2), 4);
        let mut extra = BTreeMap::new();
        extra.insert("dims".to_string(), Value::Null);
        assert!(encode(&s, &extra).is_err());
    }

    mod props {
        use super::*;
        use proptest::prelude::*;

        proptest! {
            #![proptest_config(ProptestConfig::with_cases(32))]
            #[test]
            fn round_trip_any_shape(t in 1usize..4, c in 1usize..3, h in 1usize..5, w in 1usize..6, seed in any::<u64>()) {
                let s = random_series((t, c, h, w), seed);
                let (back, _) = decode(&encode(&s, &BTreeMap::new()).unwrap()).unwrap();
                let a: Vec<u32> = s.data().iter().map(|v| v.to_bits()).collect();
                let b: Vec<u32> = back.data().iter().map(|v| v.to_bits()).collect();
                prop_assert_eq!(a, b);
                prop_assert_eq!(back.times(), s.times());
            }
        }
    }
}
