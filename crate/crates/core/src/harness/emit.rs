//! Report output: JSON, CSV, and maps as CLBT containers with binary PGM
//! previews.

use std::collections::BTreeMap;
use std::fs;
use std::path::{Path, PathBuf};

use image::codecs::pnm::{PnmEncoder, PnmSubtype, SampleEncoding};
use image::{ExtendedColorType, ImageEncoder};
use ndarray::{Array2, Array4};
use serde::Serialize;
use serde_json::Value;

use crate::error::{Error, Result};
use crate::grid::Grid;
use crate::metrics::MetricReport;
use crate::store::{write_container_with_extra, FieldSeries, Level, Variable};

#[derive(Clone, Copy, Debug, PartialEq, Eq)]
pub enum ReportFormat {
    Json,
    Csv,
    Maps,
}

impl std::str::FromStr for ReportFormat {
    type Err = Error;

    fn from_str(s: &str) -> Result<Self> {
        match s {
            "json" => Ok(ReportFormat::Json),
            "csv" => Ok(ReportFormat::Csv),
            "maps" => Ok(ReportFormat::Maps),
            _ => Err(Error::InvalidArgument(format!("unknown report format {s:?}"))),
        }
    }
}

/// Min-max scale of a preview image.
#[derive(Serialize)]
struct PreviewScale<'a> {
    map: &'a str,
    min: Option<f64>,
    max: Option<f64>,
    /// Gray value of `v` is `round(255 (v - min) / (max - min))`; NaN is 0.
    levels: u8,
}

/// Writes `report` under `out`. JSON and CSV go to `out` itself; maps go
/// into the directory `out`. Returns the files written.
pub fn emit_report(report: &MetricReport, format: ReportFormat, out: impl AsRef<Path>) -> Result<Vec<PathBuf>> {
    if report.is_empty() {
        return Err(Error::InvalidArgument("refusing to emit an empty report".into()));
    }
    let out = out.as_ref();
    match format {
        ReportFormat::Json => {
            fs::write(out, report.to_json()?).map_err(|e| Error::io(out, e))?;
            Ok(vec![out.to_path_buf()])
        }
        ReportFormat::Csv => {
            let f = fs::File::create(out).map_err(|e| Error::io(out, e))?;
            report.write_csv(f)?;
            Ok(vec![out.to_path_buf()])
        }
        ReportFormat::Maps => write_maps(report, out),
    }
}

fn write_maps(report: &MetricReport, dir: &Path) -> Result<Vec<PathBuf>> {
    if report.maps.is_empty() && report.rank_histograms.is_empty() {
        return Err(Error::InvalidArgument("report has no maps or rank histograms".into()));
    }
    fs::create_dir_all(dir).map_err(|e| Error::io(dir, e))?;
    let mut written = Vec::new();
    for m in &report.maps {
        let stem = format!("{}_{}_{}h", m.name, m.variable, m.lead_hours);
        let field = m.to_array()?;
        let grid = m.grid()?;
        let clbt = dir.join(format!("{stem}.clbt"));
        write_field(&field, &grid, &m.variable, &stem, &clbt)?;
        let pgm = dir.join(format!("{stem}.pgm"));
        let (min, max) = write_pgm(&field, &pgm)?;
        let side = dir.join(format!("{stem}.json"));
        let scale = PreviewScale {
            map: &stem,
            min,
            max,
            levels: 255,
        };
        fs::write(&side, serde_json::to_string_pretty(&scale)?).map_err(|e| Error::io(&side, e))?;
        written.extend([clbt, pgm, side]);
    }
    for h in &report.rank_histograms {
        let stem = format!("rank_histogram_{}_{}h", h.variable, h.lead_hours);
        let counts = Array2::from_shape_vec((1, h.counts.len()), h.counts.iter().map(|&c| c as f64).collect())
            .expect("one row");
        let grid = Grid::new(vec![0.0], (0..h.counts.len()).map(|k| k as f64).collect(), false)?;
        let clbt = dir.join(format!("{stem}.clbt"));
        write_field(&counts, &grid, &h.variable, &stem, &clbt)?;
        written.push(clbt);
    }
    Ok(written)
}

fn write_field(field: &Array2<f64>, grid: &Grid, var: &str, name: &str, path: &Path) -> Result<()> {
    let (h, w) = field.dim();
    let data = Array4::from_shape_fn((1, 1, h, w), |(_, _, i, j)| field[[i, j]] as f32);
    let series = FieldSeries::new(grid.clone(), vec![Variable::dynamic(var, "", Level::surface())], 0, 1, data)?;
    let mut extra = BTreeMap::new();
    extra.insert("kind".to_string(), Value::from("map"));
    extra.insert("map".to_string(), Value::from(name));
    write_container_with_extra(&series, &extra, path)
}

/// Binary P5 graymap of `field`, min-max scaled to 0..=255 over finite
/// values. Returns the scale used.
pub fn write_pgm(field: &Array2<f64>, path: &Path) -> Result<(Option<f64>, Option<f64>)> {
    let finite = field.iter().copied().filter(|v| v.is_finite());
    let (min, max) = finite.fold((None, None), |(lo, hi): (Option<f64>, Option<f64>), v| {
        (Some(lo.map_or(v, |l| l.min(v))), Some(hi.map_or(v, |h| h.max(v))))
    });
    let range = match (min, max) {
        (Some(lo), Some(hi)) if hi > lo => Some((lo, hi - lo)),
        _ => None,
    };
    let pixels: Vec<u8> = field
        .iter()
        .map(|&v| match range {
            Some((lo, span)) if v.is_finite() => (255.0 * (v - lo) / span).round() as u8,
            _ => 0,
        })
        .collect();
    let (h, w) = field.dim();
    let f = fs::File::create(path).map_err(|e| Error::io(path, e))?;
    let enc = PnmEncoder::new(std::io::BufWriter::new(f)).with_subtype(PnmSubtype::Graymap(SampleEncoding::Binary));
    enc.write_image(&pixels, w as u32, h as u32, ExtendedColorType::L8)?;
    Ok((min, max))
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::metrics::{RankHistogram, ReportEntry, ReportMap, Score};
    use crate::store::read_container;

    fn report() -> MetricReport {
        let mut r = MetricReport::new("direct");
        r.entries.push(ReportEntry::new("rmse", "t2m", 6, "test", "none", Score::Defined(1.5)));
        let g = Grid::from_resolution(45.0).unwrap();
        let m = Array2::from_shape_fn((4, 8), |(i, j)| i as f64 - j as f64 * 0.5);
        r.maps.push(ReportMap::new("mean_bias", "t2m", 6, &g, &m));
        r.rank_histograms.push(RankHistogram {
            variable: "t2m".into(),
            lead_hours: 6,
            split: "test".into(),
            mask_id: "none".into(),
            counts: vec![3, 4, 5],
        });
        r
    }

    #[test]
    fn empty_report_refused() {
        let dir = tempfile::tempdir().unwrap();
        assert!(emit_report(&MetricReport::new("direct"), ReportFormat::Json, dir.path().join("r.json")).is_err());
    }

    #[test]
    fn json_round_trip() {
        let dir = tempfile::tempdir().unwrap();
        let p = dir.path().join("r.json");
        emit_report(&report(), ReportFormat::Json, &p).unwrap();
        assert_eq!(MetricReport::from_json(&fs::read_to_string(&p).unwrap()).unwrap(), report());
    }

    #[test]
    fn maps_written() {
        let dir = tempfile::tempdir().unwrap();
        let files = emit_report(&report(), ReportFormat::Maps, dir.path().join("maps")).unwrap();
        assert_eq!(files.len(), 4);
        let pgm = fs::read(&files[1]).unwrap();
        assert!(pgm.starts_with(b"P5"));
        // first pixel 0.0 and last pixel -0.5 on the [-3.5, 3.0] scale
        assert_eq!(pgm[pgm.len() - 32], 137);
        assert_eq!(pgm[pgm.len() - 1], 118);
        let map = read_container(&files[0]).unwrap();
        assert_eq!(map.data()[[0, 0, 3, 7]], -0.5);
        let side: Value = serde_json::from_str(&fs::read_to_string(&files[2]).unwrap()).unwrap();
        assert_eq!(side["min"], -3.5);
        assert_eq!(side["max"], 3.0);
        let hist = read_container(&files[3]).unwrap();
        assert_eq!(hist.data().iter().copied().collect::<Vec<_>>(), vec![3.0, 4.0, 5.0]);
    }
}
