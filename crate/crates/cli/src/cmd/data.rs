//! Data preparation: generation, ingest, inspection, splitting, regridding.

use std::collections::BTreeMap;
use std::io::Read;
use std::path::{Path, PathBuf};

use anyhow::{bail, Context};
use chrono::NaiveDate;
use clap::{Args, ValueEnum};
use clbench_core::regrid::{crop_series, regrid_series, Scheme};
use clbench_core::store::{split_by_years, YearRange};
use clbench_core::synthetic::{generate, Manifest, SyntheticConfig};
use clbench_core::{FieldSeries, Grid, Level, RegionBox, SplitSpec, Variable};
use ndarray::Array4;
use serde::{Deserialize, Serialize};
use serde_json::json;

use crate::config::usage;
use crate::io::{read_series, write_series};
use crate::Globals;

#[derive(Debug, Args, Serialize)]
#[serde(rename_all = "kebab-case")]
pub struct GenArgs {
    /// Output container; the manifest goes next to it as `<stem>.manifest.json`.
    #[arg(long)]
    pub out: PathBuf,
    /// Calendar years to cover, starting January 1 of `start-year`.
    #[arg(long, default_value_t = 3)]
    pub years: u32,
    /// Exact number of timestamps; overrides `years`.
    #[arg(long)]
    pub steps: Option<usize>,
    #[arg(long, default_value_t = 1979)]
    pub start_year: i32,
    #[arg(long, default_value_t = 6)]
    pub step_hours: i64,
    /// Grid spacing in degrees.
    #[arg(long, default_value_t = 5.625)]
    pub resolution: f64,
    /// Subset of z500,t850,t2m,u10.
    #[arg(long, value_delimiter = ',', action = clap::ArgAction::Set)]
    pub vars: Vec<String>,
    /// Lag-one autocorrelation for every variable.
    #[arg(long)]
    pub rho: Option<f64>,
    /// Spatial smoothing length in grid cells for every variable.
    #[arg(long)]
    pub smooth: Option<f64>,
    /// Omit the lsm, orography and lat constant fields.
    #[arg(long)]
    pub no_statics: bool,
}

fn year_start(year: i32) -> anyhow::Result<i64> {
    let d = NaiveDate::from_ymd_opt(year, 1, 1).ok_or_else(|| usage(format!("start-year {year} out of range")))?;
    Ok(d.and_hms_opt(0, 0, 0).expect("midnight").and_utc().timestamp())
}

pub fn synthetic_config(a: &GenArgs, seed: u64) -> anyhow::Result<SyntheticConfig> {
    if a.step_hours <= 0 {
        return Err(usage("step-hours must be positive"));
    }
    let start = year_start(a.start_year)?;
    let step = a.step_hours * 3600;
    let n_steps = match a.steps {
        Some(n) => n,
        None => ((year_start(a.start_year + a.years as i32)? - start) / step) as usize,
    };
    if n_steps == 0 {
        return Err(usage("the series would have no timestamps (years or steps is 0)"));
    }
    let mut cfg = SyntheticConfig::standard(n_steps, seed);
    cfg.resolution_deg = a.resolution;
    cfg.time_start = start;
    cfg.time_step = step;
    cfg.statics = !a.no_statics;
    if !a.vars.is_empty() {
        if let Some(v) = a.vars.iter().find(|v| !cfg.variables.iter().any(|s| &s.name == *v)) {
            return Err(usage(format!("vars: unknown synthetic variable {v:?}")));
        }
        cfg.variables.retain(|s| a.vars.contains(&s.name));
    }
    for v in &mut cfg.variables {
        if let Some(r) = a.rho {
            v.rho = r;
        }
        if let Some(s) = a.smooth {
            v.smooth_cells = s;
        }
    }
    cfg.validate().map_err(|e| usage(e.to_string()))?;
    Ok(cfg)
}

pub fn manifest_path(out: &Path) -> PathBuf {
    let stem = out.file_stem().map(|s| s.to_string_lossy().into_owned()).unwrap_or_default();
    out.with_file_name(format!("{stem}.manifest.json"))
}

pub fn gen_synthetic(a: &GenArgs, g: &Globals) -> anyhow::Result<()> {
    let cfg = synthetic_config(a, g.seed)?;
    let series = generate(&cfg)?;
    write_series(&series, &a.out)?;
    let manifest = manifest_path(&a.out);
    Manifest::of(&series, &cfg).write(&manifest)?;
    let d = series.data().dim();
    println!("wrote {} ({}x{}x{}x{}) and {}", a.out.display(), d.0, d.1, d.2, d.3, manifest.display());
    Ok(())
}

#[derive(Clone, Copy, Debug, ValueEnum, Serialize)]
#[serde(rename_all = "lowercase")]
pub enum IngestFormat {
    /// Long-format CSV with columns time_unix,variable,lat,lon,value.
    Csv,
    /// Headerless little-endian f32, `T x C x H x W`, on a global grid.
    Raw,
}

#[derive(Debug, Args, Serialize)]
#[serde(rename_all = "kebab-case")]
pub struct IngestArgs {
    #[arg(long, value_enum)]
    pub format: IngestFormat,
    #[arg(long)]
    pub input: PathBuf,
    #[arg(long)]
    pub out: PathBuf,
    /// Variables that are constant in time.
    #[arg(long, value_delimiter = ',', action = clap::ArgAction::Set)]
    pub statics: Vec<String>,
    /// Raw: variable names in channel order.
    #[arg(long, value_delimiter = ',', action = clap::ArgAction::Set)]
    pub variables: Vec<String>,
    /// Raw: number of timestamps.
    #[arg(long)]
    pub steps: Option<usize>,
    /// Raw: grid spacing in degrees.
    #[arg(long)]
    pub resolution: Option<f64>,
    /// Raw: unix time of the first timestamp.
    #[arg(long, default_value_t = 0)]
    pub time_start: i64,
    /// Raw: seconds between timestamps.
    #[arg(long, default_value_t = 21_600)]
    pub time_step: i64,
}

#[derive(Deserialize)]
struct CsvRecord {
    time_unix: i64,
    variable: String,
    lat: f64,
    lon: f64,
    value: f32,
}

fn make_var(name: &str, statics: &[String]) -> Variable {
    if statics.iter().any(|s| s == name) {
        Variable::constant(name, "")
    } else {
        Variable::dynamic(name, "", Level::surface())
    }
}

fn sorted_unique(mut v: Vec<f64>) -> Vec<f64> {
    v.sort_by(f64::total_cmp);
    v.dedup();
    v
}

fn ingest_csv(a: &IngestArgs) -> anyhow::Result<FieldSeries> {
    let mut rdr = csv::Reader::from_path(&a.input).with_context(|| format!("opening {}", a.input.display()))?;
    let rows: Vec<CsvRecord> = rdr
        .deserialize()
        .enumerate()
        .map(|(n, r)| r.with_context(|| format!("{}: record {}", a.input.display(), n + 1)))
        .collect::<anyhow::Result<_>>()?;
    if rows.is_empty() {
        bail!("{} has no records", a.input.display());
    }
    let mut names: Vec<String> = Vec::new();
    for r in &rows {
        if !names.contains(&r.variable) {
            names.push(r.variable.clone());
        }
    }
    let mut times: Vec<i64> = rows.iter().map(|r| r.time_unix).collect();
    times.sort_unstable();
    times.dedup();
    let step = if times.len() > 1 { times[1] - times[0] } else { a.time_step };
    if let Some(w) = times.windows(2).find(|w| w[1] - w[0] != step) {
        bail!("time_unix is not uniformly spaced: {} follows {}", w[1], w[0]);
    }
    let lats = sorted_unique(rows.iter().map(|r| r.lat).collect());
    let lons = sorted_unique(rows.iter().map(|r| r.lon.rem_euclid(360.0)).collect());
    let periodic = lons.len() > 1 && ((lons[1] - lons[0]) * lons.len() as f64 - 360.0).abs() < 1e-6;
    let grid = Grid::new(lats.clone(), lons.clone(), periodic)?;
    let (h, w) = grid.shape();
    let mut data = Array4::<f32>::from_elem((times.len(), names.len(), h, w), f32::NAN);
    for r in &rows {
        let t = times.binary_search(&r.time_unix).expect("collected");
        let c = names.iter().position(|n| n == &r.variable).expect("collected");
        let i = lats.binary_search_by(|x| x.total_cmp(&r.lat)).expect("collected");
        let j = lons
            .binary_search_by(|x| x.total_cmp(&r.lon.rem_euclid(360.0)))
            .expect("collected");
        data[[t, c, i, j]] = r.value;
    }
    let missing = data.iter().filter(|v| v.is_nan()).count();
    if missing > 0 {
        eprintln!("note: {missing} cells missing from the CSV are stored as NaN");
    }
    let vars = names.iter().map(|n| make_var(n, &a.statics)).collect();
    Ok(FieldSeries::new(grid, vars, times[0], step, data)?)
}

fn ingest_raw(a: &IngestArgs) -> anyhow::Result<FieldSeries> {
    let steps = a.steps.ok_or_else(|| usage("raw ingest needs --steps"))?;
    let res = a.resolution.ok_or_else(|| usage("raw ingest needs --resolution"))?;
    if a.variables.is_empty() {
        return Err(usage("raw ingest needs --variables"));
    }
    let grid = Grid::from_resolution(res)?;
    let (h, w) = grid.shape();
    let n = steps * a.variables.len() * h * w;
    let mut bytes = Vec::new();
    std::fs::File::open(&a.input)
        .and_then(|mut f| f.read_to_end(&mut bytes))
        .with_context(|| format!("reading {}", a.input.display()))?;
    if bytes.len() != 4 * n {
        bail!(
            "{} holds {} bytes, expected {} for {steps}x{}x{h}x{w} f32",
            a.input.display(),
            bytes.len(),
            4 * n,
            a.variables.len()
        );
    }
    let values: Vec<f32> = bytes
        .chunks_exact(4)
        .map(|b| f32::from_le_bytes([b[0], b[1], b[2], b[3]]))
        .collect();
    let data = Array4::from_shape_vec((steps, a.variables.len(), h, w), values)?;
    let vars = a.variables.iter().map(|n| make_var(n, &a.statics)).collect();
    Ok(FieldSeries::new(grid, vars, a.time_start, a.time_step, data)?)
}

pub fn ingest(a: &IngestArgs) -> anyhow::Result<()> {
    let series = match a.format {
        IngestFormat::Csv => ingest_csv(a)?,
        IngestFormat::Raw => ingest_raw(a)?,
    };
    write_series(&series, &a.out)?;
    let d = series.data().dim();
    println!("wrote {} ({}x{}x{}x{})", a.out.display(), d.0, d.1, d.2, d.3);
    Ok(())
}

#[derive(Debug, Args, Serialize)]
#[serde(rename_all = "kebab-case")]
pub struct StatsArgs {
    #[arg(long)]
    pub input: PathBuf,
}

pub fn stats(a: &StatsArgs) -> anyhow::Result<()> {
    let s = read_series(&a.input)?;
    let mut vars = Vec::new();
    for (c, v) in s.variables().iter().enumerate() {
        let (mut n, mut mean, mut m2, mut nan) = (0u64, 0.0f64, 0.0f64, 0u64);
        let (mut lo, mut hi) = (f64::INFINITY, f64::NEG_INFINITY);
        for &x in s.channel(c) {
            if x.is_nan() {
                nan += 1;
                continue;
            }
            let x = f64::from(x);
            n += 1;
            let d = x - mean;
            mean += d / n as f64;
            m2 += d * (x - mean);
            lo = lo.min(x);
            hi = hi.max(x);
        }
        let defined = n > 0;
        vars.push(json!({
            "name": v.name,
            "static": v.is_static,
            "mean": defined.then_some(mean),
            "std": defined.then(|| (m2 / n as f64).sqrt()),
            "min": defined.then_some(lo),
            "max": defined.then_some(hi),
            "nan_count": nan,
        }));
    }
    let d = s.data().dim();
    let out = json!({
        "dims": [d.0, d.1, d.2, d.3],
        "time_start": s.time_start(),
        "time_step": s.time_step(),
        "time_end": s.time_end(),
        "lat_range": [s.grid().lats().first(), s.grid().lats().last()],
        "lon_range": [s.grid().lons().first(), s.grid().lons().last()],
        "periodic_lon": s.grid().periodic_lon(),
        "variables": vars,
    });
    println!("{}", serde_json::to_string_pretty(&out)?);
    Ok(())
}

#[derive(Debug, Args, Serialize)]
#[serde(rename_all = "kebab-case")]
pub struct SplitArgs {
    #[arg(long)]
    pub input: PathBuf,
    /// Directory receiving train.clbt, val.clbt and test.clbt.
    #[arg(long)]
    pub out_dir: PathBuf,
    /// Training years, e.g. `1979-2015`; defaults to all but the last two years.
    #[arg(long)]
    #[serde(serialize_with = "ser_display")]
    pub train: Option<YearRange>,
    /// Validation years; defaults to the second-to-last year.
    #[arg(long)]
    #[serde(serialize_with = "ser_display")]
    pub val: Option<YearRange>,
    /// Test years; defaults to the last year.
    #[arg(long)]
    #[serde(serialize_with = "ser_display")]
    pub test: Option<YearRange>,
    /// Keep every k-th timestamp before splitting.
    #[arg(long, default_value_t = 1)]
    pub stride: usize,
}

pub fn ser_display<T: std::fmt::Display, S: serde::Serializer>(v: &Option<T>, s: S) -> Result<S::Ok, S::Error> {
    match v {
        Some(v) => s.collect_str(v),
        None => s.serialize_none(),
    }
}

pub fn split(a: &SplitArgs) -> anyhow::Result<()> {
    if a.stride == 0 {
        return Err(usage("stride must be positive"));
    }
    let series = read_series(&a.input)?.subsample(a.stride)?;
    let first = clbench_core::store::year_of(series.time_start());
    let last = clbench_core::store::year_of(series.time_end());
    let splits = match (a.train, a.val, a.test) {
        (Some(train), Some(val), Some(test)) => SplitSpec { train, val, test },
        (None, None, None) => {
            if last - first < 2 {
                bail!("series covers {first}-{last}; default splits need at least three calendar years");
            }
            SplitSpec {
                train: YearRange::new(first, last - 2)?,
                val: YearRange::new(last - 1, last - 1)?,
                test: YearRange::new(last, last)?,
            }
        }
        _ => return Err(usage("give all of --train, --val and --test, or none")),
    };
    let parts = split_by_years(&series, &splits)?;
    std::fs::create_dir_all(&a.out_dir).with_context(|| format!("creating {}", a.out_dir.display()))?;
    let mut summary = BTreeMap::new();
    for (name, part) in ["train", "val", "test"].iter().zip(parts.iter()) {
        let p = a.out_dir.join(format!("{name}.clbt"));
        write_series(part, &p)?;
        summary.insert(*name, part.len());
    }
    println!("split {} as train {} / val {} / test {}: {summary:?}", a.input.display(), splits.train, splits.val, splits.test);
    Ok(())
}

#[derive(Clone, Copy, Debug, ValueEnum, Serialize)]
#[serde(rename_all = "lowercase")]
pub enum SchemeArg {
    Nearest,
    Bilinear,
}

impl From<SchemeArg> for Scheme {
    fn from(s: SchemeArg) -> Self {
        match s {
            SchemeArg::Nearest => Scheme::Nearest,
            SchemeArg::Bilinear => Scheme::Bilinear,
        }
    }
}

#[derive(Debug, Args, Serialize)]
#[serde(rename_all = "kebab-case")]
pub struct RegridArgs {
    #[arg(long)]
    pub input: PathBuf,
    #[arg(long)]
    pub out: PathBuf,
    #[arg(long, value_enum, default_value = "bilinear")]
    pub scheme: SchemeArg,
    /// Target grid spacing in degrees.
    #[arg(long)]
    pub to: f64,
}

pub fn regrid(a: &RegridArgs) -> anyhow::Result<()> {
    let series = read_series(&a.input)?;
    let dst = Grid::from_resolution(a.to).map_err(|e| usage(format!("to: {e}")))?;
    let out = regrid_series(&series, &dst, a.scheme.into())?;
    write_series(&out, &a.out)?;
    println!("wrote {} on a {}x{} grid", a.out.display(), dst.height(), dst.width());
    Ok(())
}

#[derive(Debug, Args, Serialize)]
#[serde(rename_all = "kebab-case")]
pub struct CropArgs {
    #[arg(long)]
    pub input: PathBuf,
    #[arg(long)]
    pub out: PathBuf,
    /// `lat_min,lat_max,lon_min,lon_max` in degrees, or `conus`.
    #[arg(long)]
    pub region: String,
}

fn parse_region(s: &str) -> anyhow::Result<RegionBox> {
    if s.eq_ignore_ascii_case("conus") {
        return Ok(RegionBox::CONUS);
    }
    let v: Vec<f64> = s
        .split(',')
        .map(|x| x.trim().parse::<f64>())
        .collect::<Result<_, _>>()
        .map_err(|_| usage(format!("region: expected four numbers or conus, found {s:?}")))?;
    if v.len() != 4 {
        return Err(usage(format!("region: expected four numbers, found {}", v.len())));
    }
    RegionBox::new(v[0], v[1], v[2], v[3]).map_err(|e| usage(format!("region: {e}")))
}

pub fn crop(a: &CropArgs) -> anyhow::Result<()> {
    let region = parse_region(&a.region)?;
    let out = crop_series(&read_series(&a.input)?, &region)?;
    write_series(&out, &a.out)?;
    println!("wrote {} on a {}x{} grid", a.out.display(), out.grid().height(), out.grid().width());
    Ok(())
}
