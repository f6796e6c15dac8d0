//! Resampling between latitude/longitude grids, plus crop and pad.

use ndarray::{s, Array2, Array4, ArrayView2, Axis};
use rayon::prelude::*;
use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};
use crate::grid::{subgrid_indices, Grid, RegionBox};
use crate::store::FieldSeries;

#[derive(Clone, Copy, Debug, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "lowercase")]
pub enum Scheme {
    Nearest,
    Bilinear,
}

impl std::str::FromStr for Scheme {
    type Err = Error;

    fn from_str(s: &str) -> Result<Self> {
        match s {
            "nearest" => Ok(Scheme::Nearest),
            "bilinear" => Ok(Scheme::Bilinear),
            other => Err(Error::InvalidArgument(format!(
                "unknown scheme {other:?} (expected nearest|bilinear)"
            ))),
        }
    }
}

fn check_shape(field: &ArrayView2<'_, f32>, grid: &Grid) -> Result<()> {
    if field.dim() != grid.shape() {
        return Err(Error::ShapeMismatch(format!(
            "field is {:?} but grid is {:?}",
            field.dim(),
            grid.shape()
        )));
    }
    Ok(())
}

/// Signed-free longitude distance, modulo 360 on periodic grids.
fn lon_distance(a: f64, b: f64, periodic: bool) -> f64 {
    let d = (a - b).abs();
    if periodic {
        let d = d.rem_euclid(360.0);
        d.min(360.0 - d)
    } else {
        d
    }
}

/// Index of the smallest distance, ties to the smaller index.
fn argmin_by(n: usize, dist: impl Fn(usize) -> f64) -> usize {
    let mut best = 0;
    let mut best_d = dist(0);
    for k in 1..n {
        let d = dist(k);
        if d < best_d {
            best = k;
            best_d = d;
        }
    }
    best
}

/// Nearest source row and column for every target row and column.
///
/// The per-axis distance is separable, so the 2-D nearest center is the
/// product of the per-axis nearest indices.
fn nearest_maps(src: &Grid, dst: &Grid) -> (Vec<usize>, Vec<usize>) {
    let rows = dst
        .lats()
        .iter()
        .map(|&lat| argmin_by(src.height(), |i| (src.lats()[i] - lat).abs()))
        .collect();
    let cols = dst
        .lons()
        .iter()
        .map(|&lon| argmin_by(src.width(), |j| lon_distance(src.lons()[j], lon, src.periodic_lon())))
        .collect();
    (rows, cols)
}

pub fn regrid_nearest(field: ArrayView2<'_, f32>, src: &Grid, dst: &Grid) -> Result<Array2<f32>> {
    check_shape(&field, src)?;
    let (rows, cols) = nearest_maps(src, dst);
    Ok(Array2::from_shape_fn(dst.shape(), |(i, j)| field[[rows[i], cols[j]]]))
}

/// Interpolation stencil along one axis: two indices and the weight of the
/// second. A weight of exactly zero means only the first index contributes.
#[derive(Clone, Copy, Debug)]
struct Bracket {
    lo: usize,
    hi: usize,
    frac: f64,
}

fn lat_bracket(lats: &[f64], lat: f64) -> Bracket {
    let n = lats.len();
    let ascending = n < 2 || lats[1] > lats[0];
    // position along the axis in increasing-coordinate order
    let at = |k: usize| if ascending { lats[k] } else { lats[n - 1 - k] };
    let idx = |k: usize| if ascending { k } else { n - 1 - k };
    if lat <= at(0) {
        return Bracket { lo: idx(0), hi: idx(0), frac: 0.0 };
    }
    if lat >= at(n - 1) {
        return Bracket { lo: idx(n - 1), hi: idx(n - 1), frac: 0.0 };
    }
    // at(k) <= lat < at(k + 1)
    let k = (0..n - 1).rev().find(|&k| at(k) <= lat).unwrap_or(0);
    let frac = (lat - at(k)) / (at(k + 1) - at(k));
    Bracket { lo: idx(k), hi: idx(k + 1), frac }
}

fn lon_bracket(grid: &Grid, lon: f64) -> Bracket {
    let lons = grid.lons();
    let n = lons.len();
    if !grid.periodic_lon() {
        return lat_bracket(lons, lon);
    }
    let lon = if lon >= lons[0] && lon < lons[0] + 360.0 {
        lon
    } else {
        lons[0] + (lon - lons[0]).rem_euclid(360.0)
    };
    let k = (0..n).rev().find(|&k| lons[k] <= lon).unwrap_or(0);
    let next = if k + 1 < n { lons[k + 1] } else { lons[0] + 360.0 };
    let frac = (lon - lons[k]) / (next - lons[k]);
    Bracket { lo: k, hi: (k + 1) % n, frac }
}

fn blend(field: &ArrayView2<'_, f32>, r: Bracket, c: Bracket) -> f32 {
    let mut acc = 0.0f64;
    for (i, wi) in [(r.lo, 1.0 - r.frac), (r.hi, r.frac)] {
        if wi == 0.0 {
            continue;
        }
        for (j, wj) in [(c.lo, 1.0 - c.frac), (c.hi, c.frac)] {
            if wj == 0.0 {
                continue;
            }
            // NaN corners propagate
            acc += wi * wj * f64::from(field[[i, j]]);
        }
    }
    acc as f32
}

/// Bilinear interpolation between the four surrounding source centers.
///
/// Longitude wraps across the seam on periodic grids; targets beyond the
/// outermost source latitudes take the edge row.
pub fn regrid_bilinear(field: ArrayView2<'_, f32>, src: &Grid, dst: &Grid) -> Result<Array2<f32>> {
    check_shape(&field, src)?;
    if src.height() < 2 || src.width() < 2 {
        return Err(Error::InvalidGrid(format!(
            "bilinear needs a source of at least 2x2, got {:?}",
            src.shape()
        )));
    }
    let rows: Vec<Bracket> = dst.lats().iter().map(|&l| lat_bracket(src.lats(), l)).collect();
    let cols: Vec<Bracket> = dst.lons().iter().map(|&l| lon_bracket(src, l)).collect();
    let mut out = Array2::zeros(dst.shape());
    out.axis_iter_mut(Axis(0))
        .into_par_iter()
        .zip(rows.par_iter())
        .for_each(|(mut row, &rb)| {
            for (v, &cb) in row.iter_mut().zip(&cols) {
                *v = blend(&field, rb, cb);
            }
        });
    Ok(out)
}

pub fn regrid(field: ArrayView2<'_, f32>, src: &Grid, dst: &Grid, scheme: Scheme) -> Result<Array2<f32>> {
    match scheme {
        Scheme::Nearest => regrid_nearest(field, src, dst),
        Scheme::Bilinear => regrid_bilinear(field, src, dst),
    }
}

/// Regrids every `(t, c)` slice of a series onto `dst`.
pub fn regrid_series(series: &FieldSeries, dst: &Grid, scheme: Scheme) -> Result<FieldSeries> {
    let (t, c, _, _) = series.data().dim();
    let (h, w) = dst.shape();
    let mut out = Array4::<f32>::zeros((t, c, h, w));
    let src = series.grid();
    let slices: Vec<Array2<f32>> = (0..t * c)
        .into_par_iter()
        .map(|k| regrid(series.data().slice(s![k / c, k % c, .., ..]), src, dst, scheme))
        .collect::<Result<_>>()?;
    for (k, sl) in slices.into_iter().enumerate() {
        out.slice_mut(s![k / c, k % c, .., ..]).assign(&sl);
    }
    FieldSeries::new(
        dst.clone(),
        series.variables().to_vec(),
        series.time_start(),
        series.time_step(),
        out,
    )
}

/// Crops a field to the cells whose centers fall inside `region`.
pub fn crop(field: ArrayView2<'_, f32>, grid: &Grid, region: &RegionBox) -> Result<(Array2<f32>, Grid)> {
    check_shape(&field, grid)?;
    let sel = subgrid_indices(grid, region)?;
    let cols: Vec<usize> = sel.col_indices().collect();
    let out = field.slice(s![sel.rows.clone(), ..]).select(Axis(1), &cols);
    Ok((out, grid.select(&sel)?))
}

pub fn crop_series(series: &FieldSeries, region: &RegionBox) -> Result<FieldSeries> {
    let sel = subgrid_indices(series.grid(), region)?;
    let cols: Vec<usize> = sel.col_indices().collect();
    let data = series
        .data()
        .slice(s![.., .., sel.rows.clone(), ..])
        .select(Axis(3), &cols);
    FieldSeries::new(
        series.grid().select(&sel)?,
        series.variables().to_vec(),
        series.time_start(),
        series.time_step(),
        data,
    )
}

/// Places `field` at `anchor = (row, col)` inside an `h_out x w_out` canvas
/// filled with `fill`. Returns the canvas and its validity mask.
pub fn pad_to(
    field: ArrayView2<'_, f32>,
    h_out: usize,
    w_out: usize,
    fill: f32,
    anchor: (usize, usize),
) -> Result<(Array2<f32>, Array2<bool>)> {
    let (h, w) = field.dim();
    let (r0, c0) = anchor;
    if r0 + h > h_out || c0 + w > w_out {
        return Err(Error::InvalidArgument(format!(
            "cannot pad {h}x{w} at {anchor:?} into {h_out}x{w_out}"
        )));
    }
    let mut out = Array2::from_elem((h_out, w_out), fill);
    let mut mask = Array2::from_elem((h_out, w_out), false);
    out.slice_mut(s![r0..r0 + h, c0..c0 + w]).assign(&field);
    mask.slice_mut(s![r0..r0 + h, c0..c0 + w]).fill(true);
    Ok((out, mask))
}

/// Inverse of [`pad_to`]: the `h x w` block at `anchor`.
pub fn crop_block(field: ArrayView2<'_, f32>, anchor: (usize, usize), h: usize, w: usize) -> Result<Array2<f32>> {
    let (r0, c0) = anchor;
    if r0 + h > field.nrows() || c0 + w > field.ncols() {
        return Err(Error::InvalidArgument(format!(
            "block {h}x{w} at {anchor:?} exceeds {:?}",
            field.dim()
        )));
    }
    Ok(field.slice(s![r0..r0 + h, c0..c0 + w]).to_owned())
}

/// Value range of the four-corner stencil around a target point; used to
/// check the convexity of bilinear output.
pub fn bilinear_stencil_bounds(field: ArrayView2<'_, f32>, src: &Grid, lat: f64, lon: f64) -> (f32, f32) {
    let r = lat_bracket(src.lats(), lat);
    let c = lon_bracket(src, lon);
    let mut lo = f32::INFINITY;
    let mut hi = f32::NEG_INFINITY;
    for i in [r.lo, r.hi] {
        for j in [c.lo, c.hi] {
            lo = lo.min(field[[i, j]]);
            hi = hi.max(field[[i, j]]);
        }
    }
    (lo, hi)
}
