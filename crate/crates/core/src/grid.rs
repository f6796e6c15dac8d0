//! Regular latitude/longitude grids and latitude weighting.
//!
//! Coordinates are cell centers. Longitudes must be strictly increasing; on a
//! periodic grid they must also be uniformly spaced so that index arithmetic
//! modulo `W` is a valid wrap.

use std::ops::Range;

use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};

const LON_SPACING_TOL: f64 = 1e-9;

/// A rectilinear latitude/longitude grid of cell centers.
#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct Grid {
    lats: Vec<f64>,
    lons: Vec<f64>,
    periodic_lon: bool,
}

impl Grid {
    pub fn new(lats: Vec<f64>, lons: Vec<f64>, periodic_lon: bool) -> Result<Self> {
        if lats.is_empty() || lons.is_empty() {
            return Err(Error::InvalidGrid("grid needs at least one row and one column".into()));
        }
        if let Some(bad) = lats.iter().find(|l| !l.is_finite() || l.abs() > 90.0) {
            return Err(Error::InvalidCoordinate(format!("latitude {bad} outside [-90, 90]")));
        }
        if lons.iter().any(|l| !l.is_finite()) {
            return Err(Error::InvalidCoordinate("non-finite longitude".into()));
        }
        if lats.len() > 1 {
            let ascending = lats[1] > lats[0];
            let monotonic = lats
                .windows(2)
                .all(|w| if ascending { w[1] > w[0] } else { w[1] < w[0] });
            if !monotonic {
                return Err(Error::InvalidGrid(
                    "latitudes must be strictly monotonic without duplicates".into(),
                ));
            }
        }
        if lons.windows(2).any(|w| w[1] <= w[0]) {
            return Err(Error::InvalidGrid("longitudes must be strictly increasing".into()));
        }
        if periodic_lon {
            if lons[lons.len() - 1] - lons[0] >= 360.0 {
                return Err(Error::InvalidGrid("periodic longitudes span 360 degrees or more".into()));
            }
            let step = 360.0 / lons.len() as f64;
            for (j, w) in lons.windows(2).enumerate() {
                if ((w[1] - w[0]) - step).abs() > LON_SPACING_TOL {
                    return Err(Error::InvalidGrid(format!(
                        "periodic longitudes must be uniformly spaced by {step}; gap after column {j} is {}",
                        w[1] - w[0]
                    )));
                }
            }
        }
        Ok(Self {
            lats,
            lons,
            periodic_lon,
        })
    }

    /// Global grid at `deg` resolution with cell-center coordinates.
    pub fn from_resolution(deg: f64) -> Result<Self> {
        if !(deg.is_finite() && deg > 0.0) {
            return Err(Error::InvalidResolution(deg));
        }
        let h = 180.0 / deg;
        let w = 360.0 / deg;
        if (h - h.round()).abs() > 1e-9 || (w - w.round()).abs() > 1e-9 {
            return Err(Error::InvalidResolution(deg));
        }
        let (h, w) = (h.round() as usize, w.round() as usize);
        let lats = (0..h).map(|i| -90.0 + deg * (i as f64 + 0.5)).collect();
        let lons = (0..w).map(|j| deg * (j as f64 + 0.5)).collect();
        Self::new(lats, lons, true)
    }

    pub fn lats(&self) -> &[f64] {
        &self.lats
    }

    pub fn lons(&self) -> &[f64] {
        &self.lons
    }

    pub fn periodic_lon(&self) -> bool {
        self.periodic_lon
    }

    pub fn height(&self) -> usize {
        self.lats.len()
    }

    pub fn width(&self) -> usize {
        self.lons.len()
    }

    pub fn shape(&self) -> (usize, usize) {
        (self.height(), self.width())
    }

    /// Column index `j + offset`, wrapped on periodic grids and `None` when it
    /// falls off a non-periodic grid.
    pub fn wrap_col(&self, j: usize, offset: isize) -> Option<usize> {
        let w = self.width() as isize;
        let c = j as isize + offset;
        if self.periodic_lon {
            Some(c.rem_euclid(w) as usize)
        } else if (0..w).contains(&c) {
            Some(c as usize)
        } else {
            None
        }
    }

    /// Column index clamped at the edges of non-periodic grids.
    pub fn clamp_col(&self, j: usize, offset: isize) -> usize {
        self.wrap_col(j, offset)
            .unwrap_or_else(|| (j as isize + offset).clamp(0, self.width() as isize - 1) as usize)
    }

    /// Sub-grid made of the given rows and column ranges (in order).
    pub fn select(&self, sel: &SubgridIndices) -> Result<Grid> {
        let lats = self.lats[sel.rows.clone()].to_vec();
        let mut lons = Vec::with_capacity(sel.width());
        let mut shift = 0.0;
        let mut prev = f64::NEG_INFINITY;
        for r in &sel.cols {
            for &lon in &self.lons[r.clone()] {
                // keep longitudes increasing across a seam
                while lon + shift <= prev {
                    shift += 360.0;
                }
                prev = lon + shift;
                lons.push(prev);
            }
        }
        let periodic = self.periodic_lon && sel.width() == self.width();
        Grid::new(lats, lons, periodic)
    }
}

/// Per-row latitude weights normalized to unit mean.
#[derive(Clone, Debug, PartialEq)]
pub struct LatWeights {
    w: Vec<f64>,
}

impl LatWeights {
    pub fn as_slice(&self) -> &[f64] {
        &self.w
    }

    pub fn row(&self, i: usize) -> f64 {
        self.w[i]
    }

    pub fn len(&self) -> usize {
        self.w.len()
    }

    pub fn is_empty(&self) -> bool {
        self.w.is_empty()
    }

    /// Uniform weights, for unweighted aggregation through the weighted code paths.
    pub fn uniform(h: usize) -> Self {
        Self { w: vec![1.0; h] }
    }
}

/// `w[i] = cos(lat_i) / mean_j cos(lat_j)`.
pub fn make_lat_weights(grid: &Grid) -> Result<LatWeights> {
    let cos: Vec<f64> = grid
        .lats()
        .iter()
        .map(|&lat| {
            if lat.abs() > 90.0 {
                Err(Error::InvalidCoordinate(format!("latitude {lat} outside [-90, 90]")))
            } else {
                Ok(lat.to_radians().cos().max(0.0))
            }
        })
        .collect::<Result<_>>()?;
    // order-independent sum so that mirrored grids get mirrored weights bit-for-bit
    let mut sorted = cos.clone();
    sorted.sort_by(f64::total_cmp);
    let mean = sorted.iter().sum::<f64>() / cos.len() as f64;
    if mean <= 0.0 {
        return Err(Error::InvalidCoordinate(
            "all latitudes at the poles; weights undefined".into(),
        ));
    }
    Ok(LatWeights {
        w: cos.into_iter().map(|c| c / mean).collect(),
    })
}

/// Latitude/longitude bounding box in degrees.
///
/// Longitudes are interpreted modulo 360; a box whose `lon_min` exceeds
/// `lon_max` after normalization wraps across the 0/360 seam.
#[derive(Clone, Copy, Debug, PartialEq, Serialize, Deserialize)]
pub struct RegionBox {
    pub lat_min: f64,
    pub lat_max: f64,
    pub lon_min: f64,
    pub lon_max: f64,
}

impl RegionBox {
    /// Conterminous United States.
    pub const CONUS: RegionBox = RegionBox {
        lat_min: 24.0,
        lat_max: 50.0,
        lon_min: 235.0,
        lon_max: 294.0,
    };

    pub const GLOBAL: RegionBox = RegionBox {
        lat_min: -90.0,
        lat_max: 90.0,
        lon_min: 0.0,
        lon_max: 360.0,
    };

    pub fn new(lat_min: f64, lat_max: f64, lon_min: f64, lon_max: f64) -> Result<Self> {
        if !(lat_min < lat_max) {
            return Err(Error::InvalidArgument(format!(
                "region lat_min {lat_min} must be below lat_max {lat_max}"
            )));
        }
        Ok(Self {
            lat_min,
            lat_max,
            lon_min,
            lon_max,
        })
    }

    fn contains_lon(&self, lon: f64) -> bool {
        let span = self.lon_max - self.lon_min;
        if span >= 360.0 {
            return true;
        }
        let span = span.rem_euclid(360.0);
        (lon - self.lon_min).rem_euclid(360.0) <= span
    }
}

/// Row range and (possibly wrapped) column ranges selected by a [`RegionBox`].
#[derive(Clone, Debug, PartialEq, Eq)]
pub struct SubgridIndices {
    pub rows: Range<usize>,
    pub cols: Vec<Range<usize>>,
}

impl SubgridIndices {
    pub fn height(&self) -> usize {
        self.rows.len()
    }

    pub fn width(&self) -> usize {
        self.cols.iter().map(|r| r.len()).sum()
    }

    /// Column indices in selection order.
    pub fn col_indices(&self) -> impl Iterator<Item = usize> + '_ {
        self.cols.iter().flat_map(|r| r.clone())
    }
}

/// Rows and columns whose cell centers fall inside `region` (bounds inclusive).
///
/// On a periodic grid a region straddling the seam yields two column ranges,
/// ordered eastward from `lon_min`.
pub fn subgrid_indices(grid: &Grid, region: &RegionBox) -> Result<SubgridIndices> {
    let rows: Vec<usize> = grid
        .lats()
        .iter()
        .enumerate()
        .filter(|(_, &lat)| lat >= region.lat_min && lat <= region.lat_max)
        .map(|(i, _)| i)
        .collect();
    let rows = match (rows.first(), rows.last()) {
        (Some(&a), Some(&b)) => a..b + 1,
        _ => return Err(Error::EmptyRegion(format!("no latitude within {region:?}"))),
    };

    let inside: Vec<bool> = grid
        .lons()
        .iter()
        .map(|&lon| {
            if grid.periodic_lon() {
                region.contains_lon(lon)
            } else {
                lon >= region.lon_min && lon <= region.lon_max
            }
        })
        .collect();
    let mut ranges = Vec::new();
    let mut j = 0;
    while j < inside.len() {
        if inside[j] {
            let start = j;
            while j < inside.len() && inside[j] {
                j += 1;
            }
            ranges.push(start..j);
        } else {
            j += 1;
        }
    }
    if ranges.is_empty() {
        return Err(Error::EmptyRegion(format!("no longitude within {region:?}")));
    }
    // A seam-straddling box selects a trailing and a leading run; emit them
    // eastward from lon_min.
    if grid.periodic_lon() && ranges.len() == 2 && ranges[0].start == 0 && ranges[1].end == grid.width() {
        ranges.swap(0, 1);
    }
    Ok(SubgridIndices { rows, cols: ranges })
}

#[cfg(test)]
mod tests {
    use super::*;

    macro_rules! assert_close {
        ($a:expr, $b:expr, $tol:expr) => {{
            let (a, b): (f64, f64) = ($a, $b);
            assert!((a - b).abs() <= $tol, "{a} vs {b} (tol {})", $tol);
        }};
    }

    #[test]
    fn single_equator_row_has_unit_weight() {
        let g = Grid::new(vec![0.0], vec![0.0], false).unwrap();
        assert_eq!(make_lat_weights(&g).unwrap().as_slice(), &[1.0]);
    }

    #[test]
    fn symmetric_rows_have_equal_weights() {
        let g = Grid::new(vec![-60.0, 60.0], vec![0.0, 180.0], true).unwrap();
        let w = make_lat_weights(&g).unwrap();
        assert_close!(w.row(0), 1.0, 1e-15);
        assert_close!(w.row(1), 1.0, 1e-15);
    }

    #[test]
    fn standard_5625_weights_match_high_precision_values() {
        // cos(lat)/mean(cos) evaluated at 30 significant digits
        const EXPECTED: [f64; 16] = [
            0.07704437324484982,
            0.23039114030346299,
            0.38151911473634535,
            0.52897285153475374,
            0.67133229060690762,
            0.80722643273295668,
            0.93534654303693242,
            1.054458754819031,
            1.1634159523664324,
            1.2611688183046924,
            1.3467759390976732,
            1.419412871374526,
            1.4783800817700385,
            1.5231096838133456,
            1.5531709069850827,
            1.5682742452729696,
        ];
        let g = Grid::from_resolution(5.625).unwrap();
        assert_close!(g.lats()[0], -87.1875, 0.0);
        assert_close!(g.lats()[31], 87.1875, 0.0);
        let w = make_lat_weights(&g).unwrap();
        for (i, e) in EXPECTED.iter().enumerate() {
            assert_close!(w.row(i), *e, 1e-13);
            assert_close!(w.row(31 - i), *e, 1e-13);
        }
        assert!(w.row(16) > w.row(0));
        let mean = w.as_slice().iter().sum::<f64>() / 32.0;
        assert_close!(mean, 1.0, 1e-12);
    }

    #[test]
    fn resolution_grids() {
        assert_eq!(Grid::from_resolution(5.625).unwrap().shape(), (32, 64));
        assert_eq!(Grid::from_resolution(2.8125).unwrap().shape(), (64, 128));
        assert_eq!(Grid::from_resolution(90.0).unwrap().shape(), (2, 4));
        assert!(matches!(Grid::from_resolution(7.0), Err(Error::InvalidResolution(_))));
        assert!(matches!(Grid::from_resolution(0.0), Err(Error::InvalidResolution(_))));
    }

    #[test]
    fn rejects_out_of_range_latitude() {
        assert!(matches!(
            Grid::new(vec![91.0], vec![0.0], false),
            Err(Error::InvalidCoordinate(_))
        ));
    }

    #[test]
    fn rejects_nonuniform_periodic_lons() {
        assert!(Grid::new(vec![0.0], vec![0.0, 10.0, 30.0], true).is_err());
        assert!(Grid::new(vec![0.0], vec![0.0, 10.0, 30.0], false).is_ok());
    }

    #[test]
    fn global_box_is_identity_selection() {
        let g = Grid::from_resolution(5.625).unwrap();
        let s = subgrid_indices(&g, &RegionBox::GLOBAL).unwrap();
        assert_eq!(s.rows, 0..32);
        assert_eq!(s.cols, vec![0..64]);
        assert_eq!(g.select(&s).unwrap(), g);
    }

    #[test]
    fn conus_on_28125_is_9_by_21() {
        let g = Grid::from_resolution(2.8125).unwrap();
        let s = subgrid_indices(&g, &RegionBox::CONUS).unwrap();
        assert_eq!((s.height(), s.width()), (9, 21));
    }

    #[test]
    fn seam_straddling_box_matches_brute_force() {
        let g = Grid::from_resolution(22.5).unwrap();
        let region = RegionBox::new(-30.0, 30.0, 300.0, 50.0).unwrap();
        let s = subgrid_indices(&g, &region).unwrap();
        assert_eq!(s.cols.len(), 2);
        // brute force: walk east from lon_min and collect centers inside
        let mut expected = Vec::new();
        let mut lon: f64 = 300.0;
        while lon <= 410.0 {
            if let Some(j) = g.lons().iter().position(|&c| (c - lon.rem_euclid(360.0)).abs() < 1e-9) {
                expected.push(j);
            }
            lon += 0.25;
        }
        expected.dedup();
        assert_eq!(s.col_indices().collect::<Vec<_>>(), expected);
        let rows: Vec<usize> = (0..g.height()).filter(|&i| g.lats()[i].abs() <= 30.0).collect();
        assert_eq!(s.rows.clone().collect::<Vec<_>>(), rows);
        let sub = g.select(&s).unwrap();
        assert!(sub.lons().windows(2).all(|w| w[1] > w[0]));
    }

    #[test]
    fn empty_region_is_an_error() {
        let g = Grid::from_resolution(45.0).unwrap();
        let region = RegionBox::new(1.0, 2.0, 0.0, 360.0).unwrap();
        assert!(matches!(subgrid_indices(&g, &region), Err(Error::EmptyRegion(_))));
    }

    #[test]
    fn wrap_and_clamp() {
        let g = Grid::from_resolution(90.0).unwrap();
        assert_eq!(g.wrap_col(0, -1), Some(3));
        assert_eq!(g.wrap_col(3, 1), Some(0));
        let ng = Grid::new(vec![0.0], vec![0.0, 1.0, 2.0], false).unwrap();
        assert_eq!(ng.wrap_col(0, -1), None);
        assert_eq!(ng.clamp_col(0, -1), 0);
        assert_eq!(ng.clamp_col(2, 2), 2);
    }

    mod props {
        use super::*;
        use proptest::prelude::*;

        fn lats_strategy() -> impl Strategy<Value = Vec<f64>> {
            prop::collection::btree_set(-89_000i32..89_000, 1..40)
                .prop_map(|s| s.into_iter().map(|v| v as f64 / 1000.0).collect())
        }

        proptest! {
            #[test]
            fn weights_have_unit_mean(lats in lats_strategy()) {
                let g = Grid::new(lats, vec![0.0], false).unwrap();
                let w = make_lat_weights(&g).unwrap();
                let mean = w.as_slice().iter().sum::<f64>() / w.len() as f64;
                prop_assert!((mean - 1.0).abs() < 1e-12);
            }

            #[test]
            fn weights_mirror_with_latitudes(lats in lats_strategy()) {
                let g = Grid::new(lats.clone(), vec![0.0], false).unwrap();
                let rev: Vec<f64> = lats.iter().rev().copied().collect();
                let gr = Grid::new(rev, vec![0.0], false).unwrap();
                let mut w = make_lat_weights(&g).unwrap().as_slice().to_vec();
                w.reverse();
                prop_assert_eq!(w, make_lat_weights(&gr).unwrap().as_slice().to_vec());
            }
        }
    }
}
