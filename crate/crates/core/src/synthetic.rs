//! Seeded synthetic fields: AR(1) in time, Gaussian-smoothed in space, with
//! unit marginal variance before scaling.
//!
//! Each variable is `mean(lat) + std * x_t` with
//! `x_{t+1} = rho * x_t + sqrt(1 - rho^2) * e_t` and `x_0 = e_0`, where every
//! `e_t` is white noise convolved with a kernel normalized per row so that
//! its variance is exactly 1 at every pixel.

use std::path::Path;

use ndarray::{Array2, Array3, Array4, Axis};
use rand::SeedableRng;
use rand_chacha::ChaCha8Rng;
use rand_distr::{Distribution, StandardNormal};
use rayon::prelude::*;
use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};
use crate::grid::Grid;
use crate::store::{FieldSeries, Level, Variable};

/// Independent generator for the named purpose, derived from one seed.
pub fn substream(seed: u64, name: &str) -> ChaCha8Rng {
    // FNV-1a keeps stream ids stable across platforms and releases
    let mut h: u64 = 0xcbf2_9ce4_8422_2325;
    for b in name.bytes() {
        h ^= u64::from(b);
        h = h.wrapping_mul(0x0000_0100_0000_01b3);
    }
    let mut rng = ChaCha8Rng::seed_from_u64(seed);
    rng.set_stream(h);
    rng
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct SyntheticVariable {
    pub name: String,
    pub units: String,
    pub level: Level,
    /// Global mean.
    pub mean: f64,
    /// Added `amplitude * cos(lat)` to the mean field.
    pub lat_amplitude: f64,
    /// Marginal standard deviation.
    pub std: f64,
    /// Lag-one autocorrelation per time step.
    pub rho: f64,
    /// Gaussian smoothing length in grid cells; 0 gives white noise.
    pub smooth_cells: f64,
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct SyntheticConfig {
    pub resolution_deg: f64,
    pub time_start: i64,
    pub time_step: i64,
    pub n_steps: usize,
    pub variables: Vec<SyntheticVariable>,
    /// Adds `lsm`, `orography` and `lat` constant fields.
    pub statics: bool,
    pub seed: u64,
}

impl SyntheticConfig {
    /// A small four-variable setup on the 5.625° grid, 6-hourly from 1979.
    pub fn standard(n_steps: usize, seed: u64) -> Self {
        let var = |name: &str, units: &str, level: Level, mean, amp, std, rho| SyntheticVariable {
            name: name.into(),
            units: units.into(),
            level,
            mean,
            lat_amplitude: amp,
            std,
            rho,
            smooth_cells: 2.0,
        };
        Self {
            resolution_deg: 5.625,
            time_start: 283_996_800,
            time_step: 6 * 3600,
            n_steps,
            variables: vec![
                var("z500", "m2 s-2", Level::Pressure(500.0), 54_000.0, 3_000.0, 300.0, 0.9),
                var("t850", "K", Level::Pressure(850.0), 265.0, 30.0, 3.0, 0.85),
                var("t2m", "K", Level::surface(), 270.0, 35.0, 3.0, 0.8),
                var("u10", "m s-1", Level::surface(), 0.0, 5.0, 4.0, 0.7),
            ],
            statics: true,
            seed,
        }
    }

    pub fn validate(&self) -> Result<()> {
        if self.n_steps == 0 || self.time_step <= 0 || self.variables.is_empty() {
            return Err(Error::InvalidArgument("synthetic series needs steps, a positive step and variables".into()));
        }
        for v in &self.variables {
            if !(v.rho > -1.0 && v.rho < 1.0) || !(v.std >= 0.0) || !(v.smooth_cells >= 0.0) {
                return Err(Error::InvalidArgument(format!(
                    "variable {:?}: need |rho| < 1, std >= 0, smooth_cells >= 0",
                    v.name
                )));
            }
        }
        Ok(())
    }
}

/// Kernel taps `exp(-d^2 / 2s^2)` for `|d| <= 3s`, at least the center.
fn taps(smooth: f64) -> Vec<(isize, f64)> {
    if smooth == 0.0 {
        return vec![(0, 1.0)];
    }
    let r = (3.0 * smooth).ceil() as isize;
    (-r..=r)
        .map(|d| (d, (-(d * d) as f64 / (2.0 * smooth * smooth)).exp()))
        .collect()
}

/// Unit-variance smoothed noise fields.
struct Smoother {
    lon: Vec<(isize, f64)>,
    /// Per row: `(row, weight)` pairs with squared weights summing to 1.
    lat: Vec<Vec<(usize, f64)>>,
    h: usize,
    w: usize,
}

impl Smoother {
    fn new(h: usize, w: usize, smooth: f64) -> Self {
        let mut lon = taps(smooth);
        // taps wider than the ring would alias onto themselves
        let half = (w as isize - 1) / 2;
        lon.retain(|(d, _)| d.abs() <= half);
        let norm = lon.iter().map(|(_, k)| k * k).sum::<f64>().sqrt();
        lon.iter_mut().for_each(|(_, k)| *k /= norm);
        let lat_taps = taps(smooth);
        let lat = (0..h)
            .map(|i| {
                let row: Vec<(usize, f64)> = lat_taps
                    .iter()
                    .filter_map(|&(d, k)| {
                        let r = i as isize + d;
                        (0..h as isize).contains(&r).then_some((r as usize, k))
                    })
                    .collect();
                let norm = row.iter().map(|(_, k)| k * k).sum::<f64>().sqrt();
                row.into_iter().map(|(r, k)| (r, k / norm)).collect()
            })
            .collect();
        Self { lon, lat, h, w }
    }

    fn apply(&self, noise: &Array2<f64>) -> Array2<f64> {
        let (h, w) = (self.h, self.w);
        let mut along = Array2::<f64>::zeros((h, w));
        for i in 0..h {
            for j in 0..w {
                along[[i, j]] = self
                    .lon
                    .iter()
                    .map(|&(d, k)| k * noise[[i, (j as isize + d).rem_euclid(w as isize) as usize]])
                    .sum();
            }
        }
        Array2::from_shape_fn((h, w), |(i, j)| self.lat[i].iter().map(|&(r, k)| k * along[[r, j]]).sum())
    }
}

fn noise(rng: &mut ChaCha8Rng, h: usize, w: usize) -> Array2<f64> {
    Array2::from_shape_simple_fn((h, w), || StandardNormal.sample(rng))
}

/// Generates the configured series.
pub fn generate(cfg: &SyntheticConfig) -> Result<FieldSeries> {
    cfg.validate()?;
    let grid = Grid::from_resolution(cfg.resolution_deg)?;
    let (h, w) = grid.shape();
    let t_len = cfg.n_steps;
    let dynamic: Vec<Array3<f32>> = cfg
        .variables
        .par_iter()
        .map(|v| {
            let mut rng = substream(cfg.seed, &format!("dynamic/{}", v.name));
            let smoother = Smoother::new(h, w, v.smooth_cells);
            let mean = Array2::from_shape_fn((h, w), |(i, _)| v.mean + v.lat_amplitude * grid.lats()[i].to_radians().cos());
            let innovation = (1.0 - v.rho * v.rho).sqrt();
            let mut x = smoother.apply(&noise(&mut rng, h, w));
            let mut out = Array3::<f32>::zeros((t_len, h, w));
            for t in 0..t_len {
                if t > 0 {
                    let e = smoother.apply(&noise(&mut rng, h, w));
                    x = &x * v.rho + &e * innovation;
                }
                out.index_axis_mut(Axis(0), t)
                    .assign(&(&mean + &(&x * v.std)).mapv(|z| z as f32));
            }
            out
        })
        .collect();
    let mut vars: Vec<Variable> = cfg
        .variables
        .iter()
        .map(|v| Variable::dynamic(v.name.clone(), v.units.clone(), v.level.clone()))
        .collect();
    let mut statics: Vec<Array2<f32>> = Vec::new();
    if cfg.statics {
        let mut rng = substream(cfg.seed, "static/terrain");
        let terrain = Smoother::new(h, w, 3.0).apply(&noise(&mut rng, h, w));
        statics.push(terrain.mapv(|z| if z > 0.3 { 1.0 } else { 0.0 }));
        statics.push(terrain.mapv(|z| (z.max(0.0) * 1_000.0) as f32));
        statics.push(Array2::from_shape_fn((h, w), |(i, _)| grid.lats()[i] as f32));
        vars.push(Variable::constant("lsm", "1"));
        vars.push(Variable::constant("orography", "m"));
        vars.push(Variable::constant("lat", "degrees_north"));
    }
    let mut data = Array4::<f32>::zeros((t_len, vars.len(), h, w));
    for (c, field) in dynamic.iter().enumerate() {
        data.index_axis_mut(Axis(1), c).assign(field);
    }
    let nd = dynamic.len();
    for (k, s) in statics.iter().enumerate() {
        for t in 0..t_len {
            data.slice_mut(ndarray::s![t, nd + k, .., ..]).assign(s);
        }
    }
    FieldSeries::new(grid, vars, cfg.time_start, cfg.time_step, data)
}

/// Sidecar description of a generated container.
#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct Manifest {
    pub dims: [usize; 4],
    pub variables: Vec<String>,
    pub config: SyntheticConfig,
}

impl Manifest {
    pub fn of(series: &FieldSeries, cfg: &SyntheticConfig) -> Self {
        let d = series.data().dim();
        Self {
            dims: [d.0, d.1, d.2, d.3],
            variables: series.variables().iter().map(|v| v.name.clone()).collect(),
            config: cfg.clone(),
        }
    }

    pub fn write(&self, path: impl AsRef<Path>) -> Result<()> {
        let path = path.as_ref();
        std::fs::write(path, serde_json::to_string_pretty(self)?).map_err(|e| Error::io(path, e))
    }

    pub fn read(path: impl AsRef<Path>) -> Result<Self> {
        let path = path.as_ref();
        let text = std::fs::read_to_string(path).map_err(|e| Error::io(path, e))?;
        Ok(serde_json::from_str(&text)?)
    }
}
