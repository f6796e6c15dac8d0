//! Simple extremes: localized rolling means, per-pixel percentile
//! thresholds and per-timestep evaluation masks.

use std::collections::BTreeMap;
use std::path::Path;

use ndarray::{s, Array2, Array3, Array4, ArrayView2, ArrayView3, Axis, Zip};
use serde::{Deserialize, Serialize};
use serde_json::Value;

use crate::error::{Error, Result};
use crate::grid::{Grid, LatWeights};
use crate::metrics::{DeterministicMetric, Mask, Score};
use crate::store::{read_container_with_extra, write_container_with_extra, FieldSeries, Level, Variable};

/// Minimum number of localized-mean samples per pixel for thresholds.
pub const MIN_THRESHOLD_SAMPLES: usize = 100;

/// 3×3 blending weights.
#[derive(Clone, Copy, Debug, PartialEq, Serialize, Deserialize)]
pub struct Stencil {
    pub center: f64,
    pub edge: f64,
    pub vertex: f64,
}

impl Stencil {
    /// Weights as published; they sum to 0.988, not 1.
    pub const PUBLISHED: Stencil = Stencil {
        center: 0.44,
        edge: 0.11,
        vertex: 0.027,
    };

    pub fn sum(&self) -> f64 {
        self.center + 4.0 * self.edge + 4.0 * self.vertex
    }

    fn weight(&self, di: isize, dj: isize) -> f64 {
        match di.abs() + dj.abs() {
            0 => self.center,
            1 => self.edge,
            _ => self.vertex,
        }
    }
}

impl Default for Stencil {
    fn default() -> Self {
        Stencil::PUBLISHED
    }
}

#[derive(Clone, Copy, Debug, PartialEq, Serialize, Deserialize)]
pub struct RollingConfig {
    pub window_days: u32,
    pub stencil: Stencil,
    /// Divide by the weights actually used, so constant fields are preserved.
    pub renormalize: bool,
}

impl Default for RollingConfig {
    fn default() -> Self {
        Self {
            window_days: 7,
            stencil: Stencil::PUBLISHED,
            renormalize: false,
        }
    }
}

impl RollingConfig {
    /// Window length in samples for a series step.
    pub fn window_len(&self, step_seconds: i64) -> Result<usize> {
        let span = i64::from(self.window_days) * 86_400;
        if self.window_days == 0 || span % step_seconds != 0 {
            return Err(Error::InvalidArgument(format!(
                "a {}-day window is not a whole number of {step_seconds}s steps",
                self.window_days
            )));
        }
        Ok((span / step_seconds) as usize)
    }
}

/// Localized means of one variable, `T x H x W`.
#[derive(Clone, Debug, PartialEq)]
pub struct LocalizedMeans {
    pub variable: String,
    pub times: Vec<i64>,
    pub grid: Grid,
    pub values: Array3<f64>,
}

/// Trailing `window_days` mean (inclusive of `t`) followed by the 3×3
/// spatial blend. Output starts at the first timestamp with a full window.
pub fn localized_rolling_mean(series: &FieldSeries, var: &str, cfg: &RollingConfig) -> Result<LocalizedMeans> {
    let c = series.require_var(var)?;
    let win = cfg.window_len(series.time_step())?;
    let t_len = series.len();
    if t_len < win {
        return Err(Error::InsufficientHistory(format!(
            "{t_len} timestamps cannot fill a {win}-sample window"
        )));
    }
    let (h, w) = series.grid().shape();
    let field = series.channel(c);
    let n_out = t_len - win + 1;
    let mut temporal = Array3::<f64>::zeros((n_out, h, w));
    Zip::indexed(temporal.lanes_mut(Axis(0))).par_for_each(|(i, j), mut lane| {
        let mut acc = 0.0f64;
        for t in 0..t_len {
            acc += f64::from(field[[t, i, j]]);
            if t >= win {
                acc -= f64::from(field[[t - win, i, j]]);
            }
            if t + 1 >= win {
                lane[t + 1 - win] = acc / win as f64;
            }
        }
    });
    let mut values = Array3::<f64>::zeros((n_out, h, w));
    Zip::from(values.outer_iter_mut())
        .and(temporal.outer_iter())
        .par_for_each(|mut out, src| blend(src, &mut out, series.grid(), cfg));
    Ok(LocalizedMeans {
        variable: var.to_string(),
        times: (win - 1..t_len).map(|t| series.time_at(t)).collect(),
        grid: series.grid().clone(),
        values,
    })
}

fn blend(src: ArrayView2<'_, f64>, out: &mut ndarray::ArrayViewMut2<'_, f64>, grid: &Grid, cfg: &RollingConfig) {
    let (h, w) = src.dim();
    for i in 0..h {
        for j in 0..w {
            let mut acc = 0.0;
            let mut used = 0.0;
            for di in -1isize..=1 {
                let ii = i as isize + di;
                if ii < 0 || ii >= h as isize {
                    continue;
                }
                for dj in -1isize..=1 {
                    let Some(jj) = grid.wrap_col(j, dj) else {
                        continue;
                    };
                    let wgt = cfg.stencil.weight(di, dj);
                    acc += wgt * src[[ii as usize, jj]];
                    used += wgt;
                }
            }
            out[[i, j]] = if cfg.renormalize { acc / used } else { acc };
        }
    }
}

/// Percentile `p` in `[0, 100]` of `values` with linear interpolation
/// between the closest order statistics. Reorders `values`.
pub fn percentile_linear(values: &mut [f64], p: f64) -> f64 {
    let n = values.len();
    let pos = p / 100.0 * (n - 1) as f64;
    let lo = pos.floor() as usize;
    let frac = pos - lo as f64;
    let (_, &mut a, upper) = values.select_nth_unstable_by(lo, f64::total_cmp);
    if frac == 0.0 || upper.is_empty() {
        return a;
    }
    let b = upper.iter().copied().fold(f64::INFINITY, f64::min);
    a + frac * (b - a)
}

/// Per-pixel lower and upper thresholds.
#[derive(Clone, Debug, PartialEq)]
pub struct ThresholdField {
    pub variable: String,
    pub grid: Grid,
    pub p_lo: f64,
    pub p_hi: f64,
    pub lo: Array2<f64>,
    pub hi: Array2<f64>,
}

impl ThresholdField {
    /// Stores `lo` and `hi` as a two-channel, one-timestamp container.
    pub fn write(&self, path: impl AsRef<Path>) -> Result<()> {
        let (h, w) = self.grid.shape();
        let mut data = Array4::<f32>::zeros((1, 2, h, w));
        data.slice_mut(s![0, 0, .., ..]).assign(&self.lo.mapv(|v| v as f32));
        data.slice_mut(s![0, 1, .., ..]).assign(&self.hi.mapv(|v| v as f32));
        let vars = vec![
            Variable::dynamic("lo", "", Level::surface()),
            Variable::dynamic("hi", "", Level::surface()),
        ];
        let series = FieldSeries::new(self.grid.clone(), vars, 0, 1, data)?;
        let mut extra = BTreeMap::new();
        extra.insert("kind".into(), Value::from("thresholds"));
        extra.insert("variable".into(), Value::from(self.variable.clone()));
        extra.insert("p_lo".into(), Value::from(self.p_lo));
        extra.insert("p_hi".into(), Value::from(self.p_hi));
        write_container_with_extra(&series, &extra, path)
    }

    pub fn read(path: impl AsRef<Path>) -> Result<Self> {
        let (series, extra) = read_container_with_extra(path)?;
        expect_kind(&extra, "thresholds")?;
        let lo = series.data().slice(s![0, series.require_var("lo")?, .., ..]).mapv(f64::from);
        let hi = series.data().slice(s![0, series.require_var("hi")?, .., ..]).mapv(f64::from);
        Ok(Self {
            variable: extra_str(&extra, "variable")?,
            grid: series.grid().clone(),
            p_lo: extra.get("p_lo").and_then(Value::as_f64).unwrap_or(5.0),
            p_hi: extra.get("p_hi").and_then(Value::as_f64).unwrap_or(95.0),
            lo,
            hi,
        })
    }
}

fn expect_kind(extra: &BTreeMap<String, Value>, kind: &str) -> Result<()> {
    match extra.get("kind").and_then(Value::as_str) {
        Some(k) if k == kind => Ok(()),
        other => Err(Error::HeaderParse(format!("expected a {kind} container, found kind {other:?}"))),
    }
}

fn extra_str(extra: &BTreeMap<String, Value>, key: &str) -> Result<String> {
    extra
        .get(key)
        .and_then(Value::as_str)
        .map(str::to_string)
        .ok_or_else(|| Error::HeaderParse(format!("missing header key {key:?}")))
}

/// Per-pixel `p_lo` and `p_hi` percentiles of the localized means.
pub fn compute_thresholds(means: &LocalizedMeans, p_lo: f64, p_hi: f64) -> Result<ThresholdField> {
    if !(0.0..=100.0).contains(&p_lo) || !(0.0..=100.0).contains(&p_hi) || p_lo > p_hi {
        return Err(Error::InvalidArgument(format!("percentiles {p_lo}, {p_hi} out of order or range")));
    }
    let n = means.values.dim().0;
    if n < MIN_THRESHOLD_SAMPLES {
        return Err(Error::InsufficientHistory(format!(
            "{n} localized-mean samples per pixel, at least {MIN_THRESHOLD_SAMPLES} required"
        )));
    }
    let (h, w) = means.grid.shape();
    let mut lo = Array2::<f64>::zeros((h, w));
    let mut hi = Array2::<f64>::zeros((h, w));
    Zip::from(&mut lo)
        .and(&mut hi)
        .and(means.values.lanes(Axis(0)))
        .par_for_each(|lo, hi, lane| {
            let mut buf = lane.to_vec();
            *lo = percentile_linear(&mut buf, p_lo);
            *hi = percentile_linear(&mut buf, p_hi);
        });
    Ok(ThresholdField {
        variable: means.variable.clone(),
        grid: means.grid.clone(),
        p_lo,
        p_hi,
        lo,
        hi,
    })
}

/// How values equal to a threshold are classified.
#[derive(Clone, Copy, Debug, Default, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "lowercase")]
pub enum Bound {
    /// Extreme only when strictly beyond a threshold.
    #[default]
    Strict,
    /// Threshold-equal values are extreme too.
    Inclusive,
}

/// Boolean `T x H x W` masks, `true` where a pixel is extreme.
#[derive(Clone, Debug, PartialEq)]
pub struct ExtremeMaskSeries {
    pub variable: String,
    pub times: Vec<i64>,
    pub grid: Grid,
    pub masks: Array3<bool>,
}

impl ExtremeMaskSeries {
    pub fn fraction(&self) -> f64 {
        let n = self.masks.len();
        self.masks.iter().filter(|&&m| m).count() as f64 / n as f64
    }

    /// Masks for `times`, in that order.
    pub fn aligned(&self, times: &[i64]) -> Result<Array3<bool>> {
        let (_, h, w) = self.masks.dim();
        let mut out = Array3::from_elem((times.len(), h, w), false);
        for (k, t) in times.iter().enumerate() {
            let idx = self
                .times
                .binary_search(t)
                .map_err(|_| Error::Misaligned(format!("no extreme mask at time {t}")))?;
            out.index_axis_mut(Axis(0), k).assign(&self.masks.index_axis(Axis(0), idx));
        }
        Ok(out)
    }

    /// Stores masks as 0/1 `f32` in a one-channel container.
    pub fn write(&self, path: impl AsRef<Path>) -> Result<()> {
        let step = match self.times.as_slice() {
            [a, b, ..] => b - a,
            _ => 1,
        };
        if self.times.windows(2).any(|p| p[1] - p[0] != step) {
            return Err(Error::InvalidSeries("mask timestamps are not evenly spaced".into()));
        }
        let (t, h, w) = self.masks.dim();
        let data = self.masks.mapv(|m| if m { 1.0f32 } else { 0.0 }).into_shape_with_order((t, 1, h, w))
            .map_err(|e| Error::ShapeMismatch(e.to_string()))?;
        let vars = vec![Variable::dynamic(self.variable.clone(), "1", Level::surface())];
        let series = FieldSeries::new(self.grid.clone(), vars, self.times[0], step, data)?;
        let mut extra = BTreeMap::new();
        extra.insert("kind".into(), Value::from("extreme_masks"));
        extra.insert("variable".into(), Value::from(self.variable.clone()));
        write_container_with_extra(&series, &extra, path)
    }

    pub fn read(path: impl AsRef<Path>) -> Result<Self> {
        let (series, extra) = read_container_with_extra(path)?;
        expect_kind(&extra, "extreme_masks")?;
        Ok(Self {
            variable: extra_str(&extra, "variable")?,
            times: series.times(),
            grid: series.grid().clone(),
            masks: series.channel(0).mapv(|v| v != 0.0),
        })
    }
}

/// Marks pixels whose localized mean lies outside `[lo, hi]`.
pub fn build_masks(means: &LocalizedMeans, thr: &ThresholdField, bound: Bound) -> Result<ExtremeMaskSeries> {
    if means.grid != thr.grid {
        return Err(Error::ShapeMismatch("thresholds and series are on different grids".into()));
    }
    let mut masks = Array3::from_elem(means.values.dim(), false);
    Zip::from(masks.outer_iter_mut())
        .and(means.values.outer_iter())
        .par_for_each(|mut m, v| {
            Zip::from(&mut m).and(&v).and(&thr.lo).and(&thr.hi).for_each(|m, &x, &lo, &hi| {
                *m = match bound {
                    Bound::Strict => x < lo || x > hi,
                    Bound::Inclusive => x <= lo || x >= hi,
                };
            });
        });
    Ok(ExtremeMaskSeries {
        variable: means.variable.clone(),
        times: means.times.clone(),
        grid: means.grid.clone(),
        masks,
    })
}

/// Masks over every timestamp of `test`. Trailing context is taken from the
/// end of `preceding` when it directly precedes `test`; without it the first
/// timestamps lacking a full window are skipped.
pub fn extreme_masks(
    preceding: Option<&FieldSeries>,
    test: &FieldSeries,
    thr: &ThresholdField,
    cfg: &RollingConfig,
    bound: Bound,
) -> Result<ExtremeMaskSeries> {
    let var = thr.variable.as_str();
    let win = cfg.window_len(test.time_step())?;
    let joined;
    let source = match preceding {
        Some(prev) if prev.time_end() + prev.time_step() == test.time_start() && win > 1 => {
            let keep = (win - 1).min(prev.len());
            let tail = prev.slice_time(prev.len() - keep..prev.len())?;
            let names: Vec<String> = test.variables().iter().map(|v| v.name.clone()).collect();
            joined = tail.select_vars(&names)?.concat(test)?;
            &joined
        }
        _ => test,
    };
    let means = localized_rolling_mean(source, var, cfg)?;
    let mut masks = build_masks(&means, thr, bound)?;
    let first = masks.times.partition_point(|&t| t < test.time_start());
    masks.times.drain(..first);
    masks.masks = masks.masks.slice(s![first.., .., ..]).to_owned();
    Ok(masks)
}

/// A deterministic metric restricted to the extreme pixels of each timestep.
pub fn masked_metric(
    metric: DeterministicMetric,
    pred: ArrayView3<'_, f64>,
    truth: ArrayView3<'_, f64>,
    times: &[i64],
    masks: &ExtremeMaskSeries,
    weights: &LatWeights,
    clim: Option<ArrayView2<'_, f64>>,
) -> Result<Score> {
    if times.len() != pred.dim().0 {
        return Err(Error::Misaligned(format!(
            "{} timestamps for {} prediction steps",
            times.len(),
            pred.dim().0
        )));
    }
    let aligned = masks.aligned(times)?;
    if !aligned.iter().any(|&m| m) {
        return Err(Error::EmptyMask("no extreme pixel over the evaluation period".into()));
    }
    metric.evaluate(pred, truth, weights, clim, Some(&Mask::PerStep(aligned.view())))
}
